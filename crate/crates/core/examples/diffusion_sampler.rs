// Draws samples from a Gaussian target by integrating the reverse SDE with
// the exact score of the noised marginals.

use ensf_da::diffusion::{linear_coefficients, sample_reverse_sde_batched, DiffusionSchedule};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn run_example() -> ensf_da::Result<()> {
    let (target_mean, target_var) = (2.0, 0.25);
    let mut rng = ChaCha8Rng::seed_from_u64(7);

    for steps in [10, 25, 100] {
        let schedule = DiffusionSchedule::new(steps, 1e-3)?;
        let z = sample_reverse_sde_batched(&schedule, 4000, 1, &mut rng, |z, t, out| {
            // x_t = alpha x_0 + beta e, so the marginal stays Gaussian
            let c = linear_coefficients(t);
            let var = c.alpha * c.alpha * target_var + c.beta2;
            for (o, x) in out.iter_mut().zip(z) {
                *o = -(x - c.alpha * target_mean) / var;
            }
            Ok(())
        })?;
        let n = z.len() as f64;
        let mean = z.iter().sum::<f64>() / n;
        let var = z.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
        println!("N = {steps:3}: mean {mean:.3} (target {target_mean}), variance {var:.3} (target {target_var})");
    }
    Ok(())
}

#[allow(dead_code)]
fn main() {
    run_example().expect("sampler example failed");
}
