// Builds observation networks for the linear and arctan operators, draws
// noisy observations of a synthetic truth, and applies random shocks.

use ensf_da::obs::{apply_shocks, make_network, observe, predicted_obs, ObsKind, ShockProcess};
use ensf_da::rng::standard_normal_vec;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn run_example() -> ensf_da::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let truth = standard_normal_vec(&mut rng, 1000).iter().map(|v| 8.0 * v).collect::<Vec<_>>();

    for (kind, coverage) in [(ObsKind::Linear, 1.0), (ObsKind::Arctan, 1.0), (ObsKind::Arctan, 0.5)] {
        let net = make_network(kind, coverage, truth.len(), None, &mut rng)?;
        let obs = observe(&truth, &net, &mut rng)?;
        let clean = predicted_obs(&truth, &net)?;
        let noise = obs.values.iter().zip(&clean).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / obs.len() as f64;
        println!(
            "{:>14}: {:4} obs, error variance {:.3}, sample noise variance {noise:.3}",
            obs.label(),
            obs.len(),
            obs.error_var[0]
        );
    }

    // arctan flattens large values: a 10 K difference moves the observation
    // far less than a 1 K difference near zero
    let f = ObsKind::Arctan;
    println!("arctan(1) - arctan(0) = {:.3}, arctan(20) - arctan(10) = {:.3}", f.apply(1.0) - f.apply(0.0), f.apply(20.0) - f.apply(10.0));

    let shocks = ShockProcess::new(vec![(0.2, 0.2), (0.1, 0.4)])?;
    let mut total = 0;
    for _ in 0..50 {
        let (_, fired) = apply_shocks(&truth, &shocks, &mut rng);
        total += fired;
    }
    println!("shocks fired over 50 cycles: {total} (expected about 15)");
    Ok(())
}

#[allow(dead_code)]
fn main() {
    run_example().expect("observation example failed");
}
