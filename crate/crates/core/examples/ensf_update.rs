// One EnSF analysis on a correlated two-variable Gaussian prior where only
// the first variable is observed, next to the Kalman answer. The second
// variable moves only through the prior correlation the kernel score picks
// up from the forecast members.

use ensf_da::ensemble::Ensemble;
use ensf_da::ensf::{ensf_analysis, EnsfConfig, LikelihoodModel};
use ensf_da::obs::{ObsKind, ObservationBatch};
use ensf_da::rng::standard_normal_vec;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn run_example() -> ensf_da::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (m, rho) = (2000, 0.8);
    let members = (0..m)
        .map(|_| {
            let e = standard_normal_vec(&mut rng, 2);
            vec![1.0 + e[0], -1.0 + rho * e[0] + (1.0 - rho * rho).sqrt() * e[1]]
        })
        .collect();
    let forecast = Ensemble::from_members(members)?;

    let (y, r) = (2.5, 0.5);
    let obs = ObservationBatch {
        values: vec![y],
        indices: vec![0],
        kind: ObsKind::Linear,
        error_var: vec![r],
        state_dim: 2,
    };
    let config = EnsfConfig {
        rtps: 0.0,
        ..EnsfConfig::default()
    };
    let analysis = ensf_analysis(&forecast, &LikelihoodModel::new(obs)?, &config, &mut rng)?;

    let gain = 1.0 / (1.0 + r);
    let kalman_mean = [1.0 + gain * (y - 1.0), -1.0 + rho * gain * (y - 1.0)];
    let kalman_var = [1.0 - gain, 1.0 - rho * rho * gain];
    let mean = analysis.mean();
    for i in 0..2 {
        let var = analysis.members().map(|x| (x[i] - mean[i]).powi(2)).sum::<f64>() / (m - 1) as f64;
        println!(
            "x{i}: EnSF mean {:+.3} var {var:.3} | Kalman mean {:+.3} var {:.3}",
            mean[i], kalman_mean[i], kalman_var[i]
        );
    }
    Ok(())
}

#[allow(dead_code)]
fn main() {
    run_example().expect("EnSF example failed");
}
