// LETKF on a small two-surface periodic grid: a smooth truth, a perturbed
// background ensemble and every third grid value observed. Prints the taper profile
// and the error before and after the update for a few cutoff radii.

use ensf_da::diagnostics::rmse;
use ensf_da::ensemble::{decompose, Ensemble};
use ensf_da::letkf::{gaspari_cohn, letkf_analysis, LocalizationConfig, PeriodicDomain};
use ensf_da::obs::{make_network, observe, ObsKind};
use ensf_da::sqg::{SqgModel, SqgParams};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn run_example() -> ensf_da::Result<()> {
    let n = 24;
    let model = SqgModel::new(SqgParams::for_grid(n))?;
    let domain = PeriodicDomain::square(n, 2, model.params().l / 1e3);
    let mut rng = ChaCha8Rng::seed_from_u64(5);

    let truth = model.band_limited_noise(&mut rng, 4, 5.0)?;
    // the background misses the truth by a draw from the ensemble's own
    // error distribution
    let miss = model.band_limited_noise(&mut rng, 4, 2.0)?;
    let members = (0..20)
        .map(|_| {
            let kick = model.band_limited_noise(&mut rng, 4, 2.0)?;
            Ok(truth.iter().zip(&miss).zip(&kick).map(|((t, b), k)| t + b + k).collect())
        })
        .collect::<ensf_da::Result<Vec<Vec<f64>>>>()?;
    let forecast = Ensemble::from_members(members)?;

    let mut net = make_network(ObsKind::Linear, 1.0, domain.state_dim(), None, &mut rng)?;
    net.indices.retain(|i| i % 3 == 0);
    net.error_var.truncate(net.indices.len());
    let obs = observe(&truth, &net, &mut rng)?;

    println!("taper for a 2000 km cutoff:");
    for d in [0.0, 500.0, 1000.0, 1500.0, 2000.0] {
        println!("  {d:6} km -> {:.3}", gaspari_cohn(d, 1000.0));
    }

    println!("prior error {:.3}", rmse(&forecast.mean(), &truth)?);
    for loc_km in [1000.0, 2000.0, 4000.0] {
        let loc = LocalizationConfig::new(loc_km, None)?;
        let analysis = letkf_analysis(&forecast, &obs, &loc, &domain, 0.5)?;
        let spread = decompose(&analysis)?.mean_spread();
        println!(
            "cutoff {loc_km:6} km: analysis error {:.3}, spread {spread:.3}",
            rmse(&analysis.mean(), &truth)?
        );
    }
    Ok(())
}

#[allow(dead_code)]
fn main() {
    run_example().expect("LETKF example failed");
}
