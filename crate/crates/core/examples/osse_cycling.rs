// A short twin experiment on a coarse grid: free run, EnSF and LETKF cycle
// against the same nature run and observations.

use ensf_da::config::{preset_on_grid, FilterKind, Preset};
use ensf_da::ensf::BatchPairing;
use ensf_da::osse::{mean_analysis_rmse, run_experiment, CycleRecord};

pub fn run_example() -> ensf_da::Result<()> {
    let cycles = 12;
    for filter in [FilterKind::None, FilterKind::Ensf, FilterKind::Letkf] {
        let mut config = preset_on_grid(Preset::ExpL1, 32);
        config.filter = filter;
        config.seed = 4;
        config.cycles = cycles;
        config.members = if filter == FilterKind::None { 1 } else { 10 };
        config.init.spinup_days = 10.0;
        config.diffusion.steps = 5;
        config.ensf.batch_size = Some(1);
        config.ensf.pairing = BatchPairing::Anchored;

        let mut records: Vec<CycleRecord> = Vec::new();
        run_experiment(&config, &mut records)?;
        let last = records.last().expect("at least one cycle");
        println!(
            "{:>5}: final analysis RMSE {:.3}, spread {:.3}, mean over cycles 5-{cycles} {:.3}",
            filter.name(),
            last.analysis_rmse,
            last.mean_spread,
            mean_analysis_rmse(&records, 5, cycles).unwrap_or(f64::NAN)
        );
    }
    Ok(())
}

#[allow(dead_code)]
fn main() {
    run_example().expect("OSSE example failed");
}
