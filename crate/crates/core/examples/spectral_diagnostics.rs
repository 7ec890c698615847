// Runs EnSF and LETKF on the partially observed arctan setup with field
// dumps, then compares their error and spread spectra from the run
// directories.

use ensf_da::cli::run_spectra;
use ensf_da::config::{preset_on_grid, FilterKind, Preset};
use ensf_da::diagnostics::{consistency_ratio, percent_improvement};
use ensf_da::osse::{run_experiment, RunDirectory};

pub fn run_example() -> ensf_da::Result<()> {
    let out = tempfile::tempdir()?;
    let mut dirs = Vec::new();
    for filter in [FilterKind::Letkf, FilterKind::Ensf] {
        let mut config = preset_on_grid(Preset::ExpNl2, 32);
        config.filter = filter;
        config.seed = 9;
        config.cycles = 8;
        config.members = 10;
        config.init.spinup_days = 10.0;
        config.diffusion.steps = 10;
        config.output.dump_every = 2;
        config.output.dump_from = 2;
        config.output.dump_members = true;
        let mut sink = RunDirectory::new(out.path(), &config);
        run_experiment(&config, &mut sink)?;
        dirs.push(out.path().join(config.run_name()));
    }

    let letkf = run_spectra(&dirs[0], 2, None)?;
    let ensf = run_spectra(&dirs[1], 2, None)?;
    let gain = percent_improvement(&letkf.error, &ensf.error)?;
    let letkf_ratio = consistency_ratio(letkf.spread.as_ref().expect("members dumped"), &letkf.error)?;
    let ensf_ratio = consistency_ratio(ensf.spread.as_ref().expect("members dumped"), &ensf.error)?;
    println!("averaged over cycles {:?}", ensf.cycles);
    println!("   k   EnSF error  LETKF error  gain %  EnSF ratio  LETKF ratio");
    for (i, k) in ensf.error.wavenumbers.iter().enumerate() {
        let show = |v: Option<f64>| v.map_or("   -".to_string(), |v| format!("{v:7.2}"));
        println!(
            "{k:4} {:12.3e} {:12.3e} {} {} {}",
            ensf.error.values[i],
            letkf.error.values[i],
            show(gain[i]),
            show(ensf_ratio[i]),
            show(letkf_ratio[i])
        );
    }
    Ok(())
}

#[allow(dead_code)]
fn main() {
    run_example().expect("diagnostics example failed");
}
