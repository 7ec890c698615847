// Spins up the two-surface SQG model on a coarse grid and prints how the
// temperature variance and the kinetic energy spectrum settle.

use ensf_da::diagnostics::ke_spectrum;
use ensf_da::sqg::{theta_square_sum, SqgModel, SqgParams};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn run_example() -> ensf_da::Result<()> {
    let model = SqgModel::new(SqgParams::for_grid(32))?;
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut state = model.initial_state(&mut rng, 1.0)?;
    let per_day = model.steps_for(86_400.0);

    for day in (0..=20).step_by(5) {
        let grid = model.grid(&state)?;
        let rms = (theta_square_sum(&grid) / grid.len() as f64).sqrt();
        println!("day {day:3}: theta rms {rms:6.2} K");
        model.advance_in_place(&mut state, 5 * per_day)?;
    }

    let spectrum = ke_spectrum(&model.grid(&state)?, &model)?;
    println!("kinetic energy by total wavenumber:");
    for (k, e) in spectrum.wavenumbers.iter().zip(&spectrum.values) {
        println!("  k = {k:2}: {e:.3e} m^2/s^2");
    }
    Ok(())
}

#[allow(dead_code)]
fn main() {
    run_example().expect("nature run example failed");
}
