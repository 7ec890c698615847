// Resolves experiment configs from presets and TOML overlays, prints the
// result as it would land in a manifest, and shows a rejected overlay.

use ensf_da::config::{parse_overlay, resolve, Preset};

pub fn run_example() -> ensf_da::Result<()> {
    for p in [Preset::ExpL1, Preset::ExpNl2] {
        let c = resolve(Some(p), &[])?;
        println!(
            "{}: {:?} obs, coverage {}, error variance {}, {} shock process(es)",
            p.name(),
            c.obs.kind,
            c.obs.coverage,
            c.obs.error_var,
            c.shocks.pairs.len()
        );
    }

    // later layers win; tables merge key by key
    let file = parse_overlay("filter = \"letkf\"\nseed = 7\n[letkf]\nloc_km = 2500.0\n")?;
    let flags = parse_overlay("grid = 96\n[letkf]\nrtps = 0.6\n")?;
    let config = resolve(Some(Preset::ExpL1), &[file, flags])?;
    println!("\nrun {} with hash {}", config.run_name(), &config.content_hash()?[..12]);
    println!("{}", config.to_toml()?);

    let bad = parse_overlay("[letkf]\nloc_kilometres = 10.0\n")?;
    match resolve(Some(Preset::ExpL1), &[bad]) {
        Ok(_) => println!("unexpectedly accepted"),
        Err(e) => println!("rejected: {e}"),
    }
    Ok(())
}

#[allow(dead_code)]
fn main() {
    run_example().expect("config example failed");
}
