// Drives the command-line entry point in-process: a small run, a two-cell
// sweep and the diagnostics pass over the resulting run directories.

use ensf_da::cli::main_with_args;

pub fn run_example() -> ensf_da::Result<()> {
    let dir = tempfile::tempdir()?;
    let config = dir.path().join("small.toml");
    std::fs::write(
        &config,
        "cycles = 4\nmembers = 6\n[init]\nspinup_days = 2.0\n[output]\ndump_every = 2\ndump_from = 2\ndump_members = true\n",
    )?;
    let cfg = config.to_str().expect("utf-8 temp path");
    let out = dir.path().join("runs");
    let out = out.to_str().expect("utf-8 temp path");

    let invocations: Vec<Vec<&str>> = vec![
        vec!["run", "--preset", "EXP_L1", "--filter", "ensf", "--config", cfg, "--grid", "32", "--seed", "3", "--out", out],
        vec!["run", "--preset", "EXP_L1", "--filter", "letkf", "--loc-km", "2000", "--rtps", "0.3", "--config", cfg, "--grid", "32", "--seed", "3", "--out", out],
        vec!["sweep", "--preset", "EXP_L1", "--filter", "letkf", "--loc-km", "1000:2000:1000", "--rtps", "0.5", "--config", cfg, "--grid", "32", "--seed", "3", "--out", out],
        vec!["run", "--preset", "EXP_L1", "--loc-km", "2000", "--out", out],
    ];
    for args in invocations {
        let code = main_with_args(std::iter::once("ensf-da").chain(args.iter().copied()));
        println!("ensf-da {} -> exit {code}", args[..4].join(" "));
    }

    let diag = dir.path().join("diag");
    let letkf = format!("{out}/EXP_L1_letkf_3");
    let ensf = format!("{out}/EXP_L1_ensf_3");
    let code = main_with_args(["ensf-da", "diag", letkf.as_str(), ensf.as_str(), "--from", "2", "--out", diag.to_str().unwrap()]);
    println!("ensf-da diag -> exit {code}");
    let mut files = std::fs::read_dir(&diag)?.map(|e| e.map(|e| e.file_name())).collect::<Result<Vec<_>, _>>()?;
    files.sort();
    for f in files {
        println!("  {}", f.to_string_lossy());
    }
    println!("{}", std::fs::read_to_string(format!("{out}/sweep_summary.csv"))?);
    Ok(())
}

#[allow(dead_code)]
fn main() {
    run_example().expect("command-line example failed");
}
