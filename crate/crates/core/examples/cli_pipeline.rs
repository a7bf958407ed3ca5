// The command pipeline on a small config: train, verify, falsify, simulate
// and export plot manifests into a scratch directory.

use std::io;

use contraction_cert::cli::{self, SimulateArgs};

type Res = Result<(), Box<dyn std::error::Error>>;

const CONFIG: &str = r#"
system = "planar_nonlinear"
seed = 1

[region]
partitions = [4, 4]

[hyper]
a = 0.01
b = 100.0
c = 0.05

[network]
policy_hidden = [16]
metric_hidden = [16]

[curriculum]
increment = 5
"#;

pub fn run_example() -> Res {
    let dir = tempfile::tempdir()?;
    let config = dir.path().join("planar.toml");
    std::fs::write(&config, CONFIG)?;
    let run = dir.path().join("run");
    let mut out = io::stdout();

    cli::cmd_train(&config, &run, None, &mut out)?;
    let ckpt = run.join(cli::CHECKPOINT_FILE);
    cli::cmd_verify(&ckpt, &config, None, &mut out)?;
    cli::cmd_falsify(&ckpt, 2000, None, &mut out)?;
    let sim = SimulateArgs {
        shape: "hover".into(),
        params: vec![],
        duration: 20.0,
        dt: 0.01,
        starts: 4,
        out: None,
    };
    cli::cmd_simulate(&ckpt, &sim, &mut out)?;
    let plots = cli::cmd_export_plots(&run, &mut out)?;
    for entry in std::fs::read_dir(&run)? {
        println!("  {}", entry?.file_name().to_string_lossy());
    }
    println!("plot manifest: {}", plots.join("manifest.json").display());
    Ok(())
}

#[allow(dead_code)]
fn main() -> Res {
    run_example()
}
