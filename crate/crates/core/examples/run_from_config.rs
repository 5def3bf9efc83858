//! Drives the same command runner as the `flowmap` binary from code: a
//! small Gaussian LMD distillation from the closed-form teacher, followed
//! by evaluation.
//!
//! ```text
//! cargo run --release --example run_from_config [out_dir]
//! ```

use std::path::PathBuf;

use flowmap::cli::commands::{run_command, Command, RunOptions};
use flowmap::cli::config::ExperimentConfig;

const RECIPE: &str = r#"
[task]
kind = "gaussian"

[network]
hidden = [64, 64]

[loss]
kind = "lmd"
teacher = "oracle"

[train]
steps = 1500

[eval]
samples = 20000
map_steps = [1, 2]
"#;

fn main() -> flowmap::Result<()> {
    let out = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "runs/example_gaussian_lmd".into()));
    let cfg = ExperimentConfig::parse(RECIPE)?;
    println!("config hash {}", cfg.hash());
    let mut log = std::io::stdout();
    for (command, dir) in [(Command::Distill, out.clone()), (Command::Evaluate, out.join("eval"))] {
        let mut cfg = cfg.clone();
        cfg.eval.checkpoint = Some(out.join("flowmap.ckpt").display().to_string());
        let opts = RunOptions { out: Some(dir), deterministic: true, ..RunOptions::default() };
        let manifest = run_command(command, cfg, &opts, &mut log)?;
        println!("{} finished: {:?}", command.name(), manifest.metrics);
    }
    Ok(())
}
