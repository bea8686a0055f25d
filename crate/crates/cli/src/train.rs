use std::path::{Path, PathBuf};

use air_core::nn::checkpoint::write_atomic;
use air_core::trainer::{self, TrainConfig};
use serde_json::json;

use crate::config;
use crate::exit::{CliError, CliResult};

pub const RUN_DIR_VAR: &str = "AIR_RUN_DIR";

/// `$AIR_RUN_DIR/<timestamp>` or `./runs/<timestamp>`, suffixed if taken.
pub fn fresh_run_dir() -> CliResult<PathBuf> {
    let root = std::env::var_os(RUN_DIR_VAR).map_or_else(|| PathBuf::from("runs"), PathBuf::from);
    std::fs::create_dir_all(&root)?;
    let stamp = chrono::Local::now().format("%Y%m%d-%H%M%S").to_string();
    let mut dir = root.join(&stamp);
    let mut i = 1;
    while dir.exists() {
        dir = root.join(format!("{stamp}-{i}"));
        i += 1;
    }
    Ok(dir)
}

fn now() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true)
}

fn write_manifest(dir: &Path, manifest: &serde_json::Value) -> CliResult<()> {
    let text = serde_json::to_string_pretty(manifest).map_err(|e| CliError::runtime(e.to_string()))?;
    write_atomic(&dir.join("manifest.json"), text.as_bytes())?;
    Ok(())
}

pub fn version_string() -> String {
    format!("air {}", env!("CARGO_PKG_VERSION"))
}

/// Validates, writes `config.toml` and `manifest.json`, then trains.
pub fn cmd_train(config: TrainConfig, out: Option<PathBuf>, quiet: bool) -> CliResult<PathBuf> {
    for w in config.validate()? {
        eprintln!("warning: {w}");
    }
    config.env.build()?;
    let dir = match out {
        Some(d) => d,
        None => fresh_run_dir()?,
    };
    std::fs::create_dir_all(&dir)?;
    let toml_text = config::to_toml(&config)?;
    write_atomic(&dir.join("config.toml"), toml_text.as_bytes())?;
    let mut manifest = json!({
        "version": version_string(),
        "seed": config.seed,
        "config": serde_json::to_value(&config).map_err(|e| CliError::runtime(e.to_string()))?,
        "started_at": now(),
        "finished_at": null,
        "status": "running",
        "outputs": {
            "config": "config.toml",
            "metrics": "metrics.csv",
            "checkpoints": "checkpoints",
            "final_checkpoint": "checkpoints/final.ckpt",
        },
    });
    write_manifest(&dir, &manifest)?;
    eprintln!("run directory: {}", dir.display());

    let result = trainer::run(config, &dir, |row| {
        if !quiet && row.iter % 100 == 0 {
            eprintln!(
                "iter {:>7} steps {:>8} return {:>9.3} alpha {:+.3e} eps {:.3}",
                row.iter, row.env_steps, row.ret_mean, row.alpha, row.epsilon
            );
        }
    });
    manifest["finished_at"] = json!(now());
    match result {
        Ok(out) => {
            manifest["status"] = json!("completed");
            manifest["iterations"] = json!(out.iterations);
            manifest["env_steps"] = json!(out.env_steps);
            write_manifest(&dir, &manifest)?;
            println!("{}", dir.display());
            Ok(dir)
        }
        Err(e) => {
            manifest["status"] = json!("failed");
            manifest["error"] = json!(e.to_string());
            write_manifest(&dir, &manifest)?;
            Err(CliError::runtime(e.to_string()))
        }
    }
}
