use std::path::{Path, PathBuf};

use air_core::nn::checkpoint::write_atomic;
use air_core::trainer::{evaluate_greedy, load_greedy_policy, EvalReport};

use crate::config::env_table;
use crate::exit::{CliError, CliResult};

pub fn report_text(checkpoint: &Path, env: &str, seed: u64, r: &EvalReport) -> String {
    let mut s = format!(
        "checkpoint = {}\nenv = {env}\nseed = {seed}\nepisodes = {}\nmean_return = {}\n",
        checkpoint.display(),
        r.episodes,
        r.mean_return
    );
    if let Some(rate) = r.solve_rate {
        s.push_str(&format!("solve_rate = {rate}\n"));
    }
    s
}

/// Greedy, unshaped evaluation of a checkpoint. Writes `<checkpoint>.eval.txt`
/// unless `out` is given.
pub fn cmd_eval(checkpoint: &Path, env: &str, episodes: usize, seed: u64, out: Option<PathBuf>) -> CliResult<EvalReport> {
    if episodes == 0 {
        return Err(CliError::validation("episodes: must be positive"));
    }
    let env_config: air_core::env::EnvConfig = toml::Value::Table(env_table(env)?)
        .try_into()
        .map_err(|e: toml::de::Error| CliError::validation(e.to_string()))?;
    let env_box = env_config.build()?;
    let bytes = std::fs::read(checkpoint)
        .map_err(|e| CliError::validation(format!("checkpoint {}: {e}", checkpoint.display())))?;
    let (nets, theta) = load_greedy_policy(&bytes, env_box.as_ref())?;
    let report = evaluate_greedy(env_box.as_ref(), &nets, &theta, episodes, seed)?;
    let text = report_text(checkpoint, env, seed, &report);
    print!("{text}");
    let path = out.unwrap_or_else(|| {
        let mut p = checkpoint.as_os_str().to_owned();
        p.push(".eval.txt");
        PathBuf::from(p)
    });
    write_atomic(&path, text.as_bytes())?;
    Ok(report)
}
