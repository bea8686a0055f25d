use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use air_core::env::TabularDecPomdp;
use air_core::nn::checkpoint::write_atomic;
use air_core::oracle::{self, SuiteReport};

use crate::exit::{CliError, CliResult};

pub const RANDOM_POLICY_SETS: usize = 20;
pub const RANDOM_TABLES: usize = 5;

pub fn render_text(report: &SuiteReport) -> String {
    let mut s = String::new();
    for l in &report.lines {
        let _ = writeln!(
            s,
            "{:<4} {:<28} {:<14} lhs {:>+.15e} rhs {:>+.15e} err {:.3e}",
            if l.check.passed { "ok" } else { "FAIL" },
            l.fixture,
            l.check.name,
            l.check.lhs,
            l.check.rhs,
            l.check.error
        );
    }
    for (fixture, why) in &report.skipped {
        let _ = writeln!(s, "skip {fixture:<28} lemma3         {why}");
    }
    let _ = writeln!(
        s,
        "{} checks, {} failed, {} skipped; max identity error {:.3e}; max exact-law posterior gap {:.3e}",
        report.lines.len(),
        report.lines.iter().filter(|l| !l.check.passed).count(),
        report.skipped.len(),
        report.max_error("lemma"),
        report.max_exact_law_gap
    );
    s
}

/// Flat `key = value` lines, one block per check.
pub fn render_key_values(report: &SuiteReport) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "all_passed = {}", report.all_passed());
    let _ = writeln!(s, "checks = {}", report.lines.len());
    let _ = writeln!(s, "skipped = {}", report.skipped.len());
    let _ = writeln!(s, "max_identity_error = {:e}", report.max_error("lemma"));
    let _ = writeln!(s, "max_exact_law_gap = {:e}", report.max_exact_law_gap);
    let mut counts = std::collections::HashMap::<String, usize>::new();
    for l in &report.lines {
        let base = format!("{}.{}", l.fixture, l.check.name);
        let i = counts.entry(base.clone()).or_default();
        let key = if *i == 0 { base } else { format!("{base}.{i}") };
        *i += 1;
        for (field, v) in [("lhs", l.check.lhs), ("rhs", l.check.rhs), ("error", l.check.error)] {
            let _ = writeln!(s, "{key}.{field} = {v:e}");
        }
        let _ = writeln!(s, "{key}.passed = {}", l.check.passed);
    }
    for (fixture, why) in &report.skipped {
        let _ = writeln!(s, "{fixture}.lemma3.skipped = {why}");
    }
    s
}

pub fn cmd_verify(spec: Option<&Path>, report_path: Option<PathBuf>) -> CliResult<SuiteReport> {
    let report = match spec {
        Some(p) => {
            let spec = TabularDecPomdp::load(p).map_err(|e| CliError::validation(format!("spec {}: {e}", p.display())))?;
            let name = p.file_stem().map_or("spec".into(), |s| s.to_string_lossy().into_owned());
            oracle::run_suite(&[(name, spec)], RANDOM_POLICY_SETS, RANDOM_TABLES)?
        }
        None => oracle::default_suite()?,
    };
    print!("{}", render_text(&report));
    if let Some(path) = report_path {
        write_atomic(&path, render_key_values(&report).as_bytes())?;
    }
    if report.all_passed() {
        Ok(report)
    } else {
        Err(CliError::runtime("oracle checks failed"))
    }
}
