//! Side-by-side runs of several lag policies on one trajectory.

use std::path::Path;

use cgnsda_core::io::{fmt_f64, write_row};
use cgnsda_core::LagPolicy;
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{Da, ExperimentConfig};
use crate::error::{CliError, CliResult};
use crate::pipeline::{assimilate, mean_gain, mean_nrmse, prepare, Artifacts, AssimilationOptions};

/// Parses `fixed:L`, `adaptive:b:delta[:w[:lsdf|entropy]]` or `full`
/// (a fixed lag covering the whole run).
pub fn parse_policy(text: &str, n_steps: usize) -> CliResult<LagPolicy> {
    let policy = match text.trim() {
        "full" | "fixed:max" => LagPolicy::Fixed { lag: n_steps },
        other => other.parse::<LagPolicy>().map_err(|e| CliError::Config(format!("policy {other:?}: {e}")))?,
    };
    policy.validate()?;
    Ok(policy)
}

#[derive(Debug, Clone, Serialize)]
pub struct PolicyRow {
    pub policy: String,
    pub wall_time_s: f64,
    pub peak_entries: usize,
    pub peak_bytes: usize,
    pub nrmse: f64,
    pub gain_total: f64,
    pub gain_signal: f64,
    pub gain_dispersion: f64,
}

/// Thread count from `CGNSDA_THREADS`; unset or 0 means one per core.
pub fn thread_count() -> CliResult<usize> {
    match std::env::var("CGNSDA_THREADS") {
        Err(_) => Ok(0),
        Ok(v) => v.trim().parse::<usize>().map_err(|_| CliError::Config(format!("CGNSDA_THREADS must be a count, got {v:?}"))),
    }
}

pub fn compare(cfg: &ExperimentConfig, policies: &[String], out_dir: &Path) -> CliResult<Vec<PolicyRow>> {
    if policies.len() < 2 {
        return Err(CliError::Config("compare needs at least two policies".into()));
    }
    let n = cfg.n_steps();
    let parsed = policies.iter().map(|p| parse_policy(p, n)).collect::<CliResult<Vec<_>>>()?;
    let prepared = prepare(cfg, cfg.seed)?;
    let truth = prepared.truth();
    let targets = prepared.model.target_indices();

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(thread_count()?)
        .build()
        .map_err(|e| CliError::Config(format!("thread pool: {e}")))?;
    let rows: Vec<CliResult<PolicyRow>> = pool.install(|| {
        parsed
            .par_iter()
            .map(|&policy| {
                let da = Da::Online { policy };
                let a = assimilate(prepared.spec(), &prepared.traj, &prepared.prior, &da, AssimilationOptions::default())?;
                let storage = a.online.as_ref().expect("online run").storage;
                let gain = mean_gain(&a.posterior, &a.filter)?;
                Ok(PolicyRow {
                    policy: policy.to_string(),
                    wall_time_s: a.wall_time_s,
                    peak_entries: storage.peak_entries,
                    peak_bytes: storage.peak_bytes,
                    nrmse: mean_nrmse(&a.posterior, truth, &targets)?,
                    gain_total: gain.total,
                    gain_signal: gain.signal,
                    gain_dispersion: gain.dispersion,
                })
            })
            .collect()
    });
    let rows = rows.into_iter().collect::<CliResult<Vec<_>>>()?;

    let mut art = Artifacts::default();
    art.csv("compare.csv", |w| {
        let header = ["policy", "wall_time_s", "peak_entries", "peak_bytes", "nrmse", "gain_total", "gain_signal", "gain_dispersion"];
        write_row(w, &header.map(String::from))?;
        for r in &rows {
            write_row(
                w,
                &[
                    r.policy.clone(),
                    fmt_f64(r.wall_time_s),
                    r.peak_entries.to_string(),
                    r.peak_bytes.to_string(),
                    fmt_f64(r.nrmse),
                    fmt_f64(r.gain_total),
                    fmt_f64(r.gain_signal),
                    fmt_f64(r.gain_dispersion),
                ],
            )?;
        }
        Ok(())
    })?;
    let json = serde_json::json!({
        "experiment": cfg.experiment.name(),
        "seed": cfg.seed,
        "n_steps": n,
        "policies": rows,
    });
    art.text("compare.json", serde_json::to_string_pretty(&json).expect("serializable") + "\n");
    art.write_all(out_dir)?;
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn policy_strings() {
        assert_eq!(parse_policy("full", 50).unwrap(), LagPolicy::Fixed { lag: 50 });
        assert_eq!(parse_policy("fixed:7", 50).unwrap(), LagPolicy::Fixed { lag: 7 });
        assert!(matches!(parse_policy("adaptive:100:0.05", 50).unwrap(), LagPolicy::Adaptive { b: 100, .. }));
        assert_eq!(parse_policy("sideways", 50).unwrap_err().exit_code(), 2);
    }
}
