//! CSV and metadata files written by runs and sweeps.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde_json::json;

use super::config::ScenarioConfig;
use super::metrics::Metrics;
use super::run::RunRecord;
use crate::error::Result;

pub const SCHEMA_VERSION: u32 = 1;

/// `git describe` of the working tree, or "unknown" outside a repository.
pub fn git_describe() -> String {
    std::process::Command::new("git")
        .args(["describe", "--always", "--dirty", "--tags"])
        .current_dir(env!("CARGO_MANIFEST_DIR"))
        .output()
        .ok()
        .filter(|o| o.status.success())
        .and_then(|o| String::from_utf8(o.stdout).ok())
        .map(|s| s.trim().to_string())
        .filter(|s| !s.is_empty())
        .unwrap_or_else(|| "unknown".into())
}

/// One row per (run, k): truth, every estimate, trigger flags, masks and
/// squared errors.
pub fn run_csv(records: &[RunRecord]) -> String {
    let mut s = String::new();
    let Some(first) = records.first() else {
        return s;
    };
    let n = first.truth[0].len();
    let links = first.gamma[0].len();
    let mut header = vec!["run".to_string(), "k".to_string()];
    header.extend((1..=n).map(|j| format!("x{j}")));
    for name in &first.names {
        header.extend((1..=n).map(|j| format!("{name}_x{j}")));
    }
    header.extend((1..=links).map(|i| format!("gamma{i}")));
    header.extend((1..=links).map(|i| format!("mask{i}")));
    header.extend(first.names.iter().map(|name| format!("se_{name}")));
    s.push_str(&header.join(","));
    s.push('\n');
    for rec in records {
        for k in 0..rec.truth.len() {
            let mut row = vec![rec.run.to_string(), k.to_string()];
            row.extend(rec.truth[k].iter().map(|v| v.to_string()));
            for est in &rec.estimates {
                row.extend(est[k].iter().map(|v| v.to_string()));
            }
            row.extend(rec.gamma[k].iter().map(|&g| u8::from(g).to_string()));
            row.extend(rec.masks[k].iter().map(|m| m.to_string()));
            row.extend(rec.estimates.iter().map(|est| (&rec.truth[k] - &est[k]).norm_squared().to_string()));
            s.push_str(&row.join(","));
            s.push('\n');
        }
    }
    s
}

/// Per-step RMSE of every estimator.
pub fn summary_csv(metrics: &Metrics) -> String {
    let mut s = String::from("k");
    for name in &metrics.names {
        let _ = write!(s, ",rmse_{name}");
    }
    s.push('\n');
    let steps = metrics.rmse.first().map_or(0, |r| r.len());
    for k in 0..steps {
        let _ = write!(s, "{k}");
        for series in &metrics.rmse {
            let _ = write!(s, ",{}", series[k]);
        }
        s.push('\n');
    }
    s
}

/// Metadata sidecar: schema version, configuration echo, source revision
/// and headline statistics.
pub fn meta_json(config: &ScenarioConfig, metrics: Option<&Metrics>, records: &[RunRecord], extra: serde_json::Value) -> String {
    let mut diag = serde_json::Map::new();
    if !records.is_empty() {
        let sum = |f: &dyn Fn(&RunRecord) -> usize| records.iter().map(f).sum::<usize>();
        diag.insert("designs".into(), json!(sum(&|r| r.diagnostics.designs)));
        diag.insert("design_failures".into(), json!(sum(&|r| r.diagnostics.design_failures)));
        diag.insert("fusion_solves".into(), json!(sum(&|r| r.diagnostics.fusion_solves)));
        diag.insert("fusion_failures".into(), json!(sum(&|r| r.diagnostics.fusion_failures)));
        diag.insert("bound_checks".into(), json!(sum(&|r| r.diagnostics.bound_checks)));
        diag.insert("bound_violations".into(), json!(sum(&|r| r.diagnostics.bound_violations)));
        diag.insert("filter_repairs".into(), json!(sum(&|r| r.diagnostics.filter_repairs)));
    }
    let summary = metrics.map(|m| {
        json!({
            "estimators": m.names,
            "time_avg_rmse": m.time_avg_rmse,
            "trigger_rate": m.trigger_rate,
            "bandwidth": m.bandwidth,
        })
    });
    let doc = json!({
        "schema_version": SCHEMA_VERSION,
        "git_describe": git_describe(),
        "config": serde_json::to_value(config).expect("configuration serializes"),
        "burn_in": config.scenario.burn_in,
        "summary": summary,
        "diagnostics": diag,
        "extra": extra,
    });
    serde_json::to_string_pretty(&doc).expect("metadata serializes") + "\n"
}

/// Refuses to reuse a non-empty directory unless `force` is set.
pub fn prepare_output_dir(dir: &Path, force: bool) -> Result<()> {
    if dir.exists() {
        let occupied = fs::read_dir(dir)?.next().is_some();
        if occupied && !force {
            return Err(crate::Error::Config(format!(
                "output directory {} is not empty (use --force to overwrite)",
                dir.display()
            )));
        }
    } else {
        fs::create_dir_all(dir)?;
    }
    Ok(())
}

pub fn write_run_outputs(dir: &Path, config: &ScenarioConfig, records: &[RunRecord], metrics: &Metrics, extra: serde_json::Value) -> Result<()> {
    fs::write(dir.join("run.csv"), run_csv(records))?;
    fs::write(dir.join("summary.csv"), summary_csv(metrics))?;
    fs::write(dir.join("meta.json"), meta_json(config, Some(metrics), records, extra))?;
    Ok(())
}
