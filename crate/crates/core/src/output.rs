//! CSV and manifest files for runs and sweeps.
//!
//! | file | contents |
//! |------|----------|
//! | `timeseries.csv` | one row per step, every [`MetricsFrame`] column |
//! | `sweep.csv` | one row per (value, seed) |
//! | `plot_<metric>.csv` | `x,mean,sd,n` per lever value, sd over seeds |
//! | `manifest.json` | config hash, seeds, crate version |
//!
//! Numbers are written in shortest round-trip form, so the same inputs give
//! the same bytes.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::farmer::FarmerType;
use crate::scenario::ScenarioConfig;
use crate::sim::MetricsFrame;
use crate::sweep::{Metric, ResultTable, SweepSpec};

pub const TIMESERIES_FILE: &str = "timeseries.csv";
pub const SWEEP_FILE: &str = "sweep.csv";
pub const MANIFEST_FILE: &str = "manifest.json";

/// SHA-256 of the scenario's canonical TOML form.
pub fn config_hash(config: &ScenarioConfig) -> Result<String> {
    let text = config.to_toml_string()?;
    Ok(hex::encode(Sha256::digest(text.as_bytes())))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub crate_version: String,
    pub config_sha256: String,
    pub seeds: Vec<u64>,
    pub steps: u32,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub param: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub values: Option<Vec<f64>>,
    pub files: Vec<String>,
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn csv_writer(path: &Path) -> Result<csv::Writer<fs::File>> {
    csv::Writer::from_path(path).map_err(|e| match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Parse {
            path: path.to_path_buf(),
            message: format!("{other:?}"),
        },
    })
}

fn finish(mut w: csv::Writer<fs::File>, path: &Path) -> Result<()> {
    w.flush().map_err(|e| Error::io(path, e))
}

fn num(v: f64) -> String {
    if v.is_nan() {
        String::new()
    } else {
        (v + 0.0).to_string()
    }
}

pub fn write_timeseries(frames: &[MetricsFrame], commodity_ids: &[String], path: &Path) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(MetricsFrame::csv_header(commodity_ids))?;
    for f in frames {
        w.write_record(f.csv_record())?;
    }
    finish(w, path)
}

pub fn sweep_header() -> Vec<String> {
    let mut h = vec!["value".to_string(), "seed".to_string(), "exit_fraction".to_string()];
    for t in FarmerType::ALL {
        h.push(format!("exit_fraction_{}", t.label()));
    }
    for t in FarmerType::ALL {
        h.push(format!("mean_final_savings_{}", t.label()));
    }
    h.extend(["mean_sugar_price", "total_dues", "error"].map(String::from));
    h
}

pub fn write_sweep(table: &ResultTable, path: &Path) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(sweep_header())?;
    for r in &table.rows {
        let mut rec = vec![num(r.value), r.seed.to_string(), num(r.exit_fraction)];
        rec.extend(r.exit_fraction_by_type.iter().map(|v| num(*v)));
        rec.extend(r.mean_final_savings.iter().map(|v| num(*v)));
        rec.push(num(r.mean_sugar_price));
        rec.push(num(r.total_dues));
        rec.push(r.error.clone().unwrap_or_default());
        w.write_record(rec)?;
    }
    finish(w, path)
}

pub fn write_plot(table: &ResultTable, metric: Metric, path: &Path) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["x", "mean", "sd", "n"])?;
    for p in table.plot_points(metric) {
        w.write_record([num(p.x), num(p.mean), num(p.sd), p.n.to_string()])?;
    }
    finish(w, path)
}

fn write_manifest(manifest: &Manifest, path: &Path) -> Result<()> {
    let mut text = serde_json::to_string_pretty(manifest).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Writes `timeseries.csv` and `manifest.json` for one run.
pub fn emit_run(config: &ScenarioConfig, frames: &[MetricsFrame], out_dir: &Path) -> Result<Vec<PathBuf>> {
    ensure_dir(out_dir)?;
    let ids: Vec<String> = config.commodities.iter().map(|c| c.id.clone()).collect();
    let ts = out_dir.join(TIMESERIES_FILE);
    write_timeseries(frames, &ids, &ts)?;
    let manifest = Manifest {
        crate_version: env!("CARGO_PKG_VERSION").to_string(),
        config_sha256: config_hash(config)?,
        seeds: vec![config.seed],
        steps: config.steps,
        param: None,
        values: None,
        files: vec![TIMESERIES_FILE.to_string()],
    };
    let mf = out_dir.join(MANIFEST_FILE);
    write_manifest(&manifest, &mf)?;
    Ok(vec![ts, mf])
}

/// Writes `sweep.csv`, one `plot_<metric>.csv` per [`Metric`] and
/// `manifest.json`.
pub fn emit_sweep(spec: &SweepSpec, table: &ResultTable, out_dir: &Path) -> Result<Vec<PathBuf>> {
    ensure_dir(out_dir)?;
    let mut written = Vec::new();
    let sweep = out_dir.join(SWEEP_FILE);
    write_sweep(table, &sweep)?;
    written.push(sweep);
    for m in Metric::ALL {
        let p = out_dir.join(format!("plot_{}.csv", m.name()));
        write_plot(table, m, &p)?;
        written.push(p);
    }
    let mut seeds = spec.seeds.clone();
    seeds.sort_unstable();
    seeds.dedup();
    let mut values = spec.values.clone();
    values.sort_by(f64::total_cmp);
    values.dedup();
    let manifest = Manifest {
        crate_version: env!("CARGO_PKG_VERSION").to_string(),
        config_sha256: config_hash(&spec.base)?,
        seeds,
        steps: spec.base.steps,
        param: Some(spec.param.clone()),
        values: Some(values),
        files: written
            .iter()
            .map(|p| p.file_name().expect("joined file name").to_string_lossy().into_owned())
            .collect(),
    };
    let mf = out_dir.join(MANIFEST_FILE);
    write_manifest(&manifest, &mf)?;
    written.push(mf);
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::run;
    use crate::sim::tests::default_config;
    use crate::sweep::run_sweep;

    #[test]
    fn zero_step_run_writes_header_and_one_row() {
        let dir = tempfile::tempdir().unwrap();
        let c = default_config(20, 0);
        let frames = run(&c).unwrap();
        emit_run(&c, &frames, dir.path()).unwrap();
        let text = fs::read_to_string(dir.path().join(TIMESERIES_FILE)).unwrap();
        let lines: Vec<_> = text.lines().collect();
        assert_eq!(lines.len(), 2);
        assert!(lines[0].starts_with("step,farmers_type1,active_type1,exited_type1,"));
        assert!(lines[1].starts_with("0,14,14,0,"));
    }

    #[test]
    fn rerun_gives_identical_bytes() {
        let dir = tempfile::tempdir().unwrap();
        let c = default_config(40, 8);
        let frames = run(&c).unwrap();
        emit_run(&c, &frames, dir.path()).unwrap();
        let first = fs::read(dir.path().join(TIMESERIES_FILE)).unwrap();
        let m1 = fs::read(dir.path().join(MANIFEST_FILE)).unwrap();
        let frames = run(&c).unwrap();
        emit_run(&c, &frames, dir.path()).unwrap();
        assert_eq!(first, fs::read(dir.path().join(TIMESERIES_FILE)).unwrap());
        assert_eq!(m1, fs::read(dir.path().join(MANIFEST_FILE)).unwrap());
    }

    #[test]
    fn sweep_of_three_values_gives_three_plot_rows() {
        let dir = tempfile::tempdir().unwrap();
        let spec = SweepSpec {
            base: default_config(30, 4),
            param: "policy.frp".into(),
            values: vec![250.0, 300.0, 350.0],
            seeds: vec![1, 2],
        };
        let table = run_sweep(&spec, 2).unwrap();
        let files = emit_sweep(&spec, &table, dir.path()).unwrap();
        assert_eq!(files.len(), 1 + Metric::ALL.len() + 1);
        let plot = fs::read_to_string(dir.path().join("plot_exit_fraction.csv")).unwrap();
        let lines: Vec<_> = plot.lines().collect();
        assert_eq!(lines[0], "x,mean,sd,n");
        assert_eq!(lines.len(), 4);
        assert!(lines[1].starts_with("250,"));
        let sweep = fs::read_to_string(dir.path().join(SWEEP_FILE)).unwrap();
        assert_eq!(sweep.lines().count(), 7);
        let manifest: Manifest =
            serde_json::from_str(&fs::read_to_string(dir.path().join(MANIFEST_FILE)).unwrap()).unwrap();
        assert_eq!(manifest.seeds, vec![1, 2]);
        assert_eq!(manifest.param.as_deref(), Some("policy.frp"));
    }

    #[test]
    fn hash_tracks_every_field() {
        let c = default_config(30, 4);
        let h = config_hash(&c).unwrap();
        assert_eq!(h, config_hash(&c.clone()).unwrap());
        for (path, v) in [
            ("policy.frp", 276.0),
            ("seed", 2.0),
            ("commodities.sugar.trade.export_price", 1.0),
            ("storage.fruit.loss_rate", 0.5),
            ("water.agent_present", 0.0),
            ("farmers.type1.info_noise_sigma", 4.0),
        ] {
            let d = c.with_param(path, v).unwrap();
            assert_ne!(config_hash(&d).unwrap(), h, "{path}");
        }
    }

    #[test]
    fn unwritable_dir_reports_path() {
        let dir = tempfile::tempdir().unwrap();
        let blocker = dir.path().join("file");
        fs::write(&blocker, "x").unwrap();
        let c = default_config(20, 0);
        let frames = run(&c).unwrap();
        let err = emit_run(&c, &frames, &blocker.join("sub")).unwrap_err();
        assert!(err.to_string().contains("file"), "{err}");
    }
}
