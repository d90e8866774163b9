//! Single-lever batch experiments: one run per (value, seed) with every
//! other parameter held at the base scenario.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::farmer::FarmerType;
use crate::scenario::ScenarioConfig;
use crate::sim::{run, MetricsFrame};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSpec {
    pub base: ScenarioConfig,
    /// Dotted path of the varied lever, as accepted by
    /// [`ScenarioConfig::with_param`].
    pub param: String,
    pub values: Vec<f64>,
    pub seeds: Vec<u64>,
}

impl SweepSpec {
    pub fn validate(&self) -> Result<()> {
        if self.values.is_empty() {
            return Err(Error::config("a sweep needs at least one value"));
        }
        if self.seeds.is_empty() {
            return Err(Error::config("a sweep needs at least one seed"));
        }
        if self.values.iter().any(|v| !v.is_finite()) {
            return Err(Error::config("sweep values must be finite"));
        }
        self.base.validate()?;
        self.base.param(&self.param)?;
        Ok(())
    }

    /// The scenario for one point of the sweep.
    pub fn scenario(&self, value: f64, seed: u64) -> Result<ScenarioConfig> {
        let mut c = self.base.with_param(&self.param, value)?;
        c.seed = seed;
        Ok(c)
    }
}

/// Summary of one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub value: f64,
    pub seed: u64,
    /// Fraction of all farmers who left farming by the last step.
    pub exit_fraction: f64,
    /// Per type, indexed Type1, Type2, Type3.
    pub exit_fraction_by_type: [f64; 3],
    /// Mean savings of each type's remaining farmers at the last step.
    pub mean_final_savings: [f64; 3],
    /// Sugar price averaged over steps 1 to the end.
    pub mean_sugar_price: f64,
    /// Mill dues still outstanding at the last step.
    pub total_dues: f64,
    /// Set when the run failed; the numeric fields are then NaN.
    pub error: Option<String>,
}

impl SweepRow {
    pub fn from_frames(value: f64, seed: u64, frames: &[MetricsFrame], sugar: usize) -> Self {
        let last = frames.last().expect("a run has at least the initial frame");
        let priced: Vec<f64> = frames
            .iter()
            .skip(usize::from(frames.len() > 1))
            .map(|f| f.commodities[sugar].price)
            .collect();
        Self {
            value,
            seed,
            exit_fraction: last.total_exit_fraction(),
            exit_fraction_by_type: FarmerType::ALL.map(|t| last.exit_fraction(t)),
            mean_final_savings: last.mean_savings,
            mean_sugar_price: priced.iter().sum::<f64>() / priced.len() as f64,
            total_dues: last.mill_dues,
            error: None,
        }
    }

    fn failed(value: f64, seed: u64, error: &Error) -> Self {
        Self {
            value,
            seed,
            exit_fraction: f64::NAN,
            exit_fraction_by_type: [f64::NAN; 3],
            mean_final_savings: [f64::NAN; 3],
            mean_sugar_price: f64::NAN,
            total_dues: f64::NAN,
            error: Some(error.to_string()),
        }
    }

    pub fn metric(&self, metric: Metric) -> f64 {
        match metric {
            Metric::ExitFraction => self.exit_fraction,
            Metric::ExitFractionType(t) => self.exit_fraction_by_type[t.index()],
            Metric::MeanSugarPrice => self.mean_sugar_price,
            Metric::TotalDues => self.total_dues,
        }
    }
}

/// Rows sorted by (value, seed), one per pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultTable {
    pub param: String,
    pub rows: Vec<SweepRow>,
}

/// Sweep metrics that get a plot file.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Metric {
    ExitFraction,
    ExitFractionType(FarmerType),
    MeanSugarPrice,
    TotalDues,
}

impl Metric {
    pub const ALL: [Metric; 6] = [
        Metric::ExitFraction,
        Metric::ExitFractionType(FarmerType::Type1),
        Metric::ExitFractionType(FarmerType::Type2),
        Metric::ExitFractionType(FarmerType::Type3),
        Metric::MeanSugarPrice,
        Metric::TotalDues,
    ];

    pub fn name(&self) -> String {
        match self {
            Metric::ExitFraction => "exit_fraction".into(),
            Metric::ExitFractionType(t) => format!("exit_fraction_{}", t.label()),
            Metric::MeanSugarPrice => "mean_sugar_price".into(),
            Metric::TotalDues => "total_dues".into(),
        }
    }
}

/// Mean and sample standard deviation of a metric at one lever value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlotPoint {
    pub x: f64,
    pub mean: f64,
    pub sd: f64,
    /// Seeds that completed.
    pub n: usize,
}

impl ResultTable {
    /// One point per lever value, over the seeds whose runs succeeded.
    pub fn plot_points(&self, metric: Metric) -> Vec<PlotPoint> {
        let mut out: Vec<PlotPoint> = Vec::new();
        for chunk in self.rows.chunk_by(|a, b| a.value == b.value) {
            let ys: Vec<f64> = chunk.iter().filter(|r| r.error.is_none()).map(|r| r.metric(metric)).collect();
            let n = ys.len();
            let mean = if n == 0 { f64::NAN } else { ys.iter().sum::<f64>() / n as f64 };
            let sd = if n < 2 {
                0.0
            } else {
                (ys.iter().map(|y| (y - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
            };
            out.push(PlotPoint { x: chunk[0].value, mean, sd, n });
        }
        out
    }

    pub fn failures(&self) -> impl Iterator<Item = &SweepRow> {
        self.rows.iter().filter(|r| r.error.is_some())
    }
}

/// Runs every (value, seed) pair on a pool of `jobs` threads. A failed run
/// becomes a row carrying its error. The table does not depend on `jobs`.
pub fn run_sweep(spec: &SweepSpec, jobs: usize) -> Result<ResultTable> {
    spec.validate()?;
    let mut points: Vec<(f64, u64)> = spec
        .values
        .iter()
        .flat_map(|v| spec.seeds.iter().map(move |s| (*v, *s)))
        .collect();
    points.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    points.dedup();

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::config(format!("cannot start {jobs} worker threads: {e}")))?;
    let sugar = spec.base.commodity_index(crate::scenario::SUGAR).expect("validated");
    let rows = pool.install(|| {
        points
            .par_iter()
            .map(|&(value, seed)| {
                let outcome = spec.scenario(value, seed).and_then(|c| run(&c));
                match outcome {
                    Ok(frames) => SweepRow::from_frames(value, seed, &frames, sugar),
                    Err(e) => SweepRow::failed(value, seed, &e),
                }
            })
            .collect()
    });
    Ok(ResultTable {
        param: spec.param.clone(),
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::tests::default_config;

    fn spec(values: Vec<f64>, seeds: Vec<u64>) -> SweepSpec {
        SweepSpec {
            base: default_config(60, 12),
            param: "policy.frp".into(),
            values,
            seeds,
        }
    }

    #[test]
    fn single_point_equals_single_run() {
        let s = spec(vec![300.0], vec![4]);
        let table = run_sweep(&s, 1).unwrap();
        assert_eq!(table.rows.len(), 1);
        let frames = run(&s.scenario(300.0, 4).unwrap()).unwrap();
        assert_eq!(table.rows[0], SweepRow::from_frames(300.0, 4, &frames, 0));
    }

    #[test]
    fn rows_sorted_and_complete() {
        let s = spec(vec![350.0, 250.0, 300.0], vec![2, 1]);
        let table = run_sweep(&s, 3).unwrap();
        let keys: Vec<_> = table.rows.iter().map(|r| (r.value, r.seed)).collect();
        assert_eq!(
            keys,
            vec![(250.0, 1), (250.0, 2), (300.0, 1), (300.0, 2), (350.0, 1), (350.0, 2)]
        );
    }

    #[test]
    fn parallelism_does_not_change_the_table() {
        let s = spec(vec![250.0, 400.0], vec![1, 2, 3]);
        let a = run_sweep(&s, 1).unwrap();
        let b = run_sweep(&s, 8).unwrap();
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
    }

    #[test]
    fn failed_runs_are_recorded() {
        // A population below ten fails at set-up without stopping the sweep.
        let mut s = spec(vec![5.0, 60.0], vec![1]);
        s.param = "population.size".into();
        let table = run_sweep(&s, 2).unwrap();
        assert_eq!(table.rows.len(), 2);
        assert!(table.rows[0].error.as_deref().unwrap().contains("at least 10"));
        assert!(table.rows[1].error.is_none());
        assert_eq!(table.failures().count(), 1);
        let points = table.plot_points(Metric::ExitFraction);
        assert_eq!(points[0].n, 0);
        assert!(points[0].mean.is_nan());
    }

    #[test]
    fn bad_specs_rejected() {
        assert!(run_sweep(&spec(vec![], vec![1]), 1).is_err());
        assert!(run_sweep(&spec(vec![1.0], vec![]), 1).is_err());
        let mut s = spec(vec![1.0], vec![1]);
        s.param = "policy.nope".into();
        assert!(run_sweep(&s, 1).is_err());
    }

    #[test]
    fn plot_points_use_sample_sd() {
        let row = |value, seed, exit| SweepRow {
            value,
            seed,
            exit_fraction: exit,
            exit_fraction_by_type: [exit; 3],
            mean_final_savings: [0.0; 3],
            mean_sugar_price: 0.0,
            total_dues: 0.0,
            error: None,
        };
        let table = ResultTable {
            param: "x".into(),
            rows: vec![row(1.0, 1, 0.2), row(1.0, 2, 0.4), row(1.0, 3, 0.6), row(2.0, 1, 0.5)],
        };
        let pts = table.plot_points(Metric::ExitFraction);
        assert_eq!(pts.len(), 2);
        assert!((pts[0].mean - 0.4).abs() < 1e-15);
        assert!((pts[0].sd - 0.2).abs() < 1e-15);
        assert_eq!((pts[1].mean, pts[1].sd, pts[1].n), (0.5, 0.0, 1));
    }
}
