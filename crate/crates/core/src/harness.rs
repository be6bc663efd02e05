//! Monte-Carlo experiment runner and its output files.

use std::fs;
use std::path::Path;
use std::time::Instant;

use rand::RngCore;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::federation::protocol::ProtocolConfig;
use crate::federation::MemoryTransport;
use crate::inference::fdp_power;
use crate::pipeline::{dsilt_pipeline, ilma_pipeline, one_shot_pipeline, Method, PipelineConfig, PipelineResult};
use crate::simgen::{generate, substream, ScenarioSpec, StreamPurpose};
use crate::solvers::DantzigOptions;
use crate::tuning::TuningGrids;

pub const METRICS_HEADER: &str = "design,p,s,mu,M,n_m,method,alpha,reps,fdr,se_fdr,power,se_power,runtime_s";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub scenario: ScenarioSpec,
    pub methods: Vec<Method>,
    pub alpha: f64,
    pub replications: usize,
    pub k: usize,
    pub k_inner: usize,
    pub grids: TuningGrids,
    pub dantzig: DantzigOptions,
    pub threads: usize,
    /// Report mean wall-clock time in metrics.csv; off keeps the file
    /// reproducible byte for byte.
    pub record_timing: bool,
}

impl ExperimentConfig {
    pub fn new(scenario: ScenarioSpec, methods: Vec<Method>) -> Self {
        ExperimentConfig {
            scenario,
            methods,
            alpha: 0.1,
            replications: 1,
            k: 2,
            k_inner: 5,
            grids: TuningGrids::default(),
            dantzig: DantzigOptions::default(),
            threads: 1,
            record_timing: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.scenario.validate()?;
        self.grids.validate()?;
        if self.methods.is_empty() {
            return Err(Error::Config("no methods selected".into()));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::Config(format!("alpha must lie in (0, 1), got {}", self.alpha)));
        }
        if self.replications == 0 {
            return Err(Error::Config("need at least one replication".into()));
        }
        if self.k < 2 || self.k % 2 != 0 {
            return Err(Error::Config(format!("K must be even and at least 2, got {}", self.k)));
        }
        if self.k_inner < 2 {
            return Err(Error::Config(format!("K' must be at least 2, got {}", self.k_inner)));
        }
        if self.scenario.p < 4 {
            return Err(Error::Config("need p >= 4 so that at least 3 hypotheses are tested".into()));
        }
        Ok(())
    }

    /// Pipeline configuration for one replication.
    pub fn pipeline(&self, replication: usize) -> PipelineConfig {
        let seed = substream(self.scenario.seed, replication as u64, 0, StreamPurpose::Partition).next_u64();
        PipelineConfig {
            protocol: ProtocolConfig {
                family: self.scenario.family,
                k: self.k,
                k_inner: self.k_inner,
                seed,
                grids: self.grids.clone(),
                local_penalty: None,
                integrative_penalty: None,
            },
            alpha: self.alpha,
            dantzig: self.dantzig.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicationRecord {
    pub replication: usize,
    pub method: Method,
    pub fdp: Option<f64>,
    pub power: Option<f64>,
    pub rejections: Option<usize>,
    pub threshold: Option<f64>,
    pub capped: Option<bool>,
    pub tau: Option<f64>,
    pub lambda: Option<f64>,
    pub runtime_s: f64,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub design: String,
    pub p: usize,
    pub s: usize,
    pub mu: f64,
    #[serde(rename = "M")]
    pub m: usize,
    pub n_m: usize,
    pub method: Method,
    pub alpha: f64,
    pub reps: usize,
    pub fdr: f64,
    pub se_fdr: f64,
    pub power: f64,
    pub se_power: f64,
    pub runtime_s: f64,
}

#[derive(Debug, Clone)]
pub struct ExperimentReport {
    pub rows: Vec<MetricsRow>,
    pub records: Vec<ReplicationRecord>,
    /// Null statistics zeta_j pooled over replications, per method.
    pub null_zeta: Vec<(Method, Vec<f64>)>,
}

impl ExperimentReport {
    pub fn failures(&self) -> impl Iterator<Item = &ReplicationRecord> {
        self.records.iter().filter(|r| r.error.is_some())
    }
}

pub fn run_method(method: Method, datasets: &[crate::glm::Dataset], config: &PipelineConfig) -> Result<PipelineResult> {
    match method {
        Method::Dsilt => dsilt_pipeline(datasets, config, &MemoryTransport::new()),
        Method::OneShot => one_shot_pipeline(datasets, config, &MemoryTransport::new()),
        Method::Ilma => ilma_pipeline(datasets, config),
    }
}

struct RepOutput {
    records: Vec<ReplicationRecord>,
    null_zeta: Vec<Vec<f64>>,
}

fn run_replication(config: &ExperimentConfig, rep: usize) -> RepOutput {
    let spec = &config.scenario;
    let failed = |method, e: &Error| ReplicationRecord {
        replication: rep,
        method,
        fdp: None,
        power: None,
        rejections: None,
        threshold: None,
        capped: None,
        tau: None,
        lambda: None,
        runtime_s: 0.0,
        error: Some(e.to_string()),
    };
    let (datasets, truth) = match generate(spec, rep as u64) {
        Ok(v) => v,
        Err(e) => {
            let e = Error::from(e);
            return RepOutput {
                records: config.methods.iter().map(|&m| failed(m, &e)).collect(),
                null_zeta: vec![Vec::new(); config.methods.len()],
            };
        }
    };
    let nulls = truth.nulls(spec.p);
    let pc = config.pipeline(rep);
    let mut records = Vec::with_capacity(config.methods.len());
    let mut null_zeta = Vec::with_capacity(config.methods.len());
    for &method in &config.methods {
        let t = Instant::now();
        let result = run_method(method, &datasets, &pc).and_then(|r| {
            let (fdp, power) = fdp_power(&r.outcome.rejected, &nulls, &truth.support)?;
            Ok((r, fdp, power))
        });
        let runtime_s = t.elapsed().as_secs_f64();
        match result {
            Ok((r, fdp, power)) => {
                null_zeta.push(r.tests.iter().filter(|t| nulls.contains(&t.j)).map(|t| t.zeta).collect());
                records.push(ReplicationRecord {
                    replication: rep,
                    method,
                    fdp: Some(fdp),
                    power: Some(power),
                    rejections: Some(r.outcome.rejected.len()),
                    threshold: Some(r.outcome.threshold),
                    capped: Some(r.outcome.capped),
                    tau: r.tau.first().map(|t| t.tau()),
                    lambda: r.lambda,
                    runtime_s,
                    error: None,
                });
            }
            Err(e) => {
                null_zeta.push(Vec::new());
                records.push(ReplicationRecord { runtime_s, ..failed(method, &e) });
            }
        }
    }
    RepOutput { records, null_zeta }
}

/// Mean and standard error of the mean (0 for a single value).
pub fn mean_se(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, (var / n as f64).sqrt())
}

/// Runs every replication (in parallel on `config.threads` workers) and
/// aggregates per method. Results are reduced in replication order, so the
/// output does not depend on the thread count.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentReport> {
    config.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.threads.max(1))
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    let outputs: Vec<RepOutput> =
        pool.install(|| (0..config.replications).into_par_iter().map(|rep| run_replication(config, rep)).collect());

    let spec = &config.scenario;
    let mut rows = Vec::new();
    let mut null_zeta = Vec::new();
    for (mi, &method) in config.methods.iter().enumerate() {
        let ok: Vec<&ReplicationRecord> =
            outputs.iter().map(|o| &o.records[mi]).filter(|r| r.error.is_none()).collect();
        let fdp: Vec<f64> = ok.iter().filter_map(|r| r.fdp).collect();
        let power: Vec<f64> = ok.iter().filter_map(|r| r.power).collect();
        let (fdr, se_fdr) = mean_se(&fdp);
        let (pow, se_power) = mean_se(&power);
        let runtime = if config.record_timing {
            mean_se(&ok.iter().map(|r| r.runtime_s).collect::<Vec<_>>()).0
        } else {
            0.0
        };
        rows.push(MetricsRow {
            design: spec.design.name().to_string(),
            p: spec.p,
            s: spec.s,
            mu: spec.mu,
            m: spec.studies,
            n_m: spec.n,
            method,
            alpha: config.alpha,
            reps: ok.len(),
            fdr,
            se_fdr,
            power: pow,
            se_power,
            runtime_s: runtime,
        });
        null_zeta.push((method, outputs.iter().flat_map(|o| o.null_zeta[mi].iter().copied()).collect()));
    }
    let records = outputs.into_iter().flat_map(|o| o.records).collect();
    Ok(ExperimentReport { rows, records, null_zeta })
}

const PLOT_SCRIPT: &str = r#"# Usage: gnuplot plot.gp  (writes metrics.png next to metrics.csv)
set datafile separator ","
set terminal pngcairo size 1000,420
set output "metrics.png"
set key top left
set xlabel "mu"
set multiplot layout 1,2
set title "Empirical FDR"
set yrange [0:*]
plot for [m in "dsilt oneshot ilma"] "metrics.csv" using 4:(strcol(7) eq m ? $10 : 1/0):11 \
    skip 1 with yerrorlines title m
set title "Empirical power"
set yrange [0:1]
plot for [m in "dsilt oneshot ilma"] "metrics.csv" using 4:(strcol(7) eq m ? $12 : 1/0):13 \
    skip 1 with yerrorlines title m
unset multiplot
"#;

#[derive(Serialize)]
struct Manifest<'a> {
    package: &'static str,
    version: &'static str,
    seed: u64,
    config: &'a ExperimentConfig,
    failures: Vec<&'a ReplicationRecord>,
}

fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Output(format!("{}: {e}", path.display())))?;
    for r in rows {
        w.serialize(r).map_err(|e| Error::Output(e.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

/// Writes metrics.csv, replications.csv, manifest.json and plot.gp into `dir`.
pub fn emit_outputs(report: &ExperimentReport, config: &ExperimentConfig, dir: &Path) -> Result<()> {
    if report.rows.is_empty() {
        return Err(Error::Output("no metrics rows to write".into()));
    }
    fs::create_dir_all(dir)?;
    write_csv(&dir.join("metrics.csv"), &report.rows)?;
    write_csv(&dir.join("replications.csv"), &report.records)?;
    let manifest = Manifest {
        package: env!("CARGO_PKG_NAME"),
        version: env!("CARGO_PKG_VERSION"),
        seed: config.scenario.seed,
        config,
        failures: report.failures().collect(),
    };
    let json = serde_json::to_string_pretty(&manifest).map_err(|e| Error::Output(e.to_string()))?;
    fs::write(dir.join("manifest.json"), json)?;
    fs::write(dir.join("plot.gp"), PLOT_SCRIPT)?;
    Ok(())
}

pub fn read_metrics(path: &Path) -> Result<Vec<MetricsRow>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::Output(format!("{}: {e}", path.display())))?;
    r.deserialize().map(|row| row.map_err(|e| Error::Output(e.to_string()))).collect()
}
