//! End-to-end acceptance checks. Each test prints one PASS/FAIL line to stderr
//! (bypassing the harness capture) and then asserts.
//!
//! The Monte-Carlo criteria run full experiments at desk scale and dominate the
//! runtime of the workspace test suite.

#[path = "../../core/tests/common/mod.rs"]
mod common;

use std::io::Write;
use std::sync::OnceLock;

use dsilt::dist::chi2_sf;
use dsilt::federation::{deserialize, run_protocol, serialize, FileTransport, MemoryTransport, MessageEnvelope, ProtocolConfig};
use dsilt::glm::{Dataset, LinkFamily};
use dsilt::harness::{emit_outputs, run_experiment, ExperimentConfig, ExperimentReport, MetricsRow};
use dsilt::inference::fdr_threshold;
use dsilt::pipeline::Method;
use dsilt::simgen::{generate, Design, ScenarioSpec};
use dsilt::solvers::{
    dantzig_objective, group_dantzig, group_lasso_quad, lasso_fit, DantzigOptions, DantzigProblem,
    GroupLassoProblem, GroupLassoSpec, LassoSpec,
};
use nalgebra::{dvector, DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::*;

const ALPHA: f64 = 0.1;

fn report(criterion: u32, name: &str, pass: bool, detail: &str) {
    let line = format!("\n{} criterion {criterion} ({name}): {detail}\n", if pass { "PASS" } else { "FAIL" });
    let _ = std::io::stderr().write_all(line.as_bytes());
}

fn desk_scenario(s: usize, mu: f64, seed: u64) -> ScenarioSpec {
    ScenarioSpec { design: Design::ar1(), family: LinkFamily::Logistic, studies: 3, n: 300, p: 200, s, mu, seed }
}

fn experiment(scenario: ScenarioSpec, methods: Vec<Method>, reps: usize) -> ExperimentReport {
    let mut cfg = ExperimentConfig::new(scenario, methods);
    cfg.alpha = ALPHA;
    cfg.replications = reps;
    let report = run_experiment(&cfg).expect("experiment runs");
    for f in report.failures() {
        let _ = writeln!(std::io::stderr(), "  replication {} {} failed: {:?}", f.replication, f.method.name(), f.error);
    }
    report
}

fn row(report: &ExperimentReport, method: Method) -> &MetricsRow {
    report.rows.iter().find(|r| r.method == method).expect("method was run")
}

fn sparse() -> &'static ExperimentReport {
    static REPORT: OnceLock<ExperimentReport> = OnceLock::new();
    REPORT.get_or_init(|| experiment(desk_scenario(10, 0.3, 20_240), vec![Method::Dsilt, Method::OneShot, Method::Ilma], 50))
}

fn dense() -> &'static ExperimentReport {
    static REPORT: OnceLock<ExperimentReport> = OnceLock::new();
    REPORT.get_or_init(|| experiment(desk_scenario(50, 0.25, 20_241), vec![Method::Dsilt, Method::OneShot], 50))
}

#[test]
fn criterion_1_fdr_control() {
    let report = sparse();
    let bound = ALPHA + 0.04;
    let mut pass = true;
    let mut parts = Vec::new();
    for method in [Method::Dsilt, Method::OneShot, Method::Ilma] {
        let r = row(report, method);
        pass &= r.reps == 50 && r.fdr <= bound;
        parts.push(format!("{} FDR {:.4} (se {:.4}, reps {})", method.name(), r.fdr, r.se_fdr, r.reps));
    }
    report_and_assert(1, "FDR control", pass, format!("{}; bound {bound:.2}", parts.join(", ")));
}

#[test]
fn criterion_2_dsilt_matches_ilma_power() {
    let report = sparse();
    let (d, i) = (row(report, Method::Dsilt), row(report, Method::Ilma));
    let diff = (d.power - i.power).abs();
    report_and_assert(
        2,
        "DSILT vs ILMA power",
        diff <= 0.03,
        format!("power dsilt {:.4}, ilma {:.4}, |diff| {diff:.4} (bound 0.03)", d.power, i.power),
    );
}

#[test]
fn criterion_3_dsilt_beats_one_shot() {
    let dense = dense();
    let sparse = sparse();
    let gap = |r: &ExperimentReport| row(r, Method::Dsilt).power - row(r, Method::OneShot).power;
    let (gd, gs) = (gap(dense), gap(sparse));
    report_and_assert(
        3,
        "DSILT over one-shot power",
        gd >= 0.05 && gs >= 0.02,
        format!(
            "dense dsilt {:.4} vs oneshot {:.4} (gap {gd:.4}, need 0.05); sparse dsilt {:.4} vs oneshot {:.4} (gap {gs:.4}, need 0.02)",
            row(dense, Method::Dsilt).power,
            row(dense, Method::OneShot).power,
            row(sparse, Method::Dsilt).power,
            row(sparse, Method::OneShot).power,
        ),
    );
}

/// Kolmogorov-Smirnov distance between the sample and chi-square(df).
fn ks_distance(sample: &[f64], df: usize) -> f64 {
    let mut xs = sample.to_vec();
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    xs.iter()
        .enumerate()
        .map(|(i, &x)| {
            let cdf = 1.0 - chi2_sf(x, df);
            (cdf - i as f64 / n).abs().max(((i + 1) as f64 / n - cdf).abs())
        })
        .fold(0.0, f64::max)
}

#[test]
fn criterion_4_null_calibration() {
    let report = experiment(desk_scenario(10, 0.0, 20_242), vec![Method::Dsilt], 20);
    let zeta = &report.null_zeta.iter().find(|(m, _)| *m == Method::Dsilt).unwrap().1;
    let n = zeta.len() as f64;
    let mean = zeta.iter().sum::<f64>() / n;
    let var = zeta.iter().map(|z| (z - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let se = (var / n).sqrt();
    let ks = ks_distance(zeta, 3);
    report_and_assert(
        4,
        "null calibration",
        !zeta.is_empty() && ks < 0.05 && (mean - 3.0).abs() <= 3.0 * se,
        format!("{} pooled statistics, KS to chi2(3) {ks:.4} (need < 0.05), mean {mean:.4} (se {se:.4}, target 3)", zeta.len()),
    );
}

#[test]
fn criterion_5_solver_oracles() {
    // Group lasso: 20 random instances with p <= 5, M <= 3.
    let mut worst_group = f64::NEG_INFINITY;
    for seed in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(9_000 + seed);
        let m = rng.gen_range(1..=3);
        let p = rng.gen_range(2..=5);
        let h: Vec<_> = (0..m).map(|_| random_psd(&mut rng, p)).collect();
        let xi: Vec<_> = (0..m).map(|_| DVector::from_fn(p, |_, _| rng.gen_range(-1.0..1.0))).collect();
        let w: Vec<f64> = (0..m).map(|_| rng.gen_range(0.2..1.0)).collect();
        let lambda = rng.gen_range(0.05..0.5);
        let problem = GroupLassoProblem { h: &h, xi: &xi, weights: &w };
        let fit = group_lasso_quad(&problem, &GroupLassoSpec::new(lambda), None).unwrap();
        let oracle = prox_gradient_group(&problem, lambda);
        worst_group = worst_group.max(fit.objective - problem.objective(&oracle, lambda));
    }

    // Group Dantzig: M = 2, p = 2 diagonal family plus the fixed fixture.
    let mut worst_dantzig: f64 = 0.0;
    let mut cases = vec![([2.0, 1.0, 1.0, 1.0], 0usize, 0.3)];
    let mut rng = ChaCha8Rng::seed_from_u64(9_100);
    for _ in 0..10 {
        let d = [rng.gen_range(0.5..2.5), rng.gen_range(0.5..2.5), rng.gen_range(0.5..2.5), rng.gen_range(0.5..2.5)];
        cases.push((d, rng.gen_range(0..2), rng.gen_range(0.05..0.6)));
    }
    for (d, target, tau) in cases {
        let h = [DMatrix::from_diagonal(&dvector![d[0], d[1]]), DMatrix::from_diagonal(&dvector![d[2], d[3]])];
        let u = group_dantzig(&DantzigProblem { h: &h, target, tau }, &DantzigOptions::default(), None).unwrap().u;
        worst_dantzig = worst_dantzig.max((dantzig_objective(&u) - grid_oracle(d[target], d[2 + target], tau)).abs());
    }

    // Logistic lasso against accelerated proximal gradient.
    let mut worst_lasso: f64 = 0.0;
    for seed in 0..5u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(9_200 + seed);
        let (n, p) = (50, 5);
        let x = DMatrix::from_fn(n, p, |_, c| if c == 0 { 1.0 } else { rng.gen_range(-1.5..1.5) });
        let truth = dvector![0.2, 1.0, -0.8, 0.0, 0.3];
        let y = DVector::from_fn(n, |i, _| {
            let t: f64 = (x.row(i) * &truth)[0];
            if rng.gen::<f64>() < 1.0 / (1.0 + (-t).exp()) { 1.0 } else { 0.0 }
        });
        let beta = lasso_fit(&x, &y, &LassoSpec::new(LinkFamily::Logistic, 0.1), None).unwrap();
        worst_lasso = worst_lasso.max((&beta - prox_gradient_lasso(&x, &y, 0.1)).amax());
    }

    report_and_assert(
        5,
        "solver oracles",
        worst_group <= 1e-5 && worst_dantzig <= 2e-3 && worst_lasso <= 1e-5,
        format!(
            "group lasso gap {worst_group:.2e} (<= 1e-5), dantzig gap {worst_dantzig:.2e} (<= 2e-3), lasso max diff {worst_lasso:.2e} (<= 1e-5)"
        ),
    );
}

#[test]
fn criterion_6_threshold_exactness() {
    let mut rng = ChaCha8Rng::seed_from_u64(9_300);
    let mut mismatches = 0;
    for _ in 0..100 {
        let q = rng.gen_range(3..200);
        let alpha = rng.gen_range(0.02..0.4);
        let scores = random_scores(&mut rng, q);
        let out = fdr_threshold(&scores, alpha).unwrap();
        if out.rejected != grid_threshold(&scores, alpha).1 {
            mismatches += 1;
        }
    }
    report_and_assert(6, "threshold exactness", mismatches == 0, format!("{mismatches} of 100 fixtures differ from the 1e-4 grid scan"));
}

fn audit_sources() -> Vec<String> {
    let mut problems = Vec::new();
    let sources = [
        ("messages", include_str!("../../core/src/federation/messages.rs")),
        ("wire", include_str!("../../core/src/federation/wire.rs")),
        ("transport", include_str!("../../core/src/federation/transport.rs")),
    ];
    for (name, src) in sources {
        for forbidden in ["Dataset", "glm::"] {
            if src.contains(forbidden) {
                problems.push(format!("{name} mentions {forbidden}"));
            }
        }
    }
    let nodes = include_str!("../../core/src/federation/nodes.rs");
    for line in nodes.lines().filter(|l| l.contains(") -> Result<")) {
        if line.split(") -> ").nth(1).is_some_and(|r| r.contains("Dataset")) {
            problems.push(format!("node returns raw data: {}", line.trim()));
        }
    }
    problems
}

#[test]
fn criterion_7_protocol_integrity() {
    let spec = ScenarioSpec { design: Design::ar1(), family: LinkFamily::Logistic, studies: 3, n: 80, p: 8, s: 2, mu: 0.6, seed: 9_400 };
    let data: Vec<Dataset> = generate(&spec, 0).unwrap().0;
    let cfg = ProtocolConfig { seed: 3, ..Default::default() };
    let mem = MemoryTransport::new();
    let a = run_protocol(&data, &cfg, &mem).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let b = run_protocol(&data, &cfg, &FileTransport::new(dir.path()).unwrap()).unwrap();
    let frames = mem.frames();
    let transports_identical = a.beta_tilde == b.beta_tilde
        && a.round2 == b.round2
        && frames.iter().all(|(slot, bytes)| std::fs::read(dir.path().join(slot.relative_path())).ok().as_ref() == Some(bytes));

    let mut payloads = sample_payloads();
    payloads.extend(frames.iter().map(|(_, bytes)| deserialize(bytes).unwrap().payload));
    let mut round_trip = true;
    let mut undetected = 0usize;
    let mut flips = 0usize;
    for p in payloads {
        let msg = MessageEnvelope::new(p);
        let frame = serialize(&msg);
        round_trip &= deserialize(&frame).map(|back| serialize(&back) == frame).unwrap_or(false);
        for pos in 0..frame.len() {
            for mask in [0x01u8, 0x80, 0xFF] {
                let mut bad = frame.clone();
                bad[pos] ^= mask;
                flips += 1;
                undetected += usize::from(deserialize(&bad).is_ok());
            }
        }
    }
    let problems = audit_sources();

    report_and_assert(
        7,
        "protocol integrity",
        transports_identical && round_trip && undetected == 0 && problems.is_empty(),
        format!(
            "memory vs file identical: {transports_identical} ({} frames); round trip bit-exact: {round_trip}; undetected byte flips {undetected} of {flips}; audit issues: {}",
            frames.len(),
            if problems.is_empty() { "none".to_string() } else { problems.join("; ") }
        ),
    );
}

#[test]
fn criterion_8_determinism_across_threads() {
    let scenario = ScenarioSpec { design: Design::hmm(), family: LinkFamily::Logistic, studies: 2, n: 120, p: 30, s: 3, mu: 0.8, seed: 9_500 };
    let mut csvs = Vec::new();
    for threads in [1, 2, 4] {
        let mut cfg = ExperimentConfig::new(scenario.clone(), vec![Method::Dsilt, Method::OneShot, Method::Ilma]);
        cfg.replications = 3;
        cfg.threads = threads;
        let report = run_experiment(&cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        emit_outputs(&report, &cfg, dir.path()).unwrap();
        csvs.push(std::fs::read(dir.path().join("metrics.csv")).unwrap());
    }
    let identical = csvs.windows(2).all(|w| w[0] == w[1]);
    report_and_assert(8, "determinism", identical, format!("metrics.csv identical for 1, 2 and 4 threads: {identical}"));
}

fn report_and_assert(criterion: u32, name: &str, pass: bool, detail: String) {
    report(criterion, name, pass, &detail);
    assert!(pass, "criterion {criterion} ({name}) failed: {detail}");
}
