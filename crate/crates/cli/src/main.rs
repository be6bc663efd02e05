use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Parser, Subcommand, ValueEnum};

use dsilt::federation::protocol::{run_protocol, ProtocolConfig};
use dsilt::federation::transport::{FileTransport, MemoryTransport};
use dsilt::federation::wire::open_frame;
use dsilt::glm::LinkFamily;
use dsilt::harness::{emit_outputs, run_experiment, ExperimentConfig};
use dsilt::pipeline::Method;
use dsilt::simgen::{generate, Design, ScenarioSpec};

#[derive(Parser)]
#[command(name = "dsilt", version, about = "Federated multi-study testing with summary statistics")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum DesignArg {
    Ar1,
    Hmm,
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodArg {
    Dsilt,
    Oneshot,
    Ilma,
}

impl From<MethodArg> for Method {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::Dsilt => Method::Dsilt,
            MethodArg::Oneshot => Method::OneShot,
            MethodArg::Ilma => Method::Ilma,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum TransportArg {
    Memory,
    Files,
}

#[derive(Subcommand)]
enum Command {
    /// Run a Monte-Carlo experiment and write metrics.csv, replications.csv,
    /// manifest.json and plot.gp.
    Simulate {
        #[arg(long, value_enum, default_value = "ar1")]
        design: DesignArg,
        #[arg(long, default_value_t = 200)]
        p: usize,
        #[arg(long, default_value_t = 10)]
        s: usize,
        #[arg(long, default_value_t = 0.3)]
        mu: f64,
        #[arg(long = "M", default_value_t = 3)]
        m: usize,
        #[arg(long, default_value_t = 300)]
        n: usize,
        #[arg(long, default_value_t = 50)]
        reps: usize,
        #[arg(long, default_value_t = 0.1)]
        alpha: f64,
        /// One method, or several separated by commas (run on the same data).
        #[arg(long, value_enum, value_delimiter = ',', default_value = "dsilt")]
        method: Vec<MethodArg>,
        #[arg(long = "K", default_value_t = 2)]
        k: usize,
        #[arg(long = "Kp", default_value_t = 5)]
        kp: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value_t = 1)]
        threads: usize,
        /// Report mean wall-clock seconds in metrics.csv (otherwise 0).
        #[arg(long)]
        timing: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run both protocol rounds on a small simulated problem and keep the frames.
    ProtocolDemo {
        #[arg(long, value_enum, default_value = "memory")]
        transport: TransportArg,
        #[arg(long)]
        dir: PathBuf,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
}

fn simulate(config: ExperimentConfig, out: &Path) -> anyhow::Result<ExitCode> {
    let report = run_experiment(&config)?;
    emit_outputs(&report, &config, out).with_context(|| format!("writing outputs to {}", out.display()))?;
    for row in &report.rows {
        println!(
            "{:<8} reps={:<4} fdr={:.4} (se {:.4})  power={:.4} (se {:.4})",
            row.method.name(),
            row.reps,
            row.fdr,
            row.se_fdr,
            row.power,
            row.se_power
        );
    }
    let failures: Vec<_> = report.failures().collect();
    if failures.is_empty() {
        return Ok(ExitCode::SUCCESS);
    }
    for f in &failures {
        eprintln!("replication {} ({}) failed: {}", f.replication, f.method, f.error.as_deref().unwrap_or(""));
    }
    Ok(ExitCode::from(2))
}

fn protocol_demo(transport: TransportArg, dir: &Path, seed: u64) -> anyhow::Result<()> {
    let spec = ScenarioSpec {
        design: Design::ar1(),
        family: LinkFamily::Logistic,
        studies: 3,
        n: 120,
        p: 12,
        s: 3,
        mu: 0.8,
        seed,
    };
    let (datasets, _) = generate(&spec, 0)?;
    let config = ProtocolConfig { seed, ..ProtocolConfig::default() };

    let frames: Vec<(String, Vec<u8>)> = match transport {
        TransportArg::Files => {
            let t = FileTransport::new(dir)?;
            run_protocol(&datasets, &config, &t)?;
            let mut out = Vec::new();
            for sub in ["round1", "broadcast", "round2"] {
                let mut names: Vec<_> = std::fs::read_dir(dir.join(sub))?.collect::<Result<_, _>>()?;
                names.sort_by_key(|e| e.file_name());
                for e in names {
                    let rel = format!("{sub}/{}", e.file_name().to_string_lossy());
                    out.push((rel, std::fs::read(e.path())?));
                }
            }
            out
        }
        TransportArg::Memory => {
            let t = MemoryTransport::new();
            run_protocol(&datasets, &config, &t)?;
            let mut out = Vec::new();
            for (slot, frame) in t.frames() {
                let path = dir.join(slot.relative_path());
                std::fs::create_dir_all(path.parent().unwrap())?;
                std::fs::write(&path, &frame)?;
                out.push((slot.to_string(), frame));
            }
            out
        }
    };
    if frames.is_empty() {
        bail!("protocol produced no frames");
    }
    println!("{:<24} {:>8} {:>10} {:>6} {:>5}", "slot", "bytes", "round", "study", "fold");
    for (name, frame) in &frames {
        let (header, _) = open_frame(frame)?;
        println!(
            "{:<24} {:>8} {:>10} {:>6} {:>5}",
            name,
            frame.len(),
            format!("{:?}", header.round),
            header.study_id.map_or("-".into(), |v| v.to_string()),
            header.fold_id.map_or("-".into(), |v| v.to_string()),
        );
    }
    println!("{} frames written under {}", frames.len(), dir.display());
    Ok(())
}

fn main() -> anyhow::Result<ExitCode> {
    let cli = Cli::parse();
    match cli.command {
        Command::Simulate { design, p, s, mu, m, n, reps, alpha, method, k, kp, seed, threads, timing, out } => {
            let scenario = ScenarioSpec {
                design: match design {
                    DesignArg::Ar1 => Design::ar1(),
                    DesignArg::Hmm => Design::hmm(),
                },
                family: LinkFamily::Logistic,
                studies: m,
                n,
                p,
                s,
                mu,
                seed,
            };
            let mut methods: Vec<Method> = method.into_iter().map(Method::from).collect();
            methods.dedup();
            let mut config = ExperimentConfig::new(scenario, methods);
            config.alpha = alpha;
            config.replications = reps;
            config.k = k;
            config.k_inner = kp;
            config.threads = threads;
            config.record_timing = timing;
            simulate(config, &out)
        }
        Command::ProtocolDemo { transport, dir, seed } => {
            protocol_demo(transport, &dir, seed)?;
            Ok(ExitCode::SUCCESS)
        }
    }
}
