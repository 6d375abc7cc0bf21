use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Duration;

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;

use cogsim::bench::{
    compare, read_csv, read_json, run_sweep, write_csv, write_json, BenchPlan, BenchRecord, BenchTarget, LocalTarget,
    RemoteTarget, SimulatedTarget,
};
use cogsim::exec::{calibrate_profile, AccelProfile, Anchor, BackendKind};
use cogsim::feasibility::{assess, AssessInputs, LinkSpec, WorkloadSpec};
use cogsim::model::{build_hermit, build_mir, HermitConfig, MirConfig, ModelManifest, ModelSpec};
use cogsim::net::{serve, ClientSession, Registry, ServerConfig};

type Result<T> = std::result::Result<T, Box<dyn std::error::Error>>;

#[derive(Parser)]
#[command(name = "cogsim", version, about = "Surrogate-model inference server, benchmark harness and feasibility model")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Serve models over TCP.
    Serve(ServeArgs),
    /// Latency/throughput sweeps and comparisons.
    #[command(subcommand)]
    Bench(BenchCommand),
    /// Analytic feasibility of remote inference.
    #[command(subcommand)]
    Feasibility(FeasibilityCommand),
    /// Accelerator latency profiles.
    #[command(subcommand)]
    Profile(ProfileCommand),
    /// Inspect or export reference models.
    #[command(subcommand)]
    Model(ModelCommand),
}

#[derive(Clone, Copy, ValueEnum)]
enum Backend {
    Real,
    Sim,
}

#[derive(Args)]
struct ServeArgs {
    #[arg(long, default_value = "127.0.0.1:7070")]
    bind: String,
    /// Model manifest, or a list file with one manifest path per line. Repeatable.
    #[arg(long, required = true)]
    manifest: Vec<PathBuf>,
    #[arg(long, value_enum, default_value = "real")]
    backend: Backend,
    /// Shipped profile name or profile file (required for --backend sim).
    #[arg(long)]
    profile: Option<String>,
    /// Artificial one-way delay in microseconds.
    #[arg(long, default_value_t = 0)]
    inject_delay_us: u64,
}

#[derive(Subcommand)]
enum BenchCommand {
    /// Sweep mini-batch (and optionally micro-batch) sizes.
    Sweep(SweepArgs),
    /// Per-mini-batch throughput speedup of a over b.
    Compare {
        a: PathBuf,
        b: PathBuf,
        #[arg(long, default_value_t = 1.0)]
        normalize: f64,
    },
}

#[derive(Args)]
struct SweepArgs {
    /// hermit, mir, or a model manifest path.
    #[arg(long, default_value = "hermit")]
    model: String,
    /// Model id on the server (defaults to the model name).
    #[arg(long)]
    model_id: Option<String>,
    /// `local` or `tcp://host:port`.
    #[arg(long, default_value = "local")]
    target: String,
    /// Local only: simulate this profile instead of running on the CPU.
    #[arg(long)]
    profile: Option<String>,
    #[arg(long, value_delimiter = ',')]
    minis: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',')]
    micros: Option<Vec<usize>>,
    #[arg(long, default_value_t = 1)]
    tiles: usize,
    #[arg(long, default_value_t = 5)]
    replicates: usize,
    #[arg(long, default_value_t = 10)]
    warmup: usize,
    #[arg(long, default_value_t = 10.0)]
    min_seconds: f64,
    #[arg(long)]
    preferred_mb: bool,
    /// Report path; `.json` selects JSON, anything else CSV.
    #[arg(long, default_value = "results.csv")]
    out: PathBuf,
}

#[derive(Subcommand)]
enum FeasibilityCommand {
    Assess {
        #[arg(long, default_value = "hermit")]
        model: String,
        /// e.g. `bw=100e9,lat=1e-6`
        #[arg(long, default_value = "bw=100e9,lat=1e-6")]
        link: String,
        /// e.g. `ranks=1,zones=10000,ipz=2.5,budget=1.0`
        #[arg(long, default_value = "ranks=1,zones=10000,ipz=2.5,budget=1.0")]
        workload: String,
        #[arg(long)]
        local_profile: Option<String>,
        #[arg(long, default_value = "rdu1-cpp")]
        remote_profile: String,
        #[arg(long, value_delimiter = ',')]
        minis: Option<Vec<usize>>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum ProfileCommand {
    /// Fit a profile to `mini:latency_ms` anchors.
    Fit {
        #[arg(long)]
        name: String,
        #[arg(long = "anchor", required = true)]
        anchors: Vec<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print a shipped or file profile.
    Show { name: String },
}

#[derive(Subcommand)]
enum ModelCommand {
    /// Parameter, flop and byte accounting.
    Info {
        #[arg(long, default_value = "hermit")]
        model: String,
    },
    /// Write the model's weights to a weight-store file.
    Export {
        #[arg(long, default_value = "hermit")]
        model: String,
        #[arg(long)]
        out: PathBuf,
    },
}

fn load_model(spec: &str) -> Result<ModelSpec> {
    Ok(match spec {
        "hermit" => build_hermit(&HermitConfig::default())?,
        "mir" => build_mir(&MirConfig::default())?,
        path => ModelManifest::load(Path::new(path))?.build()?,
    })
}

fn is_json(p: &Path) -> bool {
    p.extension().is_some_and(|e| e == "json")
}

fn read_records(p: &Path) -> Result<Vec<BenchRecord>> {
    Ok(if is_json(p) { read_json(p)? } else { read_csv(p)? })
}

fn cmd_serve(a: ServeArgs) -> Result<()> {
    let backend = match a.backend {
        Backend::Real => BackendKind::RealCpu,
        Backend::Sim => BackendKind::Simulated,
    };
    let profile = a.profile.as_deref().map(AccelProfile::load).transpose()?;
    let mut registry = Registry::new();
    for m in &a.manifest {
        let part = Registry::from_manifest_list(m, backend, profile.as_ref())?;
        for id in part.ids() {
            registry.insert(id, part.get(id).expect("listed").clone());
        }
    }
    let handle = serve(
        registry.clone(),
        &a.bind,
        ServerConfig {
            inject_delay: Duration::from_micros(a.inject_delay_us),
        },
    )?;
    println!("serving {} model(s) on {}", registry.len(), handle.endpoint());
    for id in registry.ids() {
        println!("  {id}");
    }
    handle.wait();
    Ok(())
}

fn cmd_sweep(a: SweepArgs) -> Result<()> {
    let plan = BenchPlan {
        mini_batch_sizes: a.minis.unwrap_or_else(|| BenchPlan::default().mini_batch_sizes),
        micro_batch_sizes: a.micros,
        replicates: a.replicates,
        warmup_batches: a.warmup,
        min_wall_clock_s: a.min_seconds,
        preferred_mb: a.preferred_mb,
    };
    plan.validate()?;
    let model = load_model(&a.model)?;
    let mut target: Box<dyn BenchTarget> = if a.target == "local" {
        match &a.profile {
            Some(p) => Box::new(SimulatedTarget::new(AccelProfile::load(p)?, model.name.clone(), a.tiles)),
            None => Box::new(LocalTarget::new(Arc::new(model), a.tiles)),
        }
    } else {
        let session = ClientSession::connect(&a.target)?;
        let id = a.model_id.unwrap_or_else(|| model.name.clone());
        Box::new(RemoteTarget::new(session, id, model.input_shape.clone(), model.precision))
    };
    info!("sweeping {} configuration(s)", plan.minis().len() * plan.micros().map_or(1, |m| m.len()));
    let result = run_sweep(&plan, target.as_mut())?;
    for r in &result.records {
        match (r.mean_latency_ms, r.throughput_sps) {
            (Some(l), Some(t)) => println!("mini {:>6} micro {:>6}  {:>10.4} ms  {:>14.1} samples/s", r.mini, r.micro, l, t),
            _ => println!("mini {:>6} micro {:>6}  invalid", r.mini, r.micro),
        }
    }
    for h in &result.highlights {
        println!("best micro for mini {}: {} ({:.4} ms)", h.mini, h.micro, h.mean_latency_ms);
    }
    if is_json(&a.out) {
        write_json(&result.records, &a.out)?;
    } else {
        write_csv(&result.records, &a.out)?;
    }
    println!("wrote {}", a.out.display());
    Ok(())
}

fn parse_anchor(s: &str) -> Result<Anchor> {
    let (m, l) = s.split_once(':').ok_or_else(|| format!("anchor `{s}` is not mini:latency_ms"))?;
    Ok(Anchor::new(m.trim().parse()?, l.trim().parse()?))
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Serve(a) => cmd_serve(a),
        Command::Bench(BenchCommand::Sweep(a)) => cmd_sweep(a),
        Command::Bench(BenchCommand::Compare { a, b, normalize }) => {
            let rows = compare(&read_records(&a)?, &read_records(&b)?, normalize)?;
            println!("{:>8} {:>16} {:>16} {:>9}", "mini", "throughput_a", "throughput_b", "speedup");
            for r in rows {
                println!("{:>8} {:>16.1} {:>16.1} {:>9.3}", r.mini, r.throughput_a_sps, r.throughput_b_sps, r.speedup);
            }
            Ok(())
        }
        Command::Feasibility(FeasibilityCommand::Assess {
            model,
            link,
            workload,
            local_profile,
            remote_profile,
            minis,
            out,
        }) => {
            let spec = load_model(&model)?;
            let remote = AccelProfile::load(&remote_profile)?;
            let local = local_profile.as_deref().map(AccelProfile::load).transpose()?;
            let report = assess(&AssessInputs {
                model: &spec.name,
                accounting: spec.account(),
                link: link.parse::<LinkSpec>()?,
                workload: workload.parse::<WorkloadSpec>()?,
                remote: &remote,
                local: local.as_ref(),
                minis: minis.unwrap_or_default(),
            })?;
            let json = serde_json::to_string_pretty(&report)?;
            match out {
                Some(p) => {
                    std::fs::write(&p, &json)?;
                    println!("verdict: {} (wrote {})", report.verdict, p.display());
                }
                None => println!("{json}"),
            }
            Ok(())
        }
        Command::Profile(ProfileCommand::Fit { name, anchors, out }) => {
            let anchors = anchors.iter().map(|s| parse_anchor(s)).collect::<Result<Vec<_>>>()?;
            let mut fit = calibrate_profile(&anchors)?;
            fit.profile.name = name;
            for w in &fit.warnings {
                eprintln!("warning: {w}");
            }
            eprintln!("residuals (ms): {:?}", fit.residuals_ms);
            let text = fit.profile.render();
            match out {
                Some(p) => std::fs::write(p, text)?,
                None => print!("{text}"),
            }
            Ok(())
        }
        Command::Profile(ProfileCommand::Show { name }) => {
            print!("{}", AccelProfile::load(&name)?.render());
            Ok(())
        }
        Command::Model(ModelCommand::Info { model }) => {
            let spec = load_model(&model)?;
            let acct = spec.account();
            println!("model:            {}", spec.name);
            println!("layers:           {}", spec.layers.len());
            println!("parameters:       {}", acct.params);
            println!("flops/sample:     {}", acct.flops_per_sample);
            println!("input bytes:      {}", acct.input_bytes_per_sample);
            println!("output bytes:     {}", acct.output_bytes_per_sample);
            println!("precision:        {}", spec.precision);
            Ok(())
        }
        Command::Model(ModelCommand::Export { model, out }) => {
            let spec = load_model(&model)?;
            spec.weights.save(&out)?;
            println!("wrote {} tensors to {}", spec.weights.len(), out.display());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
