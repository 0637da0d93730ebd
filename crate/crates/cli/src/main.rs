//! `sbanm` command line: simulate, fit, select, eval, build-net.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context as _;
use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;

use sbanm::eval::{ari, exact_recovery, icl, nmi, select_blocks, Partition};
use sbanm::io::{
    format_f64, memberships_to_string, read_memberships, read_network, read_responses, write_atomic, write_network,
    ParamFile,
};
use sbanm::model::ModelParams;
use sbanm::rng::stream;
use sbanm::simulate::{experiment2_spec, gen_network, simulate_filtered, BlockCount, SimSpec};
use sbanm::transform::{build_similarity_network, normalize_logit};
use sbanm::{fit, Exec, FitConfig, FitResult, MultilayerNetwork, SviConfig};

#[derive(Parser, Debug)]
#[command(name = "sbanm", version, about = "Stochastic block model with ambient noise for weighted multilayer networks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate synthetic networks with known memberships.
    Simulate(SimulateArgs),
    /// Fit the model with a fixed block count.
    Fit(FitArgs),
    /// Fit a range of block counts and pick the best by ICL.
    Select(SelectArgs),
    /// Compare a fitted membership file against the truth.
    Eval(EvalArgs),
    /// Build a multilayer network from raw data.
    BuildNet(BuildNetArgs),
}

#[derive(Args, Debug)]
struct SimulateArgs {
    #[arg(long, default_value_t = 3)]
    layers: usize,
    #[arg(long)]
    nodes: Option<usize>,
    /// Fixed block count (noise block included); default draws Q from {3, 4, 5}.
    #[arg(long, conflicts_with = "experiment2")]
    blocks: Option<usize>,
    /// The fixed four-block trivariate design with 300 nodes.
    #[arg(long)]
    experiment2: bool,
    #[arg(long, default_value_t = 10)]
    candidates: usize,
    #[arg(long, default_value_t = 0.10)]
    keep_frac: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct FitFlags {
    #[arg(long)]
    input: PathBuf,
    #[arg(long, default_value_t = 200)]
    max_iter: usize,
    #[arg(long, default_value_t = 1e-8)]
    tol_elbo: f64,
    #[arg(long, default_value_t = 1e-6)]
    tol_tau: f64,
    #[arg(long, default_value_t = 0.7)]
    damping: f64,
    /// Stochastic E-steps on growing subsamples before the full-batch phase.
    #[arg(long)]
    svi: bool,
    #[arg(long, default_value_t = 150)]
    svi_a: usize,
    #[arg(long, default_value_t = 2.0)]
    svi_kappa_m: f64,
    #[arg(long, default_value_t = 0.7)]
    svi_kappa_w: f64,
    /// Worker threads; results do not depend on it.
    #[arg(long)]
    threads: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct FitArgs {
    #[arg(long)]
    blocks: usize,
    #[command(flatten)]
    flags: FitFlags,
}

#[derive(Args, Debug)]
struct SelectArgs {
    #[arg(long, default_value_t = 2)]
    qmin: usize,
    #[arg(long, default_value_t = 7)]
    qmax: usize,
    #[command(flatten)]
    flags: FitFlags,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    truth: PathBuf,
    #[arg(long)]
    pred: PathBuf,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Transform {
    /// Response CSV → per-layer agreement, Fisher-transformed.
    FisherAgreement,
    /// Count network → strength-normalised logits.
    LogitStrength,
}

#[derive(Args, Debug)]
struct BuildNetArgs {
    /// Response CSV for fisher-agreement; a count network file for logit-strength.
    #[arg(long)]
    responses: PathBuf,
    #[arg(long, value_enum)]
    transform: Transform,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug)]
struct Usage(String);

impl fmt::Display for Usage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    Usage(msg.into()).into()
}

fn exit_code(err: &anyhow::Error) -> u8 {
    if err.downcast_ref::<Usage>().is_some() {
        return 1;
    }
    match err.chain().find_map(|e| e.downcast_ref::<sbanm::Error>()) {
        Some(e) if e.is_numerical() => 3,
        _ => 2,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .format_target(false)
        .init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", describe(&e));
            ExitCode::from(exit_code(&e))
        }
    }
}

/// The error chain joined by ": ", skipping causes already quoted by their parent.
fn describe(err: &anyhow::Error) -> String {
    let mut out = err.to_string();
    let mut last = out.clone();
    for cause in err.chain().skip(1) {
        let msg = cause.to_string();
        if !last.contains(&msg) {
            out.push_str(": ");
            out.push_str(&msg);
        }
        last = msg;
    }
    out
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Simulate(a) => simulate(a),
        Command::Fit(a) => fit_cmd(a),
        Command::Select(a) => select(a),
        Command::Eval(a) => eval(a),
        Command::BuildNet(a) => build_net(a),
    }
}

fn create_dir(dir: &Path) -> anyhow::Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    Ok(())
}

fn write_text(path: &Path, text: &str) -> anyhow::Result<()> {
    write_atomic(path, text.as_bytes())?;
    Ok(())
}

fn truth_csv(labels: &[usize]) -> String {
    memberships_to_string(labels, &vec![Vec::new(); labels.len()])
}

fn write_simulated(dir: &Path, net: &MultilayerNetwork, truth: &[usize], params: &ModelParams, seed: u64) -> anyhow::Result<()> {
    create_dir(dir)?;
    write_network(net, dir.join("net.tsv"))?;
    write_text(&dir.join("truth.csv"), &truth_csv(truth))?;
    write_text(&dir.join("params.json"), &ParamFile::new(params, None, None, seed).to_json())?;
    Ok(())
}

/// Per-layer values spread evenly over `[lo, hi]`; the midpoint for one layer.
fn spread(k: usize, lo: f64, hi: f64) -> Vec<f64> {
    if k == 1 {
        return vec![0.5 * (lo + hi)];
    }
    (0..k).map(|h| lo + (hi - lo) * h as f64 / (k - 1) as f64).collect()
}

fn sim_spec(a: &SimulateArgs) -> anyhow::Result<SimSpec> {
    if a.layers == 0 {
        return Err(usage("--layers must be at least 1"));
    }
    let mut spec = match a.layers {
        2 => SimSpec::bivariate(a.seed),
        3 => SimSpec::trivariate(a.seed),
        k => SimSpec {
            layers: k,
            prior_means: spread(k, -2.0, 2.0),
            noise_mu: spread(k, -1.0, 1.0),
            noise_var: vec![1.0; k],
            ..SimSpec::trivariate(a.seed)
        },
    };
    if let Some(n) = a.nodes {
        spec.n = n;
    }
    if let Some(q) = a.blocks {
        spec.blocks = BlockCount::Fixed(q);
    }
    spec.keep_frac = a.keep_frac;
    spec.validate().map_err(|e| usage(e.to_string()))?;
    Ok(spec)
}

fn simulate(a: SimulateArgs) -> anyhow::Result<()> {
    if a.experiment2 {
        let (params, sizes) = experiment2_spec();
        let n: usize = sizes.iter().sum();
        if a.layers != params.num_layers() || a.nodes.is_some_and(|v| v != n) {
            return Err(usage(format!("--experiment2 fixes --layers {} and --nodes {n}", params.num_layers())));
        }
        eprintln!("config\tsimulate experiment2 n={n} K={} Q={}", params.num_layers(), params.num_blocks());
        eprintln!("seed\t{}", a.seed);
        let (net, truth) = gen_network(&params, &sizes, &mut stream(a.seed, "experiment2", 0))?;
        write_simulated(&a.out, &net, &truth, &params, a.seed)?;
        info!("wrote {}", a.out.display());
        return Ok(());
    }
    let spec = sim_spec(&a)?;
    eprintln!(
        "config\tsimulate n={} K={} blocks={:?} candidates={} keep_frac={} prior_means={:?} noise_mu={:?}",
        spec.n, spec.layers, spec.blocks, a.candidates, spec.keep_frac, spec.prior_means, spec.noise_mu
    );
    eprintln!("seed\t{}", a.seed);
    if a.candidates == 0 || (a.candidates as f64) * spec.keep_frac < 1.0 - 1e-12 {
        return Err(usage("--candidates times --keep-frac must be at least 1"));
    }
    let sims = simulate_filtered(&spec, a.candidates, Exec::available())?;
    for s in &sims {
        let dir = a.out.join(format!("candidate_{:04}", s.candidate.index));
        write_simulated(&dir, &s.network, &s.truth, &s.candidate.params, a.seed)?;
        info!(
            "candidate {} Q={} min Bhattacharyya {:.4} -> {}",
            s.candidate.index,
            s.candidate.params.num_blocks(),
            s.candidate.min_distance,
            dir.display()
        );
    }
    Ok(())
}

fn configure_threads(threads: Option<usize>) -> anyhow::Result<()> {
    if let Some(t) = threads {
        if t == 0 {
            return Err(usage("--threads must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global()
            .context("configuring the thread pool")?;
    }
    Ok(())
}

fn fit_config(blocks: usize, f: &FitFlags) -> anyhow::Result<FitConfig> {
    let cfg = FitConfig {
        max_outer: f.max_iter,
        tol_elbo: f.tol_elbo,
        tol_tau: f.tol_tau,
        damping: f.damping,
        svi: f.svi.then_some(SviConfig {
            a: f.svi_a,
            kappa_m: f.svi_kappa_m,
            kappa_w: f.svi_kappa_w,
            seed: f.seed,
        }),
        ..FitConfig::new(blocks).with_seed(f.seed)
    };
    cfg.validate().map_err(|e| usage(e.to_string()))?;
    Ok(cfg)
}

fn print_config(what: &str, cfg: &FitConfig, f: &FitFlags) {
    eprintln!(
        "config\t{what} input={} blocks={} max_iter={} tol_elbo={:e} tol_tau={:e} damping={} svi={:?} threads={} exec={:?}",
        f.input.display(),
        cfg.blocks,
        cfg.max_outer,
        cfg.tol_elbo,
        cfg.tol_tau,
        cfg.damping,
        cfg.svi,
        rayon::current_num_threads(),
        cfg.exec
    );
    eprintln!("seed\t{}", cfg.seed);
}

fn write_fit(dir: &Path, result: &FitResult, score: f64, seed: u64) -> anyhow::Result<()> {
    create_dir(dir)?;
    let file = ParamFile::new(&result.params, Some(result.elbo), Some(score), seed);
    write_text(&dir.join("params.json"), &file.to_json())?;
    let q = result.state.num_blocks();
    let tau: Vec<Vec<f64>> = result.state.tau.chunks(q).map(<[f64]>::to_vec).collect();
    write_text(&dir.join("memberships.csv"), &memberships_to_string(&result.hard_membership, &tau))?;
    let mut trace = String::from("iteration\telbo\n");
    for (t, v) in result.elbo_trace.iter().enumerate() {
        trace.push_str(&format!("{t}\t{}\n", format_f64(*v)));
    }
    write_text(&dir.join("trace.tsv"), &trace)?;
    Ok(())
}

fn fit_cmd(a: FitArgs) -> anyhow::Result<()> {
    configure_threads(a.flags.threads)?;
    let cfg = fit_config(a.blocks, &a.flags)?;
    print_config("fit", &cfg, &a.flags);
    let net = read_network(&a.flags.input)?;
    let result = fit(&net, &cfg)?;
    let score = icl(&net, &result)?;
    info!(
        "done elbo {:.10e} icl {score:.10e} iterations {} converged {} moves {}",
        result.elbo, result.iterations, result.converged, result.moves
    );
    let out = a.flags.out.clone().unwrap_or_else(|| PathBuf::from("."));
    write_fit(&out, &result, score, cfg.seed)
}

fn select(a: SelectArgs) -> anyhow::Result<()> {
    configure_threads(a.flags.threads)?;
    if a.qmin < 1 || a.qmax < a.qmin {
        return Err(usage("need 1 <= --qmin <= --qmax"));
    }
    let cfg = fit_config(a.qmin, &a.flags)?;
    print_config(&format!("select qmin={} qmax={}", a.qmin, a.qmax), &cfg, &a.flags);
    let net = read_network(&a.flags.input)?;
    let (rows, best) = select_blocks(&net, a.qmin, a.qmax, &cfg)?;
    let mut table = String::from("Q\ticl\telbo\n");
    for r in &rows {
        table.push_str(&format!("{}\t{}\t{}\n", r.blocks, format_f64(r.icl), format_f64(r.fit.elbo)));
    }
    table.push_str(&format!("argmax\t{}\n", rows[best].blocks));
    print!("{table}");
    if let Some(out) = &a.flags.out {
        create_dir(out)?;
        write_text(&out.join("selection.tsv"), &table)?;
        write_fit(out, &rows[best].fit, rows[best].icl, cfg.seed)?;
    }
    Ok(())
}

fn eval(a: EvalArgs) -> anyhow::Result<()> {
    let truth = Partition::new(read_memberships(&a.truth)?.labels)?;
    let pred = Partition::new(read_memberships(&a.pred)?.labels)?;
    if truth.len() != pred.len() {
        return Err(sbanm::Error::InvalidInput(format!(
            "truth has {} nodes, prediction has {}",
            truth.len(),
            pred.len()
        ))
        .into());
    }
    println!("ari\tnmi\texact");
    println!(
        "{:.6}\t{:.6}\t{}",
        ari(&truth, &pred)?,
        nmi(&truth, &pred)?,
        exact_recovery(&truth, &pred)?
    );
    Ok(())
}

fn build_net(a: BuildNetArgs) -> anyhow::Result<()> {
    eprintln!("config\tbuild-net input={} transform={:?}", a.responses.display(), a.transform);
    let net = match a.transform {
        Transform::FisherAgreement => build_similarity_network(&read_responses(&a.responses)?, Exec::available())?,
        Transform::LogitStrength => normalize_logit(&read_network(&a.responses)?)?,
    };
    let target = if a.out.extension().is_some() {
        a.out.clone()
    } else {
        create_dir(&a.out)?;
        a.out.join("net.tsv")
    };
    if let Some(parent) = target.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    write_network(&net, &target)?;
    info!("wrote {} (n={}, K={})", target.display(), net.num_nodes(), net.num_layers());
    Ok(())
}
