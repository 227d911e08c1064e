use std::io::Write;
use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use graphclub::bench::{self, Generator, PipelineKind, SweepSpec};
use graphclub::clubbing::{club, write_cost_csv, PartitionSet};
use graphclub::clustering::{cluster, ClusteringResult};
use graphclub::config::Config;
use graphclub::data::{
    gen_dataset_one, gen_dataset_two, gen_halfspace, load_csv, load_libsvm_format, save_csv, save_libsvm_format,
    split, Dataset, SplitSpec, DATASET_ONE_MARGIN,
};
use graphclub::distnet::{self, connect_phase, master_serve, ServeOptions};
use graphclub::error::{Error, Result};
use graphclub::knitting::{knit, PatternGraph};
use graphclub::pipeline::{gather, train_full, train_gch_serial, train_gsh, train_partitions, EnsembleModel};
use graphclub::predict::{build_router, ensemble_predict};
use graphclub::shedding::{imbalance_sd, relevant_set, restrict};
use graphclub::svm::{accuracy, Classifier};

#[derive(Parser, Debug)]
#[command(name = "graphclub", version, about = "Graph-based training-set reduction and partitioning for SVMs")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args, Debug)]
struct Global {
    /// `key = value` config file (also GRAPHCLUB_CONFIG).
    #[arg(long, global = true, env = "GRAPHCLUB_CONFIG")]
    config: Option<PathBuf>,
    /// Override a config key; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    set: Vec<String>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    kernel: Option<String>,
    #[arg(long, global = true)]
    n_clusters: Option<usize>,
    /// `exact` or `approximate` neighbor search.
    #[arg(long, global = true)]
    mode: Option<String>,
    #[arg(long, global = true)]
    endpoint: Option<String>,
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[arg(long, global = true)]
    protocol: Option<u8>,
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Generate a synthetic dataset.
    GenData(GenData),
    /// Cluster a dataset into n_clusters groups.
    Cluster(ClusterCmd),
    /// Knit the pattern graph over cluster centers.
    Knit(KnitCmd),
    /// Keep the clusters touching a significant edge.
    Shed(ShedCmd),
    /// Coarsen the shed graph into partitions.
    Club(ClubCmd),
    /// Train a full, GSH or GCH model.
    Train(TrainCmd),
    /// Distribute partitions to workers.
    Serve(ServeCmd),
    /// Train partitions handed out by a master.
    Work(WorkCmd),
    /// Evaluate a model or ensemble on a test set.
    Predict(PredictCmd),
    /// Timing sweeps and protocol comparison.
    Bench(BenchCmd),
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum DatasetKind {
    One,
    Two,
    Halfspace,
}

#[derive(Clone, Copy, Debug, ValueEnum, PartialEq)]
enum Format {
    Csv,
    Libsvm,
}

#[derive(Args, Debug)]
struct GenData {
    #[arg(long, value_enum, default_value = "one")]
    dataset: DatasetKind,
    #[arg(long)]
    n: usize,
    #[arg(long, default_value_t = 2)]
    d: usize,
    /// Label-noise band width (Dataset I and halfspace).
    #[arg(long, default_value_t = DATASET_ONE_MARGIN)]
    margin: f64,
    /// Sphere radius (Dataset II).
    #[arg(long, default_value_t = 0.3)]
    radius: f64,
    /// Hyperplane position (halfspace).
    #[arg(long, default_value_t = 0.5)]
    threshold: f64,
    #[arg(long)]
    out: PathBuf,
    /// Also split by train_fraction, writing the held-out part here.
    #[arg(long)]
    test_out: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "csv")]
    format: Format,
}

#[derive(Args, Debug)]
struct ClusterCmd {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct KnitCmd {
    #[arg(long)]
    clusters: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct ShedCmd {
    #[arg(long)]
    graph: PathBuf,
    #[arg(long)]
    clusters: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Reduced training set.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct ClubCmd {
    #[arg(long)]
    graph: PathBuf,
    #[arg(long)]
    clusters: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Graph cost per coarsening iteration, as CSV.
    #[arg(long)]
    cost_out: Option<PathBuf>,
}

#[derive(Args, Debug)]
#[group(id = "pipeline", required = true, multiple = false)]
struct Which {
    #[arg(long, group = "pipeline")]
    full: bool,
    #[arg(long, group = "pipeline")]
    gsh: bool,
    #[arg(long, group = "pipeline")]
    gch: bool,
}

#[derive(Args, Debug)]
struct TrainCmd {
    #[command(flatten)]
    which: Which,
    #[arg(long)]
    data: PathBuf,
    /// Test set; without it a train_fraction split of --data is used.
    #[arg(long)]
    test: Option<PathBuf>,
    /// Model file (full, gsh) or output directory (gch).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Precomputed partitions for --gch (needs --clusters).
    #[arg(long, requires = "clusters")]
    parts: Option<PathBuf>,
    #[arg(long)]
    clusters: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct ServeCmd {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    parts: PathBuf,
    /// Serve log as JSON.
    #[arg(long)]
    log: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct WorkCmd {
    /// Directory for partition_<id>.model files.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
#[group(id = "model_src", required = true, multiple = false)]
struct ModelSrc {
    /// A single model file.
    #[arg(long, group = "model_src")]
    model: Option<PathBuf>,
    /// Directory of partition models.
    #[arg(long, group = "model_src")]
    ensemble: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct PredictCmd {
    #[command(flatten)]
    src: ModelSrc,
    #[arg(long)]
    test: PathBuf,
    /// Defaults to <ensemble>/parts.jsonl.
    #[arg(long)]
    parts: Option<PathBuf>,
    /// Defaults to <ensemble>/clusters.jsonl.
    #[arg(long)]
    clusters: Option<PathBuf>,
    /// One predicted label per line.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct BenchCmd {
    /// Compare the two wire protocols instead of running a sweep.
    #[arg(long)]
    protocol_compare: bool,
    #[arg(long, value_delimiter = ',', default_values_t = vec![1000usize, 10_000])]
    sizes: Vec<usize>,
    #[arg(long, default_value_t = 2)]
    d: usize,
    #[arg(long, value_delimiter = ',', default_values_t = vec!["full".to_string(), "gsh".into(), "gch_serial".into()])]
    pipelines: Vec<String>,
    #[arg(long, default_value_t = 3)]
    reps: usize,
    #[arg(long, default_value_t = 3.0)]
    test_ratio: f64,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn overrides(g: &Global) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for kv in &g.set {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| Error::InvalidInput(format!("--set expects KEY=VALUE, got `{kv}`")))?;
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    let mut push = |k: &str, v: Option<String>| {
        if let Some(v) = v {
            out.push((k.to_string(), v));
        }
    };
    push("seed", g.seed.map(|v| v.to_string()));
    push("kernel", g.kernel.clone());
    push("n_clusters", g.n_clusters.map(|v| v.to_string()));
    push("mode", g.mode.clone());
    push("endpoint", g.endpoint.clone());
    push("workers", g.workers.map(|v| v.to_string()));
    push("protocol", g.protocol.map(|v| v.to_string()));
    Ok(out)
}

fn is_libsvm(path: &Path) -> bool {
    matches!(path.extension().and_then(|e| e.to_str()), Some("libsvm" | "svm"))
}

fn first_row_arity(path: &Path) -> Result<usize> {
    let text = std::fs::read_to_string(path)?;
    let line = text.lines().find(|l| !l.trim().is_empty()).unwrap_or("");
    Ok(line.split(',').count())
}

fn load(path: &Path, cfg: &Config) -> Result<Dataset> {
    if is_libsvm(path) {
        load_libsvm_format(path)
    } else {
        load_csv(path, cfg.label_column(first_row_arity(path)?)?)
    }
}

fn save(ds: &Dataset, path: &Path, cfg: &Config) -> Result<()> {
    if is_libsvm(path) {
        save_libsvm_format(ds, path)?;
    } else {
        save_csv(ds, path)?;
    }
    cfg.write_sidecar(path)
}

fn split_spec(cfg: &Config) -> Result<SplitSpec> {
    Ok(SplitSpec {
        train_fraction: cfg.real("train_fraction")?,
        seed: cfg.get("seed")?,
    })
}

/// Training set and optional test set for `train`.
fn train_test(cmd: &TrainCmd, cfg: &Config) -> Result<(Dataset, Dataset)> {
    let data = load(&cmd.data, cfg)?;
    match &cmd.test {
        Some(t) => Ok((data, load(t, cfg)?)),
        None => split(&data, split_spec(cfg)?),
    }
}

/// Like `println!`, but a closed stdout (e.g. piped into `head`) is not fatal.
macro_rules! out {
    ($($t:tt)*) => {{
        let _ = writeln!(std::io::stdout(), $($t)*);
    }};
}

fn print_json(v: serde_json::Value) {
    out!("{v}");
}

fn gen_data(cmd: &GenData, cfg: &Config) -> Result<()> {
    let seed: u64 = cfg.get("seed")?;
    let ds = match cmd.dataset {
        DatasetKind::One => gen_dataset_one(cmd.n, cmd.d, cmd.margin, seed)?,
        DatasetKind::Two => gen_dataset_two(cmd.n, cmd.d, cmd.radius, seed)?,
        DatasetKind::Halfspace => gen_halfspace(cmd.n, cmd.d, cmd.threshold, cmd.margin, seed)?,
    };
    let ext_ok = (cmd.format == Format::Libsvm) == is_libsvm(&cmd.out);
    if !ext_ok {
        return Err(Error::InvalidInput(format!(
            "--format {:?} does not match the extension of {}",
            cmd.format,
            cmd.out.display()
        )));
    }
    match &cmd.test_out {
        Some(test_path) => {
            let (train, test) = split(&ds, split_spec(cfg)?)?;
            save(&train, &cmd.out, cfg)?;
            save(&test, test_path, cfg)?;
            print_json(json!({ "train": train.n(), "test": test.n(), "d": ds.d() }));
        }
        None => {
            save(&ds, &cmd.out, cfg)?;
            print_json(json!({ "n": ds.n(), "d": ds.d(), "class_counts": ds.class_counts() }));
        }
    }
    Ok(())
}

fn cluster_cmd(cmd: &ClusterCmd, cfg: &Config) -> Result<()> {
    let ds = load(&cmd.data, cfg)?;
    let p = cfg.pipeline_params()?;
    let t = Instant::now();
    let c = cluster(&ds, p.n_clusters.min(ds.n()), p.cluster_iters, p.seed)?;
    c.write_jsonl(&cmd.out, Some(&cfg.to_json()))?;
    print_json(json!({ "clusters": c.clusters.len(), "points": c.n_points(), "ms": ms(t) }));
    Ok(())
}

fn knit_cmd(cmd: &KnitCmd, cfg: &Config) -> Result<()> {
    let c = ClusteringResult::read_jsonl(&cmd.clusters)?;
    let p = cfg.pipeline_params()?;
    let t = Instant::now();
    let g = knit(&c.clusters, &p.heuristic, p.mode)?;
    g.write_jsonl(&cmd.out, Some(&cfg.to_json()))?;
    print_json(json!({ "nodes": g.len(), "edges": g.edges().len(), "ms": ms(t) }));
    Ok(())
}

fn shed_cmd(cmd: &ShedCmd, cfg: &Config) -> Result<()> {
    let g = PatternGraph::read_jsonl(&cmd.graph)?;
    let c = ClusteringResult::read_jsonl(&cmd.clusters)?;
    let ds = load(&cmd.data, cfg)?;
    let cut = cfg.heuristic_params()?.gs_edge_cut;
    let rel = relevant_set(&g, cut, &c, &ds);
    if rel.point_ids.is_empty() {
        return Err(Error::EmptyReducedSet(format!(
            "no edge reaches gs_edge_cut = {cut}; lower gs_edge_cut"
        )));
    }
    let reduced = Dataset::new(gather(&ds, &rel.point_ids))?;
    save(&reduced, &cmd.out, cfg)?;
    print_json(json!({
        "n_original": ds.n(),
        "n_reduced": reduced.n(),
        "relevant_clusters": rel.cluster_ids.len(),
        "sd_original": imbalance_sd(ds.class_counts()),
        "sd_reduced": imbalance_sd(rel.per_class_counts),
    }));
    Ok(())
}

fn club_cmd(cmd: &ClubCmd, cfg: &Config) -> Result<()> {
    let g = PatternGraph::read_jsonl(&cmd.graph)?;
    let c = ClusteringResult::read_jsonl(&cmd.clusters)?;
    let params = cfg.heuristic_params()?;
    let keep = graphclub::shedding::shed(&g, params.gs_edge_cut);
    if keep.is_empty() {
        return Err(Error::EmptyReducedSet(format!(
            "no edge reaches gs_edge_cut = {}; lower gs_edge_cut",
            params.gs_edge_cut
        )));
    }
    let out = club(&restrict(&g, &keep), &c, &params)?;
    out.partitions.write_jsonl(&cmd.out, Some(&cfg.to_json()))?;
    if let Some(path) = &cmd.cost_out {
        write_cost_csv(&out.cost_history, path)?;
        cfg.write_sidecar(path)?;
    }
    print_json(json!({
        "partitions": out.partitions.len(),
        "sizes": out.partitions.partitions.iter().map(|p| p.size()).collect::<Vec<_>>(),
        "iterations": out.iterations_run,
        "stopped_on_kink": out.stopped_on_kink,
        "cost_history": out.cost_history,
    }));
    Ok(())
}

fn ms(t: Instant) -> f64 {
    t.elapsed().as_secs_f64() * 1e3
}

fn save_model(model: &Classifier, out: &Option<PathBuf>, cfg: &Config) -> Result<()> {
    if let Some(path) = out {
        model.save(path)?;
        cfg.write_sidecar(path)?;
    }
    Ok(())
}

fn save_ensemble(dir: &Path, ens: &EnsembleModel, parts: &PartitionSet, c: &ClusteringResult, cfg: &Config) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    for (id, m) in ens.partition_ids.iter().zip(&ens.models) {
        m.save(distnet::worker::model_path(dir, *id as u32))?;
    }
    parts.write_jsonl(dir.join("parts.jsonl"), Some(&cfg.to_json()))?;
    c.write_jsonl(dir.join("clusters.jsonl"), Some(&cfg.to_json()))?;
    std::fs::write(dir.join("config"), cfg.to_file_string())?;
    Ok(())
}

fn train_cmd(cmd: &TrainCmd, cfg: &Config) -> Result<()> {
    let (train, test) = train_test(cmd, cfg)?;
    let spec = cfg.classifier_spec()?;
    let params = cfg.pipeline_params()?;
    let t = Instant::now();
    if cmd.which.full || cmd.which.gsh {
        let (model, reduced) = if cmd.which.full {
            (train_full(&train, &spec)?, train.n())
        } else {
            let (m, r) = train_gsh(&train, &params, &spec)?;
            (m, r.n_reduced)
        };
        let train_ms = ms(t);
        save_model(&model, &cmd.out, cfg)?;
        let acc = accuracy(&model, test.points());
        out!("accuracy: {acc:.6}");
        print_json(json!({
            "pipeline": if cmd.which.full { "full" } else { "gsh" },
            "n_train": train.n(),
            "n_reduced": reduced,
            "n_test": test.n(),
            "accuracy": acc,
            "train_ms": train_ms,
            "n_support": model.n_support(),
        }));
        return Ok(());
    }

    let (ensemble, router, parts, clustering) = match (&cmd.parts, &cmd.clusters) {
        (Some(p), Some(c)) => {
            let parts = PartitionSet::read_jsonl(p)?;
            let clustering = ClusteringResult::read_jsonl(c)?;
            let ens = train_partitions(&train, &parts, &spec)?;
            let router = build_router(&parts, &clustering, params.mode)?;
            (ens, router, parts, clustering)
        }
        _ => {
            let o = train_gch_serial(&train, &params, &spec)?;
            (o.ensemble, o.router, o.partitions, o.clustering)
        }
    };
    let train_ms = ms(t);
    if let Some(dir) = &cmd.out {
        save_ensemble(dir, &ensemble, &parts, &clustering, cfg)?;
    }
    let (_, report) = ensemble_predict(&ensemble, &router, &test)?;
    out!("accuracy: {:.6}", report.weighted_accuracy);
    print_json(json!({
        "pipeline": "gch",
        "n_train": train.n(),
        "n_test": test.n(),
        "partitions": parts.len(),
        "sizes": parts.partitions.iter().map(|p| p.size()).collect::<Vec<_>>(),
        "accuracy": report.weighted_accuracy,
        "routing_fraction": report.routing_fraction,
        "train_ms": train_ms,
    }));
    Ok(())
}

fn serve_cmd(cmd: &ServeCmd, cfg: &Config) -> Result<()> {
    let ds = load(&cmd.data, cfg)?;
    let parts = PartitionSet::read_jsonl(&cmd.parts)?;
    let workers: usize = cfg.get("workers")?;
    let timeout = Duration::from_millis(cfg.get("timeout_ms")?);
    let opts = ServeOptions {
        protocol: cfg.get("protocol")?,
        idle_timeout: timeout,
    };
    let listener = TcpListener::bind(cfg.raw("endpoint"))?;
    out!("listening on {}", listener.local_addr()?);
    std::io::stdout().flush()?;
    let session = connect_phase(&listener, workers, timeout)?;
    let log = master_serve(&ds, &parts, session, opts)?;
    if let Some(path) = &cmd.log {
        let body = json!({ "config": cfg.to_json(), "log": log });
        std::fs::write(path, serde_json::to_string_pretty(&body)?)?;
    }
    print_json(json!({
        "partitions": parts.len(),
        "sends": log.sends.len(),
        "acks": log.acks.len(),
        "resent": log.resent,
        "serve_ms": log.serve_ms,
    }));
    Ok(())
}

fn work_cmd(cmd: &WorkCmd, cfg: &Config) -> Result<()> {
    let spec = cfg.classifier_spec()?;
    let report = distnet::worker_loop(cfg.raw("endpoint"), &spec, &cmd.out)?;
    cfg.write_sidecar(&cmd.out)?;
    print_json(serde_json::to_value(&report)?);
    Ok(())
}

fn predict_cmd(cmd: &PredictCmd, cfg: &Config) -> Result<()> {
    let test = load(&cmd.test, cfg)?;
    let (labels, summary) = if let Some(path) = &cmd.src.model {
        let model = Classifier::load(path)?;
        let t = Instant::now();
        let xs: Vec<Vec<f64>> = test.points().iter().map(|p| p.features.clone()).collect();
        let labels = model.predict(&xs);
        let correct = labels.iter().zip(test.points()).filter(|(l, p)| **l == p.target).count();
        let acc = correct as f64 / test.n() as f64;
        (labels, json!({ "accuracy": acc, "n_test": test.n(), "predict_ms": ms(t) }))
    } else {
        let dir = cmd.src.ensemble.as_ref().expect("clap enforces one model source");
        let parts = PartitionSet::read_jsonl(cmd.parts.clone().unwrap_or_else(|| dir.join("parts.jsonl")))?;
        let clustering = ClusteringResult::read_jsonl(cmd.clusters.clone().unwrap_or_else(|| dir.join("clusters.jsonl")))?;
        let ens = distnet::load_ensemble(dir, &parts)?;
        let router = build_router(&parts, &clustering, cfg.search_mode()?)?;
        let (labels, report) = ensemble_predict(&ens, &router, &test)?;
        let v = json!({
            "accuracy": report.weighted_accuracy,
            "n_test": test.n(),
            "routing_ms": report.routing_ms,
            "predict_ms": report.predict_ms,
            "routing_fraction": report.routing_fraction,
            "partitions": report.partitions,
        });
        (labels, v)
    };
    if let Some(out) = &cmd.out {
        let body: String = labels.iter().map(|l| format!("{l}\n")).collect();
        std::fs::write(out, body)?;
        cfg.write_sidecar(out)?;
    }
    out!("accuracy: {:.6}", summary["accuracy"].as_f64().unwrap_or(0.0));
    print_json(summary);
    Ok(())
}

fn pipeline_kind(s: &str) -> Result<PipelineKind> {
    match s {
        "full" => Ok(PipelineKind::Full),
        "gsh" => Ok(PipelineKind::Gsh),
        "gch" | "gch_serial" => Ok(PipelineKind::GchSerial),
        other => match other.strip_prefix("gch_dist_").and_then(|w| w.parse().ok()) {
            Some(w) => Ok(PipelineKind::GchDistributed(w)),
            None => Err(Error::InvalidInput(format!("unknown pipeline `{other}`"))),
        },
    }
}

fn bench_cmd(cmd: &BenchCmd, cfg: &Config) -> Result<()> {
    if cmd.protocol_compare {
        let workers: usize = cfg.get("workers")?;
        for &n in &cmd.sizes {
            let row = bench::run_protocol_bench(cmd.d, n, workers)?;
            print_json(serde_json::to_value(&row)?);
        }
        return Ok(());
    }
    let params = cfg.pipeline_params()?;
    let spec = SweepSpec {
        generator: Generator::One { margin: DATASET_ONE_MARGIN },
        d: cmd.d,
        sizes: cmd.sizes.clone(),
        n_clusters: vec![params.n_clusters],
        test_ratio: cmd.test_ratio,
        pipelines: cmd.pipelines.iter().map(|s| pipeline_kind(s)).collect::<Result<_>>()?,
        classifier: cfg.classifier_spec()?,
        seed: params.seed,
        params,
        repetitions: cmd.reps,
    };
    let rows = bench::run_sweep(&spec)?;
    if let Some(path) = &cmd.out {
        bench::write_csv(&rows, path)?;
        cfg.write_sidecar(path)?;
    }
    for r in &rows {
        print_json(serde_json::to_value(r)?);
    }
    Ok(())
}

fn run(cli: &Cli, cfg: &Config) -> Result<()> {
    log::debug!("effective config: {}", cfg.to_json());
    match &cli.cmd {
        Cmd::GenData(c) => gen_data(c, cfg),
        Cmd::Cluster(c) => cluster_cmd(c, cfg),
        Cmd::Knit(c) => knit_cmd(c, cfg),
        Cmd::Shed(c) => shed_cmd(c, cfg),
        Cmd::Club(c) => club_cmd(c, cfg),
        Cmd::Train(c) => train_cmd(c, cfg),
        Cmd::Serve(c) => serve_cmd(c, cfg),
        Cmd::Work(c) => work_cmd(c, cfg),
        Cmd::Predict(c) => predict_cmd(c, cfg),
        Cmd::Bench(c) => bench_cmd(c, cfg),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("GRAPHCLUB_LOG", "warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    // Bad keys or values in any config layer are usage errors.
    let cfg = match overrides(&cli.global).and_then(|o| Config::from_env(cli.global.config.as_deref(), &o)) {
        Ok(cfg) => cfg,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    };
    match run(&cli, &cfg) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
