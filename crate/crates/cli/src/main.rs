use std::collections::BTreeMap;
use std::fs;
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::info;

use rtbust_core::cluster::{cluster_accounts, ClusterParams};
use rtbust_core::detect::{align_truth, compute_metrics, label_from_clusters};
use rtbust_core::extract::{standardize, ExtractionInput, ExtractorConfig, ExtractorRegistry};
use rtbust_core::formats;
use rtbust_core::ingest::{
    build_user_series, filter_users, parse_events, rle_encode, AnalysisWindow, RetweetEvent, UserSeries,
    SECONDS_PER_DAY,
};
use rtbust_core::pipeline::{run_pipeline, PipelineConfig};
use rtbust_core::rtt::RttFigure;
use rtbust_core::synth::{gen_corpus, load_corpus_spec, write_events, write_truth, CorpusSpec};
use rtbust_core::vae::{self, VaeConfig, VaeModel, MODEL_MAGIC};
use rtbust_core::{Error, Result};

const SEED_ENV: &str = "RTBUST_SEED";

#[derive(Parser, Debug)]
#[command(name = "rtbust", version, about = "Retweeter-bot detection from retweet timing")]
struct Cli {
    /// Log progress to stderr (repeat for more detail).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Parse events, apply the activity filter and write compressed series.
    Ingest(IngestArgs),
    /// Generate a labeled synthetic corpus.
    Synth(SynthArgs),
    /// Compute per-account feature vectors.
    Features(FeaturesArgs),
    /// Train the sequence autoencoder and save it.
    TrainVae(TrainVaeArgs),
    /// Density-cluster feature vectors.
    Cluster(ClusterArgs),
    /// Label clustered accounts as bots.
    Detect(DetectArgs),
    /// Score labels against ground truth.
    Eval(EvalArgs),
    /// Render a retweet-time vs tweet-time scatterplot.
    Rtt(RttArgs),
    /// Run every stage end to end.
    Run(RunArgs),
}

#[derive(Args, Debug)]
struct FilterArgs {
    #[arg(long, default_value_t = 14)]
    window_days: i64,
    #[arg(long, default_value_t = 2.0)]
    min_rate: f64,
    #[arg(long, default_value_t = 50.0)]
    max_rate: f64,
    /// Abort on the first malformed line instead of skipping it.
    #[arg(long)]
    strict: bool,
}

#[derive(Args, Debug)]
struct IngestArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long, allow_hyphen_values = true)]
    window_start: i64,
    #[command(flatten)]
    filter: FilterArgs,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct SynthArgs {
    /// TOML corpus description; defaults to the built-in four-group corpus.
    #[arg(long)]
    spec: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    truth: PathBuf,
}

#[derive(Args, Debug)]
struct FeaturesArgs {
    #[arg(long, default_value = "vae")]
    extractor: String,
    #[arg(long)]
    series: PathBuf,
    /// Pretrained model file (VAE or linear projector).
    #[arg(long)]
    model: Option<PathBuf>,
    /// Where to save a model fitted during this call.
    #[arg(long)]
    model_out: Option<PathBuf>,
    /// Raw events, needed by the handcrafted extractor.
    #[arg(long)]
    events: Option<PathBuf>,
    #[arg(long, default_value_t = 8)]
    dim: usize,
    #[arg(long, default_value_t = 512)]
    seq_len: usize,
    #[arg(long, default_value_t = 1)]
    lag: usize,
    #[arg(long, default_value_t = 3600)]
    session_gap: i64,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct TrainVaeArgs {
    #[arg(long)]
    series: PathBuf,
    #[arg(long, default_value_t = 8)]
    dim: usize,
    #[arg(long, default_value_t = 512)]
    seq_len: usize,
    #[arg(long, default_value_t = 50)]
    epochs: usize,
    #[arg(long, default_value_t = 32)]
    hidden: usize,
    #[arg(long, default_value_t = 64)]
    batch_size: usize,
    #[arg(long, default_value_t = 1e-3)]
    learning_rate: f64,
    #[arg(long, default_value_t = 1.0)]
    kl_weight: f64,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    model_out: PathBuf,
    /// Optional per-epoch loss trace as CSV.
    #[arg(long)]
    loss_out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct ClusterArgs {
    #[arg(long)]
    latents: PathBuf,
    #[arg(long, default_value_t = 11)]
    min_cluster_size: usize,
    #[arg(long, default_value_t = 10)]
    min_samples: usize,
    /// Z-score every column before clustering.
    #[arg(long)]
    standardize: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct DetectArgs {
    #[arg(long)]
    clusters: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    pred: PathBuf,
    #[arg(long)]
    truth: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct RttArgs {
    #[arg(long)]
    events: PathBuf,
    #[arg(long, conflicts_with = "users", required_unless_present = "users")]
    user: Option<String>,
    /// File with one account id per line.
    #[arg(long)]
    users: Option<PathBuf>,
    /// Sub-window `t0:t1` shown in a zoom inset.
    #[arg(long)]
    zoom: Option<String>,
    /// Defaults to midnight UTC before the first plotted retweet.
    #[arg(long, allow_hyphen_values = true)]
    window_start: Option<i64>,
    #[arg(long, default_value_t = 14)]
    window_days: i64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct RunArgs {
    /// key=value file; flags given on the command line take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    events: Option<PathBuf>,
    #[arg(long)]
    truth: Option<PathBuf>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
    #[arg(long, allow_hyphen_values = true)]
    window_start: Option<i64>,
    #[arg(long)]
    window_days: Option<i64>,
    #[arg(long)]
    min_rate: Option<f64>,
    #[arg(long)]
    max_rate: Option<f64>,
    #[arg(long)]
    extractor: Option<String>,
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long)]
    seq_len: Option<usize>,
    #[arg(long)]
    min_cluster_size: Option<usize>,
    #[arg(long)]
    min_samples: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Extra `key=value` overrides, applied last.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(2) } else { ExitCode::SUCCESS };
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_usage() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}

fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::Ingest(a) => ingest(a),
        Command::Synth(a) => synth(a),
        Command::Features(a) => features(a),
        Command::TrainVae(a) => train_vae(a),
        Command::Cluster(a) => cluster(a),
        Command::Detect(a) => detect(a),
        Command::Eval(a) => eval(a),
        Command::Rtt(a) => rtt(a),
        Command::Run(a) => run(a),
    }
}

/// Flag value, else `RTBUST_SEED`, else 0.
fn resolve_seed(flag: Option<u64>) -> Result<u64> {
    if let Some(s) = flag {
        return Ok(s);
    }
    match std::env::var(SEED_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .map_err(|_| Error::Config(format!("{SEED_ENV}='{v}' is not an unsigned integer"))),
        Err(_) => Ok(0),
    }
}

fn require_file(path: &Path) -> Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(Error::io(
            path,
            std::io::Error::new(std::io::ErrorKind::NotFound, "no such file"),
        ))
    }
}

fn create(path: &Path) -> Result<BufWriter<fs::File>> {
    fs::File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::io(path, e))
}

fn read_events(path: &Path, strict: bool) -> Result<Vec<RetweetEvent>> {
    require_file(path)?;
    let f = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let report = parse_events(BufReader::new(f), strict)?;
    if !report.rejected.is_empty() {
        info!("{} lines skipped", report.rejected.len());
    }
    Ok(report.events)
}

fn ingest(a: IngestArgs) -> Result<()> {
    let window = AnalysisWindow::from_days(a.window_start, a.filter.window_days)?;
    let events = read_events(&a.input, a.filter.strict)?;
    let series = filter_users(build_user_series(&events, window), a.filter.min_rate, a.filter.max_rate)?;
    let seqs = series
        .iter()
        .map(|(k, s)| Ok((k.clone(), rle_encode(s)?)))
        .collect::<Result<BTreeMap<_, _>>>()?;
    formats::write_series(&a.out, window, &seqs)?;
    info!("{} events, {} accounts kept", events.len(), seqs.len());
    Ok(())
}

fn synth(a: SynthArgs) -> Result<()> {
    let spec = match &a.spec {
        Some(p) => {
            require_file(p)?;
            load_corpus_spec(p)?
        }
        None => CorpusSpec::acceptance_default(),
    };
    let seed = resolve_seed(a.seed)?;
    let corpus = gen_corpus(&spec, seed)?;
    let tmp = formats::partial_path(&a.out);
    write_events(create(&tmp)?, &corpus.events).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, &a.out).map_err(|e| Error::io(&a.out, e))?;
    let tmp = formats::partial_path(&a.truth);
    write_truth(create(&tmp)?, &corpus.truth).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, &a.truth).map_err(|e| Error::io(&a.truth, e))?;
    info!("{} events for {} accounts", corpus.events.len(), corpus.truth.len());
    Ok(())
}

fn features(a: FeaturesArgs) -> Result<()> {
    require_file(&a.series)?;
    let (window, seqs) = formats::read_series(&a.series)?;
    let mut cfg = ExtractorConfig {
        latent_dim: a.dim,
        seq_len: a.seq_len,
        lag: a.lag,
        session_gap_s: a.session_gap,
        ..Default::default()
    };
    cfg.vae.seed = resolve_seed(a.seed)?;
    if let Some(path) = &a.model {
        require_file(path)?;
        if formats::model_magic(path)? == MODEL_MAGIC {
            cfg.pretrained_vae = Some(VaeModel::load(path)?);
        } else {
            cfg.pretrained_projector = Some(formats::load_projector(path)?);
        }
    }
    let series = match &a.events {
        Some(p) => {
            let window = window.ok_or_else(|| {
                Error::Config(format!("{} has no #window line", a.series.display()))
            })?;
            let all = build_user_series(&read_events(p, false)?, window);
            Some(
                seqs.keys()
                    .map(|k| {
                        let s = all.get(k).cloned().unwrap_or(UserSeries {
                            user_id: k.clone(),
                            events: Vec::new(),
                            window,
                        });
                        (k.clone(), s)
                    })
                    .collect::<BTreeMap<_, _>>(),
            )
        }
        None => None,
    };
    let extractor = ExtractorRegistry::default().create(&a.extractor, &cfg)?;
    let input = ExtractionInput {
        sequences: &seqs,
        series: series.as_ref(),
    };
    let fs_ = extractor.extract(&input)?;
    formats::write_features(&a.out, &fs_.columns, &fs_.vectors)?;
    if let (Some(path), Some(model)) = (&a.model_out, &fs_.model) {
        match model {
            rtbust_core::extract::FittedModel::Vae { model, .. } => model.save(path)?,
            rtbust_core::extract::FittedModel::Linear(p) => formats::save_projector(path, p)?,
        }
    }
    Ok(())
}

fn train_vae(a: TrainVaeArgs) -> Result<()> {
    require_file(&a.series)?;
    let (_, seqs) = formats::read_series(&a.series)?;
    let config = VaeConfig {
        latent_dim: a.dim,
        hidden: a.hidden,
        max_seq_len: a.seq_len,
        epochs: a.epochs,
        batch_size: a.batch_size,
        learning_rate: a.learning_rate,
        kl_weight: a.kl_weight,
        seed: resolve_seed(a.seed)?,
    };
    let corpus: Vec<_> = seqs.into_values().collect();
    let out = vae::train(&config, &corpus)?;
    out.model.save(&a.model_out)?;
    if let Some(path) = &a.loss_out {
        let mut text = String::from("epoch,total,reconstruction,kl\n");
        for e in &out.trace {
            text.push_str(&format!("{},{:?},{:?},{:?}\n", e.epoch, e.total, e.reconstruction, e.kl));
        }
        formats::write_atomic(path, text.as_bytes())?;
    }
    Ok(())
}

fn cluster(a: ClusterArgs) -> Result<()> {
    require_file(&a.latents)?;
    let (_, vectors) = formats::read_features(&a.latents)?;
    let params = ClusterParams {
        min_cluster_size: a.min_cluster_size,
        min_samples: a.min_samples,
    };
    params.validate()?;
    let points = if a.standardize { standardize(&vectors) } else { vectors };
    let labeling = cluster_accounts(&points, &params)?;
    formats::write_clusters(&a.out, &labeling)
}

fn detect(a: DetectArgs) -> Result<()> {
    require_file(&a.clusters)?;
    let labeling = formats::read_clusters(&a.clusters)?;
    formats::write_labels(&a.out, &label_from_clusters(&labeling))
}

fn eval(a: EvalArgs) -> Result<()> {
    require_file(&a.pred)?;
    require_file(&a.truth)?;
    let pred = formats::read_labels(&a.pred)?.predictions();
    let truth = align_truth(&pred, &formats::read_truth(&a.truth)?)?;
    let report = compute_metrics(&pred, &truth)?;
    formats::write_report(&a.out, &report)
}

fn parse_zoom(s: &str) -> Result<(i64, i64)> {
    let bad = || Error::Config(format!("--zoom expects t0:t1 with t0 < t1, got '{s}'"));
    let (a, b) = s.split_once(':').ok_or_else(bad)?;
    let t0: i64 = a.trim().parse().map_err(|_| bad())?;
    let t1: i64 = b.trim().parse().map_err(|_| bad())?;
    if t0 >= t1 {
        return Err(bad());
    }
    Ok((t0, t1))
}

fn rtt(a: RttArgs) -> Result<()> {
    let users: Vec<String> = match (&a.user, &a.users) {
        (Some(u), _) => vec![u.clone()],
        (None, Some(p)) => {
            require_file(p)?;
            fs::read_to_string(p)
                .map_err(|e| Error::io(p, e))?
                .lines()
                .map(str::trim)
                .filter(|l| !l.is_empty() && !l.starts_with('#'))
                .map(String::from)
                .collect()
        }
        (None, None) => return Err(Error::Config("pass --user or --users".into())),
    };
    if users.is_empty() {
        return Err(Error::Config("no account ids given".into()));
    }
    let zoom = a.zoom.as_deref().map(parse_zoom).transpose()?;
    let events = read_events(&a.events, false)?;
    let wanted: std::collections::BTreeSet<&str> = users.iter().map(String::as_str).collect();
    let selected: Vec<RetweetEvent> = events
        .into_iter()
        .filter(|e| wanted.contains(e.user_id.as_str()))
        .collect();
    let start = match a.window_start {
        Some(s) => s,
        None => {
            let first = selected.iter().map(|e| e.retweet_ts).min().unwrap_or(0);
            first - first.rem_euclid(SECONDS_PER_DAY)
        }
    };
    let window = AnalysisWindow::from_days(start, a.window_days)?;
    let by_user = build_user_series(&selected, window);
    let series: Vec<UserSeries> = users
        .iter()
        .map(|u| {
            by_user.get(u).cloned().unwrap_or(UserSeries {
                user_id: u.clone(),
                events: Vec::new(),
                window,
            })
        })
        .collect();
    let refs: Vec<&UserSeries> = series.iter().collect();
    let svg = RttFigure::new(&refs, window, zoom).to_svg();
    formats::write_atomic(&a.out, svg.as_bytes())
}

fn run(a: RunArgs) -> Result<()> {
    let mut config = PipelineConfig::default();
    let mut seed_set = false;
    if let Some(path) = &a.config {
        require_file(path)?;
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        config.apply_file_text(&text)?;
        seed_set = text
            .lines()
            .any(|l| l.split('#').next().unwrap_or_default().trim_start().starts_with("seed"));
    }
    if let Some(v) = a.events {
        config.events = v;
    }
    if let Some(v) = a.truth {
        config.truth = Some(v);
    }
    if let Some(v) = a.out_dir {
        config.out_dir = v;
    }
    if a.window_start.is_some() {
        config.window_start = a.window_start;
    }
    if let Some(v) = a.window_days {
        config.window_days = v;
    }
    if let Some(v) = a.min_rate {
        config.min_rate = v;
    }
    if let Some(v) = a.max_rate {
        config.max_rate = v;
    }
    if let Some(v) = a.extractor {
        config.extractor = v;
    }
    if let Some(v) = a.dim {
        config.latent_dim = v;
    }
    if let Some(v) = a.seq_len {
        config.seq_len = v;
    }
    if let Some(v) = a.min_cluster_size {
        config.cluster.min_cluster_size = v;
    }
    if let Some(v) = a.min_samples {
        config.cluster.min_samples = v;
    }
    if let Some(v) = a.epochs {
        config.epochs = v;
    }
    for kv in &a.set {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("--set expects key=value, got '{kv}'")))?;
        config.set(k, v)?;
        seed_set |= k.trim() == "seed";
    }
    if a.seed.is_some() || !seed_set {
        config.seed = resolve_seed(a.seed)?;
    }
    if config.events.as_os_str().is_empty() {
        return Err(Error::Config("no events file given (--events or events= in --config)".into()));
    }
    let outcome = run_pipeline(&config)?;
    println!(
        "accounts {} clusters {} bots {} labels {}",
        outcome.accounts,
        outcome.clusters,
        outcome.bots,
        outcome.labels_path.display()
    );
    if let Some(m) = outcome.report {
        println!(
            "precision {:.4} recall {:.4} accuracy {:.4} f1 {:.4} mcc {:.4}",
            m.precision, m.recall, m.accuracy, m.f1, m.mcc
        );
    }
    Ok(())
}
