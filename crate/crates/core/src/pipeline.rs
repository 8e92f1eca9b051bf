//! End-to-end orchestration: events in, labels and metrics out.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::time::Instant;

use log::info;

use crate::cluster::{cluster_accounts, ClusterParams};
use crate::detect::{align_truth, compute_metrics, label_from_clusters, MetricsReport};
use crate::error::{Error, Result};
use crate::extract::{standardize, ExtractionInput, ExtractorConfig, ExtractorRegistry, FittedModel};
use crate::formats;
use crate::handcrafted::DEFAULT_SESSION_GAP_S;
use crate::ingest::{
    build_user_series, filter_users, parse_events, rle_encode, AnalysisWindow, DEFAULT_MAX_RATE,
    DEFAULT_MIN_RATE, DEFAULT_WINDOW_DAYS, SECONDS_PER_DAY,
};
use crate::linproj::{DEFAULT_LAG, DEFAULT_LATENT_DIM, DEFAULT_SEQ_LEN};
use crate::vae::VaeConfig;

pub const SERIES_FILE: &str = "series.txt";
pub const LATENTS_FILE: &str = "latents.csv";
pub const CLUSTERS_FILE: &str = "clusters.csv";
pub const LABELS_FILE: &str = "labels.csv";
pub const REPORT_FILE: &str = "report.json";
pub const TRACE_FILE: &str = "trace.log";

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub events: PathBuf,
    pub truth: Option<PathBuf>,
    pub out_dir: PathBuf,
    /// Defaults to midnight UTC of the day holding the first retweet.
    pub window_start: Option<i64>,
    pub window_days: i64,
    pub min_rate: f64,
    pub max_rate: f64,
    pub extractor: String,
    pub latent_dim: usize,
    pub seq_len: usize,
    pub lag: usize,
    pub session_gap_s: i64,
    pub cluster: ClusterParams,
    /// `None` z-scores only extractors whose columns need it.
    pub standardize: Option<bool>,
    pub seed: u64,
    pub epochs: usize,
    pub batch_size: usize,
    pub hidden: usize,
    pub learning_rate: f64,
    pub kl_weight: f64,
    pub strict: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        let vae = VaeConfig::default();
        Self {
            events: PathBuf::new(),
            truth: None,
            out_dir: PathBuf::from("."),
            window_start: None,
            window_days: DEFAULT_WINDOW_DAYS,
            min_rate: DEFAULT_MIN_RATE,
            max_rate: DEFAULT_MAX_RATE,
            extractor: "vae".into(),
            latent_dim: DEFAULT_LATENT_DIM,
            seq_len: DEFAULT_SEQ_LEN,
            lag: DEFAULT_LAG,
            session_gap_s: DEFAULT_SESSION_GAP_S,
            cluster: ClusterParams::default(),
            standardize: None,
            seed: 0,
            epochs: vae.epochs,
            batch_size: vae.batch_size,
            hidden: vae.hidden,
            learning_rate: vae.learning_rate,
            kl_weight: vae.kl_weight,
            strict: false,
        }
    }
}

fn parse_value<T: std::str::FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    value
        .parse()
        .map_err(|e| Error::Config(format!("bad value '{value}' for {key}: {e}")))
}

impl PipelineConfig {
    /// Applies one `key=value` setting.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key.trim().replace('-', "_").as_str() {
            "events" | "input" => self.events = PathBuf::from(v),
            "truth" => self.truth = Some(PathBuf::from(v)),
            "out_dir" | "out" => self.out_dir = PathBuf::from(v),
            "window_start" => self.window_start = Some(parse_value(key, v)?),
            "window_days" => self.window_days = parse_value(key, v)?,
            "min_rate" => self.min_rate = parse_value(key, v)?,
            "max_rate" => self.max_rate = parse_value(key, v)?,
            "extractor" => self.extractor = v.to_string(),
            "latent_dim" | "d" => self.latent_dim = parse_value(key, v)?,
            "seq_len" => self.seq_len = parse_value(key, v)?,
            "lag" => self.lag = parse_value(key, v)?,
            "session_gap_s" => self.session_gap_s = parse_value(key, v)?,
            "min_cluster_size" => self.cluster.min_cluster_size = parse_value(key, v)?,
            "min_samples" => self.cluster.min_samples = parse_value(key, v)?,
            "standardize" => self.standardize = Some(parse_value(key, v)?),
            "seed" => self.seed = parse_value(key, v)?,
            "epochs" => self.epochs = parse_value(key, v)?,
            "batch_size" => self.batch_size = parse_value(key, v)?,
            "hidden" => self.hidden = parse_value(key, v)?,
            "learning_rate" | "lr" => self.learning_rate = parse_value(key, v)?,
            "kl_weight" | "beta" => self.kl_weight = parse_value(key, v)?,
            "strict" => self.strict = parse_value(key, v)?,
            other => return Err(Error::Config(format!("unknown config key '{other}'"))),
        }
        Ok(())
    }

    /// Applies a `key=value` file. `#` starts a comment.
    pub fn apply_file_text(&mut self, text: &str) -> Result<()> {
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or_default().trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("config line {}: expected key=value", idx + 1)))?;
            self.set(k, v)?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        self.apply_file_text(&text)
    }

    pub fn vae_config(&self) -> VaeConfig {
        VaeConfig {
            latent_dim: self.latent_dim,
            hidden: self.hidden,
            max_seq_len: self.seq_len,
            epochs: self.epochs,
            batch_size: self.batch_size,
            learning_rate: self.learning_rate,
            kl_weight: self.kl_weight,
            seed: self.seed,
        }
    }

    pub fn extractor_config(&self) -> ExtractorConfig {
        ExtractorConfig {
            latent_dim: self.latent_dim,
            seq_len: self.seq_len,
            lag: self.lag,
            session_gap_s: self.session_gap_s,
            vae: self.vae_config(),
            pretrained_vae: None,
            pretrained_projector: None,
        }
    }

    /// Checks everything that can be checked before a stage runs.
    pub fn validate(&self, registry: &ExtractorRegistry) -> Result<()> {
        if !self.events.is_file() {
            return Err(Error::io(
                &self.events,
                std::io::Error::new(std::io::ErrorKind::NotFound, "input events file not found"),
            ));
        }
        if let Some(t) = &self.truth {
            if !t.is_file() {
                return Err(Error::io(
                    t,
                    std::io::Error::new(std::io::ErrorKind::NotFound, "truth file not found"),
                ));
            }
        }
        if self.window_days <= 0 {
            return Err(Error::Config("window_days must be positive".into()));
        }
        if !(self.min_rate >= 0.0 && self.min_rate <= self.max_rate) {
            return Err(Error::Config(format!(
                "invalid rate band [{}, {}]",
                self.min_rate, self.max_rate
            )));
        }
        if self.session_gap_s <= 0 {
            return Err(Error::Config("session_gap_s must be positive".into()));
        }
        if self.lag == 0 || self.lag >= self.seq_len {
            return Err(Error::Config(format!(
                "lag must lie in [1, seq_len), got {}",
                self.lag
            )));
        }
        self.cluster.validate()?;
        self.vae_config().validate()?;
        registry.create(&self.extractor, &self.extractor_config())?;
        Ok(())
    }

    fn describe(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "config events={}", self.events.display());
        if let Some(t) = &self.truth {
            let _ = writeln!(s, "config truth={}", t.display());
        }
        let _ = writeln!(
            s,
            "config window_start={} window_days={} min_rate={} max_rate={}",
            self.window_start.map_or("auto".to_string(), |v| v.to_string()),
            self.window_days,
            self.min_rate,
            self.max_rate
        );
        let _ = writeln!(
            s,
            "config extractor={} latent_dim={} seq_len={} lag={} session_gap_s={}",
            self.extractor, self.latent_dim, self.seq_len, self.lag, self.session_gap_s
        );
        let _ = writeln!(
            s,
            "config min_cluster_size={} min_samples={} standardize={}",
            self.cluster.min_cluster_size,
            self.cluster.min_samples,
            self.standardize.map_or("auto".to_string(), |v| v.to_string())
        );
        let _ = writeln!(
            s,
            "config epochs={} batch_size={} hidden={} learning_rate={} kl_weight={}",
            self.epochs, self.batch_size, self.hidden, self.learning_rate, self.kl_weight
        );
        s
    }
}

#[derive(Debug, Clone)]
pub struct PipelineOutcome {
    pub accounts: usize,
    pub clusters: usize,
    pub bots: usize,
    pub report: Option<MetricsReport>,
    pub labels_path: PathBuf,
}

/// Trace log written as `trace.log.partial` and renamed once the run ends
/// cleanly.
struct Trace {
    path: PathBuf,
    text: String,
    started: Instant,
}

impl Trace {
    fn new(dir: &Path) -> Self {
        Self {
            path: dir.join(TRACE_FILE),
            text: String::new(),
            started: Instant::now(),
        }
    }

    fn line(&mut self, s: &str) -> Result<()> {
        info!("{s}");
        self.text.push_str(s);
        if !s.ends_with('\n') {
            self.text.push('\n');
        }
        let tmp = formats::partial_path(&self.path);
        fs::write(&tmp, &self.text).map_err(|e| Error::io(&tmp, e))
    }

    fn stage<T>(&mut self, name: &'static str, f: impl FnOnce() -> Result<(T, String)>) -> Result<T> {
        let t = Instant::now();
        match f() {
            Ok((value, summary)) => {
                self.line(&format!(
                    "stage {name} ok {summary} elapsed_s={:.3}",
                    t.elapsed().as_secs_f64()
                ))?;
                Ok(value)
            }
            Err(e) => {
                let _ = self.line(&format!("stage {name} failed: {e}"));
                Err(Error::Stage {
                    stage: name,
                    source: Box::new(e),
                })
            }
        }
    }

    fn finish(&mut self) -> Result<()> {
        self.line(&format!("total elapsed_s={:.3}", self.started.elapsed().as_secs_f64()))?;
        let tmp = formats::partial_path(&self.path);
        fs::rename(&tmp, &self.path).map_err(|e| Error::io(&self.path, e))
    }
}

pub fn run_pipeline(config: &PipelineConfig) -> Result<PipelineOutcome> {
    run_pipeline_with(config, &ExtractorRegistry::default())
}

pub fn run_pipeline_with(config: &PipelineConfig, registry: &ExtractorRegistry) -> Result<PipelineOutcome> {
    config.validate(registry)?;
    fs::create_dir_all(&config.out_dir).map_err(|e| Error::io(&config.out_dir, e))?;
    let dir = &config.out_dir;
    let mut trace = Trace::new(dir);
    trace.line(&format!("rtbust {}", env!("CARGO_PKG_VERSION")))?;
    trace.line(&format!("seed {}", config.seed))?;
    trace.line(&config.describe())?;

    let (window, series) = trace.stage("ingest", || {
        let f = fs::File::open(&config.events).map_err(|e| Error::io(&config.events, e))?;
        let report = parse_events(BufReader::new(f), config.strict)?;
        let start = match config.window_start {
            Some(s) => s,
            None => {
                let first = report
                    .events
                    .iter()
                    .map(|e| e.retweet_ts)
                    .min()
                    .ok_or_else(|| Error::Config("no events to infer the window from".into()))?;
                first - first.rem_euclid(SECONDS_PER_DAY)
            }
        };
        let window = AnalysisWindow::from_days(start, config.window_days)?;
        let all = build_user_series(&report.events, window);
        let n_all = all.len();
        let kept = filter_users(all, config.min_rate, config.max_rate)?;
        let summary = format!(
            "events={} rejected={} window_start={} users={} kept={}",
            report.events.len(),
            report.rejected.len(),
            window.t_ref,
            n_all,
            kept.len()
        );
        Ok(((window, kept), summary))
    })?;

    let sequences = trace.stage("vectorize", || {
        let seqs = series
            .iter()
            .map(|(k, s)| Ok((k.clone(), rle_encode(s)?)))
            .collect::<Result<BTreeMap<_, _>>>()?;
        formats::write_series(&dir.join(SERIES_FILE), window, &seqs)?;
        let entries: usize = seqs.values().map(|s| s.len()).sum();
        let summary = format!("sequences={} entries={entries}", seqs.len());
        Ok((seqs, summary))
    })?;

    let features = trace.stage("extract", || {
        let extractor = registry.create(&config.extractor, &config.extractor_config())?;
        let input = ExtractionInput {
            sequences: &sequences,
            series: Some(&series),
        };
        let fs_ = extractor.extract(&input)?;
        formats::write_features(&dir.join(LATENTS_FILE), &fs_.columns, &fs_.vectors)?;
        let mut summary = format!("extractor={} rows={} dim={}", extractor.name(), fs_.vectors.len(), fs_.dim());
        match &fs_.model {
            Some(FittedModel::Vae { model, trace: losses }) => {
                model.save(&dir.join("model.vae"))?;
                if let (Some(first), Some(last)) = (losses.first(), losses.last()) {
                    let _ = write!(summary, " loss_first={:.6} loss_last={:.6}", first.total, last.total);
                }
            }
            Some(FittedModel::Linear(p)) => formats::save_projector(&dir.join("model.proj"), p)?,
            None => {}
        }
        Ok((fs_, summary))
    })?;

    let labeling = trace.stage("cluster", || {
        let scale = config.standardize.unwrap_or(features.needs_scaling);
        let points = if scale { standardize(&features.vectors) } else { features.vectors.clone() };
        let labeling = cluster_accounts(&points, &config.cluster)?;
        formats::write_clusters(&dir.join(CLUSTERS_FILE), &labeling)?;
        let noise = labeling.assignments.values().filter(|c| c.is_none()).count();
        let summary = format!("standardized={scale} clusters={} noise={noise}", labeling.n_clusters());
        Ok((labeling, summary))
    })?;

    let labels_path = dir.join(LABELS_FILE);
    let detection = trace.stage("detect", || {
        let d = label_from_clusters(&labeling);
        formats::write_labels(&labels_path, &d)?;
        let summary = format!("bots={} humans={}", d.n_bots(), d.labels.len() - d.n_bots());
        Ok((d, summary))
    })?;

    let report = match &config.truth {
        Some(path) => Some(trace.stage("eval", || {
            let truth = formats::read_truth(path)?;
            let pred = detection.predictions();
            let truth = align_truth(&pred, &truth)?;
            let m = compute_metrics(&pred, &truth)?;
            formats::write_report(&dir.join(REPORT_FILE), &m)?;
            let summary = format!(
                "f1={:.4} precision={:.4} recall={:.4} accuracy={:.4} mcc={:.4}",
                m.f1, m.precision, m.recall, m.accuracy, m.mcc
            );
            Ok((m, summary))
        })?),
        None => None,
    };

    trace.finish()?;
    Ok(PipelineOutcome {
        accounts: detection.labels.len(),
        clusters: labeling.n_clusters(),
        bots: detection.n_bots(),
        report,
        labels_path,
    })
}
