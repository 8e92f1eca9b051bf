//! Labeled synthetic retweet corpora.
//!
//! Humans retweet at Poisson times shaped by a personal daily rhythm, with
//! log-normal delays and occasional droplets. Bots belong to botnets that share a pool of source tweets and a
//! session schedule, and follow one of three automated patterns:
//!
//! * straight line: sources retweeted within seconds of publication, in sessions;
//! * triangular: fixed-period sessions in which sources date back at most to
//!   the start of the session;
//! * waterfall: periodic runs through the pool in reverse chronological order,
//!   reaching up to three days back.
//!
//! The human model is a stand-in for legitimate behavior, not a fitted model.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Gamma, LogNormal, Poisson};
use serde::{Deserialize, Serialize};

use crate::detect::Label;
use crate::error::{Error, Result};
use crate::ingest::{AnalysisWindow, RetweetEvent, SECONDS_PER_DAY};

/// 2018-06-17T00:00:00Z, used when a corpus spec names no window start.
pub const DEFAULT_WINDOW_START: i64 = 1_529_193_600;

pub const HUMAN_DELAY_MEDIAN_S: f64 = 300.0;
pub const HUMAN_DELAY_LOG_SIGMA: f64 = 1.5;
pub const DROPLET_PROBABILITY: f64 = 0.1;
pub const DROPLET_MIN: usize = 3;
pub const DROPLET_MAX: usize = 8;
pub const WATERFALL_LOOKBACK_S: i64 = 3 * SECONDS_PER_DAY;
const HUMAN_AUTHOR_POPULATION: usize = 2000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BehaviorKind {
    Human,
    StraightLine,
    Triangular,
    Waterfall,
}

impl BehaviorKind {
    pub fn is_bot(self) -> bool {
        self != BehaviorKind::Human
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BehaviorSpec {
    pub kind: BehaviorKind,
    pub rate_per_day: f64,
    pub session_period_s: f64,
    pub session_length_s: f64,
    pub jitter_s: f64,
    pub botnet_id: Option<String>,
}

impl BehaviorSpec {
    pub fn human(rate_per_day: f64) -> Self {
        Self {
            kind: BehaviorKind::Human,
            rate_per_day,
            session_period_s: 0.0,
            session_length_s: 0.0,
            jitter_s: 0.0,
            botnet_id: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(2.0..=50.0).contains(&self.rate_per_day) {
            return Err(Error::Config(format!(
                "rate_per_day {} outside [2, 50]",
                self.rate_per_day
            )));
        }
        if self.jitter_s < 0.0 {
            return Err(Error::Config("negative jitter".into()));
        }
        if self.kind.is_bot()
            && !(self.session_length_s > 0.0 && self.session_length_s < self.session_period_s)
        {
            return Err(Error::Config(format!(
                "session length {} must be positive and below period {}",
                self.session_length_s, self.session_period_s
            )));
        }
        Ok(())
    }
}

/// A botnet's common pool of source tweets and its session phase.
#[derive(Debug, Clone)]
pub struct SharedStream {
    /// `(source_tweet_id, source_ts)` sorted by timestamp.
    pub sources: Vec<(String, i64)>,
    /// Offset of the first session start from the window start.
    pub phase_s: f64,
    /// One uniform draw per session, shared by every member so that the
    /// botnet's script makes the same choices in the same session.
    pub session_draws: Vec<f64>,
}

impl SharedStream {
    /// Pool covering the window and the waterfall look-back before it.
    pub fn generate<R: Rng>(
        botnet_id: &str,
        per_day: f64,
        n_authors: usize,
        window: AnalysisWindow,
        session_period_s: f64,
        rng: &mut R,
    ) -> Self {
        let start = window.t_ref - WATERFALL_LOOKBACK_S;
        let mut times = poisson_times(rng, per_day / SECONDS_PER_DAY as f64, start, window.end());
        // one pool tweet per second at most
        times.dedup();
        let sources = times
            .into_iter()
            .enumerate()
            .map(|(i, ts)| {
                let author = rng.random_range(0..n_authors.max(1));
                (format!("{botnet_id}-a{author}:{botnet_id}-{i}"), ts)
            })
            .collect();
        let period = session_period_s.max(1.0);
        let phase_s = rng.random_range(0.0..period);
        let n_sessions = (window.duration_s as f64 / period).ceil() as usize + 2;
        let session_draws = (0..n_sessions).map(|_| rng.random()).collect();
        Self {
            sources,
            phase_s,
            session_draws,
        }
    }

    fn index_range(&self, from: i64, to: i64) -> std::ops::Range<usize> {
        let lo = self.sources.partition_point(|(_, ts)| *ts < from);
        let hi = self.sources.partition_point(|(_, ts)| *ts < to);
        lo..hi.max(lo)
    }
}

fn poisson_times<R: Rng>(rng: &mut R, per_second: f64, start: i64, end: i64) -> Vec<i64> {
    let mut out = Vec::new();
    if per_second <= 0.0 {
        return out;
    }
    let exp = Exp::new(per_second).expect("positive rate");
    let mut t = start as f64;
    loop {
        t += exp.sample(rng);
        if t >= end as f64 {
            break;
        }
        out.push(t.floor() as i64);
    }
    out
}

/// Smallest `k` with `P(X <= k) >= u` for `X ~ Poisson(mean)`.
fn poisson_quantile(mean: f64, u: f64) -> usize {
    let mut k = 0usize;
    let mut p = (-mean).exp();
    let mut cdf = p;
    while cdf < u && k < 100_000 {
        k += 1;
        p *= mean / k as f64;
        cdf += p;
    }
    k
}

fn human_delay<R: Rng>(rng: &mut R) -> i64 {
    let dist = LogNormal::new(HUMAN_DELAY_MEDIAN_S.ln(), HUMAN_DELAY_LOG_SIGMA).unwrap();
    (dist.sample(rng).round() as i64).max(1)
}

struct EventSink<'a> {
    user_id: &'a str,
    events: Vec<RetweetEvent>,
}

impl EventSink<'_> {
    fn push(&mut self, retweet_ts: i64, source_tweet_id: String, source_ts: i64) {
        let n = self.events.len();
        self.events.push(RetweetEvent {
            user_id: self.user_id.to_string(),
            retweet_id: format!("{}-{n:06}", self.user_id),
            retweet_ts,
            source_tweet_id,
            source_ts,
        });
    }

    fn finish(mut self) -> Vec<RetweetEvent> {
        self.events.sort_by(|a, b| {
            (a.retweet_ts, &a.retweet_id).cmp(&(b.retweet_ts, &b.retweet_id))
        });
        self.events
    }
}

/// Expected number of retweets emitted per Poisson arrival of a human.
pub fn human_events_per_arrival() -> f64 {
    let mean_burst = (DROPLET_MIN + DROPLET_MAX) as f64 / 2.0;
    1.0 + DROPLET_PROBABILITY * (mean_burst - 1.0)
}

/// Personal rhythm of a legitimate account: a daily waking window holding
/// most activity and uneven activity levels across days. Both densities are
/// normalized, so arrivals stay Poisson with the requested mean count.
struct ActivityProfile {
    /// cumulative normalized day weights
    day_cdf: Vec<f64>,
    wake_start_s: f64,
    wake_len_s: f64,
}

const HUMAN_OFF_HOURS_SHARE: f64 = 0.1;

impl ActivityProfile {
    fn draw<R: Rng>(window: AnalysisWindow, rng: &mut R) -> Self {
        let n_days = (window.duration_s + SECONDS_PER_DAY - 1) / SECONDS_PER_DAY;
        let shape = rng.random_range(0.7..3.0);
        let gamma = Gamma::new(shape, 1.0).unwrap();
        let weights: Vec<f64> = (0..n_days).map(|_| gamma.sample(rng) + 1e-9).collect();
        let total: f64 = weights.iter().sum();
        let day_cdf = weights
            .iter()
            .scan(0.0, |acc, w| {
                *acc += w / total;
                Some(*acc)
            })
            .collect();
        Self {
            day_cdf,
            wake_start_s: rng.random_range(0.0..SECONDS_PER_DAY as f64),
            wake_len_s: rng.random_range(10.0..18.0) * 3600.0,
        }
    }

    fn sample<R: Rng>(&self, window: AnalysisWindow, rng: &mut R) -> i64 {
        loop {
            let u: f64 = rng.random();
            let day = self.day_cdf.partition_point(|&c| c < u).min(self.day_cdf.len() - 1);
            let sec = if rng.random_bool(HUMAN_OFF_HOURS_SHARE) {
                rng.random_range(0.0..SECONDS_PER_DAY as f64)
            } else {
                (self.wake_start_s + rng.random_range(0.0..self.wake_len_s)) % SECONDS_PER_DAY as f64
            };
            let t = window.t_ref + day as i64 * SECONDS_PER_DAY + sec as i64;
            if window.contains(t) {
                return t;
            }
        }
    }

    /// Sorted arrival times, `Poisson(rate * duration)` of them.
    fn arrivals<R: Rng>(&self, per_second: f64, window: AnalysisWindow, rng: &mut R) -> Vec<i64> {
        let mean = per_second * window.duration_s as f64;
        if mean <= 0.0 {
            return Vec::new();
        }
        let n = Poisson::new(mean).unwrap().sample(rng) as usize;
        let mut times: Vec<i64> = (0..n).map(|_| self.sample(window, rng)).collect();
        times.sort_unstable();
        times
    }
}

/// One legitimate account. Arrivals are thinned so that the expected total
/// number of retweets, droplets included, is `rate_per_day` per day.
pub fn gen_human<R: Rng>(
    user_id: &str,
    spec: &BehaviorSpec,
    window: AnalysisWindow,
    rng: &mut R,
) -> Result<Vec<RetweetEvent>> {
    if spec.kind != BehaviorKind::Human {
        return Err(Error::Config(format!("gen_human called with {:?}", spec.kind)));
    }
    let arrival_rate = spec.rate_per_day / human_events_per_arrival() / SECONDS_PER_DAY as f64;
    // personal set of followed authors with a rank-skewed preference
    let n_follow = rng.random_range(5..=60usize);
    let follows: Vec<usize> = (0..n_follow)
        .map(|_| rng.random_range(0..HUMAN_AUTHOR_POPULATION))
        .collect();
    let weights: Vec<f64> = (0..n_follow).map(|r| 1.0 / (r as f64 + 1.0)).collect();
    let total_w: f64 = weights.iter().sum();
    let pick_author = |rng: &mut R| -> usize {
        let mut x = rng.random_range(0.0..total_w);
        for (i, w) in weights.iter().enumerate() {
            if x < *w {
                return follows[i];
            }
            x -= w;
        }
        follows[n_follow - 1]
    };

    let mut sink = EventSink {
        user_id,
        events: Vec::new(),
    };
    let mut n_src = 0usize;
    let profile = ActivityProfile::draw(window, rng);
    for t in profile.arrivals(arrival_rate, window, rng) {
        if rng.random_bool(DROPLET_PROBABILITY) {
            // reverse-chronological feed: later retweets reach older sources
            let burst = rng.random_range(DROPLET_MIN..=DROPLET_MAX);
            let mut rt = t;
            let mut src = t - human_delay(rng);
            for k in 0..burst {
                if k > 0 {
                    rt += rng.random_range(1..=5);
                    src -= rng.random_range(30..=900);
                }
                if rt >= window.end() {
                    break;
                }
                let author = pick_author(rng);
                sink.push(rt, format!("a{author}:{user_id}-{n_src}"), src);
                n_src += 1;
            }
        } else {
            let author = pick_author(rng);
            sink.push(t, format!("a{author}:{user_id}-{n_src}"), t - human_delay(rng));
            n_src += 1;
        }
    }
    Ok(sink.finish())
}

/// Session start times (relative offsets already applied) covering the window.
fn session_starts(window: AnalysisWindow, phase: f64, period: f64, offset: f64) -> Vec<f64> {
    let mut starts = Vec::new();
    let mut s = window.t_ref as f64 + phase + offset - period;
    while s < window.end() as f64 {
        starts.push(s);
        s += period;
    }
    starts
}

/// One automated account following its botnet's schedule and pool.
pub fn gen_bot<R: Rng>(
    user_id: &str,
    spec: &BehaviorSpec,
    window: AnalysisWindow,
    rng: &mut R,
    shared: Option<&SharedStream>,
) -> Result<Vec<RetweetEvent>> {
    spec.validate()?;
    if !spec.kind.is_bot() {
        return Err(Error::Config("gen_bot called with a human spec".into()));
    }
    let private;
    let stream = match (shared, &spec.botnet_id) {
        (Some(s), _) => s,
        (None, Some(id)) => {
            return Err(Error::Config(format!(
                "botnet '{id}' requires its shared source stream"
            )))
        }
        (None, None) => {
            let duty = spec.session_length_s / spec.session_period_s;
            private = SharedStream::generate(
                user_id,
                spec.rate_per_day / duty * 1.5,
                3,
                window,
                spec.session_period_s,
                rng,
            );
            &private
        }
    };

    let period = spec.session_period_s;
    let length = spec.session_length_s;
    let offset = if spec.jitter_s > 0.0 {
        rng.random_range(-spec.jitter_s..=spec.jitter_s)
    } else {
        0.0
    };
    let starts = session_starts(window, stream.phase_s, period, offset);
    let target = spec.rate_per_day * window.days();
    let mut sink = EventSink {
        user_id,
        events: Vec::new(),
    };
    let in_window = |t: i64| window.contains(t);

    match spec.kind {
        BehaviorKind::StraightLine => {
            let eligible: Vec<(usize, i64)> = starts
                .iter()
                .flat_map(|&s| {
                    stream
                        .index_range(s.ceil() as i64, (s + length).ceil() as i64)
                        .map(|i| (i, stream.sources[i].1))
                })
                .collect();
            let keep = (target / eligible.len().max(1) as f64).min(1.0);
            for (i, src_ts) in eligible {
                if !rng.random_bool(keep) {
                    continue;
                }
                let rt = src_ts + rng.random_range(1..=10);
                if in_window(rt) && src_ts <= rt {
                    sink.push(rt, stream.sources[i].0.clone(), src_ts);
                }
            }
        }
        BehaviorKind::Triangular => {
            let per_session = target / starts.len().max(1) as f64;
            let count_dist = Poisson::new(per_session.max(1e-9)).unwrap();
            for &s in &starts {
                let n = count_dist.sample(rng) as usize;
                let mut times: Vec<f64> =
                    (0..n).map(|_| s + rng.random_range(0.0..length)).collect();
                times.sort_by(|a, b| a.partial_cmp(b).unwrap());
                let session_start = s.ceil() as i64;
                for t in times {
                    let rt = t.floor() as i64;
                    // sources published since the session began, strictly before now
                    let range = stream.index_range(session_start, rt);
                    if range.is_empty() || !in_window(rt) {
                        continue;
                    }
                    let i = rng.random_range(range);
                    sink.push(rt, stream.sources[i].0.clone(), stream.sources[i].1);
                }
            }
        }
        BehaviorKind::Waterfall => {
            let per_run = target / starts.len().max(1) as f64;
            for (k, &s) in starts.iter().enumerate() {
                let run_start = s.ceil() as i64;
                let range = stream.index_range(run_start - WATERFALL_LOOKBACK_S, run_start);
                let u = stream.session_draws.get(k).copied().unwrap_or(0.5);
                let n = poisson_quantile(per_run, u).min(range.len());
                let mut rt = run_start;
                let run_end = run_start + length as i64;
                // newest first, walking back through the feed
                let mut idx = range.end;
                let mut emitted = 0;
                while emitted < n && idx > range.start && rt < run_end {
                    idx -= 1;
                    if in_window(rt) {
                        let (id, ts) = &stream.sources[idx];
                        sink.push(rt, id.clone(), *ts);
                    }
                    emitted += 1;
                    rt += rng.random_range(1..=5);
                    // occasionally skip a feed item
                    if idx > range.start && rng.random_bool(0.15) {
                        idx -= 1;
                    }
                }
            }
        }
        BehaviorKind::Human => unreachable!(),
    }
    Ok(sink.finish())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupSpec {
    pub kind: BehaviorKind,
    pub count: usize,
    pub rate_min: f64,
    pub rate_max: f64,
    #[serde(default)]
    pub session_period_s: f64,
    #[serde(default)]
    pub session_length_s: f64,
    #[serde(default = "default_jitter")]
    pub jitter_s: f64,
    #[serde(default)]
    pub botnet: Option<String>,
    /// Pool tweets per day; defaults to enough for every member's rate.
    #[serde(default)]
    pub pool_per_day: Option<f64>,
}

fn default_jitter() -> f64 {
    30.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusSpec {
    #[serde(default = "default_start")]
    pub window_start: i64,
    #[serde(default = "default_days")]
    pub window_days: i64,
    #[serde(rename = "group", default)]
    pub groups: Vec<GroupSpec>,
}

fn default_start() -> i64 {
    DEFAULT_WINDOW_START
}

fn default_days() -> i64 {
    14
}

impl CorpusSpec {
    /// 200 humans plus botnets of 40 straight-line, 60 triangular and 100
    /// waterfall accounts.
    pub fn acceptance_default() -> Self {
        Self::with_counts(200, 40, 60, 100)
    }

    pub fn with_counts(humans: usize, straight: usize, triangular: usize, waterfall: usize) -> Self {
        let human = GroupSpec {
            kind: BehaviorKind::Human,
            count: humans,
            rate_min: 5.0,
            rate_max: 40.0,
            session_period_s: 0.0,
            session_length_s: 0.0,
            jitter_s: 0.0,
            botnet: None,
            pool_per_day: None,
        };
        let bot = |kind, count, name: &str, period: f64, length: f64, lo: f64, hi: f64| GroupSpec {
            kind,
            count,
            rate_min: lo,
            rate_max: hi,
            session_period_s: period,
            session_length_s: length,
            jitter_s: 30.0,
            botnet: Some(name.to_string()),
            pool_per_day: None,
        };
        Self {
            window_start: DEFAULT_WINDOW_START,
            window_days: 14,
            groups: vec![
                human,
                bot(BehaviorKind::StraightLine, straight, "bn1", 4.0 * 3600.0, 3600.0, 16.0, 20.0),
                bot(BehaviorKind::Triangular, triangular, "bn2", 8.0 * 3600.0, 2.0 * 3600.0, 12.0, 15.0),
                bot(BehaviorKind::Waterfall, waterfall, "bn3", 6.0 * 3600.0, 1800.0, 20.0, 25.0),
            ],
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(format!("corpus spec: {e}")))
    }

    pub fn window(&self) -> Result<AnalysisWindow> {
        AnalysisWindow::from_days(self.window_start, self.window_days)
    }

    pub fn total_accounts(&self) -> usize {
        self.groups.iter().map(|g| g.count).sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledCorpus {
    pub events: Vec<RetweetEvent>,
    pub truth: BTreeMap<String, Label>,
    pub seed: u64,
    pub window: AnalysisWindow,
    /// Generating behavior of every account, for diagnostics and tests.
    pub kinds: BTreeMap<String, BehaviorKind>,
}

/// splitmix64 finaliser; derives independent per-account seeds.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed
        .wrapping_add(stream.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn draw_rate<R: Rng>(rng: &mut R, lo: f64, hi: f64) -> f64 {
    if hi <= lo {
        return lo;
    }
    // log-uniform
    (rng.random_range(lo.ln()..hi.ln())).exp()
}

pub fn gen_corpus(spec: &CorpusSpec, seed: u64) -> Result<LabeledCorpus> {
    let window = spec.window()?;
    let total = spec.total_accounts();
    // neutral ids in shuffled order so ids carry no label information
    let mut id_rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, u64::MAX));
    let mut ids: Vec<usize> = (0..total).collect();
    ids.shuffle(&mut id_rng);

    let mut events = Vec::new();
    let mut truth = BTreeMap::new();
    let mut kinds = BTreeMap::new();
    let mut account = 0usize;
    for (g, group) in spec.groups.iter().enumerate() {
        if group.kind.is_bot() && group.count > 0
            && !(group.session_length_s > 0.0 && group.session_length_s < group.session_period_s) {
                return Err(Error::Config(format!("group {g}: invalid session timing")));
            }
        let shared = match (&group.botnet, group.kind.is_bot()) {
            (Some(name), true) => {
                let mut pool_rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 1_000_000 + g as u64));
                let duty = group.session_length_s / group.session_period_s;
                let per_day = group.pool_per_day.unwrap_or(match group.kind {
                    BehaviorKind::StraightLine => group.rate_max / duty * 1.3,
                    BehaviorKind::Triangular => group.rate_max / duty * 0.5,
                    _ => group.rate_max * 2.0,
                });
                Some(SharedStream::generate(
                    name,
                    per_day,
                    3,
                    window,
                    group.session_period_s,
                    &mut pool_rng,
                ))
            }
            _ => None,
        };
        for _ in 0..group.count {
            let user_id = format!("u{:05}", ids[account]);
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, account as u64));
            let rate = draw_rate(&mut rng, group.rate_min, group.rate_max);
            let behavior = BehaviorSpec {
                kind: group.kind,
                rate_per_day: rate,
                session_period_s: group.session_period_s,
                session_length_s: group.session_length_s,
                jitter_s: group.jitter_s,
                botnet_id: group.botnet.clone(),
            };
            behavior.validate()?;
            let mut generated = if group.kind.is_bot() {
                gen_bot(&user_id, &behavior, window, &mut rng, shared.as_ref())?
            } else {
                gen_human(&user_id, &behavior, window, &mut rng)?
            };
            events.append(&mut generated);
            let label = if group.kind.is_bot() { Label::Bot } else { Label::Human };
            truth.insert(user_id.clone(), label);
            kinds.insert(user_id, group.kind);
            account += 1;
        }
    }
    events.sort_by(|a, b| {
        (a.retweet_ts, &a.user_id, &a.retweet_id).cmp(&(b.retweet_ts, &b.user_id, &b.retweet_id))
    });
    Ok(LabeledCorpus {
        events,
        truth,
        seed,
        window,
        kinds,
    })
}

pub fn write_events<W: Write>(mut w: W, events: &[RetweetEvent]) -> std::io::Result<()> {
    for e in events {
        writeln!(w, "{}", e.to_record())?;
    }
    w.flush()
}

pub fn write_truth<W: Write>(mut w: W, truth: &BTreeMap<String, Label>) -> std::io::Result<()> {
    writeln!(w, "user_id,label")?;
    for (user, label) in truth {
        writeln!(w, "{user},{label}")?;
    }
    w.flush()
}

pub fn load_corpus_spec(path: &Path) -> Result<CorpusSpec> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    CorpusSpec::from_toml(&text)
}
