//! Twelve per-account handcrafted retweet features.

use std::collections::{BTreeMap, BTreeSet};

use crate::error::{Error, Result};
use crate::ingest::{UserSeries, SECONDS_PER_DAY};

pub const DEFAULT_SESSION_GAP_S: i64 = 3600;

pub const FEATURE_NAMES: [&str; 12] = [
    "rt_users_entropy",
    "rt_days_entropy",
    "rt_rate",
    "daily_mean_rts",
    "rt_days",
    "min_irt",
    "mean_irt",
    "stdev_irt",
    "min_rt_delay",
    "mean_rt_delay",
    "stdev_rt_delay",
    "rt_sessions",
];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HandcraftedVector {
    pub rt_users_entropy: f64,
    pub rt_days_entropy: f64,
    pub rt_rate: f64,
    pub daily_mean_rts: f64,
    pub rt_days: f64,
    pub min_irt: f64,
    pub mean_irt: f64,
    pub stdev_irt: f64,
    pub min_rt_delay: f64,
    pub mean_rt_delay: f64,
    pub stdev_rt_delay: f64,
    pub rt_sessions: f64,
}

impl HandcraftedVector {
    pub fn to_array(&self) -> [f64; 12] {
        [
            self.rt_users_entropy,
            self.rt_days_entropy,
            self.rt_rate,
            self.daily_mean_rts,
            self.rt_days,
            self.min_irt,
            self.mean_irt,
            self.stdev_irt,
            self.min_rt_delay,
            self.mean_rt_delay,
            self.stdev_rt_delay,
            self.rt_sessions,
        ]
    }
}

/// Shannon entropy in bits of the distribution given by `counts`.
pub fn shannon_entropy(counts: &[u64]) -> Result<f64> {
    let total: u64 = counts.iter().sum();
    if total == 0 {
        return Err(Error::Undefined("entropy of an all-zero distribution".into()));
    }
    let total = total as f64;
    Ok(counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / total;
            -p * p.log2()
        })
        .sum::<f64>()
        .max(0.0))
}

/// Number of maximal runs of sorted timestamps whose consecutive gaps are
/// all below `gap_s`.
pub fn detect_sessions(timestamps: &[i64], gap_s: i64) -> usize {
    if timestamps.is_empty() {
        return 0;
    }
    1 + timestamps.windows(2).filter(|w| w[1] - w[0] >= gap_s).count()
}

fn min_mean_std(values: &[f64]) -> (f64, f64, f64) {
    if values.is_empty() {
        return (0.0, 0.0, 0.0);
    }
    let n = values.len() as f64;
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (min, mean, var.sqrt())
}

fn counts_of<K: Ord>(keys: impl Iterator<Item = K>) -> Vec<u64> {
    let mut map: BTreeMap<K, u64> = BTreeMap::new();
    for k in keys {
        *map.entry(k).or_default() += 1;
    }
    map.into_values().collect()
}

pub fn extract_handcrafted(series: &UserSeries) -> Result<HandcraftedVector> {
    extract_handcrafted_with_gap(series, DEFAULT_SESSION_GAP_S)
}

/// Features of one account. Retweet days are counted relative to the window
/// start; publication days of the retweeted tweets are UTC calendar days.
pub fn extract_handcrafted_with_gap(series: &UserSeries, gap_s: i64) -> Result<HandcraftedVector> {
    if series.events.is_empty() {
        return Err(Error::Undefined(format!(
            "user {} has no retweets",
            series.user_id
        )));
    }
    let mut events = series.events.clone();
    events.sort_by(|a, b| (a.retweet_ts, &a.retweet_id).cmp(&(b.retweet_ts, &b.retweet_id)));
    let n = events.len() as f64;
    let days = series.window.days();

    let users = counts_of(events.iter().map(|e| e.source_author()));
    let pub_days = counts_of(events.iter().map(|e| e.source_ts.div_euclid(SECONDS_PER_DAY)));
    let rt_days: BTreeSet<i64> = events
        .iter()
        .map(|e| (e.retweet_ts - series.window.t_ref).div_euclid(SECONDS_PER_DAY))
        .collect();

    let times: Vec<i64> = events.iter().map(|e| e.retweet_ts).collect();
    let irts: Vec<f64> = times.windows(2).map(|w| (w[1] - w[0]) as f64).collect();
    let delays: Vec<f64> = events.iter().map(|e| e.delay() as f64).collect();
    let (min_irt, mean_irt, stdev_irt) = min_mean_std(&irts);
    let (min_rt_delay, mean_rt_delay, stdev_rt_delay) = min_mean_std(&delays);

    Ok(HandcraftedVector {
        rt_users_entropy: shannon_entropy(&users)?,
        rt_days_entropy: shannon_entropy(&pub_days)?,
        rt_rate: n / days,
        daily_mean_rts: n / days,
        rt_days: rt_days.len() as f64,
        min_irt,
        mean_irt,
        stdev_irt,
        min_rt_delay,
        mean_rt_delay,
        stdev_rt_delay,
        rt_sessions: detect_sessions(&times, gap_s) as f64,
    })
}
