//! Retweet log parsing, per-user series construction, the activity filter and
//! the zero-run compression of per-second retweet series.
//!
//! A user's per-second series holds `|t(x) - t_ref|` at every second in which
//! the user retweeted tweet `x` and `0` elsewhere. The compressed form keeps
//! retweet observations as positive integers and replaces each run of idle
//! seconds with the negated run length, so `[3, 0, 0, 0, 4, 0, 6]` becomes
//! `[3, -3, 4, -1, 6]`.

use std::collections::BTreeMap;
use std::io::BufRead;

use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const SECONDS_PER_DAY: i64 = 86_400;
pub const DEFAULT_WINDOW_DAYS: i64 = 14;
pub const DEFAULT_MIN_RATE: f64 = 2.0;
pub const DEFAULT_MAX_RATE: f64 = 50.0;

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RetweetEvent {
    pub user_id: String,
    pub retweet_id: String,
    pub retweet_ts: i64,
    pub source_tweet_id: String,
    pub source_ts: i64,
}

impl RetweetEvent {
    pub fn delay(&self) -> i64 {
        self.retweet_ts - self.source_ts
    }

    /// Author of the retweeted tweet. Source ids of the form `author:tweet`
    /// carry their author; bare ids are treated as their own author.
    pub fn source_author(&self) -> &str {
        match self.source_tweet_id.split_once(':') {
            Some((author, _)) => author,
            None => &self.source_tweet_id,
        }
    }

    pub fn check_causality(&self) -> Result<()> {
        if self.retweet_ts < self.source_ts {
            return Err(Error::Causality {
                retweet_id: self.retweet_id.clone(),
                retweet_ts: self.retweet_ts,
                source_ts: self.source_ts,
            });
        }
        Ok(())
    }

    /// Tab-separated record in the input field order.
    pub fn to_record(&self) -> String {
        format!(
            "{}\t{}\t{}\t{}\t{}",
            self.user_id, self.retweet_id, self.retweet_ts, self.source_tweet_id, self.source_ts
        )
    }
}

/// Half-open analysis window `[t_ref, t_ref + duration_s)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnalysisWindow {
    pub t_ref: i64,
    pub duration_s: i64,
}

impl AnalysisWindow {
    pub fn new(t_ref: i64, duration_s: i64) -> Result<Self> {
        if duration_s <= 0 {
            return Err(Error::Config(format!(
                "window duration must be positive, got {duration_s}"
            )));
        }
        Ok(Self { t_ref, duration_s })
    }

    pub fn from_days(t_ref: i64, days: i64) -> Result<Self> {
        Self::new(t_ref, days.saturating_mul(SECONDS_PER_DAY))
    }

    pub fn end(&self) -> i64 {
        self.t_ref + self.duration_s
    }

    pub fn days(&self) -> f64 {
        self.duration_s as f64 / SECONDS_PER_DAY as f64
    }

    pub fn contains(&self, ts: i64) -> bool {
        ts >= self.t_ref && ts < self.end()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UserSeries {
    pub user_id: String,
    pub events: Vec<RetweetEvent>,
    pub window: AnalysisWindow,
}

impl UserSeries {
    pub fn n_retweets(&self) -> usize {
        self.events.len()
    }

    /// Mean retweets per day over the whole window.
    pub fn rate_per_day(&self) -> f64 {
        self.events.len() as f64 / self.window.days()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RleSequence {
    pub values: Vec<i64>,
    pub n_retweets: usize,
}

impl RleSequence {
    pub fn new(values: Vec<i64>) -> Result<Self> {
        validate_rle(&values)?;
        let n_retweets = values.iter().filter(|&&v| v > 0).count();
        Ok(Self { values, n_retweets })
    }

    /// Number of seconds covered: one per positive entry plus every idle run.
    pub fn covered_seconds(&self) -> u64 {
        self.values
            .iter()
            .map(|&v| if v > 0 { 1 } else { v.unsigned_abs() })
            .sum()
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

fn validate_rle(values: &[i64]) -> Result<()> {
    let mut prev_negative = false;
    for (i, &v) in values.iter().enumerate() {
        if v == 0 {
            return Err(Error::MalformedSequence(format!("zero entry at index {i}")));
        }
        let negative = v < 0;
        if negative && prev_negative {
            return Err(Error::MalformedSequence(format!(
                "consecutive negative entries at index {}",
                i - 1
            )));
        }
        prev_negative = negative;
    }
    Ok(())
}

#[derive(Debug, Default)]
pub struct ParseReport {
    pub events: Vec<RetweetEvent>,
    /// `(1-based line number, reason)` for every skipped line.
    pub rejected: Vec<(usize, String)>,
}

fn parse_line(line: &str, line_no: usize) -> Result<RetweetEvent> {
    let fields: Vec<&str> = line.split('\t').collect();
    if fields.len() != 5 {
        return Err(Error::Parse {
            line: line_no,
            reason: format!("expected 5 tab-separated fields, found {}", fields.len()),
        });
    }
    let ts = |s: &str, name: &str| -> Result<i64> {
        s.trim().parse::<i64>().map_err(|e| Error::Parse {
            line: line_no,
            reason: format!("bad {name} '{s}': {e}"),
        })
    };
    let non_empty = |s: &str, name: &str| -> Result<String> {
        if s.is_empty() {
            Err(Error::Parse {
                line: line_no,
                reason: format!("empty {name}"),
            })
        } else {
            Ok(s.to_string())
        }
    };
    let event = RetweetEvent {
        user_id: non_empty(fields[0], "user_id")?,
        retweet_id: non_empty(fields[1], "retweet_id")?,
        retweet_ts: ts(fields[2], "retweet_ts")?,
        source_tweet_id: non_empty(fields[3], "source_tweet_id")?,
        source_ts: ts(fields[4], "source_ts")?,
    };
    event.check_causality()?;
    Ok(event)
}

/// Parses newline-delimited tab-separated retweet records.
///
/// Blank lines are ignored. A malformed or acausal line is skipped with a
/// warning, or aborts the parse when `strict` is set.
pub fn parse_events<R: BufRead>(reader: R, strict: bool) -> Result<ParseReport> {
    let mut report = ParseReport::default();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|e| Error::io("<event stream>", e))?;
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        match parse_line(line, line_no) {
            Ok(event) => report.events.push(event),
            Err(e) if strict => {
                return Err(match e {
                    Error::Causality { .. } => Error::Parse {
                        line: line_no,
                        reason: e.to_string(),
                    },
                    other => other,
                })
            }
            Err(e) => {
                warn!("skipping line {line_no}: {e}");
                report.rejected.push((line_no, e.to_string()));
            }
        }
    }
    Ok(report)
}

/// Groups events per user, keeps those inside the window and sorts each
/// user's events by `(retweet_ts, retweet_id)`.
pub fn build_user_series(
    events: &[RetweetEvent],
    window: AnalysisWindow,
) -> BTreeMap<String, UserSeries> {
    let mut map: BTreeMap<String, UserSeries> = BTreeMap::new();
    for event in events.iter().filter(|e| window.contains(e.retweet_ts)) {
        map.entry(event.user_id.clone())
            .or_insert_with(|| UserSeries {
                user_id: event.user_id.clone(),
                events: Vec::new(),
                window,
            })
            .events
            .push(event.clone());
    }
    for series in map.values_mut() {
        series.events.sort_by(|a, b| {
            (a.retweet_ts, &a.retweet_id, a.source_ts, &a.source_tweet_id).cmp(&(
                b.retweet_ts,
                &b.retweet_id,
                b.source_ts,
                &b.source_tweet_id,
            ))
        });
    }
    map
}

/// Keeps users whose mean retweets per day lies in `[min_rate, max_rate]`.
pub fn filter_users(
    series: BTreeMap<String, UserSeries>,
    min_rate: f64,
    max_rate: f64,
) -> Result<BTreeMap<String, UserSeries>> {
    if !(min_rate <= max_rate) {
        return Err(Error::Config(format!(
            "min_rate {min_rate} exceeds max_rate {max_rate}"
        )));
    }
    Ok(series
        .into_iter()
        .filter(|(_, s)| {
            let rate = s.rate_per_day();
            rate >= min_rate && rate <= max_rate
        })
        .collect())
}

/// Observation recorded at a retweet second. A source published exactly at
/// `t_ref` would yield 0, which is reserved for idle seconds, so it maps to 1.
pub fn observation(source_ts: i64, t_ref: i64) -> i64 {
    (source_ts - t_ref).abs().max(1)
}

/// Streams the series into its compressed form without materialising the
/// per-second array. Two retweets in the same second become consecutive
/// positive entries in arrival order.
pub fn rle_encode(series: &UserSeries) -> Result<RleSequence> {
    let window = series.window;
    let mut values = Vec::with_capacity(series.events.len() * 2 + 1);
    // next second not yet emitted, relative to t_ref
    let mut cursor: i64 = 0;
    let mut last_offset: Option<i64> = None;
    for event in &series.events {
        if !window.contains(event.retweet_ts) {
            return Err(Error::Internal(format!(
                "retweet {} at {} outside window [{}, {})",
                event.retweet_id,
                event.retweet_ts,
                window.t_ref,
                window.end()
            )));
        }
        let offset = event.retweet_ts - window.t_ref;
        match last_offset {
            Some(prev) if offset < prev => {
                return Err(Error::Internal(format!(
                    "events of user {} are not sorted",
                    series.user_id
                )))
            }
            Some(prev) if offset == prev => {}
            _ => {
                if offset > cursor {
                    values.push(-(offset - cursor));
                }
                cursor = offset + 1;
            }
        }
        values.push(observation(event.source_ts, window.t_ref));
        last_offset = Some(offset);
    }
    if cursor < window.duration_s {
        values.push(-(window.duration_s - cursor));
    }
    let n_retweets = series.events.len();
    Ok(RleSequence { values, n_retweets })
}

/// Sparse per-second series: `(second offset, value)` for non-idle seconds.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DecodedSeries {
    pub len: u64,
    pub entries: Vec<(u64, i64)>,
}

impl DecodedSeries {
    pub fn to_dense(&self) -> Vec<i64> {
        let mut dense = vec![0; self.len as usize];
        for &(sec, v) in &self.entries {
            dense[sec as usize] = v;
        }
        dense
    }

    /// Reconstructs events that encode back to the same sequence. Sources are
    /// placed before `t_ref` so causality holds trivially.
    pub fn to_events(&self, user_id: &str, window: AnalysisWindow) -> Vec<RetweetEvent> {
        self.entries
            .iter()
            .enumerate()
            .map(|(i, &(sec, v))| RetweetEvent {
                user_id: user_id.to_string(),
                retweet_id: format!("{user_id}-{i:08}"),
                retweet_ts: window.t_ref + sec as i64,
                source_tweet_id: format!("src-{i}"),
                source_ts: window.t_ref - v,
            })
            .collect()
    }
}

/// Expands a compressed sequence. The result is at most the window length;
/// a shorter sequence leaves the remaining seconds idle.
pub fn rle_decode(rle: &RleSequence, window: AnalysisWindow) -> Result<DecodedSeries> {
    validate_rle(&rle.values)?;
    let mut sec: u64 = 0;
    let mut entries = Vec::with_capacity(rle.n_retweets);
    for &v in &rle.values {
        if v > 0 {
            entries.push((sec, v));
            sec += 1;
        } else {
            sec += v.unsigned_abs();
        }
    }
    let len = window.duration_s as u64;
    if sec > len {
        return Err(Error::MalformedSequence(format!(
            "sequence covers {sec} seconds, window has {len}"
        )));
    }
    Ok(DecodedSeries { len, entries })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ev(user: &str, id: &str, rt: i64, src: i64) -> RetweetEvent {
        RetweetEvent {
            user_id: user.into(),
            retweet_id: id.into(),
            retweet_ts: rt,
            source_tweet_id: format!("s{id}"),
            source_ts: src,
        }
    }

    #[test]
    fn parses_valid_record() {
        let input = "u1\tr1\t100\tsr1\t90\n";
        let report = parse_events(input.as_bytes(), false).unwrap();
        assert_eq!(report.events, vec![ev("u1", "r1", 100, 90)]);
        assert!(report.rejected.is_empty());
    }

    #[test]
    fn causality_violation_is_rejected() {
        let input = "u1\tr1\t100\ts1\t190\nu1\tr2\t200\ts2\t150\n";
        let report = parse_events(input.as_bytes(), false).unwrap();
        assert_eq!(report.events.len(), 1);
        assert_eq!(report.rejected.len(), 1);
        assert!(report.rejected[0].1.contains("causality"));
        assert!(parse_events(input.as_bytes(), true).is_err());
    }

    #[test]
    fn malformed_lines_are_counted() {
        let input = "u1\tr1\tabc\ts1\t90\nonly\ttwo\n\nu2\tr3\t5\ts3\t5\n";
        let report = parse_events(input.as_bytes(), false).unwrap();
        assert_eq!(report.events.len(), 1);
        assert_eq!(
            report.rejected.iter().map(|r| r.0).collect::<Vec<_>>(),
            vec![1, 2]
        );
    }

    #[test]
    fn series_grouping_and_boundary() {
        let w = AnalysisWindow::new(0, 100).unwrap();
        let events = vec![
            ev("A", "1", 5, 0),
            ev("A", "2", 3, 0),
            ev("A", "3", 7, 0),
            ev("B", "4", 1, 0),
            ev("B", "5", 100, 0),
        ];
        let map = build_user_series(&events, w);
        assert_eq!(map.len(), 2);
        let a: Vec<i64> = map["A"].events.iter().map(|e| e.retweet_ts).collect();
        assert_eq!(a, vec![3, 5, 7]);
        assert_eq!(map["B"].events.len(), 1);
    }

    #[test]
    fn filter_bounds_inclusive() {
        let w = AnalysisWindow::from_days(0, 14).unwrap();
        let mk = |user: &str, n: usize| UserSeries {
            user_id: user.into(),
            events: (0..n)
                .map(|i| ev(user, &i.to_string(), i as i64, 0))
                .collect(),
            window: w,
        };
        let mut map = BTreeMap::new();
        for (u, n) in [("low", 28), ("zero", 0), ("high", 701), ("top", 700)] {
            map.insert(u.to_string(), mk(u, n));
        }
        let kept = filter_users(map, 2.0, 50.0).unwrap();
        assert_eq!(kept.keys().collect::<Vec<_>>(), vec!["low", "top"]);
        assert!(filter_users(BTreeMap::new(), 3.0, 2.0).is_err());
    }

    #[test]
    fn worked_compression_example() {
        // per-second prefix 3,0,0,0,4,0,6,9 then idle up to a final 20
        let w = AnalysisWindow::new(1000, 12).unwrap();
        let obs = [(0, 3), (4, 4), (6, 6), (7, 9), (11, 20)];
        let events: Vec<_> = obs
            .iter()
            .enumerate()
            .map(|(i, &(sec, v))| ev("u", &i.to_string(), 1000 + sec, 1000 - v))
            .collect();
        let series = UserSeries {
            user_id: "u".into(),
            events,
            window: w,
        };
        let rle = rle_encode(&series).unwrap();
        assert_eq!(rle.values, vec![3, -3, 4, -1, 6, 9, -3, 20]);
        assert_eq!(rle.n_retweets, 5);
    }

    #[test]
    fn empty_series_is_one_idle_run() {
        let w = AnalysisWindow::new(0, 500).unwrap();
        let series = UserSeries {
            user_id: "u".into(),
            events: vec![],
            window: w,
        };
        assert_eq!(rle_encode(&series).unwrap().values, vec![-500]);
    }

    #[test]
    fn decode_examples() {
        let w = AnalysisWindow::new(0, 5).unwrap();
        let d = rle_decode(&RleSequence::new(vec![3, -3, 4]).unwrap(), w).unwrap();
        assert_eq!(d.to_dense(), vec![3, 0, 0, 0, 4]);
        let d = rle_decode(&RleSequence::new(vec![-5]).unwrap(), w).unwrap();
        assert_eq!(d.to_dense(), vec![0; 5]);
        let bad = RleSequence {
            values: vec![3, -1, -2],
            n_retweets: 1,
        };
        assert!(matches!(
            rle_decode(&bad, w),
            Err(Error::MalformedSequence(_))
        ));
    }

    #[test]
    fn same_second_collision_keeps_both() {
        let w = AnalysisWindow::new(0, 10).unwrap();
        let series = UserSeries {
            user_id: "u".into(),
            events: vec![ev("u", "a", 2, -5), ev("u", "b", 2, -7)],
            window: w,
        };
        let rle = rle_encode(&series).unwrap();
        assert_eq!(rle.values, vec![-2, 5, 7, -7]);
        assert_eq!(rle.covered_seconds(), 11);
    }

    #[test]
    fn source_at_reference_is_nonzero() {
        assert_eq!(observation(100, 100), 1);
        assert_eq!(observation(40, 100), 60);
    }

    #[test]
    fn zero_duration_window_rejected() {
        assert!(AnalysisWindow::new(0, 0).is_err());
    }
}
