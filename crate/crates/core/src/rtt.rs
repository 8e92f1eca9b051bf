//! ReTweet-Tweet scatterplots rendered as SVG.
//!
//! x is the retweet time, y the original tweet time, both on one shared
//! axis range so the main diagonal is the zero-delay line. Causality keeps
//! every point on or below it. Pixel positions are computed in integer
//! hundredths of a pixel and rounded away from the diagonal, so the
//! rendered markers keep that property exactly.

use std::fmt::Write as _;

use crate::ingest::{AnalysisWindow, UserSeries};

pub const PLOT_SIZE: i64 = 600;
pub const MARGIN: i64 = 60;
pub const CANVAS: i64 = PLOT_SIZE + 2 * MARGIN;
pub const DELAY_BINS: usize = 40;
pub const MARKER_RADIUS: f64 = 1.0;

pub const PALETTE: [&str; 12] = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f",
    "#bcbd22", "#17becf", "#393b79", "#637939",
];

/// Shade steps used once the palette has been cycled through.
const SHADES: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RttPoint {
    pub retweet_ts: i64,
    pub source_ts: i64,
    /// Index of the owning account within the figure.
    pub account: usize,
}

impl RttPoint {
    pub fn delay(&self) -> i64 {
        self.retweet_ts - self.source_ts
    }
}

/// Log-spaced histogram of retweet delays.
#[derive(Debug, Clone, PartialEq)]
pub struct DelayHistogram {
    /// `DELAY_BINS + 1` edges in log10 seconds.
    pub edges: Vec<f64>,
    pub counts: Vec<u64>,
    /// log10 position of every delay, clamped to the edge range.
    pub rug: Vec<f64>,
}

impl DelayHistogram {
    /// Bins span 1 s up to `max_delay`. Delays outside that range land in
    /// the first or last bin so every point is counted.
    pub fn new(delays: impl IntoIterator<Item = i64>, max_delay: i64) -> Self {
        let hi = (max_delay.max(10) as f64).log10();
        let edges: Vec<f64> = (0..=DELAY_BINS).map(|k| hi * k as f64 / DELAY_BINS as f64).collect();
        let mut counts = vec![0u64; DELAY_BINS];
        let mut rug = Vec::new();
        for d in delays {
            let x = (d.max(1) as f64).log10().clamp(0.0, hi);
            let bin = ((x / hi * DELAY_BINS as f64) as usize).min(DELAY_BINS - 1);
            counts[bin] += 1;
            rug.push(x);
        }
        Self { edges, counts, rug }
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Empirical density per bin in log10-seconds units.
    pub fn density(&self) -> Vec<f64> {
        let n = self.total();
        if n == 0 {
            return vec![0.0; self.counts.len()];
        }
        let width = self.edges[1] - self.edges[0];
        self.counts.iter().map(|&c| c as f64 / (n as f64 * width)).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RttFigure {
    pub accounts: Vec<String>,
    pub points: Vec<RttPoint>,
    /// Shared axis range `[lo, hi]` in epoch seconds.
    pub lo: i64,
    pub hi: i64,
    pub inset: DelayHistogram,
    pub zoom: Option<(i64, i64)>,
}

/// Maps `t` in `[lo, hi]` onto `[0, PLOT_SIZE]` in hundredths of a pixel,
/// rounding up.
fn offset_ceil(t: i64, lo: i64, hi: i64, size: i64) -> i64 {
    let num = (t - lo) as i128 * size as i128 * 100;
    let den = (hi - lo).max(1) as i128;
    ((num + den - 1).div_euclid(den)) as i64
}

fn hundredths(v: i64) -> String {
    let sign = if v < 0 { "-" } else { "" };
    let a = v.abs();
    format!("{sign}{}.{:02}", a / 100, a % 100)
}

/// Square plotting frame: origin at the top-left corner, side `size` px.
#[derive(Debug, Clone, Copy)]
struct Frame {
    x0: i64,
    y0: i64,
    size: i64,
    lo: i64,
    hi: i64,
}

impl Frame {
    /// Marker position in hundredths of a pixel. x is rounded right and y
    /// rounded down, which can only move a point further from the diagonal.
    fn place(&self, p: &RttPoint) -> (i64, i64) {
        let x = self.x0 * 100 + offset_ceil(p.retweet_ts, self.lo, self.hi, self.size);
        let y = self.y0 * 100 + offset_ceil(self.hi - p.source_ts + self.lo, self.lo, self.hi, self.size);
        (x, y)
    }

    fn diagonal(&self) -> String {
        format!(
            "<line class=\"diagonal\" x1=\"{}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"#444\" stroke-width=\"1\"/>\n",
            self.x0,
            self.y0 + self.size,
            self.x0 + self.size,
            self.y0
        )
    }

    fn border(&self, class: &str) -> String {
        format!(
            "<rect class=\"{class}\" x=\"{}\" y=\"{}\" width=\"{}\" height=\"{}\" fill=\"white\" stroke=\"black\" stroke-width=\"1\"/>\n",
            self.x0, self.y0, self.size, self.size
        )
    }
}

/// Distinct colour for account `i`: the palette is cycled, and each pass
/// through it is blended further toward white.
pub fn account_color(i: usize) -> String {
    let base = PALETTE[i % PALETTE.len()];
    let shade = (i / PALETTE.len()) % SHADES;
    let channel = |k: usize| u8::from_str_radix(&base[1 + 2 * k..3 + 2 * k], 16).unwrap_or(0);
    let mix = shade as f64 * 0.2;
    let blend = |c: u8| (c as f64 + (255.0 - c as f64) * mix).round() as u8;
    format!("#{:02x}{:02x}{:02x}", blend(channel(0)), blend(channel(1)), blend(channel(2)))
}

impl RttFigure {
    pub fn new(series: &[&UserSeries], window: AnalysisWindow, zoom: Option<(i64, i64)>) -> Self {
        let mut points = Vec::new();
        for (account, s) in series.iter().enumerate() {
            points.extend(s.events.iter().map(|e| RttPoint {
                retweet_ts: e.retweet_ts,
                source_ts: e.source_ts,
                account,
            }));
        }
        let lo = points.iter().map(|p| p.source_ts).chain([window.t_ref]).min().unwrap_or(window.t_ref);
        let hi = points.iter().map(|p| p.retweet_ts).chain([window.end()]).max().unwrap_or(window.end());
        let inset = DelayHistogram::new(points.iter().map(RttPoint::delay), window.duration_s);
        Self {
            accounts: series.iter().map(|s| s.user_id.clone()).collect(),
            points,
            lo,
            hi,
            inset,
            zoom: zoom.filter(|(a, b)| b > a),
        }
    }

    fn main_frame(&self) -> Frame {
        Frame {
            x0: MARGIN,
            y0: MARGIN,
            size: PLOT_SIZE,
            lo: self.lo,
            hi: self.hi,
        }
    }

    /// Marker centres of the main plot in hundredths of a pixel.
    pub fn marker_positions(&self) -> Vec<(i64, i64)> {
        let f = self.main_frame();
        self.points.iter().map(|p| f.place(p)).collect()
    }

    pub fn to_svg(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "<svg xmlns=\"http://www.w3.org/2000/svg\" version=\"1.1\" width=\"{CANVAS}\" height=\"{CANVAS}\" viewBox=\"0 0 {CANVAS} {CANVAS}\">"
        );
        out.push_str("<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n");
        let frame = self.main_frame();
        out.push_str(&frame.border("frame"));
        self.axes(&mut out);
        out.push_str(&frame.diagonal());
        self.markers(&mut out, &frame, self.points.iter(), "markers");
        self.delay_inset(&mut out);
        if let Some(z) = self.zoom {
            self.zoom_inset(&mut out, z);
        }
        out.push_str("</svg>\n");
        out
    }

    fn markers<'a>(&self, out: &mut String, frame: &Frame, points: impl Iterator<Item = &'a RttPoint>, class: &str) {
        let _ = writeln!(out, "<g class=\"{class}\" stroke=\"none\">");
        for p in points {
            let (x, y) = frame.place(p);
            let _ = writeln!(
                out,
                "<circle cx=\"{}\" cy=\"{}\" r=\"{MARKER_RADIUS}\" fill=\"{}\"/>",
                hundredths(x),
                hundredths(y),
                account_color(p.account)
            );
        }
        out.push_str("</g>\n");
    }

    fn axes(&self, out: &mut String) {
        let span = (self.hi - self.lo).max(1);
        let day = 86_400;
        let step = ((span / day) / 7 + 1) * day;
        out.push_str("<g class=\"axes\" font-family=\"sans-serif\" font-size=\"10\" fill=\"black\">\n");
        let mut t = self.lo + (day - self.lo.rem_euclid(day)) % day;
        while t <= self.hi {
            let off = offset_ceil(t, self.lo, self.hi, PLOT_SIZE);
            let x = MARGIN * 100 + off;
            let y = (MARGIN + PLOT_SIZE) * 100 - off;
            let label = format!("d{}", (t - self.lo) / day);
            let _ = writeln!(
                out,
                "<line x1=\"{0}\" y1=\"{1}\" x2=\"{0}\" y2=\"{2}\" stroke=\"black\"/><text x=\"{0}\" y=\"{3}\" text-anchor=\"middle\">{label}</text>",
                hundredths(x),
                MARGIN + PLOT_SIZE,
                MARGIN + PLOT_SIZE + 4,
                MARGIN + PLOT_SIZE + 16
            );
            let _ = writeln!(
                out,
                "<line x1=\"{0}\" y1=\"{1}\" x2=\"{2}\" y2=\"{1}\" stroke=\"black\"/><text x=\"{3}\" y=\"{1}\" text-anchor=\"end\">{label}</text>",
                MARGIN - 4,
                hundredths(y),
                MARGIN,
                MARGIN - 6
            );
            t += step;
        }
        let mid = MARGIN + PLOT_SIZE / 2;
        let _ = writeln!(
            out,
            "<text x=\"{mid}\" y=\"{}\" text-anchor=\"middle\">retweet time</text>",
            CANVAS - 20
        );
        let _ = writeln!(
            out,
            "<text x=\"20\" y=\"{mid}\" text-anchor=\"middle\" transform=\"rotate(-90 20 {mid})\">original tweet time</text>"
        );
        out.push_str("</g>\n");
    }

    fn delay_inset(&self, out: &mut String) {
        let size = PLOT_SIZE / 2 - 20;
        let x0 = MARGIN + PLOT_SIZE / 2 + 10;
        let y0 = MARGIN + PLOT_SIZE / 2 + 10;
        out.push_str("<g class=\"delay-inset\">\n");
        let _ = writeln!(
            out,
            "<rect x=\"{x0}\" y=\"{y0}\" width=\"{size}\" height=\"{size}\" fill=\"white\" stroke=\"black\" stroke-width=\"1\"/>"
        );
        let hist = &self.inset;
        let rug_h = 10;
        let plot_h = size - rug_h - 20;
        let base = y0 + size - rug_h - 14;
        let density = hist.density();
        let peak = density.iter().cloned().fold(0.0, f64::max);
        let bar_w = size as f64 / DELAY_BINS as f64;
        for (k, (&c, &d)) in hist.counts.iter().zip(&density).enumerate() {
            let h = if peak > 0.0 { d / peak * plot_h as f64 } else { 0.0 };
            let _ = writeln!(
                out,
                "<rect class=\"bin\" data-count=\"{c}\" x=\"{:.2}\" y=\"{:.2}\" width=\"{:.2}\" height=\"{:.2}\" fill=\"#888\"/>",
                x0 as f64 + k as f64 * bar_w,
                base as f64 - h,
                bar_w,
                h
            );
        }
        let hi = *hist.edges.last().unwrap_or(&1.0);
        let _ = writeln!(out, "<g class=\"rug\" stroke=\"black\" stroke-width=\"0.5\">");
        for r in &hist.rug {
            let x = x0 as f64 + r / hi * size as f64;
            let _ = writeln!(out, "<line x1=\"{x:.2}\" y1=\"{}\" x2=\"{x:.2}\" y2=\"{}\"/>", base + 2, base + 2 + rug_h);
        }
        out.push_str("</g>\n");
        let _ = writeln!(
            out,
            "<text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"9\" text-anchor=\"middle\">log10 delay (s)</text>",
            x0 + size / 2,
            y0 + size - 2
        );
        out.push_str("</g>\n");
    }

    fn zoom_inset(&self, out: &mut String, (t0, t1): (i64, i64)) {
        let inside: Vec<&RttPoint> = self
            .points
            .iter()
            .filter(|p| p.retweet_ts >= t0 && p.retweet_ts <= t1)
            .collect();
        let lo = inside.iter().map(|p| p.source_ts).chain([t0]).min().unwrap_or(t0);
        let frame = Frame {
            x0: MARGIN + 10,
            y0: MARGIN + 10,
            size: PLOT_SIZE / 2 - 20,
            lo,
            hi: t1,
        };
        let _ = writeln!(out, "<g class=\"zoom-inset\" data-t0=\"{t0}\" data-t1=\"{t1}\">");
        out.push_str(&frame.border("zoom-frame"));
        out.push_str(&frame.diagonal());
        self.markers(out, &frame, inside.into_iter(), "zoom-markers");
        out.push_str("</g>\n");
    }
}

pub fn rtt_single(series: &UserSeries, window: AnalysisWindow) -> String {
    RttFigure::new(&[series], window, None).to_svg()
}

pub fn rtt_group(series: &[&UserSeries], window: AnalysisWindow, zoom: Option<(i64, i64)>) -> String {
    RttFigure::new(series, window, zoom).to_svg()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::RetweetEvent;

    fn series(events: &[(i64, i64)], window: AnalysisWindow) -> UserSeries {
        UserSeries {
            user_id: "u".into(),
            events: events
                .iter()
                .enumerate()
                .map(|(k, &(r, s))| RetweetEvent {
                    user_id: "u".into(),
                    retweet_id: format!("r{k}"),
                    retweet_ts: r,
                    source_tweet_id: format!("s{k}"),
                    source_ts: s,
                })
                .collect(),
            window,
        }
    }

    #[test]
    fn hundredths_format() {
        assert_eq!(hundredths(12345), "123.45");
        assert_eq!(hundredths(7), "0.07");
        assert_eq!(hundredths(-150), "-1.50");
    }

    #[test]
    fn single_point_maps_affinely() {
        let w = AnalysisWindow::new(0, 1000).unwrap();
        let fig = RttFigure::new(&[&series(&[(500, 250)], w)], w, None);
        // x: 60 + 500/1000*600 = 360, y: 60 + (1000-250)/1000*600 = 510
        assert_eq!(fig.marker_positions(), vec![(36000, 51000)]);
    }

    #[test]
    fn zero_delay_sits_on_diagonal() {
        let w = AnalysisWindow::new(0, 7).unwrap();
        let fig = RttFigure::new(&[&series(&[(3, 3)], w)], w, None);
        let (x, y) = fig.marker_positions()[0];
        assert!(x + y >= (2 * MARGIN + PLOT_SIZE) * 100);
    }

    #[test]
    fn histogram_clamps_into_range() {
        let h = DelayHistogram::new([0, 1, 10, 1_000_000_000], 1000);
        assert_eq!(h.total(), 4);
        assert_eq!(h.counts[0], 2);
        assert_eq!(h.counts[DELAY_BINS - 1], 1);
    }

    #[test]
    fn colors_distinct_across_cycles() {
        let colors: std::collections::BTreeSet<String> = (0..48).map(account_color).collect();
        assert_eq!(colors.len(), 48);
        assert_eq!(account_color(0), PALETTE[0]);
        assert_eq!(account_color(12), account_color(60));
    }
}
