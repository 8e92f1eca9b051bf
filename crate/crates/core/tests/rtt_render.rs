use std::collections::BTreeSet;

use rtbust_core::ingest::{build_user_series, AnalysisWindow, RetweetEvent, UserSeries};
use rtbust_core::rtt::{rtt_group, rtt_single, RttFigure, MARGIN, PLOT_SIZE};
use rtbust_core::synth::{gen_corpus, BehaviorKind, CorpusSpec, LabeledCorpus};

const SVG_NS: &str = "http://www.w3.org/2000/svg";

/// Parses the document and checks the root element and numeric geometry.
fn validate_svg(text: &str) -> roxmltree::Document<'_> {
    let doc = roxmltree::Document::parse(text).expect("well-formed xml");
    let root = doc.root_element();
    assert_eq!(root.tag_name().name(), "svg");
    assert_eq!(root.tag_name().namespace(), Some(SVG_NS));
    for attr in ["width", "height", "viewBox"] {
        assert!(root.attribute(attr).is_some(), "missing {attr}");
    }
    for node in doc.descendants().filter(|n| n.is_element()) {
        assert_eq!(node.tag_name().namespace(), Some(SVG_NS));
        let numeric: &[&str] = match node.tag_name().name() {
            "circle" => &["cx", "cy", "r"],
            "line" => &["x1", "y1", "x2", "y2"],
            "rect" if node.attribute("x").is_some() => &["x", "y", "width", "height"],
            _ => &[],
        };
        for a in numeric {
            let v: f64 = node.attribute(*a).unwrap_or_else(|| panic!("missing {a}")).parse().unwrap();
            assert!(v.is_finite());
        }
    }
    doc
}

fn markers<'a>(doc: &'a roxmltree::Document<'a>) -> Vec<roxmltree::Node<'a, 'a>> {
    doc.descendants()
        .filter(|n| n.attribute("class") == Some("markers"))
        .flat_map(|g| g.children().filter(|c| c.has_tag_name("circle")))
        .collect()
}

fn series_of(user: &str, events: &[(i64, i64)], window: AnalysisWindow) -> UserSeries {
    UserSeries {
        user_id: user.into(),
        events: events
            .iter()
            .enumerate()
            .map(|(k, &(r, s))| RetweetEvent {
                user_id: user.into(),
                retweet_id: format!("{user}-{k}"),
                retweet_ts: r,
                source_tweet_id: format!("s{k}"),
                source_ts: s,
            })
            .collect(),
        window,
    }
}

fn diagonal_sum() -> i64 {
    (2 * MARGIN + PLOT_SIZE) * 100
}

#[test]
fn empty_series_is_valid_with_axes_and_diagonal() {
    let w = AnalysisWindow::from_days(0, 14).unwrap();
    let svg = rtt_single(&series_of("u", &[], w), w);
    let doc = validate_svg(&svg);
    assert!(markers(&doc).is_empty());
    assert!(doc.descendants().any(|n| n.attribute("class") == Some("diagonal")));
    assert!(doc.descendants().any(|n| n.attribute("class") == Some("axes")));
}

#[test]
fn single_point_is_one_valid_marker() {
    let w = AnalysisWindow::from_days(0, 14).unwrap();
    let svg = rtt_single(&series_of("u", &[(86_400, 3_600)], w), w);
    let doc = validate_svg(&svg);
    let m = markers(&doc);
    assert_eq!(m.len(), 1);
    // x = 60 + 86400 / 1209600 * 600, y = 60 + (1209600 - 3600) / 1209600 * 600
    let cx: f64 = m[0].attribute("cx").unwrap().parse().unwrap();
    let cy: f64 = m[0].attribute("cy").unwrap().parse().unwrap();
    assert!((cx - (60.0 + 86_400.0 / 1_209_600.0 * 600.0)).abs() <= 0.01);
    assert!((cy - (60.0 + 1_206_000.0 / 1_209_600.0 * 600.0)).abs() <= 0.01);
}

fn synthetic() -> (LabeledCorpus, Vec<UserSeries>) {
    let corpus = gen_corpus(&CorpusSpec::with_counts(8, 6, 6, 6), 17).unwrap();
    let series = build_user_series(&corpus.events, corpus.window).into_values().collect();
    (corpus, series)
}

#[test]
fn no_marker_above_the_diagonal_on_synthetic_figures() {
    let (corpus, series) = synthetic();
    let all: Vec<&UserSeries> = series.iter().collect();
    let mut figures: Vec<RttFigure> = series.iter().map(|s| RttFigure::new(&[s], corpus.window, None)).collect();
    figures.push(RttFigure::new(&all, corpus.window, None));
    for fig in &figures {
        for (x, y) in fig.marker_positions() {
            assert!(x + y >= diagonal_sum(), "marker ({x}, {y}) above the diagonal");
        }
        validate_svg(&fig.to_svg());
    }
}

#[test]
fn straight_line_bots_hug_the_diagonal() {
    let (corpus, series) = synthetic();
    for s in series.iter().filter(|s| corpus.kinds[&s.user_id] == BehaviorKind::StraightLine) {
        let fig = RttFigure::new(&[s], corpus.window, None);
        let span = (fig.hi - fig.lo) as f64;
        // a 10 s delay moves x + y by this many hundredths, plus rounding slack
        let band = (10.0 / span * PLOT_SIZE as f64 * 100.0).ceil() as i64 + 2;
        let pos = fig.marker_positions();
        let near = pos.iter().filter(|(x, y)| x + y - diagonal_sum() <= band).count();
        assert!(near * 100 >= pos.len() * 99, "{}: {near} of {} within band", s.user_id, pos.len());
    }
}

#[test]
fn rendering_is_byte_deterministic() {
    let (corpus, series) = synthetic();
    let all: Vec<&UserSeries> = series.iter().collect();
    let zoom = Some((corpus.window.t_ref, corpus.window.t_ref + 86_400));
    assert_eq!(rtt_group(&all, corpus.window, zoom), rtt_group(&all, corpus.window, zoom));
    let (again, again_series) = synthetic();
    let again_all: Vec<&UserSeries> = again_series.iter().collect();
    assert_eq!(rtt_group(&all, corpus.window, None), rtt_group(&again_all, again.window, None));
}

#[test]
fn forty_four_accounts_get_distinct_colors() {
    let spec = CorpusSpec::with_counts(0, 44, 0, 0);
    let corpus = gen_corpus(&spec, 2).unwrap();
    let series: Vec<UserSeries> = build_user_series(&corpus.events, corpus.window).into_values().collect();
    assert_eq!(series.len(), 44);
    let refs: Vec<&UserSeries> = series.iter().collect();
    let svg = rtt_group(&refs, corpus.window, None);
    let doc = validate_svg(&svg);
    let m = markers(&doc);
    let colors: BTreeSet<&str> = m.iter().map(|c| c.attribute("fill").unwrap()).collect();
    assert_eq!(colors.len(), 44);
    // group marker count equals the per-account event counts
    assert_eq!(m.len(), series.iter().map(|s| s.events.len()).sum::<usize>());
}

#[test]
fn one_account_group_matches_single() {
    let (corpus, series) = synthetic();
    assert_eq!(rtt_group(&[&series[0]], corpus.window, None), rtt_single(&series[0], corpus.window));
}

#[test]
fn inset_counts_every_plotted_point() {
    let (corpus, series) = synthetic();
    let all: Vec<&UserSeries> = series.iter().collect();
    let fig = RttFigure::new(&all, corpus.window, None);
    assert_eq!(fig.inset.total() as usize, fig.points.len());
    let doc_text = fig.to_svg();
    let doc = validate_svg(&doc_text);
    let counted: u64 = doc
        .descendants()
        .filter(|n| n.attribute("class") == Some("bin"))
        .map(|n| n.attribute("data-count").unwrap().parse::<u64>().unwrap())
        .sum();
    assert_eq!(counted as usize, fig.points.len());
    assert_eq!(fig.inset.rug.len(), fig.points.len());
}

#[test]
fn zoom_inset_only_holds_points_in_range() {
    let w = AnalysisWindow::new(0, 1000).unwrap();
    let s = series_of("u", &[(100, 50), (500, 400), (900, 10)], w);
    let svg = rtt_group(&[&s], w, Some((400, 600)));
    let doc = validate_svg(&svg);
    let zoomed = doc
        .descendants()
        .filter(|n| n.attribute("class") == Some("zoom-markers"))
        .flat_map(|g| g.children().filter(|c| c.has_tag_name("circle")))
        .count();
    assert_eq!(zoomed, 1);
}
