//! Plain-text artifact formats shared by the CLI and the pipeline.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;

use crate::cluster::ClusterLabeling;
use crate::detect::{DetectionResult, Label, MetricsReport, Provenance};
use crate::error::{Error, Result};
use crate::ingest::{AnalysisWindow, RleSequence};
use crate::linproj::{CorpusStats, LinearProjector, ProjectorKind};
use crate::vae::{read_block, write_block, Tensor};

pub const PROJECTOR_MAGIC: &str = "RTBUST-PROJ";
pub const PROJECTOR_VERSION: &str = "v1";
const WINDOW_TAG: &str = "#window";

/// Path with `.partial` appended, used while an artifact is being written.
pub fn partial_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".partial");
    PathBuf::from(s)
}

/// Writes `contents` to `path.partial`, then renames it into place.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    let tmp = partial_path(path);
    fs::write(&tmp, contents).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn csv_reader(path: &Path) -> Result<csv::Reader<fs::File>> {
    let f = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::ReaderBuilder::new().has_headers(true).from_reader(f))
}

fn expect_header(reader: &mut csv::Reader<fs::File>, path: &Path, want: &[&str]) -> Result<()> {
    let got = reader.headers()?.clone();
    if got.len() < want.len() || want.iter().zip(got.iter()).any(|(w, g)| *w != g) {
        return Err(Error::Format(format!(
            "{}: expected header starting with {:?}, found {:?}",
            path.display(),
            want,
            got.iter().collect::<Vec<_>>()
        )));
    }
    Ok(())
}

// ---- series file ----------------------------------------------------------

/// One user per line: the id then the encoded values, space separated. The
/// first line records the analysis window.
pub fn series_to_string(window: AnalysisWindow, series: &BTreeMap<String, RleSequence>) -> String {
    let mut out = format!("{WINDOW_TAG} {} {}\n", window.t_ref, window.duration_s);
    for (user, rle) in series {
        out.push_str(user);
        for v in &rle.values {
            let _ = write!(out, " {v}");
        }
        out.push('\n');
    }
    out
}

pub fn parse_series(text: &str) -> Result<(Option<AnalysisWindow>, BTreeMap<String, RleSequence>)> {
    let mut window = None;
    let mut out = BTreeMap::new();
    for (idx, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(rest) = line.strip_prefix(WINDOW_TAG) {
            let nums: Vec<i64> = rest
                .split_whitespace()
                .map(|t| t.parse::<i64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::Parse {
                    line: idx + 1,
                    reason: format!("bad window line: {e}"),
                })?;
            if nums.len() != 2 {
                return Err(Error::Parse {
                    line: idx + 1,
                    reason: "window line needs start and duration".into(),
                });
            }
            window = Some(AnalysisWindow::new(nums[0], nums[1])?);
            continue;
        }
        if line.starts_with('#') {
            continue;
        }
        let mut parts = line.split_whitespace();
        let user = parts.next().unwrap_or_default().to_string();
        let values = parts
            .map(|t| t.parse::<i64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::Parse {
                line: idx + 1,
                reason: format!("bad value for {user}: {e}"),
            })?;
        let rle = RleSequence::new(values).map_err(|e| Error::Parse {
            line: idx + 1,
            reason: e.to_string(),
        })?;
        if out.insert(user.clone(), rle).is_some() {
            return Err(Error::Parse {
                line: idx + 1,
                reason: format!("duplicate user {user}"),
            });
        }
    }
    Ok((window, out))
}

pub fn write_series(path: &Path, window: AnalysisWindow, series: &BTreeMap<String, RleSequence>) -> Result<()> {
    write_atomic(path, series_to_string(window, series).as_bytes())
}

pub fn read_series(path: &Path) -> Result<(Option<AnalysisWindow>, BTreeMap<String, RleSequence>)> {
    parse_series(&read_text(path)?)
}

// ---- feature / latent CSV -------------------------------------------------

fn fmt_f64(v: f64) -> String {
    // shortest representation that round-trips
    format!("{v:?}")
}

pub fn features_to_string(columns: &[String], vectors: &BTreeMap<String, Vec<f64>>) -> String {
    let mut out = String::from("user_id");
    for c in columns {
        out.push(',');
        out.push_str(c);
    }
    out.push('\n');
    for (user, v) in vectors {
        out.push_str(user);
        for x in v {
            out.push(',');
            out.push_str(&fmt_f64(*x));
        }
        out.push('\n');
    }
    out
}

pub fn write_features(path: &Path, columns: &[String], vectors: &BTreeMap<String, Vec<f64>>) -> Result<()> {
    write_atomic(path, features_to_string(columns, vectors).as_bytes())
}

pub fn read_features(path: &Path) -> Result<(Vec<String>, BTreeMap<String, Vec<f64>>)> {
    let mut r = csv_reader(path)?;
    expect_header(&mut r, path, &["user_id"])?;
    let columns: Vec<String> = r.headers()?.iter().skip(1).map(String::from).collect();
    let mut out = BTreeMap::new();
    for rec in r.records() {
        let rec = rec?;
        if rec.len() != columns.len() + 1 {
            return Err(Error::Format(format!(
                "{}: row for {} has {} fields, expected {}",
                path.display(),
                &rec[0],
                rec.len(),
                columns.len() + 1
            )));
        }
        let v = rec
            .iter()
            .skip(1)
            .map(|t| t.parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
        out.insert(rec[0].to_string(), v);
    }
    Ok((columns, out))
}

// ---- clusters CSV ---------------------------------------------------------

pub fn clusters_to_string(labeling: &ClusterLabeling) -> String {
    let mut out = String::from("user_id,cluster_id,stability\n");
    for (user, c) in &labeling.assignments {
        match c {
            Some(id) => {
                let _ = writeln!(out, "{user},{id},{}", fmt_f64(labeling.stability[*id]));
            }
            None => {
                let _ = writeln!(out, "{user},-1,0.0");
            }
        }
    }
    out
}

pub fn write_clusters(path: &Path, labeling: &ClusterLabeling) -> Result<()> {
    write_atomic(path, clusters_to_string(labeling).as_bytes())
}

pub fn read_clusters(path: &Path) -> Result<ClusterLabeling> {
    let mut r = csv_reader(path)?;
    expect_header(&mut r, path, &["user_id", "cluster_id", "stability"])?;
    let mut labeling = ClusterLabeling::default();
    let mut stability: BTreeMap<usize, f64> = BTreeMap::new();
    for rec in r.records() {
        let rec = rec?;
        let bad = |what: &str| Error::Format(format!("{}: bad {what} for {}", path.display(), &rec[0]));
        let id: i64 = rec.get(1).and_then(|t| t.parse().ok()).ok_or_else(|| bad("cluster_id"))?;
        let stab: f64 = rec.get(2).and_then(|t| t.parse().ok()).ok_or_else(|| bad("stability"))?;
        let assignment = if id < 0 {
            None
        } else {
            stability.insert(id as usize, stab);
            Some(id as usize)
        };
        labeling.assignments.insert(rec[0].to_string(), assignment);
    }
    let n = stability.keys().next_back().map_or(0, |m| m + 1);
    if stability.len() != n {
        return Err(Error::Format(format!("{}: cluster ids are not dense", path.display())));
    }
    labeling.stability = stability.into_values().collect();
    Ok(labeling)
}

// ---- labels / truth -------------------------------------------------------

pub fn labels_to_string(result: &DetectionResult) -> String {
    let mut out = String::from("user_id,label,provenance\n");
    for (user, (label, prov)) in &result.labels {
        let _ = writeln!(out, "{user},{label},{prov}");
    }
    out
}

pub fn write_labels(path: &Path, result: &DetectionResult) -> Result<()> {
    write_atomic(path, labels_to_string(result).as_bytes())
}

pub fn read_labels(path: &Path) -> Result<DetectionResult> {
    let mut r = csv_reader(path)?;
    expect_header(&mut r, path, &["user_id", "label"])?;
    let mut labels = BTreeMap::new();
    for rec in r.records() {
        let rec = rec?;
        let label: Label = rec
            .get(1)
            .unwrap_or_default()
            .parse()
            .map_err(|e: Error| Error::Format(format!("{}: {e}", path.display())))?;
        let prov: Provenance = match rec.get(2) {
            Some(p) if !p.is_empty() => p
                .parse()
                .map_err(|e: Error| Error::Format(format!("{}: {e}", path.display())))?,
            _ => Provenance::Clustered,
        };
        labels.insert(rec[0].to_string(), (label, prov));
    }
    Ok(DetectionResult { labels })
}

pub fn read_truth(path: &Path) -> Result<BTreeMap<String, Label>> {
    let mut r = csv_reader(path)?;
    expect_header(&mut r, path, &["user_id", "label"])?;
    let mut out = BTreeMap::new();
    for rec in r.records() {
        let rec = rec?;
        let label: Label = rec
            .get(1)
            .unwrap_or_default()
            .parse()
            .map_err(|e: Error| Error::Format(format!("{}: {e}", path.display())))?;
        out.insert(rec[0].to_string(), label);
    }
    Ok(out)
}

pub fn write_report(path: &Path, report: &MetricsReport) -> Result<()> {
    let mut text = serde_json::to_string_pretty(report)?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

pub fn read_report(path: &Path) -> Result<MetricsReport> {
    Ok(serde_json::from_str(&read_text(path)?)?)
}

// ---- projector model file -------------------------------------------------

fn row_tensor(v: &[f64]) -> Tensor {
    Tensor {
        rows: 1,
        cols: v.len(),
        data: v.to_vec(),
    }
}

pub fn projector_to_string(p: &LinearProjector) -> String {
    let (l, d) = p.basis.shape();
    let mut out = format!(
        "{PROJECTOR_MAGIC} {PROJECTOR_VERSION} kind={} d={d} L={l} lag={}\n",
        p.kind.name(),
        p.lag
    );
    write_block(&mut out, "norm", &row_tensor(&[p.stats.mean, p.stats.std]));
    write_block(&mut out, "total_variance", &row_tensor(&[p.total_variance]));
    write_block(&mut out, "eigenvalues", &row_tensor(&p.eigenvalues));
    write_block(&mut out, "mean", &row_tensor(&p.mean));
    let basis = Tensor {
        rows: l,
        cols: d,
        data: (0..l).flat_map(|r| (0..d).map(move |c| (r, c))).map(|(r, c)| p.basis[(r, c)]).collect(),
    };
    write_block(&mut out, "basis", &basis);
    out
}

pub fn projector_from_string(text: &str) -> Result<LinearProjector> {
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| Error::Format("empty projector file".into()))?;
    let parts: Vec<&str> = header.split_whitespace().collect();
    if parts.len() != 6 || parts[0] != PROJECTOR_MAGIC {
        return Err(Error::Format(format!("bad projector header '{header}'")));
    }
    if parts[1] != PROJECTOR_VERSION {
        return Err(Error::Format(format!(
            "projector version {} is incompatible with {PROJECTOR_VERSION}",
            parts[1]
        )));
    }
    let field = |s: &str, key: &str| -> Result<String> {
        s.strip_prefix(key)
            .map(String::from)
            .ok_or_else(|| Error::Format(format!("bad header field '{s}'")))
    };
    let num = |s: &str, key: &str| -> Result<usize> {
        field(s, key)?
            .parse()
            .map_err(|_| Error::Format(format!("bad header field '{s}'")))
    };
    let kind = match field(parts[2], "kind=")?.as_str() {
        "pca" => ProjectorKind::Pca,
        "tica" => ProjectorKind::Tica,
        other => return Err(Error::Format(format!("unknown projector kind '{other}'"))),
    };
    let d = num(parts[3], "d=")?;
    let l = num(parts[4], "L=")?;
    let lag = num(parts[5], "lag=")?;
    let norm = read_block(&mut lines, "norm", 1, 2)?;
    let total = read_block(&mut lines, "total_variance", 1, 1)?;
    let eig = read_block(&mut lines, "eigenvalues", 1, d)?;
    let mean = read_block(&mut lines, "mean", 1, l)?;
    let basis = read_block(&mut lines, "basis", l, d)?;
    if lines.any(|x| !x.trim().is_empty()) {
        return Err(Error::Format("trailing content after last block".into()));
    }
    Ok(LinearProjector {
        kind,
        mean: mean.data,
        basis: DMatrix::from_row_slice(l, d, &basis.data),
        eigenvalues: eig.data,
        total_variance: total.data[0],
        lag,
        stats: CorpusStats {
            mean: norm.data[0],
            std: norm.data[1],
        },
    })
}

pub fn save_projector(path: &Path, p: &LinearProjector) -> Result<()> {
    write_atomic(path, projector_to_string(p).as_bytes())
}

pub fn load_projector(path: &Path) -> Result<LinearProjector> {
    projector_from_string(&read_text(path)?)
}

/// Reads the first line of a model file to tell VAE and projector files apart.
pub fn model_magic(path: &Path) -> Result<String> {
    let f = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut first = String::new();
    BufReader::new(f)
        .read_line(&mut first)
        .map_err(|e| Error::io(path, e))?;
    Ok(first.split_whitespace().next().unwrap_or_default().to_string())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn series_round_trip() {
        let w = AnalysisWindow::new(100, 50).unwrap();
        let mut m = BTreeMap::new();
        m.insert("a".to_string(), RleSequence::new(vec![3, -3, 4, -40]).unwrap());
        m.insert("b".to_string(), RleSequence::new(vec![-50]).unwrap());
        let text = series_to_string(w, &m);
        assert_eq!(text, "#window 100 50\na 3 -3 4 -40\nb -50\n");
        let (w2, m2) = parse_series(&text).unwrap();
        assert_eq!(w2, Some(w));
        assert_eq!(m2, m);
    }

    #[test]
    fn series_rejects_bad_values() {
        assert!(parse_series("a 3 x\n").is_err());
        assert!(parse_series("a -1 -2\n").is_err());
        assert!(parse_series("a 1\na 2\n").is_err());
    }

    #[test]
    fn floats_round_trip_through_text() {
        for v in [0.1, -1.0 / 3.0, 1e-300, 123456.789, 0.0] {
            assert_eq!(fmt_f64(v).parse::<f64>().unwrap(), v);
        }
    }

    #[test]
    fn projector_header_checked() {
        let p = LinearProjector {
            kind: ProjectorKind::Tica,
            mean: vec![0.5, -0.5, 1.0],
            basis: DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.0, 1.0, 0.25, -0.75]),
            eigenvalues: vec![0.9, 0.1],
            total_variance: 0.0,
            lag: 1,
            stats: CorpusStats { mean: 1.5, std: 2.0 },
        };
        let text = projector_to_string(&p);
        let back = projector_from_string(&text).unwrap();
        assert_eq!(back, p);
        assert_eq!(projector_to_string(&back), text);
        assert!(projector_from_string(&text.replacen("RTBUST-PROJ", "RTBUST-XXXX", 1)).is_err());
        let err = projector_from_string(&text.replacen(" v1 ", " v9 ", 1)).unwrap_err();
        assert!(err.to_string().contains("incompatible"));
    }
}
