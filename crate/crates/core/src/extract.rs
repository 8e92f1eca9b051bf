//! Feature extractors behind one trait, selectable by name at runtime.

use std::collections::BTreeMap;
use std::fmt;

use log::info;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::handcrafted::{extract_handcrafted_with_gap, DEFAULT_SESSION_GAP_S, FEATURE_NAMES};
use crate::ingest::{RleSequence, UserSeries};
use crate::linproj::{
    pca_fit, tica_fit, vectorize, CorpusStats, LinearProjector, ProjectorKind, DEFAULT_LAG,
    DEFAULT_LATENT_DIM, DEFAULT_SEQ_LEN,
};
use crate::vae::{self, EpochLoss, VaeConfig, VaeModel};

/// What an extractor may look at. Compressed sequences are always present;
/// raw series are needed only by the handcrafted extractor.
#[derive(Debug, Clone, Copy)]
pub struct ExtractionInput<'a> {
    pub sequences: &'a BTreeMap<String, RleSequence>,
    pub series: Option<&'a BTreeMap<String, UserSeries>>,
}

/// A fitted model produced as a side effect of extraction.
#[derive(Debug, Clone)]
pub enum FittedModel {
    Vae { model: VaeModel, trace: Vec<EpochLoss> },
    Linear(LinearProjector),
}

#[derive(Debug, Clone)]
pub struct FeatureSet {
    pub columns: Vec<String>,
    pub vectors: BTreeMap<String, Vec<f64>>,
    pub model: Option<FittedModel>,
    /// Per-column scales differ enough that clustering should z-score first.
    pub needs_scaling: bool,
}

impl FeatureSet {
    pub fn dim(&self) -> usize {
        self.columns.len()
    }
}

pub trait FeatureExtractor: Send + Sync + fmt::Debug {
    fn name(&self) -> &'static str;
    fn extract(&self, input: &ExtractionInput<'_>) -> Result<FeatureSet>;
}

#[derive(Debug, Clone)]
pub struct ExtractorConfig {
    pub latent_dim: usize,
    pub seq_len: usize,
    pub lag: usize,
    pub session_gap_s: i64,
    pub vae: VaeConfig,
    pub pretrained_vae: Option<VaeModel>,
    pub pretrained_projector: Option<LinearProjector>,
}

impl Default for ExtractorConfig {
    fn default() -> Self {
        Self {
            latent_dim: DEFAULT_LATENT_DIM,
            seq_len: DEFAULT_SEQ_LEN,
            lag: DEFAULT_LAG,
            session_gap_s: DEFAULT_SESSION_GAP_S,
            vae: VaeConfig::default(),
            pretrained_vae: None,
            pretrained_projector: None,
        }
    }
}

fn latent_columns(d: usize) -> Vec<String> {
    (0..d).map(|k| format!("z{k}")).collect()
}

#[derive(Debug)]
pub struct VaeExtractor {
    config: VaeConfig,
    pretrained: Option<VaeModel>,
}

impl VaeExtractor {
    pub fn new(config: VaeConfig, pretrained: Option<VaeModel>) -> Self {
        Self { config, pretrained }
    }
}

impl FeatureExtractor for VaeExtractor {
    fn name(&self) -> &'static str {
        "vae"
    }

    fn extract(&self, input: &ExtractionInput<'_>) -> Result<FeatureSet> {
        let (model, trace) = match &self.pretrained {
            Some(m) => (m.clone(), Vec::new()),
            None => {
                let corpus: Vec<RleSequence> = input.sequences.values().cloned().collect();
                let out = vae::train(&self.config, &corpus)?;
                (out.model, out.trace)
            }
        };
        let vectors = vae::extract_latent(&model, input.sequences)?;
        Ok(FeatureSet {
            columns: latent_columns(model.latent_dim),
            vectors,
            model: Some(FittedModel::Vae { model, trace }),
            needs_scaling: false,
        })
    }
}

#[derive(Debug)]
pub struct LinearExtractor {
    kind: ProjectorKind,
    dim: usize,
    seq_len: usize,
    lag: usize,
    pretrained: Option<LinearProjector>,
}

impl LinearExtractor {
    pub fn new(kind: ProjectorKind, dim: usize, seq_len: usize, lag: usize) -> Self {
        Self {
            kind,
            dim,
            seq_len,
            lag,
            pretrained: None,
        }
    }

    pub fn with_projector(projector: LinearProjector) -> Self {
        Self {
            kind: projector.kind,
            dim: projector.dim(),
            seq_len: projector.input_len(),
            lag: projector.lag,
            pretrained: Some(projector),
        }
    }
}

impl FeatureExtractor for LinearExtractor {
    fn name(&self) -> &'static str {
        self.kind.name()
    }

    fn extract(&self, input: &ExtractionInput<'_>) -> Result<FeatureSet> {
        let ids: Vec<&String> = input.sequences.keys().collect();
        let projector = match &self.pretrained {
            Some(p) => p.clone(),
            None => {
                let stats = CorpusStats::fit(input.sequences.values(), self.seq_len);
                let rows = input
                    .sequences
                    .values()
                    .map(|s| vectorize(s, self.seq_len, &stats).map(|v| v.values))
                    .collect::<Result<Vec<_>>>()?;
                let mut p = match self.kind {
                    ProjectorKind::Pca => pca_fit(&rows, self.dim)?,
                    ProjectorKind::Tica => tica_fit(&rows, self.dim, self.lag)?,
                };
                p.stats = stats;
                info!("{} eigenvalues {:?}", self.kind.name(), p.eigenvalues);
                p
            }
        };
        let len = projector.input_len();
        let vectors = ids
            .par_iter()
            .map(|id| {
                let v = vectorize(&input.sequences[*id], len, &projector.stats)?;
                Ok(((*id).clone(), projector.transform(&v.values)))
            })
            .collect::<Result<BTreeMap<_, _>>>()?;
        Ok(FeatureSet {
            columns: latent_columns(projector.dim()),
            vectors,
            model: Some(FittedModel::Linear(projector)),
            needs_scaling: false,
        })
    }
}

#[derive(Debug)]
pub struct HandcraftedExtractor {
    session_gap_s: i64,
}

impl HandcraftedExtractor {
    pub fn new(session_gap_s: i64) -> Self {
        Self { session_gap_s }
    }
}

impl FeatureExtractor for HandcraftedExtractor {
    fn name(&self) -> &'static str {
        "handcrafted"
    }

    fn extract(&self, input: &ExtractionInput<'_>) -> Result<FeatureSet> {
        let series = input.series.ok_or_else(|| {
            Error::Config("the handcrafted extractor needs the raw retweet events".into())
        })?;
        let ids: Vec<&String> = input.sequences.keys().collect();
        let vectors = ids
            .par_iter()
            .map(|id| {
                let s = series
                    .get(*id)
                    .ok_or_else(|| Error::KeyMismatch(format!("no events for user {id}")))?;
                let v = extract_handcrafted_with_gap(s, self.session_gap_s)?;
                Ok(((*id).clone(), v.to_array().to_vec()))
            })
            .collect::<Result<BTreeMap<_, _>>>()?;
        Ok(FeatureSet {
            columns: FEATURE_NAMES.iter().map(|s| s.to_string()).collect(),
            vectors,
            model: None,
            needs_scaling: true,
        })
    }
}

type Factory = fn(&ExtractorConfig) -> Box<dyn FeatureExtractor>;

/// Name → constructor table.
pub struct ExtractorRegistry {
    factories: BTreeMap<&'static str, Factory>,
}

impl fmt::Debug for ExtractorRegistry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_list().entries(self.factories.keys()).finish()
    }
}

impl Default for ExtractorRegistry {
    fn default() -> Self {
        let mut r = Self::empty();
        r.register("vae", |c| {
            let cfg = VaeConfig {
                latent_dim: c.latent_dim,
                max_seq_len: c.seq_len,
                ..c.vae.clone()
            };
            Box::new(VaeExtractor::new(cfg, c.pretrained_vae.clone()))
        });
        r.register("pca", |c| match &c.pretrained_projector {
            Some(p) if p.kind == ProjectorKind::Pca => Box::new(LinearExtractor::with_projector(p.clone())),
            _ => Box::new(LinearExtractor::new(ProjectorKind::Pca, c.latent_dim, c.seq_len, c.lag)),
        });
        r.register("tica", |c| match &c.pretrained_projector {
            Some(p) if p.kind == ProjectorKind::Tica => Box::new(LinearExtractor::with_projector(p.clone())),
            _ => Box::new(LinearExtractor::new(ProjectorKind::Tica, c.latent_dim, c.seq_len, c.lag)),
        });
        r.register("handcrafted", |c| Box::new(HandcraftedExtractor::new(c.session_gap_s)));
        r
    }
}

impl ExtractorRegistry {
    pub fn empty() -> Self {
        Self {
            factories: BTreeMap::new(),
        }
    }

    pub fn register(&mut self, name: &'static str, factory: Factory) {
        self.factories.insert(name, factory);
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.factories.keys().copied().collect()
    }

    pub fn create(&self, name: &str, config: &ExtractorConfig) -> Result<Box<dyn FeatureExtractor>> {
        let factory = self.factories.get(name).ok_or_else(|| {
            Error::UnknownExtractor(format!("'{name}' (known: {})", self.names().join(", ")))
        })?;
        Ok(factory(config))
    }
}

/// Column-wise z-scoring; constant columns become zero.
pub fn standardize(vectors: &BTreeMap<String, Vec<f64>>) -> BTreeMap<String, Vec<f64>> {
    let Some(dim) = vectors.values().next().map(Vec::len) else {
        return BTreeMap::new();
    };
    let n = vectors.len() as f64;
    let mut mean = vec![0.0; dim];
    for v in vectors.values() {
        for (m, x) in mean.iter_mut().zip(v) {
            *m += x / n;
        }
    }
    let mut sd = vec![0.0; dim];
    for v in vectors.values() {
        for ((s, x), m) in sd.iter_mut().zip(v).zip(&mean) {
            *s += (x - m) * (x - m) / n;
        }
    }
    vectors
        .iter()
        .map(|(k, v)| {
            let z = v
                .iter()
                .zip(&mean)
                .zip(&sd)
                .map(|((x, m), s)| if s.sqrt() > 1e-12 { (x - m) / s.sqrt() } else { 0.0 })
                .collect();
            (k.clone(), z)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn registry_lists_all_extractors() {
        let r = ExtractorRegistry::default();
        assert_eq!(r.names(), vec!["handcrafted", "pca", "tica", "vae"]);
        for name in r.names() {
            assert_eq!(r.create(name, &ExtractorConfig::default()).unwrap().name(), name);
        }
        assert!(matches!(
            r.create("tsne", &ExtractorConfig::default()),
            Err(Error::UnknownExtractor(_))
        ));
    }

    #[test]
    fn standardize_columns() {
        let mut m = BTreeMap::new();
        m.insert("a".to_string(), vec![1.0, 5.0]);
        m.insert("b".to_string(), vec![3.0, 5.0]);
        let z = standardize(&m);
        assert_eq!(z["a"], vec![-1.0, 0.0]);
        assert_eq!(z["b"], vec![1.0, 0.0]);
    }

    #[test]
    fn handcrafted_requires_events() {
        let seqs = BTreeMap::new();
        let input = ExtractionInput {
            sequences: &seqs,
            series: None,
        };
        assert!(HandcraftedExtractor::new(3600).extract(&input).is_err());
    }
}
