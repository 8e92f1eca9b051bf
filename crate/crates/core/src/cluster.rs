//! HDBSCAN over latent vectors with the Euclidean metric.
//!
//! Core distances feed a mutual-reachability graph whose minimum spanning
//! tree (Prim, dense O(n²)) defines the single-linkage hierarchy. The
//! hierarchy is condensed with `min_cluster_size` and flat clusters are
//! picked by excess of mass. Points outside every selected cluster are noise.

use std::collections::BTreeMap;

use log::debug;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// λ used for zero-distance merges.
pub const LAMBDA_CAP: f64 = 1e12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClusterParams {
    pub min_cluster_size: usize,
    pub min_samples: usize,
}

impl Default for ClusterParams {
    fn default() -> Self {
        Self {
            min_cluster_size: 11,
            min_samples: 10,
        }
    }
}

impl ClusterParams {
    pub fn validate(&self) -> Result<()> {
        if self.min_cluster_size < 2 {
            return Err(Error::Config("min_cluster_size must be at least 2".into()));
        }
        if self.min_samples < 1 {
            return Err(Error::Config("min_samples must be at least 1".into()));
        }
        Ok(())
    }
}

pub fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Distance from each point to its k-th nearest other point.
pub fn core_distances(points: &[Vec<f64>], k: usize) -> Result<Vec<f64>> {
    let n = points.len();
    if k == 0 || n <= k {
        return Err(Error::Config(format!(
            "core distance with k={k} needs more than k points, got {n}"
        )));
    }
    let mut scratch = Vec::with_capacity(n - 1);
    Ok(points
        .iter()
        .enumerate()
        .map(|(i, p)| {
            scratch.clear();
            scratch.extend(
                points
                    .iter()
                    .enumerate()
                    .filter(|(j, _)| *j != i)
                    .map(|(_, q)| euclidean(p, q)),
            );
            let (_, kth, _) = scratch.select_nth_unstable_by(k - 1, |a, b| a.total_cmp(b));
            *kth
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MstEdge {
    pub a: usize,
    pub b: usize,
    pub weight: f64,
}

impl MstEdge {
    fn key(&self) -> (f64, usize, usize) {
        (self.weight, self.a.min(self.b), self.a.max(self.b))
    }
}

fn key_less(x: (f64, usize, usize), y: (f64, usize, usize)) -> bool {
    match x.0.total_cmp(&y.0) {
        std::cmp::Ordering::Less => true,
        std::cmp::Ordering::Greater => false,
        std::cmp::Ordering::Equal => (x.1, x.2) < (y.1, y.2),
    }
}

pub fn mutual_reachability(points: &[Vec<f64>], cores: &[f64], a: usize, b: usize) -> f64 {
    euclidean(&points[a], &points[b]).max(cores[a]).max(cores[b])
}

/// Minimum spanning tree of the mutual-reachability graph by Prim's
/// algorithm. Ties are broken by `(weight, min index, max index)`.
pub fn mreach_mst(points: &[Vec<f64>], cores: &[f64]) -> Vec<MstEdge> {
    let n = points.len();
    if n < 2 {
        return Vec::new();
    }
    let mut in_tree = vec![false; n];
    let mut best = vec![(f64::INFINITY, usize::MAX, usize::MAX); n];
    let mut from = vec![usize::MAX; n];
    let mut edges = Vec::with_capacity(n - 1);
    let mut current = 0;
    in_tree[0] = true;
    for _ in 1..n {
        for v in 0..n {
            if in_tree[v] {
                continue;
            }
            let w = mutual_reachability(points, cores, current, v);
            let cand = (w, current.min(v), current.max(v));
            if key_less(cand, best[v]) {
                best[v] = cand;
                from[v] = current;
            }
        }
        let mut next = usize::MAX;
        for v in 0..n {
            if !in_tree[v] && (next == usize::MAX || key_less(best[v], best[next])) {
                next = v;
            }
        }
        in_tree[next] = true;
        edges.push(MstEdge {
            a: from[next],
            b: next,
            weight: best[next].0,
        });
        current = next;
    }
    edges
}

/// One merge of the single-linkage dendrogram. Nodes `0..n` are points and
/// merge `i` creates node `n + i`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Merge {
    pub left: usize,
    pub right: usize,
    pub weight: f64,
    pub size: usize,
}

struct UnionFind {
    parent: Vec<usize>,
    /// dendrogram node currently representing each set root
    node: Vec<usize>,
    size: Vec<usize>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        Self {
            parent: (0..n).collect(),
            node: (0..n).collect(),
            size: vec![1; n],
        }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }
}

/// Single-linkage hierarchy from spanning-tree edges, merged by ascending
/// `(weight, min index, max index)`.
pub fn single_linkage(edges: &[MstEdge], n: usize) -> Vec<Merge> {
    let mut sorted = edges.to_vec();
    sorted.sort_by(|x, y| {
        let (kx, ky) = (x.key(), y.key());
        kx.0.total_cmp(&ky.0).then((kx.1, kx.2).cmp(&(ky.1, ky.2)))
    });
    let mut uf = UnionFind::new(n);
    let mut merges = Vec::with_capacity(n.saturating_sub(1));
    for e in sorted {
        let (ra, rb) = (uf.find(e.a), uf.find(e.b));
        if ra == rb {
            continue;
        }
        let size = uf.size[ra] + uf.size[rb];
        merges.push(Merge {
            left: uf.node[ra],
            right: uf.node[rb],
            weight: e.weight,
            size,
        });
        let (big, small) = if uf.size[ra] >= uf.size[rb] { (ra, rb) } else { (rb, ra) };
        uf.parent[small] = big;
        uf.size[big] = size;
        uf.node[big] = n + merges.len() - 1;
    }
    merges
}

fn lambda_of(weight: f64) -> f64 {
    if weight <= 0.0 {
        LAMBDA_CAP
    } else {
        (1.0 / weight).min(LAMBDA_CAP)
    }
}

#[derive(Debug, Clone)]
struct CondensedCluster {
    parent: Option<usize>,
    birth_lambda: f64,
    stability: f64,
    children: Vec<usize>,
}

/// Flat clustering over point indices.
#[derive(Debug, Clone, PartialEq)]
pub struct Clustering {
    /// Cluster id per point; `None` is noise.
    pub labels: Vec<Option<usize>>,
    /// Stability of each selected cluster, indexed by cluster id.
    pub stability: Vec<f64>,
}

impl Clustering {
    pub fn n_clusters(&self) -> usize {
        self.stability.len()
    }

    pub fn cluster_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.stability.len()];
        for l in self.labels.iter().flatten() {
            sizes[*l] += 1;
        }
        sizes
    }
}

pub fn extract_clusters(edges: &[MstEdge], n: usize, params: &ClusterParams) -> Clustering {
    if n == 0 {
        return Clustering {
            labels: Vec::new(),
            stability: Vec::new(),
        };
    }
    if n < params.min_cluster_size || edges.len() + 1 < n {
        return Clustering {
            labels: vec![None; n],
            stability: Vec::new(),
        };
    }
    let merges = single_linkage(edges, n);
    let node_size = |node: usize| if node < n { 1 } else { merges[node - n].size };

    let mut clusters = vec![CondensedCluster {
        parent: None,
        birth_lambda: 0.0,
        stability: 0.0,
        children: Vec::new(),
    }];
    // condensed cluster each point fell out of
    let mut fell_from = vec![0usize; n];
    let root = n + merges.len() - 1;

    let fall_out = |node: usize,
                        cluster: usize,
                        lambda: f64,
                        clusters: &mut Vec<CondensedCluster>,
                        fell_from: &mut Vec<usize>| {
        let mut stack = vec![node];
        while let Some(x) = stack.pop() {
            if x < n {
                fell_from[x] = cluster;
                clusters[cluster].stability += lambda - clusters[cluster].birth_lambda;
            } else {
                let m = merges[x - n];
                stack.push(m.left);
                stack.push(m.right);
            }
        }
    };

    let mut stack = vec![(root, 0usize)];
    while let Some((node, cluster)) = stack.pop() {
        if node < n {
            // a lone point that never merged below this cluster
            fell_from[node] = cluster;
            continue;
        }
        let m = merges[node - n];
        let lambda = lambda_of(m.weight);
        let (l, r) = (m.left, m.right);
        let l_big = node_size(l) >= params.min_cluster_size;
        let r_big = node_size(r) >= params.min_cluster_size;
        match (l_big, r_big) {
            (true, true) => {
                for child in [l, r] {
                    let id = clusters.len();
                    let size = node_size(child) as f64;
                    clusters[cluster].stability +=
                        size * (lambda - clusters[cluster].birth_lambda);
                    clusters[cluster].children.push(id);
                    clusters.push(CondensedCluster {
                        parent: Some(cluster),
                        birth_lambda: lambda,
                        stability: 0.0,
                        children: Vec::new(),
                    });
                    stack.push((child, id));
                }
            }
            (true, false) => {
                fall_out(r, cluster, lambda, &mut clusters, &mut fell_from);
                stack.push((l, cluster));
            }
            (false, true) => {
                fall_out(l, cluster, lambda, &mut clusters, &mut fell_from);
                stack.push((r, cluster));
            }
            (false, false) => {
                fall_out(l, cluster, lambda, &mut clusters, &mut fell_from);
                fall_out(r, cluster, lambda, &mut clusters, &mut fell_from);
            }
        }
    }

    // excess of mass, leaves first (children always have larger ids)
    let k = clusters.len();
    let mut selected = vec![false; k];
    let mut value = vec![0.0; k];
    for c in (1..k).rev() {
        let children_value: f64 = clusters[c].children.iter().map(|&ch| value[ch]).sum();
        if clusters[c].children.is_empty() || clusters[c].stability > children_value {
            selected[c] = true;
            value[c] = clusters[c].stability;
            let mut desc = clusters[c].children.clone();
            while let Some(d) = desc.pop() {
                selected[d] = false;
                desc.extend(clusters[d].children.iter().copied());
            }
        } else {
            value[c] = children_value;
        }
    }
    // a hierarchy that never splits is one cluster
    if k == 1 {
        selected[0] = true;
    }
    debug!(
        "condensed tree: {} clusters, {} selected",
        k,
        selected.iter().filter(|s| **s).count()
    );

    let owner = |mut c: usize| -> Option<usize> {
        loop {
            if selected[c] {
                return Some(c);
            }
            c = clusters[c].parent?;
        }
    };
    let raw: Vec<Option<usize>> = fell_from.iter().map(|&c| owner(c)).collect();

    // dense ids ordered by each cluster's smallest member index
    let mut renumber: BTreeMap<usize, usize> = BTreeMap::new();
    let mut stability = Vec::new();
    let labels = raw
        .iter()
        .map(|r| {
            r.map(|c| {
                *renumber.entry(c).or_insert_with(|| {
                    stability.push(clusters[c].stability);
                    stability.len() - 1
                })
            })
        })
        .collect();
    Clustering { labels, stability }
}

pub fn hdbscan(points: &[Vec<f64>], params: &ClusterParams) -> Result<Clustering> {
    params.validate()?;
    let n = points.len();
    if n < params.min_cluster_size {
        return Ok(Clustering {
            labels: vec![None; n],
            stability: Vec::new(),
        });
    }
    if let Some(d) = points.first().map(Vec::len) {
        if points.iter().any(|p| p.len() != d) {
            return Err(Error::Config("points have differing dimensions".into()));
        }
    }
    if points.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("non-finite coordinate".into()));
    }
    // Index tie-breaks run on points sorted by coordinates, so equal-weight
    // edges resolve the same way whatever order the caller used.
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        points[a]
            .iter()
            .zip(&points[b])
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    let sorted: Vec<Vec<f64>> = order.iter().map(|&i| points[i].clone()).collect();
    let k = params.min_samples.min(n - 1);
    let cores = core_distances(&sorted, k)?;
    let edges = mreach_mst(&sorted, &cores);
    let inner = extract_clusters(&edges, n, params);

    let mut labels = vec![None; n];
    for (pos, &i) in order.iter().enumerate() {
        labels[i] = inner.labels[pos];
    }
    // renumber by smallest original member index
    let mut renumber: BTreeMap<usize, usize> = BTreeMap::new();
    let mut stability = Vec::new();
    for l in labels.iter_mut().flatten() {
        *l = *renumber.entry(*l).or_insert_with(|| {
            stability.push(inner.stability[*l]);
            stability.len() - 1
        });
    }
    Ok(Clustering { labels, stability })
}

/// Per-account clustering.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ClusterLabeling {
    pub assignments: BTreeMap<String, Option<usize>>,
    pub stability: Vec<f64>,
}

impl ClusterLabeling {
    pub fn from_clustering(ids: &[String], clustering: &Clustering) -> Self {
        Self {
            assignments: ids
                .iter()
                .cloned()
                .zip(clustering.labels.iter().copied())
                .collect(),
            stability: clustering.stability.clone(),
        }
    }

    pub fn n_clusters(&self) -> usize {
        self.stability.len()
    }
}

pub fn cluster_accounts(
    latents: &BTreeMap<String, Vec<f64>>,
    params: &ClusterParams,
) -> Result<ClusterLabeling> {
    let ids: Vec<String> = latents.keys().cloned().collect();
    let points: Vec<Vec<f64>> = latents.values().cloned().collect();
    let clustering = hdbscan(&points, params)?;
    Ok(ClusterLabeling::from_clustering(&ids, &clustering))
}
