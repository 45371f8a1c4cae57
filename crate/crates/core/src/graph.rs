//! Sparse graph storage and message-passing primitives.
//!
//! A [`Graph`] is an immutable, symmetrized CSR adjacency with no self-loops
//! or duplicate edges. [`normalize_adjacency`] produces the self-looped,
//! symmetrically normalized weighting used for propagation, and
//! [`neighbor_sample`] builds per-layer bipartite blocks for minibatch
//! encoding. All types are immutable after construction and safe to share
//! across threads.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::dense::{Mat, Scalar};

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("edge ({u}, {v}) out of range for graph with {num_nodes} nodes")]
    EdgeOutOfRange { u: usize, v: usize, num_nodes: usize },
    #[error("{path}:{line}: {msg}")]
    EdgeListParse {
        path: String,
        line: usize,
        msg: String,
    },
    #[error("sparse-dense dimension mismatch: adjacency has {adj_cols} columns, dense input has {dense_rows} rows")]
    SpmmDims { adj_cols: usize, dense_rows: usize },
    #[error("seed list is empty")]
    EmptySeeds,
    #[error("seed node {seed} out of range for graph with {num_nodes} nodes")]
    SeedOutOfRange { seed: usize, num_nodes: usize },
    #[error("split ratios {0:?} do not sum to 1")]
    BadSplitRatios((f64, f64, f64)),
    #[error("{n} nodes is too small: every split must receive at least one node")]
    SplitTooSmall { n: usize },
}

/// Immutable undirected graph in CSR form.
///
/// Stored edges are symmetrized (both directions present), deduplicated,
/// self-loop free, and column-sorted within each row.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Graph {
    num_nodes: usize,
    num_edges: usize,
    row_offsets: Vec<usize>,
    col_indices: Vec<usize>,
}

impl Graph {
    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    /// Undirected edge count (each edge counted once).
    pub fn num_edges(&self) -> usize {
        self.num_edges
    }

    pub fn degree(&self, u: usize) -> usize {
        self.row_offsets[u + 1] - self.row_offsets[u]
    }

    pub fn max_degree(&self) -> usize {
        (0..self.num_nodes).map(|u| self.degree(u)).max().unwrap_or(0)
    }

    pub fn neighbors(&self, u: usize) -> &[usize] {
        &self.col_indices[self.row_offsets[u]..self.row_offsets[u + 1]]
    }

    pub fn row_offsets(&self) -> &[usize] {
        &self.row_offsets
    }

    pub fn col_indices(&self) -> &[usize] {
        &self.col_indices
    }

    /// Edge list with `u < v`, suitable for serialization.
    pub fn edge_list(&self) -> Vec<(usize, usize)> {
        let mut edges = Vec::with_capacity(self.num_edges);
        for u in 0..self.num_nodes {
            for &v in self.neighbors(u) {
                if u < v {
                    edges.push((u, v));
                }
            }
        }
        edges
    }
}

/// Build a [`Graph`] from an edge list.
///
/// Input is treated as undirected: each pair is stored in both directions.
/// Duplicate edges and self-loops are cleaned (and logged), not rejected.
pub fn build_graph(edges: &[(usize, usize)], num_nodes: usize) -> Result<Graph, GraphError> {
    for &(u, v) in edges {
        if u >= num_nodes || v >= num_nodes {
            return Err(GraphError::EdgeOutOfRange { u, v, num_nodes });
        }
    }
    let mut adj: Vec<Vec<usize>> = vec![Vec::new(); num_nodes];
    let mut self_loops = 0usize;
    for &(u, v) in edges {
        if u == v {
            self_loops += 1;
            continue;
        }
        adj[u].push(v);
        adj[v].push(u);
    }
    let mut duplicates = 0usize;
    for row in &mut adj {
        row.sort_unstable();
        let before = row.len();
        row.dedup();
        duplicates += before - row.len();
    }
    if self_loops > 0 || duplicates > 0 {
        log::info!(
            "cleaned edge list: dropped {self_loops} self-loops, {} duplicate edges",
            duplicates / 2
        );
    }
    let mut row_offsets = Vec::with_capacity(num_nodes + 1);
    row_offsets.push(0);
    let mut col_indices = Vec::new();
    for row in &adj {
        col_indices.extend_from_slice(row);
        row_offsets.push(col_indices.len());
    }
    Ok(Graph {
        num_nodes,
        num_edges: col_indices.len() / 2,
        row_offsets,
        col_indices,
    })
}

/// Parse an edge-list file body: one `src<TAB>dst` pair per line, 0-based,
/// `#`-prefixed comment lines and blank lines ignored.
pub fn parse_edge_list(text: &str, path: &str) -> Result<Vec<(usize, usize)>, GraphError> {
    let mut edges = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim_end_matches('\r');
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut parts = line.split('\t');
        let parse = |field: Option<&str>, what: &str| -> Result<usize, GraphError> {
            field
                .ok_or_else(|| GraphError::EdgeListParse {
                    path: path.to_string(),
                    line: lineno + 1,
                    msg: format!("missing {what} field"),
                })?
                .trim()
                .parse::<usize>()
                .map_err(|e| GraphError::EdgeListParse {
                    path: path.to_string(),
                    line: lineno + 1,
                    msg: format!("bad {what} index: {e}"),
                })
        };
        let src = parse(parts.next(), "source")?;
        let dst = parse(parts.next(), "destination")?;
        if parts.next().is_some() {
            return Err(GraphError::EdgeListParse {
                path: path.to_string(),
                line: lineno + 1,
                msg: "expected exactly two tab-separated fields".to_string(),
            });
        }
        edges.push((src, dst));
    }
    Ok(edges)
}

/// Sparse matrix in CSR form with explicit values. May be rectangular
/// (bipartite blocks from neighbor sampling).
#[derive(Debug, Clone, PartialEq)]
pub struct Csr<T> {
    rows: usize,
    cols: usize,
    row_offsets: Vec<usize>,
    col_indices: Vec<usize>,
    values: Vec<T>,
}

impl<T: Scalar> Csr<T> {
    pub fn new(
        rows: usize,
        cols: usize,
        row_offsets: Vec<usize>,
        col_indices: Vec<usize>,
        values: Vec<T>,
    ) -> Self {
        assert_eq!(row_offsets.len(), rows + 1);
        assert_eq!(col_indices.len(), values.len());
        assert_eq!(*row_offsets.last().unwrap(), col_indices.len());
        Csr {
            rows,
            cols,
            row_offsets,
            col_indices,
            values,
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row_entries(&self, r: usize) -> impl Iterator<Item = (usize, T)> + '_ {
        let span = self.row_offsets[r]..self.row_offsets[r + 1];
        self.col_indices[span.clone()]
            .iter()
            .zip(&self.values[span])
            .map(|(&c, &v)| (c, v))
    }

    /// Sparse-dense product `self * dense` with a fixed summation order.
    pub fn spmm(&self, dense: &Mat<T>) -> Result<Mat<T>, GraphError> {
        if self.cols != dense.rows() {
            return Err(GraphError::SpmmDims {
                adj_cols: self.cols,
                dense_rows: dense.rows(),
            });
        }
        let k = dense.cols();
        let mut out = Mat::zeros(self.rows, k);
        for i in 0..self.rows {
            for idx in self.row_offsets[i]..self.row_offsets[i + 1] {
                let j = self.col_indices[idx];
                let w = self.values[idx];
                let src = dense.row(j);
                let dst = &mut out.data_mut()[i * k..(i + 1) * k];
                for (d, &s) in dst.iter_mut().zip(src) {
                    *d = *d + w * s;
                }
            }
        }
        Ok(out)
    }

    /// Transposed product `selfᵀ * dense`, used by backward passes.
    /// Sequential scatter in row order keeps the result deterministic.
    pub fn spmm_t(&self, dense: &Mat<T>) -> Result<Mat<T>, GraphError> {
        if self.rows != dense.rows() {
            return Err(GraphError::SpmmDims {
                adj_cols: self.rows,
                dense_rows: dense.rows(),
            });
        }
        let k = dense.cols();
        let mut out = Mat::zeros(self.cols, k);
        for i in 0..self.rows {
            let src = dense.row(i).to_vec();
            for idx in self.row_offsets[i]..self.row_offsets[i + 1] {
                let j = self.col_indices[idx];
                let w = self.values[idx];
                let dst = &mut out.data_mut()[j * k..(j + 1) * k];
                for (d, &s) in dst.iter_mut().zip(&src) {
                    *d = *d + w * s;
                }
            }
        }
        Ok(out)
    }

    pub fn to_dense(&self) -> Mat<T> {
        let mut out = Mat::zeros(self.rows, self.cols);
        for i in 0..self.rows {
            for (j, v) in self.row_entries(i) {
                out.set(i, j, v);
            }
        }
        out
    }
}

/// Self-looped, symmetrically normalized adjacency: entry (u, v) is
/// `1/sqrt((deg(u)+1) * (deg(v)+1))`, with a diagonal entry on every row.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedAdjacency<T> {
    csr: Csr<T>,
}

impl<T: Scalar> NormalizedAdjacency<T> {
    pub fn csr(&self) -> &Csr<T> {
        &self.csr
    }

    pub fn num_nodes(&self) -> usize {
        self.csr.rows()
    }

    pub fn spmm(&self, dense: &Mat<T>) -> Result<Mat<T>, GraphError> {
        self.csr.spmm(dense)
    }
}

/// Build the normalized adjacency for propagation. Isolated nodes get the
/// self-loop entry 1, so every row sum lies in (0, 1].
pub fn normalize_adjacency<T: Scalar>(g: &Graph) -> NormalizedAdjacency<T> {
    let n = g.num_nodes();
    let inv_sqrt: Vec<f64> = (0..n)
        .map(|u| 1.0 / ((g.degree(u) + 1) as f64).sqrt())
        .collect();
    let mut row_offsets = Vec::with_capacity(n + 1);
    row_offsets.push(0);
    let mut col_indices = Vec::new();
    let mut values = Vec::new();
    for u in 0..n {
        let mut placed_diag = false;
        for &v in g.neighbors(u) {
            if !placed_diag && v > u {
                col_indices.push(u);
                values.push(T::from_f64(inv_sqrt[u] * inv_sqrt[u]));
                placed_diag = true;
            }
            col_indices.push(v);
            values.push(T::from_f64(inv_sqrt[u] * inv_sqrt[v]));
        }
        if !placed_diag {
            col_indices.push(u);
            values.push(T::from_f64(inv_sqrt[u] * inv_sqrt[u]));
        }
        row_offsets.push(col_indices.len());
    }
    NormalizedAdjacency {
        csr: Csr::new(n, n, row_offsets, col_indices, values),
    }
}

/// Disjoint train/validation/test node sets.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitMask {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

impl SplitMask {
    /// Per-node role table of length `n`; nodes in no split map to `None`.
    pub fn roles(&self, n: usize) -> Vec<Option<SplitRole>> {
        let mut roles = vec![None; n];
        for &i in &self.train {
            roles[i] = Some(SplitRole::Train);
        }
        for &i in &self.val {
            roles[i] = Some(SplitRole::Val);
        }
        for &i in &self.test {
            roles[i] = Some(SplitRole::Test);
        }
        roles
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SplitRole {
    Train,
    Val,
    Test,
}

/// Randomly split `n` nodes by the given ratios. Sizes are floor-based with
/// the remainder assigned to test.
pub fn random_split(
    n: usize,
    ratios: (f64, f64, f64),
    rng: &mut ChaCha8Rng,
) -> Result<SplitMask, GraphError> {
    let (r_train, r_val, r_test) = ratios;
    if (r_train + r_val + r_test - 1.0).abs() > 1e-9 || r_train < 0.0 || r_val < 0.0 || r_test < 0.0
    {
        return Err(GraphError::BadSplitRatios(ratios));
    }
    let n_train = (r_train * n as f64).floor() as usize;
    let n_val = (r_val * n as f64).floor() as usize;
    let n_test = n - n_train - n_val;
    if n_train == 0 || n_val == 0 || n_test == 0 {
        return Err(GraphError::SplitTooSmall { n });
    }
    let mut order: Vec<usize> = (0..n).collect();
    shuffle(&mut order, rng);
    let mut train: Vec<usize> = order[..n_train].to_vec();
    let mut val: Vec<usize> = order[n_train..n_train + n_val].to_vec();
    let mut test: Vec<usize> = order[n_train + n_val..].to_vec();
    train.sort_unstable();
    val.sort_unstable();
    test.sort_unstable();
    Ok(SplitMask { train, val, test })
}

/// Fisher-Yates shuffle driven by the supplied generator.
pub fn shuffle<X>(items: &mut [X], rng: &mut ChaCha8Rng) {
    for i in (1..items.len()).rev() {
        let j = rng.random_range(0..=i);
        items.swap(i, j);
    }
}

/// One bipartite layer of a sampled block: `adj` maps source rows to target
/// rows with full-graph normalized weights, and `residual_select` picks the
/// target rows out of the source set (targets always come first in
/// `sources`).
#[derive(Debug, Clone)]
pub struct BlockLayer<T> {
    pub adj: Csr<T>,
    pub sources: Vec<usize>,
    pub targets: Vec<usize>,
    pub residual_select: Csr<T>,
}

/// Per-layer sampled neighborhoods for a batch of seed nodes. Layers are in
/// encoder order: layer 0 consumes the widest source set, the last layer
/// produces one row per seed.
#[derive(Debug, Clone)]
pub struct SampledBlock<T> {
    pub layers: Vec<BlockLayer<T>>,
    pub seeds: Vec<usize>,
}

impl<T: Scalar> SampledBlock<T> {
    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    /// Node ids whose feature rows feed the first layer.
    pub fn input_nodes(&self) -> &[usize] {
        &self.layers[0].sources
    }
}

/// Sample per-layer neighborhoods for `seeds`: each target keeps
/// `min(fanout, degree)` neighbors drawn without replacement, plus its
/// self-loop. Weights reuse the full-graph normalization. Deterministic
/// under a fixed seed.
pub fn neighbor_sample<T: Scalar>(
    g: &Graph,
    seeds: &[usize],
    fanouts: &[usize],
    rng: &mut ChaCha8Rng,
) -> Result<SampledBlock<T>, GraphError> {
    if seeds.is_empty() {
        return Err(GraphError::EmptySeeds);
    }
    for &s in seeds {
        if s >= g.num_nodes() {
            return Err(GraphError::SeedOutOfRange {
                seed: s,
                num_nodes: g.num_nodes(),
            });
        }
    }
    let inv_sqrt: Vec<f64> = (0..g.num_nodes())
        .map(|u| 1.0 / ((g.degree(u) + 1) as f64).sqrt())
        .collect();

    let mut frontier: Vec<usize> = Vec::with_capacity(seeds.len());
    {
        let mut seen = vec![false; g.num_nodes()];
        for &s in seeds {
            if !seen[s] {
                seen[s] = true;
                frontier.push(s);
            }
        }
    }
    let seeds_dedup = frontier.clone();

    let mut layers: Vec<BlockLayer<T>> = Vec::with_capacity(fanouts.len());
    for &fanout in fanouts.iter().rev() {
        let targets = frontier.clone();
        let mut sources = targets.clone();
        let mut pos = vec![usize::MAX; g.num_nodes()];
        for (i, &t) in sources.iter().enumerate() {
            pos[t] = i;
        }
        let mut row_offsets = vec![0usize];
        let mut col_indices = Vec::new();
        let mut values = Vec::new();
        let mut scratch = Vec::new();
        for (i, &t) in targets.iter().enumerate() {
            scratch.clear();
            scratch.extend_from_slice(g.neighbors(t));
            let keep = fanout.min(scratch.len());
            // Partial Fisher-Yates; the kept prefix is then sorted so the
            // summation order matches the full CSR ordering.
            for k in 0..keep {
                let j = rng.random_range(k..scratch.len());
                scratch.swap(k, j);
            }
            scratch.truncate(keep);
            scratch.sort_unstable();
            let mut entries: Vec<(usize, T)> = Vec::with_capacity(keep + 1);
            entries.push((i, T::from_f64(inv_sqrt[t] * inv_sqrt[t])));
            for &nb in scratch.iter() {
                let p = if pos[nb] != usize::MAX {
                    pos[nb]
                } else {
                    pos[nb] = sources.len();
                    sources.push(nb);
                    pos[nb] = sources.len() - 1;
                    sources.len() - 1
                };
                entries.push((p, T::from_f64(inv_sqrt[t] * inv_sqrt[nb])));
            }
            entries.sort_unstable_by_key(|&(c, _)| c);
            for (c, v) in entries {
                col_indices.push(c);
                values.push(v);
            }
            row_offsets.push(col_indices.len());
        }
        let adj = Csr::new(targets.len(), sources.len(), row_offsets, col_indices, values);
        let residual_select = {
            let offs: Vec<usize> = (0..=targets.len()).collect();
            let cols: Vec<usize> = (0..targets.len()).collect();
            let vals = vec![T::one(); targets.len()];
            Csr::new(targets.len(), sources.len(), offs, cols, vals)
        };
        layers.push(BlockLayer {
            adj,
            sources: sources.clone(),
            targets,
            residual_select,
        });
        frontier = sources;
    }
    layers.reverse();
    Ok(SampledBlock {
        layers,
        seeds: seeds_dedup,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;

    /// Dense reference for the normalized adjacency: D^{-1/2} (A + I) D^{-1/2}.
    fn dense_normalized(g: &Graph) -> Mat<f64> {
        let n = g.num_nodes();
        let mut a = Mat::<f64>::zeros(n, n);
        for u in 0..n {
            for &v in g.neighbors(u) {
                a.set(u, v, 1.0);
            }
            a.set(u, u, a.get(u, u) + 1.0);
        }
        let deg: Vec<f64> = (0..n).map(|u| (g.degree(u) + 1) as f64).collect();
        let mut out = Mat::zeros(n, n);
        for u in 0..n {
            for v in 0..n {
                out.set(u, v, a.get(u, v) / (deg[u] * deg[v]).sqrt());
            }
        }
        out
    }

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn build_dedups_and_symmetrizes() {
        let g = build_graph(&[(0, 1), (1, 0), (0, 1), (2, 2)], 3).unwrap();
        assert_eq!(g.num_edges(), 1);
        assert_eq!(g.neighbors(0), &[1]);
        assert_eq!(g.neighbors(1), &[0]);
        assert_eq!(g.neighbors(2), &[] as &[usize]);
    }

    #[test]
    fn build_empty_edge_list() {
        let g = build_graph(&[], 2).unwrap();
        assert_eq!(g.num_edges(), 0);
        assert_eq!(g.row_offsets(), &[0, 0, 0]);
    }

    #[test]
    fn build_rejects_out_of_range() {
        let err = build_graph(&[(0, 5)], 3).unwrap_err();
        match err {
            GraphError::EdgeOutOfRange { u, v, num_nodes } => {
                assert_eq!((u, v, num_nodes), (0, 5, 3));
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn normalize_isolated_node() {
        let g = build_graph(&[], 1).unwrap();
        let norm = normalize_adjacency::<f64>(&g);
        assert_eq!(norm.csr().to_dense().data(), &[1.0]);
    }

    #[test]
    fn normalize_single_edge() {
        let g = build_graph(&[(0, 1)], 2).unwrap();
        let norm = normalize_adjacency::<f64>(&g);
        let dense = norm.csr().to_dense();
        for &v in dense.data() {
            assert!((v - 0.5).abs() < 1e-12);
        }
    }

    #[test]
    fn normalize_path_matches_dense_oracle() {
        let g = build_graph(&[(0, 1), (1, 2)], 3).unwrap();
        let norm = normalize_adjacency::<f64>(&g);
        let dense = norm.csr().to_dense();
        let oracle = dense_normalized(&g);
        for (a, b) in dense.data().iter().zip(oracle.data()) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!((dense.get(0, 0) - 0.5).abs() < 1e-12);
        assert!((dense.get(0, 1) - 1.0 / 6.0f64.sqrt()).abs() < 1e-12);
        assert!((dense.get(1, 1) - 1.0 / 3.0).abs() < 1e-12);
        assert!((dense.get(2, 2) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn normalize_is_deterministic() {
        let g = build_graph(&[(0, 1), (1, 2), (0, 3)], 4).unwrap();
        let a = normalize_adjacency::<f32>(&g);
        let b = normalize_adjacency::<f32>(&g);
        assert_eq!(a, b);
    }

    #[test]
    fn spmm_isolated_identity() {
        let g = build_graph(&[], 1).unwrap();
        let norm = normalize_adjacency::<f64>(&g);
        let x = Mat::from_vec(1, 1, vec![3.0]);
        assert_eq!(norm.spmm(&x).unwrap().data(), &[3.0]);
    }

    #[test]
    fn spmm_two_node_halves() {
        let g = build_graph(&[(0, 1)], 2).unwrap();
        let norm = normalize_adjacency::<f64>(&g);
        let x = Mat::identity(2);
        let y = norm.spmm(&x).unwrap();
        for &v in y.data() {
            assert!((v - 0.5).abs() < 1e-12);
        }
    }

    #[test]
    fn spmm_rejects_dim_mismatch() {
        let g = build_graph(&[(0, 1)], 2).unwrap();
        let norm = normalize_adjacency::<f64>(&g);
        let x = Mat::<f64>::zeros(3, 2);
        assert!(matches!(
            norm.spmm(&x),
            Err(GraphError::SpmmDims { adj_cols: 2, dense_rows: 3 })
        ));
    }

    #[test]
    fn spmm_matches_dense_oracle_on_random_graph() {
        let mut r = rng(9);
        let mut edges = Vec::new();
        for u in 0..10usize {
            for v in (u + 1)..10 {
                if r.random::<f64>() < 0.4 {
                    edges.push((u, v));
                }
            }
        }
        let g = build_graph(&edges, 10).unwrap();
        let norm = normalize_adjacency::<f64>(&g);
        let x = Mat::from_vec(10, 4, (0..40).map(|i| (i as f64 * 0.37).sin()).collect());
        let fast = norm.spmm(&x).unwrap();
        let oracle = dense_normalized(&g).matmul(&x);
        for (a, b) in fast.data().iter().zip(oracle.data()) {
            let rel = (a - b).abs() / b.abs().max(1.0);
            assert!(rel < 1e-6);
        }
    }

    #[test]
    fn row_sums_in_unit_interval() {
        let g = build_graph(&[(0, 1), (1, 2), (3, 3)], 5).unwrap();
        let norm = normalize_adjacency::<f64>(&g);
        let ones = Mat::filled(5, 1, 1.0);
        let sums = norm.spmm(&ones).unwrap();
        for u in 0..5 {
            let s = sums.get(u, 0);
            assert!(s > 0.0 && s <= 1.0 + 1e-12);
            if g.degree(u) == 0 {
                assert!((s - 1.0).abs() < 1e-12);
            } else {
                assert!(s < 1.0);
            }
        }
    }

    #[test]
    fn random_split_sizes() {
        let m = random_split(100, (0.05, 0.15, 0.80), &mut rng(1)).unwrap();
        assert_eq!((m.train.len(), m.val.len(), m.test.len()), (5, 15, 80));
    }

    #[test]
    fn random_split_seed_sensitivity() {
        let a = random_split(1000, (0.05, 0.15, 0.80), &mut rng(1)).unwrap();
        let b = random_split(1000, (0.05, 0.15, 0.80), &mut rng(2)).unwrap();
        assert_ne!(a.train, b.train);
        assert_eq!(a.train.len(), b.train.len());
        assert_eq!(a.val.len(), b.val.len());
        assert_eq!(a.test.len(), b.test.len());
    }

    #[test]
    fn random_split_too_small() {
        assert!(matches!(
            random_split(10, (0.05, 0.15, 0.80), &mut rng(1)),
            Err(GraphError::SplitTooSmall { n: 10 })
        ));
    }

    #[test]
    fn split_disjointness() {
        let m = random_split(57, (0.10, 0.20, 0.70), &mut rng(3)).unwrap();
        let mut all: Vec<usize> = m
            .train
            .iter()
            .chain(&m.val)
            .chain(&m.test)
            .copied()
            .collect();
        all.sort_unstable();
        all.dedup();
        assert_eq!(all.len(), 57);
    }

    #[test]
    fn sample_saturating_fanout_covers_neighborhood() {
        let g = build_graph(&[(0, 1), (0, 2), (1, 2), (2, 3)], 4).unwrap();
        let block = neighbor_sample::<f64>(&g, &[0, 2], &[usize::MAX], &mut rng(5)).unwrap();
        let layer = &block.layers[0];
        let norm = normalize_adjacency::<f64>(&g);
        let full = norm.csr().to_dense();
        let dense = layer.adj.to_dense();
        for (i, &t) in layer.targets.iter().enumerate() {
            for (j, &s) in layer.sources.iter().enumerate() {
                assert!((dense.get(i, j) - full.get(t, s)).abs() < 1e-12);
            }
        }
        // Every full-graph entry of a target row must be present.
        for &t in &layer.targets {
            let expected: usize = g.degree(t) + 1;
            let i = layer.targets.iter().position(|&x| x == t).unwrap();
            let got = layer.adj.row_entries(i).count();
            assert_eq!(got, expected);
        }
    }

    #[test]
    fn sample_is_deterministic() {
        let g = build_graph(&[(0, 1), (0, 2), (0, 3), (0, 4), (0, 5)], 6).unwrap();
        let a = neighbor_sample::<f32>(&g, &[0, 3], &[2, 2], &mut rng(11)).unwrap();
        let b = neighbor_sample::<f32>(&g, &[0, 3], &[2, 2], &mut rng(11)).unwrap();
        assert_eq!(a.layers.len(), b.layers.len());
        for (la, lb) in a.layers.iter().zip(&b.layers) {
            assert_eq!(la.adj, lb.adj);
            assert_eq!(la.sources, lb.sources);
            assert_eq!(la.targets, lb.targets);
        }
    }

    #[test]
    fn sample_star_center_keeps_two_leaves() {
        let g = build_graph(&[(0, 1), (0, 2), (0, 3), (0, 4), (0, 5)], 6).unwrap();
        let block = neighbor_sample::<f64>(&g, &[0], &[2], &mut rng(7)).unwrap();
        let layer = &block.layers[0];
        // Self-loop plus exactly two sampled leaves.
        assert_eq!(layer.adj.row_entries(0).count(), 3);
        assert_eq!(layer.sources.len(), 3);
        assert_eq!(layer.sources[0], 0);
    }

    #[test]
    fn sample_rejects_empty_seeds() {
        let g = build_graph(&[(0, 1)], 2).unwrap();
        assert!(matches!(
            neighbor_sample::<f64>(&g, &[], &[1], &mut rng(0)),
            Err(GraphError::EmptySeeds)
        ));
    }

    #[test]
    fn parse_edge_list_skips_comments() {
        let text = "# header\n0\t1\n\n2\t0\n";
        let edges = parse_edge_list(text, "edges.tsv").unwrap();
        assert_eq!(edges, vec![(0, 1), (2, 0)]);
    }

    #[test]
    fn parse_edge_list_reports_line() {
        let err = parse_edge_list("0\t1\nx\t2\n", "edges.tsv").unwrap_err();
        match err {
            GraphError::EdgeListParse { line, .. } => assert_eq!(line, 2),
            other => panic!("unexpected error {other:?}"),
        }
    }

    proptest! {
        #[test]
        fn csr_spmm_matches_dense_oracle(
            seed in 0u64..500,
            n in 2usize..12,
            k in 1usize..5,
        ) {
            let mut r = rng(seed);
            let mut edges = Vec::new();
            for u in 0..n {
                for v in (u + 1)..n {
                    if r.random::<f64>() < 0.5 {
                        edges.push((u, v));
                    }
                }
            }
            let g = build_graph(&edges, n).unwrap();
            let norm = normalize_adjacency::<f64>(&g);
            let x = Mat::from_vec(
                n,
                k,
                (0..n * k).map(|_| r.random::<f64>() * 2.0 - 1.0).collect(),
            );
            let fast = norm.spmm(&x).unwrap();
            let oracle = dense_normalized(&g).matmul(&x);
            for (a, b) in fast.data().iter().zip(oracle.data()) {
                let rel = (a - b).abs() / b.abs().max(1.0);
                prop_assert!(rel < 1e-6);
            }
        }
    }
}
