//! Account co-appearance graph and its normalized propagation operators.

use std::collections::HashMap;
use std::io::{BufRead, Write};
use std::sync::Arc;

use dormant_autodiff::CsrMatrix;

use crate::ingest::Dataset;
use crate::Error;

/// Undirected, unweighted graph over accounts; node order is lexicographic by id.
#[derive(Debug, Clone)]
pub struct CoAppearanceGraph {
    ids: Vec<String>,
    index: HashMap<String, usize>,
    adjacency: Arc<CsrMatrix>,
    /// Number of shared articles per stored adjacency entry.
    co_counts: Vec<u32>,
}

impl CoAppearanceGraph {
    /// Links every pair of accounts that participate (author or retained commentor)
    /// in a common article.
    pub fn build(dataset: &Dataset) -> Self {
        let ids: Vec<String> = dataset.accounts().iter().cloned().collect();
        let index: HashMap<String, usize> = ids.iter().enumerate().map(|(i, id)| (id.clone(), i)).collect();
        let groups = dataset.articles().iter().map(|a| {
            a.article
                .participants()
                .into_iter()
                .map(|u| index[u])
                .collect::<Vec<usize>>()
        });
        Self::from_groups(ids, groups)
    }

    /// Builds the graph from explicit node ids and participant groups (node indices).
    pub fn from_groups<I>(ids: Vec<String>, groups: I) -> Self
    where
        I: IntoIterator<Item = Vec<usize>>,
    {
        let n = ids.len();
        let mut pairs: Vec<(u32, u32)> = Vec::new();
        for mut g in groups {
            g.sort_unstable();
            g.dedup();
            for (k, &i) in g.iter().enumerate() {
                for &j in &g[k + 1..] {
                    pairs.push((i as u32, j as u32));
                }
            }
        }
        pairs.sort_unstable();

        let mut edges: Vec<(u32, u32, u32)> = Vec::new();
        for p in pairs {
            match edges.last_mut() {
                Some(last) if (last.0, last.1) == p => last.2 += 1,
                _ => edges.push((p.0, p.1, 1)),
            }
        }

        let mut degree = vec![0usize; n];
        for &(i, j, _) in &edges {
            degree[i as usize] += 1;
            degree[j as usize] += 1;
        }
        let mut indptr = vec![0usize; n + 1];
        for i in 0..n {
            indptr[i + 1] = indptr[i] + degree[i];
        }
        let mut cursor = indptr.clone();
        let mut indices = vec![0usize; indptr[n]];
        let mut counts = vec![0u32; indptr[n]];
        for &(i, j, c) in &edges {
            let (i, j) = (i as usize, j as usize);
            indices[cursor[i]] = j;
            counts[cursor[i]] = c;
            cursor[i] += 1;
            indices[cursor[j]] = i;
            counts[cursor[j]] = c;
            cursor[j] += 1;
        }
        // Rows were filled in (i, j) order, so row i's entries j > i are sorted, and
        // entries j < i arrived earlier in increasing order too; still sort per row.
        for r in 0..n {
            let span = indptr[r]..indptr[r + 1];
            let mut row: Vec<(usize, u32)> = indices[span.clone()]
                .iter()
                .copied()
                .zip(counts[span.clone()].iter().copied())
                .collect();
            row.sort_unstable();
            for (k, (c, w)) in row.into_iter().enumerate() {
                indices[span.start + k] = c;
                counts[span.start + k] = w;
            }
        }
        let values = vec![1.0; indices.len()];
        let adjacency = CsrMatrix::from_raw(n, n, indptr, indices, values).expect("constructed CSR is well formed");
        let index = ids.iter().enumerate().map(|(i, id)| (id.clone(), i)).collect();
        Self {
            ids,
            index,
            adjacency: Arc::new(adjacency),
            co_counts: counts,
        }
    }

    pub fn node_count(&self) -> usize {
        self.ids.len()
    }

    /// Number of undirected edges.
    pub fn edge_count(&self) -> usize {
        self.adjacency.nnz() / 2
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn id(&self, node: usize) -> &str {
        &self.ids[node]
    }

    pub fn node(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn adjacency(&self) -> &Arc<CsrMatrix> {
        &self.adjacency
    }

    pub fn has_edge(&self, i: usize, j: usize) -> bool {
        self.adjacency.get(i, j) != 0.0
    }

    pub fn degree(&self, i: usize) -> usize {
        self.adjacency.indptr()[i + 1] - self.adjacency.indptr()[i]
    }

    /// Neighbors of `i` with the number of articles they share with it.
    pub fn neighbors(&self, i: usize) -> impl Iterator<Item = (usize, u32)> + '_ {
        let span = self.adjacency.indptr()[i]..self.adjacency.indptr()[i + 1];
        self.adjacency.indices()[span.clone()]
            .iter()
            .copied()
            .zip(self.co_counts[span].iter().copied())
    }

    /// Writes `id1 id2` per undirected edge, `id1 < id2`, in node order.
    pub fn write_edge_list<W: Write>(&self, mut w: W) -> Result<(), Error> {
        for i in 0..self.node_count() {
            for (j, _) in self.neighbors(i) {
                if j > i {
                    writeln!(w, "{} {}", self.ids[i], self.ids[j])?;
                }
            }
        }
        Ok(())
    }

    /// Writes `index<TAB>id` per node.
    pub fn write_node_manifest<W: Write>(&self, mut w: W) -> Result<(), Error> {
        for (i, id) in self.ids.iter().enumerate() {
            writeln!(w, "{i}\t{id}")?;
        }
        Ok(())
    }

    /// Reads an edge list written by [`Self::write_edge_list`] against this graph's node ids.
    pub fn read_edge_list<R: BufRead>(&self, r: R) -> Result<Vec<(usize, usize)>, Error> {
        let mut out = Vec::new();
        for (k, line) in r.lines().enumerate() {
            let line = line?;
            let mut parts = line.split_whitespace();
            let (Some(a), Some(b), None) = (parts.next(), parts.next(), parts.next()) else {
                return Err(Error::Rejected {
                    line: k + 1,
                    reason: "expected two ids".into(),
                });
            };
            let ia = self.node(a).ok_or_else(|| Error::UnknownAccount(a.into()))?;
            let ib = self.node(b).ok_or_else(|| Error::UnknownAccount(b.into()))?;
            out.push((ia, ib));
        }
        Ok(out)
    }
}

/// Constant sparse operator used for propagation on the tape.
#[derive(Debug, Clone)]
pub struct SparseOperator {
    matrix: Arc<CsrMatrix>,
    symmetric: bool,
}

impl SparseOperator {
    pub fn new(matrix: CsrMatrix) -> Self {
        let symmetric = matrix.is_symmetric(1e-12);
        Self {
            matrix: Arc::new(matrix),
            symmetric,
        }
    }

    pub fn matrix(&self) -> &Arc<CsrMatrix> {
        &self.matrix
    }

    pub fn is_symmetric(&self) -> bool {
        self.symmetric
    }

    pub fn n(&self) -> usize {
        self.matrix.n_rows()
    }
}

/// `D^{-1/2} Â D^{-1/2}` with `Â = A + I` when `add_self_loops`, else `Â = A`
/// (zero-degree rows stay zero).
pub fn normalized_adjacency(graph: &CoAppearanceGraph, add_self_loops: bool) -> SparseOperator {
    let a = graph.adjacency();
    let n = a.n_rows();
    let loop_weight = if add_self_loops { 1.0 } else { 0.0 };
    let inv_sqrt: Vec<f64> = (0..n)
        .map(|i| {
            let d = graph.degree(i) as f64 + loop_weight;
            if d > 0.0 {
                1.0 / d.sqrt()
            } else {
                0.0
            }
        })
        .collect();
    let mut triplets = Vec::with_capacity(a.nnz() + if add_self_loops { n } else { 0 });
    for i in 0..n {
        for (j, _) in a.row(i) {
            triplets.push((i, j, inv_sqrt[i] * inv_sqrt[j]));
        }
        if add_self_loops {
            triplets.push((i, i, inv_sqrt[i] * inv_sqrt[i]));
        }
    }
    let m = CsrMatrix::from_triplets(n, n, &triplets).expect("indices within node range");
    SparseOperator {
        matrix: Arc::new(m),
        symmetric: true,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ids(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("u{i}")).collect()
    }

    #[test]
    fn single_article_is_a_clique() {
        let g = CoAppearanceGraph::from_groups(ids(3), [vec![0, 1, 2]]);
        assert_eq!(g.edge_count(), 3);
        assert!(g.has_edge(0, 1) && g.has_edge(0, 2) && g.has_edge(1, 2));
        assert!(!g.has_edge(0, 0));
    }

    #[test]
    fn disjoint_articles_give_disjoint_cliques() {
        let g = CoAppearanceGraph::from_groups(ids(4), [vec![0, 1], vec![2, 3]]);
        assert_eq!(g.edge_count(), 2);
        assert!(!g.has_edge(1, 2));
    }

    #[test]
    fn co_counts_track_shared_articles() {
        let g = CoAppearanceGraph::from_groups(ids(3), [vec![0, 1], vec![1, 0, 2], vec![0, 1]]);
        let n0: Vec<_> = g.neighbors(0).collect();
        assert_eq!(n0, vec![(1, 3), (2, 1)]);
    }

    #[test]
    fn isolated_node_with_self_loop() {
        let g = CoAppearanceGraph::from_groups(ids(1), Vec::<Vec<usize>>::new());
        let op = normalized_adjacency(&g, true);
        assert_eq!(op.matrix().to_dense()[[0, 0]], 1.0);
        let op = normalized_adjacency(&g, false);
        assert_eq!(op.matrix().nnz(), 0);
    }

    #[test]
    fn connected_pair_normalizes_to_half() {
        let g = CoAppearanceGraph::from_groups(ids(2), [vec![0, 1]]);
        let dense = normalized_adjacency(&g, true).matrix().to_dense();
        for v in dense.iter() {
            assert!((v - 0.5).abs() < 1e-15);
        }
    }

    #[test]
    fn empty_graph() {
        let g = CoAppearanceGraph::from_groups(Vec::new(), Vec::<Vec<usize>>::new());
        assert_eq!(g.node_count(), 0);
        assert_eq!(normalized_adjacency(&g, true).n(), 0);
    }

    #[test]
    fn edge_list_round_trip() {
        let g = CoAppearanceGraph::from_groups(ids(4), [vec![0, 3], vec![1, 2, 3]]);
        let mut buf = Vec::new();
        g.write_edge_list(&mut buf).unwrap();
        let edges = g.read_edge_list(buf.as_slice()).unwrap();
        assert_eq!(edges.len(), g.edge_count());
        assert!(edges.iter().all(|&(a, b)| g.has_edge(a, b)));
    }
}
