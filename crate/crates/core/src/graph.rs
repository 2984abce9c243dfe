//! kNN graph construction in arbitrary feature spaces and edge-feature
//! assembly for graph convolution.
//!
//! Neighbor search is exhaustive over feature rows: graphs are built in up
//! to a few hundred dimensions where spatial trees buy nothing. Ties are
//! broken by lower node index, matching the spatial index convention.

use crate::error::{Error, Result};

/// Row-major (nodes × channels) feature storage.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl FeatureMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::ShapeMismatch(format!(
                "feature matrix {rows}x{cols} needs {} values, got {}",
                rows * cols,
                data.len()
            )));
        }
        Ok(FeatureMatrix { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        FeatureMatrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }
}

/// Per-node lists of the k nearest other nodes, in (distance, index) order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NeighborGraph {
    k: usize,
    neighbors: Vec<Vec<usize>>,
}

impl NeighborGraph {
    pub fn k(&self) -> usize {
        self.k
    }

    pub fn node_count(&self) -> usize {
        self.neighbors.len()
    }

    pub fn neighbors_of(&self, node: usize) -> &[usize] {
        &self.neighbors[node]
    }
}

/// For each node, the k distinct other nodes with smallest Euclidean
/// distance in feature space; ties broken by lower index. Self-loops are
/// excluded.
pub fn knn_graph(features: &FeatureMatrix, k: usize) -> Result<NeighborGraph> {
    let n = features.rows();
    if k < 1 {
        return Err(Error::InvalidArgument("k must be >= 1".into()));
    }
    if k >= n {
        return Err(Error::InvalidArgument(format!(
            "k = {k} requires more than {k} nodes, got {n}"
        )));
    }
    let mut neighbors = Vec::with_capacity(n);
    let mut cand: Vec<(f64, usize)> = Vec::with_capacity(n - 1);
    for i in 0..n {
        cand.clear();
        let xi = features.row(i);
        for j in 0..n {
            if j == i {
                continue;
            }
            let xj = features.row(j);
            let d: f64 = xi
                .iter()
                .zip(xj)
                .map(|(a, b)| {
                    let t = a - b;
                    t * t
                })
                .sum();
            cand.push((d, j));
        }
        cand.select_nth_unstable_by(k - 1, |a, b| {
            a.partial_cmp(b).expect("non-finite feature distance")
        });
        let mut picked: Vec<(f64, usize)> = cand[..k].to_vec();
        picked.sort_by(|a, b| a.partial_cmp(b).expect("non-finite feature distance"));
        neighbors.push(picked.into_iter().map(|(_, j)| j).collect());
    }
    Ok(NeighborGraph { k, neighbors })
}

/// Builds a graph over the 3D rows of a point list (helper for input
/// coordinate graphs).
pub fn knn_graph_points(points: &[crate::geometry::Point3], k: usize) -> Result<NeighborGraph> {
    let data: Vec<f64> = points.iter().flat_map(|p| p.to_array()).collect();
    let fm = FeatureMatrix::new(points.len(), 3, data)?;
    knn_graph(&fm, k)
}

/// For each node i and neighbor j, the concatenation (x_i, x_j − x_i).
/// Output is row-major with shape (nodes · k, 2 · channels): the edge for
/// (node i, neighbor slot s) occupies row i·k + s.
pub fn edge_features(x: &FeatureMatrix, g: &NeighborGraph) -> Result<Vec<f64>> {
    if g.node_count() != x.rows() {
        return Err(Error::LengthMismatch {
            what: "graph nodes vs feature rows",
            expected: x.rows(),
            got: g.node_count(),
        });
    }
    let (n, c, k) = (x.rows(), x.cols(), g.k());
    let mut out = vec![0.0; n * k * 2 * c];
    for i in 0..n {
        let xi = x.row(i);
        for (s, &j) in g.neighbors_of(i).iter().enumerate() {
            let xj = x.row(j);
            let base = (i * k + s) * 2 * c;
            out[base..base + c].copy_from_slice(xi);
            for t in 0..c {
                out[base + c + t] = xj[t] - xi[t];
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn knn_hand_computed_1d() {
        let fm = FeatureMatrix::new(3, 1, vec![0.0, 1.0, 3.0]).unwrap();
        let g = knn_graph(&fm, 1).unwrap();
        assert_eq!(g.neighbors_of(0), &[1]);
        assert_eq!(g.neighbors_of(1), &[0]);
        assert_eq!(g.neighbors_of(2), &[1]);
    }

    #[test]
    fn knn_complete_graph_when_k_is_n_minus_1() {
        let fm = FeatureMatrix::new(4, 2, vec![0.0, 0.0, 1.0, 0.0, 0.0, 1.0, 1.0, 1.0]).unwrap();
        let g = knn_graph(&fm, 3).unwrap();
        for i in 0..4 {
            let mut ns: Vec<usize> = g.neighbors_of(i).to_vec();
            ns.sort_unstable();
            let expected: Vec<usize> = (0..4).filter(|&j| j != i).collect();
            assert_eq!(ns, expected);
        }
    }

    #[test]
    fn knn_rejects_k_ge_node_count() {
        let fm = FeatureMatrix::new(3, 1, vec![0.0, 1.0, 2.0]).unwrap();
        assert!(knn_graph(&fm, 3).is_err());
        assert!(knn_graph(&fm, 0).is_err());
    }

    #[test]
    fn edge_features_hand_computed() {
        let fm = FeatureMatrix::new(2, 1, vec![0.0, 5.0]).unwrap();
        let g = knn_graph(&fm, 1).unwrap();
        let e = edge_features(&fm, &g).unwrap();
        // node0 -> (x0, x1 - x0) = (0, 5); node1 -> (5, -5)
        assert_eq!(e, vec![0.0, 5.0, 5.0, -5.0]);
    }

    #[test]
    fn edge_features_constant_rows_zero_difference() {
        let fm = FeatureMatrix::new(3, 2, vec![2.0, -1.0, 2.0, -1.0, 2.0, -1.0]).unwrap();
        let g = knn_graph(&fm, 2).unwrap();
        let e = edge_features(&fm, &g).unwrap();
        for i in 0..3 {
            for s in 0..2 {
                let base = (i * 2 + s) * 4;
                assert_eq!(&e[base..base + 4], &[2.0, -1.0, 0.0, 0.0]);
            }
        }
    }

    #[test]
    fn edge_features_zero_matrix_is_zero() {
        let fm = FeatureMatrix::zeros(4, 3);
        let g = knn_graph(&fm, 2).unwrap();
        let e = edge_features(&fm, &g).unwrap();
        assert!(e.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn edge_features_node_count_mismatch() {
        let fm3 = FeatureMatrix::zeros(3, 2);
        let fm4 = FeatureMatrix::zeros(4, 2);
        let g = knn_graph(&fm4, 2).unwrap();
        assert!(edge_features(&fm3, &g).is_err());
    }
}
