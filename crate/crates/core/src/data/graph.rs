use std::io::Read;
use std::path::Path;

use crate::error::{Error, Result};
use crate::numerics::Tensor;

/// Road-network connectivity used as a binary attention mask.
#[derive(Clone, Debug, PartialEq)]
pub struct PredefinedGraph {
    n_nodes: usize,
    /// `[N, N]` of {0, 1}: symmetric, with self-loops.
    mask: Tensor<f64>,
    /// `[N, N]` non-negative costs, symmetrized by the max of both directions.
    raw_weights: Tensor<f64>,
}

impl PredefinedGraph {
    /// Builds the graph from directed `(from, to, cost)` edges.
    pub fn from_edges(n_nodes: usize, edges: &[(usize, usize, f64)]) -> Result<Self> {
        if n_nodes == 0 {
            return Err(Error::InvalidShape("graph needs at least one node".into()));
        }
        let mut mask = vec![0.0; n_nodes * n_nodes];
        let mut weights = vec![0.0; n_nodes * n_nodes];
        for i in 0..n_nodes {
            mask[i * n_nodes + i] = 1.0;
        }
        for (line, &(a, b, cost)) in edges.iter().enumerate() {
            if a >= n_nodes || b >= n_nodes {
                return Err(Error::Adjacency {
                    line: line + 2,
                    msg: format!("node id out of range for {n_nodes} nodes: ({a}, {b})"),
                });
            }
            if !(cost.is_finite() && cost >= 0.0) {
                return Err(Error::Adjacency {
                    line: line + 2,
                    msg: format!("cost must be finite and non-negative, got {cost}"),
                });
            }
            for (i, j) in [(a, b), (b, a)] {
                mask[i * n_nodes + j] = 1.0;
                let w = &mut weights[i * n_nodes + j];
                *w = f64::max(*w, cost);
            }
        }
        Ok(PredefinedGraph {
            n_nodes,
            mask: Tensor::new(vec![n_nodes, n_nodes], mask)?,
            raw_weights: Tensor::new(vec![n_nodes, n_nodes], weights)?,
        })
    }

    /// Parses a `from,to,cost` CSV edge list.
    pub fn from_csv<R: Read>(reader: R, n_nodes: usize) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(true)
            .trim(csv::Trim::All)
            .from_reader(reader);
        let headers = rdr
            .headers()
            .map_err(|e| Error::Adjacency {
                line: 1,
                msg: e.to_string(),
            })?
            .clone();
        if headers.iter().collect::<Vec<_>>() != ["from", "to", "cost"] {
            return Err(Error::Adjacency {
                line: 1,
                msg: format!("expected header from,to,cost, got {:?}", headers),
            });
        }
        let mut edges = Vec::new();
        for (i, rec) in rdr.records().enumerate() {
            let line = i + 2;
            let rec = rec.map_err(|e| Error::Adjacency {
                line,
                msg: e.to_string(),
            })?;
            let field = |k: usize| rec.get(k).unwrap_or("");
            let id = |k: usize| {
                field(k).parse::<usize>().map_err(|_| Error::Adjacency {
                    line,
                    msg: format!("invalid node id {:?}", field(k)),
                })
            };
            let (a, b) = (id(0)?, id(1)?);
            let cost: f64 = field(2).parse().map_err(|_| Error::Adjacency {
                line,
                msg: format!("invalid cost {:?}", field(2)),
            })?;
            edges.push((a, b, cost));
        }
        Self::from_edges(n_nodes, &edges)
    }

    pub fn load(path: &Path, n_nodes: usize) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::from_csv(std::io::BufReader::new(file), n_nodes)
    }

    /// Fully isolated nodes: the mask is the identity.
    pub fn isolated(n_nodes: usize) -> Self {
        Self::from_edges(n_nodes, &[]).expect("non-empty")
    }

    pub fn n_nodes(&self) -> usize {
        self.n_nodes
    }

    pub fn mask(&self) -> &Tensor<f64> {
        &self.mask
    }

    pub fn raw_weights(&self) -> &Tensor<f64> {
        &self.raw_weights
    }

    pub fn is_connected(&self, i: usize, j: usize) -> bool {
        self.mask.data()[i * self.n_nodes + j] != 0.0
    }

    /// Binary mask with each row scaled to sum to one.
    pub fn row_normalized(&self) -> Tensor<f64> {
        let n = self.n_nodes;
        let mut out = self.mask.data().to_vec();
        for row in out.chunks_mut(n) {
            let s: f64 = row.iter().sum();
            row.iter_mut().for_each(|v| *v /= s);
        }
        Tensor::new(vec![n, n], out).expect("square")
    }

    /// Writes the edge list (upper triangle, no self-loops) as CSV.
    pub fn to_csv(&self) -> String {
        let n = self.n_nodes;
        let mut s = String::from("from,to,cost\n");
        for i in 0..n {
            for j in i + 1..n {
                if self.is_connected(i, j) {
                    s.push_str(&format!("{i},{j},{}\n", self.raw_weights.data()[i * n + j]));
                }
            }
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(s: &str, n: usize) -> Result<PredefinedGraph> {
        PredefinedGraph::from_csv(s.as_bytes(), n)
    }

    #[test]
    fn single_edge_is_symmetrized_with_self_loops() {
        let g = parse("from,to,cost\n0,1,3.5\n", 3).unwrap();
        assert_eq!(
            g.mask().data(),
            &[1., 1., 0., 1., 1., 0., 0., 0., 1.]
        );
        assert_eq!(g.raw_weights().data()[1], 3.5);
        assert_eq!(g.raw_weights().data()[3], 3.5);
    }

    #[test]
    fn empty_edge_list_is_identity() {
        let g = parse("from,to,cost\n", 2).unwrap();
        assert_eq!(g.mask().data(), &[1., 0., 0., 1.]);
    }

    #[test]
    fn duplicates_are_idempotent() {
        let a = parse("from,to,cost\n0,2,1\n", 3).unwrap();
        let b = parse("from,to,cost\n0,2,1\n0,2,1\n2,0,1\n", 3).unwrap();
        assert_eq!(a.mask(), b.mask());
        assert_eq!(a.raw_weights(), b.raw_weights());
    }

    #[test]
    fn errors_report_line_numbers() {
        assert!(matches!(parse("from,to,cost\n0,3,1\n", 3), Err(Error::Adjacency { line: 2, .. })));
        assert!(matches!(parse("from,to,cost\n0,1,1\n0,x,1\n", 3), Err(Error::Adjacency { line: 3, .. })));
        assert!(matches!(parse("from,to,cost\n0,1,-2\n", 3), Err(Error::Adjacency { .. })));
        assert!(matches!(parse("a,b,c\n0,1,1\n", 3), Err(Error::Adjacency { line: 1, .. })));
        assert!(matches!(parse("from,to,cost\n0,1\n", 3), Err(Error::Adjacency { .. })));
    }

    #[test]
    fn csv_export_reparses_identically() {
        let g = parse("from,to,cost\n0,1,2\n3,2,5\n", 4).unwrap();
        assert_eq!(parse(&g.to_csv(), 4).unwrap(), g);
    }

    #[test]
    fn row_normalized_rows_sum_to_one() {
        let g = parse("from,to,cost\n0,1,2\n1,2,1\n", 3).unwrap();
        let r = g.row_normalized();
        for row in r.data().chunks(3) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        }
        assert_eq!(r.data()[4], 1.0 / 3.0);
    }
}
