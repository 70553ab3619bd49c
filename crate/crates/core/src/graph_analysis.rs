//! Interpretation of the learned adjacency: per-store centrality and a
//! hierarchical-clustering order that exposes block structure.

use std::cmp::Ordering;
use std::fmt::Write as _;
use std::path::Path;

use serde::Serialize;
use thiserror::Error;

use crate::fsutil::write_atomic;

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("adjacency has {len} entries, not {n} x {n}")]
    NotSquare { len: usize, n: usize },
    #[error("clustering needs at least 2 stores, got {0}")]
    TooFewStores(usize),
    #[error("malformed heatmap CSV: {0}")]
    Malformed(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, GraphError>;

/// Mean weight each store (column) sends into all receivers (rows).
pub fn centrality(a: &[f64], n: usize) -> Vec<f64> {
    (0..n)
        .map(|j| (0..n).map(|i| a[i * n + j]).sum::<f64>() / n as f64)
        .collect()
}

/// Average-linkage agglomerative clustering on `d = 1 - M / max offdiag(M)`
/// with `M = (A + A^T) / 2`. Returns the dendrogram leaf order as store
/// indices. Ties in merge distance go to the pair with the lower smallest
/// member; within a merge the cluster holding the lower index goes left.
pub fn cluster_reorder(a: &[f64], n: usize) -> Result<Vec<usize>> {
    if a.len() != n * n {
        return Err(GraphError::NotSquare { len: a.len(), n });
    }
    if n < 2 {
        return Err(GraphError::TooFewStores(n));
    }
    let m = |i: usize, j: usize| 0.5 * (a[i * n + j] + a[j * n + i]);
    let max_off = (0..n)
        .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
        .map(|(i, j)| m(i, j))
        .fold(f64::NEG_INFINITY, f64::max);
    let scale = if max_off > 0.0 { max_off } else { 1.0 };
    let d: Vec<f64> = (0..n * n).map(|k| 1.0 - m(k / n, k % n) / scale).collect();

    // Each cluster: (smallest member, members, leaf order).
    let mut clusters: Vec<(usize, Vec<usize>, Vec<usize>)> = (0..n).map(|i| (i, vec![i], vec![i])).collect();
    while clusters.len() > 1 {
        let mut best: Option<(f64, usize, usize, usize, usize)> = None;
        for x in 0..clusters.len() {
            for y in x + 1..clusters.len() {
                let (cx, cy) = (&clusters[x], &clusters[y]);
                let d = &d;
                let total: f64 = cx.1.iter().flat_map(|&i| cy.1.iter().map(move |&j| d[i * n + j])).sum();
                let dist = total / (cx.1.len() * cy.1.len()) as f64;
                let (lo, hi) = if cx.0 < cy.0 { (cx.0, cy.0) } else { (cy.0, cx.0) };
                let better = match best {
                    None => true,
                    Some((bd, blo, bhi, _, _)) => match dist.total_cmp(&bd) {
                        Ordering::Less => true,
                        Ordering::Greater => false,
                        Ordering::Equal => (lo, hi) < (blo, bhi),
                    },
                };
                if better {
                    best = Some((dist, lo, hi, x, y));
                }
            }
        }
        let (_, _, _, x, y) = best.expect("at least one pair");
        let cy = clusters.remove(y);
        let cx = clusters.remove(x);
        let (left, right) = if cx.0 < cy.0 { (cx, cy) } else { (cy, cx) };
        let mut members = left.1;
        members.extend(right.1);
        let mut order = left.2;
        order.extend(right.2);
        clusters.insert(x, (left.0, members, order));
    }
    Ok(clusters.pop().unwrap().2)
}

/// `A` with rows and columns permuted by `order`.
pub fn reorder(a: &[f64], n: usize, order: &[usize]) -> Vec<f64> {
    let mut out = Vec::with_capacity(n * n);
    for &i in order {
        for &j in order {
            out.push(a[i * n + j]);
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CentralityEntry {
    pub store: u32,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdjacencyAnalysis {
    pub stores: Vec<u32>,
    pub adjacency: Vec<f64>,
    pub centrality: Vec<f64>,
    /// Store ids by descending centrality (ties by id).
    pub ranking: Vec<u32>,
    /// Store indices in dendrogram order.
    pub leaf_order: Vec<usize>,
    pub reordered: Vec<f64>,
}

impl AdjacencyAnalysis {
    pub fn new(stores: Vec<u32>, adjacency: Vec<f64>) -> Result<Self> {
        let n = stores.len();
        let leaf_order = cluster_reorder(&adjacency, n)?;
        let centrality = centrality(&adjacency, n);
        let mut idx: Vec<usize> = (0..n).collect();
        idx.sort_by(|&a, &b| centrality[b].total_cmp(&centrality[a]).then(stores[a].cmp(&stores[b])));
        let reordered = reorder(&adjacency, n, &leaf_order);
        Ok(Self {
            ranking: idx.iter().map(|&i| stores[i]).collect(),
            stores,
            adjacency,
            centrality,
            leaf_order,
            reordered,
        })
    }

    pub fn num_stores(&self) -> usize {
        self.stores.len()
    }

    pub fn ordered_store_ids(&self) -> Vec<u32> {
        self.leaf_order.iter().map(|&i| self.stores[i]).collect()
    }

    /// `store,<ids in leaf order>` header, then one row per store in leaf
    /// order.
    pub fn heatmap_csv(&self) -> String {
        let ids = self.ordered_store_ids();
        let n = ids.len();
        let mut out = String::from("store");
        for id in &ids {
            let _ = write!(out, ",{id}");
        }
        out.push('\n');
        for (r, id) in ids.iter().enumerate() {
            let _ = write!(out, "{id}");
            for v in &self.reordered[r * n..(r + 1) * n] {
                let _ = write!(out, ",{v:e}");
            }
            out.push('\n');
        }
        out
    }

    pub fn centrality_json(&self) -> String {
        #[derive(Serialize)]
        struct Doc<'a> {
            ranking: Vec<CentralityEntry>,
            top5: &'a [u32],
            leaf_order: Vec<u32>,
        }
        let pos = |id: u32| self.stores.iter().position(|s| *s == id).unwrap();
        let doc = Doc {
            ranking: self
                .ranking
                .iter()
                .map(|&store| CentralityEntry {
                    store,
                    score: self.centrality[pos(store)],
                })
                .collect(),
            top5: &self.ranking[..self.ranking.len().min(5)],
            leaf_order: self.ordered_store_ids(),
        };
        let mut s = serde_json::to_string_pretty(&doc).expect("serializable");
        s.push('\n');
        s
    }
}

/// Writes the reordered matrix CSV and the centrality JSON sidecar.
pub fn export_heatmap_data(analysis: &AdjacencyAnalysis, csv_path: &Path, json_path: &Path) -> Result<()> {
    write_atomic(csv_path, analysis.heatmap_csv().as_bytes())?;
    write_atomic(json_path, analysis.centrality_json().as_bytes())?;
    Ok(())
}

/// Parses a heatmap CSV back into `(store ids, row-major matrix)`.
pub fn parse_heatmap_csv(text: &str) -> Result<(Vec<u32>, Vec<f64>)> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(text.as_bytes());
    let bad = |m: String| GraphError::Malformed(m);
    let header = rdr.headers().map_err(|e| bad(e.to_string()))?.clone();
    let ids: Vec<u32> = header
        .iter()
        .skip(1)
        .map(|h| h.parse().map_err(|_| bad(format!("bad store id {h}"))))
        .collect::<Result<_>>()?;
    let mut values = Vec::with_capacity(ids.len() * ids.len());
    for (r, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| bad(e.to_string()))?;
        if rec.get(0).and_then(|v| v.parse::<u32>().ok()) != ids.get(r).copied() {
            return Err(bad(format!("row {r} label does not match the header order")));
        }
        for v in rec.iter().skip(1) {
            values.push(v.parse().map_err(|_| bad(format!("bad value {v}")))?);
        }
    }
    if values.len() != ids.len() * ids.len() {
        return Err(GraphError::NotSquare {
            len: values.len(),
            n: ids.len(),
        });
    }
    Ok((ids, values))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn block_matrix(blocks: &[usize], inside: f64, outside: f64) -> Vec<f64> {
        let n = blocks.len();
        let mut a = vec![0.0; n * n];
        for i in 0..n {
            let row: Vec<f64> = (0..n).map(|j| if blocks[i] == blocks[j] { inside } else { outside }).collect();
            let total: f64 = row.iter().sum();
            for j in 0..n {
                a[i * n + j] = row[j] / total;
            }
        }
        a
    }

    fn contiguous(order: &[usize], blocks: &[usize]) -> bool {
        let labels: Vec<usize> = order.iter().map(|&i| blocks[i]).collect();
        let mut seen = Vec::new();
        for w in labels.windows(2) {
            if w[0] != w[1] {
                if seen.contains(&w[1]) {
                    return false;
                }
                seen.push(w[0]);
            }
        }
        !seen.contains(labels.last().unwrap())
    }

    #[test]
    fn uniform_centrality() {
        let a = vec![0.25; 16];
        assert!(centrality(&a, 4).iter().all(|c| (c - 0.25).abs() < 1e-15));
    }

    #[test]
    fn dominant_source_centrality() {
        let n = 3;
        let mut a = vec![0.0; 9];
        for i in 0..n {
            a[i * n + 1] = 1.0;
        }
        assert_eq!(centrality(&a, n), vec![0.0, 1.0, 0.0]);
    }

    #[test]
    fn perfect_blocks_are_contiguous() {
        // {1,2} and {3,4} interleaved in index order.
        let blocks = [0, 1, 0, 1];
        let a = block_matrix(&blocks, 1.0, 0.0);
        let order = cluster_reorder(&a, 4).unwrap();
        assert!(contiguous(&order, &blocks), "{order:?}");
        assert_eq!(order, vec![0, 2, 1, 3]);
    }

    #[test]
    fn two_stores_keep_index_order() {
        let a = vec![0.5; 4];
        assert_eq!(cluster_reorder(&a, 2).unwrap(), vec![0, 1]);
        let an = AdjacencyAnalysis::new(vec![1, 2], a).unwrap();
        assert_eq!(an.ordered_store_ids(), vec![1, 2]);
    }

    #[test]
    fn reordered_blocks_concentrate_weight() {
        let blocks = [0, 1, 2, 0, 1, 2, 0, 1];
        let a = block_matrix(&blocks, 3.0, 1.0);
        let n = blocks.len();
        let an = AdjacencyAnalysis::new((1..=n as u32).collect(), a).unwrap();
        let ob: Vec<usize> = an.leaf_order.iter().map(|&i| blocks[i]).collect();
        let (mut within, mut wn) = (0.0, 0.0);
        for i in 0..n {
            for j in 0..n {
                if ob[i] == ob[j] {
                    within += an.reordered[i * n + j];
                    wn += 1.0;
                }
            }
        }
        let overall = an.reordered.iter().sum::<f64>() / (n * n) as f64;
        assert!(within / wn >= overall);
        assert!(contiguous(&an.leaf_order, &blocks));
    }

    #[test]
    fn heatmap_round_trip_and_headers() {
        let blocks = [0, 1, 0, 1, 1];
        let a = block_matrix(&blocks, 2.0, 0.7);
        let an = AdjacencyAnalysis::new(vec![10, 20, 30, 40, 50], a.clone()).unwrap();
        let csv_text = an.heatmap_csv();
        let (ids, vals) = parse_heatmap_csv(&csv_text).unwrap();
        assert_eq!(ids, an.ordered_store_ids());
        for (x, y) in vals.iter().zip(&an.reordered) {
            assert!((x - y).abs() < 1e-12);
        }
        let identity = AdjacencyAnalysis {
            leaf_order: (0..5).collect(),
            reordered: a.clone(),
            ..an.clone()
        };
        let (_, vals) = parse_heatmap_csv(&identity.heatmap_csv()).unwrap();
        assert!(vals.iter().zip(&a).all(|(x, y)| (x - y).abs() < 1e-12));

        let dir = tempfile::tempdir().unwrap();
        let (c, j) = (dir.path().join("h.csv"), dir.path().join("c.json"));
        export_heatmap_data(&an, &c, &j).unwrap();
        assert_eq!(std::fs::read_to_string(&c).unwrap(), csv_text);
        let doc: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&j).unwrap()).unwrap();
        assert_eq!(doc["ranking"].as_array().unwrap().len(), 5);
    }

    #[test]
    fn forty_five_store_export_line_count() {
        let n = 45;
        let blocks: Vec<usize> = (0..n).map(|i| i % 4).collect();
        let an = AdjacencyAnalysis::new((1..=n as u32).collect(), block_matrix(&blocks, 2.0, 1.0)).unwrap();
        assert_eq!(an.heatmap_csv().lines().count(), 46);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn analysis_invariants(n in 2usize..9, raw in prop::collection::vec(0.01f64..1.0, 81)) {
            let mut a = vec![0.0; n * n];
            for i in 0..n {
                let total: f64 = raw[i * 9..i * 9 + n].iter().sum();
                for j in 0..n {
                    a[i * n + j] = raw[i * 9 + j] / total;
                }
            }
            let an = AdjacencyAnalysis::new((1..=n as u32).collect(), a.clone()).unwrap();
            let mut sorted = an.leaf_order.clone();
            sorted.sort();
            prop_assert_eq!(sorted, (0..n).collect::<Vec<_>>());
            let mut ranked = an.ranking.clone();
            ranked.sort();
            prop_assert_eq!(ranked, (1..=n as u32).collect::<Vec<_>>());
            prop_assert!((an.centrality.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            // Reordering is an isomorphism.
            let c2 = centrality(&an.reordered, n);
            for (r, &i) in an.leaf_order.iter().enumerate() {
                prop_assert!((c2[r] - an.centrality[i]).abs() < 1e-15);
                let row: f64 = an.reordered[r * n..(r + 1) * n].iter().sum();
                prop_assert!((row - 1.0).abs() < 1e-12);
            }
        }
    }
}
