use std::collections::{BTreeMap, HashMap};
use std::io::Write;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::graph::NodeId;
use crate::models::Embeddings;
use crate::numeric::{dot, DenseMatrix};

/// Rows scaled to unit length, addressed by node id. Cosine similarity is
/// then a dot product. A zero row stays zero, so its similarity to
/// anything is 0.
#[derive(Debug, Clone)]
pub struct CosineSpace {
    unit: DenseMatrix,
    norms: Vec<f64>,
    ids: Vec<NodeId>,
    index: HashMap<NodeId, usize>,
}

impl CosineSpace {
    fn build(m: &DenseMatrix, ids: Vec<NodeId>) -> Self {
        let mut unit = m.clone();
        let mut norms = Vec::with_capacity(m.rows());
        let mut zero = 0;
        for r in 0..m.rows() {
            let n = dot(m.row(r), m.row(r)).sqrt();
            norms.push(n);
            if n > 0.0 {
                unit.row_mut(r).iter_mut().for_each(|v| *v /= n);
            } else {
                zero += 1;
            }
        }
        if zero > 0 {
            log::warn!("{zero} zero-norm vectors; their cosine similarity is taken as 0");
        }
        let index = ids.iter().enumerate().map(|(i, &n)| (n, i)).collect();
        Self {
            unit,
            norms,
            ids,
            index,
        }
    }

    /// Row `i` belongs to node `i`.
    pub fn from_matrix(m: &DenseMatrix) -> Self {
        Self::build(m, (0..m.rows()).collect())
    }

    /// Restricts the vectors to a subset of columns before normalizing.
    pub fn from_columns(m: &DenseMatrix, columns: &[usize]) -> Result<Self> {
        if columns.is_empty() {
            return Err(Error::Config("similarity column mask is empty".into()));
        }
        if let Some(&c) = columns.iter().find(|&&c| c >= m.cols()) {
            return Err(Error::Config(format!(
                "similarity column {c} out of range for {} features",
                m.cols()
            )));
        }
        let mut sub = DenseMatrix::zeros(m.rows(), columns.len());
        for r in 0..m.rows() {
            for (j, &c) in columns.iter().enumerate() {
                sub.set(r, j, m.get(r, c));
            }
        }
        Ok(Self::from_matrix(&sub))
    }

    pub fn from_embeddings(e: &Embeddings) -> Self {
        Self::build(e.matrix(), (0..e.len()).map(|r| e.node_at(r)).collect())
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn row_of(&self, node: NodeId) -> Option<usize> {
        self.index.get(&node).copied()
    }

    pub fn node_at(&self, row: usize) -> NodeId {
        self.ids[row]
    }

    pub fn norm(&self, row: usize) -> f64 {
        self.norms[row]
    }

    pub fn unit(&self, row: usize) -> &[f64] {
        self.unit.row(row)
    }

    pub fn sim_rows(&self, a: usize, b: usize) -> f64 {
        dot(self.unit.row(a), self.unit.row(b))
    }

    pub fn sim(&self, u: NodeId, v: NodeId) -> Option<f64> {
        Some(self.sim_rows(self.row_of(u)?, self.row_of(v)?))
    }

    /// The `k` most similar other nodes to the node at `row`, by descending
    /// similarity and then ascending node id.
    pub fn topk_row(&self, row: usize, k: usize) -> Vec<(NodeId, f64)> {
        let me = self.unit.row(row);
        let mut all: Vec<(NodeId, f64)> = (0..self.len())
            .filter(|&r| r != row)
            .map(|r| (self.ids[r], dot(me, self.unit.row(r))))
            .collect();
        if k == 0 {
            return Vec::new();
        }
        if all.len() > k {
            all.select_nth_unstable_by(k - 1, rank_order);
            all.truncate(k);
        }
        all.sort_unstable_by(rank_order);
        all
    }
}

/// Descending similarity, ties by ascending id.
pub(crate) fn rank_order(a: &(NodeId, f64), b: &(NodeId, f64)) -> std::cmp::Ordering {
    b.1.total_cmp(&a.1).then(a.0.cmp(&b.0))
}

/// Per-anchor top-k lists of `(node, similarity)`.
#[derive(Debug, Clone, PartialEq)]
pub struct RankedSimilarity {
    k: usize,
    lists: BTreeMap<NodeId, Vec<(NodeId, f64)>>,
}

impl RankedSimilarity {
    pub fn k(&self) -> usize {
        self.k
    }

    pub fn get(&self, anchor: NodeId) -> Option<&[(NodeId, f64)]> {
        self.lists.get(&anchor).map(Vec::as_slice)
    }

    pub fn anchors(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.lists.keys().copied()
    }

    pub fn len(&self) -> usize {
        self.lists.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lists.is_empty()
    }

    /// Writes one line per anchor: `u: v1:s1, v2:s2, ...`.
    pub fn write_dump<W: Write>(&self, mut w: W) -> Result<()> {
        for (u, list) in &self.lists {
            let body: Vec<String> = list.iter().map(|(v, s)| format!("{v}:{s}")).collect();
            writeln!(w, "{u}: {}", body.join(", ")).map_err(|e| Error::io("writing ranked lists", e))?;
        }
        Ok(())
    }

    /// Inverse of [`Self::write_dump`]. `k` becomes the longest list length.
    pub fn parse_dump(text: &str) -> Result<Self> {
        let mut lists = BTreeMap::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let err = |m: &str| Error::Data(format!("ranked dump line {}: {m}", i + 1));
            let (u, rest) = line.split_once(':').ok_or_else(|| err("missing ':' after anchor"))?;
            let u: NodeId = u.trim().parse().map_err(|_| err("bad anchor id"))?;
            let mut list = Vec::new();
            for item in rest.split(',').map(str::trim).filter(|s| !s.is_empty()) {
                let (v, s) = item.split_once(':').ok_or_else(|| err("entry lacks ':'"))?;
                let v = v.trim().parse().map_err(|_| err("bad node id"))?;
                let s = s.trim().parse().map_err(|_| err("bad similarity"))?;
                list.push((v, s));
            }
            if lists.insert(u, list).is_some() {
                return Err(err("anchor listed twice"));
            }
        }
        let k = lists.values().map(Vec::len).max().unwrap_or(0);
        Ok(Self { k, lists })
    }
}

/// Top-`k` cosine neighbors of each anchor among all other nodes of the
/// space.
pub fn cosine_topk(space: &CosineSpace, k: usize, anchors: &[NodeId]) -> Result<RankedSimilarity> {
    if k == 0 {
        return Err(Error::Config("top-k size must be at least 1".into()));
    }
    let rows: Vec<(NodeId, usize)> = anchors
        .iter()
        .map(|&a| {
            space
                .row_of(a)
                .map(|r| (a, r))
                .ok_or_else(|| Error::Contract(format!("anchor {a} has no vector")))
        })
        .collect::<Result<_>>()?;
    let lists: Vec<(NodeId, Vec<(NodeId, f64)>)> = rows.par_iter().map(|&(a, r)| (a, space.topk_row(r, k))).collect();
    Ok(RankedSimilarity {
        k,
        lists: lists.into_iter().collect(),
    })
}

/// Every node of the space as an anchor.
pub fn cosine_topk_all(space: &CosineSpace, k: usize) -> Result<RankedSimilarity> {
    let anchors: Vec<NodeId> = (0..space.len()).map(|r| space.node_at(r)).collect();
    cosine_topk(space, k, &anchors)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn space(rows: &[Vec<f64>]) -> CosineSpace {
        CosineSpace::from_matrix(&DenseMatrix::from_rows(rows).unwrap())
    }

    #[test]
    fn basic_cosines() {
        let s = space(&[
            vec![1.0, 2.0],
            vec![2.0, 4.0],
            vec![-2.0, 1.0],
            vec![-1.0, -2.0],
            vec![0.0, 0.0],
        ]);
        assert!((s.sim(0, 1).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(s.sim(0, 2).unwrap(), 0.0);
        assert!((s.sim(0, 3).unwrap() + 1.0).abs() < 1e-15);
        assert_eq!(s.sim(0, 4).unwrap(), 0.0);
    }

    #[test]
    fn topk_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let rows: Vec<Vec<f64>> = (0..20)
            .map(|_| (0..5).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect();
        let s = space(&rows);
        let ranked = cosine_topk_all(&s, 3).unwrap();
        for u in 0..20 {
            let cos = |a: &[f64], b: &[f64]| {
                let d: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
                let n = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
                d / (n(a) * n(b))
            };
            let mut all: Vec<(usize, f64)> = (0..20)
                .filter(|&v| v != u)
                .map(|v| (v, cos(&rows[u], &rows[v])))
                .collect();
            all.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap());
            let got = ranked.get(u).unwrap();
            assert_eq!(got.len(), 3);
            for (g, w) in got.iter().zip(&all) {
                assert_eq!(g.0, w.0);
                assert!((g.1 - w.1).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn ties_break_by_id_and_self_is_excluded() {
        let s = space(&[vec![1.0, 0.0], vec![1.0, 0.0], vec![1.0, 0.0], vec![1.0, 0.0]]);
        let r = cosine_topk(&s, 2, &[2]).unwrap();
        let ids: Vec<usize> = r.get(2).unwrap().iter().map(|p| p.0).collect();
        assert_eq!(ids, vec![0, 1]);
    }

    #[test]
    fn short_lists_when_few_nodes() {
        let s = space(&[vec![1.0], vec![2.0]]);
        assert_eq!(cosine_topk_all(&s, 10).unwrap().get(0).unwrap().len(), 1);
        assert!(cosine_topk(&s, 0, &[0]).is_err());
        assert!(cosine_topk(&s, 1, &[5]).is_err());
    }

    #[test]
    fn dump_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let rows: Vec<Vec<f64>> = (0..12)
            .map(|_| (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect();
        let r = cosine_topk_all(&space(&rows), 4).unwrap();
        let mut buf = Vec::new();
        r.write_dump(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.lines().next().unwrap().starts_with("0: "));
        assert_eq!(RankedSimilarity::parse_dump(&text).unwrap(), r);
        assert!(RankedSimilarity::parse_dump("3 1:0.5").is_err());
    }

    #[test]
    fn column_mask_changes_similarity() {
        let m = DenseMatrix::from_rows(&[vec![1.0, 0.0, 5.0], vec![1.0, 3.0, 5.0]]).unwrap();
        let s = CosineSpace::from_columns(&m, &[0, 2]).unwrap();
        assert!((s.sim(0, 1).unwrap() - 1.0).abs() < 1e-15);
        assert!(CosineSpace::from_columns(&m, &[3]).is_err());
    }
}
