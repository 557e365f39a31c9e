use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::embedding::EmbeddingMatrix;
use crate::knn::sq_l2;
use crate::{Error, Result};

/// An unordered pair of corpus items, `id_a < id_b`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClosePair {
    pub id_a: String,
    pub id_b: String,
    pub sq_distance: f64,
}

/// Up to `count` low-distance pairs: every row is paired with its nearest
/// neighbor (squared L2, ties by id), duplicates are merged, and the
/// closest pairs are kept in ascending `(distance, id_a, id_b)` order.
pub fn sample_close_pairs<S: AsRef<str>>(
    matrix: &EmbeddingMatrix,
    ids: &[S],
    count: usize,
) -> Result<Vec<ClosePair>> {
    if ids.len() != matrix.count() {
        return Err(Error::CountMismatch {
            expected: matrix.count(),
            found: ids.len(),
        });
    }
    if matrix.count() < 2 {
        return Err(Error::InvalidInput(format!(
            "need at least 2 vectors to form pairs, have {}",
            matrix.count()
        )));
    }
    if count == 0 {
        return Err(Error::InvalidInput("pair count must be at least 1".into()));
    }
    crate::corpus::check_unique(ids.iter().map(AsRef::as_ref))?;

    let n = matrix.count();
    let mut pairs: BTreeSet<(OrdF64, usize, usize)> = BTreeSet::new();
    let mut seen: BTreeSet<(usize, usize)> = BTreeSet::new();
    for i in 0..n {
        let mut best: Option<(f64, usize)> = None;
        for j in 0..n {
            if j == i {
                continue;
            }
            let d = sq_l2(matrix.row(i), matrix.row(j));
            let better = match best {
                None => true,
                Some((bd, bj)) => {
                    d < bd || (d == bd && ids[j].as_ref() < ids[bj].as_ref())
                }
            };
            if better {
                best = Some((d, j));
            }
        }
        let (d, j) = best.expect("n >= 2");
        let (a, b) = if ids[i].as_ref() < ids[j].as_ref() { (i, j) } else { (j, i) };
        if seen.insert((a, b)) {
            pairs.insert((OrdF64(d), a, b));
        }
    }

    // BTreeSet ordering is by row index for equal distances; re-sort by id.
    let mut out: Vec<ClosePair> = pairs
        .into_iter()
        .map(|(d, a, b)| ClosePair {
            id_a: ids[a].as_ref().to_string(),
            id_b: ids[b].as_ref().to_string(),
            sq_distance: d.0,
        })
        .collect();
    out.sort_by(|x, y| {
        x.sq_distance
            .total_cmp(&y.sq_distance)
            .then_with(|| x.id_a.cmp(&y.id_a))
            .then_with(|| x.id_b.cmp(&y.id_b))
    });
    out.truncate(count);
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct OrdF64(f64);

impl Eq for OrdF64 {}

impl PartialOrd for OrdF64 {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for OrdF64 {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.0.total_cmp(&other.0)
    }
}
