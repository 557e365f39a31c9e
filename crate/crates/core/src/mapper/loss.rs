use crate::{Error, Result};

/// Batch loss and the `B × B` matrix of squared distances
/// `d(i, j) = ‖prediction_i − target_j‖²` (row-major).
#[derive(Debug, Clone, PartialEq)]
pub struct MarginLoss {
    pub loss: f64,
    pub distances: Vec<f64>,
    pub batch: usize,
}

impl MarginLoss {
    pub fn distance(&self, i: usize, j: usize) -> f64 {
        self.distances[i * self.batch + j]
    }
}

pub fn pairwise_sq_distances<P: AsRef<[f64]>, T: AsRef<[f64]>>(predictions: &[P], targets: &[T]) -> Vec<f64> {
    let mut out = Vec::with_capacity(predictions.len() * targets.len());
    for p in predictions {
        for t in targets {
            out.push(
                p.as_ref()
                    .iter()
                    .zip(t.as_ref())
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum(),
            );
        }
    }
    out
}

fn check_shapes<P: AsRef<[f64]>, T: AsRef<[f64]>>(predictions: &[P], targets: &[T]) -> Result<()> {
    if predictions.len() != targets.len() {
        return Err(Error::CountMismatch {
            expected: predictions.len(),
            found: targets.len(),
        });
    }
    if predictions.len() < 2 {
        return Err(Error::BatchTooSmall(predictions.len()));
    }
    let dim = predictions[0].as_ref().len();
    for v in predictions.iter().map(AsRef::as_ref).chain(targets.iter().map(AsRef::as_ref)) {
        if v.len() != dim {
            return Err(Error::DimMismatch {
                expected: dim,
                found: v.len(),
            });
        }
    }
    Ok(())
}

/// Contrastive max-margin loss with in-batch negatives:
///
/// `loss = (1/B) Σ_i [ d(i,i) + (1/(B−1)) Σ_{j≠i} max(0, margin − d(i,j)) ]`
///
/// The positive term pulls each prediction onto its own target; the hinge
/// pushes it at least `margin` (in squared distance) away from every other
/// target in the batch.
pub fn margin_loss<P: AsRef<[f64]>, T: AsRef<[f64]>>(
    predictions: &[P],
    targets: &[T],
    margin: f64,
) -> Result<MarginLoss> {
    check_shapes(predictions, targets)?;
    let b = predictions.len();
    let distances = pairwise_sq_distances(predictions, targets);
    let loss = loss_from_distances(&distances, b, margin);
    Ok(MarginLoss {
        loss,
        distances,
        batch: b,
    })
}

pub(crate) fn loss_from_distances(distances: &[f64], b: usize, margin: f64) -> f64 {
    let neg_scale = 1.0 / (b - 1) as f64;
    let mut total = 0.0;
    for i in 0..b {
        let row = &distances[i * b..(i + 1) * b];
        let hinge: f64 = row
            .iter()
            .enumerate()
            .filter(|&(j, _)| j != i)
            .map(|(_, d)| (margin - d).max(0.0))
            .sum();
        total += row[i] + neg_scale * hinge;
    }
    total / b as f64
}

/// Loss and its gradient with respect to each prediction.
///
/// `∂L/∂p_i = (2/B) [ (p_i − c_i) − (1/(B−1)) Σ_{j≠i, margin > d(i,j)} (p_i − c_j) ]`;
/// at the hinge kink (`d == margin`) the subgradient 0 is used.
pub(crate) fn margin_loss_with_grad<T: AsRef<[f64]>>(
    predictions: &[Vec<f64>],
    targets: &[T],
    margin: f64,
) -> Result<(f64, Vec<Vec<f64>>)> {
    let ml = margin_loss(predictions, targets, margin)?;
    let b = predictions.len();
    let scale = 2.0 / b as f64;
    let neg_scale = scale / (b - 1) as f64;
    let grads = predictions
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let mut g: Vec<f64> = p
                .iter()
                .zip(targets[i].as_ref())
                .map(|(a, c)| scale * (a - c))
                .collect();
            for (j, t) in targets.iter().enumerate() {
                if j != i && margin - ml.distance(i, j) > 0.0 {
                    for ((gk, a), c) in g.iter_mut().zip(p).zip(t.as_ref()) {
                        *gk -= neg_scale * (a - c);
                    }
                }
            }
            g
        })
        .collect();
    Ok((ml.loss, grads))
}
