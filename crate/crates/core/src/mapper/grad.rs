use super::loss::margin_loss_with_grad;
use super::MapperNetwork;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct LayerGradient {
    /// Same `fan_out × fan_in` layout as [`super::Layer::weights`].
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

/// Gradient of the batch loss for every parameter, plus the loss itself.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub loss: f64,
    pub layers: Vec<LayerGradient>,
}

impl Gradients {
    fn zeros_like(net: &MapperNetwork) -> Self {
        Self {
            loss: 0.0,
            layers: net
                .layers()
                .iter()
                .map(|l| LayerGradient {
                    weights: vec![0.0; l.weights.len()],
                    bias: vec![0.0; l.bias.len()],
                })
                .collect(),
        }
    }

    /// All components in parameter order (per layer: weights, then bias).
    pub fn flatten(&self) -> Vec<f64> {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(&l.bias).copied())
            .collect()
    }
}

/// Reverse-mode gradient of [`super::margin_loss`] over a batch of
/// `(input, target)` pairs. ReLU'(0) and the hinge kink both use 0.
pub fn gradients<X: AsRef<[f32]>, C: AsRef<[f32]>>(
    net: &MapperNetwork,
    inputs: &[X],
    targets: &[C],
    margin: f64,
) -> Result<Gradients> {
    if inputs.len() != targets.len() {
        return Err(Error::CountMismatch {
            expected: inputs.len(),
            found: targets.len(),
        });
    }
    for x in inputs {
        if x.as_ref().len() != net.input_dim() {
            return Err(Error::DimMismatch {
                expected: net.input_dim(),
                found: x.as_ref().len(),
            });
        }
    }
    for c in targets {
        if c.as_ref().len() != net.output_dim() {
            return Err(Error::DimMismatch {
                expected: net.output_dim(),
                found: c.as_ref().len(),
            });
        }
    }

    let traces: Vec<_> = inputs.iter().map(|x| net.trace(x.as_ref())).collect();
    let predictions: Vec<Vec<f64>> = traces.iter().map(|t| t.output().to_vec()).collect();
    let targets64: Vec<Vec<f64>> = targets
        .iter()
        .map(|c| c.as_ref().iter().map(|v| *v as f64).collect())
        .collect();
    let (loss, out_grads) = margin_loss_with_grad(&predictions, &targets64, margin)?;

    let mut grads = Gradients::zeros_like(net);
    grads.loss = loss;
    let layers = net.layers();
    for (trace, g_out) in traces.iter().zip(out_grads) {
        let mut delta = g_out;
        for l in (0..layers.len()).rev() {
            let layer = &layers[l];
            let g = &mut grads.layers[l];
            let below: Vec<f64> = if l == 0 {
                trace.input.clone()
            } else {
                trace.pre[l - 1].iter().map(|z| z.max(0.0)).collect()
            };
            for (o, d) in delta.iter().enumerate() {
                if *d == 0.0 {
                    continue;
                }
                g.bias[o] += d;
                let row = &mut g.weights[o * layer.fan_in..(o + 1) * layer.fan_in];
                for (gw, a) in row.iter_mut().zip(&below) {
                    *gw += d * a;
                }
            }
            if l > 0 {
                let mut next = vec![0.0; layer.fan_in];
                for (o, d) in delta.iter().enumerate() {
                    if *d == 0.0 {
                        continue;
                    }
                    for (n, w) in next.iter_mut().zip(layer.weight_row(o)) {
                        *n += d * *w as f64;
                    }
                }
                for (n, z) in next.iter_mut().zip(&trace.pre[l - 1]) {
                    if *z <= 0.0 {
                        *n = 0.0;
                    }
                }
                delta = next;
            }
        }
    }
    Ok(grads)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mapper::{init_network, Layer, MapperConfig};

    #[test]
    fn zero_when_loss_locally_constant() {
        // Integer weights and inputs keep every value exact, so targets equal
        // predictions bit for bit; targets sit ≥ 4 apart, beyond the margin.
        let net = MapperNetwork::from_layers(vec![
            Layer { fan_in: 2, fan_out: 3, weights: vec![1.0, 0.0, 0.0, 1.0, 1.0, -1.0], bias: vec![0.0; 3] },
            Layer { fan_in: 3, fan_out: 2, weights: vec![2.0, 0.0, 1.0, 0.0, 1.0, -1.0], bias: vec![1.0, 0.0] },
        ])
        .unwrap();
        let xs = vec![vec![1.0f32, 2.0], vec![4.0, 1.0], vec![-3.0, 5.0]];
        let targets: Vec<Vec<f32>> = xs.iter().map(|x| net.forward(x).unwrap()).collect();
        let g = gradients(&net, &xs, &targets, 1.0).unwrap();
        assert_eq!(g.loss, 0.0);
        assert!(g.flatten().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn duplicated_batch_keeps_positive_gradient() {
        // With margin 0 only the positive term remains; duplicating every
        // pair doubles the sum and the batch size, so the gradient is equal.
        let net = init_network(&MapperConfig::new(4, vec![5], 3), 9).unwrap();
        let xs = vec![vec![0.1f32, 0.2, -0.3, 0.4], vec![-0.5, 0.6, 0.7, -0.8]];
        let cs = vec![vec![1.0f32, 0.0, -1.0], vec![0.5, 0.5, 0.5]];
        let single = gradients(&net, &xs, &cs, 0.0).unwrap();
        let xs2: Vec<_> = xs.iter().chain(&xs).cloned().collect();
        let cs2: Vec<_> = cs.iter().chain(&cs).cloned().collect();
        let double = gradients(&net, &xs2, &cs2, 0.0).unwrap();
        for (a, b) in single.flatten().iter().zip(double.flatten()) {
            assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0));
        }
        assert!((single.loss - double.loss).abs() < 1e-12);
    }

    #[test]
    fn count_mismatch() {
        let net = init_network(&MapperConfig::new(2, vec![2], 2), 0).unwrap();
        let xs = vec![vec![0.0f32; 2]; 3];
        let cs = vec![vec![0.0f32; 2]; 2];
        assert!(gradients(&net, &xs, &cs, 1.0).is_err());
    }
}
