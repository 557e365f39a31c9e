//! Analytic gradients against central finite differences.

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use xmap_core::mapper::{gradients, init_network, MapperConfig, MapperNetwork};

/// Loss recomputed from scratch: explicit forward pass and the loss
/// formula written out, sharing nothing with the library's code path.
///
/// Also returns the piecewise-linear region the point lies in: the sign of
/// every hidden pre-activation and whether every hinge is active.
fn oracle_loss(net: &MapperNetwork, xs: &[Vec<f32>], cs: &[Vec<f32>], margin: f64) -> (f64, Vec<bool>) {
    let n_layers = net.layers().len();
    let mut region = Vec::new();
    let preds: Vec<Vec<f64>> = xs
        .iter()
        .map(|x| {
            let mut a: Vec<f64> = x.iter().map(|v| *v as f64).collect();
            for (li, l) in net.layers().iter().enumerate() {
                let mut z = vec![0.0; l.fan_out];
                for o in 0..l.fan_out {
                    let mut s = l.bias[o] as f64;
                    for i in 0..l.fan_in {
                        s += l.weights[o * l.fan_in + i] as f64 * a[i];
                    }
                    if li + 1 < n_layers {
                        region.push(s > 0.0);
                        z[o] = s.max(0.0);
                    } else {
                        z[o] = s;
                    }
                }
                a = z;
            }
            a
        })
        .collect();
    let b = xs.len();
    let sq = |p: &[f64], c: &[f32]| -> f64 { p.iter().zip(c).map(|(a, c)| (a - *c as f64).powi(2)).sum() };
    let mut total = 0.0;
    for i in 0..b {
        let mut hinge = 0.0;
        for j in 0..b {
            if j != i {
                let gap = margin - sq(&preds[i], &cs[j]);
                region.push(gap > 0.0);
                hinge += gap.max(0.0);
            }
        }
        total += sq(&preds[i], &cs[i]) + hinge / (b - 1) as f64;
    }
    (total / b as f64, region)
}

fn param_mut(net: &mut MapperNetwork, mut idx: usize) -> &mut f32 {
    for l in net.layers_mut() {
        let n = l.weights.len() + l.bias.len();
        if idx < n {
            return if idx < l.weights.len() {
                &mut l.weights[idx]
            } else {
                &mut l.bias[idx - l.weights.len()]
            };
        }
        idx -= n;
    }
    panic!("parameter index out of range");
}

/// Central difference for parameter `k`, starting at step `h`.
///
/// Parameters are f32, so `w ± h` is rounded; the step actually taken,
/// `(w+) − (w−)`, is the denominator. The loss is piecewise quadratic, and a
/// difference taken across a ReLU or hinge kink does not estimate the
/// derivative at `w`; when `w ± h` leave the region of `w`, the step is
/// shrunk until they don't.
fn central_difference(work: &mut MapperNetwork, k: usize, xs: &[Vec<f32>], cs: &[Vec<f32>], margin: f64, mut h: f32) -> f64 {
    let w = *param_mut(work, k);
    let (_, here) = oracle_loss(work, xs, cs, margin);
    loop {
        let (plus, minus) = (w + h, w - h);
        *param_mut(work, k) = plus;
        let (lp, rp) = oracle_loss(work, xs, cs, margin);
        *param_mut(work, k) = minus;
        let (lm, rm) = oracle_loss(work, xs, cs, margin);
        *param_mut(work, k) = w;
        if (rp == here && rm == here) || h < 1e-6 {
            return (lp - lm) / (plus as f64 - minus as f64);
        }
        h /= 4.0;
    }
}

/// Worst relative error `|a − n| / max(|a|, |n|, 1e-8)` over all parameters.
fn max_relative_error(net: &MapperNetwork, xs: &[Vec<f32>], cs: &[Vec<f32>], margin: f64, h: f32) -> f64 {
    let analytic = gradients(net, xs, cs, margin).unwrap().flatten();
    let mut work = net.clone();
    let mut worst: f64 = 0.0;
    for (k, a) in analytic.iter().enumerate() {
        let numeric = central_difference(&mut work, k, xs, cs, margin, h);
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
        worst = worst.max(rel);
    }
    worst
}

fn random_case(rng: &mut ChaCha8Rng, cfg: &MapperConfig, batch: usize) -> (MapperNetwork, Vec<Vec<f32>>, Vec<Vec<f32>>) {
    let mut net = init_network(cfg, rng.random()).unwrap();
    for l in net.layers_mut() {
        for b in &mut l.bias {
            *b = rng.random_range(-0.3..0.3);
        }
    }
    let xs = (0..batch)
        .map(|_| (0..cfg.input_dim).map(|_| rng.random_range(-1.0..1.0)).collect())
        .collect();
    let cs = (0..batch)
        .map(|_| (0..cfg.output_dim).map(|_| rng.random_range(-0.6..0.6)).collect())
        .collect();
    (net, xs, cs)
}

#[test]
fn eight_twelve_ten_six_batch_of_four() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let cfg = MapperConfig::new(8, vec![12, 10], 6);
    let (net, xs, cs) = random_case(&mut rng, &cfg, 4);
    let err = max_relative_error(&net, &xs, &cs, 1.0, 1e-3);
    assert!(err < 1e-4, "max relative error {err}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn gradients_match_finite_differences(
        seed: u64,
        input in 4usize..=16,
        h1 in 4usize..=16,
        h2 in 4usize..=16,
        output in 4usize..=16,
        batch in 2usize..=8,
        margin in prop_oneof![Just(0.0), Just(0.5), Just(1.0)],
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cfg = MapperConfig::new(input, vec![h1, h2], output);
        let (net, xs, cs) = random_case(&mut rng, &cfg, batch);
        let err = max_relative_error(&net, &xs, &cs, margin, 1e-3);
        prop_assert!(err < 1e-4, "max relative error {}", err);
    }
}
