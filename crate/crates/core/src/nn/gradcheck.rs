use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

use super::layers::Mode;
use super::network::{softmax_cross_entropy, Network};
use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::rng;

/// Denominator floor for relative errors, so that near-zero gradients are
/// compared on an absolute scale.
pub const REL_ERROR_FLOOR: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckOptions {
    /// Parameters sampled per layer (all of them when the layer is smaller).
    pub per_layer: usize,
    pub h: f64,
    pub seed: u64,
    /// Also check the gradient with respect to the input.
    pub check_input: bool,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions { per_layer: 200, h: 1e-5, seed: 0, check_input: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerCheck {
    /// Layer index, or `None` for the network input.
    pub layer: Option<usize>,
    pub kind: String,
    pub checked: usize,
    pub max_rel_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub layers: Vec<LayerCheck>,
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERROR_FLOOR)
}

/// Compares backprop gradients of the mean softmax cross-entropy against
/// central finite differences. Dropout masks are drawn once and frozen.
pub fn gradient_check(
    net: &mut Network,
    input: &Tensor,
    labels: &[usize],
    opts: &GradCheckOptions,
) -> Result<GradCheckReport> {
    if !(opts.h > 0.0) {
        return Err(Error::invalid("finite-difference step must be positive"));
    }
    let mode = Mode::Train { seed: opts.seed };
    net.freeze_dropout(false);
    net.set_input_grad(opts.check_input);
    net.zero_grads();
    let logits = net.forward(input, mode)?;
    net.freeze_dropout(true);
    let (_, grad) = softmax_cross_entropy(&logits, labels)?;
    let input_grad = net.backward(grad);
    let analytic: Vec<Vec<f64>> = net.params_and_grads_mut().into_iter().map(|(_, g)| g.to_vec()).collect();

    let loss_at = |net: &mut Network, x: &Tensor| -> Result<f64> {
        let logits = net.forward(x, mode)?;
        Ok(softmax_cross_entropy(&logits, labels)?.0)
    };

    let kinds = net.layer_kinds();
    let mut r = rng::seeded(rng::derive_seed(opts.seed, 0x6772_6164));
    let mut layers = Vec::new();
    for (pl, &li) in net.param_layer_indices().iter().enumerate() {
        let (kw, kb) = (2 * pl, 2 * pl + 1);
        let (nw, nb) = (analytic[kw].len(), analytic[kb].len());
        let n = opts.per_layer.min(nw + nb);
        let mut worst: f64 = 0.0;
        for flat in sample(&mut r, nw + nb, n).into_iter() {
            let (k, idx) = if flat < nw { (kw, flat) } else { (kb, flat - nw) };
            let orig = net.params_and_grads_mut()[k].0[idx];
            net.params_and_grads_mut()[k].0[idx] = orig + opts.h;
            let lp = loss_at(net, input)?;
            net.params_and_grads_mut()[k].0[idx] = orig - opts.h;
            let lm = loss_at(net, input)?;
            net.params_and_grads_mut()[k].0[idx] = orig;
            worst = worst.max(relative_error(analytic[k][idx], (lp - lm) / (2.0 * opts.h)));
        }
        layers.push(LayerCheck { layer: Some(li), kind: kinds[li].clone(), checked: n, max_rel_error: worst });
    }

    if let Some(gx) = input_grad {
        let n = opts.per_layer.min(input.len());
        let mut worst: f64 = 0.0;
        let mut x = input.clone();
        for idx in sample(&mut r, input.len(), n).into_iter() {
            let orig = x.data()[idx];
            x.data_mut()[idx] = orig + opts.h;
            let lp = loss_at(net, &x)?;
            x.data_mut()[idx] = orig - opts.h;
            let lm = loss_at(net, &x)?;
            x.data_mut()[idx] = orig;
            worst = worst.max(relative_error(gx.data()[idx], (lp - lm) / (2.0 * opts.h)));
        }
        layers.push(LayerCheck { layer: None, kind: "input".into(), checked: n, max_rel_error: worst });
    }

    net.freeze_dropout(false);
    net.set_input_grad(false);
    net.clear_cache();
    let max_rel_error = layers.iter().map(|l| l.max_rel_error).fold(0.0, f64::max);
    Ok(GradCheckReport { max_rel_error, layers })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::LayerSpec::{self, *};
    use rand::Rng;

    fn random_input(shape: &[usize], seed: u64) -> Tensor {
        let mut r = rng::seeded(seed);
        let n = shape.iter().product();
        Tensor::new(shape.to_vec(), (0..n).map(|_| r.random_range(-1.0..1.0)).collect()).unwrap()
    }

    fn check(input_shape: &[usize], specs: &[LayerSpec], batch: usize, n_classes: usize) -> GradCheckReport {
        let mut net = Network::build(input_shape, specs, 17).unwrap();
        // zero biases put ReLU inputs exactly on the kink wherever a window is all zeros
        let mut r = rng::seeded(23);
        for (i, (p, _)) in net.params_and_grads_mut().into_iter().enumerate() {
            if i % 2 == 1 {
                p.iter_mut().for_each(|b| *b = r.random_range(-0.1..0.1));
            }
        }
        let mut shape = vec![batch];
        shape.extend_from_slice(input_shape);
        let x = random_input(&shape, 5);
        let labels: Vec<usize> = (0..batch).map(|i| i % n_classes).collect();
        gradient_check(&mut net, &x, &labels, &GradCheckOptions::default()).unwrap()
    }

    #[test]
    fn tiny_conv4d_net() {
        let r = check(&[4, 2, 2, 2, 1], &[Conv { kernel: vec![3, 2, 2, 1], filters: 2 }, Relu, Flatten, Dense { units: 3 }], 2, 3);
        assert!(r.max_rel_error <= 1e-6, "{r:?}");
        assert_eq!(r.layers.len(), 3);
        assert!(r.layers.iter().all(|l| l.checked > 0));
    }

    #[test]
    fn dense_only_net() {
        let r = check(&[6], &[Dense { units: 5 }, Dense { units: 3 }], 3, 3);
        assert!(r.max_rel_error <= 1e-8, "{r:?}");
    }

    #[test]
    fn frozen_dropout_mask() {
        let r = check(&[6], &[Dense { units: 8 }, Relu, Dropout { rate: 0.5 }, Dense { units: 3 }], 2, 3);
        assert!(r.max_rel_error <= 1e-6, "{r:?}");
    }

    #[test]
    fn conv2d_with_maxpool() {
        let specs = [Conv { kernel: vec![3, 3], filters: 3 }, Relu, MaxPool2d, Flatten, Dense { units: 3 }];
        let r = check(&[5, 5, 2], &specs, 2, 3);
        assert!(r.max_rel_error <= 1e-6, "{r:?}");
    }

    #[test]
    fn conv3d_stack() {
        let specs = [
            Conv { kernel: vec![3, 3, 1], filters: 2 },
            Relu,
            Conv { kernel: vec![2, 2, 2], filters: 3 },
            Relu,
            Flatten,
            Dense { units: 2 },
        ];
        let r = check(&[4, 3, 2, 1], &specs, 2, 2);
        assert!(r.max_rel_error <= 1e-6, "{r:?}");
    }

    #[test]
    fn conv4d_reshape_conv2d_pool_pipeline() {
        let specs = [
            Conv { kernel: vec![3, 2, 2, 1], filters: 2 },
            Relu,
            Reshape { shape: vec![8, 3, 2] },
            Conv { kernel: vec![3, 3], filters: 2 },
            Relu,
            MaxPool2d,
            Flatten,
            Dense { units: 4 },
            Relu,
            Dropout { rate: 0.3 },
            Dense { units: 3 },
        ];
        let r = check(&[4, 2, 3, 1, 1], &specs, 3, 3);
        assert!(r.max_rel_error <= 1e-6, "{r:?}");
    }

    #[test]
    fn even_kernels() {
        for (shape, k) in [(vec![4, 3, 1], vec![2, 2]), (vec![5, 1], vec![2]), (vec![4, 3, 2, 1], vec![2, 2, 2])] {
            let r = check(&shape, &[Conv { kernel: k.clone(), filters: 2 }, Flatten, Dense { units: 2 }], 2, 2);
            assert!(r.max_rel_error <= 1e-6, "{shape:?} {k:?} {r:?}");
        }
    }

    #[test]
    fn detects_a_wrong_gradient() {
        // a deliberately perturbed analytic gradient must be caught
        assert!(relative_error(1.0, 1.001) > 1e-6);
        assert!(relative_error(0.0, 1e-12) < 1e-6);
    }
}
