//! R1 and path-length regularizers. Both differentiate through a backward
//! pass, so their gradients w.r.t. the network weights use double
//! backpropagation.

use crate::autograd::backward;
use crate::ops;
use crate::rng::Rng;
use crate::tensor::Tensor;

/// Resolution-derived path-length weight: ln2 / (r^2 (ln r - ln 2)).
pub fn gamma_pl(resolution: usize) -> f64 {
    assert!(resolution > 2, "gamma_pl undefined for r <= 2");
    let r = resolution as f64;
    std::f64::consts::LN_2 / (r * r * (r.ln() - std::f64::consts::LN_2))
}

/// Running state of the path-length regularizer.
#[derive(Clone, Copy, Debug)]
pub struct PathLengthState {
    /// Exponential moving average of the Jacobian-probe lengths; starts 0
    /// and calibrates itself.
    pub ema: f32,
    pub decay: f32,
    /// Penalty weight (gamma_pl, possibly overridden).
    pub weight: f32,
}

impl PathLengthState {
    pub fn new(resolution: usize, decay: f32, weight_override: Option<f32>) -> Self {
        PathLengthState {
            ema: 0.0,
            decay,
            weight: weight_override.unwrap_or(gamma_pl(resolution) as f32),
        }
    }
}

/// Path-length penalty for a synthesis function driven by per-layer styles.
///
/// `styles` is [n, layers, w_dim] and must be part of the graph (mapped
/// from fresh z, or a tracked leaf). `synth(styles)` produces the batch of
/// outputs. A random probe y with i.i.d. N(0, 1/M) entries (M = output
/// dims per sample) is projected onto the output; the gradient of that
/// projection w.r.t. the styles gives per-sample lengths l, averaged over
/// layers. Returns the weighted penalty (differentiable w.r.t. everything
/// upstream) and the batch-mean length; the EMA is updated with the mean
/// after the penalty is formed.
pub fn path_length_penalty(
    synth: impl FnOnce(&Tensor) -> Tensor,
    styles: &Tensor,
    state: &mut PathLengthState,
    rng: &mut Rng,
) -> (Tensor, f32) {
    assert_eq!(styles.shape().len(), 3, "styles must be [n, layers, w_dim]");
    assert!(styles.is_tracked(), "styles must be part of the graph");
    let n = styles.shape()[0];
    let layers = styles.shape()[1];

    let out = synth(styles);
    assert_eq!(out.shape()[0], n, "synthesis batch mismatch");
    let m: usize = out.numel() / n;
    let y = rng
        .normal_tensor(out.shape())
        .scale(1.0 / (m as f32).sqrt());
    let projected = ops::sum_all(&ops::mul(&out, &y));

    // gradients w.r.t. the styles, kept differentiable
    let grads = backward(&projected, &[styles], true).require(styles);
    let sq = ops::sum_axes(&ops::square(&grads), &[2], false); // [n, layers]
    let mean_over_layers = ops::scale(&ops::sum_axes(&sq, &[1], false), 1.0 / layers as f32); // [n]
    let lengths = ops::sqrt(&mean_over_layers);

    let deviation = ops::add_const(&lengths, -state.ema);
    let penalty = ops::scale(&ops::mean_all(&ops::square(&deviation)), state.weight);

    let mean_len = lengths.data().iter().sum::<f32>() / n as f32;
    state.ema = state.decay * state.ema + (1.0 - state.decay) * mean_len;
    (penalty, mean_len)
}

/// R1 gradient penalty: (gamma/2) * E[ ||d D(x)/dx||^2 ] over real images.
/// Differentiable w.r.t. the discriminator weights.
pub fn r1_penalty(
    discriminator: impl FnOnce(&Tensor) -> Tensor,
    real_images: &Tensor,
    gamma: f32,
) -> Tensor {
    let x = real_images.detach().tracked();
    let scores = discriminator(&x);
    let total = ops::sum_all(&scores);
    let g = backward(&total, &[&x], true).require(&x);
    let per_sample = ops::sum_axes(&ops::square(&g), &[1, 2, 3], false); // [n]
    ops::scale(&ops::mean_all(&per_sample), 0.5 * gamma)
}
