//! Network building blocks with equalized learning rate.
//!
//! Weights are stored as N(0,1) draws and scaled at runtime by
//! sqrt(2 / fan_in) (times an optional learning-rate multiplier), so every
//! parameter sees the same effective step size under Adam.

use crate::modconv::{modulated_conv2d, DEMOD_EPSILON};
use crate::ops;
use crate::params::{ParamId, ParamStore};
use crate::rng::Rng;
use crate::tensor::Tensor;

use super::LRELU_ALPHA;

fn he_scale(fan_in: usize) -> f32 {
    (2.0f64 / fan_in as f64).sqrt() as f32
}

/// Fully connected layer with equalized learning rate.
pub struct EqLinear {
    pub weight: ParamId,
    pub bias: ParamId,
    w_scale: f32,
    b_scale: f32,
    pub in_features: usize,
    pub out_features: usize,
}

impl EqLinear {
    pub fn new(
        store: &mut ParamStore,
        rng: &mut Rng,
        name: &str,
        in_features: usize,
        out_features: usize,
        lr_mult: f32,
        bias_init: f32,
    ) -> Self {
        let weight = store.register(
            format!("{name}.weight"),
            &[out_features, in_features],
            rng.normal_vec(out_features * in_features),
        );
        let bias = store.register(
            format!("{name}.bias"),
            &[out_features],
            vec![bias_init; out_features],
        );
        EqLinear {
            weight,
            bias,
            w_scale: he_scale(in_features) * lr_mult,
            b_scale: lr_mult,
            in_features,
            out_features,
        }
    }

    pub fn forward(&self, store: &ParamStore, x: &Tensor) -> Tensor {
        let w = ops::scale(&store.tensor(self.weight), self.w_scale);
        let y = ops::matmul(x, &ops::permute(&w, &[1, 0]));
        ops::add_bias(&y, &ops::scale(&store.tensor(self.bias), self.b_scale))
    }
}

/// Plain (non-modulated) convolution with equalized learning rate.
pub struct EqConv {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    w_scale: f32,
    pub kernel: usize,
}

impl EqConv {
    pub fn new(
        store: &mut ParamStore,
        rng: &mut Rng,
        name: &str,
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        with_bias: bool,
    ) -> Self {
        let weight = store.register(
            format!("{name}.weight"),
            &[out_ch, in_ch, kernel, kernel],
            rng.normal_vec(out_ch * in_ch * kernel * kernel),
        );
        let bias = with_bias.then(|| store.register(format!("{name}.bias"), &[out_ch], vec![0.0; out_ch]));
        EqConv {
            weight,
            bias,
            w_scale: he_scale(in_ch * kernel * kernel),
            kernel,
        }
    }

    pub fn forward(&self, store: &ParamStore, x: &Tensor, activate: bool) -> Tensor {
        let w = ops::scale(&store.tensor(self.weight), self.w_scale);
        let mut y = ops::conv2d(x, &w, 1);
        if let Some(b) = self.bias {
            y = ops::add_bias(&y, &store.tensor(b));
        }
        if activate {
            y = ops::leaky_relu_scaled(&y, LRELU_ALPHA);
        }
        y
    }
}

/// Style-modulated convolution: affine style from w, weight modulation
/// (optionally demodulation), noise injection with a single learned scale,
/// bias, and scaled leaky ReLU.
pub struct ModConv {
    pub weight: ParamId,
    pub bias: ParamId,
    pub affine: EqLinear,
    pub noise_strength: Option<ParamId>,
    w_scale: f32,
    pub demodulate: bool,
    pub activate: bool,
    pub out_ch: usize,
}

impl ModConv {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        rng: &mut Rng,
        name: &str,
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        w_dim: usize,
        demodulate: bool,
        activate: bool,
        with_noise: bool,
    ) -> Self {
        let weight = store.register(
            format!("{name}.weight"),
            &[out_ch, in_ch, kernel, kernel],
            rng.normal_vec(out_ch * in_ch * kernel * kernel),
        );
        let bias = store.register(format!("{name}.bias"), &[out_ch], vec![0.0; out_ch]);
        // style affine starts at identity modulation (bias 1)
        let affine = EqLinear::new(store, rng, &format!("{name}.affine"), w_dim, in_ch, 1.0, 1.0);
        let noise_strength =
            with_noise.then(|| store.register(format!("{name}.noise_strength"), &[1], vec![0.0]));
        ModConv {
            weight,
            bias,
            affine,
            noise_strength,
            w_scale: he_scale(in_ch * kernel * kernel),
            demodulate,
            activate,
            out_ch,
        }
    }

    /// `w_latent` is [n, w_dim]; `noise` a single-channel map broadcast over
    /// feature channels.
    pub fn forward(
        &self,
        store: &ParamStore,
        x: &Tensor,
        w_latent: &Tensor,
        noise: Option<&Tensor>,
    ) -> Tensor {
        let styles = self.affine.forward(store, w_latent);
        let w = ops::scale(&store.tensor(self.weight), self.w_scale);
        let mut y = modulated_conv2d(x, &w, &styles, self.demodulate, DEMOD_EPSILON);
        if let Some(strength) = self.noise_strength {
            let n = noise.expect("layer expects a noise map");
            assert_eq!(n.shape()[2], y.shape()[2], "noise map resolution mismatch");
            assert_eq!(n.shape()[3], y.shape()[3], "noise map resolution mismatch");
            let s = ops::broadcast_to(
                &ops::reshape(&store.tensor(strength), &[1, 1, 1, 1]),
                y.shape(),
            );
            let nb = ops::broadcast_to(n, y.shape());
            y = ops::add(&y, &ops::mul(&nb, &s));
        }
        y = ops::add_bias(&y, &store.tensor(self.bias));
        if self.activate {
            y = ops::leaky_relu_scaled(&y, LRELU_ALPHA);
        }
        y
    }
}
