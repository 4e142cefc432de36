//! Mapping network, synthesis network and discriminator in feedforward,
//! skip and residual variants, at configurable toy resolutions.

mod discriminator;
mod generator;
mod layers;

pub use discriminator::Discriminator;
pub use generator::{Generator, NoiseMaps};
pub use layers::{EqConv, EqLinear, ModConv};

use serde::{Deserialize, Serialize};

use crate::ops;
use crate::tensor::Tensor;

/// Signal-variance factor for summing two i.i.d. branches.
pub const RESIDUAL_SCALE: f32 = std::f32::consts::FRAC_1_SQRT_2;

/// Leaky ReLU slope used throughout the networks.
pub const LRELU_ALPHA: f32 = 0.2;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Feedforward,
    Skip,
    Residual,
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Variant::Feedforward => "feedforward",
            Variant::Skip => "skip",
            Variant::Residual => "residual",
        };
        f.write_str(s)
    }
}

impl std::str::FromStr for Variant {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "feedforward" => Ok(Variant::Feedforward),
            "skip" => Ok(Variant::Skip),
            "residual" => Ok(Variant::Residual),
            other => Err(format!("unknown variant '{other}'")),
        }
    }
}

/// Architecture descriptor for one generator/discriminator pair.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetworkConfig {
    /// Output resolution; power of two, at least 8.
    pub resolution: usize,
    pub z_dim: usize,
    pub w_dim: usize,
    pub mapping_depth: usize,
    /// Channel schedule: min(channel_base * 2^(levels - k), channel_cap)
    /// at resolution 4 * 2^k.
    pub channel_base: usize,
    pub channel_cap: usize,
    /// Channel multiplier applied at resolutions >= hi_res_start.
    pub hi_res_mult: usize,
    pub hi_res_start: usize,
    pub g_variant: Variant,
    pub d_variant: Variant,
    pub mbstd_group: usize,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        NetworkConfig {
            resolution: 32,
            z_dim: 64,
            w_dim: 64,
            mapping_depth: 4,
            channel_base: 16,
            channel_cap: 128,
            hi_res_mult: 1,
            hi_res_start: 64,
            g_variant: Variant::Skip,
            d_variant: Variant::Residual,
            mbstd_group: 4,
        }
    }
}

impl NetworkConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.resolution < 8 || !self.resolution.is_power_of_two() {
            return Err(format!(
                "resolution must be a power of two >= 8, got {}",
                self.resolution
            ));
        }
        if self.z_dim == 0 || self.w_dim == 0 || self.channel_base == 0 || self.channel_cap == 0 {
            return Err("dimensions and channel counts must be positive".into());
        }
        if self.hi_res_mult == 0 || self.mbstd_group == 0 {
            return Err("multipliers and group sizes must be positive".into());
        }
        Ok(())
    }

    /// Number of resolution doublings above the 4x4 base.
    pub fn levels(&self) -> usize {
        (self.resolution / 4).trailing_zeros() as usize
    }

    /// Feature channels at a given resolution.
    pub fn channels(&self, res: usize) -> usize {
        let k = (res / 4).trailing_zeros() as usize;
        let base = (self.channel_base << (self.levels() - k)).min(self.channel_cap);
        let mult = if res >= self.hi_res_start { self.hi_res_mult } else { 1 };
        (base * mult).max(1)
    }

    /// Resolutions from 4 up to the output resolution.
    pub fn resolutions(&self) -> Vec<usize> {
        (0..=self.levels()).map(|k| 4 << k).collect()
    }

    /// Number of style-modulated synthesis convolutions.
    pub fn num_synth_convs(&self) -> usize {
        2 * self.levels() + 1
    }

    /// Per-layer style slots: one per conv plus one extra consumed by the
    /// highest-resolution RGB layer. Intermediate RGB layers share the slot
    /// of the following convolution.
    pub fn num_style_slots(&self) -> usize {
        self.num_synth_convs() + 1
    }

    /// Style slot used by the RGB output layer at level `j`.
    pub fn trgb_slot(&self, level: usize) -> usize {
        2 * level + 1
    }

    /// Spatial resolutions of the per-layer noise inputs (one per synthesis
    /// conv; the constant input receives no noise).
    pub fn noise_resolutions(&self) -> Vec<usize> {
        let mut out = vec![4];
        for k in 1..=self.levels() {
            out.push(4 << k);
            out.push(4 << k);
        }
        out
    }
}

/// Appends one feature map holding the per-group standard deviation of the
/// batch, averaged over channels and pixels.
///
/// Samples are grouped consecutively; if the batch is not divisible by
/// `group_size` the group size clamps to the full batch.
pub fn minibatch_stddev(features: &Tensor, group_size: usize) -> Tensor {
    assert_eq!(features.shape().len(), 4, "minibatch_stddev expects NCHW");
    let (n, c, h, w) = (
        features.shape()[0],
        features.shape()[1],
        features.shape()[2],
        features.shape()[3],
    );
    let m = if group_size > 0 && n % group_size == 0 { group_size } else { n };
    let g = n / m;
    let x = ops::reshape(features, &[g, m, c, h, w]);
    let mean = ops::mean_axes(&x, &[1], true);
    let centered = ops::sub(&x, &ops::broadcast_to(&mean, x.shape()));
    let var = ops::mean_axes(&ops::square(&centered), &[1], true); // population
    let std = ops::sqrt(&ops::add_const(&var, 1e-8));
    let avg = ops::mean_axes(&std, &[2, 3, 4], true); // [g,1,1,1,1]
    let map = ops::broadcast_to(&avg, &[g, m, 1, h, w]);
    let map = ops::reshape(&map, &[n, 1, h, w]);
    ops::concat(&[features, &map], 1)
}

/// Closed-form parameter counts for a configuration; guards against
/// architecture drift in the layer construction code.
pub fn expected_param_counts(cfg: &NetworkConfig) -> (usize, usize) {
    let levels = cfg.levels();
    let ch = |res: usize| cfg.channels(res);
    let linear = |fan_in: usize, fan_out: usize| fan_in * fan_out + fan_out;
    let affine = |c_in: usize| cfg.w_dim * c_in + c_in;
    // modulated conv: weight + bias + noise scalar + style affine
    let mod_conv = |c_in: usize, c_out: usize, k: usize| c_out * c_in * k * k + c_out + 1 + affine(c_in);
    // RGB output: modulated 1x1 without noise
    let trgb = |c_in: usize| 3 * c_in + 3 + affine(c_in);

    let mut g = 0usize;
    // mapping
    if cfg.mapping_depth > 0 {
        g += linear(cfg.z_dim, cfg.w_dim);
        g += (cfg.mapping_depth - 1) * linear(cfg.w_dim, cfg.w_dim);
    }
    // constant input
    g += ch(4) * 16;
    // synthesis convs
    g += mod_conv(ch(4), ch(4), 3);
    for k in 1..=levels {
        let res = 4 << k;
        g += mod_conv(ch(res / 2), ch(res), 3);
        g += mod_conv(ch(res), ch(res), 3);
    }
    // RGB layers
    match cfg.g_variant {
        Variant::Skip => {
            for k in 0..=levels {
                g += trgb(ch(4 << k));
            }
        }
        Variant::Feedforward => g += trgb(ch(cfg.resolution)),
        Variant::Residual => {
            g += trgb(ch(cfg.resolution));
            for k in 1..=levels {
                let res = 4 << k;
                g += ch(res) * ch(res / 2); // 1x1 shortcut, no bias
            }
        }
    }

    let mut d = 0usize;
    // fRGB conversions (1x1 conv = linear in channels): the skip variant
    // converts the downsampled image at every resolution down to 4x4
    match cfg.d_variant {
        Variant::Skip => {
            for k in 0..=levels {
                d += linear(3, ch(4 << k));
            }
        }
        _ => d += linear(3, ch(cfg.resolution)),
    }
    // blocks from top resolution down to 8
    for k in (1..=levels).rev() {
        let res = 4 << k;
        d += ch(res) * ch(res) * 9 + ch(res); // conv1
        d += ch(res / 2) * ch(res) * 9 + ch(res / 2); // conv2 (after down)
        if cfg.d_variant == Variant::Residual {
            d += ch(res / 2) * ch(res); // 1x1 shortcut, no bias
        }
    }
    // final stack at 4x4
    d += ch(4) * (ch(4) + 1) * 9 + ch(4);
    d += linear(ch(4) * 16, ch(4));
    d += linear(ch(4), 1);
    (g, d)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    #[test]
    fn channel_schedule() {
        let cfg = NetworkConfig::default();
        assert_eq!(cfg.levels(), 3);
        assert_eq!(cfg.channels(4), 128);
        assert_eq!(cfg.channels(8), 64);
        assert_eq!(cfg.channels(16), 32);
        assert_eq!(cfg.channels(32), 16);
        assert_eq!(cfg.num_synth_convs(), 7);
        assert_eq!(cfg.num_style_slots(), 8);
        assert_eq!(cfg.noise_resolutions(), vec![4, 8, 8, 16, 16, 32, 32]);
    }

    #[test]
    fn hi_res_multiplier() {
        let cfg = NetworkConfig {
            hi_res_mult: 2,
            hi_res_start: 16,
            ..NetworkConfig::default()
        };
        assert_eq!(cfg.channels(8), 64);
        assert_eq!(cfg.channels(16), 64);
        assert_eq!(cfg.channels(32), 32);
    }

    #[test]
    fn mbstd_constant_batch_appends_zeros() {
        let x = Tensor::full(&[4, 2, 3, 3], 1.5);
        let y = minibatch_stddev(&x, 4);
        assert_eq!(y.shape(), &[4, 3, 3, 3]);
        for n in 0..4 {
            let plane = &y.data()[(n * 3 + 2) * 9..(n * 3 + 3) * 9];
            assert!(plane.iter().all(|&v| v.abs() < 2e-4), "{plane:?}");
        }
    }

    #[test]
    fn mbstd_two_sample_population_std() {
        // samples {0, 2} on a single feature: population std = 1
        let x = Tensor::from_vec(&[2, 1, 1, 1], vec![0.0, 2.0]);
        let y = minibatch_stddev(&x, 2);
        assert_eq!(y.shape(), &[2, 2, 1, 1]);
        assert!((y.data()[1] - 1.0).abs() < 1e-4);
        assert!((y.data()[3] - 1.0).abs() < 1e-4);
    }

    #[test]
    fn mbstd_group_one_is_zero() {
        let mut rng = Rng::new(3);
        let x = rng.normal_tensor(&[3, 2, 2, 2]);
        let y = minibatch_stddev(&x, 1);
        for n in 0..3 {
            let plane = &y.data()[(n * 3 + 2) * 4..(n * 3 + 3) * 4];
            assert!(plane.iter().all(|&v| v.abs() < 2e-4));
        }
    }

    #[test]
    fn mbstd_single_sample_is_zero() {
        let mut rng = Rng::new(4);
        let x = rng.normal_tensor(&[1, 2, 2, 2]);
        let y = minibatch_stddev(&x, 4);
        let plane = &y.data()[2 * 4..3 * 4];
        assert!(plane.iter().all(|&v| v.abs() < 2e-4));
    }

    #[test]
    fn mbstd_identical_pair_in_group_is_zero() {
        // two identical samples grouped together: their stddev feature is 0
        let mut rng = Rng::new(5);
        let one = rng.normal_vec(2 * 2 * 2);
        let mut data = one.clone();
        data.extend_from_slice(&one);
        let x = Tensor::from_vec(&[2, 2, 2, 2], data);
        let y = minibatch_stddev(&x, 2);
        let plane = &y.data()[2 * 4..3 * 4];
        assert!(plane.iter().all(|&v| v.abs() < 2e-4));
    }

    #[test]
    fn residual_scale_preserves_variance() {
        // i.i.d. unit-variance branches summed with 1/sqrt(2) stay near
        // unit variance
        let mut rng = Rng::new(6);
        let a = rng.normal_tensor(&[100_000]);
        let b = rng.normal_tensor(&[100_000]);
        let y = ops::scale(&ops::add(&a, &b), RESIDUAL_SCALE);
        let d = y.data();
        let m: f64 = d.iter().map(|&v| v as f64).sum::<f64>() / d.len() as f64;
        let var = d.iter().map(|&v| (v as f64 - m).powi(2)).sum::<f64>() / d.len() as f64;
        assert!((var - 1.0).abs() < 0.1, "variance {var}");
    }
}
