//! Style-modulated convolution.
//!
//! A style block is a single convolution whose weights are scaled per input
//! channel by the incoming style ("modulation") and then renormalized per
//! output channel to unit L2 norm ("demodulation"). The per-sample weights
//! are applied in one batched call by reshaping to a grouped convolution
//! with one group per sample.

use crate::ops::{self, conv2d};
use crate::tensor::Tensor;

/// Small constant inside the demodulation square root.
pub const DEMOD_EPSILON: f32 = 1e-8;

/// Scales convolution weights per input channel.
///
/// `weights` is [c_out, c_in, kh, kw] and `styles` is [n, c_in]; the result
/// is a per-sample weight set [n, c_out, c_in, kh, kw] with
/// w'[n,j,i,k] = s[n,i] * w[j,i,k].
pub fn modulate(weights: &Tensor, styles: &Tensor) -> Tensor {
    assert_eq!(weights.shape().len(), 4, "weights must be [c_out, c_in, kh, kw]");
    assert_eq!(styles.shape().len(), 2, "styles must be [n, c_in]");
    let (c_out, c_in, kh, kw) = (
        weights.shape()[0],
        weights.shape()[1],
        weights.shape()[2],
        weights.shape()[3],
    );
    let n = styles.shape()[0];
    assert_eq!(
        styles.shape()[1],
        c_in,
        "style length {} vs input channels {c_in}",
        styles.shape()[1]
    );
    let target = [n, c_out, c_in, kh, kw];
    let w = ops::broadcast_to(&ops::reshape(weights, &[1, c_out, c_in, kh, kw]), &target);
    let s = ops::broadcast_to(&ops::reshape(styles, &[n, 1, c_in, 1, 1]), &target);
    ops::mul(&w, &s)
}

/// Rescales each output channel of per-sample weights to unit L2 norm:
/// w''[n,j,i,k] = w'[n,j,i,k] / sqrt(sum_{i,k} w'^2 + eps).
pub fn demodulate(w_prime: &Tensor, epsilon: f32) -> Tensor {
    assert_eq!(w_prime.shape().len(), 5, "w' must be [n, c_out, c_in, kh, kw]");
    assert!(epsilon > 0.0, "epsilon must be positive");
    let sumsq = ops::sum_axes(&ops::square(w_prime), &[2, 3, 4], true);
    let inv = ops::rsqrt(&ops::add_const(&sumsq, epsilon));
    ops::mul(w_prime, &ops::broadcast_to(&inv, w_prime.shape()))
}

/// Convolution with per-sample modulated (and optionally demodulated)
/// weights, batched as a single grouped convolution.
///
/// `input` is [n, c_in, h, w], `weights` [c_out, c_in, kh, kw], `styles`
/// [n, c_in]. Equivalent to conv2d(input[i], w''(i)) for every sample i.
pub fn modulated_conv2d(
    input: &Tensor,
    weights: &Tensor,
    styles: &Tensor,
    demodulate_weights: bool,
    epsilon: f32,
) -> Tensor {
    assert_eq!(input.shape().len(), 4, "input must be NCHW");
    let (n, c_in, h, w) = (
        input.shape()[0],
        input.shape()[1],
        input.shape()[2],
        input.shape()[3],
    );
    assert_eq!(styles.shape()[0], n, "one style vector per sample");
    assert_eq!(weights.shape()[1], c_in, "weight input channels");
    let (c_out, kh, kw) = (weights.shape()[0], weights.shape()[2], weights.shape()[3]);

    let wp = modulate(weights, styles);
    let wd = if demodulate_weights {
        demodulate(&wp, epsilon)
    } else {
        wp
    };
    // one sample with n groups instead of n samples with one group
    let grouped_w = ops::reshape(&wd, &[n * c_out, c_in, kh, kw]);
    let grouped_x = ops::reshape(input, &[1, n * c_in, h, w]);
    let out = conv2d(&grouped_x, &grouped_w, n);
    ops::reshape(&out, &[n, c_out, h, w])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;
    use crate::tensor::no_grad;

    fn max_abs_diff(a: &Tensor, b: &Tensor) -> f32 {
        a.data()
            .iter()
            .zip(b.data())
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f32::max)
    }

    #[test]
    fn modulate_identity_and_homogeneity() {
        let mut rng = Rng::new(1);
        let w = rng.normal_tensor(&[3, 2, 3, 3]);
        let ones = Tensor::ones(&[1, 2]);
        let wp = modulate(&w, &ones);
        assert_eq!(wp.to_vec(), w.to_vec());

        let twos = Tensor::full(&[1, 2], 2.0);
        let wp2 = modulate(&w, &twos);
        for (a, b) in wp2.data().iter().zip(w.data()) {
            assert!((a - 2.0 * b).abs() < 1e-6);
        }
    }

    #[test]
    fn modulate_rowwise_scaling() {
        // s = [1, 2] scales the two input-channel slices independently
        let w = Tensor::from_vec(&[1, 2, 1, 1], vec![3.0, 5.0]);
        let s = Tensor::from_vec(&[1, 2], vec![1.0, 2.0]);
        let wp = modulate(&w, &s);
        assert_eq!(wp.to_vec(), vec![3.0, 10.0]);
    }

    #[test]
    fn demodulate_normalizes_single_weight() {
        // a single nonzero weight becomes sign(v) within epsilon
        for v in [4.0f32, -0.3] {
            let mut data = vec![0.0f32; 2 * 3 * 9];
            data[9 + 4] = v;
            let wp = Tensor::from_vec(&[1, 2, 3, 3, 3], data);
            let wd = demodulate(&wp, 1e-12);
            let got = wd.data()[9 + 4];
            assert!((got - v.signum()).abs() < 1e-4, "{got}");
        }
    }

    #[test]
    fn demodulate_zero_weights_stay_zero() {
        let wp = Tensor::zeros(&[1, 2, 2, 1, 1]);
        let wd = demodulate(&wp, 1e-8);
        assert!(wd.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn demodulate_is_scale_invariant() {
        // scaling w' by a positive constant leaves w'' unchanged up to
        // epsilon-order terms
        let mut rng = Rng::new(2);
        let wp = rng.normal_tensor(&[2, 4, 3, 3, 3]);
        let base = demodulate(&wp, DEMOD_EPSILON);
        for c in [0.1f32, 10.0] {
            let scaled = demodulate(&wp.scale(c), DEMOD_EPSILON);
            let max_rel = base
                .data()
                .iter()
                .zip(scaled.data())
                .map(|(a, b)| (a - b).abs() / a.abs().max(1e-3))
                .fold(0.0f32, f32::max);
            assert!(max_rel <= 1e-4, "c={c}: max rel diff {max_rel}");
        }
    }

    #[test]
    fn per_output_channel_norm_is_one() {
        let mut rng = Rng::new(3);
        let wp = rng.normal_tensor(&[2, 4, 3, 3, 3]);
        let wd = demodulate(&wp, DEMOD_EPSILON);
        let d = wd.data();
        let per = 3 * 3 * 3;
        for jc in 0..(2 * 4) {
            let norm: f32 = d[jc * per..(jc + 1) * per].iter().map(|v| v * v).sum::<f32>().sqrt();
            assert!((norm - 1.0).abs() < 1e-4, "channel {jc}: {norm}");
        }
    }

    #[test]
    fn single_sample_matches_prescaled_conv() {
        // with n=1 the grouped path is a plain convolution of demodulated
        // weights
        let mut rng = Rng::new(4);
        let x = rng.normal_tensor(&[1, 3, 6, 6]);
        let w = rng.normal_tensor(&[5, 3, 3, 3]);
        let s = rng.uniform_tensor(&[1, 3], 0.5, 2.0);
        let batched = modulated_conv2d(&x, &w, &s, true, DEMOD_EPSILON);
        let wd = demodulate(&modulate(&w, &s), DEMOD_EPSILON);
        let direct = conv2d(&x, &wd.reshape(&[5, 3, 3, 3]), 1);
        assert!(max_abs_diff(&batched, &direct) <= 1e-6);
    }

    #[test]
    fn batched_matches_per_sample_loop() {
        let mut rng = Rng::new(5);
        let (n, c_in, c_out) = (4, 3, 5);
        let x = rng.normal_tensor(&[n, c_in, 5, 5]);
        let w = rng.normal_tensor(&[c_out, c_in, 3, 3]);
        let s = rng.uniform_tensor(&[n, c_in], 0.2, 3.0);
        let batched = modulated_conv2d(&x, &w, &s, true, DEMOD_EPSILON);
        for i in 0..n {
            let xi = crate::ops::slice(&x, 0, i, 1);
            let si = crate::ops::slice(&s, 0, i, 1);
            let yi = modulated_conv2d(&xi, &w, &si, true, DEMOD_EPSILON);
            let bi = crate::ops::slice(&batched, 0, i, 1);
            assert!(max_abs_diff(&yi, &bi) <= 1e-5, "sample {i}");
        }
    }

    #[test]
    fn demodulated_output_std_is_near_one() {
        // unit-variance i.i.d. input: per-channel output std converges to 1
        no_grad(|| {
            let mut rng = Rng::new(6);
            let (c, hw) = (16, 8);
            let w = rng.normal_tensor(&[c, c, 3, 3]);
            let mut per_channel_sq = vec![0.0f64; c];
            let mut count = 0usize;
            for _ in 0..8 {
                let x = rng.normal_tensor(&[8, c, hw, hw]);
                let s = rng.uniform_tensor(&[8, c], 0.3, 3.0);
                let y = modulated_conv2d(&x, &w, &s, true, DEMOD_EPSILON);
                let d = y.data();
                for n in 0..8 {
                    for j in 0..c {
                        let plane = &d[(n * c + j) * hw * hw..(n * c + j + 1) * hw * hw];
                        per_channel_sq[j] += plane.iter().map(|&v| (v as f64) * (v as f64)).sum::<f64>();
                    }
                }
                count += 8 * hw * hw;
            }
            let mean_std: f64 = per_channel_sq
                .iter()
                .map(|&sq| (sq / count as f64).sqrt())
                .sum::<f64>()
                / c as f64;
            assert!(
                (0.8..=1.2).contains(&mean_std),
                "mean per-channel std {mean_std}"
            );
        });
    }

    #[test]
    fn style_scale_invariance_of_output() {
        // multiplying all styles by a positive constant changes the
        // demodulated output only by epsilon-order terms
        let mut rng = Rng::new(7);
        let x = rng.normal_tensor(&[2, 3, 4, 4]);
        let w = rng.normal_tensor(&[4, 3, 3, 3]);
        let s = rng.uniform_tensor(&[2, 3], 0.5, 2.0);
        let base = modulated_conv2d(&x, &w, &s, true, DEMOD_EPSILON);
        let scaled = modulated_conv2d(&x, &w, &s.scale(7.0), true, DEMOD_EPSILON);
        let max_rel = base
            .data()
            .iter()
            .zip(scaled.data())
            .map(|(a, b)| (a - b).abs() / a.abs().max(1e-3))
            .fold(0.0f32, f32::max);
        assert!(max_rel <= 1e-4, "max rel diff {max_rel}");
    }

    #[test]
    fn demodulation_off_is_homogeneous_in_styles() {
        let mut rng = Rng::new(8);
        let x = rng.normal_tensor(&[2, 3, 4, 4]);
        let w = rng.normal_tensor(&[4, 3, 1, 1]);
        let s = rng.uniform_tensor(&[2, 3], 0.5, 2.0);
        let y1 = modulated_conv2d(&x, &w, &s, false, DEMOD_EPSILON);
        let y4 = modulated_conv2d(&x, &w, &s.scale(4.0), false, DEMOD_EPSILON);
        for (a, b) in y1.data().iter().zip(y4.data()) {
            assert!((4.0 * a - b).abs() < 1e-4 * b.abs().max(1.0));
        }
    }

    #[test]
    fn matches_instance_normalization_statistics() {
        // The demodulated conv and an explicit conv + instance
        // normalization agree on output scale for i.i.d. inputs: both leave
        // per-channel std near 1 (demodulation is the statistical stand-in
        // for the data-dependent normalization).
        no_grad(|| {
            let mut rng = Rng::new(9);
            let (c, hw, n) = (8, 16, 16);
            let x = rng.normal_tensor(&[n, c, hw, hw]);
            let w = rng.normal_tensor(&[c, c, 3, 3]);
            let s = rng.uniform_tensor(&[n, c], 0.5, 2.0);

            let demod = modulated_conv2d(&x, &w, &s, true, DEMOD_EPSILON);

            // reference: modulated conv without demodulation, then
            // per-sample per-channel standardization over pixels
            let raw = modulated_conv2d(&x, &w, &s, false, DEMOD_EPSILON);
            let mu = crate::ops::mean_axes(&raw, &[2, 3], true);
            let centered = crate::ops::sub(&raw, &crate::ops::broadcast_to(&mu, raw.shape()));
            let var = crate::ops::mean_axes(&crate::ops::square(&centered), &[2, 3], true);
            let inorm = crate::ops::mul(
                &centered,
                &crate::ops::broadcast_to(&crate::ops::rsqrt(&crate::ops::add_const(&var, 1e-8)), raw.shape()),
            );

            let std_of = |t: &Tensor| {
                let d = t.data();
                let m: f64 = d.iter().map(|&v| v as f64).sum::<f64>() / d.len() as f64;
                (d.iter().map(|&v| (v as f64 - m) * (v as f64 - m)).sum::<f64>() / d.len() as f64).sqrt()
            };
            let sd = std_of(&demod);
            let si = std_of(&inorm);
            assert!((sd - si).abs() / si < 0.25, "demod std {sd} vs instance-norm std {si}");
        });
    }
}
