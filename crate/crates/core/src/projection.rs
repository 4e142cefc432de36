//! Projection of a target image to (w, noise maps).
//!
//! Optimizes a single latent in the unextended W space together with all
//! per-layer noise maps, using ramped-down latent noise, a warmup/cosine
//! learning-rate schedule, and multi-scale autocorrelation regularization
//! that keeps signal out of the noise maps. The reconstruction error after
//! projection serves as an attribution score.

use thiserror::Error;

use crate::autograd::backward;
use crate::metrics::DistanceMetric;
use crate::networks::{Generator, NoiseMaps};
use crate::ops;
use crate::rng::Rng;
use crate::tensor::{no_grad, Tensor};
use crate::training::{Adam, AdamParams};

#[derive(Debug, Error)]
pub enum ProjectionError {
    #[error("target resolution {got} does not match generator resolution {expected}")]
    ResolutionMismatch { got: usize, expected: usize },
    #[error("schedule phases exceed the iteration count")]
    BadSchedule,
}

/// Center and spread of the mapped latent distribution.
#[derive(Clone, Debug)]
pub struct LatentStats {
    pub mean_w: Vec<f32>,
    /// Mean squared distance to the center, E ||f(z) - mu||^2.
    pub sigma_sq: f32,
    pub count: usize,
}

impl LatentStats {
    pub fn sigma(&self) -> f32 {
        self.sigma_sq.sqrt()
    }
}

/// Samples `n` latents through the mapping network and records the center
/// and average squared distance to it.
pub fn estimate_latent_stats(generator: &Generator, n: usize, rng: &mut Rng) -> LatentStats {
    assert!(n >= 2, "need at least two samples");
    let d = generator.cfg.w_dim;
    let mut sum = vec![0.0f64; d];
    let mut rows: Vec<Vec<f32>> = Vec::with_capacity(n);
    no_grad(|| {
        let mut remaining = n;
        while remaining > 0 {
            let b = remaining.min(256);
            remaining -= b;
            let z = rng.normal_tensor(&[b, generator.cfg.z_dim]);
            let w = generator.mapping_forward(&z);
            for i in 0..b {
                let row = w.data()[i * d..(i + 1) * d].to_vec();
                for (s, &v) in sum.iter_mut().zip(&row) {
                    *s += v as f64;
                }
                rows.push(row);
            }
        }
    });
    let mean_w: Vec<f32> = sum.iter().map(|&s| (s / n as f64) as f32).collect();
    let mut accum = 0.0f64;
    for row in &rows {
        let mut d2 = 0.0f64;
        for (&v, &m) in row.iter().zip(&mean_w) {
            d2 += (v as f64 - m as f64) * (v as f64 - m as f64);
        }
        accum += d2;
    }
    LatentStats { mean_w, sigma_sq: (accum / n as f64) as f32, count: n }
}

/// Optimization schedule for [`project`].
#[derive(Clone, Copy, Debug)]
pub struct ProjectionSchedule {
    pub iterations: usize,
    pub lr_max: f32,
    /// Linear warmup length in iterations.
    pub ramp_up: usize,
    /// Cosine ramp-down length in iterations.
    pub ramp_down: usize,
    /// Latent noise is active for this many initial iterations.
    pub noise_phase: usize,
    /// Initial latent noise factor (times sigma_w).
    pub noise_scale: f32,
    /// Weight of the noise-map autocorrelation regularizer.
    pub reg_weight: f32,
}

impl Default for ProjectionSchedule {
    fn default() -> Self {
        ProjectionSchedule {
            iterations: 1000,
            lr_max: 0.1,
            ramp_up: 50,
            ramp_down: 250,
            noise_phase: 750,
            noise_scale: 0.05,
            reg_weight: 1e5,
        }
    }
}

impl ProjectionSchedule {
    pub fn validate(&self) -> Result<(), ProjectionError> {
        if self.iterations > 0
            && (self.ramp_up + self.ramp_down > self.iterations || self.noise_phase > self.iterations)
        {
            return Err(ProjectionError::BadSchedule);
        }
        Ok(())
    }

    /// Learning rate at `step` in [0, iterations]: 0 at both ends, lr_max on
    /// the plateau; linear warmup, cosine ramp-down.
    pub fn lr_at(&self, step: usize) -> f32 {
        if self.iterations == 0 {
            return 0.0;
        }
        let t = step as f64 / self.iterations as f64;
        let down_ratio = self.ramp_down as f64 / self.iterations as f64;
        let up_ratio = self.ramp_up as f64 / self.iterations as f64;
        let ramp_down = if down_ratio > 0.0 {
            let x = ((1.0 - t) / down_ratio).min(1.0);
            0.5 - 0.5 * (x * std::f64::consts::PI).cos()
        } else {
            1.0
        };
        let ramp_up = if up_ratio > 0.0 { (t / up_ratio).min(1.0) } else { 1.0 };
        (self.lr_max as f64 * ramp_down * ramp_up) as f32
    }

    /// Latent-noise factor t at `step`: goes from 1 to 0 over the noise
    /// phase, then stays 0.
    pub fn noise_t(&self, step: usize) -> f32 {
        if self.noise_phase == 0 {
            return 0.0;
        }
        (1.0 - step as f32 / self.noise_phase as f32).max(0.0)
    }
}

/// Downsampled copies of a noise map, halving the resolution to 8x8 by
/// averaging 2x2 neighborhoods and doubling to keep unit variance.
pub fn noise_pyramid(map: &Tensor) -> Vec<Tensor> {
    assert_eq!(map.shape().len(), 4, "noise map must be [1,1,r,r]");
    let r = map.shape()[2];
    assert_eq!(map.shape()[3], r, "noise map must be square");
    assert!(r.is_power_of_two(), "noise map resolution must be a power of two");
    assert!(r > 8, "pyramid only defined for maps larger than 8x8");
    let mut levels = Vec::new();
    let mut cur = map.clone();
    while cur.shape()[2] > 8 {
        let half = cur.shape()[2] / 2;
        let split = ops::reshape(&cur, &[1, 1, half, 2, half, 2]);
        let avg = ops::scale(&ops::sum_axes(&split, &[3, 5], false), 0.25);
        cur = ops::scale(&ops::reshape(&avg, &[1, 1, half, half]), 2.0);
        levels.push(cur.clone());
    }
    levels
}

/// Autocorrelation regularization term for one (possibly downsampled)
/// noise map: squared resolution-normalized products with the map shifted
/// by one pixel horizontally and vertically, wrapping at the edges.
pub fn noise_reg_term(map: &Tensor) -> Tensor {
    assert_eq!(map.shape().len(), 4, "noise map must be [1,1,r,r]");
    let r = map.shape()[2];
    assert_eq!(map.shape()[3], r, "noise map must be square");
    let inv = 1.0 / (r * r) as f32;
    // shift by one pixel with toroidal wrap
    let shift_x = ops::concat(&[&ops::slice(map, 3, r - 1, 1), &ops::slice(map, 3, 0, r - 1)], 3);
    let shift_y = ops::concat(&[&ops::slice(map, 2, r - 1, 1), &ops::slice(map, 2, 0, r - 1)], 2);
    let cx = ops::scale(&ops::sum_all(&ops::mul(map, &shift_x)), inv);
    let cy = ops::scale(&ops::sum_all(&ops::mul(map, &shift_y)), inv);
    ops::add(&ops::square(&cx), &ops::square(&cy))
}

/// Sum of regularization terms for a noise map: the map itself plus its
/// pyramid levels when larger than 8x8.
fn noise_reg_total(map: &Tensor) -> Tensor {
    let mut total = noise_reg_term(map);
    if map.shape()[2] > 8 {
        for level in noise_pyramid(map) {
            total = ops::add(&total, &noise_reg_term(&level));
        }
    }
    total
}

/// Outcome of one projection run.
pub struct ProjectionResult {
    pub w: Vec<f32>,
    pub noise: NoiseMaps,
    pub final_image: Tensor,
    /// Distance between the target and its re-synthesis (no latent noise).
    pub attribution_distance: f32,
    pub loss_trace: Vec<f32>,
}

/// Projects `target` ([1,3,r,r] or [3,r,r]) into the generator's latent
/// space, optimizing a single broadcast w and all noise maps.
pub fn project(
    generator: &Generator,
    target: &Tensor,
    stats: &LatentStats,
    schedule: &ProjectionSchedule,
    metric: &DistanceMetric,
    seed: u64,
) -> Result<ProjectionResult, ProjectionError> {
    schedule.validate()?;
    let cfg = &generator.cfg;
    let r = cfg.resolution;
    let target = match target.shape() {
        [3, h, w] if *h == r && *w == r => target.reshape(&[1, 3, r, r]),
        [1, 3, h, w] if *h == r && *w == r => target.clone(),
        s => {
            return Err(ProjectionError::ResolutionMismatch {
                got: if s.len() >= 2 { s[s.len() - 2] } else { 0 },
                expected: r,
            })
        }
    };
    let target = target.detach();

    let mut rng = Rng::derive(seed, 0x9e0);
    let d = cfg.w_dim;
    let mut w_value = stats.mean_w.clone();
    let mut noise_values: Vec<Vec<f32>> = cfg
        .noise_resolutions()
        .iter()
        .map(|&res| rng.normal_vec(res * res))
        .collect();
    let noise_shapes: Vec<usize> = cfg.noise_resolutions();

    let mut opt = Adam::new(
        AdamParams { lr: schedule.lr_max, beta1: 0.9, beta2: 0.999, eps: 1e-8 },
        1 + noise_values.len(),
    );
    let sigma_w = stats.sigma();
    let mut loss_trace = Vec::with_capacity(schedule.iterations);

    for step in 0..schedule.iterations {
        let lr = schedule.lr_at(step);
        let t = schedule.noise_t(step);

        let w_param = Tensor::from_vec(&[1, d], w_value.clone()).tracked();
        let noise_params: Vec<Tensor> = noise_values
            .iter()
            .zip(&noise_shapes)
            .map(|(v, &res)| Tensor::from_vec(&[1, 1, res, res], v.clone()).tracked())
            .collect();

        // latent exploration noise, ramped down over the noise phase
        let w_input = if t > 0.0 {
            let std = schedule.noise_scale * sigma_w * t * t;
            ops::add(&w_param, &rng.normal_tensor(&[1, d]).scale(std))
        } else {
            w_param.clone()
        };

        let styles = generator.broadcast_styles(&w_input);
        let noise = NoiseMaps(noise_params.clone());
        let img = generator.synthesis(&styles, &noise);
        let image_loss = metric.mean_distance(&target, &img);
        let mut reg = Tensor::zeros(&[1]);
        for npar in &noise_params {
            reg = ops::add(&reg, &noise_reg_total(npar));
        }
        let loss = ops::add(&image_loss, &ops::scale(&reg, schedule.reg_weight));
        loss_trace.push(loss.item());

        let mut wanted: Vec<&Tensor> = vec![&w_param];
        wanted.extend(noise_params.iter());
        let grads = backward(&loss, &wanted, false);

        opt.begin_step();
        if let Some(gw) = grads.get(&w_param) {
            w_value = opt.update(0, &w_value, gw.data(), Some(lr));
        }
        for (i, npar) in noise_params.iter().enumerate() {
            if let Some(gn) = grads.get(npar) {
                noise_values[i] = opt.update(1 + i, &noise_values[i], gn.data(), Some(lr));
            }
            // renormalize to zero mean, unit variance after every step
            renormalize(&mut noise_values[i]);
        }
    }

    // final synthesis and attribution distance, without latent noise
    let noise = NoiseMaps(
        noise_values
            .iter()
            .zip(&noise_shapes)
            .map(|(v, &res)| Tensor::from_vec(&[1, 1, res, res], v.clone()))
            .collect(),
    );
    let (final_image, attribution_distance) = no_grad(|| {
        let w = Tensor::from_vec(&[1, d], w_value.clone());
        let img = generator.synthesis(&generator.broadcast_styles(&w), &noise);
        let dist = metric.mean_distance(&target, &img).item();
        (img, dist)
    });

    Ok(ProjectionResult {
        w: w_value,
        noise,
        final_image,
        attribution_distance,
        loss_trace,
    })
}

fn renormalize(values: &mut [f32]) {
    let n = values.len() as f64;
    let mean = values.iter().map(|&v| v as f64).sum::<f64>() / n;
    let var = values.iter().map(|&v| (v as f64 - mean) * (v as f64 - mean)).sum::<f64>() / n;
    let inv_std = 1.0 / var.sqrt().max(1e-8);
    for v in values.iter_mut() {
        *v = ((*v as f64 - mean) * inv_std) as f32;
    }
}
