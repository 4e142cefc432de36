//! Training loop: alternating generator/discriminator updates with the
//! non-saturating logistic loss, lazily scheduled R1 and path-length
//! regularization passes (sharing Adam state with the main passes), style
//! mixing, and a generator weight EMA.

mod adam;
mod losses;
mod regularize;

pub use adam::{lazy_adjusted_hparams, Adam, AdamParams};
pub use losses::{d_logistic_loss, g_logistic_loss, logistic_losses, mixed_styles_with_cutoffs, style_mixing};
pub use regularize::{gamma_pl, path_length_penalty, r1_penalty, PathLengthState};

use thiserror::Error;

use crate::autograd::{backward, Gradients};
use crate::config::RunConfig;
use crate::dataset::SyntheticDataset;
use crate::networks::{Discriminator, Generator, NoiseMaps};
use crate::ops;
use crate::params::{ParamId, ParamStore};
use crate::rng::Rng;
use crate::tensor::{no_grad, Tensor};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("non-finite {what} at step {step}")]
    NonFinite { step: u64, what: &'static str },
}

/// Per-step scalar log. Regularizer columns carry the last computed value.
#[derive(Clone, Copy, Debug)]
pub struct StepLog {
    pub step: u64,
    pub loss_d: f32,
    pub loss_g: f32,
    pub r1: f32,
    pub pl_penalty: f32,
    pub pl_ema: f32,
    pub grad_norm_d: f32,
    pub grad_norm_g: f32,
}

impl StepLog {
    pub const CSV_HEADER: &'static str =
        "step,loss_d,loss_g,r1,pl_penalty,pl_ema,grad_norm_d,grad_norm_g";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{}",
            self.step,
            self.loss_d,
            self.loss_g,
            self.r1,
            self.pl_penalty,
            self.pl_ema,
            self.grad_norm_d,
            self.grad_norm_g
        )
    }
}

/// Exponential moving average update: ema <- decay*ema + (1-decay)*value.
/// Decay 1.0 freezes the average.
pub fn ema_update(ema: &mut [Vec<f32>], values: &ParamStore, decay: f32) {
    for (slot, (_, _, t)) in ema.iter_mut().zip(values.iter()) {
        for (e, &v) in slot.iter_mut().zip(t.data()) {
            *e = decay * *e + (1.0 - decay) * v;
        }
    }
}

/// EMA decay per step for a half-life expressed in thousands of images.
pub fn ema_decay_for_halflife(batch_size: usize, halflife_kimg: f64) -> f32 {
    if halflife_kimg <= 0.0 {
        return 0.0; // follow the raw weights exactly
    }
    0.5f64.powf(batch_size as f64 / (halflife_kimg * 1000.0)) as f32
}

pub struct Trainer {
    pub cfg: RunConfig,
    pub generator: Generator,
    pub discriminator: Discriminator,
    pub dataset: SyntheticDataset,
    pub pl_state: PathLengthState,
    pub step: u64,
    ema: Vec<Vec<f32>>,
    ema_decay: f32,
    opt_g: Adam,
    opt_d: Adam,
    rng_data: Rng,
    rng_latent: Rng,
    rng_noise: Rng,
    rng_mix: Rng,
    rng_reg: Rng,
    last_r1: f32,
    last_pl: f32,
}

impl Trainer {
    pub fn new(cfg: &RunConfig) -> Trainer {
        cfg.validate().expect("invalid run config");
        let mut rng_init = Rng::derive(cfg.seed, 0);
        let generator = Generator::new(&cfg.network, &mut rng_init);
        let discriminator = Discriminator::new(&cfg.network, &mut rng_init);
        let dataset = SyntheticDataset::new(
            cfg.dataset,
            cfg.network.resolution,
            cfg.seed ^ 0xda7a,
            cfg.dataset_size,
        );

        let base = AdamParams {
            lr: cfg.lr as f32,
            beta1: cfg.adam_beta1 as f32,
            beta2: cfg.adam_beta2 as f32,
            eps: cfg.adam_eps as f32,
        };
        // a separate regularization pass runs every k steps, so the main
        // hyperparameters are corrected by c = k/(k+1)
        let hg = if cfg.pl_enabled { lazy_adjusted_hparams(base, cfg.k_g) } else { base };
        let hd = if cfg.r1_enabled { lazy_adjusted_hparams(base, cfg.k_d) } else { base };
        let opt_g = Adam::new(hg, generator.store.len());
        let opt_d = Adam::new(hd, discriminator.store.len());

        let ema = generator.store.snapshot();
        let ema_decay = ema_decay_for_halflife(cfg.batch_size, cfg.ema_halflife_kimg);
        let pl_state = PathLengthState::new(
            cfg.network.resolution,
            cfg.pl_decay as f32,
            cfg.pl_weight.map(|v| v as f32),
        );

        Trainer {
            cfg: cfg.clone(),
            generator,
            discriminator,
            dataset,
            pl_state,
            step: 0,
            ema,
            ema_decay,
            opt_g,
            opt_d,
            rng_data: Rng::derive(cfg.seed, 1),
            rng_latent: Rng::derive(cfg.seed, 2),
            rng_noise: Rng::derive(cfg.seed, 3),
            rng_mix: Rng::derive(cfg.seed, 4),
            rng_reg: Rng::derive(cfg.seed, 5),
            last_r1: 0.0,
            last_pl: 0.0,
        }
    }

    pub fn images_seen(&self) -> u64 {
        self.step * self.cfg.batch_size as u64
    }

    /// Mixed per-layer styles for a fresh latent batch.
    fn sample_styles(&mut self, n: usize) -> Tensor {
        let z1 = self.rng_latent.normal_tensor(&[n, self.cfg.network.z_dim]);
        let z2 = self.rng_latent.normal_tensor(&[n, self.cfg.network.z_dim]);
        let w1 = self.generator.mapping_forward(&z1);
        let w2 = self.generator.mapping_forward(&z2);
        style_mixing(
            &w1,
            &w2,
            self.cfg.network.num_style_slots(),
            self.cfg.style_mix_prob,
            &mut self.rng_mix,
        )
    }

    fn grad_norm(params: &ParamStore, grads: &Gradients) -> f32 {
        let mut acc = 0.0f64;
        for (_, _, t) in params.iter() {
            if let Some(g) = grads.get(t) {
                acc += g.data().iter().map(|&v| (v as f64) * (v as f64)).sum::<f64>();
            }
        }
        acc.sqrt() as f32
    }

    fn apply(opt: &mut Adam, store: &mut ParamStore, grads: &Gradients, lr: Option<f32>) {
        opt.begin_step();
        let updates: Vec<(ParamId, Vec<f32>)> = store
            .iter()
            .filter_map(|(id, _, t)| grads.get(t).map(|g| (id, g.to_vec())))
            .collect();
        for (id, g) in updates {
            let new = opt.update(id.0, store.tensor(id).data(), &g, lr);
            store.set_data(id, new);
        }
    }

    /// One full training step: G main pass, lazy path-length pass, D main
    /// pass, lazy R1 pass, EMA update.
    pub fn train_step(&mut self) -> Result<StepLog, TrainError> {
        let n = self.cfg.batch_size;
        let step = self.step;

        // ---- generator main pass
        let styles = self.sample_styles(n);
        let noise = NoiseMaps::sample(&self.cfg.network, n, &mut self.rng_noise);
        let fake = self.generator.synthesis(&styles, &noise);
        let loss_g = g_logistic_loss(&self.discriminator.forward(&fake));
        let loss_g_val = loss_g.item();
        let g_params = self.generator.store.all_tensors();
        let g_refs: Vec<&Tensor> = g_params.iter().collect();
        let grads = backward(&loss_g, &g_refs, false);
        let grad_norm_g = Self::grad_norm(&self.generator.store, &grads);
        Self::apply(&mut self.opt_g, &mut self.generator.store, &grads, None);
        drop(grads);

        // ---- generator regularization pass (path length), every k_g steps
        if self.cfg.pl_enabled && step % self.cfg.k_g as u64 == 0 {
            let z = self.rng_reg.normal_tensor(&[n, self.cfg.network.z_dim]);
            let w = self.generator.mapping_forward(&z);
            let styles_pl = self.generator.broadcast_styles(&w);
            let noise_pl = NoiseMaps::sample(&self.cfg.network, n, &mut self.rng_reg);
            let gen = &self.generator;
            let (penalty, _mean_len) = path_length_penalty(
                |s| gen.synthesis(s, &noise_pl),
                &styles_pl,
                &mut self.pl_state,
                &mut self.rng_reg,
            );
            // the lazy schedule multiplies the regularization loss by k
            let loss_reg = ops::scale(&penalty, self.cfg.k_g as f32);
            self.last_pl = penalty.item();
            let g_params = self.generator.store.all_tensors();
            let g_refs: Vec<&Tensor> = g_params.iter().collect();
            let grads = backward(&loss_reg, &g_refs, false);
            Self::apply(&mut self.opt_g, &mut self.generator.store, &grads, None);
        }

        // ---- discriminator main pass
        let real = self.dataset.sample_batch(n, &mut self.rng_data);
        let (styles_d, noise_d) = {
            let s = self.sample_styles(n);
            let nm = NoiseMaps::sample(&self.cfg.network, n, &mut self.rng_noise);
            (s, nm)
        };
        let fake_d = no_grad(|| self.generator.synthesis(&styles_d, &noise_d));
        let scores_fake = self.discriminator.forward(&fake_d);
        let scores_real = self.discriminator.forward(&real);
        let loss_d = d_logistic_loss(&scores_real, &scores_fake);
        let loss_d_val = loss_d.item();
        let d_params = self.discriminator.store.all_tensors();
        let d_refs: Vec<&Tensor> = d_params.iter().collect();
        let grads = backward(&loss_d, &d_refs, false);
        let grad_norm_d = Self::grad_norm(&self.discriminator.store, &grads);
        Self::apply(&mut self.opt_d, &mut self.discriminator.store, &grads, None);
        drop(grads);

        // ---- discriminator regularization pass (R1), every k_d steps
        if self.cfg.r1_enabled && step % self.cfg.k_d as u64 == 0 {
            let disc = &self.discriminator;
            let penalty = r1_penalty(|x| disc.forward(x), &real, self.cfg.r1_gamma as f32);
            self.last_r1 = penalty.item();
            let loss_reg = ops::scale(&penalty, self.cfg.k_d as f32);
            let d_params = self.discriminator.store.all_tensors();
            let d_refs: Vec<&Tensor> = d_params.iter().collect();
            let grads = backward(&loss_reg, &d_refs, false);
            Self::apply(&mut self.opt_d, &mut self.discriminator.store, &grads, None);
        }

        // ---- generator EMA
        ema_update(&mut self.ema, &self.generator.store, self.ema_decay);

        self.step += 1;
        if !loss_d_val.is_finite() {
            return Err(TrainError::NonFinite { step, what: "discriminator loss" });
        }
        if !loss_g_val.is_finite() {
            return Err(TrainError::NonFinite { step, what: "generator loss" });
        }
        Ok(StepLog {
            step,
            loss_d: loss_d_val,
            loss_g: loss_g_val,
            r1: self.last_r1,
            pl_penalty: self.last_pl,
            pl_ema: self.pl_state.ema,
            grad_norm_d,
            grad_norm_g,
        })
    }

    /// Copy of the generator holding the EMA weights.
    pub fn ema_generator(&self) -> Generator {
        let mut rng = Rng::new(0);
        let mut g = Generator::new(&self.cfg.network, &mut rng);
        g.store.restore(&self.ema);
        g
    }

    pub fn ema_weights(&self) -> &[Vec<f32>] {
        &self.ema
    }

    pub fn set_ema_weights(&mut self, weights: Vec<Vec<f32>>) {
        assert_eq!(weights.len(), self.ema.len());
        self.ema = weights;
    }
}
