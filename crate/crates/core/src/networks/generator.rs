//! Style-based generator: mapping network plus synthesis network in
//! feedforward, skip and residual variants.

use crate::ops;
use crate::params::{ParamId, ParamStore};
use crate::rng::Rng;
use crate::tensor::Tensor;

use super::layers::{EqConv, EqLinear, ModConv};
use super::{NetworkConfig, Variant, LRELU_ALPHA, RESIDUAL_SCALE};

/// Per-layer spatial noise inputs, one single-channel map per synthesis
/// convolution. Maps may have batch size 1 (shared) or match the batch.
pub struct NoiseMaps(pub Vec<Tensor>);

impl NoiseMaps {
    /// Fresh standard-normal maps for a batch.
    pub fn sample(cfg: &NetworkConfig, batch: usize, rng: &mut Rng) -> NoiseMaps {
        NoiseMaps(
            cfg.noise_resolutions()
                .iter()
                .map(|&r| rng.normal_tensor(&[batch, 1, r, r]))
                .collect(),
        )
    }

    /// All-zero maps (deterministic synthesis).
    pub fn zeros(cfg: &NetworkConfig) -> NoiseMaps {
        NoiseMaps(
            cfg.noise_resolutions()
                .iter()
                .map(|&r| Tensor::zeros(&[1, 1, r, r]))
                .collect(),
        )
    }

    pub fn validate(&self, cfg: &NetworkConfig) {
        let res = cfg.noise_resolutions();
        assert_eq!(self.0.len(), res.len(), "noise map count mismatch");
        for (t, &r) in self.0.iter().zip(&res) {
            assert_eq!(t.shape()[1], 1, "noise maps are single-channel");
            assert!(
                t.shape()[2] == r && t.shape()[3] == r,
                "noise map resolution mismatch: got {:?}, expected {r}x{r}",
                t.shape()
            );
        }
    }
}

struct SynthConv {
    conv: ModConv,
    upsample: bool,
}

pub struct Generator {
    pub cfg: NetworkConfig,
    pub store: ParamStore,
    mapping: Vec<EqLinear>,
    const_input: ParamId,
    convs: Vec<SynthConv>,
    trgbs: Vec<ModConv>,
    residual_skips: Vec<EqConv>,
}

impl Generator {
    pub fn new(cfg: &NetworkConfig, rng: &mut Rng) -> Generator {
        cfg.validate().expect("invalid network config");
        let mut store = ParamStore::new();
        let levels = cfg.levels();

        let mut mapping = Vec::new();
        for i in 0..cfg.mapping_depth {
            let fan_in = if i == 0 { cfg.z_dim } else { cfg.w_dim };
            mapping.push(EqLinear::new(
                &mut store,
                rng,
                &format!("g.mapping.{i}"),
                fan_in,
                cfg.w_dim,
                0.01, // the mapping trains at a 100x lower rate
                0.0,
            ));
        }

        let c4 = cfg.channels(4);
        let const_input = store.register("g.const", &[1, c4, 4, 4], rng.normal_vec(c4 * 16));

        let mut convs = Vec::new();
        convs.push(SynthConv {
            conv: ModConv::new(&mut store, rng, "g.conv0", c4, c4, 3, cfg.w_dim, true, true, true),
            upsample: false,
        });
        for k in 1..=levels {
            let res = 4 << k;
            let (cin, cout) = (cfg.channels(res / 2), cfg.channels(res));
            convs.push(SynthConv {
                conv: ModConv::new(
                    &mut store,
                    rng,
                    &format!("g.conv{}", 2 * k - 1),
                    cin,
                    cout,
                    3,
                    cfg.w_dim,
                    true,
                    true,
                    true,
                ),
                upsample: true,
            });
            convs.push(SynthConv {
                conv: ModConv::new(
                    &mut store,
                    rng,
                    &format!("g.conv{}", 2 * k),
                    cout,
                    cout,
                    3,
                    cfg.w_dim,
                    true,
                    true,
                    true,
                ),
                upsample: false,
            });
        }

        // RGB layers: modulated 1x1 without demodulation, bias, no
        // activation, no noise
        let trgb = |store: &mut ParamStore, rng: &mut Rng, name: &str, cin: usize| {
            ModConv::new(store, rng, name, cin, 3, 1, cfg.w_dim, false, false, false)
        };
        let mut trgbs = Vec::new();
        match cfg.g_variant {
            Variant::Skip => {
                for k in 0..=levels {
                    trgbs.push(trgb(&mut store, rng, &format!("g.trgb{k}"), cfg.channels(4 << k)));
                }
            }
            Variant::Feedforward | Variant::Residual => {
                trgbs.push(trgb(&mut store, rng, "g.trgb", cfg.channels(cfg.resolution)));
            }
        }

        let mut residual_skips = Vec::new();
        if cfg.g_variant == Variant::Residual {
            for k in 1..=levels {
                let res = 4 << k;
                residual_skips.push(EqConv::new(
                    &mut store,
                    rng,
                    &format!("g.skip{k}"),
                    cfg.channels(res / 2),
                    cfg.channels(res),
                    1,
                    false,
                ));
            }
        }

        Generator {
            cfg: cfg.clone(),
            store,
            mapping,
            const_input,
            convs,
            trgbs,
            residual_skips,
        }
    }

    /// z -> w. Depth 0 is the identity (z_dim must equal w_dim).
    pub fn mapping_forward(&self, z: &Tensor) -> Tensor {
        assert_eq!(z.shape().len(), 2, "z must be [n, z_dim]");
        assert_eq!(z.shape()[1], self.cfg.z_dim, "z dimension mismatch");
        if self.mapping.is_empty() {
            assert_eq!(self.cfg.z_dim, self.cfg.w_dim, "identity mapping needs z_dim == w_dim");
            return z.clone();
        }
        // normalize z to the unit hypersphere scale
        let msq = ops::mean_axes(&ops::square(z), &[1], true);
        let mut x = ops::mul(z, &ops::broadcast_to(&ops::rsqrt(&ops::add_const(&msq, 1e-8)), z.shape()));
        for layer in &self.mapping {
            x = ops::leaky_relu_scaled(&layer.forward(&self.store, &x), LRELU_ALPHA);
        }
        x
    }

    /// Broadcasts a single w to every style slot: [n, w_dim] -> [n, L, w_dim].
    pub fn broadcast_styles(&self, w: &Tensor) -> Tensor {
        let n = w.shape()[0];
        let l = self.cfg.num_style_slots();
        ops::broadcast_to(&ops::reshape(w, &[n, 1, self.cfg.w_dim]), &[n, l, self.cfg.w_dim])
    }

    fn style_slot(&self, styles: &Tensor, slot: usize) -> Tensor {
        let n = styles.shape()[0];
        ops::reshape(&ops::slice(styles, 1, slot, 1), &[n, self.cfg.w_dim])
    }

    /// Synthesis network: per-layer styles [n, L, w_dim] and per-layer
    /// noise to an RGB image [n, 3, r, r].
    pub fn synthesis(&self, styles: &Tensor, noise: &NoiseMaps) -> Tensor {
        self.synthesis_impl(styles, noise, false).0
    }

    /// Skip-variant synthesis that also returns each RGB layer's
    /// contribution upsampled to the output resolution (their sum equals
    /// the image).
    pub fn synthesis_with_rgb_contributions(
        &self,
        styles: &Tensor,
        noise: &NoiseMaps,
    ) -> (Tensor, Vec<Tensor>) {
        assert_eq!(
            self.cfg.g_variant,
            Variant::Skip,
            "per-resolution contributions require the skip generator"
        );
        let (img, contribs) = self.synthesis_impl(styles, noise, true);
        (img, contribs)
    }

    fn synthesis_impl(
        &self,
        styles: &Tensor,
        noise: &NoiseMaps,
        capture: bool,
    ) -> (Tensor, Vec<Tensor>) {
        assert_eq!(styles.shape().len(), 3, "styles must be [n, L, w_dim]");
        assert_eq!(
            styles.shape()[1],
            self.cfg.num_style_slots(),
            "style slot count mismatch: got {}, expected {}",
            styles.shape()[1],
            self.cfg.num_style_slots()
        );
        assert_eq!(styles.shape()[2], self.cfg.w_dim, "style dimension mismatch");
        noise.validate(&self.cfg);
        let n = styles.shape()[0];
        let levels = self.cfg.levels();

        // the constant input receives no noise, bias or normalization
        let c = self.store.tensor(self.const_input);
        let mut x = ops::broadcast_to(&c, &[n, self.cfg.channels(4), 4, 4]);
        x = self.convs[0]
            .conv
            .forward(&self.store, &x, &self.style_slot(styles, 0), Some(&noise.0[0]));

        let mut img: Option<Tensor> = None;
        let mut contribs: Vec<Tensor> = Vec::new();
        if self.cfg.g_variant == Variant::Skip {
            let t = self.trgbs[0].forward(
                &self.store,
                &x,
                &self.style_slot(styles, self.cfg.trgb_slot(0)),
                None,
            );
            if capture {
                contribs.push(t.clone());
            }
            img = Some(t);
        }

        for k in 1..=levels {
            let pre = x.clone();
            x = ops::upsample2x(&x);
            let i1 = 2 * k - 1;
            let i2 = 2 * k;
            x = self.convs[i1].conv.forward(
                &self.store,
                &x,
                &self.style_slot(styles, i1),
                Some(&noise.0[i1]),
            );
            debug_assert!(self.convs[i1].upsample);
            x = self.convs[i2].conv.forward(
                &self.store,
                &x,
                &self.style_slot(styles, i2),
                Some(&noise.0[i2]),
            );
            if self.cfg.g_variant == Variant::Residual {
                let short = self.residual_skips[k - 1].forward(&self.store, &ops::upsample2x(&pre), false);
                x = ops::scale(&ops::add(&x, &short), RESIDUAL_SCALE);
            }
            if self.cfg.g_variant == Variant::Skip {
                let t = self.trgbs[k].forward(
                    &self.store,
                    &x,
                    &self.style_slot(styles, self.cfg.trgb_slot(k)),
                    None,
                );
                if capture {
                    contribs.push(t.clone());
                }
                img = Some(ops::add(&ops::upsample2x(&img.unwrap()), &t));
            }
        }

        let img = match self.cfg.g_variant {
            Variant::Skip => img.unwrap(),
            Variant::Feedforward | Variant::Residual => self.trgbs[0].forward(
                &self.store,
                &x,
                &self.style_slot(styles, self.cfg.num_style_slots() - 1),
                None,
            ),
        };

        if capture {
            // upsample every contribution to the output resolution
            for (k, c) in contribs.iter_mut().enumerate() {
                for _ in k..levels {
                    *c = ops::upsample2x(c);
                }
            }
        }
        (img, contribs)
    }

    /// Convenience: map z, broadcast styles, synthesize.
    pub fn generate(&self, z: &Tensor, noise: &NoiseMaps) -> Tensor {
        let w = self.mapping_forward(z);
        self.synthesis(&self.broadcast_styles(&w), noise)
    }

    pub fn param_tensors(&self) -> Vec<Tensor> {
        self.store.all_tensors()
    }
}
