//! Discriminator in feedforward, skip and residual variants, with a
//! minibatch standard deviation layer before the final stack.

use crate::ops;
use crate::params::ParamStore;
use crate::rng::Rng;
use crate::tensor::Tensor;

use super::layers::{EqConv, EqLinear};
use super::{minibatch_stddev, NetworkConfig, Variant, LRELU_ALPHA, RESIDUAL_SCALE};

struct DBlock {
    conv1: EqConv,
    conv2: EqConv,
    shortcut: Option<EqConv>,
}

pub struct Discriminator {
    pub cfg: NetworkConfig,
    pub store: ParamStore,
    /// RGB-to-feature conversions, highest resolution first.
    frgbs: Vec<EqConv>,
    blocks: Vec<DBlock>,
    final_conv: EqConv,
    dense1: EqLinear,
    dense2: EqLinear,
}

impl Discriminator {
    pub fn new(cfg: &NetworkConfig, rng: &mut Rng) -> Discriminator {
        cfg.validate().expect("invalid network config");
        let mut store = ParamStore::new();
        let levels = cfg.levels();

        let mut frgbs = Vec::new();
        match cfg.d_variant {
            Variant::Skip => {
                for k in (0..=levels).rev() {
                    let res = 4 << k;
                    frgbs.push(EqConv::new(
                        &mut store,
                        rng,
                        &format!("d.frgb{res}"),
                        3,
                        cfg.channels(res),
                        1,
                        true,
                    ));
                }
            }
            _ => frgbs.push(EqConv::new(
                &mut store,
                rng,
                &format!("d.frgb{}", cfg.resolution),
                3,
                cfg.channels(cfg.resolution),
                1,
                true,
            )),
        }

        let mut blocks = Vec::new();
        for k in (1..=levels).rev() {
            let res = 4 << k;
            let (cin, cout) = (cfg.channels(res), cfg.channels(res / 2));
            let conv1 = EqConv::new(&mut store, rng, &format!("d.b{res}.conv1"), cin, cin, 3, true);
            let conv2 = EqConv::new(&mut store, rng, &format!("d.b{res}.conv2"), cin, cout, 3, true);
            let shortcut = (cfg.d_variant == Variant::Residual).then(|| {
                EqConv::new(&mut store, rng, &format!("d.b{res}.skip"), cin, cout, 1, false)
            });
            blocks.push(DBlock { conv1, conv2, shortcut });
        }

        let c4 = cfg.channels(4);
        let final_conv = EqConv::new(&mut store, rng, "d.conv4", c4 + 1, c4, 3, true);
        let dense1 = EqLinear::new(&mut store, rng, "d.dense1", c4 * 16, c4, 1.0, 0.0);
        let dense2 = EqLinear::new(&mut store, rng, "d.out", c4, 1, 1.0, 0.0);

        Discriminator {
            cfg: cfg.clone(),
            store,
            frgbs,
            blocks,
            final_conv,
            dense1,
            dense2,
        }
    }

    /// Image [n, 3, r, r] to realness score [n, 1].
    pub fn forward(&self, image: &Tensor) -> Tensor {
        assert_eq!(image.shape().len(), 4, "image must be NCHW");
        assert_eq!(image.shape()[1], 3, "image must have 3 channels");
        assert_eq!(
            image.shape()[2],
            self.cfg.resolution,
            "resolution mismatch: image {:?} vs configured {}",
            image.shape(),
            self.cfg.resolution
        );
        assert_eq!(image.shape()[2], image.shape()[3], "image must be square");
        let levels = self.cfg.levels();
        let skip = self.cfg.d_variant == Variant::Skip;

        let frgb = |idx: usize, y: &Tensor| self.frgbs[idx].forward(&self.store, y, true);

        let mut y = image.clone();
        let mut x = frgb(0, &y);
        for (bi, block) in self.blocks.iter().enumerate() {
            if skip && bi > 0 {
                x = ops::add(&x, &frgb(bi, &y));
            }
            let pre = x.clone();
            let mut h = block.conv1.forward(&self.store, &x, true);
            h = ops::downsample2x(&h);
            h = block.conv2.forward(&self.store, &h, true);
            if let Some(short) = &block.shortcut {
                let s = short.forward(&self.store, &ops::downsample2x(&pre), false);
                h = ops::scale(&ops::add(&h, &s), RESIDUAL_SCALE);
            }
            x = h;
            if skip {
                y = ops::downsample2x(&y);
            }
        }
        if skip && levels > 0 {
            x = ops::add(&x, &frgb(levels, &y));
        }

        let x = minibatch_stddev(&x, self.cfg.mbstd_group);
        let x = self.final_conv.forward(&self.store, &x, true);
        let n = x.shape()[0];
        let flat = ops::reshape(&x, &[n, self.cfg.channels(4) * 16]);
        let h = ops::leaky_relu_scaled(&self.dense1.forward(&self.store, &flat), LRELU_ALPHA);
        self.dense2.forward(&self.store, &h)
    }

    pub fn param_tensors(&self) -> Vec<Tensor> {
        self.store.all_tensors()
    }
}
