//! Non-saturating logistic GAN losses and style mixing.

use crate::ops;
use crate::rng::Rng;
use crate::tensor::Tensor;

/// (loss_D, loss_G) from raw discriminator scores:
/// loss_D = E[softplus(fake)] + E[softplus(-real)],
/// loss_G = E[softplus(-fake)].
pub fn logistic_losses(real_scores: &Tensor, fake_scores: &Tensor) -> (Tensor, Tensor) {
    let loss_d = ops::add(
        &ops::mean_all(&ops::softplus(fake_scores)),
        &ops::mean_all(&ops::softplus(&ops::neg(real_scores))),
    );
    let loss_g = ops::mean_all(&ops::softplus(&ops::neg(fake_scores)));
    (loss_d, loss_g)
}

pub fn d_logistic_loss(real_scores: &Tensor, fake_scores: &Tensor) -> Tensor {
    logistic_losses(real_scores, fake_scores).0
}

pub fn g_logistic_loss(fake_scores: &Tensor) -> Tensor {
    ops::mean_all(&ops::softplus(&ops::neg(fake_scores)))
}

/// Builds per-layer styles [n, L, w_dim] from two mapped latents with the
/// given per-sample crossover points: `Some(t)` takes layers < t from `w1`
/// and the rest from `w2`; `None` broadcasts `w1`.
pub fn mixed_styles_with_cutoffs(
    w1: &Tensor,
    w2: &Tensor,
    layers: usize,
    cutoffs: &[Option<usize>],
) -> Tensor {
    assert_eq!(w1.shape(), w2.shape(), "latent shapes must match");
    let (n, d) = (w1.shape()[0], w1.shape()[1]);
    assert_eq!(cutoffs.len(), n, "one cutoff per sample");
    // constant 0/1 mask selecting w2
    let mut mask = vec![0.0f32; n * layers];
    for (i, c) in cutoffs.iter().enumerate() {
        if let Some(t) = c {
            for l in *t..layers {
                mask[i * layers + l] = 1.0;
            }
        }
    }
    let target = [n, layers, d];
    let m = ops::broadcast_to(&Tensor::from_vec(&[n, layers, 1], mask), &target);
    let w1b = ops::broadcast_to(&ops::reshape(w1, &[n, 1, d]), &target);
    let w2b = ops::broadcast_to(&ops::reshape(w2, &[n, 1, d]), &target);
    let keep = ops::add_const(&ops::scale(&m, -1.0), 1.0);
    ops::add(&ops::mul(&w1b, &keep), &ops::mul(&w2b, &m))
}

/// Style mixing regularization: with probability `mix_prob` per sample,
/// choose a uniform crossover layer; otherwise broadcast `w1`.
pub fn style_mixing(
    w1: &Tensor,
    w2: &Tensor,
    layers: usize,
    mix_prob: f64,
    rng: &mut Rng,
) -> Tensor {
    let n = w1.shape()[0];
    let cutoffs: Vec<Option<usize>> = (0..n)
        .map(|_| {
            if mix_prob > 0.0 && rng.coin(mix_prob) {
                Some(rng.below(layers))
            } else {
                None
            }
        })
        .collect();
    mixed_styles_with_cutoffs(w1, w2, layers, &cutoffs)
}
