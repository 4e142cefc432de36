//! Finite-difference gradient checking.
//!
//! The oracles here deliberately live apart from the autodiff machinery:
//! they evaluate the forward function twice per probed element and compare
//! against analytic gradients. Accumulation happens in f64.

use crate::autograd::backward;
use crate::tensor::{no_grad, Tensor};

/// Central finite differences of a scalar function at `x`.
pub fn finite_diff_grad(f: &mut dyn FnMut(&Tensor) -> f32, x: &Tensor, eps: f32) -> Vec<f64> {
    let base = x.to_vec();
    let mut grad = vec![0.0f64; base.len()];
    for i in 0..base.len() {
        let mut plus = base.clone();
        plus[i] += eps;
        let fp = f(&Tensor::from_vec(x.shape(), plus)) as f64;
        let mut minus = base.clone();
        minus[i] -= eps;
        let fm = f(&Tensor::from_vec(x.shape(), minus)) as f64;
        grad[i] = (fp - fm) / (2.0 * eps as f64);
    }
    grad
}

/// Norm-wise relative error between an analytic and a numeric gradient.
pub fn rel_error(analytic: &[f32], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    let mut diff = 0.0f64;
    let mut norm = 0.0f64;
    for (&a, &n) in analytic.iter().zip(numeric) {
        diff += (a as f64 - n) * (a as f64 - n);
        norm += n * n;
    }
    diff.sqrt() / (norm.sqrt() + 1e-8)
}

/// Checks the analytic gradient of scalar-valued `f` at `x0` against central
/// finite differences. Returns the relative error.
pub fn check_grad(f: impl Fn(&Tensor) -> Tensor, x0: &Tensor, eps: f32) -> f64 {
    let x = x0.tracked();
    let y = f(&x);
    let analytic = backward(&y, &[&x], false).require(&x);
    let mut eval = |t: &Tensor| no_grad(|| f(t).item());
    let numeric = finite_diff_grad(&mut eval, x0, eps);
    rel_error(analytic.data(), &numeric)
}

/// Checks a second-order gradient: with phi(x) = <c, df/dx>, compares the
/// analytic d(phi)/dx (double backprop) against finite differences of the
/// analytic first-order gradient.
pub fn check_grad_second_order(
    f: impl Fn(&Tensor) -> Tensor,
    x0: &Tensor,
    c: &Tensor,
    eps: f32,
) -> f64 {
    assert_eq!(c.numel(), x0.numel());
    let x = x0.tracked();
    let y = f(&x);
    let g1 = backward(&y, &[&x], true).require(&x);
    let phi = crate::ops::sum_all(&crate::ops::mul(&g1, c));
    let analytic = backward(&phi, &[&x], false).require(&x);

    let mut eval_phi = |t: &Tensor| {
        let xt = t.tracked();
        let yt = f(&xt);
        let g = backward(&yt, &[&xt], false).require(&xt);
        let dot: f64 = g
            .data()
            .iter()
            .zip(c.data())
            .map(|(&a, &b)| a as f64 * b as f64)
            .sum();
        dot as f32
    };
    let numeric = finite_diff_grad(&mut eval_phi, x0, eps);
    rel_error(analytic.data(), &numeric)
}

/// One line of the standard gradient-check suite.
pub struct CheckResult {
    pub name: String,
    pub rel_err: f64,
    pub tolerance: f64,
    pub pass: bool,
}

/// Runs first-order checks over every differentiable operation and
/// second-order checks for convolution, matmul and the activation.
/// Tolerances: 1e-3 first order, 1e-2 second order.
pub fn standard_suite(seed: u64) -> Vec<CheckResult> {
    use crate::ops::*;
    use crate::rng::Rng;

    const TOL1: f64 = 1e-3;
    const TOL2: f64 = 1e-2;
    const EPS: f32 = 1e-2;
    let mut rng = Rng::new(seed);
    let mut out: Vec<CheckResult> = Vec::new();

    let probe = |rng: &mut Rng, shape: &[usize]| rng.normal_tensor(shape);
    let scalarize = |t: &Tensor, p: &Tensor| sum_all(&mul(t, p));

    let mut first = |name: &str, f: Box<dyn Fn(&Tensor) -> Tensor>, x0: &Tensor, eps: f32| {
        let rel_err = check_grad(f, x0, eps);
        out.push(CheckResult { name: format!("first-order {name}"), rel_err, tolerance: TOL1, pass: rel_err <= TOL1 });
    };

    let x = probe(&mut rng, &[3, 4]);
    let o = probe(&mut rng, &[3, 4]);
    let p = probe(&mut rng, &[3, 4]);
    {
        let (o, p) = (o.clone(), p.clone());
        first("add", Box::new(move |t| scalarize(&add(t, &o), &p)), &x, EPS);
    }
    {
        let (o, p) = (o.clone(), p.clone());
        first("mul", Box::new(move |t| scalarize(&mul(t, &o), &p)), &x, EPS);
    }
    {
        let p = p.clone();
        first("scale", Box::new(move |t| scalarize(&scale(t, 1.3), &p)), &x, EPS);
    }
    {
        let p = p.clone();
        first("square", Box::new(move |t| scalarize(&square(t), &p)), &x, EPS);
    }
    {
        let p = p.clone();
        first("sigmoid", Box::new(move |t| scalarize(&sigmoid(t), &p)), &x, EPS);
    }
    {
        let p = p.clone();
        first("softplus", Box::new(move |t| scalarize(&softplus(t), &p)), &x, EPS);
    }
    {
        let p = p.clone();
        first("leaky_relu_scaled", Box::new(move |t| scalarize(&leaky_relu_scaled(t, 0.2), &p)), &x, EPS);
    }
    {
        let (o, p) = (o.clone(), p.clone());
        first("lerp", Box::new(move |t| scalarize(&lerp(t, &o, 0.4), &p)), &x, EPS);
    }
    first("mean_all", Box::new(|t| mean_all(t)), &x, EPS);

    let pos = Tensor::from_vec(&[5], vec![0.7, 1.1, 1.9, 2.4, 3.2]);
    let pp = probe(&mut rng, &[5]);
    {
        let pp = pp.clone();
        first("sqrt", Box::new(move |t| scalarize(&sqrt(t), &pp)), &pos, 1e-3);
    }
    {
        let pp = pp.clone();
        first("rsqrt", Box::new(move |t| scalarize(&rsqrt(t), &pp)), &pos, 1e-3);
    }
    first("recip", Box::new(move |t| scalarize(&recip(t), &pp)), &pos, 1e-3);

    let x3 = probe(&mut rng, &[2, 3, 4]);
    {
        let p = probe(&mut rng, &[2, 4, 3]);
        first("permute", Box::new(move |t| scalarize(&permute(t, &[0, 2, 1]), &p)), &x3, EPS);
    }
    {
        let p = probe(&mut rng, &[2, 1, 4]);
        first("sum_axes", Box::new(move |t| scalarize(&sum_axes(t, &[1], true), &p)), &x3, EPS);
    }
    {
        let small = probe(&mut rng, &[1, 3, 1]);
        let p = probe(&mut rng, &[2, 3, 4]);
        first("broadcast_to", Box::new(move |t| scalarize(&broadcast_to(t, &[2, 3, 4]), &p)), &small, EPS);
    }
    {
        let p = probe(&mut rng, &[12, 2]);
        first("reshape", Box::new(move |t| scalarize(&reshape(t, &[12, 2]), &p)), &x3, EPS);
    }
    {
        let p = probe(&mut rng, &[2, 2, 4]);
        first("slice", Box::new(move |t| scalarize(&slice(t, 1, 1, 2), &p)), &x3, EPS);
    }
    {
        let o = probe(&mut rng, &[2, 2, 4]);
        let p = probe(&mut rng, &[2, 5, 4]);
        first("concat", Box::new(move |t| scalarize(&concat(&[t, &o], 1), &p)), &x3, EPS);
    }
    {
        let b = probe(&mut rng, &[2, 4, 5]);
        let p = probe(&mut rng, &[2, 3, 5]);
        first("bmm", Box::new(move |t| scalarize(&bmm(t, &b), &p)), &x3, EPS);
    }
    {
        let m = probe(&mut rng, &[3, 4]);
        let n = probe(&mut rng, &[4, 2]);
        let p = probe(&mut rng, &[3, 2]);
        first("matmul", Box::new(move |t| scalarize(&matmul(t, &n), &p)), &m, EPS);
    }

    let x4 = probe(&mut rng, &[2, 3, 5, 5]);
    {
        let w = probe(&mut rng, &[4, 3, 3, 3]);
        let p = probe(&mut rng, &[2, 4, 5, 5]);
        first("conv2d (input)", Box::new(move |t| scalarize(&conv2d(t, &w, 1), &p)), &x4, EPS);
    }
    {
        let xc = probe(&mut rng, &[2, 3, 5, 5]);
        let w0 = probe(&mut rng, &[4, 3, 3, 3]);
        let p = probe(&mut rng, &[2, 4, 5, 5]);
        first("conv2d (weights)", Box::new(move |t| scalarize(&conv2d(&xc, t, 1), &p)), &w0, EPS);
    }
    {
        let xg = probe(&mut rng, &[2, 4, 4, 4]);
        let wg = probe(&mut rng, &[6, 2, 3, 3]);
        let p = probe(&mut rng, &[2, 6, 4, 4]);
        first("conv2d grouped", Box::new(move |t| scalarize(&conv2d(t, &wg, 2), &p)), &xg, EPS);
        let _ = &xg;
    }
    {
        let u = probe(&mut rng, &[1, 2, 4, 4]);
        let p = probe(&mut rng, &[1, 2, 8, 8]);
        first("bilinear up", Box::new(move |t| scalarize(&upsample2x(t), &p)), &u, EPS);
    }
    {
        let d = probe(&mut rng, &[1, 2, 8, 8]);
        let p = probe(&mut rng, &[1, 2, 4, 4]);
        first("bilinear down", Box::new(move |t| scalarize(&downsample2x(t), &p)), &d, EPS);
    }
    {
        let f0 = probe(&mut rng, &[1, 18, 16]);
        let p = probe(&mut rng, &[1, 2, 4, 4]);
        first("fold", Box::new(move |t| scalarize(&fold(t, 3, 3, 4, 4), &p)), &f0, EPS);
    }
    {
        let xm = probe(&mut rng, &[1, 3, 4, 4]);
        let wm = probe(&mut rng, &[4, 3, 3, 3]);
        let s = rng.uniform_tensor(&[1, 3], 0.5, 2.0);
        let p = probe(&mut rng, &[1, 4, 4, 4]);
        first(
            "modulated_conv2d",
            Box::new(move |t| {
                scalarize(
                    &crate::modconv::modulated_conv2d(t, &wm, &s, true, crate::modconv::DEMOD_EPSILON),
                    &p,
                )
            }),
            &xm,
            EPS,
        );
    }

    // second order: conv2d, matmul, activation
    let mut second = |name: &str, f: Box<dyn Fn(&Tensor) -> Tensor>, x0: &Tensor, c: &Tensor| {
        let rel_err = check_grad_second_order(f, x0, c, EPS);
        out.push(CheckResult { name: format!("second-order {name}"), rel_err, tolerance: TOL2, pass: rel_err <= TOL2 });
    };
    {
        let x0 = probe(&mut rng, &[1, 2, 4, 4]);
        let w = probe(&mut rng, &[3, 2, 3, 3]);
        let c = probe(&mut rng, &[1, 2, 4, 4]);
        second("conv2d (input)", Box::new(move |t| sum_all(&square(&conv2d(t, &w, 1)))), &x0, &c);
    }
    {
        let xc = probe(&mut rng, &[1, 2, 4, 4]);
        let w0 = probe(&mut rng, &[3, 2, 3, 3]);
        let c = probe(&mut rng, &[3, 2, 3, 3]);
        second("conv2d (weights)", Box::new(move |t| sum_all(&square(&conv2d(&xc, t, 1)))), &w0, &c);
    }
    {
        let a0 = probe(&mut rng, &[3, 4]);
        let b = probe(&mut rng, &[4, 3]);
        let c = probe(&mut rng, &[3, 4]);
        second("matmul", Box::new(move |t| sum_all(&square(&matmul(t, &b)))), &a0, &c);
    }
    {
        let x0 = Tensor::from_vec(&[5], vec![-2.1, -0.7, 0.4, 1.3, 2.6]);
        let c = probe(&mut rng, &[5]);
        second(
            "leaky_relu_scaled",
            Box::new(move |t| sum_all(&square(&leaky_relu_scaled(t, 0.2)))),
            &x0,
            &c,
        );
    }
    out
}
