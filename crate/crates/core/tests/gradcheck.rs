//! Finite-difference verification of every differentiable operation, plus
//! the documented behavior of the resampling and activation primitives.

use sg2m_core::check::{check_grad, check_grad_second_order};
use sg2m_core::ops::*;
use sg2m_core::{no_grad, Rng, Tensor};

const FIRST_ORDER_TOL: f64 = 1e-3;
const SECOND_ORDER_TOL: f64 = 1e-2;
const EPS: f32 = 1e-2;

fn randn(rng: &mut Rng, shape: &[usize]) -> Tensor {
    rng.normal_tensor(shape)
}

/// Composes the op under test into a smooth scalar so that FD is meaningful.
fn scalarize(t: &Tensor, probe: &Tensor) -> Tensor {
    sum_all(&mul(t, probe))
}

#[test]
fn first_order_elementwise_ops() {
    let mut rng = Rng::new(100);
    let x0 = randn(&mut rng, &[3, 4]);
    let other = randn(&mut rng, &[3, 4]);
    let probe = randn(&mut rng, &[3, 4]);

    let cases: Vec<(&str, Box<dyn Fn(&Tensor) -> Tensor>)> = vec![
        ("add", Box::new({
            let o = other.clone();
            let p = probe.clone();
            move |x: &Tensor| scalarize(&add(x, &o), &p)
        })),
        ("mul", Box::new({
            let o = other.clone();
            let p = probe.clone();
            move |x: &Tensor| scalarize(&mul(x, &o), &p)
        })),
        ("scale", Box::new({
            let p = probe.clone();
            move |x: &Tensor| scalarize(&scale(x, -1.7), &p)
        })),
        ("add_const", Box::new({
            let p = probe.clone();
            move |x: &Tensor| scalarize(&add_const(x, 0.3), &p)
        })),
        ("square", Box::new({
            let p = probe.clone();
            move |x: &Tensor| scalarize(&square(x), &p)
        })),
        ("sigmoid", Box::new({
            let p = probe.clone();
            move |x: &Tensor| scalarize(&sigmoid(x), &p)
        })),
        ("softplus", Box::new({
            let p = probe.clone();
            move |x: &Tensor| scalarize(&softplus(x), &p)
        })),
        ("leaky_relu_scaled", Box::new({
            let p = probe.clone();
            move |x: &Tensor| scalarize(&leaky_relu_scaled(x, 0.2), &p)
        })),
        ("lerp", Box::new({
            let o = other.clone();
            let p = probe.clone();
            move |x: &Tensor| scalarize(&lerp(x, &o, 0.3), &p)
        })),
    ];
    for (name, f) in cases {
        let err = check_grad(f, &x0, EPS);
        assert!(err <= FIRST_ORDER_TOL, "{name}: rel err {err}");
    }
}

#[test]
fn first_order_positive_domain_ops() {
    let mut rng = Rng::new(101);
    // keep inputs well away from zero
    let x0 = Tensor::from_vec(&[6], (0..6).map(|i| 0.8 + 0.37 * i as f32).collect());
    let probe = randn(&mut rng, &[6]);
    for (name, f) in [
        ("sqrt", sqrt as fn(&Tensor) -> Tensor),
        ("rsqrt", rsqrt),
        ("recip", recip),
    ] {
        let p = probe.clone();
        let err = check_grad(move |x| scalarize(&f(x), &p), &x0, 1e-3);
        assert!(err <= FIRST_ORDER_TOL, "{name}: rel err {err}");
    }
}

#[test]
fn first_order_shape_ops() {
    let mut rng = Rng::new(102);
    let x0 = randn(&mut rng, &[2, 3, 4]);

    let p = randn(&mut rng, &[4, 6]);
    let err = check_grad(move |x| scalarize(&reshape(x, &[4, 6]), &p), &x0, EPS);
    assert!(err <= FIRST_ORDER_TOL, "reshape: {err}");

    let p = randn(&mut rng, &[2, 4, 3]);
    let err = check_grad(move |x| scalarize(&permute(x, &[0, 2, 1]), &p), &x0, EPS);
    assert!(err <= FIRST_ORDER_TOL, "permute: {err}");

    let p = randn(&mut rng, &[2, 1, 4]);
    let err = check_grad(move |x| scalarize(&sum_axes(x, &[1], true), &p), &x0, EPS);
    assert!(err <= FIRST_ORDER_TOL, "sum_axes: {err}");

    let small = randn(&mut rng, &[1, 3, 1]);
    let p = randn(&mut rng, &[2, 3, 4]);
    let err = check_grad(move |x| scalarize(&broadcast_to(x, &[2, 3, 4]), &p), &small, EPS);
    assert!(err <= FIRST_ORDER_TOL, "broadcast_to: {err}");

    let p = randn(&mut rng, &[2, 2, 4]);
    let err = check_grad(move |x| scalarize(&slice(x, 1, 1, 2), &p), &x0, EPS);
    assert!(err <= FIRST_ORDER_TOL, "slice: {err}");

    let other = randn(&mut rng, &[2, 2, 4]);
    let p = randn(&mut rng, &[2, 5, 4]);
    let err = check_grad(move |x| scalarize(&concat(&[x, &other], 1), &p), &x0, EPS);
    assert!(err <= FIRST_ORDER_TOL, "concat: {err}");

    let err = check_grad(|x| mean_all(x), &x0, EPS);
    assert!(err <= FIRST_ORDER_TOL, "mean_all: {err}");
}

#[test]
fn first_order_linear_algebra() {
    let mut rng = Rng::new(103);

    // bmm, gradient w.r.t. lhs and rhs including batch broadcast
    let a0 = randn(&mut rng, &[2, 3, 4]);
    let b = randn(&mut rng, &[2, 4, 5]);
    let p = randn(&mut rng, &[2, 3, 5]);
    let b1 = b.clone();
    let p1 = p.clone();
    let err = check_grad(move |x| scalarize(&bmm(x, &b1), &p1), &a0, EPS);
    assert!(err <= FIRST_ORDER_TOL, "bmm lhs: {err}");

    let a = randn(&mut rng, &[2, 3, 4]);
    let b0 = randn(&mut rng, &[1, 4, 5]);
    let p2 = p.clone();
    let err = check_grad(move |x| scalarize(&bmm(&a, &broadcast_to(x, &[1, 4, 5])), &p2), &b0, EPS);
    assert!(err <= FIRST_ORDER_TOL, "bmm rhs broadcast: {err}");

    let m0 = randn(&mut rng, &[3, 4]);
    let n = randn(&mut rng, &[4, 2]);
    let p = randn(&mut rng, &[3, 2]);
    let err = check_grad(move |x| scalarize(&matmul(x, &n), &p), &m0, EPS);
    assert!(err <= FIRST_ORDER_TOL, "matmul: {err}");
}

#[test]
fn first_order_conv_and_resample() {
    let mut rng = Rng::new(104);

    let x0 = randn(&mut rng, &[2, 3, 5, 5]);
    let w = randn(&mut rng, &[4, 3, 3, 3]);
    let p = randn(&mut rng, &[2, 4, 5, 5]);
    let w1 = w.clone();
    let p1 = p.clone();
    let err = check_grad(move |x| scalarize(&conv2d(x, &w1, 1), &p1), &x0, EPS);
    assert!(err <= FIRST_ORDER_TOL, "conv2d input: {err}");

    let x = randn(&mut rng, &[2, 3, 5, 5]);
    let w0 = randn(&mut rng, &[4, 3, 3, 3]);
    let err = check_grad(move |wt| scalarize(&conv2d(&x, wt, 1), &p), &w0, EPS);
    assert!(err <= FIRST_ORDER_TOL, "conv2d weights: {err}");

    // grouped conv, gradient w.r.t. both
    let xg0 = randn(&mut rng, &[2, 4, 4, 4]);
    let wg = randn(&mut rng, &[6, 2, 3, 3]);
    let pg = randn(&mut rng, &[2, 6, 4, 4]);
    let wg1 = wg.clone();
    let pg1 = pg.clone();
    let err = check_grad(move |x| scalarize(&conv2d(x, &wg1, 2), &pg1), &xg0, EPS);
    assert!(err <= FIRST_ORDER_TOL, "grouped conv input: {err}");
    let xg = randn(&mut rng, &[2, 4, 4, 4]);
    let err = check_grad(move |wt| scalarize(&conv2d(&xg, wt, 2), &pg), &wg, EPS);
    assert!(err <= FIRST_ORDER_TOL, "grouped conv weights: {err}");

    let u0 = randn(&mut rng, &[1, 2, 4, 4]);
    let p = randn(&mut rng, &[1, 2, 8, 8]);
    let err = check_grad(move |x| scalarize(&upsample2x(x), &p), &u0, EPS);
    assert!(err <= FIRST_ORDER_TOL, "upsample2x: {err}");

    let d0 = randn(&mut rng, &[1, 2, 8, 8]);
    let p = randn(&mut rng, &[1, 2, 4, 4]);
    let err = check_grad(move |x| scalarize(&downsample2x(x), &p), &d0, EPS);
    assert!(err <= FIRST_ORDER_TOL, "downsample2x: {err}");

    let f0 = randn(&mut rng, &[1, 2 * 9, 16]);
    let p = randn(&mut rng, &[1, 2, 4, 4]);
    let err = check_grad(move |x| scalarize(&fold(x, 3, 3, 4, 4), &p), &f0, EPS);
    assert!(err <= FIRST_ORDER_TOL, "fold: {err}");
}

#[test]
fn second_order_conv_matmul_activation() {
    let mut rng = Rng::new(105);

    // conv2d: scalar = sum(conv(x, w)^2), check d2/dx2
    let x0 = randn(&mut rng, &[1, 2, 4, 4]);
    let w = randn(&mut rng, &[3, 2, 3, 3]);
    let c = randn(&mut rng, &[1, 2, 4, 4]);
    let w1 = w.clone();
    let err = check_grad_second_order(
        move |x| sum_all(&square(&conv2d(x, &w1, 1))),
        &x0,
        &c,
        EPS,
    );
    assert!(err <= SECOND_ORDER_TOL, "conv2d second order (input): {err}");

    let x = randn(&mut rng, &[1, 2, 4, 4]);
    let w0 = randn(&mut rng, &[3, 2, 3, 3]);
    let c = randn(&mut rng, &[3, 2, 3, 3]);
    let err = check_grad_second_order(move |wt| sum_all(&square(&conv2d(&x, wt, 1))), &w0, &c, EPS);
    assert!(err <= SECOND_ORDER_TOL, "conv2d second order (weights): {err}");

    // matmul
    let a0 = randn(&mut rng, &[3, 4]);
    let b = randn(&mut rng, &[4, 3]);
    let c = randn(&mut rng, &[3, 4]);
    let err = check_grad_second_order(move |x| sum_all(&square(&matmul(x, &b))), &a0, &c, EPS);
    assert!(err <= SECOND_ORDER_TOL, "matmul second order: {err}");

    // activation (kept away from the kink at 0)
    let x0 = Tensor::from_vec(&[5], vec![-2.1, -0.7, 0.4, 1.3, 2.6]);
    let c = randn(&mut rng, &[5]);
    let err = check_grad_second_order(
        move |x| sum_all(&square(&leaky_relu_scaled(x, 0.2))),
        &x0,
        &c,
        EPS,
    );
    assert!(err <= SECOND_ORDER_TOL, "leaky second order: {err}");
}

#[test]
fn conv2d_documented_cases() {
    // all-ones 3x3 input and kernel: center sees the full 3x3 window
    let x = Tensor::ones(&[1, 1, 3, 3]);
    let w = Tensor::ones(&[1, 1, 3, 3]);
    let y = conv2d(&x, &w, 1);
    let d = y.to_vec();
    assert_eq!(d[4], 9.0);
    assert_eq!(d[0], 4.0); // corner
    assert_eq!(d[1], 6.0); // edge

    // identity kernel reproduces the input
    let mut rng = Rng::new(5);
    let x = rng.normal_tensor(&[2, 3, 4, 4]);
    let mut wk = vec![0.0f32; 3 * 3 * 9];
    for c in 0..3 {
        wk[(c * 3 + c) * 9 + 4] = 1.0;
    }
    let w = Tensor::from_vec(&[3, 3, 3, 3], wk);
    let y = conv2d(&x, &w, 1);
    assert_eq!(y.to_vec(), x.to_vec());
}

#[test]
fn grouped_conv_equals_independent_convs() {
    // groups=g with block-diagonal weights equals g independent convolutions
    let mut rng = Rng::new(6);
    let (n, g, cpg, h, w) = (2, 3, 2, 5, 5);
    let x = rng.normal_tensor(&[n, g * cpg, h, w]);
    let weights = rng.normal_tensor(&[g * cpg, cpg, 3, 3]);
    let grouped = conv2d(&x, &weights, g);

    for gi in 0..g {
        let xs = slice(&x, 1, gi * cpg, cpg);
        let ws = slice(&weights, 0, gi * cpg, cpg);
        let ys = conv2d(&xs, &ws, 1);
        let full = slice(&grouped, 1, gi * cpg, cpg);
        let max_diff = ys
            .data()
            .iter()
            .zip(full.data())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f32, f32::max);
        assert!(max_diff <= 1e-5, "group {gi}: max diff {max_diff}");
    }
}

#[test]
fn resample_documented_cases() {
    // constant images stay constant in both directions
    let c = Tensor::full(&[1, 1, 4, 4], 0.73);
    let up = upsample2x(&c);
    assert!(up.data().iter().all(|&v| (v - 0.73).abs() < 1e-6), "{:?}", up.data());
    let down = downsample2x(&c);
    assert!(down.data().iter().all(|&v| (v - 0.73).abs() < 1e-6));

    // down(up(x)) == x for constant x
    let roundtrip = downsample2x(&upsample2x(&c));
    assert_eq!(roundtrip.shape(), c.shape());
    for (&a, &b) in roundtrip.data().iter().zip(c.data()) {
        assert!((a - b).abs() < 1e-6);
    }

    // impulse at (0,0) of a 4x4, downsampled: compare against the filter
    // taps evaluated directly, including the border renormalization
    let mut imp = vec![0.0f32; 16];
    imp[0] = 1.0;
    let x = Tensor::from_vec(&[1, 1, 4, 4], imp);
    let y = downsample2x(&x);
    let taps = [1.0f64, 3.0, 3.0, 1.0].map(|v| v / 8.0);
    // oracle: out[j] = sum_t taps[t] * x[2j - 1 + t] / (in-range tap mass),
    // separable over axes; the impulse sits at index 0
    let oracle_1d = |j: usize| -> f64 {
        let mut acc = 0.0;
        let mut mass = 0.0;
        for (t, &tap) in taps.iter().enumerate() {
            let i = 2 * j as isize - 1 + t as isize;
            if (0..4).contains(&i) {
                mass += tap;
                if i == 0 {
                    acc += tap;
                }
            }
        }
        acc / mass
    };
    for jy in 0..2 {
        for jx in 0..2 {
            let expect = (oracle_1d(jy) * oracle_1d(jx)) as f32;
            let got = y.data()[jy * 2 + jx];
            assert!((got - expect).abs() < 1e-7, "({jy},{jx}): {got} vs {expect}");
        }
    }
    // corner: (3/8 / (7/8))^2 = 9/49
    assert!((y.data()[0] - 9.0 / 49.0).abs() < 1e-6);
}

#[test]
#[should_panic(expected = "even spatial")]
fn downsample_rejects_odd_extent() {
    let x = Tensor::ones(&[1, 1, 5, 5]);
    let _ = downsample2x(&x);
}

#[test]
fn leaky_relu_documented_cases() {
    let x = Tensor::from_vec(&[3], vec![0.0, -1.0, 1.0]);
    let y = leaky_relu_scaled(&x, 0.2);
    let gain = (2.0f64 / 1.04).sqrt();
    assert_eq!(y.data()[0], 0.0);
    assert!((y.data()[1] as f64 + 0.2 * gain).abs() < 1e-6);
    assert!((y.data()[1] as f64 + 0.27735).abs() < 1e-4);
    assert!((y.data()[2] as f64 - gain).abs() < 1e-6);
}

#[test]
fn leaky_relu_preserves_unit_variance() {
    // 10^6 standard normal samples keep their signal magnitude (root mean
    // square) within 1% of 1 after activation; the gain is chosen to
    // preserve E[y^2], not the mean-centered variance.
    let mut rng = Rng::new(7);
    let x = rng.normal_tensor(&[1_000_000]);
    let y = no_grad(|| leaky_relu_scaled(&x, 0.2));
    let mut sumsq = 0.0f64;
    for &v in y.data() {
        sumsq += (v as f64) * (v as f64);
    }
    let rms = (sumsq / y.numel() as f64).sqrt();
    assert!((rms - 1.0).abs() < 0.01, "rms {rms}");
}

#[test]
fn trivial_op_identities() {
    let mut rng = Rng::new(8);
    let a = rng.normal_tensor(&[4]);
    let b = rng.normal_tensor(&[4]);
    assert_eq!(lerp(&a, &b, 0.0).to_vec(), a.scale(1.0).to_vec());
    assert_eq!(lerp(&a, &b, 1.0).to_vec(), b.scale(1.0).to_vec());
    let m = mean_all(&Tensor::from_vec(&[3], vec![1.0, 2.0, 3.0]));
    assert_eq!(m.item(), 2.0);
}

#[test]
fn determinism_across_thread_counts() {
    // Tensors are thread-confined, so ship raw data into each pool and
    // rebuild there.
    let mut rng = Rng::new(9);
    let xdata = rng.normal_vec(4 * 16 * 16 * 16);
    let wdata = rng.normal_vec(16 * 16 * 3 * 3);
    let run = {
        let xdata = xdata.clone();
        let wdata = wdata.clone();
        move || {
            let x = Tensor::from_vec(&[4, 16, 16, 16], xdata.clone());
            let w = Tensor::from_vec(&[16, 16, 3, 3], wdata.clone());
            let y = conv2d(&x, &w, 1);
            let s = sum_all(&y);
            (y.to_vec(), s.item())
        }
    };
    let pool1 = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let pool4 = rayon::ThreadPoolBuilder::new().num_threads(4).build().unwrap();
    let (y1, s1) = pool1.install(run.clone());
    let (y4, s4) = pool4.install(run);
    assert_eq!(s1.to_bits(), s4.to_bits(), "reduction order must be fixed");
    assert!(y1.iter().zip(&y4).all(|(a, b)| a.to_bits() == b.to_bits()));
}

#[test]
fn resample_adjoint_property() {
    // <up(x), y> == <x, up^T(y)> is what the backward pass implements;
    // verify the gradient of sum(up(x) * y) against finite differences on a
    // separate random case from the ones above.
    let mut rng = Rng::new(10);
    let x0 = rng.normal_tensor(&[1, 1, 6, 6]);
    let y = rng.normal_tensor(&[1, 1, 12, 12]);
    let err = check_grad(move |x| sum_all(&mul(&upsample2x(x), &y)), &x0, EPS);
    assert!(err <= FIRST_ORDER_TOL, "upsample adjoint: {err}");
}
