use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use semantic_adapt::tensor::{finite_diff_grad, kernels, Graph, Padding, Shape, Tensor};
use semantic_adapt::Error;

fn random(rng: &mut ChaCha8Rng, shape: Shape) -> Tensor {
    Tensor::from_fn(shape, |_, _, _, _| rng.random_range(-1.0f32..1.0))
}

fn row(values: &[f32]) -> Tensor {
    Tensor::new(Shape::new(1, 1, 1, values.len()), values.to_vec()).unwrap()
}

fn close(a: &Tensor, b: &Tensor, tol: f32) {
    assert_eq!(a.shape(), b.shape());
    for (i, (x, y)) in a.data().iter().zip(b.data()).enumerate() {
        assert!((x - y).abs() <= tol, "index {i}: {x} vs {y}");
    }
}

/// Direct zero-padded convolution, one output element at a time.
fn conv_oracle(x: &Tensor, k: &Tensor, stride: usize, pad: usize) -> Tensor {
    let (xs, ks) = (x.shape(), k.shape());
    let oh = (xs.height + 2 * pad - ks.height) / stride + 1;
    let ow = (xs.width + 2 * pad - ks.width) / stride + 1;
    Tensor::from_fn(Shape::new(xs.batch, ks.batch, oh, ow), |n, o, oy, ox| {
        let mut acc = 0.0f64;
        for c in 0..xs.channels {
            for ky in 0..ks.height {
                for kx in 0..ks.width {
                    let y = (oy * stride + ky) as isize - pad as isize;
                    let xx = (ox * stride + kx) as isize - pad as isize;
                    if y < 0 || xx < 0 || y >= xs.height as isize || xx >= xs.width as isize {
                        continue;
                    }
                    acc += x.at(n, c, y as usize, xx as usize) as f64 * k.at(o, c, ky, kx) as f64;
                }
            }
        }
        acc as f32
    })
}

#[test]
fn conv2d_constant_image_sobel_interior_is_zero() {
    let x = Tensor::full(Shape::new(1, 1, 3, 3), 5.0);
    let sobel_x = Tensor::new(
        Shape::new(1, 1, 3, 3),
        vec![-1.0, 0.0, 1.0, -2.0, 0.0, 2.0, -1.0, 0.0, 1.0],
    )
    .unwrap();
    let y = kernels::conv2d(&x, &sobel_x, 1, Padding::Zero(1)).unwrap();
    assert_eq!(y.at(0, 0, 1, 1), 0.0);
}

#[test]
fn conv2d_scalar_multiply() {
    let y = kernels::conv2d(&Tensor::scalar(2.0), &Tensor::scalar(3.0), 1, Padding::Zero(0)).unwrap();
    assert_eq!(y.data(), &[6.0]);
}

#[test]
fn conv2d_matches_loop_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let x = random(&mut rng, Shape::new(1, 2, 5, 5));
    let k = random(&mut rng, Shape::new(3, 2, 3, 3));
    for (stride, pad) in [(1, 0), (1, 1), (2, 1)] {
        let y = kernels::conv2d(&x, &k, stride, Padding::Zero(pad)).unwrap();
        close(&y, &conv_oracle(&x, &k, stride, pad), 1e-5);
    }
}

#[test]
fn conv2d_reflect_padding_matches_explicitly_padded_input() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let x = random(&mut rng, Shape::new(1, 2, 4, 5));
    let k = random(&mut rng, Shape::new(2, 2, 3, 3));
    let reflect = |i: isize, n: usize| -> usize {
        let n = n as isize;
        let j = if i < 0 { -i } else if i >= n { 2 * n - 2 - i } else { i };
        j as usize
    };
    let padded = Tensor::from_fn(Shape::new(1, 2, 6, 7), |n, c, y, xx| {
        x.at(n, c, reflect(y as isize - 1, 4), reflect(xx as isize - 1, 5))
    });
    let y = kernels::conv2d(&x, &k, 1, Padding::Reflect(1)).unwrap();
    close(&y, &conv_oracle(&padded, &k, 1, 0), 1e-5);
}

#[test]
fn conv2d_shape_errors_name_the_dimension() {
    let x = Tensor::zeros(Shape::new(1, 2, 5, 5));
    let k = Tensor::zeros(Shape::new(1, 3, 3, 3));
    let err = kernels::conv2d(&x, &k, 1, Padding::Zero(0)).unwrap_err();
    assert!(matches!(err, Error::Shape { .. }));
    assert!(err.to_string().contains("channel"), "{err}");
    let k = Tensor::zeros(Shape::new(1, 2, 7, 3));
    let err = kernels::conv2d(&x, &k, 1, Padding::Zero(0)).unwrap_err();
    assert!(err.to_string().contains("height"), "{err}");
}

#[test]
fn conv_transpose_of_single_pixel_with_ones_kernel() {
    let y = kernels::conv_transpose2d(&Tensor::scalar(1.0), &Tensor::full(Shape::new(1, 1, 2, 2), 1.0), 2).unwrap();
    assert_eq!(y.shape(), Shape::new(1, 1, 2, 2));
    assert_eq!(y.data(), &[1.0; 4]);
}

#[test]
fn conv_transpose_rejects_zero_stride() {
    assert!(kernels::conv_transpose2d(&Tensor::scalar(1.0), &Tensor::scalar(1.0), 0).is_err());
}

#[test]
fn conv_transpose_zero_input_gives_zero_output() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let k = random(&mut rng, Shape::new(2, 3, 2, 2));
    let y = kernels::conv_transpose2d(&Tensor::zeros(Shape::new(1, 2, 3, 4)), &k, 2).unwrap();
    assert!(y.data().iter().all(|&v| v == 0.0));
}

#[test]
fn conv_transpose_equals_conv_input_gradient() {
    // For a conv2d with kernel K (Cout, Cin, k, k), the gradient of
    // sum(conv2d(x) ⊙ u) with respect to x is conv_transpose2d(u) with the
    // same kernel read as (Cin→Cout)ᵀ, i.e. layout (Cout, Cin, k, k).
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for (k, stride) in [(2, 2), (3, 1), (4, 2), (3, 2)] {
        let h = (3 - 1) * stride + k;
        let x = random(&mut rng, Shape::new(1, 2, h, h));
        let kernel = random(&mut rng, Shape::new(3, 2, k, k));
        let mut g = Graph::new();
        let xv = g.param(x.clone());
        let kv = g.constant(kernel.clone());
        let y = g.conv2d(xv, kv, stride, Padding::Zero(0)).unwrap();
        assert_eq!(g.shape(y), Shape::new(1, 3, 3, 3));
        let u = random(&mut rng, g.shape(y));
        let uv = g.constant(u.clone());
        let p = g.mul(y, uv).unwrap();
        let loss = g.sum(p).unwrap();
        g.backward(loss).unwrap();
        let expected = kernels::conv_transpose2d(&u, &kernel, stride).unwrap();
        close(g.grad(xv).unwrap(), &expected, 1e-5);
    }
}

fn instance_norm_value(x: &Tensor, scale: f32, shift: f32) -> Tensor {
    let s = x.shape();
    let mut g = Graph::new();
    let xv = g.constant(x.clone());
    let sc = g.constant(Tensor::full(Shape::new(1, s.channels, 1, 1), scale));
    let sh = g.constant(Tensor::full(Shape::new(1, s.channels, 1, 1), shift));
    let y = g.instance_norm(xv, sc, sh, 1e-5).unwrap();
    g.value(y).clone()
}

fn plane_stats(v: &[f32]) -> (f64, f64) {
    let m = v.iter().map(|&a| a as f64).sum::<f64>() / v.len() as f64;
    let var = v.iter().map(|&a| (a as f64 - m).powi(2)).sum::<f64>() / v.len() as f64;
    (m, var)
}

#[test]
fn instance_norm_standardizes_plane() {
    let y = instance_norm_value(&row(&[1.0, 2.0, 3.0, 4.0]), 1.0, 0.0);
    let (m, v) = plane_stats(y.data());
    assert!(m.abs() < 1e-3 && (v - 1.0).abs() < 1e-3, "mean {m} var {v}");
}

#[test]
fn instance_norm_constant_plane_is_zero() {
    let y = instance_norm_value(&row(&[5.0; 4]), 1.0, 0.0);
    assert!(y.data().iter().all(|&v| v == 0.0));
    let y = instance_norm_value(&row(&[5.0; 4]), 2.0, 0.25);
    assert!(y.data().iter().all(|&v| v == 0.25));
}

#[test]
fn instance_norm_matches_loop_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let x = random(&mut rng, Shape::new(2, 3, 4, 5));
    let scale = random(&mut rng, Shape::new(1, 3, 1, 1));
    let shift = random(&mut rng, Shape::new(1, 3, 1, 1));
    let mut g = Graph::new();
    let (xv, sv, hv) = (g.constant(x.clone()), g.constant(scale.clone()), g.constant(shift.clone()));
    let y = g.instance_norm(xv, sv, hv, 1e-5).unwrap();
    let oracle = Tensor::from_fn(x.shape(), |n, c, yy, xx| {
        let plane: Vec<f32> = (0..4).flat_map(|i| (0..5).map(move |j| (i, j))).map(|(i, j)| x.at(n, c, i, j)).collect();
        let (m, v) = plane_stats(&plane);
        (((x.at(n, c, yy, xx) as f64 - m) / (v + 1e-5).sqrt()) * scale.data()[c] as f64 + shift.data()[c] as f64)
            as f32
    });
    close(g.value(y), &oracle, 1e-5);
}

#[test]
fn instance_norm_rejects_bad_epsilon() {
    let mut g = Graph::new();
    let x = g.constant(row(&[1.0, 2.0]));
    let s = g.constant(Tensor::scalar(1.0));
    let b = g.constant(Tensor::scalar(0.0));
    assert!(g.instance_norm(x, s, b, 0.0).is_err());
    assert!(g.instance_norm(x, s, b, -1.0).is_err());
}

#[test]
fn activation_examples() {
    let mut g = Graph::new();
    let a = g.constant(row(&[-1.0]));
    let l = g.leaky_relu(a, 0.2).unwrap();
    assert_eq!(g.value(l).data(), &[-0.2]);
    let z = g.constant(row(&[0.0]));
    let t = g.tanh(z);
    assert_eq!(g.value(t).data(), &[0.0]);
    let r = g.constant(row(&[-2.0, 3.0]));
    let r = g.relu(r);
    assert_eq!(g.value(r).data(), &[0.0, 3.0]);
    assert!(g.leaky_relu(a, 1.0).is_err());
    assert!(g.leaky_relu(a, 0.0).is_err());
}

#[test]
fn relu_kink_takes_negative_branch() {
    let mut g = Graph::new();
    let x = g.param(row(&[0.0, 0.0]));
    let r = g.relu(x);
    let l = g.leaky_relu(x, 0.2).unwrap();
    let s = g.add(r, l).unwrap();
    let loss = g.sum(s).unwrap();
    g.backward(loss).unwrap();
    assert_eq!(g.grad(x).unwrap().data(), &[0.2, 0.2]);
}

#[test]
fn elementwise_examples() {
    let mut g = Graph::new();
    let a = g.constant(row(&[-3.0, 0.0, 2.0]));
    let s = g.sign(a);
    assert_eq!(g.value(s).data(), &[-1.0, 0.0, 1.0]);
    let b = g.constant(row(&[-1.5]));
    let ab = g.abs(b);
    assert_eq!(g.value(ab).data(), &[1.5]);
    let (two, three) = (g.constant(row(&[2.0])), g.constant(row(&[3.0])));
    let m = g.mul(two, three).unwrap();
    assert_eq!(g.value(m).data(), &[6.0]);
    assert!(g.add(a, b).is_err());
}

#[test]
fn sign_blocks_gradient() {
    let mut g = Graph::new();
    let x = g.param(row(&[-3.0, 2.0]));
    let s = g.sign(x);
    assert!(!g.requires_grad(s));
    let p = g.mul(x, s).unwrap();
    let loss = g.sum(p).unwrap();
    g.backward(loss).unwrap();
    // d/dx (x · sign(x)) with sign held constant.
    assert_eq!(g.grad(x).unwrap().data(), &[-1.0, 1.0]);
}

#[test]
fn reduce_examples() {
    let mut g = Graph::new();
    let a = g.constant(row(&[1.0, -2.0, 3.0]));
    let l1 = g.l1_norm(a).unwrap();
    assert_eq!(g.value(l1).item(), 6.0);
    let b = g.constant(row(&[2.0, 4.0]));
    let m = g.mean(b).unwrap();
    assert_eq!(g.value(m).item(), 3.0);
    let empty = g.constant(Tensor::zeros(Shape::new(0, 1, 1, 1)));
    for r in [g.sum(empty), g.mean(empty), g.l1_norm(empty)] {
        assert!(r.is_err());
    }
}

#[test]
fn sum_matches_loop_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let x = random(&mut rng, Shape::new(2, 3, 7, 5));
    let mut g = Graph::new();
    let v = g.constant(x.clone());
    let s = g.sum(v).unwrap();
    let mut acc = 0.0f64;
    for n in 0..2 {
        for c in 0..3 {
            for y in 0..7 {
                for xx in 0..5 {
                    acc += x.at(n, c, y, xx) as f64;
                }
            }
        }
    }
    assert!((g.value(s).item() as f64 - acc).abs() < 1e-5);
}

#[test]
fn resize_examples() {
    let one_hot = Tensor::from_fn(Shape::new(1, 2, 2, 2), |_, c, y, x| ((y + x) % 2 == c) as u8 as f32);
    let up = kernels::resize_nearest(&one_hot, 4, 4).unwrap();
    for c in 0..2 {
        for y in 0..4 {
            for x in 0..4 {
                assert_eq!(up.at(0, c, y, x), one_hot.at(0, c, y / 2, x / 2));
            }
        }
    }
    let same = kernels::resize_nearest(&one_hot, 2, 2).unwrap();
    assert_eq!(same.bits(), one_hot.bits());

    let src = Tensor::from_fn(Shape::new(1, 1, 4, 4), |_, _, y, x| (y * 4 + x) as f32);
    let down = kernels::resize_nearest(&src, 2, 2).unwrap();
    let oracle = Tensor::from_fn(Shape::new(1, 1, 2, 2), |_, _, y, x| src.at(0, 0, y * 4 / 2, x * 4 / 2));
    assert_eq!(down, oracle);
    assert!(kernels::resize_nearest(&src, 0, 2).is_err());
}

#[test]
fn backward_examples() {
    let mut g = Graph::new();
    let x = g.param(row(&[1.0, 2.0]));
    let y = g.mul_scalar(x, 2.0);
    let loss = g.sum(y).unwrap();
    g.backward(loss).unwrap();
    assert_eq!(g.grad(x).unwrap().data(), &[2.0, 2.0]);

    let mut g = Graph::new();
    let x = g.param(row(&[3.0, -4.0]));
    let loss = g.l1_norm(x).unwrap();
    g.backward(loss).unwrap();
    assert_eq!(g.grad(x).unwrap().data(), &[1.0, -1.0]);
}

#[test]
fn backward_twice_is_an_error() {
    let mut g = Graph::new();
    let x = g.param(row(&[1.0]));
    let loss = g.sum(x).unwrap();
    g.backward(loss).unwrap();
    assert!(matches!(g.backward(loss), Err(Error::BackwardTwice)));
}

#[test]
fn backward_requires_scalar_loss() {
    let mut g = Graph::new();
    let x = g.param(row(&[1.0, 2.0]));
    assert!(matches!(g.backward(x), Err(Error::NonScalarLoss(_))));
}

#[test]
fn finite_diff_examples() {
    let squares = |t: &Tensor| t.data().iter().map(|&v| (v as f64).powi(2)).sum::<f64>();
    let g = finite_diff_grad(squares, &row(&[3.0]), 1e-3).unwrap();
    assert!((g.data()[0] - 6.0).abs() < 1e-2);
    let l1 = |t: &Tensor| t.data().iter().map(|&v| (v as f64).abs()).sum::<f64>();
    let g = finite_diff_grad(l1, &row(&[2.0]), 1e-3).unwrap();
    assert!((g.data()[0] - 1.0).abs() < 1e-3);
    assert!(finite_diff_grad(l1, &row(&[2.0]), 0.0).is_err());
}

#[test]
fn composite_graph_matches_finite_differences() {
    use semantic_adapt::verify::{run_gradcheck, GradCheckOptions};
    let rows = run_gradcheck(&GradCheckOptions {
        filter: Some("conv_in_leaky_l1".into()),
        ..Default::default()
    })
    .unwrap();
    assert_eq!(rows.len(), 1);
    assert!(rows[0].passed, "{}", rows[0].format());
}

#[test]
fn zero_kernel_gives_zero_output() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let x = random(&mut rng, Shape::new(2, 3, 6, 7));
    for padding in [Padding::Zero(1), Padding::Reflect(2)] {
        let y = kernels::conv2d(&x, &Tensor::zeros(Shape::new(4, 3, 3, 3)), 2, padding).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));
    }
}

#[test]
fn forward_ops_are_bitwise_deterministic() {
    let run = || {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let x = random(&mut rng, Shape::new(1, 3, 8, 8));
        let k = random(&mut rng, Shape::new(4, 3, 4, 4));
        let kt = random(&mut rng, Shape::new(4, 2, 2, 2));
        let mut g = Graph::new();
        let (xv, kv, ktv) = (g.param(x), g.param(k), g.param(kt));
        let s = g.constant(Tensor::full(Shape::new(1, 4, 1, 1), 1.0));
        let b = g.constant(Tensor::zeros(Shape::new(1, 4, 1, 1)));
        let y = g.conv2d(xv, kv, 2, Padding::Zero(1)).unwrap();
        let y = g.instance_norm(y, s, b, 1e-5).unwrap();
        let y = g.leaky_relu(y, 0.2).unwrap();
        let y = g.conv_transpose2d(y, ktv, 2).unwrap();
        let y = g.tanh(y);
        let loss = g.l1_norm(y).unwrap();
        g.backward(loss).unwrap();
        (g.value(y).bits(), g.grad(xv).unwrap().bits(), g.grad(kv).unwrap().bits())
    };
    assert_eq!(run(), run());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn resize_preserves_one_hot(
        seed in any::<u64>(),
        classes in 1usize..5,
        h in 1usize..9, w in 1usize..9,
        th in 1usize..17, tw in 1usize..17,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let labels: Vec<usize> = (0..h * w).map(|_| rng.random_range(0..classes)).collect();
        let one_hot = Tensor::from_fn(Shape::new(1, classes, h, w), |_, c, y, x| (labels[y * w + x] == c) as u8 as f32);
        let out = kernels::resize_nearest(&one_hot, th, tw).unwrap();
        for y in 0..th {
            for x in 0..tw {
                let col: Vec<f32> = (0..classes).map(|c| out.at(0, c, y, x)).collect();
                prop_assert!(col.iter().all(|&v| v == 0.0 || v == 1.0));
                prop_assert_eq!(col.iter().sum::<f32>(), 1.0);
            }
        }
    }

    #[test]
    fn instance_norm_moments(seed in any::<u64>(), c in 1usize..4, h in 2usize..7, w in 2usize..7) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = Tensor::from_fn(Shape::new(1, c, h, w), |_, _, _, _| rng.random_range(-3.0f32..3.0));
        let y = instance_norm_value(&x, 1.0, 0.0);
        for ch in 0..c {
            let (m, v) = plane_stats(y.plane(0, ch).data());
            let (_, xv) = plane_stats(x.plane(0, ch).data());
            prop_assume!(xv > 1e-3);
            prop_assert!(m.abs() < 1e-4, "mean {}", m);
            prop_assert!((v - 1.0).abs() < 1e-2, "var {}", v);
        }
    }

    #[test]
    fn forward_values_stay_finite(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = Tensor::from_fn(Shape::new(1, 2, 6, 6), |_, _, _, _| rng.random_range(-1e3f32..1e3));
        let k = Tensor::from_fn(Shape::new(2, 2, 3, 3), |_, _, _, _| rng.random_range(-1.0f32..1.0));
        let mut g = Graph::new();
        let (xv, kv) = (g.constant(x), g.constant(k));
        let s = g.constant(Tensor::full(Shape::new(1, 2, 1, 1), 1.0));
        let b = g.constant(Tensor::zeros(Shape::new(1, 2, 1, 1)));
        let y = g.conv2d(xv, kv, 1, Padding::Reflect(1)).unwrap();
        let y = g.instance_norm(y, s, b, 1e-5).unwrap();
        let y = g.tanh(y);
        prop_assert!(g.value(y).is_finite());
    }
}
