use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use semantic_adapt::gradfilters::LabelMap;
use semantic_adapt::networks::{
    discriminator_receptive_dims, one_hot_mask, Container, DiscriminatorConfig, GeneratorConfig, GeneratorNet,
    SemanticDiscriminatorNet, SemanticMask,
};
use semantic_adapt::tensor::{kernels, Graph, Shape, Tensor};

fn image(seed: u64, h: usize, w: usize) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(Shape::new(1, 3, h, w), |_, _, _, _| rng.random_range(-1.0f32..1.0))
}

fn gen(depth: usize, base_width: usize, seed: u64) -> GeneratorNet {
    GeneratorNet::new(GeneratorConfig { depth, base_width, seed }).unwrap()
}

fn disc(blocks: usize, base_width: usize, num_classes: usize, seed: u64) -> SemanticDiscriminatorNet {
    SemanticDiscriminatorNet::new(DiscriminatorConfig {
        blocks,
        base_width,
        num_classes,
        seed,
    })
    .unwrap()
}

/// Parameter count from layer arithmetic.
fn generator_param_formula(depth: usize, base: usize) -> usize {
    let width = |level: usize| base << (level - 1).min(3);
    let mut total = 3 * width(1) * 16 + width(1);
    for level in 2..=depth {
        total += width(level - 1) * width(level) * 16 + 2 * width(level);
    }
    let mut in_ch = width(depth);
    for level in (0..depth).rev() {
        let (out, skip) = if level == 0 { (base, 3) } else { (width(level), width(level)) };
        total += in_ch * out * 4 + 2 * out;
        in_ch = out + skip;
    }
    total + in_ch * 3 * 9 + 3
}

fn discriminator_param_formula(blocks: usize, base: usize, s: usize) -> usize {
    let width = |b: usize| base << (b - 1).min(3);
    let mut total = 0;
    let mut in_ch = 3;
    for b in 1..=blocks {
        total += in_ch * width(b) * 16 + if b == 1 { width(b) } else { 2 * width(b) };
        in_ch = width(b);
    }
    total + in_ch * s * 9 + s
}

#[test]
fn generator_parameter_count() {
    assert_eq!(gen(3, 8, 0).params().count(), 14676);
    for (d, w) in [(2, 4), (3, 8), (4, 16), (5, 8)] {
        assert_eq!(gen(d, w, 0).params().count(), generator_param_formula(d, w), "depth {d} width {w}");
    }
}

#[test]
fn discriminator_parameter_count() {
    for (b, w, s) in [(1, 4, 2), (3, 8, 4), (4, 32, 8), (5, 4, 1)] {
        assert_eq!(disc(b, w, s, 0).params().count(), discriminator_param_formula(b, w, s));
    }
}

#[test]
fn same_seed_gives_identical_parameters() {
    assert_eq!(gen(3, 8, 7).params(), gen(3, 8, 7).params());
    assert_ne!(gen(3, 8, 7).params().fingerprint(), gen(3, 8, 8).params().fingerprint());
    assert_eq!(disc(3, 8, 4, 2).params(), disc(3, 8, 4, 2).params());
}

#[test]
fn generator_rejects_shallow_depth() {
    assert!(GeneratorNet::new(GeneratorConfig {
        depth: 1,
        base_width: 8,
        seed: 0
    })
    .is_err());
}

#[test]
fn generator_preserves_shape_and_range() {
    let g = gen(3, 8, 1);
    let y = g.adapt(&image(0, 32, 64)).unwrap();
    assert_eq!(y.shape(), Shape::new(1, 3, 32, 64));
    assert!(y.data().iter().all(|v| v.abs() <= 1.0));
    assert_eq!(y.bits(), g.adapt(&image(0, 32, 64)).unwrap().bits());
}

#[test]
fn generator_output_saturates_within_bounds() {
    let mut g = gen(2, 4, 3);
    for t in g.params_mut().tensors_mut() {
        *t = t.map(|v| v * 400.0);
    }
    let y = g.adapt(&image(1, 16, 16).map(|v| v * 50.0)).unwrap();
    assert!(y.max_abs() <= 1.0);
}

#[test]
fn generator_is_fully_convolutional() {
    let g = gen(4, 4, 2);
    assert_eq!(g.adapt(&image(0, 64, 128)).unwrap().shape(), Shape::new(1, 3, 64, 128));
    assert_eq!(g.adapt(&image(0, 128, 256)).unwrap().shape(), Shape::new(1, 3, 128, 256));
}

#[test]
fn generator_rejects_indivisible_input() {
    let err = gen(3, 4, 0).adapt(&image(0, 20, 64)).unwrap_err();
    assert!(err.to_string().contains("multiples of 8"), "{err}");
}

#[test]
fn one_hot_examples() {
    let labels = LabelMap::new(1, 2, 2, 2, vec![0, 1, 1, 0]).unwrap();
    let m = one_hot_mask(&labels, 2, 2, 2).unwrap();
    assert_eq!(m.tensor().plane(0, 0).data(), &[1.0, 0.0, 0.0, 1.0]);
    assert_eq!(m.tensor().plane(0, 1).data(), &[0.0, 1.0, 1.0, 0.0]);

    let uniform = LabelMap::uniform(1, 4, 4, 5, 3).unwrap();
    let m = one_hot_mask(&uniform, 5, 4, 4).unwrap();
    for c in 0..5 {
        let want = if c == 3 { 1.0 } else { 0.0 };
        assert!(m.tensor().plane(0, c).data().iter().all(|&v| v == want));
    }
    assert!(one_hot_mask(&uniform, 3, 4, 4).is_err());
}

#[test]
fn one_hot_resize_matches_composition() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let labels = LabelMap::from_fn(1, 8, 8, 4, |_, _, _| rng.random_range(0..4)).unwrap();
    let m = one_hot_mask(&labels, 4, 4, 4).unwrap();
    let full = Tensor::from_fn(Shape::new(1, 4, 8, 8), |_, c, y, x| (labels.at(0, y, x) as usize == c) as u8 as f32);
    assert_eq!(m.tensor(), &kernels::resize_nearest(&full, 4, 4).unwrap());
}

#[test]
fn receptive_dims_examples() {
    assert_eq!(discriminator_receptive_dims(3, 64, 128), (8, 16));
    assert_eq!(discriminator_receptive_dims(0, 37, 5), (37, 5));
    for (b, h, w) in [(1, 9, 13), (2, 16, 20), (3, 33, 64), (4, 64, 128)] {
        let d = disc(b, 4, 2, 0);
        let mut g = Graph::new();
        let bound = d.params().bind(&mut g, false);
        let x = g.constant(image(0, h, w));
        let t = d.trunk(&mut g, &bound, x).unwrap();
        let s = g.shape(t);
        assert_eq!((s.height, s.width), discriminator_receptive_dims(b, h, w));
        assert_eq!(s.channels, 2);
    }
}

/// Raw per-class maps and the masked output for one image.
fn trunk_and_output(d: &SemanticDiscriminatorNet, x: &Tensor, mask: &SemanticMask) -> (Tensor, Tensor) {
    let mut g = Graph::new();
    let bound = d.params().bind(&mut g, false);
    let xv = g.constant(x.clone());
    let t = d.trunk(&mut g, &bound, xv).unwrap();
    let out = d.forward(&mut g, &bound, xv, mask).unwrap();
    (g.value(t).clone(), g.value(out).clone())
}

#[test]
fn sd_forward_selects_class_channel() {
    let d = disc(3, 4, 4, 5);
    let x = image(2, 32, 32);
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let labels = LabelMap::from_fn(1, 32, 32, 4, |_, _, _| rng.random_range(0..4)).unwrap();
    let mask = d.mask_for(&labels).unwrap();
    let (t, out) = trunk_and_output(&d, &x, &mask);
    let s = out.shape();
    assert_eq!(s, Shape::new(1, 1, 4, 4));
    for y in 0..s.height {
        for xx in 0..s.width {
            let class = (0..4).find(|&c| mask.tensor().at(0, c, y, xx) == 1.0).unwrap();
            assert_eq!(out.at(0, 0, y, xx), t.at(0, class, y, xx));
        }
    }

    let uniform = d.mask_for(&LabelMap::uniform(1, 32, 32, 4, 2).unwrap()).unwrap();
    let (t, out) = trunk_and_output(&d, &x, &uniform);
    assert_eq!(out.data(), t.plane(0, 2).data());
}

#[test]
fn sd_forward_single_class_is_plain_patch_output() {
    let d = disc(2, 4, 1, 9);
    let x = image(3, 16, 24);
    let mask = d.mask_for(&LabelMap::uniform(1, 16, 24, 1, 0).unwrap()).unwrap();
    let (t, out) = trunk_and_output(&d, &x, &mask);
    assert_eq!(out.bits(), t.bits());
}

#[test]
fn sd_forward_rejects_mismatched_mask() {
    let d = disc(2, 4, 3, 0);
    let mask = one_hot_mask(&LabelMap::uniform(1, 8, 8, 3, 0).unwrap(), 3, 8, 8).unwrap();
    let mut g = Graph::new();
    let bound = d.params().bind(&mut g, false);
    let x = g.constant(image(0, 16, 16));
    assert!(d.forward(&mut g, &bound, x, &mask).is_err());
}

#[test]
fn gradients_reach_generator_but_not_mask() {
    let gnet = gen(2, 4, 1);
    let d = disc(2, 4, 3, 2);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let labels = LabelMap::from_fn(1, 16, 16, 3, |_, _, _| rng.random_range(0..3)).unwrap();
    let mask = d.mask_for(&labels).unwrap();
    let mut g = Graph::new();
    let gb = gnet.params().bind(&mut g, true);
    let db = d.params().bind(&mut g, false);
    let x = g.constant(image(5, 16, 16));
    let fake = gnet.forward(&mut g, &gb, x).unwrap();
    let score = d.forward(&mut g, &db, fake, &mask).unwrap();
    let loss = g.mean(score).unwrap();
    g.backward(loss).unwrap();
    let grads = gnet.params().take_grads(&mut g, &gb);
    assert!(grads.iter().any(|t| t.max_abs() > 0.0));
    // The mask enters as a constant: no graph node for it requires a gradient,
    // and the discriminator parameters stay frozen too.
    for v in db.vars() {
        assert!(g.grad(*v).is_none());
    }
}

#[test]
fn checkpoint_roundtrip_is_bitwise() {
    let g = gen(3, 4, 11);
    let mut c = Container::new();
    semantic_adapt::networks::store_params(&mut c, "g", g.params());
    let back = Container::from_bytes(&c.to_bytes()).unwrap();
    let mut fresh = gen(3, 4, 0);
    semantic_adapt::networks::restore_params(&back, "g", fresh.params_mut()).unwrap();
    assert_eq!(fresh.params(), g.params());
    let wrong = gen(2, 4, 0);
    let mut c2 = Container::new();
    semantic_adapt::networks::store_params(&mut c2, "g", wrong.params());
    assert!(semantic_adapt::networks::restore_params(&c2, "g", fresh.params_mut()).is_err());
}

fn random_mask(rng: &mut ChaCha8Rng, s: usize, h: usize, w: usize) -> Vec<usize> {
    (0..h * w).map(|_| rng.random_range(0..s)).collect()
}

fn mask_from(classes: &[usize], s: usize, h: usize, w: usize, keep: impl Fn(usize) -> bool) -> SemanticMask {
    let labels = LabelMap::from_fn(1, h, w, s, |_, y, x| classes[y * w + x] as u32).unwrap();
    let full = one_hot_mask(&labels, s, h, w).unwrap().into_tensor();
    let t = Tensor::from_fn(full.shape(), |n, c, y, x| if keep(y * w + x) { full.at(n, c, y, x) } else { 0.0 });
    SemanticMask::from_tensor(t).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn sd_forward_is_mask_linear(seed in any::<u64>(), s in 2usize..5) {
        let d = disc(2, 4, s, seed);
        let x = image(seed ^ 1, 16, 16);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (h, w) = d.output_dims(16, 16);
        let classes = random_mask(&mut rng, s, h, w);
        let split: Vec<bool> = (0..h * w).map(|_| rng.random_bool(0.5)).collect();
        let m1 = mask_from(&classes, s, h, w, |i| split[i]);
        let m2 = mask_from(&classes, s, h, w, |i| !split[i]);
        let all = mask_from(&classes, s, h, w, |_| true);
        let (_, o1) = trunk_and_output(&d, &x, &m1);
        let (_, o2) = trunk_and_output(&d, &x, &m2);
        let (_, o) = trunk_and_output(&d, &x, &all);
        for i in 0..o.numel() {
            prop_assert!((o.data()[i] - (o1.data()[i] + o2.data()[i])).abs() <= 1e-6);
        }
    }

    #[test]
    fn sd_forward_is_class_permutation_invariant(seed in any::<u64>(), s in 2usize..5) {
        let d = disc(2, 4, s, seed);
        let x = image(seed ^ 2, 16, 16);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut perm: Vec<usize> = (0..s).collect();
        for i in (1..s).rev() {
            perm.swap(i, rng.random_range(0..=i));
        }
        let (h, w) = d.output_dims(16, 16);
        let classes = random_mask(&mut rng, s, h, w);
        let permuted: Vec<usize> = classes.iter().map(|&c| perm[c]).collect();

        // Head channel c moves to perm[c].
        let mut d2 = d.clone();
        for name in ["head.weight", "head.bias"] {
            let src = d.params().get(name).unwrap().clone();
            let dst = d2.params_mut().get_mut(name).unwrap();
            let per = src.numel() / s;
            for (c, &pc) in perm.iter().enumerate() {
                dst.data_mut()[pc * per..(pc + 1) * per].copy_from_slice(&src.data()[c * per..(c + 1) * per]);
            }
        }
        let (_, a) = trunk_and_output(&d, &x, &mask_from(&classes, s, h, w, |_| true));
        let (_, b) = trunk_and_output(&d2, &x, &mask_from(&permuted, s, h, w, |_| true));
        prop_assert_eq!(a.bits(), b.bits());
    }
}
