//! Finite-difference gradient checks for every differentiable op, the
//! networks, and the composed generator objective.
//!
//! Each check builds a scalar `Σ w ⊙ op(inputs)` with random constant
//! weights `w`, back-propagates it, and compares against central differences
//! of the same expression. The numeric side runs on a precise graph (f64
//! accumulation in convolutions and final reductions) with every ReLU/abs
//! branch frozen to the one taken at the unperturbed point, so probes that
//! straddle a kink still see the smooth piece the analytic gradient
//! describes.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::gradfilters::{gradient_magnitude_var, sobel_pair, LabelMap};
use crate::losses::{
    cycle_loss, discriminator_loss_ls, generator_adv_loss_ls, generator_objective, soft_grad_loss, LossWeights,
    SoftnessParams,
};
use crate::networks::{DiscriminatorConfig, GeneratorConfig, GeneratorNet, SemanticDiscriminatorNet};
use crate::tensor::{finite_diff_grad, max_relative_error, Graph, Padding, Shape, Tensor, Var};

pub const DEFAULT_CASES: usize = 20;
pub const DEFAULT_STEP: f32 = 1e-3;
pub const DEFAULT_TOLERANCE: f64 = 1e-3;

#[derive(Clone, Debug)]
pub struct GradCheckOptions {
    pub seed: u64,
    pub cases: usize,
    pub step: f32,
    pub tolerance: f64,
    /// Test hook: scale the analytic gradient of this check by 1.5.
    pub corrupt: Option<String>,
    /// Run only checks whose name contains this string.
    pub filter: Option<String>,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            seed: 0,
            cases: DEFAULT_CASES,
            step: DEFAULT_STEP,
            tolerance: DEFAULT_TOLERANCE,
            corrupt: None,
            filter: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckRow {
    pub op: &'static str,
    pub cases: usize,
    pub max_rel_error: f64,
    pub coords: usize,
    pub passed: bool,
}

impl GradCheckRow {
    pub fn format(&self) -> String {
        format!(
            "{:<24} cases={:<3} coords={:<6} max_rel_err={:.3e} {}",
            self.op,
            self.cases,
            self.coords,
            self.max_rel_error,
            if self.passed { "PASS" } else { "FAIL" }
        )
    }
}

/// One differentiable expression with its inputs; `true` marks inputs whose
/// gradient is checked.
pub struct Case<'a> {
    pub inputs: Vec<(Tensor, bool)>,
    pub build: Box<dyn Fn(&mut Graph, &[Var]) -> Result<Var> + 'a>,
}

#[derive(Clone, Copy, Debug, Default)]
pub struct CaseOutcome {
    pub rel_error: f64,
    pub coords: usize,
}

fn bind(g: &mut Graph, inputs: &[(Tensor, bool)]) -> Vec<Var> {
    inputs
        .iter()
        .map(|(t, train)| if *train { g.param(t.clone()) } else { g.constant(t.clone()) })
        .collect()
}

/// Compare analytic and numeric gradients for one case.
pub fn check_case(case: &Case<'_>, rng: &mut ChaCha8Rng, step: f32, corrupt: bool) -> Result<CaseOutcome> {
    let mut g = Graph::new();
    let vars = bind(&mut g, &case.inputs);
    let out = (case.build)(&mut g, &vars)?;
    let out_shape = g.shape(out);
    let weights = Tensor::from_fn(out_shape, |_, _, _, _| rng.random_range(-1.0f32..1.0));
    let pattern = g.kink_signature();
    let w = g.constant(weights.clone());
    let prod = g.mul(out, w)?;
    let loss = g.sum(prod)?;
    g.backward(loss)?;

    let mut outcome = CaseOutcome::default();
    for (idx, (tensor, train)) in case.inputs.iter().enumerate() {
        if !*train {
            continue;
        }
        let mut analytic = g.grad(vars[idx]).cloned().unwrap_or_else(|| Tensor::zeros(tensor.shape()));
        if corrupt {
            analytic = analytic.map(|v| v * 1.5);
        }
        let numeric = finite_diff_grad(
            |probe| {
                let mut inputs = case.inputs.clone();
                inputs[idx].0 = probe.clone();
                let mut pg = Graph::frozen(pattern.clone());
                let pv = bind(&mut pg, &inputs);
                match (case.build)(&mut pg, &pv) {
                    Ok(po) => pg
                        .value_f64(po)
                        .iter()
                        .zip(weights.data())
                        .map(|(&y, &wt)| y * wt as f64)
                        .sum(),
                    Err(_) => f64::NAN,
                }
            },
            tensor,
            step,
        )?;
        let err = if numeric.is_finite() {
            max_relative_error(&analytic, &numeric)
        } else {
            f64::INFINITY
        };
        outcome.rel_error = outcome.rel_error.max(err);
        outcome.coords += tensor.numel();
    }
    Ok(outcome)
}

fn uniform(rng: &mut ChaCha8Rng, shape: Shape, lo: f32, hi: f32) -> Tensor {
    Tensor::from_fn(shape, |_, _, _, _| rng.random_range(lo..hi))
}

/// Values with magnitude in [0.2, 1) and random sign, away from kinks at 0.
fn away_from_zero(rng: &mut ChaCha8Rng, shape: Shape) -> Tensor {
    Tensor::from_fn(shape, |_, _, _, _| {
        let m = rng.random_range(0.2f32..1.0);
        if rng.random_bool(0.5) {
            m
        } else {
            -m
        }
    })
}

fn small_shape(rng: &mut ChaCha8Rng, max_c: usize, lo: usize, hi: usize) -> Shape {
    Shape::new(
        rng.random_range(1..=2),
        rng.random_range(1..=max_c),
        rng.random_range(lo..=hi),
        rng.random_range(lo..=hi),
    )
}

fn random_labels(rng: &mut ChaCha8Rng, n: usize, h: usize, w: usize, classes: usize) -> LabelMap {
    // Blocky maps so boundaries are neither absent nor everywhere.
    let bh = rng.random_range(1..=3);
    let bw = rng.random_range(1..=3);
    let table: Vec<u32> = (0..64).map(|_| rng.random_range(0..classes as u32)).collect();
    LabelMap::from_fn(n, h, w, classes, |b, y, x| table[(b * 7 + (y / bh) * 5 + x / bw) % 64]).expect("in range")
}

type CaseFactory = fn(&mut ChaCha8Rng) -> Case<'static>;

fn unary(x: Tensor, f: fn(&mut Graph, Var) -> Result<Var>) -> Case<'static> {
    Case {
        inputs: vec![(x, true)],
        build: Box::new(move |g, v| f(g, v[0])),
    }
}

fn binary(a: Tensor, b: Tensor, f: fn(&mut Graph, Var, Var) -> Result<Var>) -> Case<'static> {
    Case {
        inputs: vec![(a, true), (b, true)],
        build: Box::new(move |g, v| f(g, v[0], v[1])),
    }
}

fn conv_case(rng: &mut ChaCha8Rng, reflect: bool) -> Case<'static> {
    let s = small_shape(rng, 3, 3, 6);
    let k = rng.random_range(1..=3);
    let o = rng.random_range(1..=3);
    let stride = rng.random_range(1..=2);
    let pad = rng.random_range(if reflect { 1 } else { 0 }..=1);
    let padding = if reflect { Padding::Reflect(pad) } else { Padding::Zero(pad) };
    let x = uniform(rng, s, -1.0, 1.0);
    let kernel = uniform(rng, Shape::new(o, s.channels, k, k), -1.0, 1.0);
    Case {
        inputs: vec![(x, true), (kernel, true)],
        build: Box::new(move |g, v| g.conv2d(v[0], v[1], stride, padding)),
    }
}

fn checks() -> Vec<(&'static str, CaseFactory)> {
    vec![
        ("conv2d_zero_pad", |rng| conv_case(rng, false)),
        ("conv2d_reflect_pad", |rng| conv_case(rng, true)),
        ("conv_transpose2d", |rng| {
            let s = small_shape(rng, 3, 1, 4);
            let k = rng.random_range(1..=3);
            let co = rng.random_range(1..=3);
            let stride = rng.random_range(1..=2);
            let x = uniform(rng, s, -1.0, 1.0);
            let kernel = uniform(rng, Shape::new(s.channels, co, k, k), -1.0, 1.0);
            Case {
                inputs: vec![(x, true), (kernel, true)],
                build: Box::new(move |g, v| g.conv_transpose2d(v[0], v[1], stride)),
            }
        }),
        ("instance_norm", |rng| {
            let s = small_shape(rng, 3, 2, 5);
            let x = uniform(rng, s, -1.0, 1.0);
            let cs = Shape::new(1, s.channels, 1, 1);
            let scale = uniform(rng, cs, 0.5, 1.5);
            let shift = uniform(rng, cs, -0.5, 0.5);
            Case {
                inputs: vec![(x, true), (scale, true), (shift, true)],
                build: Box::new(move |g, v| g.instance_norm(v[0], v[1], v[2], 1e-5)),
            }
        }),
        ("relu", |rng| {
            let s = small_shape(rng, 3, 1, 5);
            unary(away_from_zero(rng, s), |g, x| Ok(g.relu(x)))
        }),
        ("leaky_relu", |rng| {
            let s = small_shape(rng, 3, 1, 5);
            unary(away_from_zero(rng, s), |g, x| g.leaky_relu(x, 0.2))
        }),
        ("tanh", |rng| {
            let s = small_shape(rng, 3, 1, 5);
            unary(uniform(rng, s, -2.0, 2.0), |g, x| Ok(g.tanh(x)))
        }),
        ("add", |rng| {
            let s = small_shape(rng, 3, 1, 5);
            binary(uniform(rng, s, -1.0, 1.0), uniform(rng, s, -1.0, 1.0), |g, a, b| g.add(a, b))
        }),
        ("sub", |rng| {
            let s = small_shape(rng, 3, 1, 5);
            binary(uniform(rng, s, -1.0, 1.0), uniform(rng, s, -1.0, 1.0), |g, a, b| g.sub(a, b))
        }),
        ("mul", |rng| {
            let s = small_shape(rng, 3, 1, 5);
            binary(uniform(rng, s, -1.0, 1.0), uniform(rng, s, -1.0, 1.0), |g, a, b| g.mul(a, b))
        }),
        ("abs", |rng| {
            let s = small_shape(rng, 3, 1, 5);
            unary(away_from_zero(rng, s), |g, x| Ok(g.abs(x)))
        }),
        ("scalar_affine", |rng| {
            let s = small_shape(rng, 3, 1, 5);
            unary(uniform(rng, s, -1.0, 1.0), |g, x| {
                let y = g.mul_scalar(x, -1.75);
                Ok(g.add_scalar(y, 0.3))
            })
        }),
        ("add_bias", |rng| {
            let s = small_shape(rng, 3, 1, 5);
            let x = uniform(rng, s, -1.0, 1.0);
            let b = uniform(rng, Shape::new(1, s.channels, 1, 1), -1.0, 1.0);
            binary(x, b, |g, a, b| g.add_bias(a, b))
        }),
        ("sum", |rng| {
            let s = small_shape(rng, 3, 1, 5);
            unary(uniform(rng, s, -1.0, 1.0), |g, x| g.sum(x))
        }),
        ("mean", |rng| {
            let s = small_shape(rng, 3, 1, 5);
            unary(uniform(rng, s, -1.0, 1.0), |g, x| g.mean(x))
        }),
        ("l1_norm", |rng| {
            let s = small_shape(rng, 3, 1, 5);
            unary(away_from_zero(rng, s), |g, x| g.l1_norm(x))
        }),
        ("resize_nearest", |rng| {
            let s = small_shape(rng, 3, 1, 6);
            let th = rng.random_range(1..=8);
            let tw = rng.random_range(1..=8);
            Case {
                inputs: vec![(uniform(rng, s, -1.0, 1.0), true)],
                build: Box::new(move |g, v| g.resize_nearest(v[0], th, tw)),
            }
        }),
        ("concat_channels", |rng| {
            let s = small_shape(rng, 3, 1, 4);
            let s2 = Shape::new(s.batch, rng.random_range(1..=3), s.height, s.width);
            binary(uniform(rng, s, -1.0, 1.0), uniform(rng, s2, -1.0, 1.0), |g, a, b| {
                let c = g.concat_channels(&[a, b, a])?;
                Ok(c)
            })
        }),
        ("sum_channels", |rng| {
            let s = small_shape(rng, 4, 1, 5);
            unary(uniform(rng, s, -1.0, 1.0), |g, x| Ok(g.sum_channels(x)))
        }),
        ("gradient_magnitude", |rng| {
            let s = small_shape(rng, 3, 3, 6);
            unary(uniform(rng, s, -1.0, 1.0), |g, x| gradient_magnitude_var(g, x, &sobel_pair()))
        }),
        ("soft_grad_loss", |rng| {
            let s = small_shape(rng, 3, 3, 6);
            let labels = random_labels(rng, s.batch, s.height, s.width, 3);
            let alpha = rng.random_range(0.0f32..1.0);
            let p = SoftnessParams::new(alpha, 1.0 - alpha).expect("valid by construction");
            let x = uniform(rng, s, -1.0, 1.0);
            let xa = uniform(rng, s, -1.0, 1.0);
            Case {
                inputs: vec![(x, false), (xa, true)],
                build: Box::new(move |g, v| soft_grad_loss(g, v[0], v[1], &labels, p)),
            }
        }),
        ("discriminator_loss_ls", |rng| {
            let s = small_shape(rng, 1, 1, 4);
            binary(uniform(rng, s, -1.0, 2.0), uniform(rng, s, -1.0, 2.0), discriminator_loss_ls)
        }),
        ("generator_adv_loss_ls", |rng| {
            let s = small_shape(rng, 1, 1, 4);
            unary(uniform(rng, s, -1.0, 2.0), generator_adv_loss_ls)
        }),
        ("cycle_loss", |rng| {
            let s = small_shape(rng, 3, 1, 4);
            let v = uniform(rng, s, -1.0, 1.0);
            let r = uniform(rng, s, -1.0, 1.0);
            let vc = v.map(|a| a + 0.5);
            let rc = r.map(|a| a - 0.5);
            let off = away_from_zero(rng, s);
            let vc = Tensor::new(s, vc.data().iter().zip(off.data()).map(|(a, o)| a + 0.3 * o).collect()).expect("s");
            Case {
                inputs: vec![(v, true), (vc, true), (r, true), (rc, true)],
                build: Box::new(|g, x| cycle_loss(g, x[0], x[1], x[2], x[3])),
            }
        }),
        ("conv_in_leaky_l1", |rng| {
            let s = small_shape(rng, 3, 3, 6);
            let o = rng.random_range(1..=3);
            let x = uniform(rng, s, -1.0, 1.0);
            let k = uniform(rng, Shape::new(o, s.channels, 3, 3), -1.0, 1.0);
            let cs = Shape::new(1, o, 1, 1);
            let scale = uniform(rng, cs, 0.5, 1.5);
            let shift = uniform(rng, cs, -0.5, 0.5);
            Case {
                inputs: vec![(x, true), (k, true), (scale, true), (shift, true)],
                build: Box::new(|g, v| {
                    let y = g.conv2d(v[0], v[1], 1, Padding::Zero(1))?;
                    let y = g.instance_norm(y, v[2], v[3], 1e-5)?;
                    let y = g.leaky_relu(y, 0.2)?;
                    g.l1_norm(y)
                }),
            }
        }),
        ("generator_forward", |rng| network_case(rng, NetworkCase::Generator)),
        ("sd_forward", |rng| network_case(rng, NetworkCase::Discriminator)),
        ("generator_objective", |rng| network_case(rng, NetworkCase::Objective)),
    ]
}

enum NetworkCase {
    Generator,
    Discriminator,
    Objective,
}

fn toy_gen(rng: &mut ChaCha8Rng) -> GeneratorNet {
    GeneratorNet::new(GeneratorConfig {
        depth: 2,
        base_width: 2,
        seed: rng.random(),
    })
    .expect("valid toy config")
}

fn toy_disc(rng: &mut ChaCha8Rng, classes: usize) -> SemanticDiscriminatorNet {
    SemanticDiscriminatorNet::new(DiscriminatorConfig {
        blocks: 1,
        base_width: 2,
        num_classes: classes,
        seed: rng.random(),
    })
    .expect("valid toy config")
}

/// Scale network weights up from the 0.02 init so the check is not
/// dominated by near-zero activations.
fn scaled(params: &crate::networks::ParamSet, factor: f32) -> Vec<Tensor> {
    params
        .iter()
        .map(|(name, t)| if name.ends_with("weight") { t.map(|v| v * factor) } else { t.clone() })
        .collect()
}

fn network_case(rng: &mut ChaCha8Rng, which: NetworkCase) -> Case<'static> {
    let (h, w) = (16, 16);
    let classes = 3;
    let img = |rng: &mut ChaCha8Rng| uniform(rng, Shape::new(1, 3, h, w), -1.0, 1.0);
    match which {
        NetworkCase::Generator => {
            let gen = toy_gen(rng);
            let mut inputs: Vec<(Tensor, bool)> = scaled(gen.params(), 10.0).into_iter().map(|t| (t, true)).collect();
            inputs.push((img(rng), true));
            Case {
                inputs,
                build: Box::new(move |g, v| {
                    let (params, image) = v.split_at(v.len() - 1);
                    gen.forward(g, &crate::networks::BoundParams::from_vars(params.to_vec()), image[0])
                }),
            }
        }
        NetworkCase::Discriminator => {
            let d = toy_disc(rng, classes);
            let labels = random_labels(rng, 1, h, w, classes);
            let mask = d.mask_for(&labels).expect("labels in range");
            let mut inputs: Vec<(Tensor, bool)> = scaled(d.params(), 10.0).into_iter().map(|t| (t, true)).collect();
            inputs.push((img(rng), true));
            Case {
                inputs,
                build: Box::new(move |g, v| {
                    let (params, image) = v.split_at(v.len() - 1);
                    d.forward(g, &crate::networks::BoundParams::from_vars(params.to_vec()), image[0], &mask)
                }),
            }
        }
        NetworkCase::Objective => {
            let g_v2r = toy_gen(rng);
            let g_r2v = toy_gen(rng);
            let d_r = toy_disc(rng, classes);
            let d_v = toy_disc(rng, classes);
            let s_v = random_labels(rng, 1, h, w, classes);
            let s_r = random_labels(rng, 1, h, w, classes);
            let alpha = rng.random_range(0.0f32..1.0);
            let p = SoftnessParams::new(alpha, 1.0 - alpha).expect("valid");
            let (v, r) = (img(rng), img(rng));
            let n_a = g_v2r.params().len();
            let mut inputs: Vec<(Tensor, bool)> = scaled(g_v2r.params(), 10.0).into_iter().map(|t| (t, true)).collect();
            inputs.extend(scaled(g_r2v.params(), 10.0).into_iter().map(|t| (t, true)));
            inputs.push((v, false));
            inputs.push((r, false));
            let mask_v = d_r.mask_for(&s_v).expect("labels");
            let mask_r = d_v.mask_for(&s_r).expect("labels");
            Case {
                inputs,
                build: Box::new(move |g, vars| {
                    let bp_a = crate::networks::BoundParams::from_vars(vars[..n_a].to_vec());
                    let bp_b = crate::networks::BoundParams::from_vars(vars[n_a..vars.len() - 2].to_vec());
                    let (v, r) = (vars[vars.len() - 2], vars[vars.len() - 1]);
                    let dr = d_r.params().bind(g, false);
                    let dv = d_v.params().bind(g, false);
                    let fake_r = g_v2r.forward(g, &bp_a, v)?;
                    let fake_v = g_r2v.forward(g, &bp_b, r)?;
                    let cyc_v = g_r2v.forward(g, &bp_b, fake_r)?;
                    let cyc_r = g_v2r.forward(g, &bp_a, fake_v)?;
                    let sr = d_r.forward(g, &dr, fake_r, &mask_v)?;
                    let sv = d_v.forward(g, &dv, fake_v, &mask_r)?;
                    let adv_a = generator_adv_loss_ls(g, sr)?;
                    let adv_b = generator_adv_loss_ls(g, sv)?;
                    let cyc = cycle_loss(g, v, cyc_v, r, cyc_r)?;
                    let grad = crate::losses::full_grad_objective(g, v, fake_r, &s_v, r, fake_v, &s_r, p)?;
                    generator_objective(g, adv_a, adv_b, cyc, grad, LossWeights::default())
                }),
            }
        }
    }
}

/// Names of every check, in run order.
pub fn check_names() -> Vec<&'static str> {
    checks().into_iter().map(|(n, _)| n).collect()
}

pub fn run_gradcheck(opts: &GradCheckOptions) -> Result<Vec<GradCheckRow>> {
    let mut rows = Vec::new();
    for (op_index, (name, factory)) in checks().into_iter().enumerate() {
        if let Some(f) = &opts.filter {
            if !name.contains(f.as_str()) {
                continue;
            }
        }
        let corrupt = opts.corrupt.as_deref() == Some(name);
        let mut row = GradCheckRow {
            op: name,
            cases: opts.cases,
            max_rel_error: 0.0,
            coords: 0,
            passed: true,
        };
        for case_index in 0..opts.cases {
            let mut rng = ChaCha8Rng::seed_from_u64(
                opts.seed
                    .wrapping_mul(0x9e37_79b9_7f4a_7c15)
                    .wrapping_add((op_index as u64) << 32 | case_index as u64),
            );
            let case = factory(&mut rng);
            let out = check_case(&case, &mut rng, opts.step, corrupt)?;
            row.max_rel_error = row.max_rel_error.max(out.rel_error);
            row.coords += out.coords;
            if !(out.rel_error < opts.tolerance) {
                row.passed = false;
            }
        }
        rows.push(row);
    }
    Ok(rows)
}
