//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
//! exits nonzero if any fails. Runs the full desk-scale experiment, so expect
//! over an hour on one core.

use std::path::Path;
use std::process::{Command, ExitCode};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use semantic_adapt::data::{domain_stats, generate_scene, sample_seed, DomainSpec, ScenePair};
use semantic_adapt::eval::{boundary_agreement, color_distances, mean_present, nearest_color_labels};
use semantic_adapt::gradfilters::{boundary_mask, label_grad_pair, sobel_pair, LabelMap};
use semantic_adapt::losses::{cycle_loss, discriminator_loss_ls, soft_grad_loss, SoftnessParams};
use semantic_adapt::networks::{discriminator_receptive_dims, DiscriminatorConfig, SemanticDiscriminatorNet};
use semantic_adapt::tensor::{Graph, Shape, Tensor};
use semantic_adapt::trainer::{periodic_checkpoint_name, read_metrics, run_training, StepRecord, TrainConfig};
use semantic_adapt::verify::{check_names, run_gradcheck, GradCheckOptions};

const SEEDS: [u64; 5] = [0, 1, 2, 3, 4];
const SCENES: usize = 200;
const HEIGHT: usize = 64;
const WIDTH: usize = 128;
/// Channel width of both networks in the desk experiment.
const DESK_WIDTH: usize = 16;
/// One-sided 95% Student t quantile with 4 degrees of freedom.
const T_95_DF4: f64 = 2.132;

struct Verdict {
    pass: bool,
    detail: String,
}

impl Verdict {
    fn new(pass: bool, detail: impl Into<String>) -> Self {
        Self {
            pass,
            detail: detail.into(),
        }
    }
}

fn random_image(rng: &mut ChaCha8Rng, h: usize, w: usize) -> Tensor {
    Tensor::from_fn(Shape::new(1, 3, h, w), |_, _, _, _| rng.random_range(-1.0f32..1.0))
}

fn random_labels(rng: &mut ChaCha8Rng, h: usize, w: usize, s: usize) -> LabelMap {
    // Blocky labels so boundaries are neither absent nor everywhere.
    let cell = rng.random_range(1..4usize);
    let grid: Vec<u32> = (0..h * w).map(|_| rng.random_range(0..s as u32)).collect();
    LabelMap::from_fn(1, h, w, s, |_, y, x| grid[(y / cell) * w + x / cell]).unwrap()
}

fn scalar(g: &Graph, v: semantic_adapt::tensor::Var) -> f64 {
    g.value(v).item() as f64
}

fn criterion_1() -> Verdict {
    let start = Instant::now();
    let rows = run_gradcheck(&GradCheckOptions::default()).expect("gradcheck runs");
    let secs = start.elapsed().as_secs_f64();
    let worst = rows.iter().map(|r| r.max_rel_error).fold(0.0, f64::max);
    let failed: Vec<&str> = rows.iter().filter(|r| !r.passed).map(|r| r.op).collect();
    let covered = rows.len() == check_names().len() && rows.iter().any(|r| r.op == "generator_objective");
    Verdict::new(
        failed.is_empty() && covered && rows.iter().all(|r| r.cases >= 20) && secs < 120.0,
        format!(
            "{} checks x 20 cases, worst rel err {worst:.2e}, {secs:.0}s, failed {failed:?}",
            rows.len()
        ),
    )
}

fn criterion_2() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst = 0.0f64;
    let mut iff_ok = true;
    for _ in 0..100 {
        let (h, w) = (rng.random_range(3..20), rng.random_range(3..20));
        let s = rng.random_range(1..6);
        let x = random_image(&mut rng, h, w);
        let y = random_image(&mut rng, h, w);
        let labels = random_labels(&mut rng, h, w, s);
        let a = rng.random_range(0..=10) as f32 / 10.0;
        let p = SoftnessParams::new(a, 1.0 - a).unwrap();
        let mut g = Graph::new();
        let (vx, vy) = (g.constant(x.clone()), g.constant(y.clone()));

        let same = soft_grad_loss(&mut g, vx, vx, &labels, p).unwrap();
        let uniform = LabelMap::uniform(1, h, w, s, rng.random_range(0..s as u32)).unwrap();
        let flat = soft_grad_loss(&mut g, vx, vy, &uniform, SoftnessParams::hard()).unwrap();
        let cyc = cycle_loss(&mut g, vx, vx, vy, vy).unwrap();

        let (ph, pw) = (rng.random_range(1..6), rng.random_range(1..6));
        let ones = g.constant(Tensor::full(Shape::new(1, 1, ph, pw), 1.0));
        let zeros = g.constant(Tensor::zeros(Shape::new(1, 1, ph, pw)));
        let ideal = discriminator_loss_ls(&mut g, ones, zeros).unwrap();
        // Perturb one score away from its ideal target.
        let mut off = Tensor::zeros(Shape::new(1, 1, ph, pw));
        off.set(0, 0, rng.random_range(0..ph), rng.random_range(0..pw), rng.random_range(0.01f32..1.0));
        let off = g.constant(off);
        let near = discriminator_loss_ls(&mut g, ones, off).unwrap();

        for v in [same, flat, cyc, ideal] {
            worst = worst.max(scalar(&g, v).abs());
        }
        iff_ok &= scalar(&g, near) > 0.0;
    }
    Verdict::new(
        worst <= 1e-7 && iff_ok,
        format!("100 instances, largest identity residual {worst:.1e}, non-ideal scores always positive: {iff_ok}"),
    )
}

fn criterion_3() -> Verdict {
    let image_cx = [[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]];
    let image_cy = [[1.0, 2.0, 1.0], [0.0, 0.0, 0.0], [-1.0, -2.0, -1.0]];
    let label_cx = [[0.0, 0.0, 0.0], [-1.0, 0.0, 1.0], [0.0, 0.0, 0.0]];
    let label_cy = [[0.0, 1.0, 0.0], [0.0, 0.0, 0.0], [0.0, -1.0, 0.0]];
    let (s, l) = (sobel_pair(), label_grad_pair());
    let ok = *s.cx() == image_cx && *s.cy() == image_cy && *l.cx() == label_cx && *l.cy() == label_cy;
    Verdict::new(ok, "image and label filter pairs compared entry by entry")
}

fn one_class(scenes: &[ScenePair]) -> Vec<ScenePair> {
    scenes
        .iter()
        .map(|s| ScenePair::new(s.image.clone(), LabelMap::uniform(1, s.height(), s.width(), 1, 0).unwrap()).unwrap())
        .collect()
}

fn criterion_4() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst = 0.0f64;
    for i in 0..100 {
        let blocks = rng.random_range(1..4);
        let s = rng.random_range(1..9);
        let unit = 1 << blocks;
        let (h, w) = (unit * rng.random_range(1..5), unit * rng.random_range(1..5));
        let d = SemanticDiscriminatorNet::new(DiscriminatorConfig {
            blocks,
            base_width: rng.random_range(2..7),
            num_classes: s,
            seed: i,
        })
        .unwrap();
        let x = random_image(&mut rng, h, w);
        let labels = random_labels(&mut rng, h, w, s);
        let mask = d.mask_for(&labels).unwrap();
        let mut g = Graph::new();
        let bound = d.params().bind(&mut g, false);
        let xv = g.constant(x);
        let trunk = d.trunk(&mut g, &bound, xv).unwrap();
        let out = d.forward(&mut g, &bound, xv, &mask).unwrap();
        let (t, o, m) = (g.value(trunk), g.value(out), mask.tensor());
        assert_eq!((o.shape().height, o.shape().width), discriminator_receptive_dims(blocks, h, w));
        for y in 0..o.shape().height {
            for xx in 0..o.shape().width {
                let class = (0..s).find(|&c| m.at(0, c, y, xx) == 1.0).expect("one-hot mask");
                worst = worst.max((o.at(0, 0, y, xx) - t.at(0, class, y, xx)).abs() as f64);
            }
        }
    }

    let cfg = TrainConfig {
        num_classes: 1,
        gen_base_width: DESK_WIDTH,
        disc_base_width: DESK_WIDTH,
        epochs: 10,
        ..TrainConfig::default()
    };
    let (v, r) = corpora(5);
    let (v, r) = (one_class(&v), one_class(&r));
    let trace = |semantic: bool| {
        let dir = tempfile::tempdir().unwrap();
        let cfg = TrainConfig {
            semantic_discriminator: semantic,
            ..cfg.clone()
        };
        let mut rows = Vec::new();
        run_training(&cfg, &v, &r, dir.path(), None, |rec| rows.push(rec.report)).unwrap();
        rows
    };
    let (a, b) = (trace(true), trace(false));
    let mut gap = 0.0f64;
    for (x, y) in a.iter().zip(&b) {
        for (p, q) in [
            (x.adv_g_v2r, y.adv_g_v2r),
            (x.adv_g_r2v, y.adv_g_r2v),
            (x.adv_d_r, y.adv_d_r),
            (x.adv_d_v, y.adv_d_v),
            (x.cycle, y.cycle),
            (x.grad_sens, y.grad_sens),
            (x.total, y.total),
        ] {
            gap = gap.max((p - q).abs() as f64);
        }
    }
    Verdict::new(
        worst <= 1e-6 && a.len() == 50 && b.len() == 50 && gap <= 1e-6,
        format!(
            "selection residual {worst:.1e} over 100 instances; s=1 vs PatchGAN max trace gap {gap:.1e} over {} steps",
            a.len()
        ),
    )
}

fn corpora(n: usize) -> (Vec<ScenePair>, Vec<ScenePair>) {
    let vs = DomainSpec::virtual_default(4).unwrap();
    let rs = DomainSpec::real_default(4).unwrap();
    let virt = (0..n).map(|i| generate_scene(sample_seed(100, i), &vs, HEIGHT, WIDTH).unwrap()).collect();
    let real = (0..n).map(|i| generate_scene(sample_seed(200, i), &rs, HEIGHT, WIDTH).unwrap()).collect();
    (virt, real)
}

fn desk_config(seed: u64, lambda_g: f32) -> TrainConfig {
    TrainConfig {
        seed,
        lambda_g,
        gen_base_width: DESK_WIDTH,
        disc_base_width: DESK_WIDTH,
        checkpoint_every: 1000,
        ..TrainConfig::default()
    }
}

struct DeskRun {
    color_ratio: f64,
    shifts: Vec<[f64; 3]>,
    boundary: f64,
    band_hits: u64,
    band_total: u64,
    cycle_first: f32,
    cycle_last_epoch: f64,
    minutes: f64,
}

fn desk_run(cfg: &TrainConfig, virt: &[ScenePair], real: &[ScenePair], dir: &Path) -> DeskRun {
    let start = Instant::now();
    let mut rows: Vec<StepRecord> = Vec::new();
    let state = run_training(cfg, virt, real, dir, None, |r| rows.push(*r)).expect("desk training");
    let minutes = start.elapsed().as_secs_f64() / 60.0;
    let adapted: Vec<ScenePair> = virt
        .iter()
        .map(|s| ScenePair::new(state.g_v2r.adapt(&s.image).unwrap(), s.labels.clone()).unwrap())
        .collect();
    let (sv, sr, sa) = (
        domain_stats(virt, 4).unwrap(),
        domain_stats(real, 4).unwrap(),
        domain_stats(&adapted, 4).unwrap(),
    );
    let before = mean_present(&color_distances(&sv, &sr)).unwrap();
    let after = mean_present(&color_distances(&sa, &sr)).unwrap();
    let shifts = (0..4)
        .map(|c| {
            let (a, v) = (sa.classes[c].as_ref().unwrap(), sv.classes[c].as_ref().unwrap());
            [0, 1, 2].map(|k| a.mean[k] - v.mean[k])
        })
        .collect();
    let real_spec = DomainSpec::real_default(4).unwrap();
    let (mut agree, mut band_hits, mut band_total) = (Vec::new(), 0u64, 0u64);
    for (x, y) in virt.iter().zip(&adapted) {
        if let Some(b) = boundary_agreement(&x.image, &y.image, &x.labels).unwrap() {
            agree.push(b);
        }
        let pred = nearest_color_labels(&y.image, &real_spec).unwrap();
        let mask = boundary_mask(&x.labels, &label_grad_pair());
        for ((&m, &p), &t) in mask.data().iter().zip(pred.values()).zip(x.labels.values()) {
            if m != 0.0 {
                band_total += 1;
                band_hits += (p == t) as u64;
            }
        }
    }
    let last_epoch = cfg.epochs;
    let tail: Vec<f64> = rows.iter().filter(|r| r.epoch == last_epoch).map(|r| r.report.cycle as f64).collect();
    DeskRun {
        color_ratio: after / before,
        shifts,
        boundary: agree.iter().sum::<f64>() / agree.len() as f64,
        band_hits,
        band_total,
        cycle_first: rows[0].report.cycle,
        cycle_last_epoch: tail.iter().sum::<f64>() / tail.len() as f64,
        minutes,
    }
}

fn cosine(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    let dot: f64 = (0..3).map(|k| a[k] * b[k]).sum();
    let na = a.iter().map(|v| v * v).sum::<f64>().sqrt();
    let nb = b.iter().map(|v| v * v).sum::<f64>().sqrt();
    dot / (na * nb)
}

struct Desk {
    verdict: Verdict,
    main_dir: tempfile::TempDir,
}

fn criterion_5(virt: &[ScenePair], real: &[ScenePair]) -> Desk {
    let main_dir = tempfile::tempdir().unwrap();
    let (mut ok, mut lines) = (true, Vec::new());
    let (mut diffs, mut hits, mut total) = (Vec::new(), 0u64, 0u64);
    let mut slowest = 0.0f64;
    for seed in SEEDS {
        let dir = if seed == 0 { main_dir.path().to_path_buf() } else { main_dir.path().join(format!("s{seed}")) };
        let main = desk_run(&desk_config(seed, 5.0), virt, real, &dir);
        let ablation_dir = tempfile::tempdir().unwrap();
        let ablation = desk_run(&desk_config(seed, 0.0), virt, real, ablation_dir.path());
        slowest = slowest.max(main.minutes).max(ablation.minutes);
        let min_cos = (0..4)
            .flat_map(|i| (i + 1..4).map(move |j| (i, j)))
            .map(|(i, j)| cosine(&main.shifts[i], &main.shifts[j]))
            .fold(f64::INFINITY, f64::min);
        let cycle_drop = 1.0 - main.cycle_last_epoch / main.cycle_first as f64;
        let seed_ok = main.color_ratio <= 0.5 && min_cos < 0.0 && cycle_drop >= 0.8;
        ok &= seed_ok;
        diffs.push(main.boundary - ablation.boundary);
        hits += main.band_hits;
        total += main.band_total;
        let line = format!(
            "seed {seed}: color ratio {:.3}, min shift cosine {min_cos:.2}, boundary {:.4} vs ablation {:.4}, \
             band acc {:.4}, cycle drop {:.0}%, {:.1}+{:.1} min",
            main.color_ratio,
            main.boundary,
            ablation.boundary,
            main.band_hits as f64 / main.band_total as f64,
            100.0 * cycle_drop,
            main.minutes,
            ablation.minutes,
        );
        eprintln!("  {line}");
        lines.push(line);
    }
    let n = diffs.len() as f64;
    let mean = diffs.iter().sum::<f64>() / n;
    let sd = (diffs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    let lower = mean - T_95_DF4 * sd / n.sqrt();
    let band = hits as f64 / total as f64;
    ok &= lower > 0.0 && band >= 0.95 && slowest < 60.0;
    Desk {
        verdict: Verdict::new(
            ok,
            format!(
                "boundary margin mean {mean:.4}, one-sided 95% lower bound {lower:.4}; pooled band acc {band:.4}; \
                 slowest run {slowest:.1} min\n    {}",
                lines.join("\n    ")
            ),
        ),
        main_dir,
    }
}

fn criterion_6(virt: &[ScenePair], real: &[ScenePair], main_dir: &Path) -> Verdict {
    let cfg = desk_config(0, 5.0);
    let again = tempfile::tempdir().unwrap();
    run_training(&cfg, virt, real, again.path(), None, |_| {}).unwrap();
    let read = |d: &Path, f: &str| std::fs::read(d.join(f)).unwrap();
    let rerun_same = read(main_dir, "metrics.csv") == read(again.path(), "metrics.csv");

    // Interrupted run: the log already holds rows past the checkpoint.
    let resumed = tempfile::tempdir().unwrap();
    std::fs::copy(main_dir.join("metrics.csv"), resumed.path().join("metrics.csv")).unwrap();
    let ckpt = main_dir.join(periodic_checkpoint_name(1000));
    run_training(&cfg, virt, real, resumed.path(), Some(&ckpt), |_| {}).unwrap();
    let resume_csv = read(main_dir, "metrics.csv") == read(resumed.path(), "metrics.csv");
    let resume_ckpt = read(main_dir, "checkpoint.sack") == read(resumed.path(), "checkpoint.sack");
    Verdict::new(
        rerun_same && resume_csv && resume_ckpt,
        format!("rerun CSV identical: {rerun_same}; resume from step 1000 CSV identical: {resume_csv}, checkpoint identical: {resume_ckpt}"),
    )
}

fn criterion_7(main_dir: &Path) -> Verdict {
    let mut rejected = true;
    for (a, b) in [(0.8f32, 0.1f32), (0.9, 0.2), (1.1, -0.1)] {
        rejected &= SoftnessParams::new(a, b).is_err();
        for keys in [("alpha_start", "beta_start"), ("alpha_end", "beta_end")] {
            let mut cfg = TrainConfig::default();
            cfg.set(keys.0, &a.to_string()).unwrap();
            cfg.set(keys.1, &b.to_string()).unwrap();
            rejected &= cfg.validate().is_err();
        }
    }
    rejected &= TrainConfig::default().validate().is_ok();

    // The CLI refuses before writing anything.
    let d = tempfile::tempdir().unwrap();
    let bin = || Command::new(env!("CARGO_BIN_EXE_semantic-adapt"));
    for domain in ["virtual", "real"] {
        let gen = bin()
            .args(["gen", "--domain", domain, "--count", "2", "--size", "16x32", "--out"])
            .arg(d.path())
            .status()
            .unwrap();
        assert!(gen.success());
    }
    let out_dir = d.path().join("run");
    let cli = bin()
        .arg("train")
        .arg("--virtual-dir")
        .arg(d.path().join("virtual"))
        .arg("--real-dir")
        .arg(d.path().join("real"))
        .arg("--out")
        .arg(&out_dir)
        .args(["--set", "alpha_end=0.8", "--set", "beta_end=0.1"])
        .output()
        .unwrap();
    let cli_ok = cli.status.code() == Some(1) && !out_dir.exists();

    let rows = read_metrics(&main_dir.join("metrics.csv")).unwrap();
    let schedule_ok = rows.iter().all(|r| {
        if r.epoch <= 3 {
            (r.alpha, r.beta) == (1.0, 0.0)
        } else {
            (r.alpha, r.beta) == (0.9, 0.1)
        }
    }) && rows.iter().any(|r| r.epoch == 3)
        && rows.iter().any(|r| r.epoch == 4);
    let switch = rows.iter().position(|r| r.alpha != 1.0).unwrap_or(rows.len());
    Verdict::new(
        rejected && cli_ok && schedule_ok,
        format!(
            "library rejects bad pairs: {rejected}; CLI exits 1 before output: {cli_ok}; \
             schedule switches at row {switch} (epoch 3->4): {schedule_ok}"
        ),
    )
}

fn main() -> ExitCode {
    let mut verdicts: Vec<(u32, Verdict)> = Vec::new();
    let mut report = |n: u32, v: Verdict| {
        println!("criterion {n}: {} ({})", if v.pass { "PASS" } else { "FAIL" }, v.detail);
        verdicts.push((n, v));
    };
    report(1, criterion_1());
    report(2, criterion_2());
    report(3, criterion_3());
    report(4, criterion_4());
    let (virt, real) = corpora(SCENES);
    let desk = criterion_5(&virt, &real);
    report(5, desk.verdict);
    report(6, criterion_6(&virt, &real, desk.main_dir.path()));
    report(7, criterion_7(desk.main_dir.path()));
    let failed: Vec<u32> = verdicts.iter().filter(|(_, v)| !v.pass).map(|(n, _)| *n).collect();
    if failed.is_empty() {
        println!("acceptance: all {} criteria PASS", verdicts.len());
        ExitCode::SUCCESS
    } else {
        println!("acceptance: FAIL {failed:?}");
        ExitCode::FAILURE
    }
}
