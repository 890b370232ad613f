use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use semantic_adapt::data::{
    load_image, load_labels, save_image, write_corpus, CorpusDir, DomainSpec, Manifest, ManifestEntry, ScenePair,
};
use semantic_adapt::eval::evaluate;
use semantic_adapt::losses::SoftnessParams;
use semantic_adapt::trainer::{load_generator, run_training, Direction, TrainConfig};
use semantic_adapt::verify::{run_gradcheck, GradCheckOptions, DEFAULT_CASES};
use semantic_adapt::Error;

#[derive(Parser)]
#[command(name = "semantic-adapt", version, about = "Semantic-aware unpaired image adaptation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Domain {
    Virtual,
    Real,
}

#[derive(Clone, Copy, ValueEnum)]
enum Dir {
    V2r,
    R2v,
}

#[derive(Subcommand)]
enum Command {
    /// Render a synthetic corpus into <out>/<domain>/.
    Gen {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum)]
        domain: Domain,
        #[arg(long)]
        count: usize,
        /// HxW, e.g. 64x128.
        #[arg(long, default_value = "64x128", value_parser = parse_size)]
        size: (usize, usize),
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 4)]
        classes: usize,
    },
    /// Train both generators and discriminators.
    Train {
        /// key = value file; unset keys keep their defaults.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        virtual_dir: PathBuf,
        #[arg(long)]
        real_dir: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Continue from a checkpoint; its stored configuration is used.
        #[arg(long)]
        resume: Option<PathBuf>,
        /// Override a configuration key (repeatable), e.g. --set epochs=2.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
    /// Translate images with a trained generator. Labels are never read.
    Adapt {
        #[arg(long)]
        checkpoint: PathBuf,
        /// A PNG file, a corpus directory with a manifest, or a directory of PNGs.
        #[arg(long = "in")]
        input: PathBuf,
        /// Output PNG (for a file input) or directory.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value = "v2r")]
        direction: Dir,
    },
    /// Compare two aligned corpora and write a JSON report.
    Eval {
        #[arg(long)]
        corpus_a: PathBuf,
        #[arg(long)]
        corpus_b: PathBuf,
        /// Label corpus aligned with both; defaults to each corpus's own labels.
        #[arg(long)]
        labels: Option<PathBuf>,
        #[arg(long)]
        report: PathBuf,
        #[arg(long, default_value_t = 4)]
        classes: usize,
        #[arg(long, default_value_t = 0.9)]
        alpha: f32,
        #[arg(long, default_value_t = 0.1)]
        beta: f32,
    },
    /// Compare analytic gradients with central finite differences.
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = DEFAULT_CASES)]
        cases: usize,
        /// Only checks whose name contains this.
        #[arg(long)]
        filter: Option<String>,
        /// Scale the analytic gradient of the named check (self-test).
        #[arg(long, hide = true)]
        corrupt: Option<String>,
    },
}

fn parse_size(s: &str) -> Result<(usize, usize), String> {
    let (h, w) = s.split_once(['x', 'X']).ok_or("expected HxW")?;
    let n = |v: &str| v.trim().parse::<usize>().map_err(|_| format!("{v:?} is not a size"));
    Ok((n(h)?, n(w)?))
}

/// Validation problems exit with 1, runtime and numeric failures with 2.
fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_)
        | Error::InvalidArgument { .. }
        | Error::Shape { .. }
        | Error::LabelOutOfRange { .. }
        | Error::Corpus(_) => 1,
        _ => 2,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn run(cmd: Command) -> semantic_adapt::Result<ExitCode> {
    match cmd {
        Command::Gen {
            out,
            domain,
            count,
            size: (h, w),
            seed,
            classes,
        } => {
            let name = match domain {
                Domain::Virtual => "virtual",
                Domain::Real => "real",
            };
            let spec = DomainSpec::by_name(name, classes)?;
            write_corpus(&out, &spec, count, h, w, seed)?;
            println!("wrote {count} {name} scenes to {}", out.join(name).display());
        }
        Command::Train {
            config,
            virtual_dir,
            real_dir,
            out,
            resume,
            overrides,
        } => train(config, &virtual_dir, &real_dir, &out, resume, &overrides)?,
        Command::Adapt {
            checkpoint,
            input,
            out,
            direction,
        } => {
            let dir = match direction {
                Dir::V2r => Direction::VirtualToReal,
                Dir::R2v => Direction::RealToVirtual,
            };
            adapt(&checkpoint, &input, &out, dir)?;
        }
        Command::Eval {
            corpus_a,
            corpus_b,
            labels,
            report,
            classes,
            alpha,
            beta,
        } => {
            let p = SoftnessParams::new(alpha, beta)?;
            let a = load_with_labels(&corpus_a, labels.as_deref(), classes, true)?;
            let b = load_with_labels(&corpus_b, labels.as_deref(), classes, false)?;
            let r = evaluate(&a, &b, classes, p)?;
            let json = serde_json::to_string_pretty(&r).expect("report serializes");
            std::fs::write(&report, json + "\n").map_err(|e| Error::Io {
                path: report.clone(),
                source: e,
            })?;
            println!(
                "pairs={} mean_color_distance={} boundary_preservation={} soft_grad_loss={:.6}",
                r.pairs,
                r.mean_color_distance.map_or("n/a".into(), |v| format!("{v:.6}")),
                r.boundary_preservation.map_or("n/a".into(), |v| format!("{v:.6}")),
                r.soft_grad_loss
            );
        }
        Command::Gradcheck {
            seed,
            cases,
            filter,
            corrupt,
        } => {
            let rows = run_gradcheck(&GradCheckOptions {
                seed,
                cases,
                filter,
                corrupt,
                ..GradCheckOptions::default()
            })?;
            for r in &rows {
                println!("{}", r.format());
            }
            if rows.iter().any(|r| !r.passed) {
                eprintln!("gradient check failed");
                return Ok(ExitCode::from(2));
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn read_text(path: &Path) -> semantic_adapt::Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn train(
    config: Option<PathBuf>,
    virtual_dir: &Path,
    real_dir: &Path,
    out: &Path,
    resume: Option<PathBuf>,
    overrides: &[String],
) -> semantic_adapt::Result<()> {
    let vc = CorpusDir::open(virtual_dir)?;
    let rc = CorpusDir::open(real_dir)?;
    // Image size follows the corpus unless the file or a flag sets it.
    let mut cfg = TrainConfig::default();
    let mut text = format!("height = {}\nwidth = {}\n", vc.manifest.height, vc.manifest.width);
    if let Some(c) = vc.manifest.num_classes {
        text += &format!("num_classes = {c}\n");
    }
    if let Some(path) = &config {
        text += &read_text(path)?;
        text.push('\n');
    }
    for o in overrides {
        if !o.contains('=') {
            return Err(Error::Config(vec![format!("--set expects KEY=VALUE, got {o:?}")]));
        }
        text += o;
        text.push('\n');
    }
    cfg.apply_text(&text)?;
    cfg.validate()?;
    if let Some(ckpt) = &resume {
        cfg = semantic_adapt::trainer::TrainState::load(ckpt)?.config;
    }
    let virt = vc.load_scenes(cfg.num_classes)?;
    let real = rc.load_scenes(cfg.num_classes)?;
    std::fs::create_dir_all(out).map_err(|e| Error::Io {
        path: out.to_path_buf(),
        source: e,
    })?;
    std::fs::write(out.join("config.txt"), cfg.to_text()).map_err(|e| Error::Io {
        path: out.join("config.txt"),
        source: e,
    })?;
    let mut sums = [0.0f64; 4];
    let mut n = 0u64;
    run_training(&cfg, &virt, &real, out, resume.as_deref(), |rec| {
        let r = rec.report;
        for (s, v) in sums.iter_mut().zip([r.total, r.cycle, r.grad_sens, r.adv_d_r + r.adv_d_v]) {
            *s += v as f64;
        }
        n += 1;
        let spe = (virt.len().min(real.len()) / cfg.batch_size) as u64;
        if (rec.step + 1) % spe == 0 {
            let m = sums.map(|s| s / n as f64);
            eprintln!(
                "epoch {:>3}  total {:.4}  cycle {:.4}  grad {:.4}  disc {:.4}  (alpha {}, beta {})",
                rec.epoch, m[0], m[1], m[2], m[3], rec.alpha, rec.beta
            );
            sums = [0.0; 4];
            n = 0;
        }
    })?;
    println!("checkpoint written to {}", out.join(&cfg.checkpoint_file).display());
    Ok(())
}

/// Image paths of `input`: a manifest's entries, or every `*.png` sorted by name.
fn input_images(input: &Path) -> semantic_adapt::Result<Vec<PathBuf>> {
    if input.join(semantic_adapt::data::corpus::MANIFEST).is_file() {
        let m = Manifest::read(input)?;
        return Ok(m.entries.iter().map(|e| input.join(&e.image)).collect());
    }
    let read = std::fs::read_dir(input).map_err(|e| Error::Io {
        path: input.to_path_buf(),
        source: e,
    })?;
    let mut files: Vec<PathBuf> = read
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("png")))
        .collect();
    files.sort();
    Ok(files)
}

fn adapt(checkpoint: &Path, input: &Path, out: &Path, dir: Direction) -> semantic_adapt::Result<()> {
    let net = load_generator(checkpoint, dir)?;
    if input.is_file() {
        let img = load_image(input)?;
        save_image(out, &net.adapt(&img)?)?;
        println!("wrote {}", out.display());
        return Ok(());
    }
    let files = input_images(input)?;
    let images = out.join("images");
    std::fs::create_dir_all(&images).map_err(|e| Error::Io {
        path: images.clone(),
        source: e,
    })?;
    let mut m = Manifest {
        domain: "adapted".into(),
        num_classes: None,
        height: 0,
        width: 0,
        entries: Vec::with_capacity(files.len()),
    };
    for (index, f) in files.iter().enumerate() {
        let img = load_image(f)?;
        let s = img.shape();
        if index == 0 {
            (m.height, m.width) = (s.height, s.width);
        }
        let rel = Path::new("images").join(semantic_adapt::data::corpus::image_file(index));
        save_image(&out.join(&rel), &net.adapt(&img)?)?;
        m.entries.push(ManifestEntry {
            index,
            image: rel,
            labels: None,
            seed: None,
        });
    }
    m.write(out)?;
    println!("adapted {} images into {}", files.len(), out.display());
    Ok(())
}

/// Scenes of `dir`, with labels from `labels` when `prefer_external` (or when
/// the corpus has none of its own).
fn load_with_labels(
    dir: &Path,
    labels: Option<&Path>,
    classes: usize,
    prefer_external: bool,
) -> semantic_adapt::Result<Vec<ScenePair>> {
    let c = CorpusDir::open(dir)?;
    let own = c.manifest.entries.iter().all(|e| e.labels.is_some()) && !c.is_empty();
    let external = match labels {
        Some(l) if prefer_external || !own => Some(CorpusDir::open(l)?),
        _ => None,
    };
    match external {
        None if own => c.load_scenes(classes),
        None => Err(Error::Corpus(format!(
            "{} has no label maps; pass --labels",
            dir.display()
        ))),
        Some(l) => {
            if l.len() != c.len() {
                return Err(Error::Corpus(format!(
                    "misaligned manifests: {} has {} entries, labels {} has {}",
                    dir.display(),
                    c.len(),
                    l.dir.display(),
                    l.len()
                )));
            }
            (0..c.len())
                .map(|i| {
                    let rel = l.manifest.entries[i].labels.as_ref().ok_or_else(|| {
                        Error::Corpus(format!("{}: entry {i} has no label map", l.dir.display()))
                    })?;
                    let labels = load_labels(&l.dir.join(rel), classes)?;
                    ScenePair::new(c.load_image(i)?, labels).map_err(|e| {
                        Error::Corpus(format!("misaligned manifests at entry {i}: {e}"))
                    })
                })
                .collect()
        }
    }
}
