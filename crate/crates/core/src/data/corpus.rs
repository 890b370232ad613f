//! On-disk corpora.
//!
//! ```text
//! <root>/<domain>/manifest.txt
//! <root>/<domain>/images/000000.png
//! <root>/<domain>/labels/000000.png
//! ```
//!
//! The manifest starts with a `#` header line of `key=value` pairs (domain,
//! classes, height, width) followed by one line per sample:
//! `index image-path label-path seed`, paths relative to the domain directory.
//! Image-only corpora (adapted outputs) write `-` for the label path and seed.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::data::io::{load_image, load_labels, save_image, save_labels};
use crate::data::scene::{generate_scene, ScenePair};
use crate::data::spec::DomainSpec;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const MANIFEST: &str = "manifest.txt";

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ManifestEntry {
    pub index: usize,
    pub image: PathBuf,
    pub labels: Option<PathBuf>,
    pub seed: Option<u64>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Manifest {
    pub domain: String,
    pub num_classes: Option<usize>,
    pub height: usize,
    pub width: usize,
    pub entries: Vec<ManifestEntry>,
}

/// Seed of sample `index` in a corpus generated from `base`.
pub fn sample_seed(base: u64, index: usize) -> u64 {
    fn mix(mut z: u64) -> u64 {
        z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^ (z >> 31)
    }
    mix(base ^ mix(index as u64))
}

pub fn image_file(index: usize) -> String {
    format!("{index:06}.png")
}

impl Manifest {
    pub fn to_text(&self) -> String {
        let mut out = format!("# domain={} ", self.domain);
        if let Some(c) = self.num_classes {
            let _ = write!(out, "classes={c} ");
        }
        let _ = writeln!(out, "height={} width={}", self.height, self.width);
        for e in &self.entries {
            let labels = e.labels.as_ref().map_or("-".into(), |p| p.display().to_string());
            let seed = e.seed.map_or("-".into(), |s| s.to_string());
            let _ = writeln!(out, "{} {} {} {}", e.index, e.image.display(), labels, seed);
        }
        out
    }

    pub fn parse(text: &str, origin: &Path) -> Result<Self> {
        let bad = |line: usize, what: &str| Error::Corpus(format!("{}:{}: {what}", origin.display(), line + 1));
        let mut lines = text.lines().enumerate();
        let (_, header) = lines.next().ok_or_else(|| bad(0, "empty manifest"))?;
        let header = header.strip_prefix('#').ok_or_else(|| bad(0, "missing '#' header"))?;
        let mut m = Manifest {
            domain: String::new(),
            num_classes: None,
            height: 0,
            width: 0,
            entries: Vec::new(),
        };
        for kv in header.split_whitespace() {
            let (k, v) = kv.split_once('=').ok_or_else(|| bad(0, &format!("malformed header field {kv:?}")))?;
            let num = || v.parse::<usize>().map_err(|_| bad(0, &format!("{k} is not a number")));
            match k {
                "domain" => m.domain = v.to_owned(),
                "classes" => m.num_classes = Some(num()?),
                "height" => m.height = num()?,
                "width" => m.width = num()?,
                _ => return Err(bad(0, &format!("unknown header field {k:?}"))),
            }
        }
        for (i, line) in lines {
            if line.trim().is_empty() {
                continue;
            }
            let f: Vec<&str> = line.split_whitespace().collect();
            if f.len() != 4 {
                return Err(bad(i, "expected: index image labels seed"));
            }
            let index = f[0].parse().map_err(|_| bad(i, "index is not a number"))?;
            let labels = (f[2] != "-").then(|| PathBuf::from(f[2]));
            let seed = match f[3] {
                "-" => None,
                s => Some(s.parse().map_err(|_| bad(i, "seed is not a number"))?),
            };
            m.entries.push(ManifestEntry {
                index,
                image: PathBuf::from(f[1]),
                labels,
                seed,
            });
        }
        Ok(m)
    }

    pub fn read(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST);
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        Self::parse(&text, &path)
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        let path = dir.join(MANIFEST);
        std::fs::write(&path, self.to_text()).map_err(|e| Error::io(&path, e))
    }
}

fn create_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

/// Render `count` scenes into `<root>/<spec.name>/` and return the manifest.
pub fn write_corpus(root: &Path, spec: &DomainSpec, count: usize, h: usize, w: usize, seed: u64) -> Result<Manifest> {
    let dir = root.join(&spec.name);
    create_dir(&dir.join("images"))?;
    create_dir(&dir.join("labels"))?;
    let mut m = Manifest {
        domain: spec.name.clone(),
        num_classes: Some(spec.num_classes()),
        height: h,
        width: w,
        entries: Vec::with_capacity(count),
    };
    for index in 0..count {
        let s = sample_seed(seed, index);
        let scene = generate_scene(s, spec, h, w)?;
        let image = Path::new("images").join(image_file(index));
        let labels = Path::new("labels").join(image_file(index));
        save_image(&dir.join(&image), &scene.image)?;
        save_labels(&dir.join(&labels), &scene.labels)?;
        m.entries.push(ManifestEntry {
            index,
            image,
            labels: Some(labels),
            seed: Some(s),
        });
    }
    m.write(&dir)?;
    Ok(m)
}

/// A corpus directory with its manifest.
#[derive(Clone, Debug)]
pub struct CorpusDir {
    pub dir: PathBuf,
    pub manifest: Manifest,
}

impl CorpusDir {
    pub fn open(dir: &Path) -> Result<Self> {
        Ok(Self {
            dir: dir.to_path_buf(),
            manifest: Manifest::read(dir)?,
        })
    }

    pub fn len(&self) -> usize {
        self.manifest.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.manifest.entries.is_empty()
    }

    fn check_dims(&self, path: &Path, h: usize, w: usize) -> Result<()> {
        let m = &self.manifest;
        if (h, w) != (m.height, m.width) {
            return Err(Error::Corpus(format!(
                "{}: {h}x{w} does not match manifest size {}x{}",
                path.display(),
                m.height,
                m.width
            )));
        }
        Ok(())
    }

    pub fn load_image(&self, i: usize) -> Result<Tensor> {
        let path = self.dir.join(&self.manifest.entries[i].image);
        let img = load_image(&path)?;
        let s = img.shape();
        self.check_dims(&path, s.height, s.width)?;
        Ok(img)
    }

    /// Image and labels of entry `i`; labels must be `< num_classes`.
    pub fn load_scene(&self, i: usize, num_classes: usize) -> Result<ScenePair> {
        let e = &self.manifest.entries[i];
        let rel = e.labels.as_ref().ok_or_else(|| {
            Error::Corpus(format!("{}: entry {} has no label map", self.dir.display(), e.index))
        })?;
        let path = self.dir.join(rel);
        let labels = load_labels(&path, num_classes)?;
        self.check_dims(&path, labels.height(), labels.width())?;
        ScenePair::new(self.load_image(i)?, labels)
    }

    /// Every scene, checking the manifest's class count against `num_classes`.
    pub fn load_scenes(&self, num_classes: usize) -> Result<Vec<ScenePair>> {
        if let Some(c) = self.manifest.num_classes {
            if c != num_classes {
                return Err(Error::Corpus(format!(
                    "{}: corpus has {c} classes, expected {num_classes}",
                    self.dir.display()
                )));
            }
        }
        (0..self.len()).map(|i| self.load_scene(i, num_classes)).collect()
    }
}
