//! Procedural two-domain street scenes, label clustering, PNG I/O and
//! corpus directories.

pub mod clustering;
pub mod corpus;
pub mod io;
pub mod scene;
pub mod spec;
pub mod stats;

pub use clustering::{cluster_labels, ClassClustering};
pub use corpus::{sample_seed, write_corpus, CorpusDir, Manifest, ManifestEntry};
pub use io::{load_image, load_labels, save_image, save_labels};
pub use scene::{generate_scene, ScenePair};
pub use spec::{ClassAppearance, DomainSpec, CLASS_NAMES};
pub use stats::{domain_stats, ClassStats, DomainStats};
