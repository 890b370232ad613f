//! Semantic-aware, boundary-preserving unpaired image adaptation.
//!
//! Two generators translate between a "virtual" and a "real" image domain.
//! They are trained against per-class (semantic-aware) patch discriminators
//! with least-squares adversarial losses, an L1 cycle-reconstruction term,
//! and a soft gradient-sensitive term that keeps image gradients intact
//! along semantic boundaries. Everything runs on the small reverse-mode
//! engine in [`tensor`].

pub mod data;
pub mod error;
pub mod eval;
pub mod gradfilters;
pub mod losses;
pub mod networks;
pub mod tensor;
pub mod trainer;
pub mod verify;

pub use error::{Error, Result};
