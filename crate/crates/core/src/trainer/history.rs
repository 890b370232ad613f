use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::gradfilters::LabelMap;
use crate::tensor::Tensor;

/// An adapted image batch together with the label map of its source.
#[derive(Clone, Debug, PartialEq)]
pub struct HistoryItem {
    pub image: Tensor,
    pub labels: LabelMap,
}

/// Serializable position of a ChaCha8 stream.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RngState {
    pub seed: [u8; 32],
    pub stream: u64,
    pub word_pos: u128,
}

impl RngState {
    pub fn capture(rng: &ChaCha8Rng) -> Self {
        Self {
            seed: rng.get_seed(),
            stream: rng.get_stream(),
            word_pos: rng.get_word_pos(),
        }
    }

    pub fn restore(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::from_seed(self.seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(self.word_pos);
        rng
    }

    /// 8 seed words, 2 stream words, 4 position words.
    pub fn to_words(&self) -> Vec<u32> {
        let mut w: Vec<u32> = self
            .seed
            .chunks_exact(4)
            .map(|c| u32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        w.extend([self.stream as u32, (self.stream >> 32) as u32]);
        w.extend((0..4).map(|i| (self.word_pos >> (32 * i)) as u32));
        w
    }

    pub fn from_words(w: &[u32]) -> Option<Self> {
        if w.len() != 14 {
            return None;
        }
        let mut seed = [0u8; 32];
        for (i, word) in w[..8].iter().enumerate() {
            seed[4 * i..4 * i + 4].copy_from_slice(&word.to_le_bytes());
        }
        let stream = w[8] as u64 | (w[9] as u64) << 32;
        let word_pos = (0..4).fold(0u128, |acc, i| acc | (w[10 + i] as u128) << (32 * i));
        Some(Self { seed, stream, word_pos })
    }
}

/// Pool of past generator outputs replayed to a discriminator.
///
/// While the pool has room every pushed item is stored and returned. Once
/// full, a fair coin decides between returning the new item unchanged and
/// returning a uniformly chosen stored item, which the new item replaces.
#[derive(Clone, Debug)]
pub struct HistoryBuffer {
    capacity: usize,
    items: Vec<HistoryItem>,
    rng: ChaCha8Rng,
}

impl PartialEq for HistoryBuffer {
    fn eq(&self, other: &Self) -> bool {
        self.capacity == other.capacity && self.items == other.items && self.rng_state() == other.rng_state()
    }
}

impl HistoryBuffer {
    pub fn new(capacity: usize, seed: u64) -> Self {
        Self {
            capacity,
            items: Vec::with_capacity(capacity),
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn from_parts(capacity: usize, items: Vec<HistoryItem>, rng: RngState) -> Self {
        Self {
            capacity,
            items,
            rng: rng.restore(),
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn items(&self) -> &[HistoryItem] {
        &self.items
    }

    pub fn rng_state(&self) -> RngState {
        RngState::capture(&self.rng)
    }

    /// Offer `item`; returns the item to train on.
    pub fn push_sample(&mut self, item: HistoryItem) -> HistoryItem {
        if self.items.len() < self.capacity {
            self.items.push(item.clone());
            return item;
        }
        if self.capacity == 0 || !self.rng.random_bool(0.5) {
            return item;
        }
        let slot = self.rng.random_range(0..self.capacity);
        std::mem::replace(&mut self.items[slot], item)
    }
}
