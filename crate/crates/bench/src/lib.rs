//! Fixtures for the fusion benchmarks.

use mrrf_core::{Fusion, LmfLayer, MrrfLayer, TensorFusion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// The three fusion layers at one size, built from a shared seed.
pub struct Layers {
    pub tensor: TensorFusion,
    pub lmf: LmfLayer,
    pub mrrf: MrrfLayer,
}

impl Layers {
    /// `rank` is used for every MRRF mode and as the LMF rank.
    pub fn new(padded: &[usize], rank: usize, h: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let ranks: Vec<usize> = padded.iter().map(|&p| rank.min(p)).collect();
        Layers {
            tensor: TensorFusion::new(padded, h, "", &mut rng).expect("valid sizes"),
            lmf: LmfLayer::new(padded, rank, h, "", &mut rng).expect("valid sizes"),
            mrrf: MrrfLayer::new(padded, &ranks, h, "", &mut rng).expect("valid sizes"),
        }
    }

    pub fn all(&self) -> [(&'static str, &dyn Fusion); 3] {
        [("tf", &self.tensor), ("lmf", &self.lmf), ("mrrf", &self.mrrf)]
    }
}

/// Padded inputs: a leading one, then uniform entries.
pub fn inputs(padded: &[usize], seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    padded
        .iter()
        .map(|&p| {
            let mut x = vec![1.0];
            x.extend((1..p).map(|_| rng.random_range(-1.0..1.0)));
            x
        })
        .collect()
}
