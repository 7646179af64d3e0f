//! Synthetic stand-ins for detector features.
//!
//! An object feature is `[geometry(16), shape one-hot, color one-hot, size
//! one-hot]` plus Gaussian noise. All noise comes from ChaCha streams keyed by
//! `(world seed, domain, scene id, node ids)`, so features can be rebuilt
//! from geometry alone.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::config::{FeatureMode, WorldConfig};
use super::{Category, IMAGE_HEIGHT, IMAGE_WIDTH};
use crate::graph::BBox;

pub const GEOMETRY_DIMS: usize = 16;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NoiseDomain {
    Scene = 1,
    Object = 2,
    Relation = 3,
    Candidate = 4,
    CandidateRelation = 5,
    Detection = 6,
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Deterministic RNG for one `(domain, scene, a, b)` stream.
pub fn keyed_rng(seed: u64, domain: NoiseDomain, scene: usize, a: usize, b: usize) -> ChaCha8Rng {
    let mut h = splitmix(seed);
    for part in [domain as u64, scene as u64, a as u64, b as u64] {
        h = splitmix(h ^ part);
    }
    ChaCha8Rng::seed_from_u64(h)
}

/// 16 geometry channels of a box, in image-normalized units.
pub fn geometry(b: &BBox) -> [f64; GEOMETRY_DIMS] {
    let x1 = b.x1 / IMAGE_WIDTH;
    let y1 = b.y1 / IMAGE_HEIGHT;
    let x2 = b.x2 / IMAGE_WIDTH;
    let y2 = b.y2 / IMAGE_HEIGHT;
    let w = (x2 - x1).max(1e-6);
    let h = (y2 - y1).max(1e-6);
    let cx = 0.5 * (x1 + x2);
    let cy = 0.5 * (y1 + y2);
    [
        cx,
        cy,
        w,
        h,
        x1,
        y1,
        x2,
        y2,
        w * h,
        (w / h).ln(),
        cx * cx,
        cy * cy,
        cx * cy,
        w * w,
        h * h,
        (w * h).sqrt(),
    ]
}

#[derive(Clone, Copy, Debug)]
pub struct FeatureExtractor<'a> {
    config: &'a WorldConfig,
}

impl<'a> FeatureExtractor<'a> {
    pub fn new(config: &'a WorldConfig) -> Self {
        FeatureExtractor { config }
    }

    pub fn object_dim(&self) -> usize {
        GEOMETRY_DIMS + self.config.n_shapes + self.config.n_colors + self.config.n_sizes
    }

    pub fn relation_dim(&self) -> usize {
        match self.config.feature_mode {
            FeatureMode::SymmetricUnion => GEOMETRY_DIMS + self.object_dim(),
            FeatureMode::Ordered => GEOMETRY_DIMS + 2 * self.object_dim(),
        }
    }

    fn normal(&self) -> Normal<f64> {
        Normal::new(0.0, self.config.feature_noise_sigma).expect("validated sigma")
    }

    /// Feature of a box showing `category`; `None` gives a background-like
    /// feature with empty attribute blocks.
    pub fn object_feature(&self, category: Option<Category>, bbox: &BBox, rng: &mut ChaCha8Rng) -> Vec<f64> {
        let cfg = self.config;
        let mut f = Vec::with_capacity(self.object_dim());
        f.extend_from_slice(&geometry(bbox));
        let mut attrs = vec![0.0; cfg.n_shapes + cfg.n_colors + cfg.n_sizes];
        // drawn unconditionally so every stream has the same layout
        let mix: f64 = Normal::new(0.0, 1.0).expect("unit normal").sample(rng);
        if let Some(c) = category {
            attrs[c.shape] = 1.0;
            let color_block = &mut attrs[cfg.n_shapes..cfg.n_shapes + cfg.n_colors];
            match c.confusable_color(cfg.n_colors) {
                Some(partner) if cfg.ambiguity_sigma > 0.0 => {
                    let a = (mix * cfg.ambiguity_sigma).abs().min(1.0);
                    color_block[c.color] = 1.0 - a;
                    color_block[partner] = a;
                }
                _ => color_block[c.color] = 1.0,
            }
            attrs[cfg.n_shapes + cfg.n_colors + c.size] = 1.0;
        }
        f.extend_from_slice(&attrs);
        let noise = self.normal();
        for v in &mut f {
            *v += noise.sample(rng);
        }
        f
    }

    /// Relation feature for the ordered pair `(i, j)`. In symmetric mode the
    /// caller must key `rng` by the unordered pair to keep the result
    /// invariant under swapping.
    pub fn relation_feature(
        &self,
        box_i: &BBox,
        box_j: &BBox,
        f_i: &[f64],
        f_j: &[f64],
        rng: &mut ChaCha8Rng,
    ) -> Vec<f64> {
        let mut f = Vec::with_capacity(self.relation_dim());
        f.extend_from_slice(&geometry(&box_i.union(box_j)));
        match self.config.feature_mode {
            FeatureMode::SymmetricUnion => f.extend(f_i.iter().zip(f_j).map(|(a, b)| a + b)),
            FeatureMode::Ordered => {
                f.extend_from_slice(f_i);
                f.extend_from_slice(f_j);
            }
        }
        let noise = self.normal();
        for v in &mut f {
            *v += noise.sample(rng);
        }
        f
    }

    /// Keys a relation stream: unordered in symmetric mode, ordered otherwise.
    pub fn relation_rng(&self, domain: NoiseDomain, scene: usize, i: usize, j: usize) -> ChaCha8Rng {
        let (a, b) = match self.config.feature_mode {
            FeatureMode::SymmetricUnion => (i.min(j), i.max(j)),
            FeatureMode::Ordered => (i, j),
        };
        keyed_rng(self.config.seed, domain, scene, a, b)
    }

    pub fn object_rng(&self, domain: NoiseDomain, scene: usize, id: usize) -> ChaCha8Rng {
        keyed_rng(self.config.seed, domain, scene, id, usize::MAX)
    }
}
