//! Simulated detector output: jittered copies of ground-truth boxes plus
//! background distractors.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::config::WorldConfig;
use super::features::{FeatureExtractor, NoiseDomain};
use super::{Category, Scene, IMAGE_HEIGHT, IMAGE_WIDTH};
use crate::graph::BBox;

#[derive(Clone, Debug, PartialEq)]
pub struct Candidate {
    /// Candidate index within its scene; GT copies come first, in object order.
    pub id: usize,
    pub bbox: BBox,
    /// Id of the ground-truth object this box was derived from.
    pub source: Option<usize>,
    /// Category of the source object; `None` for distractors.
    pub category: Option<usize>,
    pub feature: Vec<f64>,
}

const MIN_SIDE: f64 = 2.0;

fn jitter(b: &BBox, sigma: f64, rng: &mut ChaCha8Rng) -> BBox {
    if sigma == 0.0 {
        return *b;
    }
    let nx = Normal::new(0.0, sigma * b.width()).expect("finite sigma");
    let ny = Normal::new(0.0, sigma * b.height()).expect("finite sigma");
    let x1 = b.x1 + nx.sample(rng);
    let y1 = b.y1 + ny.sample(rng);
    let x2 = (b.x2 + nx.sample(rng)).max(x1 + MIN_SIDE);
    let y2 = (b.y2 + ny.sample(rng)).max(y1 + MIN_SIDE);
    BBox::new(x1, y1, x2, y2)
}

fn random_box(rng: &mut ChaCha8Rng) -> BBox {
    let w = rng.random_range(30.0..100.0);
    let h = rng.random_range(30.0..90.0);
    let x1 = rng.random_range(0.0..IMAGE_WIDTH - w);
    let y1 = rng.random_range(0.0..IMAGE_HEIGHT - h);
    BBox::new(x1, y1, x1 + w, y1 + h)
}

/// Candidate boxes for a scene. `jitter_sigma` is relative to each box's
/// width and height. Features use the candidate's own geometry and a noise
/// stream keyed by the candidate id.
pub fn simulate_detections(
    cfg: &WorldConfig,
    scene: &Scene,
    jitter_sigma: f64,
    n_distractors: usize,
    rng: &mut ChaCha8Rng,
) -> Vec<Candidate> {
    let fx = FeatureExtractor::new(cfg);
    let mut out = Vec::with_capacity(scene.objects.len() + n_distractors);
    for o in &scene.objects {
        let id = out.len();
        let bbox = jitter(&o.bbox, jitter_sigma, rng);
        let mut frng = fx.object_rng(NoiseDomain::Candidate, scene.id, id);
        let feature = fx.object_feature(Some(Category::from_index(o.category, cfg)), &bbox, &mut frng);
        out.push(Candidate {
            id,
            bbox,
            source: Some(o.id),
            category: Some(o.category),
            feature,
        });
    }
    for _ in 0..n_distractors {
        let id = out.len();
        let bbox = random_box(rng);
        let mut frng = fx.object_rng(NoiseDomain::Candidate, scene.id, id);
        let feature = fx.object_feature(None, &bbox, &mut frng);
        out.push(Candidate {
            id,
            bbox,
            source: None,
            category: None,
            feature,
        });
    }
    out
}

/// Relation features for the given ordered candidate pairs (positions into
/// `candidates`).
pub fn candidate_relation_features(
    cfg: &WorldConfig,
    scene_id: usize,
    candidates: &[Candidate],
    pairs: &[(usize, usize)],
) -> Vec<Vec<f64>> {
    let fx = FeatureExtractor::new(cfg);
    pairs
        .iter()
        .map(|&(i, j)| {
            let (a, b) = (&candidates[i], &candidates[j]);
            let mut rng = fx.relation_rng(NoiseDomain::CandidateRelation, scene_id, a.id, b.id);
            fx.relation_feature(&a.bbox, &b.bbox, &a.feature, &b.feature, &mut rng)
        })
        .collect()
}
