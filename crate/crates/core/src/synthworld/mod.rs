//! CLEVR-like synthetic world: scenes of shapes on a ground plane, their
//! ground-truth scene graphs, synthetic features, simulated detections and
//! dataset splits.
//!
//! Coordinates: `x` grows to the right, `z` grows away from the camera
//! (smaller `z` is nearer). `r_{i->j}` describes subject `i` relative to
//! object `j`, so "left" means the subject is left of the object.

mod config;
mod detections;
mod features;
mod io;
mod splits;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

pub use config::{AttributeFilter, DatasetConfig, FeatureMode, SemanticRule, SplitConfig, WorldConfig};
pub use detections::{candidate_relation_features, simulate_detections, Candidate};
pub use features::{geometry, keyed_rng, FeatureExtractor, NoiseDomain, GEOMETRY_DIMS};
pub use io::{load_dataset, load_split_file, save_dataset, SPLIT_NAMES};
pub use splits::{make_splits, DatasetSplit, Triple};

use crate::error::{Error, Result};
use crate::graph::{BBox, ObjectNode, RelationshipNode, SceneGraph, Vocabulary};

pub const SPATIAL_PREDICATES: [&str; 4] = ["left", "right", "front", "behind"];
pub const LEFT: usize = 0;
pub const RIGHT: usize = 1;
pub const FRONT: usize = 2;
pub const BEHIND: usize = 3;

pub const SHAPE_NAMES: [&str; 3] = ["cube", "sphere", "cylinder"];
pub const COLOR_NAMES: [&str; 8] = ["gray", "brown", "red", "purple", "blue", "cyan", "green", "yellow"];
pub const SIZE_NAMES: [&str; 2] = ["small", "large"];
/// Ground-plane radius per size index.
pub const SIZE_RADII: [f64; 2] = [0.35, 0.7];

pub const IMAGE_WIDTH: f64 = 480.0;
pub const IMAGE_HEIGHT: f64 = 320.0;
/// Objects are placed in `[-EXTENT, EXTENT]²` on the ground plane.
pub const EXTENT: f64 = 3.0;
const PLACEMENT_GAP: f64 = 0.1;
const PLACEMENT_RETRIES: usize = 200;

/// Factorized object category.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Category {
    pub shape: usize,
    pub color: usize,
    pub size: usize,
}

impl Category {
    pub fn from_index(index: usize, cfg: &WorldConfig) -> Self {
        Category {
            shape: index / (cfg.n_colors * cfg.n_sizes),
            color: (index / cfg.n_sizes) % cfg.n_colors,
            size: index % cfg.n_sizes,
        }
    }

    pub fn index(&self, cfg: &WorldConfig) -> usize {
        (self.shape * cfg.n_colors + self.color) * cfg.n_sizes + self.size
    }

    /// Colors are confusable in pairs `(0, 1), (2, 3), ...`.
    pub fn confusable_color(&self, n_colors: usize) -> Option<usize> {
        let partner = self.color ^ 1;
        (partner < n_colors).then_some(partner)
    }
}

fn attr_name(names: &[&str], prefix: &str, i: usize) -> String {
    names.get(i).map_or_else(|| format!("{prefix}{i}"), |s| (*s).to_string())
}

/// Class names for a world: 48 categories like `large_red_cube` plus the
/// reserved Background / No-Relation classes.
pub fn vocabulary(cfg: &WorldConfig) -> Vocabulary {
    let objects = (0..cfg.num_categories()).map(|i| {
        let c = Category::from_index(i, cfg);
        format!(
            "{}_{}_{}",
            attr_name(&SIZE_NAMES, "size", c.size),
            attr_name(&COLOR_NAMES, "color", c.color),
            attr_name(&SHAPE_NAMES, "shape", c.shape)
        )
    });
    let predicates = SPATIAL_PREDICATES
        .iter()
        .map(|s| s.to_string())
        .chain(cfg.semantic_predicates.iter().map(|r| r.name.clone()));
    Vocabulary::new(objects.collect::<Vec<_>>(), predicates.collect::<Vec<_>>())
}

/// Dominant-axis spatial predicate of subject `i` relative to object `j`.
pub fn spatial_predicate(pos_i: [f64; 3], pos_j: [f64; 3]) -> Result<usize> {
    let dx = pos_j[0] - pos_i[0];
    let dz = pos_j[2] - pos_i[2];
    if dx == 0.0 && dz == 0.0 {
        return Err(Error::DegeneratePair);
    }
    Ok(if dx.abs() >= dz.abs() {
        if dx > 0.0 {
            LEFT
        } else {
            RIGHT
        }
    } else if dz > 0.0 {
        FRONT
    } else {
        BEHIND
    })
}

/// Projects a ground-plane object to its image box. The projection is
/// affine in `(x, z)`, with a mild depth scaling of the box size.
pub fn project(position: [f64; 3], size: usize) -> BBox {
    let [x, _, z] = position;
    let radius = SIZE_RADII[size];
    let depth_scale = 1.0 - 0.08 * z;
    let cx = 0.5 * IMAGE_WIDTH + 64.0 * x;
    let cy = 0.5625 * IMAGE_HEIGHT - 30.0 * z;
    BBox::from_center(cx, cy, 2.0 * radius * 64.0 * depth_scale, 2.0 * radius * 60.0 * depth_scale)
}

#[derive(Clone, Debug, PartialEq)]
pub struct SceneObject {
    pub id: usize,
    pub category: usize,
    pub bbox: BBox,
    pub position: [f64; 3],
}

/// Features aligned with a scene's object order and its graph's relation order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SceneFeatures {
    pub objects: Vec<Vec<f64>>,
    pub relations: Vec<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Scene {
    pub id: usize,
    pub objects: Vec<SceneObject>,
    /// One relationship node per ordered pair of objects.
    pub gt_graph: SceneGraph,
    /// Aligned with `gt_graph.relations()`: instance belongs to a withheld
    /// triple (and, in training scenes, was relabeled No-Relation).
    pub zero_shot: Vec<bool>,
    pub features: SceneFeatures,
}

impl Scene {
    /// Builds a scene from geometry and labels, recomputing its features.
    pub fn assemble(
        cfg: &WorldConfig,
        id: usize,
        objects: Vec<SceneObject>,
        relations: Vec<RelationshipNode>,
        zero_shot: Vec<bool>,
    ) -> Result<Scene> {
        let nodes = objects
            .iter()
            .map(|o| ObjectNode {
                id: o.id,
                label: o.category,
                bbox: o.bbox,
            })
            .collect();
        let gt_graph = SceneGraph::new(nodes, relations)?;
        if zero_shot.len() != gt_graph.relations().len() {
            return Err(Error::dim("zero-shot flags", gt_graph.relations().len(), zero_shot.len()));
        }
        let features = compute_features(cfg, id, &objects, &gt_graph);
        Ok(Scene {
            id,
            objects,
            gt_graph,
            zero_shot,
            features,
        })
    }

    pub fn category(&self, position: usize, cfg: &WorldConfig) -> Category {
        Category::from_index(self.objects[position].category, cfg)
    }
}

fn compute_features(cfg: &WorldConfig, scene_id: usize, objects: &[SceneObject], graph: &SceneGraph) -> SceneFeatures {
    let fx = FeatureExtractor::new(cfg);
    let obj: Vec<Vec<f64>> = objects
        .iter()
        .map(|o| {
            let mut rng = fx.object_rng(NoiseDomain::Object, scene_id, o.id);
            fx.object_feature(Some(Category::from_index(o.category, cfg)), &o.bbox, &mut rng)
        })
        .collect();
    let rel = graph
        .relations()
        .iter()
        .zip(graph.endpoints())
        .map(|(r, &(s, o))| {
            let mut rng = fx.relation_rng(NoiseDomain::Relation, scene_id, r.subject_id, r.object_id);
            fx.relation_feature(&objects[s].bbox, &objects[o].bbox, &obj[s], &obj[o], &mut rng)
        })
        .collect();
    SceneFeatures {
        objects: obj,
        relations: rel,
    }
}

/// Ground-truth predicate for an ordered pair; `draw` is a uniform sample
/// in `[0, 1)` deciding whether a matching semantic rule fires.
pub fn pair_predicate(cfg: &WorldConfig, subject: &SceneObject, object: &SceneObject, draw: f64) -> Result<usize> {
    let cs = Category::from_index(subject.category, cfg);
    let co = Category::from_index(object.category, cfg);
    if draw < cfg.semantic_rate {
        for (k, rule) in cfg.semantic_predicates.iter().enumerate() {
            if rule.subject.matches(cs.shape, cs.color, cs.size) && rule.object.matches(co.shape, co.color, co.size) {
                return Ok(SPATIAL_PREDICATES.len() + k);
            }
        }
    }
    spatial_predicate(subject.position, object.position)
}

/// Samples one scene: object count, categories, non-overlapping ground
/// positions, boxes, the fully connected ground-truth graph and features.
pub fn generate_scene(cfg: &WorldConfig, id: usize, rng: &mut impl Rng) -> Result<Scene> {
    let [lo, hi] = cfg.objects_per_scene;
    let n = rng.random_range(lo..=hi);
    let mut objects: Vec<SceneObject> = Vec::with_capacity(n);
    for oid in 0..n {
        let category = rng.random_range(0..cfg.num_categories());
        let size = Category::from_index(category, cfg).size;
        let radius = SIZE_RADII[size];
        let mut placed = None;
        for _ in 0..PLACEMENT_RETRIES {
            let x = rng.random_range(-EXTENT..=EXTENT);
            let z = rng.random_range(-EXTENT..=EXTENT);
            let clear = objects.iter().all(|o| {
                let r = SIZE_RADII[Category::from_index(o.category, cfg).size];
                let d = ((o.position[0] - x).powi(2) + (o.position[2] - z).powi(2)).sqrt();
                d >= r + radius + PLACEMENT_GAP
            });
            if clear {
                placed = Some([x, radius, z]);
                break;
            }
        }
        let position = placed.ok_or_else(|| {
            Error::Generation(format!("scene {id}: no free placement for object {oid} after {PLACEMENT_RETRIES} tries"))
        })?;
        objects.push(SceneObject {
            id: oid,
            category,
            bbox: project(position, size),
            position,
        });
    }

    let mut relations = Vec::with_capacity(n * (n - 1));
    for s in &objects {
        for o in &objects {
            if s.id == o.id {
                continue;
            }
            let draw: f64 = rng.random();
            relations.push(RelationshipNode {
                subject_id: s.id,
                object_id: o.id,
                label: pair_predicate(cfg, s, o, draw)?,
            });
        }
    }
    let flags = vec![false; relations.len()];
    Scene::assemble(cfg, id, objects, relations, flags)
}

/// RNG for scene `id` of a world; scenes are independent given the seed.
pub fn scene_rng(cfg: &WorldConfig, id: usize) -> ChaCha8Rng {
    keyed_rng(cfg.seed, NoiseDomain::Scene, id, 0, 0)
}

/// Generates `config.split.total()` scenes and splits them.
pub fn generate_dataset(config: &DatasetConfig) -> Result<DatasetSplit> {
    config.validate()?;
    let scenes = (0..config.split.total())
        .into_par_iter()
        .map(|id| generate_scene(&config.world, id, &mut scene_rng(&config.world, id)))
        .collect::<Result<Vec<_>>>()?;
    make_splits(scenes, config)
}

/// RNG for auxiliary per-scene sampling (detections, shuffles) that must not
/// disturb the generation stream.
pub fn detection_rng(cfg: &WorldConfig, scene: usize, purpose: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(keyed_rng(cfg.seed, NoiseDomain::Detection, scene, purpose, 0).random())
}
