//! Training inputs built from dataset scenes.

use anyhow::Result;
use sgcrf_core::graph::{ObjectNode, RelationshipNode, SceneGraph};
use sgcrf_core::model::ModelDims;
use sgcrf_core::synthworld::{
    candidate_relation_features, detection_rng, simulate_detections, vocabulary, FeatureExtractor, Scene, WorldConfig,
};
use sgcrf_core::vrd::GraphFeatures;

/// One training graph with aligned features; node labels are the targets.
#[derive(Clone, Debug)]
pub struct Sample {
    pub scene_id: usize,
    pub graph: SceneGraph,
    pub objects: Vec<Vec<f64>>,
    pub relations: Vec<Vec<f64>>,
}

impl Sample {
    pub fn features(&self) -> GraphFeatures<'_> {
        GraphFeatures {
            objects: &self.objects,
            relations: &self.relations,
        }
    }
}

pub fn model_dims(world: &WorldConfig) -> ModelDims {
    let fx = FeatureExtractor::new(world);
    let vocab = vocabulary(world);
    ModelDims {
        object_dim: fx.object_dim(),
        relation_dim: fx.relation_dim(),
        object_classes: vocab.num_object_classes(),
        predicate_classes: vocab.num_predicate_classes(),
    }
}

/// The scene's own graph, or with `distractors > 0` a graph over the scene's
/// objects plus that many Background boxes. Pairs touching a distractor are
/// labeled No-Relation.
pub fn training_sample(world: &WorldConfig, scene: &Scene, distractors: usize) -> Result<Sample> {
    if distractors == 0 {
        return Ok(Sample {
            scene_id: scene.id,
            graph: scene.gt_graph.clone(),
            objects: scene.features.objects.clone(),
            relations: scene.features.relations.clone(),
        });
    }
    let vocab = vocabulary(world);
    let mut rng = detection_rng(world, scene.id, 1);
    let candidates = simulate_detections(world, scene, 0.0, distractors, &mut rng);
    let nodes: Vec<ObjectNode> = candidates
        .iter()
        .map(|c| ObjectNode {
            id: c.id,
            label: c.category.unwrap_or(vocab.background()),
            bbox: c.bbox,
        })
        .collect();
    let mut relations = Vec::new();
    let mut pairs = Vec::new();
    for (i, a) in candidates.iter().enumerate() {
        for (j, b) in candidates.iter().enumerate() {
            if i == j {
                continue;
            }
            let label = match (a.source, b.source) {
                (Some(s), Some(o)) => scene
                    .gt_graph
                    .relation_position(s, o)
                    .map_or(vocab.no_relation(), |r| scene.gt_graph.relations()[r].label),
                _ => vocab.no_relation(),
            };
            relations.push(RelationshipNode {
                subject_id: a.id,
                object_id: b.id,
                label,
            });
            pairs.push((i, j));
        }
    }
    let graph = SceneGraph::new(nodes, relations)?;
    let rel_features = candidate_relation_features(world, scene.id, &candidates, &pairs);
    Ok(Sample {
        scene_id: scene.id,
        graph,
        objects: candidates.into_iter().map(|c| c.feature).collect(),
        relations: rel_features,
    })
}

pub fn training_samples(world: &WorldConfig, scenes: &[Scene], distractors: usize) -> Result<Vec<Sample>> {
    scenes.iter().map(|s| training_sample(world, s, distractors)).collect()
}
