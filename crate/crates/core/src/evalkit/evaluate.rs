//! The full protocol: SGGen, SGCls and RelCls over a list of scenes.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{gt_triplets, nms_per_class, rank_triplets, recall_at_k, GtTriplet, RankOptions, ScoredBox};
use crate::error::{Error, Result};
use crate::graph::{ObjectNode, SceneGraph};
use crate::model::SgModel;
use crate::numcore::softmax;
use crate::potentials::argmax;
use crate::scn::MarginalTrace;
use crate::synthworld::{candidate_relation_features, detection_rng, simulate_detections, Scene, WorldConfig};
use crate::vrd::GraphFeatures;

/// What the evaluation needs from a model.
pub trait Predictor: Sync {
    fn object_classes(&self) -> usize;
    fn predicate_classes(&self) -> usize;
    /// Mean-field iterations per inference.
    fn iterations(&self) -> usize;
    /// Object-head class probabilities of one detection, used to label and
    /// suppress candidates before the graph is built.
    fn object_probabilities(&self, feature: &[f64]) -> Result<Vec<f64>>;
    fn infer(&self, graph: &SceneGraph, features: GraphFeatures<'_>, clamp: Option<&[usize]>) -> Result<MarginalTrace>;
}

impl Predictor for SgModel {
    fn object_classes(&self) -> usize {
        self.dims.object_classes
    }

    fn predicate_classes(&self) -> usize {
        self.dims.predicate_classes
    }

    fn iterations(&self) -> usize {
        SgModel::iterations(self)
    }

    fn object_probabilities(&self, feature: &[f64]) -> Result<Vec<f64>> {
        Ok(softmax(&self.head.object_potential(feature)?))
    }

    fn infer(&self, graph: &SceneGraph, features: GraphFeatures<'_>, clamp: Option<&[usize]>) -> Result<MarginalTrace> {
        SgModel::infer(self, graph, features, clamp)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Setup {
    SGGen,
    SGCls,
    RelCls,
}

impl Setup {
    pub const ALL: [Setup; 3] = [Setup::SGGen, Setup::SGCls, Setup::RelCls];
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub ks: Vec<usize>,
    /// Detection jitter, relative to box size.
    pub jitter_sigma: f64,
    pub n_distractors: usize,
    pub nms_threshold: f64,
    pub multi_predicate_floor: Option<f64>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            ks: vec![50, 100],
            jitter_sigma: 0.12,
            n_distractors: 3,
            nms_threshold: 0.5,
            multi_predicate_floor: None,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if self.ks.is_empty() || self.ks.contains(&0) {
            return Err(Error::Config("ks must be a non-empty list of positive integers".into()));
        }
        if !(self.jitter_sigma >= 0.0 && self.jitter_sigma.is_finite()) {
            return Err(Error::Config("jitter_sigma must be >= 0".into()));
        }
        if !(self.nms_threshold > 0.0 && self.nms_threshold <= 1.0) {
            return Err(Error::Config("nms_threshold must lie in (0, 1]".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RecallValue {
    #[serde(rename = "macro")]
    pub macro_avg: f64,
    pub micro: f64,
    /// GT instances the value is computed over.
    pub instances: usize,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PredicateAccuracy {
    pub overall: f64,
    pub seen: f64,
    pub zero_shot: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StabilityReport {
    pub iterations: usize,
    /// Scenes per stability index; `unstable` counts scenes that never
    /// stabilized within the iteration budget.
    pub histogram: BTreeMap<String, usize>,
    /// Mean index with unstable scenes counted as `iterations + 1`; absent
    /// when no mean-field iterations run.
    pub mean: Option<f64>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalCounts {
    pub scenes: usize,
    pub gt_relations: usize,
    pub zero_shot_relations: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub recall: BTreeMap<Setup, BTreeMap<usize, RecallValue>>,
    /// Recall over zero-shot GT instances only.
    pub zero_shot: BTreeMap<Setup, BTreeMap<usize, RecallValue>>,
    /// Recall over the remaining (seen) GT instances.
    pub seen: BTreeMap<Setup, BTreeMap<usize, RecallValue>>,
    /// RelCls top-1 predicate accuracy per GT pair.
    pub predicate_accuracy: PredicateAccuracy,
    pub stability: StabilityReport,
    pub counts: EvalCounts,
    pub config: serde_json::Value,
}

impl EvalReport {
    pub fn recall_at(&self, setup: Setup, k: usize) -> Option<RecallValue> {
        self.recall.get(&setup)?.get(&k).copied()
    }

    pub fn zero_shot_at(&self, setup: Setup, k: usize) -> Option<RecallValue> {
        self.zero_shot.get(&setup)?.get(&k).copied()
    }

    pub fn seen_at(&self, setup: Setup, k: usize) -> Option<RecallValue> {
        self.seen.get(&setup)?.get(&k).copied()
    }
}

/// `(matched, total)` per subset of GT.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Counts {
    pub all: (usize, usize),
    pub zero_shot: (usize, usize),
    pub seen: (usize, usize),
}

/// Per-scene results, before aggregation.
#[derive(Clone, Debug, PartialEq)]
pub struct SceneEval {
    pub scene_id: usize,
    /// Indexed like `Setup::ALL`, then like the configured `ks`.
    pub recall: [Vec<Counts>; 3],
    pub stability: Option<usize>,
    /// RelCls top-1 predicate hits as `(correct, total)`.
    pub accuracy: Counts,
}

/// A detection graph with its object and relation features, aligned with
/// the graph's node order.
pub type DetectionGraph = (SceneGraph, Vec<Vec<f64>>, Vec<Vec<f64>>);

/// Graph over the surviving detections of `scene`, with aligned node
/// features. Candidates are labeled by the object head, those labeled
/// Background are dropped, and the rest go through per-class NMS.
pub fn detection_graph<P: Predictor + ?Sized>(
    model: &P,
    world: &WorldConfig,
    scene: &Scene,
    config: &EvalConfig,
) -> Result<DetectionGraph> {
    let mut rng = detection_rng(world, scene.id, 0);
    let candidates = simulate_detections(world, scene, config.jitter_sigma, config.n_distractors, &mut rng);
    let background = model.object_classes() - 1;
    let mut scored = Vec::new();
    let mut positions = Vec::new();
    for (pos, c) in candidates.iter().enumerate() {
        let probs = model.object_probabilities(&c.feature)?;
        let label = argmax(&probs);
        if label != background {
            scored.push(ScoredBox {
                bbox: c.bbox,
                label,
                score: probs[label],
            });
            positions.push(pos);
        }
    }
    let kept: Vec<usize> = nms_per_class(&scored, config.nms_threshold)?
        .into_iter()
        .map(|i| positions[i])
        .collect();
    let nodes = kept
        .iter()
        .map(|&p| ObjectNode {
            id: candidates[p].id,
            label: background,
            bbox: candidates[p].bbox,
        })
        .collect();
    let graph = SceneGraph::fully_connected(nodes, model.predicate_classes() - 1)?;
    let pairs: Vec<(usize, usize)> = graph.endpoints().iter().map(|&(s, o)| (kept[s], kept[o])).collect();
    let rel_features = candidate_relation_features(world, scene.id, &candidates, &pairs);
    let obj_features = kept.iter().map(|&p| candidates[p].feature.clone()).collect();
    Ok((graph, obj_features, rel_features))
}

fn split_gt(scene: &Scene, no_relation: usize) -> (Vec<GtTriplet>, Vec<GtTriplet>, Vec<GtTriplet>) {
    let all = gt_triplets(&scene.gt_graph, no_relation);
    let flags: Vec<bool> = scene
        .gt_graph
        .relations()
        .iter()
        .zip(&scene.zero_shot)
        .filter(|(r, _)| r.label != no_relation)
        .map(|(_, &z)| z)
        .collect();
    let zero_shot = all.iter().zip(&flags).filter(|(_, &z)| z).map(|(g, _)| *g).collect();
    let seen = all.iter().zip(&flags).filter(|(_, &z)| !z).map(|(g, _)| *g).collect();
    (all, zero_shot, seen)
}

fn add(a: &mut (usize, usize), b: (usize, usize)) {
    a.0 += b.0;
    a.1 += b.1;
}

/// Runs the three setups on one scene.
pub fn evaluate_scene<P: Predictor + ?Sized>(
    model: &P,
    world: &WorldConfig,
    scene: &Scene,
    config: &EvalConfig,
) -> Result<SceneEval> {
    let background = model.object_classes() - 1;
    let no_relation = model.predicate_classes() - 1;
    let opts = RankOptions {
        background,
        no_relation,
        multi_predicate_floor: config.multi_predicate_floor,
    };
    let k_max = *config.ks.iter().max().expect("validated ks");
    let (gt_all, gt_zs, gt_seen) = split_gt(scene, no_relation);
    let features = GraphFeatures {
        objects: &scene.features.objects,
        relations: &scene.features.relations,
    };
    let gt_labels: Vec<usize> = scene.gt_graph.objects().iter().map(|o| o.label).collect();

    let score = |graph: &SceneGraph, trace: &MarginalTrace| -> Result<Vec<Counts>> {
        let ranked = rank_triplets(graph, trace.last(), k_max, opts)?;
        Ok(config
            .ks
            .iter()
            .map(|&k| {
                let top = &ranked[..k.min(ranked.len())];
                Counts {
                    all: recall_at_k(top, &gt_all),
                    zero_shot: recall_at_k(top, &gt_zs),
                    seen: recall_at_k(top, &gt_seen),
                }
            })
            .collect())
    };

    let (det_graph, det_obj, det_rel) = detection_graph(model, world, scene, config)?;
    let det_trace = model.infer(
        &det_graph,
        GraphFeatures {
            objects: &det_obj,
            relations: &det_rel,
        },
        None,
    )?;
    let sg_gen = score(&det_graph, &det_trace)?;

    let cls_trace = model.infer(&scene.gt_graph, features, None)?;
    let sg_cls = score(&scene.gt_graph, &cls_trace)?;

    let rel_trace = model.infer(&scene.gt_graph, features, Some(&gt_labels))?;
    let rel_cls = score(&scene.gt_graph, &rel_trace)?;

    let mut accuracy = Counts::default();
    for ((r, row), &z) in scene
        .gt_graph
        .relations()
        .iter()
        .zip(&rel_trace.last().relations)
        .zip(&scene.zero_shot)
    {
        if r.label == no_relation {
            continue;
        }
        let hit = (argmax(&row[..no_relation]) == r.label) as usize;
        add(&mut accuracy.all, (hit, 1));
        if z {
            add(&mut accuracy.zero_shot, (hit, 1));
        } else {
            add(&mut accuracy.seen, (hit, 1));
        }
    }

    Ok(SceneEval {
        scene_id: scene.id,
        recall: [sg_gen, sg_cls, rel_cls],
        stability: cls_trace.stability,
        accuracy,
    })
}

fn ratio((m, t): (usize, usize)) -> f64 {
    if t == 0 {
        0.0
    } else {
        m as f64 / t as f64
    }
}

fn aggregate(per_image: impl Iterator<Item = (usize, usize)>) -> RecallValue {
    let (mut sum, mut images, mut matched, mut total) = (0.0, 0usize, 0usize, 0usize);
    for (m, t) in per_image {
        if t > 0 {
            sum += m as f64 / t as f64;
            images += 1;
            matched += m;
            total += t;
        }
    }
    RecallValue {
        macro_avg: if images == 0 { 0.0 } else { sum / images as f64 },
        micro: ratio((matched, total)),
        instances: total,
    }
}

/// Evaluates `model` on `scenes`; `echo` is embedded verbatim as the
/// report's config. Scenes are processed in parallel and aggregated in
/// input order.
pub fn evaluate<P: Predictor + ?Sized>(
    model: &P,
    world: &WorldConfig,
    scenes: &[Scene],
    config: &EvalConfig,
    echo: serde_json::Value,
) -> Result<EvalReport> {
    config.validate()?;
    if scenes.is_empty() {
        return Err(Error::Argument("cannot evaluate an empty split".into()));
    }
    let per_scene = scenes
        .par_iter()
        .map(|s| evaluate_scene(model, world, s, config))
        .collect::<Result<Vec<_>>>()?;

    let mut recall = BTreeMap::new();
    let mut zero_shot = BTreeMap::new();
    let mut seen = BTreeMap::new();
    for (si, setup) in Setup::ALL.iter().enumerate() {
        let mut r = BTreeMap::new();
        let mut z = BTreeMap::new();
        let mut s = BTreeMap::new();
        for (ki, &k) in config.ks.iter().enumerate() {
            r.insert(k, aggregate(per_scene.iter().map(|e| e.recall[si][ki].all)));
            z.insert(k, aggregate(per_scene.iter().map(|e| e.recall[si][ki].zero_shot)));
            s.insert(k, aggregate(per_scene.iter().map(|e| e.recall[si][ki].seen)));
        }
        recall.insert(*setup, r);
        zero_shot.insert(*setup, z);
        seen.insert(*setup, s);
    }

    let mut acc = Counts::default();
    for e in &per_scene {
        add(&mut acc.all, e.accuracy.all);
        add(&mut acc.zero_shot, e.accuracy.zero_shot);
        add(&mut acc.seen, e.accuracy.seen);
    }

    let t = model.iterations();
    let mut histogram = BTreeMap::new();
    for e in &per_scene {
        let key = e.stability.map_or_else(|| "unstable".to_string(), |s| s.to_string());
        *histogram.entry(key).or_insert(0) += 1;
    }
    let mean = (t > 0).then(|| {
        per_scene
            .iter()
            .map(|e| e.stability.unwrap_or(t + 1) as f64)
            .sum::<f64>()
            / per_scene.len() as f64
    });

    Ok(EvalReport {
        recall,
        zero_shot,
        seen,
        predicate_accuracy: PredicateAccuracy {
            overall: ratio(acc.all),
            seen: ratio(acc.seen),
            zero_shot: ratio(acc.zero_shot),
        },
        stability: StabilityReport {
            iterations: t,
            histogram,
            mean,
        },
        counts: EvalCounts {
            scenes: scenes.len(),
            gt_relations: acc.all.1,
            zero_shot_relations: acc.zero_shot.1,
        },
        config: echo,
    })
}
