use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::config::DatasetConfig;
use super::{detection_rng, vocabulary, Scene};
use crate::error::{Error, Result};

/// Relationship type `(subject category, predicate, object category)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Triple {
    pub subject: usize,
    pub predicate: usize,
    pub object: usize,
}

impl Triple {
    /// Triple of the relation at position `rel` of `scene`'s graph.
    pub fn of(scene: &Scene, rel: usize) -> Triple {
        let g = &scene.gt_graph;
        let (s, o) = g.endpoints()[rel];
        Triple {
            subject: g.objects()[s].label,
            predicate: g.relations()[rel].label,
            object: g.objects()[o].label,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetSplit {
    pub config: DatasetConfig,
    pub train: Vec<Scene>,
    pub val: Vec<Scene>,
    pub test: Vec<Scene>,
    /// Triples withheld from training; every one occurs in the test split.
    pub zero_shot_triples: BTreeSet<Triple>,
}

impl DatasetSplit {
    pub fn relation_count(scenes: &[Scene]) -> usize {
        scenes.iter().map(|s| s.gt_graph.relations().len()).sum()
    }

    pub fn zero_shot_count(scenes: &[Scene]) -> usize {
        scenes.iter().map(|s| s.zero_shot.iter().filter(|&&z| z).count()).sum()
    }

    /// Share of test relationship instances that are zero-shot.
    pub fn zero_shot_share(&self) -> f64 {
        let total = Self::relation_count(&self.test);
        if total == 0 {
            0.0
        } else {
            Self::zero_shot_count(&self.test) as f64 / total as f64
        }
    }

    /// Checks that no training target carries a withheld triple.
    pub fn check_masking(&self) -> Result<()> {
        for scene in &self.train {
            for rel in 0..scene.gt_graph.relations().len() {
                let t = Triple::of(scene, rel);
                if self.zero_shot_triples.contains(&t) {
                    return Err(Error::InvariantViolation {
                        context: format!("training scene {}", scene.id),
                        detail: format!("zero-shot triple {t:?} present in training targets"),
                    });
                }
            }
        }
        Ok(())
    }
}

/// Share cap relative to the target when adding triple types greedily.
const OVERSHOOT: f64 = 1.2;
/// Smallest acceptable share relative to the target.
const UNDERSHOOT: f64 = 0.6;

/// Assigns scenes to train/val/test by a seeded shuffle, then withholds a
/// random set of test triple types covering about `zero_shot_fraction` of the
/// test relationship instances. Withheld instances in training scenes are
/// relabeled No-Relation (the scene is kept); validation and test instances
/// are flagged but keep their labels.
pub fn make_splits(mut scenes: Vec<Scene>, config: &DatasetConfig) -> Result<DatasetSplit> {
    config.validate()?;
    let sc = &config.split;
    if scenes.len() < 3 || scenes.len() != sc.total() {
        return Err(Error::Config(format!(
            "split sizes {}/{}/{} need exactly {} scenes (at least 3), got {}",
            sc.train,
            sc.val,
            sc.test,
            sc.total(),
            scenes.len()
        )));
    }
    let mut rng = detection_rng(&config.world, usize::MAX, 1);
    scenes.shuffle(&mut rng);
    let mut test = scenes.split_off(sc.train + sc.val);
    let mut val = scenes.split_off(sc.train);
    let mut train = scenes;
    for part in [&mut train, &mut val, &mut test] {
        part.sort_by_key(|s| s.id);
    }

    let mut zero_shot_triples = BTreeSet::new();
    if sc.zero_shot_fraction > 0.0 {
        let mut counts: BTreeMap<Triple, usize> = BTreeMap::new();
        for scene in &test {
            for rel in 0..scene.gt_graph.relations().len() {
                *counts.entry(Triple::of(scene, rel)).or_default() += 1;
            }
        }
        let total: usize = counts.values().sum();
        let target = sc.zero_shot_fraction * total as f64;
        let mut types: Vec<(Triple, usize)> = counts.into_iter().collect();
        types.shuffle(&mut rng);
        let mut covered = 0usize;
        for (t, n) in types {
            if covered as f64 >= target {
                break;
            }
            if (covered + n) as f64 <= target * OVERSHOOT {
                zero_shot_triples.insert(t);
                covered += n;
            }
        }
        if (covered as f64) < UNDERSHOOT * target {
            return Err(Error::Config(format!(
                "zero-shot fraction {} unattainable: reached {covered} of {total} test instances",
                sc.zero_shot_fraction
            )));
        }
    }

    let no_relation = vocabulary(&config.world).no_relation();
    for (mask, part) in [(true, &mut train), (false, &mut val), (false, &mut test)] {
        for scene in part.iter_mut() {
            let triples: Vec<Triple> = (0..scene.gt_graph.relations().len())
                .map(|r| Triple::of(scene, r))
                .collect();
            scene.zero_shot = triples.iter().map(|t| zero_shot_triples.contains(t)).collect();
            if mask && scene.zero_shot.iter().any(|&z| z) {
                let objects: Vec<usize> = scene.gt_graph.objects().iter().map(|o| o.label).collect();
                let relations: Vec<usize> = scene
                    .gt_graph
                    .relations()
                    .iter()
                    .zip(&scene.zero_shot)
                    .map(|(r, &z)| if z { no_relation } else { r.label })
                    .collect();
                scene.gt_graph = scene.gt_graph.relabeled(&objects, &relations)?;
            }
        }
    }

    let split = DatasetSplit {
        config: config.clone(),
        train,
        val,
        test,
        zero_shot_triples,
    };
    split.check_masking()?;
    Ok(split)
}
