//! Dataset files: one JSON document per split holding the generating config
//! and the scenes' geometry and labels. Features are not stored; they are
//! rebuilt on load from the keyed noise streams.

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::DatasetConfig;
use super::splits::{DatasetSplit, Triple};
use super::{vocabulary, Scene, SceneObject};
use crate::error::{Error, Result};
use crate::graph::{BBox, RelationshipNode};
use crate::numcore::checkpoint::write_atomic;

pub const SPLIT_NAMES: [&str; 3] = ["train", "val", "test"];

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ObjectRecord {
    id: usize,
    category: usize,
    bbox: [f64; 4],
    position: [f64; 3],
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RelationRecord {
    subject_id: usize,
    predicate: usize,
    object_id: usize,
    zero_shot: bool,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SceneRecord {
    id: usize,
    objects: Vec<ObjectRecord>,
    relations: Vec<RelationRecord>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SplitFile {
    config: DatasetConfig,
    scenes: Vec<SceneRecord>,
}

fn to_record(scene: &Scene) -> SceneRecord {
    SceneRecord {
        id: scene.id,
        objects: scene
            .objects
            .iter()
            .map(|o| ObjectRecord {
                id: o.id,
                category: o.category,
                bbox: o.bbox.as_array(),
                position: o.position,
            })
            .collect(),
        relations: scene
            .gt_graph
            .relations()
            .iter()
            .zip(&scene.zero_shot)
            .map(|(r, &z)| RelationRecord {
                subject_id: r.subject_id,
                predicate: r.label,
                object_id: r.object_id,
                zero_shot: z,
            })
            .collect(),
    }
}

fn from_record(config: &DatasetConfig, rec: SceneRecord, file: &str) -> Result<Scene> {
    let vocab = vocabulary(&config.world);
    let violation = |detail: String| Error::InvariantViolation {
        context: format!("{file}, scene {}", rec.id),
        detail,
    };
    let mut objects = Vec::with_capacity(rec.objects.len());
    for o in &rec.objects {
        let bbox = BBox::from(o.bbox);
        if !bbox.is_valid() {
            return Err(violation(format!("object {} has invalid box {:?}", o.id, o.bbox)));
        }
        if o.category >= config.world.num_categories() {
            return Err(violation(format!("object {} has unknown category {}", o.id, o.category)));
        }
        if o.position.iter().any(|v| !v.is_finite()) {
            return Err(violation(format!("object {} has a non-finite position", o.id)));
        }
        objects.push(SceneObject {
            id: o.id,
            category: o.category,
            bbox,
            position: o.position,
        });
    }
    let mut relations = Vec::with_capacity(rec.relations.len());
    let mut flags = Vec::with_capacity(rec.relations.len());
    for r in &rec.relations {
        if r.predicate >= vocab.num_predicate_classes() {
            return Err(violation(format!(
                "relation {}->{} has unknown predicate {}",
                r.subject_id, r.object_id, r.predicate
            )));
        }
        relations.push(RelationshipNode {
            subject_id: r.subject_id,
            object_id: r.object_id,
            label: r.predicate,
        });
        flags.push(r.zero_shot);
    }
    Scene::assemble(&config.world, rec.id, objects, relations, flags).map_err(|e| match e {
        Error::InvalidGraph(detail) => violation(detail),
        other => other,
    })
}

/// Writes `train.json`, `val.json` and `test.json` into `dir`.
pub fn save_dataset(split: &DatasetSplit, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    for (name, scenes) in SPLIT_NAMES.iter().zip([&split.train, &split.val, &split.test]) {
        let file = SplitFile {
            config: split.config.clone(),
            scenes: scenes.iter().map(to_record).collect(),
        };
        let text = serde_json::to_string(&file)?;
        write_atomic(&dir.join(format!("{name}.json")), text.as_bytes())?;
    }
    Ok(())
}

/// Reads one split file, returning its config and scenes.
pub fn load_split_file(path: &Path) -> Result<(DatasetConfig, Vec<Scene>)> {
    let name = path.display().to_string();
    let text = fs::read_to_string(path)?;
    let file: SplitFile = crate::json::from_str(&text, &name)?;
    file.config.validate()?;
    let scenes = file
        .scenes
        .into_iter()
        .map(|rec| from_record(&file.config, rec, &name))
        .collect::<Result<Vec<_>>>()?;
    Ok((file.config, scenes))
}

/// Loads a dataset directory written by [`save_dataset`]. The zero-shot
/// triple set is recovered from the flagged test instances.
pub fn load_dataset(dir: &Path) -> Result<DatasetSplit> {
    let (config, train) = load_split_file(&dir.join("train.json"))?;
    let mut parts = Vec::new();
    for name in &SPLIT_NAMES[1..] {
        let path = dir.join(format!("{name}.json"));
        let (c, scenes) = load_split_file(&path)?;
        if c != config {
            return Err(Error::InvariantViolation {
                context: path.display().to_string(),
                detail: "config differs from train.json".into(),
            });
        }
        parts.push(scenes);
    }
    let test = parts.pop().expect("two parts");
    let val = parts.pop().expect("one part");
    let zero_shot_triples: BTreeSet<Triple> = test
        .iter()
        .flat_map(|s| {
            s.zero_shot
                .iter()
                .enumerate()
                .filter(|(_, &z)| z)
                .map(move |(r, _)| Triple::of(s, r))
        })
        .collect();
    let split = DatasetSplit {
        config,
        train,
        val,
        test,
        zero_shot_triples,
    };
    split.check_masking()?;
    Ok(split)
}
