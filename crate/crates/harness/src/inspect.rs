//! Looking inside single predictions.

use anyhow::Result;
use sgcrf_core::argmax;
use sgcrf_core::model::SgModel;
use sgcrf_core::synthworld::Scene;
use sgcrf_core::vrd::GraphFeatures;

/// Object ids that `Q^0` mislabels and the final marginals label correctly,
/// with predicted object labels (no clamping).
pub fn corrected_objects(model: &SgModel, scene: &Scene) -> Result<Vec<usize>> {
    let features = GraphFeatures {
        objects: &scene.features.objects,
        relations: &scene.features.relations,
    };
    let trace = model.infer(&scene.gt_graph, features, None)?;
    let (first, last) = (&trace.marginals[0], trace.last());
    Ok(scene
        .gt_graph
        .objects()
        .iter()
        .enumerate()
        .filter(|&(i, o)| argmax(&first.objects[i]) != o.label && argmax(&last.objects[i]) == o.label)
        .map(|(_, o)| o.id)
        .collect())
}

/// First scene (in order) where message passing fixes an object label.
pub fn find_correction_scene<'a>(model: &SgModel, scenes: &'a [Scene]) -> Result<Option<&'a Scene>> {
    for s in scenes {
        if !corrected_objects(model, s)?.is_empty() {
            return Ok(Some(s));
        }
    }
    Ok(None)
}
