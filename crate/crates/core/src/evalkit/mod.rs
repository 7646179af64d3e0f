//! Detection post-processing, triplet ranking and Recall@K.

mod evaluate;

pub use evaluate::{
    detection_graph, evaluate, evaluate_scene, Counts, DetectionGraph, EvalConfig, EvalCounts, EvalReport, PredicateAccuracy, Predictor,
    RecallValue, SceneEval, Setup, StabilityReport,
};

use crate::error::{Error, Result};
use crate::graph::{BBox, SceneGraph};
use crate::potentials::{argmax, PotentialSet};

/// Intersection over union; boxes without positive area contribute no
/// overlap.
pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let iw = (a.x2.min(b.x2) - a.x1.max(b.x1)).max(0.0);
    let ih = (a.y2.min(b.y2) - a.y1.max(b.y1)).max(0.0);
    let inter = iw * ih;
    let area = |b: &BBox| (b.x2 - b.x1).max(0.0) * (b.y2 - b.y1).max(0.0);
    let union = area(a) + area(b) - inter;
    if union <= 0.0 || inter <= 0.0 {
        0.0
    } else {
        (inter / union).clamp(0.0, 1.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScoredBox {
    pub bbox: BBox,
    pub label: usize,
    pub score: f64,
}

/// Greedy per-class NMS. Within a class, boxes are visited by score
/// descending (ties: lexicographically smaller coordinates first, then lower
/// index); a box is dropped when its IoU with an already kept box exceeds
/// `threshold`. Returns the kept indices in ascending order.
pub fn nms_per_class(candidates: &[ScoredBox], threshold: f64) -> Result<Vec<usize>> {
    if !(threshold > 0.0 && threshold <= 1.0) {
        return Err(Error::Argument(format!("NMS threshold must lie in (0, 1], got {threshold}")));
    }
    let mut order: Vec<usize> = (0..candidates.len()).collect();
    order.sort_by(|&i, &j| {
        let (a, b) = (&candidates[i], &candidates[j]);
        b.score
            .total_cmp(&a.score)
            .then_with(|| {
                a.bbox
                    .as_array()
                    .iter()
                    .zip(b.bbox.as_array())
                    .map(|(x, y)| x.total_cmp(&y))
                    .find(|o| o.is_ne())
                    .unwrap_or(std::cmp::Ordering::Equal)
            })
            .then(i.cmp(&j))
    });
    let mut kept: Vec<usize> = Vec::new();
    for i in order {
        let c = &candidates[i];
        let suppressed = kept
            .iter()
            .any(|&k| candidates[k].label == c.label && iou(&candidates[k].bbox, &c.bbox) > threshold);
        if !suppressed {
            kept.push(i);
        }
    }
    kept.sort_unstable();
    Ok(kept)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TripletEnd {
    /// Node id in the graph the prediction was made on.
    pub id: usize,
    pub label: usize,
    pub bbox: BBox,
    pub score: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PredictedTriplet {
    pub subject: TripletEnd,
    pub predicate: usize,
    pub predicate_score: f64,
    pub object: TripletEnd,
    /// `P(subject) · P(predicate) · P(object)`.
    pub score: f64,
}

/// Ranking options for [`rank_triplets`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RankOptions {
    pub background: usize,
    pub no_relation: usize,
    /// When set, every non-No-Relation predicate with probability at least
    /// this value is emitted (the top one always is).
    pub multi_predicate_floor: Option<f64>,
}

/// Top-`k` triplets of one image from the marginals `q` over `graph`.
/// Object labels are the per-node argmax; pairs with a Background endpoint
/// are skipped. Ties in score are broken by subject id, object id, then
/// predicate index.
pub fn rank_triplets(graph: &SceneGraph, q: &PotentialSet, k: usize, opts: RankOptions) -> Result<Vec<PredictedTriplet>> {
    if k == 0 {
        return Err(Error::Argument("K must be at least 1".into()));
    }
    q.check_shape(
        graph.objects().len(),
        graph.relations().len(),
        opts.background + 1,
        opts.no_relation + 1,
    )?;
    let ends: Vec<TripletEnd> = graph
        .objects()
        .iter()
        .zip(&q.objects)
        .map(|(o, row)| {
            let label = argmax(row);
            TripletEnd {
                id: o.id,
                label,
                bbox: o.bbox,
                score: row[label],
            }
        })
        .collect();
    let mut out = Vec::new();
    for (row, &(s, o)) in q.relations.iter().zip(graph.endpoints()) {
        let (subject, object) = (ends[s], ends[o]);
        if subject.label == opts.background || object.label == opts.background {
            continue;
        }
        let top = argmax(&row[..opts.no_relation]);
        let mut emit = |p: usize| {
            out.push(PredictedTriplet {
                subject,
                predicate: p,
                predicate_score: row[p],
                object,
                score: subject.score * row[p] * object.score,
            })
        };
        emit(top);
        if let Some(floor) = opts.multi_predicate_floor {
            for p in (0..opts.no_relation).filter(|&p| p != top && row[p] >= floor) {
                emit(p);
            }
        }
    }
    out.sort_by(|a, b| {
        b.score
            .total_cmp(&a.score)
            .then(a.subject.id.cmp(&b.subject.id))
            .then(a.object.id.cmp(&b.object.id))
            .then(a.predicate.cmp(&b.predicate))
    });
    out.truncate(k);
    Ok(out)
}

/// A ground-truth relationship instance.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GtTriplet {
    pub subject_label: usize,
    pub subject_box: BBox,
    pub predicate: usize,
    pub object_label: usize,
    pub object_box: BBox,
}

/// Minimum IoU (exclusive) for a predicted box to localize a GT box.
pub const MATCH_IOU: f64 = 0.5;

/// Ground-truth triplets of a graph, skipping No-Relation instances.
pub fn gt_triplets(graph: &SceneGraph, no_relation: usize) -> Vec<GtTriplet> {
    graph
        .relations()
        .iter()
        .zip(graph.endpoints())
        .filter(|(r, _)| r.label != no_relation)
        .map(|(r, &(s, o))| {
            let (s, o) = (&graph.objects()[s], &graph.objects()[o]);
            GtTriplet {
                subject_label: s.label,
                subject_box: s.bbox,
                predicate: r.label,
                object_label: o.label,
                object_box: o.bbox,
            }
        })
        .collect()
}

pub fn triplet_matches(p: &PredictedTriplet, g: &GtTriplet) -> bool {
    p.predicate == g.predicate
        && p.subject.label == g.subject_label
        && p.object.label == g.object_label
        && iou(&p.subject.bbox, &g.subject_box) > MATCH_IOU
        && iou(&p.object.bbox, &g.object_box) > MATCH_IOU
}

/// Greedy one-to-one matching in rank order: each prediction claims the
/// first unmatched GT instance it matches. Returns `(matched, total GT)`.
pub fn recall_at_k(predictions: &[PredictedTriplet], gt: &[GtTriplet]) -> (usize, usize) {
    let mut taken = vec![false; gt.len()];
    let mut matched = 0;
    for p in predictions {
        if let Some(i) = (0..gt.len()).find(|&i| !taken[i] && triplet_matches(p, &gt[i])) {
            taken[i] = true;
            matched += 1;
        }
    }
    (matched, gt.len())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn iou_values() {
        let a = BBox::new(0.0, 0.0, 10.0, 10.0);
        assert_eq!(iou(&a, &a), 1.0);
        assert_eq!(iou(&a, &BBox::new(20.0, 20.0, 30.0, 30.0)), 0.0);
        assert!((iou(&a, &BBox::new(5.0, 0.0, 15.0, 10.0)) - 50.0 / 150.0).abs() < 1e-15);
        assert_eq!(iou(&a, &BBox::new(3.0, 3.0, 3.0, 8.0)), 0.0);
    }

    #[test]
    fn nms_basics() {
        let b = BBox::new(0.0, 0.0, 10.0, 10.0);
        let one = [ScoredBox { bbox: b, label: 0, score: 0.3 }];
        assert_eq!(nms_per_class(&one, 0.5).unwrap(), vec![0]);
        let same = [
            ScoredBox { bbox: b, label: 0, score: 0.8 },
            ScoredBox { bbox: b, label: 0, score: 0.9 },
        ];
        assert_eq!(nms_per_class(&same, 0.5).unwrap(), vec![1]);
        let classes = [
            ScoredBox { bbox: b, label: 0, score: 0.8 },
            ScoredBox { bbox: b, label: 1, score: 0.9 },
        ];
        assert_eq!(nms_per_class(&classes, 0.5).unwrap(), vec![0, 1]);
        assert!(nms_per_class(&classes, 0.0).is_err());
    }

    fn end(id: usize, label: usize, x: f64) -> TripletEnd {
        TripletEnd {
            id,
            label,
            bbox: BBox::new(x, 0.0, x + 10.0, 10.0),
            score: 1.0,
        }
    }

    fn pred(s: TripletEnd, p: usize, o: TripletEnd) -> PredictedTriplet {
        PredictedTriplet {
            subject: s,
            predicate: p,
            predicate_score: 1.0,
            object: o,
            score: 1.0,
        }
    }

    fn gt(s: TripletEnd, p: usize, o: TripletEnd) -> GtTriplet {
        GtTriplet {
            subject_label: s.label,
            subject_box: s.bbox,
            predicate: p,
            object_label: o.label,
            object_box: o.bbox,
        }
    }

    #[test]
    fn recall_example() {
        let (a, b, c) = (end(0, 0, 0.0), end(1, 1, 20.0), end(2, 2, 40.0));
        let gts = [gt(a, 0, b), gt(b, 1, c)];
        let preds = [pred(a, 0, b), pred(a, 1, b)];
        assert_eq!(recall_at_k(&preds, &gts), (1, 2));
        // a duplicate of an already matched instance does not count twice
        assert_eq!(recall_at_k(&[pred(a, 0, b), pred(a, 0, b)], &gts), (1, 2));
    }

    #[test]
    fn recall_requires_localization() {
        let (a, b) = (end(0, 0, 0.0), end(1, 1, 20.0));
        let gts = [gt(a, 0, b)];
        let mut shifted = a;
        // IoU of [5, 15] against [0, 10] is 1/3
        shifted.bbox = BBox::new(5.0, 0.0, 15.0, 10.0);
        assert_eq!(recall_at_k(&[pred(shifted, 0, b)], &gts), (0, 1));
    }
}
