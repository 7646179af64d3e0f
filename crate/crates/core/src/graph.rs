//! Scene-graph data model.
//!
//! A scene graph is bipartite: object-instance nodes and relationship nodes,
//! with directed edges `subject -> relationship -> object`. Relationship nodes
//! are keyed by their ordered `(subject_id, object_id)` pair, so both `i -> j`
//! and `j -> i` may exist but never two nodes for the same direction.

use std::collections::HashMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::potentials::PotentialSet;

/// Axis-aligned box `[x1, y1, x2, y2]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 4]", into = "[f64; 4]")]
pub struct BBox {
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
}

impl From<[f64; 4]> for BBox {
    fn from(v: [f64; 4]) -> Self {
        BBox::new(v[0], v[1], v[2], v[3])
    }
}

impl From<BBox> for [f64; 4] {
    fn from(b: BBox) -> Self {
        [b.x1, b.y1, b.x2, b.y2]
    }
}

impl BBox {
    pub const fn new(x1: f64, y1: f64, x2: f64, y2: f64) -> Self {
        BBox { x1, y1, x2, y2 }
    }

    pub fn from_center(cx: f64, cy: f64, w: f64, h: f64) -> Self {
        BBox::new(cx - 0.5 * w, cy - 0.5 * h, cx + 0.5 * w, cy + 0.5 * h)
    }

    /// Strictly positive extent on both axes and finite coordinates.
    pub fn is_valid(&self) -> bool {
        [self.x1, self.y1, self.x2, self.y2].iter().all(|v| v.is_finite())
            && self.x1 < self.x2
            && self.y1 < self.y2
    }

    pub fn width(&self) -> f64 {
        self.x2 - self.x1
    }

    pub fn height(&self) -> f64 {
        self.y2 - self.y1
    }

    pub fn area(&self) -> f64 {
        self.width().max(0.0) * self.height().max(0.0)
    }

    pub fn center(&self) -> (f64, f64) {
        (0.5 * (self.x1 + self.x2), 0.5 * (self.y1 + self.y2))
    }

    /// Smallest box enclosing both.
    pub fn union(&self, other: &BBox) -> BBox {
        BBox::new(
            self.x1.min(other.x1),
            self.y1.min(other.y1),
            self.x2.max(other.x2),
            self.y2.max(other.y2),
        )
    }

    pub fn as_array(&self) -> [f64; 4] {
        (*self).into()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObjectNode {
    pub id: usize,
    pub label: usize,
    pub bbox: BBox,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RelationshipNode {
    pub subject_id: usize,
    pub object_id: usize,
    pub label: usize,
}

/// Reference to a node of a [`SceneGraph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum NodeRef {
    Object(usize),
    Relation { subject: usize, object: usize },
}

impl std::fmt::Display for NodeRef {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            NodeRef::Object(id) => write!(f, "object {id}"),
            NodeRef::Relation { subject, object } => write!(f, "relation {subject}->{object}"),
        }
    }
}

/// Class names for both node kinds. The last object class is "Background"
/// and the last predicate class is "No-Relation".
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Vocabulary {
    pub object_names: Vec<String>,
    pub predicate_names: Vec<String>,
}

impl Vocabulary {
    pub const BACKGROUND: &'static str = "background";
    pub const NO_RELATION: &'static str = "no_relation";

    /// Builds a vocabulary from the foreground names, appending the reserved
    /// Background / No-Relation classes.
    pub fn new<S: Into<String>>(
        objects: impl IntoIterator<Item = S>,
        predicates: impl IntoIterator<Item = S>,
    ) -> Self {
        let mut object_names: Vec<String> = objects.into_iter().map(Into::into).collect();
        let mut predicate_names: Vec<String> = predicates.into_iter().map(Into::into).collect();
        object_names.push(Self::BACKGROUND.to_string());
        predicate_names.push(Self::NO_RELATION.to_string());
        Vocabulary {
            object_names,
            predicate_names,
        }
    }

    /// Number of object classes including Background (C_o + 1).
    pub fn num_object_classes(&self) -> usize {
        self.object_names.len()
    }

    /// Number of predicate classes including No-Relation (C_r + 1).
    pub fn num_predicate_classes(&self) -> usize {
        self.predicate_names.len()
    }

    pub fn background(&self) -> usize {
        self.object_names.len() - 1
    }

    pub fn no_relation(&self) -> usize {
        self.predicate_names.len() - 1
    }

    pub fn object_name(&self, label: usize) -> &str {
        self.object_names.get(label).map_or("?", String::as_str)
    }

    pub fn predicate_name(&self, label: usize) -> &str {
        self.predicate_names.get(label).map_or("?", String::as_str)
    }
}

/// Immutable scene graph `(V_o, V_r, E)`; edges are implied by the
/// relationship endpoints.
#[derive(Clone, Debug, Default)]
pub struct SceneGraph {
    objects: Vec<ObjectNode>,
    relations: Vec<RelationshipNode>,
    object_index: HashMap<usize, usize>,
    relation_index: HashMap<(usize, usize), usize>,
    endpoints: Vec<(usize, usize)>,
    incident: Vec<Vec<usize>>,
}

impl PartialEq for SceneGraph {
    fn eq(&self, other: &Self) -> bool {
        self.objects == other.objects && self.relations == other.relations
    }
}

impl SceneGraph {
    pub fn new(objects: Vec<ObjectNode>, relations: Vec<RelationshipNode>) -> Result<Self> {
        let mut object_index = HashMap::with_capacity(objects.len());
        for (idx, o) in objects.iter().enumerate() {
            if !o.bbox.is_valid() {
                return Err(Error::InvalidGraph(format!(
                    "object {} has invalid box {:?}",
                    o.id,
                    o.bbox.as_array()
                )));
            }
            if object_index.insert(o.id, idx).is_some() {
                return Err(Error::InvalidGraph(format!("duplicate object id {}", o.id)));
            }
        }

        let mut relation_index = HashMap::with_capacity(relations.len());
        let mut endpoints = Vec::with_capacity(relations.len());
        let mut incident = vec![Vec::new(); objects.len()];
        for (idx, r) in relations.iter().enumerate() {
            if r.subject_id == r.object_id {
                return Err(Error::InvalidGraph(format!(
                    "relation {}->{} is a self loop",
                    r.subject_id, r.object_id
                )));
            }
            let s = *object_index.get(&r.subject_id).ok_or_else(|| {
                Error::InvalidGraph(format!("relation subject {} does not exist", r.subject_id))
            })?;
            let o = *object_index.get(&r.object_id).ok_or_else(|| {
                Error::InvalidGraph(format!("relation object {} does not exist", r.object_id))
            })?;
            if relation_index.insert((r.subject_id, r.object_id), idx).is_some() {
                return Err(Error::InvalidGraph(format!(
                    "duplicate relation {}->{}",
                    r.subject_id, r.object_id
                )));
            }
            endpoints.push((s, o));
            incident[s].push(idx);
            incident[o].push(idx);
        }

        Ok(SceneGraph {
            objects,
            relations,
            object_index,
            relation_index,
            endpoints,
            incident,
        })
    }

    /// Graph over `objects` with one relationship node per ordered pair, all
    /// labeled `label`.
    pub fn fully_connected(objects: Vec<ObjectNode>, label: usize) -> Result<Self> {
        let mut relations = Vec::with_capacity(objects.len() * objects.len().saturating_sub(1));
        for s in &objects {
            for o in &objects {
                if s.id != o.id {
                    relations.push(RelationshipNode {
                        subject_id: s.id,
                        object_id: o.id,
                        label,
                    });
                }
            }
        }
        SceneGraph::new(objects, relations)
    }

    pub fn objects(&self) -> &[ObjectNode] {
        &self.objects
    }

    pub fn relations(&self) -> &[RelationshipNode] {
        &self.relations
    }

    pub fn is_empty(&self) -> bool {
        self.objects.is_empty()
    }

    pub fn object_position(&self, id: usize) -> Option<usize> {
        self.object_index.get(&id).copied()
    }

    pub fn relation_position(&self, subject_id: usize, object_id: usize) -> Option<usize> {
        self.relation_index.get(&(subject_id, object_id)).copied()
    }

    /// `(subject, object)` positions in [`Self::objects`] for each relation.
    pub fn endpoints(&self) -> &[(usize, usize)] {
        &self.endpoints
    }

    /// Relation positions incident to the object at position `obj`.
    pub fn incident(&self, obj: usize) -> &[usize] {
        &self.incident[obj]
    }

    /// Checks every label against the class counts of `vocab`.
    pub fn validate_labels(&self, vocab: &Vocabulary) -> Result<()> {
        for o in &self.objects {
            if o.label >= vocab.num_object_classes() {
                return Err(Error::InvalidGraph(format!(
                    "object {} label {} exceeds {} classes",
                    o.id,
                    o.label,
                    vocab.num_object_classes()
                )));
            }
        }
        for r in &self.relations {
            if r.label >= vocab.num_predicate_classes() {
                return Err(Error::InvalidGraph(format!(
                    "relation {}->{} label {} exceeds {} classes",
                    r.subject_id,
                    r.object_id,
                    r.label,
                    vocab.num_predicate_classes()
                )));
            }
        }
        Ok(())
    }

    /// 1-hop neighborhood, ignoring edge direction. A relationship node's
    /// neighbors are its subject and object; an object node's neighbors are
    /// the relationship nodes it takes part in.
    pub fn neighbors(&self, node: NodeRef) -> Result<Vec<NodeRef>> {
        match node {
            NodeRef::Object(id) => {
                let pos = self
                    .object_position(id)
                    .ok_or_else(|| Error::UnknownNode(node.to_string()))?;
                Ok(self.incident[pos]
                    .iter()
                    .map(|&r| {
                        let rel = &self.relations[r];
                        NodeRef::Relation {
                            subject: rel.subject_id,
                            object: rel.object_id,
                        }
                    })
                    .collect())
            }
            NodeRef::Relation { subject, object } => {
                self.relation_position(subject, object)
                    .ok_or_else(|| Error::UnknownNode(node.to_string()))?;
                Ok(vec![NodeRef::Object(subject), NodeRef::Object(object)])
            }
        }
    }

    /// Drops relationship nodes labeled No-Relation and object nodes labeled
    /// Background (with every relationship touching them). Objects left
    /// without relationships are kept.
    pub fn prune(&self, vocab: &Vocabulary) -> SceneGraph {
        let background = vocab.background();
        let no_relation = vocab.no_relation();
        let objects: Vec<ObjectNode> = self
            .objects
            .iter()
            .filter(|o| o.label != background)
            .cloned()
            .collect();
        let kept: std::collections::HashSet<usize> = objects.iter().map(|o| o.id).collect();
        let relations = self
            .relations
            .iter()
            .filter(|r| {
                r.label != no_relation && kept.contains(&r.subject_id) && kept.contains(&r.object_id)
            })
            .cloned()
            .collect();
        SceneGraph::new(objects, relations).expect("subgraph of a valid graph is valid")
    }

    /// Same topology with new labels (e.g. argmax of marginals).
    pub fn relabeled(&self, object_labels: &[usize], relation_labels: &[usize]) -> Result<Self> {
        if object_labels.len() != self.objects.len() {
            return Err(Error::dim("relabeled", self.objects.len(), object_labels.len()));
        }
        if relation_labels.len() != self.relations.len() {
            return Err(Error::dim("relabeled", self.relations.len(), relation_labels.len()));
        }
        let mut g = self.clone();
        for (o, &l) in g.objects.iter_mut().zip(object_labels) {
            o.label = l;
        }
        for (r, &l) in g.relations.iter_mut().zip(relation_labels) {
            r.label = l;
        }
        Ok(g)
    }

    /// Restricts the relationship nodes to those accepted by `keep`.
    pub fn filter_relations(&self, mut keep: impl FnMut(&RelationshipNode) -> bool) -> SceneGraph {
        let relations = self.relations.iter().filter(|r| keep(r)).cloned().collect();
        SceneGraph::new(self.objects.clone(), relations).expect("subgraph of a valid graph is valid")
    }
}

fn dot_escape(s: &str) -> String {
    s.replace('\\', "\\\\").replace('"', "\\\"")
}

fn top1(row: &[f64]) -> f64 {
    row.iter().copied().fold(f64::NEG_INFINITY, f64::max)
}

/// Renders the graph as Graphviz DOT. Object nodes are boxes, relationship
/// nodes ellipses. When `marginals` is supplied (aligned with the graph's
/// node order) each label carries the node's top-1 probability.
pub fn export_dot(graph: &SceneGraph, marginals: Option<&PotentialSet>, vocab: &Vocabulary) -> String {
    let mut out = String::from("digraph scene_graph {\n");
    for (idx, o) in graph.objects().iter().enumerate() {
        let mut label = dot_escape(vocab.object_name(o.label));
        if let Some(row) = marginals.and_then(|m| m.objects.get(idx)) {
            let _ = write!(label, "\\n{:.3}", top1(row));
        }
        let _ = writeln!(out, "  o{} [shape=box, label=\"{}\"];", o.id, label);
    }
    for (idx, r) in graph.relations().iter().enumerate() {
        let mut label = dot_escape(vocab.predicate_name(r.label));
        if let Some(row) = marginals.and_then(|m| m.relations.get(idx)) {
            let _ = write!(label, "\\n{:.3}", top1(row));
        }
        let _ = writeln!(
            out,
            "  r{}_{} [shape=ellipse, label=\"{}\"];",
            r.subject_id, r.object_id, label
        );
    }
    for r in graph.relations() {
        let _ = writeln!(out, "  o{0} -> r{0}_{1};", r.subject_id, r.object_id);
        let _ = writeln!(out, "  r{0}_{1} -> o{1};", r.subject_id, r.object_id);
    }
    out.push_str("}\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn obj(id: usize, label: usize) -> ObjectNode {
        let x = id as f64 * 10.0;
        ObjectNode {
            id,
            label,
            bbox: BBox::new(x, 0.0, x + 5.0, 5.0),
        }
    }

    fn rel(s: usize, o: usize, label: usize) -> RelationshipNode {
        RelationshipNode {
            subject_id: s,
            object_id: o,
            label,
        }
    }

    fn vocab() -> Vocabulary {
        Vocabulary::new(["dog", "car", "street"], ["sitting_inside", "on"])
    }

    #[test]
    fn relation_neighbors_are_subject_and_object() {
        let g = SceneGraph::new(vec![obj(1, 0), obj(2, 1)], vec![rel(1, 2, 0)]).unwrap();
        let r = NodeRef::Relation { subject: 1, object: 2 };
        assert_eq!(g.neighbors(r).unwrap(), vec![NodeRef::Object(1), NodeRef::Object(2)]);
        assert_eq!(g.neighbors(NodeRef::Object(1)).unwrap(), vec![r]);
    }

    #[test]
    fn object_in_three_triplets() {
        let g = SceneGraph::new(
            vec![obj(1, 0), obj(2, 1), obj(3, 2), obj(4, 0)],
            vec![rel(1, 2, 0), rel(3, 1, 1), rel(1, 4, 0), rel(2, 3, 1)],
        )
        .unwrap();
        // brute-force incidence enumeration
        let mut expected: Vec<NodeRef> = g
            .relations()
            .iter()
            .filter(|r| r.subject_id == 1 || r.object_id == 1)
            .map(|r| NodeRef::Relation { subject: r.subject_id, object: r.object_id })
            .collect();
        let mut got = g.neighbors(NodeRef::Object(1)).unwrap();
        expected.sort();
        got.sort();
        assert_eq!(got.len(), 3);
        assert_eq!(got, expected);
    }

    #[test]
    fn unknown_node_is_an_error() {
        let g = SceneGraph::new(vec![obj(1, 0)], vec![]).unwrap();
        assert!(matches!(g.neighbors(NodeRef::Object(9)), Err(Error::UnknownNode(_))));
        assert!(g.neighbors(NodeRef::Relation { subject: 1, object: 2 }).is_err());
    }

    #[test]
    fn construction_rejects_bad_graphs() {
        assert!(SceneGraph::new(vec![obj(1, 0), obj(1, 0)], vec![]).is_err());
        assert!(SceneGraph::new(vec![obj(1, 0)], vec![rel(1, 1, 0)]).is_err());
        assert!(SceneGraph::new(vec![obj(1, 0)], vec![rel(1, 2, 0)]).is_err());
        assert!(SceneGraph::new(
            vec![obj(1, 0), obj(2, 0)],
            vec![rel(1, 2, 0), rel(1, 2, 1)]
        )
        .is_err());
        let bad = ObjectNode { id: 1, label: 0, bbox: BBox::new(5.0, 0.0, 1.0, 3.0) };
        assert!(SceneGraph::new(vec![bad], vec![]).is_err());
        // both directions are allowed
        assert!(SceneGraph::new(vec![obj(1, 0), obj(2, 0)], vec![rel(1, 2, 0), rel(2, 1, 0)]).is_ok());
    }

    #[test]
    fn prune_no_relation() {
        let v = vocab();
        let g = SceneGraph::new(vec![obj(1, 0), obj(2, 1)], vec![rel(1, 2, v.no_relation())]).unwrap();
        let p = g.prune(&v);
        assert_eq!(p.objects().len(), 2);
        assert!(p.relations().is_empty());
    }

    #[test]
    fn prune_background_removes_incident_relations() {
        let v = vocab();
        let g = SceneGraph::new(
            vec![obj(1, v.background()), obj(2, 1), obj(3, 2)],
            vec![rel(1, 2, 0), rel(2, 3, 1)],
        )
        .unwrap();
        let p = g.prune(&v);
        assert_eq!(p.objects().iter().map(|o| o.id).collect::<Vec<_>>(), vec![2, 3]);
        assert_eq!(p.relations(), &[rel(2, 3, 1)]);
    }

    #[test]
    fn prune_identity_and_empty() {
        let v = vocab();
        let g = SceneGraph::new(vec![obj(1, 0), obj(2, 1)], vec![rel(1, 2, 0)]).unwrap();
        assert_eq!(g.prune(&v), g);
        assert!(SceneGraph::default().prune(&v).is_empty());
    }

    #[test]
    fn dot_empty_graph() {
        assert_eq!(export_dot(&SceneGraph::default(), None, &vocab()), "digraph scene_graph {\n}\n");
    }

    #[test]
    fn dot_single_triplet() {
        let g = SceneGraph::new(vec![obj(1, 0), obj(2, 1)], vec![rel(1, 2, 0)]).unwrap();
        let dot = export_dot(&g, None, &vocab());
        assert_eq!(dot.matches("shape=box").count(), 2);
        assert_eq!(dot.matches("shape=ellipse").count(), 1);
        assert_eq!(dot.matches("->").count(), 2);
        assert!(dot.contains("label=\"dog\""));
        assert!(dot.contains("label=\"car\""));
        assert!(dot.contains("label=\"sitting_inside\""));
        assert_eq!(dot, export_dot(&g, None, &vocab()));
    }

    #[test]
    fn dot_with_marginals() {
        let g = SceneGraph::new(vec![obj(1, 0), obj(2, 1)], vec![rel(1, 2, 0)]).unwrap();
        let m = PotentialSet {
            objects: vec![vec![0.9, 0.05, 0.05, 0.0], vec![0.2, 0.7, 0.1, 0.0]],
            relations: vec![vec![0.6, 0.3, 0.1]],
        };
        let dot = export_dot(&g, Some(&m), &vocab());
        assert!(dot.contains("dog\\n0.900"));
        assert!(dot.contains("sitting_inside\\n0.600"));
    }
}
