use proptest::prelude::*;
use sgcrf_core::{BBox, NodeRef, ObjectNode, RelationshipNode, SceneGraph, Vocabulary};

fn vocab() -> Vocabulary {
    Vocabulary::new(["a", "b", "c"], ["p", "q"])
}

/// Random graph: object labels over 4 classes (3 = Background), and a random
/// subset of ordered pairs with labels over 3 predicates (2 = No-Relation).
fn arb_graph() -> impl Strategy<Value = SceneGraph> {
    (1usize..7).prop_flat_map(|n| {
        let pairs: Vec<(usize, usize)> = (0..n)
            .flat_map(|s| (0..n).filter(move |&o| o != s).map(move |o| (s, o)))
            .collect();
        let m = pairs.len();
        (
            prop::collection::vec(0usize..4, n),
            prop::collection::vec(prop::option::of(0usize..3), m),
        )
            .prop_map(move |(labels, rels)| {
                let objects = labels
                    .iter()
                    .enumerate()
                    .map(|(i, &label)| ObjectNode {
                        // sparse ids so positions and ids differ
                        id: 10 + 3 * i,
                        label,
                        bbox: BBox::new(i as f64, 0.0, i as f64 + 5.0, 5.0),
                    })
                    .collect();
                let relations = pairs
                    .iter()
                    .zip(&rels)
                    .filter_map(|(&(s, o), l)| {
                        l.map(|label| RelationshipNode {
                            subject_id: 10 + 3 * s,
                            object_id: 10 + 3 * o,
                            label,
                        })
                    })
                    .collect();
                SceneGraph::new(objects, relations).unwrap()
            })
    })
}

proptest! {
    #[test]
    fn prune_is_idempotent(g in arb_graph()) {
        let v = vocab();
        let once = g.prune(&v);
        prop_assert_eq!(once.prune(&v), once.clone());
        prop_assert!(once.objects().iter().all(|o| o.label != v.background()));
        prop_assert!(once.relations().iter().all(|r| r.label != v.no_relation()));
        // foreground objects survive even when isolated
        let fg = g.objects().iter().filter(|o| o.label != v.background()).count();
        prop_assert_eq!(once.objects().len(), fg);
    }

    #[test]
    fn neighborhoods_are_symmetric(g in arb_graph()) {
        for r in g.relations() {
            let node = NodeRef::Relation { subject: r.subject_id, object: r.object_id };
            let nb = g.neighbors(node).unwrap();
            prop_assert_eq!(nb.len(), 2);
            for o in nb {
                prop_assert!(g.neighbors(o).unwrap().contains(&node));
            }
        }
        for o in g.objects() {
            let node = NodeRef::Object(o.id);
            let nb = g.neighbors(node).unwrap();
            // oracle: count the relations touching o directly
            let expected = g
                .relations()
                .iter()
                .filter(|r| r.subject_id == o.id || r.object_id == o.id)
                .count();
            prop_assert_eq!(nb.len(), expected);
            for r in nb {
                prop_assert!(g.neighbors(r).unwrap().contains(&node));
            }
        }
    }
}

#[test]
fn unknown_node_is_an_error() {
    let g = SceneGraph::fully_connected(
        vec![ObjectNode {
            id: 0,
            label: 0,
            bbox: BBox::new(0.0, 0.0, 1.0, 1.0),
        }],
        2,
    )
    .unwrap();
    assert!(g.neighbors(NodeRef::Object(5)).is_err());
    assert!(g.neighbors(NodeRef::Relation { subject: 0, object: 1 }).is_err());
    assert!(g.neighbors(NodeRef::Object(0)).unwrap().is_empty());
}

#[test]
fn worked_pruning_example() {
    let v = vocab();
    let b = BBox::new(0.0, 0.0, 1.0, 1.0);
    let objects = vec![
        ObjectNode { id: 0, label: 0, bbox: b },
        ObjectNode { id: 1, label: 1, bbox: b },
        ObjectNode { id: 2, label: v.background(), bbox: b },
    ];
    let relations = vec![
        RelationshipNode { subject_id: 0, object_id: 1, label: 0 },
        RelationshipNode { subject_id: 1, object_id: 0, label: v.no_relation() },
        RelationshipNode { subject_id: 0, object_id: 2, label: 1 },
    ];
    let pruned = SceneGraph::new(objects, relations).unwrap().prune(&v);
    assert_eq!(pruned.objects().iter().map(|o| o.id).collect::<Vec<_>>(), vec![0, 1]);
    assert_eq!(pruned.relations().len(), 1);
    assert_eq!((pruned.relations()[0].subject_id, pruned.relations()[0].object_id), (0, 1));
}
