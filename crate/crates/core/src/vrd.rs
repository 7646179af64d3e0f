//! Unary heads: per-node class scores from features, with the relation
//! sequence layer deciding how subject/object features enter the
//! relationship head.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::SceneGraph;
use crate::numcore::{affine, affine_backward, relu, relu_backward, Parameter, Tensor};
use crate::potentials::PotentialSet;

/// How the relationship head input is assembled.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RslMode {
    /// Relation feature only.
    None,
    /// `[F_i − F_j, F_rel]`: the pair as a translation in feature space.
    TranseConcat,
    /// `[F_i, F_rel, F_j]`.
    #[default]
    TripleConcat,
}

impl RslMode {
    pub fn input_dim(self, object_dim: usize, relation_dim: usize) -> usize {
        match self {
            RslMode::None => relation_dim,
            RslMode::TranseConcat => object_dim + relation_dim,
            RslMode::TripleConcat => 2 * object_dim + relation_dim,
        }
    }
}

impl std::fmt::Display for RslMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            RslMode::None => "none",
            RslMode::TranseConcat => "transe_concat",
            RslMode::TripleConcat => "triple_concat",
        })
    }
}

pub fn rsl_features(f_i: &[f64], f_j: &[f64], f_rel: &[f64], mode: RslMode) -> Result<Vec<f64>> {
    if f_i.len() != f_j.len() {
        return Err(Error::dim("rsl_features", f_i.len(), f_j.len()));
    }
    Ok(match mode {
        RslMode::None => f_rel.to_vec(),
        RslMode::TranseConcat => f_i.iter().zip(f_j).map(|(a, b)| a - b).chain(f_rel.iter().copied()).collect(),
        RslMode::TripleConcat => [f_i, f_rel, f_j].concat(),
    })
}

/// Node features aligned with a graph: one row per object node and one per
/// relationship node.
#[derive(Clone, Copy, Debug)]
pub struct GraphFeatures<'a> {
    pub objects: &'a [Vec<f64>],
    pub relations: &'a [Vec<f64>],
}

/// Object head `d_obj -> C_o + 1` and relationship head `d_in -> C_r + 1`.
#[derive(Clone, Debug, PartialEq)]
pub struct VrdHead {
    pub mode: RslMode,
    /// Skip the ReLU on head outputs.
    pub linear: bool,
    pub w_obj: Parameter,
    pub b_obj: Parameter,
    pub w_rel: Parameter,
    pub b_rel: Parameter,
}

/// Initial bias of the heads; positive so every unit starts active under
/// the ReLU.
const BIAS_INIT: f64 = 0.5;

/// Forward intermediates needed by [`VrdHead::backward`].
#[derive(Clone, Debug, Default)]
pub struct VrdCache {
    obj_pre: Vec<Vec<f64>>,
    rel_inputs: Vec<Vec<f64>>,
    rel_pre: Vec<Vec<f64>>,
}

impl VrdHead {
    pub fn new(
        mode: RslMode,
        linear: bool,
        object_dim: usize,
        relation_dim: usize,
        object_classes: usize,
        predicate_classes: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let d_in = mode.input_dim(object_dim, relation_dim);
        let mut b_obj = Tensor::zeros(&[object_classes]);
        let mut b_rel = Tensor::zeros(&[predicate_classes]);
        b_obj.fill(BIAS_INIT);
        b_rel.fill(BIAS_INIT);
        VrdHead {
            mode,
            linear,
            w_obj: Parameter::new(
                "vrd.w_obj",
                Tensor::uniform(&[object_classes, object_dim], (object_dim as f64).sqrt().recip(), rng),
            ),
            b_obj: Parameter::new("vrd.b_obj", b_obj),
            w_rel: Parameter::new(
                "vrd.w_rel",
                Tensor::uniform(&[predicate_classes, d_in], (d_in as f64).sqrt().recip(), rng),
            ),
            b_rel: Parameter::new("vrd.b_rel", b_rel),
        }
    }

    pub fn object_dim(&self) -> usize {
        self.w_obj.value.cols()
    }

    pub fn input_dim(&self) -> usize {
        self.w_rel.value.cols()
    }

    pub fn object_classes(&self) -> usize {
        self.w_obj.value.rows()
    }

    pub fn predicate_classes(&self) -> usize {
        self.w_rel.value.rows()
    }

    fn activate(&self, pre: &[f64]) -> Vec<f64> {
        if self.linear {
            pre.to_vec()
        } else {
            relu(pre)
        }
    }

    fn deactivate(&self, pre: &[f64], g: &[f64]) -> Vec<f64> {
        if self.linear {
            g.to_vec()
        } else {
            relu_backward(pre, g)
        }
    }

    pub fn object_potential(&self, feature: &[f64]) -> Result<Vec<f64>> {
        Ok(self.activate(&affine(&self.w_obj.value, feature, self.b_obj.value.data())?))
    }

    /// Unary potentials for every node of `graph`.
    pub fn forward(&self, graph: &SceneGraph, features: GraphFeatures<'_>) -> Result<(PotentialSet, VrdCache)> {
        if features.objects.len() != graph.objects().len() {
            return Err(Error::dim("object features", graph.objects().len(), features.objects.len()));
        }
        if features.relations.len() != graph.relations().len() {
            return Err(Error::dim("relation features", graph.relations().len(), features.relations.len()));
        }
        let mut cache = VrdCache::default();
        let mut out = PotentialSet::default();
        for f in features.objects {
            let pre = affine(&self.w_obj.value, f, self.b_obj.value.data())?;
            out.objects.push(self.activate(&pre));
            cache.obj_pre.push(pre);
        }
        for (f_rel, &(s, o)) in features.relations.iter().zip(graph.endpoints()) {
            let x = rsl_features(&features.objects[s], &features.objects[o], f_rel, self.mode)?;
            let pre = affine(&self.w_rel.value, &x, self.b_rel.value.data())?;
            out.relations.push(self.activate(&pre));
            cache.rel_inputs.push(x);
            cache.rel_pre.push(pre);
        }
        Ok((out, cache))
    }

    /// Accumulates parameter gradients given `dL/dψ_u`.
    pub fn backward(&mut self, features: GraphFeatures<'_>, cache: &VrdCache, grad: &PotentialSet) -> Result<()> {
        for ((f, pre), g) in features.objects.iter().zip(&cache.obj_pre).zip(&grad.objects) {
            let d = self.deactivate(pre, g);
            affine_backward(&self.w_obj.value, f, &d, &mut self.w_obj.grad, self.b_obj.grad.data_mut())?;
        }
        for ((x, pre), g) in cache.rel_inputs.iter().zip(&cache.rel_pre).zip(&grad.relations) {
            let d = self.deactivate(pre, g);
            affine_backward(&self.w_rel.value, x, &d, &mut self.w_rel.grad, self.b_rel.grad.data_mut())?;
        }
        Ok(())
    }

    pub fn parameters(&self) -> [&Parameter; 4] {
        [&self.w_obj, &self.b_obj, &self.w_rel, &self.b_rel]
    }

    pub fn parameters_mut(&mut self) -> [&mut Parameter; 4] {
        [&mut self.w_obj, &mut self.b_obj, &mut self.w_rel, &mut self.b_rel]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{BBox, ObjectNode};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn rsl_blocks() {
        let a = [1.0, 2.0];
        let b = [0.5, -1.0];
        let r = [9.0, 8.0, 7.0];
        assert_eq!(rsl_features(&a, &b, &r, RslMode::None).unwrap(), r);
        assert_eq!(rsl_features(&a, &a, &r, RslMode::TranseConcat).unwrap(), [0.0, 0.0, 9.0, 8.0, 7.0]);
        let fwd = rsl_features(&a, &b, &r, RslMode::TranseConcat).unwrap();
        let rev = rsl_features(&b, &a, &r, RslMode::TranseConcat).unwrap();
        assert_eq!(fwd[..2], [-rev[0], -rev[1]]);
        assert_eq!(fwd[2..], rev[2..]);
        assert_eq!(
            rsl_features(&a, &b, &r, RslMode::TripleConcat).unwrap(),
            [1.0, 2.0, 9.0, 8.0, 7.0, 0.5, -1.0]
        );
        assert_ne!(
            rsl_features(&a, &b, &r, RslMode::TripleConcat).unwrap(),
            rsl_features(&b, &a, &r, RslMode::TripleConcat).unwrap()
        );
        assert!(rsl_features(&a, &r, &r, RslMode::TranseConcat).is_err());
    }

    #[test]
    fn input_dims() {
        assert_eq!(RslMode::None.input_dim(29, 45), 45);
        assert_eq!(RslMode::TranseConcat.input_dim(29, 45), 74);
        assert_eq!(RslMode::TripleConcat.input_dim(29, 45), 103);
    }

    fn pair_graph() -> SceneGraph {
        let objects = (0..2)
            .map(|id| ObjectNode {
                id,
                label: 0,
                bbox: BBox::new(0.0, 0.0, 1.0, 1.0),
            })
            .collect();
        SceneGraph::fully_connected(objects, 0).unwrap()
    }

    #[test]
    fn zero_weights_give_zero_potentials() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut head = VrdHead::new(RslMode::TripleConcat, false, 3, 4, 5, 3, &mut rng);
        for p in head.parameters_mut() {
            p.value.fill(0.0);
        }
        let objs = vec![vec![1.0, 2.0, 3.0], vec![-1.0, 0.0, 1.0]];
        let rels = vec![vec![1.0; 4], vec![2.0; 4]];
        let (psi, _) = head
            .forward(&pair_graph(), GraphFeatures { objects: &objs, relations: &rels })
            .unwrap();
        assert!(psi.objects.iter().chain(&psi.relations).flatten().all(|&v| v == 0.0));
    }

    #[test]
    fn order_blind_without_rsl() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let head = VrdHead::new(RslMode::None, false, 3, 4, 5, 3, &mut rng);
        let objs = vec![vec![1.0, 2.0, 3.0], vec![-1.0, 0.0, 1.0]];
        let shared = vec![0.3, -0.2, 0.9, 0.1];
        let rels = vec![shared.clone(), shared];
        let (psi, _) = head
            .forward(&pair_graph(), GraphFeatures { objects: &objs, relations: &rels })
            .unwrap();
        assert_eq!(psi.relations[0], psi.relations[1]);

        let ordered = VrdHead::new(RslMode::TripleConcat, true, 3, 4, 5, 3, &mut rng);
        let (psi, _) = ordered
            .forward(&pair_graph(), GraphFeatures { objects: &objs, relations: &rels })
            .unwrap();
        assert_ne!(psi.relations[0], psi.relations[1]);
    }
}
