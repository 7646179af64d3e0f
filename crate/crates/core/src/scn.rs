//! Semantic compatibility network: mean-field refinement of unary
//! potentials using messages built from the label embeddings of each node's
//! 1-hop neighbors.
//!
//! Per iteration `t = 1..=T`:
//! 1. hard-label every node with `argmax Q^{t-1}` (lowest index on ties);
//! 2. look up the label embedding of every node;
//! 3. sum the embeddings of each node's neighbors and map the sum through
//!    `ReLU(W m + b)`, with one `(W, b)` for object nodes and one for
//!    relationship nodes, shared by all iterations;
//! 4. add that message to the *original* unary potential and softmax.
//!
//! With `soft_lookup` the lookup uses the expected embedding `Σ_c Q[c] L[c]`
//! instead, which makes every iteration differentiable.

use rand::Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::graph::{SceneGraph, Vocabulary};
use crate::numcore::{affine, affine_backward, relu, relu_backward, softmax, softmax_backward, Parameter, Tensor};
use crate::potentials::{argmax, PotentialSet};

/// Trainable label embeddings, one row per class including Background and
/// No-Relation.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingTable {
    pub objects: Parameter,
    pub predicates: Parameter,
}

impl EmbeddingTable {
    pub fn dim(&self) -> usize {
        self.objects.value.cols()
    }
}

/// Initial embedding scale: rows start uniform in `[-0.1, 0.1]`.
pub const EMBEDDING_INIT: f64 = 0.1;

#[derive(Clone, Debug, PartialEq)]
pub struct Scn {
    pub iterations: usize,
    pub soft_lookup: bool,
    pub embeddings: EmbeddingTable,
    pub w_o: Parameter,
    pub b_o: Parameter,
    pub w_r: Parameter,
    pub b_r: Parameter,
}

/// Marginals `Q^0..=Q^T` of one inference run.
#[derive(Clone, Debug, PartialEq)]
pub struct MarginalTrace {
    pub marginals: Vec<PotentialSet>,
    /// Smallest `t >= 1` at which no node's argmax changed from `t - 1`;
    /// `None` when that never happened within `T` iterations.
    pub stability: Option<usize>,
}

impl MarginalTrace {
    pub fn last(&self) -> &PotentialSet {
        self.marginals.last().expect("trace holds Q^0")
    }

    pub fn iterations(&self) -> usize {
        self.marginals.len() - 1
    }
}

/// Smallest `t >= 1` with identical per-node argmaxes at `t` and `t - 1`.
pub fn stability_index(marginals: &[PotentialSet]) -> Option<usize> {
    (1..marginals.len()).find(|&t| {
        marginals[t].object_argmax() == marginals[t - 1].object_argmax()
            && marginals[t].relation_argmax() == marginals[t - 1].relation_argmax()
    })
}

#[derive(Clone, Debug, Default)]
struct StepCache {
    obj_msg: Vec<Vec<f64>>,
    rel_msg: Vec<Vec<f64>>,
    obj_pre: Vec<Vec<f64>>,
    rel_pre: Vec<Vec<f64>>,
}

/// Forward intermediates for [`Scn::backward`].
#[derive(Clone, Debug, Default)]
pub struct ScnCache {
    steps: Vec<StepCache>,
}

/// `Q^0 = softmax(ψ_u)` alone, i.e. inference with `T = 0`. With `clamp`,
/// object rows are one-hots of the given labels.
pub fn unary_trace(psi_u: &PotentialSet, clamp: Option<&[usize]>, object_classes: usize) -> Result<MarginalTrace> {
    let mut q0 = psi_u.map_rows(softmax);
    if let Some(labels) = clamp {
        if labels.len() != psi_u.objects.len() {
            return Err(Error::dim("clamped labels", psi_u.objects.len(), labels.len()));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= object_classes) {
            return Err(Error::Index {
                what: "object class",
                index: bad,
                size: object_classes,
            });
        }
        q0.objects = labels.iter().map(|&l| one_hot(object_classes, l)).collect();
    }
    Ok(MarginalTrace {
        marginals: vec![q0],
        stability: None,
    })
}

fn one_hot(len: usize, k: usize) -> Vec<f64> {
    let mut v = vec![0.0; len];
    v[k] = 1.0;
    v
}

fn add_into(acc: &mut [f64], v: &[f64]) {
    for (a, b) in acc.iter_mut().zip(v) {
        *a += b;
    }
}

impl Scn {
    pub fn new(
        iterations: usize,
        soft_lookup: bool,
        embedding_dim: usize,
        object_classes: usize,
        predicate_classes: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let scale = (embedding_dim as f64).sqrt().recip();
        Scn {
            iterations,
            soft_lookup,
            embeddings: EmbeddingTable {
                objects: Parameter::new(
                    "scn.object_embeddings",
                    Tensor::uniform(&[object_classes, embedding_dim], EMBEDDING_INIT, rng),
                ),
                predicates: Parameter::new(
                    "scn.predicate_embeddings",
                    Tensor::uniform(&[predicate_classes, embedding_dim], EMBEDDING_INIT, rng),
                ),
            },
            w_o: Parameter::new("scn.w_o", Tensor::uniform(&[object_classes, embedding_dim], scale, rng)),
            b_o: Parameter::new("scn.b_o", Tensor::zeros(&[object_classes])),
            w_r: Parameter::new("scn.w_r", Tensor::uniform(&[predicate_classes, embedding_dim], scale, rng)),
            b_r: Parameter::new("scn.b_r", Tensor::zeros(&[predicate_classes])),
        }
    }

    pub fn object_classes(&self) -> usize {
        self.w_o.value.rows()
    }

    pub fn predicate_classes(&self) -> usize {
        self.w_r.value.rows()
    }

    fn lookup(&self, table: &Tensor, q: &[f64]) -> Vec<f64> {
        if self.soft_lookup {
            let mut e = vec![0.0; table.cols()];
            for (c, &p) in q.iter().enumerate() {
                if p != 0.0 {
                    for (acc, &v) in e.iter_mut().zip(table.row(c)) {
                        *acc += p * v;
                    }
                }
            }
            e
        } else {
            table.row(argmax(q)).to_vec()
        }
    }

    fn step(&self, psi_u: &PotentialSet, graph: &SceneGraph, q_prev: &PotentialSet) -> Result<(PotentialSet, StepCache)> {
        let d_e = self.embeddings.dim();
        let obj_emb: Vec<Vec<f64>> = q_prev
            .objects
            .iter()
            .map(|q| self.lookup(&self.embeddings.objects.value, q))
            .collect();
        let rel_emb: Vec<Vec<f64>> = q_prev
            .relations
            .iter()
            .map(|q| self.lookup(&self.embeddings.predicates.value, q))
            .collect();

        let mut cache = StepCache::default();
        let mut out = PotentialSet::default();
        for (i, u) in psi_u.objects.iter().enumerate() {
            let mut m = vec![0.0; d_e];
            for &r in graph.incident(i) {
                add_into(&mut m, &rel_emb[r]);
            }
            let pre = affine(&self.w_o.value, &m, self.b_o.value.data())?;
            out.objects.push(relu(&pre).iter().zip(u).map(|(p, u)| u + p).collect());
            cache.obj_msg.push(m);
            cache.obj_pre.push(pre);
        }
        for (r, u) in psi_u.relations.iter().enumerate() {
            let (s, o) = graph.endpoints()[r];
            let m: Vec<f64> = obj_emb[s].iter().zip(&obj_emb[o]).map(|(a, b)| a + b).collect();
            let pre = affine(&self.w_r.value, &m, self.b_r.value.data())?;
            out.relations.push(relu(&pre).iter().zip(u).map(|(p, u)| u + p).collect());
            cache.rel_msg.push(m);
            cache.rel_pre.push(pre);
        }
        Ok((out, cache))
    }

    fn check(&self, psi_u: &PotentialSet, graph: &SceneGraph) -> Result<()> {
        psi_u.check_shape(
            graph.objects().len(),
            graph.relations().len(),
            self.object_classes(),
            self.predicate_classes(),
        )
    }

    /// One mean-field update: `ψ_u + ψ_p(Q_prev)`, before the softmax.
    pub fn mean_field_step(&self, psi_u: &PotentialSet, graph: &SceneGraph, q_prev: &PotentialSet) -> Result<PotentialSet> {
        self.check(psi_u, graph)?;
        self.check(q_prev, graph)?;
        Ok(self.step(psi_u, graph, q_prev)?.0)
    }

    /// Runs `T` iterations. With `clamp`, object marginals are pinned to
    /// one-hots of the given labels at every iteration.
    pub fn inference(&self, psi_u: &PotentialSet, graph: &SceneGraph, clamp: Option<&[usize]>) -> Result<MarginalTrace> {
        Ok(self.forward(psi_u, graph, clamp)?.0)
    }

    pub fn forward(
        &self,
        psi_u: &PotentialSet,
        graph: &SceneGraph,
        clamp: Option<&[usize]>,
    ) -> Result<(MarginalTrace, ScnCache)> {
        self.check(psi_u, graph)?;
        let c = self.object_classes();
        let pin = |q: &mut PotentialSet| {
            if let Some(labels) = clamp {
                q.objects = labels.iter().map(|&l| one_hot(c, l)).collect();
            }
        };
        let mut marginals = unary_trace(psi_u, clamp, c)?.marginals;
        let mut cache = ScnCache::default();
        for _ in 0..self.iterations {
            let (hat, step) = self.step(psi_u, graph, marginals.last().expect("non-empty"))?;
            let mut q = hat.map_rows(softmax);
            pin(&mut q);
            marginals.push(q);
            cache.steps.push(step);
        }
        let stability = stability_index(&marginals);
        Ok((MarginalTrace { marginals, stability }, cache))
    }

    /// Back-propagates `grad = dL/d(logits of Q^T)` to the unary potentials,
    /// accumulating parameter gradients along the way. With hard lookup only
    /// the last iteration carries gradient (earlier iterations influence
    /// `Q^T` only through the argmax).
    pub fn backward(
        &mut self,
        graph: &SceneGraph,
        trace: &MarginalTrace,
        cache: &ScnCache,
        grad: &PotentialSet,
        clamped: bool,
    ) -> Result<PotentialSet> {
        let mut d_psi = PotentialSet::zeros(
            graph.objects().len(),
            graph.relations().len(),
            self.object_classes(),
            self.predicate_classes(),
        );
        let mut g = grad.clone();
        let d_e = self.embeddings.dim();
        for t in (1..=cache.steps.len()).rev() {
            if clamped {
                g.objects.iter_mut().for_each(|r| r.fill(0.0));
            }
            d_psi.add_assign(&g);
            let step = &cache.steps[t - 1];
            let mut d_obj_emb = vec![vec![0.0; d_e]; graph.objects().len()];
            let mut d_rel_emb = vec![vec![0.0; d_e]; graph.relations().len()];
            for i in 0..graph.objects().len() {
                let d = relu_backward(&step.obj_pre[i], &g.objects[i]);
                let dm = affine_backward(&self.w_o.value, &step.obj_msg[i], &d, &mut self.w_o.grad, self.b_o.grad.data_mut())?;
                for &r in graph.incident(i) {
                    add_into(&mut d_rel_emb[r], &dm);
                }
            }
            for (r, &(s, o)) in graph.endpoints().iter().enumerate() {
                let d = relu_backward(&step.rel_pre[r], &g.relations[r]);
                let dm = affine_backward(&self.w_r.value, &step.rel_msg[r], &d, &mut self.w_r.grad, self.b_r.grad.data_mut())?;
                add_into(&mut d_obj_emb[s], &dm);
                add_into(&mut d_obj_emb[o], &dm);
            }

            let q_prev = &trace.marginals[t - 1];
            if !self.soft_lookup {
                for (q, de) in q_prev.objects.iter().zip(&d_obj_emb) {
                    add_into(self.embeddings.objects.grad.row_mut(argmax(q)), de);
                }
                for (q, de) in q_prev.relations.iter().zip(&d_rel_emb) {
                    add_into(self.embeddings.predicates.grad.row_mut(argmax(q)), de);
                }
                break;
            }

            let soft = |table: &mut Parameter, q: &[f64], de: &[f64]| -> Vec<f64> {
                let mut dq = vec![0.0; q.len()];
                for (c, &p) in q.iter().enumerate() {
                    dq[c] = table.value.row(c).iter().zip(de).map(|(a, b)| a * b).sum();
                    for (acc, &v) in table.grad.row_mut(c).iter_mut().zip(de) {
                        *acc += p * v;
                    }
                }
                softmax_backward(q, &dq)
            };
            let mut prev = PotentialSet::default();
            for (q, de) in q_prev.objects.iter().zip(&d_obj_emb) {
                let mut row = soft(&mut self.embeddings.objects, q, de);
                if clamped {
                    row.fill(0.0);
                }
                prev.objects.push(row);
            }
            for (q, de) in q_prev.relations.iter().zip(&d_rel_emb) {
                prev.relations.push(soft(&mut self.embeddings.predicates, q, de));
            }
            g = prev;
        }
        // Q^0 = softmax(ψ_u): the T = 0 case, or the tail of soft back-propagation
        if cache.steps.is_empty() || self.soft_lookup {
            if clamped {
                g.objects.iter_mut().for_each(|r| r.fill(0.0));
            }
            d_psi.add_assign(&g);
        }
        Ok(d_psi)
    }

    pub fn parameters(&self) -> [&Parameter; 6] {
        [
            &self.embeddings.objects,
            &self.embeddings.predicates,
            &self.w_o,
            &self.b_o,
            &self.w_r,
            &self.b_r,
        ]
    }

    pub fn parameters_mut(&mut self) -> [&mut Parameter; 6] {
        [
            &mut self.embeddings.objects,
            &mut self.embeddings.predicates,
            &mut self.w_o,
            &mut self.b_o,
            &mut self.w_r,
            &mut self.b_r,
        ]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LabelProb {
    pub label: String,
    pub prob: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TraceObject {
    pub id: usize,
    pub top: Vec<LabelProb>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TraceRelation {
    pub subject_id: usize,
    pub object_id: usize,
    pub top: Vec<LabelProb>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TraceStep {
    pub iteration: usize,
    pub objects: Vec<TraceObject>,
    pub relations: Vec<TraceRelation>,
}

fn top_k(row: &[f64], k: usize, name: impl Fn(usize) -> String) -> Vec<LabelProb> {
    let mut idx: Vec<usize> = (0..row.len()).collect();
    idx.sort_by(|&a, &b| row[b].total_cmp(&row[a]).then(a.cmp(&b)));
    idx.into_iter()
        .take(k)
        .map(|c| LabelProb {
            label: name(c),
            prob: row[c],
        })
        .collect()
}

/// Per-iteration top-`k` labels of every node, for iterations `0..=last`.
/// `keep_relation` selects which relationship nodes are listed.
pub fn export_trace(
    trace: &MarginalTrace,
    graph: &SceneGraph,
    vocab: &Vocabulary,
    k: usize,
    last: usize,
    keep_relation: impl Fn(usize) -> bool,
) -> Vec<TraceStep> {
    trace
        .marginals
        .iter()
        .take(last + 1)
        .enumerate()
        .map(|(t, q)| TraceStep {
            iteration: t,
            objects: graph
                .objects()
                .iter()
                .zip(&q.objects)
                .map(|(o, row)| TraceObject {
                    id: o.id,
                    top: top_k(row, k, |c| vocab.object_name(c).to_string()),
                })
                .collect(),
            relations: graph
                .relations()
                .iter()
                .zip(&q.relations)
                .enumerate()
                .filter(|(r, _)| keep_relation(*r))
                .map(|(_, (rel, row))| TraceRelation {
                    subject_id: rel.subject_id,
                    object_id: rel.object_id,
                    top: top_k(row, k, |c| vocab.predicate_name(c).to_string()),
                })
                .collect(),
        })
        .collect()
}
