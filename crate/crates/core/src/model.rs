//! The trainable model: unary heads, optionally followed by the mean-field
//! network, plus the training loss and checkpoint (de)serialization.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::SceneGraph;
use crate::numcore::{cross_entropy, cross_entropy_backward, focal_loss, focal_loss_backward, Checkpoint, Parameter, Parameterized};
use crate::potentials::PotentialSet;
use crate::scn::{unary_trace, MarginalTrace, Scn};
use crate::vrd::{GraphFeatures, RslMode, VrdHead};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub rsl_mode: RslMode,
    pub embedding_dim: usize,
    pub iterations: usize,
    pub focal_gamma: f64,
    pub linear_heads: bool,
    pub soft_lookup: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            rsl_mode: RslMode::TripleConcat,
            embedding_dim: 32,
            iterations: 5,
            focal_gamma: 2.0,
            linear_heads: false,
            soft_lookup: false,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.embedding_dim == 0 {
            return Err(Error::Config("embedding_dim must be positive".into()));
        }
        if !(self.focal_gamma >= 0.0 && self.focal_gamma.is_finite()) {
            return Err(Error::Config("focal_gamma must be >= 0".into()));
        }
        Ok(())
    }
}

/// Feature and class sizes the model is built for.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelDims {
    pub object_dim: usize,
    pub relation_dim: usize,
    pub object_classes: usize,
    pub predicate_classes: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct CheckpointMeta {
    stage: u8,
    model: ModelConfig,
    dims: ModelDims,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SgModel {
    pub config: ModelConfig,
    pub dims: ModelDims,
    pub head: VrdHead,
    /// Present once the second training stage has started.
    pub scn: Option<Scn>,
}

/// Intermediates of one forward pass.
#[derive(Clone, Debug)]
pub struct Forward {
    pub unary: PotentialSet,
    pub trace: MarginalTrace,
    vrd: crate::vrd::VrdCache,
    scn: Option<crate::scn::ScnCache>,
}

/// Mean cross entropy over object nodes plus mean focal loss over
/// relationship nodes, with the gradient w.r.t. the logits that produced
/// `q`. Targets are the labels carried by `graph`.
pub fn marginal_loss(q: &PotentialSet, graph: &SceneGraph, gamma: f64) -> Result<(f64, PotentialSet)> {
    let mut loss = 0.0;
    let mut grad = PotentialSet::default();
    let n_obj = graph.objects().len();
    for (row, o) in q.objects.iter().zip(graph.objects()) {
        loss += cross_entropy(row, o.label)? / n_obj as f64;
        grad.objects.push(cross_entropy_backward(row, o.label)?.into_iter().map(|g| g / n_obj as f64).collect());
    }
    let n_rel = graph.relations().len();
    for (row, r) in q.relations.iter().zip(graph.relations()) {
        loss += focal_loss(row, r.label, gamma)? / n_rel as f64;
        grad.relations.push(
            focal_loss_backward(row, r.label, gamma)?
                .into_iter()
                .map(|g| g / n_rel as f64)
                .collect(),
        );
    }
    Ok((loss, grad))
}

impl SgModel {
    /// A first-stage model: unary heads only.
    pub fn new(config: ModelConfig, dims: ModelDims, rng: &mut impl Rng) -> Result<Self> {
        config.validate()?;
        let head = VrdHead::new(
            config.rsl_mode,
            config.linear_heads,
            dims.object_dim,
            dims.relation_dim,
            dims.object_classes,
            dims.predicate_classes,
            rng,
        );
        Ok(SgModel {
            config,
            dims,
            head,
            scn: None,
        })
    }

    pub fn stage(&self) -> u8 {
        if self.scn.is_some() {
            2
        } else {
            1
        }
    }

    /// Appends a freshly initialized mean-field network.
    pub fn append_scn(&mut self, rng: &mut impl Rng) -> Result<()> {
        if self.scn.is_some() {
            return Err(Error::Argument("model already has a mean-field stage".into()));
        }
        self.scn = Some(Scn::new(
            self.config.iterations,
            self.config.soft_lookup,
            self.config.embedding_dim,
            self.dims.object_classes,
            self.dims.predicate_classes,
            rng,
        ));
        Ok(())
    }

    /// Mean-field iterations actually run: 0 without the second stage.
    pub fn iterations(&self) -> usize {
        self.scn.as_ref().map_or(0, |s| s.iterations)
    }

    /// Overrides the iteration count (evaluation ablations).
    pub fn set_iterations(&mut self, t: usize) {
        if let Some(s) = self.scn.as_mut() {
            s.iterations = t;
        }
    }

    pub fn forward(&self, graph: &SceneGraph, features: GraphFeatures<'_>, clamp: Option<&[usize]>) -> Result<Forward> {
        let (unary, vrd) = self.head.forward(graph, features)?;
        let (trace, scn) = match &self.scn {
            Some(s) => {
                let (trace, cache) = s.forward(&unary, graph, clamp)?;
                (trace, Some(cache))
            }
            None => (unary_trace(&unary, clamp, self.dims.object_classes)?, None),
        };
        Ok(Forward { unary, trace, vrd, scn })
    }

    pub fn infer(&self, graph: &SceneGraph, features: GraphFeatures<'_>, clamp: Option<&[usize]>) -> Result<MarginalTrace> {
        Ok(self.forward(graph, features, clamp)?.trace)
    }

    /// Training loss on `Q^T` against the labels of `graph`; gradients are
    /// accumulated into the parameters.
    pub fn loss_and_backward(&mut self, graph: &SceneGraph, features: GraphFeatures<'_>) -> Result<f64> {
        let fwd = self.forward(graph, features, None)?;
        let (loss, grad) = marginal_loss(fwd.trace.last(), graph, self.config.focal_gamma)?;
        let d_unary = match (self.scn.as_mut(), &fwd.scn) {
            (Some(s), Some(cache)) => s.backward(graph, &fwd.trace, cache, &grad, false)?,
            _ => grad,
        };
        self.head.backward(features, &fwd.vrd, &d_unary)?;
        Ok(loss)
    }

    pub fn loss(&self, graph: &SceneGraph, features: GraphFeatures<'_>) -> Result<f64> {
        let fwd = self.forward(graph, features, None)?;
        Ok(marginal_loss(fwd.trace.last(), graph, self.config.focal_gamma)?.0)
    }

    pub fn check_dims(&self, dims: &ModelDims) -> Result<()> {
        if &self.dims != dims {
            return Err(Error::Checkpoint(format!(
                "model built for {:?} but the data has {:?}",
                self.dims, dims
            )));
        }
        Ok(())
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let meta = CheckpointMeta {
            stage: self.stage(),
            model: self.config.clone(),
            dims: self.dims,
        };
        Checkpoint::from_params(
            serde_json::to_value(meta).expect("meta serializes"),
            self.parameters(),
        )
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        let meta: CheckpointMeta = serde_json::from_value(ckpt.meta.clone())
            .map_err(|e| Error::Checkpoint(format!("unreadable checkpoint metadata: {e}")))?;
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut model = SgModel::new(meta.model, meta.dims, &mut rng)?;
        match meta.stage {
            1 => {}
            2 => model.append_scn(&mut rng)?,
            s => return Err(Error::Checkpoint(format!("unknown training stage {s}"))),
        }
        ckpt.restore_into(model.parameters_mut())?;
        Ok(model)
    }
}

impl Parameterized for SgModel {
    fn parameters(&self) -> Vec<&Parameter> {
        let mut v: Vec<&Parameter> = self.head.parameters().into();
        if let Some(s) = &self.scn {
            v.extend(s.parameters());
        }
        v
    }

    fn parameters_mut(&mut self) -> Vec<&mut Parameter> {
        let mut v: Vec<&mut Parameter> = self.head.parameters_mut().into();
        if let Some(s) = &mut self.scn {
            v.extend(s.parameters_mut());
        }
        v
    }
}
