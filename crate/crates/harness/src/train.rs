//! Two-stage training: unary heads first, then the mean-field network
//! appended and everything trained end to end.

use std::io::Write;

use anyhow::{anyhow, bail, Context, Result};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use sgcrf_core::model::{ModelConfig, ModelDims, SgModel};
use sgcrf_core::numcore::{sgd_momentum_step, Checkpoint, Parameterized};
use sgcrf_core::potentials::argmax;

use crate::config::TrainConfig;
use crate::data::Sample;

/// A model whose first stage has been trained: the only input accepted by
/// [`train_stage2`].
#[derive(Clone, Debug)]
pub struct Stage1Model(SgModel);

impl Stage1Model {
    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        let model = SgModel::from_checkpoint(ckpt)?;
        if model.stage() != 1 {
            bail!("the second stage needs a first-stage checkpoint, got a stage-{} one", model.stage());
        }
        Ok(Stage1Model(model))
    }

    pub fn model(&self) -> &SgModel {
        &self.0
    }

    pub fn into_model(self) -> SgModel {
        self.0
    }
}

#[derive(Debug, Serialize)]
struct EpochRecord {
    stage: u8,
    epoch: usize,
    steps: usize,
    loss: f64,
    val_object_accuracy: f64,
    val_relation_accuracy: f64,
}

#[derive(Debug, Serialize)]
struct DivergenceRecord<'a> {
    stage: u8,
    epoch: usize,
    step: usize,
    scene: usize,
    event: &'a str,
    detail: String,
}

/// Object and predicate top-1 accuracy of `Q^T` against the sample labels.
/// Predicates are scored over the non-No-Relation classes, on pairs that
/// have a real predicate.
pub fn accuracy(model: &SgModel, samples: &[Sample]) -> Result<(f64, f64)> {
    let no_relation = model.dims.predicate_classes - 1;
    let (mut obj, mut obj_n, mut rel, mut rel_n) = (0usize, 0usize, 0usize, 0usize);
    for s in samples {
        let trace = model.infer(&s.graph, s.features(), None)?;
        let q = trace.last();
        for (row, o) in q.objects.iter().zip(s.graph.objects()) {
            obj += (argmax(row) == o.label) as usize;
            obj_n += 1;
        }
        for (row, r) in q.relations.iter().zip(s.graph.relations()) {
            if r.label != no_relation {
                rel += (argmax(&row[..no_relation]) == r.label) as usize;
                rel_n += 1;
            }
        }
    }
    let ratio = |a: usize, n: usize| if n == 0 { 0.0 } else { a as f64 / n as f64 };
    Ok((ratio(obj, obj_n), ratio(rel, rel_n)))
}

fn write_line(log: &mut dyn Write, record: &impl Serialize) -> Result<()> {
    serde_json::to_writer(&mut *log, record)?;
    log.write_all(b"\n")?;
    Ok(())
}

fn run_epochs(
    model: &mut SgModel,
    stage: u8,
    epochs: usize,
    train: &[Sample],
    val: &[Sample],
    tc: &TrainConfig,
    log: &mut dyn Write,
) -> Result<()> {
    for p in model.parameters_mut() {
        p.velocity.fill(0.0);
        p.zero_grad();
    }
    let mut step = 0usize;
    for epoch in 1..=epochs {
        let mut order: Vec<usize> = (0..train.len()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(tc.seed ^ ((stage as u64) << 32) ^ epoch as u64);
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for batch in order.chunks(tc.batch_size) {
            step += 1;
            for &i in batch {
                let s = &train[i];
                let loss = model.loss_and_backward(&s.graph, s.features())?;
                if !loss.is_finite() {
                    let detail = format!("loss {loss}");
                    write_line(
                        log,
                        &DivergenceRecord {
                            stage,
                            epoch,
                            step,
                            scene: s.scene_id,
                            event: "diverged",
                            detail: detail.clone(),
                        },
                    )?;
                    return Err(anyhow!(
                        "training diverged at stage {stage}, epoch {epoch}, step {step} (scene {}): {detail}",
                        s.scene_id
                    ));
                }
                total += loss;
            }
            if batch.len() > 1 {
                let scale = 1.0 / batch.len() as f64;
                for p in model.parameters_mut() {
                    p.grad.data_mut().iter_mut().for_each(|g| *g *= scale);
                }
            }
            let mut params = model.parameters_mut();
            if let Err(e) = sgd_momentum_step(&mut params, tc.lr, tc.momentum) {
                write_line(
                    log,
                    &DivergenceRecord {
                        stage,
                        epoch,
                        step,
                        scene: train[batch[0]].scene_id,
                        event: "diverged",
                        detail: e.to_string(),
                    },
                )?;
                return Err(e).with_context(|| format!("training diverged at stage {stage}, epoch {epoch}, step {step}"));
            }
        }
        let (val_object_accuracy, val_relation_accuracy) = accuracy(model, val)?;
        write_line(
            log,
            &EpochRecord {
                stage,
                epoch,
                steps: step,
                loss: total / train.len().max(1) as f64,
                val_object_accuracy,
                val_relation_accuracy,
            },
        )?;
    }
    Ok(())
}

/// Trains the unary heads with the loss on `Q^0`.
pub fn train_stage1(
    config: &ModelConfig,
    dims: ModelDims,
    train: &[Sample],
    val: &[Sample],
    tc: &TrainConfig,
    log: &mut dyn Write,
) -> Result<Stage1Model> {
    let mut rng = ChaCha8Rng::seed_from_u64(tc.seed.wrapping_mul(2).wrapping_add(1));
    let mut model = SgModel::new(config.clone(), dims, &mut rng)?;
    run_epochs(&mut model, 1, tc.stage1_epochs, train, val, tc, log)?;
    Ok(Stage1Model(model))
}

/// Appends a fresh mean-field network and trains end to end with the loss on
/// `Q^T`.
pub fn train_stage2(
    stage1: Stage1Model,
    train: &[Sample],
    val: &[Sample],
    tc: &TrainConfig,
    log: &mut dyn Write,
) -> Result<SgModel> {
    let mut model = stage1.0;
    let mut rng = ChaCha8Rng::seed_from_u64(tc.seed.wrapping_mul(2).wrapping_add(2));
    model.append_scn(&mut rng)?;
    run_epochs(&mut model, 2, tc.stage2_epochs, train, val, tc, log)?;
    Ok(model)
}
