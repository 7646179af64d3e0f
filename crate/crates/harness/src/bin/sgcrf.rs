use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;
use sgcrf_core::evalkit::evaluate;
use sgcrf_core::model::SgModel;
use sgcrf_core::numcore::Checkpoint;
use sgcrf_core::scn::{export_trace, TraceStep};
use sgcrf_core::synthworld::{generate_dataset, load_dataset, save_dataset, vocabulary, DatasetSplit, Scene};
use sgcrf_core::vrd::GraphFeatures;
use sgcrf_core::{argmax, export_dot, PotentialSet};
use sgcrf_harness::config::{Baseline, ExperimentConfig};
use sgcrf_harness::data::{model_dims, training_samples};
use sgcrf_harness::experiments::{self, Experiment};
use sgcrf_harness::inspect::{corrected_objects, find_correction_scene};
use sgcrf_harness::output::{to_json_pretty, write_atomic};
use sgcrf_harness::train::{train_stage1, train_stage2, Stage1Model};

#[derive(Parser)]
#[command(name = "sgcrf", version, about = "Scene graph generation with mean-field label refinement")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Stage {
    #[value(name = "1")]
    One,
    #[value(name = "2")]
    Two,
    All,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum TraceSetup {
    /// Predicted object labels.
    Sgcls,
    /// Object labels pinned to ground truth.
    Relcls,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a dataset and write train/val/test JSON files.
    Gen {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a baseline and write its checkpoint.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        baseline: Option<Baseline>,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// `2` continues from a first-stage `--checkpoint`.
        #[arg(long, value_enum, default_value = "all")]
        stage: Stage,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// JSON-lines epoch log; stdout when omitted.
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Evaluate a checkpoint on the test split.
    Eval {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Comma-separated K values, overriding the config.
        #[arg(long, value_delimiter = ',')]
        k: Option<Vec<usize>>,
        /// Override the number of mean-field iterations.
        #[arg(long)]
        iterations: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Dump the per-iteration marginals of one test scene.
    Trace {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Defaults to the first test scene where message passing corrects
        /// an object label.
        #[arg(long)]
        scene: Option<usize>,
        #[arg(long)]
        out: PathBuf,
        /// Only list pairs that carry a ground-truth relationship.
        #[arg(long, default_value_t = true, action = clap::ArgAction::Set)]
        gt_pairs_only: bool,
        #[arg(long, value_enum, default_value = "sgcls")]
        setup: TraceSetup,
        /// Labels listed per node in the trace JSON.
        #[arg(long, default_value_t = 3)]
        top_k: usize,
    },
    /// Run a named experiment end to end and print its comparison table.
    Repro {
        experiment: Experiment,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Also write the full result JSON here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn load_config(path: Option<&Path>, seed: Option<u64>) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::load_or_default(path)?;
    if let Some(s) = seed {
        cfg.dataset.world.seed = s;
        cfg.train.seed = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn load_model(path: &Path) -> Result<SgModel> {
    let ckpt = Checkpoint::load(path).with_context(|| format!("loading checkpoint {}", path.display()))?;
    Ok(SgModel::from_checkpoint(&ckpt)?)
}

fn gen(config: Option<&Path>, seed: Option<u64>, out: &Path) -> Result<()> {
    let cfg = load_config(config, seed)?;
    let split = generate_dataset(&cfg.dataset)?;
    save_dataset(&split, out)?;
    println!(
        "{}",
        serde_json::json!({
            "out": out.display().to_string(),
            "scenes": {"train": split.train.len(), "val": split.val.len(), "test": split.test.len()},
            "test_relations": DatasetSplit::relation_count(&split.test),
            "zero_shot_relations": DatasetSplit::zero_shot_count(&split.test),
            "zero_shot_share": split.zero_shot_share(),
            "zero_shot_triple_types": split.zero_shot_triples.len(),
        })
    );
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn train(
    config: Option<&Path>,
    seed: Option<u64>,
    baseline: Option<Baseline>,
    data: &Path,
    out: &Path,
    stage: Stage,
    checkpoint: Option<&Path>,
    log: Option<&Path>,
) -> Result<()> {
    let mut cfg = load_config(config, seed)?;
    if let Some(b) = baseline {
        cfg.baseline = b;
    }
    let split = load_dataset(data)?;
    let world = &split.config.world;
    let train = training_samples(world, &split.train, cfg.train.train_distractors)?;
    let val = training_samples(world, &split.val, 0)?;
    let mut sink: Box<dyn Write> = match log {
        Some(p) => Box::new(io::BufWriter::new(
            fs::File::create(p).with_context(|| format!("creating {}", p.display()))?,
        )),
        None => Box::new(io::stdout().lock()),
    };
    let model = match stage {
        Stage::Two => {
            let Some(path) = checkpoint else {
                bail!("stage 2 needs a first-stage --checkpoint; the mean-field network is never trained from scratch");
            };
            let ckpt = Checkpoint::load(path).with_context(|| format!("loading {}", path.display()))?;
            let stage1 = Stage1Model::from_checkpoint(&ckpt)?;
            stage1.model().check_dims(&model_dims(world))?;
            train_stage2(stage1, &train, &val, &cfg.train, &mut sink)?
        }
        Stage::One | Stage::All => {
            if checkpoint.is_some() {
                bail!("--checkpoint only applies to --stage 2");
            }
            let model_cfg = cfg.baseline.model_config(&cfg.model);
            let stage1 = train_stage1(&model_cfg, model_dims(world), &train, &val, &cfg.train, &mut sink)?;
            if stage == Stage::All && cfg.baseline.uses_scn() {
                train_stage2(stage1, &train, &val, &cfg.train, &mut sink)?
            } else {
                stage1.into_model()
            }
        }
    };
    sink.flush()?;
    model.to_checkpoint().save(out)?;
    eprintln!("wrote stage-{} checkpoint to {}", model.stage(), out.display());
    Ok(())
}

fn eval(
    config: Option<&Path>,
    checkpoint: &Path,
    data: &Path,
    k: Option<Vec<usize>>,
    iterations: Option<usize>,
    out: Option<&Path>,
) -> Result<()> {
    let mut cfg = load_config(config, None)?;
    if let Some(k) = k {
        cfg.eval.ks = k;
    }
    cfg.eval.validate()?;
    let split = load_dataset(data)?;
    let mut model = load_model(checkpoint)?;
    model.check_dims(&model_dims(&split.config.world))?;
    if let Some(t) = iterations {
        model.set_iterations(t);
    }
    cfg.model = model.config.clone();
    cfg.model.iterations = model.iterations();
    cfg.dataset = split.config.clone();
    let echo = serde_json::json!({
        "experiment": cfg.echo(),
        "checkpoint": checkpoint.display().to_string(),
        "stage": model.stage(),
    });
    let report = evaluate(&model, &split.config.world, &split.test, &cfg.eval, echo)?;
    let text = to_json_pretty(&report)?;
    match out {
        Some(p) => write_atomic(p, text.as_bytes())?,
        None => print!("{text}"),
    }
    Ok(())
}

#[derive(Serialize)]
struct TraceFile {
    scene: usize,
    setup: &'static str,
    iterations: usize,
    stability: Option<usize>,
    /// Objects mislabeled by `Q^0` and fixed by the final marginals.
    corrected_objects: Vec<usize>,
    ground_truth: Vec<String>,
    steps: Vec<TraceStep>,
}

fn find_scene(split: &DatasetSplit, id: usize) -> Option<&Scene> {
    [&split.test, &split.val, &split.train]
        .into_iter()
        .find_map(|scenes| scenes.iter().find(|s| s.id == id))
}

fn trace(
    checkpoint: &Path,
    data: &Path,
    scene_id: Option<usize>,
    out: &Path,
    gt_pairs_only: bool,
    setup: TraceSetup,
    top_k: usize,
) -> Result<()> {
    let split = load_dataset(data)?;
    let world = &split.config.world;
    let model = load_model(checkpoint)?;
    model.check_dims(&model_dims(world))?;
    let scene = match scene_id {
        Some(id) => match find_scene(&split, id) {
            Some(s) => s,
            None => bail!("scene {id} is not in {}", data.display()),
        },
        None => match find_correction_scene(&model, &split.test)? {
            Some(s) => {
                eprintln!(
                    "scene {}: message passing corrects objects {:?}",
                    s.id,
                    corrected_objects(&model, s)?
                );
                s
            }
            None => bail!("no test scene where message passing corrects an object; pass --scene"),
        },
    };
    let vocab = vocabulary(world);
    let graph = &scene.gt_graph;
    let gt_labels: Vec<usize> = graph.objects().iter().map(|o| o.label).collect();
    let clamp = (setup == TraceSetup::Relcls).then_some(gt_labels.as_slice());
    let features = GraphFeatures {
        objects: &scene.features.objects,
        relations: &scene.features.relations,
    };
    let q = model.infer(graph, features, clamp)?;
    let last = q.stability.unwrap_or(q.iterations());
    let keep: Vec<bool> = graph
        .relations()
        .iter()
        .map(|r| !gt_pairs_only || r.label != vocab.no_relation())
        .collect();

    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    for (t, marginals) in q.marginals.iter().enumerate().take(last + 1) {
        let objects: Vec<usize> = marginals.objects.iter().map(|r| argmax(r)).collect();
        let relations: Vec<usize> = marginals.relations.iter().map(|r| argmax(r)).collect();
        let labeled = graph.relabeled(&objects, &relations)?;
        let mut idx = 0;
        let shown = labeled.filter_relations(|_| {
            idx += 1;
            keep[idx - 1]
        });
        let rows = PotentialSet {
            objects: marginals.objects.clone(),
            relations: marginals
                .relations
                .iter()
                .zip(&keep)
                .filter(|(_, &k)| k)
                .map(|(r, _)| r.clone())
                .collect(),
        };
        let dot = export_dot(&shown, Some(&rows), &vocab);
        write_atomic(&out.join(format!("q{t}.dot")), dot.as_bytes())?;
    }
    let file = TraceFile {
        scene: scene.id,
        setup: match setup {
            TraceSetup::Sgcls => "sgcls",
            TraceSetup::Relcls => "relcls",
        },
        iterations: q.iterations(),
        stability: q.stability,
        corrected_objects: corrected_objects(&model, scene)?,
        ground_truth: graph
            .relations()
            .iter()
            .filter(|r| r.label != vocab.no_relation())
            .map(|r| {
                let s = graph.objects()[graph.object_position(r.subject_id).expect("valid graph")].label;
                let o = graph.objects()[graph.object_position(r.object_id).expect("valid graph")].label;
                format!(
                    "{}#{} {} {}#{}",
                    vocab.object_name(s),
                    r.subject_id,
                    vocab.predicate_name(r.label),
                    vocab.object_name(o),
                    r.object_id
                )
            })
            .collect(),
        steps: export_trace(&q, graph, &vocab, top_k, last, |r| keep[r]),
    };
    write_atomic(&out.join("trace.json"), to_json_pretty(&file)?.as_bytes())?;
    eprintln!("wrote {} DOT files and trace.json to {}", last + 1, out.display());
    Ok(())
}

fn repro(experiment: Experiment, seed: u64, out: Option<&Path>) -> Result<()> {
    let result = experiments::run(experiment, seed, &mut io::stderr())?;
    print!("{}", result.table());
    if let Some(p) = out {
        write_atomic(p, to_json_pretty(&result)?.as_bytes())?;
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Gen { config, seed, out } => gen(config.as_deref(), seed, &out),
        Command::Train {
            config,
            seed,
            baseline,
            data,
            out,
            stage,
            checkpoint,
            log,
        } => train(
            config.as_deref(),
            seed,
            baseline,
            &data,
            &out,
            stage,
            checkpoint.as_deref(),
            log.as_deref(),
        ),
        Command::Eval {
            config,
            checkpoint,
            data,
            k,
            iterations,
            out,
        } => eval(config.as_deref(), &checkpoint, &data, k, iterations, out.as_deref()),
        Command::Trace {
            checkpoint,
            data,
            scene,
            out,
            gt_pairs_only,
            setup,
            top_k,
        } => trace(&checkpoint, &data, scene, &out, gt_pairs_only, setup, top_k),
        Command::Repro { experiment, seed, out } => repro(experiment, seed, out.as_deref()),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
