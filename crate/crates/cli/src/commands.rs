//! The four pipeline stages. Each reads and writes plain files so stages can
//! be rerun or swapped independently.

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use log::{info, warn};
use mtens_core::data::{
    self, fold_partition, format_predictions, load_checkpoint, load_dataset, normalize_targets,
    parse_predictions, read_vectors, save_checkpoint, split, Partition,
};
use mtens_core::ensemble::KeyedRows;
use mtens_core::eval::{evaluate, EvalReport};
use mtens_core::features::{tokenize, FeatureExtractor, LexiconSet};
use mtens_core::layers::REPRESENTATION_WIDTH;
use mtens_core::{
    assemble, Block, EmbeddingTable, EncoderKind, EnsembleDescriptor, EnsembleInput, EnsembleModel,
    Error, FeatureMode, Instance, ModelDescriptor, MultiTaskModel, OovPolicy, Prediction, Problem,
    Result, Schema, Target, TaskSpec,
};

use crate::config::{resolve_input, RunArgs};

type Keyed = (String, Vec<f64>);

const PREDICT_BATCH: usize = 64;

/// Loaded data with targets scaled to `[0, 1]` and the seeded partition.
struct Prepared {
    problem: Problem,
    schema: Schema,
    tasks: Vec<TaskSpec>,
    instances: Vec<Instance>,
    partition: Partition,
}

fn prepare(args: &RunArgs) -> Result<Prepared> {
    let problem = args.problem()?;
    let schema = Schema::for_problem(problem);
    let path = args.data_path()?;
    let loaded = load_dataset(&path, schema)?;
    if loaded.malformed > 0 {
        warn!(
            "{}: skipped {} of {} rows",
            path.display(),
            loaded.malformed,
            loaded.rows
        );
    }
    let instances = normalize_targets(&loaded.instances, schema);
    let partition = match (args.folds, args.fold) {
        (Some(k), fold) => fold_partition(&instances, k, fold.unwrap_or(0), args.seed())?,
        (None, Some(_)) => return Err(Error::Usage("--fold needs --folds".into())),
        (None, None) => split(&instances, args.split_ratios()?, args.seed())?,
    };
    info!(
        "{} instances: {} train, {} validation, {} test",
        instances.len(),
        partition.train.len(),
        partition.val.len(),
        partition.test.len()
    );
    Ok(Prepared {
        problem,
        schema,
        tasks: problem.tasks(),
        instances,
        partition,
    })
}

/// Embeddings restricted to the tokens that occur in `instances`.
fn load_table(args: &RunArgs, instances: &[Instance], dim: usize) -> Result<EmbeddingTable> {
    let vocab: HashSet<String> = instances.iter().flat_map(|i| tokenize(&i.text)).collect();
    let path = args.embeddings_path()?;
    let (table, report) = data::load_embeddings(&path, Some(&vocab), dim, OovPolicy::Zero)?;
    if report.malformed > 0 {
        warn!(
            "{}: skipped {} malformed lines",
            path.display(),
            report.malformed
        );
    }
    info!(
        "{} of {} vocabulary tokens have embeddings",
        report.kept,
        vocab.len()
    );
    Ok(table)
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents)
        .map_err(|e| Error::Usage(format!("cannot write {}: {e}", path.display())))
}

fn ids(instances: &[Instance]) -> Vec<String> {
    instances.iter().map(|i| i.id.clone()).collect()
}

fn encode(
    model: &MultiTaskModel,
    instances: &[Instance],
    table: &EmbeddingTable,
) -> Result<Vec<mtens_core::Tensor>> {
    let tokens: Vec<Vec<String>> = instances.iter().map(|i| tokenize(&i.text)).collect();
    model.encode_inputs(&tokens, table)
}

/// Scores back on the dataset's own scale, for writing.
fn denormalized(predictions: &[Vec<Prediction>], schema: Schema) -> Vec<Vec<Prediction>> {
    predictions
        .iter()
        .map(|row| {
            row.iter()
                .map(|p| match p {
                    Prediction::Score(s) => Prediction::Score(schema.denormalize(*s)),
                    other => other.clone(),
                })
                .collect()
        })
        .collect()
}

fn validation<'a, T>(
    inputs: &'a [T],
    targets: &'a [Vec<Target>],
) -> Option<(&'a [T], &'a [Vec<Target>])> {
    (!inputs.is_empty()).then_some((inputs, targets))
}

pub fn train_base(args: &RunArgs, encoder: EncoderKind) -> Result<String> {
    let p = prepare(args)?;
    let table = load_table(args, &p.instances, args.embedding_dim())?;
    let mut model = MultiTaskModel::new(ModelDescriptor {
        encoder,
        tasks: p.tasks.clone(),
        input_dim: table.dim(),
        max_len: args.max_len(),
        seed: args.seed(),
    })?;
    let Partition { train, val, test } = &p.partition;
    let (xtr, xva, xte) = (
        encode(&model, train, &table)?,
        encode(&model, val, &table)?,
        encode(&model, test, &table)?,
    );
    let ytr = data::targets(train, &p.tasks)?;
    let yva = data::targets(val, &p.tasks)?;
    let history = model.train(&xtr, &ytr, validation(&xva, &yva), &args.train_config())?;

    let out = args.out_dir()?;
    save_checkpoint(out.join(format!("{encoder}.ckpt")), &model.to_checkpoint()?)?;
    write(
        &out.join(format!("{encoder}.history.tsv")),
        history.to_tsv(),
    )?;
    let mut summary = format!(
        "{encoder}: {} epochs, best epoch {}, {} parameters\n",
        history.len(),
        history.best_epoch,
        model.parameter_count()
    );
    if !test.is_empty() {
        let pred = model.predict(&xte, PREDICT_BATCH)?;
        let report = evaluate(
            &p.tasks,
            &data::targets(test, &p.tasks)?,
            &pred,
            p.problem == Problem::CoarseEmotion,
        )?;
        write(
            &out.join(format!("{encoder}.predictions.tsv")),
            format_predictions(&ids(test), &p.tasks, &denormalized(&pred, p.schema)),
        )?;
        write(&out.join(format!("{encoder}.report.tsv")), report.to_tsv())?;
        summary.push_str(&report.to_key_values());
    }
    Ok(summary)
}

pub fn extract(
    args: &RunArgs,
    encoder: EncoderKind,
    checkpoint: Option<&Path>,
    subset: Subset,
) -> Result<String> {
    let out = args.out_dir()?;
    let ckpt_path =
        checkpoint.map_or_else(|| out.join(format!("{encoder}.ckpt")), Path::to_path_buf);
    let model = MultiTaskModel::from_checkpoint(&load_checkpoint(&ckpt_path)?, None)?;
    if model.encoder_kind() != encoder {
        return Err(Error::Incompatible {
            expected: format!("a {encoder} checkpoint"),
            found: format!("{} in {}", model.encoder_kind(), ckpt_path.display()),
        });
    }
    let p = prepare(args)?;
    let chosen: &[Instance] = match subset {
        Subset::All => &p.instances,
        Subset::Train => &p.partition.train,
        Subset::Val => &p.partition.val,
        Subset::Test => &p.partition.test,
    };
    let table = load_table(args, &p.instances, model.descriptor().input_dim)?;
    let reps = model.extract_representation(
        &ids(chosen),
        &encode(&model, chosen, &table)?,
        PREDICT_BATCH,
    )?;
    let path = out.join(format!("{encoder}.reps.tsv"));
    write(
        &path,
        data::format_vectors(reps.iter().map(|r| (r.id.as_str(), r.values.as_slice()))),
    )?;
    Ok(format!(
        "{}: {} representations\n",
        path.display(),
        reps.len()
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Subset {
    All,
    Train,
    Val,
    Test,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum FeatureInput {
    /// Raw hand-crafted vectors, projected to 128 inside the ensemble.
    Raw,
    /// Already 128 wide; used as is.
    Projected,
}

/// Where the ensemble's four input blocks come from.
pub struct EnsembleSources {
    pub reps: [(Block, Option<PathBuf>); 3],
    pub features: Option<PathBuf>,
    pub feature_input: FeatureInput,
}

fn computed_features(args: &RunArgs, p: &Prepared) -> Result<Vec<(String, Vec<f64>)>> {
    let lexicons = match args.lexicons_path() {
        Some(path) => LexiconSet::load_manifest(path)?,
        None => LexiconSet::new(),
    };
    let table = load_table(args, &p.instances, args.embedding_dim())?;
    let texts: Vec<&str> = p.partition.train.iter().map(|i| i.text.as_str()).collect();
    let extractor = FeatureExtractor::fit(&texts, lexicons, table.dim())?;
    info!("raw feature width {}", extractor.width());
    p.instances
        .iter()
        .map(|i| Ok((i.id.clone(), extractor.raw(&i.text, &table)?)))
        .collect()
}

fn train_and_score(
    descriptor: EnsembleDescriptor,
    inputs: &[EnsembleInput; 3],
    targets: &[Vec<Vec<Target>>; 3],
    args: &RunArgs,
    dependent: bool,
) -> Result<(
    EnsembleModel,
    mtens_core::History,
    Vec<Vec<Prediction>>,
    EvalReport,
)> {
    let tasks = descriptor.tasks.clone();
    let mut model = EnsembleModel::new(descriptor)?;
    let val = (!inputs[1].is_empty()).then_some((&inputs[1], targets[1].as_slice()));
    let history = model.train(&inputs[0], &targets[0], val, &args.train_config())?;
    let pred = model.predict(&inputs[2], PREDICT_BATCH)?;
    let report = evaluate(&tasks, &targets[2], &pred, dependent)?;
    Ok((model, history, pred, report))
}

pub fn train_ensemble(
    args: &RunArgs,
    sources: &EnsembleSources,
    compare_single: bool,
    dependent: bool,
) -> Result<String> {
    let p = prepare(args)?;
    let out = args.out_dir()?;
    let mut loaded: Vec<(Block, Vec<Keyed>)> = Vec::new();
    for (block, path) in &sources.reps {
        let path = path
            .clone()
            .unwrap_or_else(|| out.join(format!("{block}.reps.tsv")));
        loaded.push((
            *block,
            read_vectors(resolve_input(&path), Some(REPRESENTATION_WIDTH))?,
        ));
    }
    let features = match &sources.features {
        Some(path) => read_vectors(resolve_input(path), None)?,
        None => computed_features(args, &p)?,
    };
    let width = features.first().map_or(0, |(_, v)| v.len());
    let mode = match sources.feature_input {
        FeatureInput::Projected if width == REPRESENTATION_WIDTH => FeatureMode::Projected,
        FeatureInput::Projected => {
            return Err(Error::Data(format!(
                "projected features must be {REPRESENTATION_WIDTH} wide, got {width}"
            )))
        }
        FeatureInput::Raw => FeatureMode::Raw { width },
    };
    let mut block_sources: Vec<(Block, &KeyedRows)> =
        loaded.iter().map(|(b, r)| (*b, r.as_slice())).collect();
    block_sources.push((Block::Features, features.as_slice()));

    let parts = [&p.partition.train, &p.partition.val, &p.partition.test];
    let mut inputs = Vec::with_capacity(3);
    let mut targets = Vec::with_capacity(3);
    for part in parts {
        inputs.push(assemble(Some(&ids(part)), &block_sources)?);
        targets.push(data::targets(part, &p.tasks)?);
    }
    let inputs: [EnsembleInput; 3] = inputs.try_into().expect("three parts");
    let targets: [Vec<Vec<Target>>; 3] = targets.try_into().expect("three parts");

    let descriptor = EnsembleDescriptor {
        tasks: p.tasks.clone(),
        features: mode,
        seed: args.seed(),
    };
    let (model, history, pred, mut report) =
        train_and_score(descriptor, &inputs, &targets, args, dependent)?;
    if compare_single {
        for (k, task) in p.tasks.iter().enumerate() {
            let single_targets = targets.clone().map(|split| {
                split
                    .into_iter()
                    .map(|row| vec![row[k]])
                    .collect::<Vec<_>>()
            });
            let descriptor = EnsembleDescriptor {
                tasks: vec![task.clone()],
                features: mode,
                seed: args.seed(),
            };
            let (_, h, _, single) =
                train_and_score(descriptor, &inputs, &single_targets, args, false)?;
            info!("single-task {}: {} epochs", task.name, h.len());
            report.merge_scoped("single", &single);
        }
    }
    save_checkpoint(out.join("ensemble.ckpt"), &model.to_checkpoint()?)?;
    write(&out.join("ensemble.history.tsv"), history.to_tsv())?;
    write(
        &out.join("ensemble.predictions.tsv"),
        format_predictions(&inputs[2].ids, &p.tasks, &denormalized(&pred, p.schema)),
    )?;
    write(&out.join("ensemble.report.tsv"), report.to_tsv())?;
    let kv = report.to_key_values();
    write(&out.join("ensemble.report.txt"), &kv)?;
    Ok(kv)
}

pub fn evaluate_files(
    args: &RunArgs,
    predictions: &Path,
    gold: Option<&Path>,
    dependent: bool,
) -> Result<String> {
    let problem = args.problem()?;
    let schema = Schema::for_problem(problem);
    let gold_path = match gold {
        Some(g) => resolve_input(g),
        None => args.data_path()?,
    };
    let gold = load_dataset(&gold_path, schema)?;
    let pred_path = resolve_input(predictions);
    let text = fs::read_to_string(&pred_path)
        .map_err(|e| Error::Usage(format!("cannot read {}: {e}", pred_path.display())))?;
    // score only the tasks the file has predictions for
    let present: HashSet<&str> = text.lines().filter_map(|l| l.split('\t').nth(1)).collect();
    let tasks: Vec<TaskSpec> = problem
        .tasks()
        .into_iter()
        .filter(|t| present.contains(t.name.as_str()))
        .collect();
    if tasks.is_empty() {
        return Err(Error::Data(format!(
            "{} has no predictions for any {problem} task",
            pred_path.display()
        )));
    }
    let pred = parse_predictions(
        &text,
        &ids(&gold.instances),
        &tasks,
        &pred_path.display().to_string(),
    )?;
    let report = evaluate(
        &tasks,
        &data::targets(&gold.instances, &tasks)?,
        &pred,
        dependent,
    )?;
    let kv = report.to_key_values();
    if args.out.is_some() {
        let out = args.out_dir()?;
        write(&out.join("report.tsv"), report.to_tsv())?;
        write(&out.join("report.txt"), &kv)?;
    }
    Ok(kv)
}
