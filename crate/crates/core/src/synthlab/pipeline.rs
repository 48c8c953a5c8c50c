//! Train a toy model on a skewed corpus, edit its upper blocks, and measure
//! the bias fit and held-out perplexity before and after.
//!
//! Three disjoint roles for the data:
//! - a seeded random fraction of prompts is held out of training and scores
//!   perplexity;
//! - every `evaluation_stride`-th entity of each role is never used for the
//!   edit and scores the bias fit;
//! - training prompts of the remaining entities, with all their prefixes,
//!   supply the edit statistics.

use nalgebra::DVector;

use super::corpus::{
    gen_toy_corpus, training_sequences, GenderWords, LexiconEntry, PromptRole, PromptSample,
    ToyCorpus,
};
use super::extract::{
    context_concept_batches, extract_context_keys, extract_context_values, prefix_contexts,
    EditContext, ValueSearch,
};
use super::toylm::{train_toy_lm, PredictionSet, ToyLM, TrainConfig, TrainReport};
use crate::erasure::{build_edit_plan, plan_layers, EditMode, LayerEditData, LayerRange};
use crate::error::{Error, Result};
use crate::evalkit::{fit_bias_model, BiasFit, ProfessionRecord};
use crate::numerics::RankTolerance;

#[derive(Clone, Debug, PartialEq)]
pub struct PipelineConfig {
    pub seed: u64,
    pub train: TrainConfig,
    /// Male-continuation probability for `x_s = 1`.
    pub skew: f64,
    /// Share of prompts held out of training for perplexity.
    pub held_out_fraction: f64,
    /// Entity `k` of each role (in lexicon order) is an evaluation entity
    /// iff `k % evaluation_stride == evaluation_stride - 1`.
    pub evaluation_stride: usize,
    pub edit_count: usize,
    pub threshold: f64,
    pub mode: EditMode,
    pub values: ValueSearch,
    pub tolerance: RankTolerance,
    pub gender: GenderWords,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 47,
            train: TrainConfig {
                target_excess: 0.005,
                ..TrainConfig::default()
            },
            skew: 0.9,
            held_out_fraction: 0.1,
            evaluation_stride: 3,
            edit_count: 1,
            threshold: 0.05,
            mode: EditMode::InPlace,
            values: ValueSearch::default(),
            tolerance: RankTolerance::default(),
            gender: GenderWords::default(),
        }
    }
}

/// Bias fit on evaluation entities and held-out perplexity of one model.
#[derive(Clone, Debug, PartialEq)]
pub struct Snapshot {
    pub fit: BiasFit,
    pub perplexity: f64,
    /// Mean `p(male) + p(female) + p(neutral)` over the evaluation prompts;
    /// `y` itself is not renormalized.
    pub gendered_mass: f64,
    pub records: Vec<ProfessionRecord>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerSummary {
    pub layer: usize,
    /// `var_bias / var_feature` per direction.
    pub ratios: Vec<f64>,
    pub erased: usize,
}

#[derive(Clone, Debug)]
pub struct PipelineReport {
    pub training: TrainReport,
    pub range: LayerRange,
    pub layers: Vec<LayerSummary>,
    /// Number of edit contexts behind the statistics.
    pub contexts: usize,
    pub evaluation_entities: Vec<String>,
    pub before: Snapshot,
    pub after: Snapshot,
}

/// Split shuffled prompts into (training, held-out); the held-out part is
/// the first `round(fraction · len)` prompts, at least one and never all.
pub fn split_held_out(
    prompts: &[PromptSample],
    fraction: f64,
) -> Result<(Vec<PromptSample>, Vec<PromptSample>)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::invalid(format!(
            "held_out_fraction must be in (0, 1), got {fraction}"
        )));
    }
    if prompts.len() < 2 {
        return Err(Error::invalid("need at least two prompts to hold one out"));
    }
    let cut = ((prompts.len() as f64 * fraction).round() as usize).clamp(1, prompts.len() - 1);
    Ok((prompts[cut..].to_vec(), prompts[..cut].to_vec()))
}

/// Per-entity flag: true for evaluation entities.
pub fn evaluation_entities(lexicon: &[LexiconEntry], stride: usize) -> Result<Vec<bool>> {
    if stride < 2 {
        return Err(Error::invalid(format!(
            "evaluation_stride must be at least 2, got {stride}"
        )));
    }
    let mut seen = [0usize; 2];
    let flags = lexicon
        .iter()
        .map(|e| {
            let k = &mut seen[(e.role() == PromptRole::Factual) as usize];
            *k += 1;
            (*k - 1) % stride == stride - 1
        })
        .collect();
    if seen.iter().any(|&k| k < stride) {
        return Err(Error::invalid(format!(
            "each role needs at least {stride} entities to leave one for evaluation"
        )));
    }
    Ok(flags)
}

/// Per entity, the mean of `p(male) - p(female)` over its prompts.
pub fn bias_records(
    model: &ToyLM,
    corpus: &ToyCorpus,
    prompts: &[PromptSample],
) -> Result<Vec<ProfessionRecord>> {
    let mut sums = vec![(0.0, 0usize); corpus.lexicon.len()];
    for p in prompts {
        let probs = model.probs(&p.tokens)?;
        let s = &mut sums[p.entity];
        s.0 += probs[corpus.gender.male] - probs[corpus.gender.female];
        s.1 += 1;
    }
    corpus
        .lexicon
        .iter()
        .zip(sums)
        .filter(|(_, (_, n))| *n > 0)
        .map(|(e, (sum, n))| ProfessionRecord::new(&e.surface, e.x_s, e.x_f, sum / n as f64))
        .collect()
}

pub fn snapshot(
    model: &ToyLM,
    corpus: &ToyCorpus,
    evaluation: &[PromptSample],
    held_out: &PredictionSet,
) -> Result<Snapshot> {
    let records = bias_records(model, corpus, evaluation)?;
    let g = corpus.gender;
    let mut mass = 0.0;
    for p in evaluation {
        let probs = model.probs(&p.tokens)?;
        mass += probs[g.male] + probs[g.female] + probs[g.neutral];
    }
    Ok(Snapshot {
        fit: fit_bias_model(&records)?,
        perplexity: model.perplexity(held_out)?,
        gendered_mass: mass / evaluation.len().max(1) as f64,
        records,
    })
}

/// Edit blocks `range` of `model` from the statistics of `contexts`.
/// The output bias absorbs the mean shift so that the mean block output
/// over the contexts is unchanged.
pub fn edit_model(
    model: &ToyLM,
    contexts: &[EditContext],
    range: LayerRange,
    config: &PipelineConfig,
    corpus: &ToyCorpus,
) -> Result<(ToyLM, Vec<LayerSummary>)> {
    let (zb, zf) = context_concept_batches(contexts)?;
    let mut data = Vec::with_capacity(range.len);
    for layer in range.iter() {
        let keys = extract_context_keys(model, contexts, layer)?;
        let values = match config.mode {
            EditMode::Refit => Some(extract_context_values(
                model,
                contexts,
                layer,
                corpus.gender,
                config.values,
            )?),
            EditMode::InPlace => None,
        };
        data.push(LayerEditData { keys, values });
    }
    let weights: Vec<_> = model.layers.iter().map(|b| b.down.clone()).collect();
    let plan = build_edit_plan(
        &weights,
        range,
        &data,
        &zb,
        Some(&zf),
        config.threshold,
        config.mode,
        config.tolerance,
    )?;
    let mut edited = model.clone();
    let mut summary = Vec::with_capacity(plan.layers.len());
    for (planned, d) in plan.layers.into_iter().zip(&data) {
        let block = &model.layers[planned.index];
        let mean_key: DVector<f64> = d.keys.data().row_mean().transpose();
        let bias = &block.down_bias + (&block.down - &planned.weight) * mean_key;
        summary.push(LayerSummary {
            layer: planned.index,
            ratios: planned
                .spec
                .directions
                .iter()
                .map(|d| d.var_bias / d.var_feature)
                .collect(),
            erased: planned.spec.erased.len(),
        });
        edited.set_layer_output(planned.index, planned.weight, bias)?;
    }
    Ok((edited, summary))
}

/// Prompts of one corpus by use.
#[derive(Clone, Debug)]
pub struct CorpusSplit {
    pub train: Vec<PromptSample>,
    pub held_out: Vec<PromptSample>,
    /// Every prompt of an evaluation entity, trained or held out.
    pub evaluation: Vec<PromptSample>,
    /// Prefix contexts of the training prompts of non-evaluation entities.
    pub contexts: Vec<EditContext>,
    /// Per lexicon entry, true for evaluation entities.
    pub is_eval: Vec<bool>,
}

pub fn split_corpus(corpus: &ToyCorpus, config: &PipelineConfig) -> Result<CorpusSplit> {
    let (train, held_out) = split_held_out(&corpus.prompts, config.held_out_fraction)?;
    let is_eval = evaluation_entities(&corpus.lexicon, config.evaluation_stride)?;
    let evaluation = corpus
        .prompts
        .iter()
        .filter(|p| is_eval[p.entity])
        .cloned()
        .collect();
    let edit_prompts: Vec<_> = train
        .iter()
        .filter(|p| !is_eval[p.entity])
        .cloned()
        .collect();
    Ok(CorpusSplit {
        contexts: prefix_contexts(&edit_prompts),
        train,
        held_out,
        evaluation,
        is_eval,
    })
}

/// Training and held-out prediction sets under the configured skew.
pub fn prediction_sets(
    corpus: &ToyCorpus,
    split: &CorpusSplit,
    skew: f64,
) -> Result<(PredictionSet, PredictionSet)> {
    Ok((
        PredictionSet::from_sequences(&training_sequences(&split.train, corpus.gender, skew)?)?,
        PredictionSet::from_sequences(&training_sequences(&split.held_out, corpus.gender, skew)?)?,
    ))
}

/// Train, measure, edit the planned upper blocks, measure again.
pub fn run_edit_pipeline(
    lexicon: &[LexiconEntry],
    templates: &[String],
    config: &PipelineConfig,
) -> Result<(ToyLM, ToyLM, PipelineReport)> {
    let corpus = gen_toy_corpus(lexicon, templates, None, config.seed, &config.gender)?;
    let split = split_corpus(&corpus, config)?;
    let (train_set, test_set) = prediction_sets(&corpus, &split, config.skew)?;
    let (model, training) =
        train_toy_lm(&train_set, corpus.vocab.len(), &config.train, config.seed)?;

    let before = snapshot(&model, &corpus, &split.evaluation, &test_set)?;
    let range = plan_layers(model.num_layers(), config.edit_count)?;
    let (edited, layers) = edit_model(&model, &split.contexts, range, config, &corpus)?;
    let after = snapshot(&edited, &corpus, &split.evaluation, &test_set)?;
    let evaluation_entities = corpus
        .lexicon
        .iter()
        .zip(&split.is_eval)
        .filter(|(_, &e)| e)
        .map(|(e, _)| e.surface.clone())
        .collect();
    Ok((
        model,
        edited,
        PipelineReport {
            training,
            range,
            layers,
            contexts: split.contexts.len(),
            evaluation_entities,
            before,
            after,
        },
    ))
}
