use nalgebra::DVector;

use super::corpus::{GenderTokens, PromptSample};
use super::toylm::ToyLM;
use crate::error::{Error, Result};
use crate::numerics::Matrix;
use crate::stats::{Role, SampleBatch};

fn check_layer(model: &ToyLM, layer: usize) -> Result<()> {
    if layer >= model.num_layers() {
        return Err(Error::invalid(format!(
            "layer {layer} out of range for a {}-layer model",
            model.num_layers()
        )));
    }
    Ok(())
}

fn keys_of<'a>(
    model: &ToyLM,
    contexts: impl ExactSizeIterator<Item = &'a [usize]>,
    layer: usize,
) -> Result<SampleBatch> {
    check_layer(model, layer)?;
    let mut out = Matrix::zeros(contexts.len(), model.hidden_dim());
    for (i, tokens) in contexts.enumerate() {
        let trace = model.forward(tokens)?;
        out.row_mut(i).copy_from(&trace.keys[layer].transpose());
    }
    SampleBatch::new(Role::U, out)
}

/// Keys of block `layer` at the final position of each prompt, one row per
/// prompt.
pub fn extract_keys(model: &ToyLM, prompts: &[PromptSample], layer: usize) -> Result<SampleBatch> {
    keys_of(model, prompts.iter().map(|p| p.tokens.as_slice()), layer)
}

/// One editing sample: a prompt prefix with its concept labels. `target`
/// is the gender score of a complete prompt and `None` for proper prefixes.
#[derive(Clone, Debug, PartialEq)]
pub struct EditContext {
    pub tokens: Vec<usize>,
    pub zb: f64,
    pub zf: f64,
    pub target: Option<f64>,
}

/// Every distinct prefix of every prompt, sorted by tokens. Prefixes that
/// end before the subject carry zero labels; a prefix shared by several
/// prompts keeps the entry of the first prompt listed.
pub fn prefix_contexts(prompts: &[PromptSample]) -> Vec<EditContext> {
    let mut out = Vec::new();
    for p in prompts {
        let (zb, zf) = p.concept_labels();
        for len in 1..=p.tokens.len() {
            let has_subject = len >= p.subject_end;
            out.push(EditContext {
                tokens: p.tokens[..len].to_vec(),
                zb: if has_subject { zb } else { 0.0 },
                zf: if has_subject { zf } else { 0.0 },
                target: (len == p.tokens.len()).then_some(p.gender_score),
            });
        }
    }
    out.sort_by(|a, b| a.tokens.cmp(&b.tokens));
    out.dedup_by(|later, first| later.tokens == first.tokens);
    out
}

/// Keys of block `layer` at the last position of each context.
pub fn extract_context_keys(
    model: &ToyLM,
    contexts: &[EditContext],
    layer: usize,
) -> Result<SampleBatch> {
    keys_of(model, contexts.iter().map(|c| c.tokens.as_slice()), layer)
}

/// `Zb` and `Zf` label batches for edit contexts.
pub fn context_concept_batches(contexts: &[EditContext]) -> Result<(SampleBatch, SampleBatch)> {
    let zb = Matrix::from_fn(contexts.len(), 1, |i, _| contexts[i].zb);
    let zf = Matrix::from_fn(contexts.len(), 1, |i, _| contexts[i].zf);
    Ok((
        SampleBatch::new(Role::Zb, zb)?,
        SampleBatch::new(Role::Zf, zf)?,
    ))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ValueSearch {
    pub steps: usize,
    pub step_size: f64,
}

impl Default for ValueSearch {
    fn default() -> Self {
        Self {
            steps: 20,
            step_size: 0.5,
        }
    }
}

#[derive(Clone, Debug)]
pub struct ValueExtraction {
    pub values: SampleBatch,
    pub initial_log_prob: Vec<f64>,
    pub final_log_prob: Vec<f64>,
}

const MAX_HALVINGS: usize = 40;

struct Ascent {
    value: DVector<f64>,
    initial: f64,
    last: f64,
}

fn check_search(
    model: &ToyLM,
    layer: usize,
    targets: GenderTokens,
    search: ValueSearch,
) -> Result<()> {
    check_layer(model, layer)?;
    if targets.male >= model.vocab_size() || targets.female >= model.vocab_size() {
        return Err(Error::invalid("target tokens outside the vocabulary"));
    }
    if !(search.step_size > 0.0) || !search.step_size.is_finite() {
        return Err(Error::invalid("value step_size must be positive"));
    }
    Ok(())
}

fn ascend(
    model: &ToyLM,
    tokens: &[usize],
    layer: usize,
    target: usize,
    search: ValueSearch,
) -> Result<Ascent> {
    let mut v = model.forward(tokens)?.hidden[layer + 1].clone();
    let (mut lp, mut grad) = model.output_log_prob_grad(layer, &v, target)?;
    let initial = lp;
    for _ in 0..search.steps {
        let mut eta = search.step_size;
        let mut accepted = false;
        for _ in 0..MAX_HALVINGS {
            let candidate = &v + &grad * eta;
            let (clp, cgrad) = model.output_log_prob_grad(layer, &candidate, target)?;
            if clp >= lp {
                v = candidate;
                lp = clp;
                grad = cgrad;
                accepted = true;
                break;
            }
            eta *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    Ok(Ascent {
        value: v,
        initial,
        last: lp,
    })
}

fn target_token(targets: GenderTokens, score: f64) -> usize {
    if score > 0.0 {
        targets.male
    } else {
        targets.female
    }
}

/// Per prompt, gradient ascent on `log p(target)` over block `layer`'s
/// output, starting from the current output. The target is the male token
/// for positive gender scores and the female token otherwise. A step that
/// does not increase the objective is halved until it does, or dropped.
pub fn extract_values(
    model: &ToyLM,
    prompts: &[PromptSample],
    layer: usize,
    targets: GenderTokens,
    search: ValueSearch,
) -> Result<ValueExtraction> {
    check_search(model, layer, targets, search)?;
    let mut out = Matrix::zeros(prompts.len(), model.embed_dim());
    let mut initial = Vec::with_capacity(prompts.len());
    let mut last = Vec::with_capacity(prompts.len());
    for (i, p) in prompts.iter().enumerate() {
        let a = ascend(
            model,
            &p.tokens,
            layer,
            target_token(targets, p.gender_score),
            search,
        )?;
        initial.push(a.initial);
        last.push(a.last);
        out.row_mut(i).copy_from(&a.value.transpose());
    }
    Ok(ValueExtraction {
        values: SampleBatch::new(Role::V, out)?,
        initial_log_prob: initial,
        final_log_prob: last,
    })
}

/// Values for edit contexts: gradient ascent as in [`extract_values`] for
/// complete prompts, the block's current output for proper prefixes.
pub fn extract_context_values(
    model: &ToyLM,
    contexts: &[EditContext],
    layer: usize,
    targets: GenderTokens,
    search: ValueSearch,
) -> Result<SampleBatch> {
    check_search(model, layer, targets, search)?;
    let mut out = Matrix::zeros(contexts.len(), model.embed_dim());
    for (i, c) in contexts.iter().enumerate() {
        let v = match c.target {
            Some(score) => {
                ascend(
                    model,
                    &c.tokens,
                    layer,
                    target_token(targets, score),
                    search,
                )?
                .value
            }
            None => model.forward(&c.tokens)?.hidden[layer + 1].clone(),
        };
        out.row_mut(i).copy_from(&v.transpose());
    }
    SampleBatch::new(Role::V, out)
}

/// `Zb` and `Zf` label batches for `prompts` (see
/// [`PromptSample::concept_labels`]).
pub fn concept_batches(prompts: &[PromptSample]) -> Result<(SampleBatch, SampleBatch)> {
    let zb = Matrix::from_fn(prompts.len(), 1, |i, _| prompts[i].concept_labels().0);
    let zf = Matrix::from_fn(prompts.len(), 1, |i, _| prompts[i].concept_labels().1);
    Ok((
        SampleBatch::new(Role::Zb, zb)?,
        SampleBatch::new(Role::Zf, zf)?,
    ))
}
