use dualdebias::erasure::EditMode;
use dualdebias::evalkit::ProfessionRecord;
use dualdebias::format::write_matrix;
use dualdebias::synthlab::pipeline::prediction_sets;
use dualdebias::synthlab::train_toy_lm;
use dualdebias::synthlab::{
    context_concept_batches, extract_context_keys, extract_context_values, gen_toy_corpus,
    run_edit_pipeline, split_corpus, PipelineConfig, Snapshot, ToyCorpus, TrainConfig, TrainReport,
    ValueSearch,
};
use dualdebias::{Error, Result};
use serde::Serialize;

use super::{lexicon, num, prepare_out, templates};
use crate::config::{required, RunConfig};
use crate::store::{read_model, write_model, write_text, write_toml};

fn pipeline_config(config: &RunConfig) -> Result<PipelineConfig> {
    let c = &config.toylm;
    let mode: EditMode = c.mode.parse()?;
    Ok(PipelineConfig {
        seed: config.seed,
        train: TrainConfig {
            embed_dim: c.embed_dim,
            hidden_dim: c.hidden_dim,
            num_layers: c.num_layers,
            residual: c.residual,
            learning_rate: c.learning_rate,
            weight_decay: c.weight_decay,
            max_epochs: c.max_epochs,
            target_excess: c.target_excess,
        },
        skew: c.skew,
        held_out_fraction: c.held_out_fraction,
        evaluation_stride: c.evaluation_stride,
        edit_count: c.edit_count,
        threshold: config.threshold_t,
        mode,
        values: ValueSearch {
            steps: c.value_steps,
            step_size: c.value_step_size,
        },
        tolerance: config.tolerance()?,
        ..PipelineConfig::default()
    })
}

fn corpus(config: &RunConfig, p: &PipelineConfig) -> Result<ToyCorpus> {
    let c = &config.toylm;
    gen_toy_corpus(
        &lexicon(&c.lexicon)?,
        &templates(c.templates.as_deref())?,
        None,
        p.seed,
        &p.gender,
    )
}

#[derive(Serialize)]
struct TrainSummary {
    epochs: usize,
    final_loss: f64,
    entropy_floor: f64,
    held_out_perplexity: f64,
}

fn loss_trace(report: &TrainReport) -> String {
    let mut s = String::from("epoch,loss\n");
    for (i, l) in report.loss_trace.iter().enumerate() {
        s.push_str(&format!("{i},{}\n", num(*l)));
    }
    s
}

/// Train on the corpus's training split; writes `model/`, a summary, the
/// loss trace and the rendered corpus.
pub fn train(config: &RunConfig) -> Result<()> {
    let p = pipeline_config(config)?;
    let corpus = corpus(config, &p)?;
    let split = split_corpus(&corpus, &p)?;
    let (train_set, test_set) = prediction_sets(&corpus, &split, p.skew)?;
    let (model, report) = train_toy_lm(&train_set, corpus.vocab.len(), &p.train, p.seed)?;
    let summary = TrainSummary {
        epochs: report.epochs,
        final_loss: report.final_loss,
        entropy_floor: report.entropy_floor,
        held_out_perplexity: model.perplexity(&test_set)?,
    };
    let out = prepare_out(config, &config.toylm.out, "toylm.out")?;
    write_model(&out.join("model"), &model, &corpus.vocab)?;
    write_toml(&out.join("train_report.toml"), &summary)?;
    write_text(&out.join("loss_trace.csv"), &loss_trace(&report))?;
    write_text(&out.join("corpus.txt"), &corpus.render())?;
    println!(
        "trained {} epochs, loss {}, held-out perplexity {}",
        summary.epochs,
        num(summary.final_loss),
        num(summary.held_out_perplexity)
    );
    Ok(())
}

/// Keys, values and concept labels of the edit contexts at `toylm.layer`,
/// plus that layer's weight, ready for `estimate` and `edit`.
pub fn extract(config: &RunConfig) -> Result<()> {
    let c = &config.toylm;
    let p = pipeline_config(config)?;
    let (model, words) = read_model(required(&c.model, "toylm.model")?)?;
    let corpus = corpus(config, &p)?;
    if words != corpus.vocab.words() {
        return Err(Error::invalid(
            "model vocabulary does not match the configured corpus",
        ));
    }
    if c.layer >= model.num_layers() {
        return Err(Error::invalid(format!(
            "toylm.layer {} out of range for a {}-layer model",
            c.layer,
            model.num_layers()
        )));
    }
    let split = split_corpus(&corpus, &p)?;
    let keys = extract_context_keys(&model, &split.contexts, c.layer)?;
    let values = extract_context_values(&model, &split.contexts, c.layer, corpus.gender, p.values)?;
    let (zb, zf) = context_concept_batches(&split.contexts)?;
    let out = prepare_out(config, &c.out, "toylm.out")?;
    write_matrix(out.join("u.ddm"), keys.data())?;
    write_matrix(out.join("v.ddm"), values.data())?;
    write_matrix(out.join("zb.ddm"), zb.data())?;
    write_matrix(out.join("zf.ddm"), zf.data())?;
    write_matrix(out.join("weight.ddm"), &model.layers[c.layer].down)?;
    println!(
        "layer {} contexts={} key_dim={}",
        c.layer,
        split.contexts.len(),
        model.hidden_dim()
    );
    Ok(())
}

#[derive(Serialize)]
struct SnapshotSummary {
    a_s: f64,
    a_f: f64,
    b0: f64,
    r_squared: f64,
    perplexity: f64,
    gendered_mass: f64,
}

impl From<&Snapshot> for SnapshotSummary {
    fn from(s: &Snapshot) -> Self {
        Self {
            a_s: s.fit.a_s,
            a_f: s.fit.a_f,
            b0: s.fit.b0,
            r_squared: s.fit.r_squared,
            perplexity: s.perplexity,
            gendered_mass: s.gendered_mass,
        }
    }
}

#[derive(Serialize)]
struct LayerSummaryOut {
    layer: usize,
    ratios: Vec<f64>,
    erased: usize,
}

#[derive(Serialize)]
struct PipelineSummary {
    seed: u64,
    edited_layers: String,
    contexts: usize,
    epochs: usize,
    evaluation_entities: Vec<String>,
    before: SnapshotSummary,
    after: SnapshotSummary,
    layers: Vec<LayerSummaryOut>,
}

fn records_csv(records: &[ProfessionRecord]) -> String {
    let mut s = String::from("id,x_s,x_f,y\n");
    for r in records {
        s.push_str(&format!(
            "{},{},{},{}\n",
            r.id,
            num(r.x_s),
            num(r.x_f),
            num(r.y)
        ));
    }
    s
}

fn triple(label: &str, s: &Snapshot) -> String {
    format!(
        "{label} a_s={} a_f={} perplexity={}",
        num(s.fit.a_s),
        num(s.fit.a_f),
        num(s.perplexity)
    )
}

/// Train, edit the planned upper blocks, and write before/after bias fits,
/// perplexities and both models.
pub fn edit_pipeline(config: &RunConfig) -> Result<()> {
    let c = &config.toylm;
    let p = pipeline_config(config)?;
    let lex = lexicon(&c.lexicon)?;
    let tpl = templates(c.templates.as_deref())?;
    let (model, edited, report) = run_edit_pipeline(&lex, &tpl, &p)?;
    let corpus = gen_toy_corpus(&lex, &tpl, None, p.seed, &p.gender)?;
    let summary = PipelineSummary {
        seed: p.seed,
        edited_layers: report.range.to_string(),
        contexts: report.contexts,
        epochs: report.training.epochs,
        evaluation_entities: report.evaluation_entities.clone(),
        before: (&report.before).into(),
        after: (&report.after).into(),
        layers: report
            .layers
            .iter()
            .map(|l| LayerSummaryOut {
                layer: l.layer,
                ratios: l.ratios.clone(),
                erased: l.erased,
            })
            .collect(),
    };
    let out = prepare_out(config, &c.out, "toylm.out")?;
    write_model(&out.join("model"), &model, &corpus.vocab)?;
    write_model(&out.join("edited"), &edited, &corpus.vocab)?;
    write_toml(&out.join("pipeline_report.toml"), &summary)?;
    write_text(
        &out.join("records_before.csv"),
        &records_csv(&report.before.records),
    )?;
    write_text(
        &out.join("records_after.csv"),
        &records_csv(&report.after.records),
    )?;
    write_text(&out.join("loss_trace.csv"), &loss_trace(&report.training))?;
    let lines = format!(
        "{}\n{}\n",
        triple("before", &report.before),
        triple("after", &report.after)
    );
    write_text(&out.join("triple.txt"), &lines)?;
    print!("edited layers {}\n{lines}", report.range);
    Ok(())
}
