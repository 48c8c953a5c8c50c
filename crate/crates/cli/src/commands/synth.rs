use std::path::Path;

use dualdebias::format::write_matrix;
use dualdebias::rng::stream_rng;
use dualdebias::stats::SampleBatch;
use dualdebias::synthlab::{
    gen_gaussian_triple, gen_linear_layer_data, gen_toy_corpus, random_orthonormal, GenderWords,
    LayerDataSpec, PlantedSpec,
};
use dualdebias::{Error, Matrix, Result};
use rand::Rng;

use super::{lexicon, num, prepare_out, templates};
use crate::config::{RunConfig, SynthConfig};
use crate::store::write_text;

fn write_batches(out: &Path, batches: &[(&str, &SampleBatch)]) -> Result<()> {
    for (name, b) in batches {
        write_matrix(out.join(format!("{name}.ddm")), b.data())?;
    }
    Ok(())
}

fn gaussian(c: &SynthConfig, seed: u64) -> Result<PlantedSpec> {
    match c.layout.as_str() {
        "orthogonal" => PlantedSpec::orthogonal(
            c.dim,
            &c.bias_strengths,
            &c.feature_strengths,
            c.noise,
            seed,
        ),
        "shared" => match (c.bias_strengths.as_slice(), c.feature_strengths.as_slice()) {
            ([b], [f]) => PlantedSpec::shared_axis(c.dim, *b, *f, c.noise, seed),
            _ => Err(Error::invalid(
                "shared layout takes exactly one bias and one feature strength",
            )),
        },
        other => Err(Error::invalid(format!(
            "unknown synth.layout '{other}' (orthogonal|shared)"
        ))),
    }
}

/// Random `value_dim x key_dim` layer; concept directions are orthonormal
/// in output space and reach the keys through the layer's row space.
fn layer(c: &SynthConfig, seed: u64) -> Result<LayerDataSpec> {
    let mut rng = stream_rng(seed, 11);
    let s = Matrix::from_fn(c.value_dim, c.key_dim, |_, _| rng.random_range(-1.0..1.0));
    let nb = c.bias_strengths.len();
    let frame = random_orthonormal(c.value_dim, nb + c.feature_strengths.len(), seed)?;
    let pick = |offset: usize, strengths: &[f64]| -> Vec<_> {
        strengths
            .iter()
            .enumerate()
            .map(|(j, &st)| (frame.column(offset + j).into_owned(), st))
            .collect()
    };
    LayerDataSpec::through_outputs(
        s,
        c.noise,
        &pick(0, &c.bias_strengths),
        &pick(nb, &c.feature_strengths),
    )
}

/// Writes `gaussian`: x, zb, zf; `layer`: u, v, zb, zf and the planted
/// weight; `corpus`: the rendered prompts and a per-prompt label table.
pub fn run(config: &RunConfig) -> Result<()> {
    let c = &config.synth;
    let seed = config.seed;
    match c.kind.as_str() {
        "gaussian" => {
            let d = gen_gaussian_triple(&gaussian(c, seed)?, c.n, seed, c.exact)?;
            let out = prepare_out(config, &c.out, "synth.out")?;
            write_batches(&out, &[("x", &d.x), ("zb", &d.zb), ("zf", &d.zf)])?;
            println!("gaussian rows={} dim={}", c.n, c.dim);
        }
        "layer" => {
            let spec = layer(c, seed)?;
            let d = gen_linear_layer_data(&spec, c.n, seed, c.exact)?;
            let out = prepare_out(config, &c.out, "synth.out")?;
            write_batches(
                &out,
                &[("u", &d.u), ("v", &d.v), ("zb", &d.zb), ("zf", &d.zf)],
            )?;
            write_matrix(out.join("weight.ddm"), &spec.planted_s)?;
            println!(
                "layer rows={} keys={} values={}",
                c.n, c.key_dim, c.value_dim
            );
        }
        "corpus" => {
            let corpus = gen_toy_corpus(
                &lexicon(&c.lexicon)?,
                &templates(c.templates.as_deref())?,
                c.limit,
                seed,
                &GenderWords::default(),
            )?;
            let out = prepare_out(config, &c.out, "synth.out")?;
            write_text(&out.join("corpus.txt"), &corpus.render())?;
            let mut table = String::from("prompt,role,entity,gender_score,zb,zf\n");
            for (i, p) in corpus.prompts.iter().enumerate() {
                let (zb, zf) = p.concept_labels();
                table.push_str(&format!(
                    "{i},{},{},{},{},{}\n",
                    p.role,
                    corpus.lexicon[p.entity].surface,
                    num(p.gender_score),
                    num(zb),
                    num(zf)
                ));
            }
            write_text(&out.join("prompts.csv"), &table)?;
            println!(
                "corpus prompts={} vocab={}",
                corpus.prompts.len(),
                corpus.vocab.len()
            );
        }
        other => {
            return Err(Error::invalid(format!(
                "unknown synth.kind '{other}' (gaussian|layer|corpus)"
            )))
        }
    }
    Ok(())
}
