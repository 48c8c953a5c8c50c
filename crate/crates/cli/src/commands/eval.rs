use dualdebias::evalkit::{delta_metrics, fit_bias_model, BiasFit, DeltaMetrics, MetricMode};
use dualdebias::{Error, Result};

use super::{num, prepare_out};
use crate::config::RunConfig;
use crate::records::{read_outcomes, read_professions};
use crate::store::write_text;

pub fn bias_fit_text(f: &BiasFit) -> String {
    format!(
        "a_s={}\na_f={}\nb0={}\nr_squared={}\nn={}\n",
        num(f.a_s),
        num(f.a_f),
        num(f.b0),
        num(f.r_squared),
        f.n
    )
}

fn delta_text(d: &DeltaMetrics) -> String {
    format!(
        "mode={}\ndelta_s={}\ndelta_g={}\n",
        d.mode,
        num(d.delta_s),
        num(d.delta_g)
    )
}

pub fn run(config: &RunConfig) -> Result<()> {
    let c = &config.eval;
    if c.professions.is_none() && c.outcomes.is_none() {
        return Err(Error::invalid(
            "eval needs eval.professions or eval.outcomes",
        ));
    }
    let mode: MetricMode = c.metric.parse()?;
    let fit = match &c.professions {
        Some(p) => Some(bias_fit_text(&fit_bias_model(&read_professions(p)?)?)),
        None => None,
    };
    let delta = match &c.outcomes {
        Some(p) => Some(delta_text(&delta_metrics(&read_outcomes(p)?, mode)?)),
        None => None,
    };
    let out = prepare_out(config, &c.out, "eval.out")?;
    if let Some(text) = fit {
        write_text(&out.join("bias_fit.txt"), &text)?;
        print!("{text}");
    }
    if let Some(text) = delta {
        write_text(&out.join("delta.txt"), &text)?;
        print!("{text}");
    }
    Ok(())
}
