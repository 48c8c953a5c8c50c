use dualdebias::erasure::{dual_projector, leace_projector_from_bundle};
use dualdebias::evalkit::{variance_report, VarianceReport};
use dualdebias::stats::Role;
use dualdebias::{Error, Result};

use super::{num, prepare_out};
use crate::config::{required, RunConfig};
use crate::store::{read_bundle, write_plan, write_text};

pub fn totals_line(r: &VarianceReport) -> String {
    format!(
        "erased_bias_share={}, retained_feature_share={}",
        num(r.erased_bias_share),
        num(r.retained_feature_share)
    )
}

/// Dual projector when the bundle has `Zf`, single-concept erasure
/// otherwise.
pub fn run(config: &RunConfig) -> Result<()> {
    let c = &config.plan;
    let dir = required(&c.bundle, "plan.bundle")?;
    let bundle = read_bundle(dir)?;
    for role in [Role::X, Role::Zb] {
        if !bundle.has(role) {
            return Err(Error::invalid(format!(
                "{}: bundle has no '{role}' component",
                dir.display()
            )));
        }
    }
    let tol = config.tolerance()?;
    let spec = if bundle.has(Role::Zf) {
        dual_projector(&bundle, config.threshold_t, tol)?
    } else {
        leace_projector_from_bundle(&bundle, tol)?
    };
    let out = prepare_out(config, &c.out, "plan.out")?;
    write_plan(&out, &spec)?;
    let line = totals_line(&variance_report(&spec));
    write_text(&out.join("totals.txt"), &format!("{line}\n"))?;
    println!("{line}");
    Ok(())
}
