use dualdebias::evalkit::variance_report;
use dualdebias::Result;
use serde_json::json;

use super::plan::totals_line;
use super::{num, prepare_out};
use crate::config::{required, RunConfig};
use crate::store::{read_plan, write_text};

/// Per-direction variance table of a plan: a tab-separated table, a JSON
/// line per direction plus one totals line, and a printed summary.
pub fn run(config: &RunConfig) -> Result<()> {
    let c = &config.report;
    let spec = read_plan(required(&c.plan, "report.plan")?)?;
    let r = variance_report(&spec);
    let total_b: f64 = r.rows.iter().map(|row| row.var_bias).sum();
    let total_f: f64 = r.rows.iter().map(|row| row.var_feature).sum();
    let pct = |v: f64, total: f64| if total > 0.0 { 100.0 * v / total } else { 0.0 };

    let mut tsv = String::from("direction\tvar_bias\tvar_feature\tbias_pct\tfeature_pct\terased\n");
    let mut jsonl = String::new();
    let mut table = format!(
        "{:>9} {:>12} {:>12} {:>8} {:>8}  erased\n",
        "direction", "var_bias", "var_feature", "bias%", "feat%"
    );
    for row in &r.rows {
        let (bp, fp) = (pct(row.var_bias, total_b), pct(row.var_feature, total_f));
        tsv.push_str(&format!(
            "{}\t{}\t{}\t{}\t{}\t{}\n",
            row.direction,
            num(row.var_bias),
            num(row.var_feature),
            num(bp),
            num(fp),
            row.erased
        ));
        let line = json!({
            "direction": row.direction,
            "var_bias": row.var_bias,
            "var_feature": row.var_feature,
            "bias_pct": bp,
            "feature_pct": fp,
            "erased": row.erased,
        });
        jsonl.push_str(&format!("{line}\n"));
        table.push_str(&format!(
            "{:>9} {:>12.6} {:>12.6} {:>8.2} {:>8.2}  {}\n",
            row.direction, row.var_bias, row.var_feature, bp, fp, row.erased
        ));
    }
    let totals = json!({
        "erased_bias_share": r.erased_bias_share,
        "retained_bias_share": r.retained_bias_share,
        "erased_feature_share": r.erased_feature_share,
        "retained_feature_share": r.retained_feature_share,
    });
    jsonl.push_str(&format!("{totals}\n"));

    let out = prepare_out(config, &c.out, "report.out")?;
    write_text(&out.join("report.tsv"), &tsv)?;
    write_text(&out.join("report.jsonl"), &jsonl)?;
    print!("{table}");
    println!("{}", totals_line(&r));
    Ok(())
}
