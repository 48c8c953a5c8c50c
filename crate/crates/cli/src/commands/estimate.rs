use dualdebias::format::read_any;
use dualdebias::stats::{estimate_sharded, Role, SampleBatch};
use dualdebias::{Error, Matrix, Result};

use super::prepare_out;
use crate::config::{PathList, RunConfig};
use crate::store::write_bundle;

/// Rows of all shard files of one role, in order.
fn load_rows(list: &PathList) -> Result<Matrix> {
    let mut parts = Vec::new();
    for p in list.paths() {
        let m = read_any(p)?;
        if m.nrows() == 0 {
            return Err(Error::InsufficientData(format!(
                "{}: no observations",
                p.display()
            )));
        }
        parts.push((p, m));
    }
    let cols = parts
        .first()
        .map(|(_, m)| m.ncols())
        .ok_or_else(|| Error::invalid("empty shard list"))?;
    if let Some((p, m)) = parts.iter().find(|(_, m)| m.ncols() != cols) {
        return Err(Error::invalid(format!(
            "{}: {} columns, earlier shards have {cols}",
            p.display(),
            m.ncols()
        )));
    }
    let rows: usize = parts.iter().map(|(_, m)| m.nrows()).sum();
    let mut out = Matrix::zeros(rows, cols);
    let mut at = 0;
    for (_, m) in &parts {
        out.rows_mut(at, m.nrows()).copy_from(m);
        at += m.nrows();
    }
    Ok(out)
}

pub fn run(config: &RunConfig) -> Result<()> {
    let c = &config.estimate;
    if c.inputs.is_empty() {
        return Err(Error::invalid("estimate.inputs lists no files"));
    }
    if c.shards == 0 {
        return Err(Error::invalid("estimate.shards must be at least 1"));
    }
    let mut roles: Vec<(Role, &PathList)> = c
        .inputs
        .iter()
        .map(|(name, paths)| Ok((name.parse::<Role>()?, paths)))
        .collect::<Result<_>>()?;
    roles.sort_by_key(|(r, _)| *r);
    let batches: Vec<SampleBatch> = roles
        .iter()
        .map(|(role, paths)| SampleBatch::new(*role, load_rows(paths)?))
        .collect::<Result<_>>()?;
    let rows = batches[0].rows();
    if let Some(b) = batches.iter().find(|b| b.rows() != rows) {
        return Err(Error::invalid(format!(
            "row-count mismatch: {} has {rows} rows, {} has {}",
            batches[0].role(),
            b.role(),
            b.rows()
        )));
    }
    let refs: Vec<&SampleBatch> = batches.iter().collect();
    let bundle = estimate_sharded(&refs, c.shards)?;
    let out = prepare_out(config, &c.out, "estimate.out")?;
    write_bundle(&out, &bundle)?;
    let dims: Vec<String> = bundle
        .registration()
        .iter()
        .map(|(r, d)| format!("{r}:{d}"))
        .collect();
    println!("count={} roles={}", bundle.count(), dims.join(","));
    Ok(())
}
