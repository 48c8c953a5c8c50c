use crate::erasure::ErasureSpec;

#[derive(Clone, Debug, PartialEq)]
pub struct ReportRow {
    /// Index into `ErasureSpec::directions`.
    pub direction: usize,
    pub var_feature: f64,
    pub var_bias: f64,
    pub erased: bool,
}

/// Per-direction variances and the share of each concept's variance that
/// falls on erased vs preserved directions (percent).
#[derive(Clone, Debug, PartialEq)]
pub struct VarianceReport {
    /// Sorted by `var_bias`, largest first.
    pub rows: Vec<ReportRow>,
    pub erased_bias_share: f64,
    pub retained_bias_share: f64,
    pub erased_feature_share: f64,
    pub retained_feature_share: f64,
}

pub fn variance_report(spec: &ErasureSpec) -> VarianceReport {
    let mut rows: Vec<ReportRow> = spec
        .directions
        .iter()
        .enumerate()
        .map(|(i, d)| ReportRow {
            direction: i,
            var_feature: d.var_feature,
            var_bias: d.var_bias,
            erased: spec.erased.contains(&i),
        })
        .collect();
    rows.sort_by(|a, b| {
        b.var_bias
            .total_cmp(&a.var_bias)
            .then(a.direction.cmp(&b.direction))
    });

    let split = |get: fn(&ReportRow) -> f64| -> (f64, f64) {
        let total: f64 = rows.iter().map(get).sum();
        let erased: f64 = rows.iter().filter(|r| r.erased).map(get).sum();
        if total > 0.0 {
            let e = 100.0 * erased / total;
            (e, 100.0 - e)
        } else {
            (0.0, 100.0)
        }
    };
    let (erased_bias_share, retained_bias_share) = split(|r| r.var_bias);
    let (erased_feature_share, retained_feature_share) = split(|r| r.var_feature);
    VarianceReport {
        rows,
        erased_bias_share,
        retained_bias_share,
        erased_feature_share,
        retained_feature_share,
    }
}
