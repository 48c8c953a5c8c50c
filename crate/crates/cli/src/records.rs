//! Delimited record files with a header row. Columns are matched by name
//! in any order; line numbers count the header as line 1.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use dualdebias::evalkit::{OutcomeRecord, ProfessionRecord};
use dualdebias::{Error, Result};

struct Table {
    header: HashMap<String, usize>,
    rows: Vec<(usize, csv::StringRecord)>,
}

impl Table {
    fn parse(text: &str) -> Result<Self> {
        let delimiter = if text.lines().next().is_some_and(|l| l.contains('\t')) {
            b'\t'
        } else {
            b','
        };
        let mut reader = csv::ReaderBuilder::new()
            .delimiter(delimiter)
            .trim(csv::Trim::All)
            .from_reader(text.as_bytes());
        let header = reader
            .headers()
            .map_err(|e| Error::Schema {
                line: 1,
                message: e.to_string(),
            })?
            .iter()
            .enumerate()
            .map(|(i, name)| (name.to_ascii_lowercase(), i))
            .collect();
        let mut rows = Vec::new();
        for (i, rec) in reader.records().enumerate() {
            let line = i + 2;
            rows.push((
                line,
                rec.map_err(|e| Error::Schema {
                    line,
                    message: e.to_string(),
                })?,
            ));
        }
        Ok(Self { header, rows })
    }

    /// Column index of `name`, or a schema error naming it.
    fn column(&self, name: &str) -> Result<usize> {
        self.header.get(name).copied().ok_or_else(|| Error::Schema {
            line: 1,
            message: format!("missing column '{name}'"),
        })
    }

    fn optional(&self, name: &str) -> Option<usize> {
        self.header.get(name).copied()
    }
}

fn field<'a>(rec: &'a csv::StringRecord, col: usize, name: &str, line: usize) -> Result<&'a str> {
    rec.get(col)
        .filter(|v| !v.is_empty())
        .ok_or_else(|| Error::Schema {
            line,
            message: format!("missing value in column '{name}'"),
        })
}

fn number(rec: &csv::StringRecord, col: usize, name: &str, line: usize) -> Result<f64> {
    let raw = field(rec, col, name, line)?;
    raw.parse().map_err(|_| Error::Schema {
        line,
        message: format!("column '{name}': cannot parse '{raw}' as a number"),
    })
}

fn schema(line: usize, e: Error) -> Error {
    match e {
        Error::Schema { .. } => e,
        other => Error::Schema {
            line,
            message: other.to_string(),
        },
    }
}

/// Columns `id, x_s, x_f, y`.
pub fn parse_professions(text: &str) -> Result<Vec<ProfessionRecord>> {
    let t = Table::parse(text)?;
    let cols = [
        t.column("id")?,
        t.column("x_s")?,
        t.column("x_f")?,
        t.column("y")?,
    ];
    t.rows
        .iter()
        .map(|(line, rec)| {
            let line = *line;
            let id = field(rec, cols[0], "id", line)?;
            let x_s = number(rec, cols[1], "x_s", line)?;
            let x_f = number(rec, cols[2], "x_f", line)?;
            let y = number(rec, cols[3], "y", line)?;
            ProfessionRecord::new(id, x_s, x_f, y).map_err(|e| schema(line, e))
        })
        .collect()
}

/// Columns `group, alignment, correct`, optionally `predicted, gold`.
/// `correct` accepts `true/false`, `1/0` and `yes/no`.
pub fn parse_outcomes(text: &str) -> Result<Vec<OutcomeRecord>> {
    let t = Table::parse(text)?;
    let cols = [
        t.column("group")?,
        t.column("alignment")?,
        t.column("correct")?,
    ];
    let labels = match (t.optional("predicted"), t.optional("gold")) {
        (Some(p), Some(g)) => Some((p, g)),
        (None, None) => None,
        (None, Some(_)) => return Err(t.column("predicted").unwrap_err()),
        (Some(_), None) => return Err(t.column("gold").unwrap_err()),
    };
    t.rows
        .iter()
        .map(|(line, rec)| {
            let line = *line;
            let group = field(rec, cols[0], "group", line)?
                .parse()
                .map_err(|e| schema(line, e))?;
            let alignment = field(rec, cols[1], "alignment", line)?
                .parse()
                .map_err(|e| schema(line, e))?;
            let correct = match field(rec, cols[2], "correct", line)?
                .to_ascii_lowercase()
                .as_str()
            {
                "true" | "1" | "yes" => true,
                "false" | "0" | "no" => false,
                other => {
                    return Err(Error::Schema {
                        line,
                        message: format!("column 'correct': cannot parse '{other}' as a boolean"),
                    })
                }
            };
            let mut r = OutcomeRecord::new(group, alignment, correct);
            if let Some((p, g)) = labels {
                r = r.with_labels(
                    field(rec, p, "predicted", line)?,
                    field(rec, g, "gold", line)?,
                );
            }
            Ok(r)
        })
        .collect()
}

pub fn read_professions(path: &Path) -> Result<Vec<ProfessionRecord>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_professions(&text)
}

pub fn read_outcomes(path: &Path) -> Result<Vec<OutcomeRecord>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_outcomes(&text)
}
