use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Group {
    Male,
    Female,
}

impl FromStr for Group {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "male" | "m" => Ok(Group::Male),
            "female" | "f" => Ok(Group::Female),
            other => Err(Error::invalid(format!(
                "unknown group '{other}' (male|female)"
            ))),
        }
    }
}

impl fmt::Display for Group {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Group::Male => "male",
            Group::Female => "female",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Alignment {
    Pro,
    Anti,
    Neutral,
}

impl FromStr for Alignment {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "pro" => Ok(Alignment::Pro),
            "anti" => Ok(Alignment::Anti),
            "neutral" => Ok(Alignment::Neutral),
            other => Err(Error::invalid(format!(
                "unknown alignment '{other}' (pro|anti|neutral)"
            ))),
        }
    }
}

impl fmt::Display for Alignment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Alignment::Pro => "pro",
            Alignment::Anti => "anti",
            Alignment::Neutral => "neutral",
        })
    }
}

/// One evaluated instance (coreference or translation).
#[derive(Clone, Debug, PartialEq)]
pub struct OutcomeRecord {
    pub group: Group,
    pub alignment: Alignment,
    pub correct: bool,
    /// Predicted / gold gender labels, required in F1 mode.
    pub predicted: Option<String>,
    pub gold: Option<String>,
}

impl OutcomeRecord {
    pub fn new(group: Group, alignment: Alignment, correct: bool) -> Self {
        Self {
            group,
            alignment,
            correct,
            predicted: None,
            gold: None,
        }
    }

    pub fn with_labels(mut self, predicted: impl Into<String>, gold: impl Into<String>) -> Self {
        self.predicted = Some(predicted.into());
        self.gold = Some(gold.into());
        self
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum MetricMode {
    #[default]
    Accuracy,
    F1,
}

impl FromStr for MetricMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "accuracy" => Ok(MetricMode::Accuracy),
            "f1" => Ok(MetricMode::F1),
            other => Err(Error::invalid(format!(
                "unknown metric mode '{other}' (accuracy|f1)"
            ))),
        }
    }
}

impl fmt::Display for MetricMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MetricMode::Accuracy => "accuracy",
            MetricMode::F1 => "f1",
        })
    }
}

/// Gaps in percentage points. Positive values favour pro-stereotypical
/// instances (`delta_s`) and masculine entities (`delta_g`).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DeltaMetrics {
    pub delta_s: f64,
    pub delta_g: f64,
    pub mode: MetricMode,
}

pub fn delta_metrics(records: &[OutcomeRecord], mode: MetricMode) -> Result<DeltaMetrics> {
    let subset = |f: &dyn Fn(&OutcomeRecord) -> bool| -> Vec<&OutcomeRecord> {
        records.iter().filter(|r| f(r)).collect()
    };
    let pro = subset(&|r| r.alignment == Alignment::Pro);
    let anti = subset(&|r| r.alignment == Alignment::Anti);
    let male = subset(&|r| r.group == Group::Male);
    let female = subset(&|r| r.group == Group::Female);

    match mode {
        MetricMode::Accuracy => Ok(DeltaMetrics {
            delta_s: accuracy(&pro, "pro")? - accuracy(&anti, "anti")?,
            delta_g: accuracy(&male, "male")? - accuracy(&female, "female")?,
            mode,
        }),
        MetricMode::F1 => {
            if let Some(i) = records
                .iter()
                .position(|r| r.predicted.is_none() || r.gold.is_none())
            {
                return Err(Error::invalid(format!(
                    "F1 mode needs predicted and gold labels (record {i} lacks them)"
                )));
            }
            let all: Vec<&OutcomeRecord> = records.iter().collect();
            Ok(DeltaMetrics {
                delta_s: macro_f1(&pro, "pro")? - macro_f1(&anti, "anti")?,
                delta_g: class_f1(&all, Group::Male)? - class_f1(&all, Group::Female)?,
                mode,
            })
        }
    }
}

fn accuracy(rs: &[&OutcomeRecord], name: &str) -> Result<f64> {
    if rs.is_empty() {
        return Err(Error::UndefinedMetric(format!(
            "no records in group '{name}'"
        )));
    }
    let hits = rs.iter().filter(|r| r.correct).count();
    Ok(100.0 * hits as f64 / rs.len() as f64)
}

fn label_is(label: &Option<String>, class: Group) -> bool {
    label
        .as_deref()
        .and_then(|l| l.parse::<Group>().ok())
        .is_some_and(|g| g == class)
}

/// F1 (percent) of predicting gender `class` over `rs`.
fn class_f1(rs: &[&OutcomeRecord], class: Group) -> Result<f64> {
    let gold = rs.iter().filter(|r| label_is(&r.gold, class)).count();
    if gold == 0 {
        return Err(Error::UndefinedMetric(format!(
            "no records with gold label '{class}'"
        )));
    }
    let predicted = rs.iter().filter(|r| label_is(&r.predicted, class)).count();
    let tp = rs
        .iter()
        .filter(|r| label_is(&r.gold, class) && label_is(&r.predicted, class))
        .count();
    if tp == 0 {
        return Ok(0.0);
    }
    let precision = tp as f64 / predicted as f64;
    let recall = tp as f64 / gold as f64;
    Ok(100.0 * 2.0 * precision * recall / (precision + recall))
}

fn macro_f1(rs: &[&OutcomeRecord], name: &str) -> Result<f64> {
    if rs.is_empty() {
        return Err(Error::UndefinedMetric(format!(
            "no records in group '{name}'"
        )));
    }
    let classes: Vec<Group> = [Group::Male, Group::Female]
        .into_iter()
        .filter(|&g| rs.iter().any(|r| label_is(&r.gold, g)))
        .collect();
    if classes.is_empty() {
        return Err(Error::UndefinedMetric(format!(
            "group '{name}' has no male or female gold labels"
        )));
    }
    let mut total = 0.0;
    for &c in &classes {
        total += class_f1(rs, c)?;
    }
    Ok(total / classes.len() as f64)
}
