use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::rng::stream_rng;

/// One lexicon line: a word with stereotypical and factual gender scores.
#[derive(Clone, Debug, PartialEq)]
pub struct LexiconEntry {
    pub surface: String,
    pub x_s: f64,
    pub x_f: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum PromptRole {
    Stereotypical,
    Factual,
}

impl fmt::Display for PromptRole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PromptRole::Stereotypical => "stereotypical",
            PromptRole::Factual => "factual",
        })
    }
}

impl FromStr for PromptRole {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "stereotypical" => Ok(PromptRole::Stereotypical),
            "factual" => Ok(PromptRole::Factual),
            other => Err(Error::invalid(format!("unknown prompt role '{other}'"))),
        }
    }
}

impl LexiconEntry {
    pub fn new(surface: impl Into<String>, x_s: f64, x_f: f64) -> Result<Self> {
        let surface = surface.into();
        if surface.split_whitespace().next().is_none() {
            return Err(Error::invalid("lexicon entry has an empty surface form"));
        }
        for (name, v) in [("x_s", x_s), ("x_f", x_f)] {
            if !v.is_finite() || !(-1.0..=1.0).contains(&v) {
                return Err(Error::invalid(format!(
                    "'{surface}': {name} = {v} outside [-1, 1]"
                )));
            }
        }
        if x_f != 0.0 && x_f.abs() != 1.0 {
            return Err(Error::invalid(format!(
                "'{surface}': factual score must be -1, 0 or 1, got {x_f}"
            )));
        }
        if x_f == 0.0 && x_s == 0.0 {
            return Err(Error::invalid(format!(
                "'{surface}': carries neither a stereotypical nor a factual score"
            )));
        }
        Ok(Self { surface, x_s, x_f })
    }

    /// Factual when `x_f = ±1`, otherwise stereotypical.
    pub fn role(&self) -> PromptRole {
        if self.x_f != 0.0 {
            PromptRole::Factual
        } else {
            PromptRole::Stereotypical
        }
    }

    pub fn gender_score(&self) -> f64 {
        match self.role() {
            PromptRole::Factual => self.x_f,
            PromptRole::Stereotypical => self.x_s,
        }
    }
}

/// Parse `surface_form, x_s, x_f` lines (comma or tab separated). A header
/// row is recognised by a non-numeric `x_s` field on the first line.
pub fn parse_lexicon(text: &str) -> Result<Vec<LexiconEntry>> {
    let delimiter = if text.lines().next().is_some_and(|l| l.contains('\t')) {
        b'\t'
    } else {
        b','
    };
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .delimiter(delimiter)
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_reader(text.as_bytes());
    let mut out = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let line = i + 1;
        let rec = rec.map_err(|e| Error::Schema {
            line,
            message: e.to_string(),
        })?;
        if rec.len() != 3 {
            return Err(Error::Schema {
                line,
                message: format!(
                    "expected 3 columns (surface_form, x_s, x_f), found {}",
                    rec.len()
                ),
            });
        }
        let parse = |j: usize, name: &str| {
            rec[j].parse::<f64>().map_err(|_| Error::Schema {
                line,
                message: format!("column '{name}': cannot parse '{}' as a number", &rec[j]),
            })
        };
        let x_s = match parse(1, "x_s") {
            Ok(v) => v,
            Err(_) if i == 0 => continue,
            Err(e) => return Err(e),
        };
        let x_f = parse(2, "x_f")?;
        let entry = LexiconEntry::new(&rec[0], x_s, x_f).map_err(|e| Error::Schema {
            line,
            message: e.to_string(),
        })?;
        out.push(entry);
    }
    Ok(out)
}

/// Token inventory. Ids are assigned in first-seen order, so the vocabulary
/// depends only on the gender tokens, templates and lexicon, never the seed.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Vocab {
    words: Vec<String>,
    ids: BTreeMap<String, usize>,
}

impl Vocab {
    pub fn intern(&mut self, word: &str) -> usize {
        if let Some(&id) = self.ids.get(word) {
            return id;
        }
        self.words.push(word.to_string());
        self.ids.insert(word.to_string(), self.words.len() - 1);
        self.words.len() - 1
    }

    pub fn id(&self, word: &str) -> Result<usize> {
        self.ids
            .get(word)
            .copied()
            .ok_or_else(|| Error::invalid(format!("token '{word}' is not in the vocabulary")))
    }

    pub fn word(&self, id: usize) -> &str {
        &self.words[id]
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }
}

/// Continuation tokens: `male` / `female` are the value targets, `neutral`
/// is in the vocabulary but never trained as a continuation.
#[derive(Clone, Debug, PartialEq)]
pub struct GenderWords {
    pub male: String,
    pub female: String,
    pub neutral: String,
}

impl Default for GenderWords {
    fn default() -> Self {
        Self {
            male: "he".into(),
            female: "she".into(),
            neutral: "they".into(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct GenderTokens {
    pub male: usize,
    pub female: usize,
    pub neutral: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PromptSample {
    pub tokens: Vec<usize>,
    pub role: PromptRole,
    /// `x_s` for stereotypical prompts, `x_f = ±1` for factual ones.
    pub gender_score: f64,
    pub template: usize,
    pub entity: usize,
    /// One past the last subject token; prefixes shorter than this do not
    /// mention the subject.
    pub subject_end: usize,
}

impl PromptSample {
    /// Concept labels `(z_b, z_f)`: the stereotype sign on stereotypical
    /// prompts, the factual sign on factual prompts, zero otherwise.
    pub fn concept_labels(&self) -> (f64, f64) {
        let sign = self.gender_score.signum();
        match self.role {
            PromptRole::Stereotypical => (sign, 0.0),
            PromptRole::Factual => (0.0, sign),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ToyCorpus {
    pub vocab: Vocab,
    pub gender: GenderTokens,
    pub templates: Vec<Vec<String>>,
    pub lexicon: Vec<LexiconEntry>,
    pub prompts: Vec<PromptSample>,
}

fn is_slot(word: &str) -> bool {
    word.len() > 2 && word.starts_with('<') && word.ends_with('>')
}

/// Split a template into lowercase words and check for exactly one
/// `<slot>` token.
pub fn tokenize_template(template: &str) -> Result<Vec<String>> {
    let words: Vec<String> = template.split_whitespace().map(str::to_lowercase).collect();
    let slots = words.iter().filter(|w| is_slot(w)).count();
    if slots != 1 {
        return Err(Error::invalid(format!(
            "template '{template}' must contain exactly one <subject> slot, found {slots}"
        )));
    }
    Ok(words)
}

/// Expand every template with every lexicon entry, shuffle with `seed`, and
/// keep the first `limit` prompts when given.
pub fn gen_toy_corpus(
    lexicon: &[LexiconEntry],
    templates: &[String],
    limit: Option<usize>,
    seed: u64,
    gender: &GenderWords,
) -> Result<ToyCorpus> {
    if lexicon.is_empty() {
        return Err(Error::invalid("lexicon is empty"));
    }
    if templates.is_empty() {
        return Err(Error::invalid("no templates given"));
    }
    let tokenized: Vec<Vec<String>> = templates
        .iter()
        .map(|t| tokenize_template(t))
        .collect::<Result<_>>()?;

    let mut vocab = Vocab::default();
    let gender_tokens = GenderTokens {
        male: vocab.intern(&gender.male),
        female: vocab.intern(&gender.female),
        neutral: vocab.intern(&gender.neutral),
    };
    if vocab.len() != 3 {
        return Err(Error::invalid(
            "male, female and neutral tokens must be distinct",
        ));
    }
    for w in tokenized.iter().flatten().filter(|w| !is_slot(w)) {
        vocab.intern(w);
    }
    let entity_tokens: Vec<Vec<usize>> = lexicon
        .iter()
        .map(|e| {
            e.surface
                .split_whitespace()
                .map(|w| vocab.intern(&w.to_lowercase()))
                .collect()
        })
        .collect();
    for (e, toks) in lexicon.iter().zip(&entity_tokens) {
        if toks.iter().any(|t| {
            [
                gender_tokens.male,
                gender_tokens.female,
                gender_tokens.neutral,
            ]
            .contains(t)
        }) {
            return Err(Error::invalid(format!(
                "lexicon entry '{}' reuses a gender token",
                e.surface
            )));
        }
    }

    let mut prompts = Vec::with_capacity(templates.len() * lexicon.len());
    for (ti, words) in tokenized.iter().enumerate() {
        for (ei, entry) in lexicon.iter().enumerate() {
            let mut tokens = Vec::with_capacity(words.len() + 1);
            let mut subject_end = 0;
            for w in words {
                if is_slot(w) {
                    tokens.extend_from_slice(&entity_tokens[ei]);
                    subject_end = tokens.len();
                } else {
                    tokens.push(vocab.id(w)?);
                }
            }
            prompts.push(PromptSample {
                tokens,
                role: entry.role(),
                gender_score: entry.gender_score(),
                template: ti,
                entity: ei,
                subject_end,
            });
        }
    }
    prompts.shuffle(&mut stream_rng(seed, 3));
    if let Some(n) = limit {
        prompts.truncate(n);
    }
    Ok(ToyCorpus {
        vocab,
        gender: gender_tokens,
        templates: tokenized,
        lexicon: lexicon.to_vec(),
        prompts,
    })
}

impl ToyCorpus {
    pub fn text(&self, prompt: &PromptSample) -> String {
        prompt
            .tokens
            .iter()
            .map(|&t| self.vocab.word(t))
            .collect::<Vec<_>>()
            .join(" ")
    }

    /// Tab-separated listing: template, entity, role, gender score, text.
    pub fn render(&self) -> String {
        let mut out = String::from("template\tentity\trole\tgender_score\ttext\n");
        for p in &self.prompts {
            out.push_str(&format!(
                "{}\t{}\t{}\t{:?}\t{}\n",
                p.template,
                self.lexicon[p.entity].surface,
                p.role,
                p.gender_score,
                self.text(p)
            ));
        }
        out
    }
}

/// A token sequence whose last continuation is a distribution rather than
/// a single token.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainingSequence {
    pub tokens: Vec<usize>,
    pub continuation: Vec<(usize, f64)>,
}

/// Probability of the male continuation: `0.5 + (skew - 0.5)·x_s` for
/// stereotypical prompts and `0.5 + 0.5·x_f` for factual ones.
pub fn male_probability(prompt: &PromptSample, skew: f64) -> f64 {
    match prompt.role {
        PromptRole::Stereotypical => 0.5 + (skew - 0.5) * prompt.gender_score,
        PromptRole::Factual => 0.5 + 0.5 * prompt.gender_score,
    }
}

/// Each prompt continued by the male or female token with the skewed
/// probabilities; `skew = 0.9` gives a 90/10 split for `|x_s| = 1`.
pub fn training_sequences(
    prompts: &[PromptSample],
    gender: GenderTokens,
    skew: f64,
) -> Result<Vec<TrainingSequence>> {
    if !(0.5..=1.0).contains(&skew) {
        return Err(Error::invalid(format!(
            "stereotype skew must lie in [0.5, 1], got {skew}"
        )));
    }
    Ok(prompts
        .iter()
        .map(|p| {
            let pm = male_probability(p, skew);
            let continuation = [(gender.male, pm), (gender.female, 1.0 - pm)]
                .into_iter()
                .filter(|&(_, q)| q > 0.0)
                .collect();
            TrainingSequence {
                tokens: p.tokens.clone(),
                continuation,
            }
        })
        .collect())
}

/// Eleven templates in the spirit of "The <subject> laughed because".
pub fn default_templates() -> Vec<String> {
    [
        "the <subject> laughed because",
        "the <subject> smiled because",
        "the <subject> cried because",
        "the <subject> left early because",
        "the <subject> was tired so",
        "the <subject> went home and",
        "the <subject> said that",
        "the <subject> smiled and",
        "the <subject> laughed so",
        "the <subject> went home because",
        "the <subject> cried and",
    ]
    .into_iter()
    .map(String::from)
    .collect()
}

/// A small lexicon: stereotypically gendered professions plus factually
/// gendered nouns in male/female pairs.
pub fn default_lexicon() -> Vec<LexiconEntry> {
    let rows: &[(&str, f64, f64)] = &[
        ("nurse", -0.9, 0.0),
        ("secretary", -0.8, 0.0),
        ("dancer", -0.7, 0.0),
        ("hairdresser", -0.6, 0.0),
        ("librarian", -0.4, 0.0),
        ("teacher", -0.3, 0.0),
        ("writer", 0.2, 0.0),
        ("doctor", 0.4, 0.0),
        ("lawyer", 0.5, 0.0),
        ("pilot", 0.7, 0.0),
        ("engineer", 0.8, 0.0),
        ("carpenter", 0.9, 0.0),
        ("king", 0.0, 1.0),
        ("queen", 0.0, -1.0),
        ("father", 0.0, 1.0),
        ("mother", 0.0, -1.0),
        ("brother", 0.0, 1.0),
        ("sister", 0.0, -1.0),
        ("monk", 0.0, 1.0),
        ("nun", 0.0, -1.0),
    ];
    rows.iter()
        .map(|&(s, xs, xf)| LexiconEntry::new(s, xs, xf).expect("valid built-in lexicon"))
        .collect()
}

/// A larger lexicon for the edit pipeline: 24 stereotypical professions with
/// alternating signs and 12 factual nouns in male/female pairs.
pub fn extended_lexicon() -> Vec<LexiconEntry> {
    let stereotypical: &[(&str, f64)] = &[
        ("nurse", -0.9),
        ("carpenter", 0.9),
        ("secretary", -0.8),
        ("engineer", 0.8),
        ("dancer", -0.7),
        ("pilot", 0.7),
        ("hairdresser", -0.6),
        ("mechanic", 0.6),
        ("librarian", -0.5),
        ("lawyer", 0.5),
        ("teacher", -0.4),
        ("doctor", 0.4),
        ("cashier", -0.3),
        ("writer", 0.3),
        ("baker", -0.2),
        ("farmer", 0.2),
        ("maid", -1.0),
        ("soldier", 1.0),
        ("nanny", -0.95),
        ("plumber", 0.95),
        ("stylist", -0.65),
        ("banker", 0.65),
        ("clerk", -0.35),
        ("guard", 0.35),
    ];
    let factual: &[(&str, f64)] = &[
        ("king", 1.0),
        ("queen", -1.0),
        ("father", 1.0),
        ("mother", -1.0),
        ("brother", 1.0),
        ("sister", -1.0),
        ("monk", 1.0),
        ("nun", -1.0),
        ("uncle", 1.0),
        ("aunt", -1.0),
        ("son", 1.0),
        ("daughter", -1.0),
    ];
    let s = stereotypical
        .iter()
        .map(|&(w, x)| LexiconEntry::new(w, x, 0.0));
    let f = factual.iter().map(|&(w, x)| LexiconEntry::new(w, 0.0, x));
    s.chain(f)
        .map(|e| e.expect("valid built-in lexicon"))
        .collect()
}
