use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use super::units::{
    fixed_length, lowercase, punc_removal, tokenize, word_hashing, FrequencyFilter, Vocabulary,
    PAD_INDEX,
};
use crate::error::{Error, Result};

/// What a unit consumes or produces.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Category {
    Text,
    Tokens,
    Indices,
    TrigramCounts,
}

/// A processed text at some stage of a pipeline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sequence {
    Text(String),
    Tokens(Vec<String>),
    Indices(Vec<usize>),
    /// Dense trigram-frequency vector, one slot per trigram vocabulary index.
    TrigramCounts(Vec<f64>),
}

impl Sequence {
    pub fn category(&self) -> Category {
        match self {
            Sequence::Text(_) => Category::Text,
            Sequence::Tokens(_) => Category::Tokens,
            Sequence::Indices(_) => Category::Indices,
            Sequence::TrigramCounts(_) => Category::TrigramCounts,
        }
    }

    pub fn as_indices(&self) -> Option<&[usize]> {
        match self {
            Sequence::Indices(v) => Some(v),
            _ => None,
        }
    }

    pub fn as_counts(&self) -> Option<&[f64]> {
        match self {
            Sequence::TrigramCounts(v) => Some(v),
            _ => None,
        }
    }

    pub fn as_tokens(&self) -> Option<&[String]> {
        match self {
            Sequence::Tokens(v) => Some(v),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PadValue {
    Index(usize),
    Token(String),
}

/// One processing unit. Stateful kinds carry `None` until fitted.
#[derive(Debug, Clone, PartialEq)]
pub enum Unit {
    Tokenize,
    Lowercase,
    PuncRemoval,
    FrequencyFilter {
        min_freq: usize,
        state: Option<FrequencyFilter>,
    },
    Vocabulary {
        state: Option<Vocabulary>,
    },
    WordHashing,
    /// Fits a trigram vocabulary and turns trigram tokens into a count vector.
    TrigramCounts {
        state: Option<Vocabulary>,
    },
    FixedLength {
        length: usize,
        pad: PadValue,
    },
}

impl Unit {
    pub fn frequency_filter(min_freq: usize) -> Self {
        Unit::FrequencyFilter {
            min_freq,
            state: None,
        }
    }

    pub fn vocabulary() -> Self {
        Unit::Vocabulary { state: None }
    }

    pub fn trigram_counts() -> Self {
        Unit::TrigramCounts { state: None }
    }

    pub fn fixed_length(length: usize) -> Self {
        Unit::FixedLength {
            length,
            pad: PadValue::Index(PAD_INDEX),
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Unit::Tokenize => "tokenize",
            Unit::Lowercase => "lowercase",
            Unit::PuncRemoval => "punc_removal",
            Unit::FrequencyFilter { .. } => "frequency_filter",
            Unit::Vocabulary { .. } => "vocabulary",
            Unit::WordHashing => "word_hashing",
            Unit::TrigramCounts { .. } => "trigram_counts",
            Unit::FixedLength { .. } => "fixed_length",
        }
    }

    pub fn is_stateful(&self) -> bool {
        matches!(
            self,
            Unit::FrequencyFilter { .. } | Unit::Vocabulary { .. } | Unit::TrigramCounts { .. }
        )
    }

    pub fn is_fitted(&self) -> bool {
        match self {
            Unit::FrequencyFilter { state, .. } => state.is_some(),
            Unit::Vocabulary { state } | Unit::TrigramCounts { state } => state.is_some(),
            _ => true,
        }
    }

    /// Output category for a given input, or `None` if the unit cannot take it.
    fn output_for(&self, input: Category) -> Option<Category> {
        use Category::*;
        match (self, input) {
            (Unit::Tokenize, Text) => Some(Tokens),
            (
                Unit::Lowercase | Unit::PuncRemoval | Unit::FrequencyFilter { .. } | Unit::WordHashing,
                Tokens,
            ) => Some(Tokens),
            (Unit::Vocabulary { .. }, Tokens) => Some(Indices),
            (Unit::TrigramCounts { .. }, Tokens) => Some(TrigramCounts),
            (Unit::FixedLength { pad: PadValue::Index(_), .. }, Indices) => Some(Indices),
            (Unit::FixedLength { pad: PadValue::Token(_), .. }, Tokens) => Some(Tokens),
            _ => None,
        }
    }

    fn fit(&mut self, corpus: &[Sequence]) -> Result<()> {
        let tokens = || -> Vec<&[String]> {
            corpus.iter().filter_map(Sequence::as_tokens).collect()
        };
        match self {
            Unit::FrequencyFilter { min_freq, state } => {
                *state = Some(FrequencyFilter::fit(&tokens(), *min_freq)?);
            }
            Unit::Vocabulary { state } | Unit::TrigramCounts { state } => {
                *state = Some(Vocabulary::fit(&tokens()));
            }
            _ => {}
        }
        Ok(())
    }

    fn apply(&self, input: Sequence) -> Result<Sequence> {
        let mismatch = |s: &Sequence| {
            Error::config(format!(
                "unit `{}` cannot process {:?} input",
                self.kind(),
                s.category()
            ))
        };
        Ok(match (self, input) {
            (Unit::Tokenize, Sequence::Text(t)) => Sequence::Tokens(tokenize(&t)),
            (Unit::Lowercase, Sequence::Tokens(t)) => Sequence::Tokens(lowercase(&t)),
            (Unit::PuncRemoval, Sequence::Tokens(t)) => Sequence::Tokens(punc_removal(&t)),
            (Unit::FrequencyFilter { state, .. }, Sequence::Tokens(t)) => {
                let f = state.as_ref().ok_or(Error::Unfitted("frequency_filter"))?;
                Sequence::Tokens(f.transform(&t))
            }
            (Unit::Vocabulary { state }, Sequence::Tokens(t)) => {
                let v = state.as_ref().ok_or(Error::Unfitted("vocabulary"))?;
                Sequence::Indices(v.transform(&t))
            }
            (Unit::WordHashing, Sequence::Tokens(t)) => {
                let mut out = Vec::new();
                for tok in &t {
                    out.extend(word_hashing(tok)?);
                }
                Sequence::Tokens(out)
            }
            (Unit::TrigramCounts { state }, Sequence::Tokens(t)) => {
                let v = state.as_ref().ok_or(Error::Unfitted("trigram_counts"))?;
                let mut counts = vec![0.0; v.size()];
                for idx in v.transform(&t) {
                    counts[idx] += 1.0;
                }
                Sequence::TrigramCounts(counts)
            }
            (Unit::FixedLength { length, pad: PadValue::Index(p) }, Sequence::Indices(v)) => {
                Sequence::Indices(fixed_length(&v, *length, *p)?)
            }
            (Unit::FixedLength { length, pad: PadValue::Token(p) }, Sequence::Tokens(v)) => {
                Sequence::Tokens(fixed_length(&v, *length, p.clone())?)
            }
            (_, other) => return Err(mismatch(&other)),
        })
    }

    fn to_doc(&self) -> Result<UnitDoc> {
        let mut params = Map::new();
        let state = match self {
            Unit::FrequencyFilter { min_freq, state } => {
                params.insert("min_freq".into(), json!(min_freq));
                state.as_ref().map(|f| json!(f.keep)) // BTreeSet serializes sorted
            }
            Unit::Vocabulary { state } | Unit::TrigramCounts { state } => {
                state.as_ref().map(serde_json::to_value).transpose()?
            }
            Unit::FixedLength { length, pad } => {
                params.insert("length".into(), json!(length));
                params.insert("pad_value".into(), serde_json::to_value(pad)?);
                None
            }
            _ => None,
        };
        Ok(UnitDoc {
            kind: self.kind().to_string(),
            params,
            state,
        })
    }

    fn from_doc(doc: UnitDoc) -> Result<Self> {
        let param_usize = |name: &str| -> Result<usize> {
            doc.params
                .get(name)
                .and_then(Value::as_u64)
                .map(|v| v as usize)
                .ok_or_else(|| Error::config(format!("unit `{}` needs integer param `{name}`", doc.kind)))
        };
        Ok(match doc.kind.as_str() {
            "tokenize" => Unit::Tokenize,
            "lowercase" => Unit::Lowercase,
            "punc_removal" => Unit::PuncRemoval,
            "word_hashing" => Unit::WordHashing,
            "frequency_filter" => {
                let min_freq = param_usize("min_freq")?;
                let state = match doc.state {
                    Some(v) => Some(FrequencyFilter {
                        min_freq,
                        keep: serde_json::from_value(v)?,
                    }),
                    None => None,
                };
                Unit::FrequencyFilter { min_freq, state }
            }
            "vocabulary" => Unit::Vocabulary {
                state: doc.state.map(serde_json::from_value).transpose()?,
            },
            "trigram_counts" => Unit::TrigramCounts {
                state: doc.state.map(serde_json::from_value).transpose()?,
            },
            "fixed_length" => Unit::FixedLength {
                length: param_usize("length")?,
                pad: match doc.params.get("pad_value") {
                    Some(v) => serde_json::from_value(v.clone())?,
                    None => PadValue::Index(PAD_INDEX),
                },
            },
            other => return Err(Error::config(format!("unknown unit kind `{other}`"))),
        })
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct UnitDoc {
    kind: String,
    #[serde(default)]
    params: Map<String, Value>,
    #[serde(default)]
    state: Option<Value>,
}

/// Ordered chain of units, validated so each output feeds the next input.
#[derive(Debug, Clone, PartialEq)]
pub struct Pipeline {
    units: Vec<Unit>,
}

impl Pipeline {
    pub fn new(units: Vec<Unit>) -> Result<Self> {
        let mut cat = Category::Text;
        for (i, u) in units.iter().enumerate() {
            cat = u.output_for(cat).ok_or_else(|| {
                Error::config(format!(
                    "pipeline unit {i} (`{}`) cannot consume {cat:?}",
                    u.kind()
                ))
            })?;
        }
        Ok(Pipeline { units })
    }

    pub fn units(&self) -> &[Unit] {
        &self.units
    }

    pub fn output_category(&self) -> Category {
        self.units
            .iter()
            .fold(Category::Text, |c, u| u.output_for(c).expect("validated"))
    }

    pub fn is_fitted(&self) -> bool {
        self.units.iter().all(Unit::is_fitted)
    }

    /// Fits stateful units in order on the progressively transformed corpus
    /// and returns the fully transformed corpus.
    pub fn fit_transform<S: AsRef<str>>(&mut self, corpus: &[S]) -> Result<Vec<Sequence>> {
        let mut current: Vec<Sequence> = corpus
            .iter()
            .map(|t| Sequence::Text(t.as_ref().to_string()))
            .collect();
        for unit in &mut self.units {
            if unit.is_stateful() {
                unit.fit(&current)?;
            }
            current = current
                .into_iter()
                .map(|s| unit.apply(s))
                .collect::<Result<_>>()?;
        }
        Ok(current)
    }

    pub fn transform(&self, text: &str) -> Result<Sequence> {
        self.units
            .iter()
            .try_fold(Sequence::Text(text.to_string()), |s, u| u.apply(s))
    }

    /// Tokens as they stand right before the first non-token stage, truncated
    /// the same way a later `fixed_length` would. Used to label explanation axes.
    pub fn display_tokens(&self, text: &str) -> Result<Vec<String>> {
        let mut seq = Sequence::Text(text.to_string());
        let mut rest = self.units.iter();
        for unit in rest.by_ref() {
            if matches!(seq, Sequence::Tokens(_)) && !matches!(unit.output_for(Category::Tokens), Some(Category::Tokens)) {
                break;
            }
            seq = unit.apply(seq)?;
        }
        let mut tokens = match seq {
            Sequence::Tokens(t) => t,
            Sequence::Text(t) => vec![t],
            _ => Vec::new(),
        };
        for unit in rest {
            if let Unit::FixedLength { length, .. } = unit {
                tokens.truncate(*length);
            }
        }
        Ok(tokens)
    }

    /// The fitted term vocabulary, if the pipeline has one.
    pub fn vocabulary(&self) -> Option<&Vocabulary> {
        self.units.iter().find_map(|u| match u {
            Unit::Vocabulary { state } => state.as_ref(),
            _ => None,
        })
    }

    pub fn trigram_vocabulary(&self) -> Option<&Vocabulary> {
        self.units.iter().find_map(|u| match u {
            Unit::TrigramCounts { state } => state.as_ref(),
            _ => None,
        })
    }

    pub fn to_json(&self) -> Result<Value> {
        let docs = self
            .units
            .iter()
            .map(Unit::to_doc)
            .collect::<Result<Vec<_>>>()?;
        Ok(json!({ "units": docs }))
    }

    pub fn from_json(value: &Value) -> Result<Self> {
        #[derive(Deserialize)]
        struct Doc {
            units: Vec<UnitDoc>,
        }
        let doc: Doc = serde_json::from_value(value.clone())?;
        Pipeline::new(
            doc.units
                .into_iter()
                .map(Unit::from_doc)
                .collect::<Result<_>>()?,
        )
    }
}
