use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    Representation,
    Interaction,
}

/// A resolved hyper-parameter value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum HpValue {
    Int(i64),
    Float(f64),
    Str(String),
}

impl HpValue {
    pub fn as_f64(&self) -> Option<f64> {
        match self {
            HpValue::Int(i) => Some(*i as f64),
            HpValue::Float(f) => Some(*f),
            HpValue::Str(_) => None,
        }
    }

    pub fn as_i64(&self) -> Option<i64> {
        match self {
            HpValue::Int(i) => Some(*i),
            HpValue::Float(f) if f.fract() == 0.0 => Some(*f as i64),
            _ => None,
        }
    }

    pub fn as_str(&self) -> Option<&str> {
        match self {
            HpValue::Str(s) => Some(s),
            _ => None,
        }
    }

    fn same(&self, other: &HpValue) -> bool {
        match (self.as_f64(), other.as_f64()) {
            (Some(a), Some(b)) => a == b,
            _ => self == other,
        }
    }

    pub fn from_json(v: &Value) -> Option<HpValue> {
        match v {
            Value::Number(n) => n
                .as_i64()
                .map(HpValue::Int)
                .or_else(|| n.as_f64().map(HpValue::Float)),
            Value::String(s) => Some(HpValue::Str(s.clone())),
            _ => None,
        }
    }
}

impl fmt::Display for HpValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            HpValue::Int(i) => write!(f, "{i}"),
            HpValue::Float(x) => write!(f, "{x}"),
            HpValue::Str(s) => write!(f, "{s}"),
        }
    }
}

pub type HyperParams = BTreeMap<String, HpValue>;

#[derive(Debug, Clone, PartialEq)]
pub enum ParamDomain {
    Categorical(Vec<HpValue>),
    /// Inclusive integer range.
    Int { low: i64, high: i64 },
    /// Inclusive real range.
    Float { low: f64, high: f64 },
}

impl ParamDomain {
    pub fn type_name(&self) -> &'static str {
        match self {
            ParamDomain::Categorical(_) => "categorical",
            ParamDomain::Int { .. } => "int",
            ParamDomain::Float { .. } => "float",
        }
    }

    /// Coerces `value` into this domain's type, or explains why it can't.
    pub fn admit(&self, value: &HpValue) -> std::result::Result<HpValue, String> {
        match self {
            ParamDomain::Categorical(items) => items
                .iter()
                .find(|c| c.same(value))
                .cloned()
                .ok_or_else(|| {
                    let opts: Vec<String> = items.iter().map(ToString::to_string).collect();
                    format!("`{value}` is not one of [{}]", opts.join(", "))
                }),
            ParamDomain::Int { low, high } => {
                let v = value.as_i64().ok_or_else(|| format!("`{value}` is not an integer"))?;
                if v < *low || v > *high {
                    return Err(format!("{v} outside [{low}, {high}]"));
                }
                Ok(HpValue::Int(v))
            }
            ParamDomain::Float { low, high } => {
                let v = value.as_f64().ok_or_else(|| format!("`{value}` is not a number"))?;
                if !v.is_finite() || v < *low || v > *high {
                    return Err(format!("{v} outside [{low}, {high}]"));
                }
                Ok(HpValue::Float(v))
            }
        }
    }

    fn to_json(&self) -> Value {
        match self {
            ParamDomain::Categorical(items) => json!({ "values": items }),
            ParamDomain::Int { low, high } => json!({ "low": low, "high": high }),
            ParamDomain::Float { low, high } => json!({ "low": low, "high": high }),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HyperParamSpec {
    pub name: &'static str,
    pub domain: ParamDomain,
    pub default: HpValue,
    pub help: &'static str,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelSpec {
    pub id: &'static str,
    pub name: &'static str,
    pub family: Family,
    pub description: &'static str,
    pub schema: Vec<HyperParamSpec>,
}

impl ModelSpec {
    pub fn param(&self, name: &str) -> Option<&HyperParamSpec> {
        self.schema.iter().find(|p| p.name == name)
    }

    pub fn defaults(&self) -> HyperParams {
        self.schema
            .iter()
            .map(|p| (p.name.to_string(), p.default.clone()))
            .collect()
    }

    /// Schema defaults overlaid with `overrides`; every problem is reported at once.
    pub fn resolve(&self, overrides: &HyperParams) -> Result<HyperParams> {
        let mut out = self.defaults();
        let mut problems = Vec::new();
        for (name, value) in overrides {
            match self.param(name) {
                None => problems.push(format!("unknown hyper-parameter `{name}`")),
                Some(p) => match p.domain.admit(value) {
                    Ok(v) => {
                        out.insert(name.clone(), v);
                    }
                    Err(why) => problems.push(format!("`{name}`: {why}")),
                },
            }
        }
        if problems.is_empty() {
            Ok(out)
        } else {
            Err(Error::Schema(problems))
        }
    }

    /// Like [`ModelSpec::resolve`] for a JSON object of overrides.
    pub fn resolve_json(&self, overrides: &serde_json::Map<String, Value>) -> Result<HyperParams> {
        let mut parsed = HyperParams::new();
        let mut problems = Vec::new();
        for (k, v) in overrides {
            match HpValue::from_json(v) {
                Some(hv) => {
                    parsed.insert(k.clone(), hv);
                }
                None => problems.push(format!("`{k}`: unsupported value {v}")),
            }
        }
        if !problems.is_empty() {
            return Err(Error::Schema(problems));
        }
        self.resolve(&parsed)
    }

    pub fn to_json(&self) -> Value {
        json!({
            "id": self.id,
            "name": self.name,
            "family": self.family,
            "description": self.description,
            "hyper_parameters": self.schema.iter().map(|p| json!({
                "name": p.name,
                "type": p.domain.type_name(),
                "domain": p.domain.to_json(),
                "default": p.default,
                "description": p.help,
            })).collect::<Vec<_>>(),
        })
    }
}

pub(crate) fn get_usize(hp: &HyperParams, name: &str) -> Result<usize> {
    hp.get(name)
        .and_then(HpValue::as_i64)
        .filter(|v| *v >= 0)
        .map(|v| v as usize)
        .ok_or_else(|| Error::config(format!("hyper-parameter `{name}` missing or not a count")))
}

pub(crate) fn get_f64(hp: &HyperParams, name: &str) -> Result<f64> {
    hp.get(name)
        .and_then(HpValue::as_f64)
        .ok_or_else(|| Error::config(format!("hyper-parameter `{name}` missing or not numeric")))
}

fn int(name: &'static str, low: i64, high: i64, default: i64, help: &'static str) -> HyperParamSpec {
    HyperParamSpec {
        name,
        domain: ParamDomain::Int { low, high },
        default: HpValue::Int(default),
        help,
    }
}

fn float(name: &'static str, low: f64, high: f64, default: f64, help: &'static str) -> HyperParamSpec {
    HyperParamSpec {
        name,
        domain: ParamDomain::Float { low, high },
        default: HpValue::Float(default),
        help,
    }
}

fn training_params() -> Vec<HyperParamSpec> {
    vec![
        float("learning_rate", 1e-6, 1e3, 1e-3, "optimizer step size"),
        HyperParamSpec {
            name: "optimizer",
            domain: ParamDomain::Categorical(vec![
                HpValue::Str("adam".into()),
                HpValue::Str("sgd".into()),
            ]),
            default: HpValue::Str("adam".into()),
            help: "optimizer kind",
        },
    ]
}

pub const DSSM: &str = "dssm";
pub const DRMM: &str = "drmm";
pub const KNRM: &str = "knrm";

fn dssm_spec() -> ModelSpec {
    let mut schema = vec![
        int("hidden_size", 1, 2048, 300, "width of each hidden dense layer"),
        int("hidden_layers", 0, 4, 2, "number of hidden dense layers before the output layer"),
        int("output_size", 1, 1024, 128, "width of the final representation"),
    ];
    schema.extend(training_params());
    ModelSpec {
        id: DSSM,
        name: "DSSM",
        family: Family::Representation,
        description: "Deep Structured Semantic Model. Each text is word-hashed into letter \
            trigrams and counted into a trigram-frequency vector, which a shared tower of \
            tanh dense layers maps to a semantic vector. The matching score is the cosine \
            similarity of the two vectors.",
        schema,
    }
}

fn drmm_spec() -> ModelSpec {
    let mut schema = vec![
        int("embedding_dim", 1, 1024, 50, "word embedding dimension"),
        int("bin_count", 2, 200, 30, "matching histogram bins (last bin is exact match)"),
        int("hidden_size", 1, 256, 5, "width of the per-term feed-forward hidden layer"),
        int("max_length", 1, 1000, 40, "tokens kept per text"),
    ];
    schema.extend(training_params());
    ModelSpec {
        id: DRMM,
        name: "DRMM",
        family: Family::Interaction,
        description: "Deep Relevance Matching Model. For every query term, cosine similarities \
            against all document terms are bucketed into a log-count matching histogram. A \
            small feed-forward network scores each histogram, and a softmax term gate driven \
            by IDF weights the per-term scores into the final score.",
        schema,
    }
}

fn knrm_spec() -> ModelSpec {
    let mut schema = vec![
        int("embedding_dim", 1, 1024, 50, "word embedding dimension"),
        int("kernel_count", 2, 51, 11, "RBF kernels, including the exact-match kernel"),
        float("sigma", 1e-3, 1.0, 0.1, "width of the soft-match kernels"),
        float("exact_sigma", 1e-4, 1.0, 1e-3, "width of the exact-match kernel"),
        int("max_length", 1, 1000, 40, "tokens kept per text"),
    ];
    schema.extend(training_params());
    ModelSpec {
        id: KNRM,
        name: "K-NRM",
        family: Family::Interaction,
        description: "Kernel-based Neural Ranking Model. A cosine translation matrix between \
            the word embeddings of both texts is summarized by Gaussian kernels into soft-TF \
            features (log-summed per query term), and a tanh-activated linear layer turns \
            them into the score. Embeddings are trained end to end.",
        schema,
    }
}

/// Every registered model, ordered by id.
pub fn registry() -> Vec<ModelSpec> {
    let mut specs = vec![dssm_spec(), drmm_spec(), knrm_spec()];
    specs.sort_by_key(|s| s.id);
    specs
}

pub fn model_spec(id: &str) -> Result<ModelSpec> {
    registry()
        .into_iter()
        .find(|s| s.id == id)
        .ok_or_else(|| Error::UnknownModel(id.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn registry_contents() {
        let ids: Vec<_> = registry().iter().map(|s| s.id).collect();
        assert_eq!(ids, vec!["drmm", "dssm", "knrm"]);
        assert_eq!(model_spec("dssm").unwrap().family, Family::Representation);
        assert_eq!(model_spec("drmm").unwrap().family, Family::Interaction);
        assert_eq!(model_spec("knrm").unwrap().family, Family::Interaction);
        assert!(matches!(model_spec("nosuch"), Err(Error::UnknownModel(_))));
    }

    #[test]
    fn defaults_lie_in_domains() {
        for spec in registry() {
            for p in &spec.schema {
                assert!(p.domain.admit(&p.default).is_ok(), "{}.{}", spec.id, p.name);
            }
        }
    }

    #[test]
    fn resolve_reports_all_problems() {
        let spec = model_spec("knrm").unwrap();
        let mut o = HyperParams::new();
        o.insert("bogus".into(), HpValue::Int(1));
        o.insert("sigma".into(), HpValue::Float(5.0));
        o.insert("kernel_count".into(), HpValue::Int(21));
        match spec.resolve(&o) {
            Err(Error::Schema(p)) => {
                assert_eq!(p.len(), 2);
                assert!(p.iter().any(|s| s.contains("bogus")));
                assert!(p.iter().any(|s| s.contains("sigma")));
            }
            other => panic!("{other:?}"),
        }
        o.remove("bogus");
        o.insert("sigma".into(), HpValue::Int(1));
        let hp = spec.resolve(&o).unwrap();
        assert_eq!(hp["sigma"], HpValue::Float(1.0));
        assert_eq!(hp["kernel_count"], HpValue::Int(21));
        assert_eq!(hp["embedding_dim"], HpValue::Int(50));
    }

    #[test]
    fn categorical_matches_numerically() {
        let d = ParamDomain::Categorical(vec![HpValue::Float(0.001), HpValue::Float(100.0)]);
        assert_eq!(d.admit(&HpValue::Int(100)).unwrap(), HpValue::Float(100.0));
        assert!(d.admit(&HpValue::Float(0.5)).is_err());
    }
}
