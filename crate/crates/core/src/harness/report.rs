use super::config::RunConfig;
use crate::corona::CoronaKind;
use crate::energy::{EnergyReport, FunctionalEstimate, HalfSpaceTesting};
use crate::grid::BadEstimate;
use crate::operator::{Ntv, TestingReport};
use crate::poisson_a2::A2Report;
use serde::{Deserialize, Serialize};
use serde_json::Value;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub pass: bool,
    pub witness: Option<String>,
}

impl Check {
    pub fn new(name: &str, pass: bool, witness: impl FnOnce() -> String) -> Check {
        Check { name: name.to_string(), pass, witness: if pass { None } else { Some(witness()) } }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoronaSummary {
    pub kind: CoronaKind,
    pub stops: usize,
    pub max_depth: usize,
    pub carleson: f64,
    pub carleson_bound: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConstantsReport {
    pub config: RunConfig,
    pub a2: A2Report,
    pub energy: EnergyReport,
    pub testing: TestingReport,
    pub ntv: Ntv,
    pub functional_energy: FunctionalEstimate,
    pub halfspace: Option<HalfSpaceTesting>,
    pub goodness_mc: Vec<BadEstimate>,
    pub coronas: Vec<CoronaSummary>,
    pub checks: Vec<Check>,
}

fn encode(v: Value) -> Value {
    match v {
        Value::Number(n) if n.is_f64() => Value::String(format!("{:.16e}", n.as_f64().unwrap())),
        Value::Array(a) => Value::Array(a.into_iter().map(encode).collect()),
        Value::Object(o) => Value::Object(o.into_iter().map(|(k, v)| (k, encode(v))).collect()),
        other => other,
    }
}

fn is_encoded_real(s: &str) -> bool {
    s.contains('e') && s.parse::<f64>().is_ok() && s.chars().all(|c| c.is_ascii_digit() || "+-.e".contains(c))
}

fn decode(v: Value) -> Value {
    match v {
        Value::String(s) if is_encoded_real(&s) => {
            serde_json::Number::from_f64(s.parse().unwrap()).map(Value::Number).unwrap_or(Value::String(s))
        }
        Value::Array(a) => Value::Array(a.into_iter().map(decode).collect()),
        Value::Object(o) => Value::Object(o.into_iter().map(|(k, v)| (k, decode(v))).collect()),
        other => other,
    }
}

/// Structured text with every real written as a 17-significant-digit decimal string.
pub fn to_text<T: Serialize>(x: &T) -> String {
    let v = serde_json::to_value(x).expect("report serialization");
    serde_json::to_string_pretty(&encode(v)).expect("report serialization")
}

pub fn from_text<T: for<'de> Deserialize<'de>>(text: &str) -> Result<T, serde_json::Error> {
    let v: Value = serde_json::from_str(text)?;
    serde_json::from_value(decode(v))
}

impl ConstantsReport {
    pub fn all_pass(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }

    pub fn failures(&self) -> Vec<&Check> {
        self.checks.iter().filter(|c| !c.pass).collect()
    }

    pub fn to_text(&self) -> String {
        to_text(self)
    }

    pub fn from_text(text: &str) -> Result<ConstantsReport, serde_json::Error> {
        from_text(text)
    }
}
