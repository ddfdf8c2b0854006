//! Builders wrap optimizers and ansatz generators behind declared
//! hyperparameters, so nodes can offer options without knowing how they are
//! constructed.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::{Arc, RwLock};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::vqa::{AnsatzSpec, Nft, Optimizer, ParamShiftGd, Spsa};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BuildError {
    #[error("unknown builder `{0}`")]
    UnknownBuilder(String),
    #[error("builder `{builder}` requires hyperparameter `{name}`")]
    MissingHyperParam { builder: String, name: String },
    #[error("hyperparameter `{name}` of `{builder}`: {reason}")]
    OutOfRange {
        builder: String,
        name: String,
        reason: String,
    },
    #[error("builder `{0}` is declared but has no implementation")]
    Unavailable(String),
    #[error("builder `{0}` is already registered")]
    DuplicateBuilder(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BuilderKind {
    Optimizer,
    Ansatz,
}

impl BuilderKind {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "optimizer" => Some(Self::Optimizer),
            "ansatz" => Some(Self::Ansatz),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ValueKind {
    Integer,
    Real,
    Choice,
}

/// One input a builder needs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HyperParam {
    pub name: String,
    pub value_kind: ValueKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub min: Option<f64>,
    /// Lower bound excluded from the range.
    #[serde(default)]
    pub min_exclusive: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max: Option<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub options: Vec<String>,
    pub default: Option<Value>,
    pub description: String,
}

impl HyperParam {
    pub fn integer(name: &str, min: i64, max: Option<i64>, default: Option<i64>, description: &str) -> Self {
        HyperParam {
            name: name.into(),
            value_kind: ValueKind::Integer,
            min: Some(min as f64),
            min_exclusive: false,
            max: max.map(|m| m as f64),
            options: Vec::new(),
            default: default.map(Value::from),
            description: description.into(),
        }
    }

    /// Real value in `(min, max]`.
    pub fn real(name: &str, min: f64, max: f64, default: f64, description: &str) -> Self {
        HyperParam {
            name: name.into(),
            value_kind: ValueKind::Real,
            min: Some(min),
            min_exclusive: true,
            max: Some(max),
            options: Vec::new(),
            default: Some(Value::from(default)),
            description: description.into(),
        }
    }

    pub fn choice(name: &str, options: &[&str], default: &str, description: &str) -> Self {
        HyperParam {
            name: name.into(),
            value_kind: ValueKind::Choice,
            min: None,
            min_exclusive: false,
            max: None,
            options: options.iter().map(|s| s.to_string()).collect(),
            default: Some(Value::from(default)),
            description: description.into(),
        }
    }

    /// Checks `value` against kind and range; returns a reason on failure.
    pub fn check(&self, value: &Value) -> Result<(), String> {
        match self.value_kind {
            ValueKind::Choice => {
                let s = value.as_str().ok_or("expected a string option")?;
                if self.options.iter().any(|o| o == s) {
                    Ok(())
                } else {
                    Err(format!("`{s}` is not one of {:?}", self.options))
                }
            }
            ValueKind::Integer | ValueKind::Real => {
                let v = if self.value_kind == ValueKind::Integer {
                    value
                        .as_i64()
                        .map(|i| i as f64)
                        .or_else(|| value.as_f64().filter(|f| f.fract() == 0.0))
                        .ok_or("expected an integer")?
                } else {
                    value.as_f64().ok_or("expected a number")?
                };
                if !v.is_finite() {
                    return Err("value must be finite".into());
                }
                if let Some(min) = self.min {
                    if v < min || (self.min_exclusive && v == min) {
                        let op = if self.min_exclusive { ">" } else { ">=" };
                        return Err(format!("{v} must be {op} {min}"));
                    }
                }
                if let Some(max) = self.max {
                    if v > max {
                        return Err(format!("{v} must be <= {max}"));
                    }
                }
                Ok(())
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BuilderDescriptor {
    pub id: String,
    pub kind: BuilderKind,
    pub display_name: String,
    pub hyperparams: Vec<HyperParam>,
    /// False for declared ids without an implementation.
    pub available: bool,
}

/// A constructed option.
pub enum Artifact {
    Optimizer(Box<dyn Optimizer>),
    Ansatz(AnsatzSpec),
}

impl fmt::Debug for Artifact {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Artifact::Optimizer(o) => write!(f, "Optimizer({})", o.id()),
            Artifact::Ansatz(a) => write!(f, "Ansatz({a:?})"),
        }
    }
}

impl Artifact {
    pub fn into_optimizer(self) -> Option<Box<dyn Optimizer>> {
        match self {
            Artifact::Optimizer(o) => Some(o),
            Artifact::Ansatz(_) => None,
        }
    }

    pub fn into_ansatz(self) -> Option<AnsatzSpec> {
        match self {
            Artifact::Ansatz(a) => Some(a),
            Artifact::Optimizer(_) => None,
        }
    }
}

/// Resolved hyperparameter values, defaults filled in and ranges checked.
pub type HyperValues = BTreeMap<String, Value>;

pub trait Builder: Send + Sync {
    fn descriptor(&self) -> BuilderDescriptor;

    /// Called with complete, range-checked values.
    fn construct(&self, values: &HyperValues) -> Result<Artifact, BuildError>;
}

fn int(values: &HyperValues, name: &str) -> usize {
    values[name].as_f64().expect("checked numeric") as usize
}

fn real(values: &HyperValues, name: &str) -> f64 {
    values[name].as_f64().expect("checked numeric")
}

struct FnBuilder {
    descriptor: BuilderDescriptor,
    construct: Option<fn(&HyperValues) -> Artifact>,
}

impl Builder for FnBuilder {
    fn descriptor(&self) -> BuilderDescriptor {
        self.descriptor.clone()
    }

    fn construct(&self, values: &HyperValues) -> Result<Artifact, BuildError> {
        match self.construct {
            Some(f) => Ok(f(values)),
            None => Err(BuildError::Unavailable(self.descriptor.id.clone())),
        }
    }
}

fn descriptor(id: &str, kind: BuilderKind, display: &str, hyperparams: Vec<HyperParam>, available: bool) -> BuilderDescriptor {
    BuilderDescriptor {
        id: id.into(),
        kind,
        display_name: display.into(),
        hyperparams,
        available,
    }
}

fn builtin_builders() -> Vec<FnBuilder> {
    use BuilderKind::{Ansatz, Optimizer};
    let iters = |default| HyperParam::integer("max_iters", 1, Some(1_000_000), Some(default), "iteration limit");
    let depth = |name: &str, default| HyperParam::integer(name, 1, Some(64), Some(default), "circuit depth");
    let mut out = vec![
        FnBuilder {
            descriptor: descriptor(
                "spsa",
                Optimizer,
                "SPSA",
                vec![
                    HyperParam::real("a", 0.0, 10.0, 0.2, "step-size gain numerator"),
                    HyperParam::real("c", 0.0, 1.0, 0.1, "perturbation size"),
                    iters(1000),
                    HyperParam::integer("stability", 0, Some(10_000), Some(10), "stability constant A of the step-size gain"),
                ],
                true,
            ),
            construct: Some(|v| {
                Artifact::Optimizer(Box::new(Spsa {
                    a: real(v, "a"),
                    c: real(v, "c"),
                    max_iters: int(v, "max_iters"),
                    stability: real(v, "stability"),
                }))
            }),
        },
        FnBuilder {
            descriptor: descriptor(
                "nft",
                Optimizer,
                "Nakanishi-Fujii-Todo",
                vec![HyperParam::integer("max_sweeps", 1, Some(100_000), Some(1000), "coordinate sweeps")],
                true,
            ),
            construct: Some(|v| Artifact::Optimizer(Box::new(Nft { max_sweeps: int(v, "max_sweeps") }))),
        },
        FnBuilder {
            descriptor: descriptor(
                "ps_gd",
                Optimizer,
                "Parameter-shift gradient descent",
                vec![HyperParam::real("step_length", 0.0, 1.0, 0.1, "gradient step length"), iters(1000)],
                true,
            ),
            construct: Some(|v| {
                Artifact::Optimizer(Box::new(ParamShiftGd {
                    step_length: real(v, "step_length"),
                    max_iters: int(v, "max_iters"),
                }))
            }),
        },
        FnBuilder {
            descriptor: descriptor(
                "hardware_efficient",
                Ansatz,
                "Hardware-efficient ansatz (VQE)",
                vec![depth("layers", 2)],
                true,
            ),
            construct: Some(|v| Artifact::Ansatz(AnsatzSpec::HardwareEfficient { layers: int(v, "layers") })),
        },
        FnBuilder {
            descriptor: descriptor("qaoa", Ansatz, "QAOA", vec![depth("p", 2)], true),
            construct: Some(|v| Artifact::Ansatz(AnsatzSpec::Qaoa { p: int(v, "p") })),
        },
        FnBuilder {
            descriptor: descriptor(
                "lr_qaoa",
                Ansatz,
                "Linear-ramp QAOA",
                vec![depth("p", 8), HyperParam::real("delta", 0.0, 10.0, 0.7, "ramp width")],
                true,
            ),
            construct: Some(|v| {
                Artifact::Ansatz(AnsatzSpec::LrQaoa {
                    p: int(v, "p"),
                    delta: real(v, "delta"),
                })
            }),
        },
    ];
    for (id, name) in [("cobyla", "COBYLA"), ("powell", "Powell"), ("ngd", "Natural gradient descent")] {
        out.push(FnBuilder {
            descriptor: descriptor(id, Optimizer, name, Vec::new(), false),
            construct: None,
        });
    }
    for (id, name) in [
        ("ma_qaoa", "Multi-angle QAOA"),
        ("qaoa_plus", "QAOA+"),
        ("dc_qaoa", "Digitized counterdiabatic QAOA"),
        ("ws_qaoa", "Warm-start QAOA"),
    ] {
        out.push(FnBuilder {
            descriptor: descriptor(id, Ansatz, name, vec![depth("p", 2)], false),
            construct: None,
        });
    }
    out
}

/// Builders keyed by id. Builders may be added at any time; adding one never
/// requires changes to the nodes that offer them.
pub struct BuilderRegistry {
    builders: RwLock<BTreeMap<String, Arc<dyn Builder>>>,
}

impl fmt::Debug for BuilderRegistry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let ids: Vec<String> = self.builders.read().expect("registry lock").keys().cloned().collect();
        f.debug_struct("BuilderRegistry").field("builders", &ids).finish()
    }
}

impl Default for BuilderRegistry {
    fn default() -> Self {
        let reg = BuilderRegistry::empty();
        for b in builtin_builders() {
            reg.register(Arc::new(b)).expect("built-in ids are unique");
        }
        reg
    }
}

impl BuilderRegistry {
    pub fn empty() -> Self {
        BuilderRegistry {
            builders: RwLock::new(BTreeMap::new()),
        }
    }

    pub fn register(&self, builder: Arc<dyn Builder>) -> Result<(), BuildError> {
        let id = builder.descriptor().id;
        let mut map = self.builders.write().expect("registry lock");
        if map.contains_key(&id) {
            return Err(BuildError::DuplicateBuilder(id));
        }
        map.insert(id, builder);
        Ok(())
    }

    fn get(&self, id: &str) -> Result<Arc<dyn Builder>, BuildError> {
        self.builders
            .read()
            .expect("registry lock")
            .get(id)
            .cloned()
            .ok_or_else(|| BuildError::UnknownBuilder(id.to_string()))
    }

    /// Descriptors of one kind, sorted by id.
    pub fn list_builders(&self, kind: BuilderKind) -> Vec<BuilderDescriptor> {
        self.builders
            .read()
            .expect("registry lock")
            .values()
            .map(|b| b.descriptor())
            .filter(|d| d.kind == kind)
            .collect()
    }

    /// Like [`list_builders`](Self::list_builders) for a kind given by name;
    /// unknown kinds list nothing.
    pub fn list_builders_named(&self, kind: &str) -> Vec<BuilderDescriptor> {
        BuilderKind::parse(kind).map_or_else(Vec::new, |k| self.list_builders(k))
    }

    pub fn descriptor(&self, id: &str) -> Result<BuilderDescriptor, BuildError> {
        Ok(self.get(id)?.descriptor())
    }

    pub fn hyperparams(&self, id: &str) -> Result<Vec<HyperParam>, BuildError> {
        Ok(self.descriptor(id)?.hyperparams)
    }

    /// Fills defaults and checks every value. Unknown names are rejected.
    pub fn resolve_values(&self, id: &str, values: &HyperValues) -> Result<HyperValues, BuildError> {
        let desc = self.descriptor(id)?;
        if let Some(extra) = values.keys().find(|k| !desc.hyperparams.iter().any(|h| &h.name == *k)) {
            return Err(BuildError::OutOfRange {
                builder: id.into(),
                name: extra.clone(),
                reason: "not a hyperparameter of this builder".into(),
            });
        }
        let mut out = HyperValues::new();
        for h in &desc.hyperparams {
            let v = values
                .get(&h.name)
                .or(h.default.as_ref())
                .ok_or_else(|| BuildError::MissingHyperParam {
                    builder: id.into(),
                    name: h.name.clone(),
                })?;
            h.check(v).map_err(|reason| BuildError::OutOfRange {
                builder: id.into(),
                name: h.name.clone(),
                reason,
            })?;
            out.insert(h.name.clone(), v.clone());
        }
        Ok(out)
    }

    pub fn build(&self, id: &str, values: &HyperValues) -> Result<Artifact, BuildError> {
        let resolved = self.resolve_values(id, values)?;
        self.get(id)?.construct(&resolved)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    fn vals(v: Value) -> HyperValues {
        serde_json::from_value(v).unwrap()
    }

    #[test]
    fn listings_are_sorted() {
        let reg = BuilderRegistry::default();
        let ids: Vec<String> = reg.list_builders(BuilderKind::Optimizer).into_iter().map(|d| d.id).collect();
        assert_eq!(ids, ["cobyla", "nft", "ngd", "powell", "ps_gd", "spsa"]);
        let ans: Vec<String> = reg.list_builders(BuilderKind::Ansatz).into_iter().map(|d| d.id).collect();
        for id in ["hardware_efficient", "qaoa", "lr_qaoa"] {
            assert!(ans.iter().any(|a| a == id));
        }
        assert!(reg.list_builders_named("sampler").is_empty());
    }

    #[test]
    fn ps_gd_hyperparams() {
        let hp = BuilderRegistry::default().hyperparams("ps_gd").unwrap();
        assert_eq!(hp[0].name, "step_length");
        assert_eq!(hp[0].default, Some(json!(0.1)));
        assert_eq!((hp[0].min, hp[0].min_exclusive, hp[0].max), (Some(0.0), true, Some(1.0)));
        assert_eq!(hp[1].name, "max_iters");
    }

    #[test]
    fn defaults_construct_for_available_builders() {
        let reg = BuilderRegistry::default();
        for kind in [BuilderKind::Optimizer, BuilderKind::Ansatz] {
            for d in reg.list_builders(kind) {
                let r = reg.build(&d.id, &HyperValues::new());
                if d.available {
                    assert!(r.is_ok(), "{}", d.id);
                } else {
                    assert_eq!(r.unwrap_err(), BuildError::Unavailable(d.id.clone()));
                }
            }
        }
    }

    #[test]
    fn range_checks() {
        let reg = BuilderRegistry::default();
        assert!(matches!(
            reg.build("qaoa", &vals(json!({"p": 0}))),
            Err(BuildError::OutOfRange { .. })
        ));
        assert!(matches!(
            reg.build("ps_gd", &vals(json!({"step_length": 0.0}))),
            Err(BuildError::OutOfRange { .. })
        ));
        assert!(matches!(
            reg.build("qaoa", &vals(json!({"p": 1.5}))),
            Err(BuildError::OutOfRange { .. })
        ));
        assert!(matches!(reg.build("adam", &HyperValues::new()), Err(BuildError::UnknownBuilder(_))));
        let a = reg
            .build("lr_qaoa", &vals(json!({"p": 8, "delta": 0.7})))
            .unwrap()
            .into_ansatz()
            .unwrap();
        assert_eq!(a, AnsatzSpec::LrQaoa { p: 8, delta: 0.7 });
    }

    #[test]
    fn missing_required_value() {
        struct NeedsSeed;
        impl Builder for NeedsSeed {
            fn descriptor(&self) -> BuilderDescriptor {
                descriptor(
                    "seeded",
                    BuilderKind::Optimizer,
                    "Seeded",
                    vec![HyperParam::integer("population", 1, None, None, "population size")],
                    true,
                )
            }
            fn construct(&self, v: &HyperValues) -> Result<Artifact, BuildError> {
                Ok(Artifact::Optimizer(Box::new(Nft { max_sweeps: int(v, "population") })))
            }
        }
        let reg = BuilderRegistry::default();
        reg.register(Arc::new(NeedsSeed)).unwrap();
        assert!(matches!(
            reg.build("seeded", &HyperValues::new()),
            Err(BuildError::MissingHyperParam { .. })
        ));
        assert!(reg.build("seeded", &vals(json!({"population": 4}))).is_ok());
        assert!(matches!(reg.register(Arc::new(NeedsSeed)), Err(BuildError::DuplicateBuilder(_))));
    }
}
