//! Backend registry and the local statevector simulator.

mod circuit;
mod statevector;

use std::collections::BTreeMap;
use std::sync::{Arc, RwLock};
use std::time::Duration;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

pub use circuit::{Circuit, Gate};
pub use statevector::{
    estimate_expectation, exact_expectation, expectation_from_state, probabilities, sample,
    sample_probabilities, simulate_statevector, simulate_statevector_capped, ShotResult,
    STATEVECTOR_CAP,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BackendError {
    #[error("circuit needs {requested} qubits, backend supports {cap}")]
    TooManyQubits { requested: usize, cap: usize },
    #[error("gate {index}: {reason}")]
    InvalidGate { index: usize, reason: String },
    #[error("circuit has {circuit} qubits but the QUBO has {qubo} variables")]
    SizeMismatch { circuit: usize, qubo: usize },
    #[error("at least one shot is required")]
    NoShots,
    #[error("malformed bitstring `{0}`")]
    MalformedBitstring(String),
    #[error("backend `{0}` is already registered")]
    DuplicateId(String),
    #[error("unknown backend `{0}`")]
    UnknownBackend(String),
    #[error("backend `{0}` cannot return statevectors")]
    NoStatevector(String),
}

/// Registry entry describing one backend.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendRecord {
    pub id: String,
    /// Node type responsible for talking to the backend.
    pub provider: String,
    pub qubit_count: usize,
    #[serde(default)]
    pub properties: BTreeMap<String, Value>,
}

/// Executes circuits and returns measurement outcomes.
pub trait QuantumBackend: Send + Sync {
    fn sample(&self, circuit: &Circuit, n_shots: u64, seed: u64) -> Result<ShotResult, BackendError>;

    /// Exact final state, when the backend can provide one.
    fn statevector(&self, circuit: &Circuit) -> Result<Vec<Complex64>, BackendError>;
}

/// Local noise-free statevector simulator.
#[derive(Debug, Clone)]
pub struct LocalSimulator {
    pub max_qubits: usize,
    /// Artificial per-submission delay standing in for queue wait.
    pub latency: Option<Duration>,
}

impl Default for LocalSimulator {
    fn default() -> Self {
        Self {
            max_qubits: STATEVECTOR_CAP,
            latency: None,
        }
    }
}

impl LocalSimulator {
    pub const ID: &'static str = "local_simulator";

    pub fn record(&self) -> BackendRecord {
        let mut properties = BTreeMap::new();
        properties.insert("simulated".into(), Value::Bool(true));
        properties.insert("queue_length".into(), Value::from(0));
        properties.insert("connectivity".into(), Value::from("all_to_all"));
        if let Some(l) = self.latency {
            properties.insert("latency_ms".into(), Value::from(l.as_millis() as u64));
        }
        BackendRecord {
            id: Self::ID.into(),
            provider: "local_simulator_provider".into(),
            qubit_count: self.max_qubits,
            properties,
        }
    }
}

impl QuantumBackend for LocalSimulator {
    fn sample(&self, circuit: &Circuit, n_shots: u64, seed: u64) -> Result<ShotResult, BackendError> {
        if let Some(l) = self.latency {
            std::thread::sleep(l);
        }
        let psi = self.statevector(circuit)?;
        sample_probabilities(&probabilities(&psi), circuit.n_qubits, n_shots, seed)
    }

    fn statevector(&self, circuit: &Circuit) -> Result<Vec<Complex64>, BackendError> {
        simulate_statevector_capped(circuit, self.max_qubits)
    }
}

struct Entry {
    record: BackendRecord,
    backend: Arc<dyn QuantumBackend>,
}

/// Backends known to a tree. Updates are serialized by an internal lock;
/// listings are consistent snapshots.
#[derive(Default)]
pub struct BackendRegistry {
    entries: RwLock<BTreeMap<String, Entry>>,
}

impl std::fmt::Debug for BackendRegistry {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_list().entries(self.list_backends()).finish()
    }
}

impl BackendRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registry holding only the default local simulator.
    pub fn with_local_simulator() -> Self {
        let r = Self::new();
        let sim = LocalSimulator::default();
        r.register_backend(sim.record(), Arc::new(sim))
            .expect("empty registry");
        r
    }

    pub fn register_backend(
        &self,
        record: BackendRecord,
        backend: Arc<dyn QuantumBackend>,
    ) -> Result<(), BackendError> {
        let mut entries = self.entries.write().expect("backend registry poisoned");
        if entries.contains_key(&record.id) {
            return Err(BackendError::DuplicateId(record.id));
        }
        entries.insert(record.id.clone(), Entry { record, backend });
        Ok(())
    }

    pub fn list_backends(&self) -> Vec<BackendRecord> {
        self.entries
            .read()
            .expect("backend registry poisoned")
            .values()
            .map(|e| e.record.clone())
            .collect()
    }

    pub fn set_property(&self, id: &str, key: &str, value: Value) -> Result<(), BackendError> {
        let mut entries = self.entries.write().expect("backend registry poisoned");
        let e = entries
            .get_mut(id)
            .ok_or_else(|| BackendError::UnknownBackend(id.to_string()))?;
        e.record.properties.insert(key.to_string(), value);
        Ok(())
    }

    pub fn get(&self, id: &str) -> Result<(BackendRecord, Arc<dyn QuantumBackend>), BackendError> {
        let entries = self.entries.read().expect("backend registry poisoned");
        let e = entries
            .get(id)
            .ok_or_else(|| BackendError::UnknownBackend(id.to_string()))?;
        Ok((e.record.clone(), Arc::clone(&e.backend)))
    }

    /// Smallest-capacity backend that can host `n_qubits`, ties by id.
    pub fn select_for(&self, n_qubits: usize) -> Option<BackendRecord> {
        self.list_backends()
            .into_iter()
            .filter(|r| r.qubit_count >= n_qubits)
            .min_by(|a, b| a.qubit_count.cmp(&b.qubit_count).then_with(|| a.id.cmp(&b.id)))
    }

    pub fn max_qubits(&self) -> usize {
        self.list_backends()
            .iter()
            .map(|r| r.qubit_count)
            .max()
            .unwrap_or(0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn register_and_list() {
        let r = BackendRegistry::with_local_simulator();
        assert_eq!(r.list_backends().len(), 1);
        let sim = LocalSimulator::default();
        assert!(matches!(
            r.register_backend(sim.record(), Arc::new(sim)),
            Err(BackendError::DuplicateId(_))
        ));
        r.set_property(LocalSimulator::ID, "queue_length", Value::from(7))
            .unwrap();
        assert_eq!(r.list_backends()[0].properties["queue_length"], Value::from(7));
        assert!(r.set_property("nope", "x", Value::Null).is_err());
    }

    #[test]
    fn selection_by_capacity() {
        let r = BackendRegistry::with_local_simulator();
        let small = LocalSimulator {
            max_qubits: 8,
            latency: None,
        };
        let mut rec = small.record();
        rec.id = "small".into();
        r.register_backend(rec, Arc::new(small)).unwrap();
        assert_eq!(r.select_for(4).unwrap().id, "small");
        assert_eq!(r.select_for(12).unwrap().id, LocalSimulator::ID);
        assert!(r.select_for(30).is_none());
        assert_eq!(r.max_qubits(), STATEVECTOR_CAP);
    }
}
