use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::BackendError;

/// Gate set of the local simulator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "gate", rename_all = "lowercase")]
pub enum Gate {
    H { q: usize },
    Rx { q: usize, theta: f64 },
    Ry { q: usize, theta: f64 },
    Rz { q: usize, theta: f64 },
    Cx { c: usize, t: usize },
    Rzz { q1: usize, q2: usize, theta: f64 },
}

impl Gate {
    pub fn angle(&self) -> Option<f64> {
        match *self {
            Gate::Rx { theta, .. }
            | Gate::Ry { theta, .. }
            | Gate::Rz { theta, .. }
            | Gate::Rzz { theta, .. } => Some(theta),
            Gate::H { .. } | Gate::Cx { .. } => None,
        }
    }

    /// Returns a copy with the rotation angle shifted by `delta`.
    pub fn shifted(&self, delta: f64) -> Gate {
        let mut g = *self;
        match &mut g {
            Gate::Rx { theta, .. }
            | Gate::Ry { theta, .. }
            | Gate::Rz { theta, .. }
            | Gate::Rzz { theta, .. } => *theta += delta,
            Gate::H { .. } | Gate::Cx { .. } => {}
        }
        g
    }

    fn qubits(&self) -> [Option<usize>; 2] {
        match *self {
            Gate::H { q } | Gate::Rx { q, .. } | Gate::Ry { q, .. } | Gate::Rz { q, .. } => {
                [Some(q), None]
            }
            Gate::Cx { c, t } => [Some(c), Some(t)],
            Gate::Rzz { q1, q2, .. } => [Some(q1), Some(q2)],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Circuit {
    pub n_qubits: usize,
    pub gates: Vec<Gate>,
    pub measure_all: bool,
}

impl Circuit {
    pub fn new(n_qubits: usize) -> Self {
        Self {
            n_qubits,
            gates: Vec::new(),
            measure_all: true,
        }
    }

    pub fn push(&mut self, gate: Gate) -> &mut Self {
        self.gates.push(gate);
        self
    }

    pub fn h(&mut self, q: usize) -> &mut Self {
        self.push(Gate::H { q })
    }

    pub fn rx(&mut self, q: usize, theta: f64) -> &mut Self {
        self.push(Gate::Rx { q, theta })
    }

    pub fn ry(&mut self, q: usize, theta: f64) -> &mut Self {
        self.push(Gate::Ry { q, theta })
    }

    pub fn rz(&mut self, q: usize, theta: f64) -> &mut Self {
        self.push(Gate::Rz { q, theta })
    }

    pub fn cx(&mut self, c: usize, t: usize) -> &mut Self {
        self.push(Gate::Cx { c, t })
    }

    pub fn rzz(&mut self, q1: usize, q2: usize, theta: f64) -> &mut Self {
        self.push(Gate::Rzz { q1, q2, theta })
    }

    pub fn count(&self, pred: impl Fn(&Gate) -> bool) -> usize {
        self.gates.iter().filter(|g| pred(g)).count()
    }

    /// Checks qubit indices and angles.
    pub fn check(&self) -> Result<(), BackendError> {
        for (k, g) in self.gates.iter().enumerate() {
            let qs = g.qubits();
            for q in qs.iter().flatten() {
                if *q >= self.n_qubits {
                    return Err(BackendError::InvalidGate {
                        index: k,
                        reason: format!("qubit {q} out of range for {} qubits", self.n_qubits),
                    });
                }
            }
            if let [Some(a), Some(b)] = qs {
                if a == b {
                    return Err(BackendError::InvalidGate {
                        index: k,
                        reason: "two-qubit gate on a single qubit".into(),
                    });
                }
            }
            if let Some(theta) = g.angle() {
                if !theta.is_finite() {
                    return Err(BackendError::InvalidGate {
                        index: k,
                        reason: "angle is not finite".into(),
                    });
                }
            }
        }
        Ok(())
    }

    /// OpenQASM 2 text using `qelib1.inc` gate names.
    pub fn to_qasm(&self) -> String {
        let mut out = String::from("OPENQASM 2.0;\ninclude \"qelib1.inc\";\n");
        let _ = writeln!(out, "qreg q[{}];", self.n_qubits);
        if self.measure_all {
            let _ = writeln!(out, "creg c[{}];", self.n_qubits);
        }
        for g in &self.gates {
            let _ = match *g {
                Gate::H { q } => writeln!(out, "h q[{q}];"),
                Gate::Rx { q, theta } => writeln!(out, "rx({theta:.17}) q[{q}];"),
                Gate::Ry { q, theta } => writeln!(out, "ry({theta:.17}) q[{q}];"),
                Gate::Rz { q, theta } => writeln!(out, "rz({theta:.17}) q[{q}];"),
                Gate::Cx { c, t } => writeln!(out, "cx q[{c}],q[{t}];"),
                Gate::Rzz { q1, q2, theta } => writeln!(out, "rzz({theta:.17}) q[{q1}],q[{q2}];"),
            };
        }
        if self.measure_all {
            out.push_str("measure q -> c;\n");
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn check_rejects_bad_indices() {
        let mut c = Circuit::new(2);
        c.cx(0, 2);
        assert!(c.check().is_err());
        let mut c = Circuit::new(2);
        c.rzz(1, 1, 0.3);
        assert!(c.check().is_err());
        let mut c = Circuit::new(1);
        c.rx(0, f64::INFINITY);
        assert!(c.check().is_err());
    }

    #[test]
    fn qasm_export() {
        let mut c = Circuit::new(2);
        c.h(0).cx(0, 1).rzz(0, 1, 0.5);
        let text = c.to_qasm();
        assert!(text.starts_with("OPENQASM 2.0;"));
        assert!(text.contains("qreg q[2];"));
        assert!(text.contains("cx q[0],q[1];"));
        assert!(text.contains("rzz(0.5"));
        assert!(text.trim_end().ends_with("measure q -> c;"));
    }
}
