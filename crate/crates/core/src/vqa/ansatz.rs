use serde::{Deserialize, Serialize};

use super::VqaError;
use crate::backend::{Circuit, Gate};
use crate::problem::QuboMatrix;

/// Circuit family evaluated by the variational loop.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AnsatzSpec {
    Qaoa { p: usize },
    /// Fixed linear-ramp schedule; no free parameters.
    LrQaoa { p: usize, delta: f64 },
    /// Per layer: RY on every qubit, then a CX chain 0→1→…→n-1.
    HardwareEfficient { layers: usize },
    // Declared for database compatibility; no circuit construction.
    MaQaoa { p: usize },
    QaoaPlus { p: usize },
    DcQaoa { p: usize },
    WsQaoa { p: usize },
}

impl AnsatzSpec {
    /// Identifier used in databases and path files.
    pub fn vqa_id(&self) -> &'static str {
        match self {
            AnsatzSpec::Qaoa { .. } => "qaoa",
            AnsatzSpec::LrQaoa { .. } => "lr_qaoa",
            AnsatzSpec::HardwareEfficient { .. } => "vqe",
            AnsatzSpec::MaQaoa { .. } => "ma_qaoa",
            AnsatzSpec::QaoaPlus { .. } => "qaoa_plus",
            AnsatzSpec::DcQaoa { .. } => "dc_qaoa",
            AnsatzSpec::WsQaoa { .. } => "ws_qaoa",
        }
    }

    pub fn depth(&self) -> usize {
        match *self {
            AnsatzSpec::Qaoa { p }
            | AnsatzSpec::LrQaoa { p, .. }
            | AnsatzSpec::MaQaoa { p }
            | AnsatzSpec::QaoaPlus { p }
            | AnsatzSpec::DcQaoa { p }
            | AnsatzSpec::WsQaoa { p } => p,
            AnsatzSpec::HardwareEfficient { layers } => layers,
        }
    }

    /// Number of free parameters for `n` qubits.
    pub fn parameter_count(&self, n: usize) -> Result<usize, VqaError> {
        match *self {
            AnsatzSpec::Qaoa { p } => Ok(2 * p),
            AnsatzSpec::LrQaoa { .. } => Ok(0),
            AnsatzSpec::HardwareEfficient { layers } => Ok(n * layers),
            _ => Err(VqaError::UnsupportedAnsatz(self.vqa_id())),
        }
    }

    /// Id of the ansatz builder producing this spec.
    pub fn builder_id(&self) -> &'static str {
        match self {
            AnsatzSpec::HardwareEfficient { .. } => "hardware_efficient",
            other => other.vqa_id(),
        }
    }

    /// Name of the depth hyperparameter of the builder.
    pub fn depth_name(&self) -> &'static str {
        match self {
            AnsatzSpec::HardwareEfficient { .. } => "layers",
            _ => "p",
        }
    }

    /// Builder hyperparameters reproducing this spec.
    pub fn hyperparams(&self) -> std::collections::BTreeMap<String, serde_json::Value> {
        let mut m = std::collections::BTreeMap::new();
        m.insert(self.depth_name().into(), self.depth().into());
        if let AnsatzSpec::LrQaoa { delta, .. } = self {
            m.insert("delta".into(), (*delta).into());
        }
        m
    }

    pub fn validate(&self) -> Result<(), VqaError> {
        match *self {
            AnsatzSpec::Qaoa { p } | AnsatzSpec::LrQaoa { p, .. } if p == 0 => {
                Err(VqaError::EmptySchedule)
            }
            AnsatzSpec::LrQaoa { delta, .. } if !(delta > 0.0 && delta.is_finite()) => {
                Err(VqaError::InvalidDelta(delta))
            }
            AnsatzSpec::HardwareEfficient { layers: 0 } => Err(VqaError::EmptySchedule),
            AnsatzSpec::Qaoa { .. } | AnsatzSpec::LrQaoa { .. } | AnsatzSpec::HardwareEfficient { .. } => {
                Ok(())
            }
            _ => Err(VqaError::UnsupportedAnsatz(self.vqa_id())),
        }
    }

    /// Circuit template whose rotation angles are linear in the parameters.
    pub fn parametric(&self, q: &QuboMatrix) -> Result<ParametricCircuit, VqaError> {
        self.validate()?;
        match *self {
            AnsatzSpec::Qaoa { p } => Ok(qaoa_template(q, p)),
            AnsatzSpec::LrQaoa { p, delta } => {
                let (gammas, betas) = lr_qaoa_schedule(p, delta)?;
                let circuit = build_qaoa_circuit(q, &gammas, &betas)?;
                Ok(ParametricCircuit {
                    template: circuit,
                    bindings: Vec::new(),
                    n_params: 0,
                })
            }
            AnsatzSpec::HardwareEfficient { layers } => Ok(hea_template(q.n(), layers)),
            _ => Err(VqaError::UnsupportedAnsatz(self.vqa_id())),
        }
    }
}

/// Gate `gate` has angle `coef * params[param]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Binding {
    pub gate: usize,
    pub param: usize,
    pub coef: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParametricCircuit {
    pub template: Circuit,
    pub bindings: Vec<Binding>,
    pub n_params: usize,
}

impl ParametricCircuit {
    pub fn bind(&self, params: &[f64]) -> Result<Circuit, VqaError> {
        if params.len() != self.n_params {
            return Err(VqaError::ParamCountMismatch {
                expected: self.n_params,
                got: params.len(),
            });
        }
        let mut c = self.template.clone();
        for b in &self.bindings {
            let g = &mut c.gates[b.gate];
            let base = *g;
            *g = base.shifted(b.coef * params[b.param] - base.angle().unwrap_or(0.0));
        }
        Ok(c)
    }
}

/// Ising form of a QUBO in terms of Pauli-Z eigenvalues (`x = (1 - z) / 2`):
/// `C = offset + sum h_i Z_i + sum J_ij Z_i Z_j`.
#[derive(Debug, Clone, PartialEq)]
pub struct IsingForm {
    pub offset: f64,
    pub fields: Vec<f64>,
    pub couplings: Vec<(usize, usize, f64)>,
}

pub fn ising_form(q: &QuboMatrix) -> IsingForm {
    let n = q.n();
    let mut fields = vec![0.0; n];
    let mut couplings = Vec::new();
    let mut offset = 0.0;
    for (i, j, v) in q.upper_entries() {
        if v == 0.0 {
            continue;
        }
        if i == j {
            // x_i = (1 - Z_i)/2
            offset += v / 2.0;
            fields[i] -= v / 2.0;
        } else {
            // x_i x_j = (1 - Z_i - Z_j + Z_i Z_j)/4
            offset += v / 4.0;
            fields[i] -= v / 4.0;
            fields[j] -= v / 4.0;
            couplings.push((i, j, v / 4.0));
        }
    }
    IsingForm {
        offset,
        fields,
        couplings,
    }
}

fn qaoa_template(q: &QuboMatrix, p: usize) -> ParametricCircuit {
    let n = q.n();
    let ising = ising_form(q);
    let mut c = Circuit::new(n);
    let mut bindings = Vec::new();
    for k in 0..n {
        c.h(k);
    }
    for layer in 0..p {
        for (i, &h) in ising.fields.iter().enumerate() {
            if h != 0.0 {
                bindings.push(Binding {
                    gate: c.gates.len(),
                    param: layer,
                    coef: 2.0 * h,
                });
                c.rz(i, 0.0);
            }
        }
        for &(i, j, jij) in &ising.couplings {
            bindings.push(Binding {
                gate: c.gates.len(),
                param: layer,
                coef: 2.0 * jij,
            });
            c.rzz(i, j, 0.0);
        }
        for k in 0..n {
            bindings.push(Binding {
                gate: c.gates.len(),
                param: p + layer,
                coef: 2.0,
            });
            c.rx(k, 0.0);
        }
    }
    ParametricCircuit {
        template: c,
        bindings,
        n_params: 2 * p,
    }
}

/// H layer followed by `p` cost layers `exp(-i γ_k C)` and mixers `RX(2 β_k)`.
pub fn build_qaoa_circuit(q: &QuboMatrix, gammas: &[f64], betas: &[f64]) -> Result<Circuit, VqaError> {
    if gammas.is_empty() || betas.is_empty() {
        return Err(VqaError::EmptySchedule);
    }
    if gammas.len() != betas.len() {
        return Err(VqaError::ParamCountMismatch {
            expected: gammas.len(),
            got: betas.len(),
        });
    }
    let template = qaoa_template(q, gammas.len());
    let params: Vec<f64> = gammas.iter().chain(betas).copied().collect();
    template.bind(&params)
}

/// Linear ramp: `γ_k = (k/p) Δ`, `β_k = (1 - k/p) Δ` for `k = 1..p`.
pub fn lr_qaoa_schedule(p: usize, delta: f64) -> Result<(Vec<f64>, Vec<f64>), VqaError> {
    if p == 0 {
        return Err(VqaError::EmptySchedule);
    }
    if !(delta > 0.0 && delta.is_finite()) {
        return Err(VqaError::InvalidDelta(delta));
    }
    let gammas = (1..=p).map(|k| k as f64 / p as f64 * delta).collect();
    let betas = (1..=p).map(|k| (1.0 - k as f64 / p as f64) * delta).collect();
    Ok((gammas, betas))
}

fn hea_template(n: usize, layers: usize) -> ParametricCircuit {
    let mut c = Circuit::new(n);
    let mut bindings = Vec::new();
    for layer in 0..layers {
        for q in 0..n {
            bindings.push(Binding {
                gate: c.gates.len(),
                param: layer * n + q,
                coef: 1.0,
            });
            c.ry(q, 0.0);
        }
        for q in 0..n.saturating_sub(1) {
            c.cx(q, q + 1);
        }
    }
    ParametricCircuit {
        template: c,
        bindings,
        n_params: n * layers,
    }
}

/// Hardware-efficient circuit with `params` laid out layer-major.
pub fn build_hea_circuit(n: usize, layers: usize, params: &[f64]) -> Result<Circuit, VqaError> {
    hea_template(n, layers).bind(params)
}

/// True if the gate at `index` of `circuit` is a two-qubit ZZ rotation.
pub fn is_rzz(g: &Gate) -> bool {
    matches!(g, Gate::Rzz { .. })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::{exact_expectation, probabilities, simulate_statevector};
    use std::f64::consts::PI;

    #[test]
    fn lr_schedule_values() {
        let (g, b) = lr_qaoa_schedule(1, 1.0).unwrap();
        assert_eq!((g, b), (vec![1.0], vec![0.0]));
        let (g, b) = lr_qaoa_schedule(2, 0.8).unwrap();
        assert_eq!(g, vec![0.4, 0.8]);
        assert_eq!(b, vec![0.4, 0.0]);
        assert!(matches!(lr_qaoa_schedule(2, 0.0), Err(VqaError::InvalidDelta(_))));
        assert!(matches!(lr_qaoa_schedule(0, 1.0), Err(VqaError::EmptySchedule)));
    }

    #[test]
    fn qaoa_gate_structure() {
        let q = QuboMatrix::from_rows(&[vec![0.0, 1.0], vec![0.0, 0.0]]).unwrap();
        let c = build_qaoa_circuit(&q, &[0.3], &[0.2]).unwrap();
        assert_eq!(c.count(is_rzz), 1);
        let diag = QuboMatrix::from_rows(&[vec![1.0, 0.0], vec![0.0, -2.0]]).unwrap();
        for p in 1..4 {
            let c = build_qaoa_circuit(&diag, &vec![0.1; p], &vec![0.2; p]).unwrap();
            assert_eq!(c.count(is_rzz), 0);
        }
        assert!(matches!(build_qaoa_circuit(&q, &[], &[]), Err(VqaError::EmptySchedule)));
    }

    #[test]
    fn qaoa_at_zero_angles_is_uniform_mean() {
        let q = crate::problem::random_qubo(4, 0.8, 5).unwrap();
        let c = build_qaoa_circuit(&q, &[0.0], &[0.0]).unwrap();
        let mean = q.objective_table().iter().sum::<f64>() / 16.0;
        assert!((exact_expectation(&c, &q).unwrap() - mean).abs() < 1e-12);
    }

    #[test]
    fn ising_form_reproduces_objective() {
        let q = crate::problem::random_qubo(5, 0.7, 8).unwrap();
        let ising = ising_form(&q);
        for idx in 0..32 {
            let bits = crate::problem::index_to_bits(idx, 5);
            let z: Vec<f64> = bits.iter().map(|&b| if b == 1 { -1.0 } else { 1.0 }).collect();
            let mut e = ising.offset;
            for (i, h) in ising.fields.iter().enumerate() {
                e += h * z[i];
            }
            for &(i, j, jij) in &ising.couplings {
                e += jij * z[i] * z[j];
            }
            assert!((e - q.objective_of_index(idx)).abs() < 1e-12);
        }
    }

    #[test]
    fn hea_states() {
        let c = build_hea_circuit(2, 1, &[0.0, 0.0]).unwrap();
        let probs = probabilities(&simulate_statevector(&c).unwrap());
        assert!((probs[0] - 1.0).abs() < 1e-12);
        // RY(π) on qubit 0 gives |10>, then CX(0,1) flips qubit 1.
        let c = build_hea_circuit(2, 1, &[PI, 0.0]).unwrap();
        let probs = probabilities(&simulate_statevector(&c).unwrap());
        assert!((probs[0b11] - 1.0).abs() < 1e-12);
        assert!(matches!(
            build_hea_circuit(2, 1, &[0.0]),
            Err(VqaError::ParamCountMismatch { expected: 2, got: 1 })
        ));
    }

    #[test]
    fn parameter_counts() {
        assert_eq!(AnsatzSpec::Qaoa { p: 3 }.parameter_count(5).unwrap(), 6);
        assert_eq!(AnsatzSpec::LrQaoa { p: 3, delta: 0.7 }.parameter_count(5).unwrap(), 0);
        assert_eq!(AnsatzSpec::HardwareEfficient { layers: 2 }.parameter_count(5).unwrap(), 10);
        assert!(AnsatzSpec::MaQaoa { p: 1 }.parameter_count(5).is_err());
        assert!(AnsatzSpec::Qaoa { p: 0 }.validate().is_err());
    }
}
