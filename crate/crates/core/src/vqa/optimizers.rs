//! Classical optimizers driving the variational loop.
//!
//! Optimizers see the loss only through [`Objective`], which enforces the
//! call budget: once it returns `None` the optimizer must stop.

use std::f64::consts::PI;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::VqaError;

/// Loss seen by an optimizer.
pub trait Objective {
    fn dim(&self) -> usize;

    /// One loss evaluation, or `None` when the budget is spent.
    fn eval(&mut self, params: &[f64]) -> Option<f64>;

    /// Parameter-shift gradient. Every shifted circuit costs one call.
    fn gradient(&mut self, params: &[f64]) -> Option<Vec<f64>>;
}

pub trait Optimizer: Send {
    fn id(&self) -> &str;

    fn minimize(
        &mut self,
        objective: &mut dyn Objective,
        x0: Vec<f64>,
        rng: &mut ChaCha8Rng,
    ) -> Result<(), VqaError>;
}

/// Simultaneous perturbation stochastic approximation with the standard
/// gain sequences `a_k = a / (k + 1 + A)^0.602`, `c_k = c / (k + 1)^0.101`.
#[derive(Debug, Clone)]
pub struct Spsa {
    pub a: f64,
    pub c: f64,
    pub max_iters: usize,
    /// Stability constant `A`.
    pub stability: f64,
}

impl Spsa {
    const ALPHA: f64 = 0.602;
    const GAMMA: f64 = 0.101;
}

impl Optimizer for Spsa {
    fn id(&self) -> &str {
        "spsa"
    }

    fn minimize(
        &mut self,
        objective: &mut dyn Objective,
        mut x: Vec<f64>,
        rng: &mut ChaCha8Rng,
    ) -> Result<(), VqaError> {
        let dim = x.len();
        if dim == 0 {
            return Ok(());
        }
        for k in 0..self.max_iters {
            let ak = self.a / (k as f64 + 1.0 + self.stability).powf(Self::ALPHA);
            let ck = self.c / (k as f64 + 1.0).powf(Self::GAMMA);
            let delta: Vec<f64> = (0..dim)
                .map(|_| if rng.random::<bool>() { 1.0 } else { -1.0 })
                .collect();
            let plus: Vec<f64> = x.iter().zip(&delta).map(|(v, d)| v + ck * d).collect();
            let minus: Vec<f64> = x.iter().zip(&delta).map(|(v, d)| v - ck * d).collect();
            let Some(fp) = objective.eval(&plus) else { break };
            let Some(fm) = objective.eval(&minus) else { break };
            let g = (fp - fm) / (2.0 * ck);
            for (v, d) in x.iter_mut().zip(&delta) {
                *v -= ak * g * d;
            }
        }
        // Final iterate, if the budget allows.
        let _ = objective.eval(&x);
        Ok(())
    }
}

/// Sequential minimal optimization: each coordinate is updated to the exact
/// minimum of the sinusoid `a cos(θ - b) + c` fitted through three
/// evaluations spaced by 2π/3.
#[derive(Debug, Clone)]
pub struct Nft {
    pub max_sweeps: usize,
}

impl Optimizer for Nft {
    fn id(&self) -> &str {
        "nft"
    }

    fn minimize(
        &mut self,
        objective: &mut dyn Objective,
        mut x: Vec<f64>,
        _rng: &mut ChaCha8Rng,
    ) -> Result<(), VqaError> {
        let shift = 2.0 * PI / 3.0;
        for _ in 0..self.max_sweeps {
            for d in 0..x.len() {
                let theta = x[d];
                let Some(z0) = objective.eval(&x) else { return Ok(()) };
                x[d] = theta + shift;
                let Some(zp) = objective.eval(&x) else { return Ok(()) };
                x[d] = theta - shift;
                let Some(zm) = objective.eval(&x) else { return Ok(()) };
                let mean = (z0 + zp + zm) / 3.0;
                let a_cos = z0 - mean;
                let a_sin = (zm - zp) / 3f64.sqrt();
                let phase = a_sin.atan2(a_cos);
                x[d] = wrap(theta - phase + PI);
            }
        }
        let _ = objective.eval(&x);
        Ok(())
    }
}

fn wrap(theta: f64) -> f64 {
    (theta + PI).rem_euclid(2.0 * PI) - PI
}

/// Plain gradient descent on parameter-shift gradients.
#[derive(Debug, Clone)]
pub struct ParamShiftGd {
    pub step_length: f64,
    pub max_iters: usize,
}

impl Optimizer for ParamShiftGd {
    fn id(&self) -> &str {
        "ps_gd"
    }

    fn minimize(
        &mut self,
        objective: &mut dyn Objective,
        mut x: Vec<f64>,
        _rng: &mut ChaCha8Rng,
    ) -> Result<(), VqaError> {
        for _ in 0..self.max_iters {
            let Some(g) = objective.gradient(&x) else { break };
            for (v, gi) in x.iter_mut().zip(&g) {
                *v -= self.step_length * gi;
            }
            if objective.eval(&x).is_none() {
                break;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    /// Separable sinusoidal test loss with a numeric-difference gradient.
    struct Bowl {
        calls: usize,
        budget: usize,
        best: f64,
    }

    impl Bowl {
        fn value(p: &[f64]) -> f64 {
            p.iter().enumerate().map(|(i, t)| -(t - 0.3 * i as f64).cos()).sum()
        }
    }

    impl Objective for Bowl {
        fn dim(&self) -> usize {
            3
        }

        fn eval(&mut self, p: &[f64]) -> Option<f64> {
            if self.calls >= self.budget {
                return None;
            }
            self.calls += 1;
            let v = Self::value(p);
            self.best = self.best.min(v);
            Some(v)
        }

        fn gradient(&mut self, p: &[f64]) -> Option<Vec<f64>> {
            let mut g = Vec::new();
            for i in 0..p.len() {
                let mut a = p.to_vec();
                let mut b = p.to_vec();
                a[i] += PI / 2.0;
                b[i] -= PI / 2.0;
                g.push((self.eval(&a)? - self.eval(&b)?) / 2.0);
            }
            Some(g)
        }
    }

    fn run(opt: &mut dyn Optimizer, budget: usize) -> Bowl {
        let mut bowl = Bowl {
            calls: 0,
            budget,
            best: f64::INFINITY,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        opt.minimize(&mut bowl, vec![2.0, -2.0, 1.0], &mut rng).unwrap();
        bowl
    }

    #[test]
    fn nft_solves_sinusoids_in_one_sweep() {
        let bowl = run(&mut Nft { max_sweeps: 1 }, 1000);
        assert!((bowl.best + 3.0).abs() < 1e-9, "{}", bowl.best);
        assert_eq!(bowl.calls, 3 * 3 + 1);
    }

    #[test]
    fn spsa_and_gd_descend() {
        let spsa = run(
            &mut Spsa {
                a: 0.5,
                c: 0.1,
                max_iters: 300,
                stability: 10.0,
            },
            1000,
        );
        assert!(spsa.best < -2.95, "{}", spsa.best);
        let gd = run(
            &mut ParamShiftGd {
                step_length: 0.5,
                max_iters: 100,
            },
            10_000,
        );
        assert!(gd.best < -2.999, "{}", gd.best);
    }

    #[test]
    fn budget_is_respected() {
        for budget in [1, 2, 5, 17] {
            let b = run(
                &mut Spsa {
                    a: 0.5,
                    c: 0.1,
                    max_iters: 300,
                    stability: 10.0,
                },
                budget,
            );
            assert!(b.calls <= budget);
            assert!(run(&mut Nft { max_sweeps: 10 }, budget).calls <= budget);
        }
    }
}
