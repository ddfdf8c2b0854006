//! Threshold, scaling-law, sampling-coefficient and call-count fits.

use serde::{Deserialize, Deserializer, Serialize};
use thiserror::Error;

// JSON has no NaN; serde_json writes it as null, so read null back as NaN.
fn nan_if_null<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
    Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::NAN))
}

fn cov_nan_if_null<'de, D: Deserializer<'de>>(d: D) -> Result<Cov2, D::Error> {
    let m = <[[Option<f64>; 2]; 2]>::deserialize(d)?;
    Ok(m.map(|row| row.map(|v| v.unwrap_or(f64::NAN))))
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FitError {
    #[error("success rate never drops below 0.5; threshold lies beyond the tested noise range")]
    NoCrossing,
    #[error("success rate never reaches 0.5")]
    NeverSucceeds,
    #[error("not enough data: {0}")]
    InsufficientData(String),
    #[error("degenerate fit: {0}")]
    DegenerateFit(String),
}

pub type Cov2 = [[f64; 2]; 2];

fn inv2(m: Cov2) -> Option<Cov2> {
    let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
    let scale = m[0][0].abs().max(m[1][1].abs()).max(f64::MIN_POSITIVE);
    if !det.is_finite() || det.abs() <= 1e-14 * scale * scale {
        return None;
    }
    Some([[m[1][1] / det, -m[0][1] / det], [-m[1][0] / det, m[0][0] / det]])
}

fn scale2(m: Cov2, s: f64) -> Cov2 {
    [[m[0][0] * s, m[0][1] * s], [m[1][0] * s, m[1][1] * s]]
}

/// Optimizer tolerance threshold at one system size.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdPoint {
    pub n: usize,
    /// Noise level of the 50% success crossing, in units of σ_U.
    pub epsilon_star: f64,
    #[serde(deserialize_with = "nan_if_null")]
    pub std_error: f64,
    /// Logistic width in ln ε.
    #[serde(deserialize_with = "nan_if_null")]
    pub width: f64,
    pub trials: usize,
    pub success_curve: Vec<(f64, f64)>,
}

impl ThresholdPoint {
    /// Standard error of `ln ε*`.
    pub fn ln_std_error(&self) -> f64 {
        self.std_error / self.epsilon_star
    }
}

fn logistic(u: f64, m: f64, w: f64) -> f64 {
    1.0 / (1.0 + ((u - m) / w).exp())
}

/// Fits `s(ε) = 1 / (1 + exp((ln ε - ln ε*) / w))` to a success curve by
/// Levenberg-Marquardt least squares in `ln ε`.
pub fn fit_threshold(n: usize, curve: &[(f64, f64)], trials: usize) -> Result<ThresholdPoint, FitError> {
    let mut pts: Vec<(f64, f64)> = curve.iter().filter(|(e, _)| *e > 0.0).copied().collect();
    pts.sort_by(|a, b| a.0.total_cmp(&b.0));
    pts.dedup_by(|a, b| a.0 == b.0);
    if pts.len() < 4 {
        return Err(FitError::InsufficientData(format!("{} distinct noise levels, need 4", pts.len())));
    }
    if pts.iter().any(|(_, s)| !(0.0..=1.0).contains(s)) {
        return Err(FitError::InsufficientData("success rates must lie in [0, 1]".into()));
    }
    let (lo, hi) = (pts[0].0, pts[pts.len() - 1].0);
    if hi / lo < 10.0 * (1.0 - 1e-12) {
        return Err(FitError::InsufficientData("noise levels span less than a decade".into()));
    }
    let max = pts.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max);
    let min = pts.iter().map(|p| p.1).fold(f64::INFINITY, f64::min);
    if max < 0.5 {
        return Err(FitError::NeverSucceeds);
    }
    if min >= 0.5 {
        return Err(FitError::NoCrossing);
    }

    let u: Vec<f64> = pts.iter().map(|p| p.0.ln()).collect();
    let y: Vec<f64> = pts.iter().map(|p| p.1).collect();
    // Start at the first downward crossing of 0.5.
    let mut m = u[u.len() - 1];
    for i in 0..u.len() - 1 {
        if y[i] >= 0.5 && y[i + 1] < 0.5 {
            let t = (y[i] - 0.5) / (y[i] - y[i + 1]);
            m = u[i] + t * (u[i + 1] - u[i]);
            break;
        }
    }
    let span = u[u.len() - 1] - u[0];
    let mut w = (span / 10.0).max(0.05);
    let (w_min, w_max) = (1e-3, 10.0 * span);

    let ssr = |m: f64, w: f64| -> f64 { u.iter().zip(&y).map(|(ui, yi)| (logistic(*ui, m, w) - yi).powi(2)).sum() };
    let jac = |m: f64, w: f64| -> (Cov2, [f64; 2]) {
        let mut jtj = [[0.0; 2]; 2];
        let mut jtr = [0.0; 2];
        for (ui, yi) in u.iter().zip(&y) {
            let s = logistic(*ui, m, w);
            let z = (ui - m) / w;
            let d = s * (1.0 - s) / w;
            let g = [d, d * z];
            let r = s - yi;
            for a in 0..2 {
                jtr[a] += g[a] * r;
                for b in 0..2 {
                    jtj[a][b] += g[a] * g[b];
                }
            }
        }
        (jtj, jtr)
    };

    let mut lambda = 1e-3;
    let mut cost = ssr(m, w);
    for _ in 0..500 {
        let (jtj, jtr) = jac(m, w);
        let mut improved = false;
        for _ in 0..30 {
            let mut a = jtj;
            a[0][0] += lambda * jtj[0][0].max(1e-12);
            a[1][1] += lambda * jtj[1][1].max(1e-12);
            let Some(ai) = inv2(a) else {
                lambda *= 10.0;
                continue;
            };
            let dm = -(ai[0][0] * jtr[0] + ai[0][1] * jtr[1]);
            let dw = -(ai[1][0] * jtr[0] + ai[1][1] * jtr[1]);
            let (nm, nw) = (m + dm, (w + dw).clamp(w_min, w_max));
            let nc = ssr(nm, nw);
            if nc <= cost {
                let done = (cost - nc) <= 1e-15 * (1.0 + cost) && dm.abs() < 1e-12 && dw.abs() < 1e-12;
                m = nm;
                w = nw;
                cost = nc;
                lambda = (lambda / 10.0).max(1e-15);
                improved = !done;
                break;
            }
            lambda *= 10.0;
        }
        if !improved {
            break;
        }
    }

    let dof = pts.len() as f64 - 2.0;
    let s2 = cost / dof;
    let (jtj, _) = jac(m, w);
    let var_m = inv2(jtj).map_or(f64::INFINITY, |c| (c[0][0] * s2).max(0.0));
    let eps = m.exp();
    Ok(ThresholdPoint {
        n,
        epsilon_star: eps,
        std_error: eps * var_m.sqrt(),
        width: w,
        trials,
        success_curve: pts,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Hypothesis {
    /// `ε* = A exp(-B n)`
    Exponential,
    /// `ε* = A n^(-B)`
    PowerLaw,
    /// `ε* = A - B ln n`
    Logarithmic,
}

impl Hypothesis {
    pub const ALL: [Hypothesis; 3] = [Hypothesis::Exponential, Hypothesis::PowerLaw, Hypothesis::Logarithmic];

    pub fn name(self) -> &'static str {
        match self {
            Hypothesis::Exponential => "exponential",
            Hypothesis::PowerLaw => "power_law",
            Hypothesis::Logarithmic => "logarithmic",
        }
    }
}

/// Fitted decay law for ε*(n).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingFit {
    pub hypothesis: Hypothesis,
    pub a: f64,
    pub b: f64,
    /// Covariance of `(A, B)`.
    #[serde(deserialize_with = "cov_nan_if_null")]
    pub covariance: Cov2,
    #[serde(deserialize_with = "nan_if_null")]
    pub r_squared: f64,
    pub valid: bool,
    pub n_range: (usize, usize),
}

pub const MIN_R_SQUARED: f64 = 0.8;

impl ScalingFit {
    /// ε*(n); non-positive past the logarithmic domain bound.
    pub fn epsilon_star(&self, n: f64) -> f64 {
        match self.hypothesis {
            Hypothesis::Exponential => self.a * (-self.b * n).exp(),
            Hypothesis::PowerLaw => self.a * n.powf(-self.b),
            Hypothesis::Logarithmic => self.a - self.b * n.ln(),
        }
    }

    /// `ln ε*(n)` and its first-order variance, or `None` outside the
    /// positive domain.
    pub fn ln_epsilon_star(&self, n: f64) -> Option<(f64, f64)> {
        let c = &self.covariance;
        let quad = |g: [f64; 2]| {
            (g[0] * g[0] * c[0][0] + 2.0 * g[0] * g[1] * c[0][1] + g[1] * g[1] * c[1][1]).max(0.0)
        };
        match self.hypothesis {
            Hypothesis::Exponential => Some((self.a.ln() - self.b * n, quad([1.0 / self.a, -n]))),
            Hypothesis::PowerLaw => Some((self.a.ln() - self.b * n.ln(), quad([1.0 / self.a, -n.ln()]))),
            Hypothesis::Logarithmic => {
                let e = self.epsilon_star(n);
                (e > 0.0).then(|| (e.ln(), quad([1.0 / e, -n.ln() / e])))
            }
        }
    }
}

/// Weighted linear least squares `y = c0 + c1 x` with the covariance scaled
/// by the residual variance. Returns `(c, cov, r²)`.
pub fn weighted_line(x: &[f64], y: &[f64], w: &[f64]) -> Result<([f64; 2], Cov2, f64), FitError> {
    let n = x.len();
    if n < 3 {
        return Err(FitError::DegenerateFit(format!("{n} points, need at least 3")));
    }
    let (mut s0, mut sx, mut sxx, mut sy, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for i in 0..n {
        s0 += w[i];
        sx += w[i] * x[i];
        sxx += w[i] * x[i] * x[i];
        sy += w[i] * y[i];
        sxy += w[i] * x[i] * y[i];
    }
    let inv = inv2([[s0, sx], [sx, sxx]]).ok_or_else(|| FitError::DegenerateFit("singular design".into()))?;
    let c0 = inv[0][0] * sy + inv[0][1] * sxy;
    let c1 = inv[1][0] * sy + inv[1][1] * sxy;
    let ybar = sy / s0;
    let (mut ssr, mut sst) = (0.0, 0.0);
    for i in 0..n {
        ssr += w[i] * (y[i] - c0 - c1 * x[i]).powi(2);
        sst += w[i] * (y[i] - ybar).powi(2);
    }
    let r2 = if sst > 0.0 {
        (1.0 - ssr / sst).clamp(0.0, 1.0)
    } else if ssr <= 1e-30 {
        1.0
    } else {
        0.0
    };
    let s2 = ssr / (n as f64 - 2.0);
    Ok(([c0, c1], scale2(inv, s2), r2))
}

/// Fits one hypothesis to threshold points. Points carry their own
/// standard errors; when any is missing or zero the fit is unweighted.
pub fn fit_scaling(points: &[ThresholdPoint], hypothesis: Hypothesis) -> Result<ScalingFit, FitError> {
    if points.len() < 3 {
        return Err(FitError::DegenerateFit(format!("{} points, need at least 3", points.len())));
    }
    let ns: Vec<f64> = points.iter().map(|p| p.n as f64).collect();
    let eps: Vec<f64> = points.iter().map(|p| p.epsilon_star).collect();
    if eps.iter().any(|e| !(e.is_finite() && *e > 0.0)) {
        return Err(FitError::DegenerateFit("thresholds must be positive".into()));
    }
    let use_weights = points.iter().all(|p| p.std_error.is_finite() && p.std_error > 0.0);
    let (x, y, sig): (Vec<f64>, Vec<f64>, Vec<f64>) = match hypothesis {
        Hypothesis::Exponential => (ns.clone(), eps.iter().map(|e| e.ln()).collect(), points.iter().map(|p| p.ln_std_error()).collect()),
        Hypothesis::PowerLaw => (
            ns.iter().map(|n| n.ln()).collect(),
            eps.iter().map(|e| e.ln()).collect(),
            points.iter().map(|p| p.ln_std_error()).collect(),
        ),
        Hypothesis::Logarithmic => (ns.iter().map(|n| n.ln()).collect(), eps.clone(), points.iter().map(|p| p.std_error).collect()),
    };
    let w: Vec<f64> = if use_weights { sig.iter().map(|s| 1.0 / (s * s)).collect() } else { vec![1.0; x.len()] };
    let (c, cov, r2) = weighted_line(&x, &y, &w)?;
    let b = -c[1];
    let (a, covariance) = match hypothesis {
        Hypothesis::Exponential | Hypothesis::PowerLaw => {
            let a = c[0].exp();
            // (A, B) = (exp c0, -c1)
            (a, [[a * a * cov[0][0], -a * cov[0][1]], [-a * cov[1][0], cov[1][1]]])
        }
        Hypothesis::Logarithmic => (c[0], [[cov[0][0], -cov[0][1]], [-cov[1][0], cov[1][1]]]),
    };
    let n_min = points.iter().map(|p| p.n).min().unwrap_or(0);
    let n_max = points.iter().map(|p| p.n).max().unwrap_or(0);
    Ok(ScalingFit {
        hypothesis,
        a,
        b,
        covariance,
        r_squared: r2,
        valid: r2 >= MIN_R_SQUARED && b > 0.0,
        n_range: (n_min, n_max),
    })
}

/// `κ(n) = a exp(b n)`: normalized finite-sampling error at one shot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KappaFit {
    pub a: f64,
    pub b: f64,
    /// Covariance of `(ln a, b)`.
    pub covariance: Cov2,
    pub samples: Vec<(usize, f64)>,
}

impl KappaFit {
    pub fn kappa(&self, n: f64) -> f64 {
        self.a * (self.b * n).exp()
    }

    /// `ln κ(n)` and its variance; `None` for a zero-variance probe family.
    pub fn ln_kappa(&self, n: f64) -> Option<(f64, f64)> {
        if self.a <= 0.0 {
            return None;
        }
        let c = &self.covariance;
        Some((self.a.ln() + self.b * n, (c[0][0] + 2.0 * n * c[0][1] + n * n * c[1][1]).max(0.0)))
    }
}

/// Fits `ln κ = ln a + b n`, skipping zero measurements. With fewer than
/// three positive samples the fit is exact through their mean with no
/// growth term.
pub fn fit_kappa(samples: &[(usize, f64)]) -> KappaFit {
    let pos: Vec<(usize, f64)> = samples.iter().copied().filter(|(_, k)| *k > 0.0 && k.is_finite()).collect();
    let mean_fit = |pos: &[(usize, f64)]| {
        let a = if pos.is_empty() { 0.0 } else { (pos.iter().map(|p| p.1.ln()).sum::<f64>() / pos.len() as f64).exp() };
        KappaFit {
            a,
            b: 0.0,
            covariance: [[0.0; 2]; 2],
            samples: samples.to_vec(),
        }
    };
    if pos.len() < 3 {
        return mean_fit(&pos);
    }
    let x: Vec<f64> = pos.iter().map(|p| p.0 as f64).collect();
    let y: Vec<f64> = pos.iter().map(|p| p.1.ln()).collect();
    match weighted_line(&x, &y, &vec![1.0; x.len()]) {
        Ok((c, cov, _)) => KappaFit {
            a: c[0].exp(),
            b: c[1],
            covariance: cov,
            samples: samples.to_vec(),
        },
        Err(_) => mean_fit(&pos),
    }
}

/// `n_calls(n) = C n^γ`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CallsFit {
    pub c: f64,
    pub gamma: f64,
    /// Covariance of `(ln C, γ)`.
    pub covariance: Cov2,
    pub samples: Vec<(usize, f64)>,
}

impl CallsFit {
    pub fn calls(&self, n: f64) -> f64 {
        self.c * n.powf(self.gamma)
    }
}

/// Power-law fit of mean calls-to-best against system size. Fewer than
/// three sizes give a constant at their geometric mean.
pub fn fit_calls(samples: &[(usize, f64)]) -> Option<CallsFit> {
    let pos: Vec<(usize, f64)> = samples.iter().copied().filter(|(n, c)| *c > 0.0 && *n > 0).collect();
    if pos.is_empty() {
        return None;
    }
    let constant = || CallsFit {
        c: (pos.iter().map(|p| p.1.ln()).sum::<f64>() / pos.len() as f64).exp(),
        gamma: 0.0,
        covariance: [[0.0; 2]; 2],
        samples: samples.to_vec(),
    };
    if pos.len() < 3 {
        return Some(constant());
    }
    let x: Vec<f64> = pos.iter().map(|p| (p.0 as f64).ln()).collect();
    let y: Vec<f64> = pos.iter().map(|p| p.1.ln()).collect();
    Some(match weighted_line(&x, &y, &vec![1.0; x.len()]) {
        Ok((c, cov, _)) => CallsFit {
            c: c[0].exp(),
            gamma: c[1],
            covariance: cov,
            samples: samples.to_vec(),
        },
        Err(_) => constant(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn curve(eps_star: f64, w: f64) -> Vec<(f64, f64)> {
        (0..9)
            .map(|i| {
                let e = 10f64.powf(-3.0 + 0.5 * i as f64);
                (e, logistic(e.ln(), eps_star.ln(), w))
            })
            .collect()
    }

    #[test]
    fn logistic_round_trip() {
        let p = fit_threshold(5, &curve(0.1, 0.3), 20).unwrap();
        assert!((p.epsilon_star / 0.1 - 1.0).abs() < 1e-6, "{}", p.epsilon_star);
        assert!((p.width - 0.3).abs() < 1e-6);
    }

    #[test]
    fn threshold_errors() {
        let all = |v: f64| (0..5).map(|i| (10f64.powi(i - 3), v)).collect::<Vec<_>>();
        assert_eq!(fit_threshold(3, &all(1.0), 1), Err(FitError::NoCrossing));
        assert_eq!(fit_threshold(3, &all(0.0), 1), Err(FitError::NeverSucceeds));
        let narrow: Vec<(f64, f64)> = (0..5).map(|i| (1.0 + 0.1 * i as f64, 1.0 - 0.2 * i as f64)).collect();
        assert!(matches!(fit_threshold(3, &narrow, 1), Err(FitError::InsufficientData(_))));
    }

    #[test]
    fn nan_survives_json() {
        let p = ThresholdPoint { n: 3, epsilon_star: 1.0, std_error: f64::NAN, width: 0.2, trials: 2, success_curve: Vec::new() };
        let back: ThresholdPoint = serde_json::from_str(&serde_json::to_string(&p).unwrap()).unwrap();
        assert!(back.std_error.is_nan());
    }

    fn points(f: impl Fn(f64) -> f64) -> Vec<ThresholdPoint> {
        (3..=8)
            .map(|n| ThresholdPoint {
                n,
                epsilon_star: f(n as f64),
                std_error: 0.0,
                width: 0.3,
                trials: 20,
                success_curve: Vec::new(),
            })
            .collect()
    }

    #[test]
    fn noiseless_scaling_round_trips() {
        let e = fit_scaling(&points(|n| 0.5 * (-0.1 * n).exp()), Hypothesis::Exponential).unwrap();
        assert!((e.a - 0.5).abs() < 1e-9 && (e.b - 0.1).abs() < 1e-9);
        assert!((e.r_squared - 1.0).abs() < 1e-12 && e.valid);
        let p = fit_scaling(&points(|n| 0.5 * n.powf(-0.1)), Hypothesis::PowerLaw).unwrap();
        assert!((p.a - 0.5).abs() < 1e-9 && (p.b - 0.1).abs() < 1e-9);
        let l = fit_scaling(&points(|n| 0.5 - 0.1 * n.ln()), Hypothesis::Logarithmic).unwrap();
        assert!((l.a - 0.5).abs() < 1e-9 && (l.b - 0.1).abs() < 1e-9);
        let cross = fit_scaling(&points(|n| 0.5 * (-0.1 * n).exp()), Hypothesis::PowerLaw).unwrap();
        assert!(cross.r_squared < 1.0);
        assert!(matches!(
            fit_scaling(&points(|n| n)[..2], Hypothesis::Exponential),
            Err(FitError::DegenerateFit(_))
        ));
    }

    #[test]
    fn kappa_skips_zeros() {
        let k = fit_kappa(&[(3, 0.0), (4, 1.0), (5, 1.0), (6, 1.0)]);
        assert!((k.a - 1.0).abs() < 1e-12 && k.b.abs() < 1e-12);
        let z = fit_kappa(&[(3, 0.0), (4, 0.0)]);
        assert_eq!(z.a, 0.0);
        assert!(z.ln_kappa(10.0).is_none());
    }

    #[test]
    fn calls_power_law() {
        let s: Vec<(usize, f64)> = (3..=8).map(|n| (n, 4.0 * (n as f64).powf(1.5))).collect();
        let c = fit_calls(&s).unwrap();
        assert!((c.c - 4.0).abs() < 1e-9 && (c.gamma - 1.5).abs() < 1e-9);
        assert!(fit_calls(&[]).is_none());
    }
}
