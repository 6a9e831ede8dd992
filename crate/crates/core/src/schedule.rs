//! Step-size and regularization schedules.
//!
//! `γ_k = γ_0 (k+1)^{-a}`, `η_k = η_0 (k+1)^{-b}` and the averaging weight
//! `γ_k^r`. The rate-oriented parametrization by `δ ∈ (0, 0.5)` fixes
//! `a = 0.5 + 0.1δ` and `b = 0.5 − δ`.

use std::fmt;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepSchedule {
    pub gamma0: f64,
    pub eta0: f64,
    pub a: f64,
    pub b: f64,
    pub r: f64,
    pub delta: Option<f64>,
}

/// Values produced by a schedule at one iteration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepValues {
    pub gamma: f64,
    pub eta: f64,
    pub weight: f64,
}

impl StepSchedule {
    pub fn with_exponents(gamma0: f64, eta0: f64, a: f64, b: f64, r: f64) -> Result<Self> {
        check_positive("gamma0", gamma0)?;
        check_positive("eta0", eta0)?;
        for (name, v) in [("a", a), ("b", b), ("r", r)] {
            if !v.is_finite() {
                return Err(Error::InvalidArgument(format!("{name} must be finite")));
            }
        }
        Ok(Self {
            gamma0,
            eta0,
            a,
            b,
            r,
            delta: None,
        })
    }

    /// Rate family: `a = 0.5 + 0.1δ`, `b = 0.5 − δ`.
    pub fn with_delta(gamma0: f64, eta0: f64, delta: f64, r: f64) -> Result<Self> {
        if !delta.is_finite() {
            return Err(Error::InvalidArgument("delta must be finite".into()));
        }
        let mut s = Self::with_exponents(gamma0, eta0, 0.5 + 0.1 * delta, 0.5 - delta, r)?;
        s.delta = Some(delta);
        Ok(s)
    }

    /// δ = 0.25, r = 0.5 and `γ_0 = η_0` with `γ_0 η_0 = 0.5·d/μ`.
    pub fn default_for(d: usize, mu: f64) -> Result<Self> {
        check_positive("mu", mu)?;
        if d == 0 {
            return Err(Error::InvalidArgument("block count must be >= 1".into()));
        }
        let g = (0.5 * d as f64 / mu).sqrt();
        Self::with_delta(g, g, 0.25, 0.5)
    }

    pub fn gamma(&self, k: u64) -> f64 {
        self.gamma0 * ((k + 1) as f64).powf(-self.a)
    }

    pub fn eta(&self, k: u64) -> f64 {
        self.eta0 * ((k + 1) as f64).powf(-self.b)
    }

    /// Averaging weight `γ_k^r`.
    pub fn weight(&self, k: u64) -> f64 {
        self.gamma(k).powf(self.r)
    }

    pub fn eval(&self, k: u64) -> StepValues {
        let gamma = self.gamma(k);
        StepValues {
            gamma,
            eta: self.eta(k),
            weight: gamma.powf(self.r),
        }
    }

    /// Checks the exponent conditions with uniform block sampling over `d` blocks.
    pub fn validate(&self, mu: f64, d: usize) -> ValidationReport {
        let d = d.max(1);
        self.check(mu, ProductBound::Uniform { d })
    }

    /// Same as [`validate`](Self::validate) with explicit sampling probabilities;
    /// the product bound becomes `γ_0 η_0 < 1/(μ p_min)`.
    pub fn validate_with_probabilities(&self, mu: f64, probabilities: &[f64]) -> ValidationReport {
        let uniform = probabilities
            .iter()
            .all(|p| (p - probabilities[0]).abs() <= 1e-12);
        if uniform && !probabilities.is_empty() {
            return self.validate(mu, probabilities.len());
        }
        let p_min = probabilities.iter().copied().fold(f64::INFINITY, f64::min);
        self.check(mu, ProductBound::MinProbability { p_min })
    }

    fn check(&self, mu: f64, bound: ProductBound) -> ValidationReport {
        let (a, b, r) = (self.a, self.b, self.r);
        let mut checks = vec![
            Condition::new("a>0", a > 0.0, format!("a = {a}")),
            Condition::new("b>0", b > 0.0, format!("b = {b}")),
            Condition::new("a+b<1", a + b < 1.0, format!("a + b = {}", a + b)),
            Condition::new("b<a", b < a, format!("b = {b}, a = {a}")),
            Condition::new("a>0.5", a > 0.5, format!("a = {a}")),
            Condition::new("r<1", r < 1.0, format!("r = {r}")),
            Condition::new("a*r<1", a * r < 1.0, format!("a * r = {}", a * r)),
        ];
        let product = self.gamma0 * self.eta0;
        let (name, limit) = match bound {
            ProductBound::Uniform { d } => ("gamma0*eta0<d/mu", d as f64 / mu),
            ProductBound::MinProbability { p_min } => {
                ("gamma0*eta0<1/(mu*p_min)", 1.0 / (mu * p_min))
            }
        };
        checks.push(Condition::new(
            name,
            mu > 0.0 && product < limit,
            format!("gamma0 * eta0 = {product}, limit = {limit}"),
        ));
        checks.push(match self.delta {
            Some(delta) => Condition::new(
                "delta in (0,0.5)",
                delta > 0.0 && delta < 0.5,
                format!("delta = {delta}"),
            ),
            None => Condition {
                name: "delta in (0,0.5)".into(),
                status: CheckStatus::NotApplicable,
                detail: "delta not set".into(),
            },
        });
        ValidationReport { checks }
    }
}

fn check_positive(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!(
            "{name} must be positive and finite, got {v}"
        )))
    }
}

enum ProductBound {
    Uniform { d: usize },
    MinProbability { p_min: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CheckStatus {
    Pass,
    Fail,
    NotApplicable,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Condition {
    pub name: String,
    pub status: CheckStatus,
    pub detail: String,
}

impl Condition {
    fn new(name: &str, ok: bool, detail: String) -> Self {
        Self {
            name: name.into(),
            status: if ok { CheckStatus::Pass } else { CheckStatus::Fail },
            detail,
        }
    }

    pub fn passed(&self) -> bool {
        self.status != CheckStatus::Fail
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValidationReport {
    pub checks: Vec<Condition>,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(Condition::passed)
    }

    pub fn failures(&self) -> Vec<String> {
        self.checks
            .iter()
            .filter(|c| !c.passed())
            .map(|c| c.name.clone())
            .collect()
    }

    pub fn status_of(&self, name: &str) -> Option<CheckStatus> {
        self.checks.iter().find(|c| c.name == name).map(|c| c.status)
    }

    pub fn into_result(self) -> Result<Self> {
        if self.passed() {
            Ok(self)
        } else {
            Err(Error::InvalidSchedule(self.failures()))
        }
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for c in &self.checks {
            let tag = match c.status {
                CheckStatus::Pass => "PASS",
                CheckStatus::Fail => "FAIL",
                CheckStatus::NotApplicable => "N/A ",
            };
            writeln!(f, "{tag} {:<26} {}", c.name, c.detail)?;
        }
        write!(f, "overall: {}", if self.passed() { "PASS" } else { "FAIL" })
    }
}
