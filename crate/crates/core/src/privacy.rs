//! zCDP accounting for Gaussian measurements.
//!
//! A Gaussian mechanism with L2 sensitivity `Δ` and noise scale `σ` is
//! `ρ = Δ²/(2σ²)`-zCDP; costs add under composition, and `ρ`-zCDP implies
//! `(ρ + 2√(ρ ln(1/δ)), δ)`-DP.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `ε` implied by `ρ`-zCDP at the given `δ`.
pub fn epsilon_from_rho(rho: f64, delta: f64) -> f64 {
    rho + 2.0 * (rho * (1.0 / delta).ln()).sqrt()
}

/// The `ρ` whose `(ε, δ)` conversion equals `epsilon` exactly.
///
/// With `s = √ρ` and `ℓ = ln(1/δ)`, `s² + 2√ℓ s − ε = 0` has the positive
/// root `s = √(ℓ + ε) − √ℓ`.
pub fn rho_from_epsilon(epsilon: f64, delta: f64) -> f64 {
    let l = (1.0 / delta).ln();
    // Rationalized form of √(ℓ+ε) − √ℓ avoids cancellation for small ε.
    let s = epsilon / ((l + epsilon).sqrt() + l.sqrt());
    s * s
}

/// Noise scale giving `rho`-zCDP for a query of L2 sensitivity `sensitivity`.
pub fn gaussian_sigma(sensitivity: f64, rho: f64) -> f64 {
    sensitivity / (2.0 * rho).sqrt()
}

/// Selection budget used for a given total budget when none is specified:
/// 1.0 for `ε ≥ 4`, 0.5 for `2 ≤ ε < 4`, and `ε/2` below that.
pub fn default_epsilon_select(epsilon_total: f64) -> f64 {
    if epsilon_total >= 4.0 {
        1.0
    } else if epsilon_total >= 2.0 {
        0.5
    } else {
        epsilon_total / 2.0
    }
}

/// `δ = 1/n²` for a training collection of `n` users.
pub fn default_delta(num_users: usize) -> f64 {
    let n = num_users.max(2) as f64;
    1.0 / (n * n)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrivacyBudget {
    pub epsilon_total: f64,
    pub delta: f64,
    /// Share of `epsilon_total` reserved for private selection.
    pub epsilon_select: f64,
}

impl PrivacyBudget {
    pub fn new(epsilon_total: f64, delta: f64, epsilon_select: f64) -> Result<Self> {
        let b = PrivacyBudget {
            epsilon_total,
            delta,
            epsilon_select,
        };
        b.check()?;
        Ok(b)
    }

    /// Budget with no selection share (the Direct mechanism).
    pub fn training_only(epsilon_total: f64, delta: f64) -> Result<Self> {
        Self::new(epsilon_total, delta, 0.0)
    }

    pub fn check(&self) -> Result<()> {
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::invalid(format!("delta {} not in (0, 1)", self.delta)));
        }
        if !(self.epsilon_total.is_finite() && self.epsilon_total > 0.0) {
            return Err(Error::invalid(format!(
                "epsilon_total {} must be positive",
                self.epsilon_total
            )));
        }
        if !(self.epsilon_select >= 0.0) {
            return Err(Error::invalid("epsilon_select must be non-negative"));
        }
        if self.epsilon_train() <= 0.0 {
            return Err(Error::Budget(format!(
                "training budget epsilon_total - epsilon_select = {} is not positive",
                self.epsilon_train()
            )));
        }
        Ok(())
    }

    pub fn epsilon_train(&self) -> f64 {
        self.epsilon_total - self.epsilon_select
    }

    pub fn rho_train(&self) -> f64 {
        rho_from_epsilon(self.epsilon_train(), self.delta)
    }

    pub fn rho_select(&self) -> f64 {
        if self.epsilon_select > 0.0 {
            rho_from_epsilon(self.epsilon_select, self.delta)
        } else {
            0.0
        }
    }
}

/// Per-query noise scale when the training budget is split uniformly over
/// `num_queries` measurements with L2 sensitivity 1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Calibration {
    pub rho_total: f64,
    pub rho_per_query: f64,
    pub sigma: f64,
}

pub fn calibrate_sigma(budget: &PrivacyBudget, num_queries: usize) -> Result<Calibration> {
    budget.check()?;
    if num_queries == 0 {
        return Err(Error::invalid("calibrate_sigma needs at least one query"));
    }
    let rho_total = budget.rho_train();
    let rho_per_query = rho_total / num_queries as f64;
    Ok(Calibration {
        rho_total,
        rho_per_query,
        sigma: gaussian_sigma(1.0, rho_per_query),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LedgerEntry {
    pub label: String,
    pub sensitivity: f64,
    pub sigma: f64,
    pub rho: f64,
}

/// Record of zCDP charges against a fixed cap.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BudgetLedger {
    pub delta: f64,
    pub rho_cap: f64,
    pub entries: Vec<LedgerEntry>,
}

/// Relative slack for floating-point summation of per-query charges.
const RHO_SLACK: f64 = 1e-12;

impl BudgetLedger {
    pub fn new(rho_cap: f64, delta: f64) -> Self {
        BudgetLedger {
            delta,
            rho_cap,
            entries: Vec::new(),
        }
    }

    pub fn spent(&self) -> f64 {
        self.entries.iter().map(|e| e.rho).sum()
    }

    pub fn epsilon_spent(&self) -> f64 {
        epsilon_from_rho(self.spent(), self.delta)
    }

    /// Charge a Gaussian measurement of the given sensitivity and noise scale.
    /// `sigma == 0` is exact release and is refused.
    pub fn charge(&mut self, label: impl Into<String>, sensitivity: f64, sigma: f64) -> Result<f64> {
        let label = label.into();
        if !(sigma > 0.0) {
            return Err(Error::Budget(format!("{label}: noiseless release is not private")));
        }
        let rho = sensitivity * sensitivity / (2.0 * sigma * sigma);
        let after = self.spent() + rho;
        if after > self.rho_cap * (1.0 + RHO_SLACK) {
            return Err(Error::Budget(format!(
                "{label}: charging rho {rho:.6e} would exceed cap {:.6e} (spent {:.6e})",
                self.rho_cap,
                self.spent()
            )));
        }
        self.entries.push(LedgerEntry {
            label,
            sensitivity,
            sigma,
            rho,
        });
        Ok(rho)
    }

    pub fn verify(&self) -> Result<()> {
        if self.spent() > self.rho_cap * (1.0 + RHO_SLACK) {
            return Err(Error::Budget(format!(
                "ledger spent {:.6e} exceeds cap {:.6e}",
                self.spent(),
                self.rho_cap
            )));
        }
        Ok(())
    }
}

/// The full release accounting: training and selection charged separately,
/// each at `δ`, so the claimed guarantee is `ε_train + ε_select`. Composing
/// the two ledgers in `ρ` instead gives `epsilon_composed`, which is never
/// larger because `ε(ρ)` is concave.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReleaseLedger {
    pub budget: PrivacyBudget,
    pub training: BudgetLedger,
    pub selection: Option<BudgetLedger>,
    pub notes: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ReleaseSummary {
    pub epsilon_train: f64,
    pub epsilon_select: f64,
    pub epsilon_claimed: f64,
    pub epsilon_composed: f64,
    pub rho_total: f64,
    pub delta: f64,
}

impl ReleaseLedger {
    pub fn summary(&self) -> ReleaseSummary {
        let d = self.budget.delta;
        let rho_train = self.training.spent();
        let rho_sel = self.selection.as_ref().map_or(0.0, BudgetLedger::spent);
        let epsilon_train = epsilon_from_rho(rho_train, d);
        let epsilon_select = if rho_sel > 0.0 { epsilon_from_rho(rho_sel, d) } else { 0.0 };
        ReleaseSummary {
            epsilon_train,
            epsilon_select,
            epsilon_claimed: epsilon_train + epsilon_select,
            epsilon_composed: epsilon_from_rho(rho_train + rho_sel, d),
            rho_total: rho_train + rho_sel,
            delta: d,
        }
    }

    /// Refuse release if any component overspent or the claim exceeds `ε_total`.
    pub fn verify(&self) -> Result<()> {
        self.training.verify()?;
        if let Some(s) = &self.selection {
            s.verify()?;
        }
        let s = self.summary();
        if s.epsilon_claimed > self.budget.epsilon_total * (1.0 + 1e-9) {
            return Err(Error::Budget(format!(
                "claimed epsilon {} exceeds budget {}",
                s.epsilon_claimed, self.budget.epsilon_total
            )));
        }
        Ok(())
    }
}
