//! Exact reference values by full enumeration of the configuration space:
//! `µ`, design variances for every measurement model, stratum moments,
//! explained variance and the exact variance of an integer allocation plan.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::allocation::AllocationPlan;
use crate::counts::counts_of;
use crate::error::{QpdError, Result};
use crate::numfmt::sig17;
use crate::qpd::{Configuration, ProductQpd};
use crate::sampling::{MeasurementModel, OutcomeEvaluator};
use crate::strata::StratumKey;

/// Default limit on `d^ν`.
pub const DEFAULT_ENUMERATION_CAP: u128 = 1 << 24;

const BLOCK: u64 = 4096;

/// Compensated running sum.
#[derive(Debug, Clone, Copy, Default)]
pub struct KahanSum {
    sum: f64,
    carry: f64,
}

impl KahanSum {
    pub fn add(&mut self, x: f64) {
        let y = x - self.carry;
        let t = self.sum + y;
        self.carry = (t - self.sum) - y;
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum
    }
}

/// One nonzero-coefficient configuration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnumeratedConfig {
    pub code: u64,
    pub coefficient: f64,
    pub mean: f64,
}

/// All configurations with `g(ℓ) ≠ 0` and their means, in mixed-radix order.
#[derive(Debug, Clone)]
pub struct Enumeration {
    qpd: ProductQpd,
    configs: Vec<EnumeratedConfig>,
    mu: f64,
    pauli: bool,
}

/// Enumerates every configuration and evaluates `µ_ℓ`.
pub fn enumerate_means<E: OutcomeEvaluator + ?Sized>(eval: &E, cap: u128) -> Result<Enumeration> {
    let qpd = eval.qpd().clone();
    let total = qpd.configuration_count().filter(|&c| c <= cap).ok_or(QpdError::EnumerationCap {
        required: qpd.configuration_count().unwrap_or(u128::MAX),
        cap,
    })? as u64;
    let (nu, width) = (qpd.nu(), qpd.width());
    let blocks: Vec<Vec<EnumeratedConfig>> = (0..total.div_ceil(BLOCK))
        .into_par_iter()
        .map(|b| {
            let mut out = Vec::new();
            for code in b * BLOCK..((b + 1) * BLOCK).min(total) {
                let config = Configuration::from_code(code, nu, width);
                let coefficient = qpd.coefficient(&config)?;
                if coefficient != 0.0 {
                    out.push(EnumeratedConfig { code, coefficient, mean: eval.conditional_mean(&config)? });
                }
            }
            Ok(out)
        })
        .collect::<Result<_>>()?;
    let configs: Vec<EnumeratedConfig> = blocks.into_iter().flatten().collect();
    let mut mu = KahanSum::default();
    for c in &configs {
        mu.add(c.coefficient * c.mean);
    }
    Ok(Enumeration { qpd, configs, mu: mu.value(), pauli: eval.pauli_valued() })
}

/// Partition of configurations used for exact stratum moments.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Statistic {
    /// The configuration itself.
    Full,
    Counts,
    Parity,
}

impl Statistic {
    pub fn name(&self) -> &'static str {
        match self {
            Statistic::Full => "full",
            Statistic::Counts => "counts",
            Statistic::Parity => "parity",
        }
    }

    pub fn key(&self, qpd: &ProductQpd, config: &Configuration) -> Result<StratumKey> {
        match self {
            Statistic::Full => Ok(config.indices().to_vec()),
            Statistic::Counts => Ok(counts_of(config, qpd.width())?.0),
            Statistic::Parity => {
                let mut plus = 0;
                for (i, &k) in config.indices().iter().enumerate() {
                    match qpd.local(i).sign(k as usize) {
                        1 => plus += 1,
                        -1 => {}
                        _ => return Err(QpdError::ZeroMassConfiguration { position: i }),
                    }
                }
                Ok(vec![plus, qpd.nu() as u32 - plus])
            }
        }
    }
}

/// Exact `{w_s, µ_s, σ_s²}` of `Y` under a measurement model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StratumMoments {
    pub keys: Vec<StratumKey>,
    pub weights: Vec<f64>,
    pub means: Vec<f64>,
    pub variances: Vec<f64>,
    /// Variances in `[−1e-12, 0)` that were clamped to zero.
    pub clamped: usize,
    pub mu: f64,
}

impl StratumMoments {
    /// `Σ_s w_s σ_s²`, the per-draw variance under proportional allocation.
    pub fn proportional_variance(&self) -> f64 {
        let mut acc = KahanSum::default();
        for (w, v) in self.weights.iter().zip(&self.variances) {
            acc.add(w * v);
        }
        acc.value()
    }

    /// `Σ_s w_s (µ_s − µ)²`.
    pub fn between_variance(&self) -> f64 {
        let mut acc = KahanSum::default();
        for (w, m) in self.weights.iter().zip(&self.means) {
            acc.add(w * (m - self.mu) * (m - self.mu));
        }
        acc.value()
    }

    /// Means and variances aligned with `keys`, zero for absent strata.
    pub fn aligned(&self, keys: &[StratumKey]) -> (Vec<f64>, Vec<f64>) {
        let index: BTreeMap<&StratumKey, usize> = self.keys.iter().enumerate().map(|(i, k)| (k, i)).collect();
        keys.iter()
            .map(|k| index.get(k).map_or((0.0, 0.0), |&i| (self.means[i], self.variances[i])))
            .unzip()
    }

    /// CSV dump `m1,…,md,w,mu,sigma2` with 17 significant digits.
    pub fn to_csv(&self) -> String {
        let d = self.keys.first().map_or(0, |k| k.len());
        let mut out: Vec<String> = (1..=d).map(|i| format!("m{i}")).collect();
        out.extend(["w".into(), "mu".into(), "sigma2".into()]);
        let mut text = out.join(",") + "\n";
        for i in 0..self.keys.len() {
            let mut row: Vec<String> = self.keys[i].iter().map(|x| x.to_string()).collect();
            row.extend([sig17(self.weights[i]), sig17(self.means[i]), sig17(self.variances[i])]);
            text.push_str(&row.join(","));
            text.push('\n');
        }
        text
    }
}

/// Exact design variances of the oracle-backed estimators.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExplainedVariance {
    /// `Var(E[Y|S]) / Var(Y)`.
    pub r2: f64,
    /// `Σ w_s σ_s² / Var(Y)`.
    pub rho: f64,
}

/// Proportional variances ordered from finest to coarsest statistic.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Hierarchy {
    pub full: f64,
    pub counts: f64,
    pub parity: f64,
    pub naive: f64,
}

impl Hierarchy {
    pub fn is_ordered(&self, slack: f64) -> bool {
        self.full <= self.counts + slack && self.counts <= self.parity + slack && self.parity <= self.naive + slack
    }
}

impl Enumeration {
    pub fn qpd(&self) -> &ProductQpd {
        &self.qpd
    }

    pub fn configs(&self) -> &[EnumeratedConfig] {
        &self.configs
    }

    /// `µ = Σ_ℓ g(ℓ) µ_ℓ`.
    pub fn mu(&self) -> f64 {
        self.mu
    }

    pub fn norm(&self) -> f64 {
        self.qpd.norm()
    }

    pub fn pauli_valued(&self) -> bool {
        self.pauli
    }

    pub fn configuration(&self, c: &EnumeratedConfig) -> Configuration {
        Configuration::from_code(c.code, self.qpd.nu(), self.qpd.width())
    }

    // E[Y² | ℓ] under the model.
    fn second_moment(&self, mean: f64, model: MeasurementModel) -> Result<f64> {
        let g2 = self.norm() * self.norm();
        match model {
            MeasurementModel::Oracle => Ok(g2 * mean * mean),
            MeasurementModel::Shots(r) => {
                if !self.pauli {
                    return Err(QpdError::InvalidArgument("shot models need a Pauli observable".into()));
                }
                Ok(g2 * (mean * mean + (1.0 - mean * mean) / r as f64))
            }
        }
    }

    /// Naïve per-draw variance `Var(Y)`.
    ///
    /// Oracle: `∥g∥₁ Σ|g(ℓ)|µ_ℓ² − µ²`. Shots(R): the oracle term plus
    /// `∥g∥₁² E_p[1 − µ_ℓ²] / R`, which is `∥g∥₁² − µ²` at `R = 1`.
    pub fn design_variance(&self, model: MeasurementModel) -> Result<f64> {
        let g = self.norm();
        let mut oracle = KahanSum::default();
        let mut shot = KahanSum::default();
        for c in &self.configs {
            let a = c.coefficient.abs();
            oracle.add(a * c.mean * c.mean);
            shot.add(a * (1.0 - c.mean * c.mean));
        }
        let mu2 = self.mu * self.mu;
        let oracle = g * oracle.value() - mu2;
        match model {
            MeasurementModel::Oracle => Ok(oracle),
            MeasurementModel::Shots(_) if !self.pauli => {
                Err(QpdError::InvalidArgument("shot models need a Pauli observable".into()))
            }
            MeasurementModel::Shots(1) => Ok(g * g - mu2),
            MeasurementModel::Shots(r) => Ok(oracle + g * shot.value() / r as f64),
        }
    }

    /// Exact moments for the partition induced by `statistic`.
    pub fn stratum_moments(&self, statistic: Statistic, model: MeasurementModel) -> Result<StratumMoments> {
        self.moments_by(|c| statistic.key(&self.qpd, c), model)
    }

    /// Exact moments for an arbitrary statistic `ℓ ↦ s`.
    pub fn moments_by<F>(&self, statistic: F, model: MeasurementModel) -> Result<StratumMoments>
    where
        F: Fn(&Configuration) -> Result<StratumKey>,
    {
        let g = self.norm();
        // key -> (Σp, Σp·y, Σp·E[Y²|ℓ])
        let mut acc: BTreeMap<StratumKey, [KahanSum; 3]> = BTreeMap::new();
        for c in &self.configs {
            let config = self.configuration(c);
            let p = c.coefficient.abs() / g;
            let y = g * c.coefficient.signum() * c.mean;
            let m2 = self.second_moment(c.mean, model)?;
            let e = acc.entry(statistic(&config)?).or_default();
            e[0].add(p);
            e[1].add(p * y);
            e[2].add(p * m2);
        }
        let mut out = StratumMoments {
            keys: Vec::with_capacity(acc.len()),
            weights: Vec::with_capacity(acc.len()),
            means: Vec::with_capacity(acc.len()),
            variances: Vec::with_capacity(acc.len()),
            clamped: 0,
            mu: self.mu,
        };
        for (key, [w, py, pm2]) in acc {
            let w = w.value();
            let mean = py.value() / w;
            let mut var = pm2.value() / w - mean * mean;
            if var < 0.0 {
                if var >= -1e-12 {
                    out.clamped += 1;
                }
                var = var.max(0.0);
            }
            out.keys.push(key);
            out.weights.push(w);
            out.means.push(mean);
            out.variances.push(var);
        }
        Ok(out)
    }

    /// `(R², ρ)` for a statistic; `ρ = 1 − R²` by the law of total variance.
    pub fn explained_variance(&self, statistic: Statistic, model: MeasurementModel) -> Result<ExplainedVariance> {
        let total = self.design_variance(model)?;
        if total <= 0.0 {
            return Err(QpdError::ZeroVariance("total design variance is zero".into()));
        }
        let m = self.stratum_moments(statistic, model)?;
        Ok(ExplainedVariance { r2: m.between_variance() / total, rho: m.proportional_variance() / total })
    }

    pub fn hierarchy(&self, model: MeasurementModel) -> Result<Hierarchy> {
        Ok(Hierarchy {
            full: self.stratum_moments(Statistic::Full, model)?.proportional_variance(),
            counts: self.stratum_moments(Statistic::Counts, model)?.proportional_variance(),
            parity: self.stratum_moments(Statistic::Parity, model)?.proportional_variance(),
            naive: self.design_variance(model)?,
        })
    }
}

/// Exact variance of the implemented estimator `Σ_A w_s µ̂_s + w_* µ̂_*`:
/// `Σ_A w_s²σ_s²/K_s + w_*²σ_*²/K_*` with
/// `σ_*² = Σ_D q(s)σ_s² + Σ_D q(s)(µ_s − µ̄_*)²`.
pub fn implemented_variance(plan: &AllocationPlan, weights: &[f64], means: &[f64], variances: &[f64]) -> Result<f64> {
    plan.check(weights)?;
    if means.len() != weights.len() || variances.len() != weights.len() {
        return Err(QpdError::PlanMismatch("moments are not aligned with the weights".into()));
    }
    let mut total = KahanSum::default();
    for (s, ks) in plan.retained() {
        total.add(weights[s] * weights[s] * variances[s] / ks as f64);
    }
    if plan.residual_count > 0 {
        let q = &plan.residual_mixture;
        let mean: f64 = plan.dropped.iter().zip(q).map(|(&s, &qs)| qs * means[s]).sum();
        let within: f64 = plan.dropped.iter().zip(q).map(|(&s, &qs)| qs * variances[s]).sum();
        let between: f64 = plan.dropped.iter().zip(q).map(|(&s, &qs)| qs * (means[s] - mean).powi(2)).sum();
        let ws = plan.dropped_mass;
        total.add(ws * ws * (within + between) / plan.residual_count as f64);
    }
    Ok(total.value())
}

/// `(1/K) Σ_s w_s σ_s²`.
pub fn proportional_estimator_variance(k: usize, weights: &[f64], variances: &[f64]) -> f64 {
    weights.iter().zip(variances).map(|(w, v)| w * v).sum::<f64>() / k as f64
}

/// Mean of the implemented estimator, `Σ_A w_s µ_s + w_* Σ_D q(s) µ_s`.
pub fn implemented_mean(plan: &AllocationPlan, weights: &[f64], means: &[f64]) -> f64 {
    let retained: f64 = plan.retained().map(|(s, _)| weights[s] * means[s]).sum();
    let residual: f64 = plan.dropped.iter().zip(&plan.residual_mixture).map(|(&s, &q)| q * means[s]).sum();
    retained + plan.dropped_mass * residual
}
