//! Naïve and stratified Monte Carlo designs, plug-in variances, bootstrap
//! bands and variance ratios.
//!
//! Draw `j` of a group always uses the stream `(seed, group key, j)`, so
//! reports are bit-identical for any number of worker threads.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::allocation::AllocationPlan;
use crate::error::{QpdError, Result};
use crate::numfmt::sig17;
use crate::qpd::{sample_categorical, Configuration, ProductQpd};
use crate::rng::{keys, mix_key, substream, Stream};
use crate::strata::Stratification;

/// How a realised configuration is turned into an outcome.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum MeasurementModel {
    /// Exact conditional mean `µ_ℓ` (the `R → ∞` limit).
    Oracle,
    /// Average of `R` single-shot `±1` outcomes.
    Shots(u32),
}

impl MeasurementModel {
    pub fn shots(r: u32) -> Result<Self> {
        if r == 0 {
            return Err(QpdError::InvalidArgument("shot count must be at least 1".into()));
        }
        Ok(MeasurementModel::Shots(r))
    }

    /// `"inf"` for the oracle, otherwise `R`.
    pub fn r_label(&self) -> String {
        match self {
            MeasurementModel::Oracle => "inf".into(),
            MeasurementModel::Shots(r) => r.to_string(),
        }
    }
}

impl fmt::Display for MeasurementModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MeasurementModel::Oracle => write!(f, "oracle"),
            MeasurementModel::Shots(r) => write!(f, "shots:{r}"),
        }
    }
}

impl FromStr for MeasurementModel {
    type Err = QpdError;

    /// Accepts `oracle`, `shots:R` and `shots` (one shot).
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim().to_ascii_lowercase();
        match s.as_str() {
            "oracle" => Ok(MeasurementModel::Oracle),
            "shots" | "single-shot" => Ok(MeasurementModel::Shots(1)),
            _ => {
                let r = s
                    .strip_prefix("shots:")
                    .and_then(|r| r.parse::<u32>().ok())
                    .ok_or_else(|| QpdError::InvalidArgument(format!("unknown measurement model {s:?}")))?;
                MeasurementModel::shots(r)
            }
        }
    }
}

/// Maps a configuration to a random outcome `Y` that already carries the
/// QPD weight `w(ℓ)`.
pub trait OutcomeEvaluator: Sync {
    fn qpd(&self) -> &ProductQpd;

    /// `µ_ℓ`, the exact mean of the observable in the circuit variant `ℓ`.
    fn conditional_mean(&self, config: &Configuration) -> Result<f64>;

    /// Whether single-shot outcomes are `±1`.
    fn pauli_valued(&self) -> bool {
        true
    }

    /// `∥O∥_∞`.
    fn observable_norm(&self) -> f64 {
        1.0
    }

    fn outcome(&self, config: &Configuration, model: MeasurementModel, rng: &mut Stream) -> Result<f64> {
        let w = self.qpd().config_weight(config)?;
        let mu = self.conditional_mean(config)?;
        let y = match model {
            MeasurementModel::Oracle => w * mu,
            MeasurementModel::Shots(r) => {
                if !self.pauli_valued() {
                    return Err(QpdError::InvalidArgument("shot models need a Pauli observable".into()));
                }
                let p_plus = ((1.0 + mu) / 2.0).clamp(0.0, 1.0);
                let plus = (0..r).filter(|_| rng.gen::<f64>() < p_plus).count() as f64;
                w * (2.0 * plus - r as f64) / r as f64
            }
        };
        let bound = self.observable_norm() * self.qpd().norm();
        if y.abs() > bound * (1.0 + 1e-9) {
            return Err(QpdError::Simulation(format!("outcome {y} exceeds the bound {bound}")));
        }
        Ok(y)
    }
}

/// Evaluator backed by a closure `ℓ ↦ µ_ℓ`.
pub struct FnEvaluator<F> {
    qpd: ProductQpd,
    mean: F,
    pauli: bool,
}

impl<F: Fn(&Configuration) -> f64 + Sync> FnEvaluator<F> {
    /// `mean` must return values in `[−1, 1]` when `pauli` is set.
    pub fn new(qpd: ProductQpd, mean: F, pauli: bool) -> Self {
        Self { qpd, mean, pauli }
    }
}

impl<F: Fn(&Configuration) -> f64 + Sync> OutcomeEvaluator for FnEvaluator<F> {
    fn qpd(&self) -> &ProductQpd {
        &self.qpd
    }

    fn conditional_mean(&self, config: &Configuration) -> Result<f64> {
        Ok((self.mean)(config))
    }

    fn pauli_valued(&self) -> bool {
        self.pauli
    }

    fn observable_norm(&self) -> f64 {
        if self.pauli {
            1.0
        } else {
            f64::INFINITY
        }
    }
}

/// Outcomes of one stratum (or the whole sample for the naïve design),
/// entering the estimator as `coefficient · mean(samples)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleGroup {
    pub label: String,
    pub coefficient: f64,
    pub samples: Vec<f64>,
}

impl SampleGroup {
    pub fn mean(&self) -> f64 {
        self.samples.iter().sum::<f64>() / self.samples.len() as f64
    }

    /// Unbiased sample variance, zero below two samples.
    pub fn sample_variance(&self) -> f64 {
        sample_variance(&self.samples)
    }
}

fn sample_variance(x: &[f64]) -> f64 {
    if x.len() < 2 {
        return 0.0;
    }
    let m = x.iter().sum::<f64>() / x.len() as f64;
    x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (x.len() - 1) as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupDiagnostics {
    pub label: String,
    pub weight: f64,
    pub draws: usize,
    pub mean: f64,
    pub sample_variance: f64,
    /// Fewer than two draws: the group adds no variance term.
    pub flagged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateReport {
    pub design: String,
    pub model: MeasurementModel,
    #[serde(rename = "K")]
    pub k: usize,
    pub seed: u64,
    pub mean: f64,
    /// Plug-in variance of the mean estimator.
    pub var_hat: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    pub groups: Vec<GroupDiagnostics>,
    /// Bootstrap replicates of `var_hat`, in resample order.
    #[serde(skip)]
    pub bootstrap: Vec<f64>,
}

pub const CSV_HEADER: &str = "instance,design,model,K,R,seed,mean,var_hat,ci_lo,ci_hi,g1norm";

impl EstimateReport {
    /// One row in the [`CSV_HEADER`] layout.
    pub fn csv_row(&self, instance: &str, g1norm: f64) -> String {
        let model = match self.model {
            MeasurementModel::Oracle => "oracle",
            MeasurementModel::Shots(_) => "shots",
        };
        format!(
            "{instance},{},{model},{},{},{},{},{},{},{},{}",
            self.design,
            self.k,
            self.model.r_label(),
            self.seed,
            sig17(self.mean),
            sig17(self.var_hat),
            sig17(self.ci_lo),
            sig17(self.ci_hi),
            sig17(g1norm)
        )
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Bootstrap settings for a run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BootstrapOptions {
    /// Number of resamples; zero skips the bootstrap.
    pub resamples: usize,
    pub level: f64,
}

impl Default for BootstrapOptions {
    fn default() -> Self {
        Self { resamples: 1024, level: 0.95 }
    }
}

/// `(Σ c_g ȳ_g, Σ c_g² s_g² / n_g)`.
pub fn plug_in(groups: &[SampleGroup]) -> (f64, f64) {
    let mean = groups.iter().map(|g| g.coefficient * g.mean()).sum();
    let var = groups
        .iter()
        .map(|g| g.coefficient * g.coefficient * g.sample_variance() / g.samples.len() as f64)
        .sum();
    (mean, var)
}

fn design_key(design: &str) -> u64 {
    mix_key(&design.bytes().map(u64::from).collect::<Vec<_>>())
}

/// Percentile interval of `stats` at `level`: indices `⌊(α/2)B⌋` and
/// `⌈(1−α/2)B⌉ − 1` of the sorted values, `α = 1 − level`.
pub fn percentile_interval(stats: &[f64], level: f64) -> Result<(f64, f64)> {
    if stats.is_empty() {
        return Err(QpdError::InvalidArgument("no bootstrap statistics".into()));
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(QpdError::InvalidArgument(format!("confidence level {level} outside (0, 1)")));
    }
    let mut sorted = stats.to_vec();
    sorted.sort_by(f64::total_cmp);
    let b = sorted.len() as f64;
    let alpha = 1.0 - level;
    let lo = ((alpha / 2.0 * b).floor() as usize).min(sorted.len() - 1);
    let hi = (((1.0 - alpha / 2.0) * b).ceil() as usize).clamp(1, sorted.len()) - 1;
    Ok((sorted[lo], sorted[hi]))
}

/// Within-group nonparametric bootstrap of the plug-in variance. Returns the
/// percentile interval and the replicates in resample order.
pub fn bootstrap_variance_ci(
    groups: &[SampleGroup],
    resamples: usize,
    level: f64,
    seed: u64,
    stream_key: u64,
) -> Result<((f64, f64), Vec<f64>)> {
    if resamples == 0 {
        return Err(QpdError::InvalidArgument("bootstrap needs at least one resample".into()));
    }
    let key = mix_key(&[keys::BOOTSTRAP, stream_key]);
    let stats: Vec<f64> = (0..resamples)
        .into_par_iter()
        .map(|b| {
            let mut rng = substream(seed, key, b as u64);
            let mut buf = Vec::new();
            groups
                .iter()
                .map(|g| {
                    let n = g.samples.len();
                    let s2 = if n < 2 {
                        0.0
                    } else {
                        buf.clear();
                        buf.extend((0..n).map(|_| g.samples[rng.gen_range(0..n)]));
                        sample_variance(&buf)
                    };
                    g.coefficient * g.coefficient * s2 / n as f64
                })
                .sum()
        })
        .collect();
    Ok((percentile_interval(&stats, level)?, stats))
}

fn finish_report(
    design: &str,
    model: MeasurementModel,
    k: usize,
    seed: u64,
    groups: &[SampleGroup],
    boot: BootstrapOptions,
) -> Result<EstimateReport> {
    let (mean, var_hat) = plug_in(groups);
    let (ci, bootstrap) = if boot.resamples > 0 {
        bootstrap_variance_ci(groups, boot.resamples, boot.level, seed, design_key(design))?
    } else {
        ((var_hat, var_hat), Vec::new())
    };
    let diagnostics = groups
        .iter()
        .map(|g| GroupDiagnostics {
            label: g.label.clone(),
            weight: g.coefficient,
            draws: g.samples.len(),
            mean: g.mean(),
            sample_variance: g.sample_variance(),
            flagged: g.samples.len() < 2,
        })
        .collect();
    Ok(EstimateReport {
        design: design.to_string(),
        model,
        k,
        seed,
        mean,
        var_hat,
        ci_lo: ci.0,
        ci_hi: ci.1,
        groups: diagnostics,
        bootstrap,
    })
}

/// `K` i.i.d. draws from `p(ℓ)`. Returns the outcome groups with the report.
pub fn run_naive<E: OutcomeEvaluator + ?Sized>(
    eval: &E,
    k: usize,
    model: MeasurementModel,
    seed: u64,
    boot: BootstrapOptions,
) -> Result<(Vec<SampleGroup>, EstimateReport)> {
    if k < 2 {
        return Err(QpdError::InvalidArgument(format!("naive design needs K >= 2, got {k}")));
    }
    let qpd = eval.qpd();
    let samples = (0..k)
        .into_par_iter()
        .map(|j| {
            let mut rng = substream(seed, keys::NAIVE, j as u64);
            let config = qpd.sample_naive(&mut rng);
            eval.outcome(&config, model, &mut rng)
        })
        .collect::<Result<Vec<f64>>>()?;
    let groups = vec![SampleGroup { label: "all".into(), coefficient: 1.0, samples }];
    let report = finish_report("naive", model, k, seed, &groups, boot)?;
    Ok((groups, report))
}

fn key_label(key: &[u32]) -> String {
    key.iter().map(|x| x.to_string()).collect::<Vec<_>>().join("-")
}

/// Stratified design following `plan`: `K_s` conditional draws in each
/// retained stratum and `K_*` residual draws whose stratum label comes from
/// the mixture `q`. The estimator is `Σ_A w_s µ̂_s + w_* µ̂_*`.
pub fn run_stratified<S: Stratification, E: OutcomeEvaluator + ?Sized>(
    strat: &S,
    plan: &AllocationPlan,
    eval: &E,
    model: MeasurementModel,
    seed: u64,
    design: &str,
    boot: BootstrapOptions,
) -> Result<(Vec<SampleGroup>, EstimateReport)> {
    let w = strat.weights();
    plan.check(w)?;
    if plan.total < 1 {
        return Err(QpdError::InvalidArgument("stratified design needs K >= 1".into()));
    }
    let mut groups = Vec::new();
    for (s, ks) in plan.retained() {
        let samples = (0..ks)
            .into_par_iter()
            .map(|j| {
                let mut rng = substream(seed, keys::STRATUM_BASE + s as u64, j as u64);
                let config = strat.sample_in(s, &mut rng)?;
                eval.outcome(&config, model, &mut rng)
            })
            .collect::<Result<Vec<f64>>>()?;
        groups.push(SampleGroup { label: key_label(&strat.keys()[s]), coefficient: w[s], samples });
    }
    if plan.residual_count > 0 {
        let samples = (0..plan.residual_count)
            .into_par_iter()
            .map(|j| {
                let mut rng = substream(seed, keys::RESIDUAL, j as u64);
                let pick = sample_categorical(&plan.residual_mixture, None, &mut rng);
                let config = strat.sample_in(plan.dropped[pick], &mut rng)?;
                eval.outcome(&config, model, &mut rng)
            })
            .collect::<Result<Vec<f64>>>()?;
        groups.push(SampleGroup { label: "residual".into(), coefficient: plan.dropped_mass, samples });
    }
    let report = finish_report(design, model, plan.total, seed, &groups, boot)?;
    Ok((groups, report))
}

/// Ratio `ρ̂ = var_hat(strat) / var_hat(naive)` with a band from pairing the
/// two runs' bootstrap replicates index by index.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VarianceRatio {
    pub rho: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
}

pub fn variance_ratio(strat: &EstimateReport, naive: &EstimateReport, level: f64) -> Result<VarianceRatio> {
    if naive.var_hat == 0.0 {
        return Err(QpdError::ZeroVariance("naive variance estimate is zero".into()));
    }
    if strat.k != naive.k || strat.model != naive.model {
        return Err(QpdError::InvalidArgument("ratio needs runs at the same K and measurement model".into()));
    }
    let rho = strat.var_hat / naive.var_hat;
    if strat.bootstrap.is_empty() && naive.bootstrap.is_empty() {
        return Ok(VarianceRatio { rho, ci_lo: rho, ci_hi: rho });
    }
    if strat.bootstrap.len() != naive.bootstrap.len() {
        return Err(QpdError::InvalidArgument("bootstrap replicate counts differ".into()));
    }
    let ratios: Vec<f64> = strat.bootstrap.iter().zip(&naive.bootstrap).map(|(a, b)| a / b).collect();
    let (ci_lo, ci_hi) = percentile_interval(&ratios, level)?;
    Ok(VarianceRatio { rho, ci_lo, ci_hi })
}

/// `var_hat / ∥g∥₁²`.
pub fn normalized_absolute_variance(report: &EstimateReport, g1norm: f64) -> Result<f64> {
    if g1norm.is_nan() || g1norm <= 0.0 {
        return Err(QpdError::InvalidArgument(format!("1-norm must be positive, got {g1norm}")));
    }
    Ok(report.var_hat / (g1norm * g1norm))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::allocation::residual_hamilton_allocate;
    use crate::counts::StratumTable;

    fn toy_qpd() -> ProductQpd {
        ProductQpd::from_coeffs(vec![vec![0.8, -0.15, 0.05]; 4]).unwrap()
    }

    #[test]
    fn model_parsing() {
        assert_eq!("oracle".parse::<MeasurementModel>().unwrap(), MeasurementModel::Oracle);
        assert_eq!("shots:64".parse::<MeasurementModel>().unwrap(), MeasurementModel::Shots(64));
        assert_eq!("shots".parse::<MeasurementModel>().unwrap(), MeasurementModel::Shots(1));
        assert!("shots:0".parse::<MeasurementModel>().is_err());
        assert!("exact".parse::<MeasurementModel>().is_err());
    }

    #[test]
    fn constant_outcomes_have_zero_variance() {
        let q = ProductQpd::from_coeffs(vec![vec![0.3, 0.7]; 3]).unwrap();
        let e = FnEvaluator::new(q, |_| 0.25, true);
        let (_, r) = run_naive(&e, 50, MeasurementModel::Oracle, 1, BootstrapOptions::default()).unwrap();
        assert!((r.mean - 0.25).abs() < 1e-15);
        assert_eq!(r.var_hat, 0.0);
        assert_eq!((r.ci_lo, r.ci_hi), (0.0, 0.0));
        assert_eq!(normalized_absolute_variance(&r, 1.0).unwrap(), 0.0);
    }

    #[test]
    fn percentile_indices() {
        let stats: Vec<f64> = (0..1024).rev().map(|x| x as f64).collect();
        assert_eq!(percentile_interval(&stats, 0.95).unwrap(), (25.0, 998.0));
    }

    #[test]
    fn single_shot_outcomes_are_signed_norm() {
        let q = toy_qpd();
        let g = q.norm();
        let e = FnEvaluator::new(q, |c: &Configuration| 0.1 * c.indices()[0] as f64 - 0.05, true);
        let (groups, _) = run_naive(&e, 200, MeasurementModel::Shots(1), 3, BootstrapOptions { resamples: 0, level: 0.95 })
            .unwrap();
        assert!(groups[0].samples.iter().all(|y| (y.abs() - g).abs() < 1e-12));
    }

    #[test]
    fn sufficient_statistic_gives_zero_within_variance() {
        let q = toy_qpd();
        let table = StratumTable::build(&q).unwrap();
        let e = FnEvaluator::new(q.clone(), |c: &Configuration| {
            let ones = c.indices().iter().filter(|&&k| k == 1).count() as f64;
            0.2 * ones - 0.3
        }, true);
        let plan = residual_hamilton_allocate(table.weights(), 400).unwrap();
        // zero-coefficient-free instance, so the weighted outcome depends on
        // the configuration only through its counts
        let (_, r) = run_stratified(&table, &plan, &e, MeasurementModel::Oracle, 9, "stratified-counts", BootstrapOptions::default())
            .unwrap();
        assert!(r.var_hat < 1e-28);
    }

    #[test]
    fn deterministic_across_thread_counts() {
        let q = toy_qpd();
        let e = FnEvaluator::new(q.clone(), |c: &Configuration| ((c.code(3) % 7) as f64 - 3.0) / 4.0, true);
        let table = StratumTable::build(&q).unwrap();
        let plan = residual_hamilton_allocate(table.weights(), 64).unwrap();
        let run = || {
            let a = run_naive(&e, 64, MeasurementModel::Shots(4), 11, BootstrapOptions::default()).unwrap().1;
            let b = run_stratified(&table, &plan, &e, MeasurementModel::Shots(4), 11, "s", BootstrapOptions::default())
                .unwrap()
                .1;
            (a, b)
        };
        let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap().install(run);
        let many = rayon::ThreadPoolBuilder::new().num_threads(4).build().unwrap().install(run);
        assert_eq!(one, many);
        assert_eq!(one.0.bootstrap, many.0.bootstrap);
    }

    #[test]
    fn ratio_pairs_replicates() {
        let q = toy_qpd();
        let e = FnEvaluator::new(q.clone(), |c: &Configuration| ((c.code(3) % 5) as f64 - 2.0) / 2.0, true);
        let table = StratumTable::build(&q).unwrap();
        let plan = residual_hamilton_allocate(table.weights(), 128).unwrap();
        let (_, n) = run_naive(&e, 128, MeasurementModel::Oracle, 5, BootstrapOptions::default()).unwrap();
        let (_, s) =
            run_stratified(&table, &plan, &e, MeasurementModel::Oracle, 5, "s", BootstrapOptions::default()).unwrap();
        let r = variance_ratio(&s, &n, 0.95).unwrap();
        assert_eq!(r.rho, s.var_hat / n.var_hat);
        assert!(r.ci_lo <= r.ci_hi);
        let na = normalized_absolute_variance(&n, q.norm()).unwrap();
        let sa = normalized_absolute_variance(&s, q.norm()).unwrap();
        assert!((sa / na - r.rho).abs() < 1e-12);
        let mut zero = n.clone();
        zero.var_hat = 0.0;
        assert!(variance_ratio(&s, &zero, 0.95).is_err());
    }

    #[test]
    fn csv_row_layout() {
        let q = toy_qpd();
        let e = FnEvaluator::new(q.clone(), |_| 0.5, true);
        let (_, r) = run_naive(&e, 4, MeasurementModel::Shots(64), 2, BootstrapOptions { resamples: 8, level: 0.95 }).unwrap();
        let row = r.csv_row("toy", q.norm());
        assert_eq!(row.split(',').count(), CSV_HEADER.split(',').count());
        assert!(row.starts_with("toy,naive,shots,4,64,2,"));
    }
}
