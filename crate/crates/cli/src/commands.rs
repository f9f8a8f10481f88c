//! The four subcommands as library functions returning their outputs.

use std::time::Instant;

use anyhow::{anyhow, bail, Result};
use qpd_strat::allocation::{
    neyman_allocate, residual_hamilton_allocate, truncation_bias_bound, variance_certificate, AllocationPlan,
};
use qpd_strat::circuits::{CircuitEvaluator, InstanceSpec};
use qpd_strat::counts::{cached_state_count, concentration_profile, stratum_count, ConcentrationProfile, StratumTable};
use qpd_strat::numfmt::sig17;
use qpd_strat::oracle::{enumerate_means, Statistic, DEFAULT_ENUMERATION_CAP};
use qpd_strat::parity::ParityTable;
use qpd_strat::rng::mix_key;
use qpd_strat::sampling::{
    run_naive, run_stratified, variance_ratio, BootstrapOptions, EstimateReport, MeasurementModel,
    OutcomeEvaluator, VarianceRatio, CSV_HEADER,
};
use qpd_strat::strata::Stratification;
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{Design, ExperimentConfig};

/// Stream key for the Neyman pilot run.
const PILOT_KEY: u64 = 0x7069_6c6f;

/// Run CSV header: the estimate columns plus instance shape.
pub fn run_csv_header() -> String {
    format!("{CSV_HEADER},L,nu,d,statistic")
}

pub const RATIO_HEADER: &str = "instance,L,design,model,R,seed,K,rho,ci_lo,ci_hi";
pub const ERROR_HEADER: &str = "instance,L,design,model,seed,error";

pub struct DpWeightsOutput {
    /// Stratum and cached-state counts, computed before the DP runs.
    pub preflight: String,
    /// `m_1,…,m_d,w_m` rows in lexicographic order.
    pub weights_csv: String,
    pub profile: ConcentrationProfile,
}

pub fn dp_weights(spec: &InstanceSpec, q: f64) -> Result<DpWeightsOutput> {
    let circuit = spec.build()?;
    let qpd = circuit.qpd();
    let (nu, d) = (qpd.nu(), qpd.width());
    let preflight = format!(
        "{}: nu={nu} d={d} strata={} cached_states={}",
        spec.label(),
        stratum_count(nu, d)?,
        cached_state_count(nu, d)?
    );
    let table = StratumTable::build(qpd)?;
    let profile = concentration_profile(table.keys(), table.weights(), q)?;
    Ok(DpWeightsOutput { preflight, weights_csv: table.weights_csv(), profile })
}

#[derive(Debug, Clone, Serialize)]
pub struct ModelVariances {
    pub model: String,
    pub var_naive: f64,
    pub var_counts: f64,
    pub var_parity: f64,
    pub var_full: f64,
    pub r2_counts: Option<f64>,
    pub rho_counts: Option<f64>,
    pub r2_parity: Option<f64>,
    pub rho_parity: Option<f64>,
    pub hierarchy_ordered: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct EnumerateReport {
    pub instance: String,
    pub nu: usize,
    pub d: usize,
    pub configurations: u128,
    pub mu: f64,
    pub g1norm: f64,
    pub models: Vec<ModelVariances>,
    /// Wall time of enumeration and moment computation, seconds.
    #[serde(skip)]
    pub runtime: f64,
    /// `m1,…,md,w,mu,sigma2` per counts stratum, one block per model.
    #[serde(skip)]
    pub moments_csv: Vec<(String, String)>,
}

pub fn enumerate(spec: &InstanceSpec, models: &[MeasurementModel]) -> Result<EnumerateReport> {
    let start = Instant::now();
    let circuit = spec.build()?;
    let eval = CircuitEvaluator::with_capacity(circuit, 0);
    let en = enumerate_means(&eval, DEFAULT_ENUMERATION_CAP)?;
    let qpd = eval.qpd();
    let mut rows = Vec::new();
    let mut moments_csv = Vec::new();
    for &model in models {
        let h = en.hierarchy(model)?;
        let counts = en.explained_variance(Statistic::Counts, model).ok();
        let parity = en.explained_variance(Statistic::Parity, model).ok();
        rows.push(ModelVariances {
            model: model.to_string(),
            var_naive: h.naive,
            var_counts: h.counts,
            var_parity: h.parity,
            var_full: h.full,
            r2_counts: counts.map(|e| e.r2),
            rho_counts: counts.map(|e| e.rho),
            r2_parity: parity.map(|e| e.r2),
            rho_parity: parity.map(|e| e.rho),
            hierarchy_ordered: h.is_ordered(1e-12),
        });
        moments_csv.push((model.to_string(), en.stratum_moments(Statistic::Counts, model)?.to_csv()));
    }
    Ok(EnumerateReport {
        instance: spec.label(),
        nu: qpd.nu(),
        d: qpd.width(),
        configurations: qpd.configuration_count().unwrap_or(0),
        mu: en.mu(),
        g1norm: en.norm(),
        models: rows,
        runtime: start.elapsed().as_secs_f64(),
        moments_csv,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct Certificate {
    pub instance: String,
    #[serde(rename = "K")]
    pub k: usize,
    pub statistic: String,
    pub plan: serde_json::Value,
    pub cert_var: f64,
    pub bias_bound: f64,
    pub w_star: f64,
    #[serde(rename = "B")]
    pub bound: f64,
}

/// Residual Hamilton plan and apportionment certificate for `statistic`
/// (`counts` or `parity`). `bound` defaults to `∥g∥₁`.
pub fn certify(spec: &InstanceSpec, k: usize, statistic: &str, bound: Option<f64>) -> Result<Certificate> {
    let circuit = spec.build()?;
    let qpd = circuit.qpd();
    let b = bound.unwrap_or_else(|| qpd.norm());
    let (keys, w) = match statistic {
        "counts" => {
            let t = StratumTable::build(qpd)?;
            (t.keys().to_vec(), t.weights().to_vec())
        }
        "parity" => {
            let t = ParityTable::build(qpd)?;
            (t.keys().to_vec(), t.weights().to_vec())
        }
        other => bail!("unknown statistic {other:?}"),
    };
    let plan = residual_hamilton_allocate(&w, k)?;
    Ok(Certificate {
        instance: spec.label(),
        k,
        statistic: statistic.into(),
        plan: serde_json::from_str(&plan.to_json(&keys)?)?,
        cert_var: variance_certificate(&plan, &w, b)?,
        bias_bound: truncation_bias_bound(plan.dropped_mass, b),
        w_star: plan.dropped_mass,
        bound: b,
    })
}

/// One completed `(L, design, model, seed)` cell.
#[derive(Debug, Clone)]
pub struct RunRow {
    pub instance: String,
    pub depth: usize,
    pub nu: usize,
    pub d: usize,
    pub g1norm: f64,
    pub design: Design,
    pub report: EstimateReport,
}

impl RunRow {
    pub fn csv_line(&self) -> String {
        format!(
            "{},{},{},{},{}",
            self.report.csv_row(&self.instance, self.g1norm),
            self.depth,
            self.nu,
            self.d,
            self.design.statistic()
        )
    }

    fn sort_key(&self) -> (usize, Design, u64, u64) {
        (self.depth, self.design, model_rank(self.report.model), self.report.seed)
    }
}

#[derive(Debug, Clone)]
pub struct RatioRow {
    pub instance: String,
    pub depth: usize,
    pub design: Design,
    pub model: MeasurementModel,
    pub seed: u64,
    pub k: usize,
    pub ratio: VarianceRatio,
}

impl RatioRow {
    pub fn csv_line(&self) -> String {
        let model = match self.model {
            MeasurementModel::Oracle => "oracle",
            MeasurementModel::Shots(_) => "shots",
        };
        format!(
            "{},{},{},{model},{},{},{},{},{},{}",
            self.instance,
            self.depth,
            self.design,
            self.model.r_label(),
            self.seed,
            self.k,
            sig17(self.ratio.rho),
            sig17(self.ratio.ci_lo),
            sig17(self.ratio.ci_hi)
        )
    }
}

#[derive(Debug, Clone)]
pub struct ErrorRecord {
    pub instance: String,
    pub depth: usize,
    pub design: Design,
    pub model: String,
    pub seed: u64,
    pub error: String,
}

impl ErrorRecord {
    pub fn csv_line(&self) -> String {
        let msg = self.error.replace(['\n', '\r'], " ").replace('"', "'");
        format!("{},{},{},{},{},\"{msg}\"", self.instance, self.depth, self.design, self.model, self.seed)
    }
}

#[derive(Debug, Clone, Default)]
pub struct RunOutput {
    pub rows: Vec<RunRow>,
    pub ratios: Vec<RatioRow>,
    pub errors: Vec<ErrorRecord>,
}

impl RunOutput {
    pub fn csv(&self) -> String {
        lines(run_csv_header(), self.rows.iter().map(RunRow::csv_line))
    }

    pub fn ratios_csv(&self) -> String {
        lines(RATIO_HEADER.into(), self.ratios.iter().map(RatioRow::csv_line))
    }

    pub fn errors_csv(&self) -> String {
        lines(ERROR_HEADER.into(), self.errors.iter().map(ErrorRecord::csv_line))
    }
}

fn lines(header: String, rows: impl Iterator<Item = String>) -> String {
    let mut out = header;
    out.push('\n');
    for r in rows {
        out.push_str(&r);
        out.push('\n');
    }
    out
}

fn model_rank(m: MeasurementModel) -> u64 {
    match m {
        MeasurementModel::Oracle => 0,
        MeasurementModel::Shots(r) => r as u64,
    }
}

/// Per-depth state shared by all cells at that depth.
struct DepthContext {
    spec: InstanceSpec,
    eval: CircuitEvaluator,
    counts: Option<StratumTable>,
    parity: Option<ParityTable>,
}

impl DepthContext {
    fn new(spec: InstanceSpec, designs: &[Design]) -> Result<Self> {
        let eval = CircuitEvaluator::new(spec.build()?);
        let qpd = eval.qpd();
        let counts = if designs.iter().any(|d| matches!(d, Design::Counts | Design::Neyman)) {
            Some(StratumTable::build(qpd)?)
        } else {
            None
        };
        let parity = if designs.contains(&Design::Parity) { Some(ParityTable::build(qpd)?) } else { None };
        Ok(Self { spec, eval, counts, parity })
    }

    fn run_cell(&self, design: Design, model: MeasurementModel, seed: u64, k: usize, boot: BootstrapOptions) -> Result<EstimateReport> {
        let eval = &self.eval;
        let report = match design {
            Design::Naive => run_naive(eval, k, model, seed, boot)?.1,
            Design::Counts => {
                let t = self.counts.as_ref().ok_or_else(|| anyhow!("counts table missing"))?;
                let plan = residual_hamilton_allocate(t.weights(), k)?;
                run_stratified(t, &plan, eval, model, seed, design.name(), boot)?.1
            }
            Design::Parity => {
                let t = self.parity.as_ref().ok_or_else(|| anyhow!("parity table missing"))?;
                let plan = residual_hamilton_allocate(t.weights(), k)?;
                run_stratified(t, &plan, eval, model, seed, design.name(), boot)?.1
            }
            Design::Neyman => {
                let t = self.counts.as_ref().ok_or_else(|| anyhow!("counts table missing"))?;
                let plan = neyman_plan(t, eval, model, seed, k, boot.level)?;
                run_stratified(t, &plan, eval, model, seed, design.name(), boot)?.1
            }
        };
        Ok(report)
    }
}

/// Neyman plan from a proportional pilot of `K/4` draws on an independent
/// stream. Strata without two pilot draws get the pooled within-stratum
/// standard deviation; if every estimate is zero the plan is proportional.
pub fn neyman_plan<S: Stratification, E: OutcomeEvaluator>(
    strat: &S,
    eval: &E,
    model: MeasurementModel,
    seed: u64,
    k: usize,
    level: f64,
) -> Result<AllocationPlan> {
    let w = strat.weights();
    let pilot = residual_hamilton_allocate(w, (k / 4).max(2))?;
    let pilot_seed = mix_key(&[seed, PILOT_KEY]);
    let (groups, _) = run_stratified(
        strat,
        &pilot,
        eval,
        model,
        pilot_seed,
        "pilot",
        BootstrapOptions { resamples: 0, level },
    )?;
    let mut sigma = vec![f64::NAN; w.len()];
    for ((s, _), g) in pilot.retained().zip(&groups) {
        if g.samples.len() >= 2 {
            sigma[s] = g.sample_variance().sqrt();
        }
    }
    let (num, den) = groups
        .iter()
        .filter(|g| g.samples.len() >= 2)
        .fold((0.0, 0.0), |(a, b), g| {
            let dof = (g.samples.len() - 1) as f64;
            (a + dof * g.sample_variance(), b + dof)
        });
    let pooled = if den > 0.0 { (num / den).sqrt() } else { 0.0 };
    for x in sigma.iter_mut().filter(|x| x.is_nan()) {
        *x = pooled;
    }
    if w.iter().zip(&sigma).all(|(a, b)| a * b == 0.0) {
        return Ok(residual_hamilton_allocate(w, k)?);
    }
    Ok(neyman_allocate(w, &sigma, k)?)
}

/// Runs every `(L, design, model, seed)` cell. Cells run in parallel; rows
/// come back sorted by depth, design, model and seed. Failed cells become
/// error records instead of aborting the sweep.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunOutput> {
    cfg.validate()?;
    let models = cfg.parsed_models()?;
    let boot = BootstrapOptions { resamples: cfg.b, level: cfg.level };
    let mut out = RunOutput::default();
    for spec in cfg.instances() {
        let label = spec.label();
        let ctx = match DepthContext::new(spec.clone(), &cfg.designs) {
            Ok(ctx) => ctx,
            Err(e) => {
                for &design in &cfg.designs {
                    for m in &models {
                        for &seed in &cfg.seeds {
                            out.errors.push(ErrorRecord {
                                instance: label.clone(),
                                depth: spec.depth,
                                design,
                                model: m.to_string(),
                                seed,
                                error: format!("{e:#}"),
                            });
                        }
                    }
                }
                continue;
            }
        };
        let cells: Vec<(Design, MeasurementModel, u64)> = cfg
            .designs
            .iter()
            .flat_map(|&d| models.iter().flat_map(move |&m| cfg.seeds.iter().map(move |&s| (d, m, s))))
            .collect();
        let results: Vec<Result<EstimateReport>> =
            cells.par_iter().map(|&(d, m, s)| ctx.run_cell(d, m, s, cfg.k, boot)).collect();
        let qpd = ctx.eval.qpd();
        for ((design, model, seed), res) in cells.into_iter().zip(results) {
            match res {
                Ok(report) => out.rows.push(RunRow {
                    instance: label.clone(),
                    depth: ctx.spec.depth,
                    nu: qpd.nu(),
                    d: qpd.width(),
                    g1norm: qpd.norm(),
                    design,
                    report,
                }),
                Err(e) => out.errors.push(ErrorRecord {
                    instance: label.clone(),
                    depth: ctx.spec.depth,
                    design,
                    model: model.to_string(),
                    seed,
                    error: format!("{e:#}"),
                }),
            }
        }
    }
    out.rows.sort_by_key(RunRow::sort_key);
    out.ratios = ratio_rows(&out.rows, cfg.level, &mut out.errors);
    Ok(out)
}

fn ratio_rows(rows: &[RunRow], level: f64, errors: &mut Vec<ErrorRecord>) -> Vec<RatioRow> {
    let mut ratios = Vec::new();
    for r in rows.iter().filter(|r| r.design != Design::Naive) {
        let naive = rows.iter().find(|n| {
            n.design == Design::Naive
                && n.depth == r.depth
                && n.report.model == r.report.model
                && n.report.seed == r.report.seed
        });
        let Some(naive) = naive else { continue };
        match variance_ratio(&r.report, &naive.report, level) {
            Ok(ratio) => ratios.push(RatioRow {
                instance: r.instance.clone(),
                depth: r.depth,
                design: r.design,
                model: r.report.model,
                seed: r.report.seed,
                k: r.report.k,
                ratio,
            }),
            Err(e) => errors.push(ErrorRecord {
                instance: r.instance.clone(),
                depth: r.depth,
                design: r.design,
                model: r.report.model.to_string(),
                seed: r.report.seed,
                error: format!("ratio: {e}"),
            }),
        }
    }
    ratios
}
