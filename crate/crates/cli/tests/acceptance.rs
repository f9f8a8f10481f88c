//! Acceptance suite: prints one PASS/FAIL line per criterion and exits
//! nonzero if any criterion fails outside the documented deviations.

use std::path::PathBuf;
use std::process::Command;
use std::time::Instant;

use anyhow::{anyhow, ensure, Result};
use qpd_strat::allocation::{residual_hamilton_allocate, variance_certificate};
use qpd_strat::circuits::{Boundary, CircuitEvaluator, InstanceSpec};
use qpd_strat::counts::{counts_of, StratumTable};
use qpd_strat::oracle::{
    enumerate_means, implemented_mean, implemented_variance, proportional_estimator_variance, Enumeration,
    Statistic, DEFAULT_ENUMERATION_CAP,
};
use qpd_strat::rng::{mix_key, substream};
use qpd_strat::sampling::{run_stratified, BootstrapOptions, FnEvaluator, MeasurementModel};
use qpd_strat::strata::Stratification;
use qpd_strat::{Configuration, ProductQpd};
use qpd_strat_cli::commands::{run_experiment, RunOutput};
use qpd_strat_cli::config::{Design, ExperimentConfig};
use rand::Rng;

const GOLDEN_NAIVE: f64 = 2.099e-2;
const GOLDEN_COUNTS: f64 = 8.246e-3;
const GOLDEN_PARITY: f64 = 8.404e-3;
const PEC_LEG_NORM: f64 = 1.0202703;
const DEPTHS: [usize; 3] = [2, 3, 4];

struct Outcome {
    pass: bool,
    /// Failure that is not a documented deviation.
    hard_fail: bool,
    detail: String,
}

impl Outcome {
    fn strict(pass: bool, detail: String) -> Self {
        Self { pass, hard_fail: !pass, detail }
    }
}

fn bin() -> PathBuf {
    PathBuf::from(env!("CARGO_BIN_EXE_qpd-strat"))
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs()
}

fn golden_enumeration() -> Result<Enumeration> {
    let eval = CircuitEvaluator::with_capacity(InstanceSpec::golden().build()?, 0);
    Ok(enumerate_means(&eval, DEFAULT_ENUMERATION_CAP)?)
}

/// Random Pauli-valued instance with one sign per local label.
fn synthetic_instance(seed: u64) -> Result<Enumeration> {
    let mut rng = substream(seed, 0xacce, 0);
    let nu = rng.gen_range(2..=6);
    let d = rng.gen_range(2..=4);
    let signs: Vec<f64> = (0..d).map(|k| if k == 0 || rng.gen_bool(0.5) { 1.0 } else { -1.0 }).collect();
    let coeffs = (0..nu)
        .map(|_| {
            let mut row: Vec<f64> = signs.iter().map(|s| s * rng.gen_range(0.01..0.4)).collect();
            row[0] = rng.gen_range(0.5..1.2);
            row
        })
        .collect();
    let q = ProductQpd::from_coeffs(coeffs)?;
    let salt = rng.gen::<u64>();
    let mean = move |c: &Configuration| {
        let mut parts: Vec<u64> = c.indices().iter().map(|&x| x as u64).collect();
        parts.push(salt);
        (mix_key(&parts) % 20_001) as f64 / 10_000.0 - 1.0
    };
    Ok(enumerate_means(&FnEvaluator::new(q, mean, true), DEFAULT_ENUMERATION_CAP)?)
}

/// Small open-boundary TFIM instances with random field and coupling.
fn circuit_instance(seed: u64) -> Result<Enumeration> {
    let mut rng = substream(seed, 0xc1c, 0);
    let mut spec = match seed % 3 {
        0 => InstanceSpec::pai(2, 1, 5),
        1 => InstanceSpec::pai(3, 1, 4),
        _ => InstanceSpec::pec(2, 1, rng.gen_range(0.005..0.05)),
    };
    spec.boundary = Boundary::Open;
    spec.h = rng.gen_range(0.2..1.0);
    spec.j = rng.gen_range(0.2..1.0);
    let eval = CircuitEvaluator::with_capacity(spec.build()?, 0);
    Ok(enumerate_means(&eval, DEFAULT_ENUMERATION_CAP)?)
}

/// 20 synthetic and 6 circuit instances plus the validation instance.
fn enumerable_instances() -> Result<Vec<Enumeration>> {
    let mut out = Vec::new();
    for seed in 0..20 {
        out.push(synthetic_instance(seed)?);
    }
    for seed in 0..6 {
        out.push(circuit_instance(seed)?);
    }
    out.push(golden_enumeration()?);
    Ok(out)
}

fn criterion_1() -> Result<Outcome> {
    let start = Instant::now();
    let out = Command::new(bin()).args(["--workers", "1", "enumerate", "--golden", "--models", "oracle"]).output()?;
    let secs = start.elapsed().as_secs_f64();
    ensure!(out.status.success(), "enumerate failed: {}", String::from_utf8_lossy(&out.stderr));
    let doc: serde_json::Value = serde_json::from_slice(&out.stdout)?;
    let m = &doc["models"][0];
    let get = |k: &str| m[k].as_f64().ok_or_else(|| anyhow!("missing {k}"));
    let (naive, counts, parity) = (get("var_naive")?, get("var_counts")?, get("var_parity")?);
    let errs = [rel(naive, GOLDEN_NAIVE), rel(counts, GOLDEN_COUNTS), rel(parity, GOLDEN_PARITY)];
    let pass = errs.iter().all(|&e| e <= 5e-3) && secs < 60.0;
    Ok(Outcome::strict(
        pass,
        format!(
            "Var_naive={naive:.5e} Var_counts={counts:.5e} Var_parity={parity:.5e}, max rel err {:.2e} (tol 5e-3), {secs:.2} s single-threaded",
            errs.iter().cloned().fold(0.0, f64::max)
        ),
    ))
}

fn criterion_2(instances: &[Enumeration]) -> Result<Outcome> {
    let mut worst: f64 = 0.0;
    for en in instances {
        let g = en.norm();
        // Σ p(ℓ) E[Y²|ℓ] − µ² with one ±1 outcome per configuration
        let mut second = 0.0;
        for c in en.configs() {
            let p = c.coefficient.abs() / g;
            second += p * g * g * (c.mean * c.mean + (1.0 - c.mean * c.mean));
        }
        let exact = second - en.mu() * en.mu();
        let closed = g * g - en.mu() * en.mu();
        let reported = en.design_variance(MeasurementModel::Shots(1))?;
        worst = worst.max(rel(exact, closed)).max(rel(reported, closed));
    }
    Ok(Outcome::strict(
        worst <= 1e-9,
        format!("{} Pauli instances, max rel |Var_1shot − (∥g∥₁² − µ²)| = {worst:.2e} (tol 1e-9)", instances.len()),
    ))
}

fn criterion_3() -> Result<Outcome> {
    let (mut worst_w, mut worst_cond) = (0.0f64, 0.0f64);
    for seed in 0..100u64 {
        let mut rng = substream(seed, 0xd9, 0);
        let nu = rng.gen_range(1..=8);
        let d = rng.gen_range(1..=3);
        let coeffs: Vec<Vec<f64>> = (0..nu)
            .map(|_| {
                (0..d)
                    .map(|_| {
                        let x: f64 = rng.gen_range(0.05..1.0);
                        if rng.gen_bool(0.3) { -x } else { x }
                    })
                    .collect()
            })
            .collect();
        let q = ProductQpd::from_coeffs(coeffs)?;
        let table = StratumTable::build(&q)?;
        let total = q.configuration_count().ok_or_else(|| anyhow!("too many configurations"))?;
        let mut brute = std::collections::BTreeMap::<Vec<u32>, f64>::new();
        for code in 0..total as u64 {
            let c = Configuration::from_code(code, nu, d);
            *brute.entry(counts_of(&c, d)?.0).or_default() += q.probability(&c)?;
        }
        for (key, &w) in table.keys().iter().zip(table.weights()) {
            let b = brute.get(key).copied().unwrap_or(0.0);
            worst_w = worst_w.max((w - b).abs());
        }
        ensure!(brute.keys().all(|k| table.keys().contains(k)), "DP misses a counts vector");
        for code in 0..total as u64 {
            let c = Configuration::from_code(code, nu, d);
            let m = counts_of(&c, d)?.0;
            let expect = q.probability(&c)? / brute[&m];
            worst_cond = worst_cond.max((table.sampler_probability(&c)? - expect).abs());
        }
    }
    Ok(Outcome::strict(
        worst_w <= 1e-10 && worst_cond <= 1e-10,
        format!("100 QPDs (ν ≤ 8, d ≤ 3): max |w_DP − w_brute| = {worst_w:.2e}, max |P_sampler − p/w_m| = {worst_cond:.2e} (tol 1e-10)"),
    ))
}

fn criterion_4(instances: &[Enumeration]) -> Result<Outcome> {
    let mut worst: f64 = 0.0;
    let mut ordered = 0;
    let mut checked = 0;
    for en in instances {
        for model in [MeasurementModel::Oracle, MeasurementModel::Shots(1), MeasurementModel::Shots(64)] {
            let naive = en.design_variance(model)?;
            for st in [Statistic::Full, Statistic::Counts, Statistic::Parity] {
                let m = en.stratum_moments(st, model)?;
                worst = worst.max((naive - m.proportional_variance() - m.between_variance()).abs());
            }
            checked += 1;
            if en.hierarchy(model)?.is_ordered(1e-12) {
                ordered += 1;
            }
        }
    }
    Ok(Outcome::strict(
        worst <= 1e-10 && ordered == checked,
        format!("max |Var_naive − Var_prop − Σw(µ_s−µ)²| = {worst:.2e} (tol 1e-10); hierarchy ordered in {ordered}/{checked} instance-models"),
    ))
}

fn criterion_5(golden: &Enumeration) -> Result<Outcome> {
    let eval = CircuitEvaluator::new(InstanceSpec::golden().build()?);
    let table = StratumTable::build(golden.qpd())?;
    let plan = residual_hamilton_allocate(table.weights(), 256)?;
    let boot = BootstrapOptions { resamples: 0, level: 0.95 };
    let runs = 500;
    let (mut sum, mut var_sum) = (0.0, 0.0);
    for seed in 0..runs {
        let (_, r) = run_stratified(&table, &plan, &eval, MeasurementModel::Oracle, seed, "stratified-counts", boot)?;
        sum += r.mean;
        var_sum += r.var_hat;
    }
    let grand = sum / runs as f64;
    let se = var_sum.sqrt() / runs as f64;
    let z = (grand - golden.mu()).abs() / se;
    let moments = golden.stratum_moments(Statistic::Counts, MeasurementModel::Oracle)?;
    let (means, _) = moments.aligned(table.keys());
    let structural = (implemented_mean(&plan, table.weights(), &means) - golden.mu()).abs();
    Ok(Outcome::strict(
        z <= 4.0 && structural <= 1e-12,
        format!(
            "500 runs K=256: grand mean {grand:.6} vs µ {:.6}, {z:.2} combined SE (tol 4); K*={}, structural |Σ_A wµ + w*Σqµ − µ| = {structural:.1e}",
            golden.mu(),
            plan.residual_count
        ),
    ))
}

fn criterion_6(golden: &Enumeration) -> Result<Outcome> {
    let table = StratumTable::build(golden.qpd())?;
    let w = table.weights();
    let (means, vars) = golden.stratum_moments(Statistic::Counts, MeasurementModel::Oracle)?.aligned(table.keys());
    let bound = golden.norm();
    let mut sound = true;
    let mut ratio_ok = true;
    let mut parts = Vec::new();
    for k in [16, 64, 256, 1024] {
        let plan = residual_hamilton_allocate(w, k)?;
        let v_impl = implemented_variance(&plan, w, &means, &vars)?;
        let v_prop = proportional_estimator_variance(k, w, &vars);
        let cert = variance_certificate(&plan, w, bound)?;
        let ratio = cert / v_prop;
        sound &= (v_impl - v_prop).abs() <= cert;
        if k >= 256 {
            ratio_ok &= ratio < 0.1;
        }
        parts.push(format!("K={k}: |Δ|={:.1e} ≤ cert={cert:.1e}, cert/Var_prop={ratio:.3}", (v_impl - v_prop).abs()));
    }
    let detail = format!(
        "soundness {}; ratio clause {} [{}]",
        if sound { "holds" } else { "VIOLATED" },
        if ratio_ok { "holds" } else { "fails (documented deviation)" },
        parts.join("; ")
    );
    Ok(Outcome { pass: sound && ratio_ok, hard_fail: !sound, detail })
}

fn criterion_7(instances: &[Enumeration], golden: &Enumeration) -> Result<Outcome> {
    let mut worst: f64 = 0.0;
    for en in instances {
        for model in [MeasurementModel::Oracle, MeasurementModel::Shots(1)] {
            for st in [Statistic::Counts, Statistic::Parity] {
                if let Ok(ev) = en.explained_variance(st, model) {
                    worst = worst.max((ev.rho - (1.0 - ev.r2)).abs());
                }
            }
        }
    }
    let r2 = golden.explained_variance(Statistic::Counts, MeasurementModel::Oracle)?.r2;
    Ok(Outcome::strict(
        worst <= 1e-10 && (r2 - 0.607).abs() <= 0.005,
        format!("max |ρ − (1 − R²)| = {worst:.2e} (tol 1e-10); validation 1 − ρ = {r2:.4} (target 0.607 ± 0.005)"),
    ))
}

fn benchmark_config(spec: InstanceSpec) -> ExperimentConfig {
    ExperimentConfig {
        depths: DEPTHS.to_vec(),
        designs: vec![Design::Naive, Design::Counts],
        k: 8192,
        models: vec!["oracle".into(), "shots:1".into(), "shots:64".into()],
        seeds: vec![1],
        b: 1024,
        ..ExperimentConfig::new(spec)
    }
}

fn criterion_8(pai: &RunOutput, pec: &RunOutput) -> Result<Outcome> {
    let mut ok = true;
    let mut parts = Vec::new();
    for (name, out, oracle_band) in [("PAI", pai, (0.2, 0.7)), ("PEC", pec, (0.15, 0.5))] {
        ensure!(out.errors.is_empty(), "{name} run had errors: {:?}", out.errors[0].error);
        for depth in DEPTHS {
            let rho = |m: MeasurementModel| -> Result<f64> {
                out.ratios
                    .iter()
                    .find(|r| r.depth == depth && r.model == m)
                    .map(|r| r.ratio.rho)
                    .ok_or_else(|| anyhow!("missing ratio for L={depth} {m}"))
            };
            let (o, s1, s64) = (
                rho(MeasurementModel::Oracle)?,
                rho(MeasurementModel::Shots(1))?,
                rho(MeasurementModel::Shots(64))?,
            );
            let in_band = o >= oracle_band.0 && o <= oracle_band.1 && (0.8..=1.0).contains(&s1);
            let between = o.min(s1) <= s64 && s64 <= o.max(s1);
            ok &= in_band && between;
            parts.push(format!("{name} L={depth}: oracle {o:.3} R64 {s64:.3} shot {s1:.3}"));
        }
    }
    let mut legs_ok = true;
    for depth in DEPTHS {
        let pai = InstanceSpec::pai(6, depth, 5).build()?;
        let pec = InstanceSpec::pec(6, depth, 0.01).build()?;
        legs_ok &= pai.qpd().nu() == 12 * depth && pec.qpd().nu() == 18 * depth;
        legs_ok &= pec.qpd().locals().iter().all(|l| (l.norm() - PEC_LEG_NORM).abs() < 5e-8);
    }
    ok &= legs_ok;
    Ok(Outcome::strict(
        ok,
        format!("{}; leg counts 12L/18L and PEC leg norm {PEC_LEG_NORM} {}", parts.join(", "), if legs_ok { "match" } else { "MISMATCH" }),
    ))
}

fn criterion_9(runs: &[&RunOutput]) -> Result<Outcome> {
    let mut worst = f64::NEG_INFINITY;
    let mut count = 0;
    for row in runs.iter().flat_map(|r| &r.rows) {
        let g2 = row.g1norm * row.g1norm;
        let half = (row.report.ci_hi - row.report.ci_lo) / 2.0 / g2;
        let limit = 1.0 / row.report.k as f64 + 5.0 * half;
        worst = worst.max(row.report.var_hat / g2 - limit);
        count += 1;
    }
    Ok(Outcome::strict(
        worst <= 0.0 && count > 0,
        format!("{count} estimates, max (var_hat/∥g∥₁² − 1/K − 5·halfwidth/∥g∥₁²) = {worst:.3e} (must be ≤ 0)"),
    ))
}

fn run_binary(config: &str, workers: usize, dir: &std::path::Path, tag: &str) -> Result<(Vec<u8>, Vec<u8>)> {
    let cfg_path = dir.join(format!("{tag}.json"));
    std::fs::write(&cfg_path, config)?;
    let out = dir.join(format!("{tag}-w{workers}.csv"));
    let status = Command::new(bin())
        .args(["--workers", &workers.to_string(), "run", "--config"])
        .arg(&cfg_path)
        .arg("--out")
        .arg(&out)
        .status()?;
    ensure!(status.success(), "run {tag} with {workers} workers failed");
    Ok((std::fs::read(&out)?, std::fs::read(dir.join(format!("{tag}-w{workers}.ratios.csv")))?))
}

fn criterion_10(pai: &RunOutput) -> Result<Outcome> {
    let dir = std::env::temp_dir().join(format!("qpd-strat-acceptance-{}", std::process::id()));
    std::fs::create_dir_all(&dir)?;
    let configs = [
        (
            "golden",
            r#"{"instance":{"n":3,"L":1,"qpd":"pec","p":0.01,"boundary":"open"},
               "designs":["naive","stratified-counts","stratified-parity","stratified-neyman"],
               "K":256,"models":["oracle","shots:1","shots:64"],"seeds":[1,2],"B":256}"#,
        ),
        (
            "bench",
            r#"{"instance":{"n":6,"L":2,"qpd":"pec","p":0.01},"depths":[2],
               "designs":["naive","stratified-counts","stratified-parity"],
               "K":2048,"models":["oracle","shots:1"],"seeds":[7],"B":256}"#,
        ),
    ];
    let mut identical = true;
    let mut parts = Vec::new();
    for (tag, cfg) in configs {
        let one = run_binary(cfg, 1, &dir, tag)?;
        let many = run_binary(cfg, 4, &dir, tag)?;
        let again = run_binary(cfg, 4, &dir, tag)?;
        let same = one == many && many == again;
        identical &= same;
        parts.push(format!("{tag} ({} bytes) {}", one.0.len(), if same { "identical" } else { "DIFFERS" }));
    }
    // the in-process criterion 8 PAI sweep, repeated at L = 2 on one thread
    let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build()?;
    let cfg = ExperimentConfig { depths: vec![2], ..benchmark_config(InstanceSpec::pai(6, 2, 5)) };
    let rerun = pool.install(|| run_experiment(&cfg))?;
    let original: Vec<String> = pai.rows.iter().filter(|r| r.depth == 2).map(|r| r.csv_line()).collect();
    let repeated: Vec<String> = rerun.rows.iter().map(|r| r.csv_line()).collect();
    let same = original == repeated;
    identical &= same;
    parts.push(format!("PAI L=2 benchmark rows {}", if same { "identical" } else { "DIFFER" }));
    std::fs::remove_dir_all(&dir).ok();
    Ok(Outcome::strict(identical, format!("1 vs 4 workers and repeat: {}", parts.join(", "))))
}

fn report(id: usize, title: &str, result: Result<Outcome>, failures: &mut Vec<usize>) {
    let outcome = result.unwrap_or_else(|e| Outcome::strict(false, format!("error: {e:#}")));
    let tag = if outcome.pass { "PASS" } else { "FAIL" };
    println!("criterion {id:>2} [{tag}] {title}: {}", outcome.detail);
    if outcome.hard_fail {
        failures.push(id);
    }
}

fn main() {
    let start = Instant::now();
    let mut failures = Vec::new();
    println!("acceptance suite");
    report(1, "validation-instance enumeration", criterion_1(), &mut failures);

    let instances = match enumerable_instances() {
        Ok(v) => v,
        Err(e) => {
            println!("cannot build enumerable instances: {e:#}");
            std::process::exit(1);
        }
    };
    let golden = instances.last().expect("validation instance");
    report(2, "single-shot identity", criterion_2(&instances), &mut failures);
    report(3, "DP oracle equivalence", criterion_3(), &mut failures);
    report(4, "variance decomposition and hierarchy", criterion_4(&instances), &mut failures);
    report(5, "unbiasedness of the residual-aware estimator", criterion_5(golden), &mut failures);
    report(6, "certificate soundness", criterion_6(golden), &mut failures);
    report(7, "explained-variance identity", criterion_7(&instances, golden), &mut failures);

    let pai = run_experiment(&benchmark_config(InstanceSpec::pai(6, 2, 5)));
    let pec = run_experiment(&benchmark_config(InstanceSpec::pec(6, 2, 0.01)));
    match (&pai, &pec) {
        (Ok(pai), Ok(pec)) => {
            report(8, "benchmark bands", criterion_8(pai, pec), &mut failures);
            report(9, "normalised absolute variance bound", criterion_9(&[pai, pec]), &mut failures);
            report(10, "determinism", criterion_10(pai), &mut failures);
        }
        _ => {
            let e = pai.as_ref().err().or(pec.as_ref().err()).map(|e| format!("{e:#}")).unwrap_or_default();
            for (id, title) in [(8, "benchmark bands"), (9, "normalised absolute variance bound"), (10, "determinism")] {
                report(id, title, Err(anyhow!("benchmark run failed: {e}")), &mut failures);
            }
        }
    }
    println!("acceptance suite finished in {:.1} s", start.elapsed().as_secs_f64());
    if !failures.is_empty() {
        println!("undocumented failures: {failures:?}");
        std::process::exit(1);
    }
}
