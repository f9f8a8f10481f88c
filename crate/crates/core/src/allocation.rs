//! Integer allocation of a configuration budget across strata.
//!
//! Hamilton (largest-remainder) apportionment matches the proportional quotas
//! `K·w_s` to within one unit but can give zero draws to strata with
//! `w_s < 1/K`. [`residual_hamilton_allocate`] restores exact unbiasedness by
//! pooling those strata into a residual bucket that is sampled from the
//! conditional mixture `q(s) = w_s / w_*`.

use serde::{Deserialize, Serialize};

use crate::error::{QpdError, Result};
use crate::strata::StratumKey;

const NORMALISATION_TOL: f64 = 1e-12;

fn check_weights(w: &[f64], k: usize) -> Result<()> {
    if k == 0 {
        return Err(QpdError::InvalidArgument("budget K must be at least 1".into()));
    }
    if w.is_empty() {
        return Err(QpdError::InvalidWeights("no strata".into()));
    }
    if let Some(bad) = w.iter().find(|x| !(x.is_finite() && **x >= 0.0)) {
        return Err(QpdError::InvalidWeights(format!("negative or non-finite weight {bad}")));
    }
    let total: f64 = w.iter().sum();
    if (total - 1.0).abs() > NORMALISATION_TOL * (w.len() as f64).max(1.0) {
        return Err(QpdError::InvalidWeights(format!("weights sum to {total}, expected 1")));
    }
    Ok(())
}

/// Largest-remainder apportionment of `k` units over weights `w`.
///
/// Remainder ties go to the lower stratum index. Zero-weight strata never
/// receive a unit.
pub fn hamilton_apportion(w: &[f64], k: usize) -> Result<Vec<usize>> {
    check_weights(w, k)?;
    let quotas: Vec<f64> = w.iter().map(|&x| x * k as f64).collect();
    let mut alloc: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
    let assigned: usize = alloc.iter().sum();
    let remaining = k.saturating_sub(assigned);

    let mut order: Vec<usize> = (0..w.len()).filter(|&s| w[s] > 0.0).collect();
    order.sort_by(|&a, &b| {
        let da = quotas[a] - quotas[a].floor();
        let db = quotas[b] - quotas[b].floor();
        db.total_cmp(&da).then(a.cmp(&b))
    });
    for &s in order.iter().cycle().take(remaining) {
        alloc[s] += 1;
    }
    // floating-point floors can overshoot only if weights sum above 1
    let mut excess = alloc.iter().sum::<usize>().saturating_sub(k);
    for s in order.iter().rev() {
        if excess == 0 {
            break;
        }
        if alloc[*s] > 0 {
            alloc[*s] -= 1;
            excess -= 1;
        }
    }
    Ok(alloc)
}

/// Integer allocation with a residual stratum.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AllocationPlan {
    /// Total budget `K`.
    pub total: usize,
    /// `K_s` for every stratum, aligned with the weight vector.
    pub per_stratum: Vec<usize>,
    /// `K_*`.
    pub residual_count: usize,
    /// Dropped strata `D = {s : K_s = 0, w_s > 0}` after borrowing.
    pub dropped: Vec<usize>,
    /// `w_* = Σ_{s∈D} w_s`.
    pub dropped_mass: f64,
    /// `q(s) = w_s / w_*`, aligned with `dropped`.
    pub residual_mixture: Vec<f64>,
    /// Mass dropped by the initial Hamilton allocation, before borrowing.
    pub initial_dropped_mass: f64,
}

impl AllocationPlan {
    /// Retained strata `A = {s : K_s > 0}`.
    pub fn retained(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.per_stratum.iter().copied().enumerate().filter(|(_, k)| *k > 0)
    }

    /// `Σ_s K_s + K_*`.
    pub fn budget(&self) -> usize {
        self.per_stratum.iter().sum::<usize>() + self.residual_count
    }

    /// Checks the plan against a weight vector.
    pub fn check(&self, w: &[f64]) -> Result<()> {
        if self.per_stratum.len() != w.len() {
            return Err(QpdError::PlanMismatch(format!(
                "plan has {} strata, stratification has {}",
                self.per_stratum.len(),
                w.len()
            )));
        }
        if self.budget() != self.total {
            return Err(QpdError::PlanMismatch("budget identity violated".into()));
        }
        if let Some((s, _)) = self.retained().find(|(s, _)| w[*s] == 0.0) {
            return Err(QpdError::PlanMismatch(format!("stratum {s} has draws but zero weight")));
        }
        let expected: Vec<usize> = (0..w.len()).filter(|&s| self.per_stratum[s] == 0 && w[s] > 0.0).collect();
        if expected != self.dropped {
            return Err(QpdError::PlanMismatch("dropped set does not match the weights".into()));
        }
        if self.dropped_mass > 0.0 && self.residual_count == 0 {
            return Err(QpdError::PlanMismatch("dropped mass without residual draws".into()));
        }
        Ok(())
    }

    /// JSON document `{"K", "per_stratum": [[m..., K_s]...], "K_star", "dropped": [[m...]...]}`.
    pub fn to_json(&self, keys: &[StratumKey]) -> Result<String> {
        #[derive(Serialize)]
        struct Doc {
            #[serde(rename = "K")]
            k: usize,
            per_stratum: Vec<Vec<u64>>,
            #[serde(rename = "K_star")]
            k_star: usize,
            dropped: Vec<Vec<u64>>,
            dropped_mass: f64,
        }
        if keys.len() != self.per_stratum.len() {
            return Err(QpdError::PlanMismatch("key list does not match the plan".into()));
        }
        let per_stratum = keys
            .iter()
            .zip(&self.per_stratum)
            .map(|(key, &ks)| key.iter().map(|&m| m as u64).chain(std::iter::once(ks as u64)).collect())
            .collect();
        let dropped = self.dropped.iter().map(|&s| keys[s].iter().map(|&m| m as u64).collect()).collect();
        let doc = Doc {
            k: self.total,
            per_stratum,
            k_star: self.residual_count,
            dropped,
            dropped_mass: self.dropped_mass,
        };
        Ok(serde_json::to_string(&doc)?)
    }
}

fn donor_order(alloc: &[usize]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..alloc.len()).collect();
    order.sort_by(|&a, &b| alloc[b].cmp(&alloc[a]).then(a.cmp(&b)));
    order
}

/// Borrows up to `deficit` units from donors, never taking a donor below
/// `floor`. Returns the remaining deficit.
fn borrow(alloc: &mut [usize], mut deficit: usize, floor: usize) -> usize {
    for s in donor_order(alloc) {
        while deficit > 0 && alloc[s] > floor {
            alloc[s] -= 1;
            deficit -= 1;
        }
        if deficit == 0 {
            break;
        }
    }
    deficit
}

/// Hamilton allocation plus a residual bucket preserving exact unbiasedness.
///
/// The residual budget is `max(1, round(K·w_drop))` with `w_drop` the mass
/// dropped by the initial Hamilton pass; it is borrowed from donors in
/// decreasing order of their current allocation, first keeping every donor at
/// one draw or more and then, if needed, allowing donors to reach zero. The
/// dropped set is recomputed after borrowing.
pub fn residual_hamilton_allocate(w: &[f64], k: usize) -> Result<AllocationPlan> {
    let mut alloc = hamilton_apportion(w, k)?;
    let initial_dropped_mass: f64 = (0..w.len()).filter(|&s| alloc[s] == 0 && w[s] > 0.0).map(|s| w[s]).sum();

    let mut residual_count = 0;
    if initial_dropped_mass > 0.0 {
        // f64::round is half-away-from-zero
        residual_count = ((k as f64 * initial_dropped_mass).round() as usize).max(1);
        debug_assert!(residual_count <= k);
        let mut deficit = borrow(&mut alloc, residual_count, 1);
        if deficit > 0 {
            deficit = borrow(&mut alloc, deficit, 0);
        }
        assert_eq!(deficit, 0, "borrowing exhausted all donors");
    }

    let mut dropped: Vec<usize> = (0..w.len()).filter(|&s| alloc[s] == 0 && w[s] > 0.0).collect();
    let mut dropped_mass: f64 = dropped.iter().map(|&s| w[s]).sum();
    let residual_mixture;
    if residual_count > 0 && dropped_mass > 0.0 {
        residual_mixture = dropped.iter().map(|&s| w[s] / dropped_mass).collect();
    } else {
        // borrowing only lowers allocations, so K_* > 0 implies w_* > 0
        residual_count = 0;
        dropped.clear();
        dropped_mass = 0.0;
        residual_mixture = Vec::new();
    }

    let plan = AllocationPlan {
        total: k,
        per_stratum: alloc,
        residual_count,
        dropped,
        dropped_mass,
        residual_mixture,
        initial_dropped_mass,
    };
    assert_eq!(plan.budget(), k, "budget identity violated");
    Ok(plan)
}

/// Neyman quotas `K·w_sσ_s / Σ_t w_tσ_t` (real-valued).
pub fn neyman_quotas(w: &[f64], sigma: &[f64], k: usize) -> Result<Vec<f64>> {
    let norm = neyman_weights(w, sigma)?;
    Ok(norm.into_iter().map(|x| x * k as f64).collect())
}

/// Normalised Neyman weights `w_sσ_s / Σ_t w_tσ_t`.
pub fn neyman_weights(w: &[f64], sigma: &[f64]) -> Result<Vec<f64>> {
    if w.len() != sigma.len() {
        return Err(QpdError::InvalidArgument("weights and sigmas differ in length".into()));
    }
    if let Some(bad) = sigma.iter().find(|s| !(s.is_finite() && **s >= 0.0)) {
        return Err(QpdError::InvalidArgument(format!("invalid standard deviation {bad}")));
    }
    let total: f64 = w.iter().zip(sigma).map(|(a, b)| a * b).sum();
    if total <= 0.0 {
        return Err(QpdError::InvalidArgument("all standard deviations are zero".into()));
    }
    Ok(w.iter().zip(sigma).map(|(a, b)| a * b / total).collect())
}

/// Integer Neyman allocation: the normalised `w_sσ_s` weights run through
/// [`residual_hamilton_allocate`], then the residual is rebased onto the true
/// weights `w`. Strata with `σ_s = 0` and `w_s > 0` receive no quota and are
/// covered by the residual, which takes one draw if it had none.
pub fn neyman_allocate(w: &[f64], sigma: &[f64], k: usize) -> Result<AllocationPlan> {
    let mut nw = neyman_weights(w, sigma)?;
    // renormalise away rounding in the division
    let total: f64 = nw.iter().sum();
    nw.iter_mut().for_each(|x| *x /= total);
    let base = residual_hamilton_allocate(&nw, k)?;
    let mut alloc = base.per_stratum;
    let mut residual_count = base.residual_count;
    if residual_count == 0 && (0..w.len()).any(|s| alloc[s] == 0 && w[s] > 0.0) {
        if borrow(&mut alloc, 1, 1) > 0 {
            borrow(&mut alloc, 1, 0);
        }
        residual_count = 1;
    }
    let dropped: Vec<usize> = (0..w.len()).filter(|&s| alloc[s] == 0 && w[s] > 0.0).collect();
    let dropped_mass: f64 = dropped.iter().map(|&s| w[s]).sum();
    let residual_mixture = dropped.iter().map(|&s| w[s] / dropped_mass).collect();
    let plan = AllocationPlan {
        total: k,
        per_stratum: alloc,
        residual_count,
        dropped,
        dropped_mass,
        residual_mixture,
        initial_dropped_mass: base.initial_dropped_mass,
    };
    plan.check(w)?;
    Ok(plan)
}

/// Worst-case bias `B·w_drop` from discarding the dropped strata.
pub fn truncation_bias_bound(dropped_mass: f64, bound: f64) -> f64 {
    bound * dropped_mass
}

/// Certificate `B²[Σ_A w_s²|1/K_s − 1/(Kw_s)| + w_*|w_*/K_* − 1/K| + w_*²/K_*]`
/// bounding `|Var_impl − Var_prop|`.
pub fn variance_certificate(plan: &AllocationPlan, w: &[f64], bound: f64) -> Result<f64> {
    plan.check(w)?;
    let k = plan.total as f64;
    let retained: f64 = plan
        .retained()
        .map(|(s, ks)| w[s] * w[s] * (1.0 / ks as f64 - 1.0 / (k * w[s])).abs())
        .sum();
    let (mismatch, aggregation) = if plan.residual_count > 0 {
        let ws = plan.dropped_mass;
        let ks = plan.residual_count as f64;
        (ws * (ws / ks - 1.0 / k).abs(), ws * ws / ks)
    } else {
        (0.0, 0.0)
    };
    Ok(bound * bound * (retained + mismatch + aggregation))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn hamilton_examples() {
        assert_eq!(hamilton_apportion(&[0.5, 0.3, 0.2], 10).unwrap(), vec![5, 3, 2]);
        assert_eq!(hamilton_apportion(&[0.4, 0.35, 0.25], 3).unwrap(), vec![1, 1, 1]);
        assert_eq!(hamilton_apportion(&[1.0], 7).unwrap(), vec![7]);
        // equal remainders: lower index wins
        assert_eq!(hamilton_apportion(&[0.5, 0.5], 1).unwrap(), vec![1, 0]);
    }

    #[test]
    fn hamilton_rejects_bad_weights() {
        assert!(hamilton_apportion(&[0.5, -0.1, 0.6], 4).is_err());
        assert!(hamilton_apportion(&[0.5, 0.4], 4).is_err());
        assert!(hamilton_apportion(&[1.0], 0).is_err());
    }

    #[test]
    fn residual_trace() {
        let plan = residual_hamilton_allocate(&[0.7, 0.29, 0.01], 10).unwrap();
        assert_eq!(plan.per_stratum, vec![6, 3, 0]);
        assert_eq!(plan.residual_count, 1);
        assert_eq!(plan.dropped, vec![2]);
        assert!((plan.dropped_mass - 0.01).abs() < 1e-15);
        assert_eq!(plan.residual_mixture, vec![1.0]);
        assert_eq!(plan.budget(), 10);
    }

    #[test]
    fn no_dropped_strata() {
        let plan = residual_hamilton_allocate(&[0.5, 0.3, 0.2], 10).unwrap();
        assert_eq!(plan.per_stratum, vec![5, 3, 2]);
        assert_eq!(plan.residual_count, 0);
        assert!(plan.dropped.is_empty());
        assert_eq!(plan.dropped_mass, 0.0);
    }

    #[test]
    fn second_pass_donor_rule() {
        let plan = residual_hamilton_allocate(&[0.6, 0.4], 1).unwrap();
        assert_eq!(plan.per_stratum, vec![0, 0]);
        assert_eq!(plan.residual_count, 1);
        assert_eq!(plan.dropped, vec![0, 1]);
        assert!((plan.dropped_mass - 1.0).abs() < 1e-15);
        assert!((plan.residual_mixture[0] - 0.6).abs() < 1e-15);
    }

    #[test]
    fn neyman_examples() {
        let q = neyman_quotas(&[0.5, 0.5], &[1.0, 3.0], 8).unwrap();
        assert_eq!(q, vec![2.0, 6.0]);
        let q = neyman_quotas(&[0.2, 0.3, 0.5], &[2.0; 3], 10).unwrap();
        for (a, b) in q.iter().zip([2.0, 3.0, 5.0]) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!(neyman_quotas(&[0.5, 0.5], &[0.0, 0.0], 8).is_err());
    }

    #[test]
    fn neyman_plan_uses_true_weights() {
        let w = [0.5, 0.3, 0.2];
        let plan = neyman_allocate(&w, &[1.0, 2.0, 0.0], 10).unwrap();
        assert_eq!(plan.per_stratum[2], 0);
        assert_eq!(plan.dropped, vec![2]);
        assert!((plan.dropped_mass - 0.2).abs() < 1e-15);
        assert_eq!(plan.residual_count, 1);
        assert_eq!(plan.budget(), 10);
        plan.check(&w).unwrap();
        let plan = neyman_allocate(&w, &[1.0, 1.0, 1.0], 10).unwrap();
        assert_eq!(plan.per_stratum, vec![5, 3, 2]);
    }

    #[test]
    fn bias_bound_examples() {
        assert_eq!(truncation_bias_bound(0.0, 3.0), 0.0);
        assert!((truncation_bias_bound(0.01, 1.15082) - 0.0115082).abs() < 1e-15);
    }

    #[test]
    fn certificate_zero_cases() {
        let w = [0.5, 0.25, 0.25];
        let plan = residual_hamilton_allocate(&w, 8).unwrap();
        assert_eq!(variance_certificate(&plan, &w, 2.0).unwrap(), 0.0);
        let plan = residual_hamilton_allocate(&[1.0], 13).unwrap();
        assert_eq!(variance_certificate(&plan, &[1.0], 2.0).unwrap(), 0.0);
    }

    #[test]
    fn plan_json_layout() {
        let keys = vec![vec![0, 2], vec![1, 1], vec![2, 0]];
        let plan = residual_hamilton_allocate(&[0.7, 0.29, 0.01], 10).unwrap();
        let text = plan.to_json(&keys).unwrap();
        let v: serde_json::Value = serde_json::from_str(&text).unwrap();
        assert_eq!(v["K"], 10);
        assert_eq!(v["K_star"], 1);
        assert_eq!(v["per_stratum"][0], serde_json::json!([0, 2, 6]));
        assert_eq!(v["dropped"], serde_json::json!([[2, 0]]));
    }

    fn weights_strategy() -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(prop_oneof![Just(0.0), 1e-6..1.0f64, 1e-3..1e-2f64], 1..40).prop_filter_map(
            "non-zero",
            |raw| {
                let total: f64 = raw.iter().sum();
                (total > 0.0).then(|| raw.iter().map(|x| x / total).collect())
            },
        )
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(2000))]

        #[test]
        fn budget_and_quota_properties(w in weights_strategy(), k in 1usize..500) {
            let h = hamilton_apportion(&w, k).unwrap();
            prop_assert_eq!(h.iter().sum::<usize>(), k);
            for (ks, ws) in h.iter().zip(&w) {
                prop_assert!((*ks as f64 - k as f64 * ws).abs() < 1.0 + 1e-9);
            }
            let plan = residual_hamilton_allocate(&w, k).unwrap();
            prop_assert_eq!(plan.budget(), k);
            plan.check(&w).unwrap();
            if plan.dropped_mass > 0.0 {
                prop_assert!(plan.residual_count >= 1);
                prop_assert!((plan.residual_mixture.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            } else {
                prop_assert_eq!(plan.residual_count, 0);
                prop_assert!(plan.dropped.is_empty());
            }
            prop_assert_eq!(residual_hamilton_allocate(&w, k).unwrap(), plan);
        }

        #[test]
        fn residual_estimator_is_unbiased(w in weights_strategy(), k in 1usize..200, seed in 0u64..1000) {
            let plan = residual_hamilton_allocate(&w, k).unwrap();
            let mu: Vec<f64> = (0..w.len()).map(|s| ((s as u64 * 7919 + seed) % 101) as f64 / 50.0 - 1.0).collect();
            let exact: f64 = w.iter().zip(&mu).map(|(a, b)| a * b).sum();
            let retained: f64 = plan.retained().map(|(s, _)| w[s] * mu[s]).sum();
            let residual: f64 = plan.dropped.iter().zip(&plan.residual_mixture).map(|(&s, q)| q * mu[s]).sum();
            prop_assert!((retained + plan.dropped_mass * residual - exact).abs() < 1e-12);
        }

        #[test]
        fn neyman_never_worse(w in weights_strategy(), sig in prop::collection::vec(0.0..5.0f64, 40)) {
            let sigma = &sig[..w.len()];
            let a: f64 = w.iter().zip(sigma).map(|(x, s)| x * s).sum();
            let b: f64 = w.iter().zip(sigma).map(|(x, s)| x * s * s).sum();
            prop_assert!(a * a <= b + 1e-12);
        }
    }
}
