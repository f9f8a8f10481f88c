//! Sign-parity strata `(P₊, P₋)`: how many positions drew a positive versus a
//! negative coefficient. A Poisson-binomial DP over the per-position positive
//! masses gives exact weights and a backward sampler, independent of width.

use rand::Rng;

use crate::error::{QpdError, Result};
use crate::qpd::{sample_categorical, Configuration, ProductQpd};
use crate::strata::{StratumKey, Stratification};

#[derive(Debug, Clone)]
pub struct ParityTable {
    qpd: ProductQpd,
    positive_mass: Vec<f64>,
    // layers[i][j] = Pr(j positive signs among the first i positions)
    layers: Vec<Vec<f64>>,
    keys: Vec<StratumKey>,
    weights: Vec<f64>,
}

impl ParityTable {
    pub fn build(qpd: &ProductQpd) -> Result<Self> {
        let nu = qpd.nu();
        let positive_mass: Vec<f64> = qpd.locals().iter().map(|l| l.positive_mass()).collect();
        let mut layers = Vec::with_capacity(nu + 1);
        layers.push(vec![1.0]);
        for (i, &pi) in positive_mass.iter().enumerate() {
            let prev: &Vec<f64> = &layers[i];
            let mut next = vec![0.0; i + 2];
            for (j, &w) in prev.iter().enumerate() {
                next[j] += (1.0 - pi) * w;
                next[j + 1] += pi * w;
            }
            layers.push(next);
        }
        // keys (P₊, P₋) in lexicographic order: P₊ ascending
        let keys = (0..=nu as u32).map(|plus| vec![plus, nu as u32 - plus]).collect();
        let weights = layers[nu].clone();
        Ok(Self { qpd: qpd.clone(), positive_mass, layers, keys, weights })
    }

    pub fn positive_mass(&self) -> &[f64] {
        &self.positive_mass
    }

    /// Weight of `(P₊, P₋)`.
    pub fn weight_of(&self, plus: usize, minus: usize) -> f64 {
        if plus + minus != self.qpd.nu() {
            return 0.0;
        }
        self.weights[plus]
    }

    /// Draws a configuration conditioned on `P₊ = plus`: signs are resolved
    /// backwards through the DP, then each index is drawn from its local law
    /// restricted to the chosen sign.
    pub fn conditional_sample<R: Rng + ?Sized>(&self, plus: usize, rng: &mut R) -> Result<Configuration> {
        let nu = self.qpd.nu();
        if plus > nu || self.weights[plus] == 0.0 {
            return Err(QpdError::EmptyStratum(vec![plus as u32, nu.saturating_sub(plus) as u32]));
        }
        let mut rem = plus;
        let mut out = vec![0u32; nu];
        for i in (1..=nu).rev() {
            let pi = self.positive_mass[i - 1];
            let prev = &self.layers[i - 1];
            let w_plus = if rem > 0 { pi * prev[rem - 1] } else { 0.0 };
            let w_minus = if rem < i { (1.0 - pi) * prev.get(rem).copied().unwrap_or(0.0) } else { 0.0 };
            let positive = sample_categorical(&[w_minus, w_plus], None, rng) == 1;
            let local = self.qpd.local(i - 1);
            let restricted: Vec<f64> = local
                .coeffs()
                .iter()
                .zip(local.probs())
                .map(|(&c, &p)| if (c > 0.0) == positive && c != 0.0 { p } else { 0.0 })
                .collect();
            out[i - 1] = sample_categorical(&restricted, None, rng) as u32;
            if positive {
                rem -= 1;
            }
        }
        Ok(Configuration(out))
    }
}

impl Stratification for ParityTable {
    fn name(&self) -> &'static str {
        "parity"
    }

    fn qpd(&self) -> &ProductQpd {
        &self.qpd
    }

    fn keys(&self) -> &[StratumKey] {
        &self.keys
    }

    fn weights(&self) -> &[f64] {
        &self.weights
    }

    fn stratum_of(&self, config: &Configuration) -> Result<usize> {
        self.qpd.validate(config)?;
        let mut plus = 0;
        for (position, (l, &k)) in self.qpd.locals().iter().zip(config.indices()).enumerate() {
            match l.sign(k as usize) {
                1 => plus += 1,
                -1 => {}
                _ => return Err(QpdError::ZeroMassConfiguration { position }),
            }
        }
        Ok(plus)
    }

    fn sample_in<R: Rng + ?Sized>(&self, position: usize, rng: &mut R) -> Result<Configuration> {
        self.conditional_sample(position, rng)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::counts::StratumTable;
    use crate::rng::substream;

    #[test]
    fn all_positive_is_single_stratum() {
        let q = ProductQpd::from_coeffs(vec![vec![0.3, 0.7]; 4]).unwrap();
        let t = ParityTable::build(&q).unwrap();
        assert_eq!(t.weight_of(4, 0), 1.0);
        assert_eq!(t.keys().len(), 5);
    }

    #[test]
    fn binomial_parity() {
        let q = ProductQpd::from_coeffs(vec![vec![0.5, -0.5]; 2]).unwrap();
        let t = ParityTable::build(&q).unwrap();
        assert_eq!(t.weight_of(2, 0), 0.25);
        assert_eq!(t.weight_of(1, 1), 0.5);
        assert_eq!(t.weight_of(0, 2), 0.25);
    }

    #[test]
    fn parity_is_merged_counts() {
        let q = ProductQpd::from_coeffs(vec![
            vec![0.6, -0.1, 0.2, -0.1],
            vec![0.9, -0.05, -0.05],
            vec![0.4, 0.3, -0.3, 0.0],
            vec![1.0, -0.2, 0.1, -0.3],
        ])
        .unwrap();
        let counts = StratumTable::build(&q).unwrap();
        let parity = ParityTable::build(&q).unwrap();
        // signs differ by position, so merge by walking every configuration
        let mut merged = vec![0.0; q.nu() + 1];
        for code in 0..q.configuration_count().unwrap() as u64 {
            let c = Configuration::from_code(code, q.nu(), q.width());
            let p = q.probability(&c).unwrap();
            if p > 0.0 {
                merged[parity.stratum_of(&c).unwrap()] += p;
            }
        }
        for (a, b) in merged.iter().zip(parity.weights()) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!((counts.weights().iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn parity_is_counts_merge_for_homogeneous_signs() {
        let l = crate::qpd::depolarising_inverse_coeffs(0.05).unwrap().to_vec();
        let q = ProductQpd::from_coeffs(vec![l; 6]).unwrap();
        let counts = StratumTable::build(&q).unwrap();
        let parity = ParityTable::build(&q).unwrap();
        let mut merged = [0.0; 7];
        for (key, w) in counts.keys().iter().zip(counts.weights()) {
            // label 0 (identity) is the only positive label
            merged[key[0] as usize] += w;
        }
        for (a, b) in merged.iter().zip(parity.weights()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn conditional_sample_respects_parity() {
        let q = ProductQpd::from_coeffs(vec![vec![0.6, -0.3, 0.1]; 6]).unwrap();
        let t = ParityTable::build(&q).unwrap();
        let mut rng = substream(4, 0, 0);
        for plus in 0..=6 {
            for _ in 0..50 {
                let c = t.conditional_sample(plus, &mut rng).unwrap();
                assert_eq!(t.stratum_of(&c).unwrap(), plus);
            }
        }
    }
}
