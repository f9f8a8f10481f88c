//! Counts-vector strata: the Poisson-multinomial forward DP and the exact
//! backward conditional sampler.
//!
//! Layer `i` of the table holds `W⁽ⁱ⁾_m = Pr(M⁽ⁱ⁾ = m)` for every counts vector
//! `m` of the length-`i` prefix. States inside a layer are stored densely in
//! lexicographic order of `m`; [`CountsIndexer::rank`] maps a counts vector to
//! its slot.

use std::fmt;

use rand::Rng;

use crate::error::{QpdError, Result};
use crate::numfmt::sig17;
use crate::qpd::{sample_categorical, Configuration, ProductQpd};
use crate::strata::{StratumKey, Stratification};

/// Default preflight cap on the number of cached DP states.
pub const DEFAULT_STATE_CAP: u128 = 1 << 31;

/// Layers whose largest entry drops below this are rescaled.
const UNDERFLOW_GUARD: f64 = 1e-250;

/// How often each local index occurs in a configuration.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct CountsVector(pub Vec<u32>);

impl CountsVector {
    pub fn total(&self) -> u32 {
        self.0.iter().sum()
    }

    pub fn as_slice(&self) -> &[u32] {
        &self.0
    }
}

impl fmt::Display for CountsVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(")?;
        for (k, m) in self.0.iter().enumerate() {
            if k > 0 {
                write!(f, ",")?;
            }
            write!(f, "{m}")?;
        }
        write!(f, ")")
    }
}

/// `M_k = #{i : ℓ_i = k}`.
pub fn counts_of(config: &Configuration, width: usize) -> Result<CountsVector> {
    let mut counts = vec![0u32; width];
    for &l in config.indices() {
        let slot = counts
            .get_mut(l as usize)
            .ok_or(QpdError::IndexOutOfRange { index: l as usize, width })?;
        *slot += 1;
    }
    Ok(CountsVector(counts))
}

/// `C(n, k)` with overflow detection.
pub fn binomial(n: u128, k: u128) -> Option<u128> {
    if k > n {
        return Some(0);
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for j in 0..k {
        // acc * (n - j) is divisible by (j + 1) after the multiplication
        acc = acc.checked_mul(n - j)? / (j + 1);
    }
    Some(acc)
}

/// Number of counts vectors for `ν` positions and width `d`: `C(ν+d−1, d−1)`.
pub fn stratum_count(nu: usize, d: usize) -> Result<u128> {
    if d == 0 {
        return Err(QpdError::InvalidArgument("width must be at least 1".into()));
    }
    binomial((nu + d - 1) as u128, (d - 1) as u128).ok_or(QpdError::CountOverflow { nu, d })
}

/// Size of the full cached table, `Σ_{i=0..ν} C(i+d−1, d−1) = C(ν+d, d)`.
pub fn cached_state_count(nu: usize, d: usize) -> Result<u128> {
    if d == 0 {
        return Err(QpdError::InvalidArgument("width must be at least 1".into()));
    }
    binomial((nu + d) as u128, d as u128).ok_or(QpdError::CountOverflow { nu, d })
}

/// Lexicographic ranking of counts vectors with a fixed total.
#[derive(Debug, Clone)]
pub struct CountsIndexer {
    d: usize,
    // binom[n][r] = C(n, r) for r < d, n ≤ nu + d
    binom: Vec<Vec<usize>>,
}

impl CountsIndexer {
    pub fn new(nu: usize, d: usize) -> Self {
        let rows = nu + d + 1;
        let mut binom = vec![vec![0usize; d + 1]; rows];
        for row in binom.iter_mut() {
            row[0] = 1;
        }
        for n in 1..rows {
            for r in 1..=d {
                binom[n][r] = binom[n - 1][r - 1].saturating_add(binom[n - 1][r]);
            }
        }
        Self { d, binom }
    }

    fn c(&self, n: usize, r: usize) -> usize {
        if r > n {
            0
        } else {
            self.binom[n][r]
        }
    }

    /// Number of vectors in a layer with the given total.
    pub fn layer_len(&self, total: usize) -> usize {
        self.c(total + self.d - 1, self.d - 1)
    }

    /// Position of `m` among all vectors with the same total, in
    /// lexicographic order.
    pub fn rank(&self, m: &[u32]) -> usize {
        let mut rem: usize = m.iter().map(|&x| x as usize).sum();
        let mut r = 0usize;
        for (k, &mk) in m.iter().enumerate().take(self.d - 1) {
            let after = self.d - k - 1;
            let mk = mk as usize;
            // vectors sharing the prefix with a smaller entry at k
            r += self.c(rem + after, after) - self.c(rem - mk + after, after);
            rem -= mk;
        }
        r
    }

    /// All vectors with the given total, in lexicographic order.
    pub fn layer_vectors(&self, total: usize) -> Vec<Vec<u32>> {
        let mut out = Vec::with_capacity(self.layer_len(total));
        let mut cur = vec![0u32; self.d];
        fn rec(k: usize, rem: u32, cur: &mut Vec<u32>, out: &mut Vec<Vec<u32>>) {
            let d = cur.len();
            if k == d - 1 {
                cur[k] = rem;
                out.push(cur.clone());
                return;
            }
            for v in 0..=rem {
                cur[k] = v;
                rec(k + 1, rem - v, cur, out);
            }
        }
        rec(0, total as u32, &mut cur, &mut out);
        out
    }
}

/// Options for [`StratumTable::build_with`].
#[derive(Debug, Clone, Copy)]
pub struct DpOptions {
    /// Maximum number of cached states.
    pub state_cap: u128,
    /// Rescale every layer regardless of magnitude.
    pub force_renormalise: bool,
}

impl Default for DpOptions {
    fn default() -> Self {
        Self { state_cap: DEFAULT_STATE_CAP, force_renormalise: false }
    }
}

/// Cached forward DP over counts vectors.
#[derive(Debug, Clone)]
pub struct StratumTable {
    qpd: ProductQpd,
    indexer: CountsIndexer,
    // layers[i][rank] = W⁽ⁱ⁾ / exp(log_scale[i])
    layers: Vec<Vec<f64>>,
    log_scale: Vec<f64>,
    keys: Vec<StratumKey>,
    weights: Vec<f64>,
}

impl StratumTable {
    /// Runs the forward DP with the default state cap.
    pub fn build(qpd: &ProductQpd) -> Result<Self> {
        Self::build_with(qpd, DpOptions::default())
    }

    pub fn build_with(qpd: &ProductQpd, opts: DpOptions) -> Result<Self> {
        let nu = qpd.nu();
        let d = qpd.width();
        let required = cached_state_count(nu, d)?;
        if required > opts.state_cap {
            return Err(QpdError::ResourceLimit { required, cap: opts.state_cap });
        }
        let indexer = CountsIndexer::new(nu, d);
        let mut layers: Vec<Vec<f64>> = Vec::with_capacity(nu + 1);
        let mut log_scale = Vec::with_capacity(nu + 1);
        layers.push(vec![1.0]);
        log_scale.push(0.0);

        for i in 1..=nu {
            let probs = qpd.local(i - 1).probs();
            let prev = &layers[i - 1];
            let mut layer = vec![0.0; indexer.layer_len(i)];
            // push each prefix state forward by one index
            for m in indexer.layer_vectors(i - 1) {
                let w = prev[indexer.rank(&m)];
                if w == 0.0 {
                    continue;
                }
                let mut next = m;
                for (k, &pk) in probs.iter().enumerate() {
                    if pk == 0.0 {
                        continue;
                    }
                    next[k] += 1;
                    layer[indexer.rank(&next)] += pk * w;
                    next[k] -= 1;
                }
            }
            let mut scale = log_scale[i - 1];
            let max = layer.iter().cloned().fold(0.0_f64, f64::max);
            if max > 0.0 && (opts.force_renormalise || max < UNDERFLOW_GUARD) {
                layer.iter_mut().for_each(|x| *x /= max);
                scale += max.ln();
            }
            layers.push(layer);
            log_scale.push(scale);
        }

        let keys = indexer.layer_vectors(nu);
        let final_scale = log_scale[nu].exp();
        let weights = layers[nu].iter().map(|w| w * final_scale).collect();
        Ok(Self { qpd: qpd.clone(), indexer, layers, log_scale, keys, weights })
    }

    pub fn nu(&self) -> usize {
        self.qpd.nu()
    }

    pub fn width(&self) -> usize {
        self.qpd.width()
    }

    /// `W⁽ⁱ⁾_m`, or 0 for vectors of the wrong total.
    pub fn layer_prob(&self, layer: usize, m: &[u32]) -> f64 {
        let total: usize = m.iter().map(|&x| x as usize).sum();
        if total != layer || layer > self.nu() || m.len() != self.width() {
            return 0.0;
        }
        self.layers[layer][self.indexer.rank(m)] * self.log_scale[layer].exp()
    }

    /// Sum and minimum of each layer, for diagnostics.
    pub fn layer_summaries(&self) -> Vec<(f64, f64)> {
        self.layers
            .iter()
            .zip(&self.log_scale)
            .map(|(layer, ls)| {
                let s = ls.exp();
                let sum = layer.iter().sum::<f64>() * s;
                let min = layer.iter().cloned().fold(f64::INFINITY, f64::min) * s;
                (sum, min)
            })
            .collect()
    }

    pub fn layer_len(&self, layer: usize) -> usize {
        self.layers[layer].len()
    }

    /// Final weight of a counts vector.
    pub fn weight_of(&self, m: &CountsVector) -> f64 {
        self.layer_prob(self.nu(), m.as_slice())
    }

    /// Backward probabilities `q_i(k | m⁽ⁱ⁾) = p_i(k) W⁽ⁱ⁻¹⁾_{m−e_k} / W⁽ⁱ⁾_m`
    /// for position `i` (1-based layer index).
    pub fn backward_probs(&self, layer: usize, m: &[u32]) -> Result<Vec<f64>> {
        let denom_rank = self.indexer.rank(m);
        let denom = self.layers[layer][denom_rank];
        if denom == 0.0 {
            return Err(QpdError::EmptyStratum(m.to_vec()));
        }
        let ratio = (self.log_scale[layer - 1] - self.log_scale[layer]).exp();
        let probs = self.qpd.local(layer - 1).probs();
        let mut out = vec![0.0; self.width()];
        let mut prev = m.to_vec();
        for k in 0..self.width() {
            if m[k] == 0 || probs[k] == 0.0 {
                continue;
            }
            prev[k] -= 1;
            out[k] = probs[k] * self.layers[layer - 1][self.indexer.rank(&prev)] * ratio / denom;
            prev[k] += 1;
        }
        Ok(out)
    }

    /// Draws `ℓ ~ p(ℓ | M = m)` by sampling positions in reverse order.
    pub fn conditional_sample<R: Rng + ?Sized>(
        &self,
        m: &CountsVector,
        rng: &mut R,
    ) -> Result<Configuration> {
        let nu = self.nu();
        let d = self.width();
        if m.0.len() != d || m.total() as usize != nu {
            return Err(QpdError::InvalidArgument(format!(
                "counts vector {m} does not describe {nu} positions of width {d}"
            )));
        }
        let mut rem = m.0.clone();
        if self.layers[nu][self.indexer.rank(&rem)] == 0.0 {
            return Err(QpdError::EmptyStratum(rem));
        }
        let mut out = vec![0u32; nu];
        let mut q = vec![0.0; d];
        for i in (1..=nu).rev() {
            let probs = self.qpd.local(i - 1).probs();
            let prev_layer = &self.layers[i - 1];
            // the common 1/W⁽ⁱ⁾ factor and layer scales cancel in the draw
            for k in 0..d {
                q[k] = 0.0;
                if rem[k] == 0 || probs[k] == 0.0 {
                    continue;
                }
                rem[k] -= 1;
                q[k] = probs[k] * prev_layer[self.indexer.rank(&rem)];
                rem[k] += 1;
            }
            let k = sample_categorical(&q, None, rng);
            out[i - 1] = k as u32;
            rem[k] -= 1;
        }
        Ok(Configuration(out))
    }

    /// Probability that [`StratumTable::conditional_sample`] returns `config`
    /// given its own counts vector: the product of the backward
    /// probabilities along the path.
    pub fn sampler_probability(&self, config: &Configuration) -> Result<f64> {
        self.qpd.validate(config)?;
        let mut rem = counts_of(config, self.width())?.0;
        let mut prob = 1.0;
        for i in (1..=self.nu()).rev() {
            let k = config.indices()[i - 1] as usize;
            prob *= self.backward_probs(i, &rem)?[k];
            rem[k] -= 1;
        }
        Ok(prob)
    }

    /// Final weights as CSV rows `m_1,...,m_d,w_m` in lexicographic order.
    pub fn weights_csv(&self) -> String {
        let mut out = String::new();
        let header: Vec<String> = (1..=self.width()).map(|k| format!("m{k}")).collect();
        out.push_str(&header.join(","));
        out.push_str(",w\n");
        for (key, w) in self.keys.iter().zip(&self.weights) {
            for m in key {
                out.push_str(&m.to_string());
                out.push(',');
            }
            out.push_str(&sig17(*w));
            out.push('\n');
        }
        out
    }
}

impl Stratification for StratumTable {
    fn name(&self) -> &'static str {
        "counts"
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
        let m = counts_of(config, self.width())?;
        Ok(self.indexer.rank(m.as_slice()))
    }

    fn sample_in<R: Rng + ?Sized>(&self, position: usize, rng: &mut R) -> Result<Configuration> {
        let key = self
            .keys
            .get(position)
            .ok_or_else(|| QpdError::InvalidArgument(format!("no stratum at position {position}")))?;
        self.conditional_sample(&CountsVector(key.clone()), rng)
    }
}

/// Strata sorted by decreasing mass with running cumulative sums.
#[derive(Debug, Clone, PartialEq)]
pub struct ConcentrationProfile {
    /// `(key, mass, cumulative mass)` in decreasing-mass order.
    pub rows: Vec<(StratumKey, f64, f64)>,
    pub threshold: f64,
    /// Smallest 1-based count of strata whose cumulative mass reaches the
    /// threshold.
    pub t_q: usize,
}

impl ConcentrationProfile {
    /// Fraction of strata needed to reach the threshold.
    pub fn fraction(&self) -> f64 {
        self.t_q as f64 / self.rows.len() as f64
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("rank,key,mass,cumulative\n");
        for (i, (key, mass, cum)) in self.rows.iter().enumerate() {
            let key: Vec<String> = key.iter().map(u32::to_string).collect();
            out.push_str(&format!(
                "{},{},{},{}\n",
                i + 1,
                key.join(" "),
                sig17(*mass),
                sig17(*cum)
            ));
        }
        out
    }
}

/// Sorts strata by decreasing mass (ties in lexicographic key order) and
/// finds the smallest prefix carrying at least `q` of the mass.
pub fn concentration_profile(
    keys: &[StratumKey],
    weights: &[f64],
    q: f64,
) -> Result<ConcentrationProfile> {
    if !(q > 0.0 && q < 1.0) {
        return Err(QpdError::InvalidArgument(format!("threshold {q} must lie in (0, 1)")));
    }
    if keys.len() != weights.len() || keys.is_empty() {
        return Err(QpdError::InvalidWeights("keys and weights must be non-empty and aligned".into()));
    }
    let mut order: Vec<usize> = (0..keys.len()).collect();
    order.sort_by(|&a, &b| weights[b].total_cmp(&weights[a]).then_with(|| keys[a].cmp(&keys[b])));
    let mut cum = 0.0;
    let mut t_q = None;
    let mut rows = Vec::with_capacity(order.len());
    for (i, &s) in order.iter().enumerate() {
        cum += weights[s];
        if t_q.is_none() && cum >= q {
            t_q = Some(i + 1);
        }
        rows.push((keys[s].clone(), weights[s], cum));
    }
    let t_q = t_q.unwrap_or(rows.len());
    Ok(ConcentrationProfile { rows, threshold: q, t_q })
}
