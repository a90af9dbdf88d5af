//! Statistical tests for comparing search conditions.
//!
//! Resampling loops draw resample `i` from a ChaCha stream `i` under the caller's
//! seed, so results do not depend on evaluation order.

use std::collections::{BTreeMap, BTreeSet};
use std::io;

use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal, StudentsT};
use statrs::function::factorial::ln_binomial;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum StatsError {
    #[error("{test} needs at least {need} observations per group, got {got}")]
    TooFew { test: &'static str, need: usize, got: usize },
    #[error("both groups have zero variance")]
    ZeroVariance,
    #[error("contingency table is all zeros")]
    AllZeroTable,
    #[error("input vector is constant")]
    ConstantInput,
    #[error("feature vectors do not share a schema")]
    Schema,
    #[error("every feature has zero range")]
    ZeroRange,
    #[error("labels need at least two groups with two members each")]
    DegenerateLabels,
    #[error("matrix is {rows}x{cols} but there are {labels} labels")]
    Shape { rows: usize, cols: usize, labels: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatReport {
    pub test: String,
    pub statistic: f64,
    pub raw_p: f64,
    pub adjusted_p: Option<f64>,
    pub effect_size: Option<f64>,
    pub ci_low: Option<f64>,
    pub ci_high: Option<f64>,
    pub n_a: usize,
    pub n_b: usize,
    pub family: Option<String>,
    /// Free-form label, e.g. "smiles_like: agent vs hp_only".
    pub comparison: String,
}

impl StatReport {
    fn new(test: &str, statistic: f64, raw_p: f64, n_a: usize, n_b: usize) -> Self {
        Self {
            test: test.to_string(),
            statistic,
            raw_p: raw_p.clamp(0.0, 1.0),
            adjusted_p: None,
            effect_size: None,
            ci_low: None,
            ci_high: None,
            n_a,
            n_b,
            family: None,
            comparison: String::new(),
        }
    }

    pub fn in_family(mut self, family: impl Into<String>) -> Self {
        self.family = Some(family.into());
        self
    }

    pub fn labelled(mut self, comparison: impl Into<String>) -> Self {
        self.comparison = comparison.into();
        self
    }
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample variance (n − 1 denominator).
fn var(xs: &[f64]) -> f64 {
    let m = mean(xs);
    xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() as f64 - 1.0)
}

fn stream_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Linear-interpolated quantile of sorted data.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Percentile bootstrap of `mean(a) − mean(b)`, resampling each group with
/// replacement at its own size. Two-sided p is `2·min(P(d ≤ 0), P(d ≥ 0))`
/// clamped to `[1/resamples, 1]`.
pub fn bootstrap_ci(a: &[f64], b: &[f64], resamples: usize, seed: u64) -> Result<StatReport, StatsError> {
    let got = a.len().min(b.len());
    if got == 0 {
        return Err(StatsError::TooFew { test: "bootstrap", need: 1, got });
    }
    let resamples = resamples.max(1);
    let mut diffs: Vec<f64> = (0..resamples)
        .map(|i| {
            let mut rng = stream_rng(seed, i as u64);
            let ma = (0..a.len()).map(|_| a[rng.random_range(0..a.len())]).sum::<f64>() / a.len() as f64;
            let mb = (0..b.len()).map(|_| b[rng.random_range(0..b.len())]).sum::<f64>() / b.len() as f64;
            ma - mb
        })
        .collect();
    diffs.sort_by(f64::total_cmp);
    let r = resamples as f64;
    let le = diffs.iter().filter(|&&d| d <= 0.0).count() as f64 / r;
    let ge = diffs.iter().filter(|&&d| d >= 0.0).count() as f64 / r;
    let p = (2.0 * le.min(ge)).clamp(1.0 / r, 1.0);
    let mut rep = StatReport::new("bootstrap", mean(a) - mean(b), p, a.len(), b.len());
    rep.ci_low = Some(quantile(&diffs, 0.025));
    rep.ci_high = Some(quantile(&diffs, 0.975));
    Ok(rep)
}

/// Welch's unequal-variance t-test, two-sided. Two zero-variance groups give
/// p = 1 for equal means and p = 0 otherwise.
pub fn welch_t(a: &[f64], b: &[f64]) -> Result<StatReport, StatsError> {
    let got = a.len().min(b.len());
    if got < 2 {
        return Err(StatsError::TooFew { test: "welch_t", need: 2, got });
    }
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (sa, sb) = (var(a) / na, var(b) / nb);
    let diff = mean(a) - mean(b);
    if sa + sb == 0.0 {
        let (t, p) = if diff == 0.0 { (0.0, 1.0) } else { (diff.signum() * f64::INFINITY, 0.0) };
        return Ok(StatReport::new("welch_t", t, p, a.len(), b.len()));
    }
    let t = diff / (sa + sb).sqrt();
    let dist = StudentsT::new(0.0, 1.0, welch_df(a, b)).expect("df > 0");
    Ok(StatReport::new("welch_t", t, 2.0 * dist.cdf(-t.abs()), a.len(), b.len()))
}

/// Welch–Satterthwaite degrees of freedom.
pub fn welch_df(a: &[f64], b: &[f64]) -> f64 {
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (sa, sb) = (var(a) / na, var(b) / nb);
    (sa + sb).powi(2) / (sa * sa / (na - 1.0) + sb * sb / (nb - 1.0))
}

/// Midranks (1-based) of `xs`.
pub fn midranks(xs: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..xs.len()).collect();
    idx.sort_by(|&i, &j| xs[i].total_cmp(&xs[j]));
    let mut ranks = vec![0.0; xs.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && xs[idx[j + 1]] == xs[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

/// Pair-product limit for the exact Mann–Whitney path.
pub const MANN_WHITNEY_EXACT_LIMIT: usize = 400;

/// `U` counts pairs with `a > b` (ties count ½). Exact two-sided p by
/// enumerating every split of the pooled midranks when `|a|·|b| ≤ 400`,
/// otherwise the tie-corrected normal approximation with continuity correction.
pub fn mann_whitney_u(a: &[f64], b: &[f64]) -> Result<StatReport, StatsError> {
    let got = a.len().min(b.len());
    if got == 0 {
        return Err(StatsError::TooFew { test: "mann_whitney_u", need: 1, got });
    }
    let (na, nb) = (a.len(), b.len());
    let pooled: Vec<f64> = a.iter().chain(b).copied().collect();
    let ranks = midranks(&pooled);
    let ra: f64 = ranks[..na].iter().sum();
    let u = ra - (na * (na + 1)) as f64 / 2.0;
    let mu = (na * nb) as f64 / 2.0;
    let p = if na * nb <= MANN_WHITNEY_EXACT_LIMIT {
        exact_u_p(&ranks, na, u)
    } else {
        let n = (na + nb) as f64;
        let mut ties = BTreeMap::new();
        for r in &ranks {
            *ties.entry(r.to_bits()).or_insert(0usize) += 1;
        }
        let tie_term: f64 = ties.values().map(|&t| (t * t * t - t) as f64).sum::<f64>() / (n * (n - 1.0));
        let sigma = ((na * nb) as f64 / 12.0 * ((n + 1.0) - tie_term)).sqrt();
        if sigma == 0.0 {
            1.0
        } else {
            let z = ((u - mu).abs() - 0.5).max(0.0) / sigma;
            2.0 * Normal::standard().cdf(-z)
        }
    };
    Ok(StatReport::new("mann_whitney_u", u, p.min(1.0), na, nb))
}

/// Exact null distribution of the doubled rank sum over all `C(n, na)` subsets.
fn exact_u_p(ranks: &[f64], na: usize, u_obs: f64) -> f64 {
    let twice: Vec<usize> = ranks.iter().map(|r| (2.0 * r).round() as usize).collect();
    let max_sum: usize = twice.iter().sum();
    // counts[j][s]: subsets of size j with doubled rank sum s
    let mut counts = vec![vec![0u128; max_sum + 1]; na + 1];
    counts[0][0] = 1;
    for (i, &r) in twice.iter().enumerate() {
        for j in (1..=na.min(i + 1)).rev() {
            let (lo, hi) = counts.split_at_mut(j);
            for s in (r..=max_sum).rev() {
                hi[0][s] += lo[j - 1][s - r];
            }
        }
    }
    let total: u128 = counts[na].iter().sum();
    let base = (na * (na + 1)) as f64;
    let mu = (na * (ranks.len() - na)) as f64 / 2.0;
    let dev = (u_obs - mu).abs();
    let extreme: u128 = counts[na]
        .iter()
        .enumerate()
        .filter(|&(s, &c)| c > 0 && ((s as f64 - base) / 2.0 - mu).abs() >= dev - 1e-9)
        .map(|(_, &c)| c)
        .sum();
    extreme as f64 / total as f64
}

/// Relative slack when comparing hypergeometric probabilities to the observed one.
pub const FISHER_TIE_TOLERANCE: f64 = 1e-7;

/// Two-sided Fisher exact test on `[[a, b], [c, d]]`: the total probability of
/// every table with the same margins that is no more likely than the observed one.
pub fn fisher_exact(table: [[u64; 2]; 2]) -> Result<StatReport, StatsError> {
    let [[a, b], [c, d]] = table;
    let n = a + b + c + d;
    if n == 0 {
        return Err(StatsError::AllZeroTable);
    }
    let (r1, c1) = (a + b, a + c);
    let c2 = n - c1;
    let ln_p = |x: u64| ln_binomial(c1, x) + ln_binomial(c2, r1 - x) - ln_binomial(n, r1);
    let lo = r1.saturating_sub(c2);
    let hi = r1.min(c1);
    let obs = ln_p(a);
    let p: f64 = (lo..=hi).map(ln_p).filter(|&lp| lp <= obs + FISHER_TIE_TOLERANCE).map(f64::exp).sum();
    let odds = (a as f64 * d as f64) / (b as f64 * c as f64);
    let mut rep = StatReport::new("fisher_exact", odds, p.min(1.0), (a + b) as usize, (c + d) as usize);
    rep.effect_size = Some(odds);
    Ok(rep)
}

/// Cohen's d with the average-variance denominator `√((s_a² + s_b²)/2)`.
pub fn cohens_d(a: &[f64], b: &[f64]) -> Result<f64, StatsError> {
    let got = a.len().min(b.len());
    if got < 2 {
        return Err(StatsError::TooFew { test: "cohens_d", need: 2, got });
    }
    let s = ((var(a) + var(b)) / 2.0).sqrt();
    if s == 0.0 {
        return Err(StatsError::ZeroVariance);
    }
    Ok((mean(a) - mean(b)) / s)
}

fn pearson(x: &[f64], y: &[f64]) -> f64 {
    let (mx, my) = (mean(x), mean(y));
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx).powi(2);
        syy += (b - my).powi(2);
    }
    sxy / (sxx * syy).sqrt()
}

/// Spearman's ρ (Pearson on midranks) with a t-approximation p-value.
pub fn spearman_rho(x: &[f64], y: &[f64]) -> Result<StatReport, StatsError> {
    let got = x.len().min(y.len());
    if x.len() != y.len() || got < 3 {
        return Err(StatsError::TooFew { test: "spearman_rho", need: 3, got });
    }
    let (rx, ry) = (midranks(x), midranks(y));
    if rx.iter().all(|&r| r == rx[0]) || ry.iter().all(|&r| r == ry[0]) {
        return Err(StatsError::ConstantInput);
    }
    let rho = pearson(&rx, &ry).clamp(-1.0, 1.0);
    let df = x.len() as f64 - 2.0;
    let p = if rho.abs() >= 1.0 {
        0.0
    } else {
        let t = rho * (df / (1.0 - rho * rho)).sqrt();
        2.0 * StudentsT::new(0.0, 1.0, df).expect("df > 0").cdf(-t.abs())
    };
    Ok(StatReport::new("spearman_rho", rho, p, x.len(), y.len()))
}

/// Holm step-down adjustment, returned in input order.
pub fn holm_bonferroni(raw: &[f64]) -> Vec<f64> {
    let m = raw.len();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&i, &j| raw[i].total_cmp(&raw[j]));
    let mut out = vec![0.0; m];
    let mut running = 0.0f64;
    for (rank, &i) in order.iter().enumerate() {
        running = running.max(raw[i] * (m - rank) as f64).min(1.0);
        out[i] = running;
    }
    out
}

/// Fills `adjusted_p` within each family; reports without a family are their own.
pub fn adjust_families(reports: &mut [StatReport]) {
    let mut families: BTreeMap<Option<String>, Vec<usize>> = BTreeMap::new();
    for (i, r) in reports.iter().enumerate() {
        families.entry(r.family.clone()).or_default().push(i);
    }
    for (family, idx) in families {
        if family.is_none() {
            for i in idx {
                reports[i].adjusted_p = Some(reports[i].raw_p);
            }
            continue;
        }
        let raw: Vec<f64> = idx.iter().map(|&i| reports[i].raw_p).collect();
        for (i, adj) in idx.into_iter().zip(holm_bonferroni(&raw)) {
            reports[i].adjusted_p = Some(adj);
        }
    }
}

/// `P(X ≥ k)` for `X ~ Binomial(n, p0)`, summed term by term in log space.
pub fn binomial_tail(k: u64, n: u64, p0: f64) -> f64 {
    if k == 0 {
        return 1.0;
    }
    if k > n {
        return 0.0;
    }
    let (lp, lq) = (p0.ln(), (1.0 - p0).ln());
    (k..=n)
        .map(|i| (ln_binomial(n, i) + i as f64 * lp + (n - i) as f64 * lq).exp())
        .sum::<f64>()
        .min(1.0)
}

/// Mixed numeric/categorical features of one configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub track: String,
    pub label: String,
    pub numeric: BTreeMap<String, f64>,
    pub categorical: BTreeMap<String, String>,
}

/// Gower distances: numeric features contribute `|x − y| / range` (range over
/// the given vectors; zero-range features are dropped), categorical features
/// contribute a 0/1 mismatch, and the distance is the mean contribution.
pub fn gower_matrix(vectors: &[FeatureVector]) -> Result<Vec<Vec<f64>>, StatsError> {
    if vectors.len() < 2 {
        return Err(StatsError::TooFew { test: "gower_matrix", need: 2, got: vectors.len() });
    }
    let num_keys: BTreeSet<&String> = vectors[0].numeric.keys().collect();
    let cat_keys: BTreeSet<&String> = vectors[0].categorical.keys().collect();
    for v in vectors {
        if v.numeric.keys().collect::<BTreeSet<_>>() != num_keys || v.categorical.keys().collect::<BTreeSet<_>>() != cat_keys {
            return Err(StatsError::Schema);
        }
    }
    let ranges: Vec<(&String, f64)> = num_keys
        .iter()
        .map(|k| {
            let vals = vectors.iter().map(|v| v.numeric[*k]);
            let (lo, hi) = vals.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), x| (lo.min(x), hi.max(x)));
            (*k, hi - lo)
        })
        .filter(|&(_, r)| r > 0.0)
        .collect();
    let n_features = ranges.len() + cat_keys.len();
    if n_features == 0 {
        return Err(StatsError::ZeroRange);
    }
    let n = vectors.len();
    let mut m = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in i + 1..n {
            let (a, b) = (&vectors[i], &vectors[j]);
            let num: f64 = ranges.iter().map(|(k, r)| (a.numeric[*k] - b.numeric[*k]).abs() / r).sum();
            let cat = cat_keys.iter().filter(|k| a.categorical[**k] != b.categorical[**k]).count() as f64;
            let d = (num + cat) / n_features as f64;
            m[i][j] = d;
            m[j][i] = d;
        }
    }
    Ok(m)
}

fn cross_within_ratio(m: &[Vec<f64>], labels: &[usize]) -> f64 {
    let (mut cross, mut nc, mut within, mut nw) = (0.0, 0usize, 0.0, 0usize);
    for i in 0..labels.len() {
        for j in i + 1..labels.len() {
            if labels[i] == labels[j] {
                within += m[i][j];
                nw += 1;
            } else {
                cross += m[i][j];
                nc += 1;
            }
        }
    }
    (cross / nc as f64) / (within / nw as f64)
}

/// Label-permutation test of `mean(cross-label) / mean(within-label)` distance.
/// `p = (1 + #{permuted ≥ observed}) / (n_perm + 1)`.
pub fn permutation_cluster_test(
    matrix: &[Vec<f64>],
    labels: &[String],
    n_perm: usize,
    seed: u64,
) -> Result<StatReport, StatsError> {
    let n = labels.len();
    if matrix.len() != n || matrix.iter().any(|r| r.len() != n) {
        return Err(StatsError::Shape { rows: matrix.len(), cols: matrix.first().map_or(0, Vec::len), labels: n });
    }
    let mut ids = BTreeMap::new();
    let coded: Vec<usize> = labels
        .iter()
        .map(|l| {
            let next = ids.len();
            *ids.entry(l.clone()).or_insert(next)
        })
        .collect();
    let mut sizes = vec![0usize; ids.len()];
    for &c in &coded {
        sizes[c] += 1;
    }
    if sizes.len() < 2 || sizes.iter().filter(|&&s| s >= 2).count() < 2 {
        return Err(StatsError::DegenerateLabels);
    }
    let observed = cross_within_ratio(matrix, &coded);
    let hits = (0..n_perm)
        .filter(|&i| {
            let mut perm = coded.clone();
            perm.shuffle(&mut stream_rng(seed, i as u64));
            let s = cross_within_ratio(matrix, &perm);
            s >= observed * (1.0 - 1e-12) || s == observed
        })
        .count();
    let p = (1 + hits) as f64 / (n_perm + 1) as f64;
    Ok(StatReport::new("permutation_cluster", observed, p, n, sizes.len()))
}

/// One CSV row per report, in the order given.
pub fn write_stats_csv<W: io::Write>(reports: &[StatReport], w: W) -> Result<(), csv::Error> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record([
        "family", "comparison", "test", "statistic", "raw_p", "adjusted_p", "effect_size", "ci_low", "ci_high", "n_a", "n_b",
    ])?;
    let opt = |x: Option<f64>| x.map_or(String::new(), |v| v.to_string());
    for r in reports {
        out.write_record([
            r.family.clone().unwrap_or_default(),
            r.comparison.clone(),
            r.test.clone(),
            r.statistic.to_string(),
            r.raw_p.to_string(),
            opt(r.adjusted_p),
            opt(r.effect_size),
            opt(r.ci_low),
            opt(r.ci_high),
            r.n_a.to_string(),
            r.n_b.to_string(),
        ])?;
    }
    out.flush()?;
    Ok(())
}
