//! Dimension profiling: how much each state dimension changes under the
//! behaviour policy, the entropy of its scale-normalised changes, and the
//! softmax weights that favour low-entropy (rarely changing) dimensions.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::math;

pub const DEFAULT_EPSILON: f64 = 1e-6;
pub const SIMPLEX_TOLERANCE: f64 = 1e-9;

/// Mean absolute one-step change per dimension plus `epsilon`.
pub fn estimate_scales<'a, I>(transitions: I, epsilon: f64) -> Result<Vec<f64>>
where
    I: IntoIterator<Item = (&'a [f64], &'a [f64])>,
{
    let mut sums: Vec<f64> = Vec::new();
    let mut n = 0usize;
    for (s, next) in transitions {
        if n == 0 {
            sums = vec![0.0; s.len()];
        }
        if s.len() != sums.len() || next.len() != sums.len() {
            return Err(Error::Input("transitions have inconsistent dimensions".into()));
        }
        for ((acc, a), b) in sums.iter_mut().zip(s).zip(next) {
            *acc += math::abs(b - a);
        }
        n += 1;
    }
    if n == 0 {
        return Err(Error::Input("cannot estimate scales from zero transitions".into()));
    }
    Ok(sums.into_iter().map(|t| t / n as f64 + epsilon).collect())
}

/// Per-dimension counts of scale-normalised changes rounded to two decimals.
/// Bins are keyed by the rounded value times 100.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct DeltaHistogram {
    pub bins: Vec<BTreeMap<i64, u64>>,
    pub total: u64,
}

impl DeltaHistogram {
    pub fn new(dim: usize) -> Self {
        DeltaHistogram {
            bins: vec![BTreeMap::new(); dim],
            total: 0,
        }
    }

    pub fn dim(&self) -> usize {
        self.bins.len()
    }

    pub fn record(&mut self, s: &[f64], next: &[f64], scales: &[f64]) -> Result<()> {
        if s.len() != self.dim() || next.len() != self.dim() || scales.len() != self.dim() {
            return Err(Error::Input("transition does not match histogram dimension".into()));
        }
        for (d, bins) in self.bins.iter_mut().enumerate() {
            let key = bin_key((next[d] - s[d]) / scales[d]);
            *bins.entry(key).or_insert(0) += 1;
        }
        self.total += 1;
        Ok(())
    }

    /// Adds the counts of a histogram built over another shard.
    pub fn merge(&mut self, other: &DeltaHistogram) -> Result<()> {
        if other.dim() != self.dim() {
            return Err(Error::Input("cannot merge histograms of different dimension".into()));
        }
        for (mine, theirs) in self.bins.iter_mut().zip(&other.bins) {
            for (&k, &c) in theirs {
                *mine.entry(k).or_insert(0) += c;
            }
        }
        self.total += other.total;
        Ok(())
    }

    /// Rounded bin value for `key`.
    pub fn bin_value(key: i64) -> f64 {
        key as f64 / 100.0
    }
}

fn bin_key(x: f64) -> i64 {
    math::round(x * 100.0) as i64
}

pub fn build_histogram<'a, I>(transitions: I, scales: &[f64]) -> Result<DeltaHistogram>
where
    I: IntoIterator<Item = (&'a [f64], &'a [f64])>,
{
    if let Some(s) = scales.iter().find(|&&s| !(s > 0.0)) {
        return Err(Error::Input(format!("scales must be positive, found {s}")));
    }
    let mut h = DeltaHistogram::new(scales.len());
    for (s, next) in transitions {
        h.record(s, next, scales)?;
    }
    Ok(h)
}

/// Plug-in entropy in nats of a set of counts.
pub fn plugin_entropy<I: IntoIterator<Item = u64>>(counts: I) -> f64 {
    let counts: Vec<u64> = counts.into_iter().filter(|&c| c > 0).collect();
    let total: u64 = counts.iter().sum();
    if total == 0 {
        return 0.0;
    }
    let n = total as f64;
    let mut h = 0.0;
    for c in counts {
        let p = c as f64 / n;
        h -= p * math::ln(p);
    }
    // -0.0 for a single bin
    h + 0.0
}

/// Raw and min-max normalised entropy per dimension.
#[derive(Clone, Debug, PartialEq)]
pub struct Entropies {
    pub raw: Vec<f64>,
    pub normalized: Vec<f64>,
}

pub fn entropies(h: &DeltaHistogram) -> Result<Entropies> {
    if let Some(d) = h.bins.iter().position(|b| b.is_empty()) {
        return Err(Error::Input(format!("dimension {d} has no samples")));
    }
    let raw: Vec<f64> = h.bins.iter().map(|b| plugin_entropy(b.values().copied())).collect();
    Ok(Entropies {
        normalized: min_max_normalize(&raw),
        raw,
    })
}

/// Maps values onto `[0, 1]`; equal values all map to 0.
pub fn min_max_normalize(values: &[f64]) -> Vec<f64> {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = hi - lo;
    values
        .iter()
        .map(|&v| if span > 0.0 { (v - lo) / span } else { 0.0 })
        .collect()
}

/// `softmax(-h / tau)`, computed with the maximum subtracted.
pub fn weights_from_entropy(h: &[f64], tau: f64) -> Result<Vec<f64>> {
    softmax_neg(h, tau)
}

pub(crate) fn softmax_neg(h: &[f64], tau: f64) -> Result<Vec<f64>> {
    if !(tau > 0.0) {
        return Err(Error::Config(format!("softmax temperature must be positive, got {tau}")));
    }
    if h.is_empty() {
        return Ok(Vec::new());
    }
    let logits: Vec<f64> = h.iter().map(|&x| -x / tau).collect();
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&l| math::exp(l - max)).collect();
    let z: f64 = exps.iter().sum();
    Ok(exps.into_iter().map(|e| e / z).collect())
}

pub fn check_simplex(w: &[f64]) -> Result<()> {
    let sum: f64 = w.iter().sum();
    if w.iter().any(|&x| !(x >= 0.0)) || math::abs(sum - 1.0) > SIMPLEX_TOLERANCE {
        return Err(Error::Input(format!("weights are not a distribution (sum {sum})")));
    }
    Ok(())
}

/// `(1 - phi) * old + phi * new`
pub fn ema_update(old: &[f64], new: &[f64], phi: f64) -> Result<Vec<f64>> {
    if !(0.0..=1.0).contains(&phi) {
        return Err(Error::Config(format!("EMA rate must lie in [0, 1], got {phi}")));
    }
    if old.len() != new.len() {
        return Err(Error::Input("weight vectors differ in length".into()));
    }
    check_simplex(old)?;
    check_simplex(new)?;
    Ok(old.iter().zip(new).map(|(o, n)| (1.0 - phi) * o + phi * n).collect())
}

/// Smallest integer horizon `T >= (target - initial) / rate`, or 0 when the
/// initial entropy already meets the target.
pub fn required_horizon(target: f64, initial: f64, rate: f64) -> Result<u64> {
    if !(rate > 0.0) {
        return Err(Error::Domain(format!("per-step entropy rate must be positive, got {rate}")));
    }
    if initial >= target {
        return Ok(0);
    }
    Ok(math::ceil((target - initial) / rate) as u64)
}

/// Scales, entropies and weights of every state dimension.
#[derive(Clone, Debug, PartialEq)]
pub struct DimensionProfile {
    pub scale: Vec<f64>,
    pub raw_entropy: Vec<f64>,
    pub entropy: Vec<f64>,
    pub weight: Vec<f64>,
}

impl DimensionProfile {
    pub fn dim(&self) -> usize {
        self.scale.len()
    }
}

/// Full estimation pipeline over a batch of `(s, s')` pairs.
pub fn profile(transitions: &[(Vec<f64>, Vec<f64>)], epsilon: f64, tau: f64) -> Result<DimensionProfile> {
    let pairs = || transitions.iter().map(|(a, b)| (a.as_slice(), b.as_slice()));
    let scale = estimate_scales(pairs(), epsilon)?;
    let hist = build_histogram(pairs(), &scale)?;
    let h = entropies(&hist)?;
    let weight = weights_from_entropy(&h.normalized, tau)?;
    Ok(DimensionProfile {
        scale,
        raw_entropy: h.raw,
        entropy: h.normalized,
        weight,
    })
}

/// Mean absolute change per dimension after dividing by each dimension's
/// observed value range; small values mark slowly changing dimensions.
pub fn mean_range_normalized_change(transitions: &[(Vec<f64>, Vec<f64>)]) -> Result<Vec<f64>> {
    let first = transitions
        .first()
        .ok_or_else(|| Error::Input("no transitions".into()))?;
    let d = first.0.len();
    let mut lo = vec![f64::INFINITY; d];
    let mut hi = vec![f64::NEG_INFINITY; d];
    for (s, next) in transitions {
        if s.len() != d || next.len() != d {
            return Err(Error::Input("transitions have inconsistent dimensions".into()));
        }
        for k in 0..d {
            lo[k] = lo[k].min(s[k]).min(next[k]);
            hi[k] = hi[k].max(s[k]).max(next[k]);
        }
    }
    let mut sums = vec![0.0; d];
    for (s, next) in transitions {
        for k in 0..d {
            let range = hi[k] - lo[k];
            if range > 0.0 {
                sums[k] += math::abs(next[k] - s[k]) / range;
            }
        }
    }
    Ok(sums.into_iter().map(|x| x / transitions.len() as f64).collect())
}
