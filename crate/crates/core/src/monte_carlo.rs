//! Monte Carlo reference for gate and graph delays.
//!
//! Every random variable draws from its own ChaCha8 stream, selected by a
//! hash of the variable's label; sample `i` always reads word position `2i`
//! of that stream. Sample values therefore depend only on (seed, label,
//! index), never on chunking or thread count, and all reductions run
//! sequentially over the index order.

use std::collections::BTreeMap;
use std::sync::Arc;

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::distributions::CorrelatedPair;
use crate::error::{Result, SstaError};
use crate::gate_delay::GateInputs;
use crate::special::std_normal_quantile;
use crate::timing_graph::{NodeKind, TimingGraph};

/// Samples generated per parallel work item.
pub const CHUNK: usize = 1 << 15;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct McConfig {
    pub n_samples: usize,
    pub seed: u64,
}

impl McConfig {
    pub fn new(n_samples: usize, seed: u64) -> Result<Self> {
        let c = McConfig { n_samples, seed };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_samples == 0 {
            return Err(SstaError::domain("Monte Carlo needs at least one sample"));
        }
        Ok(())
    }
}

/// Stream id for a variable label.
fn stream_id(label: &str) -> u64 {
    let digest = Sha256::digest(label.as_bytes());
    u64::from_le_bytes(digest[..8].try_into().expect("digest has 32 bytes"))
}

/// Standard normal draws for one labelled variable starting at a sample index.
struct NormalStream {
    rng: ChaCha8Rng,
}

impl NormalStream {
    fn new(seed: u64, label: &str, start: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream_id(label));
        rng.set_word_pos(2 * start as u128);
        NormalStream { rng }
    }

    #[inline]
    fn next(&mut self) -> f64 {
        // midpoint of one of 2^53 equal cells, so u is never 0 or 1
        let u = ((self.rng.next_u64() >> 11) as f64 + 0.5) * (1.0 / 9_007_199_254_740_992.0);
        std_normal_quantile(u)
    }
}

/// Runs `fill(start, len)` over fixed chunks in parallel and concatenates
/// the per-output vectors in index order.
fn simulate<F>(n: usize, outputs: usize, fill: F) -> Vec<Vec<f64>>
where
    F: Fn(usize, usize) -> Vec<Vec<f64>> + Sync,
{
    let chunks: Vec<Vec<Vec<f64>>> = (0..n.div_ceil(CHUNK))
        .into_par_iter()
        .map(|c| {
            let start = c * CHUNK;
            fill(start, CHUNK.min(n - start))
        })
        .collect();
    let mut out: Vec<Vec<f64>> = (0..outputs).map(|_| Vec::with_capacity(n)).collect();
    for chunk in chunks {
        for (o, part) in out.iter_mut().zip(chunk) {
            o.extend(part);
        }
    }
    out
}

#[inline]
fn correlate(rho: f64, z1: f64, z2: f64) -> f64 {
    rho * z1 + ((1.0 - rho) * (1.0 + rho)).max(0.0).sqrt() * z2
}

/// Draws `(x1, x2)` with x1 = μ1 + σ1 z1 and
/// x2 = μ2 + σ2 (ρ z1 + √(1-ρ²) z2).
pub fn sample_correlated_pair(pair: &CorrelatedPair, cfg: &McConfig) -> Result<Vec<(f64, f64)>> {
    cfg.validate()?;
    let p = CorrelatedPair::new(pair.a, pair.b, pair.rho)?;
    let out = simulate(cfg.n_samples, 2, |start, len| {
        let mut s1 = NormalStream::new(cfg.seed, "pair/z1", start);
        let mut s2 = NormalStream::new(cfg.seed, "pair/z2", start);
        let (mut a, mut b) = (Vec::with_capacity(len), Vec::with_capacity(len));
        for _ in 0..len {
            let z1 = s1.next();
            let z2 = s2.next();
            a.push(p.a.mu + p.a.sigma * z1);
            b.push(p.b.mu + p.b.sigma * correlate(p.rho, z1, z2));
        }
        vec![a, b]
    });
    Ok(out[0].iter().copied().zip(out[1].iter().copied()).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub edges: Vec<f64>,
    pub counts: Vec<u64>,
}

impl Histogram {
    pub fn bin_width(&self, k: usize) -> f64 {
        self.edges[k + 1] - self.edges[k]
    }

    /// Counts scaled to a density.
    pub fn density(&self, k: usize) -> f64 {
        let n: u64 = self.counts.iter().sum();
        self.counts[k] as f64 / (n as f64 * self.bin_width(k))
    }
}

/// Summary of a set of samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McResult {
    pub n: usize,
    pub mean: f64,
    pub std: f64,
    pub skewness: f64,
    pub kurtosis: f64,
    pub se_mean: f64,
    pub se_std: f64,
    pub se_skewness: f64,
    pub se_kurtosis: f64,
    /// E[X^k] for k = 1..=4.
    pub raw_moments: [f64; 4],
    pub raw_moment_se: [f64; 4],
    pub histogram: Histogram,
    #[serde(skip)]
    sorted: Arc<Vec<f64>>,
}

#[derive(Default, Clone, Copy)]
struct Neumaier {
    sum: f64,
    c: f64,
}

impl Neumaier {
    #[inline]
    fn add(&mut self, v: f64) {
        let t = self.sum + v;
        if self.sum.abs() >= v.abs() {
            self.c += (self.sum - t) + v;
        } else {
            self.c += (v - t) + self.sum;
        }
        self.sum = t;
    }

    fn value(&self) -> f64 {
        self.sum + self.c
    }
}

fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let pos = p * (sorted.len() - 1) as f64;
    let i = pos.floor() as usize;
    let frac = pos - i as f64;
    if i + 1 >= sorted.len() {
        sorted[sorted.len() - 1]
    } else {
        sorted[i] + frac * (sorted[i + 1] - sorted[i])
    }
}

impl McResult {
    pub fn from_samples(mut samples: Vec<f64>) -> Result<Self> {
        if samples.is_empty() {
            return Err(SstaError::domain("no samples to summarise"));
        }
        if samples.iter().any(|v| !v.is_finite()) {
            return Err(SstaError::numerical("non-finite Monte Carlo sample"));
        }
        let n = samples.len();
        let nf = n as f64;
        let mut s = Neumaier::default();
        for &x in &samples {
            s.add(x);
        }
        let mean = s.value() / nf;

        let mut central = [Neumaier::default(); 3];
        let mut raw = [Neumaier::default(); 8];
        for &x in &samples {
            let d = x - mean;
            let d2 = d * d;
            central[0].add(d2);
            central[1].add(d2 * d);
            central[2].add(d2 * d2);
            let mut p = 1.0;
            for acc in raw.iter_mut() {
                p *= x;
                acc.add(p);
            }
        }
        let m2 = central[0].value() / nf;
        let m3 = central[1].value() / nf;
        let m4 = central[2].value() / nf;
        let std = m2.sqrt();
        let skewness = m3 / m2.powf(1.5);
        let kurtosis = m4 / (m2 * m2);

        // influence-function (delta method) variances
        let mut inf = [Neumaier::default(); 3];
        for &x in &samples {
            let z = (x - mean) / std;
            let z2 = z * z;
            inf[0].add((0.5 * std * (z2 - 1.0)).powi(2));
            inf[1].add((z2 * z - skewness - 3.0 * z - 1.5 * skewness * (z2 - 1.0)).powi(2));
            inf[2].add((z2 * z2 - kurtosis - 4.0 * skewness * z - 2.0 * kurtosis * (z2 - 1.0)).powi(2));
        }
        let se = |acc: &Neumaier| (acc.value() / nf).sqrt() / nf.sqrt();
        let mut raw_moments = [0.0; 4];
        let mut raw_moment_se = [0.0; 4];
        for k in 0..4 {
            let ek = raw[k].value() / nf;
            let e2k = raw[2 * k + 1].value() / nf;
            raw_moments[k] = ek;
            raw_moment_se[k] = ((e2k - ek * ek).max(0.0) / nf).sqrt();
        }

        samples.par_sort_unstable_by(f64::total_cmp);
        let histogram = histogram(&samples, mean, std);
        Ok(McResult {
            n,
            mean,
            std,
            skewness,
            kurtosis,
            se_mean: std / nf.sqrt(),
            se_std: se(&inf[0]),
            se_skewness: se(&inf[1]),
            se_kurtosis: se(&inf[2]),
            raw_moments,
            raw_moment_se,
            histogram,
            sorted: Arc::new(samples),
        })
    }

    /// Samples in ascending order.
    pub fn sorted_samples(&self) -> &[f64] {
        &self.sorted
    }
}

/// Freedman–Diaconis histogram over [mean ± 8 std] ∩ [min, max]; samples
/// outside the range land in the end bins so counts sum to n.
fn histogram(sorted: &[f64], mean: f64, std: f64) -> Histogram {
    let n = sorted.len();
    let lo = sorted[0].max(mean - 8.0 * std);
    let hi = sorted[n - 1].min(mean + 8.0 * std);
    if !(hi > lo) {
        return Histogram {
            edges: vec![sorted[0] - 0.5, sorted[0] + 0.5],
            counts: vec![n as u64],
        };
    }
    let iqr = quantile_sorted(sorted, 0.75) - quantile_sorted(sorted, 0.25);
    let h = 2.0 * iqr / (n as f64).cbrt();
    let bins = if h > 0.0 {
        ((hi - lo) / h).ceil().clamp(1.0, 10_000.0) as usize
    } else {
        1
    };
    let w = (hi - lo) / bins as f64;
    let edges: Vec<f64> = (0..=bins)
        .map(|k| if k == bins { hi } else { lo + k as f64 * w })
        .collect();
    let mut counts = vec![0u64; bins];
    for &x in sorted {
        let k = ((x - lo) / w).floor();
        let k = if k < 0.0 { 0 } else { (k as usize).min(bins - 1) };
        counts[k] += 1;
    }
    Histogram { edges, counts }
}

/// Kolmogorov–Smirnov distance sup_i max(|i/n - F(x_i)|, |(i-1)/n - F(x_i)|).
pub fn ks_distance<F>(sorted: &[f64], cdf: F) -> Result<f64>
where
    F: Fn(f64) -> f64 + Sync,
{
    if sorted.is_empty() {
        return Err(SstaError::domain("KS distance needs at least one sample"));
    }
    if sorted.windows(2).any(|w| w[0] > w[1]) {
        return Err(SstaError::domain("KS distance needs samples in ascending order"));
    }
    let nf = sorted.len() as f64;
    Ok(sorted
        .par_iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            let hi = (i + 1) as f64 / nf;
            let lo = i as f64 / nf;
            (hi - f).abs().max((lo - f).abs())
        })
        .reduce(|| 0.0, f64::max))
}

/// Samples η = max(X1, X2) + X0.
pub fn mc_gate_samples(g: &GateInputs, cfg: &McConfig) -> Result<Vec<f64>> {
    cfg.validate()?;
    g.x1.validate()?;
    g.x2.validate()?;
    g.x0.validate()?;
    CorrelatedPair::new(g.x1, g.x2, g.rho)?;
    let out = simulate(cfg.n_samples, 1, |start, len| {
        let mut s1 = NormalStream::new(cfg.seed, "gate/x1", start);
        let mut s2 = NormalStream::new(cfg.seed, "gate/x2", start);
        let mut s0 = NormalStream::new(cfg.seed, "gate/x0", start);
        let mut v = Vec::with_capacity(len);
        for _ in 0..len {
            let z1 = s1.next();
            let z2 = s2.next();
            let z0 = s0.next();
            let x1 = g.x1.mu + g.x1.sigma * z1;
            let x2 = g.x2.mu + g.x2.sigma * correlate(g.rho, z1, z2);
            v.push(x1.max(x2) + g.x0.mu + g.x0.sigma * z0);
        }
        vec![v]
    });
    Ok(out.into_iter().next().expect("one output"))
}

pub fn mc_gate(g: &GateInputs, cfg: &McConfig) -> Result<McResult> {
    McResult::from_samples(mc_gate_samples(g, cfg)?)
}

/// Per-sink samples of the whole graph, keyed by sink id.
pub fn mc_graph_samples(g: &TimingGraph, cfg: &McConfig) -> Result<BTreeMap<String, Vec<f64>>> {
    cfg.validate()?;
    let order = g.visit_order();
    let sinks = g.sinks();
    // second member of a correlated source pair -> (first member, rho)
    let mut partner: BTreeMap<usize, (usize, f64)> = BTreeMap::new();
    for spec in g.nodes().iter().filter(|s| s.input_rho != 0.0) {
        partner.insert(spec.inputs[1], (spec.inputs[0], spec.input_rho));
    }
    let labels: Vec<String> = g
        .nodes()
        .iter()
        .map(|s| match s.kind {
            NodeKind::Source => format!("arrival/{}", s.id),
            NodeKind::Gate => format!("op/{}", s.id),
            NodeKind::Sink => String::new(),
        })
        .collect();

    let out = simulate(cfg.n_samples, sinks.len(), |start, len| {
        let mut streams: Vec<Option<NormalStream>> = g
            .nodes()
            .iter()
            .zip(&labels)
            .map(|(s, l)| (s.kind != NodeKind::Sink).then(|| NormalStream::new(cfg.seed, l, start)))
            .collect();
        let mut z = vec![0.0; g.len()];
        let mut value = vec![0.0; g.len()];
        let mut res: Vec<Vec<f64>> = sinks.iter().map(|_| Vec::with_capacity(len)).collect();
        for _ in 0..len {
            for (k, s) in streams.iter_mut().enumerate() {
                if let Some(s) = s {
                    z[k] = s.next();
                }
            }
            for &k in &order {
                let spec = g.node(k);
                value[k] = match spec.kind {
                    NodeKind::Source => {
                        let p = g.arrival(k).expect("validated sources have arrivals");
                        let zk = match partner.get(&k) {
                            Some(&(first, rho)) => correlate(rho, z[first], z[k]),
                            None => z[k],
                        };
                        p.mu + p.sigma * zk
                    }
                    NodeKind::Gate => {
                        let op = spec.op_time.expect("validated gates have op_time");
                        let m = spec
                            .inputs
                            .iter()
                            .map(|&i| value[i])
                            .fold(f64::NEG_INFINITY, f64::max);
                        m + op.mu + op.sigma * z[k]
                    }
                    NodeKind::Sink => spec
                        .inputs
                        .iter()
                        .map(|&i| value[i])
                        .fold(f64::NEG_INFINITY, f64::max),
                };
            }
            for (r, &k) in res.iter_mut().zip(&sinks) {
                r.push(value[k]);
            }
        }
        res
    });
    Ok(sinks.iter().map(|&k| g.node(k).id.clone()).zip(out).collect())
}

pub fn mc_graph(g: &TimingGraph, cfg: &McConfig) -> Result<BTreeMap<String, McResult>> {
    mc_graph_samples(g, cfg)?
        .into_iter()
        .map(|(id, v)| Ok((id, McResult::from_samples(v)?)))
        .collect()
}
