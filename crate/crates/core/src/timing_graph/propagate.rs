//! Level-by-level propagation of arrival distributions (GaKeDA).
//!
//! Each gate combines every component pair of its two input mixtures with
//! the exact gate density, then refits the weighted sum onto a fresh comb
//! placed at the node's mean ± `support_sigmas` standard deviations.

use log::warn;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::distributions::{clark_max_moments, CorrelatedPair, GaussianParams};
use crate::error::{Result, SstaError};
use crate::gate_delay::{GateInputs, GateKernel, PdfForm};
use crate::gmm::{build_comb, decompose_samples, prune, sample_grid, CombConfig, GaussianMixture, Moments};

use super::{NodeKind, TimingGraph};

/// Delay distribution at a node.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ArrivalDistribution {
    Gaussian(GaussianParams),
    Mixture(GaussianMixture),
}

impl ArrivalDistribution {
    /// (weight, component) pairs; a Gaussian is one component of weight 1.
    pub fn components(&self) -> Vec<(f64, GaussianParams)> {
        match self {
            ArrivalDistribution::Gaussian(p) => vec![(1.0, *p)],
            ArrivalDistribution::Mixture(m) => m.components().iter().map(|c| (c.weight, c.params)).collect(),
        }
    }

    pub fn is_gaussian(&self) -> bool {
        matches!(self, ArrivalDistribution::Gaussian(_))
    }

    pub fn pdf(&self, x: f64) -> f64 {
        match self {
            ArrivalDistribution::Gaussian(p) => p.density(x),
            ArrivalDistribution::Mixture(m) => m.pdf(x),
        }
    }

    pub fn cdf(&self, x: f64) -> f64 {
        match self {
            ArrivalDistribution::Gaussian(p) => p.cdf(x),
            ArrivalDistribution::Mixture(m) => m.cdf(x),
        }
    }

    pub fn moments(&self) -> Moments {
        match self {
            ArrivalDistribution::Gaussian(p) => Moments {
                mean: p.mu,
                std: p.sigma,
                skewness: 0.0,
                kurtosis: 3.0,
            },
            ArrivalDistribution::Mixture(m) => m.moments(),
        }
    }

    /// Sum with an independent Gaussian, exact for every component.
    pub fn convolve_gaussian(&self, op: &GaussianParams) -> Result<Self> {
        Ok(match self {
            ArrivalDistribution::Gaussian(p) => ArrivalDistribution::Gaussian(GaussianParams::new(
                p.mu + op.mu,
                (p.variance() + op.variance()).sqrt(),
            )?),
            ArrivalDistribution::Mixture(m) => ArrivalDistribution::Mixture(m.convolve_gaussian(op)?),
        })
    }
}

/// How many points the node density is sampled at before fitting.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SampleCount {
    /// `k × comb_size` points.
    PerComponent(usize),
    Fixed(usize),
}

impl SampleCount {
    pub fn resolve(&self, m: usize) -> usize {
        match *self {
            SampleCount::PerComponent(k) => k * m,
            SampleCount::Fixed(n) => n,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PropagationConfig {
    pub comb_size: usize,
    pub width_factor: f64,
    pub samples: SampleCount,
    /// Use the linear-in-rho gate density for correlated mixture inputs.
    pub weak_corr: bool,
    /// Comb half-width in node standard deviations.
    pub support_sigmas: f64,
    /// Mixture components lighter than this are pruned after each fit.
    pub w_min: f64,
    /// Log a warning when t* exceeds this fraction of the sampled peak.
    pub residual_warn_rel: f64,
}

impl Default for PropagationConfig {
    fn default() -> Self {
        PropagationConfig {
            comb_size: 32,
            width_factor: 0.75,
            samples: SampleCount::PerComponent(8),
            weak_corr: false,
            support_sigmas: 6.0,
            w_min: crate::gmm::DEFAULT_W_MIN,
            residual_warn_rel: 1e-3,
        }
    }
}

impl PropagationConfig {
    pub fn with_comb_size(mut self, m: usize) -> Self {
        self.comb_size = m;
        self
    }

    pub fn validate(&self) -> Result<()> {
        CombConfig::new(self.comb_size, (0.0, 1.0), self.width_factor)?;
        let n = self.samples.resolve(self.comb_size);
        if n < self.comb_size {
            return Err(SstaError::domain(format!(
                "need at least comb-size ({}) samples per fit, got {n}",
                self.comb_size
            )));
        }
        if !(self.support_sigmas > 0.0) {
            return Err(SstaError::domain("support_sigmas must be positive"));
        }
        Ok(())
    }
}

struct PairTerm {
    weight: f64,
    kernel: GateKernel,
    mean: f64,
    var: f64,
}

fn pair_terms(
    in1: &ArrivalDistribution,
    in2: &ArrivalDistribution,
    op: &GaussianParams,
    rho: f64,
    cfg: &PropagationConfig,
) -> Result<Vec<PairTerm>> {
    let (form, pair_rho) = if in1.is_gaussian() && in2.is_gaussian() {
        (PdfForm::Exact, rho)
    } else if rho == 0.0 {
        (PdfForm::Independent, 0.0)
    } else if cfg.weak_corr {
        (PdfForm::WeakCorr, rho)
    } else {
        return Err(SstaError::UnsupportedCorrelation { rho });
    };
    let c1 = in1.components();
    let c2 = in2.components();
    let mut terms = Vec::with_capacity(c1.len() * c2.len());
    for &(wa, a) in &c1 {
        for &(wb, b) in &c2 {
            let g = GateInputs::new(a, b, *op, pair_rho)?;
            let kernel = GateKernel::new(&g, form)?;
            // Clark moments of the max are exact; the weak form is placed by its ρ = 0 moments
            let moment_rho = if form == PdfForm::WeakCorr { 0.0 } else { pair_rho };
            let (m, v) = clark_max_moments(&CorrelatedPair {
                a,
                b,
                rho: moment_rho,
            })?;
            terms.push(PairTerm {
                weight: wa * wb,
                kernel,
                mean: m + op.mu,
                var: v + op.variance(),
            });
        }
    }
    Ok(terms)
}

/// Combines two arrivals through a gate and refits the result onto a comb.
/// Returns the new distribution and the fit's L∞ residual t*.
pub fn propagate_gate(
    in1: &ArrivalDistribution,
    in2: &ArrivalDistribution,
    op: &GaussianParams,
    rho: f64,
    cfg: &PropagationConfig,
) -> Result<(ArrivalDistribution, f64)> {
    cfg.validate()?;
    op.validate()?;
    let terms = pair_terms(in1, in2, op, rho, cfg)?;
    let mean: f64 = terms.iter().map(|t| t.weight * t.mean).sum();
    let var: f64 = terms
        .iter()
        .map(|t| t.weight * (t.var + (t.mean - mean).powi(2)))
        .sum();
    let sd = var.sqrt();
    if !(sd > 0.0 && sd.is_finite() && mean.is_finite()) {
        return Err(SstaError::numerical(format!(
            "gate output has degenerate moments (mean {mean}, std {sd})"
        )));
    }
    let half = cfg.support_sigmas * sd;
    let comb_cfg = CombConfig::new(cfg.comb_size, (mean - half, mean + half), cfg.width_factor)?;
    let comb = build_comb(&comb_cfg)?;
    let samples: Vec<(f64, f64)> = sample_grid(comb_cfg.support, cfg.samples.resolve(cfg.comb_size))
        .into_iter()
        .map(|x| {
            let y: f64 = terms.iter().map(|t| t.weight * t.kernel.pdf(x)).sum();
            // the weak-correlation form can dip slightly below zero
            (x, y.max(0.0))
        })
        .collect();
    let peak = samples.iter().map(|s| s.1).fold(0.0, f64::max);
    let fit = decompose_samples(&samples, &comb)?;
    let residual = fit.linf_residual;
    if residual > cfg.residual_warn_rel * peak {
        warn!(
            "comb fit residual {residual:e} exceeds {:e} of the peak density {peak:e}",
            cfg.residual_warn_rel
        );
    }
    let mixture = prune(&fit.mixture, cfg.w_min)?;
    Ok((ArrivalDistribution::Mixture(mixture), residual))
}

/// Folds ≥ 2 arrivals pairwise left to right; intermediate maxima use a
/// floored zero operation time and `op` is added in the last step. The
/// residual is the largest one along the fold.
pub fn fold_multi_input(
    inputs: &[ArrivalDistribution],
    op: &GaussianParams,
    cfg: &PropagationConfig,
) -> Result<(ArrivalDistribution, f64)> {
    fold_with_rho(inputs, op, 0.0, cfg)
}

fn fold_with_rho(
    inputs: &[ArrivalDistribution],
    op: &GaussianParams,
    rho: f64,
    cfg: &PropagationConfig,
) -> Result<(ArrivalDistribution, f64)> {
    if inputs.len() < 2 {
        return Err(SstaError::domain(format!(
            "folding needs at least two inputs, got {}",
            inputs.len()
        )));
    }
    if inputs.len() == 2 {
        return propagate_gate(&inputs[0], &inputs[1], op, rho, cfg);
    }
    let zero = GaussianParams { mu: 0.0, sigma: 0.0 };
    let last = inputs.len() - 1;
    let mut acc = inputs[0].clone();
    let mut worst = 0.0f64;
    for (k, next) in inputs.iter().enumerate().skip(1) {
        let step_op = if k == last { op } else { &zero };
        let (d, r) = propagate_gate(&acc, next, step_op, 0.0, cfg)?;
        acc = d;
        worst = worst.max(r);
    }
    Ok((acc, worst))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeResult {
    pub id: String,
    pub kind: NodeKind,
    pub level: usize,
    pub moments: Moments,
    /// L∞ residual of the node's comb fit; 0 where no fit was needed.
    pub residual: f64,
    pub distribution: ArrivalDistribution,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PropagationResult {
    /// One entry per node, in visit order.
    pub nodes: Vec<NodeResult>,
    pub levels: Vec<Vec<String>>,
}

impl PropagationResult {
    pub fn get(&self, id: &str) -> Option<&NodeResult> {
        self.nodes.iter().find(|n| n.id == id)
    }

    pub fn visit_order(&self) -> Vec<&str> {
        self.nodes.iter().map(|n| n.id.as_str()).collect()
    }
}

fn node_distribution(
    g: &TimingGraph,
    k: usize,
    done: &[Option<ArrivalDistribution>],
    cfg: &PropagationConfig,
) -> Result<(ArrivalDistribution, f64)> {
    let spec = g.node(k);
    let inputs: Vec<ArrivalDistribution> = spec
        .inputs
        .iter()
        .map(|&i| done[i].clone().expect("predecessors are on earlier levels"))
        .collect();
    match spec.kind {
        NodeKind::Source => {
            let mut p = g
                .arrival(k)
                .ok_or_else(|| SstaError::MissingArrival(spec.id.clone()))?;
            if p.sigma == 0.0 {
                // point masses become narrow Gaussians
                p.sigma = crate::gate_delay::SIGMA_FLOOR_REL * g.scale();
            }
            Ok((ArrivalDistribution::Gaussian(p), 0.0))
        }
        NodeKind::Gate => {
            let op = spec.op_time.expect("validated gates carry op_time");
            if inputs.len() == 1 {
                Ok((inputs[0].convolve_gaussian(&op)?, 0.0))
            } else {
                fold_with_rho(&inputs, &op, spec.input_rho, cfg)
            }
        }
        NodeKind::Sink => {
            if inputs.len() == 1 {
                Ok((inputs[0].clone(), 0.0))
            } else {
                fold_multi_input(&inputs, &GaussianParams { mu: 0.0, sigma: 0.0 }, cfg)
            }
        }
    }
}

/// Propagates arrival distributions over the whole graph. Nodes of one
/// level are computed in parallel.
pub fn gakeda_run(g: &TimingGraph, cfg: &PropagationConfig) -> Result<PropagationResult> {
    cfg.validate()?;
    let mut done: Vec<Option<ArrivalDistribution>> = vec![None; g.len()];
    let mut residual = vec![0.0; g.len()];
    for (level, members) in g.levels().iter().enumerate() {
        let out: Vec<Result<(ArrivalDistribution, f64)>> = members
            .par_iter()
            .map(|&k| node_distribution(g, k, &done, cfg))
            .collect();
        for (&k, r) in members.iter().zip(out) {
            let (d, res) = r.map_err(|e| SstaError::AtNode {
                node: g.node(k).id.clone(),
                level,
                source: Box::new(e),
            })?;
            done[k] = Some(d);
            residual[k] = res;
        }
    }
    let nodes = g
        .visit_order()
        .into_iter()
        .map(|k| {
            let distribution = done[k].take().expect("every node visited");
            NodeResult {
                id: g.node(k).id.clone(),
                kind: g.node(k).kind,
                level: g.level_of(k),
                moments: distribution.moments(),
                residual: residual[k],
                distribution,
            }
        })
        .collect();
    Ok(PropagationResult {
        nodes,
        levels: g.level_ids(),
    })
}
