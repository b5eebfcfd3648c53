//! Gaussian mixtures and their fit onto a fixed Gaussian comb.
//!
//! A comb fixes the component means (uniform over a support interval) and a
//! shared width, leaving only the weights unknown. Fitting a sampled density
//! then becomes linear: the L∞ fit is a linear program ([`lp`]) and the L2
//! fit is nonnegative least squares ([`nnls`]).

pub mod lp;
pub mod nnls;

use log::warn;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::distributions::GaussianParams;
use crate::error::{Result, SstaError};

pub use lp::{lp_solve, LpProblem, LpSolution};

/// Default pruning threshold for mixture weights.
pub const DEFAULT_W_MIN: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianComponent {
    pub weight: f64,
    pub params: GaussianParams,
}

impl GaussianComponent {
    pub fn new(weight: f64, mu: f64, sigma: f64) -> Result<Self> {
        let params = GaussianParams::new(mu, sigma)?;
        params.require_positive()?;
        if !(weight.is_finite() && weight >= 0.0) {
            return Err(SstaError::domain(format!(
                "mixture weight must be finite and non-negative, got {weight}"
            )));
        }
        Ok(GaussianComponent { weight, params })
    }
}

/// Mean, standard deviation, skewness and (non-excess) kurtosis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Moments {
    pub mean: f64,
    pub std: f64,
    pub skewness: f64,
    pub kurtosis: f64,
}

/// Weighted sum of Gaussian densities with unit total weight and strictly
/// increasing component means.
///
/// Serialised as a list of `[weight, mu, sigma]` triples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<[f64; 3]>", into = "Vec<[f64; 3]>")]
pub struct GaussianMixture {
    components: Vec<GaussianComponent>,
}

impl TryFrom<Vec<[f64; 3]>> for GaussianMixture {
    type Error = SstaError;

    fn try_from(triples: Vec<[f64; 3]>) -> Result<Self> {
        GaussianMixture::from_triples(&triples)
    }
}

impl From<GaussianMixture> for Vec<[f64; 3]> {
    fn from(m: GaussianMixture) -> Self {
        m.triples()
    }
}

impl GaussianMixture {
    /// Sorts by mean and normalises the weights to sum to one.
    pub fn new(mut components: Vec<GaussianComponent>) -> Result<Self> {
        if components.is_empty() {
            return Err(SstaError::domain("a mixture needs at least one component"));
        }
        for c in &components {
            GaussianComponent::new(c.weight, c.params.mu, c.params.sigma)?;
        }
        components.sort_by(|a, b| a.params.mu.total_cmp(&b.params.mu));
        if let Some(w) = components.windows(2).find(|w| w[0].params.mu >= w[1].params.mu) {
            return Err(SstaError::domain(format!(
                "mixture component means must be distinct, {} appears twice",
                w[0].params.mu
            )));
        }
        let total: f64 = components.iter().map(|c| c.weight).sum();
        if !(total > 0.0 && total.is_finite()) {
            return Err(SstaError::domain(format!(
                "mixture weights must have a positive finite sum, got {total}"
            )));
        }
        if total != 1.0 {
            for c in &mut components {
                c.weight /= total;
            }
        }
        Ok(GaussianMixture { components })
    }

    pub fn single(p: GaussianParams) -> Result<Self> {
        p.require_positive()?;
        Ok(GaussianMixture {
            components: vec![GaussianComponent {
                weight: 1.0,
                params: p,
            }],
        })
    }

    pub fn from_triples(triples: &[[f64; 3]]) -> Result<Self> {
        let comps = triples
            .iter()
            .map(|&[w, mu, s]| GaussianComponent::new(w, mu, s))
            .collect::<Result<Vec<_>>>()?;
        Self::new(comps)
    }

    pub fn triples(&self) -> Vec<[f64; 3]> {
        self.components
            .iter()
            .map(|c| [c.weight, c.params.mu, c.params.sigma])
            .collect()
    }

    pub fn components(&self) -> &[GaussianComponent] {
        &self.components
    }

    pub fn len(&self) -> usize {
        self.components.len()
    }

    pub fn is_empty(&self) -> bool {
        self.components.is_empty()
    }

    pub fn pdf(&self, x: f64) -> f64 {
        self.components
            .iter()
            .map(|c| c.weight * c.params.density(x))
            .sum()
    }

    pub fn cdf(&self, x: f64) -> f64 {
        self.components.iter().map(|c| c.weight * c.params.cdf(x)).sum()
    }

    /// Exact raw moment E[Xⁿ] for n ≤ 4.
    pub fn raw_moment(&self, n: u32) -> Result<f64> {
        if n > 4 {
            return Err(SstaError::domain(format!(
                "moment order must be in 0..=4, got {n}"
            )));
        }
        Ok(self
            .components
            .iter()
            .map(|c| c.weight * gaussian_central_shifted(c.params.mu, c.params.sigma, n))
            .sum())
    }

    /// Moments from exact central-moment algebra.
    pub fn moments(&self) -> Moments {
        let mean: f64 = self.components.iter().map(|c| c.weight * c.params.mu).sum();
        let mut m = [0.0f64; 5];
        for c in &self.components {
            let d = c.params.mu - mean;
            for (k, slot) in m.iter_mut().enumerate().skip(2) {
                *slot += c.weight * gaussian_central_shifted(d, c.params.sigma, k as u32);
            }
        }
        let var = m[2];
        Moments {
            mean,
            std: var.sqrt(),
            skewness: m[3] / var.powf(1.5),
            kurtosis: m[4] / (var * var),
        }
    }

    /// [min μ - kσ, max μ + kσ] over the components.
    pub fn envelope(&self, k: f64) -> (f64, f64) {
        let params: Vec<_> = self.components.iter().map(|c| c.params).collect();
        crate::distributions::envelope(&params, k)
    }

    /// Every component translated by `mu` and widened by `sigma` in
    /// quadrature (the sum with an independent N(mu, sigma)).
    pub fn convolve_gaussian(&self, op: &GaussianParams) -> Result<Self> {
        let comps = self
            .components
            .iter()
            .map(|c| {
                let s = (c.params.variance() + op.variance()).sqrt();
                GaussianComponent::new(c.weight, c.params.mu + op.mu, s)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(GaussianMixture { components: comps })
    }
}

/// E[Yⁿ] for Y ~ N(d, s).
fn gaussian_central_shifted(d: f64, s: f64, n: u32) -> f64 {
    let s2 = s * s;
    match n {
        0 => 1.0,
        1 => d,
        2 => d * d + s2,
        3 => d * d * d + 3.0 * d * s2,
        4 => d * d * d * d + 6.0 * d * d * s2 + 3.0 * s2 * s2,
        _ => unreachable!("order checked by callers"),
    }
}

pub fn mixture_pdf(x: f64, mix: &GaussianMixture) -> f64 {
    mix.pdf(x)
}

pub fn mixture_moments(mix: &GaussianMixture, n: u32) -> Result<f64> {
    mix.raw_moment(n)
}

/// Drops components lighter than `w_min` and renormalises.
pub fn prune(mix: &GaussianMixture, w_min: f64) -> Result<GaussianMixture> {
    let kept: Vec<_> = mix
        .components
        .iter()
        .copied()
        .filter(|c| c.weight >= w_min)
        .collect();
    if kept.is_empty() {
        return Err(SstaError::domain(format!(
            "pruning at w_min = {w_min} removes all {} components",
            mix.len()
        )));
    }
    if kept.len() == mix.len() {
        return Ok(mix.clone());
    }
    GaussianMixture::new(kept)
}

/// Geometry of a Gaussian comb.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CombConfig {
    pub m: usize,
    pub support: (f64, f64),
    pub width_factor: f64,
}

impl CombConfig {
    pub fn new(m: usize, support: (f64, f64), width_factor: f64) -> Result<Self> {
        let c = CombConfig {
            m,
            support,
            width_factor,
        };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        if self.m < 2 {
            return Err(SstaError::domain(format!(
                "comb size must be at least 2, got {}",
                self.m
            )));
        }
        let (lo, hi) = self.support;
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return Err(SstaError::domain(format!(
                "comb support [{lo}, {hi}] is empty or not finite"
            )));
        }
        if !(self.width_factor.is_finite() && self.width_factor > 0.0) {
            return Err(SstaError::domain(format!(
                "comb width factor must be positive, got {}",
                self.width_factor
            )));
        }
        Ok(())
    }

    pub fn spacing(&self) -> f64 {
        (self.support.1 - self.support.0) / (self.m - 1) as f64
    }
}

/// Component means and the shared width of a comb; weights are what a
/// decomposition solves for.
#[derive(Debug, Clone, PartialEq)]
pub struct Comb {
    pub means: Vec<f64>,
    pub sigma: f64,
}

impl Comb {
    pub fn len(&self) -> usize {
        self.means.len()
    }

    pub fn is_empty(&self) -> bool {
        self.means.is_empty()
    }

    pub fn component(&self, k: usize) -> GaussianParams {
        GaussianParams {
            mu: self.means[k],
            sigma: self.sigma,
        }
    }

    /// Mixture from raw (unnormalised) weights; zero weights are dropped.
    pub fn mixture(&self, weights: &[f64]) -> Result<GaussianMixture> {
        let comps = self
            .means
            .iter()
            .zip(weights)
            .filter(|(_, &w)| w > 0.0)
            .map(|(&mu, &w)| GaussianComponent::new(w, mu, self.sigma))
            .collect::<Result<Vec<_>>>()?;
        GaussianMixture::new(comps)
    }
}

pub fn build_comb(cfg: &CombConfig) -> Result<Comb> {
    cfg.validate()?;
    let (lo, hi) = cfg.support;
    let spacing = cfg.spacing();
    let means = (0..cfg.m)
        .map(|k| {
            if k + 1 == cfg.m {
                hi
            } else {
                lo + k as f64 * spacing
            }
        })
        .collect();
    Ok(Comb {
        means,
        sigma: cfg.width_factor * spacing,
    })
}

/// `n` equally spaced points covering `[lo, hi]` inclusive.
pub fn sample_grid(support: (f64, f64), n: usize) -> Vec<f64> {
    let (lo, hi) = support;
    match n {
        0 => Vec::new(),
        1 => vec![0.5 * (lo + hi)],
        _ => {
            let h = (hi - lo) / (n - 1) as f64;
            (0..n)
                .map(|i| if i + 1 == n { hi } else { lo + i as f64 * h })
                .collect()
        }
    }
}

/// M[i, k] = density of comb component k at x_i.
pub fn design_matrix(xs: &[f64], comb: &Comb) -> DMatrix<f64> {
    DMatrix::from_fn(xs.len(), comb.len(), |i, k| comb.component(k).density(xs[i]))
}

/// The L∞ fit `min t  s.t.  -t ≤ Mw - y ≤ t, w ≥ 0, t ≥ 0` as
/// `A = [[M, -1], [-M, -1]]`, `b = (y, -y)`, `c = (0, …, 0, 1)`.
pub fn assemble_lp(samples: &[(f64, f64)], comb: &Comb) -> Result<LpProblem> {
    if samples.is_empty() {
        return Err(SstaError::domain("decomposition needs at least one sample"));
    }
    if comb.is_empty() {
        return Err(SstaError::domain("decomposition needs a non-empty comb"));
    }
    if let Some(&(x, y)) = samples
        .iter()
        .find(|(x, y)| !(x.is_finite() && y.is_finite() && *y >= 0.0))
    {
        return Err(SstaError::domain(format!(
            "target samples must be finite and non-negative, got f({x}) = {y}"
        )));
    }
    let (n, m) = (samples.len(), comb.len());
    let xs: Vec<f64> = samples.iter().map(|s| s.0).collect();
    let dm = design_matrix(&xs, comb);
    let a = DMatrix::from_fn(2 * n, m + 1, |i, k| {
        let sign = if i < n { 1.0 } else { -1.0 };
        if k == m {
            -1.0
        } else {
            sign * dm[(i % n, k)]
        }
    });
    let b = samples
        .iter()
        .map(|s| s.1)
        .chain(samples.iter().map(|s| -s.1))
        .collect();
    let mut c = vec![0.0; m + 1];
    c[m] = 1.0;
    LpProblem::new(c, a, b)
}

/// Outcome of fitting a comb to a sampled density.
#[derive(Debug, Clone, PartialEq)]
pub struct Decomposition {
    /// Normalised mixture (zero-weight comb teeth omitted).
    pub mixture: GaussianMixture,
    /// Comb the weights refer to.
    pub comb: Comb,
    /// Fitted weights before normalisation, one per comb tooth.
    pub raw_weights: Vec<f64>,
    /// Σ raw weights, i.e. the fitted mass.
    pub mass: f64,
    /// The LP optimum t* (zero for least-squares fits, see `linf_realized`).
    pub linf_residual: f64,
    /// max_i |(Mw)_i - y_i| recomputed from the raw weights.
    pub linf_realized: f64,
    /// ‖Mw - y‖₂ for the raw weights.
    pub l2_residual: f64,
    pub warning: Option<String>,
}

impl Decomposition {
    fn from_weights(samples: &[(f64, f64)], comb: Comb, weights: Vec<f64>, linf: f64) -> Result<Self> {
        let xs: Vec<f64> = samples.iter().map(|s| s.0).collect();
        let dm = design_matrix(&xs, &comb);
        let fitted = &dm * DVector::from_column_slice(&weights);
        let (mut sup, mut sq) = (0.0f64, 0.0f64);
        for (i, s) in samples.iter().enumerate() {
            let r = fitted[i] - s.1;
            sup = sup.max(r.abs());
            sq += r * r;
        }
        let mass: f64 = weights.iter().sum();
        if !(mass > 0.0) {
            return Err(SstaError::domain(
                "decomposition produced zero total weight (target vanishes on the support)",
            ));
        }
        let mixture = comb.mixture(&weights)?;
        Ok(Decomposition {
            mixture,
            comb,
            raw_weights: weights,
            mass,
            linf_residual: linf,
            linf_realized: sup,
            l2_residual: sq.sqrt(),
            warning: None,
        })
    }

    /// Attaches a quality warning when t* exceeds `threshold`.
    pub fn with_quality_threshold(mut self, threshold: f64) -> Self {
        if self.linf_residual > threshold {
            let msg = format!(
                "decomposition residual {:e} exceeds threshold {:e}",
                self.linf_residual, threshold
            );
            warn!("{msg}");
            self.warning = Some(msg);
        }
        self
    }
}

/// L∞ decomposition of given samples onto `comb`.
pub fn decompose_samples(samples: &[(f64, f64)], comb: &Comb) -> Result<Decomposition> {
    let lp = assemble_lp(samples, comb)?;
    let sol = lp_solve(&lp).map_err(|e| match e {
        SstaError::Unbounded { column } => SstaError::numerical(format!(
            "decomposition LP reported unbounded at column {column}; t is bounded below by 0"
        )),
        other => other,
    })?;
    let m = comb.len();
    let weights = sol.x[..m].to_vec();
    Decomposition::from_weights(samples, comb.clone(), weights, sol.x[m])
}

/// Samples `target` on `n_samples` uniform points of the support and fits
/// the comb by linear programming.
pub fn decompose<F: Fn(f64) -> f64>(target: F, cfg: &CombConfig, n_samples: usize) -> Result<Decomposition> {
    let comb = build_comb(cfg)?;
    if n_samples < cfg.m {
        return Err(SstaError::domain(format!(
            "need at least comb-size ({}) samples, got {n_samples}",
            cfg.m
        )));
    }
    let samples: Vec<(f64, f64)> = sample_grid(cfg.support, n_samples)
        .into_iter()
        .map(|x| (x, target(x)))
        .collect();
    decompose_samples(&samples, &comb)
}

/// Nonnegative least-squares fit of the same design matrix.
pub fn decompose_least_squares(samples: &[(f64, f64)], comb: &Comb) -> Result<Decomposition> {
    // reuse the LP assembly for its input validation
    assemble_lp(samples, comb)?;
    let xs: Vec<f64> = samples.iter().map(|s| s.0).collect();
    let dm = design_matrix(&xs, comb);
    let y = DVector::from_iterator(samples.len(), samples.iter().map(|s| s.1));
    let w = nnls::nnls(&dm, &y)?;
    let mut d = Decomposition::from_weights(samples, comb.clone(), w.iter().copied().collect(), 0.0)?;
    d.linf_residual = d.linf_realized;
    Ok(d)
}
