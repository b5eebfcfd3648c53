//! Density and moments of the gate delay η = max(X1, X2) + X0 for Gaussian
//! arrivals X1, X2 (correlation rho) and a Gaussian operation time X0.
//!
//! Every density here is a sum over the two orderings (i, j) ∈ {(1, 2), (2, 1)}
//! of a normal density centred at μ0 + μi with width σ̃i = √(σ0² + σi²),
//! multiplied by a normal CDF whose argument is affine in x. [`GateKernel`]
//! precomputes those affine coefficients so repeated evaluation costs four
//! transcendental calls per point.

use log::warn;

use crate::distributions::{CorrelatedPair, GaussianParams};
use crate::error::{Result, SstaError};
use crate::quadrature::{integrate, QuadOptions};
use crate::special::{std_normal_cdf, std_normal_pdf};

/// Operation-time widths below `SIGMA_FLOOR_REL * scale` are raised to it.
pub const SIGMA_FLOOR_REL: f64 = 1e-9;
/// Threshold on |1 - rho σj/σi| below which the signed form is not used.
pub const EPS_DEGENERATE: f64 = 1e-9;
/// |rho| at or above `1 - RHO_COMONOTONE_EPS` uses the comonotone limit.
pub const RHO_COMONOTONE_EPS: f64 = 1e-12;
/// Relative agreement required between closed-form and quadrature moments.
pub const MOMENT_GATE_REL_TOL: f64 = 1e-6;

const SQRT_2PI: f64 = 2.506_628_274_631_000_7;

/// The two arrival times, their correlation and the operation time of a
/// two-input gate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GateInputs {
    pub x1: GaussianParams,
    pub x2: GaussianParams,
    pub x0: GaussianParams,
    pub rho: f64,
}

impl GateInputs {
    pub fn new(x1: GaussianParams, x2: GaussianParams, x0: GaussianParams, rho: f64) -> Result<Self> {
        let g = GateInputs { x1, x2, x0, rho };
        g.validate()?;
        Ok(g)
    }

    pub fn independent(x1: GaussianParams, x2: GaussianParams, x0: GaussianParams) -> Result<Self> {
        Self::new(x1, x2, x0, 0.0)
    }

    pub fn validate(&self) -> Result<()> {
        self.x1.require_positive()?;
        self.x2.require_positive()?;
        self.x0.validate()?;
        if self.rho.is_nan() || !(-1.0..=1.0).contains(&self.rho) {
            return Err(SstaError::domain(format!(
                "correlation must lie in [-1, 1], got {}",
                self.rho
            )));
        }
        Ok(())
    }

    pub fn with_rho(mut self, rho: f64) -> Self {
        self.rho = rho;
        self
    }

    pub fn swapped(&self) -> Self {
        GateInputs {
            x1: self.x2,
            x2: self.x1,
            x0: self.x0,
            rho: self.rho,
        }
    }

    pub fn pair(&self) -> CorrelatedPair {
        CorrelatedPair {
            a: self.x1,
            b: self.x2,
            rho: self.rho,
        }
    }

    /// Absolute floor applied to σ0.
    pub fn sigma_floor(&self) -> f64 {
        let scale = self.x1.sigma.max(self.x2.sigma).max(self.x0.sigma);
        SIGMA_FLOOR_REL * if scale > 0.0 { scale } else { 1.0 }
    }

    /// Operation time with σ0 raised to the floor.
    pub fn floored_op(&self) -> GaussianParams {
        GaussianParams {
            mu: self.x0.mu,
            sigma: self.x0.sigma.max(self.sigma_floor()),
        }
    }

    fn is_comonotone(&self) -> bool {
        self.rho.abs() >= 1.0 - RHO_COMONOTONE_EPS
    }

    /// Integration window containing all but ~1e-30 of the mass.
    pub fn envelope(&self, k: f64) -> (f64, f64) {
        let d = GateDerived::new(self);
        let c1 = self.x0.mu + self.x1.mu;
        let c2 = self.x0.mu + self.x2.mu;
        let s = d.sigma_tilde[0].max(d.sigma_tilde[1]);
        (c1.min(c2) - k * s, c1.max(c2) + k * s)
    }

    /// The two orderings (i, j) as (Xi, Xj) pairs.
    fn orderings(&self) -> [(GaussianParams, GaussianParams); 2] {
        [(self.x1, self.x2), (self.x2, self.x1)]
    }
}

/// Derived widths and coupling constants for the two orderings (index 0 is
/// (i, j) = (1, 2), index 1 is (2, 1)).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GateDerived {
    /// √(σ0² + σi²)
    pub sigma_tilde: [f64; 2],
    /// σi σ0 / (σj σ̃i)
    pub kappa: [f64; 2],
    /// (σi - rho σj) σ0 / (√(1 - rho²) σj σ̃i); infinite at |rho| = 1.
    pub kappa_rho: [f64; 2],
    /// Normalisation 2π A0 A1 A2 σ0 σ1 σ2, i.e. 1/√(2π) for unit-mass inputs.
    pub c: f64,
}

impl GateDerived {
    pub fn new(g: &GateInputs) -> Self {
        let op = g.floored_op();
        let s0 = op.sigma;
        let root = one_minus_rho_sq(g.rho).sqrt();
        let mut out = GateDerived {
            sigma_tilde: [0.0; 2],
            kappa: [0.0; 2],
            kappa_rho: [0.0; 2],
            c: 1.0 / SQRT_2PI,
        };
        for (k, (xi, xj)) in g.orderings().into_iter().enumerate() {
            let st = (s0 * s0 + xi.sigma * xi.sigma).sqrt();
            out.sigma_tilde[k] = st;
            out.kappa[k] = xi.sigma * s0 / (xj.sigma * st);
            out.kappa_rho[k] = (xi.sigma - g.rho * xj.sigma) * s0 / (root * xj.sigma * st);
        }
        out
    }
}

#[inline]
fn one_minus_rho_sq(rho: f64) -> f64 {
    (1.0 - rho) * (1.0 + rho)
}

/// Which density a [`GateKernel`] evaluates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PdfForm {
    /// The exact correlated density (κ form, finite for every |rho| < 1).
    Exact,
    /// The rho = 0 density, ignoring the declared correlation.
    Independent,
    /// The independent density plus the first-order correction in rho.
    WeakCorr,
}

#[derive(Debug, Clone, Copy)]
struct Ordering {
    center: f64,
    sigma_tilde: f64,
    // CDF argument = slope * x + intercept
    slope: f64,
    intercept: f64,
    // weak-correlation correction: -pdf φ(u) ratio (u / (1+κ²) - shift)
    ratio: f64,
    inv_one_kappa2: f64,
    shift: f64,
}

impl Ordering {
    #[inline]
    fn density(&self, x: f64) -> f64 {
        let z = (x - self.center) / self.sigma_tilde;
        (-0.5 * z * z).exp() / (SQRT_2PI * self.sigma_tilde)
    }
}

/// Portion of the max attributed to one input under |rho| = 1: that input
/// is the maximum exactly when its value lies in [lower, upper].
#[derive(Debug, Clone, Copy)]
struct ComonotoneBranch {
    center: f64,
    sigma_tilde: f64,
    // conditional mean of the input given x: m(x) = m_slope * x + m_intercept
    m_slope: f64,
    m_intercept: f64,
    cond_sigma: f64,
    lower: f64,
    upper: f64,
}

impl ComonotoneBranch {
    fn eval(&self, x: f64) -> f64 {
        if self.lower >= self.upper {
            return 0.0;
        }
        let z = (x - self.center) / self.sigma_tilde;
        let dens = (-0.5 * z * z).exp() / (SQRT_2PI * self.sigma_tilde);
        let m = self.m_slope * x + self.m_intercept;
        let mass = match (self.lower.is_finite(), self.upper.is_finite()) {
            (false, false) => 1.0,
            (false, true) => std_normal_cdf((self.upper - m) / self.cond_sigma),
            (true, false) => std_normal_cdf((m - self.lower) / self.cond_sigma),
            (true, true) => {
                std_normal_cdf((self.upper - m) / self.cond_sigma)
                    - std_normal_cdf((self.lower - m) / self.cond_sigma)
            }
        };
        dens * mass
    }
}

#[derive(Debug, Clone, Copy)]
enum KernelBody {
    Affine {
        rho: f64,
        weak: bool,
        terms: [Ordering; 2],
    },
    Comonotone([ComonotoneBranch; 2]),
}

/// Precomputed gate density for one parameter set.
#[derive(Debug, Clone, Copy)]
pub struct GateKernel {
    body: KernelBody,
}

impl GateKernel {
    pub fn new(g: &GateInputs, form: PdfForm) -> Result<Self> {
        g.validate()?;
        if form == PdfForm::Exact && g.is_comonotone() {
            return Ok(GateKernel {
                body: KernelBody::Comonotone(comonotone_branches(g)),
            });
        }
        let op = g.floored_op();
        let (mu0, s0) = (op.mu, op.sigma);
        let d = GateDerived::new(g);
        let mut terms = [Ordering {
            center: 0.0,
            sigma_tilde: 1.0,
            slope: 0.0,
            intercept: 0.0,
            ratio: 0.0,
            inv_one_kappa2: 0.0,
            shift: 0.0,
        }; 2];
        for (k, (xi, xj)) in g.orderings().into_iter().enumerate() {
            let st = d.sigma_tilde[k];
            let (slope, intercept) = match form {
                PdfForm::Exact => {
                    // [κ(ρ) (σi²(x-μ0) + σ0²μi) / (σ̃i σi σ0) - (σiμj - ρσjμi)/(σiσj√(1-ρ²))] / √(1+κ(ρ)²)
                    let kr = d.kappa_rho[k];
                    let root = one_minus_rho_sq(g.rho).sqrt();
                    let norm = (1.0 + kr * kr).sqrt();
                    let scale = kr / (st * xi.sigma * s0);
                    let q = (xi.sigma * xj.mu - g.rho * xj.sigma * xi.mu) / (xi.sigma * xj.sigma * root);
                    let slope = scale * xi.sigma * xi.sigma / norm;
                    let intercept = (scale * (s0 * s0 * xi.mu - xi.sigma * xi.sigma * mu0) - q) / norm;
                    (slope, intercept)
                }
                PdfForm::Independent | PdfForm::WeakCorr => {
                    // y(x) / √(1+κ²), y = (σi²(x-μ0) + σ0²μi)/(σ̃i²σj) - μj/σj
                    let kap = d.kappa[k];
                    let norm = (1.0 + kap * kap).sqrt();
                    let a = xi.sigma * xi.sigma / (st * st * xj.sigma);
                    let slope = a / norm;
                    let intercept = ((s0 * s0 * xi.mu - xi.sigma * xi.sigma * mu0) / (st * st * xj.sigma)
                        - xj.mu / xj.sigma)
                        / norm;
                    (slope, intercept)
                }
            };
            let kap = d.kappa[k];
            let one_k2 = 1.0 + kap * kap;
            terms[k] = Ordering {
                center: mu0 + xi.mu,
                sigma_tilde: st,
                slope,
                intercept,
                ratio: xj.sigma / xi.sigma,
                inv_one_kappa2: 1.0 / one_k2,
                shift: (xi.mu - xj.mu) / (xj.sigma * one_k2.sqrt()),
            };
        }
        let rho = if form == PdfForm::WeakCorr { g.rho } else { 0.0 };
        Ok(GateKernel {
            body: KernelBody::Affine {
                rho,
                weak: form == PdfForm::WeakCorr,
                terms,
            },
        })
    }

    #[inline]
    pub fn pdf(&self, x: f64) -> f64 {
        match &self.body {
            KernelBody::Affine { rho, weak, terms } => {
                let mut acc = 0.0;
                for t in terms {
                    let u = t.slope * x + t.intercept;
                    let dens = t.density(x);
                    acc += dens * std_normal_cdf(u);
                    if *weak {
                        acc -= rho * dens * std_normal_pdf(u) * t.ratio * (u * t.inv_one_kappa2 - t.shift);
                    }
                }
                acc
            }
            KernelBody::Comonotone(branches) => branches[0].eval(x) + branches[1].eval(x),
        }
    }

    /// First-order correction δf_gate(x); zero for the comonotone body.
    pub fn delta(&self, x: f64) -> f64 {
        match &self.body {
            KernelBody::Affine { terms, .. } => terms
                .iter()
                .map(|t| {
                    let u = t.slope * x + t.intercept;
                    -t.density(x) * std_normal_pdf(u) * t.ratio * (u * t.inv_one_kappa2 - t.shift)
                })
                .sum(),
            KernelBody::Comonotone(_) => 0.0,
        }
    }
}

fn comonotone_branches(g: &GateInputs) -> [ComonotoneBranch; 2] {
    let op = g.floored_op();
    let (x1, x2) = (g.x1, g.x2);
    let s = if g.rho > 0.0 { 1.0 } else { -1.0 };
    // X2 = μ2 + s σ2 Z with X1 = μ1 + σ1 Z; X1 is the max iff d Z >= μ2 - μ1.
    let d = x1.sigma - s * x2.sigma;
    let (inf, ninf) = (f64::INFINITY, f64::NEG_INFINITY);
    let (r1, r2) = if d == 0.0 {
        if x1.mu >= x2.mu {
            ((ninf, inf), (0.0, 0.0))
        } else {
            ((0.0, 0.0), (ninf, inf))
        }
    } else {
        let zc = (x2.mu - x1.mu) / d;
        let c = x1.mu + x1.sigma * zc;
        if d > 0.0 {
            let r2 = if s > 0.0 { (ninf, c) } else { (c, inf) };
            ((c, inf), r2)
        } else {
            ((ninf, c), (c, inf))
        }
    };
    let branch = |x: GaussianParams, (lower, upper): (f64, f64)| {
        let st2 = op.sigma * op.sigma + x.sigma * x.sigma;
        ComonotoneBranch {
            center: op.mu + x.mu,
            sigma_tilde: st2.sqrt(),
            m_slope: x.sigma * x.sigma / st2,
            m_intercept: (op.sigma * op.sigma * x.mu - x.sigma * x.sigma * op.mu) / st2,
            cond_sigma: op.sigma * x.sigma / st2.sqrt(),
            lower,
            upper,
        }
    };
    [branch(x1, r1), branch(x2, r2)]
}

/// Exact density of the gate delay. |rho| ≥ 1 - 1e-12 uses the analytic
/// comonotone (antimonotone) limit.
pub fn gate_pdf_exact(x: f64, g: &GateInputs) -> Result<f64> {
    Ok(GateKernel::new(g, PdfForm::Exact)?.pdf(x))
}

/// Exact density written with the sign split on (1 - rho σj/σi). Orderings
/// where that factor is within [`EPS_DEGENERATE`] of zero are evaluated with
/// the κ form instead.
pub fn gate_pdf_exact_signed(x: f64, g: &GateInputs) -> Result<f64> {
    g.validate()?;
    if g.is_comonotone() {
        return gate_pdf_exact(x, g);
    }
    let op = g.floored_op();
    let (mu0, s0) = (op.mu, op.sigma);
    let d = GateDerived::new(g);
    let one_r2 = one_minus_rho_sq(g.rho);
    let fallback = GateKernel::new(g, PdfForm::Exact)?;
    let mut acc = 0.0;
    for (k, (xi, xj)) in g.orderings().into_iter().enumerate() {
        let st = d.sigma_tilde[k];
        let factor = 1.0 - g.rho * xj.sigma / xi.sigma;
        let z = (x - mu0 - xi.mu) / st;
        let dens = d.c / st * (-0.5 * z * z).exp();
        let arg = if factor.abs() <= EPS_DEGENERATE {
            let KernelBody::Affine { terms, .. } = fallback.body else {
                unreachable!("non-comonotone kernel is affine")
            };
            terms[k].slope * x + terms[k].intercept
        } else {
            let eta = (xi.sigma * xi.sigma * (x - mu0) + s0 * s0 * xi.mu) / (st * st * xj.sigma);
            let kap = d.kappa[k];
            let norm = (one_r2 / (factor * factor) + kap * kap).sqrt();
            // (μj/σj)(1 - ρσjμi/(σiμj)) written without dividing by μj
            let offset = (xj.mu - g.rho * xj.sigma * xi.mu / xi.sigma) / xj.sigma;
            (eta * factor.signum() - offset / factor.abs()) / norm
        };
        acc += dens * std_normal_cdf(arg);
    }
    Ok(acc)
}

/// Density for independent arrivals (rho is ignored).
pub fn gate_pdf_independent(x: f64, g: &GateInputs) -> Result<f64> {
    Ok(GateKernel::new(g, PdfForm::Independent)?.pdf(x))
}

/// Linear-in-rho approximation f_gate(x) + rho δf_gate(x).
pub fn gate_pdf_weak_corr(x: f64, g: &GateInputs) -> Result<f64> {
    Ok(GateKernel::new(g, PdfForm::WeakCorr)?.pdf(x))
}

/// The correction δf_gate(x) alone.
pub fn gate_pdf_delta(x: f64, g: &GateInputs) -> Result<f64> {
    Ok(GateKernel::new(g, PdfForm::Independent)?.delta(x))
}

fn require_closed_form(g: &GateInputs) -> Result<()> {
    g.validate()?;
    if g.is_comonotone() {
        return Err(SstaError::DegenerateCorrelation { rho: g.rho });
    }
    Ok(())
}

/// Closed-form mean of the gate delay.
pub fn gate_mean_closed(g: &GateInputs) -> Result<f64> {
    require_closed_form(g)?;
    let op = g.floored_op();
    let (mu0, s0) = (op.mu, op.sigma);
    let d = GateDerived::new(g);
    let one_r2 = one_minus_rho_sq(g.rho);
    let mut acc = 0.0;
    for (k, (xi, xj)) in g.orderings().into_iter().enumerate() {
        let kr = d.kappa_rho[k];
        let st = d.sigma_tilde[k];
        let vk = varkappa(kr, xi.sigma, s0);
        let arg = (xi.mu - xj.mu) / (one_r2.sqrt() * xj.sigma * vk);
        acc += SQRT_2PI * (mu0 + xi.mu) * std_normal_cdf(arg)
            + xi.sigma * st / s0 * kr / vk * (-0.5 * arg * arg).exp();
    }
    Ok(d.c * acc)
}

/// ϰij = √(1 + κij(ρ)² (1 + σi²/σ0²)).
#[inline]
fn varkappa(kappa_rho: f64, sigma_i: f64, sigma0: f64) -> f64 {
    let r = sigma_i / sigma0;
    (1.0 + kappa_rho * kappa_rho * (1.0 + r * r)).sqrt()
}

/// Closed-form raw second moment E[η²].
pub fn gate_second_moment_closed(g: &GateInputs) -> Result<f64> {
    require_closed_form(g)?;
    let op = g.floored_op();
    let (mu0, s0) = (op.mu, op.sigma);
    let d = GateDerived::new(g);
    let root = one_minus_rho_sq(g.rho).sqrt();
    let mut acc = 0.0;
    for (k, (xi, xj)) in g.orderings().into_iter().enumerate() {
        let kr = d.kappa_rho[k];
        let st = d.sigma_tilde[k];
        let vk = varkappa(kr, xi.sigma, s0);
        let y = st * xi.mu / (xi.sigma * s0) * kr
            - (xj.mu - g.rho * xj.sigma * xi.mu / xi.sigma) / (xj.sigma * root);
        let c0 = mu0 + xi.mu;
        acc += SQRT_2PI * (c0 * c0 + st * st) * std_normal_cdf(y / vk)
            + 2.0 * xi.sigma * st * st / s0 * kr / vk
                * (c0 / st - 0.5 * xi.sigma / s0 * kr / (vk * vk) * y)
                * (-0.5 * y * y / (vk * vk)).exp();
    }
    Ok(d.c * acc)
}

fn moment_quad_options() -> QuadOptions {
    QuadOptions::default()
        .with_rel_tol(1e-12)
        .with_abs_tol(1e-300)
        .with_panels(32)
}

/// ∫ xⁿ f_gate(x) dx by adaptive quadrature over the ±12σ̃ envelope.
/// `n = 0` returns the total mass.
pub fn gate_moment_quadrature(g: &GateInputs, n: u32) -> Result<f64> {
    if n > 4 {
        return Err(SstaError::domain(format!(
            "moment order must be in 0..=4, got {n}"
        )));
    }
    let kernel = GateKernel::new(g, PdfForm::Exact)?;
    let (lo, hi) = g.envelope(12.0);
    let r = integrate(
        |x| x.powi(n as i32) * kernel.pdf(x),
        lo,
        hi,
        &moment_quad_options(),
    )?;
    Ok(r.value)
}

/// Mean, standard deviation, skewness and kurtosis of the gate delay.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GateMoments {
    pub mean: f64,
    pub std: f64,
    pub skewness: f64,
    pub kurtosis: f64,
    /// Whether the closed-form mean and second moment passed the quadrature
    /// cross-check (and were therefore used).
    pub closed_form_used: bool,
}

/// Closed-form mean and variance when they agree with quadrature within
/// [`MOMENT_GATE_REL_TOL`]; otherwise a warning is logged and quadrature
/// values are used. Skewness and kurtosis always come from quadrature of
/// central moments.
pub fn gate_moments(g: &GateInputs) -> Result<GateMoments> {
    let kernel = GateKernel::new(g, PdfForm::Exact)?;
    let (lo, hi) = g.envelope(12.0);
    let opts = moment_quad_options();
    let mass = integrate(|x| kernel.pdf(x), lo, hi, &opts)?.value;
    let q_mean = integrate(|x| x * kernel.pdf(x), lo, hi, &opts)?.value / mass;
    let central = |k: i32| -> Result<f64> {
        Ok(integrate(|x| (x - q_mean).powi(k) * kernel.pdf(x), lo, hi, &opts)?.value / mass)
    };
    let m2 = central(2)?;
    let m3 = central(3)?;
    let m4 = central(4)?;
    let q_second = m2 + q_mean * q_mean;

    let closed = gate_mean_closed(g).and_then(|m| Ok((m, gate_second_moment_closed(g)?)));
    let (mean, var, closed_form_used) = match closed {
        Ok((m, s2)) => {
            let rel_mean = (m - q_mean).abs() / q_mean.abs().max(f64::MIN_POSITIVE);
            let rel_second = (s2 - q_second).abs() / q_second.abs().max(f64::MIN_POSITIVE);
            if rel_mean <= MOMENT_GATE_REL_TOL && rel_second <= MOMENT_GATE_REL_TOL {
                (m, s2 - m * m, true)
            } else {
                warn!(
                    "closed-form moment mismatch for {g:?}: mean {m} vs {q_mean} (rel {rel_mean:e}), \
                     E[X^2] {s2} vs {q_second} (rel {rel_second:e}); using quadrature"
                );
                (q_mean, m2, false)
            }
        }
        Err(SstaError::DegenerateCorrelation { .. }) => (q_mean, m2, false),
        Err(e) => return Err(e),
    };
    let var = if var > 0.0 { var } else { m2 };
    Ok(GateMoments {
        mean,
        std: var.sqrt(),
        skewness: m3 / m2.powf(1.5),
        kurtosis: m4 / (m2 * m2),
        closed_form_used,
    })
}

pub fn gate_skewness(g: &GateInputs) -> Result<f64> {
    Ok(gate_moments(g)?.skewness)
}

pub fn gate_kurtosis(g: &GateInputs) -> Result<f64> {
    Ok(gate_moments(g)?.kurtosis)
}

/// Gate CDF tabulated on a uniform grid over the ±12σ̃ envelope and
/// interpolated with cubic Hermite splines whose slopes are the exact
/// density.
#[derive(Debug, Clone)]
pub struct GateCdf {
    lo: f64,
    h: f64,
    cdf: Vec<f64>,
    pdf: Vec<f64>,
}

impl GateCdf {
    pub fn new(g: &GateInputs, form: PdfForm, intervals: usize) -> Result<Self> {
        let kernel = GateKernel::new(g, form)?;
        let intervals = intervals.max(1);
        let (lo, hi) = g.envelope(12.0);
        let h = (hi - lo) / intervals as f64;
        let opts = QuadOptions::default().with_panels(1).with_abs_tol(1e-16);
        let mut cdf = Vec::with_capacity(intervals + 1);
        let mut pdf = Vec::with_capacity(intervals + 1);
        let mut acc = 0.0;
        for i in 0..=intervals {
            let x = lo + i as f64 * h;
            if i > 0 {
                acc += integrate(|t| kernel.pdf(t), x - h, x, &opts)?.value;
            }
            cdf.push(acc);
            pdf.push(kernel.pdf(x));
        }
        Ok(GateCdf { lo, h, cdf, pdf })
    }

    pub fn eval(&self, x: f64) -> f64 {
        let u = (x - self.lo) / self.h;
        if !(u > 0.0) {
            return 0.0;
        }
        let last = self.cdf.len() - 1;
        if u >= last as f64 {
            return self.cdf[last].min(1.0);
        }
        let i = (u as usize).min(last - 1);
        let t = u - i as f64;
        let (t2, t3) = (t * t, t * t * t);
        let v = (2.0 * t3 - 3.0 * t2 + 1.0) * self.cdf[i]
            + (t3 - 2.0 * t2 + t) * self.h * self.pdf[i]
            + (-2.0 * t3 + 3.0 * t2) * self.cdf[i + 1]
            + (t3 - t2) * self.h * self.pdf[i + 1];
        v.clamp(0.0, 1.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distributions::max2_correlated_pdf;
    use proptest::prelude::*;

    fn n(mu: f64, sigma: f64) -> GaussianParams {
        GaussianParams::new(mu, sigma).unwrap()
    }

    fn ref_params(rho: f64) -> GateInputs {
        GateInputs::new(n(1.0, 0.75), n(2.0, 3.0), n(0.0, 1.0), rho).unwrap()
    }

    fn grid(lo: f64, hi: f64, points: usize) -> impl Iterator<Item = f64> {
        (0..points).map(move |i| lo + (hi - lo) * i as f64 / (points - 1) as f64)
    }

    /// Composite 10-point Gauss–Legendre; independent of the adaptive
    /// integrator used by the library.
    fn gauss_legendre<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, panels: usize) -> f64 {
        const X: [f64; 5] = [
            0.148_874_338_981_631_2,
            0.433_395_394_129_247_2,
            0.679_409_568_299_024_4,
            0.865_063_366_688_984_5,
            0.973_906_528_517_171_7,
        ];
        const W: [f64; 5] = [
            0.295_524_224_714_752_9,
            0.269_266_719_309_996_3,
            0.219_086_362_515_982_0,
            0.149_451_349_150_580_6,
            0.066_671_344_308_688_1,
        ];
        let h = (b - a) / panels as f64;
        let mut acc = 0.0;
        for p in 0..panels {
            let c = a + (p as f64 + 0.5) * h;
            for k in 0..5 {
                let dx = 0.5 * h * X[k];
                acc += W[k] * (f(c - dx) + f(c + dx));
            }
        }
        0.5 * h * acc
    }

    fn convolution_oracle(x: f64, g: &GateInputs) -> f64 {
        let pair = g.pair();
        let op = g.x0;
        let (lo, hi) = (x - op.mu - 12.0 * op.sigma, x - op.mu + 12.0 * op.sigma);
        gauss_legendre(
            |t| max2_correlated_pdf(t, &pair).unwrap() * op.density(x - t),
            lo,
            hi,
            400,
        )
    }

    #[test]
    fn unit_normalisation_constant() {
        let d = GateDerived::new(&ref_params(0.5));
        assert!((d.c - 1.0 / (2.0 * std::f64::consts::PI).sqrt()).abs() < 1e-16);
        for k in 0..2 {
            assert!(d.sigma_tilde[k] >= 1.0 && d.kappa[k] > 0.0);
        }
        assert!((d.sigma_tilde[1] - 10f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn exact_matches_convolution_at_reference_parameters() {
        let g = ref_params(0.5);
        for x in grid(-10.0, 20.0, 121) {
            let exact = gate_pdf_exact(x, &g).unwrap();
            assert!((exact - convolution_oracle(x, &g)).abs() < 1e-8, "x = {x}");
        }
    }

    #[test]
    fn signed_form_agrees_with_kappa_form() {
        for rho in [-0.7, -0.2, 0.3, 0.5, 0.9] {
            let g = ref_params(rho);
            for x in grid(-10.0, 20.0, 61) {
                let a = gate_pdf_exact(x, &g).unwrap();
                let b = gate_pdf_exact_signed(x, &g).unwrap();
                assert!((a - b).abs() < 1e-13, "rho {rho}, x {x}: {a} vs {b}");
            }
        }
        // σ1 = ρσ2 makes one sign factor vanish; the κ form takes over.
        let g = GateInputs::new(n(0.0, 1.5), n(1.0, 3.0), n(0.5, 1.0), 0.5).unwrap();
        for x in grid(-8.0, 12.0, 41) {
            let a = gate_pdf_exact(x, &g).unwrap();
            let b = gate_pdf_exact_signed(x, &g).unwrap();
            assert!((a - b).abs() < 1e-13);
        }
    }

    #[test]
    fn zero_rho_reduces_to_independent() {
        let g = ref_params(0.0);
        for x in grid(-10.0, 20.0, 301) {
            let a = gate_pdf_exact(x, &g).unwrap();
            let b = gate_pdf_independent(x, &g).unwrap();
            assert!((a - b).abs() < 1e-13);
            assert_eq!(gate_pdf_weak_corr(x, &g).unwrap(), b);
        }
    }

    #[test]
    fn near_unit_rho_collapses_to_single_convolution() {
        let base = GateInputs::new(n(0.0, 1.0), n(0.0, 1.0), n(0.0, 1.0), 0.0).unwrap();
        let target = n(0.0, 2f64.sqrt());
        let sup = |rho: f64| {
            let g = base.with_rho(rho);
            grid(-8.0, 8.0, 321)
                .map(|x| (gate_pdf_exact(x, &g).unwrap() - target.density(x)).abs())
                .fold(0.0, f64::max)
        };
        // the deviation shrinks like √(1-ρ); at 1-1e-9 it is ≈ 2.2e-6
        let d9 = sup(1.0 - 1e-9);
        assert!(d9 > 1e-6 && d9 < 3e-6, "{d9}");
        assert!(sup(1.0 - 1e-11) < 1e-6);
        assert!(sup(1.0) < 1e-15);
    }

    #[test]
    fn comonotone_limit_matches_near_limit_formula() {
        for (a, b) in [
            (n(1.0, 0.75), n(2.0, 3.0)),
            (n(2.0, 1.0), n(0.0, 1.0)),
            (n(0.0, 2.0), n(1.0, 0.5)),
        ] {
            for rho in [1.0, -1.0] {
                let lim = GateInputs::new(a, b, n(0.3, 0.8), rho).unwrap();
                let near = lim.with_rho(rho * (1.0 - 1e-10));
                for x in grid(-10.0, 15.0, 101) {
                    let l = gate_pdf_exact(x, &lim).unwrap();
                    let v = gate_pdf_exact(x, &near).unwrap();
                    assert!((l - v).abs() < 1e-4, "rho {rho} x {x}: {l} vs {v}");
                }
            }
        }
    }

    #[test]
    fn dominated_input_is_a_single_convolution() {
        let g = GateInputs::independent(n(20.0, 0.5), n(0.0, 0.5), n(0.0, 1.0)).unwrap();
        let target = n(20.0, (1.0f64 + 0.25).sqrt());
        for x in grid(20.0 - 6.0 * target.sigma, 20.0 + 6.0 * target.sigma, 101) {
            assert!((gate_pdf_independent(x, &g).unwrap() - target.density(x)).abs() < 1e-10);
        }
        assert!((gate_mean_closed(&g).unwrap() - 20.0).abs() < 1e-9);
        let second = gate_second_moment_closed(&g).unwrap();
        assert!((second - (400.0 + 1.0 + 0.25)).abs() < 1e-8);
        let m = gate_moments(&g).unwrap();
        assert!(m.skewness.abs() < 1e-6, "{}", m.skewness);
        assert!((m.kurtosis - 3.0).abs() < 1e-5);
        assert!((gate_moment_quadrature(&g, 1).unwrap() - 20.0).abs() < 1e-9);
    }

    #[test]
    fn iid_standard_inputs() {
        let s = GaussianParams::standard();
        let g = GateInputs::independent(s, s, s).unwrap();
        for x in grid(-6.0, 8.0, 57) {
            let oracle = convolution_oracle(x, &g);
            assert!((gate_pdf_independent(x, &g).unwrap() - oracle).abs() < 1e-8);
        }
        let inv_sqrt_pi = 1.0 / std::f64::consts::PI.sqrt();
        assert!((gate_mean_closed(&g).unwrap() - inv_sqrt_pi).abs() < 1e-14);
        let var = gate_second_moment_closed(&g).unwrap() - inv_sqrt_pi * inv_sqrt_pi;
        assert!((var - (2.0 - 1.0 / std::f64::consts::PI)).abs() < 1e-14);
        let m = gate_moments(&g).unwrap();
        assert!(m.closed_form_used);
        assert!(m.skewness > 0.0);
    }

    #[test]
    fn moments_match_quadrature_at_reference_parameters() {
        let g = ref_params(0.5);
        assert!((gate_moment_quadrature(&g, 0).unwrap() - 1.0).abs() < 1e-8);
        let qm = gate_moment_quadrature(&g, 1).unwrap();
        let q2 = gate_moment_quadrature(&g, 2).unwrap();
        assert!(((gate_mean_closed(&g).unwrap() - qm) / qm).abs() < 1e-6);
        assert!(((gate_second_moment_closed(&g).unwrap() - q2) / q2).abs() < 1e-6);
        assert!(gate_moment_quadrature(&g, 5).is_err());
    }

    #[test]
    fn weak_corr_ordering_with_operation_time_width() {
        let sup = |s0: f64, rho: f64, form: PdfForm| {
            let g = GateInputs::new(n(1.0, 0.5), n(3.0, 1.9), n(3.0, s0), rho).unwrap();
            let approx = GateKernel::new(&g, form).unwrap();
            let exact = GateKernel::new(&g, PdfForm::Exact).unwrap();
            grid(-5.0, 20.0, 2501)
                .map(|x| (approx.pdf(x) - exact.pdf(x)).abs())
                .fold(0.0, f64::max)
        };
        assert!(sup(1.0, 0.6, PdfForm::WeakCorr) < sup(0.5, 0.6, PdfForm::WeakCorr));
        assert!(sup(0.5, 0.1, PdfForm::WeakCorr) < sup(0.5, 0.1, PdfForm::Independent));
    }

    #[test]
    fn delta_is_the_rho_derivative() {
        let g = GateInputs::new(n(1.0, 0.5), n(3.0, 1.9), n(3.0, 0.5), 0.0).unwrap();
        let h = 1e-6;
        for x in grid(-2.0, 14.0, 81) {
            let fd = (gate_pdf_exact(x, &g.with_rho(h)).unwrap()
                - gate_pdf_exact(x, &g.with_rho(-h)).unwrap())
                / (2.0 * h);
            assert!((fd - gate_pdf_delta(x, &g).unwrap()).abs() < 1e-7, "x {x}");
        }
    }

    #[test]
    fn tabulated_cdf() {
        let g = ref_params(0.5);
        let table = GateCdf::new(&g, PdfForm::Exact, 4000).unwrap();
        let kernel = GateKernel::new(&g, PdfForm::Exact).unwrap();
        let (lo, _) = g.envelope(12.0);
        for x in [-6.0, -1.3, 0.0, 2.2, 4.71, 9.0, 15.5] {
            let direct = integrate(|t| kernel.pdf(t), lo, x, &moment_quad_options())
                .unwrap()
                .value;
            assert!((table.eval(x) - direct).abs() < 1e-10, "x {x}");
        }
        assert_eq!(table.eval(-1e3), 0.0);
        assert!((table.eval(1e3) - 1.0).abs() < 1e-10);
    }

    #[test]
    fn operation_time_floor() {
        let g = GateInputs::independent(n(0.0, 2.0), n(1.0, 1.0), n(0.5, 0.0)).unwrap();
        assert_eq!(g.floored_op().sigma, 2e-9);
        let v = gate_pdf_independent(1.2, &g).unwrap();
        let max = crate::distributions::max2_independent_pdf(0.7, &g.x1, &g.x2).unwrap();
        assert!((v - max).abs() < 1e-9);
        assert!(GateInputs::new(n(0.0, 1.0), n(0.0, 1.0), n(0.0, 1.0), 1.01).is_err());
        assert!(GateInputs::new(
            GaussianParams { mu: 0.0, sigma: 0.0 },
            n(0.0, 1.0),
            n(0.0, 1.0),
            0.0
        )
        .is_err());
    }

    fn draw() -> impl Strategy<Value = GateInputs> {
        (
            (-3.0..5.0f64, 0.2..4.0f64),
            (-3.0..5.0f64, 0.2..4.0f64),
            (-3.0..5.0f64, 0.2..2.0f64),
            -0.9..0.9f64,
        )
            .prop_map(|(a, b, o, rho)| GateInputs::new(n(a.0, a.1), n(b.0, b.1), n(o.0, o.1), rho).unwrap())
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn input_symmetry(g in draw(), t in 0.0..1.0f64) {
            let (lo, hi) = g.envelope(6.0);
            let x = lo + t * (hi - lo);
            let a = gate_pdf_exact(x, &g).unwrap();
            let b = gate_pdf_exact(x, &g.swapped()).unwrap();
            prop_assert!((a - b).abs() < 1e-12);
        }

        #[test]
        fn shift_equivariance(g in draw(), t in 0.0..1.0f64, delta in -3.0..3.0f64) {
            let (lo, hi) = g.envelope(6.0);
            let x = lo + t * (hi - lo);
            let mut shifted = g;
            shifted.x0.mu += delta;
            let a = gate_pdf_exact(x + delta, &shifted).unwrap();
            let b = gate_pdf_exact(x, &g).unwrap();
            prop_assert!((a - b).abs() < 1e-13);
        }

        #[test]
        fn normalised_and_moment_consistent(g in draw()) {
            prop_assert!((gate_moment_quadrature(&g, 0).unwrap() - 1.0).abs() < 1e-8);
            let m = gate_moments(&g).unwrap();
            prop_assert!(m.closed_form_used);
        }

        #[test]
        fn nonnegative(g in draw(), t in 0.0..1.0f64) {
            let (lo, hi) = g.envelope(14.0);
            prop_assert!(gate_pdf_exact(lo + t * (hi - lo), &g).unwrap() >= 0.0);
        }
    }
}
