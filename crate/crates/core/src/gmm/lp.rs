//! Dense simplex for `min cᵀx  s.t.  Ax ≤ b, x ≥ 0`.
//!
//! The tableau is kept in condensed form: one row per basic variable and
//! one column per nonbasic variable, each row reading
//! `basic = rhs - Σ coef·nonbasic`. Phase one adds a single artificial
//! column with coefficient -1 in every row and pivots it into the row with
//! the most negative right-hand side.

use nalgebra::DMatrix;

use crate::error::{Result, SstaError};

/// Linear program in inequality form with nonnegative variables.
#[derive(Debug, Clone, PartialEq)]
pub struct LpProblem {
    pub c: Vec<f64>,
    pub a: DMatrix<f64>,
    pub b: Vec<f64>,
}

impl LpProblem {
    pub fn new(c: Vec<f64>, a: DMatrix<f64>, b: Vec<f64>) -> Result<Self> {
        let p = LpProblem { c, a, b };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if self.a.nrows() != self.b.len() || self.a.ncols() != self.c.len() {
            return Err(SstaError::domain(format!(
                "inconsistent LP dimensions: A is {}x{}, b has {}, c has {}",
                self.a.nrows(),
                self.a.ncols(),
                self.b.len(),
                self.c.len()
            )));
        }
        let finite = self.a.iter().chain(&self.b).chain(&self.c).all(|v| v.is_finite());
        if !finite {
            return Err(SstaError::domain("LP data must be finite"));
        }
        Ok(())
    }

    pub fn n_vars(&self) -> usize {
        self.c.len()
    }

    pub fn n_constraints(&self) -> usize {
        self.b.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LpSolution {
    pub x: Vec<f64>,
    pub objective: f64,
    /// Smallest reduced cost at termination (≥ -tolerance certifies optimality).
    pub min_reduced_cost: f64,
    pub pivots: usize,
}

/// Degenerate pivots tolerated under Dantzig's rule before Bland's rule
/// takes over.
pub const BLAND_AFTER_DEGENERATE: usize = 1000;

struct Tableau {
    rows: usize,
    cols: usize,
    // (rows + 2) x (cols + 1), row-major; last column is the rhs.
    // Row `rows` is the phase-two objective, row `rows + 1` the phase-one one.
    data: Vec<f64>,
    basis: Vec<usize>,
    nonbasic: Vec<usize>,
    tol: f64,
    degenerate: usize,
    pivots: usize,
    max_pivots: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Phase {
    One,
    Two,
}

impl Tableau {
    #[inline]
    fn width(&self) -> usize {
        self.cols + 1
    }

    #[inline]
    fn at(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.width() + c]
    }

    fn rhs(&self, r: usize) -> f64 {
        self.at(r, self.cols)
    }

    fn objective_row(&self, phase: Phase) -> usize {
        match phase {
            Phase::Two => self.rows,
            Phase::One => self.rows + 1,
        }
    }

    fn pivot(&mut self, r: usize, s: usize) {
        let w = self.width();
        let piv = self.at(r, s);
        let inv = 1.0 / piv;
        let total_rows = self.rows + 2;
        let row_r: Vec<f64> = self.data[r * w..(r + 1) * w].to_vec();
        for i in 0..total_rows {
            if i == r {
                continue;
            }
            let f = self.data[i * w + s];
            if f == 0.0 {
                continue;
            }
            let ratio = f * inv;
            let row = &mut self.data[i * w..(i + 1) * w];
            for (j, v) in row.iter_mut().enumerate() {
                if j != s {
                    *v -= ratio * row_r[j];
                }
            }
            row[s] = -ratio;
        }
        let row = &mut self.data[r * w..(r + 1) * w];
        for (j, v) in row.iter_mut().enumerate() {
            *v = if j == s { inv } else { *v * inv };
        }
        std::mem::swap(&mut self.basis[r], &mut self.nonbasic[s]);
        self.pivots += 1;
    }

    /// Entering column, or `None` at optimality. Coefficients in the
    /// objective row are negated reduced costs.
    fn entering(&self, obj: usize, bland: bool, exclude: Option<usize>) -> Option<usize> {
        let mut best: Option<(usize, f64)> = None;
        for j in 0..self.cols {
            if Some(self.nonbasic[j]) == exclude {
                continue;
            }
            let e = self.at(obj, j);
            if e <= self.tol {
                continue;
            }
            best = match best {
                None => Some((j, e)),
                Some((bj, be)) => {
                    let better = if bland {
                        self.nonbasic[j] < self.nonbasic[bj]
                    } else {
                        e > be || (e == be && self.nonbasic[j] < self.nonbasic[bj])
                    };
                    if better {
                        Some((j, e))
                    } else {
                        Some((bj, be))
                    }
                }
            };
        }
        best.map(|(j, _)| j)
    }

    fn leaving(&self, s: usize) -> Option<usize> {
        let mut best: Option<(usize, f64)> = None;
        for i in 0..self.rows {
            let a = self.at(i, s);
            if a <= self.tol {
                continue;
            }
            let ratio = self.rhs(i).max(0.0) / a;
            best = match best {
                None => Some((i, ratio)),
                Some((bi, br)) => {
                    if ratio < br || (ratio == br && self.basis[i] < self.basis[bi]) {
                        Some((i, ratio))
                    } else {
                        Some((bi, br))
                    }
                }
            };
        }
        best.map(|(i, _)| i)
    }

    fn run(&mut self, phase: Phase, exclude: Option<usize>) -> Result<()> {
        let obj = self.objective_row(phase);
        loop {
            let bland = self.degenerate >= BLAND_AFTER_DEGENERATE;
            let Some(s) = self.entering(obj, bland, exclude) else {
                return Ok(());
            };
            let Some(r) = self.leaving(s) else {
                return Err(SstaError::Unbounded {
                    column: self.nonbasic[s],
                });
            };
            if self.rhs(r) <= self.tol {
                self.degenerate += 1;
            }
            if self.pivots >= self.max_pivots {
                return Err(SstaError::numerical(format!(
                    "simplex exceeded {} pivots ({} degenerate)",
                    self.max_pivots, self.degenerate
                )));
            }
            self.pivot(r, s);
        }
    }
}

/// Solves the LP, returning an optimal basic feasible solution.
pub fn lp_solve(p: &LpProblem) -> Result<LpSolution> {
    p.validate()?;
    let (rows, n) = (p.n_constraints(), p.n_vars());
    // labels: 0..n originals, n..n+rows slacks, n+rows the artificial
    let artificial = n + rows;
    let cols = n + 1;
    let scale =
        p.a.iter()
            .chain(&p.b)
            .chain(&p.c)
            .fold(1.0f64, |m, v| m.max(v.abs()));
    let mut t = Tableau {
        rows,
        cols,
        data: vec![0.0; (rows + 2) * (cols + 1)],
        basis: (n..n + rows).collect(),
        nonbasic: (0..n).chain(std::iter::once(artificial)).collect(),
        tol: 1e-12 * scale,
        degenerate: 0,
        pivots: 0,
        max_pivots: 50 * (rows + cols) + 1000,
    };
    let w = cols + 1;
    for i in 0..rows {
        for j in 0..n {
            t.data[i * w + j] = p.a[(i, j)];
        }
        t.data[i * w + n] = -1.0;
        t.data[i * w + cols] = p.b[i];
    }
    for j in 0..n {
        t.data[rows * w + j] = -p.c[j];
    }
    // phase-one objective w = x_a
    t.data[(rows + 1) * w + n] = -1.0;

    let most_negative = (0..rows)
        .filter(|&i| p.b[i] < 0.0)
        .min_by(|&i, &j| p.b[i].total_cmp(&p.b[j]).then(i.cmp(&j)));
    if let Some(r) = most_negative {
        t.pivot(r, n);
        t.run(Phase::One, None)?;
        let infeas = t.rhs(rows + 1);
        if infeas.abs() > 1e-9 * scale {
            return Err(SstaError::Infeasible {
                phase_one_optimum: infeas,
            });
        }
        if let Some(r) = t.basis.iter().position(|&b| b == artificial) {
            // artificial basic at zero: swap it for any usable nonbasic
            let s = (0..cols)
                .filter(|&j| t.nonbasic[j] != artificial)
                .max_by(|&a, &b| t.at(r, a).abs().total_cmp(&t.at(r, b).abs()).then(b.cmp(&a)));
            match s {
                Some(s) if t.at(r, s).abs() > t.tol => t.pivot(r, s),
                _ => {
                    return Err(SstaError::numerical(
                        "phase one left the artificial variable in a redundant row",
                    ))
                }
            }
        }
    }
    // the artificial column is now nonbasic and pinned at zero
    t.run(Phase::Two, Some(artificial))?;

    let mut x = vec![0.0; n];
    for (i, &label) in t.basis.iter().enumerate() {
        if label < n {
            x[label] = t.rhs(i).max(0.0);
        }
    }
    let objective = x.iter().zip(&p.c).map(|(a, b)| a * b).sum();
    let min_reduced_cost = (0..cols)
        .filter(|&j| t.nonbasic[j] != artificial)
        .map(|j| -t.at(rows, j))
        .fold(f64::INFINITY, f64::min);
    Ok(LpSolution {
        x,
        objective,
        min_reduced_cost,
        pivots: t.pivots,
    })
}
