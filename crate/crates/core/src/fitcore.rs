//! Working-independence penalized least squares and GCV smoothing selection.
//!
//! Rows of the stacked design are ordered subject-major, then visit, then grid
//! point: row `(i, j, ℓ)` carries `[B(t_ℓ, X_ij)ᵀ, Z_ijᵀ]`.
//!
//! [`assemble_design`] materializes that matrix literally. [`fit`] never does:
//! because every visit shares the grid `t_1..t_L`, each design row factors as
//! `Σ_k c_k(x, z)·E_k·a(t)`, so `MᵀM` and `MᵀY` only need the per-subject sums
//! `Σ_j c_ij c_ijᵀ` and `Σ_j (Aᵀy_ij) c_ijᵀ`, where `A` holds `a(t_ℓ)` by row.
//! Resampling subjects then amounts to re-weighting those sums.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::linalg::{axpy, dot, Cholesky, Mat};
use crate::splinebasis::{MeanKind, MeanStructure, Placement};

/// One functional observation `Y_ij(t_1..t_L)` with its covariates.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Visit {
    pub x: f64,
    pub z: Vec<f64>,
    pub y: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Subject {
    pub id: String,
    pub visits: Vec<Visit>,
}

/// Subjects × visits × grid observations on a common grid.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct FunctionalDataset {
    grid: Vec<f64>,
    subjects: Vec<Subject>,
    p: usize,
}

impl FunctionalDataset {
    pub fn new(grid: Vec<f64>, subjects: Vec<Subject>) -> Result<Self> {
        if grid.is_empty() {
            return Err(Error::Structural("empty observation grid".into()));
        }
        if !grid.iter().all(|t| (0.0..=1.0).contains(t)) {
            return Err(Error::Structural("grid points must lie in [0, 1]".into()));
        }
        if !grid.windows(2).all(|w| w[0] < w[1]) {
            return Err(Error::Structural("grid must be strictly increasing".into()));
        }
        if subjects.is_empty() {
            return Err(Error::Structural("dataset has no subjects".into()));
        }
        let p = subjects[0].visits.first().map_or(0, |v| v.z.len());
        for s in &subjects {
            if s.visits.is_empty() {
                return Err(Error::Structural(format!("subject {} has no visits", s.id)));
            }
            for (j, v) in s.visits.iter().enumerate() {
                if v.y.len() != grid.len() {
                    return Err(Error::Structural(format!(
                        "subject {} visit {}: {} observations for a grid of {}",
                        s.id,
                        j + 1,
                        v.y.len(),
                        grid.len()
                    )));
                }
                if v.z.len() != p {
                    return Err(Error::Structural(format!(
                        "subject {} visit {}: {} nuisance covariates, expected {p}",
                        s.id,
                        j + 1,
                        v.z.len()
                    )));
                }
                if !v.x.is_finite() || !v.z.iter().chain(&v.y).all(|u| u.is_finite()) {
                    return Err(Error::Structural(format!("subject {} visit {}: non-finite value", s.id, j + 1)));
                }
            }
        }
        Ok(Self { grid, subjects, p })
    }

    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    pub fn subjects(&self) -> &[Subject] {
        &self.subjects
    }

    /// Number of subjects.
    pub fn n(&self) -> usize {
        self.subjects.len()
    }

    /// Number of nuisance covariates.
    pub fn p(&self) -> usize {
        self.p
    }

    pub fn grid_len(&self) -> usize {
        self.grid.len()
    }

    pub fn total_visits(&self) -> usize {
        self.subjects.iter().map(|s| s.visits.len()).sum()
    }

    /// `L·Σ m_i`, the length of the stacked response.
    pub fn total_rows(&self) -> usize {
        self.grid.len() * self.total_visits()
    }

    pub fn t_range(&self) -> (f64, f64) {
        (self.grid[0], *self.grid.last().expect("grid is nonempty"))
    }

    pub fn x_range(&self) -> (f64, f64) {
        self.subjects
            .iter()
            .flat_map(|s| s.visits.iter().map(|v| v.x))
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), x| (lo.min(x), hi.max(x)))
    }

    /// True when `X_ij = X_i` and `Z_ij = Z_i` for every subject.
    pub fn covariates_visit_invariant(&self) -> bool {
        self.subjects.iter().all(|s| {
            let first = &s.visits[0];
            s.visits.iter().all(|v| v.x == first.x && v.z == first.z)
        })
    }

    /// Same subjects in a different order.
    pub fn permuted(&self, order: &[usize]) -> Result<Self> {
        let subjects = order.iter().map(|&i| self.subjects[i].clone()).collect();
        Self::new(self.grid.clone(), subjects)
    }
}

/// The literal stacked design `M = [B(t_ℓ, X_ij)ᵀ, Z_ijᵀ]` and response `Y`.
pub fn assemble_design(ds: &FunctionalDataset, ms: &MeanStructure) -> Result<(Mat, Vec<f64>)> {
    let d = ms.dim();
    let width = d + ds.p();
    let rows = ds.total_rows();
    let mut m = Mat::zeros(rows, width);
    let mut y = Vec::with_capacity(rows);
    let mut r = 0;
    for s in ds.subjects() {
        for v in &s.visits {
            for (l, &t) in ds.grid().iter().enumerate() {
                let row = m.row_mut(r);
                ms.design_row_into(t, v.x, &mut row[..d])?;
                row[d..].copy_from_slice(&v.z);
                y.push(v.y[l]);
                r += 1;
            }
        }
    }
    Ok((m, y))
}

#[derive(Debug, Clone, PartialEq)]
pub struct PenalizedSolution {
    pub coef: Vec<f64>,
    pub edf: f64,
    pub sse: f64,
}

/// Solves `(MᵀM + P)·coef = MᵀY` by Cholesky. `p` must already be padded to
/// the full width of `m`.
pub fn solve_penalized(m: &Mat, y: &[f64], p: &Mat) -> Result<PenalizedSolution> {
    if m.rows() != y.len() || p.rows() != m.cols() || p.cols() != m.cols() {
        return Err(Error::Structural(format!(
            "design {}x{}, response {}, penalty {}x{}",
            m.rows(),
            m.cols(),
            y.len(),
            p.rows(),
            p.cols()
        )));
    }
    let w = m.cols();
    let mut gram = Mat::zeros(w, w);
    let mut rhs = vec![0.0; w];
    for (i, &yi) in y.iter().enumerate() {
        let row = m.row(i);
        for a in 0..w {
            if row[a] == 0.0 {
                continue;
            }
            axpy(row[a], row, gram.row_mut(a));
            rhs[a] += row[a] * yi;
        }
    }
    let mut s = gram.clone();
    s.add_assign_scaled(p, 1.0);
    let ch = Cholesky::factor(&s).map_err(|e| deficiency(e, "penalized normal equations"))?;
    let coef = ch.solve(&rhs);
    let edf = ch.trace_inverse_times(&gram);
    let sse = m.matvec(&coef).iter().zip(y).map(|(f, yi)| (yi - f) * (yi - f)).sum();
    Ok(PenalizedSolution { coef, edf, sse })
}

fn deficiency(e: Error, what: &str) -> Error {
    match e {
        Error::Singular(msg) => Error::Singular(format!("{what}: {msg}")),
        other => other,
    }
}

/// `N·SSE / (N − edf)²`.
pub fn gcv_from_parts(rows: usize, sse: f64, edf: f64) -> Result<f64> {
    let n = rows as f64;
    if !(edf < n * (1.0 - 1e-10)) {
        return Err(Error::DegenerateSmoothing { edf, rows });
    }
    Ok(n * sse / ((n - edf) * (n - edf)))
}

/// GCV score of the penalized fit of `y` on `m`.
pub fn gcv_score(m: &Mat, y: &[f64], p: &Mat) -> Result<f64> {
    let sol = solve_penalized(m, y, p)?;
    gcv_from_parts(m.rows(), sol.sse, sol.edf)
}

/// Candidate `(λ_t, λ_x)` pairs for the GCV search.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct LambdaGrid {
    points: Vec<(f64, f64)>,
}

impl Default for LambdaGrid {
    /// Seven log-spaced values per axis over `[1e-4, 1e4]`.
    fn default() -> Self {
        Self::log_spaced(1e-4, 1e4, 7)
    }
}

impl LambdaGrid {
    pub fn new(points: Vec<(f64, f64)>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::InvalidParameter("empty smoothing-parameter grid".into()));
        }
        if points.iter().any(|&(a, b)| !(a >= 0.0 && b >= 0.0 && a.is_finite() && b.is_finite())) {
            return Err(Error::InvalidParameter("smoothing parameters must be finite and non-negative".into()));
        }
        Ok(Self { points })
    }

    /// Product grid with `per_axis` log-spaced values on each axis.
    pub fn log_spaced(lo: f64, hi: f64, per_axis: usize) -> Self {
        let axis: Vec<f64> = if per_axis == 1 {
            vec![lo]
        } else {
            let (a, b) = (libm::log10(lo), libm::log10(hi));
            (0..per_axis).map(|k| libm::pow(10.0, a + (b - a) * k as f64 / (per_axis - 1) as f64)).collect()
        };
        let points = axis.iter().flat_map(|&lt| axis.iter().map(move |&lx| (lt, lx))).collect();
        Self { points }
    }

    pub fn single(lambda_t: f64, lambda_x: f64) -> Result<Self> {
        Self::new(vec![(lambda_t, lambda_x)])
    }

    pub fn points(&self) -> &[(f64, f64)] {
        &self.points
    }

    /// The distinct penalties the grid induces on `ms`: a single `(0, 0)` for
    /// unpenalized structures, the `λ_t` axis alone when `λ_x` is unused.
    pub fn effective_for(&self, ms: &MeanStructure) -> Vec<(f64, f64)> {
        if !ms.is_penalized() {
            return vec![(0.0, 0.0)];
        }
        let mut out: Vec<(f64, f64)> = Vec::new();
        for &(lt, lx) in &self.points {
            let pt = if ms.uses_lambda_x() { (lt, lx) } else { (lt, 0.0) };
            if !out.iter().any(|q| q.0.to_bits() == pt.0.to_bits() && q.1.to_bits() == pt.1.to_bits()) {
                out.push(pt);
            }
        }
        out
    }
}

/// A fitted mean structure.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct FitResult {
    pub structure: MeanStructure,
    /// `[β̂; τ̂]`
    pub coef: Vec<f64>,
    pub lambda: (f64, f64),
    pub edf: f64,
    pub sse: f64,
    pub gcv: f64,
    pub rows: usize,
    pub t_domain: (f64, f64),
    pub x_domain: (f64, f64),
}

impl FitResult {
    pub fn beta_dim(&self) -> usize {
        self.structure.dim()
    }

    pub fn beta(&self) -> &[f64] {
        &self.coef[..self.beta_dim()]
    }

    pub fn tau(&self) -> &[f64] {
        &self.coef[self.beta_dim()..]
    }

    /// `μ̂(t, x) = B(t, x)ᵀβ̂`
    pub fn mean_eval(&self, t: f64, x: f64) -> Result<f64> {
        let row = crate::splinebasis::design_row(&self.structure, t, x)?;
        Ok(dot(&row, self.beta()))
    }

    /// `μ̂(t, x) + zᵀτ̂`
    pub fn fitted(&self, t: f64, x: f64, z: &[f64]) -> Result<f64> {
        Ok(self.mean_eval(t, x)? + dot(z, self.tau()))
    }
}

/// Per-subject sufficient statistics for the normal equations.
#[derive(Debug, Clone, PartialEq)]
pub struct SubjectStats {
    pub visits: usize,
    /// `Σ_j c_ij c_ijᵀ`, `s × s` row-major.
    pub cross: Vec<f64>,
    /// `Σ_j (Aᵀy_ij) c_ijᵀ`, `q × s` row-major.
    pub proj: Vec<f64>,
    /// `Σ_j y_ijᵀy_ij`
    pub yy: f64,
}

/// Running weighted sum of [`SubjectStats`].
#[derive(Debug, Clone, PartialEq)]
pub struct StatsSum {
    pub visits: usize,
    pub cross: Vec<f64>,
    pub proj: Vec<f64>,
    pub yy: f64,
}

impl StatsSum {
    pub fn add(&mut self, s: &SubjectStats) {
        self.add_weighted(s, 1);
    }

    /// Adds `times` copies of `s`.
    pub fn add_weighted(&mut self, s: &SubjectStats, times: usize) {
        if times == 0 {
            return;
        }
        let w = times as f64;
        self.visits += s.visits * times;
        axpy(w, &s.cross, &mut self.cross);
        axpy(w, &s.proj, &mut self.proj);
        self.yy += w * s.yy;
    }
}

/// Precomputed structure for turning subject statistics into fits.
#[derive(Debug, Clone)]
pub struct FitEngine {
    structure: MeanStructure,
    p: usize,
    q: usize,
    s: usize,
    width: usize,
    grid_len: usize,
    placements: Vec<Vec<Placement>>,
    /// `A`, `L × q`
    time_basis: Mat,
    /// `AᵀA`
    time_gram: Mat,
    parts: (Option<Mat>, Option<Mat>),
    lambdas: Vec<(f64, f64)>,
    t_domain: (f64, f64),
    x_domain: (f64, f64),
}

impl FitEngine {
    pub fn new(ds: &FunctionalDataset, ms: &MeanStructure, grid: &LambdaGrid) -> Result<Self> {
        Self::with_domains(ds.grid(), ds.p(), ms, grid, ds.t_range(), ds.x_range())
    }

    pub fn with_domains(
        t_grid: &[f64],
        p: usize,
        ms: &MeanStructure,
        grid: &LambdaGrid,
        t_domain: (f64, f64),
        x_domain: (f64, f64),
    ) -> Result<Self> {
        let q = ms.time_feature_dim();
        let cdim = ms.covariate_feature_dim();
        let s = cdim + p;
        let d = ms.dim();
        let width = d + p;
        let mut placements = ms.placements();
        let unit = ms.unit_time_functional();
        for k in 0..p {
            placements.push(unit.iter().enumerate().filter(|(_, w)| **w != 0.0).map(|(c, &w)| (d + k, c, w)).collect());
        }
        let mut time_basis = Mat::zeros(t_grid.len(), q);
        for (l, &t) in t_grid.iter().enumerate() {
            ms.time_features_into(t, time_basis.row_mut(l))?;
        }
        let time_gram = time_basis.transpose().matmul(&time_basis);
        Ok(Self {
            structure: ms.clone(),
            p,
            q,
            s,
            width,
            grid_len: t_grid.len(),
            placements,
            time_basis,
            time_gram,
            parts: ms.penalty_parts()?,
            lambdas: grid.effective_for(ms),
            t_domain,
            x_domain,
        })
    }

    pub fn structure(&self) -> &MeanStructure {
        &self.structure
    }

    /// Columns of the design, `dim(β) + p`.
    pub fn width(&self) -> usize {
        self.width
    }

    pub fn lambdas(&self) -> &[(f64, f64)] {
        &self.lambdas
    }

    pub fn time_feature_dim(&self) -> usize {
        self.q
    }

    pub fn stats_dim(&self) -> usize {
        self.s
    }

    /// `A`, the time features on the observation grid.
    pub fn time_basis(&self) -> &Mat {
        &self.time_basis
    }

    /// `c(x, z) = [covariate features of x; z]`
    pub fn covariate_vector(&self, x: f64, z: &[f64], out: &mut [f64]) -> Result<()> {
        let cdim = self.s - self.p;
        self.structure.covariate_features_into(x, &mut out[..cdim])?;
        out[cdim..].copy_from_slice(z);
        Ok(())
    }

    /// `Aᵀy` for one visit's curve.
    pub fn project_curve(&self, y: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
        for (l, &yl) in y.iter().enumerate() {
            axpy(yl, self.time_basis.row(l), out);
        }
    }

    pub fn empty_sum(&self) -> StatsSum {
        StatsSum { visits: 0, cross: vec![0.0; self.s * self.s], proj: vec![0.0; self.q * self.s], yy: 0.0 }
    }

    pub fn subject_stats(&self, subject: &Subject) -> Result<SubjectStats> {
        let (q, s) = (self.q, self.s);
        let mut out = SubjectStats { visits: subject.visits.len(), cross: vec![0.0; s * s], proj: vec![0.0; q * s], yy: 0.0 };
        let mut c = vec![0.0; s];
        let mut ay = vec![0.0; q];
        for v in &subject.visits {
            if v.y.len() != self.grid_len || v.z.len() != self.p {
                return Err(Error::Structural(format!("subject {}: visit shape does not match the design", subject.id)));
            }
            self.covariate_vector(v.x, &v.z, &mut c)?;
            self.project_curve(&v.y, &mut ay);
            accumulate_outer(&mut out.cross, &c, &c, 1.0);
            accumulate_outer(&mut out.proj, &ay, &c, 1.0);
            out.yy += dot(&v.y, &v.y);
        }
        Ok(out)
    }

    /// `MᵀM` from `Σ c cᵀ`.
    pub fn gram(&self, cross: &[f64]) -> Mat {
        let (s, w) = (self.s, self.width);
        let g = &self.time_gram;
        let mut out = Mat::zeros(w, w);
        for k in 0..s {
            for k2 in 0..s {
                let ckk = cross[k * s + k2];
                if ckk == 0.0 {
                    continue;
                }
                for &(r1, c1, v1) in &self.placements[k] {
                    let a = ckk * v1;
                    let grow = g.row(c1);
                    let orow = out.row_mut(r1);
                    for &(r2, c2, v2) in &self.placements[k2] {
                        orow[r2] += a * v2 * grow[c2];
                    }
                }
            }
        }
        out
    }

    /// `MᵀY` from `Σ (Aᵀy) cᵀ`.
    pub fn rhs(&self, proj: &[f64]) -> Vec<f64> {
        let s = self.s;
        let mut out = vec![0.0; self.width];
        for (k, place) in self.placements.iter().enumerate() {
            for &(r, c, v) in place {
                out[r] += v * proj[c * s + k];
            }
        }
        out
    }

    /// Factorizes `MᵀM + P_λ` for every candidate `λ`.
    pub fn solver(&self, gram: Mat) -> Result<GcvSolver> {
        GcvSolver::new(gram, &self.parts, &self.lambdas, self.width)
    }

    pub fn fit_sum(&self, sum: &StatsSum) -> Result<FitResult> {
        let solver = self.solver(self.gram(&sum.cross))?;
        self.fit_with(&solver, &self.rhs(&sum.proj), sum.yy, sum.visits * self.grid_len)
    }

    pub fn fit_with(&self, solver: &GcvSolver, rhs: &[f64], yy: f64, rows: usize) -> Result<FitResult> {
        let sel = solver.select(rhs, yy, rows)?;
        Ok(FitResult {
            structure: self.structure.clone(),
            coef: sel.coef,
            lambda: sel.lambda,
            edf: sel.edf,
            sse: sel.sse,
            gcv: sel.gcv,
            rows,
            t_domain: self.t_domain,
            x_domain: self.x_domain,
        })
    }
}

/// `out += w·a bᵀ` with `out` row-major `len(a) × len(b)`.
#[inline]
pub(crate) fn accumulate_outer(out: &mut [f64], a: &[f64], b: &[f64], w: f64) {
    let nb = b.len();
    for (i, &ai) in a.iter().enumerate() {
        if ai == 0.0 {
            continue;
        }
        axpy(w * ai, b, &mut out[i * nb..(i + 1) * nb]);
    }
}

struct Candidate {
    lambda: (f64, f64),
    penalty: Mat,
    factor: Cholesky,
    edf: f64,
}

/// `MᵀM + P_λ` factorized once per candidate `λ`; reusable for any response
/// sharing the same covariate design.
pub struct GcvSolver {
    candidates: Vec<Candidate>,
}

#[derive(Debug, Clone)]
pub struct Selection {
    pub coef: Vec<f64>,
    pub lambda: (f64, f64),
    pub edf: f64,
    pub sse: f64,
    pub gcv: f64,
}

impl GcvSolver {
    fn new(gram: Mat, parts: &(Option<Mat>, Option<Mat>), lambdas: &[(f64, f64)], width: usize) -> Result<Self> {
        let mut candidates = Vec::with_capacity(lambdas.len());
        let mut last_err = None;
        for &(lt, lx) in lambdas {
            let mut penalty = Mat::zeros(width, width);
            for (part, lam) in [(&parts.0, lt), (&parts.1, lx)] {
                if let Some(m) = part {
                    let d = m.rows();
                    for i in 0..d {
                        axpy(lam, m.row(i), &mut penalty.row_mut(i)[..d]);
                    }
                }
            }
            let mut s = gram.clone();
            s.add_assign_scaled(&penalty, 1.0);
            match Cholesky::factor(&s) {
                Ok(factor) => {
                    let edf = factor.trace_inverse_times(&gram);
                    candidates.push(Candidate { lambda: (lt, lx), penalty, factor, edf });
                }
                Err(e) => last_err = Some(deficiency(e, "penalized normal equations")),
            }
        }
        if candidates.is_empty() {
            return Err(last_err.unwrap_or_else(|| Error::InvalidParameter("no smoothing candidates".into())));
        }
        Ok(Self { candidates })
    }

    /// GCV-optimal solution for the given right-hand side. Exact ties go to
    /// the larger `λ_t`, then the larger `λ_x`.
    pub fn select(&self, rhs: &[f64], yy: f64, rows: usize) -> Result<Selection> {
        let mut best: Option<Selection> = None;
        let mut last_err = None;
        for c in &self.candidates {
            let coef = c.factor.solve(rhs);
            let sse = (yy - dot(&coef, rhs) - c.penalty.quad_form(&coef)).max(0.0);
            let gcv = match gcv_from_parts(rows, sse, c.edf) {
                Ok(g) => g,
                Err(e) => {
                    last_err = Some(e);
                    continue;
                }
            };
            let better = match &best {
                None => true,
                Some(b) => gcv < b.gcv || (gcv == b.gcv && (c.lambda.0, c.lambda.1) > (b.lambda.0, b.lambda.1)),
            };
            if better {
                best = Some(Selection { coef, lambda: c.lambda, edf: c.edf, sse, gcv });
            }
        }
        best.ok_or_else(|| last_err.expect("at least one candidate exists"))
    }
}

/// Working-independence fit of `ms` with GCV over `grid`.
pub fn fit(ds: &FunctionalDataset, ms: &MeanStructure, grid: &LambdaGrid) -> Result<FitResult> {
    let engine = FitEngine::new(ds, ms, grid)?;
    let mut sum = engine.empty_sum();
    for s in ds.subjects() {
        sum.add(&engine.subject_stats(s)?);
    }
    engine.fit_sum(&sum)
}

/// Checks that `ms` can be fitted to `ds`: bases cover the observed ranges.
pub(crate) fn check_structure(ds: &FunctionalDataset, ms: &MeanStructure) -> Result<()> {
    if ms.kind() == MeanKind::BivariateSmooth || ms.kind() == MeanKind::PartialLinear || ms.kind() == MeanKind::TimeSmooth {
        let (tl, th) = ds.t_range();
        ms.t_basis().expect("spline structures carry a t basis").eval(tl)?;
        ms.t_basis().expect("spline structures carry a t basis").eval(th)?;
    }
    if let Some(bx) = ms.x_basis() {
        let (xl, xh) = ds.x_range();
        bx.eval(xl)?;
        bx.eval(xh)?;
    }
    Ok(())
}
