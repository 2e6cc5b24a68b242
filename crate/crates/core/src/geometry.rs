//! Metric and codistribution algebra on a coordinate chart.
//!
//! Covector components live in the chart coframe and are stored as column
//! vectors; a family of covectors is a matrix whose rows are the component
//! lists. The projector built by [`constraint_projector`] acts on momentum
//! component vectors from the left: `p_new = P * p`. Systems posed in a
//! moving coframe (quasi-velocities) simply declare their metric and
//! constraint rows in that coframe; nothing here depends on the coframe
//! being exact.
//!
//! All values are immutable after construction and all operations are pure,
//! so they can be used concurrently without synchronization.

use crate::error::{Error, Result};
use crate::linalg::{
    check_finite_matrix, check_finite_vector, max_principal_angle, select_independent_rows,
    DEFAULT_RANK_TOL,
};
use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::sync::Arc;

type MatrixFn = Arc<dyn Fn(&DVector<f64>) -> DMatrix<f64> + Send + Sync>;
type MatrixGradFn = Arc<dyn Fn(&DVector<f64>) -> Vec<DMatrix<f64>> + Send + Sync>;
type ScalarFn = Arc<dyn Fn(&DVector<f64>) -> f64 + Send + Sync>;
type RegionFn = Arc<dyn Fn(&DVector<f64>) -> bool + Send + Sync>;

/// Relative symmetry tolerance enforced on every metric evaluation.
const METRIC_SYMMETRY_TOL: f64 = 1e-12;

/// Fixed seed for the sampling directions of [`classify_point`]; a constant
/// seed keeps classification deterministic across runs.
const CLASSIFY_SEED: u64 = 0x6e6f_6e68;

// ---------------------------------------------------------------------------
// Metric
// ---------------------------------------------------------------------------

/// Riemannian metric on a chart: `q -> g(q)`, a symmetric positive-definite
/// matrix of kinetic-energy coefficients, with an optional analytic
/// derivative `q -> [dg/dq^C]_C`.
#[derive(Clone)]
pub struct Metric {
    dim: usize,
    g_at: MatrixFn,
    dg_at: Option<MatrixGradFn>,
}

impl fmt::Debug for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Metric")
            .field("dim", &self.dim)
            .field("analytic_derivative", &self.dg_at.is_some())
            .finish()
    }
}

impl Metric {
    pub fn new(
        dim: usize,
        g_at: impl Fn(&DVector<f64>) -> DMatrix<f64> + Send + Sync + 'static,
    ) -> Self {
        Metric {
            dim,
            g_at: Arc::new(g_at),
            dg_at: None,
        }
    }

    /// Attach an analytic derivative `q -> [dg/dq^C]` (one matrix per
    /// coordinate index).
    pub fn with_derivative(
        mut self,
        dg_at: impl Fn(&DVector<f64>) -> Vec<DMatrix<f64>> + Send + Sync + 'static,
    ) -> Self {
        self.dg_at = Some(Arc::new(dg_at));
        self
    }

    /// Constant metric; its derivative is identically zero.
    pub fn constant(matrix: DMatrix<f64>) -> Self {
        assert_eq!(
            matrix.nrows(),
            matrix.ncols(),
            "metric matrix must be square"
        );
        let dim = matrix.nrows();
        let zeros: Vec<DMatrix<f64>> = (0..dim).map(|_| DMatrix::zeros(dim, dim)).collect();
        Metric {
            dim,
            g_at: Arc::new(move |_q| matrix.clone()),
            dg_at: Some(Arc::new(move |_q| zeros.clone())),
        }
    }

    pub fn euclidean(dim: usize) -> Self {
        Metric::constant(DMatrix::identity(dim, dim))
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn has_analytic_derivative(&self) -> bool {
        self.dg_at.is_some()
    }

    /// Evaluate and factor the metric at `q`, validating symmetry and
    /// positive definiteness.
    pub fn at(&self, q: &DVector<f64>) -> Result<MetricAt> {
        if q.len() != self.dim {
            return Err(Error::Dimension {
                what: "metric evaluation point",
                expected: self.dim,
                got: q.len(),
            });
        }
        let g = (self.g_at)(q);
        if g.nrows() != self.dim || g.ncols() != self.dim {
            return Err(Error::Dimension {
                what: "metric matrix",
                expected: self.dim,
                got: g.nrows(),
            });
        }
        check_finite_matrix(&g, "metric matrix")?;
        let scale = g.iter().fold(0.0_f64, |m, x| m.max(x.abs())).max(1.0);
        for i in 0..self.dim {
            for j in (i + 1)..self.dim {
                if (g[(i, j)] - g[(j, i)]).abs() > METRIC_SYMMETRY_TOL * scale {
                    return Err(Error::MetricNotSpd);
                }
            }
        }
        let chol = Cholesky::new(g.clone()).ok_or(Error::MetricNotSpd)?;
        let l = chol.l();
        Ok(MetricAt { g, chol, l })
    }

    /// `[dg/dq^C]_C` at `q`: analytic when supplied, otherwise central
    /// finite differences with step `1e-6 * max(1, |q_C|)` per coordinate.
    pub fn grad(&self, q: &DVector<f64>) -> Result<Vec<DMatrix<f64>>> {
        if let Some(dg) = &self.dg_at {
            let out = dg(q);
            if out.len() != self.dim {
                return Err(Error::Dimension {
                    what: "metric derivative list",
                    expected: self.dim,
                    got: out.len(),
                });
            }
            return Ok(out);
        }
        let mut out = Vec::with_capacity(self.dim);
        for c in 0..self.dim {
            let h = 1e-6 * q[c].abs().max(1.0);
            let mut qp = q.clone();
            let mut qm = q.clone();
            qp[c] += h;
            qm[c] -= h;
            let gp = (self.g_at)(&qp);
            let gm = (self.g_at)(&qm);
            out.push((gp - gm) / (2.0 * h));
        }
        Ok(out)
    }

    /// Max entrywise deviation between the supplied derivative and central
    /// finite differences of the metric at `q`. Zero when no analytic
    /// derivative is attached.
    pub fn derivative_deviation(&self, q: &DVector<f64>) -> Result<f64> {
        let Some(dg) = &self.dg_at else {
            return Ok(0.0);
        };
        let analytic = dg(q);
        let mut worst = 0.0_f64;
        for c in 0..self.dim {
            let h = 1e-6 * q[c].abs().max(1.0);
            let mut qp = q.clone();
            let mut qm = q.clone();
            qp[c] += h;
            qm[c] -= h;
            let fd = ((self.g_at)(&qp) - (self.g_at)(&qm)) / (2.0 * h);
            worst = worst.max((&fd - &analytic[c]).abs().max());
        }
        Ok(worst)
    }
}

/// Metric evaluated and Cholesky-factored at one point (`g = L L^T`).
///
/// Whitening maps a covector `a` to `w = L^{-1} a`, after which the
/// cometric pairing becomes the Euclidean one: `<a,b>_{g^{-1}} = w_a . w_b`.
pub struct MetricAt {
    g: DMatrix<f64>,
    chol: Cholesky<f64, Dyn>,
    l: DMatrix<f64>,
}

impl MetricAt {
    pub fn dim(&self) -> usize {
        self.g.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.g
    }

    pub fn inverse(&self) -> DMatrix<f64> {
        self.chol.inverse()
    }

    /// Raise indices: `v = g^{-1} p`.
    pub fn raise(&self, p: &DVector<f64>) -> DVector<f64> {
        self.chol.solve(p)
    }

    /// Lower indices: `p = g v`.
    pub fn lower(&self, v: &DVector<f64>) -> DVector<f64> {
        &self.g * v
    }

    /// Cometric pairing `a^T g^{-1} b` of two covectors.
    pub fn copair(&self, a: &DVector<f64>, b: &DVector<f64>) -> f64 {
        a.dot(&self.chol.solve(b))
    }

    /// Cometric norm of a covector.
    pub fn conorm(&self, a: &DVector<f64>) -> f64 {
        self.copair(a, a).max(0.0).sqrt()
    }

    /// Kinetic energy `T = p^T g^{-1} p / 2`.
    pub fn kinetic(&self, p: &DVector<f64>) -> f64 {
        0.5 * self.copair(p, p)
    }

    /// Whiten one covector: `w = L^{-1} a`.
    pub fn whiten(&self, a: &DVector<f64>) -> DVector<f64> {
        self.l
            .solve_lower_triangular(a)
            .expect("Cholesky factor is nonsingular")
    }

    /// Whiten a stack of covector rows: each row `a` becomes `a L^{-T}`.
    pub fn whiten_rows(&self, rows: &DMatrix<f64>) -> DMatrix<f64> {
        if rows.nrows() == 0 {
            return rows.clone();
        }
        let solved = self
            .l
            .solve_lower_triangular(&rows.transpose())
            .expect("Cholesky factor is nonsingular");
        solved.transpose()
    }

    /// Invert whitening for rows: `w -> w L^T`.
    pub fn unwhiten_rows(&self, rows: &DMatrix<f64>) -> DMatrix<f64> {
        rows * self.l.transpose()
    }
}

// ---------------------------------------------------------------------------
// Codistribution
// ---------------------------------------------------------------------------

/// One piece of a stratified codistribution: a region indicator together
/// with the constraint rows spanning the codistribution over that region.
///
/// The rows function must remain evaluable on the closure of the region so
/// that one-sided spans can be read off exactly at boundary points.
#[derive(Clone)]
pub struct Stratum {
    contains: RegionFn,
    rows: MatrixFn,
    row_count: usize,
}

impl Stratum {
    pub fn new(
        contains: impl Fn(&DVector<f64>) -> bool + Send + Sync + 'static,
        row_count: usize,
        rows: impl Fn(&DVector<f64>) -> DMatrix<f64> + Send + Sync + 'static,
    ) -> Self {
        Stratum {
            contains: Arc::new(contains),
            rows: Arc::new(rows),
            row_count,
        }
    }

    /// Stratum whose rows do not depend on the base point.
    pub fn constant_rows(
        contains: impl Fn(&DVector<f64>) -> bool + Send + Sync + 'static,
        rows: DMatrix<f64>,
    ) -> Self {
        let count = rows.nrows();
        Stratum {
            contains: Arc::new(contains),
            rows: Arc::new(move |_q| rows.clone()),
            row_count: count,
        }
    }

    pub fn contains(&self, q: &DVector<f64>) -> bool {
        (self.contains)(q)
    }

    pub fn rows_at(&self, q: &DVector<f64>) -> DMatrix<f64> {
        (self.rows)(q)
    }

    pub fn row_count(&self) -> usize {
        self.row_count
    }
}

/// Family of constraint one-forms with possibly variable pointwise rank.
///
/// `forms_at` returns an `m x dim` matrix whose row `i` holds the components
/// of the `i`-th generating form. Optional strata give an exact piecewise
/// description; an optional scalar indicator has the singular set inside its
/// zero level set and is used for event detection.
#[derive(Clone)]
pub struct Codistribution {
    dim: usize,
    m: usize,
    forms_at: MatrixFn,
    strata: Vec<Stratum>,
    singular_indicator: Option<ScalarFn>,
}

impl fmt::Debug for Codistribution {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Codistribution")
            .field("dim", &self.dim)
            .field("m", &self.m)
            .field("strata", &self.strata.len())
            .field("singular_indicator", &self.singular_indicator.is_some())
            .finish()
    }
}

impl Codistribution {
    pub fn new(
        dim: usize,
        m: usize,
        forms_at: impl Fn(&DVector<f64>) -> DMatrix<f64> + Send + Sync + 'static,
    ) -> Self {
        Codistribution {
            dim,
            m,
            forms_at: Arc::new(forms_at),
            strata: Vec::new(),
            singular_indicator: None,
        }
    }

    /// Codistribution with no constraints anywhere.
    pub fn empty(dim: usize) -> Self {
        Codistribution::new(dim, 0, move |_q| DMatrix::zeros(0, dim))
    }

    /// Attach an exact stratified description. Strata are looked up in
    /// order; the first matching region wins, so boundary conventions are
    /// decided by the declaration order.
    pub fn with_strata(mut self, strata: Vec<Stratum>) -> Self {
        self.strata = strata;
        self
    }

    /// Attach a scalar whose zero level set contains the singular set.
    pub fn with_singular_indicator(
        mut self,
        f: impl Fn(&DVector<f64>) -> f64 + Send + Sync + 'static,
    ) -> Self {
        self.singular_indicator = Some(Arc::new(f));
        self
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Number of generating forms of the smooth description.
    pub fn form_count(&self) -> usize {
        self.m
    }

    pub fn has_strata(&self) -> bool {
        !self.strata.is_empty()
    }

    pub fn strata(&self) -> &[Stratum] {
        &self.strata
    }

    pub fn has_singular_indicator(&self) -> bool {
        self.singular_indicator.is_some()
    }

    pub fn singular_indicator_at(&self, q: &DVector<f64>) -> Option<f64> {
        self.singular_indicator.as_ref().map(|f| f(q))
    }

    /// Smooth generating forms at `q` (`m x dim`).
    pub fn forms(&self, q: &DVector<f64>) -> DMatrix<f64> {
        (self.forms_at)(q)
    }

    /// Index of the first stratum containing `q`.
    pub fn stratum_index(&self, q: &DVector<f64>) -> Option<usize> {
        self.strata.iter().position(|s| s.contains(q))
    }

    /// Constraint rows at `q` through the exact strata when declared,
    /// otherwise through the smooth family.
    pub fn effective_forms(&self, q: &DVector<f64>) -> Result<DMatrix<f64>> {
        if self.has_strata() {
            let idx = self.stratum_index(q).ok_or_else(|| {
                Error::input(
                    "no stratum contains the evaluation point; strata must cover the chart",
                )
            })?;
            Ok(self.strata[idx].rows_at(q))
        } else {
            Ok(self.forms(q))
        }
    }

    /// Pointwise rank of the codistribution at `q`.
    pub fn rank_at(&self, q: &DVector<f64>, tol: f64) -> Result<usize> {
        numeric_rank(&self.effective_forms(q)?, tol)
    }
}

// ---------------------------------------------------------------------------
// SubspaceBasis
// ---------------------------------------------------------------------------

/// Orthonormal basis (in the cometric pairing) of a subspace of the
/// cotangent space at a fixed base point.
///
/// `rows` holds the covector components, `whitened` the same basis mapped by
/// `L^{-1}` so that its rows are Euclidean-orthonormal; principal-angle and
/// containment computations run on the whitened copy.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SubspaceBasis {
    point: DVector<f64>,
    rows: DMatrix<f64>,
    whitened: DMatrix<f64>,
}

impl SubspaceBasis {
    /// Zero subspace at `point`.
    pub fn empty(point: DVector<f64>) -> Self {
        let dim = point.len();
        SubspaceBasis {
            point,
            rows: DMatrix::zeros(0, dim),
            whitened: DMatrix::zeros(0, dim),
        }
    }

    pub fn point(&self) -> &DVector<f64> {
        &self.point
    }

    pub fn rank(&self) -> usize {
        self.rows.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.rank() == 0
    }

    /// Covector components of the basis rows.
    pub fn rows(&self) -> &DMatrix<f64> {
        &self.rows
    }

    /// Euclidean-orthonormal (whitened) copy of the basis rows.
    pub fn whitened(&self) -> &DMatrix<f64> {
        &self.whitened
    }

    /// Principal angles against another basis at the same point.
    pub fn principal_angles(&self, other: &SubspaceBasis) -> Vec<f64> {
        crate::linalg::principal_angles(&self.whitened, &other.whitened)
    }

    /// Largest principal angle when the ranks agree, `None` otherwise.
    pub fn max_angle(&self, other: &SubspaceBasis) -> Option<f64> {
        max_principal_angle(&self.whitened, &other.whitened)
    }

    /// Residual of the cometric-orthogonal projection of covector `a` onto
    /// this subspace, measured in the cometric norm of the defining metric.
    pub fn projection_residual(&self, metric: &Metric, a: &DVector<f64>) -> Result<f64> {
        let at = metric.at(&self.point)?;
        let w = at.whiten(a);
        if self.rank() == 0 {
            return Ok(w.norm());
        }
        let coeffs = &self.whitened * &w;
        let recon = self.whitened.transpose() * coeffs;
        Ok((w - recon).norm())
    }
}

// ---------------------------------------------------------------------------
// Operations
// ---------------------------------------------------------------------------

/// Number of singular values above the relative threshold; the rank
/// routine shared across the crate.
pub use crate::linalg::numeric_rank;

/// Gram matrix `C = omega g^{-1} omega^T` of constraint rows in the
/// cometric at `q`. Symmetric positive semidefinite; positive definite
/// exactly when the rows are independent.
pub fn gram_matrix(
    metric: &Metric,
    q: &DVector<f64>,
    omega: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    if omega.nrows() == 0 {
        return Ok(DMatrix::zeros(0, 0));
    }
    if omega.ncols() != metric.dim() {
        return Err(Error::Dimension {
            what: "constraint rows",
            expected: metric.dim(),
            got: omega.ncols(),
        });
    }
    check_finite_matrix(omega, "constraint rows")?;
    let at = metric.at(q)?;
    let w = at.whiten_rows(omega);
    let mut c = &w * w.transpose();
    // exact symmetry despite rounding
    for i in 0..c.nrows() {
        for j in (i + 1)..c.ncols() {
            let avg = 0.5 * (c[(i, j)] + c[(j, i)]);
            c[(i, j)] = avg;
            c[(j, i)] = avg;
        }
    }
    Ok(c)
}

/// Projector `P = Id - omega^T C^{-1} omega g^{-1}` onto the annihilator of
/// the constraint rows, acting on momentum component vectors from the left.
///
/// `P` is idempotent, self-adjoint in the cometric pairing, kills every
/// constraint pairing (`omega g^{-1} (P p) = 0`), and its complement
/// `Q = Id - P` maps onto the row span of `omega`.
///
/// The rows must be independent at `q`; dependent rows are reported as a
/// degeneracy error rather than silently pseudo-inverted, so rank collapses
/// stay visible to the caller.
pub fn constraint_projector(
    metric: &Metric,
    q: &DVector<f64>,
    omega: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    let n = metric.dim();
    if omega.nrows() == 0 {
        return Ok(DMatrix::identity(n, n));
    }
    if omega.ncols() != n {
        return Err(Error::Dimension {
            what: "constraint rows",
            expected: n,
            got: omega.ncols(),
        });
    }
    check_finite_matrix(omega, "constraint rows")?;
    let at = metric.at(q)?;
    let w = at.whiten_rows(omega);
    if numeric_rank(&w, DEFAULT_RANK_TOL)? < omega.nrows() {
        let (_, dependent) = select_independent_rows(&w, DEFAULT_RANK_TOL);
        return Err(Error::DegenerateConstraints { dependent });
    }
    let c = &w * w.transpose();
    let chol = Cholesky::new(c).ok_or_else(|| Error::DegenerateConstraints {
        dependent: (0..omega.nrows()).collect(),
    })?;
    // X = C^{-1} omega g^{-1}
    let omega_ginv = at.chol.solve(&omega.transpose()).transpose();
    let x = chol.solve(&omega_ginv);
    Ok(DMatrix::identity(n, n) - omega.transpose() * x)
}

/// Cometric-orthonormal basis of the row span of `rows`, rank-revealing at
/// relative tolerance `tol`. Basis rows are sign-normalized so that their
/// first significant component is positive.
pub fn orthonormalize_subspace(
    metric: &Metric,
    q: &DVector<f64>,
    rows: &DMatrix<f64>,
    tol: f64,
) -> Result<SubspaceBasis> {
    if rows.ncols() != metric.dim() && rows.nrows() > 0 {
        return Err(Error::Dimension {
            what: "subspace rows",
            expected: metric.dim(),
            got: rows.ncols(),
        });
    }
    check_finite_matrix(rows, "subspace rows")?;
    check_finite_vector(q, "base point")?;
    let at = metric.at(q)?;
    if rows.nrows() == 0 {
        return Ok(SubspaceBasis::empty(q.clone()));
    }
    let w = at.whiten_rows(rows);
    let svd = w.clone().svd(false, true);
    let v_t = svd.v_t.expect("svd with v requested");
    let sigma_max = svd.singular_values.iter().cloned().fold(0.0_f64, f64::max);
    if sigma_max == 0.0 {
        return Ok(SubspaceBasis::empty(q.clone()));
    }
    let rank = svd
        .singular_values
        .iter()
        .filter(|&&s| s > tol * sigma_max)
        .count();
    let mut whitened = DMatrix::zeros(rank, metric.dim());
    // singular values from nalgebra are not guaranteed sorted; pick the
    // rows of V^T belonging to the `rank` largest values
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| {
        svd.singular_values[b]
            .partial_cmp(&svd.singular_values[a])
            .unwrap()
    });
    for (out_row, &k) in order.iter().take(rank).enumerate() {
        whitened.row_mut(out_row).copy_from(&v_t.row(k));
    }
    let mut covector_rows = at.unwhiten_rows(&whitened);
    // deterministic sign: first significant component of each row positive
    for i in 0..rank {
        let row = covector_rows.row(i);
        let scale = row.iter().fold(0.0_f64, |m, x| m.max(x.abs()));
        let lead = row.iter().find(|x| x.abs() > 1e-12 * scale);
        if let Some(&lead) = lead {
            if lead < 0.0 {
                covector_rows.row_mut(i).neg_mut();
                whitened.row_mut(i).neg_mut();
            }
        }
    }
    Ok(SubspaceBasis {
        point: q.clone(),
        rows: covector_rows,
        whitened,
    })
}

/// Whether `span(a)` is contained in `span(b)`: true exactly when stacking
/// the two bases does not raise the numeric rank above `b.rank()`.
pub fn subspace_contained(a: &SubspaceBasis, b: &SubspaceBasis, tol: f64) -> Result<bool> {
    if a.point().len() != b.point().len() {
        return Err(Error::Dimension {
            what: "subspace base points",
            expected: b.point().len(),
            got: a.point().len(),
        });
    }
    let scale = b.point().norm().max(1.0);
    if (a.point() - b.point()).norm() > 1e-9 * scale {
        return Err(Error::input(
            "subspace containment requires bases at the same base point",
        ));
    }
    if a.rank() == 0 {
        return Ok(true);
    }
    if b.rank() == 0 {
        return Ok(false);
    }
    let n = a.whitened().ncols();
    let mut stacked = DMatrix::zeros(a.rank() + b.rank(), n);
    stacked.rows_mut(0, b.rank()).copy_from(b.whitened());
    stacked.rows_mut(b.rank(), a.rank()).copy_from(a.whitened());
    Ok(numeric_rank(&stacked, tol)? == b.rank())
}

/// Classification of a chart point by sampled neighborhood ranks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PointClass {
    /// Every sampled neighbor has the rank of the point itself.
    Regular(usize),
    /// Some sampled neighbor has a different rank.
    Singular(usize),
}

impl PointClass {
    pub fn rank(&self) -> usize {
        match self {
            PointClass::Regular(r) | PointClass::Singular(r) => *r,
        }
    }

    pub fn is_singular(&self) -> bool {
        matches!(self, PointClass::Singular(_))
    }
}

impl fmt::Display for PointClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PointClass::Regular(_) => write!(f, "regular"),
            PointClass::Singular(_) => write!(f, "singular"),
        }
    }
}

/// Options for [`classify_point`].
#[derive(Debug, Clone)]
pub struct ClassifyOpts {
    /// Sampling sphere radius around the probed point.
    pub radius: f64,
    /// Number of sampled directions; at least `2 * dim`.
    pub samples: usize,
    /// Relative rank tolerance.
    pub rank_tol: f64,
}

impl ClassifyOpts {
    pub fn for_dim(dim: usize, radius: f64) -> Self {
        ClassifyOpts {
            radius,
            samples: 4 * dim,
            rank_tol: DEFAULT_RANK_TOL,
        }
    }
}

/// Classify `q` as regular or singular by comparing its rank with the ranks
/// at sampled points on a sphere of the given radius.
///
/// This is a sampling heuristic at the requested radius, not a proof: a
/// point counts as regular when every sampled neighbor shares its rank.
/// The sampled directions are the coordinate axes (both signs) followed by
/// deterministic pseudo-random unit directions, so results are reproducible.
/// Strata-declared codistributions are ranked through exact stratum lookup.
pub fn classify_point(
    codist: &Codistribution,
    q: &DVector<f64>,
    opts: &ClassifyOpts,
) -> Result<PointClass> {
    if q.len() != codist.dim() {
        return Err(Error::Dimension {
            what: "classification point",
            expected: codist.dim(),
            got: q.len(),
        });
    }
    if opts.radius <= 0.0 || !opts.radius.is_finite() {
        return Err(Error::input("classification radius must be positive"));
    }
    let dim = codist.dim();
    let samples = opts.samples.max(2 * dim);
    let rho0 = codist.rank_at(q, opts.rank_tol)?;
    let mut directions: Vec<DVector<f64>> = Vec::with_capacity(samples);
    for c in 0..dim {
        let mut e = DVector::zeros(dim);
        e[c] = 1.0;
        directions.push(e.clone());
        e[c] = -1.0;
        directions.push(e);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(CLASSIFY_SEED);
    while directions.len() < samples {
        let mut d = DVector::zeros(dim);
        for c in 0..dim {
            // Box-Muller from two uniforms
            let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
            let u2: f64 = rng.gen();
            d[c] = (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos();
        }
        let norm = d.norm();
        if norm > 1e-12 {
            directions.push(d / norm);
        }
    }
    for dir in &directions {
        let neighbor = q + dir * opts.radius;
        let rho = codist.rank_at(&neighbor, opts.rank_tol)?;
        if rho != rho0 {
            return Ok(PointClass::Singular(rho0));
        }
    }
    Ok(PointClass::Regular(rho0))
}
