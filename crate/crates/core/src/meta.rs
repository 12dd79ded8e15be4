//! The simplex of joint distributions over all `N = c^n` label assignments
//! and the maps connecting it to the assignment manifold:
//!
//! * `T(W)_g = prod_i W[i, g_i]`: product embedding ([`embed_t`]),
//! * `Q(X)_g = sum_i X[i, g_i]`: additive lift ([`lift_q`]),
//! * `M(x)[i, j] = sum_{g : g_i = j} x_g`: marginalization ([`marginalize_m`]).
//!
//! `Q` and `M` are adjoint, and `M` inverts `T` on its image.
//!
//! Flat indices are row-major in the multi-index with the first node most
//! significant: `flat = sum_i g_i c^(n-1-i)` with 0-based labels. For `n = 2`
//! this makes `T(W)` the row-major flattening of the outer product `W_1 W_2^T`.
//! All loops run in ascending flat order so results are reproducible.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::error::{mismatch, Error, Result};
use crate::simplex::{self, AssignmentState, AssignmentTangent, SimplexPoint, SUM_TOL};

/// Default upper bound on `N = c^n`.
pub const DEFAULT_SIZE_CAP: usize = 1 << 20;

/// Entries above this count as support.
pub const SUPPORT_THRESHOLD: f64 = 1e-9;

/// Relative singular value cutoff for numerical rank and null spaces.
pub const RANK_TOL: f64 = 1e-10;

/// Number of nodes `n` and strategies per node `c`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct Dims {
    pub n: usize,
    pub c: usize,
}

impl Dims {
    pub fn new(n: usize, c: usize) -> Self {
        Self { n, c }
    }

    pub fn of(w: &DMatrix<f64>) -> Self {
        Self { n: w.nrows(), c: w.ncols() }
    }

    /// `N = c^n`, or [`Error::SizeCap`] when it exceeds `cap` (or overflows).
    pub fn meta_len(&self, cap: usize) -> Result<usize> {
        let err = || Error::SizeCap { n: self.n, c: self.c, cap };
        let mut total: usize = 1;
        for _ in 0..self.n {
            total = total.checked_mul(self.c).ok_or_else(err)?;
            if total > cap {
                return Err(err());
            }
        }
        Ok(total)
    }

    pub fn nc(&self) -> usize {
        self.n * self.c
    }
}

/// A multi-index `g in [c]^n`, stored with 0-based labels.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct MultiIndex(Vec<usize>);

impl MultiIndex {
    pub fn new(labels: Vec<usize>, c: usize) -> Result<Self> {
        if let Some(l) = labels.iter().find(|l| **l >= c) {
            return Err(Error::InvalidArgument(format!("label {l} out of range for c = {c}")));
        }
        Ok(Self(labels))
    }

    /// Builds from the 1-based labels used in mathematical notation.
    pub fn from_one_based(labels: &[usize], c: usize) -> Result<Self> {
        if labels.contains(&0) {
            return Err(Error::InvalidArgument("1-based labels start at 1".into()));
        }
        Self::new(labels.iter().map(|l| l - 1).collect(), c)
    }

    pub fn labels(&self) -> &[usize] {
        &self.0
    }

    pub fn encode(&self, c: usize) -> Result<usize> {
        let mut flat: usize = 0;
        for &l in &self.0 {
            if l >= c {
                return Err(Error::InvalidArgument(format!("label {l} out of range for c = {c}")));
            }
            flat = flat
                .checked_mul(c)
                .and_then(|f| f.checked_add(l))
                .ok_or_else(|| Error::InvalidArgument("multi-index overflows usize".into()))?;
        }
        Ok(flat)
    }

    pub fn decode(flat: usize, dims: Dims) -> Result<Self> {
        let mut labels = vec![0; dims.n];
        let mut rest = flat;
        for slot in labels.iter_mut().rev() {
            *slot = rest % dims.c;
            rest /= dims.c;
        }
        if rest != 0 || dims.c == 0 {
            return Err(Error::InvalidArgument(format!(
                "flat index {flat} out of range for n = {}, c = {}",
                dims.n, dims.c
            )));
        }
        Ok(Self(labels))
    }
}

/// Visits every multi-index in ascending flat order.
pub(crate) fn for_each_multi_index(dims: Dims, mut f: impl FnMut(usize, &[usize])) {
    let total = dims.c.pow(dims.n as u32);
    let mut labels = vec![0usize; dims.n];
    for k in 0..total {
        f(k, &labels);
        for slot in labels.iter_mut().rev() {
            *slot += 1;
            if *slot < dims.c {
                break;
            }
            *slot = 0;
        }
    }
}

/// A strictly positive joint distribution on `[c]^n`.
#[derive(Clone, Debug, PartialEq)]
pub struct MetaState {
    values: DVector<f64>,
    dims: Dims,
}

/// A zero-sum vector on `[c]^n`.
#[derive(Clone, Debug, PartialEq)]
pub struct MetaTangent {
    values: DVector<f64>,
    dims: Dims,
}

fn check_len(len: usize, dims: Dims) -> Result<()> {
    let expected = dims.meta_len(usize::MAX)?;
    if len != expected {
        return Err(mismatch("joint vector", expected, len));
    }
    Ok(())
}

impl MetaState {
    pub fn new(values: DVector<f64>, dims: Dims) -> Result<Self> {
        check_len(values.len(), dims)?;
        if let Some(x) = values.iter().find(|x| !x.is_finite() || **x <= 0.0) {
            return Err(Error::InvalidState(format!("joint state has entry {x}")));
        }
        let sum = values.sum();
        let tol = SUM_TOL.max(values.len() as f64 * f64::EPSILON);
        if (sum - 1.0).abs() > tol {
            return Err(Error::InvalidState(format!("joint state sums to {sum}")));
        }
        Ok(Self { values, dims })
    }

    pub(crate) fn from_vec_unchecked(values: DVector<f64>, dims: Dims) -> Self {
        Self { values, dims }
    }

    pub fn barycenter(dims: Dims, cap: usize) -> Result<Self> {
        let len = dims.meta_len(cap)?;
        Ok(Self { values: DVector::from_element(len, 1.0 / len as f64), dims })
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        self.values.as_slice()
    }

    pub fn as_vector(&self) -> &DVector<f64> {
        &self.values
    }

    pub fn into_vector(self) -> DVector<f64> {
        self.values
    }

    pub fn to_point(&self) -> SimplexPoint {
        SimplexPoint::from_vec_unchecked(self.values.as_slice().to_vec())
    }

    /// Lifting map on the joint simplex.
    pub fn lift(&self, u: &[f64]) -> MetaState {
        assert_eq!(u.len(), self.len(), "joint lifting map: length mismatch");
        let out = simplex::lift_slice(self.as_slice(), u);
        Self { values: DVector::from_vec(out), dims: self.dims }
    }

    /// Replicator operator on the joint simplex.
    pub fn replicator(&self, x: &[f64]) -> MetaTangent {
        let out = simplex::replicator_slice(self.as_slice(), x);
        MetaTangent { values: DVector::from_vec(out), dims: self.dims }
    }

    /// Clamps to `>= floor` and renormalizes; returns the drift.
    pub fn clamp_renormalize(&mut self, floor: f64) -> f64 {
        simplex::clamp_renormalize(self.values.as_mut_slice(), floor)
    }
}

impl MetaTangent {
    pub fn new(values: DVector<f64>, dims: Dims) -> Result<Self> {
        check_len(values.len(), dims)?;
        let scale = values.amax().max(1.0);
        if values.iter().any(|x| !x.is_finite()) || values.sum().abs() > SUM_TOL * scale * (values.len() as f64).sqrt() {
            return Err(Error::InvalidState("joint tangent vector does not sum to 0".into()));
        }
        Ok(Self { values, dims })
    }

    pub(crate) fn from_vec_unchecked(values: DVector<f64>, dims: Dims) -> Self {
        Self { values, dims }
    }

    pub fn zeros(dims: Dims, cap: usize) -> Result<Self> {
        Ok(Self { values: DVector::zeros(dims.meta_len(cap)?), dims })
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn as_slice(&self) -> &[f64] {
        self.values.as_slice()
    }

    pub fn as_vector(&self) -> &DVector<f64> {
        &self.values
    }
}

/// Projection onto zero-sum vectors of any length.
pub fn project_tangent_flat(x: &[f64]) -> Vec<f64> {
    simplex::project_tangent(x).into_vec()
}

/// Product embedding of an arbitrary `n x c` matrix (closure states allowed).
pub fn tensor_rows(w: &DMatrix<f64>, cap: usize) -> Result<DVector<f64>> {
    let dims = Dims::of(w);
    let len = dims.meta_len(cap)?;
    let mut out = Vec::with_capacity(len);
    out.push(1.0);
    for i in 0..dims.n {
        let mut next = Vec::with_capacity(out.len() * dims.c);
        for &prev in &out {
            for j in 0..dims.c {
                next.push(prev * w[(i, j)]);
            }
        }
        out = next;
    }
    Ok(DVector::from_vec(out))
}

/// `T(W)_g = prod_i W[i, g_i]`.
pub fn embed_t(w: &AssignmentState, cap: usize) -> Result<MetaState> {
    let values = tensor_rows(w.as_matrix(), cap)?;
    Ok(MetaState::from_vec_unchecked(values, Dims::of(w.as_matrix())))
}

/// `M(x)[i, j] = sum over g with g_i = j of x_g`.
pub fn marginalize_m(x: &[f64], dims: Dims) -> Result<DMatrix<f64>> {
    check_len(x.len(), dims)?;
    let mut out = DMatrix::zeros(dims.n, dims.c);
    for_each_multi_index(dims, |k, labels| {
        for (i, &l) in labels.iter().enumerate() {
            out[(i, l)] += x[k];
        }
    });
    Ok(out)
}

/// Marginals of a joint state as an assignment state.
pub fn marginals(p: &MetaState) -> AssignmentState {
    let m = marginalize_m(p.as_slice(), p.dims()).expect("state length matches its dims");
    AssignmentState::from_matrix_unchecked(m)
}

/// `Q(X)_g = sum_i X[i, g_i]`.
pub fn lift_q(x: &DMatrix<f64>, cap: usize) -> Result<DVector<f64>> {
    let dims = Dims::of(x);
    let len = dims.meta_len(cap)?;
    let mut out = Vec::with_capacity(len);
    out.push(0.0);
    for i in 0..dims.n {
        let mut next = Vec::with_capacity(out.len() * dims.c);
        for &prev in &out {
            for j in 0..dims.c {
                next.push(prev + x[(i, j)]);
            }
        }
        out = next;
    }
    Ok(DVector::from_vec(out))
}

/// `Q` applied to a tangent vector of the assignment manifold.
pub fn lift_q_tangent(v: &AssignmentTangent, cap: usize) -> Result<MetaTangent> {
    let values = lift_q(v.as_matrix(), cap)?;
    Ok(MetaTangent::from_vec_unchecked(values, Dims::of(v.as_matrix())))
}

/// Dense `N x nc` matrix of `Q`; column `i * c + j` matches `vec_row`.
pub fn q_matrix(dims: Dims, cap: usize) -> Result<DMatrix<f64>> {
    let len = dims.meta_len(cap)?;
    let mut q = DMatrix::zeros(len, dims.nc());
    for_each_multi_index(dims, |k, labels| {
        for (i, &l) in labels.iter().enumerate() {
            q[(k, i * dims.c + l)] = 1.0;
        }
    });
    Ok(q)
}

/// Dense `nc x N` matrix of `M`, the transpose of [`q_matrix`].
pub fn m_matrix(dims: Dims, cap: usize) -> Result<DMatrix<f64>> {
    Ok(q_matrix(dims, cap)?.transpose())
}

/// Number of singular values above `rel * sigma_max`.
pub fn numerical_rank(a: &DMatrix<f64>, rel: f64) -> usize {
    if a.is_empty() {
        return 0;
    }
    let sv = a.clone().svd(false, false).singular_values;
    let smax = sv.max();
    if smax == 0.0 {
        return 0;
    }
    sv.iter().filter(|s| **s > rel * smax).count()
}

/// Orthonormal basis (as columns) of the right null space of `a`.
pub fn null_space(a: &DMatrix<f64>, rel: f64) -> DMatrix<f64> {
    let (rows, cols) = a.shape();
    // zero rows leave the null space unchanged and give SVD a full V
    let padded = if rows < cols { a.clone().resize(cols, cols, 0.0) } else { a.clone() };
    let svd = padded.svd(false, true);
    let vt = svd.v_t.expect("V requested");
    let smax = svd.singular_values.max();
    let keep: Vec<usize> = svd
        .singular_values
        .iter()
        .enumerate()
        .filter(|(_, s)| **s <= rel * smax || smax == 0.0)
        .map(|(k, _)| k)
        .collect();
    DMatrix::from_fn(cols, keep.len(), |r, k| vt[(keep[k], r)])
}

/// Closed-form differential `dT|_W[V] = T(W) * Q[V / W]`.
pub fn differential_t(w: &AssignmentState, v: &AssignmentTangent, cap: usize) -> Result<MetaTangent> {
    let wm = w.as_matrix();
    if wm.shape() != v.as_matrix().shape() {
        return Err(mismatch("differential of T", format!("{:?}", wm.shape()), format!("{:?}", v.as_matrix().shape())));
    }
    let t = tensor_rows(wm, cap)?;
    let ratio = v.as_matrix().component_div(wm);
    let q = lift_q(&ratio, cap)?;
    Ok(MetaTangent::from_vec_unchecked(t.component_mul(&q), Dims::of(wm)))
}

/// Shannon entropy `-<p, log p>` (natural log; zero entries contribute 0).
pub fn entropy(p: &[f64]) -> f64 {
    -p.iter().filter(|x| **x > 0.0).map(|x| x * x.ln()).sum::<f64>()
}

/// Cross entropy `-<p, log q>`.
pub fn cross_entropy(p: &[f64], q: &[f64]) -> f64 {
    assert_eq!(p.len(), q.len(), "cross entropy: length mismatch");
    -p.iter().zip(q).filter(|(a, _)| **a > 0.0).map(|(a, b)| a * b.ln()).sum::<f64>()
}

/// Relative entropy `<p, log(p / q)>`.
pub fn kl(p: &[f64], q: &[f64]) -> f64 {
    assert_eq!(p.len(), q.len(), "KL divergence: length mismatch");
    p.iter().zip(q).filter(|(a, _)| **a > 0.0).map(|(a, b)| a * (a / b).ln()).sum()
}

/// Indices of entries above [`SUPPORT_THRESHOLD`].
pub fn support(values: &[f64]) -> Vec<usize> {
    values
        .iter()
        .enumerate()
        .filter(|(_, x)| **x > SUPPORT_THRESHOLD)
        .map(|(k, _)| k)
        .collect()
}

/// `||T(M p) - p||_inf`: distance of `p` from its rank-1 projection.
pub fn wright_deviation(p: &[f64], dims: Dims) -> Result<f64> {
    let m = marginalize_m(p, dims)?;
    let t = tensor_rows(&m, usize::MAX)?;
    Ok(t.iter().zip(p).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max))
}

/// Whether `p` factorizes over nodes (lies on the generalized Wright manifold).
pub fn is_on_wright_manifold(p: &MetaState, tol: f64) -> bool {
    wright_deviation(p.as_slice(), p.dims()).map(|d| d <= tol).unwrap_or(false)
}

/// Outcome of sampling joint distributions with the same marginals as `T(W)`.
#[derive(Clone, Debug, Serialize)]
pub struct MaxEntropyReport {
    pub trials: usize,
    /// Dimension of the kernel of `M` (the feasible perturbation directions).
    pub kernel_dim: usize,
    pub entropy_of_embedding: f64,
    /// Smallest `H(T(W)) - H(T(W) + u)` over all trials.
    pub min_entropy_gap: f64,
    /// Largest `|H(p) - (H(T(W)) - KL(p, T(W)))|`.
    pub max_identity_error: f64,
    /// Largest `||M u||_inf` over all perturbations.
    pub max_marginal_residual: f64,
    /// Every perturbed distribution had strictly lower entropy.
    pub all_strict: bool,
}

/// Margin kept between perturbed distributions and the simplex boundary.
pub const PERTURBATION_MARGIN: f64 = 1e-9;

/// Checks that `T(W)` has maximal entropy among distributions with marginals `W`.
///
/// Perturbations `u` are random combinations of an SVD null-space basis of
/// `M`, scaled by a random fraction in `[0.05, 1)` of the largest step that
/// keeps `T(W) + u >= PERTURBATION_MARGIN`.
pub fn max_entropy_check<R: Rng + ?Sized>(
    w: &AssignmentState,
    trials: usize,
    rng: &mut R,
    cap: usize,
) -> Result<MaxEntropyReport> {
    let dims = Dims::of(w.as_matrix());
    let t = embed_t(w, cap)?;
    let tv = t.as_slice();
    let kernel = null_space(&m_matrix(dims, cap)?, RANK_TOL);
    let h_t = entropy(tv);

    let mut report = MaxEntropyReport {
        trials,
        kernel_dim: kernel.ncols(),
        entropy_of_embedding: h_t,
        min_entropy_gap: f64::INFINITY,
        max_identity_error: 0.0,
        max_marginal_residual: 0.0,
        all_strict: true,
    };
    if kernel.ncols() == 0 {
        return Ok(report);
    }
    for _ in 0..trials {
        let z = DVector::from_fn(kernel.ncols(), |_, _| rng.sample::<f64, _>(StandardNormal));
        let mut u = &kernel * z;
        let norm = u.amax();
        if norm == 0.0 {
            continue;
        }
        u /= norm;
        let s_max = tv
            .iter()
            .zip(u.iter())
            .filter(|(_, ui)| **ui < 0.0)
            .map(|(ti, ui)| (ti - PERTURBATION_MARGIN) / -ui)
            .fold(f64::INFINITY, f64::min);
        let frac = rng.random_range(0.05..1.0);
        u *= s_max * frac;
        let p: Vec<f64> = tv.iter().zip(u.iter()).map(|(a, b)| a + b).collect();

        let residual = marginalize_m(u.as_slice(), dims)?.amax();
        let h_p = entropy(&p);
        let gap = h_t - h_p;
        let identity = (h_p - (h_t - kl(&p, tv))).abs();
        report.min_entropy_gap = report.min_entropy_gap.min(gap);
        report.max_identity_error = report.max_identity_error.max(identity);
        report.max_marginal_residual = report.max_marginal_residual.max(residual);
        report.all_strict &= gap > 0.0;
    }
    Ok(report)
}
