//! Fisher-Rao geometry on the open probability simplex and its row-wise
//! extension to the assignment manifold (one simplex per population/node).
//!
//! Single-simplex operations take plain slices and panic on length mismatch;
//! the row-wise variants return [`Error::DimensionMismatch`] instead because
//! their shapes usually come from user input.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Distribution, Exp1};

use crate::error::{mismatch, Error, Result};

/// Smallest entry a state may hold after an integration step.
pub const BOUNDARY_EPS: f64 = 1e-15;

/// Tolerance on `sum == 1` for states and `sum == 0` for tangent vectors.
pub const SUM_TOL: f64 = 1e-12;

/// A point of the open simplex: strictly positive entries summing to one.
#[derive(Clone, Debug, PartialEq)]
pub struct SimplexPoint(Vec<f64>);

/// A tangent vector at any point of the simplex: entries sum to zero.
#[derive(Clone, Debug, PartialEq)]
pub struct TangentVec(Vec<f64>);

impl SimplexPoint {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        check_simplex_row(&values, "simplex point")?;
        Ok(Self(values))
    }

    /// The barycenter `1/c`.
    pub fn barycenter(c: usize) -> Self {
        assert!(c > 0, "simplex dimension must be positive");
        Self(vec![1.0 / c as f64; c])
    }

    /// Normalizes strictly positive weights onto the simplex.
    pub fn from_weights(weights: &[f64]) -> Result<Self> {
        if weights.is_empty() || weights.iter().any(|w| !w.is_finite() || *w <= 0.0) {
            return Err(Error::InvalidState(format!(
                "weights must be finite and strictly positive: {weights:?}"
            )));
        }
        let total: f64 = weights.iter().sum();
        Ok(Self(weights.iter().map(|w| w / total).collect()))
    }

    pub(crate) fn from_vec_unchecked(values: Vec<f64>) -> Self {
        Self(values)
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    /// Uniform sample from the open simplex (flat Dirichlet), clamped away
    /// from the boundary by `floor`.
    pub fn random<R: Rng + ?Sized>(rng: &mut R, c: usize, floor: f64) -> Self {
        let mut v: Vec<f64> = (0..c).map(|_| Exp1.sample(rng)).collect();
        let total: f64 = v.iter().sum();
        v.iter_mut().for_each(|x| *x /= total);
        clamp_renormalize(&mut v, floor);
        Self(v)
    }
}

impl TangentVec {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        check_tangent_row(&values, "tangent vector")?;
        Ok(Self(values))
    }

    pub fn zeros(c: usize) -> Self {
        Self(vec![0.0; c])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }
}

fn check_simplex_row(values: &[f64], what: &str) -> Result<()> {
    if values.is_empty() {
        return Err(Error::InvalidState(format!("{what} is empty")));
    }
    if let Some(x) = values.iter().find(|x| !x.is_finite() || **x <= 0.0) {
        return Err(Error::InvalidState(format!(
            "{what} has a non-positive or non-finite entry {x}"
        )));
    }
    let sum: f64 = values.iter().sum();
    if (sum - 1.0).abs() > SUM_TOL {
        return Err(Error::InvalidState(format!("{what} sums to {sum}, not 1")));
    }
    Ok(())
}

fn check_tangent_row(values: &[f64], what: &str) -> Result<()> {
    if values.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite(what.to_string()));
    }
    let sum: f64 = values.iter().sum();
    let scale = values.iter().fold(1.0_f64, |m, x| m.max(x.abs()));
    if sum.abs() > SUM_TOL * scale {
        return Err(Error::InvalidState(format!("{what} sums to {sum}, not 0")));
    }
    Ok(())
}

/// Clamps entries to `>= floor` and renormalizes. Returns `|sum - 1|` measured
/// after clamping and before renormalization.
pub fn clamp_renormalize(values: &mut [f64], floor: f64) -> f64 {
    for x in values.iter_mut() {
        if x.is_nan() || *x < floor {
            *x = floor;
        }
    }
    let sum: f64 = values.iter().sum();
    values.iter_mut().for_each(|x| *x /= sum);
    (sum - 1.0).abs()
}

/// `x - (<1, x> / c) 1`.
pub fn project_tangent(x: &[f64]) -> TangentVec {
    TangentVec(project_slice(x))
}

fn project_slice(x: &[f64]) -> Vec<f64> {
    let mean = x.iter().sum::<f64>() / x.len() as f64;
    x.iter().map(|v| v - mean).collect()
}

/// The replicator operator `R_p x = Diag(p) x - p <p, x>`.
pub fn replicator_apply(p: &SimplexPoint, x: &[f64]) -> TangentVec {
    TangentVec(replicator_slice(p.as_slice(), x))
}

pub(crate) fn replicator_slice(p: &[f64], x: &[f64]) -> Vec<f64> {
    assert_eq!(p.len(), x.len(), "replicator operator: length mismatch");
    let mean: f64 = p.iter().zip(x).map(|(a, b)| a * b).sum();
    p.iter().zip(x).map(|(pi, xi)| pi * (xi - mean)).collect()
}

/// The lifting map `exp_p(v) = p * exp(v) / <p, exp(v)>`.
///
/// `v` is shifted by `-max(v)` before exponentiation; the result is invariant
/// under adding constants to `v`. Entries that underflow are clamped to
/// [`BOUNDARY_EPS`].
pub fn lift(p: &SimplexPoint, v: &[f64]) -> SimplexPoint {
    SimplexPoint(lift_slice(p.as_slice(), v))
}

pub(crate) fn lift_slice(p: &[f64], v: &[f64]) -> Vec<f64> {
    assert_eq!(p.len(), v.len(), "lifting map: length mismatch");
    let shift = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = p.iter().zip(v).map(|(pi, vi)| pi * (vi - shift).exp()).collect();
    let total: f64 = out.iter().sum();
    out.iter_mut().for_each(|x| *x /= total);
    if out.iter().any(|x| *x < BOUNDARY_EPS) {
        clamp_renormalize(&mut out, BOUNDARY_EPS);
    }
    out
}

/// Inverse of [`lift`] at fixed base point: the unique tangent vector `v`
/// with `lift(p, v) == q`, i.e. `Pi_0 log(q / p)`.
pub fn lift_inverse(p: &SimplexPoint, q: &SimplexPoint) -> TangentVec {
    assert_eq!(p.dim(), q.dim(), "lift inverse: length mismatch");
    let logs: Vec<f64> = q.0.iter().zip(&p.0).map(|(a, b)| (a / b).ln()).collect();
    project_tangent(&logs)
}

/// Fisher-Rao inner product `<u / p, v>`.
pub fn fisher_rao_inner(p: &SimplexPoint, u: &TangentVec, v: &TangentVec) -> f64 {
    assert!(p.dim() == u.dim() && u.dim() == v.dim(), "Fisher-Rao inner product: length mismatch");
    p.0.iter()
        .zip(&u.0)
        .zip(&v.0)
        .map(|((pi, ui), vi)| ui * vi / pi)
        .sum()
}

/// Exponential-family coordinates: the first `c - 1` entries of `Pi_0 log p`.
pub fn chart_e(p: &SimplexPoint) -> Vec<f64> {
    let logs: Vec<f64> = p.0.iter().map(|x| x.ln()).collect();
    let mut theta = project_slice(&logs);
    theta.pop();
    theta
}

/// `p = exp(theta, -<theta, 1>) / Z(theta)`.
pub fn chart_e_inv(theta: &[f64]) -> SimplexPoint {
    let mut full = theta.to_vec();
    full.push(-theta.iter().sum::<f64>());
    let c = full.len();
    lift(&SimplexPoint::barycenter(c), &full)
}

/// Mixture coordinates: the first `c - 1` probabilities.
pub fn chart_m(p: &SimplexPoint) -> Vec<f64> {
    p.0[..p.0.len() - 1].to_vec()
}

pub fn chart_m_inv(mu: &[f64]) -> Result<SimplexPoint> {
    if mu.iter().any(|m| !m.is_finite() || *m <= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "m-coordinates must be strictly positive: {mu:?}"
        )));
    }
    let total: f64 = mu.iter().sum();
    if total >= 1.0 {
        return Err(Error::InvalidArgument(format!(
            "m-coordinates must sum to less than 1 (sum = {total})"
        )));
    }
    let mut p = mu.to_vec();
    p.push(1.0 - total);
    Ok(SimplexPoint(p))
}

/// A point of the assignment manifold: an `n x c` matrix whose rows are
/// simplex points.
#[derive(Clone, Debug, PartialEq)]
pub struct AssignmentState(DMatrix<f64>);

/// A tangent vector of the assignment manifold: rows sum to zero.
#[derive(Clone, Debug, PartialEq)]
pub struct AssignmentTangent(DMatrix<f64>);

impl AssignmentState {
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        if m.nrows() == 0 || m.ncols() == 0 {
            return Err(Error::InvalidState("assignment state has no rows or columns".into()));
        }
        for (i, row) in m.row_iter().enumerate() {
            let row: Vec<f64> = row.iter().cloned().collect();
            check_simplex_row(&row, &format!("row {i} of assignment state"))?;
        }
        Ok(Self(m))
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        Self::new(matrix_from_rows(rows)?)
    }

    pub fn from_points(points: &[SimplexPoint]) -> Result<Self> {
        let rows: Vec<Vec<f64>> = points.iter().map(|p| p.0.clone()).collect();
        Self::from_rows(&rows)
    }

    pub(crate) fn from_matrix_unchecked(m: DMatrix<f64>) -> Self {
        Self(m)
    }

    pub fn barycenter(n: usize, c: usize) -> Self {
        assert!(n > 0 && c > 0, "assignment manifold dimensions must be positive");
        Self(DMatrix::from_element(n, c, 1.0 / c as f64))
    }

    /// Rows drawn independently and uniformly from the simplex, clamped to `floor`.
    pub fn random<R: Rng + ?Sized>(rng: &mut R, n: usize, c: usize, floor: f64) -> Self {
        let rows: Vec<Vec<f64>> = (0..n).map(|_| SimplexPoint::random(rng, c, floor).0).collect();
        Self(matrix_from_rows(&rows).expect("rows have equal length"))
    }

    /// Each row concentrated on a random vertex: mass `1 - spread` on the
    /// chosen strategy, the remainder spread over the others at random.
    pub fn random_near_vertex<R: Rng + ?Sized>(rng: &mut R, n: usize, c: usize, spread: f64) -> Self {
        assert!(c >= 2 && spread > 0.0 && spread < 1.0);
        let mut m = DMatrix::zeros(n, c);
        for i in 0..n {
            let k = rng.random_range(0..c);
            let rest = SimplexPoint::random(rng, c - 1, 1e-12);
            let mut it = rest.0.iter();
            for j in 0..c {
                m[(i, j)] = if j == k { 1.0 - spread } else { spread * it.next().unwrap() };
            }
        }
        Self(m)
    }

    pub fn n(&self) -> usize {
        self.0.nrows()
    }

    pub fn c(&self) -> usize {
        self.0.ncols()
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.0
    }

    pub fn row(&self, i: usize) -> SimplexPoint {
        SimplexPoint(self.0.row(i).iter().cloned().collect())
    }

    /// Clamps each row to `>= floor` and renormalizes; returns the largest
    /// per-row drift `|sum - 1|`.
    pub fn clamp_renormalize(&mut self, floor: f64) -> f64 {
        let mut drift = 0.0_f64;
        for mut row in self.0.row_iter_mut() {
            let mut vals: Vec<f64> = row.iter().cloned().collect();
            drift = drift.max(clamp_renormalize(&mut vals, floor));
            for (dst, v) in row.iter_mut().zip(vals) {
                *dst = v;
            }
        }
        drift
    }
}

impl AssignmentTangent {
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        for (i, row) in m.row_iter().enumerate() {
            let row: Vec<f64> = row.iter().cloned().collect();
            check_tangent_row(&row, &format!("row {i} of assignment tangent"))?;
        }
        Ok(Self(m))
    }

    pub fn zeros(n: usize, c: usize) -> Self {
        Self(DMatrix::zeros(n, c))
    }

    pub(crate) fn from_matrix_unchecked(m: DMatrix<f64>) -> Self {
        Self(m)
    }

    pub fn n(&self) -> usize {
        self.0.nrows()
    }

    pub fn c(&self) -> usize {
        self.0.ncols()
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.0
    }
}

/// Builds a dense matrix from row vectors of equal length.
pub fn matrix_from_rows(rows: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let n = rows.len();
    let c = rows.first().map_or(0, Vec::len);
    if let Some((i, r)) = rows.iter().enumerate().find(|(_, r)| r.len() != c) {
        return Err(mismatch("matrix rows", format!("length {c}"), format!("row {i} of length {}", r.len())));
    }
    Ok(DMatrix::from_fn(n, c, |i, j| rows[i][j]))
}

/// Row-major flattening (`vec_row`): rows stacked one after another.
pub fn vec_row(m: &DMatrix<f64>) -> Vec<f64> {
    let (n, c) = m.shape();
    let mut out = Vec::with_capacity(n * c);
    for i in 0..n {
        for j in 0..c {
            out.push(m[(i, j)]);
        }
    }
    out
}

/// Inverse of [`vec_row`].
pub fn unvec_row(v: &[f64], n: usize, c: usize) -> DMatrix<f64> {
    assert_eq!(v.len(), n * c, "unvec_row: length mismatch");
    DMatrix::from_fn(n, c, |i, j| v[i * c + j])
}

fn check_same_shape(a: (usize, usize), b: (usize, usize), what: &'static str) -> Result<()> {
    if a != b {
        return Err(mismatch(what, format!("{}x{}", a.0, a.1), format!("{}x{}", b.0, b.1)));
    }
    Ok(())
}

/// Rows of a matrix as nested vectors.
pub fn matrix_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().cloned().collect()).collect()
}

/// Row-wise tangent projection on `R^{n x c}`.
pub fn project_tangent_w(x: &DMatrix<f64>) -> AssignmentTangent {
    AssignmentTangent(project_rows(x))
}

pub(crate) fn project_rows(x: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = x.clone();
    for mut row in out.row_iter_mut() {
        let mean = row.sum() / row.len() as f64;
        row.add_scalar_mut(-mean);
    }
    out
}

/// Row-wise replicator operator.
pub fn replicator_apply_w(s: &AssignmentState, x: &DMatrix<f64>) -> Result<AssignmentTangent> {
    check_same_shape(s.0.shape(), x.shape(), "replicator operator")?;
    Ok(AssignmentTangent(replicator_rows(&s.0, x)))
}

pub(crate) fn replicator_rows(s: &DMatrix<f64>, x: &DMatrix<f64>) -> DMatrix<f64> {
    let (n, c) = s.shape();
    let mut out = DMatrix::zeros(n, c);
    for i in 0..n {
        let mut mean = 0.0;
        for j in 0..c {
            mean += s[(i, j)] * x[(i, j)];
        }
        for j in 0..c {
            out[(i, j)] = s[(i, j)] * (x[(i, j)] - mean);
        }
    }
    out
}

/// Row-wise lifting map `exp_S(V)`; defined for any `V` in `R^{n x c}`.
pub fn lift_w(s: &AssignmentState, v: &DMatrix<f64>) -> Result<AssignmentState> {
    check_same_shape(s.0.shape(), v.shape(), "lifting map")?;
    Ok(AssignmentState(lift_rows(&s.0, v)))
}

pub(crate) fn lift_rows(s: &DMatrix<f64>, v: &DMatrix<f64>) -> DMatrix<f64> {
    let (n, c) = s.shape();
    let mut out = DMatrix::zeros(n, c);
    let mut p = vec![0.0; c];
    let mut x = vec![0.0; c];
    for i in 0..n {
        for j in 0..c {
            p[j] = s[(i, j)];
            x[j] = v[(i, j)];
        }
        for (j, val) in lift_slice(&p, &x).into_iter().enumerate() {
            out[(i, j)] = val;
        }
    }
    out
}

/// Row-wise softmax, i.e. the lifting map at the barycenter.
pub(crate) fn softmax_rows(v: &DMatrix<f64>) -> DMatrix<f64> {
    let (n, c) = v.shape();
    lift_rows(&DMatrix::from_element(n, c, 1.0 / c as f64), v)
}

/// Row-wise `Pi_0 log W`, the tangent coordinates of `W` at the barycenter.
pub fn tangent_coordinates(w: &AssignmentState) -> AssignmentTangent {
    AssignmentTangent(project_rows(&w.0.map(f64::ln)))
}

/// Row-wise Fisher-Rao inner product (sum of per-row inner products).
pub fn fisher_rao_inner_w(s: &AssignmentState, u: &AssignmentTangent, v: &AssignmentTangent) -> Result<f64> {
    check_same_shape(s.0.shape(), u.0.shape(), "Fisher-Rao inner product")?;
    check_same_shape(s.0.shape(), v.0.shape(), "Fisher-Rao inner product")?;
    Ok(s.0.iter().zip(u.0.iter()).zip(v.0.iter()).map(|((p, a), b)| a * b / p).sum())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
        a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
    }

    #[test]
    fn projection_examples() {
        assert_eq!(project_tangent(&[3.0, 3.0]).as_slice(), &[0.0, 0.0]);
        assert_eq!(project_tangent(&[1.0, 0.0]).as_slice(), &[0.5, -0.5]);
        let v = [0.25, -0.5, 0.25];
        assert!(close(project_tangent(&v).as_slice(), &v, 1e-16));
    }

    #[test]
    fn replicator_examples() {
        let p = SimplexPoint::new(vec![0.5, 0.5]).unwrap();
        assert!(close(replicator_apply(&p, &[1.0, 0.0]).as_slice(), &[0.25, -0.25], 1e-16));
        assert!(close(replicator_apply(&p, &[7.0, 7.0]).as_slice(), &[0.0, 0.0], 1e-16));
    }

    #[test]
    fn replicator_vanishes_near_vertex() {
        for eps in [1e-3, 1e-6, 1e-9] {
            let p = SimplexPoint::new(vec![1.0 - eps, eps]).unwrap();
            let r = replicator_apply(&p, &[0.3, -2.0]);
            // small coordinate is eps * (x_2 - <p, x>) = O(eps)
            assert!(r.as_slice()[1].abs() <= 3.0 * eps);
        }
    }

    #[test]
    fn lift_examples() {
        let p = SimplexPoint::new(vec![0.5, 0.5]).unwrap();
        assert!(close(lift(&p, &[0.0, 0.0]).as_slice(), p.as_slice(), 1e-16));
        assert!(close(lift(&p, &[2f64.ln(), 0.0]).as_slice(), &[2.0 / 3.0, 1.0 / 3.0], 1e-15));
    }

    #[test]
    fn lift_survives_huge_arguments() {
        let p = SimplexPoint::barycenter(3);
        let q = lift(&p, &[1e4, 0.0, -1e4]);
        assert!(SimplexPoint::new(q.into_vec()).is_ok());
    }

    #[test]
    fn lift_invariant_under_projection() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..100 {
            let c = rng.random_range(2..6);
            let p = SimplexPoint::random(&mut rng, c, 1e-6);
            let v: Vec<f64> = (0..c).map(|_| rng.random_range(-5.0..5.0)).collect();
            let a = lift(&p, &v);
            let b = lift(&p, project_tangent(&v).as_slice());
            assert!(close(a.as_slice(), b.as_slice(), 1e-14));
        }
    }

    #[test]
    fn fisher_rao_examples() {
        let p = SimplexPoint::new(vec![0.5, 0.5]).unwrap();
        let u = TangentVec::new(vec![1.0, -1.0]).unwrap();
        assert_eq!(fisher_rao_inner(&p, &u, &u), 4.0);
        assert_eq!(fisher_rao_inner(&p, &TangentVec::zeros(2), &u), 0.0);
    }

    #[test]
    fn chart_e_examples() {
        let bary = chart_e_inv(&[0.0, 0.0, 0.0]);
        assert!(close(bary.as_slice(), &[0.25; 4], 1e-16));
        let p = SimplexPoint::new(vec![2.0 / 3.0, 1.0 / 3.0]).unwrap();
        let theta = chart_e(&p);
        assert!((theta[0] - 2f64.ln() / 2.0).abs() < 1e-15);
    }

    #[test]
    fn chart_m_examples() {
        let mu = chart_m(&SimplexPoint::barycenter(3));
        assert!(close(&mu, &[1.0 / 3.0, 1.0 / 3.0], 1e-16));
        assert!(chart_m_inv(&[0.9, 0.2]).is_err());
        assert!(chart_m_inv(&[-0.1, 0.2]).is_err());
        let p = SimplexPoint::new(vec![0.2, 0.3, 0.5]).unwrap();
        assert_eq!(chart_m_inv(&chart_m(&p)).unwrap(), p);
    }

    #[test]
    fn rejects_invalid_points() {
        assert!(SimplexPoint::new(vec![0.5, 0.6]).is_err());
        assert!(SimplexPoint::new(vec![1.0, 0.0]).is_err());
        assert!(SimplexPoint::new(vec![f64::NAN, 1.0]).is_err());
        assert!(TangentVec::new(vec![1.0, 1.0]).is_err());
        assert!(AssignmentState::from_rows(&[vec![0.5, 0.5], vec![0.2, 0.2]]).is_err());
    }

    #[test]
    fn nodewise_single_row_matches_simplex_ops() {
        let p = SimplexPoint::new(vec![0.2, 0.3, 0.5]).unwrap();
        let s = AssignmentState::from_points(std::slice::from_ref(&p)).unwrap();
        let x = DMatrix::from_row_slice(1, 3, &[1.0, -2.0, 0.5]);
        let r = replicator_apply_w(&s, &x).unwrap();
        assert!(close(r.as_matrix().as_slice(), replicator_apply(&p, &[1.0, -2.0, 0.5]).as_slice(), 1e-16));
        let l = lift_w(&s, &x).unwrap();
        assert!(close(l.as_matrix().as_slice(), lift(&p, &[1.0, -2.0, 0.5]).as_slice(), 1e-16));
    }

    #[test]
    fn nodewise_rowwise_agreement() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let s = AssignmentState::random(&mut rng, 4, 3, 1e-6);
        let x = DMatrix::from_fn(4, 3, |_, _| rng.random_range(-3.0..3.0));
        let r = replicator_apply_w(&s, &x).unwrap();
        let l = lift_w(&s, &x).unwrap();
        let pr = project_tangent_w(&x);
        for i in 0..4 {
            let xi: Vec<f64> = x.row(i).iter().cloned().collect();
            let rowr: Vec<f64> = r.as_matrix().row(i).iter().cloned().collect();
            let rowl: Vec<f64> = l.as_matrix().row(i).iter().cloned().collect();
            let rowp: Vec<f64> = pr.as_matrix().row(i).iter().cloned().collect();
            assert!(close(&rowr, replicator_apply(&s.row(i), &xi).as_slice(), 1e-16));
            assert!(close(&rowl, lift(&s.row(i), &xi).as_slice(), 1e-16));
            assert!(close(&rowp, project_tangent(&xi).as_slice(), 1e-16));
        }
    }

    #[test]
    fn nodewise_lift_at_zero_is_identity() {
        let b = AssignmentState::barycenter(3, 4);
        assert_eq!(lift_w(&b, &DMatrix::zeros(3, 4)).unwrap(), b);
    }

    #[test]
    fn nodewise_dimension_mismatch() {
        let b = AssignmentState::barycenter(2, 3);
        assert!(matches!(
            lift_w(&b, &DMatrix::zeros(3, 3)),
            Err(Error::DimensionMismatch { .. })
        ));
        assert!(replicator_apply_w(&b, &DMatrix::zeros(2, 2)).is_err());
    }

    #[test]
    fn vec_row_layout() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(vec_row(&m), vec![1.0, 2.0, 3.0, 4.0]);
        assert_eq!(unvec_row(&vec_row(&m), 2, 2), m);
    }
}
