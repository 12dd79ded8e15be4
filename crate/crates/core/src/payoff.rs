//! Payoff functions `F: W -> R^{n x c}` and their embedded counterparts
//! `F^ = Q o F o M` on the joint simplex.
//!
//! Linear payoffs act on the row-stacked state `s = vec_row(W)` through an
//! `nc x nc` matrix `A`:
//!
//! | kind | `A` |
//! |------|-----|
//! | S-flow | `Omega ⊗ I_c` |
//! | EGN | `Omega ⊗ B^T` |
//! | multi-game | `blockdiag(A_1, ..., A_n)` |
//!
//! The EGN payoff of node `i` is `sum_j Omega[i, j] B^T W_j`, i.e. `F = Omega W B`
//! with states as rows.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{mismatch, Error, Result};
use crate::meta::{self, Dims};
use crate::simplex::{self, AssignmentState};

/// Tolerance for the symmetry check of quadratic potentials.
pub const SYMMETRY_TOL: f64 = 1e-12;

pub type PayoffFn = Arc<dyn Fn(&DMatrix<f64>) -> DMatrix<f64> + Send + Sync>;
pub type PotentialFn = Arc<dyn Fn(&DMatrix<f64>) -> f64 + Send + Sync>;
/// Jacobian of a payoff in `vec_row` coordinates (`nc x nc`).
pub type JacobianFn = Arc<dyn Fn(&DMatrix<f64>) -> DMatrix<f64> + Send + Sync>;

/// Weighted adjacency `Omega` with a sparse row view for fast products.
#[derive(Clone, Debug, PartialEq)]
pub struct GraphWeights {
    omega: DMatrix<f64>,
    symmetric: bool,
    rows: Vec<Vec<(usize, f64)>>,
}

impl GraphWeights {
    pub fn new(omega: DMatrix<f64>) -> Result<Self> {
        if !omega.is_square() {
            return Err(mismatch("graph weights", "square matrix", format!("{}x{}", omega.nrows(), omega.ncols())));
        }
        if omega.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("graph weights".into()));
        }
        let symmetric = max_asymmetry(&omega) <= SYMMETRY_TOL;
        let rows = (0..omega.nrows())
            .map(|i| {
                (0..omega.ncols())
                    .filter(|&j| omega[(i, j)] != 0.0)
                    .map(|j| (j, omega[(i, j)]))
                    .collect()
            })
            .collect();
        Ok(Self { omega, symmetric, rows })
    }

    /// Path graph on `n` nodes; neighbours weigh `1/3` and the diagonal takes
    /// the remainder, so `Omega` is symmetric and row-stochastic.
    pub fn path(n: usize) -> Self {
        let mut omega = DMatrix::zeros(n, n);
        for i in 0..n.saturating_sub(1) {
            omega[(i, i + 1)] = 1.0 / 3.0;
            omega[(i + 1, i)] = 1.0 / 3.0;
        }
        fill_diagonal(&mut omega);
        Self::new(omega).expect("finite square matrix")
    }

    /// `width x height` pixel grid with 3x3 neighbourhoods. Each neighbour
    /// weighs `1/9`, the diagonal takes the remainder (symmetric, row-stochastic).
    /// Node index is `row * width + col`.
    pub fn grid(width: usize, height: usize) -> Self {
        let n = width * height;
        let mut omega = DMatrix::zeros(n, n);
        for r in 0..height {
            for c in 0..width {
                for dr in -1i64..=1 {
                    for dc in -1i64..=1 {
                        let (rr, cc) = (r as i64 + dr, c as i64 + dc);
                        if (dr, dc) == (0, 0) || rr < 0 || cc < 0 || rr >= height as i64 || cc >= width as i64 {
                            continue;
                        }
                        omega[(r * width + c, rr as usize * width + cc as usize)] = 1.0 / 9.0;
                    }
                }
            }
        }
        fill_diagonal(&mut omega);
        Self::new(omega).expect("finite square matrix")
    }

    pub fn n(&self) -> usize {
        self.omega.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.omega
    }

    pub fn is_symmetric(&self) -> bool {
        self.symmetric
    }

    /// `Omega X`.
    pub fn apply(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(self.n(), x.ncols());
        for (i, row) in self.rows.iter().enumerate() {
            for &(j, w) in row {
                for k in 0..x.ncols() {
                    out[(i, k)] += w * x[(j, k)];
                }
            }
        }
        out
    }

    /// `Omega^T X`.
    pub fn apply_transpose(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(self.n(), x.ncols());
        for (i, row) in self.rows.iter().enumerate() {
            for &(j, w) in row {
                for k in 0..x.ncols() {
                    out[(j, k)] += w * x[(i, k)];
                }
            }
        }
        out
    }
}

fn fill_diagonal(omega: &mut DMatrix<f64>) {
    for i in 0..omega.nrows() {
        let off: f64 = (0..omega.ncols()).filter(|&j| j != i).map(|j| omega[(i, j)]).sum();
        omega[(i, i)] = 1.0 - off;
    }
}

pub(crate) fn max_asymmetry(a: &DMatrix<f64>) -> f64 {
    (a - a.transpose()).amax()
}

/// Potential `J` with induced payoff `F = Pi_0 grad J`.
#[derive(Clone)]
pub enum Potential {
    /// `J(W) = 1/2 <s, A s>` with `A` symmetric, `s = vec_row(W)`.
    Quadratic { a_bar: DMatrix<f64> },
    Callback { value: PotentialFn, gradient: PayoffFn },
}

#[derive(Clone)]
pub enum PayoffKind {
    SFlow { omega: GraphWeights },
    Egn { omega: GraphWeights, b: DMatrix<f64> },
    Linear { a_bar: DMatrix<f64> },
    MultiGame { games: Vec<DMatrix<f64>> },
    Potential(Potential),
    /// User payoff; must be a pure function of the state.
    Custom { f: PayoffFn, jacobian: Option<JacobianFn> },
}

/// An immutable payoff model with fixed dimensions.
#[derive(Clone)]
pub struct PayoffModel {
    kind: PayoffKind,
    dims: Dims,
}

impl fmt::Debug for PayoffModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("PayoffModel")
            .field("kind", &self.kind_name())
            .field("dims", &self.dims)
            .finish()
    }
}

fn check_shape(m: &DMatrix<f64>, shape: (usize, usize), what: &'static str) -> Result<()> {
    if m.shape() != shape {
        return Err(mismatch(what, format!("{}x{}", shape.0, shape.1), format!("{}x{}", m.nrows(), m.ncols())));
    }
    if m.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite(what.to_string()));
    }
    Ok(())
}

impl PayoffModel {
    pub fn sflow(omega: GraphWeights, c: usize) -> Self {
        let dims = Dims::new(omega.n(), c);
        Self { kind: PayoffKind::SFlow { omega }, dims }
    }

    pub fn egn(omega: GraphWeights, b: DMatrix<f64>) -> Result<Self> {
        let c = b.nrows();
        check_shape(&b, (c, c), "EGN game matrix")?;
        let dims = Dims::new(omega.n(), c);
        Ok(Self { kind: PayoffKind::Egn { omega, b }, dims })
    }

    pub fn linear(a_bar: DMatrix<f64>, dims: Dims) -> Result<Self> {
        check_shape(&a_bar, (dims.nc(), dims.nc()), "linear payoff matrix")?;
        Ok(Self { kind: PayoffKind::Linear { a_bar }, dims })
    }

    /// The payoff that is identically zero.
    pub fn zero(dims: Dims) -> Self {
        Self { kind: PayoffKind::Linear { a_bar: DMatrix::zeros(dims.nc(), dims.nc()) }, dims }
    }

    /// Independent games, one `c x c` matrix per node.
    pub fn multigame(games: Vec<DMatrix<f64>>) -> Result<Self> {
        let c = games.first().map(|g| g.nrows()).ok_or_else(|| Error::InvalidArgument("no games given".into()))?;
        for g in &games {
            check_shape(g, (c, c), "game matrix")?;
        }
        let dims = Dims::new(games.len(), c);
        Ok(Self { kind: PayoffKind::MultiGame { games }, dims })
    }

    /// Quadratic potential `1/2 <s, A s>`; `A` must be symmetric within
    /// [`SYMMETRY_TOL`] and is never symmetrized implicitly.
    pub fn quadratic_potential(a_bar: DMatrix<f64>, dims: Dims) -> Result<Self> {
        check_shape(&a_bar, (dims.nc(), dims.nc()), "potential matrix")?;
        let asym = max_asymmetry(&a_bar);
        if asym > SYMMETRY_TOL {
            return Err(Error::NotSymmetric { max_asymmetry: asym });
        }
        Ok(Self { kind: PayoffKind::Potential(Potential::Quadratic { a_bar }), dims })
    }

    pub fn potential(dims: Dims, value: PotentialFn, gradient: PayoffFn) -> Self {
        Self { kind: PayoffKind::Potential(Potential::Callback { value, gradient }), dims }
    }

    pub fn custom(dims: Dims, f: PayoffFn, jacobian: Option<JacobianFn>) -> Self {
        Self { kind: PayoffKind::Custom { f, jacobian }, dims }
    }

    pub fn kind(&self) -> &PayoffKind {
        &self.kind
    }

    pub fn kind_name(&self) -> &'static str {
        match &self.kind {
            PayoffKind::SFlow { .. } => "sflow",
            PayoffKind::Egn { .. } => "egn",
            PayoffKind::Linear { .. } => "linear",
            PayoffKind::MultiGame { .. } => "multigame",
            PayoffKind::Potential(_) => "potential",
            PayoffKind::Custom { .. } => "custom",
        }
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    /// Evaluates `F(W)` for any `n x c` matrix, including closure states.
    pub fn eval(&self, w: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if w.shape() != (self.dims.n, self.dims.c) {
            return Err(mismatch("payoff argument", format!("{}x{}", self.dims.n, self.dims.c), format!("{}x{}", w.nrows(), w.ncols())));
        }
        let out = match &self.kind {
            PayoffKind::SFlow { omega } => omega.apply(w),
            PayoffKind::Egn { omega, b } => omega.apply(w) * b,
            PayoffKind::Linear { a_bar } => apply_vec_row(a_bar, w),
            PayoffKind::MultiGame { games } => {
                let mut out = DMatrix::zeros(self.dims.n, self.dims.c);
                for (i, g) in games.iter().enumerate() {
                    let row = w.row(i) * g.transpose();
                    out.set_row(i, &row);
                }
                out
            }
            PayoffKind::Potential(p) => simplex::project_rows(&self.gradient_of(p, w)),
            PayoffKind::Custom { f, .. } => {
                let out = f(w);
                if out.shape() != w.shape() {
                    return Err(mismatch("custom payoff output", format!("{:?}", w.shape()), format!("{:?}", out.shape())));
                }
                out
            }
        };
        if out.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite(format!("{} payoff", self.kind_name())));
        }
        Ok(out)
    }

    pub fn eval_state(&self, w: &AssignmentState) -> Result<DMatrix<f64>> {
        self.eval(w.as_matrix())
    }

    fn gradient_of(&self, p: &Potential, w: &DMatrix<f64>) -> DMatrix<f64> {
        match p {
            Potential::Quadratic { a_bar } => apply_vec_row(a_bar, w),
            Potential::Callback { gradient, .. } => gradient(w),
        }
    }

    /// The explicit `nc x nc` matrix of a linear payoff in `vec_row`
    /// coordinates, or `None` for non-linear kinds.
    pub fn linear_matrix(&self) -> Option<DMatrix<f64>> {
        let c = self.dims.c;
        match &self.kind {
            PayoffKind::SFlow { omega } => Some(omega.matrix().kronecker(&DMatrix::identity(c, c))),
            PayoffKind::Egn { omega, b } => Some(omega.matrix().kronecker(&b.transpose())),
            PayoffKind::Linear { a_bar } => Some(a_bar.clone()),
            PayoffKind::MultiGame { games } => Some(block_diagonal(games)),
            PayoffKind::Potential(Potential::Quadratic { a_bar }) => {
                let proj = DMatrix::identity(c, c) - DMatrix::from_element(c, c, 1.0 / c as f64);
                Some(DMatrix::<f64>::identity(self.dims.n, self.dims.n).kronecker(&proj) * a_bar)
            }
            _ => None,
        }
    }

    /// Jacobian of `F` in `vec_row` coordinates. Linear kinds are exact,
    /// custom payoffs use their registered Jacobian or central differences.
    pub fn jacobian(&self, w: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if let Some(a) = self.linear_matrix() {
            return Ok(a);
        }
        if let PayoffKind::Custom { jacobian: Some(j), .. } = &self.kind {
            return Ok(j(w));
        }
        let nc = self.dims.nc();
        let step = 1e-6;
        let mut jac = DMatrix::zeros(nc, nc);
        for k in 0..nc {
            let (i, j) = (k / self.dims.c, k % self.dims.c);
            let mut plus = w.clone();
            let mut minus = w.clone();
            plus[(i, j)] += step;
            minus[(i, j)] -= step;
            let d = (self.eval(&plus)? - self.eval(&minus)?) / (2.0 * step);
            jac.set_column(k, &DVector::from_vec(simplex::vec_row(&d)));
        }
        Ok(jac)
    }

    /// The potential `J(W)`; only for the potential kind.
    pub fn potential_value(&self, w: &DMatrix<f64>) -> Result<f64> {
        match &self.kind {
            PayoffKind::Potential(Potential::Quadratic { a_bar }) => {
                let s = DVector::from_vec(simplex::vec_row(w));
                Ok(0.5 * s.dot(&(a_bar * &s)))
            }
            PayoffKind::Potential(Potential::Callback { value, .. }) => Ok(value(w)),
            _ => Err(Error::KindMismatch { found: self.kind_name(), operation: "potential evaluation" }),
        }
    }

    /// `grad J(W)` (not projected).
    pub fn potential_gradient(&self, w: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        match &self.kind {
            PayoffKind::Potential(p) => Ok(self.gradient_of(p, w)),
            _ => Err(Error::KindMismatch { found: self.kind_name(), operation: "potential gradient" }),
        }
    }

    pub fn has_potential(&self) -> bool {
        matches!(self.kind, PayoffKind::Potential(_))
    }

    /// Embedded potential `J(M p)`.
    pub fn embedded_potential_value(&self, p: &[f64]) -> Result<f64> {
        self.potential_value(&meta::marginalize_m(p, self.dims)?)
    }

    /// `Q grad J(M p)`, the gradient of the embedded potential.
    pub fn embedded_potential_gradient(&self, p: &[f64], cap: usize) -> Result<DVector<f64>> {
        let g = self.potential_gradient(&meta::marginalize_m(p, self.dims)?)?;
        meta::lift_q(&g, cap)
    }

    /// The embedded payoff `Q o F o M` on the joint simplex.
    pub fn embed(&self, cap: usize) -> Result<EmbeddedPayoff> {
        let len = self.dims.meta_len(cap)?;
        Ok(EmbeddedPayoff { model: self.clone(), len, cap })
    }
}

fn apply_vec_row(a: &DMatrix<f64>, w: &DMatrix<f64>) -> DMatrix<f64> {
    let s = DVector::from_vec(simplex::vec_row(w));
    simplex::unvec_row((a * s).as_slice(), w.nrows(), w.ncols())
}

pub fn block_diagonal(blocks: &[DMatrix<f64>]) -> DMatrix<f64> {
    let total: usize = blocks.iter().map(|b| b.nrows()).sum();
    let mut out = DMatrix::zeros(total, total);
    let mut off = 0;
    for b in blocks {
        out.view_mut((off, off), b.shape()).copy_from(b);
        off += b.nrows();
    }
    out
}

/// Payoff `F^(p) = Q F(M p)` of the single-population game on the joint simplex.
#[derive(Clone, Debug)]
pub struct EmbeddedPayoff {
    model: PayoffModel,
    len: usize,
    cap: usize,
}

impl EmbeddedPayoff {
    pub fn model(&self) -> &PayoffModel {
        &self.model
    }

    pub fn dims(&self) -> Dims {
        self.model.dims
    }

    /// `N = c^n`.
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn eval(&self, p: &[f64]) -> Result<DVector<f64>> {
        if p.len() != self.len {
            return Err(mismatch("embedded payoff argument", self.len, p.len()));
        }
        let w = meta::marginalize_m(p, self.model.dims)?;
        meta::lift_q(&self.model.eval(&w)?, self.cap)
    }

    /// `Q A Q^T` for linear kinds.
    pub fn matrix(&self) -> Result<Option<DMatrix<f64>>> {
        let Some(a) = self.model.linear_matrix() else {
            return Ok(None);
        };
        let q = meta::q_matrix(self.model.dims, self.cap)?;
        Ok(Some(&q * a * q.transpose()))
    }
}

/// Joint payoff matrix of simultaneous games: `A[a, b] = sum_i A_i[a_i, b_i]`.
pub fn multigame_matrix(games: &[DMatrix<f64>], cap: usize) -> Result<DMatrix<f64>> {
    let model = PayoffModel::multigame(games.to_vec())?;
    let dims = model.dims;
    let len = dims.meta_len(cap)?;
    let mut labels = Vec::with_capacity(len);
    meta::for_each_multi_index(dims, |_, l| labels.push(l.to_vec()));
    Ok(DMatrix::from_fn(len, len, |a, b| {
        games
            .iter()
            .enumerate()
            .map(|(i, g)| g[(labels[a][i], labels[b][i])])
            .sum()
    }))
}
