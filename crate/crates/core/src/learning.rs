//! Adjoint sensitivities for parameterized flows `v' = f(v, p, t)` and
//! learning the game matrix `B` of EGN dynamics from labeled data.
//!
//! The forward pass stores a fixed number of checkpoints. The backward pass
//! recomputes the states between two checkpoints, integrates the costate
//! `lambda' = -d_v f^T lambda` with RK4 and accumulates
//! `int d_p f^T lambda dt` with the trapezoidal rule on the step grid.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{mismatch, Error, Result};
use crate::payoff::GraphWeights;
use crate::simplex::{self, AssignmentState};

/// Step for the finite-difference fallbacks of [`VectorField`].
pub const FD_STEP: f64 = 1e-6;

/// A parameterized vector field. The products with the transposed
/// Jacobians default to central differences.
pub trait VectorField {
    fn state_dim(&self) -> usize;
    fn param_dim(&self) -> usize;
    fn eval(&self, v: &DVector<f64>, p: &DVector<f64>, t: f64) -> Result<DVector<f64>>;

    /// `d_v f(v, p, t)^T lambda`.
    fn state_vjp(&self, v: &DVector<f64>, p: &DVector<f64>, t: f64, lambda: &DVector<f64>) -> Result<DVector<f64>> {
        let mut out = DVector::zeros(v.len());
        let mut x = v.clone();
        for k in 0..v.len() {
            x[k] = v[k] + FD_STEP;
            let plus = self.eval(&x, p, t)?;
            x[k] = v[k] - FD_STEP;
            let minus = self.eval(&x, p, t)?;
            x[k] = v[k];
            out[k] = (plus - minus).dot(lambda) / (2.0 * FD_STEP);
        }
        Ok(out)
    }

    /// `d_p f(v, p, t)^T lambda`.
    fn param_vjp(&self, v: &DVector<f64>, p: &DVector<f64>, t: f64, lambda: &DVector<f64>) -> Result<DVector<f64>> {
        let mut out = DVector::zeros(p.len());
        let mut q = p.clone();
        for k in 0..p.len() {
            q[k] = p[k] + FD_STEP;
            let plus = self.eval(v, &q, t)?;
            q[k] = p[k] - FD_STEP;
            let minus = self.eval(v, &q, t)?;
            q[k] = p[k];
            out[k] = (plus - minus).dot(lambda) / (2.0 * FD_STEP);
        }
        Ok(out)
    }
}

type FieldFn = Box<dyn Fn(&DVector<f64>, &DVector<f64>, f64) -> DVector<f64> + Send + Sync>;
type VjpFn = Box<dyn Fn(&DVector<f64>, &DVector<f64>, f64, &DVector<f64>) -> DVector<f64> + Send + Sync>;

/// A vector field given by closures; missing partials fall back to central
/// differences.
pub struct FnField {
    state_dim: usize,
    param_dim: usize,
    f: FieldFn,
    state_vjp: Option<VjpFn>,
    param_vjp: Option<VjpFn>,
}

impl FnField {
    pub fn new(
        state_dim: usize,
        param_dim: usize,
        f: impl Fn(&DVector<f64>, &DVector<f64>, f64) -> DVector<f64> + Send + Sync + 'static,
    ) -> Self {
        Self { state_dim, param_dim, f: Box::new(f), state_vjp: None, param_vjp: None }
    }

    pub fn with_state_vjp(mut self, g: impl Fn(&DVector<f64>, &DVector<f64>, f64, &DVector<f64>) -> DVector<f64> + Send + Sync + 'static) -> Self {
        self.state_vjp = Some(Box::new(g));
        self
    }

    pub fn with_param_vjp(mut self, g: impl Fn(&DVector<f64>, &DVector<f64>, f64, &DVector<f64>) -> DVector<f64> + Send + Sync + 'static) -> Self {
        self.param_vjp = Some(Box::new(g));
        self
    }

    fn fd(&self) -> FdOnly<'_> {
        FdOnly(self)
    }
}

struct FdOnly<'a>(&'a FnField);

impl VectorField for FdOnly<'_> {
    fn state_dim(&self) -> usize {
        self.0.state_dim
    }
    fn param_dim(&self) -> usize {
        self.0.param_dim
    }
    fn eval(&self, v: &DVector<f64>, p: &DVector<f64>, t: f64) -> Result<DVector<f64>> {
        self.0.eval(v, p, t)
    }
}

impl VectorField for FnField {
    fn state_dim(&self) -> usize {
        self.state_dim
    }

    fn param_dim(&self) -> usize {
        self.param_dim
    }

    fn eval(&self, v: &DVector<f64>, p: &DVector<f64>, t: f64) -> Result<DVector<f64>> {
        let out = (self.f)(v, p, t);
        if out.len() != self.state_dim {
            return Err(mismatch("field output", self.state_dim, out.len()));
        }
        Ok(out)
    }

    fn state_vjp(&self, v: &DVector<f64>, p: &DVector<f64>, t: f64, lambda: &DVector<f64>) -> Result<DVector<f64>> {
        match &self.state_vjp {
            Some(g) => Ok(g(v, p, t, lambda)),
            None => self.fd().state_vjp(v, p, t, lambda),
        }
    }

    fn param_vjp(&self, v: &DVector<f64>, p: &DVector<f64>, t: f64, lambda: &DVector<f64>) -> Result<DVector<f64>> {
        match &self.param_vjp {
            Some(g) => Ok(g(v, p, t, lambda)),
            None => self.fd().param_vjp(v, p, t, lambda),
        }
    }
}

/// A terminal loss `L(v(T))` with its gradient.
pub trait Loss {
    fn value(&self, v: &DVector<f64>) -> f64;
    fn gradient(&self, v: &DVector<f64>) -> DVector<f64>;
}

/// `L(v) = <a, v>`.
pub struct LinearLoss(pub DVector<f64>);

impl Loss for LinearLoss {
    fn value(&self, v: &DVector<f64>) -> f64 {
        self.0.dot(v)
    }
    fn gradient(&self, _v: &DVector<f64>) -> DVector<f64> {
        self.0.clone()
    }
}

pub struct LearnProblem<'a> {
    pub field: &'a dyn VectorField,
    pub loss: &'a dyn Loss,
    pub v0: DVector<f64>,
    pub horizon: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AdjointConfig {
    pub step: f64,
    /// Stored forward states, including both ends.
    pub checkpoints: usize,
    /// Largest accepted value of `checkpoints`.
    pub checkpoint_budget: usize,
}

impl Default for AdjointConfig {
    fn default() -> Self {
        Self { step: 1e-2, checkpoints: 256, checkpoint_budget: 1 << 16 }
    }
}

impl AdjointConfig {
    pub fn with_step(step: f64) -> Self {
        Self { step, ..Self::default() }
    }
}

#[derive(Clone, Debug)]
pub struct AdjointResult {
    pub gradient: DVector<f64>,
    pub loss: f64,
    pub final_state: DVector<f64>,
    /// Costate at `t = 0`.
    pub costate: DVector<f64>,
}

fn check_finite(v: &DVector<f64>, what: &str) -> Result<()> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(what.to_string()))
    }
}

fn rk4_step(field: &dyn VectorField, v: &DVector<f64>, p: &DVector<f64>, t: f64, h: f64) -> Result<DVector<f64>> {
    let k1 = field.eval(v, p, t)?;
    let k2 = field.eval(&(v + &k1 * (h / 2.0)), p, t + h / 2.0)?;
    let k3 = field.eval(&(v + &k2 * (h / 2.0)), p, t + h / 2.0)?;
    let k4 = field.eval(&(v + &k3 * h), p, t + h)?;
    let next = v + (k1 + (k2 + k3) * 2.0 + k4) * (h / 6.0);
    check_finite(&next, "forward state")?;
    Ok(next)
}

fn grid(horizon: f64, step: f64) -> Result<(usize, f64)> {
    if !(horizon > 0.0 && horizon.is_finite()) {
        return Err(Error::InvalidArgument(format!("horizon must be positive, got {horizon}")));
    }
    if !(step > 0.0 && step.is_finite()) {
        return Err(Error::InvalidArgument(format!("step must be positive, got {step}")));
    }
    let steps = ((horizon / step).round() as usize).max(1);
    Ok((steps, horizon / steps as f64))
}

fn check_problem(prob: &LearnProblem, params: &DVector<f64>) -> Result<()> {
    if prob.v0.len() != prob.field.state_dim() {
        return Err(mismatch("initial state", prob.field.state_dim(), prob.v0.len()));
    }
    if params.len() != prob.field.param_dim() {
        return Err(mismatch("parameters", prob.field.param_dim(), params.len()));
    }
    Ok(())
}

/// Solves `v' = f(v, p, t)` on `[0, T]` with RK4 and returns `v(T)`.
pub fn forward_solve(prob: &LearnProblem, params: &DVector<f64>, step: f64) -> Result<DVector<f64>> {
    check_problem(prob, params)?;
    let (steps, h) = grid(prob.horizon, step)?;
    let mut v = prob.v0.clone();
    for k in 0..steps {
        v = rk4_step(prob.field, &v, params, k as f64 * h, h)?;
    }
    Ok(v)
}

/// Gradient of `L(v(T))` with respect to the parameters by the adjoint method.
pub fn adjoint_gradient(prob: &LearnProblem, params: &DVector<f64>, cfg: &AdjointConfig) -> Result<AdjointResult> {
    check_problem(prob, params)?;
    if cfg.checkpoints < 2 {
        return Err(Error::InvalidArgument("at least two checkpoints are needed".into()));
    }
    if cfg.checkpoints > cfg.checkpoint_budget {
        return Err(Error::CheckpointBudget { requested: cfg.checkpoints, budget: cfg.checkpoint_budget });
    }
    let field = prob.field;
    let (steps, h) = grid(prob.horizon, cfg.step)?;
    let stride = steps.div_ceil(cfg.checkpoints - 1);
    let mut nodes = vec![0usize];
    let mut checkpoints = vec![prob.v0.clone()];
    let mut v = prob.v0.clone();
    for k in 0..steps {
        v = rk4_step(field, &v, params, k as f64 * h, h)?;
        if (k + 1) % stride == 0 || k + 1 == steps {
            nodes.push(k + 1);
            checkpoints.push(v.clone());
        }
    }
    let loss = prob.loss.value(&v);
    let mut lambda = prob.loss.gradient(&v);
    check_finite(&lambda, "loss gradient")?;
    let time = |k: usize| k as f64 * h;
    let mut gradient = DVector::zeros(params.len());
    let mut g_next = field.param_vjp(&v, params, time(steps), &lambda)?;
    for seg in (0..nodes.len() - 1).rev() {
        let (a, b) = (nodes[seg], nodes[seg + 1]);
        let mut states = Vec::with_capacity(b - a + 1);
        states.push(checkpoints[seg].clone());
        for k in a..b {
            let next = rk4_step(field, states.last().expect("non-empty"), params, time(k), h)?;
            states.push(next);
        }
        let slopes = (a..=b)
            .map(|k| field.eval(&states[k - a], params, time(k)))
            .collect::<Result<Vec<_>>>()?;
        for k in (a + 1..=b).rev() {
            let (v0, v1) = (&states[k - 1 - a], &states[k - a]);
            let (f0, f1) = (&slopes[k - 1 - a], &slopes[k - a]);
            let mid = (v0 + v1) * 0.5 + (f0 - f1) * (h / 8.0);
            let (t0, t1) = (time(k - 1), time(k));
            let tm = 0.5 * (t0 + t1);
            let k1 = field.state_vjp(v1, params, t1, &lambda)?;
            let k2 = field.state_vjp(&mid, params, tm, &(&lambda + &k1 * (h / 2.0)))?;
            let k3 = field.state_vjp(&mid, params, tm, &(&lambda + &k2 * (h / 2.0)))?;
            let k4 = field.state_vjp(v0, params, t0, &(&lambda + &k3 * h))?;
            lambda += (k1 + (k2 + k3) * 2.0 + k4) * (h / 6.0);
            check_finite(&lambda, "costate")?;
            let g_prev = field.param_vjp(v0, params, t0, &lambda)?;
            gradient += (&g_next + &g_prev) * (h / 2.0);
            g_next = g_prev;
        }
    }
    Ok(AdjointResult { gradient, loss, final_state: v, costate: lambda })
}

/// Central differences of `L(v(T))` in each parameter.
pub fn finite_diff_gradient(prob: &LearnProblem, params: &DVector<f64>, fd_step: f64, step: f64) -> Result<DVector<f64>> {
    check_problem(prob, params)?;
    let mut out = DVector::zeros(params.len());
    let mut q = params.clone();
    for k in 0..params.len() {
        q[k] = params[k] + fd_step;
        let plus = prob.loss.value(&forward_solve(prob, &q, step)?);
        q[k] = params[k] - fd_step;
        let minus = prob.loss.value(&forward_solve(prob, &q, step)?);
        q[k] = params[k];
        out[k] = (plus - minus) / (2.0 * fd_step);
    }
    Ok(out)
}

/// The EGN flow in tangent coordinates, `V' = Pi_0 (Omega exp_1(V) B)`, with
/// state `vec_row(V)` and parameters `vec_row(B)`.
pub struct EgnTangentField {
    omega: GraphWeights,
    c: usize,
}

impl EgnTangentField {
    pub fn new(omega: GraphWeights, c: usize) -> Self {
        Self { omega, c }
    }

    fn unpack(&self, v: &DVector<f64>, p: &DVector<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
        let w = simplex::softmax_rows(&simplex::unvec_row(v.as_slice(), self.omega.n(), self.c));
        let b = simplex::unvec_row(p.as_slice(), self.c, self.c);
        (w, b)
    }

    fn costate(&self, lambda: &DVector<f64>) -> DMatrix<f64> {
        simplex::project_rows(&simplex::unvec_row(lambda.as_slice(), self.omega.n(), self.c))
    }
}

fn vec_of(m: &DMatrix<f64>) -> DVector<f64> {
    DVector::from_vec(simplex::vec_row(m))
}

impl VectorField for EgnTangentField {
    fn state_dim(&self) -> usize {
        self.omega.n() * self.c
    }

    fn param_dim(&self) -> usize {
        self.c * self.c
    }

    fn eval(&self, v: &DVector<f64>, p: &DVector<f64>, _t: f64) -> Result<DVector<f64>> {
        let (w, b) = self.unpack(v, p);
        Ok(vec_of(&simplex::project_rows(&(self.omega.apply(&w) * b))))
    }

    fn state_vjp(&self, v: &DVector<f64>, p: &DVector<f64>, _t: f64, lambda: &DVector<f64>) -> Result<DVector<f64>> {
        let (w, b) = self.unpack(v, p);
        let g = self.omega.apply_transpose(&self.costate(lambda)) * b.transpose();
        Ok(vec_of(&simplex::replicator_rows(&w, &g)))
    }

    fn param_vjp(&self, v: &DVector<f64>, _p: &DVector<f64>, _t: f64, lambda: &DVector<f64>) -> Result<DVector<f64>> {
        let w = simplex::softmax_rows(&simplex::unvec_row(v.as_slice(), self.omega.n(), self.c));
        Ok(vec_of(&(self.omega.apply(&w).transpose() * self.costate(lambda))))
    }
}

/// `L = -sum_i <target_i, log exp_1(V)_i>` on tangent coordinates `vec_row(V)`.
pub struct CrossEntropyLoss {
    target: DMatrix<f64>,
}

impl CrossEntropyLoss {
    pub fn new(target: DMatrix<f64>) -> Result<Self> {
        if target.iter().any(|x| !x.is_finite() || *x < 0.0) {
            return Err(Error::InvalidArgument("targets must be finite and non-negative".into()));
        }
        Ok(Self { target })
    }

    fn log_softmax(&self, v: &DVector<f64>) -> DMatrix<f64> {
        let mut m = simplex::unvec_row(v.as_slice(), self.target.nrows(), self.target.ncols());
        for mut row in m.row_iter_mut() {
            let max = row.max();
            let lse = max + row.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
            row.add_scalar_mut(-lse);
        }
        m
    }
}

impl Loss for CrossEntropyLoss {
    fn value(&self, v: &DVector<f64>) -> f64 {
        -self.target.dot(&self.log_softmax(v))
    }

    fn gradient(&self, v: &DVector<f64>) -> DVector<f64> {
        let w = self.log_softmax(v).map(f64::exp);
        let mut g = -self.target.clone();
        for i in 0..w.nrows() {
            let mass = self.target.row(i).sum();
            for j in 0..w.ncols() {
                g[(i, j)] += mass * w[(i, j)];
            }
        }
        vec_of(&g)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LearnConfig {
    pub horizon: f64,
    pub step: f64,
    pub iterations: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    /// Largest allowed entry of a single update; larger updates are scaled down.
    pub max_update: Option<f64>,
    /// Stop after this many iterations without a new best loss.
    pub patience: usize,
    pub checkpoints: usize,
}

impl Default for LearnConfig {
    fn default() -> Self {
        Self { horizon: 15.0, step: 0.05, iterations: 100, learning_rate: 1e-3, momentum: 0.8, max_update: Some(0.05), patience: 20, checkpoints: 256 }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct LearnOutcome {
    /// Best iterate.
    pub b: Vec<Vec<f64>>,
    /// Loss at every iterate, starting with the initial `B`.
    pub loss_history: Vec<f64>,
    pub initial_loss: f64,
    pub best_loss: f64,
    pub best_iteration: usize,
    /// Row-wise argmax of `W(T)` under the best `B`.
    pub labels: Vec<usize>,
    /// Fraction of nodes whose label matches the argmax of the target.
    pub accuracy: f64,
    pub stopped_early: bool,
}

fn argmax_rows(m: &DMatrix<f64>) -> Vec<usize> {
    m.row_iter().map(|r| r.iter().enumerate().fold(0, |best, (j, x)| if *x > r[best] { j } else { best })).collect()
}

/// Gradient descent with momentum on `B` for the cross-entropy between
/// `target` and `W(T)`, where `W` follows EGN dynamics from `w0`.
pub fn learn_egn(target: &DMatrix<f64>, omega: &GraphWeights, w0: &AssignmentState, b_init: &DMatrix<f64>, cfg: &LearnConfig) -> Result<LearnOutcome> {
    let (n, c) = (w0.n(), w0.c());
    if target.shape() != (n, c) || omega.n() != n {
        return Err(mismatch("learning data", format!("{n}x{c}"), format!("{}x{}", target.nrows(), target.ncols())));
    }
    if b_init.shape() != (c, c) {
        return Err(mismatch("initial game matrix", format!("{c}x{c}"), format!("{}x{}", b_init.nrows(), b_init.ncols())));
    }
    let field = EgnTangentField::new(omega.clone(), c);
    let loss = CrossEntropyLoss::new(target.clone())?;
    let prob = LearnProblem { field: &field, loss: &loss, v0: vec_of(simplex::tangent_coordinates(w0).as_matrix()), horizon: cfg.horizon };
    let adj = AdjointConfig { step: cfg.step, checkpoints: cfg.checkpoints, ..AdjointConfig::default() };

    let mut params = vec_of(b_init);
    let mut velocity = DVector::zeros(params.len());
    let mut history = vec![];
    let mut best = (f64::INFINITY, 0usize, params.clone(), DVector::zeros(0));
    let mut stopped_early = false;
    for it in 0..=cfg.iterations {
        let res = adjoint_gradient(&prob, &params, &adj)?;
        if !res.loss.is_finite() {
            return Err(Error::NonFinite(format!("loss at iteration {it}")));
        }
        history.push(res.loss);
        if res.loss < best.0 {
            best = (res.loss, it, params.clone(), res.final_state.clone());
        } else if it - best.1 >= cfg.patience {
            stopped_early = true;
            break;
        }
        if it == cfg.iterations {
            break;
        }
        velocity = velocity * cfg.momentum - res.gradient * cfg.learning_rate;
        if let Some(limit) = cfg.max_update {
            let size = velocity.amax();
            if size > limit {
                velocity *= limit / size;
            }
        }
        params += &velocity;
    }
    let (best_loss, best_iteration, best_params, best_state) = best;
    let w_final = simplex::softmax_rows(&simplex::unvec_row(best_state.as_slice(), n, c));
    let labels = argmax_rows(&w_final);
    let truth = argmax_rows(target);
    let hits = labels.iter().zip(&truth).filter(|(a, b)| a == b).count();
    Ok(LearnOutcome {
        b: simplex::matrix_rows(&simplex::unvec_row(best_params.as_slice(), c, c)),
        initial_loss: history[0],
        loss_history: history,
        best_loss,
        best_iteration,
        labels,
        accuracy: hits as f64 / n as f64,
        stopped_early,
    })
}

/// A synthetic labeling task on a pixel grid.
#[derive(Clone, Debug)]
pub struct LabelingTask {
    pub width: usize,
    pub height: usize,
    pub truth: Vec<usize>,
    /// One-hot rows of `truth`.
    pub target: DMatrix<f64>,
    pub omega: GraphWeights,
    /// Noisy initial assignment.
    pub w0: AssignmentState,
}

/// Ground truth made of `c` blocks; each pixel's observed label is replaced
/// by a different random label with probability `flip_rate`, and `w0` puts
/// weight `e^{contrast}` on the observed label plus Gaussian jitter of size
/// `jitter` in tangent coordinates.
pub fn grid_labeling_task(width: usize, height: usize, c: usize, flip_rate: f64, contrast: f64, jitter: f64, seed: u64) -> LabelingTask {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let unit = Uniform::new(0.0_f64, 1.0).expect("valid range");
    let n = width * height;
    let truth: Vec<usize> = (0..n)
        .map(|k| {
            let (r, col) = (k / width, k % width);
            if c == 1 || col * 2 < width {
                0
            } else {
                1 + (r * (c - 1)) / height
            }
        })
        .collect();
    let target = DMatrix::from_fn(n, c, |i, j| if truth[i] == j { 1.0 } else { 0.0 });
    let mut v = DMatrix::zeros(n, c);
    for i in 0..n {
        let mut observed = truth[i];
        if c > 1 && unit.sample(&mut rng) < flip_rate {
            let shift = 1 + ((unit.sample(&mut rng) * (c - 1) as f64) as usize).min(c - 2);
            observed = (observed + shift) % c;
        }
        for j in 0..c {
            let noise: f64 = StandardNormal.sample(&mut rng);
            v[(i, j)] = jitter * noise + if j == observed { contrast } else { 0.0 };
        }
    }
    let w0 = AssignmentState::from_matrix_unchecked(simplex::softmax_rows(&v));
    LabelingTask { width, height, truth, target, omega: GraphWeights::grid(width, height), w0 }
}
