//! Fixed-step integration of replicator dynamics on the assignment manifold,
//! on the joint simplex, and in tangent coordinates.
//!
//! Both presentations share one engine that works on row-stochastic matrices:
//! a joint state of length `N` is carried as a `1 x N` matrix.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{mismatch, Error, Result};
use crate::meta::{self, Dims, MetaState, MetaTangent};
use crate::payoff::{EmbeddedPayoff, PayoffModel};
use crate::simplex::{self, AssignmentState, AssignmentTangent, BOUNDARY_EPS};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scheme {
    /// `W <- exp_W(h F(W))`; stays on the manifold by construction.
    GeometricEuler,
    /// Classical RK4 on the tangent parameterization `V' = Pi_0 F(exp_1(V))`.
    Rk4Tangent,
    /// Classical RK4 on `W' = R_W F(W)` followed by clamping.
    #[serde(alias = "rk4-ambient-reference")]
    Rk4Ambient,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IntegratorConfig {
    pub scheme: Scheme,
    pub step: f64,
    pub t_end: f64,
    /// Record every `stride` steps (the final step is always recorded).
    pub stride: usize,
    pub boundary_eps: f64,
    /// Abort when the cumulative renormalization drift exceeds this.
    pub drift_limit: f64,
}

impl Default for IntegratorConfig {
    fn default() -> Self {
        Self {
            scheme: Scheme::GeometricEuler,
            step: 1e-2,
            t_end: 10.0,
            stride: 1,
            boundary_eps: BOUNDARY_EPS,
            drift_limit: 1e-6,
        }
    }
}

impl IntegratorConfig {
    pub fn new(scheme: Scheme, step: f64, t_end: f64) -> Self {
        Self { scheme, step, t_end, ..Self::default() }
    }

    pub fn with_stride(mut self, stride: usize) -> Self {
        self.stride = stride;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.step > 0.0 && self.step.is_finite()) {
            return Err(Error::InvalidArgument(format!("step must be positive, got {}", self.step)));
        }
        if !(self.t_end >= 0.0 && self.t_end.is_finite()) {
            return Err(Error::InvalidArgument(format!("t_end must be non-negative, got {}", self.t_end)));
        }
        if self.stride == 0 {
            return Err(Error::InvalidArgument("stride must be at least 1".into()));
        }
        if !(self.boundary_eps > 0.0 && self.boundary_eps < 1e-3) {
            return Err(Error::InvalidArgument(format!("boundary_eps out of range: {}", self.boundary_eps)));
        }
        Ok(())
    }

    /// Number of steps: `t_end / step` rounded to the nearest integer.
    pub fn steps(&self) -> usize {
        (self.t_end / self.step).round() as usize
    }

    /// The step actually taken, `t_end / steps`, so that the last time is `t_end`.
    pub fn effective_step(&self) -> f64 {
        match self.steps() {
            0 => self.step,
            k => self.t_end / k as f64,
        }
    }
}

/// Diagnostics at one recorded time.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Sample {
    /// `<state, F(state)>`.
    pub mean_payoff: f64,
    pub row_entropy: Vec<f64>,
    pub row_max: Vec<f64>,
    pub potential: Option<f64>,
}

impl Sample {
    pub fn min_row_entropy(&self) -> f64 {
        self.row_entropy.iter().cloned().fold(f64::INFINITY, f64::min)
    }

    /// Smallest row maximum; equals 1 exactly at extremal points.
    pub fn min_row_max(&self) -> f64 {
        self.row_max.iter().cloned().fold(f64::INFINITY, f64::min)
    }
}

#[derive(Clone, Debug)]
pub struct Trajectory<S> {
    pub times: Vec<f64>,
    pub states: Vec<S>,
    pub diagnostics: Vec<Sample>,
    /// Cumulative renormalization drift.
    pub drift: f64,
}

impl<S> Trajectory<S> {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn final_state(&self) -> &S {
        self.states.last().expect("trajectories hold at least the initial state")
    }

    pub fn final_time(&self) -> f64 {
        *self.times.last().expect("trajectories hold at least the initial state")
    }

    /// Potential values, if the payoff has one.
    pub fn potential_history(&self) -> Option<Vec<f64>> {
        self.diagnostics.iter().map(|d| d.potential).collect()
    }

    fn map<T>(self, f: impl Fn(DMatrix<f64>) -> T, states: Vec<DMatrix<f64>>) -> Trajectory<T> {
        Trajectory { times: self.times, states: states.into_iter().map(f).collect(), diagnostics: self.diagnostics, drift: self.drift }
    }
}

/// A trajectory integrated in tangent coordinates, with the coordinates kept.
#[derive(Clone, Debug)]
pub struct TangentTrajectory<S, V> {
    pub trajectory: Trajectory<S>,
    pub tangents: Vec<V>,
}

type RowField<'a> = dyn Fn(&DMatrix<f64>) -> Result<DMatrix<f64>> + 'a;
type RowPotential<'a> = dyn Fn(&DMatrix<f64>) -> Result<f64> + 'a;

enum Start {
    State(DMatrix<f64>),
    Tangent(DMatrix<f64>),
}

struct RowRun {
    skeleton: Trajectory<()>,
    states: Vec<DMatrix<f64>>,
    tangents: Vec<DMatrix<f64>>,
}

fn row_entropy(row: impl Iterator<Item = f64>) -> f64 {
    row.filter(|p| *p > 0.0).map(|p| -p * p.ln()).sum()
}

fn sample(x: &DMatrix<f64>, payoff: &RowField, potential: Option<&RowPotential>) -> Result<Sample> {
    let f = payoff(x)?;
    Ok(Sample {
        mean_payoff: x.dot(&f),
        row_entropy: x.row_iter().map(|r| row_entropy(r.iter().cloned())).collect(),
        row_max: x.row_iter().map(|r| r.max()).collect(),
        potential: potential.map(|p| p(x)).transpose()?,
    })
}

fn clamp_rows(x: &mut DMatrix<f64>, floor: f64) -> f64 {
    let mut drift = 0.0_f64;
    let mut buf = vec![0.0; x.ncols()];
    for i in 0..x.nrows() {
        for (j, b) in buf.iter_mut().enumerate() {
            *b = x[(i, j)];
        }
        drift = drift.max(simplex::clamp_renormalize(&mut buf, floor));
        for (j, b) in buf.iter().enumerate() {
            x[(i, j)] = *b;
        }
    }
    drift
}

fn rk4(y: &DMatrix<f64>, h: f64, g: impl Fn(&DMatrix<f64>) -> Result<DMatrix<f64>>) -> Result<DMatrix<f64>> {
    let k1 = g(y)?;
    let k2 = g(&(y + &k1 * (h / 2.0)))?;
    let k3 = g(&(y + &k2 * (h / 2.0)))?;
    let k4 = g(&(y + &k3 * h))?;
    Ok(y + (k1 + (k2 + k3) * 2.0 + k4) * (h / 6.0))
}

fn check_finite(x: &DMatrix<f64>, t: f64) -> Result<()> {
    if x.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(format!("state at t = {t}")))
    }
}

fn run(start: Start, payoff: &RowField, potential: Option<&RowPotential>, cfg: &IntegratorConfig) -> Result<RowRun> {
    cfg.validate()?;
    let steps = cfg.steps();
    let h = cfg.effective_step();
    let (mut x, mut v) = match start {
        Start::Tangent(v) => (simplex::softmax_rows(&v), Some(v)),
        Start::State(x) if cfg.scheme == Scheme::Rk4Tangent => {
            let v = simplex::project_rows(&x.map(f64::ln));
            (x, Some(v))
        }
        Start::State(x) => (x, None),
    };
    let mut out = RowRun {
        skeleton: Trajectory { times: vec![0.0], states: vec![], diagnostics: vec![sample(&x, payoff, potential)?], drift: 0.0 },
        states: vec![x.clone()],
        tangents: v.iter().cloned().collect(),
    };
    for k in 1..=steps {
        let t = k as f64 * h;
        if let Some(vk) = v.as_mut() {
            *vk = rk4(vk, h, |y| Ok(simplex::project_rows(&payoff(&simplex::softmax_rows(y))?)))?;
            check_finite(vk, t)?;
            x = simplex::softmax_rows(vk);
        } else {
            x = match cfg.scheme {
                Scheme::GeometricEuler => simplex::lift_rows(&x, &(payoff(&x)? * h)),
                _ => rk4(&x, h, |y| Ok(simplex::replicator_rows(y, &payoff(y)?)))?,
            };
            check_finite(&x, t)?;
            out.skeleton.drift += clamp_rows(&mut x, cfg.boundary_eps);
            if out.skeleton.drift > cfg.drift_limit {
                return Err(Error::Drift { drift: out.skeleton.drift, limit: cfg.drift_limit });
            }
        }
        if k % cfg.stride == 0 || k == steps {
            out.skeleton.times.push(t);
            out.skeleton.diagnostics.push(sample(&x, payoff, potential)?);
            out.states.push(x.clone());
            if let Some(vk) = &v {
                out.tangents.push(vk.clone());
            }
        }
    }
    Ok(out)
}

fn check_dims(model: &PayoffModel, m: &DMatrix<f64>, what: &'static str) -> Result<()> {
    let d = model.dims();
    if m.shape() != (d.n, d.c) {
        return Err(mismatch(what, format!("{}x{}", d.n, d.c), format!("{}x{}", m.nrows(), m.ncols())));
    }
    Ok(())
}

fn multipop_run(model: &PayoffModel, start: Start, cfg: &IntegratorConfig) -> Result<RowRun> {
    let payoff = |w: &DMatrix<f64>| model.eval(w);
    let potential = |w: &DMatrix<f64>| model.potential_value(w);
    let pot: Option<&RowPotential> = if model.has_potential() { Some(&potential) } else { None };
    run(start, &payoff, pot, cfg)
}

fn meta_run(emb: &EmbeddedPayoff, start: Start, cfg: &IntegratorConfig) -> Result<RowRun> {
    let len = emb.len();
    let payoff = |x: &DMatrix<f64>| Ok(DMatrix::from_row_slice(1, len, emb.eval(x.as_slice())?.as_slice()));
    let potential = |x: &DMatrix<f64>| emb.model().embedded_potential_value(x.as_slice());
    let pot: Option<&RowPotential> = if emb.model().has_potential() { Some(&potential) } else { None };
    run(start, &payoff, pot, cfg)
}

fn as_row(v: &DVector<f64>) -> DMatrix<f64> {
    DMatrix::from_row_slice(1, v.len(), v.as_slice())
}

fn meta_state(dims: Dims) -> impl Fn(DMatrix<f64>) -> MetaState {
    move |x| MetaState::from_vec_unchecked(DVector::from_column_slice(x.as_slice()), dims)
}

/// Integrates `W' = R_W F(W)` from `w0`.
pub fn integrate_multipop(model: &PayoffModel, w0: &AssignmentState, cfg: &IntegratorConfig) -> Result<Trajectory<AssignmentState>> {
    check_dims(model, w0.as_matrix(), "initial state")?;
    let run = multipop_run(model, Start::State(w0.as_matrix().clone()), cfg)?;
    Ok(run.skeleton.map(AssignmentState::from_matrix_unchecked, run.states))
}

/// Integrates `p' = R_p F^(p)` on the joint simplex from `p0`.
pub fn integrate_metasimplex(emb: &EmbeddedPayoff, p0: &MetaState, cfg: &IntegratorConfig) -> Result<Trajectory<MetaState>> {
    if p0.dims() != emb.dims() {
        return Err(mismatch("initial joint state", format!("{:?}", emb.dims()), format!("{:?}", p0.dims())));
    }
    let run = meta_run(emb, Start::State(as_row(p0.as_vector())), cfg)?;
    Ok(run.skeleton.map(meta_state(emb.dims()), run.states))
}

/// Integrates `V' = Pi_0 F(exp_1(V))` with RK4 (the scheme in `cfg` is
/// ignored) and reconstructs `W = exp_1(V)`.
pub fn integrate_tangent(
    model: &PayoffModel,
    v0: &AssignmentTangent,
    cfg: &IntegratorConfig,
) -> Result<TangentTrajectory<AssignmentState, AssignmentTangent>> {
    check_dims(model, v0.as_matrix(), "initial tangent")?;
    let run = multipop_run(model, Start::Tangent(v0.as_matrix().clone()), cfg)?;
    let tangents = run.tangents.into_iter().map(AssignmentTangent::from_matrix_unchecked).collect();
    Ok(TangentTrajectory { trajectory: run.skeleton.map(AssignmentState::from_matrix_unchecked, run.states), tangents })
}

/// Joint-simplex counterpart of [`integrate_tangent`].
pub fn integrate_tangent_meta(
    emb: &EmbeddedPayoff,
    u0: &MetaTangent,
    cfg: &IntegratorConfig,
) -> Result<TangentTrajectory<MetaState, MetaTangent>> {
    if u0.dims() != emb.dims() {
        return Err(mismatch("initial joint tangent", format!("{:?}", emb.dims()), format!("{:?}", u0.dims())));
    }
    let run = meta_run(emb, Start::Tangent(as_row(u0.as_vector())), cfg)?;
    let dims = emb.dims();
    let tangents = run
        .tangents
        .into_iter()
        .map(|x| MetaTangent::from_vec_unchecked(DVector::from_column_slice(x.as_slice()), dims))
        .collect();
    Ok(TangentTrajectory { trajectory: run.skeleton.map(meta_state(dims), run.states), tangents })
}

/// Splits a multi-game started on the Wright manifold into independent
/// single-game trajectories, one per node, started at the marginals of `p0`.
pub fn decompose_multigame(
    games: &[DMatrix<f64>],
    p0: &MetaState,
    cfg: &IntegratorConfig,
    tol: f64,
) -> Result<Vec<Trajectory<AssignmentState>>> {
    let deviation = meta::wright_deviation(p0.as_slice(), p0.dims())?;
    if deviation > tol {
        return Err(Error::NotOnWrightManifold { deviation, tol });
    }
    if games.len() != p0.dims().n {
        return Err(mismatch("number of games", p0.dims().n, games.len()));
    }
    let w0 = meta::marginals(p0);
    games
        .iter()
        .enumerate()
        .map(|(i, g)| {
            let model = PayoffModel::multigame(vec![g.clone()])?;
            let row = AssignmentState::from_matrix_unchecked(w0.as_matrix().rows(i, 1).into_owned());
            integrate_multipop(&model, &row, cfg)
        })
        .collect()
}

/// Stacks the per-node states of single-population trajectories (as returned
/// by [`decompose_multigame`]) into assignment states, sample by sample.
pub fn stack_rows(parts: &[Trajectory<AssignmentState>]) -> Result<Vec<AssignmentState>> {
    let len = parts.first().map_or(0, |p| p.len());
    if parts.iter().any(|p| p.len() != len) {
        return Err(Error::InvalidArgument("trajectories have different lengths".into()));
    }
    Ok((0..len)
        .map(|k| {
            let rows: Vec<_> = parts.iter().map(|p| p.states[k].as_matrix().row(0).into_owned()).collect();
            AssignmentState::from_matrix_unchecked(DMatrix::from_rows(&rows))
        })
        .collect())
}

/// Integrates from `w0` on the assignment manifold and from `T(w0)` on the
/// joint simplex with the same configuration; returns the largest
/// `|T(W(t)) - p(t)|` over recorded samples.
pub fn embedding_commutation_error(model: &PayoffModel, w0: &AssignmentState, cfg: &IntegratorConfig, cap: usize) -> Result<f64> {
    let emb = model.embed(cap)?;
    let traj_w = integrate_multipop(model, w0, cfg)?;
    let traj_p = integrate_metasimplex(&emb, &meta::embed_t(w0, cap)?, cfg)?;
    let mut worst = 0.0_f64;
    for (w, p) in traj_w.states.iter().zip(&traj_p.states) {
        let tw = meta::embed_t(w, cap)?;
        worst = worst.max((tw.as_vector() - p.as_vector()).amax());
    }
    Ok(worst)
}

/// Integrates `V` from `v0` and `U` from `Q v0` in tangent coordinates;
/// returns the largest `|Q V(t) - U(t)|` over recorded samples.
pub fn tangent_commutation_error(model: &PayoffModel, v0: &AssignmentTangent, cfg: &IntegratorConfig, cap: usize) -> Result<f64> {
    let emb = model.embed(cap)?;
    let traj_v = integrate_tangent(model, v0, cfg)?;
    let traj_u = integrate_tangent_meta(&emb, &meta::lift_q_tangent(v0, cap)?, cfg)?;
    let mut worst = 0.0_f64;
    for (v, u) in traj_v.tangents.iter().zip(&traj_u.tangents) {
        let qv = meta::lift_q(v.as_matrix(), cap)?;
        worst = worst.max((qv - u.as_vector()).amax());
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::meta::DEFAULT_SIZE_CAP;
    use crate::payoff::GraphWeights;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn single(b: &[f64]) -> PayoffModel {
        PayoffModel::multigame(vec![DMatrix::from_row_slice(2, 2, b)]).unwrap()
    }

    #[test]
    fn zero_payoff_is_stationary() {
        let w0 = AssignmentState::from_rows(&[vec![0.2, 0.8], vec![0.6, 0.4]]).unwrap();
        let model = PayoffModel::zero(Dims::new(2, 2));
        for scheme in [Scheme::GeometricEuler, Scheme::Rk4Tangent, Scheme::Rk4Ambient] {
            let traj = integrate_multipop(&model, &w0, &IntegratorConfig::new(scheme, 0.1, 2.0)).unwrap();
            assert_eq!(traj.len(), 21);
            for w in &traj.states {
                assert!((w.as_matrix() - w0.as_matrix()).amax() < 1e-15);
            }
        }
        let emb = model.embed(DEFAULT_SIZE_CAP).unwrap();
        let p0 = meta::embed_t(&w0, DEFAULT_SIZE_CAP).unwrap();
        let traj = integrate_metasimplex(&emb, &p0, &IntegratorConfig::new(Scheme::GeometricEuler, 0.1, 1.0)).unwrap();
        assert!((traj.final_state().as_vector() - p0.as_vector()).amax() < 1e-15);
    }

    #[test]
    fn tangent_zero_stays_at_barycenter() {
        let model = PayoffModel::zero(Dims::new(2, 3));
        let traj = integrate_tangent(&model, &AssignmentTangent::zeros(2, 3), &IntegratorConfig::new(Scheme::Rk4Tangent, 0.1, 1.0)).unwrap();
        for w in &traj.trajectory.states {
            assert!((w.as_matrix() - AssignmentState::barycenter(2, 3).as_matrix()).amax() < 1e-16);
        }
    }

    #[test]
    fn dominant_strategy_matches_closed_form() {
        // p' = p^2 (1 - p) has the implicit solution -1/p + ln(p / (1 - p)) = t - 2 from p(0) = 1/2.
        let model = single(&[1.0, 0.0, 0.0, 0.0]);
        let cfg = IntegratorConfig::new(Scheme::Rk4Tangent, 1e-3, 3.0).with_stride(100);
        let traj = integrate_multipop(&model, &AssignmentState::barycenter(1, 2), &cfg).unwrap();
        let mut prev = 0.0;
        for (t, w) in traj.times.iter().zip(&traj.states) {
            let p = w.as_matrix()[(0, 0)];
            assert!(p > prev);
            prev = p;
            let residual = -1.0 / p + (p / (1.0 - p)).ln() - (t - 2.0);
            assert!(residual.abs() < 1e-9, "t = {t}: residual {residual}");
        }
    }

    #[test]
    fn sflow_two_node_consensus() {
        let model = PayoffModel::sflow(GraphWeights::path(2), 3);
        let w0 = AssignmentState::from_rows(&[vec![0.5, 0.3, 0.2], vec![0.4, 0.35, 0.25]]).unwrap();
        let cfg = IntegratorConfig::new(Scheme::Rk4Ambient, 1e-3, 60.0).with_stride(1000);
        let w = integrate_multipop(&model, &w0, &cfg).unwrap().final_state().clone().into_matrix();
        for i in 0..2 {
            assert!(w[(i, 0)] > 1.0 - 1e-3, "{w}");
        }
    }

    #[test]
    fn euler_and_tangent_agree_to_first_order() {
        let model = PayoffModel::sflow(GraphWeights::path(3), 2);
        let w0 = AssignmentState::from_rows(&[vec![0.6, 0.4], vec![0.45, 0.55], vec![0.3, 0.7]]).unwrap();
        let reference = integrate_multipop(&model, &w0, &IntegratorConfig::new(Scheme::Rk4Tangent, 1e-3, 2.0)).unwrap();
        let mut errs = vec![];
        for h in [1e-2, 5e-3] {
            let euler = integrate_multipop(&model, &w0, &IntegratorConfig::new(Scheme::GeometricEuler, h, 2.0)).unwrap();
            errs.push((euler.final_state().as_matrix() - reference.final_state().as_matrix()).amax());
        }
        let ratio = errs[0] / errs[1];
        assert!(ratio > 1.8 && ratio < 2.2, "{errs:?}");
    }

    #[test]
    fn ambient_rk4_matches_tangent_rk4() {
        let model = PayoffModel::egn(GraphWeights::path(2), DMatrix::from_row_slice(2, 2, &[1.0, -0.5, 0.3, 0.8])).unwrap();
        let w0 = AssignmentState::from_rows(&[vec![0.3, 0.7], vec![0.55, 0.45]]).unwrap();
        let a = integrate_multipop(&model, &w0, &IntegratorConfig::new(Scheme::Rk4Ambient, 1e-3, 3.0)).unwrap();
        let b = integrate_multipop(&model, &w0, &IntegratorConfig::new(Scheme::Rk4Tangent, 1e-3, 3.0)).unwrap();
        assert!((a.final_state().as_matrix() - b.final_state().as_matrix()).amax() < 1e-10);
    }

    #[test]
    fn embedding_commutes_for_egn() {
        let model = PayoffModel::egn(GraphWeights::path(2), DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 1.0])).unwrap();
        let w0 = AssignmentState::from_rows(&[vec![0.3, 0.7], vec![0.55, 0.45]]).unwrap();
        let cfg = IntegratorConfig::new(Scheme::Rk4Tangent, 1e-3, 2.0).with_stride(50);
        assert!(embedding_commutation_error(&model, &w0, &cfg, DEFAULT_SIZE_CAP).unwrap() < 1e-10);
        let v0 = simplex::tangent_coordinates(&w0);
        assert!(tangent_commutation_error(&model, &v0, &cfg, DEFAULT_SIZE_CAP).unwrap() < 1e-10);
        let euler = IntegratorConfig::new(Scheme::GeometricEuler, 1e-3, 2.0);
        assert!(embedding_commutation_error(&model, &w0, &euler, DEFAULT_SIZE_CAP).unwrap() < 1e-12);
    }

    #[test]
    fn off_wright_start_stays_off() {
        let games = vec![DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 1.0]), DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 1.0])];
        let emb = PayoffModel::multigame(games).unwrap().embed(DEFAULT_SIZE_CAP).unwrap();
        let p0 = MetaState::new(DVector::from_vec(vec![0.4, 0.1, 0.1, 0.4]), Dims::new(2, 2)).unwrap();
        let traj = integrate_metasimplex(&emb, &p0, &IntegratorConfig::new(Scheme::Rk4Ambient, 1e-2, 5.0)).unwrap();
        for p in &traj.states {
            assert!(!meta::is_on_wright_manifold(p, 1e-6));
        }
    }

    #[test]
    fn decomposition_of_coordination_and_zero_games() {
        let games = vec![DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 1.0]), DMatrix::zeros(2, 2)];
        let w0 = AssignmentState::from_rows(&[vec![0.6, 0.4], vec![0.3, 0.7]]).unwrap();
        let p0 = meta::embed_t(&w0, DEFAULT_SIZE_CAP).unwrap();
        let cfg = IntegratorConfig::new(Scheme::Rk4Tangent, 1e-2, 30.0).with_stride(100);
        let parts = decompose_multigame(&games, &p0, &cfg, 1e-12).unwrap();
        assert!((parts[1].final_state().as_matrix()[(0, 0)] - 0.3).abs() < 1e-14);
        assert!(parts[0].final_state().as_matrix()[(0, 0)] > 1.0 - 1e-6);

        let joint = integrate_metasimplex(&PayoffModel::multigame(games.clone()).unwrap().embed(DEFAULT_SIZE_CAP).unwrap(), &p0, &cfg).unwrap();
        for (w, p) in stack_rows(&parts).unwrap().iter().zip(&joint.states) {
            let tw = meta::embed_t(w, DEFAULT_SIZE_CAP).unwrap();
            assert!((tw.as_vector() - p.as_vector()).amax() < 1e-9);
        }

        let correlated = MetaState::new(DVector::from_vec(vec![0.4, 0.1, 0.1, 0.4]), Dims::new(2, 2)).unwrap();
        assert!(matches!(decompose_multigame(&games, &correlated, &cfg, 1e-9), Err(Error::NotOnWrightManifold { .. })));
    }

    #[test]
    fn potential_is_non_decreasing() {
        let omega = GraphWeights::path(3);
        let b = DMatrix::from_row_slice(2, 2, &[1.0, 0.2, 0.2, 0.7]);
        let model = PayoffModel::quadratic_potential(omega.matrix().kronecker(&b), Dims::new(3, 2)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let w0 = AssignmentState::random(&mut rng, 3, 2, 1e-3);
        let traj = integrate_multipop(&model, &w0, &IntegratorConfig::new(Scheme::GeometricEuler, 1e-2, 10.0).with_stride(10)).unwrap();
        let hist = traj.potential_history().unwrap();
        assert!(hist.windows(2).all(|w| w[1] >= w[0] - 1e-12));
    }

    #[test]
    fn payoff_shift_leaves_trajectory_unchanged() {
        let b = [1.0, -0.5, 0.3, 0.8];
        let shifted = b.map(|x| x + 2.5);
        let w0 = AssignmentState::from_rows(&[vec![0.3, 0.7]]).unwrap();
        let cfg = IntegratorConfig::new(Scheme::Rk4Tangent, 1e-2, 3.0);
        let a = integrate_multipop(&single(&b), &w0, &cfg).unwrap();
        let s = integrate_multipop(&single(&shifted), &w0, &cfg).unwrap();
        assert!((a.final_state().as_matrix() - s.final_state().as_matrix()).amax() < 1e-12);
    }

    #[test]
    fn stride_and_time_grid() {
        let model = PayoffModel::zero(Dims::new(1, 2));
        let traj = integrate_multipop(&model, &AssignmentState::barycenter(1, 2), &IntegratorConfig::new(Scheme::GeometricEuler, 0.1, 1.05).with_stride(3)).unwrap();
        // 1.05 / 0.1 rounds to 11 steps: samples at 0, 3, 6, 9, 11.
        assert_eq!(traj.len(), 5);
        assert!(traj.times.windows(2).all(|w| w[1] > w[0]));
        assert!((traj.final_time() - 1.05).abs() < 1e-15);
    }

    #[test]
    fn invalid_config_is_rejected() {
        let model = PayoffModel::zero(Dims::new(1, 2));
        let w0 = AssignmentState::barycenter(1, 2);
        for cfg in [
            IntegratorConfig::new(Scheme::GeometricEuler, 0.0, 1.0),
            IntegratorConfig::new(Scheme::GeometricEuler, 0.1, -1.0),
            IntegratorConfig::new(Scheme::GeometricEuler, 0.1, 1.0).with_stride(0),
        ] {
            assert!(matches!(integrate_multipop(&model, &w0, &cfg), Err(Error::InvalidArgument(_))));
        }
        let wrong = AssignmentState::barycenter(2, 2);
        assert!(integrate_multipop(&model, &wrong, &IntegratorConfig::default()).is_err());
    }
}
