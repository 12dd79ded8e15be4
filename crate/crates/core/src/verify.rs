//! Numerical verification suites. Every row compares an observed quantity
//! with a bound; the suites use fixed seeds and desk-scale dimensions.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::dynamics::{self, IntegratorConfig, Scheme};
use crate::equilibria::{self, LIMIT_NASH_TOL, NASH_TOL};
use crate::error::{Error, Result};
use crate::learning::{self, AdjointConfig, CrossEntropyLoss, EgnTangentField, FnField, LearnConfig, LearnProblem, LinearLoss};
use crate::meta::{self, Dims, MetaState, DEFAULT_SIZE_CAP, RANK_TOL};
use crate::payoff::{self, GraphWeights, PayoffModel};
use crate::simplex::{self, AssignmentState, AssignmentTangent};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Suite {
    Geometry,
    Embedding,
    Dynamics,
    Equilibria,
    Learning,
    All,
}

impl Suite {
    pub const NAMES: [&'static str; 6] = ["geometry", "embedding", "dynamics", "equilibria", "learning", "all"];

    fn parts(self) -> Vec<Suite> {
        match self {
            Suite::All => vec![Suite::Geometry, Suite::Embedding, Suite::Dynamics, Suite::Equilibria, Suite::Learning],
            s => vec![s],
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Suite::Geometry => "geometry",
            Suite::Embedding => "embedding",
            Suite::Dynamics => "dynamics",
            Suite::Equilibria => "equilibria",
            Suite::Learning => "learning",
            Suite::All => "all",
        }
    }
}

impl FromStr for Suite {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "geometry" => Ok(Suite::Geometry),
            "embedding" => Ok(Suite::Embedding),
            "dynamics" => Ok(Suite::Dynamics),
            "equilibria" => Ok(Suite::Equilibria),
            "learning" => Ok(Suite::Learning),
            "all" => Ok(Suite::All),
            other => Err(Error::InvalidArgument(format!("unknown suite '{other}', expected one of {}", Suite::NAMES.join(", ")))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Relation {
    #[serde(rename = "<=")]
    AtMost,
    #[serde(rename = ">=")]
    AtLeast,
    #[serde(rename = ">")]
    Above,
    #[serde(rename = "<")]
    Below,
}

impl Relation {
    fn holds(self, observed: f64, bound: f64) -> bool {
        match self {
            Relation::AtMost => observed <= bound,
            Relation::AtLeast => observed >= bound,
            Relation::Above => observed > bound,
            Relation::Below => observed < bound,
        }
    }

    fn symbol(self) -> &'static str {
        match self {
            Relation::AtMost => "<=",
            Relation::AtLeast => ">=",
            Relation::Above => ">",
            Relation::Below => "<",
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct CheckRow {
    pub suite: &'static str,
    pub name: &'static str,
    pub observed: f64,
    pub relation: Relation,
    pub bound: f64,
    pub passed: bool,
    pub seconds: f64,
}

impl fmt::Display for CheckRow {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{:4}  {:<11} {:<58} {:>12.3e} {:>2} {:<9.1e} ({:.2}s)",
            if self.passed { "PASS" } else { "FAIL" },
            self.suite,
            self.name,
            self.observed,
            self.relation.symbol(),
            self.bound,
            self.seconds
        )
    }
}

struct Recorder {
    suite: &'static str,
    rows: Vec<CheckRow>,
}

impl Recorder {
    fn check(&mut self, name: &'static str, relation: Relation, bound: f64, f: impl FnOnce() -> Result<f64>) -> Result<()> {
        let start = Instant::now();
        let observed = f()?;
        self.rows.push(CheckRow {
            suite: self.suite,
            name,
            observed,
            relation,
            bound,
            passed: relation.holds(observed, bound),
            seconds: start.elapsed().as_secs_f64(),
        });
        Ok(())
    }
}

/// Runs the rows of `suite` in declaration order.
pub fn run_suite(suite: Suite, seed: u64) -> Result<Vec<CheckRow>> {
    let mut rows = vec![];
    for part in suite.parts() {
        let mut rec = Recorder { suite: part.name(), rows: vec![] };
        match part {
            Suite::Geometry => geometry(&mut rec, seed)?,
            Suite::Embedding => embedding(&mut rec, seed)?,
            Suite::Dynamics => dynamics_suite(&mut rec, seed)?,
            Suite::Equilibria => equilibria_suite(&mut rec, seed)?,
            Suite::Learning => learning_suite(&mut rec, seed)?,
            Suite::All => unreachable!("expanded by parts"),
        }
        rows.extend(rec.rows);
    }
    Ok(rows)
}

const CAP: usize = DEFAULT_SIZE_CAP;
const SMALL_DIMS: [(usize, usize); 4] = [(2, 2), (2, 3), (3, 2), (3, 3)];

fn rng_for(seed: u64, row: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed.wrapping_mul(1_000_003).wrapping_add(row))
}

fn random_matrix(rng: &mut ChaCha8Rng, n: usize, c: usize, lo: f64, hi: f64) -> DMatrix<f64> {
    DMatrix::from_fn(n, c, |_, _| rng.random_range(lo..hi))
}

fn random_tangent(rng: &mut ChaCha8Rng, n: usize, c: usize) -> AssignmentTangent {
    simplex::project_tangent_w(&random_matrix(rng, n, c, -1.0, 1.0))
}

fn geometry(rec: &mut Recorder, seed: u64) -> Result<()> {
    rec.check("marginals invert the product embedding", Relation::AtMost, 1e-13, || {
        let mut rng = rng_for(seed, 1);
        let mut worst = 0.0_f64;
        for k in 0..200 {
            let (n, c) = ([2, 3, 5][k % 3], [2, 3, 4][(k / 3) % 3]);
            let w = AssignmentState::random(&mut rng, n, c, 1e-6);
            let back = meta::marginalize_m(meta::embed_t(&w, CAP)?.as_slice(), Dims::new(n, c))?;
            worst = worst.max((back - w.as_matrix()).amax());
        }
        Ok(worst)
    })?;
    rec.check("lifting map commutes with the product embedding", Relation::AtMost, 1e-12, || {
        let mut rng = rng_for(seed, 2);
        let mut worst = 0.0_f64;
        for k in 0..200 {
            let (n, c) = SMALL_DIMS[k % 4];
            let s = AssignmentState::random(&mut rng, n, c, 1e-3);
            let v = random_matrix(&mut rng, n, c, -5.0, 5.0);
            let lhs = meta::embed_t(&simplex::lift_w(&s, &v)?, CAP)?;
            let rhs = meta::embed_t(&s, CAP)?.lift(meta::lift_q(&v, CAP)?.as_slice());
            worst = worst.max((lhs.as_vector() - rhs.as_vector()).amax());
        }
        Ok(worst)
    })?;
    rec.check("Q and M are adjoint", Relation::AtMost, 1e-12, || {
        let mut rng = rng_for(seed, 3);
        let mut worst = 0.0_f64;
        for &(n, c) in &SMALL_DIMS {
            let len = Dims::new(n, c).meta_len(CAP)?;
            for _ in 0..200 {
                let p = DVector::from_fn(len, |_, _| rng.random_range(-1.0..1.0));
                let v = random_matrix(&mut rng, n, c, -1.0, 1.0);
                let lhs = p.dot(&meta::lift_q(&v, CAP)?);
                let rhs = meta::marginalize_m(p.as_slice(), Dims::new(n, c))?.dot(&v);
                worst = worst.max((lhs - rhs).abs());
            }
        }
        Ok(worst)
    })?;
    rec.check("Q commutes with the tangent projection", Relation::AtMost, 1e-12, || {
        let mut rng = rng_for(seed, 4);
        let mut worst = 0.0_f64;
        for &(n, c) in &SMALL_DIMS {
            for _ in 0..200 {
                let v = random_matrix(&mut rng, n, c, -1.0, 1.0);
                let lhs = meta::lift_q(simplex::project_tangent_w(&v).as_matrix(), CAP)?;
                let rhs = DVector::from_vec(meta::project_tangent_flat(meta::lift_q(&v, CAP)?.as_slice()));
                worst = worst.max((lhs - rhs).amax());
            }
        }
        Ok(worst)
    })?;
    rec.check("differential of T matches central differences", Relation::AtMost, 1e-6, || {
        let mut rng = rng_for(seed, 5);
        let mut worst = 0.0_f64;
        let eps = 1e-5;
        for k in 0..100 {
            let (n, c) = SMALL_DIMS[k % 4];
            let w = AssignmentState::random(&mut rng, n, c, 0.05);
            let v = random_tangent(&mut rng, n, c);
            let plus = meta::tensor_rows(&(w.as_matrix() + v.as_matrix() * eps), CAP)?;
            let minus = meta::tensor_rows(&(w.as_matrix() - v.as_matrix() * eps), CAP)?;
            let fd = (plus - minus) / (2.0 * eps);
            worst = worst.max((fd - meta::differential_t(&w, &v, CAP)?.as_vector()).amax());
        }
        Ok(worst)
    })?;
    rec.check("T preserves the Fisher-Rao metric", Relation::AtMost, 1e-10, || {
        let mut rng = rng_for(seed, 6);
        let mut worst = 0.0_f64;
        for k in 0..200 {
            let (n, c) = SMALL_DIMS[k % 4];
            let w = AssignmentState::random(&mut rng, n, c, 1e-2);
            let (u, v) = (random_tangent(&mut rng, n, c), random_tangent(&mut rng, n, c));
            let p = meta::embed_t(&w, CAP)?;
            let (du, dv) = (meta::differential_t(&w, &u, CAP)?, meta::differential_t(&w, &v, CAP)?);
            let lhs: f64 = (0..p.len()).map(|g| du.as_slice()[g] * dv.as_slice()[g] / p.as_slice()[g]).sum();
            let rhs = simplex::fisher_rao_inner_w(&w, &u, &v)?;
            worst = worst.max((lhs - rhs).abs() / rhs.abs().max(1.0));
        }
        Ok(worst)
    })?;
    rec.check("rank of Q equals nc - n + 1 (rank mismatches)", Relation::AtMost, 0.0, || {
        let mut misses = 0;
        for &(n, c) in &SMALL_DIMS {
            let q = meta::q_matrix(Dims::new(n, c), CAP)?;
            misses += (meta::numerical_rank(&q, RANK_TOL) != n * c - (n - 1)) as usize;
        }
        Ok(misses as f64)
    })?;
    rec.check("kernel of Q has constant rows with zero-sum constants", Relation::AtMost, 1e-12, || {
        let mut worst = 0.0_f64;
        for &(n, c) in &SMALL_DIMS {
            let kernel = meta::null_space(&meta::q_matrix(Dims::new(n, c), CAP)?, RANK_TOL);
            if kernel.ncols() != n - 1 {
                return Ok(f64::INFINITY);
            }
            for col in kernel.column_iter() {
                let v = simplex::unvec_row(col.as_slice(), n, c);
                let consts: Vec<f64> = (0..n).map(|i| v[(i, 0)]).collect();
                for i in 0..n {
                    for j in 0..c {
                        worst = worst.max((v[(i, j)] - consts[i]).abs());
                    }
                }
                worst = worst.max(consts.iter().sum::<f64>().abs());
            }
        }
        Ok(worst)
    })?;
    Ok(())
}

fn egn_model(rng: &mut ChaCha8Rng, n: usize, c: usize) -> Result<PayoffModel> {
    PayoffModel::egn(GraphWeights::path(n), random_matrix(rng, c, c, -1.0, 1.0))
}

fn embedding(rec: &mut Recorder, seed: u64) -> Result<()> {
    let cfg = IntegratorConfig::new(Scheme::Rk4Tangent, 1e-4, 5.0).with_stride(100);
    rec.check("joint flow stays at the product of node flows", Relation::AtMost, 1e-6, || {
        let mut rng = rng_for(seed, 11);
        let mut worst = 0.0_f64;
        for (n, c) in [(3, 2), (2, 3)] {
            let model = egn_model(&mut rng, n, c)?;
            let w0 = AssignmentState::random(&mut rng, n, c, 1e-2);
            worst = worst.max(dynamics::embedding_commutation_error(&model, &w0, &cfg, CAP)?);
        }
        Ok(worst)
    })?;
    rec.check("tangent flow commutes with Q", Relation::AtMost, 1e-8, || {
        let mut rng = rng_for(seed, 12);
        let mut worst = 0.0_f64;
        for (n, c) in [(3, 2), (2, 3)] {
            let model = egn_model(&mut rng, n, c)?;
            let v0 = random_tangent(&mut rng, n, c);
            worst = worst.max(dynamics::tangent_commutation_error(&model, &v0, &cfg, CAP)?);
        }
        Ok(worst)
    })?;
    let mut entropy = None;
    rec.check("entropy identity H(p) = H(T(W)) - KL(p, T(W))", Relation::AtMost, 1e-10, || {
        let mut rng = rng_for(seed, 13);
        let (mut err, mut gap) = (0.0_f64, f64::INFINITY);
        for _ in 0..50 {
            let w = AssignmentState::random(&mut rng, 3, 2, 1e-2);
            let r = meta::max_entropy_check(&w, 1000, &mut rng, CAP)?;
            err = err.max(r.max_identity_error);
            gap = gap.min(r.min_entropy_gap);
        }
        entropy = Some(gap);
        Ok(err)
    })?;
    rec.check("product states strictly maximize entropy (smallest gap)", Relation::Above, 0.0, || Ok(entropy.unwrap_or(f64::NAN)))?;
    rec.check("multi-game joint matrix equals Q blockdiag(A_i) Q^T", Relation::AtMost, 1e-12, || {
        let mut rng = rng_for(seed, 14);
        let mut worst = 0.0_f64;
        for _ in 0..20 {
            let games: Vec<_> = (0..3).map(|_| random_matrix(&mut rng, 2, 2, -1.0, 1.0)).collect();
            let direct = payoff::multigame_matrix(&games, CAP)?;
            let via_q = PayoffModel::multigame(games)?.embed(CAP)?.matrix()?.expect("linear payoff");
            worst = worst.max((direct - via_q).amax());
        }
        Ok(worst)
    })?;
    Ok(())
}

fn correlated_start(rng: &mut ChaCha8Rng, dims: Dims) -> Result<MetaState> {
    // a product state mixed with the uniform-diagonal coupling
    let w = AssignmentState::random(rng, dims.n, dims.c, 1e-2);
    let t = meta::embed_t(&w, CAP)?.into_vector();
    let mut diag = DVector::zeros(t.len());
    for j in 0..dims.c {
        let flat = meta::MultiIndex::new(vec![j; dims.n], dims.c)?.encode(dims.c)?;
        diag[flat] = 1.0 / dims.c as f64;
    }
    MetaState::new(t * 0.5 + diag * 0.5, dims)
}

/// Largest `|T(W_1(t) x ... x W_n(t)) - p(t)|` between the joint multi-game
/// flow from `p0` and the per-game flows from the marginals of `p0`.
pub fn decomposition_error(games: &[DMatrix<f64>], p0: &MetaState, cfg: &IntegratorConfig) -> Result<f64> {
    let emb = PayoffModel::multigame(games.to_vec())?.embed(CAP)?;
    let joint = dynamics::integrate_metasimplex(&emb, p0, cfg)?;
    let w0 = meta::marginals(p0);
    let parts = games
        .iter()
        .enumerate()
        .map(|(i, g)| {
            let row = AssignmentState::new(w0.as_matrix().rows(i, 1).into_owned())?;
            dynamics::integrate_multipop(&PayoffModel::multigame(vec![g.clone()])?, &row, cfg)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut worst = 0.0_f64;
    for (w, p) in dynamics::stack_rows(&parts)?.iter().zip(&joint.states) {
        worst = worst.max((meta::embed_t(w, CAP)?.as_vector() - p.as_vector()).amax());
    }
    Ok(worst)
}

fn dynamics_suite(rec: &mut Recorder, seed: u64) -> Result<()> {
    let cfg = IntegratorConfig::new(Scheme::Rk4Tangent, 1e-3, 5.0).with_stride(10);
    let mut rng = rng_for(seed, 21);
    let games: Vec<_> = (0..3).map(|_| random_matrix(&mut rng, 2, 2, -1.0, 1.0)).collect();
    rec.check("multi-game flow decomposes on the Wright manifold", Relation::AtMost, 1e-6, || {
        let w0 = AssignmentState::random(&mut rng, 3, 2, 1e-2);
        decomposition_error(&games, &meta::embed_t(&w0, CAP)?, &cfg)
    })?;
    rec.check("correlated start does not decompose", Relation::Above, 1e-3, || {
        decomposition_error(&games, &correlated_start(&mut rng, Dims::new(3, 2))?, &cfg)
    })?;
    rec.check("geometric Euler commutes with T", Relation::AtMost, 1e-12, || {
        let mut rng = rng_for(seed, 22);
        let model = egn_model(&mut rng, 3, 2)?;
        let w0 = AssignmentState::random(&mut rng, 3, 2, 1e-2);
        dynamics::embedding_commutation_error(&model, &w0, &IntegratorConfig::new(Scheme::GeometricEuler, 1e-2, 5.0), CAP)
    })?;
    rec.check("quadratic potential never decreases (largest drop)", Relation::AtMost, 1e-12, || {
        let mut rng = rng_for(seed, 23);
        let omega = GraphWeights::path(3);
        let b = random_matrix(&mut rng, 3, 3, -1.0, 1.0);
        let model = PayoffModel::quadratic_potential(omega.matrix().kronecker(&(&b + b.transpose())), Dims::new(3, 3))?;
        let mut worst = 0.0_f64;
        for _ in 0..5 {
            let w0 = AssignmentState::random(&mut rng, 3, 3, 1e-2);
            let traj = dynamics::integrate_multipop(&model, &w0, &IntegratorConfig::new(Scheme::Rk4Tangent, 1e-2, 20.0))?;
            let hist = traj.potential_history().expect("potential model");
            worst = hist.windows(2).fold(worst, |m, p| m.max(p[0] - p[1]));
        }
        Ok(worst)
    })?;
    Ok(())
}

fn equilibria_suite(rec: &mut Recorder, seed: u64) -> Result<()> {
    rec.check("Nash tests agree on the closure grid (disagreements)", Relation::AtMost, 0.0, || {
        let model = PayoffModel::egn(GraphWeights::path(2), DMatrix::identity(2, 2))?;
        let mut misses = 0;
        for w in equilibria::closure_grid(2, 2, 2) {
            misses += !equilibria::check_embedded_nash(&model, &w, NASH_TOL, CAP)?.agree as usize;
        }
        Ok(misses as f64)
    })?;
    rec.check("embedded ESS bilinear identity", Relation::AtMost, 1e-12, || {
        let mut rng = rng_for(seed, 31);
        let mut worst = 0.0_f64;
        for k in 0..500 {
            let (n, c) = SMALL_DIMS[k % 4];
            let model = egn_model(&mut rng, n, c)?;
            let emb = model.embed(CAP)?;
            let w = AssignmentState::random(&mut rng, n, c, 1e-3);
            let w_star = AssignmentState::random(&mut rng, n, c, 1e-3);
            let lhs = equilibria::embedded_ess_value(&emb, &w, &w_star, CAP)?;
            let rhs = equilibria::ess_value(&model, &w, &w_star)?;
            worst = worst.max((lhs - rhs).abs());
        }
        Ok(worst)
    })?;
    let mut extremality = None;
    rec.check("S-flow limits are Nash equilibria (largest violation)", Relation::AtMost, LIMIT_NASH_TOL, || {
        let mut rng = rng_for(seed, 32);
        let model = PayoffModel::sflow(GraphWeights::path(4), 3);
        let cfg = IntegratorConfig::new(Scheme::Rk4Tangent, 1e-2, 200.0).with_stride(1000);
        let (mut violation, mut distance) = (0.0_f64, 0.0_f64);
        for _ in 0..20 {
            let w0 = AssignmentState::random(&mut rng, 4, 3, 1e-2);
            let traj = dynamics::integrate_multipop(&model, &w0, &cfg)?;
            let report = equilibria::convergence_report(&model, &traj, 1e-3, LIMIT_NASH_TOL)?;
            violation = violation.max(report.nash.max_violation);
            distance = distance.max(1.0 - traj.diagnostics.last().expect("samples").min_row_max());
        }
        extremality = Some(distance);
        Ok(violation)
    })?;
    rec.check("S-flow limits are extremal (distance to a vertex)", Relation::AtMost, 1e-3, || Ok(extremality.unwrap_or(f64::NAN)))?;
    Ok(())
}

fn learning_suite(rec: &mut Recorder, seed: u64) -> Result<()> {
    rec.check("adjoint gradient matches closed form (scalar)", Relation::AtMost, 1e-6, || {
        let field = FnField::new(1, 1, |v, p, _| v * p[0])
            .with_state_vjp(|_, p, _, l| l * p[0])
            .with_param_vjp(|v, _, _, l| DVector::from_element(1, v[0] * l[0]));
        let loss = LinearLoss(DVector::from_element(1, 1.0));
        let (v0, p, t) = (1.5, 0.7, 2.0);
        let prob = LearnProblem { field: &field, loss: &loss, v0: DVector::from_element(1, v0), horizon: t };
        let g = learning::adjoint_gradient(&prob, &DVector::from_element(1, p), &AdjointConfig::with_step(1e-4))?;
        Ok((g.gradient[0] - v0 * t * (p * t).exp()).abs())
    })?;
    rec.check("adjoint gradient matches finite differences (relative)", Relation::AtMost, 1e-4, || {
        let mut rng = rng_for(seed, 41);
        let field = EgnTangentField::new(GraphWeights::path(4), 2);
        let target = DMatrix::from_row_slice(4, 2, &[1.0, 0.0, 1.0, 0.0, 0.0, 1.0, 0.0, 1.0]);
        let loss = CrossEntropyLoss::new(target)?;
        let w0 = AssignmentState::random(&mut rng, 4, 2, 1e-2);
        let v0 = DVector::from_vec(simplex::vec_row(simplex::tangent_coordinates(&w0).as_matrix()));
        let prob = LearnProblem { field: &field, loss: &loss, v0, horizon: 2.0 };
        let params = DVector::from_vec(simplex::vec_row(&random_matrix(&mut rng, 2, 2, -1.0, 1.0)));
        let adj = learning::adjoint_gradient(&prob, &params, &AdjointConfig::with_step(1e-4))?.gradient;
        let fd = learning::finite_diff_gradient(&prob, &params, 1e-5, 1e-4)?;
        Ok((adj - &fd).amax() / fd.amax())
    })?;
    let mut losses = None;
    rec.check("desk-scale labeling accuracy", Relation::AtLeast, 0.95, || {
        let task = learning::grid_labeling_task(8, 8, 3, 0.15, 1.0, 0.3, seed);
        let out = learning::learn_egn(&task.target, &task.omega, &task.w0, &DMatrix::zeros(3, 3), &LearnConfig::default())?;
        losses = Some(out.best_loss - out.initial_loss);
        Ok(out.accuracy)
    })?;
    rec.check("learning lowers the loss (best minus initial)", Relation::Below, 0.0, || Ok(losses.unwrap_or(f64::NAN)))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suite_names_round_trip() {
        for name in Suite::NAMES {
            assert_eq!(name.parse::<Suite>().unwrap().name(), name);
        }
        assert!("misc".parse::<Suite>().is_err());
    }

    #[test]
    fn geometry_suite_passes() {
        let rows = run_suite(Suite::Geometry, 0).unwrap();
        assert_eq!(rows.len(), 8);
        for row in &rows {
            assert!(row.passed, "{row}");
        }
    }
}
