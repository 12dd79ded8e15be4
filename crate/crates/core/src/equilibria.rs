//! Nash equilibria, sampled ESS checks and convergence diagnostics, on the
//! assignment manifold and on the joint simplex.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};
use serde::Serialize;

use crate::dynamics::Trajectory;
use crate::error::{Error, Result};
use crate::meta::{self, SUPPORT_THRESHOLD};
use crate::payoff::{EmbeddedPayoff, PayoffModel};
use crate::simplex::{self, AssignmentState};

/// Default tolerance for exact checks.
pub const NASH_TOL: f64 = 1e-9;
/// Default tolerance for limits of numerical trajectories.
pub const LIMIT_NASH_TOL: f64 = 1e-6;
/// Distance within which enumerated equilibria are merged.
pub const DEDUP_TOL: f64 = 1e-7;

const CLOSURE_TOL: f64 = 1e-9;

#[derive(Clone, Debug, Serialize)]
pub struct NashReport {
    pub state: Vec<Vec<f64>>,
    pub supports: Vec<Vec<usize>>,
    pub payoffs: Vec<Vec<f64>>,
    /// `max_i max_{j in supp, k} F[i, k] - F[i, j]`.
    pub max_violation: f64,
    pub tol: f64,
    pub is_nash: bool,
}

fn check_closure(w: &DMatrix<f64>) -> Result<()> {
    for (i, row) in w.row_iter().enumerate() {
        if row.iter().any(|x| !x.is_finite() || *x < -CLOSURE_TOL) || (row.sum() - 1.0).abs() > CLOSURE_TOL {
            return Err(Error::InvalidState(format!("row {i} is not in the closed simplex")));
        }
    }
    Ok(())
}

fn nash_of(w: &DMatrix<f64>, f: &DMatrix<f64>, tol: f64) -> NashReport {
    let mut supports = Vec::with_capacity(w.nrows());
    let mut worst = 0.0_f64;
    for i in 0..w.nrows() {
        let supp = meta::support(w.row(i).transpose().as_slice());
        let best = f.row(i).max();
        let weakest = supp.iter().map(|&j| f[(i, j)]).fold(f64::INFINITY, f64::min);
        worst = worst.max(best - weakest);
        supports.push(supp);
    }
    NashReport {
        state: simplex::matrix_rows(w),
        supports,
        payoffs: simplex::matrix_rows(f),
        max_violation: worst,
        tol,
        is_nash: worst <= tol,
    }
}

/// Nash test for a state of the closed assignment manifold (zeros allowed).
pub fn is_nash(model: &PayoffModel, w: &DMatrix<f64>, tol: f64) -> Result<NashReport> {
    check_closure(w)?;
    let f = model.eval(w)?;
    Ok(nash_of(w, &f, tol))
}

/// Nash test for the embedded game on the joint simplex (a single population).
pub fn is_nash_meta(emb: &EmbeddedPayoff, p: &[f64], tol: f64) -> Result<NashReport> {
    let row = DMatrix::from_row_slice(1, p.len(), p);
    check_closure(&row)?;
    let f = emb.eval(p)?;
    Ok(nash_of(&row, &DMatrix::from_row_slice(1, f.len(), f.as_slice()), tol))
}

#[derive(Clone, Debug, Serialize)]
pub struct EmbeddedNashCheck {
    pub multipop: NashReport,
    pub embedded: NashReport,
    pub agree: bool,
}

/// Runs the Nash test on `W` and on `T(W)` with the embedded payoff.
pub fn check_embedded_nash(model: &PayoffModel, w: &DMatrix<f64>, tol: f64, cap: usize) -> Result<EmbeddedNashCheck> {
    let emb = model.embed(cap)?;
    let multipop = is_nash(model, w, tol)?;
    let p = meta::tensor_rows(w, cap)?;
    let embedded = is_nash_meta(&emb, p.as_slice(), tol)?;
    let agree = multipop.is_nash == embedded.is_nash;
    Ok(EmbeddedNashCheck { multipop, embedded, agree })
}

/// All states whose rows are points of the closed simplex with coordinates in
/// multiples of `1 / levels`.
pub fn closure_grid(n: usize, c: usize, levels: usize) -> Vec<DMatrix<f64>> {
    let mut rows: Vec<Vec<f64>> = vec![];
    let mut counts = vec![0usize; c];
    fn compositions(pos: usize, left: usize, counts: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if pos + 1 == counts.len() {
            counts[pos] = left;
            out.push(counts.clone());
            return;
        }
        for k in (0..=left).rev() {
            counts[pos] = k;
            compositions(pos + 1, left - k, counts, out);
        }
    }
    let mut comps = vec![];
    compositions(0, levels, &mut counts, &mut comps);
    for comp in comps {
        rows.push(comp.iter().map(|&k| k as f64 / levels as f64).collect());
    }
    let mut states = vec![vec![]];
    for _ in 0..n {
        let mut next = vec![];
        for prefix in &states {
            for row in &rows {
                let mut s: Vec<f64> = Vec::clone(prefix);
                s.extend_from_slice(row);
                next.push(s);
            }
        }
        states = next;
    }
    states.into_iter().map(|s| DMatrix::from_row_slice(n, c, &s)).collect()
}

#[derive(Clone, Debug, Serialize)]
pub struct NashEnumeration {
    pub equilibria: Vec<Vec<Vec<f64>>>,
    /// Set when some support profile has a non-isolated solution set; such
    /// components are represented by one point.
    pub degenerate: bool,
}

/// Indifference system for the given supports of `F(s) = A s + b`:
/// unknowns are `W` on the supports followed by one value per node.
fn indifference_matrix(a: &DMatrix<f64>, c: usize, supports: &[Vec<usize>]) -> DMatrix<f64> {
    let cols: Vec<usize> = supports.iter().enumerate().flat_map(|(i, s)| s.iter().map(move |&j| i * c + j)).collect();
    let n = supports.len();
    let size = cols.len() + n;
    let mut m = DMatrix::zeros(size, size);
    let mut r = 0;
    for (i, supp) in supports.iter().enumerate() {
        for &j in supp {
            for (u, &col) in cols.iter().enumerate() {
                m[(r, u)] = a[(i * c + j, col)];
            }
            m[(r, cols.len() + i)] = -1.0;
            r += 1;
        }
    }
    for (i, supp) in supports.iter().enumerate() {
        for (u, &col) in cols.iter().enumerate() {
            if col / c == i && supp.contains(&(col % c)) {
                m[(r, u)] = 1.0;
            }
        }
        r += 1;
    }
    m
}

fn is_singular(m: &DMatrix<f64>) -> bool {
    meta::numerical_rank(m, meta::RANK_TOL) < m.nrows()
}

/// Brute-force enumeration of the Nash equilibria of a linear payoff with
/// `n <= 3`, `c <= 3`.
pub fn nash_enumerate_small(model: &PayoffModel) -> Result<NashEnumeration> {
    let dims = model.dims();
    if dims.n > 3 || dims.c > 3 {
        return Err(Error::InvalidArgument(format!("enumeration supports n, c <= 3, got n = {}, c = {}", dims.n, dims.c)));
    }
    let a = model.linear_matrix().ok_or(Error::KindMismatch { found: model.kind_name(), operation: "Nash enumeration" })?;
    let (n, c) = (dims.n, dims.c);
    let subsets: Vec<Vec<usize>> = (1..(1usize << c)).map(|mask| (0..c).filter(|j| mask >> j & 1 == 1).collect()).collect();
    let mut found: Vec<DMatrix<f64>> = vec![];
    let mut degenerate = false;
    let mut choice = vec![0usize; n];
    'profiles: loop {
        let supports: Vec<Vec<usize>> = choice.iter().map(|&k| subsets[k].clone()).collect();
        let m = indifference_matrix(&a, c, &supports);
        let mut rhs = DVector::zeros(m.nrows());
        for k in 0..n {
            rhs[m.nrows() - n + k] = 1.0;
        }
        let singular = is_singular(&m);
        let svd = m.clone().svd(true, true);
        let eps = meta::RANK_TOL * svd.singular_values.max();
        if let Ok(sol) = svd.solve(&rhs, eps) {
            if (&m * &sol - &rhs).amax() < 1e-9 {
                let mut w = DMatrix::zeros(n, c);
                let mut u = 0;
                for (i, supp) in supports.iter().enumerate() {
                    for &j in supp {
                        w[(i, j)] = sol[u];
                        u += 1;
                    }
                }
                if w.iter().all(|x| *x >= -1e-12) {
                    w.iter_mut().for_each(|x| *x = x.max(0.0));
                    if is_nash(model, &w, NASH_TOL)?.is_nash {
                        degenerate |= singular;
                        if !found.iter().any(|f| (f - &w).amax() <= DEDUP_TOL) {
                            found.push(w);
                        }
                    }
                }
            }
        }
        for slot in choice.iter_mut().rev() {
            *slot += 1;
            if *slot < subsets.len() {
                continue 'profiles;
            }
            *slot = 0;
        }
        break;
    }
    Ok(NashEnumeration { equilibria: found.iter().map(simplex::matrix_rows).collect(), degenerate })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum EssVerdict {
    EssConsistent,
    Refuted,
}

#[derive(Clone, Debug, Serialize)]
pub struct EssReport {
    pub candidate: Vec<Vec<f64>>,
    pub radius: f64,
    pub samples: usize,
    /// Largest sampled `<W - W*, F(W)>`.
    pub worst_value: f64,
    /// First sample attaining the worst value.
    pub worst_index: usize,
    pub verdict: EssVerdict,
}

/// Samples `W = exp_{W*}(V)` with `V` uniform in the tangent ball of the given
/// radius (Euclidean norm on zero-sum matrices).
pub fn sample_tangent_ball(w_star: &AssignmentState, radius: f64, samples: usize, seed: u64) -> Vec<AssignmentState> {
    let (n, c) = (w_star.n(), w_star.c());
    let dim = (n * (c - 1)).max(1) as f64;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let unit = Uniform::new(0.0_f64, 1.0).expect("valid range");
    (0..samples)
        .map(|_| {
            let g = DMatrix::from_fn(n, c, |_, _| StandardNormal.sample(&mut rng));
            let dir = simplex::project_rows(&g);
            let norm = dir.norm();
            let r = radius * unit.sample(&mut rng).powf(1.0 / dim);
            let v = if norm > 0.0 { dir * (r / norm) } else { dir };
            AssignmentState::from_matrix_unchecked(simplex::lift_rows(w_star.as_matrix(), &v))
        })
        .collect()
}

fn ess_report(w_star: &AssignmentState, radius: f64, values: &[f64]) -> EssReport {
    let mut worst_index = 0;
    for (k, v) in values.iter().enumerate() {
        if *v > values[worst_index] {
            worst_index = k;
        }
    }
    let worst_value = values.get(worst_index).copied().unwrap_or(f64::NEG_INFINITY);
    EssReport {
        candidate: simplex::matrix_rows(w_star.as_matrix()),
        radius,
        samples: values.len(),
        worst_value,
        worst_index,
        verdict: if worst_value >= 0.0 { EssVerdict::Refuted } else { EssVerdict::EssConsistent },
    }
}

/// `<W - W*, F(W)>`.
pub fn ess_value(model: &PayoffModel, w: &AssignmentState, w_star: &AssignmentState) -> Result<f64> {
    Ok((w.as_matrix() - w_star.as_matrix()).dot(&model.eval_state(w)?))
}

/// `<T(W) - T(W*), F^(T(W))>`.
pub fn embedded_ess_value(emb: &EmbeddedPayoff, w: &AssignmentState, w_star: &AssignmentState, cap: usize) -> Result<f64> {
    let p = meta::embed_t(w, cap)?;
    let p_star = meta::embed_t(w_star, cap)?;
    Ok((p.as_vector() - p_star.as_vector()).dot(&emb.eval(p.as_slice())?))
}

/// Sampled ESS test. Can only refute; `EssConsistent` is not a certificate.
pub fn ess_sample_check(model: &PayoffModel, w_star: &AssignmentState, radius: f64, samples: usize, seed: u64) -> Result<EssReport> {
    let values = sample_tangent_ball(w_star, radius, samples, seed)
        .iter()
        .map(|w| ess_value(model, w, w_star))
        .collect::<Result<Vec<_>>>()?;
    Ok(ess_report(w_star, radius, &values))
}

/// The same test evaluated on the embedded samples `T(W)` with `F^`.
pub fn ess_sample_check_embedded(
    model: &PayoffModel,
    w_star: &AssignmentState,
    radius: f64,
    samples: usize,
    seed: u64,
    cap: usize,
) -> Result<EssReport> {
    let emb = model.embed(cap)?;
    let values = sample_tangent_ball(w_star, radius, samples, seed)
        .iter()
        .map(|w| embedded_ess_value(&emb, w, w_star, cap))
        .collect::<Result<Vec<_>>>()?;
    Ok(ess_report(w_star, radius, &values))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum LimitKind {
    Extremal,
    Boundary,
    Interior,
}

#[derive(Clone, Debug, Serialize)]
pub struct ConvergenceReport {
    pub limit: Vec<Vec<f64>>,
    pub kind: LimitKind,
    /// `max |R_W F(W)|` at the final sample.
    pub stationarity_residual: f64,
    pub stationary: bool,
    pub nash: NashReport,
    /// The indifference system on the limit's supports is singular.
    pub degenerate: bool,
    pub potential_history: Option<Vec<f64>>,
    pub potential_non_decreasing: Option<bool>,
    pub warnings: Vec<String>,
}

/// Classifies the final state of a trajectory. Rows are rounded by setting
/// entries below `tol` to zero before the Nash test at `nash_tol`.
pub fn convergence_report(model: &PayoffModel, traj: &Trajectory<AssignmentState>, tol: f64, nash_tol: f64) -> Result<ConvergenceReport> {
    let w = traj.final_state().as_matrix();
    let f = model.eval(w)?;
    let residual = simplex::replicator_rows(w, &f).amax();
    let stationary = residual <= tol;
    let kind = if w.row_iter().all(|r| r.max() >= 1.0 - tol) {
        LimitKind::Extremal
    } else if w.iter().all(|x| *x >= tol) {
        LimitKind::Interior
    } else {
        LimitKind::Boundary
    };
    let mut rounded = w.map(|x| if x < tol { 0.0 } else { x });
    for mut row in rounded.row_iter_mut() {
        let s = row.sum();
        row /= s;
    }
    let nash = is_nash(model, &rounded, nash_tol)?;
    let supports: Vec<Vec<usize>> = (0..rounded.nrows())
        .map(|i| (0..rounded.ncols()).filter(|&j| rounded[(i, j)] > SUPPORT_THRESHOLD).collect())
        .collect();
    let degenerate = is_singular(&indifference_matrix(&model.jacobian(&rounded)?, w.ncols(), &supports));
    let potential_history = traj.potential_history().filter(|_| model.has_potential());
    let potential_non_decreasing = potential_history
        .as_ref()
        .map(|h| h.windows(2).all(|p| p[1] >= p[0] - 1e-12 * p[0].abs().max(1.0)));
    let mut warnings = vec![];
    if !stationary {
        warnings.push(format!("not yet stationary: residual {residual:.3e} exceeds {tol:.1e}"));
    }
    Ok(ConvergenceReport {
        limit: simplex::matrix_rows(w),
        kind,
        stationarity_residual: residual,
        stationary,
        nash,
        degenerate,
        potential_history,
        potential_non_decreasing,
        warnings,
    })
}
