//! Experiment configuration files (TOML).

use std::path::{Path, PathBuf};

use metasimplex::dynamics::IntegratorConfig;
use metasimplex::learning::LearnConfig;
use metasimplex::{AssignmentState, Dims, GraphWeights, PayoffModel};
use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub seed: u64,
    pub output: Option<PathBuf>,
    /// Largest joint size `c^n` allowed for embedded analyses.
    pub cap: Option<usize>,
    pub dims: Option<DimsSpec>,
    pub payoff: Option<PayoffSpec>,
    #[serde(default)]
    pub initial: InitialSpec,
    #[serde(default)]
    pub integrator: IntegratorConfig,
    #[serde(default)]
    pub analysis: AnalysisSpec,
    pub learning: Option<LearningSpec>,
}

#[derive(Clone, Copy, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DimsSpec {
    pub n: usize,
    pub c: usize,
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
pub enum GraphSpec {
    Named(GraphName),
    Grid { grid: [usize; 2] },
    Matrix(Vec<Vec<f64>>),
}

#[derive(Clone, Copy, Debug, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GraphName {
    /// Path graph over the nodes.
    Path,
    /// Isolated nodes (each node sees only itself).
    Identity,
}

#[derive(Debug, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum PayoffSpec {
    Zero,
    Sflow { omega: GraphSpec },
    Egn { omega: GraphSpec, b: Vec<Vec<f64>> },
    Linear { a_bar: Vec<Vec<f64>> },
    Multigame { games: Vec<Vec<Vec<f64>>> },
    /// Quadratic potential `J(W) = 1/2 <vec W, A vec W>` with symmetric `A`.
    Potential { a_bar: Vec<Vec<f64>> },
}

#[derive(Debug, Default, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum InitialSpec {
    #[default]
    Barycenter,
    Explicit {
        state: Vec<Vec<f64>>,
    },
    RandomInterior {
        #[serde(default = "default_floor")]
        floor: f64,
    },
    RandomNearVertex {
        #[serde(default = "default_spread")]
        spread: f64,
    },
}

fn default_floor() -> f64 {
    1e-2
}

fn default_spread() -> f64 {
    0.1
}

#[derive(Debug, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalysisSpec {
    /// Nash test on the rounded final state.
    pub nash: bool,
    pub nash_tol: f64,
    /// Entries below this are rounded to zero before the Nash test.
    pub round_tol: f64,
    pub ess: bool,
    pub ess_radius: f64,
    pub ess_samples: usize,
    /// The joint flow from `T(W0)` stays on the product manifold.
    pub wright: bool,
    pub wright_tol: f64,
    /// `T(W(t))` matches the joint flow from `T(W0)` at every sample.
    pub embedding_check: bool,
    pub embedding_tol: f64,
}

impl Default for AnalysisSpec {
    fn default() -> Self {
        Self {
            nash: false,
            nash_tol: 1e-6,
            round_tol: 1e-3,
            ess: false,
            ess_radius: 0.1,
            ess_samples: 1000,
            wright: false,
            wright_tol: 1e-6,
            embedding_check: false,
            embedding_tol: 1e-6,
        }
    }
}

impl AnalysisSpec {
    pub fn needs_embedding(&self) -> bool {
        self.wright || self.embedding_check
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LearningSpec {
    pub width: usize,
    pub height: usize,
    pub labels: usize,
    #[serde(default = "default_flip_rate")]
    pub flip_rate: f64,
    #[serde(default = "default_contrast")]
    pub contrast: f64,
    #[serde(default = "default_jitter")]
    pub jitter: f64,
    /// Initial game matrix; zeros when absent.
    pub b_init: Option<Vec<Vec<f64>>>,
    /// Fail the run when the final accuracy is below this.
    pub min_accuracy: Option<f64>,
    #[serde(default)]
    pub optimizer: LearnConfig,
}

fn default_flip_rate() -> f64 {
    0.15
}

fn default_contrast() -> f64 {
    1.0
}

fn default_jitter() -> f64 {
    0.3
}

/// A problem with the configuration, tagged with the offending field.
#[derive(Debug)]
pub struct SchemaError(pub String);

impl std::fmt::Display for SchemaError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

fn schema(field: &str, msg: impl std::fmt::Display) -> SchemaError {
    SchemaError(format!("{field}: {msg}"))
}

pub fn load(path: &Path) -> Result<ExperimentConfig, SchemaError> {
    let text = std::fs::read_to_string(path).map_err(|e| SchemaError(format!("cannot read {}: {e}", path.display())))?;
    toml::from_str(&text).map_err(|e| SchemaError(format!("{}: {e}", path.display())))
}

/// Converts nested rows into a matrix of the expected shape.
pub fn matrix(field: &str, rows: &[Vec<f64>], shape: Option<(usize, usize)>) -> Result<DMatrix<f64>, SchemaError> {
    let nrows = rows.len();
    let ncols = rows.first().map_or(0, Vec::len);
    if nrows == 0 || ncols == 0 {
        return Err(schema(field, "matrix is empty"));
    }
    if let Some(k) = rows.iter().position(|r| r.len() != ncols) {
        return Err(schema(field, format!("row {k} has {} entries, row 0 has {ncols}", rows[k].len())));
    }
    if let Some((r, c)) = shape {
        if (nrows, ncols) != (r, c) {
            return Err(schema(field, format!("expected a {r}x{c} matrix, found {nrows}x{ncols}")));
        }
    }
    if rows.iter().flatten().any(|x| !x.is_finite()) {
        return Err(schema(field, "entries must be finite"));
    }
    Ok(DMatrix::from_fn(nrows, ncols, |i, j| rows[i][j]))
}

fn graph(spec: &GraphSpec, n: usize) -> Result<GraphWeights, SchemaError> {
    match spec {
        GraphSpec::Named(GraphName::Path) => Ok(GraphWeights::path(n)),
        GraphSpec::Named(GraphName::Identity) => GraphWeights::new(DMatrix::identity(n, n)).map_err(|e| schema("payoff.omega", e)),
        GraphSpec::Grid { grid: [w, h] } => {
            if w * h != n {
                return Err(schema("payoff.omega", format!("a {w}x{h} grid has {} nodes, dims.n is {n}", w * h)));
            }
            Ok(GraphWeights::grid(*w, *h))
        }
        GraphSpec::Matrix(rows) => GraphWeights::new(matrix("payoff.omega", rows, Some((n, n)))?).map_err(|e| schema("payoff.omega", e)),
    }
}

impl ExperimentConfig {
    pub fn dims(&self) -> Result<Dims, SchemaError> {
        let d = self.dims.ok_or_else(|| schema("dims", "required when a payoff is given"))?;
        if d.n == 0 || d.c < 2 {
            return Err(schema("dims", "need n >= 1 and c >= 2"));
        }
        Ok(Dims::new(d.n, d.c))
    }

    pub fn model(&self, spec: &PayoffSpec) -> Result<PayoffModel, SchemaError> {
        let dims = self.dims()?;
        let (n, c) = (dims.n, dims.c);
        let square = Some((n * c, n * c));
        let built = match spec {
            PayoffSpec::Zero => PayoffModel::zero(dims),
            PayoffSpec::Sflow { omega } => PayoffModel::sflow(graph(omega, n)?, c),
            PayoffSpec::Egn { omega, b } => PayoffModel::egn(graph(omega, n)?, matrix("payoff.b", b, Some((c, c)))?).map_err(|e| schema("payoff", e))?,
            PayoffSpec::Linear { a_bar } => PayoffModel::linear(matrix("payoff.a_bar", a_bar, square)?, dims).map_err(|e| schema("payoff", e))?,
            PayoffSpec::Multigame { games } => {
                if games.len() != n {
                    return Err(schema("payoff.games", format!("expected {n} games, found {}", games.len())));
                }
                let games = games
                    .iter()
                    .enumerate()
                    .map(|(i, g)| matrix(&format!("payoff.games[{i}]"), g, Some((c, c))))
                    .collect::<Result<Vec<_>, _>>()?;
                PayoffModel::multigame(games).map_err(|e| schema("payoff", e))?
            }
            PayoffSpec::Potential { a_bar } => {
                PayoffModel::quadratic_potential(matrix("payoff.a_bar", a_bar, square)?, dims).map_err(|e| schema("payoff.a_bar", e))?
            }
        };
        Ok(built)
    }

    pub fn initial_state(&self) -> Result<AssignmentState, SchemaError> {
        let dims = self.dims()?;
        let (n, c) = (dims.n, dims.c);
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        match &self.initial {
            InitialSpec::Barycenter => Ok(AssignmentState::barycenter(n, c)),
            InitialSpec::Explicit { state } => {
                AssignmentState::new(matrix("initial.state", state, Some((n, c)))?).map_err(|e| schema("initial.state", e))
            }
            InitialSpec::RandomInterior { floor } => {
                if !(0.0..1.0 / c as f64).contains(floor) {
                    return Err(schema("initial.floor", format!("must lie in [0, 1/c), found {floor}")));
                }
                Ok(AssignmentState::random(&mut rng, n, c, *floor))
            }
            InitialSpec::RandomNearVertex { spread } => {
                if !(*spread > 0.0 && *spread < 1.0) {
                    return Err(schema("initial.spread", format!("must lie in (0, 1), found {spread}")));
                }
                Ok(AssignmentState::random_near_vertex(&mut rng, n, c, *spread))
            }
        }
    }
}
