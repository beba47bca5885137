//! Experiment configuration files and their translation into library objects.
//!
//! Relative paths inside a configuration are resolved against the directory
//! of the configuration file.

use std::fs;
use std::path::{Path, PathBuf};

use dsa_core::engine::{CapMode, Initial, Recording, StepRule};
use dsa_core::markov::{MarkovError, MarkovModel};
use dsa_core::problems::{
    make_ergodic_sgd_problem, make_td0_problem, sgd_toy, ConstantsBundle, Dataset, LinearProblem, MdpSpec,
    ProblemError, ThetaSampling,
};
use dsa_core::topology::{
    build_metropolis_weights, make_tv_schedule, EdgePartitionPolicy, Graph, MixingMatrix, MixingSchedule,
    TopologyError,
};
use dsa_core::linalg::{from_rows, matrix_from_csv};
use dsa_core::ProblemOracle;
use serde::{Deserialize, Serialize};

use crate::CliError;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub problem: ProblemSpec,
    pub topology: TopologySpec,
    pub schedule: ScheduleSpec,
    pub ensemble: EnsembleSpec,
    /// Common starting point of every agent; zero when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial: Option<Vec<f64>>,
    #[serde(default)]
    pub output: OutputSpec,
    #[serde(default)]
    pub sampling: ThetaSampling,
    /// Values that take precedence over the estimated ones.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub constants: Option<ConstantsBundle>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ProblemSpec {
    SgdErgodic { source: SgdSource },
    Td0 { source: Td0Source },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub enum SgdSource {
    /// Seeded toy: one feature vector per agent, targets driven by a
    /// sticky chain.
    Random { agents: usize, states: usize, dim: usize, seed: u64 },
    Inline(SgdData),
    /// JSON file holding an [`SgdData`].
    File(PathBuf),
}

/// Per-agent data tables and the chains that index them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SgdData {
    pub datasets: Vec<Dataset>,
    /// One row-stochastic kernel per agent.
    pub chains: Vec<Vec<Vec<f64>>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub enum Td0Source {
    Random { states: usize, dim: usize, agents: usize, discount: f64, seed: u64 },
    Inline(MdpSpec),
    /// JSON file holding an [`MdpSpec`].
    File(PathBuf),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum TopologySpec {
    /// Metropolis weights on a fixed graph.
    Static { graph: GraphSpec },
    /// An explicit fixed weight matrix.
    Matrix { source: MatrixSource },
    /// A graph's edges spread over `block` steps, Metropolis weights on each.
    TimeVarying {
        graph: GraphSpec,
        block: usize,
        #[serde(default)]
        policy: PolicySpec,
        #[serde(default)]
        seed: u64,
    },
    /// Explicit matrices applied cyclically, certified over windows of `block`.
    Periodic { matrices: Vec<MatrixSource>, block: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub enum GraphSpec {
    Ring(usize),
    Path(usize),
    Complete(usize),
    Star(usize),
    Random { n: usize, extra: f64, seed: u64 },
    /// 1-based node pairs.
    Edges { n: usize, pairs: Vec<(usize, usize)> },
    /// Edge-list file, one 1-based pair per line.
    File(PathBuf),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub enum MatrixSource {
    Rows(Vec<Vec<f64>>),
    /// CSV file.
    File(PathBuf),
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub enum PolicySpec {
    #[default]
    RoundRobin,
    Shuffled,
    /// Per-step edge sets, 1-based.
    Explicit(Vec<Vec<(usize, usize)>>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleSpec {
    pub step: StepRule,
    pub horizon: usize,
    #[serde(default)]
    pub cap_mode: CapMode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnsembleSpec {
    pub runs: usize,
    pub master_seed: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dir: Option<PathBuf>,
    #[serde(default)]
    pub recording: Recording,
    #[serde(default)]
    pub diagnostics: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub horizons: Vec<usize>,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self, CliError> {
        let config: Self = serde_json::from_str(text).map_err(|e| CliError::Input(format!("config: {e}")))?;
        config.check()?;
        Ok(config)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    fn check(&self) -> Result<(), CliError> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(CliError::Input(format!(
                "config: schema_version {} is not supported (expected {SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        if self.schedule.horizon < 1 {
            return Err(CliError::Input("config: schedule.horizon must be at least 1".into()));
        }
        if self.ensemble.runs < 1 {
            return Err(CliError::Input("config: ensemble.runs must be at least 1".into()));
        }
        if let Some(sweep) = &self.sweep {
            if sweep.horizons.is_empty() || sweep.horizons.contains(&0) {
                return Err(CliError::Input("config: sweep.horizons must be non-empty and positive".into()));
            }
        }
        Ok(())
    }

    /// Whether the mixing matrix is the same at every step.
    pub fn static_topology(&self) -> bool {
        matches!(self.topology, TopologySpec::Static { .. } | TopologySpec::Matrix { .. })
    }
}

/// A parsed configuration and the directory its relative paths refer to.
#[derive(Debug, Clone)]
pub struct LoadedConfig {
    pub config: ExperimentConfig,
    pub base: PathBuf,
}

pub fn load_config(path: &Path) -> Result<LoadedConfig, CliError> {
    let text = read(path)?;
    let config = ExperimentConfig::from_json(&text)
        .map_err(|e| CliError::Input(format!("{}: {}", path.display(), e.message())))?;
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    Ok(LoadedConfig { config, base })
}

pub(crate) fn read(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

fn parse_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    serde_json::from_str(&read(path)?).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}

/// The problem, its network and, for TD(0), the underlying process.
pub struct Experiment {
    pub problem: LinearProblem,
    pub mixing: MixingSchedule,
    pub mdp: Option<MdpSpec>,
}

impl Experiment {
    pub fn agents(&self) -> usize {
        self.problem.agents()
    }
}

fn markov_error(agent: Option<usize>, e: MarkovError) -> CliError {
    let whose = agent.map_or_else(String::new, |i| format!(" (agent {})", i + 1));
    match e {
        MarkovError::Ergodicity(msg) => CliError::Assumption { name: "H2".into(), detail: format!("{msg}{whose}") },
        other => CliError::Input(format!("chain{whose}: {other}")),
    }
}

fn problem_error(e: ProblemError) -> CliError {
    match e {
        ProblemError::Markov(m) => markov_error(None, m),
        ProblemError::Rank(msg) => CliError::Assumption { name: "H3".into(), detail: msg },
        other => CliError::Input(format!("problem: {other}")),
    }
}

fn topology_error(assumption: &str, e: TopologyError) -> CliError {
    match e {
        TopologyError::Connectivity(msg) => CliError::Assumption { name: assumption.into(), detail: msg },
        TopologyError::Validation(msg) => CliError::Assumption { name: "H1-1".into(), detail: msg },
        other => CliError::Input(format!("topology: {other}")),
    }
}

fn build_problem(spec: &ProblemSpec, base: &Path) -> Result<(LinearProblem, Option<MdpSpec>), CliError> {
    match spec {
        ProblemSpec::SgdErgodic { source } => {
            let (datasets, chains) = match source {
                SgdSource::Random { agents, states, dim, seed } => {
                    if *agents == 0 || *states == 0 || *dim == 0 {
                        return Err(CliError::Input("problem: agents, states and dim must be positive".into()));
                    }
                    sgd_toy(*agents, *states, *dim, *seed)
                }
                SgdSource::Inline(data) => sgd_tables(data)?,
                SgdSource::File(path) => sgd_tables(&parse_json(&resolve(base, path))?)?,
            };
            Ok((make_ergodic_sgd_problem(&datasets, chains).map_err(problem_error)?, None))
        }
        ProblemSpec::Td0 { source } => {
            let mdp = match source {
                Td0Source::Random { states, dim, agents, discount, seed } => {
                    if *agents == 0 || *states == 0 || *dim == 0 {
                        return Err(CliError::Input("problem: agents, states and dim must be positive".into()));
                    }
                    MdpSpec::random(*states, *dim, *agents, *discount, *seed)
                }
                Td0Source::Inline(mdp) => mdp.clone(),
                Td0Source::File(path) => parse_json(&resolve(base, path))?,
            };
            let problem = make_td0_problem(&mdp, mdp.agents()).map_err(problem_error)?;
            Ok((problem, Some(mdp)))
        }
    }
}

fn sgd_tables(data: &SgdData) -> Result<(Vec<Dataset>, Vec<MarkovModel>), CliError> {
    let chains = data
        .chains
        .iter()
        .enumerate()
        .map(|(i, rows)| MarkovModel::from_rows(rows).map_err(|e| markov_error(Some(i), e)))
        .collect::<Result<Vec<_>, _>>()?;
    Ok((data.datasets.clone(), chains))
}

fn build_graph(spec: &GraphSpec, base: &Path) -> Result<Graph, CliError> {
    let small = |n: usize| {
        if n == 0 {
            Err(CliError::Input("topology: graph needs at least one node".into()))
        } else {
            Ok(n)
        }
    };
    Ok(match spec {
        GraphSpec::Ring(n) => Graph::ring(small(*n)?),
        GraphSpec::Path(n) => Graph::path(small(*n)?),
        GraphSpec::Complete(n) => Graph::complete(small(*n)?),
        GraphSpec::Star(n) => Graph::star(small(*n)?),
        GraphSpec::Random { n, extra, seed } => Graph::random_connected(small(*n)?, *extra, *seed),
        GraphSpec::Edges { n, pairs } => {
            let mut zero_based = Vec::with_capacity(pairs.len());
            for &(i, j) in pairs {
                if i == 0 || j == 0 || i > *n || j > *n {
                    return Err(CliError::Input(format!("topology: edge ({i}, {j}) outside 1..={n}")));
                }
                zero_based.push((i - 1, j - 1));
            }
            Graph::new(*n, zero_based).map_err(|e| CliError::Input(format!("topology: {e}")))?
        }
        GraphSpec::File(path) => {
            let path = resolve(base, path);
            Graph::from_edge_list(&read(&path)?, None)
                .map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?
        }
    })
}

fn build_matrix(source: &MatrixSource, base: &Path) -> Result<MixingMatrix, CliError> {
    let entries = match source {
        MatrixSource::Rows(rows) => {
            from_rows(rows).ok_or_else(|| CliError::Input("topology: ragged or empty matrix rows".into()))?
        }
        MatrixSource::File(path) => {
            let path = resolve(base, path);
            matrix_from_csv(&read(&path)?).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?
        }
    };
    MixingMatrix::from_matrix(entries).map_err(|e| topology_error("H1", e))
}

/// Builds the mixing schedule. Matrices without contraction are returned,
/// not rejected, so the validator can name the violated condition.
pub fn build_topology(spec: &TopologySpec, base: &Path) -> Result<MixingSchedule, CliError> {
    match spec {
        TopologySpec::Static { graph } => {
            let g = build_graph(graph, base)?;
            Ok(MixingSchedule::fixed(build_metropolis_weights(&g).map_err(|e| topology_error("H1", e))?))
        }
        TopologySpec::Matrix { source } => Ok(MixingSchedule::fixed(build_matrix(source, base)?)),
        TopologySpec::TimeVarying { graph, block, policy, seed } => {
            let g = build_graph(graph, base)?;
            let policy = match policy {
                PolicySpec::RoundRobin => EdgePartitionPolicy::RoundRobin,
                PolicySpec::Shuffled => EdgePartitionPolicy::Shuffled,
                PolicySpec::Explicit(sets) => {
                    let mut out = Vec::with_capacity(sets.len());
                    for set in sets {
                        let mut step = Vec::with_capacity(set.len());
                        for &(i, j) in set {
                            if i == 0 || j == 0 {
                                return Err(CliError::Input("topology: explicit edges are 1-based".into()));
                            }
                            step.push((i - 1, j - 1));
                        }
                        out.push(step);
                    }
                    EdgePartitionPolicy::Explicit(out)
                }
            };
            make_tv_schedule(&g, *block, &policy, *seed).map_err(|e| topology_error("H8", e))
        }
        TopologySpec::Periodic { matrices, block } => {
            let ms = matrices.iter().map(|m| build_matrix(m, base)).collect::<Result<Vec<_>, _>>()?;
            MixingSchedule::periodic(ms, *block).map_err(|e| topology_error("H8", e))
        }
    }
}

impl LoadedConfig {
    pub fn build(&self) -> Result<Experiment, CliError> {
        let (problem, mdp) = build_problem(&self.config.problem, &self.base)?;
        let mixing = build_topology(&self.config.topology, &self.base)?;
        if mixing.n() != problem.agents() {
            return Err(CliError::Input(format!(
                "topology has {} nodes but the problem has {} agents",
                mixing.n(),
                problem.agents()
            )));
        }
        if let Some(init) = &self.config.initial {
            if init.len() != problem.dim() {
                return Err(CliError::Input(format!(
                    "initial has length {} but the parameter dimension is {}",
                    init.len(),
                    problem.dim()
                )));
            }
        }
        Ok(Experiment { problem, mixing, mdp })
    }

    pub fn initial(&self, dim: usize) -> Initial {
        Initial::Uniform(self.config.initial.clone().unwrap_or_else(|| vec![0.0; dim]))
    }
}
