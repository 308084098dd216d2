//! Synthetic data: random cluster graphs, precision matrices with a given
//! support, and draws from the (optionally zero-inflated) model.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng as _;
use rand_distr::{Distribution, Normal, Uniform};

use crate::error::{Error, Result};
use crate::linalg;
use crate::rng::{self, Rng};
use crate::types::{ClusterAssignment, Dataset, ModelParams, Noise, NoiseKind};

pub const DEFAULT_U: f64 = 0.4;
pub const DEFAULT_V: f64 = 0.3;
/// Range of the single simulated covariate.
pub const COVARIATE_RANGE: (f64, f64) = (1.0, 10.0);

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Structure {
    ErdosRenyi { prob: f64 },
    /// Each new node attaches `edges_per_node` edges with probability
    /// proportional to `degree^power + 1`.
    PreferentialAttachment { power: f64, edges_per_node: usize },
    /// Nodes split evenly into `blocks` contiguous communities.
    Community { blocks: usize, within: f64, between: f64 },
}

impl Structure {
    pub fn erdos_renyi() -> Self {
        Structure::ErdosRenyi { prob: 0.2 }
    }

    pub fn preferential_attachment() -> Self {
        Structure::PreferentialAttachment {
            power: 1.0,
            edges_per_node: 1,
        }
    }

    pub fn community() -> Self {
        Structure::Community {
            blocks: 3,
            within: 0.6,
            between: 0.05,
        }
    }

    /// Short name used in files and on the command line.
    pub fn name(&self) -> &'static str {
        match self {
            Structure::ErdosRenyi { .. } => "er",
            Structure::PreferentialAttachment { .. } => "pa",
            Structure::Community { .. } => "community",
        }
    }

    /// Default structure for a short name.
    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "er" => Some(Self::erdos_renyi()),
            "pa" => Some(Self::preferential_attachment()),
            "community" => Some(Self::community()),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GraphSpec {
    pub structure: Structure,
    pub q: usize,
    pub seed: u64,
}

fn check_prob(p: f64, what: &str) -> Result<()> {
    if (0.0..=1.0).contains(&p) {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("{what} must lie in [0, 1], got {p}")))
    }
}

/// Symmetric adjacency matrix with an empty diagonal.
pub fn generate_graph(spec: &GraphSpec) -> Result<DMatrix<bool>> {
    let q = spec.q;
    if q == 0 {
        return Err(Error::InvalidParameter("a graph needs at least one node".into()));
    }
    let mut g = rng::seeded(spec.seed);
    let mut adj = DMatrix::from_element(q, q, false);
    let link = |adj: &mut DMatrix<bool>, a: usize, b: usize| {
        adj[(a, b)] = true;
        adj[(b, a)] = true;
    };
    match spec.structure {
        Structure::ErdosRenyi { prob } => {
            check_prob(prob, "edge probability")?;
            for a in 0..q {
                for b in (a + 1)..q {
                    if g.random::<f64>() < prob {
                        link(&mut adj, a, b);
                    }
                }
            }
        }
        Structure::PreferentialAttachment { power, edges_per_node } => {
            if !(power >= 0.0) || edges_per_node == 0 {
                return Err(Error::InvalidParameter(
                    "attachment needs power >= 0 and at least one edge per node".into(),
                ));
            }
            let mut degree = vec![0usize; q];
            for node in 1..q {
                let mut weights: Vec<f64> = (0..node).map(|t| (degree[t] as f64).powf(power) + 1.0).collect();
                for _ in 0..edges_per_node.min(node) {
                    let total: f64 = weights.iter().sum();
                    let mut u = g.random::<f64>() * total;
                    let mut target = node - 1;
                    for (t, &w) in weights.iter().enumerate() {
                        if w > 0.0 && u < w {
                            target = t;
                            break;
                        }
                        u -= w;
                    }
                    weights[target] = 0.0;
                    link(&mut adj, node, target);
                    degree[node] += 1;
                    degree[target] += 1;
                }
            }
        }
        Structure::Community { blocks, within, between } => {
            check_prob(within, "within-community probability")?;
            check_prob(between, "between-community probability")?;
            if blocks == 0 {
                return Err(Error::InvalidParameter("need at least one community".into()));
            }
            let block = |a: usize| a * blocks / q;
            for a in 0..q {
                for b in (a + 1)..q {
                    let prob = if block(a) == block(b) { within } else { between };
                    if g.random::<f64>() < prob {
                        link(&mut adj, a, b);
                    }
                }
            }
        }
    }
    Ok(adj)
}

/// `Ω = vG + (|λ_min(vG)| + u) I`: support follows the graph and the
/// smallest eigenvalue is at least `u`.
pub fn graph_to_precision(adjacency: &DMatrix<bool>, u: f64, v: f64) -> Result<DMatrix<f64>> {
    if !(u > 0.0 && v > 0.0) {
        return Err(Error::InvalidParameter("u and v must be positive".into()));
    }
    let q = adjacency.nrows();
    let scaled = DMatrix::from_fn(q, q, |a, b| if a != b && adjacency[(a, b)] { v } else { 0.0 });
    let min_eig = SymmetricEigen::new(scaled.clone()).eigenvalues.min();
    Ok(scaled + DMatrix::identity(q, q) * (min_eig.abs() + u))
}

/// Truncated Gaussian law of the per-variable zero probabilities.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KappaSpec {
    pub mean: f64,
    pub sd: f64,
    pub upper: f64,
}

impl KappaSpec {
    pub fn with_mean(mean: f64) -> Self {
        Self { mean, sd: 0.05, upper: 0.9 }
    }

    /// Rejection sampling on `[0, upper]`.
    pub fn sample(&self, p: usize, rng: &mut Rng) -> Result<DVector<f64>> {
        if !(self.sd > 0.0) || !(self.upper > 0.0 && self.upper < 1.0) || !(0.0..=self.upper).contains(&self.mean) {
            return Err(Error::InvalidParameter("invalid zero-inflation law".into()));
        }
        let law = Normal::new(self.mean, self.sd).map_err(|e| Error::InvalidParameter(e.to_string()))?;
        Ok(DVector::from_fn(p, |_, _| loop {
            let k = law.sample(rng);
            if (0.0..=self.upper).contains(&k) {
                break k;
            }
        }))
    }
}

/// Uniform labels, then clusters left empty each take one variable from a
/// cluster that can spare it.
pub fn balanced_clustering(p: usize, q: usize, rng: &mut Rng) -> Result<ClusterAssignment> {
    if q == 0 || q > p {
        return Err(Error::InvalidParameter(format!("need 1 <= q <= p, got q = {q}, p = {p}")));
    }
    let mut labels: Vec<usize> = (0..p).map(|_| rng.random_range(0..q)).collect();
    loop {
        let mut sizes = vec![0usize; q];
        for &l in &labels {
            sizes[l] += 1;
        }
        let Some(empty) = sizes.iter().position(|&s| s == 0) else {
            break;
        };
        let donors: Vec<usize> = (0..p).filter(|&j| sizes[labels[j]] > 1).collect();
        labels[donors[rng.random_range(0..donors.len())]] = empty;
    }
    ClusterAssignment::new(labels, q)
}

/// Covariates uniform on [`COVARIATE_RANGE`].
pub fn simulate_covariates(n: usize, d_cov: usize, rng: &mut Rng) -> DMatrix<f64> {
    let law = Uniform::new_inclusive(COVARIATE_RANGE.0, COVARIATE_RANGE.1).expect("valid range");
    DMatrix::from_fn(n, d_cov, |_, _| law.sample(rng))
}

/// Draw `n` rows of `Y = X B + W Cᵀ + E`.
pub fn simulate(params: &ModelParams, assignment: &ClusterAssignment, n: usize, seed: u64) -> Result<Dataset> {
    let p = assignment.p();
    if params.b.ncols() != p || params.q() != assignment.q() {
        return Err(Error::Shape("parameters do not match the clustering".into()));
    }
    let mut g = rng::seeded(seed);
    let x = simulate_covariates(n, params.b.nrows(), &mut g);
    let chol = linalg::cholesky(params.sigma(), "sigma")?;
    let w = rng::standard_normal_matrix(&mut g, n, params.q()) * chol.l().transpose();
    let sd = params.noise.variances(p).map(f64::sqrt);
    let mut e = rng::standard_normal_matrix(&mut g, n, p);
    for j in 0..p {
        let mut c = e.column_mut(j);
        c *= sd[j];
    }
    let y = &x * &params.b + w * assignment.one_hot().transpose() + e;
    Dataset::new(y, x)
}

/// As [`simulate`], then each entry of column `j` is set to 0 with
/// probability `kappa[j]`, using a separate random stream.
pub fn simulate_zi(
    params: &ModelParams,
    assignment: &ClusterAssignment,
    n: usize,
    kappa: &DVector<f64>,
    seed: u64,
) -> Result<Dataset> {
    if kappa.len() != assignment.p() || kappa.iter().any(|&k| !(0.0..1.0).contains(&k)) {
        return Err(Error::InvalidParameter("kappa must have p entries in [0, 1)".into()));
    }
    let data = simulate(params, assignment, n, seed)?;
    let mut g = rng::seeded(rng::derive_seed(seed, u64::MAX));
    let mut y = data.y().clone();
    for j in 0..y.ncols() {
        for i in 0..n {
            if g.random::<f64>() < kappa[j] {
                y[(i, j)] = 0.0;
            }
        }
    }
    Dataset::new(y, data.x().clone())
}

/// A complete simulation setting.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Scenario {
    pub structure: Structure,
    pub n: usize,
    pub p: usize,
    pub q: usize,
    pub noise: NoiseKind,
    /// Noise variances are drawn uniformly from this range.
    pub noise_range: (f64, f64),
    pub u: f64,
    pub v: f64,
    pub kappa: Option<KappaSpec>,
}

impl Scenario {
    pub fn new(structure: Structure, n: usize, p: usize, q: usize) -> Self {
        Self {
            structure,
            n,
            p,
            q,
            noise: NoiseKind::Diagonal,
            noise_range: (0.2, 0.6),
            u: DEFAULT_U,
            v: DEFAULT_V,
            kappa: None,
        }
    }
}

/// Ground truth behind a simulated dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct Truth {
    pub params: ModelParams,
    pub clustering: ClusterAssignment,
    pub adjacency: DMatrix<bool>,
}

/// Draw a graph, parameters, a clustering and data. With `q >= 3` the graph
/// is redrawn until it has at least one edge and one missing edge.
pub fn generate(scenario: &Scenario, seed: u64) -> Result<(Dataset, Truth)> {
    let Scenario { structure, n, p, q, .. } = *scenario;
    let mut attempt = 0u64;
    let adjacency = loop {
        let adj = generate_graph(&GraphSpec {
            structure,
            q,
            seed: rng::derive_seed(seed, 1000 + attempt),
        })?;
        let edges = adj.iter().filter(|&&b| b).count() / 2;
        let pairs = q * q.saturating_sub(1) / 2;
        attempt += 1;
        if q < 3 || (edges > 0 && edges < pairs) || attempt >= 1000 {
            break adj;
        }
    };
    let omega = graph_to_precision(&adjacency, scenario.u, scenario.v)?;
    let mut g = rng::seeded(rng::derive_seed(seed, 1));
    let clustering = balanced_clustering(p, q, &mut g)?;
    let b = rng::standard_normal_matrix(&mut g, 1, p);
    let (lo, hi) = scenario.noise_range;
    let law = Uniform::new_inclusive(lo, hi).map_err(|e| Error::InvalidParameter(e.to_string()))?;
    let noise = match scenario.noise {
        NoiseKind::Diagonal => Noise::Diagonal(DVector::from_fn(p, |_, _| law.sample(&mut g))),
        NoiseKind::Spherical => Noise::Spherical(law.sample(&mut g)),
    };
    let mut params = ModelParams::new(b, omega, noise)?;
    let sizes = clustering.sizes();
    params = params.with_alpha(DVector::from_fn(q, |k, _| sizes[k] as f64 / p as f64))?;
    let data_seed = rng::derive_seed(seed, 2);
    let data = match scenario.kappa {
        None => simulate(&params, &clustering, n, data_seed)?,
        Some(spec) => {
            let kappa = spec.sample(p, &mut g)?;
            params = params.with_kappa(kappa.clone())?;
            simulate_zi(&params, &clustering, n, &kappa, data_seed)?
        }
    };
    Ok((
        data,
        Truth {
            params,
            clustering,
            adjacency,
        },
    ))
}
