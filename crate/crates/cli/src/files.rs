//! On-disk schemas. Matrices are stored as arrays of rows; cluster labels are
//! 1-based everywhere.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use anyhow::{Context, Result};
use nalgebra::DMatrix;
use normalblock::sim::Truth;
use normalblock::{partial_correlations, ClusterAssignment, FitMethod, FitResult, NetworkEstimate, Noise};
use serde::{Deserialize, Serialize};

use crate::InputError;

pub const SCHEMA_VERSION: u32 = 1;

pub fn rows<T: Copy + nalgebra::Scalar>(m: &DMatrix<T>) -> Vec<Vec<T>> {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

pub fn from_rows<T: Copy + nalgebra::Scalar>(rows: &[Vec<T>], what: &str) -> Result<DMatrix<T>> {
    let r = rows.len();
    let c = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|row| row.len() != c) {
        return Err(InputError::new(format!("{what} has ragged rows")).into());
    }
    let flat: Vec<T> = rows.iter().flatten().copied().collect();
    Ok(DMatrix::from_row_slice(r, c, &flat))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub cluster_a: usize,
    pub cluster_b: usize,
    pub partial_correlation: f64,
}

/// Edges with 1-based endpoints, `cluster_a < cluster_b`.
pub fn edges_of(network: &NetworkEstimate) -> Vec<Edge> {
    network
        .edges()
        .into_iter()
        .map(|(a, b, pc)| Edge {
            cluster_a: a + 1,
            cluster_b: b + 1,
            partial_correlation: pc,
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriteriaRecord {
    pub log_like_bound: f64,
    pub n_params: usize,
    pub bic: f64,
    pub ebic: f64,
    pub icl: f64,
}

/// Support of one fit along a penalty path.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathPoint {
    pub lambda: f64,
    pub edges: Vec<[usize; 2]>,
}

pub fn path_of(fits: &[&FitResult]) -> Vec<PathPoint> {
    fits.iter()
        .map(|f| PathPoint {
            lambda: f.lambda,
            edges: f.network.edges().into_iter().map(|(a, b, _)| [a + 1, b + 1]).collect(),
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub schema_version: u32,
    pub method: String,
    pub zero_inflated: bool,
    pub noise: String,
    pub n: usize,
    pub p: usize,
    pub q: usize,
    pub lambda: f64,
    pub converged: bool,
    pub iterations: usize,
    pub clustering: Vec<usize>,
    /// Covariate effects, `d_cov` rows of `p` values.
    pub b: Vec<Vec<f64>>,
    pub omega: Vec<Vec<f64>>,
    pub sigma: Vec<Vec<f64>>,
    /// One value per variable, or a single shared value for spherical noise.
    pub noise_variances: Vec<f64>,
    pub alpha: Option<Vec<f64>>,
    pub kappa: Option<Vec<f64>>,
    /// Membership probabilities, `p` rows of `q` values, for latent fits.
    pub memberships: Option<Vec<Vec<f64>>>,
    pub criteria: CriteriaRecord,
    pub objective_trace: Vec<f64>,
    pub edges: Vec<Edge>,
    /// Supports along the penalty path when one was fit.
    pub path: Option<Vec<PathPoint>>,
}

fn method_name(method: FitMethod) -> &'static str {
    match method {
        FitMethod::ObservedEm => "em",
        FitMethod::LatentVem => "vem",
        FitMethod::TwoStep => "two-step",
    }
}

fn noise_record(noise: &Noise) -> (String, Vec<f64>) {
    match noise {
        Noise::Diagonal(d) => ("diagonal".into(), d.iter().copied().collect()),
        Noise::Spherical(v) => ("spherical".into(), vec![*v]),
    }
}

impl ModelFile {
    pub fn from_fit(fit: &FitResult, n: usize, path: Option<Vec<PathPoint>>) -> Self {
        let (noise, noise_variances) = noise_record(&fit.params.noise);
        let c = &fit.criteria;
        ModelFile {
            schema_version: SCHEMA_VERSION,
            method: method_name(fit.kind.method).into(),
            zero_inflated: fit.kind.zero_inflated,
            noise,
            n,
            p: fit.clustering.p(),
            q: fit.clustering.q(),
            lambda: fit.lambda,
            converged: fit.converged,
            iterations: fit.iterations,
            clustering: fit.clustering.to_one_based(),
            b: rows(&fit.params.b),
            omega: rows(fit.params.omega()),
            sigma: rows(fit.params.sigma()),
            noise_variances,
            alpha: fit.params.alpha.as_ref().map(|a| a.iter().copied().collect()),
            kappa: fit.params.kappa.as_ref().map(|k| k.iter().copied().collect()),
            memberships: fit.varstate.as_ref().map(|vs| rows(&vs.tau)),
            criteria: CriteriaRecord {
                log_like_bound: c.log_like_bound,
                n_params: c.n_params,
                bic: c.bic,
                ebic: c.ebic,
                icl: c.icl,
            },
            objective_trace: fit.objective_trace.clone(),
            edges: edges_of(&fit.network),
            path,
        }
    }

    pub fn check_version(&self, origin: &Path) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(InputError::new(format!(
                "{}: unsupported schema_version {}",
                origin.display(),
                self.schema_version
            ))
            .into());
        }
        Ok(())
    }

    pub fn clustering(&self) -> Result<ClusterAssignment> {
        ClusterAssignment::from_one_based(&self.clustering, self.q).map_err(|e| InputError::new(format!("model clustering: {e}")).into())
    }

    /// Noise variances expanded to one per variable.
    pub fn variances(&self) -> Vec<f64> {
        expand(&self.noise_variances, self.p)
    }
}

fn expand(values: &[f64], p: usize) -> Vec<f64> {
    if values.len() == 1 {
        vec![values[0]; p]
    } else {
        values.to_vec()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthFile {
    pub schema_version: u32,
    pub structure: String,
    pub seed: u64,
    pub n: usize,
    pub p: usize,
    pub q: usize,
    pub noise: String,
    pub clustering: Vec<usize>,
    pub adjacency: Vec<Vec<bool>>,
    pub b: Vec<Vec<f64>>,
    pub omega: Vec<Vec<f64>>,
    pub sigma: Vec<Vec<f64>>,
    pub noise_variances: Vec<f64>,
    pub kappa: Option<Vec<f64>>,
}

impl TruthFile {
    pub fn new(truth: &Truth, structure: &str, seed: u64, n: usize) -> Self {
        let (noise, noise_variances) = noise_record(&truth.params.noise);
        TruthFile {
            schema_version: SCHEMA_VERSION,
            structure: structure.into(),
            seed,
            n,
            p: truth.clustering.p(),
            q: truth.clustering.q(),
            noise,
            clustering: truth.clustering.to_one_based(),
            adjacency: rows(&truth.adjacency),
            b: rows(&truth.params.b),
            omega: rows(truth.params.omega()),
            sigma: rows(truth.params.sigma()),
            noise_variances,
            kappa: truth.params.kappa.as_ref().map(|k| k.iter().copied().collect()),
        }
    }

    pub fn clustering(&self) -> Result<ClusterAssignment> {
        ClusterAssignment::from_one_based(&self.clustering, self.q).map_err(|e| InputError::new(format!("truth clustering: {e}")).into())
    }

    pub fn variances(&self) -> Vec<f64> {
        expand(&self.noise_variances, self.p)
    }

    /// The truth viewed as a fitted model, so it can be scored against itself.
    pub fn as_model(&self) -> Result<ModelFile> {
        let omega = from_rows(&self.omega, "truth omega")?;
        let pc = partial_correlations(&omega).map_err(|e| InputError::new(format!("truth omega: {e}")))?;
        let mut edges = Vec::new();
        for a in 0..self.q {
            for b in (a + 1)..self.q {
                if self.adjacency[a][b] {
                    edges.push(Edge {
                        cluster_a: a + 1,
                        cluster_b: b + 1,
                        partial_correlation: pc[(a, b)],
                    });
                }
            }
        }
        Ok(ModelFile {
            schema_version: SCHEMA_VERSION,
            method: "truth".into(),
            zero_inflated: self.kappa.is_some(),
            noise: self.noise.clone(),
            n: self.n,
            p: self.p,
            q: self.q,
            lambda: 0.0,
            converged: true,
            iterations: 0,
            clustering: self.clustering.clone(),
            b: self.b.clone(),
            omega: self.omega.clone(),
            sigma: self.sigma.clone(),
            noise_variances: self.noise_variances.clone(),
            alpha: None,
            kappa: self.kappa.clone(),
            memberships: None,
            criteria: CriteriaRecord {
                log_like_bound: f64::NAN,
                n_params: 0,
                bic: f64::NAN,
                ebic: f64::NAN,
                icl: f64::NAN,
            },
            objective_trace: Vec::new(),
            edges,
            path: None,
        })
    }
}

/// A model file, or a truth file standing in for one.
pub fn read_estimate(path: &Path) -> Result<ModelFile> {
    let value: serde_json::Value = crate::io::read_json(path)?;
    let parsed = if value.get("method").is_some() {
        serde_json::from_value::<ModelFile>(value)
    } else {
        return serde_json::from_value::<TruthFile>(value)
            .map_err(|e| anyhow::Error::from(InputError::new(format!("{}: {e}", path.display()))))?
            .as_model();
    };
    let model = parsed.map_err(|e| InputError::new(format!("{}: {e}", path.display())))?;
    model.check_version(path)?;
    Ok(model)
}

pub fn write_edgelist(path: &Path, edges: &[Edge]) -> Result<()> {
    let mut text = String::from("cluster_a\tcluster_b\tpartial_correlation\n");
    for e in edges {
        writeln!(text, "{}\t{}\t{}", e.cluster_a, e.cluster_b, e.partial_correlation)?;
    }
    fs::write(path, text).with_context(|| format!("cannot write {}", path.display()))
}

/// Undirected graph over clusters; positive partial correlations are drawn in
/// pink, negative ones in blue, with width growing with their magnitude.
pub fn write_dot(path: &Path, q: usize, edges: &[Edge]) -> Result<()> {
    let mut text = String::from("graph network {\n  node [shape=circle];\n");
    for k in 1..=q {
        writeln!(text, "  C{k};")?;
    }
    for e in edges {
        let color = if e.partial_correlation >= 0.0 { "deeppink" } else { "steelblue" };
        let width = 1.0 + 4.0 * e.partial_correlation.abs();
        writeln!(
            text,
            "  C{} -- C{} [color={color}, penwidth={width:.3}, label=\"{:.3}\"];",
            e.cluster_a, e.cluster_b, e.partial_correlation
        )?;
    }
    text.push_str("}\n");
    fs::write(path, text).with_context(|| format!("cannot write {}", path.display()))
}

pub fn write_network(dir: &Path, fit: &FitResult) -> Result<()> {
    let edges = edges_of(&fit.network);
    write_edgelist(&dir.join("network.edgelist.tsv"), &edges)?;
    write_dot(&dir.join("network.dot"), fit.clustering.q(), &edges)
}
