//! Choosing the number of clusters and the penalty: information criteria,
//! penalty grids and stability selection (StARS).

use nalgebra::DMatrix;
use rand::seq::index::sample;
use rayon::prelude::*;

use crate::em;
use crate::error::{Error, Result};
use crate::rng;
use crate::types::{ClusterAssignment, Criteria, Dataset, FitOptions, FitResult, ModelKind, ModelParams, NetworkEstimate, NoiseKind};
use crate::vem;
use crate::zi;

/// Edge-count weight in the extended BIC.
pub const EBIC_GAMMA: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Criterion {
    Bic,
    Ebic,
    Icl,
}

impl Criterion {
    pub const ALL: [Criterion; 3] = [Criterion::Bic, Criterion::Ebic, Criterion::Icl];

    pub fn name(self) -> &'static str {
        match self {
            Criterion::Bic => "bic",
            Criterion::Ebic => "ebic",
            Criterion::Icl => "icl",
        }
    }

    pub fn value(self, c: &Criteria) -> f64 {
        match self {
            Criterion::Bic => c.bic,
            Criterion::Ebic => c.ebic,
            Criterion::Icl => c.icl,
        }
    }
}

/// Free parameters: coefficients, the support of Ω (upper triangle with
/// diagonal), noise terms, mixing weights when clusters are latent and zero
/// probabilities when the model is zero-inflated.
pub fn count_parameters(kind: ModelKind, params: &ModelParams, network: &NetworkEstimate) -> usize {
    let p = params.b.ncols();
    let q = params.q();
    let mut k = params.b.nrows() * p + q + network.edge_count() + params.noise.n_params();
    if kind.latent() {
        k += q - 1;
    }
    if kind.zero_inflated {
        k += p;
    }
    k
}

fn ebic_pairs_term(q: usize) -> f64 {
    if q <= 2 {
        0.0
    } else {
        ((q * (q - 1)) as f64 / 2.0).ln()
    }
}

pub(crate) fn criteria_for(
    kind: ModelKind,
    params: &ModelParams,
    q: usize,
    data: &Dataset,
    objective: f64,
    entropy: f64,
    network: &NetworkEstimate,
) -> Criteria {
    let n_params = count_parameters(kind, params, network);
    let bic = objective - 0.5 * n_params as f64 * (data.n() as f64).ln();
    let ebic = bic - EBIC_GAMMA * network.edge_count() as f64 * ebic_pairs_term(q);
    Criteria {
        log_like_bound: objective,
        bic,
        ebic,
        icl: bic - entropy,
        n_params,
    }
}

/// Recompute the criteria of a fit from its stored objective.
pub fn criteria(fit: &FitResult, data: &Dataset) -> Criteria {
    let entropy = match (&fit.varstate, fit.kind.latent()) {
        (Some(vs), true) => vs.membership_entropy(),
        _ => 0.0,
    };
    criteria_for(
        fit.kind,
        &fit.params,
        fit.clustering.q(),
        data,
        fit.criteria.log_like_bound,
        entropy,
        &fit.network,
    )
}

/// Log-spaced decreasing grid from the largest off-diagonal magnitude of `s`
/// down to `min_ratio` times it.
pub fn lambda_grid(s: &DMatrix<f64>, n_points: usize, min_ratio: f64) -> Result<Vec<f64>> {
    if n_points < 2 {
        return Err(Error::InvalidParameter("a penalty grid needs at least 2 points".into()));
    }
    if !(min_ratio > 0.0 && min_ratio < 1.0) {
        return Err(Error::InvalidParameter("min_ratio must lie in (0, 1)".into()));
    }
    let top = crate::glasso::lambda_max(s);
    if top == 0.0 {
        return Ok(vec![0.0]);
    }
    let (hi, lo) = (top.ln(), (top * min_ratio).ln());
    let last = (n_points - 1) as f64;
    let mut grid: Vec<f64> = (0..n_points)
        .map(|i| (hi + (lo - hi) * i as f64 / last).exp())
        .collect();
    grid[0] = top;
    grid[n_points - 1] = top * min_ratio;
    Ok(grid)
}

/// Which model family to fit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ModelChoice {
    pub noise: NoiseKind,
    pub zero_inflated: bool,
}

impl Default for ModelChoice {
    fn default() -> Self {
        Self {
            noise: NoiseKind::Diagonal,
            zero_inflated: false,
        }
    }
}

/// Observed clustering or a number of latent clusters.
#[derive(Debug, Clone, PartialEq)]
pub enum Target {
    Observed(ClusterAssignment),
    Latent(usize),
}

/// One fit of the chosen model.
pub fn fit_model(
    data: &Dataset,
    target: &Target,
    lambda: f64,
    model: ModelChoice,
    init: Option<ModelParams>,
    opts: &FitOptions,
) -> Result<FitResult> {
    match (target, model.zero_inflated) {
        (Target::Observed(c), false) => em::fit_em_observed(data, c, model.noise, lambda, init, opts),
        (Target::Observed(c), true) => zi::fit_zi_em_observed(data, c, lambda, init, opts),
        (Target::Latent(q), false) => vem::fit_vem(data, *q, model.noise, lambda, None, opts),
        (Target::Latent(q), true) => zi::fit_zi_vem(data, *q, lambda, None, opts),
    }
}

/// Fits along a penalty path. With an observed clustering each fit starts
/// from the previous solution; latent fits are independent and run in parallel.
pub fn fit_path(
    data: &Dataset,
    target: &Target,
    lambdas: &[f64],
    model: ModelChoice,
    opts: &FitOptions,
) -> Vec<Result<FitResult>> {
    match target {
        Target::Observed(_) => {
            let mut out: Vec<Result<FitResult>> = Vec::with_capacity(lambdas.len());
            let mut warm: Option<ModelParams> = None;
            for &lambda in lambdas {
                let fit = fit_model(data, target, lambda, model, warm.clone(), opts);
                if let Ok(f) = &fit {
                    warm = Some(f.params.clone());
                }
                out.push(fit);
            }
            out
        }
        Target::Latent(_) => lambdas
            .par_iter()
            .map(|&lambda| fit_model(data, target, lambda, model, None, opts))
            .collect(),
    }
}

/// One candidate of a sweep; `outcome` holds the error text for failed cells.
#[derive(Debug, Clone, PartialEq)]
pub struct CandidateRecord {
    pub q: usize,
    pub lambda: f64,
    pub converged: bool,
    pub outcome: std::result::Result<Criteria, String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CriterionReport {
    pub records: Vec<CandidateRecord>,
}

impl CriterionReport {
    pub fn from_fits(fits: &[Result<FitResult>], keys: &[(usize, f64)]) -> Self {
        let records = fits
            .iter()
            .zip(keys)
            .map(|(f, &(q, lambda))| match f {
                Ok(fit) => CandidateRecord {
                    q,
                    lambda,
                    converged: fit.converged,
                    outcome: Ok(fit.criteria),
                },
                Err(e) => CandidateRecord {
                    q,
                    lambda,
                    converged: false,
                    outcome: Err(e.to_string()),
                },
            })
            .collect();
        Self { records }
    }

    /// Index of the best successful candidate; ties go to the first one.
    pub fn chosen(&self, criterion: Criterion) -> Option<usize> {
        let mut best: Option<(usize, f64)> = None;
        for (i, r) in self.records.iter().enumerate() {
            if let Ok(c) = &r.outcome {
                let v = criterion.value(c);
                if v.is_finite() && best.is_none_or(|(_, b)| v > b) {
                    best = Some((i, v));
                }
            }
        }
        best.map(|(i, _)| i)
    }
}

/// Latent fits for every `q` in `qs`, run concurrently.
pub fn select_q(
    data: &Dataset,
    qs: &[usize],
    lambda: f64,
    model: ModelChoice,
    opts: &FitOptions,
) -> Result<(CriterionReport, Vec<Result<FitResult>>)> {
    if qs.is_empty() || qs.iter().any(|&q| q == 0 || q > data.p()) {
        return Err(Error::InvalidParameter(format!("cluster counts must lie in [1, {}]", data.p())));
    }
    let fits: Vec<Result<FitResult>> = qs
        .par_iter()
        .map(|&q| fit_model(data, &Target::Latent(q), lambda, model, None, opts))
        .collect();
    let keys: Vec<(usize, f64)> = qs.iter().map(|&q| (q, lambda)).collect();
    Ok((CriterionReport::from_fits(&fits, &keys), fits))
}

/// Criteria along a penalty path.
pub fn select_lambda(
    data: &Dataset,
    target: &Target,
    lambdas: &[f64],
    model: ModelChoice,
    opts: &FitOptions,
) -> Result<(CriterionReport, Vec<Result<FitResult>>)> {
    if lambdas.is_empty() || lambdas.iter().any(|&l| !(l >= 0.0)) {
        return Err(Error::InvalidParameter("penalties must be nonnegative".into()));
    }
    let q = match target {
        Target::Observed(c) => c.q(),
        Target::Latent(q) => *q,
    };
    let fits = fit_path(data, target, lambdas, model, opts);
    let keys: Vec<(usize, f64)> = lambdas.iter().map(|&l| (q, l)).collect();
    Ok((CriterionReport::from_fits(&fits, &keys), fits))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StarsConfig {
    pub n_subsamples: usize,
    pub subsample_ratio: f64,
    pub threshold: f64,
    pub seed: u64,
}

impl Default for StarsConfig {
    fn default() -> Self {
        Self {
            n_subsamples: 20,
            subsample_ratio: 0.8,
            threshold: 0.8,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StabilityPoint {
    pub lambda: f64,
    /// Edges of the full-data fit.
    pub edges: usize,
    /// Lowest subsample frequency among those edges (1 when there are none).
    pub min_edge_frequency: f64,
    /// Mean of `2 f (1 - f)` over all cluster pairs.
    pub instability: f64,
    pub qualifies: bool,
}

#[derive(Debug, Clone)]
pub struct StarsResult {
    pub chosen_index: usize,
    pub lambda: f64,
    pub curve: Vec<StabilityPoint>,
    /// Per-penalty edge selection frequencies (q x q, symmetric, zero diagonal).
    pub frequencies: Vec<DMatrix<f64>>,
    /// True when no penalty qualified and the largest one was returned.
    pub fallback: bool,
    pub full_fits: Vec<FitResult>,
}

/// Stability selection with a fixed clustering: refit the penalty path on
/// row subsamples and keep the smallest penalty at which every edge of the
/// full-data network reaches the frequency threshold.
pub fn stars(
    data: &Dataset,
    assignment: &ClusterAssignment,
    lambdas: &[f64],
    model: ModelChoice,
    cfg: &StarsConfig,
    opts: &FitOptions,
) -> Result<StarsResult> {
    if !(cfg.threshold > 0.0 && cfg.threshold < 1.0) {
        return Err(Error::InvalidParameter("threshold must lie in (0, 1)".into()));
    }
    if !(cfg.subsample_ratio > 0.0 && cfg.subsample_ratio <= 1.0) || cfg.n_subsamples == 0 {
        return Err(Error::InvalidParameter("need a ratio in (0, 1] and at least one subsample".into()));
    }
    if lambdas.is_empty() {
        return Err(Error::InvalidParameter("empty penalty grid".into()));
    }
    let target = Target::Observed(assignment.clone());
    let full_fits = fit_path(data, &target, lambdas, model, opts)
        .into_iter()
        .collect::<Result<Vec<_>>>()?;

    let n = data.n();
    let m = ((cfg.subsample_ratio * n as f64).floor() as usize).clamp(2, n);
    let sub_supports: Vec<Vec<DMatrix<bool>>> = (0..cfg.n_subsamples)
        .into_par_iter()
        .map(|s| {
            let mut g = rng::seeded(rng::derive_seed(cfg.seed, s as u64));
            let mut rows = sample(&mut g, n, m).into_vec();
            rows.sort_unstable();
            let sub = data.select_rows(&rows)?;
            fit_path(&sub, &target, lambdas, model, opts)
                .into_iter()
                .map(|f| f.map(|f| f.network.support))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;

    let q = assignment.q();
    let pairs = (q * (q - 1) / 2).max(1) as f64;
    let mut curve = Vec::with_capacity(lambdas.len());
    let mut frequencies = Vec::with_capacity(lambdas.len());
    for (l, fit) in full_fits.iter().enumerate() {
        let mut freq = DMatrix::zeros(q, q);
        for sup in &sub_supports {
            for a in 0..q {
                for b in 0..q {
                    if a != b && sup[l][(a, b)] {
                        freq[(a, b)] += 1.0;
                    }
                }
            }
        }
        freq /= cfg.n_subsamples as f64;
        let edges = fit.network.edges();
        let min_edge_frequency = edges.iter().map(|&(a, b, _)| freq[(a, b)]).fold(1.0, f64::min);
        let mut instability = 0.0;
        for a in 0..q {
            for b in (a + 1)..q {
                instability += 2.0 * freq[(a, b)] * (1.0 - freq[(a, b)]);
            }
        }
        curve.push(StabilityPoint {
            lambda: lambdas[l],
            edges: edges.len(),
            min_edge_frequency,
            instability: instability / pairs,
            qualifies: min_edge_frequency >= cfg.threshold,
        });
        frequencies.push(freq);
    }
    let smallest = (0..curve.len())
        .filter(|&i| curve[i].qualifies)
        .min_by(|&a, &b| curve[a].lambda.total_cmp(&curve[b].lambda));
    let (chosen_index, fallback) = match smallest {
        Some(i) => (i, false),
        None => {
            log::warn!("no penalty met the stability threshold; returning the largest");
            let i = (0..curve.len())
                .max_by(|&a, &b| curve[a].lambda.total_cmp(&curve[b].lambda))
                .unwrap_or(0);
            (i, true)
        }
    };
    Ok(StarsResult {
        chosen_index,
        lambda: lambdas[chosen_index],
        curve,
        frequencies,
        fallback,
        full_fits,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::{extract_network, FitMethod, Noise};
    use nalgebra::DVector;

    fn kind(method: FitMethod, zi: bool) -> ModelKind {
        ModelKind {
            method,
            zero_inflated: zi,
        }
    }

    fn dense_params(p: usize, q: usize, noise: Noise) -> ModelParams {
        let omega = DMatrix::from_fn(q, q, |a, b| if a == b { 2.0 } else { 0.3 });
        ModelParams::new(DMatrix::zeros(1, p), omega, noise).unwrap()
    }

    #[test]
    fn counting_rule() {
        let params = dense_params(4, 3, Noise::Diagonal(DVector::from_element(4, 1.0)));
        let net = extract_network(params.omega(), 0.0, 1e-10).unwrap();
        assert_eq!(count_parameters(kind(FitMethod::ObservedEm, false), &params, &net), 14);
        let sph = dense_params(4, 3, Noise::Spherical(1.0));
        assert_eq!(count_parameters(kind(FitMethod::ObservedEm, false), &sph, &net), 11);
        assert_eq!(count_parameters(kind(FitMethod::LatentVem, false), &params, &net), 16);
        assert_eq!(count_parameters(kind(FitMethod::LatentVem, true), &params, &net), 20);
        let diag = ModelParams::new(
            DMatrix::zeros(1, 4),
            DMatrix::identity(3, 3),
            Noise::Diagonal(DVector::from_element(4, 1.0)),
        )
        .unwrap();
        let empty = extract_network(diag.omega(), 1.0, 1e-10).unwrap();
        assert_eq!(count_parameters(kind(FitMethod::ObservedEm, false), &diag, &empty), 4 + 3 + 4);
    }

    #[test]
    fn grid_shape() {
        let s = DMatrix::from_row_slice(3, 3, &[1.0, 0.5, -0.8, 0.5, 1.0, 0.1, -0.8, 0.1, 1.0]);
        let g = lambda_grid(&s, 2, 0.01).unwrap();
        assert_eq!(g, vec![0.8, 0.8 * 0.01]);
        let g = lambda_grid(&s, 30, 0.01).unwrap();
        assert_eq!(g.len(), 30);
        assert!(g.windows(2).all(|w| w[1] < w[0]));
        assert_eq!(lambda_grid(&DMatrix::identity(3, 3), 30, 0.01).unwrap(), vec![0.0]);
        assert!(lambda_grid(&s, 1, 0.01).is_err());
    }

    #[test]
    fn report_picks_argmax() {
        let c = |v: f64| Criteria {
            log_like_bound: v,
            bic: v,
            ebic: -v,
            icl: v,
            n_params: 1,
        };
        let report = CriterionReport {
            records: vec![
                CandidateRecord { q: 1, lambda: 0.0, converged: true, outcome: Ok(c(1.0)) },
                CandidateRecord { q: 2, lambda: 0.0, converged: true, outcome: Err("boom".into()) },
                CandidateRecord { q: 3, lambda: 0.0, converged: true, outcome: Ok(c(3.0)) },
            ],
        };
        assert_eq!(report.chosen(Criterion::Bic), Some(2));
        assert_eq!(report.chosen(Criterion::Ebic), Some(0));
    }
}
