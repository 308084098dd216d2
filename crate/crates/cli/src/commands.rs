use std::path::Path;

use anyhow::{anyhow, Context, Result};
use nalgebra::{DMatrix, DVector};
use normalblock::experiment::{self, ExperimentConfig, Method};
use normalblock::metrics;
use normalblock::selection::{self, Criterion, CriterionReport, ModelChoice, StarsConfig, Target};
use normalblock::sim::{self, KappaSpec, Scenario, Structure};
use normalblock::twostep::{self, ClusteringMethod, Clusters};
use normalblock::{ClusterAssignment, Dataset, FitOptions, FitResult, NoiseKind};

use crate::args::*;
use crate::files::{self, ModelFile, TruthFile};
use crate::io;
use crate::InputError;

fn structure(arg: StructureArg) -> Structure {
    match arg {
        StructureArg::Er => Structure::erdos_renyi(),
        StructureArg::Pa => Structure::preferential_attachment(),
        StructureArg::Community => Structure::community(),
    }
}

fn noise_kind(arg: NoiseArg) -> NoiseKind {
    match arg {
        NoiseArg::Diagonal => NoiseKind::Diagonal,
        NoiseArg::Spherical => NoiseKind::Spherical,
    }
}

fn criterion(arg: CriterionArg) -> Criterion {
    match arg {
        CriterionArg::Bic => Criterion::Bic,
        CriterionArg::Ebic => Criterion::Ebic,
        CriterionArg::Icl => Criterion::Icl,
    }
}

fn fit_options(control: &FitControl) -> FitOptions {
    FitOptions {
        tol: control.tol,
        max_iter: control.max_iter,
        seed: control.seed,
        ..FitOptions::default()
    }
}

fn model_choice(control: &FitControl) -> Result<ModelChoice> {
    if control.zi && control.noise == NoiseArg::Spherical {
        return Err(InputError::new("zero-inflated models support diagonal noise only").into());
    }
    Ok(ModelChoice {
        noise: noise_kind(control.noise),
        zero_inflated: control.zi,
    })
}

/// Data plus the optional known clustering, with cross-file shape checks.
fn load_data(args: &DataArgs) -> Result<(Dataset, Option<ClusterAssignment>)> {
    let y = io::read_matrix(&args.y)?;
    let data = match &args.x {
        Some(xp) => {
            let x = io::read_matrix(xp)?;
            if x.nrows() != y.nrows() {
                return Err(InputError::new(format!(
                    "{} has {} rows but {} has {}",
                    args.y.display(),
                    y.nrows(),
                    xp.display(),
                    x.nrows()
                ))
                .into());
            }
            Dataset::new(y, x)
        }
        None => Dataset::with_intercept(y),
    }
    .map_err(|e| InputError::new(format!("{}: {e}", args.y.display())))?;
    let clusters = match &args.clusters {
        Some(cp) => {
            let labels = io::read_clusters(cp)?;
            if labels.len() != data.p() {
                return Err(InputError::new(format!(
                    "{} has {} labels but {} has {} columns",
                    cp.display(),
                    labels.len(),
                    args.y.display(),
                    data.p()
                ))
                .into());
            }
            let q = labels.iter().copied().max().unwrap_or(0);
            let c = ClusterAssignment::from_one_based(&labels, q).map_err(|e| InputError::new(format!("{}: {e}", cp.display())))?;
            Some(c)
        }
        None => None,
    };
    Ok((data, clusters))
}

fn write_model(dir: &Path, fit: &FitResult, data: &Dataset, path: Option<Vec<files::PathPoint>>) -> Result<()> {
    io::write_json(&dir.join("model.json"), &ModelFile::from_fit(fit, data.n(), path))?;
    files::write_network(dir, fit)
}

fn report_convergence(fit: &FitResult) {
    if !fit.converged {
        log::warn!("fit stopped after {} iterations without converging", fit.iterations);
    }
}

pub fn simulate(args: &SimulateArgs) -> Result<()> {
    let mut scenario = Scenario::new(structure(args.structure), args.n, args.p, args.q);
    scenario.noise = noise_kind(args.noise);
    scenario.kappa = args.zi_mean.map(KappaSpec::with_mean);
    let (data, truth) = sim::generate(&scenario, args.seed)?;
    io::ensure_dir(&args.out)?;
    io::write_matrix(&args.out.join("Y.csv"), "y", data.y())?;
    io::write_matrix(&args.out.join("X.csv"), "x", data.x())?;
    io::write_clusters(&args.out.join("clusters.csv"), &truth.clustering)?;
    io::write_json(
        &args.out.join("truth.json"),
        &TruthFile::new(&truth, scenario.structure.name(), args.seed, args.n),
    )?;
    println!("wrote n={} p={} q={} to {}", args.n, args.p, args.q, args.out.display());
    Ok(())
}

pub fn fit(args: &FitArgs) -> Result<()> {
    let (data, clusters) = load_data(&args.data)?;
    let opts = fit_options(&args.control);
    let model = model_choice(&args.control)?;
    let q = || args.q.ok_or_else(|| InputError::new("--q is required without --clusters"));
    let fit = match args.method {
        MethodArg::Em => {
            let c = clusters.ok_or_else(|| InputError::new("--method em needs --clusters"))?;
            selection::fit_model(&data, &Target::Observed(c), args.lambda, model, None, &opts)?
        }
        MethodArg::Vem => {
            if clusters.is_some() {
                return Err(InputError::new("--method vem estimates the clustering; use --method em with --clusters").into());
            }
            selection::fit_model(&data, &Target::Latent(q()?), args.lambda, model, None, &opts)?
        }
        MethodArg::TwoStep => {
            let target = match clusters {
                Some(c) => Clusters::Given(c),
                None => Clusters::Count(q()?),
            };
            let method = match args.clustering {
                ClusteringArg::Kmeans => ClusteringMethod::ResidualKmeans,
                ClusteringArg::Spectral => ClusteringMethod::CovarianceSpectral,
            };
            if model.zero_inflated {
                twostep::zi_two_step_fit(&data, &target, method, args.lambda, &opts)?
            } else {
                if model.noise == NoiseKind::Spherical {
                    log::info!("two-step fits estimate per-variable noise; --noise spherical averages it");
                }
                twostep::two_step_fit(&data, &target, method, args.lambda, &opts)?
            }
        }
    };
    report_convergence(&fit);
    io::ensure_dir(&args.out)?;
    write_model(&args.out, &fit, &data, None)?;
    println!(
        "q={} lambda={} edges={} converged={} objective={}",
        fit.clustering.q(),
        fit.lambda,
        fit.network.edge_count(),
        fit.converged,
        fit.final_objective().unwrap_or(f64::NAN)
    );
    Ok(())
}

/// Grid from the unpenalised fit unless penalties were given.
fn penalty_grid(
    explicit: &[f64],
    points: usize,
    min_ratio: f64,
    data: &Dataset,
    target: &Target,
    model: ModelChoice,
    opts: &FitOptions,
) -> Result<Vec<f64>> {
    if !explicit.is_empty() {
        if explicit.iter().any(|l| l.is_nan() || *l < 0.0) {
            return Err(InputError::new("penalties must be nonnegative").into());
        }
        return Ok(explicit.to_vec());
    }
    let base = selection::fit_model(data, target, 0.0, model, None, opts)?;
    Ok(selection::lambda_grid(base.params.sigma(), points, min_ratio)?)
}

fn write_criteria(path: &Path, report: &CriterionReport, chosen: usize) -> Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("cannot write {}", path.display()))?;
    w.write_record(["q", "lambda", "converged", "log_like_bound", "n_params", "bic", "ebic", "icl", "selected", "error"])?;
    for (i, r) in report.records.iter().enumerate() {
        let mut row = vec![r.q.to_string(), r.lambda.to_string(), r.converged.to_string()];
        match &r.outcome {
            Ok(c) => {
                row.extend([c.log_like_bound, c.n_params as f64, c.bic, c.ebic, c.icl].map(|v| v.to_string()));
                row.push((i == chosen).to_string());
                row.push(String::new());
            }
            Err(e) => {
                row.extend(std::iter::repeat_n(String::new(), 5));
                row.push("false".into());
                row.push(e.clone());
            }
        }
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn select(args: &SelectArgs) -> Result<()> {
    let (data, clusters) = load_data(&args.data)?;
    let opts = fit_options(&args.control);
    let model = model_choice(&args.control)?;
    let (report, fits, path) = if !args.qs.is_empty() {
        if clusters.is_some() {
            return Err(InputError::new("--qs compares latent cluster counts; drop --clusters").into());
        }
        let (report, fits) = selection::select_q(&data, &args.qs, args.lambda, model, &opts)?;
        (report, fits, false)
    } else {
        let target = match (clusters, args.q) {
            (Some(c), _) => Target::Observed(c),
            (None, Some(q)) => Target::Latent(q),
            (None, None) => return Err(InputError::new("give --qs, --q or --clusters").into()),
        };
        let grid = penalty_grid(&args.lambdas, args.lambda_points, args.min_ratio, &data, &target, model, &opts)?;
        let (report, fits) = selection::select_lambda(&data, &target, &grid, model, &opts)?;
        (report, fits, true)
    };
    let crit = criterion(args.criterion);
    let chosen = report.chosen(crit).ok_or_else(|| anyhow!("no candidate fit succeeded"))?;
    let fit = fits[chosen].as_ref().map_err(|e| anyhow!("{e}"))?;
    report_convergence(fit);
    io::ensure_dir(&args.out)?;
    write_criteria(&args.out.join("criteria.csv"), &report, chosen)?;
    let path = path.then(|| files::path_of(&fits.iter().filter_map(|f| f.as_ref().ok()).collect::<Vec<_>>()));
    write_model(&args.out, fit, &data, path)?;
    println!("{} chose q={} lambda={}", crit.name(), fit.clustering.q(), fit.lambda);
    Ok(())
}

pub fn stars(args: &StarsArgs) -> Result<()> {
    let (data, clusters) = load_data(&args.data)?;
    let opts = fit_options(&args.control);
    let model = model_choice(&args.control)?;
    // The clustering is kept from the unpenalised fit.
    let clustering = match (clusters, args.q) {
        (Some(c), _) => c,
        (None, Some(q)) => selection::fit_model(&data, &Target::Latent(q), 0.0, model, None, &opts)?.clustering,
        (None, None) => return Err(InputError::new("give --q or --clusters").into()),
    };
    let target = Target::Observed(clustering.clone());
    let grid = penalty_grid(&args.lambdas, args.lambda_points, args.min_ratio, &data, &target, model, &opts)?;
    let cfg = StarsConfig {
        n_subsamples: args.subsamples,
        subsample_ratio: args.ratio,
        threshold: args.threshold,
        seed: args.control.seed,
    };
    let result = selection::stars(&data, &clustering, &grid, model, &cfg, &opts)?;
    if result.fallback {
        log::warn!("no penalty met the stability threshold; kept the largest");
    }
    io::ensure_dir(&args.out)?;
    let path = args.out.join("stability.csv");
    let mut w = csv::Writer::from_path(&path).with_context(|| format!("cannot write {}", path.display()))?;
    w.write_record(["lambda", "edges", "min_edge_frequency", "instability", "qualifies", "chosen"])?;
    for (i, pt) in result.curve.iter().enumerate() {
        w.write_record([
            pt.lambda.to_string(),
            pt.edges.to_string(),
            pt.min_edge_frequency.to_string(),
            pt.instability.to_string(),
            pt.qualifies.to_string(),
            (i == result.chosen_index).to_string(),
        ])?;
    }
    w.flush()?;
    let fit = &result.full_fits[result.chosen_index];
    let path = files::path_of(&result.full_fits.iter().collect::<Vec<_>>());
    write_model(&args.out, fit, &data, Some(path))?;
    println!("chosen lambda {} ({} edges)", result.lambda, fit.network.edge_count());
    Ok(())
}

/// Implied covariance `C Σ Cᵀ + D` of one observation.
fn implied_covariance(c: &ClusterAssignment, sigma: &DMatrix<f64>, variances: &[f64]) -> DMatrix<f64> {
    let cm = c.one_hot();
    &cm * sigma * cm.transpose() + DMatrix::from_diagonal(&DVector::from_column_slice(variances))
}

pub fn compute_metrics(model: &ModelFile, truth: &TruthFile) -> Result<Vec<(&'static str, f64)>> {
    if model.p != truth.p {
        return Err(InputError::new(format!("model has p={} but truth has p={}", model.p, truth.p)).into());
    }
    let (est_c, true_c) = (model.clustering()?, truth.clustering()?);
    let mut out = vec![("ari", metrics::ari(est_c.labels(), true_c.labels())?)];
    let b = files::from_rows(&model.b, "model b")?;
    let true_b = files::from_rows(&truth.b, "truth b")?;
    if b.shape() == true_b.shape() {
        out.push(("rmse_B", metrics::rmse(&b, &true_b)?));
    } else {
        log::warn!("covariate effects differ in shape; rmse_B skipped");
    }
    let col = |v: Vec<f64>| DMatrix::from_column_slice(v.len(), 1, &v);
    out.push(("rmse_D", metrics::rmse(&col(model.variances()), &col(truth.variances()))?));
    let est_cov = implied_covariance(&est_c, &files::from_rows(&model.sigma, "model sigma")?, &model.variances());
    let true_cov = implied_covariance(&true_c, &files::from_rows(&truth.sigma, "truth sigma")?, &truth.variances());
    out.push(("rmse_fit", metrics::rmse(&est_cov, &true_cov)?));
    if model.q != truth.q {
        log::warn!("cluster counts differ; network metrics skipped");
        return Ok(out);
    }
    let perm = metrics::align_clusters(&est_c, &true_c)?;
    let q = model.q;
    let adjacency = files::from_rows(&truth.adjacency, "truth adjacency")?;
    let aligned = DMatrix::from_fn(q, q, |a, b| adjacency[(perm[a], perm[b])]);
    let support = |edges: &mut dyn Iterator<Item = (usize, usize)>| {
        let mut s = DMatrix::from_element(q, q, false);
        for (a, b) in edges {
            s[(a - 1, b - 1)] = true;
            s[(b - 1, a - 1)] = true;
        }
        s
    };
    if let Some(path) = &model.path {
        let supports: Vec<DMatrix<bool>> = path.iter().map(|pt| support(&mut pt.edges.iter().map(|e| (e[0], e[1])))).collect();
        match metrics::roc_auc(&aligned, &supports) {
            Ok(roc) => out.push(("auc", roc.auc)),
            Err(e) => log::warn!("auc skipped: {e}"),
        }
    }
    let selected = support(&mut model.edges.iter().map(|e| (e.cluster_a, e.cluster_b)));
    out.push(("f1", metrics::f1(&selected, &aligned)?));
    Ok(out)
}

pub fn metrics_cmd(args: &MetricsArgs) -> Result<()> {
    let model = files::read_estimate(&args.model)?;
    let truth: TruthFile = io::read_json(&args.truth)?;
    if truth.schema_version != files::SCHEMA_VERSION {
        return Err(InputError::new(format!("{}: unsupported schema_version", args.truth.display())).into());
    }
    let values = compute_metrics(&model, &truth)?;
    let mut w = csv::Writer::from_path(&args.out).with_context(|| format!("cannot write {}", args.out.display()))?;
    w.write_record(["metric", "value"])?;
    for (name, v) in &values {
        w.write_record([name.to_string(), v.to_string()])?;
        println!("{name}\t{v}");
    }
    w.flush()?;
    Ok(())
}

pub fn experiment_cmd(args: &ExperimentArgs) -> Result<()> {
    let methods = args
        .methods
        .iter()
        .map(|m| Method::from_name(m.trim()).ok_or_else(|| InputError::new(format!("unknown method {m:?}"))))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    let cfg = ExperimentConfig {
        structures: args.structures.iter().map(|&s| structure(s)).collect(),
        ns: args.ns.clone(),
        p: args.p,
        qs: args.qs.clone(),
        replicates: args.replicates,
        seed: args.seed,
        methods,
        kappa_mean: args.zi_mean,
        lambda_points: args.lambda_points,
        fit: FitOptions::default(),
    };
    let rows = experiment::run(&cfg)?;
    if let Some(dir) = args.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        io::ensure_dir(dir)?;
    }
    let mut w = csv::Writer::from_path(&args.out).with_context(|| format!("cannot write {}", args.out.display()))?;
    w.write_record(experiment::CSV_HEADER)?;
    for r in &rows {
        w.write_record([
            r.replicate.to_string(),
            r.structure.to_string(),
            r.n.to_string(),
            r.p.to_string(),
            r.q.to_string(),
            r.method.to_string(),
            r.metric.to_string(),
            r.value.to_string(),
        ])?;
    }
    w.flush()?;
    println!("wrote {} rows to {}", rows.len(), args.out.display());
    Ok(())
}
