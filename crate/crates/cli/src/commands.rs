use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use mixdr_client::api::LR_SCHEMA;
use mixdr_core::classifier::{Family, MixtureClassifier};
use mixdr_core::data::{
    gen_mean_vs_variance, gen_scenario5, gen_waveform, parse_csv, sidecar_path, to_csv_string, LabeledDataset,
    MeanVarConfig, DEFAULT_LABEL_COLUMN,
};
use mixdr_core::dimred::{gmmdrc, tune_lambda, DimRedBasis, KernelParts, MarginalCovariance};
use mixdr_core::gmm::CovarianceModel;
use mixdr_core::pipeline::{default_d_eval, lambda_grid, FitSpec, DEFAULT_G_MAX};
use mixdr_core::viz::{
    axis_names, refit_on_projection, render_boundary, render_contours, render_eigen_table, render_scatter,
    ProjectionFrame, ScatterOptions, DEFAULT_LEVELS,
};
use serde::Serialize;
use serde_json::json;

use crate::config::{Config, Section};
use crate::output::Run;
use crate::{
    remote, Cli, CliError, Command, DatasetKind, FitArgs, GenerateArgs, PlotArgs, PlotKind, ProjectArgs, ServeArgs,
    TuneArgs,
};

pub fn run(cli: Cli) -> Result<(), CliError> {
    let cfg = Config::load(cli.config.as_deref())?;
    match cli.command {
        Command::Generate(a) => generate(&cfg, a),
        Command::Fit(a) => fit(&cfg, a),
        Command::Project(a) => project(&cfg, a),
        Command::TuneLambda(a) => tune(&cfg, a),
        Command::Plot(a) => plot(&cfg, a),
        Command::Serve(a) => serve(&cfg, a),
        Command::Remote(a) => remote::run(&cfg, a),
    }
}

fn print_json(v: &impl Serialize) {
    let mut out = std::io::stdout().lock();
    let _ = writeln!(out, "{}", serde_json::to_string(v).expect("summary serializes"));
}

pub fn parse_marginal(s: &str) -> Result<MarginalCovariance, CliError> {
    serde_json::from_value(json!(s)).map_err(|_| CliError::usage(format!("unknown marginal covariance '{s}'")))
}

pub fn parse_models(names: &[String]) -> Result<Vec<CovarianceModel>, CliError> {
    names
        .iter()
        .map(|m| CovarianceModel::from_str(m.trim()).map_err(|e| CliError::usage(e.to_string())))
        .collect()
}

/// Reads a labelled CSV and records its digest.
fn read_dataset(run: &mut Run, path: &Path, label_column: &str) -> Result<LabeledDataset, CliError> {
    let text = run.read(path)?;
    let mut ds = parse_csv(&text, label_column)?;
    ds.provenance.source = Some(path.display().to_string());
    Ok(ds)
}

fn read_classifier(run: &mut Run, path: &Path) -> Result<MixtureClassifier, CliError> {
    Ok(MixtureClassifier::from_json(&run.read(path)?)?)
}

fn check_dim(c: &MixtureClassifier, ds: &LabeledDataset) -> Result<(), CliError> {
    if c.dim() != ds.p() {
        return Err(mixdr_core::Error::DimensionMismatch {
            expected: c.dim(),
            found: ds.p(),
        }
        .into());
    }
    Ok(())
}

fn generate(cfg: &Config, a: GenerateArgs) -> Result<(), CliError> {
    let mut s = cfg.section("generate", &["dataset", "n", "seed", "out", "mu_shift", "var_ratio", "noise_dims"])?;
    let dataset: DatasetKind = s.required("dataset", a.dataset)?;
    let default_n = match dataset {
        DatasetKind::Waveform => 500,
        DatasetKind::Scenario5 => 200,
        DatasetKind::Meanvar => 400,
    };
    let n = s.or("n", a.n, default_n)?;
    let seed = s.or("seed", a.seed, 0u64)?;
    let out: PathBuf = s.required("out", a.out)?;
    let ds = match dataset {
        DatasetKind::Waveform => gen_waveform(n, seed)?,
        DatasetKind::Scenario5 => gen_scenario5(n, seed)?,
        DatasetKind::Meanvar => {
            let d = MeanVarConfig::default();
            let mv = MeanVarConfig {
                mu_shift: s.or("mu_shift", a.mu_shift, d.mu_shift)?,
                var_ratio: s.or("var_ratio", a.var_ratio, d.var_ratio)?,
                noise_dims: s.or("noise_dims", a.noise_dims, d.noise_dims)?,
            };
            gen_mean_vs_variance(n, seed, &mv)?
        }
    };
    let mut run = Run::new("generate", s.resolved(), Some(seed));
    run.write(&out, to_csv_string(&ds)?.as_bytes())?;
    let provenance = serde_json::to_string_pretty(&ds.provenance).expect("provenance serializes");
    run.write(&sidecar_path(&out), provenance.as_bytes())?;
    run.finish()?;
    print_json(&json!({"n": ds.n(), "p": ds.p(), "classes": ds.classes(), "out": out}));
    Ok(())
}

fn fit_spec(s: &mut Section, a: &crate::FitOptions, seed: Option<u64>) -> Result<FitSpec, CliError> {
    let family: String = s.or("family", a.family.clone(), "mclustda".into())?;
    let models = s.opt("models", a.models.clone())?;
    Ok(FitSpec {
        family: Family::from_str(&family).map_err(|e| CliError::usage(e.to_string()))?,
        models: models.as_deref().map(parse_models).transpose()?,
        g_max: s.or("gmax", a.gmax, DEFAULT_G_MAX)?,
        seed: s.or("seed", seed, 0)?,
        ..FitSpec::default()
    })
}

fn fit(cfg: &Config, a: FitArgs) -> Result<(), CliError> {
    let mut s = cfg.section(
        "fit",
        &["data", "labels_col", "family", "models", "gmax", "seed", "out", "selection"],
    )?;
    let data: PathBuf = s.required("data", a.data)?;
    let labels_col = s.or("labels_col", a.labels_col, DEFAULT_LABEL_COLUMN.to_string())?;
    let spec = fit_spec(&mut s, &a.fit, a.seed)?;
    let out: PathBuf = s.required("out", a.out)?;
    let selection: Option<PathBuf> = s.opt("selection", a.selection)?;

    let mut run = Run::new("fit", s.resolved(), Some(spec.seed));
    let ds = read_dataset(&mut run, &data, &labels_col)?;
    let outcome = spec.fit(&ds)?;
    tracing::info!(bic = outcome.bic, "fit complete");
    run.write(&out, outcome.classifier.to_json()?.as_bytes())?;
    if let Some(path) = &selection {
        let table = json!({"schema": "mixdr.selection/v1", "bic": outcome.bic, "rows": outcome.selection});
        run.write(path, serde_json::to_string_pretty(&table).expect("table serializes").as_bytes())?;
    }
    run.finish()?;
    let c = &outcome.classifier;
    print_json(&json!({
        "family": c.family,
        "classes": c.classes,
        "models": c.class_models.iter().map(|m| m.model.name()).collect::<Vec<_>>(),
        "components": c.class_models.iter().map(|m| m.n_components()).collect::<Vec<_>>(),
        "bic": outcome.bic,
    }));
    Ok(())
}

fn check_lambda(lambda: f64) -> Result<f64, CliError> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(CliError::usage(format!("lambda must lie in [0, 1], got {lambda}")));
    }
    Ok(lambda)
}

fn project(cfg: &Config, a: ProjectArgs) -> Result<(), CliError> {
    let mut s = cfg.section(
        "project",
        &["model", "data", "labels_col", "lambda", "marginal", "centered", "out", "proj"],
    )?;
    let model: PathBuf = s.required("model", a.model)?;
    let data: PathBuf = s.required("data", a.data)?;
    let labels_col = s.or("labels_col", a.labels_col, DEFAULT_LABEL_COLUMN.to_string())?;
    let lambda = check_lambda(s.or("lambda", a.lambda, 0.5)?)?;
    let marginal = parse_marginal(&s.or("marginal", a.marginal, "full".to_string())?)?;
    let centered = s.or("centered", a.centered.then_some(true), false)?;
    let out: PathBuf = s.required("out", a.out)?;
    let proj: Option<PathBuf> = s.opt("proj", a.proj)?;

    let mut run = Run::new("project", s.resolved(), None);
    let c = read_classifier(&mut run, &model)?;
    let ds = read_dataset(&mut run, &data, &labels_col)?;
    check_dim(&c, &ds)?;
    let parts = KernelParts::from_classifier(&c, &ds.x, marginal)?;
    let basis = gmmdrc(&parts, lambda)?;
    run.write(&out, basis.to_json()?.as_bytes())?;
    if let Some(path) = &proj {
        let frame = ProjectionFrame::from_basis(&basis, &ds.x, &ds.y, centered)?;
        run.write(path, frame.to_csv().as_bytes())?;
    }
    run.finish()?;
    print_json(&json!({"lambda": lambda, "d": basis.d(), "eigenvalues": basis.eigenvalues}));
    Ok(())
}

#[derive(Serialize)]
struct TraceFile {
    schema: &'static str,
    d_eval: usize,
    grid: Vec<f64>,
    lr_values: Vec<f64>,
    argmax_lambda: f64,
}

fn tune(cfg: &Config, a: TuneArgs) -> Result<(), CliError> {
    let mut s = cfg.section(
        "tune_lambda",
        &["model", "data", "labels_col", "grid_steps", "d_eval", "marginal", "seed", "out"],
    )?;
    let model: PathBuf = s.required("model", a.model)?;
    let data: PathBuf = s.required("data", a.data)?;
    let labels_col = s.or("labels_col", a.labels_col, DEFAULT_LABEL_COLUMN.to_string())?;
    let steps = s.or("grid_steps", a.grid_steps, 21usize)?;
    let d_eval: Option<usize> = s.opt("d_eval", a.d_eval)?;
    let marginal = parse_marginal(&s.or("marginal", a.marginal, "full".to_string())?)?;
    let seed = s.or("seed", a.seed, 0u64)?;
    let out: PathBuf = s.required("out", a.out)?;
    let grid = lambda_grid(steps).map_err(|e| CliError::usage(e.to_string()))?;

    let mut run = Run::new("tune-lambda", s.resolved(), Some(seed));
    let c = read_classifier(&mut run, &model)?;
    let ds = read_dataset(&mut run, &data, &labels_col)?;
    check_dim(&c, &ds)?;
    let parts = KernelParts::from_classifier(&c, &ds.x, marginal)?;
    let d = gmmdrc(&parts, 0.5)?.d();
    let d_eval = d_eval.unwrap_or(default_d_eval(d));
    if d_eval == 0 || d_eval > d {
        return Err(CliError::usage(format!("--d-eval must lie in 1..={d}, got {d_eval}")));
    }
    let class_idx = c.class_indices(&ds.y)?;
    let em = FitSpec {
        seed,
        ..FitSpec::default()
    }
    .projection_em();
    let trace = tune_lambda(&parts, &ds.x, &class_idx, &c, &grid, d_eval, &em)?;
    let file = TraceFile {
        schema: LR_SCHEMA,
        d_eval,
        grid: trace.grid,
        lr_values: trace.lr_values,
        argmax_lambda: trace.argmax_lambda,
    };
    run.write(&out, serde_json::to_string_pretty(&file).expect("trace serializes").as_bytes())?;
    run.finish()?;
    print_json(&json!({"argmax_lambda": file.argmax_lambda, "d_eval": d_eval}));
    Ok(())
}

/// Reads a projection CSV written by `project --proj`.
fn read_frame(run: &mut Run, path: &Path, basis: Option<&DimRedBasis>) -> Result<ProjectionFrame, CliError> {
    let ds = parse_csv(&run.read(path)?, "class")?;
    let mut names = ds.feature_names.clone();
    if let Some(b) = basis {
        for (name, labelled) in names.iter_mut().zip(axis_names(b)) {
            *name = labelled;
        }
    }
    Ok(ProjectionFrame {
        z: ds.x,
        labels: ds.y,
        axis_names: names,
        centered: false,
    })
}

fn plot(cfg: &Config, a: PlotArgs) -> Result<(), CliError> {
    let mut s = cfg.section(
        "plot",
        &["proj", "model", "basis", "data", "labels_col", "kind", "grid", "seed", "out"],
    )?;
    let kind: PlotKind = s.or("kind", a.kind, PlotKind::Scatter)?;
    let proj: Option<PathBuf> = s.opt("proj", a.proj)?;
    let model: Option<PathBuf> = s.opt("model", a.model)?;
    let basis_path: Option<PathBuf> = s.opt("basis", a.basis)?;
    let data: Option<PathBuf> = s.opt("data", a.data)?;
    let labels_col = s.or("labels_col", a.labels_col, DEFAULT_LABEL_COLUMN.to_string())?;
    let grid = s.or("grid", a.grid, mixdr_server::DEFAULT_GRID)?;
    let seed = s.or("seed", a.seed, 0u64)?;
    let out: PathBuf = s.required("out", a.out)?;

    let mut run = Run::new("plot", s.resolved(), Some(seed));
    let basis = match &basis_path {
        Some(p) => Some(DimRedBasis::from_json(&run.read(p)?)?),
        None => None,
    };
    let bytes = match kind {
        PlotKind::Eigentable => {
            let basis = basis.ok_or_else(|| CliError::usage("--basis is required for an eigentable"))?;
            let names = match &data {
                Some(p) => read_dataset(&mut run, p, &labels_col)?.feature_names,
                None => (1..=basis.dim()).map(|j| format!("x{j}")).collect(),
            };
            let table = render_eigen_table(&basis, &names)?;
            if out.extension().is_some_and(|e| e == "txt") {
                table.to_text()
            } else {
                table.to_svg()
            }
        }
        PlotKind::Scatter => {
            let proj = proj.ok_or_else(|| CliError::usage("--proj is required"))?;
            let frame = read_frame(&mut run, &proj, basis.as_ref())?;
            render_scatter(&frame, &ScatterOptions::default())?
        }
        PlotKind::Contours | PlotKind::Boundary => {
            let proj = proj.ok_or_else(|| CliError::usage("--proj is required"))?;
            let model = model.ok_or_else(|| CliError::usage("--model is required for contours and boundary"))?;
            let frame = read_frame(&mut run, &proj, basis.as_ref())?;
            let c = read_classifier(&mut run, &model)?;
            let em = FitSpec {
                seed,
                ..FitSpec::default()
            }
            .projection_em();
            let c2d = refit_on_projection(&c, &frame, &em)?;
            if kind == PlotKind::Contours {
                render_contours(&frame, &c2d, &DEFAULT_LEVELS)?
            } else {
                if !(mixdr_server::MIN_GRID..=mixdr_server::MAX_GRID).contains(&grid) {
                    return Err(CliError::usage(format!(
                        "--grid must lie in {}..={}, got {grid}",
                        mixdr_server::MIN_GRID,
                        mixdr_server::MAX_GRID
                    )));
                }
                render_boundary(&frame, &c2d, grid)?
            }
        }
    };
    run.write(&out, bytes.as_bytes())?;
    run.finish()?;
    Ok(())
}

fn serve(cfg: &Config, a: ServeArgs) -> Result<(), CliError> {
    let mut s = cfg.section(
        "serve",
        &["model", "data", "labels_col", "host", "port", "seed", "marginal", "cors_origins", "workers"],
    )?;
    let model: Option<PathBuf> = s.opt("model", a.model)?;
    let data: Option<PathBuf> = s.opt("data", a.data)?;
    let labels_col = s.or("labels_col", a.labels_col, DEFAULT_LABEL_COLUMN.to_string())?;
    let host = s.or("host", a.host, "127.0.0.1".to_string())?;
    let port = s.or("port", a.port, 8080u16)?;
    let seed = s.or("seed", a.seed, 0u64)?;
    let marginal = parse_marginal(&s.or("marginal", a.marginal, "full".to_string())?)?;
    let flag_origins = (!a.cors_origins.is_empty()).then_some(a.cors_origins);
    let cors_origins = s.or("cors_origins", flag_origins, Vec::new())?;
    let mut config = mixdr_server::ServerConfig {
        cors_origins,
        ..Default::default()
    };
    if let Some(w) = s.opt("workers", a.workers)? {
        config.fit_workers = w;
    }

    let state = mixdr_server::AppState::new(config);
    let preloaded = match (model, data) {
        (Some(m), Some(d)) => {
            let mut run = Run::new("serve", s.resolved(), Some(seed));
            let c = read_classifier(&mut run, &m)?;
            let ds = read_dataset(&mut run, &d, &labels_col)?;
            check_dim(&c, &ds)?;
            let spec = FitSpec {
                family: c.family,
                seed,
                marginal,
                ..FitSpec::default()
            };
            Some(state.insert_fitted(ds, c, spec)?)
        }
        (None, None) => None,
        _ => return Err(CliError::usage("--model and --data go together")),
    };

    let rt = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(|e| CliError::new(crate::Exit::Internal, "internal", e.to_string()))?;
    rt.block_on(async move {
        let addr = format!("{host}:{port}");
        let listener = tokio::net::TcpListener::bind(&addr)
            .await
            .map_err(|e| CliError::new(crate::Exit::Input, "io", format!("bind {addr}: {e}")))?;
        let local = listener
            .local_addr()
            .map_err(|e| CliError::new(crate::Exit::Internal, "internal", e.to_string()))?;
        {
            let mut out = std::io::stdout().lock();
            let _ = writeln!(out, "listening on http://{local}");
            if let Some(id) = &preloaded {
                let _ = writeln!(out, "session {id}");
            }
            let _ = out.flush();
        }
        tracing::info!(%local, "serving");
        let shutdown = async {
            let _ = tokio::signal::ctrl_c().await;
        };
        mixdr_server::serve(listener, state, shutdown)
            .await
            .map_err(|e| CliError::new(crate::Exit::Internal, "internal", e.to_string()))
    })
}
