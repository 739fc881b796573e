use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use cctsne::affinities::{data_affinities, PairwiseAffinityMatrix};
use cctsne::baseline::{class_space_affinities, run_baseline, sweep_baseline};
use cctsne::classifier::MlpConfig;
use cctsne::io::{self, EmbeddingDocument, EmbeddingMeta, FeatureOptions};
use cctsne::metrics::{Method, MetricsReport};
use cctsne::optimizer::{penalty_stable_learning_rate, run, sweep_alpha};
use cctsne::synthetic::generate_classified;
use cctsne::tsne::run_vanilla;
use cctsne::{ClassProbabilityMatrix, EmbeddingState, FeatureMatrix, Hyperparams};
use cctsne_service::{AppState, Preload, ServiceConfig};
use ndarray::Array2;
use serde::Serialize;

use crate::args::{EmbedArgs, MethodArg, MetricsArgs, RunArgs, ServeArgs, SweepArgs, SynthArgs};
use crate::fail::{Context, Failure};

const WARM_START_NOTICE: &str = "warm start: early exaggeration disabled";

fn method_of(m: MethodArg) -> Method {
    match m {
        MethodArg::Cctsne => Method::Cctsne,
        MethodArg::Baseline => Method::Baseline,
        MethodArg::Vanilla => Method::Vanilla,
    }
}

/// Loaded inputs of an `embed` or `sweep` run.
struct Inputs {
    features: FeatureMatrix,
    probs: Option<ClassProbabilityMatrix>,
    init: Option<EmbeddingDocument>,
    svg_labels: Option<Vec<usize>>,
}

impl Inputs {
    fn load(run: &RunArgs) -> Result<Self, Failure> {
        let features = io::load_features(&run.features, FeatureOptions { standardize: run.standardize }).at(&run.features)?;
        let probs = match &run.probs {
            Some(p) => Some(io::load_probabilities(p).at(p)?),
            None if run.method == MethodArg::Vanilla => None,
            None => return Err(Failure::invalid(format!("--probs is required for --method {}", method_of(run.method)))),
        };
        if let Some(p) = &probs {
            if p.n() != features.n() {
                return Err(Failure::invalid(format!("--probs has {} rows but --features has {}", p.n(), features.n())));
            }
        }
        let init = match &run.init {
            Some(path) => {
                let doc = io::load_embedding(path).at(path)?;
                if doc.points.len() != features.n() {
                    return Err(Failure::invalid(format!("--init has {} points but --features has {}", doc.points.len(), features.n())));
                }
                Some(doc)
            }
            None => None,
        };
        let svg_labels = match &run.labels {
            Some(path) => {
                let labels = io::load_labels(path).at(path)?;
                if labels.len() != features.n() {
                    return Err(Failure::invalid(format!("--labels has {} rows but --features has {}", labels.len(), features.n())));
                }
                Some(labels)
            }
            None => None,
        };
        Ok(Self { features, probs, init, svg_labels })
    }

    fn n(&self) -> usize {
        self.features.n()
    }

    fn class_names(&self) -> Vec<String> {
        self.probs.as_ref().map(|p| p.class_names().to_vec()).unwrap_or_default()
    }

    fn labels_for_plot(&self) -> Vec<usize> {
        match (&self.svg_labels, &self.probs) {
            (Some(l), _) => l.clone(),
            (None, Some(p)) => p.argmax_labels(),
            (None, None) => vec![0; self.n()],
        }
    }

    fn probs(&self) -> &ClassProbabilityMatrix {
        self.probs.as_ref().expect("checked in load")
    }

    /// Warm-start state for the landmark method. A landmark-free document
    /// starts the landmarks at the origin.
    fn init_state(&self) -> Result<Option<EmbeddingState>, Failure> {
        let Some(doc) = &self.init else { return Ok(None) };
        let m = self.probs().m();
        let landmarks = match doc.landmarks.len() {
            0 => Array2::zeros((m, 2)),
            k if k == m => doc.landmarks_array(),
            k => return Err(Failure::invalid(format!("--init has {k} landmarks but --probs has {m} classes"))),
        };
        Ok(Some(EmbeddingState::from_positions(doc.points_array(), landmarks)?))
    }

    fn init_points(&self) -> Option<Array2<f64>> {
        self.init.as_ref().map(|d| d.points_array())
    }
}

fn hyperparams(run: &RunArgs, alpha: f64, lambda: f64, inputs: &Inputs) -> Result<Hyperparams, Failure> {
    let mut h = Hyperparams {
        alpha,
        lambda,
        perplexity: run.perplexity,
        iterations: run.iters,
        learning_rate: run.lr,
        seed: run.seed,
        ..Hyperparams::default()
    };
    h.validate_for(inputs.n()).map_err(|e| Failure::invalid(flag_message(e)))?;
    if run.stable_lr && run.method == MethodArg::Cctsne {
        let bound = penalty_stable_learning_rate(inputs.probs().values(), lambda, h.momentum_early);
        if bound < h.learning_rate {
            log::info!("learning rate lowered from {} to {bound:.4} for lambda {lambda}", h.learning_rate);
            h.learning_rate = bound;
        }
    }
    Ok(h)
}

/// Rewrites hyperparameter names into the flags that set them.
fn flag_message(e: cctsne::Error) -> String {
    match e {
        cctsne::Error::InvalidHyperparameter { name, reason } => {
            let flag = match name {
                "iterations" => "iters",
                "learning_rate" => "lr",
                other => other,
            };
            format!("invalid value for --{flag}: {reason}")
        }
        other => other.to_string(),
    }
}

fn document(method: MethodArg, h: &Hyperparams, iteration: usize, points: &Array2<f64>, landmarks: &Array2<f64>, names: &[String]) -> Result<EmbeddingDocument, Failure> {
    let meta = EmbeddingMeta { method: method_of(method), alpha: h.alpha, lambda: h.lambda, seed: h.seed, iteration };
    Ok(EmbeddingDocument::new(meta, points.view(), landmarks.view(), names)?)
}

fn write_outputs(doc: &EmbeddingDocument, out: &Path, svg: Option<&Path>, inputs: &Inputs) -> Result<(), Failure> {
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Failure::Other(format!("{}: {e}", dir.display())))?;
    }
    io::save_embedding(out, doc).map_err(|e| Failure::Other(format!("{}: {e}", out.display())))?;
    if let Some(svg) = svg {
        let plot = io::render_scatter_svg(doc.points_array().view(), doc.landmarks_array().view(), &inputs.labels_for_plot(), &doc.class_names())?;
        fs::write(svg, plot).map_err(|e| Failure::Other(format!("{}: {e}", svg.display())))?;
    }
    log::info!("wrote {}", out.display());
    Ok(())
}

fn affinities(inputs: &Inputs, h: &Hyperparams) -> Result<PairwiseAffinityMatrix, Failure> {
    log::info!("computing affinities for n={} d={} at perplexity {}", inputs.n(), inputs.features.d(), h.perplexity);
    Ok(data_affinities(&inputs.features, h.perplexity)?)
}

fn no_landmarks() -> Array2<f64> {
    Array2::zeros((0, 2))
}

pub fn embed(args: EmbedArgs) -> Result<(), Failure> {
    let run_args = &args.run;
    let inputs = Inputs::load(run_args)?;
    let h = hyperparams(run_args, args.alpha, run_args.lambda, &inputs)?;
    if inputs.init.is_some() {
        log::info!("{WARM_START_NOTICE}");
    }
    let pd = affinities(&inputs, &h)?;
    let doc = match run_args.method {
        MethodArg::Cctsne => {
            let init = inputs.init_state()?;
            let out = run(&pd, inputs.probs().values(), &h, init.as_ref())?;
            if let Some(last) = out.trace.last() {
                log::info!("final cost C_d={:.6} C_c={:.6}", last.c_d, last.c_c);
            }
            document(run_args.method, &h, out.state.iteration, &out.state.points, &out.state.landmarks, &inputs.class_names())?
        }
        MethodArg::Baseline => {
            let pprob = class_space_affinities(inputs.probs(), h.perplexity)?;
            let init = inputs.init_points();
            let out = run_baseline(&pd, &pprob, &h, init.as_ref().map(|p| p.view()))?;
            document(run_args.method, &h, h.iterations, &out.points, &no_landmarks(), &[])?
        }
        MethodArg::Vanilla => {
            let init = inputs.init_points();
            let out = run_vanilla(&pd, &h, init.as_ref().map(|p| p.view()))?;
            document(run_args.method, &h, h.iterations, &out.points, &no_landmarks(), &[])?
        }
    };
    write_outputs(&doc, &args.out, args.svg.as_deref(), &inputs)
}

/// `manifest.json` of a sweep: runs in execution order and what each started from.
#[derive(Debug, Serialize)]
struct Manifest {
    method: Method,
    /// `"alpha"` for chained warm starts, `"lambda"` for independent runs.
    sweep: &'static str,
    seed: u64,
    iterations: usize,
    entries: Vec<ManifestEntry>,
}

#[derive(Debug, Serialize)]
struct ManifestEntry {
    index: usize,
    alpha: f64,
    lambda: f64,
    file: String,
    /// `"random"`, the `--init` path, or the file of the previous entry.
    init: String,
}

pub fn sweep(args: SweepArgs) -> Result<(), Failure> {
    let run_args = &args.run;
    let inputs = Inputs::load(run_args)?;
    fs::create_dir_all(&args.out_dir).map_err(|e| Failure::Other(format!("{}: {e}", args.out_dir.display())))?;
    let first_init = run_args.init.as_ref().map_or_else(|| "random".to_string(), |p| p.display().to_string());
    if inputs.init.is_some() {
        log::info!("{WARM_START_NOTICE}");
    }

    let (sweep_kind, runs) = match (&args.alphas, &args.lambdas) {
        (Some(a), None) => ("alpha", a.0.iter().map(|&alpha| (alpha, run_args.lambda)).collect::<Vec<_>>()),
        (None, Some(l)) => ("lambda", l.0.iter().map(|&lambda| (args.alpha, lambda)).collect()),
        _ => return Err(Failure::invalid("give either --alphas or --lambdas")),
    };
    if sweep_kind == "alpha" && run_args.method == MethodArg::Vanilla {
        return Err(Failure::invalid("--method vanilla does not depend on alpha; use embed"));
    }
    if sweep_kind == "lambda" && run_args.method != MethodArg::Cctsne {
        return Err(Failure::invalid("--lambdas only applies to --method cctsne"));
    }

    let base = hyperparams(run_args, runs[0].0, runs[0].1, &inputs)?;
    let pd = affinities(&inputs, &base)?;
    let names = inputs.class_names();
    let mut docs = Vec::with_capacity(runs.len());
    match (sweep_kind, run_args.method) {
        ("alpha", MethodArg::Cctsne) => {
            let alphas: Vec<f64> = runs.iter().map(|r| r.0).collect();
            let init = inputs.init_state()?;
            for cell in sweep_alpha(&pd, inputs.probs().values(), &base, &alphas, init.as_ref())? {
                let h = Hyperparams { alpha: cell.alpha, ..base.clone() };
                let s = &cell.output.state;
                docs.push(document(run_args.method, &h, s.iteration, &s.points, &s.landmarks, &names)?);
            }
        }
        ("alpha", _) => {
            let alphas: Vec<f64> = runs.iter().map(|r| r.0).collect();
            let pprob = class_space_affinities(inputs.probs(), base.perplexity)?;
            let init = inputs.init_points();
            for (alpha, out) in sweep_baseline(&pd, &pprob, &base, &alphas, init.as_ref().map(|p| p.view()))? {
                let h = Hyperparams { alpha, ..base.clone() };
                docs.push(document(run_args.method, &h, h.iterations, &out.points, &no_landmarks(), &[])?);
            }
        }
        _ => {
            let init = inputs.init_state()?;
            for &(alpha, lambda) in &runs {
                let h = hyperparams(run_args, alpha, lambda, &inputs)?;
                let out = run(&pd, inputs.probs().values(), &h, init.as_ref())
                    .map_err(|e| cctsne::Error::SweepFailed { alpha, source: Box::new(e) })?;
                let s = &out.state;
                docs.push(document(run_args.method, &h, s.iteration, &s.points, &s.landmarks, &names)?);
            }
        }
    }

    let mut entries: Vec<ManifestEntry> = Vec::with_capacity(docs.len());
    for (index, doc) in docs.iter().enumerate() {
        let file = match sweep_kind {
            "alpha" => format!("{index:02}_alpha_{}.json", doc.meta.alpha),
            _ => format!("{index:02}_lambda_{}.json", doc.meta.lambda),
        };
        let svg = args.svg.then(|| args.out_dir.join(file.replace(".json", ".svg")));
        write_outputs(doc, &args.out_dir.join(&file), svg.as_deref(), &inputs)?;
        let init = match (sweep_kind, entries.last()) {
            ("alpha", Some(prev)) => prev.file.clone(),
            _ => first_init.clone(),
        };
        entries.push(ManifestEntry { index, alpha: doc.meta.alpha, lambda: doc.meta.lambda, file, init });
    }
    let manifest = Manifest { method: method_of(run_args.method), sweep: sweep_kind, seed: base.seed, iterations: base.iterations, entries };
    let path = args.out_dir.join("manifest.json");
    let text = serde_json::to_string_pretty(&manifest).map_err(|e| Failure::Other(e.to_string()))?;
    fs::write(&path, text).map_err(|e| Failure::Other(format!("{}: {e}", path.display())))?;
    log::info!("wrote {}", path.display());
    Ok(())
}

/// One output row of `metrics`.
struct MetricsRow {
    file: String,
    report: MetricsReport,
}

pub fn metrics(args: MetricsArgs) -> Result<(), Failure> {
    let features = io::load_features(&args.features, FeatureOptions { standardize: args.standardize }).at(&args.features)?;
    let n = features.n();
    let labels = match (&args.labels, &args.probs) {
        (Some(path), _) => io::load_labels(path).at(path)?,
        (None, Some(path)) => io::load_probabilities(path).at(path)?.argmax_labels(),
        (None, None) => return Err(Failure::invalid("give --probs or --labels")),
    };
    if labels.len() != n {
        return Err(Failure::invalid(format!("{} labels for {n} feature rows", labels.len())));
    }

    let mut rows = Vec::with_capacity(args.embeddings.len());
    for path in &args.embeddings {
        let doc = io::load_embedding(path).at(path)?;
        if doc.points.len() != n {
            return Err(Failure::invalid(format!("{}: {} points but --features has {n} rows", path.display(), doc.points.len())));
        }
        let low = doc.points_array();
        let report = MetricsReport::evaluate(doc.meta.method, doc.meta.alpha, doc.meta.seed, features.values(), low.view(), &labels, args.k).at(path)?;
        log::info!(
            "{}: M_t={:.4} M_c={:.4} CCM={:.4}",
            path.display(),
            report.trustworthiness,
            report.continuity,
            report.ccm
        );
        rows.push(MetricsRow { file: path.display().to_string(), report });
    }

    let mut w = csv::Writer::from_path(&args.out).map_err(|e| Failure::Other(format!("{}: {e}", args.out.display())))?;
    let csv_err = |e: csv::Error| Failure::Other(e.to_string());
    w.write_record(["file", "method", "alpha", "seed", "k", "trustworthiness", "continuity", "ccm"]).map_err(csv_err)?;
    for r in &rows {
        let m = &r.report;
        w.write_record([
            r.file.clone(),
            m.method.to_string(),
            m.alpha.to_string(),
            m.seed.to_string(),
            m.k.to_string(),
            m.trustworthiness.to_string(),
            m.continuity.to_string(),
            m.ccm.to_string(),
        ])
        .map_err(csv_err)?;
    }
    w.flush().map_err(|e| Failure::Other(e.to_string()))?;
    log::info!("wrote {}", args.out.display());
    Ok(())
}

#[derive(Debug, Serialize)]
struct SynthSummary {
    seed: u64,
    n: usize,
    n_classes: usize,
    test_accuracy: f64,
}

pub fn synth(args: SynthArgs) -> Result<(), Failure> {
    let data = generate_classified(args.seed, &MlpConfig::default())?;
    let dir = &args.out_dir;
    fs::create_dir_all(dir).map_err(|e| Failure::Other(format!("{}: {e}", dir.display())))?;
    let write_err = |e: cctsne::Error| Failure::Other(e.to_string());
    io::write_features(&dir.join("features.csv"), &data.data.features).map_err(write_err)?;
    io::write_labels(&dir.join("labels_true.csv"), &data.data.labels).map_err(write_err)?;
    io::write_labels(&dir.join("labels_argmax.csv"), &data.probabilities.argmax_labels()).map_err(write_err)?;
    io::write_probabilities(&dir.join("probabilities.csv"), &data.probabilities).map_err(write_err)?;
    io::write_labels(&dir.join("test_indices.csv"), &data.test_indices).map_err(write_err)?;
    let summary = SynthSummary {
        seed: args.seed,
        n: data.data.features.n(),
        n_classes: data.probabilities.m(),
        test_accuracy: data.test_accuracy,
    };
    let text = serde_json::to_string_pretty(&summary).map_err(|e| Failure::Other(e.to_string()))?;
    fs::write(dir.join("summary.json"), text).map_err(|e| Failure::Other(e.to_string()))?;
    log::info!("test accuracy: {:.4}", data.test_accuracy);
    log::info!("wrote synthetic dataset to {}", dir.display());
    Ok(())
}

fn load_preload(args: &ServeArgs) -> Result<Preload, Failure> {
    let features = io::load_features(&args.features, FeatureOptions { standardize: args.standardize }).at(&args.features)?;
    let n = features.n();
    let probabilities = args.probs.as_ref().map(|p| io::load_probabilities(p).at(p)).transpose()?;
    if let Some(p) = &probabilities {
        if p.n() != n {
            return Err(Failure::invalid(format!("--probs has {} rows but --features has {n}", p.n())));
        }
    }
    let truth = args.labels.as_ref().map(|p| io::load_labels(p).at(p)).transpose()?;
    if let Some(t) = &truth {
        if t.len() != n {
            return Err(Failure::invalid(format!("--labels has {} rows but --features has {n}", t.len())));
        }
    }
    let test_indices = args.test_indices.as_ref().map(|p| io::load_labels(p).at(p)).transpose()?;
    if let Some(&bad) = test_indices.iter().flatten().find(|&&i| i >= n) {
        return Err(Failure::invalid(format!("--test-indices contains {bad}, outside 0..{n}")));
    }
    Ok(Preload { features, probabilities, truth, test_indices })
}

async fn shutdown_signal() {
    let ctrl_c = async {
        tokio::signal::ctrl_c().await.ok();
    };
    #[cfg(unix)]
    let term = async {
        match tokio::signal::unix::signal(tokio::signal::unix::SignalKind::terminate()) {
            Ok(mut s) => {
                s.recv().await;
            }
            Err(_) => std::future::pending::<()>().await,
        }
    };
    #[cfg(not(unix))]
    let term = std::future::pending::<()>();
    tokio::select! {
        _ = ctrl_c => {}
        _ = term => {}
    }
    log::info!("shutting down");
}

pub fn serve(args: ServeArgs) -> Result<(), Failure> {
    let preload = load_preload(&args)?;
    let addr = format!("{}:{}", args.host, args.port);
    let listener = match std::net::TcpListener::bind(&addr) {
        Ok(l) => l,
        Err(e) if e.kind() == std::io::ErrorKind::AddrInUse => return Err(Failure::PortInUse(format!("{addr} is already in use"))),
        Err(e) => return Err(Failure::invalid(format!("cannot bind {addr}: {e}"))),
    };
    listener.set_nonblocking(true).map_err(|e| Failure::Other(e.to_string()))?;

    let config = ServiceConfig {
        preload: Some(Arc::new(preload)),
        data_dir: Some(PathBuf::from(&args.data_dir)),
        frame_every: args.frame_every as usize,
        hyperparams: Hyperparams { iterations: args.iters, ..Hyperparams::default() },
        ..ServiceConfig::default()
    };
    let runtime = tokio::runtime::Builder::new_multi_thread().enable_all().build().map_err(|e| Failure::Other(e.to_string()))?;
    runtime.block_on(async move {
        let listener = tokio::net::TcpListener::from_std(listener).map_err(|e| Failure::Other(e.to_string()))?;
        let local = listener.local_addr().map_err(|e| Failure::Other(e.to_string()))?;
        let state = AppState::restore(config).map_err(|e| Failure::Other(format!("{}: {e}", args.data_dir.display())))?;
        log::info!("listening on http://{local}");
        cctsne_service::serve(listener, state, shutdown_signal()).await.map_err(|e| Failure::Other(e.to_string()))
    })?;
    // Jobs still running on the blocking pool are abandoned; their sessions were flushed above.
    runtime.shutdown_background();
    Ok(())
}
