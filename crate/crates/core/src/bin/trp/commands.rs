use std::fs::{self, File};
use std::io::BufReader;
use std::path::{Path, PathBuf};

use serde_json::json;
use trp_core::artifact::TrainedModel;
use trp_core::eval::{self, EvalConfig, EvalError, MetricsReport};
use trp_core::graph::{read_edge_list, read_feature_matrix, GraphError, TemporalGraph};
use trp_core::ingest::{self, IngestConfig, TermLexicon, WindowSpec};
use trp_core::model::ModelConfig;
use trp_core::parallel::Workers;
use trp_core::synthetic::{self, SynthConfig};
use trp_core::train::{self, TrainConfig, TrainError};

use crate::args::*;
use crate::manifest::{hash_inputs, RunManifest};
use crate::{write_file, write_json, Failure};

fn absolute(p: &Path) -> Result<PathBuf, Failure> {
    std::path::absolute(p).map_err(|e| Failure::input(format!("{}: {e}", p.display())))
}

fn from_train(e: TrainError) -> Failure {
    match e {
        TrainError::Diverged { ref norms, .. } => {
            let detail: Vec<String> = norms.iter().map(|(n, v)| format!("{n}={v:.3e}")).collect();
            Failure::numeric(format!("{e}\nparameter norms: {}", detail.join(" ")))
        }
        e => Failure::input(e.to_string()),
    }
}

fn from_eval(e: EvalError) -> Failure {
    match e {
        EvalError::Train(t) => from_train(t),
        EvalError::AllDiverged(_) => Failure::numeric(e.to_string()),
        e => Failure::input(e.to_string()),
    }
}

fn summary(g: &TemporalGraph) -> String {
    let (nodes, edges) = g.last().map_or((0, 0), |w| (w.node_count(), w.edge_count()));
    format!("windows {} nodes {nodes} edges {edges}", g.len())
}

fn load_graph(dir: &Path) -> Result<TemporalGraph, Failure> {
    TemporalGraph::load(dir).map_err(|e| Failure::input(format!("graph {}: {e}", dir.display())))
}

fn load_model(path: &Path) -> Result<TrainedModel, Failure> {
    TrainedModel::load(path).map_err(|e| Failure::input(format!("checkpoint {}: {e}", path.display())))
}

fn open(path: &Path) -> Result<BufReader<File>, Failure> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| Failure::input(format!("{}: {e}", path.display())))
}

fn check_dims(ckpt: &Path, model: &ModelConfig, graph_dir: &Path, graph: &TemporalGraph) -> Result<(), Failure> {
    if model.feature_dim != graph.feature_dim() {
        return Err(Failure::input(format!(
            "feature dimension mismatch: checkpoint {} expects {}, graph {} has {}",
            ckpt.display(),
            model.feature_dim,
            graph_dir.display(),
            graph.feature_dim()
        )));
    }
    Ok(())
}

/// Makes input paths absolute so the manifest replays from any directory.
fn normalize(command: &Command) -> Result<Command, Failure> {
    let mut c = command.clone();
    match &mut c {
        Command::BuildGraph(a) => {
            a.corpus = absolute(&a.corpus)?;
            a.lexicon = absolute(&a.lexicon)?;
        }
        Command::ImportEdges(a) => {
            a.edges = absolute(&a.edges)?;
            for f in &mut a.features {
                *f = absolute(f)?;
            }
        }
        Command::Synth(_) | Command::Replay(_) => {}
        Command::Train(a) => a.graph = absolute(&a.graph)?,
        Command::Evaluate(a) => {
            a.checkpoint = absolute(&a.checkpoint)?;
            a.graph = absolute(&a.graph)?;
        }
        Command::Predict(a) => {
            a.checkpoint = absolute(&a.checkpoint)?;
            a.graph = absolute(&a.graph)?;
        }
    }
    Ok(c)
}

/// Output directory plus a writer for its manifest. The directory is only
/// created once inputs have been validated.
struct Run<'a> {
    global: &'a Global,
    command: Command,
    out: PathBuf,
    workers: Workers,
}

impl<'a> Run<'a> {
    fn new(global: &'a Global, command: &Command) -> Result<Self, Failure> {
        let out = global
            .out
            .as_deref()
            .ok_or_else(|| Failure::input(format!("{} needs --out <DIR>", command.name())))?;
        if global.threads == 0 {
            return Err(Failure::input("--threads must be at least 1"));
        }
        Ok(Self {
            global,
            command: normalize(command)?,
            out: absolute(out)?,
            workers: Workers::new(global.threads),
        })
    }

    fn start(&self, resolved: serde_json::Value, inputs: &[&Path]) -> Result<(), Failure> {
        let inputs = hash_inputs(inputs)?;
        fs::create_dir_all(&self.out).map_err(|e| Failure::input(format!("{}: {e}", self.out.display())))?;
        RunManifest::new(self.global, &self.out, &self.command, resolved, inputs).write(&self.out)
    }

    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }
}

pub fn run(global: &Global, command: &Command) -> Result<(), Failure> {
    let run = Run::new(global, command)?;
    match &run.command {
        Command::BuildGraph(a) => build_graph(&run, a),
        Command::ImportEdges(a) => import_edges(&run, a),
        Command::Synth(a) => synth(&run, a),
        Command::Train(a) => train_cmd(&run, a),
        Command::Evaluate(a) => evaluate(&run, a),
        Command::Predict(a) => predict(&run, a),
        Command::Replay(_) => Err(Failure::input("a manifest cannot describe a replay")),
    }
}

/// Re-runs the manifest's command with its seed. `--out` and `--threads`
/// override the recorded values.
pub fn replay(global: &Global, args: &ReplayArgs) -> Result<(), Failure> {
    let manifest = RunManifest::read(&args.manifest)?;
    manifest.verify_inputs()?;
    let replayed = Global {
        seed: manifest.seed,
        threads: global.threads,
        out: Some(global.out.clone().unwrap_or(manifest.out.clone())),
    };
    run(&replayed, &manifest.command)
}

fn build_graph(run: &Run, a: &BuildGraphArgs) -> Result<(), Failure> {
    let lexicon = TermLexicon::read(open(&a.lexicon)?).map_err(|e| Failure::input(format!("{}: {e}", a.lexicon.display())))?;
    let docs = ingest::read_corpus(open(&a.corpus)?).map_err(|e| Failure::input(format!("{}: {e}", a.corpus.display())))?;
    let config = IngestConfig {
        windows: WindowSpec {
            start_year: a.start_year,
            interval: a.interval,
            windows: a.windows,
        },
        context_dim: a.context_dim,
        description_dim: a.description_dim,
        seed: run.global.seed,
    };
    config.windows.validate().map_err(|e| Failure::input(e.to_string()))?;
    run.start(json!({ "ingest": config }), &[&a.corpus, &a.lexicon])?;

    let built = ingest::build_graph(&docs, &lexicon, &config).map_err(|e| Failure::input(e.to_string()))?;
    built
        .graph
        .save(&run.path("graph"))
        .map_err(|e| Failure::input(e.to_string()))?;
    write_json(&run.path("report.json"), &built.report)?;
    let mut held = String::from("term_a\tterm_b\tyear\n");
    for e in &built.held_out {
        held.push_str(&format!("{}\t{}\t{}\n", e.a, e.b, e.year));
    }
    write_file(&run.path("held_out.tsv"), held.as_bytes())?;
    println!(
        "{} held-out {} skipped mentions {}",
        summary(&built.graph),
        built.held_out.len(),
        built.report.skipped_mentions
    );
    Ok(())
}

fn import_edges(run: &Run, a: &ImportEdgesArgs) -> Result<(), Failure> {
    let records = read_edge_list(open(&a.edges)?).map_err(|e| Failure::input(format!("{}: {e}", a.edges.display())))?;
    let features = if a.features.is_empty() {
        None
    } else {
        let mut dim = None;
        let mut per_window = Vec::with_capacity(a.features.len());
        for path in &a.features {
            let (_, d, data) = read_feature_matrix(open(path)?).map_err(|e| Failure::input(format!("{}: {e}", path.display())))?;
            if dim.is_some_and(|x| x != d) {
                return Err(Failure::input(format!("{}: feature width {d} differs from earlier files", path.display())));
            }
            dim = Some(d);
            per_window.push(data);
        }
        Some((dim.unwrap_or(1), per_window))
    };
    let graph = TemporalGraph::from_edge_records(&records, features).map_err(|e: GraphError| Failure::input(e.to_string()))?;
    let mut inputs: Vec<&Path> = vec![&a.edges];
    inputs.extend(a.features.iter().map(PathBuf::as_path));
    run.start(json!({}), &inputs)?;
    graph.save(&run.path("graph")).map_err(|e| Failure::input(e.to_string()))?;
    println!("{}", summary(&graph));
    Ok(())
}

fn synth(run: &Run, a: &SynthArgs) -> Result<(), Failure> {
    let config = SynthConfig {
        nodes: a.nodes,
        communities: a.communities,
        windows: a.windows,
        feature_dim: a.feature_dim,
        initial_fraction: a.initial_fraction,
        intra_edges: a.intra_edges,
        inter_edges: a.inter_edges,
        feature_noise: a.feature_noise,
        seed: run.global.seed,
    };
    config.validate().map_err(Failure::input)?;
    run.start(json!({ "synth": config }), &[])?;
    let sg = synthetic::generate(&config);
    sg.graph.save(&run.path("graph")).map_err(|e| Failure::input(e.to_string()))?;
    let mut text = String::from("node\tcommunity\n");
    for (v, c) in sg.communities.iter().enumerate() {
        text.push_str(&format!("{}\t{c}\n", sg.graph.registry().id(v)));
    }
    write_file(&run.path("communities.tsv"), text.as_bytes())?;
    println!("{}", summary(&sg.graph));
    Ok(())
}

fn train_cmd(run: &Run, a: &TrainArgs) -> Result<(), Failure> {
    let graph = load_graph(&a.graph)?;
    let model = ModelConfig {
        feature_dim: graph.feature_dim(),
        dim: a.dim,
        sample_sizes: a.samples.clone(),
        aggregator: a.aggregator,
    };
    model.validate().map_err(|e| Failure::input(e.to_string()))?;
    let config = TrainConfig {
        estimator: a.estimator,
        lr: a.lr,
        epochs: a.epochs,
        batch_positive: a.batch_positive,
        batch_unlabeled: a.batch_unlabeled,
        unlabeled_ratio: a.unlabeled_ratio,
        prior_cadence: a.prior_cadence,
        hidden_positive_fraction: a.hidden_fraction,
        seed: run.global.seed,
        ..TrainConfig::default()
    };
    config.validate().map_err(|e| Failure::input(e.to_string()))?;
    if !a.all_windows && graph.len() < 2 {
        return Err(Failure::input(
            "holding out the final window needs at least 2 windows; pass --all-windows to train on one",
        ));
    }
    if a.grid_search && a.lr_grid.is_empty() {
        return Err(Failure::input("--lr-grid is empty"));
    }
    let eval_config = EvalConfig {
        seed: run.global.seed,
        ..EvalConfig::default()
    };
    run.start(json!({ "model": model, "train": config, "eval": eval_config }), &[&a.graph])?;

    let mut config = config;
    let mut searched = None;
    if a.grid_search {
        let (grid, params) = eval::grid_search(&graph, &model, &config, &eval_config, &a.lr_grid, &run.workers).map_err(from_eval)?;
        write_json(&run.path("grid.json"), &grid)?;
        println!("selected learning rate {}", grid.best_lr);
        config.lr = grid.best_lr;
        if !a.all_windows {
            let history = grid
                .points
                .iter()
                .find(|p| p.lr == grid.best_lr)
                .and_then(|p| p.history.clone())
                .unwrap_or_default();
            searched = Some((params, history));
        }
    }
    let windows = if a.all_windows { graph.len() } else { graph.len() - 1 };
    let (params, history) = match searched {
        Some(found) => found,
        None => {
            let outcome = train::train(&graph.truncated(windows), &model, &config, &run.workers).map_err(from_train)?;
            (outcome.params, outcome.history)
        }
    };
    let trained = TrainedModel {
        params,
        model,
        train: config,
        history,
        trained_windows: windows,
    };
    trained
        .save(&run.path("checkpoint.bin"))
        .map_err(|e| Failure::input(e.to_string()))?;
    write_json(&run.path("history.json"), &trained.history)?;
    if let Some(last) = trained.history.epochs.last() {
        println!("epochs {} final loss {:.6} pi_hat {:.4}", trained.history.epochs.len(), last.loss, last.pi);
    } else {
        println!("epochs 0");
    }
    Ok(())
}

fn print_report(r: &MetricsReport) {
    println!(
        "window {} {} F1-S {:.4} F1-M {:.4} F1-P {:.4} LRAP {:.4}",
        r.window, r.estimator, r.f1_s, r.f1_m, r.f1_p, r.lrap
    );
}

fn evaluate(run: &Run, a: &EvaluateArgs) -> Result<(), Failure> {
    let trained = load_model(&a.checkpoint)?;
    let graph = load_graph(&a.graph)?;
    check_dims(&a.checkpoint, &trained.model, &a.graph, &graph)?;
    if !(a.unlabeled_factor > 0.0 && a.unlabeled_factor.is_finite()) {
        return Err(Failure::input("--unlabeled-factor must be positive"));
    }
    let eval_config = EvalConfig {
        unlabeled_factor: a.unlabeled_factor,
        seed: run.global.seed,
    };
    run.start(json!({ "eval": eval_config }), &[&a.checkpoint, &a.graph])?;

    if a.incremental {
        let reports = eval::incremental_eval(&graph, &trained.model, &trained.train, &eval_config, a.start, &run.workers).map_err(from_eval)?;
        for r in &reports {
            print_report(r);
        }
        write_json(&run.path("metrics.json"), &reports)?;
        let mut csv = Vec::new();
        eval::write_curves(&mut csv, &reports).map_err(|e| Failure::input(e.to_string()))?;
        write_file(&run.path("curves.csv"), &csv)?;
        return Ok(());
    }
    if trained.trained_windows >= graph.len() {
        log::warn!("the checkpoint was trained on {} windows, so the evaluated window was seen in training", trained.trained_windows);
    }
    let (mut report, _) = eval::evaluate(&trained.params, &trained.model, &graph, &eval_config, &run.workers).map_err(from_eval)?;
    report.estimator = trained.train.estimator.to_string();
    report.pi_hat = trained.history.pi_hat();
    report.loss = trained.history.losses();
    print_report(&report);
    write_json(&run.path("metrics.json"), &report)
}

fn suggestions<'g>(graph: &'g TemporalGraph, term: &str) -> Vec<&'g str> {
    let mut scored: Vec<(f64, &str)> = graph
        .registry()
        .ids()
        .iter()
        .map(|id| (strsim::jaro_winkler(term, id), id.as_str()))
        .collect();
    scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(b.1)));
    scored.into_iter().take(5).map(|(_, id)| id).collect()
}

fn predict(run: &Run, a: &PredictArgs) -> Result<(), Failure> {
    let trained = load_model(&a.checkpoint)?;
    let graph = load_graph(&a.graph)?;
    check_dims(&a.checkpoint, &trained.model, &a.graph, &graph)?;
    let Some(node) = graph.registry().get(&a.term) else {
        return Err(Failure::input(format!(
            "unknown term `{}`; nearest: {}",
            a.term,
            suggestions(&graph, &a.term).join(", ")
        )));
    };
    run.start(json!({}), &[&a.checkpoint, &a.graph])?;
    let ranked = eval::rank_partners(&trained.params, &trained.model, &graph, node, a.k, run.global.seed, &run.workers).map_err(from_eval)?;
    if a.k > 0 && ranked.is_empty() {
        eprintln!("`{}` is already linked to every other term; no candidates", a.term);
    }
    let mut text = String::from("rank\tterm\tscore\n");
    for (i, p) in ranked.iter().enumerate() {
        text.push_str(&format!("{}\t{}\t{}\n", i + 1, p.id, p.score));
        println!("{}\t{}\t{:.6}", i + 1, p.id, p.score);
    }
    write_file(&run.path("predictions.tsv"), text.as_bytes())
}
