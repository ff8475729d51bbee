use std::collections::HashMap;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use moralab::analysis::analyze_corpus;
use moralab::corpus::{import_dataset, prepare_split, ImportProfile};
use moralab::eval::{
    alignment_scores, curve_csv, ood_evaluate, probabilities_from_transcripts, radar_csv, report_from_probabilities,
    CurvePoint,
};
use moralab::grpo::{train_with, TrainEvent};
use moralab::reward::score_transcripts;
use moralab::synth::generate_synthetic;
use moralab::{AlignmentReport, Backend, Corpus, CorpusSplit, Decision, Error, KeywordConfig, PolicyParams};
use serde::Serialize;

use crate::config::ExperimentConfig;
use crate::manifest::ExperimentManifest;
use crate::{BackendChoice, Cli, Command, Global, ScenarioSet, Subset};

/// Misuse that clap cannot catch (missing outdir, existing run directory).
#[derive(Debug)]
pub struct Usage(pub String);

impl std::fmt::Display for Usage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    anyhow::Error::new(Usage(msg.into()))
}

/// 1 usage or config, 2 data, 3 divergence.
pub fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.downcast_ref::<Usage>().is_some() {
            return 1;
        }
        if let Some(e) = cause.downcast_ref::<Error>() {
            return match e {
                Error::Divergence { .. } => 3,
                Error::Config(_)
                | Error::UnknownFramework { .. }
                | Error::Temperature(_)
                | Error::TemplateContamination(_) => 1,
                _ => 2,
            };
        }
        if cause.downcast_ref::<toml::de::Error>().is_some() {
            return 1;
        }
    }
    2
}

pub fn run(cli: Cli) -> Result<()> {
    let g = &cli.global;
    match &cli.command {
        Command::Import {
            input,
            profile,
            output,
            allow_partial,
        } => cmd_import(g, input, profile.as_deref(), output.as_deref(), *allow_partial),
        Command::Analyze { corpus, subset } => cmd_analyze(g, corpus, *subset),
        Command::Synth {
            output,
            count,
            noise,
            feature_dim,
            rule_seed,
        } => {
            let mut cfg = experiment(g)?;
            if let Some(c) = count {
                cfg.synth.count = *c;
            }
            if let Some(n) = noise {
                cfg.synth.noise_rate = *n;
            }
            if let Some(d) = feature_dim {
                cfg.synth.feature_dim = *d;
            }
            if let Some(r) = rule_seed {
                cfg.synth.rule_weights_seed = *r;
            }
            let out = output_path(g, output.as_deref(), "corpus.jsonl")?;
            let corpus = generate_synthetic(&cfg.synth).context("synth")?;
            write_corpus(&corpus, &out)?;
            println!("synthetic corpus: {} scenarios -> {}", corpus.len(), out.display());
            Ok(())
        }
        Command::Train {
            corpus,
            framework,
            steps,
            lr,
            eval_every,
            split,
            no_filter,
        } => {
            let mut cfg = experiment(g)?;
            if let Some(s) = steps {
                cfg.train.max_steps = *s;
            }
            if let Some(l) = lr {
                cfg.train.lr = *l;
            }
            if let Some(e) = eval_every {
                cfg.train.eval_every = *e;
            }
            if let Some(s) = split {
                cfg.split.rule = s.rule();
            }
            if *no_filter {
                cfg.split.filter = None;
            }
            cmd_train(g, cfg, corpus, framework)
        }
        Command::Eval {
            checkpoint,
            transcripts,
            corpus,
            scenarios,
            backend,
            samples,
            tau,
            allow_foreign_corpus,
        } => {
            let mut cfg = experiment(g)?;
            if let Some(t) = tau {
                cfg.eval.tau = *t;
            }
            match (backend, samples) {
                (Some(BackendChoice::Exact), _) => cfg.eval.backend = Backend::Exact,
                (Some(BackendChoice::MonteCarlo), n) => {
                    cfg.eval.backend = Backend::MonteCarlo {
                        samples: n.unwrap_or(moralab::eval::DEFAULT_MC_SAMPLES),
                    }
                }
                (None, Some(n)) => cfg.eval.backend = Backend::MonteCarlo { samples: *n },
                (None, None) => {}
            }
            let corpus_path = input_path(g, corpus);
            let corpus = load_corpus(&corpus_path)?;
            match (checkpoint, transcripts) {
                (_, Some(t)) => cmd_eval_transcripts(g, &cfg, &corpus, &input_path(g, t), *scenarios),
                (Some(c), None) => cmd_eval(g, &cfg, &corpus, &input_path(g, c), *scenarios, *allow_foreign_corpus),
                (None, None) => Err(usage("eval needs --checkpoint or --transcripts")),
            }
        }
        Command::Score {
            transcripts,
            corpus,
            framework,
            output,
        } => cmd_score(g, transcripts, corpus, framework.as_deref(), output.as_deref()),
    }
}

fn experiment(g: &Global) -> Result<ExperimentConfig> {
    let cfg = ExperimentConfig::resolve(g.preset, g.config.as_deref())
        .map_err(|e| usage(format!("config: {e:#}")))?
        .with_seed(g.seed);
    Ok(cfg)
}

fn keywords(g: &Global) -> Result<KeywordConfig> {
    match &g.keywords {
        Some(p) => KeywordConfig::load(input_path(g, p)).context("keywords"),
        None => Ok(KeywordConfig::default()),
    }
}

/// Relative paths that do not exist fall back to the data directory.
fn input_path(g: &Global, p: &Path) -> PathBuf {
    match &g.data_dir {
        Some(dir) if p.is_relative() && !p.exists() => dir.join(p),
        _ => p.to_path_buf(),
    }
}

fn output_path(g: &Global, explicit: Option<&Path>, default_name: &str) -> Result<PathBuf> {
    match (explicit, &g.outdir) {
        (Some(p), _) => Ok(p.to_path_buf()),
        (None, Some(dir)) => {
            fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
            Ok(dir.join(default_name))
        }
        (None, None) => Err(usage("give --output or --outdir")),
    }
}

fn load_corpus(path: &Path) -> Result<Corpus> {
    let report = import_dataset(path, &ImportProfile::default()).with_context(|| format!("corpus {}", path.display()))?;
    if let Some(first) = report.errors.into_iter().next() {
        return Err(anyhow::Error::new(first).context(format!("corpus {}", path.display())));
    }
    Ok(report.corpus)
}

fn write_corpus(corpus: &Corpus, path: &Path) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    corpus.write_jsonl(path)?;
    Ok(())
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    write_text(path, &(serde_json::to_string_pretty(value)? + "\n"))
}

#[derive(Serialize)]
struct Tagged<'a, T: Serialize> {
    manifest_id: &'a str,
    #[serde(flatten)]
    body: &'a T,
}

fn cmd_import(g: &Global, input: &Path, profile: Option<&Path>, output: Option<&Path>, allow_partial: bool) -> Result<()> {
    let mut prof = match profile {
        Some(p) => ImportProfile::load(input_path(g, p)).context("import profile")?,
        None => ImportProfile::default(),
    };
    prof.allow_partial |= allow_partial;
    let input = input_path(g, input);
    let report = import_dataset(&input, &prof).context("import")?;
    for e in &report.errors {
        eprintln!("rejected: {e}");
    }
    if !report.incomplete.is_empty() {
        eprintln!(
            "incomplete scenarios ({}): {}",
            report.incomplete.len(),
            report.incomplete.join(", ")
        );
    }
    println!(
        "scenarios: {}  traces: {}  incomplete: {}  rejected: {}  records read: {}",
        report.corpus.len(),
        report.corpus.trace_count(),
        report.incomplete.len(),
        report.errors.len(),
        report.records_read
    );
    if !prof.allow_partial && (!report.errors.is_empty() || !report.incomplete.is_empty()) {
        let n = report.errors.len() + report.incomplete.len();
        return match report.errors.into_iter().next() {
            Some(first) => Err(anyhow::Error::new(first).context(format!("import: {n} record(s) rejected"))),
            None => Err(anyhow::Error::new(Error::Data(format!("{n} incomplete scenario(s)"))).context("import")),
        };
    }
    let out = output_path(g, output, "corpus.jsonl")?;
    write_corpus(&report.corpus, &out)?;
    println!("fingerprint: {}", report.corpus.fingerprint());
    Ok(())
}

fn cmd_analyze(g: &Global, corpus: &Path, subset: Subset) -> Result<()> {
    let cfg = experiment(g)?;
    let corpus = load_corpus(&input_path(g, corpus))?;
    let scenarios = match subset {
        Subset::Full => corpus.scenarios.clone(),
        Subset::Eval => prepare_split(&corpus, cfg.split.filter, cfg.split.rule).context("analyze")?.eval,
    };
    let report = analyze_corpus(&scenarios, &corpus.frameworks).context("analyze")?;
    let outdir = g.outdir.clone().ok_or_else(|| usage("analyze needs --outdir"))?;
    fs::create_dir_all(&outdir)?;
    write_json(&outdir.join("analysis.json"), &report)?;
    write_text(&outdir.join("phi.csv"), &report.phi_csv())?;
    for (name, rate) in &report.rates {
        println!("{name}: {:.1}%", rate * 100.0);
    }
    println!("overlap O(F) = {:.4} ({})", report.overlap.total, report.overlap.convention);
    Ok(())
}

fn cmd_train(g: &Global, mut cfg: ExperimentConfig, corpus_path: &Path, framework: &str) -> Result<()> {
    let outdir = g.outdir.clone().ok_or_else(|| usage("train needs --outdir"))?;
    if outdir.exists() {
        return Err(usage(format!("{} already exists; refusing to overwrite", outdir.display())));
    }
    let corpus_path = input_path(g, corpus_path);
    let corpus = load_corpus(&corpus_path)?;
    cfg.train.target_framework = corpus.frameworks.resolve(framework).context("train")?;
    cfg.train.validate().context("train config")?;
    cfg.eval.validate().context("eval config")?;
    let kw = keywords(g)?;
    let split = prepare_split(&corpus, cfg.split.filter, cfg.split.rule).context("split")?;

    let manifest = ExperimentManifest::new(
        cfg.clone(),
        &corpus_path,
        corpus.fingerprint(),
        kw.version.clone(),
        split.provenance.clone(),
    );
    let id = manifest.experiment_id.clone();
    fs::create_dir_all(outdir.join("checkpoints"))?;
    fs::create_dir_all(outdir.join("reports"))?;
    manifest.write(&outdir.join("manifest.json"))?;
    write_json(&outdir.join("train_config.json"), &Tagged { manifest_id: &id, body: &cfg })?;
    write_json(&outdir.join("keywords.json"), &Tagged { manifest_id: &id, body: &kw })?;

    let metrics_path = outdir.join("metrics.jsonl");
    let mut metrics = fs::File::create(&metrics_path)?;
    let mut last_good: Option<String> = None;
    let fingerprint = corpus.fingerprint();
    let result = train_with(&split, &kw, &cfg.train, &cfg.eval, |event| {
        let io = |e: std::io::Error| Error::Io {
            path: outdir.display().to_string(),
            source: e,
        };
        match event {
            TrainEvent::Step(m) => {
                let line = serde_json::to_string(&Tagged { manifest_id: &id, body: m })?;
                writeln!(metrics, "{line}").map_err(io)?;
            }
            TrainEvent::Checkpoint(ck) => {
                let mut params = ck.params.clone();
                params.tags.insert("manifest_id".into(), id.clone());
                params.tags.insert("corpus_fingerprint".into(), fingerprint.clone());
                params.tags.insert("step".into(), ck.step.to_string());
                params.save(outdir.join("checkpoints").join(format!("{}.json", ck.name())))?;
                if let Some(r) = &ck.report {
                    let mut r = r.clone();
                    r.manifest_id = Some(id.clone());
                    let text = serde_json::to_string_pretty(&r)? + "\n";
                    fs::write(outdir.join("reports").join(format!("{}.json", ck.name())), text).map_err(io)?;
                }
                last_good = Some(ck.name());
            }
        }
        Ok(())
    });
    let outcome = match result {
        Ok(o) => o,
        Err(e @ Error::Divergence { .. }) => {
            let kept = last_good.unwrap_or_else(|| "none".into());
            return Err(anyhow::Error::new(e).context(format!("train: last good checkpoint {kept}")));
        }
        Err(e) => return Err(anyhow::Error::new(e).context("train")),
    };

    let curve = tagged_csv(&id, &curve_csv(&outcome.ood_curve, &split.frameworks));
    write_text(&outdir.join("curve.csv"), &curve)?;
    write_text(&outdir.join("radar.csv"), &tagged_csv(&id, &radar_csv(&outcome.ood_curve, &split.frameworks)))?;

    println!(
        "experiment {id}: {} train / {} eval / {} unused, {} steps on {}",
        split.provenance.train_count,
        split.provenance.eval_count,
        split.provenance.unused_count,
        outcome.metrics.len(),
        cfg.train.target_framework
    );
    if let (Some(first), Some(last)) = (outcome.ood_curve.first(), outcome.ood_curve.last()) {
        for (i, f) in split.frameworks.iter().enumerate() {
            println!(
                "  {f}: OOD softmax {:.3} -> {:.3}",
                first.report.softmax[i], last.report.softmax[i]
            );
        }
    }
    Ok(())
}

fn tagged_csv(id: &str, body: &str) -> String {
    format!("# manifest_id={id}\n{body}")
}

fn scenario_report(
    cfg: &ExperimentConfig,
    corpus: &Corpus,
    set: ScenarioSet,
    params: &PolicyParams,
) -> Result<AlignmentReport> {
    Ok(match set {
        ScenarioSet::Ood => {
            let split = eval_split(cfg, corpus)?;
            ood_evaluate(params, &split, &cfg.eval)?
        }
        ScenarioSet::All => {
            let mut r = alignment_scores(params, &corpus.scenarios, &corpus.frameworks, &cfg.eval)?;
            r.scenario_set = "all".into();
            r
        }
    })
}

fn eval_split(cfg: &ExperimentConfig, corpus: &Corpus) -> Result<CorpusSplit> {
    prepare_split(corpus, cfg.split.filter, cfg.split.rule).context("split")
}

fn step_of(path: &Path) -> Option<usize> {
    path.file_stem()?.to_str()?.strip_prefix("ckpt_step")?.parse().ok()
}

fn load_checkpoint(path: &Path, corpus: &Corpus, allow_foreign: bool) -> Result<PolicyParams> {
    let params = PolicyParams::load(path).with_context(|| format!("checkpoint {}", path.display()))?;
    if let Some(fp) = params.tags.get("corpus_fingerprint") {
        if !allow_foreign && *fp != corpus.fingerprint() {
            return Err(anyhow::Error::new(Error::Checkpoint(format!(
                "{} was trained on corpus {} but the given corpus is {} (pass --allow-foreign-corpus to evaluate anyway)",
                path.display(),
                &fp[..fp.len().min(12)],
                &corpus.fingerprint()[..12]
            ))));
        }
    }
    Ok(params)
}

fn cmd_eval(
    g: &Global,
    cfg: &ExperimentConfig,
    corpus: &Corpus,
    checkpoint: &Path,
    set: ScenarioSet,
    allow_foreign: bool,
) -> Result<()> {
    if checkpoint.is_file() {
        let params = load_checkpoint(checkpoint, corpus, allow_foreign)?;
        let mut report = scenario_report(cfg, corpus, set, &params).context("eval")?;
        report.checkpoint = Some(checkpoint.display().to_string());
        report.manifest_id = params.tags.get("manifest_id").cloned();
        let text = serde_json::to_string_pretty(&report)? + "\n";
        match &g.outdir {
            Some(dir) => {
                fs::create_dir_all(dir)?;
                write_text(&dir.join("report.json"), &text)?;
            }
            None => print!("{text}"),
        }
        for (f, s) in report.frameworks.iter().zip(&report.softmax) {
            eprintln!("{f}: {s:.4}");
        }
        return Ok(());
    }

    let dir = if checkpoint.join("checkpoints").is_dir() {
        checkpoint.join("checkpoints")
    } else {
        checkpoint.to_path_buf()
    };
    let mut found: Vec<(usize, PathBuf)> = fs::read_dir(&dir)
        .with_context(|| format!("reading {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "json"))
        .filter_map(|p| step_of(&p).map(|s| (s, p)))
        .collect();
    if found.is_empty() {
        bail!(Error::Checkpoint(format!("no ckpt_step*.json files in {}", dir.display())));
    }
    found.sort();
    let outdir = g.outdir.clone().unwrap_or_else(|| checkpoint.join("eval"));
    fs::create_dir_all(outdir.join("reports"))?;
    let mut points = Vec::new();
    let mut manifest_id = None;
    for (step, path) in &found {
        let params = load_checkpoint(path, corpus, allow_foreign)?;
        let mut report = scenario_report(cfg, corpus, set, &params).context("eval")?;
        report.checkpoint = Some(format!("ckpt_step{step}"));
        report.manifest_id = params.tags.get("manifest_id").cloned();
        manifest_id = manifest_id.or(report.manifest_id.clone());
        write_json(&outdir.join("reports").join(format!("ckpt_step{step}.json")), &report)?;
        points.push(CurvePoint { step: *step, report });
    }
    let id = manifest_id.unwrap_or_else(|| "none".into());
    write_text(&outdir.join("curve.csv"), &tagged_csv(&id, &curve_csv(&points, &corpus.frameworks)))?;
    write_text(&outdir.join("radar.csv"), &tagged_csv(&id, &radar_csv(&points, &corpus.frameworks)))?;
    println!("{} checkpoints evaluated -> {}", points.len(), outdir.display());
    Ok(())
}

fn cmd_eval_transcripts(g: &Global, cfg: &ExperimentConfig, corpus: &Corpus, path: &Path, set: ScenarioSet) -> Result<()> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let default_fw = corpus.frameworks.as_slice().first().cloned();
    let scored = score_transcripts(&text, corpus, default_fw.as_ref(), &keywords(g)?).context("eval")?;
    if let Some(e) = scored.errors.into_iter().next() {
        return Err(anyhow::Error::new(e).context("eval: transcripts"));
    }
    let mut by_id: HashMap<String, Vec<Decision>> = HashMap::new();
    for row in &scored.rows {
        by_id
            .entry(row.scenario_id.clone())
            .or_default()
            .push(row.reward.extracted_decision);
    }
    let scenarios = match set {
        ScenarioSet::Ood => eval_split(cfg, corpus)?.eval,
        ScenarioSet::All => corpus.scenarios.clone(),
    };
    let probs = probabilities_from_transcripts(&scenarios, &by_id).context("eval")?;
    let samples = by_id.values().map(Vec::len).min().unwrap_or(0);
    let eval_cfg = moralab::EvalConfig {
        backend: Backend::MonteCarlo { samples },
        ..cfg.eval.clone()
    };
    let mut report = report_from_probabilities(&probs, &scenarios, &corpus.frameworks, &eval_cfg, "transcripts")
        .context("eval")?;
    report.checkpoint = Some(path.display().to_string());
    let text = serde_json::to_string_pretty(&report)? + "\n";
    match &g.outdir {
        Some(dir) => {
            fs::create_dir_all(dir)?;
            write_text(&dir.join("report.json"), &text)?;
        }
        None => print!("{text}"),
    }
    Ok(())
}

fn cmd_score(g: &Global, transcripts: &Path, corpus: &Path, framework: Option<&str>, output: Option<&Path>) -> Result<()> {
    let corpus = load_corpus(&input_path(g, corpus))?;
    let fw = framework
        .map(|f| corpus.frameworks.resolve(f))
        .transpose()
        .context("score")?;
    let path = input_path(g, transcripts);
    let text = fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
    let scored = score_transcripts(&text, &corpus, fw.as_ref(), &keywords(g)?).context("score")?;
    let out = match (output, &g.outdir) {
        (None, None) => None,
        _ => Some(output_path(g, output, "scored.jsonl")?),
    };
    match out {
        Some(p) => write_text(&p, &scored.to_jsonl())?,
        None => print!("{}", scored.to_jsonl()),
    }
    eprintln!(
        "rows: {}  mean r_total {:.3}  mean r_align {:.3}  mean r_keyword {:.3}",
        scored.rows.len(),
        scored.mean(|r| r.r_total),
        scored.mean(|r| r.r_align),
        scored.mean(|r| r.r_keyword)
    );
    for e in &scored.errors {
        eprintln!("row error: {e}");
    }
    if !scored.errors.is_empty() {
        return Err(anyhow!(Error::Data(format!("{} transcript row(s) failed", scored.errors.len()))).context("score"));
    }
    Ok(())
}
