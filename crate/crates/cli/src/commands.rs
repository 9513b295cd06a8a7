use std::fmt;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use xdcl::augment::{
    build_cache_dir, synonym_views, AugmentMethod, Augmenter, BackTranslationCache, CommandTranslator,
    IdentityTranslator, Lexicon, TranslationProvider,
};
use xdcl::checkpoint::load_checkpoint;
use xdcl::config::{EncoderKind, RunConfig};
use xdcl::corpus::{benchmark_domain, label_distribution, load_corpus, write_corpus, DomainCorpus, LabeledDocument};
use xdcl::evalviz::{evaluate, export_projection, PcaReducer, Reducer, TsneReducer};
use xdcl::strategy::{resolve_strategy, ShiftMeasure, StrategyChoice, StrategyConfig};
use xdcl::synthetic::{generate, SyntheticConfig};
use xdcl::trainer::{train, TrainData, TrainOptions};
use xdcl::Error;

use crate::{Cli, Command, CommonArgs, DomainArgs, MethodArg, ReducerArg};

pub const CACHE_ENV: &str = "XDCL_CACHE_DIR";
const DEFAULT_CACHE_DIR: &str = ".xdcl-cache";
const SNAPSHOT_FILE: &str = "run_config.toml";

#[derive(Debug)]
pub enum Failure {
    Usage(String),
    Core(Error),
}

impl Failure {
    /// 2 usage or missing input, 3 manifest/config mismatch, 4 invalid data,
    /// 5 non-finite loss, 1 anything else.
    pub fn exit_code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 2,
            Failure::Core(e) => match e {
                Error::Io { source, .. } if source.kind() == std::io::ErrorKind::NotFound => 2,
                Error::Config(_) | Error::InvalidArgument(_) => 2,
                Error::ManifestMismatch(_) => 3,
                Error::Parse { .. }
                | Error::Validation(_)
                | Error::EmptyCorpus
                | Error::Capacity { .. }
                | Error::EmptyInput(_)
                | Error::ZeroNorm(_)
                | Error::Layout(_)
                | Error::Dimension { .. }
                | Error::CacheMiss(_)
                | Error::Encoder { .. }
                | Error::Reducer { .. }
                | Error::Json(_) => 4,
                Error::NonFinite { .. } => 5,
                _ => 1,
            },
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Usage(m) => f.write_str(m),
            Failure::Core(e) => write!(f, "{e}"),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Core(e)
    }
}

type CliResult<T = ()> = Result<T, Failure>;

fn usage(message: impl Into<String>) -> Failure {
    Failure::Usage(message.into())
}

pub fn cache_root() -> PathBuf {
    std::env::var_os(CACHE_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(DEFAULT_CACHE_DIR))
}

fn load_config(common: &CommonArgs) -> CliResult<RunConfig> {
    let mut config = RunConfig::load(common.config.as_deref(), &common.overrides)?;
    if let Some(seed) = common.seed {
        config.train.seed = seed;
    }
    if let Some(out) = &common.out {
        config.output.dir = out.clone();
    }
    if let Some(kind) = common.encoder {
        config.encoder.kind = kind.into();
    }
    Ok(config)
}

fn apply_domains(config: &mut RunConfig, domains: &DomainArgs) {
    let data = &mut config.data;
    if let Some(p) = &domains.source {
        data.source = Some(p.clone());
    }
    if let Some(p) = &domains.target {
        data.target = Some(p.clone());
    }
    if let Some(d) = &domains.source_domain {
        data.source_domain = Some(d.clone());
    }
    if let Some(d) = &domains.target_domain {
        data.target_domain = Some(d.clone());
    }
}

fn finish(config: &RunConfig) -> CliResult<String> {
    config.validate()?;
    let hash = config.hash();
    println!("config hash: {hash}");
    Ok(hash)
}

pub fn run(cli: Cli) -> CliResult {
    let mut config = load_config(&cli.common)?;
    match cli.command {
        Command::AnalyzeShift {
            domains,
            target_ratio,
            target_labels,
            threshold,
        } => {
            apply_domains(&mut config, &domains);
            if target_ratio.is_some() {
                config.data.target_ratio = target_ratio;
            }
            if target_labels.is_some() {
                config.data.target_labels = target_labels;
            }
            if let Some(t) = threshold {
                config.strategy.threshold = t;
            }
            finish(&config)?;
            analyze_shift(&config)
        }
        Command::Augment {
            corpus,
            domain,
            method,
            translator,
            cache,
        } => {
            if let Some(m) = method {
                config.augment.method = match m {
                    MethodArg::BackTranslation => AugmentMethod::BackTranslation,
                    MethodArg::Synonym => AugmentMethod::SynonymSubstitution,
                };
            }
            if cache.is_some() {
                config.data.bt_cache = cache;
            }
            finish(&config)?;
            augment(&config, corpus, domain, translator.as_deref())
        }
        Command::Train {
            domains,
            strategy,
            allow_ablation,
            resume,
            target_ratio,
        } => {
            apply_domains(&mut config, &domains);
            if let Some(s) = strategy {
                config.strategy.choice = s.into();
            }
            config.strategy.allow_ablation |= allow_ablation;
            if target_ratio.is_some() {
                config.data.target_ratio = target_ratio;
            }
            let hash = finish(&config)?;
            run_train(&config, &hash, resume)
        }
        Command::Eval { checkpoint, test, domain } => {
            if test.is_some() {
                config.data.test = test;
            }
            finish(&config)?;
            run_eval(&config, &checkpoint, domain)
        }
        Command::Project {
            checkpoint,
            domains,
            reducer,
            perplexity,
            iterations,
            theta,
        } => {
            apply_domains(&mut config, &domains);
            finish(&config)?;
            let reducer: Box<dyn Reducer> = match reducer {
                ReducerArg::Tsne => Box::new(TsneReducer {
                    perplexity,
                    epochs: iterations,
                    theta,
                    seed: config.train.seed,
                }),
                ReducerArg::Pca => Box::new(PcaReducer { iterations }),
            };
            project(&config, &checkpoint, reducer.as_ref())
        }
        Command::Synth {
            target_ratio,
            n_source,
            n_target,
            n_test,
        } => {
            finish(&config)?;
            synth(
                &config,
                SyntheticConfig {
                    target_pos_ratio: target_ratio,
                    n_source,
                    n_target,
                    n_target_test: n_test,
                    seed: config.train.seed,
                    ..SyntheticConfig::default()
                },
            )
        }
    }
}

fn domain_name(explicit: Option<&String>, path: Option<&Path>, role: &str) -> CliResult<String> {
    if let Some(d) = explicit {
        return Ok(d.clone());
    }
    path.and_then(|p| p.file_stem())
        .map(|s| s.to_string_lossy().into_owned())
        .ok_or_else(|| usage(format!("{role} domain unknown: pass --{role}-domain or --{role}")))
}

fn load_optional(path: Option<&PathBuf>, domain: &str) -> CliResult<Option<DomainCorpus>> {
    Ok(match path {
        Some(p) => Some(load_corpus(p, domain)?),
        None => None,
    })
}

fn require_path<'a>(path: Option<&'a PathBuf>, what: &str) -> CliResult<&'a PathBuf> {
    path.ok_or_else(|| usage(format!("no {what} given (flag or config)")))
}

fn labeled_ratio(docs: &[LabeledDocument]) -> CliResult<Option<f64>> {
    if docs.is_empty() {
        return Ok(None);
    }
    Ok(label_distribution(docs)?.ratio().filter(|r| *r > 0.0 && r.is_finite()))
}

/// Source ratio from source labels, else a known benchmark domain's balanced
/// labeled set. Target ratio from `data.target_ratio`, then
/// `data.target_labels`, then labels in the target corpus, then benchmark
/// metadata.
fn measure_shift(
    config: &RunConfig,
    source_domain: &str,
    source: Option<&DomainCorpus>,
    target_domain: &str,
    target: Option<&DomainCorpus>,
) -> CliResult<ShiftMeasure> {
    let source_ratio = match source.map(|c| labeled_ratio(&c.labeled)).transpose()?.flatten() {
        Some(r) => r,
        None if benchmark_domain(source_domain).is_some() => 1.0,
        None => return Err(usage(format!("cannot determine pos:neg ratio of source domain {source_domain}"))),
    };
    let mut target_ratio = config.data.target_ratio;
    if target_ratio.is_none() {
        if let Some(path) = &config.data.target_labels {
            let labels = load_corpus(path, target_domain)?;
            target_ratio = labeled_ratio(&labels.labeled)?;
        }
    }
    if target_ratio.is_none() {
        target_ratio = target.map(|c| labeled_ratio(&c.labeled)).transpose()?.flatten();
    }
    if target_ratio.is_none() {
        target_ratio = benchmark_domain(target_domain).map(|d| d.unlabeled_pos_neg);
    }
    let target_ratio = target_ratio.ok_or_else(|| {
        usage(format!(
            "cannot determine pos:neg ratio of target domain {target_domain}: pass --target-ratio or --target-labels"
        ))
    })?;
    Ok(ShiftMeasure::from_ratios(source_ratio, target_ratio)?)
}

fn analyze_shift(config: &RunConfig) -> CliResult {
    let data = &config.data;
    let source_domain = domain_name(data.source_domain.as_ref(), data.source.as_deref(), "source")?;
    let target_domain = domain_name(data.target_domain.as_ref(), data.target.as_deref(), "target")?;
    let source = load_optional(data.source.as_ref(), &source_domain)?;
    let target = load_optional(data.target.as_ref(), &target_domain)?;
    let shift = measure_shift(config, &source_domain, source.as_ref(), &target_domain, target.as_ref())?;
    let strategy = resolve(config, Some(&shift))?;
    println!("source: {source_domain} (pos:neg {:.2})", shift.source_ratio);
    println!("target: {target_domain} (pos:neg {:.2})", shift.target_ratio);
    println!("shift: {:.2}", shift.shift);
    println!("threshold: {}", config.strategy.threshold);
    println!("strategy: {}", strategy.describe());
    Ok(())
}

fn resolve(config: &RunConfig, shift: Option<&ShiftMeasure>) -> CliResult<StrategyConfig> {
    let s = &config.strategy;
    let choice = if shift.is_some() { StrategyChoice::Auto } else { s.choice };
    Ok(resolve_strategy(
        choice,
        shift,
        s.threshold,
        s.allow_ablation,
        s.entropy_start_epoch,
    )?)
}

fn bt_cache_dir(config: &RunConfig) -> PathBuf {
    config
        .data
        .bt_cache
        .clone()
        .unwrap_or_else(|| cache_root().join("back-translation"))
}

fn augment(config: &RunConfig, corpus: Option<PathBuf>, domain: Option<String>, translator: Option<&str>) -> CliResult {
    let from_config = corpus.is_none();
    let path = corpus.or_else(|| config.data.source.clone());
    let path = require_path(path.as_ref(), "corpus")?;
    let domain = domain.or_else(|| from_config.then(|| config.data.source_domain.clone()).flatten());
    let domain = domain_name(domain.as_ref(), Some(path), "source")?;
    let corpus = load_corpus(path, &domain)?;

    match config.augment.method {
        AugmentMethod::BackTranslation => {
            let provider: Box<dyn TranslationProvider> = match translator {
                Some(cmd) => Box::new(CommandTranslator::parse(cmd)?),
                None => {
                    log::warn!("no --translator given; using the identity translator (views equal originals)");
                    Box::new(IdentityTranslator)
                }
            };
            let dir = bt_cache_dir(config);
            let (cache, stats) = build_cache_dir(&dir, &corpus, provider.as_ref(), &config.augment)?;
            println!("cache: {}", dir.display());
            println!("documents: {}", corpus.len());
            println!("provider calls: {}", stats.provider_calls);
            println!("skipped (cached): {}", stats.skipped);
            println!("failed: {}", stats.failed);
            println!("cache entries: {}", cache.len());
        }
        AugmentMethod::SynonymSubstitution => {
            let lexicon_path = require_path(config.data.lexicon.as_ref(), "lexicon (data.lexicon)")?;
            let lexicon = Lexicon::load(lexicon_path)?;
            let views = synonym_views(&corpus, &lexicon, &config.augment)?;
            let out = &config.output.dir;
            std::fs::create_dir_all(out).map_err(|e| io_error(out, e))?;
            let file = out.join(format!("{domain}.synonyms.jsonl"));
            write_corpus(&file, &views)?;
            println!("views: {}", views.len());
            println!("written: {}", file.display());
        }
    }
    Ok(())
}

fn io_error(path: &Path, source: std::io::Error) -> Failure {
    Failure::Core(Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn build_augmenter(config: &RunConfig) -> CliResult<Augmenter> {
    match config.augment.method {
        AugmentMethod::SynonymSubstitution => {
            let path = require_path(config.data.lexicon.as_ref(), "lexicon (data.lexicon) for synonym substitution")?;
            Ok(Augmenter::synonyms(config.augment.clone(), Arc::new(Lexicon::load(path)?))?)
        }
        AugmentMethod::BackTranslation => {
            let dir = bt_cache_dir(config);
            let cache = BackTranslationCache::load(&dir)?;
            log::info!("back-translation cache {} ({} entries)", dir.display(), cache.len());
            Ok(Augmenter::back_translation(config.augment.clone(), Arc::new(cache))?)
        }
    }
}

fn run_train(config: &RunConfig, hash: &str, resume: Option<PathBuf>) -> CliResult {
    let data = &config.data;
    let source_path = require_path(data.source.as_ref(), "source corpus")?;
    let target_path = require_path(data.target.as_ref(), "target corpus")?;
    let source_domain = domain_name(data.source_domain.as_ref(), Some(source_path), "source")?;
    let target_domain = domain_name(data.target_domain.as_ref(), Some(target_path), "target")?;
    let source = load_corpus(source_path, &source_domain)?;
    let target = load_corpus(target_path, &target_domain)?;

    let strategy = if config.strategy.choice == StrategyChoice::Auto {
        let shift = measure_shift(config, &source_domain, Some(&source), &target_domain, Some(&target))?;
        println!("shift: {:.2} (threshold {})", shift.shift, config.strategy.threshold);
        resolve(config, Some(&shift))?
    } else {
        resolve(config, None)?
    };
    println!("strategy: {} ({})", strategy.describe(), config.strategy.choice);
    log::info!("resolved strategy: {}", strategy.describe());

    // The target pool is used without labels even if the file carries them.
    let target_pool: Vec<_> = target.documents().cloned().collect();
    let train_config = config.train_config(strategy)?;
    let augmenter = build_augmenter(config)?;
    let network = config.build_network()?;

    let out = &config.output.dir;
    std::fs::create_dir_all(out).map_err(|e| io_error(out, e))?;
    let snapshot_path = out.join(SNAPSHOT_FILE);
    std::fs::write(&snapshot_path, config.snapshot()).map_err(|e| io_error(&snapshot_path, e))?;

    let features = match config.encoder.kind {
        EncoderKind::Pretrained => config.encoder.features.clone(),
        EncoderKind::Toy => None,
    };
    let outcome = train(
        network,
        &TrainData {
            source: &source.labeled,
            target: &target_pool,
            augmenter: &augmenter,
        },
        &train_config,
        &TrainOptions {
            out_dir: out.clone(),
            config_hash: hash.to_string(),
            resume_from: resume,
            encoder_features: features,
        },
    )?;
    if let Some(last) = outcome.reports.last() {
        println!(
            "step {} epoch {}: loss {:.4} (ce {:.4}, con {:.4}, ent {:.4})",
            last.step, last.epoch, last.total, last.ce, last.con, last.ent
        );
    }
    println!("metrics: {}", outcome.metrics_path.display());
    println!("checkpoint: {}", outcome.final_checkpoint.display());

    if let Some(test_path) = &data.test {
        let test = load_corpus(test_path, &target_domain)?;
        let report = xdcl::evalviz::evaluate_network(&outcome.network, &test.labeled, hash)?;
        let path = out.join("eval.json");
        report.write(&path)?;
        println!("accuracy: {:.4} ({}/{})", report.accuracy, report.n_correct, report.n_total);
    }
    Ok(())
}

fn run_eval(config: &RunConfig, checkpoint: &Path, domain: Option<String>) -> CliResult {
    let ck = load_checkpoint(checkpoint)?;
    println!("checkpoint config hash: {}", ck.manifest.config_hash);
    let test_path = require_path(config.data.test.as_ref(), "test corpus (--test or data.test)")?;
    let domain = domain
        .or_else(|| config.data.target_domain.clone())
        .or_else(|| ck.manifest.domains.last().cloned())
        .ok_or_else(|| usage("test domain unknown: pass --domain"))?;
    let test = load_corpus(test_path, &domain)?;
    let report = evaluate(&ck, &test.labeled)?;
    for w in &report.warnings {
        eprintln!("warning: {w}");
    }
    let out = &config.output.dir;
    std::fs::create_dir_all(out).map_err(|e| io_error(out, e))?;
    let path = out.join("eval.json");
    report.write(&path)?;
    println!("accuracy: {:.4} ({}/{})", report.accuracy, report.n_correct, report.n_total);
    for c in &report.per_class {
        let fmt = |v: Option<f64>| v.map_or("n/a".to_string(), |v| format!("{v:.4}"));
        println!(
            "  {}: support {}, precision {}, recall {}",
            c.label,
            c.support,
            fmt(c.precision),
            fmt(c.recall)
        );
    }
    println!("report: {}", path.display());
    Ok(())
}

fn project(config: &RunConfig, checkpoint: &Path, reducer: &dyn Reducer) -> CliResult {
    let ck = load_checkpoint(checkpoint)?;
    println!("checkpoint config hash: {}", ck.manifest.config_hash);
    let data = &config.data;
    let trained = |i: usize| ck.manifest.domains.get(i).cloned();
    let source_domain = data.source_domain.clone().or_else(|| trained(0));
    let target_domain = data.target_domain.clone().or_else(|| trained(1));
    let source_path = require_path(data.source.as_ref(), "source corpus")?;
    let target_path = require_path(data.target.as_ref(), "target corpus")?;
    let source_domain = domain_name(source_domain.as_ref(), Some(source_path), "source")?;
    let target_domain = domain_name(target_domain.as_ref(), Some(target_path), "target")?;
    let source = load_corpus(source_path, &source_domain)?;
    let mut target = load_corpus(target_path, &target_domain)?.labeled;
    if target.is_empty() {
        if let Some(path) = &data.target_labels {
            target = load_corpus(path, &target_domain)?.labeled;
        }
    }
    if source.labeled.is_empty() || target.is_empty() {
        return Err(Failure::Core(Error::Validation(
            "projection colors points by label; both corpora need labeled documents (see data.target_labels)".into(),
        )));
    }

    let export = export_projection(&ck.network, &source.labeled, &target, reducer)?;
    let out = &config.output.dir;
    std::fs::create_dir_all(out).map_err(|e| io_error(out, e))?;
    let csv = out.join("projection.csv");
    export.write_csv(&csv)?;
    export.write_meta(out.join("projection.meta.json"))?;
    let svg = out.join("projection.svg");
    std::fs::write(&svg, export.render_svg(800)).map_err(|e| io_error(&svg, e))?;
    println!("reducer: {}", export.reducer);
    println!("points: {} ({} groups)", export.rows.len(), export.groups().len());
    println!("csv: {}", csv.display());
    println!("svg: {}", svg.display());
    Ok(())
}

fn absolute(path: &Path) -> CliResult<PathBuf> {
    std::path::absolute(path).map_err(|e| io_error(path, e))
}

fn synth(config: &RunConfig, synthetic: SyntheticConfig) -> CliResult {
    let data = generate(&synthetic)?;
    let out = &config.output.dir;
    std::fs::create_dir_all(out).map_err(|e| io_error(out, e))?;
    let out = absolute(out)?;
    let target_labeled: Vec<LabeledDocument> = data
        .target
        .unlabeled
        .iter()
        .zip(&data.target_hidden_labels)
        .map(|(d, &l)| LabeledDocument::new(d.clone(), l))
        .collect();
    let files = [
        ("source.jsonl", data.source.clone()),
        ("target.jsonl", data.target.clone()),
        (
            "target_labels.jsonl",
            DomainCorpus::new(synthetic.target_domain.clone(), target_labeled, Vec::new())?,
        ),
        (
            "test.jsonl",
            DomainCorpus::new(synthetic.target_domain.clone(), data.target_test.clone(), Vec::new())?,
        ),
    ];
    for (name, corpus) in &files {
        write_corpus(out.join(name), corpus)?;
    }
    data.lexicon.save(out.join("lexicon.json"))?;

    let mut run = config.clone();
    run.data.source = Some(out.join("source.jsonl"));
    run.data.target = Some(out.join("target.jsonl"));
    run.data.source_domain = Some(synthetic.source_domain.clone());
    run.data.target_domain = Some(synthetic.target_domain.clone());
    run.data.test = Some(out.join("test.jsonl"));
    run.data.target_labels = Some(out.join("target_labels.jsonl"));
    run.data.lexicon = Some(out.join("lexicon.json"));
    run.augment.method = AugmentMethod::SynonymSubstitution;
    run.encoder.kind = EncoderKind::Toy;
    run.encoder.vocab_size = 4096;
    run.train.learning_rate = 5e-3;
    run.output.dir = out.join("run");
    let toml = toml::to_string(&run).map_err(|e| Failure::Core(Error::Config(e.to_string())))?;
    let config_path = out.join("config.toml");
    std::fs::write(&config_path, toml).map_err(|e| io_error(&config_path, e))?;

    let shift = data.shift()?;
    println!("source: {} labeled documents", data.source.labeled.len());
    println!("target: {} unlabeled documents (pos:neg {:.2})", data.target.unlabeled.len(), shift.target_ratio);
    println!("shift: {:.2}", shift.shift);
    println!("config: {}", config_path.display());
    Ok(())
}
