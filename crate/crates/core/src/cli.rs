//! The `coffee` command line.

use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::ablation::{run_ablation, AblationPlan};
use crate::config::RunConfig;
use crate::data::{corpus_stats, load_corpus, Dialogue, Instance, Split};
use crate::encoder::LanguageFilter;
use crate::error::{write_file, Error, Result};
use crate::extract::{parse_selection, CometClient, CsCache, Lexicons, Pipeline, QueryMode};
use crate::fusion::FusionStrategy;
use crate::model::Model;
use crate::synthetic::bundled_planted;
use crate::train::{
    attribute_correlations, evaluate, init_model, lambda_table, prediction_table, split_instances,
    train_model,
};

pub const COMET_URL_ENV: &str = "COFFEE_COMET_URL";

#[derive(Debug, Parser)]
#[command(
    name = "coffee",
    version,
    about = "Commonsense-aware emotion recognition for code-mixed dialogue"
)]
struct Cli {
    /// Seed for every random choice (initialisation, data order, dropout).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Key-value TOML file; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args, Default)]
struct Paths {
    /// Corpus JSONL.
    #[arg(long)]
    corpus: Option<PathBuf>,
    /// Directory of lexicon files; bundled lexicons otherwise.
    #[arg(long)]
    lexicons: Option<PathBuf>,
    /// Generator endpoint URL or fixture JSON.
    #[arg(long)]
    comet: Option<String>,
    /// Commonsense cache.
    #[arg(long)]
    cs: Option<PathBuf>,
    /// Output file or directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args, Default)]
struct Knobs {
    /// none, concat, dpa or coffee.
    #[arg(long)]
    strategy: Option<String>,
    /// Comma-separated effect types, e.g. `xWant,oReact`.
    #[arg(long)]
    attributes: Option<String>,
    /// all, eng or hin.
    #[arg(long)]
    filter: Option<String>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    patience: Option<usize>,
    #[arg(long)]
    context_window: Option<usize>,
    #[arg(long)]
    min_count: Option<usize>,
    #[arg(long)]
    d: Option<usize>,
    #[arg(long)]
    layers: Option<usize>,
    #[arg(long)]
    heads: Option<usize>,
    #[arg(long)]
    max_n: Option<usize>,
    #[arg(long)]
    max_m: Option<usize>,
    #[arg(long)]
    dropout: Option<f64>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Per-split dialogue, utterance and vocabulary counts.
    Stats {
        #[command(flatten)]
        paths: Paths,
        /// Emit JSON instead of a table.
        #[arg(long)]
        json: bool,
    },
    /// Run commonsense extraction over a corpus into a cache.
    Extract {
        #[command(flatten)]
        paths: Paths,
        /// joint or per-topic.
        #[arg(long, default_value = "joint")]
        mode: String,
        /// Also write every generator response seen as a fixture file.
        #[arg(long)]
        record: Option<PathBuf>,
    },
    /// Correlation of each commonsense attribute with the train labels.
    AnalyzeCorrelation {
        #[command(flatten)]
        paths: Paths,
        #[command(flatten)]
        knobs: Knobs,
    },
    /// Train a model; writes a checkpoint and training log to --out.
    Train {
        #[command(flatten)]
        paths: Paths,
        #[command(flatten)]
        knobs: Knobs,
    },
    /// Score a checkpoint on one split.
    Eval {
        #[command(flatten)]
        paths: Paths,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value = "test")]
        split: String,
    },
    /// Train and score each ablation condition.
    Ablate {
        #[command(flatten)]
        paths: Paths,
        #[command(flatten)]
        knobs: Knobs,
        /// Comma-separated strategies.
        #[arg(long)]
        strategies: Option<String>,
        /// Comma-separated restricted-language rows: eng, hin.
        #[arg(long)]
        languages: Option<String>,
        /// Comma-separated single-attribute coffee rows.
        #[arg(long)]
        single_attributes: Option<String>,
        /// One coffee row per effect type.
        #[arg(long)]
        sweep: bool,
    },
    /// Per-utterance gold and predicted labels.
    Predict {
        #[command(flatten)]
        paths: Paths,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value = "test")]
        split: String,
        /// Restrict to one dialogue.
        #[arg(long)]
        dialogue: Option<String>,
    },
}

/// Parse `argv` (program name first) and run. Returns the exit code:
/// 0 on success, 1 on a module error, 2 on a usage error.
pub fn run_cli<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let mut stdout = std::io::stdout().lock();
    match run(cli, &mut stdout) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

fn resolve(
    cli_seed: Option<u64>,
    config: Option<&Path>,
    paths: &Paths,
    knobs: &Knobs,
) -> Result<RunConfig> {
    let flags = RunConfig {
        corpus: paths.corpus.clone(),
        lexicons: paths.lexicons.clone(),
        comet: paths.comet.clone(),
        cs: paths.cs.clone(),
        out: paths.out.clone(),
        seed: cli_seed,
        strategy: knobs.strategy.clone(),
        attributes: knobs.attributes.clone(),
        filter: knobs.filter.clone(),
        epochs: knobs.epochs,
        batch_size: knobs.batch_size,
        lr: knobs.lr,
        patience: knobs.patience,
        context_window: knobs.context_window,
        min_count: knobs.min_count,
        d: knobs.d,
        layers: knobs.layers,
        heads: knobs.heads,
        max_n: knobs.max_n,
        max_m: knobs.max_m,
        dropout: knobs.dropout,
    };
    let base = match config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    let rc = base.overlay(flags);
    rc.validate()?;
    Ok(rc)
}

fn need<'a, T: ?Sized>(v: Option<&'a T>, flag: &str) -> Result<&'a T> {
    v.ok_or_else(|| Error::Config(format!("--{flag} is required")))
}

fn lexicons(rc: &RunConfig) -> Result<Lexicons> {
    match &rc.lexicons {
        Some(dir) => Lexicons::load_dir(dir),
        None => Ok(Lexicons::bundled()),
    }
}

fn corpus(rc: &RunConfig) -> Result<Vec<Dialogue>> {
    load_corpus(need(rc.corpus.as_deref(), "corpus")?)
}

fn cache(rc: &RunConfig) -> Result<Option<CsCache>> {
    rc.cs.as_deref().map(CsCache::load).transpose()
}

fn emit(out: &mut dyn Write, path: Option<&Path>, text: &str) -> Result<()> {
    match path {
        Some(p) => write_file(p, text),
        None => out
            .write_all(text.as_bytes())
            .map_err(|e| Error::io("<stdout>", e)),
    }
}

fn say(out: &mut dyn Write, line: &str) -> Result<()> {
    writeln!(out, "{line}").map_err(|e| Error::io("<stdout>", e))
}

fn split_of(insts: Vec<Instance>, split: Split) -> Vec<Instance> {
    insts.into_iter().filter(|i| i.split == split).collect()
}

fn list<T: std::str::FromStr<Err = Error>>(s: &str) -> Result<Vec<T>> {
    s.split(',')
        .map(str::trim)
        .filter(|t| !t.is_empty())
        .map(str::parse)
        .collect()
}

fn load_model(path: &Path, lex: Lexicons) -> Result<Model> {
    let mut model = Model::load(path)?;
    model.lexicons = lex;
    Ok(model)
}

fn run(cli: Cli, out: &mut dyn Write) -> Result<()> {
    let seed = cli.seed;
    let config = cli.config.as_deref();
    let none = Knobs::default();
    match cli.command {
        Command::Stats { paths, json } => {
            let rc = resolve(seed, config, &paths, &none)?;
            let stats = corpus_stats(&corpus(&rc)?, &lexicons(&rc)?)?;
            let text = if json {
                serde_json::to_string_pretty(&stats)? + "\n"
            } else {
                stats.to_table()
            };
            emit(out, rc.out.as_deref(), &text)
        }
        Command::Extract {
            paths,
            mode,
            record,
        } => {
            let rc = resolve(seed, config, &paths, &none)?;
            let mode: QueryMode = mode.parse()?;
            let target = match &rc.comet {
                Some(t) => t.clone(),
                None => std::env::var(COMET_URL_ENV).map_err(|_| {
                    Error::Config(format!("--comet or {COMET_URL_ENV} is required"))
                })?,
            };
            let client = CometClient::from_target(&target)?;
            let cache_path = need(rc.out.as_deref().or(rc.cs.as_deref()), "out")?;
            let corpus = corpus(&rc)?;
            let insts = crate::data::make_instances(&corpus, rc.train_config()?.context_window)?;
            let mut cache = CsCache::load_or_default(cache_path)?;
            let pipeline = Pipeline::new(lexicons(&rc)?);
            let summary = cache.extend(&insts, &pipeline, &client, mode)?;
            cache.save(cache_path)?;
            if let Some(p) = record {
                client.export_fixtures(&p)?;
            }
            say(
                out,
                &format!(
                    "extracted {} instance(s), {} already cached, {} without topics, {} generator request(s)",
                    summary.added,
                    summary.skipped,
                    summary.empty_topics,
                    client.requests_made()
                ),
            )
        }
        Command::AnalyzeCorrelation { paths, knobs } => {
            let rc = resolve(seed, config, &paths, &knobs)?;
            let corpus = corpus(&rc)?;
            let cs = cache(&rc)?.ok_or_else(|| Error::Config("--cs is required".into()))?;
            let tcfg = rc.train_config()?;
            let mut model = init_model(&corpus, &tcfg, rc.encoder_config()?, Some(&cs))?;
            model.lexicons = lexicons(&rc)?;
            let (train, _, _) = split_instances(&corpus, tcfg.context_window)?;
            let corr = attribute_correlations(&model, &train, &cs)?;
            emit(out, rc.out.as_deref(), &corr.to_csv())
        }
        Command::Train { paths, knobs } => {
            let rc = resolve(seed, config, &paths, &knobs)?;
            let dir = need(rc.out.as_deref(), "out")?;
            let corpus = corpus(&rc)?;
            let cs = cache(&rc)?;
            let tcfg = rc.train_config()?;
            let (train, val, _) = split_instances(&corpus, tcfg.context_window)?;
            if train.is_empty() {
                return Err(Error::EmptyInput("train split has no instances".into()));
            }
            let mut model = init_model(&corpus, &tcfg, rc.encoder_config()?, cs.as_ref())?;
            model.lexicons = lexicons(&rc)?;
            let outcome = train_model(&mut model, &train, &val, &tcfg, cs.as_ref())?;
            outcome.model.save(&dir.join("checkpoint.json"))?;
            write_file(&dir.join("train_log.csv"), outcome.log.to_csv())?;
            let best = &outcome.log.epochs[outcome.log.best_epoch - 1];
            say(
                out,
                &format!(
                    "trained {} epoch(s); best epoch {} with val weighted F1 {:.4}",
                    outcome.log.epochs.len(),
                    best.epoch,
                    best.val_weighted_f1
                ),
            )
        }
        Command::Eval {
            paths,
            checkpoint,
            split,
        } => {
            let rc = resolve(seed, config, &paths, &none)?;
            let model = load_model(&checkpoint, lexicons(&rc)?)?;
            let insts = split_of(
                crate::data::make_instances(&corpus(&rc)?, rc.train_config()?.context_window)?,
                split.parse()?,
            );
            let cs = cache(&rc)?;
            let (report, preds) = evaluate(&model, &insts, cs.as_ref())?;
            match rc.out.as_deref() {
                Some(dir) => {
                    write_file(&dir.join("report.json"), report.to_json()?)?;
                    write_file(&dir.join("report.csv"), report.to_csv())?;
                    if preds.iter().any(|p| p.lambda.is_some()) {
                        write_file(&dir.join("lambdas.csv"), lambda_table(&preds))?;
                    }
                    say(out, &format!("weighted F1 {:.4}", report.weighted_f1))
                }
                None => emit(out, None, &report.to_csv()),
            }
        }
        Command::Ablate {
            paths,
            knobs,
            strategies,
            languages,
            single_attributes,
            sweep,
        } => {
            let rc = resolve(seed, config, &paths, &knobs)?;
            let (corpus, cs) = match &rc.corpus {
                Some(_) => (corpus(&rc)?, cache(&rc)?),
                None => {
                    eprintln!("no --corpus given; using the bundled planted-commonsense corpus");
                    let (c, cs) = bundled_planted()?;
                    (
                        c,
                        Some(
                            rc.cs
                                .as_deref()
                                .map(CsCache::load)
                                .transpose()?
                                .unwrap_or(cs),
                        ),
                    )
                }
            };
            let any_group =
                strategies.is_some() || languages.is_some() || single_attributes.is_some() || sweep;
            let plan = if any_group {
                AblationPlan {
                    strategies: strategies
                        .as_deref()
                        .map(list::<FusionStrategy>)
                        .transpose()?
                        .unwrap_or_default(),
                    languages: languages
                        .as_deref()
                        .map(list::<LanguageFilter>)
                        .transpose()?
                        .unwrap_or_default(),
                    single_attributes: single_attributes
                        .as_deref()
                        .map(parse_selection)
                        .transpose()?
                        .unwrap_or_default(),
                    sweep,
                }
            } else {
                AblationPlan::default()
            };
            let table = run_ablation(
                &corpus,
                &rc.train_config()?,
                &rc.encoder_config()?,
                cs.as_ref(),
                &plan,
            )?;
            emit(out, rc.out.as_deref(), &table.to_csv())
        }
        Command::Predict {
            paths,
            checkpoint,
            split,
            dialogue,
        } => {
            let rc = resolve(seed, config, &paths, &none)?;
            let model = load_model(&checkpoint, lexicons(&rc)?)?;
            let mut insts = split_of(
                crate::data::make_instances(&corpus(&rc)?, rc.train_config()?.context_window)?,
                split.parse()?,
            );
            if let Some(d) = &dialogue {
                insts.retain(|i| &i.dialogue_id == d);
                if insts.is_empty() {
                    return Err(Error::EmptyInput(format!(
                        "no instances for dialogue `{d}`"
                    )));
                }
            }
            let (_, preds) = evaluate(&model, &insts, cache(&rc)?.as_ref())?;
            emit(out, rc.out.as_deref(), &prediction_table(&insts, &preds))
        }
    }
}
