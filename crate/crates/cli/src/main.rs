use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use proactive_switch::corpus::{self, by_split, synth_generate, CorpusFormat, Dialogue, Split, SynthSpec};
use proactive_switch::nn::AdapterVariant;
use proactive_switch::pipeline::{
    build_vocabulary, run_batch, train_base, train_extension, BatchOptions, GeneratorRecipe, Pipeline, PromptSource,
    SessionState,
};
use proactive_switch::templates::{self, augment, TemplateBank};
use proactive_switch::tie::{evaluate_tie, examples_from, train_tie, ExtractMode, TieConfig, TieModel};
use proactive_switch::tsg::{evaluate_generator, GenEvalOptions, Generator, PromptKind, TsgMode};
use proactive_switch_service::{serve, AppState, ChatEngine, ServeConfig, DEFAULT_TTL};
use rand::SeedableRng;
use serde::{Deserialize, Serialize};

const HOME_ENV: &str = "PROACTIVE_SWITCH_HOME";

#[derive(Parser)]
#[command(name = "proactive-switch", version, about = "Proactive chit-chat to task-oriented switching")]
struct Cli {
    /// Seed for every random choice; overrides the config file.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// TOML or JSON file with `seed`, `[tie]` and `[generator]` sections.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic corpus.
    Synth {
        #[arg(long, default_value_t = 500)]
        n: usize,
        /// JSON synthesis spec replacing the built-in one.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Validate a FusedChat-style file and write the accepted dialogues.
    Ingest {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Append template transition sentences at every transition turn.
    Augment {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        templates: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = KindArg::Domain)]
        kind: KindArg,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the transition info extractor.
    TrainTie {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, overrides_with = "no_crf")]
        crf: bool,
        #[arg(long)]
        no_crf: bool,
        /// Domain and slot classifiers only.
        #[arg(long)]
        no_slot_filling: bool,
        #[arg(long)]
        templates: Option<PathBuf>,
        #[command(flatten)]
        train: TrainFlags,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train the unified generator and extend it with the transition sentence generator.
    TrainTsg {
        #[arg(long)]
        corpus: PathBuf,
        /// Start from this unified checkpoint instead of training one.
        #[arg(long)]
        base: Option<PathBuf>,
        /// Also write the unified checkpoint here.
        #[arg(long)]
        base_out: Option<PathBuf>,
        #[arg(long, value_enum)]
        adapter: Option<AdapterArg>,
        #[arg(long)]
        bottleneck: Option<usize>,
        /// Train without the transition prompt in the input.
        #[arg(long)]
        no_prompt: bool,
        #[arg(long)]
        templates: Option<PathBuf>,
        #[command(flatten)]
        train: TrainFlags,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Score an extractor on the test split.
    EvalTie {
        #[arg(long)]
        tie: Option<PathBuf>,
        #[arg(long)]
        test: PathBuf,
        /// Decode by per-token argmax instead of Viterbi.
        #[arg(long)]
        no_crf: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Score a generator on normal and transition turns of the test split.
    EvalGen {
        #[arg(long)]
        tsg: Option<PathBuf>,
        #[arg(long)]
        test: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Extractor output prompts the generator at every transition turn.
    EvalCombined {
        #[arg(long)]
        tie: Option<PathBuf>,
        #[arg(long)]
        tsg: Option<PathBuf>,
        #[arg(long)]
        test: PathBuf,
        /// Prompt with gold annotations instead of extractor output.
        #[arg(long)]
        gold_prompts: bool,
        /// Also score chit-chat diversity and task BLEU.
        #[arg(long)]
        normal_turns: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Interactive session in the terminal.
    Chat {
        #[arg(long)]
        tie: Option<PathBuf>,
        #[arg(long)]
        tsg: Option<PathBuf>,
    },
    /// HTTP session service.
    Serve {
        #[arg(long)]
        tie: Option<PathBuf>,
        #[arg(long)]
        tsg: Option<PathBuf>,
        #[arg(long, env = "PROACTIVE_SWITCH_HOST", default_value = "127.0.0.1")]
        host: String,
        #[arg(long, env = "PROACTIVE_SWITCH_PORT", default_value_t = 8080)]
        port: u16,
        /// Allowed browser origin; repeatable. Any origin when omitted.
        #[arg(long)]
        cors_origin: Vec<String>,
        #[arg(long, default_value_t = DEFAULT_TTL.as_secs() / 60)]
        ttl_minutes: u64,
    },
}

#[derive(Args, Clone, Default)]
struct TrainFlags {
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    patience: Option<usize>,
    #[arg(long)]
    d_model: Option<usize>,
}

#[derive(Clone, Copy, ValueEnum)]
enum KindArg {
    Domain,
    DomainSlotValue,
}

#[derive(Clone, Copy, ValueEnum)]
enum AdapterArg {
    Houlsby,
    Pfeiffer,
    /// No adapters; every base weight trains.
    None,
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(default)]
struct Config {
    seed: Option<u64>,
    tie: TieConfig,
    generator: GeneratorRecipe,
}

impl Config {
    fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else { return Ok(Self::default()) };
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let is_json = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"));
        let cfg = if is_json {
            serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?
        } else {
            toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?
        };
        Ok(cfg)
    }
}

fn home_path(explicit: Option<PathBuf>, file: &str) -> Result<PathBuf> {
    if let Some(p) = explicit {
        return Ok(p);
    }
    match std::env::var_os(HOME_ENV) {
        Some(home) => Ok(PathBuf::from(home).join(file)),
        None => bail!("no --{} given and {HOME_ENV} is not set", file.trim_end_matches(".ckpt")),
    }
}

fn load_corpus(path: &Path) -> Result<Vec<Dialogue>> {
    let report = corpus::ingest(path, CorpusFormat::FusedchatJson).with_context(|| format!("loading {}", path.display()))?;
    for r in &report.rejected {
        tracing::warn!(dialogue = %r.dialogue, reason = %r.reason, "rejected");
    }
    Ok(report.dialogues)
}

fn load_bank(path: Option<&Path>) -> Result<TemplateBank> {
    match path {
        Some(p) => templates::load_bank(p).with_context(|| format!("loading templates {}", p.display())),
        None => Ok(TemplateBank::default()),
    }
}

fn write_json<T: Serialize>(value: &T, out: Option<&Path>) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    match out {
        Some(p) => std::fs::write(p, text).with_context(|| format!("writing {}", p.display()))?,
        None => println!("{text}"),
    }
    Ok(())
}

fn load_pipeline(tie: Option<PathBuf>, tsg: Option<PathBuf>, seed: u64) -> Result<Pipeline> {
    let tie = home_path(tie, "tie.ckpt")?;
    let tsg = home_path(tsg, "tsg.ckpt")?;
    Pipeline::load(&tie, &tsg, seed)
        .with_context(|| format!("loading checkpoints {} and {}", tie.display(), tsg.display()))
}

fn run(cli: Cli) -> Result<()> {
    let mut config = Config::load(cli.config.as_deref())?;
    let seed = cli.seed.or(config.seed).unwrap_or(0);
    config.tie.seed = seed;
    config.generator = config.generator.with_seed(seed);
    match cli.command {
        Command::Synth { n, spec, out } => {
            let mut spec = match spec {
                Some(p) => serde_json::from_str(&std::fs::read_to_string(&p)?)
                    .with_context(|| format!("parsing {}", p.display()))?,
                None => SynthSpec::default(),
            };
            spec.dialogues = n;
            let dialogues = synth_generate(&spec, seed)?;
            corpus::save(&dialogues, &out)?;
            eprintln!("wrote {} dialogues to {}", dialogues.len(), out.display());
        }
        Command::Ingest { input, out } => {
            let report = corpus::ingest(&input, CorpusFormat::FusedchatJson)?;
            for r in &report.rejected {
                eprintln!("rejected {}: {}", r.dialogue, r.reason);
            }
            corpus::save(&report.dialogues, &out)?;
            eprintln!("accepted {}, rejected {}", report.dialogues.len(), report.rejected.len());
        }
        Command::Augment { corpus: path, templates, kind, out } => {
            let bank = load_bank(templates.as_deref())?;
            let kind = match kind {
                KindArg::Domain => PromptKind::DomainOnly,
                KindArg::DomainSlotValue => PromptKind::DomainSlotValue,
            };
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let mut augmented = Vec::new();
            for d in load_corpus(&path)? {
                let eligible = !d.transition.domain.is_unk()
                    && (kind == PromptKind::DomainOnly || (!d.transition.slot.is_unk() && d.transition.value.is_some()));
                if eligible {
                    augmented.push(augment(&d, &bank, kind, &mut rng)?.dialogue);
                } else {
                    augmented.push(d);
                }
            }
            corpus::save(&augmented, &out)?;
        }
        Command::TrainTie { corpus: path, crf: _, no_crf, no_slot_filling, templates, train, out } => {
            let mut cfg = config.tie;
            cfg.use_crf = !no_crf;
            cfg.use_slot_filling = !no_slot_filling;
            if let Some(v) = train.epochs { cfg.max_epochs = v }
            if let Some(v) = train.lr { cfg.lr = v }
            if let Some(v) = train.batch_size { cfg.batch_size = v }
            if let Some(v) = train.patience { cfg.patience = v }
            if let Some(v) = train.d_model { cfg.encoder.d_model = v }
            let dialogues = load_corpus(&path)?;
            let (tr, va) = (by_split(&dialogues, Split::Train), by_split(&dialogues, Split::Valid));
            let tok = build_vocabulary(&tr, &load_bank(templates.as_deref())?);
            let (te, ve) = (examples_from(&tr, &tok, cfg.max_tokens), examples_from(&va, &tok, cfg.max_tokens));
            let (model, report) = train_tie(&te, &ve, tok, cfg)?;
            let out = home_path(out, "tie.ckpt")?;
            model.save(&out)?;
            eprintln!("best epoch {} (semantic acc {:.4}); wrote {}", report.best_epoch, report.best_metric, out.display());
        }
        Command::TrainTsg { corpus: path, base, base_out, adapter, bottleneck, no_prompt, templates, train, out } => {
            let mut recipe = config.generator;
            match adapter {
                Some(AdapterArg::None) => recipe.mode = TsgMode::FullFinetune,
                Some(AdapterArg::Houlsby) => recipe.adapter.variant = AdapterVariant::Houlsby,
                Some(AdapterArg::Pfeiffer) => recipe.adapter.variant = AdapterVariant::Pfeiffer,
                None => {}
            }
            if let Some(b) = bottleneck { recipe.adapter.bottleneck = b }
            if no_prompt { recipe.prompted = false }
            for t in [&mut recipe.unified, &mut recipe.tsg] {
                if let Some(v) = train.epochs { t.max_epochs = v }
                if let Some(v) = train.lr { t.lr = v }
                if let Some(v) = train.batch_size { t.batch_size = v }
                if let Some(v) = train.patience { t.patience = v }
            }
            if let Some(v) = train.d_model { recipe.decoder.d_model = v }
            let dialogues = load_corpus(&path)?;
            let (tr, va) = (by_split(&dialogues, Split::Train), by_split(&dialogues, Split::Valid));
            let bank = load_bank(templates.as_deref())?;
            let base = match base {
                Some(p) => Generator::load(&p).with_context(|| format!("loading base {}", p.display()))?,
                None => {
                    let tok = build_vocabulary(&tr, &bank);
                    let (g, report) = train_base(&tr, &va, &bank, tok, &recipe)?;
                    eprintln!("unified: best epoch {} (valid loss {:.4})", report.best_epoch, report.best_valid_loss);
                    g
                }
            };
            if let Some(p) = base_out {
                base.save(&p)?;
            }
            let (g, report) = train_extension(&base, &tr, &va, &bank, &recipe)?;
            let out = home_path(out, "tsg.ckpt")?;
            g.save(&out)?;
            eprintln!(
                "transition generator: best epoch {}, trainable {:.2}% of {} parameters; wrote {}",
                report.best_epoch,
                100.0 * report.trainable_fraction,
                report.total_params,
                out.display()
            );
        }
        Command::EvalTie { tie, test, no_crf, out } => {
            let model = TieModel::load(home_path(tie, "tie.ckpt")?)?;
            let dialogues = by_split(&load_corpus(&test)?, Split::Test);
            let examples = examples_from(&dialogues, &model.tokenizer, model.config.max_tokens);
            let mode = if no_crf { ExtractMode::WithoutCrf } else { model.default_mode() };
            let mut ev = evaluate_tie(&model, &examples, mode)?;
            ev.records.clear();
            write_json(&ev, out.as_deref())?;
        }
        Command::EvalGen { tsg, test, out } => {
            let g = Generator::load(home_path(tsg, "tsg.ckpt")?)?;
            let dialogues = by_split(&load_corpus(&test)?, Split::Test);
            let ev = evaluate_generator(&g, &dialogues, GenEvalOptions { seed, ..Default::default() })?;
            write_json(&ev, out.as_deref())?;
        }
        Command::EvalCombined { tie, tsg, test, gold_prompts, normal_turns, out } => {
            let p = load_pipeline(tie, tsg, seed)?;
            let dialogues = by_split(&load_corpus(&test)?, Split::Test);
            let opts = BatchOptions {
                seed,
                prompt_source: if gold_prompts { PromptSource::Gold } else { PromptSource::Tie },
                normal_turns,
            };
            let report = run_batch(&dialogues, &p.tie, &p.generator, opts)?;
            eprint!("{}", report.table());
            match out {
                Some(path) => report.save(&path)?,
                None => println!("{}", report.to_json()?),
            }
        }
        Command::Chat { tie, tsg } => chat(load_pipeline(tie, tsg, seed)?)?,
        Command::Serve { tie, tsg, host, port, cors_origin, ttl_minutes } => {
            let addr = format!("{host}:{port}").parse().with_context(|| format!("bad address {host}:{port}"))?;
            let tie = home_path(tie, "tie.ckpt")?;
            let tsg = home_path(tsg, "tsg.ckpt")?;
            let app = AppState::new(None, Duration::from_secs(ttl_minutes * 60));
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(async move {
                let loader = app.clone();
                tokio::task::spawn_blocking(move || match Pipeline::load(&tie, &tsg, seed) {
                    Ok(p) => {
                        loader.set_engine(Arc::new(p) as Arc<dyn ChatEngine>);
                        tracing::info!("models loaded");
                    }
                    Err(e) => tracing::error!(error = %e, "failed to load models; serving 503"),
                });
                serve(app, ServeConfig { addr, cors_origins: cors_origin }).await
            })?;
        }
    }
    Ok(())
}

fn chat(p: Pipeline) -> Result<()> {
    let mut state = SessionState::new("terminal");
    let stdin = std::io::stdin();
    let mut stdout = std::io::stdout();
    eprintln!("type a message; empty line or EOF quits");
    loop {
        write!(stdout, "you> ")?;
        stdout.flush()?;
        let mut line = String::new();
        if stdin.lock().read_line(&mut line)? == 0 || line.trim().is_empty() {
            break;
        }
        let out = p.step(&mut state, line.trim())?;
        writeln!(stdout, "sys> {}", out.response)?;
        if let Some(s) = out.transition_sentence {
            writeln!(stdout, "  >> {s}")?;
            writeln!(stdout, "     [{}]", out.prompt.unwrap_or_default())?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "warn".into()),
        )
        .with_writer(std::io::stderr)
        .init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
