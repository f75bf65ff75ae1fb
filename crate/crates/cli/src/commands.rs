use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use hubtext_core::hubtrain::HubCheckpoint;
use hubtext_core::inverter::write_hypothesis_dump;
use hubtext_core::localsearch::write_trace;
use hubtext_core::report::{
    distribution_export, evaluate_baselines, evaluate_hypothesis, format_table, leaderboard_insert,
    transfer_eval, LeaderboardEntry,
};
use hubtext_core::toy::{toy_corpus, ToyConfig};
use hubtext_core::{
    backend_from_spec, invert_embedding, load_hypotheses, local_search, select_best, train_hub,
    Dataset, Error, MetricBackend, Provenance, SearchReport, SearchResult, Selection, TokenId,
    TokenSequence, Vocabulary,
};
use serde::{Deserialize, Serialize};

use crate::args::{
    Command, DecodeArgs, EvaluateArgs, LeaderboardArgs, MakeToyArgs, SearchArgs, StepArgs,
    StepFlags, TransferArgs,
};
use crate::config::RunConfig;
use crate::failure::{At, Failure, Stage};

pub const CHECKPOINT: &str = "checkpoint.json";
pub const HYPOTHESES: &str = "hypotheses.jsonl";
pub const DECODED: &str = "decoded.json";
pub const TRACE: &str = "trace.jsonl";
pub const RESULT: &str = "result.json";

/// The decoded hub text handed from step 2 to step 3.
#[derive(Debug, Serialize, Deserialize)]
pub struct DecodedHub {
    pub ids: Vec<TokenId>,
    pub surface: String,
    /// Index of the chosen text in hypotheses.jsonl.
    pub index: usize,
    pub tune_total: f64,
    pub tune_mean: f64,
    pub num_hypotheses: usize,
    pub truncated: bool,
    pub seed: u64,
    pub config_hash: String,
}

#[derive(Serialize)]
struct TransferArtifact<'a> {
    seed: u64,
    config_hash: &'a str,
    reports: &'a [SearchReport],
}

#[derive(Deserialize)]
struct SystemScore {
    name: String,
    score: f64,
}

#[derive(Deserialize)]
struct StoredIds {
    ids: Vec<TokenId>,
}

pub fn run(command: Command) -> Result<(), Failure> {
    match command {
        Command::Pipeline(args) => pipeline(args),
        Command::HubTrain(args) => hub_train(args),
        Command::HubDecode(args) => hub_decode(args),
        Command::LocalSearch(args) => local_search_cmd(args),
        Command::Evaluate(args) => evaluate(args),
        Command::Transfer(args) => transfer(args),
        Command::Leaderboard(args) => leaderboard(args),
        Command::MakeToy(args) => make_toy(args),
    }
}

/// Worker count requested by a command, if any.
pub fn requested_threads(command: &Command) -> Result<Option<usize>, Failure> {
    let (common, step) = match command {
        Command::Pipeline(a) | Command::HubTrain(a) => (&a.common, Some(&a.step)),
        Command::HubDecode(a) => (&a.common, Some(&a.step)),
        Command::LocalSearch(a) => (&a.common, Some(&a.step)),
        Command::Evaluate(a) => (&a.common, Some(&a.step)),
        Command::Transfer(a) => (&a.common, Some(&a.step)),
        Command::Leaderboard(a) => (&a.common, None),
        Command::MakeToy(_) => return Ok(None),
    };
    if common.threads.is_some() || common.config.is_none() {
        return Ok(common.threads);
    }
    let default = StepFlags::default();
    let mut common = common.clone();
    // A config file may name a backend that needs --vocab; threads are all we want here.
    common.backend.get_or_insert_with(|| "remote:unused".into());
    Ok(RunConfig::resolve(&common, step.unwrap_or(&default))?.threads)
}

struct Env {
    cfg: RunConfig,
    hash: String,
    backend: Arc<dyn MetricBackend>,
}

impl Env {
    fn open(common: &crate::args::CommonArgs, step: &StepFlags) -> Result<Self, Failure> {
        let cfg = RunConfig::resolve(common, step)?;
        let hash = cfg.config_hash()?;
        let vocab = match &cfg.vocab {
            Some(path) => Some(
                Vocabulary::from_file(path)
                    .map_err(|e| e.context(path.display().to_string()))
                    .at(Stage::Corpus)?,
            ),
            None => None,
        };
        let backend = backend_from_spec(&cfg.backend, vocab).at(Stage::Backend)?;
        log::info!("backend {} (config {hash})", backend.info().name);
        Ok(Self { cfg, hash, backend })
    }

    fn provenance(&self) -> Provenance {
        Provenance {
            seed: self.cfg.seed,
            config_hash: self.hash.clone(),
        }
    }

    fn backend(&self) -> &dyn MetricBackend {
        &*self.backend
    }

    fn dataset(&self, path: Option<&Path>, flag: &str) -> Result<Dataset, Failure> {
        let path = path
            .ok_or_else(|| Error::Config(format!("{flag} is required for this command")))
            .at(Stage::Config)?;
        let mut data = Dataset::load_parallel(path, self.backend.vocabulary())
            .map_err(|e| match e {
                Error::Io { .. } => e,
                e => e.context(path.display().to_string()),
            })
            .at(Stage::Corpus)?;
        if data.is_empty() {
            return Err(Error::Config(format!("{}: no cases", path.display()))).at(Stage::Corpus);
        }
        data.cache_embeddings(self.backend()).at(Stage::Backend)?;
        Ok(data)
    }

    fn tune(&self) -> Result<Dataset, Failure> {
        self.dataset(self.cfg.tune.as_deref(), "--tune")
    }

    fn test(&self) -> Result<Dataset, Failure> {
        self.dataset(self.cfg.test.as_deref(), "--test")
    }

    fn out_dir(&self) -> Result<(), Failure> {
        let out = &self.cfg.out;
        fs::create_dir_all(out)
            .map_err(|source| Error::Io {
                path: out.clone(),
                source,
            })
            .at(Stage::Config)
    }

    fn train(&self, tune: &Dataset) -> Result<HubCheckpoint, Failure> {
        let state = train_hub(tune, self.backend(), &self.cfg.optimizer).at(Stage::Training)?;
        let mut ckpt = HubCheckpoint::from_state(&state, self.cfg.seed, &self.backend.info().name);
        ckpt.config_hash = self.hash.clone();
        let path = self.cfg.artifact(CHECKPOINT);
        ckpt.save(&path).at(Stage::Training)?;
        let history = &state.objective_history;
        println!(
            "hub training: mean tune score {:.4}% -> {:.4}% over {} steps",
            100.0 * history[0],
            100.0 * history[history.len() - 1],
            state.step
        );
        println!("  wrote {}", path.display());
        Ok(ckpt)
    }

    fn decode(&self, tune: &Dataset, ckpt: &HubCheckpoint) -> Result<Selection, Failure> {
        let target = ckpt.embedding().at(Stage::Inversion)?;
        let set =
            invert_embedding(&target, self.backend(), &self.cfg.inverter).at(Stage::Inversion)?;
        let selection = select_best(&set, tune, self.backend()).at(Stage::Inversion)?;
        let dump = self.cfg.artifact(HYPOTHESES);
        write_hypothesis_dump(
            &dump,
            &set,
            &selection.totals,
            tune.len(),
            self.cfg.seed,
            &self.hash,
        )
        .at(Stage::Inversion)?;
        let decoded = DecodedHub {
            ids: selection.hypothesis.ids.clone(),
            surface: selection.hypothesis.surface.clone(),
            index: selection.index,
            tune_total: selection.total_score,
            tune_mean: selection.total_score / tune.len() as f64,
            num_hypotheses: set.len(),
            truncated: set.truncated,
            seed: self.cfg.seed,
            config_hash: self.hash.clone(),
        };
        let path = self.cfg.artifact(DECODED);
        write_json(&path, &decoded, Stage::Inversion)?;
        if set.truncated {
            println!(
                "hub decoding: only {} distinct texts found (asked for {})",
                set.len(),
                self.cfg.inverter.num_hypotheses
            );
        }
        println!(
            "hub decoding: best of {} texts is #{} with mean tune score {:.4}%: {:?}",
            set.len(),
            selection.index,
            100.0 * decoded.tune_mean,
            decoded.surface
        );
        println!("  wrote {}", dump.display());
        println!("  wrote {}", path.display());
        Ok(selection)
    }

    fn search(&self, tune: &Dataset, init: &TokenSequence) -> Result<SearchResult, Failure> {
        let start = Instant::now();
        let outcome =
            local_search(init, tune, self.backend(), &self.cfg.search).at(Stage::Search)?;
        let wall_seconds = start.elapsed().as_secs_f64();
        let trace_path = self.cfg.artifact(TRACE);
        write_trace(&trace_path, &outcome.trace, self.cfg.seed, &self.hash).at(Stage::Search)?;
        let result = SearchResult {
            ids: outcome.best.ids.clone(),
            surface: outcome.best.surface.clone(),
            objective: outcome.objective,
            epochs: outcome.trace.epochs,
            candidates_scored: outcome.trace.total_candidates_scored,
            wall_seconds,
            seed: self.cfg.seed,
            config_hash: self.hash.clone(),
        };
        let path = self.cfg.artifact(RESULT);
        write_json(&path, &result, Stage::Search)?;
        println!(
            "local search: summed tune score {:.6} -> {:.6} in {} epochs, {} replacements, {} candidates ({:.2}s): {:?}",
            outcome.trace.initial_objective,
            outcome.objective,
            outcome.trace.epochs,
            outcome.trace.replacements.len(),
            outcome.trace.total_candidates_scored,
            wall_seconds,
            result.surface
        );
        println!("  wrote {}", trace_path.display());
        println!("  wrote {}", path.display());
        Ok(result)
    }

    fn report(
        &self,
        label: &str,
        h: &TokenSequence,
        data: &Dataset,
        file: &str,
    ) -> Result<SearchReport, Failure> {
        let mut report = evaluate_hypothesis(label, h, data, self.backend()).at(Stage::Report)?;
        report.provenance = Some(self.provenance());
        let path = self.cfg.artifact(file);
        report.save(&path).at(Stage::Report)?;
        println!("  wrote {}", path.display());
        Ok(report)
    }

    fn stored_sequence(&self, path: &Path, producer: &str) -> Result<TokenSequence, Failure> {
        if !path.exists() {
            return Err(Error::Config(format!(
                "{} not found; run `hubtext {producer}` first or pass the text explicitly",
                path.display()
            )))
            .at(Stage::Config);
        }
        let text = read(path)?;
        let stored: StoredIds = serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))
            .at(Stage::Config)?;
        self.backend.sequence(stored.ids).at(Stage::Config)
    }
}

fn read(path: &Path) -> Result<String, Failure> {
    fs::read_to_string(path)
        .map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })
        .at(Stage::Config)
}

fn write_json<T: Serialize>(path: &Path, value: &T, stage: Stage) -> Result<(), Failure> {
    let text = serde_json::to_string_pretty(value)
        .map_err(Error::from)
        .at(stage)?;
    fs::write(path, text + "\n")
        .map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })
        .at(stage)
}

fn pipeline(args: StepArgs) -> Result<(), Failure> {
    let env = Env::open(&args.common, &args.step)?;
    let tune = env.tune()?;
    let test = env.test()?;
    env.out_dir()?;

    let ckpt = env.train(&tune)?;
    let selection = env.decode(&tune, &ckpt)?;
    let result = env.search(&tune, &selection.hypothesis)?;
    let hub = env.backend.sequence(result.ids).at(Stage::Report)?;

    println!("reports:");
    let decode_test = env.report(
        "decode",
        &selection.hypothesis,
        &test,
        "report_decode_test.json",
    )?;
    let search_test = env.report("local-search", &hub, &test, "report_search_test.json")?;
    env.report(
        "decode",
        &selection.hypothesis,
        &tune,
        "report_decode_tune.json",
    )?;
    env.report("local-search", &hub, &tune, "report_search_tune.json")?;
    let csv = env.cfg.artifact("distribution.csv");
    let json = env.cfg.artifact("distribution.json");
    distribution_export(
        &[decode_test.clone(), search_test.clone()],
        &csv,
        &json,
        Some(env.provenance()),
    )
    .at(Stage::Report)?;
    println!("  wrote {}", csv.display());
    println!("  wrote {}", json.display());

    println!("\nscores of the single hub text on {}:", test.name);
    print!(
        "{}",
        format_table(&[("decode", &decode_test), ("local-search", &search_test)])
    );
    Ok(())
}

fn hub_train(args: StepArgs) -> Result<(), Failure> {
    let env = Env::open(&args.common, &args.step)?;
    let tune = env.tune()?;
    env.out_dir()?;
    env.train(&tune)?;
    Ok(())
}

fn hub_decode(args: DecodeArgs) -> Result<(), Failure> {
    let env = Env::open(&args.common, &args.step)?;
    let path = args
        .checkpoint
        .clone()
        .unwrap_or_else(|| env.cfg.artifact(CHECKPOINT));
    if !path.exists() {
        return Err(Error::Config(format!(
            "{} not found; run `hubtext hub-train` first or pass --checkpoint",
            path.display()
        )))
        .at(Stage::Config);
    }
    let ckpt = HubCheckpoint::load(&path)
        .map_err(|e| e.context(path.display().to_string()))
        .at(Stage::Config)?;
    let tune = env.tune()?;
    env.out_dir()?;
    env.decode(&tune, &ckpt)?;
    Ok(())
}

fn local_search_cmd(args: SearchArgs) -> Result<(), Failure> {
    let env = Env::open(&args.common, &args.step)?;
    let init = match (&args.init, &args.init_file) {
        (Some(text), _) => env.backend.vocabulary().tokenize(text),
        (None, Some(path)) => init_from_file(&env, path)?,
        (None, None) => env.stored_sequence(&env.cfg.artifact(DECODED), "hub-decode")?,
    };
    let tune = env.tune()?;
    env.out_dir()?;
    env.search(&tune, &init)?;
    Ok(())
}

/// A JSON artifact with an `ids` field (decoded.json, result.json), or else
/// plain text that is tokenized.
fn init_from_file(env: &Env, path: &Path) -> Result<TokenSequence, Failure> {
    let text = read(path)?;
    match serde_json::from_str::<StoredIds>(&text) {
        Ok(stored) => env.backend.sequence(stored.ids).at(Stage::Config),
        Err(_) => {
            let line = text.strip_suffix('\n').unwrap_or(&text);
            Ok(env.backend.vocabulary().tokenize(line))
        }
    }
}

fn evaluate(args: EvaluateArgs) -> Result<(), Failure> {
    let env = Env::open(&args.common, &args.step)?;
    let data_path = args
        .data
        .clone()
        .or_else(|| env.cfg.test.clone())
        .or_else(|| env.cfg.tune.clone());
    let data = env.dataset(data_path.as_deref(), "--data (or --test)")?;
    let mut report = match (&args.hyp, &args.baselines) {
        (_, Some(path)) => {
            let hyps = load_hypotheses(path)
                .map_err(|e| match e {
                    Error::Io { .. } => e,
                    e => e.context(path.display().to_string()),
                })
                .at(Stage::Corpus)?;
            evaluate_baselines(&args.label, &hyps, &data, env.backend()).at(Stage::Report)?
        }
        (Some(text), None) => {
            let h = env.backend.vocabulary().tokenize(text);
            evaluate_hypothesis(&args.label, &h, &data, env.backend()).at(Stage::Report)?
        }
        (None, None) => {
            let h = env.stored_sequence(&env.cfg.artifact(RESULT), "local-search")?;
            evaluate_hypothesis(&args.label, &h, &data, env.backend()).at(Stage::Report)?
        }
    };
    report.provenance = Some(env.provenance());
    let path = args
        .report
        .clone()
        .unwrap_or_else(|| env.cfg.artifact(&format!("report_{}.json", args.label)));
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)
            .map_err(|source| Error::Io {
                path: parent.to_path_buf(),
                source,
            })
            .at(Stage::Report)?;
    }
    report.save(&path).at(Stage::Report)?;
    print!("{}", format_table(&[(args.label.as_str(), &report)]));
    println!("  wrote {}", path.display());
    Ok(())
}

fn transfer(args: TransferArgs) -> Result<(), Failure> {
    let env = Env::open(&args.common, &args.step)?;
    let h = match &args.hyp {
        Some(text) => env.backend.vocabulary().tokenize(text),
        None => env.stored_sequence(&env.cfg.artifact(RESULT), "local-search")?,
    };
    let datasets = args
        .datasets
        .iter()
        .map(|p| env.dataset(Some(p), "--datasets"))
        .collect::<Result<Vec<_>, _>>()?;
    let mut reports = transfer_eval("transfer", &h, &datasets, env.backend()).at(Stage::Report)?;
    for r in &mut reports {
        r.provenance = Some(env.provenance());
    }
    env.out_dir()?;
    let path = env.cfg.artifact("transfer.json");
    write_json(
        &path,
        &TransferArtifact {
            seed: env.cfg.seed,
            config_hash: &env.hash,
            reports: &reports,
        },
        Stage::Report,
    )?;
    let rows: Vec<(&str, &SearchReport)> =
        reports.iter().map(|r| (r.dataset.as_str(), r)).collect();
    print!("{}", format_table(&rows));
    println!("  wrote {}", path.display());
    Ok(())
}

fn leaderboard(args: LeaderboardArgs) -> Result<(), Failure> {
    let text = read(&args.systems)?;
    let systems: Vec<SystemScore> = serde_json::from_str(&text)
        .map_err(|e| Error::Report(format!("{}: {e}", args.systems.display())))
        .at(Stage::Report)?;
    let hub_score = match (args.hub_score, &args.hub_report) {
        (Some(s), _) => s,
        (None, Some(path)) => SearchReport::load(path).at(Stage::Report)?.mean,
        (None, None) => {
            return Err(Error::Config("pass --hub-score or --hub-report".into())).at(Stage::Config)
        }
    };
    let pairs: Vec<(String, f64)> = systems.into_iter().map(|s| (s.name, s.score)).collect();
    let board: Vec<LeaderboardEntry> =
        leaderboard_insert(&pairs, &args.hub_name, hub_score).at(Stage::Report)?;
    let out = args
        .common
        .out
        .clone()
        .unwrap_or_else(|| PathBuf::from(crate::config::DEFAULT_OUT));
    fs::create_dir_all(&out)
        .map_err(|source| Error::Io {
            path: out.clone(),
            source,
        })
        .at(Stage::Report)?;
    let path = out.join("leaderboard.json");
    write_json(&path, &board, Stage::Report)?;
    println!("{:>4}  {:<24} {:>8}", "rank", "system", "score");
    for e in &board {
        let mark = if e.is_hub { " *" } else { "" };
        println!("{:>4}  {:<24} {:>8.1}{mark}", e.rank, e.name, e.score);
    }
    println!("  wrote {}", path.display());
    Ok(())
}

fn make_toy(args: MakeToyArgs) -> Result<(), Failure> {
    let corpus = toy_corpus(&ToyConfig {
        vocab_size: args.vocab_size,
        tune_pairs: args.tune_pairs,
        test_pairs: args.test_pairs,
        min_len: args.min_len,
        max_len: args.max_len,
        language: args.language,
        seed: args.seed,
    })
    .at(Stage::Config)?;
    corpus.write_to(&args.out).at(Stage::Corpus)?;
    println!(
        "wrote vocab.txt ({} tokens), tune.jsonl ({} pairs), test.jsonl ({} pairs) to {}",
        corpus.vocab.len(),
        corpus.tune.len(),
        corpus.test.len(),
        args.out.display()
    );
    Ok(())
}
