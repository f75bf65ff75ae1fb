//! Run configuration: flags layered over an optional JSON file over defaults,
//! plus the provenance hash stamped into every artifact.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use hubtext_core::{substream_seed, Error, InverterConfig, OptimizerConfig, SearchConfig};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::args::{CommonArgs, StepFlags};
use crate::failure::{At, Failure, Stage};

pub const DEFAULT_BACKEND: &str = "builtin:0";
pub const DEFAULT_OUT: &str = "hubtext-out";

/// Keys of the optional `--config` file. Every key is optional and named
/// after its flag, with dashes replaced by underscores.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    backend: Option<String>,
    tune: Option<PathBuf>,
    test: Option<PathBuf>,
    vocab: Option<PathBuf>,
    out: Option<PathBuf>,
    seed: Option<u64>,
    threads: Option<usize>,
    steps: Option<usize>,
    lr: Option<f64>,
    weight_decay: Option<f64>,
    hypotheses: Option<usize>,
    beam: Option<usize>,
    max_len: Option<usize>,
    temperature: Option<f64>,
    vocab_limit: Option<usize>,
    max_epochs: Option<usize>,
    chunk: Option<usize>,
}

impl FileConfig {
    fn load(path: &Path) -> Result<Self, Failure> {
        let text = fs::read_to_string(path)
            .map_err(|source| Error::Io {
                path: path.to_path_buf(),
                source,
            })
            .at(Stage::Config)?;
        serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))
            .at(Stage::Config)
    }
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub backend: String,
    pub tune: Option<PathBuf>,
    pub test: Option<PathBuf>,
    pub vocab: Option<PathBuf>,
    pub out: PathBuf,
    pub seed: u64,
    pub threads: Option<usize>,
    pub optimizer: OptimizerConfig,
    pub inverter: InverterConfig,
    pub search: SearchConfig,
}

impl RunConfig {
    pub fn resolve(common: &CommonArgs, step: &StepFlags) -> Result<Self, Failure> {
        let file = match &common.config {
            Some(path) => FileConfig::load(path)?,
            None => FileConfig::default(),
        };
        let seed = common.seed.or(file.seed).unwrap_or(0);

        let mut optimizer = OptimizerConfig::default();
        if let Some(v) = step.steps.or(file.steps) {
            optimizer.steps = v;
        }
        if let Some(v) = step.lr.or(file.lr) {
            optimizer.lr = v;
        }
        if let Some(v) = step.weight_decay.or(file.weight_decay) {
            optimizer.weight_decay = v;
        }

        let mut inverter = InverterConfig {
            seed: substream_seed(seed, "invert"),
            ..Default::default()
        };
        if let Some(v) = step.hypotheses.or(file.hypotheses) {
            inverter.num_hypotheses = v;
        }
        if let Some(v) = step.beam.or(file.beam) {
            inverter.beam_width = v;
        }
        if let Some(v) = step.max_len.or(file.max_len) {
            inverter.max_length = v;
        }
        if let Some(v) = step.temperature.or(file.temperature) {
            inverter.temperature = v;
        }

        let mut search = SearchConfig {
            vocab_limit: step.vocab_limit.or(file.vocab_limit),
            ..Default::default()
        };
        if let Some(v) = step.max_epochs.or(file.max_epochs) {
            search.max_epochs = v;
        }
        if let Some(v) = step.chunk.or(file.chunk) {
            search.chunk_size = v;
        }

        let cfg = Self {
            backend: common
                .backend
                .clone()
                .or(file.backend)
                .unwrap_or_else(|| DEFAULT_BACKEND.to_string()),
            tune: common.tune.clone().or(file.tune),
            test: common.test.clone().or(file.test),
            vocab: common.vocab.clone().or(file.vocab),
            out: common
                .out
                .clone()
                .or(file.out)
                .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT)),
            seed,
            threads: common.threads.or(file.threads),
            optimizer,
            inverter,
            search,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    fn validate(&self) -> Result<(), Failure> {
        self.optimizer.validate().at(Stage::Config)?;
        self.inverter.validate().at(Stage::Config)?;
        self.search.validate().at(Stage::Config)?;
        if self.threads == Some(0) {
            return Err(Error::Config("--threads must be at least 1".into())).at(Stage::Config);
        }
        if self.backend.starts_with("builtin:") && self.vocab.is_none() {
            return Err(Error::Config("the builtin backend needs --vocab".into()))
                .at(Stage::Config);
        }
        Ok(())
    }

    pub fn artifact(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    /// SHA-256 over every parameter and the contents of every input file.
    /// Thread count and output directory are left out on purpose: they do
    /// not change results.
    pub fn config_hash(&self) -> Result<String, Failure> {
        let mut inputs = BTreeMap::new();
        for (name, path) in [
            ("tune", &self.tune),
            ("test", &self.test),
            ("vocab", &self.vocab),
        ] {
            if let Some(path) = path {
                let bytes = fs::read(path)
                    .map_err(|source| Error::Io {
                        path: path.clone(),
                        source,
                    })
                    .at(Stage::Corpus)?;
                inputs.insert(name, hex(&Sha256::digest(&bytes)));
            }
        }
        let material = HashMaterial {
            backend: &self.backend,
            seed: self.seed,
            optimizer: &self.optimizer,
            inverter: &self.inverter,
            search: &self.search,
            inputs,
        };
        let bytes = serde_json::to_vec(&material)
            .map_err(Error::from)
            .at(Stage::Config)?;
        Ok(hex(&Sha256::digest(&bytes)))
    }
}

#[derive(Serialize)]
struct HashMaterial<'a> {
    backend: &'a str,
    seed: u64,
    optimizer: &'a OptimizerConfig,
    inverter: &'a InverterConfig,
    search: &'a SearchConfig,
    inputs: BTreeMap<&'static str, String>,
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use std::io::Write;

    use super::*;

    fn common(vocab: &Path) -> CommonArgs {
        CommonArgs {
            vocab: Some(vocab.to_path_buf()),
            ..Default::default()
        }
    }

    #[test]
    fn flags_beat_file_beat_defaults() {
        let dir = tempfile::tempdir().unwrap();
        let vocab = dir.path().join("vocab.txt");
        fs::write(&vocab, "a\nb\nc\nd\ne\n").unwrap();
        let cfg_path = dir.path().join("run.json");
        let mut f = fs::File::create(&cfg_path).unwrap();
        write!(f, r#"{{"steps": 7, "lr": 0.5, "seed": 3}}"#).unwrap();

        let mut args = common(&vocab);
        args.config = Some(cfg_path);
        let step = StepFlags {
            lr: Some(0.25),
            ..Default::default()
        };
        let cfg = RunConfig::resolve(&args, &step).unwrap();
        assert_eq!(cfg.optimizer.steps, 7);
        assert_eq!(cfg.optimizer.lr, 0.25);
        assert_eq!(cfg.seed, 3);
        assert_eq!(cfg.optimizer.beta1, OptimizerConfig::default().beta1);
        assert_eq!(cfg.inverter.seed, substream_seed(3, "invert"));
    }

    #[test]
    fn unknown_config_key_is_a_config_error() {
        let dir = tempfile::tempdir().unwrap();
        let cfg_path = dir.path().join("run.json");
        fs::write(&cfg_path, r#"{"stepz": 1}"#).unwrap();
        let args = CommonArgs {
            config: Some(cfg_path),
            ..Default::default()
        };
        let err = RunConfig::resolve(&args, &StepFlags::default()).unwrap_err();
        assert_eq!(err.stage, Stage::Config);
    }

    #[test]
    fn hash_ignores_threads_and_out_but_not_inputs() {
        let dir = tempfile::tempdir().unwrap();
        let vocab = dir.path().join("vocab.txt");
        fs::write(&vocab, "a\nb\nc\nd\ne\n").unwrap();
        let mut args = common(&vocab);
        let base = RunConfig::resolve(&args, &StepFlags::default()).unwrap();
        args.threads = Some(8);
        args.out = Some(dir.path().join("elsewhere"));
        let moved = RunConfig::resolve(&args, &StepFlags::default()).unwrap();
        assert_eq!(base.config_hash().unwrap(), moved.config_hash().unwrap());

        let before = base.config_hash().unwrap();
        fs::write(&vocab, "a\nb\nc\nd\nf\n").unwrap();
        assert_ne!(before, base.config_hash().unwrap());
    }

    #[test]
    fn builtin_without_vocab_is_rejected() {
        let err = RunConfig::resolve(&CommonArgs::default(), &StepFlags::default()).unwrap_err();
        assert_eq!(err.stage, Stage::Config);
    }
}
