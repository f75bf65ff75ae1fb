use std::fmt;

use hubtext_core::Error;

/// The pipeline stage an error belongs to; decides the exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Config,
    Corpus,
    Backend,
    Training,
    Inversion,
    Search,
    Report,
}

impl Stage {
    pub fn exit_code(self) -> u8 {
        match self {
            Stage::Config => 2,
            Stage::Corpus => 3,
            Stage::Backend => 4,
            Stage::Training => 5,
            Stage::Inversion => 6,
            Stage::Search => 7,
            Stage::Report => 8,
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stage::Config => "config",
            Stage::Corpus => "corpus",
            Stage::Backend => "backend",
            Stage::Training => "hub training",
            Stage::Inversion => "hub decoding",
            Stage::Search => "local search",
            Stage::Report => "report",
        })
    }
}

#[derive(Debug, thiserror::Error)]
#[error("{stage}: {source}")]
pub struct Failure {
    pub stage: Stage,
    #[source]
    pub source: Error,
}

pub trait At<T> {
    fn at(self, stage: Stage) -> Result<T, Failure>;
}

impl<T> At<T> for Result<T, Error> {
    fn at(self, stage: Stage) -> Result<T, Failure> {
        self.map_err(|source| Failure { stage, source })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes_are_distinct_and_nonzero() {
        let stages = [
            Stage::Config,
            Stage::Corpus,
            Stage::Backend,
            Stage::Training,
            Stage::Inversion,
            Stage::Search,
            Stage::Report,
        ];
        let codes: Vec<u8> = stages.iter().map(|s| s.exit_code()).collect();
        assert_eq!(codes, [2, 3, 4, 5, 6, 7, 8]);
    }
}
