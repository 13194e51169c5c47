use std::path::{Path, PathBuf};

use eitphys::nets::{ModelConfig, Variant};
use eitphys::phantom::{CohortConfig, SplitScheme, Task};
use eitphys::training::TrainConfig;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

/// Everything one experiment needs; all randomness derives from the two seeds
/// `cohort.seed` and `train.seed`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Root of every file the commands write.
    pub out: PathBuf,
    pub split: SplitScheme,
    /// Train every variant of the transpulmonary-pressure task instead of `train.variant`.
    pub all_variants: bool,
    /// Evaluation batch size.
    pub eval_batch_size: usize,
    pub cohort: CohortConfig,
    pub train: TrainConfig,
    /// Outputs and variant are filled in from the task.
    pub model: ModelConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            out: PathBuf::from("eitphys-out"),
            split: SplitScheme::InterPatient,
            all_variants: false,
            eval_batch_size: 8,
            cohort: CohortConfig::default(),
            train: TrainConfig { crops_per_record: 1, ..TrainConfig::default() },
            model: ModelConfig::default(),
        }
    }
}

/// Command-line overrides, applied after the file is read.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub patients: Option<usize>,
    pub records: Option<usize>,
    pub task: Option<Task>,
    pub variant: Option<VariantChoice>,
    pub split: Option<SplitScheme>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum VariantChoice {
    One(Variant),
    All,
}

impl std::str::FromStr for VariantChoice {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s.eq_ignore_ascii_case("all") {
            Ok(VariantChoice::All)
        } else {
            s.parse().map(VariantChoice::One)
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else {
            return Ok(ExperimentConfig::default());
        };
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(out) = &o.out {
            self.out = out.clone();
        }
        if let Some(seed) = o.seed {
            self.cohort.seed = seed;
            self.train.seed = seed;
        }
        if let Some(p) = o.patients {
            self.cohort.patients = p;
        }
        if let Some(r) = o.records {
            self.cohort.records_per_patient = r;
        }
        if let Some(t) = o.task {
            self.train.task = t;
        }
        match o.variant {
            Some(VariantChoice::One(v)) => {
                self.train.variant = v;
                self.all_variants = false;
            }
            Some(VariantChoice::All) => self.all_variants = true,
            None => {}
        }
        if let Some(s) = o.split {
            self.split = s;
        }
    }

    pub fn validate(&self) -> Result<(), CliError> {
        if self.cohort.patients == 0 || self.cohort.records_per_patient == 0 {
            return Err(CliError::Config("cohort.patients and cohort.records_per_patient must be positive".into()));
        }
        if self.eval_batch_size == 0 {
            return Err(CliError::Config("eval_batch_size must be positive".into()));
        }
        if self.all_variants && self.train.task != Task::Ptp {
            return Err(CliError::Config(format!("all_variants applies to the ptp task only, not {}", self.train.task)));
        }
        for v in self.variants() {
            TrainConfig { variant: v, ..self.train.clone() }.validate().map_err(|e| CliError::Config(e.to_string()))?;
        }
        self.model.validate().map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn variants(&self) -> Vec<Variant> {
        if self.all_variants {
            Variant::ALL.to_vec()
        } else {
            vec![self.train.variant]
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }
}
