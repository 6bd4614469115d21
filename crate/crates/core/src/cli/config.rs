use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::CliError;
use crate::encoder::{AdapterConfig, EncoderConfig};
use crate::env::{CellConfig, EnvConfig, RewardConfig, SemanticToyConfig, SliceSpec};
use crate::marl::{EnvSpec, TrainLoopConfig};
use crate::prompt::{PromptTemplate, DEFAULT_TEMPLATE};
use crate::sac::SacConfig;

/// Ablation variant of a run.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Variant {
    /// Stand-in encoder with learnable context tokens.
    #[default]
    #[serde(rename = "pa-mrl")]
    PaMrl,
    /// A different frozen encoder (other seed, or external embeddings).
    #[serde(rename = "pa-mrl-alt-encoder")]
    PaMrlAltEncoder,
    /// No context tokens and a fixed prompt.
    #[serde(rename = "marl-noprompt")]
    MarlNoPrompt,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::PaMrl, Variant::PaMrlAltEncoder, Variant::MarlNoPrompt];

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::PaMrl => "pa-mrl",
            Variant::PaMrlAltEncoder => "pa-mrl-alt-encoder",
            Variant::MarlNoPrompt => "marl-noprompt",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Variant::ALL
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| format!("unknown variant {s:?}; expected pa-mrl, pa-mrl-alt-encoder or marl-noprompt"))
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EnvKind {
    #[default]
    Slicing,
    SemanticToy,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvSection {
    #[serde(default)]
    pub kind: EnvKind,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PromptSection {
    /// Sentence template with `{slice}`, `{kind}`, `{qos}`, `{throughput}`, `{users}` slots.
    pub template: String,
    /// Read the template from a file instead (first non-comment line).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub template_file: Option<PathBuf>,
    /// Number of learnable context tokens.
    pub n_ctx: usize,
}

impl Default for PromptSection {
    fn default() -> Self {
        Self {
            template: DEFAULT_TEMPLATE.to_string(),
            template_file: None,
            n_ctx: 4,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AltEncoderSection {
    pub seed: u64,
    /// Precomputed prompt embeddings; misses fall back to the alternate encoder.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub embeddings: Option<PathBuf>,
}

impl Default for AltEncoderSection {
    fn default() -> Self {
        Self {
            seed: 8,
            embeddings: None,
        }
    }
}

fn default_seeds() -> Vec<u64> {
    (1..=5).collect()
}

fn default_out() -> PathBuf {
    PathBuf::from("runs")
}

/// Everything a run needs, loaded from one TOML file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub variant: Variant,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default = "default_out")]
    pub out: PathBuf,
    #[serde(default)]
    pub env: EnvSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cell: Option<CellConfig>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub slices: Vec<SliceSpec>,
    #[serde(default)]
    pub reward: RewardConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub toy: Option<SemanticToyConfig>,
    #[serde(default)]
    pub sac: SacConfig,
    #[serde(default)]
    pub train: TrainLoopConfig,
    #[serde(default)]
    pub prompt: PromptSection,
    #[serde(default)]
    pub encoder: EncoderConfig,
    #[serde(default)]
    pub adapter: AdapterConfig,
    #[serde(default)]
    pub alt_encoder: AltEncoderSection,
}

/// Command-line settings that take precedence over the file.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub seeds: Option<Vec<u64>>,
    pub variant: Option<Variant>,
    pub n_ctx: Option<usize>,
    pub episodes: Option<usize>,
    pub out: Option<PathBuf>,
    pub sequential: bool,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    /// Load and validate; relative paths inside the file resolve against its directory.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::parse(&text)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        let rebase = |p: &mut PathBuf| {
            if p.is_relative() {
                let joined = base.join(&*p);
                *p = joined.canonicalize().unwrap_or(joined);
            }
        };
        if let Some(p) = cfg.prompt.template_file.as_mut() {
            rebase(p);
        }
        if let Some(p) = cfg.alt_encoder.embeddings.as_mut() {
            rebase(p);
        }
        Ok(cfg)
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(s) = &o.seeds {
            self.seeds = s.clone();
        }
        if let Some(v) = o.variant {
            self.variant = v;
        }
        if let Some(n) = o.n_ctx {
            self.prompt.n_ctx = n;
        }
        if let Some(e) = o.episodes {
            self.train.eval_episodes = e;
        }
        if let Some(p) = &o.out {
            self.out = p.clone();
        }
        if o.sequential {
            self.train.sequential = true;
        }
    }

    /// The configuration a run actually uses: variant mapping applied and
    /// the seed list narrowed to `seed`. This is what `config.snapshot` holds.
    pub fn resolved(&self, seed: u64) -> Self {
        let mut c = self.clone();
        c.seeds = vec![seed];
        if c.variant == Variant::MarlNoPrompt {
            c.prompt.n_ctx = 0;
        }
        c
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |m: String| Err(CliError::Config(m));
        if self.seeds.is_empty() {
            return bad("seeds must not be empty".into());
        }
        match self.env.kind {
            EnvKind::Slicing => {
                if self.cell.is_none() {
                    return bad("env.kind = \"slicing\" needs a [cell] section".into());
                }
                if self.slices.is_empty() {
                    return bad("env.kind = \"slicing\" needs at least one [[slices]] entry".into());
                }
                self.env_config().validate().map_err(|e| CliError::Config(e.to_string()))?;
            }
            EnvKind::SemanticToy => {
                if self.toy.is_none() {
                    return bad("env.kind = \"semantic-toy\" needs a [toy] section".into());
                }
            }
        }
        self.sac.validate().map_err(|e| CliError::Config(e.to_string()))?;
        self.train.validate().map_err(|e| CliError::Config(e.to_string()))?;
        self.template()?;
        if self.variant == Variant::PaMrlAltEncoder
            && self.alt_encoder.embeddings.is_none()
            && self.alt_encoder.seed == self.encoder.seed
        {
            return bad("alt_encoder.seed must differ from encoder.seed when no embeddings file is given".into());
        }
        if let Some(p) = &self.alt_encoder.embeddings {
            if !p.exists() {
                return bad(format!("alt_encoder.embeddings: {} does not exist", p.display()));
            }
        }
        Ok(())
    }

    fn env_config(&self) -> EnvConfig {
        EnvConfig {
            cell: self.cell.clone().unwrap_or_default(),
            slices: self.slices.clone(),
            reward: self.reward,
        }
    }

    pub fn env_spec(&self) -> EnvSpec {
        match self.env.kind {
            EnvKind::Slicing => EnvSpec::Slicing(self.env_config()),
            EnvKind::SemanticToy => EnvSpec::SemanticToy(self.toy.clone().unwrap_or_default()),
        }
    }

    pub fn template(&self) -> Result<PromptTemplate, CliError> {
        let t = match &self.prompt.template_file {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| CliError::Config(format!("prompt.template_file: {}: {e}", p.display())))?;
                PromptTemplate::from_file_contents(&text)
            }
            None => PromptTemplate::parse(&self.prompt.template),
        };
        t.map_err(|e| CliError::Config(format!("prompt.template: {e}")))
    }

    /// Encoder settings after the variant mapping.
    pub fn effective_encoder(&self) -> EncoderConfig {
        let mut e = self.encoder.clone();
        if self.variant == Variant::PaMrlAltEncoder {
            e.seed = self.alt_encoder.seed;
        }
        e
    }

    /// The loop settings of one run.
    pub fn train_loop(&self, seed: u64) -> TrainLoopConfig {
        TrainLoopConfig {
            seed,
            ..self.train.clone()
        }
    }

    pub fn snapshot(&self) -> Result<String, CliError> {
        toml::to_string(self).map_err(|e| CliError::Config(format!("snapshot: {e}")))
    }
}
