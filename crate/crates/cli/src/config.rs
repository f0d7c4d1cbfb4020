use std::path::{Path, PathBuf};

use patchfield::attack::AttackConfig;
use patchfield::encoder::{EncoderKind, EncoderSpec};
use patchfield::region::SelectionPolicy;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

/// One experiment: inputs, surrogate ensemble and optimizer settings.
///
/// Relative paths are resolved against the directory holding the config
/// file. Encoder specs with zero `height`/`width` take the scene size.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub scene: PathBuf,
    pub target: PathBuf,
    pub regions: PathBuf,
    #[serde(default)]
    pub selection: SelectionPolicy,
    /// Bridge endpoint used by the `external` selection policy.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scorer_endpoint: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub palette: Option<PathBuf>,
    pub ensemble: Vec<EncoderSpec>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub heldout: Vec<EncoderSpec>,
    #[serde(default)]
    pub attack: AttackConfig,
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::config(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg: Self =
            serde_json::from_str(&text).map_err(|e| CliError::config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve_paths(base);
        cfg.validate()?;
        Ok(cfg)
    }

    fn resolve_paths(&mut self, base: &Path) {
        let join = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        join(&mut self.scene);
        join(&mut self.target);
        join(&mut self.regions);
        if let Some(p) = self.palette.as_mut() {
            join(p);
        }
    }

    pub fn validate(&self) -> Result<(), CliError> {
        if self.ensemble.is_empty() {
            return Err(CliError::config("ensemble must list at least one encoder"));
        }
        for spec in self.ensemble.iter().chain(&self.heldout) {
            if spec.kind == EncoderKind::Bridged && spec.endpoint.is_none() {
                return Err(CliError::config("bridged encoder needs an endpoint"));
            }
        }
        self.attack.validate().map_err(|e| CliError::config(e.to_string()))
    }
}

/// Fills unset encoder input sizes with the scene size.
pub fn sized_spec(spec: &EncoderSpec, height: usize, width: usize) -> EncoderSpec {
    let mut s = spec.clone();
    if s.height == 0 || s.width == 0 {
        s.height = height;
        s.width = width;
    }
    s
}

/// Held-out list for `eval-transfer`: a JSON array of encoder specs.
pub fn load_heldout(path: &Path) -> Result<Vec<EncoderSpec>, CliError> {
    let text =
        std::fs::read_to_string(path).map_err(|e| CliError::input(format!("cannot read {}: {e}", path.display())))?;
    let specs: Vec<EncoderSpec> =
        serde_json::from_str(&text).map_err(|e| CliError::config(format!("{}: {e}", path.display())))?;
    if specs.is_empty() {
        return Err(CliError::config("held-out list is empty"));
    }
    Ok(specs)
}
