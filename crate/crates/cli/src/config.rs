use std::path::{Path, PathBuf};

use serde::Deserialize;
use trajcurate::assemble::DEFAULT_QUOTA;
use trajcurate::filter::{DEFAULT_EDITOR_ERROR_CAP, DEFAULT_MAX_STEPS};
use trajcurate::Mode;

use crate::CliError;

/// Environment variable naming a config file used when `--config` is absent.
pub const CONFIG_ENV: &str = "TRAJCURATE_CONFIG";

/// Settings shared by all subcommands. Command-line flags override these.
#[derive(Debug, Clone, PartialEq, Eq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub mode: Option<Mode>,
    pub max_steps: usize,
    pub editor_error_cap: usize,
    pub quota: usize,
    /// Whitelist file; the built-in list is used when absent.
    pub policy: Option<PathBuf>,
    pub workers: usize,
    pub tasks: Option<PathBuf>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            mode: None,
            max_steps: DEFAULT_MAX_STEPS,
            editor_error_cap: DEFAULT_EDITOR_ERROR_CAP,
            quota: DEFAULT_QUOTA,
            policy: None,
            workers: 1,
            tasks: None,
        }
    }
}

/// Reads a TOML config. Relative paths inside it resolve against the file's
/// directory.
pub fn load_config(path: &Path) -> Result<PipelineConfig, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let mut cfg: PipelineConfig = toml::from_str(&text)
        .map_err(|e| CliError::Usage(format!("malformed config {}: {e}", path.display())))?;
    let dir = path.parent().unwrap_or(Path::new(""));
    for p in [&mut cfg.policy, &mut cfg.tasks].into_iter().flatten() {
        if p.is_relative() {
            *p = dir.join(&*p);
        }
    }
    Ok(cfg)
}

/// `--config` if given, else the file named by [`CONFIG_ENV`], else defaults.
pub fn resolve_config(flag: Option<&Path>) -> Result<PipelineConfig, CliError> {
    if let Some(path) = flag {
        return load_config(path);
    }
    match std::env::var_os(CONFIG_ENV) {
        Some(path) if !path.is_empty() => load_config(Path::new(&path)),
        _ => Ok(PipelineConfig::default()),
    }
}
