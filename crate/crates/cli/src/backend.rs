use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Args, ValueEnum};

use osmag_nav::llm::LiveConfig;
use osmag_nav::{HeuristicBackend, LiveBackend, ScriptedBackend, TextBackend};

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Kind {
    Heuristic,
    Scripted,
    Live,
}

/// Text backend selection. The live backend reads its key from the
/// environment variable named by `--api-key-env`; keys are never accepted
/// on the command line.
#[derive(Args, Debug)]
pub struct BackendArgs {
    /// Retrieval defaults to heuristic; enrichment defaults to the null summarizer.
    #[arg(long, value_enum)]
    pub backend: Option<Kind>,
    /// Scripted replies: JSON object mapping prompt hash to reply text.
    #[arg(long, required_if_eq("backend", "scripted"))]
    pub fixtures: Option<PathBuf>,
    /// Chat-completions base URL, including the API version segment.
    #[arg(long)]
    pub base_url: Option<String>,
    #[arg(long)]
    pub model: Option<String>,
    /// Name of the environment variable holding the API key.
    #[arg(long)]
    pub api_key_env: Option<String>,
    /// Per-request timeout in seconds.
    #[arg(long)]
    pub timeout: Option<f64>,
}

impl BackendArgs {
    pub fn retrieval(&self) -> Result<Box<dyn TextBackend>> {
        self.build(self.backend.unwrap_or(Kind::Heuristic))
    }

    /// `None` selects the null summarizer (truncated concatenation).
    pub fn summarizer(&self) -> Result<Option<Box<dyn TextBackend>>> {
        match self.backend {
            None => Ok(None),
            Some(Kind::Heuristic) => {
                bail!("the heuristic backend only answers retrieval prompts; omit --backend for the null summarizer")
            }
            Some(k) => self.build(k).map(Some),
        }
    }

    fn build(&self, kind: Kind) -> Result<Box<dyn TextBackend>> {
        Ok(match kind {
            Kind::Heuristic => Box::new(HeuristicBackend),
            Kind::Scripted => {
                let path = self
                    .fixtures
                    .as_ref()
                    .context("--fixtures is required for the scripted backend")?;
                Box::new(ScriptedBackend::from_file(path).with_context(|| format!("loading {}", path.display()))?)
            }
            Kind::Live => Box::new(LiveBackend::from_env(self.live_config()?)?),
        })
    }

    fn live_config(&self) -> Result<LiveConfig> {
        let mut cfg = LiveConfig::default();
        if let Some(u) = &self.base_url {
            cfg.base_url = u.clone();
        }
        if let Some(m) = &self.model {
            cfg.model = m.clone();
        }
        if let Some(e) = &self.api_key_env {
            cfg.api_key_env = e.clone();
        }
        if let Some(t) = self.timeout {
            if !(t.is_finite() && t > 0.0) {
                bail!("--timeout must be positive, got {t}");
            }
            cfg.timeout_secs = t;
        }
        Ok(cfg)
    }
}
