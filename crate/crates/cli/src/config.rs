//! Run configuration: TOML file, flag overrides and environment overrides.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use refeval_core::clients::http::HttpTransport;
use refeval_core::clients::mock::{MockFixtures, MockSettings, MockTransport};
use refeval_core::clients::{ClientConfig, ClientSet, ModelClient, ResponseCache, Transport};
use refeval_core::identgen::IdentConfig;
use refeval_core::metaeval::BootstrapConfig;
use refeval_core::pairgen::FrameFilterConfig;
use refeval_core::promptgen::PromptConfig;
use refeval_core::scoring::ScoringConfig;
use refeval_core::seed::digest_parts;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClientMode {
    #[default]
    Mock,
    Http,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClientsConfig {
    pub mode: ClientMode,
    /// Fixture tables for the mock transport.
    pub mock_fixtures: Option<PathBuf>,
    pub mock: MockSettings,
    /// Settings shared by every role unless overridden below.
    pub default: ClientConfig,
    pub captioner: Option<ClientConfig>,
    pub inpainter: Option<ClientConfig>,
    pub detector: Option<ClientConfig>,
    pub embedder: Option<ClientConfig>,
    pub judge: Option<ClientConfig>,
    pub scorer: Option<ClientConfig>,
}

pub const ROLES: [&str; 6] = ["captioner", "inpainter", "detector", "embedder", "judge", "scorer"];

impl ClientsConfig {
    fn role_mut(&mut self, role: &str) -> &mut Option<ClientConfig> {
        match role {
            "captioner" => &mut self.captioner,
            "inpainter" => &mut self.inpainter,
            "detector" => &mut self.detector,
            "embedder" => &mut self.embedder,
            "judge" => &mut self.judge,
            _ => &mut self.scorer,
        }
    }

    pub fn role(&self, role: &str) -> ClientConfig {
        let r = match role {
            "captioner" => &self.captioner,
            "inpainter" => &self.inpainter,
            "detector" => &self.detector,
            "embedder" => &self.embedder,
            "judge" => &self.judge,
            _ => &self.scorer,
        };
        r.clone().unwrap_or_else(|| self.default.clone())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsConfig {
    /// Root that relative image paths in manifests resolve against.
    pub store: Option<PathBuf>,
    pub cache_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub bootstrap: BootstrapConfig,
    /// Decimal places scores are rounded to before preference comparison.
    pub rounding_decimals: u32,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            bootstrap: BootstrapConfig::default(),
            rounding_decimals: 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub concurrency: usize,
    pub paths: PathsConfig,
    pub clients: ClientsConfig,
    pub pairs: FrameFilterConfig,
    pub ident: IdentConfig,
    pub prompts: PromptConfig,
    pub scoring: ScoringConfig,
    pub eval: EvalConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            concurrency: 4,
            paths: PathsConfig::default(),
            clients: ClientsConfig::default(),
            pairs: FrameFilterConfig::default(),
            ident: IdentConfig::default(),
            prompts: PromptConfig::default(),
            scoring: ScoringConfig::default(),
            eval: EvalConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }

    /// `REFEVAL_<ROLE>_ENDPOINT` and `REFEVAL_<ROLE>_API_KEY`, with `DEFAULT`
    /// as the role for shared settings.
    pub fn apply_env(&mut self, get: impl Fn(&str) -> Option<String>) {
        let apply = |cfg: &mut ClientConfig, prefix: &str| {
            if let Some(v) = get(&format!("{prefix}_ENDPOINT")) {
                cfg.endpoint = v;
            }
            if let Some(v) = get(&format!("{prefix}_API_KEY")) {
                cfg.api_key = Some(v);
            }
        };
        apply(&mut self.clients.default, "REFEVAL_DEFAULT");
        for role in ROLES {
            let prefix = format!("REFEVAL_{}", role.to_uppercase());
            let touched = get(&format!("{prefix}_ENDPOINT")).is_some() || get(&format!("{prefix}_API_KEY")).is_some();
            if touched {
                let base = self.clients.role(role);
                let slot = self.clients.role_mut(role);
                let cfg = slot.get_or_insert(base);
                apply(cfg, &prefix);
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.concurrency == 0 {
            bail!("concurrency must be at least 1");
        }
        if !(self.pairs.blur_threshold > 0.0) {
            bail!("pairs.blur_threshold must be positive");
        }
        self.ident.patch.validate()?;
        self.ident.thresholds.validate()?;
        if self.ident.variants == 0 {
            bail!("ident.variants must be positive");
        }
        if !(self.ident.inpaint.guidance_scale > 0.0) {
            bail!("ident.inpaint.guidance_scale must be positive");
        }
        if !(0.0..=1.0).contains(&self.scoring.max_failure_rate) {
            bail!("scoring.max_failure_rate must be in [0, 1]");
        }
        self.eval.bootstrap.validate()?;
        for role in ROLES {
            self.clients.role(role).validate()?;
        }
        Ok(())
    }

    /// Digest of every setting that can change outputs. Secrets, paths and
    /// concurrency are left out.
    pub fn digest(&self) -> String {
        let mut c = self.clone();
        c.concurrency = 0;
        c.paths = PathsConfig::default();
        c.clients.mock_fixtures = None;
        c.clients.default.api_key = None;
        for role in ROLES {
            if let Some(r) = c.clients.role_mut(role) {
                r.api_key = None;
            }
        }
        let json = serde_json::to_string(&c).expect("config serializes");
        digest_parts([json.as_str()])[..16].to_string()
    }

    pub fn clients(&self) -> Result<ClientSet> {
        let cache = match &self.paths.cache_dir {
            Some(dir) if self.clients.default.cache_enabled => Some(Arc::new(
                ResponseCache::on_disk(dir).with_context(|| format!("opening cache {}", dir.display()))?,
            )),
            _ => None,
        };
        match self.clients.mode {
            ClientMode::Mock => {
                let fixtures = match &self.clients.mock_fixtures {
                    Some(p) => MockFixtures::load(p).with_context(|| format!("loading mock fixtures {}", p.display()))?,
                    None => MockFixtures::default(),
                };
                let t: Arc<dyn Transport> = Arc::new(MockTransport::new(fixtures, self.clients.mock));
                Ok(ClientSet::uniform(t, cache))
            }
            ClientMode::Http => {
                let make = |role: &str| -> Result<Arc<ModelClient>> {
                    let cfg = self.clients.role(role);
                    let role_cache = if cfg.cache_enabled { cache.clone() } else { None };
                    let t = HttpTransport::new(cfg)?;
                    Ok(Arc::new(ModelClient::new(Arc::new(t), role_cache)))
                };
                Ok(ClientSet {
                    captioner: make("captioner")?,
                    inpainter: make("inpainter")?,
                    detector: make("detector")?,
                    embedder: make("embedder")?,
                    judge: make("judge")?,
                    scorer: make("scorer")?,
                })
            }
        }
    }
}
