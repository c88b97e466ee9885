use std::path::Path;
use std::sync::{Arc, OnceLock};

use crate::error::{Error, Result};
use crate::facets::HeuristicAnnotator;
use crate::gateway::stub::{StubTransport, TokenHashEmbedder};
use crate::gateway::{ChatMessage, ChatModel, ProviderClient, ProviderConfig, ProviderKind, ResponseCache};
use crate::simgen::{CannedAssistant, PersonaSimulator, Population, ASSISTANT_PROMPT};

/// The chat model behind the `stub` provider kind. Simulator sessions are
/// answered by a [`PersonaSimulator`] whose population is named by the model
/// (`persona:<name>`, default `polite`), assistant sessions by a
/// [`CannedAssistant`], and every other prompt by the [`HeuristicAnnotator`].
pub struct OfflineChat {
    simulator: PersonaSimulator,
}

impl OfflineChat {
    pub fn for_model(model: &str) -> Result<Self> {
        let population = match model.strip_prefix("persona:") {
            Some(name) => Population::preset(name)?,
            None => Population::polite(),
        };
        Ok(OfflineChat {
            simulator: PersonaSimulator::new(population, 0),
        })
    }
}

impl ChatModel for OfflineChat {
    fn chat(&self, system: &str, messages: &[ChatMessage]) -> Result<String> {
        if system.starts_with("You are a user simulator") {
            self.simulator.chat(system, messages)
        } else if system.trim() == ASSISTANT_PROMPT.trim() {
            CannedAssistant.chat(system, messages)
        } else {
            HeuristicAnnotator.chat(system, messages)
        }
    }
}

/// Builds a client for `config`: HTTP for real services, an in-process
/// transport for the stub kind. Both share `cache`.
pub fn build_client(config: &ProviderConfig, cache: Arc<ResponseCache>, offline: bool) -> Result<ProviderClient> {
    let client = match config.kind {
        ProviderKind::Http => ProviderClient::http(config.clone(), cache)?,
        ProviderKind::Stub => {
            let transport = StubTransport::service(
                Arc::new(OfflineChat::for_model(&config.model)?),
                Arc::new(TokenHashEmbedder::new(config.stub_dim)),
            );
            ProviderClient::new(config.clone(), Arc::new(transport), cache)?
        }
    };
    Ok(client.offline(offline))
}

/// Clients created on first use, so stages that are already complete never
/// need credentials.
pub struct Providers {
    cache: Arc<ResponseCache>,
    offline: bool,
    annotator_config: ProviderConfig,
    embedder_config: ProviderConfig,
    annotator: OnceLock<Arc<ProviderClient>>,
    embedder: OnceLock<Arc<ProviderClient>>,
}

impl Providers {
    pub fn new(
        cache_dir: Option<&Path>,
        annotator: ProviderConfig,
        embedder: ProviderConfig,
        offline: bool,
    ) -> Result<Self> {
        let cache = match cache_dir {
            Some(d) => ResponseCache::on_disk(d).map_err(|e| Error::io(d, e))?,
            None => ResponseCache::in_memory(),
        };
        Ok(Providers {
            cache: Arc::new(cache),
            offline,
            annotator_config: annotator,
            embedder_config: embedder,
            annotator: OnceLock::new(),
            embedder: OnceLock::new(),
        })
    }

    pub fn cache(&self) -> Arc<ResponseCache> {
        self.cache.clone()
    }

    pub fn offline(&self) -> bool {
        self.offline
    }

    fn get(&self, slot: &OnceLock<Arc<ProviderClient>>, cfg: &ProviderConfig) -> Result<Arc<ProviderClient>> {
        if let Some(c) = slot.get() {
            return Ok(c.clone());
        }
        let c = Arc::new(build_client(cfg, self.cache.clone(), self.offline)?);
        Ok(slot.get_or_init(|| c).clone())
    }

    pub fn annotator(&self) -> Result<Arc<ProviderClient>> {
        self.get(&self.annotator, &self.annotator_config)
    }

    pub fn embedder(&self) -> Result<Arc<ProviderClient>> {
        self.get(&self.embedder, &self.embedder_config)
    }

    pub fn annotator_config(&self) -> &ProviderConfig {
        &self.annotator_config
    }

    pub fn embedder_config(&self) -> &ProviderConfig {
        &self.embedder_config
    }

    /// Requests sent to services so far (cache hits excluded).
    pub fn request_count(&self) -> u64 {
        [&self.annotator, &self.embedder]
            .iter()
            .filter_map(|s| s.get())
            .map(|c| c.request_count())
            .sum()
    }
}
