//! A JSE and a set of node agents on localhost, each on its own thread, for
//! the benchmark and for end-to-end tests.

use crate::client::GatewayClient;
use crate::error::CliError;
use geps_core::agent::{AgentConfig, AgentHandle};
use geps_core::jse::{JseConfig, JseHandle};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::time::Duration;
use tempfile::TempDir;

#[derive(Debug, Clone)]
pub struct ClusterConfig {
    pub nodes: usize,
    pub throttle_bytes_per_s: u64,
    pub processors: u32,
    pub poll_interval: Duration,
    pub staleness: Duration,
    pub retry_limit: u32,
    pub backoff_initial: Duration,
    pub backoff_max: Duration,
    /// Pause after each agent progress update.
    pub progress_delay: Duration,
    /// Node name prefix; nodes are `{prefix}{i}`.
    pub name_prefix: String,
}

impl Default for ClusterConfig {
    fn default() -> Self {
        Self {
            nodes: 2,
            throttle_bytes_per_s: 0,
            processors: 2,
            poll_interval: Duration::from_millis(20),
            staleness: Duration::from_secs(3),
            retry_limit: 3,
            backoff_initial: Duration::from_millis(5),
            backoff_max: Duration::from_millis(20),
            progress_delay: Duration::ZERO,
            name_prefix: "node".into(),
        }
    }
}

pub struct LocalCluster {
    cfg: ClusterConfig,
    root: TempDir,
    names: Vec<String>,
    agents: Vec<Option<AgentHandle>>,
    jse: Option<JseHandle>,
}

fn loopback() -> SocketAddr {
    SocketAddr::from(([127, 0, 0, 1], 0))
}

impl LocalCluster {
    pub async fn start(cfg: ClusterConfig) -> Result<Self, CliError> {
        let root = tempfile::tempdir().map_err(|e| CliError::Other(format!("temporary directory: {e}")))?;
        let mut agents = Vec::new();
        let mut names = Vec::new();
        for i in 0..cfg.nodes {
            let name = format!("{}{i}", cfg.name_prefix);
            let mut a = AgentConfig::new(name.clone(), root.path().join(&name));
            a.listen = loopback();
            a.processors = cfg.processors;
            a.throttle_bytes_per_s = cfg.throttle_bytes_per_s;
            a.progress_delay = cfg.progress_delay;
            let handle = AgentHandle::spawn(a).map_err(|e| CliError::Other(format!("agent {name}: {e}")))?;
            agents.push(Some(handle));
            names.push(name);
        }
        let mut cluster = Self {
            cfg,
            root,
            names,
            agents,
            jse: None,
        };
        cluster.start_jse()?;
        let client = cluster.client();
        for a in cluster.agents.iter().flatten() {
            client.add_node(&a.addr().to_string()).await?;
        }
        Ok(cluster)
    }

    fn jse_config(&self) -> JseConfig {
        let mut c = JseConfig::new(self.catalog_dir());
        c.listen = loopback();
        c.poll_interval = self.cfg.poll_interval;
        c.staleness = self.cfg.staleness;
        c.retry_limit = self.cfg.retry_limit;
        c.backoff_initial = self.cfg.backoff_initial;
        c.backoff_max = self.cfg.backoff_max;
        c.sync = false;
        c
    }

    fn start_jse(&mut self) -> Result<(), CliError> {
        let handle = JseHandle::spawn(self.jse_config()).map_err(|e| CliError::CatalogUnavailable(e.to_string()))?;
        self.jse = Some(handle);
        Ok(())
    }

    pub fn catalog_dir(&self) -> PathBuf {
        self.root.path().join("catalog")
    }

    pub fn root(&self) -> &Path {
        self.root.path()
    }

    pub fn gateway_url(&self) -> String {
        self.jse.as_ref().expect("jse running").url()
    }

    pub fn client(&self) -> GatewayClient {
        GatewayClient::new(self.gateway_url())
    }

    pub fn node_names(&self) -> &[String] {
        &self.names
    }

    pub fn node_addr(&self, i: usize) -> Option<SocketAddr> {
        self.agents[i].as_ref().map(AgentHandle::addr)
    }

    /// Stops node `i` abruptly; its data stays on disk.
    pub fn kill_node(&mut self, i: usize) {
        if let Some(a) = self.agents[i].take() {
            a.kill();
        }
    }

    /// Stops the JSE at whatever point it has reached and starts a fresh one
    /// on the same catalog. The gateway URL changes.
    pub fn restart_jse(&mut self) -> Result<(), CliError> {
        if let Some(j) = self.jse.take() {
            j.kill();
        }
        self.start_jse()
    }
}

impl Drop for LocalCluster {
    fn drop(&mut self) {
        if let Some(j) = self.jse.take() {
            j.kill();
        }
        for a in self.agents.iter_mut().filter_map(Option::take) {
            a.kill();
        }
    }
}
