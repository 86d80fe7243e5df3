//! Job submission engine: the polling broker, planner, job driver and the
//! HTTP gateway.

mod driver;
pub mod gateway;
pub mod ingest;
mod plan;

pub use plan::{choose_holder, group_by_node, plan, Assignment, JobPlan, PlanError, StagingMove};

use crate::catalog::{Catalog, CatalogError, CatalogOptions, JobState, NodeRecord};
use crate::wire::NodeClient;
use futures::future::join_all;
use std::collections::{BTreeSet, HashSet};
use std::io;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::{Arc, Mutex};
use std::time::Duration;
use tokio::net::TcpListener;
use tokio::sync::{oneshot, Notify};

pub const DEFAULT_LISTEN: &str = "0.0.0.0:7745";

#[derive(Debug, Clone)]
pub struct JseConfig {
    pub listen: SocketAddr,
    pub catalog: PathBuf,
    pub poll_interval: Duration,
    /// Silence after which a node is considered dead.
    pub staleness: Duration,
    /// Attempts per staging move and result fetch after the first, and
    /// reassignments per fragment.
    pub retry_limit: u32,
    pub backoff_initial: Duration,
    pub backoff_max: Duration,
    /// NEW jobs claimed per poll.
    pub claim_limit: usize,
    /// fsync catalog writes.
    pub sync: bool,
}

impl JseConfig {
    pub fn new(catalog: impl Into<PathBuf>) -> Self {
        Self {
            listen: DEFAULT_LISTEN.parse().expect("valid default"),
            catalog: catalog.into(),
            poll_interval: Duration::from_millis(500),
            staleness: Duration::from_secs(10),
            retry_limit: 3,
            backoff_initial: Duration::from_millis(100),
            backoff_max: Duration::from_secs(2),
            claim_limit: 64,
            sync: true,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.poll_interval.is_zero() {
            return Err("poll interval must be positive".into());
        }
        if self.backoff_initial.is_zero() || self.backoff_max < self.backoff_initial {
            return Err("backoff must start positive and not exceed its cap".into());
        }
        if self.claim_limit == 0 {
            return Err("claim limit must be positive".into());
        }
        Ok(())
    }

    pub fn catalog_options(&self) -> CatalogOptions {
        CatalogOptions {
            staleness: self.staleness,
            sync: self.sync,
            ..Default::default()
        }
    }
}

pub struct Jse {
    pub catalog: Arc<Catalog>,
    cfg: JseConfig,
    active: Mutex<HashSet<u64>>,
    wake: Notify,
}

impl Jse {
    pub fn open(cfg: JseConfig) -> Result<Arc<Self>, CatalogError> {
        let catalog = Catalog::open_with(&cfg.catalog, cfg.catalog_options())?;
        Ok(Self::with_catalog(cfg, Arc::new(catalog)))
    }

    pub fn with_catalog(cfg: JseConfig, catalog: Arc<Catalog>) -> Arc<Self> {
        Arc::new(Self {
            catalog,
            cfg,
            active: Mutex::new(HashSet::new()),
            wake: Notify::new(),
        })
    }

    pub fn config(&self) -> &JseConfig {
        &self.cfg
    }

    pub fn alive_nodes(&self) -> BTreeSet<String> {
        self.catalog
            .list_nodes()
            .into_iter()
            .filter(|n| n.alive)
            .map(|n| n.name)
            .collect()
    }

    /// Queries a node agent and registers it under the name it reports.
    pub async fn add_node(&self, address: &str) -> Result<NodeRecord, String> {
        let info = NodeClient::new(address)
            .with_timeout(self.cfg.staleness)
            .info()
            .await
            .map_err(|e| e.to_string())?;
        self.catalog.register_node(address, info).map_err(|e| e.to_string())
    }

    /// Polls every registered node for fresh resource information.
    pub async fn refresh_nodes(&self) {
        let timeout = self.cfg.poll_interval.max(Duration::from_millis(200));
        let polls = self.catalog.list_nodes().into_iter().map(|n| async move {
            let info = NodeClient::new(n.address.clone()).with_timeout(timeout).info().await;
            (n, info)
        });
        for (node, info) in join_all(polls).await {
            match info {
                Ok(info) if info.name == node.name => {
                    let _ = self.catalog.heartbeat(&node.name, info);
                }
                Ok(info) => tracing::warn!(expected = %node.name, got = %info.name, "node answered under another name"),
                Err(e) => tracing::debug!(node = %node.name, error = %e, "node poll failed"),
            }
        }
    }

    /// One broker round: refresh node information, resume jobs left mid-way
    /// by a previous run and claim new ones. Returns the number of drivers
    /// started.
    pub async fn tick(self: &Arc<Self>) -> Result<usize, CatalogError> {
        self.refresh_nodes().await;
        let mut started = 0;
        for job in self
            .catalog
            .jobs_in(&[JobState::Staging, JobState::Running, JobState::Merging])
        {
            started += self.spawn_driver(job.job_id) as usize;
        }
        for job in self.catalog.claim_new_jobs(self.cfg.claim_limit)? {
            started += self.spawn_driver(job.job_id) as usize;
        }
        Ok(started)
    }

    fn spawn_driver(self: &Arc<Self>, job_id: u64) -> bool {
        if !self.active.lock().unwrap().insert(job_id) {
            return false;
        }
        let jse = self.clone();
        tokio::spawn(async move {
            driver::drive(jse.clone(), job_id).await;
            jse.active.lock().unwrap().remove(&job_id);
        });
        true
    }

    /// Cuts the current broker sleep short, e.g. after a submission.
    pub fn wake(&self) {
        self.wake.notify_one();
    }

    /// Polls the catalog until it fails.
    pub async fn run_broker(self: Arc<Self>) -> CatalogError {
        loop {
            if let Err(e) = self.tick().await {
                tracing::error!(error = %e, "catalog unavailable");
                return e;
            }
            tokio::select! {
                _ = tokio::time::sleep(self.cfg.poll_interval) => {}
                _ = self.wake.notified() => {}
            }
        }
    }

    /// Serves the gateway on `listener` and runs the broker until either
    /// stops.
    pub async fn serve(self: Arc<Self>, listener: TcpListener) -> Result<(), ServeError> {
        let app = gateway::router(self.clone());
        tokio::select! {
            r = axum::serve(listener, app) => r.map_err(ServeError::Http),
            e = self.run_broker() => Err(ServeError::Catalog(e)),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ServeError {
    #[error("gateway stopped: {0}")]
    Http(io::Error),
    #[error(transparent)]
    Catalog(CatalogError),
}

/// A JSE on its own thread and runtime, stoppable at any point.
pub struct JseHandle {
    addr: SocketAddr,
    jse: Arc<Jse>,
    stop: Option<oneshot::Sender<()>>,
    thread: Option<std::thread::JoinHandle<()>>,
}

impl JseHandle {
    pub fn spawn(cfg: JseConfig) -> io::Result<Self> {
        let (ready_tx, ready_rx) = std::sync::mpsc::channel::<io::Result<(SocketAddr, Arc<Jse>)>>();
        let (stop, stopped) = oneshot::channel::<()>();
        let thread = std::thread::Builder::new().name("jse".into()).spawn(move || {
            let rt = match tokio::runtime::Builder::new_multi_thread()
                .worker_threads(4)
                .enable_all()
                .build()
            {
                Ok(rt) => rt,
                Err(e) => {
                    let _ = ready_tx.send(Err(e));
                    return;
                }
            };
            let started = rt.block_on(async {
                let jse = Jse::open(cfg.clone()).map_err(io::Error::other)?;
                let listener = TcpListener::bind(cfg.listen).await?;
                Ok::<_, io::Error>((jse, listener))
            });
            let (jse, listener) = match started {
                Ok(x) => x,
                Err(e) => {
                    let _ = ready_tx.send(Err(e));
                    return;
                }
            };
            let addr = match listener.local_addr() {
                Ok(a) => a,
                Err(e) => {
                    let _ = ready_tx.send(Err(e));
                    return;
                }
            };
            let _ = ready_tx.send(Ok((addr, jse.clone())));
            rt.block_on(async move {
                tokio::select! {
                    r = jse.serve(listener) => {
                        if let Err(e) = r {
                            tracing::error!(error = %e, "jse stopped");
                        }
                    }
                    _ = stopped => {}
                }
            });
            // tasks are dropped at their next await; wait for in-flight polls
            // so no catalog write lands after a restart reopens it
            rt.shutdown_timeout(Duration::from_secs(5));
        })?;
        let (addr, jse) = ready_rx
            .recv()
            .map_err(|_| io::Error::other("jse thread exited during startup"))??;
        Ok(Self {
            addr,
            jse,
            stop: Some(stop),
            thread: Some(thread),
        })
    }

    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn url(&self) -> String {
        format!("http://{}", self.addr)
    }

    pub fn jse(&self) -> &Arc<Jse> {
        &self.jse
    }

    pub fn catalog(&self) -> &Arc<Catalog> {
        &self.jse.catalog
    }

    /// Stops the broker and gateway at whatever point they have reached.
    pub fn kill(mut self) {
        self.stop_now();
    }

    fn stop_now(&mut self) {
        if let Some(stop) = self.stop.take() {
            let _ = stop.send(());
        }
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

impl Drop for JseHandle {
    fn drop(&mut self) {
        self.stop_now();
    }
}
