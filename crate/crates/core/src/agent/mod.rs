//! Node agent: holds fragments, runs filter jobs over them and serves
//! resource information, all over the framed protocol in [`crate::wire`].

mod exec;
mod store;

pub use store::{fragment_file_name, parse_fragment_file_name};

use crate::event::{decode_fragment, decode_header, DecodeError};
use crate::filter::{parse, Calibration};
use crate::wire::*;
use std::collections::HashMap;
use std::io;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};
use store::Store;
use tokio::io::AsyncWriteExt;
use tokio::net::{TcpListener, TcpStream};
use tokio::sync::{oneshot, Semaphore};

#[derive(Debug, Clone)]
pub struct AgentConfig {
    pub name: String,
    pub listen: SocketAddr,
    pub data_dir: PathBuf,
    /// Filter executors allowed to run at once.
    pub processors: u32,
    /// Pace for stage uploads and fetch downloads; 0 disables pacing.
    pub throttle_bytes_per_s: u64,
    /// Reported bandwidth; defaults to the throttle when unset.
    pub bandwidth_estimate: Option<u64>,
    /// Pause inserted after each progress update. Lets tests observe a
    /// running job.
    pub progress_delay: Duration,
}

impl AgentConfig {
    pub fn new(name: impl Into<String>, data_dir: impl Into<PathBuf>) -> Self {
        Self {
            name: name.into(),
            listen: SocketAddr::from(([0, 0, 0, 0], DEFAULT_PORT)),
            data_dir: data_dir.into(),
            processors: std::thread::available_parallelism().map_or(1, |n| n.get() as u32),
            throttle_bytes_per_s: 0,
            bandwidth_estimate: None,
            progress_delay: Duration::ZERO,
        }
    }
}

/// Counter refresh granularity, in events.
pub const PROGRESS_EVERY: u64 = 1000;

type JobKey = (u64, String);

pub(crate) struct Shared {
    cfg: AgentConfig,
    store: Store,
    started: Instant,
    jobs: Mutex<HashMap<JobKey, LocalJobState>>,
    executors: Arc<Semaphore>,
    killed: AtomicBool,
    link: Throttle,
}

impl Shared {
    fn throttle(&self) -> Throttle {
        self.link.clone()
    }

    fn job(&self, key: &JobKey) -> Option<LocalJobState> {
        self.jobs.lock().unwrap_or_else(|e| e.into_inner()).get(key).cloned()
    }

    fn update_job(&self, key: &JobKey, f: impl FnOnce(&mut LocalJobState)) {
        if let Some(state) = self.jobs.lock().unwrap_or_else(|e| e.into_inner()).get_mut(key) {
            f(state);
        }
    }

    pub(crate) fn killed(&self) -> bool {
        self.killed.load(Ordering::Relaxed)
    }

    fn node_info(&self) -> NodeInfo {
        let processors = self.cfg.processors.max(1);
        NodeInfo {
            name: self.cfg.name.clone(),
            protocol_version: PROTOCOL_VERSION,
            processors,
            load_1m: load_average().clamp(0.0, processors as f64),
            free_disk_bytes: free_disk_bytes(&self.cfg.data_dir),
            bandwidth_bytes_per_s: self.cfg.bandwidth_estimate.unwrap_or(self.cfg.throttle_bytes_per_s),
            fragments_held: self.store.scan(),
            uptime_s: self.started.elapsed().as_secs(),
        }
    }
}

fn load_average() -> f64 {
    std::fs::read_to_string("/proc/loadavg")
        .ok()
        .and_then(|s| s.split_whitespace().next().and_then(|v| v.parse().ok()))
        .unwrap_or(0.0)
}

fn free_disk_bytes(path: &std::path::Path) -> u64 {
    use std::os::unix::ffi::OsStrExt;
    let Ok(c) = std::ffi::CString::new(path.as_os_str().as_bytes()) else {
        return 0;
    };
    let mut st = std::mem::MaybeUninit::<libc::statvfs>::uninit();
    // SAFETY: `c` is a valid NUL-terminated path and `st` is written by the call.
    let rc = unsafe { libc::statvfs(c.as_ptr(), st.as_mut_ptr()) };
    if rc != 0 {
        return 0;
    }
    // SAFETY: statvfs returned success, so the struct is initialised.
    let st = unsafe { st.assume_init() };
    // field widths vary by platform
    #[allow(clippy::unnecessary_cast)]
    (st.f_bavail as u64).saturating_mul(st.f_frsize as u64)
}

/// A bound agent that has not started serving yet.
pub struct Agent {
    listener: TcpListener,
    shared: Arc<Shared>,
}

impl Agent {
    pub async fn bind(cfg: AgentConfig) -> io::Result<Self> {
        let store = Store::open(&cfg.data_dir)?;
        let listener = TcpListener::bind(cfg.listen).await?;
        let executors = Arc::new(Semaphore::new(cfg.processors.max(1) as usize));
        Ok(Self {
            listener,
            shared: Arc::new(Shared {
                link: Throttle::new(cfg.throttle_bytes_per_s),
                cfg,
                store,
                started: Instant::now(),
                jobs: Mutex::new(HashMap::new()),
                executors,
                killed: AtomicBool::new(false),
            }),
        })
    }

    pub fn local_addr(&self) -> io::Result<SocketAddr> {
        self.listener.local_addr()
    }

    /// Accepts connections until the process ends.
    pub async fn serve(self) -> io::Result<()> {
        self.serve_until(std::future::pending()).await
    }

    pub async fn serve_until(self, shutdown: impl std::future::Future<Output = ()>) -> io::Result<()> {
        tokio::pin!(shutdown);
        tracing::info!(name = %self.shared.cfg.name, addr = ?self.listener.local_addr(), "agent listening");
        loop {
            tokio::select! {
                _ = &mut shutdown => return Ok(()),
                accepted = self.listener.accept() => {
                    let (stream, peer) = match accepted {
                        Ok(x) => x,
                        Err(e) => {
                            tracing::warn!(error = %e, "accept failed");
                            continue;
                        }
                    };
                    let shared = self.shared.clone();
                    tokio::spawn(async move {
                        if let Err(e) = handle_connection(shared, stream).await {
                            tracing::debug!(%peer, error = %e, "connection ended");
                        }
                    });
                }
            }
        }
    }
}

/// An agent running on its own thread and runtime, so that it can be
/// stopped abruptly.
pub struct AgentHandle {
    addr: SocketAddr,
    name: String,
    shared: Arc<Shared>,
    stop: Option<oneshot::Sender<()>>,
    thread: Option<std::thread::JoinHandle<()>>,
}

impl AgentHandle {
    /// Binds and starts the agent; safe to call from inside a runtime.
    pub fn spawn(cfg: AgentConfig) -> io::Result<Self> {
        let name = cfg.name.clone();
        let (ready_tx, ready_rx) = std::sync::mpsc::channel();
        let (stop, stopped) = oneshot::channel::<()>();
        let thread = std::thread::Builder::new()
            .name(format!("agent-{name}"))
            .spawn(move || {
                let rt = match tokio::runtime::Builder::new_multi_thread()
                    .worker_threads(2)
                    .enable_all()
                    .build()
                {
                    Ok(rt) => rt,
                    Err(e) => {
                        let _ = ready_tx.send(Err(e));
                        return;
                    }
                };
                let agent = match rt.block_on(Agent::bind(cfg)).and_then(|a| Ok((a.local_addr()?, a))) {
                    Ok((addr, agent)) => {
                        let _ = ready_tx.send(Ok((addr, agent.shared.clone())));
                        agent
                    }
                    Err(e) => {
                        let _ = ready_tx.send(Err(e));
                        return;
                    }
                };
                let _ = rt.block_on(agent.serve_until(async {
                    let _ = stopped.await;
                }));
                // drop in-flight connections and executors without waiting
                rt.shutdown_timeout(Duration::ZERO);
            })?;
        let (addr, shared) = ready_rx
            .recv()
            .map_err(|_| io::Error::other("agent thread exited during startup"))??;
        Ok(Self {
            addr,
            name,
            shared,
            stop: Some(stop),
            thread: Some(thread),
        })
    }

    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    /// Stops the agent immediately: the port closes, open connections drop
    /// and running executors abandon their work.
    pub fn kill(mut self) {
        self.stop_now();
    }

    fn stop_now(&mut self) {
        self.shared.killed.store(true, Ordering::Relaxed);
        if let Some(stop) = self.stop.take() {
            let _ = stop.send(());
        }
        if let Some(thread) = self.thread.take() {
            let _ = thread.join();
        }
    }
}

impl Drop for AgentHandle {
    fn drop(&mut self) {
        self.stop_now();
    }
}

async fn handle_connection(shared: Arc<Shared>, mut stream: TcpStream) -> io::Result<()> {
    let _ = stream.set_nodelay(true);
    loop {
        let body = match read_frame_bytes(&mut stream).await {
            Ok(b) => b,
            Err(FrameError::Closed) => return Ok(()),
            Err(FrameError::TooLarge(len)) => {
                let msg = format!("frame length {len} exceeds {MAX_FRAME_BYTES}");
                write_frame(&mut stream, &Response::error(ErrorCode::BadFrame, msg)).await?;
                continue;
            }
            Err(FrameError::Malformed(m)) => {
                write_frame(&mut stream, &Response::error(ErrorCode::BadFrame, m)).await?;
                continue;
            }
            Err(FrameError::Io(e)) => return Err(e),
        };
        let req: Request = match serde_json::from_slice(&body) {
            Ok(r) => r,
            Err(e) => {
                let msg = format!("malformed frame: {e}");
                write_frame(&mut stream, &Response::error(ErrorCode::BadFrame, msg)).await?;
                continue;
            }
        };
        match req {
            Request::Info { protocol_version } => {
                let resp = if protocol_version < PROTOCOL_VERSION {
                    Response::error(
                        ErrorCode::UnsupportedVersion,
                        format!("protocol {protocol_version} unsupported, agent speaks {PROTOCOL_VERSION}"),
                    )
                } else {
                    let shared = shared.clone();
                    let info = tokio::task::spawn_blocking(move || shared.node_info())
                        .await
                        .map_err(io::Error::other)?;
                    Response::InfoOk(info)
                };
                write_frame(&mut stream, &resp).await?;
            }
            Request::Stage {
                dataset_id,
                fragment_index,
                byte_length,
            } => {
                if byte_length > MAX_TRANSFER_BYTES {
                    let msg = format!("upload of {byte_length} bytes exceeds limit");
                    write_frame(&mut stream, &Response::error(ErrorCode::Resource, msg)).await?;
                    // the raw bytes cannot be skipped safely
                    return Ok(());
                }
                let bytes = shared.throttle().read_exact(&mut stream, byte_length).await?;
                let resp = handle_stage(&shared, dataset_id, fragment_index, bytes).await;
                write_frame(&mut stream, &resp).await?;
            }
            Request::Run(desc) => {
                let resp = handle_run(&shared, desc).await;
                write_frame(&mut stream, &resp).await?;
            }
            Request::Status { job_id, task } => {
                let resp = match lookup(&shared, job_id, &task) {
                    Some(state) => Response::StatusOk(state),
                    None => not_found_job(job_id, &task),
                };
                write_frame(&mut stream, &resp).await?;
            }
            Request::Fetch {
                job_id,
                task,
                fragment_index,
            } => {
                let state = lookup(&shared, job_id, &task);
                let path = match &state {
                    None => Err(not_found_job(job_id, &task)),
                    Some(s) if s.state != LocalState::Done => Err(Response::Error {
                        code: ErrorCode::NotReady,
                        message: format!("job {job_id} task {:?} is {:?}", s.task, s.state),
                        missing: vec![],
                        state: Some(s.state),
                    }),
                    Some(s) => s
                        .results
                        .iter()
                        .find(|(idx, _)| *idx == fragment_index)
                        .map(|(_, rel)| shared.cfg.data_dir.join(rel))
                        .ok_or_else(|| {
                            Response::error(
                                ErrorCode::NotFound,
                                format!("job {job_id} has no result for fragment {fragment_index}"),
                            )
                        }),
                };
                send_file(&shared, &mut stream, path).await?;
            }
            Request::FetchFragment {
                dataset_id,
                fragment_index,
            } => {
                let path = if shared.store.holds(dataset_id, fragment_index) {
                    Ok(shared.store.fragment_path(dataset_id, fragment_index))
                } else {
                    Err(Response::error(
                        ErrorCode::NotFound,
                        format!("fragment ({dataset_id}, {fragment_index}) is not held here"),
                    ))
                };
                send_file(&shared, &mut stream, path).await?;
            }
        }
    }
}

fn not_found_job(job_id: u64, task: &str) -> Response {
    Response::error(ErrorCode::NotFound, format!("unknown job {job_id} task {task:?}"))
}

fn lookup(shared: &Shared, job_id: u64, task: &str) -> Option<LocalJobState> {
    if !task.is_empty() {
        return shared.job(&(job_id, task.to_owned()));
    }
    let jobs = shared.jobs.lock().unwrap_or_else(|e| e.into_inner());
    jobs.iter()
        .filter(|((id, _), _)| *id == job_id)
        .min_by(|a, b| a.0.cmp(b.0))
        .map(|(_, s)| s.clone())
}

async fn send_file(shared: &Shared, stream: &mut TcpStream, path: Result<PathBuf, Response>) -> io::Result<()> {
    let path = match path {
        Ok(p) => p,
        Err(resp) => return write_frame(stream, &resp).await,
    };
    let bytes = match tokio::fs::read(&path).await {
        Ok(b) => b,
        Err(e) => {
            let resp = Response::error(ErrorCode::NotFound, format!("{}: {e}", path.display()));
            return write_frame(stream, &resp).await;
        }
    };
    let Some(crc32) = crate::event::embedded_crc(&bytes) else {
        let resp = Response::error(ErrorCode::Internal, format!("{} is not a fragment", path.display()));
        return write_frame(stream, &resp).await;
    };
    write_frame(
        stream,
        &Response::FetchOk {
            byte_length: bytes.len() as u64,
            crc32,
        },
    )
    .await?;
    shared.throttle().write_all(stream, &bytes).await?;
    stream.flush().await
}

async fn handle_stage(shared: &Arc<Shared>, dataset_id: u64, fragment_index: u32, bytes: Vec<u8>) -> Response {
    let byte_length = bytes.len() as u64;
    let check = tokio::task::spawn_blocking(move || -> Result<(u32, Vec<u8>), DecodeError> {
        let f = decode_fragment(&bytes)?;
        if f.meta.dataset_id != dataset_id || f.meta.fragment_index != fragment_index {
            return Err(DecodeError::Format(format!(
                "header names fragment ({}, {}), frame names ({dataset_id}, {fragment_index})",
                f.meta.dataset_id, f.meta.fragment_index
            )));
        }
        Ok((crate::event::embedded_crc(&bytes).expect("decoded"), bytes))
    })
    .await;
    let (crc32, bytes) = match check {
        Ok(Ok(x)) => x,
        Ok(Err(e)) => {
            let code = match e {
                DecodeError::Format(_) => ErrorCode::BadFrame,
                _ => ErrorCode::CrcMismatch,
            };
            return Response::error(code, format!("staging rejected: {e}"));
        }
        Err(e) => return Response::error(ErrorCode::Internal, e.to_string()),
    };
    let store = shared.store.clone();
    let stored = tokio::task::spawn_blocking(move || store.install(dataset_id, fragment_index, &bytes)).await;
    match stored {
        Ok(Ok(())) => Response::StageOk {
            dataset_id,
            fragment_index,
            byte_length,
            crc32,
        },
        Ok(Err(e)) => Response::error(io_code(&e), format!("cannot store fragment: {e}")),
        Err(e) => Response::error(ErrorCode::Internal, e.to_string()),
    }
}

fn io_code(e: &io::Error) -> ErrorCode {
    if e.kind() == io::ErrorKind::StorageFull || e.raw_os_error() == Some(libc::ENOSPC) {
        ErrorCode::Resource
    } else {
        ErrorCode::Internal
    }
}

fn valid_task(task: &str) -> bool {
    !task.is_empty()
        && task.len() <= 256
        && task
            .bytes()
            .all(|b| b.is_ascii_alphanumeric() || matches!(b, b',' | b'_' | b'-'))
}

async fn handle_run(shared: &Arc<Shared>, desc: RunDescriptor) -> Response {
    let key = (desc.job_id, desc.task.clone());
    if let Some(state) = shared.job(&key) {
        return Response::RunOk(state);
    }
    if !valid_task(&desc.task) {
        return Response::error(ErrorCode::BadFrame, format!("invalid task key {:?}", desc.task));
    }
    if desc.fragment_indices.is_empty() {
        return Response::error(ErrorCode::BadFrame, "run lists no fragments");
    }
    let mut seen = desc.fragment_indices.clone();
    seen.sort_unstable();
    seen.dedup();
    if seen.len() != desc.fragment_indices.len() {
        return Response::error(ErrorCode::BadFrame, "run lists a fragment twice");
    }
    let missing: Vec<FragmentRef> = desc
        .fragment_indices
        .iter()
        .filter(|&&i| !shared.store.holds(desc.dataset_id, i))
        .map(|&i| FragmentRef {
            dataset_id: desc.dataset_id,
            fragment_index: i,
        })
        .collect();
    if !missing.is_empty() {
        let list: Vec<String> = missing
            .iter()
            .map(|m| format!("({}, {})", m.dataset_id, m.fragment_index))
            .collect();
        return Response::Error {
            code: ErrorCode::MissingFragments,
            message: format!("fragments not held: {}", list.join(", ")),
            missing,
            state: None,
        };
    }
    if let Err(msg) = validate_locally(shared, &desc).await {
        return Response::error(ErrorCode::InvalidFilter, msg);
    }

    let state = {
        let mut jobs = shared.jobs.lock().unwrap_or_else(|e| e.into_inner());
        // a concurrent duplicate may have won the race
        if let Some(existing) = jobs.get(&key) {
            return Response::RunOk(existing.clone());
        }
        let state = LocalJobState {
            job_id: desc.job_id,
            task: desc.task.clone(),
            state: LocalState::Received,
            events_scanned: 0,
            events_passed: 0,
            results: vec![],
            error: None,
        };
        jobs.insert(key, state.clone());
        state
    };
    tokio::spawn(exec::run(shared.clone(), desc));
    Response::RunOk(state)
}

/// Parses the filter and checks it against the schema of every listed
/// fragment.
async fn validate_locally(shared: &Arc<Shared>, desc: &RunDescriptor) -> Result<(), String> {
    let expr = parse(&desc.filter).map_err(|e| e.to_string())?;
    let paths: Vec<PathBuf> = desc
        .fragment_indices
        .iter()
        .map(|&i| shared.store.fragment_path(desc.dataset_id, i))
        .collect();
    let cal: Option<Calibration> = desc.calibration.clone();
    tokio::task::spawn_blocking(move || {
        for path in paths {
            let head = store::read_prefix(&path, 64 * 1024).map_err(|e| e.to_string())?;
            let schema = match decode_header(&head) {
                Ok((_, s)) => s,
                Err(DecodeError::Truncation { .. }) => {
                    let all = std::fs::read(&path).map_err(|e| e.to_string())?;
                    decode_header(&all).map_err(|e| e.to_string())?.1
                }
                // a damaged file fails in the executor with full detail
                Err(_) => continue,
            };
            expr.validate(&schema)
                .map_err(|errs| errs.iter().map(|e| e.to_string()).collect::<Vec<_>>().join(", "))?;
            if let Some(cal) = &cal {
                cal.validate(&schema).map_err(|e| e.to_string())?;
            }
        }
        Ok(())
    })
    .await
    .map_err(|e| e.to_string())?
}
