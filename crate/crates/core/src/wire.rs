//! Node agent wire protocol.
//!
//! Every message is a frame: a little-endian `u32` payload length followed by
//! a UTF-8 JSON object with a `"type"` field. `stage` requests and `fetch_ok`
//! responses are followed by `byte_length` raw bytes outside the frame.

use crate::filter::Calibration;
use serde::{Deserialize, Serialize};
use std::io;
use std::sync::{Arc, Mutex};
use std::time::Duration;
use tokio::io::{AsyncRead, AsyncReadExt, AsyncWrite, AsyncWriteExt};
use tokio::net::TcpStream;

pub const PROTOCOL_VERSION: u32 = 1;

/// Default node agent port.
pub const DEFAULT_PORT: u16 = 2135;

/// Upper bound on a JSON frame; raw transfers are not frames.
pub const MAX_FRAME_BYTES: u32 = 1 << 20;

/// Upper bound on a raw transfer following `stage` or `fetch_ok`.
pub const MAX_TRANSFER_BYTES: u64 = 4 << 30;

/// Resource descriptor reported by a node agent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeInfo {
    pub name: String,
    pub protocol_version: u32,
    pub processors: u32,
    pub load_1m: f64,
    pub free_disk_bytes: u64,
    pub bandwidth_bytes_per_s: u64,
    pub fragments_held: Vec<FragmentRef>,
    pub uptime_s: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct FragmentRef {
    pub dataset_id: u64,
    pub fragment_index: u32,
}

/// The job descriptor carried by `run` frames.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunDescriptor {
    pub job_id: u64,
    /// Identifies one run of a job on a node; runs are idempotent per
    /// `(job_id, task)`.
    pub task: String,
    pub dataset_id: u64,
    pub fragment_indices: Vec<u32>,
    pub filter: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub calibration: Option<Calibration>,
}

impl RunDescriptor {
    /// Task key derived from the fragment list, so that re-planning the same
    /// work yields the same key.
    pub fn task_key(fragment_indices: &[u32]) -> String {
        let mut sorted = fragment_indices.to_vec();
        sorted.sort_unstable();
        sorted.iter().map(|i| i.to_string()).collect::<Vec<_>>().join(",")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum LocalState {
    Received,
    Running,
    Done,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalJobState {
    pub job_id: u64,
    pub task: String,
    pub state: LocalState,
    pub events_scanned: u64,
    pub events_passed: u64,
    /// Result file per fragment index, relative to the agent data directory.
    #[serde(default)]
    pub results: Vec<(u32, String)>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Request {
    Info {
        #[serde(default = "default_version")]
        protocol_version: u32,
    },
    Stage {
        dataset_id: u64,
        fragment_index: u32,
        byte_length: u64,
    },
    Run(RunDescriptor),
    Status {
        job_id: u64,
        #[serde(default)]
        task: String,
    },
    /// Result of one fragment of a finished run.
    Fetch {
        job_id: u64,
        #[serde(default)]
        task: String,
        fragment_index: u32,
    },
    /// Raw copy of a held fragment, used to stage it elsewhere.
    FetchFragment {
        dataset_id: u64,
        fragment_index: u32,
    },
}

fn default_version() -> u32 {
    PROTOCOL_VERSION
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ErrorCode {
    BadFrame,
    NotFound,
    NotReady,
    MissingFragments,
    InvalidFilter,
    CrcMismatch,
    Resource,
    UnsupportedVersion,
    Internal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Response {
    InfoOk(NodeInfo),
    StageOk {
        dataset_id: u64,
        fragment_index: u32,
        byte_length: u64,
        crc32: u32,
    },
    RunOk(LocalJobState),
    StatusOk(LocalJobState),
    FetchOk {
        byte_length: u64,
        crc32: u32,
    },
    Error {
        code: ErrorCode,
        message: String,
        #[serde(default, skip_serializing_if = "Vec::is_empty")]
        missing: Vec<FragmentRef>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        state: Option<LocalState>,
    },
}

impl Response {
    pub fn error(code: ErrorCode, message: impl Into<String>) -> Self {
        Response::Error {
            code,
            message: message.into(),
            missing: Vec::new(),
            state: None,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum FrameError {
    #[error("connection closed")]
    Closed,
    #[error("frame of {0} bytes exceeds limit")]
    TooLarge(u32),
    #[error("malformed frame: {0}")]
    Malformed(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

pub async fn write_frame<W, T>(w: &mut W, msg: &T) -> io::Result<()>
where
    W: AsyncWrite + Unpin,
    T: Serialize,
{
    let body = serde_json::to_vec(msg).map_err(io::Error::other)?;
    let mut buf = Vec::with_capacity(4 + body.len());
    buf.extend_from_slice(&(body.len() as u32).to_le_bytes());
    buf.extend_from_slice(&body);
    w.write_all(&buf).await?;
    w.flush().await
}

/// Reads one frame's payload. An oversized length is reported without
/// consuming the payload.
pub async fn read_frame_bytes<R: AsyncRead + Unpin>(r: &mut R) -> Result<Vec<u8>, FrameError> {
    let mut len = [0u8; 4];
    match r.read_exact(&mut len).await {
        Ok(_) => {}
        Err(e) if e.kind() == io::ErrorKind::UnexpectedEof => return Err(FrameError::Closed),
        Err(e) => return Err(e.into()),
    }
    let len = u32::from_le_bytes(len);
    if len > MAX_FRAME_BYTES {
        return Err(FrameError::TooLarge(len));
    }
    let mut body = vec![0u8; len as usize];
    r.read_exact(&mut body).await?;
    Ok(body)
}

pub async fn read_frame<R, T>(r: &mut R) -> Result<T, FrameError>
where
    R: AsyncRead + Unpin,
    T: for<'de> Deserialize<'de>,
{
    let body = read_frame_bytes(r).await?;
    serde_json::from_slice(&body).map_err(|e| FrameError::Malformed(e.to_string()))
}

/// Bandwidth limit of one node's link, shared by every transfer through it.
/// Clones share the same link.
#[derive(Debug, Clone, Default)]
pub struct Throttle {
    bytes_per_s: u64,
    next_free: Arc<Mutex<Option<tokio::time::Instant>>>,
}

impl Throttle {
    pub const CHUNK: usize = 64 * 1024;

    /// `bytes_per_s == 0` means unlimited.
    pub fn new(bytes_per_s: u64) -> Self {
        Throttle {
            bytes_per_s,
            next_free: Arc::default(),
        }
    }

    pub fn unlimited() -> Self {
        Self::new(0)
    }

    pub fn bytes_per_s(&self) -> u64 {
        self.bytes_per_s
    }

    /// Books `n` bytes on the link and sleeps until they have gone through.
    pub async fn pace(&self, n: u64) {
        if self.bytes_per_s == 0 {
            return;
        }
        let due = {
            let mut next = self.next_free.lock().unwrap_or_else(|e| e.into_inner());
            let now = tokio::time::Instant::now();
            let from = next.map_or(now, |t| t.max(now));
            let due = from + Duration::from_secs_f64(n as f64 / self.bytes_per_s as f64);
            *next = Some(due);
            due
        };
        tokio::time::sleep_until(due).await;
    }

    pub async fn write_all<W: AsyncWrite + Unpin>(&self, w: &mut W, bytes: &[u8]) -> io::Result<()> {
        // a chunk is released only once the link has carried it, so the
        // reader never sees data early
        for chunk in bytes.chunks(Self::CHUNK) {
            self.pace(chunk.len() as u64).await;
            w.write_all(chunk).await?;
        }
        w.flush().await
    }

    pub async fn read_exact<R: AsyncRead + Unpin>(&self, r: &mut R, len: u64) -> io::Result<Vec<u8>> {
        // grow as data arrives instead of trusting the declared length
        let mut out = Vec::with_capacity(len.min(Self::CHUNK as u64 * 16) as usize);
        let mut chunk = vec![0u8; Self::CHUNK];
        while (out.len() as u64) < len {
            let want = (len - out.len() as u64).min(Self::CHUNK as u64) as usize;
            r.read_exact(&mut chunk[..want]).await?;
            out.extend_from_slice(&chunk[..want]);
            self.pace(want as u64).await;
        }
        Ok(out)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ClientError {
    #[error("cannot reach {addr}: {source}")]
    Connect { addr: String, source: io::Error },
    #[error("request to {addr} timed out")]
    Timeout { addr: String },
    #[error("transport error with {addr}: {source}")]
    Transport { addr: String, source: FrameError },
    #[error("{addr} replied {code:?}: {message}")]
    Remote {
        addr: String,
        code: ErrorCode,
        message: String,
        missing: Vec<FragmentRef>,
        state: Option<LocalState>,
    },
    #[error("{addr} sent an unexpected reply")]
    Unexpected { addr: String },
}

impl ClientError {
    /// True when the node could not be reached or the connection broke, as
    /// opposed to the node answering with an error.
    pub fn is_unreachable(&self) -> bool {
        matches!(
            self,
            ClientError::Connect { .. } | ClientError::Timeout { .. } | ClientError::Transport { .. }
        )
    }
}

/// One-request-per-connection client for a node agent.
#[derive(Debug, Clone)]
pub struct NodeClient {
    pub addr: String,
    pub timeout: Duration,
}

impl NodeClient {
    pub fn new(addr: impl Into<String>) -> Self {
        Self {
            addr: addr.into(),
            timeout: Duration::from_secs(10),
        }
    }

    pub fn with_timeout(mut self, timeout: Duration) -> Self {
        self.timeout = timeout;
        self
    }

    async fn connect(&self) -> Result<TcpStream, ClientError> {
        match tokio::time::timeout(self.timeout, TcpStream::connect(&self.addr)).await {
            Ok(Ok(s)) => {
                let _ = s.set_nodelay(true);
                Ok(s)
            }
            Ok(Err(source)) => Err(ClientError::Connect {
                addr: self.addr.clone(),
                source,
            }),
            Err(_) => Err(ClientError::Timeout {
                addr: self.addr.clone(),
            }),
        }
    }

    fn transport(&self, source: impl Into<FrameError>) -> ClientError {
        ClientError::Transport {
            addr: self.addr.clone(),
            source: source.into(),
        }
    }

    fn remote(&self, resp: Response) -> ClientError {
        match resp {
            Response::Error {
                code,
                message,
                missing,
                state,
            } => ClientError::Remote {
                addr: self.addr.clone(),
                code,
                message,
                missing,
                state,
            },
            _ => ClientError::Unexpected {
                addr: self.addr.clone(),
            },
        }
    }

    async fn exchange(&self, req: &Request, body: Option<&[u8]>) -> Result<(Response, TcpStream), ClientError> {
        let fut = async {
            let mut stream = self.connect().await?;
            write_frame(&mut stream, req).await.map_err(|e| self.transport(e))?;
            if let Some(body) = body {
                stream.write_all(body).await.map_err(|e| self.transport(e))?;
                stream.flush().await.map_err(|e| self.transport(e))?;
            }
            let resp: Response = read_frame(&mut stream).await.map_err(|e| self.transport(e))?;
            Ok((resp, stream))
        };
        // uploads may be paced by the receiver, so only bound the handshake
        // for frame-only requests
        match body {
            Some(_) => fut.await,
            None => tokio::time::timeout(self.timeout, fut)
                .await
                .map_err(|_| ClientError::Timeout {
                    addr: self.addr.clone(),
                })?,
        }
    }

    pub async fn info(&self) -> Result<NodeInfo, ClientError> {
        let req = Request::Info {
            protocol_version: PROTOCOL_VERSION,
        };
        match self.exchange(&req, None).await?.0 {
            Response::InfoOk(info) => Ok(info),
            other => Err(self.remote(other)),
        }
    }

    /// Uploads an encoded fragment; returns the CRC acknowledged by the node.
    pub async fn stage(&self, dataset_id: u64, fragment_index: u32, bytes: &[u8]) -> Result<u32, ClientError> {
        let req = Request::Stage {
            dataset_id,
            fragment_index,
            byte_length: bytes.len() as u64,
        };
        match self.exchange(&req, Some(bytes)).await?.0 {
            Response::StageOk { crc32, .. } => Ok(crc32),
            other => Err(self.remote(other)),
        }
    }

    pub async fn run(&self, desc: &RunDescriptor) -> Result<LocalJobState, ClientError> {
        match self.exchange(&Request::Run(desc.clone()), None).await?.0 {
            Response::RunOk(state) => Ok(state),
            other => Err(self.remote(other)),
        }
    }

    pub async fn status(&self, job_id: u64, task: &str) -> Result<LocalJobState, ClientError> {
        let req = Request::Status {
            job_id,
            task: task.to_owned(),
        };
        match self.exchange(&req, None).await?.0 {
            Response::StatusOk(state) => Ok(state),
            other => Err(self.remote(other)),
        }
    }

    async fn download(&self, req: Request) -> Result<(Vec<u8>, u32), ClientError> {
        let (resp, mut stream) = self.exchange(&req, None).await?;
        match resp {
            Response::FetchOk { byte_length, crc32 } => {
                if byte_length > MAX_TRANSFER_BYTES {
                    return Err(ClientError::Unexpected {
                        addr: self.addr.clone(),
                    });
                }
                let bytes = Throttle::unlimited()
                    .read_exact(&mut stream, byte_length)
                    .await
                    .map_err(|e| self.transport(e))?;
                Ok((bytes, crc32))
            }
            other => Err(self.remote(other)),
        }
    }

    /// Downloads one fragment result of a finished run; returns the bytes and
    /// the CRC the node declared for them.
    pub async fn fetch(&self, job_id: u64, task: &str, fragment_index: u32) -> Result<(Vec<u8>, u32), ClientError> {
        self.download(Request::Fetch {
            job_id,
            task: task.to_owned(),
            fragment_index,
        })
        .await
    }

    pub async fn fetch_fragment(&self, dataset_id: u64, fragment_index: u32) -> Result<(Vec<u8>, u32), ClientError> {
        self.download(Request::FetchFragment {
            dataset_id,
            fragment_index,
        })
        .await
    }
}
