use crate::event::FRAGMENT_EXTENSION;
use crate::wire::FragmentRef;
use std::fs::{self, File};
use std::io::{self, Read, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

const TMP_DIR: &str = ".tmp";
const RESULTS_DIR: &str = "results";

pub fn fragment_file_name(dataset_id: u64, fragment_index: u32) -> String {
    format!("ds{dataset_id}-f{fragment_index}.{FRAGMENT_EXTENSION}")
}

pub fn parse_fragment_file_name(name: &str) -> Option<FragmentRef> {
    let stem = name.strip_suffix(FRAGMENT_EXTENSION)?.strip_suffix('.')?;
    let (ds, idx) = stem.strip_prefix("ds")?.split_once("-f")?;
    let all_digits = |s: &str| !s.is_empty() && s.bytes().all(|b| b.is_ascii_digit());
    if !all_digits(ds) || !all_digits(idx) {
        return None;
    }
    Some(FragmentRef {
        dataset_id: ds.parse().ok()?,
        fragment_index: idx.parse().ok()?,
    })
}

/// Fragment and result files under an agent's data directory. Files become
/// visible only through a rename from the temp directory.
#[derive(Clone)]
pub(crate) struct Store {
    dir: Arc<PathBuf>,
    tmp_counter: Arc<AtomicU64>,
}

impl Store {
    pub fn open(dir: &Path) -> io::Result<Self> {
        fs::create_dir_all(dir.join(RESULTS_DIR))?;
        let tmp = dir.join(TMP_DIR);
        if tmp.exists() {
            fs::remove_dir_all(&tmp)?;
        }
        fs::create_dir_all(&tmp)?;
        Ok(Self {
            dir: Arc::new(dir.to_path_buf()),
            tmp_counter: Arc::new(AtomicU64::new(0)),
        })
    }

    pub fn fragment_path(&self, dataset_id: u64, fragment_index: u32) -> PathBuf {
        self.dir.join(fragment_file_name(dataset_id, fragment_index))
    }

    pub fn holds(&self, dataset_id: u64, fragment_index: u32) -> bool {
        self.fragment_path(dataset_id, fragment_index).is_file()
    }

    /// Fragments currently present, sorted.
    pub fn scan(&self) -> Vec<FragmentRef> {
        let mut out: Vec<FragmentRef> = match fs::read_dir(&*self.dir) {
            Ok(rd) => rd
                .filter_map(|e| e.ok())
                .filter(|e| e.file_type().map(|t| t.is_file()).unwrap_or(false))
                .filter_map(|e| parse_fragment_file_name(&e.file_name().to_string_lossy()))
                .collect(),
            Err(_) => Vec::new(),
        };
        out.sort_unstable();
        out
    }

    fn write_visible(&self, dest: &Path, bytes: &[u8]) -> io::Result<()> {
        let n = self.tmp_counter.fetch_add(1, Ordering::Relaxed);
        let tmp = self.dir.join(TMP_DIR).join(format!("{}-{n}", std::process::id()));
        let result = (|| {
            let mut f = File::create(&tmp)?;
            f.write_all(bytes)?;
            f.sync_all()?;
            fs::rename(&tmp, dest)
        })();
        if result.is_err() {
            let _ = fs::remove_file(&tmp);
        }
        result
    }

    /// Installs a verified fragment, replacing any previous copy.
    pub fn install(&self, dataset_id: u64, fragment_index: u32, bytes: &[u8]) -> io::Result<()> {
        self.write_visible(&self.fragment_path(dataset_id, fragment_index), bytes)
    }

    /// Data-dir-relative path of a per-fragment result.
    pub fn result_rel_path(job_id: u64, task: &str, fragment_index: u32) -> String {
        format!(
            "{RESULTS_DIR}/job{job_id}-t{}-f{fragment_index}.{FRAGMENT_EXTENSION}",
            task.replace(',', "_")
        )
    }

    pub fn write_result(&self, rel: &str, bytes: &[u8]) -> io::Result<()> {
        self.write_visible(&self.dir.join(rel), bytes)
    }
}

pub(crate) fn read_prefix(path: &Path, limit: usize) -> io::Result<Vec<u8>> {
    let mut buf = Vec::with_capacity(limit);
    File::open(path)?.take(limit as u64).read_to_end(&mut buf)?;
    Ok(buf)
}
