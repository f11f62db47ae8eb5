//! Download of ensemble entries into a local cache directory.
//!
//! A cached file is trusted when a `.meta` sidecar records its byte size and
//! the file on disk still has that size. Downloads are written to a temporary
//! file and renamed into place, and concurrent fetches of the same path are
//! serialized.

use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use once_cell::sync::Lazy;
use thiserror::Error;

pub const BASE_URL_ENV: &str = "BACKMAP_FETCH_BASE_URL";
pub const DEFAULT_URL_TEMPLATE: &str = "https://deposition.proteinensemble.org/api/v1/ensembles/{id}/ensemble-pdb";
const BODY_LIMIT: u64 = 4 << 30;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum FetchError {
    #[error("malformed entry id `{0}` (expected PEDxxxxx or PEDxxxxxexxx)")]
    InvalidId(String),
    #[error("entry {0} not found")]
    NotFound(String),
    #[error("HTTP status {status}{}", if *retryable { " (retryable)" } else { "" })]
    Http { status: u16, retryable: bool },
    #[error("network error: {0}")]
    Network(String),
    #[error("i/o error: {0}")]
    Io(String),
}

impl FetchError {
    pub fn is_retryable(&self) -> bool {
        matches!(self, FetchError::Http { retryable: true, .. } | FetchError::Network(_))
    }
}

impl From<std::io::Error> for FetchError {
    fn from(e: std::io::Error) -> Self {
        FetchError::Io(e.to_string())
    }
}

/// Performs one HTTP GET. `Err(Http { status: 404, .. })` for missing entries.
pub trait Transport: Send + Sync {
    fn get(&self, url: &str) -> Result<Vec<u8>, FetchError>;
}

pub struct UreqTransport {
    agent: ureq::Agent,
}

impl Default for UreqTransport {
    fn default() -> Self {
        let config = ureq::Agent::config_builder().timeout_global(Some(Duration::from_secs(300))).build();
        UreqTransport { agent: config.into() }
    }
}

impl Transport for UreqTransport {
    fn get(&self, url: &str) -> Result<Vec<u8>, FetchError> {
        match self.agent.get(url).call() {
            Ok(mut response) => response
                .body_mut()
                .with_config()
                .limit(BODY_LIMIT)
                .read_to_vec()
                .map_err(|e| FetchError::Network(e.to_string())),
            Err(ureq::Error::StatusCode(status)) => Err(FetchError::Http { status, retryable: status_retryable(status) }),
            Err(e) => Err(FetchError::Network(e.to_string())),
        }
    }
}

fn status_retryable(status: u16) -> bool {
    status == 408 || status == 429 || status >= 500
}

/// `PED` + five digits, optionally `e` + three digits.
pub fn validate_entry_id(id: &str) -> Result<(), FetchError> {
    let digits = |s: &str, n: usize| s.len() == n && s.bytes().all(|b| b.is_ascii_digit());
    let ok = id.strip_prefix("PED").is_some_and(|rest| match rest.split_once('e') {
        Some((entry, ensemble)) => digits(entry, 5) && digits(ensemble, 3),
        None => digits(rest, 5),
    });
    if ok {
        Ok(())
    } else {
        Err(FetchError::InvalidId(id.to_string()))
    }
}

static PATH_LOCKS: Lazy<Mutex<HashMap<PathBuf, Arc<Mutex<()>>>>> = Lazy::new(Default::default);

fn lock_for(path: &Path) -> Arc<Mutex<()>> {
    PATH_LOCKS.lock().unwrap_or_else(|e| e.into_inner()).entry(path.to_path_buf()).or_default().clone()
}

fn meta_path(path: &Path) -> PathBuf {
    let mut name = path.file_name().unwrap_or_default().to_os_string();
    name.push(".meta");
    path.with_file_name(name)
}

fn cached(path: &Path) -> bool {
    let Ok(meta) = fs::read_to_string(meta_path(path)) else { return false };
    let Some(size) = meta.lines().find_map(|l| l.strip_prefix("size ")).and_then(|s| s.trim().parse::<u64>().ok()) else {
        return false;
    };
    fs::metadata(path).map(|m| m.is_file() && m.len() == size).unwrap_or(false)
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), FetchError> {
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    let tmp = dir.join(format!(
        ".{}.{}.part",
        path.file_name().unwrap_or_default().to_string_lossy(),
        std::process::id()
    ));
    let mut file = fs::File::create(&tmp)?;
    file.write_all(bytes)?;
    file.sync_all()?;
    fs::rename(&tmp, path)?;
    Ok(())
}

pub struct FetchClient {
    transport: Box<dyn Transport>,
    url_template: String,
    pub max_attempts: u32,
    pub backoff: Duration,
}

impl FetchClient {
    /// Client over `transport`, with the URL template taken from
    /// `BACKMAP_FETCH_BASE_URL` when set.
    pub fn new(transport: Box<dyn Transport>) -> FetchClient {
        let template = std::env::var(BASE_URL_ENV).ok().filter(|s| !s.is_empty());
        FetchClient::with_url(transport, template.as_deref().unwrap_or(DEFAULT_URL_TEMPLATE))
    }

    /// A template containing `{id}` is used verbatim; a plain base URL gets
    /// `/{id}` appended.
    pub fn with_url(transport: Box<dyn Transport>, template: &str) -> FetchClient {
        let url_template = if template.contains("{id}") {
            template.to_string()
        } else {
            format!("{}/{{id}}", template.trim_end_matches('/'))
        };
        FetchClient { transport, url_template, max_attempts: 3, backoff: Duration::from_millis(500) }
    }

    pub fn url_for(&self, id: &str) -> String {
        self.url_template.replace("{id}", id)
    }

    /// Path of a valid cached copy of `id` under `dest`, if any.
    pub fn cached_path(&self, id: &str, dest: &Path) -> Option<PathBuf> {
        let path = dest.join(format!("{id}.pdb"));
        (validate_entry_id(id).is_ok() && cached(&path)).then_some(path)
    }

    /// Downloads `id` to `<dest>/<id>.pdb` unless already cached there.
    pub fn fetch_entry(&self, id: &str, dest: &Path) -> Result<PathBuf, FetchError> {
        validate_entry_id(id)?;
        let path = dest.join(format!("{id}.pdb"));
        if cached(&path) {
            return Ok(path);
        }
        let lock = lock_for(&path);
        let _guard = lock.lock().unwrap_or_else(|e| e.into_inner());
        if cached(&path) {
            return Ok(path);
        }
        fs::create_dir_all(dest)?;
        let url = self.url_for(id);
        let mut attempt = 0;
        let bytes = loop {
            attempt += 1;
            match self.transport.get(&url) {
                Ok(bytes) => break bytes,
                Err(FetchError::Http { status: 404, .. }) => return Err(FetchError::NotFound(id.to_string())),
                Err(e) if e.is_retryable() && attempt < self.max_attempts => {
                    log::warn!("fetch {id}: {e}; retrying");
                    std::thread::sleep(self.backoff * attempt);
                }
                Err(e) => return Err(e),
            }
        };
        write_atomic(&path, &bytes)?;
        write_atomic(&meta_path(&path), format!("size {}\nurl {url}\n", bytes.len()).as_bytes())?;
        Ok(path)
    }
}
