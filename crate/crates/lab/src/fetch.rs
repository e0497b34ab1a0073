//! Integrity-checked dataset download and cache.
//!
//! Layout: `<cache_dir>/<dataset>/<file>`. Files are fetched as
//! `<mirror>/<file>.gz`, decompressed, and kept only if their SHA-256
//! matches the pinned digest.

use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};
use std::time::Duration;

use flate2::read::GzDecoder;
use log::{info, warn};
use sha2::{Digest, Sha256};

use crate::error::{LabError, Result};

pub const MIRRORS: &str = include_str!("../../../config/mirrors.txt");
pub const MNIST_DIGESTS: &str = include_str!("../../../config/mnist.sha256");
pub const FMNIST_DIGESTS: &str = include_str!("../../../config/fmnist.sha256");

pub const DATASETS: [&str; 2] = ["mnist", "fmnist"];

/// Pinned digests shipped with the crate for `dataset`.
pub fn builtin_digests(dataset: &str) -> Result<Vec<(String, String)>> {
    match dataset {
        "mnist" => parse_digests(MNIST_DIGESTS),
        "fmnist" => parse_digests(FMNIST_DIGESTS),
        other => Err(LabError::Config(format!("unknown dataset `{other}` (expected mnist or fmnist)"))),
    }
}

fn content_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
}

/// `filename sha256` per line; `#` starts a comment line.
pub fn parse_digests(text: &str) -> Result<Vec<(String, String)>> {
    content_lines(text)
        .map(|(n, line)| {
            let mut parts = line.split_whitespace();
            match (parts.next(), parts.next(), parts.next()) {
                (Some(file), Some(hex), None) if hex.len() == 64 && hex.chars().all(|c| c.is_ascii_hexdigit()) => {
                    Ok((file.to_string(), hex.to_ascii_lowercase()))
                }
                _ => Err(LabError::Config(format!("digest line {n}: expected `<file> <sha256>`"))),
            }
        })
        .collect()
}

/// Mirror base URLs for `dataset`, in file order.
pub fn parse_mirrors(text: &str, dataset: &str) -> Result<Vec<String>> {
    let mut out = Vec::new();
    for (n, line) in content_lines(text) {
        let mut parts = line.split_whitespace();
        match (parts.next(), parts.next(), parts.next()) {
            (Some(name), Some(url), None) => {
                if name == dataset {
                    out.push(url.trim_end_matches('/').to_string());
                }
            }
            _ => return Err(LabError::Config(format!("mirror line {n}: expected `<dataset> <url>`"))),
        }
    }
    Ok(out)
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Blocking HTTP GET.
pub trait Transport {
    fn get(&self, url: &str) -> std::result::Result<Vec<u8>, String>;
}

pub struct HttpTransport {
    agent: ureq::Agent,
}

impl Default for HttpTransport {
    fn default() -> Self {
        HttpTransport {
            agent: ureq::AgentBuilder::new().timeout(Duration::from_secs(120)).build(),
        }
    }
}

impl Transport for HttpTransport {
    fn get(&self, url: &str) -> std::result::Result<Vec<u8>, String> {
        let resp = self.agent.get(url).call().map_err(|e| e.to_string())?;
        let mut body = Vec::new();
        resp.into_reader().read_to_end(&mut body).map_err(|e| e.to_string())?;
        Ok(body)
    }
}

fn gunzip(bytes: &[u8]) -> std::result::Result<Vec<u8>, String> {
    let mut out = Vec::new();
    GzDecoder::new(bytes).read_to_end(&mut out).map_err(|e| format!("gzip: {e}"))?;
    Ok(out)
}

/// Moves a bad cached file aside as `<file>.corrupt[.N]`.
fn quarantine(path: &Path) -> Result<PathBuf> {
    let mut target = path.with_extension("corrupt");
    let mut n = 1;
    while target.exists() {
        target = PathBuf::from(format!("{}.corrupt.{n}", path.display()));
        n += 1;
    }
    fs::rename(path, &target).map_err(|e| LabError::io(path, e))?;
    Ok(target)
}

/// Ensures every file of `digests` is present and verified under
/// `cache_dir/dataset`, downloading only what is missing.
///
/// A cached file with the wrong digest is quarantined and reported as an
/// error; it is not silently replaced.
pub fn fetch_dataset(
    dataset: &str,
    cache_dir: &Path,
    mirrors: &[String],
    digests: &[(String, String)],
    transport: &dyn Transport,
) -> Result<Vec<PathBuf>> {
    let dir = cache_dir.join(dataset);
    let mut paths = Vec::with_capacity(digests.len());
    for (file, expected) in digests {
        let path = dir.join(file);
        if path.exists() {
            let bytes = fs::read(&path).map_err(|e| LabError::io(&path, e))?;
            let actual = sha256_hex(&bytes);
            if &actual != expected {
                let moved = quarantine(&path)?;
                warn!("quarantined {} as {}", path.display(), moved.display());
                return Err(LabError::Digest {
                    path,
                    expected: expected.clone(),
                    actual,
                });
            }
            paths.push(path);
            continue;
        }
        let mut attempts = Vec::new();
        let mut fetched = None;
        for base in mirrors {
            let url = format!("{base}/{file}.gz");
            info!("fetching {url}");
            match transport.get(&url).and_then(|gz| gunzip(&gz)) {
                Ok(bytes) => {
                    let actual = sha256_hex(&bytes);
                    if &actual == expected {
                        fetched = Some(bytes);
                        break;
                    }
                    attempts.push(format!("{url}: digest {actual}"));
                }
                Err(e) => attempts.push(format!("{url}: {e}")),
            }
        }
        let Some(bytes) = fetched else {
            return Err(LabError::AllMirrorsFailed {
                file: file.clone(),
                attempts,
            });
        };
        fs::create_dir_all(&dir).map_err(|e| LabError::io(&dir, e))?;
        let tmp = path.with_extension("part");
        fs::write(&tmp, &bytes).map_err(|e| LabError::io(&tmp, e))?;
        fs::rename(&tmp, &path).map_err(|e| LabError::io(&path, e))?;
        paths.push(path);
    }
    Ok(paths)
}
