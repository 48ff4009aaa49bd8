//! Dataset download with checksum verification and unpacking.
//!
//! Re-running against a populated directory is a no-op: sources whose
//! unpacked artifacts already exist are skipped without touching the
//! network.

use std::fs::File;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use md5::{Digest, Md5};

use crate::error::{Error, Result};
use crate::models::DatasetKind;

/// Environment variable overriding the download base URL.
pub const MIRROR_ENV: &str = "HCNN_DATA_MIRROR";

const MNIST_BASE: &str = "https://ossci-datasets.s3.amazonaws.com/mnist";
const CIFAR_BASE: &str = "https://www.cs.toronto.edu/~kriz";

/// How to turn downloaded bytes into the loader's on-disk layout.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Unpack {
    None,
    Gzip,
    TarGz,
}

/// One downloadable artifact.
#[derive(Debug, Clone)]
pub struct FetchSource {
    pub url: String,
    pub filename: String,
    /// Checksum published alongside the distribution, when known.
    pub md5: Option<String>,
    pub unpack: Unpack,
    /// Files that must exist after unpacking; their presence short-circuits
    /// the download.
    pub produces: Vec<String>,
}

fn mnist_sources(base: &str) -> Vec<FetchSource> {
    // md5 values as published with the original distribution
    let files = [
        ("train-images-idx3-ubyte.gz", "f68b3c2dcbeaaa9fbdd348bbdeb94873"),
        ("train-labels-idx1-ubyte.gz", "d53e105ee54ea40749a09fcbcd1e9432"),
        ("t10k-images-idx3-ubyte.gz", "9fb629c4189551a2d022fa330f9573f3"),
        ("t10k-labels-idx1-ubyte.gz", "ec29112dd5afa0611ce80d1b7f02629c"),
    ];
    files
        .iter()
        .map(|(name, md5)| FetchSource {
            url: format!("{base}/{name}"),
            filename: name.to_string(),
            md5: Some(md5.to_string()),
            unpack: Unpack::Gzip,
            produces: vec![name.trim_end_matches(".gz").to_string()],
        })
        .collect()
}

fn cifar_sources(base: &str) -> Vec<FetchSource> {
    vec![FetchSource {
        url: format!("{base}/cifar-10-binary.tar.gz"),
        filename: "cifar-10-binary.tar.gz".to_string(),
        md5: Some("c32a1d4ab5d03f1284b67883e8d87530".to_string()),
        unpack: Unpack::TarGz,
        produces: (1..=5)
            .map(|i| format!("cifar-10-batches-bin/data_batch_{i}.bin"))
            .chain(std::iter::once(
                "cifar-10-batches-bin/test_batch.bin".to_string(),
            ))
            .collect(),
    }]
}

/// Downloads and unpacks one dataset into `dir`. `mirror` (or the
/// `HCNN_DATA_MIRROR` variable) replaces the default base URL.
pub fn fetch(dataset: DatasetKind, dir: &Path, mirror: Option<&str>) -> Result<()> {
    let env_mirror = std::env::var(MIRROR_ENV).ok();
    let base = mirror.or(env_mirror.as_deref());
    let sources = match dataset {
        DatasetKind::Mnist => mnist_sources(base.unwrap_or(MNIST_BASE)),
        DatasetKind::Cifar10 => cifar_sources(base.unwrap_or(CIFAR_BASE)),
    };
    fetch_sources(&sources, dir)
}

/// Downloads, verifies and unpacks each source into `dir`, skipping any
/// whose produced files are already present.
pub fn fetch_sources(sources: &[FetchSource], dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    for src in sources {
        if src.produces.iter().all(|p| dir.join(p).exists()) {
            continue;
        }
        let archive = download_verified(src, dir)?;
        unpack(src, &archive, dir)?;
    }
    Ok(())
}

fn download_verified(src: &FetchSource, dir: &Path) -> Result<PathBuf> {
    let target = dir.join(&src.filename);
    // A previously downloaded archive with a good checksum is reused.
    if target.exists() {
        if let Ok(bytes) = std::fs::read(&target) {
            if checksum_ok(src, &bytes) {
                return Ok(target);
            }
        }
        std::fs::remove_file(&target)?;
    }

    let mut response = ureq::get(&src.url).call().map_err(|e| {
        Error::Availability(format!("download of {} failed: {e}", src.url))
    })?;
    let mut bytes = Vec::new();
    response
        .body_mut()
        .as_reader()
        .read_to_end(&mut bytes)
        .map_err(|e| Error::Availability(format!("reading {} failed: {e}", src.url)))?;

    if !checksum_ok(src, &bytes) {
        return Err(Error::Integrity(format!(
            "{}: md5 {} does not match published {}",
            src.filename,
            hex_md5(&bytes),
            src.md5.as_deref().unwrap_or("<none>")
        )));
    }
    let mut f = File::create(&target)?;
    f.write_all(&bytes)?;
    Ok(target)
}

fn checksum_ok(src: &FetchSource, bytes: &[u8]) -> bool {
    match &src.md5 {
        Some(want) => hex_md5(bytes).eq_ignore_ascii_case(want),
        None => true,
    }
}

fn hex_md5(bytes: &[u8]) -> String {
    let digest = Md5::digest(bytes);
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

fn unpack(src: &FetchSource, archive: &Path, dir: &Path) -> Result<()> {
    let cleanup = |err: Error| -> Error {
        // A half-unpacked tree would mask the failure on the next run.
        for p in &src.produces {
            let _ = std::fs::remove_file(dir.join(p));
        }
        err
    };
    match src.unpack {
        Unpack::None => Ok(()),
        Unpack::Gzip => {
            let out_name = src.filename.trim_end_matches(".gz");
            let mut decoder = flate2::read::GzDecoder::new(File::open(archive)?);
            let mut out = Vec::new();
            decoder
                .read_to_end(&mut out)
                .map_err(|e| cleanup(Error::Integrity(format!("{}: corrupt gzip: {e}", src.filename))))?;
            std::fs::write(dir.join(out_name), out)?;
            Ok(())
        }
        Unpack::TarGz => {
            let decoder = flate2::read::GzDecoder::new(File::open(archive)?);
            let mut tar = tar::Archive::new(decoder);
            tar.unpack(dir)
                .map_err(|e| cleanup(Error::Integrity(format!("{}: corrupt archive: {e}", src.filename))))?;
            Ok(())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::{BufRead, BufReader};
    use std::net::TcpListener;

    /// Minimal one-shot HTTP server handing out fixed bodies by path.
    fn serve(routes: Vec<(String, Vec<u8>)>, hits: usize) -> (String, std::thread::JoinHandle<usize>) {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        let handle = std::thread::spawn(move || {
            let mut served = 0;
            for _ in 0..hits {
                let (mut stream, _) = match listener.accept() {
                    Ok(s) => s,
                    Err(_) => break,
                };
                let mut reader = BufReader::new(stream.try_clone().unwrap());
                let mut line = String::new();
                reader.read_line(&mut line).unwrap();
                let path = line.split_whitespace().nth(1).unwrap_or("/").to_string();
                // drain headers
                loop {
                    let mut h = String::new();
                    if reader.read_line(&mut h).unwrap() == 0 || h == "\r\n" {
                        break;
                    }
                }
                let body = routes
                    .iter()
                    .find(|(p, _)| *p == path)
                    .map(|(_, b)| b.clone())
                    .unwrap_or_default();
                let head = format!(
                    "HTTP/1.1 200 OK\r\nContent-Length: {}\r\nConnection: close\r\n\r\n",
                    body.len()
                );
                stream.write_all(head.as_bytes()).unwrap();
                stream.write_all(&body).unwrap();
                served += 1;
            }
            served
        });
        (format!("http://{addr}"), handle)
    }

    fn gzip(bytes: &[u8]) -> Vec<u8> {
        let mut enc = flate2::write::GzEncoder::new(Vec::new(), flate2::Compression::fast());
        enc.write_all(bytes).unwrap();
        enc.finish().unwrap()
    }

    #[test]
    fn fetch_downloads_verifies_and_unpacks() {
        let payload = b"hello dataset".to_vec();
        let gz = gzip(&payload);
        let md5 = hex_md5(&gz);
        let (base, handle) = serve(vec![("/file.gz".to_string(), gz)], 1);
        let tmp = tempfile::tempdir().unwrap();
        let src = FetchSource {
            url: format!("{base}/file.gz"),
            filename: "file.gz".to_string(),
            md5: Some(md5),
            unpack: Unpack::Gzip,
            produces: vec!["file".to_string()],
        };
        fetch_sources(&[src.clone()], tmp.path()).unwrap();
        assert_eq!(std::fs::read(tmp.path().join("file")).unwrap(), payload);

        // second run: produced file exists, no network hit
        fetch_sources(&[src], tmp.path()).unwrap();
        assert_eq!(handle.join().unwrap(), 1);
    }

    #[test]
    fn checksum_mismatch_is_integrity_error() {
        let gz = gzip(b"payload");
        let (base, _handle) = serve(vec![("/bad.gz".to_string(), gz)], 1);
        let tmp = tempfile::tempdir().unwrap();
        let src = FetchSource {
            url: format!("{base}/bad.gz"),
            filename: "bad.gz".to_string(),
            md5: Some("00000000000000000000000000000000".to_string()),
            unpack: Unpack::Gzip,
            produces: vec!["bad".to_string()],
        };
        let err = fetch_sources(&[src], tmp.path()).unwrap_err();
        assert!(matches!(err, Error::Integrity(_)), "{err}");
        assert!(!tmp.path().join("bad.gz").exists());
        assert!(!tmp.path().join("bad").exists());
    }

    #[test]
    fn corrupt_archive_cleans_partial_files() {
        let not_gzip = b"this is not gzip".to_vec();
        let md5 = hex_md5(&not_gzip);
        let (base, _handle) = serve(vec![("/corrupt.gz".to_string(), not_gzip)], 1);
        let tmp = tempfile::tempdir().unwrap();
        let src = FetchSource {
            url: format!("{base}/corrupt.gz"),
            filename: "corrupt.gz".to_string(),
            md5: Some(md5),
            unpack: Unpack::Gzip,
            produces: vec!["corrupt".to_string()],
        };
        let err = fetch_sources(&[src], tmp.path()).unwrap_err();
        assert!(matches!(err, Error::Integrity(_)), "{err}");
        assert!(!tmp.path().join("corrupt").exists());
    }

    #[test]
    fn offline_without_cache_is_availability_error() {
        let tmp = tempfile::tempdir().unwrap();
        let src = FetchSource {
            // nothing listens on this port
            url: "http://127.0.0.1:1/file.gz".to_string(),
            filename: "file.gz".to_string(),
            md5: None,
            unpack: Unpack::None,
            produces: vec!["file.gz".to_string()],
        };
        let err = fetch_sources(&[src], tmp.path()).unwrap_err();
        assert!(matches!(err, Error::Availability(_)), "{err}");
    }
}
