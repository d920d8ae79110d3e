//! On-disk cache of the motion-kernel dictionary and its inverse banks.
//!
//! Layout under the cache root:
//!
//! ```text
//! <key>/manifest.txt    rho, ratio, schedule, sizes, checksums
//! <key>/banks.bin       f64 LE: per μ, per entry: c0, c1, c2, residual
//! <key>/kernels/NNN.txt every dictionary kernel in plain text
//! ```
//!
//! `<key>` is a hash of (ρ, ratio, μ schedule), so differently configured
//! dictionaries never collide.

use std::fs;
use std::path::{Path, PathBuf};

use deconv_core::invfilter::{round_to_odd, InverseBank, PRIOR_INVERSE_SIDE};
use deconv_core::nonuniform::{build_dictionary, KernelDictionary, DICTIONARY_SIZE, DICT_SIDE};
use deconv_core::Kernel;
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};
use crate::formats::{format_pairs, read_pairs, write_kernel, write_text};

pub const CACHE_ENV: &str = "DECONV_CACHE_DIR";
const FORMAT: &str = "1";

/// Cache root: explicit path, else `$DECONV_CACHE_DIR`, else
/// `./.deconv-cache`.
pub fn cache_root(explicit: Option<&Path>) -> PathBuf {
    explicit
        .map(Path::to_path_buf)
        .or_else(|| std::env::var_os(CACHE_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from(".deconv-cache"))
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn schedule_text(schedule: &[f64]) -> String {
    schedule.iter().map(f64::to_string).collect::<Vec<_>>().join(",")
}

/// Hash identifying a dictionary configuration.
pub fn manifest_key(schedule: &[f64], rho: f64, ratio: f64) -> String {
    let text = format!("format={FORMAT};rho={rho};ratio={ratio};schedule={}", schedule_text(schedule));
    hex(&Sha256::digest(text.as_bytes()))
}

#[derive(Debug)]
pub struct CacheOutcome {
    pub dict: KernelDictionary,
    pub key: String,
    pub dir: PathBuf,
    pub reused: bool,
}

/// Loads the cached dictionary for this configuration or builds and stores
/// it.
pub fn load_or_build(root: &Path, schedule: &[f64], rho: f64, ratio: f64) -> CliResult<CacheOutcome> {
    let key = manifest_key(schedule, rho, ratio);
    let dir = root.join(&key[..16]);
    if dir.join("manifest.txt").exists() {
        let dict = load(&dir, &key, schedule, rho, ratio)?;
        return Ok(CacheOutcome { dict, key, dir, reused: true });
    }
    let dict = build_dictionary(schedule, rho, ratio)?;
    store(&dir, &key, &dict)?;
    Ok(CacheOutcome { dict, key, dir, reused: false })
}

fn c0_side(ratio: f64) -> usize {
    round_to_odd(ratio * DICT_SIDE as f64)
}

fn store(dir: &Path, key: &str, dict: &KernelDictionary) -> CliResult<()> {
    fs::create_dir_all(dir.join("kernels")).map_err(|e| CliError::io(dir, e))?;
    for (i, e) in dict.entries().iter().enumerate() {
        write_kernel(&dir.join("kernels").join(format!("{i:03}.txt")), &e.kernel)?;
    }
    let mut bytes = Vec::new();
    for (row, &mu) in dict.banks().iter().zip(dict.schedule()) {
        for bank in row {
            for k in bank.filters() {
                bytes.extend(k.taps().iter().flat_map(|v| v.to_le_bytes()));
            }
            bytes.extend(mu.to_le_bytes());
            bytes.extend(bank.dirac_residual().to_le_bytes());
        }
    }
    let path = dir.join("banks.bin");
    fs::write(&path, &bytes).map_err(|e| CliError::io(&path, e))?;
    let manifest = format_pairs(&[
        ("format", FORMAT.to_string()),
        ("key", key.to_string()),
        ("rho", dict.rho().to_string()),
        ("ratio", dict.ratio().to_string()),
        ("schedule", schedule_text(dict.schedule())),
        ("entries", dict.len().to_string()),
        ("kernel_side", DICT_SIDE.to_string()),
        ("c0_side", c0_side(dict.ratio()).to_string()),
        ("prior_side", PRIOR_INVERSE_SIDE.to_string()),
        ("banks_sha256", hex(&Sha256::digest(&bytes))),
    ]);
    // the manifest goes last: its presence marks a complete cache
    write_text(&dir.join("manifest.txt"), &manifest)
}

fn load(dir: &Path, key: &str, schedule: &[f64], rho: f64, ratio: f64) -> CliResult<KernelDictionary> {
    let mismatch = |what: &str| CliError::Io(format!("cache {} does not match its manifest: {what}", dir.display()));
    let pairs = read_pairs(&dir.join("manifest.txt"))?;
    let get = |k: &str| pairs.iter().find(|(a, _)| a == k).map(|(_, v)| v.as_str()).unwrap_or("");
    if get("format") != FORMAT || get("key") != key || get("entries") != DICTIONARY_SIZE.to_string() {
        return Err(mismatch("key"));
    }
    let side = c0_side(ratio);
    if get("c0_side") != side.to_string() || get("prior_side") != PRIOR_INVERSE_SIDE.to_string() {
        return Err(mismatch("filter sizes"));
    }
    let path = dir.join("banks.bin");
    let bytes = fs::read(&path).map_err(|e| CliError::io(&path, e))?;
    if hex(&Sha256::digest(&bytes)) != get("banks_sha256") {
        return Err(mismatch("banks.bin checksum"));
    }
    let per_bank = side * side + 2 * PRIOR_INVERSE_SIDE * PRIOR_INVERSE_SIDE + 2;
    if bytes.len() != 8 * per_bank * DICTIONARY_SIZE * schedule.len() {
        return Err(mismatch("banks.bin size"));
    }
    let mut values = bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")));
    let mut take = |n: usize| -> Vec<f64> { values.by_ref().take(n).collect() };
    let kernel = |taps: Vec<f64>, s: usize| Kernel::new(s, s, taps).map_err(|e| CliError::Io(e.to_string()));
    let mut banks = Vec::with_capacity(schedule.len());
    for _ in schedule {
        let mut row = Vec::with_capacity(DICTIONARY_SIZE);
        for _ in 0..DICTIONARY_SIZE {
            let c0 = kernel(take(side * side), side)?;
            let p = PRIOR_INVERSE_SIDE;
            let rest = vec![kernel(take(p * p), p)?, kernel(take(p * p), p)?];
            let tail = take(2);
            row.push(InverseBank::from_parts(c0, rest, rho, tail[0], ratio, tail[1]));
        }
        banks.push(row);
    }
    Ok(KernelDictionary::from_parts(schedule.to_vec(), rho, ratio, banks)?)
}
