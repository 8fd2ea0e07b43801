//! Model files.
//!
//! Binary layout, little-endian: magic `HCMP`, `u32` version (1), `u8`
//! family tag (0 ensemble, 1 piecewise, 2 monotonic), `u32` first size,
//! `u32` second size (0 when unused), `u32` parameter count, then the
//! parameters as `f64`. A text sidecar `<path>.meta` records the family,
//! sizes and seed.

use std::fs;
use std::path::{Path, PathBuf};

use super::{CalibrationMap, Family, Hyper};
use crate::error::{HcalError, Result};

const MAGIC: &[u8; 4] = b"HCMP";
const VERSION: u32 = 1;
const HEADER_LEN: usize = 4 + 4 + 1 + 4 + 4 + 4;

fn tag(family: Family) -> u8 {
    match family {
        Family::EnsembleTemp => 0,
        Family::PiecewiseLinear => 1,
        Family::MonotonicNet => 2,
    }
}

fn sidecar(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".meta");
    PathBuf::from(s)
}

pub fn save_map(map: &CalibrationMap, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let (a, b) = map.hyper.sizes();
    let mut bytes = Vec::with_capacity(HEADER_LEN + 8 * map.params.len());
    bytes.extend_from_slice(MAGIC);
    bytes.extend_from_slice(&VERSION.to_le_bytes());
    bytes.push(tag(map.family()));
    for v in [a as u32, b as u32, map.params.len() as u32] {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    for p in &map.params {
        bytes.extend_from_slice(&p.to_le_bytes());
    }
    fs::write(path, bytes).map_err(|e| HcalError::io(path, e))?;

    let meta = format!(
        "family = \"{}\"\nhyper = \"{}\"\nseed = {}\nparams = {}\n",
        map.family(),
        map.hyper,
        map.seed,
        map.params.len()
    );
    let meta_path = sidecar(path);
    fs::write(&meta_path, meta).map_err(|e| HcalError::io(&meta_path, e))
}

/// Reads the binary file; the seed comes from the sidecar when present.
pub fn load_map(path: impl AsRef<Path>) -> Result<CalibrationMap> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| HcalError::io(path, e))?;
    let bad = |msg: String| HcalError::ModelFormat {
        path: path.to_path_buf(),
        msg,
    };
    if bytes.len() < HEADER_LEN || &bytes[..4] != MAGIC {
        return Err(bad("missing HCMP header".into()));
    }
    let u32_at = |at: usize| u32::from_le_bytes(bytes[at..at + 4].try_into().expect("4 bytes"));
    let version = u32_at(4);
    if version != VERSION {
        return Err(bad(format!("unsupported version {version}")));
    }
    let family = match bytes[8] {
        0 => Family::EnsembleTemp,
        1 => Family::PiecewiseLinear,
        2 => Family::MonotonicNet,
        t => return Err(bad(format!("unknown family tag {t}"))),
    };
    let hyper = Hyper::from_sizes(family, u32_at(9) as usize, u32_at(13) as usize);
    let count = u32_at(17) as usize;
    if count != hyper.n_params() {
        return Err(bad(format!(
            "{hyper} takes {} parameters, header says {count}",
            hyper.n_params()
        )));
    }
    if bytes.len() != HEADER_LEN + 8 * count {
        return Err(bad(format!(
            "expected {} bytes, found {}",
            HEADER_LEN + 8 * count,
            bytes.len()
        )));
    }
    let params = bytes[HEADER_LEN..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    let seed = read_seed(&sidecar(path)).unwrap_or(0);
    CalibrationMap::from_params(hyper, params, seed).map_err(|e| bad(e.to_string()))
}

fn read_seed(meta: &Path) -> Option<u64> {
    let text = fs::read_to_string(meta).ok()?;
    let table: toml::Table = text.parse().ok()?;
    table.get("seed")?.as_integer().map(|s| s as u64)
}
