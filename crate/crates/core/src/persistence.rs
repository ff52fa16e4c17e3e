//! Binary model files.
//!
//! ```text
//! magic     8 bytes  "MMODMDL\0"
//! version   u64
//! length    u64      payload byte count
//! payload   length bytes
//! checksum  32 bytes SHA-256 of the payload
//! ```
//!
//! All integers are u64 and all reals f64, little-endian. See `docs/FORMATS.md`
//! for the payload layout.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::detector::Model;
use crate::error::{Error, Result};
use crate::features::{FeatureKind, FeatureMapConfig, Plane};

pub const MAGIC: &[u8; 8] = b"MMODMDL\0";
pub const FORMAT_VERSION: u64 = 1;
const HEADER_LEN: usize = 24;
const CHECKSUM_LEN: usize = 32;

struct Writer(Vec<u8>);

impl Writer {
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }

    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take8(&mut self) -> Option<[u8; 8]> {
        let bytes = self.buf.get(self.pos..self.pos + 8)?;
        self.pos += 8;
        Some(bytes.try_into().unwrap())
    }

    fn u64(&mut self) -> Option<u64> {
        self.take8().map(u64::from_le_bytes)
    }

    fn u32(&mut self) -> Option<u32> {
        self.u64().and_then(|v| u32::try_from(v).ok())
    }

    fn f64(&mut self) -> Option<f64> {
        self.take8().map(f64::from_le_bytes)
    }
}

fn encode_payload(model: &Model) -> Vec<u8> {
    let cfg = &model.feature_cfg;
    let mut out = Writer(Vec::new());
    out.u64(cfg.kind.tag());
    out.u64(cfg.window_width as u64);
    out.u64(cfg.window_height as u64);
    out.u64(cfg.grid.0 as u64);
    out.u64(cfg.grid.1 as u64);
    out.u64(cfg.hash_seed);
    out.u64(cfg.lsh_planes.len() as u64);
    for plane in &cfg.lsh_planes {
        for &v in plane {
            out.f64(v);
        }
    }
    out.u64(cfg.cell_size as u64);
    out.u64(cfg.pyramid_downsample.0 as u64);
    out.u64(cfg.pyramid_downsample.1 as u64);
    out.u64(cfg.min_pyramid_pixels);
    out.u64(cfg.upsample_factor as u64);
    out.u64(cfg.stride as u64);
    out.u64(model.w.len() as u64);
    for &v in &model.w {
        out.f64(v);
    }
    out.f64(model.threshold_offset);
    out.0
}

/// Serializes a model to the file format.
pub fn model_to_bytes(model: &Model) -> Vec<u8> {
    let payload = encode_payload(model);
    let mut out = Vec::with_capacity(HEADER_LEN + payload.len() + CHECKSUM_LEN);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(payload.len() as u64).to_le_bytes());
    out.extend_from_slice(&payload);
    out.extend_from_slice(&Sha256::digest(&payload));
    out
}

/// Parses a model file image. `path` is only used in error messages.
pub fn model_from_bytes(bytes: &[u8], path: &Path) -> Result<Model> {
    let format = |reason: &str| Error::ModelFormat {
        path: path.to_path_buf(),
        reason: reason.to_string(),
    };
    if bytes.len() < HEADER_LEN || &bytes[..8] != MAGIC {
        return Err(format("not a model file"));
    }
    let version = u64::from_le_bytes(bytes[8..16].try_into().unwrap());
    if version != FORMAT_VERSION {
        return Err(Error::UnsupportedVersion(version));
    }
    let len = u64::from_le_bytes(bytes[16..24].try_into().unwrap());
    let expected_total = (len as u128) + (HEADER_LEN + CHECKSUM_LEN) as u128;
    if bytes.len() as u128 != expected_total {
        return Err(Error::Checksum {
            path: path.to_path_buf(),
        });
    }
    let payload = &bytes[HEADER_LEN..HEADER_LEN + len as usize];
    if Sha256::digest(payload).as_slice() != &bytes[HEADER_LEN + len as usize..] {
        return Err(Error::Checksum {
            path: path.to_path_buf(),
        });
    }
    decode_payload(payload).map_err(|e| match e {
        Decode::Truncated => format("payload ends early"),
        Decode::Trailing => format("trailing bytes after payload"),
        Decode::Kind(tag) => format(&format!("unknown feature kind tag {tag}")),
        Decode::Field(name) => format(&format!("field {name} out of range")),
        Decode::Model(e) => e,
    })
}

enum Decode {
    Truncated,
    Trailing,
    Kind(u64),
    Field(&'static str),
    Model(Error),
}

fn decode_payload(payload: &[u8]) -> std::result::Result<Model, Decode> {
    let mut r = Reader {
        buf: payload,
        pos: 0,
    };
    let tag = r.u64().ok_or(Decode::Truncated)?;
    let kind = FeatureKind::from_tag(tag).ok_or(Decode::Kind(tag))?;
    let field = |v: Option<u32>, name| v.ok_or(Decode::Field(name));
    let window_width = field(r.u32(), "window_width")?;
    let window_height = field(r.u32(), "window_height")?;
    let grid = (field(r.u32(), "grid")?, field(r.u32(), "grid")?);
    let hash_seed = r.u64().ok_or(Decode::Truncated)?;
    let n_planes = r.u64().ok_or(Decode::Truncated)?;
    if n_planes.saturating_mul(8 * 36) > payload.len() as u64 {
        return Err(Decode::Truncated);
    }
    let mut lsh_planes = Vec::with_capacity(n_planes as usize);
    for _ in 0..n_planes {
        let mut plane: Plane = [0.0; 36];
        for v in plane.iter_mut() {
            *v = r.f64().ok_or(Decode::Truncated)?;
        }
        lsh_planes.push(plane);
    }
    let cell_size = field(r.u32(), "cell_size")?;
    let pyramid_downsample = (
        field(r.u32(), "pyramid_downsample")?,
        field(r.u32(), "pyramid_downsample")?,
    );
    let min_pyramid_pixels = r.u64().ok_or(Decode::Truncated)?;
    let upsample_factor = field(r.u32(), "upsample_factor")?;
    let stride = field(r.u32(), "stride")?;
    let n = r.u64().ok_or(Decode::Truncated)?;
    if n.saturating_mul(8) > payload.len() as u64 {
        return Err(Decode::Truncated);
    }
    let mut w = Vec::with_capacity(n as usize);
    for _ in 0..n {
        w.push(r.f64().ok_or(Decode::Truncated)?);
    }
    let threshold_offset = r.f64().ok_or(Decode::Truncated)?;
    if r.pos != payload.len() {
        return Err(Decode::Trailing);
    }
    let cfg = FeatureMapConfig {
        kind,
        window_width,
        window_height,
        grid,
        lsh_planes,
        hash_seed,
        cell_size,
        pyramid_downsample,
        min_pyramid_pixels,
        upsample_factor,
        stride,
    };
    let mut model = Model::new(cfg, w).map_err(Decode::Model)?;
    model.threshold_offset = threshold_offset;
    Ok(model)
}

/// Writes the model atomically: a sibling temp file is synced, then renamed.
pub fn save_model(model: &Model, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    model.feature_cfg.validate()?;
    if model.w.len() != model.feature_cfg.dim() {
        return Err(Error::DimensionMismatch {
            expected: model.feature_cfg.dim(),
            actual: model.w.len(),
        });
    }
    let bytes = model_to_bytes(model);
    let tmp = temp_path(path);
    let write = || -> std::io::Result<()> {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(&bytes)?;
        f.sync_all()
    };
    if let Err(e) = write() {
        let _ = fs::remove_file(&tmp);
        return Err(Error::io(&tmp, e));
    }
    fs::rename(&tmp, path).map_err(|e| {
        let _ = fs::remove_file(&tmp);
        Error::io(path, e)
    })
}

fn temp_path(path: &Path) -> PathBuf {
    let mut name = path
        .file_name()
        .map(|n| n.to_os_string())
        .unwrap_or_default();
    name.push(format!(".tmp{}", std::process::id()));
    path.with_file_name(name)
}

pub fn load_model(path: impl AsRef<Path>) -> Result<Model> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    model_from_bytes(&bytes, path)
}
