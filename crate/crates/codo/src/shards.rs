//! Fixed-size binary view-set shards.
//!
//! Little-endian layout:
//!
//! ```text
//! header:  "CODOVIEW" | version u32 | width u32 | height u32 | n_keys u32
//!          | record count u64 | config hash (64 ASCII bytes)
//! record:  foreground_id u64 | crop_checksum u64
//!          | (1 + n_keys) x [ pool_id u32 | box 4 x f64 | H*W*3 u8 ]
//! ```
//!
//! A directory of shards carries `views.json` listing shard files in order.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use codo_core::cpj::{View, ViewSet};
use codo_core::{BoundingBox, Image};
use serde::{Deserialize, Serialize};

use crate::corpus::{read_json, write_json};
use crate::error::{CliError, IoContext, Result};

pub const SHARD_MAGIC: &[u8; 8] = b"CODOVIEW";
pub const SHARD_VERSION: u32 = 1;
pub const RECORDS_PER_SHARD: usize = 1024;
const HASH_LEN: usize = 64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShardManifest {
    pub format_version: u32,
    pub width: usize,
    pub height: usize,
    pub n_keys: usize,
    pub count: usize,
    pub config_hash: String,
    pub shards: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ShardHeader {
    pub version: u32,
    pub width: usize,
    pub height: usize,
    pub n_keys: usize,
    pub count: u64,
}

impl ShardHeader {
    fn record_len(&self) -> usize {
        16 + (1 + self.n_keys) * (4 + 32 + self.width * self.height * 3)
    }
}

fn hash_bytes(hash: &str) -> [u8; HASH_LEN] {
    let mut out = [b' '; HASH_LEN];
    for (o, b) in out.iter_mut().zip(hash.bytes()) {
        *o = b;
    }
    out
}

fn encode_view(buf: &mut Vec<u8>, v: &View) {
    buf.extend_from_slice(&v.pool_id.to_le_bytes());
    for c in v.bbox.to_array() {
        buf.extend_from_slice(&c.to_le_bytes());
    }
    buf.extend_from_slice(v.image.data());
}

/// Streams view sets into numbered shard files under `dir`.
pub struct ShardWriter {
    dir: PathBuf,
    width: usize,
    height: usize,
    n_keys: usize,
    config_hash: String,
    shards: Vec<String>,
    current: Vec<u8>,
    in_current: u64,
    count: usize,
}

impl ShardWriter {
    pub fn create(dir: &Path, width: usize, height: usize, n_keys: usize, config_hash: &str) -> Result<Self> {
        fs::create_dir_all(dir).at(dir)?;
        Ok(Self {
            dir: dir.to_path_buf(),
            width,
            height,
            n_keys,
            config_hash: config_hash.into(),
            shards: Vec::new(),
            current: Vec::new(),
            in_current: 0,
            count: 0,
        })
    }

    pub fn push(&mut self, vs: &ViewSet) -> Result<()> {
        if vs.keys.len() != self.n_keys {
            return Err(CliError::Runtime(format!("view set has {} keys, shard expects {}", vs.keys.len(), self.n_keys)));
        }
        for v in vs.views() {
            if (v.image.width(), v.image.height()) != (self.width, self.height) {
                return Err(CliError::Runtime(format!(
                    "view of {}x{} does not match shard size {}x{}",
                    v.image.width(),
                    v.image.height(),
                    self.width,
                    self.height
                )));
            }
        }
        self.current.extend_from_slice(&vs.foreground_id.to_le_bytes());
        self.current.extend_from_slice(&vs.crop_checksum.to_le_bytes());
        for v in vs.views() {
            encode_view(&mut self.current, v);
        }
        self.in_current += 1;
        self.count += 1;
        if self.in_current as usize == RECORDS_PER_SHARD {
            self.flush_shard()?;
        }
        Ok(())
    }

    fn flush_shard(&mut self) -> Result<()> {
        if self.in_current == 0 {
            return Ok(());
        }
        let name = format!("views-{:04}.bin", self.shards.len());
        let path = self.dir.join(&name);
        let mut w = BufWriter::new(File::create(&path).at(&path)?);
        w.write_all(SHARD_MAGIC).at(&path)?;
        for v in [SHARD_VERSION, self.width as u32, self.height as u32, self.n_keys as u32] {
            w.write_all(&v.to_le_bytes()).at(&path)?;
        }
        w.write_all(&self.in_current.to_le_bytes()).at(&path)?;
        w.write_all(&hash_bytes(&self.config_hash)).at(&path)?;
        w.write_all(&self.current).at(&path)?;
        w.flush().at(&path)?;
        self.shards.push(name);
        self.current.clear();
        self.in_current = 0;
        Ok(())
    }

    pub fn finish(mut self) -> Result<ShardManifest> {
        self.flush_shard()?;
        let manifest = ShardManifest {
            format_version: SHARD_VERSION,
            width: self.width,
            height: self.height,
            n_keys: self.n_keys,
            count: self.count,
            config_hash: self.config_hash.clone(),
            shards: self.shards.clone(),
        };
        write_json(&self.dir.join("views.json"), &manifest)?;
        Ok(manifest)
    }
}

fn read_exact(r: &mut impl Read, buf: &mut [u8], path: &Path) -> Result<()> {
    r.read_exact(buf).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => CliError::format(path, "truncated shard"),
        _ => CliError::Io { path: path.to_path_buf(), source: e },
    })
}

fn u32_at(b: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(b[at..at + 4].try_into().expect("4 bytes"))
}

fn u64_at(b: &[u8], at: usize) -> u64 {
    u64::from_le_bytes(b[at..at + 8].try_into().expect("8 bytes"))
}

fn f64_at(b: &[u8], at: usize) -> f64 {
    f64::from_le_bytes(b[at..at + 8].try_into().expect("8 bytes"))
}

pub fn read_shard_header(path: &Path) -> Result<(ShardHeader, String)> {
    let mut r = BufReader::new(File::open(path).at(path)?);
    read_header(&mut r, path)
}

fn read_header(r: &mut impl Read, path: &Path) -> Result<(ShardHeader, String)> {
    let mut head = [0u8; 8 + 16 + 8 + HASH_LEN];
    read_exact(r, &mut head, path)?;
    if &head[..8] != SHARD_MAGIC {
        return Err(CliError::format(path, "not a view shard"));
    }
    let version = u32_at(&head, 8);
    if version != SHARD_VERSION {
        return Err(CliError::format(path, format!("shard version {version} is not supported (expected {SHARD_VERSION})")));
    }
    let header = ShardHeader {
        version,
        width: u32_at(&head, 12) as usize,
        height: u32_at(&head, 16) as usize,
        n_keys: u32_at(&head, 20) as usize,
        count: u64_at(&head, 24),
    };
    let hash = String::from_utf8_lossy(&head[32..]).trim_end().to_string();
    Ok((header, hash))
}

/// Reads every record of one shard.
pub fn read_shard(path: &Path) -> Result<(ShardHeader, Vec<ViewSet>)> {
    let mut r = BufReader::new(File::open(path).at(path)?);
    let (header, _) = read_header(&mut r, path)?;
    let pixels = header.width * header.height * 3;
    let mut rec = vec![0u8; header.record_len()];
    let mut out = Vec::with_capacity(header.count as usize);
    for _ in 0..header.count {
        read_exact(&mut r, &mut rec, path)?;
        let mut at = 16;
        let mut views = Vec::with_capacity(1 + header.n_keys);
        for _ in 0..=header.n_keys {
            let pool_id = u32_at(&rec, at);
            let c: Vec<f64> = (0..4).map(|i| f64_at(&rec, at + 4 + 8 * i)).collect();
            let bbox = BoundingBox::new(c[0], c[1], c[2], c[3]).map_err(|e| CliError::format(path, e.to_string()))?;
            let start = at + 36;
            let image = Image::from_raw(header.width, header.height, rec[start..start + pixels].to_vec())
                .map_err(|e| CliError::format(path, e.to_string()))?;
            views.push(View { image, bbox, pool_id });
            at = start + pixels;
        }
        let keys = views.split_off(1);
        out.push(ViewSet {
            foreground_id: u64_at(&rec, 0),
            crop_checksum: u64_at(&rec, 8),
            query: views.pop().expect("query view"),
            keys,
        });
    }
    let mut extra = [0u8; 1];
    if r.read(&mut extra).at(path)? != 0 {
        return Err(CliError::format(path, "trailing bytes after the last record"));
    }
    Ok((header, out))
}

/// Loads a whole shard directory, checking versions and shapes.
pub fn read_shard_dir(dir: &Path) -> Result<(ShardManifest, Vec<ViewSet>)> {
    let manifest: ShardManifest = read_json(&dir.join("views.json"))?;
    if manifest.format_version != SHARD_VERSION {
        return Err(CliError::format(
            dir.join("views.json"),
            format!("shard version {} is not supported (expected {SHARD_VERSION})", manifest.format_version),
        ));
    }
    let mut all = Vec::with_capacity(manifest.count);
    for name in &manifest.shards {
        let path = dir.join(name);
        let (h, records) = read_shard(&path)?;
        if (h.width, h.height, h.n_keys) != (manifest.width, manifest.height, manifest.n_keys) {
            return Err(CliError::format(&path, "shard shape disagrees with views.json"));
        }
        all.extend(records);
    }
    if all.len() != manifest.count {
        return Err(CliError::format(dir, format!("expected {} view sets, found {}", manifest.count, all.len())));
    }
    Ok((manifest, all))
}
