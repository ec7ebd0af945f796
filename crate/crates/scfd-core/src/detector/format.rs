//! Versioned, checksummed binary container for profiles.
//!
//! Layout: `SCFDPROF` magic, u32 format version, the payload (all
//! integers little-endian, all floats IEEE-754 binary64 little-endian),
//! and a trailing FNV-1a 64 checksum of everything before it. Strings
//! are u32-length-prefixed UTF-8; vectors and matrices carry explicit
//! dimensions. The round trip is bit-exact.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use thiserror::Error;

use super::{Profile, ProfileMeta};
use crate::cluster::GkmConfig;
use crate::stats::{ClusterCentroid, Cutoff, DimReduction, SymMatrix};
use crate::trace::SyscallAlphabet;

pub const PROFILE_MAGIC: &[u8; 8] = b"SCFDPROF";
pub const PROFILE_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ProfileIoError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("unsupported profile version {found} (supported: {supported})")]
    VersionMismatch { found: u32, supported: u32 },
    #[error("corrupt profile: {0}")]
    CorruptProfile(&'static str),
}

// FNV-1a, 64-bit.
struct Fnv64(u64);

impl Fnv64 {
    fn new() -> Self {
        Fnv64(0xcbf29ce484222325)
    }
    fn update(&mut self, bytes: &[u8]) {
        for &b in bytes {
            self.0 ^= b as u64;
            self.0 = self.0.wrapping_mul(0x100000001b3);
        }
    }
}

struct CountingWriter<W: Write> {
    inner: W,
    hash: Fnv64,
}

impl<W: Write> CountingWriter<W> {
    fn put(&mut self, bytes: &[u8]) -> std::io::Result<()> {
        self.hash.update(bytes);
        self.inner.write_all(bytes)
    }
    fn put_u32(&mut self, v: u32) -> std::io::Result<()> {
        self.put(&v.to_le_bytes())
    }
    fn put_u64(&mut self, v: u64) -> std::io::Result<()> {
        self.put(&v.to_le_bytes())
    }
    fn put_f64(&mut self, v: f64) -> std::io::Result<()> {
        self.put(&v.to_le_bytes())
    }
    fn put_str(&mut self, s: &str) -> std::io::Result<()> {
        self.put_u32(s.len() as u32)?;
        self.put(s.as_bytes())
    }
    fn put_usize_vec(&mut self, v: &[usize]) -> std::io::Result<()> {
        self.put_u32(v.len() as u32)?;
        for &x in v {
            self.put_u32(x as u32)?;
        }
        Ok(())
    }
    fn put_f64_vec(&mut self, v: &[f64]) -> std::io::Result<()> {
        self.put_u32(v.len() as u32)?;
        for &x in v {
            self.put_f64(x)?;
        }
        Ok(())
    }
}

struct HashingReader<R: Read> {
    inner: R,
    hash: Fnv64,
}

impl<R: Read> HashingReader<R> {
    fn take(&mut self, buf: &mut [u8]) -> Result<(), ProfileIoError> {
        self.inner.read_exact(buf)?;
        self.hash.update(buf);
        Ok(())
    }
    fn u32(&mut self) -> Result<u32, ProfileIoError> {
        let mut b = [0u8; 4];
        self.take(&mut b)?;
        Ok(u32::from_le_bytes(b))
    }
    fn u64(&mut self) -> Result<u64, ProfileIoError> {
        let mut b = [0u8; 8];
        self.take(&mut b)?;
        Ok(u64::from_le_bytes(b))
    }
    fn f64(&mut self) -> Result<f64, ProfileIoError> {
        let mut b = [0u8; 8];
        self.take(&mut b)?;
        Ok(f64::from_le_bytes(b))
    }
    fn string(&mut self) -> Result<String, ProfileIoError> {
        let len = self.u32()? as usize;
        if len > 1 << 24 {
            return Err(ProfileIoError::CorruptProfile("oversized string"));
        }
        let mut b = vec![0u8; len];
        self.take(&mut b)?;
        String::from_utf8(b).map_err(|_| ProfileIoError::CorruptProfile("invalid utf-8"))
    }
    fn usize_vec(&mut self) -> Result<Vec<usize>, ProfileIoError> {
        let len = self.u32()? as usize;
        if len > 1 << 24 {
            return Err(ProfileIoError::CorruptProfile("oversized index vector"));
        }
        (0..len).map(|_| Ok(self.u32()? as usize)).collect()
    }
    fn f64_vec(&mut self) -> Result<Vec<f64>, ProfileIoError> {
        let len = self.u32()? as usize;
        if len > 1 << 24 {
            return Err(ProfileIoError::CorruptProfile("oversized float vector"));
        }
        (0..len).map(|_| self.f64()).collect()
    }
}

/// Serialize a profile to any writer.
pub fn write_profile<W: Write>(p: &Profile, writer: W) -> Result<(), ProfileIoError> {
    let mut w = CountingWriter {
        inner: writer,
        hash: Fnv64::new(),
    };
    w.put(PROFILE_MAGIC)?;
    w.put_u32(PROFILE_VERSION)?;

    w.put_u32(p.alphabet.len() as u32)?;
    for name in p.alphabet.names() {
        w.put_str(name)?;
    }

    w.put_u32(p.reduction.input_dim as u32)?;
    w.put_usize_vec(&p.reduction.kept)?;
    w.put_usize_vec(&p.reduction.merged)?;
    w.put_u64(p.reduction.residual_expected)?;

    w.put_u32(p.clusters.len() as u32)?;
    for c in &p.clusters {
        w.put_f64_vec(&c.mean)?;
        w.put_u32(c.inv_cov.dim() as u32)?;
        for v in c.inv_cov.data() {
            w.put_f64(*v)?;
        }
        w.put_u64(c.member_count as u64)?;
    }

    w.put_f64(p.cutoff.p0)?;
    w.put_f64(p.cutoff.theta)?;

    w.put_str(&p.meta.app_id)?;
    w.put_u64(p.meta.trained_at)?;
    w.put_str(&p.meta.tool_version)?;
    w.put_u32(p.meta.gkm.max_k as u32)?;
    w.put_f64(p.meta.gkm.bound_td)?;
    w.put_f64(p.meta.gkm.ridge)?;
    w.put_u32(p.meta.gkm.max_iters as u32)?;
    w.put_u32(p.meta.gkm.candidate_stride as u32)?;

    let digest = w.hash.0;
    w.inner.write_all(&digest.to_le_bytes())?;
    Ok(())
}

/// Deserialize a profile from any reader, verifying version and checksum.
pub fn read_profile<R: Read>(reader: R) -> Result<Profile, ProfileIoError> {
    let mut r = HashingReader {
        inner: reader,
        hash: Fnv64::new(),
    };
    let mut magic = [0u8; 8];
    r.take(&mut magic)?;
    if &magic != PROFILE_MAGIC {
        return Err(ProfileIoError::CorruptProfile("bad magic"));
    }
    let version = r.u32()?;
    if version != PROFILE_VERSION {
        return Err(ProfileIoError::VersionMismatch {
            found: version,
            supported: PROFILE_VERSION,
        });
    }

    let n_names = r.u32()? as usize;
    if n_names > 1 << 20 {
        return Err(ProfileIoError::CorruptProfile("oversized alphabet"));
    }
    let mut names = Vec::with_capacity(n_names);
    for _ in 0..n_names {
        names.push(r.string()?);
    }
    let alphabet = SyscallAlphabet::from_names(names)
        .map_err(|_| ProfileIoError::CorruptProfile("duplicate alphabet names"))?;

    let input_dim = r.u32()? as usize;
    let kept = r.usize_vec()?;
    let merged = r.usize_vec()?;
    let residual_expected = r.u64()?;
    let reduction = DimReduction {
        kept,
        merged,
        residual_expected,
        input_dim,
    };

    let n_clusters = r.u32()? as usize;
    if n_clusters > 1 << 16 {
        return Err(ProfileIoError::CorruptProfile("oversized cluster list"));
    }
    let mut clusters = Vec::with_capacity(n_clusters);
    for _ in 0..n_clusters {
        let mean = r.f64_vec()?;
        let dim = r.u32()? as usize;
        if dim != mean.len() {
            return Err(ProfileIoError::CorruptProfile("centroid dim mismatch"));
        }
        let mut data = Vec::with_capacity(dim * dim);
        for _ in 0..dim * dim {
            data.push(r.f64()?);
        }
        let member_count = r.u64()? as usize;
        clusters.push(ClusterCentroid {
            mean,
            inv_cov: SymMatrix::from_raw(dim, data),
            member_count,
        });
    }

    let p0 = r.f64()?;
    let theta = r.f64()?;

    let app_id = r.string()?;
    let trained_at = r.u64()?;
    let tool_version = r.string()?;
    let gkm = GkmConfig {
        max_k: r.u32()? as usize,
        bound_td: r.f64()?,
        ridge: r.f64()?,
        max_iters: r.u32()? as usize,
        candidate_stride: r.u32()? as usize,
    };

    let computed = r.hash.0;
    let mut tail = [0u8; 8];
    r.inner.read_exact(&mut tail)?;
    if u64::from_le_bytes(tail) != computed {
        return Err(ProfileIoError::CorruptProfile("checksum mismatch"));
    }

    Ok(Profile {
        alphabet,
        reduction,
        clusters,
        cutoff: Cutoff { p0, theta },
        meta: ProfileMeta {
            app_id,
            trained_at,
            tool_version,
            gkm,
        },
    })
}

pub fn save_profile(p: &Profile, path: &Path) -> Result<(), ProfileIoError> {
    let file = File::create(path)?;
    let mut w = BufWriter::new(file);
    write_profile(p, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn load_profile(path: &Path) -> Result<Profile, ProfileIoError> {
    let file = File::open(path)?;
    read_profile(BufReader::new(file))
}
