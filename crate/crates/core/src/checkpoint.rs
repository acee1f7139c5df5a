//! Checkpoint container: named arrays plus string metadata in a small
//! versioned binary format.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic "TXCK" | version u32 | element width u32
//! meta count u32 | { key len u32, key utf8, value len u32, value utf8 }*
//! array count u32 | { name len u32, name utf8, ndim u32, dims u64*, raw element bytes }*
//! ```
//!
//! Elements are stored as raw IEEE-754 bit patterns, so round-trips are
//! bit-exact by construction. Saves go through a temp file in the target
//! directory plus an atomic rename.

use crate::array::{Array, Real, ELEM_BYTES};
use crate::error::{Error, Result};
use std::io::{Read, Write};
use std::path::Path;

const MAGIC: &[u8; 4] = b"TXCK";
const VERSION: u32 = 1;

#[derive(Default)]
pub struct Checkpoint {
    meta: Vec<(String, String)>,
    arrays: Vec<(String, Array)>,
}

fn bad(detail: impl Into<String>) -> Error {
    Error::Format {
        what: "checkpoint",
        detail: detail.into(),
    }
}

impl Checkpoint {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn set_meta(&mut self, key: impl Into<String>, value: impl Into<String>) {
        let key = key.into();
        match self.meta.iter_mut().find(|(k, _)| *k == key) {
            Some(slot) => slot.1 = value.into(),
            None => self.meta.push((key, value.into())),
        }
    }

    pub fn meta(&self, key: &str) -> Option<&str> {
        self.meta
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    pub fn meta_parsed<T: std::str::FromStr>(&self, key: &str) -> Result<T> {
        let raw = self
            .meta(key)
            .ok_or_else(|| bad(format!("missing metadata key {key:?}")))?;
        raw.parse()
            .map_err(|_| bad(format!("metadata {key:?} has unparseable value {raw:?}")))
    }

    pub fn push_array(&mut self, name: impl Into<String>, array: Array) {
        let name = name.into();
        assert!(
            self.array(&name).is_none(),
            "duplicate checkpoint array {name:?}"
        );
        self.arrays.push((name, array));
    }

    pub fn array(&self, name: &str) -> Option<&Array> {
        self.arrays
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, a)| a)
    }

    pub fn take_array(&mut self, name: &str) -> Option<Array> {
        let pos = self.arrays.iter().position(|(n, _)| n == name)?;
        Some(self.arrays.remove(pos).1)
    }

    pub fn array_names(&self) -> impl Iterator<Item = &str> {
        self.arrays.iter().map(|(n, _)| n.as_str())
    }

    pub fn write_to(&self, w: &mut impl Write) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        w.write_all(&(ELEM_BYTES as u32).to_le_bytes())?;

        w.write_all(&(self.meta.len() as u32).to_le_bytes())?;
        for (k, v) in &self.meta {
            write_str(w, k)?;
            write_str(w, v)?;
        }

        w.write_all(&(self.arrays.len() as u32).to_le_bytes())?;
        for (name, arr) in &self.arrays {
            write_str(w, name)?;
            w.write_all(&(arr.ndim() as u32).to_le_bytes())?;
            for &d in arr.dims() {
                w.write_all(&(d as u64).to_le_bytes())?;
            }
            let mut buf = Vec::with_capacity(arr.numel() * ELEM_BYTES);
            for &v in arr.data() {
                buf.extend_from_slice(&v.to_le_bytes());
            }
            w.write_all(&buf)?;
        }
        Ok(())
    }

    pub fn read_from(r: &mut impl Read) -> Result<Checkpoint> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(bad("bad magic; not a checkpoint file"));
        }
        let version = read_u32(r)?;
        if version != VERSION {
            return Err(bad(format!("unsupported version {version}")));
        }
        let width = read_u32(r)? as usize;
        if width != ELEM_BYTES {
            return Err(bad(format!(
                "element width {width} bytes, this build expects {ELEM_BYTES}"
            )));
        }

        let mut ck = Checkpoint::new();
        let n_meta = read_u32(r)?;
        for _ in 0..n_meta {
            let k = read_str(r)?;
            let v = read_str(r)?;
            ck.meta.push((k, v));
        }

        let n_arrays = read_u32(r)?;
        for _ in 0..n_arrays {
            let name = read_str(r)?;
            let ndim = read_u32(r)? as usize;
            if ndim == 0 || ndim > 4 {
                return Err(bad(format!("array {name:?} has {ndim} axes")));
            }
            let mut dims = Vec::with_capacity(ndim);
            for _ in 0..ndim {
                dims.push(read_u64(r)? as usize);
            }
            let numel: usize = dims.iter().product();
            let mut buf = vec![0u8; numel * ELEM_BYTES];
            r.read_exact(&mut buf)?;
            let data: Vec<Real> = buf
                .chunks_exact(ELEM_BYTES)
                .map(|c| Real::from_le_bytes(c.try_into().unwrap()))
                .collect();
            ck.arrays.push((name, Array::from_vec(&dims, data)));
        }
        Ok(ck)
    }

    /// Atomic save: temp file in the destination directory, then rename.
    pub fn save(&self, path: &Path) -> Result<()> {
        let dir = path.parent().filter(|p| !p.as_os_str().is_empty());
        let mut tmp = match dir {
            Some(d) => tempfile::NamedTempFile::new_in(d)?,
            None => tempfile::NamedTempFile::new_in(".")?,
        };
        self.write_to(tmp.as_file_mut())?;
        tmp.persist(path).map_err(|e| Error::Io(e.error))?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Checkpoint> {
        let mut file = std::fs::File::open(path)?;
        Checkpoint::read_from(&mut std::io::BufReader::new(&mut file))
    }
}

fn write_str(w: &mut impl Write, s: &str) -> Result<()> {
    w.write_all(&(s.len() as u32).to_le_bytes())?;
    w.write_all(s.as_bytes())?;
    Ok(())
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64(r: &mut impl Read) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_str(r: &mut impl Read) -> Result<String> {
    let len = read_u32(r)? as usize;
    if len > 1 << 20 {
        return Err(bad(format!("string length {len} implausible")));
    }
    let mut buf = vec![0u8; len];
    r.read_exact(&mut buf)?;
    String::from_utf8(buf).map_err(|_| bad("non-utf8 string"))
}

/// FNV-1a 64 over raw bytes; identifies the checkpoint an index was built
/// with.
pub fn fingerprint_bytes(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

pub fn fingerprint_file(path: &Path) -> Result<u64> {
    Ok(fingerprint_bytes(&std::fs::read(path)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    #[test]
    fn round_trip_is_bit_exact() {
        let mut ck = Checkpoint::new();
        ck.set_meta("seed", "42");
        ck.set_meta("probe", "scene text");
        let mut r = rng::seeded(11);
        let a = Array::randn(&[3, 4, 2], 0.0, 1e3, &mut r);
        let mut b = Array::randn(&[7], 0.0, 1e-30, &mut r);
        b.data_mut()[0] = -0.0;
        b.data_mut()[1] = Real::MIN_POSITIVE;
        ck.push_array("a", a.clone());
        ck.push_array("b", b.clone());

        let mut buf = Vec::new();
        ck.write_to(&mut buf).unwrap();
        let back = Checkpoint::read_from(&mut buf.as_slice()).unwrap();

        assert_eq!(back.meta("seed"), Some("42"));
        assert_eq!(back.meta("probe"), Some("scene text"));
        for (orig, name) in [(&a, "a"), (&b, "b")] {
            let got = back.array(name).unwrap();
            assert_eq!(got.dims(), orig.dims());
            for (x, y) in got.data().iter().zip(orig.data()) {
                assert_eq!(x.to_bits(), y.to_bits(), "bit mismatch in {name}");
            }
        }

        // Serialization itself is deterministic.
        let mut buf2 = Vec::new();
        back.write_to(&mut buf2).unwrap();
        assert_eq!(buf, buf2);
    }

    #[test]
    fn rejects_corrupt_and_truncated_input() {
        let mut ck = Checkpoint::new();
        ck.push_array("w", Array::zeros(&[2, 2]));
        let mut buf = Vec::new();
        ck.write_to(&mut buf).unwrap();

        let mut corrupt = buf.clone();
        corrupt[0] = b'X';
        assert!(Checkpoint::read_from(&mut corrupt.as_slice()).is_err());

        let truncated = &buf[..buf.len() - 3];
        assert!(Checkpoint::read_from(&mut &truncated[..]).is_err());
    }

    #[test]
    fn save_load_through_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let mut ck = Checkpoint::new();
        ck.set_meta("epoch", "3");
        ck.push_array("w", Array::from_vec(&[2], vec![1.5, -2.5]));
        ck.save(&path).unwrap();
        let back = Checkpoint::load(&path).unwrap();
        assert_eq!(back.meta("epoch"), Some("3"));
        assert_eq!(back.array("w").unwrap().data(), &[1.5, -2.5]);
    }

    #[test]
    fn fingerprint_tracks_content() {
        let a = fingerprint_bytes(b"hello");
        let b = fingerprint_bytes(b"hellp");
        assert_ne!(a, b);
        // Known FNV-1a 64 vector.
        assert_eq!(fingerprint_bytes(b""), 0xcbf2_9ce4_8422_2325);
        assert_eq!(fingerprint_bytes(b"a"), 0xaf63_dc4c_8601_ec8c);
    }

    #[test]
    fn meta_parsed_reports_bad_values() {
        let mut ck = Checkpoint::new();
        ck.set_meta("n", "12");
        ck.set_meta("bad", "x2");
        assert_eq!(ck.meta_parsed::<usize>("n").unwrap(), 12);
        assert!(ck.meta_parsed::<usize>("bad").is_err());
        assert!(ck.meta_parsed::<usize>("absent").is_err());
    }
}
