//! Flat binary parameter container plus a text manifest.
//!
//! Layout (all integers little-endian `u32`, values little-endian `f64`):
//!
//! ```text
//! magic "FTCK" | version | count
//! count x { name_len | name (utf-8) | rows | cols | rows*cols values, row-major }
//! ```
//!
//! The manifest lists one `name<TAB>rows<TAB>cols` line per entry, in
//! container order.

use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::numerics::{Matrix, ParamStore};

pub const MAGIC: &[u8; 4] = b"FTCK";
pub const VERSION: u32 = 1;

pub fn encode<'a, I>(entries: I) -> Vec<u8>
where
    I: IntoIterator<Item = (&'a str, &'a Matrix)>,
{
    let entries: Vec<_> = entries.into_iter().collect();
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(entries.len() as u32).to_le_bytes());
    for (name, m) in entries {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(m.rows() as u32).to_le_bytes());
        out.extend_from_slice(&(m.cols() as u32).to_le_bytes());
        for v in m.as_slice() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::Checkpoint(format!("truncated at byte {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn f64(&mut self) -> Result<f64> {
        let b = self.take(8)?;
        let mut a = [0u8; 8];
        a.copy_from_slice(b);
        Ok(f64::from_le_bytes(a))
    }
}

pub fn decode(bytes: &[u8]) -> Result<Vec<(String, Matrix)>> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let count = r.u32()? as usize;
    let mut out = Vec::with_capacity(count.min(1 << 16));
    for _ in 0..count {
        let n = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(n)?)
            .map_err(|e| Error::Checkpoint(format!("name is not utf-8: {e}")))?
            .to_string();
        let rows = r.u32()? as usize;
        let cols = r.u32()? as usize;
        let len = rows
            .checked_mul(cols)
            .ok_or_else(|| Error::Checkpoint(format!("`{name}` shape overflows")))?;
        if len.saturating_mul(8) > bytes.len() - r.pos {
            return Err(Error::Checkpoint(format!("`{name}` payload truncated")));
        }
        let data = (0..len).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
        out.push((name, Matrix::from_vec(rows, cols, data)?));
    }
    if r.pos != bytes.len() {
        return Err(Error::Checkpoint(format!(
            "{} trailing bytes",
            bytes.len() - r.pos
        )));
    }
    Ok(out)
}

pub fn manifest<'a, I>(entries: I) -> String
where
    I: IntoIterator<Item = (&'a str, &'a Matrix)>,
{
    let mut s = String::new();
    for (name, m) in entries {
        s.push_str(&format!("{name}\t{}\t{}\n", m.rows(), m.cols()));
    }
    s
}

fn store_entries(store: &ParamStore) -> impl Iterator<Item = (&str, &Matrix)> {
    store.iter().map(|(_, t)| (t.name(), &t.value))
}

/// Writes `path` (binary) and `path` with a `.manifest` extension appended.
pub fn save_store(store: &ParamStore, path: &Path) -> Result<()> {
    std::fs::File::create(path)?.write_all(&encode(store_entries(store)))?;
    let mut mpath = path.as_os_str().to_owned();
    mpath.push(".manifest");
    std::fs::write(mpath, manifest(store_entries(store)))?;
    Ok(())
}

/// Loads a container and copies every entry into the same-named tensor of
/// `store`. Names and shapes must match exactly.
pub fn load_into_store(store: &mut ParamStore, path: &Path) -> Result<()> {
    let entries = decode(&std::fs::read(path)?)?;
    if entries.len() != store.len() {
        return Err(Error::Checkpoint(format!(
            "container holds {} tensors, model has {}",
            entries.len(),
            store.len()
        )));
    }
    for (name, m) in entries {
        let id = store
            .find(&name)
            .ok_or_else(|| Error::Checkpoint(format!("unknown tensor `{name}`")))?;
        let dst = store.value_mut(id);
        if dst.shape() != m.shape() {
            return Err(Error::shape("checkpoint", dst.shape(), m.shape()));
        }
        *dst = m;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn header_layout() {
        let m = Matrix::from_rows(&[vec![1.0, 2.0]]).unwrap();
        let b = encode([("w", &m)]);
        assert_eq!(&b[..4], b"FTCK");
        assert_eq!(&b[4..8], &1u32.to_le_bytes());
        assert_eq!(&b[8..12], &1u32.to_le_bytes());
        assert_eq!(&b[12..16], &1u32.to_le_bytes());
        assert_eq!(b[16], b'w');
        assert_eq!(&b[17..21], &1u32.to_le_bytes());
        assert_eq!(&b[21..25], &2u32.to_le_bytes());
        assert_eq!(&b[25..33], &1.0f64.to_le_bytes());
        assert_eq!(b.len(), 41);
    }

    #[test]
    fn corrupt_inputs_are_rejected() {
        let m = Matrix::filled(2, 2, 0.5);
        let good = encode([("a", &m)]);
        assert!(decode(&good[..good.len() - 1]).is_err());
        let mut bad = good.clone();
        bad[0] = b'X';
        assert!(decode(&bad).is_err());
        let mut extra = good.clone();
        extra.push(0);
        assert!(decode(&extra).is_err());
        let mut ver = good;
        ver[4] = 9;
        assert!(decode(&ver).is_err());
    }

    #[test]
    fn manifest_lines() {
        let a = Matrix::zeros(2, 3);
        let b = Matrix::zeros(1, 1);
        assert_eq!(
            manifest([("x.a", &a), ("x.b", &b)]),
            "x.a\t2\t3\nx.b\t1\t1\n"
        );
    }

    proptest! {
        #[test]
        fn roundtrip(shapes in proptest::collection::vec((1usize..5, 1usize..5), 0..6),
                     seed in any::<u64>()) {
            use rand::SeedableRng;
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let mats: Vec<(String, Matrix)> = shapes
                .iter()
                .enumerate()
                .map(|(i, &(r, c))| (format!("t.{i}"), Matrix::uniform(r, c, 1e3, &mut rng)))
                .collect();
            let bytes = encode(mats.iter().map(|(n, m)| (n.as_str(), m)));
            let back = decode(&bytes).unwrap();
            prop_assert_eq!(back, mats);
        }
    }
}
