use std::collections::HashMap;
use std::path::Path;

use crate::{NnError, Result, Tensor};

const MAGIC: &[u8; 8] = b"TSNNCKPT";
const VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Named parameters in insertion order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    tensors: Vec<Tensor>,
    index: HashMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: &str, tensor: Tensor) -> Result<ParamId> {
        if self.index.contains_key(name) {
            return Err(NnError::Invalid { op: "param", message: format!("duplicate parameter `{name}`") });
        }
        self.index.insert(name.to_string(), self.tensors.len());
        self.names.push(name.to_string());
        self.tensors.push(tensor);
        Ok(ParamId(self.tensors.len() - 1))
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied().map(ParamId)
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.tensors[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.tensors.len()).map(ParamId)
    }

    /// Total number of scalars.
    pub fn numel(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub fn manifest(&self) -> Vec<(String, Vec<usize>)> {
        self.names.iter().cloned().zip(self.tensors.iter().map(|t| t.shape().to_vec())).collect()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(16 + self.numel() * 8);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.len() as u32).to_le_bytes());
        for (name, t) in self.names.iter().zip(&self.tensors) {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
            for &d in t.shape() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, at: 0 };
        if r.take(MAGIC.len())? != MAGIC {
            return Err(NnError::Checkpoint("bad magic".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(NnError::Checkpoint(format!("unsupported version {version}")));
        }
        let count = r.u32()?;
        let mut store = ParamStore::new();
        for _ in 0..count {
            let len = r.u32()? as usize;
            let name = std::str::from_utf8(r.take(len)?)
                .map_err(|_| NnError::Checkpoint("tensor name is not UTF-8".into()))?
                .to_string();
            let ndim = r.u32()? as usize;
            let shape = (0..ndim).map(|_| r.u64().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            let n = shape.iter().try_fold(1usize, |acc, &d| acc.checked_mul(d));
            let n = n.filter(|&n| n <= bytes.len() / 8).ok_or_else(|| NnError::Checkpoint(format!("`{name}` is truncated")))?;
            let data = (0..n).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
            store.add(&name, Tensor::new(shape, data)?).map_err(|e| NnError::Checkpoint(e.to_string()))?;
        }
        if r.at != bytes.len() {
            return Err(NnError::Checkpoint("trailing bytes".into()));
        }
        Ok(store)
    }

    /// Replaces every value from `bytes`, which must carry exactly this
    /// store's names and shapes in the same order.
    pub fn load_values(&mut self, bytes: &[u8]) -> Result<()> {
        let other = Self::from_bytes(bytes)?;
        if other.manifest() != self.manifest() {
            let want = self.manifest().into_iter().map(|(n, s)| format!("{n}{s:?}")).collect::<Vec<_>>();
            let got = other.manifest().into_iter().map(|(n, s)| format!("{n}{s:?}")).collect::<Vec<_>>();
            let first = want.iter().zip(&got).find(|(a, b)| a != b);
            let detail = match first {
                Some((a, b)) => format!("expected {a}, found {b}"),
                None => format!("expected {} tensors, found {}", want.len(), got.len()),
            };
            return Err(NnError::Checkpoint(format!("manifest mismatch: {detail}")));
        }
        self.tensors = other.tensors;
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path.as_ref(), self.to_bytes())
            .map_err(|e| NnError::Checkpoint(format!("{}: {e}", path.as_ref().display())))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let bytes = std::fs::read(path.as_ref())
            .map_err(|e| NnError::Checkpoint(format!("{}: {e}", path.as_ref().display())))?;
        Self::from_bytes(&bytes)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.at.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| NnError::Checkpoint("unexpected end of file".into()))?;
        let s = &self.bytes[self.at..end];
        self.at = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

/// Gradient buffers aligned with a [`ParamStore`].
#[derive(Debug, Clone, PartialEq)]
pub struct Grads {
    bufs: Vec<Vec<f64>>,
}

impl Grads {
    pub fn zeros_like(store: &ParamStore) -> Self {
        Self { bufs: store.tensors.iter().map(|t| vec![0.0; t.len()]).collect() }
    }

    pub fn zero(&mut self) {
        self.bufs.iter_mut().for_each(|b| b.fill(0.0));
    }

    pub fn get(&self, id: ParamId) -> &[f64] {
        &self.bufs[id.0]
    }

    pub(crate) fn slot_mut(&mut self, id: ParamId) -> &mut [f64] {
        &mut self.bufs[id.0]
    }

    pub fn global_norm(&self) -> f64 {
        self.bufs.iter().flatten().map(|g| g * g).sum::<f64>().sqrt()
    }

    pub fn scale(&mut self, c: f64) {
        self.bufs.iter_mut().flatten().for_each(|g| *g *= c);
    }

    /// Rescales so the global norm is at most `max_norm`; returns the norm
    /// before clipping.
    pub fn clip_global_norm(&mut self, max_norm: f64) -> f64 {
        let norm = self.global_norm();
        if norm > max_norm {
            self.scale(max_norm / norm);
        }
        norm
    }

    pub(crate) fn bufs(&self) -> &[Vec<f64>] {
        &self.bufs
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store() -> ParamStore {
        let mut s = ParamStore::new();
        s.add("w", Tensor::from_fn(&[2, 3], |i| i as f64 * 0.1 - 0.2)).unwrap();
        s.add("b", Tensor::new(vec![3], vec![f64::MIN_POSITIVE, -0.0, 1e300]).unwrap()).unwrap();
        s
    }

    #[test]
    fn checkpoint_round_trip_is_bit_exact() {
        let s = store();
        let back = ParamStore::from_bytes(&s.to_bytes()).unwrap();
        assert_eq!(back.manifest(), s.manifest());
        for id in s.ids() {
            let (a, b) = (s.get(id).data(), back.get(id).data());
            assert!(a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits()));
        }
    }

    #[test]
    fn load_values_checks_manifest() {
        let mut s = store();
        let mut other = ParamStore::new();
        other.add("w", Tensor::zeros(&[3, 2])).unwrap();
        other.add("b", Tensor::zeros(&[3])).unwrap();
        let err = s.load_values(&other.to_bytes()).unwrap_err();
        assert!(err.to_string().contains("w[2, 3]"), "{err}");
        let mut bytes = store().to_bytes();
        bytes.pop();
        assert!(ParamStore::from_bytes(&bytes).is_err());
        assert!(ParamStore::from_bytes(b"garbage").is_err());
    }

    #[test]
    fn duplicate_names_rejected() {
        let mut s = store();
        assert!(s.add("w", Tensor::zeros(&[1])).is_err());
    }

    #[test]
    fn clipping_caps_norm() {
        let s = store();
        let mut g = Grads::zeros_like(&s);
        g.slot_mut(ParamId(0)).fill(3.0);
        let before = g.clip_global_norm(1.0);
        assert!((before - (6.0f64 * 9.0).sqrt()).abs() < 1e-12);
        assert!((g.global_norm() - 1.0).abs() < 1e-12);
    }
}
