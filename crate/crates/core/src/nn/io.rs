//! Weight files.
//!
//! ```text
//! magic "AEDN" | u32 version
//! u32 rank | u32 input dims[rank]
//! u32 n_layers, then per layer:
//!     u32 kind | u32 n_inputs | u32 inputs[n_inputs] | u32 n_ints | u32 ints[n_ints]
//! u64 n_params | u64 n_buffers
//! f32 params[n_params] | f32 buffers[n_buffers]      (manifest order)
//! ```

use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

use super::graph::ModelGraph;

pub const MAGIC: &[u8; 4] = b"AEDN";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq)]
struct LayerEntry {
    kind: u32,
    inputs: Vec<u32>,
    ints: Vec<u32>,
}

fn manifest(model: &ModelGraph) -> (Vec<u32>, Vec<LayerEntry>) {
    let input = model.input_shape().iter().map(|&d| d as u32).collect();
    let layers = model
        .layers()
        .iter()
        .map(|l| LayerEntry {
            kind: l.spec().kind_id(),
            inputs: l.inputs().iter().map(|&v| v as u32).collect(),
            ints: l.spec().manifest_ints(),
        })
        .collect();
    (input, layers)
}

pub fn to_bytes(model: &ModelGraph) -> Vec<u8> {
    let mut buf = Vec::new();
    let put = |v: u32, buf: &mut Vec<u8>| buf.extend_from_slice(&v.to_le_bytes());
    buf.extend_from_slice(MAGIC);
    put(VERSION, &mut buf);
    let (input, layers) = manifest(model);
    put(input.len() as u32, &mut buf);
    input.iter().for_each(|&d| put(d, &mut buf));
    put(layers.len() as u32, &mut buf);
    for e in &layers {
        put(e.kind, &mut buf);
        put(e.inputs.len() as u32, &mut buf);
        e.inputs.iter().for_each(|&v| put(v, &mut buf));
        put(e.ints.len() as u32, &mut buf);
        e.ints.iter().for_each(|&v| put(v, &mut buf));
    }
    let params: Vec<f64> = model.layers().iter().flat_map(|l| l.params().iter().flatten().copied()).collect();
    let buffers: Vec<f64> = model.layers().iter().flat_map(|l| l.buffers().iter().flatten().copied()).collect();
    buf.extend_from_slice(&(params.len() as u64).to_le_bytes());
    buf.extend_from_slice(&(buffers.len() as u64).to_le_bytes());
    for v in params.iter().chain(&buffers) {
        buf.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    buf
}

/// SHA-256 of the serialized weights.
pub fn fingerprint(model: &ModelGraph) -> [u8; 32] {
    Sha256::digest(to_bytes(model)).into()
}

pub fn save_weights(model: &ModelGraph, path: &Path) -> Result<()> {
    fs::write(path, to_bytes(model)).map_err(|e| Error::io(path, e))
}

pub fn load_weights(model: &mut ModelGraph, path: &Path) -> Result<()> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    from_bytes(model, &bytes).map_err(|e| match e {
        LoadError::Corrupt(reason) => Error::corrupt(path, reason),
        LoadError::Other(e) => e,
    })
}

enum LoadError {
    Corrupt(String),
    Other(Error),
}

impl From<String> for LoadError {
    fn from(s: String) -> Self {
        LoadError::Corrupt(s)
    }
}

fn from_bytes(model: &mut ModelGraph, bytes: &[u8]) -> std::result::Result<(), LoadError> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(LoadError::Corrupt("bad magic (expected AEDN)".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(LoadError::Corrupt(format!("unsupported weight file version {version}")));
    }
    let rank = r.u32()? as usize;
    let input: Vec<u32> = (0..rank).map(|_| r.u32()).collect::<std::result::Result<_, _>>()?;
    let n_layers = r.u32()? as usize;
    let mut layers = Vec::new();
    for _ in 0..n_layers {
        let kind = r.u32()?;
        let n_in = r.u32()? as usize;
        let inputs = (0..n_in).map(|_| r.u32()).collect::<std::result::Result<_, _>>()?;
        let n_ints = r.u32()? as usize;
        let ints = (0..n_ints).map(|_| r.u32()).collect::<std::result::Result<_, _>>()?;
        layers.push(LayerEntry { kind, inputs, ints });
    }
    let (want_input, want_layers) = manifest(model);
    if input != want_input {
        return Err(LoadError::Other(Error::Shape(format!(
            "weight file is for input {input:?}, model expects {want_input:?}"
        ))));
    }
    let first_diff = (0..layers.len().max(want_layers.len())).find(|&i| layers.get(i) != want_layers.get(i));
    if let Some(i) = first_diff {
        let describe = |e: Option<&LayerEntry>| match e {
            Some(e) => format!("kind {} inputs {:?} config {:?}", e.kind, e.inputs, e.ints),
            None => "no layer".to_string(),
        };
        let kind = model.layers().get(i).map(|l| l.spec().kind()).unwrap_or("(none)");
        return Err(LoadError::Other(Error::Layer {
            index: i,
            kind,
            reason: format!(
                "weight file manifest differs: file has {}, model has {}",
                describe(layers.get(i)),
                describe(want_layers.get(i))
            ),
        }));
    }
    let n_params = r.u64()? as usize;
    let n_buffers = r.u64()? as usize;
    let want_params: usize = model.layers().iter().map(|l| l.params().iter().map(Vec::len).sum::<usize>()).sum();
    let want_buffers: usize = model.layers().iter().map(|l| l.buffers().iter().map(Vec::len).sum::<usize>()).sum();
    if n_params != want_params || n_buffers != want_buffers {
        return Err(LoadError::Corrupt(format!(
            "value counts {n_params}/{n_buffers} do not match manifest ({want_params}/{want_buffers})"
        )));
    }
    let remaining = bytes.len() - r.pos;
    if remaining != 4 * (n_params + n_buffers) {
        return Err(LoadError::Corrupt(format!(
            "payload is {remaining} bytes at offset {}, expected {}",
            r.pos,
            4 * (n_params + n_buffers)
        )));
    }
    for p in model.params_mut() {
        for v in p.iter_mut() {
            *v = r.f32()? as f64;
        }
    }
    for b in model.buffers_mut() {
        for v in b.iter_mut() {
            *v = r.f32()? as f64;
        }
    }
    Ok(())
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> std::result::Result<&[u8], String> {
        if self.pos + n > self.bytes.len() {
            return Err(format!(
                "truncated at offset {} (need {n} more bytes, file has {})",
                self.pos,
                self.bytes.len()
            ));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> std::result::Result<u32, String> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> std::result::Result<u64, String> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f32(&mut self) -> std::result::Result<f32, String> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::graph::GraphBuilder;
    use crate::nn::layers::{ConvSpec, LayerSpec};
    use crate::nn::tensor::Tensor;

    fn net(out_ch: usize) -> ModelGraph {
        let mut b = GraphBuilder::new(&[4, 3, 2]);
        let x = b.input();
        let h = b.then(LayerSpec::Conv2d(ConvSpec::same(2, 4, (3, 3))), x).unwrap();
        let h = b.then(LayerSpec::BatchNorm { channels: 4 }, h).unwrap();
        let h = b.then(LayerSpec::Relu, h).unwrap();
        b.then(LayerSpec::Conv2d(ConvSpec::same(4, out_ch, (1, 1))), h).unwrap();
        b.build(11).unwrap()
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("w.aedn");
        let mut a = net(2);
        let x = Tensor::new(vec![3, 4, 3, 2], (0..72).map(|i| (i as f64 * 0.3).sin()).collect()).unwrap();
        a.forward_train(&x).unwrap();
        a.round_to_f32();
        save_weights(&a, &p).unwrap();
        let mut b = net(2);
        load_weights(&mut b, &p).unwrap();
        assert_eq!(a.state(), b.state());
        assert_eq!(a.forward(&x).unwrap(), b.forward(&x).unwrap());
        assert_eq!(fingerprint(&a), fingerprint(&b));
    }

    #[test]
    fn truncated_file_is_corrupt() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("w.aedn");
        let bytes = to_bytes(&net(2));
        for cut in [2, 30, bytes.len() - 3] {
            fs::write(&p, &bytes[..cut]).unwrap();
            let err = load_weights(&mut net(2), &p).unwrap_err();
            assert!(matches!(err, Error::Corrupt { .. }), "{err}");
        }
    }

    #[test]
    fn mismatch_names_first_differing_layer() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("w.aedn");
        save_weights(&net(2), &p).unwrap();
        let err = load_weights(&mut net(3), &p).unwrap_err();
        assert!(matches!(err, Error::Layer { index: 3, kind: "Conv2d", .. }), "{err}");
    }
}
