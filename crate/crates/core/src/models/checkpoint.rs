//! Binary model checkpoints.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic      8 bytes  "RDRSCKPT"
//! version    u32      1
//! kind       u8       0 = gcn, 1 = sage
//! seed       u64
//! layers     u32
//! per layer: rows u32, cols u32, has_bias u8
//! config     u32 length + UTF-8 JSON (may be empty)
//! per layer: rows*cols f64 weights (row-major), then cols f64 bias if present
//! ```

use std::io::{Read, Write};
use std::path::Path;

use super::{Layer, ModelKind, TwoLayerParams};
use crate::error::{Error, Result};
use crate::numeric::{DenseMatrix, ParamTensor};

const MAGIC: &[u8; 8] = b"RDRSCKPT";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub kind: ModelKind,
    pub seed: u64,
    pub params: TwoLayerParams,
    /// The training configuration that produced the weights, as JSON.
    pub config_json: String,
}

fn bad(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

struct Reader<R> {
    inner: R,
}

impl<R: Read> Reader<R> {
    fn bytes<const N: usize>(&mut self, what: &str) -> Result<[u8; N]> {
        let mut buf = [0u8; N];
        self.inner
            .read_exact(&mut buf)
            .map_err(|_| bad(format!("truncated while reading {what}")))?;
        Ok(buf)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.bytes::<1>(what)?[0])
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.bytes(what)?))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.bytes(what)?))
    }

    fn f64s(&mut self, n: usize, what: &str) -> Result<Vec<f64>> {
        let mut raw = vec![0u8; n * 8];
        self.inner
            .read_exact(&mut raw)
            .map_err(|_| bad(format!("truncated while reading {what}")))?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect())
    }
}

impl Checkpoint {
    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        let mut buf = Vec::new();
        buf.extend_from_slice(MAGIC);
        buf.extend_from_slice(&VERSION.to_le_bytes());
        buf.push(match self.kind {
            ModelKind::Gcn => 0,
            ModelKind::Sage => 1,
        });
        buf.extend_from_slice(&self.seed.to_le_bytes());
        buf.extend_from_slice(&(self.params.layers.len() as u32).to_le_bytes());
        for l in &self.params.layers {
            let (r, c) = l.weight.value.shape();
            buf.extend_from_slice(&(r as u32).to_le_bytes());
            buf.extend_from_slice(&(c as u32).to_le_bytes());
            buf.push(l.bias.is_some() as u8);
        }
        buf.extend_from_slice(&(self.config_json.len() as u32).to_le_bytes());
        buf.extend_from_slice(self.config_json.as_bytes());
        for l in &self.params.layers {
            for t in std::iter::once(&l.weight).chain(&l.bias) {
                for v in t.value.as_slice() {
                    buf.extend_from_slice(&v.to_le_bytes());
                }
            }
        }
        w.write_all(&buf)
            .and_then(|_| w.flush())
            .map_err(|e| Error::io("writing checkpoint", e))
    }

    pub fn read_from<R: Read>(inner: R) -> Result<Self> {
        let mut r = Reader { inner };
        if &r.bytes::<8>("magic")? != MAGIC {
            return Err(bad("not a checkpoint file (bad magic)"));
        }
        let version = r.u32("version")?;
        if version != VERSION {
            return Err(bad(format!("unsupported checkpoint version {version}")));
        }
        let kind = match r.u8("model kind")? {
            0 => ModelKind::Gcn,
            1 => ModelKind::Sage,
            k => return Err(bad(format!("unknown model kind {k}"))),
        };
        let seed = r.u64("seed")?;
        let count = r.u32("layer count")?;
        if count != 2 {
            return Err(bad(format!("expected 2 layers, found {count}")));
        }
        let mut shapes = Vec::with_capacity(2);
        for i in 0..2 {
            let rows = r.u32("layer shape")? as usize;
            let cols = r.u32("layer shape")? as usize;
            let bias = match r.u8("bias flag")? {
                0 => false,
                1 => true,
                f => return Err(bad(format!("layer {i}: invalid bias flag {f}"))),
            };
            shapes.push((rows, cols, bias));
        }
        let len = r.u32("config length")? as usize;
        let mut cfg = vec![0u8; len];
        r.inner
            .read_exact(&mut cfg)
            .map_err(|_| bad("truncated while reading config"))?;
        let config_json = String::from_utf8(cfg).map_err(|_| bad("config is not UTF-8"))?;

        let mut layers = Vec::with_capacity(2);
        for (rows, cols, bias) in shapes {
            let w = DenseMatrix::from_vec(rows, cols, r.f64s(rows * cols, "weights")?)?;
            let b = if bias {
                Some(ParamTensor::new(DenseMatrix::from_vec(1, cols, r.f64s(cols, "bias")?)?))
            } else {
                None
            };
            layers.push(Layer {
                weight: ParamTensor::new(w),
                bias: b,
            });
        }
        let mut rest = Vec::new();
        r.inner
            .read_to_end(&mut rest)
            .map_err(|e| Error::io("reading checkpoint", e))?;
        if !rest.is_empty() {
            return Err(bad(format!("{} trailing bytes", rest.len())));
        }
        let l2 = layers.pop().expect("two layers");
        let l1 = layers.pop().expect("two layers");
        let params = TwoLayerParams { layers: [l1, l2] };
        if params.layers[0].bias.is_some() != params.layers[1].bias.is_some() {
            return Err(bad("layers disagree on bias"));
        }
        params.check().map_err(|e| bad(e.to_string()))?;
        Ok(Self {
            kind,
            seed,
            params,
            config_json,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path).map_err(|e| Error::io(format!("creating {}", path.display()), e))?;
        self.write_to(std::io::BufWriter::new(f))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f = std::fs::File::open(path).map_err(|e| Error::io(format!("opening {}", path.display()), e))?;
        Self::read_from(std::io::BufReader::new(f))
    }
}
