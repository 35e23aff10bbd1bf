//! `A2H1` checkpoint files.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic "A2H1" | version u32
//! pair count u32 | per pair: u32 byte length + UTF-8 "key=value"
//! tensor count u32 | per tensor: u16 name length + UTF-8 name, rank u8,
//!                    dims u32 × rank, f32 payload
//! ```
//!
//! Tensors are parameters then buffers, each in declaration order.

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use indexmap::IndexMap;

use crate::error::{Error, Result};
use crate::model::{Model, ModelConfig, Variant};
use crate::tensor::Tensor;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"A2H1";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CheckpointStage {
    Pretrained,
    Refined,
    Finetuned,
    Scratch,
}

impl CheckpointStage {
    /// Whether the checkpoint carries a two-logit outcome head.
    pub fn is_outcome(self) -> bool {
        !matches!(self, CheckpointStage::Pretrained)
    }
}

impl fmt::Display for CheckpointStage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CheckpointStage::Pretrained => "pretrained",
            CheckpointStage::Refined => "refined",
            CheckpointStage::Finetuned => "finetuned",
            CheckpointStage::Scratch => "scratch",
        })
    }
}

impl FromStr for CheckpointStage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pretrained" => Ok(CheckpointStage::Pretrained),
            "refined" => Ok(CheckpointStage::Refined),
            "finetuned" => Ok(CheckpointStage::Finetuned),
            "scratch" => Ok(CheckpointStage::Scratch),
            other => Err(Error::Config(format!("unknown stage tag {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingMeta {
    pub epochs: usize,
    pub seed: u64,
    /// Mean training loss per epoch. Age losses are in years.
    pub loss_trace: Vec<f64>,
}

impl TrainingMeta {
    pub fn final_loss(&self) -> Option<f64> {
        self.loss_trace.last().copied()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: Model<f32>,
    pub stage: CheckpointStage,
    pub meta: TrainingMeta,
}

impl Checkpoint {
    pub fn config(&self) -> &ModelConfig {
        self.model.config()
    }

    pub fn require_stage(&self, expected: CheckpointStage) -> Result<()> {
        if self.stage != expected {
            return Err(Error::Stage {
                expected: expected.to_string(),
                found: self.stage.to_string(),
            });
        }
        Ok(())
    }

    fn metadata(&self) -> Vec<(String, String)> {
        let c = self.model.config();
        let trace = self
            .meta
            .loss_trace
            .iter()
            .map(|v| v.to_string())
            .collect::<Vec<_>>()
            .join(",");
        let final_loss = self.meta.final_loss().map_or_else(|| "none".to_string(), |v| v.to_string());
        vec![
            ("variant".into(), c.variant.to_string()),
            ("in_channels".into(), c.in_channels.to_string()),
            ("out_dim".into(), c.out_dim.to_string()),
            ("width".into(), c.width.to_string()),
            ("stage".into(), self.stage.to_string()),
            ("seed".into(), self.meta.seed.to_string()),
            ("epochs".into(), self.meta.epochs.to_string()),
            ("final_loss".into(), final_loss),
            ("loss_trace".into(), trace),
        ]
    }
}

pub fn encode_checkpoint(ck: &Checkpoint) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    let meta = ck.metadata();
    out.extend_from_slice(&(meta.len() as u32).to_le_bytes());
    for (k, v) in meta {
        let pair = format!("{k}={v}");
        out.extend_from_slice(&(pair.len() as u32).to_le_bytes());
        out.extend_from_slice(pair.as_bytes());
    }
    let tensors: Vec<(&String, &Tensor<f32>)> =
        ck.model.params().iter().chain(ck.model.buffers().iter()).collect();
    out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for (name, t) in tensors {
        let name_len = u16::try_from(name.len()).map_err(|_| Error::Config(format!("tensor name too long: {name}")))?;
        out.extend_from_slice(&name_len.to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.push(u8::try_from(t.rank()).map_err(|_| Error::Config("tensor rank exceeds 255".into()))?);
        for &d in t.shape() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::Truncated {
                path: self.path.to_path_buf(),
                expected: (self.pos + n) as u64,
                actual: self.bytes.len() as u64,
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn utf8(&mut self, n: usize) -> Result<&'a str> {
        let raw = self.take(n)?;
        std::str::from_utf8(raw).map_err(|_| self.format("invalid UTF-8"))
    }

    fn format(&self, detail: impl Into<String>) -> Error {
        Error::Format {
            path: self.path.to_path_buf(),
            detail: detail.into(),
        }
    }
}

pub fn decode_checkpoint(bytes: &[u8], path: &Path) -> Result<Checkpoint> {
    let mut r = Reader { bytes, pos: 0, path };
    if r.take(4)? != CHECKPOINT_MAGIC {
        return Err(r.format("bad magic, expected \"A2H1\""));
    }
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Version {
            what: "A2H1",
            found: version,
            supported: CHECKPOINT_VERSION,
        });
    }

    let mut meta = IndexMap::new();
    for _ in 0..r.u32()? {
        let len = r.u32()? as usize;
        let pair = r.utf8(len)?;
        let (k, v) = pair
            .split_once('=')
            .ok_or_else(|| r.format(format!("metadata entry {pair:?} lacks '='")))?;
        meta.insert(k.to_string(), v.to_string());
    }
    let field = |key: &str| {
        meta.get(key)
            .map(String::as_str)
            .ok_or_else(|| r.format(format!("missing metadata key {key:?}")))
    };
    let number = |key: &str| -> Result<u64> {
        field(key)?
            .parse()
            .map_err(|_| r.format(format!("metadata {key:?} is not an integer")))
    };
    let variant: Variant = field("variant")?.parse()?;
    let config = ModelConfig::new(
        variant,
        number("in_channels")? as usize,
        number("out_dim")? as usize,
        number("width")? as usize,
    );
    let stage: CheckpointStage = field("stage")?.parse()?;
    let trace_text = field("loss_trace")?;
    let loss_trace = if trace_text.is_empty() {
        Vec::new()
    } else {
        trace_text
            .split(',')
            .map(|v| v.parse::<f64>().map_err(|_| r.format("unparsable loss trace")))
            .collect::<Result<Vec<_>>>()?
    };
    let training = TrainingMeta {
        epochs: number("epochs")? as usize,
        seed: number("seed")?,
        loss_trace,
    };

    let mut tensors = IndexMap::new();
    for _ in 0..r.u32()? {
        let name_len = r.u16()? as usize;
        let name = r.utf8(name_len)?.to_string();
        let rank = r.u8()? as usize;
        let dims = (0..rank).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let numel: usize = dims.iter().product();
        let payload = r.take(4 * numel)?;
        let data = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        tensors.insert(name, Tensor::from_vec(dims, data)?);
    }
    if r.pos != bytes.len() {
        return Err(r.format(format!("{} trailing bytes", bytes.len() - r.pos)));
    }

    let model = Model::from_tensors(config, tensors)?;
    Ok(Checkpoint {
        model,
        stage,
        meta: training,
    })
}

pub fn save_checkpoint(path: impl AsRef<Path>, ck: &Checkpoint) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_checkpoint(ck)?).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes, path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::random_tensor;
    use crate::rng::seeded;

    fn sample_checkpoint() -> Checkpoint {
        let model = Model::build(ModelConfig::new(Variant::ResNet18, 2, 2, 2), &mut seeded(4)).unwrap();
        Checkpoint {
            model,
            stage: CheckpointStage::Refined,
            meta: TrainingMeta {
                epochs: 3,
                seed: 17,
                loss_trace: vec![0.75, 0.5, 1.0 / 3.0],
            },
        }
    }

    #[test]
    fn round_trip_is_exact() {
        let ck = sample_checkpoint();
        let bytes = encode_checkpoint(&ck).unwrap();
        let back = decode_checkpoint(&bytes, Path::new("mem")).unwrap();
        assert_eq!(back, ck);
        let probe = random_tensor(&[2, 2, 16, 16, 16], &mut seeded(1));
        let a = ck.model.forward_eval(&probe).unwrap();
        let b = back.model.forward_eval(&probe).unwrap();
        assert_eq!(a.to_f32_le_bytes(), b.to_f32_le_bytes());
    }

    #[test]
    fn truncated_payload_is_reported() {
        let bytes = encode_checkpoint(&sample_checkpoint()).unwrap();
        let err = decode_checkpoint(&bytes[..bytes.len() - 3], Path::new("mem")).unwrap_err();
        assert!(matches!(err, Error::Truncated { .. }), "{err}");
    }

    #[test]
    fn newer_version_is_rejected() {
        let mut bytes = encode_checkpoint(&sample_checkpoint()).unwrap();
        bytes[4..8].copy_from_slice(&2u32.to_le_bytes());
        let err = decode_checkpoint(&bytes, Path::new("mem")).unwrap_err();
        assert!(matches!(err, Error::Version { found: 2, supported: 1, .. }), "{err}");
    }

    #[test]
    fn unknown_stage_is_rejected() {
        let ck = sample_checkpoint();
        let bytes = encode_checkpoint(&ck).unwrap();
        let needle = b"stage=refined";
        let at = bytes.windows(needle.len()).position(|w| w == needle).unwrap();
        let mut tampered = bytes.clone();
        tampered[at + 6..at + 13].copy_from_slice(b"bogus__");
        let err = decode_checkpoint(&tampered, Path::new("mem")).unwrap_err();
        assert!(err.to_string().contains("stage"), "{err}");
    }

    #[test]
    fn bad_magic_is_rejected() {
        let mut bytes = encode_checkpoint(&sample_checkpoint()).unwrap();
        bytes[0] = b'X';
        assert!(matches!(decode_checkpoint(&bytes, Path::new("mem")), Err(Error::Format { .. })));
    }
}
