//! Checkpoint files: a plain-text `key = value` header terminated by a `---`
//! line, followed by the parameters as a flat binary list. Each entry is
//! `u32 name_len | name | u32 rank | u64 extent * rank | f64 * numel`, all
//! little-endian.

use std::io::Read;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::entropy::SoftmaxTable;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

use super::{ActionSpace, IsPolicy, LstmPolicy, MmdpPolicy, ModelKind, PolicyModel};

const MAGIC: &str = "# entbonus checkpoint v1";

/// Everything needed to rebuild a model's architecture.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CheckpointHeader {
    pub kind: ModelKind,
    pub space: ActionSpace,
    pub state_dim: usize,
    pub hidden: Vec<usize>,
    pub seed: u64,
}

impl CheckpointHeader {
    pub fn for_model<S: Scalar>(model: &dyn PolicyModel<S>, seed: u64) -> Self {
        Self {
            kind: model.kind(),
            space: model.action_space(),
            state_dim: model.state_dim(),
            hidden: model.hidden(),
            seed,
        }
    }

    /// Fresh model with this architecture, initialized from `seed`.
    pub fn build<S: Scalar>(&self) -> Result<Box<dyn PolicyModel<S> + Send>> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        Ok(match self.kind {
            ModelKind::Is => Box::new(IsPolicy::new(self.space, self.state_dim, &self.hidden, &mut rng)),
            ModelKind::Mmdp => Box::new(MmdpPolicy::new(self.space, self.state_dim, &self.hidden, &mut rng)),
            ModelKind::Lstm => {
                let [h] = self.hidden[..] else {
                    return Err(Error::Checkpoint(format!("lstm expects one hidden size, got {:?}", self.hidden)));
                };
                Box::new(LstmPolicy::new(self.space, self.state_dim, h, &mut rng))
            }
            ModelKind::Table => Box::new(SoftmaxTable::random(self.space, 1.0, &mut rng)?),
        })
    }

    fn render(&self, params: usize) -> String {
        let hidden: Vec<String> = self.hidden.iter().map(|h| h.to_string()).collect();
        format!(
            "{MAGIC}\nkind = {}\ndims = {}\narity = {}\nstate_dim = {}\nhidden = {}\nseed = {}\nparams = {}\n---\n",
            self.kind,
            self.space.dims(),
            self.space.arity(),
            self.state_dim,
            hidden.join(","),
            self.seed,
            params
        )
    }
}

pub fn save_checkpoint<S: Scalar>(model: &dyn PolicyModel<S>, seed: u64, path: &Path) -> Result<()> {
    let header = CheckpointHeader::for_model(model, seed);
    let mut buf = header.render(model.params().len()).into_bytes();
    for p in model.params().iter() {
        buf.extend((p.name.len() as u32).to_le_bytes());
        buf.extend(p.name.as_bytes());
        buf.extend((p.value.shape().len() as u32).to_le_bytes());
        for &e in p.value.shape() {
            buf.extend((e as u64).to_le_bytes());
        }
        for v in p.value.values() {
            buf.extend(v.as_f64().to_le_bytes());
        }
    }
    crate::io::write_atomic(path, &buf)
}

fn bad(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

fn parse_header(text: &str) -> Result<(CheckpointHeader, usize)> {
    let mut lines = text.lines();
    if lines.next() != Some(MAGIC) {
        return Err(bad("missing checkpoint magic line"));
    }
    let mut fields = std::collections::HashMap::new();
    for line in lines {
        if let Some((k, v)) = line.split_once('=') {
            fields.insert(k.trim().to_string(), v.trim().to_string());
        }
    }
    let get = |k: &str| fields.get(k).ok_or_else(|| bad(format!("header is missing `{k}`")));
    let num = |k: &str| -> Result<usize> { get(k)?.parse().map_err(|_| bad(format!("header field `{k}` is not a number"))) };
    let kind: ModelKind = get("kind")?.parse().map_err(|_| bad("unknown model kind"))?;
    let space = ActionSpace::new(num("dims")?, num("arity")?)?;
    let hidden_raw = get("hidden")?;
    let hidden = if hidden_raw.is_empty() {
        Vec::new()
    } else {
        hidden_raw
            .split(',')
            .map(|h| h.trim().parse().map_err(|_| bad("bad hidden list")))
            .collect::<Result<Vec<usize>>>()?
    };
    let seed = get("seed")?.parse().map_err(|_| bad("bad seed"))?;
    let header = CheckpointHeader { kind, space, state_dim: num("state_dim")?, hidden, seed };
    Ok((header, num("params")?))
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| bad("truncated parameter data"))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
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

/// Reads the header only.
pub fn read_header(path: &Path) -> Result<CheckpointHeader> {
    let bytes = std::fs::read(path)?;
    let (header, _, _) = split(&bytes)?;
    Ok(header)
}

fn split(bytes: &[u8]) -> Result<(CheckpointHeader, usize, &[u8])> {
    let marker = b"\n---\n";
    let at = bytes.windows(marker.len()).position(|w| w == marker).ok_or_else(|| bad("missing header terminator"))?;
    let text = std::str::from_utf8(&bytes[..at]).map_err(|_| bad("header is not UTF-8"))?;
    let (header, count) = parse_header(text)?;
    Ok((header, count, &bytes[at + marker.len()..]))
}

/// Rebuilds the model described by the header and loads its parameters.
pub fn load_checkpoint<S: Scalar>(path: &Path) -> Result<(CheckpointHeader, Box<dyn PolicyModel<S> + Send>)> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    let (header, count, body) = split(&bytes)?;
    let mut model = header.build::<S>()?;
    if count != model.params().len() {
        return Err(bad(format!("checkpoint lists {count} parameters, model has {}", model.params().len())));
    }
    let mut r = Reader { bytes: body, pos: 0 };
    for _ in 0..count {
        let name_len = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(name_len)?).map_err(|_| bad("parameter name is not UTF-8"))?.to_string();
        let rank = r.u32()? as usize;
        let shape = (0..rank).map(|_| r.u64().map(|e| e as usize)).collect::<Result<Vec<_>>>()?;
        let id = model.params().find(&name).ok_or_else(|| bad(format!("unexpected parameter `{name}`")))?;
        let param = model.params_mut().get_mut(id);
        if param.value.shape() != shape.as_slice() {
            return Err(bad(format!("parameter `{name}` has shape {shape:?}, expected {:?}", param.value.shape())));
        }
        for v in param.value.values_mut() {
            *v = S::lit(r.f64()?);
        }
    }
    if r.pos != body.len() {
        return Err(bad("trailing bytes after parameters"));
    }
    Ok((header, model))
}
