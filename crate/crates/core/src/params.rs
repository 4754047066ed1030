//! Named parameter sets and the binary checkpoint container.
//!
//! Checkpoint layout (all integers little-endian):
//!
//! ```text
//! magic      5 bytes   b"SFDM1" or b"SFCL1"
//! json_len   u32
//! config     json_len bytes, canonical JSON (sorted keys)
//! mode       u8        conditioner mode code, 0xFF when not applicable
//! n_floats   u64
//! params     n_floats x f32, tensors in declaration order
//! crc32      u32 over every preceding byte
//! ```

use rand::Rng;

use crate::error::{Error, Result};
use crate::ndtensor::{Element, Graph, Tensor, Var};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    /// Zero marks a bias (initialized to zero).
    pub fan_in: usize,
}

impl ParamSpec {
    pub fn weight(name: impl Into<String>, shape: &[usize], fan_in: usize) -> Self {
        Self { name: name.into(), shape: shape.to_vec(), fan_in }
    }

    pub fn bias(name: impl Into<String>, len: usize) -> Self {
        Self { name: name.into(), shape: vec![len], fan_in: 0 }
    }

    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }

    /// Initialization half-width `1 / sqrt(fan_in)`.
    pub fn init_bound(&self) -> f64 {
        if self.fan_in == 0 {
            0.0
        } else {
            1.0 / (self.fan_in as f64).sqrt()
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamSet {
    specs: Vec<ParamSpec>,
    tensors: Vec<Tensor>,
}

impl ParamSet {
    /// Weights uniform in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`, biases zero.
    pub fn init(specs: Vec<ParamSpec>, rng: &mut impl Rng) -> Self {
        let tensors = specs
            .iter()
            .map(|s| {
                let bound = s.init_bound() as f32;
                let data = if s.fan_in == 0 {
                    vec![0.0; s.numel()]
                } else {
                    (0..s.numel()).map(|_| rng.random_range(-bound..=bound)).collect()
                };
                Tensor::new(&s.shape, data).expect("spec shape matches data")
            })
            .collect();
        Self { specs, tensors }
    }

    pub fn zeros(specs: Vec<ParamSpec>) -> Self {
        let tensors = specs.iter().map(|s| Tensor::zeros(&s.shape)).collect();
        Self { specs, tensors }
    }

    pub fn specs(&self) -> &[ParamSpec] {
        &self.specs
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.specs.iter().position(|s| s.name == name).map(|i| &self.tensors[i])
    }

    pub fn count(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    /// Record every parameter as a leaf of `g`, cast to `T`.
    pub fn to_graph<T: Element>(&self, g: &mut Graph<T>, trainable: bool) -> Vec<Var> {
        self.tensors
            .iter()
            .map(|t| {
                let c = t.cast::<T>();
                if trainable {
                    g.param(c)
                } else {
                    g.constant(c)
                }
            })
            .collect()
    }

    pub fn flat(&self) -> Vec<f32> {
        self.tensors.iter().flat_map(|t| t.data().iter().copied()).collect()
    }

    pub fn from_flat(specs: Vec<ParamSpec>, flat: &[f32]) -> Result<Self> {
        let need: usize = specs.iter().map(ParamSpec::numel).sum();
        if need != flat.len() {
            return Err(Error::Checkpoint(format!("expected {need} parameters, found {}", flat.len())));
        }
        let mut offset = 0;
        let tensors = specs
            .iter()
            .map(|s| {
                let t = Tensor::new(&s.shape, flat[offset..offset + s.numel()].to_vec()).expect("sized above");
                offset += s.numel();
                t
            })
            .collect();
        Ok(Self { specs, tensors })
    }

    pub fn all_finite(&self) -> bool {
        self.tensors.iter().all(Tensor::all_finite)
    }
}

pub const DENOISER_MAGIC: &[u8; 5] = b"SFDM1";
pub const CLASSIFIER_MAGIC: &[u8; 5] = b"SFCL1";
pub const NO_MODE: u8 = 0xFF;

/// Keys sorted, no whitespace.
pub fn canonical_json(value: &impl serde::Serialize) -> Result<String> {
    let v = serde_json::to_value(value).map_err(|e| Error::Checkpoint(e.to_string()))?;
    serde_json::to_string(&v).map_err(|e| Error::Checkpoint(e.to_string()))
}

pub fn encode_checkpoint(magic: &[u8; 5], config_json: &str, mode: u8, params: &ParamSet) -> Vec<u8> {
    let flat = params.flat();
    let mut out = Vec::with_capacity(5 + 4 + config_json.len() + 1 + 8 + flat.len() * 4 + 4);
    out.extend_from_slice(magic);
    out.extend_from_slice(&(config_json.len() as u32).to_le_bytes());
    out.extend_from_slice(config_json.as_bytes());
    out.push(mode);
    out.extend_from_slice(&(flat.len() as u64).to_le_bytes());
    for v in flat {
        out.extend_from_slice(&v.to_le_bytes());
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    out
}

#[derive(Clone, Debug, PartialEq)]
pub struct DecodedCheckpoint {
    pub config_json: String,
    pub mode: u8,
    pub params: Vec<f32>,
}

pub fn decode_checkpoint(magic: &[u8; 5], bytes: &[u8]) -> Result<DecodedCheckpoint> {
    let bad = |m: &str| Error::Checkpoint(m.to_string());
    if bytes.len() < 5 + 4 + 1 + 8 + 4 {
        return Err(bad("file too short"));
    }
    if &bytes[..5] != magic {
        return Err(Error::Checkpoint(format!(
            "magic {:?} does not match expected {:?}",
            String::from_utf8_lossy(&bytes[..5]),
            String::from_utf8_lossy(magic)
        )));
    }
    let (body, tail) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes(tail.try_into().expect("4 bytes"));
    if crc32fast::hash(body) != stored {
        return Err(bad("CRC32 mismatch (corrupted file)"));
    }
    let mut pos = 5;
    let json_len = u32::from_le_bytes(body[pos..pos + 4].try_into().expect("4 bytes")) as usize;
    pos += 4;
    if body.len() < pos + json_len + 1 + 8 {
        return Err(bad("truncated header"));
    }
    let config_json = std::str::from_utf8(&body[pos..pos + json_len])
        .map_err(|_| bad("config is not UTF-8"))?
        .to_string();
    pos += json_len;
    let mode = body[pos];
    pos += 1;
    let n = u64::from_le_bytes(body[pos..pos + 8].try_into().expect("8 bytes")) as usize;
    pos += 8;
    if body.len() - pos != n * 4 {
        return Err(bad("parameter blob length mismatch"));
    }
    let params = body[pos..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
        .collect();
    Ok(DecodedCheckpoint { config_json, mode, params })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    fn specs() -> Vec<ParamSpec> {
        vec![ParamSpec::weight("w", &[3, 2, 5], 10), ParamSpec::bias("b", 3)]
    }

    #[test]
    fn init_is_seeded_bounded_and_biases_zero() {
        let a = ParamSet::init(specs(), &mut rng::stream(1, "init", 0));
        let b = ParamSet::init(specs(), &mut rng::stream(1, "init", 0));
        assert_eq!(a, b);
        let bound = 1.0 / 10f32.sqrt();
        assert!(a.tensors()[0].data().iter().all(|v| v.abs() <= bound));
        assert!(a.tensors()[1].data().iter().all(|&v| v == 0.0));
        assert_eq!(a.count(), 33);
    }

    #[test]
    fn checkpoint_round_trip_and_corruption() {
        let p = ParamSet::init(specs(), &mut rng::stream(2, "init", 0));
        let bytes = encode_checkpoint(DENOISER_MAGIC, "{\"a\":1}", 0, &p);
        let d = decode_checkpoint(DENOISER_MAGIC, &bytes).unwrap();
        assert_eq!(d.config_json, "{\"a\":1}");
        assert_eq!(ParamSet::from_flat(specs(), &d.params).unwrap(), p);

        assert!(decode_checkpoint(CLASSIFIER_MAGIC, &bytes).is_err());
        let mut flipped = bytes.clone();
        flipped[20] ^= 1;
        assert!(decode_checkpoint(DENOISER_MAGIC, &flipped).is_err());
    }
}
