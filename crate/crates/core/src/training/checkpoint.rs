use std::path::Path;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::TrainConfig;
use crate::nets::{Discriminator, Generator};
use crate::tensor::{ParamKind, ParamStore, Shape};
use crate::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"CDCK";
pub const CHECKPOINT_VERSION: u8 = 1;

/// Position of a ChaCha stream. Stored as strings in the JSON block since the
/// word position exceeds the range JSON numbers carry exactly.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngState {
    seed: String,
    stream: String,
    word_pos: String,
}

impl RngState {
    pub fn capture(rng: &ChaCha8Rng) -> Self {
        Self {
            seed: rng.get_seed().iter().map(|b| format!("{b:02x}")).collect(),
            stream: rng.get_stream().to_string(),
            word_pos: rng.get_word_pos().to_string(),
        }
    }

    pub fn restore(&self) -> Result<ChaCha8Rng> {
        use rand::SeedableRng;
        let bad = || Error::Checkpoint(format!("invalid rng state {self:?}"));
        if self.seed.len() != 64 {
            return Err(bad());
        }
        let mut seed = [0u8; 32];
        for (i, b) in seed.iter_mut().enumerate() {
            *b = u8::from_str_radix(&self.seed[2 * i..2 * i + 2], 16).map_err(|_| bad())?;
        }
        let mut rng = ChaCha8Rng::from_seed(seed);
        rng.set_stream(self.stream.parse().map_err(|_| bad())?);
        rng.set_word_pos(self.word_pos.parse().map_err(|_| bad())?);
        Ok(rng)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Header {
    config: TrainConfig,
    step: u64,
    adam_g_step: u64,
    adam_d_step: u64,
    data_rng: RngState,
    noise_rng: RngState,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Record {
    pub name: String,
    pub dims: Vec<u32>,
    pub values: Vec<f32>,
}

/// Complete training state: configuration, counters, RNG positions, network
/// parameters and buffers, and optimizer moments (`adam.m.*`, `adam.v.*`).
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: TrainConfig,
    pub step: u64,
    pub adam_g_step: u64,
    pub adam_d_step: u64,
    pub data_rng: RngState,
    pub noise_rng: RngState,
    pub records: Vec<Record>,
}

impl Checkpoint {
    pub fn record(&self, name: &str) -> Option<&Record> {
        self.records.iter().find(|r| r.name == name)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let header = Header {
            config: self.config.clone(),
            step: self.step,
            adam_g_step: self.adam_g_step,
            adam_d_step: self.adam_d_step,
            data_rng: self.data_rng.clone(),
            noise_rng: self.noise_rng.clone(),
        };
        let json = serde_json::to_vec(&header).expect("header serializes");
        let mut out = Vec::with_capacity(json.len() + 64 + 4 * self.records.iter().map(|r| r.values.len()).sum::<usize>());
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.push(CHECKPOINT_VERSION);
        put_u32(&mut out, json.len());
        out.extend_from_slice(&json);
        put_u32(&mut out, self.records.len());
        for r in &self.records {
            put_u32(&mut out, r.name.len());
            out.extend_from_slice(r.name.as_bytes());
            put_u32(&mut out, r.dims.len());
            for &d in &r.dims {
                out.extend_from_slice(&d.to_le_bytes());
            }
            for v in &r.values {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != CHECKPOINT_MAGIC {
            return Err(Error::Checkpoint("not a checkpoint file".into()));
        }
        let version = r.take(1)?[0];
        if version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!("unsupported checkpoint version {version}")));
        }
        let len = r.u32()? as usize;
        let header: Header =
            serde_json::from_slice(r.take(len)?).map_err(|e| Error::Checkpoint(format!("config block: {e}")))?;
        let count = r.u32()? as usize;
        let mut records = Vec::with_capacity(count.min(4096));
        for _ in 0..count {
            let name_len = r.u32()? as usize;
            let name = String::from_utf8(r.take(name_len)?.to_vec())
                .map_err(|_| Error::Checkpoint("record name is not UTF-8".into()))?;
            let rank = r.u32()? as usize;
            let dims = (0..rank).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
            let n = dims.iter().try_fold(1usize, |acc, &d| acc.checked_mul(d as usize));
            let n = n.ok_or_else(|| Error::Checkpoint(format!("record {name} is too large")))?;
            let raw = r.take(n.checked_mul(4).ok_or_else(|| Error::Checkpoint("record too large".into()))?)?;
            let values = raw.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
            records.push(Record { name, dims, values });
        }
        if r.pos != bytes.len() {
            return Err(Error::Checkpoint(format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        Ok(Self {
            config: header.config,
            step: header.step,
            adam_g_step: header.adam_g_step,
            adam_d_step: header.adam_d_step,
            data_rng: header.data_rng,
            noise_rng: header.noise_rng,
            records,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_bytes()).map_err(Error::file(path))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::from_bytes(&std::fs::read(path).map_err(Error::file(path))?)
    }

    /// Copies the named records into `store`; every parameter and buffer must be present with a matching shape.
    pub fn fill_store(&self, prefix: &str, store: &mut ParamStore<f32>) -> Result<()> {
        for id in store.ids().collect::<Vec<_>>() {
            let name = format!("{prefix}{}", store.name(id));
            let rec = self
                .record(&name)
                .ok_or_else(|| Error::Checkpoint(format!("missing record {name}")))?;
            let t = store.get_mut(id);
            if rec.dims != dims_of(t.shape()) {
                return Err(Error::Checkpoint(format!("record {name} has dims {:?}, expected {}", rec.dims, t.shape())));
            }
            t.data_mut().copy_from_slice(&rec.values);
        }
        Ok(())
    }

    /// A generator built from the stored configuration with the stored weights.
    pub fn generator(&self) -> Result<Generator<f32>> {
        let mut g = Generator::new(self.config.generator.clone())?;
        self.fill_store("", g.params_mut())?;
        g.set_noise(self.noise_rng.restore()?);
        Ok(g)
    }

    pub fn discriminator(&self) -> Result<Discriminator<f32>> {
        let mut d = Discriminator::new(self.config.discriminator.clone(), self.config.seed)?;
        self.fill_store("", d.params_mut())?;
        Ok(d)
    }
}

pub(crate) fn dims_of(shape: Shape) -> Vec<u32> {
    shape.0.iter().map(|&d| d as u32).collect()
}

/// Records for every entry of `store`, in store order.
pub(crate) fn store_records(prefix: &str, store: &ParamStore<f32>) -> Vec<Record> {
    store
        .ids()
        .map(|id| Record {
            name: format!("{prefix}{}", store.name(id)),
            dims: dims_of(store.get(id).shape()),
            values: store.get(id).data().to_vec(),
        })
        .collect()
}

/// Names of the trainable entries, which are the ones carrying optimizer moments.
pub(crate) fn trainable_names(store: &ParamStore<f32>) -> impl Iterator<Item = (crate::tensor::ParamId, &str)> {
    store
        .ids()
        .filter(move |&id| store.kind(id) == ParamKind::Trainable)
        .map(move |id| (id, store.name(id)))
}

fn put_u32(out: &mut Vec<u8>, v: usize) {
    let v = u32::try_from(v).expect("length fits in 32 bits");
    out.extend_from_slice(&v.to_le_bytes());
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::Checkpoint(format!("truncated at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{RngCore, SeedableRng};

    fn sample() -> Checkpoint {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        rng.set_stream(3);
        rng.next_u64();
        Checkpoint {
            config: TrainConfig::default(),
            step: 17,
            adam_g_step: 17,
            adam_d_step: 17,
            data_rng: RngState::capture(&rng),
            noise_rng: RngState::capture(&ChaCha8Rng::seed_from_u64(1)),
            records: vec![
                Record { name: "a".into(), dims: vec![1, 2, 1, 2], values: vec![0.5, -1.25, f32::MIN_POSITIVE, 3.0e7] },
                Record { name: "bé".into(), dims: vec![0], values: vec![] },
            ],
        }
    }

    #[test]
    fn layout_and_round_trip() {
        let ck = sample();
        let bytes = ck.to_bytes();
        assert_eq!(&bytes[..5], b"CDCK\x01");
        let json_len = u32::from_le_bytes(bytes[5..9].try_into().unwrap()) as usize;
        let header: serde_json::Value = serde_json::from_slice(&bytes[9..9 + json_len]).unwrap();
        assert_eq!(header["step"], 17);
        assert_eq!(header["config"]["lambda"], 100.0);
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back, ck);
        assert_eq!(back.to_bytes(), bytes);
    }

    #[test]
    fn rng_state_resumes_the_stream() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        rng.set_stream(5);
        for _ in 0..13 {
            rng.next_u32();
        }
        let mut copy = RngState::capture(&rng).restore().unwrap();
        let a: Vec<u64> = (0..8).map(|_| rng.next_u64()).collect();
        let b: Vec<u64> = (0..8).map(|_| copy.next_u64()).collect();
        assert_eq!(a, b);
    }

    #[test]
    fn corrupt_inputs_are_checkpoint_errors() {
        let bytes = sample().to_bytes();
        let cases: Vec<Vec<u8>> = vec![
            b"NOPE".to_vec(),
            [b"CDCK\x02".as_slice(), &bytes[5..]].concat(),
            bytes[..bytes.len() - 1].to_vec(),
            [bytes.as_slice(), &[0]].concat(),
            bytes[..20].to_vec(),
        ];
        for c in cases {
            assert!(matches!(Checkpoint::from_bytes(&c), Err(Error::Checkpoint(_))));
        }
    }

    #[test]
    fn missing_records_are_reported() {
        let mut ck = sample();
        ck.records.clear();
        assert!(matches!(ck.generator(), Err(Error::Checkpoint(m)) if m.contains("missing")));
    }
}
