//! Binary checkpoints holding everything needed for a bit-exact resume.
//!
//! Layout, little-endian: magic, version, config as key=value text, vocabulary
//! tokens and fingerprint, iteration, RNG seed/stream/word position,
//! parameters, optimizer states, then a SHA-256 of all preceding bytes.

use std::collections::BTreeMap;
use std::fs;
use std::io::{Cursor, Read};
use std::path::Path;

use byteorder::{LittleEndian as LE, ReadBytesExt, WriteBytesExt};
use ndarray::Array2;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::config::TrainingConfig;
use crate::data::Vocabulary;
use crate::error::{Error, Result};
use crate::model::{fresh_optimizers, ModelState, Networks};
use crate::nn::ParamStore;
use crate::optim::{Adam, AdamConfig, Moments};

const MAGIC: &[u8; 8] = b"LTXCKPT\0";
const VERSION: u32 = 1;

fn put_str(buf: &mut Vec<u8>, s: &str) {
    buf.write_u64::<LE>(s.len() as u64).unwrap();
    buf.extend_from_slice(s.as_bytes());
}

fn put_matrix(buf: &mut Vec<u8>, m: &Array2<f64>) {
    buf.write_u64::<LE>(m.nrows() as u64).unwrap();
    buf.write_u64::<LE>(m.ncols() as u64).unwrap();
    for v in m.iter() {
        buf.write_f64::<LE>(*v).unwrap();
    }
}

/// Serializes a state to bytes.
pub fn to_bytes(state: &ModelState) -> Vec<u8> {
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.write_u32::<LE>(VERSION).unwrap();
    put_str(&mut buf, &state.config.to_kv());
    buf.write_u64::<LE>(state.vocab.len() as u64).unwrap();
    for t in state.vocab.tokens() {
        put_str(&mut buf, t);
    }
    put_str(&mut buf, &state.vocab.fingerprint());
    buf.write_u64::<LE>(state.iteration).unwrap();
    buf.extend_from_slice(&state.rng.get_seed());
    buf.write_u64::<LE>(state.rng.get_stream()).unwrap();
    buf.write_u128::<LE>(state.rng.get_word_pos()).unwrap();

    buf.write_u64::<LE>(state.params.len() as u64).unwrap();
    for (name, m) in state.params.iter() {
        put_str(&mut buf, name);
        put_matrix(&mut buf, m);
    }
    buf.write_u64::<LE>(state.optimizers.len() as u64).unwrap();
    for (name, adam) in &state.optimizers {
        put_str(&mut buf, name);
        let c = adam.config;
        for v in [c.lr, c.beta1, c.beta2, c.eps] {
            buf.write_f64::<LE>(v).unwrap();
        }
        buf.write_u64::<LE>(adam.state.len() as u64).unwrap();
        for (p, m) in &adam.state {
            put_str(&mut buf, p);
            buf.write_u64::<LE>(m.t).unwrap();
            put_matrix(&mut buf, &m.m);
            put_matrix(&mut buf, &m.v);
        }
    }
    let digest = Sha256::digest(&buf);
    buf.extend_from_slice(&digest);
    buf
}

struct Reader<'a>(Cursor<&'a [u8]>);

impl Reader<'_> {
    fn fail(what: &str) -> Error {
        Error::Checkpoint(format!("truncated or malformed {what}"))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        self.0.read_u64::<LE>().map_err(|_| Self::fail(what))
    }

    fn f64(&mut self, what: &str) -> Result<f64> {
        self.0.read_f64::<LE>().map_err(|_| Self::fail(what))
    }

    fn len(&mut self, what: &str) -> Result<usize> {
        let n = self.u64(what)?;
        let left = self.0.get_ref().len() as u64 - self.0.position();
        if n > left {
            return Err(Self::fail(what));
        }
        Ok(n as usize)
    }

    fn string(&mut self, what: &str) -> Result<String> {
        let n = self.len(what)?;
        let mut b = vec![0; n];
        self.0.read_exact(&mut b).map_err(|_| Self::fail(what))?;
        String::from_utf8(b).map_err(|_| Self::fail(what))
    }

    fn matrix(&mut self, what: &str) -> Result<Array2<f64>> {
        let r = self.u64(what)? as usize;
        let c = self.u64(what)? as usize;
        let n = r.checked_mul(c).ok_or_else(|| Self::fail(what))?;
        let left = (self.0.get_ref().len() as u64 - self.0.position()) as usize;
        if n > left / 8 {
            return Err(Self::fail(what));
        }
        let mut data = Vec::with_capacity(n);
        for _ in 0..n {
            data.push(self.f64(what)?);
        }
        Array2::from_shape_vec((r, c), data).map_err(|_| Self::fail(what))
    }
}

/// Parses and verifies a checkpoint.
pub fn from_bytes(bytes: &[u8]) -> Result<ModelState> {
    if bytes.len() < MAGIC.len() + 4 + 32 || &bytes[..MAGIC.len()] != MAGIC {
        return Err(Error::Checkpoint("not a checkpoint file".into()));
    }
    let (body, digest) = bytes.split_at(bytes.len() - 32);
    if Sha256::digest(body).as_slice() != digest {
        return Err(Error::Checkpoint("checksum mismatch, file is corrupted".into()));
    }
    let mut r = Reader(Cursor::new(&body[MAGIC.len()..]));
    let version = r.0.read_u32::<LE>().map_err(|_| Reader::fail("version"))?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let config = TrainingConfig::from_kv(&r.string("config")?)?;
    let n_tokens = r.len("vocabulary")?;
    let tokens = (0..n_tokens).map(|_| r.string("token")).collect::<Result<Vec<_>>>()?;
    let vocab = Vocabulary::from_tokens(tokens)?;
    let fingerprint = r.string("fingerprint")?;
    if fingerprint != vocab.fingerprint() {
        return Err(Error::VocabMismatch {
            expected: fingerprint,
            found: vocab.fingerprint(),
        });
    }
    let iteration = r.u64("iteration")?;
    let mut seed = [0u8; 32];
    r.0.read_exact(&mut seed).map_err(|_| Reader::fail("rng"))?;
    let stream = r.u64("rng")?;
    let word_pos = r.0.read_u128::<LE>().map_err(|_| Reader::fail("rng"))?;
    let mut rng = ChaCha8Rng::from_seed(seed);
    rng.set_stream(stream);
    rng.set_word_pos(word_pos);

    let mut params = ParamStore::new();
    for _ in 0..r.len("parameters")? {
        let name = r.string("parameter name")?;
        params.insert(name, r.matrix("parameter")?);
    }
    let mut optimizers = BTreeMap::new();
    for _ in 0..r.len("optimizers")? {
        let name = r.string("optimizer name")?;
        let mut c = [0.0; 4];
        for v in &mut c {
            *v = r.f64("optimizer config")?;
        }
        let mut adam = Adam::new(AdamConfig {
            lr: c[0],
            beta1: c[1],
            beta2: c[2],
            eps: c[3],
        });
        for _ in 0..r.len("optimizer state")? {
            let p = r.string("moment name")?;
            let t = r.u64("moment step")?;
            let m = r.matrix("first moment")?;
            let v = r.matrix("second moment")?;
            adam.state.insert(p, Moments { m, v, t });
        }
        optimizers.insert(name, adam);
    }
    if (r.0.position() as usize) != r.0.get_ref().len() {
        return Err(Error::Checkpoint("trailing bytes".into()));
    }

    let nets = Networks::new(&config, vocab.len());
    let expected = {
        let mut probe = ParamStore::new();
        nets.init(config.kind, &mut probe, &mut ChaCha8Rng::seed_from_u64(0));
        probe
    };
    for (name, m) in expected.iter() {
        match params.get(name) {
            Some(p) if p.dim() == m.dim() => {}
            Some(p) => {
                return Err(Error::Checkpoint(format!(
                    "parameter {name} has shape {:?}, expected {:?}",
                    p.dim(),
                    m.dim()
                )))
            }
            None => return Err(Error::Checkpoint(format!("missing parameter {name}"))),
        }
    }
    if params.len() != expected.len() {
        return Err(Error::Checkpoint("unexpected extra parameters".into()));
    }
    if optimizers.keys().ne(fresh_optimizers(&config).keys()) {
        return Err(Error::Checkpoint("unexpected optimizer slots".into()));
    }
    Ok(ModelState {
        config,
        vocab,
        nets,
        params,
        optimizers,
        iteration,
        rng,
    })
}

pub fn save(state: &ModelState, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    // Write to a sibling file first so a crash never leaves a half-written checkpoint.
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, to_bytes(state)).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn load(path: impl AsRef<Path>) -> Result<ModelState> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    from_bytes(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::ModelKind;
    use rand::Rng;

    fn small_state(kind: ModelKind) -> ModelState {
        let mut c = TrainingConfig::desk(kind);
        c.hidden = 6;
        c.channels = 4;
        c.res_blocks = 1;
        c.noise_dim = 3;
        c.code_critic_hidden = 5;
        c.generator_hidden = 5;
        let vocab = Vocabulary::build(&crate::toy::tokenized(20, 1), 20).unwrap();
        ModelState::new(c, vocab).unwrap()
    }

    #[test]
    fn round_trip_is_exact() {
        let mut s = small_state(ModelKind::LatextII);
        s.rng.random::<u64>();
        s.iteration = 17;
        let bytes = to_bytes(&s);
        let mut back = from_bytes(&bytes).unwrap();
        assert_eq!(to_bytes(&back), bytes);
        assert_eq!(back.rng.random::<u64>(), s.rng.random::<u64>());
        assert_eq!(back.config, s.config);
    }

    #[test]
    fn any_flipped_byte_is_detected() {
        let bytes = to_bytes(&small_state(ModelKind::Aae));
        for pos in [0, 10, bytes.len() / 2, bytes.len() - 1] {
            let mut bad = bytes.clone();
            bad[pos] ^= 0x40;
            assert!(from_bytes(&bad).is_err(), "flip at {pos}");
        }
        assert!(from_bytes(&bytes[..bytes.len() - 5]).is_err());
        assert!(from_bytes(b"").is_err());
    }
}
