//! Binary checkpoints.
//!
//! Layout, all integers and floats little-endian:
//!
//! ```text
//! magic "DCFCKPT\0" | version u32 | config (u32 len + UTF-8 key=value text)
//! iteration u64 | rng seed [u8; 32] | rng stream u64 | rng word position u128
//! generator tensors | discriminator tensors | generator Adam | discriminator Adam
//! ```
//!
//! A tensor list is a u32 count followed by, per tensor, a u32-prefixed
//! UTF-8 name, four u64 dimensions and the f64 data. An Adam block is the
//! step counter u64 and two tensor lists (first and second moments).

use std::path::Path;

use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::model::DcfNet;
use crate::params::ParamStore;
use crate::tensor::{Shape, Tensor};

use super::adam::AdamState;
use super::config::TrainConfig;
use super::train::Trainer;

pub const MAGIC: &[u8; 8] = b"DCFCKPT\0";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RngState {
    pub seed: [u8; 32],
    pub stream: u64,
    pub word_pos: u128,
}

impl RngState {
    pub fn capture(rng: &ChaCha8Rng) -> Self {
        RngState {
            seed: rng.get_seed(),
            stream: rng.get_stream(),
            word_pos: rng.get_word_pos(),
        }
    }

    pub fn restore(&self) -> ChaCha8Rng {
        use rand::SeedableRng;
        let mut rng = ChaCha8Rng::from_seed(self.seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(self.word_pos);
        rng
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: TrainConfig,
    pub iteration: u64,
    pub rng: RngState,
    pub generator: Vec<(String, Tensor)>,
    pub discriminator: Vec<(String, Tensor)>,
    pub adam_generator: AdamState,
    pub adam_discriminator: AdamState,
}

fn named(store: &ParamStore) -> Vec<(String, Tensor)> {
    store
        .params()
        .iter()
        .map(|p| (p.name.clone(), p.value.clone()))
        .collect()
}

fn restore_store(store: &mut ParamStore, saved: &[(String, Tensor)], what: &str) -> Result<()> {
    if saved.len() != store.len() {
        return Err(Error::Checkpoint(format!(
            "{what}: checkpoint has {} tensors, model has {}",
            saved.len(),
            store.len()
        )));
    }
    for (p, (name, t)) in store.params_mut().iter_mut().zip(saved) {
        if &p.name != name || p.value.shape() != t.shape() {
            return Err(Error::Checkpoint(format!(
                "{what}: saved {name} {} does not match {} {}",
                t.shape(),
                p.name,
                p.value.shape()
            )));
        }
        p.value = t.clone();
    }
    Ok(())
}

impl Trainer {
    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            config: self.config.clone(),
            iteration: self.iteration,
            rng: RngState::capture(&self.rng),
            generator: named(&self.net.params),
            discriminator: named(&self.disc.params),
            adam_generator: self.opt_g.state.clone(),
            adam_discriminator: self.opt_d.state.clone(),
        }
    }

    /// Rebuilds the run from its configuration, then overwrites every
    /// parameter, moment and counter with the saved ones.
    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        let mut t = Trainer::new(ckpt.config.clone())?;
        restore_store(&mut t.net.params, &ckpt.generator, "generator")?;
        restore_store(&mut t.disc.params, &ckpt.discriminator, "discriminator")?;
        for (state, store, what) in [
            (&ckpt.adam_generator, &t.net.params, "generator optimizer"),
            (&ckpt.adam_discriminator, &t.disc.params, "discriminator optimizer"),
        ] {
            let ok = state.m.len() == store.len()
                && state.v.len() == store.len()
                && store
                    .params()
                    .iter()
                    .zip(state.m.iter().zip(&state.v))
                    .all(|(p, (m, v))| m.shape() == p.value.shape() && v.shape() == p.value.shape());
            if !ok {
                return Err(Error::Checkpoint(format!(
                    "{what}: moment shapes do not match the model"
                )));
            }
        }
        t.opt_g.state = ckpt.adam_generator.clone();
        t.opt_d.state = ckpt.adam_discriminator.clone();
        t.iteration = ckpt.iteration;
        t.rng = ckpt.rng.restore();
        Ok(t)
    }
}

impl Checkpoint {
    /// The generator alone, for inference and evaluation.
    pub fn generator_net(&self) -> Result<DcfNet> {
        let mut net = DcfNet::build(self.config.model(), self.config.seed)?;
        restore_store(&mut net.params, &self.generator, "generator")?;
        Ok(net)
    }
}

struct Writer(Vec<u8>);

impl Writer {
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }

    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }

    fn str(&mut self, s: &str) {
        self.u32(s.len() as u32);
        self.0.extend_from_slice(s.as_bytes());
    }

    fn tensor(&mut self, t: &Tensor) {
        for d in t.shape().as_array() {
            self.u64(d as u64);
        }
        for v in t.data() {
            self.0.extend_from_slice(&v.to_le_bytes());
        }
    }

    fn tensors<'a>(&mut self, items: impl ExactSizeIterator<Item = (&'a str, &'a Tensor)>) {
        self.u32(items.len() as u32);
        for (name, t) in items {
            self.str(name);
            self.tensor(t);
        }
    }

    fn adam(&mut self, s: &AdamState) {
        self.u64(s.t);
        self.tensors(s.m.iter().map(|t| ("m", t)));
        self.tensors(s.v.iter().map(|t| ("v", t)));
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::Checkpoint(format!("truncated at byte {}", self.pos)));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn u128(&mut self) -> Result<u128> {
        Ok(u128::from_le_bytes(self.take(16)?.try_into().expect("16 bytes")))
    }

    fn str(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| Error::Checkpoint("invalid UTF-8 string".into()))
    }

    fn tensor(&mut self) -> Result<Tensor> {
        let mut dims = [0usize; 4];
        for d in &mut dims {
            *d = usize::try_from(self.u64()?).map_err(|_| Error::Checkpoint("dimension overflow".into()))?;
        }
        let shape = Shape::new(dims[0], dims[1], dims[2], dims[3]);
        let n = dims
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .and_then(|n| n.checked_mul(8))
            .ok_or_else(|| Error::Checkpoint("tensor size overflow".into()))?;
        let bytes = self.take(n)?;
        let data = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        Tensor::from_vec(shape, data)
    }

    fn tensors(&mut self) -> Result<Vec<(String, Tensor)>> {
        let n = self.u32()? as usize;
        let mut out = Vec::with_capacity(n.min(1 << 16));
        for _ in 0..n {
            let name = self.str()?;
            out.push((name, self.tensor()?));
        }
        Ok(out)
    }

    fn adam(&mut self) -> Result<AdamState> {
        let t = self.u64()?;
        let m = self.tensors()?.into_iter().map(|(_, t)| t).collect();
        let v = self.tensors()?.into_iter().map(|(_, t)| t).collect();
        Ok(AdamState { t, m, v })
    }
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer(Vec::new());
        w.0.extend_from_slice(MAGIC);
        w.u32(VERSION);
        w.str(&self.config.to_text());
        w.u64(self.iteration);
        w.0.extend_from_slice(&self.rng.seed);
        w.u64(self.rng.stream);
        w.0.extend_from_slice(&self.rng.word_pos.to_le_bytes());
        w.tensors(self.generator.iter().map(|(n, t)| (n.as_str(), t)));
        w.tensors(self.discriminator.iter().map(|(n, t)| (n.as_str(), t)));
        w.adam(&self.adam_generator);
        w.adam(&self.adam_discriminator);
        w.0
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self> {
        let mut r = Reader { buf, pos: 0 };
        if r.take(MAGIC.len()).ok() != Some(&MAGIC[..]) {
            return Err(Error::Checkpoint("not a checkpoint file (bad magic)".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported checkpoint version {version} (this build reads {VERSION})"
            )));
        }
        let config = TrainConfig::parse(&r.str()?).map_err(|e| Error::Checkpoint(format!("config: {e}")))?;
        let iteration = r.u64()?;
        let seed: [u8; 32] = r.take(32)?.try_into().expect("32 bytes");
        let stream = r.u64()?;
        let word_pos = r.u128()?;
        let generator = r.tensors()?;
        let discriminator = r.tensors()?;
        let adam_generator = r.adam()?;
        let adam_discriminator = r.adam()?;
        if r.pos != buf.len() {
            return Err(Error::Checkpoint(format!("{} trailing bytes", buf.len() - r.pos)));
        }
        Ok(Checkpoint {
            config,
            iteration,
            rng: RngState { seed, stream, word_pos },
            generator,
            discriminator,
            adam_generator,
            adam_discriminator,
        })
    }
}

pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    std::fs::write(path, ckpt.to_bytes())?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let buf = std::fs::read(path).map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;
    Checkpoint::from_bytes(&buf).map_err(|e| match e {
        Error::Checkpoint(m) => Error::Checkpoint(format!("{}: {m}", path.display())),
        other => other,
    })
}
