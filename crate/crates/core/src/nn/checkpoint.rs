//! Binary checkpoint container.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic        4 bytes  "LSQN"
//! version      u32      1
//! scalar width u8       4 (f32) or 8 (f64)
//! config       u32 length + UTF-8 JSON of NetConfig
//! parameters   u32 count, then tensors
//! running stats u32 count, then tensors
//! optimizer    u8 flag; if 1: lr, decay, eps scalars, u32 count, then tensors
//! rng          u8 flag; if 1: 32-byte seed, u64 stream, u128 word position
//! steps_done   u64
//! episodes     u64
//! ```
//!
//! A tensor is `u32 ndim`, `ndim x u32` extents, then the scalars.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{NetConfig, NnError, QNetwork, RmsProp};
use crate::Scalar;

const MAGIC: &[u8; 4] = b"LSQN";
const VERSION: u32 = 1;

/// Exact position of a ChaCha8 stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RngState {
    pub seed: [u8; 32],
    pub stream: u64,
    pub word_pos: u128,
}

impl RngState {
    pub fn capture(rng: &ChaCha8Rng) -> Self {
        Self { seed: rng.get_seed(), stream: rng.get_stream(), word_pos: rng.get_word_pos() }
    }

    pub fn restore(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::from_seed(self.seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(self.word_pos);
        rng
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint<T> {
    pub network: QNetwork<T>,
    pub optimizer: Option<RmsProp<T>>,
    pub rng: Option<RngState>,
    pub steps_done: u64,
    pub episodes_done: u64,
}

impl<T: Scalar> Checkpoint<T> {
    pub fn of_network(network: QNetwork<T>) -> Self {
        Self { network, optimizer: None, rng: None, steps_done: 0, episodes_done: 0 }
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.push(T::BYTES as u8);
        let config = serde_json::to_vec(self.network.config()).expect("NetConfig serializes");
        out.extend_from_slice(&(config.len() as u32).to_le_bytes());
        out.extend_from_slice(&config);

        let shapes = parameter_shapes(self.network.config());
        let params = self.network.parameters();
        out.extend_from_slice(&(params.len() as u32).to_le_bytes());
        for (p, shape) in params.iter().zip(&shapes) {
            write_tensor(&mut out, shape, p);
        }
        let stats = self.network.running_stats();
        out.extend_from_slice(&(stats.len() as u32).to_le_bytes());
        for s in stats {
            write_tensor(&mut out, &[s.len()], s);
        }
        match &self.optimizer {
            Some(opt) => {
                out.push(1);
                opt.learning_rate.write_le(&mut out);
                opt.decay.write_le(&mut out);
                opt.eps.write_le(&mut out);
                out.extend_from_slice(&(opt.accumulators().len() as u32).to_le_bytes());
                for (acc, shape) in opt.accumulators().iter().zip(&shapes) {
                    write_tensor(&mut out, shape, acc);
                }
            }
            None => out.push(0),
        }
        match &self.rng {
            Some(state) => {
                out.push(1);
                out.extend_from_slice(&state.seed);
                out.extend_from_slice(&state.stream.to_le_bytes());
                out.extend_from_slice(&state.word_pos.to_le_bytes());
            }
            None => out.push(0),
        }
        out.extend_from_slice(&self.steps_done.to_le_bytes());
        out.extend_from_slice(&self.episodes_done.to_le_bytes());
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, NnError> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(corrupt("bad magic"));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(corrupt(format!("unsupported version {version}")));
        }
        let width = r.u8()? as usize;
        if width != T::BYTES {
            return Err(corrupt(format!("checkpoint holds {width}-byte scalars, expected {}", T::BYTES)));
        }
        let config_len = r.u32()? as usize;
        let config: NetConfig =
            serde_json::from_slice(r.take(config_len)?).map_err(|e| corrupt(format!("config: {e}")))?;
        let mut network = QNetwork::<T>::new(config.clone(), &mut ChaCha8Rng::seed_from_u64(0))?;
        let shapes = parameter_shapes(&config);

        let count = r.u32()? as usize;
        if count != shapes.len() {
            return Err(corrupt(format!("{count} parameter tensors, architecture has {}", shapes.len())));
        }
        for (slot, shape) in network.parameters_mut().into_iter().zip(&shapes) {
            r.tensor_into(shape, slot)?;
        }
        let count = r.u32()? as usize;
        let mut stats = network.running_stats_mut();
        if count != stats.len() {
            return Err(corrupt(format!("{count} running-stat tensors, architecture has {}", stats.len())));
        }
        for slot in stats.iter_mut() {
            let len = slot.len();
            r.tensor_into(&[len], slot)?;
        }
        let optimizer = match r.u8()? {
            0 => None,
            1 => {
                let lr = r.scalar::<T>()?;
                let decay = r.scalar::<T>()?;
                let eps = r.scalar::<T>()?;
                let count = r.u32()? as usize;
                if count != shapes.len() {
                    return Err(corrupt("optimizer accumulator count does not match parameters"));
                }
                let lens: Vec<usize> = shapes.iter().map(|s| s.iter().product()).collect();
                let mut opt = RmsProp::new(lr, decay, eps, &lens);
                for (slot, shape) in opt.accumulators_mut().iter_mut().zip(&shapes) {
                    r.tensor_into(shape, slot)?;
                }
                Some(opt)
            }
            f => return Err(corrupt(format!("bad optimizer flag {f}"))),
        };
        let rng = match r.u8()? {
            0 => None,
            1 => {
                let mut seed = [0u8; 32];
                seed.copy_from_slice(r.take(32)?);
                let stream = r.u64()?;
                let word_pos = u128::from_le_bytes(r.take(16)?.try_into().expect("16 bytes"));
                Some(RngState { seed, stream, word_pos })
            }
            f => return Err(corrupt(format!("bad rng flag {f}"))),
        };
        let steps_done = r.u64()?;
        let episodes_done = r.u64()?;
        if r.pos != bytes.len() {
            return Err(corrupt(format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        Ok(Self { network, optimizer, rng, steps_done, episodes_done })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), NnError> {
        std::fs::write(path, self.encode()).map_err(NnError::Io)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, NnError> {
        Self::decode(&std::fs::read(path).map_err(NnError::Io)?)
    }
}

/// Extents of each trainable tensor, in [`QNetwork::parameters`] order.
pub fn parameter_shapes(config: &NetConfig) -> Vec<Vec<usize>> {
    let mut shapes = Vec::new();
    let mut in_ch = config.input_planes;
    for &c in &config.conv_channels {
        shapes.push(vec![c, config.kernel, config.kernel, in_ch]);
        shapes.push(vec![c]);
        shapes.push(vec![c]);
        in_ch = c;
    }
    shapes.push(vec![config.hidden_units, config.flat_features()]);
    shapes.push(vec![config.hidden_units]);
    shapes.push(vec![config.outputs, config.hidden_units]);
    shapes.push(vec![config.outputs]);
    shapes
}

fn corrupt(msg: impl Into<String>) -> NnError {
    NnError::Checkpoint(msg.into())
}

fn write_tensor<T: Scalar>(out: &mut Vec<u8>, shape: &[usize], data: &[T]) {
    debug_assert_eq!(shape.iter().product::<usize>(), data.len());
    out.extend_from_slice(&(shape.len() as u32).to_le_bytes());
    for &d in shape {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for &v in data {
        v.write_le(out);
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], NnError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| corrupt("truncated"))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, NnError> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32, NnError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64, NnError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn scalar<T: Scalar>(&mut self) -> Result<T, NnError> {
        Ok(T::read_le(self.take(T::BYTES)?))
    }

    fn tensor_into<T: Scalar>(&mut self, shape: &[usize], slot: &mut [T]) -> Result<(), NnError> {
        let ndim = self.u32()? as usize;
        let mut dims = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            dims.push(self.u32()? as usize);
        }
        if dims != shape {
            return Err(corrupt(format!("tensor extents {dims:?}, expected {shape:?}")));
        }
        let raw = self.take(slot.len() * T::BYTES)?;
        for (v, chunk) in slot.iter_mut().zip(raw.chunks_exact(T::BYTES)) {
            *v = T::read_le(chunk);
        }
        Ok(())
    }
}
