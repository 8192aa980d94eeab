//! Replay-buffer checkpoint, so a buffer can follow the UE across process
//! restarts.
//!
//! Layout: magic `RRPL`, `u32` version, `u32` header length, JSON header
//! (counters, mode, RNG position, per-entry metadata and losses), then per
//! entry the window frames and the target as interleaved little-endian
//! `f64` complex values, row-major.

use std::io::{Read, Write};
use std::path::Path;

use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;
use serde::{Deserialize, Serialize};

use super::predictor::{EntryMeta, PredictionWindow, ReplayEntry};
use super::replay::{ReplayBuffer, ReplayMode, Scored};
use crate::error::{Result, TwinError};
use crate::linalg::{CMat, C64};
use crate::tensor_io::{read_f64s, read_u32, write_f64s};

const MAGIC: &[u8; 4] = b"RRPL";
const VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct RngState {
    seed: [u8; 32],
    stream: u64,
    /// Decimal string: the position is a `u128`.
    word_pos: String,
}

#[derive(Serialize, Deserialize)]
struct EntryHeader {
    meta: EntryMeta,
    loss: f64,
    t: u64,
    horizon: usize,
}

#[derive(Serialize, Deserialize)]
struct Header {
    capacity: usize,
    seen: u64,
    mode: ReplayMode,
    epsilon: f64,
    rng: RngState,
    window: usize,
    tx_elements: usize,
    rx_elements: usize,
    entries: Vec<EntryHeader>,
}

fn write_matrix(w: &mut impl Write, m: &CMat) -> Result<()> {
    let mut v = Vec::with_capacity(2 * m.len());
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            v.push(m[(i, j)].re);
            v.push(m[(i, j)].im);
        }
    }
    write_f64s(w, &v)
}

fn read_matrix(r: &mut impl Read, rows: usize, cols: usize) -> Result<CMat> {
    let v = read_f64s(r, 2 * rows * cols)?;
    Ok(CMat::from_fn(rows, cols, |i, j| {
        let k = 2 * (i * cols + j);
        C64::new(v[k], v[k + 1])
    }))
}

impl ReplayBuffer<ReplayEntry> {
    pub fn write_to(&self, mut w: impl Write) -> Result<()> {
        let (window, (nt, nr)) = match self.entries().first() {
            Some(e) => (e.item.window.len(), e.item.window.shape()),
            None => (0, (0, 0)),
        };
        for e in self.entries() {
            if e.item.window.len() != window || e.item.window.shape() != (nt, nr) {
                return Err(TwinError::Format("replay entries have mixed shapes".into()));
            }
        }
        let header = Header {
            capacity: self.capacity(),
            seen: self.seen(),
            mode: self.mode(),
            epsilon: self.epsilon(),
            rng: RngState {
                seed: self.rng.get_seed(),
                stream: self.rng.get_stream(),
                word_pos: self.rng.get_word_pos().to_string(),
            },
            window,
            tx_elements: nt,
            rx_elements: nr,
            entries: self
                .entries()
                .iter()
                .map(|e| EntryHeader {
                    meta: e.item.meta,
                    loss: e.loss,
                    t: e.item.window.t,
                    horizon: e.item.window.horizon,
                })
                .collect(),
        };
        let json = serde_json::to_vec(&header)?;
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        w.write_all(&(json.len() as u32).to_le_bytes())?;
        w.write_all(&json)?;
        for e in self.entries() {
            for f in &e.item.window.frames {
                write_matrix(&mut w, f)?;
            }
            write_matrix(&mut w, &e.item.target)?;
        }
        Ok(())
    }

    pub fn read_from(mut r: impl Read) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(TwinError::Format("not a replay checkpoint".into()));
        }
        let version = read_u32(&mut r)?;
        if version != VERSION {
            return Err(TwinError::Format(format!("unsupported replay version {version}")));
        }
        let len = read_u32(&mut r)? as usize;
        let mut json = vec![0u8; len];
        r.read_exact(&mut json)?;
        let h: Header = serde_json::from_slice(&json)?;
        let mut rng = ChaCha8Rng::from_seed(h.rng.seed);
        rng.set_stream(h.rng.stream);
        let pos: u128 = h
            .rng
            .word_pos
            .parse()
            .map_err(|_| TwinError::Format("bad RNG position".into()))?;
        rng.set_word_pos(pos);
        let mut entries = Vec::with_capacity(h.entries.len());
        for eh in &h.entries {
            let frames = (0..h.window)
                .map(|_| read_matrix(&mut r, h.tx_elements, h.rx_elements))
                .collect::<Result<Vec<_>>>()?;
            let target = read_matrix(&mut r, h.tx_elements, h.rx_elements)?;
            let window = PredictionWindow::new(frames, eh.t, eh.horizon)?;
            entries.push(Scored {
                item: ReplayEntry::new(window, target, eh.meta)?,
                loss: eh.loss,
            });
        }
        ReplayBuffer::restore(entries, h.capacity, h.seen, h.mode, h.epsilon, rng)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_from(std::io::BufReader::new(std::fs::File::open(path)?))
    }
}
