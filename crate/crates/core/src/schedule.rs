//! Delay schedules, versioned history of blocks, and the binary replay log.

use std::collections::VecDeque;
use std::io::{Read, Write};
use std::sync::Arc;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::hash4;
use crate::sampling::Draw;

/// How each delay entry is produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DelayMode {
    Zero,
    ConstantMax,
    /// `k mod (tau + 1)` in every entry.
    Cyclic,
    /// Independent uniform entries on `{0..tau}`.
    UniformRandom,
    /// Read from a replay log.
    Recorded,
}

/// Primal delays `d_k` and dual delays `e_k^i`.
#[derive(Debug, Clone)]
pub struct DelaySchedule {
    tau_p: usize,
    tau_d: usize,
    primal: DelayMode,
    dual: DelayMode,
    seed: u64,
    log: Option<Arc<ReplayLog>>,
}

const PRIMAL_TAG: u64 = u64::MAX;

impl DelaySchedule {
    pub fn zero() -> Self {
        Self { tau_p: 0, tau_d: 0, primal: DelayMode::Zero, dual: DelayMode::Zero, seed: 0, log: None }
    }

    pub fn new(tau_p: usize, tau_d: usize, primal: DelayMode, dual: DelayMode, seed: u64) -> Result<Self> {
        if primal == DelayMode::Recorded || dual == DelayMode::Recorded {
            return Err(Error::Config("recorded delays come from DelaySchedule::recorded".into()));
        }
        if tau_p > u8::MAX as usize || tau_d > u8::MAX as usize {
            return Err(Error::Config("delays are capped at 255".into()));
        }
        Ok(Self { tau_p, tau_d, primal, dual, seed, log: None })
    }

    /// Same mode for primal and dual delays.
    pub fn uniform_mode(tau_p: usize, tau_d: usize, mode: DelayMode, seed: u64) -> Result<Self> {
        Self::new(tau_p, tau_d, mode, mode, seed)
    }

    pub fn recorded(log: Arc<ReplayLog>) -> Self {
        Self {
            tau_p: log.header.tau_p,
            tau_d: log.header.tau_d,
            primal: DelayMode::Recorded,
            dual: DelayMode::Recorded,
            seed: 0,
            log: Some(log),
        }
    }

    pub fn tau_p(&self) -> usize {
        self.tau_p
    }

    pub fn tau_d(&self) -> usize {
        self.tau_d
    }

    pub fn primal_mode(&self) -> DelayMode {
        self.primal
    }

    pub fn dual_mode(&self) -> DelayMode {
        self.dual
    }

    pub fn log(&self) -> Option<&Arc<ReplayLog>> {
        self.log.as_ref()
    }

    pub fn is_zero(&self) -> bool {
        let quiet = |mode: DelayMode, tau: usize| mode == DelayMode::Zero || tau == 0;
        self.log.is_none() && quiet(self.primal, self.tau_p) && quiet(self.dual, self.tau_d)
    }

    /// True when `e^i_{k,j}` does not depend on `i`.
    pub fn dual_uniform_in_i(&self) -> bool {
        self.dual != DelayMode::UniformRandom || self.tau_d == 0
    }

    fn entry(&self, mode: DelayMode, tau: usize, k: u64, tag: u64, j: usize) -> usize {
        match mode {
            _ if tau == 0 => 0,
            DelayMode::Zero => 0,
            DelayMode::ConstantMax => tau,
            DelayMode::Cyclic => (k % (tau as u64 + 1)) as usize,
            DelayMode::UniformRandom => (hash4(self.seed, k, tag, j as u64) % (tau as u64 + 1)) as usize,
            DelayMode::Recorded => 0,
        }
    }

    fn record(&self, k: u64) -> Result<&ReplayRecord> {
        let log = self.log.as_ref().expect("recorded mode carries a log");
        log.records
            .get(k as usize)
            .filter(|r| r.k == k)
            .ok_or_else(|| Error::Delay(format!("no recorded entry for iteration {k}")))
    }

    /// Fills `out` with `d_{k,j}` for all `m` blocks.
    pub fn primal_delays(&self, k: u64, m: usize, out: &mut Vec<usize>) -> Result<()> {
        out.clear();
        if self.primal == DelayMode::Recorded {
            let r = self.record(k)?;
            if r.d.len() != m {
                return Err(Error::Delay(format!("record {k} has {} primal entries", r.d.len())));
            }
            out.extend(r.d.iter().map(|&v| v as usize));
        } else {
            out.extend((0..m).map(|j| self.entry(self.primal, self.tau_p, k, PRIMAL_TAG, j)));
        }
        Ok(())
    }

    /// `e^i_{k,j}`
    pub fn dual_delay(&self, k: u64, i: usize, j: usize) -> Result<usize> {
        if self.dual == DelayMode::Recorded {
            let r = self.record(k)?;
            return r
                .e
                .get(j)
                .map(|&v| v as usize)
                .ok_or_else(|| Error::Delay(format!("record {k} lacks dual entry {j}")));
        }
        Ok(self.entry(self.dual, self.tau_d, k, i as u64, j))
    }
}

/// `sup_k max_{j, j'} |d_{k,j} - d_{k,j'}|`
pub fn inconsistency<'a>(delays: impl IntoIterator<Item = &'a [usize]>) -> usize {
    delays
        .into_iter()
        .map(|d| match (d.iter().max(), d.iter().min()) {
            (Some(hi), Some(lo)) => hi - lo,
            _ => 0,
        })
        .max()
        .unwrap_or(0)
}

#[derive(Debug, Clone)]
struct Version {
    from: u64,
    values: Vec<f64>,
}

/// Past versions of a set of slots whose current values live elsewhere.
///
/// Slot `s` changed at iteration `k` is stamped `k + 1`; a read at time `t`
/// returns the version valid at `t` (times below zero read the initial value).
#[derive(Debug, Clone)]
pub struct VersionedSlots {
    keep: usize,
    stamp: Vec<u64>,
    past: Vec<VecDeque<Version>>,
    pool: Vec<Vec<f64>>,
}

impl VersionedSlots {
    /// `keep` is the largest delay that future reads may use.
    pub fn new(slots: usize, keep: usize) -> Self {
        Self { keep, stamp: vec![0; slots], past: vec![VecDeque::new(); slots], pool: Vec::new() }
    }

    pub fn keep(&self) -> usize {
        self.keep
    }

    /// Records that slot `s` is about to change at iteration `k` from `old`.
    pub fn record_change(&mut self, s: usize, k: u64, old: &[f64]) {
        // A second change within the same iteration keeps the first old value.
        if self.keep == 0 || self.stamp[s] == k + 1 {
            self.stamp[s] = k + 1;
            return;
        }
        let mut buf = self.pool.pop().unwrap_or_default();
        buf.clear();
        buf.extend_from_slice(old);
        self.past[s].push_back(Version { from: self.stamp[s], values: buf });
        self.stamp[s] = k + 1;
        self.prune(s, k + 1);
    }

    fn prune(&mut self, s: usize, now: u64) {
        let horizon = now.saturating_sub(self.keep as u64);
        let q = &mut self.past[s];
        while q.len() >= 2 && q[1].from <= horizon {
            let v = q.pop_front().unwrap();
            self.pool.push(v.values);
        }
        if q.len() == 1 && self.stamp[s] <= horizon {
            let v = q.pop_front().unwrap();
            self.pool.push(v.values);
        }
    }

    /// Value of slot `s` at time `t`, given its current value.
    pub fn read<'a>(&'a self, s: usize, current: &'a [f64], t: i64) -> Result<&'a [f64]> {
        let t = t.max(0) as u64;
        if t >= self.stamp[s] {
            return Ok(current);
        }
        self.past[s]
            .iter()
            .rev()
            .find(|v| v.from <= t)
            .map(|v| v.values.as_slice())
            .ok_or_else(|| Error::Delay(format!("slot {s} has no version at time {t}")))
    }
}

/// JSON header of a replay log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayHeader {
    pub tau_p: usize,
    pub tau_d: usize,
    pub mode: String,
    pub m: usize,
}

/// One applied iteration: its draw and the delays that were used.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplayRecord {
    pub k: u64,
    pub i: u32,
    pub eps: bool,
    pub blocks: Vec<u32>,
    pub d: Vec<u8>,
    pub e: Vec<u8>,
}

impl ReplayRecord {
    pub fn draw(&self) -> Draw {
        Draw { blocks: self.blocks.iter().map(|&b| b as usize).collect(), i: self.i as usize, eps: self.eps }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReplayLog {
    pub header: ReplayHeader,
    pub records: Vec<ReplayRecord>,
}

const MAGIC: &[u8; 4] = b"SMRT";

impl ReplayLog {
    pub fn new(header: ReplayHeader) -> Self {
        Self { header, records: Vec::new() }
    }

    pub fn max_primal_delay(&self) -> usize {
        self.records.iter().flat_map(|r| r.d.iter()).map(|&v| v as usize).max().unwrap_or(0)
    }

    pub fn max_dual_delay(&self) -> usize {
        self.records.iter().flat_map(|r| r.e.iter()).map(|&v| v as usize).max().unwrap_or(0)
    }

    pub fn inconsistency(&self) -> usize {
        self.records
            .iter()
            .map(|r| match (r.d.iter().max(), r.d.iter().min()) {
                (Some(a), Some(b)) => (a - b) as usize,
                _ => 0,
            })
            .max()
            .unwrap_or(0)
    }

    pub fn write_to(&self, mut w: impl Write) -> Result<()> {
        let header = serde_json::to_vec(&self.header)?;
        w.write_all(MAGIC)?;
        w.write_u32::<LittleEndian>(header.len() as u32)?;
        w.write_all(&header)?;
        w.write_u64::<LittleEndian>(self.records.len() as u64)?;
        for r in &self.records {
            w.write_u64::<LittleEndian>(r.k)?;
            w.write_u32::<LittleEndian>(r.i)?;
            w.write_u8(u8::from(r.eps))?;
            w.write_u32::<LittleEndian>(r.blocks.len() as u32)?;
            for b in &r.blocks {
                w.write_u32::<LittleEndian>(*b)?;
            }
            w.write_u32::<LittleEndian>(r.d.len() as u32)?;
            w.write_all(&r.d)?;
            w.write_u32::<LittleEndian>(r.e.len() as u32)?;
            w.write_all(&r.e)?;
        }
        Ok(())
    }

    pub fn read_from(mut r: impl Read) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Config("not a replay log".into()));
        }
        let hlen = r.read_u32::<LittleEndian>()? as usize;
        let mut hbuf = vec![0u8; hlen];
        r.read_exact(&mut hbuf)?;
        let header: ReplayHeader = serde_json::from_slice(&hbuf)?;
        let count = r.read_u64::<LittleEndian>()? as usize;
        let mut records = Vec::with_capacity(count.min(1 << 20));
        for _ in 0..count {
            let k = r.read_u64::<LittleEndian>()?;
            let i = r.read_u32::<LittleEndian>()?;
            let eps = r.read_u8()? != 0;
            let nb = r.read_u32::<LittleEndian>()? as usize;
            let blocks = (0..nb).map(|_| r.read_u32::<LittleEndian>()).collect::<std::io::Result<_>>()?;
            let nd = r.read_u32::<LittleEndian>()? as usize;
            let mut d = vec![0u8; nd];
            r.read_exact(&mut d)?;
            let ne = r.read_u32::<LittleEndian>()? as usize;
            let mut e = vec![0u8; ne];
            r.read_exact(&mut e)?;
            records.push(ReplayRecord { k, i, eps, blocks, d, e });
        }
        Ok(Self { header, records })
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        let f = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_to(f)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Self::read_from(std::io::BufReader::new(std::fs::File::open(path)?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn versioned_reads() {
        let mut h = VersionedSlots::new(1, 2);
        let mut cur = vec![0.0];
        for k in 0..2u64 {
            h.record_change(0, k, &cur);
            cur[0] = (k + 1) as f64;
        }
        assert_eq!(h.read(0, &cur, 2).unwrap(), &[2.0]);
        assert_eq!(h.read(0, &cur, 1).unwrap(), &[1.0]);
        assert_eq!(h.read(0, &cur, 0).unwrap(), &[0.0]);
        assert_eq!(h.read(0, &cur, -3).unwrap(), &[0.0]);
    }

    #[test]
    fn pruning_drops_old_versions() {
        let mut h = VersionedSlots::new(1, 1);
        let mut cur = vec![0.0];
        for k in 0..5u64 {
            h.record_change(0, k, &cur);
            cur[0] = (k + 1) as f64;
        }
        assert_eq!(h.read(0, &cur, 4).unwrap(), &[4.0]);
        assert!(h.read(0, &cur, 2).is_err());
    }
}
