//! Shared acoustic medium: propagation delay, range limit, random loss,
//! collisions and half-duplex blocking.
//!
//! A transmission at `t` from `src` opens, at every other beacon within
//! range, a reception window `[t + d/c, t + d/c + tx_duration)`. Windows are
//! resolved once they have fully elapsed. A window fails if it overlaps any
//! other window at the same receiver (collision, both lose), if the receiver
//! was itself transmitting during it (half-duplex), or if its Bernoulli draw,
//! taken at transmit time, failed.

use std::collections::BTreeMap;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::rng::RngStream;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ChannelParams {
    /// m/s
    pub sound_speed: f64,
    /// Per-reception loss probability in `[0, 1]`.
    pub loss_probability: f64,
    /// Air time of one frame (s).
    pub tx_duration: f64,
    /// Minimum spacing between transmissions of one beacon (s).
    pub min_tx_interval: f64,
    /// Beyond this distance nothing is heard (m).
    pub max_range: f64,
    /// Lead waits this long for a polled status (s).
    pub poll_timeout: f64,
    /// Angle-of-arrival noise (rad).
    pub aoa_sigma: f64,
}

impl Default for ChannelParams {
    fn default() -> Self {
        Self {
            sound_speed: 1500.0,
            loss_probability: 0.0,
            tx_duration: 0.8,
            min_tx_interval: 4.0,
            max_range: 2000.0,
            poll_timeout: 4.0,
            aoa_sigma: 0.5f64.to_radians(),
        }
    }
}

impl ChannelParams {
    pub fn validate(&self) -> Result<(), String> {
        let positive = |v: f64| v.is_finite() && v > 0.0;
        if !positive(self.sound_speed) {
            return Err("channel.sound_speed must be positive".into());
        }
        if !positive(self.tx_duration) {
            return Err("channel.tx_duration must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.loss_probability) {
            return Err("channel.loss_probability must be within [0, 1]".into());
        }
        if !positive(self.min_tx_interval) || !positive(self.poll_timeout) || !positive(self.max_range) {
            return Err("channel intervals and range must be positive".into());
        }
        if !(self.aoa_sigma.is_finite() && self.aoa_sigma >= 0.0) {
            return Err("channel.aoa_sigma must be non-negative".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossReason {
    Range,
    Random,
    Collision,
    HalfDuplex,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ChannelStats {
    pub transmissions: u64,
    pub receptions: u64,
    pub delivered: u64,
    pub lost_range: u64,
    pub lost_random: u64,
    pub lost_collision: u64,
    pub lost_half_duplex: u64,
}

impl ChannelStats {
    fn count(&mut self, reason: LossReason) {
        match reason {
            LossReason::Range => self.lost_range += 1,
            LossReason::Random => self.lost_random += 1,
            LossReason::Collision => self.lost_collision += 1,
            LossReason::HalfDuplex => self.lost_half_duplex += 1,
        }
    }

    pub fn lost(&self) -> u64 {
        self.lost_range + self.lost_random + self.lost_collision + self.lost_half_duplex
    }
}

/// One beacon's position when a frame goes out.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Beacon {
    pub id: u8,
    pub position: Vector3<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transmission {
    pub id: u64,
    pub src: u8,
    pub t: f64,
    pub end: f64,
    #[serde(with = "hex_bytes")]
    pub frame: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq)]
struct Window {
    tx: u64,
    src: u8,
    receiver: u8,
    start: f64,
    end: f64,
    lucky: bool,
    collided: bool,
    src_position: Vector3<f64>,
}

/// Fate of one reception window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Reception {
    pub tx: u64,
    pub src: u8,
    pub receiver: u8,
    pub tx_time: f64,
    /// Exact time the first bit arrives.
    pub arrival: f64,
    /// Exact time the last bit arrives.
    pub end: f64,
    /// `None` when delivered.
    pub lost: Option<LossReason>,
    #[serde(skip)]
    pub frame: Vec<u8>,
    /// Source position at transmit time (used for angle of arrival).
    #[serde(skip)]
    pub src_position: Vector3<f64>,
}

#[derive(Debug, Clone)]
pub struct Channel {
    params: ChannelParams,
    seed: u64,
    links: BTreeMap<(u8, u8), RngStream>,
    windows: Vec<Window>,
    frames: BTreeMap<u64, (f64, Vec<u8>)>,
    own_tx: BTreeMap<u8, Vec<(f64, f64)>>,
    next_id: u64,
    stats: ChannelStats,
}

/// Windows are compared with this slack so abutting windows do not collide.
const EPS: f64 = 1e-9;

impl Channel {
    pub fn new(params: ChannelParams, seed: u64) -> Self {
        Self {
            params,
            seed,
            links: BTreeMap::new(),
            windows: Vec::new(),
            frames: BTreeMap::new(),
            own_tx: BTreeMap::new(),
            next_id: 0,
            stats: ChannelStats::default(),
        }
    }

    pub fn params(&self) -> &ChannelParams {
        &self.params
    }

    pub fn stats(&self) -> ChannelStats {
        self.stats
    }

    /// Puts a frame on the medium at `t`. `beacons` lists every beacon,
    /// including the sender, with its current position. Returns the
    /// transmission record and any receivers lost immediately to range.
    pub fn transmit(&mut self, src: u8, frame: Vec<u8>, t: f64, beacons: &[Beacon]) -> (Transmission, Vec<Reception>) {
        let id = self.next_id;
        self.next_id += 1;
        self.stats.transmissions += 1;
        let end = t + self.params.tx_duration;
        self.own_tx.entry(src).or_default().push((t, end));
        let src_pos = beacons.iter().find(|b| b.id == src).map_or_else(Vector3::zeros, |b| b.position);
        let mut out_of_range = Vec::new();
        let mut receivers: Vec<&Beacon> = beacons.iter().filter(|b| b.id != src).collect();
        receivers.sort_by_key(|b| b.id);
        for b in receivers {
            let seed = self.seed;
            let rng = self
                .links
                .entry((src, b.id))
                .or_insert_with(|| RngStream::new(seed, format!("channel/{src}->{}", b.id)));
            // Drawn for every link so the sequence does not depend on geometry.
            let lucky = !rng.bernoulli(self.params.loss_probability);
            let d = (b.position - src_pos).norm();
            let start = t + d / self.params.sound_speed;
            let stop = start + self.params.tx_duration;
            self.stats.receptions += 1;
            if d > self.params.max_range {
                self.stats.count(LossReason::Range);
                out_of_range.push(Reception {
                    tx: id,
                    src,
                    receiver: b.id,
                    tx_time: t,
                    arrival: start,
                    end: stop,
                    lost: Some(LossReason::Range),
                    frame: frame.clone(),
                    src_position: src_pos,
                });
                continue;
            }
            let mut collided = false;
            for w in self.windows.iter_mut().filter(|w| w.receiver == b.id) {
                if start < w.end - EPS && w.start < stop - EPS {
                    w.collided = true;
                    collided = true;
                }
            }
            self.windows.push(Window {
                tx: id,
                src,
                receiver: b.id,
                start,
                end: stop,
                lucky,
                collided,
                src_position: src_pos,
            });
        }
        self.frames.insert(id, (t, frame.clone()));
        (Transmission { id, src, t, end, frame }, out_of_range)
    }

    /// Resolves every window that has fully elapsed by `t`, in order of
    /// completion (ties by transmission id, then receiver).
    pub fn resolve_due(&mut self, t: f64) -> Vec<Reception> {
        let (mut due, keep): (Vec<_>, Vec<_>) = std::mem::take(&mut self.windows).into_iter().partition(|w| w.end <= t + EPS);
        self.windows = keep;
        due.sort_by(|a, b| a.end.total_cmp(&b.end).then(a.tx.cmp(&b.tx)).then(a.receiver.cmp(&b.receiver)));
        let mut out = Vec::with_capacity(due.len());
        for w in due {
            let half_duplex = self
                .own_tx
                .get(&w.receiver)
                .is_some_and(|txs| txs.iter().any(|&(s, e)| w.start < e - EPS && s < w.end - EPS));
            let lost = if w.collided {
                Some(LossReason::Collision)
            } else if half_duplex {
                Some(LossReason::HalfDuplex)
            } else if !w.lucky {
                Some(LossReason::Random)
            } else {
                None
            };
            match lost {
                Some(r) => self.stats.count(r),
                None => self.stats.delivered += 1,
            }
            let (tx_time, frame) = self.frames.get(&w.tx).cloned().unwrap_or_default();
            out.push(Reception {
                tx: w.tx,
                src: w.src,
                receiver: w.receiver,
                tx_time,
                arrival: w.start,
                end: w.end,
                lost,
                frame,
                src_position: w.src_position,
            });
        }
        self.prune(t);
        out
    }

    /// Drops bookkeeping no pending window can refer to.
    fn prune(&mut self, t: f64) {
        let horizon = self.windows.iter().map(|w| w.start).fold(t, f64::min) - self.params.tx_duration - 1.0;
        for txs in self.own_tx.values_mut() {
            txs.retain(|&(_, e)| e > horizon);
        }
        let live: std::collections::BTreeSet<u64> = self.windows.iter().map(|w| w.tx).collect();
        self.frames.retain(|id, _| live.contains(id));
    }

    /// Windows not yet resolved.
    pub fn in_flight(&self) -> usize {
        self.windows.len()
    }
}

mod hex_bytes {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(bytes: &[u8], s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&hex::encode(bytes))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<u8>, D::Error> {
        let s = String::deserialize(d)?;
        hex::decode(s).map_err(serde::de::Error::custom)
    }
}
