//! Brute-force reference for candidate selection plus a generator of random
//! sensing histories. Shared by the oracle test and the acceptance harness.

#![allow(dead_code)]

use std::collections::BTreeMap;

use ltev_sim::channel::dbm_to_mw;
use ltev_sim::mac_sps::{ReservationRecord, SelectionWindow, SenseParams, SensingHistory};
use ltev_sim::VehicleId;
use rand::Rng;

pub const NOISE_DBM: f64 = -116.0;

#[derive(Debug, Clone)]
pub struct RawReservation {
    pub received_at: u64,
    pub period_ms: u32,
    pub start: u32,
    pub end: u32,
    pub rsrp_dbm: f64,
}

/// Sensing data as plain maps, independent of `SensingHistory`.
#[derive(Debug, Clone)]
pub struct RawHistory {
    pub now: u64,
    pub window_ms: u64,
    pub n_subchannels: u32,
    /// `None` marks a subframe the vehicle spent transmitting.
    pub rssi_mw: BTreeMap<u64, Option<Vec<f64>>>,
    pub reservations: Vec<RawReservation>,
}

#[derive(Debug, Clone, Copy)]
pub struct Query {
    pub t1: u32,
    pub t2: u32,
    pub needed: u32,
    pub period_ms: u32,
    pub threshold_dbm: f64,
}

impl Query {
    pub fn window(&self, now: u64) -> SelectionWindow {
        SelectionWindow::after(now, self.t1, self.t2)
    }

    pub fn params(&self, raw: &RawHistory) -> SenseParams {
        SenseParams {
            now: raw.now,
            needed_subchannels: self.needed,
            n_subchannels: raw.n_subchannels,
            rsrp_threshold_dbm: self.threshold_dbm,
            rssi_period_ms: self.period_ms,
        }
    }
}

pub fn to_history(raw: &RawHistory) -> SensingHistory {
    let mut h = SensingHistory::new(raw.window_ms, raw.n_subchannels, NOISE_DBM);
    for (&t, sample) in &raw.rssi_mw {
        match sample {
            Some(v) => h.record_rssi(t, v.clone()),
            None => h.record_unsensed(t),
        }
    }
    for (i, r) in raw.reservations.iter().enumerate() {
        h.record_reservation(ReservationRecord {
            tx: VehicleId::new(i as u32 + 2),
            received_at: r.received_at,
            period_ms: r.period_ms,
            subchannels: r.start..r.end,
            rsrp_dbm: r.rsrp_dbm,
        });
    }
    h
}

fn window_average(raw: &RawHistory) -> f64 {
    let lo = raw.now.saturating_sub(raw.window_ms);
    let mut sum = 0.0;
    let mut n = 0usize;
    for (&t, sample) in &raw.rssi_mw {
        if t >= lo && t < raw.now {
            if let Some(v) = sample {
                for x in v {
                    sum += x;
                    n += 1;
                }
            }
        }
    }
    if n == 0 {
        dbm_to_mw(NOISE_DBM)
    } else {
        sum / n as f64
    }
}

pub fn metric(raw: &RawHistory, q: &Query, s: u64, c: u32) -> f64 {
    let avg = window_average(raw);
    let lo = raw.now.saturating_sub(raw.window_ms);
    let p = u64::from(q.period_ms);
    let mut sum = 0.0;
    let mut n = 0usize;
    for j in c..c + q.needed {
        for k in 1u64.. {
            if k * p > s {
                break;
            }
            let t = s - k * p;
            if t < lo {
                break;
            }
            if t >= raw.now {
                continue;
            }
            match raw.rssi_mw.get(&t) {
                None => {}
                Some(None) => {
                    sum += avg;
                    n += 1;
                }
                Some(Some(v)) => {
                    sum += v[j as usize];
                    n += 1;
                }
            }
        }
    }
    if n == 0 {
        avg
    } else {
        sum / n as f64
    }
}

fn excluded(raw: &RawHistory, s: u64, c: u32, needed: u32, threshold: f64) -> bool {
    raw.reservations.iter().any(|r| {
        r.received_at + u64::from(r.period_ms) == s
            && r.start < c + needed
            && c < r.end
            && r.rsrp_dbm >= threshold
    })
}

/// Filter, sort, take 20%: returns `(subframe, first subchannel)` in rank
/// order and the threshold used.
pub fn brute_force(raw: &RawHistory, q: &Query) -> (Vec<(u64, u32)>, f64) {
    let mut pool = Vec::new();
    for s in raw.now + u64::from(q.t1)..=raw.now + u64::from(q.t2) {
        for c in 0..=raw.n_subchannels - q.needed {
            pool.push((s, c));
        }
    }
    let m = pool.len();

    let mut k = 0;
    let threshold = loop {
        let th = q.threshold_dbm + 3.0 * k as f64;
        let survivors = pool
            .iter()
            .filter(|&&(s, c)| !excluded(raw, s, c, q.needed, th))
            .count();
        if survivors * 5 >= m {
            break th;
        }
        k += 1;
    };

    // ranked at 1e-6 dB resolution, then by subframe and subchannel
    let mut ranked: Vec<(i64, u64, u32)> = pool
        .iter()
        .filter(|&&(s, c)| !excluded(raw, s, c, q.needed, threshold))
        .map(|&(s, c)| {
            let dbm = 10.0 * metric(raw, q, s, c).log10();
            ((dbm * 1e6).round() as i64, s, c)
        })
        .collect();
    ranked.sort();
    let take = (m / 5).max(1);
    (
        ranked.into_iter().take(take).map(|(_, s, c)| (s, c)).collect(),
        threshold,
    )
}

/// A random history whose selection pool has at most `max_pool` candidates.
/// Values are drawn from small sets part of the time so that ties and
/// threshold boundaries occur.
pub fn random_case<R: Rng>(rng: &mut R, max_pool: u32) -> (RawHistory, Query) {
    let n_subchannels = rng.random_range(1..=4);
    let needed = rng.random_range(1..=n_subchannels);
    let positions = n_subchannels - needed + 1;
    let max_len = (max_pool / positions).max(1);
    let len = rng.random_range(1..=max_len);
    let t1 = rng.random_range(1..=3);
    let t2 = t1 + len - 1;
    let period_ms = [5, 10, 20][rng.random_range(0..3)];
    let window_ms = rng.random_range(20..=120);
    let now = rng.random_range(window_ms..window_ms + 500);

    let coarse = rng.random_bool(0.5);
    let draw_mw = |rng: &mut R| {
        if coarse {
            dbm_to_mw([-116.0, -100.0, -90.0][rng.random_range(0..3)])
        } else {
            dbm_to_mw(rng.random_range(-120.0..-60.0))
        }
    };

    let mut rssi_mw = BTreeMap::new();
    let p_missing = rng.random_range(0.0..0.5);
    for t in now - window_ms..now {
        let roll: f64 = rng.random();
        if roll < p_missing {
            continue;
        }
        if roll < p_missing + 0.1 {
            rssi_mw.insert(t, None);
        } else {
            let v = (0..n_subchannels).map(|_| draw_mw(rng)).collect();
            rssi_mw.insert(t, Some(v));
        }
    }

    let mut reservations = Vec::new();
    for _ in 0..rng.random_range(0..=8) {
        let start = rng.random_range(0..n_subchannels);
        let end = rng.random_range(start + 1..=n_subchannels);
        let period = if rng.random_bool(0.7) {
            period_ms
        } else {
            rng.random_range(1..=30)
        };
        // aim most reservations at the selection window
        let target = now + u64::from(rng.random_range(t1..=t2));
        let received_at = target
            .checked_sub(u64::from(period))
            .filter(|&r| r >= now - window_ms && r < now && rng.random_bool(0.8))
            .unwrap_or_else(|| rng.random_range(now - window_ms..now));
        let rsrp_dbm = if coarse {
            [-110.0, -107.0, -104.0, -95.0][rng.random_range(0..4)]
        } else {
            rng.random_range(-125.0..-80.0)
        };
        reservations.push(RawReservation {
            received_at,
            period_ms: period,
            start,
            end,
            rsrp_dbm,
        });
    }
    reservations.sort_by_key(|r| r.received_at);

    let raw = RawHistory {
        now,
        window_ms,
        n_subchannels,
        rssi_mw,
        reservations,
    };
    let q = Query {
        t1,
        t2,
        needed,
        period_ms,
        threshold_dbm: -110.0,
    };
    (raw, q)
}
