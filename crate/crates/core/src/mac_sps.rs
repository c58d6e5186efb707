//! Sensing-based semi-persistent scheduling for autonomous (mode 4)
//! resource selection.
//!
//! Each vehicle keeps a sensing history of the last `sps_sensing_window_ms`
//! subframes: the RSSI it measured per subchannel and the reservations
//! announced in SCIs it decoded. When it needs a resource it excludes
//! candidates reserved by others above an RSRP threshold, ranks the rest by
//! average RSSI and picks one of the best 20% at random. The reservation is
//! then reused every period until its reselection counter runs out.

use std::collections::VecDeque;
use std::ops::Range;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::channel::dbm_to_mw;
use crate::phy::{LinkAbstraction, PhyError, TransportBlock};
use crate::stack::{HeaderSizes, Layer, TaggedPacket, TxStack};
use crate::VehicleId;

pub const RESELECTION_COUNTER_MIN: u32 = 5;
pub const RESELECTION_COUNTER_MAX: u32 = 15;
/// Exclusion threshold step when too few candidates survive.
pub const RSRP_THRESHOLD_STEP_DB: f64 = 3.0;
/// Candidates are ranked on RSSI rounded to this many dB, so means that are
/// equal up to floating-point summation order tie exactly.
pub const RSSI_RANK_RESOLUTION_DB: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SpsError {
    #[error("selection window {start}..={end} is empty or not after {now}")]
    EmptyWindow { start: u64, end: u64, now: u64 },
    #[error("{needed} subchannels requested, {available} available")]
    NoFit { needed: u32, available: u32 },
    #[error("no candidate resources to choose from")]
    NoCandidates,
    #[error(transparent)]
    Phy(#[from] PhyError),
}

/// A reservation learnt from a decoded SCI.
#[derive(Debug, Clone, PartialEq)]
pub struct ReservationRecord {
    pub tx: VehicleId,
    pub received_at: u64,
    pub period_ms: u32,
    pub subchannels: Range<u32>,
    pub rsrp_dbm: f64,
}

impl ReservationRecord {
    /// The subframe the transmitter announced it will use next.
    pub fn projected_subframe(&self) -> u64 {
        self.received_at + u64::from(self.period_ms)
    }
}

fn overlaps(a: &Range<u32>, b: &Range<u32>) -> bool {
    a.start < b.end && b.start < a.end
}

/// Sensing records of one vehicle.
#[derive(Debug, Clone)]
pub struct SensingHistory {
    window_ms: u64,
    n_subchannels: u32,
    noise_mw: f64,
    // ascending subframes; `None` = not sensed (own transmission)
    rssi: VecDeque<(u64, Option<Vec<f64>>)>,
    reservations: VecDeque<ReservationRecord>,
}

impl SensingHistory {
    pub fn new(window_ms: u64, n_subchannels: u32, noise_dbm: f64) -> Self {
        Self {
            window_ms,
            n_subchannels,
            noise_mw: dbm_to_mw(noise_dbm),
            rssi: VecDeque::new(),
            reservations: VecDeque::new(),
        }
    }

    pub fn window_ms(&self) -> u64 {
        self.window_ms
    }

    pub fn n_subchannels(&self) -> u32 {
        self.n_subchannels
    }

    fn push_sample(&mut self, subframe: u64, sample: Option<Vec<f64>>) {
        debug_assert!(self.rssi.back().is_none_or(|(t, _)| *t < subframe));
        self.rssi.push_back((subframe, sample));
        self.evict(subframe + 1);
    }

    /// Stores the per-subchannel RSSI (mW) measured in `subframe`.
    pub fn record_rssi(&mut self, subframe: u64, per_subchannel_mw: Vec<f64>) {
        assert_eq!(per_subchannel_mw.len(), self.n_subchannels as usize);
        self.push_sample(subframe, Some(per_subchannel_mw));
    }

    /// Marks `subframe` as not sensed because the vehicle was transmitting.
    pub fn record_unsensed(&mut self, subframe: u64) {
        self.push_sample(subframe, None);
    }

    pub fn record_reservation(&mut self, record: ReservationRecord) {
        self.reservations.push_back(record);
    }

    /// Drops everything older than the sensing window ending before `now`.
    pub fn evict(&mut self, now: u64) {
        let oldest = now.saturating_sub(self.window_ms);
        while self.rssi.front().is_some_and(|(t, _)| *t < oldest) {
            self.rssi.pop_front();
        }
        while self
            .reservations
            .front()
            .is_some_and(|r| r.received_at < oldest)
        {
            self.reservations.pop_front();
        }
    }

    pub fn reservations(&self) -> impl Iterator<Item = &ReservationRecord> {
        self.reservations.iter()
    }

    /// `None` when nothing is recorded for `subframe`, `Some(None)` when the
    /// subframe was not sensed.
    pub fn sample(&self, subframe: u64) -> Option<Option<&[f64]>> {
        let idx = self
            .rssi
            .binary_search_by_key(&subframe, |(t, _)| *t)
            .ok()?;
        Some(self.rssi[idx].1.as_deref())
    }

    /// Mean RSSI (mW) over every sensed subframe and subchannel in
    /// `[now - window, now)`; the noise floor when nothing was sensed.
    pub fn window_average_mw(&self, now: u64) -> f64 {
        let oldest = now.saturating_sub(self.window_ms);
        let mut sum = 0.0;
        let mut count = 0usize;
        for (t, sample) in &self.rssi {
            if *t < oldest || *t >= now {
                continue;
            }
            if let Some(values) = sample {
                sum += values.iter().sum::<f64>();
                count += values.len();
            }
        }
        if count == 0 {
            self.noise_mw
        } else {
            sum / count as f64
        }
    }
}

/// Inclusive range of candidate subframes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SelectionWindow {
    pub start: u64,
    pub end: u64,
}

impl SelectionWindow {
    /// `[now + t1, now + t2]`.
    pub fn after(now: u64, t1: u32, t2: u32) -> Self {
        Self {
            start: now + u64::from(t1),
            end: now + u64::from(t2),
        }
    }
}

/// A single-subframe resource: `subchannels` contiguous subchannels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Candidate {
    pub subframe: u64,
    pub subchannels: Range<u32>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SenseParams {
    /// Time of the selection trigger; sensing covers `[now - window, now)`.
    pub now: u64,
    pub needed_subchannels: u32,
    pub n_subchannels: u32,
    pub rsrp_threshold_dbm: f64,
    /// Spacing of the past subframes whose RSSI predicts a candidate's.
    pub rssi_period_ms: u32,
}

/// Result of [`sense`]: the best candidates in rank order.
#[derive(Debug, Clone, PartialEq)]
pub struct CandidateSet {
    pub candidates: Vec<Candidate>,
    /// Exclusion threshold that finally let enough candidates survive.
    pub threshold_dbm: f64,
    pub pool_size: usize,
}

/// All single-subframe candidates in the window, subframe-major.
pub fn enumerate_candidates(window: SelectionWindow, needed: u32, n_subchannels: u32) -> Vec<Candidate> {
    let positions = n_subchannels + 1 - needed;
    (window.start..=window.end)
        .flat_map(|subframe| {
            (0..positions).map(move |c| Candidate {
                subframe,
                subchannels: c..c + needed,
            })
        })
        .collect()
}

/// Predicted RSSI (mW) of a candidate: the mean over its subchannels of the
/// RSSI measured one, two, ... periods before it inside the sensing window.
/// Unsensed subframes count as the window average.
pub fn candidate_rssi_mw(history: &SensingHistory, cand: &Candidate, params: &SenseParams) -> f64 {
    let average = history.window_average_mw(params.now);
    let oldest = params.now.saturating_sub(history.window_ms());
    let period = u64::from(params.rssi_period_ms.max(1));
    let mut sum = 0.0;
    let mut count = 0usize;
    for j in cand.subchannels.clone() {
        let mut k = 1;
        while let Some(t) = cand.subframe.checked_sub(k * period) {
            if t < oldest {
                break;
            }
            k += 1;
            if t >= params.now {
                continue;
            }
            match history.sample(t) {
                None => {}
                Some(None) => {
                    sum += average;
                    count += 1;
                }
                Some(Some(values)) => {
                    sum += values[j as usize];
                    count += 1;
                }
            }
        }
    }
    if count == 0 {
        average
    } else {
        sum / count as f64
    }
}

/// Integer ranking key of a predicted RSSI.
pub fn rssi_rank_key(rssi_mw: f64) -> i64 {
    (10.0 * rssi_mw.log10() / RSSI_RANK_RESOLUTION_DB).round() as i64
}

/// Strongest announced reservation colliding with `cand`, or `-inf`.
fn blocking_rsrp(history: &SensingHistory, cand: &Candidate) -> f64 {
    history
        .reservations()
        .filter(|r| r.projected_subframe() == cand.subframe && overlaps(&r.subchannels, &cand.subchannels))
        .map(|r| r.rsrp_dbm)
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Candidate selection: exclusion by announced reservations, then RSSI
/// ranking. Returns the lowest-RSSI 20% of the original pool (at least one),
/// ties broken by subframe then subchannel.
pub fn sense(
    history: &SensingHistory,
    window: SelectionWindow,
    params: &SenseParams,
) -> Result<CandidateSet, SpsError> {
    if window.start <= params.now || window.end < window.start {
        return Err(SpsError::EmptyWindow {
            start: window.start,
            end: window.end,
            now: params.now,
        });
    }
    if params.needed_subchannels == 0 || params.needed_subchannels > params.n_subchannels {
        return Err(SpsError::NoFit {
            needed: params.needed_subchannels,
            available: params.n_subchannels,
        });
    }

    let pool = enumerate_candidates(window, params.needed_subchannels, params.n_subchannels);
    let pool_size = pool.len();
    let blocking: Vec<f64> = pool.iter().map(|c| blocking_rsrp(history, c)).collect();

    // Survivors must reach 20% of the pool. A candidate survives threshold
    // `base + 3k` iff its blocking RSRP is below it, so the smallest k is
    // set by the `needed`-th weakest blocker.
    let needed = pool_size.div_ceil(5);
    let mut sorted = blocking.clone();
    sorted.sort_by(f64::total_cmp);
    let pivot = sorted[needed - 1];
    let base = params.rsrp_threshold_dbm;
    let mut k: u64 = if pivot < base {
        0
    } else {
        ((pivot - base) / RSRP_THRESHOLD_STEP_DB).floor() as u64
    };
    let threshold_at = |k: u64| base + RSRP_THRESHOLD_STEP_DB * k as f64;
    while threshold_at(k) <= pivot {
        k += 1;
    }
    while k > 0 && threshold_at(k - 1) > pivot {
        k -= 1;
    }
    let threshold = threshold_at(k);

    // pool order is already (subframe, subchannel), so the index breaks ties
    let mut ranked: Vec<(i64, usize)> = pool
        .iter()
        .enumerate()
        .filter(|(i, _)| blocking[*i] < threshold)
        .map(|(i, c)| (rssi_rank_key(candidate_rssi_mw(history, c, params)), i))
        .collect();
    let take = (pool_size / 5).max(1);
    if ranked.len() > take {
        ranked.select_nth_unstable(take - 1);
        ranked.truncate(take);
    }
    ranked.sort_unstable();

    Ok(CandidateSet {
        candidates: ranked.into_iter().map(|(_, i)| pool[i].clone()).collect(),
        threshold_dbm: threshold,
        pool_size,
    })
}

/// A semi-persistent reservation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Reservation {
    /// Next subframe the reservation is used in.
    pub subframe: u64,
    pub subchannels: Range<u32>,
    pub period_ms: u32,
    pub reselection_counter: u32,
}

/// Picks one candidate uniformly and draws a fresh reselection counter.
pub fn select_resource<R: Rng + ?Sized>(
    candidates: &CandidateSet,
    period_ms: u32,
    rng: &mut R,
) -> Result<Reservation, SpsError> {
    if candidates.candidates.is_empty() {
        return Err(SpsError::NoCandidates);
    }
    let pick = &candidates.candidates[rng.random_range(0..candidates.candidates.len())];
    Ok(Reservation {
        subframe: pick.subframe,
        subchannels: pick.subchannels.clone(),
        period_ms,
        reselection_counter: draw_counter(rng),
    })
}

fn draw_counter<R: Rng + ?Sized>(rng: &mut R) -> u32 {
    rng.random_range(RESELECTION_COUNTER_MIN..=RESELECTION_COUNTER_MAX)
}

/// Sidelink control information accompanying each transport block.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Sci {
    pub tx: VehicleId,
    pub subchannels: Range<u32>,
    pub mcs: u32,
    pub period_ms: u32,
    /// Blind retransmissions are not modelled; always false.
    pub retransmission: bool,
}

pub fn build_sci(tx: VehicleId, reservation: &Reservation, mcs: u32) -> Sci {
    Sci {
        tx,
        subchannels: reservation.subchannels.clone(),
        mcs,
        period_ms: reservation.period_ms,
        retransmission: false,
    }
}

/// Decodes an SCI heard at `received_at`. The SCI survives 3 dB below the
/// data threshold of its MCS.
pub fn decode_sci(
    sci: &Sci,
    sinr_db: f64,
    rsrp_dbm: f64,
    received_at: u64,
    link: &LinkAbstraction,
) -> Result<Option<ReservationRecord>, PhyError> {
    if sinr_db < link.sci_threshold_db(sci.mcs)? {
        return Ok(None);
    }
    Ok(Some(ReservationRecord {
        tx: sci.tx,
        received_at,
        period_ms: sci.period_ms,
        subchannels: sci.subchannels.clone(),
        rsrp_dbm,
    }))
}

/// Reservation state of one vehicle.
#[derive(Debug, Clone)]
pub struct SpsState {
    pub reservation: Option<Reservation>,
    keep_probability: f64,
    rng: ChaCha8Rng,
}

impl SpsState {
    pub fn new(keep_probability: f64, rng: ChaCha8Rng) -> Self {
        Self {
            reservation: None,
            keep_probability,
            rng,
        }
    }

    pub fn rng(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }

    /// Books one use of the reservation. Returns `true` when the reservation
    /// was released and a new selection is due.
    pub fn on_transmission(&mut self) -> bool {
        let Some(res) = self.reservation.as_mut() else {
            return false;
        };
        res.subframe += u64::from(res.period_ms);
        res.reselection_counter = res.reselection_counter.saturating_sub(1);
        if res.reselection_counter > 0 {
            return false;
        }
        if self.rng.random::<f64>() < self.keep_probability {
            res.reselection_counter = draw_counter(&mut self.rng);
            false
        } else {
            self.reservation = None;
            true
        }
    }

    /// Moves past an occasion that carried no data.
    pub fn skip_occasion(&mut self) {
        if let Some(res) = self.reservation.as_mut() {
            res.subframe += u64::from(res.period_ms);
        }
    }
}

/// Fixed MAC parameters shared by every vehicle of a run.
#[derive(Debug, Clone, Copy)]
pub struct MacParams {
    pub mcs: u32,
    pub tbs_bits: u32,
    pub needed_subchannels: u32,
    pub n_subchannels: u32,
    pub period_ms: u32,
    pub t1_ms: u32,
    pub t2_ms: u32,
    pub rsrp_threshold_dbm: f64,
    pub headers: HeaderSizes,
}

/// MAC entity of one vehicle.
#[derive(Debug, Clone)]
pub struct VehicleMac {
    pub id: VehicleId,
    pub sps: SpsState,
    pub history: SensingHistory,
    queue: VecDeque<TaggedPacket>,
    pub selections: u64,
    pub grant_overflows: u64,
}

/// What a vehicle puts on the air in one subframe.
#[derive(Debug, Clone, PartialEq)]
pub struct Emission {
    pub tb: TransportBlock,
    pub sci: Sci,
    pub packet: TaggedPacket,
}

impl VehicleMac {
    pub fn new(id: VehicleId, sps: SpsState, history: SensingHistory) -> Self {
        Self {
            id,
            sps,
            history,
            queue: VecDeque::new(),
            selections: 0,
            grant_overflows: 0,
        }
    }

    pub fn queue_len(&self) -> usize {
        self.queue.len()
    }

    /// Selects a fresh reservation in `[now + t1, now + t2]`.
    pub fn reselect(&mut self, now: u64, params: &MacParams) -> Result<(), SpsError> {
        let window = SelectionWindow::after(now, params.t1_ms, params.t2_ms);
        let sense_params = SenseParams {
            now,
            needed_subchannels: params.needed_subchannels,
            n_subchannels: params.n_subchannels,
            rsrp_threshold_dbm: params.rsrp_threshold_dbm,
            rssi_period_ms: params.period_ms,
        };
        let set = sense(&self.history, window, &sense_params)?;
        let reservation = select_resource(&set, params.period_ms, self.sps.rng())?;
        self.sps.reservation = Some(reservation);
        self.selections += 1;
        Ok(())
    }

    /// Queues an RLC PDU; triggers resource selection if none is held.
    pub fn enqueue(&mut self, pdu: TaggedPacket, now: u64, params: &MacParams) -> Result<(), SpsError> {
        self.queue.push_back(pdu);
        if self.sps.reservation.is_none() {
            self.reselect(now, params)?;
        }
        Ok(())
    }

    /// Runs the MAC for subframe `t`, emitting at most one transport block.
    pub fn on_subframe(
        &mut self,
        t: u64,
        tx_stack: &mut TxStack,
        params: &MacParams,
    ) -> Result<Option<Emission>, SpsError> {
        let Some(res) = self.sps.reservation.clone() else {
            return Ok(None);
        };
        if res.subframe != t {
            return Ok(None);
        }
        let Some(pdu) = self.queue.pop_front() else {
            self.sps.skip_occasion();
            return Ok(None);
        };

        let pdu = tx_stack
            .encapsulate(Layer::Mac, pdu, &params.headers, t)
            .expect("queued packets are RLC PDUs");
        let payload_bits = pdu.size_bytes * 8;
        if payload_bits > params.tbs_bits {
            self.grant_overflows += 1;
            self.sps.skip_occasion();
            return Ok(None);
        }

        let sci = build_sci(self.id, &res, params.mcs);
        let tb = TransportBlock {
            tx: self.id,
            subframe: t,
            subchannels: res.subchannels.clone(),
            mcs: params.mcs,
            payload_bits,
            padding_bits: params.tbs_bits - payload_bits,
        };
        if self.sps.on_transmission() && !self.queue.is_empty() {
            self.reselect(t, params)?;
        }
        Ok(Some(Emission {
            tb,
            sci,
            packet: pdu,
        }))
    }
}
