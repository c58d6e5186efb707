//! One scenario run: the event loop wiring traffic, MAC, radio and the
//! receive chain together.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::channel::{dbm_to_mw, rx_power_dbm, sinr_db, ChannelError, Pathloss, ShadowingField};
use crate::config::{ConfigError, ScenarioConfig, TrafficPattern};
use crate::engine::{EngineError, Scheduler};
use crate::mac_sps::{decode_sci, Emission, MacParams, SensingHistory, SpsError, SpsState, VehicleMac};
use crate::metrics::MetricsStore;
use crate::mobility::{Mobility, MobilityError};
use crate::phy::{LinkAbstraction, PhyError, ResourceGrid};
use crate::stack::{rx_chain, HeaderSizes, Layer, RlcRxOutput, RlcUmRx, StackError, TaggedPacket, TxStack};
use crate::{rng_stream, sha256_hex, VehicleId};

/// Air-interface latency: a block sent in subframe `t` is decoded at `t + 1`.
pub const AIR_DELAY_MS: u64 = 1;

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Mobility(#[from] MobilityError),
    #[error(transparent)]
    Channel(#[from] ChannelError),
    #[error(transparent)]
    Phy(#[from] PhyError),
    #[error(transparent)]
    Sps(#[from] SpsError),
    #[error(transparent)]
    Stack(#[from] StackError),
}

#[derive(Debug, Clone, PartialEq)]
pub enum EventKind {
    AppArrival { vehicle: VehicleId },
    SubframeTick,
    ShadowBlock,
    RlcTimer { rx: VehicleId, tx: VehicleId, id: u64 },
    /// A decoded transport block reaching the receiver's MAC.
    PhyRx { rx: VehicleId, packet: TaggedPacket },
    SimEnd,
}

/// State of one run.
pub struct Simulation {
    cfg: ScenarioConfig,
    scheduler: Scheduler<EventKind>,
    mobility: Mobility,
    shadowing: ShadowingField,
    pathloss: Pathloss,
    link: LinkAbstraction,
    grid: ResourceGrid,
    headers: HeaderSizes,
    params: MacParams,
    tx_stacks: Vec<TxStack>,
    macs: Vec<VehicleMac>,
    // indexed rx * n + tx
    rlc_rx: Vec<RlcUmRx>,
    phy_rngs: Vec<ChaCha8Rng>,
    metrics: MetricsStore,
    events_processed: u64,
    ended: bool,
}

impl Simulation {
    /// Builds a run with an empty event queue; see [`Simulation::bootstrap`].
    pub fn new(cfg: &ScenarioConfig) -> Result<Self, SimError> {
        cfg.validate()?;
        let n = cfg.n_vehicles as usize;
        let seed = cfg.seed;
        let grid = ResourceGrid::build(cfg)?;
        let link = LinkAbstraction::from_config(cfg);
        let headers = HeaderSizes::from_config(cfg);
        let params = MacParams {
            mcs: cfg.mcs,
            tbs_bits: link.tbs.tbs_bits(cfg.mcs, cfg.n_rbs)?,
            needed_subchannels: grid.subchannels_for(cfg.n_rbs),
            n_subchannels: grid.n_subchannels(),
            period_ms: cfg.app_interval_ms,
            t1_ms: cfg.sps_t1_ms,
            t2_ms: cfg.selection_window_end_ms(),
            rsrp_threshold_dbm: cfg.sps_rsrp_threshold_dbm,
            headers,
        };
        let macs = (0..n)
            .map(|i| {
                let id = VehicleId::from_index(i);
                VehicleMac::new(
                    id,
                    SpsState::new(cfg.sps_keep_probability, rng_stream(seed, &format!("sps:{id}"))),
                    SensingHistory::new(cfg.sps_sensing_window_ms, grid.n_subchannels(), cfg.noise_dbm),
                )
            })
            .collect();
        Ok(Self {
            scheduler: Scheduler::new(),
            mobility: Mobility::from_config(cfg)?,
            shadowing: ShadowingField::new(cfg, seed),
            pathloss: Pathloss::from_config(cfg),
            link,
            grid,
            headers,
            params,
            tx_stacks: vec![TxStack::new(); n],
            macs,
            rlc_rx: vec![RlcUmRx::new(cfg.t_reordering_ms); n * n],
            phy_rngs: (0..n)
                .map(|i| rng_stream(seed, &format!("phy:{}", VehicleId::from_index(i))))
                .collect(),
            metrics: MetricsStore::new(sha256_hex(cfg.render().as_bytes()), seed, cfg.n_vehicles, cfg.sim_time_ms),
            events_processed: 0,
            ended: false,
            cfg: cfg.clone(),
        })
    }

    /// Last time the engine runs: the traffic window plus the drain period.
    pub fn stop_time_ms(&self) -> u64 {
        self.cfg.sim_time_ms + self.cfg.drain_ms()
    }

    pub fn events_processed(&self) -> u64 {
        self.events_processed
    }

    pub fn metrics(&self) -> &MetricsStore {
        &self.metrics
    }

    pub fn into_metrics(self) -> MetricsStore {
        self.metrics
    }

    pub fn macs(&self) -> &[VehicleMac] {
        &self.macs
    }

    fn senders(&self) -> Vec<VehicleId> {
        match self.cfg.traffic_pattern {
            TrafficPattern::LeaderBroadcast => vec![VehicleId::new(1)],
            TrafficPattern::AllBroadcast => (0..self.n()).map(VehicleId::from_index).collect(),
        }
    }

    fn n(&self) -> usize {
        self.cfg.n_vehicles as usize
    }

    /// Queues the initial events: the first shadowing block, each sender's
    /// first packet, the first subframe and the end marker.
    pub fn bootstrap(&mut self) -> Result<(), SimError> {
        let s = &mut self.scheduler;
        s.schedule(0, EventKind::ShadowBlock)?;
        let interval = u64::from(self.cfg.app_interval_ms);
        for v in self.senders() {
            let offset = if v.is_leader() {
                0
            } else {
                rng_stream(self.cfg.seed, &format!("app:{v}")).random_range(0..interval)
            };
            if offset < self.cfg.sim_time_ms {
                self.scheduler.schedule(offset, EventKind::AppArrival { vehicle: v })?;
            }
        }
        self.scheduler.schedule(0, EventKind::SubframeTick)?;
        let stop = self.stop_time_ms();
        self.scheduler.schedule(stop, EventKind::SimEnd)?;
        Ok(())
    }

    /// Processes every event due at or before `t_end`.
    pub fn run_until(&mut self, t_end: u64) -> Result<&MetricsStore, SimError> {
        while !self.ended {
            let Some(event) = self.scheduler.pop_until(t_end) else {
                break;
            };
            self.events_processed += 1;
            let t = event.time_ms;
            match event.kind {
                EventKind::AppArrival { vehicle } => self.on_app_arrival(vehicle, t)?,
                EventKind::SubframeTick => self.on_tick(t)?,
                EventKind::ShadowBlock => self.on_shadow_block(t)?,
                EventKind::RlcTimer { rx, tx, id } => {
                    if let Some(out) = self.rlc(rx, tx).on_timer(id, t) {
                        self.deliver(rx, tx, out, t)?;
                    }
                }
                EventKind::PhyRx { rx, packet } => {
                    let tx = packet.src;
                    let out = self.rlc(rx, tx).receive(packet, t);
                    self.deliver(rx, tx, out, t)?;
                }
                EventKind::SimEnd => self.ended = true,
            }
        }
        Ok(&self.metrics)
    }

    fn rlc(&mut self, rx: VehicleId, tx: VehicleId) -> &mut RlcUmRx {
        let n = self.n();
        &mut self.rlc_rx[rx.index() * n + tx.index()]
    }

    fn positions(&self, t: u64) -> Result<Vec<f64>, SimError> {
        (0..self.n())
            .map(|i| Ok(self.mobility.position(VehicleId::from_index(i), t)?))
            .collect()
    }

    fn on_shadow_block(&mut self, t: u64) -> Result<(), SimError> {
        let positions = self.positions(t)?;
        if t == 0 {
            self.shadowing.initialize(&positions);
        } else {
            self.shadowing.advance_block(&positions)?;
        }
        let next = t + self.cfg.shadow_block_ms;
        if next <= self.stop_time_ms() {
            self.scheduler.schedule(next, EventKind::ShadowBlock)?;
        }
        Ok(())
    }

    fn on_app_arrival(&mut self, v: VehicleId, t: u64) -> Result<(), SimError> {
        let pdu = self.tx_stacks[v.index()].send_to_rlc(v, self.cfg.app_packet_bytes, &self.headers, t)?;
        for i in 0..self.n() {
            let rx = VehicleId::from_index(i);
            if rx != v {
                self.metrics.record_tx(v, rx);
            }
        }
        let mac = &mut self.macs[v.index()];
        let before = mac.selections;
        mac.enqueue(pdu, t, &self.params)?;
        self.metrics.resource_selections += mac.selections - before;

        let next = t + u64::from(self.cfg.app_interval_ms);
        if next < self.cfg.sim_time_ms {
            self.scheduler.schedule(next, EventKind::AppArrival { vehicle: v })?;
        }
        Ok(())
    }

    fn on_tick(&mut self, t: u64) -> Result<(), SimError> {
        let n = self.n();
        let mut emissions: Vec<Emission> = Vec::new();
        for i in 0..n {
            let mac = &mut self.macs[i];
            let (before_sel, before_over) = (mac.selections, mac.grant_overflows);
            if let Some(e) = mac.on_subframe(t, &mut self.tx_stacks[i], &self.params)? {
                emissions.push(e);
            }
            self.metrics.resource_selections += mac.selections - before_sel;
            self.metrics.grant_overflows += mac.grant_overflows - before_over;
        }

        for e in &emissions {
            match self.grid.occupy(t, e.tb.tx, e.tb.subchannels.clone()) {
                Ok(()) => {}
                Err(PhyError::DoubleBooked { .. }) => self.metrics.collisions += 1,
                Err(other) => return Err(other.into()),
            }
        }

        let mut transmitting = vec![false; n];
        for e in &emissions {
            transmitting[e.tb.tx.index()] = true;
        }

        if !emissions.is_empty() {
            // rx_dbm[e][r]: power of emission e at vehicle r
            let mut rx_dbm = vec![vec![f64::NEG_INFINITY; n]; emissions.len()];
            for (k, e) in emissions.iter().enumerate() {
                for (r, slot) in rx_dbm[k].iter_mut().enumerate() {
                    let rv = VehicleId::from_index(r);
                    if rv == e.tb.tx {
                        continue;
                    }
                    let d = self.mobility.pair_distance(e.tb.tx, rv, t)?;
                    *slot = rx_power_dbm(
                        self.cfg.tx_power_dbm,
                        self.pathloss.loss_db(d),
                        self.shadowing.shadow_db(e.tb.tx, rv),
                    );
                }
            }

            for (k, e) in emissions.iter().enumerate() {
                for r in 0..n {
                    let rv = VehicleId::from_index(r);
                    if rv == e.tb.tx {
                        continue;
                    }
                    let interferers: Vec<f64> = emissions
                        .iter()
                        .enumerate()
                        .filter(|(j, o)| {
                            *j != k
                                && o.tb.tx != rv
                                && o.tb.subchannels.start < e.tb.subchannels.end
                                && e.tb.subchannels.start < o.tb.subchannels.end
                        })
                        .map(|(j, _)| rx_dbm[j][r])
                        .collect();
                    let sinr = sinr_db(rx_dbm[k][r], &interferers, self.cfg.noise_dbm);
                    let ok = self
                        .link
                        .decode(&e.tb, sinr, transmitting[r], &mut self.phy_rngs[r])?;
                    if transmitting[r] {
                        continue;
                    }
                    if let Some(record) = decode_sci(&e.sci, sinr, rx_dbm[k][r], t, &self.link)? {
                        self.macs[r].history.record_reservation(record);
                    }
                    if ok {
                        self.scheduler.schedule(
                            t + AIR_DELAY_MS,
                            EventKind::PhyRx {
                                rx: rv,
                                packet: e.packet.clone(),
                            },
                        )?;
                    }
                }
            }
            self.record_sensing(t, &emissions, &rx_dbm, &transmitting);
        } else {
            let idle = vec![dbm_to_mw(self.cfg.noise_dbm); self.params.n_subchannels as usize];
            for mac in &mut self.macs {
                mac.history.record_rssi(t, idle.clone());
            }
        }

        self.grid.release_before(t);
        if t < self.stop_time_ms() {
            self.scheduler.schedule(t + 1, EventKind::SubframeTick)?;
        }
        Ok(())
    }

    fn record_sensing(&mut self, t: u64, emissions: &[Emission], rx_dbm: &[Vec<f64>], transmitting: &[bool]) {
        let noise_mw = dbm_to_mw(self.cfg.noise_dbm);
        let n_sc = self.params.n_subchannels as usize;
        for (r, mac) in self.macs.iter_mut().enumerate() {
            if transmitting[r] {
                mac.history.record_unsensed(t);
                continue;
            }
            let mut rssi = vec![noise_mw; n_sc];
            for (k, e) in emissions.iter().enumerate() {
                let p = dbm_to_mw(rx_dbm[k][r]);
                for j in e.tb.subchannels.clone() {
                    rssi[j as usize] += p;
                }
            }
            mac.history.record_rssi(t, rssi);
        }
    }

    fn deliver(&mut self, rx: VehicleId, tx: VehicleId, out: RlcRxOutput, t: u64) -> Result<(), SimError> {
        if let Some((deadline, id)) = out.timer_started {
            self.scheduler.schedule(deadline, EventKind::RlcTimer { rx, tx, id })?;
        }
        for pkt in out.delivered {
            let mac_tx = pkt.mac_tx_ms.expect("delivered packets went through the MAC");
            let delays = rx_chain(&pkt, mac_tx + AIR_DELAY_MS, t);
            let mut bits = [0u64; 6];
            for layer in Layer::ALL {
                bits[layer.index()] = match layer {
                    Layer::Mac => u64::from(self.params.tbs_bits),
                    _ => u64::from(self.headers.pdu_bytes(layer, pkt.payload_bytes)) * 8,
                };
            }
            self.metrics.record_delivery(tx, rx, delays, bits);
        }
        Ok(())
    }
}

/// Runs a scenario from start to finish.
pub fn run_scenario(cfg: &ScenarioConfig) -> Result<MetricsStore, SimError> {
    let mut sim = Simulation::new(cfg)?;
    sim.bootstrap()?;
    let stop = sim.stop_time_ms();
    sim.run_until(stop)?;
    Ok(sim.into_metrics())
}

/// Mean received power (dBm) of the leader at `rx` without shadowing, at
/// time 0. Handy for calibrating range-limited scenarios.
pub fn leader_rx_power_dbm(cfg: &ScenarioConfig, rx: VehicleId) -> Result<f64, SimError> {
    let mobility = Mobility::from_config(cfg)?;
    let d = mobility.pair_distance(VehicleId::new(1), rx, 0)?;
    Ok(rx_power_dbm(cfg.tx_power_dbm, Pathloss::from_config(cfg).loss_db(d), 0.0))
}

/// Decoding margin (dB) of the leader's data at `rx` without shadowing.
pub fn leader_margin_db(cfg: &ScenarioConfig, rx: VehicleId) -> Result<f64, SimError> {
    let snr = leader_rx_power_dbm(cfg, rx)? - cfg.noise_dbm;
    let threshold = LinkAbstraction::from_config(cfg).threshold_db(cfg.mcs)?;
    Ok(snr - threshold)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::default_scenario;

    fn short(sim_time_ms: u64) -> ScenarioConfig {
        ScenarioConfig {
            sim_time_ms,
            ..default_scenario()
        }
    }

    #[test]
    fn empty_queue_yields_empty_store() {
        let mut sim = Simulation::new(&default_scenario()).unwrap();
        let store = sim.run_until(45_000).unwrap();
        assert!(store.is_empty());
        assert_eq!(sim.events_processed(), 0);
    }

    #[test]
    fn leader_packet_count() {
        let store = run_scenario(&short(2_000)).unwrap();
        let link = store.link(VehicleId::new(1), VehicleId::new(2)).unwrap();
        assert_eq!(link.tx_count, 100);
    }

    #[test]
    fn only_leader_emits_under_leader_broadcast() {
        let mut sim = Simulation::new(&short(2_000)).unwrap();
        sim.bootstrap().unwrap();
        let stop = sim.stop_time_ms();
        sim.run_until(stop).unwrap();
        assert!(sim.macs()[0].selections > 0);
        assert!(sim.macs()[1..].iter().all(|m| m.selections == 0));
        let store = sim.metrics();
        for ((src, _), _) in store.links() {
            assert!(src.is_leader());
        }
    }

    #[test]
    fn close_platoon_delivers_everything() {
        let store = run_scenario(&short(2_000)).unwrap();
        for v in store.followers() {
            assert_eq!(store.pdr(v), Ok(1.0));
        }
        let profile = store.layer_profile(VehicleId::new(2));
        assert_eq!(profile.len(), 6);
    }

    #[test]
    fn identical_runs_match() {
        let cfg = ScenarioConfig {
            traffic_pattern: TrafficPattern::AllBroadcast,
            ..short(1_000)
        };
        let a = run_scenario(&cfg).unwrap();
        let b = run_scenario(&cfg).unwrap();
        assert_eq!(a.dump(), b.dump());
        assert!(a.resource_selections >= 9);
    }

    #[test]
    fn far_vehicles_lose_packets() {
        let cfg = ScenarioConfig {
            tx_power_dbm: -60.0,
            shadowing_enabled: false,
            ..short(1_000)
        };
        let store = run_scenario(&cfg).unwrap();
        assert_eq!(store.pdr(VehicleId::new(9)), Ok(0.0));
    }
}
