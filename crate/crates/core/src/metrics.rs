//! Delivery records and the figures of merit derived from them.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use thiserror::Error;

use crate::stack::{Layer, PacketDelays};
use crate::VehicleId;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum MetricsError {
    #[error("no packets were sent from {src} to {rx}")]
    NoTransmissions { src: VehicleId, rx: VehicleId },
}

/// Counters of one (transmitter, receiver) pair.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LinkStats {
    /// Application packets generated for this receiver.
    pub tx_count: u64,
    /// Packets delivered up to the application.
    pub rx_count: u64,
    pub deliveries: Vec<PacketDelays>,
    /// Bits delivered at each layer, indexed by [`Layer::index`].
    pub bits: [u64; 6],
}

impl LinkStats {
    /// Deliveries whose application delay is at most `max_latency_ms`.
    pub fn delivered_within(&self, max_latency_ms: u64) -> u64 {
        self.deliveries
            .iter()
            .filter(|d| d.delays_ms[Layer::App.index()] <= max_latency_ms)
            .count() as u64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Level {
    L1L2,
    L3L5,
}

impl Level {
    pub fn name(self) -> &'static str {
        match self {
            Level::L1L2 => "L1-L2",
            Level::L3L5 => "L3-L5",
        }
    }
}

/// Reliability and latency a platoon must sustain at an automation level.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LevelRequirement {
    pub level: Level,
    pub min_reliability: f64,
    pub max_latency_ms: u64,
    pub min_length: u32,
}

impl LevelRequirement {
    pub const L1_L2: LevelRequirement = LevelRequirement {
        level: Level::L1L2,
        min_reliability: 0.90,
        max_latency_ms: 25,
        min_length: 5,
    };
    pub const L3_L5: LevelRequirement = LevelRequirement {
        level: Level::L3L5,
        min_reliability: 0.9999,
        max_latency_ms: 10,
        min_length: 5,
    };
    pub const ALL: [LevelRequirement; 2] = [Self::L1_L2, Self::L3_L5];

    /// Whether a platoon of `length` vehicles is long enough for the level.
    pub fn is_met_by(&self, length: u32) -> bool {
        length >= self.min_length
    }
}

/// Delay and throughput seen by one receiver at one layer.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LayerProfile {
    pub layer: Layer,
    pub mean_delay_ms: f64,
    pub p95_delay_ms: f64,
    pub throughput_kbps: f64,
}

/// Everything recorded during one run.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsStore {
    pub config_hash: String,
    pub seed: u64,
    pub n_vehicles: u32,
    /// Traffic window the throughput is averaged over.
    pub sim_time_ms: u64,
    links: BTreeMap<(VehicleId, VehicleId), LinkStats>,
    /// Packets dropped at the MAC because they did not fit the grant.
    pub grant_overflows: u64,
    /// Transmissions that landed on RBs already used in the same subframe.
    pub collisions: u64,
    pub resource_selections: u64,
}

fn p95(sorted: &[u64]) -> u64 {
    let rank = (sorted.len() * 95).div_ceil(100).max(1);
    sorted[rank - 1]
}

impl MetricsStore {
    pub fn new(config_hash: impl Into<String>, seed: u64, n_vehicles: u32, sim_time_ms: u64) -> Self {
        Self {
            config_hash: config_hash.into(),
            seed,
            n_vehicles,
            sim_time_ms,
            links: BTreeMap::new(),
            grant_overflows: 0,
            collisions: 0,
            resource_selections: 0,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.links.is_empty()
    }

    pub fn record_tx(&mut self, src: VehicleId, rx: VehicleId) {
        self.links.entry((src, rx)).or_default().tx_count += 1;
    }

    /// Records a packet delivered at the receiver's application together
    /// with the bits it occupied at each layer.
    pub fn record_delivery(&mut self, src: VehicleId, rx: VehicleId, delays: PacketDelays, bits: [u64; 6]) {
        let link = self.links.entry((src, rx)).or_default();
        link.rx_count += 1;
        link.deliveries.push(delays);
        for (acc, b) in link.bits.iter_mut().zip(bits) {
            *acc += b;
        }
    }

    pub fn link(&self, src: VehicleId, rx: VehicleId) -> Option<&LinkStats> {
        self.links.get(&(src, rx))
    }

    pub fn links(&self) -> impl Iterator<Item = (&(VehicleId, VehicleId), &LinkStats)> {
        self.links.iter()
    }

    pub fn followers(&self) -> impl Iterator<Item = VehicleId> {
        (2..=self.n_vehicles).map(VehicleId::new)
    }

    fn leader_link(&self, rx: VehicleId) -> Result<&LinkStats, MetricsError> {
        let src = VehicleId::new(1);
        self.link(src, rx)
            .filter(|l| l.tx_count > 0)
            .ok_or(MetricsError::NoTransmissions { src, rx })
    }

    /// Raw delivery ratio of the leader's packets at `vehicle`.
    pub fn pdr(&self, vehicle: VehicleId) -> Result<f64, MetricsError> {
        let link = self.leader_link(vehicle)?;
        Ok(link.rx_count as f64 / link.tx_count as f64)
    }

    /// Delivery ratio counting only packets that reached the application
    /// within `max_latency_ms`.
    pub fn pdr_within(&self, vehicle: VehicleId, max_latency_ms: u64) -> Result<f64, MetricsError> {
        let link = self.leader_link(vehicle)?;
        Ok(link.delivered_within(max_latency_ms) as f64 / link.tx_count as f64)
    }

    /// Leader plus the unbroken run of followers, starting behind the
    /// leader, whose latency-gated PDR meets `req`.
    pub fn platoon_length(&self, req: &LevelRequirement) -> u32 {
        let compliant = self
            .followers()
            .take_while(|&v| {
                self.pdr_within(v, req.max_latency_ms)
                    .is_ok_and(|p| p >= req.min_reliability)
            })
            .count();
        1 + compliant as u32
    }

    /// Per-layer profile over every packet delivered to `vehicle`, in stack
    /// order from the application down. Empty when nothing was delivered.
    pub fn layer_profile(&self, vehicle: VehicleId) -> Vec<LayerProfile> {
        let incoming: Vec<&LinkStats> = self
            .links
            .iter()
            .filter(|((_, rx), _)| *rx == vehicle)
            .map(|(_, l)| l)
            .collect();
        let n: usize = incoming.iter().map(|l| l.deliveries.len()).sum();
        if n == 0 {
            return Vec::new();
        }
        Layer::ALL
            .into_iter()
            .map(|layer| {
                let i = layer.index();
                let mut delays: Vec<u64> = incoming
                    .iter()
                    .flat_map(|l| l.deliveries.iter().map(move |d| d.delays_ms[i]))
                    .collect();
                delays.sort_unstable();
                let bits: u64 = incoming.iter().map(|l| l.bits[i]).sum();
                LayerProfile {
                    layer,
                    mean_delay_ms: delays.iter().sum::<u64>() as f64 / n as f64,
                    p95_delay_ms: p95(&delays) as f64,
                    throughput_kbps: bits as f64 / self.sim_time_ms as f64,
                }
            })
            .collect()
    }

    /// Canonical text form of the whole store.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "config_hash {}", self.config_hash);
        let _ = writeln!(out, "seed {}", self.seed);
        let _ = writeln!(out, "n_vehicles {}", self.n_vehicles);
        let _ = writeln!(out, "sim_time_ms {}", self.sim_time_ms);
        let _ = writeln!(out, "grant_overflows {}", self.grant_overflows);
        let _ = writeln!(out, "collisions {}", self.collisions);
        let _ = writeln!(out, "resource_selections {}", self.resource_selections);
        for ((src, rx), link) in &self.links {
            let _ = writeln!(
                out,
                "link {src} {rx} tx {} rx {} bits {:?}",
                link.tx_count, link.rx_count, link.bits
            );
            for d in &link.deliveries {
                let _ = writeln!(out, "  {} {:?}", d.app_seq, d.delays_ms);
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(n: u32) -> VehicleId {
        VehicleId::new(n)
    }

    fn delays(seq: u64, app: u64) -> PacketDelays {
        PacketDelays {
            app_seq: seq,
            delays_ms: [app, app, app, app, app, 1],
        }
    }

    /// Store where follower `i` got `rx[i]` of 100 packets, all 1 ms late.
    fn store_with(rx: &[u64]) -> MetricsStore {
        let mut s = MetricsStore::new("h", 1, rx.len() as u32 + 1, 2000);
        for (i, &n) in rx.iter().enumerate() {
            let f = v(i as u32 + 2);
            for seq in 0..100 {
                s.record_tx(v(1), f);
                if seq < n {
                    s.record_delivery(v(1), f, delays(seq, 1), [0; 6]);
                }
            }
        }
        s
    }

    #[test]
    fn pdr_ratios() {
        let mut s = MetricsStore::new("h", 1, 3, 200);
        for i in 0..10 {
            s.record_tx(v(1), v(2));
            if i < 9 {
                s.record_delivery(v(1), v(2), delays(i, 1), [0; 6]);
            }
        }
        assert_eq!(s.pdr(v(2)), Ok(0.9));
        assert_eq!(
            s.pdr(v(3)),
            Err(MetricsError::NoTransmissions { src: v(1), rx: v(3) })
        );
    }

    #[test]
    fn platoon_length_stops_at_first_failure() {
        let s = store_with(&[95, 93, 91, 90, 85, 92, 80, 75]);
        assert_eq!(s.platoon_length(&LevelRequirement::L1_L2), 5);
        assert_eq!(store_with(&[100; 8]).platoon_length(&LevelRequirement::L3_L5), 9);
        assert_eq!(store_with(&[50; 8]).platoon_length(&LevelRequirement::L1_L2), 1);
    }

    #[test]
    fn late_packets_count_as_lost() {
        let mut s = MetricsStore::new("h", 1, 2, 200);
        for seq in 0..10 {
            s.record_tx(v(1), v(2));
            s.record_delivery(v(1), v(2), delays(seq, if seq < 9 { 10 } else { 11 }), [0; 6]);
        }
        assert_eq!(s.pdr(v(2)), Ok(1.0));
        assert_eq!(s.pdr_within(v(2), 10), Ok(0.9));
        assert_eq!(s.platoon_length(&LevelRequirement::L3_L5), 1);
        assert_eq!(s.platoon_length(&LevelRequirement::L1_L2), 2);
    }

    #[test]
    fn throughput_per_layer() {
        let mut s = MetricsStore::new("h", 1, 2, 45_000);
        let bits = [576, 640, 800, 816, 824, 1866];
        for seq in 0..2250 {
            s.record_tx(v(1), v(2));
            s.record_delivery(v(1), v(2), delays(seq, 1), bits);
        }
        let p = s.layer_profile(v(2));
        assert_eq!(p.len(), 6);
        assert_eq!(p[Layer::App.index()].throughput_kbps, 28.8);
        assert_eq!(p[Layer::Network.index()].throughput_kbps, 40.0);
        assert!(p.iter().all(|l| l.mean_delay_ms == 1.0));
        assert!(s.layer_profile(v(1)).is_empty());
    }

    #[test]
    fn p95_nearest_rank() {
        let d: Vec<u64> = (1..=100).collect();
        assert_eq!(p95(&d), 95);
        assert_eq!(p95(&[7]), 7);
        assert_eq!(p95(&[1, 2]), 2);
    }

    #[test]
    fn dump_is_stable() {
        let s = store_with(&[3, 2]);
        assert_eq!(s.dump(), s.clone().dump());
        assert!(s.dump().contains("link V1 V3 tx 100 rx 2"));
    }
}
