//! Layered transmit/receive pipeline: APP, transport, network, PDCP, RLC-UM
//! and MAC.
//!
//! Every layer the packet enters on the transmit side stamps its entry time
//! into the packet (tags T1 to T5 for APP through RLC, plus the MAC emission
//! time). On the receive side the delay seen at a layer is the time the packet
//! crosses that layer upward minus the matching tag.

use std::collections::BTreeMap;
use std::fmt;

use thiserror::Error;

use crate::config::ScenarioConfig;
use crate::VehicleId;

/// RLC UM sequence numbers are 5 bits wide.
pub const RLC_SN_MODULUS: u16 = 32;
/// Reordering window, half the SN space.
pub const RLC_UM_WINDOW: u16 = RLC_SN_MODULUS / 2;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum StackError {
    #[error("application payload must be at least one byte")]
    EmptyPayload,
    #[error("cannot encapsulate into {next} after {current}")]
    OutOfOrder { current: Layer, next: Layer },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Layer {
    App,
    Transport,
    Network,
    Pdcp,
    Rlc,
    Mac,
}

impl Layer {
    /// Bottom-up order is the reverse; this is the order packets are built in.
    pub const ALL: [Layer; 6] = [
        Layer::App,
        Layer::Transport,
        Layer::Network,
        Layer::Pdcp,
        Layer::Rlc,
        Layer::Mac,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Layer::App => "app",
            Layer::Transport => "transport",
            Layer::Network => "network",
            Layer::Pdcp => "pdcp",
            Layer::Rlc => "rlc",
            Layer::Mac => "mac",
        }
    }

    pub fn from_name(name: &str) -> Option<Layer> {
        Layer::ALL.into_iter().find(|l| l.name() == name)
    }

    fn next(self) -> Option<Layer> {
        Layer::ALL.get(self.index() + 1).copied()
    }
}

impl fmt::Display for Layer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Header bytes each layer adds below the application.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HeaderSizes {
    pub transport: u32,
    pub network: u32,
    pub pdcp: u32,
    pub rlc: u32,
    pub mac: u32,
}

impl Default for HeaderSizes {
    fn default() -> Self {
        Self {
            transport: 8,
            network: 20,
            pdcp: 2,
            rlc: 1,
            mac: 2,
        }
    }
}

impl HeaderSizes {
    pub fn from_config(cfg: &ScenarioConfig) -> Self {
        Self {
            transport: cfg.hdr_transport_bytes,
            network: cfg.hdr_network_bytes,
            pdcp: cfg.hdr_pdcp_bytes,
            rlc: cfg.hdr_rlc_bytes,
            mac: cfg.hdr_mac_bytes,
        }
    }

    pub fn header(&self, layer: Layer) -> u32 {
        match layer {
            Layer::App => 0,
            Layer::Transport => self.transport,
            Layer::Network => self.network,
            Layer::Pdcp => self.pdcp,
            Layer::Rlc => self.rlc,
            Layer::Mac => self.mac,
        }
    }

    /// PDU size at `layer` for an application payload of `payload` bytes.
    pub fn pdu_bytes(&self, layer: Layer, payload: u32) -> u32 {
        payload
            + Layer::ALL[1..=layer.index()]
                .iter()
                .map(|&l| self.header(l))
                .sum::<u32>()
    }

    pub fn total(&self) -> u32 {
        self.pdu_bytes(Layer::Mac, 0)
    }
}

/// An application packet travelling through the stack.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TaggedPacket {
    pub app_seq: u64,
    pub src: VehicleId,
    pub payload_bytes: u32,
    /// Bytes of the PDU at the outermost layer reached so far.
    pub size_bytes: u32,
    /// Outermost layer reached so far.
    pub layer: Layer,
    /// Entry times T1..T5 (APP, transport, network, PDCP, RLC).
    pub tags: [u64; 5],
    /// Emission subframe, set when the MAC sends the packet.
    pub mac_tx_ms: Option<u64>,
    pub rlc_sn: Option<u16>,
}

impl TaggedPacket {
    pub fn tag(&self, layer: Layer) -> Option<u64> {
        match layer {
            Layer::Mac => self.mac_tx_ms,
            other if other <= self.layer => Some(self.tags[other.index()]),
            _ => None,
        }
    }
}

/// Per-transmitter sending side: application sequence numbers and the RLC
/// SN counter.
#[derive(Debug, Clone, Default)]
pub struct TxStack {
    next_app_seq: u64,
    next_rlc_sn: u16,
}

impl TxStack {
    pub fn new() -> Self {
        Self::default()
    }

    /// Creates an application packet with T1 = `t`.
    pub fn app_send(&mut self, src: VehicleId, payload_bytes: u32, t: u64) -> Result<TaggedPacket, StackError> {
        if payload_bytes == 0 {
            return Err(StackError::EmptyPayload);
        }
        let seq = self.next_app_seq;
        self.next_app_seq += 1;
        Ok(TaggedPacket {
            app_seq: seq,
            src,
            payload_bytes,
            size_bytes: payload_bytes,
            layer: Layer::App,
            tags: [t; 5],
            mac_tx_ms: None,
            rlc_sn: None,
        })
    }

    /// Pushes a packet one layer down, adding that layer's header and tag.
    /// Entering RLC assigns the next 5-bit SN.
    pub fn encapsulate(
        &mut self,
        layer: Layer,
        mut sdu: TaggedPacket,
        headers: &HeaderSizes,
        t: u64,
    ) -> Result<TaggedPacket, StackError> {
        if sdu.layer.next() != Some(layer) {
            return Err(StackError::OutOfOrder {
                current: sdu.layer,
                next: layer,
            });
        }
        sdu.size_bytes += headers.header(layer);
        sdu.layer = layer;
        match layer {
            Layer::Mac => sdu.mac_tx_ms = Some(t),
            _ => sdu.tags[layer.index()] = t,
        }
        if layer == Layer::Rlc {
            sdu.rlc_sn = Some(self.next_rlc_sn);
            self.next_rlc_sn = (self.next_rlc_sn + 1) % RLC_SN_MODULUS;
        }
        Ok(sdu)
    }

    /// APP send followed by encapsulation down to RLC, all at time `t`.
    pub fn send_to_rlc(
        &mut self,
        src: VehicleId,
        payload_bytes: u32,
        headers: &HeaderSizes,
        t: u64,
    ) -> Result<TaggedPacket, StackError> {
        let mut pkt = self.app_send(src, payload_bytes, t)?;
        for layer in [Layer::Transport, Layer::Network, Layer::Pdcp, Layer::Rlc] {
            pkt = self.encapsulate(layer, pkt, headers, t)?;
        }
        Ok(pkt)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Timer {
    deadline: u64,
    id: u64,
}

/// Output of one RLC receive step.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RlcRxOutput {
    /// SDUs handed to PDCP, in SN order.
    pub delivered: Vec<TaggedPacket>,
    /// SNs given up on.
    pub lost: Vec<u16>,
    /// `(deadline, timer id)` of a newly started t-Reordering.
    pub timer_started: Option<(u64, u64)>,
}

/// RLC UM receiving entity for one (transmitter, receiver) pair.
///
/// Follows the UM reordering procedure: `ur` is the earliest SN still
/// awaited, `uh` is one past the highest SN received, and `ux` is the value
/// of `uh` when t-Reordering was started.
#[derive(Debug, Clone)]
pub struct RlcUmRx {
    t_reordering_ms: u64,
    // None until the first PDU arrives
    vars: Option<(u16, u16, u16)>,
    buffer: BTreeMap<u16, TaggedPacket>,
    timer: Option<Timer>,
    next_timer_id: u64,
}

impl RlcUmRx {
    pub fn new(t_reordering_ms: u64) -> Self {
        Self {
            t_reordering_ms,
            vars: None,
            buffer: BTreeMap::new(),
            timer: None,
            next_timer_id: 0,
        }
    }

    /// Next SN expected in order, once initialised.
    pub fn expected_sn(&self) -> Option<u16> {
        self.vars.map(|(ur, _, _)| ur)
    }

    pub fn timer_deadline(&self) -> Option<u64> {
        self.timer.map(|t| t.deadline)
    }

    pub fn buffered(&self) -> usize {
        self.buffer.len()
    }

    // position of `sn` relative to the lower window edge uh - W
    fn rel(sn: u16, uh: u16) -> u16 {
        (sn + RLC_SN_MODULUS + RLC_UM_WINDOW - uh) % RLC_SN_MODULUS
    }

    fn start_timer(&mut self, t: u64, out: &mut RlcRxOutput) {
        let id = self.next_timer_id;
        self.next_timer_id += 1;
        let deadline = t + self.t_reordering_ms;
        self.timer = Some(Timer { deadline, id });
        out.timer_started = Some((deadline, id));
    }

    /// Hands over buffered SDUs with SN below `limit` (relative to `uh`);
    /// missing SNs in that range are reported lost.
    fn flush_below(&mut self, from: u16, limit: u16, uh: u16, out: &mut RlcRxOutput) {
        let mut sn = from;
        while Self::rel(sn, uh) < Self::rel(limit, uh) {
            match self.buffer.remove(&sn) {
                Some(pkt) => out.delivered.push(pkt),
                None => out.lost.push(sn),
            }
            sn = (sn + 1) % RLC_SN_MODULUS;
        }
    }

    fn first_missing_from(&self, sn: u16, uh: u16) -> u16 {
        let mut sn = sn;
        while sn != uh && self.buffer.contains_key(&sn) {
            sn = (sn + 1) % RLC_SN_MODULUS;
        }
        sn
    }

    /// Processes a PDU decoded at time `t`.
    pub fn receive(&mut self, pdu: TaggedPacket, t: u64) -> RlcRxOutput {
        let mut out = RlcRxOutput::default();
        let Some(x) = pdu.rlc_sn else {
            // no RLC header: transparent delivery
            out.delivered.push(pdu);
            return out;
        };
        let (mut ur, mut uh, mut ux) = self.vars.unwrap_or((x, x, x));

        let rx_rel = Self::rel(x, uh);
        let ur_rel = Self::rel(ur, uh);
        let duplicate = (ur_rel < rx_rel && rx_rel < RLC_UM_WINDOW && self.buffer.contains_key(&x))
            || rx_rel < ur_rel;
        if duplicate {
            self.vars = Some((ur, uh, ux));
            return out;
        }
        self.buffer.insert(x, pdu);

        if rx_rel >= RLC_UM_WINDOW {
            // outside the window: slide it forward
            let new_uh = (x + 1) % RLC_SN_MODULUS;
            let low = (new_uh + RLC_SN_MODULUS - RLC_UM_WINDOW) % RLC_SN_MODULUS;
            // anything below the new lower edge is released now
            if Self::rel(ur, new_uh) >= RLC_UM_WINDOW {
                self.flush_below(ur, low, uh, &mut out);
                ur = low;
            }
            uh = new_uh;
        }

        if self.buffer.contains_key(&ur) {
            let next = self.first_missing_from(ur, uh);
            self.flush_below(ur, next, uh, &mut out);
            ur = next;
        }

        if self.timer.is_some() {
            let ux_rel = Self::rel(ux, uh);
            let outside = ux_rel >= RLC_UM_WINDOW && ux != uh;
            if ux_rel <= Self::rel(ur, uh) || outside {
                self.timer = None;
            }
        }
        if self.timer.is_none() && Self::rel(uh, uh) > Self::rel(ur, uh) {
            self.start_timer(t, &mut out);
            ux = uh;
        }

        self.vars = Some((ur, uh, ux));
        out
    }

    /// Handles expiry of timer `id` at time `t`. Stale timers return `None`.
    pub fn on_timer(&mut self, id: u64, t: u64) -> Option<RlcRxOutput> {
        if self.timer.map(|tm| tm.id) != Some(id) {
            return None;
        }
        self.timer = None;
        let (ur, uh, ux) = self.vars?;
        let mut out = RlcRxOutput::default();

        let mut next = ux;
        while next != uh && self.buffer.contains_key(&next) {
            next = (next + 1) % RLC_SN_MODULUS;
        }
        self.flush_below(ur, next, uh, &mut out);
        let ur = next;
        let mut ux = ux;
        if Self::rel(uh, uh) > Self::rel(ur, uh) {
            self.start_timer(t, &mut out);
            ux = uh;
        }
        self.vars = Some((ur, uh, ux));
        Some(out)
    }
}

/// Per-layer delays of one packet at the receiver, indexed by [`Layer`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PacketDelays {
    pub app_seq: u64,
    pub delays_ms: [u64; 6],
}

/// Receive-side timing of a delivered packet: MAC reception at `t_mac_rx`,
/// RLC hand-over (and the instantaneous climb to APP) at `t_delivered`.
pub fn rx_chain(pkt: &TaggedPacket, t_mac_rx: u64, t_delivered: u64) -> PacketDelays {
    let mut delays_ms = [0; 6];
    for layer in Layer::ALL {
        let crossed = if layer == Layer::Mac {
            t_mac_rx
        } else {
            t_delivered
        };
        let sent = pkt.tag(layer).unwrap_or(crossed);
        delays_ms[layer.index()] = crossed.saturating_sub(sent);
    }
    PacketDelays {
        app_seq: pkt.app_seq,
        delays_ms,
    }
}
