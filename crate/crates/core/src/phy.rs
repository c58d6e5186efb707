//! Physical layer abstraction: MCS table, transport block sizing, the SINR
//! threshold decoder and the sidelink resource grid layouts.

use std::ops::Range;

use rand::Rng;
use thiserror::Error;

use crate::config::{DecodeMode, GridLayout, ScenarioConfig};
use crate::VehicleId;

pub const MAX_MCS: u32 = 28;
pub const SUBCARRIERS_PER_RB: u32 = 12;
pub const SYMBOLS_PER_SUBFRAME: u32 = 14;
pub const GUARD_SYMBOLS: u32 = 1;
/// Header bytes of the default stack (UDP 8 + IP 20 + PDCP 2 + RLC 1 + MAC 2).
pub const DEFAULT_STACK_OVERHEAD_BYTES: u32 = 33;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum PhyError {
    #[error("MCS {0} is outside 0..=28")]
    InvalidMcs(u32),
    #[error("infeasible grid: {0}")]
    InfeasibleGrid(String),
    #[error("RB {rb} in subframe {subframe} already used by {holder}")]
    DoubleBooked {
        subframe: u64,
        rb: u32,
        holder: VehicleId,
    },
    #[error("subchannels {start}..{end} exceed the {available} available")]
    BadAllocation { start: u32, end: u32, available: u32 },
}

/// Modulation order and code rate per MCS index.
pub trait McsTable {
    fn modulation_order(&self, mcs: u32) -> u32;
    /// Code rate in thousandths.
    fn code_rate_per_mille(&self, mcs: u32) -> u32;
}

/// Piecewise-linear analytic table: QPSK for 0-9, 16QAM for 10-16, 64QAM
/// above, with code rates rising linearly inside each band.
#[derive(Debug, Clone, Copy, Default)]
pub struct AnalyticMcsTable;

impl McsTable for AnalyticMcsTable {
    fn modulation_order(&self, mcs: u32) -> u32 {
        match mcs {
            0..=9 => 2,
            10..=16 => 4,
            _ => 6,
        }
    }

    fn code_rate_per_mille(&self, mcs: u32) -> u32 {
        match mcs {
            0..=9 => 120 + 60 * mcs,
            10..=16 => 330 + 50 * (mcs - 10),
            _ => 430 + 45 * (mcs - 17),
        }
    }
}

fn check_mcs(mcs: u32) -> Result<(), PhyError> {
    if mcs > MAX_MCS {
        Err(PhyError::InvalidMcs(mcs))
    } else {
        Ok(())
    }
}

/// Outcome of sizing a grant for a PDU.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RbRequirement {
    Fits(u32),
    /// More than the available RBs would be needed.
    Infeasible { needed: u32 },
}

/// Transport block sizing for a given MCS table and DMRS density.
#[derive(Debug, Clone, Copy)]
pub struct TbsModel<T = AnalyticMcsTable> {
    pub table: T,
    pub data_symbols: u32,
}

impl Default for TbsModel<AnalyticMcsTable> {
    fn default() -> Self {
        Self::with_dmrs(4)
    }
}

impl TbsModel<AnalyticMcsTable> {
    /// 14 symbols minus the DMRS symbols minus one guard symbol.
    pub fn with_dmrs(dmrs_symbols: u32) -> Self {
        Self {
            table: AnalyticMcsTable,
            data_symbols: SYMBOLS_PER_SUBFRAME - dmrs_symbols - GUARD_SYMBOLS,
        }
    }
}

impl<T: McsTable> TbsModel<T> {
    // bits per RB, scaled by 1000 to keep the code rate integral
    fn milli_bits_per_rb(&self, mcs: u32) -> u64 {
        u64::from(SUBCARRIERS_PER_RB * self.data_symbols)
            * u64::from(self.table.modulation_order(mcs))
            * u64::from(self.table.code_rate_per_mille(mcs))
    }

    pub fn spectral_efficiency(&self, mcs: u32) -> Result<f64, PhyError> {
        check_mcs(mcs)?;
        Ok(f64::from(self.table.modulation_order(mcs))
            * f64::from(self.table.code_rate_per_mille(mcs))
            / 1000.0)
    }

    pub fn tbs_bits(&self, mcs: u32, n_rb: u32) -> Result<u32, PhyError> {
        check_mcs(mcs)?;
        let bits = u64::from(n_rb) * self.milli_bits_per_rb(mcs) / 1000;
        Ok(u32::try_from(bits).unwrap_or(u32::MAX))
    }

    /// Smallest RB count whose TBS carries `pdu_bytes`, uncapped.
    pub fn rbs_for_bytes(&self, mcs: u32, pdu_bytes: u32) -> Result<u32, PhyError> {
        check_mcs(mcs)?;
        let needed_milli = u64::from(pdu_bytes) * 8 * 1000;
        let per_rb = self.milli_bits_per_rb(mcs);
        Ok(needed_milli.div_ceil(per_rb) as u32)
    }

    pub fn rb_requirement(
        &self,
        mcs: u32,
        pdu_bytes: u32,
        n_rb_total: u32,
    ) -> Result<RbRequirement, PhyError> {
        let needed = self.rbs_for_bytes(mcs, pdu_bytes)?;
        Ok(if needed <= n_rb_total {
            RbRequirement::Fits(needed)
        } else {
            RbRequirement::Infeasible { needed }
        })
    }
}

/// TBS with the default table and 4 DMRS symbols.
pub fn tbs_bits(mcs: u32, n_rb: u32) -> Result<u32, PhyError> {
    TbsModel::default().tbs_bits(mcs, n_rb)
}

/// RBs needed to carry an application payload plus the default stack headers.
pub fn min_rbs(mcs: u32, app_payload_bytes: u32) -> Result<u32, PhyError> {
    TbsModel::default().rbs_for_bytes(mcs, app_payload_bytes + DEFAULT_STACK_OVERHEAD_BYTES)
}

/// Shannon-gap threshold: `10 log10(2^eff - 1) + margin`.
pub fn sinr_threshold_db(mcs: u32, margin_db: f64) -> Result<f64, PhyError> {
    let eff = TbsModel::default().spectral_efficiency(mcs)?;
    Ok(threshold_for_efficiency(eff, margin_db))
}

pub fn threshold_for_efficiency(efficiency: f64, margin_db: f64) -> f64 {
    10.0 * (2f64.powf(efficiency) - 1.0).log10() + margin_db
}

/// SINR-to-decoding-outcome mapping.
#[derive(Debug, Clone, Copy)]
pub struct LinkAbstraction {
    pub tbs: TbsModel,
    pub margin_db: f64,
    pub mode: DecodeMode,
    pub beta_db: f64,
}

/// The SCI is decodable this many dB below the data threshold.
pub const SCI_THRESHOLD_OFFSET_DB: f64 = 3.0;

impl LinkAbstraction {
    pub fn from_config(cfg: &ScenarioConfig) -> Self {
        Self {
            tbs: TbsModel::with_dmrs(cfg.dmrs_symbols),
            margin_db: cfg.sinr_margin_db,
            mode: cfg.decode_mode,
            beta_db: cfg.logistic_beta_db,
        }
    }

    pub fn threshold_db(&self, mcs: u32) -> Result<f64, PhyError> {
        Ok(threshold_for_efficiency(
            self.tbs.spectral_efficiency(mcs)?,
            self.margin_db,
        ))
    }

    pub fn sci_threshold_db(&self, mcs: u32) -> Result<f64, PhyError> {
        Ok(self.threshold_db(mcs)? - SCI_THRESHOLD_OFFSET_DB)
    }

    /// Probability that a block at `sinr_db` decodes.
    pub fn success_probability(&self, mcs: u32, sinr_db: f64) -> Result<f64, PhyError> {
        let threshold = self.threshold_db(mcs)?;
        Ok(match self.mode {
            DecodeMode::Deterministic => {
                if sinr_db >= threshold {
                    1.0
                } else {
                    0.0
                }
            }
            DecodeMode::Logistic => 1.0 / (1.0 + ((threshold - sinr_db) / self.beta_db).exp()),
        })
    }

    /// Decodes a transport block. A receiver that transmits in the same
    /// subframe never decodes (half duplex).
    pub fn decode<R: Rng + ?Sized>(
        &self,
        tb: &TransportBlock,
        sinr_db: f64,
        receiver_transmitting: bool,
        rng: &mut R,
    ) -> Result<bool, PhyError> {
        if receiver_transmitting {
            return Ok(false);
        }
        let p = self.success_probability(tb.mcs, sinr_db)?;
        Ok(match self.mode {
            DecodeMode::Deterministic => p >= 1.0,
            DecodeMode::Logistic => rng.random::<f64>() < p,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransportBlock {
    pub tx: VehicleId,
    pub subframe: u64,
    pub subchannels: Range<u32>,
    pub mcs: u32,
    pub payload_bits: u32,
    pub padding_bits: u32,
}

impl TransportBlock {
    pub fn tbs_bits(&self) -> u32 {
        self.payload_bits + self.padding_bits
    }
}

/// RBs of one subchannel.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Subchannel {
    /// Per-subchannel PSCCH RBs; empty for R12.
    pub pscch: Range<u32>,
    pub pssch: Range<u32>,
}

/// Sidelink band layout plus RB occupancy of recent subframes.
#[derive(Debug, Clone)]
pub struct ResourceGrid {
    layout: GridLayout,
    n_rb_total: u32,
    subchannel_size_rb: u32,
    pscch_rb_per_subchannel: u32,
    pscch_pool: Option<Range<u32>>,
    subchannels: Vec<Subchannel>,
    // (subframe, per-RB holder); at most a handful of subframes are live
    occupancy: Vec<(u64, Vec<Option<VehicleId>>)>,
}

/// Geometry parameters of [`ResourceGrid::new`].
#[derive(Debug, Clone, Copy)]
pub struct GridGeometry {
    pub n_rb_total: u32,
    pub subchannel_size_rb: u32,
    pub pscch_rb_per_subchannel: u32,
    pub pscch_pool_rb: u32,
    pub pssch_pool_start_rb: u32,
}

impl ResourceGrid {
    pub fn build(cfg: &ScenarioConfig) -> Result<Self, PhyError> {
        Self::new(
            cfg.grid_layout,
            GridGeometry {
                n_rb_total: cfg.n_rb_total,
                subchannel_size_rb: cfg.subchannel_size_rb,
                pscch_rb_per_subchannel: cfg.pscch_rb_per_subchannel,
                pscch_pool_rb: cfg.pscch_pool_rb,
                pssch_pool_start_rb: cfg.pssch_pool_start_rb,
            },
        )
    }

    pub fn new(layout: GridLayout, g: GridGeometry) -> Result<Self, PhyError> {
        let fail = |msg: String| Err(PhyError::InfeasibleGrid(msg));
        if g.pscch_rb_per_subchannel == 0 {
            return fail("pscch_rb_per_subchannel must be at least 1".into());
        }
        if g.subchannel_size_rb < g.pscch_rb_per_subchannel + 1 {
            return fail(format!(
                "subchannel of {} RBs cannot hold {} PSCCH RBs and data",
                g.subchannel_size_rb, g.pscch_rb_per_subchannel
            ));
        }
        if g.n_rb_total < g.subchannel_size_rb {
            return fail(format!(
                "{} RBs cannot hold a {}-RB subchannel",
                g.n_rb_total, g.subchannel_size_rb
            ));
        }

        let (pscch_pool, data_start) = match layout {
            GridLayout::R14 => (None, 0),
            GridLayout::R12 | GridLayout::Hybrid => {
                if g.pscch_pool_rb < g.pscch_rb_per_subchannel {
                    return fail(format!(
                        "PSCCH pool of {} RBs cannot hold one {}-RB SCI",
                        g.pscch_pool_rb, g.pscch_rb_per_subchannel
                    ));
                }
                if g.pssch_pool_start_rb < g.pscch_pool_rb {
                    return fail(format!(
                        "PSSCH pool starting at RB {} overlaps PSCCH pool 0..{}",
                        g.pssch_pool_start_rb, g.pscch_pool_rb
                    ));
                }
                if g.pssch_pool_start_rb >= g.n_rb_total {
                    return fail("PSSCH pool starts past the band".into());
                }
                (Some(0..g.pscch_pool_rb), g.pssch_pool_start_rb)
            }
        };

        let n_subchannels = (g.n_rb_total - data_start) / g.subchannel_size_rb;
        if n_subchannels == 0 {
            return fail(format!(
                "{} RBs left for PSSCH, less than one subchannel",
                g.n_rb_total - data_start
            ));
        }
        let per_sc_pscch = match layout {
            GridLayout::R12 => 0,
            GridLayout::R14 | GridLayout::Hybrid => g.pscch_rb_per_subchannel,
        };
        let subchannels = (0..n_subchannels)
            .map(|j| {
                let start = data_start + j * g.subchannel_size_rb;
                Subchannel {
                    pscch: start..start + per_sc_pscch,
                    pssch: start + per_sc_pscch..start + g.subchannel_size_rb,
                }
            })
            .collect();

        Ok(Self {
            layout,
            n_rb_total: g.n_rb_total,
            subchannel_size_rb: g.subchannel_size_rb,
            pscch_rb_per_subchannel: g.pscch_rb_per_subchannel,
            pscch_pool,
            subchannels,
            occupancy: Vec::new(),
        })
    }

    pub fn layout(&self) -> GridLayout {
        self.layout
    }

    pub fn n_rb_total(&self) -> u32 {
        self.n_rb_total
    }

    pub fn subchannel_size_rb(&self) -> u32 {
        self.subchannel_size_rb
    }

    pub fn pscch_pool(&self) -> Option<Range<u32>> {
        self.pscch_pool.clone()
    }

    pub fn n_subchannels(&self) -> u32 {
        self.subchannels.len() as u32
    }

    pub fn subchannel(&self, j: u32) -> Option<&Subchannel> {
        self.subchannels.get(j as usize)
    }

    pub fn data_rbs_per_subchannel(&self) -> u32 {
        self.subchannels[0].pssch.len() as u32
    }

    /// Contiguous subchannels needed for `n_data_rbs` PSSCH RBs.
    pub fn subchannels_for(&self, n_data_rbs: u32) -> u32 {
        n_data_rbs.div_ceil(self.data_rbs_per_subchannel())
    }

    /// Number of SCI slots in the dedicated PSCCH pool.
    fn sci_slots(&self) -> u32 {
        self.pscch_pool
            .as_ref()
            .map_or(0, |p| (p.end - p.start) / self.pscch_rb_per_subchannel)
    }

    /// Every RB a transmission on `subchannels` occupies, ascending.
    pub fn allocation_rbs(&self, subchannels: Range<u32>) -> Result<Vec<u32>, PhyError> {
        if subchannels.is_empty() || subchannels.end > self.n_subchannels() {
            return Err(PhyError::BadAllocation {
                start: subchannels.start,
                end: subchannels.end,
                available: self.n_subchannels(),
            });
        }
        let mut rbs = Vec::new();
        if let Some(pool) = &self.pscch_pool {
            // legacy SCI slot, picked by the first subchannel
            let slot = subchannels.start % self.sci_slots();
            let start = pool.start + slot * self.pscch_rb_per_subchannel;
            rbs.extend(start..start + self.pscch_rb_per_subchannel);
        }
        for j in subchannels {
            let sc = &self.subchannels[j as usize];
            rbs.extend(sc.pscch.clone());
            rbs.extend(sc.pssch.clone());
        }
        Ok(rbs)
    }

    /// Marks the RBs of a transmission as used by `tx`. Fails without
    /// changing anything if any of them is already taken.
    pub fn occupy(
        &mut self,
        subframe: u64,
        tx: VehicleId,
        subchannels: Range<u32>,
    ) -> Result<(), PhyError> {
        let rbs = self.allocation_rbs(subchannels)?;
        let n_rb = self.n_rb_total as usize;
        let pos = match self.occupancy.iter().position(|(t, _)| *t == subframe) {
            Some(p) => p,
            None => {
                self.occupancy.push((subframe, vec![None; n_rb]));
                self.occupancy.len() - 1
            }
        };
        let row = &mut self.occupancy[pos].1;
        if let Some(&rb) = rbs.iter().find(|&&rb| row[rb as usize].is_some()) {
            return Err(PhyError::DoubleBooked {
                subframe,
                rb,
                holder: row[rb as usize].expect("checked above"),
            });
        }
        for rb in rbs {
            row[rb as usize] = Some(tx);
        }
        Ok(())
    }

    pub fn holder(&self, subframe: u64, rb: u32) -> Option<VehicleId> {
        self.occupancy
            .iter()
            .find(|(t, _)| *t == subframe)
            .and_then(|(_, row)| row.get(rb as usize).copied().flatten())
    }

    /// Forgets occupancy of subframes before `subframe`.
    pub fn release_before(&mut self, subframe: u64) {
        self.occupancy.retain(|(t, _)| *t >= subframe);
    }
}
