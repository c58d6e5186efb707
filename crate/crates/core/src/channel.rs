//! Large-scale propagation: pathloss, block-correlated shadowing and SINR.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

use crate::config::{PathlossModel, ScenarioConfig};
use crate::{rng_stream, VehicleId};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ChannelError {
    #[error("block displacement must be a non-negative number, got {0}")]
    BadDisplacement(f64),
}

pub fn dbm_to_mw(dbm: f64) -> f64 {
    10f64.powf(dbm / 10.0)
}

pub fn mw_to_dbm(mw: f64) -> f64 {
    10.0 * mw.log10()
}

/// One step of the block shadowing recursion:
///
/// `S_n = exp(-d_n / d_cor) * S_{n-1} - sqrt(1 - exp(-2 d_n / d_cor)) * N_n`
///
/// with all quantities in dB. `d_n` may be `+inf` (fully decorrelated).
pub fn update_shadowing(
    prev_db: f64,
    d_n: f64,
    d_cor: f64,
    innovation_db: f64,
) -> Result<f64, ChannelError> {
    if d_n.is_nan() || d_n < 0.0 {
        return Err(ChannelError::BadDisplacement(d_n));
    }
    let corr = (-d_n / d_cor).exp();
    let fresh = (1.0 - (-2.0 * d_n / d_cor).exp()).sqrt();
    Ok(corr * prev_db - fresh * innovation_db)
}

/// Shadowing of one (unordered) vehicle pair.
#[derive(Debug, Clone, PartialEq)]
pub struct ShadowingState {
    pub link: (VehicleId, VehicleId),
    pub s_db: f64,
    /// 1 for the initial draw, incremented on every update.
    pub block_index: u64,
    pub last_positions: (f64, f64),
}

impl ShadowingState {
    pub fn new(link: (VehicleId, VehicleId), initial_db: f64, positions: (f64, f64)) -> Self {
        Self {
            link,
            s_db: initial_db,
            block_index: 1,
            last_positions: positions,
        }
    }

    /// Advances to the next block given the endpoints' new positions. The
    /// block displacement is the mean of both endpoints' displacements.
    pub fn advance(
        &mut self,
        positions: (f64, f64),
        d_cor: f64,
        innovation_db: f64,
    ) -> Result<f64, ChannelError> {
        let d_n = 0.5
            * ((positions.0 - self.last_positions.0).abs()
                + (positions.1 - self.last_positions.1).abs());
        self.s_db = update_shadowing(self.s_db, d_n, d_cor, innovation_db)?;
        self.block_index += 1;
        self.last_positions = positions;
        Ok(self.s_db)
    }
}

/// Shadowing for every vehicle pair of a scenario, each with its own RNG
/// stream. Links are reciprocal: `(a, b)` and `(b, a)` share a state.
pub struct ShadowingField {
    enabled: bool,
    d_cor: f64,
    normal: Normal<f64>,
    n_vehicles: usize,
    // upper-triangular, indexed by `pair_slot`
    links: Vec<(ShadowingState, ChaCha8Rng)>,
}

impl ShadowingField {
    pub fn new(cfg: &ScenarioConfig, seed: u64) -> Self {
        let sigma = if cfg.shadowing_enabled {
            cfg.shadow_sigma_db
        } else {
            0.0
        };
        Self {
            enabled: cfg.shadowing_enabled,
            d_cor: cfg.d_cor_m,
            normal: Normal::new(0.0, sigma).expect("sigma validated non-negative"),
            n_vehicles: cfg.n_vehicles as usize,
            links: Vec::new(),
        }
        .with_seed(seed)
    }

    fn with_seed(mut self, seed: u64) -> Self {
        if !self.enabled {
            return self;
        }
        let n = self.n_vehicles;
        for a in 0..n {
            for b in a + 1..n {
                let (va, vb) = (VehicleId::from_index(a), VehicleId::from_index(b));
                let rng = rng_stream(seed, &format!("shadowing:{va}-{vb}"));
                let state = ShadowingState::new((va, vb), 0.0, (0.0, 0.0));
                self.links.push((state, rng));
            }
        }
        self
    }

    fn pair_slot(&self, a: usize, b: usize) -> usize {
        let (lo, hi) = if a < b { (a, b) } else { (b, a) };
        // rows 0..lo hold (n-1) + (n-2) + ... entries
        lo * (2 * self.n_vehicles - lo - 1) / 2 + (hi - lo - 1)
    }

    /// Draws `S_1` for every link. `positions[i]` is vehicle `i + 1`.
    pub fn initialize(&mut self, positions: &[f64]) {
        let normal = self.normal;
        for (state, rng) in &mut self.links {
            let (a, b) = (state.link.0.index(), state.link.1.index());
            *state = ShadowingState::new(state.link, normal.sample(rng), (positions[a], positions[b]));
        }
    }

    /// Moves every link to the next shadowing block.
    pub fn advance_block(&mut self, positions: &[f64]) -> Result<(), ChannelError> {
        let normal = self.normal;
        let d_cor = self.d_cor;
        for (state, rng) in &mut self.links {
            let (a, b) = (state.link.0.index(), state.link.1.index());
            let innovation = normal.sample(rng);
            state.advance((positions[a], positions[b]), d_cor, innovation)?;
        }
        Ok(())
    }

    /// Current shadowing loss in dB between two distinct vehicles; 0 when
    /// shadowing is disabled.
    pub fn shadow_db(&self, a: VehicleId, b: VehicleId) -> f64 {
        if !self.enabled || a == b {
            return 0.0;
        }
        self.links[self.pair_slot(a.index(), b.index())].0.s_db
    }

    pub fn state(&self, a: VehicleId, b: VehicleId) -> Option<&ShadowingState> {
        if !self.enabled || a == b {
            return None;
        }
        self.links.get(self.pair_slot(a.index(), b.index())).map(|l| &l.0)
    }
}

/// Distance-dependent pathloss.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pathloss {
    pub model: PathlossModel,
    pub carrier_ghz: f64,
}

impl Pathloss {
    pub fn from_config(cfg: &ScenarioConfig) -> Self {
        Self {
            model: cfg.pathloss_model,
            carrier_ghz: cfg.carrier_ghz,
        }
    }

    pub fn loss_db(&self, d_m: f64) -> f64 {
        match self.model {
            PathlossModel::WinnerB1 => {
                41.0 + 22.7 * d_m.max(3.0).log10() + 20.0 * (self.carrier_ghz / 5.0).log10()
            }
            PathlossModel::FreeSpace => {
                32.45 + 20.0 * (d_m.max(1.0) / 1000.0).log10() + 20.0 * (self.carrier_ghz * 1000.0).log10()
            }
        }
    }
}

/// Default LOS pathloss at 5.9 GHz.
pub fn pathloss_db(d_m: f64) -> f64 {
    Pathloss {
        model: PathlossModel::WinnerB1,
        carrier_ghz: 5.9,
    }
    .loss_db(d_m)
}

/// Received power; positive shadowing means extra loss.
pub fn rx_power_dbm(tx_dbm: f64, pathloss_db: f64, shadow_db: f64) -> f64 {
    tx_dbm - pathloss_db - shadow_db
}

pub fn sinr_db(rx_dbm: f64, interferers_dbm: &[f64], noise_dbm: f64) -> f64 {
    let interference: f64 = interferers_dbm.iter().map(|&i| dbm_to_mw(i)).sum();
    mw_to_dbm(dbm_to_mw(rx_dbm) / (dbm_to_mw(noise_dbm) + interference))
}

/// Draws a standard-normal-shaped innovation with the given sigma. Exposed for
/// tests and statistics tooling that drive `update_shadowing` directly.
pub fn draw_db<R: Rng + ?Sized>(rng: &mut R, sigma_db: f64) -> f64 {
    Normal::new(0.0, sigma_db)
        .expect("sigma must be non-negative")
        .sample(rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn zero_displacement_keeps_sample() {
        assert_eq!(update_shadowing(2.5, 0.0, 25.0, 1.234).unwrap(), 2.5);
    }

    #[test]
    fn infinite_displacement_keeps_only_innovation() {
        assert_eq!(update_shadowing(2.5, f64::INFINITY, 25.0, 1.7).unwrap(), -1.7);
    }

    #[test]
    fn one_decorrelation_distance() {
        // e^-1 = 0.36787944, sqrt(1 - e^-2) = 0.92987350
        let s = update_shadowing(3.0, 25.0, 25.0, 1.0).unwrap();
        assert_abs_diff_eq!(s, 0.36787944 * 3.0 - 0.92987350, epsilon = 1e-7);
        assert_abs_diff_eq!(s, 0.173764, epsilon = 1e-6);
    }

    #[test]
    fn negative_displacement_rejected() {
        assert!(update_shadowing(0.0, -1.0, 25.0, 0.0).is_err());
        assert!(update_shadowing(0.0, f64::NAN, 25.0, 0.0).is_err());
    }

    #[test]
    fn pathloss_values() {
        // 20 log10(5.9 / 5) = 1.4376
        assert_abs_diff_eq!(pathloss_db(3.0), 53.2680, epsilon = 1e-3);
        assert_abs_diff_eq!(pathloss_db(10.0), 65.1376, epsilon = 1e-3);
        assert_eq!(pathloss_db(1.0), pathloss_db(3.0));
        assert_eq!(pathloss_db(0.0), pathloss_db(3.0));
    }

    #[test]
    fn pathloss_is_monotone_and_concave_along_platoon() {
        let pl: Vec<f64> = (1..=8).map(|k| pathloss_db(9.0 * k as f64)).collect();
        let steps: Vec<f64> = pl.windows(2).map(|w| w[1] - w[0]).collect();
        assert!(steps.iter().all(|&s| s > 0.0));
        assert!(steps.windows(2).all(|w| w[1] < w[0]));
    }

    #[test]
    fn free_space_reference() {
        let fs = Pathloss {
            model: PathlossModel::FreeSpace,
            carrier_ghz: 5.9,
        };
        // 32.45 + 20 log10(5900) = 107.87 at 1 km
        assert_abs_diff_eq!(fs.loss_db(1000.0), 107.867, epsilon = 1e-3);
        assert_eq!(fs.loss_db(0.5), fs.loss_db(1.0));
    }

    #[test]
    fn rx_power_arithmetic() {
        assert_abs_diff_eq!(rx_power_dbm(23.0, 65.14, 0.0), -42.14, epsilon = 1e-12);
        assert_abs_diff_eq!(rx_power_dbm(23.0, 65.14, 3.0), -45.14, epsilon = 1e-12);
    }

    #[test]
    fn sinr_arithmetic() {
        assert_abs_diff_eq!(sinr_db(-116.0, &[], -116.0), 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(sinr_db(-42.14, &[], -116.0), 73.86, epsilon = 1e-9);
        // 10 log10(1 / (1 + 10^-6.6)) = -1.0909e-6
        let s = sinr_db(-50.0, &[-50.0], -116.0);
        assert_abs_diff_eq!(s, -1.0909e-6, epsilon = 1e-9);
    }

    #[test]
    fn field_is_reciprocal_and_disabled_means_zero() {
        let mut cfg = ScenarioConfig {
            n_vehicles: 4,
            ..ScenarioConfig::default()
        };
        let mut field = ShadowingField::new(&cfg, 7);
        field.initialize(&[0.0, -9.0, -18.0, -27.0]);
        let (a, b) = (VehicleId::new(1), VehicleId::new(3));
        assert_eq!(field.shadow_db(a, b), field.shadow_db(b, a));
        assert_ne!(field.shadow_db(a, b), 0.0);
        assert_eq!(field.shadow_db(a, a), 0.0);
        let before = field.shadow_db(a, b);
        field.advance_block(&[1.4, -7.6, -16.6, -25.6]).unwrap();
        assert_ne!(field.shadow_db(a, b), before);
        assert_eq!(field.state(a, b).unwrap().block_index, 2);

        cfg.shadowing_enabled = false;
        let mut field = ShadowingField::new(&cfg, 7);
        field.initialize(&[0.0, -9.0, -18.0, -27.0]);
        assert_eq!(field.shadow_db(a, b), 0.0);
    }

    #[test]
    fn pair_slots_are_unique() {
        let cfg = ScenarioConfig {
            n_vehicles: 6,
            ..ScenarioConfig::default()
        };
        let field = ShadowingField::new(&cfg, 1);
        let mut slots = Vec::new();
        for a in 0..6 {
            for b in a + 1..6 {
                slots.push(field.pair_slot(a, b));
            }
        }
        let expected: Vec<usize> = (0..15).collect();
        assert_eq!(slots, expected);
    }
}
