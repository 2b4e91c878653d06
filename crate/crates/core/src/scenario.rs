//! Physical parameters of a simulation and construction of one drop.

use nalgebra::DMatrix;
use rand::Rng;

use crate::error::{Error, Result};
use crate::formulation::ProblemInstance;
use crate::network::{
    self, assign_pilots, dbm_to_watts, derive_seed, generate_layout, large_scale_fading,
    ChannelStats, GeometryParams, PilotAssignment, ShadowParams,
};
use crate::performance::{PowerModel, Precoding, SeRequirements};

const TAG_LAYOUT: u64 = 1;
const TAG_SHADOW: u64 = 2;
const TAG_PILOTS: u64 = 3;
const TAG_SE: u64 = 4;

/// Per-user SE requirement, b/s/Hz.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SeTarget {
    Fixed(f64),
    /// Drawn uniformly on `[lo, hi]` per user and per drop.
    Uniform(f64, f64),
}

impl SeTarget {
    pub fn parse(s: &str) -> Option<Self> {
        let s = s.trim();
        if let Some(rest) = s.strip_prefix("uniform:") {
            let (lo, hi) = rest.split_once(',')?;
            return Some(SeTarget::Uniform(
                lo.trim().parse().ok()?,
                hi.trim().parse().ok()?,
            ));
        }
        s.parse().ok().map(SeTarget::Fixed)
    }

    pub fn describe(&self) -> String {
        match self {
            SeTarget::Fixed(x) => format!("{x}"),
            SeTarget::Uniform(lo, hi) => format!("uniform:{lo},{hi}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioParams {
    pub num_aps: usize,
    pub num_users: usize,
    pub antennas: usize,
    pub tau_c: usize,
    pub tau_p: usize,
    pub se: SeTarget,
    pub precoding: Precoding,
    pub delta: f64,
    /// Hardware power per antenna, watts.
    pub per_antenna_power: f64,
    /// Fixed fronthaul power per AP, watts.
    pub fronthaul_power: f64,
    /// Watts per Gbit/s.
    pub traffic_power_w_per_gbps: f64,
    pub bandwidth_hz: f64,
    pub p_max: f64,
    pub pilot_power: f64,
    pub noise_dbm: f64,
    pub geometry: GeometryParams,
    pub shadow: ShadowParams,
}

impl Default for ScenarioParams {
    fn default() -> Self {
        Self {
            num_aps: 20,
            num_users: 20,
            antennas: 20,
            tau_c: 200,
            tau_p: 5,
            se: SeTarget::Fixed(2.0),
            precoding: Precoding::Mrt,
            delta: 2.5,
            per_antenna_power: 0.2,
            fronthaul_power: 0.825,
            traffic_power_w_per_gbps: 0.25,
            bandwidth_hz: 20e6,
            p_max: 1.0,
            pilot_power: 0.2,
            noise_dbm: -94.0,
            geometry: GeometryParams::default(),
            shadow: ShadowParams::default(),
        }
    }
}

impl ScenarioParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidParameter(msg.to_string()));
        if self.num_aps == 0 || self.num_users == 0 || self.antennas == 0 {
            return bad("M, K and N must be positive");
        }
        if self.tau_p == 0 || self.tau_p >= self.tau_c {
            return bad("need 0 < tau_p < tau_c");
        }
        if self.precoding == Precoding::Fzf && self.antennas <= self.tau_p {
            return Err(Error::PrecodingScheme {
                antennas: self.antennas,
                tau_p: self.tau_p,
            });
        }
        match self.se {
            SeTarget::Fixed(x) if !(x >= 0.0 && x.is_finite()) => {
                return bad("SE target must be >= 0")
            }
            SeTarget::Uniform(lo, hi) if !(lo >= 0.0 && hi >= lo && hi.is_finite()) => {
                return bad("SE range must satisfy 0 <= lo <= hi")
            }
            _ => {}
        }
        let positive = [
            self.delta,
            self.bandwidth_hz,
            self.p_max,
            self.pilot_power,
            self.geometry.side_length,
        ];
        if positive.iter().any(|&v| !(v > 0.0 && v.is_finite())) {
            return bad("delta, bandwidth, P_max, pilot power and area side must be positive");
        }
        if !(self.per_antenna_power >= 0.0)
            || !(self.fronthaul_power >= 0.0)
            || !(self.traffic_power_w_per_gbps >= 0.0)
        {
            return bad("hardware powers must be nonnegative");
        }
        if !self.noise_dbm.is_finite() {
            return bad("noise power must be finite");
        }
        Ok(())
    }

    /// Traffic-independent power of one AP, `N * per-antenna + fronthaul`.
    pub fn static_power(&self) -> f64 {
        self.antennas as f64 * self.per_antenna_power + self.fronthaul_power
    }

    pub fn power_model(&self) -> Result<PowerModel> {
        PowerModel::uniform(
            self.num_aps,
            self.delta,
            self.static_power(),
            self.traffic_power_w_per_gbps * 1e-9,
            self.bandwidth_hz,
            self.p_max,
        )
    }

    /// Builds drop number `drop` of a run seeded with `seed`. Every random
    /// stream derives from `(seed, drop)` only.
    pub fn build_drop(&self, seed: u64, drop: u64) -> Result<ProblemInstance> {
        self.validate()?;
        let geometry = generate_layout(
            self.num_aps,
            self.num_users,
            &self.geometry,
            derive_seed(seed, drop, TAG_LAYOUT),
        )?;
        let beta =
            large_scale_fading(&geometry, &self.shadow, derive_seed(seed, drop, TAG_SHADOW))?;
        let pilots = assign_pilots(
            self.num_users,
            self.tau_p,
            self.pilot_power,
            derive_seed(seed, drop, TAG_PILOTS),
        )?;
        let noise = dbm_to_watts(self.noise_dbm);
        let stats = ChannelStats::new(beta, &pilots, noise, noise, self.tau_c, self.antennas)?;
        let xi = match self.se {
            SeTarget::Fixed(x) => vec![x; self.num_users],
            SeTarget::Uniform(lo, hi) => {
                let mut rng = network::seeded_rng(derive_seed(seed, drop, TAG_SE));
                (0..self.num_users)
                    .map(|_| rng.random_range(lo..=hi))
                    .collect()
            }
        };
        let req = SeRequirements::new(xi, self.tau_c, self.tau_p)?;
        ProblemInstance::new(stats, self.precoding, pilots, req, self.power_model()?)
    }

    /// Instance with the given large-scale fading (M x K), pilot indices and
    /// SE targets; `num_aps`, `num_users` and `se` of `self` are ignored.
    pub fn instance_from_beta(
        &self,
        beta: DMatrix<f64>,
        pilot_index: Vec<usize>,
        xi: Vec<f64>,
    ) -> Result<ProblemInstance> {
        let (m_aps, k_users) = beta.shape();
        if pilot_index.len() != k_users || pilot_index.iter().any(|&i| i >= self.tau_p) {
            return Err(Error::Dimension(
                "one pilot index below tau_p per user expected".into(),
            ));
        }
        let check = ScenarioParams {
            num_aps: m_aps.max(1),
            num_users: k_users.max(1),
            ..self.clone()
        };
        check.validate()?;
        let pilots = PilotAssignment {
            tau_p: self.tau_p,
            index: pilot_index,
            power: vec![self.pilot_power; k_users],
        };
        let noise = dbm_to_watts(self.noise_dbm);
        let stats = ChannelStats::new(beta, &pilots, noise, noise, self.tau_c, self.antennas)?;
        let req = SeRequirements::new(xi, self.tau_c, self.tau_p)?;
        ProblemInstance::new(stats, self.precoding, pilots, req, check.power_model()?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_hardware_power() {
        let p = ScenarioParams::default();
        assert!((p.static_power() - 4.825).abs() < 1e-12);
        let inst = p.build_drop(1, 0).unwrap();
        assert!(inst.hardware.iter().all(|&h| (h - 5.025).abs() < 1e-9));
    }

    #[test]
    fn drops_are_reproducible_and_distinct() {
        let p = ScenarioParams {
            num_aps: 6,
            num_users: 4,
            se: SeTarget::Uniform(1.0, 2.0),
            ..ScenarioParams::default()
        };
        let a = p.build_drop(9, 3).unwrap();
        let b = p.build_drop(9, 3).unwrap();
        assert_eq!(a.stats.beta, b.stats.beta);
        assert_eq!(a.requirements.xi, b.requirements.xi);
        assert!(a.requirements.xi.iter().all(|&x| (1.0..=2.0).contains(&x)));
        let c = p.build_drop(9, 4).unwrap();
        assert_ne!(a.stats.beta, c.stats.beta);
    }

    #[test]
    fn se_target_parsing() {
        assert_eq!(SeTarget::parse("2"), Some(SeTarget::Fixed(2.0)));
        assert_eq!(
            SeTarget::parse("uniform:1, 2"),
            Some(SeTarget::Uniform(1.0, 2.0))
        );
        assert_eq!(SeTarget::parse("x"), None);
        let t = SeTarget::Uniform(1.0, 2.5);
        assert_eq!(SeTarget::parse(&t.describe()), Some(t));
    }

    #[test]
    fn fzf_needs_more_antennas_than_pilots() {
        let p = ScenarioParams {
            antennas: 5,
            precoding: Precoding::Fzf,
            ..ScenarioParams::default()
        };
        assert!(matches!(p.validate(), Err(Error::PrecodingScheme { .. })));
    }
}
