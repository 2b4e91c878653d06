//! Closed-form downlink SINR/SE and the total power consumption model.
//!
//! Powers are carried as square-root variables `q[m][k] = sqrt(rho[m][k])`
//! everywhere; `rho` only appears at reporting boundaries.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::network::{ChannelStats, PilotAssignment};

/// Relative slack allowed on `SINR_k >= nu_k` when judging a solver output.
pub const FEASIBILITY_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Precoding {
    Mrt,
    Fzf,
}

impl Precoding {
    pub fn name(self) -> &'static str {
        match self {
            Precoding::Mrt => "mrt",
            Precoding::Fzf => "fzf",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_lowercase().as_str() {
            "mrt" => Some(Precoding::Mrt),
            "fzf" | "f-zf" | "zf" => Some(Precoding::Fzf),
            _ => None,
        }
    }

    /// Array gain `G`: `N` for MRT, `N - tau_p` for F-ZF.
    pub fn array_gain(self, antennas: usize, tau_p: usize) -> Result<f64> {
        match self {
            Precoding::Mrt => Ok(antennas as f64),
            Precoding::Fzf if antennas > tau_p => Ok((antennas - tau_p) as f64),
            Precoding::Fzf => Err(Error::PrecodingScheme { antennas, tau_p }),
        }
    }
}

/// Precoder-dependent coefficients entering the SINR expression.
#[derive(Debug, Clone, PartialEq)]
pub struct LinkCoefficients {
    pub scheme: Precoding,
    pub array_gain: f64,
    /// `g[m][k] = G * gamma[m][k]`.
    pub g: DMatrix<f64>,
    /// Non-coherent interference coefficients: `beta` (MRT) or `beta - gamma` (F-ZF).
    pub z: DMatrix<f64>,
}

impl LinkCoefficients {
    pub fn new(stats: &ChannelStats, scheme: Precoding, tau_p: usize) -> Result<Self> {
        let array_gain = scheme.array_gain(stats.antennas, tau_p)?;
        let g = stats.gamma.map(|v| array_gain * v);
        let z = match scheme {
            Precoding::Mrt => stats.beta.clone(),
            Precoding::Fzf => stats.beta.zip_map(&stats.gamma, |b, c| (b - c).max(0.0)),
        };
        Ok(Self {
            scheme,
            array_gain,
            g,
            z,
        })
    }
}

/// Boolean mask over the M APs.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ActiveSet(Vec<bool>);

impl ActiveSet {
    pub fn all(num_aps: usize) -> Self {
        Self(vec![true; num_aps])
    }

    pub fn none(num_aps: usize) -> Self {
        Self(vec![false; num_aps])
    }

    pub fn from_mask(mask: Vec<bool>) -> Self {
        Self(mask)
    }

    pub fn from_indices(num_aps: usize, indices: impl IntoIterator<Item = usize>) -> Self {
        let mut mask = vec![false; num_aps];
        for i in indices {
            mask[i] = true;
        }
        Self(mask)
    }

    pub fn num_aps(&self) -> usize {
        self.0.len()
    }

    pub fn contains(&self, m: usize) -> bool {
        self.0[m]
    }

    pub fn len(&self) -> usize {
        self.0.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.0.iter().any(|&b| b)
    }

    pub fn indices(&self) -> Vec<usize> {
        self.iter().collect()
    }

    pub fn iter(&self) -> impl Iterator<Item = usize> + '_ {
        self.0
            .iter()
            .enumerate()
            .filter(|(_, &b)| b)
            .map(|(m, _)| m)
    }

    pub fn mask(&self) -> &[bool] {
        &self.0
    }
}

/// Per-user SE targets and the SINR targets they imply.
#[derive(Debug, Clone, PartialEq)]
pub struct SeRequirements {
    pub xi: Vec<f64>,
    pub tau_c: usize,
    pub tau_p: usize,
}

impl SeRequirements {
    pub fn new(xi: Vec<f64>, tau_c: usize, tau_p: usize) -> Result<Self> {
        if tau_p >= tau_c {
            return Err(Error::InvalidParameter(format!(
                "tau_p = {tau_p} must be below tau_c = {tau_c}"
            )));
        }
        if xi.iter().any(|x| !(x.is_finite() && *x >= 0.0)) {
            return Err(Error::InvalidParameter(
                "SE requirements must be finite and nonnegative".into(),
            ));
        }
        Ok(Self { xi, tau_c, tau_p })
    }

    pub fn prelog(&self) -> f64 {
        1.0 - self.tau_p as f64 / self.tau_c as f64
    }

    /// `nu_k = 2^(xi_k tau_c / (tau_c - tau_p)) - 1`.
    pub fn nu(&self) -> Vec<f64> {
        let scale = self.tau_c as f64 / (self.tau_c - self.tau_p) as f64;
        self.xi.iter().map(|x| (x * scale).exp2() - 1.0).collect()
    }

    pub fn any_positive(&self) -> bool {
        self.xi.iter().any(|&x| x > 0.0)
    }
}

/// Power consumption parameters of every AP.
#[derive(Debug, Clone, PartialEq)]
pub struct PowerModel {
    /// Amplifier inefficiency (>= 1).
    pub delta: Vec<f64>,
    /// Traffic-independent hardware power, watts.
    pub static_power: Vec<f64>,
    /// Traffic-dependent power, watts per bit/s.
    pub traffic_power: Vec<f64>,
    pub bandwidth_hz: f64,
    /// Transmit power cap, watts.
    pub p_max: Vec<f64>,
}

impl PowerModel {
    pub fn uniform(
        num_aps: usize,
        delta: f64,
        static_power: f64,
        traffic_power: f64,
        bandwidth_hz: f64,
        p_max: f64,
    ) -> Result<Self> {
        let model = Self {
            delta: vec![delta; num_aps],
            static_power: vec![static_power; num_aps],
            traffic_power: vec![traffic_power; num_aps],
            bandwidth_hz,
            p_max: vec![p_max; num_aps],
        };
        model.validate()?;
        Ok(model)
    }

    pub fn num_aps(&self) -> usize {
        self.delta.len()
    }

    pub fn validate(&self) -> Result<()> {
        let m = self.delta.len();
        if self.static_power.len() != m || self.traffic_power.len() != m || self.p_max.len() != m {
            return Err(Error::Dimension(
                "power model vectors differ in length".into(),
            ));
        }
        if self.delta.iter().any(|&d| !(d >= 1.0)) {
            return Err(Error::InvalidParameter(
                "amplifier inefficiency must be >= 1".into(),
            ));
        }
        let nonneg = |v: &[f64]| v.iter().all(|&x| x.is_finite() && x >= 0.0);
        if !nonneg(&self.static_power)
            || !nonneg(&self.traffic_power)
            || !(self.bandwidth_hz >= 0.0)
        {
            return Err(Error::InvalidParameter("powers must be nonnegative".into()));
        }
        if self.p_max.iter().any(|&p| !(p > 0.0)) {
            return Err(Error::InvalidParameter("P_max must be positive".into()));
        }
        Ok(())
    }

    /// `P_hw,m = P_m + B * sum_k P_bt,m * xi_k` with the SE constraints taken as tight.
    pub fn hardware_power(&self, xi: &[f64]) -> Vec<f64> {
        let total_se: f64 = xi.iter().sum();
        self.static_power
            .iter()
            .zip(&self.traffic_power)
            .map(|(p, bt)| p + self.bandwidth_hz * bt * total_se)
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PowerBreakdown {
    /// `sum_{m in A} Delta_m sum_k rho_mk`.
    pub transmit: f64,
    /// `sum_{m in A} P_hw,m`.
    pub hardware: f64,
    pub total: f64,
    /// `sum_{m in A} sum_k rho_mk` (no amplifier factor).
    pub radiated: f64,
}

/// Closed-form ergodic SINR of every user, evaluated straight from the
/// channel statistics:
///
/// ```text
/// SINR_k = G (sum_{m in A} sqrt(rho_mk gamma_mk))^2
///        / ( G sum_{j in P_k \ k} (sum_{m in A} sqrt(rho_mj gamma_mk))^2
///          + sum_j sum_{m in A} rho_mj z_mk + sigma2_dl )
/// ```
pub fn sinr(
    stats: &ChannelStats,
    scheme: Precoding,
    pilots: &PilotAssignment,
    q: &DMatrix<f64>,
    active: &ActiveSet,
) -> Result<Vec<f64>> {
    let (m_aps, k_users) = stats.beta.shape();
    if q.shape() != (m_aps, k_users) || active.num_aps() != m_aps || pilots.num_users() != k_users {
        return Err(Error::Dimension(format!(
            "q is {:?}, expected {m_aps}x{k_users}",
            q.shape()
        )));
    }
    if q.iter().any(|&v| v < 0.0) {
        return Err(Error::InvalidParameter(
            "square-root powers must be >= 0".into(),
        ));
    }
    let gain = scheme.array_gain(stats.antennas, pilots.tau_p)?;
    let z = |m: usize, k: usize| match scheme {
        Precoding::Mrt => stats.beta[(m, k)],
        Precoding::Fzf => stats.beta[(m, k)] - stats.gamma[(m, k)],
    };
    let aps = active.indices();
    let coherent = |k: usize, j: usize| -> f64 {
        aps.iter()
            .map(|&m| stats.gamma[(m, k)].sqrt() * q[(m, j)])
            .sum()
    };
    let out = (0..k_users)
        .map(|k| {
            let signal = gain * coherent(k, k).powi(2);
            let contamination: f64 = pilots
                .co_pilot(k)
                .into_iter()
                .filter(|&j| j != k)
                .map(|j| coherent(k, j).powi(2))
                .sum();
            let non_coherent: f64 = aps
                .iter()
                .map(|&m| z(m, k) * (0..k_users).map(|j| q[(m, j)].powi(2)).sum::<f64>())
                .sum();
            signal / (gain * contamination + non_coherent + stats.sigma2_dl)
        })
        .collect();
    Ok(out)
}

/// `SE_k = (1 - tau_p/tau_c) log2(1 + SINR_k)`.
pub fn se(sinr: &[f64], tau_c: usize, tau_p: usize) -> Vec<f64> {
    let prelog = 1.0 - tau_p as f64 / tau_c as f64;
    sinr.iter().map(|s| prelog * (1.0 + s).log2()).collect()
}

pub fn total_power(
    q: &DMatrix<f64>,
    active: &ActiveSet,
    model: &PowerModel,
    hardware: &[f64],
) -> PowerBreakdown {
    let mut out = PowerBreakdown::default();
    for m in active.iter() {
        let row: f64 = q.row(m).iter().map(|v| v * v).sum();
        out.radiated += row;
        out.transmit += model.delta[m] * row;
        out.hardware += hardware[m];
    }
    out.total = out.transmit + out.hardware;
    out
}

/// An AP activation and power allocation with its evaluated performance.
#[derive(Debug, Clone, PartialEq)]
pub struct Allocation {
    /// Square-root powers, `q[m][k] = sqrt(rho[m][k])`.
    pub q: DMatrix<f64>,
    pub active: ActiveSet,
    pub sinr: Vec<f64>,
    pub se: Vec<f64>,
    pub power: PowerBreakdown,
}

impl Allocation {
    /// `rho = q^2`.
    pub fn rho(&self) -> DMatrix<f64> {
        self.q.map(|v| v * v)
    }

    /// Checks the SINR targets (relative tolerance) and the per-AP caps.
    pub fn is_feasible(&self, nu: &[f64], p_max: &[f64], tol: f64) -> bool {
        let sinr_ok = self.sinr.iter().zip(nu).all(|(s, n)| *s >= n * (1.0 - tol));
        let caps_ok = (0..self.q.nrows()).all(|m| {
            let row: f64 = self.q.row(m).iter().map(|v| v * v).sum();
            if self.active.contains(m) {
                row <= p_max[m] * (1.0 + tol)
            } else {
                row == 0.0
            }
        });
        sinr_ok && caps_ok
    }
}
