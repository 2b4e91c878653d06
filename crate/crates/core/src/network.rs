//! Random network drops and the large-scale channel statistics they induce.
//!
//! Every random operation takes an explicit `u64` seed and draws from a
//! ChaCha8 stream, so a drop is reproducible bit-for-bit on any platform.
//! [`derive_seed`] splits one experiment seed into independent per-drop,
//! per-purpose seeds.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

pub type Point = [f64; 2];

/// Seeded generator used for every random draw in the crate.
pub fn seeded_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Mixes `(base, drop, tag)` into a fresh seed (splitmix64 finalizer).
pub fn derive_seed(base: u64, drop: u64, tag: u64) -> u64 {
    let mut x =
        base ^ drop.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ tag.wrapping_mul(0xD1B5_4A32_D192_ED03);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeometryParams {
    pub side_length: f64,
    pub min_ap_spacing: f64,
    pub ap_height: f64,
    /// Rejection-sampling attempts allowed per AP.
    pub max_attempts_per_ap: u64,
}

impl Default for GeometryParams {
    fn default() -> Self {
        Self {
            side_length: 1000.0,
            min_ap_spacing: 50.0,
            ap_height: 10.0,
            max_attempts_per_ap: 1_000_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Geometry {
    pub side_length: f64,
    pub min_ap_spacing: f64,
    pub ap_height: f64,
    pub ap_positions: Vec<Point>,
    pub user_positions: Vec<Point>,
}

impl Geometry {
    pub fn num_aps(&self) -> usize {
        self.ap_positions.len()
    }

    pub fn num_users(&self) -> usize {
        self.user_positions.len()
    }

    /// AP-to-user distances including the height offset, `[m][k]`.
    pub fn distances(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.num_aps(), self.num_users(), |m, k| {
            wrap_distance(
                self.ap_positions[m],
                self.user_positions[k],
                self.side_length,
                self.ap_height,
            )
        })
    }
}

/// Per-axis wrap-around offset on a torus of the given side.
fn torus_offset(a: f64, b: f64, side: f64) -> f64 {
    let d = (a - b).abs();
    d.min(side - d)
}

fn horizontal_wrap(a: Point, b: Point, side: f64) -> f64 {
    torus_offset(a[0], b[0], side).hypot(torus_offset(a[1], b[1], side))
}

/// Wrap-around distance between two points with a vertical offset of
/// `ap_height` between the two layers.
pub fn wrap_distance(a: Point, b: Point, side_length: f64, ap_height: f64) -> f64 {
    horizontal_wrap(a, b, side_length).hypot(ap_height)
}

/// Places `num_aps` APs by rejection sampling under the minimum-spacing
/// rule and `num_users` users uniformly in the square.
pub fn generate_layout(
    num_aps: usize,
    num_users: usize,
    params: &GeometryParams,
    seed: u64,
) -> Result<Geometry> {
    if num_aps == 0 || num_users == 0 {
        return Err(Error::InvalidParameter(
            "layout needs at least one AP and one user".into(),
        ));
    }
    if !(params.side_length > 0.0) || params.min_ap_spacing < 0.0 || params.ap_height < 0.0 {
        return Err(Error::InvalidParameter(format!(
            "bad geometry parameters {params:?}"
        )));
    }
    let side = params.side_length;
    let mut rng = seeded_rng(seed);
    let draw = |rng: &mut ChaCha8Rng| -> Point {
        [rng.random::<f64>() * side, rng.random::<f64>() * side]
    };

    let mut aps: Vec<Point> = Vec::with_capacity(num_aps);
    for ap in 0..num_aps {
        let mut placed = false;
        for _ in 0..params.max_attempts_per_ap {
            let candidate = draw(&mut rng);
            if aps
                .iter()
                .all(|&p| horizontal_wrap(p, candidate, side) >= params.min_ap_spacing)
            {
                aps.push(candidate);
                placed = true;
                break;
            }
        }
        if !placed {
            return Err(Error::Placement {
                ap,
                attempts: params.max_attempts_per_ap,
                spacing: params.min_ap_spacing,
            });
        }
    }
    let users = (0..num_users).map(|_| draw(&mut rng)).collect();

    Ok(Geometry {
        side_length: side,
        min_ap_spacing: params.min_ap_spacing,
        ap_height: params.ap_height,
        ap_positions: aps,
        user_positions: users,
    })
}

/// Path loss and correlated shadowing: `beta_dB = intercept - slope*log10(d) + z`.
#[derive(Debug, Clone, PartialEq)]
pub struct ShadowParams {
    pub intercept_db: f64,
    pub slope_db: f64,
    /// Shadowing variance in dB^2.
    pub variance_db2: f64,
    /// User-to-user decorrelation distance in meters (correlation halves per unit).
    pub decorrelation_m: f64,
}

impl Default for ShadowParams {
    fn default() -> Self {
        Self {
            intercept_db: -30.5,
            slope_db: 36.7,
            variance_db2: 16.0,
            decorrelation_m: 9.0,
        }
    }
}

impl ShadowParams {
    pub fn pathloss_db(&self, distance_m: f64) -> f64 {
        self.intercept_db - self.slope_db * distance_m.log10()
    }

    /// Covariance (dB^2) between shadowing terms of two users at distance `delta` seen by one AP.
    pub fn covariance(&self, delta: f64) -> f64 {
        self.variance_db2 * 2f64.powf(-delta / self.decorrelation_m)
    }
}

/// User-to-user shadowing covariance matrix (wrap-around user distances).
pub fn shadow_covariance(geometry: &Geometry, shadow: &ShadowParams) -> DMatrix<f64> {
    let users = &geometry.user_positions;
    DMatrix::from_fn(users.len(), users.len(), |i, j| {
        shadow.covariance(horizontal_wrap(users[i], users[j], geometry.side_length))
    })
}

/// Lower Cholesky factor of the shadowing covariance. A diagonal load of
/// `1e-10 * variance` is added when the plain factorization fails.
pub fn shadow_factor(cov: &DMatrix<f64>, variance_db2: f64) -> Result<DMatrix<f64>> {
    if let Some(ch) = cov.clone().cholesky() {
        return Ok(ch.l());
    }
    let n = cov.nrows();
    let loaded = cov + DMatrix::identity(n, n) * (1e-10 * variance_db2);
    loaded.cholesky().map(|ch| ch.l()).ok_or(Error::Covariance)
}

/// Large-scale fading coefficients `beta[m][k]` in linear scale.
///
/// Shadowing is independent across APs and correlated across users of the
/// same AP; each AP draws one K-dimensional Gaussian vector.
pub fn large_scale_fading(
    geometry: &Geometry,
    shadow: &ShadowParams,
    seed: u64,
) -> Result<DMatrix<f64>> {
    let cov = shadow_covariance(geometry, shadow);
    let factor = shadow_factor(&cov, shadow.variance_db2)?;
    let dist = geometry.distances();
    let (m_aps, k_users) = dist.shape();
    let mut rng = seeded_rng(seed);
    let mut beta = DMatrix::zeros(m_aps, k_users);
    for m in 0..m_aps {
        let white = DVector::from_fn(k_users, |_, _| rng.sample::<f64, _>(StandardNormal));
        let z = &factor * white;
        for k in 0..k_users {
            let db = shadow.pathloss_db(dist[(m, k)]) + z[k];
            beta[(m, k)] = 10f64.powf(db / 10.0);
        }
    }
    Ok(beta)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PilotAssignment {
    pub tau_p: usize,
    /// Pilot index (0-based) of every user.
    pub index: Vec<usize>,
    /// Pilot transmit power of every user, watts.
    pub power: Vec<f64>,
}

impl PilotAssignment {
    pub fn num_users(&self) -> usize {
        self.index.len()
    }

    /// Users sharing user `k`'s pilot, `k` included, in ascending order.
    pub fn co_pilot(&self, k: usize) -> Vec<usize> {
        let pilot = self.index[k];
        (0..self.index.len())
            .filter(|&j| self.index[j] == pilot)
            .collect()
    }

    pub fn group_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.tau_p];
        for &i in &self.index {
            sizes[i] += 1;
        }
        sizes
    }
}

/// Random balanced pilot assignment: group sizes differ by at most one.
pub fn assign_pilots(
    num_users: usize,
    tau_p: usize,
    pilot_power: f64,
    seed: u64,
) -> Result<PilotAssignment> {
    if num_users == 0 || tau_p == 0 {
        return Err(Error::InvalidParameter(
            "pilot assignment needs K >= 1 and tau_p >= 1".into(),
        ));
    }
    if !(pilot_power > 0.0) {
        return Err(Error::InvalidParameter(
            "pilot power must be positive".into(),
        ));
    }
    let mut order: Vec<usize> = (0..num_users).collect();
    order.shuffle(&mut seeded_rng(seed));
    let mut index = vec![0; num_users];
    for (slot, &user) in order.iter().enumerate() {
        index[user] = slot % tau_p;
    }
    Ok(PilotAssignment {
        tau_p,
        index,
        power: vec![pilot_power; num_users],
    })
}

/// MMSE estimate variances `gamma[m][k]`.
pub fn mmse_variance(
    beta: &DMatrix<f64>,
    pilots: &PilotAssignment,
    sigma2_ul: f64,
) -> Result<DMatrix<f64>> {
    let (m_aps, k_users) = beta.shape();
    if pilots.num_users() != k_users {
        return Err(Error::Dimension(format!(
            "beta has {k_users} users, pilot assignment has {}",
            pilots.num_users()
        )));
    }
    let tau_p = pilots.tau_p as f64;
    let groups: Vec<Vec<usize>> = (0..k_users).map(|k| pilots.co_pilot(k)).collect();
    Ok(DMatrix::from_fn(m_aps, k_users, |m, k| {
        let contamination: f64 = groups[k]
            .iter()
            .map(|&j| pilots.power[j] * beta[(m, j)])
            .sum();
        tau_p * pilots.power[k] * beta[(m, k)].powi(2) / (tau_p * contamination + sigma2_ul)
    }))
}

pub fn dbm_to_watts(dbm: f64) -> f64 {
    10f64.powf((dbm - 30.0) / 10.0)
}

/// Large-scale statistics of one drop.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelStats {
    pub beta: DMatrix<f64>,
    pub gamma: DMatrix<f64>,
    pub sigma2_ul: f64,
    pub sigma2_dl: f64,
    pub tau_c: usize,
    pub antennas: usize,
}

impl ChannelStats {
    pub fn new(
        beta: DMatrix<f64>,
        pilots: &PilotAssignment,
        sigma2_ul: f64,
        sigma2_dl: f64,
        tau_c: usize,
        antennas: usize,
    ) -> Result<Self> {
        if pilots.tau_p >= tau_c {
            return Err(Error::InvalidParameter(format!(
                "tau_p = {} must be below tau_c = {tau_c}",
                pilots.tau_p
            )));
        }
        if antennas == 0 || !(sigma2_dl > 0.0) || sigma2_ul < 0.0 {
            return Err(Error::InvalidParameter(
                "need N >= 1, sigma2_dl > 0, sigma2_ul >= 0".into(),
            ));
        }
        if beta.iter().any(|b| !(b.is_finite() && *b > 0.0)) {
            return Err(Error::InvalidParameter(
                "beta must be finite and positive".into(),
            ));
        }
        let gamma = mmse_variance(&beta, pilots, sigma2_ul)?;
        Ok(Self {
            beta,
            gamma,
            sigma2_ul,
            sigma2_dl,
            tau_c,
            antennas,
        })
    }

    pub fn num_aps(&self) -> usize {
        self.beta.nrows()
    }

    pub fn num_users(&self) -> usize {
        self.beta.ncols()
    }
}
