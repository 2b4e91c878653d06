use crate::formulation::ProblemInstance;
use crate::performance::Precoding;
use crate::scenario::{ScenarioParams, SeTarget};

/// Small drop in the default area: N = 8, tau_p = 2.
pub fn small_params(m: usize, k: usize, precoding: Precoding) -> ScenarioParams {
    ScenarioParams {
        num_aps: m,
        num_users: k,
        antennas: 8,
        tau_p: 2,
        se: SeTarget::Fixed(1.0),
        precoding,
        ..ScenarioParams::default()
    }
}

pub fn small_instance(seed: u64, m: usize, k: usize, precoding: Precoding) -> ProblemInstance {
    small_params(m, k, precoding).build_drop(seed, 0).unwrap()
}
