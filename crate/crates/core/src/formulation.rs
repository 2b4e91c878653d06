//! Every power-minimization problem as a [`SocProgram`].
//!
//! All builders share one layout. For the APs present in the program
//! (`on` plus `free`) there is a square-root power variable `q[m,k] >= 0`
//! per user. The constraints are:
//!
//! - per-user SINR cones
//!   `|| sqrt(nu_k) [g_k^T u_j (j in P_k \ k), t[k,1..K], sigma] || <= g_k^T u_k`,
//!   where `g_k` stacks `sqrt(G gamma_mk)`;
//! - auxiliary cones `|| sqrt(z_k) o u_j || <= t[k,j]` for the non-coherent terms;
//! - per-AP caps `|| u'_m || <= sqrt(P_max,m)` (or `alpha_m sqrt(P_max,m)` for
//!   free APs of a relaxation).
//!
//! SINR and auxiliary cones are divided by `sigma_DL` so their data is O(1)
//! in the usual units; the auxiliary variables therefore hold `t / sigma_DL`.
//! APs outside the program are eliminated, not clamped to zero.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::network::{ChannelStats, PilotAssignment};
use crate::performance::{
    self, ActiveSet, Allocation, LinkCoefficients, PowerModel, Precoding, SeRequirements,
};
use crate::socp::{AffineExpr, SocConstraint, SocProgram};

/// Everything needed to pose the power-minimization problems of one drop.
#[derive(Debug, Clone)]
pub struct ProblemInstance {
    pub stats: ChannelStats,
    pub pilots: PilotAssignment,
    pub scheme: Precoding,
    pub link: LinkCoefficients,
    pub requirements: SeRequirements,
    /// SINR targets.
    pub nu: Vec<f64>,
    pub power: PowerModel,
    /// Hardware power of every AP when active, watts.
    pub hardware: Vec<f64>,
}

impl ProblemInstance {
    pub fn new(
        stats: ChannelStats,
        scheme: Precoding,
        pilots: PilotAssignment,
        requirements: SeRequirements,
        power: PowerModel,
    ) -> Result<Self> {
        let (m_aps, k_users) = stats.beta.shape();
        if pilots.num_users() != k_users || requirements.xi.len() != k_users {
            return Err(Error::Dimension(format!(
                "{k_users} users in the channel, {} pilots, {} SE targets",
                pilots.num_users(),
                requirements.xi.len()
            )));
        }
        if power.num_aps() != m_aps {
            return Err(Error::Dimension(format!(
                "{m_aps} APs in the channel, {} in the power model",
                power.num_aps()
            )));
        }
        if requirements.tau_p != pilots.tau_p || requirements.tau_c != stats.tau_c {
            return Err(Error::Dimension(
                "tau_p/tau_c differ between channel, pilots and requirements".into(),
            ));
        }
        power.validate()?;
        let link = LinkCoefficients::new(&stats, scheme, pilots.tau_p)?;
        let nu = requirements.nu();
        let hardware = power.hardware_power(&requirements.xi);
        Ok(Self {
            stats,
            pilots,
            scheme,
            link,
            requirements,
            nu,
            power,
            hardware,
        })
    }

    pub fn num_aps(&self) -> usize {
        self.stats.num_aps()
    }

    pub fn num_users(&self) -> usize {
        self.stats.num_users()
    }

    pub fn sigma_dl(&self) -> f64 {
        self.stats.sigma2_dl.sqrt()
    }

    /// Evaluates `q` on `active` with the independent closed-form SINR.
    /// Rows of inactive APs are zeroed first.
    pub fn evaluate(&self, q: &DMatrix<f64>, active: &ActiveSet) -> Result<Allocation> {
        let mut q = q.map(|v| v.max(0.0));
        for m in 0..q.nrows() {
            if !active.contains(m) {
                q.row_mut(m).fill(0.0);
            }
        }
        let sinr = performance::sinr(&self.stats, self.scheme, &self.pilots, &q, active)?;
        let se = performance::se(&sinr, self.requirements.tau_c, self.requirements.tau_p);
        let power = performance::total_power(&q, active, &self.power, &self.hardware);
        Ok(Allocation {
            q,
            active: active.clone(),
            sinr,
            se,
            power,
        })
    }

    pub fn is_feasible(&self, alloc: &Allocation) -> bool {
        alloc.is_feasible(&self.nu, &self.power.p_max, performance::FEASIBILITY_TOL)
    }

    /// Zero-power allocation with no active AP (only valid when every `xi_k = 0`).
    pub fn empty_allocation(&self) -> Result<Allocation> {
        self.evaluate(
            &DMatrix::zeros(self.num_aps(), self.num_users()),
            &ActiveSet::none(self.num_aps()),
        )
    }
}

/// Status of one AP inside a branch-and-bound box.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ApState {
    On,
    Off,
    Free,
}

/// A node of the branch-and-bound tree: every AP is fixed on, fixed off, or free.
#[derive(Debug, Clone, PartialEq)]
pub struct BnbBox {
    pub state: Vec<ApState>,
    /// Lower bound on the total power of any completion, watts.
    pub lower_bound: f64,
    pub depth: usize,
}

impl BnbBox {
    pub fn root(num_aps: usize) -> Self {
        Self {
            state: vec![ApState::Free; num_aps],
            lower_bound: f64::NEG_INFINITY,
            depth: 0,
        }
    }

    fn with(&self, s: ApState) -> Vec<usize> {
        (0..self.state.len())
            .filter(|&m| self.state[m] == s)
            .collect()
    }

    pub fn fixed_on(&self) -> Vec<usize> {
        self.with(ApState::On)
    }

    pub fn fixed_off(&self) -> Vec<usize> {
        self.with(ApState::Off)
    }

    pub fn free(&self) -> Vec<usize> {
        self.with(ApState::Free)
    }

    /// Child with AP `m` fixed; inherits the parent's bound until re-solved.
    pub fn child(&self, m: usize, on: bool) -> Self {
        let mut state = self.state.clone();
        state[m] = if on { ApState::On } else { ApState::Off };
        Self {
            state,
            lower_bound: self.lower_bound,
            depth: self.depth + 1,
        }
    }
}

/// Lower-bounding program used for branch-and-bound boxes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Relaxation {
    /// `alpha_m sqrt(P_hw,m)` entries inside the total-power norm, so a free
    /// AP contributes `alpha_m^2 P_hw,m`.
    #[default]
    Verbatim,
    /// Per-AP perspective cost `Delta_m ||q_m||^2 / alpha_m + alpha_m P_hw,m`,
    /// exact at binary `alpha` and never below the verbatim bound.
    Perspective,
}

impl Relaxation {
    pub fn name(self) -> &'static str {
        match self {
            Relaxation::Verbatim => "verbatim",
            Relaxation::Perspective => "perspective",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "verbatim" => Some(Relaxation::Verbatim),
            "perspective" => Some(Relaxation::Perspective),
            _ => None,
        }
    }
}

#[derive(Debug, Clone)]
enum Objective<'a> {
    /// `|| [sqrt(Delta) q, sqrt(sum P_hw on), alpha_m sqrt(P_hw,m)] || <= s`
    TotalPower,
    /// `|| sqrt(Delta) q || <= s` with the hardware power of `on` as offset
    Transmit,
    /// `|| sqrt(a_m) q_m || <= s`
    Weighted(&'a [f64]),
    /// `sum_m Delta_m w_m + sum_free alpha_m P_hw,m + sum_on P_hw,m` with
    /// `w_m alpha_m >= ||q_m||^2`
    Perspective,
}

/// Variable positions of a built program.
#[derive(Debug, Clone, PartialEq)]
pub struct Layout {
    num_aps: usize,
    num_users: usize,
    /// APs with power variables, ascending.
    pub aps: Vec<usize>,
    /// Index of `q[aps[i], k]` is `q_start + i * K + k`.
    q_start: usize,
    /// Epigraph variable of the norm objective (absent for perspective programs).
    pub epigraph: Option<usize>,
    /// Relaxed on/off variable per AP (free APs only).
    pub alpha: Vec<Option<usize>>,
}

impl Layout {
    pub fn q_var(&self, slot: usize, k: usize) -> usize {
        self.q_start + slot * self.num_users + k
    }

    /// Full M x K square-root power matrix; absent APs are zero, tiny negatives clipped.
    pub fn q_matrix(&self, x: &[f64]) -> DMatrix<f64> {
        let mut q = DMatrix::zeros(self.num_aps, self.num_users);
        for (slot, &m) in self.aps.iter().enumerate() {
            for k in 0..self.num_users {
                q[(m, k)] = x[self.q_var(slot, k)].max(0.0);
            }
        }
        q
    }

    pub fn alpha_values(&self, x: &[f64]) -> Vec<Option<f64>> {
        self.alpha.iter().map(|a| a.map(|j| x[j])).collect()
    }

    pub fn active_set(&self) -> ActiveSet {
        ActiveSet::from_indices(self.num_aps, self.aps.iter().copied())
    }
}

#[derive(Debug, Clone)]
pub struct Formulation {
    pub program: SocProgram,
    pub layout: Layout,
    /// Hardware power left out of the conic objective, watts.
    pub offset: f64,
}

impl Formulation {
    /// Power value of a solution: total power for fixed-set and relaxation
    /// programs, weighted transmit power for weighted programs.
    pub fn power_value(&self, x: &[f64]) -> f64 {
        match self.layout.epigraph {
            Some(s) => x[s].powi(2) + self.offset,
            None => self.program.objective_value(x) + self.offset,
        }
    }
}

fn build(
    inst: &ProblemInstance,
    on: &[usize],
    free: &[usize],
    objective: Objective<'_>,
) -> Result<Formulation> {
    let (m_aps, k_users) = (inst.num_aps(), inst.num_users());
    let mut aps: Vec<usize> = on.iter().chain(free).copied().collect();
    aps.sort_unstable();
    aps.dedup();
    if aps.is_empty() {
        return Err(Error::EmptyActiveSet);
    }
    if aps.len() != on.len() + free.len() || aps.iter().any(|&m| m >= m_aps) {
        return Err(Error::InvalidParameter(
            "AP sets overlap or are out of range".into(),
        ));
    }

    let mut p = SocProgram::new();
    let q_start = p.n_vars();
    for &m in &aps {
        for k in 0..k_users {
            p.add_var(format!("q[{m},{k}]"), 0.0, f64::INFINITY);
        }
    }
    let epigraph = match objective {
        Objective::Perspective => None,
        _ => {
            let s = p.add_var("s", f64::NEG_INFINITY, f64::INFINITY);
            p.set_cost(s, 1.0);
            Some(s)
        }
    };
    let mut alpha = vec![None; m_aps];
    for &m in free {
        alpha[m] = Some(p.add_var(format!("alpha[{m}]"), 0.0, 1.0));
    }
    let t_start = p.n_vars();
    for k in 0..k_users {
        for j in 0..k_users {
            p.add_var(format!("t[{k},{j}]"), f64::NEG_INFINITY, f64::INFINITY);
        }
    }
    let layout = Layout {
        num_aps: m_aps,
        num_users: k_users,
        aps: aps.clone(),
        q_start,
        epigraph,
        alpha,
    };
    let q = |slot: usize, k: usize| layout.q_var(slot, k);
    let t = |k: usize, j: usize| t_start + k * k_users + j;

    // objective
    let mut r = Vec::new();
    let mut offset = 0.0;
    match objective {
        Objective::TotalPower => {
            for (slot, &m) in aps.iter().enumerate() {
                let w = inst.power.delta[m].sqrt();
                r.extend((0..k_users).map(|k| AffineExpr::term(q(slot, k), w)));
            }
            let fixed_hw: f64 = on.iter().map(|&m| inst.hardware[m]).sum();
            if !on.is_empty() {
                r.push(AffineExpr::constant(fixed_hw.sqrt()));
            }
            for &m in free {
                let a = layout.alpha[m].expect("free AP has alpha");
                r.push(AffineExpr::term(a, inst.hardware[m].sqrt()));
            }
        }
        Objective::Transmit => {
            offset = on.iter().map(|&m| inst.hardware[m]).sum();
            for (slot, &m) in aps.iter().enumerate() {
                let w = inst.power.delta[m].sqrt();
                r.extend((0..k_users).map(|k| AffineExpr::term(q(slot, k), w)));
            }
        }
        Objective::Weighted(weights) => {
            for (slot, &m) in aps.iter().enumerate() {
                let w = weights[m].sqrt();
                r.extend((0..k_users).map(|k| AffineExpr::term(q(slot, k), w)));
            }
        }
        Objective::Perspective => {
            offset = on.iter().map(|&m| inst.hardware[m]).sum();
            for (slot, &m) in aps.iter().enumerate() {
                let w = p.add_var(format!("w[{m}]"), 0.0, f64::INFINITY);
                p.set_cost(w, inst.power.delta[m]);
                // rotated cone ||[2 q_m, w - a]|| <= w + a, i.e. w a >= ||q_m||^2
                let (a_terms, a_const) = match layout.alpha[m] {
                    Some(a) => {
                        p.set_cost(a, inst.hardware[m]);
                        (vec![(a, 1.0)], 0.0)
                    }
                    None => (Vec::new(), 1.0),
                };
                let mut lhs: Vec<AffineExpr> = (0..k_users)
                    .map(|k| AffineExpr::term(q(slot, k), 2.0))
                    .collect();
                let mut diff = vec![(w, 1.0)];
                diff.extend(a_terms.iter().map(|&(j, c)| (j, -c)));
                lhs.push(AffineExpr {
                    terms: diff,
                    constant: -a_const,
                });
                let mut sum = vec![(w, 1.0)];
                sum.extend(a_terms.iter().copied());
                p.add_cone(SocConstraint::new(
                    lhs,
                    AffineExpr {
                        terms: sum,
                        constant: a_const,
                    },
                ));
            }
        }
    }
    if let Some(s) = epigraph {
        p.add_cone(SocConstraint::new(r, AffineExpr::var(s)));
    }

    // SINR cones
    let inv_sigma = 1.0 / inst.sigma_dl();
    let sqrt_g = |m: usize, k: usize| inst.link.g[(m, k)].sqrt() * inv_sigma;
    for k in 0..k_users {
        let w = inst.nu[k].sqrt();
        let mut lhs = Vec::with_capacity(2 * k_users + 1);
        for j in inst.pilots.co_pilot(k).into_iter().filter(|&j| j != k) {
            lhs.push(AffineExpr::from_terms(
                aps.iter()
                    .enumerate()
                    .map(|(slot, &m)| (q(slot, j), w * sqrt_g(m, k)))
                    .collect(),
            ));
        }
        lhs.extend((0..k_users).map(|j| AffineExpr::term(t(k, j), w)));
        lhs.push(AffineExpr::constant(w));
        let rhs = AffineExpr::from_terms(
            aps.iter()
                .enumerate()
                .map(|(slot, &m)| (q(slot, k), sqrt_g(m, k)))
                .collect(),
        );
        p.add_cone(SocConstraint::new(lhs, rhs));
    }

    // per-AP caps
    for (slot, &m) in aps.iter().enumerate() {
        let row = (0..k_users).map(|k| AffineExpr::var(q(slot, k))).collect();
        let cap = inst.power.p_max[m].sqrt();
        let rhs = match layout.alpha[m] {
            Some(a) => AffineExpr::term(a, cap),
            None => AffineExpr::constant(cap),
        };
        p.add_cone(SocConstraint::new(row, rhs));
    }

    // non-coherent interference sub-norms
    for k in 0..k_users {
        for j in 0..k_users {
            let lhs = aps
                .iter()
                .enumerate()
                .map(|(slot, &m)| {
                    AffineExpr::term(q(slot, j), inst.link.z[(m, k)].sqrt() * inv_sigma)
                })
                .collect();
            p.add_cone(SocConstraint::new(lhs, AffineExpr::var(t(k, j))));
        }
    }

    Ok(Formulation {
        program: p,
        layout,
        offset,
    })
}

/// Total-power problem with the active set fixed to `active`.
pub fn build_fixed_set(inst: &ProblemInstance, active: &ActiveSet) -> Result<Formulation> {
    build(inst, &active.indices(), &[], Objective::TotalPower)
}

/// Same feasible set and minimizer as [`build_fixed_set`], with the constant
/// hardware power moved out of the norm into [`Formulation::offset`]. The
/// epigraph then measures transmit power only, so the solver's relative gap
/// controls the accuracy of the powers even when hardware power dominates.
pub fn build_fixed_set_split(inst: &ProblemInstance, active: &ActiveSet) -> Result<Formulation> {
    build(inst, &active.indices(), &[], Objective::Transmit)
}

/// Continuous relaxation of the mixed-integer problem restricted to `bx`:
/// free APs get `0 <= alpha_m <= 1` in their cap and hardware entries.
pub fn build_relaxation(inst: &ProblemInstance, bx: &BnbBox) -> Result<Formulation> {
    build_relaxation_with(inst, bx, Relaxation::Verbatim)
}

pub fn build_relaxation_with(
    inst: &ProblemInstance,
    bx: &BnbBox,
    kind: Relaxation,
) -> Result<Formulation> {
    if bx.state.len() != inst.num_aps() {
        return Err(Error::Dimension("box size differs from M".into()));
    }
    let objective = match kind {
        Relaxation::Verbatim => Objective::TotalPower,
        Relaxation::Perspective => Objective::Perspective,
    };
    build(inst, &bx.fixed_on(), &bx.free(), objective)
}

/// Active set obtained by rounding the relaxed `alpha` of the free APs (0.5 rounds up).
pub fn rounded_set(bx: &BnbBox, alpha_star: &[Option<f64>]) -> ActiveSet {
    let mask = bx
        .state
        .iter()
        .zip(alpha_star)
        .map(|(s, a)| match s {
            ApState::On => true,
            ApState::Off => false,
            ApState::Free => a.is_some_and(|v| v >= 0.5),
        })
        .collect();
    ActiveSet::from_mask(mask)
}

/// Upper-bounding problem: the fixed-set program on the rounded active set.
pub fn build_rounded(
    inst: &ProblemInstance,
    bx: &BnbBox,
    alpha_star: &[Option<f64>],
) -> Result<Formulation> {
    build_fixed_set(inst, &rounded_set(bx, alpha_star))
}

/// `minimize sum_m a_m ||q_m||^2` over all M APs under the SINR and cap cones,
/// posed as `minimize s` with `|| sqrt(a) o q || <= s`.
pub fn build_weighted(inst: &ProblemInstance, weights: &[f64]) -> Result<Formulation> {
    if weights.len() != inst.num_aps() {
        return Err(Error::Dimension("one weight per AP expected".into()));
    }
    if weights.iter().any(|&a| !(a > 0.0 && a.is_finite())) {
        return Err(Error::InvalidParameter(
            "weights must be positive and finite".into(),
        ));
    }
    let all: Vec<usize> = (0..inst.num_aps()).collect();
    build(inst, &all, &[], Objective::Weighted(weights))
}

/// All APs on, minimize total power (transmit plus the constant hardware term).
pub fn build_transmit_only(inst: &ProblemInstance) -> Result<Formulation> {
    build_fixed_set(inst, &ActiveSet::all(inst.num_aps()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::performance::Precoding;
    use crate::scenario::ScenarioParams;
    use crate::socp::{solve, SolveStatus, DEFAULT_TOL};
    use crate::testutil::small_instance;
    use proptest::prelude::*;

    fn single_link(beta: f64, xi: f64, antennas: usize) -> ProblemInstance {
        let params = ScenarioParams {
            antennas,
            tau_p: 1,
            ..ScenarioParams::default()
        };
        params
            .instance_from_beta(DMatrix::from_element(1, 1, beta), vec![0], vec![xi])
            .unwrap()
    }

    fn solved(f: &Formulation) -> Vec<f64> {
        let r = solve(&f.program, DEFAULT_TOL).unwrap();
        assert_eq!(r.status, SolveStatus::Optimal);
        r.x
    }

    #[test]
    fn single_link_matches_closed_form() {
        let inst = single_link(1e-10, 2.0, 20);
        let (b, g) = (inst.stats.beta[(0, 0)], inst.stats.gamma[(0, 0)]);
        let nu = inst.nu[0];
        let rho = nu * inst.stats.sigma2_dl / (20.0 * g - nu * b);
        let all = ActiveSet::all(1);

        let verbatim = build_fixed_set(&inst, &all).unwrap();
        assert_eq!(verbatim.program.n_vars(), 3);
        let r = solve(&verbatim.program, 1e-12).unwrap();
        let q = verbatim.layout.q_matrix(&r.x)[(0, 0)];
        assert!((q * q - rho).abs() <= 1e-6 * rho);

        let split = build_fixed_set_split(&inst, &all).unwrap();
        let x = solved(&split);
        let q = split.layout.q_matrix(&x)[(0, 0)];
        assert!((q * q - rho).abs() <= 1e-6 * rho);
        let total = inst.power.delta[0] * rho + inst.hardware[0];
        assert!((split.power_value(&x) - total).abs() <= 1e-9 * total);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn single_link_closed_form_random(beta_db in -120.0f64..-80.0, xi in 0.2f64..4.0, n in 2usize..64) {
            let inst = single_link(10f64.powf(beta_db / 10.0), xi, n);
            let (b, g) = (inst.stats.beta[(0, 0)], inst.stats.gamma[(0, 0)]);
            let nu = inst.nu[0];
            let denom = n as f64 * g - nu * b;
            let rho = nu * inst.stats.sigma2_dl / denom;
            let f = build_fixed_set_split(&inst, &ActiveSet::all(1)).unwrap();
            let r = solve(&f.program, DEFAULT_TOL).unwrap();
            if denom > 0.0 && rho <= inst.power.p_max[0] * 0.999 {
                prop_assert_eq!(r.status, SolveStatus::Optimal);
                let q = f.layout.q_matrix(&r.x)[(0, 0)];
                prop_assert!((q * q - rho).abs() <= 1e-6 * rho);
            } else if denom <= 0.0 || rho > inst.power.p_max[0] * 1.001 {
                prop_assert_eq!(r.status, SolveStatus::Infeasible);
            }
        }
    }

    #[test]
    fn impossible_target_is_infeasible() {
        let inst = single_link(1e-10, 40.0, 20);
        assert!(20.0 * inst.stats.gamma[(0, 0)] <= inst.nu[0] * inst.stats.beta[(0, 0)]);
        let f = build_fixed_set(&inst, &ActiveSet::all(1)).unwrap();
        assert_eq!(
            solve(&f.program, DEFAULT_TOL).unwrap().status,
            SolveStatus::Infeasible
        );
    }

    #[test]
    fn empty_set_rejected() {
        let inst = small_instance(1, 3, 2, Precoding::Mrt);
        assert!(matches!(
            build_fixed_set(&inst, &ActiveSet::none(3)),
            Err(Error::EmptyActiveSet)
        ));
        let mut bx = BnbBox::root(3);
        bx.state = vec![ApState::Off; 3];
        assert!(matches!(
            build_relaxation(&inst, &bx),
            Err(Error::EmptyActiveSet)
        ));
    }

    #[test]
    fn cone_count_audit() {
        let inst = small_instance(2, 5, 3, Precoding::Mrt);
        let k = 3;
        let active = ActiveSet::from_indices(5, [0, 2, 3]);
        let f = build_fixed_set(&inst, &active).unwrap();
        let cones = f.program.cones();
        assert_eq!(cones.len(), 1 + k + 3 + k * k);
        assert_eq!(cones[0].dim(), 3 * k + 2);
        for user in 0..k {
            let group = inst.pilots.co_pilot(user).len();
            assert_eq!(cones[1 + user].dim(), k + group + 1);
        }
        for m in 0..3 {
            assert_eq!(cones[1 + k + m].dim(), k + 1);
        }
        for c in &cones[1 + k + 3..] {
            assert_eq!(c.dim(), 3 + 1);
        }
    }

    #[test]
    fn epigraph_squared_is_total_power_and_sinr_is_tight() {
        for precoding in [Precoding::Mrt, Precoding::Fzf] {
            let inst = small_instance(3, 5, 3, precoding);
            let all = ActiveSet::all(5);
            let f = build_transmit_only(&inst).unwrap();
            let x = solved(&f);
            let alloc = inst.evaluate(&f.layout.q_matrix(&x), &all).unwrap();
            let s2 = f.power_value(&x);
            assert!((s2 - alloc.power.total).abs() <= 1e-6 * s2);
            for (s, nu) in alloc.sinr.iter().zip(&inst.nu) {
                assert!(*s >= nu * (1.0 - 1e-6), "{s} < {nu}");
                assert!(*s <= nu * (1.0 + 1e-4), "{s} not tight at {nu}");
            }
        }
    }

    #[test]
    fn zero_requirements_give_zero_power() {
        let base = small_instance(4, 3, 2, Precoding::Mrt);
        let params = ScenarioParams {
            antennas: 8,
            tau_p: 2,
            ..ScenarioParams::default()
        };
        let inst = params
            .instance_from_beta(
                base.stats.beta.clone(),
                base.pilots.index.clone(),
                vec![0.0; 2],
            )
            .unwrap();
        let f = build_fixed_set_split(&inst, &ActiveSet::all(3)).unwrap();
        let x = solved(&f);
        assert!(f.layout.q_matrix(&x).amax() < 1e-6);
        let g = build_transmit_only(&inst).unwrap();
        let x = solved(&g);
        assert!(g.layout.q_matrix(&x).norm_squared() < 1e-6);
    }

    #[test]
    fn all_on_box_equals_fixed_set_program() {
        let inst = small_instance(5, 4, 2, Precoding::Mrt);
        let mut bx = BnbBox::root(4);
        bx.state = vec![ApState::On; 4];
        let relaxed = build_relaxation(&inst, &bx).unwrap();
        let fixed = build_fixed_set(&inst, &ActiveSet::all(4)).unwrap();
        assert_eq!(relaxed.program.to_text(), fixed.program.to_text());
        assert_eq!(
            build_transmit_only(&inst).unwrap().program.to_text(),
            fixed.program.to_text()
        );
    }

    #[test]
    fn fixed_off_aps_are_eliminated() {
        let inst = small_instance(6, 4, 2, Precoding::Mrt);
        let bx = BnbBox::root(4).child(1, false).child(2, true);
        let f = build_relaxation(&inst, &bx).unwrap();
        assert_eq!(f.layout.aps, vec![0, 2, 3]);
        assert_eq!(f.layout.alpha.iter().filter(|a| a.is_some()).count(), 2);
        assert!(f.layout.alpha[1].is_none() && f.layout.alpha[2].is_none());
    }

    #[test]
    fn rounding_rule() {
        let bx = BnbBox::root(2);
        let set = rounded_set(&bx, &[Some(0.9), Some(0.1)]);
        assert_eq!(set.indices(), vec![0]);
        assert_eq!(rounded_set(&bx, &[Some(0.5), Some(0.5)]).len(), 2);
        let bx = BnbBox::root(3).child(2, true);
        assert_eq!(
            rounded_set(&bx, &[Some(0.2), Some(0.7), None]).indices(),
            vec![1, 2]
        );
    }

    fn subset_optimum(inst: &ProblemInstance, bx: &BnbBox) -> f64 {
        let m_aps = inst.num_aps();
        let mut best = f64::INFINITY;
        for bits in 1u32..(1 << m_aps) {
            let mask: Vec<bool> = (0..m_aps).map(|m| bits >> m & 1 == 1).collect();
            let fits = (0..m_aps).all(|m| match bx.state[m] {
                ApState::On => mask[m],
                ApState::Off => !mask[m],
                ApState::Free => true,
            });
            if !fits {
                continue;
            }
            let f = build_fixed_set(inst, &ActiveSet::from_mask(mask)).unwrap();
            let r = solve(&f.program, DEFAULT_TOL).unwrap();
            if r.is_optimal() {
                best = best.min(f.power_value(&r.x));
            }
        }
        best
    }

    #[test]
    fn relaxation_sandwich_on_small_boxes() {
        for seed in 0..6 {
            let inst = small_instance(100 + seed, 4, 2, Precoding::Mrt);
            let boxes = [
                BnbBox::root(4),
                BnbBox::root(4).child(0, true),
                BnbBox::root(4).child(1, false).child(3, true),
            ];
            for bx in &boxes {
                let exact = subset_optimum(&inst, bx);
                for kind in [Relaxation::Verbatim, Relaxation::Perspective] {
                    let f = build_relaxation_with(&inst, bx, kind).unwrap();
                    let r = solve(&f.program, DEFAULT_TOL).unwrap();
                    if !exact.is_finite() {
                        continue;
                    }
                    assert!(r.is_optimal());
                    let lb = f.power_value(&r.x);
                    assert!(lb <= exact * (1.0 + 1e-6), "{kind:?} lb {lb} > {exact}");
                    let rounded = build_rounded(&inst, bx, &f.layout.alpha_values(&r.x));
                    if let Ok(g) = rounded {
                        let rr = solve(&g.program, DEFAULT_TOL).unwrap();
                        if rr.is_optimal() {
                            let ub = g.power_value(&rr.x);
                            assert!(exact <= ub * (1.0 + 1e-6));
                            assert!(lb <= ub * (1.0 + 1e-6));
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn perspective_bound_dominates_verbatim() {
        for seed in 0..4 {
            let inst = small_instance(200 + seed, 5, 2, Precoding::Mrt);
            let bx = BnbBox::root(5).child(seed as usize, true);
            let value = |kind| {
                let f = build_relaxation_with(&inst, &bx, kind).unwrap();
                f.power_value(&solved(&f))
            };
            let (v, p) = (value(Relaxation::Verbatim), value(Relaxation::Perspective));
            assert!(p >= v * (1.0 - 1e-6), "{p} < {v}");
        }
    }

    #[test]
    fn delta_weights_reproduce_transmit_only() {
        let inst = small_instance(7, 4, 2, Precoding::Mrt);
        let all = ActiveSet::all(4);
        let f = build_weighted(&inst, &inst.power.delta).unwrap();
        let w = inst
            .evaluate(&f.layout.q_matrix(&solved(&f)), &all)
            .unwrap();
        let g = build_transmit_only(&inst).unwrap();
        let t = inst
            .evaluate(&g.layout.q_matrix(&solved(&g)), &all)
            .unwrap();
        assert!((w.power.transmit - t.power.transmit).abs() <= 1e-5 * t.power.transmit);
    }

    #[test]
    fn weights_do_not_move_single_link_optimum() {
        let inst = single_link(3e-10, 2.0, 16);
        let f = build_fixed_set_split(&inst, &ActiveSet::all(1)).unwrap();
        let q0 = f.layout.q_matrix(&solved(&f))[(0, 0)];
        for a in [1e-3, 1.0, 1e3] {
            let g = build_weighted(&inst, &[a]).unwrap();
            let q = g.layout.q_matrix(&solved(&g))[(0, 0)];
            assert!((q - q0).abs() <= 1e-6 * q0);
        }
    }

    #[test]
    fn heavier_weight_suppresses_its_ap() {
        let params = ScenarioParams {
            antennas: 8,
            tau_p: 1,
            ..ScenarioParams::default()
        };
        let inst = params
            .instance_from_beta(DMatrix::from_element(2, 1, 1e-10), vec![0], vec![2.0])
            .unwrap();
        let f = build_weighted(&inst, &[100.0, 1.0]).unwrap();
        let q = f.layout.q_matrix(&solved(&f));
        assert!(q.row(0).norm() <= q.row(1).norm());
        assert!(matches!(
            build_weighted(&inst, &[0.0, 1.0]),
            Err(Error::InvalidParameter(_))
        ));
    }
}
