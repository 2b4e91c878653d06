//! Low-complexity AP turn-off: IRLS group sparsity with theta-ordered
//! bisection (Algorithm 1), transmit-power ordering with bisection
//! (Algorithm 2), and the disjoint two-stage baseline.

use nalgebra::DMatrix;

use crate::bnb::solve_fixed_set;
use crate::error::{Error, Result};
use crate::formulation::{build_weighted, ProblemInstance};
use crate::performance::{ActiveSet, Allocation};
use crate::socp::{self, SolveStatus};

#[derive(Debug, Clone, PartialEq)]
pub struct IrlsParams {
    /// Exponent of the group norm, in (0, 2).
    pub p_tilde: f64,
    /// Constant damping; `None` means `1e-3 * sqrt(max_m P_max,m)`.
    pub epsilon: Option<f64>,
    /// Stop when the objective change is at most this fraction of the first objective.
    pub stop_rel: f64,
    pub max_iter: usize,
    /// Rows with `||rho_m||^2` at or below this many watts count as off.
    pub off_threshold: f64,
    pub solver_tol: f64,
}

impl Default for IrlsParams {
    fn default() -> Self {
        Self {
            p_tilde: 1.0,
            epsilon: None,
            stop_rel: 1e-4,
            max_iter: 50,
            off_threshold: 1e-8,
            solver_tol: socp::DEFAULT_TOL,
        }
    }
}

/// Per-iteration record of an IRLS run.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct IrlsTrace {
    /// `sum_m Delta_m ||rho_m||^p_tilde` after each solve.
    pub objective: Vec<f64>,
    /// Weights used by each solve.
    pub weights: Vec<Vec<f64>>,
    /// `||rho_m||^2` (watts) of every AP after each solve.
    pub row_power: Vec<Vec<f64>>,
    /// APs above the off threshold after each solve.
    pub active: Vec<usize>,
    pub epsilon: f64,
    pub stop_threshold: f64,
    pub converged: bool,
    /// A solve failed mid-loop; the last successful iterate was kept.
    pub solver_failed: bool,
}

impl IrlsTrace {
    pub fn iterations(&self) -> usize {
        self.objective.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IrlsOutcome {
    pub q: DMatrix<f64>,
    pub trace: IrlsTrace,
}

impl IrlsOutcome {
    pub fn support(&self, off_threshold: f64) -> ActiveSet {
        ActiveSet::from_mask(
            (0..self.q.nrows())
                .map(|m| self.q.row(m).norm_squared() > off_threshold)
                .collect(),
        )
    }
}

fn group_objective(q: &DMatrix<f64>, delta: &[f64], p_tilde: f64) -> f64 {
    (0..q.nrows())
        .map(|m| delta[m] * q.row(m).norm().powf(p_tilde))
        .sum()
}

/// Iteratively reweighted minimization of `sum_m Delta_m ||rho_m||^p_tilde`.
pub fn irls_sparsify(inst: &ProblemInstance, params: &IrlsParams) -> Result<IrlsOutcome> {
    let p = params.p_tilde;
    if !(p > 0.0 && p < 2.0) {
        return Err(Error::InvalidParameter("p_tilde must lie in (0, 2)".into()));
    }
    let m_aps = inst.num_aps();
    let delta = &inst.power.delta;
    let eps = params
        .epsilon
        .unwrap_or_else(|| 1e-3 * inst.power.p_max.iter().cloned().fold(0.0, f64::max).sqrt());
    if !(eps > 0.0) {
        return Err(Error::InvalidParameter(
            "IRLS damping must be positive".into(),
        ));
    }
    let mut trace = IrlsTrace {
        epsilon: eps,
        ..Default::default()
    };
    let mut weights = vec![1.0; m_aps];
    let mut q: Option<DMatrix<f64>> = None;
    for _ in 0..params.max_iter.max(1) {
        let f = build_weighted(inst, &weights)?;
        let r = socp::solve(&f.program, params.solver_tol)?;
        if r.status != SolveStatus::Optimal {
            if q.is_none() {
                return Err(match r.status {
                    SolveStatus::Infeasible => Error::Infeasible,
                    s => Error::Solver(format!("weighted program ended {s:?}")),
                });
            }
            trace.solver_failed = true;
            break;
        }
        let qn = f.layout.q_matrix(&r.x);
        let obj = group_objective(&qn, delta, p);
        let rows: Vec<f64> = (0..m_aps).map(|m| qn.row(m).norm_squared()).collect();
        trace.weights.push(weights.clone());
        trace
            .active
            .push(rows.iter().filter(|&&v| v > params.off_threshold).count());
        weights = rows
            .iter()
            .zip(delta)
            .map(|(&r2, &d)| d * p / 2.0 * (r2 + eps * eps).powf(p / 2.0 - 1.0))
            .collect();
        trace.row_power.push(rows);
        let prev = trace.objective.last().copied();
        trace.objective.push(obj);
        q = Some(qn);
        if trace.objective.len() == 1 {
            trace.stop_threshold = params.stop_rel * obj;
        }
        if let Some(prev) = prev {
            if (prev - obj).abs() <= trace.stop_threshold {
                trace.converged = true;
                break;
            }
        }
    }
    Ok(IrlsOutcome {
        q: q.expect("at least one successful solve"),
        trace,
    })
}

/// Channel statistic weighting the received-power score of each AP.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ThetaChannel {
    #[default]
    Beta,
    Gamma,
}

impl ThetaChannel {
    pub fn name(self) -> &'static str {
        match self {
            ThetaChannel::Beta => "beta",
            ThetaChannel::Gamma => "gamma",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "beta" => Some(ThetaChannel::Beta),
            "gamma" => Some(ThetaChannel::Gamma),
            _ => None,
        }
    }
}

/// `theta_m = N sum_k rho_mk c_mk` and the APs sorted by ascending theta
/// (ties keep index order).
pub fn theta_ordering(
    q: &DMatrix<f64>,
    channel: &DMatrix<f64>,
    antennas: usize,
) -> (Vec<f64>, Vec<usize>) {
    let n = antennas as f64;
    let theta: Vec<f64> = (0..q.nrows())
        .map(|m| {
            n * q
                .row(m)
                .iter()
                .zip(channel.row(m).iter())
                .map(|(qv, c)| qv * qv * c)
                .sum::<f64>()
        })
        .collect();
    let mut order: Vec<usize> = (0..theta.len()).collect();
    order.sort_by(|&a, &b| theta[a].total_cmp(&theta[b]));
    (theta, order)
}

#[derive(Debug, Clone)]
pub struct Turnoff {
    pub allocation: Allocation,
    pub solves: usize,
    pub m_low: usize,
    pub m_up: usize,
}

/// Bisection on how many of the lowest-theta APs to switch off.
///
/// Positions are 1-based: a step with midpoint `m` keeps
/// `order[m..=M]` active. `initial` must be feasible and is returned unless
/// some step finds a cheaper feasible set.
pub fn bisection_turnoff(
    inst: &ProblemInstance,
    order: &[usize],
    initial: Allocation,
    tol: f64,
) -> Result<Turnoff> {
    let m_aps = inst.num_aps();
    if order.len() != m_aps {
        return Err(Error::Dimension(
            "order must be a permutation of all APs".into(),
        ));
    }
    let mut best = initial;
    let (mut m_low, mut m_up) = (1usize, m_aps);
    let mut solves = 0;
    while m_up - m_low > 1 {
        let mid = (m_low + m_up) / 2;
        let set = ActiveSet::from_indices(m_aps, order[mid - 1..].iter().copied());
        solves += 1;
        let found = match solve_fixed_set(inst, &set, tol) {
            Ok(a) => a.filter(|a| inst.is_feasible(a)),
            Err(Error::Solver(_)) => None,
            Err(e) => return Err(e),
        };
        match found {
            Some(a) if a.power.total < best.power.total => {
                best = a;
                m_low = mid;
            }
            _ => m_up = mid,
        }
    }
    Ok(Turnoff {
        allocation: best,
        solves,
        m_low,
        m_up,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct HeuristicParams {
    pub irls: IrlsParams,
    pub theta: ThetaChannel,
    pub solver_tol: f64,
}

impl Default for HeuristicParams {
    fn default() -> Self {
        Self {
            irls: IrlsParams::default(),
            theta: ThetaChannel::Beta,
            solver_tol: socp::DEFAULT_TOL,
        }
    }
}

#[derive(Debug, Clone)]
pub struct HeuristicResult {
    pub allocation: Allocation,
    /// Conic programs solved in total.
    pub solves: usize,
    pub bisection_solves: usize,
    pub irls: Option<IrlsTrace>,
    pub order: Vec<usize>,
}

fn all_on(inst: &ProblemInstance, tol: f64) -> Result<Allocation> {
    solve_fixed_set(inst, &ActiveSet::all(inst.num_aps()), tol)?
        .filter(|a| inst.is_feasible(a))
        .ok_or(Error::Infeasible)
}

fn theta_channel(inst: &ProblemInstance, ch: ThetaChannel) -> &DMatrix<f64> {
    match ch {
        ThetaChannel::Beta => &inst.stats.beta,
        ThetaChannel::Gamma => &inst.stats.gamma,
    }
}

/// Sparsity-guided turn-off: IRLS, theta ordering of its powers, then
/// bisection starting from the all-on optimum.
pub fn algorithm1(inst: &ProblemInstance, params: &HeuristicParams) -> Result<HeuristicResult> {
    if !inst.requirements.any_positive() {
        return trivial(inst);
    }
    let irls = irls_sparsify(inst, &params.irls)?;
    let (_, order) = theta_ordering(
        &irls.q,
        theta_channel(inst, params.theta),
        inst.stats.antennas,
    );
    let initial = all_on(inst, params.solver_tol)?;
    let t = bisection_turnoff(inst, &order, initial, params.solver_tol)?;
    Ok(HeuristicResult {
        allocation: t.allocation,
        solves: irls.trace.iterations() + 1 + t.solves,
        bisection_solves: t.solves,
        irls: Some(irls.trace),
        order,
    })
}

/// Transmit-power-guided turn-off: one all-on solve, theta ordering, bisection.
pub fn algorithm2(inst: &ProblemInstance, params: &HeuristicParams) -> Result<HeuristicResult> {
    if !inst.requirements.any_positive() {
        return trivial(inst);
    }
    let initial = all_on(inst, params.solver_tol)?;
    let (_, order) = theta_ordering(
        &initial.q,
        theta_channel(inst, params.theta),
        inst.stats.antennas,
    );
    let t = bisection_turnoff(inst, &order, initial, params.solver_tol)?;
    Ok(HeuristicResult {
        allocation: t.allocation,
        solves: 1 + t.solves,
        bisection_solves: t.solves,
        irls: None,
        order,
    })
}

/// Two-stage baseline: IRLS picks the active set, one fixed-set solve sets the powers.
pub fn disjoint_sparsity(
    inst: &ProblemInstance,
    params: &HeuristicParams,
) -> Result<HeuristicResult> {
    if !inst.requirements.any_positive() {
        return trivial(inst);
    }
    let irls = irls_sparsify(inst, &params.irls)?;
    let support = irls.support(params.irls.off_threshold);
    let mut solves = irls.trace.iterations();
    let staged = if support.is_empty() {
        None
    } else {
        solves += 1;
        match solve_fixed_set(inst, &support, params.solver_tol) {
            Ok(a) => a.filter(|a| inst.is_feasible(a)),
            Err(Error::Solver(_)) => None,
            Err(e) => return Err(e),
        }
    };
    let allocation = match staged {
        Some(a) => a,
        None => {
            solves += 1;
            all_on(inst, params.solver_tol)?
        }
    };
    Ok(HeuristicResult {
        allocation,
        solves,
        bisection_solves: 0,
        irls: Some(irls.trace),
        order: Vec::new(),
    })
}

/// All APs on with optimized powers.
pub fn transmit_only(inst: &ProblemInstance, params: &HeuristicParams) -> Result<HeuristicResult> {
    if !inst.requirements.any_positive() {
        let allocation = inst.evaluate(
            &DMatrix::zeros(inst.num_aps(), inst.num_users()),
            &ActiveSet::all(inst.num_aps()),
        )?;
        return Ok(HeuristicResult {
            allocation,
            solves: 0,
            bisection_solves: 0,
            irls: None,
            order: Vec::new(),
        });
    }
    Ok(HeuristicResult {
        allocation: all_on(inst, params.solver_tol)?,
        solves: 1,
        bisection_solves: 0,
        irls: None,
        order: Vec::new(),
    })
}

fn trivial(inst: &ProblemInstance) -> Result<HeuristicResult> {
    Ok(HeuristicResult {
        allocation: inst.empty_allocation()?,
        solves: 0,
        bisection_solves: 0,
        irls: None,
        order: Vec::new(),
    })
}
