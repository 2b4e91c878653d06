//! Exact AP selection by branch-and-bound, and the exhaustive oracle.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashSet};
use std::time::Instant;

use crate::error::{Error, Result};
use crate::formulation::{
    build_fixed_set_split, build_relaxation_with, rounded_set, ApState, BnbBox, ProblemInstance,
    Relaxation,
};
use crate::performance::{ActiveSet, Allocation};
use crate::socp::{self, SolveStatus};

pub const EXHAUSTIVE_MAX_APS: usize = 12;

#[derive(Debug, Clone, PartialEq)]
pub struct BnbOptions {
    /// Relative optimality gap at which boxes are pruned.
    pub gap_tol: f64,
    /// Maximum number of relaxations solved.
    pub node_cap: usize,
    pub relaxation: Relaxation,
    pub solver_tol: f64,
}

impl Default for BnbOptions {
    fn default() -> Self {
        Self {
            gap_tol: 1e-6,
            node_cap: 100_000,
            relaxation: Relaxation::Verbatim,
            solver_tol: socp::DEFAULT_TOL,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BnbStatus {
    Optimal,
    /// Node cap hit; the allocation is the incumbent, not a certified optimum.
    BudgetExceeded,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct BnbCounters {
    pub boxes_created: usize,
    pub boxes_pruned: usize,
    pub relaxations_solved: usize,
    pub rounded_solved: usize,
    pub rounded_cache_hits: usize,
    pub numerical_failures: usize,
    /// Children whose bound fell below the parent's bound beyond solver tolerance.
    pub monotonicity_violations: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GapPoint {
    pub relaxations: usize,
    pub lower_bound: f64,
    pub incumbent: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BnbState {
    pub status: BnbStatus,
    pub counters: BnbCounters,
    pub incumbent: f64,
    /// Smallest lower bound over open boxes (the incumbent when none remain).
    pub lower_bound: f64,
    pub trajectory: Vec<GapPoint>,
    pub seconds: f64,
}

impl BnbState {
    pub fn gap(&self) -> f64 {
        (self.incumbent - self.lower_bound).max(0.0)
    }

    pub fn relative_gap(&self) -> f64 {
        if self.incumbent > 0.0 {
            self.gap() / self.incumbent
        } else {
            0.0
        }
    }
}

#[derive(Debug, Clone)]
pub struct BnbResult {
    pub allocation: Allocation,
    pub state: BnbState,
}

/// Minimum total power with the active set fixed. `Ok(None)` when the SE
/// targets cannot be met with these APs.
pub fn solve_fixed_set(
    inst: &ProblemInstance,
    active: &ActiveSet,
    tol: f64,
) -> Result<Option<Allocation>> {
    if active.is_empty() {
        return Ok(None);
    }
    let f = build_fixed_set_split(inst, active)?;
    let r = socp::solve(&f.program, tol)?;
    match r.status {
        SolveStatus::Optimal => Ok(Some(inst.evaluate(&f.layout.q_matrix(&r.x), active)?)),
        SolveStatus::Infeasible => Ok(None),
        s => Err(Error::Solver(format!("fixed-set program ended {s:?}"))),
    }
}

struct Open {
    bound: f64,
    seq: usize,
    bx: BnbBox,
    alpha: Vec<Option<f64>>,
}

impl PartialEq for Open {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for Open {}
impl PartialOrd for Open {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Open {
    // min-heap on (bound, seq)
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .bound
            .total_cmp(&self.bound)
            .then(other.seq.cmp(&self.seq))
    }
}

struct Search<'a> {
    inst: &'a ProblemInstance,
    opts: &'a BnbOptions,
    counters: BnbCounters,
    incumbent: Allocation,
    tried: HashSet<Vec<bool>>,
    seq: usize,
}

enum Bound {
    Infeasible,
    Value(f64, Vec<Option<f64>>),
    Unknown,
}

impl Search<'_> {
    fn best(&self) -> f64 {
        self.incumbent.power.total
    }

    fn prunable(&self, bound: f64) -> bool {
        bound >= self.best() * (1.0 - self.opts.gap_tol)
    }

    fn try_set(&mut self, set: ActiveSet) -> Result<()> {
        if set.is_empty() {
            return Ok(());
        }
        if !self.tried.insert(set.mask().to_vec()) {
            self.counters.rounded_cache_hits += 1;
            return Ok(());
        }
        self.counters.rounded_solved += 1;
        let found = match solve_fixed_set(self.inst, &set, self.opts.solver_tol) {
            Ok(a) => a,
            Err(Error::Solver(_)) => {
                self.counters.numerical_failures += 1;
                None
            }
            Err(e) => return Err(e),
        };
        if let Some(a) = found.filter(|a| self.inst.is_feasible(a)) {
            if a.power.total < self.best() {
                self.incumbent = a;
            }
        }
        Ok(())
    }

    fn bound(&mut self, bx: &BnbBox) -> Result<Bound> {
        if bx.fixed_on().is_empty() && bx.free().is_empty() {
            return Ok(Bound::Infeasible);
        }
        let f = build_relaxation_with(self.inst, bx, self.opts.relaxation)?;
        self.counters.relaxations_solved += 1;
        let r = socp::solve(&f.program, self.opts.solver_tol)?;
        match r.status {
            SolveStatus::Optimal => {
                let alpha = f.layout.alpha_values(&r.x);
                Ok(Bound::Value(f.power_value(&r.x), alpha))
            }
            SolveStatus::Infeasible => Ok(Bound::Infeasible),
            _ => {
                self.counters.numerical_failures += 1;
                Ok(Bound::Unknown)
            }
        }
    }

    /// Bounds `bx`, tries its rounded set, and queues it unless pruned.
    fn visit(&mut self, mut bx: BnbBox, parent: f64, heap: &mut BinaryHeap<Open>) -> Result<()> {
        self.counters.boxes_created += 1;
        // at least one AP serves the users
        if let ([], [m]) = (bx.fixed_on().as_slice(), bx.free().as_slice()) {
            bx.state[*m] = ApState::On;
        }
        let (bound, alpha) = match self.bound(&bx)? {
            Bound::Infeasible => {
                self.counters.boxes_pruned += 1;
                return Ok(());
            }
            Bound::Value(v, a) => {
                let slack = 1e-6 * (1.0 + parent.abs());
                if parent.is_finite() && v < parent - slack {
                    self.counters.monotonicity_violations += 1;
                }
                (v.max(parent), a)
            }
            Bound::Unknown => (parent, vec![None; bx.state.len()]),
        };
        bx.lower_bound = bound;
        if alpha.iter().any(Option::is_some) || bx.free().is_empty() {
            self.try_set(rounded_set(&bx, &alpha))?;
        }
        if self.prunable(bound) || bx.free().is_empty() {
            self.counters.boxes_pruned += 1;
            return Ok(());
        }
        self.seq += 1;
        heap.push(Open {
            bound,
            seq: self.seq,
            bx,
            alpha,
        });
        Ok(())
    }

    fn branch_ap(&self, bx: &BnbBox, alpha: &[Option<f64>]) -> usize {
        let hw = &self.inst.hardware;
        bx.free()
            .into_iter()
            .min_by(|&a, &b| {
                let frac = |m: usize| alpha[m].map_or(0.5, |v| (v - 0.5).abs());
                frac(a)
                    .total_cmp(&frac(b))
                    .then(hw[b].total_cmp(&hw[a]))
                    .then(a.cmp(&b))
            })
            .expect("branching needs a free AP")
    }
}

/// Globally minimizes total power over AP subsets and power allocations.
pub fn solve_exact(inst: &ProblemInstance, opts: &BnbOptions) -> Result<BnbResult> {
    solve_exact_with(inst, opts, None)
}

/// [`solve_exact`] with an extra starting incumbent (typically a heuristic
/// solution); it is used only if it passes the SINR recheck and beats the
/// all-on solution.
pub fn solve_exact_with(
    inst: &ProblemInstance,
    opts: &BnbOptions,
    warm: Option<&Allocation>,
) -> Result<BnbResult> {
    if !(opts.gap_tol >= 0.0) || opts.node_cap == 0 {
        return Err(Error::InvalidParameter(
            "gap_tol >= 0 and node_cap >= 1 required".into(),
        ));
    }
    let start = Instant::now();
    let m_aps = inst.num_aps();
    if !inst.requirements.any_positive() {
        let allocation = inst.empty_allocation()?;
        let state = BnbState {
            status: BnbStatus::Optimal,
            counters: BnbCounters::default(),
            incumbent: 0.0,
            lower_bound: 0.0,
            trajectory: Vec::new(),
            seconds: start.elapsed().as_secs_f64(),
        };
        return Ok(BnbResult { allocation, state });
    }
    let all = ActiveSet::all(m_aps);
    let mut incumbent = solve_fixed_set(inst, &all, opts.solver_tol)?.ok_or(Error::Infeasible)?;
    if let Some(w) = warm {
        let w = inst.evaluate(&w.q, &w.active)?;
        if !w.active.is_empty() && inst.is_feasible(&w) && w.power.total < incumbent.power.total {
            incumbent = w;
        }
    }
    let mut search = Search {
        inst,
        opts,
        counters: BnbCounters {
            rounded_solved: 1,
            ..Default::default()
        },
        tried: HashSet::from([all.mask().to_vec()]),
        incumbent,
        seq: 0,
    };
    let mut heap = BinaryHeap::new();
    let mut trajectory = Vec::new();
    search.visit(BnbBox::root(m_aps), f64::NEG_INFINITY, &mut heap)?;

    let mut status = BnbStatus::Optimal;
    while let Some(open) = heap.pop() {
        trajectory.push(GapPoint {
            relaxations: search.counters.relaxations_solved,
            lower_bound: open.bound.min(search.best()),
            incumbent: search.best(),
        });
        if search.prunable(open.bound) {
            search.counters.boxes_pruned += 1 + heap.len();
            heap.clear();
            break;
        }
        if search.counters.relaxations_solved + 2 > opts.node_cap {
            status = BnbStatus::BudgetExceeded;
            heap.push(open);
            break;
        }
        let m = search.branch_ap(&open.bx, &open.alpha);
        for on in [true, false] {
            search.visit(open.bx.child(m, on), open.bound, &mut heap)?;
        }
    }
    let lower_bound = match heap.peek() {
        Some(o) if status == BnbStatus::BudgetExceeded => o.bound.min(search.best()),
        _ => search.best(),
    };
    trajectory.push(GapPoint {
        relaxations: search.counters.relaxations_solved,
        lower_bound,
        incumbent: search.best(),
    });
    let state = BnbState {
        status,
        counters: search.counters,
        incumbent: search.best(),
        lower_bound,
        trajectory,
        seconds: start.elapsed().as_secs_f64(),
    };
    Ok(BnbResult {
        allocation: search.incumbent,
        state,
    })
}

/// Global optimum by solving the fixed-set problem on every nonempty subset.
pub fn solve_exhaustive(inst: &ProblemInstance, tol: f64) -> Result<Allocation> {
    let m_aps = inst.num_aps();
    if m_aps > EXHAUSTIVE_MAX_APS {
        return Err(Error::TooManyAps {
            aps: m_aps,
            limit: EXHAUSTIVE_MAX_APS,
        });
    }
    if !inst.requirements.any_positive() {
        return inst.empty_allocation();
    }
    let mut best: Option<Allocation> = None;
    for bits in 1u32..(1 << m_aps) {
        let set = ActiveSet::from_mask((0..m_aps).map(|m| bits >> m & 1 == 1).collect());
        if let Some(a) = solve_fixed_set(inst, &set, tol)? {
            if inst.is_feasible(&a) && best.as_ref().is_none_or(|b| a.power.total < b.power.total) {
                best = Some(a);
            }
        }
    }
    best.ok_or(Error::Infeasible)
}
