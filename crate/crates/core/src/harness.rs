//! Monte Carlo driver: configuration, per-drop runs, summaries and output files.
//!
//! A configuration file is flat `key = value` text, one key per line, `#`
//! starting a comment. Every key of [`ExperimentConfig::pairs`] is accepted;
//! unknown keys are an error. The same syntax is accepted on the command
//! line as `--key=value`.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;

use crate::bnb::{solve_exact_with, BnbOptions, BnbStatus};
use crate::error::{Error, Result};
use crate::formulation::{ProblemInstance, Relaxation};
use crate::heuristics::{
    algorithm1, algorithm2, disjoint_sparsity, transmit_only, HeuristicParams, HeuristicResult,
    ThetaChannel,
};
use crate::performance::{self, Allocation, Precoding, FEASIBILITY_TOL};
use crate::scenario::{ScenarioParams, SeTarget};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Method {
    TransmitOnly,
    Algorithm1,
    Algorithm2,
    Disjoint,
    Optimal,
}

impl Method {
    pub const ALL: [Method; 5] = [
        Method::TransmitOnly,
        Method::Algorithm1,
        Method::Algorithm2,
        Method::Disjoint,
        Method::Optimal,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::TransmitOnly => "transmit-only",
            Method::Algorithm1 => "algorithm1",
            Method::Algorithm2 => "algorithm2",
            Method::Disjoint => "disjoint",
            Method::Optimal => "optimal",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Method::ALL.into_iter().find(|m| m.name() == s.trim())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub scenario: ScenarioParams,
    pub drops: usize,
    pub seed: u64,
    pub methods: Vec<Method>,
    pub bnb: BnbOptions,
    /// Start branch-and-bound from the best heuristic of the same drop.
    pub bnb_warm_start: bool,
    pub heuristics: HeuristicParams,
    /// Worker threads; 0 lets rayon decide.
    pub threads: usize,
    /// Record wall-clock seconds per method (0 when off, making reports bit-identical).
    pub timing: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            scenario: ScenarioParams::default(),
            drops: 1000,
            seed: 1,
            methods: vec![
                Method::TransmitOnly,
                Method::Algorithm1,
                Method::Algorithm2,
                Method::Disjoint,
            ],
            bnb: BnbOptions::default(),
            bnb_warm_start: true,
            heuristics: HeuristicParams::default(),
            threads: 0,
            timing: true,
        }
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse {value:?}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value.trim() {
        "true" | "yes" | "1" | "on" => Ok(true),
        "false" | "no" | "0" | "off" => Ok(false),
        _ => Err(Error::Config(format!(
            "{key}: expected true or false, got {value:?}"
        ))),
    }
}

impl ExperimentConfig {
    /// Sets one key; the accepted keys are exactly those listed by [`Self::pairs`].
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let s = &mut self.scenario;
        let v = value.trim();
        match key.trim() {
            "num_aps" => s.num_aps = parse_num(key, v)?,
            "num_users" => s.num_users = parse_num(key, v)?,
            "antennas" => s.antennas = parse_num(key, v)?,
            "tau_c" => s.tau_c = parse_num(key, v)?,
            "tau_p" => s.tau_p = parse_num(key, v)?,
            "se" => {
                s.se = SeTarget::parse(v).ok_or_else(|| {
                    Error::Config(format!("se: expected a number or uniform:lo,hi, got {v:?}"))
                })?
            }
            "precoder" => {
                s.precoding = Precoding::parse(v).ok_or_else(|| {
                    Error::Config(format!("precoder: expected mrt or fzf, got {v:?}"))
                })?
            }
            "delta" => s.delta = parse_num(key, v)?,
            "per_antenna_power_w" => s.per_antenna_power = parse_num(key, v)?,
            "fronthaul_power_w" => s.fronthaul_power = parse_num(key, v)?,
            "traffic_power_w_per_gbps" => s.traffic_power_w_per_gbps = parse_num(key, v)?,
            "bandwidth_hz" => s.bandwidth_hz = parse_num(key, v)?,
            "p_max_w" => s.p_max = parse_num(key, v)?,
            "pilot_power_w" => s.pilot_power = parse_num(key, v)?,
            "noise_dbm" => s.noise_dbm = parse_num(key, v)?,
            "side_length_m" => s.geometry.side_length = parse_num(key, v)?,
            "min_ap_spacing_m" => s.geometry.min_ap_spacing = parse_num(key, v)?,
            "ap_height_m" => s.geometry.ap_height = parse_num(key, v)?,
            "max_attempts_per_ap" => s.geometry.max_attempts_per_ap = parse_num(key, v)?,
            "pathloss_intercept_db" => s.shadow.intercept_db = parse_num(key, v)?,
            "pathloss_slope_db" => s.shadow.slope_db = parse_num(key, v)?,
            "shadow_variance_db2" => s.shadow.variance_db2 = parse_num(key, v)?,
            "shadow_decorrelation_m" => s.shadow.decorrelation_m = parse_num(key, v)?,
            "drops" => self.drops = parse_num(key, v)?,
            "seed" => self.seed = parse_num(key, v)?,
            "methods" => {
                let mut methods = Vec::new();
                for name in v.split(',').map(str::trim).filter(|n| !n.is_empty()) {
                    let m = Method::parse(name).ok_or_else(|| {
                        Error::Config(format!("methods: unknown method {name:?}"))
                    })?;
                    if !methods.contains(&m) {
                        methods.push(m);
                    }
                }
                methods.sort();
                self.methods = methods;
            }
            "bnb_gap" => self.bnb.gap_tol = parse_num(key, v)?,
            "bnb_node_cap" => self.bnb.node_cap = parse_num(key, v)?,
            "bnb_relaxation" => {
                self.bnb.relaxation = Relaxation::parse(v).ok_or_else(|| {
                    Error::Config(format!(
                        "bnb_relaxation: expected verbatim or perspective, got {v:?}"
                    ))
                })?
            }
            "bnb_warm_start" => self.bnb_warm_start = parse_bool(key, v)?,
            "irls_p" => self.heuristics.irls.p_tilde = parse_num(key, v)?,
            "irls_epsilon" => {
                self.heuristics.irls.epsilon = match v {
                    "auto" => None,
                    _ => Some(parse_num(key, v)?),
                }
            }
            "irls_stop_rel" => self.heuristics.irls.stop_rel = parse_num(key, v)?,
            "irls_max_iter" => self.heuristics.irls.max_iter = parse_num(key, v)?,
            "off_threshold_w" => self.heuristics.irls.off_threshold = parse_num(key, v)?,
            "theta" => {
                self.heuristics.theta = ThetaChannel::parse(v).ok_or_else(|| {
                    Error::Config(format!("theta: expected beta or gamma, got {v:?}"))
                })?
            }
            "solver_tol" => {
                let tol: f64 = parse_num(key, v)?;
                self.bnb.solver_tol = tol;
                self.heuristics.solver_tol = tol;
                self.heuristics.irls.solver_tol = tol;
            }
            "threads" => self.threads = parse_num(key, v)?,
            "timing" => self.timing = parse_bool(key, v)?,
            other => return Err(Error::Config(format!("unknown key {other:?}"))),
        }
        Ok(())
    }

    /// Every key with its current value, in a fixed order. Feeding the
    /// result back through [`Self::set`] reproduces the configuration.
    pub fn pairs(&self) -> Vec<(&'static str, String)> {
        let s = &self.scenario;
        let methods: Vec<&str> = self.methods.iter().map(|m| m.name()).collect();
        vec![
            ("num_aps", s.num_aps.to_string()),
            ("num_users", s.num_users.to_string()),
            ("antennas", s.antennas.to_string()),
            ("tau_c", s.tau_c.to_string()),
            ("tau_p", s.tau_p.to_string()),
            ("se", s.se.describe()),
            ("precoder", s.precoding.name().to_string()),
            ("delta", s.delta.to_string()),
            ("per_antenna_power_w", s.per_antenna_power.to_string()),
            ("fronthaul_power_w", s.fronthaul_power.to_string()),
            (
                "traffic_power_w_per_gbps",
                s.traffic_power_w_per_gbps.to_string(),
            ),
            ("bandwidth_hz", s.bandwidth_hz.to_string()),
            ("p_max_w", s.p_max.to_string()),
            ("pilot_power_w", s.pilot_power.to_string()),
            ("noise_dbm", s.noise_dbm.to_string()),
            ("side_length_m", s.geometry.side_length.to_string()),
            ("min_ap_spacing_m", s.geometry.min_ap_spacing.to_string()),
            ("ap_height_m", s.geometry.ap_height.to_string()),
            (
                "max_attempts_per_ap",
                s.geometry.max_attempts_per_ap.to_string(),
            ),
            ("pathloss_intercept_db", s.shadow.intercept_db.to_string()),
            ("pathloss_slope_db", s.shadow.slope_db.to_string()),
            ("shadow_variance_db2", s.shadow.variance_db2.to_string()),
            (
                "shadow_decorrelation_m",
                s.shadow.decorrelation_m.to_string(),
            ),
            ("drops", self.drops.to_string()),
            ("seed", self.seed.to_string()),
            ("methods", methods.join(",")),
            ("bnb_gap", self.bnb.gap_tol.to_string()),
            ("bnb_node_cap", self.bnb.node_cap.to_string()),
            ("bnb_relaxation", self.bnb.relaxation.name().to_string()),
            ("bnb_warm_start", self.bnb_warm_start.to_string()),
            ("irls_p", self.heuristics.irls.p_tilde.to_string()),
            (
                "irls_epsilon",
                self.heuristics
                    .irls
                    .epsilon
                    .map_or_else(|| "auto".to_string(), |e| e.to_string()),
            ),
            ("irls_stop_rel", self.heuristics.irls.stop_rel.to_string()),
            ("irls_max_iter", self.heuristics.irls.max_iter.to_string()),
            (
                "off_threshold_w",
                self.heuristics.irls.off_threshold.to_string(),
            ),
            ("theta", self.heuristics.theta.name().to_string()),
            ("solver_tol", self.bnb.solver_tol.to_string()),
            ("threads", self.threads.to_string()),
            ("timing", self.timing.to_string()),
        ]
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (k, v) in self.pairs() {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }

    /// Applies `key = value` lines on top of the current values.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", n + 1)))?;
            self.set(k, v)?;
        }
        Ok(())
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        cfg.apply_text(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text)
    }

    /// Applies a `--key=value` (or `key=value`) override.
    pub fn apply_override(&mut self, arg: &str) -> Result<()> {
        let arg = arg.strip_prefix("--").unwrap_or(arg);
        let (k, v) = arg
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override {arg:?} is not key=value")))?;
        self.set(k, v)
    }

    pub fn validate(&self) -> Result<()> {
        self.scenario
            .validate()
            .map_err(|e| Error::Config(e.to_string()))?;
        if self.methods.is_empty() {
            return Err(Error::Config(
                "methods: at least one method required".into(),
            ));
        }
        let irls = &self.heuristics.irls;
        let bad = [
            (!(self.bnb.gap_tol >= 0.0), "bnb_gap must be >= 0"),
            (self.bnb.node_cap == 0, "bnb_node_cap must be positive"),
            (
                !(irls.p_tilde > 0.0 && irls.p_tilde < 2.0),
                "irls_p must lie in (0, 2)",
            ),
            (
                irls.epsilon.is_some_and(|e| !(e > 0.0)),
                "irls_epsilon must be positive",
            ),
            (!(irls.stop_rel > 0.0), "irls_stop_rel must be positive"),
            (irls.max_iter == 0, "irls_max_iter must be positive"),
            (!(irls.off_threshold >= 0.0), "off_threshold_w must be >= 0"),
            (!(self.bnb.solver_tol > 0.0), "solver_tol must be positive"),
        ];
        match bad.iter().find(|(b, _)| *b) {
            Some((_, msg)) => Err(Error::Config(msg.to_string())),
            None => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum RecordStatus {
    /// Feasible and passed the independent recheck.
    Ok,
    /// Branch-and-bound stopped at its node cap; the record holds the incumbent.
    BudgetExceeded,
    /// No AP subset meets the targets on this drop.
    Infeasible,
    /// The method returned an allocation that failed the independent recheck.
    RecheckFailed,
    Error,
}

impl RecordStatus {
    pub fn name(self) -> &'static str {
        match self {
            RecordStatus::Ok => "ok",
            RecordStatus::BudgetExceeded => "budget-exceeded",
            RecordStatus::Infeasible => "infeasible",
            RecordStatus::RecheckFailed => "recheck-failed",
            RecordStatus::Error => "error",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        [
            RecordStatus::Ok,
            RecordStatus::BudgetExceeded,
            RecordStatus::Infeasible,
            RecordStatus::RecheckFailed,
            RecordStatus::Error,
        ]
        .into_iter()
        .find(|r| r.name() == s.trim())
    }

    /// Records carrying a feasible allocation.
    pub fn has_allocation(self) -> bool {
        matches!(self, RecordStatus::Ok | RecordStatus::BudgetExceeded)
    }

    pub fn is_failure(self) -> bool {
        matches!(self, RecordStatus::RecheckFailed | RecordStatus::Error)
    }
}

/// One method on one drop.
#[derive(Debug, Clone, PartialEq)]
pub struct Record {
    pub drop: u64,
    pub method: Method,
    pub precoder: Precoding,
    pub status: RecordStatus,
    /// `sum Delta_m rho_mk`, watts.
    pub transmit_w: f64,
    /// `sum rho_mk`, watts.
    pub radiated_w: f64,
    pub hardware_w: f64,
    /// Always `transmit_w + hardware_w`.
    pub total_w: f64,
    pub active_aps: usize,
    /// Relaxations solved by branch-and-bound.
    pub nodes: usize,
    pub solves: usize,
    pub irls_iterations: usize,
    /// Relative optimality gap of branch-and-bound.
    pub gap: f64,
    /// `min_k SINR_k / nu_k` from the recheck.
    pub min_sinr_ratio: f64,
    pub seconds: f64,
    pub detail: String,
}

impl Record {
    fn empty(
        drop: u64,
        method: Method,
        precoder: Precoding,
        status: RecordStatus,
        detail: String,
    ) -> Self {
        Self {
            drop,
            method,
            precoder,
            status,
            transmit_w: f64::NAN,
            radiated_w: f64::NAN,
            hardware_w: f64::NAN,
            total_w: f64::NAN,
            active_aps: 0,
            nodes: 0,
            solves: 0,
            irls_iterations: 0,
            gap: f64::NAN,
            min_sinr_ratio: f64::NAN,
            seconds: 0.0,
            detail,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IrlsRow {
    pub drop: u64,
    pub method: Method,
    pub iteration: usize,
    pub objective: f64,
    pub active_aps: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryRow {
    pub drop: u64,
    pub relaxations: usize,
    pub lower_bound: f64,
    pub incumbent: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunReport {
    pub config: ExperimentConfig,
    /// Sorted by drop, then method.
    pub records: Vec<Record>,
    pub irls: Vec<IrlsRow>,
    pub trajectory: Vec<TrajectoryRow>,
}

impl RunReport {
    pub fn failures(&self) -> usize {
        self.records
            .iter()
            .filter(|r| r.status.is_failure())
            .count()
    }
}

/// Independent recheck of an allocation against the instance.
fn recheck(inst: &ProblemInstance, alloc: &Allocation) -> (bool, f64) {
    let sinr = match performance::sinr(
        &inst.stats,
        inst.scheme,
        &inst.pilots,
        &alloc.q,
        &alloc.active,
    ) {
        Ok(s) => s,
        Err(_) => return (false, f64::NAN),
    };
    let ratio = sinr
        .iter()
        .zip(&inst.nu)
        .filter(|(_, &nu)| nu > 0.0)
        .map(|(s, nu)| s / nu)
        .fold(f64::INFINITY, f64::min);
    let checked = Allocation {
        sinr,
        ..alloc.clone()
    };
    (
        checked.is_feasible(&inst.nu, &inst.power.p_max, FEASIBILITY_TOL),
        ratio,
    )
}

fn allocation_record(
    drop: u64,
    method: Method,
    inst: &ProblemInstance,
    alloc: &Allocation,
    status: RecordStatus,
) -> Record {
    let (ok, ratio) = recheck(inst, alloc);
    let p = performance::total_power(&alloc.q, &alloc.active, &inst.power, &inst.hardware);
    Record {
        drop,
        method,
        precoder: inst.scheme,
        status: if ok {
            status
        } else {
            RecordStatus::RecheckFailed
        },
        transmit_w: p.transmit,
        radiated_w: p.radiated,
        hardware_w: p.hardware,
        total_w: p.transmit + p.hardware,
        active_aps: alloc.active.len(),
        nodes: 0,
        solves: 0,
        irls_iterations: 0,
        gap: 0.0,
        min_sinr_ratio: ratio,
        seconds: 0.0,
        detail: String::new(),
    }
}

fn error_record(drop: u64, method: Method, precoder: Precoding, err: &Error) -> Record {
    match err {
        Error::Infeasible => Record::empty(
            drop,
            method,
            precoder,
            RecordStatus::Infeasible,
            String::new(),
        ),
        e => Record::empty(drop, method, precoder, RecordStatus::Error, e.to_string()),
    }
}

struct DropOutcome {
    records: Vec<Record>,
    irls: Vec<IrlsRow>,
    trajectory: Vec<TrajectoryRow>,
}

fn run_drop(cfg: &ExperimentConfig, drop: u64) -> DropOutcome {
    let precoder = cfg.scenario.precoding;
    let mut out = DropOutcome {
        records: Vec::new(),
        irls: Vec::new(),
        trajectory: Vec::new(),
    };
    let inst = match cfg.scenario.build_drop(cfg.seed, drop) {
        Ok(i) => i,
        Err(e) => {
            out.records = cfg
                .methods
                .iter()
                .map(|&m| Record::empty(drop, m, precoder, RecordStatus::Error, e.to_string()))
                .collect();
            return out;
        }
    };
    let mut warm: Option<Allocation> = None;
    for &method in &cfg.methods {
        let start = Instant::now();
        let record = match method {
            Method::Optimal => {
                let seed = if cfg.bnb_warm_start {
                    warm.as_ref()
                } else {
                    None
                };
                match solve_exact_with(&inst, &cfg.bnb, seed) {
                    Ok(r) => {
                        let status = match r.state.status {
                            BnbStatus::Optimal => RecordStatus::Ok,
                            BnbStatus::BudgetExceeded => RecordStatus::BudgetExceeded,
                        };
                        let mut rec = allocation_record(drop, method, &inst, &r.allocation, status);
                        let c = &r.state.counters;
                        rec.nodes = c.relaxations_solved;
                        rec.solves = c.relaxations_solved + c.rounded_solved;
                        rec.gap = r.state.relative_gap();
                        out.trajectory
                            .extend(r.state.trajectory.iter().map(|p| TrajectoryRow {
                                drop,
                                relaxations: p.relaxations,
                                lower_bound: p.lower_bound,
                                incumbent: p.incumbent,
                            }));
                        rec
                    }
                    Err(e) => error_record(drop, method, precoder, &e),
                }
            }
            _ => {
                let run = match method {
                    Method::TransmitOnly => transmit_only(&inst, &cfg.heuristics),
                    Method::Algorithm1 => algorithm1(&inst, &cfg.heuristics),
                    Method::Algorithm2 => algorithm2(&inst, &cfg.heuristics),
                    Method::Disjoint => disjoint_sparsity(&inst, &cfg.heuristics),
                    Method::Optimal => unreachable!(),
                };
                match run {
                    Ok(HeuristicResult {
                        allocation,
                        solves,
                        irls,
                        ..
                    }) => {
                        let mut rec =
                            allocation_record(drop, method, &inst, &allocation, RecordStatus::Ok);
                        rec.solves = solves;
                        if let Some(t) = irls {
                            rec.irls_iterations = t.iterations();
                            out.irls
                                .extend(t.objective.iter().zip(&t.active).enumerate().map(
                                    |(i, (&objective, &active_aps))| IrlsRow {
                                        drop,
                                        method,
                                        iteration: i + 1,
                                        objective,
                                        active_aps,
                                    },
                                ));
                        }
                        if rec.status == RecordStatus::Ok
                            && warm
                                .as_ref()
                                .is_none_or(|w| allocation.power.total < w.power.total)
                        {
                            warm = Some(allocation);
                        }
                        rec
                    }
                    Err(e) => error_record(drop, method, precoder, &e),
                }
            }
        };
        let seconds = if cfg.timing {
            start.elapsed().as_secs_f64()
        } else {
            0.0
        };
        out.records.push(Record { seconds, ..record });
    }
    out
}

/// Runs every configured method on every drop. Drops run in parallel; the
/// report does not depend on the number of threads.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunReport> {
    cfg.validate()?;
    let work = || -> Vec<DropOutcome> {
        (0..cfg.drops as u64)
            .into_par_iter()
            .map(|d| run_drop(cfg, d))
            .collect()
    };
    let outcomes = if cfg.threads > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.threads)
            .build()
            .map_err(|e| Error::Config(format!("threads: {e}")))?
            .install(work)
    } else {
        work()
    };
    let mut report = RunReport {
        config: cfg.clone(),
        records: Vec::new(),
        irls: Vec::new(),
        trajectory: Vec::new(),
    };
    for o in outcomes {
        report.records.extend(o.records);
        report.irls.extend(o.irls);
        report.trajectory.extend(o.trajectory);
    }
    report.records.sort_by_key(|r| (r.drop, r.method));
    report.irls.sort_by_key(|r| (r.drop, r.method, r.iteration));
    Ok(report)
}

/// Empirical distribution of a sample.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Cdf {
    sorted: Vec<f64>,
}

impl Cdf {
    /// NaN samples are dropped.
    pub fn new(values: impl IntoIterator<Item = f64>) -> Self {
        let mut sorted: Vec<f64> = values.into_iter().filter(|v| !v.is_nan()).collect();
        sorted.sort_by(f64::total_cmp);
        Self { sorted }
    }

    pub fn len(&self) -> usize {
        self.sorted.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sorted.is_empty()
    }

    /// Fraction of the sample at or below `x` (right-continuous).
    pub fn eval(&self, x: f64) -> f64 {
        if self.sorted.is_empty() {
            return f64::NAN;
        }
        self.sorted.partition_point(|&v| v <= x) as f64 / self.sorted.len() as f64
    }

    /// Step points `(x_i, i/n)` of the distribution, one per sample.
    pub fn points(&self) -> Vec<(f64, f64)> {
        let n = self.sorted.len() as f64;
        self.sorted
            .iter()
            .enumerate()
            .map(|(i, &x)| (x, (i + 1) as f64 / n))
            .collect()
    }

    /// Linearly interpolated quantile, `p` in `[0, 1]`.
    pub fn percentile(&self, p: f64) -> f64 {
        let n = self.sorted.len();
        if n == 0 {
            return f64::NAN;
        }
        let h = p.clamp(0.0, 1.0) * (n - 1) as f64;
        let lo = h.floor() as usize;
        let hi = (lo + 1).min(n - 1);
        self.sorted[lo] + (h - lo as f64) * (self.sorted[hi] - self.sorted[lo])
    }

    pub fn mean(&self) -> f64 {
        if self.sorted.is_empty() {
            return f64::NAN;
        }
        self.sorted.iter().sum::<f64>() / self.sorted.len() as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MethodSummary {
    pub method: Method,
    pub precoder: Precoding,
    pub records: usize,
    /// Records with an allocation (ok or budget-exceeded); only these enter the CDFs.
    pub included: usize,
    pub infeasible: usize,
    pub failed: usize,
    pub budget_exceeded: usize,
    pub transmit: Cdf,
    pub radiated: Cdf,
    pub hardware: Cdf,
    pub total: Cdf,
    pub active: Cdf,
    pub gap: Cdf,
}

impl MethodSummary {
    pub fn metrics(&self) -> [(&'static str, &Cdf); 6] {
        [
            ("transmit_w", &self.transmit),
            ("radiated_w", &self.radiated),
            ("hardware_w", &self.hardware),
            ("total_w", &self.total),
            ("active_aps", &self.active),
            ("gap", &self.gap),
        ]
    }
}

/// Per (method, precoder) distributions, in method order.
pub fn summarize(records: &[Record]) -> Vec<MethodSummary> {
    let mut groups: BTreeMap<(Method, &'static str), Vec<&Record>> = BTreeMap::new();
    for r in records {
        groups
            .entry((r.method, r.precoder.name()))
            .or_default()
            .push(r);
    }
    groups
        .into_values()
        .map(|rs| {
            let kept: Vec<&&Record> = rs.iter().filter(|r| r.status.has_allocation()).collect();
            let cdf = |f: fn(&Record) -> f64| Cdf::new(kept.iter().map(|r| f(r)));
            MethodSummary {
                method: rs[0].method,
                precoder: rs[0].precoder,
                records: rs.len(),
                included: kept.len(),
                infeasible: rs
                    .iter()
                    .filter(|r| r.status == RecordStatus::Infeasible)
                    .count(),
                failed: rs.iter().filter(|r| r.status.is_failure()).count(),
                budget_exceeded: rs
                    .iter()
                    .filter(|r| r.status == RecordStatus::BudgetExceeded)
                    .count(),
                transmit: cdf(|r| r.transmit_w),
                radiated: cdf(|r| r.radiated_w),
                hardware: cdf(|r| r.hardware_w),
                total: cdf(|r| r.total_w),
                active: cdf(|r| r.active_aps as f64),
                gap: cdf(|r| r.gap),
            }
        })
        .collect()
}

/// Mean-total-power saving of each summary relative to `baseline` with the
/// same precoder: `1 - mean_total / mean_total_baseline`.
pub fn savings_vs(summaries: &[MethodSummary], baseline: Method) -> Vec<(Method, Precoding, f64)> {
    summaries
        .iter()
        .filter_map(|s| {
            let base = summaries
                .iter()
                .find(|b| b.method == baseline && b.precoder == s.precoder)?;
            Some((
                s.method,
                s.precoder,
                1.0 - s.total.mean() / base.total.mean(),
            ))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompareRow {
    pub method: Method,
    pub precoder: Precoding,
    pub total_a: f64,
    pub total_b: f64,
    pub transmit_a: f64,
    pub transmit_b: f64,
    pub active_a: f64,
    pub active_b: f64,
}

impl CompareRow {
    /// `1 - b / a` on mean total power.
    pub fn total_saving(&self) -> f64 {
        1.0 - self.total_b / self.total_a
    }

    pub fn transmit_saving(&self) -> f64 {
        1.0 - self.transmit_b / self.transmit_a
    }
}

/// Pairs the methods of two reports (matched by method; by precoder too when
/// both reports use one precoder each, they are paired regardless).
pub fn compare(a: &[Record], b: &[Record]) -> Vec<CompareRow> {
    let (sa, sb) = (summarize(a), summarize(b));
    let single = |s: &[MethodSummary]| {
        s.iter()
            .map(|m| m.precoder.name())
            .collect::<std::collections::BTreeSet<_>>()
            .len()
            <= 1
    };
    let loose = single(&sa) && single(&sb);
    sa.iter()
        .filter_map(|x| {
            let y = sb
                .iter()
                .find(|y| y.method == x.method && (loose || y.precoder == x.precoder))?;
            Some(CompareRow {
                method: x.method,
                precoder: x.precoder,
                total_a: x.total.mean(),
                total_b: y.total.mean(),
                transmit_a: x.transmit.mean(),
                transmit_b: y.transmit.mean(),
                active_a: x.active.mean(),
                active_b: y.active.mean(),
            })
        })
        .collect()
}

/// Nine significant digits.
pub fn fmt_num(x: f64) -> String {
    if x.is_nan() {
        "nan".to_string()
    } else {
        format!("{x:.8e}")
    }
}

fn parse_cell(s: &str) -> Option<f64> {
    match s.trim() {
        "nan" => Some(f64::NAN),
        v => v.parse().ok(),
    }
}

pub const RECORD_HEADER: [&str; 16] = [
    "drop",
    "method",
    "precoder",
    "transmit_w",
    "hardware_w",
    "total_w",
    "active_aps",
    "status",
    "nodes",
    "seconds",
    "radiated_w",
    "solves",
    "irls_iterations",
    "gap",
    "min_sinr_ratio",
    "detail",
];

fn csv_writer(path: &Path) -> Result<csv::Writer<fs::File>> {
    csv::Writer::from_path(path).map_err(|source| Error::Csv {
        path: path.to_path_buf(),
        source,
    })
}

fn csv_err(path: &Path) -> impl Fn(csv::Error) -> Error + '_ {
    move |source| Error::Csv {
        path: path.to_path_buf(),
        source,
    }
}

pub fn write_records(path: &Path, records: &[Record]) -> Result<()> {
    let mut w = csv_writer(path)?;
    let e = csv_err(path);
    w.write_record(RECORD_HEADER).map_err(&e)?;
    for r in records {
        w.write_record([
            r.drop.to_string(),
            r.method.name().to_string(),
            r.precoder.name().to_string(),
            fmt_num(r.transmit_w),
            fmt_num(r.hardware_w),
            fmt_num(r.total_w),
            r.active_aps.to_string(),
            r.status.name().to_string(),
            r.nodes.to_string(),
            fmt_num(r.seconds),
            fmt_num(r.radiated_w),
            r.solves.to_string(),
            r.irls_iterations.to_string(),
            fmt_num(r.gap),
            fmt_num(r.min_sinr_ratio),
            r.detail.clone(),
        ])
        .map_err(&e)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_records(path: &Path) -> Result<Vec<Record>> {
    let mut rd = csv::Reader::from_path(path).map_err(csv_err(path))?;
    let headers = rd.headers().map_err(csv_err(path))?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Config(format!("{}: missing column {name}", path.display())))
    };
    let idx: Vec<usize> = RECORD_HEADER
        .iter()
        .map(|h| col(h))
        .collect::<Result<_>>()?;
    let mut out = Vec::new();
    for (line, row) in rd.records().enumerate() {
        let row = row.map_err(csv_err(path))?;
        let bad =
            |what: &str| Error::Config(format!("{}: row {}: bad {what}", path.display(), line + 2));
        let get = |i: usize| row.get(idx[i]).unwrap_or("");
        let num = |i: usize| parse_cell(get(i)).ok_or_else(|| bad(RECORD_HEADER[i]));
        let int = |i: usize| {
            get(i)
                .trim()
                .parse::<usize>()
                .map_err(|_| bad(RECORD_HEADER[i]))
        };
        out.push(Record {
            drop: get(0).trim().parse().map_err(|_| bad("drop"))?,
            method: Method::parse(get(1)).ok_or_else(|| bad("method"))?,
            precoder: Precoding::parse(get(2)).ok_or_else(|| bad("precoder"))?,
            transmit_w: num(3)?,
            hardware_w: num(4)?,
            total_w: num(5)?,
            active_aps: int(6)?,
            status: RecordStatus::parse(get(7)).ok_or_else(|| bad("status"))?,
            nodes: int(8)?,
            seconds: num(9)?,
            radiated_w: num(10)?,
            solves: int(11)?,
            irls_iterations: int(12)?,
            gap: num(13)?,
            min_sinr_ratio: num(14)?,
            detail: get(15).to_string(),
        });
    }
    Ok(out)
}

pub fn write_cdf(path: &Path, summaries: &[MethodSummary]) -> Result<()> {
    let mut w = csv_writer(path)?;
    let e = csv_err(path);
    w.write_record(["method", "precoder", "metric", "value", "cdf"])
        .map_err(&e)?;
    for s in summaries {
        for (metric, cdf) in s.metrics() {
            for (x, p) in cdf.points() {
                w.write_record([
                    s.method.name(),
                    s.precoder.name(),
                    metric,
                    &fmt_num(x),
                    &fmt_num(p),
                ])
                .map_err(&e)?;
            }
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_summary(path: &Path, summaries: &[MethodSummary]) -> Result<()> {
    let mut w = csv_writer(path)?;
    let e = csv_err(path);
    w.write_record([
        "method",
        "precoder",
        "metric",
        "records",
        "included",
        "infeasible",
        "failed",
        "budget_exceeded",
        "mean",
        "p5",
        "p50",
        "p95",
        "max",
    ])
    .map_err(&e)?;
    for s in summaries {
        for (metric, cdf) in s.metrics() {
            w.write_record([
                s.method.name().to_string(),
                s.precoder.name().to_string(),
                metric.to_string(),
                s.records.to_string(),
                s.included.to_string(),
                s.infeasible.to_string(),
                s.failed.to_string(),
                s.budget_exceeded.to_string(),
                fmt_num(cdf.mean()),
                fmt_num(cdf.percentile(0.05)),
                fmt_num(cdf.percentile(0.5)),
                fmt_num(cdf.percentile(0.95)),
                fmt_num(cdf.percentile(1.0)),
            ])
            .map_err(&e)?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_compare(path: &Path, rows: &[CompareRow]) -> Result<()> {
    let mut w = csv_writer(path)?;
    let e = csv_err(path);
    w.write_record([
        "method",
        "precoder",
        "mean_total_a",
        "mean_total_b",
        "total_saving",
        "mean_transmit_a",
        "mean_transmit_b",
        "transmit_saving",
        "mean_active_a",
        "mean_active_b",
    ])
    .map_err(&e)?;
    for r in rows {
        w.write_record([
            r.method.name().to_string(),
            r.precoder.name().to_string(),
            fmt_num(r.total_a),
            fmt_num(r.total_b),
            fmt_num(r.total_saving()),
            fmt_num(r.transmit_a),
            fmt_num(r.transmit_b),
            fmt_num(r.transmit_saving()),
            fmt_num(r.active_a),
            fmt_num(r.active_b),
        ])
        .map_err(&e)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn gnuplot_script(summaries: &[MethodSummary]) -> String {
    let mut s = String::from(
        "# gnuplot -p cdf.gp\nset datafile separator ','\nset key bottom right\nset ylabel 'CDF'\nset yrange [0:1]\n",
    );
    for (metric, label) in [
        ("transmit_w", "Total transmit power [W]"),
        ("total_w", "Total power [W]"),
    ] {
        let _ = writeln!(s, "set xlabel '{label}'");
        let plots: Vec<String> = summaries
            .iter()
            .map(|m| {
                format!(
                    "'cdf.csv' using (strcol(1) eq '{0}' && strcol(2) eq '{1}' && strcol(3) eq '{2}' ? $4 : 1/0):5 with steps title '{0} ({1})'",
                    m.method.name(),
                    m.precoder.name(),
                    metric
                )
            })
            .collect();
        if plots.is_empty() {
            let _ = writeln!(s, "# no data");
        } else {
            let _ = writeln!(s, "plot {}", plots.join(", \\\n     "));
        }
        s.push_str("pause -1\n");
    }
    s
}

/// Writes `config.txt`, `records.csv`, `cdf.csv`, `summary.csv`, `irls.csv`,
/// `bnb_trajectory.csv` and `cdf.gp` into `dir`. Returns the written paths.
pub fn emit(report: &RunReport, dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let path = |name: &str| dir.join(name);
    let mut written = Vec::new();

    let p = path("config.txt");
    fs::write(&p, report.config.to_text()).map_err(|e| Error::io(&p, e))?;
    written.push(p);

    let p = path("records.csv");
    write_records(&p, &report.records)?;
    written.push(p);

    let summaries = summarize(&report.records);
    let p = path("cdf.csv");
    write_cdf(&p, &summaries)?;
    written.push(p);
    let p = path("summary.csv");
    write_summary(&p, &summaries)?;
    written.push(p);

    let p = path("irls.csv");
    {
        let mut w = csv_writer(&p)?;
        let e = csv_err(&p);
        w.write_record(["drop", "method", "iteration", "objective", "active_aps"])
            .map_err(&e)?;
        for r in &report.irls {
            w.write_record([
                r.drop.to_string(),
                r.method.name().to_string(),
                r.iteration.to_string(),
                fmt_num(r.objective),
                r.active_aps.to_string(),
            ])
            .map_err(&e)?;
        }
        w.flush().map_err(|e| Error::io(&p, e))?;
    }
    written.push(p);

    let p = path("bnb_trajectory.csv");
    {
        let mut w = csv_writer(&p)?;
        let e = csv_err(&p);
        w.write_record(["drop", "relaxations", "lower_bound", "incumbent"])
            .map_err(&e)?;
        for r in &report.trajectory {
            w.write_record([
                r.drop.to_string(),
                r.relaxations.to_string(),
                fmt_num(r.lower_bound),
                fmt_num(r.incumbent),
            ])
            .map_err(&e)?;
        }
        w.flush().map_err(|e| Error::io(&p, e))?;
    }
    written.push(p);

    let p = path("cdf.gp");
    fs::write(&p, gnuplot_script(&summaries)).map_err(|e| Error::io(&p, e))?;
    written.push(p);
    Ok(written)
}
