//! Second-order cone programs and their solution.
//!
//! A [`SocProgram`] is
//!
//! ```text
//! minimize    c^T x
//! subject to  || A_i x + b_i || <= c_i^T x + d_i     for every cone i
//!             lower_j <= x_j <= upper_j
//! ```
//!
//! with every affine expression stored sparsely. Programs are immutable
//! once built and [`solve`] owns all of its workspace, so distinct programs
//! can be solved concurrently.
//!
//! The interior-point work is delegated to Clarabel. On a numerical failure
//! the program is re-solved once with every cone rescaled by its largest
//! row norm, and if that also fails a phase-one problem (minimize the
//! uniform cone relaxation `t`) decides whether the program is infeasible.

use std::fmt::Write as _;
use std::time::Instant;

use clarabel::algebra::CscMatrix;
use clarabel::solver::{DefaultSettings, DefaultSolver, IPSolver, SolverStatus, SupportedConeT};

use crate::error::{Error, Result};

pub const DEFAULT_TOL: f64 = 1e-8;

/// Phase-one relaxation above which a failed program is declared infeasible.
const PHASE_ONE_INFEASIBLE: f64 = 1e-6;

/// Sparse affine expression `sum_j coef_j x_j + constant`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct AffineExpr {
    pub terms: Vec<(usize, f64)>,
    pub constant: f64,
}

impl AffineExpr {
    pub fn constant(value: f64) -> Self {
        Self {
            terms: Vec::new(),
            constant: value,
        }
    }

    pub fn var(j: usize) -> Self {
        Self::term(j, 1.0)
    }

    pub fn term(j: usize, coef: f64) -> Self {
        Self {
            terms: vec![(j, coef)],
            constant: 0.0,
        }
    }

    pub fn from_terms(terms: Vec<(usize, f64)>) -> Self {
        Self {
            terms,
            constant: 0.0,
        }
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.constant + self.terms.iter().map(|&(j, c)| c * x[j]).sum::<f64>()
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            terms: self.terms.iter().map(|&(j, c)| (j, c * factor)).collect(),
            constant: self.constant * factor,
        }
    }

    fn coef_norm_sq(&self) -> f64 {
        self.terms.iter().map(|(_, c)| c * c).sum::<f64>() + self.constant * self.constant
    }
}

/// `|| lhs || <= rhs`.
#[derive(Debug, Clone, PartialEq)]
pub struct SocConstraint {
    pub lhs: Vec<AffineExpr>,
    pub rhs: AffineExpr,
}

impl SocConstraint {
    pub fn new(lhs: Vec<AffineExpr>, rhs: AffineExpr) -> Self {
        Self { lhs, rhs }
    }

    pub fn dim(&self) -> usize {
        self.lhs.len() + 1
    }

    /// `max(0, ||lhs(x)|| - rhs(x))`.
    pub fn violation(&self, x: &[f64]) -> f64 {
        let norm = self
            .lhs
            .iter()
            .map(|e| e.eval(x).powi(2))
            .sum::<f64>()
            .sqrt();
        (norm - self.rhs.eval(x)).max(0.0)
    }

    fn max_row_norm(&self) -> f64 {
        std::iter::once(&self.rhs)
            .chain(&self.lhs)
            .map(|e| e.coef_norm_sq().sqrt())
            .fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SocProgram {
    objective: Vec<f64>,
    lower: Vec<f64>,
    upper: Vec<f64>,
    names: Vec<String>,
    cones: Vec<SocConstraint>,
}

impl Default for SocProgram {
    fn default() -> Self {
        Self::new()
    }
}

impl SocProgram {
    pub fn new() -> Self {
        Self {
            objective: Vec::new(),
            lower: Vec::new(),
            upper: Vec::new(),
            names: Vec::new(),
            cones: Vec::new(),
        }
    }

    /// Adds a variable with bounds (use infinities for free sides); returns its index.
    pub fn add_var(&mut self, name: impl Into<String>, lower: f64, upper: f64) -> usize {
        self.objective.push(0.0);
        self.lower.push(lower);
        self.upper.push(upper);
        self.names.push(name.into());
        self.objective.len() - 1
    }

    pub fn set_cost(&mut self, j: usize, cost: f64) {
        self.objective[j] = cost;
    }

    pub fn add_cone(&mut self, cone: SocConstraint) {
        self.cones.push(cone);
    }

    pub fn n_vars(&self) -> usize {
        self.objective.len()
    }

    pub fn objective(&self) -> &[f64] {
        &self.objective
    }

    pub fn cones(&self) -> &[SocConstraint] {
        &self.cones
    }

    pub fn bounds(&self, j: usize) -> (f64, f64) {
        (self.lower[j], self.upper[j])
    }

    pub fn name(&self, j: usize) -> &str {
        &self.names[j]
    }

    pub fn objective_value(&self, x: &[f64]) -> f64 {
        self.objective.iter().zip(x).map(|(c, v)| c * v).sum()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.n_vars();
        if n == 0 {
            return Err(Error::InvalidParameter("program has no variables".into()));
        }
        if self.objective.iter().any(|c| !c.is_finite()) {
            return Err(Error::InvalidParameter("objective must be finite".into()));
        }
        for (j, (lo, hi)) in self.lower.iter().zip(&self.upper).enumerate() {
            if lo.is_nan() || hi.is_nan() || lo > hi {
                return Err(Error::InvalidParameter(format!(
                    "variable {} has bounds [{lo}, {hi}]",
                    self.names[j]
                )));
            }
        }
        for (i, cone) in self.cones.iter().enumerate() {
            for e in std::iter::once(&cone.rhs).chain(&cone.lhs) {
                if e.terms.iter().any(|&(j, c)| j >= n || !c.is_finite()) || !e.constant.is_finite()
                {
                    return Err(Error::InvalidParameter(format!(
                        "cone {i} references a missing variable or non-finite data"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Largest cone or bound violation at `x`.
    pub fn max_violation(&self, x: &[f64]) -> f64 {
        let cones = self
            .cones
            .iter()
            .map(|c| c.violation(x))
            .fold(0.0, f64::max);
        let bounds = (0..self.n_vars())
            .map(|j| (self.lower[j] - x[j]).max(x[j] - self.upper[j]).max(0.0))
            .fold(0.0, f64::max);
        cones.max(bounds)
    }

    /// Same feasible set with every cone divided by its largest row norm.
    pub fn rescaled(&self) -> Self {
        let mut out = self.clone();
        for cone in &mut out.cones {
            let s = cone.max_row_norm();
            if s > 0.0 && s.is_finite() {
                let f = 1.0 / s;
                cone.rhs = cone.rhs.scaled(f);
                for e in &mut cone.lhs {
                    *e = e.scaled(f);
                }
            }
        }
        out
    }

    /// Feasibility problem: minimize `t >= 0` with every cone's right-hand side
    /// loosened by `t`. The original objective is dropped.
    fn phase_one(&self) -> (Self, usize) {
        let mut out = self.clone();
        out.objective.iter_mut().for_each(|c| *c = 0.0);
        let t = out.add_var("phase_one_t", 0.0, f64::INFINITY);
        out.set_cost(t, 1.0);
        for cone in &mut out.cones {
            cone.rhs.terms.push((t, 1.0));
        }
        (out, t)
    }

    /// Plain-text dump (see [`SocProgram::from_text`]).
    ///
    /// ```text
    /// socp <n_vars> <n_cones>
    /// var <j> <name> <lower> <upper>
    /// cost <j> <c_j>                 (nonzero entries only)
    /// cone <dim>
    /// rhs <constant> <j>:<coef> ...
    /// row <constant> <j>:<coef> ...  (dim - 1 lines)
    /// ```
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "socp {} {}", self.n_vars(), self.cones.len());
        for j in 0..self.n_vars() {
            let _ = writeln!(
                out,
                "var {j} {} {:e} {:e}",
                self.names[j].replace(char::is_whitespace, "_"),
                self.lower[j],
                self.upper[j]
            );
        }
        for (j, c) in self.objective.iter().enumerate() {
            if *c != 0.0 {
                let _ = writeln!(out, "cost {j} {c:e}");
            }
        }
        let write_expr = |out: &mut String, tag: &str, e: &AffineExpr| {
            let _ = write!(out, "{tag} {:e}", e.constant);
            for (j, c) in &e.terms {
                let _ = write!(out, " {j}:{c:e}");
            }
            out.push('\n');
        };
        for cone in &self.cones {
            let _ = writeln!(out, "cone {}", cone.dim());
            write_expr(&mut out, "rhs", &cone.rhs);
            for e in &cone.lhs {
                write_expr(&mut out, "row", e);
            }
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let bad =
            |line: usize, what: &str| Error::InvalidParameter(format!("line {}: {what}", line + 1));
        let num = |s: &str, line: usize| -> Result<f64> {
            match s {
                "inf" => Ok(f64::INFINITY),
                "-inf" => Ok(f64::NEG_INFINITY),
                _ => s.parse().map_err(|_| bad(line, "bad number")),
            }
        };
        let parse_expr = |fields: &[&str], line: usize| -> Result<AffineExpr> {
            let constant = num(
                fields
                    .first()
                    .ok_or_else(|| bad(line, "missing constant"))?,
                line,
            )?;
            let terms = fields[1..]
                .iter()
                .map(|f| {
                    let (j, c) = f.split_once(':').ok_or_else(|| bad(line, "bad term"))?;
                    Ok((
                        j.parse().map_err(|_| bad(line, "bad index"))?,
                        num(c, line)?,
                    ))
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(AffineExpr { terms, constant })
        };

        let mut prog = SocProgram::new();
        let mut pending: Option<(usize, Option<AffineExpr>, Vec<AffineExpr>)> = None;
        let flush =
            |prog: &mut SocProgram,
             pending: &mut Option<(usize, Option<AffineExpr>, Vec<AffineExpr>)>| {
                if let Some((_, Some(rhs), lhs)) = pending.take() {
                    prog.add_cone(SocConstraint::new(lhs, rhs));
                }
            };
        for (ln, raw) in text.lines().enumerate() {
            let fields: Vec<&str> = raw.split_whitespace().collect();
            let Some((&tag, rest)) = fields.split_first() else {
                continue;
            };
            match tag {
                "socp" => {}
                "var" => {
                    if rest.len() != 4 {
                        return Err(bad(ln, "var needs index, name, lower, upper"));
                    }
                    prog.add_var(rest[1], num(rest[2], ln)?, num(rest[3], ln)?);
                }
                "cost" => {
                    let j: usize = rest
                        .first()
                        .and_then(|s| s.parse().ok())
                        .ok_or_else(|| bad(ln, "bad cost index"))?;
                    if j >= prog.n_vars() {
                        return Err(bad(ln, "cost index out of range"));
                    }
                    prog.set_cost(
                        j,
                        num(rest.get(1).ok_or_else(|| bad(ln, "missing cost"))?, ln)?,
                    );
                }
                "cone" => {
                    flush(&mut prog, &mut pending);
                    let dim = rest
                        .first()
                        .and_then(|s| s.parse().ok())
                        .ok_or_else(|| bad(ln, "bad cone dim"))?;
                    pending = Some((dim, None, Vec::new()));
                }
                "rhs" => match pending.as_mut() {
                    Some((_, rhs @ None, _)) => *rhs = Some(parse_expr(rest, ln)?),
                    _ => return Err(bad(ln, "unexpected rhs")),
                },
                "row" => match pending.as_mut() {
                    Some((_, Some(_), lhs)) => lhs.push(parse_expr(rest, ln)?),
                    _ => return Err(bad(ln, "row before rhs")),
                },
                _ => return Err(bad(ln, "unknown record")),
            }
            if let Some((dim, Some(_), lhs)) = &pending {
                if lhs.len() + 1 > *dim {
                    return Err(bad(ln, "cone has more rows than declared"));
                }
            }
        }
        flush(&mut prog, &mut pending);
        prog.validate()?;
        Ok(prog)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveStatus {
    Optimal,
    Infeasible,
    Unbounded,
    NumericalFailure,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveResult {
    pub status: SolveStatus,
    pub x: Vec<f64>,
    pub objective: f64,
    /// Interior-point iterations summed over all attempts.
    pub iterations: u32,
    pub seconds: f64,
    pub max_violation: f64,
}

impl SolveResult {
    pub fn is_optimal(&self) -> bool {
        self.status == SolveStatus::Optimal
    }
}

struct RawSolve {
    status: SolverStatus,
    x: Vec<f64>,
    iterations: u32,
}

fn run_clarabel(program: &SocProgram, tol: f64) -> RawSolve {
    let n = program.n_vars();
    let mut rows = Vec::new();
    let mut cols = Vec::new();
    let mut vals = Vec::new();
    let mut b = Vec::new();
    let mut cones = Vec::new();
    let mut push_row = |e: &AffineExpr, sign: f64, rows: &mut Vec<usize>, b: &mut Vec<f64>| {
        let r = b.len();
        for &(j, c) in &e.terms {
            if c != 0.0 {
                rows.push(r);
                cols.push(j);
                vals.push(-sign * c);
            }
        }
        b.push(sign * e.constant);
    };

    // bounds: x_j - lower >= 0 and upper - x_j >= 0
    let mut nonneg = 0;
    for j in 0..n {
        let (lo, hi) = program.bounds(j);
        if lo.is_finite() {
            push_row(
                &AffineExpr {
                    terms: vec![(j, 1.0)],
                    constant: -lo,
                },
                1.0,
                &mut rows,
                &mut b,
            );
            nonneg += 1;
        }
        if hi.is_finite() {
            push_row(
                &AffineExpr {
                    terms: vec![(j, -1.0)],
                    constant: hi,
                },
                1.0,
                &mut rows,
                &mut b,
            );
            nonneg += 1;
        }
    }
    // one-dimensional cones are plain nonnegativity rows
    for cone in program.cones().iter().filter(|c| c.lhs.is_empty()) {
        push_row(&cone.rhs, 1.0, &mut rows, &mut b);
        nonneg += 1;
    }
    if nonneg > 0 {
        cones.push(SupportedConeT::NonnegativeConeT(nonneg));
    }
    for cone in program.cones().iter().filter(|c| !c.lhs.is_empty()) {
        push_row(&cone.rhs, 1.0, &mut rows, &mut b);
        for e in &cone.lhs {
            push_row(e, 1.0, &mut rows, &mut b);
        }
        cones.push(SupportedConeT::SecondOrderConeT(cone.dim()));
    }

    let a = CscMatrix::new_from_triplets(b.len(), n, rows, cols, vals);
    let p = CscMatrix::zeros((n, n));
    let settings = DefaultSettings {
        verbose: false,
        tol_gap_abs: tol * 1e-4,
        tol_gap_rel: tol,
        tol_feas: tol,
        max_iter: 200,
        ..DefaultSettings::default()
    };
    match DefaultSolver::new(&p, program.objective(), &a, &b, &cones, settings) {
        Ok(mut solver) => {
            solver.solve();
            RawSolve {
                status: solver.solution.status,
                x: solver.solution.x.clone(),
                iterations: solver.solution.iterations,
            }
        }
        Err(_) => RawSolve {
            status: SolverStatus::NumericalError,
            x: vec![f64::NAN; n],
            iterations: 0,
        },
    }
}

/// Violation scale used to accept a solution: `tol * (1 + ||x||_inf)` per unit of cone data.
fn accept_threshold(program: &SocProgram, x: &[f64], tol: f64) -> f64 {
    let xnorm = x.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let scale = program
        .cones()
        .iter()
        .map(SocConstraint::max_row_norm)
        .fold(1.0, f64::max);
    1e2 * tol * (1.0 + xnorm) * scale
}

fn classify(program: &SocProgram, raw: &RawSolve, tol: f64) -> Option<SolveStatus> {
    match raw.status {
        SolverStatus::Solved | SolverStatus::AlmostSolved => {
            if raw.x.iter().all(|v| v.is_finite())
                && program.max_violation(&raw.x) <= accept_threshold(program, &raw.x, tol)
            {
                Some(SolveStatus::Optimal)
            } else {
                None
            }
        }
        SolverStatus::PrimalInfeasible | SolverStatus::AlmostPrimalInfeasible => {
            Some(SolveStatus::Infeasible)
        }
        SolverStatus::DualInfeasible | SolverStatus::AlmostDualInfeasible => {
            Some(SolveStatus::Unbounded)
        }
        _ => None,
    }
}

/// Solves `program` to relative accuracy `tol`. Deterministic for identical inputs.
pub fn solve(program: &SocProgram, tol: f64) -> Result<SolveResult> {
    program.validate()?;
    if !(tol > 0.0) {
        return Err(Error::InvalidParameter(
            "solver tolerance must be positive".into(),
        ));
    }
    let start = Instant::now();
    let finish = |status: SolveStatus, x: Vec<f64>, iterations: u32| {
        let (objective, max_violation) = if x.iter().all(|v| v.is_finite()) {
            (program.objective_value(&x), program.max_violation(&x))
        } else {
            (f64::NAN, f64::NAN)
        };
        SolveResult {
            status,
            x,
            objective,
            iterations,
            seconds: start.elapsed().as_secs_f64(),
            max_violation,
        }
    };

    let first = run_clarabel(program, tol);
    let mut iterations = first.iterations;
    if let Some(status) = classify(program, &first, tol) {
        return Ok(finish(status, first.x, iterations));
    }

    let rescaled = program.rescaled();
    let second = run_clarabel(&rescaled, tol);
    iterations += second.iterations;
    if let Some(status) = classify(program, &second, tol) {
        return Ok(finish(status, second.x, iterations));
    }

    let (feas, t) = rescaled.phase_one();
    let third = run_clarabel(&feas, tol);
    iterations += third.iterations;
    let status = match third.status {
        SolverStatus::Solved | SolverStatus::AlmostSolved if third.x[t] > PHASE_ONE_INFEASIBLE => {
            SolveStatus::Infeasible
        }
        SolverStatus::PrimalInfeasible | SolverStatus::AlmostPrimalInfeasible => {
            SolveStatus::Infeasible
        }
        _ => SolveStatus::NumericalFailure,
    };
    let x = match status {
        SolveStatus::NumericalFailure => second.x,
        _ => vec![f64::NAN; program.n_vars()],
    };
    Ok(finish(status, x, iterations))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn norm_of_constant() {
        // minimize s s.t. ||x|| <= s, x fixed at 3
        let mut p = SocProgram::new();
        let x = p.add_var("x", 3.0, 3.0);
        let s = p.add_var("s", f64::NEG_INFINITY, f64::INFINITY);
        p.set_cost(s, 1.0);
        p.add_cone(SocConstraint::new(
            vec![AffineExpr::var(x)],
            AffineExpr::var(s),
        ));
        let r = solve(&p, DEFAULT_TOL).unwrap();
        assert_eq!(r.status, SolveStatus::Optimal);
        assert!((r.objective - 3.0).abs() < 1e-7, "{}", r.objective);
    }

    #[test]
    fn infeasible_cone_detected() {
        // ||(1)|| <= x with x <= 0.5
        let mut p = SocProgram::new();
        let x = p.add_var("x", f64::NEG_INFINITY, 0.5);
        p.set_cost(x, 1.0);
        p.add_cone(SocConstraint::new(
            vec![AffineExpr::constant(1.0)],
            AffineExpr::var(x),
        ));
        let r = solve(&p, DEFAULT_TOL).unwrap();
        assert_eq!(r.status, SolveStatus::Infeasible);
    }

    #[test]
    fn unbounded_detected() {
        let mut p = SocProgram::new();
        let x = p.add_var("x", f64::NEG_INFINITY, f64::INFINITY);
        let y = p.add_var("y", f64::NEG_INFINITY, f64::INFINITY);
        p.set_cost(x, -1.0);
        p.add_cone(SocConstraint::new(
            vec![AffineExpr::var(x)],
            AffineExpr::var(y),
        ));
        let r = solve(&p, DEFAULT_TOL).unwrap();
        assert_eq!(r.status, SolveStatus::Unbounded);
    }

    #[test]
    fn distance_to_a_disc() {
        // minimize x + y s.t. ||(x - 1, y - 1)|| <= 1: optimum 2 - sqrt(2)
        let mut p = SocProgram::new();
        let x = p.add_var("x", f64::NEG_INFINITY, f64::INFINITY);
        let y = p.add_var("y", f64::NEG_INFINITY, f64::INFINITY);
        p.set_cost(x, 1.0);
        p.set_cost(y, 1.0);
        p.add_cone(SocConstraint::new(
            vec![
                AffineExpr {
                    terms: vec![(x, 1.0)],
                    constant: -1.0,
                },
                AffineExpr {
                    terms: vec![(y, 1.0)],
                    constant: -1.0,
                },
            ],
            AffineExpr::constant(1.0),
        ));
        let r = solve(&p, DEFAULT_TOL).unwrap();
        assert!(r.is_optimal());
        assert!((r.objective - (2.0 - 2f64.sqrt())).abs() < 1e-7);
    }

    #[test]
    fn empty_program_rejected() {
        assert!(solve(&SocProgram::new(), DEFAULT_TOL).is_err());
    }

    #[test]
    fn text_dump_round_trips() {
        let mut p = SocProgram::new();
        let x = p.add_var("q 0", 0.0, f64::INFINITY);
        let s = p.add_var("s", f64::NEG_INFINITY, f64::INFINITY);
        p.set_cost(s, 1.0);
        p.add_cone(SocConstraint::new(
            vec![AffineExpr::term(x, 0.1 + 0.2), AffineExpr::constant(1e-300)],
            AffineExpr::var(s),
        ));
        p.add_cone(SocConstraint::new(
            vec![],
            AffineExpr {
                terms: vec![(x, 1.0)],
                constant: -0.5,
            },
        ));
        let back = SocProgram::from_text(&p.to_text()).unwrap();
        assert_eq!(back.to_text(), p.to_text());
        assert_eq!(back.cones(), p.cones());
        assert_eq!(back.objective(), p.objective());
    }
}
