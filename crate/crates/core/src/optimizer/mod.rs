//! Constraint generation and exact integer optimization of bundling numbers.
//!
//! The planning problem: maximize the total bundling number subject to one
//! path-delay inequality per sensor node and box bounds on every variable.
//! Constraint coefficients are exact rationals (`interval / streams`), the
//! LP relaxation is solved with exact rational simplex, and branch-and-bound
//! closes the integrality gap. A brute-force enumerator with the same
//! tie-break order ships alongside as the test oracle.

mod lp;

use std::fmt;

use num_bigint::BigInt;
use num_rational::{BigRational, Ratio};
use num_traits::{Signed, ToPrimitive, Zero};
use thiserror::Error;

use crate::model::{BundlingPlan, NodeId, RequirementSet, Topology};
use crate::sync::{accuracy_to_si, AccuracyTable, SyncError};
use crate::time::Micros;

#[derive(Debug, Error, PartialEq)]
pub enum OptimizerError {
    #[error(transparent)]
    Sync(#[from] SyncError),
    #[error("node {node}: bounds alone violate the delay budget ({lhs_micros} us > {bound_micros} us at the minimum bundling number)")]
    InfeasibleBounds {
        node: NodeId,
        lhs_micros: u64,
        bound_micros: u64,
    },
    #[error("brute-force instance too large: {points} points exceeds the {limit} guard")]
    InstanceTooLarge { points: u128, limit: u128 },
    #[error("invalid requirement: {0}")]
    InvalidRequirement(#[from] crate::model::RequirementError),
}

/// One path-delay inequality: `sum(coef * bundling(node)) <= bound`.
/// Terms follow root-path order (owner first); coefficients are in
/// microseconds per bundling unit.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConstraintRow {
    pub owner: NodeId,
    pub terms: Vec<(NodeId, Ratio<i64>)>,
    pub bound: Ratio<i64>,
}

/// The full integer program: box bounds for every sensor node plus one
/// inequality per sensor node. The objective (maximize the total bundling
/// number) is implicit.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConstraintSet {
    /// Decision variables in ascending node order.
    pub vars: Vec<NodeId>,
    pub lower: u32,
    pub upper: u32,
    pub rows: Vec<ConstraintRow>,
}

impl ConstraintSet {
    fn var_index(&self, node: NodeId) -> usize {
        self.vars
            .binary_search(&node)
            .expect("constraint term references unknown variable")
    }

    /// Left-hand side of a row at an integer point, exact microseconds.
    fn row_lhs(&self, row: &ConstraintRow, point: &[u32]) -> Ratio<i128> {
        let mut acc = Ratio::new(0, 1);
        for (node, coef) in &row.terms {
            let v = point[self.var_index(*node)] as i128;
            acc += Ratio::new(*coef.numer() as i128 * v, *coef.denom() as i128);
        }
        acc
    }

    fn row_feasible(&self, row: &ConstraintRow, point: &[u32]) -> bool {
        self.row_lhs(row, point) <= Ratio::new(*row.bound.numer() as i128, *row.bound.denom() as i128)
    }

    pub fn is_feasible(&self, point: &[u32]) -> bool {
        point.iter().all(|&v| self.lower <= v && v <= self.upper)
            && self.rows.iter().all(|r| self.row_feasible(r, point))
    }
}

impl fmt::Display for ConstraintSet {
    /// Human-readable dump, one inequality per line with coefficients and
    /// bounds reduced to seconds: `1*G4 + 1/2*G2 + 1/4*G1 <= 8`.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for row in &self.rows {
            let mut first = true;
            for (node, coef) in &row.terms {
                if !first {
                    write!(f, " + ")?;
                }
                write!(f, "{}*G{}", fmt_secs_ratio(*coef), node)?;
                first = false;
            }
            writeln!(f, " <= {}", fmt_secs_ratio(row.bound))?;
        }
        writeln!(f, "bounds: {} <= G<i> <= {}", self.lower, self.upper)?;
        write!(
            f,
            "objective: maximize {}",
            self.vars
                .iter()
                .map(|n| format!("G{n}"))
                .collect::<Vec<_>>()
                .join(" + ")
        )
    }
}

fn fmt_secs_ratio(micros: Ratio<i64>) -> String {
    let secs = micros / Ratio::new(1_000_000, 1) * Ratio::new(1, 1);
    let secs = Ratio::new(*secs.numer(), *secs.denom());
    if secs.is_integer() {
        format!("{}", secs.numer())
    } else {
        format!("{}/{}", secs.numer(), secs.denom())
    }
}

/// The delay budget both requirements jointly impose: the tighter of the
/// explicit delay bound and the interval the accuracy requirement permits.
pub fn effective_delay_bound(
    max_delay: Micros,
    max_sync_error_secs: f64,
    table: &AccuracyTable,
) -> Result<Micros, SyncError> {
    let from_accuracy = accuracy_to_si(max_sync_error_secs, table)?;
    Ok(max_delay.min(from_accuracy))
}

/// Emit the integer program for `topology` under `req`: one inequality per
/// sensor node over its root path, plus box bounds for every node.
pub fn build_constraints(
    topology: &Topology,
    req: &RequirementSet,
    table: &AccuracyTable,
) -> Result<ConstraintSet, OptimizerError> {
    req.validate()?;
    let bound = effective_delay_bound(req.max_delay, req.max_sync_error_secs, table)?;
    let bound = Ratio::new(bound.as_micros() as i64, 1);
    let interval = req.measurement_interval.as_micros() as i64;

    let vars: Vec<NodeId> = topology.sensors().collect();
    let mut rows = Vec::with_capacity(vars.len());
    for &node in &vars {
        let mut terms = Vec::new();
        for &hop in topology.path(node).unwrap() {
            let streams = 1 + topology.offspring_count(hop).unwrap() as i64;
            terms.push((hop, Ratio::new(interval, streams)));
        }
        rows.push(ConstraintRow {
            owner: node,
            terms,
            bound,
        });
    }

    let cs = ConstraintSet {
        vars,
        lower: req.bundle_min,
        upper: req.bundle_max,
        rows,
    };

    // The all-minimum point is the least demanding; if it already blows the
    // budget for some node, no plan exists. Report the tightest path.
    let floor_point = vec![cs.lower; cs.vars.len()];
    let mut worst: Option<(Ratio<i128>, &ConstraintRow)> = None;
    for row in &cs.rows {
        let lhs = cs.row_lhs(row, &floor_point);
        let b = Ratio::new(*row.bound.numer() as i128, *row.bound.denom() as i128);
        if lhs > b && worst.as_ref().is_none_or(|(w, _)| lhs > *w) {
            worst = Some((lhs, row));
        }
    }
    if let Some((lhs, row)) = worst {
        return Err(OptimizerError::InfeasibleBounds {
            node: row.owner,
            lhs_micros: lhs.ceil().to_integer() as u64,
            bound_micros: row.bound.to_integer() as u64,
        });
    }
    Ok(cs)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SolveStatus {
    Optimal,
    Infeasible,
}

#[derive(Clone, Debug)]
pub struct SolveReport {
    pub plan: BundlingPlan,
    pub objective: u64,
    pub status: SolveStatus,
    pub nodes_explored: u64,
    /// Root LP-relaxation bound on the objective; `None` when infeasible.
    pub lp_bound: Option<BigRational>,
}

impl SolveReport {
    fn infeasible(nodes_explored: u64) -> Self {
        SolveReport {
            plan: BundlingPlan::new(),
            objective: 0,
            status: SolveStatus::Infeasible,
            nodes_explored,
            lp_bound: None,
        }
    }
}

/// Total order used to pick among equally-good integer points: higher
/// objective first, then the lexicographically larger assignment in
/// ascending node order. Encoded as a single integer so branch-and-bound
/// and the brute-force oracle cannot disagree on ties.
struct TieBreak {
    /// Composite cost per variable: `base^(n+1) + base^(n-j)`.
    costs: Vec<BigRational>,
}

impl TieBreak {
    fn new(n: usize, upper: u32) -> Self {
        let base = BigInt::from(upper as u64 + 1);
        let dominant = BigRational::from_integer(base.pow(n as u32 + 1));
        let costs = (0..n)
            .map(|j| {
                let weight = BigRational::from_integer(base.pow((n - j) as u32));
                &dominant + weight
            })
            .collect();
        TieBreak { costs }
    }

    fn score(&self, point: &[u32]) -> BigRational {
        point
            .iter()
            .zip(&self.costs)
            .map(|(&v, c)| c * BigRational::from_integer(BigInt::from(v)))
            .fold(BigRational::zero(), |acc, t| acc + t)
    }
}

/// Exact solve by depth-first branch-and-bound over the LP relaxation.
///
/// Branching follows the fractional variable with the largest LP value,
/// exploring the floor side first. All arithmetic is rational, so
/// feasibility and bounds are exact; identical inputs yield the identical
/// plan, not merely the same objective.
pub fn solve(cs: &ConstraintSet) -> SolveReport {
    let n = cs.vars.len();
    if n == 0 {
        return SolveReport::infeasible(0);
    }
    if cs.lower > cs.upper {
        return SolveReport::infeasible(0);
    }

    let tie = TieBreak::new(n, cs.upper);
    let plain_costs: Vec<BigRational> = vec![lp::big(1); n];

    let mut nodes_explored: u64 = 0;
    let mut incumbent: Option<(BigRational, Vec<u32>)> = None;
    let mut root_bound: Option<BigRational> = None;

    let mut stack: Vec<(Vec<u32>, Vec<u32>)> =
        vec![(vec![cs.lower; n], vec![cs.upper; n])];

    while let Some((lo, hi)) = stack.pop() {
        nodes_explored += 1;
        let is_root = nodes_explored == 1;

        let Some(shifted) = shift_problem(cs, &lo, &hi) else {
            continue; // branch bounds alone are infeasible
        };

        if is_root {
            let sol = lp::maximize(n, &shifted, &plain_costs);
            let offset: i64 = lo.iter().map(|&v| v as i64).sum();
            root_bound = Some(sol.objective + lp::big(offset));
        }

        let sol = lp::maximize(n, &shifted, &tie.costs);
        let base_score = tie.score(&lo);
        let bound = &sol.objective + &base_score;

        if let Some((best, _)) = &incumbent {
            if bound.floor() <= *best {
                continue;
            }
        }

        // Fractional variable with the largest LP value; none means the
        // relaxation solved the box exactly.
        let mut branch: Option<(usize, &BigRational)> = None;
        for (j, v) in sol.values.iter().enumerate() {
            if !v.is_integer() {
                let better = match branch {
                    None => true,
                    Some((_, bv)) => v > bv,
                };
                if better {
                    branch = Some((j, v));
                }
            }
        }

        match branch {
            None => {
                let point: Vec<u32> = sol
                    .values
                    .iter()
                    .zip(&lo)
                    .map(|(v, &l)| l + v.to_integer().to_u32().unwrap())
                    .collect();
                let score = tie.score(&point);
                let improves = match &incumbent {
                    None => true,
                    Some((best, _)) => score > *best,
                };
                if improves {
                    incumbent = Some((score, point));
                }
            }
            Some((j, value)) => {
                let split = lo[j] + value.floor().to_integer().to_u32().unwrap();
                let mut down_hi = hi.clone();
                down_hi[j] = split;
                let mut up_lo = lo.clone();
                up_lo[j] = split + 1;
                // floor side explored first
                if up_lo[j] <= hi[j] {
                    stack.push((up_lo, hi.clone()));
                }
                stack.push((lo, down_hi));
            }
        }
    }

    match incumbent {
        None => SolveReport::infeasible(nodes_explored),
        Some((_, point)) => {
            let mut plan = BundlingPlan::new();
            for (&node, &v) in cs.vars.iter().zip(&point) {
                plan.set(node, v);
            }
            SolveReport {
                objective: plan.objective(),
                plan,
                status: SolveStatus::Optimal,
                nodes_explored,
                lp_bound: root_bound,
            }
        }
    }
}

/// Shift the box to the origin (`y = x - lo`) and emit simplex rows:
/// path inequalities with adjusted bounds, then per-variable upper bounds.
/// `None` when a shifted bound is negative — with all-positive coefficients
/// that branch cannot contain a feasible point.
fn shift_problem(
    cs: &ConstraintSet,
    lo: &[u32],
    hi: &[u32],
) -> Option<Vec<(Vec<BigRational>, BigRational)>> {
    let n = cs.vars.len();
    let mut rows = Vec::with_capacity(cs.rows.len() + n);
    for row in &cs.rows {
        let mut coefs = vec![BigRational::zero(); n];
        let mut shifted = BigRational::new(
            BigInt::from(*row.bound.numer()),
            BigInt::from(*row.bound.denom()),
        );
        for (node, coef) in &row.terms {
            let j = cs.var_index(*node);
            let c = BigRational::new(BigInt::from(*coef.numer()), BigInt::from(*coef.denom()));
            shifted -= &c * BigRational::from_integer(BigInt::from(lo[j]));
            coefs[j] = c;
        }
        if shifted.is_negative() {
            return None;
        }
        rows.push((coefs, shifted));
    }
    for j in 0..n {
        if hi[j] < lo[j] {
            return None;
        }
        let mut coefs = vec![BigRational::zero(); n];
        coefs[j] = lp::big(1);
        rows.push((coefs, lp::big((hi[j] - lo[j]) as i64)));
    }
    Some(rows)
}

/// Exhaustive oracle over the box with the same tie-break order as
/// [`solve`]. Guarded against accidental blow-ups.
pub fn brute_force_solve(cs: &ConstraintSet) -> Result<SolveReport, OptimizerError> {
    const LIMIT: u128 = 10_000_000;
    let n = cs.vars.len();
    if n == 0 || cs.lower > cs.upper {
        return Ok(SolveReport::infeasible(0));
    }
    let span = (cs.upper - cs.lower + 1) as u128;
    let points = span.checked_pow(n as u32).unwrap_or(u128::MAX);
    if points > LIMIT {
        return Err(OptimizerError::InstanceTooLarge {
            points,
            limit: LIMIT,
        });
    }

    let mut best: Option<(u64, Vec<u32>)> = None;
    let mut point = vec![cs.lower; n];
    let mut explored: u64 = 0;
    loop {
        explored += 1;
        if cs.is_feasible(&point) {
            let obj: u64 = point.iter().map(|&v| v as u64).sum();
            let improves = match &best {
                None => true,
                Some((bo, bp)) => obj > *bo || (obj == *bo && point > *bp),
            };
            if improves {
                best = Some((obj, point.clone()));
            }
        }
        // odometer increment
        let mut j = n;
        loop {
            if j == 0 {
                break;
            }
            j -= 1;
            if point[j] < cs.upper {
                point[j] += 1;
                for p in point.iter_mut().skip(j + 1) {
                    *p = cs.lower;
                }
                break;
            }
            if j == 0 {
                let report = match best {
                    None => SolveReport::infeasible(explored),
                    Some((obj, p)) => {
                        let mut plan = BundlingPlan::new();
                        for (&node, &v) in cs.vars.iter().zip(&p) {
                            plan.set(node, v);
                        }
                        SolveReport {
                            plan,
                            objective: obj,
                            status: SolveStatus::Optimal,
                            nodes_explored: explored,
                            lp_bound: None,
                        }
                    }
                };
                return Ok(report);
            }
        }
    }
}
