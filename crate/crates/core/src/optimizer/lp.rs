//! Dense exact-rational primal simplex.
//!
//! Solves `maximize c.y  s.t.  A y <= b, y >= 0` with `b >= 0`, so the
//! all-slack basis is feasible and no phase-1 is needed. Bland's rule keeps
//! the pivot sequence finite and deterministic. Instances here are tiny
//! (one variable per sensor node), so exactness is worth far more than
//! speed.

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, Zero};

pub struct LpSolution {
    pub values: Vec<BigRational>,
    pub objective: BigRational,
}

/// `rows` are `(coefficients, bound)` pairs over `n` structural variables.
/// Every bound must be non-negative. Returns the optimal vertex; panics if
/// the problem is unbounded, which callers exclude by passing explicit
/// upper-bound rows.
pub fn maximize(n: usize, rows: &[(Vec<BigRational>, BigRational)], costs: &[BigRational]) -> LpSolution {
    assert_eq!(costs.len(), n);
    let m = rows.len();
    let width = n + m + 1; // structurals, slacks, rhs

    let mut tab: Vec<Vec<BigRational>> = Vec::with_capacity(m);
    for (i, (coefs, bound)) in rows.iter().enumerate() {
        assert_eq!(coefs.len(), n);
        assert!(!bound.is_negative(), "rhs must be non-negative");
        let mut row = vec![BigRational::zero(); width];
        row[..n].clone_from_slice(coefs);
        row[n + i] = BigRational::one();
        row[width - 1] = bound.clone();
        tab.push(row);
    }

    // Reduced-cost row: z_j - c_j, starting from the slack basis.
    let mut cost = vec![BigRational::zero(); width];
    for j in 0..n {
        cost[j] = -costs[j].clone();
    }

    let mut basis: Vec<usize> = (n..n + m).collect();

    loop {
        // Bland: smallest-index column with negative reduced cost.
        let Some(enter) = (0..n + m).find(|&j| cost[j].is_negative()) else {
            break;
        };

        // Ratio test; ties resolved toward the smallest basic index.
        let mut leave: Option<usize> = None;
        let mut best: Option<BigRational> = None;
        for i in 0..m {
            if tab[i][enter].is_positive() {
                let ratio = &tab[i][width - 1] / &tab[i][enter];
                let better = match &best {
                    None => true,
                    Some(b) => ratio < *b || (ratio == *b && basis[i] < basis[leave.unwrap()]),
                };
                if better {
                    best = Some(ratio);
                    leave = Some(i);
                }
            }
        }
        let leave = leave.expect("LP is unbounded; bound rows missing");

        // Pivot.
        let pivot = tab[leave][enter].clone();
        for v in tab[leave].iter_mut() {
            *v /= &pivot;
        }
        for i in 0..m {
            if i != leave && !tab[i][enter].is_zero() {
                let factor = tab[i][enter].clone();
                for j in 0..width {
                    let delta = &factor * &tab[leave][j];
                    tab[i][j] -= delta;
                }
            }
        }
        if !cost[enter].is_zero() {
            let factor = cost[enter].clone();
            for j in 0..width {
                let delta = &factor * &tab[leave][j];
                cost[j] -= delta;
            }
        }
        basis[leave] = enter;
    }

    let mut values = vec![BigRational::zero(); n];
    for (i, &b) in basis.iter().enumerate() {
        if b < n {
            values[b] = tab[i][width - 1].clone();
        }
    }
    let objective = values
        .iter()
        .zip(costs)
        .map(|(v, c)| v * c)
        .fold(BigRational::zero(), |acc, t| acc + t);
    LpSolution { values, objective }
}

pub fn big(v: i64) -> BigRational {
    BigRational::from_integer(BigInt::from(v))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn r(n: i64, d: i64) -> BigRational {
        BigRational::new(BigInt::from(n), BigInt::from(d))
    }

    #[test]
    fn one_dimensional_bound() {
        let sol = maximize(1, &[(vec![big(1)], big(7))], &[big(1)]);
        assert_eq!(sol.objective, big(7));
    }

    #[test]
    fn classic_two_variable() {
        // max x + y s.t. x + 2y <= 4, 3x + y <= 6 -> optimum at (8/5, 6/5)
        let rows = vec![
            (vec![big(1), big(2)], big(4)),
            (vec![big(3), big(1)], big(6)),
        ];
        let sol = maximize(2, &rows, &[big(1), big(1)]);
        assert_eq!(sol.objective, r(14, 5));
        assert_eq!(sol.values, vec![r(8, 5), r(6, 5)]);
    }

    #[test]
    fn degenerate_rows_terminate() {
        let rows = vec![
            (vec![big(1), big(1)], big(0)),
            (vec![big(1), big(0)], big(5)),
            (vec![big(0), big(1)], big(5)),
        ];
        let sol = maximize(2, &rows, &[big(1), big(1)]);
        assert_eq!(sol.objective, big(0));
    }
}
