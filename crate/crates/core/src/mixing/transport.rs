//! Exact solver for small dense transportation problems.
//!
//! Minimizes `sum_ij q_ij c_ij` subject to row sums `supply` and column sums
//! `demand` with the transportation simplex: a northwest-corner basis, dual
//! potentials on the basis tree, and cycle pivots until every reduced cost is
//! nonnegative.

use crate::error::{Error, Result};

#[derive(Clone, Debug)]
pub struct TransportPlan {
    pub cost: f64,
    /// Row-major `supply.len() x demand.len()` coupling.
    pub coupling: Vec<f64>,
    pub pivots: usize,
}

pub fn solve(supply: &[f64], demand: &[f64], cost: &[f64]) -> Result<TransportPlan> {
    let (m, n) = (supply.len(), demand.len());
    if m == 0 || n == 0 {
        return Err(Error::input("transport problem needs nonempty marginals"));
    }
    if cost.len() != m * n {
        return Err(Error::input("cost matrix has wrong shape"));
    }
    let ts: f64 = supply.iter().sum();
    let td: f64 = demand.iter().sum();
    if !(ts > 0.0 && td > 0.0) {
        return Err(Error::input("transport marginals must have positive total mass"));
    }
    if supply.iter().chain(demand).any(|v| !(v.is_finite() && *v >= 0.0)) {
        return Err(Error::input("transport marginals must be finite and nonnegative"));
    }
    // Normalize both sides to unit mass so rounding in the inputs cannot make
    // the problem infeasible.
    let a: Vec<f64> = supply.iter().map(|v| v / ts).collect();
    let b: Vec<f64> = demand.iter().map(|v| v / td).collect();

    let mut flow = vec![0.0; m * n];
    let mut basic = vec![false; m * n];
    northwest_corner(&a, &b, &mut flow, &mut basic);

    let cmax = cost.iter().fold(0.0f64, |acc, c| acc.max(c.abs()));
    let tol = 1e-13 * cmax.max(1e-300);
    let mut pivots = 0;
    let max_pivots = 50 * (m + n) * (m + n) + 1000;
    loop {
        let (u, v) = potentials(m, n, &basic, cost);
        let bland = pivots > 10 * (m + n);
        let mut entering: Option<(usize, f64)> = None;
        for i in 0..m {
            for j in 0..n {
                let k = i * n + j;
                if basic[k] {
                    continue;
                }
                let rc = cost[k] - u[i] - v[j];
                if rc < -tol {
                    match entering {
                        None => entering = Some((k, rc)),
                        Some((_, best)) if !bland && rc < best => entering = Some((k, rc)),
                        _ => {}
                    }
                    if bland {
                        break;
                    }
                }
            }
            if bland && entering.is_some() {
                break;
            }
        }
        let Some((enter, _)) = entering else { break };
        if pivots >= max_pivots {
            return Err(Error::numerical("transportation simplex did not terminate"));
        }
        pivot(m, n, enter, &mut flow, &mut basic)?;
        pivots += 1;
    }
    let total: f64 = flow.iter().zip(cost).map(|(q, c)| q * c).sum();
    Ok(TransportPlan {
        cost: total.max(0.0),
        coupling: flow,
        pivots,
    })
}

fn northwest_corner(a: &[f64], b: &[f64], flow: &mut [f64], basic: &mut [bool]) {
    let (m, n) = (a.len(), b.len());
    let (mut ra, mut rb) = (a.to_vec(), b.to_vec());
    let (mut i, mut j) = (0, 0);
    // Exactly m + n - 1 cells: each step advances one index, ending at (m-1, n-1).
    while i < m && j < n {
        let x = ra[i].min(rb[j]);
        flow[i * n + j] = x;
        basic[i * n + j] = true;
        ra[i] -= x;
        rb[j] -= x;
        if i == m - 1 || (j < n - 1 && ra[i] > rb[j]) {
            j += 1;
        } else {
            i += 1;
        }
    }
}

/// Dual potentials with `u_0 = 0`, solved over the basis spanning tree.
fn potentials(m: usize, n: usize, basic: &[bool], cost: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let mut u = vec![f64::NAN; m];
    let mut v = vec![f64::NAN; n];
    u[0] = 0.0;
    let mut stack = vec![(true, 0usize)];
    while let Some((is_row, idx)) = stack.pop() {
        if is_row {
            for j in 0..n {
                if basic[idx * n + j] && v[j].is_nan() {
                    v[j] = cost[idx * n + j] - u[idx];
                    stack.push((false, j));
                }
            }
        } else {
            for i in 0..m {
                if basic[i * n + idx] && u[i].is_nan() {
                    u[i] = cost[i * n + idx] - v[idx];
                    stack.push((true, i));
                }
            }
        }
    }
    (u, v)
}

/// Pivots `enter` into the basis along the unique cycle it closes.
fn pivot(m: usize, n: usize, enter: usize, flow: &mut [f64], basic: &mut [bool]) -> Result<()> {
    let (ei, ej) = (enter / n, enter % n);
    // Tree path from row `ei` to column `ej` via BFS over basic cells.
    // Nodes: rows 0..m, columns m..m+n.
    let total = m + n;
    let mut parent: Vec<Option<(usize, usize)>> = vec![None; total];
    let mut seen = vec![false; total];
    let start = ei;
    let goal = m + ej;
    seen[start] = true;
    let mut queue = std::collections::VecDeque::from([start]);
    while let Some(node) = queue.pop_front() {
        if node == goal {
            break;
        }
        if node < m {
            for j in 0..n {
                let cell = node * n + j;
                if basic[cell] && !seen[m + j] {
                    seen[m + j] = true;
                    parent[m + j] = Some((node, cell));
                    queue.push_back(m + j);
                }
            }
        } else {
            let j = node - m;
            for i in 0..m {
                let cell = i * n + j;
                if basic[cell] && !seen[i] {
                    seen[i] = true;
                    parent[i] = Some((node, cell));
                    queue.push_back(i);
                }
            }
        }
    }
    if !seen[goal] {
        return Err(Error::numerical("basis is not a spanning tree"));
    }
    // Walk back from the column; cells alternate -, +, -, ... starting next
    // to the entering cell, which itself is +.
    let mut path = Vec::new();
    let mut node = goal;
    while let Some((prev, cell)) = parent[node] {
        path.push(cell);
        node = prev;
    }
    let mut theta = f64::INFINITY;
    let mut leave = None;
    for (k, &cell) in path.iter().enumerate() {
        if k % 2 == 0 && flow[cell] < theta {
            theta = flow[cell];
            leave = Some(cell);
        }
    }
    let leave = leave.ok_or_else(|| Error::numerical("pivot cycle has no decreasing cell"))?;
    flow[enter] += theta;
    for (k, &cell) in path.iter().enumerate() {
        if k % 2 == 0 {
            flow[cell] -= theta;
        } else {
            flow[cell] += theta;
        }
    }
    flow[leave] = 0.0;
    basic[leave] = false;
    basic[enter] = true;
    Ok(())
}
