//! Integer feasibility search for the residual system.
//!
//! No objective: the search looks for non-negative integers satisfying every
//! row, then keeps going until it either finds a second solution or exhausts
//! the tree, which is how uniqueness is decided. Bounds start at
//! `u_e = min_b y_b / p_e` and are tightened by row propagation; branching
//! picks the row with the fewest unknowns. Two-unknown rows are enumerated
//! by congruence, which with distinct primes leaves one or two choices.

use super::DecoderConfig;
use crate::cmsketch::EquationSystem;

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum IlpOutcome {
    Unique(Vec<u64>),
    /// Two distinct solutions.
    Multiple(Vec<u64>, Vec<u64>),
    /// One solution; the budget ran out while looking for a second.
    Unverified(Vec<u64>),
}

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
pub enum IlpError {
    #[error("no non-negative integer solution")]
    Infeasible,
    #[error("search budget of {0} nodes exhausted")]
    BudgetExceeded(u64),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IlpReport {
    pub outcome: IlpOutcome,
    pub nodes: u64,
}

#[derive(Clone)]
struct State {
    lb: Vec<u64>,
    ub: Vec<u64>,
    fixed: Vec<bool>,
    rhs: Vec<u64>,
}

struct Search<'a> {
    sys: &'a EquationSystem,
    row_cols: Vec<Vec<usize>>,
    budget: u64,
    nodes: u64,
    found: Vec<Vec<u64>>,
    out_of_budget: bool,
}

pub fn ilp_solve(sys: &EquationSystem, cfg: &DecoderConfig) -> Result<IlpReport, IlpError> {
    let n = sys.num_cols();
    let mut ub = vec![u64::MAX; n];
    for (j, rows) in sys.column_rows.iter().enumerate() {
        for &r in rows {
            ub[j] = ub[j].min(sys.rhs[r] / sys.coefficients[j]);
        }
    }
    let state = State {
        lb: vec![0; n],
        ub,
        fixed: vec![false; n],
        rhs: sys.rhs.clone(),
    };
    let mut search = Search {
        sys,
        row_cols: sys.row_columns(),
        budget: cfg.ilp_node_budget,
        nodes: 0,
        found: Vec::new(),
        out_of_budget: false,
    };
    let mut root = state;
    let all_rows: Vec<usize> = (0..sys.num_rows()).collect();
    if search.enter() && search.propagate(&mut root, all_rows) {
        search.dfs(root);
    }

    let nodes = search.nodes;
    let mut found = search.found;
    let outcome = match (found.len(), search.out_of_budget) {
        (0, false) => return Err(IlpError::Infeasible),
        (0, true) => return Err(IlpError::BudgetExceeded(nodes)),
        (1, false) => IlpOutcome::Unique(found.pop().unwrap()),
        (1, true) => IlpOutcome::Unverified(found.pop().unwrap()),
        _ => {
            let b = found.pop().unwrap();
            IlpOutcome::Multiple(found.pop().unwrap(), b)
        }
    };
    Ok(IlpReport { outcome, nodes })
}

impl Search<'_> {
    fn done(&self) -> bool {
        self.found.len() >= 2 || self.out_of_budget
    }

    /// Counts one child attempt against the budget; false once the search
    /// should stop.
    fn enter(&mut self) -> bool {
        if self.done() {
            return false;
        }
        self.nodes += 1;
        if self.nodes > self.budget {
            self.out_of_budget = true;
            return false;
        }
        true
    }

    fn dfs(&mut self, st: State) {
        if self.done() {
            return;
        }

        // Row with the fewest unknowns, at least two (propagation has settled
        // everything smaller).
        let mut best: Option<(usize, usize)> = None;
        for (r, cols) in self.row_cols.iter().enumerate() {
            let free = cols.iter().filter(|&&j| !st.fixed[j]).count();
            if free >= 2 && best.is_none_or(|(_, f)| free < f) {
                best = Some((r, free));
                if free == 2 {
                    break;
                }
            }
        }
        let Some((row, free)) = best else {
            if st.fixed.iter().all(|&f| f) {
                self.found.push(st.lb);
            } else {
                // Only columns with no rows can be free here; the system
                // cannot constrain them.
                debug_assert!(false, "free column without rows");
            }
            return;
        };

        let unknown: Vec<usize> = self.row_cols[row]
            .iter()
            .copied()
            .filter(|&j| !st.fixed[j])
            .collect();
        if free == 2 {
            self.branch_pair(&st, row, unknown[0], unknown[1]);
        } else {
            let j = *unknown
                .iter()
                .min_by_key(|&&j| st.ub[j] - st.lb[j])
                .unwrap();
            for v in st.lb[j]..=st.ub[j] {
                if !self.enter() {
                    return;
                }
                let mut child = st.clone();
                if self.fix(&mut child, j, v) {
                    let rows = self.sys.column_rows[j].clone();
                    if self.propagate(&mut child, rows) {
                        self.dfs(child);
                    }
                }
            }
        }
    }

    /// Walks the solutions of a two-unknown row.
    fn branch_pair(&mut self, st: &State, row: usize, a: usize, b: usize) {
        let Some((first, last, step)) = self.pair_range(st, row, a, b) else {
            return;
        };
        let (ca, cb) = (self.sys.coefficients[a], self.sys.coefficients[b]);
        let mut x = first;
        while x <= last {
            if !self.enter() {
                return;
            }
            let y = (st.rhs[row] - ca * x) / cb;
            let mut child = st.clone();
            if self.fix(&mut child, a, x) && self.fix(&mut child, b, y) {
                let mut rows = self.sys.column_rows[a].clone();
                rows.extend_from_slice(&self.sys.column_rows[b]);
                if self.propagate(&mut child, rows) {
                    self.dfs(child);
                }
            }
            x += step;
        }
    }

    fn fix(&self, st: &mut State, j: usize, v: u64) -> bool {
        if v < st.lb[j] || v > st.ub[j] {
            return false;
        }
        let c = self.sys.coefficients[j];
        for &r in &self.sys.column_rows[j] {
            match st.rhs[r].checked_sub(c * v) {
                Some(left) => st.rhs[r] = left,
                None => return false,
            }
        }
        st.fixed[j] = true;
        st.lb[j] = v;
        st.ub[j] = v;
        true
    }

    /// Bound propagation to a fixpoint over the queued rows. False when some
    /// row becomes unsatisfiable.
    fn propagate(&self, st: &mut State, mut queue: Vec<usize>) -> bool {
        let mut queued = vec![false; self.sys.num_rows()];
        for &r in &queue {
            queued[r] = true;
        }
        while let Some(r) = queue.pop() {
            queued[r] = false;
            let rhs = st.rhs[r] as u128;
            let mut g = 0u64;
            let (mut sum_lb, mut sum_ub) = (0u128, 0u128);
            let mut any = false;
            for &j in &self.row_cols[r] {
                if st.fixed[j] {
                    continue;
                }
                any = true;
                let c = self.sys.coefficients[j];
                g = gcd(g, c);
                sum_lb += c as u128 * st.lb[j] as u128;
                sum_ub += c as u128 * st.ub[j] as u128;
            }
            if !any {
                if rhs != 0 {
                    return false;
                }
                continue;
            }
            if !rhs.is_multiple_of(g as u128) || sum_lb > rhs || sum_ub < rhs {
                return false;
            }

            let mut updates = Vec::new();
            for &j in &self.row_cols[r] {
                if st.fixed[j] {
                    continue;
                }
                let c = self.sys.coefficients[j] as u128;
                let (lb, ub) = (st.lb[j] as u128, st.ub[j] as u128);
                let new_ub = ub.min((rhs - (sum_lb - c * lb)) / c);
                let others_max = sum_ub - c * ub;
                let new_lb = if rhs > others_max {
                    lb.max((rhs - others_max).div_ceil(c))
                } else {
                    lb
                };
                if new_lb > new_ub {
                    return false;
                }
                if new_lb != lb || new_ub != ub || new_lb == new_ub {
                    updates.push((j, new_lb as u64, new_ub as u64));
                }
            }
            let mut changed = Vec::new();
            for (j, lb, ub) in updates {
                if st.fixed[j] {
                    continue;
                }
                if lb == ub {
                    st.lb[j] = 0;
                    st.ub[j] = ub;
                    if !self.fix(st, j, ub) {
                        return false;
                    }
                } else {
                    st.lb[j] = lb;
                    st.ub[j] = ub;
                }
                changed.push(j);
            }

            // Two unknowns left: their solutions form an arithmetic
            // progression, so snap both ranges to its end points.
            let mut free = self.row_cols[r].iter().copied().filter(|&j| !st.fixed[j]);
            if let (Some(a), Some(b), None) = (free.next(), free.next(), free.next()) {
                let Some((first, last, _)) = self.pair_range(st, r, a, b) else {
                    return false;
                };
                let (ca, cb) = (self.sys.coefficients[a], self.sys.coefficients[b]);
                let rhs = st.rhs[r];
                let (b_hi, b_lo) = ((rhs - ca * first) / cb, (rhs - ca * last) / cb);
                if first == last {
                    if !(self.fix(st, a, first) && self.fix(st, b, b_hi)) {
                        return false;
                    }
                    changed.extend([a, b]);
                } else if (first, last, b_lo, b_hi) != (st.lb[a], st.ub[a], st.lb[b], st.ub[b]) {
                    (st.lb[a], st.ub[a], st.lb[b], st.ub[b]) = (first, last, b_lo, b_hi);
                    changed.extend([a, b]);
                }
            }

            for j in changed {
                for &r2 in &self.sys.column_rows[j] {
                    if !queued[r2] {
                        queued[r2] = true;
                        queue.push(r2);
                    }
                }
            }
        }
        true
    }

    /// Solutions of `c_a x_a + c_b x_b = rhs[row]` inside the current bounds,
    /// as `(first x_a, last x_a, step)`; `None` when there are none.
    fn pair_range(&self, st: &State, row: usize, a: usize, b: usize) -> Option<(u64, u64, u64)> {
        let r = st.rhs[row];
        let (ca, cb) = (self.sys.coefficients[a], self.sys.coefficients[b]);
        let g = gcd(ca, cb);
        if !r.is_multiple_of(g) {
            return None;
        }
        // x_b in [lb_b, ub_b] bounds x_a from both sides.
        let hi = st.ub[a].min(r.checked_sub(cb * st.lb[b])? / ca);
        let lo = st.lb[a].max(r.saturating_sub(cb.saturating_mul(st.ub[b])).div_ceil(ca));
        let (a1, step) = (ca / g, cb / g);
        let x0 = if step == 1 {
            0
        } else {
            ((r / g % step) as u128 * mod_inverse(a1 % step, step) as u128 % step as u128) as u64
        };
        let first = lo + (x0 + step - lo % step) % step;
        if first > hi {
            return None;
        }
        let last = first + (hi - first) / step * step;
        Some((first, last, step))
    }
}

fn gcd(mut a: u64, mut b: u64) -> u64 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

/// Inverse of `a` modulo `m` for coprime `a`, `m > 1`.
fn mod_inverse(a: u64, m: u64) -> u64 {
    let (mut old_r, mut r) = (a as i128, m as i128);
    let (mut old_s, mut s) = (1i128, 0i128);
    while r != 0 {
        let q = old_r / r;
        (old_r, r) = (r, old_r - q * r);
        (old_s, s) = (s, old_s - q * s);
    }
    debug_assert_eq!(old_r, 1);
    old_s.rem_euclid(m as i128) as u64
}
