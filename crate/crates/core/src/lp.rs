//! Dense linear programming.
//!
//! Problems are stated as
//!
//! ```text
//! minimize    c·x
//! subject to  G x ≤ h,   A x = b,   lo ≤ x ≤ hi
//! ```
//!
//! and solved with a two-phase primal simplex method on a condensed
//! (Tucker) tableau. Every decision variable starts out free and nonbasic;
//! equality rows are pivoted out first, then free variables are pivoted in,
//! so the remaining tableau only carries nonnegative slack columns. Sizes
//! targeted here are a few hundred rows by a hundred columns.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Feasibility tolerance on the phase-1 objective and on primal residuals.
pub const TOL_LP: f64 = 1e-9;

const PIVOT_TOL: f64 = 1e-10;
const COST_TOL: f64 = 1e-11;
/// Consecutive degenerate pivots tolerated before switching to Bland's rule.
const DEGENERATE_STREAK: usize = 40;

/// A dense linear program over `num_vars` real variables.
#[derive(Clone, Debug)]
pub struct LinearProgram {
    num_vars: usize,
    objective: Vec<f64>,
    ineq: Vec<f64>,
    ineq_rhs: Vec<f64>,
    eq: Vec<f64>,
    eq_rhs: Vec<f64>,
    lower: Vec<f64>,
    upper: Vec<f64>,
}

/// Outcome of [`LinearProgram::solve`].
#[derive(Clone, Debug, PartialEq)]
pub enum LpResult {
    Optimal { x: Vec<f64>, value: f64 },
    Infeasible,
    Unbounded,
}

impl LpResult {
    pub fn is_optimal(&self) -> bool {
        matches!(self, LpResult::Optimal { .. })
    }

    pub fn value(&self) -> Option<f64> {
        match self {
            LpResult::Optimal { value, .. } => Some(*value),
            _ => None,
        }
    }

    pub fn x(&self) -> Option<&[f64]> {
        match self {
            LpResult::Optimal { x, .. } => Some(x),
            _ => None,
        }
    }
}

impl LinearProgram {
    pub fn new(objective: Vec<f64>) -> Self {
        let n = objective.len();
        Self {
            num_vars: n,
            objective,
            ineq: Vec::new(),
            ineq_rhs: Vec::new(),
            eq: Vec::new(),
            eq_rhs: Vec::new(),
            lower: vec![f64::NEG_INFINITY; n],
            upper: vec![f64::INFINITY; n],
        }
    }

    /// Feasibility problem with a zero objective.
    pub fn feasibility(num_vars: usize) -> Self {
        Self::new(vec![0.0; num_vars])
    }

    /// Builds `min c·x s.t. G x ≤ h, A x = b` from matrices.
    pub fn from_matrices(
        objective: &DVector<f64>,
        g: &DMatrix<f64>,
        h: &DVector<f64>,
        a_eq: &DMatrix<f64>,
        b_eq: &DVector<f64>,
    ) -> Result<Self> {
        let n = objective.len();
        if (g.nrows() > 0 && g.ncols() != n) || (a_eq.nrows() > 0 && a_eq.ncols() != n) {
            return Err(Error::DimensionMismatch {
                expected: n,
                found: if g.ncols() != n {
                    g.ncols()
                } else {
                    a_eq.ncols()
                },
            });
        }
        if g.nrows() != h.len() || a_eq.nrows() != b_eq.len() {
            return Err(Error::DimensionMismatch {
                expected: g.nrows(),
                found: h.len(),
            });
        }
        let mut lp = Self::new(objective.iter().copied().collect());
        let mut row = vec![0.0; n];
        for i in 0..g.nrows() {
            for j in 0..n {
                row[j] = g[(i, j)];
            }
            lp.add_le(&row, h[i]);
        }
        for i in 0..a_eq.nrows() {
            for j in 0..n {
                row[j] = a_eq[(i, j)];
            }
            lp.add_eq(&row, b_eq[i]);
        }
        Ok(lp)
    }

    pub fn num_vars(&self) -> usize {
        self.num_vars
    }

    pub fn num_ineq(&self) -> usize {
        self.ineq_rhs.len()
    }

    pub fn num_eq(&self) -> usize {
        self.eq_rhs.len()
    }

    pub fn objective(&self) -> &[f64] {
        &self.objective
    }

    pub fn ineq_row(&self, i: usize) -> &[f64] {
        &self.ineq[i * self.num_vars..(i + 1) * self.num_vars]
    }

    pub fn ineq_rhs(&self) -> &[f64] {
        &self.ineq_rhs
    }

    pub fn eq_row(&self, i: usize) -> &[f64] {
        &self.eq[i * self.num_vars..(i + 1) * self.num_vars]
    }

    pub fn eq_rhs(&self) -> &[f64] {
        &self.eq_rhs
    }

    pub fn bounds(&self, j: usize) -> (f64, f64) {
        (self.lower[j], self.upper[j])
    }

    /// Adds `row·x ≤ rhs`.
    pub fn add_le(&mut self, row: &[f64], rhs: f64) {
        assert_eq!(row.len(), self.num_vars, "constraint row length");
        self.ineq.extend_from_slice(row);
        self.ineq_rhs.push(rhs);
    }

    /// Adds `row·x ≥ rhs`.
    pub fn add_ge(&mut self, row: &[f64], rhs: f64) {
        assert_eq!(row.len(), self.num_vars, "constraint row length");
        self.ineq.extend(row.iter().map(|v| -v));
        self.ineq_rhs.push(-rhs);
    }

    /// Adds `row·x = rhs`.
    pub fn add_eq(&mut self, row: &[f64], rhs: f64) {
        assert_eq!(row.len(), self.num_vars, "constraint row length");
        self.eq.extend_from_slice(row);
        self.eq_rhs.push(rhs);
    }

    pub fn set_bounds(&mut self, j: usize, lower: f64, upper: f64) {
        self.lower[j] = lower;
        self.upper[j] = upper;
    }

    /// Largest violation of any constraint or bound at `x`.
    pub fn max_violation(&self, x: &[f64]) -> f64 {
        let n = self.num_vars;
        let mut worst = 0.0_f64;
        for (i, &h) in self.ineq_rhs.iter().enumerate() {
            let lhs = dot(&self.ineq[i * n..(i + 1) * n], x);
            worst = worst.max(lhs - h);
        }
        for (i, &b) in self.eq_rhs.iter().enumerate() {
            let lhs = dot(&self.eq[i * n..(i + 1) * n], x);
            worst = worst.max((lhs - b).abs());
        }
        for j in 0..n {
            worst = worst.max(self.lower[j] - x[j]).max(x[j] - self.upper[j]);
        }
        worst
    }

    /// Solves to optimality.
    pub fn solve(&self) -> Result<LpResult> {
        let mut tab = Tableau::build(self);
        match tab.find_feasible()? {
            Phase1::Infeasible => return Ok(LpResult::Infeasible),
            Phase1::Feasible => {}
        }
        if tab.has_unbounded_free_column() {
            return Ok(LpResult::Unbounded);
        }
        if !tab.optimize(Objective::Phase2)? {
            return Ok(LpResult::Unbounded);
        }
        let x = tab.primal(self);
        let value = dot(&self.objective, &x);
        Ok(LpResult::Optimal { x, value })
    }

    /// Runs phase 1 only.
    pub fn feasible(&self) -> Result<bool> {
        let mut tab = Tableau::build(self);
        Ok(matches!(tab.find_feasible()?, Phase1::Feasible))
    }
}

/// An optimal tableau that can be re-optimized after adding inequalities.
///
/// Cuts are appended in terms of the current nonbasic variables and the
/// tableau is restored to feasibility by dual simplex, so a child problem in a
/// branch-and-bound tree costs a handful of pivots. If the dual pivots fail
/// numerically the child is re-solved from scratch.
#[derive(Clone)]
pub struct WarmLp {
    tab: Tableau,
    lp: Arc<LinearProgram>,
    extra: usize,
}

impl WarmLp {
    /// Solves `lp`; the warm state is returned only when the LP is optimal.
    pub fn solve(lp: &LinearProgram) -> Result<(LpResult, Option<WarmLp>)> {
        let mut tab = Tableau::build(lp);
        if let Phase1::Infeasible = tab.find_feasible()? {
            return Ok((LpResult::Infeasible, None));
        }
        if tab.has_unbounded_free_column() || !tab.optimize(Objective::Phase2)? {
            return Ok((LpResult::Unbounded, None));
        }
        let warm = WarmLp {
            tab,
            lp: Arc::new(lp.clone()),
            extra: 0,
        };
        Ok((warm.result(), Some(warm)))
    }

    fn result(&self) -> LpResult {
        let x = self.tab.primal_raw();
        let value = dot(&self.lp.objective, &x);
        LpResult::Optimal { x, value }
    }

    /// Adds `row·x ≤ rhs` to a copy and re-optimizes it.
    pub fn add_le(&self, row: &[f64], rhs: f64) -> Result<(LpResult, Option<WarmLp>)> {
        let mut next = self.clone();
        next.extra += 1;
        let id = usize::MAX / 2 + next.extra;
        let warm = next
            .tab
            .append_cut(row, rhs, id)
            .and_then(|ok| Ok(ok && next.tab.dual_simplex()?));
        match warm {
            Ok(true) => {
                let mut lp = (*next.lp).clone();
                lp.add_le(row, rhs);
                next.lp = Arc::new(lp);
                Ok((next.result(), Some(next)))
            }
            Ok(false) => Ok((LpResult::Infeasible, None)),
            Err(Error::NumericalFailure(_)) => {
                let mut lp = (*self.lp).clone();
                lp.add_le(row, rhs);
                WarmLp::solve(&lp)
            }
            Err(e) => Err(e),
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
enum RowKind {
    /// Basic variable must stay nonnegative.
    Nonneg,
    /// Basic variable is a free structural variable; never leaves.
    Free,
    /// Removed from consideration.
    Dead,
}

enum Phase1 {
    Feasible,
    Infeasible,
}

#[derive(Clone, Copy)]
enum Objective {
    Phase1,
    Phase2,
}

/// Condensed tableau: basic `y_r = t[r][rhs] + Σ_c t[r][c] v_c` over nonbasic `v_c`.
#[derive(Clone)]
struct Tableau {
    nrows: usize,
    /// Structural columns plus one artificial column.
    ncols: usize,
    stride: usize,
    t: Vec<f64>,
    obj: Vec<f64>,
    obj1: Vec<f64>,
    row_kind: Vec<RowKind>,
    row_var: Vec<usize>,
    col_var: Vec<usize>,
    col_live: Vec<bool>,
    num_vars: usize,
    /// Variable ids `num_vars..num_vars+nineq` are inequality slacks, then
    /// equality slacks, then the artificial variable.
    nineq: usize,
    pivots: usize,
    pivot_cap: usize,
}

impl Tableau {
    fn build(lp: &LinearProgram) -> Self {
        let n = lp.num_vars;
        let mut rows: Vec<(Vec<f64>, f64, bool)> = Vec::new();
        for i in 0..lp.num_ineq() {
            rows.push((lp.ineq_row(i).to_vec(), lp.ineq_rhs[i], false));
        }
        for j in 0..n {
            let mut e = vec![0.0; n];
            if lp.upper[j].is_finite() {
                e[j] = 1.0;
                rows.push((e.clone(), lp.upper[j], false));
            }
            if lp.lower[j].is_finite() {
                e[j] = -1.0;
                rows.push((e, -lp.lower[j], false));
            }
        }
        let nineq = rows.len();
        for i in 0..lp.num_eq() {
            rows.push((lp.eq_row(i).to_vec(), lp.eq_rhs[i], true));
        }
        let nrows = rows.len();
        let ncols = n + 1;
        let stride = ncols + 1;
        let mut t = vec![0.0; nrows * stride];
        let mut row_kind = Vec::with_capacity(nrows);
        let mut row_var = Vec::with_capacity(nrows);
        for (r, (g, h, is_eq)) in rows.into_iter().enumerate() {
            // slack = h - g·x
            let row = &mut t[r * stride..(r + 1) * stride];
            for j in 0..n {
                row[j] = -g[j];
            }
            row[ncols] = h;
            row_kind.push(RowKind::Nonneg);
            row_var.push(n + r);
            let _ = is_eq;
        }
        let mut obj = vec![0.0; stride];
        obj[..n].copy_from_slice(&lp.objective);
        let mut col_var: Vec<usize> = (0..n).collect();
        col_var.push(n + nrows);
        let mut col_live = vec![true; ncols];
        col_live[n] = false;
        Self {
            nrows,
            ncols,
            stride,
            t,
            obj,
            obj1: vec![0.0; stride],
            row_kind,
            row_var,
            col_var,
            col_live,
            num_vars: n,
            nineq,
            pivots: 0,
            pivot_cap: 50 * (nrows + n).max(1),
        }
    }

    #[inline]
    fn at(&self, r: usize, c: usize) -> f64 {
        self.t[r * self.stride + c]
    }

    #[inline]
    fn rhs(&self, r: usize) -> f64 {
        self.t[r * self.stride + self.ncols]
    }

    fn is_free_var(&self, v: usize) -> bool {
        v < self.num_vars
    }

    fn is_eq_slack(&self, v: usize) -> bool {
        v >= self.num_vars + self.nineq && v < self.num_vars + self.nrows
    }

    fn pivot(&mut self, r: usize, c: usize) -> Result<()> {
        self.pivots += 1;
        if self.pivots > self.pivot_cap {
            return Err(Error::NumericalFailure(format!(
                "simplex pivot cap of {} exceeded",
                self.pivot_cap
            )));
        }
        let stride = self.stride;
        let p = self.at(r, c);
        let inv = 1.0 / p;
        let mut prow: Vec<f64> = self.t[r * stride..(r + 1) * stride]
            .iter()
            .map(|v| -v * inv)
            .collect();
        prow[c] = inv;
        for i in 0..self.nrows {
            if i == r || self.row_kind[i] == RowKind::Dead {
                continue;
            }
            let row = &mut self.t[i * stride..(i + 1) * stride];
            let f = row[c];
            if f == 0.0 {
                continue;
            }
            row[c] = 0.0;
            for (a, b) in row.iter_mut().zip(&prow) {
                *a += f * b;
            }
        }
        for objrow in [&mut self.obj, &mut self.obj1] {
            let f = objrow[c];
            if f != 0.0 {
                objrow[c] = 0.0;
                for (a, b) in objrow.iter_mut().zip(&prow) {
                    *a += f * b;
                }
            }
        }
        self.t[r * stride..(r + 1) * stride].copy_from_slice(&prow);
        std::mem::swap(&mut self.row_var[r], &mut self.col_var[c]);
        Ok(())
    }

    /// Pivots equality slacks out and free variables in, then drives the
    /// tableau to a feasible basis.
    fn find_feasible(&mut self) -> Result<Phase1> {
        let n = self.num_vars;
        // Equality rows: the slack must become nonbasic at zero.
        for r in 0..self.nrows {
            if !self.is_eq_slack(self.row_var[r]) {
                continue;
            }
            let best = self.best_column_in_row(r, true);
            match best {
                Some(c) => {
                    self.pivot(r, c)?;
                    self.col_live[c] = false;
                    self.row_kind[r] = if self.is_free_var(self.row_var[r]) {
                        RowKind::Free
                    } else {
                        RowKind::Nonneg
                    };
                }
                None => {
                    if self.rhs(r).abs() > TOL_LP * (1.0 + self.rhs(r).abs()) {
                        return Ok(Phase1::Infeasible);
                    }
                    self.row_kind[r] = RowKind::Dead;
                }
            }
        }
        // Free variables still nonbasic are pivoted into the basis.
        for c in 0..n {
            if !self.col_live[c] || !self.is_free_var(self.col_var[c]) {
                continue;
            }
            let mut best: Option<(usize, f64)> = None;
            for r in 0..self.nrows {
                if self.row_kind[r] != RowKind::Nonneg {
                    continue;
                }
                let a = self.at(r, c).abs();
                if a > PIVOT_TOL && best.is_none_or(|(_, b)| a > b) {
                    best = Some((r, a));
                }
            }
            if let Some((r, _)) = best {
                self.pivot(r, c)?;
                self.row_kind[r] = RowKind::Free;
            }
            // Otherwise the variable does not appear in any constraint.
        }

        let art = n;
        let mut worst: Option<(usize, f64)> = None;
        for r in 0..self.nrows {
            if self.row_kind[r] == RowKind::Nonneg {
                let d = self.rhs(r);
                if d < -TOL_LP && worst.is_none_or(|(_, w)| d < w) {
                    worst = Some((r, d));
                }
            }
        }
        let Some((r0, _)) = worst else {
            return Ok(Phase1::Feasible);
        };
        // Single artificial variable added to every nonnegative row.
        for r in 0..self.nrows {
            let kind = self.row_kind[r];
            let idx = r * self.stride + art;
            self.t[idx] = if kind == RowKind::Nonneg { 1.0 } else { 0.0 };
        }
        self.col_live[art] = true;
        self.obj1.iter_mut().for_each(|v| *v = 0.0);
        self.obj1[art] = 1.0;
        self.pivot(r0, art)?;
        self.optimize(Objective::Phase1)?;
        let w = self.obj1[self.ncols];
        if w > TOL_LP {
            return Ok(Phase1::Infeasible);
        }
        let art_var = self.num_vars + self.nrows;
        if let Some(r) = (0..self.nrows).find(|&r| self.row_var[r] == art_var) {
            match self.best_column_in_row(r, false) {
                Some(c) => self.pivot(r, c)?,
                None => self.row_kind[r] = RowKind::Dead,
            }
        }
        if let Some(c) = (0..self.ncols).find(|&c| self.col_var[c] == art_var) {
            self.col_live[c] = false;
        }
        Ok(Phase1::Feasible)
    }

    /// Live column with the largest magnitude in row `r`, preferring free
    /// structural columns when `prefer_free` is set.
    fn best_column_in_row(&self, r: usize, prefer_free: bool) -> Option<usize> {
        let mut best: Option<(usize, f64, bool)> = None;
        for c in 0..self.ncols {
            if !self.col_live[c] {
                continue;
            }
            let a = self.at(r, c).abs();
            if a <= PIVOT_TOL {
                continue;
            }
            let free = prefer_free && self.is_free_var(self.col_var[c]);
            let better = match best {
                None => true,
                Some((_, ba, bfree)) => (free && !bfree) || (free == bfree && a > ba),
            };
            if better {
                best = Some((c, a, free));
            }
        }
        best.map(|(c, _, _)| c)
    }

    fn has_unbounded_free_column(&self) -> bool {
        (0..self.ncols).any(|c| {
            self.col_live[c] && self.is_free_var(self.col_var[c]) && self.obj[c].abs() > COST_TOL
        })
    }

    /// Primal simplex on the chosen objective. Returns `false` when unbounded.
    fn optimize(&mut self, which: Objective) -> Result<bool> {
        let mut degenerate = 0usize;
        loop {
            let bland = degenerate >= DEGENERATE_STREAK;
            let objrow = match which {
                Objective::Phase1 => &self.obj1,
                Objective::Phase2 => &self.obj,
            };
            let mut enter: Option<(usize, f64)> = None;
            for c in 0..self.ncols {
                if !self.col_live[c] || self.is_free_var(self.col_var[c]) {
                    continue;
                }
                let rc = objrow[c];
                if rc >= -COST_TOL {
                    continue;
                }
                let better = match enter {
                    None => true,
                    Some((bc, brc)) => {
                        if bland {
                            self.col_var[c] < self.col_var[bc]
                        } else {
                            rc < brc
                        }
                    }
                };
                if better {
                    enter = Some((c, rc));
                }
            }
            let Some((c, _)) = enter else {
                return Ok(true);
            };
            let mut leave: Option<(usize, f64, f64)> = None;
            for r in 0..self.nrows {
                if self.row_kind[r] != RowKind::Nonneg {
                    continue;
                }
                let a = self.at(r, c);
                if a >= -PIVOT_TOL {
                    continue;
                }
                let ratio = self.rhs(r).max(0.0) / -a;
                let better = match leave {
                    None => true,
                    Some((br, bratio, ba)) => {
                        let tie = (ratio - bratio).abs() <= 1e-12 * (1.0 + bratio);
                        if tie {
                            if bland {
                                self.row_var[r] < self.row_var[br]
                            } else {
                                -a > -ba
                            }
                        } else {
                            ratio < bratio
                        }
                    }
                };
                if better {
                    leave = Some((r, ratio, a));
                }
            }
            let Some((r, ratio, _)) = leave else {
                return Ok(false);
            };
            if ratio <= 1e-12 {
                degenerate += 1;
            } else {
                degenerate = 0;
            }
            self.pivot(r, c)?;
        }
    }

    /// Appends `g·x ≤ h` with slack variable `id`. Returns `false` when the
    /// cut is trivially infeasible.
    fn append_cut(&mut self, g: &[f64], h: f64, id: usize) -> Result<bool> {
        let n = self.num_vars;
        let stride = self.stride;
        let mut row = vec![0.0; stride];
        row[self.ncols] = h;
        for (j, &gj) in g.iter().enumerate().take(n) {
            if gj == 0.0 {
                continue;
            }
            if let Some(c) = (0..self.ncols).find(|&c| self.col_var[c] == j) {
                row[c] -= gj;
            } else if let Some(r) = (0..self.nrows).find(|&r| self.row_var[r] == j) {
                for (a, b) in row.iter_mut().zip(&self.t[r * stride..(r + 1) * stride]) {
                    *a -= gj * b;
                }
            }
        }
        for c in 0..self.ncols {
            if !self.col_live[c] {
                row[c] = 0.0;
            }
        }
        self.t.extend_from_slice(&row);
        self.nrows += 1;
        self.row_kind.push(RowKind::Nonneg);
        self.row_var.push(id);
        self.pivot_cap += 50;
        let r = self.nrows - 1;
        // A nonbasic free variable in the cut is pivoted in directly.
        if let Some(c) = (0..self.ncols).find(|&c| {
            self.col_live[c] && self.is_free_var(self.col_var[c]) && self.at(r, c).abs() > PIVOT_TOL
        }) {
            self.pivot(r, c)?;
            self.row_kind[r] = RowKind::Free;
            return Ok(true);
        }
        let live_coef =
            (0..self.ncols).any(|c| self.col_live[c] && self.at(r, c).abs() > PIVOT_TOL);
        if !live_coef && self.rhs(r) < -TOL_LP {
            return Ok(false);
        }
        Ok(true)
    }

    /// Dual simplex from a dual-feasible tableau. Returns `false` if infeasible.
    fn dual_simplex(&mut self) -> Result<bool> {
        let mut degenerate = 0usize;
        loop {
            let bland = degenerate >= DEGENERATE_STREAK;
            let mut leave: Option<(usize, f64)> = None;
            for r in 0..self.nrows {
                if self.row_kind[r] != RowKind::Nonneg {
                    continue;
                }
                let d = self.rhs(r);
                if d >= -TOL_LP {
                    continue;
                }
                let better = match leave {
                    None => true,
                    Some((br, bd)) => {
                        if bland {
                            self.row_var[r] < self.row_var[br]
                        } else {
                            d < bd
                        }
                    }
                };
                if better {
                    leave = Some((r, d));
                }
            }
            let Some((r, _)) = leave else {
                return Ok(true);
            };
            let mut enter: Option<(usize, f64, f64)> = None;
            for c in 0..self.ncols {
                if !self.col_live[c] || self.is_free_var(self.col_var[c]) {
                    continue;
                }
                let a = self.at(r, c);
                if a <= PIVOT_TOL {
                    continue;
                }
                let ratio = self.obj[c].max(0.0) / a;
                let better = match enter {
                    None => true,
                    Some((bc, bratio, ba)) => {
                        let tie = (ratio - bratio).abs() <= 1e-12 * (1.0 + bratio);
                        if tie {
                            if bland {
                                self.col_var[c] < self.col_var[bc]
                            } else {
                                a > ba
                            }
                        } else {
                            ratio < bratio
                        }
                    }
                };
                if better {
                    enter = Some((c, ratio, a));
                }
            }
            let Some((c, ratio, _)) = enter else {
                return Ok(false);
            };
            if ratio <= 1e-12 {
                degenerate += 1;
            } else {
                degenerate = 0;
            }
            self.pivot(r, c)?;
        }
    }

    fn primal_raw(&self) -> Vec<f64> {
        let mut x = vec![0.0; self.num_vars];
        for r in 0..self.nrows {
            let v = self.row_var[r];
            if v < self.num_vars && self.row_kind[r] != RowKind::Dead {
                x[v] = self.rhs(r);
            }
        }
        x
    }

    /// Reads off structural values, then polishes them by re-solving the
    /// active constraint system when it is square and well conditioned.
    fn primal(&self, lp: &LinearProgram) -> Vec<f64> {
        let n = self.num_vars;
        let mut x = vec![0.0; n];
        let mut all_basic = true;
        for r in 0..self.nrows {
            let v = self.row_var[r];
            if v < n && self.row_kind[r] != RowKind::Dead {
                x[v] = self.rhs(r);
            }
        }
        for c in 0..self.ncols {
            if self.col_var[c] < n {
                all_basic = false;
            }
        }
        if !all_basic || n == 0 {
            return x;
        }
        // Active rows: nonbasic slacks (live inequality columns, killed equality columns).
        let mut active: Vec<usize> = Vec::with_capacity(n);
        for c in 0..self.ncols {
            let v = self.col_var[c];
            if v >= n && v < n + self.nrows {
                active.push(v - n);
            }
        }
        if active.len() != n {
            return x;
        }
        let stride = self.stride;
        let _ = stride;
        let mut m = DMatrix::<f64>::zeros(n, n);
        let mut b = DVector::<f64>::zeros(n);
        let rows = collect_rows(lp);
        for (k, &i) in active.iter().enumerate() {
            let (g, h) = &rows[i];
            for j in 0..n {
                m[(k, j)] = g[j];
            }
            b[k] = *h;
        }
        let Some(sol) = m.lu().solve(&b) else {
            return x;
        };
        let refined: Vec<f64> = sol.iter().copied().collect();
        if refined.iter().any(|v| !v.is_finite()) {
            return x;
        }
        if lp.max_violation(&refined) <= lp.max_violation(&x) + TOL_LP * 1e-3 {
            refined
        } else {
            x
        }
    }
}

/// Rows in tableau order: inequalities, finite bounds, equalities.
fn collect_rows(lp: &LinearProgram) -> Vec<(Vec<f64>, f64)> {
    let n = lp.num_vars;
    let mut rows = Vec::with_capacity(lp.num_ineq() + lp.num_eq());
    for i in 0..lp.num_ineq() {
        rows.push((lp.ineq_row(i).to_vec(), lp.ineq_rhs[i]));
    }
    for j in 0..n {
        let mut e = vec![0.0; n];
        if lp.upper[j].is_finite() {
            e[j] = 1.0;
            rows.push((e.clone(), lp.upper[j]));
        }
        if lp.lower[j].is_finite() {
            e[j] = -1.0;
            rows.push((e, -lp.lower[j]));
        }
    }
    for i in 0..lp.num_eq() {
        rows.push((lp.eq_row(i).to_vec(), lp.eq_rhs[i]));
    }
    rows
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bounded_1d() -> LinearProgram {
        let mut lp = LinearProgram::new(vec![1.0]);
        lp.set_bounds(0, 0.0, 1.0);
        lp
    }

    #[test]
    fn minimizes_over_unit_interval() {
        let res = bounded_1d().solve().unwrap();
        let LpResult::Optimal { x, value } = res else {
            panic!("expected optimal, got {res:?}");
        };
        assert!(x[0].abs() < 1e-12);
        assert!(value.abs() < 1e-12);
    }

    #[test]
    fn detects_infeasible() {
        let mut lp = LinearProgram::new(vec![1.0]);
        lp.add_le(&[1.0], -1.0);
        lp.add_ge(&[1.0], 0.0);
        assert_eq!(lp.solve().unwrap(), LpResult::Infeasible);
        assert!(!lp.feasible().unwrap());
        assert!(bounded_1d().feasible().unwrap());
    }

    #[test]
    fn detects_unbounded() {
        let mut lp = LinearProgram::new(vec![-1.0]);
        lp.add_ge(&[1.0], 0.0);
        assert_eq!(lp.solve().unwrap(), LpResult::Unbounded);
        let free = LinearProgram::new(vec![1.0]);
        assert_eq!(free.solve().unwrap(), LpResult::Unbounded);
    }

    #[test]
    fn equality_constrained() {
        // min x + 2y  s.t. x + y = 1, x,y >= 0  -> x = 1
        let mut lp = LinearProgram::new(vec![1.0, 2.0]);
        lp.add_eq(&[1.0, 1.0], 1.0);
        lp.set_bounds(0, 0.0, f64::INFINITY);
        lp.set_bounds(1, 0.0, f64::INFINITY);
        let res = lp.solve().unwrap();
        let x = res.x().unwrap();
        assert!((x[0] - 1.0).abs() < 1e-12 && x[1].abs() < 1e-12);
        assert!((res.value().unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn inconsistent_equalities() {
        let mut lp = LinearProgram::feasibility(2);
        lp.add_eq(&[1.0, 1.0], 1.0);
        lp.add_eq(&[2.0, 2.0], 3.0);
        assert!(!lp.feasible().unwrap());
    }

    #[test]
    fn redundant_equalities() {
        let mut lp = LinearProgram::new(vec![0.0, 1.0]);
        lp.add_eq(&[1.0, 1.0], 1.0);
        lp.add_eq(&[2.0, 2.0], 2.0);
        lp.add_ge(&[0.0, 1.0], -3.0);
        let res = lp.solve().unwrap();
        assert!((res.value().unwrap() + 3.0).abs() < 1e-12);
    }

    #[test]
    fn classic_two_variable() {
        // max 3x + 5y s.t. x <= 4, 2y <= 12, 3x + 2y <= 18, x, y >= 0 -> (2, 6), 36
        let mut lp = LinearProgram::new(vec![-3.0, -5.0]);
        lp.add_le(&[1.0, 0.0], 4.0);
        lp.add_le(&[0.0, 2.0], 12.0);
        lp.add_le(&[3.0, 2.0], 18.0);
        lp.add_ge(&[1.0, 0.0], 0.0);
        lp.add_ge(&[0.0, 1.0], 0.0);
        let res = lp.solve().unwrap();
        let x = res.x().unwrap();
        assert!((x[0] - 2.0).abs() < 1e-10 && (x[1] - 6.0).abs() < 1e-10);
        assert!((res.value().unwrap() + 36.0).abs() < 1e-10);
    }

    #[test]
    fn degenerate_vertex_terminates() {
        // Many constraints active at the optimum (0, 0).
        let mut lp = LinearProgram::new(vec![1.0, 1.0]);
        for k in 0..12 {
            let a = (k as f64) * 0.13;
            lp.add_ge(&[a.cos().abs() + 0.1, a.sin().abs() + 0.1], 0.0);
        }
        lp.add_ge(&[1.0, 0.0], 0.0);
        lp.add_ge(&[0.0, 1.0], 0.0);
        let res = lp.solve().unwrap();
        assert!(res.value().unwrap().abs() < 1e-10);
    }

    #[test]
    fn from_matrices_checks_shapes() {
        let c = DVector::from_vec(vec![1.0, 1.0]);
        let g = DMatrix::from_row_slice(1, 3, &[1.0, 0.0, 0.0]);
        let h = DVector::from_vec(vec![1.0]);
        let e = DMatrix::zeros(0, 2);
        let b = DVector::zeros(0);
        assert!(LinearProgram::from_matrices(&c, &g, &h, &e, &b).is_err());
    }

    #[test]
    fn deterministic_repeat() {
        let mut lp = LinearProgram::new(vec![-1.0, -1.0, 0.5]);
        lp.add_le(&[1.0, 2.0, 0.0], 4.0);
        lp.add_le(&[3.0, 1.0, -1.0], 6.0);
        lp.add_ge(&[0.0, 0.0, 1.0], 0.0);
        lp.add_ge(&[1.0, 0.0, 0.0], 0.0);
        lp.add_ge(&[0.0, 1.0, 0.0], 0.0);
        lp.add_le(&[0.0, 0.0, 1.0], 1.0);
        let a = lp.solve().unwrap();
        let b = lp.solve().unwrap();
        assert_eq!(a, b);
    }
}
