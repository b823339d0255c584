//! MPC problems over a PWA system with 1-/∞-norm costs.
//!
//! A fixed switching sequence turns the hybrid problem into one LP. The hybrid
//! problem itself is solved by enumerating sequences or by branch-and-bound
//! over partial region assignments.

use std::fmt;
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::geometry::{Polytope, TOL_GEOM};
use crate::lp::{LinearProgram, LpResult, WarmLp};
use crate::pwa::PwaSystem;

/// Costs closer than this are treated as equal when ranking sequences.
pub const COST_TIE: f64 = 1e-9;

/// Default cap on `l^(N+1)` for exhaustive enumeration.
pub const DEFAULT_SEQUENCE_CAP: u128 = 1 << 16;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Norm {
    #[serde(rename = "1")]
    One,
    #[serde(rename = "inf")]
    Inf,
}

impl Norm {
    pub fn eval(self, v: &DVector<f64>) -> f64 {
        match self {
            Norm::One => v.lp_norm(1),
            Norm::Inf => v.amax(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct MpcConfig {
    pub horizon: usize,
    pub q: DMatrix<f64>,
    pub r: DMatrix<f64>,
    pub p: DMatrix<f64>,
    /// Norms of the state, input and terminal terms.
    pub norms: [Norm; 3],
    /// Radius of the ∞-ball eroded from `X` and `Xf`; zero means untightened.
    pub tightening_radius: f64,
    pub sequence_cap: u128,
}

impl MpcConfig {
    pub fn new(
        horizon: usize,
        q: DMatrix<f64>,
        r: DMatrix<f64>,
        p: DMatrix<f64>,
        norms: [Norm; 3],
        tightening_radius: f64,
    ) -> Result<Self> {
        let cfg = Self {
            horizon,
            q,
            r,
            p,
            norms,
            tightening_radius,
            sequence_cap: DEFAULT_SEQUENCE_CAP,
        };
        cfg.check(cfg.q.ncols(), cfg.r.ncols())?;
        Ok(cfg)
    }

    /// Checks shapes against `(n, m)` and the rank conditions on the weights.
    pub fn check(&self, n: usize, m: usize) -> Result<()> {
        if self.horizon == 0 {
            return Err(Error::Invalid("horizon must be at least 1".into()));
        }
        if !(self.tightening_radius >= 0.0) {
            return Err(Error::Invalid(
                "tightening radius must be nonnegative".into(),
            ));
        }
        for (name, w, cols) in [("Q", &self.q, n), ("R", &self.r, m), ("P", &self.p, n)] {
            if w.ncols() != cols {
                return Err(Error::DimensionMismatch {
                    expected: cols,
                    found: w.ncols(),
                });
            }
            let rank = w
                .clone()
                .svd(false, false)
                .singular_values
                .iter()
                .filter(|s| **s > 1e-10)
                .count();
            if rank != cols {
                return Err(Error::Invalid(format!("{name} must have full column rank")));
            }
        }
        Ok(())
    }

    pub fn with_horizon(&self, horizon: usize) -> Self {
        Self {
            horizon,
            ..self.clone()
        }
    }

    pub fn with_tightening(&self, radius: f64) -> Self {
        Self {
            tightening_radius: radius,
            ..self.clone()
        }
    }

    /// `‖Q x‖ + ‖R u‖`.
    pub fn stage_cost(&self, x: &DVector<f64>, u: &DVector<f64>) -> f64 {
        self.norms[0].eval(&(&self.q * x)) + self.norms[1].eval(&(&self.r * u))
    }

    pub fn terminal_cost(&self, x: &DVector<f64>) -> f64 {
        self.norms[2].eval(&(&self.p * x))
    }

    /// Cost of a trajectory with `states.len() == inputs.len() + 1`.
    pub fn trajectory_cost(&self, states: &[DVector<f64>], inputs: &[DVector<f64>]) -> f64 {
        let stages: f64 = inputs
            .iter()
            .zip(states)
            .map(|(u, x)| self.stage_cost(x, u))
            .sum();
        stages + self.terminal_cost(&states[inputs.len()])
    }
}

/// Regions `δ(0), …, δ(N)`, stored zero-based and shown one-based.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct SwitchingSequence(Vec<usize>);

impl SwitchingSequence {
    pub fn new(indices: Vec<usize>) -> Self {
        Self(indices)
    }

    pub fn constant(region: usize, horizon: usize) -> Self {
        Self(vec![region; horizon + 1])
    }

    /// Parses one-based indices.
    pub fn from_one_based(indices: &[usize]) -> Result<Self> {
        if indices.contains(&0) {
            return Err(Error::Format("region indices start at 1".into()));
        }
        Ok(Self(indices.iter().map(|i| i - 1).collect()))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.0
    }

    pub fn first(&self) -> usize {
        self.0[0]
    }

    /// `(δ(1), …, δ(N), next)`.
    pub fn shifted(&self, next: usize) -> Self {
        let mut v = self.0[1..].to_vec();
        v.push(next);
        Self(v)
    }
}

impl fmt::Display for SwitchingSequence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.0.iter().map(|i| (i + 1).to_string()).collect();
        write!(f, "{}", parts.join("-"))
    }
}

impl Serialize for SwitchingSequence {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_seq(self.0.iter().map(|i| i + 1))
    }
}

impl<'de> Deserialize<'de> for SwitchingSequence {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let v = Vec::<usize>::deserialize(d)?;
        Self::from_one_based(&v).map_err(serde::de::Error::custom)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum MpcStatus {
    Optimal,
    Infeasible,
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct SolveStats {
    pub lp_count: usize,
    pub incumbents: usize,
    pub wall: Duration,
}

#[derive(Clone, Debug)]
pub struct MpcSolution {
    pub status: MpcStatus,
    /// `f64::INFINITY` when infeasible.
    pub cost: f64,
    pub states: Vec<DVector<f64>>,
    pub inputs: Vec<DVector<f64>>,
    pub sequence: Option<SwitchingSequence>,
    pub stats: SolveStats,
}

impl MpcSolution {
    fn infeasible(sequence: Option<SwitchingSequence>, stats: SolveStats) -> Self {
        Self {
            status: MpcStatus::Infeasible,
            cost: f64::INFINITY,
            states: Vec::new(),
            inputs: Vec::new(),
            sequence,
            stats,
        }
    }

    pub fn is_optimal(&self) -> bool {
        self.status == MpcStatus::Optimal
    }

    /// Largest violation of the problem constraints along the stored trajectory.
    pub fn constraint_violation(&self, sys: &PwaSystem, cfg: &MpcConfig) -> Result<f64> {
        let Some(seq) = &self.sequence else {
            return Ok(0.0);
        };
        if !self.is_optimal() {
            return Ok(0.0);
        }
        let x_set = sys.state_set().erode(cfg.tightening_radius);
        let mut worst = 0.0_f64;
        for (k, u) in self.inputs.iter().enumerate() {
            let x = &self.states[k];
            let i = seq.as_slice()[k];
            let next = sys.affine_step(i, x, u);
            worst = worst
                .max((&next - &self.states[k + 1]).amax())
                .max(x_set.max_residual(x))
                .max(sys.input_set().max_residual(u))
                .max(sys.region(i).polytope.max_residual(x));
        }
        let xn = &self.states[cfg.horizon];
        worst = worst.max(
            sys.region(seq.as_slice()[cfg.horizon])
                .polytope
                .max_residual(xn),
        );
        if let Some(xf) = sys.terminal_set() {
            worst = worst.max(xf.erode(cfg.tightening_radius).max_residual(xn));
        }
        Ok(worst)
    }
}

/// Affine expression `coef · v + cst` in the LP variables.
#[derive(Clone, Debug)]
struct Expr {
    coef: DMatrix<f64>,
    cst: DVector<f64>,
}

impl Expr {
    fn constant(v: DVector<f64>, nv: usize) -> Self {
        Self {
            coef: DMatrix::zeros(v.len(), nv),
            cst: v,
        }
    }

    fn vars(start: usize, len: usize, nv: usize) -> Self {
        let mut coef = DMatrix::zeros(len, nv);
        for j in 0..len {
            coef[(j, start + j)] = 1.0;
        }
        Self {
            coef,
            cst: DVector::zeros(len),
        }
    }

    fn map(&self, m: &DMatrix<f64>) -> Self {
        Self {
            coef: m * &self.coef,
            cst: m * &self.cst,
        }
    }

    fn add(&mut self, other: &Expr) {
        self.coef += &other.coef;
        self.cst += &other.cst;
    }

    fn is_constant(&self) -> bool {
        self.coef.iter().all(|v| *v == 0.0)
    }

    fn eval(&self, v: &[f64]) -> DVector<f64> {
        &self.coef * DVector::from_column_slice(v) + &self.cst
    }
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Form {
    /// States substituted through the dynamics.
    Condensed,
    /// States `x(1..N)` are variables tied by equality constraints.
    Full,
}

struct Built {
    lp: LinearProgram,
    offset: f64,
    inputs: Vec<usize>,
    states: Vec<Expr>,
    /// A constraint on constant data (e.g. `x(0) ∈ P̄_δ(0)`) already fails.
    trivially_infeasible: bool,
    /// Hull weight variables `λ_{t,i}` for `i < l - 1` at each free step.
    lambdas: Vec<Vec<usize>>,
}

struct Builder {
    nv: usize,
    lp: LinearProgram,
    trivially_infeasible: bool,
}

impl Builder {
    /// `normal · e ≤ offset`.
    fn le(&mut self, normal: &[f64], offset: f64, e: &Expr) {
        let mut row = vec![0.0; self.nv];
        let mut cst = 0.0;
        for (q, a) in normal.iter().enumerate() {
            if *a == 0.0 {
                continue;
            }
            cst += a * e.cst[q];
            for (j, r) in row.iter_mut().enumerate() {
                *r += a * e.coef[(q, j)];
            }
        }
        let rhs = offset - cst;
        if row.iter().all(|v| v.abs() < 1e-14) {
            if rhs < -TOL_GEOM {
                self.trivially_infeasible = true;
                self.lp.add_le(&row, rhs);
            }
            return;
        }
        self.lp.add_le(&row, rhs);
    }

    /// `e ∈ poly`.
    fn within(&mut self, poly: &Polytope, e: &Expr) {
        for h in poly.halfspaces() {
            self.le(h.normal.as_slice(), h.offset, e);
        }
    }

    /// `H z ≤ h λ` for every halfspace of `poly`.
    fn hull_piece(&mut self, poly: &Polytope, z: &Expr, lambda: &Expr) {
        let n = z.cst.len();
        let mut stacked = Expr {
            coef: DMatrix::zeros(n + 1, self.nv),
            cst: DVector::zeros(n + 1),
        };
        stacked.coef.rows_mut(0, n).copy_from(&z.coef);
        stacked.cst.rows_mut(0, n).copy_from(&z.cst);
        stacked.coef.row_mut(n).copy_from(&lambda.coef.row(0));
        stacked.cst[n] = lambda.cst[0];
        for h in poly.halfspaces() {
            let mut normal: Vec<f64> = h.normal.iter().copied().collect();
            normal.push(-h.offset);
            self.le(&normal, 0.0, &stacked);
        }
    }

    /// Epigraph of `‖M e‖` starting at variable `t0`; returns the constant part
    /// when `e` has no variable dependence.
    fn norm_term(&mut self, m: &DMatrix<f64>, norm: Norm, e: &Expr, t0: &mut usize) -> f64 {
        let me = e.map(m);
        if me.is_constant() {
            return norm.eval(&me.cst);
        }
        for q in 0..m.nrows() {
            let t = match norm {
                Norm::One => *t0 + q,
                Norm::Inf => *t0,
            };
            for sign in [1.0, -1.0] {
                let mut row: Vec<f64> = me.coef.row(q).iter().map(|v| sign * v).collect();
                row[t] -= 1.0;
                self.lp.add_le(&row, -sign * me.cst[q]);
            }
        }
        *t0 += match norm {
            Norm::One => m.nrows(),
            Norm::Inf => 1,
        };
        0.0
    }
}

fn epigraph_width(rows: usize, norm: Norm) -> usize {
    match norm {
        Norm::One => rows,
        Norm::Inf => 1,
    }
}

/// Builds the LP for a partial region assignment.
///
/// Steps with `assign[t] == None` have free region choice: their dynamics are
/// replaced by the convex hull of the graphs of all affine pieces over
/// `P̄_i ∩ X`. `terminal` optionally pins the region of `x(N)`.
fn build(
    sys: &PwaSystem,
    cfg: &MpcConfig,
    x0: &DVector<f64>,
    assign: &[Option<usize>],
    terminal: Option<usize>,
    form: Form,
    with_cost: bool,
) -> Built {
    let n = sys.n();
    let m = sys.m();
    let l = sys.num_regions();
    let horizon = cfg.horizon;
    debug_assert_eq!(assign.len(), horizon);
    let free = assign.iter().filter(|a| a.is_none()).count();
    let hull_block = (l - 1) * (n + 1);

    let nu = horizon * m;
    let nx = if form == Form::Full { horizon * n } else { 0 };
    let nh = free * hull_block;
    let ne = if with_cost {
        let state_terms = (horizon - 1) * epigraph_width(cfg.q.nrows(), cfg.norms[0]);
        let input_terms = horizon * epigraph_width(cfg.r.nrows(), cfg.norms[1]);
        state_terms + input_terms + epigraph_width(cfg.p.nrows(), cfg.norms[2])
    } else {
        0
    };
    let nv = nu + nx + nh + ne;
    let mut objective = vec![0.0; nv];
    for o in objective.iter_mut().skip(nu + nx + nh) {
        *o = 1.0;
    }
    let mut b = Builder {
        nv,
        lp: LinearProgram::new(objective),
        trivially_infeasible: false,
    };
    for j in nu + nx..nu + nx + nh {
        // λ variables are nonnegative; z variables stay free.
        let k = (j - nu - nx) % hull_block;
        if k % (n + 1) == n {
            b.lp.set_bounds(j, 0.0, f64::INFINITY);
        }
    }

    let x_tight = sys.state_set().erode(cfg.tightening_radius);
    let bmat = sys.input_matrix();
    let input_vars: Vec<usize> = (0..horizon).map(|t| t * m).collect();
    let mut states = vec![Expr::constant(x0.clone(), nv)];
    let mut hull_at = nu + nx;
    let mut lambdas = vec![Vec::new(); horizon];

    for t in 0..horizon {
        let x = states[t].clone();
        let u = Expr::vars(input_vars[t], m, nv);
        b.within(sys.input_set(), &u);
        let mut next = u.map(bmat);
        if let Some(i) = assign[t] {
            let r = sys.region(i);
            b.within(&r.polytope, &x);
            b.within(&x_tight, &x);
            next.add(&x.map(&r.a));
            next.cst += &r.c;
        } else {
            let last = l - 1;
            let rl = sys.region(last);
            let mut z_sum = Expr::constant(DVector::zeros(n), nv);
            let mut lambda_sum = Expr::constant(DVector::zeros(1), nv);
            next.add(&x.map(&rl.a));
            next.cst += &rl.c;
            for i in 0..last {
                let z = Expr::vars(hull_at, n, nv);
                let lambda = Expr::vars(hull_at + n, 1, nv);
                lambdas[t].push(hull_at + n);
                hull_at += n + 1;
                let dom = sys
                    .region(i)
                    .polytope
                    .intersect(&x_tight)
                    .expect("dimensions checked");
                b.hull_piece(&dom, &z, &lambda);
                let ri = sys.region(i);
                next.add(&z.map(&(&ri.a - &rl.a)));
                next.add(&lambda.map(&DMatrix::from_column_slice(
                    n,
                    1,
                    (&ri.c - &rl.c).as_slice(),
                )));
                z_sum.add(&z);
                lambda_sum.add(&lambda);
            }
            let mut z_last = x.clone();
            z_last.coef -= &z_sum.coef;
            z_last.cst -= &z_sum.cst;
            let mut lambda_last = Expr::constant(DVector::from_element(1, 1.0), nv);
            lambda_last.coef -= &lambda_sum.coef;
            lambda_last.cst -= &lambda_sum.cst;
            let dom = rl.polytope.intersect(&x_tight).expect("dimensions checked");
            b.hull_piece(&dom, &z_last, &lambda_last);
            b.le(&[-1.0], 0.0, &lambda_last);
        }
        let next = if form == Form::Full {
            let xv = Expr::vars(nu + t * n, n, nv);
            for q in 0..n {
                let mut row: Vec<f64> = xv
                    .coef
                    .row(q)
                    .iter()
                    .zip(next.coef.row(q).iter())
                    .map(|(a, c)| a - c)
                    .collect();
                for v in row.iter_mut() {
                    if v.abs() < 1e-16 {
                        *v = 0.0;
                    }
                }
                b.lp.add_eq(&row, next.cst[q]);
            }
            xv
        } else {
            next
        };
        states.push(next);
    }

    let xn = &states[horizon];
    if let Some(i) = terminal {
        b.within(&sys.region(i).polytope, xn);
    }
    if let Some(xf) = sys.terminal_set() {
        b.within(&xf.erode(cfg.tightening_radius), xn);
    }

    let mut offset = 0.0;
    if with_cost {
        let mut t0 = nu + nx + nh;
        for t in 0..horizon {
            offset += b.norm_term(&cfg.q, cfg.norms[0], &states[t], &mut t0);
            let u = Expr::vars(input_vars[t], m, nv);
            offset += b.norm_term(&cfg.r, cfg.norms[1], &u, &mut t0);
        }
        offset += b.norm_term(&cfg.p, cfg.norms[2], &states[horizon], &mut t0);
    }

    Built {
        lp: b.lp,
        offset,
        inputs: input_vars,
        states,
        trivially_infeasible: b.trivially_infeasible,
        lambdas,
    }
}

fn check_inputs(sys: &PwaSystem, cfg: &MpcConfig, x0: &DVector<f64>) -> Result<()> {
    cfg.check(sys.n(), sys.m())?;
    if x0.len() != sys.n() {
        return Err(Error::DimensionMismatch {
            expected: sys.n(),
            found: x0.len(),
        });
    }
    Ok(())
}

fn check_sequence(sys: &PwaSystem, cfg: &MpcConfig, seq: &SwitchingSequence) -> Result<()> {
    if seq.len() != cfg.horizon + 1 {
        return Err(Error::DimensionMismatch {
            expected: cfg.horizon + 1,
            found: seq.len(),
        });
    }
    if let Some(&bad) = seq.as_slice().iter().find(|&&i| i >= sys.num_regions()) {
        return Err(Error::Invalid(format!(
            "sequence names unknown region {}",
            bad + 1
        )));
    }
    Ok(())
}

/// The LP for a fixed sequence with `x(1..N)` as explicit variables.
///
/// Variables are ordered `u(0..N-1)`, `x(1..N)`, then epigraph variables.
pub fn build_fixed_sequence_lp(
    sys: &PwaSystem,
    cfg: &MpcConfig,
    x0: &DVector<f64>,
    seq: &SwitchingSequence,
) -> Result<LinearProgram> {
    check_inputs(sys, cfg, x0)?;
    check_sequence(sys, cfg, seq)?;
    let (assign, terminal) = split(seq.as_slice());
    Ok(build(sys, cfg, x0, &assign, terminal, Form::Full, true).lp)
}

/// Outcome of one LP from [`build`]: cost and trajectory when feasible.
struct Relaxation {
    cost: f64,
    states: Vec<DVector<f64>>,
    inputs: Vec<DVector<f64>>,
}

fn solve_built(built: &Built, m: usize) -> Result<Option<Relaxation>> {
    if built.trivially_infeasible {
        return Ok(None);
    }
    relaxation(built, built.lp.solve()?, m)
}

fn relaxation(built: &Built, res: LpResult, m: usize) -> Result<Option<Relaxation>> {
    match res {
        LpResult::Optimal { x, value } => Ok(Some(Relaxation {
            cost: value + built.offset,
            states: built.states.iter().map(|e| e.eval(&x)).collect(),
            inputs: built
                .inputs
                .iter()
                .map(|&s| DVector::from_column_slice(&x[s..s + m]))
                .collect(),
        })),
        LpResult::Infeasible => Ok(None),
        LpResult::Unbounded => Err(Error::Unbounded),
    }
}

fn split(seq: &[usize]) -> (Vec<Option<usize>>, Option<usize>) {
    let (last, head) = seq.split_last().expect("nonempty sequence");
    (head.iter().map(|&i| Some(i)).collect(), Some(*last))
}

fn solve_sequence(
    sys: &PwaSystem,
    cfg: &MpcConfig,
    x0: &DVector<f64>,
    seq: &[usize],
    with_cost: bool,
) -> Result<Option<Relaxation>> {
    let (assign, terminal) = split(seq);
    let built = build(sys, cfg, x0, &assign, terminal, Form::Condensed, with_cost);
    solve_built(&built, sys.m())
}

/// Solves the LP for a fixed switching sequence.
pub fn solve_fixed(
    sys: &PwaSystem,
    cfg: &MpcConfig,
    x0: &DVector<f64>,
    seq: &SwitchingSequence,
) -> Result<MpcSolution> {
    let start = Instant::now();
    check_inputs(sys, cfg, x0)?;
    check_sequence(sys, cfg, seq)?;
    let rel = solve_sequence(sys, cfg, x0, seq.as_slice(), true)?;
    let stats = SolveStats {
        lp_count: 1,
        incumbents: 0,
        wall: start.elapsed(),
    };
    Ok(match rel {
        Some(r) => MpcSolution {
            status: MpcStatus::Optimal,
            cost: r.cost,
            states: r.states,
            inputs: r.inputs,
            sequence: Some(seq.clone()),
            stats,
        },
        None => MpcSolution::infeasible(Some(seq.clone()), stats),
    })
}

/// Phase-1 feasibility of the fixed-sequence problem.
pub fn feasible_fixed(
    sys: &PwaSystem,
    cfg: &MpcConfig,
    x0: &DVector<f64>,
    seq: &SwitchingSequence,
) -> Result<bool> {
    check_inputs(sys, cfg, x0)?;
    check_sequence(sys, cfg, seq)?;
    let (assign, terminal) = split(seq.as_slice());
    let built = build(sys, cfg, x0, &assign, terminal, Form::Condensed, false);
    if built.trivially_infeasible {
        return Ok(false);
    }
    built.lp.feasible()
}

fn root_regions(sys: &PwaSystem, x0: &DVector<f64>, first: Option<usize>) -> Result<Vec<usize>> {
    let mut roots = sys.regions_containing(x0)?;
    if let Some(i) = first {
        roots.retain(|&r| r == i);
    }
    Ok(roots)
}

/// Keeps `(cost, seq)` if it beats the incumbent, preferring lexicographically
/// smaller sequences among ties.
fn improves(cost: f64, seq: &[usize], best: Option<&(f64, Vec<usize>, Relaxation)>) -> bool {
    match best {
        None => true,
        Some((c, s, _)) => cost < c - COST_TIE || (cost <= c + COST_TIE && seq < s.as_slice()),
    }
}

/// Enumerates every sequence whose first region contains `x0`.
pub fn solve_hybrid_exhaustive(
    sys: &PwaSystem,
    cfg: &MpcConfig,
    x0: &DVector<f64>,
) -> Result<MpcSolution> {
    let start = Instant::now();
    check_inputs(sys, cfg, x0)?;
    let l = sys.num_regions() as u128;
    let count = (0..=cfg.horizon).try_fold(1u128, |acc, _| acc.checked_mul(l));
    match count {
        Some(c) if c <= cfg.sequence_cap => {}
        _ => {
            return Err(Error::TooManySequences {
                count: count.unwrap_or(u128::MAX),
                cap: cfg.sequence_cap,
            })
        }
    }
    let mut stats = SolveStats::default();
    let mut best: Option<(f64, Vec<usize>, Relaxation)> = None;
    let l = sys.num_regions();
    for root in root_regions(sys, x0, None)? {
        let mut seq = vec![0; cfg.horizon + 1];
        seq[0] = root;
        loop {
            stats.lp_count += 1;
            if let Some(r) = solve_sequence(sys, cfg, x0, &seq, true)? {
                if best
                    .as_ref()
                    .is_none_or(|(c, _, _)| r.cost < c - COST_TIE)
                {
                    stats.incumbents += 1;
                    best = Some((r.cost, seq.clone(), r));
                }
            }
            // Odometer over δ(1..N).
            let mut k = cfg.horizon;
            loop {
                if k == 0 {
                    break;
                }
                seq[k] += 1;
                if seq[k] < l {
                    break;
                }
                seq[k] = 0;
                k -= 1;
            }
            if k == 0 {
                break;
            }
        }
    }
    stats.wall = start.elapsed();
    Ok(finish(best, stats))
}

fn finish(best: Option<(f64, Vec<usize>, Relaxation)>, stats: SolveStats) -> MpcSolution {
    match best {
        Some((cost, seq, r)) => MpcSolution {
            status: MpcStatus::Optimal,
            cost,
            states: r.states,
            inputs: r.inputs,
            sequence: Some(SwitchingSequence(seq)),
            stats,
        },
        None => MpcSolution::infeasible(None, stats),
    }
}

/// Options for [`solve_hybrid_bnb_with`].
#[derive(Clone, Debug, Default)]
pub struct BnbOptions {
    /// Restrict `δ(0)` to this region.
    pub first_region: Option<usize>,
    /// A sequence to evaluate first as the starting incumbent.
    pub incumbent_hint: Option<SwitchingSequence>,
    /// Stop at the first feasible leaf; node LPs carry no cost.
    pub feasibility_only: bool,
}

struct Node {
    bound: f64,
    root: usize,
    assign: Vec<Option<usize>>,
    preferred: bool,
    /// Free step to branch on and the region its relaxed state falls in.
    branch: (usize, Option<usize>),
    warm: WarmLp,
}

impl Node {
    fn depth(&self) -> usize {
        self.assign.iter().filter(|a| a.is_some()).count()
    }
}

enum Evaluated {
    Infeasible,
    /// The relaxation is attained by a concrete sequence.
    Integral(f64, Vec<usize>, Relaxation),
    Fractional(f64, usize, Option<usize>, WarmLp),
}

const CONSISTENCY_TOL: f64 = 1e-7;

/// Lowest region whose exact law reproduces the relaxed transition at step `t`.
fn consistent_region(
    sys: &PwaSystem,
    x_tight: &Polytope,
    r: &Relaxation,
    t: usize,
) -> Option<usize> {
    let x = &r.states[t];
    if x_tight.max_residual(x) > CONSISTENCY_TOL {
        return None;
    }
    let scale = 1.0 + r.states[t + 1].amax();
    (0..sys.num_regions()).find(|&i| {
        sys.region(i).polytope.max_residual(x) <= CONSISTENCY_TOL
            && (sys.affine_step(i, x, &r.inputs[t]) - &r.states[t + 1]).amax()
                <= CONSISTENCY_TOL * scale
    })
}

struct Search<'a> {
    sys: &'a PwaSystem,
    cfg: &'a MpcConfig,
    x0: &'a DVector<f64>,
    x_tight: Polytope,
    with_cost: bool,
    /// One relaxation per admissible `δ(0)`.
    roots: Vec<Built>,
    stats: SolveStats,
}

impl Search<'_> {
    /// Row that pins step `t` to region `i` through the hull weights.
    fn pin_row(&self, root: usize, t: usize, i: usize) -> (Vec<f64>, f64) {
        let built = &self.roots[root];
        let mut row = vec![0.0; built.lp.num_vars()];
        let lambdas = &built.lambdas[t];
        if i < lambdas.len() {
            // λ_{t,i} ≥ 1
            row[lambdas[i]] = -1.0;
            (row, -1.0)
        } else {
            // Σ λ_{t,j} ≤ 0 leaves all weight on the last region.
            for &j in lambdas {
                row[j] = 1.0;
            }
            (row, 0.0)
        }
    }

    fn classify(
        &mut self,
        root: usize,
        assign: &[Option<usize>],
        res: LpResult,
        warm: Option<WarmLp>,
    ) -> Result<Evaluated> {
        let Some(r) = relaxation(&self.roots[root], res, self.sys.m())? else {
            return Ok(Evaluated::Infeasible);
        };
        let warm = warm.expect("optimal LPs carry a warm state");
        let bound = if self.with_cost { r.cost } else { 0.0 };
        let mut seq = Vec::with_capacity(assign.len() + 1);
        let mut first_free = None;
        for (t, a) in assign.iter().enumerate() {
            match a {
                Some(i) => seq.push(*i),
                None => {
                    first_free.get_or_insert(t);
                    match consistent_region(self.sys, &self.x_tight, &r, t) {
                        Some(i) => seq.push(i),
                        None => {
                            let hint = self.sys.region_of(&r.states[t]).ok();
                            return Ok(Evaluated::Fractional(bound, t, hint, warm));
                        }
                    }
                }
            }
        }
        let Ok(last) = self.sys.region_of(&r.states[self.cfg.horizon]) else {
            return Err(Error::NumericalFailure(
                "terminal state outside every region".into(),
            ));
        };
        seq.push(last);
        // Confirm on the exact problem so that results match `solve_fixed`.
        self.stats.lp_count += 1;
        let branch_at = first_free.unwrap_or(0);
        match solve_sequence(self.sys, self.cfg, self.x0, &seq, self.with_cost)? {
            Some(exact) => {
                let cost = if self.with_cost { exact.cost } else { 0.0 };
                if cost <= bound + CONSISTENCY_TOL * (1.0 + bound.abs()) || first_free.is_none() {
                    Ok(Evaluated::Integral(cost, seq, exact))
                } else {
                    let hint = self.sys.region_of(&r.states[branch_at]).ok();
                    Ok(Evaluated::Fractional(bound, branch_at, hint, warm))
                }
            }
            None if first_free.is_none() => Ok(Evaluated::Infeasible),
            None => {
                let hint = self.sys.region_of(&r.states[branch_at]).ok();
                Ok(Evaluated::Fractional(bound, branch_at, hint, warm))
            }
        }
    }
}

/// Whether some completion of `assign` can be lexicographically `<=` `seq`.
fn may_precede(assign: &[Option<usize>], seq: &[usize]) -> bool {
    for (a, &s) in assign.iter().zip(seq) {
        match a {
            Some(i) if *i < s => return true,
            Some(i) if *i > s => return false,
            Some(_) => {}
            None if s > 0 => return true,
            None => {}
        }
    }
    true
}

type Incumbent = Option<(f64, Vec<usize>, Relaxation)>;

fn prunable(bound: f64, assign: &[Option<usize>], best: &Incumbent) -> bool {
    match best {
        None => false,
        Some((c, s, _)) => {
            !(bound < c - COST_TIE || (bound <= c + COST_TIE && may_precede(assign, s)))
        }
    }
}

/// Branch-and-bound with the default options.
pub fn solve_hybrid_bnb(
    sys: &PwaSystem,
    cfg: &MpcConfig,
    x0: &DVector<f64>,
) -> Result<MpcSolution> {
    solve_hybrid_bnb_with(sys, cfg, x0, &BnbOptions::default())
}

/// Whether any switching sequence is feasible (tightened if `cfg` says so).
pub fn hybrid_feasible(
    sys: &PwaSystem,
    cfg: &MpcConfig,
    x0: &DVector<f64>,
    first_region: Option<usize>,
) -> Result<bool> {
    let opts = BnbOptions {
        first_region,
        incumbent_hint: None,
        feasibility_only: true,
    };
    Ok(solve_hybrid_bnb_with(sys, cfg, x0, &opts)?.is_optimal())
}

/// Branch-and-bound over region assignments.
///
/// `δ(0)` is fixed per root. Free steps use the hull dynamics; a child pins one
/// step to one region by a cut on its hull weights and is re-optimized from the
/// parent's tableau. A node closes as soon as its relaxed trajectory follows a
/// single region's law at every free step, after the exact LP for that
/// sequence confirms the bound.
pub fn solve_hybrid_bnb_with(
    sys: &PwaSystem,
    cfg: &MpcConfig,
    x0: &DVector<f64>,
    opts: &BnbOptions,
) -> Result<MpcSolution> {
    let start = Instant::now();
    check_inputs(sys, cfg, x0)?;
    let horizon = cfg.horizon;
    let l = sys.num_regions();
    let with_cost = !opts.feasibility_only;
    let roots = root_regions(sys, x0, opts.first_region)?;
    let root_assign: Vec<Vec<Option<usize>>> = roots
        .iter()
        .map(|&r| {
            let mut a = vec![None; horizon];
            a[0] = Some(r);
            a
        })
        .collect();
    let mut search = Search {
        sys,
        cfg,
        x0,
        x_tight: sys.state_set().erode(cfg.tightening_radius),
        with_cost,
        roots: root_assign
            .iter()
            .map(|a| build(sys, cfg, x0, a, None, Form::Condensed, with_cost))
            .collect(),
        stats: SolveStats::default(),
    };
    let mut best: Incumbent = None;
    let done = |search: Search, best: Incumbent| {
        let mut stats = search.stats;
        stats.wall = start.elapsed();
        finish(best, stats)
    };

    if let Some(hint) = &opts.incumbent_hint {
        if hint.len() == horizon + 1
            && roots.contains(&hint.first())
            && hint.as_slice().iter().all(|&i| i < l)
        {
            search.stats.lp_count += 1;
            if let Some(r) = solve_sequence(sys, cfg, x0, hint.as_slice(), with_cost)? {
                search.stats.incumbents += 1;
                let cost = if with_cost { r.cost } else { 0.0 };
                best = Some((cost, hint.as_slice().to_vec(), r));
                if opts.feasibility_only {
                    return Ok(done(search, best));
                }
            }
        }
    }

    let mut open: Vec<Node> = Vec::new();
    let mut pending: Vec<(usize, Vec<Option<usize>>, bool, LpResult, Option<WarmLp>)> = Vec::new();
    for (k, assign) in root_assign.into_iter().enumerate() {
        search.stats.lp_count += 1;
        let (res, warm) = if search.roots[k].trivially_infeasible {
            (LpResult::Infeasible, None)
        } else {
            WarmLp::solve(&search.roots[k].lp)?
        };
        pending.push((k, assign, false, res, warm));
    }
    loop {
        for (root, assign, preferred, res, warm) in std::mem::take(&mut pending) {
            match search.classify(root, &assign, res, warm)? {
                Evaluated::Infeasible => {}
                Evaluated::Integral(cost, seq, r) => {
                    if improves(cost, &seq, best.as_ref()) {
                        search.stats.incumbents += 1;
                        best = Some((cost, seq, r));
                        if opts.feasibility_only {
                            return Ok(done(search, best));
                        }
                    }
                }
                Evaluated::Fractional(bound, t, hint, warm) => {
                    if !prunable(bound, &assign, &best) {
                        open.push(Node {
                            bound,
                            root,
                            assign,
                            preferred,
                            branch: (t, hint),
                            warm,
                        });
                    }
                }
            }
        }
        let dive = best.is_none() || opts.feasibility_only;
        let Some(pick) = (0..open.len()).min_by(|&a, &b| {
            let (na, nb) = (&open[a], &open[b]);
            let by_bound = na.bound.total_cmp(&nb.bound);
            let by_depth = nb.depth().cmp(&na.depth());
            let by_pref = nb.preferred.cmp(&na.preferred);
            let by_lex = na.assign.cmp(&nb.assign);
            if dive {
                by_depth.then(by_pref).then(by_bound).then(by_lex)
            } else {
                by_bound.then(by_depth).then(by_lex)
            }
        }) else {
            break;
        };
        let node = open.swap_remove(pick);
        if prunable(node.bound, &node.assign, &best) {
            continue;
        }
        let (t, hint) = node.branch;
        for i in 0..l {
            let mut assign = node.assign.clone();
            assign[t] = Some(i);
            let (row, rhs) = search.pin_row(node.root, t, i);
            search.stats.lp_count += 1;
            let (res, warm) = node.warm.add_le(&row, rhs)?;
            pending.push((node.root, assign, hint == Some(i), res, warm));
        }
    }
    Ok(done(search, best))
}

/// Hybrid problem solved by branch-and-bound.
pub fn solve_hybrid(sys: &PwaSystem, cfg: &MpcConfig, x0: &DVector<f64>) -> Result<MpcSolution> {
    solve_hybrid_bnb(sys, cfg, x0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::benchmarks::{paper_config, paper_system, toy_config, toy_system};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn v(x: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(x)
    }

    fn seq(one_based: &[usize]) -> SwitchingSequence {
        SwitchingSequence::from_one_based(one_based).unwrap()
    }

    #[test]
    fn sequence_display_and_json() {
        let s = seq(&[1, 2, 2]);
        assert_eq!(s.to_string(), "1-2-2");
        assert_eq!(serde_json::to_string(&s).unwrap(), "[1,2,2]");
        let back: SwitchingSequence = serde_json::from_str("[1,2,2]").unwrap();
        assert_eq!(back, s);
        assert!(serde_json::from_str::<SwitchingSequence>("[0,1]").is_err());
        assert_eq!(s.shifted(0), seq(&[2, 2, 1]));
    }

    #[test]
    fn config_rank_check() {
        let cfg = toy_config(2);
        let mut bad = cfg.clone();
        bad.q = DMatrix::zeros(1, 1);
        assert!(bad.check(1, 1).is_err());
        assert!(cfg.check(1, 1).is_ok());
        assert!(cfg.with_horizon(0).check(1, 1).is_err());
    }

    #[test]
    fn toy_fixed_lp_structure() {
        // N = 1, x0 = -0.5, sequence (1, 1). Hand-written oracle:
        //   vars u, x1, t_q0? (constant), t_r, t_p
        //   x1 = 0.5 x0 + u,  |u| ≤ 0.5,  x1 ≤ 0 (region 1),  |x1| ≤ 0.1 (Xf)
        let sys = toy_system();
        let cfg = toy_config(1);
        let lp = build_fixed_sequence_lp(&sys, &cfg, &v(&[-0.5]), &seq(&[1, 1])).unwrap();
        assert_eq!(lp.num_vars(), 4);
        assert_eq!(lp.num_eq(), 1);
        assert_eq!(lp.eq_row(0)[..2], [-1.0, 1.0]);
        assert_eq!(lp.eq_rhs()[0], -0.25);
        // U (2 rows), region of x1 (1), Xf (2), epigraphs (2 + 2).
        assert_eq!(lp.num_ineq(), 9);
        let sol = solve_fixed(&sys, &cfg, &v(&[-0.5]), &seq(&[1, 1])).unwrap();
        assert!(sol.is_optimal());
        // u = 0.15 puts x1 at -0.1; cost = 0.5 + 0.15 + 0.1.
        assert!((sol.cost - 0.75).abs() < 1e-9, "{}", sol.cost);
        let lp_cost = match lp.solve().unwrap() {
            LpResult::Optimal { value, .. } => value + 0.5,
            other => panic!("{other:?}"),
        };
        assert!((lp_cost - sol.cost).abs() < 1e-9);
    }

    #[test]
    fn zero_tightening_is_identity() {
        let sys = paper_system();
        let cfg = paper_config(5).with_tightening(0.0);
        let x0 = v(&[0.5, -0.3]);
        let s = SwitchingSequence::constant(0, 5);
        let a = build_fixed_sequence_lp(&sys, &cfg, &x0, &s).unwrap();
        let mut reference = cfg.clone();
        reference.tightening_radius = 0.0;
        let b = build_fixed_sequence_lp(&sys, &reference, &x0, &s).unwrap();
        for i in 0..a.num_ineq() {
            assert_eq!(a.ineq_row(i), b.ineq_row(i));
        }
        assert_eq!(a.ineq_rhs(), b.ineq_rhs());
    }

    #[test]
    fn paper_variable_count() {
        let sys = paper_system();
        let cfg = paper_config(12).with_tightening(0.0);
        let lp = build_fixed_sequence_lp(
            &sys,
            &cfg,
            &v(&[0.5, 0.5]),
            &SwitchingSequence::constant(0, 12),
        )
        .unwrap();
        // 1-norm epigraph: 2 per state for k = 1..11, 1 per input, 2 terminal.
        let epigraph = 11 * 2 + 12 + 2;
        assert_eq!(lp.num_vars(), 12 + 12 * 2 + epigraph);
    }

    #[test]
    fn full_and_condensed_agree() {
        let sys = paper_system();
        let cfg = paper_config(6).with_tightening(0.0);
        let x0 = v(&[2.0, 0.0]);
        for s in [seq(&[2, 1, 1, 1, 1, 1, 1]), seq(&[2, 2, 1, 1, 1, 1, 1])] {
            let sol = solve_fixed(&sys, &cfg, &x0, &s).unwrap();
            let lp = build_fixed_sequence_lp(&sys, &cfg, &x0, &s).unwrap();
            let q0 = cfg.q.clone() * &x0;
            let full = lp.solve().unwrap().value().map(|c| c + q0.lp_norm(1));
            match full {
                Some(c) => assert!((c - sol.cost).abs() < 1e-7, "{c} vs {}", sol.cost),
                None => assert!(!sol.is_optimal()),
            }
        }
    }

    #[test]
    fn origin_is_free() {
        let sys = paper_system();
        let cfg = paper_config(12).with_tightening(0.0);
        let s = SwitchingSequence::constant(0, 12);
        let sol = solve_fixed(&sys, &cfg, &v(&[0.0, 0.0]), &s).unwrap();
        assert!(sol.is_optimal());
        assert!(sol.cost.abs() < 1e-9);
        assert!(sol
            .states
            .iter()
            .chain(&sol.inputs)
            .all(|x| x.amax() < 1e-9));
        let h = solve_hybrid_bnb(&sys, &cfg, &v(&[0.0, 0.0])).unwrap();
        assert!(h.cost.abs() < 1e-9);
        assert_eq!(h.stats.incumbents, 1);
    }

    #[test]
    fn region_mismatch_is_infeasible() {
        let sys = paper_system();
        let cfg = paper_config(4).with_tightening(0.0);
        let x0 = v(&[0.0, 0.0]);
        let s = seq(&[2, 1, 1, 1, 1]);
        assert!(!solve_fixed(&sys, &cfg, &x0, &s).unwrap().is_optimal());
        assert!(!feasible_fixed(&sys, &cfg, &x0, &s).unwrap());
        assert!(feasible_fixed(&sys, &cfg, &x0, &SwitchingSequence::constant(0, 4)).unwrap());
    }

    #[test]
    fn toy_exhaustive_matches_enumeration() {
        let sys = toy_system();
        let cfg = toy_config(2);
        for &x in &[-0.9, -0.4, 0.0, 0.3, 0.8] {
            let x0 = v(&[x]);
            let ex = solve_hybrid_exhaustive(&sys, &cfg, &x0).unwrap();
            let mut best = f64::INFINITY;
            for a in sys.regions_containing(&x0).unwrap() {
                for b in 0..2 {
                    for c in 0..2 {
                        let s = SwitchingSequence::new(vec![a, b, c]);
                        let sol = solve_fixed(&sys, &cfg, &x0, &s).unwrap();
                        best = best.min(sol.cost);
                    }
                }
            }
            assert_eq!(ex.is_optimal(), best.is_finite());
            if best.is_finite() {
                assert!((ex.cost - best).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn bnb_matches_exhaustive_on_toy() {
        let sys = toy_system();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for horizon in 1..=4 {
            let cfg = toy_config(horizon);
            for _ in 0..40 {
                let x0 = v(&[rng.gen_range(-1.0..1.0)]);
                let ex = solve_hybrid_exhaustive(&sys, &cfg, &x0).unwrap();
                let bb = solve_hybrid_bnb(&sys, &cfg, &x0).unwrap();
                assert_eq!(ex.status, bb.status, "x0 = {x0}");
                if ex.is_optimal() {
                    assert!((ex.cost - bb.cost).abs() < 1e-6);
                }
            }
        }
    }

    #[test]
    fn hybrid_sequence_reproduces_cost() {
        let sys = paper_system();
        let cfg = paper_config(6).with_tightening(0.0);
        let x0 = v(&[2.0, 0.0]);
        let h = solve_hybrid_bnb(&sys, &cfg, &x0).unwrap();
        assert!(h.is_optimal());
        let f = solve_fixed(&sys, &cfg, &x0, h.sequence.as_ref().unwrap()).unwrap();
        assert!((f.cost - h.cost).abs() < 1e-6);
        assert!((cfg.trajectory_cost(&h.states, &h.inputs) - h.cost).abs() < 1e-6);
        assert!(h.constraint_violation(&sys, &cfg).unwrap() < 1e-7);
    }

    #[test]
    fn infeasible_corner() {
        let sys = paper_system();
        let cfg = paper_config(6).with_tightening(0.0);
        // Near the lower-left corner of X the state cannot be turned around in time.
        let x0 = v(&[-5.5, -5.0]);
        assert!(sys.state_set().contains(&x0, 0.0).unwrap());
        assert!(!solve_hybrid_exhaustive(&sys, &cfg, &x0)
            .unwrap()
            .is_optimal());
        assert!(!solve_hybrid_bnb(&sys, &cfg, &x0).unwrap().is_optimal());
        assert!(!hybrid_feasible(&sys, &cfg, &x0, None).unwrap());
    }

    #[test]
    fn exhaustive_cap() {
        let sys = paper_system();
        let cfg = paper_config(16);
        let err = solve_hybrid_exhaustive(&sys, &cfg, &v(&[0.0, 0.0])).unwrap_err();
        assert!(matches!(err, Error::TooManySequences { .. }));
    }

    #[test]
    fn incumbent_hint_does_not_change_optimum() {
        let sys = paper_system();
        let cfg = paper_config(8).with_tightening(0.0);
        let x0 = v(&[3.0, -2.0]);
        let plain = solve_hybrid_bnb(&sys, &cfg, &x0).unwrap();
        let opts = BnbOptions {
            incumbent_hint: Some(SwitchingSequence::constant(1, 8)),
            ..Default::default()
        };
        let hinted = solve_hybrid_bnb_with(&sys, &cfg, &x0, &opts).unwrap();
        assert_eq!(plain.status, hinted.status);
        if plain.is_optimal() {
            assert!((plain.cost - hinted.cost).abs() < 1e-6);
        }
    }

    #[test]
    fn degenerate_feasibility_search_recovers() {
        // All-zero objective makes every dual ratio tie; this state used to cycle.
        let sys = paper_system();
        let cfg = paper_config(12).with_tightening(0.0);
        let x0 = v(&[-5.032230589429176, 9.352489322135149]);
        assert!(hybrid_feasible(&sys, &cfg, &x0, None).unwrap());
        assert!(solve_hybrid_bnb(&sys, &cfg, &x0).unwrap().is_optimal());
    }
}
