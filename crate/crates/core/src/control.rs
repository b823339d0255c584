//! Online control with a learned policy, closed-loop simulation and
//! suboptimality metrics against the hybrid MPC.

use std::time::{Duration, Instant};

use nalgebra::DVector;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mpc::{
    solve_fixed, solve_hybrid_bnb_with, BnbOptions, MpcConfig, MpcSolution, SwitchingSequence,
};
use crate::policy::SequencePolicy;
use crate::pwa::PwaSystem;

/// Closed-loop runs stop once `‖x‖₂` drops below this.
pub const DEFAULT_STOP_TOL: f64 = 0.01;
pub const DEFAULT_STEP_CAP: usize = 500;

/// Costs below this count as zero in the suboptimality ratio.
const ZERO_COST: f64 = 1e-9;

#[derive(Clone, Debug)]
pub struct ControllerState {
    pub sequence: SwitchingSequence,
    /// Predicted states `x(0), …, x(N)` of the last solve.
    pub predicted: Vec<DVector<f64>>,
    /// Index of the next closed-loop step.
    pub step: usize,
}

#[derive(Clone, Debug)]
pub struct StepInfo {
    pub sequence: SwitchingSequence,
    pub cost: f64,
    pub fallback: bool,
    /// Classifier evaluation plus LP solve.
    pub wall: Duration,
}

/// `(δ(1), …, δ(N), i)` where `i` is the region reached from the predicted
/// terminal state under the terminal gain of the region it lies in.
pub fn shifted_fallback(sys: &PwaSystem, state: &ControllerState) -> Result<SwitchingSequence> {
    let x_n = state
        .predicted
        .last()
        .ok_or_else(|| Error::Invalid("controller state has no prediction".into()))?;
    let j = sys
        .regions_containing(x_n)?
        .into_iter()
        .find(|j| sys.terminal_gains().contains_key(j))
        .ok_or_else(|| Error::Invalid("terminal state outside every gain region".into()))?;
    let k = &sys.terminal_gains()[&j];
    let next = sys.affine_step(j, x_n, &(k * x_n));
    Ok(state.sequence.shifted(sys.region_of(&next)?))
}

/// One step of the learned controller: classify, fall back to the shifted
/// sequence if the state is classified infeasible, then solve the LP.
pub fn control_step(
    pol: &SequencePolicy,
    sys: &PwaSystem,
    cfg: &MpcConfig,
    state: Option<&ControllerState>,
    x: &DVector<f64>,
) -> Result<(DVector<f64>, ControllerState, StepInfo)> {
    let start = Instant::now();
    let plain = cfg.with_tightening(0.0);
    let (sequence, fallback) = match (pol.predict(sys, x)?, state) {
        (Some(seq), _) => (seq, false),
        (None, None) => return Err(Error::InitialStateInfeasible),
        (None, Some(prev)) => (shifted_fallback(sys, prev)?, true),
    };
    let sol = solve_fixed(sys, &plain, x, &sequence)?;
    let wall = start.elapsed();
    let step = state.map_or(0, |s| s.step);
    if !sol.is_optimal() {
        return Err(Error::RecursiveFeasibilityBroken { step });
    }
    let u = sol.inputs[0].clone();
    let info = StepInfo {
        sequence: sequence.clone(),
        cost: sol.cost,
        fallback,
        wall,
    };
    let next = ControllerState {
        sequence,
        predicted: sol.states,
        step: step + 1,
    };
    Ok((u, next, info))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    Converged,
    Cap,
    Infeasible,
}

#[derive(Clone, Debug)]
pub struct ClosedLoopTrace {
    pub states: Vec<DVector<f64>>,
    pub inputs: Vec<DVector<f64>>,
    pub sequences: Vec<SwitchingSequence>,
    /// Optimal value of the problem solved at each step.
    pub costs: Vec<f64>,
    pub solve_times: Vec<Duration>,
    pub fallbacks: Vec<bool>,
    pub termination: Termination,
}

impl ClosedLoopTrace {
    fn start(x0: &DVector<f64>) -> Self {
        Self {
            states: vec![x0.clone()],
            inputs: Vec::new(),
            sequences: Vec::new(),
            costs: Vec::new(),
            solve_times: Vec::new(),
            fallbacks: Vec::new(),
            termination: Termination::Cap,
        }
    }

    pub fn steps(&self) -> usize {
        self.inputs.len()
    }

    /// `Σ_k ℓ(x_k, u_k)` over the applied inputs.
    pub fn cumulative_cost(&self, cfg: &MpcConfig) -> f64 {
        self.states
            .iter()
            .zip(&self.inputs)
            .map(|(x, u)| cfg.stage_cost(x, u))
            .sum()
    }

    pub fn fallback_count(&self) -> usize {
        self.fallbacks.iter().filter(|&&f| f).count()
    }

    /// One row per applied input; the final state gets a row with empty input columns.
    pub fn to_csv(&self) -> String {
        let n = self.states[0].len();
        let m = self.inputs.first().map_or(0, |u| u.len());
        let mut head: Vec<String> = (1..=n).map(|i| format!("x{i}")).collect();
        head.extend((1..=m).map(|i| format!("u{i}")));
        head.extend(["sequence", "cost", "solve_seconds", "fallback"].map(String::from));
        let mut out = format!("k,{}\n", head.join(","));
        for (k, x) in self.states.iter().enumerate() {
            let mut row: Vec<String> = x.iter().map(|v| v.to_string()).collect();
            if k < self.inputs.len() {
                row.extend(self.inputs[k].iter().map(|v| v.to_string()));
                row.push(self.sequences[k].to_string());
                row.push(self.costs[k].to_string());
                row.push(self.solve_times[k].as_secs_f64().to_string());
                row.push(self.fallbacks[k].to_string());
            } else {
                row.extend(std::iter::repeat_n(String::new(), m + 4));
            }
            out.push_str(&format!("{k},{}\n", row.join(",")));
        }
        out
    }
}

/// Runs the learned controller from `x0`.
pub fn simulate(
    pol: &SequencePolicy,
    sys: &PwaSystem,
    cfg: &MpcConfig,
    x0: &DVector<f64>,
    stop_tol: f64,
    step_cap: usize,
) -> Result<ClosedLoopTrace> {
    let mut trace = ClosedLoopTrace::start(x0);
    let mut state: Option<ControllerState> = None;
    let mut x = x0.clone();
    loop {
        if x.norm() < stop_tol {
            trace.termination = Termination::Converged;
            return Ok(trace);
        }
        if trace.steps() >= step_cap {
            return Ok(trace);
        }
        let (u, next, info) = control_step(pol, sys, cfg, state.as_ref(), &x)?;
        x = sys.step(&x, &u)?;
        trace.inputs.push(u);
        trace.states.push(x.clone());
        trace.sequences.push(info.sequence);
        trace.costs.push(info.cost);
        trace.solve_times.push(info.wall);
        trace.fallbacks.push(info.fallback);
        state = Some(next);
    }
}

/// Runs the hybrid MPC from `x0`, seeding each solve with the shifted previous sequence.
pub fn simulate_hybrid(
    sys: &PwaSystem,
    cfg: &MpcConfig,
    x0: &DVector<f64>,
    stop_tol: f64,
    step_cap: usize,
) -> Result<ClosedLoopTrace> {
    let plain = cfg.with_tightening(0.0);
    let mut trace = ClosedLoopTrace::start(x0);
    let mut prev: Option<ControllerState> = None;
    let mut x = x0.clone();
    loop {
        if x.norm() < stop_tol {
            trace.termination = Termination::Converged;
            return Ok(trace);
        }
        if trace.steps() >= step_cap {
            return Ok(trace);
        }
        let hint = prev.as_ref().and_then(|p| shifted_fallback(sys, p).ok());
        let opts = BnbOptions {
            incumbent_hint: hint,
            ..BnbOptions::default()
        };
        let sol = solve_hybrid_bnb_with(sys, &plain, &x, &opts)?;
        let Some(sequence) = sol.sequence.clone().filter(|_| sol.is_optimal()) else {
            trace.termination = Termination::Infeasible;
            return Ok(trace);
        };
        let u = sol.inputs[0].clone();
        x = sys.step(&x, &u)?;
        trace.inputs.push(u);
        trace.states.push(x.clone());
        trace.sequences.push(sequence.clone());
        trace.costs.push(sol.cost);
        trace.solve_times.push(sol.stats.wall);
        trace.fallbacks.push(false);
        prev = Some(ControllerState {
            sequence,
            predicted: sol.states,
            step: trace.steps(),
        });
    }
}

/// `100·(j − j_opt)/j_opt`, with `0/0` read as 0.
pub fn suboptimality(j: f64, j_opt: f64) -> f64 {
    if j.abs() < ZERO_COST && j_opt.abs() < ZERO_COST {
        0.0
    } else {
        100.0 * (j - j_opt) / j_opt
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct OpenLoopRow {
    pub x: Vec<f64>,
    pub label: Option<SwitchingSequence>,
    /// `None` when the state is classified infeasible.
    pub policy_cost: Option<f64>,
    pub optimal_cost: Option<f64>,
    pub delta: Option<f64>,
    pub policy_seconds: f64,
    pub hybrid_seconds: f64,
}

/// Open-loop suboptimality of the policy at every state of `grid`.
pub fn evaluate_open_loop(
    pol: &SequencePolicy,
    sys: &PwaSystem,
    cfg: &MpcConfig,
    grid: &[DVector<f64>],
) -> Result<Vec<OpenLoopRow>> {
    let plain = cfg.with_tightening(0.0);
    grid.par_iter()
        .map(|x| {
            let start = Instant::now();
            let label = pol.predict(sys, x)?;
            let fixed = match &label {
                Some(seq) => Some(solve_fixed(sys, &plain, x, seq)?),
                None => None,
            };
            let policy_seconds = start.elapsed().as_secs_f64();
            let hybrid = solve_hybrid_bnb_with(sys, &plain, x, &BnbOptions::default())?;
            let policy_cost = fixed.filter(MpcSolution::is_optimal).map(|s| s.cost);
            let optimal_cost = hybrid.is_optimal().then_some(hybrid.cost);
            let delta = match (policy_cost, optimal_cost) {
                (Some(j), Some(j_opt)) => Some(suboptimality(j, j_opt)),
                _ => None,
            };
            Ok(OpenLoopRow {
                x: x.iter().copied().collect(),
                label,
                policy_cost,
                optimal_cost,
                delta,
                policy_seconds,
                hybrid_seconds: hybrid.stats.wall.as_secs_f64(),
            })
        })
        .collect()
}

pub fn open_loop_csv(rows: &[OpenLoopRow]) -> String {
    let n = rows.first().map_or(0, |r| r.x.len());
    let xs: Vec<String> = (1..=n).map(|i| format!("x{i}")).collect();
    let mut out = format!("{},label,policy_cost,optimal_cost,delta\n", xs.join(","));
    let opt = |v: Option<f64>| v.map_or(String::new(), |v| v.to_string());
    for r in rows {
        let x: Vec<String> = r.x.iter().map(|v| v.to_string()).collect();
        let label = r.label.as_ref().map_or("-1".to_string(), |s| s.to_string());
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            x.join(","),
            label,
            opt(r.policy_cost),
            opt(r.optimal_cost),
            opt(r.delta)
        ));
    }
    out
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub count: usize,
    pub mean: f64,
    pub median: f64,
    pub min: f64,
    pub max: f64,
    pub std: f64,
}

impl Summary {
    pub fn of(values: &[f64]) -> Self {
        if values.is_empty() {
            return Self::default();
        }
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        let count = v.len();
        let mean = v.iter().sum::<f64>() / count as f64;
        let median = if count % 2 == 1 {
            v[count / 2]
        } else {
            0.5 * (v[count / 2 - 1] + v[count / 2])
        };
        let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / count as f64;
        Self {
            count,
            mean,
            median,
            min: v[0],
            max: v[count - 1],
            std: var.sqrt(),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ClosedLoopRun {
    pub x0: Vec<f64>,
    pub policy_cost: f64,
    pub hybrid_cost: f64,
    /// `None` when either loop failed to converge.
    pub delta: Option<f64>,
    pub policy_steps: usize,
    pub hybrid_steps: usize,
    pub fallbacks: usize,
    pub policy_termination: Termination,
    pub hybrid_termination: Termination,
    /// Step at which a fixed-sequence solve was infeasible, if any.
    pub broken_at: Option<usize>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ClosedLoopReport {
    pub runs: Vec<ClosedLoopRun>,
    pub delta: Summary,
    /// Per-step solve times of the hybrid loop, in seconds.
    pub hybrid_seconds: Vec<f64>,
    /// Per-step classify-and-solve times of the learned loop, in seconds.
    pub policy_seconds: Vec<f64>,
    pub hybrid_time: Summary,
    pub policy_time: Summary,
    pub recursive_feasibility_breaks: usize,
    pub fallbacks: usize,
}

impl ClosedLoopReport {
    /// Cost columns of the results table. Deterministic for a fixed batch.
    pub fn table(&self) -> serde_json::Value {
        let unconverged = self.runs.iter().filter(|r| r.delta.is_none()).count();
        serde_json::json!({
            "runs": self.runs.len(),
            "sum_delta_j": self.delta,
            "unconverged_runs": unconverged,
            "recursive_feasibility_breaks": self.recursive_feasibility_breaks,
            "fallbacks": self.fallbacks,
        })
    }

    /// Wall-time columns of the results table.
    pub fn timing_table(&self) -> serde_json::Value {
        serde_json::json!({
            "hybrid_solve_seconds": self.hybrid_time,
            "policy_solve_seconds": self.policy_time,
            "median_speedup": self.hybrid_time.median / self.policy_time.median.max(f64::MIN_POSITIVE),
        })
    }

    /// One row per run.
    pub fn runs_csv(&self) -> String {
        let n = self.runs.first().map_or(0, |r| r.x0.len());
        let xs: Vec<String> = (1..=n).map(|i| format!("x0_{i}")).collect();
        let mut out = format!(
            "{},policy_cost,hybrid_cost,delta,policy_steps,hybrid_steps,fallbacks,policy_termination,hybrid_termination,broken_at\n",
            xs.join(",")
        );
        let opt = |v: Option<String>| v.unwrap_or_default();
        for r in &self.runs {
            let x: Vec<String> = r.x0.iter().map(|v| v.to_string()).collect();
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{:?},{:?},{}\n",
                x.join(","),
                r.policy_cost,
                r.hybrid_cost,
                opt(r.delta.map(|d| d.to_string())),
                r.policy_steps,
                r.hybrid_steps,
                r.fallbacks,
                r.policy_termination,
                r.hybrid_termination,
                opt(r.broken_at.map(|k| k.to_string()))
            ));
        }
        out
    }

    /// Per-step solve times, one row per solve.
    pub fn timing_csv(&self) -> String {
        let mut out = String::from("solver,seconds\n");
        for t in &self.hybrid_seconds {
            out.push_str(&format!("hybrid,{t}\n"));
        }
        for t in &self.policy_seconds {
            out.push_str(&format!("policy,{t}\n"));
        }
        out
    }
}

/// Learned and hybrid closed loops from every initial state.
pub fn evaluate_closed_loop(
    pol: &SequencePolicy,
    sys: &PwaSystem,
    cfg: &MpcConfig,
    initial: &[DVector<f64>],
    stop_tol: f64,
    step_cap: usize,
) -> Result<ClosedLoopReport> {
    let results: Vec<(ClosedLoopRun, Vec<f64>, Vec<f64>)> = initial
        .par_iter()
        .map(|x0| {
            let hybrid = simulate_hybrid(sys, cfg, x0, stop_tol, step_cap)?;
            let (learned, broken_at) = match simulate(pol, sys, cfg, x0, stop_tol, step_cap) {
                Ok(t) => (Some(t), None),
                Err(Error::RecursiveFeasibilityBroken { step }) => (None, Some(step)),
                Err(e) => return Err(e),
            };
            let hybrid_cost = hybrid.cumulative_cost(cfg);
            let policy_cost = learned
                .as_ref()
                .map_or(f64::INFINITY, |t| t.cumulative_cost(cfg));
            let converged = |t: &ClosedLoopTrace| t.termination == Termination::Converged;
            let delta = match &learned {
                Some(t) if converged(t) && converged(&hybrid) => {
                    Some(suboptimality(policy_cost, hybrid_cost))
                }
                _ => None,
            };
            let secs = |t: &ClosedLoopTrace| {
                t.solve_times
                    .iter()
                    .map(Duration::as_secs_f64)
                    .collect::<Vec<_>>()
            };
            let run = ClosedLoopRun {
                x0: x0.iter().copied().collect(),
                policy_cost,
                hybrid_cost,
                delta,
                policy_steps: learned.as_ref().map_or(0, ClosedLoopTrace::steps),
                hybrid_steps: hybrid.steps(),
                fallbacks: learned.as_ref().map_or(0, ClosedLoopTrace::fallback_count),
                policy_termination: learned
                    .as_ref()
                    .map_or(Termination::Infeasible, |t| t.termination),
                hybrid_termination: hybrid.termination,
                broken_at,
            };
            let policy_secs = learned.as_ref().map_or_else(Vec::new, secs);
            Ok((run, secs(&hybrid), policy_secs))
        })
        .collect::<Result<_>>()?;
    let mut runs = Vec::with_capacity(results.len());
    let mut hybrid_seconds = Vec::new();
    let mut policy_seconds = Vec::new();
    for (run, h, p) in results {
        runs.push(run);
        hybrid_seconds.extend(h);
        policy_seconds.extend(p);
    }
    let deltas: Vec<f64> = runs.iter().filter_map(|r| r.delta).collect();
    Ok(ClosedLoopReport {
        delta: Summary::of(&deltas),
        hybrid_time: Summary::of(&hybrid_seconds),
        policy_time: Summary::of(&policy_seconds),
        recursive_feasibility_breaks: runs.iter().filter(|r| r.broken_at.is_some()).count(),
        fallbacks: runs.iter().map(|r| r.fallbacks).sum(),
        runs,
        hybrid_seconds,
        policy_seconds,
    })
}

/// `count` states drawn uniformly from the set the policy labels with a sequence.
pub fn sample_labeled_states<R: Rng>(
    pol: &SequencePolicy,
    sys: &PwaSystem,
    rng: &mut R,
    count: usize,
) -> Result<Vec<DVector<f64>>> {
    let mut out = Vec::with_capacity(count);
    let mut attempts = 0usize;
    while out.len() < count {
        attempts += 1;
        if attempts > 1000 * (count + 1) {
            return Err(Error::Invalid("the policy labels almost no state".into()));
        }
        let x = sys.state_set().sample_uniform(rng, 1)?.remove(0);
        if pol.predict(sys, &x)?.is_some() {
            out.push(x);
        }
    }
    Ok(out)
}

/// Points of the axis-aligned grid with spacing `step`, anchored at the lower
/// corner of the bounding box of `X`, that lie in `X`.
pub fn state_grid(sys: &PwaSystem, step: f64) -> Result<Vec<DVector<f64>>> {
    if !(step > 0.0) {
        return Err(Error::Invalid("grid step must be positive".into()));
    }
    let Some((lo, hi)) = sys.state_set().bounding_box()? else {
        return Ok(Vec::new());
    };
    let counts: Vec<usize> = lo
        .iter()
        .zip(&hi)
        .map(|(l, h)| ((h - l) / step + 1e-9).floor() as usize + 1)
        .collect();
    let mut idx = vec![0usize; counts.len()];
    let mut out = Vec::new();
    'outer: loop {
        let x = DVector::from_fn(idx.len(), |j, _| lo[j] + step * idx[j] as f64);
        if sys.state_set().contains(&x, 0.0)? {
            out.push(x);
        }
        for j in 0..idx.len() {
            idx[j] += 1;
            if idx[j] < counts[j] {
                continue 'outer;
            }
            idx[j] = 0;
        }
        break;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::benchmarks::{paper_config, paper_system};
    use crate::policy::Scorer;

    fn v(x: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(x)
    }

    fn constant_policy(horizon: usize) -> SequencePolicy {
        let sys = paper_system();
        SequencePolicy::constant(
            &sys,
            vec![Some(SwitchingSequence::constant(0, horizon)), None],
        )
    }

    #[test]
    fn origin_stays_put() {
        let sys = paper_system();
        let cfg = paper_config(4);
        let pol = constant_policy(4);
        let (u, state, info) = control_step(&pol, &sys, &cfg, None, &v(&[0.0, 0.0])).unwrap();
        assert!(u.amax() < 1e-9);
        assert!(!info.fallback);
        assert_eq!(state.step, 1);
        assert!(sys.step(&v(&[0.0, 0.0]), &u).unwrap().amax() < 1e-9);
        let trace = simulate(&pol, &sys, &cfg, &v(&[0.0, 0.0]), 0.01, 50).unwrap();
        assert_eq!(trace.termination, Termination::Converged);
        assert_eq!(trace.states.len(), 1);
    }

    #[test]
    fn infeasible_cell_rejects_initial_state() {
        let sys = paper_system();
        let cfg = paper_config(4);
        let pol = constant_policy(4);
        let err = control_step(&pol, &sys, &cfg, None, &v(&[3.0, 0.0])).unwrap_err();
        assert!(matches!(err, Error::InitialStateInfeasible));
    }

    #[test]
    fn zero_step_cap() {
        let sys = paper_system();
        let cfg = paper_config(4);
        let trace = simulate(&constant_policy(4), &sys, &cfg, &v(&[0.5, 0.2]), 0.01, 0).unwrap();
        assert_eq!(trace.states.len(), 1);
        assert_eq!(trace.termination, Termination::Cap);
    }

    #[test]
    fn fallback_shifts_previous_sequence() {
        let sys = paper_system();
        let cfg = paper_config(12);
        // Region 1 is labeled only for x1 < 0.3; everything else is "infeasible".
        let seq = SwitchingSequence::constant(0, 12);
        let mut pol = constant_policy(12);
        pol.regions[0].scorers = vec![
            Scorer {
                w: v(&[-1.0, 0.0]),
                b: 0.3,
                label: Some(seq.clone()),
            },
            Scorer {
                w: v(&[0.0, 0.0]),
                b: 0.0,
                label: None,
            },
        ];
        let x0 = v(&[0.25, 2.0]);
        let (u, state, info) = control_step(&pol, &sys, &cfg, None, &x0).unwrap();
        assert!(!info.fallback);
        let x1 = sys.step(&x0, &u).unwrap();
        assert_eq!(pol.predict(&sys, &x1).unwrap(), None);
        let (_, next, info) = control_step(&pol, &sys, &cfg, Some(&state), &x1).unwrap();
        assert!(info.fallback);
        assert_eq!(
            next.sequence.as_slice()[..12],
            state.sequence.as_slice()[1..]
        );
        let trace = simulate(&pol, &sys, &cfg, &x0, 0.01, 200).unwrap();
        assert_eq!(trace.termination, Termination::Converged);
        assert!(trace.fallback_count() > 0);
    }

    #[test]
    fn closed_loop_runs_match_dynamics() {
        let sys = paper_system();
        let cfg = paper_config(6);
        let pol = constant_policy(6);
        let x0 = v(&[0.6, -0.5]);
        let trace = simulate(&pol, &sys, &cfg, &x0, 0.01, 200).unwrap();
        assert_eq!(trace.termination, Termination::Converged);
        for k in 0..trace.steps() {
            let next = sys.step(&trace.states[k], &trace.inputs[k]).unwrap();
            assert!((next - &trace.states[k + 1]).amax() < 1e-7);
        }
        let hybrid = simulate_hybrid(&sys, &cfg, &x0, 0.01, 200).unwrap();
        assert_eq!(hybrid.termination, Termination::Converged);
    }

    #[test]
    fn suboptimality_convention() {
        assert_eq!(suboptimality(0.0, 0.0), 0.0);
        assert!((suboptimality(1.1, 1.0) - 10.0).abs() < 1e-9);
        let s = Summary::of(&[3.0, 1.0, 2.0, 0.0]);
        assert_eq!((s.min, s.max, s.median, s.mean), (0.0, 3.0, 1.5, 1.5));
    }

    #[test]
    fn ground_truth_policy_is_optimal_in_closed_loop() {
        use crate::benchmarks::{toy_config, toy_system};
        let sys = toy_system();
        let cfg = toy_config(2);
        let pol = crate::trainer::tests::toy_truth(2);
        let initial: Vec<DVector<f64>> = (0..=20).map(|k| v(&[-0.9 + 0.09 * k as f64])).collect();
        let report = evaluate_closed_loop(&pol, &sys, &cfg, &initial, 0.01, 100).unwrap();
        assert_eq!(report.recursive_feasibility_breaks, 0);
        assert!(report.delta.max.abs() < 1e-6, "{:?}", report.delta);
    }

    #[test]
    fn grid_and_labeled_samples() {
        use rand::SeedableRng;
        let sys = crate::benchmarks::toy_system();
        let grid = state_grid(&sys, 0.5).unwrap();
        let xs: Vec<f64> = grid.iter().map(|x| x[0]).collect();
        assert_eq!(xs, vec![-1.0, -0.5, 0.0, 0.5, 1.0]);
        assert!(state_grid(&sys, 0.0).is_err());

        let pol =
            SequencePolicy::constant(&sys, vec![Some(SwitchingSequence::constant(0, 2)), None]);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let pts = sample_labeled_states(&pol, &sys, &mut rng, 50).unwrap();
        assert!(pts.iter().all(|x| x[0] <= 0.0));
        let none = SequencePolicy::constant(&sys, vec![None, None]);
        assert!(sample_labeled_states(&none, &sys, &mut rng, 5).is_err());
    }
}
