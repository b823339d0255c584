//! Certified training of a [`SequencePolicy`].
//!
//! Each round fits the classifier, enumerates the vertices of every decision
//! cell and checks them: a labeled vertex must be feasible for its sequence,
//! and a vertex labeled infeasible must be infeasible for the tightened hybrid
//! problem. Failing vertices are labeled by the hybrid solver and added to
//! the training set. Because fixed-sequence feasible sets are convex, a clean
//! sweep certifies every labeled cell.

use std::path::PathBuf;

use log::{debug, info};
use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::TOL_VERTEX;
use crate::mpc::{feasible_fixed, hybrid_feasible, solve_hybrid_bnb_with, BnbOptions, MpcConfig};
use crate::policy::{fit, FitOptions, Label, PolicyMetadata, RegionClassifier, SequencePolicy};
use crate::pwa::PwaSystem;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Initial,
    /// Added at a violating vertex in this training iteration.
    Vertex(usize),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingSample {
    pub x: Vec<f64>,
    pub region: usize,
    pub label: Label,
    /// Grows by one each time the same point is found violating again.
    pub weight: f64,
    pub provenance: Provenance,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Insertion {
    Added,
    Boosted,
    Relabeled,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct TrainingSet {
    samples: Vec<TrainingSample>,
    /// Hybrid solves spent producing the labels.
    pub milp_solves: usize,
}

impl TrainingSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn samples(&self) -> &[TrainingSample] {
        &self.samples
    }

    /// Adds a sample, merging with an existing one within `TOL_VERTEX`.
    pub fn insert(
        &mut self,
        x: &DVector<f64>,
        region: usize,
        label: Label,
        provenance: Provenance,
    ) -> Insertion {
        let near = self.samples.iter_mut().find(|s| {
            s.region == region
                && s.x.len() == x.len()
                && s.x
                    .iter()
                    .zip(x.iter())
                    .all(|(a, b)| (a - b).abs() <= TOL_VERTEX)
        });
        match near {
            Some(s) if s.label == label => {
                s.weight += 1.0;
                Insertion::Boosted
            }
            Some(s) => {
                s.label = label;
                s.provenance = provenance;
                Insertion::Relabeled
            }
            None => {
                self.samples.push(TrainingSample {
                    x: x.iter().copied().collect(),
                    region,
                    label,
                    weight: 1.0,
                    provenance,
                });
                Insertion::Added
            }
        }
    }

    /// Points, labels and weights of one region.
    pub fn region_data(&self, region: usize) -> (Vec<(DVector<f64>, Label)>, Vec<f64>) {
        self.samples
            .iter()
            .filter(|s| s.region == region)
            .map(|s| {
                (
                    (DVector::from_column_slice(&s.x), s.label.clone()),
                    s.weight,
                )
            })
            .unzip()
    }
}

/// Optimal sequence at `x` with `δ(0) = region` for the untightened problem, or `None`.
pub fn hybrid_label(
    sys: &PwaSystem,
    cfg: &MpcConfig,
    x: &DVector<f64>,
    region: usize,
) -> Result<Label> {
    let opts = BnbOptions {
        first_region: Some(region),
        ..BnbOptions::default()
    };
    let sol = solve_hybrid_bnb_with(sys, &cfg.with_tightening(0.0), x, &opts)?;
    Ok(if sol.is_optimal() { sol.sequence } else { None })
}

/// Uniform samples from each `P_i ∩ X`, labeled by the hybrid solver.
pub fn seed_training_set(
    sys: &PwaSystem,
    cfg: &MpcConfig,
    counts: &[usize],
    seed: u64,
) -> Result<TrainingSet> {
    if counts.len() != sys.num_regions() {
        return Err(Error::DimensionMismatch {
            expected: sys.num_regions(),
            found: counts.len(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut points = Vec::new();
    for (i, &count) in counts.iter().enumerate() {
        for x in sys.domain(i).sample_uniform(&mut rng, count)? {
            points.push((i, x));
        }
    }
    let labels: Vec<Label> = points
        .par_iter()
        .map(|(i, x)| hybrid_label(sys, cfg, x, *i))
        .collect::<Result<_>>()?;
    let mut set = TrainingSet::new();
    set.milp_solves = points.len();
    for ((i, x), label) in points.into_iter().zip(labels) {
        set.insert(&x, i, label, Provenance::Initial);
    }
    Ok(set)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ViolationKind {
    /// The cell's sequence is infeasible at the vertex.
    LabeledInfeasible,
    /// The cell says infeasible but the tightened problem is feasible.
    MissedFeasible,
}

#[derive(Clone, Debug)]
pub struct Violation {
    pub x: DVector<f64>,
    pub region: usize,
    /// Ordinal of the cell's scorer within its region.
    pub scorer: usize,
    pub label: Label,
    pub kind: ViolationKind,
}

/// Checks every vertex of every decision cell. A vertex shared by several
/// failing cells is reported once.
pub fn certify_sweep(
    pol: &SequencePolicy,
    sys: &PwaSystem,
    cfg: &MpcConfig,
) -> Result<Vec<Violation>> {
    let plain = cfg.with_tightening(0.0);
    let mut tasks = Vec::new();
    for cell in pol.cells(sys)? {
        for v in cell.polytope.vertices()? {
            tasks.push((cell.region, cell.scorer, cell.label.clone(), v.clone()));
        }
    }
    let found: Vec<Option<Violation>> = tasks
        .into_par_iter()
        .map(|(region, scorer, label, x)| {
            let kind = match &label {
                Some(seq) => (!feasible_fixed(sys, &plain, &x, seq)?)
                    .then_some(ViolationKind::LabeledInfeasible),
                None => hybrid_feasible(sys, cfg, &x, Some(region))?
                    .then_some(ViolationKind::MissedFeasible),
            };
            Ok(kind.map(|kind| Violation {
                x,
                region,
                scorer,
                label,
                kind,
            }))
        })
        .collect::<Result<_>>()?;
    let mut out: Vec<Violation> = Vec::new();
    for v in found.into_iter().flatten() {
        let dup = out
            .iter()
            .any(|w| w.region == v.region && (&w.x - &v.x).amax() <= TOL_VERTEX);
        if !dup {
            out.push(v);
        }
    }
    Ok(out)
}

#[derive(Clone, Debug)]
pub struct TrainOptions {
    pub iteration_cap: usize,
    pub fit: FitOptions,
    /// Writes `policy_iter_<k>.json` here after every fit.
    pub checkpoint_dir: Option<PathBuf>,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self {
            iteration_cap: 200,
            fit: FitOptions::default(),
            checkpoint_dir: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationLog {
    pub iteration: usize,
    pub cells: usize,
    pub scorers: usize,
    pub violations: usize,
    pub labeled_infeasible: usize,
    pub missed_feasible: usize,
    pub added: usize,
    pub boosted: usize,
    pub relabeled: usize,
    pub data_count: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingReport {
    pub iterations: usize,
    /// Full-dimensional cells of the returned policy.
    pub final_cell_count: usize,
    pub data_count: usize,
    pub milp_solve_count: usize,
    pub certified: bool,
    pub log: Vec<IterationLog>,
}

impl TrainingReport {
    pub fn log_csv(&self) -> String {
        let mut out = String::from(
            "iteration,cells,scorers,violations,labeled_infeasible,missed_feasible,added,boosted,relabeled,data_count\n",
        );
        for r in &self.log {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{}\n",
                r.iteration,
                r.cells,
                r.scorers,
                r.violations,
                r.labeled_infeasible,
                r.missed_feasible,
                r.added,
                r.boosted,
                r.relabeled,
                r.data_count
            ));
        }
        out
    }
}

/// Fits one classifier per region on the current data.
pub fn fit_policy(
    sys: &PwaSystem,
    data: &TrainingSet,
    opts: &FitOptions,
) -> Result<SequencePolicy> {
    let regions: Vec<RegionClassifier> = (0..sys.num_regions())
        .into_par_iter()
        .map(|i| {
            let (points, weights) = data.region_data(i);
            let mut opts = opts.clone();
            if opts.normalization.is_none() {
                if let Ok(Some((lo, hi))) = sys.domain(i).bounding_box() {
                    opts.normalization = Some((DVector::from_vec(lo), DVector::from_vec(hi)));
                }
            }
            match fit(&points, Some(&weights), i, &opts) {
                Err(Error::DegenerateData(msg)) => {
                    debug!("region {}: {msg}; using the heaviest label", i + 1);
                    Ok(RegionClassifier::constant(
                        i,
                        sys.n(),
                        heaviest_label(&points, &weights),
                    ))
                }
                other => other,
            }
        })
        .collect::<Result<_>>()?;
    Ok(SequencePolicy::new(regions))
}

fn heaviest_label(points: &[(DVector<f64>, Label)], weights: &[f64]) -> Label {
    let mut totals: Vec<(Label, f64)> = Vec::new();
    for ((_, l), w) in points.iter().zip(weights) {
        match totals.iter_mut().find(|(m, _)| m == l) {
            Some((_, t)) => *t += w,
            None => totals.push((l.clone(), *w)),
        }
    }
    let mut best: Option<(Label, f64)> = None;
    for (l, t) in totals {
        if best.as_ref().is_none_or(|(_, bt)| t > *bt) {
            best = Some((l, t));
        }
    }
    best.and_then(|(l, _)| l)
}

/// Fit, sweep and relabel until a sweep is clean or the iteration cap is hit.
pub fn train(
    sys: &PwaSystem,
    cfg: &MpcConfig,
    initial: TrainingSet,
    opts: &TrainOptions,
) -> Result<(SequencePolicy, TrainingReport)> {
    let mut data = initial;
    let mut milp = data.milp_solves;
    let mut log = Vec::new();
    let mut iteration = 0;
    loop {
        let mut pol = fit_policy(sys, &data, &opts.fit)?;
        if let Some(dir) = &opts.checkpoint_dir {
            std::fs::create_dir_all(dir)?;
            pol.save(&dir.join(format!("policy_iter_{iteration}.json")))?;
        }
        let cells = pol.cells(sys)?;
        let full = cells.iter().filter(|c| c.full_dimensional).count();
        let violations = certify_sweep(&pol, sys, cfg)?;
        let mut entry = IterationLog {
            iteration,
            cells: full,
            scorers: pol.num_scorers(),
            violations: violations.len(),
            labeled_infeasible: violations
                .iter()
                .filter(|v| v.kind == ViolationKind::LabeledInfeasible)
                .count(),
            missed_feasible: violations
                .iter()
                .filter(|v| v.kind == ViolationKind::MissedFeasible)
                .count(),
            added: 0,
            boosted: 0,
            relabeled: 0,
            data_count: data.len(),
        };
        iteration += 1;
        let certified = violations.is_empty();
        if certified || iteration >= opts.iteration_cap {
            info!(
                "iteration {}: {} cells, {} violations, {} samples",
                entry.iteration, entry.cells, entry.violations, entry.data_count
            );
            log.push(entry);
            pol.metadata = PolicyMetadata {
                iterations: iteration,
                data_count: data.len(),
                certified,
                horizon: Some(cfg.horizon),
            };
            let report = TrainingReport {
                iterations: iteration,
                final_cell_count: full,
                data_count: data.len(),
                milp_solve_count: milp,
                certified,
                log,
            };
            return Ok((pol, report));
        }
        let labels: Vec<Label> = violations
            .par_iter()
            .map(|v| hybrid_label(sys, cfg, &v.x, v.region))
            .collect::<Result<_>>()?;
        milp += violations.len();
        for (v, label) in violations.iter().zip(labels) {
            match data.insert(&v.x, v.region, label, Provenance::Vertex(entry.iteration)) {
                Insertion::Added => entry.added += 1,
                Insertion::Boosted => entry.boosted += 1,
                Insertion::Relabeled => entry.relabeled += 1,
            }
        }
        data.milp_solves = milp;
        entry.data_count = data.len();
        info!(
            "iteration {}: {} cells, {} violations, {} samples",
            entry.iteration, entry.cells, entry.violations, entry.data_count
        );
        log.push(entry);
    }
}
