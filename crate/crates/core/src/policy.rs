//! Switching-sequence policies: one max-affine classifier per PWA region.
//!
//! Each region owns a list of affine scorers `w·x + b`, each tagged with a
//! label (a switching sequence, or `None` for "infeasible"). A state is
//! classified by the highest-scoring scorer of its region, so the decision
//! cells are polytopes.

use std::collections::BTreeMap;
use std::path::Path;

use argmin::core::{CostFunction, Executor, Gradient, State};
use argmin::solver::linesearch::MoreThuenteLineSearch;
use argmin::solver::quasinewton::LBFGS;
use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{ConvexPartition, Halfspace, Polytope, TOL_GEOM};
use crate::mpc::SwitchingSequence;
use crate::pwa::PwaSystem;

pub const POLICY_VERSION: u32 = 1;

/// A switching sequence, or `None` for states the policy declares infeasible.
pub type Label = Option<SwitchingSequence>;

#[derive(Clone, Debug, PartialEq)]
pub struct Scorer {
    pub w: DVector<f64>,
    pub b: f64,
    pub label: Label,
}

impl Scorer {
    pub fn score(&self, x: &DVector<f64>) -> f64 {
        self.w.dot(x) + self.b
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RegionClassifier {
    pub region_index: usize,
    pub scorers: Vec<Scorer>,
}

impl RegionClassifier {
    /// A classifier with a single scorer assigning `label` everywhere.
    pub fn constant(region_index: usize, n: usize, label: Label) -> Self {
        Self {
            region_index,
            scorers: vec![Scorer {
                w: DVector::zeros(n),
                b: 0.0,
                label,
            }],
        }
    }

    /// Ordinal of the highest-scoring scorer; ties go to the lowest ordinal.
    pub fn winner(&self, x: &DVector<f64>) -> usize {
        let mut best = 0;
        let mut best_score = self.scorers[0].score(x);
        for (s, scorer) in self.scorers.iter().enumerate().skip(1) {
            let v = scorer.score(x);
            if v > best_score {
                best = s;
                best_score = v;
            }
        }
        best
    }

    pub fn classify(&self, x: &DVector<f64>) -> &Label {
        &self.scorers[self.winner(x)].label
    }

    /// Fraction of `points` whose classified label matches their own.
    pub fn accuracy(&self, points: &[(DVector<f64>, Label)]) -> f64 {
        if points.is_empty() {
            return 1.0;
        }
        let hits = points.iter().filter(|(x, l)| self.classify(x) == l).count();
        hits as f64 / points.len() as f64
    }

    /// Decision cell of scorer `s` inside `domain`.
    ///
    /// Returns `None` when the scorer can never win (an identical scorer
    /// with a lower ordinal, or one that dominates it everywhere by a constant).
    pub fn cell(&self, s: usize, domain: &Polytope) -> Result<Option<Polytope>> {
        let me = &self.scorers[s];
        let mut hs = Vec::new();
        for (t, other) in self.scorers.iter().enumerate() {
            if t == s {
                continue;
            }
            // (w_t − w_s)·x ≤ b_s − b_t, strict where t would win the tie.
            let normal = &other.w - &me.w;
            let offset = me.b - other.b;
            if normal.amax() <= f64::EPSILON * (1.0 + me.w.amax()) {
                if offset < 0.0 || (offset == 0.0 && t < s) {
                    return Ok(None);
                }
                continue;
            }
            hs.push(Halfspace::with_strictness(normal, offset, t < s)?);
        }
        let mut cell = domain.clone();
        for h in hs {
            cell = cell.with_halfspace(h)?;
        }
        Ok(Some(cell))
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PolicyMetadata {
    pub iterations: usize,
    pub data_count: usize,
    pub certified: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub horizon: Option<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SequencePolicy {
    pub regions: Vec<RegionClassifier>,
    pub metadata: PolicyMetadata,
}

/// One decision cell of a policy.
#[derive(Clone, Debug)]
pub struct Cell {
    pub region: usize,
    pub scorer: usize,
    pub polytope: Polytope,
    pub label: Label,
    /// False for cells with empty interior (they only live on boundaries).
    pub full_dimensional: bool,
}

impl SequencePolicy {
    pub fn new(regions: Vec<RegionClassifier>) -> Self {
        Self {
            regions,
            metadata: PolicyMetadata::default(),
        }
    }

    /// The same label everywhere in each region.
    pub fn constant(sys: &PwaSystem, labels: Vec<Label>) -> Self {
        let regions = labels
            .into_iter()
            .enumerate()
            .map(|(i, l)| RegionClassifier::constant(i, sys.n(), l))
            .collect();
        Self::new(regions)
    }

    pub fn predict(&self, sys: &PwaSystem, x: &DVector<f64>) -> Result<Label> {
        if !sys.state_set().contains(x, TOL_GEOM)? {
            return Err(Error::OutsideDomain(x.iter().copied().collect()));
        }
        let i = sys.region_of(x)?;
        Ok(self.regions[i].classify(x).clone())
    }

    /// Every nonempty decision cell, region by region in scorer order.
    pub fn cells(&self, sys: &PwaSystem) -> Result<Vec<Cell>> {
        let mut out = Vec::new();
        for (i, rc) in self.regions.iter().enumerate() {
            let domain = sys.domain(i);
            for s in 0..rc.scorers.len() {
                let Some(cell) = rc.cell(s, domain)? else {
                    continue;
                };
                if cell.is_empty()? {
                    continue;
                }
                let full_dimensional = cell.has_interior(TOL_GEOM)?;
                out.push(Cell {
                    region: i,
                    scorer: s,
                    polytope: cell,
                    label: rc.scorers[s].label.clone(),
                    full_dimensional,
                });
            }
        }
        Ok(out)
    }

    /// Full-dimensional cells as a labeled partition of `X`.
    pub fn partition(&self, sys: &PwaSystem) -> Result<ConvexPartition<Label>> {
        let (cells, labels) = self
            .cells(sys)?
            .into_iter()
            .filter(|c| c.full_dimensional)
            .map(|c| (c.polytope, c.label))
            .unzip();
        Ok(ConvexPartition::new(sys.state_set().clone(), cells, labels))
    }

    pub fn num_scorers(&self) -> usize {
        self.regions.iter().map(|r| r.scorers.len()).sum()
    }

    pub fn to_json(&self) -> PolicyFile {
        PolicyFile {
            version: POLICY_VERSION,
            regions: self
                .regions
                .iter()
                .map(|r| RegionFile {
                    index: r.region_index + 1,
                    scorers: r
                        .scorers
                        .iter()
                        .map(|s| ScorerFile {
                            w: s.w.iter().copied().collect(),
                            b: s.b,
                            label: s.label.clone(),
                        })
                        .collect(),
                })
                .collect(),
            metadata: self.metadata.clone(),
        }
    }

    pub fn from_json(file: PolicyFile) -> Result<Self> {
        if file.version != POLICY_VERSION {
            return Err(Error::UnsupportedVersion(file.version.to_string()));
        }
        let mut regions = Vec::with_capacity(file.regions.len());
        for (pos, r) in file.regions.into_iter().enumerate() {
            if r.index != pos + 1 {
                return Err(Error::Format(format!(
                    "region {} listed at position {}",
                    r.index,
                    pos + 1
                )));
            }
            if r.scorers.is_empty() {
                return Err(Error::Format(format!("region {} has no scorers", r.index)));
            }
            let n = r.scorers[0].w.len();
            let mut scorers = Vec::with_capacity(r.scorers.len());
            for s in r.scorers {
                if s.w.len() != n {
                    return Err(Error::Format("scorer weights differ in length".into()));
                }
                if let Some(seq) = &s.label {
                    if seq.is_empty() || seq.first() != pos {
                        return Err(Error::Format(format!(
                            "label {seq} does not start in region {}",
                            pos + 1
                        )));
                    }
                }
                scorers.push(Scorer {
                    w: DVector::from_vec(s.w),
                    b: s.b,
                    label: s.label,
                });
            }
            regions.push(RegionClassifier {
                region_index: pos,
                scorers,
            });
        }
        Ok(Self {
            regions,
            metadata: file.metadata,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let raw: serde_json::Value = serde_json::from_str(&text)?;
        match raw.get("version") {
            Some(serde_json::Value::Number(v)) if v.as_u64() == Some(POLICY_VERSION as u64) => {}
            Some(v) => return Err(Error::UnsupportedVersion(v.to_string())),
            None => return Err(Error::Format("missing version".into())),
        }
        Self::from_json(serde_json::from_value(raw)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(&self.to_json())?;
        std::fs::write(path, text + "\n")?;
        Ok(())
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PolicyFile {
    pub version: u32,
    pub regions: Vec<RegionFile>,
    pub metadata: PolicyMetadata,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RegionFile {
    pub index: usize,
    pub scorers: Vec<ScorerFile>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ScorerFile {
    pub w: Vec<f64>,
    pub b: f64,
    pub label: Label,
}

#[derive(Clone, Debug)]
pub struct FitOptions {
    /// Labels classified below this accuracy on their own points get another scorer.
    pub accuracy_threshold: f64,
    pub scorer_cap: usize,
    /// L2 weight on the (normalized) scorer slopes.
    pub l2: f64,
    /// Cap on assignment/refit alternations per growth round.
    pub alternation_cap: usize,
    pub lbfgs_iterations: u64,
    /// Box `(lo, hi)` that features are scaled to `[-1, 1]` from; defaults to the data's box.
    pub normalization: Option<(DVector<f64>, DVector<f64>)>,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            accuracy_threshold: 0.9,
            scorer_cap: 8,
            l2: 1e-4,
            alternation_cap: 20,
            lbfgs_iterations: 300,
            normalization: None,
        }
    }
}

/// Fits a max-affine classifier to labeled points of one region.
///
/// `weights` defaults to all ones.
pub fn fit(
    points: &[(DVector<f64>, Label)],
    weights: Option<&[f64]>,
    region_index: usize,
    opts: &FitOptions,
) -> Result<RegionClassifier> {
    for (_, l) in points {
        if let Some(seq) = l {
            if seq.is_empty() || seq.first() != region_index {
                return Err(Error::Invalid(format!(
                    "label {seq} does not start in region {}",
                    region_index + 1
                )));
            }
        }
    }
    let weights: Vec<f64> = match weights {
        Some(w) if w.len() == points.len() => w.to_vec(),
        Some(w) => {
            return Err(Error::DimensionMismatch {
                expected: points.len(),
                found: w.len(),
            })
        }
        None => vec![1.0; points.len()],
    };

    let mut label_ids: BTreeMap<Label, usize> = BTreeMap::new();
    for (_, l) in points {
        label_ids.entry(l.clone()).or_insert(0);
    }
    let labels: Vec<Label> = label_ids.keys().cloned().collect();
    for (k, l) in labels.iter().enumerate() {
        label_ids.insert(l.clone(), k);
    }
    if labels.len() <= 1 {
        let n = points.first().map_or(0, |(x, _)| x.len());
        let n = opts.normalization.as_ref().map_or(n, |(lo, _)| lo.len());
        let label = labels.into_iter().next().flatten();
        return Ok(RegionClassifier::constant(region_index, n, label));
    }

    let n = points[0].0.len();
    let mut distinct: Vec<&DVector<f64>> = Vec::new();
    for (x, _) in points {
        if x.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                found: x.len(),
            });
        }
        if !distinct.iter().any(|d| (*d - x).amax() <= 1e-12) {
            distinct.push(x);
        }
    }
    if distinct.len() < n + 1 {
        return Err(Error::DegenerateData(format!(
            "{} distinct points in dimension {n}",
            distinct.len()
        )));
    }

    let (lo, hi) = match &opts.normalization {
        Some((lo, hi)) => (lo.clone(), hi.clone()),
        None => {
            let mut lo = points[0].0.clone();
            let mut hi = points[0].0.clone();
            for (x, _) in points {
                lo = lo.inf(x);
                hi = hi.sup(x);
            }
            (lo, hi)
        }
    };
    let center = (&lo + &hi) * 0.5;
    let scale = ((&hi - &lo) * 0.5).map(|s| if s > 1e-9 { s } else { 1.0 });
    let z: Vec<DVector<f64>> = points
        .iter()
        .map(|(x, _)| (x - &center).component_div(&scale))
        .collect();
    let y: Vec<usize> = points.iter().map(|(_, l)| label_ids[l]).collect();

    let mut model = LatentModel::new(&z, &y, &weights, labels.len(), opts.l2);
    for k in 0..labels.len() {
        model.recluster(k, 1);
    }
    let mut theta = model.train_and_settle(opts)?;
    let mut acc = model.label_accuracy(&theta);
    let sizes: Vec<usize> = (0..labels.len())
        .map(|k| y.iter().filter(|&&l| l == k).count())
        .collect();
    // A label stops growing once an extra scorer fails to raise its accuracy;
    // a round that does not raise overall accuracy is undone.
    let mut frozen = vec![false; labels.len()];
    loop {
        let grow: Vec<usize> = (0..labels.len())
            .filter(|&k| {
                acc.per_label[k] < opts.accuracy_threshold
                    && !frozen[k]
                    && model.counts[k] < opts.scorer_cap.min(sizes[k])
            })
            .collect();
        if grow.is_empty() {
            break;
        }
        let saved = (model.counts.clone(), model.latent.clone());
        for &k in &grow {
            let c = model.counts[k] + 1;
            model.recluster(k, c);
        }
        let next_theta = model.train_and_settle(opts)?;
        let next_acc = model.label_accuracy(&next_theta);
        for &k in &grow {
            if next_acc.per_label[k] <= acc.per_label[k] {
                frozen[k] = true;
            }
        }
        if next_acc.overall > acc.overall {
            theta = next_theta;
            acc = next_acc;
        } else {
            (model.counts, model.latent) = saved;
            for &k in &grow {
                frozen[k] = true;
            }
        }
    }

    // Scorers that own no points are dropped; the rest are mapped back to raw coordinates.
    let owners = model.owner_counts();
    let mut scorers = Vec::new();
    for (s, &(k, _)) in model.slots().iter().enumerate() {
        if owners[s] == 0 {
            continue;
        }
        let row = &theta[s * (n + 1)..(s + 1) * (n + 1)];
        let wz = DVector::from_column_slice(&row[..n]);
        let w = wz.component_div(&scale);
        let b = row[n] - w.dot(&center);
        scorers.push(Scorer {
            w,
            b,
            label: labels[k].clone(),
        });
    }
    Ok(RegionClassifier {
        region_index,
        scorers,
    })
}

/// Points with labels, each assigned to one of its label's latent scorers.
struct LatentModel<'a> {
    z: &'a [DVector<f64>],
    y: &'a [usize],
    weights: &'a [f64],
    l2: f64,
    /// Latent scorers per label.
    counts: Vec<usize>,
    /// Latent index of each point within its label.
    latent: Vec<usize>,
}

impl<'a> LatentModel<'a> {
    fn new(
        z: &'a [DVector<f64>],
        y: &'a [usize],
        weights: &'a [f64],
        labels: usize,
        l2: f64,
    ) -> Self {
        Self {
            z,
            y,
            weights,
            l2,
            counts: vec![1; labels],
            latent: vec![0; z.len()],
        }
    }

    fn dim(&self) -> usize {
        self.z[0].len()
    }

    /// `(label, latent)` for every scorer slot, in ordinal order.
    fn slots(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for (k, &c) in self.counts.iter().enumerate() {
            for j in 0..c {
                out.push((k, j));
            }
        }
        out
    }

    fn slot_offsets(&self) -> Vec<usize> {
        let mut off = Vec::with_capacity(self.counts.len());
        let mut acc = 0;
        for &c in &self.counts {
            off.push(acc);
            acc += c;
        }
        off
    }

    fn targets(&self) -> Vec<usize> {
        let off = self.slot_offsets();
        self.y
            .iter()
            .zip(&self.latent)
            .map(|(&k, &j)| off[k] + j)
            .collect()
    }

    fn owner_counts(&self) -> Vec<usize> {
        let mut out = vec![0; self.counts.iter().sum()];
        for t in self.targets() {
            out[t] += 1;
        }
        out
    }

    fn scores(&self, theta: &[f64], i: usize) -> Vec<f64> {
        let n = self.dim();
        let zi = &self.z[i];
        theta
            .chunks(n + 1)
            .map(|row| {
                row[..n]
                    .iter()
                    .zip(zi.iter())
                    .map(|(a, b)| a * b)
                    .sum::<f64>()
                    + row[n]
            })
            .collect()
    }

    /// k-means on the points of label `k` with `c` clusters, farthest-point seeded.
    fn recluster(&mut self, k: usize, c: usize) {
        self.counts[k] = c;
        let idx: Vec<usize> = (0..self.z.len()).filter(|&i| self.y[i] == k).collect();
        if c == 1 || idx.len() <= 1 {
            for &i in &idx {
                self.latent[i] = 0;
            }
            return;
        }
        let mut centers: Vec<DVector<f64>> = vec![self.z[idx[0]].clone()];
        while centers.len() < c {
            let far = idx
                .iter()
                .copied()
                .max_by(|&a, &b| {
                    let da = nearest(&centers, &self.z[a]).1;
                    let db = nearest(&centers, &self.z[b]).1;
                    da.total_cmp(&db).then(b.cmp(&a))
                })
                .expect("label has points");
            centers.push(self.z[far].clone());
        }
        for _ in 0..100 {
            let mut changed = false;
            for &i in &idx {
                let j = nearest(&centers, &self.z[i]).0;
                if self.latent[i] != j {
                    self.latent[i] = j;
                    changed = true;
                }
            }
            for (j, center) in centers.iter_mut().enumerate() {
                let mut sum = DVector::zeros(center.len());
                let mut mass = 0.0;
                for &i in &idx {
                    if self.latent[i] == j {
                        sum += &self.z[i] * self.weights[i];
                        mass += self.weights[i];
                    }
                }
                if mass > 0.0 {
                    *center = sum / mass;
                }
            }
            if !changed {
                break;
            }
        }
    }

    /// Alternates multinomial fits and reassignment until assignments settle.
    fn train_and_settle(&mut self, opts: &FitOptions) -> Result<Vec<f64>> {
        let slots: usize = self.counts.iter().sum();
        let mut theta = vec![0.0; slots * (self.dim() + 1)];
        for _ in 0..opts.alternation_cap.max(1) {
            theta = self.train(theta, opts.lbfgs_iterations)?;
            if !self.reassign(&theta) {
                break;
            }
        }
        Ok(theta)
    }

    fn train(&self, init: Vec<f64>, iters: u64) -> Result<Vec<f64>> {
        let problem = Multinomial {
            z: self.z,
            targets: self.targets(),
            weights: self.weights,
            classes: self.counts.iter().sum(),
            l2: self.l2,
        };
        let start_cost = problem.cost(&init).map_err(argmin_error)?;
        let solver = LBFGS::new(MoreThuenteLineSearch::new(), 7)
            .with_tolerance_grad(1e-7)
            .map_err(argmin_error)?
            .with_tolerance_cost(1e-12)
            .map_err(argmin_error)?;
        let res = Executor::new(problem, solver)
            .configure(|s| s.param(init.clone()).max_iters(iters))
            .run()
            .map_err(argmin_error)?;
        let state = res.state();
        match state.get_best_param() {
            Some(p) if state.get_best_cost() <= start_cost => Ok(p.clone()),
            _ => Ok(init),
        }
    }

    /// Moves each point to its label's best-scoring latent scorer.
    fn reassign(&mut self, theta: &[f64]) -> bool {
        let off = self.slot_offsets();
        let mut changed = false;
        for i in 0..self.z.len() {
            let k = self.y[i];
            let sc = self.scores(theta, i);
            let mut best = 0;
            for j in 1..self.counts[k] {
                if sc[off[k] + j] > sc[off[k] + best] {
                    best = j;
                }
            }
            if best != self.latent[i] {
                self.latent[i] = best;
                changed = true;
            }
        }
        changed
    }

    /// Fraction of points won by one of their label's scorers, per label and overall.
    fn label_accuracy(&self, theta: &[f64]) -> Accuracy {
        let slots = self.slots();
        let mut hit = vec![0usize; self.counts.len()];
        let mut total = vec![0usize; self.counts.len()];
        for i in 0..self.z.len() {
            let sc = self.scores(theta, i);
            let mut best = 0;
            for s in 1..sc.len() {
                if sc[s] > sc[best] {
                    best = s;
                }
            }
            total[self.y[i]] += 1;
            if slots[best].0 == self.y[i] {
                hit[self.y[i]] += 1;
            }
        }
        Accuracy {
            per_label: hit
                .iter()
                .zip(&total)
                .map(|(&h, &t)| if t == 0 { 1.0 } else { h as f64 / t as f64 })
                .collect(),
            overall: hit.iter().sum::<usize>() as f64 / self.z.len().max(1) as f64,
        }
    }
}

struct Accuracy {
    per_label: Vec<f64>,
    overall: f64,
}

fn nearest(centers: &[DVector<f64>], x: &DVector<f64>) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (j, c) in centers.iter().enumerate() {
        let d = (c - x).norm_squared();
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}

fn argmin_error(e: argmin::core::Error) -> Error {
    Error::NumericalFailure(format!("classifier fit: {e}"))
}

/// Weighted multinomial logistic loss with L2 on the slopes.
struct Multinomial<'a> {
    z: &'a [DVector<f64>],
    targets: Vec<usize>,
    weights: &'a [f64],
    classes: usize,
    l2: f64,
}

impl Multinomial<'_> {
    fn eval(&self, theta: &[f64], grad: Option<&mut Vec<f64>>) -> f64 {
        let n = self.z[0].len();
        let stride = n + 1;
        let total: f64 = self.weights.iter().sum();
        let mut g = grad;
        if let Some(g) = g.as_deref_mut() {
            g.clear();
            g.resize(theta.len(), 0.0);
        }
        let mut loss = 0.0;
        let mut s = vec![0.0; self.classes];
        for (i, zi) in self.z.iter().enumerate() {
            let mut top = f64::NEG_INFINITY;
            for (c, sc) in s.iter_mut().enumerate() {
                let row = &theta[c * stride..(c + 1) * stride];
                *sc = row[..n]
                    .iter()
                    .zip(zi.iter())
                    .map(|(a, b)| a * b)
                    .sum::<f64>()
                    + row[n];
                top = top.max(*sc);
            }
            let mut denom = 0.0;
            for sc in s.iter_mut() {
                *sc = (*sc - top).exp();
                denom += *sc;
            }
            let wi = self.weights[i] / total;
            let t = self.targets[i];
            loss += wi * (denom.ln() - (s[t].ln()));
            if let Some(g) = g.as_deref_mut() {
                for (c, sc) in s.iter().enumerate() {
                    let coef = wi * (sc / denom - if c == t { 1.0 } else { 0.0 });
                    let row = &mut g[c * stride..(c + 1) * stride];
                    for j in 0..n {
                        row[j] += coef * zi[j];
                    }
                    row[n] += coef;
                }
            }
        }
        for c in 0..self.classes {
            for j in 0..n {
                let v = theta[c * stride + j];
                loss += 0.5 * self.l2 * v * v;
                if let Some(g) = g.as_deref_mut() {
                    g[c * stride + j] += self.l2 * v;
                }
            }
        }
        loss
    }
}

impl CostFunction for Multinomial<'_> {
    type Param = Vec<f64>;
    type Output = f64;

    fn cost(&self, theta: &Self::Param) -> std::result::Result<f64, argmin::core::Error> {
        Ok(self.eval(theta, None))
    }
}

impl Gradient for Multinomial<'_> {
    type Param = Vec<f64>;
    type Gradient = Vec<f64>;

    fn gradient(&self, theta: &Self::Param) -> std::result::Result<Vec<f64>, argmin::core::Error> {
        let mut g = Vec::new();
        self.eval(theta, Some(&mut g));
        Ok(g)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::benchmarks::paper_system;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn v(x: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(x)
    }

    fn seq(r: usize, tail: &[usize]) -> Label {
        let mut s = vec![r];
        s.extend_from_slice(tail);
        Some(SwitchingSequence::new(s))
    }

    fn split_policy(sys: &PwaSystem) -> (SequencePolicy, Label, Label) {
        let sa = seq(0, &[0, 0]);
        let sb = seq(0, &[0, 1]);
        let mut pol = SequencePolicy::constant(sys, vec![None, seq(1, &[0, 0])]);
        pol.regions[0].scorers = vec![
            Scorer {
                w: v(&[1.0, 0.0]),
                b: 0.0,
                label: sa.clone(),
            },
            Scorer {
                w: v(&[-1.0, 0.0]),
                b: 0.0,
                label: sb.clone(),
            },
        ];
        (pol, sa, sb)
    }

    #[test]
    fn constant_policy_predicts_region_label() {
        let sys = paper_system();
        let l1 = Some(SwitchingSequence::constant(0, 3));
        let l2 = Some(SwitchingSequence::constant(1, 3));
        let pol = SequencePolicy::constant(&sys, vec![l1.clone(), l2.clone()]);
        assert_eq!(pol.predict(&sys, &v(&[0.0, 0.0])).unwrap(), l1);
        assert_eq!(pol.predict(&sys, &v(&[1.0, 0.0])).unwrap(), l1);
        assert_eq!(pol.predict(&sys, &v(&[1.5, -2.0])).unwrap(), l2);
        assert!(matches!(
            pol.predict(&sys, &v(&[9.0, 0.0])),
            Err(Error::OutsideDomain(_))
        ));
        let cells = pol.cells(&sys).unwrap();
        assert_eq!(cells.len(), 2);
        for c in &cells {
            let d = sys.domain(c.region);
            assert!(c.polytope.is_subset_of(d).unwrap() && d.is_subset_of(&c.polytope).unwrap());
        }
    }

    #[test]
    fn linear_split_and_its_cells() {
        let sys = paper_system();
        let (pol, sa, sb) = split_policy(&sys);
        assert_eq!(pol.predict(&sys, &v(&[0.5, 1.0])).unwrap(), sa);
        assert_eq!(pol.predict(&sys, &v(&[0.0, 1.0])).unwrap(), sa);
        assert_eq!(pol.predict(&sys, &v(&[-0.5, 1.0])).unwrap(), sb);
        let cells = pol.cells(&sys).unwrap();
        assert_eq!(cells.len(), 3);
        let part = pol.partition(&sys).unwrap();
        assert!(part.overlapping_pairs().unwrap().is_empty());
        assert!(part.coverage_gap_2d().unwrap() < 1e-6);
        let right = &cells[0].polytope;
        assert!(right.contains(&v(&[0.5, 0.0]), 0.0).unwrap());
        assert!(!right.contains(&v(&[-0.5, 0.0]), 0.0).unwrap());
    }

    #[test]
    fn identical_scorers_keep_one_cell() {
        let sys = paper_system();
        let mut pol = SequencePolicy::constant(&sys, vec![seq(0, &[0]), None]);
        let dup = pol.regions[0].scorers[0].clone();
        pol.regions[0].scorers.push(Scorer { label: None, ..dup });
        assert_eq!(pol.cells(&sys).unwrap().len(), 2);
        assert_eq!(pol.predict(&sys, &v(&[0.0, 0.0])).unwrap(), seq(0, &[0]));
    }

    #[test]
    fn separable_data_fits_exactly() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (a, b) = (seq(0, &[0]), seq(0, &[1]));
        let pts: Vec<_> = (0..80)
            .map(|_| {
                let x = v(&[rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)]);
                let l = if x[0] + 0.3 * x[1] > 0.1 {
                    a.clone()
                } else {
                    b.clone()
                };
                (x, l)
            })
            .collect();
        let rc = fit(&pts, None, 0, &FitOptions::default()).unwrap();
        assert_eq!(rc.scorers.len(), 2);
        assert_eq!(rc.accuracy(&pts), 1.0);
    }

    #[test]
    fn single_label_gives_single_scorer() {
        let pts = vec![(v(&[0.0, 0.0]), seq(1, &[1]))];
        let rc = fit(&pts, None, 1, &FitOptions::default()).unwrap();
        assert_eq!(rc.scorers.len(), 1);
        assert_eq!(rc.accuracy(&pts), 1.0);
        let empty = fit(&[], None, 1, &FitOptions::default()).unwrap();
        assert_eq!(empty.scorers[0].label, None);
    }

    #[test]
    fn degenerate_and_mislabeled_data_rejected() {
        let pts = vec![(v(&[0.0, 0.0]), seq(0, &[0])), (v(&[1.0, 0.0]), None)];
        assert!(matches!(
            fit(&pts, None, 0, &FitOptions::default()),
            Err(Error::DegenerateData(_))
        ));
        let pts = vec![(v(&[0.0, 0.0]), seq(1, &[0]))];
        assert!(fit(&pts, None, 0, &FitOptions::default()).is_err());
    }

    #[test]
    fn xor_labels_grow_latent_scorers() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let (a, b) = (seq(0, &[0]), seq(0, &[1]));
        let pts: Vec<_> = (0..200)
            .map(|_| {
                let x = v(&[rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)]);
                let l = if x[0] * x[1] > 0.0 {
                    a.clone()
                } else {
                    b.clone()
                };
                (x, l)
            })
            .collect();
        let rc = fit(&pts, None, 0, &FitOptions::default()).unwrap();
        let count_a = rc.scorers.iter().filter(|s| s.label == a).count();
        assert!(count_a >= 2, "{count_a} scorers for the XOR label");
        assert!(rc.accuracy(&pts) >= 0.95, "accuracy {}", rc.accuracy(&pts));
    }

    #[test]
    fn weights_shift_the_boundary() {
        let (a, b) = (seq(0, &[0]), seq(0, &[1]));
        let pts = vec![
            (v(&[-1.0, 0.0]), a.clone()),
            (v(&[-0.5, 1.0]), a.clone()),
            (v(&[0.0, 0.0]), b.clone()),
            (v(&[0.0, 0.0]), a.clone()),
            (v(&[1.0, 0.5]), b.clone()),
        ];
        let heavy = [1.0, 1.0, 50.0, 1.0, 1.0];
        let rc = fit(&pts, Some(&heavy), 0, &FitOptions::default()).unwrap();
        assert_eq!(rc.classify(&v(&[0.0, 0.0])), &b);
    }

    #[test]
    fn json_round_trip_and_version_check() {
        let sys = paper_system();
        let (mut pol, _, _) = split_policy(&sys);
        pol.metadata = PolicyMetadata {
            iterations: 4,
            data_count: 17,
            certified: true,
            horizon: Some(2),
        };
        let dir = std::env::temp_dir().join(format!("pwa-policy-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("p.json");
        pol.save(&path).unwrap();
        let back = SequencePolicy::load(&path).unwrap();
        assert_eq!(back, pol);

        let text = std::fs::read_to_string(&path).unwrap();
        std::fs::write(&path, &text[..text.len() / 2]).unwrap();
        assert!(SequencePolicy::load(&path).is_err());

        std::fs::write(&path, text.replace("\"version\": 1", "\"version\": 7")).unwrap();
        let err = SequencePolicy::load(&path).unwrap_err();
        assert!(err.to_string().contains('7'), "{err}");
        std::fs::remove_dir_all(&dir).ok();
    }
}
