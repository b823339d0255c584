//! Polytopes in halfspace representation.
//!
//! Every set in the controller (PWA regions, state and input constraints,
//! terminal sets, classifier cells) is a [`Polytope`]. Strict halfspaces are
//! kept for bookkeeping but every geometric routine works with the closure.

use std::sync::OnceLock;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lp::{LinearProgram, LpResult};

/// Membership tolerance for geometric predicates.
pub const TOL_GEOM: f64 = 1e-7;
/// Two vertices closer than this in the ∞-norm are the same vertex.
pub const TOL_VERTEX: f64 = 1e-6;
/// Largest dimension accepted by vertex enumeration.
pub const MAX_VERTEX_DIM: usize = 4;

/// `normal·x ≤ offset`, or `< offset` when `strict`.
#[derive(Clone, Debug, PartialEq)]
pub struct Halfspace {
    pub normal: DVector<f64>,
    pub offset: f64,
    pub strict: bool,
}

impl Halfspace {
    pub fn new(normal: DVector<f64>, offset: f64) -> Result<Self> {
        Self::with_strictness(normal, offset, false)
    }

    pub fn strict(normal: DVector<f64>, offset: f64) -> Result<Self> {
        Self::with_strictness(normal, offset, true)
    }

    pub fn with_strictness(normal: DVector<f64>, offset: f64, strict: bool) -> Result<Self> {
        if normal.iter().all(|v| *v == 0.0) {
            return Err(Error::Invalid("halfspace normal is the zero vector".into()));
        }
        if normal.iter().any(|v| !v.is_finite()) || !offset.is_finite() {
            return Err(Error::Invalid("halfspace has non-finite data".into()));
        }
        Ok(Self {
            normal,
            offset,
            strict,
        })
    }

    /// Signed residual `normal·x − offset`.
    pub fn residual(&self, x: &DVector<f64>) -> f64 {
        self.normal.dot(x) - self.offset
    }
}

/// Intersection of finitely many halfspaces, with lazily cached vertices.
#[derive(Debug, Default)]
pub struct Polytope {
    dim: usize,
    halfspaces: Vec<Halfspace>,
    vertices: OnceLock<Vec<DVector<f64>>>,
}

impl Clone for Polytope {
    fn clone(&self) -> Self {
        let vertices = OnceLock::new();
        if let Some(v) = self.vertices.get() {
            let _ = vertices.set(v.clone());
        }
        Self {
            dim: self.dim,
            halfspaces: self.halfspaces.clone(),
            vertices,
        }
    }
}

impl PartialEq for Polytope {
    fn eq(&self, other: &Self) -> bool {
        self.dim == other.dim && self.halfspaces == other.halfspaces
    }
}

/// Result of maximizing a linear function over a polytope.
#[derive(Clone, Debug, PartialEq)]
pub enum Support {
    Empty,
    Unbounded,
    Value(f64, DVector<f64>),
}

impl Polytope {
    pub fn new(dim: usize, halfspaces: Vec<Halfspace>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Invalid("polytope dimension must be positive".into()));
        }
        for h in &halfspaces {
            if h.normal.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    found: h.normal.len(),
                });
            }
        }
        Ok(Self {
            dim,
            halfspaces,
            vertices: OnceLock::new(),
        })
    }

    /// The whole space `R^dim`.
    pub fn universe(dim: usize) -> Self {
        Self {
            dim,
            halfspaces: Vec::new(),
            vertices: OnceLock::new(),
        }
    }

    /// `{x : A x ≤ b}` with rows of `a` as normals.
    pub fn from_rows(a: &[Vec<f64>], b: &[f64]) -> Result<Self> {
        Self::from_rows_strict(a, b, &vec![false; b.len()])
    }

    pub fn from_rows_strict(a: &[Vec<f64>], b: &[f64], strict: &[bool]) -> Result<Self> {
        if a.len() != b.len() || strict.len() != b.len() {
            return Err(Error::DimensionMismatch {
                expected: a.len(),
                found: b.len(),
            });
        }
        let Some(first) = a.first() else {
            return Err(Error::Invalid(
                "cannot infer dimension from zero rows".into(),
            ));
        };
        let dim = first.len();
        let hs = a
            .iter()
            .zip(b)
            .zip(strict)
            .map(|((row, &off), &s)| {
                Halfspace::with_strictness(DVector::from_column_slice(row), off, s)
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(dim, hs)
    }

    /// Axis-aligned box `lo ≤ x ≤ hi`.
    pub fn hyperrectangle(lo: &[f64], hi: &[f64]) -> Result<Self> {
        if lo.len() != hi.len() {
            return Err(Error::DimensionMismatch {
                expected: lo.len(),
                found: hi.len(),
            });
        }
        let dim = lo.len();
        let mut hs = Vec::with_capacity(2 * dim);
        for j in 0..dim {
            let mut e = DVector::zeros(dim);
            e[j] = 1.0;
            hs.push(Halfspace::new(e.clone(), hi[j])?);
            hs.push(Halfspace::new(-e, -lo[j])?);
        }
        Self::new(dim, hs)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn halfspaces(&self) -> &[Halfspace] {
        &self.halfspaces
    }

    pub fn num_halfspaces(&self) -> usize {
        self.halfspaces.len()
    }

    /// Appends a halfspace, returning a new polytope.
    pub fn with_halfspace(&self, h: Halfspace) -> Result<Self> {
        let mut hs = self.halfspaces.clone();
        hs.push(h);
        Self::new(self.dim, hs)
    }

    pub fn intersect(&self, other: &Polytope) -> Result<Self> {
        if other.dim != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                found: other.dim,
            });
        }
        let mut hs = self.halfspaces.clone();
        hs.extend(other.halfspaces.iter().cloned());
        Self::new(self.dim, hs)
    }

    fn check_dim(&self, x: &DVector<f64>) -> Result<()> {
        if x.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                found: x.len(),
            });
        }
        Ok(())
    }

    /// Closure membership with absolute tolerance `tol`.
    pub fn contains(&self, x: &DVector<f64>, tol: f64) -> Result<bool> {
        self.check_dim(x)?;
        Ok(self.halfspaces.iter().all(|h| h.residual(x) <= tol))
    }

    /// Largest halfspace residual at `x` (nonpositive inside the closure).
    pub fn max_residual(&self, x: &DVector<f64>) -> f64 {
        self.halfspaces
            .iter()
            .map(|h| h.residual(x))
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// Minkowski difference with the ∞-norm ball of radius `r`.
    pub fn erode(&self, r: f64) -> Self {
        assert!(r >= 0.0, "erosion radius must be nonnegative");
        let hs = self
            .halfspaces
            .iter()
            .map(|h| Halfspace {
                normal: h.normal.clone(),
                offset: h.offset - r * h.normal.lp_norm(1),
                strict: h.strict,
            })
            .collect();
        Self {
            dim: self.dim,
            halfspaces: hs,
            vertices: OnceLock::new(),
        }
    }

    /// `{x : M x + c ∈ self}`.
    pub fn preimage(&self, m: &DMatrix<f64>, c: &DVector<f64>) -> Result<Self> {
        if m.nrows() != self.dim || c.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                found: m.nrows(),
            });
        }
        let mut hs = Vec::with_capacity(self.halfspaces.len());
        for h in &self.halfspaces {
            let normal = m.transpose() * &h.normal;
            let offset = h.offset - h.normal.dot(c);
            if normal.iter().all(|v| v.abs() < 1e-14) {
                if offset < -TOL_GEOM {
                    // Constraint is unsatisfiable: encode as an empty set.
                    let mut e = DVector::zeros(m.ncols());
                    e[0] = 1.0;
                    hs.push(Halfspace::new(e.clone(), -1.0)?);
                    hs.push(Halfspace::new(-e, -1.0)?);
                }
                continue;
            }
            hs.push(Halfspace {
                normal,
                offset,
                strict: h.strict,
            });
        }
        Self::new(m.ncols(), hs)
    }

    fn feasibility_lp(&self, objective: Vec<f64>) -> LinearProgram {
        let mut lp = LinearProgram::new(objective);
        for h in &self.halfspaces {
            lp.add_le(h.normal.as_slice(), h.offset);
        }
        lp
    }

    /// Phase-1 emptiness test of the closure.
    pub fn is_empty(&self) -> Result<bool> {
        Ok(!self.feasibility_lp(vec![0.0; self.dim]).feasible()?)
    }

    /// Maximizes `direction·x` over the closure.
    pub fn support(&self, direction: &DVector<f64>) -> Result<Support> {
        self.check_dim(direction)?;
        let lp = self.feasibility_lp(direction.iter().map(|v| -v).collect());
        Ok(match lp.solve()? {
            LpResult::Optimal { x, value } => Support::Value(-value, DVector::from_vec(x)),
            LpResult::Infeasible => Support::Empty,
            LpResult::Unbounded => Support::Unbounded,
        })
    }

    /// Largest inscribed Euclidean ball `(center, radius)`, `None` when empty.
    /// The radius is capped at `1e6` so unbounded sets still return a center.
    pub fn chebyshev_ball(&self) -> Result<Option<(DVector<f64>, f64)>> {
        let n = self.dim;
        let mut obj = vec![0.0; n + 1];
        obj[n] = -1.0;
        let mut lp = LinearProgram::new(obj);
        let mut row = vec![0.0; n + 1];
        for h in &self.halfspaces {
            row[..n].copy_from_slice(h.normal.as_slice());
            row[n] = h.normal.norm();
            lp.add_le(&row, h.offset);
        }
        lp.set_bounds(n, f64::NEG_INFINITY, 1e6);
        match lp.solve()? {
            LpResult::Optimal { x, .. } => {
                let r = x[n];
                if r < -TOL_GEOM {
                    return Ok(None);
                }
                Ok(Some((DVector::from_column_slice(&x[..n]), r.max(0.0))))
            }
            LpResult::Infeasible => Ok(None),
            LpResult::Unbounded => Err(Error::NumericalFailure(
                "Chebyshev LP reported unbounded".into(),
            )),
        }
    }

    /// True when the polytope contains a ball of radius greater than `tol`.
    pub fn has_interior(&self, tol: f64) -> Result<bool> {
        Ok(matches!(self.chebyshev_ball()?, Some((_, r)) if r > tol))
    }

    /// Per-coordinate bounds via `2·dim` support LPs; `None` when empty.
    pub fn bounding_box(&self) -> Result<Option<(Vec<f64>, Vec<f64>)>> {
        let n = self.dim;
        let mut lo = vec![0.0; n];
        let mut hi = vec![0.0; n];
        for j in 0..n {
            let mut e = DVector::zeros(n);
            e[j] = 1.0;
            match self.support(&e)? {
                Support::Empty => return Ok(None),
                Support::Unbounded => return Err(Error::Unbounded),
                Support::Value(v, _) => hi[j] = v,
            }
            match self.support(&(-e))? {
                Support::Empty => return Ok(None),
                Support::Unbounded => return Err(Error::Unbounded),
                Support::Value(v, _) => lo[j] = -v,
            }
        }
        Ok(Some((lo, hi)))
    }

    /// Cached vertex list of the closure.
    pub fn vertices(&self) -> Result<&[DVector<f64>]> {
        if let Some(v) = self.vertices.get() {
            return Ok(v);
        }
        let v = self.enumerate_vertices()?;
        Ok(self.vertices.get_or_init(|| v))
    }

    /// All extreme points of the closure, deduplicated within [`TOL_VERTEX`].
    pub fn enumerate_vertices(&self) -> Result<Vec<DVector<f64>>> {
        if self.dim > MAX_VERTEX_DIM {
            return Err(Error::DimensionTooLarge {
                dim: self.dim,
                cap: MAX_VERTEX_DIM,
            });
        }
        let Some((lo, hi)) = self.bounding_box()? else {
            return Ok(Vec::new());
        };
        Ok(double_description(self, &lo, &hi))
    }

    /// Drops halfspaces implied by the others (one LP per halfspace).
    pub fn remove_redundant(&self) -> Result<Self> {
        let mut keep: Vec<Halfspace> = self.halfspaces.clone();
        let mut i = 0;
        while i < keep.len() {
            let h = keep[i].clone();
            let others: Vec<Halfspace> = keep
                .iter()
                .enumerate()
                .filter(|(k, _)| *k != i)
                .map(|(_, g)| g.clone())
                .collect();
            let rest = Polytope::new(self.dim, others)?;
            let redundant = match rest.support(&h.normal)? {
                Support::Value(v, _) => v <= h.offset + TOL_GEOM * (1.0 + h.offset.abs()),
                Support::Empty => true,
                Support::Unbounded => false,
            };
            if redundant {
                keep.remove(i);
            } else {
                i += 1;
            }
        }
        Self::new(self.dim, keep)
    }

    /// `self ⊆ other` up to [`TOL_GEOM`].
    pub fn is_subset_of(&self, other: &Polytope) -> Result<bool> {
        for h in &other.halfspaces {
            match self.support(&h.normal)? {
                Support::Empty => return Ok(true),
                Support::Unbounded => return Ok(false),
                Support::Value(v, _) => {
                    if v > h.offset + TOL_GEOM {
                        return Ok(false);
                    }
                }
            }
        }
        Ok(true)
    }

    /// Area of a 2-D polytope (shoelace over ordered vertices).
    pub fn area_2d(&self) -> Result<f64> {
        if self.dim != 2 {
            return Err(Error::DimensionMismatch {
                expected: 2,
                found: self.dim,
            });
        }
        let ordered = order_ccw(self.vertices()?);
        Ok(shoelace(&ordered))
    }

    /// Uniform samples by rejection from the bounding box.
    pub fn sample_uniform<R: Rng>(&self, rng: &mut R, count: usize) -> Result<Vec<DVector<f64>>> {
        let Some((lo, hi)) = self.bounding_box()? else {
            return Err(Error::Invalid("cannot sample an empty polytope".into()));
        };
        let mut out = Vec::with_capacity(count);
        let mut attempts = 0usize;
        while out.len() < count {
            attempts += 1;
            if attempts > 10_000 * (count + 1) {
                return Err(Error::NumericalFailure(
                    "rejection sampling acceptance rate too low".into(),
                ));
            }
            let x = DVector::from_fn(self.dim, |j, _| {
                if hi[j] > lo[j] {
                    rng.gen_range(lo[j]..hi[j])
                } else {
                    lo[j]
                }
            });
            if self.contains(&x, 0.0)? {
                out.push(x);
            }
        }
        Ok(out)
    }

    pub fn to_rows(&self) -> (Vec<Vec<f64>>, Vec<f64>, Vec<bool>) {
        let a = self
            .halfspaces
            .iter()
            .map(|h| h.normal.iter().copied().collect())
            .collect();
        let b = self.halfspaces.iter().map(|h| h.offset).collect();
        let s = self.halfspaces.iter().map(|h| h.strict).collect();
        (a, b, s)
    }
}

/// Counter-clockwise ordering of 2-D points around their centroid.
pub fn order_ccw(points: &[DVector<f64>]) -> Vec<DVector<f64>> {
    if points.is_empty() {
        return Vec::new();
    }
    let k = points.len() as f64;
    let cx = points.iter().map(|p| p[0]).sum::<f64>() / k;
    let cy = points.iter().map(|p| p[1]).sum::<f64>() / k;
    let mut v: Vec<DVector<f64>> = points.to_vec();
    v.sort_by(|a, b| {
        let ta = (a[1] - cy).atan2(a[0] - cx);
        let tb = (b[1] - cy).atan2(b[0] - cx);
        ta.total_cmp(&tb)
    });
    v
}

fn shoelace(v: &[DVector<f64>]) -> f64 {
    if v.len() < 3 {
        return 0.0;
    }
    let mut s = 0.0;
    for i in 0..v.len() {
        let j = (i + 1) % v.len();
        s += v[i][0] * v[j][1] - v[j][0] * v[i][1];
    }
    0.5 * s.abs()
}

struct DdVertex {
    point: DVector<f64>,
    /// Sorted ids of constraints tight at this vertex.
    active: Vec<usize>,
}

fn merge_active(a: &mut Vec<usize>, b: &[usize]) {
    a.extend_from_slice(b);
    a.sort_unstable();
    a.dedup();
}

fn intersect_sorted(a: &[usize], b: &[usize]) -> Vec<usize> {
    let (mut i, mut j) = (0, 0);
    let mut out = Vec::new();
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                out.push(a[i]);
                i += 1;
                j += 1;
            }
        }
    }
    out
}

fn is_superset(sup: &[usize], sub: &[usize]) -> bool {
    intersect_sorted(sup, sub).len() == sub.len()
}

fn push_dedup(list: &mut Vec<DdVertex>, v: DdVertex) {
    for w in list.iter_mut() {
        if (&w.point - &v.point).amax() <= TOL_VERTEX * 0.1 {
            merge_active(&mut w.active, &v.active);
            return;
        }
    }
    list.push(v);
}

/// Incremental vertex construction starting from the bounding box, cutting
/// by one halfspace at a time. Adjacency uses the combinatorial test on
/// active constraint sets.
fn double_description(p: &Polytope, lo: &[f64], hi: &[f64]) -> Vec<DVector<f64>> {
    let n = p.dim;
    let m = p.halfspaces.len();
    let mut verts: Vec<DdVertex> = Vec::new();
    for mask in 0..(1usize << n) {
        let mut point = DVector::zeros(n);
        let mut active = Vec::with_capacity(n);
        for j in 0..n {
            if mask & (1 << j) != 0 {
                point[j] = hi[j];
                active.push(m + 2 * j);
            } else {
                point[j] = lo[j];
                active.push(m + 2 * j + 1);
            }
            if hi[j] - lo[j] <= TOL_GEOM {
                active.push(m + 2 * j);
                active.push(m + 2 * j + 1);
            }
        }
        active.sort_unstable();
        active.dedup();
        push_dedup(&mut verts, DdVertex { point, active });
    }

    for (id, h) in p.halfspaces.iter().enumerate() {
        let scale = h.normal.norm();
        let vals: Vec<f64> = verts.iter().map(|v| h.residual(&v.point) / scale).collect();
        let mut any_out = false;
        for (v, &s) in verts.iter_mut().zip(&vals) {
            if s.abs() <= TOL_GEOM {
                merge_active(&mut v.active, &[id]);
            } else if s > 0.0 {
                any_out = true;
            }
        }
        if !any_out {
            continue;
        }
        let mut created: Vec<DdVertex> = Vec::new();
        for (i, vi) in verts.iter().enumerate() {
            if vals[i] >= -TOL_GEOM {
                continue;
            }
            for (k, vk) in verts.iter().enumerate() {
                if vals[k] <= TOL_GEOM {
                    continue;
                }
                let common = intersect_sorted(&vi.active, &vk.active);
                if common.len() + 1 < n {
                    continue;
                }
                let blocked = verts
                    .iter()
                    .enumerate()
                    .any(|(r, vr)| r != i && r != k && is_superset(&vr.active, &common));
                if blocked {
                    continue;
                }
                let t = vals[i] / (vals[i] - vals[k]);
                let point = &vi.point + (&vk.point - &vi.point) * t;
                let mut active = common;
                merge_active(&mut active, &[id]);
                created.push(DdVertex { point, active });
            }
        }
        let mut next: Vec<DdVertex> = Vec::with_capacity(verts.len() + created.len());
        for (v, &s) in verts.into_iter().zip(&vals) {
            if s <= TOL_GEOM {
                next.push(v);
            }
        }
        for c in created {
            push_dedup(&mut next, c);
        }
        verts = next;
        if verts.is_empty() {
            return Vec::new();
        }
    }

    let mut out: Vec<DVector<f64>> = Vec::with_capacity(verts.len());
    for v in verts {
        if !out.iter().any(|w| (w - &v.point).amax() <= TOL_VERTEX) {
            out.push(v.point);
        }
    }
    out
}

/// Cells of a convex partition of `ambient`, each carrying a label.
#[derive(Clone, Debug)]
pub struct ConvexPartition<L> {
    pub ambient: Polytope,
    pub cells: Vec<Polytope>,
    pub labels: Vec<L>,
}

impl<L> ConvexPartition<L> {
    pub fn new(ambient: Polytope, cells: Vec<Polytope>, labels: Vec<L>) -> Self {
        assert_eq!(cells.len(), labels.len(), "one label per cell");
        Self {
            ambient,
            cells,
            labels,
        }
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&Polytope, &L)> {
        self.cells.iter().zip(&self.labels)
    }

    /// Pairs of cells whose intersection has an interior.
    pub fn overlapping_pairs(&self) -> Result<Vec<(usize, usize)>> {
        let mut out = Vec::new();
        for i in 0..self.cells.len() {
            for j in (i + 1)..self.cells.len() {
                let both = self.cells[i].intersect(&self.cells[j])?;
                if both.has_interior(TOL_GEOM)? {
                    out.push((i, j));
                }
            }
        }
        Ok(out)
    }

    /// Relative area mismatch `|area(ambient) − Σ area(cells)| / area(ambient)` (2-D only).
    pub fn coverage_gap_2d(&self) -> Result<f64> {
        let total = self.ambient.area_2d()?;
        let mut sum = 0.0;
        for c in &self.cells {
            sum += c.area_2d()?;
        }
        Ok((total - sum).abs() / total.max(f64::MIN_POSITIVE))
    }

    /// Number of ambient samples not covered by any cell closure.
    pub fn uncovered_samples<R: Rng>(&self, rng: &mut R, count: usize) -> Result<usize> {
        let pts = self.ambient.sample_uniform(rng, count)?;
        let mut missing = 0;
        for x in &pts {
            let mut hit = false;
            for c in &self.cells {
                if c.contains(x, TOL_GEOM)? {
                    hit = true;
                    break;
                }
            }
            if !hit {
                missing += 1;
            }
        }
        Ok(missing)
    }
}

#[derive(Serialize, Deserialize)]
struct PolytopeJson {
    #[serde(rename = "A")]
    a: Vec<Vec<f64>>,
    b: Vec<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    strict: Vec<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    dim: Option<usize>,
}

impl Serialize for Polytope {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let (a, b, strict) = self.to_rows();
        let strict = if strict.iter().any(|v| *v) {
            strict
        } else {
            Vec::new()
        };
        let dim = if a.is_empty() { Some(self.dim) } else { None };
        PolytopeJson { a, b, strict, dim }.serialize(s)
    }
}

impl<'de> Deserialize<'de> for Polytope {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error as _;
        let raw = PolytopeJson::deserialize(d)?;
        if raw.a.is_empty() {
            let dim = raw
                .dim
                .ok_or_else(|| D::Error::custom("polytope without rows needs \"dim\""))?;
            return Ok(Polytope::universe(dim));
        }
        let strict = if raw.strict.is_empty() {
            vec![false; raw.b.len()]
        } else {
            raw.strict
        };
        Polytope::from_rows_strict(&raw.a, &raw.b, &strict).map_err(D::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(x: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(x)
    }

    fn unit_square() -> Polytope {
        Polytope::hyperrectangle(&[0.0, 0.0], &[1.0, 1.0]).unwrap()
    }

    fn has_vertex(vs: &[DVector<f64>], p: &[f64]) -> bool {
        vs.iter().any(|w| (w - v(p)).amax() < 1e-9)
    }

    #[test]
    fn membership() {
        let sq = unit_square();
        assert!(sq.contains(&v(&[0.5, 0.5]), 0.0).unwrap());
        assert!(sq.contains(&v(&[1.0, 1.0]), 1e-9).unwrap());
        assert!(!sq.contains(&v(&[1.1, 0.0]), 1e-9).unwrap());
        assert!(sq.contains(&v(&[1.0]), 0.0).is_err());
    }

    #[test]
    fn zero_normal_rejected() {
        assert!(Halfspace::new(v(&[0.0, 0.0]), 1.0).is_err());
    }

    #[test]
    fn square_vertices() {
        let vs = unit_square().enumerate_vertices().unwrap();
        assert_eq!(vs.len(), 4);
        for p in [[0.0, 0.0], [0.0, 1.0], [1.0, 0.0], [1.0, 1.0]] {
            assert!(has_vertex(&vs, &p));
        }
    }

    #[test]
    fn triangle_vertices() {
        let tri = Polytope::from_rows(
            &[vec![-1.0, 0.0], vec![0.0, -1.0], vec![1.0, 1.0]],
            &[0.0, 0.0, 1.0],
        )
        .unwrap();
        let vs = tri.enumerate_vertices().unwrap();
        assert_eq!(vs.len(), 3);
        for p in [[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]] {
            assert!(has_vertex(&vs, &p));
        }
    }

    /// Brute force: intersect every pair of constraint lines and keep members.
    fn brute_force_2d(p: &Polytope) -> Vec<DVector<f64>> {
        let hs = p.halfspaces();
        let mut out: Vec<DVector<f64>> = Vec::new();
        for i in 0..hs.len() {
            for j in (i + 1)..hs.len() {
                let m = nalgebra::Matrix2::new(
                    hs[i].normal[0],
                    hs[i].normal[1],
                    hs[j].normal[0],
                    hs[j].normal[1],
                );
                let Some(inv) = m.try_inverse() else { continue };
                let x = inv * nalgebra::Vector2::new(hs[i].offset, hs[j].offset);
                let x = v(&[x[0], x[1]]);
                if p.contains(&x, 1e-9).unwrap() && !out.iter().any(|w| (w - &x).amax() < 1e-9) {
                    out.push(x);
                }
            }
        }
        out
    }

    #[test]
    fn redundant_halfspace_matches_brute_force() {
        let sq = unit_square()
            .with_halfspace(Halfspace::new(v(&[1.0, 0.0]), 2.0).unwrap())
            .unwrap();
        let vs = sq.enumerate_vertices().unwrap();
        let oracle = brute_force_2d(&sq);
        assert_eq!(vs.len(), 4);
        assert_eq!(oracle.len(), 4);
        for o in &oracle {
            assert!(vs.iter().any(|w| (w - o).amax() < 1e-9));
        }
    }

    #[test]
    fn box_3d_vertices() {
        let cube = Polytope::hyperrectangle(&[-1.0, 0.0, 2.0], &[1.0, 3.0, 2.5]).unwrap();
        let vs = cube.enumerate_vertices().unwrap();
        assert_eq!(vs.len(), 8);
        for mask in 0..8 {
            let p = [
                if mask & 1 != 0 { 1.0 } else { -1.0 },
                if mask & 2 != 0 { 3.0 } else { 0.0 },
                if mask & 4 != 0 { 2.5 } else { 2.0 },
            ];
            assert!(has_vertex(&vs, &p));
        }
    }

    #[test]
    fn octahedron_vertices() {
        // |x|+|y|+|z| ≤ 1: eight facets, six vertices, each vertex degenerate (4 facets).
        let mut rows = Vec::new();
        for mask in 0..8 {
            rows.push(vec![
                if mask & 1 != 0 { 1.0 } else { -1.0 },
                if mask & 2 != 0 { 1.0 } else { -1.0 },
                if mask & 4 != 0 { 1.0 } else { -1.0 },
            ]);
        }
        let oct = Polytope::from_rows(&rows, &[1.0; 8]).unwrap();
        let vs = oct.enumerate_vertices().unwrap();
        assert_eq!(vs.len(), 6);
        assert!(has_vertex(&vs, &[0.0, 0.0, 1.0]));
        assert!(has_vertex(&vs, &[-1.0, 0.0, 0.0]));
    }

    #[test]
    fn flat_polytope_vertices() {
        // Segment from (0,0) to (1,1).
        let seg = unit_square()
            .with_halfspace(Halfspace::new(v(&[1.0, -1.0]), 0.0).unwrap())
            .unwrap()
            .with_halfspace(Halfspace::new(v(&[-1.0, 1.0]), 0.0).unwrap())
            .unwrap();
        let vs = seg.enumerate_vertices().unwrap();
        assert_eq!(vs.len(), 2);
        assert!(has_vertex(&vs, &[0.0, 0.0]) && has_vertex(&vs, &[1.0, 1.0]));
    }

    #[test]
    fn unbounded_and_dimension_errors() {
        let half = Polytope::from_rows(&[vec![1.0, 0.0]], &[1.0]).unwrap();
        assert!(matches!(half.enumerate_vertices(), Err(Error::Unbounded)));
        let big = Polytope::hyperrectangle(&[0.0; 5], &[1.0; 5]).unwrap();
        assert!(matches!(
            big.enumerate_vertices(),
            Err(Error::DimensionTooLarge { dim: 5, cap: 4 })
        ));
    }

    #[test]
    fn empty_polytopes() {
        let e = Polytope::from_rows(&[vec![1.0], vec![-1.0]], &[0.0, -1.0]).unwrap();
        assert!(e.is_empty().unwrap());
        assert!(e.enumerate_vertices().unwrap().is_empty());
        assert!(!unit_square().is_empty().unwrap());
        let cut = unit_square()
            .with_halfspace(Halfspace::new(v(&[1.0, 1.0]), -0.5).unwrap())
            .unwrap();
        assert!(cut.is_empty().unwrap());
    }

    #[test]
    fn erosion() {
        let sq = Polytope::hyperrectangle(&[-1.0, -1.0], &[1.0, 1.0]).unwrap();
        let e = sq.erode(0.1);
        let vs = e.enumerate_vertices().unwrap();
        assert!(has_vertex(&vs, &[0.9, 0.9]) && has_vertex(&vs, &[-0.9, 0.9]));
        assert_eq!(sq.erode(0.0), sq);
        let h = Polytope::from_rows(&[vec![1.0, 1.0]], &[2.0])
            .unwrap()
            .erode(0.1);
        assert!((h.halfspaces()[0].offset - 1.8).abs() < 1e-15);
    }

    #[test]
    fn strict_halfspace_treated_closed() {
        let p = Polytope::from_rows_strict(&[vec![-1.0, 0.0]], &[-1.0], &[true])
            .unwrap()
            .intersect(&Polytope::hyperrectangle(&[-2.0, -1.0], &[2.0, 1.0]).unwrap())
            .unwrap();
        assert!(p.contains(&v(&[1.0, 0.0]), 1e-12).unwrap());
        assert_eq!(p.enumerate_vertices().unwrap().len(), 4);
    }

    #[test]
    fn redundancy_removal_and_subset() {
        let sq = unit_square()
            .with_halfspace(Halfspace::new(v(&[1.0, 1.0]), 5.0).unwrap())
            .unwrap();
        let r = sq.remove_redundant().unwrap();
        assert_eq!(r.num_halfspaces(), 4);
        let big = Polytope::hyperrectangle(&[-1.0, -1.0], &[2.0, 2.0]).unwrap();
        assert!(sq.is_subset_of(&big).unwrap());
        assert!(!big.is_subset_of(&sq).unwrap());
    }

    #[test]
    fn chebyshev_and_area() {
        let sq = unit_square();
        let (c, r) = sq.chebyshev_ball().unwrap().unwrap();
        assert!((r - 0.5).abs() < 1e-12 && (c - v(&[0.5, 0.5])).amax() < 1e-12);
        assert!((sq.area_2d().unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn json_round_trip() {
        let p = Polytope::from_rows_strict(
            &[vec![1.0, 0.0], vec![0.0, 1.0]],
            &[1.0, 2.0],
            &[true, false],
        )
        .unwrap();
        let s = serde_json::to_string(&p).unwrap();
        assert!(s.contains("\"A\"") && s.contains("\"strict\""));
        let q: Polytope = serde_json::from_str(&s).unwrap();
        assert_eq!(p, q);
        assert!(serde_json::from_str::<Polytope>(r#"{"A": [[0, 0]], "b": [1]}"#).is_err());
    }

    #[test]
    fn partition_checks() {
        let sq = unit_square();
        let left = Polytope::hyperrectangle(&[0.0, 0.0], &[0.5, 1.0]).unwrap();
        let right = Polytope::hyperrectangle(&[0.5, 0.0], &[1.0, 1.0]).unwrap();
        let part = ConvexPartition::new(sq.clone(), vec![left.clone(), right], vec![0, 1]);
        assert!(part.overlapping_pairs().unwrap().is_empty());
        assert!(part.coverage_gap_2d().unwrap() < 1e-12);
        let bad = ConvexPartition::new(sq, vec![left.clone(), left], vec![0, 1]);
        assert_eq!(bad.overlapping_pairs().unwrap(), vec![(0, 1)]);
    }
}
