//! Piecewise-affine system model.
//!
//! Regions are indexed from zero in the library API. The JSON system file
//! and every user-facing printout use one-based indices.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Polytope, TOL_GEOM};

/// One affine piece `x⁺ = A x + B u + c` valid on `polytope`.
#[derive(Clone, Debug)]
pub struct Region {
    pub polytope: Polytope,
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub c: DVector<f64>,
}

#[derive(Clone, Debug)]
pub struct PwaSystem {
    n: usize,
    m: usize,
    regions: Vec<Region>,
    state_set: Polytope,
    input_set: Polytope,
    terminal_set: Option<Polytope>,
    terminal_gains: BTreeMap<usize, DMatrix<f64>>,
    /// `P̄_i ∩ X`, bounded because `X` is.
    domains: Vec<Polytope>,
}

impl PwaSystem {
    pub fn new(
        regions: Vec<Region>,
        state_set: Polytope,
        input_set: Polytope,
        terminal_set: Option<Polytope>,
        terminal_gains: BTreeMap<usize, DMatrix<f64>>,
    ) -> Result<Self> {
        if regions.is_empty() {
            return Err(Error::Invalid(
                "a PWA system needs at least one region".into(),
            ));
        }
        let n = state_set.dim();
        let m = input_set.dim();
        let mismatch = |expected, found| Error::DimensionMismatch { expected, found };
        for r in &regions {
            if r.polytope.dim() != n {
                return Err(mismatch(n, r.polytope.dim()));
            }
            if r.a.shape() != (n, n) {
                return Err(mismatch(n, r.a.ncols()));
            }
            if r.b.shape() != (n, m) {
                return Err(mismatch(m, r.b.ncols()));
            }
            if r.c.len() != n {
                return Err(mismatch(n, r.c.len()));
            }
        }
        if let Some(xf) = &terminal_set {
            if xf.dim() != n {
                return Err(mismatch(n, xf.dim()));
            }
        }
        for (&i, k) in &terminal_gains {
            if i >= regions.len() {
                return Err(Error::Invalid(format!(
                    "terminal gain given for unknown region {}",
                    i + 1
                )));
            }
            if k.shape() != (m, n) {
                return Err(mismatch(n, k.ncols()));
            }
        }
        let domains = regions
            .iter()
            .map(|r| r.polytope.intersect(&state_set))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            n,
            m,
            regions,
            state_set,
            input_set,
            terminal_set,
            terminal_gains,
            domains,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn num_regions(&self) -> usize {
        self.regions.len()
    }

    pub fn regions(&self) -> &[Region] {
        &self.regions
    }

    pub fn region(&self, i: usize) -> &Region {
        &self.regions[i]
    }

    pub fn state_set(&self) -> &Polytope {
        &self.state_set
    }

    pub fn input_set(&self) -> &Polytope {
        &self.input_set
    }

    pub fn terminal_set(&self) -> Option<&Polytope> {
        self.terminal_set.as_ref()
    }

    pub fn terminal_gains(&self) -> &BTreeMap<usize, DMatrix<f64>> {
        &self.terminal_gains
    }

    /// `P̄_i ∩ X`.
    pub fn domain(&self, i: usize) -> &Polytope {
        &self.domains[i]
    }

    /// The shared input matrix (taken from the first region).
    pub fn input_matrix(&self) -> &DMatrix<f64> {
        &self.regions[0].b
    }

    /// Replaces the terminal ingredients.
    pub fn with_terminal(
        mut self,
        terminal_set: Polytope,
        gains: BTreeMap<usize, DMatrix<f64>>,
    ) -> Result<Self> {
        self.terminal_set = Some(terminal_set);
        self.terminal_gains = gains;
        Self::new(
            self.regions,
            self.state_set,
            self.input_set,
            self.terminal_set,
            self.terminal_gains,
        )
    }

    fn check_state(&self, x: &DVector<f64>) -> Result<()> {
        if x.len() != self.n {
            return Err(Error::DimensionMismatch {
                expected: self.n,
                found: x.len(),
            });
        }
        Ok(())
    }

    /// Every region whose closure contains `x`, in index order.
    pub fn regions_containing(&self, x: &DVector<f64>) -> Result<Vec<usize>> {
        self.check_state(x)?;
        let mut out = Vec::new();
        for (i, r) in self.regions.iter().enumerate() {
            if r.polytope.contains(x, TOL_GEOM)? {
                out.push(i);
            }
        }
        Ok(out)
    }

    /// Lowest-index region whose closure contains `x`.
    pub fn region_of(&self, x: &DVector<f64>) -> Result<usize> {
        self.check_state(x)?;
        for (i, r) in self.regions.iter().enumerate() {
            if r.polytope.contains(x, TOL_GEOM)? {
                return Ok(i);
            }
        }
        Err(Error::OutsideDomain(x.iter().copied().collect()))
    }

    /// Applies the affine law of region `i`.
    pub fn affine_step(&self, i: usize, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        let r = &self.regions[i];
        &r.a * x + &r.b * u + &r.c
    }

    /// `x⁺ = A_i x + B u + c_i` with `i = region_of(x)`.
    pub fn step(&self, x: &DVector<f64>, u: &DVector<f64>) -> Result<DVector<f64>> {
        if u.len() != self.m {
            return Err(Error::DimensionMismatch {
                expected: self.m,
                found: u.len(),
            });
        }
        let i = self.region_of(x)?;
        Ok(self.affine_step(i, x, u))
    }

    /// Checks the modelling assumptions; an empty list means the system is valid.
    pub fn validate(&self) -> Vec<Diagnostic> {
        let mut out = Vec::new();
        if let Err(e) = self.validate_into(&mut out) {
            out.push(Diagnostic::Numerical(e.to_string()));
        }
        out
    }

    fn validate_into(&self, out: &mut Vec<Diagnostic>) -> Result<()> {
        let b0 = self.input_matrix();
        for (i, r) in self.regions.iter().enumerate().skip(1) {
            if (&r.b - b0).amax() > TOL_GEOM {
                out.push(Diagnostic::InputMatrixDiffers { region: i });
            }
        }

        let origin = DVector::zeros(self.n);
        if self.state_set.max_residual(&origin) >= -TOL_GEOM {
            out.push(Diagnostic::OriginNotInterior("X"));
        }
        if self.input_set.max_residual(&DVector::zeros(self.m)) >= -TOL_GEOM {
            out.push(Diagnostic::OriginNotInterior("U"));
        }
        if self.state_set.bounding_box().is_err() {
            out.push(Diagnostic::Unbounded("X"));
            return Ok(());
        }
        if self.input_set.bounding_box().is_err() {
            out.push(Diagnostic::Unbounded("U"));
        }

        for (i, d) in self.domains.iter().enumerate() {
            if !d.has_interior(TOL_GEOM)? {
                out.push(Diagnostic::EmptyRegion { region: i });
            }
        }
        for i in 0..self.regions.len() {
            for j in (i + 1)..self.regions.len() {
                let shared = self.domains[i].intersect(&self.domains[j])?;
                if shared.has_interior(TOL_GEOM)? {
                    out.push(Diagnostic::Overlap { a: i, b: j });
                    continue;
                }
                for v in shared.enumerate_vertices()? {
                    let ri = &self.regions[i];
                    let rj = &self.regions[j];
                    let gap = (&ri.a * &v + &ri.c - &rj.a * &v - &rj.c).amax();
                    if gap > TOL_GEOM {
                        out.push(Diagnostic::Discontinuous {
                            a: i,
                            b: j,
                            facet: describe_facet(&self.regions[i].polytope, &v),
                            vertex: v.iter().copied().collect(),
                            gap,
                        });
                    }
                }
            }
        }
        self.check_coverage(out)?;

        let Some(xf) = &self.terminal_set else {
            return Ok(());
        };
        if !xf.is_subset_of(&self.state_set)? {
            out.push(Diagnostic::TerminalNotInStateSet);
        }
        if xf.max_residual(&origin) >= -TOL_GEOM {
            out.push(Diagnostic::OriginNotInterior("Xf"));
        }
        for (i, r) in self.regions.iter().enumerate() {
            let piece = r.polytope.intersect(xf)?;
            if !piece.has_interior(TOL_GEOM)? {
                continue;
            }
            let Some(k) = self.terminal_gains.get(&i) else {
                out.push(Diagnostic::MissingTerminalGain { region: i });
                continue;
            };
            for v in piece.enumerate_vertices()? {
                let u = k * &v;
                let next = &r.a * &v + &r.b * &u + &r.c;
                if !xf.contains(&next, TOL_GEOM)? {
                    out.push(Diagnostic::TerminalNotInvariant {
                        region: i,
                        vertex: v.iter().copied().collect(),
                    });
                }
                if !self.input_set.contains(&u, TOL_GEOM)? {
                    out.push(Diagnostic::TerminalInputInadmissible {
                        region: i,
                        vertex: v.iter().copied().collect(),
                    });
                }
            }
        }
        Ok(())
    }

    fn check_coverage(&self, out: &mut Vec<Diagnostic>) -> Result<()> {
        if self.n == 2 {
            let total = self.state_set.area_2d()?;
            let mut sum = 0.0;
            for d in &self.domains {
                sum += d.area_2d()?;
            }
            let gap = (total - sum).abs() / total.max(f64::MIN_POSITIVE);
            if gap > 1e-6 {
                out.push(Diagnostic::NotCovering { uncovered: gap });
            }
        } else {
            let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
            let pts = self.state_set.sample_uniform(&mut rng, 2000)?;
            let mut missing = 0usize;
            for x in &pts {
                if self.regions_containing(x)?.is_empty() {
                    missing += 1;
                }
            }
            if missing > 0 {
                out.push(Diagnostic::NotCovering {
                    uncovered: missing as f64 / pts.len() as f64,
                });
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> SystemFile {
        SystemFile {
            n: self.n,
            m: self.m,
            regions: self
                .regions
                .iter()
                .map(|r| RegionFile {
                    a: matrix_rows(&r.a),
                    b: matrix_rows(&r.b),
                    c: r.c.iter().copied().collect(),
                    polytope: r.polytope.clone(),
                })
                .collect(),
            state_set: self.state_set.clone(),
            input_set: self.input_set.clone(),
            terminal_set: self.terminal_set.clone(),
            gains: self
                .terminal_gains
                .iter()
                .map(|(i, k)| ((i + 1).to_string(), matrix_rows(k)))
                .collect(),
        }
    }

    pub fn from_json(file: SystemFile) -> Result<Self> {
        let mut regions = Vec::with_capacity(file.regions.len());
        for r in file.regions {
            regions.push(Region {
                polytope: r.polytope,
                a: matrix_from_rows(&r.a, file.n, file.n)?,
                b: matrix_from_rows(&r.b, file.n, file.m)?,
                c: DVector::from_vec(r.c),
            });
        }
        let mut gains = BTreeMap::new();
        for (key, k) in file.gains {
            let idx: usize = key
                .parse()
                .map_err(|_| Error::Format(format!("gain key {key:?} is not a region index")))?;
            if idx == 0 {
                return Err(Error::Format("region indices in K start at 1".into()));
            }
            gains.insert(idx - 1, matrix_from_rows(&k, file.m, file.n)?);
        }
        let sys = Self::new(
            regions,
            file.state_set,
            file.input_set,
            file.terminal_set,
            gains,
        )?;
        if sys.n != file.n || sys.m != file.m {
            return Err(Error::Format("declared n/m disagree with X/U".into()));
        }
        Ok(sys)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json(serde_json::from_str(&text)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(&self.to_json())?;
        std::fs::write(path, text)?;
        Ok(())
    }
}

/// Best-effort description of the hyperplane of `p` through `v`.
fn describe_facet(p: &Polytope, v: &DVector<f64>) -> String {
    for h in p.halfspaces() {
        if h.residual(v).abs() <= 1e-6 {
            let terms: Vec<String> = h
                .normal
                .iter()
                .enumerate()
                .filter(|(_, a)| **a != 0.0)
                .map(|(j, a)| format!("{a}·x{}", j + 1))
                .collect();
            return format!("{} = {}", terms.join(" + "), h.offset);
        }
    }
    "shared boundary".into()
}

/// A violated modelling assumption found by [`PwaSystem::validate`].
#[derive(Clone, Debug, PartialEq)]
pub enum Diagnostic {
    InputMatrixDiffers {
        region: usize,
    },
    OriginNotInterior(&'static str),
    Unbounded(&'static str),
    EmptyRegion {
        region: usize,
    },
    Overlap {
        a: usize,
        b: usize,
    },
    NotCovering {
        uncovered: f64,
    },
    Discontinuous {
        a: usize,
        b: usize,
        facet: String,
        vertex: Vec<f64>,
        gap: f64,
    },
    TerminalNotInStateSet,
    MissingTerminalGain {
        region: usize,
    },
    TerminalNotInvariant {
        region: usize,
        vertex: Vec<f64>,
    },
    TerminalInputInadmissible {
        region: usize,
        vertex: Vec<f64>,
    },
    Numerical(String),
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Diagnostic::InputMatrixDiffers { region } => {
                write!(f, "region {} has a different B matrix than region 1", region + 1)
            }
            Diagnostic::OriginNotInterior(set) => write!(f, "origin not interior to {set}"),
            Diagnostic::Unbounded(set) => write!(f, "{set} is unbounded"),
            Diagnostic::EmptyRegion { region } => {
                write!(f, "region {} has empty interior inside X", region + 1)
            }
            Diagnostic::Overlap { a, b } => {
                write!(f, "regions {} and {} overlap", a + 1, b + 1)
            }
            Diagnostic::NotCovering { uncovered } => {
                write!(f, "regions do not cover X (uncovered fraction {uncovered:.3e})")
            }
            Diagnostic::Discontinuous {
                a,
                b,
                facet,
                vertex,
                gap,
            } => write!(
                f,
                "continuity violated between regions {} and {} on facet {facet} at x = {vertex:?} (gap {gap:.3e})",
                a + 1,
                b + 1
            ),
            Diagnostic::TerminalNotInStateSet => write!(f, "Xf is not contained in X"),
            Diagnostic::MissingTerminalGain { region } => write!(
                f,
                "Xf intersects region {} but no terminal gain is stored for it",
                region + 1
            ),
            Diagnostic::TerminalNotInvariant { region, vertex } => write!(
                f,
                "Xf not invariant under the gain of region {} at vertex {vertex:?}",
                region + 1
            ),
            Diagnostic::TerminalInputInadmissible { region, vertex } => write!(
                f,
                "terminal gain of region {} violates U at vertex {vertex:?}",
                region + 1
            ),
            Diagnostic::Numerical(msg) => write!(f, "validation aborted: {msg}"),
        }
    }
}

pub(crate) fn matrix_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
        .collect()
}

pub(crate) fn matrix_from_rows(
    rows: &[Vec<f64>],
    nrows: usize,
    ncols: usize,
) -> Result<DMatrix<f64>> {
    if rows.len() != nrows || rows.iter().any(|r| r.len() != ncols) {
        return Err(Error::Format(format!("expected a {nrows}x{ncols} matrix")));
    }
    Ok(DMatrix::from_fn(nrows, ncols, |i, j| rows[i][j]))
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RegionFile {
    #[serde(rename = "A")]
    pub a: Vec<Vec<f64>>,
    #[serde(rename = "B")]
    pub b: Vec<Vec<f64>>,
    pub c: Vec<f64>,
    pub polytope: Polytope,
}

/// On-disk system description.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SystemFile {
    pub n: usize,
    pub m: usize,
    pub regions: Vec<RegionFile>,
    #[serde(rename = "X")]
    pub state_set: Polytope,
    #[serde(rename = "U")]
    pub input_set: Polytope,
    #[serde(rename = "Xf", default, skip_serializing_if = "Option::is_none")]
    pub terminal_set: Option<Polytope>,
    #[serde(rename = "K", default)]
    pub gains: BTreeMap<String, Vec<Vec<f64>>>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::benchmarks::{paper_system_open, toy_system};

    fn v(x: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(x)
    }

    #[test]
    fn region_lookup() {
        let sys = paper_system_open();
        assert_eq!(sys.region_of(&v(&[0.0, 0.0])).unwrap(), 0);
        assert_eq!(sys.region_of(&v(&[2.0, 0.0])).unwrap(), 1);
        assert_eq!(sys.region_of(&v(&[1.0, 0.0])).unwrap(), 0);
        assert_eq!(sys.regions_containing(&v(&[1.0, 0.0])).unwrap(), vec![0, 1]);
    }

    #[test]
    fn stepping() {
        let sys = paper_system_open();
        let zero = sys.step(&v(&[0.0, 0.0]), &v(&[0.0])).unwrap();
        assert!(zero.amax() == 0.0);
        let a = sys.step(&v(&[2.0, 1.0]), &v(&[0.0])).unwrap();
        assert!((a - v(&[1.7, 1.0])).amax() < 1e-15);
        let b = sys.step(&v(&[1.0, 1.0]), &v(&[1.0])).unwrap();
        assert!((b - v(&[1.3, 2.0])).amax() < 1e-15);
        assert!(sys.step(&v(&[0.0, 0.0]), &v(&[0.0, 1.0])).is_err());
    }

    #[test]
    fn paper_system_is_valid() {
        let diags = paper_system_open().validate();
        assert!(diags.is_empty(), "{diags:?}");
        let diags = toy_system().validate();
        assert!(diags.is_empty(), "{diags:?}");
    }

    #[test]
    fn broken_continuity_is_reported() {
        let sys = paper_system_open();
        let mut regions = sys.regions().to_vec();
        regions[1].c = v(&[0.6, 0.0]);
        let broken = PwaSystem::new(
            regions,
            sys.state_set().clone(),
            sys.input_set().clone(),
            None,
            BTreeMap::new(),
        )
        .unwrap();
        let diags = broken.validate();
        let hit = diags.iter().find_map(|d| match d {
            Diagnostic::Discontinuous { vertex, facet, .. } => {
                Some((vertex.clone(), facet.clone()))
            }
            _ => None,
        });
        let (vertex, facet) = hit.expect("continuity diagnostic");
        assert!((vertex[0] - 1.0).abs() < 1e-9);
        assert!(facet.contains("x1"), "{facet}");
    }

    #[test]
    fn shifted_state_set_loses_origin() {
        let sys = paper_system_open();
        let x = Polytope::hyperrectangle(&[2.0, -1.0], &[5.0, 1.0]).unwrap();
        let shifted = PwaSystem::new(
            sys.regions().to_vec(),
            x,
            sys.input_set().clone(),
            None,
            BTreeMap::new(),
        )
        .unwrap();
        let text: Vec<String> = shifted.validate().iter().map(|d| d.to_string()).collect();
        assert!(
            text.iter().any(|t| t == "origin not interior to X"),
            "{text:?}"
        );
    }

    #[test]
    fn json_round_trip() {
        let sys = toy_system();
        let text = serde_json::to_string(&sys.to_json()).unwrap();
        let back = PwaSystem::from_json(serde_json::from_str(&text).unwrap()).unwrap();
        assert_eq!(back.num_regions(), 2);
        assert_eq!(back.terminal_gains().len(), 2);
        let x = v(&[0.3]);
        let u = v(&[-0.1]);
        assert_eq!(sys.step(&x, &u).unwrap(), back.step(&x, &u).unwrap());
    }

    #[test]
    fn facet_continuity_property() {
        // Along the shared facet x1 = 1 both laws agree.
        let sys = paper_system_open();
        for k in 0..50 {
            let x2 = -5.0 + 0.2 * k as f64;
            let x = v(&[1.0, x2]);
            let u = v(&[0.3]);
            let a = sys.affine_step(0, &x, &u);
            let b = sys.affine_step(1, &x, &u);
            assert!((a - b).amax() < 1e-7);
        }
    }
}
