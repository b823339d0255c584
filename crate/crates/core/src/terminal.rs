//! Terminal ingredients: LQR gain and maximal constraint-admissible sets.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::geometry::{Polytope, TOL_GEOM};
use crate::mpc::MpcConfig;
use crate::pwa::PwaSystem;
use nalgebra::{DMatrix, DVector};

const RICCATI_CAP: usize = 100_000;
const RICCATI_TOL: f64 = 1e-10;

/// Default cap on Gilbert–Tan iterations.
pub const MAS_ITER_CAP: usize = 200;

/// Infinite-horizon discrete LQR gain for `u = K x`.
///
/// `q` and `r` are the 1-norm weights; the Riccati solve uses `QᵀQ` and `RᵀR`.
pub fn lqr_gain(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    if a.ncols() != n || b.nrows() != n || q.ncols() != n || r.ncols() != b.ncols() {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: b.nrows(),
        });
    }
    let qq = q.transpose() * q;
    let rr = r.transpose() * r;
    let at = a.transpose();
    let bt = b.transpose();
    let mut p = qq.clone();
    for it in 0..RICCATI_CAP {
        let s = &rr + &bt * &p * b;
        let Some(s_inv) = s.try_inverse() else {
            return Err(Error::RiccatiDiverged(it));
        };
        let pa = &p * a;
        let next = &qq + &at * &pa - &at * &p * b * &s_inv * &bt * &pa;
        let next = (&next + next.transpose()) * 0.5;
        if !next.iter().all(|v| v.is_finite()) || next.amax() > 1e12 {
            return Err(Error::RiccatiDiverged(it));
        }
        let delta = (&next - &p).amax();
        p = next;
        if delta <= RICCATI_TOL * p.amax().max(1.0) {
            let s = &rr + &bt * &p * b;
            let s_inv = s.try_inverse().ok_or(Error::RiccatiDiverged(it))?;
            let k = -(s_inv * &bt * &p * a);
            if spectral_radius(&(a + b * &k)) >= 1.0 {
                return Err(Error::RiccatiDiverged(it));
            }
            return Ok(k);
        }
    }
    Err(Error::RiccatiDiverged(RICCATI_CAP))
}

pub fn spectral_radius(m: &DMatrix<f64>) -> f64 {
    m.complex_eigenvalues()
        .iter()
        .map(|z| z.norm())
        .fold(0.0, f64::max)
}

/// Gilbert–Tan iteration for the largest invariant subset of
/// `region ∩ constraints ∩ {x : K x ∈ U}` under `x⁺ = A_cl x`.
pub fn max_admissible_set(
    a_cl: &DMatrix<f64>,
    constraints: &Polytope,
    region: &Polytope,
    k: &DMatrix<f64>,
    input_set: &Polytope,
    iter_cap: usize,
) -> Result<Polytope> {
    let n = a_cl.nrows();
    let admissible_input = input_set.preimage(k, &DVector::zeros(input_set.dim()))?;
    let mut s = region
        .intersect(constraints)?
        .intersect(&admissible_input)?
        .remove_redundant()?;
    let zero = DVector::zeros(n);
    for _ in 0..iter_cap {
        let pre = s.preimage(a_cl, &zero)?;
        if s.is_subset_of(&pre)? {
            return Ok(s);
        }
        s = s.intersect(&pre)?.remove_redundant()?;
    }
    Err(Error::NoConvergence(iter_cap))
}

/// A synthesized terminal set with its single-region gain.
#[derive(Clone, Debug)]
pub struct TerminalSpec {
    pub k: DMatrix<f64>,
    pub xf: Polytope,
    pub region_index: usize,
}

impl TerminalSpec {
    /// LQR gain for region `region` and its maximal admissible set inside `P̄_region ∩ X`.
    pub fn synthesize(sys: &PwaSystem, cfg: &MpcConfig, region: usize) -> Result<Self> {
        if region >= sys.num_regions() {
            return Err(Error::Invalid(format!("no region {}", region + 1)));
        }
        let r = sys.region(region);
        let k = lqr_gain(&r.a, &r.b, &cfg.q, &cfg.r)?;
        let a_cl = &r.a + &r.b * &k;
        let xf = max_admissible_set(
            &a_cl,
            sys.state_set(),
            &r.polytope,
            &k,
            sys.input_set(),
            MAS_ITER_CAP,
        )?;
        Ok(Self {
            k,
            xf,
            region_index: region,
        })
    }

    /// Largest violation of the invariance and input certificates over the vertices of `Xf`.
    pub fn certificate_violation(&self, sys: &PwaSystem) -> Result<f64> {
        let r = sys.region(self.region_index);
        let a_cl = &r.a + &r.b * &self.k;
        let mut worst = f64::NEG_INFINITY;
        for v in self.xf.vertices()? {
            worst = worst
                .max(self.xf.max_residual(&(&a_cl * v + &r.c)))
                .max(sys.input_set().max_residual(&(&self.k * v)))
                .max(sys.domain(self.region_index).max_residual(v));
        }
        Ok(worst)
    }

    pub fn is_certified(&self, sys: &PwaSystem) -> Result<bool> {
        Ok(self.certificate_violation(sys)? <= TOL_GEOM)
    }

    /// Returns `sys` with this terminal set and gain installed.
    pub fn install(&self, sys: PwaSystem) -> Result<PwaSystem> {
        let mut gains = BTreeMap::new();
        gains.insert(self.region_index, self.k.clone());
        sys.with_terminal(self.xf.clone(), gains)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::benchmarks::{paper_config, paper_system_open};

    fn scalar(v: f64) -> DMatrix<f64> {
        DMatrix::from_element(1, 1, v)
    }

    #[test]
    fn scalar_riccati_matches_fixed_point() {
        let mut p: f64 = 1.0;
        for _ in 0..10_000 {
            p = 1.0 + 0.25 * p - 0.25 * p * p / (1.0 + p);
        }
        let k_ref = -p * 0.5 / (1.0 + p);
        let k = lqr_gain(&scalar(0.5), &scalar(1.0), &scalar(1.0), &scalar(1.0)).unwrap();
        assert!((k[(0, 0)] - k_ref).abs() < 1e-9);
        assert!((0.5 + k[(0, 0)]).abs() < 1.0);
    }

    #[test]
    fn uncontrollable_pair_diverges() {
        let a = DMatrix::identity(2, 2);
        let b = DMatrix::zeros(2, 1);
        let err = lqr_gain(&a, &b, &DMatrix::identity(2, 2), &scalar(1.0)).unwrap_err();
        assert!(matches!(err, Error::RiccatiDiverged(_)));
    }

    #[test]
    fn paper_gain_is_stabilizing() {
        let sys = paper_system_open();
        let r = sys.region(0);
        let q = DMatrix::identity(2, 2);
        let k = lqr_gain(&r.a, &r.b, &q, &scalar(1.0)).unwrap();
        assert!(spectral_radius(&(&r.a + &r.b * &k)) < 1.0);
    }

    #[test]
    fn deadbeat_and_contracting_sets() {
        let x = Polytope::hyperrectangle(&[-1.0, -1.0], &[1.0, 1.0]).unwrap();
        let u = Polytope::hyperrectangle(&[-1.0], &[1.0]).unwrap();
        let k = DMatrix::zeros(1, 2);
        let s = max_admissible_set(&DMatrix::zeros(2, 2), &x, &x, &k, &u, 10).unwrap();
        assert!(s.is_subset_of(&x).unwrap() && x.is_subset_of(&s).unwrap());
        let half = DMatrix::identity(2, 2) * 0.5;
        let s = max_admissible_set(&half, &x, &Polytope::universe(2), &k, &u, 10).unwrap();
        assert!(s.is_subset_of(&x).unwrap() && x.is_subset_of(&s).unwrap());
    }

    #[test]
    fn rotation_needs_iterations() {
        // A 45° contraction rotates box corners outside the box.
        let c = 0.9 * std::f64::consts::FRAC_1_SQRT_2;
        let a = DMatrix::from_row_slice(2, 2, &[c, -c, c, c]);
        let x = Polytope::hyperrectangle(&[-1.0, -1.0], &[1.0, 1.0]).unwrap();
        let u = Polytope::hyperrectangle(&[-1.0], &[1.0]).unwrap();
        let s = max_admissible_set(&a, &x, &x, &DMatrix::zeros(1, 2), &u, 50).unwrap();
        assert!(s.num_halfspaces() > 4);
        for v in s.vertices().unwrap() {
            assert!(s.contains(&(&a * v), 1e-9).unwrap());
        }
    }

    #[test]
    fn paper_terminal_set_is_certified() {
        let sys = paper_system_open();
        let spec = TerminalSpec::synthesize(&sys, &paper_config(12), 0).unwrap();
        assert!(spec.is_certified(&sys).unwrap());
        assert!(spec.xf.max_residual(&DVector::zeros(2)) < 0.0);
        assert!(spec.xf.is_subset_of(sys.domain(0)).unwrap());
        let sys = spec.install(sys).unwrap();
        assert!(sys.validate().is_empty(), "{:?}", sys.validate());
    }
}
