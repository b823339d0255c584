//! Reference systems: the two-region 2-D example and a 1-D toy.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};

use crate::geometry::{Halfspace, Polytope};
use crate::mpc::{MpcConfig, Norm};
use crate::pwa::{PwaSystem, Region};
use crate::terminal::TerminalSpec;

/// Radius of the tightening ball used for the 2-D example.
pub const PAPER_TIGHTENING: f64 = 0.1;

/// The 2-D example without terminal ingredients.
pub fn paper_system_open() -> PwaSystem {
    let b = DMatrix::from_column_slice(2, 1, &[0.1, 1.0]);
    let p1 = Polytope::new(
        2,
        vec![Halfspace::new(DVector::from_column_slice(&[1.0, 0.0]), 1.0).unwrap()],
    )
    .unwrap();
    let p2 = Polytope::new(
        2,
        vec![Halfspace::strict(DVector::from_column_slice(&[-1.0, 0.0]), -1.0).unwrap()],
    )
    .unwrap();
    let regions = vec![
        Region {
            polytope: p1,
            a: DMatrix::from_row_slice(2, 2, &[1.0, 0.2, 0.0, 1.0]),
            b: b.clone(),
            c: DVector::zeros(2),
        },
        Region {
            polytope: p2,
            a: DMatrix::from_row_slice(2, 2, &[0.5, 0.2, 0.0, 1.0]),
            b,
            c: DVector::from_column_slice(&[0.5, 0.0]),
        },
    ];
    let d = [
        vec![-1.0, 1.0],
        vec![-3.0, -1.0],
        vec![0.2, 1.0],
        vec![-1.0, 0.0],
        vec![1.0, 0.0],
        vec![0.0, -1.0],
    ];
    let e = [15.0, 25.0, 9.0, 6.0, 8.0, 10.0];
    let x = Polytope::from_rows(&d, &e).unwrap();
    let u = Polytope::hyperrectangle(&[-3.0], &[3.0]).unwrap();
    PwaSystem::new(regions, x, u, None, BTreeMap::new()).unwrap()
}

/// `Q = P = I`, `R = 1`, 1-norms, tightening radius 0.1.
pub fn paper_config(horizon: usize) -> MpcConfig {
    MpcConfig::new(
        horizon,
        DMatrix::identity(2, 2),
        DMatrix::identity(1, 1),
        DMatrix::identity(2, 2),
        [Norm::One; 3],
        PAPER_TIGHTENING,
    )
    .unwrap()
}

/// The 2-D example with `Xf` the maximal admissible set of the LQR loop in region 1.
pub fn paper_system() -> PwaSystem {
    let sys = paper_system_open();
    let spec = TerminalSpec::synthesize(&sys, &paper_config(1), 0).unwrap();
    spec.install(sys).unwrap()
}

/// `x⁺ = 0.5x + u` on `x ≤ 0`, `x⁺ = x + u` on `x > 0`, `X = [-1, 1]`,
/// `U = [-0.5, 0.5]`, `Xf = [-0.1, 0.1]`.
pub fn toy_system() -> PwaSystem {
    let one = |v: f64| DMatrix::from_element(1, 1, v);
    let regions = vec![
        Region {
            polytope: Polytope::new(
                1,
                vec![Halfspace::new(DVector::from_element(1, 1.0), 0.0).unwrap()],
            )
            .unwrap(),
            a: one(0.5),
            b: one(1.0),
            c: DVector::zeros(1),
        },
        Region {
            polytope: Polytope::new(
                1,
                vec![Halfspace::strict(DVector::from_element(1, -1.0), 0.0).unwrap()],
            )
            .unwrap(),
            a: one(1.0),
            b: one(1.0),
            c: DVector::zeros(1),
        },
    ];
    let mut gains = BTreeMap::new();
    gains.insert(0, one(0.0));
    gains.insert(1, one(-0.5));
    PwaSystem::new(
        regions,
        Polytope::hyperrectangle(&[-1.0], &[1.0]).unwrap(),
        Polytope::hyperrectangle(&[-0.5], &[0.5]).unwrap(),
        Some(Polytope::hyperrectangle(&[-0.1], &[0.1]).unwrap()),
        gains,
    )
    .unwrap()
}

/// Unit weights, 1-norms, tightening radius 0.02.
pub fn toy_config(horizon: usize) -> MpcConfig {
    MpcConfig::new(
        horizon,
        DMatrix::identity(1, 1),
        DMatrix::identity(1, 1),
        DMatrix::identity(1, 1),
        [Norm::One; 3],
        0.02,
    )
    .unwrap()
}
