use nalgebra::DVector;
use proptest::prelude::*;

use pwa_mpc::benchmarks::{paper_system, toy_config, toy_system};
use pwa_mpc::geometry::{Halfspace, Polytope};
use pwa_mpc::lp::{LinearProgram, LpResult};
use pwa_mpc::mpc::{feasible_fixed, SwitchingSequence};
use pwa_mpc::policy::{RegionClassifier, Scorer, SequencePolicy};

fn config() -> ProptestConfig {
    ProptestConfig {
        cases: 64,
        ..ProptestConfig::default()
    }
}

/// Bounded 2-D polytope: a box cut by halfspaces that keep the origin inside.
fn polygon() -> impl Strategy<Value = Polytope> {
    (
        1.0..4.0f64,
        prop::collection::vec(((-1.0..1.0f64, -1.0..1.0f64), 0.2..3.0f64), 0..5),
    )
        .prop_filter_map("zero normal", |(r, cuts)| {
            let mut hs = Vec::new();
            for (j, s) in [(0, 1.0), (0, -1.0), (1, 1.0), (1, -1.0)] {
                let mut g = DVector::zeros(2);
                g[j] = s;
                hs.push(Halfspace::new(g, r).ok()?);
            }
            for ((a, b), h) in cuts {
                hs.push(Halfspace::new(DVector::from_vec(vec![a, b]), h).ok()?);
            }
            Polytope::new(2, hs).ok()
        })
}

fn lp_over(p: &Polytope, c: &[f64]) -> LinearProgram {
    let mut lp = LinearProgram::new(c.to_vec());
    for h in p.halfspaces() {
        lp.add_le(h.normal.as_slice(), h.offset);
    }
    lp
}

proptest! {
    #![proptest_config(config())]

    #[test]
    fn lp_optimum_is_the_best_vertex(p in polygon(), c in (-2.0..2.0f64, -2.0..2.0f64)) {
        let c = [c.0, c.1];
        let res = lp_over(&p, &c).solve().unwrap();
        let LpResult::Optimal { x, value } = res else {
            panic!("bounded nonempty LP reported {res:?}");
        };
        let x = DVector::from_vec(x);
        prop_assert!(p.max_residual(&x) <= 1e-7);
        let best = p
            .vertices()
            .unwrap()
            .iter()
            .map(|v| c[0] * v[0] + c[1] * v[1])
            .fold(f64::INFINITY, f64::min);
        prop_assert!((value - best).abs() <= 1e-7 * (1.0 + best.abs()));
    }

    #[test]
    fn vertices_are_feasible_and_tight(p in polygon()) {
        let verts = p.vertices().unwrap();
        prop_assert!(verts.len() >= 3);
        for v in verts {
            prop_assert!(p.max_residual(v) <= 1e-9);
            let active = p.halfspaces().iter().filter(|h| h.residual(v).abs() <= 1e-9).count();
            prop_assert!(active >= 2);
        }
    }

    #[test]
    fn eroded_points_keep_their_ball_inside(p in polygon(), r in 0.0..0.15f64, t in (0.0..1.0f64, 0.0..1.0f64)) {
        let e = p.erode(r);
        prop_assume!(e.has_interior(1e-9).unwrap());
        // A point of the eroded set: a convex combination of its vertices.
        let ev = e.vertices().unwrap();
        let k = ev.len();
        let x = &ev[0] * (1.0 - t.0) + (&ev[(1 + (t.1 * (k - 1) as f64) as usize) % k] * t.0);
        for corner in [[1.0, 1.0], [1.0, -1.0], [-1.0, 1.0], [-1.0, -1.0]] {
            let y = &x + DVector::from_vec(vec![r * corner[0], r * corner[1]]);
            prop_assert!(p.max_residual(&y) <= 1e-9);
        }
    }

    #[test]
    fn fixed_sequence_feasibility_is_convex(
        xa in -1.0..1.0f64,
        xb in -1.0..1.0f64,
        seq in prop::collection::vec(0usize..2, 4),
        t in 0.0..1.0f64,
    ) {
        let sys = toy_system();
        let cfg = toy_config(3).with_tightening(0.0);
        let seq = SwitchingSequence::new(seq);
        let f = |x: f64| feasible_fixed(&sys, &cfg, &DVector::from_element(1, x), &seq).unwrap();
        prop_assume!(f(xa) && f(xb));
        prop_assert!(f((1.0 - t) * xa + t * xb));
    }

    #[test]
    fn states_lie_in_their_winners_cell(
        scorers in prop::collection::vec(((-2.0..2.0f64, -2.0..2.0f64), -3.0..3.0f64), 1..6),
        x in (-6.0..1.0f64, -10.0..10.0f64),
    ) {
        let sys = paper_system();
        let x = DVector::from_vec(vec![x.0, x.1]);
        prop_assume!(sys.domain(0).contains(&x, 0.0).unwrap());
        let rc = RegionClassifier {
            region_index: 0,
            scorers: scorers
                .iter()
                .enumerate()
                .map(|(k, ((a, b), c))| Scorer {
                    w: DVector::from_vec(vec![*a, *b]),
                    b: *c,
                    label: Some(SwitchingSequence::new(vec![0, k % 2])),
                })
                .collect(),
        };
        let s = rc.winner(&x);
        let mine = rc.cell(s, sys.domain(0)).unwrap().expect("the winner has a cell");
        prop_assert!(mine.contains(&x, 1e-9).unwrap());
        let top = rc.scorers[s].score(&x);
        for t in 0..rc.scorers.len() {
            if t == s {
                continue;
            }
            if let Some(cell) = rc.cell(t, sys.domain(0)).unwrap() {
                if cell.contains(&x, 0.0).unwrap() {
                    prop_assert!(rc.scorers[t].score(&x) >= top - 1e-9);
                }
            }
        }
    }

    #[test]
    fn policy_json_round_trip_predicts_identically(
        scorers in prop::collection::vec(((-2.0..2.0f64, -2.0..2.0f64), -3.0..3.0f64), 1..5),
        points in prop::collection::vec((-6.0..8.0f64, -10.0..10.0f64), 20),
    ) {
        let sys = paper_system();
        let mut pol = SequencePolicy::constant(&sys, vec![None, Some(SwitchingSequence::constant(1, 2))]);
        pol.regions[0].scorers = scorers
            .iter()
            .enumerate()
            .map(|(k, ((a, b), c))| Scorer {
                w: DVector::from_vec(vec![*a, *b]),
                b: *c,
                label: (k % 3 != 0).then(|| SwitchingSequence::new(vec![0, k % 2, 0])),
            })
            .collect();
        let text = serde_json::to_string(&pol.to_json()).unwrap();
        let back = SequencePolicy::from_json(serde_json::from_str(&text).unwrap()).unwrap();
        prop_assert_eq!(&back, &pol);
        for (a, b) in points {
            let x = DVector::from_vec(vec![a, b]);
            if sys.state_set().contains(&x, 0.0).unwrap() {
                prop_assert_eq!(back.predict(&sys, &x).unwrap(), pol.predict(&sys, &x).unwrap());
            }
        }
    }
}
