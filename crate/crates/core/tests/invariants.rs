use proptest::prelude::*;

use tricomp::bvp::{solve, Grid, Profile, TridiagonalSystem};
use tricomp::model::{from_monotone, reaction_monotone, to_monotone};
use tricomp::pde::{lattice_gaussian, KernelSpec};
use tricomp::system_waves::aligned_distance;
use tricomp::{classify_regime, rates, ModelParams, RegimeVariant};

fn params() -> impl Strategy<Value = ModelParams> {
    (0.01f64..0.99, 1.01f64..6.0, 0.01f64..3.0, 0.1f64..5.0)
        .prop_map(|(a1, a2, r, tau)| ModelParams::new(a1, a2, r, tau).unwrap())
}

proptest! {
    #[test]
    fn monotone_change_of_variables_is_involutive(u in -2.0f64..2.0, v in -2.0f64..2.0, w in -2.0f64..2.0) {
        let m = to_monotone(u, v, w);
        let back = from_monotone(m[0], m[1], m[2]);
        for (b, x) in back.iter().zip([u, v, w]) {
            prop_assert!((b - x).abs() <= 4.0 * f64::EPSILON);
        }
    }

    #[test]
    fn reaction_vanishes_at_equilibria(p in params()) {
        prop_assert!(reaction_monotone(&p, 0.0, 0.0, 0.0).iter().all(|f| f.abs() < 1e-15));
        prop_assert!(reaction_monotone(&p, 1.0, 1.0, 1.0).iter().all(|f| f.abs() < 1e-15));
    }

    #[test]
    fn classifier_partitions_h1(p in params()) {
        let v = classify_regime(&p).variant;
        let h2a = p.r * (p.a2 - 1.0) < 1.0 - p.a1;
        let h2b = !h2a && 1.0 - p.a1 >= p.r * (p.a1 * p.a2 - 1.0);
        let expected = if h2a { RegimeVariant::H2a } else if h2b { RegimeVariant::H2b } else { RegimeVariant::Uncovered };
        prop_assert_eq!(v, expected);
    }

    #[test]
    fn characteristic_identity(p in params(), extra in 0.0f64..3.0) {
        let c = p.c_min() + extra;
        let t = rates(&p, c).unwrap();
        let l = t.lambda_minus.unwrap();
        prop_assert!((l * (c - l) - (1.0 - p.a1)).abs() < 1e-9);
        for (mu, kappa) in [(t.mu1, 1.0), (t.mu2, p.r * (p.a2 - 1.0)), (t.mu3, 1.0 / p.tau)] {
            prop_assert!(mu < 0.0);
            prop_assert!((mu * mu - c * mu - kappa).abs() < 1e-10 * (1.0 + kappa));
        }
        prop_assert!(t.slowest_plus() >= t.mu1.min(t.mu2).min(t.mu3));
    }

    #[test]
    fn below_minimal_speed_roots_are_complex(p in params(), frac in 0.0f64..0.999) {
        let t = rates(&p, frac * p.c_min()).unwrap();
        prop_assert!(t.complex_roots && t.lambda_minus.is_none());
    }

    #[test]
    fn thomas_solves_dominant_systems(
        rows in prop::collection::vec((-1.0f64..1.0, -1.0f64..1.0, -5.0f64..5.0), 3..60)
    ) {
        let n = rows.len();
        let sub: Vec<f64> = rows.iter().map(|r| r.0).collect();
        let sup: Vec<f64> = rows.iter().map(|r| r.1).collect();
        let diag: Vec<f64> = rows.iter().map(|r| -(2.5 + r.0.abs() + r.1.abs())).collect();
        let rhs: Vec<f64> = rows.iter().map(|r| r.2).collect();
        let sys = TridiagonalSystem { sub, diag, sup, rhs: rhs.clone() };
        let x = solve(&sys).unwrap();
        let ax = sys.apply(&x);
        for i in 0..n {
            prop_assert!((ax[i] - rhs[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn kernel_mass_matches_closed_form(tau in 0.2f64..5.0, steps in 5usize..60) {
        let k = KernelSpec::new(tau, tau / steps as f64).unwrap();
        let q = k.quadrature_step / tau;
        let exact = 1.0 - (-(k.intervals() as f64) * q).exp();
        prop_assert!((k.mass() - exact).abs() < 1e-12);
        prop_assert!((0.9999..=1.0).contains(&k.mass()));
    }

    #[test]
    fn lattice_heat_kernel_is_a_probability(x in 0.0f64..400.0) {
        let g = lattice_gaussian(x);
        let total = g[0] + 2.0 * g[1..].iter().sum::<f64>();
        prop_assert!(g.iter().all(|v| *v >= 0.0));
        prop_assert!((total - 1.0).abs() < 1e-10);
    }

    #[test]
    fn alignment_removes_translations(shift in -5.0f64..5.0) {
        let g = Grid::with_max_spacing(40.0, 0.05).unwrap();
        let f = |s: f64| move |x: f64| 1.0 / (1.0 + (-(x - s)).exp());
        let a = Profile::from_fn(g, 0.0, 1.0, f(0.0)).unwrap();
        let b = Profile::from_fn(g, 0.0, 1.0, f(shift)).unwrap();
        prop_assert!(aligned_distance(&[a], &[b]).unwrap() < 1e-3);
    }
}
