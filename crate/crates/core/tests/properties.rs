use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use switchmfg::diagnostics::{estimate_report, monotonicity_gap};
use switchmfg::grid::integrate;
use switchmfg::limit::switching_currents;
use switchmfg::*;

fn model(seed: u64, dim: usize, n: usize, d: usize, family: PenaltyFamily) -> ModelSpec {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let grid = PeriodicGrid::new(dim, n).unwrap();
    let phase: f64 = rng.random_range(0.0..1.0);
    let amp: f64 = rng.random_range(0.0..0.4);
    let potentials = (0..d)
        .map(|i| grid.from_fn(|x| amp * (1.0 + (2.0 * std::f64::consts::PI * (x[0] + phase + i as f64 / d as f64)).cos())))
        .collect();
    let psi: f64 = rng.random_range(0.02..0.5);
    let costs = SwitchingCosts::uniform(&grid, d, psi).unwrap();
    let coupling = if rng.random_bool(0.5) {
        CouplingLaw::Log
    } else {
        CouplingLaw::Power { alpha: rng.random_range(0.1..0.6) }
    };
    let h = HamiltonianSpec::quadratic(potentials).unwrap();
    ModelSpec::new(h, coupling, costs, family, rng.random_range(0.5..1.5)).unwrap()
}

fn state(seed: u64, m: &ModelSpec) -> SolverState {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let grid = m.grid;
    let mut f = |lo: f64, hi: f64| grid.field((0..grid.len()).map(|_| rng.random_range(lo..hi)).collect()).unwrap();
    let d = m.modes();
    let u = (0..d).map(|_| f(-0.5, 0.5)).collect();
    let theta = (0..d).map(|_| f(0.1, 3.0)).collect();
    SolverState::new(u, theta).unwrap()
}

fn family() -> impl Strategy<Value = PenaltyFamily> {
    prop_oneof![
        Just(PenaltyFamily::Quadratic),
        Just(PenaltyFamily::Cubic),
        Just(PenaltyFamily::Exponential)
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn transport_rows_integrate_to_mass_defect(
        seed in any::<u64>(), d in 1usize..4, fam in family(),
        lambda in 0.0f64..=1.0, eps in 1e-3f64..1.0, sigma in 0.0f64..0.1,
    ) {
        let m = model(seed, 1, 12, d, fam);
        let s = state(seed, &m);
        let r = residual(&m, &s, StepParams::new(lambda, eps, sigma)).unwrap();
        let lhs: f64 = r.fp.iter().map(integrate).sum();
        let rhs: f64 = s.theta.iter().map(integrate).sum::<f64>() - d as f64 * m.source;
        let scale: f64 = r.fp.iter().map(|f| f.values().iter().map(|v| v.abs()).sum::<f64>()).sum::<f64>() / 12.0;
        prop_assert!((lhs - rhs).abs() <= 1e-12 * 12.0 * (1.0 + scale), "{lhs} {rhs} {scale}");
    }

    #[test]
    fn estimates_have_the_right_signs(seed in any::<u64>(), d in 1usize..4, fam in family(), eps in 1e-3f64..1.0) {
        let m = model(seed, 1, 12, d, fam);
        let s = state(seed, &m);
        let r = estimate_report(&m, &s, eps).unwrap();
        for e in &r.modes {
            for v in [e.mass, e.kinetic_energy, e.penalty_budget, e.gradient_energy, e.hessian_energy, e.fisher] {
                prop_assert!(v >= 0.0 && v.is_finite());
            }
            prop_assert!(e.min_theta > 0.0);
        }
    }

    #[test]
    fn monotonicity_terms_have_the_right_signs(seed in any::<u64>(), d in 1usize..4, fam in family(), eps in 1e-3f64..1.0) {
        let m = model(seed, 1, 12, d, fam);
        let a = state(seed, &m);
        let b = state(seed.wrapping_add(1), &m);
        let g = monotonicity_gap(&m, &a, &b, eps).unwrap();
        prop_assert!(g.coupling > 0.0);
        prop_assert!(g.gradient >= 0.0);
        let scale = 1.0 + g.coupling.abs();
        prop_assert!(g.hamiltonian_cross <= 1e-12 * scale);
        prop_assert!(g.penalty_cross <= 1e-12 * scale);
        let same = monotonicity_gap(&m, &a, &a, eps).unwrap();
        prop_assert_eq!((same.coupling, same.gradient), (0.0, 0.0));
    }

    #[test]
    fn currents_are_nonnegative_and_supported_on_active_sets(seed in any::<u64>(), d in 2usize..4, eps in 1e-3f64..1.0) {
        let m = model(seed, 1, 12, d, PenaltyFamily::Cubic);
        let s = state(seed, &m);
        let nu = switching_currents(&m, &s, eps).unwrap();
        for (i, j) in nu.pairs() {
            let psi = m.costs.get(i, j);
            for x in 0..m.grid.len() {
                let v = nu.get(i, j)[x];
                prop_assert!(v >= 0.0);
                if s.u[i][x] - s.u[j][x] - psi[x] < 0.0 {
                    prop_assert_eq!(v, 0.0);
                }
            }
        }
    }

    #[test]
    fn jacobian_matches_differences(seed in any::<u64>(), d in 1usize..3, fam in family(), dim in 1usize..3) {
        let n = if dim == 1 { 10 } else { 5 };
        let m = model(seed, dim, n, d, fam);
        let s = state(seed, &m);
        let params = StepParams::new(0.9, 0.2, 0.01);
        let j = jacobian(&m, &s, params).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = s.to_vec();
        let v: Vec<f64> = (0..x.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let t = 1e-5;
        let at = |sign: f64| {
            let y: Vec<f64> = x.iter().zip(&v).map(|(a, b)| a + sign * t * b).collect();
            residual(&m, &SolverState::from_vec(&m.grid, d, &y).unwrap(), params).unwrap().to_vec()
        };
        let (rp, rm) = (at(1.0), at(-1.0));
        let jv = j.apply(&v);
        let num: f64 = rp.iter().zip(&rm).zip(&jv).map(|((p, q), a)| ((p - q) / (2.0 * t) - a).powi(2)).sum();
        let den: f64 = jv.iter().map(|a| a * a).sum();
        prop_assert!((num / den).sqrt() <= 1e-6);
    }
}
