use std::sync::Arc;

use proptest::prelude::*;

use ipslab_core::configuration::{resample_outside, sample_poisson};
use ipslab_core::estimators::{coarse_path, conditional_a_k, estimate_var_ut};
use ipslab_core::field::{builtin_constant, builtin_lonely_particle, eval_a};
use ipslab_core::inequalities::{check_chernoff, check_lemma42, random_spectral_problem};
use ipslab_core::observable::{CenteredVoid, Linear, Plateau};
use ipslab_core::*;

fn observable(kind: u8, dom: &Domain) -> Observable {
    let u: Arc<dyn LocalFunction> = match kind % 4 {
        0 => Arc::new(Linear::new(Profile::Indicator { side: 1.5 }, 64.0).unwrap()),
        1 => Arc::new(Linear::new(Profile::Bump { radius: 1.2 }, 64.0).unwrap()),
        2 => Arc::new(Plateau::default()),
        _ => Arc::new(CenteredVoid { side: 1.0, rho: 1.0 }),
    };
    Observable::centered(u, dom)
}

fn poisson(dim: usize, side: f64, rho: f64, seed: u64) -> Configuration {
    let dom = Domain::periodic(dim, side).unwrap();
    sample_poisson(&dom, &PoissonParams::new(rho, 0), &Stream::new(seed)).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn resample_outside_keeps_inside_points(seed in 0u64..10_000, dim in 1usize..=2, c in 0.0f64..12.0, k in 0.5f64..6.0) {
        let mu = poisson(dim, 12.0, 1.0, seed);
        let q = Region::cube(&vec![c; dim], k);
        let nu = resample_outside(&mu, &q, &PoissonParams::new(1.0, 0), &Stream::new(seed + 1)).unwrap();
        prop_assert_eq!(mu.restrict(&q).canonical(), nu.restrict(&q).canonical());
    }

    #[test]
    fn observables_see_only_their_support(seed in 0u64..10_000, dim in 1usize..=2, kind in 0u8..4) {
        let mu = poisson(dim, 10.0, 1.5, seed);
        let u = observable(kind, mu.domain());
        prop_assert_eq!(u.eval(&mu), u.eval(&mu.restrict(&u.support())));
    }

    #[test]
    fn observables_are_stationary(seed in 0u64..10_000, dim in 1usize..=2, kind in 0u8..4, h in prop::collection::vec(-20.0f64..20.0, 2)) {
        let mu = poisson(dim, 10.0, 1.5, seed);
        let u = observable(kind, mu.domain());
        let h = &h[..dim];
        let a = u.eval(&mu);
        let b = u.shifted(h, mu.domain()).eval(&mu.transport(h));
        prop_assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0), "{} vs {}", a, b);
    }

    #[test]
    fn configurations_round_trip_exactly(seed in 0u64..10_000, dim in 1usize..=3) {
        let mu = poisson(dim, 5.0, 2.0, seed);
        let back = Configuration::from_json(&mu.to_json().unwrap()).unwrap();
        prop_assert_eq!(back.coords(), mu.coords());
        let mut buf = Vec::new();
        mu.write_csv(&mut buf).unwrap();
        let back = Configuration::read_csv(*mu.domain(), buf.as_slice()).unwrap();
        prop_assert_eq!(back.coords(), mu.coords());
    }

    #[test]
    fn coarse_paths_are_valid_and_short(y in prop::collection::vec(-1000i64..=1000, 1..=3), k in 1i64..20) {
        let p = coarse_path(&y, k).unwrap();
        prop_assert!(p.check().is_ok());
        let expect = y.iter().map(|c| (c.abs() + k - 1) / k).max().unwrap() as usize;
        prop_assert_eq!(p.len(), expect);
    }

    #[test]
    fn far_points_do_not_change_the_field(seed in 0u64..10_000, dim in 1usize..=2, r in 1.0001f64..3.0, dir in 0.0f64..std::f64::consts::TAU) {
        let mu = poisson(dim, 12.0, 0.7, seed);
        let x = vec![6.0; dim];
        let f = builtin_lonely_particle();
        let before = eval_a(&f, &mu, &x);
        let mut far = x.clone();
        if dim == 1 {
            far[0] += r * dir.cos().signum();
        } else {
            far[0] += r * dir.cos();
            far[1] += r * dir.sin();
        }
        let mut nu = mu.clone();
        nu.push(&far).unwrap();
        prop_assert_eq!(eval_a(&f, &nu, &x), before);
    }

    #[test]
    fn dynamics_conserve_particles(seed in 0u64..10_000, chain in any::<bool>(), t in 0.0f64..0.5) {
        let mu = poisson(1, 15.0, 0.8, seed);
        let lonely = builtin_lonely_particle();
        let constant = builtin_constant(0.5).unwrap();
        let (field, scheme): (&dyn CoefficientField, _) = if chain {
            (&lonely, SchemeParams::chain_auto(1, 2.0, 0.1))
        } else {
            (&constant, SchemeParams::exact())
        };
        let out = evolve(&mu, field, t, &scheme, &Stream::new(seed)).unwrap();
        prop_assert_eq!(out.len(), mu.len());
        prop_assert!(out.points().all(|p| mu.domain().contains(p)));
    }

    #[test]
    fn chernoff_is_finite_in_log_space(rho in 0.1f64..10.0, l in 1.0f64..1e5, delta in 0.01f64..0.99) {
        let r = check_chernoff(rho, l, 10.0 * l, delta, 1).unwrap();
        prop_assert!(r.param("ln_lhs").unwrap().is_finite() && r.param("ln_rhs").unwrap().is_finite());
    }

    #[test]
    fn perturbed_eigenvalue_bound_holds(seed in 0u64..10_000, n in 2usize..10, frac in 0.01f64..0.99) {
        let p = random_spectral_problem(n, &mut Stream::new(seed).rng()).unwrap();
        let eps = frac * p.gap() / (2.0 * p.v_sup());
        let r = check_lemma42(&p, eps).unwrap();
        prop_assert!(r.pass, "{:?}", r);
    }
}

fn ensemble(field: &dyn CoefficientField) -> Ensemble<'_> {
    Ensemble {
        domain: Domain::periodic(1, 20.0).unwrap(),
        rho: 1.0,
        field,
        scheme: SchemeParams::exact(),
    }
}

#[test]
fn estimates_are_reproducible_and_consistent() {
    let f = builtin_constant(0.5).unwrap();
    let ens = ensemble(&f);
    let u = observable(0, &ens.domain);
    let run = |seed| estimate_var_ut(&u, &ens, 1.0, &VarOptions::new(200, 2, seed)).unwrap();
    let (a, b, c) = (run(1), run(1), run(2));
    assert_eq!(a, b);
    assert_ne!(a.estimate, c.estimate);
    assert!((a.stderr * a.stderr * a.n_outer as f64 - a.variance).abs() <= 1e-12 * a.variance);
    assert_eq!((a.n_outer, a.n_inner, a.seed), (200, 2, 1));
}

#[test]
fn conditioning_contracts_second_moment() {
    // E[(A_K u_t)²] ≤ E[u_t²] up to Monte Carlo error
    let f = builtin_constant(0.5).unwrap();
    let ens = ensemble(&f);
    let u = observable(0, &ens.domain);
    let t = 2.0;
    let n = 400;
    let root = Stream::new(9);
    for k in [2.0, 4.0] {
        let (mut ak2, mut ut2) = (Vec::new(), Vec::new());
        for i in 0..n {
            let st = root.derive(Tag::Outer, i);
            let mu = ens.sample(&st).unwrap();
            // two independent copies make the squares unbiased
            let a0 = conditional_a_k(&u, &ens, t, &mu, k, 1, 1, &st.derive(Tag::Replica, 0)).unwrap();
            let a1 = conditional_a_k(&u, &ens, t, &mu, k, 1, 1, &st.derive(Tag::Replica, 1)).unwrap();
            ak2.push(a0 * a1);
            let e0 = estimate_ut(&u, &mu, ens.field, t, &ens.scheme, 1, &st.derive(Tag::Replica, 2)).unwrap();
            let e1 = estimate_ut(&u, &mu, ens.field, t, &ens.scheme, 1, &st.derive(Tag::Replica, 3)).unwrap();
            ut2.push(e0 * e1);
        }
        let diff: Vec<f64> = ak2.iter().zip(&ut2).map(|(a, b)| a - b).collect();
        let (m, se) = stats::mean_stderr(&diff);
        assert!(m <= 3.0 * se, "K={k}: E[(A_K u)²] − E[u_t²] = {m} ± {se}");
    }
}
