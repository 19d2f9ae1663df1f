use crm_core::contribution::{capital_allocation, extreme_measure, risk_contribution, tail_kappa};
use crm_core::mc_estimators::{alpha_var_mc, beta_var_mc};
use crm_core::numeric::nnls;
use crm_core::optimize::support_value;
use crm_core::sampling::{cell_indices, generate_draws, DrawScheme};
use crm_core::scenario_risk::{beta_var_exact, weighted_utility, weighted_var};
use crm_core::sharing::{limit_trades_from_contributions, Desk, FirmInstance, FirmLimit};
use crm_core::{Atom, JointPanel, ScenarioDistribution, WeightingMeasure};
use proptest::prelude::*;

const TOL: f64 = 1e-9;

fn measure() -> impl Strategy<Value = WeightingMeasure> {
    prop_oneof![
        (0.01f64..=1.0).prop_map(|l| WeightingMeasure::tail(l).unwrap()),
        (1usize..=12).prop_flat_map(|a| (Just(a), 1..=a)).prop_map(|(a, b)| WeightingMeasure::beta(a as f64, b as f64).unwrap()),
        (1.0f64..12.0).prop_map(|a| WeightingMeasure::alpha(a).unwrap()),
        (1.5f64..9.0, 0.2f64..1.4).prop_map(|(a, b)| WeightingMeasure::beta(a, b.min(a - 0.1)).unwrap()),
        (0.05f64..0.95, 0.01f64..0.5, 0.5f64..=1.0).prop_map(|(w, l1, l2)| {
            WeightingMeasure::mixture(vec![Atom { level: l1, weight: w }, Atom { level: l2, weight: 1.0 - w }]).unwrap()
        }),
    ]
}

/// Paired scenario vectors with shared probabilities.
fn paired(max: usize) -> impl Strategy<Value = (Vec<f64>, Vec<f64>, Vec<f64>)> {
    (1..=max).prop_flat_map(|n| {
        (
            prop::collection::vec(-10.0f64..10.0, n),
            prop::collection::vec(-10.0f64..10.0, n),
            prop::collection::vec(0.05f64..1.0, n),
        )
            .prop_map(|(x, y, w)| {
                let s: f64 = w.iter().sum();
                (x, y, w.iter().map(|v| v / s).collect())
            })
    })
}

fn risk(x: &[f64], p: &[f64], m: &WeightingMeasure) -> f64 {
    weighted_var(&ScenarioDistribution::new(x.to_vec(), p.to_vec()).unwrap(), m).unwrap()
}

fn scale(x: &[f64], y: &[f64]) -> f64 {
    1.0 + x.iter().chain(y).fold(0.0_f64, |a, v| a.max(v.abs()))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn coherence((x, y, p) in paired(25), m in measure(), c in 0.0f64..5.0, t in -5.0f64..5.0) {
        let tol = TOL * scale(&x, &y) * 10.0;
        let sum: Vec<f64> = x.iter().zip(&y).map(|(a, b)| a + b).collect();
        prop_assert!(risk(&sum, &p, &m) <= risk(&x, &p, &m) + risk(&y, &p, &m) + tol);
        let dominated: Vec<f64> = x.iter().zip(&y).map(|(a, b)| a.min(*b)).collect();
        prop_assert!(risk(&dominated, &p, &m) >= risk(&x, &p, &m) - tol);
        let scaled: Vec<f64> = x.iter().map(|a| c * a).collect();
        prop_assert!((risk(&scaled, &p, &m) - c * risk(&x, &p, &m)).abs() <= tol);
        let shifted: Vec<f64> = x.iter().map(|a| a + t).collect();
        prop_assert!((risk(&shifted, &p, &m) - (risk(&x, &p, &m) - t)).abs() <= tol);
    }

    #[test]
    fn comonotone_additivity((x, _, p) in paired(25), m in measure()) {
        let y: Vec<f64> = x.iter().map(|v| 0.3 * v * v * v + v).collect();
        let sum: Vec<f64> = x.iter().zip(&y).map(|(a, b)| a + b).collect();
        let tol = TOL * scale(&x, &y) * 10.0;
        prop_assert!((risk(&sum, &p, &m) - risk(&x, &p, &m) - risk(&y, &p, &m)).abs() <= tol);
    }

    #[test]
    fn law_invariance((x, _, p) in paired(20), m in measure(), rot in 0usize..20, split in 0usize..20) {
        let n = x.len();
        let k = rot % n;
        let xr: Vec<f64> = x[k..].iter().chain(&x[..k]).copied().collect();
        let pr: Vec<f64> = p[k..].iter().chain(&p[..k]).copied().collect();
        let base = risk(&x, &p, &m);
        prop_assert!((risk(&xr, &pr, &m) - base).abs() <= TOL * scale(&x, &x));
        // Splitting one atom into two halves changes nothing.
        let j = split % n;
        let mut xs = x.clone();
        let mut ps = p.clone();
        xs.push(x[j]);
        ps[j] *= 0.5;
        ps.push(ps[j]);
        prop_assert!((risk(&xs, &ps, &m) - base).abs() <= TOL * scale(&x, &x));
    }

    #[test]
    fn distortion_shape(m in measure(), a in 0.0f64..=1.0, b in 0.0f64..=1.0) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        prop_assert!(m.psi(hi.max(1e-9)).unwrap() <= m.psi(lo.max(1e-9)).unwrap() * (1.0 + 1e-9) + 1e-9);
        prop_assert!((m.big_psi(1.0).unwrap() - 1.0).abs() <= 1e-9);
        prop_assert!(m.big_psi(a).unwrap() >= a - 1e-9);
        let mid = m.big_psi(0.5 * (lo + hi)).unwrap();
        prop_assert!(mid >= 0.5 * (m.big_psi(lo).unwrap() + m.big_psi(hi).unwrap()) - 1e-9);
    }

    #[test]
    fn order_statistic_identity((x, _, p) in paired(20), a in 1usize..=12, b0 in 1usize..=12) {
        let b = b0.min(a);
        let d = ScenarioDistribution::new(x.clone(), p).unwrap();
        let by_law = weighted_var(&d, &WeightingMeasure::beta(a as f64, b as f64).unwrap()).unwrap();
        prop_assert!((beta_var_exact(&d, a, b).unwrap() - by_law).abs() <= TOL * scale(&x, &x));
    }

    #[test]
    fn extreme_measure_is_in_the_determining_set((x, w, p) in paired(25), m in measure()) {
        let d = ScenarioDistribution::new(w.clone(), p.clone()).unwrap();
        let q = extreme_measure(&d, &m).unwrap();
        let total: f64 = q.weights.iter().sum();
        prop_assert!((total - 1.0).abs() <= 1e-12);
        prop_assert!(q.weights.iter().all(|v| *v >= 0.0));
        let ux = weighted_utility(&ScenarioDistribution::new(x.clone(), p.clone()).unwrap(), &m).unwrap();
        prop_assert!(q.expectation(&x).unwrap() >= ux - TOL * scale(&x, &w));
        prop_assert!((q.expectation(&w).unwrap() - weighted_utility(&d, &m).unwrap()).abs() <= TOL * scale(&w, &w));
    }

    #[test]
    fn contributions((x, w, p) in paired(25), m in measure()) {
        let tol = TOL * scale(&x, &w);
        prop_assert!((risk_contribution(&w, &w, &p, &m).unwrap() - risk(&w, &p, &m)).abs() <= tol);
        prop_assert!(risk_contribution(&x, &w, &p, &m).unwrap() <= risk(&x, &p, &m) + tol);
        let rest: Vec<f64> = w.iter().zip(&x).map(|(a, b)| a - b).collect();
        let alloc = capital_allocation(&[x.clone(), rest], &p, &m).unwrap();
        prop_assert!(alloc.residual.abs() <= 1e-10 * scale(&x, &w));
        prop_assert!(alloc.contributions[0] <= risk(&x, &p, &m) + tol);
    }

    #[test]
    fn kappa_bounds_and_monotone_invariance((x, w, p) in paired(25), m in measure()) {
        let ux = weighted_utility(&ScenarioDistribution::new(x.clone(), p.clone()).unwrap(), &m).unwrap();
        prop_assume!(ux < -1e-6);
        let k = tail_kappa(&x, &w, &p, &m).unwrap();
        prop_assert!(k <= 1.0 + 1e-9);
        let cube: Vec<f64> = w.iter().map(|v| v * v * v).collect();
        let expo: Vec<f64> = w.iter().map(|v| (v / 10.0).exp()).collect();
        let tol = 1e-9 * (1.0 + k.abs());
        prop_assert!((tail_kappa(&x, &cube, &p, &m).unwrap() - k).abs() <= tol);
        prop_assert!((tail_kappa(&x, &expo, &p, &m).unwrap() - k).abs() <= tol);
    }

    #[test]
    fn dilatation_monotonicity((x, _, p) in paired(30), m in measure(), groups in 1usize..6) {
        // E(X | G) for the partition of scenario indices modulo `groups`.
        let mut cond = vec![0.0; x.len()];
        for g in 0..groups {
            let idx: Vec<usize> = (0..x.len()).filter(|i| i % groups == g).collect();
            let mass: f64 = idx.iter().map(|&i| p[i]).sum();
            if mass > 0.0 {
                let mean = idx.iter().map(|&i| p[i] * x[i]).sum::<f64>() / mass;
                for &i in &idx {
                    cond[i] = mean;
                }
            }
        }
        prop_assert!(risk(&cond, &p, &m) <= risk(&x, &p, &m) + TOL * scale(&x, &x));
    }

    #[test]
    fn supergradient_inequality((x, y, p) in paired(20), m in measure(), h in prop::collection::vec(-2.0f64..2.0, 2), g in prop::collection::vec(-2.0f64..2.0, 2)) {
        let panel = JointPanel::from_columns(vec!["x".into(), "y".into()], &[x.clone(), y.clone()], Some(p)).unwrap();
        let s = support_value(&panel, &h, &m).unwrap();
        let other = support_value(&panel, &g, &m).unwrap();
        let lin = s.value + s.supergradient.iter().zip(g.iter().zip(&h)).map(|(q, (a, b))| q * (a - b)).sum::<f64>();
        prop_assert!(other.value <= lin + TOL * scale(&x, &y) * 10.0);
    }

    #[test]
    fn counter_based_cells(seed in any::<u64>(), k in 0usize..30, l in 0usize..6, parts in 1usize..4) {
        let scheme = DrawScheme::Bootstrap { parts, decay: None };
        let draws = generate_draws(&scheme, 250, 30, 6, seed).unwrap();
        prop_assert_eq!(draws.cell(k, l), &cell_indices(&scheme, 250, 6, seed, k, l).unwrap()[..]);
    }

    #[test]
    fn nnls_optimality(cols in prop::collection::vec(prop::collection::vec(-3.0f64..3.0, 5), 1..4), b in prop::collection::vec(-3.0f64..3.0, 5)) {
        let x = nnls(&cols, &b).unwrap();
        prop_assert!(x.iter().all(|v| *v >= 0.0));
        let r: Vec<f64> = (0..5).map(|i| b[i] - cols.iter().zip(&x).map(|(c, xi)| c[i] * xi).sum::<f64>()).collect();
        // KKT: gradient A^T r is non-positive, and zero on the support.
        for (c, xi) in cols.iter().zip(&x) {
            let g: f64 = c.iter().zip(&r).map(|(a, b)| a * b).sum();
            prop_assert!(g <= 1e-8);
            if *xi > 1e-10 {
                prop_assert!(g.abs() <= 1e-8);
            }
        }
    }

    #[test]
    fn limit_trades_net_to_zero(r in prop::collection::vec(0.0f64..0.3, 3), c in prop::collection::vec(0.05f64..1.0, 3)) {
        let cs: f64 = c.iter().sum();
        let limit = 1.0;
        let desk = |n: &str| Desk {
            name: n.into(),
            panel: JointPanel::from_columns(vec!["a".into()], &[vec![1.0, -1.0]], None).unwrap(),
            rewards: vec![0.0],
            bounds: None,
        };
        let mut alloc: Vec<Vec<f64>> = c.iter().map(|v| vec![limit * v / cs]).collect();
        alloc[2][0] = limit - alloc[0][0] - alloc[1][0];
        let firm = FirmInstance {
            desks: vec![desk("a"), desk("b"), desk("c")],
            limits: vec![FirmLimit { measure: WeightingMeasure::tail(0.5).unwrap(), limit }],
            allocation: alloc.clone(),
        };
        let contrib: Vec<Vec<f64>> = r.iter().map(|v| vec![*v]).collect();
        let a = limit_trades_from_contributions(&firm, &contrib).unwrap();
        prop_assert!((a[0][0] + a[1][0] + a[2][0]).abs() <= 1e-12);
        for n in 0..3 {
            prop_assert!(contrib[n][0] <= alloc[n][0] + a[n][0] + 1e-12);
        }
    }
}

#[test]
fn alpha_estimator_is_unbiased_for_the_empirical_law() {
    let series: Vec<f64> = (0..97).map(|i| ((i * 53) % 97) as f64 / 9.7 - 5.0 + 0.01 * i as f64).collect();
    let d = ScenarioDistribution::uniform(series.clone()).unwrap();
    for (alpha, beta) in [(5usize, 1usize), (10, 3)] {
        let draws = generate_draws(&DrawScheme::UniformHistoric { window: 97 }, 97, 200_000, alpha, 17).unwrap();
        let x = draws.realize(&series).unwrap();
        let est = if beta == 1 { alpha_var_mc(&x).unwrap() } else { beta_var_mc(&x, beta).unwrap() };
        let exact = beta_var_exact(&d, alpha, beta).unwrap();
        assert!((est.value - exact).abs() <= 4.0 * est.std_error, "{alpha},{beta}: {} vs {exact} (se {})", est.value, est.std_error);
    }
}

#[test]
fn bootstrap_cell_mean_is_parts_times_series_mean() {
    let series: Vec<f64> = (0..200).map(|i| (i as f64 * 0.37).sin() + 0.1).collect();
    let mean = series.iter().sum::<f64>() / 200.0;
    for parts in [1usize, 4, 9] {
        let draws = generate_draws(&DrawScheme::Bootstrap { parts, decay: None }, 200, 20_000, 4, 3).unwrap();
        let cells = draws.realize(&series).unwrap();
        let v = cells.cells();
        let m = v.iter().sum::<f64>() / v.len() as f64;
        let var = v.iter().map(|c| (c - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64;
        let se = (var / v.len() as f64).sqrt();
        assert!((m - parts as f64 * mean).abs() <= 4.0 * se, "parts {parts}: {m} vs {}", parts as f64 * mean);
    }
}
