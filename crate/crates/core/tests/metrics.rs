use ctiqa::metrics::{evaluate, krocc, mid_ranks, overall, plcc, srocc, MetricError};
use proptest::prelude::*;
use serde::Deserialize;

#[derive(Deserialize)]
struct Fixture {
    cases: Vec<Case>,
}

#[derive(Deserialize)]
struct Case {
    truth: Vec<f64>,
    pred: Vec<f64>,
    plcc: f64,
    srocc: f64,
    krocc: f64,
}

#[test]
fn matches_frozen_scipy_values() {
    let f: Fixture = serde_json::from_str(include_str!("fixtures/metric_oracle.json")).unwrap();
    assert_eq!(f.cases.len(), 40);
    for (i, c) in f.cases.iter().enumerate() {
        let r = evaluate(&c.truth, &c.pred).unwrap();
        assert!(
            (r.plcc - c.plcc).abs() < 1e-12,
            "case {i} plcc {} vs {}",
            r.plcc,
            c.plcc
        );
        assert!(
            (r.srocc - c.srocc).abs() < 1e-12,
            "case {i} srocc {} vs {}",
            r.srocc,
            c.srocc
        );
        assert!(
            (r.krocc - c.krocc).abs() < 1e-12,
            "case {i} krocc {} vs {}",
            r.krocc,
            c.krocc
        );
    }
}

#[test]
fn degenerate_inputs_are_errors() {
    assert!(matches!(
        plcc(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]),
        Err(MetricError::DegenerateInput(_))
    ));
    assert!(srocc(&[1.0], &[2.0]).is_err());
    assert!(krocc(&[1.0, 2.0], &[1.0]).is_err());
    assert!(plcc(&[1.0, f64::NAN, 2.0], &[1.0, 2.0, 3.0]).is_err());
}

#[test]
fn mid_ranks_average_ties() {
    let (r, ties) = mid_ranks(&[3.0, 1.0, 3.0, 2.0]);
    assert_eq!(r, vec![3.5, 1.0, 3.5, 2.0]);
    assert!(ties);
}

fn pairs() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
    (3usize..40).prop_flat_map(|n| {
        (
            prop::collection::vec((0u8..17).prop_map(|v| v as f64 * 0.25), n),
            prop::collection::vec(-5.0f64..5.0, n),
        )
    })
}

fn distinct(xs: &[f64]) -> bool {
    xs.iter().any(|&x| x != xs[0])
}

proptest! {
    #[test]
    fn bounded_and_symmetric((t, p) in pairs()) {
        prop_assume!(distinct(&t) && distinct(&p));
        let a = evaluate(&t, &p).unwrap();
        let b = evaluate(&p, &t).unwrap();
        for v in [a.plcc, a.srocc, a.krocc] {
            prop_assert!((-1.0..=1.0).contains(&v));
        }
        prop_assert!((a.plcc - b.plcc).abs() < 1e-12);
        prop_assert!((a.srocc - b.srocc).abs() < 1e-12);
        prop_assert!((a.krocc - b.krocc).abs() < 1e-12);
        prop_assert_eq!(a.overall, overall(a.plcc, a.srocc, a.krocc));
    }

    #[test]
    fn rank_metrics_ignore_monotone_maps((t, p) in pairs()) {
        prop_assume!(distinct(&t) && distinct(&p));
        let q: Vec<f64> = p.iter().map(|v| v.exp() * 3.0 + 1.0).collect();
        prop_assert!((srocc(&t, &p).unwrap() - srocc(&t, &q).unwrap()).abs() < 1e-12);
        prop_assert!((krocc(&t, &p).unwrap() - krocc(&t, &q).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn plcc_is_affine_invariant((t, p) in pairs(), scale in 0.1f64..10.0, shift in -10.0f64..10.0) {
        prop_assume!(distinct(&t) && distinct(&p));
        let q: Vec<f64> = p.iter().map(|v| v * scale + shift).collect();
        let neg: Vec<f64> = p.iter().map(|v| -v).collect();
        let r = plcc(&t, &p).unwrap();
        prop_assert!((r - plcc(&t, &q).unwrap()).abs() < 1e-9);
        prop_assert!((r + plcc(&t, &neg).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn permutation_invariant((t, p) in pairs(), rot in 0usize..40) {
        prop_assume!(distinct(&t) && distinct(&p));
        let k = rot % t.len();
        let (mut t2, mut p2) = (t.clone(), p.clone());
        t2.rotate_left(k);
        p2.rotate_left(k);
        let a = evaluate(&t, &p).unwrap();
        let b = evaluate(&t2, &p2).unwrap();
        prop_assert!((a.plcc - b.plcc).abs() < 1e-12);
        prop_assert!((a.srocc - b.srocc).abs() < 1e-12);
        prop_assert_eq!(a.krocc, b.krocc);
    }
}
