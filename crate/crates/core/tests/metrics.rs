use proptest::prelude::*;
use speckle_cs::metrics::pearson;

#[test]
fn textbook_value() {
    // Deviations (±0.5) and (±0.4, ±0.3): r = 0.7 / √0.5.
    let r = pearson(&[1.0, 0.0, 1.0, 0.0], &[0.9, 0.1, 0.8, 0.2]).unwrap();
    assert!((r - 0.7 / 0.5f64.sqrt()).abs() < 1e-12);
    assert!((r - 0.989_949_493_661_166_5).abs() < 1e-12);
}

#[test]
fn undefined_cases() {
    assert_eq!(pearson(&[0.3; 5], &[1.0, 2.0, 3.0, 4.0, 5.0]), None);
    assert_eq!(pearson(&[1.0, 2.0, 3.0], &[0.0; 3]), None);
    assert_eq!(pearson(&[1.0], &[2.0]), None);
    assert_eq!(pearson(&[], &[]), None);
}

#[test]
fn uncorrelated_and_anticorrelated() {
    assert_eq!(pearson(&[1.0, -1.0, 1.0, -1.0], &[1.0, 1.0, -1.0, -1.0]), Some(0.0));
    let r = pearson(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]).unwrap();
    assert!((r + 1.0).abs() < 1e-15);
}

fn series() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
    (2usize..40).prop_flat_map(|n| {
        (
            prop::collection::vec(-100.0f64..100.0, n),
            prop::collection::vec(-100.0f64..100.0, n),
        )
    })
}

proptest! {
    #[test]
    fn symmetric_and_bounded((a, b) in series()) {
        let (r, s) = (pearson(&a, &b), pearson(&b, &a));
        prop_assert_eq!(r.is_some(), s.is_some());
        if let (Some(r), Some(s)) = (r, s) {
            prop_assert!((r - s).abs() < 1e-12);
            prop_assert!((-1.0..=1.0).contains(&r));
        }
    }

    #[test]
    fn affine_invariance((a, b) in series(), scale in 0.01f64..100.0, shift in -50.0f64..50.0, flip in any::<bool>()) {
        let k = if flip { -scale } else { scale };
        let a2: Vec<f64> = a.iter().map(|v| k * v + shift).collect();
        if let (Some(r), Some(r2)) = (pearson(&a, &b), pearson(&a2, &b)) {
            let expected = if flip { -r } else { r };
            prop_assert!((r2 - expected).abs() < 1e-9, "{} vs {}", r2, expected);
        }
    }

    #[test]
    fn self_correlation_is_one(a in prop::collection::vec(-10.0f64..10.0, 2..30)) {
        if let Some(r) = pearson(&a, &a) {
            prop_assert!((r - 1.0).abs() < 1e-12);
        }
    }
}
