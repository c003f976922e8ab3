use lumen::codec::PatternStack;
use lumen::losses::*;
use lumen::{DisparityMap, Grid};
use proptest::prelude::*;

fn row(values: &[f64]) -> PatternStack {
    PatternStack::from_vec(values.len(), 1, 1, values.to_vec()).unwrap()
}

#[test]
fn bce_hand_cases() {
    let ln2 = std::f64::consts::LN_2;
    assert!((bce_loss(&row(&[1.0]), &row(&[0.5])).unwrap() - ln2).abs() < 1e-9);
    assert!((bce_loss(&row(&[0.0]), &row(&[0.5])).unwrap() - ln2).abs() < 1e-9);
    assert!((bce_loss(&row(&[1.0]), &row(&[0.9])).unwrap() + 0.9f64.ln()).abs() < 1e-9);
    assert!((bce_loss(&row(&[0.0]), &row(&[0.1])).unwrap() + 0.9f64.ln()).abs() < 1e-9);
}

#[test]
fn bce_clamps_saturated_predictions() {
    let l = bce_loss(&row(&[1.0, 0.0]), &row(&[0.0, 1.0])).unwrap();
    assert!(l.is_finite());
    assert!((l + 1e-7f64.ln()).abs() < 1e-9);
}

#[test]
fn prewitt_replicates_borders() {
    let g = Grid::from_vec(4, 1, vec![0.0, 1.0, 3.0, 6.0]).unwrap();
    let d = prewitt_dx(&g).unwrap();
    assert_eq!(d.as_slice(), &[1.0, 3.0, 5.0, 3.0]);
    assert!(prewitt_dx(&Grid::filled(2, 3, 0.0)).is_err());
}

#[test]
fn sl_loss_hand_composite() {
    // target dx = [1, 1, 0], prediction dx = [0, 0, 0]
    let target = row(&[0.0, 1.0, 1.0]);
    let pred = row(&[0.5, 0.5, 0.5]);
    let want = std::f64::consts::LN_2 + (2.0 / 3.0) / 80.0;
    let got = sl_loss(&target, &pred, &LossConfig::default()).unwrap();
    assert!((got - want).abs() < 1e-9, "{got} vs {want}");

    // target dx = [1, 1, 0], prediction dx = [-0.2, 0.2, 0.4]
    let pred = row(&[0.6, 0.4, 0.8]);
    let bce = -(0.4f64.ln() + 0.4f64.ln() + 0.8f64.ln()) / 3.0;
    let deriv = (1.2f64.powi(2) + 0.8f64.powi(2) + 0.4f64.powi(2)) / 3.0;
    let got = sl_loss(&target, &pred, &LossConfig::default()).unwrap();
    assert!((got - (bce + deriv / 80.0)).abs() < 1e-9);

    let abs = LossConfig {
        derivative_mode: DerivativeMode::Absolute,
        ..Default::default()
    };
    let got = sl_loss(&target, &pred, &abs).unwrap();
    assert!((got - (bce + (1.2 + 0.8 + 0.4) / 3.0 / 80.0)).abs() < 1e-9);
}

#[test]
fn shape_mismatch_and_empty_inputs_fail() {
    assert!(bce_loss(&row(&[1.0, 0.0]), &row(&[1.0])).is_err());
    let empty = PatternStack::zeros(0, 0, 1);
    assert!(bce_loss(&empty, &empty).is_err());
    let bad = LossConfig {
        bce_clamp_eps: 0.0,
        ..Default::default()
    };
    assert!(sl_loss(&row(&[0.0; 3]), &row(&[0.0; 3]), &bad).is_err());
}

#[test]
fn disparity_l2_over_mutually_valid_pixels() {
    let gt = DisparityMap::new(
        Grid::from_vec(3, 1, vec![1.0, 2.0, 3.0]).unwrap(),
        Grid::from_vec(3, 1, vec![true, true, false]).unwrap(),
    )
    .unwrap();
    let pred = DisparityMap::new(
        Grid::from_vec(3, 1, vec![2.0, 5.0, 0.0]).unwrap(),
        Grid::from_vec(3, 1, vec![true, true, true]).unwrap(),
    )
    .unwrap();
    assert!((disparity_l2(&gt, &pred).unwrap() - 5.0).abs() < 1e-12);
}

fn stack_strategy() -> impl Strategy<Value = (PatternStack, PatternStack)> {
    (3usize..9, 1usize..4, 1usize..4).prop_flat_map(|(w, h, t)| {
        let n = w * h * t;
        (
            proptest::collection::vec(0.0f64..=1.0, n),
            proptest::collection::vec(0.0f64..=1.0, n),
        )
            .prop_map(move |(a, b)| {
                (
                    PatternStack::from_vec(w, h, t, a).unwrap(),
                    PatternStack::from_vec(w, h, t, b).unwrap(),
                )
            })
    })
}

proptest! {
    #[test]
    fn sl_loss_is_bce_plus_weighted_derivative((target, pred) in stack_strategy()) {
        let bce = bce_loss(&target, &pred).unwrap();
        let d = derivative_l2(&target, &pred, DerivativeMode::Squared).unwrap();
        prop_assert!(bce >= 0.0 && d >= 0.0);
        let sl = sl_loss(&target, &pred, &LossConfig::default()).unwrap();
        prop_assert!((sl - (bce + d / 80.0)).abs() < 1e-12);
        prop_assert!((d - derivative_l2(&pred, &target, DerivativeMode::Squared).unwrap()).abs() < 1e-12);
        prop_assert!(derivative_l2(&target, &target, DerivativeMode::Squared).unwrap() == 0.0);
    }

    #[test]
    fn prewitt_is_linear_and_kills_constants(v in proptest::collection::vec(-5.0f64..5.0, 3..20), c in -3.0f64..3.0, k in -2.0f64..2.0) {
        let g = Grid::from_vec(v.len(), 1, v.clone()).unwrap();
        let shifted = g.map(|x| k * x + c);
        let d = prewitt_dx(&g).unwrap();
        let ds = prewitt_dx(&shifted).unwrap();
        for (a, b) in d.as_slice().iter().zip(ds.as_slice()) {
            prop_assert!((k * a - b).abs() < 1e-9);
        }
    }
}
