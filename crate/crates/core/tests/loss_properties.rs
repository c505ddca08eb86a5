use kinebasis::geometry::SamplePoint;
use kinebasis::losses::{loss_orth, loss_total, LossReport, LossWeights, OrthoForm};
use kinebasis::ForwardBundle;
use ndarray::Array2;
use proptest::prelude::*;

const DIM: usize = 2;

fn bundle_and_samples() -> impl Strategy<Value = (ForwardBundle<f64>, Vec<SamplePoint>)> {
    (1usize..4, 1usize..7).prop_flat_map(|(b, n)| {
        let cols = DIM * b;
        (
            prop::collection::vec(-1.0f64..1.0, n * cols * (1 + DIM)),
            prop::collection::vec((0.0f64..1.0, 0.0f64..1.0, -1.0f64..1.0), n),
        )
            .prop_map(move |(vals, pts)| {
                let take = |k: usize| Array2::from_shape_vec((n, cols), vals[k * n * cols..(k + 1) * n * cols].to_vec()).unwrap();
                let bundle = ForwardBundle {
                    dim: DIM,
                    value: take(0),
                    tangents: (1..=DIM).map(take).collect(),
                };
                let samples = pts
                    .into_iter()
                    .enumerate()
                    .map(|(i, (mask, wb, angle))| SamplePoint {
                        position: vec![i as f64, 0.0],
                        mask_w: mask.max(wb),
                        band_wb: if i % 2 == 0 { wb } else { 0.0 },
                        normal: (i % 2 == 0).then(|| vec![(3.0 * angle).cos(), (3.0 * angle).sin()]),
                    })
                    .collect();
                (bundle, samples)
            })
    })
}

fn permute_rows(b: &ForwardBundle<f64>, order: &[usize]) -> ForwardBundle<f64> {
    let pick = |a: &Array2<f64>| a.select(ndarray::Axis(0), order);
    ForwardBundle {
        dim: b.dim,
        value: pick(&b.value),
        tangents: b.tangents.iter().map(pick).collect(),
    }
}

fn permute_bases(b: &ForwardBundle<f64>, order: &[usize]) -> ForwardBundle<f64> {
    let cols: Vec<usize> = order.iter().flat_map(|&k| k * b.dim..(k + 1) * b.dim).collect();
    let pick = |a: &Array2<f64>| a.select(ndarray::Axis(1), &cols);
    ForwardBundle {
        dim: b.dim,
        value: pick(&b.value),
        tangents: b.tangents.iter().map(pick).collect(),
    }
}

fn report(b: &ForwardBundle<f64>, s: &[SamplePoint]) -> LossReport {
    loss_total(b, s, &LossWeights::default(), OrthoForm::Squared).unwrap()
}

fn components(r: &LossReport) -> [f64; 7] {
    [r.div, r.bc, r.orth, r.len, r.small, r.smooth, r.total]
}

fn close(a: &LossReport, b: &LossReport) -> bool {
    components(a)
        .iter()
        .zip(components(b))
        .all(|(x, y)| (x - y).abs() <= 1e-10 * (1.0 + x.abs().max(y.abs())))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn losses_are_nonnegative((b, s) in bundle_and_samples()) {
        let r = report(&b, &s);
        prop_assert!(components(&r).iter().all(|&x| x >= 0.0 && x.is_finite()));
    }

    #[test]
    fn sample_order_does_not_matter((b, s) in bundle_and_samples()) {
        let n = s.len();
        let order: Vec<usize> = (0..n).rev().collect();
        let s2: Vec<SamplePoint> = order.iter().map(|&i| s[i].clone()).collect();
        prop_assert!(close(&report(&b, &s), &report(&permute_rows(&b, &order), &s2)));
    }

    #[test]
    fn basis_order_does_not_matter((b, s) in bundle_and_samples()) {
        let order: Vec<usize> = (0..b.b()).rev().collect();
        prop_assert!(close(&report(&b, &s), &report(&permute_bases(&b, &order), &s)));
    }

    #[test]
    fn duplicating_samples_changes_nothing((b, s) in bundle_and_samples()) {
        let n = s.len();
        let order: Vec<usize> = (0..n).chain(0..n).collect();
        let s2: Vec<SamplePoint> = order.iter().map(|&i| s[i].clone()).collect();
        prop_assert!(close(&report(&b, &s), &report(&permute_rows(&b, &order), &s2)));
    }
}

#[test]
fn orthogonal_pair_has_zero_orth_loss() {
    let value = Array2::from_shape_vec((2, 4), vec![1.0, 0.0, 0.0, 2.0, 0.3, 0.4, -0.8, 0.6]).unwrap();
    let bundle = ForwardBundle {
        dim: 2,
        value,
        tangents: vec![Array2::zeros((2, 4)); 2],
    };
    let s: Vec<SamplePoint> = (0..2)
        .map(|i| SamplePoint {
            position: vec![i as f64, 0.0],
            mask_w: 1.0,
            band_wb: 0.0,
            normal: None,
        })
        .collect();
    assert!(loss_orth(&bundle, &s).unwrap() <= 1e-12);
}
