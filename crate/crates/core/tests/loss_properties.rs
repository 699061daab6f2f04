use candle_core::{Device, Tensor, Var};
use proptest::prelude::*;

use sketchssl::losses::{
    bce_reconstruction, byol_loss, cross_entropy, entropy, kld, m2_unlabeled_loss,
    normalized_sq_distance, LossWeights,
};

fn t2(rows: &[Vec<f64>]) -> Tensor {
    let (b, c) = (rows.len(), rows[0].len());
    Tensor::from_vec(rows.concat(), (b, c), &Device::Cpu).unwrap()
}

fn scalar(t: Tensor) -> f64 {
    t.to_scalar::<f64>().unwrap()
}

fn normalize(v: Vec<f64>) -> Vec<f64> {
    let s: f64 = v.iter().sum();
    v.into_iter().map(|x| x / s).collect()
}

fn probs(b: usize, c: usize) -> impl Strategy<Value = Vec<Vec<f64>>> {
    prop::collection::vec(prop::collection::vec(0.001f64..1.0, c), b)
        .prop_map(|rows| rows.into_iter().map(normalize).collect())
}

fn vectors(b: usize, d: usize) -> impl Strategy<Value = Vec<Vec<f64>>> {
    prop::collection::vec(
        prop::collection::vec(-100.0f64..100.0, d).prop_filter("nonzero", |v| {
            v.iter().map(|x| x * x).sum::<f64>() > 1e-6
        }),
        b,
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn bce_is_non_negative(
        pred in prop::collection::vec(0.0f64..=1.0, 16),
        target in prop::collection::vec(prop::bool::ANY, 16),
    ) {
        let t: Vec<f64> = target.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect();
        let v = scalar(bce_reconstruction(&t2(&[pred]), &t2(&[t])).unwrap());
        prop_assert!(v >= 0.0);
    }

    #[test]
    fn kld_is_non_negative_and_zero_only_at_the_prior(
        mu in prop::collection::vec(-5.0f64..5.0, 6),
        logvar in prop::collection::vec(-5.0f64..5.0, 6),
    ) {
        let v = scalar(kld(&t2(&[mu.clone()]), &t2(&[logvar.clone()])).unwrap());
        prop_assert!(v >= 0.0);
        let at_prior = mu.iter().chain(&logvar).all(|x| *x == 0.0);
        if at_prior {
            prop_assert!(v.abs() < 1e-9);
        } else if mu.iter().chain(&logvar).any(|x| x.abs() > 1e-3) {
            prop_assert!(v > 0.0);
        }
    }

    #[test]
    fn cross_entropy_and_entropy_are_non_negative(p in probs(3, 5), y in prop::collection::vec(0usize..5, 3)) {
        let hot: Vec<Vec<f64>> = y.iter().map(|&c| (0..5).map(|k| if k == c { 1.0 } else { 0.0 }).collect()).collect();
        prop_assert!(scalar(cross_entropy(&t2(&hot), &t2(&p)).unwrap()) >= 0.0);
        let h = scalar(entropy(&t2(&p)).unwrap());
        prop_assert!(h >= 0.0 && h <= 5f64.ln() + 1e-12);
    }

    #[test]
    fn byol_loss_is_bounded(a in vectors(4, 7), b in vectors(4, 7), c in vectors(4, 7), d in vectors(4, 7)) {
        let v = scalar(byol_loss(&t2(&a), &t2(&b), &t2(&c), &t2(&d)).unwrap());
        prop_assert!((0.0..=8.0 + 1e-12).contains(&v));
        let each: Vec<f64> = normalized_sq_distance(&t2(&a), &t2(&b)).unwrap().to_vec1().unwrap();
        prop_assert!(each.iter().all(|x| (0.0..=4.0 + 1e-12).contains(x)));
    }

    #[test]
    fn m2_unlabeled_matches_explicit_expectation(
        (c, p, gen) in (2usize..9).prop_flat_map(|c| (
            Just(c),
            probs(4, c),
            prop::collection::vec(prop::collection::vec(0.0f64..1000.0, c), 4),
        ))
    ) {
        let w = LossWeights { n_train: Some(1), ..LossWeights::default() };
        let got = scalar(m2_unlabeled_loss(&t2(&gen), &t2(&p), &w).unwrap());
        let mut want = 0.0;
        for i in 0..4 {
            for k in 0..c {
                want += p[i][k] * gen[i][k] - p[i][k] * p[i][k].ln();
            }
        }
        want /= 4.0;
        prop_assert!((got - want).abs() <= 1e-6 * want.abs().max(1.0));
    }

    #[test]
    fn byol_targets_never_receive_gradient(a in vectors(2, 5), b in vectors(2, 5)) {
        let pa = Var::from_tensor(&t2(&a)).unwrap();
        let tb = Var::from_tensor(&t2(&b)).unwrap();
        let loss = byol_loss(pa.as_tensor(), tb.as_tensor(), pa.as_tensor(), tb.as_tensor()).unwrap();
        let grads = loss.backward().unwrap();
        prop_assert!(grads.get(tb.as_tensor()).is_none());
    }
}

#[test]
fn entropy_sign_flag_flips_the_entropy_term() {
    let p = t2(&[vec![0.5, 0.5]]);
    let gen = t2(&[vec![2.0, 4.0]]);
    let w = LossWeights {
        m2_entropy_sign: -1.0,
        ..LossWeights::default()
    };
    let v = scalar(m2_unlabeled_loss(&gen, &p, &w).unwrap());
    assert!((v - (3.0 - 2f64.ln())).abs() < 1e-12);
}

#[test]
fn shape_mismatch_is_rejected() {
    let a = t2(&[vec![0.5, 0.5]]);
    let b = t2(&[vec![1.0, 0.0, 1.0]]);
    assert!(bce_reconstruction(&a, &b).is_err());
    assert!(kld(&a, &b).is_err());
    assert!(byol_loss(&a, &b, &a, &a).is_err());
}
