use proptest::prelude::*;
use symgan_core::losses::*;

fn distribution(len: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.01f64..1.0, len).prop_map(|v| {
        let s: f64 = v.iter().sum();
        v.into_iter().map(|x| x / s).collect()
    })
}

fn close(analytic: f64, numeric: f64) -> bool {
    (analytic - numeric).abs() <= 1e-4 * analytic.abs().max(numeric.abs()) + 1e-9
}

fn central_diff(x: &[f64], h: f64, f: impl Fn(&[f64]) -> f64) -> Vec<f64> {
    (0..x.len())
        .map(|i| {
            let mut p = x.to_vec();
            let mut m = x.to_vec();
            p[i] += h;
            m[i] -= h;
            (f(&p) - f(&m)) / (2.0 * h)
        })
        .collect()
}

fn assert_grad(analytic: &[f64], numeric: &[f64]) -> Result<(), TestCaseError> {
    prop_assert_eq!(analytic.len(), numeric.len());
    for (a, n) in analytic.iter().zip(numeric) {
        prop_assert!(close(*a, *n), "analytic {a} vs numeric {n}");
    }
    Ok(())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn kl_self_is_zero(p in (2usize..60).prop_flat_map(distribution)) {
        prop_assert!(classification_loss(&p, &p).unwrap().abs() < 1e-12);
    }

    #[test]
    fn kl_non_negative(pair in (2usize..30).prop_flat_map(|n| (distribution(n), distribution(n)))) {
        prop_assert!(classification_loss(&pair.0, &pair.1).unwrap() >= -1e-12);
    }

    #[test]
    fn one_hot_kl_is_cross_entropy(p in (2usize..60).prop_flat_map(distribution), k in 0usize..60) {
        let k = k % p.len();
        let mut y = vec![0.0; p.len()];
        y[k] = 1.0;
        let kl = classification_loss(&p, &y).unwrap();
        prop_assert!((kl + p[k].ln()).abs() < 1e-9);
    }

    #[test]
    fn adversarial_permutation_invariant(
        v in prop::collection::vec((0.01f64..0.99, 0.01f64..0.99), 2..20),
        rot in 0usize..20,
    ) {
        let real: Vec<f64> = v.iter().map(|x| x.0).collect();
        let fake: Vec<f64> = v.iter().map(|x| x.1).collect();
        let r = rot % real.len();
        let mut real2 = real.clone();
        let mut fake2 = fake.clone();
        real2.rotate_left(r);
        fake2.reverse();
        let (d1, g1) = adversarial_losses(&real, &fake).unwrap();
        let (d2, g2) = adversarial_losses(&real2, &fake2).unwrap();
        prop_assert!((d1 - d2).abs() < 1e-12 && (g1 - g2).abs() < 1e-12);
    }
}

proptest! {
    // twenty random small inputs per objective
    #![proptest_config(ProptestConfig::with_cases(20))]

    #[test]
    fn discriminator_grad(v in prop::collection::vec(0.05f64..0.95, 2..9)) {
        let n = v.len() / 2;
        let (real, fake) = v.split_at(n);
        let fake = &fake[..n];
        let a = discriminator_loss(real, fake).unwrap().grad;
        let joined: Vec<f64> = real.iter().chain(fake).copied().collect();
        let num = central_diff(&joined, 1e-6, |x| discriminator_loss(&x[..n], &x[n..]).unwrap().value);
        assert_grad(&a, &num)?;
    }

    #[test]
    fn generator_grad(fake in prop::collection::vec(0.05f64..0.95, 1..8)) {
        let a = generator_loss(&fake).unwrap().grad;
        let num = central_diff(&fake, 1e-6, |x| generator_loss(x).unwrap().value);
        assert_grad(&a, &num)?;
    }

    #[test]
    fn logit_losses_grad(v in prop::collection::vec(-4.0f64..4.0, 2..9)) {
        let n = v.len() / 2;
        let (real, fake) = (&v[..n], &v[n..2 * n]);
        let a = discriminator_loss_from_logits(real, fake).unwrap().grad;
        let num = central_diff(&v[..2 * n], 1e-5, |x| discriminator_loss_from_logits(&x[..n], &x[n..]).unwrap().value);
        assert_grad(&a, &num)?;
        let a = generator_loss_from_logits(fake).unwrap().grad;
        let num = central_diff(fake, 1e-5, |x| generator_loss_from_logits(x).unwrap().value);
        assert_grad(&a, &num)?;
    }

    #[test]
    fn logit_losses_match_probability_forms(v in prop::collection::vec(-4.0f64..4.0, 2..9)) {
        let n = v.len() / 2;
        let sig = |z: &f64| 1.0 / (1.0 + (-z).exp());
        let real: Vec<f64> = v[..n].iter().map(sig).collect();
        let fake: Vec<f64> = v[n..2 * n].iter().map(sig).collect();
        let d = discriminator_loss_from_logits(&v[..n], &v[n..2 * n]).unwrap().value;
        prop_assert!((d - discriminator_loss(&real, &fake).unwrap().value).abs() < 1e-9);
    }

    #[test]
    fn classification_grad(pair in (2usize..8).prop_flat_map(|n| (distribution(n), distribution(n)))) {
        let (q, y) = pair;
        for obj in [ClassificationObjective::KlDivergence, ClassificationObjective::CrossEntropy] {
            let a = classification_loss_grad(&q, &y, obj).unwrap().grad;
            let num = central_diff(&q, 1e-7, |x| classification_loss_grad(x, &y, obj).unwrap().value);
            assert_grad(&a, &num)?;
        }
    }

    #[test]
    fn classification_logit_grad(
        z in prop::collection::vec(-3.0f64..3.0, 2..8),
        k in 0usize..8,
    ) {
        let mut y = vec![0.0; z.len()];
        y[k % z.len()] = 1.0;
        for obj in [ClassificationObjective::KlDivergence, ClassificationObjective::CrossEntropy] {
            let a = classification_loss_from_logits(&z, &y, obj).unwrap().grad;
            let num = central_diff(&z, 1e-5, |x| classification_loss_from_logits(x, &y, obj).unwrap().value);
            assert_grad(&a, &num)?;
        }
    }

    #[test]
    fn diversity_grad(
        imgs in prop::collection::vec(prop::collection::vec(0.0f64..1.0, 6), 3..6),
        codes in prop::collection::vec(prop::collection::vec(-1.0f64..1.0, 4), 6),
    ) {
        let n = imgs.len();
        let codes = &codes[..n];
        let classes: Vec<usize> = (0..n).map(|i| i % 2).collect();
        // keep finite differences away from the |d| kink
        for i in 0..n {
            for j in i + 1..n {
                for k in 0..6 {
                    prop_assume!((imgs[i][k] - imgs[j][k]).abs() > 1e-3);
                }
            }
        }
        let flat: Vec<f64> = imgs.concat();
        let a = diversity_penalty(&imgs, codes, &classes).unwrap().grad;
        let num = central_diff(&flat, 1e-7, |x| {
            let v: Vec<Vec<f64>> = x.chunks(6).map(|c| c.to_vec()).collect();
            diversity_penalty(&v, codes, &classes).unwrap().value
        });
        assert_grad(&a, &num)?;
    }
}
