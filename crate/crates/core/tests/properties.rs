use expsparse::approximator::{random_permutation, DeadUnitPolicy, EasApproximator};
use expsparse::data::{sample_manifold, scramble_labels, synthetic_classification, ManifoldSpec};
use expsparse::metrics::{code_overlap, similarity_profile, CodeRule};
use expsparse::projection::{ProjectionMatrix, RowDistribution};
use expsparse::sparsifier::{
    estimate_thresholds, sparsify_binary, sparsify_relu, sparsify_topk, ThresholdVector, TieRule,
};
use expsparse::{Error, SparseCode};
use nalgebra::{DMatrix, SymmetricEigen};
use proptest::prelude::*;

fn vector(len: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-2.0..2.0f64, len)
}

fn dims() -> impl Strategy<Value = (usize, usize)> {
    (1usize..8, 1usize..64)
}

fn gaussian(n: usize, d: usize, seed: u64) -> ProjectionMatrix {
    ProjectionMatrix::sample(n, d, RowDistribution::default_gaussian(n), seed).unwrap()
}

fn inputs(n: usize, count: usize, seed: u64) -> Vec<Vec<f64>> {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| (0..n).map(|_| rng.random_range(-1.0..1.0)).collect())
        .collect()
}

proptest! {
    #[test]
    fn projection_is_a_pure_function_of_its_seed((n, d) in dims(), seed in any::<u64>(), sphere in any::<bool>()) {
        let dist = if sphere { RowDistribution::UnitSphere } else { RowDistribution::default_gaussian(n) };
        let a = ProjectionMatrix::sample(n, d, dist, seed).unwrap();
        let b = ProjectionMatrix::sample(n, d, dist, seed).unwrap();
        prop_assert_eq!(&a, &b);
        prop_assert_eq!(a.regenerate().unwrap(), b);
    }

    #[test]
    fn projection_is_linear(
        (n, d) in dims(),
        seed in any::<u64>(),
        a in -3.0..3.0f64,
        b in -3.0..3.0f64,
        raw in vector(16),
    ) {
        let w = gaussian(n, d, seed);
        let (u, v) = (&raw[..n], &raw[8..8 + n]);
        let mix: Vec<f64> = u.iter().zip(v).map(|(x, y)| a * x + b * y).collect();
        let (pu, pv, pm) = (w.project(u).unwrap(), w.project(v).unwrap(), w.project(&mix).unwrap());
        for j in 0..d {
            let expected = a * pu[j] + b * pv[j];
            let scale = (a * pu[j]).abs() + (b * pv[j]).abs() + w.row(j).iter().map(|x| x.abs()).sum::<f64>();
            prop_assert!((pm[j] - expected).abs() <= 1e-10 * scale, "unit {}: {} vs {}", j, pm[j], expected);
        }
    }

    #[test]
    fn batch_projection_equals_serial_bit_for_bit((n, d) in dims(), seed in any::<u64>(), count in 1usize..20) {
        let w = gaussian(n, d, seed);
        let xs = inputs(n, count, seed ^ 1);
        let batch = w.project_batch(&xs).unwrap();
        for (u, p) in xs.iter().zip(&batch) {
            let serial = w.project(u).unwrap();
            prop_assert!(serial.iter().zip(p).all(|(a, b)| a.to_bits() == b.to_bits()));
        }
    }

    #[test]
    fn calibration_set_activation_is_exactly_k_over_d(
        n in 1usize..6,
        d in 1usize..40,
        k_raw in 1usize..40,
        blocks in 1usize..6,
        seed in any::<u64>(),
    ) {
        let k = k_raw.min(d);
        // S is a multiple of d / gcd(k, d).
        let s = d / gcd(k, d) * blocks;
        prop_assume!(s >= 2);
        let w = gaussian(n, d, seed);
        let cal = inputs(n, s, seed ^ 2);
        let tau = estimate_thresholds(&w, &cal, k).unwrap();
        let mut counts = vec![0usize; d];
        for u in &cal {
            for &j in sparsify_binary(&w.project(u).unwrap(), &tau).unwrap().active() {
                counts[j] += 1;
            }
        }
        for (j, &c) in counts.iter().enumerate() {
            prop_assert_eq!(c * d, s * k, "unit {}", j);
        }
    }

    #[test]
    fn relu_active_set_is_binary_minus_exact_ties(p in vector(30), t in vector(30), tie_mask in any::<u32>()) {
        // Copy some projections into the thresholds so exact equality occurs.
        let taus: Vec<f64> = t.iter().enumerate().map(|(j, &x)| if tie_mask >> j & 1 == 1 { p[j] } else { x }).collect();
        let tau = ThresholdVector::from_taus(taus.clone()).unwrap();
        let binary = sparsify_binary(&p, &tau).unwrap();
        let relu = sparsify_relu(&p, &tau).unwrap();
        prop_assert!(relu.active().iter().all(|j| binary.is_active(*j)));
        for &j in binary.active() {
            if !relu.is_active(j) {
                prop_assert_eq!(p[j], taus[j]);
            }
        }
        prop_assert!(relu.values().unwrap().iter().all(|&v| v > 0.0));
    }

    #[test]
    fn raising_a_threshold_never_activates_its_unit(p in vector(20), t in vector(20), j in 0usize..20, bump in 0.0..3.0f64) {
        let before = sparsify_binary(&p, &ThresholdVector::from_taus(t.clone()).unwrap()).unwrap();
        let mut raised = t;
        raised[j] += bump;
        let after = sparsify_binary(&p, &ThresholdVector::from_taus(raised).unwrap()).unwrap();
        prop_assert!(!after.is_active(j) || before.is_active(j));
        for i in (0..20).filter(|&i| i != j) {
            prop_assert_eq!(after.is_active(i), before.is_active(i));
        }
    }

    #[test]
    fn binary_codes_are_scale_covariant(p in vector(25), t in vector(25), c in 1e-3..1e3f64) {
        let plain = sparsify_binary(&p, &ThresholdVector::from_taus(t.clone()).unwrap()).unwrap();
        let cp: Vec<f64> = p.iter().map(|x| c * x).collect();
        let ct: Vec<f64> = t.iter().map(|x| c * x).collect();
        let scaled = sparsify_binary(&cp, &ThresholdVector::from_taus(ct).unwrap()).unwrap();
        prop_assert_eq!(plain.active(), scaled.active());
    }

    #[test]
    fn topk_keeps_exactly_k_and_commutes_with_permutations(p in vector(40), k_raw in 1usize..41, seed in any::<u64>()) {
        let k = k_raw.min(p.len());
        let code = sparsify_topk(&p, k, TieRule::LowestIndex, false).unwrap();
        prop_assert_eq!(code.len(), k);
        // Continuous draws have no ties, so the tie rule plays no part here.
        let order = random_permutation(p.len(), seed);
        let permuted: Vec<f64> = order.iter().map(|&j| p[j]).collect();
        let mut mapped: Vec<usize> = sparsify_topk(&permuted, k, TieRule::LowestIndex, false)
            .unwrap()
            .active()
            .iter()
            .map(|&i| order[i])
            .collect();
        mapped.sort();
        prop_assert_eq!(mapped.as_slice(), code.active());
    }

    #[test]
    fn overlap_is_symmetric_and_bounded(a in prop::collection::btree_set(0usize..50, 0..30), b in prop::collection::btree_set(0usize..50, 0..30)) {
        let za = SparseCode::new(50, a.iter().copied().collect(), None).unwrap();
        let zb = SparseCode::new(50, b.iter().copied().collect(), None).unwrap();
        let o = code_overlap(&za, &zb).unwrap();
        prop_assert_eq!(o, code_overlap(&zb, &za).unwrap());
        prop_assert_eq!(o, a.intersection(&b).count());
        prop_assert!(o <= za.len().min(zb.len()));
    }
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

fn fitted(n: usize, d: usize, k: usize, seed: u64) -> (EasApproximator, Vec<Vec<f64>>, Vec<f64>) {
    let w = gaussian(n, d, seed);
    let xs = inputs(n, 80, seed ^ 3);
    let ys: Vec<f64> = xs.iter().map(|u| u.iter().sum::<f64>().sin()).collect();
    let cal = inputs(n, 200, seed ^ 4);
    let tau = estimate_thresholds(&w, &cal, k).unwrap();
    (EasApproximator::fit(w, tau, &xs, &ys).unwrap(), xs, ys)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn predictions_stay_within_the_fitted_target_range(n in 1usize..6, d in 2usize..80, k_raw in 1usize..80, seed in any::<u64>()) {
        let (model, _, ys) = fitted(n, d, k_raw.min(d), seed);
        let (lo, hi) = ys.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &y| (l.min(y), h.max(y)));
        let slack = 1e-12 * (lo.abs() + hi.abs());
        for u in inputs(n, 50, seed ^ 5) {
            let code = model.code(&u).unwrap();
            if code.is_empty() || code.active().iter().any(|&j| model.dead_mask()[j]) {
                continue;
            }
            let y = model.predict(&u).unwrap();
            prop_assert!(y >= lo - slack && y <= hi + slack, "{} outside [{}, {}]", y, lo, hi);
        }
    }

    #[test]
    fn permuting_hidden_units_leaves_predictions_unchanged(n in 1usize..6, d in 2usize..80, k_raw in 1usize..80, seed in any::<u64>()) {
        let (model, xs, _) = fitted(n, d, k_raw.min(d), seed);
        let shuffled = model.permute_units(&random_permutation(d, seed ^ 6)).unwrap();
        for u in xs.iter().chain(&inputs(n, 20, seed ^ 7)) {
            match (model.predict(u), shuffled.predict(u)) {
                (Ok(a), Ok(b)) => prop_assert!((a - b).abs() <= 1e-12 * a.abs().max(b.abs()).max(1e-300)),
                (Err(Error::NoActiveUnits), Err(Error::NoActiveUnits)) => {}
                other => prop_assert!(false, "{:?}", other),
            }
        }
    }

    #[test]
    fn refitting_gives_identical_readout(n in 1usize..6, d in 2usize..80, k_raw in 1usize..80, seed in any::<u64>()) {
        let (model, xs, ys) = fitted(n, d, k_raw.min(d), seed);
        let again = EasApproximator::fit(model.projection().clone(), model.thresholds().clone(), &xs, &ys).unwrap();
        prop_assert_eq!(again, model);
    }

    #[test]
    fn pruning_keeps_reference_predictions_bit_identical(n in 1usize..6, d in 2usize..120, k_raw in 1usize..10, seed in any::<u64>(), exclude in any::<bool>()) {
        let (model, xs, _) = fitted(n, d, k_raw.min(d), seed);
        let policy = if exclude { DeadUnitPolicy::Exclude } else { DeadUnitPolicy::CountInDenominator };
        let model = model.with_dead_policy(policy);
        let (pruned, removed) = match model.prune_dead(&xs) {
            Ok(r) => r,
            Err(Error::Fit(_)) => return Ok(()),
            Err(e) => return Err(TestCaseError::fail(e.to_string())),
        };
        prop_assert_eq!(pruned.d() + removed, d);
        prop_assert_eq!(removed, model.dead_count());
        for u in &xs {
            let a = model.predict_or_mean(u).unwrap().0;
            let b = pruned.predict_or_mean(u).unwrap().0;
            prop_assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn scrambling_keeps_inputs_bit_exact(seed in any::<u64>(), classes in 2usize..6) {
        let spec = ManifoldSpec::random_trig(2, 6, seed);
        let ds = synthetic_classification(&spec, 50, classes, seed).unwrap();
        let scrambled = scramble_labels(&ds, seed ^ 8).unwrap();
        prop_assert_eq!(&scrambled.inputs, &ds.inputs);
        prop_assert!(scrambled.labels().unwrap().0.iter().all(|&l| l < classes));
    }

    #[test]
    fn manifold_points_are_recomputable_from_latents(m in 1usize..4, seed in any::<u64>()) {
        let spec = ManifoldSpec::random_trig(m, 10, seed);
        let sample = sample_manifold(&spec, 30, seed ^ 9).unwrap();
        let embedding = spec.embedding().unwrap();
        for (t, u) in sample.latents.iter().zip(&sample.points) {
            prop_assert_eq!(&embedding.embed(t), u);
        }
    }

    #[test]
    fn zero_radius_overlap_has_no_spread(seed in any::<u64>(), k in 1usize..20) {
        let w = gaussian(5, 40, seed);
        let base = inputs(5, 10, seed ^ 10);
        let profile = similarity_profile(&w, &CodeRule::TopK { k }, &base, &[0.0, 0.5], 50, seed).unwrap();
        prop_assert_eq!(profile.bins[0].std, 0.0);
        prop_assert_eq!(profile.bins[0].mean, k as f64);
    }
}

#[test]
fn one_dimensional_manifold_is_locally_one_dimensional() {
    // Local PCA around points of an m=1 curve in R^20: the top direction carries
    // almost all of the neighborhood variance.
    let spec = ManifoldSpec::random_trig(1, 20, 5);
    let embedding = spec.embedding().unwrap();
    for center in [0.1, 0.37, 0.8] {
        let pts: Vec<Vec<f64>> = (0..41)
            .map(|i| embedding.embed(&[center + (i as f64 - 20.0) * 1e-3]))
            .collect();
        let mean: Vec<f64> = (0..20)
            .map(|c| pts.iter().map(|p| p[c]).sum::<f64>() / pts.len() as f64)
            .collect();
        let centered = DMatrix::from_fn(pts.len(), 20, |r, c| pts[r][c] - mean[c]);
        let cov = centered.transpose() * &centered;
        let eig = SymmetricEigen::new(cov);
        let total: f64 = eig.eigenvalues.iter().sum();
        let top = eig.eigenvalues.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        assert!(top / total > 0.9, "top share {} at t = {center}", top / total);
    }
}

#[test]
fn two_dimensional_manifold_needs_two_directions() {
    let spec = ManifoldSpec::random_trig(2, 20, 5);
    let embedding = spec.embedding().unwrap();
    let mut pts = Vec::new();
    for i in 0..15 {
        for j in 0..15 {
            pts.push(embedding.embed(&[0.3 + (i as f64 - 7.0) * 1e-3, 0.6 + (j as f64 - 7.0) * 1e-3]));
        }
    }
    let mean: Vec<f64> = (0..20)
        .map(|c| pts.iter().map(|p| p[c]).sum::<f64>() / pts.len() as f64)
        .collect();
    let centered = DMatrix::from_fn(pts.len(), 20, |r, c| pts[r][c] - mean[c]);
    let mut ev: Vec<f64> = SymmetricEigen::new(centered.transpose() * &centered)
        .eigenvalues
        .iter()
        .cloned()
        .collect();
    ev.sort_by(|a, b| b.total_cmp(a));
    let total: f64 = ev.iter().sum();
    assert!((ev[0] + ev[1]) / total > 0.99);
    assert!(ev[1] / total > 0.01);
}
