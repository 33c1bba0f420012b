use conceptcf::classifier::ClassifierWeights;
use conceptcf::countex::{
    countex_sparsity, optimize, top_k_concepts, ConceptLibrary, CountexConfig, Ranking,
    SparsityMode,
};
use conceptcf::providers::{EmbeddingProvider, SyntheticProvider};
use conceptcf::{EmbeddingVector, PrivacyLabel};

/// Classifier `4·e` with `e` the unit direction of `secret`, and an image at
/// `0.1·e + noise⊥` (logit 0.4).
fn aligned() -> (ConceptLibrary, ClassifierWeights, EmbeddingVector) {
    let p = SyntheticProvider::new(8, 21);
    let lib = ConceptLibrary::build(&p, &["secret".to_string()]).unwrap();
    let e = lib.directions()[0].clone();
    let c = ClassifierWeights::new(e.scaled(4.0), 0.0).unwrap();
    let other = p.embed_text("tree").unwrap();
    let mut perp = other.clone();
    perp.add_scaled(&e, -other.dot(&e));
    let mut x = e.scaled(0.1);
    x.add_scaled(&perp, 1.0);
    assert!((c.logit(&x).unwrap() - 0.4).abs() < 1e-9);
    (lib, c, x)
}

#[test]
fn aligned_concept_flips_with_defaults() {
    let (lib, c, x) = aligned();
    for seed in 0..50 {
        let sol = optimize(
            &x,
            &c,
            &lib,
            &CountexConfig {
                seed,
                ..CountexConfig::default()
            },
        )
        .unwrap();
        assert!(sol.flipped, "seed {seed}");
        assert!(sol.iterations_used <= 100);
        assert_eq!(
            c.predict(&sol.counterfactual_embedding).unwrap().label,
            PrivacyLabel::Public
        );
        assert!(sol.confidence >= 0.5);
        // The counterfactual removes the concept: its weight is negative.
        assert!(sol.weights[0] < 0.0);
    }
}

#[test]
fn orthogonal_library_never_flips() {
    let (_, c, x) = aligned();
    let w = c.weights.normalized().unwrap();
    let p = SyntheticProvider::new(8, 5);
    let dirs: Vec<EmbeddingVector> = ["cup", "lamp"]
        .iter()
        .map(|t| {
            let v = p.embed_text(t).unwrap();
            let mut perp = v.clone();
            perp.add_scaled(&w, -v.dot(&w));
            perp.normalized().unwrap()
        })
        .collect();
    let lib = ConceptLibrary::from_directions(vec!["cup".into(), "lamp".into()], dirs).unwrap();
    let cfg = CountexConfig {
        lambda_l1: 0.0,
        lambda_l2: 0.0,
        ..CountexConfig::default()
    };
    let sol = optimize(&x, &c, &lib, &cfg).unwrap();
    assert!(!sol.flipped);
    assert_eq!(sol.iterations_used, cfg.max_iterations);
}

#[test]
fn cross_entropy_never_increases_without_penalties() {
    let (lib, c, x) = aligned();
    let cfg = CountexConfig {
        lambda_identity: 0.0,
        lambda_l1: 0.0,
        lambda_l2: 0.0,
        seed: 3,
        ..CountexConfig::default()
    };
    let sol = optimize(&x, &c, &lib, &cfg).unwrap();
    for w in sol.cross_entropy_trace.windows(2) {
        assert!(w[1] <= w[0] + 1e-15);
    }
}

#[test]
fn seeded_runs_are_identical() {
    let (lib, c, x) = aligned();
    let cfg = CountexConfig {
        seed: 17,
        ..CountexConfig::default()
    };
    assert_eq!(
        optimize(&x, &c, &lib, &cfg).unwrap(),
        optimize(&x, &c, &lib, &cfg).unwrap()
    );
}

#[test]
fn empty_library_is_rejected() {
    let p = SyntheticProvider::new(4, 1);
    assert!(ConceptLibrary::build(&p, &[]).is_err());
}

#[test]
fn fixed_weight_fixtures() {
    let (lib, c, x) = aligned();
    let mut sol = optimize(&x, &c, &lib, &CountexConfig::default()).unwrap();
    let names: Vec<String> = ["a", "b", "c", "d"].iter().map(|s| s.to_string()).collect();
    let dirs = (0..4).map(|_| lib.directions()[0].clone()).collect();
    let lib4 = ConceptLibrary::from_directions(names, dirs).unwrap();

    sol.weights = vec![0.2, 0.05, 0.3, -0.4];
    let cfg = CountexConfig::default();
    assert_eq!(countex_sparsity(&sol, &cfg), 2);
    let abs = CountexConfig {
        sparsity_mode: SparsityMode::Absolute,
        ..cfg.clone()
    };
    assert_eq!(countex_sparsity(&sol, &abs), 3);

    let top = top_k_concepts(&sol, &lib4, 2, Ranking::MostNegative);
    assert_eq!(
        top.concepts,
        vec![("d".to_string(), -0.4), ("b".to_string(), 0.05)]
    );
    assert!(top.degenerate);
    let top = top_k_concepts(&sol, &lib4, 2, Ranking::MostPositive);
    assert_eq!(
        top.concepts,
        vec![("c".to_string(), 0.3), ("a".to_string(), 0.2)]
    );
    assert!(!top.degenerate);

    sol.weights = vec![0.01, 0.02, 0.0, 0.1];
    assert_eq!(countex_sparsity(&sol, &cfg), 0);
}
