use drsopo::mdp::{
    dp_gradient, enumerate_trajectories, exact_gradient, exact_objective, sample_batch, truncated_return, SampleStream,
    TabularMdp,
};
use drsopo::numerics::Vector;
use drsopo::policy::{Policy, TabularSoftmax};
use proptest::prelude::*;

fn fixture(name: &str) -> String {
    let path = format!("{}/fixtures/{name}", env!("CARGO_MANIFEST_DIR"));
    std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("{path}: {e}"))
}

#[test]
fn fixtures_equal_builtins() {
    assert_eq!(TabularMdp::from_text(&fixture("bench5x3.mdp")).unwrap(), TabularMdp::bench5x3());
    assert_eq!(TabularMdp::from_text(&fixture("bench3x2.mdp")).unwrap(), TabularMdp::bench3x2());
}

#[test]
fn text_round_trip_is_exact() {
    for seed in 0..5 {
        let m = TabularMdp::random(4, 3, 0.8, 2.0, 6, seed).unwrap();
        assert_eq!(TabularMdp::from_text(&m.to_text()).unwrap(), m);
    }
}

#[test]
fn corrupted_fixture_is_rejected_with_the_violation() {
    let text = fixture("corrupted_reward.mdp");
    let err = TabularMdp::from_text(&text).unwrap_err();
    assert!(err.to_string().contains("1.75"), "{err}");
    let unchecked = TabularMdp::from_text_unchecked(&text).unwrap();
    assert!(!unchecked.violations().is_empty());
}

#[test]
fn invalid_instances_are_rejected() {
    // Transition row summing to 0.9.
    let bad_row = TabularMdp::new(1, 1, vec![0.9], vec![0.0], vec![1.0], 0.9, 1.0, 2);
    assert!(bad_row.is_err());
    let bad_gamma = TabularMdp::new(1, 1, vec![1.0], vec![0.0], vec![1.0], 1.0, 1.0, 2);
    assert!(bad_gamma.is_err());
    let bad_initial = TabularMdp::new(2, 1, vec![1.0, 0.0, 0.0, 1.0], vec![0.0; 2], vec![0.7, 0.7], 0.9, 1.0, 2);
    assert!(bad_initial.is_err());
}

/// Pearson statistic of observed `(s₀, a₀, s₁)` counts against the exact
/// probabilities.
#[test]
fn sampled_transitions_pass_chi_square() {
    let mdp = TabularMdp::bench3x2();
    let p = TabularSoftmax::new(3, 2);
    let theta = Vector::from_vec(vec![0.4, -0.3, 0.0, 0.8, -0.5, 0.2]);
    let n = 40_000;
    let mut stream = SampleStream::new(17);
    let batch = sample_batch(&mdp, &p, &theta, 2, n, &mut stream, false);
    let (s, a) = (mdp.n_states, mdp.n_actions);
    let mut counts = vec![0usize; s * a * s];
    for t in &batch {
        counts[(t.states[0] * a + t.actions[0]) * s + t.states[1]] += 1;
    }
    let mut stat = 0.0;
    for s0 in 0..s {
        for a0 in 0..a {
            let pa = p.log_prob(&theta, s0, &a0).exp();
            for (s1, &pt) in mdp.transition_row(s0, a0).iter().enumerate() {
                let expected = n as f64 * mdp.initial[s0] * pa * pt;
                let observed = counts[(s0 * a + a0) * s + s1] as f64;
                stat += (observed - expected).powi(2) / expected;
            }
        }
    }
    // Upper 0.1% point of chi-square with 17 degrees of freedom.
    assert!(stat < 40.79, "chi-square statistic {stat}");
}

#[test]
fn sampling_is_reproducible_and_parallel_invariant() {
    let mdp = TabularMdp::bench5x3();
    let p = TabularSoftmax::new(5, 3);
    let theta = Vector::from_element(15, 0.1);
    let a = sample_batch(&mdp, &p, &theta, 20, 64, &mut SampleStream::new(5), false);
    let b = sample_batch(&mdp, &p, &theta, 20, 64, &mut SampleStream::new(5), true);
    assert_eq!(a, b);
    let c = sample_batch(&mdp, &p, &theta, 20, 64, &mut SampleStream::new(6), false);
    assert_ne!(a, c);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn dynamic_programming_matches_enumeration(
        seed in 0u64..1000,
        horizon in 1usize..5,
        theta in prop::collection::vec(-2.0f64..2.0, 6),
    ) {
        let mdp = TabularMdp::random(3, 2, 0.9, 1.0, horizon, seed).unwrap();
        let p = TabularSoftmax::new(3, 2);
        let theta = Vector::from_vec(theta);
        let (mut mass, mut value) = (0.0, 0.0);
        enumerate_trajectories(&mdp, &p, &theta, horizon, |t, prob| {
            mass += prob;
            value += prob * truncated_return(t, mdp.gamma);
        })
        .unwrap();
        prop_assert!((mass - 1.0f64).abs() < 1e-12);
        let j = exact_objective(&mdp, &p, &theta, horizon).unwrap();
        prop_assert!((j - value).abs() < 1e-12);
        let grad = dp_gradient(&mdp, &p, &theta, horizon).unwrap();
        let fd = exact_gradient(&mdp, &p, &theta, horizon).unwrap();
        prop_assert!((grad - fd).amax() < 1e-6);
    }
}
