use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use trace_forge_core::sim::*;

fn trained_policy(env: &SyntheticEnv, steps: usize) -> TabularPolicy {
    let cfg = TrainConfig { steps, seed: 11, ..Default::default() };
    train(env, &cfg).unwrap().1
}

#[test]
fn analytic_gradient_matches_finite_differences() {
    let env = SyntheticEnv::new(4, vec![2, 0, 3], true).unwrap();
    // away from the uniform start so ratios and KL are non-trivial
    let policy = trained_policy(&env, 40);
    let mut off = policy.clone();
    for (j, w) in off.logits_mut().iter_mut().enumerate() {
        *w += 0.05 * ((j * 7 % 5) as f64 - 2.0);
    }
    for method in Method::ALL {
        let cfg = TrainConfig { method, ..Default::default() };
        let ro = rollout_seeded(&policy, &env, 6, 3).unwrap();
        let adv = advantages(&ro, &cfg).unwrap();
        let check = gradient_check(&off, &env, &ro, &adv, 0.7, 1e-5).unwrap();
        assert!(check.compared > 0);
        assert!(check.max_relative < 1e-5, "{method}: {check:?}");
    }
}

#[test]
fn zero_lambda_bilevel_is_step_group() {
    let env = SyntheticEnv::hard();
    let run = |method, lambda| {
        train(&env, &TrainConfig { method, lambda, steps: 60, seed: 5, ..Default::default() }).unwrap()
    };
    let (a, pa) = run(Method::Bilevel, 0.0);
    let (b, pb) = run(Method::StepGroup, 0.3);
    assert_eq!(pa.logits(), pb.logits());
    assert_eq!(a.points, b.points);
}

#[test]
fn kl_is_non_negative_and_zero_at_reference() {
    let env = SyntheticEnv::new(3, vec![1, 1, 2, 0], false).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut p = TabularPolicy::uniform(&env);
    assert_eq!(exact_kl(&p, &env).0, 0.0);
    for _ in 0..50 {
        for w in p.logits_mut() {
            *w = rand::Rng::gen_range(&mut rng, -3.0..3.0);
        }
        assert!(exact_kl(&p, &env).0 >= 0.0);
    }
}

#[test]
fn uniform_rollouts_hit_one_in_vocab() {
    let env = SyntheticEnv::new(4, vec![0, 1, 2], true).unwrap();
    let p = TabularPolicy::uniform(&env);
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let trials = 10_000;
    let mut hits = 0usize;
    for _ in 0..trials / 5 {
        let ro = rollout(&p, &env, 5, &mut rng).unwrap();
        hits += ro.rewards.step().iter().flatten().map(|&r| r as usize).sum::<usize>();
    }
    let samples = (trials * 3) as f64;
    let rate = hits as f64 / samples;
    let sigma = (0.25 * 0.75 / samples).sqrt();
    assert!((rate - 0.25).abs() < 3.0 * sigma, "rate {rate}");
}

#[test]
fn training_is_deterministic_per_seed() {
    let env = SyntheticEnv::hard();
    let cfg = TrainConfig { steps: 50, seed: 9, ..Default::default() };
    assert_eq!(train(&env, &cfg).unwrap().0, train(&env, &cfg).unwrap().0);
    let other = TrainConfig { seed: 10, ..cfg.clone() };
    assert_ne!(train(&env, &cfg).unwrap().0, train(&env, &other).unwrap().0);
}

#[test]
fn single_anchor_env_is_solved_by_every_method() {
    let env = SyntheticEnv::single(4);
    for method in Method::ALL {
        let (c, _) = train(&env, &TrainConfig { method, ..Default::default() }).unwrap();
        assert!(c.last().expected_final_reward >= 0.95, "{method}: {:?}", c.last());
    }
}

#[test]
fn config_is_validated() {
    let env = SyntheticEnv::hard();
    for bad in [
        TrainConfig { group: 1, ..Default::default() },
        TrainConfig { steps: 0, ..Default::default() },
        TrainConfig { lr: f64::NAN, ..Default::default() },
        TrainConfig { kl_coef: -1.0, ..Default::default() },
    ] {
        assert!(matches!(train(&env, &bad), Err(SimError::InvalidConfig(_))));
    }
}

#[test]
fn plots_are_written() {
    let env = SyntheticEnv::new(3, vec![0, 1], true).unwrap();
    let curves: Vec<Curve> = Method::ALL
        .iter()
        .map(|&method| train(&env, &TrainConfig { method, steps: 30, ..Default::default() }).unwrap().0)
        .collect();
    let dir = tempfile::tempdir().unwrap();
    let cfg = PlotConfig { window: 1, ..Default::default() };
    let files = plot_curves(&curves, dir.path(), &cfg).unwrap();
    assert_eq!(files.len(), 6);
    let csv = std::fs::read_to_string(dir.path().join("curves.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 3 * 30);
    // window 1: smoothed columns equal raw ones
    let mut rd = csv::Reader::from_reader(csv.as_bytes());
    for row in rd.records() {
        let row = row.unwrap();
        assert_eq!(&row[3], &row[4]);
        assert_eq!(&row[5], &row[6]);
    }
    let svg = std::fs::read_to_string(dir.path().join("reward.svg")).unwrap();
    assert!(svg.starts_with("<svg") && svg.matches("<polyline").count() == 6);
    let meta: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("metadata.json")).unwrap()).unwrap();
    assert_eq!(meta["window"], 1);
    assert!(plot_curves(&curves, dir.path(), &PlotConfig { window: 0, ..cfg }).is_err());
}
