use proptest::prelude::*;
use rand::Rng;

use super::*;
use crate::policy::{ArchKind, PolicyOutput};

fn direct_return(rewards: &[f64], boot: f64, gamma: f64, t: usize) -> f64 {
    let horizon = rewards.len();
    let mut total = 0.0;
    for l in 0..horizon - t {
        total += gamma.powi(l as i32) * rewards[t + l];
    }
    total + gamma.powi((horizon - t) as i32) * boot
}

fn random_traj(rng: &mut impl Rng, len: usize) -> (Vec<f64>, Vec<f64>) {
    let r = (0..len).map(|_| rng.random_range(-1.0..1.0)).collect();
    let v = (0..=len).map(|_| rng.random_range(-5.0..5.0)).collect();
    (r, v)
}

#[test]
fn return_examples() {
    assert_eq!(estimated_return(&[1.0, 1.0], &[0.0, 0.0, 10.0], 0.5), vec![4.0, 6.0]);
    let r = [0.3, -0.2, 0.9];
    assert_eq!(estimated_return(&r, &[7.0, 7.0, 7.0, 100.0], 0.0), r.to_vec());
}

#[test]
fn return_recursion_matches_direct_sum() {
    let mut rng = stream_rng(1, 0);
    for _ in 0..200 {
        let len = rng.random_range(1..40);
        let (r, v) = random_traj(&mut rng, len);
        let gamma = rng.random_range(0.0..1.0);
        let g = estimated_return(&r, &v, gamma);
        for t in 0..len {
            assert!((g[t] - direct_return(&r, v[len], gamma, t)).abs() < 1e-12);
        }
    }
}

#[test]
fn td_residual_examples() {
    assert_eq!(td_residuals(&[1.0], &[0.0, 0.0], 0.99), vec![1.0]);
    let c = 3.0;
    let d = td_residuals(&[0.0; 4], &[c; 5], 0.9);
    for x in d {
        assert!((x - (0.9 - 1.0) * c).abs() < 1e-15);
    }
    let mut rng = stream_rng(2, 0);
    let (r, v) = random_traj(&mut rng, 50);
    let d = td_residuals(&r, &v, 0.97);
    for t in 0..50 {
        let expected = r[t] + 0.97 * v[t + 1] - v[t];
        assert!((d[t] - expected).abs() <= 1e-15);
    }
}

#[test]
fn gae_examples() {
    assert_eq!(gae(&[1.0, 2.0], 1.0, 0.5), vec![2.0, 2.0]);
    assert_eq!(gae(&[1.0, 2.0], 0.5, 1.0), vec![2.0, 2.0]);
    let d = [0.1, -0.4, 2.5];
    assert_eq!(gae(&d, 0.999, 0.0), d.to_vec());
}

#[test]
fn rl_identities_on_random_trajectories() {
    let mut rng = stream_rng(3, 0);
    for _ in 0..1000 {
        let len = rng.random_range(1..60);
        let (r, v) = random_traj(&mut rng, len);
        let gamma = rng.random_range(0.5..1.0);
        let d = td_residuals(&r, &v, gamma);
        assert_eq!(gae(&d, gamma, 0.0), d);
        let a = gae(&d, gamma, 1.0);
        let g = estimated_return(&r, &v, gamma);
        for t in 0..len {
            assert!((a[t] - (g[t] - v[t])).abs() < 1e-9);
        }
    }
}

#[test]
fn clip_examples() {
    assert!((clip_bound(0.2, 2.0) - 2.4).abs() < 1e-15);
    assert!((clip_bound(0.2, -1.0) + 0.8).abs() < 1e-15);
    assert!((clipped_objective(&[2f64.ln()], &[1.5], 0.2) - 1.2 * 1.5).abs() < 1e-12);
    // negative advantage at a large ratio is not clipped
    assert!((clipped_objective(&[2f64.ln()], &[-1.0], 0.2) + 2.0).abs() < 1e-12);
}

#[test]
fn objective_at_unit_ratio_is_mean_advantage() {
    let mut rng = stream_rng(4, 0);
    for _ in 0..1000 {
        let len = rng.random_range(1..50);
        let a: Vec<f64> = (0..len).map(|_| rng.random_range(-3.0..3.0)).collect();
        let mean = a.iter().sum::<f64>() / len as f64;
        assert!((clipped_objective(&vec![0.0; len], &a, 0.2) - mean).abs() < 1e-12);
    }
}

#[test]
fn kld_examples() {
    let old = [-0.1, -2.0, -0.7];
    assert_eq!(kld_estimate(&old, &old), 0.0);
    let shifted: Vec<f64> = old.iter().map(|x| x - 0.25).collect();
    assert!((kld_estimate(&old, &shifted) - 0.25).abs() < 1e-15);
}

#[test]
fn kld_estimate_matches_categorical_kl() {
    let p_old = PolicyOutput::from_logits([0.4, -0.3]);
    let p_new = PolicyOutput::from_logits([-0.2, 0.5]);
    let exact = p_old.p_on * (p_old.p_on / p_new.p_on).ln() + p_old.p_off * (p_old.p_off / p_new.p_off).ln();
    let mut rng = stream_rng(5, 0);
    let draws = 200_000;
    let mut old = Vec::with_capacity(draws);
    let mut new = Vec::with_capacity(draws);
    for _ in 0..draws {
        let (a, lp) = sample_action(&p_old, &mut rng);
        old.push(lp);
        new.push(p_new.log_prob(a));
    }
    let est = kld_estimate(&old, &new);
    // per-sample log ratios are bounded by ~1.4 here, so 5 sigma < 0.02
    assert!((est - exact).abs() < 0.02, "{est} vs {exact}");
}

#[test]
fn normalization() {
    let mut xs = vec![1.0, 2.0, 3.0, 6.0];
    normalize(&mut xs);
    let mean = xs.iter().sum::<f64>() / 4.0;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / 4.0;
    assert!(mean.abs() < 1e-15 && (var - 1.0).abs() < 1e-12);
    let mut flat = vec![2.0; 3];
    normalize(&mut flat);
    assert_eq!(flat, vec![0.0; 3]);
}

#[test]
fn table_defaults() {
    assert_eq!(table_batch(1), (1024, 4096));
    assert_eq!(table_batch(2), (512, 4096));
    assert_eq!(table_batch(16), (64, 2048));
    assert_eq!(table_batch(64), (16, 512));
    assert_eq!(table_batch(128), (8, 256));
    assert_eq!(table_batch(8192), (8, 256));
    assert_eq!(table_batch(3), (512, 4096));
    let c = PpoConfig::for_n(1);
    assert!((c.kl_limit() - 0.015).abs() < 1e-15);
    assert_eq!((c.t, c.epochs, c.iters_pi, c.iters_v), (2000, 400, 625, 625));
    c.validate().unwrap();
    assert!(PpoConfig { gamma: 1.5, ..c }.validate().is_err());
    assert!(PpoConfig { lambda: 0.0, ..c }.validate().is_err());
    assert!(PpoConfig { m: 0, ..c }.validate().is_err());
    assert!(PpoConfig { lr_pi: -1.0, ..c }.validate().is_err());
}

fn small_cfg(m: usize, t: usize) -> PpoConfig {
    PpoConfig { t, m, b: 64, epochs: 2, iters_pi: 5, iters_v: 5, ..PpoConfig::for_n(1) }
}

fn nets(kind: ArchKind, n: usize, seed: u64) -> (Network, Network) {
    let spec = TrainSpec {
        arch: ArchConfig::policy(kind, n),
        tau: 0.0,
        params: RatchetParams::default(),
        cfg: small_cfg(2, 3),
        seed,
    };
    init_networks(&spec).unwrap()
}

#[test]
fn collect_bookkeeping() {
    let p = RatchetParams::default();
    let (pi, v) = nets(ArchKind::Mlp, 1, 6);
    let cfg = small_cfg(2, 3);
    let rolls = collect(1, 0.0, &p, &pi, &v, &cfg, 6, 0).unwrap();
    assert_eq!(rolls.len(), 2);
    let triples: usize = rolls.iter().map(Rollout::len).sum();
    assert_eq!(triples, 6);
    for r in &rolls {
        assert_eq!((r.rewards.len(), r.logp.len()), (3, 3));
        assert_eq!((r.states.len(), r.values.len()), (4, 4));
    }
    assert_eq!(rolls, collect(1, 0.0, &p, &pi, &v, &cfg, 6, 0).unwrap());
    assert_ne!(rolls, collect(1, 0.0, &p, &pi, &v, &cfg, 6, 1).unwrap());
}

#[test]
fn collect_replays_and_rewards_telescope() {
    let p = RatchetParams::default();
    let (pi, v) = nets(ArchKind::DeepSets, 1, 7);
    let cfg = small_cfg(3, 40);
    let rolls = collect(5, 0.0, &p, &pi, &v, &cfg, 7, 0).unwrap();
    for (i, r) in rolls.iter().enumerate() {
        // replay member i by hand from its own stream
        let (mut env, mut rng) = member_env(5, 0.0, &p, 7, stream_id(0, i as u64)).unwrap();
        let x0 = env.state.mean_position();
        for t in 0..40 {
            let mut b = ObsBatch::new(5, 0);
            b.push_env(&env).unwrap();
            let out = pi.policy_outputs(&b).unwrap()[0];
            let (a, lp) = sample_action(&out, &mut rng);
            assert_eq!((a, lp), (r.actions[t], r.logp[t]));
            assert_eq!(env.step(a, &mut rng).unwrap(), r.rewards[t]);
        }
        let total: f64 = r.rewards.iter().sum();
        assert!((total - (env.state.mean_position() - x0)).abs() < 1e-9);
    }
}

#[test]
fn all_off_rewards_average_to_zero() {
    // a policy with a huge "off" logit bias never switches on
    let p = RatchetParams::default();
    let (mut pi, v) = nets(ArchKind::Mlp, 1, 8);
    let slot = pi.params().find("out.bias").unwrap();
    pi.params_mut().get_mut(slot).value = Tensor::vector(vec![-50.0, 50.0]);
    let cfg = small_cfg(64, 500);
    let rolls = collect(1, 0.0, &p, &pi, &v, &cfg, 8, 0).unwrap();
    assert!(rolls.iter().all(|r| r.actions.iter().all(|&a| a == Switch::Off)));
    // per-trajectory displacement is N(0, 2 D T dt)
    let per_traj: Vec<f64> = rolls.iter().map(|r| r.rewards.iter().sum()).collect();
    let mean = per_traj.iter().sum::<f64>() / 64.0;
    let se = (2.0 * 500.0 * p.dt / 64.0f64).sqrt();
    assert!(mean.abs() < 4.0 * se, "{mean} vs {se}");
}

fn dataset(kind: ArchKind, n: usize, seed: u64, cfg: &PpoConfig) -> (Network, Network, Dataset) {
    let p = RatchetParams::default();
    let (pi, v) = nets(kind, n, seed);
    let rolls = collect(n, 0.0, &p, &pi, &v, cfg, seed, 0).unwrap();
    let ds = Dataset::from_rollouts(&rolls, cfg).unwrap();
    (pi, v, ds)
}

#[test]
fn dataset_matches_rollouts() {
    let cfg = small_cfg(3, 20);
    let p = RatchetParams::default();
    let (pi, v) = nets(ArchKind::Mlp, 2, 9);
    let rolls = collect(2, 0.0, &p, &pi, &v, &cfg, 9, 0).unwrap();
    let ds = Dataset::from_rollouts(&rolls, &cfg).unwrap();
    assert_eq!(ds.len(), 60);
    assert_eq!(ds.obs.sample(25), rolls[1].states.sample(5));
    assert_eq!(ds.returns[20..40], estimated_return(&rolls[1].rewards, &rolls[1].values, cfg.gamma)[..]);
    let mean = ds.advantages.iter().sum::<f64>() / 60.0;
    assert!(mean.abs() < 1e-12);
}

#[test]
fn stored_log_probs_match_recomputation() {
    let cfg = small_cfg(4, 30);
    let (pi, _, ds) = dataset(ArchKind::DeepSets, 3, 10, &cfg);
    let again = log_probs(&pi, &ds.obs, &ds.actions).unwrap();
    assert!(kld_estimate(&ds.logp_old, &again).abs() < 1e-12);
}

#[test]
fn zero_learning_rate_takes_every_step() {
    let cfg = PpoConfig { lr_pi: 0.0, iters_pi: 12, ..small_cfg(4, 30) };
    let (mut pi, _, ds) = dataset(ArchKind::Mlp, 1, 11, &cfg);
    let mut opt = Adam::new(0.0, pi.params());
    let mut rng = stream_rng(11, 99);
    let up = update_policy(&mut pi, &mut opt, &ds, &cfg, &mut rng).unwrap();
    assert_eq!(up.steps, 12);
    assert!(up.kl.abs() < 1e-12);
}

#[test]
fn first_step_objective_is_mean_normalized_advantage() {
    let cfg = small_cfg(4, 30);
    let (pi, _, ds) = dataset(ArchKind::Mlp, 1, 12, &cfg);
    let mut g = Graph::new();
    let loss = policy_loss(&mut g, &pi, &ds.obs, &ds.actions, &ds.logp_old, &ds.advantages, 0.2).unwrap();
    assert!(g.value(loss).item().unwrap().abs() < 1e-12);
}

#[test]
fn surrogate_gradient_at_old_policy_is_the_policy_gradient() {
    let cfg = small_cfg(2, 10);
    let (pi, _, ds) = dataset(ArchKind::DeepSets, 2, 13, &cfg);
    let mut g = Graph::new();
    let loss = policy_loss(&mut g, &pi, &ds.obs, &ds.actions, &ds.logp_old, &ds.advantages, 0.2).unwrap();
    let clipped = g.backward(loss).unwrap();

    // vanilla estimator: -mean(log π(a|s) · Â)
    let mut h = Graph::new();
    let logits = pi.forward(&mut h, &ds.obs).unwrap();
    let lp = h.log_softmax(logits, 1).unwrap();
    let cols: Vec<usize> = ds.actions.iter().map(|&a| action_column(a)).collect();
    let lp = h.gather(lp, &cols).unwrap();
    let adv = h.input(Tensor::vector(ds.advantages.clone()));
    let weighted = h.mul(lp, adv).unwrap();
    let mean = h.mean_all(weighted).unwrap();
    let vanilla_loss = h.scale(mean, -1.0);
    let vanilla = h.backward(vanilla_loss).unwrap();

    let a: Vec<(usize, &Tensor)> = clipped.params().collect();
    let b: Vec<(usize, &Tensor)> = vanilla.params().collect();
    assert_eq!(a.len(), b.len());
    for ((sa, ga), (sb, gb)) in a.iter().zip(&b) {
        assert_eq!(sa, sb);
        for (x, y) in ga.data().iter().zip(gb.data()) {
            let rel = (x - y).abs() / x.abs().max(y.abs()).max(1e-8);
            assert!(rel < 1e-6, "slot {sa}: {x} vs {y}");
        }
    }
}

#[test]
fn early_stopping_bounds_the_kl() {
    let cfg = PpoConfig { lr_pi: 3e-2, iters_pi: 200, ..small_cfg(8, 50) };
    let (mut pi, _, ds) = dataset(ArchKind::Mlp, 1, 14, &cfg);
    let mut opt = Adam::new(cfg.lr_pi, pi.params());
    let mut rng = stream_rng(14, 99);
    let up = update_policy(&mut pi, &mut opt, &ds, &cfg, &mut rng).unwrap();
    assert!(up.steps < cfg.iters_pi, "never stopped: kl {}", up.kl);
    assert!(up.kl > cfg.kl_limit());
    // the KL reported is the one measured after the final step
    let now = kld_estimate(&ds.logp_old, &log_probs(&pi, &ds.obs, &ds.actions).unwrap());
    assert_eq!(now, up.kl);
}

#[test]
fn value_loss_is_zero_for_zero_targets_and_zero_head() {
    let cfg = small_cfg(3, 10);
    let (_, mut v, mut ds) = dataset(ArchKind::DeepSets, 2, 15, &cfg);
    for name in ["out.weight", "out.bias"] {
        let slot = v.params().find(name).unwrap();
        v.params_mut().get_mut(slot).value.fill(0.0);
    }
    ds.returns.fill(0.0);
    assert_eq!(value_mse(&v, &ds).unwrap(), 0.0);
}

#[test]
fn value_regression_reduces_error() {
    let cfg = PpoConfig { lr_v: 1e-5, b: 16, ..small_cfg(2, 16) };
    let (_, mut v, ds) = dataset(ArchKind::Mlp, 1, 16, &cfg);
    let mut opt = Adam::new(cfg.lr_v, v.params());
    let mut rng = stream_rng(16, 99);
    let mut prev = value_mse(&v, &ds).unwrap();
    // full-batch steps on a fixed dataset
    for _ in 0..20 {
        let full = PpoConfig { iters_v: 1, b: ds.len(), ..cfg };
        let mse = update_value(&mut v, &mut opt, &ds, &full, &mut rng).unwrap();
        assert!(mse <= prev + 1e-12, "{mse} > {prev}");
        prev = mse;
    }
}

#[test]
fn minibatches_cover_a_pass_without_repeats() {
    let mut rng = stream_rng(17, 0);
    let mut b = Batches::new(10, 3, &mut rng);
    let mut seen: Vec<usize> = Vec::new();
    for _ in 0..3 {
        let idx = b.next_batch();
        assert_eq!(idx.len(), 3);
        seen.extend_from_slice(idx);
    }
    seen.sort_unstable();
    seen.dedup();
    assert_eq!(seen.len(), 9);
    // oversize batches are clamped to the dataset
    let mut rng = stream_rng(17, 1);
    let mut b = Batches::new(4, 100, &mut rng);
    assert_eq!(b.next_batch().len(), 4);
}

#[test]
fn training_is_reproducible() {
    let spec = TrainSpec {
        arch: ArchConfig::policy(ArchKind::Mlp, 1),
        tau: 0.0,
        params: RatchetParams::default(),
        cfg: PpoConfig { epochs: 2, ..small_cfg(4, 50) },
        seed: 18,
    };
    let strip = |ms: &[EpochMetrics]| -> Vec<EpochMetrics> {
        ms.iter().map(|m| EpochMetrics { wall_time_s: 0.0, ..*m }).collect()
    };
    let mut seen = 0;
    let a = train(&spec, |_| {
        seen += 1;
        Ok(())
    })
    .unwrap();
    assert_eq!(seen, 2);
    let b = train(&spec, |_| Ok(())).unwrap();
    assert_eq!(strip(&a.metrics), strip(&b.metrics));
    assert_eq!(a.last, b.last);
    assert_eq!(a.last.meta.epoch, 2);
    assert!(a.best.meta.epoch < 2);
    let mut csv = Vec::new();
    a.metrics[0].write_csv_row(&mut csv).unwrap();
    assert_eq!(String::from_utf8(csv).unwrap().split(',').count(), METRICS_HEADER.split(',').count());
}

#[test]
fn delayed_training_uses_histories() {
    let spec = TrainSpec {
        arch: ArchConfig::policy(ArchKind::Rnn, 1),
        tau: 0.003,
        params: RatchetParams::default(),
        cfg: PpoConfig { epochs: 1, ..small_cfg(2, 10) },
        seed: 19,
    };
    let out = train(&spec, |_| Ok(())).unwrap();
    assert_eq!(out.metrics.len(), 1);
    let bad = TrainSpec { tau: 0.0, ..spec };
    assert!(train(&bad, |_| Ok(())).is_err());
}

proptest! {
    #[test]
    fn gae_lambda_one_telescopes(
        r in prop::collection::vec(-1.0f64..1.0, 1..30),
        boot in -5.0f64..5.0,
        gamma in 0.1f64..1.0,
        seed in any::<u64>(),
    ) {
        let mut rng = stream_rng(seed, 0);
        let mut v: Vec<f64> = (0..r.len()).map(|_| rng.random_range(-5.0..5.0)).collect();
        v.push(boot);
        let a = gae(&td_residuals(&r, &v, gamma), gamma, 1.0);
        let g = estimated_return(&r, &v, gamma);
        for t in 0..r.len() {
            prop_assert!((a[t] - (g[t] - v[t])).abs() < 1e-9);
        }
    }

    #[test]
    fn objective_never_exceeds_clip_bound(lr in -2.0f64..2.0, a in -3.0f64..3.0) {
        let obj = clipped_objective(&[lr], &[a], 0.2);
        prop_assert!(obj <= clip_bound(0.2, a) + 1e-12);
    }
}
