use rand::seq::SliceRandom;
use rand::Rng;

use super::*;
use crate::error::CheckpointError;
use crate::physics::delay_depth;
use crate::rng::stream_rng;

fn params() -> RatchetParams {
    RatchetParams::default()
}

fn random_positions(rng: &mut impl Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-3.0..3.0)).collect()
}

fn batch_of(n: usize, depth: usize, states: &[(Vec<f64>, Vec<Switch>)]) -> ObsBatch {
    let mut b = ObsBatch::new(n, depth);
    for (x, h) in states {
        b.push(x, h.iter().copied(), &params()).unwrap();
    }
    b
}

fn zero_weights(net: &mut Network) {
    for p in net.params_mut().iter_mut() {
        p.value.fill(0.0);
    }
}

#[test]
fn two_way_softmax_matches_graph_softmax_bitwise() {
    use crate::autograd::softmax_along;
    let mut rng = stream_rng(12, 0);
    let mut cases: Vec<[f64; 2]> =
        (0..1000).map(|_| [rng.random_range(-40.0..40.0), rng.random_range(-40.0..40.0)]).collect();
    cases.extend([[0.0, 0.0], [800.0, -800.0], [-1e3, 1e3], [1.0, 1.0]]);
    for l in cases {
        let t = Tensor::vector(l.to_vec());
        for log in [false, true] {
            let want = softmax_along(&t, 0, log);
            let got = softmax2(l, log);
            assert_eq!(got[0].to_bits(), want.data()[0].to_bits(), "{l:?} log={log}");
            assert_eq!(got[1].to_bits(), want.data()[1].to_bits(), "{l:?} log={log}");
        }
    }
}

#[test]
fn direct_route_matches_graph() {
    let mut rng = stream_rng(11, 0);
    // batch sizes straddle the chunk boundary
    for (kind, n, len) in [
        (ArchKind::Mlp, 1, 1000),
        (ArchKind::Mlp, 3, 7),
        (ArchKind::DeepSets, 2, 300),
        (ArchKind::DeepSets, 300, 5),
        (ArchKind::DeepSets, 1, 1),
    ] {
        for out_dim in [1, 2] {
            let net = Network::new(ArchConfig { out_dim, ..ArchConfig::policy(kind, n) }, &mut rng).unwrap();
            let states: Vec<_> = (0..len).map(|_| (random_positions(&mut rng, n), vec![])).collect();
            let b = batch_of(n, 0, &states);
            let direct = net.outputs(&b).unwrap();
            let graph = net.outputs_graph(&b).unwrap();
            assert_eq!(direct.shape(), graph.shape());
            for (x, y) in direct.data().iter().zip(graph.data()) {
                assert!((x - y).abs() <= 1e-12 * (1.0 + y.abs()), "{kind} n={n}: {x} vs {y}");
            }
        }
    }
}

#[test]
fn zero_weights_give_even_odds() {
    let mut rng = stream_rng(1, 0);
    for kind in [ArchKind::Mlp, ArchKind::DeepSets, ArchKind::Rnn] {
        let mut net = Network::new(ArchConfig::policy(kind, 3), &mut rng).unwrap();
        zero_weights(&mut net);
        let depth = if kind == ArchKind::Rnn { 4 } else { 0 };
        let hist = vec![Switch::On; depth];
        let b = batch_of(3, depth, &[(random_positions(&mut rng, 3), hist)]);
        let out = net.policy_outputs(&b).unwrap()[0];
        assert_eq!(out.p_on, 0.5, "{kind}");
        assert_eq!(out.p_off, 0.5, "{kind}");
        assert_eq!(deterministic_action(&out), Switch::Off);
    }
}

#[test]
fn mlp_is_order_sensitive() {
    let mut rng = stream_rng(2, 0);
    let net = Network::new(ArchConfig::policy(ArchKind::Mlp, 2), &mut rng).unwrap();
    let b = batch_of(2, 0, &[(vec![0.1, 0.6], vec![]), (vec![0.6, 0.1], vec![])]);
    let out = net.policy_outputs(&b).unwrap();
    assert!((out[0].p_on - out[1].p_on).abs() > 1e-9);
}

#[test]
fn mlp_rejects_other_particle_counts() {
    let mut rng = stream_rng(3, 0);
    let net = Network::new(ArchConfig::policy(ArchKind::Mlp, 2), &mut rng).unwrap();
    let b = batch_of(3, 0, &[(vec![0.1, 0.2, 0.3], vec![])]);
    assert!(matches!(net.policy_outputs(&b), Err(Error::Incompatible(_))));
}

#[test]
fn deepsets_is_permutation_invariant() {
    let mut rng = stream_rng(4, 0);
    let net = Network::new(ArchConfig::policy(ArchKind::DeepSets, 1), &mut rng).unwrap();
    for n in [1usize, 2, 4, 8, 16] {
        let x = random_positions(&mut rng, n);
        let mut states = vec![(x.clone(), vec![])];
        for _ in 0..100 {
            let mut y = x.clone();
            y.shuffle(&mut rng);
            states.push((y, vec![]));
        }
        let out = net.outputs(&batch_of(n, 0, &states)).unwrap();
        let first = &out.data()[..2];
        for row in out.data().chunks_exact(2) {
            assert!((row[0] - first[0]).abs() < 1e-12, "n = {n}");
            assert!((row[1] - first[1]).abs() < 1e-12, "n = {n}");
        }
    }
}

#[test]
fn deepsets_ignores_duplication() {
    let mut rng = stream_rng(5, 0);
    let net = Network::new(ArchConfig::policy(ArchKind::DeepSets, 1), &mut rng).unwrap();
    for _ in 0..20 {
        let x = random_positions(&mut rng, 5);
        let mut doubled = x.clone();
        doubled.extend_from_slice(&x);
        let a = net.outputs(&batch_of(5, 0, &[(x, vec![])])).unwrap();
        let b = net.outputs(&batch_of(10, 0, &[(doubled, vec![])])).unwrap();
        for (u, v) in a.data().iter().zip(b.data()) {
            assert!((u - v).abs() < 1e-12);
        }
    }
}

#[test]
fn deepsets_handles_any_particle_count() {
    let mut rng = stream_rng(6, 0);
    let net = Network::new(ArchConfig::policy(ArchKind::DeepSets, 1), &mut rng).unwrap();
    for n in [1, 3, 64, 500] {
        let b = batch_of(n, 0, &[(random_positions(&mut rng, n), vec![])]);
        assert_eq!(net.policy_outputs(&b).unwrap().len(), 1);
    }
}

#[test]
fn rnn_sees_the_history() {
    let mut rng = stream_rng(7, 0);
    let net = Network::new(ArchConfig::policy(ArchKind::Rnn, 1), &mut rng).unwrap();
    let depth = delay_depth(0.05, params().dt).unwrap();
    assert_eq!(depth, 50);
    let x = random_positions(&mut rng, 4);
    let mut histories = vec![vec![Switch::Off; depth], vec![Switch::On; depth]];
    let mut alt = vec![Switch::Off; depth];
    alt[depth - 1] = Switch::On;
    histories.push(alt);
    let states: Vec<_> = histories.into_iter().map(|h| (x.clone(), h)).collect();
    let out = net.outputs(&batch_of(4, depth, &states)).unwrap();
    let d = out.data();
    assert!((d[0] - d[2]).abs() > 1e-9);
    assert!((d[0] - d[4]).abs() > 1e-9);
}

#[test]
fn rnn_with_single_step_delay() {
    let mut rng = stream_rng(8, 0);
    let net = Network::new(ArchConfig::policy(ArchKind::Rnn, 1), &mut rng).unwrap();
    let depth = delay_depth(1e-3, params().dt).unwrap();
    assert_eq!(depth, 1);
    let x = random_positions(&mut rng, 3);
    let b = batch_of(3, 1, &[(x.clone(), vec![Switch::Off]), (x, vec![Switch::On])]);
    let out = net.policy_outputs(&b).unwrap();
    assert!((out[0].p_on - out[1].p_on).abs() > 1e-12);
}

#[test]
fn rnn_needs_a_history() {
    let mut rng = stream_rng(9, 0);
    let net = Network::new(ArchConfig::policy(ArchKind::Rnn, 1), &mut rng).unwrap();
    let b = batch_of(2, 0, &[(vec![0.0, 0.5], vec![])]);
    assert!(net.outputs(&b).is_err());
}

#[test]
fn rnn_is_permutation_invariant_in_positions() {
    let mut rng = stream_rng(10, 0);
    let net = Network::new(ArchConfig::policy(ArchKind::Rnn, 1), &mut rng).unwrap();
    let h: Vec<Switch> = (0..7).map(|i| Switch::from_bool(i % 3 == 0)).collect();
    let x = random_positions(&mut rng, 6);
    let mut y = x.clone();
    y.reverse();
    let out = net.outputs(&batch_of(6, 7, &[(x, h.clone()), (y, h)])).unwrap();
    let d = out.data();
    assert!((d[0] - d[2]).abs() < 1e-12 && (d[1] - d[3]).abs() < 1e-12);
}

#[test]
fn value_heads_emit_one_scalar_per_sample() {
    let mut rng = stream_rng(11, 0);
    for kind in [ArchKind::Mlp, ArchKind::DeepSets, ArchKind::Rnn] {
        let net = Network::new(ArchConfig::policy(kind, 2).value_head(), &mut rng).unwrap();
        let depth = if kind == ArchKind::Rnn { 3 } else { 0 };
        let states: Vec<_> =
            (0..5).map(|_| (random_positions(&mut rng, 2), vec![Switch::On; depth])).collect();
        let v = net.values(&batch_of(2, depth, &states)).unwrap();
        assert_eq!(v.len(), 5);
        assert!(net.policy_outputs(&batch_of(2, depth, &states)).is_err());
    }
}

#[test]
fn policy_output_is_a_distribution() {
    let mut rng = stream_rng(12, 0);
    let net = Network::new(ArchConfig::policy(ArchKind::DeepSets, 1), &mut rng).unwrap();
    let states: Vec<_> = (0..10_000).map(|_| (random_positions(&mut rng, 2), vec![])).collect();
    for out in net.policy_outputs(&batch_of(2, 0, &states)).unwrap() {
        assert!((0.0..=1.0).contains(&out.p_on) && (0.0..=1.0).contains(&out.p_off));
        assert!((out.p_on + out.p_off - 1.0).abs() < 1e-12);
        assert!((out.log_prob(Switch::On).exp() - out.p_on).abs() < 1e-12);
    }
}

#[test]
fn extreme_logits_stay_finite() {
    let out = PolicyOutput::from_logits([800.0, -800.0]);
    assert_eq!(out.p_on, 1.0);
    assert!(out.log_prob(Switch::Off).is_finite());
    assert!(out.log_prob(Switch::Off) < -1e3);
}

#[test]
fn sampling_matches_p_on() {
    // binomial check: 10^5 draws at p = 0.3 within 5 standard deviations
    let out = PolicyOutput::from_logits([0.3f64.ln(), 0.7f64.ln()]);
    assert!((out.p_on - 0.3).abs() < 1e-12);
    let mut rng = stream_rng(13, 0);
    let draws = 100_000;
    let ons = (0..draws).filter(|_| sample_action(&out, &mut rng).0 == Switch::On).count();
    let sd = (draws as f64 * 0.3 * 0.7).sqrt();
    assert!((ons as f64 - 0.3 * draws as f64).abs() < 5.0 * sd, "{ons}");
}

#[test]
fn sampled_log_prob_matches_action() {
    let out = PolicyOutput::from_logits([0.2, -0.4]);
    let mut rng = stream_rng(14, 0);
    for _ in 0..100 {
        let (a, lp) = sample_action(&out, &mut rng);
        assert_eq!(lp, out.log_prob(a));
    }
}

#[test]
fn certain_policies_never_deviate() {
    let mut rng = stream_rng(15, 0);
    let on = PolicyOutput { p_on: 1.0, p_off: 0.0, logits: [0.0, f64::NEG_INFINITY] };
    let off = PolicyOutput { p_on: 0.0, p_off: 1.0, logits: [f64::NEG_INFINITY, 0.0] };
    for _ in 0..1000 {
        assert_eq!(sample_action(&on, &mut rng).0, Switch::On);
        assert_eq!(sample_action(&off, &mut rng).0, Switch::Off);
    }
}

#[test]
fn deterministic_rule_breaks_ties_toward_off() {
    assert_eq!(deterministic_action(&PolicyOutput::from_logits([1.0, 1.0])), Switch::Off);
    assert_eq!(deterministic_action(&PolicyOutput::from_logits([1.0 + 1e-9, 1.0])), Switch::On);
    assert_eq!(deterministic_action(&PolicyOutput::from_logits([0.0, 1e-9])), Switch::Off);
}

#[test]
fn obs_batch_selection_and_ranges() {
    let mut rng = stream_rng(16, 0);
    let states: Vec<_> =
        (0..6).map(|i| (random_positions(&mut rng, 3), vec![Switch::from_bool(i % 2 == 0); 2])).collect();
    let b = batch_of(3, 2, &states);
    let sel = b.select(&[4, 1]);
    assert_eq!(sel.len(), 2);
    assert_eq!(sel.sample(0), b.sample(4));
    assert_eq!(sel.sample(1), b.sample(1));
    let r = b.range(2, 5);
    assert_eq!(r.sample(0), b.sample(2));
    let mut joined = b.range(0, 2);
    joined.extend(&b.range(2, 6));
    assert_eq!(joined, b);
}

#[test]
fn obs_batch_rejects_wrong_history() {
    let mut b = ObsBatch::new(2, 3);
    assert!(b.push(&[0.0, 1.0], [Switch::On; 2], &params()).is_err());
    assert!(b.push(&[0.0], [Switch::On; 3], &params()).is_err());
    assert!(b.is_empty());
    assert!(b.history().is_empty());
}

fn checkpoint(kind: ArchKind) -> Checkpoint {
    let mut rng = stream_rng(17, kind as u64);
    let cfg = ArchConfig::policy(kind, 2);
    Checkpoint {
        meta: CheckpointMeta {
            n: 2,
            tau: if kind == ArchKind::Rnn { 0.005 } else { 0.0 },
            seed: 42,
            epoch: 7,
        },
        policy: Network::new(cfg, &mut rng).unwrap(),
        value: Some(Network::new(cfg.value_head(), &mut rng).unwrap()),
    }
}

#[test]
fn checkpoint_round_trip_is_exact() {
    for kind in [ArchKind::Mlp, ArchKind::DeepSets, ArchKind::Rnn] {
        let ck = checkpoint(kind);
        let back = Checkpoint::from_text(&ck.to_text()).unwrap();
        assert_eq!(back, ck, "{kind}");
        assert_eq!(back.to_text(), ck.to_text());
    }
}

#[test]
fn checkpoint_without_value_net() {
    let mut ck = checkpoint(ArchKind::DeepSets);
    ck.value = None;
    let back = Checkpoint::from_text(&ck.to_text()).unwrap();
    assert!(back.value.is_none());
    assert_eq!(back.policy, ck.policy);
}

#[test]
fn checkpoint_file_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("policy.ckpt");
    let ck = checkpoint(ArchKind::Rnn);
    save_checkpoint(&ck, &path).unwrap();
    assert_eq!(load_checkpoint(&path).unwrap(), ck);
    assert!(matches!(load_checkpoint(&dir.path().join("missing")), Err(Error::Io { .. })));
}

#[test]
fn checkpoint_errors_are_distinct() {
    let text = checkpoint(ArchKind::DeepSets).to_text();

    let bad_header = text.replacen(CHECKPOINT_HEADER, "RATCHET-CKPT v0", 1);
    assert!(matches!(
        Checkpoint::from_text(&bad_header),
        Err(Error::Checkpoint(CheckpointError::VersionMismatch { .. }))
    ));

    let cut = &text[..text.len() * 2 / 3];
    let cut = &cut[..cut.rfind('\n').unwrap()];
    assert!(matches!(Checkpoint::from_text(cut), Err(Error::Checkpoint(CheckpointError::Truncated(_)))));

    let reshaped = text.replacen("param policy.phi1.weight 64x2", "param policy.phi1.weight 32x4", 1);
    assert!(matches!(
        Checkpoint::from_text(&reshaped),
        Err(Error::Checkpoint(CheckpointError::ShapeMismatch { .. }))
    ));

    let garbled = text.replacen("epoch=7", "epoch=seven", 1);
    assert!(matches!(
        Checkpoint::from_text(&garbled),
        Err(Error::Checkpoint(CheckpointError::Malformed { .. }))
    ));

    assert!(matches!(
        Checkpoint::from_text(""),
        Err(Error::Checkpoint(CheckpointError::VersionMismatch { .. }))
    ));
}

#[test]
fn checkpoint_compatibility() {
    let p = params();
    let rnn = checkpoint(ArchKind::Rnn);
    assert!(rnn.check_compatible(9, 0.005, &p).is_ok());
    assert!(rnn.check_compatible(9, 0.01, &p).is_err());
    assert!(rnn.check_compatible(9, 0.0, &p).is_err());
    let mlp = checkpoint(ArchKind::Mlp);
    assert!(mlp.check_compatible(2, 0.0, &p).is_ok());
    assert!(mlp.check_compatible(3, 0.0, &p).is_err());
    let ds = checkpoint(ArchKind::DeepSets);
    assert!(ds.check_compatible(1000, 0.0, &p).is_ok());
}

/// Gradchecks of whole networks at reduced widths; finite differences over
/// the default widths would take minutes per configuration.
fn gradcheck_network(kind: ArchKind, n: usize, depth: usize, out_dim: usize, seed: u64) {
    let mut rng = stream_rng(seed, 0);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let config = ArchConfig { hidden: 6, embed: 3, out_dim, ..ArchConfig::policy(kind, n) };
        let net = Network::new(config, &mut rng).unwrap();
        let states: Vec<_> = (0..3)
            .map(|_| {
                let h: Vec<_> =
                    (0..depth).map(|_| if rng.random::<bool>() { Switch::On } else { Switch::Off }).collect();
                (random_positions(&mut rng, n), h)
            })
            .collect();
        let b = batch_of(n, depth, &states);
        let w: Vec<f64> = (0..3 * out_dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        let w = Tensor::matrix(3, out_dim, w).unwrap();
        worst = worst.max(net.grad_error(&b, &w).unwrap());
    }
    assert!(worst < 1e-4, "{kind}: worst relative error {worst}");
}

#[test]
fn gradcheck_mlp_policy() {
    gradcheck_network(ArchKind::Mlp, 2, 0, 2, 21);
}

#[test]
fn gradcheck_deepsets_policy() {
    gradcheck_network(ArchKind::DeepSets, 3, 0, 2, 22);
}

#[test]
fn gradcheck_rnn_policy() {
    gradcheck_network(ArchKind::Rnn, 2, 3, 2, 23);
}

#[test]
fn gradcheck_value_heads() {
    gradcheck_network(ArchKind::DeepSets, 2, 0, 1, 24);
    gradcheck_network(ArchKind::Rnn, 1, 2, 1, 25);
}
