use dccda_core::channel::NoiseModel;
use dccda_core::estimator::{baseline_from, estimate, kl_term, weighted_score, EstimatorKind, HyperParams};
use dccda_core::metrics::{MetricsLog, MetricsRow};
use dccda_core::model::{HistoryCodec, MixedRadix};
use dccda_core::policy::SoftmaxPolicy;
use proptest::prelude::*;

fn probs_of(logits: &[f64]) -> Vec<f64> {
    let mut p = SoftmaxPolicy::new(logits.len());
    p.set_logits(0, logits.to_vec()).unwrap();
    p.action_distribution(0)
}

fn logits_and_values() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
    (2usize..6).prop_flat_map(|n| {
        (
            prop::collection::vec(-4.0f64..4.0, n),
            prop::collection::vec(-3.0f64..3.0, n),
        )
    })
}

proptest! {
    #[test]
    fn softmax_is_a_distribution(logits in prop::collection::vec(-30.0f64..30.0, 1..8)) {
        let p = probs_of(&logits);
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert!(p.iter().all(|&x| x > 0.0));
    }

    #[test]
    fn shifting_logits_keeps_the_distribution(logits in prop::collection::vec(-5.0f64..5.0, 2..6), c in -10.0f64..10.0) {
        let shifted: Vec<f64> = logits.iter().map(|x| x + c).collect();
        for (a, b) in probs_of(&logits).iter().zip(probs_of(&shifted)) {
            prop_assert!((a - b).abs() < 1e-12);
        }
    }

    /// Any action-independent baseline has zero mean contribution.
    #[test]
    fn constant_baseline_has_zero_mean((logits, _) in logits_and_values(), b in -10.0f64..10.0) {
        let p = probs_of(&logits);
        let mut mean = vec![0.0; p.len()];
        for (a, pa) in p.iter().enumerate() {
            for (m, g) in mean.iter_mut().zip(weighted_score(&p, a as u32, b)) {
                *m += pa * g;
            }
        }
        prop_assert!(mean.iter().all(|m| m.abs() < 1e-12));
    }

    #[test]
    fn baseline_estimators_share_the_plain_mean((logits, q) in logits_and_values()) {
        let p = probs_of(&logits);
        let params = HyperParams { beta: 0.0, ..HyperParams::default() };
        let mut plain = vec![0.0; p.len()];
        let mut ob = vec![0.0; p.len()];
        for (a, pa) in p.iter().enumerate() {
            let x = estimate(EstimatorKind::Dccda, &p, a as u32, &q, &params).unwrap();
            let y = estimate(EstimatorKind::DccdaOb, &p, a as u32, &q, &params).unwrap();
            for k in 0..p.len() {
                plain[k] += pa * x[k];
                ob[k] += pa * y[k];
            }
        }
        for (x, y) in plain.iter().zip(&ob) {
            prop_assert!((x - y).abs() < 1e-10);
        }
    }

    /// The optimal baseline minimises the second moment over constants.
    #[test]
    fn optimal_baseline_minimises_second_moment((logits, q) in logits_and_values(), delta in -2.0f64..2.0) {
        let p = probs_of(&logits);
        let b = baseline_from(&p, &q, 1e-12).unwrap();
        let second = |c: f64| -> f64 {
            p.iter().enumerate().map(|(a, pa)| {
                pa * weighted_score(&p, a as u32, q[a] - c).iter().map(|g| g * g).sum::<f64>()
            }).sum()
        };
        prop_assert!(second(b) <= second(b + delta) + 1e-12);
    }

    #[test]
    fn kl_term_vanishes_at_its_target((logits, _) in logits_and_values(), alpha in 0.1f64..3.0) {
        let p = probs_of(&logits);
        let q: Vec<f64> = logits.iter().map(|l| alpha * l).collect();
        let (value, grad) = kl_term(&p, &q, alpha).unwrap();
        prop_assert!(value.abs() < 1e-12);
        prop_assert!(grad.iter().all(|g| g.abs() < 1e-12));
        let (other, _) = kl_term(&p, &q.iter().map(|v| -v).collect::<Vec<_>>(), alpha).unwrap();
        prop_assert!(other <= 1e-15);
    }

    #[test]
    fn codec_round_trips(o in 1usize..4, a in 1usize..4, raw in prop::collection::vec(0u32..16, 0..4), first in 0u32..16) {
        let codec = HistoryCodec::new(o, a).unwrap();
        let mut entries = vec![first % o as u32];
        for (k, v) in raw.iter().enumerate() {
            entries.push(v % a as u32);
            entries.push((v + k as u32) % o as u32);
        }
        let key = codec.encode_entries(&entries).unwrap();
        prop_assert_eq!(codec.decode(key).unwrap().entries().to_vec(), entries);
        prop_assert!(key < codec.num_keys(raw.len()).unwrap());
    }

    #[test]
    fn mixed_radix_round_trips(radices in prop::collection::vec(1usize..5, 1..5), seed in any::<u64>()) {
        let r = MixedRadix::new(radices);
        let i = (seed % r.size() as u64) as usize;
        prop_assert_eq!(r.index(&r.digits(i)), i);
    }

    #[test]
    fn surrogate_rewards_are_unbiased(e in 0.0f64..0.49, r_minus in -3.0f64..0.0, gap in 0.1f64..3.0) {
        let noise = NoiseModel::with_rate(e, (r_minus + gap, r_minus)).unwrap();
        for r in [noise.r_plus, noise.r_minus] {
            let avg: f64 = noise.values.iter().zip(&noise.probs)
                .map(|(&eps, p)| p * noise.surrogate_reward(r, eps).unwrap())
                .sum();
            prop_assert!((avg - r).abs() < 1e-9 * (1.0 + r.abs()) / (1.0 - 2.0 * e));
        }
    }

    #[test]
    fn metrics_csv_round_trips_exactly(values in prop::collection::vec(-1e6f64..1e6, 1..20)) {
        let mut log = MetricsLog::new();
        for (k, v) in values.iter().enumerate() {
            log.push(MetricsRow {
                seed: 3,
                iteration: k,
                episodes: 8 * (k + 1),
                env_steps: 16 * (k as u64 + 1),
                grad_norms: vec![v.abs(), v.abs() / 3.0],
                eval_rate: (k % 2 == 0).then_some(v.abs().fract()),
                mean_return: *v,
                actor_loss: -v,
                critic_loss: v * v,
                kl_loss: v / 7.0,
            }).unwrap();
        }
        let text = log.to_csv_string().unwrap();
        let back = MetricsLog::read_csv(text.as_bytes()).unwrap();
        prop_assert_eq!(back.rows(), log.rows());
    }
}
