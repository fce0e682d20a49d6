use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use pongnet::checkpoint::{decode_checkpoint, encode_checkpoint, CheckpointMeta};
use pongnet::env::{self, EnvAction, EnvConfig};
use pongnet::introspect::{group_by_action, kmeans, ActivationRecord, KMeansConfig};
use pongnet::nn::{init_params, ArchitectureSpec, NetworkParams};
use pongnet::pg::{propagate_rewards, select_action, update_baseline, BaselineMode, BaselineState, Trajectory};
use pongnet::scores::smooth_scores;

fn rewards() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(prop::sample::select(vec![-1.0, 0.0, 0.0, 0.0, 1.0]), 0..120)
}

proptest! {
    #[test]
    fn propagation_scales_linearly(r in rewards(), gamma in 0.0f64..1.0, c in -3.0f64..3.0) {
        prop_assume!(c != 0.0);
        let scaled: Vec<f64> = r.iter().map(|x| c * x).collect();
        let a = propagate_rewards(&scaled, gamma);
        let b = propagate_rewards(&r, gamma);
        for (x, y) in a.iter().zip(&b) {
            prop_assert!((x - c * y).abs() <= 1e-12);
        }
    }

    #[test]
    fn propagation_is_bounded_and_keeps_scoring_steps(r in rewards(), gamma in 0.0f64..1.0) {
        let out = propagate_rewards(&r, gamma);
        prop_assert_eq!(out.len(), r.len());
        for (o, x) in out.iter().zip(&r) {
            prop_assert!(o.abs() <= 1.0);
            if *x != 0.0 {
                prop_assert_eq!(o, x);
            }
        }
        // trailing zeros after the last point receive no credit
        if let Some(last) = r.iter().rposition(|&x| x != 0.0) {
            prop_assert!(out[last + 1..].iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn labels_are_one_hot(y in prop::collection::vec(0.0f32..1.0, 2..6), bias in 0.0f64..1.0, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (a, label) = select_action(&y, bias, &mut rng);
        prop_assert!(a < y.len());
        prop_assert_eq!(label.iter().sum::<f32>(), 1.0);
        prop_assert_eq!(label[a], 1.0);
        if bias == 0.0 && y.iter().any(|&v| v > 0.0) {
            prop_assert!(y[a] > 0.0);
        }
    }

    #[test]
    fn episode_baseline_centres_advantages(returns in prop::collection::vec(-1.0f64..1.0, 1..200)) {
        let mut traj = Trajectory::<f32>::new(0);
        traj.discounted_returns = returns.clone();
        let b = update_baseline(&BaselineState::new(BaselineMode::Episode), &traj);
        let centred: f64 = returns.iter().map(|r| r - b.value).sum();
        prop_assert!(centred.abs() <= 1e-9 * returns.len() as f64);
    }

    #[test]
    fn grouping_is_a_partition(actions in prop::collection::vec(0usize..3, 0..300)) {
        let records: Vec<ActivationRecord> = actions
            .iter()
            .enumerate()
            .map(|(step, &a)| ActivationRecord { step, hidden: vec![step as f32], action: EnvAction::ALL[a] })
            .collect();
        let groups = group_by_action(&records);
        let mut all: Vec<usize> = groups.concat();
        all.sort_unstable();
        prop_assert_eq!(all, (0..records.len()).collect::<Vec<_>>());
        for (g, members) in groups.iter().enumerate() {
            prop_assert!(members.iter().all(|&i| records[i].action.index() == g));
        }
    }

    #[test]
    fn checkpoint_round_trip_is_bit_exact(hidden in 1usize..12, inputs in 1usize..20, value: bool, seed: u64) {
        let desc = format!("{inputs}:{hidden}:3{}", if value { ":value" } else { "" });
        let arch = ArchitectureSpec::parse(&desc).unwrap();
        let params: NetworkParams<f32> = init_params(&arch, seed);
        let meta = CheckpointMeta::default().with("seed", seed);
        let (back, back_meta) = decode_checkpoint(&encode_checkpoint(&params, &meta)).unwrap();
        prop_assert_eq!(back.arch(), params.arch());
        let bits = |p: &NetworkParams<f32>| p.to_flat().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        prop_assert_eq!(bits(&back), bits(&params));
        prop_assert_eq!(back_meta, meta);
    }

    #[test]
    fn smoothing_is_a_trailing_mean(raw in prop::collection::vec(-21i32..=21, 1..300), window in 1usize..120) {
        let s = smooth_scores(&raw, window);
        for i in [0, raw.len() / 2, raw.len() - 1] {
            let lo = (i + 1).saturating_sub(window);
            let want = raw[lo..=i].iter().map(|&v| f64::from(v)).sum::<f64>() / (i + 1 - lo) as f64;
            prop_assert!((s[i] - want).abs() <= 1e-9);
        }
    }

    #[test]
    fn kmeans_assigns_each_point_to_its_nearest_centroid(
        points in prop::collection::vec(prop::collection::vec(-10.0f64..10.0, 2), 3..40),
        k in 1usize..4,
        seed: u64,
    ) {
        let res = kmeans(&points, &KMeansConfig::new(k, seed)).unwrap();
        let d = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>();
        for (p, &a) in points.iter().zip(&res.assignments) {
            let own = d(p, &res.centroids[a]);
            prop_assert!(res.centroids.iter().all(|c| own <= d(p, c) + 1e-12));
        }
        prop_assert_eq!(res.cluster_sizes().iter().sum::<usize>(), points.len());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn rewards_sum_to_the_score_differential(seed: u64, moves in prop::collection::vec(0usize..3, 64)) {
        let (mut state, _) = env::reset(EnvConfig::mini().with_seed(seed)).unwrap();
        let mut sum = 0i64;
        for t in 0.. {
            let r = env::step(&mut state, EnvAction::ALL[moves[t % moves.len()]]).unwrap();
            sum += i64::from(r.reward);
            if r.point_scored {
                prop_assert!(r.reward != 0);
            }
            if r.episode_done {
                prop_assert_eq!(sum, i64::from(r.score.agent) - i64::from(r.score.opponent));
                prop_assert!(r.score.agent.max(r.score.opponent) == 21);
                break;
            }
        }
    }
}
