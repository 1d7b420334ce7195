use proptest::prelude::*;
use trajgpt::datagen::{generate_latent_cohort, GeneratorSpec, IrregularSequence};
use trajgpt::inference::*;
use trajgpt::model::*;
use trajgpt::numerics::{argmax, softmax};
use trajgpt::odebridge::GapMode;
use trajgpt::sra::SraForm;
use trajgpt::Matrix;

fn seq(tokens: &[usize], times: &[f64]) -> IrregularSequence {
    IrregularSequence::new("s", tokens.to_vec(), times.to_vec()).unwrap()
}

fn small_cfg() -> ModelConfig {
    let mut c = ModelConfig::new(12, 8, 2, 2);
    c.precision = trajgpt::Precision::Double;
    c
}

fn probs(row: &[f64]) -> Vec<f64> {
    softmax(row)
}

#[test]
fn recall_with_full_k_is_one() {
    let rows = vec![vec![0.1, 0.7, 0.2], vec![0.5, 0.25, 0.25]];
    assert_eq!(topk_recall(&rows, &[0, 2], 3).unwrap(), 1.0);
    assert!(topk_recall(&rows, &[0, 2], 4).unwrap_err().is_contract());
    assert!(topk_recall(&rows, &[0], 1).unwrap_err().is_contract());
}

#[test]
fn perfect_predictor_has_unit_recall_at_one() {
    let rows = vec![vec![0.1, 0.7, 0.2], vec![0.5, 0.25, 0.25]];
    assert_eq!(topk_recall(&rows, &[1, 0], 1).unwrap(), 1.0);
}

#[test]
fn hand_ranked_rows() {
    // Truth ranks 1st, 3rd and 11th in a 12-code vocabulary.
    let row = |truth_rank: usize| -> (Vec<f64>, usize) {
        let r: Vec<f64> = (0..12).map(|i| 1.0 - i as f64 * 0.05).collect();
        (r, truth_rank - 1)
    };
    let (a, ya) = row(1);
    let (b, yb) = row(3);
    let (c, yc) = row(11);
    let got = topk_recall(&[a, b, c], &[ya, yb, yc], 10).unwrap();
    assert!((got - 2.0 / 3.0).abs() < 1e-15);
}

#[test]
fn ties_go_to_lower_id() {
    let rows = vec![vec![0.25; 4]];
    assert_eq!(topk_recall(&rows, &[1], 1).unwrap(), 0.0);
    assert_eq!(topk_recall(&rows, &[0], 1).unwrap(), 1.0);
    assert_eq!(rank_of(&rows[0], 3), 3);
}

proptest! {
    #[test]
    fn recall_is_monotone_in_k(rows in prop::collection::vec(prop::collection::vec(0.0f64..1.0, 8), 1..20), seed in 0usize..1000) {
        let truth: Vec<usize> = (0..rows.len()).map(|i| (i * 7 + seed) % 8).collect();
        let mut prev = 0.0;
        for k in 1..=8 {
            let r = topk_recall(&rows, &truth, k).unwrap();
            prop_assert!(r >= prev);
            prev = r;
        }
        prop_assert_eq!(prev, 1.0);
    }
}

#[test]
fn one_step_autoregressive_is_forward_argmax() {
    let params = ModelParams::<f64>::init(&small_cfg(), 3).unwrap();
    let s = seq(&[3, 5, 1, 7], &[1.0, 1.5, 2.5, 2.75]);
    let fc = autoregressive_forecast(&params, &s, 1).unwrap();
    let ex = Example::from_sequence(&s, None).unwrap();
    let mut tokens = ex.tokens.clone();
    tokens.push(7);
    let mut times = ex.times.clone();
    times.push(2.75);
    let logits = forward(&params, &tokens, &times, SraForm::Recurrent).unwrap();
    let last = logits.row(logits.rows() - 1);
    assert_eq!(fc.tokens, vec![argmax(last)]);
    assert_eq!(fc.times, vec![3.75]);
    assert_eq!(fc.probs[0], probs(last));
    assert!(autoregressive_forecast(&params, &s, 0).unwrap_err().is_contract());
    assert!(autoregressive_forecast(&params, &seq(&[], &[]), 1).unwrap_err().is_contract());
}

#[test]
fn overfit_model_recites_memorized_cycle() {
    let mut cfg = ModelConfig::new(8, 16, 2, 1);
    cfg.precision = trajgpt::Precision::Double;
    let cycle = [1usize, 2, 3, 4, 5];
    let data: Vec<Example> = (0..5)
        .map(|shift| {
            let tokens: Vec<usize> = (0..20).map(|i| cycle[(i + shift) % 5]).collect();
            let times: Vec<f64> = (0..20).map(|i| 10.0 + i as f64).collect();
            Example::from_sequence(&seq(&tokens, &times), None).unwrap()
        })
        .collect();
    let mut params = ModelParams::<f64>::init(&cfg, 0).unwrap();
    let mut adam = AdamState::new(params.num_params());
    let mut tc = TrainConfig::new(300, 5, 1e-2, 0);
    tc.warmup_steps = 20;
    train(&mut params, &mut adam, &data, &tc, |_, _, _| Ok(())).unwrap();
    let prefix = seq(&[3, 4, 5, 1], &[10.0, 11.0, 12.0, 13.0]);
    let fc = autoregressive_forecast(&params, &prefix, 7).unwrap();
    assert_eq!(fc.tokens, vec![2, 3, 4, 5, 1, 2, 3]);
}

#[test]
fn zero_gap_query_equals_forward() {
    let s = seq(&[3, 5, 1, 7, 7], &[1.0, 1.5, 2.5, 2.75, 4.0]);
    for abl in [Ablation::Full, Ablation::FixedGamma, Ablation::AbsolutePe] {
        let cfg = abl.apply(&small_cfg());
        let params = ModelParams::<f64>::init(&cfg, 5).unwrap();
        let mut full = Example::from_sequence(&s, None).unwrap();
        full.tokens.push(7);
        full.times.push(4.0);
        let logits = forward(&params, &full.tokens, &full.times, SraForm::Recurrent).unwrap();
        let want = probs(logits.row(logits.rows() - 1));
        for mode in [GapMode::HistoryOnly, GapMode::Full] {
            let fc = time_specific_forecast(&params, &s, &[4.0], mode, AbsorbMode::Rollout, None).unwrap();
            assert_eq!(fc.probs[0], want, "{abl:?} {mode:?}");
        }
    }
}

#[test]
fn zero_gap_query_single_precision() {
    let mut cfg = ModelConfig::toy();
    cfg.vocab_size = 20;
    let params = ModelParams::<f32>::init(&cfg, 1).unwrap();
    let s = seq(&[3, 5, 1, 7, 7, 9, 2], &[1.0, 1.5, 2.5, 2.75, 4.0, 4.0, 6.5]);
    let mut full = Example::from_sequence(&s, None).unwrap();
    full.tokens.push(2);
    full.times.push(6.5);
    let logits = forward(&params, &full.tokens, &full.times, SraForm::Parallel).unwrap();
    let want = softmax(logits.row(logits.rows() - 1));
    let fc = time_specific_forecast(&params, &s, &[6.5], GapMode::HistoryOnly, AbsorbMode::Rollout, None).unwrap();
    for (a, b) in fc.probs[0].iter().zip(&want) {
        assert!((a - f64::from(*b)).abs() <= 1e-6);
    }
}

#[test]
fn unit_gap_without_decay_matches_autoregressive() {
    let mut cfg = small_cfg();
    cfg.decay_gating = DecayGating::FixedGamma(1.0);
    cfg.positional = Positional::Absolute;
    for seed in 0..5 {
        let params = ModelParams::<f64>::init(&cfg, seed).unwrap();
        let s = seq(&[3, 5, 1, 7], &[1.0, 1.5, 2.5, 2.75]);
        let ar = autoregressive_forecast(&params, &s, 6).unwrap();
        let targets: Vec<f64> = (1..=6).map(|i| 2.75 + i as f64).collect();
        let ts =
            time_specific_forecast(&params, &s, &targets, GapMode::HistoryOnly, AbsorbMode::Rollout, None).unwrap();
        assert_eq!(ts.tokens, ar.tokens);
        assert_eq!(ts.times, ar.times);
    }
}

#[test]
fn evaluation_mode_absorbs_truth() {
    let params = ModelParams::<f64>::init(&small_cfg(), 2).unwrap();
    let s = seq(&[3, 5, 1, 7], &[1.0, 1.5, 2.5, 2.75]);
    let fc =
        time_specific_forecast(&params, &s, &[3.0, 4.0], GapMode::HistoryOnly, AbsorbMode::Evaluation, Some(&[9, 2]))
            .unwrap();
    let longer = seq(&[3, 5, 1, 7, 9], &[1.0, 1.5, 2.5, 2.75, 3.0]);
    let direct =
        time_specific_forecast(&params, &longer, &[4.0], GapMode::HistoryOnly, AbsorbMode::Rollout, None).unwrap();
    assert_eq!(fc.probs[1], direct.probs[0]);
    assert!(time_specific_forecast(&params, &s, &[3.0], GapMode::HistoryOnly, AbsorbMode::Evaluation, None)
        .unwrap_err()
        .is_contract());
}

#[test]
fn targets_before_prefix_end_are_rejected() {
    let params = ModelParams::<f64>::init(&small_cfg(), 2).unwrap();
    let s = seq(&[3, 5], &[1.0, 2.0]);
    let err = time_specific_forecast(&params, &s, &[1.5], GapMode::HistoryOnly, AbsorbMode::Rollout, None).unwrap_err();
    assert!(err.is_contract());
    let err =
        time_specific_forecast(&params, &s, &[3.0, 2.5], GapMode::HistoryOnly, AbsorbMode::Rollout, None).unwrap_err();
    assert!(err.is_contract());
    let gpt = ModelParams::<f64>::init(&Ablation::Gpt2.apply(&small_cfg()), 2).unwrap();
    assert!(time_specific_forecast(&gpt, &s, &[3.0], GapMode::HistoryOnly, AbsorbMode::Rollout, None)
        .unwrap_err()
        .is_contract());
}

#[test]
fn risk_at_knots_is_next_token_probability() {
    let params = ModelParams::<f64>::init(&small_cfg(), 4).unwrap();
    let s = seq(&[3, 5, 1, 7, 2], &[1.0, 1.5, 2.5, 2.75, 4.0]);
    let traj = risk_trajectory(&params, &s, 5, &s.times, GapMode::HistoryOnly).unwrap();
    let mut full = Example::from_sequence(&s, None).unwrap();
    full.tokens.push(2);
    full.times.push(4.0);
    let logits = forward(&params, &full.tokens, &full.times, SraForm::Recurrent).unwrap();
    for (i, &r) in traj.risk.iter().enumerate() {
        // Row i+1 follows observation i.
        assert_eq!(r, probs(logits.row(i + 1))[5]);
    }
    assert_eq!(traj.growth.len(), traj.grid.len() - 1);
    assert_eq!(traj.growth[0], traj.risk[1] - traj.risk[0]);
}

#[test]
fn uniform_model_has_flat_risk() {
    let mut params = ModelParams::<f64>::init(&small_cfg(), 4).unwrap();
    params.head = Some(Matrix::zeros(8, 12));
    let s = seq(&[3, 5, 1], &[10.0, 11.5, 12.0]);
    let grid: Vec<f64> = (0..30).map(|i| 8.0 + i as f64 * 0.25).collect();
    let traj = risk_trajectory(&params, &s, 4, &grid, GapMode::HistoryOnly).unwrap();
    for &r in &traj.risk {
        assert!((r - 1.0 / 12.0).abs() < 1e-12);
    }
    assert!(traj.growth.iter().all(|g| g.abs() < 1e-12));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn risk_rows_are_distributions(seed in 0u64..100, offsets in prop::collection::vec(-3.0f64..8.0, 1..12)) {
        let params = ModelParams::<f64>::init(&small_cfg(), seed).unwrap();
        let s = seq(&[3, 5, 1, 7], &[1.0, 1.5, 2.5, 2.75]);
        let mut grid: Vec<f64> = offsets.iter().map(|o| 1.0 + o).collect();
        grid.sort_by(f64::total_cmp);
        let rows = risk_distributions(&params, &s, &grid, GapMode::HistoryOnly).unwrap();
        for row in &rows {
            prop_assert!(row.iter().all(|p| (0.0..=1.0).contains(p)));
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        }
    }
}

#[test]
fn risk_rejects_bad_arguments() {
    let params = ModelParams::<f64>::init(&small_cfg(), 4).unwrap();
    let s = seq(&[3, 5], &[1.0, 2.0]);
    assert!(risk_trajectory(&params, &s, 12, &[1.0], GapMode::HistoryOnly).unwrap_err().is_contract());
    assert!(risk_trajectory(&params, &s, 1, &[2.0, 1.0], GapMode::HistoryOnly).unwrap_err().is_contract());
}

#[test]
fn risk_inside_window_filters_and_extrapolates() {
    let params = ModelParams::<f64>::init(&small_cfg(), 6).unwrap();
    let s = seq(&[3, 5, 1], &[1.0, 2.0, 3.0]);
    // A point between knots sees only the earlier observations.
    let mid = risk_distributions(&params, &s, &[2.5], GapMode::HistoryOnly).unwrap();
    let fc =
        time_specific_forecast(&params, &s.prefix(2), &[2.5], GapMode::HistoryOnly, AbsorbMode::Rollout, None).unwrap();
    assert_eq!(mid[0], fc.probs[0]);
    // Before the first observation the reversed history is used.
    let early = risk_distributions(&params, &s, &[0.0], GapMode::HistoryOnly).unwrap();
    let reversed = seq(&[1, 5, 3], &[0.0, 1.0, 2.0]);
    let fc =
        time_specific_forecast(&params, &reversed, &[3.0], GapMode::HistoryOnly, AbsorbMode::Rollout, None).unwrap();
    assert_eq!(early[0], fc.probs[0]);
}

#[test]
fn embedding_of_one_observation_is_its_row() {
    let params = ModelParams::<f64>::init(&small_cfg(), 8).unwrap();
    let s = seq(&[4], &[3.0]);
    let e = sequence_embedding(&params, &s, 1).unwrap();
    let h = hidden_states(&params, &[SOS, 4], &[3.0, 3.0]).unwrap();
    assert_eq!(e, h.row(1).to_vec());
    assert!(sequence_embedding(&params, &s, 0).unwrap_err().is_contract());
    assert!(sequence_embedding(&params, &s, 2).unwrap_err().is_contract());
}

#[test]
fn embedding_ignores_events_after_truncation() {
    let params = ModelParams::<f64>::init(&small_cfg(), 8).unwrap();
    let a = seq(&[4, 2, 9, 1, 6], &[3.0, 3.5, 4.0, 5.0, 6.0]);
    let b = seq(&[4, 2, 9, 6, 1], &[3.0, 3.5, 4.0, 4.2, 9.0]);
    assert_eq!(sequence_embedding(&params, &a, 3).unwrap(), sequence_embedding(&params, &b, 3).unwrap());
    assert_ne!(sequence_embedding(&params, &a, 4).unwrap(), sequence_embedding(&params, &b, 4).unwrap());
}

#[test]
fn centroid_query_on_centroid() {
    let emb = vec![vec![1.0, 0.0], vec![0.8, 0.2], vec![0.0, 1.0]];
    let labels = vec![0, 0, 1];
    let (c, margin) = centroid_classify(&emb, &labels, 2, &[0.9, 0.1]).unwrap();
    assert_eq!(c, 0);
    assert!(margin > 0.0);
    let (c, _) = centroid_classify(&emb, &labels, 2, &[0.0, 1.0]).unwrap();
    assert_eq!(c, 1);
}

#[test]
fn identical_centroids_tie_low() {
    let (c, margin) = classify_centroids(&[vec![1.0, 1.0], vec![1.0, 1.0]], &[0.3, 0.2]).unwrap();
    assert_eq!((c, margin), (0, 0.0));
}

#[test]
fn empty_class_is_rejected() {
    let emb = vec![vec![1.0, 0.0]];
    assert!(centroid_classify(&emb, &[0], 2, &[1.0, 0.0]).unwrap_err().is_contract());
}

#[test]
fn separable_classes_are_classified_perfectly() {
    // Two clusters around orthogonal directions with bounded jitter.
    let mut emb = Vec::new();
    let mut labels = Vec::new();
    for i in 0..40 {
        let j = (i as f64 * 0.37).sin() * 0.3;
        let class = i % 2;
        emb.push(if class == 0 { vec![1.0, j, 0.1] } else { vec![j, 1.0, -0.1] });
        labels.push(class);
    }
    let centroids = fit_centroids(&emb[..20], &labels[..20], 2).unwrap();
    let correct =
        emb[20..].iter().zip(&labels[20..]).filter(|(e, &l)| classify_centroids(&centroids, e).unwrap().0 == l).count();
    assert_eq!(correct, 20);
}

#[test]
fn trained_embeddings_group_by_latent_state() {
    // Patients that stay in a single cluster for their whole history.
    let mut spec = GeneratorSpec::canonical();
    let k = spec.latent_states;
    spec.transition = (0..k).map(|i| (0..k).map(|j| if i == j { 1.0 } else { 0.0 }).collect()).collect();
    spec.comorbidity_boosts.clear();
    let cohort = generate_latent_cohort(&spec, 240, 12, 20, 2).unwrap();
    let mut cfg = ModelConfig::new(50, 16, 2, 1);
    cfg.precision = trajgpt::Precision::Double;
    let mut params = ModelParams::<f64>::init(&cfg, 0).unwrap();
    let mut adam = AdamState::new(params.num_params());
    let mut tc = TrainConfig::new(300, 8, 3e-3, 0);
    tc.warmup_steps = 30;
    let data: Vec<Example> = cohort[..200].iter().map(|p| Example::from_sequence(&p.sequence, None).unwrap()).collect();
    train(&mut params, &mut adam, &data, &tc, |_, _, _| Ok(())).unwrap();
    let held = &cohort[200..];
    let embs: Vec<Vec<f64>> = held.iter().map(|p| sequence_embedding(&params, &p.sequence, 10).unwrap()).collect();
    let (mut same, mut ns, mut cross, mut nc) = (0.0, 0, 0.0, 0);
    for i in 0..held.len() {
        for j in i + 1..held.len() {
            let c = cosine(&embs[i], &embs[j]);
            if held[i].states[0] == held[j].states[0] {
                same += c;
                ns += 1;
            } else {
                cross += c;
                nc += 1;
            }
        }
    }
    assert!(ns > 0 && nc > 0);
    assert!(same / ns as f64 > cross / nc as f64, "{} vs {}", same / ns as f64, cross / nc as f64);
}

#[test]
fn evaluation_report_does_not_depend_on_thread_count() {
    let spec = GeneratorSpec::canonical();
    let cohort = trajgpt::datagen::generate_cohort(&spec, 13, 14, 20, 5).unwrap();
    let mut cfg = ModelConfig::toy();
    cfg.vocab_size = spec.vocab_size;
    let params = ModelParams::<f32>::init(&cfg, 1).unwrap();
    let protocol = EvalProtocol { window: 6, horizon: 4, ..EvalProtocol::default() };
    let marginal = marginal_frequencies(&cohort, spec.vocab_size);
    let one = evaluate_with_threads(&params, &cohort, &protocol, Some(&spec), Some(&marginal), 1).unwrap();
    for threads in [3, 32] {
        let many = evaluate_with_threads(&params, &cohort, &protocol, Some(&spec), Some(&marginal), threads).unwrap();
        assert_eq!(one, many, "{threads} threads");
    }
    assert_eq!(one.0.patients, 13);
}
