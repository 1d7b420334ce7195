use trajgpt::datagen::IrregularSequence;
use trajgpt::model::*;
use trajgpt::numerics::{finite_diff_check, Matrix};
use trajgpt::odebridge::GapMode;
use trajgpt::sra::SraForm;

fn small(vocab: usize, d: usize, heads: usize, layers: usize) -> ModelConfig {
    let mut c = ModelConfig::new(vocab, d, heads, layers);
    c.precision = trajgpt::Precision::Double;
    c
}

fn seq_of(tokens: &[usize]) -> (Vec<usize>, Vec<f64>) {
    let times = (0..tokens.len()).map(|i| 40.0 + 0.37 * i as f64 + 0.1 * ((i * 7) % 3) as f64).collect();
    (tokens.to_vec(), times)
}

#[test]
fn embed_is_a_row_lookup() {
    let mut p = ModelParams::<f64>::init(&small(3, 4, 2, 1), 1).unwrap();
    let e = embed(&p, &[2, 1, 2]).unwrap();
    assert_eq!(e.row(0), e.row(2));
    assert!(p.embedding.is_finite());
    let mut table = Matrix::zeros(3, 4);
    for i in 0..3 {
        table.set(i, i, 1.0);
    }
    p.embedding = table;
    let e = embed(&p, &[0, 1, 2]).unwrap();
    for i in 0..3 {
        for j in 0..4 {
            assert_eq!(e.get(i, j), if i == j { 1.0 } else { 0.0 });
        }
    }
    assert!(embed(&p, &[3]).unwrap_err().is_contract());
}

#[test]
fn forward_is_causal_and_shaped() {
    let p = ModelParams::<f64>::init(&small(20, 8, 2, 2), 2).unwrap();
    let (tokens, times) = seq_of(&[3, 5, 7, 1, 9, 4, 2]);
    let base = forward(&p, &tokens, &times, SraForm::Parallel).unwrap();
    assert_eq!(base.shape(), (7, 20));
    let mut changed = tokens.clone();
    changed[4] = 11;
    let other = forward(&p, &changed, &times, SraForm::Parallel).unwrap();
    for n in 0..4 {
        assert_eq!(base.row(n), other.row(n));
    }
    assert_ne!(base.row(4), other.row(4));
    let one = forward(&p, &[5], &[1.0], SraForm::Recurrent).unwrap();
    assert_eq!(one.shape(), (1, 20));
    assert!(one.is_finite());
}

#[test]
fn decreasing_times_are_rejected() {
    let p = ModelParams::<f64>::init(&small(10, 4, 1, 1), 3).unwrap();
    let err = forward(&p, &[1, 2], &[2.0, 1.0], SraForm::Parallel).unwrap_err();
    assert!(err.is_contract());
    assert!(forward(&p, &[], &[], SraForm::Parallel).unwrap_err().is_contract());
}

#[test]
fn forms_agree_in_single_precision() {
    for ab in [Ablation::Full, Ablation::FixedGamma, Ablation::AbsolutePe] {
        let cfg = ab.apply(&ModelConfig::toy());
        let p = ModelParams::<f32>::init(&cfg, 4).unwrap();
        let (tokens, times) = seq_of(&(0..40).map(|i| (i * 13 + 5) % 48 + 1).collect::<Vec<_>>());
        let a = forward(&p, &tokens, &times, SraForm::Recurrent).unwrap();
        let b = forward(&p, &tokens, &times, SraForm::Parallel).unwrap();
        assert!(a.max_abs_diff(&b).unwrap() <= 1e-5, "{ab:?}");
    }
}

#[test]
fn nll_examples() {
    let uniform = Matrix::<f64>::zeros(3, 194);
    let l = nll_loss(&uniform, &[0, 5, 193]).unwrap();
    assert!((l - 194f64.ln()).abs() < 1e-12);
    assert!((l - 5.268).abs() < 1e-3);
    let two = Matrix::from_rows(&[vec![1.0, 0.0]]).unwrap();
    let l = nll_loss(&two, &[0]).unwrap();
    assert!((l - (1.0 + (-1.0f64).exp()).ln()).abs() < 1e-15);
    assert!((l - 0.3133).abs() < 1e-4);
    let sure = Matrix::from_rows(&[vec![1e4, 0.0, 0.0]]).unwrap();
    assert!(nll_loss(&sure, &[0]).unwrap() < 1e-12);
    assert!(nll_loss(&two, &[0, 1]).unwrap_err().is_contract());
}

#[test]
fn pad_targets_are_excluded() {
    let logits = Matrix::from_rows(&[vec![1.0, 0.0, 3.0], vec![0.0, 2.0, 9.0]]).unwrap();
    let with_pad = masked_nll_loss(&logits, &[0, 2], Some(2)).unwrap();
    let only = nll_loss(&logits.slice_rows(0, 1), &[0]).unwrap();
    assert_eq!(with_pad, only);
}

fn example(tokens: &[usize]) -> Example {
    let (t, times) = seq_of(tokens);
    Example::from_sequence(&IrregularSequence::new("x", t, times).unwrap(), None).unwrap()
}

#[test]
fn examples_shift_with_sos() {
    let (_, times) = seq_of(&[4, 6, 8]);
    let ex = example(&[4, 6, 8]);
    assert_eq!(ex.tokens, vec![SOS, 4, 6]);
    assert_eq!(ex.targets, vec![4, 6, 8]);
    assert_eq!(ex.times, vec![times[0], times[0], times[1]]);
    assert_eq!(ex.target_times, times);
}

#[test]
fn zero_learning_rate_leaves_params_unchanged() {
    let cfg = small(20, 8, 2, 1);
    let mut p = ModelParams::<f64>::init(&cfg, 5).unwrap();
    let before = p.clone();
    let mut adam = AdamState::new(p.num_params());
    let mut tc = TrainConfig::new(1, 1, 0.0, 1);
    tc.warmup_steps = 0;
    train_step(&mut p, &mut adam, &[example(&[1, 2, 3, 4])], &tc).unwrap();
    assert_eq!(p, before);
}

#[test]
fn overfits_a_single_sequence() {
    let mut cfg = ModelConfig::new(20, 16, 2, 2);
    cfg.gap_objective = None;
    let mut p = ModelParams::<f32>::init(&cfg, 6).unwrap();
    let mut adam = AdamState::new(p.num_params());
    let mut tc = TrainConfig::new(500, 1, 1e-2, 7);
    tc.warmup_steps = 20;
    let data = vec![example(&[3, 9, 4, 12, 7, 7, 15, 2, 11, 5, 8, 16])];
    let mut last = f64::INFINITY;
    train(&mut p, &mut adam, &data, &tc, |s, _, _| {
        last = s.loss;
        Ok(())
    })
    .unwrap();
    assert!(last < 0.05, "final loss {last}");
}

fn grad_check(cfg: &ModelConfig, form: SraForm) -> f64 {
    let p = ModelParams::<f64>::init(cfg, 8).unwrap();
    let mut p = p;
    // give the decay vectors and gains something non-trivial to differentiate
    let mut flat = p.flatten();
    for (i, v) in flat.iter_mut().enumerate() {
        *v += 0.05 * (((i * 2654435761) % 1000) as f64 / 1000.0 - 0.5);
    }
    p.unflatten(&flat).unwrap();
    let ex = example(&[3, 7, 1, 12, 5, 9]);
    let template = p.clone();
    let f = |x: &[f64]| -> trajgpt::Result<(f64, Vec<f64>)> {
        let mut q = template.clone();
        q.unflatten(x)?;
        let eg = example_grad(&q, &ex, form, 0.7)?;
        Ok((eg.nll_sum + 0.7 * eg.gap_sum.unwrap_or(0.0), eg.grad))
    };
    finite_diff_check(f, &flat, 1e-5).unwrap()
}

#[test]
fn full_model_gradient_check() {
    let mut cfg = small(16, 8, 2, 1);
    cfg.gap_objective = None;
    assert!(grad_check(&cfg, SraForm::Parallel) <= 1e-4);
    cfg.gap_objective = Some(GapMode::HistoryOnly);
    assert!(grad_check(&cfg, SraForm::Recurrent) <= 1e-4);
    let gpt = Ablation::Gpt2.apply(&cfg);
    assert!(grad_check(&gpt, SraForm::Parallel) <= 1e-4);
}

#[test]
fn checkpoint_round_trip_is_bit_exact() {
    let cfg = ModelConfig::toy();
    let p = ModelParams::<f32>::init(&cfg, 9).unwrap();
    let mut adam = AdamState::new(p.num_params());
    adam.step = 17;
    adam.m[3] = 0.25;
    let bytes = encode_checkpoint(&p, Some(&adam), 42);
    let ck = decode_checkpoint::<f32>(&bytes).unwrap();
    assert_eq!(ck.params, p);
    assert_eq!(ck.optimizer.as_ref(), Some(&adam));
    assert_eq!((ck.header.step, ck.header.seed), (17, 42));
    let (tokens, times) = seq_of(&[1, 2, 3, 4, 5]);
    let a = forward(&p, &tokens, &times, SraForm::Parallel).unwrap();
    let b = forward(&ck.params, &tokens, &times, SraForm::Parallel).unwrap();
    assert_eq!(a, b);
    assert_eq!(encode_checkpoint(&ck.params, ck.optimizer.as_ref(), 42), bytes);
}

#[test]
fn checkpoint_errors_are_distinct() {
    let cfg = small(10, 4, 1, 1);
    let p = ModelParams::<f64>::init(&cfg, 10).unwrap();
    let bytes = encode_checkpoint(&p, None, 0);

    let mut bad = bytes.clone();
    bad[0] = b'X';
    assert!(matches!(decode_checkpoint::<f64>(&bad), Err(trajgpt::Error::Format(_))));

    let mut bad = bytes.clone();
    bad[4] = 9;
    assert!(matches!(decode_checkpoint::<f64>(&bad), Err(trajgpt::Error::Version { found: 9, .. })));

    assert!(matches!(decode_checkpoint::<f64>(&bytes[..bytes.len() - 3]), Err(trajgpt::Error::Truncated(_))));

    assert!(matches!(decode_checkpoint::<f32>(&bytes), Err(trajgpt::Error::PrecisionMismatch { .. })));

    // a checkpoint whose header claims a wider model than the stored tensors
    let mut wide = cfg.clone();
    wide.vocab_size = 11;
    let text = serde_json::to_string(&CheckpointHeader {
        config: wide,
        precision: trajgpt::Precision::Double,
        step: 0,
        seed: 0,
        has_optimizer: false,
        provenance: None,
    })
    .unwrap();
    let old_len = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let mut forged = bytes[..8].to_vec();
    forged.extend((text.len() as u32).to_le_bytes());
    forged.extend(text.as_bytes());
    forged.extend(&bytes[12 + old_len..]);
    assert!(matches!(decode_checkpoint::<f64>(&forged), Err(trajgpt::Error::Shape { .. })));
}

#[test]
fn training_is_deterministic() {
    let cfg = ModelConfig::new(20, 8, 2, 1);
    let data: Vec<Example> = (0..5).map(|i| example(&[1 + i, 3, 5 + i, 2, 8])).collect();
    let run = |steps: u64| {
        let mut p = ModelParams::<f32>::init(&cfg, 11).unwrap();
        let mut adam = AdamState::new(p.num_params());
        let tc = TrainConfig::new(steps, 2, 1e-3, 12);
        train(&mut p, &mut adam, &data, &tc, |_, _, _| Ok(())).unwrap();
        encode_checkpoint(&p, Some(&adam), 12)
    };
    assert_eq!(run(6), run(6));
    // resuming from a mid-run checkpoint lands on the same bytes
    let mid = decode_checkpoint::<f32>(&run(3)).unwrap();
    let (mut p, mut adam) = (mid.params, mid.optimizer.unwrap());
    let tc = TrainConfig::new(6, 2, 1e-3, 12);
    train(&mut p, &mut adam, &data, &tc, |_, _, _| Ok(())).unwrap();
    assert_eq!(encode_checkpoint(&p, Some(&adam), 12), run(6));
}

#[test]
fn streaming_matches_forward() {
    for ab in Ablation::ALL {
        let cfg = ab.apply(&ModelConfig::toy());
        let p = ModelParams::<f32>::init(&cfg, 13).unwrap();
        let (tokens, times) = seq_of(&[5, 9, 2, 2, 30, 17]);
        let full = forward(&p, &tokens, &times, SraForm::Recurrent).unwrap();
        let mut st = StreamState::new(&p);
        for (n, (&t, &time)) in tokens.iter().zip(&times).enumerate() {
            let row = st.absorb(&p, t, time).unwrap();
            assert_eq!(row.as_slice(), full.row(n), "{ab:?} position {n}");
        }
        if cfg.supports_time_specific() {
            let q = st.query(&p, times[5], GapMode::HistoryOnly).unwrap();
            assert_eq!(q.as_slice(), full.row(5));
            assert!(st.query(&p, times[5] - 1.0, GapMode::Full).unwrap_err().is_contract());
        } else {
            assert!(st.query(&p, times[5], GapMode::Full).unwrap_err().is_contract());
        }
    }
}

mod config_unit {
    use trajgpt::model::*;
    use trajgpt::odebridge::GapMode;

    #[test]
    fn toy_is_valid() {
        let c = ModelConfig::toy();
        c.validate().unwrap();
        assert_eq!((c.d, c.heads, c.layers, c.vocab_size, c.ff_width), (32, 4, 2, 50, 64));
        assert_eq!(c.tau, 20.0);
    }

    #[test]
    fn ablations_are_nested() {
        let base = ModelConfig::toy();
        let f = Ablation::FixedGamma.apply(&base);
        assert_eq!(f.decay_gating, DecayGating::FixedGamma(0.96));
        assert_eq!(f.positional, Positional::Rope);
        let a = Ablation::AbsolutePe.apply(&base);
        assert_eq!((a.decay_gating, a.positional), (f.decay_gating, Positional::Absolute));
        let g = Ablation::Gpt2.apply(&base);
        assert_eq!(g.attention, Attention::SoftmaxGpt2);
        assert!(!g.supports_time_specific());
        for ab in Ablation::ALL {
            ab.apply(&base).validate().unwrap();
        }
    }

    #[test]
    fn invalid_configs_rejected() {
        let mut c = ModelConfig::toy();
        c.heads = 5;
        assert!(c.validate().unwrap_err().is_contract());
        let mut c = ModelConfig::toy();
        c.decay_gating = DecayGating::FixedGamma(1.5);
        assert!(c.validate().is_err());
        let mut c = ModelConfig::toy();
        c.vocab_size = 1;
        assert!(c.validate().is_err());
    }

    #[test]
    fn config_round_trips_through_text() {
        let mut c = Ablation::FixedGamma.apply(&ModelConfig::toy());
        c.gap_objective = Some(GapMode::Full);
        let back: ModelConfig = serde_json::from_str(&c.canonical_text()).unwrap();
        assert_eq!(back, c);
        let t = toml::to_string(&c).unwrap();
        assert_eq!(toml::from_str::<ModelConfig>(&t).unwrap(), c);
    }
}

mod attention_unit {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use trajgpt::model::*;
    use trajgpt::numerics::{finite_diff_check, Matrix, Tape};
    use trajgpt::Result;

    #[test]
    fn first_row_copies_first_value() {
        let q = Matrix::from_rows(&[vec![1.0f64, 2.0], vec![0.5, -1.0]]).unwrap();
        let v = Matrix::from_rows(&[vec![3.0, 4.0], vec![5.0, 6.0]]).unwrap();
        let (o, p) = causal_softmax_attention(&q, &q, &v).unwrap();
        assert_eq!(o.row(0), &[3.0, 4.0]);
        assert_eq!(p.get(0, 1), 0.0);
        assert!((p.get(1, 0) + p.get(1, 1) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let init: Vec<f64> = (0..3 * 12).map(|_| rng.random_range(-1.0..1.0)).collect();
        let w: Vec<f64> = (0..12).map(|_| rng.random_range(-1.0..1.0)).collect();
        let f = |flat: &[f64]| -> Result<(f64, Vec<f64>)> {
            let mut tape = Tape::new();
            let q = tape.leaf(Matrix::from_vec(4, 3, flat[..12].to_vec())?);
            let k = tape.leaf(Matrix::from_vec(4, 3, flat[12..24].to_vec())?);
            let v = tape.leaf(Matrix::from_vec(4, 3, flat[24..].to_vec())?);
            let o = causal_softmax_tape(&mut tape, q, k, v)?;
            let wv = tape.leaf(Matrix::from_vec(4, 3, w.clone())?);
            let prod = tape.hadamard(o, wv)?;
            let loss = tape.sum(prod);
            let g = tape.backward(loss)?;
            let mut grad = Vec::new();
            for x in [q, k, v] {
                grad.extend(g.get_or_zeros(x, (4, 3)).into_data());
            }
            Ok((tape.value(loss).item()?, grad))
        };
        assert!(finite_diff_check(f, &init, 1e-5).unwrap() < 1e-7);
    }
}
