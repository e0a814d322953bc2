use gcfc_core::autodiff::nn::ForwardMode;
use gcfc_core::autodiff::{finite_diff_check, ParamStore, Tape};
use gcfc_core::corpus::{generate_synthetic, Dialogue, Modality, ModalityDims, SyntheticConfig, Utterance};
use gcfc_core::gatmlp::HeadMerge;
use gcfc_core::graph::Window;
use gcfc_core::paircc::{argmax_rows, cross_entropy, AuxTerm, GraphCfc, ModalitySet, ModelConfig, ModelShape};
use gcfc_core::tensor::Tensor;
use gcfc_core::trainer::{shape_of, train, TrainConfig};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn small_config() -> ModelConfig {
    ModelConfig {
        width: 4,
        layers: 1,
        heads: 2,
        dropout: 0.0,
        window: Window::new(2, 2),
        ..ModelConfig::default()
    }
}

fn dims(n: usize) -> ModalityDims {
    ModalityDims { t: n, a: n, v: n }
}

fn dialogue(id: &str, n: usize, classes: usize, dim: usize, seed: u64) -> Dialogue {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let vec = |rng: &mut ChaCha8Rng| (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect::<Vec<f64>>();
    Dialogue {
        id: id.into(),
        speakers: 2,
        utterances: (0..n)
            .map(|i| Utterance {
                speaker: i % 2,
                label: rng.random_range(0..classes),
                text: vec(&mut rng),
                acoustic: vec(&mut rng),
                visual: vec(&mut rng),
            })
            .collect(),
    }
}

fn shape(classes: usize, dim: usize) -> ModelShape {
    ModelShape {
        classes,
        dims: dims(dim),
        max_speakers: 2,
    }
}

fn eval_logits(model: &GraphCfc, store: &ParamStore, dialogues: &[&Dialogue]) -> Tensor {
    let mut tape = Tape::new();
    let out = model
        .forward(&mut tape, store, dialogues, &mut ForwardMode::eval())
        .unwrap();
    tape.value(out.main).clone()
}

#[test]
fn main_logits_have_one_row_per_utterance() {
    let (model, store) = GraphCfc::build(&small_config(), shape(6, 3), 0).unwrap();
    let d = dialogue("d", 4, 6, 3, 1);
    let logits = eval_logits(&model, &store, &[&d]);
    assert_eq!((logits.rows(), logits.cols()), (4, 6));
}

#[test]
fn evaluation_is_bitwise_repeatable() {
    let config = ModelConfig {
        dropout: 0.3,
        ..small_config()
    };
    let (model, store) = GraphCfc::build(&config, shape(3, 3), 5).unwrap();
    let d = dialogue("d", 5, 3, 3, 2);
    let a = eval_logits(&model, &store, &[&d]);
    let b = eval_logits(&model, &store, &[&d]);
    assert_eq!(a.data(), b.data());
}

#[test]
fn argmax_breaks_ties_low() {
    let t = Tensor::from_rows(&[vec![1.0, 3.0, 3.0], vec![2.0, 2.0, 2.0], vec![0.0, -1.0, 5.0]]);
    assert_eq!(argmax_rows(&t), vec![1, 0, 2]);
}

proptest! {
    #[test]
    fn argmax_ignores_row_offsets(
        rows in proptest::collection::vec(proptest::collection::vec(-5.0f64..5.0, 4), 1..6),
        shift in -100.0f64..100.0,
    ) {
        let t = Tensor::from_rows(&rows);
        let shifted = t.map(|v| v + shift);
        // Shifting can only merge nearly-equal entries into exact ties, so
        // compare on rows without near-ties.
        for (r, (a, b)) in argmax_rows(&t).into_iter().zip(argmax_rows(&shifted)).enumerate() {
            let row = t.row(r);
            let top = row[a];
            let near_tie = row.iter().enumerate().any(|(c, &v)| c != a && (top - v).abs() < 1e-9);
            if !near_tie {
                prop_assert_eq!(a, b);
            }
        }
    }
}

#[test]
fn uniform_logits_give_log_classes() {
    let mut tape = Tape::new();
    let logits = tape.constant(Tensor::zeros(5, 6)).unwrap();
    let l = cross_entropy(&mut tape, logits, &[0, 1, 2, 3, 5]).unwrap();
    assert!((tape.value(l).item() - 6f64.ln()).abs() < 1e-12);
}

#[test]
fn confident_logits_give_small_loss() {
    let mut tape = Tape::new();
    let logits = tape
        .constant(Tensor::from_rows(&[vec![20.0, 0.0, 0.0], vec![0.0, 0.0, 20.0]]))
        .unwrap();
    let l = cross_entropy(&mut tape, logits, &[0, 2]).unwrap();
    let v = tape.value(l).item();
    assert!(v > 0.0 && v < 1e-8);
}

#[test]
fn cross_entropy_rejects_bad_labels() {
    let mut tape = Tape::new();
    let logits = tape.constant(Tensor::zeros(2, 3)).unwrap();
    assert!(cross_entropy(&mut tape, logits, &[0, 3]).is_err());
}

#[test]
fn zero_head_weights_add_no_penalty() {
    let (model, mut store) = GraphCfc::build(&small_config(), shape(3, 3), 1).unwrap();
    for id in [model.main.hidden.weight, model.main.out.weight] {
        store.value_mut(id).fill(0.0);
    }
    let d = dialogue("d", 3, 3, 3, 4);
    let mut tape = Tape::new();
    let out = model
        .forward(&mut tape, &store, &[&d], &mut ForwardMode::eval())
        .unwrap();
    let comps = model.losses(&mut tape, &store, &out, &d.labels()).unwrap();
    // Zero weights make every logit row equal to the output bias (zero).
    assert!((tape.value(comps.cls).item() - 3f64.ln()).abs() < 1e-12);
}

#[test]
fn initial_total_is_plain_sum() {
    let (model, store) = GraphCfc::build(&small_config(), shape(3, 3), 2).unwrap();
    let d = dialogue("d", 4, 3, 3, 5);
    let mut tape = Tape::new();
    let (total, comps) = model
        .objective(&mut tape, &store, &[&d], &mut ForwardMode::eval(), false)
        .unwrap();
    let v = comps.values(&tape, total);
    assert_eq!(v.aux.len(), 4);
    let sum = v.cls + v.aux.iter().map(|a| a.1).sum::<f64>();
    assert!((v.total - sum).abs() < 1e-12);
}

#[test]
fn log_weight_gradient_matches_closed_form() {
    let (model, mut store) = GraphCfc::build(&small_config(), shape(3, 3), 3).unwrap();
    let ids: Vec<_> = model.log_weights.clone();
    for (k, &(_, id)) in ids.iter().enumerate() {
        store.value_mut(id).fill(0.3 * k as f64 - 0.4);
    }
    let d = dialogue("d", 4, 3, 3, 6);
    let mut tape = Tape::new();
    let (total, comps) = model
        .objective(&mut tape, &store, &[&d], &mut ForwardMode::eval(), false)
        .unwrap();
    let values = comps.values(&tape, total);
    store.zero_grad();
    tape.backward_into(total, &mut store).unwrap();
    for &(term, id) in &ids {
        let s = store.value(id).item();
        let l = values.aux.iter().find(|a| a.0 == term).unwrap().1;
        let want = 1.0 - (-s).exp() * l;
        assert!((store.grad(id).item() - want).abs() < 1e-12, "{term:?}");
    }
}

#[test]
fn disabled_auxiliary_losses_leave_no_terms() {
    let config = ModelConfig {
        shared_loss: false,
        separate_loss: false,
        ..small_config()
    };
    let (model, store) = GraphCfc::build(&config, shape(3, 3), 3).unwrap();
    assert!(model.aux_heads.is_empty() && model.log_weights.is_empty());
    assert!(store.iter().all(|(_, p)| !p.name.starts_with("loss.")));
    let d = dialogue("d", 3, 3, 3, 7);
    let mut tape = Tape::new();
    let (total, comps) = model
        .objective(&mut tape, &store, &[&d], &mut ForwardMode::eval(), false)
        .unwrap();
    assert_eq!(tape.value(total).item(), tape.value(comps.cls).item());
}

#[test]
fn auxiliary_terms_follow_modalities() {
    let config = ModelConfig {
        modalities: ModalitySet::only(Modality::Text),
        ..small_config()
    };
    let (model, _) = GraphCfc::build(&config, shape(3, 3), 0).unwrap();
    let terms: Vec<AuxTerm> = model.aux_heads.iter().map(|a| a.0).collect();
    assert_eq!(terms, vec![AuxTerm::Separate(Modality::Text)]);
    assert_eq!(model.stages.len(), 1);
    assert!(model.subspaces.shared.is_none());

    let config = ModelConfig {
        modalities: ModalitySet::parse("A+T").unwrap(),
        ..small_config()
    };
    let (model, _) = GraphCfc::build(&config, shape(3, 3), 0).unwrap();
    assert_eq!(model.stages.len(), 2);
    assert_eq!(model.aux_heads.len(), 3);
}

#[test]
fn every_modality_subset_runs() {
    let d = dialogue("d", 3, 3, 3, 8);
    for set in ModalitySet::SUBSETS {
        let config = ModelConfig {
            modalities: set,
            ..small_config()
        };
        let (model, store) = GraphCfc::build(&config, shape(3, 3), 0).unwrap();
        let logits = eval_logits(&model, &store, &[&d]);
        assert_eq!(logits.rows(), 3, "{set}");
        assert!(logits.is_finite());
    }
}

#[test]
fn single_utterance_stage_uses_inter_edges_only() {
    let config = ModelConfig {
        window: Window::new(0, 0),
        ..small_config()
    };
    let (model, store) = GraphCfc::build(&config, shape(3, 3), 0).unwrap();
    let d = dialogue("d", 1, 3, 3, 9);
    let edges = model.batch_edges(&[&d], 2).unwrap();
    assert_eq!(edges.len(), 2);
    assert_eq!((edges.src.clone(), edges.dst.clone()), (vec![0, 1], vec![1, 0]));
    assert!(eval_logits(&model, &store, &[&d]).is_finite());
}

#[test]
fn stage_output_depends_on_second_input() {
    let (model, store) = GraphCfc::build(&small_config(), shape(3, 3), 4).unwrap();
    let stage = &model.stages[0];
    let d = dialogue("d", 4, 3, 3, 10);
    let edges = model.batch_edges(&[&d], 2).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let p0 = Tensor::from_vec(4, 4, (0..16).map(|_| rng.random_range(-1.0..1.0)).collect());
    let q0 = Tensor::from_vec(4, 4, (0..16).map(|_| rng.random_range(-1.0..1.0)).collect());
    let run = |q: Tensor| {
        let mut tape = Tape::new();
        let p = tape.constant(p0.clone()).unwrap();
        let q = tape.constant(q).unwrap();
        let mut x = tape.concat_rows(&[p, q]).unwrap();
        for layer in &stage.layers {
            x = layer
                .forward(&mut tape, &store, &mut ForwardMode::eval(), x, &edges)
                .unwrap();
        }
        let top = tape.slice_rows(x, 0, 4).unwrap();
        let bottom = tape.slice_rows(x, 4, 4).unwrap();
        let cat = tape.concat_cols(&[top, bottom]).unwrap();
        let h = stage.project.unwrap().forward(&mut tape, &store, cat).unwrap();
        tape.value(h).clone()
    };
    let with_q = run(q0);
    let without_q = run(Tensor::zeros(4, 4));
    assert_eq!((with_q.rows(), with_q.cols()), (4, 4));
    assert!(with_q.max_abs_diff(&without_q) > 1e-6);
}

#[test]
fn end_to_end_gradient_check() {
    for seed in 0..5 {
        let config = ModelConfig {
            width: 4,
            layers: 1,
            heads: 2,
            head_merge: HeadMerge::ConcatProject,
            dropout: 0.0,
            window: Window::new(1, 1),
            ..ModelConfig::default()
        };
        let (model, store) = GraphCfc::build(&config, shape(3, 3), seed).unwrap();
        let d = dialogue("d", 2, 3, 3, 100 + seed);
        let report = finite_diff_check(
            |s, tape| {
                let (total, _) = model.objective(tape, s, &[&d], &mut ForwardMode::eval(), false)?;
                Ok(total)
            },
            &store,
            1e-5,
        )
        .unwrap();
        assert!(report.max_rel_err <= 1e-4, "seed {seed}: {report:?}");
    }
}

#[test]
fn dialogue_order_does_not_change_loss() {
    let (model, store) = GraphCfc::build(&small_config(), shape(3, 3), 6).unwrap();
    let ds: Vec<Dialogue> = (0..4)
        .map(|k| dialogue(&format!("d{k}"), 2 + k, 3, 3, 20 + k as u64))
        .collect();
    let loss = |order: &[usize]| {
        let batch: Vec<&Dialogue> = order.iter().map(|&i| &ds[i]).collect();
        let mut tape = Tape::new();
        let (total, _) = model
            .objective(&mut tape, &store, &batch, &mut ForwardMode::eval(), false)
            .unwrap();
        tape.value(total).item()
    };
    let a = loss(&[0, 1, 2, 3]);
    let b = loss(&[2, 0, 3, 1]);
    assert!((a - b).abs() < 1e-12, "{a} vs {b}");
}

#[test]
fn detached_auxiliaries_match_single_task_training() {
    let corpus = generate_synthetic(
        &SyntheticConfig {
            dialogues: 12,
            min_len: 3,
            max_len: 5,
            dims: dims(6),
            ..SyntheticConfig::default()
        },
        3,
    )
    .unwrap();
    let base = TrainConfig {
        model: ModelConfig {
            width: 8,
            layers: 1,
            dropout: 0.1,
            ..ModelConfig::default()
        },
        epochs: 3,
        batch_size: 4,
        patience: 0,
        ..TrainConfig::default()
    };
    let multi = TrainConfig {
        detach_auxiliary: true,
        ..base.clone()
    };
    let single = TrainConfig {
        model: ModelConfig {
            shared_loss: false,
            separate_loss: false,
            ..base.model.clone()
        },
        ..base
    };
    let (tr, va) = corpus.dialogues.split_at(9);
    let a = train(&multi, shape_of(&corpus), tr, va).unwrap();
    let b = train(&single, shape_of(&corpus), tr, va).unwrap();
    for (x, y) in a.history.epochs.iter().zip(&b.history.epochs) {
        assert!((x.train_cls - y.train_cls).abs() < 1e-12);
        assert_eq!(x.valid_accuracy, y.valid_accuracy);
    }
    // The shared parameters end up identical.
    for (_, p) in b.params.iter() {
        let q = a.params.by_name(&p.name).unwrap();
        assert!(p.value.max_abs_diff(&q.value) < 1e-12, "{}", p.name);
    }
}
