use super::*;
use crate::autograd::{SeededRng, Tape, Tensor};
use crate::error::Error;
use crate::memory::{MemoryConfig, MemoryStore};
use crate::model::{AdaptedModel, GroupSet, ModelConfig, Vocab};

type T = Tensor<f64>;

const PAIRS: [(&str, &str); 9] = [
    ("rest helps", "drink water"),
    ("fever high", "take paracetamol now"),
    ("cough dry", "honey and tea"),
    ("rash spreads fast", "see a doctor today"),
    ("ankle sprain", "ice it"),
    ("sore throat pain", "salt water gargle helps"),
    ("cold sweat", "check sugar"),
    ("chest pain at rest", "call emergency services now please"),
    ("tired eyes", "sleep more"),
];

fn corpus() -> (Vocab, Vec<Example>) {
    let vocab = Vocab::build(PAIRS.iter().flat_map(|(p, r)| [*p, *r]));
    let ex = PAIRS
        .iter()
        .enumerate()
        .map(|(i, (p, r))| {
            let d = (p.split_whitespace().count() + r.split_whitespace().count()) as f64;
            Example::new(&vocab, &format!("r{i}"), p, r, d).unwrap()
        })
        .collect();
    (vocab, ex)
}

fn state(vocab: &Vocab) -> IcftModel<f64> {
    let cfg = ModelConfig {
        d_model: 8,
        n_layers: 1,
        n_heads: 2,
        d_ff: 16,
        vocab_size: vocab.len(),
        ctx_len: 16,
        adapter_rank: 2,
        lora_rank: 2,
        seed: 3,
        ..ModelConfig::default()
    };
    IcftModel {
        model: AdaptedModel::init(&cfg).unwrap(),
        proj: MemoryProjections::identity(8),
        memory: DualMemory::new(&MemoryConfig {
            stm_capacity: 3,
            ltm_threshold: 1,
            ltm_capacity: 4,
        })
        .unwrap(),
        use_memory: true,
    }
}

fn plan(epochs: usize) -> TrainPlan {
    let s = StagePlan { epochs, lr: 1e-2 };
    TrainPlan {
        stage1: s,
        stage2: s,
        stage3: s,
        batch_size: 4,
        seed: 5,
        ..TrainPlan::default()
    }
}

// ---- losses ----

#[test]
fn consistency_zero_when_equal_and_norm_on_ones() {
    let mut tape = Tape::<f64>::new();
    let (l, v) = (3, 5);
    let base = tape.bind(&T::randn(&[l, v], 1.0, &mut SeededRng::new(1)), false);
    let same = tape.bind(&tape.to_tensor(base), true);
    let c = consistency_loss(&mut tape, &[(base, same)]).unwrap();
    assert_eq!(tape.item(c), 0.0);
    let shifted: Vec<f64> = tape.value(base).iter().map(|x| x + 1.0).collect();
    let other = tape.constant(&[l, v], shifted).unwrap();
    let c = consistency_loss(&mut tape, &[(base, other)]).unwrap();
    assert!((tape.item(c) - (l * v) as f64).abs() < 1e-12);
    // mean over sequences
    let c2 = consistency_loss(&mut tape, &[(base, other), (base, same)]).unwrap();
    assert!((tape.item(c2) - (l * v) as f64 / 2.0).abs() < 1e-12);
    assert!(consistency_loss(&mut tape, &[]).is_err());
}

#[test]
fn consistency_zero_for_identity_adapters() {
    let (vocab, ex) = corpus();
    let st = state(&vocab);
    let mut tape = Tape::new();
    let mv = st.model.bind(&mut tape, GroupSet::of(&[crate::model::ParamGroup::Adapter]));
    let mut pairs = Vec::new();
    for e in &ex {
        let y = crate::model::forward(&mut tape, st.model.cfg(), &mv.base, Some(&mv.aug), &e.inputs, None).unwrap();
        let b = tape.bind(&st.model.base.forward_base(&e.inputs).unwrap(), false);
        pairs.push((b, y));
    }
    let c = consistency_loss(&mut tape, &pairs).unwrap();
    assert_eq!(tape.item(c), 0.0);
}

#[test]
fn task_loss_uniform_masked_and_misaligned() {
    let v = 7;
    let mut tape = Tape::<f64>::new();
    let logits = tape.constant(&[3, v], vec![0.25; 3 * v]).unwrap();
    let t = [Some(1), None, Some(6)];
    let l = task_loss(&mut tape, &[(logits, &t)]).unwrap();
    assert!((tape.item(l) - (v as f64).ln()).abs() < 1e-12);
    let masked = [None, None, None];
    let l = task_loss(&mut tape, &[(logits, &masked)]).unwrap();
    assert_eq!(tape.item(l), 0.0);
    assert!(task_loss(&mut tape, &[(logits, &t[..2])]).is_err());
    assert!(task_loss(&mut tape, &[]).is_err());
}

#[test]
fn task_loss_is_token_weighted() {
    let mut tape = Tape::<f64>::new();
    let a = tape.constant(&[1, 2], vec![0.0, 0.0]).unwrap();
    let b = tape.constant(&[2, 2], vec![5.0, 0.0, 5.0, 0.0]).unwrap();
    let l = task_loss(&mut tape, &[(a, &[Some(0)]), (b, &[Some(0), Some(0)])]).unwrap();
    let nll_b = (1.0 + (-5.0f64).exp()).ln();
    let want = (2f64.ln() + 2.0 * nll_b) / 3.0;
    assert!((tape.item(l) - want).abs() < 1e-12);
}

#[test]
fn fine_tune_examples() {
    let mut tape = Tape::<f64>::new();
    let task = tape.constant(&[1], vec![1.0]).unwrap();
    let a = tape.bind(&T::from_rows(&[&[1.0, 2.0], &[3.0, 4.0]]), true);
    let b = tape.bind(&T::zeros(&[2, 2]), true);
    let f = fine_tune_loss(&mut tape, task, &[(a, b)], 0.1).unwrap();
    assert!((tape.item(f) - 4.0).abs() < 1e-12);
    let f0 = fine_tune_loss(&mut tape, task, &[(a, b)], 0.0).unwrap();
    assert_eq!(tape.item(f0), 1.0);
    let z = tape.bind(&T::zeros(&[2, 2]), true);
    let fz = fine_tune_loss(&mut tape, task, &[(z, b)], 0.5).unwrap();
    assert_eq!(tape.item(fz), 1.0);
    assert!(fine_tune_loss(&mut tape, task, &[(a, b)], -1e-3).is_err());
    assert!(fine_tune_loss(&mut tape, task, &[], f64::NAN).is_err());
}

#[test]
fn total_loss_sums_present_terms() {
    let s1 = LossBreakdown {
        l_consistency: Some(0.3),
        l_task: Some(1.25),
        ..LossBreakdown::default()
    };
    assert_eq!(total_loss(&s1), 0.3 + 1.25);
    let s3 = LossBreakdown {
        l_finetune: Some(2.5),
        ..LossBreakdown::default()
    };
    assert_eq!(total_loss(&s3), 2.5);
    let all = LossBreakdown {
        l_consistency: Some(0.1),
        l_task: Some(0.2),
        l_finetune: Some(0.3),
        ..LossBreakdown::default()
    };
    assert!((total_loss(&all) - 0.6).abs() < 1e-12);
}

// ---- curriculum ----

#[test]
fn curriculum_partition_and_stages() {
    let diff: Vec<f64> = vec![5.0, 1.0, 9.0, 3.0, 7.0, 2.0, 8.0, 4.0, 6.0];
    let buckets = curriculum_buckets(&diff, 3).unwrap();
    assert_eq!(buckets, vec![vec![1, 5, 3], vec![7, 0, 8], vec![4, 6, 2]]);
    let mut rng = SeededRng::new(0);
    let mut s1 = schedule_curriculum(&diff, 3, 1, &mut rng).unwrap();
    s1.sort();
    assert_eq!(s1, vec![1, 3, 5]);
    let mut s3 = schedule_curriculum(&diff, 3, 3, &mut rng).unwrap();
    s3.sort();
    assert_eq!(s3, (0..9).collect::<Vec<_>>());
    assert_eq!(stage_pool(&diff, 3, 2).unwrap().len(), 6);
    assert_eq!(stage_pool(&diff, 1, 1).unwrap().len(), 9);
    assert!(curriculum_buckets(&diff, 10).is_err());
    assert!(stage_pool(&diff, 3, 0).is_err());
    // B = 6: ⌈6/3⌉ = 2 buckets per stage
    assert_eq!(buckets_for_stage(6, 1), 2);
    assert_eq!(buckets_for_stage(6, 3), 6);
    assert_eq!(buckets_for_stage(4, 2), 4);
}

#[test]
fn curriculum_matches_hand_sort_on_lengths() {
    let texts = ["a b c d", "a", "a b", "a b c d e f", "a b c", "a b c d e"];
    let diff: Vec<f64> = texts.iter().map(|t| t.split_whitespace().count() as f64).collect();
    let b = curriculum_buckets(&diff, 2).unwrap();
    assert_eq!(b, vec![vec![1, 2, 4], vec![0, 5, 3]]);
    // ties keep corpus order
    let tied = curriculum_buckets(&[1.0, 1.0, 1.0, 0.0], 2).unwrap();
    assert_eq!(tied, vec![vec![3, 0], vec![1, 2]]);
}

// ---- adam ----

#[test]
fn adam_first_step_and_zero_grad() {
    let mut adam = Adam::<f64>::new(AdamConfig::default(), 2);
    let mut p = T::scalar(0.5);
    let mut q = T::scalar(2.0);
    let g1 = [1.0];
    let g0 = [0.0];
    adam.step(0.1, &mut [&mut p, &mut q], &[Some(&g1), Some(&g0)], &[true, true]).unwrap();
    assert!((p.data()[0] - (0.5 - 0.1 / (1.0 + 1e-8))).abs() < 1e-15);
    assert_eq!(q.data()[0], 2.0);
    assert_eq!(adam.moments[0].as_ref().unwrap().t, 1);
    assert_eq!(adam.steps, 1);
}

#[test]
fn adam_frozen_untouched_and_missing_grad() {
    let mut adam = Adam::<f64>::new(AdamConfig::default(), 2);
    let mut p = T::scalar(1.0);
    let mut q = T::scalar(1.0);
    let g = [3.0];
    adam.step(0.1, &mut [&mut p, &mut q], &[Some(&g), Some(&g)], &[true, false]).unwrap();
    assert_eq!(q.data()[0], 1.0);
    assert!(adam.moments[1].is_none());
    let err = adam.step(0.1, &mut [&mut p, &mut q], &[None, None], &[true, false]);
    assert!(matches!(err, Err(Error::InvalidArgument { .. })));
    let err = adam.step(0.1, &mut [&mut p], &[Some(&g)], &[true]);
    assert!(err.is_err());
}

#[test]
fn adam_per_parameter_bias_correction() {
    // a parameter joining late gets the same first update as a fresh one
    let mut adam = Adam::<f64>::new(AdamConfig::default(), 2);
    let (mut p, mut q) = (T::scalar(0.0), T::scalar(0.0));
    let g = [1.0];
    for _ in 0..5 {
        adam.step(0.1, &mut [&mut p, &mut q], &[Some(&g), None], &[true, false]).unwrap();
    }
    adam.step(0.1, &mut [&mut p, &mut q], &[Some(&g), Some(&g)], &[true, true]).unwrap();
    assert!((q.data()[0] + 0.1 / (1.0 + 1e-8)).abs() < 1e-15);
}

// ---- plan ----

#[test]
fn plan_stages_reflect_ablations() {
    use crate::model::ParamGroup::*;
    let p = TrainPlan::default();
    let s = p.stages();
    assert_eq!(s.len(), 3);
    assert_eq!(s[0].groups, GroupSet::of(&[Adapter]));
    assert_eq!(s[1].groups, GroupSet::of(&[Adapter, Memory]));
    assert_eq!(s[2].groups, GroupSet::of(&[Lora, Memory]));
    assert!(s.iter().all(|st| st.groups.iter().all(|g| !g.is_base())));
    assert!(s[0].terms.consistency && s[0].terms.task && !s[0].terms.finetune);
    assert!(!s[1].terms.consistency && s[1].terms.task);
    assert!(s[2].terms.finetune && !s[2].terms.task);
    assert_eq!(s.iter().map(|x| x.buckets_included).collect::<Vec<_>>(), [1, 2, 3]);

    let mut q = p.clone();
    q.ablation = Ablation {
        no_memory: true,
        no_curriculum: true,
        no_lora: true,
    };
    let s = q.stages();
    assert_eq!(s.len(), 2);
    assert!(s.iter().all(|st| !st.groups.contains(Memory) && st.buckets_included == 1));
    assert_eq!(q.effective_buckets(), 1);

    let mut lit = p.clone();
    lit.loss_mode = LossMode::Joint;
    assert!(lit.stages().iter().all(|st| st.terms.consistency && st.terms.task && st.terms.finetune));
    assert_eq!("joint".parse::<LossMode>().unwrap(), LossMode::Joint);
    assert!("both".parse::<LossMode>().is_err());

    let mut bad = p.clone();
    bad.lambda = -1.0;
    assert!(bad.validate().is_err());
}

// ---- examples ----

#[test]
fn example_layout_and_mask() {
    let vocab = Vocab::build(["fever high", "rest now"]);
    let e = Example::new(&vocab, "x", "fever high", "rest now", 4.0).unwrap();
    let (bos, sep, eos) = (vocab.bos(), vocab.sep(), vocab.eos());
    let ids = |w: &str| vocab.id(w).unwrap();
    assert_eq!(e.inputs, vec![bos, ids("fever"), ids("high"), sep, ids("rest"), ids("now")]);
    assert_eq!(
        e.targets,
        vec![None, None, None, Some(ids("rest")), Some(ids("now")), Some(eos)]
    );
    assert_eq!(e.prefix(), &[bos, ids("fever"), ids("high"), sep]);
    assert!(Example::new(&vocab, "y", "  ", "rest", 1.0).is_err());
}

// ---- trainer ----

#[test]
fn first_step_consistency_is_zero_and_terms_add_up() {
    let (vocab, ex) = corpus();
    let mut tr = Trainer::new(plan(2), state(&vocab), ex).unwrap();
    let log = tr.run_to_end().unwrap();
    assert_eq!(log[0].stage, 1);
    assert_eq!(log[0].losses.l_consistency, Some(0.0));
    for r in &log {
        let want = total_loss(&r.losses);
        assert!((r.losses.l_total - want).abs() <= 1e-12, "{r:?}");
        match r.stage {
            1 => assert!(r.losses.l_consistency.is_some() && r.losses.l_task.is_some() && r.losses.l_finetune.is_none()),
            2 => assert!(r.losses.l_consistency.is_none() && r.losses.l_task.is_some() && r.losses.l_finetune.is_none()),
            _ => assert!(r.losses.l_consistency.is_none() && r.losses.l_task.is_none() && r.losses.l_finetune.is_some()),
        }
    }
    assert_eq!(log.len() as u64, tr.planned_steps());
    assert!(tr.is_done());
    assert!(tr.step().unwrap().is_none());
}

#[test]
fn base_frozen_and_stage_isolation() {
    let (vocab, ex) = corpus();
    let st = state(&vocab);
    let base_before = st.model.base.clone();
    let mut tr = Trainer::new(plan(2), st, ex).unwrap();
    loop {
        let before: Vec<T> = tr.state.named_params().iter().map(|(_, _, t)| (*t).clone()).collect();
        let Some(stage) = tr.current_stage() else { break };
        let groups = tr.stages().iter().find(|s| s.index == stage).unwrap().groups;
        tr.step().unwrap();
        for ((name, g, after), b) in tr.state.named_params().iter().zip(&before) {
            if !groups.contains(*g) {
                assert!(after.bit_eq(b), "stage {stage} touched {name}");
            }
        }
    }
    for ((_, _, a), (_, _, b)) in tr.state.model.base.named_params().iter().zip(base_before.named_params().iter()) {
        assert!(a.bit_eq(b));
    }
    assert_eq!(tr.state.model.base, base_before);
    assert!(tr.state.proj.w_stm != T::eye(8), "memory projection never trained");
}

#[test]
fn ablations_change_structure() {
    let (vocab, ex) = corpus();
    let mut p = plan(1);
    p.ablation.no_lora = true;
    let run = run_icft(p, state(&vocab), ex.clone()).unwrap();
    assert!(run.log.iter().all(|r| r.stage != 3));
    assert!(run.trainer.state.model.patches.iter().all(|q| q.b.data().iter().all(|x| *x == 0.0)));

    let mut p = plan(1);
    p.ablation.no_memory = true;
    let run = run_icft(p, state(&vocab), ex.clone()).unwrap();
    assert!(run.trainer.state.memory.is_empty());
    assert_eq!(run.trainer.state.proj, MemoryProjections::identity(8));
    assert!(run.trainer.state.readout(&ex[0].prompt).unwrap().is_none());

    let mut p = plan(1);
    p.ablation.no_curriculum = true;
    let tr = Trainer::new(p, state(&vocab), ex.clone()).unwrap();
    // every stage sees the whole corpus: 3 stages × ⌈9/4⌉ batches
    assert_eq!(tr.planned_steps(), 9);
    let tr = Trainer::new(plan(1), state(&vocab), ex).unwrap();
    // with 3 buckets of 3: stages see 3, 6, 9 records
    assert_eq!(tr.planned_steps(), 1 + 2 + 3);
}

#[test]
fn memory_fills_in_stage_two_only() {
    let (vocab, ex) = corpus();
    let mut tr = Trainer::new(plan(2), state(&vocab), ex).unwrap();
    while tr.current_stage() == Some(1) {
        tr.step().unwrap();
    }
    assert!(tr.state.memory.is_empty());
    while tr.current_stage() == Some(2) {
        tr.step().unwrap();
    }
    let mem = tr.state.memory.clone();
    assert_eq!(mem.stm.len(), 3);
    tr.run_to_end().unwrap();
    assert_eq!(tr.state.memory, mem);
    assert!(mem.ltm.items().iter().all(|i| i.access_count >= 1));
}

#[test]
fn training_is_deterministic_and_resumable() {
    let (vocab, ex) = corpus();
    let mut a = Trainer::new(plan(2), state(&vocab), ex.clone()).unwrap();
    let mut b = Trainer::new(plan(2), state(&vocab), ex.clone()).unwrap();
    let la = a.run_to_end().unwrap();
    let lb = b.run_to_end().unwrap();
    assert_eq!(la, lb);
    assert_eq!(a.state, b.state);

    let mut c = Trainer::new(plan(2), state(&vocab), ex.clone()).unwrap();
    let n = 5;
    c.run_steps(n).unwrap();
    let mut d = Trainer::resume(
        plan(2),
        c.state.clone(),
        ex,
        c.adam.clone(),
        crate::autograd::SeededRng::from_state(c.rng.state()),
        c.cursor.clone(),
        c.step,
    )
    .unwrap();
    d.run_to_end().unwrap();
    assert_eq!(d.state, a.state);
    assert_eq!(d.adam, a.adam);
    assert_eq!(d.step, a.step);
}

#[test]
fn joint_mode_logs_all_terms() {
    let (vocab, ex) = corpus();
    let mut p = plan(1);
    p.loss_mode = LossMode::Joint;
    let run = run_icft(p, state(&vocab), ex).unwrap();
    for r in &run.log {
        let l = r.losses;
        assert!(l.l_consistency.is_some() && l.l_task.is_some() && l.l_finetune.is_some());
        assert!((l.l_total - total_loss(&l)).abs() <= 1e-12);
    }
}

#[test]
fn nan_loss_aborts_with_step_and_term() {
    let (vocab, ex) = corpus();
    let mut st = state(&vocab);
    st.model.adapters[0].w_up.data_mut()[0] = f64::NAN;
    let mut tr = Trainer::new(plan(1), st, ex).unwrap();
    match tr.step() {
        Err(Error::NonFiniteLoss { step, term }) => {
            assert_eq!(step, 0);
            assert_eq!(term, "l_task");
        }
        other => panic!("{other:?}"),
    }
}

#[test]
fn trainer_rejects_bad_inputs() {
    let (vocab, ex) = corpus();
    let mut p = plan(1);
    p.buckets = 20;
    assert!(Trainer::new(p, state(&vocab), ex.clone()).is_err());
    assert!(Trainer::new(plan(1), state(&vocab), Vec::new()).is_err());
    let mut p = plan(1);
    p.batch_size = 0;
    assert!(Trainer::new(p, state(&vocab), ex).is_err());
}
