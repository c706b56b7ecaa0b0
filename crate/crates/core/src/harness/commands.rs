use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use log::info;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::harness::checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
use crate::harness::config::{MetricsConfig, Overrides, RunConfig};
use crate::harness::corpus::{build_vocab, bundled_corpus, load_corpus, to_examples, CorpusRecord};
use crate::memory::MemoryStore;
use crate::metrics::MetricReport;
use crate::model::{count_params, AdaptedModel, CountMode, ParamCountReport, Vocab};
use crate::scalar::Scalar;
use crate::train::{IcftModel, StepRecord};

pub const LOG_HEADER: &str = "step\tstage\tl_consistency\tl_task\tl_finetune\tl_total";

pub fn format_log_line(r: &StepRecord) -> String {
    let f = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |x| x.to_string());
    let l = &r.losses;
    format!(
        "{}\t{}\t{}\t{}\t{}\t{}",
        r.step,
        r.stage,
        f(l.l_consistency),
        f(l.l_task),
        f(l.l_finetune),
        l.l_total
    )
}

/// The corpus named in the config, or the bundled one.
pub fn corpus_for(cfg: &RunConfig) -> Result<Vec<CorpusRecord>> {
    match &cfg.paths.corpus {
        Some(p) => load_corpus(p),
        None => Ok(bundled_corpus()),
    }
}

#[derive(Clone, Debug, Default)]
pub struct TrainOptions {
    /// Stop after this many steps (a checkpoint is still written).
    pub max_steps: Option<u64>,
    /// Continue from this checkpoint instead of starting fresh.
    pub resume: Option<PathBuf>,
}

#[derive(Clone, Debug, Serialize)]
pub struct TrainOutcome {
    pub checkpoint: PathBuf,
    pub metrics_log: PathBuf,
    pub steps: u64,
    pub finished: bool,
    pub stages_run: Vec<usize>,
    /// Present once the schedule has completed.
    pub final_task_loss: Option<f64>,
}

pub fn cmd_train(config_path: &Path, overrides: &Overrides, opts: &TrainOptions) -> Result<TrainOutcome> {
    let mut cfg = RunConfig::load(config_path)?;
    cfg.apply(overrides);
    train_with_config(cfg, opts)
}

pub fn train_with_config(cfg: RunConfig, opts: &TrainOptions) -> Result<TrainOutcome> {
    cfg.validate()?;
    let records = corpus_for(&cfg)?;
    let (ckpt, append) = match &opts.resume {
        Some(p) => {
            let c: Checkpoint<f64> = load_checkpoint(p)?;
            (c, true)
        }
        None => {
            let vocab = build_vocab(&records);
            (Checkpoint::fresh(cfg.clone(), vocab)?, false)
        }
    };
    let run_cfg = ckpt.config.clone();
    let vocab = ckpt.vocab.clone();
    let examples = to_examples(&records, &vocab)?;
    let mut trainer = ckpt.into_trainer(examples)?;
    let ckpt_path = run_cfg.paths.checkpoint_path();
    let log_path = run_cfg.paths.metrics_log_path();

    let mut records_out: Vec<StepRecord> = Vec::new();
    let limit = opts.max_steps.unwrap_or(u64::MAX);
    while (records_out.len() as u64) < limit {
        match trainer.step()? {
            Some(r) => {
                if r.step % 100 == 0 {
                    info!("step {} stage {} l_total {:.5}", r.step, r.stage, r.losses.l_total);
                }
                records_out.push(r);
            }
            None => break,
        }
    }
    let finished = trainer.is_done();
    let final_task_loss = if finished {
        Some(trainer.state.task_loss(trainer.examples())?)
    } else {
        None
    };

    write_log(&log_path, &records_out, append)?;
    save_checkpoint(&ckpt_path, &Checkpoint::from_trainer(run_cfg, vocab, &trainer))?;
    let mut stages_run: Vec<usize> = records_out.iter().map(|r| r.stage).collect();
    stages_run.dedup();
    Ok(TrainOutcome {
        checkpoint: ckpt_path,
        metrics_log: log_path,
        steps: trainer.step,
        finished,
        stages_run,
        final_task_loss,
    })
}

fn write_log(path: &Path, records: &[StepRecord], append: bool) -> Result<()> {
    let ctx = || format!("writing metrics log {}", path.display());
    if let Some(dir) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(ctx(), e))?;
    }
    let mut s = String::new();
    let exists = path.exists();
    if !append || !exists {
        s.push_str(LOG_HEADER);
        s.push('\n');
    }
    for r in records {
        s.push_str(&format_log_line(r));
        s.push('\n');
    }
    let mut f = fs::OpenOptions::new()
        .create(true)
        .write(true)
        .append(append)
        .truncate(!append)
        .open(path)
        .map_err(|e| Error::io(ctx(), e))?;
    f.write_all(s.as_bytes()).map_err(|e| Error::io(ctx(), e))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EvalExample {
    pub id: String,
    pub prompt: String,
    pub reference: String,
    pub generated: String,
    pub label: Option<String>,
    pub predicted_label: String,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EvalOutput {
    pub report: MetricReport,
    pub examples: Vec<EvalExample>,
}

pub fn predict_label(generated_tokens: usize, m: &MetricsConfig) -> &'static str {
    if generated_tokens <= m.concise_max_tokens {
        "concise"
    } else {
        "detailed"
    }
}

/// Greedy-decodes every prompt and scores the outputs against the references.
pub fn evaluate<S: Scalar>(
    state: &IcftModel<S>,
    vocab: &Vocab,
    records: &[CorpusRecord],
    m: &MetricsConfig,
) -> Result<EvalOutput> {
    if records.is_empty() {
        return Err(Error::Eval("empty evaluation set".into()));
    }
    if state.model.cfg().vocab_size != vocab.len() {
        return Err(Error::Eval(format!(
            "vocab mismatch: model has {} outputs, vocabulary has {} words",
            state.model.cfg().vocab_size,
            vocab.len()
        )));
    }
    let known: usize = records
        .iter()
        .map(|r| crate::metrics::tokenize(&r.prompt).len() - vocab.count_unknown(&r.prompt))
        .sum();
    if known == 0 {
        return Err(Error::Eval(
            "vocab mismatch: no prompt token of the eval set is in the checkpoint vocabulary".into(),
        ));
    }
    let mut examples = Vec::with_capacity(records.len());
    let mut labels = Vec::new();
    for r in records {
        let ex = crate::train::Example::new(vocab, &r.id, &r.prompt, &r.response, r.difficulty_or_length())?;
        let out = state.generate(&ex, vocab.eos(), m.max_new_tokens)?;
        let generated = vocab.decode(&out);
        let predicted = predict_label(out.len(), m).to_string();
        if let Some(gold) = &r.label {
            labels.push((predicted.clone(), gold.clone()));
        }
        examples.push(EvalExample {
            id: r.id.clone(),
            prompt: r.prompt.clone(),
            reference: r.response.clone(),
            generated,
            label: r.label.clone(),
            predicted_label: predicted,
        });
    }
    let cands: Vec<&str> = examples.iter().map(|e| e.generated.as_str()).collect();
    let refs: Vec<&str> = examples.iter().map(|e| e.reference.as_str()).collect();
    let report = MetricReport::compute(&cands, &refs, &labels)?;
    Ok(EvalOutput { report, examples })
}

/// Evaluates a checkpoint on `data`, or on its training corpus when `data` is `None`.
pub fn cmd_eval(checkpoint: &Path, data: Option<&Path>) -> Result<EvalOutput> {
    let ckpt: Checkpoint<f64> = load_checkpoint(checkpoint)?;
    let records = match data {
        Some(p) => load_corpus(p)?,
        None => corpus_for(&ckpt.config)?,
    };
    evaluate(&ckpt.state, &ckpt.vocab, &records, &ckpt.config.metrics)
}

#[derive(Clone, Debug, Serialize)]
pub struct ParamTable {
    pub rows: Vec<ParamCountReport>,
    /// Trainable count of each row obtained by walking allocated buffers.
    pub enumerated_trainable: Vec<usize>,
}

impl ParamTable {
    pub fn render(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{:<13} {:>12} {:>12} {:>10} {:>12}", "mode", "total", "trainable", "relative%", "enumerated");
        for (r, e) in self.rows.iter().zip(&self.enumerated_trainable) {
            let _ = writeln!(
                s,
                "{:<13} {:>12} {:>12} {:>10.4} {:>12}",
                r.mode.name(),
                r.total_params,
                r.trainable_params,
                r.relative_size_percent,
                e
            );
        }
        s
    }
}

pub fn param_table(cfg: &RunConfig) -> Result<ParamTable> {
    cfg.validate()?;
    let vocab_len = if cfg.model.vocab_size == 0 {
        build_vocab(&corpus_for(cfg)?).len()
    } else {
        cfg.model.vocab_size
    };
    let mcfg = cfg.model_config(vocab_len)?;
    let model = AdaptedModel::<f64>::init(&mcfg)?;
    let mut rows = Vec::new();
    let mut enumerated = Vec::new();
    for mode in CountMode::ALL {
        let closed = count_params(&mcfg, mode);
        let walked = model.enumerate_params(mode);
        if closed != walked {
            return Err(Error::invalid(
                "count_params",
                format!("closed form and enumeration disagree for {}", mode.name()),
            ));
        }
        enumerated.push(walked.trainable_params);
        rows.push(closed);
    }
    Ok(ParamTable {
        rows,
        enumerated_trainable: enumerated,
    })
}

pub fn cmd_count_params(config_path: &Path, overrides: &Overrides) -> Result<ParamTable> {
    let mut cfg = RunConfig::load(config_path)?;
    cfg.apply(overrides);
    param_table(&cfg)
}

pub fn render_memory<S: Scalar>(state: &IcftModel<S>) -> Result<String> {
    if !state.use_memory {
        return Err(Error::Checkpoint("checkpoint was trained without memory; there is no memory state".into()));
    }
    let mem = &state.memory;
    let mut s = String::new();
    let _ = writeln!(
        s,
        "STM ({}/{} items, oldest first)",
        mem.stm.len(),
        mem.stm.capacity()
    );
    let _ = writeln!(s, "  {:<4} {:<12} {:>8} {:>7}  text", "#", "id", "inserted", "access");
    for (i, it) in mem.stm.items().iter().enumerate() {
        let _ = writeln!(s, "  {:<4} {:<12} {:>8} {:>7}  {}", i, it.id, it.insert_time, it.access_count, it.text);
    }
    let _ = writeln!(
        s,
        "LTM ({}/{} items, threshold {}, promotion order)",
        mem.ltm.len(),
        mem.ltm.capacity(),
        mem.ltm.threshold()
    );
    let _ = writeln!(s, "  {:<4} {:<12} {:>8} {:>7}  text", "#", "id", "promoted", "access");
    for (i, it) in mem.ltm.items().iter().enumerate() {
        let _ = writeln!(s, "  {:<4} {:<12} {:>8} {:>7}  {}", i, it.id, it.insert_time, it.access_count, it.text);
    }
    Ok(s)
}

pub fn cmd_inspect_memory(checkpoint: &Path) -> Result<String> {
    let ckpt: Checkpoint<f64> = load_checkpoint(checkpoint)?;
    render_memory(&ckpt.state)
}
