use log::{debug, info};

use crate::autograd::{SeededRng, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::memory::{encode_tokens, fuse_on_tape, record_access_and_promote};
use crate::model::{forward, AugVars, ParamGroup};
use crate::scalar::Scalar;
use crate::train::adam::Adam;
use crate::train::curriculum::schedule_curriculum;
use crate::train::loss::{consistency_loss, fine_tune_loss, task_loss, total_loss, LossBreakdown};
use crate::train::plan::{CurriculumStage, TrainPlan};
use crate::train::{Example, IcftModel};

/// Position in the schedule. `order` is empty until the epoch's shuffle is drawn.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Cursor {
    pub stage: usize,
    pub epoch: usize,
    pub pos: usize,
    pub order: Vec<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepRecord {
    pub step: u64,
    pub stage: usize,
    pub losses: LossBreakdown,
}

/// Resumable three-stage trainer. All state needed to continue bit-exactly is public.
pub struct Trainer<S> {
    plan: TrainPlan,
    stages: Vec<CurriculumStage>,
    examples: Vec<Example>,
    difficulty: Vec<f64>,
    base_logits: Vec<Option<Tensor<S>>>,
    pub state: IcftModel<S>,
    pub adam: Adam<S>,
    pub rng: SeededRng,
    pub cursor: Cursor,
    pub step: u64,
}

impl<S: Scalar> Trainer<S> {
    pub fn new(plan: TrainPlan, state: IcftModel<S>, examples: Vec<Example>) -> Result<Self> {
        let n = state.named_params().len();
        let adam = Adam::new(plan.adam, n);
        let rng = SeededRng::new(plan.seed);
        Self::resume(plan, state, examples, adam, rng, Cursor::default(), 0)
    }

    pub fn resume(
        plan: TrainPlan,
        mut state: IcftModel<S>,
        examples: Vec<Example>,
        adam: Adam<S>,
        rng: SeededRng,
        cursor: Cursor,
        step: u64,
    ) -> Result<Self> {
        plan.validate()?;
        if examples.is_empty() {
            return Err(Error::invalid("run_icft", "empty corpus"));
        }
        let b = plan.effective_buckets();
        if b > examples.len() {
            return Err(Error::invalid(
                "schedule_curriculum",
                format!("{b} buckets for a corpus of {} records", examples.len()),
            ));
        }
        for ex in &examples {
            state.model.base.validate_tokens(&ex.inputs)?;
        }
        if adam.moments.len() != state.named_params().len() {
            return Err(Error::invalid("run_icft", "optimizer state does not match the parameter list"));
        }
        state.use_memory = !plan.ablation.no_memory;
        let stages = plan.stages();
        let difficulty = examples.iter().map(|e| e.difficulty).collect();
        let base_logits = vec![None; examples.len()];
        Ok(Self {
            plan,
            stages,
            examples,
            difficulty,
            base_logits,
            state,
            adam,
            rng,
            cursor,
            step,
        })
    }

    pub fn plan(&self) -> &TrainPlan {
        &self.plan
    }

    pub fn stages(&self) -> &[CurriculumStage] {
        &self.stages
    }

    pub fn examples(&self) -> &[Example] {
        &self.examples
    }

    pub fn is_done(&self) -> bool {
        self.cursor.stage >= self.stages.len()
    }

    /// Stage index (1..=3) of the next step, if any.
    pub fn current_stage(&self) -> Option<usize> {
        self.stages.get(self.cursor.stage).map(|s| s.index)
    }

    /// Total steps the full schedule takes.
    pub fn planned_steps(&self) -> u64 {
        let bs = self.plan.batch_size;
        self.stages
            .iter()
            .map(|s| {
                let pool = self.stage_pool_len(s);
                (s.epochs * pool.div_ceil(bs)) as u64
            })
            .sum()
    }

    fn stage_pool_len(&self, s: &CurriculumStage) -> usize {
        let n = self.examples.len();
        let b = self.plan.effective_buckets();
        // bucket k spans [k·n/b, (k+1)·n/b), so the first m buckets hold m·n/b records
        s.buckets_included * n / b
    }

    fn base_logits(&mut self, i: usize) -> Result<Tensor<S>> {
        if self.base_logits[i].is_none() {
            let l = self.state.model.base.forward_base(&self.examples[i].inputs)?;
            self.base_logits[i] = Some(l);
        }
        Ok(self.base_logits[i].clone().expect("filled"))
    }

    /// Runs one batch. Returns `None` once the schedule is exhausted.
    pub fn step(&mut self) -> Result<Option<StepRecord>> {
        let Some(&stage) = self.stages.get(self.cursor.stage) else {
            return Ok(None);
        };
        if self.cursor.order.is_empty() {
            self.cursor.order = schedule_curriculum(
                &self.difficulty,
                self.plan.effective_buckets(),
                stage.index,
                &mut self.rng,
            )?;
            debug!(
                "stage {} epoch {}: {} examples",
                stage.index,
                self.cursor.epoch,
                self.cursor.order.len()
            );
        }
        let end = (self.cursor.pos + self.plan.batch_size).min(self.cursor.order.len());
        let batch: Vec<usize> = self.cursor.order[self.cursor.pos..end].to_vec();
        let losses = self.train_batch(&stage, &batch)?;
        let record = StepRecord {
            step: self.step,
            stage: stage.index,
            losses,
        };
        self.step += 1;
        self.cursor.pos = end;
        if self.cursor.pos >= self.cursor.order.len() {
            self.cursor.pos = 0;
            self.cursor.order.clear();
            self.cursor.epoch += 1;
            if self.cursor.epoch >= stage.epochs {
                self.cursor.epoch = 0;
                self.cursor.stage += 1;
            }
        }
        Ok(Some(record))
    }

    pub fn run_steps(&mut self, n: u64) -> Result<Vec<StepRecord>> {
        let mut out = Vec::new();
        for _ in 0..n {
            match self.step()? {
                Some(r) => out.push(r),
                None => break,
            }
        }
        Ok(out)
    }

    pub fn run_to_end(&mut self) -> Result<Vec<StepRecord>> {
        let mut out = Vec::new();
        while let Some(r) = self.step()? {
            if r.step % 50 == 0 {
                info!(
                    "step {} stage {} total {:.5} task {:.5}",
                    r.step, r.stage, r.losses.l_total, r.losses.task_nll
                );
            }
            out.push(r);
        }
        Ok(out)
    }

    fn train_batch(&mut self, stage: &CurriculumStage, batch: &[usize]) -> Result<LossBreakdown> {
        let use_memory = self.state.use_memory && stage.index >= 2;
        let update_memory = use_memory && stage.index == 2;
        let cfg = self.state.model.cfg().clone();
        let mut tape = Tape::<S>::new();
        let mv = self.state.model.bind(&mut tape, stage.groups);
        let pv = self.state.proj.bind(&mut tape, stage.groups);

        let lora_idle = self
            .state
            .model
            .patches
            .iter()
            .all(|p| p.merged || p.b.data().iter().all(|x| *x == S::zero()));
        let adapters_only = AugVars {
            adapters: mv.aug.adapters.clone(),
            lora: Vec::new(),
        };

        let mut task_items: Vec<(Var, usize)> = Vec::new();
        let mut pairs: Vec<(Var, Var)> = Vec::new();
        for &i in batch {
            let z = if use_memory {
                let q = encode_tokens(&self.state.model.base, &self.examples[i].prompt)?;
                match self.state.memory.attend(&q)? {
                    Some(att) => {
                        let z = fuse_on_tape(&mut tape, pv, &att)?;
                        if update_memory {
                            let mem = &mut self.state.memory;
                            record_access_and_promote(&mut mem.stm, &mut mem.ltm, &att);
                        }
                        Some(z)
                    }
                    None => None,
                }
            } else {
                None
            };
            if update_memory {
                let item = self.state.memory_item(&self.examples[i])?;
                self.state.memory.stm.insert(item);
            }
            let ex = &self.examples[i];
            let logits = forward(&mut tape, &cfg, &mv.base, Some(&mv.aug), &ex.inputs, z)?;
            task_items.push((logits, i));
            if stage.terms.consistency {
                // with no readout and every B at zero the full forward is the adapter-only forward
                let adapted = if z.is_none() && lora_idle {
                    logits
                } else {
                    forward(&mut tape, &cfg, &mv.base, Some(&adapters_only), &ex.inputs, None)?
                };
                let base = self.base_logits(i)?;
                let bv = tape.bind(&base, false);
                pairs.push((bv, adapted));
            }
        }

        let batch_targets: Vec<(Var, &[Option<usize>])> = task_items
            .iter()
            .map(|&(v, i)| (v, self.examples[i].targets.as_slice()))
            .collect();
        let task = task_loss(&mut tape, &batch_targets)?;
        let step = self.step;
        let check = |name: &'static str, v: f64| -> Result<f64> {
            if v.is_finite() {
                Ok(v)
            } else {
                Err(Error::NonFiniteLoss {
                    step,
                    term: name,
                })
            }
        };
        let task_nll = check("l_task", tape.item(task).as_f64())?;

        let mut terms: Vec<Var> = Vec::new();
        let mut out = LossBreakdown {
            n: batch.len(),
            task_nll,
            ..LossBreakdown::default()
        };
        if stage.terms.consistency {
            let c = consistency_loss(&mut tape, &pairs)?;
            out.l_consistency = Some(check("l_consistency", tape.item(c).as_f64())?);
            terms.push(c);
        }
        if stage.terms.task {
            out.l_task = Some(task_nll);
            terms.push(task);
        }
        if stage.terms.finetune {
            let factors: Vec<(Var, Var)> = mv.aug.lora.iter().map(|&(_, a, b)| (a, b)).collect();
            let f = fine_tune_loss(&mut tape, task, &factors, self.plan.lambda)?;
            out.l_finetune = Some(check("l_finetune", tape.item(f).as_f64())?);
            terms.push(f);
        }
        let mut total = terms[0];
        for &t in &terms[1..] {
            total = tape.add(total, t)?;
        }
        out.l_total = check("l_total", tape.item(total).as_f64())?;
        debug_assert!((out.l_total - total_loss(&out)).abs() <= 1e-9 * out.l_total.abs().max(1.0));

        tape.backward(total)?;
        let mut vars = mv.entries.clone();
        vars.extend([pv.w_stm, pv.w_ltm]);
        let groups: Vec<ParamGroup> = self.state.named_params().iter().map(|(_, g, _)| *g).collect();
        let active: Vec<bool> = groups.iter().map(|g| stage.groups.contains(*g)).collect();
        // a trainable parameter the graph never reached has a zero gradient
        let zeros: Vec<Vec<S>> = vars
            .iter()
            .zip(&active)
            .map(|(&v, &a)| {
                if a && tape.grad(v).is_none() {
                    vec![S::zero(); tape.value(v).len()]
                } else {
                    Vec::new()
                }
            })
            .collect();
        let grads: Vec<Option<&[S]>> = vars
            .iter()
            .zip(&active)
            .zip(&zeros)
            .map(|((&v, &a), z)| if !a { None } else { tape.grad(v).or(Some(z.as_slice())) })
            .collect();
        let mut params = self.state.params_mut();
        self.adam.step(stage.lr, &mut params, &grads, &active)?;
        Ok(out)
    }
}

/// Result of a complete run.
pub struct IcftRun<S> {
    pub trainer: Trainer<S>,
    pub log: Vec<StepRecord>,
    /// Mean NLL over the whole corpus with the final model.
    pub final_task_loss: f64,
}

pub fn run_icft<S: Scalar>(plan: TrainPlan, state: IcftModel<S>, examples: Vec<Example>) -> Result<IcftRun<S>> {
    let mut trainer = Trainer::new(plan, state, examples)?;
    let log = trainer.run_to_end()?;
    let final_task_loss = trainer.state.task_loss(trainer.examples())?;
    info!("final task loss {final_task_loss:.5}");
    Ok(IcftRun {
        trainer,
        log,
        final_task_loss,
    })
}
