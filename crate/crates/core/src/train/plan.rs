use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{GroupSet, ParamGroup};
use crate::train::adam::AdamConfig;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossMode {
    /// Stage 1: consistency + task, stage 2: task, stage 3: fine-tune.
    #[default]
    Staged,
    /// Consistency + task + fine-tune in every stage.
    Joint,
}

impl std::str::FromStr for LossMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "staged" => Ok(LossMode::Staged),
            "joint" => Ok(LossMode::Joint),
            other => Err(Error::Config(format!("unknown loss mode {other:?} (staged | joint)"))),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Ablation {
    pub no_memory: bool,
    pub no_curriculum: bool,
    pub no_lora: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StagePlan {
    pub epochs: usize,
    pub lr: f64,
}

impl Default for StagePlan {
    fn default() -> Self {
        Self { epochs: 10, lr: 1e-3 }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LossTerms {
    pub consistency: bool,
    pub task: bool,
    pub finetune: bool,
}

/// A resolved stage: what trains, on which buckets, under which objective.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CurriculumStage {
    pub index: usize,
    pub groups: GroupSet,
    pub terms: LossTerms,
    pub buckets_included: usize,
    pub epochs: usize,
    pub lr: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainPlan {
    pub stage1: StagePlan,
    pub stage2: StagePlan,
    pub stage3: StagePlan,
    pub buckets: usize,
    pub lambda: f64,
    pub batch_size: usize,
    pub loss_mode: LossMode,
    pub adam: AdamConfig,
    /// Taken from the run configuration, not the `[train]` table.
    #[serde(skip)]
    pub seed: u64,
    #[serde(skip)]
    pub ablation: Ablation,
}

impl Default for TrainPlan {
    fn default() -> Self {
        Self {
            stage1: StagePlan::default(),
            stage2: StagePlan::default(),
            stage3: StagePlan::default(),
            buckets: 3,
            lambda: 1e-4,
            batch_size: 8,
            loss_mode: LossMode::Staged,
            adam: AdamConfig::default(),
            seed: 0,
            ablation: Ablation::default(),
        }
    }
}

impl TrainPlan {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("train.batch_size must be positive".into()));
        }
        if self.buckets == 0 {
            return Err(Error::Config("train.buckets must be positive".into()));
        }
        if !(self.lambda >= 0.0) {
            return Err(Error::Config(format!("train.lambda must be >= 0, got {}", self.lambda)));
        }
        for (i, s) in [self.stage1, self.stage2, self.stage3].iter().enumerate() {
            if !(s.lr > 0.0 && s.lr.is_finite()) {
                return Err(Error::Config(format!("train.stage{}.lr must be positive", i + 1)));
            }
        }
        Ok(())
    }

    pub fn effective_buckets(&self) -> usize {
        if self.ablation.no_curriculum {
            1
        } else {
            self.buckets
        }
    }

    /// The stages that will run, in order. Zero-epoch stages are dropped.
    pub fn stages(&self) -> Vec<CurriculumStage> {
        let b = self.effective_buckets();
        let mem = |g: GroupSet| {
            if self.ablation.no_memory {
                g
            } else {
                g.with(ParamGroup::Memory)
            }
        };
        let staged = self.loss_mode == LossMode::Staged;
        let all = LossTerms {
            consistency: true,
            task: true,
            finetune: true,
        };
        let mut out = vec![
            CurriculumStage {
                index: 1,
                groups: GroupSet::of(&[ParamGroup::Adapter]),
                terms: if staged {
                    LossTerms {
                        consistency: true,
                        task: true,
                        finetune: false,
                    }
                } else {
                    all
                },
                buckets_included: crate::train::buckets_for_stage(b, 1),
                epochs: self.stage1.epochs,
                lr: self.stage1.lr,
            },
            CurriculumStage {
                index: 2,
                groups: mem(GroupSet::of(&[ParamGroup::Adapter])),
                terms: if staged {
                    LossTerms {
                        task: true,
                        ..LossTerms::default()
                    }
                } else {
                    all
                },
                buckets_included: crate::train::buckets_for_stage(b, 2),
                epochs: self.stage2.epochs,
                lr: self.stage2.lr,
            },
        ];
        if !self.ablation.no_lora {
            out.push(CurriculumStage {
                index: 3,
                groups: mem(GroupSet::of(&[ParamGroup::Lora])),
                terms: if staged {
                    LossTerms {
                        finetune: true,
                        ..LossTerms::default()
                    }
                } else {
                    all
                },
                buckets_included: crate::train::buckets_for_stage(b, 3),
                epochs: self.stage3.epochs,
                lr: self.stage3.lr,
            });
        }
        out.retain(|s| s.epochs > 0);
        out
    }
}
