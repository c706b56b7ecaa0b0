//! Parameter groups and trainable-parameter accounting.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::model::config::ModelConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ParamGroup {
    Embedding,
    Attention,
    FeedForward,
    LayerNorm,
    Head,
    Adapter,
    Lora,
    Memory,
}

impl ParamGroup {
    pub const ALL: [ParamGroup; 8] = [
        ParamGroup::Embedding,
        ParamGroup::Attention,
        ParamGroup::FeedForward,
        ParamGroup::LayerNorm,
        ParamGroup::Head,
        ParamGroup::Adapter,
        ParamGroup::Lora,
        ParamGroup::Memory,
    ];

    pub fn is_base(self) -> bool {
        !matches!(self, ParamGroup::Adapter | ParamGroup::Lora | ParamGroup::Memory)
    }

    pub fn name(self) -> &'static str {
        match self {
            ParamGroup::Embedding => "embedding",
            ParamGroup::Attention => "attention",
            ParamGroup::FeedForward => "feed_forward",
            ParamGroup::LayerNorm => "layer_norm",
            ParamGroup::Head => "head",
            ParamGroup::Adapter => "adapter",
            ParamGroup::Lora => "lora",
            ParamGroup::Memory => "memory",
        }
    }
}

impl fmt::Display for ParamGroup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Small bitset over [`ParamGroup`].
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub struct GroupSet(u16);

impl GroupSet {
    pub const EMPTY: GroupSet = GroupSet(0);

    pub fn of(groups: &[ParamGroup]) -> Self {
        groups.iter().fold(Self::EMPTY, |s, &g| s.with(g))
    }

    pub fn base() -> Self {
        Self::of(&ParamGroup::ALL[..5])
    }

    pub fn all() -> Self {
        Self::of(&ParamGroup::ALL)
    }

    pub fn with(self, g: ParamGroup) -> Self {
        GroupSet(self.0 | 1 << g as u16)
    }

    pub fn without(self, g: ParamGroup) -> Self {
        GroupSet(self.0 & !(1 << g as u16))
    }

    pub fn contains(self, g: ParamGroup) -> bool {
        self.0 & (1 << g as u16) != 0
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn iter(self) -> impl Iterator<Item = ParamGroup> {
        ParamGroup::ALL.into_iter().filter(move |&g| self.contains(g))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CountMode {
    Full,
    AdapterOnly,
    LoraOnly,
    Icft,
}

impl CountMode {
    pub const ALL: [CountMode; 4] = [
        CountMode::Full,
        CountMode::AdapterOnly,
        CountMode::LoraOnly,
        CountMode::Icft,
    ];

    pub fn name(self) -> &'static str {
        match self {
            CountMode::Full => "full",
            CountMode::AdapterOnly => "adapter-only",
            CountMode::LoraOnly => "lora-only",
            CountMode::Icft => "icft",
        }
    }

    /// Groups whose buffers exist in this mode.
    pub fn present(self) -> GroupSet {
        let base = GroupSet::base();
        match self {
            CountMode::Full => base,
            CountMode::AdapterOnly => base.with(ParamGroup::Adapter),
            CountMode::LoraOnly => base.with(ParamGroup::Lora),
            CountMode::Icft => base.with(ParamGroup::Adapter).with(ParamGroup::Lora),
        }
    }

    pub fn trainable(self) -> GroupSet {
        match self {
            CountMode::Full => GroupSet::base(),
            CountMode::AdapterOnly => GroupSet::of(&[ParamGroup::Adapter]),
            CountMode::LoraOnly => GroupSet::of(&[ParamGroup::Lora]),
            CountMode::Icft => GroupSet::of(&[ParamGroup::Adapter, ParamGroup::Lora]),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GroupCount {
    pub group: ParamGroup,
    pub params: usize,
    pub trainable: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ParamCountReport {
    pub mode: CountMode,
    pub total_params: usize,
    pub trainable_params: usize,
    pub relative_size_percent: f64,
    pub groups: Vec<GroupCount>,
}

impl ParamCountReport {
    /// Builds a report from per-group counts; groups absent in `mode` are dropped.
    pub fn from_groups(mode: CountMode, counts: &[(ParamGroup, usize)]) -> Self {
        let present = mode.present();
        let trainable_set = mode.trainable();
        let mut groups: Vec<GroupCount> = Vec::new();
        for &(group, n) in counts {
            if !present.contains(group) {
                continue;
            }
            match groups.iter_mut().find(|g| g.group == group) {
                Some(g) => g.params += n,
                None => groups.push(GroupCount {
                    group,
                    params: n,
                    trainable: trainable_set.contains(group),
                }),
            }
        }
        groups.sort_by_key(|g| g.group);
        let total_params = groups.iter().map(|g| g.params).sum();
        let trainable_params = groups.iter().filter(|g| g.trainable).map(|g| g.params).sum();
        let relative_size_percent = if total_params == 0 {
            0.0
        } else {
            100.0 * trainable_params as f64 / total_params as f64
        };
        Self {
            mode,
            total_params,
            trainable_params,
            relative_size_percent,
            groups,
        }
    }
}

/// Closed-form parameter counts, without allocating a model.
pub fn count_params(cfg: &ModelConfig, mode: CountMode) -> ParamCountReport {
    let d = cfg.d_model;
    let v = cfg.vocab_size;
    let f = cfg.ffn_width();
    let l = cfg.n_layers;
    let lora_per_square = 2 * d * cfg.lora_rank;
    let lora_head = if cfg.lora_on_head { cfg.lora_rank * (d + v) } else { 0 };
    let counts = [
        (ParamGroup::Embedding, v * d + cfg.ctx_len * d),
        (ParamGroup::Attention, l * 4 * d * d),
        (ParamGroup::FeedForward, l * (d * f + f + f * d + d)),
        (ParamGroup::LayerNorm, l * 4 * d + 2 * d),
        (ParamGroup::Head, d * v),
        (ParamGroup::Adapter, l * 2 * d * cfg.adapter_rank),
        (ParamGroup::Lora, l * 2 * lora_per_square + lora_head),
    ];
    ParamCountReport::from_groups(mode, &counts)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn group_set_basics() {
        let s = GroupSet::of(&[ParamGroup::Adapter, ParamGroup::Lora]);
        assert!(s.contains(ParamGroup::Adapter));
        assert!(!s.contains(ParamGroup::Memory));
        assert_eq!(s.iter().count(), 2);
        assert!(GroupSet::base().iter().all(ParamGroup::is_base));
        assert!(s.without(ParamGroup::Adapter).without(ParamGroup::Lora).is_empty());
    }

    #[test]
    fn full_mode_is_one_hundred_percent() {
        let cfg = ModelConfig {
            vocab_size: 50,
            ..ModelConfig::default()
        };
        let r = count_params(&cfg, CountMode::Full);
        assert_eq!(r.trainable_params, r.total_params);
        assert_eq!(r.relative_size_percent, 100.0);
    }

    #[test]
    fn relative_size_matches_ratio() {
        let cfg = ModelConfig {
            vocab_size: 50,
            ..ModelConfig::default()
        };
        for mode in CountMode::ALL {
            let r = count_params(&cfg, mode);
            assert!(r.trainable_params <= r.total_params);
            let want = 100.0 * r.trainable_params as f64 / r.total_params as f64;
            assert!((r.relative_size_percent - want).abs() <= 1e-9);
        }
    }
}
