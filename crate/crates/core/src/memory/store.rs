use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MemoryConfig {
    /// STM capacity K.
    pub stm_capacity: usize,
    /// Promotion threshold θ on access count.
    pub ltm_threshold: u64,
    pub ltm_capacity: usize,
}

impl Default for MemoryConfig {
    fn default() -> Self {
        Self {
            stm_capacity: 8,
            ltm_threshold: 2,
            ltm_capacity: 64,
        }
    }
}

impl MemoryConfig {
    pub fn validate(&self) -> Result<()> {
        if self.stm_capacity == 0 || self.ltm_capacity == 0 {
            return Err(Error::Config("memory capacities must be positive".into()));
        }
        if self.ltm_threshold == 0 {
            return Err(Error::Config("ltm_threshold must be at least 1".into()));
        }
        Ok(())
    }
}

/// One embedded dialogue round.
#[derive(Clone, Debug, PartialEq)]
pub struct MemoryItem<S> {
    pub id: String,
    pub text: String,
    pub key: Vec<S>,
    pub value: Vec<S>,
    pub access_count: u64,
    /// Store-local clock value; unique within the store that holds the item.
    pub insert_time: u64,
}

impl<S: Scalar> MemoryItem<S> {
    /// Item whose key and value are the same vector.
    pub fn new(id: impl Into<String>, text: impl Into<String>, embedding: Vec<S>) -> Self {
        Self {
            id: id.into(),
            text: text.into(),
            key: embedding.clone(),
            value: embedding,
            access_count: 0,
            insert_time: 0,
        }
    }

    pub fn width(&self) -> usize {
        self.key.len()
    }
}

/// Read access shared by both stores; items are ordered by `insert_time`.
pub trait MemoryStore<S> {
    fn items(&self) -> &[MemoryItem<S>];

    fn len(&self) -> usize {
        self.items().len()
    }

    fn is_empty(&self) -> bool {
        self.items().is_empty()
    }

    fn contains_id(&self, id: &str) -> bool {
        self.items().iter().any(|it| it.id == id)
    }
}

/// Capacity-K first-in first-out store.
#[derive(Clone, Debug, PartialEq)]
pub struct ShortTermMemory<S> {
    capacity: usize,
    items: Vec<MemoryItem<S>>,
    clock: u64,
}

impl<S: Scalar> ShortTermMemory<S> {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "STM capacity must be positive");
        Self {
            capacity,
            items: Vec::with_capacity(capacity + 1),
            clock: 0,
        }
    }

    pub fn from_parts(capacity: usize, items: Vec<MemoryItem<S>>, clock: u64) -> Result<Self> {
        if items.len() > capacity || items.windows(2).any(|w| w[0].insert_time >= w[1].insert_time)
        {
            return Err(Error::Checkpoint("inconsistent short-term memory state".into()));
        }
        Ok(Self {
            capacity,
            items,
            clock,
        })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn clock(&self) -> u64 {
        self.clock
    }

    /// Appends with the next clock value; returns the evicted oldest item when over capacity.
    pub fn insert(&mut self, mut item: MemoryItem<S>) -> Option<MemoryItem<S>> {
        item.insert_time = self.clock;
        self.clock += 1;
        self.items.push(item);
        if self.items.len() > self.capacity {
            Some(self.items.remove(0))
        } else {
            None
        }
    }

    pub(crate) fn items_mut(&mut self) -> &mut [MemoryItem<S>] {
        &mut self.items
    }
}

impl<S> MemoryStore<S> for ShortTermMemory<S> {
    fn items(&self) -> &[MemoryItem<S>] {
        &self.items
    }
}

/// Frequency-admitted store with least-access-count eviction.
#[derive(Clone, Debug, PartialEq)]
pub struct LongTermMemory<S> {
    threshold: u64,
    capacity: usize,
    items: Vec<MemoryItem<S>>,
    clock: u64,
}

/// Outcome of offering an item to the long-term store.
#[derive(Clone, Debug, PartialEq)]
pub enum Admission<S> {
    Admitted { evicted: Option<MemoryItem<S>> },
    /// The candidate itself had the lowest access count.
    Rejected,
    AlreadyPresent,
    BelowThreshold,
}

impl<S: Scalar> LongTermMemory<S> {
    pub fn new(threshold: u64, capacity: usize) -> Self {
        assert!(capacity > 0, "LTM capacity must be positive");
        Self {
            threshold,
            capacity,
            items: Vec::new(),
            clock: 0,
        }
    }

    pub fn from_parts(
        threshold: u64,
        capacity: usize,
        items: Vec<MemoryItem<S>>,
        clock: u64,
    ) -> Result<Self> {
        if items.len() > capacity || items.windows(2).any(|w| w[0].insert_time >= w[1].insert_time)
        {
            return Err(Error::Checkpoint("inconsistent long-term memory state".into()));
        }
        Ok(Self {
            threshold,
            capacity,
            items,
            clock,
        })
    }

    pub fn threshold(&self) -> u64 {
        self.threshold
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn clock(&self) -> u64 {
        self.clock
    }

    /// Copies `item` in if its access count reaches the threshold.
    ///
    /// When full, the lowest access count among residents and the candidate
    /// loses (ties go to the oldest resident, the candidate being newest).
    pub fn admit(&mut self, item: &MemoryItem<S>) -> Admission<S> {
        if item.access_count < self.threshold {
            return Admission::BelowThreshold;
        }
        if self.contains_id(&item.id) {
            return Admission::AlreadyPresent;
        }
        let mut evicted = None;
        if self.items.len() >= self.capacity {
            let victim = self
                .items
                .iter()
                .enumerate()
                .min_by_key(|(_, it)| (it.access_count, it.insert_time))
                .map(|(i, _)| i)
                .expect("full store is nonempty");
            if item.access_count < self.items[victim].access_count {
                return Admission::Rejected;
            }
            evicted = Some(self.items.remove(victim));
        }
        let mut copy = item.clone();
        copy.insert_time = self.clock;
        self.clock += 1;
        self.items.push(copy);
        Admission::Admitted { evicted }
    }

    pub(crate) fn items_mut(&mut self) -> &mut [MemoryItem<S>] {
        &mut self.items
    }
}

impl<S> MemoryStore<S> for LongTermMemory<S> {
    fn items(&self) -> &[MemoryItem<S>] {
        &self.items
    }
}
