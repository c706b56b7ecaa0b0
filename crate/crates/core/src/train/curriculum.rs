use crate::autograd::SeededRng;
use crate::error::{Error, Result};

/// Indices sorted by difficulty (stable) and cut into `b` contiguous buckets,
/// bucket `i` holding sorted positions `[i·n/b, (i+1)·n/b)`.
pub fn curriculum_buckets(difficulty: &[f64], b: usize) -> Result<Vec<Vec<usize>>> {
    let n = difficulty.len();
    if b == 0 {
        return Err(Error::invalid("schedule_curriculum", "bucket count must be positive"));
    }
    if b > n {
        return Err(Error::invalid(
            "schedule_curriculum",
            format!("{b} buckets for a corpus of {n} records"),
        ));
    }
    if let Some(i) = difficulty.iter().position(|d| !d.is_finite()) {
        return Err(Error::invalid("schedule_curriculum", format!("record {i} has a non-finite difficulty")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| difficulty[i].total_cmp(&difficulty[j]));
    Ok((0..b).map(|k| order[k * n / b..(k + 1) * n / b].to_vec()).collect())
}

/// Buckets available to `stage` (1-based): the first `min(stage·⌈b/3⌉, b)`.
pub fn buckets_for_stage(b: usize, stage: usize) -> usize {
    (stage * b.div_ceil(3)).min(b)
}

/// The cumulative pool for `stage`, easiest first, not shuffled.
pub fn stage_pool(difficulty: &[f64], b: usize, stage: usize) -> Result<Vec<usize>> {
    if stage == 0 {
        return Err(Error::invalid("schedule_curriculum", "stages are numbered from 1"));
    }
    let buckets = curriculum_buckets(difficulty, b)?;
    Ok(buckets[..buckets_for_stage(b, stage)].concat())
}

/// One epoch's example order for `stage`: the cumulative pool shuffled with `rng`.
pub fn schedule_curriculum(difficulty: &[f64], b: usize, stage: usize, rng: &mut SeededRng) -> Result<Vec<usize>> {
    let mut pool = stage_pool(difficulty, b, stage)?;
    rng.shuffle(&mut pool);
    Ok(pool)
}
