use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;

use crate::engine::SeededRng;
use crate::error::{Result, SddsError};

/// Anything with per-sample `(part id, label)` keys that can be subset.
pub trait LabeledSet: Sized {
    fn keys(&self) -> Vec<(u32, u8)>;
    fn select(&self, indices: &[usize]) -> Self;
}

/// Undersamples the majority side of the defective (label > 0) vs
/// non-defective axis to the minority count. Kept samples stay in input order.
pub fn balance_undersample<S: LabeledSet>(set: &S, seed: u64) -> Result<S> {
    let keys = set.keys();
    let (defective, ok): (Vec<usize>, Vec<usize>) = (0..keys.len()).partition(|&i| keys[i].1 > 0);
    if defective.is_empty() {
        return Err(SddsError::EmptyClass { class: "defective".into() });
    }
    if ok.is_empty() {
        return Err(SddsError::EmptyClass { class: "non-defective".into() });
    }
    let (minority, mut majority) = if defective.len() <= ok.len() { (defective, ok) } else { (ok, defective) };
    let mut rng = SeededRng::seed_from_u64(seed);
    majority.shuffle(&mut rng);
    majority.truncate(minority.len());
    let mut kept: Vec<usize> = minority.into_iter().chain(majority).collect();
    kept.sort_unstable();
    Ok(set.select(&kept))
}

/// Number of parts per split: floor of each share, remainders by largest
/// fraction, and at least one part per split.
fn split_counts(parts: usize, ratios: [f64; 3]) -> [usize; 3] {
    let raw = ratios.map(|r| r * parts as f64);
    let mut counts = raw.map(|v| v.floor() as usize);
    let mut order = [0, 1, 2];
    order.sort_by(|&a, &b| (raw[b] - raw[b].floor()).total_cmp(&(raw[a] - raw[a].floor())).then(a.cmp(&b)));
    let mut left = parts - counts.iter().sum::<usize>();
    for &i in order.iter().cycle() {
        if left == 0 {
            break;
        }
        counts[i] += 1;
        left -= 1;
    }
    for i in 0..3 {
        while counts[i] == 0 {
            let donor = (0..3).max_by_key(|&j| counts[j]).expect("three splits");
            counts[donor] -= 1;
            counts[i] += 1;
        }
    }
    counts
}

/// Partitions by part id into train/validation/test so that overlapping
/// segments of one part never straddle splits.
pub fn split_by_part<S: LabeledSet>(set: &S, ratios: [f64; 3], seed: u64) -> Result<[S; 3]> {
    if ratios.iter().any(|&r| !(r > 0.0)) || (ratios.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(SddsError::Config(format!("split ratios {ratios:?} must be positive and sum to 1")));
    }
    let keys = set.keys();
    let parts: BTreeSet<u32> = keys.iter().map(|k| k.0).collect();
    if parts.len() < 3 {
        return Err(SddsError::Config(format!("{} parts cannot fill 3 splits", parts.len())));
    }
    let mut parts: Vec<u32> = parts.into_iter().collect();
    parts.shuffle(&mut SeededRng::seed_from_u64(seed));
    let counts = split_counts(parts.len(), ratios);
    let mut assignment = BTreeMap::new();
    let mut offset = 0;
    for (split, &n) in counts.iter().enumerate() {
        for &p in &parts[offset..offset + n] {
            assignment.insert(p, split);
        }
        offset += n;
    }
    let mut indices: [Vec<usize>; 3] = Default::default();
    for (i, (part, _)) in keys.iter().enumerate() {
        indices[assignment[part]].push(i);
    }
    Ok(indices.map(|idx| set.select(&idx)))
}
