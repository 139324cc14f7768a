use rand::seq::SliceRandom;

use super::{EcgDataset, Split};
use crate::error::{Error, Result};
use crate::seed::rng_for;

/// Assigns train/val/test per class in proportion to `fractions`.
///
/// Counts use cumulative rounding, so each split is within one record of its
/// target for every class. A class with fewer records than non-empty splits
/// goes entirely to train with a warning.
pub fn stratified_split(dataset: &EcgDataset, fractions: [f64; 3], seed: u64) -> Result<EcgDataset> {
    if fractions.iter().any(|f| !(0.0..=1.0).contains(f)) || (fractions.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::invalid(format!(
            "split fractions {fractions:?} must be in [0,1] and sum to 1"
        )));
    }
    let wanted = fractions.iter().filter(|&&f| f > 0.0).count();
    let mut out = dataset.clone();
    let mut rng = rng_for(seed, "split");
    for class in 0..dataset.n_classes() {
        let mut members: Vec<usize> = (0..dataset.len())
            .filter(|&i| dataset.records[i].label == class)
            .collect();
        if members.is_empty() {
            continue;
        }
        members.shuffle(&mut rng);
        let n = members.len();
        if n < wanted {
            log::warn!(
                "class {} has {n} records for {wanted} splits; assigning all to train",
                dataset.class_names[class]
            );
            for &i in &members {
                out.records[i].split = Split::Train;
            }
            continue;
        }
        let n_train = ((fractions[0] * n as f64).round() as usize).min(n);
        let n_train_val = (((fractions[0] + fractions[1]) * n as f64).round() as usize).clamp(n_train, n);
        for (rank, &i) in members.iter().enumerate() {
            out.records[i].split = if rank < n_train {
                Split::Train
            } else if rank < n_train_val {
                Split::Val
            } else {
                Split::Test
            };
        }
    }
    Ok(out)
}
