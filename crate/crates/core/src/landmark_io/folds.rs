use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::DatasetManifest;
use crate::error::{Error, Result};

/// One cross-validation test fold.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Fold {
    pub index: usize,
    pub subjects: BTreeSet<String>,
    pub video_ids: BTreeSet<String>,
}

impl Fold {
    pub fn contains(&self, video_id: &str) -> bool {
        self.video_ids.contains(video_id)
    }
}

/// Shuffles the distinct subjects with `seed`, splits them into `k` groups
/// whose sizes differ by at most one, and assigns every video to its
/// subject's group.
pub fn make_folds(manifest: &DatasetManifest, k: usize, seed: u64) -> Result<Vec<Fold>> {
    let mut subjects: Vec<&str> = manifest.subjects().into_iter().collect();
    if k == 0 || subjects.len() < k {
        return Err(Error::TooFewSubjects {
            subjects: subjects.len(),
            folds: k,
        });
    }
    subjects.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let base = subjects.len() / k;
    let extra = subjects.len() % k;
    let mut fold_of = BTreeMap::new();
    let mut folds = Vec::with_capacity(k);
    let mut it = subjects.into_iter();
    for index in 0..k {
        let size = base + usize::from(index < extra);
        let group: BTreeSet<String> = it.by_ref().take(size).map(str::to_string).collect();
        for s in &group {
            fold_of.insert(s.clone(), index);
        }
        folds.push(Fold {
            index,
            subjects: group,
            video_ids: BTreeSet::new(),
        });
    }
    for v in &manifest.videos {
        folds[fold_of[&v.subject]].video_ids.insert(v.id.clone());
    }
    Ok(folds)
}
