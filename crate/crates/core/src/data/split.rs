use std::borrow::Borrow;
use std::collections::{BTreeSet, HashMap};

use rand::seq::{IndexedRandom, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::sample::SequenceSample;
use crate::error::{Error, Result};

/// Subject ids dealt into folds.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldSplit {
    pub folds: Vec<Vec<String>>,
}

/// Sample indices of one cross-validation run.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Partition {
    pub test_fold: usize,
    pub val_fold: usize,
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

impl FoldSplit {
    pub fn k(&self) -> usize {
        self.folds.len()
    }

    pub fn fold_of(&self, subject: &str) -> Option<usize> {
        self.folds
            .iter()
            .position(|f| f.iter().any(|s| s == subject))
    }

    /// Run `i`: test fold `i`, validation fold `i + 1 (mod k)`, the rest
    /// train. Indices refer to `samples`.
    pub fn partition<S: Borrow<SequenceSample>>(&self, samples: &[S], i: usize) -> Result<Partition> {
        let k = self.k();
        if k < 2 || i >= k {
            return Err(Error::Data(format!("run {i} needs a fold in 0..{k} and k >= 2")));
        }
        let val_fold = (i + 1) % k;
        let lookup: HashMap<&str, usize> = self
            .folds
            .iter()
            .enumerate()
            .flat_map(|(f, ids)| ids.iter().map(move |s| (s.as_str(), f)))
            .collect();
        let mut p = Partition {
            test_fold: i,
            val_fold,
            train: Vec::new(),
            val: Vec::new(),
            test: Vec::new(),
        };
        for (n, s) in samples.iter().enumerate() {
            let id = s.borrow().subject_id.as_str();
            let f = *lookup
                .get(id)
                .ok_or_else(|| Error::Data(format!("subject {id} is not in the split")))?;
            if f == i {
                p.test.push(n);
            } else if f == val_fold {
                p.val.push(n);
            } else {
                p.train.push(n);
            }
        }
        Ok(p)
    }
}

/// Shuffles the distinct subjects with `seed` and deals them round-robin
/// into `k` folds.
pub fn split_subjects<S: Borrow<SequenceSample>>(samples: &[S], k: usize, seed: u64) -> Result<FoldSplit> {
    let subjects: BTreeSet<&str> = samples
        .iter()
        .map(|s| s.borrow().subject_id.as_str())
        .collect();
    if k == 0 || subjects.len() < k {
        return Err(Error::Data(format!(
            "{} subjects cannot fill {k} folds",
            subjects.len()
        )));
    }
    let mut order: Vec<&str> = subjects.into_iter().collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut folds = vec![Vec::new(); k];
    for (n, s) in order.into_iter().enumerate() {
        folds[n % k].push(s.to_string());
    }
    Ok(FoldSplit { folds })
}

/// Duplicates minority-class items (drawn with replacement) until both
/// classes have equal counts. Originals keep their order and come first.
pub fn upsample_minority<T>(train: &[T], seed: u64) -> Result<Vec<T>>
where
    T: Borrow<SequenceSample> + Clone,
{
    let (zeros, ones): (Vec<&T>, Vec<&T>) = train.iter().partition(|s| Borrow::<SequenceSample>::borrow(*s).label == 0);
    if zeros.is_empty() || ones.is_empty() {
        return Err(Error::Data(format!(
            "upsampling needs both classes, got {} of label 0 and {} of label 1",
            zeros.len(),
            ones.len()
        )));
    }
    let (small, deficit) = if zeros.len() < ones.len() {
        (&zeros, ones.len() - zeros.len())
    } else {
        (&ones, zeros.len() - ones.len())
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = train.to_vec();
    for _ in 0..deficit {
        out.push((*small.choose(&mut rng).expect("non-empty")).clone());
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{class_counts, Series};

    fn stub(subject: usize, label: u8) -> SequenceSample {
        SequenceSample {
            subject_id: format!("S{subject:02}"),
            video_id: "V00".into(),
            segment_id: format!("S{subject:02}-{label}"),
            series: Series::new(10, vec![0.0; 10]).unwrap(),
            metadata: vec![0.0; 4],
            label,
            event: None,
        }
    }

    #[test]
    fn forty_four_subjects_in_five_folds() {
        let samples: Vec<_> = (0..44).map(|i| stub(i, 1)).collect();
        let split = split_subjects(&samples, 5, 3).unwrap();
        let mut sizes: Vec<_> = split.folds.iter().map(Vec::len).collect();
        sizes.sort_unstable();
        assert_eq!(sizes, vec![8, 9, 9, 9, 9]);
        assert_eq!(split, split_subjects(&samples, 5, 3).unwrap());
    }

    #[test]
    fn too_few_subjects() {
        let samples: Vec<_> = (0..4).map(|i| stub(i, 1)).collect();
        assert!(matches!(split_subjects(&samples, 5, 0), Err(Error::Data(_))));
    }

    #[test]
    fn partition_rotation() {
        let samples: Vec<_> = (0..10).map(|i| stub(i, 1)).collect();
        let split = split_subjects(&samples, 5, 0).unwrap();
        let p = split.partition(&samples, 4).unwrap();
        assert_eq!((p.test_fold, p.val_fold), (4, 0));
        assert_eq!((p.test.len(), p.val.len(), p.train.len()), (2, 2, 6));
    }

    #[test]
    fn upsample_ten_and_two() {
        let mut v: Vec<_> = (0..10).map(|i| stub(i, 1)).collect();
        v.extend((0..2).map(|i| stub(i, 0)));
        let up = upsample_minority(&v, 1).unwrap();
        assert_eq!(up.len(), 20);
        assert_eq!(class_counts(&up), [10, 10]);
        assert_eq!(&up[..12], &v[..]);
    }

    #[test]
    fn upsample_balanced_is_identity_and_single_class_fails() {
        let v = vec![stub(0, 0), stub(1, 1)];
        assert_eq!(upsample_minority(&v, 0).unwrap(), v);
        let v = vec![stub(0, 1), stub(1, 1)];
        assert!(matches!(upsample_minority(&v, 0), Err(Error::Data(_))));
    }
}
