use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use std::path::PathBuf;

use super::{DatasetManifest, FeatureBag, ManifestEntry, Split};
use crate::error::{KatError, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct SplitAssignment {
    /// Split of each bag, index-aligned with the input labels.
    pub splits: Vec<Split>,
    /// Classes that could not be represented in every split.
    pub warnings: Vec<String>,
}

impl SplitAssignment {
    pub fn count(&self, split: Split) -> usize {
        self.splits.iter().filter(|&&s| s == split).count()
    }
}

/// Largest-remainder apportionment of `n` items over `weights` (already
/// normalized); ties in the remainder go to the earlier split.
fn apportion(n: usize, weights: &[f64; 3]) -> [usize; 3] {
    let quotas: Vec<f64> = weights.iter().map(|w| w * n as f64).collect();
    let mut counts = [0usize; 3];
    for (c, q) in counts.iter_mut().zip(&quotas) {
        *c = q.floor() as usize;
    }
    let mut left = n - counts.iter().sum::<usize>();
    let mut order: Vec<usize> = (0..3).collect();
    order.sort_by(|&a, &b| {
        let ra = quotas[a] - quotas[a].floor();
        let rb = quotas[b] - quotas[b].floor();
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    for &i in order.iter().cycle() {
        if left == 0 {
            break;
        }
        if weights[i] > 0.0 {
            counts[i] += 1;
            left -= 1;
        }
    }
    counts
}

/// Stratified train/val/test split with per-class largest-remainder
/// apportionment after a seeded shuffle.
pub fn split(labels: &[usize], ratios: [f64; 3], seed: u64) -> Result<SplitAssignment> {
    if ratios.iter().any(|r| *r < 0.0 || !r.is_finite()) || ratios.iter().sum::<f64>() <= 0.0 {
        return Err(KatError::param(format!("invalid split ratios {ratios:?}")));
    }
    let total: f64 = ratios.iter().sum();
    let weights = ratios.map(|r| r / total);
    let n_classes = labels.iter().max().map_or(0, |m| m + 1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut splits = vec![Split::Train; labels.len()];
    let mut warnings = Vec::new();
    for class in 0..n_classes {
        let mut members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        if members.is_empty() {
            continue;
        }
        members.shuffle(&mut rng);
        let counts = apportion(members.len(), &weights);
        let mut it = members.into_iter();
        for (split, &c) in Split::ALL.iter().zip(&counts) {
            if c == 0 && weights[*split as usize] > 0.0 {
                warnings.push(format!("class {class} has no bags in the {split} split"));
            }
            for i in it.by_ref().take(c) {
                splits[i] = *split;
            }
        }
    }
    Ok(SplitAssignment { splits, warnings })
}

/// Splits `bags` and lists them in a manifest; `path_of` names each bag's
/// file. Returns the manifest and any split warnings.
pub fn split_manifest(
    bags: &[FeatureBag],
    n_classes: usize,
    ratios: [f64; 3],
    seed: u64,
    path_of: impl Fn(&FeatureBag) -> PathBuf,
) -> Result<(DatasetManifest, Vec<String>)> {
    let first = bags.first().ok_or_else(|| KatError::Data("no bags to split".into()))?;
    if let Some(b) = bags.iter().find(|b| b.d_f() != first.d_f() || b.label >= n_classes) {
        return Err(KatError::Data(format!(
            "bag {} does not fit {n_classes} classes of width {}",
            b.id,
            first.d_f()
        )));
    }
    let labels: Vec<usize> = bags.iter().map(|b| b.label).collect();
    let assignment = split(&labels, ratios, seed)?;
    let entries = bags
        .iter()
        .zip(&assignment.splits)
        .map(|(b, &split)| ManifestEntry {
            path: path_of(b),
            split,
            label: b.label,
        })
        .collect();
    let manifest = DatasetManifest {
        n_classes,
        d_f: first.d_f(),
        entries,
    };
    Ok((manifest, assignment.warnings))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn hundred_bags_six_one_three() {
        let labels: Vec<usize> = (0..100).map(|i| i % 2).collect();
        let s = split(&labels, [6.0, 1.0, 3.0], 3).unwrap();
        assert_eq!(
            (s.count(Split::Train), s.count(Split::Val), s.count(Split::Test)),
            (60, 10, 30)
        );
        assert!(s.warnings.is_empty());
    }

    #[test]
    fn all_train() {
        let labels = vec![0, 1, 2, 0, 1];
        let s = split(&labels, [1.0, 0.0, 0.0], 1).unwrap();
        assert!(s.splits.iter().all(|&x| x == Split::Train));
        assert!(s.warnings.is_empty());
    }

    #[test]
    fn per_class_proportions_within_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        for seed in 0..50 {
            let n = rng.random_range(10..200);
            let c = rng.random_range(2..5);
            let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..c)).collect();
            let s = split(&labels, [6.0, 1.0, 3.0], seed).unwrap();
            for class in 0..c {
                let idx: Vec<usize> = (0..n).filter(|&i| labels[i] == class).collect();
                for (k, split) in Split::ALL.iter().enumerate() {
                    let got = idx.iter().filter(|&&i| s.splits[i] == *split).count() as f64;
                    let want = idx.len() as f64 * [0.6, 0.1, 0.3][k];
                    assert!((got - want).abs() <= 1.0, "class {class} {split}: {got} vs {want}");
                }
            }
        }
    }

    #[test]
    fn tiny_class_reports_missing_split() {
        let labels = vec![0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 1];
        let s = split(&labels, [6.0, 1.0, 3.0], 0).unwrap();
        assert!(!s.warnings.is_empty());
        assert_eq!(s.splits.len(), labels.len());
    }

    #[test]
    fn manifest_partitions_the_bags() {
        let bags = crate::bag_io::synth_dataset(&crate::bag_io::SynthConfig {
            n_bags: 20,
            d_f: 3,
            side_min: 4,
            side_max: 5,
            ..Default::default()
        })
        .unwrap();
        let (m, warnings) = split_manifest(&bags, 2, [6.0, 1.0, 3.0], 1, |b| PathBuf::from(&b.id)).unwrap();
        assert!(warnings.is_empty());
        assert_eq!(m.entries.len(), 20);
        assert_eq!(
            (m.count(Split::Train), m.count(Split::Val), m.count(Split::Test)),
            (12, 2, 6)
        );
        assert_eq!(m.d_f, 3);
    }

    #[test]
    fn bad_ratios() {
        assert!(split(&[0, 1], [0.0, 0.0, 0.0], 0).is_err());
        assert!(split(&[0, 1], [-1.0, 1.0, 1.0], 0).is_err());
    }
}
