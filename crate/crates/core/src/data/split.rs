use std::collections::{BTreeSet, HashMap};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::Dataset;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Splits {
    pub train: Dataset,
    pub validation: Dataset,
    pub test: Dataset,
}

/// Group counts per partition: floor of each share, then the remainder to the
/// largest fractional parts, then at least one group each.
fn allocate(groups: usize, ratios: [f64; 3]) -> [usize; 3] {
    let exact: Vec<f64> = ratios.iter().map(|r| r * groups as f64).collect();
    let mut counts = [0usize; 3];
    for i in 0..3 {
        // guard against 0.6 * 10 landing just below 6
        counts[i] = (exact[i] + 1e-9).floor() as usize;
    }
    let mut left = groups.saturating_sub(counts.iter().sum());
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| {
        let fa = exact[a] - counts[a] as f64;
        let fb = exact[b] - counts[b] as f64;
        fb.total_cmp(&fa).then(a.cmp(&b))
    });
    for &i in order.iter().cycle() {
        if left == 0 {
            break;
        }
        counts[i] += 1;
        left -= 1;
    }
    for i in 0..3 {
        if counts[i] == 0 {
            let donor = (0..3).max_by_key(|&j| (counts[j], std::cmp::Reverse(j))).expect("three splits");
            counts[donor] -= 1;
            counts[i] += 1;
        }
    }
    counts
}

/// Partitions by `group_id` so that no group lands in two splits.
pub fn split(data: &Dataset, ratios: [f64; 3], seed: u64) -> Result<Splits> {
    if ratios.iter().any(|r| r.is_nan() || *r <= 0.0) || (ratios.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::invalid(format!("split ratios must be positive and sum to 1, got {ratios:?}")));
    }
    let mut groups: Vec<&str> = data
        .samples
        .iter()
        .map(|s| s.group_id.as_str())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    if groups.len() < 3 {
        return Err(Error::data(format!("{} groups cannot fill three splits", groups.len())));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    groups.shuffle(&mut rng);
    let counts = allocate(groups.len(), ratios);
    let mut part: HashMap<&str, usize> = HashMap::new();
    let mut start = 0;
    for (k, &c) in counts.iter().enumerate() {
        for g in &groups[start..start + c] {
            part.insert(g, k);
        }
        start += c;
    }
    let mut buckets = [Vec::new(), Vec::new(), Vec::new()];
    for s in &data.samples {
        buckets[part[s.group_id.as_str()]].push(s.clone());
    }
    let [train, validation, test] = buckets;
    Ok(Splits {
        train: data.subset(train),
        validation: data.subset(validation),
        test: data.subset(test),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{DatasetManifest, Features, Label, LabelKind, ModalityKind, ModalitySpec, Sample, FORMAT_VERSION};
    use proptest::prelude::*;

    fn data(groups: &[usize]) -> Dataset {
        let manifest = DatasetManifest {
            format_version: FORMAT_VERSION,
            label_kind: LabelKind::Regression,
            class_count: 0,
            sample_count: 0,
            modalities: vec![ModalitySpec {
                name: "a".into(),
                kind: ModalityKind::Vector,
                width: 1,
            }],
        };
        let samples = groups
            .iter()
            .enumerate()
            .map(|(i, g)| Sample {
                id: format!("s{i}"),
                group_id: format!("g{g}"),
                modalities: vec![Features::Vector(vec![i as f64])],
                label: Label::Value(0.0),
            })
            .collect();
        Dataset::new(manifest, samples).unwrap()
    }

    fn group_set(d: &Dataset) -> BTreeSet<String> {
        d.samples.iter().map(|s| s.group_id.clone()).collect()
    }

    #[test]
    fn singleton_groups_split_by_ratio() {
        let d = data(&(0..100).collect::<Vec<_>>());
        let s = split(&d, [0.7, 0.15, 0.15], 1).unwrap();
        assert_eq!((s.train.len(), s.validation.len(), s.test.len()), (70, 15, 15));
    }

    #[test]
    fn ten_groups_six_two_two() {
        let groups: Vec<usize> = (0..50).map(|i| i % 10).collect();
        let d = data(&groups);
        let s = split(&d, [0.6, 0.2, 0.2], 4).unwrap();
        assert_eq!(group_set(&s.train).len(), 6);
        assert_eq!(group_set(&s.validation).len(), 2);
        assert_eq!(group_set(&s.test).len(), 2);
        assert_eq!(s.train.len() + s.validation.len() + s.test.len(), 50);
    }

    #[test]
    fn too_few_groups_is_data_error() {
        let d = data(&[0, 0, 1, 1]);
        assert!(matches!(split(&d, [0.6, 0.2, 0.2], 0), Err(Error::Data(_))));
    }

    #[test]
    fn bad_ratios_rejected() {
        let d = data(&[0, 1, 2, 3]);
        assert!(split(&d, [0.5, 0.5, 0.5], 0).is_err());
        assert!(split(&d, [1.0, 0.0, 0.0], 0).is_err());
    }

    #[test]
    fn deterministic_in_seed() {
        let d = data(&(0..40).map(|i| i % 13).collect::<Vec<_>>());
        assert_eq!(split(&d, [0.5, 0.25, 0.25], 8).unwrap(), split(&d, [0.5, 0.25, 0.25], 8).unwrap());
    }

    proptest! {
        #[test]
        fn groups_never_span_splits(
            groups in prop::collection::vec(0usize..15, 3..120),
            seed in 0u64..1000,
            a in 0.1f64..0.8,
        ) {
            prop_assume!(groups.iter().collect::<BTreeSet<_>>().len() >= 3);
            let d = data(&groups);
            let rest = (1.0 - a) / 2.0;
            let s = split(&d, [a, rest, 1.0 - a - rest], seed).unwrap();
            let (tr, va, te) = (group_set(&s.train), group_set(&s.validation), group_set(&s.test));
            prop_assert!(tr.is_disjoint(&va) && tr.is_disjoint(&te) && va.is_disjoint(&te));
            prop_assert!(!tr.is_empty() && !va.is_empty() && !te.is_empty());
            prop_assert_eq!(s.train.len() + s.validation.len() + s.test.len(), d.len());
        }
    }
}
