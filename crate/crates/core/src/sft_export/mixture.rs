use std::collections::BTreeMap;
use std::path::PathBuf;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{read_jsonl_file, ExportError, SftSample};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MixtureStrategy {
    #[default]
    Mixed,
    Curriculum,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixturePart {
    pub path: PathBuf,
    /// Relative sampling weight for `mixed`; 1 when absent, 0 excludes the part.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weight: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stage: Option<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureSpec {
    #[serde(default)]
    pub strategy: MixtureStrategy,
    pub parts: Vec<MixturePart>,
}

impl MixtureSpec {
    pub fn validate(&self) -> Result<(), ExportError> {
        for (i, p) in self.parts.iter().enumerate() {
            match self.strategy {
                MixtureStrategy::Curriculum if p.stage.is_none() => return Err(ExportError::StageMissing(i)),
                MixtureStrategy::Mixed => {
                    let w = p.weight.unwrap_or(1.0);
                    if !w.is_finite() || w < 0.0 {
                        return Err(ExportError::BadWeight {
                            part: i,
                            message: format!("weight {w} is not a finite non-negative number"),
                        });
                    }
                }
                _ => {}
            }
        }
        Ok(())
    }
}

/// Weighted random order: each item gets key ln(u)/w and items are sorted by
/// descending key, so heavier parts tend to come first.
fn weighted_shuffle<T>(items: Vec<(f64, T)>, rng: &mut ChaCha8Rng) -> Vec<T> {
    let mut keyed: Vec<(f64, usize, T)> = items
        .into_iter()
        .enumerate()
        .map(|(i, (w, item))| {
            let u: f64 = rng.random_range(f64::MIN_POSITIVE..1.0);
            (u.ln() / w, i, item)
        })
        .collect();
    keyed.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    keyed.into_iter().map(|(_, _, item)| item).collect()
}

/// Orders already-loaded parts. `parts[i]` pairs with `spec.parts[i]`.
pub fn mix_parts(spec: &MixtureSpec, parts: Vec<Vec<SftSample>>, seed: u64) -> Result<Vec<SftSample>, ExportError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    match spec.strategy {
        MixtureStrategy::Mixed => {
            let mut items = Vec::new();
            for (p, samples) in spec.parts.iter().zip(parts) {
                let w = p.weight.unwrap_or(1.0);
                if w > 0.0 {
                    items.extend(samples.into_iter().map(|s| (w, s)));
                }
            }
            Ok(weighted_shuffle(items, &mut rng))
        }
        MixtureStrategy::Curriculum => {
            let mut stages: BTreeMap<u32, Vec<(f64, SftSample)>> = BTreeMap::new();
            for (p, samples) in spec.parts.iter().zip(parts) {
                let stage = p.stage.expect("validated");
                stages.entry(stage).or_default().extend(samples.into_iter().map(|s| (1.0, s)));
            }
            Ok(stages
                .into_values()
                .flat_map(|items| weighted_shuffle(items, &mut rng))
                .collect())
        }
    }
}

/// Loads every part's JSONL file and orders the samples.
pub fn build_mixture(spec: &MixtureSpec, seed: u64) -> Result<Vec<SftSample>, ExportError> {
    spec.validate()?;
    let parts = spec
        .parts
        .iter()
        .map(|p| read_jsonl_file(&p.path))
        .collect::<Result<Vec<_>, _>>()?;
    mix_parts(spec, parts, seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sft_export::test_support::sample;
    use crate::sft_export::write_jsonl;
    use proptest::prelude::*;

    fn part(prefix: &str, n: usize) -> Vec<SftSample> {
        (0..n).map(|i| sample(&format!("{prefix}{i}"), &["r"])).collect()
    }

    fn spec(strategy: MixtureStrategy, parts: &[(Option<f64>, Option<u32>)]) -> MixtureSpec {
        MixtureSpec {
            strategy,
            parts: parts
                .iter()
                .enumerate()
                .map(|(i, (weight, stage))| MixturePart {
                    path: format!("p{i}.jsonl").into(),
                    weight: *weight,
                    stage: *stage,
                })
                .collect(),
        }
    }

    fn ids(samples: &[SftSample]) -> Vec<String> {
        samples.iter().map(|s| s.meta.task_id.clone()).collect()
    }

    #[test]
    fn curriculum_orders_stages() {
        let sp = spec(MixtureStrategy::Curriculum, &[(None, Some(2)), (None, Some(1))]);
        let out = mix_parts(&sp, vec![part("late", 5), part("early", 7)], 3).unwrap();
        assert_eq!(out.len(), 12);
        assert!(ids(&out)[..7].iter().all(|id| id.starts_with("early")));
        assert!(ids(&out)[7..].iter().all(|id| id.starts_with("late")));
    }

    #[test]
    fn curriculum_requires_stages() {
        let sp = spec(MixtureStrategy::Curriculum, &[(None, Some(1)), (None, None)]);
        assert!(matches!(mix_parts(&sp, vec![vec![], vec![]], 0), Err(ExportError::StageMissing(1))));
    }

    #[test]
    fn mixed_is_seeded() {
        let sp = spec(MixtureStrategy::Mixed, &[(Some(1.0), None), (Some(1.0), None)]);
        let a = mix_parts(&sp, vec![part("a", 20), part("b", 20)], 9).unwrap();
        let b = mix_parts(&sp, vec![part("a", 20), part("b", 20)], 9).unwrap();
        let c = mix_parts(&sp, vec![part("a", 20), part("b", 20)], 10).unwrap();
        assert_eq!(ids(&a), ids(&b));
        assert_ne!(ids(&a), ids(&c));
        assert_ne!(ids(&a)[..20], ids(&part("a", 20))[..]);
    }

    #[test]
    fn zero_weight_excludes_part() {
        let sp = spec(MixtureStrategy::Mixed, &[(Some(0.0), None), (Some(1.0), None)]);
        let out = mix_parts(&sp, vec![part("a", 4), part("b", 4)], 1).unwrap();
        assert_eq!(out.len(), 4);
        assert!(ids(&out).iter().all(|id| id.starts_with('b')));
        let neg = spec(MixtureStrategy::Mixed, &[(Some(-1.0), None)]);
        assert!(matches!(mix_parts(&neg, vec![vec![]], 1), Err(ExportError::BadWeight { .. })));
    }

    #[test]
    fn heavier_part_leads() {
        let sp = spec(MixtureStrategy::Mixed, &[(Some(1.0), None), (Some(50.0), None)]);
        let out = mix_parts(&sp, vec![part("a", 100), part("b", 100)], 4).unwrap();
        let b_in_first_half = ids(&out)[..100].iter().filter(|id| id.starts_with('b')).count();
        assert!(b_in_first_half > 80, "{b_in_first_half}");
    }

    #[test]
    fn loads_parts_from_files() {
        let dir = tempfile::tempdir().unwrap();
        let mut sp = spec(MixtureStrategy::Curriculum, &[(None, Some(1)), (None, Some(2))]);
        for (i, p) in sp.parts.iter_mut().enumerate() {
            p.path = dir.path().join(format!("p{i}.jsonl"));
            let f = std::fs::File::create(&p.path).unwrap();
            write_jsonl(&part(&format!("s{i}-"), 3), f).unwrap();
        }
        let out = build_mixture(&sp, 0).unwrap();
        assert_eq!(out.len(), 6);
        assert!(ids(&out)[..3].iter().all(|id| id.starts_with("s0-")));
    }

    proptest! {
        #[test]
        fn positive_weights_conserve_samples(
            sizes in proptest::collection::vec((0usize..15, 1u32..5), 1..5),
            curriculum in any::<bool>(),
            seed in any::<u64>(),
        ) {
            let strategy = if curriculum { MixtureStrategy::Curriculum } else { MixtureStrategy::Mixed };
            let cfg: Vec<_> = sizes.iter().map(|(_, w)| (Some(*w as f64), Some(*w))).collect();
            let sp = spec(strategy, &cfg);
            let parts: Vec<_> = sizes.iter().enumerate().map(|(i, (n, _))| part(&format!("p{i}-"), *n)).collect();
            let mut expected: Vec<String> = parts.iter().flat_map(|p| ids(p)).collect();
            let out = mix_parts(&sp, parts, seed).unwrap();
            let mut got = ids(&out);
            expected.sort();
            got.sort();
            prop_assert_eq!(got, expected);
        }
    }
}
