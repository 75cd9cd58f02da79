use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::MetricsError;
use crate::model::{ProbeKind, Verdict};
use crate::probe::ProbeResult;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct YesRate {
    pub probe: ProbeKind,
    /// Causal verdicts over all results, Invalid included in the denominator.
    pub rate: f64,
    pub invalid_rate: f64,
    pub n: usize,
}

pub fn yes_rate(results: &[ProbeResult]) -> Result<YesRate, MetricsError> {
    let first = results.first().ok_or(MetricsError::EmptyInput)?.probe;
    if let Some(other) = results.iter().find(|r| r.probe != first) {
        return Err(MetricsError::MixedProbeKind(
            first.as_str().into(),
            other.probe.as_str().into(),
        ));
    }
    let n = results.len();
    let count = |v: Verdict| results.iter().filter(|r| r.verdict == v).count();
    Ok(YesRate {
        probe: first,
        rate: count(Verdict::Causal) as f64 / n as f64,
        invalid_rate: count(Verdict::Invalid) as f64 / n as f64,
        n,
    })
}

/// `1 - |A ∩ B| / |A ∪ B|`, and 0 when both sets are empty.
pub fn jaccard_dissimilarity<T: Ord>(a: &BTreeSet<T>, b: &BTreeSet<T>) -> f64 {
    let inter = a.intersection(b).count();
    let union = a.len() + b.len() - inter;
    if union == 0 {
        0.0
    } else {
        (union - inter) as f64 / union as f64
    }
}

/// Share of aligned positions whose verdicts differ.
pub fn hamming_distance(a: &[Verdict], b: &[Verdict]) -> Result<f64, MetricsError> {
    if a.len() != b.len() {
        return Err(MetricsError::LengthMismatch {
            left: a.len(),
            right: b.len(),
        });
    }
    if a.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    let differing = a.iter().zip(b).filter(|(x, y)| x != y).count();
    Ok(differing as f64 / a.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::decompose::PairKey;
    use crate::model::ModelRef;
    use proptest::prelude::*;
    use Verdict::{Causal as C, Invalid as I, NonCausal as N};

    fn result(probe: ProbeKind, verdict: Verdict) -> ProbeResult {
        ProbeResult {
            pair_key: PairKey {
                cause: "a".into(),
                effect: "b".into(),
            },
            probe,
            evaluator_model: ModelRef::new("p", "m", 0.0, "t").unwrap(),
            verdict,
            raw_answer: String::new(),
            cached: false,
        }
    }

    #[test]
    fn yes_rate_examples() {
        let all = vec![result(ProbeKind::A1_Active, C); 4];
        assert_eq!(yes_rate(&all).unwrap().rate, 1.0);

        let mixed: Vec<_> = [C, C, N, I].into_iter().map(|v| result(ProbeKind::A1_Active, v)).collect();
        let r = yes_rate(&mixed).unwrap();
        assert_eq!((r.rate, r.invalid_rate, r.n), (0.5, 0.25, 4));

        let kinds = [result(ProbeKind::A1_Active, C), result(ProbeKind::A2_ReversedActive, C)];
        assert!(matches!(yes_rate(&kinds), Err(MetricsError::MixedProbeKind(..))));
        assert_eq!(yes_rate(&[]), Err(MetricsError::EmptyInput));
    }

    #[test]
    fn jaccard_examples() {
        let a = BTreeSet::from(["p1", "p2", "p3"]);
        let b = BTreeSet::from(["p2", "p3", "p4"]);
        assert_eq!(jaccard_dissimilarity(&a, &b), 0.5);
        assert_eq!(jaccard_dissimilarity(&a, &a), 0.0);
        assert_eq!(jaccard_dissimilarity(&a, &BTreeSet::from(["x"])), 1.0);
        assert_eq!(jaccard_dissimilarity::<&str>(&BTreeSet::new(), &BTreeSet::new()), 0.0);
    }

    #[test]
    fn hamming_examples() {
        assert_eq!(hamming_distance(&[C, C, N, N], &[C, N, N, N]).unwrap(), 0.25);
        assert_eq!(hamming_distance(&[C, N], &[N, C]).unwrap(), 1.0);
        assert_eq!(hamming_distance(&[I], &[C]).unwrap(), 1.0);
        assert_eq!(hamming_distance(&[], &[]), Err(MetricsError::EmptyInput));
        assert_eq!(
            hamming_distance(&[C], &[C, N]),
            Err(MetricsError::LengthMismatch { left: 1, right: 2 })
        );
    }

    fn verdict() -> impl Strategy<Value = Verdict> {
        prop_oneof![Just(C), Just(N), Just(I)]
    }

    proptest! {
        #[test]
        fn jaccard_symmetric_bounded(a in prop::collection::btree_set(0u8..20, 0..15),
                                     b in prop::collection::btree_set(0u8..20, 0..15)) {
            let d = jaccard_dissimilarity(&a, &b);
            prop_assert_eq!(d, jaccard_dissimilarity(&b, &a));
            prop_assert!((0.0..=1.0).contains(&d));
            prop_assert_eq!(jaccard_dissimilarity(&a, &a), 0.0);
        }

        #[test]
        fn hamming_symmetric_bounded(pairs in prop::collection::vec((verdict(), verdict()), 1..50)) {
            let (a, b): (Vec<_>, Vec<_>) = pairs.into_iter().unzip();
            let d = hamming_distance(&a, &b).unwrap();
            prop_assert_eq!(d, hamming_distance(&b, &a).unwrap());
            prop_assert!((0.0..=1.0).contains(&d));
            prop_assert_eq!(hamming_distance(&a, &a).unwrap(), 0.0);
        }
    }
}
