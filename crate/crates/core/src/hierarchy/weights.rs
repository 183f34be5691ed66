use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightScheme {
    /// `w ∝ 1 / count`
    Inverse,
    /// `w ∝ 1 / sqrt(count)`
    InverseSqrt,
}

impl std::str::FromStr for WeightScheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "inverse" => Ok(WeightScheme::Inverse),
            "inverse_sqrt" | "sqrt" => Ok(WeightScheme::InverseSqrt),
            other => Err(Error::arg(format!("unknown weight scheme {other:?}"))),
        }
    }
}

/// Inverse-frequency class weights normalized to sum to one.
pub fn class_weights(counts: &[u64], scheme: WeightScheme) -> Result<Vec<f64>> {
    if counts.is_empty() {
        return Err(Error::arg("no classes"));
    }
    if let Some(j) = counts.iter().position(|&c| c == 0) {
        return Err(Error::arg(format!("class {j} has no samples; remove empty classes first")));
    }
    let raw: Vec<f64> = counts
        .iter()
        .map(|&c| match scheme {
            WeightScheme::Inverse => 1.0 / c as f64,
            WeightScheme::InverseSqrt => 1.0 / (c as f64).sqrt(),
        })
        .collect();
    let total: f64 = raw.iter().sum();
    Ok(raw.into_iter().map(|w| w / total).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn examples() {
        let w = class_weights(&[2, 1, 1], WeightScheme::Inverse).unwrap();
        for (a, b) in w.iter().zip([0.2, 0.4, 0.4]) {
            assert!((a - b).abs() < 1e-15);
        }
        let w = class_weights(&[4, 1], WeightScheme::InverseSqrt).unwrap();
        assert!((w[0] - 1.0 / 3.0).abs() < 1e-15 && (w[1] - 2.0 / 3.0).abs() < 1e-15);
        assert!(class_weights(&[3, 0], WeightScheme::Inverse).is_err());
    }

    proptest! {
        #[test]
        fn normalized_and_permutation_equivariant(counts in proptest::collection::vec(1u64..10_000, 1..40), scheme in prop_oneof![Just(WeightScheme::Inverse), Just(WeightScheme::InverseSqrt)], rot in 0usize..40) {
            let w = class_weights(&counts, scheme).unwrap();
            prop_assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            let k = rot % counts.len();
            let mut rotated = counts.clone();
            rotated.rotate_left(k);
            let mut wr = w.clone();
            wr.rotate_left(k);
            let w2 = class_weights(&rotated, scheme).unwrap();
            for (a, b) in w2.iter().zip(&wr) {
                prop_assert!((a - b).abs() < 1e-14);
            }
            if counts.iter().all(|&c| c == counts[0]) {
                for x in &w { prop_assert!((x - 1.0 / counts.len() as f64).abs() < 1e-15); }
            }
        }
    }
}
