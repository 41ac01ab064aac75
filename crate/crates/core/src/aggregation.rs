//! Weighted aggregation of a rating history into an opinion histogram, and
//! the collective-opinion climate derived from it.
//!
//! For a history `r_1..r_k` with weights `a_1..a_k` the mass on level `m` is
//! `sum_l a_l * [bin(r_l) == m] / sum_l a_l`, and the climate is
//! `sum_m m * mass[m]`. Fractional ratings are binned half-up before the
//! indicator test.

use thiserror::Error;

use crate::model::{round_half_up, RatingScale, RatingValue};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AggregationError {
    #[error("rating history is empty")]
    EmptyHistory,
    #[error("{weights} weights given for a history of {history} ratings")]
    WeightLengthMismatch { weights: usize, history: usize },
    #[error("weight {index} is not strictly positive ({value})")]
    NonPositiveWeight { index: usize, value: f64 },
}

/// Per-rating weighting scheme.
#[derive(Debug, Clone, PartialEq)]
pub enum WeightRule {
    /// Every rating counts once: the plain average rule.
    Uniform,
    /// One strictly positive weight per history entry.
    Custom(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct OpinionHistogram {
    pub scale: RatingScale,
    /// `mass[i]` is the share of level `i + 1`.
    pub mass: Vec<f64>,
}

impl OpinionHistogram {
    /// Mass on a 1-based level.
    pub fn at(&self, level: u32) -> f64 {
        self.mass[(level - 1) as usize]
    }

    pub fn climate(&self) -> f64 {
        self.mass
            .iter()
            .enumerate()
            .map(|(i, m)| (i + 1) as f64 * m)
            .sum()
    }
}

fn bin(rating: RatingValue, scale: RatingScale) -> usize {
    let level = round_half_up(rating.get()).clamp(1.0, scale.max_f64());
    level as usize - 1
}

pub fn histogram(
    history: &[RatingValue],
    scale: RatingScale,
    rule: &WeightRule,
) -> Result<OpinionHistogram, AggregationError> {
    if history.is_empty() {
        return Err(AggregationError::EmptyHistory);
    }
    let mut mass = vec![0.0; scale.levels_max() as usize];
    let total = match rule {
        WeightRule::Uniform => {
            for r in history {
                mass[bin(*r, scale)] += 1.0;
            }
            history.len() as f64
        }
        WeightRule::Custom(weights) => {
            if weights.len() != history.len() {
                return Err(AggregationError::WeightLengthMismatch {
                    weights: weights.len(),
                    history: history.len(),
                });
            }
            if let Some((index, &value)) = weights
                .iter()
                .enumerate()
                .find(|(_, w)| !(w.is_finite() && **w > 0.0))
            {
                return Err(AggregationError::NonPositiveWeight { index, value });
            }
            for (r, w) in history.iter().zip(weights) {
                mass[bin(*r, scale)] += w;
            }
            weights.iter().sum()
        }
    };
    for m in &mut mass {
        *m /= total;
    }
    Ok(OpinionHistogram { scale, mass })
}

/// Collective-opinion climate `F(H) = sum_m m * h_m`.
pub fn climate(
    history: &[RatingValue],
    scale: RatingScale,
    rule: &WeightRule,
) -> Result<f64, AggregationError> {
    histogram(history, scale, rule).map(|h| h.climate())
}

/// Unbinned arithmetic mean of the history: the value shown to agents.
pub fn running_mean(history: &[f64]) -> Result<f64, AggregationError> {
    if history.is_empty() {
        return Err(AggregationError::EmptyHistory);
    }
    Ok(history.iter().sum::<f64>() / history.len() as f64)
}

/// Fixed-point rendering with `decimals` fractional digits, rounding half-up.
pub fn format_climate_for_prompt(value: f64, decimals: usize) -> String {
    let factor = 10f64.powi(decimals as i32);
    let scaled = value * factor;
    let floor = scaled.floor();
    // Values like 6.55 sit just below the half point in binary.
    let units = if scaled - floor >= 0.5 - 1e-9 {
        floor + 1.0
    } else {
        floor
    };
    let units = units as i64;
    if decimals == 0 {
        return units.to_string();
    }
    let sign = if units < 0 { "-" } else { "" };
    let abs = units.unsigned_abs();
    let pow = 10u64.pow(decimals as u32);
    format!(
        "{sign}{}.{:0width$}",
        abs / pow,
        abs % pow,
        width = decimals
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn levels(xs: &[u32]) -> Vec<RatingValue> {
        xs.iter().map(|&x| RatingValue::from_level(x)).collect()
    }

    const M10: RatingScale = RatingScale::DEFAULT;

    #[test]
    fn single_level_history() {
        let h = histogram(&levels(&[7, 7, 7]), M10, &WeightRule::Uniform).unwrap();
        for level in 1..=10 {
            assert_eq!(h.at(level), if level == 7 { 1.0 } else { 0.0 });
        }
        assert_eq!(h.climate(), 7.0);
    }

    #[test]
    fn custom_weights_hand_evaluated() {
        let rule = WeightRule::Custom(vec![1.0, 3.0]);
        let h = histogram(&levels(&[2, 8]), M10, &rule).unwrap();
        assert_eq!(h.at(2), 0.25);
        assert_eq!(h.at(8), 0.75);
        assert_eq!(climate(&levels(&[2, 8]), M10, &rule).unwrap(), 6.5);
    }

    #[test]
    fn uniform_fraction_count() {
        let h = histogram(&levels(&[6, 6, 3, 9]), M10, &WeightRule::Uniform).unwrap();
        assert_eq!(h.at(6), 0.5);
        assert_eq!(h.at(3), 0.25);
        assert_eq!(h.at(9), 0.25);
    }

    #[test]
    fn fractional_ratings_bin_half_up() {
        let hist = vec![
            RatingValue::new(5.5, M10).unwrap(),
            RatingValue::new(5.4, M10).unwrap(),
        ];
        let h = histogram(&hist, M10, &WeightRule::Uniform).unwrap();
        assert_eq!(h.at(6), 0.5);
        assert_eq!(h.at(5), 0.5);
    }

    #[test]
    fn errors() {
        assert_eq!(
            histogram(&[], M10, &WeightRule::Uniform),
            Err(AggregationError::EmptyHistory)
        );
        assert_eq!(
            climate(&levels(&[1, 2]), M10, &WeightRule::Custom(vec![1.0])),
            Err(AggregationError::WeightLengthMismatch {
                weights: 1,
                history: 2
            })
        );
        assert_eq!(
            climate(&levels(&[1, 2]), M10, &WeightRule::Custom(vec![1.0, 0.0])),
            Err(AggregationError::NonPositiveWeight {
                index: 1,
                value: 0.0
            })
        );
        assert_eq!(running_mean(&[]), Err(AggregationError::EmptyHistory));
    }

    #[test]
    fn prompt_formatting() {
        assert_eq!(format_climate_for_prompt(6.4499, 1), "6.4");
        assert_eq!(format_climate_for_prompt(7.0, 1), "7.0");
        assert_eq!(format_climate_for_prompt(6.55, 1), "6.6");
        assert_eq!(format_climate_for_prompt(6.25, 0), "6");
        assert_eq!(format_climate_for_prompt(6.5, 0), "7");
        assert_eq!(format_climate_for_prompt(9.996, 2), "10.00");
        assert_eq!(format_climate_for_prompt(1.05, 2), "1.05");
    }

    proptest! {
        #[test]
        fn masses_sum_to_one_and_climate_in_range(
            hist in prop::collection::vec(1u32..=10, 1..80)
        ) {
            let h = histogram(&levels(&hist), M10, &WeightRule::Uniform).unwrap();
            let total: f64 = h.mass.iter().sum();
            prop_assert!((total - 1.0).abs() < 1e-9);
            prop_assert!(h.mass.iter().all(|m| (0.0..=1.0).contains(m)));
            let c = h.climate();
            prop_assert!((1.0..=10.0).contains(&c));
        }

        #[test]
        fn uniform_climate_is_the_mean(hist in prop::collection::vec(1u32..=10, 1..80)) {
            let c = climate(&levels(&hist), M10, &WeightRule::Uniform).unwrap();
            let mean = hist.iter().map(|&x| f64::from(x)).sum::<f64>() / hist.len() as f64;
            prop_assert!((c - mean).abs() < 1e-12);
        }

        #[test]
        fn custom_weights_scale_invariant(
            pairs in prop::collection::vec((1u32..=10, 0.01f64..10.0), 1..50),
            k in 0.001f64..1000.0,
        ) {
            let (hist, w): (Vec<u32>, Vec<f64>) = pairs.into_iter().unzip();
            let scaled: Vec<f64> = w.iter().map(|x| x * k).collect();
            let a = histogram(&levels(&hist), M10, &WeightRule::Custom(w)).unwrap();
            let b = histogram(&levels(&hist), M10, &WeightRule::Custom(scaled)).unwrap();
            for (x, y) in a.mass.iter().zip(&b.mass) {
                prop_assert!((x - y).abs() < 1e-12);
            }
            prop_assert!((a.climate() - b.climate()).abs() < 1e-12);
        }
    }
}
