use serde::{Deserialize, Serialize};

use super::MetricsError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KappaResult {
    pub kappa: f64,
    pub n_items: usize,
    pub n_raters_per_item: usize,
    pub categories: usize,
    /// Mean per-item agreement.
    pub p_bar: f64,
    /// Chance agreement from the marginal category shares.
    pub p_e: f64,
}

/// Fleiss' kappa over an item × category count table with a fixed number of
/// raters per item.
pub fn fleiss_kappa(ratings: &[Vec<usize>], raters_per_item: usize) -> Result<KappaResult, MetricsError> {
    if ratings.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    if raters_per_item < 2 {
        return Err(MetricsError::TooFewRaters(raters_per_item));
    }
    let categories = ratings[0].len();
    if categories < 2 {
        return Err(MetricsError::TooFewCategories(categories));
    }
    for (item, row) in ratings.iter().enumerate() {
        if row.len() != categories {
            return Err(MetricsError::LengthMismatch {
                left: categories,
                right: row.len(),
            });
        }
        let found: usize = row.iter().sum();
        if found != raters_per_item {
            return Err(MetricsError::UnequalRaterCounts {
                item,
                found,
                expected: raters_per_item,
            });
        }
    }

    let n_items = ratings.len();
    let n = raters_per_item as f64;
    let p_bar = ratings
        .iter()
        .map(|row| {
            let sq: usize = row.iter().map(|&c| c * c).sum();
            (sq as f64 - n) / (n * (n - 1.0))
        })
        .sum::<f64>()
        / n_items as f64;
    let total = (n_items * raters_per_item) as f64;
    let p_e: f64 = (0..categories)
        .map(|j| {
            let col: usize = ratings.iter().map(|row| row[j]).sum();
            (col as f64 / total).powi(2)
        })
        .sum();
    if 1.0 - p_e <= f64::EPSILON {
        return Err(MetricsError::DegenerateAgreement);
    }
    Ok(KappaResult {
        kappa: (p_bar - p_e) / (1.0 - p_e),
        n_items,
        n_raters_per_item: raters_per_item,
        categories,
        p_bar,
        p_e,
    })
}
