//! Document-level quality gate and threshold calibration.

use crate::error::{Error, Result};
use crate::ingest::Document;

use super::linear::HashedLinearModel;
use super::{StrategyVerdict, UnitRef};

/// Quality score of a document: the model probability of its sentences,
/// concatenated.
pub fn quality_score(doc: &Document, model: &HashedLinearModel) -> f64 {
    let tokens: Vec<&str> = doc
        .sentences
        .iter()
        .flat_map(|s| s.tokens.iter().map(|t| t.norm.as_str()))
        .collect();
    model.predict_tokens(&tokens)
}

/// Flags the document for removal when its quality score is below `tau_q`.
pub fn quality_gate(doc: &Document, model: &HashedLinearModel, tau_q: f64) -> StrategyVerdict {
    let p = quality_score(doc, model);
    StrategyVerdict {
        unit: UnitRef::document(&doc.doc_id),
        flagged: p < tau_q,
        score: Some(p),
        matched_terms: None,
        unscored: false,
    }
}

/// Picks `τ_q` so that `p < τ_q` holds for `round(target · n)` of the
/// scores (fewer when ties straddle the cut).
pub fn calibrate_threshold(scores: &[f64], target_removal: f64) -> Result<f64> {
    if scores.is_empty() {
        return Err(Error::Validation("calibration slice is empty".into()));
    }
    if !(0.0..=1.0).contains(&target_removal) {
        return Err(Error::Validation(format!(
            "target removal rate {target_removal} outside [0, 1]"
        )));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::Validation("non-finite calibration score".into()));
    }
    let mut sorted = scores.to_vec();
    sorted.sort_by(f64::total_cmp);
    let k = (target_removal * sorted.len() as f64).round() as usize;
    if k == 0 {
        return Ok(0.0);
    }
    if k >= sorted.len() {
        return Ok(next_up(sorted[sorted.len() - 1]));
    }
    Ok(sorted[k])
}

fn next_up(x: f64) -> f64 {
    if x >= 0.0 {
        f64::from_bits(x.to_bits() + 1)
    } else {
        f64::from_bits(x.to_bits() - 1)
    }
}

/// Fraction of `scores` strictly below `tau_q`.
pub fn removal_rate(scores: &[f64], tau_q: f64) -> f64 {
    if scores.is_empty() {
        return 0.0;
    }
    scores.iter().filter(|&&s| s < tau_q).count() as f64 / scores.len() as f64
}
