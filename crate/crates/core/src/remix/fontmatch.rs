use crate::audio::AudioBuffer;
use crate::error::{invalid, Result};
use crate::mfcc::compute_mfcc_profile;

#[derive(Debug, Clone, PartialEq)]
pub struct FontMatch {
    pub index: usize,
    pub font_id: String,
    /// Standardized distance from the query to every bank entry.
    pub distances: Vec<f64>,
    /// MFCC dimensions with zero variance across the bank, left out.
    pub dropped_dims: usize,
}

/// Nearest bank entry to `query` in MFCC space after standardizing every
/// dimension with the bank's mean and (population) standard deviation.
/// Ties go to the lowest index.
pub fn match_sound_font(query: &AudioBuffer, bank: &[(String, AudioBuffer)]) -> Result<FontMatch> {
    if bank.is_empty() {
        return invalid("sound-font bank is empty");
    }
    let q = compute_mfcc_profile(query)?.coeffs;
    let profiles = bank
        .iter()
        .map(|(_, a)| compute_mfcc_profile(a).map(|v| v.coeffs))
        .collect::<Result<Vec<_>>>()?;
    let n = profiles.len() as f64;
    let dims = q.len();
    let mut keep = Vec::new();
    for d in 0..dims {
        let mean = profiles.iter().map(|p| p[d]).sum::<f64>() / n;
        let var = profiles.iter().map(|p| (p[d] - mean).powi(2)).sum::<f64>() / n;
        if var > 0.0 {
            keep.push((d, mean, var.sqrt()));
        }
    }
    let standardize = |v: &[f64]| -> Vec<f64> { keep.iter().map(|&(d, m, s)| (v[d] - m) / s).collect() };
    let qs = standardize(&q);
    let distances: Vec<f64> = profiles
        .iter()
        .map(|p| standardize(p).iter().zip(&qs).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt())
        .collect();
    let mut index = 0;
    for (i, &d) in distances.iter().enumerate() {
        if d < distances[index] {
            index = i;
        }
    }
    Ok(FontMatch {
        index,
        font_id: bank[index].0.clone(),
        distances,
        dropped_dims: dims - keep.len(),
    })
}
