use super::EvalError;

pub fn rmse(predictions: &[f64], truths: &[f64]) -> Result<f64, EvalError> {
    if predictions.len() != truths.len() {
        return Err(EvalError::LengthMismatch(predictions.len(), truths.len()));
    }
    if predictions.is_empty() {
        return Err(EvalError::EmptyTestSet);
    }
    let sse: f64 = predictions.iter().zip(truths).map(|(p, t)| (p - t).powi(2)).sum();
    Ok((sse / predictions.len() as f64).sqrt())
}

/// Sample quantile with linear interpolation between order statistics
/// (the common "type 7" definition). `q` in `[0, 1]`; `values` non-empty.
pub fn quantile(values: &[f64], q: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let h = (v.len() - 1) as f64 * q.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    v[lo] + (h - lo as f64) * (v[hi] - v[lo])
}

pub fn median(values: &[f64]) -> f64 {
    quantile(values, 0.5)
}
