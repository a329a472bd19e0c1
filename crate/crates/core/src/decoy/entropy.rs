use crate::error::{Error, Result};

/// Binary Shannon entropy in bits, with H(0) = H(1) = 0.
pub fn binary_entropy(x: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&x) {
        return Err(Error::Domain(format!("binary entropy needs x in [0, 1], got {x}")));
    }
    if x == 0.0 || x == 1.0 {
        return Ok(0.0);
    }
    Ok(-x * x.log2() - (1.0 - x) * (1.0 - x).log2())
}

/// Entropy of a rate clamped to [0, 1/2].
pub(crate) fn clamped_entropy(x: f64) -> f64 {
    let x = x.clamp(0.0, 0.5);
    binary_entropy(x).unwrap_or(1.0)
}
