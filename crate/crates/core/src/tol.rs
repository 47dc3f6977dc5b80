//! Process-wide relative tolerance used by the series layer.

use std::sync::atomic::{AtomicU64, Ordering};

const DEFAULT_BITS: u64 = 0x3DDB_7CDF_D9D7_BDBB; // 1e-10

static RELATIVE_TOL: AtomicU64 = AtomicU64::new(DEFAULT_BITS);

pub const DEFAULT_RELATIVE_TOL: f64 = 1e-10;

pub fn relative_tol() -> f64 {
    f64::from_bits(RELATIVE_TOL.load(Ordering::Relaxed))
}

/// Panics on a non-positive or non-finite value.
pub fn set_relative_tol(tol: f64) {
    assert!(tol.is_finite() && tol > 0.0, "relative tolerance must be positive");
    RELATIVE_TOL.store(tol.to_bits(), Ordering::Relaxed);
}

#[cfg(test)]
mod tests {
    #[test]
    fn default_bits_are_1e_minus_10() {
        assert_eq!(f64::from_bits(super::DEFAULT_BITS), super::DEFAULT_RELATIVE_TOL);
    }
}
