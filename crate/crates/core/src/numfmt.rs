//! Bit-stable number formatting for CSV output.

/// Formats `x` with 17 significant digits in scientific notation, which
/// round-trips every finite `f64`.
pub fn sig17(x: f64) -> String {
    if x == 0.0 {
        // normalise -0.0
        return "0.0000000000000000e0".to_string();
    }
    format!("{x:.16e}")
}
