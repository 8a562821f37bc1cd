//! Small numeric and formatting helpers shared across modules.

/// Rounds to `sig` significant digits and prints without exponent notation.
/// CSV outputs use this for diff-stable artifacts.
pub fn fmt_sig(x: f64, sig: u32) -> String {
    if x == 0.0 || !x.is_finite() {
        return if x == 0.0 { "0".to_string() } else { x.to_string() };
    }
    let magnitude = x.abs().log10().floor() as i32;
    let decimals = (sig as i32 - 1 - magnitude).max(0) as usize;
    let scale = 10f64.powi(sig as i32 - 1 - magnitude);
    let rounded = (x * scale).round() / scale;
    format!("{rounded:.decimals$}")
}

/// Linear interpolation of the square root around a measurement point:
/// `sqrt(v) ~ v / (2 sqrt(vm)) + sqrt(vm) / 2`.
pub fn sqrt_linearized(v: f64, v_m: f64) -> f64 {
    let s = v_m.sqrt();
    v / (2.0 * s) + s / 2.0
}
