//! Sign and orientation conventions, each calibrated once against a case
//! with a known answer and asserted by a dedicated test.

/// Sign in front of `(t/π)^{1/2} ∫₁² tr(e^{-tA_s²}B) ds`. Calibrated so that a
/// positive `Φ` gives a positive index, matching `(1/2π)∫ tr Φ`.
pub const WITTEN_RHS_SIGN: f64 = 1.0;

/// Factor turning the windowed `tr(e^{-tDD*} − e^{-tD*D})` into the
/// orientation of the calibrated heat-trace right side.
pub const PTF_LHS_ORIENTATION: f64 = -1.0;

/// `index(T_a) = INDEX_WINDING_SIGN · winding(a)`.
pub const INDEX_WINDING_SIGN: i64 = -1;

/// Levinson relation in terms of `Δ = arg det S(∞) − arg det S(0)`:
/// `N = LEVINSON_PHASE_SIGN · Δ/(2π) + (1 − M_R(0))/2`.
pub const LEVINSON_PHASE_SIGN: f64 = -1.0;

pub const TAG_WITTEN: &str = "witten-rhs:+sqrt(t/pi)*int_1^2 tr(exp(-tA_s^2)B)ds";
pub const TAG_PTF: &str = "ptf-lhs:-tr_window(exp(-tDD*)-exp(-tD*D))";
pub const TAG_INDEX: &str = "index=dim ker-dim coker=-winding";
pub const TAG_LEVINSON: &str = "levinson:N=-(argdetS(inf)-argdetS(0))/(2pi)+(1-M_R0)/2";
pub const TAG_UNITS: &str = "units:hbar=2m=1,E=k^2";
pub const TAG_S_LAYOUT: &str = "S=[[t,r-],[r+,t]]";

/// All tags, attached to every CLI record.
pub fn all_tags() -> Vec<String> {
    [TAG_WITTEN, TAG_PTF, TAG_INDEX, TAG_LEVINSON, TAG_UNITS, TAG_S_LAYOUT]
        .iter()
        .map(|s| s.to_string())
        .collect()
}
