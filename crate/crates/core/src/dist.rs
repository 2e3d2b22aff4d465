use statrs::function::gamma::gamma_ur;

/// Upper tail `P(X > x)` of a chi-square distribution with `df` degrees of
/// freedom, via the regularized upper incomplete gamma function
/// `Q(df/2, x/2)`.
pub fn chi_square_sf(x: f64, df: f64) -> f64 {
    assert!(df > 0.0, "chi-square degrees of freedom must be positive");
    if x.is_nan() {
        return f64::NAN;
    }
    if x <= 0.0 {
        return 1.0;
    }
    if x.is_infinite() {
        return 0.0;
    }
    gamma_ur(0.5 * df, 0.5 * x).clamp(0.0, 1.0)
}
