/// Log-variance inputs are clipped to this range before use.
pub const LOG_VAR_MIN: f64 = -10.0;
pub const LOG_VAR_MAX: f64 = 10.0;

/// Value and gradients of `0.5 e^{-lv} r^2 + 0.5 lv`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianNll {
    pub loss: f64,
    pub d_residual: f64,
    /// Evaluated at the clipped log-variance and passed straight through the
    /// clip, so a head driven outside the range can still recover.
    pub d_log_var: f64,
}

/// Gaussian negative log-likelihood (up to a constant) of `residual` under a
/// zero-mean normal with log-variance `log_var`.
pub fn gaussian_nll(residual: f64, log_var: f64) -> GaussianNll {
    let lv = log_var.clamp(LOG_VAR_MIN, LOG_VAR_MAX);
    let precision = (-lv).exp();
    let weighted = precision * residual;
    GaussianNll {
        loss: 0.5 * weighted * residual + 0.5 * lv,
        d_residual: weighted,
        d_log_var: -0.5 * weighted * residual + 0.5,
    }
}
