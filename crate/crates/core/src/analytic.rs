//! Closed-form achievable BER of Gray-coded PAM4 under ideal MPI mitigation.
//!
//! After the ideal beat estimate `2 rho sqrt(V_b + d) sqrt(V_b) B` is
//! subtracted, what remains of the beat term is
//! `2 rho sqrt(V_b + d) (sqrt(V_b + d') - sqrt(V_b)) B`, whose mean square
//! over i.i.d. symbols is
//!
//! ```text
//! sigma2_mpi = sum_X rho^2 V_b^2 <B^2> (sqrt(1 + X/V_b) - 1)^2,   X in {-3,-1,1,3}
//! ```
//!
//! That residual is treated as extra Gaussian noise on top of the AWGN:
//!
//! ```text
//! gamma = (1/SNR_o + sigma2_mpi / E|d|^2)^-1 / (2 log2 M)
//! BER   = 2 (M-1) / (M log2 M) * Q( sqrt(6 log2 M / (M^2 - 1) * gamma) )
//! ```
//!
//! With `M = 4` this is `BER = 0.75 Q(sqrt(0.8 gamma))`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{BSqMeanMode, LinkConfig, SnrVariant, LEVELS, SYMBOL_POWER};

/// Modulation order.
pub const M: u32 = 4;

/// `B^2` average in the uniform-phase limit.
pub const B_SQ_MEAN_HALF: f64 = 0.5;

const ERFC_ASYMPTOTIC_FROM: f64 = 26.0;

/// Gaussian tail probability `Q(x) = erfc(x / sqrt 2) / 2`.
pub fn q_function(x: f64) -> f64 {
    0.5 * erfc(x / std::f64::consts::SQRT_2)
}

/// Complementary error function.
///
/// Uses `libm` below 26 and the asymptotic series above, where `erfc`
/// sits within a few decades of the subnormal range.
pub fn erfc(z: f64) -> f64 {
    if z.is_nan() {
        return f64::NAN;
    }
    if z > ERFC_ASYMPTOTIC_FROM {
        return erfc_asymptotic(z);
    }
    libm::erfc(z)
}

fn erfc_asymptotic(z: f64) -> f64 {
    // erfc(z) ~ exp(-z^2) / (z sqrt(pi)) * sum_n (-1)^n (2n-1)!! / (2 z^2)^n
    let inv_2z2 = 1.0 / (2.0 * z * z);
    let mut term = 1.0;
    let mut sum = 1.0;
    for n in 1..8 {
        term *= -((2 * n - 1) as f64) * inv_2z2;
        sum += term;
    }
    (-z * z).exp() / (z * std::f64::consts::PI.sqrt()) * sum
}

/// Inputs of the achievable-BER formula in `k = 1` units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnalyticInputs {
    pub rho2: f64,
    pub v_b: f64,
    pub b_sq_mean: f64,
    pub snr_o_linear: f64,
}

impl AnalyticInputs {
    pub fn validate(&self) -> Result<()> {
        if !(self.rho2 >= 0.0) {
            return Err(Error::InvalidConfig(format!("rho^2 must be >= 0, got {}", self.rho2)));
        }
        if !(0.0..=1.0).contains(&self.b_sq_mean) {
            return Err(Error::InvalidConfig(format!("<B^2> must lie in [0, 1], got {}", self.b_sq_mean)));
        }
        if !(self.snr_o_linear > 0.0) {
            return Err(Error::InvalidConfig(format!("SNR must be > 0, got {}", self.snr_o_linear)));
        }
        if !(self.v_b > 3.0) {
            return Err(Error::NegativePower(self.v_b - 3.0));
        }
        Ok(())
    }

    pub fn residual_variance(&self) -> Result<f64> {
        residual_mpi_variance(self.rho2, self.v_b, self.b_sq_mean)
    }

    pub fn ber(&self, variant: SnrVariant) -> Result<f64> {
        self.validate()?;
        Ok(pam4_ber_variant(self.snr_o_linear, self.residual_variance()?, variant))
    }
}

/// `sqrt(1 + x) - 1` without cancellation for small `x`.
#[inline]
fn sqrt1p_m1(x: f64) -> f64 {
    x / ((1.0 + x).sqrt() + 1.0)
}

/// Residual MPI variance left by ideal beat cancellation, `k = 1` units.
///
/// Excludes the AWGN contribution.
pub fn residual_mpi_variance(rho2: f64, v_b: f64, b_sq_mean: f64) -> Result<f64> {
    if !(v_b > 3.0) {
        return Err(Error::NegativePower(v_b - 3.0));
    }
    let shape: f64 = LEVELS.iter().map(|&x| sqrt1p_m1(x as f64 / v_b).powi(2)).sum();
    Ok(rho2 * v_b * v_b * b_sq_mean * shape)
}

/// Effective SNR `gamma` per bit, MPI residual folded in as Gaussian noise.
pub fn effective_gamma(snr_o_linear: f64, sigma2_mpi_residual: f64) -> f64 {
    let log2m = M.ilog2() as f64;
    let inv = 1.0 / snr_o_linear + sigma2_mpi_residual / SYMBOL_POWER;
    (1.0 / inv) / (2.0 * log2m)
}

/// Gray-coded PAM4 BER from the effective SNR.
pub fn pam4_ber_from_gamma(gamma: f64) -> f64 {
    let m = M as f64;
    let log2m = M.ilog2() as f64;
    let prefactor = 2.0 * (m - 1.0) / (m * log2m);
    prefactor * q_function((6.0 * log2m / (m * m - 1.0) * gamma).sqrt())
}

/// Achievable BER with the residual MPI variance counted once.
pub fn pam4_ber(snr_o_linear: f64, sigma2_mpi_residual: f64) -> f64 {
    pam4_ber_from_gamma(effective_gamma(snr_o_linear, sigma2_mpi_residual))
}

/// [`pam4_ber`] with a choice of how AWGN enters the MPI term.
pub fn pam4_ber_variant(snr_o_linear: f64, sigma2_mpi_residual: f64, variant: SnrVariant) -> f64 {
    match variant {
        SnrVariant::MpiOnly => pam4_ber(snr_o_linear, sigma2_mpi_residual),
        SnrVariant::Literal => pam4_ber(snr_o_linear, sigma2_mpi_residual + SYMBOL_POWER / snr_o_linear),
    }
}

/// Analytic BER for one configuration.
///
/// `empirical_b_sq_mean` is required when the configuration asks for
/// [`BSqMeanMode::Empirical`] and ignored otherwise.
pub fn config_ber(config: &LinkConfig, empirical_b_sq_mean: Option<f64>) -> Result<f64> {
    config.validate()?;
    let b_sq_mean = match config.b_sq_mean_mode {
        BSqMeanMode::AsymptoticHalf => B_SQ_MEAN_HALF,
        BSqMeanMode::Empirical => empirical_b_sq_mean
            .ok_or_else(|| Error::InvalidConfig("empirical <B^2> mode needs a simulated average".into()))?,
    };
    let inputs = AnalyticInputs {
        rho2: config.rho2(),
        v_b: config.v_b_normalized()?,
        b_sq_mean,
        snr_o_linear: config.snr_linear(),
    };
    inputs.ber(config.snr_variant)
}

/// Evaluates [`config_ber`] over a grid, tagging failures with their index.
pub fn ber_curve(grid: &[LinkConfig], empirical_b_sq_mean: Option<&[f64]>) -> Result<Vec<(LinkConfig, f64)>> {
    if let Some(e) = empirical_b_sq_mean {
        if e.len() != grid.len() {
            return Err(Error::InvalidConfig(format!(
                "{} empirical <B^2> values for {} grid points",
                e.len(),
                grid.len()
            )));
        }
    }
    grid.iter()
        .enumerate()
        .map(|(index, config)| {
            let emp = empirical_b_sq_mean.map(|e| e[index]);
            config_ber(config, emp)
                .map(|ber| (config.clone(), ber))
                .map_err(|e| Error::GridPoint { index, source: Box::new(e) })
        })
        .collect()
}
