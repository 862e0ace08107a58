//! Monte Carlo of the achievable BER with ideal beat cancellation.
//!
//! The genie knows the transmitted symbol `d[n]`, the phase envelope
//! `B[n]`, `rho` and `V_b`, but not the reflected symbol. Subtracting
//! `2 rho sqrt(V_b + d) sqrt(V_b) B` removes the mean beat of each level and
//! leaves the residual that the analytic model treats as Gaussian.

use serde::{Deserialize, Serialize};

use crate::analytic::config_ber;
use crate::channel::{synthesize, ChannelRealization};
use crate::error::{Error, Result};
use crate::model::{gray_bits, LinkConfig, Normalization, SymbolFrame};
use crate::rng::rng_from_seed;

/// Beat estimate for one sample, in `k = 1` units.
#[inline]
pub fn ideal_beat_estimate(d: f64, v_b: f64, rho: f64, b: f64) -> Result<f64> {
    let radicand = v_b + d;
    if !(radicand > 0.0) {
        return Err(Error::NegativePower(radicand));
    }
    Ok(2.0 * rho * radicand.sqrt() * v_b.sqrt() * b)
}

/// Minimum-distance PAM4 slicer; a sample exactly on a threshold goes up.
#[inline]
pub fn decide_pam4(y: f64) -> Result<i8> {
    if y.is_nan() {
        return Err(Error::NanSample);
    }
    Ok(if y >= 2.0 {
        3
    } else if y >= 0.0 {
        1
    } else if y >= -2.0 {
        -1
    } else {
        -3
    })
}

/// What is subtracted from the received samples before slicing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mitigation {
    /// Ideal beat estimate from true `d` and `B`.
    Genie,
    /// Nothing subtracted; the unmitigated comparison point.
    None,
}

/// Simulated and analytic BER for one configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BerPoint {
    pub config: LinkConfig,
    pub ber_sim: f64,
    pub n_bit_errors: u64,
    pub n_bits: u64,
    pub ber_analytic: f64,
    /// Mean of `(y - b_hat - d)^2`.
    pub residual_mse_empirical: f64,
    pub b_sq_mean_empirical: f64,
}

/// Draws the frame and channel for `config` from its seed.
pub fn realize(config: &LinkConfig) -> Result<ChannelRealization> {
    config.validate()?;
    let mut rng = rng_from_seed(config.seed);
    let frame = SymbolFrame::random(config.n_bits, &mut rng)?;
    synthesize(config, &frame, &mut rng)
}

/// Genie-corrected samples `y - b_hat`, in `k = 1` units.
///
/// Under block-mean normalisation the receiver has already removed the
/// block mean of the beat along with the bias, so the estimate is
/// re-referenced to the same block: `y - (b_hat - mean(b_hat))`.
pub fn corrected_samples(
    r: &ChannelRealization,
    k: f64,
    normalization: Normalization,
    mitigation: Mitigation,
) -> Result<Vec<f64>> {
    if mitigation == Mitigation::None {
        return Ok(r.y.clone());
    }
    let v_b = r.v_b / k;
    let estimate: Vec<f64> =
        r.d.iter()
            .zip(&r.b_true)
            .map(|(&d, &b)| ideal_beat_estimate(d as f64, v_b, r.rho, b))
            .collect::<Result<_>>()?;
    let reference = match normalization {
        Normalization::EmpiricalMean => estimate.iter().sum::<f64>() / estimate.len() as f64,
        Normalization::KnownBias => 0.0,
    };
    Ok(r.y.iter().zip(&estimate).map(|(y, e)| y - (e - reference)).collect())
}

/// Counts bit errors between transmitted symbols and hard decisions.
pub fn count_bit_errors(sent: &[i8], soft: &[f64]) -> Result<u64> {
    let mut errors = 0u64;
    for (&d, &z) in sent.iter().zip(soft) {
        let (a0, a1) = gray_bits(d)?;
        let (b0, b1) = gray_bits(decide_pam4(z)?)?;
        errors += ((a0 ^ b0) + (a1 ^ b1)) as u64;
    }
    Ok(errors)
}

fn residual_stats(r: &ChannelRealization, corrected: &[f64]) -> (f64, f64) {
    let n = corrected.len() as f64;
    let mse = corrected.iter().zip(&r.d).map(|(z, &d)| (z - d as f64).powi(2)).sum::<f64>() / n;
    (mse, r.b_sq_mean())
}

/// BER of one configuration with the chosen mitigation.
pub fn run_point_with(config: &LinkConfig, mitigation: Mitigation) -> Result<BerPoint> {
    let r = realize(config)?;
    let corrected = corrected_samples(&r, config.symbol_scale, config.normalization, mitigation)?;
    let n_bit_errors = count_bit_errors(&r.d, &corrected)?;
    let n_bits = (r.len() * 2) as u64;
    let (residual_mse_empirical, b_sq_mean_empirical) = residual_stats(&r, &corrected);
    Ok(BerPoint {
        config: config.clone(),
        ber_sim: n_bit_errors as f64 / n_bits as f64,
        n_bit_errors,
        n_bits,
        ber_analytic: config_ber(config, Some(b_sq_mean_empirical))?,
        residual_mse_empirical,
        b_sq_mean_empirical,
    })
}

/// Achievable BER: genie beat cancellation, hard decision, Gray decode.
pub fn run_point(config: &LinkConfig) -> Result<BerPoint> {
    run_point_with(config, Mitigation::Genie)
}

/// `(mean (y - b_hat - d)^2, mean B^2)` for the genie-corrected channel.
pub fn measure_residual(config: &LinkConfig) -> Result<(f64, f64)> {
    let r = realize(config)?;
    let corrected = corrected_samples(&r, config.symbol_scale, config.normalization, Mitigation::Genie)?;
    Ok(residual_stats(&r, &corrected))
}
