//! PAM4 alphabet, Gray labelling and link configuration.
//!
//! All voltages are expressed in units where the receiver renormalisation
//! factor `k` (volts per unit symbol) is folded in, so the nominal levels
//! are `{-3, -1, 1, 3}` and the optical power of a level `d` is
//! `V_b + k*d`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Speed of light in vacuum, m/s.
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

/// The four PAM4 amplitudes in ascending order.
pub const LEVELS: [i8; 4] = [-3, -1, 1, 3];

/// Mean-square symbol energy `E|d|^2` of the unit-spaced PAM4 alphabet.
pub const SYMBOL_POWER: f64 = 5.0;

/// Bits per PAM4 symbol.
pub const BITS_PER_SYMBOL: usize = 2;

/// Index of a level in [`LEVELS`]; `None` for anything outside the alphabet.
pub fn level_index(d: i8) -> Option<usize> {
    match d {
        -3 => Some(0),
        -1 => Some(1),
        1 => Some(2),
        3 => Some(3),
        _ => None,
    }
}

/// Gray label for one symbol: 00 -> -3, 01 -> -1, 11 -> +1, 10 -> +3.
#[inline]
pub fn gray_symbol(b0: u8, b1: u8) -> i8 {
    match (b0 & 1, b1 & 1) {
        (0, 0) => -3,
        (0, 1) => -1,
        (1, 1) => 1,
        _ => 3,
    }
}

/// Inverse of [`gray_symbol`].
#[inline]
pub fn gray_bits(d: i8) -> Result<(u8, u8)> {
    match d {
        -3 => Ok((0, 0)),
        -1 => Ok((0, 1)),
        1 => Ok((1, 1)),
        3 => Ok((1, 0)),
        other => Err(Error::NotPam4Level(other as f64)),
    }
}

/// A bit stream together with its Gray-mapped PAM4 symbols.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SymbolFrame {
    pub bits: Vec<u8>,
    pub symbols: Vec<i8>,
}

impl SymbolFrame {
    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }

    /// Draws `n_bits` fair bits from `rng` and Gray-maps them.
    pub fn random<R: Rng + ?Sized>(n_bits: usize, rng: &mut R) -> Result<Self> {
        let bits: Vec<u8> = (0..n_bits).map(|_| rng.random::<bool>() as u8).collect();
        gray_encode(&bits)
    }
}

/// Maps pairs of bits onto PAM4 levels with the fixed Gray labelling.
pub fn gray_encode(bits: &[u8]) -> Result<SymbolFrame> {
    if bits.len() % BITS_PER_SYMBOL != 0 {
        return Err(Error::OddBitCount(bits.len()));
    }
    let symbols = bits.chunks_exact(BITS_PER_SYMBOL).map(|pair| gray_symbol(pair[0], pair[1])).collect();
    Ok(SymbolFrame { bits: bits.iter().map(|b| b & 1).collect(), symbols })
}

/// Recovers the bit stream from PAM4 levels.
pub fn gray_decode(symbols: &[i8]) -> Result<Vec<u8>> {
    let mut bits = Vec::with_capacity(symbols.len() * BITS_PER_SYMBOL);
    for &d in symbols {
        let (b0, b1) = gray_bits(d)?;
        bits.push(b0);
        bits.push(b1);
    }
    Ok(bits)
}

/// Bias voltage giving extinction ratio `er_db` for levels `V_b ± 3k`.
///
/// Uses `ER = (V_b + 3k) / (V_b - 3k)`, so `V_b = 3k (E + 1) / (E - 1)`.
/// An infinite ratio returns the limit `3k` (zero floor power).
pub fn bias_from_er(er_db: f64, k: f64) -> Result<f64> {
    if er_db.is_nan() || er_db <= 0.0 {
        return Err(Error::InvalidConfig(format!("extinction ratio must be > 0 dB, got {er_db}")));
    }
    if !(k.is_finite() && k > 0.0) {
        return Err(Error::InvalidConfig(format!("symbol scale k must be > 0, got {k}")));
    }
    if er_db.is_infinite() {
        return Ok(3.0 * k);
    }
    // E - 1 through expm1 keeps small ratios accurate.
    let e_minus_1 = (er_db * std::f64::consts::LN_10 / 10.0).exp_m1();
    Ok(3.0 * k * (e_minus_1 + 2.0) / e_minus_1)
}

/// Extinction ratio in dB implied by a bias voltage.
pub fn er_from_bias(v_b: f64, k: f64) -> f64 {
    10.0 * ((v_b + 3.0 * k) / (v_b - 3.0 * k)).log10()
}

/// Reflection delay rounded down to whole symbol periods.
pub fn delay_in_symbols(reflection_delay_m: f64, group_index: f64, baud_rate: f64) -> Result<usize> {
    if !(reflection_delay_m >= 0.0 && reflection_delay_m.is_finite()) {
        return Err(Error::InvalidConfig(format!(
            "reflection delay must be a finite length >= 0, got {reflection_delay_m}"
        )));
    }
    if !(group_index > 0.0 && group_index.is_finite()) {
        return Err(Error::InvalidConfig(format!("group index must be > 0, got {group_index}")));
    }
    if !(baud_rate > 0.0 && baud_rate.is_finite()) {
        return Err(Error::InvalidConfig(format!("baud rate must be > 0, got {baud_rate}")));
    }
    Ok((baud_rate * reflection_delay_m * group_index / SPEED_OF_LIGHT).floor() as usize)
}

/// Where the analytic model takes the time average of `B^2` from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum BSqMeanMode {
    /// Uniform-phase limit, exactly 1/2.
    #[default]
    #[serde(alias = "half")]
    AsymptoticHalf,
    /// Time average of the simulated `B[n]^2`.
    Empirical,
}

/// Receiver DC removal before renormalisation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Normalization {
    /// Subtract the block mean of the photocurrent.
    #[default]
    EmpiricalMean,
    /// Subtract the known bias `V_b`.
    KnownBias,
}

/// How the AWGN term enters the effective SNR of the BER formula.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum SnrVariant {
    /// Only the residual MPI variance is added to `1/SNR_o`.
    #[default]
    MpiOnly,
    /// Residual MPI variance plus `sigma_o^2` is added to `1/SNR_o`,
    /// i.e. AWGN counted twice.
    Literal,
}

/// One simulation / analysis scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LinkConfig {
    /// Symbols per second.
    pub baud_rate: f64,
    /// Laser FWHM linewidth in Hz, shared by the signal and reflection lasers.
    pub linewidth_hz: f64,
    /// Reflected-to-signal power ratio `10 log10(rho^2)`; `None` means no reflection.
    pub mpi_ratio_db: Option<f64>,
    /// Extinction ratio in dB. Mutually exclusive with `bias_voltage`.
    pub extinction_ratio_db: Option<f64>,
    /// Explicit bias `V_b` in normalised volts.
    pub bias_voltage: Option<f64>,
    /// Volts per unit symbol, `k`.
    pub symbol_scale: f64,
    pub reflection_delay_m: f64,
    pub group_index: f64,
    /// AWGN-only SNR in dB referenced to `E|d|^2`; `None` is noise-free.
    pub snr_db: Option<f64>,
    pub n_bits: usize,
    pub seed: u64,
    pub b_sq_mean_mode: BSqMeanMode,
    pub normalization: Normalization,
    pub snr_variant: SnrVariant,
}

impl Default for LinkConfig {
    fn default() -> Self {
        Self {
            baud_rate: 106.25e9,
            linewidth_hz: 1e6,
            mpi_ratio_db: None,
            extinction_ratio_db: Some(4.0),
            bias_voltage: None,
            symbol_scale: 1.0,
            reflection_delay_m: 2000.0,
            group_index: 1.468,
            snr_db: None,
            n_bits: 1_000_000,
            seed: 1,
            b_sq_mean_mode: BSqMeanMode::AsymptoticHalf,
            normalization: Normalization::EmpiricalMean,
            snr_variant: SnrVariant::MpiOnly,
        }
    }
}

impl LinkConfig {
    /// Bias voltage in the same units as `k * d`.
    pub fn v_b(&self) -> Result<f64> {
        match (self.extinction_ratio_db, self.bias_voltage) {
            (Some(er), None) => bias_from_er(er, self.symbol_scale),
            (None, Some(v)) => Ok(v),
            (Some(_), Some(_)) => {
                Err(Error::InvalidConfig("give either extinction_ratio_db or bias_voltage, not both".into()))
            }
            (None, None) => Err(Error::InvalidConfig("one of extinction_ratio_db or bias_voltage is required".into())),
        }
    }

    /// Bias voltage in `k = 1` units, `V_b / k`.
    pub fn v_b_normalized(&self) -> Result<f64> {
        Ok(self.v_b()? / self.symbol_scale)
    }

    /// Extinction ratio, given or derived from the bias.
    pub fn er_db(&self) -> Result<f64> {
        match self.extinction_ratio_db {
            Some(er) => Ok(er),
            None => Ok(er_from_bias(self.v_b()?, self.symbol_scale)),
        }
    }

    /// Linear power ratio `rho^2`.
    pub fn rho2(&self) -> f64 {
        self.mpi_ratio_db.map_or(0.0, |db| 10f64.powf(db / 10.0))
    }

    /// Field reflection coefficient `rho`.
    pub fn rho(&self) -> f64 {
        self.mpi_ratio_db.map_or(0.0, |db| 10f64.powf(db / 20.0))
    }

    /// Linear AWGN-only SNR; infinite when noise-free.
    pub fn snr_linear(&self) -> f64 {
        self.snr_db.map_or(f64::INFINITY, |db| 10f64.powf(db / 10.0))
    }

    /// AWGN variance in `k = 1` units, `E|d|^2 / SNR_o`.
    pub fn noise_sigma2_normalized(&self) -> f64 {
        SYMBOL_POWER / self.snr_linear()
    }

    pub fn n_symbols(&self) -> usize {
        self.n_bits / BITS_PER_SYMBOL
    }

    pub fn delay_symbols(&self) -> Result<usize> {
        delay_in_symbols(self.reflection_delay_m, self.group_index, self.baud_rate)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if !(self.baud_rate > 0.0 && self.baud_rate.is_finite()) {
            return bad(format!("baud_rate must be > 0, got {}", self.baud_rate));
        }
        if !(self.linewidth_hz >= 0.0 && self.linewidth_hz.is_finite()) {
            return bad(format!("linewidth_hz must be >= 0, got {}", self.linewidth_hz));
        }
        if let Some(db) = self.mpi_ratio_db {
            if !(db <= 0.0) {
                return bad(format!("mpi_ratio_db must be <= 0, got {db}"));
            }
        }
        if !(self.symbol_scale > 0.0 && self.symbol_scale.is_finite()) {
            return bad(format!("symbol_scale must be > 0, got {}", self.symbol_scale));
        }
        if let Some(snr) = self.snr_db {
            if !snr.is_finite() {
                return bad(format!("snr_db must be finite (omit it for noise-free), got {snr}"));
            }
        }
        if self.n_bits == 0 || self.n_bits % BITS_PER_SYMBOL != 0 {
            return bad(format!("n_bits must be even and > 0, got {}", self.n_bits));
        }
        let v_b = self.v_b()?;
        if !(v_b > 3.0 * self.symbol_scale) || !v_b.is_finite() {
            return bad(format!(
                "bias voltage {v_b} must exceed 3k = {} so the lowest level has positive power",
                3.0 * self.symbol_scale
            ));
        }
        self.delay_symbols()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn gray_mapping_examples() {
        assert_eq!(gray_encode(&[0, 0]).unwrap().symbols, vec![-3]);
        assert_eq!(gray_encode(&[1, 1]).unwrap().symbols, vec![1]);
        assert_eq!(gray_encode(&[0, 1, 1, 0]).unwrap().symbols, vec![-1, 3]);
        assert_eq!(gray_decode(&[-3]).unwrap(), vec![0, 0]);
        assert_eq!(gray_decode(&[3, -1]).unwrap(), vec![1, 0, 0, 1]);
    }

    #[test]
    fn gray_errors() {
        assert_eq!(gray_encode(&[0, 1, 1]), Err(Error::OddBitCount(3)));
        assert!(matches!(gray_decode(&[1, 2]), Err(Error::NotPam4Level(_))));
    }

    #[test]
    fn adjacent_levels_differ_in_one_bit() {
        for pair in LEVELS.windows(2) {
            let (a0, a1) = gray_bits(pair[0]).unwrap();
            let (b0, b1) = gray_bits(pair[1]).unwrap();
            assert_eq!((a0 ^ b0) + (a1 ^ b1), 1, "{pair:?}");
        }
    }

    #[test]
    fn bias_from_er_values() {
        // Bisection oracle on (V_b + 3)/(V_b - 3) = 10^0.4.
        assert_relative_eq!(bias_from_er(4.0, 1.0).unwrap(), 6.968_552_051_895_295, max_relative = 1e-12);
        assert_relative_eq!(bias_from_er(10.0, 1.0).unwrap(), 11.0 / 3.0, max_relative = 1e-12);
        assert_eq!(bias_from_er(f64::INFINITY, 2.0).unwrap(), 6.0);
        assert!(bias_from_er(0.0, 1.0).is_err());
        assert!(bias_from_er(-1.0, 1.0).is_err());
    }

    #[test]
    fn bias_from_er_reproduces_ratio() {
        for er in [0.01, 0.5, 4.0, 10.0, 25.0] {
            let vb = bias_from_er(er, 1.0).unwrap();
            let ratio = (vb + 3.0) / (vb - 3.0);
            assert_relative_eq!(ratio, 10f64.powf(er / 10.0), max_relative = 1e-12);
            assert!(vb > 3.0);
        }
    }

    #[test]
    fn delay_values() {
        assert_eq!(delay_in_symbols(0.0, 1.468, 106.25e9).unwrap(), 0);
        // 106.25e9 * 2000 * 1.468 / c = 1_040_553.19...
        assert_eq!(delay_in_symbols(2000.0, 1.468, 106.25e9).unwrap(), 1_040_553);
        assert_eq!(delay_in_symbols(2000.0, 1.468, 1e9).unwrap(), 9793);
        assert!(delay_in_symbols(-1.0, 1.468, 1e9).is_err());
        assert!(delay_in_symbols(1.0, 0.0, 1e9).is_err());
    }

    #[test]
    fn config_bias_exclusivity() {
        let mut c = LinkConfig::default();
        assert!(c.validate().is_ok());
        c.bias_voltage = Some(7.0);
        assert!(c.validate().is_err());
        c.extinction_ratio_db = None;
        assert!(c.validate().is_ok());
        assert_relative_eq!(c.er_db().unwrap(), 10.0 * (10.0f64 / 4.0).log10());
        c.bias_voltage = Some(3.0);
        assert!(c.validate().is_err());
        c.bias_voltage = None;
        assert!(c.validate().is_err());
    }

    #[test]
    fn config_rejects_bad_fields() {
        let base = LinkConfig::default();
        let cases: Vec<Box<dyn Fn(&mut LinkConfig)>> = vec![
            Box::new(|c| c.n_bits = 3),
            Box::new(|c| c.n_bits = 0),
            Box::new(|c| c.mpi_ratio_db = Some(1.0)),
            Box::new(|c| c.linewidth_hz = -1.0),
            Box::new(|c| c.baud_rate = 0.0),
            Box::new(|c| c.symbol_scale = 0.0),
            Box::new(|c| c.snr_db = Some(f64::NAN)),
        ];
        for f in cases {
            let mut c = base.clone();
            f(&mut c);
            assert!(matches!(c.validate(), Err(Error::InvalidConfig(_))), "{c:?}");
        }
    }

    #[test]
    fn config_json_defaults_fill_in() {
        let c: LinkConfig = serde_json::from_str(r#"{"mpi_ratio_db": -24.0, "snr_db": 18}"#).unwrap();
        assert_eq!(c.mpi_ratio_db, Some(-24.0));
        assert_eq!(c.baud_rate, 106.25e9);
        assert_relative_eq!(c.rho2(), 10f64.powf(-2.4));
        assert!(serde_json::from_str::<LinkConfig>(r#"{"bogus": 1}"#).is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn gray_round_trip(bits in proptest::collection::vec(0u8..2, 0..64).prop_map(|mut v| { if v.len() % 2 == 1 { v.pop(); } v })) {
                let frame = gray_encode(&bits).unwrap();
                prop_assert_eq!(gray_decode(&frame.symbols).unwrap(), bits);
            }

            #[test]
            fn bias_scale_covariance(er in 0.05f64..30.0, k in 0.01f64..100.0) {
                let scaled = bias_from_er(er, k).unwrap();
                let unit = bias_from_er(er, 1.0).unwrap();
                prop_assert!((scaled - k * unit).abs() <= 1e-12 * scaled);
                prop_assert!(scaled > 3.0 * k);
            }
        }
    }
}
