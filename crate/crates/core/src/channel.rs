//! One-sample-per-symbol synthesis of a single-reflection MPI channel.
//!
//! The signal and reflection fields carry independent Wiener phase
//! processes and beat on a square-law photodiode. AWGN is added to the
//! photocurrent with a variance referenced to the MPI-free signal power.

use std::f64::consts::PI;
use std::io::Write;
use std::path::Path;

use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{LinkConfig, Normalization, SymbolFrame, SYMBOL_POWER};

/// Receiver DC removal applied before dividing by `k`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MeanRemoval {
    EmpiricalMean,
    KnownBias(f64),
}

/// Received samples plus the genie side information used to produce them.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelRealization {
    /// Normalised receiver samples.
    pub y: Vec<f64>,
    /// Photocurrent before normalisation, volts.
    pub v_pd: Vec<f64>,
    /// Phase-noise envelope `cos(theta - theta')`.
    pub b_true: Vec<f64>,
    pub d: Vec<i8>,
    /// Reflection-path symbols (circular shift of `d`).
    pub d_delayed: Vec<i8>,
    /// AWGN variance actually injected, volts^2.
    pub noise_sigma2: f64,
    /// Bias in volts.
    pub v_b: f64,
    pub rho: f64,
}

impl ChannelRealization {
    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    /// Time average of `B[n]^2`.
    pub fn b_sq_mean(&self) -> f64 {
        mean(self.b_true.iter().map(|b| b * b), self.b_true.len())
    }
}

/// Per-symbol variance of the laser phase increments, `2 pi dnu T_s`.
pub fn phase_increment_variance(linewidth_hz: f64, baud_rate: f64) -> f64 {
    2.0 * PI * linewidth_hz / baud_rate
}

/// Wiener phase noise sampled once per symbol.
///
/// The starting phase is uniform on `[0, 2 pi)`.
pub fn gen_wiener_phase<R: Rng + ?Sized>(n: usize, linewidth_hz: f64, baud_rate: f64, rng: &mut R) -> Result<Vec<f64>> {
    if n == 0 {
        return Err(Error::Empty("phase sequence length"));
    }
    if !(linewidth_hz >= 0.0 && linewidth_hz.is_finite()) {
        return Err(Error::InvalidConfig(format!("linewidth must be >= 0, got {linewidth_hz}")));
    }
    if !(baud_rate > 0.0 && baud_rate.is_finite()) {
        return Err(Error::InvalidConfig(format!("baud rate must be > 0, got {baud_rate}")));
    }
    let sigma = phase_increment_variance(linewidth_hz, baud_rate).sqrt();
    let mut theta = Vec::with_capacity(n);
    let mut acc = rng.random::<f64>() * 2.0 * PI;
    theta.push(acc);
    for _ in 1..n {
        let z: f64 = rng.sample(StandardNormal);
        acc += sigma * z;
        theta.push(acc);
    }
    Ok(theta)
}

/// Noise-free square-law photocurrent `|E_s + E_r|^2` for one sample.
///
/// `signal_power` and `reflected_power` are the unattenuated optical powers
/// `V_b + k d` of the two paths; `rho` scales the reflected field.
#[inline]
pub fn square_law(signal_power: f64, reflected_power: f64, rho: f64, theta_s: f64, theta_r: f64) -> f64 {
    let e_s = Complex64::from_polar(signal_power.sqrt(), theta_s);
    let e_r = Complex64::from_polar(rho * reflected_power.sqrt(), theta_r);
    (e_s + e_r).norm_sqr()
}

/// Removes DC and renormalises by `k`.
pub fn normalize(v_pd: &[f64], k: f64, mode: MeanRemoval) -> Result<Vec<f64>> {
    if v_pd.is_empty() {
        return Err(Error::Empty("photocurrent"));
    }
    if k == 0.0 || !k.is_finite() {
        return Err(Error::InvalidConfig(format!("renormalisation scale k must be non-zero, got {k}")));
    }
    let offset = match mode {
        MeanRemoval::EmpiricalMean => mean(v_pd.iter().copied(), v_pd.len()),
        MeanRemoval::KnownBias(v_b) => v_b,
    };
    Ok(v_pd.iter().map(|v| (v - offset) / k).collect())
}

/// Circular shift so that `out[n] = d[n - delay mod N]`.
pub fn circular_delay(d: &[i8], delay: usize) -> Vec<i8> {
    let n = d.len();
    if n == 0 {
        return Vec::new();
    }
    let shift = delay % n;
    (0..n).map(|i| d[(i + n - shift) % n]).collect()
}

/// Builds the received waveform for `frame` under `config`.
///
/// Random draws happen in a fixed order (signal phase, reflection phase,
/// AWGN) so a given RNG state always yields the same realization.
pub fn synthesize<R: Rng + ?Sized>(
    config: &LinkConfig,
    frame: &SymbolFrame,
    rng: &mut R,
) -> Result<ChannelRealization> {
    if frame.is_empty() {
        return Err(Error::Empty("symbol frame"));
    }
    config.validate()?;
    let n = frame.len();
    let k = config.symbol_scale;
    let v_b = config.v_b()?;
    let floor_power = v_b - 3.0 * k;
    if floor_power <= 0.0 {
        return Err(Error::NegativePower(floor_power));
    }
    let rho = config.rho();

    let d = frame.symbols.clone();
    let d_delayed = circular_delay(&d, config.delay_symbols()?);

    let theta_s = gen_wiener_phase(n, config.linewidth_hz, config.baud_rate, rng)?;
    let theta_r = gen_wiener_phase(n, config.linewidth_hz, config.baud_rate, rng)?;

    let noise_sigma2 = k * k * SYMBOL_POWER / config.snr_linear();
    let noise_sigma = noise_sigma2.sqrt();

    let mut v_pd = Vec::with_capacity(n);
    let mut b_true = Vec::with_capacity(n);
    for i in 0..n {
        let p_sig = v_b + k * d[i] as f64;
        let p_ref = v_b + k * d_delayed[i] as f64;
        let mut v = square_law(p_sig, p_ref, rho, theta_s[i], theta_r[i]);
        if noise_sigma > 0.0 {
            let z: f64 = rng.sample(StandardNormal);
            v += noise_sigma * z;
        }
        v_pd.push(v);
        b_true.push((theta_s[i] - theta_r[i]).cos());
    }

    let mode = match config.normalization {
        Normalization::EmpiricalMean => MeanRemoval::EmpiricalMean,
        Normalization::KnownBias => MeanRemoval::KnownBias(v_b),
    };
    let y = normalize(&v_pd, k, mode)?;

    Ok(ChannelRealization { y, v_pd, b_true, d, d_delayed, noise_sigma2, v_b, rho })
}

/// Writes `y` as little-endian `f64` to `path` and the config as JSON to
/// `path` with `.json` appended.
pub fn write_raw_dump(path: &Path, realization: &ChannelRealization, config: &LinkConfig) -> Result<()> {
    let mut bytes = Vec::with_capacity(realization.y.len() * 8);
    for v in &realization.y {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    std::fs::write(path, bytes)?;

    #[derive(Serialize)]
    struct Sidecar<'a> {
        config: &'a LinkConfig,
        n_samples: usize,
        v_b: f64,
        rho: f64,
        noise_sigma2: f64,
        dtype: &'static str,
    }
    let sidecar = Sidecar {
        config,
        n_samples: realization.y.len(),
        v_b: realization.v_b,
        rho: realization.rho,
        noise_sigma2: realization.noise_sigma2,
        dtype: "float64-le",
    };
    let mut json_path = path.as_os_str().to_owned();
    json_path.push(".json");
    let mut f = std::fs::File::create(json_path)?;
    serde_json::to_writer_pretty(&mut f, &sidecar)?;
    f.write_all(b"\n")?;
    Ok(())
}

/// Reads back a dump written by [`write_raw_dump`].
pub fn read_raw_dump(path: &Path) -> Result<Vec<f64>> {
    let bytes = std::fs::read(path)?;
    if bytes.len() % 8 != 0 {
        return Err(Error::Format(format!("{} bytes is not a whole number of f64", bytes.len())));
    }
    Ok(bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8"))).collect())
}

pub(crate) fn mean(values: impl Iterator<Item = f64>, n: usize) -> f64 {
    if n == 0 {
        return 0.0;
    }
    values.sum::<f64>() / n as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::SymbolFrame;
    use crate::rng::rng_from_seed;
    use approx::assert_relative_eq;

    fn config(mpi: Option<f64>, snr: Option<f64>) -> LinkConfig {
        LinkConfig { mpi_ratio_db: mpi, snr_db: snr, ..LinkConfig::default() }
    }

    #[test]
    fn zero_linewidth_phase_is_constant() {
        let mut rng = rng_from_seed(3);
        let th = gen_wiener_phase(1000, 0.0, 1e9, &mut rng).unwrap();
        assert!((0.0..2.0 * PI).contains(&th[0]));
        assert!(th.iter().all(|&t| t == th[0]));
        assert!(gen_wiener_phase(10, -1.0, 1e9, &mut rng).is_err());
        assert!(gen_wiener_phase(0, 1.0, 1e9, &mut rng).is_err());
    }

    #[test]
    fn increment_variance_value() {
        assert_relative_eq!(phase_increment_variance(1e6, 106.25e9), 5.913_586_171_463_14e-5, max_relative = 1e-12);
    }

    #[test]
    fn wiener_increment_sample_variance() {
        let mut rng = rng_from_seed(11);
        let th = gen_wiener_phase(1_000_001, 1e6, 106.25e9, &mut rng).unwrap();
        let inc: Vec<f64> = th.windows(2).map(|w| w[1] - w[0]).collect();
        let m = inc.iter().sum::<f64>() / inc.len() as f64;
        let var = inc.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (inc.len() - 1) as f64;
        // chi-square: relative sd of the sample variance is sqrt(2/n) ~ 0.14%.
        assert_relative_eq!(var, 5.913_586e-5, max_relative = 0.01);
    }

    #[test]
    fn clean_channel_known_bias_returns_symbols() {
        let mut cfg = config(None, None);
        cfg.normalization = Normalization::KnownBias;
        let mut rng = rng_from_seed(5);
        let frame = SymbolFrame::random(20_000, &mut rng).unwrap();
        let r = synthesize(&cfg, &frame, &mut rng).unwrap();
        for (y, d) in r.y.iter().zip(&r.d) {
            assert!((y - *d as f64).abs() < 1e-12);
        }
        assert_eq!(r.noise_sigma2, 0.0);
    }

    #[test]
    fn known_bias_normalization_inverts_bias() {
        let v_b = 6.9685;
        let d = [-3.0, -1.0, 1.0, 3.0];
        let v: Vec<f64> = d.iter().map(|x| v_b + x).collect();
        let y = normalize(&v, 1.0, MeanRemoval::KnownBias(v_b)).unwrap();
        for (a, b) in y.iter().zip(d) {
            assert!((a - b).abs() < 1e-12);
        }
        let zeros = normalize(&[2.5; 17], 2.0, MeanRemoval::EmpiricalMean).unwrap();
        assert!(zeros.iter().all(|&z| z.abs() < 1e-15));
        assert!(normalize(&[1.0], 0.0, MeanRemoval::EmpiricalMean).is_err());
        assert!(normalize(&[], 1.0, MeanRemoval::EmpiricalMean).is_err());
    }

    #[test]
    fn awgn_variance_matches_snr() {
        let mut cfg = config(None, Some(20.0));
        cfg.normalization = Normalization::KnownBias;
        let mut rng = rng_from_seed(99);
        let frame = SymbolFrame::random(400_000, &mut rng).unwrap();
        let r = synthesize(&cfg, &frame, &mut rng).unwrap();
        let n = r.len() as f64;
        let var = r.y.iter().zip(&r.d).map(|(y, d)| (y - *d as f64).powi(2)).sum::<f64>() / n;
        assert_relative_eq!(var, 0.05, max_relative = 0.02);
        assert_relative_eq!(r.noise_sigma2, 0.05, max_relative = 1e-12);
    }

    #[test]
    fn square_law_matches_expansion() {
        let mut cfg = config(Some(-18.0), None);
        cfg.normalization = Normalization::KnownBias;
        let mut rng = rng_from_seed(21);
        let frame = SymbolFrame::random(200_000, &mut rng).unwrap();
        let r = synthesize(&cfg, &frame, &mut rng).unwrap();
        let rho = r.rho;
        let worst = (0..r.len())
            .map(|i| {
                let ps = r.v_b + r.d[i] as f64;
                let pr = r.v_b + r.d_delayed[i] as f64;
                let expansion = ps + rho * rho * pr + 2.0 * rho * (ps * pr).sqrt() * r.b_true[i];
                (r.v_pd[i] - expansion).abs()
            })
            .fold(0.0, f64::max);
        assert!(worst < 1e-10, "worst residual {worst}");
    }

    #[test]
    fn mean_removal_modes_differ_by_reflected_dc() {
        // Fast phase decorrelation so the beat term averages out within the block.
        let mut cfg = config(Some(-24.0), None);
        cfg.linewidth_hz = 1e9;
        cfg.n_bits = 2_000_000;
        let mut rng = rng_from_seed(8);
        let frame = SymbolFrame::random(cfg.n_bits, &mut rng).unwrap();
        let r = synthesize(&cfg, &frame, &mut rng).unwrap();
        let emp = normalize(&r.v_pd, 1.0, MeanRemoval::EmpiricalMean).unwrap();
        let known = normalize(&r.v_pd, 1.0, MeanRemoval::KnownBias(r.v_b)).unwrap();
        let shift = known[0] - emp[0];
        assert!(known.iter().zip(&emp).all(|(a, b)| ((a - b) - shift).abs() < 1e-9));

        let rho2 = r.rho * r.rho;
        let expected = rho2 * r.v_b;
        assert!((shift - expected).abs() < 0.02, "shift {shift} vs {expected}");

        // Exact bookkeeping: the constant is rho^2 V_b plus block means of the
        // zero-mean terms.
        let n = r.len() as f64;
        let zero_mean_terms: f64 = (0..r.len())
            .map(|i| {
                let ps = r.v_b + r.d[i] as f64;
                let pr = r.v_b + r.d_delayed[i] as f64;
                r.d[i] as f64 + rho2 * r.d_delayed[i] as f64 + 2.0 * r.rho * (ps * pr).sqrt() * r.b_true[i]
            })
            .sum::<f64>()
            / n;
        assert!((shift - expected - zero_mean_terms).abs() < 1e-9);
    }

    #[test]
    fn b_is_bounded_and_lengths_agree() {
        let cfg = config(Some(-21.0), Some(15.0));
        let mut rng = rng_from_seed(1);
        let frame = SymbolFrame::random(50_000, &mut rng).unwrap();
        let r = synthesize(&cfg, &frame, &mut rng).unwrap();
        assert!(r.b_true.iter().all(|b| b.abs() <= 1.0));
        assert_eq!(r.y.len(), r.b_true.len());
        assert_eq!(r.d.len(), r.d_delayed.len());
        assert_eq!(r.y.len(), r.d.len());
        let bsq = r.b_sq_mean();
        assert!((0.0..=1.0).contains(&bsq));
    }

    #[test]
    fn photocurrent_stays_above_floor() {
        let cfg = config(Some(-12.0), None);
        let mut rng = rng_from_seed(4);
        let frame = SymbolFrame::random(100_000, &mut rng).unwrap();
        let r = synthesize(&cfg, &frame, &mut rng).unwrap();
        let floor = ((r.v_b - 3.0).sqrt() - r.rho * (r.v_b + 3.0).sqrt()).powi(2);
        assert!(floor > 0.0);
        assert!(r.v_pd.iter().all(|&v| v >= floor - 1e-12));
    }

    #[test]
    fn circular_delay_shifts() {
        assert_eq!(circular_delay(&[1, 2, 3, 4], 1), vec![4, 1, 2, 3]);
        assert_eq!(circular_delay(&[1, 2, 3, 4], 6), vec![3, 4, 1, 2]);
        assert_eq!(circular_delay(&[1, 2, 3], 0), vec![1, 2, 3]);
    }

    #[test]
    fn synthesis_is_deterministic() {
        let cfg = config(Some(-24.0), Some(18.0));
        let run = || {
            let mut rng = rng_from_seed(77);
            let frame = SymbolFrame::random(10_000, &mut rng).unwrap();
            synthesize(&cfg, &frame, &mut rng).unwrap()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn awgn_variance_independent_of_mpi() {
        let a = config(None, Some(17.0));
        let b = config(Some(-20.0), Some(17.0));
        let mut rng = rng_from_seed(2);
        let frame = SymbolFrame::random(1000, &mut rng).unwrap();
        let ra = synthesize(&a, &frame, &mut rng).unwrap();
        let rb = synthesize(&b, &frame, &mut rng).unwrap();
        assert_eq!(ra.noise_sigma2, rb.noise_sigma2);
    }

    #[test]
    fn raw_dump_round_trip() {
        let dir = std::env::temp_dir().join(format!("mpi-pam4-dump-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("y.f64");
        let cfg = config(Some(-24.0), Some(18.0));
        let mut rng = rng_from_seed(6);
        let frame = SymbolFrame::random(200, &mut rng).unwrap();
        let r = synthesize(&cfg, &frame, &mut rng).unwrap();
        write_raw_dump(&path, &r, &cfg).unwrap();
        assert_eq!(read_raw_dump(&path).unwrap(), r.y);
        let sidecar: serde_json::Value =
            serde_json::from_slice(&std::fs::read(dir.join("y.f64.json")).unwrap()).unwrap();
        assert_eq!(sidecar["n_samples"], 100);
        std::fs::remove_dir_all(dir).unwrap();
    }
}
