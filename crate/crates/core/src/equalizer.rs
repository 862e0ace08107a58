//! Two-stage feed-forward equalizer with MPI bias tracking.
//!
//! Stage 1 is an ordinary LMS FFE with a scalar DC bias subtracted from its
//! output (common bias compensation). Its hard decisions are delayed by a
//! shift register and handed to stage 2, which adapts its taps the same way
//! but scales its bias by `sqrt(d_hat + V_b)`, the level dependence of the
//! signal-reflection beat:
//!
//! ```text
//! z    = w . y + b sqrt(d_hat + V_b)
//! e    = z - d_hat
//! w   <- w - mu_w e y
//! b   <- b - mu_b e sqrt(d_hat + V_b)
//! ```
//!
//! The constant `2 rho sqrt(V_b)` of the beat is absorbed into `b`.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::genie::{count_bit_errors, decide_pam4, realize};
use crate::model::{level_index, LinkConfig, LEVELS};

/// Where the LMS error reference comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdaptMode {
    /// Known training symbols.
    DataAided,
    /// The slicer (stage 1) or the stage-1 decision (stage 2).
    DecisionDirected,
}

/// Result of one equalizer step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOutput {
    pub soft: f64,
    pub decision: i8,
    pub error: f64,
}

/// Adaptive state of one FFE stage.
#[derive(Debug, Clone, PartialEq)]
pub struct FfeState {
    pub w: Vec<f64>,
    pub bias: f64,
    pub mu_w: f64,
    pub mu_b: f64,
    pub mode: AdaptMode,
    /// Stage-1 decision register depth (only meaningful for stage 2).
    pub align_delay: usize,
    steps: usize,
}

impl FfeState {
    /// Centre-spike taps, zero bias, decision register matched to the
    /// centre tap.
    pub fn new(n_taps: usize, mu_w: f64, mu_b: f64) -> Result<Self> {
        if n_taps == 0 || n_taps % 2 == 0 {
            return Err(Error::InvalidConfig(format!("tap count must be odd, got {n_taps}")));
        }
        if !(mu_w > 0.0 && mu_w.is_finite()) || !(mu_b > 0.0 && mu_b.is_finite()) {
            return Err(Error::InvalidConfig(format!("step sizes must be > 0, got mu_w={mu_w}, mu_b={mu_b}")));
        }
        let mut w = vec![0.0; n_taps];
        w[n_taps / 2] = 1.0;
        Ok(Self { w, bias: 0.0, mu_w, mu_b, mode: AdaptMode::DataAided, align_delay: n_taps / 2, steps: 0 })
    }

    pub fn n_taps(&self) -> usize {
        self.w.len()
    }

    pub fn center(&self) -> usize {
        self.w.len() / 2
    }

    /// Number of updates applied so far.
    pub fn steps(&self) -> usize {
        self.steps
    }

    fn dot(&self, window: &[f64]) -> f64 {
        self.w.iter().zip(window).map(|(w, y)| w * y).sum()
    }

    fn check_window(&self, window: &[f64]) -> Result<()> {
        if window.len() != self.w.len() {
            return Err(Error::InvalidConfig(format!("window of {} samples for {} taps", window.len(), self.w.len())));
        }
        Ok(())
    }

    fn target(&self, decision: i8, reference: Option<i8>) -> Result<i8> {
        match (self.mode, reference) {
            (AdaptMode::DataAided, Some(r)) => Ok(r),
            (AdaptMode::DataAided, None) => {
                Err(Error::InvalidConfig("data-aided step without a reference symbol".into()))
            }
            (AdaptMode::DecisionDirected, _) => Ok(decision),
        }
    }

    fn finish(&mut self) -> Result<()> {
        let step = self.steps;
        self.steps += 1;
        if self.bias.is_finite() && self.w.iter().all(|w| w.is_finite()) {
            Ok(())
        } else {
            Err(Error::Diverged { step })
        }
    }

    /// Stage-1 soft output `w . y - bias`.
    pub fn stage1_soft(&self, window: &[f64]) -> f64 {
        self.dot(window) - self.bias
    }

    /// Stage-2 soft output `w . y + bias sqrt(d_hat + V_b)`.
    pub fn stage2_soft(&self, window: &[f64], d_hat: i8, v_b: f64) -> Result<f64> {
        Ok(self.dot(window) + self.bias * bias_scale(d_hat, v_b)?)
    }

    /// One LMS step of the common-bias FFE.
    pub fn stage1_step(&mut self, window: &[f64], reference: Option<i8>) -> Result<StepOutput> {
        self.check_window(window)?;
        let soft = self.stage1_soft(window);
        let decision = decide_pam4(soft)?;
        let error = soft - self.target(decision, reference)? as f64;
        for (w, y) in self.w.iter_mut().zip(window) {
            *w -= self.mu_w * error * y;
        }
        self.bias += self.mu_b * error;
        self.finish()?;
        Ok(StepOutput { soft, decision, error })
    }

    /// One LMS step of the decision-scaled bias FFE.
    ///
    /// `d_hat` is the aligned stage-1 decision. In data-aided mode the
    /// training symbol replaces it both as error reference and in the bias
    /// scaling.
    pub fn stage2_step(&mut self, window: &[f64], d_hat: i8, v_b: f64, reference: Option<i8>) -> Result<StepOutput> {
        self.check_window(window)?;
        let level = self.target(d_hat, reference)?;
        let scale = bias_scale(level, v_b)?;
        let soft = self.dot(window) + self.bias * scale;
        let decision = decide_pam4(soft)?;
        let error = soft - level as f64;
        for (w, y) in self.w.iter_mut().zip(window) {
            *w -= self.mu_w * error * y;
        }
        self.bias -= self.mu_b * error * scale;
        self.finish()?;
        Ok(StepOutput { soft, decision, error })
    }
}

/// `sqrt(d_hat + V_b)`, the level scaling of the stage-2 bias.
#[inline]
pub fn bias_scale(d_hat: i8, v_b: f64) -> Result<f64> {
    let radicand = d_hat as f64 + v_b;
    if !(radicand > 0.0) {
        return Err(Error::NegativePower(radicand));
    }
    Ok(radicand.sqrt())
}

/// Fills `out` with the `out.len()` samples centred on `n`, zero-padded
/// outside `y`.
pub fn centered_window(y: &[f64], n: usize, out: &mut [f64]) {
    let c = out.len() / 2;
    for (j, slot) in out.iter_mut().enumerate() {
        *slot = (n + j).checked_sub(c).and_then(|i| y.get(i)).copied().unwrap_or(0.0);
    }
}

/// Parameters of the two-stage equalizer run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EqualizerConfig {
    pub n_taps: usize,
    pub mu_w: f64,
    pub mu_b: f64,
    /// Symbols of data-aided training before switching to decision-directed.
    pub train_symbols: usize,
    /// Symbols excluded from the statistics while the loops converge.
    pub discard_symbols: usize,
    /// Stage-1 decision register depth; `None` matches the centre tap.
    pub align_delay: Option<usize>,
}

impl Default for EqualizerConfig {
    fn default() -> Self {
        Self { n_taps: 7, mu_w: 1e-3, mu_b: 5e-3, train_symbols: 20_000, discard_symbols: 10_000, align_delay: None }
    }
}

/// Soft-output statistics of one level.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LevelStat {
    pub count: u64,
    pub mean: f64,
    pub variance: f64,
}

/// Per-level statistics, grouped by the transmitted symbol.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LevelStats {
    /// Indexed like [`LEVELS`].
    pub levels: [LevelStat; 4],
}

impl LevelStats {
    /// Two-pass mean and population variance of `soft` grouped by `sent`,
    /// over indices where `keep` is true.
    pub fn collect(sent: &[i8], soft: &[f64], keep: impl Fn(usize) -> bool) -> Self {
        let mut sum = [0.0; 4];
        let mut count = [0u64; 4];
        for (i, (&d, &z)) in sent.iter().zip(soft).enumerate() {
            if let (true, Some(l)) = (keep(i), level_index(d)) {
                sum[l] += z;
                count[l] += 1;
            }
        }
        let mean: [f64; 4] = std::array::from_fn(|l| if count[l] > 0 { sum[l] / count[l] as f64 } else { 0.0 });
        let mut sq = [0.0; 4];
        for (i, (&d, &z)) in sent.iter().zip(soft).enumerate() {
            if let (true, Some(l)) = (keep(i), level_index(d)) {
                sq[l] += (z - mean[l]).powi(2);
            }
        }
        let levels = std::array::from_fn(|l| LevelStat {
            count: count[l],
            mean: mean[l],
            variance: if count[l] > 0 { sq[l] / count[l] as f64 } else { 0.0 },
        });
        Self { levels }
    }

    pub fn get(&self, level: i8) -> Option<&LevelStat> {
        level_index(level).map(|i| &self.levels[i])
    }

    pub fn total_count(&self) -> u64 {
        self.levels.iter().map(|l| l.count).sum()
    }
}

/// Outcome of [`run_two_stage`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TwoStageReport {
    pub before: LevelStats,
    pub common_bias: LevelStats,
    pub modified_bias: LevelStats,
    /// Mean `(z - d)^2` of each stage over the analysed symbols.
    pub mse_stage1: f64,
    pub mse_stage2: f64,
    pub ber_stage1: f64,
    pub ber_stage2: f64,
    pub n_analyzed: usize,
    pub align_delay: usize,
}

impl TwoStageReport {
    /// Rows `(level, stage, count, mean, variance)` in level-major order.
    pub fn rows(&self) -> Vec<(i8, &'static str, LevelStat)> {
        let stages =
            [("raw", &self.before), ("common_bias", &self.common_bias), ("modified_bias", &self.modified_bias)];
        let mut rows = Vec::with_capacity(12);
        for (l, &level) in LEVELS.iter().enumerate() {
            for (name, stats) in stages {
                rows.push((level, name, stats.levels[l]));
            }
        }
        rows
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["level", "stage", "count", "mean", "variance"])?;
        for (level, stage, s) in self.rows() {
            w.write_record([
                level.to_string(),
                stage.to_string(),
                s.count.to_string(),
                s.mean.to_string(),
                s.variance.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Runs both stages over received samples `y` of transmitted symbols `d`.
///
/// `v_b` is in `k = 1` units.
pub fn run_two_stage_on(y: &[f64], d: &[i8], v_b: f64, eq: &EqualizerConfig) -> Result<TwoStageReport> {
    if y.len() != d.len() {
        return Err(Error::InvalidConfig(format!("{} samples for {} symbols", y.len(), d.len())));
    }
    if y.is_empty() {
        return Err(Error::Empty("received samples"));
    }
    let n = y.len();
    let mut stage1 = FfeState::new(eq.n_taps, eq.mu_w, eq.mu_b)?;
    let mut stage2 = FfeState::new(eq.n_taps, eq.mu_w, eq.mu_b)?;
    let align = eq.align_delay.unwrap_or(stage1.center());
    stage2.align_delay = align;
    let c = stage1.center();
    let mut window = vec![0.0; eq.n_taps];

    let mut soft1 = Vec::with_capacity(n);
    let mut coarse = Vec::with_capacity(n);
    for i in 0..n {
        stage1.mode = if i < eq.train_symbols { AdaptMode::DataAided } else { AdaptMode::DecisionDirected };
        centered_window(y, i, &mut window);
        let out = stage1.stage1_step(&window, Some(d[i]))?;
        soft1.push(out.soft);
        coarse.push(out.decision);
    }

    // Decisions leave stage 1 with its group delay `c`; a register of depth
    // `align` holds them back, so symbol i is paired with coarse[i + c - align].
    let mut soft2 = vec![f64::NAN; n];
    let mut valid = vec![false; n];
    for i in 0..n {
        let Some(m) = (i + c).checked_sub(align).filter(|&m| m < n) else {
            continue;
        };
        stage2.mode = if i < eq.train_symbols { AdaptMode::DataAided } else { AdaptMode::DecisionDirected };
        centered_window(y, i, &mut window);
        let out = stage2.stage2_step(&window, coarse[m], v_b, Some(d[i]))?;
        soft2[i] = out.soft;
        valid[i] = true;
    }

    let keep = |i: usize| i >= eq.discard_symbols && valid[i];
    let analyzed: Vec<usize> = (0..n).filter(|&i| keep(i)).collect();
    if analyzed.is_empty() {
        return Err(Error::Empty("symbols left after the convergence discard"));
    }
    let mse =
        |soft: &[f64]| analyzed.iter().map(|&i| (soft[i] - d[i] as f64).powi(2)).sum::<f64>() / analyzed.len() as f64;
    let ber = |soft: &[f64]| -> Result<f64> {
        let sent: Vec<i8> = analyzed.iter().map(|&i| d[i]).collect();
        let z: Vec<f64> = analyzed.iter().map(|&i| soft[i]).collect();
        Ok(count_bit_errors(&sent, &z)? as f64 / (2 * analyzed.len()) as f64)
    };

    Ok(TwoStageReport {
        before: LevelStats::collect(d, y, keep),
        common_bias: LevelStats::collect(d, &soft1, keep),
        modified_bias: LevelStats::collect(d, &soft2, keep),
        mse_stage1: mse(&soft1),
        mse_stage2: mse(&soft2),
        ber_stage1: ber(&soft1)?,
        ber_stage2: ber(&soft2)?,
        n_analyzed: analyzed.len(),
        align_delay: align,
    })
}

/// Synthesises the channel for `config` and runs both stages on it.
pub fn run_two_stage(config: &LinkConfig, eq: &EqualizerConfig) -> Result<TwoStageReport> {
    let r = realize(config)?;
    run_two_stage_on(&r.y, &r.d, config.v_b_normalized()?, eq)
}
