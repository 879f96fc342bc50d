//! Adaptive drop-intensity control.
//!
//! Each class keeps a pair of candidate intensities around its current
//! value: a decrement candidate κ·α and an increment candidate κ/α (capped
//! at the total drop ratio γ). Training alternates the two candidates in
//! phases of `p` iterations, driven by one global phase clock shared by all
//! classes. At the end of each phase the reduction of that class's mean
//! replay-buffer loss is appended to the history of the candidate that was
//! active. When both histories hold `l` entries, a one-sided Welch t-test
//! decides whether one candidate reduced the loss significantly more; if so
//! the pair shifts in that direction, and either way both histories clear.

use std::collections::BTreeMap;

use crate::error::{arg_err, Error, Result};
use crate::tensor::Real;

#[derive(Debug, Clone)]
pub struct ShiftConfig {
    /// Shift step in (0,1); smaller steps move κ faster.
    pub alpha: Real,
    /// Iterations per phase.
    pub period: usize,
    /// History length required before a test.
    pub history_len: usize,
    /// Total drop ratio γ in percent; κ never exceeds it.
    pub gamma: Real,
    /// Initial drop intensity κ₀ in percent.
    pub kappa0: Real,
    /// One-sided significance level.
    pub significance: Real,
}

impl Default for ShiftConfig {
    fn default() -> Self {
        ShiftConfig {
            alpha: 0.9,
            period: 3,
            history_len: 10,
            gamma: 5.0,
            kappa0: 5.0,
            significance: 0.05,
        }
    }
}

impl ShiftConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0 < self.alpha && self.alpha < 1.0) {
            return Err(Error::InvalidConfig(format!("alpha {} not in (0,1)", self.alpha)));
        }
        if self.period == 0 {
            return Err(Error::InvalidConfig("period must be at least 1".into()));
        }
        if self.history_len < 2 {
            return Err(Error::InvalidConfig("history length must be at least 2".into()));
        }
        if self.kappa0 <= 0.0 || self.kappa0 > self.gamma {
            return Err(Error::InvalidConfig(format!(
                "kappa0 {} must be in (0, gamma {}]",
                self.kappa0, self.gamma
            )));
        }
        if !(0.0 < self.significance && self.significance < 0.5) {
            return Err(Error::InvalidConfig(format!(
                "significance {} not in (0, 0.5)",
                self.significance
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Dec,
    Inc,
}

impl Phase {
    pub fn toggled(self) -> Phase {
        match self {
            Phase::Dec => Phase::Inc,
            Phase::Inc => Phase::Dec,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Phase::Dec => "dec",
            Phase::Inc => "inc",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ShiftOutcome {
    Decremented,
    Incremented,
    Unchanged,
}

impl ShiftOutcome {
    pub fn label(self) -> &'static str {
        match self {
            ShiftOutcome::Decremented => "dec",
            ShiftOutcome::Incremented => "inc",
            ShiftOutcome::Unchanged => "unchanged",
        }
    }
}

/// Per-class intensity state: the candidate pair, the two loss-reduction
/// histories and the last measured loss.
#[derive(Debug, Clone)]
pub struct IntensityState {
    pub class_id: usize,
    pub kappa_dec: Real,
    pub kappa_inc: Real,
    pub h_dec: Vec<Real>,
    pub h_inc: Vec<Real>,
    pub l_old: Option<Real>,
}

impl IntensityState {
    pub fn new(class_id: usize, cfg: &ShiftConfig) -> IntensityState {
        IntensityState {
            class_id,
            kappa_dec: cfg.kappa0 * cfg.alpha,
            kappa_inc: (cfg.kappa0 / cfg.alpha).min(cfg.gamma),
            h_dec: Vec::new(),
            h_inc: Vec::new(),
            l_old: None,
        }
    }

    /// The candidate active under the given phase.
    pub fn current_kappa(&self, phase: Phase) -> Real {
        match phase {
            Phase::Dec => self.kappa_dec,
            Phase::Inc => self.kappa_inc,
        }
    }

    /// Boundary bookkeeping: append ΔL = L_old − L_new to the history of the
    /// phase that just completed. The first boundary after (re)initialization
    /// only records L_old.
    pub fn on_boundary(&mut self, completed: Phase, l_new: Real, cfg: &ShiftConfig) {
        if let Some(l_old) = self.l_old {
            let delta = l_old - l_new;
            let hist = match completed {
                Phase::Dec => &mut self.h_dec,
                Phase::Inc => &mut self.h_inc,
            };
            if hist.len() < cfg.history_len {
                hist.push(delta);
            }
        }
        self.l_old = Some(l_new);
    }

    pub fn histories_full(&self, cfg: &ShiftConfig) -> bool {
        self.h_dec.len() >= cfg.history_len && self.h_inc.len() >= cfg.history_len
    }

    /// Runs the t-test on the full histories and shifts the candidate pair
    /// toward a significant winner. Histories clear in every case. Returns
    /// the outcome and the p-value.
    pub fn maybe_shift(&mut self, cfg: &ShiftConfig) -> (ShiftOutcome, Real) {
        debug_assert!(self.histories_full(cfg));
        let p = t_test_p(&self.h_dec, &self.h_inc).expect("histories have >= 2 entries");
        let outcome = if p <= cfg.significance {
            self.kappa_inc = self.kappa_dec;
            self.kappa_dec *= cfg.alpha;
            ShiftOutcome::Decremented
        } else if p >= 1.0 - cfg.significance {
            self.kappa_dec = self.kappa_inc;
            self.kappa_inc = (self.kappa_inc / cfg.alpha).min(cfg.gamma);
            ShiftOutcome::Incremented
        } else {
            ShiftOutcome::Unchanged
        };
        self.reset_history();
        (outcome, p)
    }

    pub fn reset_history(&mut self) {
        self.h_dec.clear();
        self.h_inc.clear();
    }

    /// Task boundary: the loss landscape moves, so measurements restart.
    pub fn reset_measurement(&mut self) {
        self.reset_history();
        self.l_old = None;
    }
}

/// One κ-trace row, emitted at each phase boundary per class.
#[derive(Debug, Clone)]
pub struct TraceEvent {
    pub iteration: usize,
    pub class_id: usize,
    pub phase: Phase,
    pub kappa: Real,
    pub p_value: Option<Real>,
    pub outcome: Option<ShiftOutcome>,
}

/// Drives all per-class states off one global phase clock.
pub struct IntensityController {
    cfg: ShiftConfig,
    states: BTreeMap<usize, IntensityState>,
    phase: Phase,
    iter_in_phase: usize,
    iteration: usize,
    skipped_boundaries: usize,
    trace: Vec<TraceEvent>,
}

impl IntensityController {
    pub fn new(cfg: ShiftConfig, class_ids: impl IntoIterator<Item = usize>) -> Result<Self> {
        cfg.validate()?;
        let states = class_ids.into_iter().map(|c| (c, IntensityState::new(c, &cfg))).collect();
        Ok(IntensityController {
            cfg,
            states,
            phase: Phase::Dec,
            iter_in_phase: 0,
            iteration: 0,
            skipped_boundaries: 0,
            trace: Vec::new(),
        })
    }

    pub fn config(&self) -> &ShiftConfig {
        &self.cfg
    }

    pub fn phase(&self) -> Phase {
        self.phase
    }

    pub fn states(&self) -> impl Iterator<Item = &IntensityState> {
        self.states.values()
    }

    pub fn skipped_boundaries(&self) -> usize {
        self.skipped_boundaries
    }

    /// Current κ for a class under the global phase, in percent.
    pub fn kappa_for(&self, class_id: usize) -> Real {
        self.states
            .get(&class_id)
            .map(|s| s.current_kappa(self.phase))
            .unwrap_or(self.cfg.kappa0)
    }

    /// Advances the iteration clock; true when a phase boundary is due and
    /// the caller must supply per-class buffer losses via
    /// [`IntensityController::on_boundary`].
    pub fn advance(&mut self) -> bool {
        self.iteration += 1;
        self.iter_in_phase += 1;
        self.iter_in_phase == self.cfg.period
    }

    /// Consumes per-class mean buffer losses at a phase boundary. Classes
    /// absent from the buffer are skipped and counted. Emits trace rows and
    /// returns any shift outcomes that fired.
    pub fn on_boundary(&mut self, losses: &BTreeMap<usize, Real>) -> Vec<(usize, ShiftOutcome)> {
        debug_assert_eq!(self.iter_in_phase, self.cfg.period);
        let completed = self.phase;
        let mut outcomes = Vec::new();
        for (&class_id, state) in self.states.iter_mut() {
            match losses.get(&class_id) {
                Some(&l_new) => {
                    state.on_boundary(completed, l_new, &self.cfg);
                    let (p_value, outcome) = if state.histories_full(&self.cfg) {
                        let (outcome, p) = state.maybe_shift(&self.cfg);
                        outcomes.push((class_id, outcome));
                        (Some(p), Some(outcome))
                    } else {
                        (None, None)
                    };
                    self.trace.push(TraceEvent {
                        iteration: self.iteration,
                        class_id,
                        phase: completed,
                        kappa: state.current_kappa(completed),
                        p_value,
                        outcome,
                    });
                }
                None => self.skipped_boundaries += 1,
            }
        }
        self.phase = self.phase.toggled();
        self.iter_in_phase = 0;
        outcomes
    }

    /// Task boundary: clears histories and loss anchors for every class and
    /// restarts the phase clock. κ values persist.
    pub fn reset_for_new_task(&mut self) {
        for state in self.states.values_mut() {
            state.reset_measurement();
        }
        self.phase = Phase::Dec;
        self.iter_in_phase = 0;
    }

    pub fn trace(&self) -> &[TraceEvent] {
        &self.trace
    }

    /// Final (κ_dec, κ_inc) per class.
    pub fn kappa_endpoints(&self) -> BTreeMap<usize, (Real, Real)> {
        self.states.iter().map(|(&c, s)| (c, (s.kappa_dec, s.kappa_inc))).collect()
    }
}

/// One-sided Welch two-sample t-test p-value for the alternative
/// `mean(a) > mean(b)`: small p favors `a`.
///
/// Both samples need at least two entries. When both variances vanish the
/// test degenerates to 0, 1/2 or 1 by comparing the means directly.
pub fn t_test_p(a: &[Real], b: &[Real]) -> Result<Real> {
    if a.len() < 2 || b.len() < 2 {
        return Err(arg_err("t_test_p", format!("samples of {} and {}", a.len(), b.len())));
    }
    let (ma, va) = mean_var(a);
    let (mb, vb) = mean_var(b);
    if va == 0.0 && vb == 0.0 {
        return Ok(if ma > mb {
            0.0
        } else if ma < mb {
            1.0
        } else {
            0.5
        });
    }
    let sa = va / a.len() as Real;
    let sb = vb / b.len() as Real;
    let se2 = sa + sb;
    let t = (ma - mb) / se2.sqrt();
    // Welch–Satterthwaite degrees of freedom
    let df = se2 * se2 / (sa * sa / (a.len() as Real - 1.0) + sb * sb / (b.len() as Real - 1.0));
    Ok(student_t_upper_tail(t, df))
}

fn mean_var(xs: &[Real]) -> (Real, Real) {
    let n = xs.len() as Real;
    let mean = xs.iter().sum::<Real>() / n;
    let var = xs.iter().map(|&x| (x - mean) * (x - mean)).sum::<Real>() / (n - 1.0);
    (mean, var)
}

/// `P(T > t)` for Student's t via the regularized incomplete beta function.
///
/// With `x = df/(df + t²)` the tail is `I_x(df/2, 1/2) / 2` for t ≥ 0 and
/// its reflection for t < 0; the two calls for ±t share the identical `x`,
/// so `p(t) + p(−t) = 1` holds exactly.
pub fn student_t_upper_tail(t: Real, df: Real) -> Real {
    let x = df / (df + t * t);
    let half = 0.5 * inc_beta_reg(x, df / 2.0, 0.5);
    if t >= 0.0 {
        half
    } else {
        1.0 - half
    }
}

/// Natural log of the gamma function (Lanczos approximation).
fn ln_gamma(z: Real) -> Real {
    const COEFFS: [Real; 6] = [
        76.180_091_729_471_46,
        -86.505_320_329_416_77,
        24.014_098_240_830_91,
        -1.231_739_572_450_155,
        0.120_865_097_386_617_9e-2,
        -0.539_523_938_495_3e-5,
    ];
    let mut ser = 1.000_000_000_190_015;
    let mut denom = z;
    for coeff in COEFFS {
        denom += 1.0;
        ser += coeff / denom;
    }
    let tmp = z + 5.5;
    (2.506_628_274_631_000_5 * ser / z).ln() - tmp + (z + 0.5) * tmp.ln()
}

/// Regularized incomplete beta function `I_x(a, b)` via the continued
/// fraction of the incomplete beta integral.
fn inc_beta_reg(x: Real, a: Real, b: Real) -> Real {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let front = (ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b) + a * x.ln() + b * (1.0 - x).ln())
        .exp();
    if x < (a + 1.0) / (a + b + 2.0) {
        front * beta_cf(x, a, b) / a
    } else {
        1.0 - front * beta_cf(1.0 - x, b, a) / b
    }
}

/// Lentz continued-fraction evaluation for the incomplete beta.
fn beta_cf(x: Real, a: Real, b: Real) -> Real {
    const MAX_ITER: usize = 300;
    const TINY: Real = 1e-300;
    const EPS: Real = 1e-15;

    let qab = a + b;
    let qap = a + 1.0;
    let qam = a - 1.0;
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < TINY {
        d = TINY;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..=MAX_ITER {
        let m = m as Real;
        let m2 = 2.0 * m;
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        h *= d * c;
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < EPS {
            break;
        }
    }
    h
}
