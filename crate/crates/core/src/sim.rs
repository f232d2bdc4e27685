//! Security evaluator: analytic compromise formulas, Monte Carlo adversary
//! trials against the rejuvenating fleet, exponential trend fitting, and the
//! resistance calculator that turns a fit plus a request budget into seconds.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::fixed::{Fixed, RollingSum};

#[derive(Debug, Clone, PartialEq)]
pub struct SimParams {
    pub n: u32,
    pub m: u32,
    /// Replicas cleansed per adversarial request; fractional values accrue.
    pub b: Fixed,
    pub trials: u32,
    pub seed: u64,
}

impl SimParams {
    pub fn validate(&self) -> Result<(), SimError> {
        if self.n == 0 || self.m == 0 {
            return Err(SimError::EmptyFleet);
        }
        if self.trials == 0 {
            return Err(SimError::NoTrials);
        }
        Ok(())
    }
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum SimError {
    #[error("fleet dimensions must be at least 1x1")]
    EmptyFleet,
    #[error("at least one trial is required")]
    NoTrials,
    #[error("trend fitting needs at least 3 points, got {0}")]
    TooFewPoints(usize),
    #[error("trend fitting needs positive medians, got {0}")]
    NonPositiveMedian(f64),
    #[error("trend fitting needs at least two distinct budget values")]
    DegenerateFit,
    #[error("adversarial fraction must lie in (0, 1], got {0}")]
    InvalidFraction(f64),
    #[error("adversarial request rate must be positive, got {0}")]
    InvalidRate(f64),
    #[error("vcpu count must be positive")]
    ZeroVcpus,
}

/// Which replicas the adversary currently controls, with per-pool tallies.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CompromiseState {
    m: u32,
    /// Flattened flags, index = pool * m + replica.
    flags: Vec<bool>,
    counts: Vec<u32>,
    total: u32,
}

impl CompromiseState {
    pub fn new(n: u32, m: u32) -> CompromiseState {
        CompromiseState {
            m,
            flags: vec![false; (n * m) as usize],
            counts: vec![0; n as usize],
            total: 0,
        }
    }

    pub fn pools(&self) -> u32 {
        self.counts.len() as u32
    }

    pub fn replicas_per_pool(&self) -> u32 {
        self.m
    }

    /// Per-pool compromised counts.
    pub fn counts(&self) -> &[u32] {
        &self.counts
    }

    pub fn total(&self) -> u32 {
        self.total
    }

    /// Compromised fraction of the whole fleet.
    pub fn gamma(&self) -> f64 {
        self.total as f64 / self.flags.len() as f64
    }

    pub fn is_compromised(&self, pool: usize, replica: u32) -> bool {
        self.flags[pool * self.m as usize + replica as usize]
    }

    /// Marks one replica compromised; false if it already was.
    pub fn compromise(&mut self, pool: usize, replica: u32) -> bool {
        let flag = &mut self.flags[pool * self.m as usize + replica as usize];
        if *flag {
            return false;
        }
        *flag = true;
        self.counts[pool] += 1;
        self.total += 1;
        true
    }

    fn cleanse_flat(&mut self, index: usize) -> bool {
        if !self.flags[index] {
            return false;
        }
        self.flags[index] = false;
        self.counts[index / self.m as usize] -= 1;
        self.total -= 1;
        true
    }
}

/// Probability a uniformly drawn serving set is entirely compromised.
pub fn p_success(counts: &[u32], m: u32) -> f64 {
    counts.iter().map(|&c| c as f64 / m as f64).product()
}

/// Upper bound on `p_success` over every split of `c` across pools;
/// tight exactly when the split is balanced.
pub fn p_success_bound(c: u32, n: u32, m: u32) -> f64 {
    ((c as f64 / n as f64) / m as f64).powi(n as i32)
}

/// Upper bound on the probability that cleansing `b` uniformly chosen
/// replicas misses every compromised one.
pub fn cleanse_zero_bound(c: u32, n: u32, m: u32, b: f64) -> f64 {
    let gamma = c as f64 / (n as f64 * m as f64);
    (-2.0 * b * gamma * gamma).exp()
}

/// Exact probability that drawing `b` of `total` replicas without
/// replacement hits none of the `c` compromised ones.
pub fn cleanse_zero_exact(c: u32, b: u32, total: u32) -> f64 {
    if c == 0 || b == 0 {
        return 1.0;
    }
    if b > total - c {
        return 0.0;
    }
    let mut p = 1.0;
    for i in 0..b {
        p *= (total - c - i) as f64 / (total - i) as f64;
    }
    p
}

/// Cleanses `drawn` distinct replicas chosen uniformly from the whole
/// fleet; returns how many were actually compromised. Draws exceeding the
/// fleet size cleanse everything.
pub fn sample_cleanse(state: &mut CompromiseState, drawn: u32, rng: &mut impl Rng) -> u32 {
    let mut perm: Vec<u32> = (0..state.flags.len() as u32).collect();
    cleanse_with_scratch(state, drawn, rng, &mut perm)
}

/// `perm` must be a permutation of 0..n*m; reused across calls, a partial
/// shuffle of a permutation still draws a uniform subset.
fn cleanse_with_scratch(
    state: &mut CompromiseState,
    drawn: u32,
    rng: &mut impl Rng,
    perm: &mut [u32],
) -> u32 {
    let total = perm.len();
    let take = (drawn as usize).min(total);
    let mut removed = 0;
    for i in 0..take {
        let j = rng.gen_range(i..total);
        perm.swap(i, j);
        if state.cleanse_flat(perm[i] as usize) {
            removed += 1;
        }
    }
    removed
}

/// Among the drawn set's uncompromised members, compromises the one whose
/// pool holds the fewest compromised replicas (ties to the lowest pool
/// index). Returns that pool, or None when the set is fully compromised.
pub fn compromise_greedy(state: &mut CompromiseState, set: &[u32]) -> Option<usize> {
    let mut target: Option<usize> = None;
    for (pool, &replica) in set.iter().enumerate() {
        if !state.is_compromised(pool, replica) {
            match target {
                Some(best) if state.counts[pool] >= state.counts[best] => {}
                _ => target = Some(pool),
            }
        }
    }
    let pool = target?;
    state.compromise(pool, set[pool]);
    Some(pool)
}

/// Plays one adversary against a fresh fleet: each request draws a uniform
/// serving set, wins if it is fully compromised, otherwise compromises one
/// member greedily, after which the defense cleanses per its budget.
/// Returns the number of requests until the win.
pub fn run_trial(params: &SimParams, rng: &mut impl Rng) -> u64 {
    let n = params.n as usize;
    let m = params.m;
    let mut state = CompromiseState::new(params.n, params.m);
    let mut budget = RollingSum::new(params.b);
    let mut perm: Vec<u32> = (0..params.n * params.m).collect();
    let mut set = vec![0u32; n];
    let mut requests: u64 = 0;
    loop {
        requests += 1;
        for slot in set.iter_mut() {
            *slot = rng.gen_range(0..m);
        }
        if compromise_greedy(&mut state, &set).is_none() {
            return requests;
        }
        debug_assert!(
            p_success(state.counts(), m)
                <= p_success_bound(state.total(), params.n, m) + 1e-12,
            "balanced-split bound violated at counts {:?}",
            state.counts()
        );
        let due = budget.advance();
        if due > 0 {
            cleanse_with_scratch(&mut state, due.min(u32::MAX as u64) as u32, rng, &mut perm);
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimOutcome {
    /// Requests-until-success per trial, in trial order.
    pub samples: Vec<u64>,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub p5: f64,
    pub p95: f64,
}

pub const OUTCOME_CSV_HEADER: &str = "n,m,b,q1,median,q3,p5,p95,trials,seed";

impl SimOutcome {
    pub fn csv_row(&self, params: &SimParams) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{}",
            params.n,
            params.m,
            params.b,
            self.q1,
            self.median,
            self.q3,
            self.p5,
            self.p95,
            params.trials,
            params.seed
        )
    }
}

/// Linear interpolation between order statistics (the R type-7 / NumPy
/// default definition).
pub fn quantile(sorted: &[f64], p: f64) -> f64 {
    assert!(!sorted.is_empty(), "quantile of empty sample");
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Runs the configured trials and summarizes the distribution. Each trial
/// seeds its own generator stream from (seed, trial index), so the result
/// is identical however the trials are scheduled across threads.
pub fn run_experiment(params: &SimParams) -> Result<SimOutcome, SimError> {
    params.validate()?;
    let samples: Vec<u64> = (0..params.trials)
        .into_par_iter()
        .map(|trial| {
            let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
            rng.set_stream(trial as u64);
            run_trial(params, &mut rng)
        })
        .collect();
    let mut sorted: Vec<f64> = samples.iter().map(|&s| s as f64).collect();
    sorted.sort_unstable_by(f64::total_cmp);
    Ok(SimOutcome {
        q1: quantile(&sorted, 0.25),
        median: quantile(&sorted, 0.50),
        q3: quantile(&sorted, 0.75),
        p5: quantile(&sorted, 0.05),
        p95: quantile(&sorted, 0.95),
        samples,
    })
}

/// Fitted `y = amplitude * exp(rate * b)` trend.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrendFit {
    pub amplitude: f64,
    pub rate: f64,
    /// Coefficient of determination of the least-squares line in log space.
    pub r_squared_log: f64,
    /// The same fit scored against the raw medians; can be negative when
    /// the exponential is a poor description of the data.
    pub r_squared_linear: f64,
}

pub const TREND_CSV_HEADER: &str = "n,m,amplitude,rate,r_squared_log,r_squared_linear";

impl TrendFit {
    pub fn predict(&self, b: f64) -> f64 {
        self.amplitude * (self.rate * b).exp()
    }

    pub fn csv_row(&self, n: u32, m: u32) -> String {
        format!(
            "{},{},{},{},{},{}",
            n, m, self.amplitude, self.rate, self.r_squared_log, self.r_squared_linear
        )
    }
}

/// Least-squares fit of ln(median) against b.
pub fn fit_trend(points: &[(f64, f64)]) -> Result<TrendFit, SimError> {
    if points.len() < 3 {
        return Err(SimError::TooFewPoints(points.len()));
    }
    for &(_, y) in points {
        if y <= 0.0 {
            return Err(SimError::NonPositiveMedian(y));
        }
    }
    let len = points.len() as f64;
    let mean_b = points.iter().map(|&(b, _)| b).sum::<f64>() / len;
    let mean_ln = points.iter().map(|&(_, y)| y.ln()).sum::<f64>() / len;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    for &(b, y) in points {
        sxx += (b - mean_b) * (b - mean_b);
        sxy += (b - mean_b) * (y.ln() - mean_ln);
    }
    if sxx == 0.0 {
        return Err(SimError::DegenerateFit);
    }
    let rate = sxy / sxx;
    let amplitude = (mean_ln - rate * mean_b).exp();
    let fit = TrendFit { amplitude, rate, r_squared_log: 1.0, r_squared_linear: 1.0 };

    let mut ss_res_log = 0.0;
    let mut ss_tot_log = 0.0;
    let mean_y = points.iter().map(|&(_, y)| y).sum::<f64>() / len;
    let mut ss_res_lin = 0.0;
    let mut ss_tot_lin = 0.0;
    for &(b, y) in points {
        let ln_pred = amplitude.ln() + rate * b;
        ss_res_log += (y.ln() - ln_pred) * (y.ln() - ln_pred);
        ss_tot_log += (y.ln() - mean_ln) * (y.ln() - mean_ln);
        let pred = fit.predict(b);
        ss_res_lin += (y - pred) * (y - pred);
        ss_tot_lin += (y - mean_y) * (y - mean_y);
    }
    let r2 = |res: f64, tot: f64| if tot == 0.0 { 1.0 } else { 1.0 - res / tot };
    Ok(TrendFit {
        amplitude,
        rate,
        r_squared_log: r2(ss_res_log, ss_tot_log),
        r_squared_linear: r2(ss_res_lin, ss_tot_lin),
    })
}

/// How long an attacker constrained to a fraction of the request stream
/// needs: their cleanse pressure is b = k/alpha.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResistanceQuery {
    pub n: u32,
    pub m: u32,
    /// Mean replicas refreshed per request (the scheduler's budget).
    pub k: f64,
    /// Greatest fraction of requests the adversary can own.
    pub alpha: f64,
    /// Adversarial requests per second.
    pub rate: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Resistance {
    /// Median seconds until the adversary owns a full serving set.
    Bounded(f64),
    /// No adversarial traffic at all: never compromised.
    Unbounded,
}

pub fn resistance(query: &ResistanceQuery, fit: &TrendFit) -> Result<Resistance, SimError> {
    if query.alpha == 0.0 {
        return Ok(Resistance::Unbounded);
    }
    if !(query.alpha > 0.0 && query.alpha <= 1.0) {
        return Err(SimError::InvalidFraction(query.alpha));
    }
    if query.rate.is_nan() || query.rate <= 0.0 {
        return Err(SimError::InvalidRate(query.rate));
    }
    let b = query.k / query.alpha;
    Ok(Resistance::Bounded(fit.predict(b) / query.rate))
}

/// Requests-per-second each virtual CPU contributes.
pub fn throughput_per_vcpu(throughput_rps: f64, vcpu_count: u32) -> Result<f64, SimError> {
    if vcpu_count == 0 {
        return Err(SimError::ZeroVcpus);
    }
    Ok(throughput_rps / vcpu_count as f64)
}

/// Trend constants from the published evaluation of this architecture,
/// measured at m = 25 over 200-trial experiments.
pub mod reference {
    use super::TrendFit;

    #[derive(Debug, Clone, Copy, PartialEq)]
    pub struct PublishedFit {
        pub n: u32,
        pub m: u32,
        pub amplitude: f64,
        pub rate: f64,
        /// As published; the fitting scale was not stated, so the value is
        /// carried into both scale fields of `trend()`.
        pub r_squared: f64,
    }

    pub const PUBLISHED_FITS: [PublishedFit; 3] = [
        PublishedFit { n: 2, m: 25, amplitude: 14.235, rate: 0.2028, r_squared: 0.9923 },
        PublishedFit { n: 3, m: 25, amplitude: 25.46, rate: 0.3446, r_squared: 0.9903 },
        PublishedFit { n: 4, m: 25, amplitude: 41.537, rate: 0.5057, r_squared: 0.9797 },
    ];

    pub fn published_fit(n: u32) -> Option<PublishedFit> {
        PUBLISHED_FITS.iter().copied().find(|f| f.n == n)
    }

    impl PublishedFit {
        pub fn trend(&self) -> TrendFit {
            TrendFit {
                amplitude: self.amplitude,
                rate: self.rate,
                r_squared_log: self.r_squared,
                r_squared_linear: self.r_squared,
            }
        }
    }
}
