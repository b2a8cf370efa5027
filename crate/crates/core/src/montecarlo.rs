//! Replication harness for run lengths, false detection rates and detection
//! delays under simulated Heston days.
//!
//! Every replication draws its randomness from `derive_seed(master, i)`, so
//! results do not depend on the number of worker threads.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::detector::{Detector, DetectorConfig, TRUNCATION_MULTIPLIER};
use crate::error::{Error, Result};
use crate::num;
use crate::sim::{
    apply_db_noise, apply_pn_noise, derive_seed, proxy_spot_vol, DbConfig, HestonConfig, HestonStream, PnConfig,
    SimulatedDay,
};

/// Relative noise of the simulated spot-vol proxy.
pub const DEFAULT_PROXY_NOISE: f64 = 0.02;
pub const DEFAULT_MAX_DAYS: usize = 30;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Contamination {
    #[default]
    None,
    Db(DbConfig),
    Pn(PnConfig),
}

impl Contamination {
    fn onset(&self) -> Option<f64> {
        match self {
            Contamination::None => None,
            Contamination::Db(c) => Some(c.tau),
            Contamination::Pn(c) => Some(c.tau),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McExperiment {
    pub heston: HestonConfig,
    pub contamination: Contamination,
    /// Detector settings; `zeta` is replaced each day by 4× the previous
    /// day's median proxy vol.
    pub detector: DetectorConfig,
    /// Increments per day.
    pub n: usize,
    pub replications: usize,
    pub master_seed: u64,
    pub max_days_per_rep: usize,
    pub proxy_noise: f64,
    /// Worker threads; `None` uses the global rayon pool.
    pub threads: Option<usize>,
}

impl McExperiment {
    pub fn new(heston: HestonConfig, detector: DetectorConfig, n: usize, replications: usize, master_seed: u64) -> Self {
        Self {
            heston,
            contamination: Contamination::None,
            detector,
            n,
            replications,
            master_seed,
            max_days_per_rep: DEFAULT_MAX_DAYS,
            proxy_noise: DEFAULT_PROXY_NOISE,
            threads: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.heston.validate()?;
        self.detector.validate()?;
        match &self.contamination {
            Contamination::None => {}
            Contamination::Db(c) => c.validate()?,
            Contamination::Pn(c) => c.validate()?,
        }
        if self.replications == 0 {
            return Err(Error::config("replications must be at least 1"));
        }
        if self.max_days_per_rep == 0 {
            return Err(Error::config("max_days_per_rep must be at least 1"));
        }
        if self.n < 2 {
            return Err(Error::config("need at least 2 increments per day"));
        }
        if (self.detector.delta_n * self.n as f64 - 1.0).abs() > 1e-9 {
            return Err(Error::config(format!(
                "detector delta_n {} does not match {} increments per day",
                self.detector.delta_n, self.n
            )));
        }
        if !(self.proxy_noise.is_finite() && self.proxy_noise >= 0.0) {
            return Err(Error::config("proxy_noise must be finite and non-negative"));
        }
        Ok(())
    }

    fn map_reps<T: Send, F>(&self, f: F) -> Result<Vec<T>>
    where
        F: Fn(u64) -> Result<T> + Sync + Send,
    {
        let work = || {
            (0..self.replications as u64)
                .into_par_iter()
                .map(|i| f(derive_seed(self.master_seed, i)))
                .collect::<Result<Vec<T>>>()
        };
        match self.threads {
            Some(t) => rayon::ThreadPoolBuilder::new()
                .num_threads(t.max(1))
                .build()
                .map_err(|e| Error::config(format!("thread pool: {e}")))?
                .install(work),
            None => work(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub mean: f64,
    pub se: f64,
}

impl Estimate {
    fn from_samples(xs: &[f64]) -> Option<Self> {
        let m = num::mean(xs)?;
        let n = xs.len() as f64;
        let se = if xs.len() > 1 {
            (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0) / n).sqrt()
        } else {
            0.0
        };
        Some(Self { mean: m, se })
    }

    fn proportion(hits: usize, n: usize) -> Self {
        let p = hits as f64 / n as f64;
        Self {
            mean: p,
            se: (p * (1.0 - p) / n as f64).sqrt(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct McSummary {
    pub replications: usize,
    pub arl: Option<Estimate>,
    /// Replications that reached the day cap without an alarm.
    pub capped: usize,
    pub fdr: Option<Estimate>,
    pub detection_rate: Option<Estimate>,
    /// Mean delay in observations.
    pub edd: Option<Estimate>,
    /// Stopping times (ARL) or detection delays (EDD), in replication order.
    pub samples: Vec<f64>,
    pub warnings: Vec<String>,
}

/// Shared day generator: a burn-in day fixes the first truncation scale,
/// after which each day's ζ comes from the day before.
struct DayFeed {
    stream: HestonStream,
    seed: u64,
    noise: f64,
    zeta: f64,
    day: u64,
}

impl DayFeed {
    fn new(exp: &McExperiment, rep_seed: u64) -> Result<Self> {
        let stream = HestonStream::new(exp.heston, exp.n, exp.heston.theta, derive_seed(rep_seed, 0))?;
        let mut feed = Self {
            stream,
            seed: rep_seed,
            noise: exp.proxy_noise,
            zeta: 0.0,
            day: 0,
        };
        let (_, vols) = feed.next()?;
        feed.zeta = zeta_from(&vols)?;
        Ok(feed)
    }

    /// Next simulated day with its proxy vols.
    fn next(&mut self) -> Result<(SimulatedDay, Vec<f64>)> {
        let day = self.stream.next_day();
        let proxy = proxy_spot_vol(&day.true_vol, self.noise, derive_seed(self.seed, 1 + self.day))?;
        self.day += 1;
        Ok((day, proxy.values))
    }
}

fn zeta_from(vols: &[f64]) -> Result<f64> {
    num::median(vols)
        .map(|m| TRUNCATION_MULTIPLIER * m)
        .ok_or_else(|| Error::data("empty proxy series"))
}

fn feed_returns(det: &mut Detector, prices: &[f64], vols: &[f64], mut on_alarm: impl FnMut(u64) -> bool) -> Result<bool> {
    for (i, w) in prices.windows(2).enumerate() {
        let x = det.standardize(w[1] - w[0], vols[i])?;
        let scan = det.push(x);
        if scan.armed && scan.best.is_some() && on_alarm(scan.l) {
            return Ok(true);
        }
    }
    Ok(false)
}

/// Stopping time of one continuous null stream, or `None` at the cap.
fn arl_replication(exp: &McExperiment, rep_seed: u64) -> Result<Option<u64>> {
    let mut feed = DayFeed::new(exp, rep_seed)?;
    let mut det = Detector::new(DetectorConfig {
        zeta: feed.zeta,
        ..exp.detector
    })?;
    let mut stop = None;
    for _ in 0..exp.max_days_per_rep {
        det.set_zeta(feed.zeta)?;
        let (day, vols) = feed.next()?;
        if feed_returns(&mut det, &day.path.log_prices, &vols, |l| {
            stop = Some(l);
            true
        })? {
            return Ok(stop);
        }
        feed.zeta = zeta_from(&vols)?;
    }
    Ok(None)
}

/// Mean run length to the first false alarm over consecutive null days.
pub fn run_arl(exp: &McExperiment) -> Result<McSummary> {
    exp.validate()?;
    if exp.contamination != Contamination::None {
        return Err(Error::config("run_arl needs an uncontaminated experiment"));
    }
    let cap = (exp.max_days_per_rep * exp.n) as f64;
    let stops = exp.map_reps(|seed| arl_replication(exp, seed))?;
    let capped = stops.iter().filter(|s| s.is_none()).count();
    let samples: Vec<f64> = stops.iter().map(|s| s.map_or(cap, |v| v as f64)).collect();
    let mut warnings = Vec::new();
    if capped * 100 > exp.replications {
        warnings.push(format!(
            "{capped} of {} replications hit the {}-day cap; the ARL estimate is biased low",
            exp.replications, exp.max_days_per_rep
        ));
    }
    Ok(McSummary {
        replications: exp.replications,
        arl: Estimate::from_samples(&samples),
        capped,
        samples,
        warnings,
        ..Default::default()
    })
}

/// Whether the first `ell` observations of one null day raise an alarm.
fn fdr_replication(exp: &McExperiment, rep_seed: u64, ell: usize) -> Result<bool> {
    let mut feed = DayFeed::new(exp, rep_seed)?;
    let mut det = Detector::new(DetectorConfig {
        zeta: feed.zeta,
        ..exp.detector
    })?;
    let (day, vols) = feed.next()?;
    let end = (ell + 1).min(day.path.log_prices.len());
    feed_returns(&mut det, &day.path.log_prices[..end], &vols, |_| true)
}

/// Fraction of one-day trials with at least one alarm among the first `ell`
/// observations.
pub fn run_fdr(exp: &McExperiment, ell: usize) -> Result<McSummary> {
    exp.validate()?;
    if exp.contamination != Contamination::None {
        return Err(Error::config("run_fdr needs an uncontaminated experiment"));
    }
    let hits = exp.map_reps(|seed| fdr_replication(exp, seed, ell))?;
    let count = hits.iter().filter(|&&h| h).count();
    Ok(McSummary {
        replications: exp.replications,
        fdr: Some(Estimate::proportion(count, exp.replications)),
        ..Default::default()
    })
}

/// First alarm index strictly after the onset, on one contaminated day.
fn edd_replication(exp: &McExperiment, rep_seed: u64, onset_index: f64) -> Result<Option<u64>> {
    let mut feed = DayFeed::new(exp, rep_seed)?;
    let mut det = Detector::new(DetectorConfig {
        zeta: feed.zeta,
        ..exp.detector
    })?;
    let (day, vols) = feed.next()?;
    let observed = match &exp.contamination {
        Contamination::None => day.path,
        Contamination::Db(c) => apply_db_noise(&day.path, c),
        Contamination::Pn(c) => apply_pn_noise(&day.path, c),
    };
    let mut hit = None;
    feed_returns(&mut det, &observed.log_prices, &vols, |l| {
        if l as f64 > onset_index {
            hit = Some(l);
            true
        } else {
            false
        }
    })?;
    Ok(hit)
}

/// Detection rate and mean delay (observations past `τ/Δₙ`) on contaminated
/// days. Alarms at or before the onset are ignored.
pub fn run_edd(exp: &McExperiment) -> Result<McSummary> {
    exp.validate()?;
    let tau = exp
        .contamination
        .onset()
        .ok_or_else(|| Error::config("run_edd needs a DB or PN contamination"))?;
    let onset_index = tau / exp.detector.delta_n;
    let hits = exp.map_reps(|seed| edd_replication(exp, seed, onset_index))?;
    let delays: Vec<f64> = hits.iter().flatten().map(|&l| l as f64 - onset_index).collect();
    let mut warnings = Vec::new();
    if delays.is_empty() {
        warnings.push("no replication detected the episode; EDD undefined".to_string());
    }
    Ok(McSummary {
        replications: exp.replications,
        detection_rate: Some(Estimate::proportion(delays.len(), exp.replications)),
        edd: Estimate::from_samples(&delays),
        samples: delays,
        warnings,
        ..Default::default()
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KsResult {
    pub statistic: f64,
    /// Asymptotic p-value. The exponential mean is fitted from the same
    /// sample, which makes this value conservative.
    pub p_value: f64,
}

pub const MIN_KS_SAMPLES: usize = 100;

/// One-sample Kolmogorov–Smirnov test against an exponential with the sample mean.
pub fn exponentiality_check(samples: &[f64]) -> Result<KsResult> {
    if samples.len() < MIN_KS_SAMPLES {
        return Err(Error::data(format!(
            "need at least {MIN_KS_SAMPLES} samples, got {}",
            samples.len()
        )));
    }
    if samples.iter().any(|x| !x.is_finite() || *x < 0.0) {
        return Err(Error::data("samples must be finite and non-negative"));
    }
    let mean = num::mean(samples).unwrap_or(0.0);
    if mean <= 0.0 {
        return Ok(KsResult {
            statistic: 1.0,
            p_value: 0.0,
        });
    }
    let mut xs = samples.to_vec();
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    let d = xs
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = -(-x / mean).exp_m1();
            (f - i as f64 / n).max((i + 1) as f64 / n - f)
        })
        .fold(0.0, f64::max);
    Ok(KsResult {
        statistic: d,
        p_value: kolmogorov_p(d, xs.len()),
    })
}

/// `P(D_n > d)` from the Kolmogorov limit with Stephens' small-sample factor.
pub fn kolmogorov_p(d: f64, n: usize) -> f64 {
    let sn = (n as f64).sqrt();
    let lambda = (sn + 0.12 + 0.11 / sn) * d;
    if lambda < 0.2 {
        return 1.0;
    }
    let mut sum = 0.0;
    for k in 1..=100 {
        let kf = k as f64;
        let term = (-2.0 * kf * kf * lambda * lambda).exp();
        sum += if k % 2 == 1 { term } else { -term };
        if term < 1e-16 {
            break;
        }
    }
    (2.0 * sum).clamp(0.0, 1.0)
}
