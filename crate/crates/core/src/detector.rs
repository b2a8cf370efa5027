//! Streaming GLR-CUSUM scan over standardized, truncated increments.
//!
//! At index `l` the statistic for window start `k` is
//! `|S_l − S_k| / √((l − k)Δₙ)` with `S` the prefix sums of
//! `dY/σ̂ · 1{|dY| < ζΔₙ^ϖ}`. Windowed rules keep a ring of the last
//! `w + r + 1` prefix values; the unbounded rule keeps every prefix value
//! together with per-block minima and maxima so that whole blocks can be
//! skipped when they cannot reach the threshold.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{ensure_finite, Error, Result};
use crate::num;
use crate::sim::{PricePath, SpotVolSeries};

pub const DEFAULT_VARPI: f64 = 0.49;
pub const TRUNCATION_MULTIPLIER: f64 = 4.0;
pub const DEFAULT_SESSION_MINUTES: f64 = 390.0;

const BLOCK: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectorConfig {
    /// Alarm threshold ξ; `+∞` disables alarms.
    pub xi: f64,
    /// Maximum window length in observations; `None` is the unbounded rule.
    pub w_n: Option<usize>,
    /// Minimum span in observations.
    #[serde(default)]
    pub r_n: usize,
    #[serde(default = "default_varpi")]
    pub varpi: f64,
    /// Truncation scale in per-√day volatility units.
    pub zeta: f64,
    pub delta_n: f64,
    /// Alarms are reported only for `l > warmup`.
    #[serde(default)]
    pub warmup: usize,
    /// Drop all history after an alarm (classical CUSUM restart).
    #[serde(default)]
    pub reset_on_alarm: bool,
}

fn default_varpi() -> f64 {
    DEFAULT_VARPI
}

impl DetectorConfig {
    pub fn new(xi: f64, w_n: Option<usize>, r_n: usize, zeta: f64, delta_n: f64) -> Self {
        Self {
            xi,
            w_n,
            r_n,
            varpi: DEFAULT_VARPI,
            zeta,
            delta_n,
            warmup: 0,
            reset_on_alarm: false,
        }
    }

    /// Converts window lengths in minutes into observations on a grid of
    /// `obs_per_day` increments over `session_minutes`.
    pub fn from_minutes(
        xi: f64,
        window_min: Option<f64>,
        min_span_min: f64,
        obs_per_day: usize,
        session_minutes: f64,
        zeta: f64,
    ) -> Result<Self> {
        if obs_per_day == 0 {
            return Err(Error::config("obs_per_day must be positive"));
        }
        let per_min = obs_per_day as f64 / session_minutes;
        let to_obs = |m: f64, name: &str| -> Result<usize> {
            ensure_finite(name, m)?;
            if m < 0.0 {
                return Err(Error::config(format!("{name} must be non-negative")));
            }
            Ok((m * per_min).round() as usize)
        };
        let w_n = window_min.map(|m| to_obs(m, "window_min")).transpose()?;
        let r_n = to_obs(min_span_min, "min_span_min")?;
        let cfg = Self::new(xi, w_n, r_n, zeta, 1.0 / obs_per_day as f64);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.xi.is_nan() || self.xi <= 0.0 {
            return Err(Error::config(format!("xi must be positive, got {}", self.xi)));
        }
        ensure_finite("varpi", self.varpi)?;
        ensure_finite("zeta", self.zeta)?;
        ensure_finite("delta_n", self.delta_n)?;
        if !(0.0 < self.varpi && self.varpi < 0.5) {
            return Err(Error::config(format!("varpi must lie in (0, 0.5), got {}", self.varpi)));
        }
        if self.zeta <= 0.0 {
            return Err(Error::config(format!("zeta must be positive, got {}", self.zeta)));
        }
        if self.delta_n <= 0.0 {
            return Err(Error::config("delta_n must be positive"));
        }
        if let Some(w) = self.w_n {
            if w == 0 {
                return Err(Error::config("w_n must be at least 1"));
            }
            if self.r_n >= w {
                return Err(Error::config(format!("r_n ({}) must be below w_n ({w})", self.r_n)));
            }
        }
        Ok(())
    }

    /// Absolute return cutoff `ζ Δₙ^ϖ`.
    pub fn truncation_threshold(&self) -> f64 {
        self.zeta * self.delta_n.powf(self.varpi)
    }

    /// Warmup that skips the first full window, `w_n + r_n`.
    pub fn full_window_warmup(&self) -> usize {
        self.w_n.map_or(self.r_n, |w| w + self.r_n)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlarmEvent {
    pub l: u64,
    pub k_star: u64,
    pub statistic: f64,
    pub day_index: i64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ViolationRegion {
    pub start: u64,
    pub end: u64,
    pub peak_stat: f64,
    pub duration_min: f64,
}

/// How exceeding windows are turned into regions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum RegionRule {
    /// Union of every admissible window whose statistic exceeds ξ.
    #[default]
    Union,
    /// Union of the maximizing window at each alarm index only.
    ArgmaxOnly,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegionOptions {
    pub rule: RegionRule,
    pub session_minutes: f64,
}

impl Default for RegionOptions {
    fn default() -> Self {
        Self {
            rule: RegionRule::Union,
            session_minutes: DEFAULT_SESSION_MINUTES,
        }
    }
}

/// Result of scanning all admissible windows ending at `l`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Scan {
    pub l: u64,
    /// Largest statistic above ξ with its smallest maximizing start, if any.
    pub best: Option<(u64, f64)>,
    /// Smallest start whose statistic exceeds ξ.
    pub first_exceeding: Option<u64>,
    /// Whether alarms are reportable at this index (past warmup).
    pub armed: bool,
}

impl Scan {
    pub fn alarm(&self, day_index: i64) -> Option<AlarmEvent> {
        if !self.armed {
            return None;
        }
        self.best.map(|(k, s)| AlarmEvent {
            l: self.l,
            k_star: k,
            statistic: s,
            day_index,
        })
    }
}

#[derive(Debug, Clone)]
enum Anchors {
    /// Prefix values for indices `newest + 1 − len ..= newest`.
    Ring(VecDeque<f64>),
    /// Prefix values for indices `origin ..= newest` with block extrema.
    Full {
        sums: Vec<f64>,
        blocks: Vec<(f64, f64)>,
    },
}

/// Single-stream scan state.
#[derive(Debug, Clone)]
pub struct Detector {
    cfg: DetectorConfig,
    threshold: f64,
    l: u64,
    /// First index usable as a window start (moves on reset).
    origin: u64,
    anchors: Anchors,
    day_index: i64,
    alarms: u64,
}

impl Detector {
    pub fn new(cfg: DetectorConfig) -> Result<Self> {
        cfg.validate()?;
        let anchors = match cfg.w_n {
            Some(w) => {
                let mut ring = VecDeque::with_capacity(w + cfg.r_n + 1);
                ring.push_back(0.0);
                Anchors::Ring(ring)
            }
            None => Anchors::Full {
                sums: vec![0.0],
                blocks: vec![(0.0, 0.0)],
            },
        };
        Ok(Self {
            threshold: cfg.truncation_threshold(),
            cfg,
            l: 0,
            origin: 0,
            anchors,
            day_index: 0,
            alarms: 0,
        })
    }

    pub fn config(&self) -> &DetectorConfig {
        &self.cfg
    }

    /// Number of increments consumed.
    pub fn index(&self) -> u64 {
        self.l
    }

    pub fn alarm_count(&self) -> u64 {
        self.alarms
    }

    /// Label attached to subsequent alarms.
    pub fn set_day(&mut self, day_index: i64) {
        self.day_index = day_index;
    }

    /// Replaces the truncation scale, e.g. at a day boundary.
    pub fn set_zeta(&mut self, zeta: f64) -> Result<()> {
        let cfg = DetectorConfig { zeta, ..self.cfg };
        cfg.validate()?;
        self.cfg = cfg;
        self.threshold = cfg.truncation_threshold();
        Ok(())
    }

    /// Oldest retained anchor index.
    pub fn oldest_anchor(&self) -> u64 {
        match &self.anchors {
            Anchors::Ring(r) => self.l + 1 - r.len() as u64,
            Anchors::Full { .. } => self.origin,
        }
    }

    pub fn prefix(&self, i: u64) -> Option<f64> {
        if i > self.l || i < self.oldest_anchor() {
            return None;
        }
        Some(match &self.anchors {
            Anchors::Ring(r) => r[(i - self.oldest_anchor()) as usize],
            Anchors::Full { sums, .. } => sums[(i - self.origin) as usize],
        })
    }

    /// `|S_l − S_k| / √((l − k)Δₙ)` for retained anchors `k < l`.
    pub fn glr_stat(&self, k: u64, l: u64) -> Result<f64> {
        let out = || Error::WindowOutOfRange {
            k,
            l,
            oldest: self.oldest_anchor(),
            newest: self.l,
        };
        if k >= l {
            return Err(out());
        }
        let sk = self.prefix(k).ok_or_else(out)?;
        let sl = self.prefix(l).ok_or_else(out)?;
        Ok(stat(sl, sk, l - k, self.cfg.delta_n))
    }

    /// Standardized, truncated increment; zero when `|dY|` reaches the cutoff.
    pub fn standardize(&self, dy: f64, sigma_hat: f64) -> Result<f64> {
        standardize_with(dy, sigma_hat, self.threshold)
    }

    /// Consumes one return and reports an alarm when the scan exceeds ξ.
    pub fn step(&mut self, dy: f64, sigma_hat: f64) -> Result<Option<AlarmEvent>> {
        let x = self.standardize(dy, sigma_hat)?;
        Ok(self.push(x).alarm(self.day_index))
    }

    /// Consumes an already standardized increment and returns the full scan.
    pub fn push(&mut self, x: f64) -> Scan {
        let last = self.prefix(self.l).unwrap_or(0.0);
        let s = last + x;
        self.l += 1;
        match &mut self.anchors {
            Anchors::Ring(ring) => {
                let cap = self.cfg.w_n.unwrap_or(0) + self.cfg.r_n + 1;
                if ring.len() == cap {
                    ring.pop_front();
                }
                ring.push_back(s);
            }
            Anchors::Full { sums, blocks } => {
                let pos = sums.len();
                sums.push(s);
                if pos % BLOCK == 0 {
                    blocks.push((s, s));
                } else {
                    let b = blocks.last_mut().expect("block exists");
                    b.0 = b.0.min(s);
                    b.1 = b.1.max(s);
                }
            }
        }
        let scan = self.scan(s);
        if scan.armed && scan.best.is_some() {
            self.alarms += 1;
            if self.cfg.reset_on_alarm {
                self.reset_history(s);
            }
        }
        scan
    }

    fn reset_history(&mut self, s: f64) {
        self.origin = self.l;
        match &mut self.anchors {
            Anchors::Ring(ring) => {
                ring.clear();
                ring.push_back(s);
            }
            Anchors::Full { sums, blocks } => {
                sums.clear();
                sums.push(s);
                blocks.clear();
                blocks.push((s, s));
            }
        }
    }

    /// Admissible starts `[lo, hi)` at the current index.
    fn window_range(&self) -> (u64, u64) {
        let l = self.l;
        let r = self.cfg.r_n as u64;
        let hi = l.saturating_sub(r);
        let lo = match self.cfg.w_n {
            Some(w) => l.saturating_sub(w as u64 + r),
            None => 0,
        };
        (lo.max(self.origin), hi)
    }

    fn scan(&self, sl: f64) -> Scan {
        let l = self.l;
        let xi = self.cfg.xi;
        let dn = self.cfg.delta_n;
        let (lo, hi) = self.window_range();
        let mut best: Option<(u64, f64)> = None;
        let mut first = None;
        let mut visit = |k: u64, sk: f64| {
            let v = stat(sl, sk, l - k, dn);
            if v > xi {
                if first.is_none() {
                    first = Some(k);
                }
                if best.is_none_or(|(_, b)| v > b) {
                    best = Some((k, v));
                }
            }
        };
        if lo < hi {
            match &self.anchors {
                Anchors::Ring(ring) => {
                    let base = self.oldest_anchor();
                    for k in lo..hi {
                        visit(k, ring[(k - base) as usize]);
                    }
                }
                Anchors::Full { sums, blocks } => {
                    let (lo_i, hi_i) = ((lo - self.origin) as usize, (hi - self.origin) as usize);
                    let mut b = lo_i / BLOCK;
                    while b * BLOCK < hi_i {
                        let start = (b * BLOCK).max(lo_i);
                        let end = ((b + 1) * BLOCK).min(hi_i);
                        // Closest start in the block gives the shortest span.
                        let d_min = (l - self.origin) as usize - (end - 1);
                        let (mn, mx) = blocks[b];
                        let bound = (sl - mn).abs().max((mx - sl).abs()) / ((d_min as f64) * dn).sqrt();
                        if bound > xi {
                            for (i, &sk) in sums[start..end].iter().enumerate() {
                                visit(self.origin + (start + i) as u64, sk);
                            }
                        }
                        b += 1;
                    }
                }
            }
        }
        Scan {
            l,
            best,
            first_exceeding: first,
            armed: l > self.cfg.warmup as u64,
        }
    }
}

#[inline]
fn stat(sl: f64, sk: f64, span: u64, delta_n: f64) -> f64 {
    (sl - sk).abs() / (span as f64 * delta_n).sqrt()
}

fn standardize_with(dy: f64, sigma_hat: f64, threshold: f64) -> Result<f64> {
    if !dy.is_finite() {
        return Err(Error::data(format!("non-finite return {dy}")));
    }
    if !(sigma_hat.is_finite() && sigma_hat > 0.0) {
        return Err(Error::data(format!("spot volatility must be positive and finite, got {sigma_hat}")));
    }
    Ok(if dy.abs() < threshold { dy / sigma_hat } else { 0.0 })
}

/// `dY/σ̂` when `|dY| < ζΔₙ^ϖ`, else 0.
pub fn standardized_increment(dy: f64, sigma_hat: f64, cfg: &DetectorConfig) -> Result<f64> {
    standardize_with(dy, sigma_hat, cfg.truncation_threshold())
}

/// `ζ = 4 × median` of the previous day's spot-vol estimates.
pub fn truncation_scale(prev_day_vols: &SpotVolSeries) -> Result<f64> {
    if prev_day_vols.is_empty() {
        return Err(Error::data("cannot derive truncation scale from an empty series"));
    }
    num::median(&prev_day_vols.values)
        .map(|m| TRUNCATION_MULTIPLIER * m)
        .ok_or_else(|| Error::data("spot-vol series contains NaN"))
}

fn check_aligned(path: &PricePath, vols: &SpotVolSeries) -> Result<()> {
    if vols.len() != path.log_prices.len() {
        return Err(Error::data(format!(
            "spot-vol length {} does not match path length {}",
            vols.len(),
            path.log_prices.len()
        )));
    }
    Ok(())
}

/// Feeds every increment of a day into `det`, calling `f` with each scan.
/// Increment `i` uses the spot vol at its start, `vols[i − 1]`.
pub fn feed_day<F: FnMut(&Scan)>(
    det: &mut Detector,
    path: &PricePath,
    vols: &SpotVolSeries,
    mut f: F,
) -> Result<()> {
    check_aligned(path, vols)?;
    det.set_day(path.day_index);
    for (i, w) in path.log_prices.windows(2).enumerate() {
        let x = det.standardize(w[1] - w[0], vols.values[i])?;
        let scan = det.push(x);
        f(&scan);
    }
    Ok(())
}

/// Every alarm raised over one day by a fresh detector.
pub fn run_day(path: &PricePath, vols: &SpotVolSeries, cfg: &DetectorConfig) -> Result<Vec<AlarmEvent>> {
    let mut det = Detector::new(*cfg)?;
    let mut out = Vec::new();
    feed_day(&mut det, path, vols, |s| out.extend(s.alarm(path.day_index)))?;
    Ok(out)
}

/// Index and event of the first alarm over one day.
pub fn first_alarm(
    path: &PricePath,
    vols: &SpotVolSeries,
    cfg: &DetectorConfig,
) -> Result<Option<(u64, AlarmEvent)>> {
    check_aligned(path, vols)?;
    let mut det = Detector::new(*cfg)?;
    det.set_day(path.day_index);
    for (i, w) in path.log_prices.windows(2).enumerate() {
        if let Some(a) = det.step(w[1] - w[0], vols.values[i])? {
            return Ok(Some((a.l, a)));
        }
    }
    Ok(None)
}

/// Collects intervals `[start, end]` with peaks and merges those that
/// overlap or touch.
#[derive(Debug, Default, Clone)]
pub struct RegionBuilder {
    spans: Vec<(u64, u64, f64)>,
}

impl RegionBuilder {
    pub fn add_scan(&mut self, scan: &Scan, rule: RegionRule) {
        if !scan.armed {
            return;
        }
        if let Some((k_star, peak)) = scan.best {
            let start = match rule {
                RegionRule::Union => scan.first_exceeding.unwrap_or(k_star),
                RegionRule::ArgmaxOnly => k_star,
            };
            self.spans.push((start, scan.l, peak));
        }
    }

    pub fn finish(mut self, delta_n: f64, session_minutes: f64) -> Vec<ViolationRegion> {
        self.spans.sort_by(|a, b| a.0.cmp(&b.0).then(a.1.cmp(&b.1)));
        let mut out: Vec<ViolationRegion> = Vec::new();
        for (s, e, p) in self.spans {
            match out.last_mut() {
                Some(last) if s <= last.end => {
                    last.end = last.end.max(e);
                    last.peak_stat = last.peak_stat.max(p);
                }
                _ => out.push(ViolationRegion {
                    start: s,
                    end: e,
                    peak_stat: p,
                    duration_min: 0.0,
                }),
            }
        }
        for r in &mut out {
            r.duration_min = (r.end - r.start) as f64 * delta_n * session_minutes;
        }
        out
    }
}

pub fn identify_regions(path: &PricePath, vols: &SpotVolSeries, cfg: &DetectorConfig) -> Result<Vec<ViolationRegion>> {
    identify_regions_with(path, vols, cfg, &RegionOptions::default())
}

pub fn identify_regions_with(
    path: &PricePath,
    vols: &SpotVolSeries,
    cfg: &DetectorConfig,
    opts: &RegionOptions,
) -> Result<Vec<ViolationRegion>> {
    let mut det = Detector::new(*cfg)?;
    let mut builder = RegionBuilder::default();
    feed_day(&mut det, path, vols, |s| builder.add_scan(s, opts.rule))?;
    Ok(builder.finish(cfg.delta_n, opts.session_minutes))
}

/// Alarms and regions from a single pass over one day.
pub fn scan_day(
    path: &PricePath,
    vols: &SpotVolSeries,
    cfg: &DetectorConfig,
    opts: &RegionOptions,
) -> Result<(Vec<AlarmEvent>, Vec<ViolationRegion>)> {
    let mut det = Detector::new(*cfg)?;
    let mut alarms = Vec::new();
    let mut builder = RegionBuilder::default();
    feed_day(&mut det, path, vols, |s| {
        alarms.extend(s.alarm(path.day_index));
        builder.add_scan(s, opts.rule);
    })?;
    Ok((alarms, builder.finish(cfg.delta_n, opts.session_minutes)))
}
