//! Daily price paths: Heston stochastic volatility with compound-Poisson
//! jumps, plus drift-burst and persistent-noise contamination.
//!
//! Time is measured in trading days. Heston parameters are annualized and
//! converted with `days_per_year`; the variance path is reported in
//! annualized units and spot volatility in per-√day units.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{ensure_finite, Error, Result};

/// Lower bound applied to proxy spot volatilities (per-√day units).
pub const SPOT_VOL_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HestonConfig {
    /// Mean-reversion speed, per year.
    pub kappa: f64,
    /// Long-run variance, annualized.
    pub theta: f64,
    /// Volatility of variance, annualized.
    pub vov: f64,
    /// Correlation between the price and variance Brownian motions.
    pub rho: f64,
    /// Log-price drift per day.
    pub drift: f64,
    /// Expected jumps per day.
    pub jump_intensity: f64,
    /// Jump-size standard deviation in log-price units.
    pub jump_sd: f64,
    pub x0: f64,
    pub days_per_year: f64,
}

impl Default for HestonConfig {
    /// The desk calibration: `(κ, θ, vov, ρ) = (5, 0.0225, 0.4, -√0.5)`,
    /// three jumps per week of 0.5% standard deviation, `X₀ = ln 1200`.
    fn default() -> Self {
        Self {
            kappa: 5.0,
            theta: 0.0225,
            vov: 0.4,
            rho: -(0.5f64).sqrt(),
            drift: 0.0,
            jump_intensity: 0.6,
            jump_sd: 0.005,
            x0: 1200f64.ln(),
            days_per_year: 252.0,
        }
    }
}

impl HestonConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("kappa", self.kappa),
            ("theta", self.theta),
            ("vov", self.vov),
            ("rho", self.rho),
            ("drift", self.drift),
            ("jump_intensity", self.jump_intensity),
            ("jump_sd", self.jump_sd),
            ("x0", self.x0),
            ("days_per_year", self.days_per_year),
        ] {
            ensure_finite(name, v)?;
        }
        if self.kappa < 0.0 || self.theta < 0.0 || self.vov < 0.0 {
            return Err(Error::config("kappa, theta and vov must be non-negative"));
        }
        if self.rho.abs() > 1.0 {
            return Err(Error::config(format!("|rho| must be <= 1, got {}", self.rho)));
        }
        if self.jump_intensity < 0.0 || self.jump_sd < 0.0 {
            return Err(Error::config("jump intensity and size must be non-negative"));
        }
        if self.days_per_year <= 0.0 {
            return Err(Error::config("days_per_year must be positive"));
        }
        Ok(())
    }

    /// Spot volatility per √day implied by an annualized variance.
    pub fn spot_vol(&self, variance: f64) -> f64 {
        (variance.max(0.0) / self.days_per_year).sqrt()
    }
}

/// Drift burst: `H_t = ∫_0^t c (s − τ)^{-ϑ} 1{s ∈ [τ, τ̄]} ds`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DbConfig {
    /// Burst scale in log-price units per day^(1-ϑ).
    pub c: f64,
    pub tau: f64,
    pub tau_bar: f64,
    pub theta_db: f64,
}

impl DbConfig {
    /// Builds a burst whose scale is quoted as an annual rate, dividing by
    /// `days_per_year` like every other drift in the model.
    pub fn annualized(
        c_annual: f64,
        days_per_year: f64,
        tau: f64,
        tau_bar: f64,
        theta_db: f64,
    ) -> Self {
        Self {
            c: c_annual / days_per_year,
            tau,
            tau_bar,
            theta_db,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("c", self.c),
            ("tau", self.tau),
            ("tau_bar", self.tau_bar),
            ("theta_db", self.theta_db),
        ] {
            ensure_finite(name, v)?;
        }
        if !(0.0 <= self.tau && self.tau < self.tau_bar && self.tau_bar <= 1.0) {
            return Err(Error::config("drift burst needs 0 <= tau < tau_bar <= 1"));
        }
        if !(0.5 < self.theta_db && self.theta_db < 1.0) {
            return Err(Error::config("drift burst exponent must lie in (0.5, 1)"));
        }
        Ok(())
    }

    /// `H(t)` in closed form.
    pub fn level(&self, t: f64) -> f64 {
        let p = 1.0 - self.theta_db;
        let active = (t.min(self.tau_bar) - self.tau).max(0.0);
        self.c / p * active.powf(p)
    }
}

/// Where the efficient-price jump of a persistent-noise episode lands when
/// `τ` falls between grid points.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum GridSnap {
    /// First grid point at or after τ.
    #[default]
    Ceil,
    /// Last grid point at or before τ.
    Floor,
    Nearest,
}

/// Persistent noise: `H_t = η ΔX_τ g(t)` with
/// `g(s) = 1 − ((s − τ)/(τ̄ − τ))^{ϑ_pn}` on `[τ, τ̄]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PnConfig {
    pub tau: f64,
    pub tau_bar: f64,
    pub theta_pn: f64,
    /// Response multiplier; −1 means the observed price does not react at τ.
    pub eta: f64,
    /// Efficient-price jump at τ, log units.
    pub jump_size: f64,
    #[serde(default)]
    pub snap: GridSnap,
}

impl PnConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("tau", self.tau),
            ("tau_bar", self.tau_bar),
            ("theta_pn", self.theta_pn),
            ("eta", self.eta),
            ("jump_size", self.jump_size),
        ] {
            ensure_finite(name, v)?;
        }
        if !(0.0 <= self.tau && self.tau < self.tau_bar && self.tau_bar <= 1.0) {
            return Err(Error::config("persistent noise needs 0 <= tau < tau_bar <= 1"));
        }
        if !(0.0 < self.theta_pn && self.theta_pn < 0.5) {
            return Err(Error::config("persistent-noise exponent must lie in (0, 0.5)"));
        }
        Ok(())
    }

    /// Decay profile `g(s)`; zero outside `[τ, τ̄]`.
    pub fn decay(&self, s: f64) -> f64 {
        if s < self.tau || s > self.tau_bar {
            return 0.0;
        }
        1.0 - ((s - self.tau) / (self.tau_bar - self.tau)).powf(self.theta_pn)
    }

    /// Noise level `H(s) = η · ΔX_τ · g(s)`.
    pub fn level(&self, s: f64) -> f64 {
        self.eta * self.jump_size * self.decay(s)
    }

    /// Grid index of the efficient-price jump on an `n`-step day.
    pub fn jump_index(&self, n: usize) -> usize {
        let pos = self.tau * n as f64;
        let idx = match self.snap {
            GridSnap::Ceil => pos.ceil(),
            GridSnap::Floor => pos.floor(),
            GridSnap::Nearest => pos.round(),
        };
        (idx as usize).min(n)
    }
}

/// Paired persistent-noise settings: exponent ϑ_pn with its efficient jump size.
pub const PN_PAIRS: [(f64, f64); 3] = [(0.45, 0.014), (0.35, 0.020), (0.25, 0.030)];

/// Equispaced log prices over one trading day.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PricePath {
    pub delta_n: f64,
    pub log_prices: Vec<f64>,
    pub day_index: i64,
}

impl PricePath {
    pub fn new(log_prices: Vec<f64>, day_index: i64) -> Result<Self> {
        if log_prices.len() < 2 {
            return Err(Error::data("a price path needs at least two points"));
        }
        let n = log_prices.len() - 1;
        Ok(Self {
            delta_n: 1.0 / n as f64,
            log_prices,
            day_index,
        })
    }

    /// Number of increments.
    pub fn steps(&self) -> usize {
        self.log_prices.len() - 1
    }

    /// Day-unit time of grid point `i`, computed as `i / n` so that points
    /// such as `τ = 0.25` land exactly on the grid.
    pub fn time(&self, i: usize) -> f64 {
        i as f64 / self.steps() as f64
    }

    pub fn returns(&self) -> impl Iterator<Item = f64> + '_ {
        self.log_prices.windows(2).map(|w| w[1] - w[0])
    }
}

/// Spot volatility per grid point, per-√day units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpotVolSeries {
    pub delta_n: f64,
    pub values: Vec<f64>,
}

impl SpotVolSeries {
    pub fn new(delta_n: f64, values: Vec<f64>) -> Result<Self> {
        if let Some(bad) = values.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
            return Err(Error::data(format!("spot volatility must be finite and >= 0, got {bad}")));
        }
        Ok(Self { delta_n, values })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JumpEvent {
    /// Grid index at which the jump is included in the price.
    pub index: usize,
    pub size: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulatedDay {
    pub path: PricePath,
    pub true_vol: SpotVolSeries,
    /// Annualized variance, non-negative at every grid point.
    pub variance: Vec<f64>,
    pub jumps: Vec<JumpEvent>,
}

/// Consecutive Heston days sharing one random stream. Each day starts from
/// the previous day's closing log price and variance.
pub struct HestonStream {
    cfg: HestonConfig,
    n: usize,
    rng: ChaCha8Rng,
    jumps: Option<Poisson<f64>>,
    x: f64,
    /// Full-truncation state; may be negative, only its positive part is used.
    v: f64,
    day: i64,
}

impl HestonStream {
    pub fn new(cfg: HestonConfig, n: usize, v0: f64, seed: u64) -> Result<Self> {
        cfg.validate()?;
        if n < 2 {
            return Err(Error::config(format!("need at least 2 grid points per day, got {n}")));
        }
        ensure_finite("v0", v0)?;
        if v0 < 0.0 {
            return Err(Error::config("initial variance must be non-negative"));
        }
        let rate = cfg.jump_intensity / n as f64;
        let jumps = if rate > 0.0 {
            Some(Poisson::new(rate).map_err(|e| Error::config(format!("jump intensity: {e}")))?)
        } else {
            None
        };
        Ok(Self {
            cfg,
            n,
            rng: ChaCha8Rng::seed_from_u64(seed),
            jumps,
            x: cfg.x0,
            v: v0,
            day: 0,
        })
    }

    pub fn steps_per_day(&self) -> usize {
        self.n
    }

    pub fn next_day(&mut self) -> SimulatedDay {
        let cfg = &self.cfg;
        let n = self.n;
        let dt = 1.0 / n as f64;
        let kappa_day = cfg.kappa / cfg.days_per_year;
        let vov_day = cfg.vov / cfg.days_per_year.sqrt();
        let sqrt_dt = dt.sqrt();
        let rho_c = (1.0 - cfg.rho * cfg.rho).max(0.0).sqrt();

        let mut prices = Vec::with_capacity(n + 1);
        let mut variance = Vec::with_capacity(n + 1);
        let mut jumps = Vec::new();
        prices.push(self.x);
        variance.push(self.v.max(0.0));

        for i in 1..=n {
            let z1: f64 = self.rng.sample(StandardNormal);
            let z2: f64 = self.rng.sample(StandardNormal);
            let vp = self.v.max(0.0);
            let mut dx = cfg.drift * dt + (vp * dt / cfg.days_per_year).sqrt() * z1;
            if let Some(pois) = &self.jumps {
                let count = pois.sample(&mut self.rng) as u64;
                for _ in 0..count {
                    let z: f64 = self.rng.sample(StandardNormal);
                    let size = cfg.jump_sd * z;
                    dx += size;
                    jumps.push(JumpEvent { index: i, size });
                }
            }
            let w2 = cfg.rho * z1 + rho_c * z2;
            self.v += kappa_day * (cfg.theta - vp) * dt + vov_day * vp.sqrt() * sqrt_dt * w2;
            self.x += dx;
            prices.push(self.x);
            variance.push(self.v.max(0.0));
        }

        let true_vol = variance.iter().map(|&v| cfg.spot_vol(v)).collect();
        let day = self.day;
        self.day += 1;
        SimulatedDay {
            path: PricePath {
                delta_n: dt,
                log_prices: prices,
                day_index: day,
            },
            true_vol: SpotVolSeries {
                delta_n: dt,
                values: true_vol,
            },
            variance,
            jumps,
        }
    }
}

/// One Heston day on an `n`-step grid, deterministic in `(cfg, n, v0, seed)`.
pub fn simulate_heston_day(cfg: &HestonConfig, n: usize, v0: f64, seed: u64) -> Result<SimulatedDay> {
    Ok(HestonStream::new(*cfg, n, v0, seed)?.next_day())
}

/// Drift-burst log-price increment over `[t1, t2]` from the closed antiderivative.
pub fn db_increment(t1: f64, t2: f64, cfg: &DbConfig) -> f64 {
    cfg.level(t2) - cfg.level(t1)
}

/// `Y_i = X_i + H(iΔₙ)` under a drift burst.
pub fn apply_db_noise(x: &PricePath, cfg: &DbConfig) -> PricePath {
    let log_prices = x
        .log_prices
        .iter()
        .enumerate()
        .map(|(i, &xi)| xi + cfg.level(x.time(i)))
        .collect();
    PricePath {
        delta_n: x.delta_n,
        log_prices,
        day_index: x.day_index,
    }
}

/// Efficient path with the episode's jump added from the snapped grid point on.
pub fn pn_efficient_with_jump(x: &PricePath, cfg: &PnConfig) -> PricePath {
    let j = cfg.jump_index(x.steps());
    let mut out = x.clone();
    for p in &mut out.log_prices[j..] {
        *p += cfg.jump_size;
    }
    out
}

/// Observed path under persistent noise: efficient jump at τ plus
/// `H = η ΔX_τ g(t)`.
pub fn apply_pn_noise(x: &PricePath, cfg: &PnConfig) -> PricePath {
    let mut out = pn_efficient_with_jump(x, cfg);
    for (i, p) in out.log_prices.iter_mut().enumerate() {
        *p += cfg.level(x.time(i));
    }
    out
}

/// Multiplies each spot vol by `1 + noise_scale · Z` with independent
/// standard normals, flooring the result at [`SPOT_VOL_FLOOR`].
pub fn proxy_spot_vol(true_vol: &SpotVolSeries, noise_scale: f64, seed: u64) -> Result<SpotVolSeries> {
    ensure_finite("noise_scale", noise_scale)?;
    if noise_scale < 0.0 {
        return Err(Error::config("noise scale must be non-negative"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let values = true_vol
        .values
        .iter()
        .map(|&s| {
            let z: f64 = rng.sample(StandardNormal);
            (s * (1.0 + noise_scale * z)).max(SPOT_VOL_FLOOR)
        })
        .collect();
    Ok(SpotVolSeries {
        delta_n: true_vol.delta_n,
        values,
    })
}

/// Splitmix64 finalizer.
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Independent per-task seed: `mix(master, index)`.
pub fn derive_seed(master: u64, index: u64) -> u64 {
    splitmix64(master ^ splitmix64(index.wrapping_add(0x632B_E59B_D9B4_E019)))
}
