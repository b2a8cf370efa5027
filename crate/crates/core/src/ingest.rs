//! Corpus loading, truncated realized volatility, spot-vol rescaling and the
//! per-corpus summaries (block counts, duration histogram, TV/SV comparison
//! and yearly counts).

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use chrono::{Datelike, NaiveDate};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::detector::{
    scan_day, AlarmEvent, DetectorConfig, RegionOptions, RegionRule, ViolationRegion, DEFAULT_SESSION_MINUTES,
    TRUNCATION_MULTIPLIER,
};
use crate::error::{Error, Result};
use crate::num;
use crate::sim::{PricePath, SpotVolSeries};

/// `Φ⁻¹(3/4)`, the median of `|Z|` for standard normal `Z`.
const MAD_SCALE: f64 = 0.674_489_750_196_081_7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum DayId {
    Date(NaiveDate),
    Index(i64),
}

impl DayId {
    pub fn parse(s: &str) -> Option<Self> {
        let s = s.trim();
        if let Ok(d) = NaiveDate::parse_from_str(s, "%Y-%m-%d") {
            return Some(DayId::Date(d));
        }
        s.parse().ok().map(DayId::Index)
    }

    pub fn year(&self) -> Option<i32> {
        match self {
            DayId::Date(d) => Some(d.year()),
            DayId::Index(_) => None,
        }
    }

    /// Integer label carried by alarms: days since 1970-01-01 for dates.
    pub fn ordinal(&self) -> i64 {
        match self {
            DayId::Date(d) => (*d - NaiveDate::default()).num_days(),
            DayId::Index(i) => *i,
        }
    }
}

impl fmt::Display for DayId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DayId::Date(d) => write!(f, "{}", d.format("%Y-%m-%d")),
            DayId::Index(i) => write!(f, "{i}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TradingDay {
    pub day_id: DayId,
    pub path: PricePath,
    pub sv: Option<SpotVolSeries>,
    pub session_minutes: f64,
}

impl TradingDay {
    /// Spot vols, or a flat series at the day's robust return scale.
    pub fn sv_or_proxy(&self) -> SpotVolSeries {
        self.sv.clone().unwrap_or_else(|| {
            let s = robust_vol(&self.path).max(crate::sim::SPOT_VOL_FLOOR);
            SpotVolSeries {
                delta_n: self.path.delta_n,
                values: vec![s; self.path.log_prices.len()],
            }
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoadOptions {
    /// Reject days whose row count is not `minutes + 1`.
    pub minutes_filter: Option<usize>,
    /// Accept input without a spot-vol column, substituting a return-based proxy.
    pub allow_missing_sv: bool,
    pub session_minutes: f64,
}

impl Default for LoadOptions {
    fn default() -> Self {
        Self {
            minutes_filter: None,
            allow_missing_sv: false,
            session_minutes: DEFAULT_SESSION_MINUTES,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub days: Vec<TradingDay>,
    /// One line per rejected day.
    pub diagnostics: Vec<String>,
}

#[derive(Debug, Clone, Copy)]
struct Columns {
    day: usize,
    index: usize,
    price: usize,
    is_log: bool,
    sv: Option<usize>,
}

fn find_columns(headers: &csv::StringRecord, file: &str) -> Result<Columns> {
    let pos = |names: &[&str]| names.iter().find_map(|n| headers.iter().position(|h| h.trim() == *n));
    let missing = |what: &str| Error::Parse {
        file: file.to_string(),
        line: 1,
        msg: format!("missing {what} column"),
    };
    let day = pos(&["day"]).ok_or_else(|| missing("day"))?;
    let index = pos(&["index"]).ok_or_else(|| missing("index"))?;
    let (price, is_log) = match pos(&["log_price", "log_price_observed"]) {
        Some(p) => (p, true),
        None => (pos(&["price"]).ok_or_else(|| missing("log_price or price"))?, false),
    };
    let sv = pos(&["spot_vol", "spot_vol_proxy"]);
    Ok(Columns {
        day,
        index,
        price,
        is_log,
        sv,
    })
}

struct Row {
    index: u64,
    log_price: f64,
    sv: Option<f64>,
}

fn csv_files(source: &Path) -> Result<Vec<PathBuf>> {
    if source.is_dir() {
        let mut files: Vec<PathBuf> = fs::read_dir(source)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|e| e == "csv"))
            .collect();
        files.sort();
        Ok(files)
    } else {
        Ok(vec![source.to_path_buf()])
    }
}

fn read_file(path: &Path, opts: &LoadOptions, days: &mut BTreeMap<DayId, Vec<Row>>) -> Result<()> {
    let file = path.display().to_string();
    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_path(path)?;
    let cols = find_columns(rdr.headers()?, &file)?;
    if cols.sv.is_none() && !opts.allow_missing_sv {
        return Err(Error::Parse {
            file,
            line: 1,
            msg: "missing spot_vol column (set the proxy option to substitute one)".into(),
        });
    }
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        let err = |msg: String| Error::Parse {
            file: file.clone(),
            line,
            msg,
        };
        let field = |i: usize| rec.get(i).ok_or_else(|| err(format!("missing field {i}")));
        let day = DayId::parse(field(cols.day)?).ok_or_else(|| err(format!("bad day '{}'", &rec[cols.day])))?;
        let index: u64 = field(cols.index)?
            .parse()
            .map_err(|_| err(format!("bad index '{}'", &rec[cols.index])))?;
        let raw: f64 = field(cols.price)?
            .parse()
            .map_err(|_| err(format!("bad price '{}'", &rec[cols.price])))?;
        let log_price = if cols.is_log { raw } else { raw.ln() };
        let sv = match cols.sv {
            Some(i) => Some(
                field(i)?
                    .parse::<f64>()
                    .map_err(|_| err(format!("bad spot_vol '{}'", &rec[i])))?,
            ),
            None => None,
        };
        if let Some((first, _)) = days.first_key_value() {
            if std::mem::discriminant(first) != std::mem::discriminant(&day) {
                return Err(err("mixed dated and integer day labels".into()));
            }
        }
        days.entry(day).or_default().push(Row { index, log_price, sv });
    }
    Ok(())
}

fn build_day(day_id: DayId, mut rows: Vec<Row>, opts: &LoadOptions) -> std::result::Result<TradingDay, String> {
    rows.sort_by_key(|r| r.index);
    if let Some(m) = opts.minutes_filter {
        if rows.len() != m + 1 {
            return Err(format!("{} rows, expected {} for a {m}-minute session", rows.len(), m + 1));
        }
    }
    if rows.len() < 2 {
        return Err("fewer than two rows".into());
    }
    for (i, r) in rows.iter().enumerate() {
        if r.index != i as u64 {
            return Err(format!("index gap or duplicate at position {i} (found {})", r.index));
        }
        if !r.log_price.is_finite() {
            return Err(format!("non-finite price at index {i}"));
        }
        if let Some(s) = r.sv {
            if !(s.is_finite() && s > 0.0) {
                return Err(format!("non-positive or non-finite spot_vol at index {i}"));
            }
        }
    }
    let path = PricePath::new(rows.iter().map(|r| r.log_price).collect(), day_id.ordinal())
        .map_err(|e| e.to_string())?;
    let sv = if rows[0].sv.is_some() {
        Some(SpotVolSeries {
            delta_n: path.delta_n,
            values: rows.iter().map(|r| r.sv.unwrap_or_default()).collect(),
        })
    } else {
        None
    };
    Ok(TradingDay {
        day_id,
        path,
        sv,
        session_minutes: opts.session_minutes,
    })
}

/// Reads one CSV file or every `*.csv` in a directory. Days with gaps,
/// duplicates, non-finite values or a row count failing the minutes filter
/// are dropped with a diagnostic line.
pub fn load_corpus(source: &Path, opts: &LoadOptions) -> Result<Corpus> {
    let mut rows = BTreeMap::new();
    for f in csv_files(source)? {
        read_file(&f, opts, &mut rows)?;
    }
    let mut days = Vec::new();
    let mut diagnostics = Vec::new();
    for (id, r) in rows {
        match build_day(id, r, opts) {
            Ok(d) => days.push(d),
            Err(msg) => diagnostics.push(format!("day {id} rejected: {msg}")),
        }
    }
    if days.is_empty() {
        return Err(Error::data(format!("no usable days in {}", source.display())));
    }
    Ok(Corpus { days, diagnostics })
}

/// Grid-aligned truncated realized volatility; `None` where fewer than
/// `window` increments precede the grid point.
#[derive(Debug, Clone, PartialEq)]
pub struct TvSeries {
    pub delta_n: f64,
    pub values: Vec<Option<f64>>,
}

impl TvSeries {
    pub fn mean(&self) -> Option<f64> {
        let v: Vec<f64> = self.values.iter().flatten().copied().collect();
        num::mean(&v)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TvParams {
    /// Window length in increments.
    pub window: usize,
    pub zeta: f64,
    pub varpi: f64,
}

/// `TV_i = √(Σ_{j=i−m+1}^{i} ΔY_j² 1{|ΔY_j| < ζΔₙ^ϖ} / (mΔₙ))`.
pub fn rolling_tv(path: &PricePath, p: &TvParams) -> Result<TvSeries> {
    if p.window < 2 {
        return Err(Error::config("TV window must span at least 2 increments"));
    }
    let cut = p.zeta * path.delta_n.powf(p.varpi);
    let sq: Vec<f64> = path
        .returns()
        .map(|d| if d.abs() < cut { d * d } else { 0.0 })
        .collect();
    let norm = p.window as f64 * path.delta_n;
    let mut values = vec![None; path.log_prices.len()];
    for (i, w) in sq.windows(p.window).enumerate() {
        values[i + p.window] = Some((w.iter().sum::<f64>() / norm).sqrt());
    }
    Ok(TvSeries {
        delta_n: path.delta_n,
        values,
    })
}

/// Robust per-√day volatility from the day's returns: `median|ΔY| / (Φ⁻¹(¾)√Δₙ)`.
pub fn robust_vol(path: &PricePath) -> f64 {
    let abs: Vec<f64> = path.returns().map(f64::abs).collect();
    num::median(&abs).unwrap_or(0.0) / (MAD_SCALE * path.delta_n.sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum RescaleMode {
    #[default]
    Mean,
    Median,
}

fn level(values: &[f64], mode: RescaleMode) -> Option<f64> {
    match mode {
        RescaleMode::Mean => num::mean(values),
        RescaleMode::Median => num::median(values),
    }
}

/// Factor `level(prev TV) / level(prev SV)` used to put SV on the TV scale.
pub fn rescale_factor(prev_tv: &TvSeries, prev_sv: &SpotVolSeries, mode: RescaleMode) -> Result<f64> {
    let tv: Vec<f64> = prev_tv.values.iter().flatten().copied().collect();
    let tv = level(&tv, mode).ok_or_else(|| Error::data("previous day has no defined TV"))?;
    let sv = level(&prev_sv.values, mode).unwrap_or(0.0);
    if !(sv > 0.0) {
        return Err(Error::data("previous-day SV level is zero"));
    }
    Ok(tv / sv)
}

/// Multiplies `sv` by the previous day's TV/SV level ratio.
pub fn rescale_sv(
    sv: &SpotVolSeries,
    prev_day: &TradingDay,
    tv: &TvParams,
    mode: RescaleMode,
) -> Result<SpotVolSeries> {
    let prev_tv = rolling_tv(&prev_day.path, tv)?;
    let prev_sv = prev_day.sv_or_proxy();
    let f = rescale_factor(&prev_tv, &prev_sv, mode)?;
    Ok(scale_series(sv, f))
}

fn scale_series(sv: &SpotVolSeries, f: f64) -> SpotVolSeries {
    SpotVolSeries {
        delta_n: sv.delta_n,
        values: sv.values.iter().map(|v| v * f).collect(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Block {
    pub name: String,
    pub start_min: f64,
    pub end_min: f64,
}

pub fn default_blocks() -> Vec<Block> {
    [("Morning", 0.0, 130.0), ("Noon", 130.0, 260.0), ("Afternoon", 260.0, 390.0)]
        .into_iter()
        .map(|(n, s, e)| Block {
            name: n.to_string(),
            start_min: s,
            end_min: e,
        })
        .collect()
}

/// Checks that the blocks tile `[0, session_minutes)` in order.
pub fn validate_blocks(blocks: &[Block], session_minutes: f64) -> Result<()> {
    let mut at = 0.0;
    for b in blocks {
        if b.start_min != at || b.end_min <= b.start_min {
            return Err(Error::config(format!("block '{}' breaks the partition at minute {at}", b.name)));
        }
        at = b.end_min;
    }
    if at != session_minutes {
        return Err(Error::config(format!("blocks end at {at}, session has {session_minutes} minutes")));
    }
    Ok(())
}

/// Regions found on one day, with the grid needed to convert indices to minutes.
#[derive(Debug, Clone, PartialEq)]
pub struct DayRegions {
    pub day_id: DayId,
    pub delta_n: f64,
    pub session_minutes: f64,
    pub regions: Vec<ViolationRegion>,
}

impl DayRegions {
    pub fn start_minute(&self, r: &ViolationRegion) -> f64 {
        r.start as f64 * self.delta_n * self.session_minutes
    }
}

fn block_of(blocks: &[Block], minute: f64) -> usize {
    blocks
        .iter()
        .position(|b| minute >= b.start_min && minute < b.end_min)
        .unwrap_or(blocks.len().saturating_sub(1))
}

/// Regions per block, attributed by start minute.
pub fn day_block_counts(days: &[DayRegions], blocks: &[Block]) -> Vec<u64> {
    let mut counts = vec![0; blocks.len()];
    for d in days {
        for r in &d.regions {
            counts[block_of(blocks, d.start_minute(r))] += 1;
        }
    }
    counts
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub bin_width: f64,
    /// Overall counts per bin `[i·w, (i+1)·w)`.
    pub overall: Vec<u64>,
    /// Counts per block, same bins.
    pub by_block: Vec<Vec<u64>>,
}

impl Histogram {
    pub fn total(&self) -> u64 {
        self.overall.iter().sum()
    }
}

pub fn duration_histogram(days: &[DayRegions], blocks: &[Block], bin_width: f64) -> Result<Histogram> {
    if !(bin_width.is_finite() && bin_width > 0.0) {
        return Err(Error::config("histogram bin width must be positive"));
    }
    let mut entries = Vec::new();
    for d in days {
        for r in &d.regions {
            let bin = (r.duration_min / bin_width + 1e-9).floor() as usize;
            entries.push((bin, block_of(blocks, d.start_minute(r))));
        }
    }
    let bins = entries.iter().map(|e| e.0 + 1).max().unwrap_or(1);
    let mut overall = vec![0; bins];
    let mut by_block = vec![vec![0; bins]; blocks.len()];
    for (bin, blk) in entries {
        overall[bin] += 1;
        if let Some(row) = by_block.get_mut(blk) {
            row[bin] += 1;
        }
    }
    Ok(Histogram {
        bin_width,
        overall,
        by_block,
    })
}

/// TV and rescaled SV for one day, both grid-aligned.
#[derive(Debug, Clone, PartialEq)]
pub struct DayVols {
    pub tv: TvSeries,
    pub sv: SpotVolSeries,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct VolComparison {
    pub episodes: usize,
    pub tv_before: Option<f64>,
    pub tv_after: Option<f64>,
    pub sv_before: Option<f64>,
    pub sv_after: Option<f64>,
}

/// Pooled mean TV and SV over `[start − h, start)` and `[start, start + h)`
/// around each region start. Windows are clipped to the session.
pub fn vol_comparison(days: &[(&DayRegions, &DayVols)], horizon_min: f64) -> VolComparison {
    let mut acc = [(0.0, 0usize); 4];
    let mut episodes = 0;
    for (d, v) in days {
        let per_min = 1.0 / (d.delta_n * d.session_minutes);
        let h = (horizon_min * per_min).round() as usize;
        let n = v.sv.values.len();
        for r in &d.regions {
            episodes += 1;
            let s = r.start as usize;
            let before = s.saturating_sub(h)..s.min(n);
            let after = s.min(n)..(s + h).min(n);
            for (slot, range) in [(0, before.clone()), (1, after.clone())] {
                for i in range.clone() {
                    if let Some(tv) = v.tv.values[i] {
                        acc[slot].0 += tv;
                        acc[slot].1 += 1;
                    }
                }
                for i in range {
                    acc[slot + 2].0 += v.sv.values[i];
                    acc[slot + 2].1 += 1;
                }
            }
        }
    }
    let m = |(s, c): (f64, usize)| (c > 0).then(|| s / c as f64);
    VolComparison {
        episodes,
        tv_before: m(acc[0]),
        tv_after: m(acc[1]),
        sv_before: m(acc[2]),
        sv_after: m(acc[3]),
    }
}

/// Region counts per calendar year; errors on integer-labelled days.
pub fn yearly_counts(days: &[DayRegions]) -> Result<BTreeMap<i32, u64>> {
    let mut out = BTreeMap::new();
    for d in days {
        let y = d
            .day_id
            .year()
            .ok_or_else(|| Error::data(format!("day {} carries no date", d.day_id)))?;
        if !d.regions.is_empty() {
            *out.entry(y).or_insert(0) += d.regions.len() as u64;
        }
    }
    Ok(out)
}

/// One ISO date per line; blank lines and `#` comments are ignored.
pub fn read_exclusion_dates(path: &Path) -> Result<BTreeSet<NaiveDate>> {
    let text = fs::read_to_string(path)?;
    let mut out = BTreeSet::new();
    for (i, line) in text.lines().enumerate() {
        let l = line.trim();
        if l.is_empty() || l.starts_with('#') {
            continue;
        }
        let d = NaiveDate::parse_from_str(l, "%Y-%m-%d").map_err(|e| Error::Parse {
            file: path.display().to_string(),
            line: i as u64 + 1,
            msg: format!("bad date '{l}': {e}"),
        })?;
        out.insert(d);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalyzeConfig {
    /// Detector settings; `zeta` and `delta_n` are set per day.
    pub detector: DetectorConfig,
    pub region_rule: RegionRule,
    pub tv_window_min: f64,
    pub horizon_min: f64,
    pub bin_width_min: f64,
    pub rescale: RescaleMode,
    pub blocks: Vec<Block>,
    pub session_minutes: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DayReport {
    pub day_id: DayId,
    pub zeta: f64,
    pub rescale_factor: f64,
    pub alarms: Vec<AlarmEvent>,
    pub regions: DayRegions,
    pub vols: DayVols,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorpusReport {
    pub days: Vec<DayReport>,
    pub blocks: Vec<Block>,
    pub block_counts: Vec<u64>,
    pub histogram: Histogram,
    /// `None` when the corpus is not dated.
    pub yearly: Option<BTreeMap<i32, u64>>,
    pub comparison: VolComparison,
    /// Comparison over days not on the exclusion list, when one is given.
    pub comparison_excluding: Option<VolComparison>,
    pub diagnostics: Vec<String>,
}

impl CorpusReport {
    pub fn total_regions(&self) -> u64 {
        self.days.iter().map(|d| d.regions.regions.len() as u64).sum()
    }
}

fn tv_params(cfg: &AnalyzeConfig, path: &PricePath) -> TvParams {
    let per_min = 1.0 / (path.delta_n * cfg.session_minutes);
    TvParams {
        window: ((cfg.tv_window_min * per_min).round() as usize).max(2),
        zeta: TRUNCATION_MULTIPLIER * robust_vol(path),
        varpi: cfg.detector.varpi,
    }
}

fn analyze_day(cfg: &AnalyzeConfig, prev: &TradingDay, day: &TradingDay) -> Result<DayReport> {
    let prev_tv = rolling_tv(&prev.path, &tv_params(cfg, &prev.path))?;
    let prev_sv = prev.sv_or_proxy();
    let factor = rescale_factor(&prev_tv, &prev_sv, cfg.rescale)?;
    let zeta = TRUNCATION_MULTIPLIER
        * num::median(&prev_sv.values).ok_or_else(|| Error::data("empty previous-day SV"))?
        * factor;
    let sv = scale_series(&day.sv_or_proxy(), factor);
    let n = day.path.steps();
    let det = DetectorConfig {
        zeta,
        delta_n: day.path.delta_n,
        ..cfg.detector
    };
    let (alarms, regions) = scan_day(
        &day.path,
        &sv,
        &det,
        &RegionOptions {
            rule: cfg.region_rule,
            session_minutes: cfg.session_minutes,
        },
    )?;
    debug_assert_eq!(sv.values.len(), n + 1);
    let tv = rolling_tv(&day.path, &tv_params(cfg, &day.path))?;
    Ok(DayReport {
        day_id: day.day_id,
        zeta,
        rescale_factor: factor,
        alarms,
        regions: DayRegions {
            day_id: day.day_id,
            delta_n: day.path.delta_n,
            session_minutes: cfg.session_minutes,
            regions,
        },
        vols: DayVols { tv, sv },
    })
}

/// Runs detection and region identification on every day after the first
/// (each day is rescaled and truncated using the day before), then builds
/// the corpus summaries.
pub fn analyze(corpus: &Corpus, cfg: &AnalyzeConfig, exclude: Option<&BTreeSet<NaiveDate>>) -> Result<CorpusReport> {
    validate_blocks(&cfg.blocks, cfg.session_minutes)?;
    if corpus.days.len() < 2 {
        return Err(Error::data("analysis needs at least two days (the first only seeds rescaling)"));
    }
    let days = corpus
        .days
        .par_windows(2)
        .map(|w| analyze_day(cfg, &w[0], &w[1]))
        .collect::<Result<Vec<_>>>()?;
    let regions: Vec<DayRegions> = days.iter().map(|d| d.regions.clone()).collect();
    let block_counts = day_block_counts(&regions, &cfg.blocks);
    let histogram = duration_histogram(&regions, &cfg.blocks, cfg.bin_width_min)?;
    let dated = days.iter().all(|d| d.day_id.year().is_some());
    let yearly = if dated { Some(yearly_counts(&regions)?) } else { None };
    let pairs: Vec<(&DayRegions, &DayVols)> = days.iter().map(|d| (&d.regions, &d.vols)).collect();
    let comparison = vol_comparison(&pairs, cfg.horizon_min);
    let comparison_excluding = exclude.map(|ex| {
        let kept: Vec<_> = pairs
            .iter()
            .filter(|(r, _)| !matches!(r.day_id, DayId::Date(d) if ex.contains(&d)))
            .copied()
            .collect();
        vol_comparison(&kept, cfg.horizon_min)
    });
    Ok(CorpusReport {
        days,
        blocks: cfg.blocks.clone(),
        block_counts,
        histogram,
        yearly,
        comparison,
        comparison_excluding,
        diagnostics: corpus.diagnostics.clone(),
    })
}
