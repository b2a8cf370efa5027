//! Command-line front end.
//!
//! Exit codes: 0 success, 2 usage, 3 I/O or CSV, 4 configuration,
//! 5 input data or parse error, 6 domain error, 1 anything else. Errors are
//! printed as a single line `error[<kind>]: <message>`.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use chrono::{Datelike, Days, NaiveDate, Weekday};
use clap::{Args, Parser, Subcommand};

use crate::config::Config;
use crate::detector::{scan_day, RegionOptions, TRUNCATION_MULTIPLIER};
use crate::error::{Error, Result};
use crate::ingest::{self, CorpusReport, DayId, TradingDay};
use crate::io::{fmt_f64, fmt_opt, header, sink, write_table};
use crate::montecarlo::{self, Contamination, McExperiment, McSummary};
use crate::num;
use crate::sim::{apply_db_noise, apply_pn_noise, derive_seed, proxy_spot_vol, HestonStream};
use crate::theory::{self, NuMode};

#[derive(Debug, Parser)]
#[command(name = "glr-cusum", version, about = "GLR-CUSUM detection of local semimartingale violations")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate Heston days, optionally contaminated, to a path CSV.
    Simulate(Common),
    /// Run the detector over an input corpus; writes alarms and regions.
    Detect(Common),
    /// Evaluate ν, D, D_a, ARL, FDR and EDD approximations.
    Theory(Common),
    /// Monte Carlo average run length.
    McArl(Common),
    /// Monte Carlo false detection rate.
    McFdr(Common),
    /// Monte Carlo detection rate and delay.
    McEdd(Common),
    /// Full empirical pipeline: regions, block counts, histogram, comparison, yearly counts.
    Analyze(Common),
}

#[derive(Debug, Args, Clone, Default)]
pub struct Common {
    /// TOML configuration file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub xi: Option<f64>,
    /// Maximum window in minutes (`inf` for the unbounded rule).
    #[arg(long)]
    pub window_min: Option<f64>,
    #[arg(long)]
    pub min_span_min: Option<f64>,
    #[arg(long)]
    pub warmup_min: Option<f64>,
    #[arg(long)]
    pub varpi: Option<f64>,
    #[arg(long)]
    pub obs_per_day: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub reps: Option<usize>,
    /// Number of days to simulate.
    #[arg(long)]
    pub days: Option<usize>,
    /// Input CSV file or directory.
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Output file (single table) or directory (several tables); standard output when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Raw Monte Carlo samples CSV.
    #[arg(long)]
    pub samples_out: Option<PathBuf>,
    /// ν evaluation mode: exact or approx.
    #[arg(long)]
    pub nu: Option<NuMode>,
    /// Post-change drift for the theoretical delay.
    #[arg(long)]
    pub mu: Option<f64>,
    /// Observations per FDR trial.
    #[arg(long)]
    pub ell: Option<usize>,
    /// Exclusion-dates file (one ISO date per line).
    #[arg(long)]
    pub exclude: Option<PathBuf>,
    /// Worker threads; results do not depend on this.
    #[arg(long)]
    pub threads: Option<usize>,
}

impl Common {
    /// File configuration with flag overrides applied.
    pub fn effective(&self) -> Result<Config> {
        let mut c = match &self.config {
            Some(p) => Config::load(p)?,
            None => Config::default(),
        };
        let d = &mut c.detector;
        if let Some(v) = self.xi {
            d.xi = v;
        }
        if let Some(v) = self.window_min {
            d.window_min = v;
        }
        if let Some(v) = self.min_span_min {
            d.min_span_min = v;
        }
        if let Some(v) = self.warmup_min {
            d.warmup_min = Some(v);
        }
        if let Some(v) = self.varpi {
            d.varpi = v;
        }
        if let Some(v) = self.obs_per_day {
            c.grid.obs_per_day = v;
        }
        if let Some(v) = self.seed {
            c.simulation.seed = v;
        }
        if let Some(v) = self.reps {
            c.montecarlo.reps = v;
        }
        if let Some(v) = self.days {
            c.simulation.days = v;
        }
        if let Some(v) = self.nu {
            c.theory.nu = v;
        }
        if let Some(v) = self.mu {
            c.theory.mu = Some(v);
        }
        if let Some(v) = self.ell {
            c.montecarlo.ell = v;
            c.theory.ell = v;
        }
        if let Some(v) = &self.exclude {
            c.ingest.exclusion_file = Some(v.clone());
        }
        if let Some(v) = self.threads {
            c.montecarlo.threads = Some(v);
        }
        if c.grid.obs_per_day < 2 {
            return Err(Error::config("obs_per_day must be at least 2"));
        }
        Ok(c)
    }
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Io(_) | Error::Csv(_) => 3,
        Error::Config(_) => 4,
        Error::Data(_) | Error::Parse { .. } => 5,
        Error::Domain(_) => 6,
        Error::WindowOutOfRange { .. } => 1,
    }
}

/// Parses `argv` (including the program name), runs the command and returns
/// the process exit status.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let stdout = std::io::stdout();
    let mut lock = stdout.lock();
    match execute(&cli, &mut lock) {
        Ok(()) => 0,
        Err(e) => {
            let msg = e.to_string().replace('\n', " ");
            eprintln!("error[{}]: {msg}", e.kind());
            exit_code(&e)
        }
    }
}

/// Runs a parsed command; tables without an `--out` target go to `stdout`.
pub fn execute(cli: &Cli, stdout: &mut dyn Write) -> Result<()> {
    match &cli.command {
        Command::Simulate(c) => simulate(c, stdout),
        Command::Detect(c) => detect(c, stdout),
        Command::Theory(c) => theory_cmd(c, stdout),
        Command::McArl(c) => mc(c, McKind::Arl, stdout),
        Command::McFdr(c) => mc(c, McKind::Fdr, stdout),
        Command::McEdd(c) => mc(c, McKind::Edd, stdout),
        Command::Analyze(c) => analyze(c, stdout),
    }
}

fn command_line(name: &str, c: &Common) -> String {
    let mut parts = vec![name.to_string()];
    let mut push = |flag: &str, v: Option<String>| {
        if let Some(v) = v {
            parts.push(format!("--{flag} {v}"));
        }
    };
    push("config", c.config.as_ref().map(|p| p.display().to_string()));
    push("xi", c.xi.map(fmt_f64));
    push("window-min", c.window_min.map(fmt_f64));
    push("min-span-min", c.min_span_min.map(fmt_f64));
    push("warmup-min", c.warmup_min.map(fmt_f64));
    push("varpi", c.varpi.map(fmt_f64));
    push("obs-per-day", c.obs_per_day.map(|v| v.to_string()));
    push("seed", c.seed.map(|v| v.to_string()));
    push("reps", c.reps.map(|v| v.to_string()));
    push("days", c.days.map(|v| v.to_string()));
    push("nu", c.nu.map(|v| v.to_string()));
    push("mu", c.mu.map(fmt_f64));
    push("ell", c.ell.map(|v| v.to_string()));
    parts.join(" ")
}

/// Table destination: `<out>/<name>` when `out` is a directory target,
/// standard output otherwise.
struct Outputs<'a> {
    dir: Option<PathBuf>,
    stdout: &'a mut dyn Write,
}

impl<'a> Outputs<'a> {
    fn dir(out: &Option<PathBuf>, stdout: &'a mut dyn Write) -> Result<Self> {
        if let Some(d) = out {
            fs::create_dir_all(d)?;
        }
        Ok(Self {
            dir: out.clone(),
            stdout,
        })
    }

    fn table(&mut self, name: &str, header: &str, cols: &[&str], rows: &[Vec<String>]) -> Result<()> {
        match &self.dir {
            Some(d) => write_table(sink(Some(&d.join(name)))?, header, cols, rows),
            None => write_table(&mut *self.stdout, header, cols, rows),
        }
    }
}

fn single(out: &Option<PathBuf>, stdout: &mut dyn Write, header: &str, cols: &[&str], rows: &[Vec<String>]) -> Result<()> {
    match out {
        Some(p) if p.as_os_str() != "-" => write_table(sink(Some(p))?, header, cols, rows),
        _ => write_table(stdout, header, cols, rows),
    }
}

/// Consecutive weekdays from `start`.
fn weekdays(start: NaiveDate, n: usize) -> Vec<NaiveDate> {
    let mut out = Vec::with_capacity(n);
    let mut d = start;
    while out.len() < n {
        if !matches!(d.weekday(), Weekday::Sat | Weekday::Sun) {
            out.push(d);
        }
        d = d + Days::new(1);
    }
    out
}

fn simulate(c: &Common, stdout: &mut dyn Write) -> Result<()> {
    let cfg = c.effective()?;
    let n = cfg.grid.obs_per_day;
    let sim = &cfg.simulation;
    let contamination = cfg.contamination.build(&cfg.heston)?;
    let v0 = sim.v0.unwrap_or(cfg.heston.theta);
    let mut stream = HestonStream::new(cfg.heston, n, v0, derive_seed(sim.seed, 0))?;
    let labels: Vec<String> = match sim.start_date {
        Some(d) => weekdays(d, sim.days).iter().map(|d| d.format("%Y-%m-%d").to_string()).collect(),
        None => (0..sim.days).map(|i| i.to_string()).collect(),
    };
    let mut rows = Vec::with_capacity(sim.days * (n + 1));
    for (d, label) in labels.iter().enumerate() {
        let day = stream.next_day();
        let proxy = proxy_spot_vol(&day.true_vol, sim.proxy_noise, derive_seed(sim.seed, 1 + d as u64))?;
        let (efficient, observed) = match &contamination {
            Contamination::None => (day.path.clone(), day.path.clone()),
            Contamination::Db(db) => (day.path.clone(), apply_db_noise(&day.path, db)),
            Contamination::Pn(pn) => (crate::sim::pn_efficient_with_jump(&day.path, pn), apply_pn_noise(&day.path, pn)),
        };
        for i in 0..=n {
            rows.push(vec![
                label.clone(),
                i.to_string(),
                fmt_f64(day.path.time(i)),
                fmt_f64(efficient.log_prices[i]),
                fmt_f64(observed.log_prices[i]),
                fmt_f64(day.true_vol.values[i]),
                fmt_f64(proxy.values[i]),
            ]);
        }
    }
    let h = header(&command_line("simulate", c), &cfg.to_toml());
    single(
        &c.out,
        stdout,
        &h,
        &[
            "day",
            "index",
            "time_day_units",
            "log_price_efficient",
            "log_price_observed",
            "spot_vol_true",
            "spot_vol_proxy",
        ],
        &rows,
    )
}

fn load_input(c: &Common, cfg: &Config) -> Result<ingest::Corpus> {
    let input = c
        .input
        .as_ref()
        .ok_or_else(|| Error::config("--input is required"))?;
    ingest::load_corpus(input, &cfg.load_options())
}

fn obs_per_day(days: &[TradingDay]) -> Result<usize> {
    let n = days[0].path.steps();
    if days.iter().any(|d| d.path.steps() != n) {
        return Err(Error::data("all days must share one grid"));
    }
    Ok(n)
}

fn wall_minute(l: u64, delta_n: f64, session_minutes: f64) -> f64 {
    l as f64 * delta_n * session_minutes
}

fn alarm_rows(day: &DayId, alarms: &[crate::detector::AlarmEvent], delta_n: f64, session: f64) -> Vec<Vec<String>> {
    alarms
        .iter()
        .map(|a| {
            vec![
                day.to_string(),
                a.l.to_string(),
                a.k_star.to_string(),
                fmt_f64(a.statistic),
                fmt_f64(wall_minute(a.l, delta_n, session)),
            ]
        })
        .collect()
}

fn region_rows(day: &DayId, regions: &[crate::detector::ViolationRegion]) -> Vec<Vec<String>> {
    regions
        .iter()
        .map(|r| {
            vec![
                day.to_string(),
                r.start.to_string(),
                r.end.to_string(),
                fmt_f64(r.duration_min),
                fmt_f64(r.peak_stat),
            ]
        })
        .collect()
}

const ALARM_COLS: [&str; 5] = ["day", "l", "k_star", "statistic", "wall_minute"];
const REGION_COLS: [&str; 5] = ["day", "start_index", "end_index", "duration_min", "peak_stat"];

fn detect(c: &Common, stdout: &mut dyn Write) -> Result<()> {
    let cfg = c.effective()?;
    let corpus = load_input(c, &cfg)?;
    let n = obs_per_day(&corpus.days)?;
    let base = cfg.detector_config(n, cfg.warmup_min_or(cfg.window_warmup_min()), 1.0)?;
    let opts = RegionOptions {
        rule: cfg.detector.region_rule,
        session_minutes: cfg.grid.session_minutes,
    };
    let mut alarms = Vec::new();
    let mut regions = Vec::new();
    for (i, day) in corpus.days.iter().enumerate() {
        // Truncation scale from the previous day, or the same day for the first.
        let ref_day = if i == 0 { day } else { &corpus.days[i - 1] };
        let zeta = TRUNCATION_MULTIPLIER
            * num::median(&ref_day.sv_or_proxy().values).ok_or_else(|| Error::data("empty spot-vol series"))?;
        let det = crate::detector::DetectorConfig {
            zeta,
            delta_n: day.path.delta_n,
            ..base
        };
        let (a, r) = scan_day(&day.path, &day.sv_or_proxy(), &det, &opts)?;
        alarms.extend(alarm_rows(&day.day_id, &a, day.path.delta_n, cfg.grid.session_minutes));
        regions.extend(region_rows(&day.day_id, &r));
    }
    let mut effective = cfg.to_toml();
    for d in &corpus.diagnostics {
        effective.push_str(&format!("\nskipped: {d}"));
    }
    let h = header(&command_line("detect", c), &effective);
    let mut out = Outputs::dir(&c.out, stdout)?;
    out.table("alarms.csv", &h, &ALARM_COLS, &alarms)?;
    out.table("regions.csv", &h, &REGION_COLS, &regions)
}

fn theory_cmd(c: &Common, stdout: &mut dyn Write) -> Result<()> {
    let cfg = c.effective()?;
    let t = &cfg.theory;
    let consts = t.constants();
    consts.validate()?;
    let xi = cfg.detector.xi;
    let mode = t.nu;
    let m = mode.to_string();
    let mut rows = Vec::new();
    let mut row = |q: &str, inputs: String, v: f64| rows.push(vec![q.to_string(), inputs, fmt_f64(v), m.clone()]);
    row("D", String::new(), theory::big_d(mode, &consts)?);
    let mut ratios = vec![f64::INFINITY];
    if let Some(w) = cfg.window_min() {
        let w_obs = (w * cfg.grid.obs_per_day as f64 / cfg.grid.session_minutes).round();
        ratios.push(w_obs / (xi * xi));
    }
    for a in ratios {
        let tag = format!("xi={};a={}", fmt_f64(xi), fmt_f64(a));
        row("D_a", format!("a={}", fmt_f64(a)), theory::d_of_a(a, mode, &consts)?);
        row("arl", tag.clone(), theory::arl_theory(xi, a, mode, &consts)?);
        let f = theory::fdr_theory(xi, a, t.ell as f64, mode, &consts)?;
        row("fdr_linear", format!("{tag};ell={}", t.ell), f.linear);
        row("fdr_exponential", format!("{tag};ell={}", t.ell), f.exponential);
    }
    if let Some(mu) = t.mu {
        row(
            "edd",
            format!("xi={};mu={}", fmt_f64(xi), fmt_f64(mu)),
            theory::edd_closed_form(xi, mu, t.rho)?,
        );
    }
    let h = header(&command_line("theory", c), &cfg.to_toml());
    single(&c.out, stdout, &h, &["quantity", "inputs", "value", "mode"], &rows)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum McKind {
    Arl,
    Fdr,
    Edd,
}

fn mc(c: &Common, kind: McKind, stdout: &mut dyn Write) -> Result<()> {
    let cfg = c.effective()?;
    let n = cfg.grid.obs_per_day;
    // Run lengths count from the first observation; one-day trials skip the
    // opening window.
    let warmup = match kind {
        McKind::Arl => cfg.warmup_min_or(0.0),
        McKind::Fdr | McKind::Edd => cfg.warmup_min_or(cfg.window_warmup_min()),
    };
    let det = cfg.detector_config(n, warmup, 1.0)?;
    let mut exp = McExperiment::new(cfg.heston, det, n, cfg.montecarlo.reps, cfg.simulation.seed);
    exp.max_days_per_rep = cfg.montecarlo.max_days_per_rep;
    exp.proxy_noise = cfg.simulation.proxy_noise;
    exp.threads = cfg.montecarlo.threads;
    let (name, summary) = match kind {
        McKind::Arl => ("mc-arl", montecarlo::run_arl(&exp)?),
        McKind::Fdr => ("mc-fdr", montecarlo::run_fdr(&exp, cfg.montecarlo.ell)?),
        McKind::Edd => {
            exp.contamination = cfg.contamination.build(&cfg.heston)?;
            ("mc-edd", montecarlo::run_edd(&exp)?)
        }
    };
    let rows = summary_rows(&summary, kind, &cfg)?;
    let mut effective = cfg.to_toml();
    for w in &summary.warnings {
        effective.push_str(&format!("\nwarning: {w}"));
    }
    let h = header(&command_line(name, c), &effective);
    single(&c.out, stdout, &h, &["quantity", "value", "se"], &rows)?;
    if let Some(p) = &c.samples_out {
        let col = if kind == McKind::Edd { "delay" } else { "stopping_time" };
        let rows: Vec<Vec<String>> = summary
            .samples
            .iter()
            .enumerate()
            .map(|(i, v)| vec![i.to_string(), fmt_f64(*v)])
            .collect();
        write_table(sink(Some(p))?, &h, &["sample", col], &rows)?;
    }
    Ok(())
}

fn summary_rows(s: &McSummary, kind: McKind, cfg: &Config) -> Result<Vec<Vec<String>>> {
    let est = |e: Option<montecarlo::Estimate>| (fmt_opt(e.map(|e| e.mean)), fmt_opt(e.map(|e| e.se)));
    let mut rows = vec![vec!["replications".into(), s.replications.to_string(), String::new()]];
    match kind {
        McKind::Arl => {
            let (m, se) = est(s.arl);
            rows.push(vec!["arl".into(), m, se]);
            rows.push(vec!["capped".into(), s.capped.to_string(), String::new()]);
            if s.samples.len() >= montecarlo::MIN_KS_SAMPLES {
                let ks = montecarlo::exponentiality_check(&s.samples)?;
                rows.push(vec!["ks_statistic".into(), fmt_f64(ks.statistic), String::new()]);
                rows.push(vec!["ks_p_value".into(), fmt_f64(ks.p_value), String::new()]);
            }
        }
        McKind::Fdr => {
            let (m, se) = est(s.fdr);
            rows.push(vec!["fdr".into(), m, se]);
        }
        McKind::Edd => {
            let (m, se) = est(s.detection_rate);
            rows.push(vec!["detection_rate".into(), m, se]);
            let (m, se) = est(s.edd);
            rows.push(vec!["edd_obs".into(), m, se]);
            let secs = cfg.grid.session_minutes * 60.0 / cfg.grid.obs_per_day as f64;
            let (m, se) = est(s.edd.map(|e| montecarlo::Estimate {
                mean: e.mean * secs,
                se: e.se * secs,
            }));
            rows.push(vec!["edd_seconds".into(), m, se]);
        }
    }
    Ok(rows)
}

fn with_threads<T: Send>(threads: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    match threads {
        Some(t) => Ok(rayon::ThreadPoolBuilder::new()
            .num_threads(t.max(1))
            .build()
            .map_err(|e| Error::config(format!("thread pool: {e}")))?
            .install(f)),
        None => Ok(f()),
    }
}

fn analyze(c: &Common, stdout: &mut dyn Write) -> Result<()> {
    let cfg = c.effective()?;
    let corpus = load_input(c, &cfg)?;
    let n = obs_per_day(&corpus.days)?;
    let acfg = cfg.analyze_config(n)?;
    let exclude = match &cfg.ingest.exclusion_file {
        Some(p) => Some(ingest::read_exclusion_dates(p)?),
        None => None,
    };
    let report = with_threads(cfg.montecarlo.threads, || ingest::analyze(&corpus, &acfg, exclude.as_ref()))??;
    let mut effective = cfg.to_toml();
    for d in &report.diagnostics {
        effective.push_str(&format!("\nskipped: {d}"));
    }
    let h = header(&command_line("analyze", c), &effective);
    write_report(&report, &h, &mut Outputs::dir(&c.out, stdout)?)
}

fn write_report(report: &CorpusReport, h: &str, out: &mut Outputs<'_>) -> Result<()> {
    let mut alarms = Vec::new();
    let mut regions = Vec::new();
    for d in &report.days {
        alarms.extend(alarm_rows(&d.day_id, &d.alarms, d.regions.delta_n, d.regions.session_minutes));
        regions.extend(region_rows(&d.day_id, &d.regions.regions));
    }
    out.table("alarms.csv", h, &ALARM_COLS, &alarms)?;
    out.table("regions.csv", h, &REGION_COLS, &regions)?;

    let mut blocks: Vec<Vec<String>> = report
        .blocks
        .iter()
        .zip(&report.block_counts)
        .map(|(b, n)| vec![b.name.clone(), fmt_f64(b.start_min), fmt_f64(b.end_min), n.to_string()])
        .collect();
    blocks.push(vec![
        "Total".into(),
        fmt_f64(report.blocks.first().map_or(0.0, |b| b.start_min)),
        fmt_f64(report.blocks.last().map_or(0.0, |b| b.end_min)),
        report.total_regions().to_string(),
    ]);
    out.table("blocks.csv", h, &["block", "start_min", "end_min", "count"], &blocks)?;

    let hist = &report.histogram;
    let mut rows = Vec::new();
    for (i, n) in hist.overall.iter().enumerate() {
        let lo = fmt_f64(i as f64 * hist.bin_width);
        let hi = fmt_f64((i + 1) as f64 * hist.bin_width);
        rows.push(vec!["All".into(), lo.clone(), hi.clone(), n.to_string()]);
        for (b, counts) in report.blocks.iter().zip(&hist.by_block) {
            rows.push(vec![b.name.clone(), lo.clone(), hi.clone(), counts[i].to_string()]);
        }
    }
    out.table("histogram.csv", h, &["block", "bin_start_min", "bin_end_min", "count"], &rows)?;

    if let Some(y) = &report.yearly {
        let rows: Vec<Vec<String>> = y.iter().map(|(y, n)| vec![y.to_string(), n.to_string()]).collect();
        out.table("yearly.csv", h, &["year", "count"], &rows)?;
    }

    let cmp_row = |label: &str, c: &ingest::VolComparison| {
        vec![
            label.to_string(),
            c.episodes.to_string(),
            fmt_opt(c.tv_before),
            fmt_opt(c.tv_after),
            fmt_opt(c.sv_before),
            fmt_opt(c.sv_after),
        ]
    };
    let mut rows = vec![cmp_row("All", &report.comparison)];
    if let Some(c) = &report.comparison_excluding {
        rows.push(cmp_row("Excluding listed dates", c));
    }
    out.table(
        "comparison.csv",
        h,
        &["sample", "episodes", "tv_before", "tv_after", "sv_before", "sv_after"],
        &rows,
    )
}

/// Reads a table written by this tool, skipping the comment header.
pub fn read_table(path: &Path) -> Result<Vec<csv::StringRecord>> {
    let mut rdr = csv::ReaderBuilder::new().comment(Some(b'#')).from_path(path)?;
    Ok(rdr.records().collect::<std::result::Result<_, _>>()?)
}
