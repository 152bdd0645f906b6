//! Experiment specifications, orchestration and CSV output.
//!
//! A spec is resolved in three layers: built-in defaults of the experiment
//! kind, then a TOML file, then command-line overrides. Every run writes one
//! CSV file (header row, `.` decimal) and a `.meta.toml` sidecar holding the
//! fully resolved spec. CSV payloads depend only on the spec, never on the
//! thread count or wall clock.

use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use log::info;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channel::{draw_large_scale, snr_relay_db, stream_rng, streams, SystemConfig};
use crate::error::{Error, Result};
use crate::filters::FilterMode;
use crate::opa::{db_to_linear, rate_targets_for_draw, run_algorithm1, AlgorithmSettings, Scheme};
use crate::scalar::RVector;
use crate::sim::{run_cell, Grid, SimResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    /// Uncoded BER at the relay against relay power.
    RelayBer,
    /// End-to-end BER against relay power and destination noise.
    E2eBer,
    /// Energy efficiency of the power allocation schemes against sum rate.
    OpaEe,
    /// Arbitrary grid reporting both relay and end-to-end BER.
    CustomSweep,
}

impl ExperimentKind {
    pub const ALL: [ExperimentKind; 4] =
        [ExperimentKind::RelayBer, ExperimentKind::E2eBer, ExperimentKind::OpaEe, ExperimentKind::CustomSweep];

    pub fn as_str(self) -> &'static str {
        match self {
            ExperimentKind::RelayBer => "relay-ber",
            ExperimentKind::E2eBer => "e2e-ber",
            ExperimentKind::OpaEe => "opa-ee",
            ExperimentKind::CustomSweep => "custom-sweep",
        }
    }

    /// CSV header of the experiment's output file.
    pub fn header(self) -> &'static [&'static str] {
        match self {
            ExperimentKind::RelayBer => {
                &["mode", "N", "K", "p_R_dB", "snr_dB", "trials", "symbols", "bit_errors", "bits", "ber"]
            }
            ExperimentKind::E2eBer => &[
                "mode", "N", "K", "p_R_dB", "sigma_nd2", "snr_dB", "trials", "symbols", "bit_errors", "bits", "ber",
            ],
            ExperimentKind::OpaEe => &["scheme", "sum_rate_target", "iteration", "p_R", "p_S_total", "EE", "feasible"],
            ExperimentKind::CustomSweep => &[
                "mode",
                "N",
                "K",
                "p_R_dB",
                "sigma_nd2",
                "snr_dB",
                "trials",
                "symbols",
                "relay_bit_errors",
                "relay_bits",
                "relay_ber",
                "e2e_bit_errors",
                "e2e_bits",
                "e2e_ber",
            ],
        }
    }
}

impl fmt::Display for ExperimentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ExperimentKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown experiment '{s}'")))
    }
}

/// Header of the per-draw companion file of `opa-ee`.
pub const OPA_DRAWS_HEADER: [&str; 11] = [
    "scheme",
    "N",
    "sum_rate_target",
    "draw",
    "iteration",
    "p_R",
    "p_S_total",
    "sum_rate",
    "EE",
    "EE_achieved",
    "status",
];

/// One curve of the energy-efficiency experiment, written `<scheme>-<mode>`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Variant {
    pub scheme: Scheme,
    pub mode: FilterMode,
}

impl Variant {
    pub const OPA_MMSE: Variant = Variant { scheme: Scheme::Opa, mode: FilterMode::Mmse };
    pub const OPA_NI: Variant = Variant { scheme: Scheme::Opa, mode: FilterMode::Ni };
    pub const OUPA_MMSE: Variant = Variant { scheme: Scheme::Oupa, mode: FilterMode::Mmse };
    pub const OUPA_NI: Variant = Variant { scheme: Scheme::Oupa, mode: FilterMode::Ni };

    pub fn name(self) -> String {
        format!("{}-{}", self.scheme.as_str(), self.mode)
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Config(format!("unknown scheme '{s}'; expected e.g. opa-mmse or oupa-ni"));
        let (scheme, mode) = s.split_once('-').ok_or_else(bad)?;
        let scheme = match scheme {
            "opa" => Scheme::Opa,
            "oupa" => Scheme::Oupa,
            _ => return Err(bad()),
        };
        let mode: FilterMode = mode.parse().map_err(|_| bad())?;
        if mode == FilterMode::Hd {
            return Err(Error::Config("power allocation needs a full-duplex filter (mmse or ni)".into()));
        }
        Ok(Variant { scheme, mode })
    }
}

impl TryFrom<String> for Variant {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<Variant> for String {
    fn from(v: Variant) -> String {
        v.name()
    }
}

/// Settings of the `opa-ee` experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OpaSettings {
    pub n_it: usize,
    pub iterations: usize,
    /// Shadowing draws averaged per sum-rate target.
    pub draws: usize,
    pub p_s_peak_db: f64,
    pub p_r_peak_db: f64,
    /// Rate-target weights are drawn uniformly from `{1, .., rate_levels}`.
    pub rate_levels: usize,
    pub variants: Vec<Variant>,
}

impl Default for OpaSettings {
    fn default() -> Self {
        Self {
            n_it: 1000,
            iterations: 5,
            draws: 20,
            p_s_peak_db: 3.0,
            p_r_peak_db: 10.0,
            rate_levels: 3,
            variants: vec![Variant::OPA_MMSE, Variant::OPA_NI, Variant::OUPA_NI, Variant::OUPA_MMSE],
        }
    }
}

/// Fully resolved experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub kind: ExperimentKind,
    /// Base system; `n_rx`, `n_tx`, `p_r` and `sigma_nd2` are replaced per
    /// grid cell.
    pub system: SystemConfig,
    /// Nominal relay SNR implied by `system`.
    pub snr_db: f64,
    pub grid: Grid,
    pub sum_rates: Vec<f64>,
    pub trials: u64,
    pub symbols: usize,
    pub opa: OpaSettings,
    pub out_dir: PathBuf,
    pub master_seed: u64,
    /// Worker threads; 0 uses every core.
    pub threads: usize,
    /// Write the wall-clock time into the sidecar file.
    pub timestamp: bool,
}

/// Relay powers from -10 dB to 30 dB in 2.5 dB steps.
pub fn default_p_r_db() -> Vec<f64> {
    (0..=16).map(|i| -10.0 + 2.5 * i as f64).collect()
}

impl ExperimentSpec {
    /// Built-in defaults of `kind`.
    pub fn defaults(kind: ExperimentKind) -> Self {
        let mut system = SystemConfig::default();
        let mut snr_db = 8.0;
        let mut grid = Grid {
            antennas: vec![32, 64, 128],
            p_r_db: default_p_r_db(),
            modes: FilterMode::ALL.to_vec(),
            sigma_nd2: vec![1.0],
        };
        match kind {
            ExperimentKind::RelayBer | ExperimentKind::CustomSweep => {}
            ExperimentKind::E2eBer => {
                grid.modes = vec![FilterMode::Mmse];
                grid.sigma_nd2 = vec![0.1, 1.0];
            }
            ExperimentKind::OpaEe => {
                system = system.with_pairs(10);
                system.shadowing_sigma_db = 6.0;
                snr_db = 16.0;
                grid = Grid { antennas: vec![64], p_r_db: vec![10.0], modes: vec![FilterMode::Mmse], sigma_nd2: vec![1.0] };
            }
        }
        system = system.with_relay_snr_db(snr_db);
        Self {
            kind,
            system,
            snr_db,
            grid,
            sum_rates: vec![5.0, 10.0, 15.0, 20.0, 25.0],
            trials: 500,
            symbols: 200,
            opa: OpaSettings::default(),
            out_dir: PathBuf::from("results"),
            master_seed: 1,
            threads: 0,
            timestamp: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let g = &self.grid;
        if g.is_empty() {
            return Err(Error::Config("every grid axis needs at least one value".into()));
        }
        for &n in &g.antennas {
            self.system.clone().with_antennas(n).validate()?;
        }
        if let Some(v) = g.p_r_db.iter().find(|v| !v.is_finite()) {
            return Err(Error::Config(format!("relay power {v} dB is not finite")));
        }
        if let Some(v) = g.sigma_nd2.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
            return Err(Error::Config(format!("destination noise {v} must be finite and non-negative")));
        }
        match self.kind {
            ExperimentKind::OpaEe => {
                if g.antennas.len() != 1 || g.sigma_nd2.len() != 1 {
                    return Err(Error::Config("opa-ee runs one array size and one destination noise at a time".into()));
                }
                if self.sum_rates.is_empty() || self.sum_rates.iter().any(|s| !(s.is_finite() && *s >= 0.0)) {
                    return Err(Error::Config("opa-ee needs non-negative sum-rate targets".into()));
                }
                let o = &self.opa;
                if o.variants.is_empty() {
                    return Err(Error::Config("opa-ee needs at least one scheme".into()));
                }
                if o.n_it == 0 || o.iterations == 0 || o.draws == 0 || o.rate_levels == 0 {
                    return Err(Error::Config("n_it, iterations, draws and rate_levels must be positive".into()));
                }
                if !o.p_s_peak_db.is_finite() || !o.p_r_peak_db.is_finite() {
                    return Err(Error::Config("peak powers must be finite".into()));
                }
            }
            _ => {
                if self.trials == 0 || self.symbols <= self.system.delay {
                    return Err(Error::Config("need trials > 0 and more symbols than the relay delay".into()));
                }
            }
        }
        Ok(())
    }

    /// File name stem of the outputs.
    pub fn stem(&self) -> String {
        self.kind.as_str().to_string()
    }

    pub fn csv_path(&self) -> PathBuf {
        self.out_dir.join(format!("{}.csv", self.stem()))
    }

    pub fn meta_path(&self) -> PathBuf {
        self.out_dir.join(format!("{}.meta.toml", self.stem()))
    }

    pub fn draws_path(&self) -> PathBuf {
        self.out_dir.join(format!("{}_draws.csv", self.stem()))
    }
}

/// System parameters a spec file or flag may override. Powers are in dB.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemOverrides {
    pub pairs: Option<usize>,
    pub mod_order: Option<usize>,
    /// Common source power, dB.
    pub p_s_db: Option<f64>,
    /// Nominal relay SNR, dB; sets `sigma_nr2`.
    pub snr_db: Option<f64>,
    pub sigma_nr2: Option<f64>,
    pub sigma_li2: Option<f64>,
    pub eps_h2: Option<f64>,
    pub eps_t2: Option<f64>,
    pub delay: Option<usize>,
    pub shadowing_sigma_db: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridOverrides {
    pub antennas: Option<Vec<usize>>,
    pub p_r_db: Option<Vec<f64>>,
    pub modes: Option<Vec<FilterMode>>,
    pub sigma_nd2: Option<Vec<f64>>,
    pub sum_rates: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OpaOverrides {
    pub n_it: Option<usize>,
    pub iterations: Option<usize>,
    pub draws: Option<usize>,
    pub p_s_peak_db: Option<f64>,
    pub p_r_peak_db: Option<f64>,
    pub rate_levels: Option<usize>,
    pub variants: Option<Vec<Variant>>,
}

/// Partial spec as read from a file or the command line.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpecOverrides {
    pub experiment: Option<ExperimentKind>,
    pub master_seed: Option<u64>,
    pub threads: Option<usize>,
    pub trials: Option<u64>,
    pub symbols: Option<usize>,
    pub out_dir: Option<PathBuf>,
    pub timestamp: Option<bool>,
    #[serde(default)]
    pub system: SystemOverrides,
    #[serde(default)]
    pub grid: GridOverrides,
    #[serde(default)]
    pub opa: OpaOverrides,
}

macro_rules! take_newer {
    ($base:expr, $top:expr; $($field:ident),+) => {
        $( if $top.$field.is_some() { $base.$field = $top.$field; } )+
    };
}

impl SpecOverrides {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        Self::from_toml(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    /// `top` wins wherever it sets a value.
    pub fn merged(mut self, top: SpecOverrides) -> Self {
        take_newer!(self, top; experiment, master_seed, threads, trials, symbols, out_dir, timestamp);
        take_newer!(self.system, top.system;
            pairs, mod_order, p_s_db, snr_db, sigma_nr2, sigma_li2, eps_h2, eps_t2, delay, shadowing_sigma_db);
        take_newer!(self.grid, top.grid; antennas, p_r_db, modes, sigma_nd2, sum_rates);
        take_newer!(self.opa, top.opa; n_it, iterations, draws, p_s_peak_db, p_r_peak_db, rate_levels, variants);
        self
    }

    /// Applies the overrides to the defaults of the selected kind (relay-ber
    /// when none is set) and validates the result.
    pub fn resolve(&self) -> Result<ExperimentSpec> {
        let kind = self.experiment.unwrap_or(ExperimentKind::RelayBer);
        let mut spec = ExperimentSpec::defaults(kind);
        let s = &self.system;
        if s.snr_db.is_some() && s.sigma_nr2.is_some() {
            return Err(Error::Config("set either snr_db or sigma_nr2, not both".into()));
        }
        let mut sys = spec.system.clone();
        if let Some(k) = s.pairs {
            sys = sys.with_pairs(k);
        }
        if let Some(db) = s.p_s_db {
            sys.p_s = vec![db_to_linear(db); sys.pairs];
        }
        macro_rules! copy {
            ($($field:ident),+) => { $( if let Some(v) = s.$field { sys.$field = v; } )+ };
        }
        copy!(mod_order, sigma_li2, eps_h2, eps_t2, delay, shadowing_sigma_db);
        match s.sigma_nr2 {
            Some(v) => sys.sigma_nr2 = v,
            None => sys = sys.with_relay_snr_db(s.snr_db.unwrap_or(spec.snr_db)),
        }
        if let Some(seed) = self.master_seed {
            spec.master_seed = seed;
        }
        sys.master_seed = spec.master_seed;
        spec.snr_db = snr_relay_db(&sys)?;
        spec.system = sys;

        let g = &self.grid;
        if let Some(v) = &g.antennas {
            spec.grid.antennas = v.clone();
        }
        if let Some(v) = &g.p_r_db {
            spec.grid.p_r_db = v.clone();
        }
        if let Some(v) = &g.modes {
            spec.grid.modes = v.clone();
        }
        if let Some(v) = &g.sigma_nd2 {
            spec.grid.sigma_nd2 = v.clone();
        }
        if let Some(v) = &g.sum_rates {
            spec.sum_rates = v.clone();
        }
        let o = &self.opa;
        take_newer_plain(&mut spec.opa.n_it, o.n_it);
        take_newer_plain(&mut spec.opa.iterations, o.iterations);
        take_newer_plain(&mut spec.opa.draws, o.draws);
        take_newer_plain(&mut spec.opa.p_s_peak_db, o.p_s_peak_db);
        take_newer_plain(&mut spec.opa.p_r_peak_db, o.p_r_peak_db);
        take_newer_plain(&mut spec.opa.rate_levels, o.rate_levels);
        if let Some(v) = &o.variants {
            spec.opa.variants = v.clone();
        }
        take_newer_plain(&mut spec.trials, self.trials);
        take_newer_plain(&mut spec.symbols, self.symbols);
        take_newer_plain(&mut spec.threads, self.threads);
        take_newer_plain(&mut spec.timestamp, self.timestamp);
        if let Some(dir) = &self.out_dir {
            spec.out_dir = dir.clone();
        }
        spec.validate()?;
        Ok(spec)
    }
}

fn take_newer_plain<V>(slot: &mut V, value: Option<V>) {
    if let Some(v) = value {
        *slot = v;
    }
}

/// Paths written by [`run_experiment`].
#[derive(Debug, Clone, PartialEq)]
pub struct RunOutput {
    pub csv: PathBuf,
    pub meta: PathBuf,
    /// Per-draw detail of `opa-ee`.
    pub draws: Option<PathBuf>,
}

/// Runs `spec` on a pool of `spec.threads` workers and writes its outputs.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<RunOutput> {
    spec.validate()?;
    fs::create_dir_all(&spec.out_dir)?;
    write_meta(spec)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(spec.threads)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    pool.install(|| match spec.kind {
        ExperimentKind::OpaEe => run_opa_ee(spec),
        _ => run_ber(spec),
    })
}

fn write_meta(spec: &ExperimentSpec) -> Result<()> {
    let body = toml::to_string_pretty(spec).map_err(|e| Error::Config(e.to_string()))?;
    let mut f = fs::File::create(spec.meta_path())?;
    writeln!(f, "# fdrelay {} {}", env!("CARGO_PKG_VERSION"), spec.kind)?;
    if spec.timestamp {
        let secs = std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0);
        writeln!(f, "# unix_time = {secs}")?;
    }
    f.write_all(body.as_bytes())?;
    Ok(())
}

fn ber_record(spec: &ExperimentSpec, r: &SimResult) -> Result<Vec<String>> {
    let cfg = spec.system.clone().with_antennas(r.cell.antennas);
    let snr = snr_relay_db(&cfg)?;
    let c = &r.counts;
    let head = vec![
        r.cell.mode.to_string(),
        r.cell.antennas.to_string(),
        cfg.pairs.to_string(),
        r.cell.p_r_db.to_string(),
    ];
    let tail = |errors: u64, bits: u64, ber: f64| vec![errors.to_string(), bits.to_string(), ber.to_string()];
    let mut row = head;
    match spec.kind {
        ExperimentKind::RelayBer => {
            row.extend([snr.to_string(), r.trials.to_string(), r.symbols_per_trial.to_string()]);
            row.extend(tail(c.relay_bit_errors, c.relay_bits, c.relay_ber()));
        }
        ExperimentKind::E2eBer => {
            row.extend([r.cell.sigma_nd2.to_string(), snr.to_string(), r.trials.to_string(), r.symbols_per_trial.to_string()]);
            row.extend(tail(c.e2e_bit_errors, c.e2e_bits, c.e2e_ber()));
        }
        ExperimentKind::CustomSweep => {
            row.extend([r.cell.sigma_nd2.to_string(), snr.to_string(), r.trials.to_string(), r.symbols_per_trial.to_string()]);
            row.extend(tail(c.relay_bit_errors, c.relay_bits, c.relay_ber()));
            row.extend(tail(c.e2e_bit_errors, c.e2e_bits, c.e2e_ber()));
        }
        ExperimentKind::OpaEe => unreachable!("BER rows are not written for opa-ee"),
    }
    Ok(row)
}

fn run_ber(spec: &ExperimentSpec) -> Result<RunOutput> {
    let path = spec.csv_path();
    let mut w = csv::Writer::from_path(&path)?;
    w.write_record(spec.kind.header())?;
    w.flush()?;
    let mut grid = spec.grid.clone();
    if spec.kind == ExperimentKind::RelayBer {
        // Relay decisions do not depend on the destination noise.
        grid.sigma_nd2.truncate(1);
    }
    let cells = grid.cells();
    for (i, cell) in cells.iter().enumerate() {
        let r = run_cell::<f64>(&spec.system, cell, spec.trials, spec.symbols)?;
        if r.singular_redraws > 0 {
            info!("{} N={} p_R={} dB: {} singular redraws", cell.mode, cell.antennas, cell.p_r_db, r.singular_redraws);
        }
        w.write_record(ber_record(spec, &r)?)?;
        w.flush()?;
        info!("cell {}/{} done", i + 1, cells.len());
    }
    Ok(RunOutput { csv: path, meta: spec.meta_path(), draws: None })
}

/// Outcome of one variant on one draw and target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DrawOutcome {
    pub variant: Variant,
    pub sum_rate_target: f64,
    pub draw: usize,
    pub feasible: bool,
    pub iterations: Vec<IterationStats>,
    pub status: String,
}

/// Powers and efficiency after one iteration of the allocation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IterationStats {
    pub p_r: f64,
    pub p_s_total: f64,
    /// `sum_k R_k` at the new powers.
    pub sum_rate: f64,
    /// Delivered rate `sum_k min(R_k, R_0,k)` per unit power.
    pub ee: f64,
    /// `sum_k R_k` per unit power, surplus above the targets included.
    pub ee_achieved: f64,
}

/// Averaged `opa-ee` row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EeRow {
    pub scheme: String,
    pub sum_rate_target: f64,
    pub iteration: usize,
    pub p_r: f64,
    pub p_s_total: f64,
    pub ee: f64,
    /// Fraction of draws on which the variant met every target.
    pub feasible: f64,
}

/// Large-scale gains of shadowing draw `draw`.
pub fn shadowing_draw(cfg: &SystemConfig, draw: u64) -> (RVector<f64>, RVector<f64>) {
    let mut rng = stream_rng(cfg.master_seed, streams::SHADOWING, draw);
    let sr = draw_large_scale(cfg.pairs, cfg.shadowing_sigma_db, &mut rng);
    let rd = draw_large_scale(cfg.pairs, cfg.shadowing_sigma_db, &mut rng);
    (sr, rd)
}

/// Runs every variant on every draw and target of `spec`.
pub fn opa_draw_outcomes(spec: &ExperimentSpec) -> Result<Vec<DrawOutcome>> {
    let mut cfg = spec.system.clone().with_antennas(spec.grid.antennas[0]);
    cfg.sigma_nd2 = spec.grid.sigma_nd2[0];
    let k = cfg.pairs;
    let o = &spec.opa;
    let per_draw: Vec<Vec<DrawOutcome>> = (0..o.draws)
        .into_par_iter()
        .map(|draw| -> Result<Vec<DrawOutcome>> {
            let (beta_sr, beta_rd) = shadowing_draw(&cfg, draw as u64);
            let mut out = Vec::new();
            for &target in &spec.sum_rates {
                let r0 = rate_targets_for_draw(cfg.master_seed, draw as u64, k, target, o.rate_levels);
                for &variant in &o.variants {
                    let settings = AlgorithmSettings {
                        r0: r0.clone(),
                        p_s_peak: vec![db_to_linear(o.p_s_peak_db); k],
                        p_r_peak: db_to_linear(o.p_r_peak_db),
                        n_it: o.n_it,
                        iterations: o.iterations,
                        mode: variant.mode,
                        scheme: variant.scheme,
                        stream_tag: draw as u64,
                    };
                    let res = run_algorithm1::<f64>(&cfg, &beta_sr, &beta_rd, &settings)?;
                    let feasible = res.allocation.is_feasible();
                    let iterations = res
                        .trace
                        .iter()
                        .map(|t| {
                            let p_s_total: f64 = t.p_s.iter().sum();
                            let total = p_s_total + t.p_r;
                            let delivered: f64 = t.report.r.iter().zip(&r0).map(|(r, r0)| r.min(*r0)).sum();
                            IterationStats {
                                p_r: t.p_r,
                                p_s_total,
                                sum_rate: t.report.sum_rate,
                                ee: if total > 0.0 { delivered / total } else { 0.0 },
                                ee_achieved: t.energy_efficiency,
                            }
                        })
                        .collect();
                    out.push(DrawOutcome {
                        variant,
                        sum_rate_target: target,
                        draw,
                        feasible,
                        iterations,
                        status: status_label(&res.allocation.status),
                    });
                }
            }
            Ok(out)
        })
        .collect::<Result<_>>()?;
    Ok(per_draw.into_iter().flatten().collect())
}

fn status_label(s: &crate::opa::AllocationStatus) -> String {
    use crate::opa::AllocationStatus as S;
    match s {
        S::Feasible => "feasible".into(),
        S::IterationLimit => "iteration-limit".into(),
        S::Infeasible { iteration, pairs } => {
            let pairs: Vec<String> = pairs.iter().map(|p| p.to_string()).collect();
            format!("infeasible@{}:{}", iteration.map_or(0, |i| i), pairs.join(" "))
        }
    }
}

/// Averages outcomes per variant, target and iteration over the draws on
/// which every variant is feasible, so all curves share the same channels.
pub fn average_ee(spec: &ExperimentSpec, outcomes: &[DrawOutcome]) -> Vec<EeRow> {
    let variants = &spec.opa.variants;
    let mut rows = Vec::new();
    for &target in &spec.sum_rates {
        let at: Vec<&DrawOutcome> = outcomes.iter().filter(|o| o.sum_rate_target == target).collect();
        let common: Vec<usize> = (0..spec.opa.draws)
            .filter(|&d| at.iter().filter(|o| o.draw == d).all(|o| o.feasible))
            .collect();
        for &v in variants {
            let mine: Vec<&&DrawOutcome> = at.iter().filter(|o| o.variant == v).collect();
            let feasible = mine.iter().filter(|o| o.feasible).count() as f64 / spec.opa.draws as f64;
            let used: Vec<&&DrawOutcome> = mine.iter().filter(|o| common.contains(&o.draw)).copied().collect();
            for it in 0..spec.opa.iterations {
                let n = used.len() as f64;
                let mean = |f: fn(&IterationStats) -> f64| {
                    if used.is_empty() {
                        f64::NAN
                    } else {
                        used.iter().map(|o| f(&o.iterations[it])).sum::<f64>() / n
                    }
                };
                rows.push(EeRow {
                    scheme: v.name(),
                    sum_rate_target: target,
                    iteration: it + 1,
                    p_r: mean(|t| t.p_r),
                    p_s_total: mean(|t| t.p_s_total),
                    ee: mean(|t| t.ee),
                    feasible,
                });
            }
        }
    }
    rows
}

fn run_opa_ee(spec: &ExperimentSpec) -> Result<RunOutput> {
    let outcomes = opa_draw_outcomes(spec)?;
    let n = spec.grid.antennas[0];

    let draws_path = spec.draws_path();
    let mut w = csv::Writer::from_path(&draws_path)?;
    w.write_record(OPA_DRAWS_HEADER)?;
    for o in &outcomes {
        for (i, t) in o.iterations.iter().enumerate() {
            w.write_record([
                o.variant.name(),
                n.to_string(),
                o.sum_rate_target.to_string(),
                o.draw.to_string(),
                (i + 1).to_string(),
                t.p_r.to_string(),
                t.p_s_total.to_string(),
                t.sum_rate.to_string(),
                t.ee.to_string(),
                t.ee_achieved.to_string(),
                o.status.clone(),
            ])?;
        }
    }
    w.flush()?;

    let path = spec.csv_path();
    let mut w = csv::Writer::from_path(&path)?;
    w.write_record(spec.kind.header())?;
    for r in average_ee(spec, &outcomes) {
        w.write_record([
            r.scheme,
            r.sum_rate_target.to_string(),
            r.iteration.to_string(),
            r.p_r.to_string(),
            r.p_s_total.to_string(),
            r.ee.to_string(),
            r.feasible.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(RunOutput { csv: path, meta: spec.meta_path(), draws: Some(draws_path) })
}
