//! Experiment orchestration: metrics, sweeps and artifact export.

use crate::em::{build_channels, add_noise, synthesize_noiseless, SubcarrierChannels};
use crate::error::{Error, Result};
use crate::mace::{bim_fusion, FusionParams, FusionResult, Truth};
use crate::material::{accuracy, identify, Classification, ClusterParams};
use crate::pilot::{design_pilots, random_pilots, PilotParams, PilotSet};
use crate::scenario::{Built, ScenarioConfig};
use crate::sensing::SensingContext;
use crate::C64;
use faer::{Col, Mat, MatRef};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

/// Reported in place of `-inf` for an exact reconstruction.
pub const NMSE_FLOOR_DB: f64 = -300.0;

/// NMSE in dB between property vectors `[eps_r - 1; sigma / (omega_c eps_0)]`.
///
/// The denominator is the energy of `eps_r` itself (not `eps_r - 1`) plus the
/// scaled conductivity.
pub fn nmse_db(s_true: &Col<f64>, s_est: &Col<f64>) -> Result<f64> {
    if s_true.nrows() != s_est.nrows() || s_true.nrows() % 2 != 0 {
        return Err(Error::dims("NMSE needs property vectors of equal even length"));
    }
    let m = s_true.nrows() / 2;
    let num: f64 = (0..2 * m).map(|i| (s_true[i] - s_est[i]).powi(2)).sum();
    let den: f64 = (0..m).map(|i| (s_true[i] + 1.0).powi(2) + s_true[i + m].powi(2)).sum();
    ratio_db(num, den)
}

/// NMSE in dB from physical maps.
pub fn nmse_physical_db(eps_true: &[f64], sigma_true: &[f64], eps_est: &[f64], sigma_est: &[f64], omega_c: f64) -> Result<f64> {
    let m = eps_true.len();
    if sigma_true.len() != m || eps_est.len() != m || sigma_est.len() != m {
        return Err(Error::dims("NMSE maps differ in length"));
    }
    let w = 1.0 / (omega_c * crate::VACUUM_PERMITTIVITY).powi(2);
    let num: f64 = (0..m)
        .map(|i| (eps_true[i] - eps_est[i]).powi(2) + w * (sigma_true[i] - sigma_est[i]).powi(2))
        .sum();
    let den: f64 = (0..m).map(|i| eps_true[i].powi(2) + w * sigma_true[i].powi(2)).sum();
    ratio_db(num, den)
}

fn ratio_db(num: f64, den: f64) -> Result<f64> {
    if !(den > 0.0) {
        return Err(Error::invalid("NMSE reference has zero norm"));
    }
    if !num.is_finite() {
        return Err(Error::NonFinite("NMSE numerator"));
    }
    if num == 0.0 {
        return Ok(NMSE_FLOOR_DB);
    }
    Ok((10.0 * (num / den).log10()).max(NMSE_FLOOR_DB))
}

/// `H + Delta` with complex Gaussian `Delta` scaled so that
/// `||Delta||_F^2 / ||H||_F^2` equals `10^(target_db / 10)`.
/// `target_db = -inf` returns `H` unchanged.
pub fn inject_channel_error(h: MatRef<'_, C64>, target_db: f64, rng: &mut ChaCha8Rng) -> Result<Mat<C64>> {
    if target_db.is_nan() || target_db == f64::INFINITY {
        return Err(Error::invalid(format!("channel error level must be finite or -inf, got {target_db}")));
    }
    if target_db == f64::NEG_INFINITY {
        return Ok(h.to_owned());
    }
    let delta = Mat::<C64>::from_fn(h.nrows(), h.ncols(), |_, _| {
        let re: f64 = StandardNormal.sample(rng);
        let im: f64 = StandardNormal.sample(rng);
        C64::new(re, im)
    });
    let dn = delta.squared_norm_l2();
    if dn == 0.0 {
        return Ok(h.to_owned());
    }
    let scale = (10f64.powf(target_db / 10.0) * h.squared_norm_l2() / dn).sqrt();
    Ok(h + &delta * faer::Scale(C64::new(scale, 0.0)))
}

/// Perturbs every `H1` and `H2` block; beamformers stay exact.
pub fn perturb_channels(channels: &[SubcarrierChannels], target_db: f64, seed: u64) -> Result<Vec<SubcarrierChannels>> {
    let mut out = channels.to_vec();
    let mut stream = 0u64;
    for ch in &mut out {
        for h in ch.h1.iter_mut().chain(ch.h2.iter_mut()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(stream);
            stream += 1;
            *h = inject_channel_error(h.as_ref(), target_db, &mut rng)?;
        }
    }
    Ok(out)
}

/// Parameters of a single run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunParams {
    pub snr_db: f64,
    /// Number of fused BSs, taken in order.
    pub n_bs: usize,
    /// Subcarrier count; the scenario's when absent.
    pub k: Option<usize>,
    /// Injected channel NMSE in dB; exact channels when absent.
    pub channel_error_db: Option<f64>,
}

impl Default for RunParams {
    fn default() -> Self {
        Self { snr_db: 30.0, n_bs: 4, k: None, channel_error_db: None }
    }
}

/// Sweep axes; an empty axis keeps the base value. All axes empty means no points.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepAxes {
    pub snr_db: Vec<f64>,
    pub k: Vec<usize>,
    pub n_bs: Vec<usize>,
    pub channel_error_db: Vec<f64>,
}

impl SweepAxes {
    pub fn is_empty(&self) -> bool {
        self.snr_db.is_empty() && self.k.is_empty() && self.n_bs.is_empty() && self.channel_error_db.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PilotConfig {
    pub symbols: usize,
    /// Designed pilots when true, random full-power pilots otherwise.
    pub design: bool,
    pub params: PilotParams,
}

impl Default for PilotConfig {
    fn default() -> Self {
        Self { symbols: 8, design: true, params: PilotParams::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Seeds {
    pub placement: u64,
    pub pilots: u64,
    pub noise: u64,
    pub channel_error: u64,
}

impl Default for Seeds {
    fn default() -> Self {
        Self { placement: 1, pilots: 2, noise: 3, channel_error: 4 }
    }
}

/// A complete experiment description, as read from TOML.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub scenario: ScenarioConfig,
    #[serde(default)]
    pub run: RunParams,
    #[serde(default)]
    pub sweep: SweepAxes,
    #[serde(default)]
    pub pilots: PilotConfig,
    #[serde(default)]
    pub fusion: FusionParams,
    #[serde(default)]
    pub cluster: ClusterParams,
    #[serde(default)]
    pub seeds: Seeds,
    /// Output directory; nothing is written when absent.
    #[serde(default)]
    pub output: Option<PathBuf>,
    /// Directory that relative paths resolve against.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl ExperimentConfig {
    /// Desk-scale preset.
    pub fn desk() -> Self {
        Self {
            scenario: ScenarioConfig::desk(),
            run: RunParams::default(),
            sweep: SweepAxes::default(),
            pilots: PilotConfig {
                params: PilotParams { max_iters: 100, rel_tol: 1e-6, restarts: 1, ..PilotParams::default() },
                ..PilotConfig::default()
            },
            fusion: FusionParams::desk(),
            cluster: ClusterParams::default(),
            seeds: Seeds::default(),
            output: None,
            base_dir: PathBuf::from("."),
        }
    }

    /// Full-size preset.
    pub fn faithful() -> Self {
        let mut cfg = Self::desk();
        cfg.scenario = ScenarioConfig::faithful();
        cfg.pilots = PilotConfig { symbols: 16, ..PilotConfig::default() };
        cfg.fusion = FusionParams::default();
        cfg
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "desk" => Ok(Self::desk()),
            "faithful" => Ok(Self::faithful()),
            other => Err(Error::Config(format!("unknown preset '{other}'"))),
        }
    }

    pub fn from_toml(text: &str, base_dir: &Path) -> Result<Self> {
        let mut cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.base_dir = base_dir.to_path_buf();
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::from_toml(&text, &base)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Applies `dotted.key=value` overrides. Values parse as TOML literals,
    /// falling back to plain strings.
    pub fn with_overrides(&self, overrides: &[String]) -> Result<Self> {
        if overrides.is_empty() {
            return Ok(self.clone());
        }
        let mut tree = toml::Value::try_from(self).map_err(|e| Error::Config(e.to_string()))?;
        for ov in overrides {
            let (key, raw) = ov
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("override '{ov}' is not key=value")))?;
            let value = parse_literal(raw.trim());
            let mut node = &mut tree;
            let parts: Vec<&str> = key.trim().split('.').collect();
            for (i, part) in parts.iter().enumerate() {
                let table = node
                    .as_table_mut()
                    .ok_or_else(|| Error::Config(format!("'{key}': '{part}' is not inside a table")))?;
                if i + 1 == parts.len() {
                    table.insert((*part).to_string(), value.clone());
                    break;
                }
                node = table
                    .entry((*part).to_string())
                    .or_insert_with(|| toml::Value::Table(Default::default()));
            }
        }
        let mut out: Self = tree.try_into().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        out.base_dir = self.base_dir.clone();
        Ok(out)
    }

    /// Hex SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        hex_sha256(serde_json::to_string(self).expect("config serializes").as_bytes())
    }

    pub fn base_point(&self) -> SweepPoint {
        SweepPoint {
            snr_db: self.run.snr_db,
            k: self.run.k.unwrap_or(self.scenario.carriers.count),
            n_bs: self.run.n_bs,
            channel_error_db: self.run.channel_error_db,
        }
    }

    /// Cartesian product of the sweep axes.
    pub fn sweep_points(&self) -> Vec<SweepPoint> {
        if self.sweep.is_empty() {
            return Vec::new();
        }
        let base = self.base_point();
        let or = |v: &Vec<f64>, b: f64| if v.is_empty() { vec![b] } else { v.clone() };
        let snrs = or(&self.sweep.snr_db, base.snr_db);
        let ks = if self.sweep.k.is_empty() { vec![base.k] } else { self.sweep.k.clone() };
        let ls = if self.sweep.n_bs.is_empty() { vec![base.n_bs] } else { self.sweep.n_bs.clone() };
        let errs: Vec<Option<f64>> = if self.sweep.channel_error_db.is_empty() {
            vec![base.channel_error_db]
        } else {
            self.sweep.channel_error_db.iter().map(|&e| Some(e)).collect()
        };
        let mut out = Vec::new();
        for &k in &ks {
            for &e in &errs {
                for &l in &ls {
                    for &snr in &snrs {
                        out.push(SweepPoint { snr_db: snr, k, n_bs: l, channel_error_db: e });
                    }
                }
            }
        }
        out
    }
}

fn parse_literal(raw: &str) -> toml::Value {
    let wrapped = format!("v = {raw}");
    match toml::from_str::<toml::Table>(&wrapped) {
        Ok(mut t) => t.remove("v").unwrap_or_else(|| toml::Value::String(raw.to_string())),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

fn hex_sha256(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// One point of a sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub snr_db: f64,
    pub k: usize,
    pub n_bs: usize,
    pub channel_error_db: Option<f64>,
}

/// Metrics of one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub config_hash: String,
    pub point_hash: String,
    pub snr_db: f64,
    pub k: usize,
    pub n_bs: usize,
    pub channel_error_db: Option<f64>,
    pub nmse_db: f64,
    /// Over target pixels.
    pub accuracy: f64,
    /// Over all pixels.
    pub accuracy_all: f64,
    pub target_clusters: usize,
    pub air_offset: Option<f64>,
    pub mann_iterations: usize,
    pub relinearizations: usize,
    pub overhead: usize,
    pub converged: bool,
    pub pilot_infeasible_blocks: usize,
    /// SHA-256 of the estimate's bytes.
    pub estimate_hash: String,
    pub wall_time_s: f64,
}

impl RunReport {
    /// Hash of every field except wall time.
    pub fn determinism_hash(&self) -> String {
        let mut copy = self.clone();
        copy.wall_time_s = 0.0;
        hex_sha256(serde_json::to_string(&copy).expect("report serializes").as_bytes())
    }

    pub const CSV_HEADER: &'static str = "config_hash,point_hash,snr_db,k,n_bs,channel_error_db,nmse_db,accuracy,accuracy_all,target_clusters,air_offset,mann_iterations,relinearizations,overhead,converged,pilot_infeasible_blocks,estimate_hash,wall_time_s";

    pub fn csv_row(&self) -> String {
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{:.3}",
            self.config_hash,
            self.point_hash,
            self.snr_db,
            self.k,
            self.n_bs,
            opt(self.channel_error_db),
            self.nmse_db,
            self.accuracy,
            self.accuracy_all,
            self.target_clusters,
            opt(self.air_offset),
            self.mann_iterations,
            self.relinearizations,
            self.overhead,
            self.converged,
            self.pilot_infeasible_blocks,
            self.estimate_hash,
            self.wall_time_s
        )
    }
}

/// Everything produced by one run.
#[derive(Debug, Clone)]
pub struct PointOutcome {
    pub report: RunReport,
    pub s_est: Col<f64>,
    pub classification: Classification,
    pub fusion: FusionResult,
}

/// Scene, channels, pilots and noiseless data for one subcarrier count.
pub struct Prepared {
    pub built: Built,
    pub channels: Vec<SubcarrierChannels>,
    pub pilots: PilotSet,
    pub pilot_infeasible_blocks: usize,
    pub noiseless: Vec<Vec<Col<C64>>>,
}

/// Runs sweep points, reusing the expensive setup between them.
pub struct Experiment {
    cfg: ExperimentConfig,
    cache: BTreeMap<usize, Prepared>,
}

impl Experiment {
    pub fn new(cfg: ExperimentConfig) -> Self {
        Self { cfg, cache: BTreeMap::new() }
    }

    pub fn config(&self) -> &ExperimentConfig {
        &self.cfg
    }

    /// Scene, channels, pilots and noiseless measurements for `k` subcarriers.
    pub fn prepare(&mut self, k: usize) -> Result<&Prepared> {
        if !self.cache.contains_key(&k) {
            let mut sc = self.cfg.scenario.clone();
            sc.carriers.count = k;
            let built = sc.build(&self.cfg.base_dir, self.cfg.seeds.placement)?;
            let channels = build_channels(&built.scene)?;
            let (pilots, infeasible) = if self.cfg.pilots.design {
                let rep = design_pilots(&built.scene, &channels, self.cfg.pilots.symbols, &self.cfg.pilots.params, self.cfg.seeds.pilots)?;
                (rep.pilots, rep.infeasible_blocks)
            } else {
                (random_pilots(&built.scene, self.cfg.pilots.symbols, self.cfg.seeds.pilots)?, 0)
            };
            let noiseless = synthesize_noiseless(&built.scene, &channels, &built.s_true, &pilots)?;
            self.cache.insert(
                k,
                Prepared { built, channels, pilots, pilot_infeasible_blocks: infeasible, noiseless },
            );
        }
        Ok(&self.cache[&k])
    }

    pub fn run_point(&mut self, point: &SweepPoint) -> Result<PointOutcome> {
        let start = Instant::now();
        let config_hash = self.cfg.hash();
        let point_hash = hex_sha256(format!("{config_hash}{}", serde_json::to_string(point).expect("point serializes")).as_bytes());
        if point.n_bs == 0 || point.n_bs > self.cfg.scenario.bss.positions.len() {
            return Err(Error::invalid(format!(
                "n_bs = {} but the scenario has {} base stations",
                point.n_bs,
                self.cfg.scenario.bss.positions.len()
            )));
        }
        let fusion_params = self.cfg.fusion.clone();
        let cluster_params = self.cfg.cluster;
        let noise_seed = self.cfg.seeds.noise;
        let err_seed = self.cfg.seeds.channel_error;
        let prep = self.prepare(point.k)?;
        let meas = add_noise(&prep.noiseless, &prep.channels, point.snr_db, noise_seed)?;
        let perturbed;
        let channels: &[SubcarrierChannels] = match point.channel_error_db {
            Some(db) => {
                perturbed = perturb_channels(&prep.channels, db, err_seed)?;
                &perturbed
            }
            None => &prep.channels,
        };
        let omega_c = prep.built.scene.subcarriers.omega_c();
        let ctx = SensingContext {
            region: &prep.built.scene.region,
            channels,
            pilots: &prep.pilots,
            y: &meas.y,
            omega_c,
        };
        let fusion = bim_fusion(&ctx, point.n_bs, &fusion_params, Some(Truth { s: &prep.built.s_true }))?;
        let s_est = fusion.s_star.clone();
        let nmse = nmse_db(&prep.built.s_true, &s_est)?;
        let classification = identify(&s_est, prep.built.target.db(), omega_c, &cluster_params)?;
        let acc = accuracy(&classification.pixel_labels, &prep.built.target)?;
        let bytes: Vec<u8> = s_est.iter().flat_map(|v| v.to_le_bytes()).collect();
        let report = RunReport {
            config_hash,
            point_hash,
            snr_db: point.snr_db,
            k: point.k,
            n_bs: point.n_bs,
            channel_error_db: point.channel_error_db,
            nmse_db: nmse,
            accuracy: acc.target,
            accuracy_all: acc.all,
            target_clusters: classification.target_clusters(),
            air_offset: classification.air_offset(),
            mann_iterations: fusion.mann_iterations,
            relinearizations: fusion.relinearizations,
            overhead: fusion.overhead,
            converged: fusion.converged,
            pilot_infeasible_blocks: prep.pilot_infeasible_blocks,
            estimate_hash: hex_sha256(&bytes),
            wall_time_s: start.elapsed().as_secs_f64(),
        };
        log::info!(
            "snr {} dB, K {}, L {}, channel error {:?}: NMSE {:.2} dB, accuracy {:.3}, {} Mann iterations",
            point.snr_db, point.k, point.n_bs, point.channel_error_db, nmse, acc.target, fusion.mann_iterations
        );
        let outcome = PointOutcome { report, s_est, classification, fusion };
        if let Some(dir) = &self.cfg.output {
            let dir = if dir.is_absolute() { dir.clone() } else { self.cfg.base_dir.join(dir) };
            let n_side = self.cfg.scenario.region.n_side;
            write_point(&dir, n_side, &outcome)?;
        }
        Ok(outcome)
    }

    /// Runs every point; failures are logged and skipped.
    pub fn run_points(&mut self, points: &[SweepPoint]) -> (Vec<RunReport>, usize) {
        let mut reports = Vec::new();
        let mut failures = 0;
        for p in points {
            match self.run_point(p) {
                Ok(o) => reports.push(o.report),
                Err(e) => {
                    failures += 1;
                    log::error!("sweep point {p:?} failed: {e}");
                }
            }
        }
        (reports, failures)
    }
}

/// Runs all sweep points of `cfg`. Returns the reports and the failure count.
pub fn run_experiment(cfg: &ExperimentConfig) -> (Vec<RunReport>, usize) {
    let points = cfg.sweep_points();
    Experiment::new(cfg.clone()).run_points(&points)
}

fn write_point(root: &Path, n_side: usize, outcome: &PointOutcome) -> Result<()> {
    let dir = root.join(&outcome.report.point_hash[..16]);
    std::fs::create_dir_all(&dir)?;
    export_images(&outcome.s_est, n_side, &dir)?;
    std::fs::write(dir.join("convergence.csv"), outcome.fusion.log_csv())?;
    let json = serde_json::to_string_pretty(&outcome.report).map_err(|e| Error::Parse(e.to_string()))?;
    std::fs::write(dir.join("report.json"), json)?;
    append_report(&root.join("reports.csv"), &outcome.report)
}

/// Appends one row, writing the header when the file is new.
pub fn append_report(path: &Path, report: &RunReport) -> Result<()> {
    let fresh = !path.exists();
    let mut f = std::fs::OpenOptions::new().create(true).append(true).open(path)?;
    if fresh {
        writeln!(f, "{}", RunReport::CSV_HEADER)?;
    }
    writeln!(f, "{}", report.csv_row())?;
    Ok(())
}

/// File names written by [`export_images`].
pub const EPS_CSV: &str = "eps_minus_one.csv";
pub const SIGMA_CSV: &str = "sigma_scaled.csv";
pub const EPS_PGM: &str = "eps_r.pgm";
pub const SIGMA_PGM: &str = "sigma_scaled.pgm";

/// Writes both halves of `s` as `n_side x n_side` CSV grids and 8-bit PGM
/// images. Pixel `(row, col)` is grid index `row * n_side + col`, row 0 at
/// the top. Images stretch `[min, max]` to `[0, 255]`; a flat map is black.
pub fn export_images(s: &Col<f64>, n_side: usize, dir: &Path) -> Result<()> {
    let m = n_side * n_side;
    if s.nrows() != 2 * m {
        return Err(Error::dims(format!("estimate has {} entries, grid needs {}", s.nrows(), 2 * m)));
    }
    let eps: Vec<f64> = (0..m).map(|i| s[i]).collect();
    let sig: Vec<f64> = (0..m).map(|i| s[i + m]).collect();
    std::fs::write(dir.join(EPS_CSV), grid_csv(&eps, n_side))?;
    std::fs::write(dir.join(SIGMA_CSV), grid_csv(&sig, n_side))?;
    let eps_r: Vec<f64> = eps.iter().map(|v| v + 1.0).collect();
    std::fs::write(dir.join(EPS_PGM), pgm(&eps_r, n_side))?;
    std::fs::write(dir.join(SIGMA_PGM), pgm(&sig, n_side))?;
    Ok(())
}

fn grid_csv(v: &[f64], n: usize) -> String {
    let mut out = String::new();
    for row in v.chunks(n) {
        let line: Vec<String> = row.iter().map(|x| format!("{x:?}")).collect();
        out.push_str(&line.join(","));
        out.push('\n');
    }
    out
}

fn pgm(v: &[f64], n: usize) -> Vec<u8> {
    let lo = v.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out = format!("P5\n{n} {n}\n255\n").into_bytes();
    out.extend(v.iter().map(|x| {
        if hi > lo {
            (((x - lo) / (hi - lo)) * 255.0).round() as u8
        } else {
            0
        }
    }));
    out
}

/// Reads back the estimate written by [`export_images`].
pub fn load_estimate(dir: &Path) -> Result<(usize, Col<f64>)> {
    let eps = parse_grid_csv(&std::fs::read_to_string(dir.join(EPS_CSV))?)?;
    let sig = parse_grid_csv(&std::fs::read_to_string(dir.join(SIGMA_CSV))?)?;
    if eps.0 != sig.0 {
        return Err(Error::Parse("grids differ in size".into()));
    }
    let m = eps.1.len();
    Ok((eps.0, Col::from_fn(2 * m, |i| if i < m { eps.1[i] } else { sig.1[i - m] })))
}

fn parse_grid_csv(text: &str) -> Result<(usize, Vec<f64>)> {
    let mut vals = Vec::new();
    let mut rows = 0;
    for line in text.lines().filter(|l| !l.trim().is_empty()) {
        rows += 1;
        for t in line.split(',') {
            vals.push(t.trim().parse::<f64>().map_err(|e| Error::Parse(format!("grid value '{t}': {e}")))?);
        }
    }
    if rows * rows != vals.len() {
        return Err(Error::Parse("grid CSV is not square".into()));
    }
    Ok((rows, vals))
}

/// Mean NMSE and accuracy per sweep point of a reports CSV, as a text table.
pub fn summarize_reports(csv: &str) -> Result<String> {
    let mut lines = csv.lines();
    let header: Vec<&str> = lines.next().ok_or_else(|| Error::Parse("empty report".into()))?.split(',').collect();
    let col = |name: &str| {
        header
            .iter()
            .position(|h| *h == name)
            .ok_or_else(|| Error::Parse(format!("report lacks column '{name}'")))
    };
    let (snr, k, l, ce, nm, acc, it) = (
        col("snr_db")?,
        col("k")?,
        col("n_bs")?,
        col("channel_error_db")?,
        col("nmse_db")?,
        col("accuracy")?,
        col("mann_iterations")?,
    );
    let mut groups: BTreeMap<(String, String, String, String), (usize, f64, f64, f64)> = BTreeMap::new();
    for line in lines.filter(|l| !l.trim().is_empty()) {
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != header.len() {
            return Err(Error::Parse(format!("report row has {} fields, header {}", f.len(), header.len())));
        }
        let num = |i: usize| f[i].parse::<f64>().map_err(|e| Error::Parse(format!("'{}': {e}", f[i])));
        let key = (f[k].to_string(), f[l].to_string(), f[ce].to_string(), f[snr].to_string());
        let e = groups.entry(key).or_insert((0, 0.0, 0.0, 0.0));
        e.0 += 1;
        e.1 += num(nm)?;
        e.2 += num(acc)?;
        e.3 += num(it)?;
    }
    let mut out = format!("{:>4} {:>4} {:>10} {:>8} {:>5} {:>10} {:>9} {:>8}\n", "K", "L", "ch_err_dB", "SNR_dB", "runs", "NMSE_dB", "accuracy", "mann_it");
    for ((k, l, ce, snr), (n, nm, acc, it)) in &groups {
        let n = *n as f64;
        let ce = if ce.is_empty() { "-" } else { ce };
        out.push_str(&format!(
            "{k:>4} {l:>4} {ce:>10} {snr:>8} {:>5} {:>10.2} {:>9.3} {:>8.1}\n",
            n as usize,
            nm / n,
            acc / n,
            it / n
        ));
    }
    Ok(out)
}
