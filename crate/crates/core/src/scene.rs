//! Scene geometry: the sensed region, UE and BS arrays, the subcarrier comb,
//! material tables, steering vectors and receiver beamforming.

use crate::error::{Error, Result};
use crate::{SPEED_OF_LIGHT, VACUUM_PERMITTIVITY};
use faer::{Col, Mat};
use num_complex::Complex64;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

/// A point in the sensing plane, meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 2]", into = "[f64; 2]")]
pub struct Point2 {
    pub x: f64,
    pub y: f64,
}

impl Point2 {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn distance(self, other: Point2) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }

    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    fn sub(self, other: Point2) -> Point2 {
        Point2::new(self.x - other.x, self.y - other.y)
    }

    fn dot(self, other: Point2) -> f64 {
        self.x * other.x + self.y * other.y
    }
}

impl From<[f64; 2]> for Point2 {
    fn from(v: [f64; 2]) -> Self {
        Point2::new(v[0], v[1])
    }
}

impl From<Point2> for [f64; 2] {
    fn from(p: Point2) -> Self {
        [p.x, p.y]
    }
}

/// Square region `D` discretized into an `n_side x n_side` lattice of cell
/// centers.
///
/// Grid index `m = row * n_side + col`. Column 0 is the smallest `x`, row 0 the
/// largest `y`, so row-major order reads like an image with north at the top.
#[derive(Debug, Clone, PartialEq)]
pub struct GridRegion {
    center: Point2,
    half_extent: f64,
    n_side: usize,
    points: Vec<Point2>,
}

impl GridRegion {
    pub fn new(center: Point2, half_extent: f64, n_side: usize) -> Result<Self> {
        if !(half_extent > 0.0) || !half_extent.is_finite() {
            return Err(Error::invalid(format!("half_extent must be positive, got {half_extent}")));
        }
        if n_side == 0 {
            return Err(Error::invalid("n_side must be at least 1"));
        }
        let cell = 2.0 * half_extent / n_side as f64;
        let mut points = Vec::with_capacity(n_side * n_side);
        for row in 0..n_side {
            for col in 0..n_side {
                points.push(Point2::new(
                    center.x - half_extent + (col as f64 + 0.5) * cell,
                    center.y + half_extent - (row as f64 + 0.5) * cell,
                ));
            }
        }
        Ok(Self {
            center,
            half_extent,
            n_side,
            points,
        })
    }

    pub fn center(&self) -> Point2 {
        self.center
    }

    pub fn half_extent(&self) -> f64 {
        self.half_extent
    }

    pub fn n_side(&self) -> usize {
        self.n_side
    }

    /// Number of sampling points `M`.
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[Point2] {
        &self.points
    }

    pub fn cell_side(&self) -> f64 {
        2.0 * self.half_extent / self.n_side as f64
    }

    pub fn cell_area(&self) -> f64 {
        self.cell_side().powi(2)
    }

    /// Whether `p` lies in the closed square `[center +- half_extent]^2`.
    pub fn contains(&self, p: Point2) -> bool {
        (p.x - self.center.x).abs() <= self.half_extent && (p.y - self.center.y).abs() <= self.half_extent
    }

    pub fn corners(&self) -> [Point2; 4] {
        let (c, h) = (self.center, self.half_extent);
        [
            Point2::new(c.x - h, c.y - h),
            Point2::new(c.x + h, c.y - h),
            Point2::new(c.x + h, c.y + h),
            Point2::new(c.x - h, c.y + h),
        ]
    }

    pub fn index(&self, row: usize, col: usize) -> usize {
        row * self.n_side + col
    }
}

/// Tabulated electromagnetic constants of one material.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaterialSpec {
    pub name: String,
    pub eps_r: f64,
    /// Conductivity, S/m.
    pub sigma: f64,
}

impl MaterialSpec {
    pub fn new(name: impl Into<String>, eps_r: f64, sigma: f64) -> Result<Self> {
        if !(eps_r >= 1.0) || !eps_r.is_finite() {
            return Err(Error::invalid(format!("eps_r must be >= 1, got {eps_r}")));
        }
        if !(sigma >= 0.0) || !sigma.is_finite() {
            return Err(Error::invalid(format!("sigma must be >= 0, got {sigma}")));
        }
        Ok(Self {
            name: name.into(),
            eps_r,
            sigma,
        })
    }

    pub fn air() -> Self {
        Self {
            name: "air".into(),
            eps_r: 1.0,
            sigma: 0.0,
        }
    }

    /// `(eps_r, sigma / (omega_c eps_0))`, the feature-space coordinates.
    pub fn feature(&self, omega_c: f64) -> [f64; 2] {
        [self.eps_r, self.sigma / (omega_c * VACUUM_PERMITTIVITY)]
    }
}

const BUILTIN_MATERIALS: &str = include_str!("../assets/materials.csv");

/// Material table. Entry 0 is always air.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaterialDb {
    entries: Vec<MaterialSpec>,
}

impl MaterialDb {
    pub fn new(entries: Vec<MaterialSpec>) -> Result<Self> {
        match entries.first() {
            Some(first) if first.eps_r == 1.0 && first.sigma == 0.0 => {}
            _ => return Err(Error::invalid("material table must start with air (eps_r = 1, sigma = 0)")),
        }
        for e in &entries {
            MaterialSpec::new(e.name.clone(), e.eps_r, e.sigma)?;
        }
        Ok(Self { entries })
    }

    /// The shipped table evaluated at 28 GHz.
    pub fn builtin() -> Self {
        Self::builtin_at(28e9)
    }

    /// The shipped table (air plus ten building materials) at `freq_hz`.
    pub fn builtin_at(freq_hz: f64) -> Self {
        Self::parse_at(BUILTIN_MATERIALS, freq_hz).expect("builtin material table is valid")
    }

    /// Parses a fixed-value table at 28 GHz; see [`MaterialDb::parse_at`].
    pub fn parse(text: &str) -> Result<Self> {
        Self::parse_at(text, 28e9)
    }

    /// Parses a material table. Rows are either `name,eps_r,sigma` or
    /// `name,a,b,c,d` with `eps_r = a f^b`, `sigma = c f^d`, `f` in GHz,
    /// evaluated at `freq_hz`. `#` starts a comment and lines starting
    /// with `name` are headers.
    pub fn parse_at(text: &str, freq_hz: f64) -> Result<Self> {
        if !(freq_hz > 0.0) {
            return Err(Error::invalid("material evaluation frequency must be positive"));
        }
        let f = freq_hz / 1e9;
        let mut entries = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() || line.starts_with("name") {
                continue;
            }
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            let num = |s: &str| {
                s.parse::<f64>()
                    .map_err(|e| Error::Parse(format!("material line {}: {e}", lineno + 1)))
            };
            let (eps_r, sigma) = match fields.len() {
                3 => (num(fields[1])?, num(fields[2])?),
                5 => (num(fields[2]).map(|b| f.powf(b))? * num(fields[1])?, num(fields[3])? * f.powf(num(fields[4])?)),
                _ => return Err(Error::Parse(format!("material line {}: expected 3 or 5 fields", lineno + 1))),
            };
            entries.push(MaterialSpec::new(fields[0], eps_r, sigma)?);
        }
        Self::new(entries)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn load_at(path: &std::path::Path, freq_hz: f64) -> Result<Self> {
        Self::parse_at(&std::fs::read_to_string(path)?, freq_hz)
    }

    pub fn entries(&self) -> &[MaterialSpec] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, index: usize) -> Option<&MaterialSpec> {
        self.entries.get(index)
    }

    pub fn find(&self, name: &str) -> Option<usize> {
        self.entries.iter().position(|e| e.name.eq_ignore_ascii_case(name))
    }
}

/// Ground-truth material labels over the grid (`0` = air).
#[derive(Debug, Clone, PartialEq)]
pub struct TargetMap {
    labels: Vec<usize>,
    db: MaterialDb,
}

impl TargetMap {
    pub fn new(labels: Vec<usize>, db: MaterialDb) -> Result<Self> {
        if let Some(bad) = labels.iter().find(|&&l| l >= db.len()) {
            return Err(Error::invalid(format!("label {bad} outside material table of {} entries", db.len())));
        }
        Ok(Self { labels, db })
    }

    pub fn air(m: usize, db: MaterialDb) -> Self {
        Self { labels: vec![0; m], db }
    }

    /// Parses a whitespace-separated square grid of material indices, row 0
    /// at the top. Blank lines and `#` comments are ignored.
    pub fn parse_grid(text: &str, db: MaterialDb) -> Result<(usize, Self)> {
        let mut rows: Vec<Vec<usize>> = Vec::new();
        for raw in text.lines() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let row = line
                .split_whitespace()
                .map(|t| t.parse::<usize>().map_err(|e| Error::Parse(format!("phantom grid: {e}"))))
                .collect::<Result<Vec<_>>>()?;
            rows.push(row);
        }
        let n = rows.len();
        if n == 0 || rows.iter().any(|r| r.len() != n) {
            return Err(Error::Parse("phantom grid must be square".into()));
        }
        let labels = rows.into_iter().flatten().collect();
        Ok((n, Self::new(labels, db)?))
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn db(&self) -> &MaterialDb {
        &self.db
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn target_pixels(&self) -> usize {
        self.labels.iter().filter(|&&l| l != 0).count()
    }

    /// Nearest-neighbour resampling of an `n_from x n_from` map onto
    /// `n_to x n_to`.
    pub fn resample(&self, n_from: usize, n_to: usize) -> Result<Self> {
        if n_from * n_from != self.labels.len() {
            return Err(Error::dims(format!("map has {} labels, not {n_from}^2", self.labels.len())));
        }
        let mut labels = Vec::with_capacity(n_to * n_to);
        for row in 0..n_to {
            let src_row = ((row as f64 + 0.5) * n_from as f64 / n_to as f64) as usize;
            for col in 0..n_to {
                let src_col = ((col as f64 + 0.5) * n_from as f64 / n_to as f64) as usize;
                labels.push(self.labels[src_row.min(n_from - 1) * n_from + src_col.min(n_from - 1)]);
            }
        }
        Self::new(labels, self.db.clone())
    }

    /// The property vector `s = [eps_r - 1; sigma / (omega_c eps_0)]`.
    pub fn property_vector(&self, omega_c: f64) -> Col<f64> {
        let m = self.labels.len();
        Col::from_fn(2 * m, |i| {
            let mat = &self.db.entries[self.labels[i % m]];
            if i < m {
                mat.eps_r - 1.0
            } else {
                mat.sigma / (omega_c * VACUUM_PERMITTIVITY)
            }
        })
    }
}

/// Uniform linear array geometry shared by UEs and BSs.
///
/// Element `i` sits at `position - (i - (n-1)/2) * spacing * axis`, where the
/// axis is the boresight rotated by +90 degrees. With that placement a far
/// source at angle `theta` from boresight (positive toward the axis) induces
/// exactly the phase progression of [`steering_vector`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArrayGeometry {
    pub position: Point2,
    pub elements: usize,
    pub spacing: f64,
    /// Boresight direction, radians from the +x axis.
    pub orientation: f64,
}

impl ArrayGeometry {
    fn validate(&self, what: &str) -> Result<()> {
        if self.elements == 0 {
            return Err(Error::invalid(format!("{what}: array needs at least one element")));
        }
        if !(self.spacing > 0.0) {
            return Err(Error::invalid(format!("{what}: antenna spacing must be positive")));
        }
        Ok(())
    }

    fn boresight(&self) -> Point2 {
        Point2::new(self.orientation.cos(), self.orientation.sin())
    }

    fn axis(&self) -> Point2 {
        Point2::new(-self.orientation.sin(), self.orientation.cos())
    }

    pub fn element_positions(&self) -> Vec<Point2> {
        let axis = self.axis();
        let mid = (self.elements as f64 - 1.0) / 2.0;
        (0..self.elements)
            .map(|i| {
                let off = (i as f64 - mid) * self.spacing;
                Point2::new(self.position.x - off * axis.x, self.position.y - off * axis.y)
            })
            .collect()
    }

    /// Arrival angle of `p` in the array frame, radians from boresight.
    pub fn angle_to(&self, p: Point2) -> f64 {
        let d = p.sub(self.position);
        d.dot(self.axis()).atan2(d.dot(self.boresight()))
    }
}

/// Orientation that points a boresight from `from` toward `to`.
pub fn facing(from: Point2, to: Point2) -> f64 {
    (to.y - from.y).atan2(to.x - from.x)
}

/// A multi-antenna UE transmitting pilots.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UeConfig {
    pub array: ArrayGeometry,
    /// Power budget per subcarrier `P_{k,u}`, W.
    pub power_budget: f64,
    /// Minimum pattern power in the region `P̄_{k,u}`, W.
    pub min_region_power: f64,
}

impl UeConfig {
    pub fn new(array: ArrayGeometry, power_budget: f64, min_region_power: f64) -> Result<Self> {
        array.validate("UE")?;
        if !(power_budget > 0.0) {
            return Err(Error::invalid("UE power budget must be positive"));
        }
        if !(min_region_power >= 0.0) {
            return Err(Error::invalid("UE minimum region power must be non-negative"));
        }
        Ok(Self {
            array,
            power_budget,
            min_region_power,
        })
    }

    pub fn n_t(&self) -> usize {
        self.array.elements
    }
}

/// A receiving base station with a ULA.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BsConfig {
    pub array: ArrayGeometry,
}

impl BsConfig {
    pub fn new(array: ArrayGeometry) -> Result<Self> {
        array.validate("BS")?;
        Ok(Self { array })
    }

    /// A BS whose array faces `target` (the ULA is perpendicular to the line
    /// toward it).
    pub fn facing(position: Point2, n_r: usize, spacing: f64, target: Point2) -> Result<Self> {
        Self::new(ArrayGeometry {
            position,
            elements: n_r,
            spacing,
            orientation: facing(position, target),
        })
    }

    pub fn n_r(&self) -> usize {
        self.array.elements
    }
}

/// OFDM comb centered on `f_c`: `f_k = f_c + (k - (K+1)/2) delta_f` for
/// one-based `k`. Accessors take zero-based indices.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SubcarrierGrid {
    pub f_c: f64,
    pub delta_f: f64,
    pub count: usize,
}

impl SubcarrierGrid {
    pub fn new(f_c: f64, delta_f: f64, count: usize) -> Result<Self> {
        if count == 0 {
            return Err(Error::invalid("need at least one subcarrier"));
        }
        let grid = Self { f_c, delta_f, count };
        if !(f_c > 0.0) || !(delta_f >= 0.0) || grid.frequency(0) <= 0.0 {
            return Err(Error::invalid("subcarrier frequencies must be positive"));
        }
        Ok(grid)
    }

    pub fn frequency(&self, k: usize) -> f64 {
        self.f_c + (k as f64 - (self.count as f64 - 1.0) / 2.0) * self.delta_f
    }

    pub fn omega(&self, k: usize) -> f64 {
        2.0 * PI * self.frequency(k)
    }

    pub fn omega_c(&self) -> f64 {
        2.0 * PI * self.f_c
    }

    pub fn wavenumber(&self, k: usize) -> f64 {
        self.omega(k) / SPEED_OF_LIGHT
    }

    pub fn wavelength(&self, k: usize) -> f64 {
        SPEED_OF_LIGHT / self.frequency(k)
    }

    /// A shorter comb with the same center and spacing.
    pub fn with_count(&self, count: usize) -> Result<Self> {
        Self::new(self.f_c, self.delta_f, count)
    }
}

/// ULA steering vector `a(theta)`, unit norm.
pub fn steering_vector(theta: f64, n_r: usize, wavelength: f64, spacing: f64) -> Col<Complex64> {
    let norm = 1.0 / (n_r as f64).sqrt();
    let step = -2.0 * PI / wavelength * spacing * theta.sin();
    Col::from_fn(n_r, |i| Complex64::from_polar(norm, step * i as f64))
}

/// Interval of arrival angles `[theta_min, theta_max]` subtended by the
/// region's corners in the BS array frame.
pub fn angular_spread(bs: &BsConfig, region: &GridRegion) -> Result<(f64, f64)> {
    if region.contains(bs.array.position) {
        return Err(Error::Geometry("base station lies inside the sensed region".into()));
    }
    let angles = region.corners().map(|c| bs.array.angle_to(c));
    let lo = angles.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = angles.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if hi - lo >= PI {
        return Err(Error::Geometry("region straddles the array endfire; spread is undefined".into()));
    }
    Ok((lo, hi))
}

/// Midpoint-rule approximation of `(1/(b-a)) int_a^b a(t) a(t)^H dt`.
pub fn beamformer_for_spread(
    spread: (f64, f64),
    n_r: usize,
    wavelength: f64,
    spacing: f64,
    samples: usize,
) -> Mat<Complex64> {
    let (lo, hi) = spread;
    let mut p = Mat::<Complex64>::zeros(n_r, n_r);
    if hi <= lo || samples == 0 {
        let a = steering_vector(lo, n_r, wavelength, spacing);
        return &a * a.adjoint();
    }
    let h = (hi - lo) / samples as f64;
    let w = 1.0 / samples as f64;
    for s in 0..samples {
        let theta = lo + (s as f64 + 0.5) * h;
        let a = steering_vector(theta, n_r, wavelength, spacing);
        for c in 0..n_r {
            let ac = a[c].conj() * w;
            for r in 0..n_r {
                p[(r, c)] += a[r] * ac;
            }
        }
    }
    p
}

/// Receiver beamformer `P_{k,l}` with the default `16 N_r` quadrature nodes.
pub fn receiver_beamformer(bs: &BsConfig, region: &GridRegion, wavelength: f64) -> Result<Mat<Complex64>> {
    let n_r = bs.n_r();
    Ok(beamformer_for_spread(
        angular_spread(bs, region)?,
        n_r,
        wavelength,
        bs.array.spacing,
        16 * n_r,
    ))
}

/// Seeded uniform placement of `count` points in the disc of `radius` around
/// `center`, rejecting points inside `region` (and a guard band around it).
pub fn place_ues(count: usize, center: Point2, radius: f64, region: &GridRegion, guard: f64, seed: u64) -> Result<Vec<Point2>> {
    let excl = region.half_extent() + guard;
    if radius <= excl * std::f64::consts::SQRT_2 {
        return Err(Error::Geometry("placement disc does not extend beyond the region".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        // Area-uniform sampling in the disc.
        let r = radius * rng.random::<f64>().sqrt();
        let phi = 2.0 * PI * rng.random::<f64>();
        let p = Point2::new(center.x + r * phi.cos(), center.y + r * phi.sin());
        let c = region.center();
        if (p.x - c.x).abs() <= excl && (p.y - c.y).abs() <= excl {
            continue;
        }
        out.push(p);
    }
    Ok(out)
}

/// Everything the forward model needs to know about the world.
#[derive(Debug, Clone)]
pub struct Scene {
    pub region: GridRegion,
    pub ues: Vec<UeConfig>,
    pub bss: Vec<BsConfig>,
    pub subcarriers: SubcarrierGrid,
}

impl Scene {
    pub fn new(region: GridRegion, ues: Vec<UeConfig>, bss: Vec<BsConfig>, subcarriers: SubcarrierGrid) -> Result<Self> {
        if ues.is_empty() || bss.is_empty() {
            return Err(Error::invalid("scene needs at least one UE and one BS"));
        }
        let n_t = ues[0].n_t();
        if ues.iter().any(|u| u.n_t() != n_t) {
            return Err(Error::invalid("all UEs must have the same antenna count"));
        }
        for (i, ue) in ues.iter().enumerate() {
            if ue.array.element_positions().iter().any(|&p| region.contains(p)) {
                return Err(Error::Geometry(format!("UE {i} has an antenna inside the sensed region")));
            }
        }
        for (l, bs) in bss.iter().enumerate() {
            if bs.array.element_positions().iter().any(|&p| region.contains(p)) {
                return Err(Error::Geometry(format!("BS {l} has an antenna inside the sensed region")));
            }
        }
        Ok(Self {
            region,
            ues,
            bss,
            subcarriers,
        })
    }

    pub fn m(&self) -> usize {
        self.region.len()
    }

    pub fn n_t(&self) -> usize {
        self.ues[0].n_t()
    }

    pub fn k(&self) -> usize {
        self.subcarriers.count
    }
}
