//! 2D TM scattering model: Green's function, method-of-moments discretization,
//! Lippmann-Schwinger solves, radiation operators and measurement synthesis.
//!
//! Time dependence is `e^{+j omega t}`, so outgoing waves use Hankel functions
//! of the second kind.

use crate::error::{Error, Result};
use crate::pilot::PilotSet;
use crate::scene::{receiver_beamformer, GridRegion, Point2, Scene};
use crate::sensing::chi_from_s;
use crate::special::{hankel2_0, hankel2_1};
use faer::linalg::solvers::{PartialPivLu, Solve};
use faer::{Col, Mat, MatRef};
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use std::f64::consts::PI;

const J: Complex64 = Complex64 { re: 0.0, im: 1.0 };

/// Systems with a condition estimate above this are rejected as non-physical.
pub const MAX_CONDITION: f64 = 1e12;

/// Free-space 2D Helmholtz Green's function `-(j/4) H0^(2)(k |r - r'|)`.
pub fn greens_2d(k: f64, r: Point2, rp: Point2) -> Result<Complex64> {
    let d = r.distance(rp);
    if d == 0.0 {
        return Err(Error::Geometry("Green's function is singular at r = r'".into()));
    }
    Ok(greens_at(k * d))
}

fn greens_at(kd: f64) -> Complex64 {
    -0.25 * J * hankel2_0(kd)
}

/// Richmond self term: `k^2 G` integrated over a disc with the cell's area.
pub fn self_term(k: f64, cell_area: f64) -> Complex64 {
    let ka = k * (cell_area / PI).sqrt();
    -0.5 * J * (PI * ka * hankel2_1(ka) - 2.0 * J)
}

/// The MoM matrix `G_k` of `k^2 G(r, r')` over the grid cells.
pub fn discretize_greens(grid: &GridRegion, k: f64) -> Mat<Complex64> {
    let n = grid.n_side();
    let h = grid.cell_side();
    let scale = k * k * grid.cell_area();
    // On a uniform lattice the kernel depends only on the (row, col) offset.
    let table: Vec<Complex64> = (0..n * n)
        .map(|idx| {
            let (dr, dc) = ((idx / n) as f64, (idx % n) as f64);
            if idx == 0 {
                self_term(k, grid.cell_area())
            } else {
                scale * greens_at(k * h * dr.hypot(dc))
            }
        })
        .collect();
    Mat::from_fn(n * n, n * n, |a, b| {
        let dr = (a / n).abs_diff(b / n);
        let dc = (a % n).abs_diff(b % n);
        table[dr * n + dc]
    })
}

/// Factored `I - G diag(chi)` for repeated total-field solves.
pub struct ScatteringSystem {
    lu: PartialPivLu<Complex64>,
    a: Mat<Complex64>,
    condition: f64,
}

impl ScatteringSystem {
    pub fn new(g: MatRef<'_, Complex64>, chi: &[Complex64]) -> Result<Self> {
        let m = chi.len();
        if g.nrows() != m || g.ncols() != m {
            return Err(Error::dims(format!("G is {}x{}, contrast has {m} entries", g.nrows(), g.ncols())));
        }
        if chi.iter().any(|c| !c.re.is_finite() || !c.im.is_finite()) {
            return Err(Error::NonFinite("contrast"));
        }
        let a = Mat::from_fn(m, m, |r, c| {
            let v = -g[(r, c)] * chi[c];
            if r == c {
                v + 1.0
            } else {
                v
            }
        });
        let lu = a.partial_piv_lu();
        let condition = norm1(a.as_ref()) * inverse_norm1_estimate(&lu, m);
        if !condition.is_finite() || condition > MAX_CONDITION {
            return Err(Error::IllConditioned { condition });
        }
        Ok(Self { lu, a, condition })
    }

    pub fn condition_estimate(&self) -> f64 {
        self.condition
    }

    pub fn matrix(&self) -> MatRef<'_, Complex64> {
        self.a.as_ref()
    }

    /// Total fields `(I - G diag chi)^{-1} E_i` for each column of `rhs`.
    pub fn solve(&self, rhs: MatRef<'_, Complex64>) -> Mat<Complex64> {
        self.lu.solve(rhs)
    }

    /// `(I - G diag chi)^{-T} rhs`.
    pub fn solve_transpose(&self, rhs: MatRef<'_, Complex64>) -> Mat<Complex64> {
        self.lu.solve_transpose(rhs)
    }
}

fn norm1(a: MatRef<'_, Complex64>) -> f64 {
    (0..a.ncols())
        .map(|c| (0..a.nrows()).map(|r| a[(r, c)].norm()).sum::<f64>())
        .fold(0.0, f64::max)
}

// Hager-Higham estimate of the 1-norm of A^{-1} from a handful of solves.
fn inverse_norm1_estimate(lu: &PartialPivLu<Complex64>, m: usize) -> f64 {
    let mut x = Mat::<Complex64>::from_fn(m, 1, |_, _| Complex64::new(1.0 / m as f64, 0.0));
    let mut est = 0.0;
    for iter in 0..5 {
        let y = lu.solve(&x);
        let ny: f64 = (0..m).map(|i| y[(i, 0)].norm()).sum();
        if !ny.is_finite() {
            return f64::INFINITY;
        }
        if iter > 0 && ny <= est {
            break;
        }
        est = ny;
        let xi = Mat::<Complex64>::from_fn(m, 1, |i, _| {
            let v = y[(i, 0)];
            let n = v.norm();
            if n == 0.0 {
                Complex64::new(1.0, 0.0)
            } else {
                v / n
            }
        });
        let z = lu.solve_adjoint(&xi);
        let (jmax, zmax) = (0..m)
            .map(|i| (i, z[(i, 0)].norm()))
            .fold((0, -1.0), |acc, v| if v.1 > acc.1 { v } else { acc });
        let ztx: f64 = (0..m).map(|i| (z[(i, 0)].conj() * x[(i, 0)]).re).sum();
        if zmax <= ztx {
            break;
        }
        x = Mat::zeros(m, 1);
        x[(jmax, 0)] = Complex64::new(1.0, 0.0);
    }
    est
}

/// Solves the discrete Lippmann-Schwinger equation for one incident field.
pub fn total_field(g: MatRef<'_, Complex64>, chi: &[Complex64], e_i: &[Complex64]) -> Result<Vec<Complex64>> {
    let sys = ScatteringSystem::new(g, chi)?;
    if e_i.len() != chi.len() {
        return Err(Error::dims("incident field length differs from grid size"));
    }
    let rhs = Mat::from_fn(e_i.len(), 1, |r, _| e_i[r]);
    let e_t = sys.solve(rhs.as_ref());
    Ok((0..e_i.len()).map(|r| e_t[(r, 0)]).collect())
}

/// Equivalent contrast source `J = diag(chi) E_t`.
pub fn contrast_source(chi: &[Complex64], e_t: &[Complex64]) -> Vec<Complex64> {
    chi.iter().zip(e_t).map(|(c, e)| c * e).collect()
}

/// `H1`: UE antenna excitations to incident field on the grid, `M x N_t`.
pub fn radiation_ue(grid: &GridRegion, antennas: &[Point2], k: f64) -> Result<Mat<Complex64>> {
    if antennas.iter().any(|&p| grid.contains(p)) {
        return Err(Error::Geometry("UE antenna inside the sensed region".into()));
    }
    let pts = grid.points();
    Ok(Mat::from_fn(pts.len(), antennas.len(), |m, n| greens_at(k * pts[m].distance(antennas[n]))))
}

/// `H2`: contrast source on the grid to BS antenna fields, `N_r x M`.
///
/// Carries the `k^2 * cell_area` MoM weight so that `H2 diag(chi) E_t` is the
/// scattered field in the same units as the incident field.
pub fn radiation_bs(grid: &GridRegion, antennas: &[Point2], k: f64) -> Result<Mat<Complex64>> {
    if antennas.iter().any(|&p| grid.contains(p)) {
        return Err(Error::Geometry("BS antenna inside the sensed region".into()));
    }
    let pts = grid.points();
    let scale = k * k * grid.cell_area();
    Ok(Mat::from_fn(antennas.len(), pts.len(), |r, m| scale * greens_at(k * antennas[r].distance(pts[m]))))
}

/// `H2 diag(chi) (I - G diag chi)^{-1} H1`.
pub fn forward_channel(
    h2: MatRef<'_, Complex64>,
    chi: &[Complex64],
    g: MatRef<'_, Complex64>,
    h1: MatRef<'_, Complex64>,
) -> Result<Mat<Complex64>> {
    let sys = ScatteringSystem::new(g, chi)?;
    let mut x = sys.solve(h1);
    scale_rows(&mut x, chi);
    Ok(h2 * &x)
}

pub(crate) fn scale_rows(x: &mut Mat<Complex64>, d: &[Complex64]) {
    for c in 0..x.ncols() {
        for r in 0..x.nrows() {
            x[(r, c)] *= d[r];
        }
    }
}

/// Radiation operators and beamformers for one subcarrier.
#[derive(Debug, Clone)]
pub struct SubcarrierChannels {
    pub omega: f64,
    pub wavenumber: f64,
    /// Per UE, `M x N_t`.
    pub h1: Vec<Mat<Complex64>>,
    /// Per BS, `N_r x M`.
    pub h2: Vec<Mat<Complex64>>,
    /// Per BS receiver beamformer `P`, `N_r x N_r`.
    pub beam: Vec<Mat<Complex64>>,
}

impl SubcarrierChannels {
    pub fn build(scene: &Scene, k: usize) -> Result<Self> {
        let wavenumber = scene.subcarriers.wavenumber(k);
        let wavelength = scene.subcarriers.wavelength(k);
        let h1 = scene
            .ues
            .iter()
            .map(|ue| radiation_ue(&scene.region, &ue.array.element_positions(), wavenumber))
            .collect::<Result<Vec<_>>>()?;
        let h2 = scene
            .bss
            .iter()
            .map(|bs| radiation_bs(&scene.region, &bs.array.element_positions(), wavenumber))
            .collect::<Result<Vec<_>>>()?;
        let beam = scene
            .bss
            .iter()
            .map(|bs| receiver_beamformer(bs, &scene.region, wavelength))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            omega: scene.subcarriers.omega(k),
            wavenumber,
            h1,
            h2,
            beam,
        })
    }

    /// Beamformed receive operator `P_l H2_l`.
    pub fn beamformed_h2(&self, l: usize) -> Mat<Complex64> {
        &self.beam[l] * &self.h2[l]
    }

    /// `H̄1 = [H1_1 W_1, ..., H1_U W_U]`, `M x UI`.
    pub fn effective_h1(&self, pilots: &PilotSet, k: usize) -> Mat<Complex64> {
        let i = pilots.symbols();
        let m = self.h1[0].nrows();
        let mut out = Mat::<Complex64>::zeros(m, self.h1.len() * i);
        for (u, h1) in self.h1.iter().enumerate() {
            let block = h1 * pilots.get(u, k).w();
            out.as_mut().submatrix_mut(0, u * i, m, i).copy_from(&block);
        }
        out
    }
}

/// All subcarriers' channels for a scene.
pub fn build_channels(scene: &Scene) -> Result<Vec<SubcarrierChannels>> {
    (0..scene.k()).map(|k| SubcarrierChannels::build(scene, k)).collect()
}

/// Received pilots `y_{k,l}` indexed `[k][l]`, each of length `U I N_r`.
///
/// Element `(u I + i) N_r + r` is antenna `r` of symbol `i` from UE `u`
/// (column-major `vec` of `[Y_1, ..., Y_U]`).
#[derive(Debug, Clone, PartialEq)]
pub struct Measurements {
    pub y: Vec<Vec<Col<Complex64>>>,
    /// Per-antenna variance of the noise before beamforming.
    pub noise_variance: f64,
    pub signal_power: f64,
}

impl Measurements {
    pub fn n_bs(&self) -> usize {
        self.y.first().map_or(0, Vec::len)
    }
}

/// Noiseless beamformed pilots for every subcarrier and BS.
pub fn synthesize_noiseless(
    scene: &Scene,
    channels: &[SubcarrierChannels],
    s_true: &Col<f64>,
    pilots: &PilotSet,
) -> Result<Vec<Vec<Col<Complex64>>>> {
    let m = scene.m();
    if s_true.nrows() != 2 * m {
        return Err(Error::dims(format!("property vector has {} entries, expected {}", s_true.nrows(), 2 * m)));
    }
    if channels.len() != scene.k() {
        return Err(Error::dims("one channel set per subcarrier required"));
    }
    pilots.check_against(scene)?;
    let omega_c = scene.subcarriers.omega_c();
    let mut out = Vec::with_capacity(channels.len());
    for (k, ch) in channels.iter().enumerate() {
        let chi = chi_from_s(s_true, ch.omega, omega_c)?;
        let h1bar = ch.effective_h1(pilots, k);
        let mut j_src = if chi.iter().all(|c| *c == Complex64::new(0.0, 0.0)) {
            Mat::zeros(m, h1bar.ncols())
        } else {
            let g = discretize_greens(&scene.region, ch.wavenumber);
            ScatteringSystem::new(g.as_ref(), &chi)?.solve(h1bar.as_ref())
        };
        scale_rows(&mut j_src, &chi);
        let per_bs = (0..scene.bss.len())
            .map(|l| {
                let y = ch.beamformed_h2(l) * &j_src;
                Col::from_fn(y.nrows() * y.ncols(), |idx| y[(idx % y.nrows(), idx / y.nrows())])
            })
            .collect();
        out.push(per_bs);
    }
    Ok(out)
}

/// Adds beamformed circular Gaussian noise at the requested overall SNR.
///
/// Noise `n̂` is white per antenna and symbol; what is added is `P n̂`. The
/// variance is set so the expected total noise power across all `(k, l)` is
/// the total signal power divided by `10^(snr_db/10)`. `snr_db = +inf` gives
/// noiseless output. Each `(k, l)` draws from its own ChaCha stream.
pub fn add_noise(
    noiseless: &[Vec<Col<Complex64>>],
    channels: &[SubcarrierChannels],
    snr_db: f64,
    seed: u64,
) -> Result<Measurements> {
    if snr_db.is_nan() {
        return Err(Error::invalid("SNR must not be NaN"));
    }
    let signal_power: f64 = noiseless.iter().flatten().map(|y| y.squared_norm_l2()).sum();
    let n_bs = noiseless.first().map_or(0, Vec::len);
    let mut y = noiseless.to_vec();
    if snr_db == f64::INFINITY {
        return Ok(Measurements {
            y,
            noise_variance: 0.0,
            signal_power,
        });
    }
    let mut gain = 0.0;
    for (k, per_bs) in noiseless.iter().enumerate() {
        for (l, yl) in per_bs.iter().enumerate() {
            let n_r = channels[k].beam[l].nrows();
            gain += (yl.nrows() / n_r) as f64 * channels[k].beam[l].squared_norm_l2();
        }
    }
    let snr = 10f64.powf(snr_db / 10.0);
    let noise_variance = if gain > 0.0 { signal_power / (snr * gain) } else { 0.0 };
    let amp = (noise_variance / 2.0).sqrt();
    for (k, per_bs) in y.iter_mut().enumerate() {
        for (l, yl) in per_bs.iter_mut().enumerate() {
            let p = &channels[k].beam[l];
            let n_r = p.nrows();
            let symbols = yl.nrows() / n_r;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream((k * n_bs + l) as u64);
            let raw = Mat::<Complex64>::from_fn(n_r, symbols, |_, _| {
                let re: f64 = StandardNormal.sample(&mut rng);
                let im: f64 = StandardNormal.sample(&mut rng);
                Complex64::new(amp * re, amp * im)
            });
            let colored = p * &raw;
            for idx in 0..yl.nrows() {
                yl[idx] += colored[(idx % n_r, idx / n_r)];
            }
        }
    }
    Ok(Measurements {
        y,
        noise_variance,
        signal_power,
    })
}

/// Full synthesis: noiseless forward model plus calibrated noise.
pub fn synthesize_measurements(
    scene: &Scene,
    channels: &[SubcarrierChannels],
    s_true: &Col<f64>,
    pilots: &PilotSet,
    snr_db: f64,
    seed: u64,
) -> Result<Measurements> {
    let clean = synthesize_noiseless(scene, channels, s_true, pilots)?;
    add_noise(&clean, channels, snr_db, seed)
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::pilot::{PilotMatrix, PilotSet};
    use crate::scene::{ArrayGeometry, BsConfig, SubcarrierGrid, UeConfig};
    use crate::SPEED_OF_LIGHT;
    use rand::Rng;

    fn rand_c(rng: &mut ChaCha8Rng) -> Complex64 {
        Complex64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5)
    }

    fn small_grid(n: usize, half: f64) -> GridRegion {
        GridRegion::new(Point2::new(0.0, 0.0), half, n).unwrap()
    }

    #[test]
    fn greens_value_at_unit_argument() {
        let g = greens_2d(2.0, Point2::new(0.0, 0.0), Point2::new(0.5, 0.0)).unwrap();
        // H0^(2)(1) = J0(1) - j Y0(1)
        let h = Complex64::new(0.765_197_686_557_966_6, -0.088_256_964_215_676_96);
        assert!((g - (-0.25 * J * h)).norm() < 1e-14);
        assert!(greens_2d(2.0, Point2::new(1.0, 1.0), Point2::new(1.0, 1.0)).is_err());
    }

    #[test]
    fn greens_is_symmetric_and_decays() {
        let (a, b) = (Point2::new(0.3, -1.0), Point2::new(2.0, 4.0));
        assert_eq!(greens_2d(5.0, a, b).unwrap(), greens_2d(5.0, b, a).unwrap());
        let near = greens_2d(1.0, Point2::new(0.0, 0.0), Point2::new(100.0, 0.0)).unwrap().norm();
        let far = greens_2d(1.0, Point2::new(0.0, 0.0), Point2::new(400.0, 0.0)).unwrap().norm();
        assert!((near / far - 2.0).abs() < 1e-3);
    }

    #[test]
    fn self_term_matches_disc_integral() {
        // Polar midpoint quadrature of k^2 G over the equivalent disc; the log
        // singularity is integrable in rho d rho.
        for &(k, area) in &[(10.0, 1e-3), (200.0, 4e-4), (586.0, 0.0039)] {
            let a = (area / PI).sqrt();
            let n = 200_000;
            let h = a / n as f64;
            let mut acc = Complex64::new(0.0, 0.0);
            for i in 0..n {
                let rho = (i as f64 + 0.5) * h;
                acc += greens_at(k * rho) * rho;
            }
            let numeric = k * k * 2.0 * PI * h * acc;
            let closed = self_term(k, area);
            assert!((numeric - closed).norm() < 1e-6 * closed.norm(), "k={k}: {numeric} vs {closed}");
        }
    }

    #[test]
    fn greens_matrix_symmetric_and_small_k() {
        let grid = small_grid(5, 0.1);
        let g = discretize_greens(&grid, 40.0);
        for a in 0..25 {
            for b in 0..25 {
                assert_eq!(g[(a, b)], g[(b, a)]);
            }
        }
        let pts = grid.points();
        let expect = 40.0 * 40.0 * grid.cell_area() * greens_2d(40.0, pts[3], pts[17]).unwrap();
        assert!((g[(3, 17)] - expect).norm() < 1e-14 * expect.norm());
        let tiny = discretize_greens(&grid, 1e-6);
        assert!(tiny.norm_l2() < 1e-9);
    }

    #[test]
    fn total_field_trivial_cases() {
        let grid = small_grid(4, 0.05);
        let g = discretize_greens(&grid, 60.0);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let e_i: Vec<Complex64> = (0..16).map(|_| rand_c(&mut rng)).collect();
        let zero = vec![Complex64::new(0.0, 0.0); 16];
        assert_eq!(total_field(g.as_ref(), &zero, &e_i).unwrap(), e_i);
        let chi: Vec<Complex64> = (0..16).map(|_| rand_c(&mut rng) * 0.5).collect();
        let e_t = total_field(g.as_ref(), &chi, &e_i).unwrap();
        let scaled: Vec<Complex64> = e_i.iter().map(|v| v * Complex64::new(2.0, -1.0)).collect();
        let e_t2 = total_field(g.as_ref(), &chi, &scaled).unwrap();
        for (a, b) in e_t.iter().zip(&e_t2) {
            assert!((a * Complex64::new(2.0, -1.0) - b).norm() < 1e-12);
        }
        // Residual of the solved system.
        let sys = ScatteringSystem::new(g.as_ref(), &chi).unwrap();
        let et = Mat::from_fn(16, 1, |r, _| e_t[r]);
        let res = sys.matrix() * &et;
        let err: f64 = (0..16).map(|r| (res[(r, 0)] - e_i[r]).norm_sqr()).sum::<f64>().sqrt();
        let ein: f64 = e_i.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt();
        assert!(err <= 1e-10 * ein);
    }

    #[test]
    fn singular_system_is_rejected() {
        // Contrast only at pixel 0 with chi = 1 / G00 zeroes the first row.
        let grid = small_grid(2, 0.01);
        let g = discretize_greens(&grid, 100.0);
        let mut chi = [Complex64::new(0.0, 0.0); 4];
        chi[0] = Complex64::new(1.0, 0.0) / g[(0, 0)];
        assert!(matches!(ScatteringSystem::new(g.as_ref(), &chi), Err(Error::IllConditioned { .. })));
    }

    #[test]
    fn contrast_source_identity() {
        // J = diag(chi) E_t equals X E_i with X = diag(chi) (I - G diag chi)^{-1}.
        let grid = small_grid(3, 0.02);
        let g = discretize_greens(&grid, 150.0);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let chi: Vec<Complex64> = (0..9).map(|_| rand_c(&mut rng)).collect();
        let e_i: Vec<Complex64> = (0..9).map(|_| rand_c(&mut rng)).collect();
        let j = contrast_source(&chi, &total_field(g.as_ref(), &chi, &e_i).unwrap());
        let sys = ScatteringSystem::new(g.as_ref(), &chi).unwrap();
        let mut inv = sys.solve(Mat::<Complex64>::identity(9, 9).as_ref());
        scale_rows(&mut inv, &chi);
        for r in 0..9 {
            let xe: Complex64 = (0..9).map(|c| inv[(r, c)] * e_i[c]).sum();
            assert!((xe - j[r]).norm() < 1e-12);
        }
        let mut single = vec![Complex64::new(0.0, 0.0); 9];
        single[4] = Complex64::new(0.3, 0.1);
        let js = contrast_source(&single, &e_i);
        assert!(js.iter().enumerate().all(|(m, v)| (m == 4) != (*v == Complex64::new(0.0, 0.0))));
    }

    #[test]
    fn radiation_ue_far_field_decay() {
        let grid = small_grid(4, 0.5);
        let k = 2.0 * PI / 0.1;
        let near = radiation_ue(&grid, &[Point2::new(20.0, 3.0)], k).unwrap();
        let far = radiation_ue(&grid, &[Point2::new(40.0, 6.0)], k).unwrap();
        let ratio = near.norm_l2() / far.norm_l2();
        assert!((ratio - 2f64.sqrt()).abs() < 0.01, "{ratio}");
        assert!(radiation_ue(&grid, &[Point2::new(0.1, 0.1)], k).is_err());
    }

    #[test]
    fn radiation_bs_reciprocity_and_flatness() {
        let grid = GridRegion::new(Point2::new(0.0, 0.0), 1.0, 16).unwrap();
        let k = 2.0 * PI * 28e9 / SPEED_OF_LIGHT;
        let ant = [Point2::new(100.0, 0.0), Point2::new(100.0, 0.0054)];
        let h2 = radiation_bs(&grid, &ant, k).unwrap();
        let h1 = radiation_ue(&grid, &ant, k).unwrap();
        let w = k * k * grid.cell_area();
        assert!((h2[(1, 37)] - w * h1[(37, 1)]).norm() < 1e-15 * h2[(1, 37)].norm());
        let norms: Vec<f64> = (0..grid.len())
            .map(|m| (0..2).map(|r| h2[(r, m)].norm_sqr()).sum::<f64>().sqrt())
            .collect();
        let lo = norms.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = norms.iter().copied().fold(0.0, f64::max);
        assert!((hi - lo) / hi <= 0.03);
    }

    #[test]
    fn forward_channel_matches_columnwise_path() {
        let grid = small_grid(4, 0.03);
        let k = 120.0;
        let g = discretize_greens(&grid, k);
        let h1 = radiation_ue(&grid, &[Point2::new(1.0, 0.2), Point2::new(1.0, 0.25)], k).unwrap();
        let h2 = radiation_bs(&grid, &[Point2::new(-2.0, 0.0), Point2::new(-2.0, 0.01), Point2::new(-2.0, 0.02)], k).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let chi: Vec<Complex64> = (0..16).map(|_| rand_c(&mut rng) * 0.8).collect();
        let x = forward_channel(h2.as_ref(), &chi, g.as_ref(), h1.as_ref()).unwrap();
        for n in 0..2 {
            let e_i: Vec<Complex64> = (0..16).map(|m| h1[(m, n)]).collect();
            let j = contrast_source(&chi, &total_field(g.as_ref(), &chi, &e_i).unwrap());
            for r in 0..3 {
                let y: Complex64 = (0..16).map(|m| h2[(r, m)] * j[m]).sum();
                assert!((y - x[(r, n)]).norm() < 1e-12 * y.norm().max(1e-300));
            }
        }
        let zero = vec![Complex64::new(0.0, 0.0); 16];
        assert_eq!(forward_channel(h2.as_ref(), &zero, g.as_ref(), h1.as_ref()).unwrap().norm_l2(), 0.0);
        // Born limit.
        let small: Vec<Complex64> = chi.iter().map(|c| c * 1e-6).collect();
        let xs = forward_channel(h2.as_ref(), &small, g.as_ref(), h1.as_ref()).unwrap();
        let mut h1s = h1.clone();
        scale_rows(&mut h1s, &small);
        let born = &h2 * &h1s;
        assert!((&xs - &born).norm_l2() < 1e-5 * born.norm_l2());
    }

    pub(crate) fn toy_scene(n_side: usize, k: usize) -> Scene {
        let f_c = 3e9;
        let lambda = SPEED_OF_LIGHT / f_c;
        let region = GridRegion::new(Point2::new(0.0, 0.0), 0.1, n_side).unwrap();
        let ue = |x: f64, y: f64| {
            UeConfig::new(
                ArrayGeometry {
                    position: Point2::new(x, y),
                    elements: 2,
                    spacing: lambda / 2.0,
                    orientation: crate::scene::facing(Point2::new(x, y), Point2::new(0.0, 0.0)),
                },
                1.0,
                0.0,
            )
            .unwrap()
        };
        let bss = vec![
            BsConfig::facing(Point2::new(5.0, 0.0), 4, lambda / 2.0, Point2::new(0.0, 0.0)).unwrap(),
            BsConfig::facing(Point2::new(0.0, 5.0), 4, lambda / 2.0, Point2::new(0.0, 0.0)).unwrap(),
        ];
        Scene::new(
            region,
            vec![ue(-1.0, 0.5), ue(0.4, -1.2)],
            bss,
            SubcarrierGrid::new(f_c, 20e6, k).unwrap(),
        )
        .unwrap()
    }

    pub(crate) fn toy_pilots(scene: &Scene, i: usize, seed: u64) -> PilotSet {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut blocks = Vec::new();
        for _u in 0..scene.ues.len() {
            for _k in 0..scene.k() {
                let mut w = Mat::from_fn(scene.n_t(), i, |_, _| rand_c(&mut rng));
                let n = w.norm_l2();
                w = w * faer::Scale(Complex64::new(0.9 / n, 0.0));
                blocks.push(PilotMatrix::new(w, 0.0));
            }
        }
        PilotSet::new(scene.ues.len(), scene.k(), blocks).unwrap()
    }

    #[test]
    fn synthesis_trivia_and_determinism() {
        let scene = toy_scene(4, 2);
        let ch = build_channels(&scene).unwrap();
        let pilots = toy_pilots(&scene, 3, 1);
        let zero = Col::<f64>::zeros(32);
        let y0 = synthesize_measurements(&scene, &ch, &zero, &pilots, f64::INFINITY, 5).unwrap();
        assert!(y0.y.iter().flatten().all(|y| y.norm_l2() == 0.0));
        let s = Col::from_fn(32, |i| if i % 16 == 5 { 0.7 } else { 0.0 });
        let a = synthesize_measurements(&scene, &ch, &s, &pilots, 10.0, 5).unwrap();
        let b = synthesize_measurements(&scene, &ch, &s, &pilots, 10.0, 5).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.y[1][0].nrows(), 2 * 3 * 4);
    }

    #[test]
    fn empirical_snr_matches_request() {
        // M = 256 grid; many symbols keep the sampling spread of the noise
        // power well under the tolerance.
        let scene = toy_scene(16, 2);
        let ch = build_channels(&scene).unwrap();
        let pilots = toy_pilots(&scene, 3000, 2);
        let s = Col::from_fn(512, |i| if (i % 256) / 16 == 7 && i % 16 > 4 && i % 16 < 10 { 0.5 } else { 0.0 });
        let clean = synthesize_noiseless(&scene, &ch, &s, &pilots).unwrap();
        let noisy = add_noise(&clean, &ch, 10.0, 77).unwrap();
        let mut noise = 0.0;
        for (a, b) in noisy.y.iter().flatten().zip(clean.iter().flatten()) {
            noise += (a - b).squared_norm_l2();
        }
        let snr = 10.0 * (noisy.signal_power / noise).log10();
        assert!((snr - 10.0).abs() < 0.1, "{snr}");
    }
}
