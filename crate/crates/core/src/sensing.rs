//! Linearized sensing systems.
//!
//! For subcarrier `k` and BS `l` the beamformed pilots satisfy
//! `y = D chi` with `D = B^T ∘ C`, where `B = (I - G diag chi)^{-1} H̄1` and
//! `C = P H2` (`∘` is the column-wise Khatri-Rao product). Splitting real and
//! imaginary parts gives `z = E s` over the real property vector `s`.
//!
//! The solvers only need `E^T E`, `E^T z` and `||z||^2`. Those are built
//! without forming `E`: `D^H D = (B^H B) ⊙ (C^H C)` and
//! `D^H y = rowsum((C^H Y) ⊙ conj(B^T))`, with `Y` the `N_r x UI` reshape of `y`.

use crate::em::{discretize_greens, ScatteringSystem, SubcarrierChannels};
use crate::error::{Error, Result};
use crate::pilot::PilotSet;
use faer::{Col, Mat, MatRef};
use num_complex::Complex64;

/// `chi_k[m] = s[m] + j (omega_c / omega_k) s[m + M]`.
pub fn chi_from_s(s: &Col<f64>, omega_k: f64, omega_c: f64) -> Result<Vec<Complex64>> {
    if s.nrows() % 2 != 0 {
        return Err(Error::dims("property vector length must be even"));
    }
    let m = s.nrows() / 2;
    let w = omega_c / omega_k;
    (0..m)
        .map(|i| {
            let (a, b) = (s[i], s[i + m]);
            if !a.is_finite() || !b.is_finite() {
                Err(Error::NonFinite("property vector"))
            } else if a < 0.0 || b < 0.0 {
                Err(Error::invalid(format!("property vector entry {i} is negative")))
            } else {
                Ok(Complex64::new(a, w * b))
            }
        })
        .collect()
}

/// Column-wise Khatri-Rao product: row `j * C.nrows() + r`, column `m` is
/// `B[j, m] C[r, m]`.
pub fn khatri_rao(b: MatRef<'_, Complex64>, c: MatRef<'_, Complex64>) -> Result<Mat<Complex64>> {
    if b.ncols() != c.ncols() {
        return Err(Error::dims("Khatri-Rao factors need equal column counts"));
    }
    let nr = c.nrows();
    Ok(Mat::from_fn(b.nrows() * nr, b.ncols(), |row, m| b[(row / nr, m)] * c[(row % nr, m)]))
}

/// Left Khatri-Rao factor `B = ((I - G diag chi)^{-1} H̄1)^T`, `UI x M`.
pub fn incident_factor(
    chi: &[Complex64],
    h1bar: MatRef<'_, Complex64>,
    g: Option<MatRef<'_, Complex64>>,
) -> Result<Mat<Complex64>> {
    if h1bar.nrows() != chi.len() {
        return Err(Error::dims("H̄1 rows must equal the grid size"));
    }
    let total = if chi.iter().all(|c| c.re == 0.0 && c.im == 0.0) {
        h1bar.to_owned()
    } else {
        let g = g.ok_or_else(|| Error::invalid("non-zero contrast needs the Green's matrix"))?;
        ScatteringSystem::new(g, chi)?.solve(h1bar)
    };
    Ok(total.transpose().to_owned())
}

/// `D_{k,l} = (H̄1^T (I - G diag chi)^{-T}) ∘ (P H2)`.
pub fn sensing_matrix(
    chi: &[Complex64],
    h1bar: MatRef<'_, Complex64>,
    ph2: MatRef<'_, Complex64>,
    g: MatRef<'_, Complex64>,
) -> Result<Mat<Complex64>> {
    khatri_rao(incident_factor(chi, h1bar, Some(g))?.as_ref(), ph2)
}

/// Born sensing matrix `H̄1^T ∘ (P H2)`, the `chi = 0` limit.
pub fn born_init(h1bar: MatRef<'_, Complex64>, ph2: MatRef<'_, Complex64>) -> Result<Mat<Complex64>> {
    khatri_rao(h1bar.transpose(), ph2)
}

/// Real-valued weighted block `E_{k,l}` and data `z_{k,l}`.
#[derive(Debug, Clone, PartialEq)]
pub struct SensingBlock {
    pub e: Mat<f64>,
    pub z: Col<f64>,
}

/// `E = [[Re D, -w Im D], [Im D, w Re D]]`, `z = [Re y; Im y]`, `w = omega_c / omega_k`.
pub fn realify(d: MatRef<'_, Complex64>, omega_k: f64, omega_c: f64, y: &Col<Complex64>) -> Result<SensingBlock> {
    if y.nrows() != d.nrows() {
        return Err(Error::dims("measurement length must equal sensing rows"));
    }
    let (n, m) = (d.nrows(), d.ncols());
    let w = omega_c / omega_k;
    let e = Mat::from_fn(2 * n, 2 * m, |r, c| {
        let v = d[(r % n, c % m)];
        match (r < n, c < m) {
            (true, true) => v.re,
            (true, false) => -w * v.im,
            (false, true) => v.im,
            (false, false) => w * v.re,
        }
    });
    let z = Col::from_fn(2 * n, |r| if r < n { y[r].re } else { y[r - n].im });
    Ok(SensingBlock { e, z })
}

/// Vertically stacked blocks in subcarrier order.
pub fn stack(blocks: &[SensingBlock]) -> Result<SensingBlock> {
    let first = blocks.first().ok_or_else(|| Error::invalid("nothing to stack"))?;
    let cols = first.e.ncols();
    if blocks.iter().any(|b| b.e.ncols() != cols || b.e.nrows() != b.z.nrows()) {
        return Err(Error::dims("stacked blocks must share the column count"));
    }
    let rows: usize = blocks.iter().map(|b| b.e.nrows()).sum();
    let mut e = Mat::<f64>::zeros(rows, cols);
    let mut z = Col::<f64>::zeros(rows);
    let mut at = 0;
    for b in blocks {
        let n = b.e.nrows();
        e.as_mut().submatrix_mut(at, 0, n, cols).copy_from(&b.e);
        z.as_mut().subrows_mut(at, n).copy_from(&b.z);
        at += n;
    }
    Ok(SensingBlock { e, z })
}

/// Normal-equation form of one BS's stacked system: `E^T E`, `E^T z`, `||z||^2`.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalSystem {
    pub gram: Mat<f64>,
    pub rhs: Col<f64>,
    pub data_energy: f64,
}

impl NormalSystem {
    pub fn zeros(two_m: usize) -> Self {
        Self {
            gram: Mat::zeros(two_m, two_m),
            rhs: Col::zeros(two_m),
            data_energy: 0.0,
        }
    }

    pub fn from_dense(block: &SensingBlock) -> Self {
        Self {
            gram: block.e.transpose() * &block.e,
            rhs: block.e.transpose() * &block.z,
            data_energy: block.z.squared_norm_l2(),
        }
    }

    pub fn dim(&self) -> usize {
        self.rhs.nrows()
    }

    /// `0.5 ||z - E s||^2`.
    pub fn data_misfit(&self, s: &Col<f64>) -> f64 {
        let gs = &self.gram * s;
        (0.5 * (s.transpose() * &gs) - self.rhs.transpose() * s + 0.5 * self.data_energy).max(0.0)
    }

    /// Divides `E` and `z` by `factor`.
    pub fn scale(&mut self, factor: f64) {
        let f2 = 1.0 / (factor * factor);
        self.gram = &self.gram * faer::Scale(f2);
        self.rhs = &self.rhs * faer::Scale(f2);
        self.data_energy *= f2;
    }

    /// Adds the realified contribution of one complex `(D^H D, D^H y)` pair.
    pub fn accumulate(&mut self, dhd: MatRef<'_, Complex64>, dhy: &[Complex64], y_energy: f64, w: f64) {
        let m = dhd.nrows();
        for c in 0..m {
            for r in 0..m {
                let v = dhd[(r, c)];
                self.gram[(r, c)] += v.re;
                self.gram[(r, c + m)] -= w * v.im;
                self.gram[(r + m, c)] += w * v.im;
                self.gram[(r + m, c + m)] += w * w * v.re;
            }
        }
        for i in 0..m {
            self.rhs[i] += dhy[i].re;
            self.rhs[i + m] += w * dhy[i].im;
        }
        self.data_energy += y_energy;
    }
}

/// `(D^H D, D^H y)` for `D = B^T ∘ C` without forming `D`.
pub fn khatri_rao_normal(
    b: MatRef<'_, Complex64>,
    c: MatRef<'_, Complex64>,
    y: &Col<Complex64>,
) -> Result<(Mat<Complex64>, Vec<Complex64>)> {
    let (ui, m) = (b.nrows(), b.ncols());
    let nr = c.nrows();
    if c.ncols() != m || y.nrows() != ui * nr {
        return Err(Error::dims("Khatri-Rao normal equations: inconsistent shapes"));
    }
    let bhb = b.adjoint() * b;
    let chc = c.adjoint() * c;
    let dhd = Mat::from_fn(m, m, |i, j| bhb[(i, j)] * chc[(i, j)]);
    let ymat = Mat::from_fn(nr, ui, |r, j| y[j * nr + r]);
    let chy = c.adjoint() * &ymat;
    let dhy = (0..m).map(|i| (0..ui).map(|j| chy[(i, j)] * b[(j, i)].conj()).sum()).collect();
    Ok((dhd, dhy))
}

/// Everything needed to rebuild per-BS systems at a new estimate.
pub struct SensingContext<'a> {
    pub region: &'a crate::scene::GridRegion,
    /// Channels used for reconstruction (possibly perturbed).
    pub channels: &'a [SubcarrierChannels],
    pub pilots: &'a PilotSet,
    /// `y[k][l]`.
    pub y: &'a [Vec<Col<Complex64>>],
    pub omega_c: f64,
}

impl SensingContext<'_> {
    pub fn m(&self) -> usize {
        self.region.len()
    }

    /// Normal systems for BSs `0..estimates.len()`, BS `l` linearized at
    /// `estimates[l]` (`None` = Born).
    pub fn normal_systems(&self, estimates: &[Option<&Col<f64>>]) -> Result<Vec<NormalSystem>> {
        let m = self.m();
        let n_bs = estimates.len();
        let mut out: Vec<NormalSystem> = (0..n_bs).map(|_| NormalSystem::zeros(2 * m)).collect();
        for (k, ch) in self.channels.iter().enumerate() {
            let h1bar = ch.effective_h1(self.pilots, k);
            let needs_g = estimates.iter().any(|e| e.is_some_and(|s| s.iter().any(|v| *v != 0.0)));
            let g = needs_g.then(|| discretize_greens(self.region, ch.wavenumber));
            let w = self.omega_c / ch.omega;
            // BSs sharing one linearization point share the incident factor.
            let mut cache: Vec<(Option<&Col<f64>>, Mat<Complex64>)> = Vec::new();
            for (l, est) in estimates.iter().enumerate() {
                let hit = cache.iter().position(|(e, _)| same_estimate(*e, *est));
                let idx = match hit {
                    Some(i) => i,
                    None => {
                        let chi = match est {
                            Some(s) => chi_from_s(s, ch.omega, self.omega_c)?,
                            None => vec![Complex64::new(0.0, 0.0); m],
                        };
                        let b = incident_factor(&chi, h1bar.as_ref(), g.as_ref().map(|g| g.as_ref()))?;
                        cache.push((*est, b));
                        cache.len() - 1
                    }
                };
                let c = ch.beamformed_h2(l);
                let y = &self.y[k][l];
                let (dhd, dhy) = khatri_rao_normal(cache[idx].1.as_ref(), c.as_ref(), y)?;
                out[l].accumulate(dhd.as_ref(), &dhy, y.squared_norm_l2(), w);
            }
        }
        Ok(out)
    }

    /// Dense stacked `(Ẽ_l, z̃_l)` for one BS; only sensible for small grids.
    pub fn dense_system(&self, l: usize, estimate: Option<&Col<f64>>) -> Result<SensingBlock> {
        let m = self.m();
        let mut blocks = Vec::with_capacity(self.channels.len());
        for (k, ch) in self.channels.iter().enumerate() {
            let h1bar = ch.effective_h1(self.pilots, k);
            let ph2 = ch.beamformed_h2(l);
            let d = match estimate {
                Some(s) => {
                    let chi = chi_from_s(s, ch.omega, self.omega_c)?;
                    let g = discretize_greens(self.region, ch.wavenumber);
                    sensing_matrix(&chi, h1bar.as_ref(), ph2.as_ref(), g.as_ref())?
                }
                None => born_init(h1bar.as_ref(), ph2.as_ref())?,
            };
            debug_assert_eq!(d.ncols(), m);
            blocks.push(realify(d.as_ref(), ch.omega, self.omega_c, &self.y[k][l])?);
        }
        stack(&blocks)
    }
}

fn same_estimate(a: Option<&Col<f64>>, b: Option<&Col<f64>>) -> bool {
    match (a, b) {
        (None, None) => true,
        (Some(x), Some(y)) => std::ptr::eq(x, y) || x == y,
        _ => false,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::em::tests::{toy_pilots, toy_scene};
    use crate::em::{build_channels, synthesize_noiseless};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_c(rng: &mut ChaCha8Rng) -> Complex64 {
        Complex64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5)
    }

    fn rand_mat(r: usize, c: usize, rng: &mut ChaCha8Rng) -> Mat<Complex64> {
        Mat::from_fn(r, c, |_, _| rand_c(rng))
    }

    #[test]
    fn chi_from_s_basics() {
        let s = Col::from_fn(4, |i| [0.5, 0.0, 2.0, 0.25][i]);
        let chi = chi_from_s(&s, 3.0, 3.0).unwrap();
        assert_eq!(chi, vec![Complex64::new(0.5, 2.0), Complex64::new(0.0, 0.25)]);
        let half = chi_from_s(&s, 6.0, 3.0).unwrap();
        assert_eq!(half[0], Complex64::new(0.5, 1.0));
        assert!(chi_from_s(&Col::from_fn(2, |i| [1.0, -1.0][i]), 1.0, 1.0).is_err());
        assert!(chi_from_s(&Col::zeros(6), 1.0, 2.0).unwrap().iter().all(|c| c.norm() == 0.0));
    }

    #[test]
    fn khatri_rao_vectorizes_product() {
        // vec(A diag(b) C) = (C^T ∘ A) b on random 4x3x2 instances.
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..5 {
            let a = rand_mat(4, 3, &mut rng);
            let c = rand_mat(3, 2, &mut rng);
            let b: Vec<Complex64> = (0..3).map(|_| rand_c(&mut rng)).collect();
            let mut left = a.clone();
            for col in 0..3 {
                for r in 0..4 {
                    left[(r, col)] *= b[col];
                }
            }
            let prod = &left * &c;
            let kr = khatri_rao(c.transpose(), a.as_ref()).unwrap();
            let bcol = Mat::from_fn(3, 1, |r, _| b[r]);
            let rhs = &kr * &bcol;
            for idx in 0..8 {
                assert!((prod[(idx % 4, idx / 4)] - rhs[(idx, 0)]).norm() < 1e-15);
            }
        }
    }

    #[test]
    fn realify_identities() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let d = rand_mat(6, 3, &mut rng);
        let y = Col::from_fn(6, |_| rand_c(&mut rng));
        let (wk, wc) = (2.3, 2.0);
        let blk = realify(d.as_ref(), wk, wc, &y).unwrap();
        let s = Col::from_fn(6, |_| rng.random::<f64>());
        let chi = chi_from_s(&s, wk, wc).unwrap();
        let dchi = &d * Mat::from_fn(3, 1, |r, _| chi[r]);
        let es = &blk.e * &s;
        for r in 0..6 {
            assert!((es[r] - dchi[(r, 0)].re).abs() < 1e-12);
            assert!((es[r + 6] - dchi[(r, 0)].im).abs() < 1e-12);
        }
        let w = wc / wk;
        let ratio = blk.e.squared_norm_l2() / d.squared_norm_l2();
        assert!((ratio - (1.0 + w * w)).abs() < 1e-12);
        assert_eq!(blk.z[7], y[1].im);
        // Real D, unit weight, no conductivity: E s = [D s1; 0].
        let dr = Mat::from_fn(2, 2, |r, c| Complex64::new((r + 2 * c) as f64, 0.0));
        let blk = realify(dr.as_ref(), 1.0, 1.0, &Col::zeros(2)).unwrap();
        let s = Col::from_fn(4, |i| [1.0, 2.0, 0.0, 0.0][i]);
        let es = &blk.e * &s;
        assert_eq!([es[0], es[1], es[2], es[3]], [4.0, 7.0, 0.0, 0.0]);
    }

    #[test]
    fn stack_orders_blocks() {
        let a = SensingBlock {
            e: Mat::from_fn(2, 3, |r, c| (r * 3 + c) as f64),
            z: Col::from_fn(2, |r| r as f64),
        };
        let b = SensingBlock {
            e: Mat::from_fn(4, 3, |r, c| -((r * 3 + c) as f64)),
            z: Col::from_fn(4, |r| 10.0 + r as f64),
        };
        assert_eq!(stack(std::slice::from_ref(&a)).unwrap(), a);
        let s = stack(&[a.clone(), b.clone()]).unwrap();
        assert_eq!(s.e.nrows(), 6);
        assert_eq!(s.e.as_ref().subrows(2, 4).to_owned(), b.e);
        assert_eq!(s.z[5], 13.0);
        let bad = SensingBlock { e: Mat::zeros(1, 2), z: Col::zeros(1) };
        assert!(stack(&[a, bad]).is_err());
    }

    #[test]
    fn normal_equations_match_dense_route() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let b = rand_mat(5, 4, &mut rng);
        let c = rand_mat(3, 4, &mut rng);
        let y = Col::from_fn(15, |_| rand_c(&mut rng));
        let (dhd, dhy) = khatri_rao_normal(b.as_ref(), c.as_ref(), &y).unwrap();
        let d = khatri_rao(b.as_ref(), c.as_ref()).unwrap();
        let dense = d.adjoint() * &d;
        assert!((&dense - &dhd).norm_l2() < 1e-13);
        let ymat = Mat::from_fn(15, 1, |r, _| y[r]);
        let dy = d.adjoint() * &ymat;
        for i in 0..4 {
            assert!((dy[(i, 0)] - dhy[i]).norm() < 1e-13);
        }
        let blk = realify(d.as_ref(), 1.7, 1.5, &y).unwrap();
        let direct = NormalSystem::from_dense(&blk);
        let mut fast = NormalSystem::zeros(8);
        fast.accumulate(dhd.as_ref(), &dhy, y.squared_norm_l2(), 1.5 / 1.7);
        assert!((&direct.gram - &fast.gram).norm_l2() < 1e-12);
        assert!((&direct.rhs - &fast.rhs).norm_l2() < 1e-12);
        assert!((direct.data_energy - fast.data_energy).abs() < 1e-12);
    }

    #[test]
    fn model_consistency_on_small_scene() {
        // Noiseless pilots equal D(chi) chi when D is built at the true contrast.
        let scene = toy_scene(4, 2);
        let ch = build_channels(&scene).unwrap();
        let pilots = toy_pilots(&scene, 3, 7);
        let s = Col::from_fn(32, |i| if [5, 6, 9].contains(&(i % 16)) { 0.9 } else { 0.0 });
        let y = synthesize_noiseless(&scene, &ch, &s, &pilots).unwrap();
        let ctx = SensingContext {
            region: &scene.region,
            channels: &ch,
            pilots: &pilots,
            y: &y,
            omega_c: scene.subcarriers.omega_c(),
        };
        for l in 0..2 {
            let sys = ctx.dense_system(l, Some(&s)).unwrap();
            let es = &sys.e * &s;
            assert!((&es - &sys.z).norm_l2() <= 1e-10 * sys.z.norm_l2());
            // The fast normal form agrees with the dense stack.
            let fast = &ctx.normal_systems(&[Some(&s), Some(&s)]).unwrap()[l];
            let dense = NormalSystem::from_dense(&sys);
            assert!((&fast.gram - &dense.gram).norm_l2() <= 1e-10 * dense.gram.norm_l2());
            assert!((&fast.rhs - &dense.rhs).norm_l2() <= 1e-10 * dense.rhs.norm_l2());
        }
        // Born form is independent of s and equals the chi = 0 limit.
        let born = ctx.dense_system(0, None).unwrap();
        let zero = ctx.dense_system(0, Some(&Col::zeros(32))).unwrap();
        assert!((&born.e - &zero.e).norm_l2() < 1e-14 * born.e.norm_l2());
    }

    #[test]
    fn born_gap_grows_with_contrast() {
        let scene = toy_scene(4, 1);
        let ch = build_channels(&scene).unwrap();
        let pilots = toy_pilots(&scene, 2, 3);
        let y = synthesize_noiseless(&scene, &ch, &Col::zeros(32), &pilots).unwrap();
        let ctx = SensingContext {
            region: &scene.region,
            channels: &ch,
            pilots: &pilots,
            y: &y,
            omega_c: scene.subcarriers.omega_c(),
        };
        let born = ctx.dense_system(0, None).unwrap();
        let mut last = 0.0;
        for amp in [0.01, 0.05, 0.2, 1.0] {
            let s = Col::from_fn(32, |i| if i == 6 || i == 22 { amp } else { 0.0 });
            let exact = ctx.dense_system(0, Some(&s)).unwrap();
            let gap = (&(&exact.e * &s) - &(&born.e * &s)).norm_l2() / (&exact.e * &s).norm_l2();
            assert!(gap > last, "amp {amp}: {gap} <= {last}");
            last = gap;
        }
    }
}
