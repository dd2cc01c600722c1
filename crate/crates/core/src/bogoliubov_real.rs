//! Real-space Bogoliubov-de Gennes dynamics for arbitrary filling and boundaries.
//!
//! With `X = (a_1..a_NA, b_1^dag..b_NB^dag)` the linearized Heisenberg
//! equations read `i dX/dt = G X` where `G` is the transpose of the BdG
//! matrix `M = [[V_AA, -V_AB], [V_BA, -V_BB]]`. Eigenvectors `(u_n, v_n)` of
//! `M` define normal modes `beta_n = u_n . a + v_n . b^dag` evolving as
//! `exp(-i xi_n t)`, so `X(t) = (P^T)^{-1} exp(-i D t) P^T X(0)`.

use ndarray::{s, Array1, Array2, Axis};
use ndarray_linalg::{Eig, Inverse};
use rayon::prelude::*;
use serde::Serialize;

use crate::bogoliubov_k::resolve_bias;
use crate::couplings::{coupling_matrices, onsite_shifts, CouplingMatrices, ModelParams, OnsiteShifts};
use crate::error::{Error, Result};
use crate::lattice::{build_bilayer, k_grid, sample_filling_with, BilayerGeometry, FillingMode, FillingRealization, LatticeSpec};
use crate::observables::{mean_stderr, momentum_distribution as fourier_distribution, phase_table, first_crossing, CorrelationAccumulator, ObservableSeries};
use crate::lattice::Layer;
use crate::C64;

#[derive(Debug, Clone)]
pub struct BdGSystem {
    pub matrix: Array2<f64>,
    pub n_a: usize,
    pub n_b: usize,
}

pub fn assemble_bdg(c: &CouplingMatrices) -> Result<BdGSystem> {
    let (na, nb) = (c.n_a(), c.n_b());
    if na == 0 {
        return Err(Error::EmptyLayer("A"));
    }
    if nb == 0 {
        return Err(Error::EmptyLayer("B"));
    }
    let mut m = Array2::zeros((na + nb, na + nb));
    m.slice_mut(s![..na, ..na]).assign(&c.intra_a);
    m.slice_mut(s![..na, na..]).assign(&(-&c.inter));
    m.slice_mut(s![na.., ..na]).assign(&c.inter.t());
    m.slice_mut(s![na.., na..]).assign(&(-&c.intra_b));
    Ok(BdGSystem { matrix: m, n_a: na, n_b: nb })
}

impl BdGSystem {
    /// Adds site-local excitation energies: `+shift` on A rows, `-shift` on B rows.
    pub fn with_onsite(mut self, shifts: &OnsiteShifts) -> Self {
        for (i, &v) in shifts.a.iter().enumerate() {
            self.matrix[[i, i]] += v;
        }
        for (j, &v) in shifts.b.iter().enumerate() {
            self.matrix[[self.n_a + j, self.n_a + j]] -= v;
        }
        self
    }

    pub fn dim(&self) -> usize {
        self.n_a + self.n_b
    }

    pub fn diagonalize(&self) -> Result<DiagonalizedBdG> {
        let (values, vectors) = self.matrix.eig()?;
        let inverse = vectors.inv()?;
        let n = self.dim();
        let mc = self.matrix.mapv(|x| C64::new(x, 0.0));
        let mut scaled = vectors.clone();
        for (mut col, &l) in scaled.axis_iter_mut(Axis(1)).zip(values.iter()) {
            col.mapv_inplace(|z| z * l);
        }
        let frob = |a: &Array2<C64>| a.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        let m_norm = self.matrix.iter().map(|x| x * x).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
        let residual = frob(&(mc.dot(&vectors) - &scaled)) / (m_norm * frob(&vectors));
        let id_err = {
            let mut e = inverse.dot(&vectors);
            for i in 0..n {
                e[[i, i]] -= C64::new(1.0, 0.0);
            }
            frob(&e) / (n as f64).sqrt()
        };
        let condition = frob(&vectors) * frob(&inverse) / n as f64;
        if !(residual < 1e-8 && id_err < 1e-6 && condition < 1e10) {
            return Err(Error::Defective { condition, residual: residual.max(id_err) });
        }
        Ok(DiagonalizedBdG {
            eigenvalues: values,
            vectors,
            inverse,
            n_a: self.n_a,
            n_b: self.n_b,
            condition,
            residual,
            norm: m_norm,
        })
    }
}

#[derive(Debug, Clone)]
pub struct DiagonalizedBdG {
    pub eigenvalues: Array1<C64>,
    /// Right eigenvectors of `M` as columns.
    pub vectors: Array2<C64>,
    pub inverse: Array2<C64>,
    pub n_a: usize,
    pub n_b: usize,
    /// `|P|_F |P^-1|_F / n`.
    pub condition: f64,
    pub residual: f64,
    /// Frobenius norm of `M`.
    pub norm: f64,
}

impl DiagonalizedBdG {
    /// Largest `min(|Re xi|, |Im xi|) / |M|`; zero when every eigenvalue is
    /// purely real or purely imaginary.
    pub fn purity_violation(&self) -> f64 {
        self.eigenvalues.iter().map(|z| z.re.abs().min(z.im.abs())).fold(0.0, f64::max) / self.norm
    }

    /// Largest growth rate `max Im xi`.
    pub fn growth_rate(&self) -> f64 {
        self.eigenvalues.iter().map(|z| z.im).fold(0.0, f64::max)
    }

    /// Rows `rows` and columns `cols` of the propagator `U(t) = Q^T exp(-i D t) P^T`.
    fn propagator_block(&self, rows: std::ops::Range<usize>, cols: std::ops::Range<usize>, t: f64) -> Array2<C64> {
        let phase: Vec<C64> = self.eigenvalues.iter().map(|&l| (C64::new(0.0, -t) * l).exp()).collect();
        let left = self.inverse.slice(s![.., rows]).t().to_owned();
        let mut right = self.vectors.slice(s![cols, ..]).t().to_owned();
        for (mut row, p) in right.axis_iter_mut(Axis(0)).zip(&phase) {
            row.mapv_inplace(|z| z * p);
        }
        left.dot(&right)
    }

    pub fn propagator(&self, t: f64) -> Array2<C64> {
        let n = self.n_a + self.n_b;
        self.propagator_block(0..n, 0..n, t)
    }
}

/// Excitation correlation matrices `<a_i^dag a_j>` and `<b_i^dag b_j>`
/// evolved from the excitation vacuum.
#[derive(Debug, Clone)]
pub struct Occupations {
    pub a: Array2<C64>,
    pub b: Array2<C64>,
}

impl Occupations {
    pub fn pair_number(&self) -> f64 {
        self.b.diag().iter().map(|z| z.re).sum()
    }
}

pub fn evolve_occupations(sys: &DiagonalizedBdG, t: f64) -> Occupations {
    let (na, nb) = (sys.n_a, sys.n_b);
    let w = sys.propagator_block(0..na, na..na + nb, t);
    let x = sys.propagator_block(na..na + nb, 0..na, t);
    let a = w.mapv(|z| z.conj()).dot(&w.t());
    let b = x.dot(&x.t().mapv(|z| z.conj()));
    Occupations { a, b }
}

/// `N_k = (1/N_occ) sum_ij exp(i k (r_i - r_j)) occ_ij` on the full zone grid.
pub fn momentum_distribution(occ: &Array2<C64>, sites: &[usize], geom: &BilayerGeometry) -> Vec<f64> {
    let grid = k_grid(&geom.spec);
    let ph = phase_table(geom, &grid, sites);
    fourier_distribution(occ.view(), &ph, sites.len() as f64)
}

fn prepare(geom: &BilayerGeometry, fill: &FillingRealization, params: &ModelParams) -> Result<(CouplingMatrices, DiagonalizedBdG)> {
    let c = coupling_matrices(geom, fill, params)?;
    let h = resolve_bias(&geom.spec, params)?;
    let sys = assemble_bdg(&c)?.with_onsite(&onsite_shifts(&c, params.eta, h));
    let d = sys.diagonalize()?;
    Ok((c, d))
}

/// Single-realization time series including `C^{+-}(r)` maps for both layers.
pub fn bdg_series(
    geom: &BilayerGeometry,
    fill: &FillingRealization,
    params: &ModelParams,
    times: &[f64],
) -> Result<ObservableSeries> {
    let (c, d) = prepare(geom, fill, params)?;
    let grid = k_grid(&geom.spec);
    let ph_a = phase_table(geom, &grid, &c.sites_a);
    let ph_b = phase_table(geom, &grid, &c.sites_b);
    let mut s = ObservableSeries::new(grid, 0.5 * (c.n_a() + c.n_b()) as f64, times.to_vec());
    for (n, &t) in times.iter().enumerate() {
        let occ = evolve_occupations(&d, t);
        s.nk_a[n] = fourier_distribution(occ.a.view(), &ph_a, c.n_a() as f64);
        s.nk_b[n] = fourier_distribution(occ.b.view(), &ph_b, c.n_b() as f64);
        s.n_pair[n] = occ.pair_number();
        // <s+_i s-_j> is <a_j^dag a_i> on layer A and <b_i^dag b_j> on layer B (i != j)
        let mut acc_a = CorrelationAccumulator::new(geom);
        acc_a.add(occ.a.t(), &c.sites_a, geom, 1.0);
        let mut acc_b = CorrelationAccumulator::new(geom);
        acc_b.add(occ.b.view(), &c.sites_b, geom, 1.0);
        s.correlations.push(acc_a.finish(t, Layer::A));
        s.correlations.push(acc_b.finish(t, Layer::B));
    }
    s.locate_t10();
    Ok(s)
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct DisorderOptions {
    pub mode: FillingMode,
}

impl Default for DisorderOptions {
    fn default() -> Self {
        DisorderOptions { mode: FillingMode::Bernoulli }
    }
}

struct RealizationSample {
    nk_a: Vec<Vec<f64>>,
    nk_b: Vec<Vec<f64>>,
    nk: Vec<Vec<f64>>,
    n_pair: Vec<f64>,
    n_occ: f64,
}

/// Disorder-averaged result: per-layer means in `series`, plus the
/// layer-averaged distribution with its standard error over realizations.
#[derive(Debug, Clone, Serialize)]
pub struct DisorderAverage {
    pub series: ObservableSeries,
    pub nk_mean: Vec<Vec<f64>>,
    pub nk_stderr: Vec<Vec<f64>>,
    pub n_real: usize,
}

/// Averages the momentum distribution over `n_real` filling realizations.
pub fn disorder_average(
    spec: &LatticeSpec,
    params: &ModelParams,
    f: f64,
    times: &[f64],
    n_real: usize,
    seed: u64,
) -> Result<DisorderAverage> {
    disorder_average_with(spec, params, f, times, n_real, seed, DisorderOptions::default())
}

pub fn disorder_average_with(
    spec: &LatticeSpec,
    params: &ModelParams,
    f: f64,
    times: &[f64],
    n_real: usize,
    seed: u64,
    opts: DisorderOptions,
) -> Result<DisorderAverage> {
    if n_real == 0 {
        return Err(Error::InvalidParameter("n_real must be at least 1".into()));
    }
    let geom = build_bilayer(*spec)?;
    let grid = k_grid(spec);
    let samples: Vec<RealizationSample> = (0..n_real as u64)
        .into_par_iter()
        .map(|r| -> Result<RealizationSample> {
            let fill = sample_filling_with(&geom, f, seed, r, opts.mode)?;
            let (c, d) = prepare(&geom, &fill, params)?;
            let ph_a = phase_table(&geom, &grid, &c.sites_a);
            let ph_b = phase_table(&geom, &grid, &c.sites_b);
            let mut out = RealizationSample {
                nk_a: Vec::new(),
                nk_b: Vec::new(),
                nk: Vec::new(),
                n_pair: Vec::new(),
                n_occ: 0.5 * (c.n_a() + c.n_b()) as f64,
            };
            for &t in times {
                let occ = evolve_occupations(&d, t);
                let a = fourier_distribution(occ.a.view(), &ph_a, c.n_a() as f64);
                let b = fourier_distribution(occ.b.view(), &ph_b, c.n_b() as f64);
                out.nk.push(a.iter().zip(&b).map(|(x, y)| 0.5 * (x + y)).collect());
                out.nk_a.push(a);
                out.nk_b.push(b);
                out.n_pair.push(occ.pair_number());
            }
            Ok(out)
        })
        .collect::<Result<_>>()?;

    let n = n_real as f64;
    let n_occ = samples.iter().map(|s| s.n_occ).sum::<f64>() / n;
    let mut series = ObservableSeries::new(grid.clone(), n_occ, times.to_vec());
    let nk_len = grid.len();
    let mut nk_mean = vec![vec![0.0; nk_len]; times.len()];
    let mut nk_stderr = vec![vec![0.0; nk_len]; times.len()];
    for ti in 0..times.len() {
        let stat = |get: &dyn Fn(&RealizationSample) -> f64| {
            let (s, s2) = samples.iter().fold((0.0, 0.0), |(s, s2), r| {
                let v = get(r);
                (s + v, s2 + v * v)
            });
            mean_stderr(s, s2, n)
        };
        for k in 0..nk_len {
            (series.nk_a[ti][k], series.nk_a_err[ti][k]) = stat(&|r| r.nk_a[ti][k]);
            (series.nk_b[ti][k], series.nk_b_err[ti][k]) = stat(&|r| r.nk_b[ti][k]);
            (nk_mean[ti][k], nk_stderr[ti][k]) = stat(&|r| r.nk[ti][k]);
        }
        (series.n_pair[ti], series.n_pair_err[ti]) = stat(&|r| r.n_pair[ti]);
    }
    series.locate_t10();
    Ok(DisorderAverage { series, nk_mean, nk_stderr, n_real })
}

/// Locates `t10` on `times` from the averaged pair number, then averages
/// the distribution at that instant. Falls back to the last time when the
/// threshold is not reached.
pub fn disorder_average_at_t10(
    spec: &LatticeSpec,
    params: &ModelParams,
    f: f64,
    times: &[f64],
    n_real: usize,
    seed: u64,
    opts: DisorderOptions,
) -> Result<(Option<f64>, DisorderAverage)> {
    let coarse = disorder_average_with(spec, params, f, times, n_real, seed, opts)?;
    let t10 = first_crossing(&coarse.series.times, &coarse.series.n_pair, 0.1 * coarse.series.n_occ);
    let t_eval = t10.unwrap_or(*times.last().unwrap());
    let fine = disorder_average_with(spec, params, f, &[t_eval], n_real, seed, opts)?;
    Ok((t10, fine))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bogoliubov_k::dispersion;
    use crate::couplings::Bias;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn stacked_pair(az: f64) -> (BilayerGeometry, FillingRealization) {
        let g = build_bilayer(LatticeSpec::open(2, az).unwrap()).unwrap();
        let mut fill = FillingRealization::full(&g);
        fill.mask_a = vec![true, false, false, false];
        fill.mask_b = vec![true, false, false, false];
        (g, fill)
    }

    #[test]
    fn two_site_matrix_and_growth() {
        let (g, fill) = stacked_pair(1.0);
        let p = ModelParams::new(0.0, 0.0).unwrap();
        let c = coupling_matrices(&g, &fill, &p).unwrap();
        let v = c.inter[[0, 0]];
        let sys = assemble_bdg(&c).unwrap();
        assert_eq!(sys.matrix, ndarray::arr2(&[[0.0, -v], [v, 0.0]]));
        let d = sys.diagonalize().unwrap();
        let mut ims: Vec<f64> = d.eigenvalues.iter().map(|z| z.im).collect();
        ims.sort_by(f64::total_cmp);
        assert!((ims[0] + v.abs()).abs() < 1e-12 && (ims[1] - v.abs()).abs() < 1e-12);
        assert!(d.eigenvalues.iter().all(|z| z.re.abs() < 1e-12));
        let t = 0.8;
        let occ = evolve_occupations(&d, t);
        assert!((occ.a[[0, 0]].re - (v.abs() * t).sinh().powi(2)).abs() < 1e-12);
        assert!((occ.b[[0, 0]].re - (v.abs() * t).sinh().powi(2)).abs() < 1e-12);
    }

    #[test]
    fn vacuum_at_time_zero() {
        let g = build_bilayer(LatticeSpec::open(3, 2.0).unwrap()).unwrap();
        let p = ModelParams::new(0.6, 0.3).unwrap().with_bias(Bias::Field(0.2)).unwrap();
        let (_, d) = prepare(&g, &FillingRealization::full(&g), &p).unwrap();
        let occ = evolve_occupations(&d, 0.0);
        assert!(occ.a.iter().chain(occ.b.iter()).all(|z| z.norm() < 1e-10));
    }

    #[test]
    fn flat_distribution_for_uniform_diagonal() {
        let g = build_bilayer(LatticeSpec::periodic(4, 2.0).unwrap()).unwrap();
        let sites: Vec<usize> = (0..16).collect();
        let occ = Array2::from_diag_elem(16, C64::new(0.25, 0.0));
        for v in momentum_distribution(&occ, &sites, &g) {
            assert!((v - 0.25).abs() < 1e-14);
        }
    }

    #[test]
    fn matches_momentum_space_at_full_filling() {
        let g = build_bilayer(LatticeSpec::periodic(6, 2.0).unwrap()).unwrap();
        let p = ModelParams::new(3.0 * PI / 8.0, 0.4).unwrap().with_bias(Bias::Field(0.1)).unwrap();
        let field = dispersion(&g, &p).unwrap();
        let s = bdg_series(&g, &FillingRealization::full(&g), &p, &[0.0, 0.7, 1.5]).unwrap();
        for (n, &t) in s.times.iter().enumerate() {
            let expect = field.populations(t);
            let max = expect.iter().copied().fold(0.0, f64::max).max(1e-300);
            for k in 0..expect.len() {
                assert!((s.nk_a[n][k] - expect[k]).abs() <= 1e-8 * max.max(1.0) || max == 1e-300);
                assert!((s.nk_b[n][k] - expect[k]).abs() <= 1e-8 * max.max(1.0) || max == 1e-300);
            }
            assert!((s.n_pair[n] - expect.iter().sum::<f64>()).abs() < 1e-8 * (1.0 + s.n_pair[n]));
        }
    }

    #[test]
    fn full_filling_average_has_no_spread() {
        let spec = LatticeSpec::periodic(4, 2.0).unwrap();
        let p = ModelParams::new(0.0, 0.0).unwrap();
        let avg = disorder_average(&spec, &p, 1.0, &[0.5], 3, 1).unwrap();
        let g = build_bilayer(spec).unwrap();
        let single = bdg_series(&g, &FillingRealization::full(&g), &p, &[0.5]).unwrap();
        for k in 0..16 {
            assert!((avg.series.nk_b[0][k] - single.nk_b[0][k]).abs() < 1e-14);
            // streamed variance leaves a rounding floor
            assert!(avg.nk_stderr[0][k] < 1e-7 * (1.0 + avg.nk_mean[0][k]));
        }
        assert!(disorder_average(&spec, &p, 1.0, &[0.5], 0, 1).is_err());
    }

    #[test]
    fn stderr_shrinks_with_more_realizations() {
        let spec = LatticeSpec::periodic(6, 2.0).unwrap();
        let p = ModelParams::new(0.0, 0.0).unwrap();
        let e = |n| {
            let a = disorder_average(&spec, &p, 0.5, &[1.0], n, 4).unwrap();
            a.nk_stderr[0].iter().sum::<f64>() / a.nk_stderr[0].len() as f64
        };
        let ratio = e(40) / e(160);
        assert!((1.5..2.7).contains(&ratio), "ratio {ratio}");
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn spectrum_conjugate_and_occupations_psd(
            l in 2usize..5, az in 1.0f64..3.0, th in 0.0f64..1.5, eta in 0.0f64..1.0,
            f in 0.5f64..1.0, seed in 0u64..500, t in 0.0f64..2.0, periodic in any::<bool>()
        ) {
            let spec = if periodic { LatticeSpec::periodic(l, az) } else { LatticeSpec::open(l, az) }.unwrap();
            let g = build_bilayer(spec).unwrap();
            let fill = sample_filling_with(&g, f, seed, 0, FillingMode::Bernoulli).unwrap();
            prop_assume!(!fill.occupied_a().is_empty() && !fill.occupied_b().is_empty());
            let p = ModelParams::new(th, eta).unwrap();
            let Ok((_, d)) = prepare(&g, &fill, &p) else { return Ok(()); };
            // real matrix: spectrum closed under conjugation
            for &z in d.eigenvalues.iter() {
                let dist = d.eigenvalues.iter().map(|w| (w - z.conj()).norm()).fold(f64::INFINITY, f64::min);
                prop_assert!(dist <= 1e-9 * (1.0 + d.norm), "unmatched eigenvalue {z}");
            }
            let occ = evolve_occupations(&d, t);
            for m in [&occ.a, &occ.b] {
                let herm = m - &m.t().mapv(|z| z.conj());
                prop_assert!(herm.iter().all(|z| z.norm() < 1e-9 * (1.0 + m.iter().map(|z| z.norm()).fold(0.0, f64::max))));
                let (w, _) = ndarray_linalg::Eigh::eigh(m, ndarray_linalg::UPLO::Upper).unwrap();
                prop_assert!(w.iter().all(|&x| x >= -1e-10 * (1.0 + w.iter().fold(0.0f64, |a, b| a.max(b.abs())))));
            }
        }
    }
}
