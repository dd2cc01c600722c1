//! Discrete truncated Wigner sampling of the bilayer spin dynamics.
//!
//! Each trajectory evolves classical spins under `ds_i/dt = B_i x s_i` with
//! `B_i = sum_j V_ij (2 s^x_j, 2 s^y_j, 2 eta s^z_j) + (0, 0, h_i)`. Batches
//! of trajectories share one state matrix of shape `(N, 3 nb)` whose column
//! blocks hold the x, y and z components, so the pairwise sum becomes a
//! single matrix product per stage.

pub mod integrator;

use ndarray::{s, Array2, ArrayView2};
use rand::RngCore;
use rayon::prelude::*;
use serde::Serialize;

use crate::bogoliubov_k::resolve_bias;
use crate::couplings::{coupling_matrices, CouplingMatrices, ModelParams};
use crate::error::{Error, Result};
use crate::lattice::{
    build_bilayer, k_grid, sample_filling_with, BilayerGeometry, Boundary, FillingMode, FillingRealization, KGrid, Layer, LatticeSpec,
};
use crate::observables::{mean_stderr, phase_table, CorrelationAccumulator, CorrelationMap, ObservableSeries};
use crate::rng::{keyed_stream, Purpose};
use crate::C64;

pub use integrator::{integrate, BatchSystem, IntegratorConfig, IntegratorStats};

/// Couplings and fields of one filling realization, spins ordered A then B.
#[derive(Debug, Clone)]
pub struct SpinSystem {
    pub coupling: Array2<f64>,
    pub eta: f64,
    pub field: Vec<f64>,
    pub n_a: usize,
    pub n_b: usize,
    pub sites_a: Vec<usize>,
    pub sites_b: Vec<usize>,
}

impl SpinSystem {
    pub fn new(c: &CouplingMatrices, eta: f64, bias: f64) -> Self {
        let (n_a, n_b) = (c.n_a(), c.n_b());
        let field = (0..n_a + n_b).map(|p| if p < n_a { -bias } else { bias }).collect();
        SpinSystem { coupling: c.full(), eta, field, n_a, n_b, sites_a: c.sites_a.clone(), sites_b: c.sites_b.clone() }
    }

    pub fn build(geom: &BilayerGeometry, fill: &FillingRealization, params: &ModelParams) -> Result<Self> {
        let c = coupling_matrices(geom, fill, params)?;
        Ok(Self::new(&c, params.eta, resolve_bias(&geom.spec, params)?))
    }

    pub fn n_spins(&self) -> usize {
        self.n_a + self.n_b
    }

    /// Classical energy of one configuration.
    pub fn energy(&self, spins: &[[f64; 3]]) -> f64 {
        let n = self.n_spins();
        let mut e = 0.0;
        for i in 0..n {
            let mut acc = [0.0; 3];
            for j in 0..n {
                let v = self.coupling[[i, j]];
                for c in 0..3 {
                    acc[c] += v * spins[j][c];
                }
            }
            e += spins[i][0] * acc[0] + spins[i][1] * acc[1] + self.eta * spins[i][2] * acc[2] + self.field[i] * spins[i][2];
        }
        e
    }

    /// Energy of every trajectory in a batch state matrix.
    fn batch_energy(&self, y: ArrayView2<f64>, nb: usize) -> Vec<f64> {
        let g = self.coupling.dot(&y);
        let mut e = vec![0.0; nb];
        for i in 0..self.n_spins() {
            for (p, ep) in e.iter_mut().enumerate() {
                *ep += y[[i, p]] * g[[i, p]]
                    + y[[i, nb + p]] * g[[i, nb + p]]
                    + self.eta * y[[i, 2 * nb + p]] * g[[i, 2 * nb + p]]
                    + self.field[i] * y[[i, 2 * nb + p]];
            }
        }
        e
    }
}

struct Batched<'a> {
    sys: &'a SpinSystem,
    nb: usize,
}

impl BatchSystem for Batched<'_> {
    fn groups(&self) -> usize {
        self.nb
    }

    fn rhs(&self, y: &Array2<f64>, dy: &mut Array2<f64>) {
        let nb = self.nb;
        let eta = self.sys.eta;
        // s^z enters the field only through eta
        let width = if eta == 0.0 { 2 * nb } else { 3 * nb };
        let g = self.sys.coupling.dot(&y.slice(s![.., 0..width]));
        for i in 0..self.sys.n_spins() {
            let yr = y.row(i);
            let gr = g.row(i);
            let mut dr = dy.row_mut(i);
            let hz = self.sys.field[i];
            for p in 0..nb {
                let (sx, sy, sz) = (yr[p], yr[nb + p], yr[2 * nb + p]);
                let bx = 2.0 * gr[p];
                let by = 2.0 * gr[nb + p];
                let bz = if eta == 0.0 { hz } else { 2.0 * eta * gr[2 * nb + p] + hz };
                dr[p] = by * sz - bz * sy;
                dr[nb + p] = bz * sx - bx * sz;
                dr[2 * nb + p] = bx * sy - by * sx;
            }
        }
    }
}

/// Phase point of one trajectory: `s^z` fixed by the layer, transverse
/// components independent fair draws from `{+1/2, -1/2}`.
pub fn phase_point(seed: u64, realization: u64, trajectory: u64, n_a: usize, n_b: usize) -> Vec<[f64; 3]> {
    let mut rng = keyed_stream(seed, Purpose::PhasePoints, realization, trajectory);
    let half = |bit: u64| if bit == 1 { 0.5 } else { -0.5 };
    (0..n_a + n_b)
        .map(|p| {
            let w = rng.next_u64();
            [half(w >> 63), half((w >> 62) & 1), if p < n_a { 0.5 } else { -0.5 }]
        })
        .collect()
}

#[derive(Debug, Clone, Serialize)]
pub struct SpinEnsemble {
    pub n_a: usize,
    pub n_b: usize,
    pub seed: u64,
    pub t: f64,
    /// `spins[trajectory][spin]`, spins ordered A then B.
    pub spins: Vec<Vec<[f64; 3]>>,
}

impl SpinEnsemble {
    pub fn n_traj(&self) -> usize {
        self.spins.len()
    }

    fn to_state(&self) -> Array2<f64> {
        let nb = self.n_traj();
        let mut y = Array2::zeros((self.n_a + self.n_b, 3 * nb));
        for (p, traj) in self.spins.iter().enumerate() {
            for (i, s) in traj.iter().enumerate() {
                for c in 0..3 {
                    y[[i, c * nb + p]] = s[c];
                }
            }
        }
        y
    }

    fn from_state(y: ArrayView2<f64>, like: &SpinEnsemble, t: f64) -> Self {
        let nb = y.ncols() / 3;
        let spins = (0..nb)
            .map(|p| (0..y.nrows()).map(|i| [y[[i, p]], y[[i, nb + p]], y[[i, 2 * nb + p]]]).collect())
            .collect();
        SpinEnsemble { n_a: like.n_a, n_b: like.n_b, seed: like.seed, t, spins }
    }
}

pub fn sample_initial(fill: &FillingRealization, n_traj: usize, seed: u64) -> Result<SpinEnsemble> {
    if n_traj == 0 {
        return Err(Error::InvalidParameter("n_traj must be at least 1".into()));
    }
    let (n_a, n_b) = (fill.occupied_a().len(), fill.occupied_b().len());
    let spins = (0..n_traj as u64).map(|p| phase_point(seed, fill.realization, p, n_a, n_b)).collect();
    Ok(SpinEnsemble { n_a, n_b, seed, t: 0.0, spins })
}

/// Evolves every trajectory, returning the ensemble at each sample time.
pub fn evolve(ens: &SpinEnsemble, sys: &SpinSystem, times: &[f64], cfg: &IntegratorConfig) -> Result<(Vec<SpinEnsemble>, IntegratorStats)> {
    if sys.n_a != ens.n_a || sys.n_b != ens.n_b {
        return Err(Error::Mismatch("ensemble and couplings disagree on occupied sites".into()));
    }
    let rhs = Batched { sys, nb: ens.n_traj() };
    let mut out = Vec::with_capacity(times.len());
    let stats = integrate(&rhs, ens.to_state(), times, cfg, |n, y| {
        out.push(SpinEnsemble::from_state(y, ens, times[n]));
        Ok(())
    })?;
    Ok((out, stats))
}

/// Estimator moments at one sample time, summed over trajectories.
#[derive(Debug, Clone)]
struct Moments {
    count: f64,
    nk_a: Vec<[f64; 2]>,
    nk_b: Vec<[f64; 2]>,
    n_pair: [f64; 2],
    /// `sum_i s^x_i / N` per layer
    mx: [[f64; 2]; 2],
    corr: Option<[CorrelationAccumulator; 2]>,
}

impl Moments {
    fn new(nk: usize, corr: Option<&BilayerGeometry>) -> Self {
        Moments {
            count: 0.0,
            nk_a: vec![[0.0; 2]; nk],
            nk_b: vec![[0.0; 2]; nk],
            n_pair: [0.0; 2],
            mx: [[0.0; 2]; 2],
            corr: corr.map(|g| [CorrelationAccumulator::new(g), CorrelationAccumulator::new(g)]),
        }
    }

    fn merge(&mut self, o: &Moments) {
        self.count += o.count;
        for (a, b) in self.nk_a.iter_mut().zip(&o.nk_a).chain(self.nk_b.iter_mut().zip(&o.nk_b)) {
            a[0] += b[0];
            a[1] += b[1];
        }
        self.n_pair[0] += o.n_pair[0];
        self.n_pair[1] += o.n_pair[1];
        for l in 0..2 {
            self.mx[l][0] += o.mx[l][0];
            self.mx[l][1] += o.mx[l][1];
        }
        if let (Some(a), Some(b)) = (self.corr.as_mut(), o.corr.as_ref()) {
            a[0].merge(&b[0]);
            a[1].merge(&b[1]);
        }
    }
}

/// Per-realization tables used by the estimators.
struct Estimator<'a> {
    geom: &'a BilayerGeometry,
    sys: &'a SpinSystem,
    ph_a: Array2<C64>,
    ph_b: Array2<C64>,
    direct_corr: bool,
}

impl<'a> Estimator<'a> {
    fn new(geom: &'a BilayerGeometry, grid: &KGrid, sys: &'a SpinSystem, direct_corr: bool) -> Self {
        Estimator {
            geom,
            sys,
            ph_a: phase_table(geom, grid, &sys.sites_a),
            ph_b: phase_table(geom, grid, &sys.sites_b),
            direct_corr,
        }
    }

    fn accumulate(&self, y: ArrayView2<f64>, m: &mut Moments) {
        let nb = y.ncols() / 3;
        let (na, nbb) = (self.sys.n_a, self.sys.n_b);
        // row blocks: s+ = s^x + i s^y per layer
        let splus = |rows: std::ops::Range<usize>| {
            Array2::from_shape_fn((rows.len(), nb), |(i, p)| C64::new(y[[rows.start + i, p]], y[[rows.start + i, nb + p]]))
        };
        let sp_a = splus(0..na);
        let sp_b = splus(na..na + nbb);
        let g = self.ph_a.dot(&sp_a);
        let f = self.ph_b.dot(&sp_b.mapv(|z| z.conj()));
        for p in 0..nb {
            let (mut trans_a, mut dens_a, mut mx_a) = (0.0, 0.0, 0.0);
            for i in 0..na {
                trans_a += sp_a[[i, p]].norm_sqr();
                dens_a += 0.5 - y[[i, 2 * nb + p]];
                mx_a += y[[i, p]];
            }
            let (mut trans_b, mut dens_b, mut mx_b) = (0.0, 0.0, 0.0);
            for i in 0..nbb {
                trans_b += sp_b[[i, p]].norm_sqr();
                dens_b += 0.5 + y[[na + i, 2 * nb + p]];
                mx_b += y[[na + i, p]];
            }
            for (k, acc) in m.nk_a.iter_mut().enumerate() {
                let v = (g[[k, p]].norm_sqr() - trans_a + dens_a) / na as f64;
                acc[0] += v;
                acc[1] += v * v;
            }
            for (k, acc) in m.nk_b.iter_mut().enumerate() {
                let v = (f[[k, p]].norm_sqr() - trans_b + dens_b) / nbb as f64;
                acc[0] += v;
                acc[1] += v * v;
            }
            m.n_pair[0] += dens_b;
            m.n_pair[1] += dens_b * dens_b;
            for (l, v) in [(0, mx_a / na as f64), (1, mx_b / nbb as f64)] {
                m.mx[l][0] += v;
                m.mx[l][1] += v * v;
            }
        }
        m.count += nb as f64;
        if self.direct_corr {
            if let Some(acc) = m.corr.as_mut() {
                // sum over trajectories of s+_i conj(s+_j)
                let ca = sp_a.dot(&sp_a.t().mapv(|z| z.conj()));
                let cb = sp_b.dot(&sp_b.t().mapv(|z| z.conj()));
                acc[0].add(ca.view(), &self.sys.sites_a, self.geom, nb as f64);
                acc[1].add(cb.view(), &self.sys.sites_b, self.geom, nb as f64);
            }
        }
    }
}

/// Ensemble-mean distributions of both layers with standard errors.
#[derive(Debug, Clone, Serialize)]
pub struct NkEstimate {
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub a_err: Vec<f64>,
    pub b_err: Vec<f64>,
}

fn single_moments(ens: &SpinEnsemble, geom: &BilayerGeometry, fill: &FillingRealization, corr: bool) -> Result<(Moments, SpinSystem)> {
    let sys = SpinSystem {
        coupling: Array2::zeros((0, 0)),
        eta: 0.0,
        field: Vec::new(),
        n_a: ens.n_a,
        n_b: ens.n_b,
        sites_a: fill.occupied_a(),
        sites_b: fill.occupied_b(),
    };
    if sys.sites_a.len() != ens.n_a || sys.sites_b.len() != ens.n_b {
        return Err(Error::Mismatch("ensemble and filling disagree on occupied sites".into()));
    }
    let grid = k_grid(&geom.spec);
    let est = Estimator::new(geom, &grid, &sys, corr);
    let mut m = Moments::new(grid.len(), corr.then_some(geom));
    est.accumulate(ens.to_state().view(), &mut m);
    Ok((m, sys))
}

pub fn structure_factor(ens: &SpinEnsemble, geom: &BilayerGeometry, fill: &FillingRealization) -> Result<NkEstimate> {
    let (m, _) = single_moments(ens, geom, fill, false)?;
    let split = |v: &[[f64; 2]]| -> (Vec<f64>, Vec<f64>) { v.iter().map(|s| mean_stderr(s[0], s[1], m.count)).unzip() };
    let (a, a_err) = split(&m.nk_a);
    let (b, b_err) = split(&m.nk_b);
    Ok(NkEstimate { a, b, a_err, b_err })
}

/// `C^{+-}(r)` of layers A and B, binned over occupied pairs with `i != j`.
pub fn real_space_correlations(ens: &SpinEnsemble, geom: &BilayerGeometry, fill: &FillingRealization) -> Result<[CorrelationMap; 2]> {
    let (m, _) = single_moments(ens, geom, fill, true)?;
    let acc = m.corr.unwrap();
    Ok([acc[0].finish(ens.t, Layer::A), acc[1].finish(ens.t, Layer::B)])
}

#[derive(Debug, Clone, Serialize)]
pub struct DtwaConfig {
    pub spec: LatticeSpec,
    pub params: ModelParams,
    pub filling: f64,
    pub filling_mode: FillingMode,
    pub n_realizations: usize,
    /// Trajectories per filling realization.
    pub n_traj: usize,
    pub times: Vec<f64>,
    pub seed: u64,
    pub integrator: IntegratorConfig,
    pub batch_size: usize,
    pub correlations: bool,
}

impl DtwaConfig {
    pub fn new(spec: LatticeSpec, params: ModelParams, times: Vec<f64>) -> Self {
        DtwaConfig {
            spec,
            params,
            filling: 1.0,
            filling_mode: FillingMode::Bernoulli,
            n_realizations: 1,
            n_traj: 10_000,
            times,
            seed: 0,
            integrator: IntegratorConfig::default(),
            batch_size: 128,
            correlations: true,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct DtwaRun {
    pub series: ObservableSeries,
    pub stats: IntegratorStats,
    pub n_samples: usize,
    /// Mean and stderr of the per-layer transverse magnetization
    /// `sum_i s^x_i / N` at each time: `[mean_a, err_a, mean_b, err_b]`.
    pub transverse: Vec<[f64; 4]>,
    /// Largest per-trajectory energy change between the first and last sample.
    pub energy_drift: f64,
}

struct BatchResult {
    moments: Vec<Moments>,
    stats: IntegratorStats,
    drift: f64,
}

const BATCHES_PER_ROUND: usize = 16;

pub fn run_experiment(cfg: &DtwaConfig) -> Result<DtwaRun> {
    cfg.params.validate()?;
    if cfg.n_traj == 0 || cfg.n_realizations == 0 || cfg.batch_size == 0 {
        return Err(Error::InvalidParameter("n_traj, n_realizations and batch_size must be positive".into()));
    }
    if cfg.times.is_empty() {
        return Err(Error::InvalidParameter("no sample times".into()));
    }
    let geom = build_bilayer(cfg.spec)?;
    let grid = k_grid(&cfg.spec);
    let fills: Vec<FillingRealization> = (0..cfg.n_realizations as u64)
        .map(|r| sample_filling_with(&geom, cfg.filling, cfg.seed, r, cfg.filling_mode))
        .collect::<Result<_>>()?;
    let systems: Vec<SpinSystem> = fills.iter().map(|f| SpinSystem::build(&geom, f, &cfg.params)).collect::<Result<_>>()?;
    let spectral = cfg.correlations && cfg.spec.boundary == Boundary::Periodic && fills.iter().all(|f| f.is_full());
    let direct = cfg.correlations && !spectral;
    let estimators: Vec<Estimator> = systems.iter().map(|s| Estimator::new(&geom, &grid, s, direct)).collect();

    let per_real = cfg.n_traj.div_ceil(cfg.batch_size);
    let jobs: Vec<(usize, usize)> = (0..cfg.n_realizations).flat_map(|r| (0..per_real).map(move |b| (r, b))).collect();
    let nt = cfg.times.len();
    let fresh = || (0..nt).map(|_| Moments::new(grid.len(), direct.then_some(&geom))).collect::<Vec<_>>();
    let mut total = fresh();
    let mut stats = IntegratorStats::default();
    let mut drift: f64 = 0.0;

    let run_batch = |&(r, b): &(usize, usize)| -> Result<BatchResult> {
        let sys = &systems[r];
        let first = b * cfg.batch_size;
        let nb = cfg.batch_size.min(cfg.n_traj - first);
        let mut y = Array2::zeros((sys.n_spins(), 3 * nb));
        for p in 0..nb {
            for (i, s) in phase_point(cfg.seed, r as u64, (first + p) as u64, sys.n_a, sys.n_b).iter().enumerate() {
                for c in 0..3 {
                    y[[i, c * nb + p]] = s[c];
                }
            }
        }
        let e0 = sys.batch_energy(y.view(), nb);
        let mut moments = fresh();
        let mut last = Vec::new();
        let rhs = Batched { sys, nb };
        let st = integrate(&rhs, y, &cfg.times, &cfg.integrator, |n, state| {
            estimators[r].accumulate(state, &mut moments[n]);
            if n + 1 == nt {
                last = sys.batch_energy(state, nb);
            }
            Ok(())
        })
        .map_err(|e| match e {
            Error::StepUnderflow { time, trajectory, step } => Error::StepUnderflow { time, trajectory: first + trajectory, step },
            other => other,
        })?;
        let drift = e0.iter().zip(&last).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        Ok(BatchResult { moments, stats: st, drift })
    };

    // bounded memory: parallel within a round, ordered reduction across
    for round in jobs.chunks(BATCHES_PER_ROUND) {
        let results: Vec<BatchResult> = round.par_iter().map(run_batch).collect::<Result<_>>()?;
        for res in &results {
            for (t, m) in total.iter_mut().zip(&res.moments) {
                t.merge(m);
            }
            stats.merge(&res.stats);
            drift = drift.max(res.drift);
        }
    }

    let n_occ = systems.iter().map(|s| 0.5 * s.n_spins() as f64).sum::<f64>() / systems.len() as f64;
    let mut series = ObservableSeries::new(grid.clone(), n_occ, cfg.times.clone());
    let mut transverse = Vec::with_capacity(nt);
    for (n, m) in total.iter().enumerate() {
        for k in 0..grid.len() {
            (series.nk_a[n][k], series.nk_a_err[n][k]) = mean_stderr(m.nk_a[k][0], m.nk_a[k][1], m.count);
            (series.nk_b[n][k], series.nk_b_err[n][k]) = mean_stderr(m.nk_b[k][0], m.nk_b[k][1], m.count);
        }
        (series.n_pair[n], series.n_pair_err[n]) = mean_stderr(m.n_pair[0], m.n_pair[1], m.count);
        let (ma, ea) = mean_stderr(m.mx[0][0], m.mx[0][1], m.count);
        let (mb, eb) = mean_stderr(m.mx[1][0], m.mx[1][1], m.count);
        transverse.push([ma, ea, mb, eb]);
        if let Some(acc) = &m.corr {
            series.correlations.push(acc[0].finish(cfg.times[n], Layer::A));
            series.correlations.push(acc[1].finish(cfg.times[n], Layer::B));
        }
    }
    if spectral {
        for n in 0..nt {
            let [a, b] = spectral_correlations(&series, n, &geom);
            series.correlations.push(a);
            series.correlations.push(b);
        }
    }
    series.locate_t10();
    Ok(DtwaRun { series, stats, n_samples: total[0].count as usize, transverse, energy_drift: drift })
}

/// Correlations of a fully filled periodic lattice recovered from the mean
/// distributions: `C_B(r) = (1/N) sum_k exp(-i k r) N^B_k` and the mirrored
/// relation for layer A, whose distribution uses the opposite ordering.
fn spectral_correlations(series: &ObservableSeries, n: usize, geom: &BilayerGeometry) -> [CorrelationMap; 2] {
    let l = geom.size() as i64;
    let lo = -(l / 2);
    let norm = (l * l) as f64;
    let roots: Vec<C64> = (0..l).map(|m| C64::from_polar(1.0, -2.0 * std::f64::consts::PI * m as f64 / l as f64)).collect();
    let mut offsets = Vec::new();
    let (mut va, mut vb) = (Vec::new(), Vec::new());
    for dy in lo..lo + l {
        for dx in lo..lo + l {
            if dx == 0 && dy == 0 {
                continue;
            }
            let (mut a, mut b) = (C64::new(0.0, 0.0), C64::new(0.0, 0.0));
            for (k, &[nx, ny]) in series.grid.labels.iter().enumerate() {
                let ph = roots[(nx * dx + ny * dy).rem_euclid(l) as usize];
                b += ph * series.nk_b[n][k];
                a += ph.conj() * series.nk_a[n][k];
            }
            offsets.push([dx, dy]);
            va.push(a / norm);
            vb.push(b / norm);
        }
    }
    let t = series.times[n];
    [
        CorrelationMap { t, layer: Layer::A, offsets: offsets.clone(), values: va },
        CorrelationMap { t, layer: Layer::B, offsets, values: vb },
    ]
}

#[cfg(test)]
mod tests;
