//! Exact evolution of small bilayers inside the initial magnetization sector.

use ndarray::{Array1, Array2};
use std::collections::HashMap;

use crate::bogoliubov_k::resolve_bias;
use crate::couplings::{coupling_matrices, CouplingMatrices, ModelParams};
use crate::error::{Error, Result};
use crate::lattice::{k_grid, BilayerGeometry, FillingRealization, Layer};
use crate::observables::{momentum_distribution, phase_table, CorrelationAccumulator, ObservableSeries};
use crate::C64;

pub const MAX_SPINS: usize = 12;

/// Sector Hamiltonian. Spins are ordered occupied A sites first, bit `p`
/// of a basis word set when spin `p` points up.
#[derive(Debug, Clone)]
pub struct EdSystem {
    pub n_a: usize,
    pub n_b: usize,
    pub sites_a: Vec<usize>,
    pub sites_b: Vec<usize>,
    pub basis: Vec<u32>,
    index: HashMap<u32, usize>,
    pub hamiltonian: Array2<f64>,
}

#[derive(Debug, Clone)]
pub struct EdState {
    pub amplitudes: Array1<C64>,
    pub t: f64,
}

pub fn ed_system(geom: &BilayerGeometry, fill: &FillingRealization, params: &ModelParams) -> Result<EdSystem> {
    let c = coupling_matrices(geom, fill, params)?;
    let h = resolve_bias(&geom.spec, params)?;
    EdSystem::new(&c, params.eta, h)
}

impl EdSystem {
    pub fn new(c: &CouplingMatrices, eta: f64, bias: f64) -> Result<Self> {
        let (na, nb) = (c.n_a(), c.n_b());
        let n = na + nb;
        if n > MAX_SPINS {
            return Err(Error::TooManySpins { max: MAX_SPINS, got: n });
        }
        let full = c.full();
        let basis: Vec<u32> = (0u32..1 << n).filter(|s| s.count_ones() as usize == na).collect();
        let index: HashMap<u32, usize> = basis.iter().enumerate().map(|(i, &s)| (s, i)).collect();
        let dim = basis.len();
        let sz = |s: u32, p: usize| if s >> p & 1 == 1 { 0.5 } else { -0.5 };
        let mut hm = Array2::zeros((dim, dim));
        for (col, &s) in basis.iter().enumerate() {
            let mut diag = 0.0;
            for p in 0..n {
                // -h s^z on A, +h s^z on B
                diag += if p < na { -bias } else { bias } * sz(s, p);
                for q in p + 1..n {
                    let v = full[[p, q]];
                    diag += 2.0 * eta * v * sz(s, p) * sz(s, q);
                    if (s >> p & 1) != (s >> q & 1) {
                        let flipped = s ^ (1 << p) ^ (1 << q);
                        hm[[index[&flipped], col]] += v;
                    }
                }
            }
            hm[[col, col]] += diag;
        }
        Ok(EdSystem {
            n_a: na,
            n_b: nb,
            sites_a: c.sites_a.clone(),
            sites_b: c.sites_b.clone(),
            basis,
            index,
            hamiltonian: hm,
        })
    }

    pub fn dim(&self) -> usize {
        self.basis.len()
    }

    /// Layer A up, layer B down.
    pub fn initial_state(&self) -> EdState {
        let word = (1u32 << self.n_a) - 1;
        let mut amp = Array1::zeros(self.dim());
        amp[self.index[&word]] = C64::new(1.0, 0.0);
        EdState { amplitudes: amp, t: 0.0 }
    }

    pub fn propagator(&self, t: f64) -> Array2<C64> {
        expm_skew(&self.hamiltonian, t)
    }

    pub fn evolve(&self, t: f64) -> EdState {
        let psi0 = self.initial_state();
        EdState { amplitudes: self.propagator(t).dot(&psi0.amplitudes), t }
    }

    /// States at each of the non-decreasing `times`, stepping between samples.
    pub fn evolve_series(&self, times: &[f64]) -> Result<Vec<EdState>> {
        let mut out = Vec::with_capacity(times.len());
        let mut psi = self.initial_state();
        let mut cached: Option<(f64, Array2<C64>)> = None;
        for &t in times {
            let dt = t - psi.t;
            if dt < 0.0 {
                return Err(Error::InvalidParameter("sample times must be non-decreasing".into()));
            }
            if dt > 0.0 {
                let reuse = matches!(&cached, Some((d, _)) if (d - dt).abs() <= 1e-14 * dt);
                if !reuse {
                    cached = Some((dt, self.propagator(dt)));
                }
                let u = &cached.as_ref().unwrap().1;
                psi = EdState { amplitudes: u.dot(&psi.amplitudes), t };
            }
            out.push(psi.clone());
        }
        Ok(out)
    }

    pub fn norm(&self, state: &EdState) -> f64 {
        state.amplitudes.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
    }

    pub fn sz(&self, state: &EdState, p: usize) -> f64 {
        self.basis
            .iter()
            .zip(state.amplitudes.iter())
            .map(|(&s, a)| a.norm_sqr() * if s >> p & 1 == 1 { 0.5 } else { -0.5 })
            .sum()
    }

    /// `<s+_p s-_q>` for spins `p` and `q`, diagonal included.
    pub fn plus_minus(&self, state: &EdState, p: usize, q: usize) -> C64 {
        if p == q {
            return C64::new(0.5 + self.sz(state, p), 0.0);
        }
        let mut acc = C64::new(0.0, 0.0);
        for (i, &s) in self.basis.iter().enumerate() {
            // s-_q needs q up, s+_p needs p down
            if s >> q & 1 == 1 && s >> p & 1 == 0 {
                let j = self.index[&(s ^ (1 << p) ^ (1 << q))];
                acc += state.amplitudes[j].conj() * state.amplitudes[i];
            }
        }
        acc
    }

    /// Layer excitation correlations: `<s-_i s+_j>` on A, `<s+_i s-_j>` on B.
    pub fn excitation_correlations(&self, state: &EdState) -> (Array2<C64>, Array2<C64>) {
        let na = self.n_a;
        let a = Array2::from_shape_fn((na, na), |(i, j)| {
            if i == j {
                C64::new(0.5 - self.sz(state, i), 0.0)
            } else {
                self.plus_minus(state, j, i)
            }
        });
        let b = Array2::from_shape_fn((self.n_b, self.n_b), |(i, j)| self.plus_minus(state, na + i, na + j));
        (a, b)
    }

    /// Excitation count of layer B.
    pub fn pair_number(&self, state: &EdState) -> f64 {
        (self.n_a..self.n_a + self.n_b).map(|p| 0.5 + self.sz(state, p)).sum()
    }

    pub fn series(&self, geom: &BilayerGeometry, times: &[f64]) -> Result<ObservableSeries> {
        let grid = k_grid(&geom.spec);
        let ph_a = phase_table(geom, &grid, &self.sites_a);
        let ph_b = phase_table(geom, &grid, &self.sites_b);
        let mut s = ObservableSeries::new(grid, 0.5 * (self.n_a + self.n_b) as f64, times.to_vec());
        for (n, st) in self.evolve_series(times)?.iter().enumerate() {
            let (ca, cb) = self.excitation_correlations(st);
            s.nk_a[n] = momentum_distribution(ca.view(), &ph_a, self.n_a as f64);
            s.nk_b[n] = momentum_distribution(cb.view(), &ph_b, self.n_b as f64);
            s.n_pair[n] = self.pair_number(st);
            let mut acc_a = CorrelationAccumulator::new(geom);
            acc_a.add(ca.t(), &self.sites_a, geom, 1.0);
            let mut acc_b = CorrelationAccumulator::new(geom);
            acc_b.add(cb.view(), &self.sites_b, geom, 1.0);
            s.correlations.push(acc_a.finish(st.t, Layer::A));
            s.correlations.push(acc_b.finish(st.t, Layer::B));
        }
        s.locate_t10();
        Ok(s)
    }
}

pub fn exact_evolve(geom: &BilayerGeometry, fill: &FillingRealization, params: &ModelParams, t: f64) -> Result<(EdSystem, EdState)> {
    let sys = ed_system(geom, fill, params)?;
    let st = sys.evolve(t);
    Ok((sys, st))
}

/// `N_k` of layers A and B for an exact state.
pub fn exact_structure_factor(sys: &EdSystem, state: &EdState, geom: &BilayerGeometry) -> (Vec<f64>, Vec<f64>) {
    let grid = k_grid(&geom.spec);
    let (ca, cb) = sys.excitation_correlations(state);
    let na = momentum_distribution(ca.view(), &phase_table(geom, &grid, &sys.sites_a), sys.n_a as f64);
    let nb = momentum_distribution(cb.view(), &phase_table(geom, &grid, &sys.sites_b), sys.n_b as f64);
    (na, nb)
}

/// `exp(-i H t)` for real symmetric `H` by scaling and squaring a Taylor series.
pub fn expm_skew(h: &Array2<f64>, t: f64) -> Array2<C64> {
    let n = h.nrows();
    let norm1 = (0..n).map(|j| h.column(j).iter().map(|x| x.abs()).sum::<f64>()).fold(0.0, f64::max) * t.abs();
    let squarings = if norm1 > 0.5 { (norm1 / 0.5).log2().ceil() as i32 } else { 0 };
    let scale = t / 2f64.powi(squarings);
    let a = h.mapv(|x| C64::new(0.0, -x * scale));
    // ||a|| <= 1/2, so 20 terms reach 2^-20 / 20! ~ 1e-25
    let mut result = Array2::<C64>::eye(n);
    let mut term = Array2::<C64>::eye(n);
    for k in 1..=20 {
        term = term.dot(&a).mapv(|z| z / k as f64);
        result += &term;
    }
    for _ in 0..squarings {
        result = result.dot(&result);
    }
    result
}
