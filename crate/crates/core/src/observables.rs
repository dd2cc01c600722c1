//! Observables shared by all solvers: momentum distributions, binned
//! real-space correlations and time series.

use ndarray::{Array2, ArrayView2};
use serde::Serialize;
use std::f64::consts::PI;
use std::path::Path;

use crate::error::{Error, Result};
use crate::io_schema::{write_csv, Cell, SchemaId};
use crate::lattice::{BilayerGeometry, Boundary, KGrid, Layer};
use crate::C64;

/// `phases[[k, i]] = exp(-i k . r_i)` for the listed in-layer sites.
pub fn phase_table(geom: &BilayerGeometry, grid: &KGrid, sites: &[usize]) -> Array2<C64> {
    let l = geom.size() as i64;
    let roots: Vec<C64> = (0..l).map(|m| C64::from_polar(1.0, -2.0 * PI * m as f64 / l as f64)).collect();
    let mut out = Array2::zeros((grid.len(), sites.len()));
    for (kidx, &[nx, ny]) in grid.labels.iter().enumerate() {
        for (p, &s) in sites.iter().enumerate() {
            let (x, y) = geom.coords(s);
            out[[kidx, p]] = roots[(nx * x + ny * y).rem_euclid(l) as usize];
        }
    }
    out
}

/// `N_k = (1/norm) sum_ij exp(i k (r_i - r_j)) corr_ij` for every k in the table.
pub fn momentum_distribution(corr: ArrayView2<C64>, phases: &Array2<C64>, norm: f64) -> Vec<f64> {
    let p = corr.dot(&phases.t());
    let mut out = vec![0.0; phases.nrows()];
    for (k, v) in out.iter_mut().enumerate() {
        let mut acc = C64::new(0.0, 0.0);
        for (i, ph) in phases.row(k).iter().enumerate() {
            acc += ph.conj() * p[[i, k]];
        }
        *v = acc.re / norm;
    }
    out
}

/// Sums of pair correlations binned by the in-plane displacement `r_i - r_j`.
#[derive(Debug, Clone)]
pub struct CorrelationAccumulator {
    size: i64,
    lo: i64,
    width: i64,
    boundary: Boundary,
    sums: Vec<C64>,
    counts: Vec<f64>,
}

impl CorrelationAccumulator {
    pub fn new(geom: &BilayerGeometry) -> Self {
        let l = geom.size() as i64;
        let (lo, width) = match geom.spec.boundary {
            Boundary::Periodic => (-(l / 2), l),
            Boundary::Open => (-(l - 1), 2 * l - 1),
        };
        let n = (width * width) as usize;
        CorrelationAccumulator {
            size: l,
            lo,
            width,
            boundary: geom.spec.boundary,
            sums: vec![C64::new(0.0, 0.0); n],
            counts: vec![0.0; n],
        }
    }

    fn bin(&self, d: (i64, i64)) -> usize {
        ((d.1 - self.lo) * self.width + (d.0 - self.lo)) as usize
    }

    /// Adds `corr[[p, q]]` for `p != q`, each standing for `weight` samples.
    pub fn add(&mut self, corr: ArrayView2<C64>, sites: &[usize], geom: &BilayerGeometry, weight: f64) {
        debug_assert_eq!(geom.size() as i64, self.size);
        debug_assert_eq!(geom.spec.boundary, self.boundary);
        for (p, &i) in sites.iter().enumerate() {
            for (q, &j) in sites.iter().enumerate() {
                if p != q {
                    let b = self.bin(geom.grid_offset(i, j));
                    self.sums[b] += corr[[p, q]];
                    self.counts[b] += weight;
                }
            }
        }
    }

    pub fn merge(&mut self, other: &CorrelationAccumulator) {
        for (a, b) in self.sums.iter_mut().zip(&other.sums) {
            *a += b;
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
    }

    pub fn finish(&self, t: f64, layer: Layer) -> CorrelationMap {
        let mut offsets = Vec::new();
        let mut values = Vec::new();
        for dy in 0..self.width {
            for dx in 0..self.width {
                let b = (dy * self.width + dx) as usize;
                if self.counts[b] > 0.0 {
                    offsets.push([dx + self.lo, dy + self.lo]);
                    values.push(self.sums[b] / self.counts[b]);
                }
            }
        }
        CorrelationMap { t, layer, offsets, values }
    }
}

/// `C^{+-}(r)`, averaged over site pairs at displacement `r`, excluding `r = 0`.
#[derive(Debug, Clone, Serialize)]
pub struct CorrelationMap {
    pub t: f64,
    pub layer: Layer,
    pub offsets: Vec<[i64; 2]>,
    pub values: Vec<C64>,
}

impl CorrelationMap {
    pub fn get(&self, dx: i64, dy: i64) -> Option<C64> {
        self.offsets.iter().position(|&o| o == [dx, dy]).map(|i| self.values[i])
    }
}

/// First time at which `values` reaches `threshold`, linearly interpolated.
pub fn first_crossing(times: &[f64], values: &[f64], threshold: f64) -> Option<f64> {
    let i = values.iter().position(|&v| v >= threshold)?;
    if i == 0 {
        return Some(times[0]);
    }
    let (t0, t1, v0, v1) = (times[i - 1], times[i], values[i - 1], values[i]);
    Some(t0 + (threshold - v0) / (v1 - v0) * (t1 - t0))
}

/// Time series of momentum distributions and pair numbers.
///
/// `nk_a[t][k]` is the excitation distribution of layer A at `times[t]`,
/// normalized per occupied site of that layer. `n_pair` counts excitations
/// in layer B, which equals the count in layer A.
#[derive(Debug, Clone, Serialize)]
pub struct ObservableSeries {
    pub grid: KGrid,
    /// Mean occupied sites per layer.
    pub n_occ: f64,
    pub times: Vec<f64>,
    pub nk_a: Vec<Vec<f64>>,
    pub nk_b: Vec<Vec<f64>>,
    pub nk_a_err: Vec<Vec<f64>>,
    pub nk_b_err: Vec<Vec<f64>>,
    pub n_pair: Vec<f64>,
    pub n_pair_err: Vec<f64>,
    pub correlations: Vec<CorrelationMap>,
    pub t10: Option<f64>,
}

impl ObservableSeries {
    pub fn new(grid: KGrid, n_occ: f64, times: Vec<f64>) -> Self {
        let nt = times.len();
        let nk = grid.len();
        let zeros = || vec![vec![0.0; nk]; nt];
        ObservableSeries {
            grid,
            n_occ,
            nk_a: zeros(),
            nk_b: zeros(),
            nk_a_err: zeros(),
            nk_b_err: zeros(),
            n_pair: vec![0.0; nt],
            n_pair_err: vec![0.0; nt],
            times,
            correlations: Vec::new(),
            t10: None,
        }
    }

    /// Sets `t10`, the first time where `N_pair` reaches `0.1 N_occ`.
    pub fn locate_t10(&mut self) {
        self.t10 = first_crossing(&self.times, &self.n_pair, 0.1 * self.n_occ);
    }

    /// Layer-averaged distribution at sample `t`.
    pub fn nk_mean(&self, t: usize) -> Vec<f64> {
        self.nk_a[t].iter().zip(&self.nk_b[t]).map(|(a, b)| 0.5 * (a + b)).collect()
    }

    /// Linear interpolation onto `times`, which must lie within the sampled range.
    pub fn resample(&self, times: &[f64]) -> Result<ObservableSeries> {
        let (first, last) = (self.times[0], *self.times.last().unwrap());
        let mut out = ObservableSeries::new(self.grid.clone(), self.n_occ, times.to_vec());
        for (n, &t) in times.iter().enumerate() {
            if t < first - 1e-12 || t > last + 1e-12 {
                return Err(Error::Mismatch(format!("time {t} outside sampled range [{first}, {last}]")));
            }
            let i = self.times.partition_point(|&s| s < t).clamp(1, self.times.len().max(2) - 1);
            let (w0, w1, i0, i1) = if self.times.len() == 1 {
                (1.0, 0.0, 0, 0)
            } else {
                let (t0, t1) = (self.times[i - 1], self.times[i]);
                let w = ((t - t0) / (t1 - t0)).clamp(0.0, 1.0);
                (1.0 - w, w, i - 1, i)
            };
            let lerp = |v: &Vec<Vec<f64>>| -> Vec<f64> {
                v[i0].iter().zip(&v[i1]).map(|(a, b)| w0 * a + w1 * b).collect()
            };
            out.nk_a[n] = lerp(&self.nk_a);
            out.nk_b[n] = lerp(&self.nk_b);
            out.nk_a_err[n] = lerp(&self.nk_a_err);
            out.nk_b_err[n] = lerp(&self.nk_b_err);
            out.n_pair[n] = w0 * self.n_pair[i0] + w1 * self.n_pair[i1];
            out.n_pair_err[n] = w0 * self.n_pair_err[i0] + w1 * self.n_pair_err[i1];
        }
        out.t10 = self.t10;
        Ok(out)
    }

    pub fn nk_rows(&self) -> Vec<Vec<Cell>> {
        let mut rows = Vec::with_capacity(2 * self.times.len() * self.grid.len());
        for (n, &t) in self.times.iter().enumerate() {
            for (layer, v, e) in [(Layer::A, &self.nk_a, &self.nk_a_err), (Layer::B, &self.nk_b, &self.nk_b_err)] {
                for (k, km) in self.grid.momenta.iter().enumerate() {
                    rows.push(vec![
                        t.into(),
                        km[0].into(),
                        km[1].into(),
                        layer.as_str().into(),
                        v[n][k].into(),
                        e[n][k].into(),
                    ]);
                }
            }
        }
        rows
    }

    pub fn npair_rows(&self) -> Vec<Vec<Cell>> {
        self.times
            .iter()
            .zip(&self.n_pair)
            .zip(&self.n_pair_err)
            .map(|((&t, &n), &e)| vec![t.into(), n.into(), e.into()])
            .collect()
    }

    pub fn cpm_rows(&self) -> Vec<Vec<Cell>> {
        let mut rows = Vec::new();
        for map in &self.correlations {
            for (o, v) in map.offsets.iter().zip(&map.values) {
                rows.push(vec![
                    map.t.into(),
                    map.layer.as_str().into(),
                    o[0].into(),
                    o[1].into(),
                    v.re.into(),
                    v.im.into(),
                ]);
            }
        }
        rows
    }

    /// Writes `nk_t.csv`, `npair_t.csv` and, when correlations were
    /// recorded, `cpm_t.csv` into `dir`.
    pub fn write_csvs(&self, dir: &Path) -> Result<()> {
        write_csv(&dir.join(SchemaId::NkT.file_name()), SchemaId::NkT, &self.nk_rows())?;
        write_csv(&dir.join(SchemaId::NpairT.file_name()), SchemaId::NpairT, &self.npair_rows())?;
        if !self.correlations.is_empty() {
            write_csv(&dir.join(SchemaId::CpmT.file_name()), SchemaId::CpmT, &self.cpm_rows())?;
        }
        Ok(())
    }
}

/// Mean and standard error of the mean from streaming sums.
pub fn mean_stderr(sum: f64, sum_sq: f64, n: f64) -> (f64, f64) {
    let mean = sum / n;
    if n < 2.0 {
        return (mean, 0.0);
    }
    let var = ((sum_sq - n * mean * mean) / (n - 1.0)).max(0.0);
    (mean, (var / n).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::{build_bilayer, k_grid, LatticeSpec};
    use ndarray::Array2;

    #[test]
    fn flat_distribution_from_identity() {
        let g = build_bilayer(LatticeSpec::periodic(5, 2.0).unwrap()).unwrap();
        let grid = k_grid(&g.spec);
        let sites: Vec<usize> = (0..25).collect();
        let ph = phase_table(&g, &grid, &sites);
        let corr = Array2::from_diag_elem(25, C64::new(0.3, 0.0));
        for v in momentum_distribution(corr.view(), &ph, 25.0) {
            assert!((v - 0.3).abs() < 1e-14);
        }
    }

    #[test]
    fn plane_wave_correlation_peaks_at_its_momentum() {
        let g = build_bilayer(LatticeSpec::periodic(6, 2.0).unwrap()).unwrap();
        let grid = k_grid(&g.spec);
        let sites: Vec<usize> = (0..36).collect();
        let ph = phase_table(&g, &grid, &sites);
        let k0 = grid.index_of(1, -2);
        // corr_ij = exp(-i k0 (r_i - r_j)) / N gives N_k = delta(k, k0)
        let mut corr = Array2::zeros((36, 36));
        for i in 0..36 {
            for j in 0..36 {
                corr[[i, j]] = ph[[k0, i]] * ph[[k0, j]].conj() / 36.0;
            }
        }
        let nk = momentum_distribution(corr.view(), &ph, 36.0);
        for (k, v) in nk.iter().enumerate() {
            let expect = if k == k0 { 1.0 } else { 0.0 };
            assert!((v - expect).abs() < 1e-12, "k={k} v={v}");
        }
    }

    #[test]
    fn correlation_bins() {
        let g = build_bilayer(LatticeSpec::open(3, 2.0).unwrap()).unwrap();
        let sites: Vec<usize> = (0..9).collect();
        let mut acc = CorrelationAccumulator::new(&g);
        let corr = Array2::from_shape_fn((9, 9), |(p, q)| C64::new(p as f64, q as f64));
        acc.add(corr.view(), &sites, &g, 1.0);
        let map = acc.finish(0.0, Layer::B);
        assert_eq!(map.offsets.len(), 24);
        assert!(map.get(0, 0).is_none());
        // only pair (8, 0) has offset (2, 2)
        assert_eq!(map.get(2, 2), Some(C64::new(8.0, 0.0)));
        let p = CorrelationAccumulator::new(&build_bilayer(LatticeSpec::periodic(4, 2.0).unwrap()).unwrap());
        assert_eq!(p.sums.len(), 16);
    }

    #[test]
    fn crossing_interpolates() {
        let t = [0.0, 1.0, 2.0];
        assert_eq!(first_crossing(&t, &[0.0, 1.0, 3.0], 2.0), Some(1.5));
        assert_eq!(first_crossing(&t, &[0.0, 1.0, 3.0], 5.0), None);
        assert_eq!(first_crossing(&t, &[0.0, 1.0, 3.0], 0.0), Some(0.0));
    }

    #[test]
    fn streaming_statistics() {
        let xs = [1.0, 2.0, 4.0, 7.0];
        let (m, e) = mean_stderr(xs.iter().sum(), xs.iter().map(|x| x * x).sum(), 4.0);
        assert!((m - 3.5).abs() < 1e-15);
        let var: f64 = xs.iter().map(|x| (x - 3.5f64).powi(2)).sum::<f64>() / 3.0;
        assert!((e - (var / 4.0).sqrt()).abs() < 1e-14);
    }
}
