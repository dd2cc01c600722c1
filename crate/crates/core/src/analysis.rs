//! Thermofield-double and Rindler-frame readouts of the squeezing parameter,
//! short-time fits and cross-solver comparison reports.
//!
//! All functions take the dimensionless squeezing parameter `r = |Omega| t`
//! (units with hbar = k_B = 1) or build it from `|Omega|` and `t`.

use ndarray::{Array1, Array2};
use ndarray_linalg::LeastSquaresSvd;
use serde::Serialize;
use std::path::Path;

use crate::error::{Error, Result};
use crate::io_schema::{write_json, JsonSchemaId};
use crate::observables::ObservableSeries;

pub fn squeezing_parameter(omega_abs: f64, t: f64) -> Result<f64> {
    if !(t > 0.0) || !t.is_finite() {
        return Err(Error::InvalidParameter(format!("evolution time must be positive, got {t}")));
    }
    if !(omega_abs > 0.0) || !omega_abs.is_finite() {
        return Err(Error::InvalidParameter(format!("|Omega| must be positive, got {omega_abs}")));
    }
    Ok(omega_abs * t)
}

/// `ln coth r` for `r > 0`, accurate at both ends.
pub fn log_coth(r: f64) -> f64 {
    // ln((1 + e) / (1 - e)) with e = exp(-2r); 1 - e loses digits as e -> 1
    let e = (-2.0 * r).exp();
    if e < 0.5 {
        2.0 * e.atanh()
    } else {
        e.ln_1p() - (-(-2.0 * r).exp_m1()).ln()
    }
}

/// `T = E / (2 ln coth r)`.
pub fn tfd_temperature_r(r: f64, energy: f64) -> f64 {
    energy / (2.0 * log_coth(r))
}

pub fn tfd_temperature(omega_abs: f64, t: f64, energy: f64) -> Result<f64> {
    if !(energy > 0.0) {
        return Err(Error::InvalidParameter(format!("mode energy must be positive, got {energy}")));
    }
    Ok(tfd_temperature_r(squeezing_parameter(omega_abs, t)?, energy))
}

/// `a = -pi omega c / ln tanh r`.
pub fn unruh_acceleration(omega_abs: f64, t: f64, omega_field: f64, c: f64) -> Result<f64> {
    if !(omega_field > 0.0) || !(c > 0.0) {
        return Err(Error::InvalidParameter("field frequency and c must be positive".into()));
    }
    let r = squeezing_parameter(omega_abs, t)?;
    Ok(std::f64::consts::PI * omega_field * c / log_coth(r))
}

/// Inverse of the Rindler relation: the `r` with `tanh r = exp(-pi omega c / a)`.
pub fn rindler_squeezing(a: f64, omega_field: f64, c: f64) -> Result<f64> {
    if !(a > 0.0) || !(omega_field > 0.0) || !(c > 0.0) {
        return Err(Error::InvalidParameter("acceleration, frequency and c must be positive".into()));
    }
    let q = std::f64::consts::PI * omega_field * c / a;
    // atanh(e^-q) = (1/2) ln coth(q/2)
    Ok(0.5 * log_coth(0.5 * q))
}

/// Fock amplitudes `tanh^n r / cosh r` of the two-mode squeezed vacuum.
#[derive(Debug, Clone, Serialize)]
pub struct ThermalWeights {
    pub amplitudes: Vec<f64>,
    /// Probability carried by `n >= m`, exactly `tanh^{2m} r`.
    pub tail: f64,
}

impl ThermalWeights {
    pub fn probabilities(&self) -> Vec<f64> {
        self.amplitudes.iter().map(|c| c * c).collect()
    }

    /// Truncated probability sum plus the tail.
    pub fn total(&self) -> f64 {
        self.probabilities().iter().sum::<f64>() + self.tail
    }
}

pub fn thermal_weights(r: f64, m: usize) -> ThermalWeights {
    let th = r.tanh();
    let ch = r.cosh();
    let amplitudes = (0..m as i32).map(|n| th.powi(n) / ch).collect();
    ThermalWeights { amplitudes, tail: th.powi(2 * m as i32) }
}

#[derive(Debug, Clone, Serialize)]
pub struct TfdReport {
    pub omega_abs: f64,
    pub t: f64,
    pub r: f64,
    pub energy: f64,
    pub t_eff: f64,
    pub thermal_weights: ThermalWeights,
}

pub fn tfd_report(omega_abs: f64, t: f64, energy: f64, m: usize) -> Result<TfdReport> {
    let r = squeezing_parameter(omega_abs, t)?;
    Ok(TfdReport {
        omega_abs,
        t,
        r,
        energy,
        t_eff: tfd_temperature(omega_abs, t, energy)?,
        thermal_weights: thermal_weights(r, m),
    })
}

/// Least-squares coefficients of `values ~ sum_p c_p t^p` over the listed powers.
pub fn fit_powers(times: &[f64], values: &[f64], powers: &[i32]) -> Result<Vec<f64>> {
    if times.len() != values.len() || times.len() < powers.len() || powers.is_empty() {
        return Err(Error::Mismatch(format!("{} samples for {} powers", times.len(), powers.len())));
    }
    let a = Array2::from_shape_fn((times.len(), powers.len()), |(i, j)| times[i].powi(powers[j]));
    let b = Array1::from(values.to_vec());
    let sol = a.least_squares(&b)?;
    Ok(sol.solution.to_vec())
}

/// `t^2` coefficient of a pair-number series, fitting `c1 t + c2 t^2`; the
/// linear term absorbs the zero-mean sampling noise of stochastic solvers.
pub fn short_time_coefficient(times: &[f64], n_pair: &[f64]) -> Result<f64> {
    Ok(fit_powers(times, n_pair, &[1, 2])?[1])
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CompareOptions {
    /// Regime I holds while the reference pair number stays below this fraction of `N_occ`.
    pub regime_fraction: f64,
    /// Modes are compared only once the reference population reaches this value.
    pub min_signal: f64,
    /// Peak sets contain modes with `N_k >= peak_fraction * max N_k`.
    pub peak_fraction: f64,
    /// Tracked mode; defaults to the reference maximum at the end of regime I.
    pub mode: Option<usize>,
}

impl Default for CompareOptions {
    fn default() -> Self {
        CompareOptions { regime_fraction: 0.02, min_signal: 0.05, peak_fraction: 0.5, mode: None }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Geometry {
    pub size: usize,
    pub modes: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct PairMetrics {
    pub reference: String,
    pub solver: String,
    /// Relative deviation of the tracked mode at each common time, absent
    /// outside regime I or below the signal floor.
    pub mode_deviation: Vec<Option<f64>>,
    pub max_mode_deviation: Option<f64>,
    pub n_pair_deviation: Vec<Option<f64>>,
    /// Jaccard overlap of the peak sets at the end of regime I.
    pub peak_overlap: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ComparisonReport {
    pub geometry: Geometry,
    pub times: Vec<f64>,
    pub regime_one_end: Option<f64>,
    pub mode: usize,
    pub k_mode: [f64; 2],
    pub pairs: Vec<PairMetrics>,
}

impl ComparisonReport {
    pub fn write_json(&self, path: &Path) -> Result<()> {
        write_json(path, self, JsonSchemaId::Comparison)
    }
}

/// Indices with `N_k >= fraction * max N_k`.
pub fn peak_set(nk: &[f64], fraction: f64) -> Vec<usize> {
    let max = nk.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !(max > 0.0) {
        return Vec::new();
    }
    (0..nk.len()).filter(|&k| nk[k] >= fraction * max).collect()
}

pub fn jaccard(a: &[usize], b: &[usize]) -> f64 {
    let inter = a.iter().filter(|x| b.contains(x)).count();
    let union = a.len() + b.len() - inter;
    if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    }
}

/// Compares each series against the first one on the reference time grid
/// restricted to the common range.
pub fn compare_solvers(series: &[(&str, &ObservableSeries)], opts: &CompareOptions) -> Result<ComparisonReport> {
    let Some(&(ref_name, reference)) = series.first() else {
        return Err(Error::Mismatch("no series to compare".into()));
    };
    for (name, s) in series {
        if s.grid.labels != reference.grid.labels {
            return Err(Error::Mismatch(format!("{name} uses a different momentum grid than {ref_name}")));
        }
        if s.times.is_empty() {
            return Err(Error::Mismatch(format!("{name} has no samples")));
        }
    }
    let lo = series.iter().map(|(_, s)| s.times[0]).fold(f64::NEG_INFINITY, f64::max);
    let hi = series.iter().map(|(_, s)| *s.times.last().unwrap()).fold(f64::INFINITY, f64::min);
    let times: Vec<f64> = reference.times.iter().cloned().filter(|&t| t >= lo - 1e-12 && t <= hi + 1e-12).collect();
    if times.is_empty() {
        return Err(Error::Mismatch("series share no time range".into()));
    }
    let aligned: Vec<ObservableSeries> = series.iter().map(|(_, s)| s.resample(&times)).collect::<Result<_>>()?;
    let r = &aligned[0];
    let threshold = opts.regime_fraction * r.n_occ;
    let in_regime = r.n_pair.iter().take_while(|&&n| n <= threshold).count();
    let regime_one_end = in_regime.checked_sub(1).map(|i| times[i]);
    let probe = in_regime.saturating_sub(1);
    let ref_nk = r.nk_mean(probe);
    let mode = match opts.mode {
        Some(m) if m < ref_nk.len() => m,
        Some(m) => return Err(Error::Mismatch(format!("mode {m} outside grid"))),
        None => (0..ref_nk.len()).max_by(|&a, &b| ref_nk[a].total_cmp(&ref_nk[b])).unwrap_or(0),
    };
    let ref_peaks = peak_set(&ref_nk, opts.peak_fraction);

    let rel = |a: f64, b: f64| (a - b).abs() / b.abs();
    let mut pairs = Vec::new();
    for ((name, _), s) in series.iter().zip(&aligned).skip(1) {
        let mut mode_deviation = Vec::with_capacity(times.len());
        let mut n_pair_deviation = Vec::with_capacity(times.len());
        for n in 0..times.len() {
            let reference_mode = 0.5 * (r.nk_a[n][mode] + r.nk_b[n][mode]);
            let other_mode = 0.5 * (s.nk_a[n][mode] + s.nk_b[n][mode]);
            let ok = n < in_regime;
            mode_deviation.push((ok && reference_mode >= opts.min_signal).then(|| rel(other_mode, reference_mode)));
            n_pair_deviation.push((ok && r.n_pair[n] > 0.0).then(|| rel(s.n_pair[n], r.n_pair[n])));
        }
        let max_mode_deviation = mode_deviation.iter().flatten().cloned().reduce(f64::max);
        let peak_overlap = jaccard(&ref_peaks, &peak_set(&s.nk_mean(probe), opts.peak_fraction));
        pairs.push(PairMetrics {
            reference: ref_name.to_string(),
            solver: name.to_string(),
            mode_deviation,
            max_mode_deviation,
            n_pair_deviation,
            peak_overlap,
        });
    }
    Ok(ComparisonReport {
        geometry: Geometry { size: reference.grid.size, modes: reference.grid.len() },
        times,
        regime_one_end,
        mode,
        k_mode: reference.grid.momenta[mode],
        pairs,
    })
}
