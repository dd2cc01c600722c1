//! Momentum-space spin-wave theory of the fully filled periodic bilayer.
//!
//! In the dilute limit each pair of modes `(a_k, b_{-k})` follows
//! `i d/dt (a, b^dag) = [[eps~, Omega], [-Omega^*, -eps~]] (a, b^dag)`, with
//! quasi-energy `xi = sqrt(eps~^2 - |Omega|^2)`. Modes with imaginary `xi`
//! grow exponentially.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::VecDeque;
use std::f64::consts::PI;
use std::path::Path;

use crate::couplings::{bandwidth, bias_from_fraction, dipole_coupling, Bias, ModelParams};
use crate::error::{Error, Result};
use crate::io_schema::{write_csv, write_json, Cell, JsonSchemaId, SchemaId};
use crate::lattice::{build_bilayer, k_grid, BilayerGeometry, Boundary, KGrid, Layer, LatticeSpec};
use crate::observables::ObservableSeries;
use crate::C64;

/// Couplings of A site 0 to every other site of the periodic cell, keyed by
/// the minimum-image grid offset of the partner.
struct CellKernel {
    intra: Vec<((i64, i64), f64)>,
    inter: Vec<((i64, i64), f64)>,
}

fn cell_kernel(geom: &BilayerGeometry, params: &ModelParams) -> Result<CellKernel> {
    if geom.spec.boundary != Boundary::Periodic {
        return Err(Error::RequiresPeriodic("lattice sums need periodic boundaries; use bogoliubov_real".into()));
    }
    let n = geom.sites_per_layer();
    let mut intra = Vec::with_capacity(n - 1);
    let mut inter = Vec::with_capacity(n);
    for j in 0..n {
        let off = geom.grid_offset(j, 0);
        if j != 0 {
            intra.push((off, dipole_coupling(geom.displacement(Layer::A, 0, Layer::A, j), params)?));
        }
        inter.push((off, dipole_coupling(geom.displacement(Layer::A, 0, Layer::B, j), params)?));
    }
    Ok(CellKernel { intra, inter })
}

fn lattice_sum(terms: &[((i64, i64), f64)], k: [f64; 2], spacing: f64) -> C64 {
    terms
        .iter()
        .map(|&((x, y), v)| C64::from_polar(v, -(k[0] * x as f64 + k[1] * y as f64) * spacing))
        .sum()
}

fn real_part_checked(z: C64, scale: f64) -> Result<f64> {
    if z.im.abs() > 1e-10 * scale.max(1.0) {
        return Err(Error::Mismatch(format!("intra-layer dispersion has imaginary part {:.3e}", z.im)));
    }
    Ok(z.re)
}

/// `eps_k = sum_{j != 0} V^AA_{0j} exp(-i k . r_j)` over the periodic cell.
pub fn epsilon_k(k: [f64; 2], geom: &BilayerGeometry, params: &ModelParams) -> Result<f64> {
    let kernel = cell_kernel(geom, params)?;
    let scale: f64 = kernel.intra.iter().map(|t| t.1.abs()).sum();
    real_part_checked(lattice_sum(&kernel.intra, k, geom.spec.spacing), scale)
}

/// `Omega_k = sum_j V^AB_{0j} exp(-i k . r_j)`, `r_j` being the in-plane
/// offset of B site `j` from A site 0.
pub fn omega_k(k: [f64; 2], geom: &BilayerGeometry, params: &ModelParams) -> Result<C64> {
    let kernel = cell_kernel(geom, params)?;
    Ok(lattice_sum(&kernel.inter, k, geom.spec.spacing))
}

/// Principal square root of `eps~^2 - |Omega|^2`; real and non-negative, or
/// imaginary with positive imaginary part.
pub fn xi_k(eps_tilde: f64, omega_abs: f64) -> C64 {
    let d = eps_tilde * eps_tilde - omega_abs * omega_abs;
    if d >= 0.0 {
        C64::new(d.sqrt(), 0.0)
    } else {
        C64::new(0.0, (-d).sqrt())
    }
}

/// `cos(xi t)` and `sin(xi t) / xi` for real `xi^2 = d`, both real on either branch.
fn propagator_terms(d: f64, t: f64) -> (f64, f64) {
    let x2 = d * t * t;
    if x2.abs() < 1e-6 {
        // series in x^2 = d t^2; truncation error below 1e-20 relative
        let c = 1.0 - x2 / 2.0 + x2 * x2 / 24.0 - x2 * x2 * x2 / 720.0;
        let s = t * (1.0 - x2 / 6.0 + x2 * x2 / 120.0 - x2 * x2 * x2 / 5040.0);
        (c, s)
    } else if d > 0.0 {
        let w = d.sqrt();
        ((w * t).cos(), (w * t).sin() / w)
    } else {
        let g = (-d).sqrt();
        ((g * t).cosh(), (g * t).sinh() / g)
    }
}

/// Closed-form propagator of the two-mode block, `exp(-i G t)` with
/// `G = [[eps~, Omega], [-Omega^*, -eps~]]`.
pub fn two_mode_propagator(eps_tilde: f64, omega: C64, t: f64) -> [[C64; 2]; 2] {
    let (c, s) = propagator_terms(eps_tilde * eps_tilde - omega.norm_sqr(), t);
    let i = C64::new(0.0, 1.0);
    [
        [C64::new(c, 0.0) - i * s * eps_tilde, -i * s * omega],
        [i * s * omega.conj(), C64::new(c, 0.0) + i * s * eps_tilde],
    ]
}

/// `N_k(t) = |Omega|^2 sin^2(xi t) / xi^2`, with the sinh form for imaginary
/// `xi` and the limit `|Omega|^2 t^2` at threshold.
pub fn population(eps_tilde: f64, omega_abs: f64, t: f64) -> f64 {
    let (_, s) = propagator_terms(eps_tilde * eps_tilde - omega_abs * omega_abs, t);
    omega_abs * omega_abs * s * s
}

/// Mode populations obtained through the symmetric and antisymmetric
/// combinations `S, A = e^{i alpha/2} (a +- b) / sqrt 2`, each of which is a
/// single squeezed mode.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SqueezedModes {
    pub symmetric: f64,
    pub antisymmetric: f64,
    pub layer_a: f64,
    pub layer_b: f64,
}

pub fn squeezed_modes(eps_tilde: f64, omega: C64, t: f64) -> SqueezedModes {
    let w = omega.norm();
    // i d/dt (S, S^dag) = [[eps~, +w], [-w, -eps~]] (S, S^dag); A with -w
    let us = two_mode_propagator(eps_tilde, C64::new(w, 0.0), t);
    let ua = two_mode_propagator(eps_tilde, C64::new(-w, 0.0), t);
    // a = e^{-i alpha/2} (S + A)/sqrt2 and b = e^{-i alpha/2} (S - A)/sqrt2, written in
    // terms of the vacuum operators (S0, A0, S0^dag, A0^dag)
    let phase = C64::from_polar(std::f64::consts::FRAC_1_SQRT_2, omega.arg() / 2.0);
    let creation = |sign: f64| [phase * us[0][1], phase * ua[0][1] * sign];
    let number = |c: [C64; 2]| c[0].norm_sqr() + c[1].norm_sqr();
    SqueezedModes {
        symmetric: us[0][1].norm_sqr(),
        antisymmetric: ua[0][1].norm_sqr(),
        layer_a: number(creation(1.0)),
        layer_b: number(creation(-1.0)),
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct DispersionField {
    pub grid: KGrid,
    pub eps: Vec<f64>,
    pub omega: Vec<C64>,
    pub eps_tilde: Vec<f64>,
    pub xi: Vec<C64>,
    pub eps0: f64,
    pub omega0: f64,
    /// Layer bias `h` applied.
    pub bias: f64,
    pub eta: f64,
}

/// Samples `eps_k`, `Omega_k`, `eps~_k` and `xi_k` on the full grid.
pub fn dispersion(geom: &BilayerGeometry, params: &ModelParams) -> Result<DispersionField> {
    params.validate()?;
    let kernel = cell_kernel(geom, params)?;
    let grid = k_grid(&geom.spec);
    let l = geom.size() as i64;
    let roots: Vec<C64> = (0..l).map(|m| C64::from_polar(1.0, -2.0 * PI * m as f64 / l as f64)).collect();
    let on_grid = |terms: &[((i64, i64), f64)], [nx, ny]: [i64; 2]| -> C64 {
        terms.iter().map(|&((x, y), v)| roots[(nx * x + ny * y).rem_euclid(l) as usize] * v).sum()
    };
    let scale: f64 = kernel.intra.iter().map(|t| t.1.abs()).sum();
    let sums: Vec<(C64, C64)> =
        grid.labels.par_iter().map(|&n| (on_grid(&kernel.intra, n), on_grid(&kernel.inter, n))).collect();
    let mut eps = Vec::with_capacity(grid.len());
    let mut omega = Vec::with_capacity(grid.len());
    for (e, o) in sums {
        eps.push(real_part_checked(e, scale)?);
        omega.push(o);
    }
    let z = grid.zero_index();
    let eps0 = eps[z];
    let omega0 = omega[z].re;
    let unbiased0 = eps0 - params.eta * (eps0 - omega0);
    let bias = match params.bias {
        Bias::None => 0.0,
        Bias::Field(h) => h,
        Bias::BandwidthFraction(x) => bias_from_fraction(x, &eps, unbiased0),
    };
    let shift = -params.eta * (eps0 - omega0) + bias;
    let eps_tilde: Vec<f64> = eps.iter().map(|e| e + shift).collect();
    let xi = eps_tilde.iter().zip(&omega).map(|(&e, o)| xi_k(e, o.norm())).collect();
    Ok(DispersionField { grid, eps, omega, eps_tilde, xi, eps0, omega0, bias, eta: params.eta })
}

/// The layer bias `h` that `params` implies for a lattice of this size and
/// separation. Bandwidth fractions refer to the fully filled periodic cell.
pub fn resolve_bias(spec: &LatticeSpec, params: &ModelParams) -> Result<f64> {
    match params.bias {
        Bias::None => Ok(0.0),
        Bias::Field(h) => Ok(h),
        Bias::BandwidthFraction(_) => {
            let periodic = LatticeSpec { boundary: Boundary::Periodic, ..*spec };
            Ok(dispersion(&build_bilayer(periodic)?, params)?.bias)
        }
    }
}

impl DispersionField {
    pub fn mode_population(&self, k: usize, t: f64) -> f64 {
        population(self.eps_tilde[k], self.omega[k].norm(), t)
    }

    pub fn populations(&self, t: f64) -> Vec<f64> {
        (0..self.grid.len()).map(|k| self.mode_population(k, t)).collect()
    }

    pub fn bandwidth(&self) -> f64 {
        bandwidth(&self.eps)
    }

    pub fn csv_rows(&self) -> Vec<Vec<Cell>> {
        (0..self.grid.len())
            .map(|k| {
                let m = self.grid.momenta[k];
                vec![
                    m[0].into(),
                    m[1].into(),
                    self.eps[k].into(),
                    self.omega[k].re.into(),
                    self.omega[k].im.into(),
                    self.eps_tilde[k].into(),
                    self.xi[k].re.into(),
                    self.xi[k].im.into(),
                ]
            })
            .collect()
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        write_csv(path, SchemaId::Dispersion, &self.csv_rows())
    }

    /// Closed-form time series; both layers carry the same distribution.
    pub fn series(&self, times: &[f64]) -> ObservableSeries {
        let n = self.grid.len() as f64;
        let mut s = ObservableSeries::new(self.grid.clone(), n, times.to_vec());
        for (i, &t) in times.iter().enumerate() {
            let p = self.populations(t);
            s.n_pair[i] = p.iter().sum();
            s.nk_a[i] = p.clone();
            s.nk_b[i] = p;
        }
        s.locate_t10();
        s
    }
}

/// Grid mean of the mode populations, the discretized excitation density per site.
pub fn excitation_density(field: &DispersionField, t: f64) -> f64 {
    field.populations(t).iter().sum::<f64>() / field.grid.len() as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Topology {
    Empty,
    Points,
    Ring,
    Arcs,
    Disks,
}

impl Topology {
    pub fn as_str(self) -> &'static str {
        match self {
            Topology::Empty => "empty",
            Topology::Points => "points",
            Topology::Ring => "ring",
            Topology::Arcs => "arcs",
            Topology::Disks => "disks",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct InstabilityTolerance {
    /// Growth rates at or below this count as stable.
    pub absolute: f64,
    /// Relative window below `Gamma` for the degenerate maximizer set.
    pub degeneracy: f64,
    /// Cells enter the shape classification when their growth rate exceeds
    /// this fraction of `Gamma`; weaker fringe cells only blur the shape.
    pub shape_fraction: f64,
}

impl Default for InstabilityTolerance {
    fn default() -> Self {
        InstabilityTolerance { absolute: 1e-9, degeneracy: 1e-3, shape_fraction: 0.15 }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Component {
    pub class: Topology,
    pub cells: usize,
    /// Periodic centroid in the zone `[-pi, pi)^2`.
    pub centroid: [f64; 2],
    /// Distance on the periodic zone from the centroid to `k = 0`.
    pub distance_to_center: f64,
    /// Distance on the periodic zone from the centroid to the corner `(pi, pi)`.
    pub distance_to_corner: f64,
    pub peak_rate: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct InstabilityReport {
    /// Grid indices with `Im xi > absolute`.
    pub unstable_set: Vec<usize>,
    pub gamma: f64,
    /// Momenta of the maximizers.
    pub k_star: Vec<[f64; 2]>,
    pub k_star_indices: Vec<usize>,
    /// `|Omega|` at each maximizer.
    pub omega_star: Vec<f64>,
    pub topology: Topology,
    pub component_count: usize,
    pub components: Vec<Component>,
    pub tolerance: InstabilityTolerance,
}

pub fn instability_report(field: &DispersionField, tol: &InstabilityTolerance) -> InstabilityReport {
    let rates: Vec<f64> = field.xi.iter().map(|x| x.im).collect();
    let unstable_set: Vec<usize> = (0..rates.len()).filter(|&k| rates[k] > tol.absolute).collect();
    let gamma = unstable_set.iter().map(|&k| rates[k]).fold(0.0, f64::max);
    let mut report = InstabilityReport {
        unstable_set,
        gamma,
        k_star: Vec::new(),
        k_star_indices: Vec::new(),
        omega_star: Vec::new(),
        topology: Topology::Empty,
        component_count: 0,
        components: Vec::new(),
        tolerance: *tol,
    };
    if report.unstable_set.is_empty() {
        report.gamma = 0.0;
        return report;
    }
    report.k_star_indices =
        report.unstable_set.iter().copied().filter(|&k| rates[k] >= (1.0 - tol.degeneracy) * gamma).collect();
    report.k_star = report.k_star_indices.iter().map(|&k| field.grid.momenta[k]).collect();
    report.omega_star = report.k_star_indices.iter().map(|&k| field.omega[k].norm()).collect();

    let cut = tol.absolute.max(tol.shape_fraction * gamma);
    let mask: Vec<bool> = rates.iter().map(|&r| r > cut).collect();
    let l = field.grid.size;
    report.components = flood_components(&field.grid, &mask)
        .into_iter()
        .map(|cells| describe_component(&cells, l, &rates))
        .collect();
    report.component_count = report.components.len();
    let classes: Vec<Topology> = report.components.iter().map(|c| c.class).collect();
    report.topology = if classes.contains(&Topology::Ring) {
        Topology::Ring
    } else if classes.iter().all(|&c| c == Topology::Points) {
        Topology::Points
    } else if classes.iter().all(|&c| c == Topology::Disks) {
        Topology::Disks
    } else {
        Topology::Arcs
    };
    report
}

/// 8-connected components on the periodic grid. Each cell carries its
/// unwrapped label so components crossing the zone edge stay contiguous.
fn flood_components(grid: &KGrid, mask: &[bool]) -> Vec<Vec<(usize, [i64; 2])>> {
    let mut seen = vec![false; mask.len()];
    let mut out = Vec::new();
    for start in 0..mask.len() {
        if !mask[start] || seen[start] {
            continue;
        }
        seen[start] = true;
        let mut cells = Vec::new();
        let mut queue = VecDeque::from([(start, grid.labels[start])]);
        while let Some((idx, lab)) = queue.pop_front() {
            cells.push((idx, lab));
            for dy in -1..=1 {
                for dx in -1..=1 {
                    if dx == 0 && dy == 0 {
                        continue;
                    }
                    let nl = [lab[0] + dx, lab[1] + dy];
                    let ni = grid.index_of(nl[0], nl[1]);
                    if mask[ni] && !seen[ni] {
                        seen[ni] = true;
                        queue.push_back((ni, nl));
                    }
                }
            }
        }
        out.push(cells);
    }
    out
}

fn periodic_distance(a: [f64; 2], b: [f64; 2]) -> f64 {
    let d = |x: f64, y: f64| {
        let r = (x - y).rem_euclid(2.0 * PI);
        r.min(2.0 * PI - r)
    };
    d(a[0], b[0]).hypot(d(a[1], b[1]))
}

fn describe_component(cells: &[(usize, [i64; 2])], l: usize, rates: &[f64]) -> Component {
    let dk = 2.0 * PI / l as f64;
    // circular mean per axis
    let circ = |axis: usize| {
        let (s, c) = cells.iter().fold((0.0, 0.0), |(s, c), (_, lab)| {
            let a = lab[axis] as f64 * dk;
            (s + a.sin(), c + a.cos())
        });
        f64::atan2(s, c)
    };
    let centroid = [circ(0), circ(1)];
    let peak_rate = cells.iter().map(|&(i, _)| rates[i]).fold(0.0, f64::max);

    let lab_wrapped: Vec<[i64; 2]> = cells
        .iter()
        .map(|&(_, lab)| {
            let w = |n: i64| crate::lattice::wrap(n, l as i64);
            [w(lab[0]), w(lab[1])]
        })
        .collect();
    let class = if cells.len() <= 2 {
        Topology::Points
    } else if winds_around_origin(&lab_wrapped) {
        Topology::Ring
    } else if is_disk(cells) {
        Topology::Disks
    } else {
        Topology::Arcs
    };
    Component {
        class,
        cells: cells.len(),
        centroid,
        distance_to_center: periodic_distance(centroid, [0.0, 0.0]),
        distance_to_corner: periodic_distance(centroid, [PI, PI]),
        peak_rate,
    }
}

/// True when the cells surround `k = 0`: the origin is excluded and no
/// angular gap exceeds one grid cell seen from the innermost cell.
fn winds_around_origin(labels: &[[i64; 2]]) -> bool {
    if labels.contains(&[0, 0]) {
        return false;
    }
    let mut angles: Vec<f64> = labels.iter().map(|l| (l[1] as f64).atan2(l[0] as f64)).collect();
    angles.sort_by(f64::total_cmp);
    let r_min = labels.iter().map(|l| (l[0] as f64).hypot(l[1] as f64)).fold(f64::INFINITY, f64::min);
    let delta = std::f64::consts::SQRT_2 / r_min;
    let mut gap = angles[0] + 2.0 * PI - angles[angles.len() - 1];
    for w in angles.windows(2) {
        gap = gap.max(w[1] - w[0]);
    }
    gap <= delta
}

/// Compact blob: at least two cells wide in both directions, filling more
/// than 60% of its bounding box, with no enclosed holes.
fn is_disk(cells: &[(usize, [i64; 2])]) -> bool {
    let xs = cells.iter().map(|c| c.1[0]);
    let ys = cells.iter().map(|c| c.1[1]);
    let (x0, x1) = (xs.clone().min().unwrap(), xs.max().unwrap());
    let (y0, y1) = (ys.clone().min().unwrap(), ys.max().unwrap());
    let (w, h) = (x1 - x0 + 1, y1 - y0 + 1);
    if w < 2 || h < 2 || (cells.len() as f64) <= 0.6 * (w * h) as f64 {
        return false;
    }
    // flood the complement from outside a one-cell margin
    let (pw, ph) = (w + 2, h + 2);
    let mut filled = vec![false; (pw * ph) as usize];
    for c in cells {
        filled[((c.1[1] - y0 + 1) * pw + (c.1[0] - x0 + 1)) as usize] = true;
    }
    let mut outside = vec![false; filled.len()];
    let mut queue = VecDeque::from([0usize]);
    outside[0] = true;
    while let Some(i) = queue.pop_front() {
        let (x, y) = ((i as i64) % pw, (i as i64) / pw);
        for (dx, dy) in [(1, 0), (-1, 0), (0, 1), (0, -1)] {
            let (nx, ny) = (x + dx, y + dy);
            if nx >= 0 && ny >= 0 && nx < pw && ny < ph {
                let j = (ny * pw + nx) as usize;
                if !filled[j] && !outside[j] {
                    outside[j] = true;
                    queue.push_back(j);
                }
            }
        }
    }
    filled.iter().zip(&outside).all(|(&f, &o)| f || o)
}

impl InstabilityReport {
    /// Contents of `report.json`.
    pub fn to_json(&self) -> serde_json::Value {
        serde_json::json!({
            "gamma": self.gamma,
            "k_star": self.k_star,
            "omega_star": self.omega_star,
            "topology": self.topology.as_str(),
            "component_count": self.component_count,
            "unstable_count": self.unstable_set.len(),
            "components": self.components,
            "tolerance": self.tolerance,
        })
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        write_json(path, &self.to_json(), JsonSchemaId::Report)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScanAxis {
    Theta0,
    BiasX,
    BiasH,
}

#[derive(Debug, Clone)]
pub struct ScanPoint {
    pub value: f64,
    pub field: DispersionField,
    pub report: InstabilityReport,
}

/// Dispersion and instability report at each value of a strictly monotone grid.
pub fn scan(
    geom: &BilayerGeometry,
    base: &ModelParams,
    axis: ScanAxis,
    values: &[f64],
    tol: &InstabilityTolerance,
) -> Result<Vec<ScanPoint>> {
    if values.is_empty() {
        return Err(Error::InvalidParameter("empty scan grid".into()));
    }
    let increasing = values.windows(2).all(|w| w[1] > w[0]);
    let decreasing = values.windows(2).all(|w| w[1] < w[0]);
    if !(increasing || decreasing) {
        return Err(Error::InvalidParameter("scan grid must be strictly monotone".into()));
    }
    values
        .par_iter()
        .map(|&v| {
            let mut p = *base;
            match axis {
                ScanAxis::Theta0 => p.theta0 = v,
                ScanAxis::BiasX => p.bias = Bias::BandwidthFraction(v),
                ScanAxis::BiasH => p.bias = Bias::Field(v),
            }
            let field = dispersion(geom, &p)?;
            let report = instability_report(&field, tol);
            Ok(ScanPoint { value: v, field, report })
        })
        .collect()
}

/// Rows of `summary.csv`: one per maximizer, or one empty row for a stable point.
pub fn summary_rows(points: &[ScanPoint]) -> Vec<Vec<Cell>> {
    let mut rows = Vec::new();
    for p in points {
        let r = &p.report;
        let base = |kx: Cell, ky: Cell| {
            vec![
                p.value.into(),
                r.gamma.into(),
                kx,
                ky,
                r.topology.as_str().into(),
                (r.component_count as i64).into(),
            ]
        };
        if r.k_star.is_empty() {
            rows.push(base(Cell::Empty, Cell::Empty));
        }
        for k in &r.k_star {
            rows.push(base(k[0].into(), k[1].into()));
        }
    }
    rows
}
