//! Dipolar XXZ couplings between occupied sites.

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::io_schema::fmt_f64;
use crate::lattice::{BilayerGeometry, FillingRealization, Layer};

/// Layer bias, either as an energy or as a fraction of the bandwidth.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Bias {
    #[default]
    None,
    /// `h` in units of J.
    Field(f64),
    /// `x` with `h = x W + h0`.
    BandwidthFraction(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    /// Exchange constant J.
    pub exchange: f64,
    /// Dipole tilt from the layer normal towards +x, radians.
    pub theta0: f64,
    /// Ising anisotropy.
    pub eta: f64,
    pub bias: Bias,
}

impl ModelParams {
    pub fn new(theta0: f64, eta: f64) -> Result<Self> {
        let p = ModelParams { exchange: 1.0, theta0, eta, bias: Bias::None };
        p.validate()?;
        Ok(p)
    }

    pub fn with_bias(mut self, bias: Bias) -> Result<Self> {
        self.bias = bias;
        self.validate()?;
        Ok(self)
    }

    pub fn with_exchange(mut self, j: f64) -> Result<Self> {
        self.exchange = j;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.exchange > 0.0 && self.exchange.is_finite()) {
            return Err(Error::InvalidParameter(format!("J = {} must be positive", self.exchange)));
        }
        let tol = 1e-12;
        if !(self.theta0 >= -tol && self.theta0 <= std::f64::consts::FRAC_PI_2 + tol) {
            return Err(Error::InvalidParameter(format!("theta0 = {} outside [0, pi/2]", self.theta0)));
        }
        if !self.eta.is_finite() {
            return Err(Error::InvalidParameter("eta must be finite".into()));
        }
        match self.bias {
            Bias::Field(h) | Bias::BandwidthFraction(h) if !h.is_finite() => {
                Err(Error::InvalidParameter("bias must be finite".into()))
            }
            _ => Ok(()),
        }
    }

    pub fn dipole_axis(&self) -> [f64; 3] {
        [self.theta0.sin(), 0.0, self.theta0.cos()]
    }
}

/// `V(r) = J / |r|^3 (1 - 3 (d.r)^2 / |r|^2)`.
pub fn dipole_coupling(r: [f64; 3], params: &ModelParams) -> Result<f64> {
    let r2 = r[0] * r[0] + r[1] * r[1] + r[2] * r[2];
    if r2 == 0.0 {
        return Err(Error::ZeroDisplacement);
    }
    let d = params.dipole_axis();
    let dr = d[0] * r[0] + d[1] * r[1] + d[2] * r[2];
    Ok(params.exchange / (r2 * r2.sqrt()) * (1.0 - 3.0 * dr * dr / r2))
}

/// Coupling matrices restricted to occupied sites.
#[derive(Debug, Clone)]
pub struct CouplingMatrices {
    pub intra_a: Array2<f64>,
    pub intra_b: Array2<f64>,
    /// Rows index occupied A sites, columns occupied B sites.
    pub inter: Array2<f64>,
    pub sites_a: Vec<usize>,
    pub sites_b: Vec<usize>,
}

pub fn coupling_matrices(
    geom: &BilayerGeometry,
    fill: &FillingRealization,
    params: &ModelParams,
) -> Result<CouplingMatrices> {
    params.validate()?;
    let sites_a = fill.occupied_a();
    let sites_b = fill.occupied_b();
    if sites_a.is_empty() {
        return Err(Error::EmptyLayer("A"));
    }
    if sites_b.is_empty() {
        return Err(Error::EmptyLayer("B"));
    }
    let intra = |layer: Layer, sites: &[usize]| -> Result<Array2<f64>> {
        let n = sites.len();
        let mut m = Array2::zeros((n, n));
        for p in 0..n {
            for q in p + 1..n {
                let v = dipole_coupling(geom.displacement(layer, sites[p], layer, sites[q]), params)?;
                m[[p, q]] = v;
                m[[q, p]] = v;
            }
        }
        Ok(m)
    };
    let intra_a = intra(Layer::A, &sites_a)?;
    let intra_b = intra(Layer::B, &sites_b)?;
    let mut inter = Array2::zeros((sites_a.len(), sites_b.len()));
    for (p, &i) in sites_a.iter().enumerate() {
        for (q, &j) in sites_b.iter().enumerate() {
            inter[[p, q]] = dipole_coupling(geom.displacement(Layer::A, i, Layer::B, j), params)?;
        }
    }
    Ok(CouplingMatrices { intra_a, intra_b, inter, sites_a, sites_b })
}

impl CouplingMatrices {
    pub fn n_a(&self) -> usize {
        self.sites_a.len()
    }

    pub fn n_b(&self) -> usize {
        self.sites_b.len()
    }

    /// Symmetric coupling over all occupied sites, A block first.
    pub fn full(&self) -> Array2<f64> {
        let (na, nb) = (self.n_a(), self.n_b());
        let mut m = Array2::zeros((na + nb, na + nb));
        m.slice_mut(ndarray::s![..na, ..na]).assign(&self.intra_a);
        m.slice_mut(ndarray::s![na.., na..]).assign(&self.intra_b);
        m.slice_mut(ndarray::s![..na, na..]).assign(&self.inter);
        m.slice_mut(ndarray::s![na.., ..na]).assign(&self.inter.t());
        m
    }

    /// Sum of squared inter-layer couplings.
    pub fn inter_weight(&self) -> f64 {
        self.inter.iter().map(|v| v * v).sum()
    }

    /// Writes the three blocks as headerless CSV files `v_aa.csv`, `v_bb.csv`, `v_ab.csv`.
    pub fn write_csv(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        for (name, m) in [("v_aa.csv", &self.intra_a), ("v_bb.csv", &self.intra_b), ("v_ab.csv", &self.inter)] {
            let mut w = BufWriter::new(File::create(dir.join(name))?);
            for row in m.rows() {
                let line: Vec<String> = row.iter().map(|&v| fmt_f64(v)).collect();
                writeln!(w, "{}", line.join(","))?;
            }
            w.flush()?;
        }
        Ok(())
    }
}

/// Site-local diagonal of the linearized theory for each layer.
///
/// A site `i` receives `-eta (sum_j V^AA_ij - sum_j V^AB_ij) + h`, B site `j`
/// receives `-eta (sum_l V^BB_jl - sum_i V^AB_ij) + h`. On a full periodic
/// lattice this is the uniform shift `-eta (eps_0 - Omega_0) + h`.
#[derive(Debug, Clone)]
pub struct OnsiteShifts {
    pub a: Vec<f64>,
    pub b: Vec<f64>,
}

pub fn onsite_shifts(c: &CouplingMatrices, eta: f64, h: f64) -> OnsiteShifts {
    let inter_rows = c.inter.sum_axis(ndarray::Axis(1));
    let inter_cols = c.inter.sum_axis(ndarray::Axis(0));
    let a = c
        .intra_a
        .rows()
        .into_iter()
        .zip(inter_rows.iter())
        .map(|(row, &x)| -eta * (row.sum() - x) + h)
        .collect();
    let b = c
        .intra_b
        .rows()
        .into_iter()
        .zip(inter_cols.iter())
        .map(|(row, &x)| -eta * (row.sum() - x) + h)
        .collect();
    OnsiteShifts { a, b }
}

/// `W = max eps - min eps`.
pub fn bandwidth(eps: &[f64]) -> f64 {
    let max = eps.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = eps.iter().copied().fold(f64::INFINITY, f64::min);
    if eps.is_empty() {
        0.0
    } else {
        max - min
    }
}

/// Bias `h = x W + h0` with `h0` cancelling the unbiased `eps_tilde` at k = 0.
///
/// `eps0_tilde` is `eps_0 - eta (eps_0 - Omega_0)`, which equals `eps_0` at
/// `eta = 0`. Positive `x` raises `eps_tilde` at the zone centre.
pub fn bias_from_fraction(x: f64, eps: &[f64], eps0_tilde: f64) -> f64 {
    x * bandwidth(eps) - eps0_tilde
}
