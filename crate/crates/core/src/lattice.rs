//! Bilayer geometry, Brillouin-zone grids and random filling.
//!
//! Layer A sits at `z = a_Z`, layer B at `z = 0`. Sites are indexed
//! row-major within a layer (`idx = y * L + x`) and layer A precedes layer B
//! wherever both appear in one vector.

use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::rng::{keyed_stream, uniform_at, Purpose};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Boundary {
    Periodic,
    Open,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Layer {
    A,
    B,
}

impl Layer {
    pub fn as_str(self) -> &'static str {
        match self {
            Layer::A => "A",
            Layer::B => "B",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatticeSpec {
    /// Sites per side.
    pub size: usize,
    /// In-plane spacing `a`.
    pub spacing: f64,
    /// Layer separation in units of `a`.
    pub layer_separation: f64,
    pub boundary: Boundary,
}

impl LatticeSpec {
    pub fn new(size: usize, layer_separation: f64, boundary: Boundary) -> Result<Self> {
        let spec = LatticeSpec { size, spacing: 1.0, layer_separation, boundary };
        spec.validate()?;
        Ok(spec)
    }

    pub fn periodic(size: usize, layer_separation: f64) -> Result<Self> {
        Self::new(size, layer_separation, Boundary::Periodic)
    }

    pub fn open(size: usize, layer_separation: f64) -> Result<Self> {
        Self::new(size, layer_separation, Boundary::Open)
    }

    pub fn validate(&self) -> Result<()> {
        if self.size < 2 {
            return Err(Error::InvalidLattice(format!("L = {} < 2", self.size)));
        }
        if !(self.layer_separation > 0.0 && self.layer_separation.is_finite()) {
            return Err(Error::InvalidLattice(format!("a_Z = {} must be positive", self.layer_separation)));
        }
        if !(self.spacing > 0.0 && self.spacing.is_finite()) {
            return Err(Error::InvalidLattice(format!("a = {} must be positive", self.spacing)));
        }
        Ok(())
    }

    pub fn sites_per_layer(&self) -> usize {
        self.size * self.size
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BilayerGeometry {
    pub spec: LatticeSpec,
    pub positions_a: Vec<[f64; 3]>,
    pub positions_b: Vec<[f64; 3]>,
}

pub fn build_bilayer(spec: LatticeSpec) -> Result<BilayerGeometry> {
    spec.validate()?;
    let l = spec.size;
    let a = spec.spacing;
    let z = spec.layer_separation * a;
    let grid = |height: f64| -> Vec<[f64; 3]> {
        (0..l * l).map(|i| [(i % l) as f64 * a, (i / l) as f64 * a, height]).collect()
    };
    Ok(BilayerGeometry { spec, positions_a: grid(z), positions_b: grid(0.0) })
}

impl BilayerGeometry {
    pub fn sites_per_layer(&self) -> usize {
        self.spec.sites_per_layer()
    }

    pub fn size(&self) -> usize {
        self.spec.size
    }

    /// Integer grid coordinates of in-layer site `idx`.
    pub fn coords(&self, idx: usize) -> (i64, i64) {
        let l = self.spec.size;
        ((idx % l) as i64, (idx / l) as i64)
    }

    /// In-plane grid offset from site `j` to site `i`, minimum image under
    /// periodic boundaries.
    pub fn grid_offset(&self, i: usize, j: usize) -> (i64, i64) {
        let (xi, yi) = self.coords(i);
        let (xj, yj) = self.coords(j);
        let (dx, dy) = (xi - xj, yi - yj);
        match self.spec.boundary {
            Boundary::Open => (dx, dy),
            Boundary::Periodic => {
                let l = self.spec.size as i64;
                (wrap(dx, l), wrap(dy, l))
            }
        }
    }

    /// Displacement `r_i - r_j` for `i` in layer `li` and `j` in layer `lj`.
    pub fn displacement(&self, li: Layer, i: usize, lj: Layer, j: usize) -> [f64; 3] {
        let (dx, dy) = self.grid_offset(i, j);
        let a = self.spec.spacing;
        let z = |l: Layer| if l == Layer::A { self.spec.layer_separation * a } else { 0.0 };
        [dx as f64 * a, dy as f64 * a, z(li) - z(lj)]
    }
}

/// Minimum-image wrap of an integer offset into `[-floor(L/2), ceil(L/2) - 1]`.
pub fn wrap(d: i64, l: i64) -> i64 {
    let half = l / 2;
    (d + half).rem_euclid(l) - half
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum FillingMode {
    /// Independent Bernoulli(f) occupation per site.
    #[default]
    Bernoulli,
    /// Exactly `round(f N)` occupied sites per layer, uniformly placed.
    FixedCount,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FillingRealization {
    pub mask_a: Vec<bool>,
    pub mask_b: Vec<bool>,
    pub fraction: f64,
    pub seed: u64,
    pub realization: u64,
    pub mode: FillingMode,
}

impl FillingRealization {
    pub fn full(geom: &BilayerGeometry) -> Self {
        let n = geom.sites_per_layer();
        FillingRealization {
            mask_a: vec![true; n],
            mask_b: vec![true; n],
            fraction: 1.0,
            seed: 0,
            realization: 0,
            mode: FillingMode::Bernoulli,
        }
    }

    pub fn occupied_a(&self) -> Vec<usize> {
        occupied(&self.mask_a)
    }

    pub fn occupied_b(&self) -> Vec<usize> {
        occupied(&self.mask_b)
    }

    pub fn occupied(&self, layer: Layer) -> Vec<usize> {
        match layer {
            Layer::A => self.occupied_a(),
            Layer::B => self.occupied_b(),
        }
    }

    pub fn is_full(&self) -> bool {
        self.mask_a.iter().chain(&self.mask_b).all(|&m| m)
    }
}

fn occupied(mask: &[bool]) -> Vec<usize> {
    mask.iter().enumerate().filter(|(_, &m)| m).map(|(i, _)| i).collect()
}

pub fn sample_filling(geom: &BilayerGeometry, f: f64, seed: u64) -> Result<FillingRealization> {
    sample_filling_with(geom, f, seed, 0, FillingMode::Bernoulli)
}

/// Filling for disorder realization `realization` of a run seeded by `seed`.
/// Each layer draws from its own stream, and each site from its own word.
pub fn sample_filling_with(
    geom: &BilayerGeometry,
    f: f64,
    seed: u64,
    realization: u64,
    mode: FillingMode,
) -> Result<FillingRealization> {
    if !(f > 0.0 && f <= 1.0) {
        return Err(Error::InvalidParameter(format!("filling fraction {f} outside (0, 1]")));
    }
    let n = geom.sites_per_layer();
    let layer_mask = |stream: u64| -> Vec<bool> {
        let mut rng = keyed_stream(seed, Purpose::Filling, realization, stream);
        let draws: Vec<f64> = (0..n as u64).map(|w| uniform_at(&mut rng, w)).collect();
        match mode {
            FillingMode::Bernoulli => draws.iter().map(|&u| u < f).collect(),
            FillingMode::FixedCount => {
                let count = (f * n as f64).round() as usize;
                let mut order: Vec<usize> = (0..n).collect();
                order.sort_by(|&i, &j| draws[i].total_cmp(&draws[j]).then(i.cmp(&j)));
                let mut mask = vec![false; n];
                for &i in &order[..count] {
                    mask[i] = true;
                }
                mask
            }
        }
    };
    Ok(FillingRealization {
        mask_a: layer_mask(0),
        mask_b: layer_mask(1),
        fraction: f,
        seed,
        realization,
        mode,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct KGrid {
    pub size: usize,
    /// Integer labels `(n_x, n_y)`, ordered row-major in `n_y` then `n_x`.
    pub labels: Vec<[i64; 2]>,
    /// Momenta `2 pi n / (L a)`.
    pub momenta: Vec<[f64; 2]>,
}

pub fn k_grid(spec: &LatticeSpec) -> KGrid {
    let l = spec.size as i64;
    let lo = -(l / 2);
    let scale = 2.0 * PI / (spec.size as f64 * spec.spacing);
    let mut labels = Vec::with_capacity((l * l) as usize);
    for ny in lo..lo + l {
        for nx in lo..lo + l {
            labels.push([nx, ny]);
        }
    }
    let momenta = labels.iter().map(|&[nx, ny]| [nx as f64 * scale, ny as f64 * scale]).collect();
    KGrid { size: spec.size, labels, momenta }
}

impl KGrid {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Position of label `(nx, ny)` after reduction into the grid's range.
    pub fn index_of(&self, nx: i64, ny: i64) -> usize {
        let l = self.size as i64;
        let lo = -(l / 2);
        let ix = (nx - lo).rem_euclid(l);
        let iy = (ny - lo).rem_euclid(l);
        (iy * l + ix) as usize
    }

    /// Index of `-k` (modulo reciprocal vectors) for entry `i`.
    pub fn neg_index(&self, i: usize) -> usize {
        let [nx, ny] = self.labels[i];
        self.index_of(-nx, -ny)
    }

    pub fn zero_index(&self) -> usize {
        self.index_of(0, 0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn small_geometry() {
        let g = build_bilayer(LatticeSpec::periodic(2, 2.0).unwrap()).unwrap();
        assert_eq!(g.positions_a.len(), 4);
        assert_eq!(g.positions_b.len(), 4);
        assert_eq!(g.positions_a[3], [1.0, 1.0, 2.0]);
        assert_eq!(g.displacement(Layer::A, 0, Layer::B, 0), [0.0, 0.0, 2.0]);
        let g33 = build_bilayer(LatticeSpec::periodic(33, 2.0).unwrap()).unwrap();
        assert_eq!(g33.sites_per_layer(), 1089);
    }

    #[test]
    fn invalid_specs_rejected() {
        assert!(LatticeSpec::periodic(1, 2.0).is_err());
        assert!(LatticeSpec::periodic(4, 0.0).is_err());
        assert!(LatticeSpec::periodic(4, -1.0).is_err());
    }

    #[test]
    fn wrap_range() {
        for l in 2..9 {
            let half = l / 2;
            for d in -3 * l..3 * l {
                let w = wrap(d, l);
                assert!(w >= -half && w < (l + 1) / 2, "l={l} d={d} w={w}");
                assert_eq!((w - d).rem_euclid(l), 0);
            }
        }
    }

    #[test]
    fn filling_full_and_deterministic() {
        let g = build_bilayer(LatticeSpec::periodic(8, 2.0).unwrap()).unwrap();
        let full = sample_filling(&g, 1.0, 3).unwrap();
        assert!(full.is_full());
        let a = sample_filling(&g, 0.4, 11).unwrap();
        let b = sample_filling(&g, 0.4, 11).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.mask_a, a.mask_b);
        assert!(sample_filling(&g, 0.0, 1).is_err());
        assert!(sample_filling(&g, 1.5, 1).is_err());
    }

    #[test]
    fn filling_mean_fraction() {
        let g = build_bilayer(LatticeSpec::periodic(10, 2.0).unwrap()).unwrap();
        let n_real = 400;
        let total: usize = (0..n_real)
            .map(|r| {
                let fill = sample_filling_with(&g, 0.25, 5, r, FillingMode::Bernoulli).unwrap();
                fill.occupied_a().len() + fill.occupied_b().len()
            })
            .sum();
        let mean = total as f64 / (2.0 * n_real as f64 * 100.0);
        // binomial stderr sqrt(0.25 * 0.75 / 80000) ~ 1.5e-3
        assert!((mean - 0.25).abs() < 6e-3, "mean fraction {mean}");
    }

    #[test]
    fn fixed_count_mode() {
        let g = build_bilayer(LatticeSpec::open(6, 2.0).unwrap()).unwrap();
        for r in 0..10 {
            let fill = sample_filling_with(&g, 0.5, 9, r, FillingMode::FixedCount).unwrap();
            assert_eq!(fill.occupied_a().len(), 18);
            assert_eq!(fill.occupied_b().len(), 18);
        }
    }

    #[test]
    fn kgrid_small() {
        let g = k_grid(&LatticeSpec::periodic(2, 2.0).unwrap());
        assert_eq!(g.len(), 4);
        let expect = [[-PI, -PI], [0.0, -PI], [-PI, 0.0], [0.0, 0.0]];
        for (k, e) in g.momenta.iter().zip(expect) {
            assert_eq!(*k, e);
        }
        let g33 = k_grid(&LatticeSpec::periodic(33, 2.0).unwrap());
        assert_eq!(g33.len(), 1089);
        assert_eq!(g33.momenta[g33.zero_index()], [0.0, 0.0]);
    }

    #[test]
    fn geometry_json_round_trip() {
        let g = build_bilayer(LatticeSpec::open(3, 1.5).unwrap()).unwrap();
        let fill = sample_filling(&g, 0.5, 2).unwrap();
        let gj = serde_json::to_string(&g).unwrap();
        let fj = serde_json::to_string(&fill).unwrap();
        let g2: BilayerGeometry = serde_json::from_str(&gj).unwrap();
        let f2: FillingRealization = serde_json::from_str(&fj).unwrap();
        assert_eq!(g2.positions_a, g.positions_a);
        assert_eq!(f2, fill);
    }

    proptest! {
        #[test]
        fn kgrid_closed_under_inversion(l in 2usize..40) {
            let g = k_grid(&LatticeSpec::periodic(l, 1.0).unwrap());
            let mut seen = vec![false; g.len()];
            for i in 0..g.len() {
                let j = g.neg_index(i);
                let [nx, ny] = g.labels[i];
                let [mx, my] = g.labels[j];
                let li = l as i64;
                prop_assert_eq!((nx + mx).rem_euclid(li), 0);
                prop_assert_eq!((ny + my).rem_euclid(li), 0);
                prop_assert_eq!(g.neg_index(j), i);
                seen[j] = true;
            }
            prop_assert!(seen.iter().all(|&s| s));
        }

        #[test]
        fn index_of_inverts_labels(l in 2usize..30) {
            let g = k_grid(&LatticeSpec::periodic(l, 1.0).unwrap());
            for (i, &[nx, ny]) in g.labels.iter().enumerate() {
                prop_assert_eq!(g.index_of(nx, ny), i);
                prop_assert_eq!(g.index_of(nx + l as i64, ny - 2 * l as i64), i);
            }
        }
    }
}
