//! Dormand-Prince 5(4) with dense output, advancing a batch of independent
//! trajectories with one shared step size.

use ndarray::{Array2, ArrayView2};
use serde::Serialize;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct IntegratorConfig {
    pub rtol: f64,
    pub atol: f64,
    pub initial_step: Option<f64>,
    pub max_steps: usize,
    /// Smallest step allowed, relative to `max(1, |t|)`.
    pub min_step: f64,
}

impl Default for IntegratorConfig {
    fn default() -> Self {
        IntegratorConfig { rtol: 1e-9, atol: 1e-12, initial_step: None, max_steps: 1_000_000, min_step: 1e-13 }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct IntegratorStats {
    pub accepted: usize,
    pub rejected: usize,
    pub evaluations: usize,
}

impl IntegratorStats {
    pub fn merge(&mut self, o: &IntegratorStats) {
        self.accepted += o.accepted;
        self.rejected += o.rejected;
        self.evaluations += o.evaluations;
    }
}

/// Right-hand side over a state matrix. Column `c` belongs to trajectory
/// `c % groups()`; the error norm is taken per trajectory.
pub trait BatchSystem {
    fn groups(&self) -> usize;
    fn rhs(&self, y: &Array2<f64>, dy: &mut Array2<f64>);
}

// the flow is autonomous, so stage times are not needed
const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const A71: f64 = 35.0 / 384.0;
const A73: f64 = 500.0 / 1113.0;
const A74: f64 = 125.0 / 192.0;
const A75: f64 = -2187.0 / 6784.0;
const A76: f64 = 11.0 / 84.0;
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;
const D1: f64 = -12715105075.0 / 11282082432.0;
const D3: f64 = 87487479700.0 / 32700410799.0;
const D4: f64 = -10690763975.0 / 1880347072.0;
const D5: f64 = 701980252875.0 / 199316789632.0;
const D6: f64 = -1453857185.0 / 822651844.0;
const D7: f64 = 69997945.0 / 29380423.0;

fn combine(out: &mut Array2<f64>, y: &Array2<f64>, h: f64, terms: &[(f64, &Array2<f64>)]) {
    let o = out.as_slice_mut().expect("standard layout");
    o.copy_from_slice(y.as_slice().expect("standard layout"));
    for (c, k) in terms {
        let c = h * c;
        for (a, b) in o.iter_mut().zip(k.as_slice().unwrap()) {
            *a += c * b;
        }
    }
}

/// Integrates from `t = 0` reporting the state at each of the non-decreasing,
/// non-negative `times`. `observe` receives the sample index and state.
pub fn integrate<S, F>(sys: &S, y0: Array2<f64>, times: &[f64], cfg: &IntegratorConfig, mut observe: F) -> Result<IntegratorStats>
where
    S: BatchSystem,
    F: FnMut(usize, ArrayView2<f64>) -> Result<()>,
{
    if cfg.rtol <= 0.0 || cfg.atol < 0.0 || !cfg.rtol.is_finite() {
        return Err(Error::InvalidParameter(format!("bad tolerances rtol={} atol={}", cfg.rtol, cfg.atol)));
    }
    if times.iter().any(|t| !t.is_finite() || *t < 0.0) || times.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::InvalidParameter("sample times must be finite, non-negative and non-decreasing".into()));
    }
    let groups = sys.groups();
    let shape = y0.raw_dim();
    let cols = shape[1];
    let mut stats = IntegratorStats::default();
    let mut y = y0.as_standard_layout().to_owned();
    let mut t = 0.0;
    let mut next = 0;
    while next < times.len() && times[next] <= 0.0 {
        observe(next, y.view())?;
        next += 1;
    }
    if next == times.len() {
        return Ok(stats);
    }
    let t_end = *times.last().unwrap();

    let mut k1 = Array2::zeros(shape);
    let mut k2 = Array2::zeros(shape);
    let mut k3 = Array2::zeros(shape);
    let mut k4 = Array2::zeros(shape);
    let mut k5 = Array2::zeros(shape);
    let mut k6 = Array2::zeros(shape);
    let mut k7 = Array2::zeros(shape);
    let mut stage = Array2::zeros(shape);
    let mut y1 = Array2::zeros(shape);
    let mut dense = Array2::zeros(shape);
    let mut errs = vec![0.0; groups];
    let mut counts = vec![0usize; groups];
    for c in 0..cols {
        counts[c % groups] += 1;
    }
    let counts: Vec<f64> = counts.iter().map(|&c| (c * y.nrows()).max(1) as f64).collect();

    let rms_per_group = |v: &Array2<f64>, scale_from: &Array2<f64>, errs: &mut Vec<f64>| {
        errs.iter_mut().for_each(|e| *e = 0.0);
        for (row_v, row_y) in v.outer_iter().zip(scale_from.outer_iter()) {
            for (c, (a, b)) in row_v.iter().zip(row_y.iter()).enumerate() {
                let sc = cfg.atol + cfg.rtol * b.abs();
                errs[c % groups] += (a / sc) * (a / sc);
            }
        }
        errs.iter().zip(&counts).map(|(e, n)| (e / n).sqrt()).fold(0.0, f64::max)
    };

    sys.rhs(&y, &mut k1);
    stats.evaluations += 1;
    let mut h = match cfg.initial_step {
        Some(h) if h > 0.0 => h,
        _ => {
            let d0 = rms_per_group(&y, &y, &mut errs);
            let d1 = rms_per_group(&k1, &y, &mut errs);
            if d0 < 1e-5 || d1 < 1e-5 { 1e-6 } else { 0.01 * d0 / d1 }
        }
    }
    .min(t_end);
    let mut facmax: f64 = 10.0;
    let mut steps = 0usize;

    while next < times.len() {
        if steps >= cfg.max_steps {
            return Err(Error::TooManySteps(cfg.max_steps));
        }
        steps += 1;
        if t + h > t_end {
            h = t_end - t;
        }
        if h < cfg.min_step * t.abs().max(1.0) {
            let worst = errs.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).map_or(0, |(i, _)| i);
            return Err(Error::StepUnderflow { time: t, trajectory: worst, step: h });
        }
        combine(&mut stage, &y, h, &[(A21, &k1)]);
        sys.rhs(&stage, &mut k2);
        combine(&mut stage, &y, h, &[(A31, &k1), (A32, &k2)]);
        sys.rhs(&stage, &mut k3);
        combine(&mut stage, &y, h, &[(A41, &k1), (A42, &k2), (A43, &k3)]);
        sys.rhs(&stage, &mut k4);
        combine(&mut stage, &y, h, &[(A51, &k1), (A52, &k2), (A53, &k3), (A54, &k4)]);
        sys.rhs(&stage, &mut k5);
        combine(&mut stage, &y, h, &[(A61, &k1), (A62, &k2), (A63, &k3), (A64, &k4), (A65, &k5)]);
        sys.rhs(&stage, &mut k6);
        combine(&mut y1, &y, h, &[(A71, &k1), (A73, &k3), (A74, &k4), (A75, &k5), (A76, &k6)]);
        sys.rhs(&y1, &mut k7);
        stats.evaluations += 6;

        // error estimate, scaled by max(|y|, |y1|)
        errs.iter_mut().for_each(|e| *e = 0.0);
        {
            let (ys, y1s) = (y.as_slice().unwrap(), y1.as_slice().unwrap());
            let ks = [&k1, &k3, &k4, &k5, &k6, &k7].map(|k| k.as_slice().unwrap());
            for idx in 0..ys.len() {
                let e = h * (E1 * ks[0][idx] + E3 * ks[1][idx] + E4 * ks[2][idx] + E5 * ks[3][idx] + E6 * ks[4][idx] + E7 * ks[5][idx]);
                let sc = cfg.atol + cfg.rtol * ys[idx].abs().max(y1s[idx].abs());
                errs[(idx % cols) % groups] += (e / sc) * (e / sc);
            }
        }
        let err = errs.iter().zip(&counts).map(|(e, n)| (e / n).sqrt()).fold(0.0, f64::max);
        if !err.is_finite() {
            h *= 0.2;
            stats.rejected += 1;
            facmax = 1.0;
            continue;
        }
        let fac = (0.9 * err.powf(-0.2)).clamp(0.2, facmax);
        if err <= 1.0 {
            let t_new = t + h;
            while next < times.len() && times[next] <= t_new + 1e-12 * t_new.max(1.0) {
                let theta = ((times[next] - t) / h).clamp(0.0, 1.0);
                if theta >= 1.0 {
                    observe(next, y1.view())?;
                } else {
                    let th1 = 1.0 - theta;
                    let ks = [&k1, &k3, &k4, &k5, &k6, &k7].map(|k| k.as_slice().unwrap());
                    let (ys, y1s) = (y.as_slice().unwrap(), y1.as_slice().unwrap());
                    for (idx, out) in dense.as_slice_mut().unwrap().iter_mut().enumerate() {
                        let ydiff = y1s[idx] - ys[idx];
                        let bspl = h * ks[0][idx] - ydiff;
                        let r4 = ydiff - h * ks[5][idx] - bspl;
                        let r5 = h
                            * (D1 * ks[0][idx] + D3 * ks[1][idx] + D4 * ks[2][idx] + D5 * ks[3][idx] + D6 * ks[4][idx] + D7 * ks[5][idx]);
                        *out = ys[idx] + theta * (ydiff + th1 * (bspl + theta * (r4 + th1 * r5)));
                    }
                    observe(next, dense.view())?;
                }
                next += 1;
            }
            std::mem::swap(&mut y, &mut y1);
            std::mem::swap(&mut k1, &mut k7);
            t = t_new;
            stats.accepted += 1;
            h *= fac;
            facmax = 10.0;
        } else {
            h *= fac;
            stats.rejected += 1;
            facmax = 1.0;
        }
    }
    Ok(stats)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    /// Harmonic oscillators, one per column pair of rows, with frequency per column.
    struct Oscillators(Vec<f64>);

    impl BatchSystem for Oscillators {
        fn groups(&self) -> usize {
            self.0.len()
        }
        fn rhs(&self, y: &Array2<f64>, dy: &mut Array2<f64>) {
            for (c, w) in self.0.iter().enumerate() {
                dy[[0, c]] = w * y[[1, c]];
                dy[[1, c]] = -w * y[[0, c]];
            }
        }
    }

    #[test]
    fn dense_output_tracks_exact_solution() {
        let sys = Oscillators(vec![1.0, 3.7]);
        let y0 = array![[0.0, 0.0], [1.0, 1.0]];
        let times: Vec<f64> = (0..=57).map(|i| i as f64 * 0.173).collect();
        let cfg = IntegratorConfig { rtol: 1e-11, atol: 1e-13, ..Default::default() };
        let mut worst: f64 = 0.0;
        let stats = integrate(&sys, y0, &times, &cfg, |n, y| {
            for (c, w) in sys.0.iter().enumerate() {
                worst = worst.max((y[[0, c]] - (w * times[n]).sin()).abs());
            }
            Ok(())
        })
        .unwrap();
        assert!(worst < 1e-8, "error {worst}");
        assert!(stats.accepted > 0 && stats.evaluations == 1 + 6 * (stats.accepted + stats.rejected));
    }

    #[test]
    fn tolerance_controls_error() {
        let sys = Oscillators(vec![2.0]);
        let run = |rtol: f64| {
            let mut e = 0.0;
            let cfg = IntegratorConfig { rtol, atol: rtol * 1e-3, ..Default::default() };
            integrate(&sys, array![[0.0], [1.0]], &[10.0], &cfg, |_, y| {
                e = (y[[0, 0]] - 20f64.sin()).abs();
                Ok(())
            })
            .unwrap();
            e
        };
        assert!(run(1e-10) < run(1e-6));
    }

    #[test]
    fn invalid_times_rejected() {
        let sys = Oscillators(vec![1.0]);
        let cfg = IntegratorConfig::default();
        assert!(integrate(&sys, array![[0.0], [1.0]], &[1.0, 0.5], &cfg, |_, _| Ok(())).is_err());
        assert!(integrate(&sys, array![[0.0], [1.0]], &[-1.0], &cfg, |_, _| Ok(())).is_err());
        let mut seen = Vec::new();
        integrate(&sys, array![[0.0], [1.0]], &[0.0, 0.0, 1.0, 1.0], &cfg, |n, _| {
            seen.push(n);
            Ok(())
        })
        .unwrap();
        assert_eq!(seen, vec![0, 1, 2, 3]);
    }

    #[test]
    fn step_underflow_is_reported() {
        struct Blowup;
        impl BatchSystem for Blowup {
            fn groups(&self) -> usize {
                1
            }
            fn rhs(&self, y: &Array2<f64>, dy: &mut Array2<f64>) {
                dy[[0, 0]] = y[[0, 0]] * y[[0, 0]];
            }
        }
        let r = integrate(&Blowup, array![[1.0]], &[2.0], &IntegratorConfig::default(), |_, _| Ok(()));
        assert!(matches!(r, Err(Error::StepUnderflow { .. }) | Err(Error::TooManySteps(_))));
    }
}
