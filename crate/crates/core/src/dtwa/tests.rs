use super::*;
use crate::couplings::Bias;
use crate::ed_oracle::ed_system;
use crate::lattice::build_bilayer;
use proptest::prelude::*;
use std::f64::consts::PI;

fn stacked_pair() -> (BilayerGeometry, FillingRealization) {
    let g = build_bilayer(LatticeSpec::open(2, 1.0).unwrap()).unwrap();
    let mut fill = FillingRealization::full(&g);
    fill.mask_a = vec![true, false, false, false];
    fill.mask_b = vec![true, false, false, false];
    (g, fill)
}

fn tight() -> IntegratorConfig {
    IntegratorConfig { rtol: 1e-12, atol: 1e-14, ..Default::default() }
}

#[test]
fn initial_ensemble_invariants() {
    let g = build_bilayer(LatticeSpec::periodic(3, 2.0).unwrap()).unwrap();
    let fill = FillingRealization::full(&g);
    let e = sample_initial(&fill, 4000, 11).unwrap();
    assert_eq!(e.n_traj(), 4000);
    let mut mx = 0.0;
    for traj in &e.spins {
        for (p, s) in traj.iter().enumerate() {
            assert_eq!(s[2], if p < 9 { 0.5 } else { -0.5 });
            assert!(s[0].abs() == 0.5 && s[1].abs() == 0.5);
        }
        mx += traj[0][0];
    }
    // mean of a fair +-1/2 draw: stderr 0.5 / sqrt(n)
    assert!((mx / 4000.0).abs() < 3.0 * 0.5 / 4000f64.sqrt() + 1e-3);
    let again = sample_initial(&fill, 4000, 11).unwrap();
    assert_eq!(e.spins, again.spins);
    assert_ne!(e.spins, sample_initial(&fill, 4000, 12).unwrap().spins);
    assert!(sample_initial(&fill, 0, 1).is_err());
}

#[test]
fn polarized_state_is_fixed_point() {
    let g = build_bilayer(LatticeSpec::periodic(3, 2.0).unwrap()).unwrap();
    let fill = FillingRealization::full(&g);
    let p = ModelParams::new(0.4, 0.7).unwrap().with_bias(Bias::Field(0.3)).unwrap();
    let sys = SpinSystem::build(&g, &fill, &p).unwrap();
    let mut e = sample_initial(&fill, 2, 0).unwrap();
    for traj in &mut e.spins {
        for s in traj.iter_mut() {
            s[0] = 0.0;
            s[1] = 0.0;
        }
    }
    let (out, _) = evolve(&e, &sys, &[0.0, 3.0], &IntegratorConfig::default()).unwrap();
    assert_eq!(out[1].spins, e.spins);
}

#[test]
fn two_spin_closed_form() {
    // with s_A = (1, 1, 1)/2 and s_B = (-1, 1, -1)/2 the flow keeps zero
    // energy and reduces to w' = V (w^2 - 3) for w = s^z_A - s^z_B
    let (g, fill) = stacked_pair();
    let p = ModelParams::new(0.3, 0.0).unwrap();
    let sys = SpinSystem::build(&g, &fill, &p).unwrap();
    let v = sys.coupling[[0, 1]];
    let ens = SpinEnsemble { n_a: 1, n_b: 1, seed: 0, t: 0.0, spins: vec![vec![[0.5, 0.5, 0.5], [-0.5, 0.5, -0.5]]] };
    let times: Vec<f64> = (0..=30).map(|i| i as f64 * 0.1).collect();
    let (out, _) = evolve(&ens, &sys, &times, &tight()).unwrap();
    let r3 = 3f64.sqrt();
    for e in &out {
        let w = -r3 * (r3 * v * e.t - (1.0 / r3).atanh()).tanh();
        let s = &e.spins[0];
        assert!((s[0][2] - 0.5 * w).abs() < 1e-8, "t={} got {} want {}", e.t, s[0][2], 0.5 * w);
        assert!((s[1][2] + 0.5 * w).abs() < 1e-8);
    }
}

#[test]
fn conservation_laws() {
    let g = build_bilayer(LatticeSpec::periodic(3, 1.5).unwrap()).unwrap();
    let fill = FillingRealization::full(&g);
    let p = ModelParams::new(1.0, 0.6).unwrap().with_bias(Bias::Field(0.2)).unwrap();
    let sys = SpinSystem::build(&g, &fill, &p).unwrap();
    let e = sample_initial(&fill, 12, 3).unwrap();
    let (out, _) = evolve(&e, &sys, &[0.0, 5.0, 10.0], &IntegratorConfig::default()).unwrap();
    let n = sys.n_spins() as f64;
    for (traj0, traj) in e.spins.iter().zip(&out[2].spins) {
        for s in traj {
            assert!((s.iter().map(|c| c * c).sum::<f64>().sqrt() - 0.75f64.sqrt()).abs() < 1e-7);
        }
        let z0: f64 = traj0.iter().map(|s| s[2]).sum();
        let z1: f64 = traj.iter().map(|s| s[2]).sum();
        assert!((z0 - z1).abs() < 1e-7);
        assert!((sys.energy(traj0) - sys.energy(traj)).abs() < 1e-6 * n);
    }
}

#[test]
fn zero_at_start_and_sum_rule() {
    let g = build_bilayer(LatticeSpec::periodic(4, 2.0).unwrap()).unwrap();
    let fill = FillingRealization::full(&g);
    let e = sample_initial(&fill, 200, 5).unwrap();
    // zero in the mean, with sampling noise only in the off-diagonal part
    let nk = structure_factor(&e, &g, &fill).unwrap();
    for (v, err) in nk.a.iter().zip(&nk.a_err).chain(nk.b.iter().zip(&nk.b_err)) {
        assert!(v.abs() <= 4.0 * err + 1e-12);
    }
    let [ca, cb] = real_space_correlations(&e, &g, &fill).unwrap();
    // each pair product is +-1/2 or +-i/2 with sampling stderr ~ 0.5 / sqrt(n pairs)
    assert!(ca.values.iter().chain(&cb.values).all(|v| v.norm() < 0.1));

    let sys = SpinSystem::build(&g, &fill, &ModelParams::new(0.0, 0.0).unwrap()).unwrap();
    let (out, _) = evolve(&e, &sys, &[0.8], &IntegratorConfig::default()).unwrap();
    let nk = structure_factor(&out[0], &g, &fill).unwrap();
    let excit: f64 = out[0].spins.iter().map(|t| t[16..].iter().map(|s| 0.5 + s[2]).sum::<f64>()).sum::<f64>() / 200.0;
    let sum: f64 = nk.b.iter().sum::<f64>() / 16.0;
    assert!((sum - excit / 16.0).abs() < 1e-12);
    let [ca, cb] = real_space_correlations(&out[0], &g, &fill).unwrap();
    for m in [&ca, &cb] {
        for (o, v) in m.offsets.iter().zip(&m.values) {
            let back = m.get(wrap(-o[0], 4), wrap(-o[1], 4)).unwrap();
            assert!((v.norm() - back.norm()).abs() < 1e-12);
        }
    }
}

fn wrap(d: i64, l: i64) -> i64 {
    crate::lattice::wrap(d, l)
}

#[test]
fn pair_number_tracks_exact_dynamics() {
    let g = build_bilayer(LatticeSpec::open(2, 2.0).unwrap()).unwrap();
    let fill = FillingRealization::full(&g);
    let p = ModelParams::new(3.0 * PI / 8.0, 0.0).unwrap();
    let times = [0.0, 0.25, 0.5];
    let ed = ed_system(&g, &fill, &p).unwrap().series(&g, &times).unwrap();
    let mut cfg = DtwaConfig::new(g.spec, p, times.to_vec());
    cfg.seed = 21;
    let run = run_experiment(&cfg).unwrap();
    for n in 1..times.len() {
        let rel = (run.series.n_pair[n] - ed.n_pair[n]).abs() / ed.n_pair[n];
        assert!(rel < 0.1, "t={} dtwa {} exact {}", times[n], run.series.n_pair[n], ed.n_pair[n]);
    }
}

#[test]
fn polarized_layer_develops_classical_structure() {
    // Decoupled layers: the exact state never changes, but the transverse
    // noise of the phase points precesses nonlinearly and builds spurious
    // momentum structure while keeping the excitation count fixed.
    let g = build_bilayer(LatticeSpec::open(2, 50.0).unwrap()).unwrap();
    let p = ModelParams::new(3.0 * PI / 8.0, 0.0).unwrap();
    let mut cfg = DtwaConfig::new(g.spec, p, vec![0.0, 0.5]);
    cfg.n_traj = 20_000;
    let run = run_experiment(&cfg).unwrap();
    let s = &run.series;
    assert!(s.n_pair[1].abs() < 1e-6);
    let worst = s.nk_b[1].iter().zip(&s.nk_b_err[1]).map(|(v, e)| v.abs() / e).fold(0.0, f64::max);
    assert!(worst > 5.0, "largest deviation {worst} stderr");
}

#[test]
fn short_time_law() {
    let g = build_bilayer(LatticeSpec::open(2, 2.0).unwrap()).unwrap();
    let fill = FillingRealization::full(&g);
    let p = ModelParams::new(3.0 * PI / 8.0, 0.0).unwrap();
    let w = coupling_matrices(&g, &fill, &p).unwrap().inter_weight();
    let times: Vec<f64> = (1..=10).map(|i| 0.005 * i as f64).collect();
    let mut cfg = DtwaConfig::new(g.spec, p, times.clone());
    cfg.n_traj = 20_000;
    let run = run_experiment(&cfg).unwrap();
    // each trajectory carries a zero-mean term linear in t, so fit both
    let (mut s22, mut s33, mut s44, mut sy2, mut sy3) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for (t, y) in times.iter().zip(&run.series.n_pair) {
        s22 += t * t;
        s33 += t.powi(3);
        s44 += t.powi(4);
        sy2 += y * t;
        sy3 += y * t * t;
    }
    let coef = (s22 * sy3 - s33 * sy2) / (s22 * s44 - s33 * s33);
    assert!((coef - w).abs() < 0.05 * w, "coef {coef} vs {w}");
}

#[test]
fn spectral_and_direct_correlations_agree() {
    let spec = LatticeSpec::periodic(4, 2.0).unwrap();
    let p = ModelParams::new(0.6, 0.3).unwrap();
    let mut cfg = DtwaConfig::new(spec, p, vec![0.0, 0.7]);
    cfg.n_traj = 300;
    let spectral = run_experiment(&cfg).unwrap();
    let g = build_bilayer(spec).unwrap();
    let fill = FillingRealization::full(&g);
    let sys = SpinSystem::build(&g, &fill, &p).unwrap();
    let e = sample_initial(&fill, 300, 0).unwrap();
    let (out, _) = evolve(&e, &sys, &[0.7], &cfg.integrator).unwrap();
    let direct = real_space_correlations(&out[0], &g, &fill).unwrap();
    for (layer, m) in direct.iter().enumerate() {
        let s = &spectral.series.correlations[2 + layer];
        assert_eq!(s.layer, m.layer);
        assert_eq!(s.offsets, m.offsets);
        for (a, b) in s.values.iter().zip(&m.values) {
            assert!((a - b).norm() < 1e-9, "{a} vs {b}");
        }
    }
    assert!(spectral.series.correlations[0].values.iter().all(|v| v.norm() < 0.1));
}

#[test]
fn results_do_not_depend_on_thread_count() {
    let mut cfg = DtwaConfig::new(LatticeSpec::open(3, 2.0).unwrap(), ModelParams::new(1.1, 0.2).unwrap(), vec![0.0, 0.5, 1.0]);
    cfg.n_traj = 100;
    cfg.batch_size = 16;
    cfg.filling = 0.7;
    cfg.n_realizations = 2;
    let run_with = |threads| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| run_experiment(&cfg).unwrap())
    };
    let (a, b) = (run_with(1), run_with(3));
    assert_eq!(a.series.nk_a, b.series.nk_a);
    assert_eq!(a.series.nk_b_err, b.series.nk_b_err);
    assert_eq!(a.series.n_pair, b.series.n_pair);
    assert_eq!(a.stats, b.stats);
    assert_eq!(a.n_samples, 200);
    assert!(!a.series.correlations.is_empty());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]
    #[test]
    fn pairing_and_transverse_stats(th in 0.0f64..1.5, az in 1.5f64..3.0, seed in 0u64..1000) {
        let mut cfg = DtwaConfig::new(LatticeSpec::periodic(3, az).unwrap(), ModelParams::new(th, 0.0).unwrap(), vec![0.0, 0.6]);
        cfg.n_traj = 400;
        cfg.seed = seed;
        cfg.correlations = false;
        let run = run_experiment(&cfg).unwrap();
        let s = &run.series;
        prop_assert_eq!(s.n_pair[0], 0.0);
        for [ma, ea, mb, eb] in &run.transverse {
            prop_assert!(ma.abs() <= 4.0 * ea + 1e-12 && mb.abs() <= 4.0 * eb + 1e-12);
        }
        // total excitation counts of both layers agree per trajectory
        let sa: f64 = s.nk_a[1].iter().sum();
        let sb: f64 = s.nk_b[1].iter().sum();
        prop_assert!((sa - sb).abs() < 1e-8 * (1.0 + sb));
    }
}

