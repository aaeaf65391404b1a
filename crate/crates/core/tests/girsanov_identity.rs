//! The reference discretization driven by `xi + psi` must reproduce the
//! scheme's interpolated path driven by `xi`.

use midpoint_core::girsanov::{analyze_path, log_weight, path_drift, Detail, SolverOptions};
use midpoint_core::grid::{MidpointSchedule, NoisePath, TimeGrid};
use midpoint_core::overdamped::em_ld_reference;
use midpoint_core::potential::PotentialModel;
use midpoint_core::scheme::{Scheme, SchemeSpec, Trajectory};
use midpoint_core::underdamped::{dmulmc_marginal, solve_dmulmc_interpolation, UdNoise, UdSetup};

#[test]
fn overdamped_shifted_reference_hits_scheme_states() {
    let v = PotentialModel::product(2, 1.0, -0.5).unwrap();
    let grid = TimeGrid::new(1.0, 4, 8).unwrap();
    let path = NoisePath::sample(grid, 2, 1, 2).unwrap();
    let spec = SchemeSpec::deterministic(Scheme::Mlmc, 1.0);
    let a = analyze_path(
        &spec,
        &v,
        &[0.3, 1.2],
        &path,
        SolverOptions::default(),
        Detail::Core,
    )
    .unwrap();
    let mut shifted = path.clone();
    for (x, p) in shifted.xi.iter_mut().zip(path_drift(&a)) {
        *x += p;
    }
    let r = em_ld_reference(&v, &[0.3, 1.2], &shifted).unwrap();
    let Trajectory::Od(t) = &a.trajectory else {
        panic!()
    };
    for k in 0..=grid.n_steps {
        for i in 0..2 {
            assert!((r[k * grid.m * 2 + i] - t.x[k * 2 + i]).abs() < 1e-12);
        }
    }
}

#[test]
fn underdamped_shifted_reference_hits_interpolation() {
    let v = PotentialModel::perturbed(vec![1.0, 0.5], 0.1, 1.0).unwrap();
    let grid = TimeGrid::new(0.4, 1, 8).unwrap();
    let path = NoisePath::sample(grid, 2, 9, 0).unwrap();
    let s = UdSetup::new(1.0, &grid, 3, 4).unwrap();
    let (x0, p0) = ([0.5, -0.2], [0.1, 0.7]);
    let st = dmulmc_marginal(
        &v,
        &s.coef,
        &x0,
        &p0,
        &UdNoise::from_cells(&s, path.step(0), 2),
    )
    .unwrap();
    let it = solve_dmulmc_interpolation(&v, &s, &x0, &p0, path.step(0), &st, 1e-14, 100).unwrap();
    let spec = SchemeSpec::deterministic(Scheme::DmUlmc, 1.0);
    let state0 = [x0[0], x0[1], p0[0], p0[1]];
    let a = analyze_path(
        &spec,
        &v,
        &state0,
        &path,
        SolverOptions::default(),
        Detail::Core,
    )
    .unwrap();
    let psi = path_drift(&a);
    // reference: kick with the true gradient and noise xi + psi
    let (mut x, mut p) = (x0.to_vec(), p0.to_vec());
    for k in 0..grid.m {
        let g = v.gradient(&x).unwrap();
        for i in 0..2 {
            assert!((x[i] - it.x_hat[k * 2 + i]).abs() < 1e-12);
            let kick = p[i] - s.eta * g[i] + s.w * (path.xi[k * 2 + i] + psi[k * 2 + i]);
            x[i] += s.c2 * kick;
            p[i] = s.c1 * kick;
        }
    }
    for i in 0..2 {
        assert!((x[i] - st.x[i]).abs() < 1e-10);
        assert!((p[i] - st.p[i]).abs() < 1e-10);
    }
}

#[test]
fn adapted_drift_has_unit_determinant() {
    let v = PotentialModel::perturbed(vec![1.0, 0.5, 0.8], 0.1, 1.0).unwrap();
    let grid = TimeGrid::new(1.0, 4, 8).unwrap();
    let spec = SchemeSpec::deterministic(Scheme::EmLd, 1.0);
    for seed in 0..20 {
        let path = NoisePath::sample(grid, 3, seed, 0).unwrap();
        let w = log_weight(&spec, &v, &[0.1, 0.2, 0.3], &path, 1.0).unwrap();
        assert_eq!(w.log_cf_det, 0.0);
        let a = analyze_path(
            &spec,
            &v,
            &[0.1, 0.2, 0.3],
            &path,
            SolverOptions::default(),
            Detail::Core,
        )
        .unwrap();
        let psi = path_drift(&a);
        let classical: f64 = -psi.iter().zip(&path.xi).map(|(a, b)| a * b).sum::<f64>()
            - 0.5 * psi.iter().map(|a| a * a).sum::<f64>();
        assert!((w.log_weight - classical).abs() < 1e-10);
    }
}

#[test]
fn randomized_schedule_runs() {
    let v = PotentialModel::isotropic(2, 1.0).unwrap();
    let grid = TimeGrid::new(0.5, 4, 8).unwrap();
    let s = MidpointSchedule::RandomizedUniform { seed: 1, stream: 2 };
    let spec = SchemeSpec::new(Scheme::DmUlmc, s, 1.0);
    let path = NoisePath::sample(grid, 2, 0, 0).unwrap();
    let w = log_weight(&spec, &v, &[0.0, 1.0, 0.0, 0.0], &path, 1.0).unwrap();
    assert!(w.log_weight.is_finite() && w.invertible);
}
