use midpoint_core::expint::ExpIntegrals;
use midpoint_core::girsanov::{analyze_od_step, analyze_path, analyze_ud_step, path_drift, Detail, SolverOptions};
use midpoint_core::grid::{MidpointSchedule, NoisePath, TimeGrid};
use midpoint_core::overdamped::{em_ld_reference, mlmc_step};
use midpoint_core::potential::PotentialModel;
use midpoint_core::scheme::{simulate, Scheme, SchemeSpec};
use midpoint_core::underdamped::{
    dmulmc_marginal, solve_dmulmc_interpolation, ulmc_step, UdCoefficients, UdNoise, UdSetup,
};
use nalgebra::{DMatrix, DVector};

fn free(d: usize) -> PotentialModel {
    PotentialModel::isotropic(d, 0.0).unwrap()
}

fn start(spec: &SchemeSpec, d: usize) -> Vec<f64> {
    let n = if spec.scheme.is_underdamped() { 2 * d } else { d };
    (0..n).map(|i| 0.4 - 0.3 * i as f64).collect()
}

#[test]
fn free_overdamped_schemes_are_brownian() {
    let g = TimeGrid::new(1.0, 3, 4).unwrap();
    let p = NoisePath::sample(g, 2, 1, 0).unwrap();
    let b = p.brownian_partial_sums();
    let x0 = [0.5, -1.0];
    let r = em_ld_reference(&free(2), &x0, &p).unwrap();
    for c in 0..=g.cells() {
        for k in 0..2 {
            assert!((r[c * 2 + k] - x0[k] - 2f64.sqrt() * b[c * 2 + k]).abs() < 1e-14);
        }
    }
    let st = mlmc_step(&free(2), &x0, p.step(0), g.eta(), 2).unwrap();
    for k in 0..2 {
        assert!((st.x_plus[k] - x0[k] - 2f64.sqrt() * b[2 * 2 + k]).abs() < 1e-14);
        assert!((st.x[k] - x0[k] - 2f64.sqrt() * b[4 * 2 + k]).abs() < 1e-14);
    }
}

#[test]
fn free_underdamped_schemes_decay_momentum() {
    let e = ExpIntegrals::new(1.3).unwrap();
    let c = UdCoefficients::new(1.3, 0.2, 0.05, 0.1).unwrap();
    let (x0, p0) = ([1.0, 2.0], [0.5, -0.5]);
    let a = dmulmc_marginal(&free(2), &c, &x0, &p0, &UdNoise::zeros(2)).unwrap();
    let b = ulmc_step(&free(2), 1.3, 0.2, &x0, &p0, &UdNoise::zeros(2)).unwrap();
    for k in 0..2 {
        assert!((a.x[k] - x0[k] - e.e2_len(0.2) * p0[k]).abs() < 1e-15);
        assert!((a.p[k] - e.e1_len(0.2) * p0[k]).abs() < 1e-15);
        assert_eq!(a.x[k], b.x[k]);
        assert_eq!(a.p[k], b.p[k]);
    }
}

#[test]
fn ulmc_hand_example() {
    let v = PotentialModel::isotropic(1, 1.0).unwrap();
    let e = ExpIntegrals::new(1.0).unwrap();
    let st = ulmc_step(&v, 1.0, 0.1, &[1.0], &[0.0], &UdNoise::zeros(1)).unwrap();
    assert!((st.p[0] + e.e2_len(0.1)).abs() < 1e-15);
    assert!((st.x[0] - (1.0 - e.e3_len(0.1))).abs() < 1e-15);
}

/// Every scheme on a quadratic potential is affine in `(state0, xi)`.
#[test]
fn quadratic_schemes_superpose() {
    let v = PotentialModel::anisotropic(vec![0.7, 1.9]).unwrap().with_tilt(vec![0.3, -0.2]).unwrap();
    let g = TimeGrid::new(0.8, 4, 8).unwrap();
    let pa = NoisePath::sample(g, 2, 1, 0).unwrap();
    let pb = NoisePath::sample(g, 2, 1, 1).unwrap();
    let sum = NoisePath::from_values(g, 2, pa.xi.iter().zip(&pb.xi).map(|(a, b)| a + b).collect()).unwrap();
    let zero = NoisePath::zeros(g, 2);
    for scheme in Scheme::ALL {
        let spec = SchemeSpec::deterministic(scheme, 1.0);
        let s0 = start(&spec, 2);
        let z0 = vec![0.0; s0.len()];
        let f = |s: &[f64], p: &NoisePath| simulate(&spec, &v, s, p).unwrap().final_state();
        let (fab, fa, fb, f0) = (f(&s0, &sum), f(&s0, &pa), f(&z0, &pb), f(&z0, &zero));
        for k in 0..fab.len() {
            assert!((fab[k] - (fa[k] + fb[k] - f0[k])).abs() < 1e-12, "{scheme} component {k}");
        }
    }
}

/// Stacked linear system of the interpolation on a quadratic potential:
/// unknowns `X_1..X_m, P_1..P_m, l1, l2`, solved densely.
fn dense_interpolation(
    hdiag: &[f64],
    s: &UdSetup,
    x0: &[f64],
    p0: &[f64],
    xi: &[f64],
    gp: &[f64],
    gm: &[f64],
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let d = x0.len();
    let m = s.m;
    let n = 2 * m * d + 2 * d;
    let ix = |k: usize, i: usize| (k - 1) * d + i; // X_k, k >= 1
    let ip = |k: usize, i: usize| m * d + (k - 1) * d + i;
    let il = |j: usize, i: usize| 2 * m * d + j * d + i;
    let mut a = DMatrix::<f64>::zeros(n, n);
    let mut b = DVector::<f64>::zeros(n);
    let mut row = 0;
    for k in 0..m {
        for i in 0..d {
            // kick v = P_k - eta (H X_k - e1 l1 - e2 l2) + w xi
            // X_{k+1} - X_k - c2 v = 0 and P_{k+1} - c1 v = 0
            for (which, coef) in [(0, s.c2), (1, s.c1)] {
                if which == 0 {
                    a[(row, ix(k + 1, i))] = 1.0;
                } else {
                    a[(row, ip(k + 1, i))] = 1.0;
                }
                let mut rhs = coef * s.w * xi[k * d + i];
                // X_k terms: X_k (only in the position row) and -eta H X_k in v
                let xk_coef = if which == 0 { -1.0 } else { 0.0 } + coef * s.eta * hdiag[i];
                if k == 0 {
                    rhs -= xk_coef * x0[i];
                    rhs += coef * p0[i];
                } else {
                    a[(row, ix(k, i))] += xk_coef;
                    a[(row, ip(k, i))] -= coef;
                }
                a[(row, il(0, i))] -= coef * s.eta * s.e1[k];
                a[(row, il(1, i))] -= coef * s.eta * s.e2[k];
                b[row] = rhs;
                row += 1;
            }
        }
    }
    // sum eta e1 (H X_k - e1 l1 - e2 l2) = g2h gp, likewise with e2 and e3h gm
    for (j, (ker, target)) in [(&s.e1, s.coef.g2h), (&s.e2, s.coef.e3h)].into_iter().enumerate() {
        let tv = if j == 0 { gp } else { gm };
        for i in 0..d {
            let mut rhs = target * tv[i];
            for k in 0..m {
                let c = s.eta * ker[k] * hdiag[i];
                if k == 0 {
                    rhs -= c * x0[i];
                } else {
                    a[(row, ix(k, i))] += c;
                }
                a[(row, il(0, i))] -= s.eta * ker[k] * s.e1[k];
                a[(row, il(1, i))] -= s.eta * ker[k] * s.e2[k];
            }
            b[row] = rhs;
            row += 1;
        }
    }
    assert_eq!(row, n);
    let sol = a.lu().solve(&b).expect("nonsingular");
    let xs = (0..m * d).map(|r| sol[r]).collect();
    let l1 = (0..d).map(|i| sol[il(0, i)]).collect();
    let l2 = (0..d).map(|i| sol[il(1, i)]).collect();
    (xs, l1, l2)
}

#[test]
fn interpolation_matches_dense_solve_and_hits_marginal() {
    let spectrum = vec![0.8, 2.5];
    let v = PotentialModel::anisotropic(spectrum.clone()).unwrap();
    for (m, h) in [(2usize, 0.3), (8, 0.25), (16, 0.5)] {
        let g = TimeGrid::new(h, 1, m).unwrap();
        let path = NoisePath::sample(g, 2, 4, m as u64).unwrap();
        let (tm, tp) = MidpointSchedule::DeterministicUd.ud_indices(0, &g).unwrap();
        let s = UdSetup::new(1.0, &g, tm, tp).unwrap();
        let (x0, p0) = ([0.7, -0.4], [0.2, 0.9]);
        let noise = UdNoise::from_cells(&s, path.step(0), 2);
        let st = dmulmc_marginal(&v, &s.coef, &x0, &p0, &noise).unwrap();
        let it = solve_dmulmc_interpolation(&v, &s, &x0, &p0, path.step(0), &st, 1e-14, 200).unwrap();
        let gp = v.gradient(&st.x_plus).unwrap();
        let gm = v.gradient(&st.x_minus).unwrap();
        let (xs, l1, l2) = dense_interpolation(&spectrum, &s, &x0, &p0, path.step(0), &gp, &gm);
        for i in 0..2 {
            assert!((it.lambda1[i] - l1[i]).abs() < 1e-10 * l1[i].abs().max(1.0), "m={m}");
            assert!((it.lambda2[i] - l2[i]).abs() < 1e-10 * l2[i].abs().max(1.0), "m={m}");
        }
        for r in 0..m * 2 {
            assert!((it.x_hat[2 + r] - xs[r]).abs() < 1e-10, "m={m}");
        }
        // endpoint equals the marginal update
        for i in 0..2 {
            assert!((it.x_hat[m * 2 + i] - st.x[i]).abs() < 1e-10);
            assert!((it.p_hat[m * 2 + i] - st.p[i]).abs() < 1e-10);
        }
        // and the moment constraints hold
        for i in 0..2 {
            let c1: f64 = (0..m).map(|k| s.eta * s.e1[k] * it.g_hat[k * 2 + i]).sum();
            let c2: f64 = (0..m).map(|k| s.eta * s.e2[k] * it.g_hat[k * 2 + i]).sum();
            assert!((c1 - s.coef.g2h * gp[i]).abs() < 1e-10);
            assert!((c2 - s.coef.e3h * gm[i]).abs() < 1e-10);
        }
    }
}

#[test]
fn endpoint_matches_marginal_on_nonquadratic_potential() {
    let v = PotentialModel::perturbed(vec![1.0, 0.6], 0.3, 2.0).unwrap();
    let g = TimeGrid::new(0.2, 1, 16).unwrap();
    let path = NoisePath::sample(g, 2, 9, 0).unwrap();
    let s = UdSetup::new(2.0, &g, 5, 8).unwrap();
    let noise = UdNoise::from_cells(&s, path.step(0), 2);
    let (x0, p0) = ([0.3, 1.1], [-0.7, 0.2]);
    let st = dmulmc_marginal(&v, &s.coef, &x0, &p0, &noise).unwrap();
    let it = solve_dmulmc_interpolation(&v, &s, &x0, &p0, path.step(0), &st, 1e-13, 200).unwrap();
    for i in 0..2 {
        assert!((it.x_hat[16 * 2 + i] - st.x[i]).abs() < 1e-10);
        assert!((it.p_hat[16 * 2 + i] - st.p[i]).abs() < 1e-10);
    }
}

#[test]
fn large_step_interpolation_reports_step_bound() {
    let v = PotentialModel::isotropic(1, 25.0).unwrap();
    let g = TimeGrid::new(1.0, 1, 8).unwrap();
    let path = NoisePath::sample(g, 1, 1, 0).unwrap();
    let s = UdSetup::new(1.0, &g, 3, 4).unwrap();
    let noise = UdNoise::from_cells(&s, path.step(0), 1);
    let st = dmulmc_marginal(&v, &s.coef, &[1.0], &[0.0], &noise).unwrap();
    let err = solve_dmulmc_interpolation(&v, &s, &[1.0], &[0.0], path.step(0), &st, 1e-12, 100).unwrap_err();
    assert!(err.to_string().contains("1/sqrt(beta)"), "{err}");
}

#[test]
fn overdamped_drift_hand_example() {
    let v = PotentialModel::isotropic(1, 1.0).unwrap();
    let a = analyze_od_step(&v, &[1.0], &[0.0, 0.0], 0.1, 1, Detail::Core).unwrap();
    let c = 0.05f64.sqrt();
    assert!((a.psi[0] - c * (1.0 - 0.9)).abs() < 1e-15);
    assert!((a.psi[1] - c * (0.91 - 0.9)).abs() < 1e-15);
}

#[test]
fn drift_vanishes_for_constant_gradients() {
    // zero Hessian with a linear tilt: all gradients equal
    let v = PotentialModel::isotropic(2, 0.0).unwrap().with_tilt(vec![0.5, -1.5]).unwrap();
    let g = TimeGrid::new(0.5, 3, 8).unwrap();
    let path = NoisePath::sample(g, 2, 3, 3).unwrap();
    for scheme in Scheme::ALL {
        let spec = SchemeSpec::deterministic(scheme, 1.0);
        let a = analyze_path(&spec, &v, &start(&spec, 2), &path, SolverOptions::default(), Detail::Diagonal).unwrap();
        assert!(path_drift(&a).iter().all(|p| p.abs() < 1e-12), "{scheme}");
        for st in &a.steps {
            assert!(st.jac.dpsi_dxi.as_ref().unwrap().amax() == 0.0, "{scheme}");
        }
    }
}

#[test]
fn underdamped_energy_identity() {
    let v = PotentialModel::perturbed(vec![1.0, 2.0], 0.2, 1.0).unwrap();
    let g = TimeGrid::new(0.3, 1, 8).unwrap();
    let path = NoisePath::sample(g, 2, 5, 0).unwrap();
    let s = UdSetup::new(0.7, &g, 3, 4).unwrap();
    let (a, it, _) = analyze_ud_step(&v, &s, &[0.4, -0.3], &[0.1, 0.2], path.step(0), SolverOptions::default(), Detail::Core).unwrap();
    let energy: f64 = 0.5 * a.psi.iter().map(|p| p * p).sum::<f64>();
    let mut direct = 0.0;
    for k in 0..8 {
        for i in 0..2 {
            direct += (s.e1[k] * it.lambda1[i] + s.e2[k] * it.lambda2[i]).powi(2);
        }
    }
    direct *= s.eta / (4.0 * 0.7);
    assert!((energy - direct).abs() < 1e-15 * direct.max(1e-300) + 1e-300);
}

#[test]
fn underdamped_block_norm_is_second_order() {
    let v = PotentialModel::perturbed(vec![1.0, 0.5], 0.2, 1.0).unwrap();
    let mut norms = Vec::new();
    for h in [0.2, 0.1, 0.05] {
        let g = TimeGrid::new(h, 1, 4).unwrap();
        let path = NoisePath::sample(g, 2, 8, 1).unwrap();
        let s = UdSetup::new(1.0, &g, 1, 2).unwrap();
        let (a, _, _) = analyze_ud_step(&v, &s, &[0.5, -0.5], &[0.3, 0.1], path.step(0), SolverOptions::default(), Detail::Diagonal).unwrap();
        let b = a.jac.dpsi_dxi.unwrap();
        norms.push(b.singular_values().max());
    }
    assert!(norms[0] / norms[1] >= 2.0 && norms[1] / norms[2] >= 2.0, "{norms:?}");
}

#[test]
fn randomized_midpoint_schemes_count_queries() {
    let v = PotentialModel::isotropic(2, 1.0).unwrap();
    let g = TimeGrid::new(1.0, 10, 8).unwrap();
    let path = NoisePath::sample(g, 2, 1, 0).unwrap();
    let sched = MidpointSchedule::RandomizedUniform { seed: 2, stream: 0 };
    for (scheme, per) in [(Scheme::Mlmc, 2), (Scheme::DmUlmc, 3)] {
        let spec = SchemeSpec::new(scheme, sched, 1.0);
        let t = simulate(&spec, &v, &start(&spec, 2), &path).unwrap();
        // zero midpoints reuse the start gradient
        assert!(t.grad_queries() <= per * 10 && t.grad_queries() >= 10);
    }
    let spec = SchemeSpec::deterministic(Scheme::DmUlmc, 1.0);
    assert_eq!(simulate(&spec, &v, &start(&spec, 2), &path).unwrap().grad_queries(), 30);
}
