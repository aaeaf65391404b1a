use midpoint_core::divergence::{
    affine_step, estimate_kl, estimate_kl_control_variate, estimate_renyi, exact_path_kl_gaussian,
    gaussian_kl, mean_with_se, scheme_marginal_gaussian,
};
use midpoint_core::girsanov::log_weight;
use midpoint_core::grid::{NoisePath, TimeGrid};
use midpoint_core::local_error::{local_error_sweep, LocalErrorConfig, StartLaw};
use midpoint_core::potential::PotentialModel;
use midpoint_core::scheme::{simulate, Scheme, SchemeSpec};
use nalgebra::{DMatrix, DVector};

#[test]
fn identical_laws_have_zero_divergence() {
    let v = PotentialModel::anisotropic(vec![1.0, 3.0]).unwrap();
    let g = TimeGrid::new(0.5, 2, 1).unwrap();
    let spec = SchemeSpec::deterministic(Scheme::EmLd, 1.0);
    let lw: Vec<f64> = (0..100)
        .map(|s| {
            let p = NoisePath::sample(g, 2, 1, s).unwrap();
            log_weight(&spec, &v, &[0.2, 0.1], &p, 1.0).unwrap().log_weight
        })
        .collect();
    let kl = estimate_kl(&lw, 0);
    assert_eq!((kl.value, kl.se), (0.0, 0.0));
    for q in [1.5, 2.0, 4.0] {
        let r = estimate_renyi(&lw, 0, q).unwrap();
        assert_eq!((r.value, r.se), (0.0, 0.0));
    }
    let cv = estimate_kl_control_variate(&[0.0; 10], &[0.0; 10], 0);
    assert_eq!((cv.value, cv.se), (0.0, 0.0));
}

#[test]
fn renyi_is_monotone_and_tends_to_kl() {
    let lw: Vec<f64> = (0..500).map(|i| 0.3 * ((i as f64) * 0.37).sin() - 0.05).collect();
    let kl = estimate_kl(&lw, 0).value;
    let near = estimate_renyi(&lw, 0, 1.0 + 1e-7).unwrap().value;
    assert!((near - kl).abs() < 1e-6, "{near} vs {kl}");
    let mut prev = kl;
    for q in [1.5, 2.0, 3.0, 5.0, 10.0] {
        let r = estimate_renyi(&lw, 0, q).unwrap().value;
        assert!(r >= prev - 1e-15, "q = {q}");
        prev = r;
    }
}

#[test]
fn rejections_are_counted() {
    let lw = [0.1, f64::NAN, -0.2, f64::NEG_INFINITY];
    let kl = estimate_kl(&lw, 3);
    assert_eq!((kl.n_paths, kl.rejected), (2, 5));
    assert!(kl.unreliable);
}

#[test]
fn gaussian_kl_examples() {
    let z = DVector::zeros(2);
    let i = DMatrix::identity(2, 2);
    assert_eq!(gaussian_kl(&z, &i, &z, &i).unwrap(), 0.0);
    // scalar variances: 1/2 (s - 1 - ln s)
    let s = DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 1.0]));
    let kl = gaussian_kl(&z, &s, &z, &i).unwrap();
    assert!((kl - 0.5 * (1.0 - 2f64.ln())).abs() < 1e-15);
    // invariant under a joint rotation
    let (c, sn) = (0.6f64, 0.8f64);
    let r = DMatrix::from_row_slice(2, 2, &[c, -sn, sn, c]);
    let m = DVector::from_vec(vec![0.3, -1.0]);
    let s2 = DMatrix::from_row_slice(2, 2, &[1.5, 0.2, 0.2, 0.7]);
    let a = gaussian_kl(&m, &s, &z, &s2).unwrap();
    let b = gaussian_kl(&(&r * &m), &(&r * &s * r.transpose()), &z, &(&r * &s2 * r.transpose())).unwrap();
    assert!((a - b).abs() < 1e-14);
    let bad = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
    assert!(gaussian_kl(&z, &bad, &z, &i).is_err());
    assert!(gaussian_kl(&z, &i, &DVector::zeros(3), &DMatrix::identity(3, 3)).is_err());
}

#[test]
fn euler_covariance_grows_linearly_without_potential() {
    let v = PotentialModel::isotropic(2, 0.0).unwrap();
    let g = TimeGrid::new(0.9, 3, 1).unwrap();
    let spec = SchemeSpec::deterministic(Scheme::EmLd, 1.0);
    let (m, c) = scheme_marginal_gaussian(&spec, &v, &g, &DVector::zeros(2), &DMatrix::zeros(2, 2)).unwrap();
    assert_eq!(m.norm(), 0.0);
    assert!((c - DMatrix::identity(2, 2) * 1.8).norm() < 1e-14);
}

#[test]
fn scheme_marginal_matches_monte_carlo() {
    let v = PotentialModel::anisotropic(vec![0.5, 2.0]).unwrap().with_tilt(vec![0.4, 0.0]).unwrap();
    let g = TimeGrid::new(0.6, 3, 4).unwrap();
    for scheme in Scheme::ALL {
        let spec = SchemeSpec::deterministic(scheme, 1.5);
        let n = if scheme.is_underdamped() { 4 } else { 2 };
        let s0 = vec![0.5; n];
        let (mean, cov) =
            scheme_marginal_gaussian(&spec, &v, &g, &DVector::from_vec(s0.clone()), &DMatrix::zeros(n, n)).unwrap();
        let finals: Vec<Vec<f64>> = (0..4000)
            .map(|s| {
                let p = NoisePath::sample(g, 2, 21, s).unwrap();
                simulate(&spec, &v, &s0, &p).unwrap().final_state()
            })
            .collect();
        for k in 0..n {
            let col: Vec<f64> = finals.iter().map(|f| f[k]).collect();
            let (m, se) = mean_with_se(&col);
            assert!((m - mean[k]).abs() < 4.0 * se, "{scheme} mean {k}");
            let sq: Vec<f64> = col.iter().map(|x| (x - mean[k]).powi(2)).collect();
            let (var, se) = mean_with_se(&sq);
            assert!((var - cov[(k, k)]).abs() < 4.0 * se, "{scheme} var {k}");
        }
    }
}

#[test]
fn ulmc_step_map_is_contractive() {
    let v = PotentialModel::anisotropic(vec![0.5, 2.0]).unwrap();
    let g = TimeGrid::new(1.0, 4, 2).unwrap();
    let st = affine_step(&SchemeSpec::deterministic(Scheme::Ulmc, 2.0), &v, &g, 0).unwrap();
    let rho = st.a.complex_eigenvalues().iter().map(|z| z.norm()).fold(0.0, f64::max);
    assert!(rho < 1.0, "{rho}");
}

#[test]
fn one_step_path_kl_dominates_marginal_kl() {
    let v = PotentialModel::anisotropic(vec![1.0, 4.0]).unwrap();
    let spec = SchemeSpec::deterministic(Scheme::Mlmc, 1.0);
    let (m0, c0) = (DVector::from_vec(vec![1.0, -0.5]), DMatrix::identity(2, 2) * 0.3);
    for h in [0.2, 0.1] {
        let g = TimeGrid::new(h, 1, 8).unwrap();
        let path = exact_path_kl_gaussian(&spec, &v, &g, &m0, &c0).unwrap();
        let (ms, cs) = scheme_marginal_gaussian(&spec, &v, &g, &m0, &c0).unwrap();
        let fine = TimeGrid::new(h, 8, 1).unwrap();
        let refspec = SchemeSpec::deterministic(Scheme::EmLd, 1.0);
        let (mr, cr) = scheme_marginal_gaussian(&refspec, &v, &fine, &m0, &c0).unwrap();
        let marginal = gaussian_kl(&ms, &cs, &mr, &cr).unwrap();
        assert!(marginal > 0.0 && marginal <= path, "h {h}: {marginal} > {path}");
    }
}

#[test]
fn exact_path_kl_matches_estimator() {
    let v = PotentialModel::isotropic(1, 2.0).unwrap();
    let spec = SchemeSpec::deterministic(Scheme::Mlmc, 1.0);
    let g = TimeGrid::new(0.4, 2, 4).unwrap();
    let exact = exact_path_kl_gaussian(&spec, &v, &g, &DVector::from_vec(vec![0.7]), &DMatrix::zeros(1, 1)).unwrap();
    let mut cf = Vec::new();
    let mut en = Vec::new();
    for s in 0..5000 {
        let p = NoisePath::sample(g, 1, 4, s).unwrap();
        let w = log_weight(&spec, &v, &[0.7], &p, 1.0).unwrap();
        cf.push(w.log_cf_det);
        en.push(w.energy);
    }
    let est = estimate_kl_control_variate(&cf, &en, 0);
    assert!((est.value - exact).abs() < 4.0 * est.se, "{} +- {} vs {exact}", est.value, est.se);
}

#[test]
fn local_errors_vanish_for_free_euler() {
    let v = PotentialModel::isotropic(2, 0.0).unwrap();
    let cfg = LocalErrorConfig {
        spec: SchemeSpec::deterministic(Scheme::EmLd, 1.0),
        hs: vec![0.4, 0.2, 0.1, 0.05],
        start: StartLaw::Isotropic(1.0),
        n_paths: 50,
        seed: 1,
        threads: 1,
    };
    let r = local_error_sweep(&cfg, &v).unwrap();
    for p in &r.points {
        assert!(p.strong_x.value < 1e-28 && p.weak_x.value.abs() < 1e-14, "{p:?}");
    }
}

#[test]
fn reference_marginals() {
    use midpoint_core::divergence::reference_marginal_gaussian;
    use midpoint_core::underdamped::ud_reference;
    let v = PotentialModel::anisotropic(vec![0.5, 2.0]).unwrap().with_tilt(vec![0.3, -0.1]).unwrap();
    // Euler cells: one Euler step per cell on the fine grid
    let (m0, c0) = (DVector::from_vec(vec![1.0, -1.0]), DMatrix::identity(2, 2) * 0.2);
    let g = TimeGrid::new(0.6, 3, 4).unwrap();
    let (mr, cr) = reference_marginal_gaussian(&v, None, &g, &m0, &c0).unwrap();
    let fine = TimeGrid::new(0.6, 12, 1).unwrap();
    let em = SchemeSpec::deterministic(Scheme::EmLd, 1.0);
    let (me, ce) = scheme_marginal_gaussian(&em, &v, &fine, &m0, &c0).unwrap();
    assert!((mr - me).norm() < 1e-14 && (cr - ce).norm() < 1e-14);
    // kick-flow cells against Monte Carlo from a fixed start
    let (x0, p0) = ([0.5, 0.5], [0.2, -0.4]);
    let s0 = DVector::from_vec(vec![0.5, 0.5, 0.2, -0.4]);
    let (mu, cov) = reference_marginal_gaussian(&v, Some(1.5), &g, &s0, &DMatrix::zeros(4, 4)).unwrap();
    let finals: Vec<Vec<f64>> = (0..4000)
        .map(|s| {
            let p = NoisePath::sample(g, 2, 8, s).unwrap();
            let (x, pp) = ud_reference(&v, 1.5, &x0, &p0, &p).unwrap();
            [x, pp].concat()
        })
        .collect();
    for k in 0..4 {
        let col: Vec<f64> = finals.iter().map(|f| f[k]).collect();
        let (m, se) = mean_with_se(&col);
        assert!((m - mu[k]).abs() < 4.0 * se, "mean {k}");
        let sq: Vec<f64> = col.iter().map(|x| (x - mu[k]).powi(2)).collect();
        let (var, se) = mean_with_se(&sq);
        assert!((var - cov[(k, k)]).abs() < 4.0 * se, "var {k}");
    }
}
