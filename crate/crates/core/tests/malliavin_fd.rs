use midpoint_core::girsanov::{analyze_path, path_drift, Detail, MalliavinBlocks, SolverOptions};
use midpoint_core::grid::{MidpointSchedule, NoisePath, TimeGrid};
use midpoint_core::potential::PotentialModel;
use midpoint_core::scheme::{Scheme, SchemeSpec};

fn drift(spec: &SchemeSpec, v: &PotentialModel, s0: &[f64], p: &NoisePath) -> Vec<f64> {
    let o = SolverOptions {
        tol: 1e-15,
        max_iter: 100,
    };
    path_drift(&analyze_path(spec, v, s0, p, o, Detail::Core).unwrap())
}

fn fd_check(spec: SchemeSpec, s0: &[f64]) {
    let v = PotentialModel::perturbed(vec![1.0, 0.6], 0.05, 2.0).unwrap();
    let grid = TimeGrid::new(0.5, 2, 4).unwrap();
    let path = NoisePath::sample(grid, 2, 11, 3).unwrap();
    let a = analyze_path(
        &spec,
        &v,
        s0,
        &path,
        SolverOptions {
            tol: 1e-15,
            max_iter: 100,
        },
        Detail::Full,
    )
    .unwrap();
    let dense = MalliavinBlocks::from_steps(&a.steps, true).unwrap().dense();
    let n = path.xi.len();
    let eps = 1e-5;
    let mut worst = 0.0f64;
    for j in 0..n {
        let mut pp = path.clone();
        pp.xi[j] += eps;
        let mut pm = path.clone();
        pm.xi[j] -= eps;
        let (fp, fm) = (drift(&spec, &v, s0, &pp), drift(&spec, &v, s0, &pm));
        for i in 0..n {
            let fd = (fp[i] - fm[i]) / (2.0 * eps);
            let an = dense[(i, j)];
            let err = (fd - an).abs();
            worst = worst.max(err / (1e-5 * an.abs()).max(1e-10));
        }
    }
    assert!(worst <= 1.0, "{} worst scaled error {worst}", spec.scheme);
}

#[test]
fn mlmc_malliavin_matches_finite_differences() {
    fd_check(SchemeSpec::deterministic(Scheme::Mlmc, 1.0), &[0.4, -0.3]);
}

#[test]
fn dmulmc_malliavin_matches_finite_differences() {
    fd_check(
        SchemeSpec::deterministic(Scheme::DmUlmc, 1.0),
        &[0.4, -0.3, 0.2, 0.5],
    );
}

#[test]
fn randomized_mlmc_matches_finite_differences() {
    let s = MidpointSchedule::RandomizedUniform { seed: 5, stream: 1 };
    fd_check(SchemeSpec::new(Scheme::Mlmc, s, 1.0), &[0.4, -0.3]);
}

#[test]
fn ulmc_malliavin_matches_finite_differences() {
    fd_check(
        SchemeSpec::deterministic(Scheme::Ulmc, 1.0),
        &[0.4, -0.3, 0.2, 0.5],
    );
}

#[test]
fn reduced_core_matches_dense_block() {
    use midpoint_core::linalg::log_abs_det;
    use nalgebra::DMatrix;
    let v = PotentialModel::perturbed(vec![1.0, 0.6], 0.05, 2.0).unwrap();
    let grid = TimeGrid::new(1.0, 3, 8).unwrap();
    let path = NoisePath::sample(grid, 2, 4, 4).unwrap();
    let spec = SchemeSpec::deterministic(Scheme::DmUlmc, 1.0);
    let a = analyze_path(
        &spec,
        &v,
        &[0.4, -0.3, 0.2, 0.5],
        &path,
        SolverOptions::default(),
        Detail::Diagonal,
    )
    .unwrap();
    for st in &a.steps {
        let dense = st.jac.dpsi_dxi.as_ref().unwrap();
        let core = &st.jac.core;
        assert!((dense.trace() - core.trace()).abs() < 1e-14);
        for q in [1.0, 2.0] {
            let n = dense.nrows();
            let (ld, _) = log_abs_det(DMatrix::identity(n, n) + dense * q);
            let (lc, _) = log_abs_det(DMatrix::identity(4, 4) + core * q);
            assert!((ld - lc).abs() < 1e-13);
        }
    }
}
