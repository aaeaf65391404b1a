use midpoint_lab::config::{load_config, ExperimentKind, PotentialSpec, StartSpec};
use midpoint_lab::LabError;

const MINIMAL: &str = "\
[experiment]
name = normalization
[potential]
kind = gaussian
dim = 2
[grid]
t = 0.5
n = 8
[scheme]
name = M-LMC
";

#[test]
fn minimal_config_gets_defaults() {
    let cfg = load_config(MINIMAL).unwrap();
    assert_eq!(cfg.experiment, ExperimentKind::Normalization);
    assert_eq!(cfg.m, vec![8]);
    assert_eq!(cfg.n_paths, 100_000);
    assert_eq!(cfg.q, vec![2.0]);
    assert_eq!(cfg.hs, vec![0.0625]);
    assert_eq!(cfg.start, StartSpec::Gaussian { mean: 1.0, sd: 0.5 });
    assert_eq!(
        cfg.potential,
        PotentialSpec::Isotropic { dim: 2, scale: 1.0 }
    );
}

#[test]
fn step_bound_is_checked_at_load() {
    // beta = 4, h = 2/beta = 0.5 > 1/(beta q)
    let text = "\
[experiment]
name = kl-order-sweep
[potential]
kind = isotropic
dim = 2
scale = 4
[grid]
t = 1
h = 0.5
[scheme]
name = M-LMC
[run]
q = 2
";
    let err = load_config(text).unwrap_err();
    assert!(matches!(err, LabError::StepBound(_)), "{err}");
    assert!(err.to_string().contains("h <= 1/(beta*q)"), "{err}");

    let dm = text.replace("M-LMC", "DM-ULMC");
    let err = load_config(&dm).unwrap_err();
    assert!(err.to_string().contains("h <= 1/sqrt(beta*q)"), "{err}");
}

#[test]
fn duplicate_key_names_both_lines() {
    let text = MINIMAL.replace("n = 8\n", "n = 8\nn = 16\n");
    let err = load_config(&text).unwrap_err().to_string();
    assert!(err.starts_with("line 9:"), "{err}");
    assert!(err.contains("first set on line 8"), "{err}");
}

#[test]
fn unknown_keys_and_sections_are_errors() {
    let err = load_config(&MINIMAL.replace("n = 8", "n = 8\nwidth = 3")).unwrap_err();
    assert!(err.to_string().contains("width"), "{err}");
    let err = load_config(&format!("{MINIMAL}[plot]\ncolor = red\n")).unwrap_err();
    assert!(err.to_string().contains("plot"), "{err}");
}

#[test]
fn malformed_and_missing_values() {
    assert!(load_config(&MINIMAL.replace("dim = 2", "dim = two")).is_err());
    let err = load_config(&MINIMAL.replace("name = M-LMC\n", "")).unwrap_err();
    assert!(matches!(err, LabError::Missing(_)), "{err}");
    assert!(load_config(&MINIMAL.replace("n = 8", "h = 0.3")).is_err());
}

#[test]
fn underdamped_schemes_need_two_cells() {
    let text = MINIMAL.replace("M-LMC", "DM-ULMC").replace("n = 8", "n = 8\nm = 1");
    assert!(load_config(&text).is_err());
}

#[test]
fn per_scheme_inner_cells() {
    let text = MINIMAL
        .replace("M-LMC", "M-LMC, DM-ULMC")
        .replace("n = 8", "n = 8\nm = 8, 64");
    let cfg = load_config(&text).unwrap();
    assert_eq!(cfg.m_for(midpoint_core::scheme::Scheme::Mlmc), 8);
    assert_eq!(cfg.m_for(midpoint_core::scheme::Scheme::DmUlmc), 64);
    assert!(load_config(&text.replace("m = 8, 64", "m = 8, 64, 2")).is_err());
}

#[test]
fn hash_ignores_threads_and_output() {
    let a = load_config(MINIMAL).unwrap();
    let b = load_config(&format!("{MINIMAL}[run]\nthreads = 8\noutput = x.csv\n")).unwrap();
    let c = load_config(&format!("{MINIMAL}[run]\nseed = 3\n")).unwrap();
    assert_eq!(a.hash(), b.hash());
    assert_ne!(a.hash(), c.hash());
    assert_eq!(a.hash().len(), 16);
}
