//! End-to-end runs of every integral-criterion kind, including the affine
//! tensor product and the cone-supported variants in one and two
//! dimensions.

use momdet::criteria::{integral_criterion, CriterionSpec, DeterminacyOutcome};
use momdet::measure::{Cone, Measure1D, MeasureSpec};
use momdet::parse_expression;
use momdet::quad::QuadSettings;
use momdet::weight::WeightSpec;

fn settings() -> QuadSettings {
    QuadSettings::default()
}

#[test]
fn tensor_affine_on_gaussian_product() {
    let s = settings();
    let spec = MeasureSpec::standard_normal(2);
    // a shear keeps the integrand non-radial; each factor carries rho(s) = s
    let crit = CriterionSpec::TensorAffine {
        matrix: vec![vec![1.0, 0.5], vec![0.0, 1.0]],
        offset: vec![0.25, -0.5],
        factors: vec![
            (2.0, parse_expression("x1", 1).unwrap()),
            (2.0, parse_expression("x1", 1).unwrap()),
        ],
    };
    let v = integral_criterion(&spec, &crit, None, &s).unwrap();
    assert_eq!(v.outcome, DeterminacyOutcome::SufficientDeterminate);
    assert!(v.density_in_lp);
}

#[test]
fn tensor_affine_rejects_decreasing_rho() {
    let s = settings();
    let spec = MeasureSpec::standard_normal(1);
    let crit = CriterionSpec::TensorAffine {
        matrix: vec![vec![1.0]],
        offset: vec![0.0],
        factors: vec![(2.0, parse_expression("1/x1", 1).unwrap())],
    };
    assert!(integral_criterion(&spec, &crit, None, &s).is_err());
}

#[test]
fn stieltjes_weight_on_exponential() {
    let s = settings();
    let spec = MeasureSpec::Exponential1D { rate: 1.0 };
    let cone = Cone::standard(1);
    let crit = CriterionSpec::StieltjesWeight { weight: WeightSpec::exp_decay(1.0).unwrap() };
    let v = integral_criterion(&spec, &crit, Some(&cone), &s).unwrap();
    assert_eq!(v.outcome, DeterminacyOutcome::SufficientCDeterminate);
    assert!(!v.density_in_lp);
}

#[test]
fn stieltjes_tensor_on_gamma_product() {
    let s = settings();
    let spec = MeasureSpec::ProductOf1D {
        factors: vec![
            Measure1D::Gamma { shape: 2.0, scale: 1.0 },
            Measure1D::Exponential { rate: 1.0 },
        ],
    };
    let cone = Cone::standard(2);
    let crit = CriterionSpec::StieltjesTensor {
        factors: vec![
            (1.0, parse_expression("x1", 1).unwrap()),
            (1.0, parse_expression("x1", 1).unwrap()),
        ],
    };
    let v = integral_criterion(&spec, &crit, Some(&cone), &s).unwrap();
    assert_eq!(v.outcome, DeterminacyOutcome::SufficientCDeterminate);
}

#[test]
fn stieltjes_repeated_log_on_exponential() {
    let s = settings();
    let spec = MeasureSpec::Exponential1D { rate: 1.0 };
    let cone = Cone::standard(1);
    // p = (1, 0): integrand exp(||x||^{3/2} / (a0 sqrt(||x||))) = exp(||x||/a0)
    // with a0 = 2, integrable against e^{-x}
    let crit = CriterionSpec::StieltjesRepeatedLog {
        a: vec![2.0, 1.0],
        p: vec![1.0, 0.0],
        radius: 4.0,
    };
    let v = integral_criterion(&spec, &crit, Some(&cone), &s).unwrap();
    assert_eq!(v.outcome, DeterminacyOutcome::SufficientCDeterminate);

    // with a0 = 0.5 the integrand exp(2 ||x||) dominates e^{-x}: not met
    let crit = CriterionSpec::StieltjesRepeatedLog {
        a: vec![0.5, 1.0],
        p: vec![1.0, 0.0],
        radius: 4.0,
    };
    let v = integral_criterion(&spec, &crit, Some(&cone), &s).unwrap();
    assert_eq!(v.outcome, DeterminacyOutcome::CriterionNotMet);

    // p_j0 > 1 is a hypothesis violation, not a verdict
    let crit = CriterionSpec::StieltjesRepeatedLog {
        a: vec![1.0, 1.0],
        p: vec![2.0, 0.0],
        radius: 4.0,
    };
    assert!(integral_criterion(&spec, &crit, Some(&cone), &s).is_err());
}

#[test]
fn stieltjes_radial_on_gamma_product_2d() {
    let s = settings();
    let spec = MeasureSpec::ProductOf1D {
        factors: vec![
            Measure1D::Gamma { shape: 2.0, scale: 1.0 },
            Measure1D::Gamma { shape: 2.0, scale: 1.0 },
        ],
    };
    let cone = Cone::standard(2);
    let crit = CriterionSpec::StieltjesRadial { weight: WeightSpec::exp_decay(1.0).unwrap() };
    let v = integral_criterion(&spec, &crit, Some(&cone), &s).unwrap();
    assert_eq!(v.outcome, DeterminacyOutcome::SufficientCDeterminate);
}

#[test]
fn stieltjes_kinds_demand_cone_support() {
    let s = settings();
    let spec = MeasureSpec::standard_normal(1);
    let cone = Cone::standard(1);
    let crit = CriterionSpec::StieltjesRadial { weight: WeightSpec::exp_decay(1.0).unwrap() };
    assert!(matches!(
        integral_criterion(&spec, &crit, Some(&cone), &s),
        Err(momdet::Error::ConeMismatch(_))
    ));
}

#[test]
fn stieltjes_weight_requires_dual_basis_match() {
    let s = settings();
    // a skew cone: the dual basis is not the standard one, so a weight
    // quasi-analytic only w.r.t. the standard basis cannot certify
    let basis = momdet::measure::Basis::new(vec![vec![1.0, 0.0], vec![1.0, 1.0]]).unwrap();
    let cone = Cone::new(basis).unwrap();
    let spec = MeasureSpec::DensityExpr {
        density: parse_expression("exp(-x1-x2)", 2).unwrap(),
        support: momdet::measure::SupportDescriptor {
            region: momdet::measure::SupportRegion::Cone { cone: cone.clone() },
            contains_origin: None,
            discrete_unbounded: None,
        },
        ln_normalization: Some(0.0),
    };
    let tensor_weight = WeightSpec::Tensor {
        factors: vec![WeightSpec::exp_decay(1.0).unwrap(), WeightSpec::exp_decay(1.0).unwrap()],
    };
    let crit = CriterionSpec::StieltjesWeight { weight: tensor_weight };
    let v = integral_criterion(&spec, &crit, Some(&cone), &s).unwrap();
    // the basis mismatch forbids a sufficient verdict regardless of the tail
    assert_ne!(v.outcome, DeterminacyOutcome::SufficientCDeterminate);

    // an all-bases weight on the same cone is fine
    let crit = CriterionSpec::StieltjesWeight { weight: WeightSpec::exp_decay(1.0).unwrap() };
    let v = integral_criterion(&spec, &crit, Some(&cone), &s).unwrap();
    assert!(matches!(
        v.outcome,
        DeterminacyOutcome::SufficientCDeterminate | DeterminacyOutcome::Inconclusive
    ));
}
