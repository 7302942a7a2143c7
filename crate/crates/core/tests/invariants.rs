//! Cross-module invariants: stride stability of the series classifier,
//! consistency between the weight-reciprocal criterion and the Carleman
//! test, and verdict stability as the horizon grows.

use momdet::criteria::{
    classify_terms, extended_carleman_check, integral_criterion, CarlemanMode, CriterionSpec,
    DeterminacyOutcome, SeriesOutcome,
};
use momdet::measure::MeasureSpec;
use momdet::moments::MomentEngine;
use momdet::quad::QuadSettings;
use momdet::weight::{QABasis, WeightEval, WeightSpec};

fn settings() -> QuadSettings {
    QuadSettings::default()
}

// For a nonincreasing positive sequence a(m), the classifier must reach the
// same outcome on the strided subsequences a(km), k = 1, 2, 3.
#[test]
fn stride_stability_of_series_classifier() {
    let s = settings();
    let cases: Vec<MeasureSpec> = vec![
        MeasureSpec::standard_normal(1),
        MeasureSpec::LogNormal1D { location: 0.0, scale: 1.0 },
        MeasureSpec::Gamma1D { shape: 2.0, scale: 1.0 },
    ];
    for spec in &cases {
        let engine = MomentEngine::new(spec, None, &s);
        // a(m) = t(m)^{-1/m} is nonincreasing for probability measures
        let ln_a = |m: u32| -> f64 {
            let t = engine.absolute(0, m as f64);
            -t.value.ln_abs / m as f64
        };
        let mut outcomes = Vec::new();
        for k in [1u32, 2, 3] {
            let horizon = 36 / k;
            let terms: Vec<f64> = (1..=horizon).map(|m| ln_a(k * m)).collect();
            outcomes.push(classify_terms(&terms).outcome);
        }
        assert!(
            outcomes.windows(2).all(|w| w[0] == w[1]),
            "{spec:?}: stride outcomes differ: {outcomes:?}"
        );
        // sanity: the gaussian/gamma sides diverge, the lognormal converges
        match spec {
            MeasureSpec::LogNormal1D { .. } => assert_eq!(outcomes[0], SeriesOutcome::Convergent),
            _ => assert_eq!(outcomes[0], SeriesOutcome::Divergent),
        }
    }
}

// Whenever the weight-reciprocal criterion certifies a measure and the
// weight is quasi-analytic with respect to basis B, the Carleman test in B
// must not come back CriterionNotMet.
#[test]
fn weight_to_carleman_consistency() {
    let s = settings();
    let cases: Vec<(MeasureSpec, WeightSpec)> = vec![
        (MeasureSpec::standard_normal(1), WeightSpec::exp_decay(1.0).unwrap()),
        (MeasureSpec::standard_normal(2), WeightSpec::exp_decay(0.5).unwrap()),
        (
            MeasureSpec::GaussianProduct { means: vec![0.5], sds: vec![2.0] },
            WeightSpec::repeated_log(vec![1.0], vec![1.0], None).unwrap(),
        ),
    ];
    for (spec, weight) in &cases {
        let qa = WeightEval::new(weight, &s).classify(spec.dimension(), 40);
        assert!(qa.is_quasi_analytic());
        let crit = CriterionSpec::WeightReciprocal { weight: weight.clone() };
        let v = integral_criterion(spec, &crit, None, &s).unwrap();
        if v.outcome != DeterminacyOutcome::SufficientDeterminate {
            continue; // nothing to cross-check
        }
        let basis = match qa.basis {
            Some(QABasis::AllBases) | None => None,
            Some(QABasis::Listed { vectors }) => {
                Some(momdet::measure::Basis::new(vectors).unwrap())
            }
        };
        let engine = MomentEngine::new(spec, basis, &s);
        let carleman =
            extended_carleman_check(spec, &engine, 30, &CarlemanMode::Hamburger, &s).unwrap();
        assert_ne!(
            carleman.outcome,
            DeterminacyOutcome::CriterionNotMet,
            "{spec:?} with {weight:?}"
        );
    }
}

// Increasing the horizon must never flip a sufficient verdict to
// criterion-not-met or vice versa; it may only resolve inconclusives.
#[test]
fn verdict_monotone_in_horizon() {
    let s = settings();
    let cases: Vec<MeasureSpec> = vec![
        MeasureSpec::standard_normal(1),
        MeasureSpec::LogNormal1D { location: 0.0, scale: 1.0 },
        MeasureSpec::GaussianProduct { means: vec![0.0, 1.0], sds: vec![1.0, 0.5] },
    ];
    for spec in &cases {
        let engine = MomentEngine::new(spec, None, &s);
        let outcomes: Vec<DeterminacyOutcome> = [16u32, 24, 30]
            .iter()
            .map(|&m| {
                extended_carleman_check(spec, &engine, m, &CarlemanMode::Hamburger, &s)
                    .unwrap()
                    .outcome
            })
            .collect();
        for w in outcomes.windows(2) {
            let flip = matches!(
                (w[0], w[1]),
                (DeterminacyOutcome::SufficientDeterminate, DeterminacyOutcome::CriterionNotMet)
                    | (DeterminacyOutcome::CriterionNotMet, DeterminacyOutcome::SufficientDeterminate)
            );
            assert!(!flip, "{spec:?}: verdicts flipped: {outcomes:?}");
        }
    }
}

// The Definition-3.1 partial-sum fallback, fed by the sup-norm sequences of
// repeated-log weights, agrees with the p_j0 rule wherever it is not
// inconclusive.
#[test]
fn fallback_agrees_with_repeated_log_rule() {
    let s = settings();
    let cases: Vec<(Vec<f64>, QAOutcomeKind)> = vec![
        (vec![0.5], QAOutcomeKind::Qa),    // p0 = 0.5 < 1: gaussian-ish decay
        (vec![0.0], QAOutcomeKind::Qa),    // p0 = 0: exp(-r^2)
        (vec![1.0, 2.0], QAOutcomeKind::NotQa), // sharp negative case
        (vec![1.0, 3.0], QAOutcomeKind::NotQa),
    ];
    #[derive(PartialEq, Debug, Clone, Copy)]
    enum QAOutcomeKind {
        Qa,
        NotQa,
    }
    for (p, rule_expect) in cases {
        let a = vec![1.0; p.len()];
        let w = WeightSpec::repeated_log(a, p.clone(), None).unwrap();
        let ev = WeightEval::new(&w, &s);
        let rule = ev.classify(1, 40);
        let rule_kind = match rule.outcome {
            momdet::weight::QAOutcome::QuasiAnalytic => QAOutcomeKind::Qa,
            momdet::weight::QAOutcome::NotQuasiAnalytic => QAOutcomeKind::NotQa,
            other => panic!("rule should be decisive, got {other:?}"),
        };
        assert_eq!(rule_kind, rule_expect, "p = {p:?}");

        // fallback route: classify the sup-norm series directly
        let mut ln_terms = Vec::new();
        for m in 1..=40u32 {
            let ln_sup = ev.ln_sup_norm(&[1.0], m).unwrap();
            ln_terms.push(-ln_sup / m as f64);
        }
        let fallback = classify_terms(&ln_terms);
        match fallback.outcome {
            SeriesOutcome::Inconclusive => {} // allowed at the boundary
            SeriesOutcome::Divergent => assert_eq!(rule_kind, QAOutcomeKind::Qa, "p = {p:?}"),
            SeriesOutcome::Convergent => assert_eq!(rule_kind, QAOutcomeKind::NotQa, "p = {p:?}"),
        }
    }
}

// A weight without decay has unbounded sup-norm sequences.
#[test]
fn non_decaying_weight_is_unbounded() {
    let s = settings();
    let w = WeightSpec::Expr {
        formula: momdet::parse_expression("1", 1).unwrap(),
        radial: false,
    };
    let ev = WeightEval::new(&w, &s);
    assert!(matches!(ev.ln_sup_norm(&[1.0], 3), Err(momdet::Error::Unbounded { .. })));
}

// A measure concentrated in the hyperplane slice x = 0 has vanishing even
// moments; the series short-circuits to divergent and the measure is
// certified outright.
#[test]
fn hyperplane_slice_short_circuits_to_divergent() {
    let s = settings();
    let spec = MeasureSpec::Discrete { atoms: vec![(vec![0.0], 1.0)], support: None };
    let engine = MomentEngine::new(&spec, None, &s);
    let v = extended_carleman_check(&spec, &engine, 16, &CarlemanMode::Hamburger, &s).unwrap();
    assert_eq!(v.outcome, DeterminacyOutcome::SufficientDeterminate);
}

// Stieltjes exponential across horizons: the C-determinacy verdict is
// likewise stable.
#[test]
fn stieltjes_verdict_monotone_in_horizon() {
    let s = settings();
    let spec = MeasureSpec::Exponential1D { rate: 1.0 };
    let cone = momdet::measure::Cone::standard(1);
    let engine = MomentEngine::new(&spec, None, &s);
    for m in [16u32, 24, 30] {
        let v = extended_carleman_check(
            &spec,
            &engine,
            m,
            &CarlemanMode::Stieltjes { cone: cone.clone() },
            &s,
        )
        .unwrap();
        assert_eq!(v.outcome, DeterminacyOutcome::SufficientCDeterminate, "M = {m}");
    }
}
