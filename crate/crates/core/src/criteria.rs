//! Determinacy criteria: Carleman-type series tests (Hamburger and
//! Stieltjes), the Shohat-Tamarkin summed variant, and the integral
//! criteria built from quasi-analytic weights, together with the
//! square-root pushforward and symmetrization machinery that reduces
//! cone-supported problems to the full-space case.
//!
//! Every check returns an evidence-carrying verdict. The criteria are
//! sufficient conditions: CriterionNotMet never claims indeterminacy.

use crate::error::{Error, Result};
use crate::expr::ExprAst;
use crate::logdomain::SignedLog;
use crate::measure::{dot, norm, Cone, MeasureSpec, PushforwardMap, TriState};
use crate::moments::MomentEngine;
use crate::quad::{classify_tail, tail_profile, FiniteOutcome, FiniteVerdict, QuadSettings};
use crate::weight::{
    repeated_log, repeated_log_min_radius, rho_divergence_check, QAVerdict, WeightEval, WeightSpec,
    DIAGNOSTIC_TOL,
};
use serde::{Deserialize, Serialize};

/// Half-width of the indifference band around beta = 1 in the growth fit.
pub const BETA_BAND: f64 = 0.05;

type LnIntegrand = Box<dyn Fn(&[f64]) -> f64>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum SeriesOutcome {
    Divergent,
    Convergent,
    Inconclusive,
}

/// Outcome of the finite-horizon divergence heuristic: a least-squares fit
/// of -ln a_m against ln m over the top half of the horizon, compared with
/// the p-series boundary beta = 1.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SeriesClassification {
    pub outcome: SeriesOutcome,
    pub beta: Option<f64>,
    pub beta_stderr: Option<f64>,
    pub partial_sums: Vec<f64>,
    pub horizon: usize,
    pub note: Option<String>,
}

/// Classifies the series sum a_m from the logs of its terms (index i holds
/// ln a_{i+1}).
pub fn classify_terms(ln_terms: &[f64]) -> SeriesClassification {
    let horizon = ln_terms.len();
    let mut partial_sums = Vec::with_capacity(horizon);
    let mut acc = 0.0f64;
    for &lt in ln_terms {
        // clamped so an infinite term (vanishing moment) stays JSON-legal
        acc = (acc + lt.exp()).min(f64::MAX);
        partial_sums.push(acc);
    }

    if horizon < 8 {
        return SeriesClassification {
            outcome: SeriesOutcome::Inconclusive,
            beta: None,
            beta_stderr: None,
            partial_sums,
            horizon,
            note: Some("horizon shorter than 8 terms".into()),
        };
    }
    // a vanishing moment makes its term infinite: the series diverges
    if ln_terms.contains(&f64::INFINITY) {
        return SeriesClassification {
            outcome: SeriesOutcome::Divergent,
            beta: None,
            beta_stderr: None,
            partial_sums,
            horizon,
            note: Some("vanishing even moment: term is infinite".into()),
        };
    }
    // a vanishing term means the sup-norm/moment grew without bound
    if ln_terms.contains(&f64::NEG_INFINITY) {
        return SeriesClassification {
            outcome: SeriesOutcome::Convergent,
            beta: None,
            beta_stderr: None,
            partial_sums,
            horizon,
            note: Some("vanishing term: super-exponential growth".into()),
        };
    }

    // fit window: top half of the horizon
    let start = horizon / 2;
    let xs: Vec<f64> = (start..horizon).map(|i| ((i + 1) as f64).ln()).collect();
    let ys: Vec<f64> = (start..horizon).map(|i| -ln_terms[i]).collect();
    let (beta, stderr) = ols_slope(&xs, &ys);

    let outcome = if beta <= 1.0 - BETA_BAND {
        SeriesOutcome::Divergent
    } else if beta >= 1.0 + BETA_BAND {
        SeriesOutcome::Convergent
    } else {
        // terms bounded below by a positive constant diverge regardless
        let window = &ln_terms[start..];
        let max = window.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let min = window.iter().cloned().fold(f64::INFINITY, f64::min);
        if min >= max + (0.9f64).ln() {
            SeriesOutcome::Divergent
        } else {
            SeriesOutcome::Inconclusive
        }
    };

    SeriesClassification {
        outcome,
        beta: Some(beta),
        beta_stderr: Some(stderr),
        partial_sums,
        horizon,
        note: None,
    }
}

fn ols_slope(xs: &[f64], ys: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let beta = sxy / sxx;
    let residual: f64 = xs
        .iter()
        .zip(ys)
        .map(|(x, y)| {
            let pred = my + beta * (x - mx);
            (y - pred) * (y - pred)
        })
        .sum();
    let dof = (xs.len().saturating_sub(2)).max(1) as f64;
    let stderr = (residual / dof / sxx).sqrt();
    (beta, stderr)
}

/// Terms and partial sums of the Carleman series sum 1/s(2m)^{1/2m} from an
/// even-moment sequence (s\[i\] holds s(2(i+1))).
pub fn carleman_partial_sums(even_moments: &[SignedLog]) -> (Vec<f64>, Vec<f64>) {
    let ln_terms: Vec<f64> = even_moments
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let m = (i + 1) as f64;
            if s.is_zero() {
                f64::INFINITY
            } else {
                -s.ln_abs / (2.0 * m)
            }
        })
        .collect();
    let mut sums = Vec::with_capacity(ln_terms.len());
    let mut acc = 0.0;
    for &t in &ln_terms {
        acc = (acc + t.exp()).min(f64::MAX);
        sums.push(acc);
    }
    (ln_terms, sums)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum DeterminacyOutcome {
    SufficientDeterminate,
    SufficientCDeterminate,
    CriterionNotMet,
    Inconclusive,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub enum Evidence {
    Series { direction: usize, classification: SeriesClassification },
    Tail { verdict: FiniteVerdict, profile: crate::quad::TailProfile },
    RhoDivergence { index: usize, verdict: FiniteVerdict },
    Weight { verdict: QAVerdict },
    Note { text: String },
}

/// Evidence-carrying determinacy verdict. `density_in_lp` marks the
/// polynomial/trigonometric density conclusion, attached only to
/// Hamburger-side successes.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DeterminacyVerdict {
    pub outcome: DeterminacyOutcome,
    pub density_in_lp: bool,
    pub evidence: Vec<Evidence>,
}

impl DeterminacyVerdict {
    fn inconclusive(evidence: Vec<Evidence>) -> Self {
        DeterminacyVerdict { outcome: DeterminacyOutcome::Inconclusive, density_in_lp: false, evidence }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub enum CarlemanMode {
    Hamburger,
    Stieltjes { cone: Cone },
}

/// The extended Carleman check: per-direction series tests on the moment
/// table. In Stieltjes mode the moments are taken against the dual basis of
/// the cone and all degrees enter the terms 1/s_j(m)^{1/2m}.
pub fn extended_carleman_check(
    spec: &MeasureSpec,
    engine: &MomentEngine<'_>,
    max_degree: u32,
    mode: &CarlemanMode,
    settings: &QuadSettings,
) -> Result<DeterminacyVerdict> {
    let n = spec.dimension();
    let mut evidence = Vec::new();
    let mut all_divergent = true;
    let mut any_convergent = false;

    match mode {
        CarlemanMode::Hamburger => {
            for j in 0..n {
                let mut ln_terms = Vec::with_capacity(max_degree as usize);
                let mut failed = false;
                for m in 1..=max_degree {
                    let e = engine.directional(j, 2 * m);
                    if !e.converged {
                        failed = true;
                        break;
                    }
                    ln_terms.push(if e.value.is_zero() {
                        f64::INFINITY
                    } else {
                        -e.value.ln_abs / (2.0 * m as f64)
                    });
                }
                let cls = if failed {
                    SeriesClassification {
                        outcome: SeriesOutcome::Inconclusive,
                        beta: None,
                        beta_stderr: None,
                        partial_sums: Vec::new(),
                        horizon: ln_terms.len(),
                        note: Some("moment entry failed to converge".into()),
                    }
                } else {
                    classify_terms(&ln_terms)
                };
                match cls.outcome {
                    SeriesOutcome::Divergent => {}
                    SeriesOutcome::Convergent => {
                        all_divergent = false;
                        any_convergent = true;
                    }
                    SeriesOutcome::Inconclusive => all_divergent = false,
                }
                evidence.push(Evidence::Series { direction: j, classification: cls });
            }
            let outcome = if all_divergent {
                DeterminacyOutcome::SufficientDeterminate
            } else if any_convergent {
                DeterminacyOutcome::CriterionNotMet
            } else {
                DeterminacyOutcome::Inconclusive
            };
            Ok(DeterminacyVerdict {
                outcome,
                // density of polynomials and trigonometric spans holds on
                // Hamburger-side success
                density_in_lp: outcome == DeterminacyOutcome::SufficientDeterminate,
                evidence,
            })
        }
        CarlemanMode::Stieltjes { cone } => {
            if !spec.supported_in(cone) {
                return Err(Error::ConeMismatch(
                    "stieltjes mode requires the measure supported in the cone".into(),
                ));
            }
            let dual_engine = MomentEngine::new(spec, Some(cone.dual.clone()), settings);
            for j in 0..n {
                let mut ln_terms = Vec::with_capacity(max_degree as usize);
                let mut failed = false;
                for m in 1..=max_degree {
                    let e = dual_engine.directional(j, m);
                    if !e.converged {
                        failed = true;
                        break;
                    }
                    if e.value.sign < 0 {
                        failed = true;
                        break;
                    }
                    ln_terms.push(if e.value.is_zero() {
                        f64::INFINITY
                    } else {
                        -e.value.ln_abs / (2.0 * m as f64)
                    });
                }
                let cls = if failed {
                    SeriesClassification {
                        outcome: SeriesOutcome::Inconclusive,
                        beta: None,
                        beta_stderr: None,
                        partial_sums: Vec::new(),
                        horizon: ln_terms.len(),
                        note: Some("dual-coordinate moment failed or negative".into()),
                    }
                } else {
                    classify_terms(&ln_terms)
                };
                match cls.outcome {
                    SeriesOutcome::Divergent => {}
                    SeriesOutcome::Convergent => {
                        all_divergent = false;
                        any_convergent = true;
                    }
                    SeriesOutcome::Inconclusive => all_divergent = false,
                }
                evidence.push(Evidence::Series { direction: j, classification: cls });
            }
            let outcome = if all_divergent {
                DeterminacyOutcome::SufficientCDeterminate
            } else if any_convergent {
                DeterminacyOutcome::CriterionNotMet
            } else {
                DeterminacyOutcome::Inconclusive
            };
            Ok(DeterminacyVerdict { outcome, density_in_lp: false, evidence })
        }
    }
}

/// Shohat-Tamarkin style check on the summed sequence lambda(2m).
pub fn shohat_tamarkin_check(
    engine: &MomentEngine<'_>,
    max_degree: u32,
) -> DeterminacyVerdict {
    let mut ln_terms = Vec::with_capacity(max_degree as usize);
    let mut failed = false;
    for m in 1..=max_degree {
        let e = engine.lambda(2 * m);
        if !e.converged {
            failed = true;
            break;
        }
        ln_terms.push(if e.value.is_zero() {
            f64::INFINITY
        } else {
            -e.value.ln_abs / (2.0 * m as f64)
        });
    }
    if failed {
        return DeterminacyVerdict::inconclusive(vec![Evidence::Note {
            text: "lambda entry failed to converge".into(),
        }]);
    }
    let cls = classify_terms(&ln_terms);
    let outcome = match cls.outcome {
        SeriesOutcome::Divergent => DeterminacyOutcome::SufficientDeterminate,
        SeriesOutcome::Convergent => DeterminacyOutcome::CriterionNotMet,
        SeriesOutcome::Inconclusive => DeterminacyOutcome::Inconclusive,
    };
    DeterminacyVerdict {
        outcome,
        density_in_lp: outcome == DeterminacyOutcome::SufficientDeterminate,
        evidence: vec![Evidence::Series { direction: 0, classification: cls }],
    }
}

/// Which integral criterion to run. Stieltjes kinds require the measure
/// supported in the accompanying cone.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub enum CriterionSpec {
    /// Radial integrand exp(int_R^{||x||} rho(s)/s ds).
    RadialRho { radius: f64, rho: ExprAst },
    /// Product integrand prod_j f_j((Ax)_j) with f_j built from rho_j.
    TensorAffine { matrix: Vec<Vec<f64>>, offset: Vec<f64>, factors: Vec<(f64, ExprAst)> },
    /// Radial integrand exp(||x||^2 / prod_j log_j^{p_j}(a_j ||x||)).
    RepeatedLogIntegrand { a: Vec<f64>, p: Vec<f64>, radius: f64 },
    /// Reciprocal of an arbitrary quasi-analytic weight.
    WeightReciprocal { weight: WeightSpec },
    /// (w o phi)^{-1} for a weight quasi-analytic w.r.t. the dual basis.
    StieltjesWeight { weight: WeightSpec },
    /// prod_j f_j((v'_j, phi(x))) from per-direction rho_j.
    StieltjesTensor { factors: Vec<(f64, ExprAst)> },
    /// w(sqrt(||x||))^{-1} for a 1-D quasi-analytic weight.
    StieltjesRadial { weight: WeightSpec },
    /// exp(||x||^{3/2} / prod_j log_j^{p_j}(a_j sqrt(||x||))).
    StieltjesRepeatedLog { a: Vec<f64>, p: Vec<f64>, radius: f64 },
}

impl CriterionSpec {
    pub fn is_stieltjes(&self) -> bool {
        matches!(
            self,
            CriterionSpec::StieltjesWeight { .. }
                | CriterionSpec::StieltjesTensor { .. }
                | CriterionSpec::StieltjesRadial { .. }
                | CriterionSpec::StieltjesRepeatedLog { .. }
        )
    }
}

fn repeated_log_exponent(a: &[f64], p: &[f64], t: f64) -> f64 {
    // t^2 / prod_j log_j^{p_j}(a_j t)
    let mut ln_prod = 0.0;
    for j in 0..p.len() {
        if p[j] == 0.0 {
            continue;
        }
        let lj = repeated_log(j, a[j] * t);
        if lj.is_nan() || lj <= 0.0 {
            return f64::NAN;
        }
        ln_prod += p[j] * lj.ln();
    }
    (2.0 * t.ln() - ln_prod).exp()
}

// every listed vector parallel (up to scaling) to a distinct basis vector
fn basis_matches_up_to_scaling(vectors: &[Vec<f64>], basis: &crate::measure::Basis) -> bool {
    let n = basis.dimension();
    if vectors.len() != n {
        return false;
    }
    let mut used = vec![false; n];
    for v in vectors {
        let vn = norm(v);
        if vn == 0.0 {
            return false;
        }
        let mut matched = false;
        for (j, u) in used.iter_mut().enumerate() {
            if *u {
                continue;
            }
            let b = basis.vector(j);
            let bn = norm(b);
            let cos = dot(v, b) / (vn * bn);
            if (cos.abs() - 1.0).abs() < 1e-9 {
                *u = true;
                matched = true;
                break;
            }
        }
        if !matched {
            return false;
        }
    }
    true
}

fn validate_repeated_log_params(a: &[f64], p: &[f64], radius: f64) -> Result<usize> {
    if a.len() != p.len() || a.is_empty() || a.iter().any(|&x| x <= 0.0) {
        return Err(Error::InvalidCriterion("invalid repeated-log parameters".into()));
    }
    let j0 = (0..).find(|&j| p.get(j).copied().unwrap_or(0.0) != 1.0).unwrap();
    let pj0 = p.get(j0).copied().unwrap_or(0.0);
    if pj0 >= 1.0 {
        return Err(Error::InvalidCriterion(format!(
            "repeated-log criterion requires p_j0 < 1, got p_{j0} = {pj0}"
        )));
    }
    let r_min = repeated_log_min_radius(a, p);
    if radius <= r_min {
        return Err(Error::InvalidCriterion(format!(
            "radius {radius} too small for the iterated logs (need > {r_min})"
        )));
    }
    Ok(j0)
}

/// Runs an integral criterion: validates its hypotheses, builds the
/// integrand in log-domain, profiles the tail against the measure, and maps
/// the finiteness verdict to a determinacy outcome.
pub fn integral_criterion(
    spec: &MeasureSpec,
    crit: &CriterionSpec,
    cone: Option<&Cone>,
    settings: &QuadSettings,
) -> Result<DeterminacyVerdict> {
    let mut evidence: Vec<Evidence> = Vec::new();
    let mut hypotheses_ok = true;

    if crit.is_stieltjes() {
        let cone = cone.ok_or_else(|| Error::ConeMismatch("stieltjes criterion needs a cone".into()))?;
        if !spec.supported_in(cone) {
            return Err(Error::ConeMismatch(
                "measure is not supported in the declared cone".into(),
            ));
        }
        let _ = cone;
    }

    // hypothesis checks plus the log-domain integrand
    let ln_integrand: LnIntegrand = match crit {
        CriterionSpec::RadialRho { radius, rho } => {
            let w = WeightSpec::RadialRho { radius: *radius, rho: rho.clone() };
            w.validate(settings)?;
            let div = rho_divergence_check(rho, *radius, settings);
            match div.outcome {
                FiniteOutcome::Infinite => {}
                FiniteOutcome::Finite => {
                    return Err(Error::InvalidCriterion(
                        "rho fails the divergence hypothesis: int rho(s)/s^2 ds is finite".into(),
                    ));
                }
                FiniteOutcome::Inconclusive => hypotheses_ok = false,
            }
            evidence.push(Evidence::RhoDivergence { index: 0, verdict: div });
            let eval = WeightEval::new_owned(w, settings);
            Box::new(move |x: &[f64]| -eval.ln_weight(x))
        }
        CriterionSpec::TensorAffine { matrix, offset, factors } => {
            let n = matrix.len();
            if n == 0 || matrix.iter().any(|r| r.len() != n) || offset.len() != n || factors.len() != n {
                return Err(Error::InvalidCriterion("tensor-affine shape mismatch".into()));
            }
            crate::measure::Basis::new((0..n).map(|j| (0..n).map(|i| matrix[i][j]).collect()).collect())?;
            let mut evals = Vec::new();
            for (idx, (radius, rho)) in factors.iter().enumerate() {
                let w = WeightSpec::RadialRho { radius: *radius, rho: rho.clone() };
                w.validate(settings)?;
                let div = rho_divergence_check(rho, *radius, settings);
                match div.outcome {
                    FiniteOutcome::Infinite => {}
                    FiniteOutcome::Finite => {
                        return Err(Error::InvalidCriterion(format!(
                            "rho_{idx} fails the divergence hypothesis"
                        )));
                    }
                    FiniteOutcome::Inconclusive => hypotheses_ok = false,
                }
                evidence.push(Evidence::RhoDivergence { index: idx, verdict: div });
                evals.push(WeightEval::new_owned(w, settings));
            }
            let matrix = matrix.clone();
            let offset = offset.clone();
            Box::new(move |x: &[f64]| {
                let mut acc = 0.0;
                for (j, ev) in evals.iter().enumerate() {
                    let axj: f64 = (0..x.len()).map(|i| matrix[j][i] * x[i]).sum::<f64>() + offset[j];
                    acc += -ev.ln_weight(&[axj]);
                }
                acc
            })
        }
        CriterionSpec::RepeatedLogIntegrand { a, p, radius } => {
            let j0 = validate_repeated_log_params(a, p, *radius)?;
            evidence.push(Evidence::Note {
                text: format!("repeated-log hypothesis holds: p_j0 < 1 at j0 = {j0}"),
            });
            let (a, p, radius) = (a.clone(), p.clone(), *radius);
            Box::new(move |x: &[f64]| {
                let r = norm(x);
                if r < radius {
                    0.0
                } else {
                    repeated_log_exponent(&a, &p, r)
                }
            })
        }
        CriterionSpec::WeightReciprocal { weight } => {
            weight.validate(settings)?;
            let qa = WeightEval::new(weight, settings).classify(spec.dimension(), 40);
            if !qa.is_quasi_analytic() {
                hypotheses_ok = false;
            }
            evidence.push(Evidence::Weight { verdict: qa });
            let eval = WeightEval::new_owned(weight.clone(), settings);
            Box::new(move |x: &[f64]| -eval.ln_weight(x))
        }
        CriterionSpec::StieltjesWeight { weight } => {
            weight.validate(settings)?;
            let cone = cone.unwrap().clone();
            let qa = WeightEval::new(weight, settings).classify(spec.dimension(), 40);
            // the hypothesis demands quasi-analyticity with respect to the
            // dual basis of the cone specifically
            match (&qa.outcome, &qa.basis) {
                (crate::weight::QAOutcome::QuasiAnalytic, Some(crate::weight::QABasis::AllBases)) => {}
                (crate::weight::QAOutcome::QuasiAnalytic, Some(crate::weight::QABasis::Listed { vectors })) => {
                    if !basis_matches_up_to_scaling(vectors, &cone.dual) {
                        hypotheses_ok = false;
                        evidence.push(Evidence::Note {
                            text: "weight is quasi-analytic, but not with respect to the cone's dual basis"
                                .into(),
                        });
                    }
                }
                _ => hypotheses_ok = false,
            }
            evidence.push(Evidence::Weight { verdict: qa });
            let eval = WeightEval::new_owned(weight.clone(), settings);
            Box::new(move |x: &[f64]| {
                let phi = PushforwardMap::PhiSqrt { cone: cone.clone() }.apply(x);
                -eval.ln_weight(&phi)
            })
        }
        CriterionSpec::StieltjesTensor { factors } => {
            let cone = cone.unwrap().clone();
            if factors.len() != spec.dimension() {
                return Err(Error::InvalidCriterion("one rho_j per cone direction required".into()));
            }
            let mut evals = Vec::new();
            for (idx, (radius, rho)) in factors.iter().enumerate() {
                let w = WeightSpec::RadialRho { radius: *radius, rho: rho.clone() };
                w.validate(settings)?;
                let div = rho_divergence_check(rho, *radius, settings);
                match div.outcome {
                    FiniteOutcome::Infinite => {}
                    FiniteOutcome::Finite => {
                        return Err(Error::InvalidCriterion(format!(
                            "rho_{idx} fails the divergence hypothesis"
                        )));
                    }
                    FiniteOutcome::Inconclusive => hypotheses_ok = false,
                }
                evidence.push(Evidence::RhoDivergence { index: idx, verdict: div });
                evals.push(WeightEval::new_owned(w, settings));
            }
            Box::new(move |x: &[f64]| {
                // (v'_j, phi(x)) = sqrt(y_j) in dual coordinates
                let y = cone.dual_coordinates(x);
                let mut acc = 0.0;
                for (j, ev) in evals.iter().enumerate() {
                    acc += -ev.ln_weight(&[y[j].max(0.0).sqrt()]);
                }
                acc
            })
        }
        CriterionSpec::StieltjesRadial { weight } => {
            weight.validate(settings)?;
            if let Some(d) = weight.dimension() {
                if d != 1 {
                    return Err(Error::InvalidCriterion("stieltjes radial needs a 1-D weight".into()));
                }
            }
            let qa = WeightEval::new(weight, settings).classify(1, 40);
            if !qa.is_quasi_analytic() {
                hypotheses_ok = false;
            }
            evidence.push(Evidence::Weight { verdict: qa });
            let eval = WeightEval::new_owned(weight.clone(), settings);
            Box::new(move |x: &[f64]| -eval.ln_weight(&[norm(x).sqrt()]))
        }
        CriterionSpec::StieltjesRepeatedLog { a, p, radius } => {
            let j0 = validate_repeated_log_params(a, p, radius.sqrt())?;
            evidence.push(Evidence::Note {
                text: format!("repeated-log hypothesis holds: p_j0 < 1 at j0 = {j0}"),
            });
            let (a, p, radius) = (a.clone(), p.clone(), *radius);
            Box::new(move |x: &[f64]| {
                let r = norm(x);
                if r < radius {
                    return 0.0;
                }
                // ||x||^{3/2} / prod_j log_j^{p_j}(a_j sqrt(||x||))
                let t = r.sqrt();
                let mut ln_prod = 0.0;
                for j in 0..p.len() {
                    if p[j] == 0.0 {
                        continue;
                    }
                    let lj = repeated_log(j, a[j] * t);
                    if lj.is_nan() || lj <= 0.0 {
                        return f64::NAN;
                    }
                    ln_prod += p[j] * lj.ln();
                }
                (1.5 * r.ln() - ln_prod).exp()
            })
        }
    };

    let f = |x: &[f64]| -> SignedLog { SignedLog::from_ln(ln_integrand(x)) };
    // finite-vs-infinite probes do not need moment-grade shell accuracy
    let probe = QuadSettings { tol: settings.tol.max(1e-7), ..*settings };
    let profile = tail_profile(&f, spec, &probe)?;
    let tail = classify_tail(&profile, DIAGNOSTIC_TOL);
    let tail_outcome = tail.outcome;
    evidence.push(Evidence::Tail { verdict: tail, profile });

    let outcome = match tail_outcome {
        FiniteOutcome::Finite if hypotheses_ok => {
            if crit.is_stieltjes() {
                DeterminacyOutcome::SufficientCDeterminate
            } else {
                DeterminacyOutcome::SufficientDeterminate
            }
        }
        FiniteOutcome::Infinite => DeterminacyOutcome::CriterionNotMet,
        _ => DeterminacyOutcome::Inconclusive,
    };
    Ok(DeterminacyVerdict {
        outcome,
        density_in_lp: outcome == DeterminacyOutcome::SufficientDeterminate && !crit.is_stieltjes(),
        evidence,
    })
}

/// Pushforward of a cone-supported measure under phi(x) = sum sqrt(y_j) v_j.
pub fn phi_pushforward(spec: &MeasureSpec, cone: &Cone) -> Result<MeasureSpec> {
    if !spec.supported_in(cone) {
        return Err(Error::ConeMismatch("phi pushforward needs cone support".into()));
    }
    Ok(MeasureSpec::Pushforward {
        inner: Box::new(spec.clone()),
        map: PushforwardMap::PhiSqrt { cone: cone.clone() },
    })
}

/// Averaging over the 2^n sign flips of the cone coordinates: an equal
/// mixture of sign-flip pushforwards.
pub fn symmetrize(spec: &MeasureSpec, cone: &Cone) -> MeasureSpec {
    let n = cone.dimension();
    let weight = 0.5f64.powi(n as i32);
    let mut components = Vec::with_capacity(1 << n);
    for mask in 0u32..(1 << n) {
        let flips: Vec<bool> = (0..n).map(|j| mask & (1 << j) != 0).collect();
        components.push((
            weight,
            MeasureSpec::Pushforward {
                inner: Box::new(spec.clone()),
                map: PushforwardMap::SignFlip { cone: cone.clone(), flips },
            },
        ));
    }
    MeasureSpec::Mixture { components }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MomentRelationCheck {
    pub exponents: Vec<u32>,
    pub lhs: SignedLog,
    pub rhs: SignedLog,
    pub residual: f64,
    pub passed: bool,
}

/// Verifies the half-moment relation between a cone-supported measure and
/// its symmetrized square-root pushforward: even multi-indices match the
/// half-exponent moments, odd ones integrate to zero.
pub fn verify_moment_relation(
    spec: &MeasureSpec,
    cone: &Cone,
    exponents: &[u32],
    tol: f64,
    settings: &QuadSettings,
) -> Result<MomentRelationCheck> {
    let pushed = symmetrize(&phi_pushforward(spec, cone)?, cone);
    let dual = cone.dual.clone();
    let e_owned = exponents.to_vec();
    let lhs_f = move |x: &[f64]| -> SignedLog {
        let mut acc = SignedLog::ONE;
        for (j, &e) in e_owned.iter().enumerate() {
            acc = acc * SignedLog::from_f64(dot(dual.vector(j), x)).powi(e as i64);
        }
        acc
    };
    let lhs = crate::quad::integrate(&lhs_f, &pushed, settings)?;

    let all_even = exponents.iter().all(|e| e % 2 == 0);
    let (rhs, scale) = if all_even {
        let dual = cone.dual.clone();
        let e_half: Vec<u32> = exponents.iter().map(|e| e / 2).collect();
        let rhs_f = move |x: &[f64]| -> SignedLog {
            let mut acc = SignedLog::ONE;
            for (j, &e) in e_half.iter().enumerate() {
                acc = acc * SignedLog::from_f64(dot(dual.vector(j), x)).powi(e as i64);
            }
            acc
        };
        let rhs = crate::quad::integrate(&rhs_f, spec, settings)?;
        let scale = rhs.value.abs().max(SignedLog::ONE);
        (rhs.value, scale)
    } else {
        (SignedLog::ZERO, SignedLog::ONE)
    };

    let residual = ((lhs.value - rhs) / scale).to_f64().abs();
    Ok(MomentRelationCheck {
        exponents: exponents.to_vec(),
        lhs: lhs.value,
        rhs,
        residual,
        passed: residual <= tol,
    })
}

/// Upgrades a C-determinacy verdict to full determinacy when every marginal
/// support avoids the obstruction (contains the origin AND is a discrete
/// unbounded set). Unknown flags leave the verdict unchanged with a note.
pub fn strengthen_to_determinate(
    verdict: &DeterminacyVerdict,
    spec: &MeasureSpec,
    cone: &Cone,
) -> DeterminacyVerdict {
    if verdict.outcome != DeterminacyOutcome::SufficientCDeterminate {
        return verdict.clone();
    }
    let n = cone.dimension();
    let mut notes = Vec::new();
    let mut all_ok = true;
    let mut any_unknown = false;
    for j in 0..n {
        let flags = spec.marginal_support(cone, j);
        let ok = flags.contains_origin == TriState::No || flags.discrete_unbounded == TriState::No;
        if flags.contains_origin == TriState::Unknown && flags.discrete_unbounded == TriState::Unknown {
            any_unknown = true;
        }
        if !ok {
            all_ok = false;
        }
        notes.push(format!(
            "direction {j}: contains_origin = {:?}, discrete_unbounded = {:?}",
            flags.contains_origin, flags.discrete_unbounded
        ));
    }
    let mut out = verdict.clone();
    if any_unknown {
        out.evidence.push(Evidence::Note {
            text: format!("strengthening skipped (unknown marginal flags): {}", notes.join("; ")),
        });
        return out;
    }
    if all_ok {
        out.outcome = DeterminacyOutcome::SufficientDeterminate;
        // the upgrade is a determinacy statement only; no density conclusion
        out.density_in_lp = false;
        out.evidence.push(Evidence::Note {
            text: format!("upgraded to determinate via marginal supports: {}", notes.join("; ")),
        });
    } else {
        out.evidence.push(Evidence::Note {
            text: format!("strengthening conditions not met: {}", notes.join("; ")),
        });
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measure::Cone;
    use approx::assert_relative_eq;

    fn settings() -> QuadSettings {
        QuadSettings::default()
    }

    #[test]
    fn carleman_terms_for_standard_normal() {
        let spec = MeasureSpec::standard_normal(1);
        let engine = MomentEngine::new(&spec, None, &settings());
        let moments: Vec<SignedLog> = (1..=4).map(|m| engine.directional(0, 2 * m).value).collect();
        let (ln_terms, sums) = carleman_partial_sums(&moments);
        assert_relative_eq!(ln_terms[0].exp(), 1.0, max_relative = 1e-12);
        assert_relative_eq!(ln_terms[1].exp(), 0.7598356856515925, max_relative = 1e-12);
        assert!(sums[3] > sums[2]);
    }

    #[test]
    fn classifier_pinned_cases() {
        // terms exactly 1/m: beta = 1, pinned inconclusive
        let ln_terms: Vec<f64> = (1..=30).map(|m| -((m as f64).ln())).collect();
        let cls = classify_terms(&ln_terms);
        assert_eq!(cls.outcome, SeriesOutcome::Inconclusive);
        assert_relative_eq!(cls.beta.unwrap(), 1.0, epsilon = 1e-9);

        // constant terms: divergent regardless of fit
        let cls = classify_terms(&vec![0.0; 30]);
        assert_eq!(cls.outcome, SeriesOutcome::Divergent);

        // terms e^{-m}: convergent
        let ln_terms: Vec<f64> = (1..=30).map(|m| -(m as f64)).collect();
        let cls = classify_terms(&ln_terms);
        assert_eq!(cls.outcome, SeriesOutcome::Convergent);

        // fewer than 8 terms: inconclusive
        assert_eq!(classify_terms(&[0.0; 5]).outcome, SeriesOutcome::Inconclusive);

        // an infinite term (vanishing moment) short-circuits to divergent
        let mut t = vec![0.0; 10];
        t[3] = f64::INFINITY;
        assert_eq!(classify_terms(&t).outcome, SeriesOutcome::Divergent);
    }

    #[test]
    fn gaussian_hamburger_divergent() {
        let spec = MeasureSpec::standard_normal(2);
        let s = settings();
        let engine = MomentEngine::new(&spec, None, &s);
        let v = extended_carleman_check(&spec, &engine, 30, &CarlemanMode::Hamburger, &s).unwrap();
        assert_eq!(v.outcome, DeterminacyOutcome::SufficientDeterminate);
        assert!(v.density_in_lp);
        for e in &v.evidence {
            if let Evidence::Series { classification, .. } = e {
                let beta = classification.beta.unwrap();
                assert!(beta > 0.4 && beta < 0.6, "beta = {beta}");
            }
        }
    }

    #[test]
    fn lognormal_hamburger_not_met() {
        let spec = MeasureSpec::LogNormal1D { location: 0.0, scale: 1.0 };
        let s = settings();
        let engine = MomentEngine::new(&spec, None, &s);
        let v = extended_carleman_check(&spec, &engine, 30, &CarlemanMode::Hamburger, &s).unwrap();
        assert_eq!(v.outcome, DeterminacyOutcome::CriterionNotMet);
        assert!(!v.density_in_lp);
    }

    #[test]
    fn exponential_stieltjes_sufficient() {
        let spec = MeasureSpec::Exponential1D { rate: 1.0 };
        let s = settings();
        let engine = MomentEngine::new(&spec, None, &s);
        let cone = Cone::standard(1);
        let v = extended_carleman_check(&spec, &engine, 30, &CarlemanMode::Stieltjes { cone }, &s)
            .unwrap();
        assert_eq!(v.outcome, DeterminacyOutcome::SufficientCDeterminate);
        for e in &v.evidence {
            if let Evidence::Series { classification, .. } = e {
                let beta = classification.beta.unwrap();
                assert!((0.35..0.65).contains(&beta), "beta = {beta}");
            }
        }
    }

    #[test]
    fn stieltjes_requires_cone_support() {
        let spec = MeasureSpec::standard_normal(1);
        let s = settings();
        let engine = MomentEngine::new(&spec, None, &s);
        let cone = Cone::standard(1);
        assert!(matches!(
            extended_carleman_check(&spec, &engine, 20, &CarlemanMode::Stieltjes { cone }, &s),
            Err(Error::ConeMismatch(_))
        ));
    }

    #[test]
    fn shohat_tamarkin_implies_carleman() {
        let spec = MeasureSpec::standard_normal(2);
        let s = settings();
        let engine = MomentEngine::new(&spec, None, &s);
        let st = shohat_tamarkin_check(&engine, 30);
        assert_eq!(st.outcome, DeterminacyOutcome::SufficientDeterminate);
        let ec = extended_carleman_check(&spec, &engine, 30, &CarlemanMode::Hamburger, &s).unwrap();
        assert_eq!(ec.outcome, DeterminacyOutcome::SufficientDeterminate);

        let ln = MeasureSpec::LogNormal1D { location: 0.0, scale: 1.0 };
        let engine = MomentEngine::new(&ln, None, &s);
        assert_eq!(shohat_tamarkin_check(&engine, 30).outcome, DeterminacyOutcome::CriterionNotMet);
    }

    #[test]
    fn symmetrize_point_mass() {
        let cone = Cone::standard(1);
        let spec = MeasureSpec::Discrete { atoms: vec![(vec![1.0], 1.0)], support: None };
        let sym = symmetrize(&spec, &cone);
        let s = settings();
        // mass preserved, odd moments vanish, even moments preserved
        let mass = crate::quad::integrate(&|_: &[f64]| SignedLog::ONE, &sym, &s).unwrap();
        assert_relative_eq!(mass.value.to_f64(), 1.0);
        let odd = crate::quad::integrate(&|x: &[f64]| SignedLog::from_f64(x[0]), &sym, &s).unwrap();
        assert!(odd.value.is_zero() || odd.value.ln_abs < -30.0);
        let even =
            crate::quad::integrate(&|x: &[f64]| SignedLog::from_f64(x[0] * x[0]), &sym, &s).unwrap();
        assert_relative_eq!(even.value.to_f64(), 1.0);
    }

    #[test]
    fn moment_relation_exponential() {
        let spec = MeasureSpec::Exponential1D { rate: 1.0 };
        let cone = Cone::standard(1);
        let s = settings();
        // e = (2): both sides equal E[x] = 1
        let chk = verify_moment_relation(&spec, &cone, &[2], 1e-6, &s).unwrap();
        assert!(chk.passed, "residual {}", chk.residual);
        assert_relative_eq!(chk.lhs.to_f64(), 1.0, max_relative = 1e-6);
        // odd: lhs = 0
        let chk = verify_moment_relation(&spec, &cone, &[1], 1e-8, &s).unwrap();
        assert!(chk.passed, "residual {}", chk.residual);
    }

    #[test]
    fn strengthening_rule() {
        let cone = Cone::standard(1);
        let spec = MeasureSpec::Exponential1D { rate: 1.0 };
        let base = DeterminacyVerdict {
            outcome: DeterminacyOutcome::SufficientCDeterminate,
            density_in_lp: false,
            evidence: vec![],
        };
        let up = strengthen_to_determinate(&base, &spec, &cone);
        assert_eq!(up.outcome, DeterminacyOutcome::SufficientDeterminate);
        assert!(!up.density_in_lp);

        // discrete unbounded set containing the origin: not upgraded
        let atoms: Vec<(Vec<f64>, f64)> =
            (0..8).map(|k| (vec![(k * k) as f64], 0.5f64.powi(k + 1))).collect();
        let disc = MeasureSpec::Discrete {
            atoms,
            support: Some(crate::measure::SupportDescriptor {
                region: crate::measure::SupportRegion::Halfline,
                contains_origin: Some(vec![TriState::Yes]),
                discrete_unbounded: Some(vec![TriState::Yes]),
            }),
        };
        let up = strengthen_to_determinate(&base, &disc, &cone);
        assert_eq!(up.outcome, DeterminacyOutcome::SufficientCDeterminate);

        // unknown flags: unchanged with a note
        let expr = MeasureSpec::DensityExpr {
            density: crate::expr::parse_expression("exp(-x1)", 1).unwrap(),
            support: crate::measure::SupportDescriptor {
                region: crate::measure::SupportRegion::Predicate {
                    predicate: crate::expr::parse_expression("x1", 1).unwrap(),
                },
                contains_origin: None,
                discrete_unbounded: None,
            },
            ln_normalization: None,
        };
        let up = strengthen_to_determinate(&base, &expr, &cone);
        assert_eq!(up.outcome, DeterminacyOutcome::SufficientCDeterminate);
        assert!(matches!(up.evidence.last(), Some(Evidence::Note { .. })));
    }
}
