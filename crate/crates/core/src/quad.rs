//! Quadrature engine: adaptive Gauss-Kronrod in signed-log arithmetic,
//! nested over up to three axes, plus tail-integral profiles over growing
//! radii and the finite/infinite/inconclusive classifier they feed.
//!
//! All node sums are accumulated in signed-log form so criteria integrands
//! like exp(r^2/log r) against a log-density never overflow.

use crate::error::{Error, Result};
use crate::logdomain::{signed_log_sum, SignedLog};
use crate::measure::{AxisChart, MeasureSpec, SupportRegion};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::cell::Cell;
use std::collections::BinaryHeap;

/// Ratios within 1 +/- this band are treated as undecidable at the horizon.
pub const RATIO_BAND: f64 = 0.05;

/// Numeric knobs shared by every integration, mirrored by the manifest
/// `numerics` object.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct QuadSettings {
    pub tol: f64,
    pub r0: f64,
    pub shells: usize,
    pub mc_samples: u64,
    pub seed: u64,
    /// Allow Monte Carlo fallbacks where deterministic quadrature cannot
    /// run (n > 3); disabled by the CLI's --deterministic flag.
    pub mc_fallback: bool,
}

impl Default for QuadSettings {
    fn default() -> Self {
        QuadSettings { tol: 1e-8, r0: 2.0, shells: 12, mc_samples: 1_000_000, seed: 0, mc_fallback: true }
    }
}

impl QuadSettings {
    pub fn schedule(&self) -> Vec<f64> {
        (0..=self.shells).map(|k| self.r0 * (2.0f64).powi(k as i32)).collect()
    }
}

#[derive(Clone, Copy, Debug, Default)]
pub struct Diagnostics {
    pub evals: u64,
    pub nan_evals: u64,
}

#[derive(Clone, Copy, Debug)]
pub struct QuadOutcome {
    pub value: SignedLog,
    pub abs_err: SignedLog,
    pub converged: bool,
    pub diagnostics: Diagnostics,
}

// 15-point Kronrod nodes/weights with the embedded 7-point Gauss rule.
const XGK: [f64; 8] = [
    0.991455371120813,
    0.949107912342759,
    0.864864423359769,
    0.741531185599394,
    0.586087235467691,
    0.405845151377397,
    0.207784955007898,
    0.0,
];
const WGK: [f64; 8] = [
    0.022935322010529,
    0.063092092629979,
    0.104790010322250,
    0.140653259715525,
    0.169004726639267,
    0.190350578064785,
    0.204432940075298,
    0.209482141084728,
];
const WG: [f64; 4] = [
    0.129484966168870,
    0.279705391489277,
    0.381830050505119,
    0.417959183673469,
];

struct PanelResult {
    value: SignedLog,
    err: SignedLog,
}

/// Single Gauss-Kronrod panel on a plain f64 integrand: no adaptivity, no
/// allocation. Meant for short smooth segments where one panel is exact to
/// machine precision (e.g. sub-octave slices of a cumulative integral).
pub fn gk15_panel_f64<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> f64 {
    let center = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let mut kron = WGK[7] * f(center);
    for (i, &x) in XGK.iter().enumerate().take(7) {
        let dx = half * x;
        kron += WGK[i] * (f(center - dx) + f(center + dx));
    }
    kron * half
}

fn gk15<F: Fn(f64) -> SignedLog>(f: &F, a: f64, b: f64, diag: &Cell<Diagnostics>) -> PanelResult {
    let center = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let eval = |x: f64| -> SignedLog {
        let v = f(x);
        let mut d = diag.get();
        d.evals += 1;
        if v.is_nan() {
            d.nan_evals += 1;
        }
        diag.set(d);
        if v.is_nan() {
            SignedLog::ZERO
        } else {
            v
        }
    };

    let mut kron_terms = [SignedLog::ZERO; 15];
    let mut gauss_terms = [SignedLog::ZERO; 8];
    let mut abs_terms = [SignedLog::ZERO; 15];
    let mut values = [(0.0f64, SignedLog::ZERO); 15];

    let fc = eval(center);
    kron_terms[0] = SignedLog::from_f64(WGK[7]) * fc;
    abs_terms[0] = SignedLog::from_f64(WGK[7]) * fc.abs();
    values[0] = (WGK[7], fc);

    let mut slot = 1;
    let mut gslot = 0;
    for (i, &x) in XGK.iter().enumerate().take(7) {
        let dx = half * x;
        let f1 = eval(center - dx);
        let f2 = eval(center + dx);
        let w = SignedLog::from_f64(WGK[i]);
        kron_terms[slot] = w * f1;
        kron_terms[slot + 1] = w * f2;
        abs_terms[slot] = w * f1.abs();
        abs_terms[slot + 1] = w * f2.abs();
        values[slot] = (WGK[i], f1);
        values[slot + 1] = (WGK[i], f2);
        slot += 2;
        if i % 2 == 1 {
            let wg = SignedLog::from_f64(WG[i / 2]);
            gauss_terms[gslot] = wg * f1;
            gauss_terms[gslot + 1] = wg * f2;
            gslot += 2;
        }
    }
    gauss_terms[gslot] = SignedLog::from_f64(WG[3]) * fc;

    let kron = signed_log_sum(&kron_terms);
    let gauss = signed_log_sum(&gauss_terms[..gslot + 1]);
    let resabs = signed_log_sum(&abs_terms);

    // resasc: deviation from the panel mean, used to rescale the raw error
    let mean = kron * SignedLog::from_f64(0.5);
    let mut asc_terms = [SignedLog::ZERO; 15];
    for (t, &(w, v)) in asc_terms.iter_mut().zip(values.iter()) {
        *t = SignedLog::from_f64(w) * (v - mean).abs();
    }
    let resasc = signed_log_sum(&asc_terms);

    let hl = SignedLog::from_f64(half.abs());
    let raw = ((kron - gauss) * hl).abs();
    let resabs = resabs * hl;
    let resasc = resasc * hl;

    let mut err = raw;
    if !resasc.is_zero() && !raw.is_zero() {
        // scale = (200 raw / resasc)^1.5, capped at 1
        let scale_ln = 1.5 * ((200.0f64).ln() + raw.ln_abs - resasc.ln_abs);
        err = if scale_ln < 0.0 { SignedLog::from_ln(resasc.ln_abs + scale_ln) } else { resasc };
    }
    // floor at 50 eps * |integral of |f||
    let floor = SignedLog::from_ln((50.0 * f64::EPSILON).ln() + resabs.ln_abs);
    if err < floor {
        err = floor;
    }

    PanelResult { value: kron * SignedLog::from_f64(half), err }
}

struct Segment {
    err_ln: f64,
    counter: u64,
    a: f64,
    b: f64,
    value: SignedLog,
    err: SignedLog,
}

impl PartialEq for Segment {
    fn eq(&self, other: &Self) -> bool {
        self.counter == other.counter
    }
}
impl Eq for Segment {}
impl PartialOrd for Segment {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Segment {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.err_ln
            .total_cmp(&other.err_ln)
            .then_with(|| other.counter.cmp(&self.counter))
    }
}

/// Adaptive 1-D integration of a signed-log integrand over [a, b].
///
/// `seeds` pre-splits the domain so narrow mass regions are never missed by
/// the first coarse panel.
pub fn integrate_1d<F: Fn(f64) -> SignedLog>(
    f: &F,
    a: f64,
    b: f64,
    tol_rel: f64,
    seeds: &[f64],
    max_panels: usize,
) -> QuadOutcome {
    let diag = Cell::new(Diagnostics::default());
    if b <= a || a.is_nan() || b.is_nan() {
        return QuadOutcome {
            value: SignedLog::ZERO,
            abs_err: SignedLog::ZERO,
            converged: true,
            diagnostics: diag.get(),
        };
    }

    let mut cuts: Vec<f64> = vec![a];
    for &s in seeds {
        if s > a && s < b {
            cuts.push(s);
        }
    }
    cuts.push(b);
    cuts.sort_by(f64::total_cmp);
    cuts.dedup();

    let mut heap: BinaryHeap<Segment> = BinaryHeap::new();
    let mut counter = 0u64;
    for w in cuts.windows(2) {
        // one unconditional bisection per seed interval primes the error estimates
        let mid = 0.5 * (w[0] + w[1]);
        for (lo, hi) in [(w[0], mid), (mid, w[1])] {
            let p = gk15(f, lo, hi, &diag);
            heap.push(Segment { err_ln: p.err.ln_abs, counter, a: lo, b: hi, value: p.value, err: p.err });
            counter += 1;
        }
    }

    let totals = |heap: &BinaryHeap<Segment>| -> (SignedLog, SignedLog) {
        let mut segs: Vec<&Segment> = heap.iter().collect();
        segs.sort_by(|x, y| x.a.total_cmp(&y.a));
        let vals: Vec<SignedLog> = segs.iter().map(|s| s.value).collect();
        let errs: Vec<SignedLog> = segs.iter().map(|s| s.err).collect();
        (signed_log_sum(&vals), signed_log_sum(&errs))
    };

    loop {
        let (value, err) = totals(&heap);
        let target = SignedLog::from_ln(tol_rel.ln() + value.abs().ln_abs);
        if err <= target || value.is_infinite() {
            return QuadOutcome { value, abs_err: err, converged: true, diagnostics: diag.get() };
        }
        if heap.len() >= max_panels {
            return QuadOutcome { value, abs_err: err, converged: false, diagnostics: diag.get() };
        }
        let worst = heap.pop().unwrap();
        if worst.b - worst.a <= f64::EPSILON * (worst.a.abs() + worst.b.abs() + 1.0) {
            // cannot subdivide further; accept what we have
            heap.push(worst);
            let (value, err) = totals(&heap);
            return QuadOutcome { value, abs_err: err, converged: true, diagnostics: diag.get() };
        }
        let mid = 0.5 * (worst.a + worst.b);
        for (lo, hi) in [(worst.a, mid), (mid, worst.b)] {
            let p = gk15(f, lo, hi, &diag);
            heap.push(Segment { err_ln: p.err.ln_abs, counter, a: lo, b: hi, value: p.value, err: p.err });
            counter += 1;
        }
    }
}

/// Default seed knots in chart coordinates; the mass of every chart sits
/// within a few units of the origin.
const CHART_SEEDS: [f64; 9] = [-32.0, -8.0, -2.0, 0.0, 2.0, 8.0, 32.0, 128.0, -128.0];

/// Floor for Exp-chart lower bounds: deep enough that even strongly
/// singular Gamma shapes keep their mass inside.
const EXP_CHART_FLOOR: f64 = -740.0;

/// A 1-D Lebesgue integral of a signed-log integrand (no measure attached).
pub fn integrate_lebesgue_1d<F: Fn(f64) -> SignedLog>(f: &F, a: f64, b: f64, tol_rel: f64) -> QuadOutcome {
    integrate_1d(f, a, b, tol_rel, &[], 600)
}

/// Partial Lebesgue integrals of `f` over [a, r_k] for a growing schedule.
pub fn lebesgue_tail_profile<F: Fn(f64) -> SignedLog>(
    f: &F,
    a: f64,
    radii: &[f64],
    tol_rel: f64,
) -> TailProfile {
    let mut partials = Vec::new();
    let mut errors = Vec::new();
    let mut lo = a;
    let mut acc = SignedLog::ZERO;
    let mut err_acc = SignedLog::ZERO;
    for &r in radii {
        let hi = r.max(lo);
        let out = integrate_1d(f, lo, hi, tol_rel, &[], 600);
        acc = acc + out.value;
        err_acc = err_acc + out.abs_err;
        partials.push(acc);
        errors.push(err_acc);
        lo = hi;
    }
    TailProfile::from_partials(radii.to_vec(), partials, errors)
}

/// Partial integrals over the balls ||x|| <= R_k with per-shell error bars.
/// `nan_evals` counts integrand evaluations that produced NaN (excluded
/// from the sums, reported rather than silently consumed).
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TailProfile {
    pub radii: Vec<f64>,
    pub partials: Vec<SignedLog>,
    pub increments: Vec<SignedLog>,
    pub errors: Vec<SignedLog>,
    #[serde(default)]
    pub nan_evals: u64,
}

impl TailProfile {
    pub fn from_partials(radii: Vec<f64>, partials: Vec<SignedLog>, errors: Vec<SignedLog>) -> Self {
        let mut increments = Vec::with_capacity(partials.len());
        let mut prev = SignedLog::ZERO;
        for &p in &partials {
            increments.push(p - prev);
            prev = p;
        }
        TailProfile { radii, partials, increments, errors, nan_evals: 0 }
    }

    pub fn shells(&self) -> usize {
        self.radii.len()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum FiniteOutcome {
    Finite,
    Infinite,
    Inconclusive,
}

/// Evidence-carrying verdict on whether a tail integral is finite.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FiniteVerdict {
    pub outcome: FiniteOutcome,
    /// Extrapolated value (partial + geometric remainder) when finite.
    pub value: Option<SignedLog>,
    pub err: Option<SignedLog>,
    pub fitted_ratio: Option<f64>,
    pub last_increments: Vec<SignedLog>,
    pub note: Option<String>,
}

impl FiniteVerdict {
    pub fn is_finite(&self) -> bool {
        self.outcome == FiniteOutcome::Finite
    }
    pub fn is_infinite(&self) -> bool {
        self.outcome == FiniteOutcome::Infinite
    }
}

/// Classifies a tail profile: geometric decay of the shell increments means
/// the integral is finite, nondecreasing increments mean it diverges, and
/// ratios inside the band stay honest as inconclusive.
pub fn classify_tail(profile: &TailProfile, tol_rel: f64) -> FiniteVerdict {
    let k = profile.shells();
    if k < 4 {
        return FiniteVerdict {
            outcome: FiniteOutcome::Inconclusive,
            value: None,
            err: None,
            fitted_ratio: None,
            last_increments: profile.increments.clone(),
            note: Some("fewer than 4 shells".into()),
        };
    }
    let total = *profile.partials.last().unwrap();
    let err_total = *profile.errors.last().unwrap();
    let last3: Vec<SignedLog> = profile.increments[k - 3..].to_vec();

    if profile.partials.iter().any(|p| p.is_infinite()) || last3.iter().any(|d| d.is_infinite()) {
        return FiniteVerdict {
            outcome: FiniteOutcome::Infinite,
            value: None,
            err: None,
            fitted_ratio: None,
            last_increments: last3,
            note: Some("integrand unbounded on a set of positive mass".into()),
        };
    }

    // noise floor: accumulated quadrature error plus relative epsilon of the total
    let floor = err_total + SignedLog::from_ln((f64::EPSILON.ln() + 8.0) + total.abs().ln_abs);

    // all remaining increments at the noise floor: the tail is exhausted
    if last3.iter().all(|d| d.abs() <= floor) {
        return FiniteVerdict {
            outcome: FiniteOutcome::Finite,
            value: Some(total),
            err: Some(err_total + floor),
            fitted_ratio: None,
            last_increments: last3,
            note: Some("tail exhausted to quadrature noise".into()),
        };
    }

    // nondecreasing increments over the last three shells: diverging
    let slack = 1.0 - 1e-9;
    let nondecreasing = last3.windows(2).all(|w| {
        w[1] >= w[0] * SignedLog::from_f64(slack) && w[1].sign >= 0 && w[0].sign >= 0
    });
    if nondecreasing {
        return FiniteVerdict {
            outcome: FiniteOutcome::Infinite,
            value: None,
            err: None,
            fitted_ratio: fitted_ratio(&last3),
            last_increments: last3,
            note: None,
        };
    }

    let ratio = fitted_ratio(&last3);
    if let Some(r) = ratio {
        if r < 1.0 - RATIO_BAND && r > 0.0 {
            let last = last3[2].abs();
            // geometric remainder estimate: d * r / (1 - r)
            let remainder = SignedLog::from_ln(last.ln_abs + r.ln() - (1.0 - r).ln());
            let bound = SignedLog::from_ln(tol_rel.ln() + total.abs().ln_abs) + floor;
            if remainder <= bound {
                return FiniteVerdict {
                    outcome: FiniteOutcome::Finite,
                    value: Some(total + remainder),
                    err: Some(err_total + remainder),
                    fitted_ratio: ratio,
                    last_increments: last3,
                    note: None,
                };
            }
        }
    }

    FiniteVerdict {
        outcome: FiniteOutcome::Inconclusive,
        value: None,
        err: None,
        fitted_ratio: ratio,
        last_increments: last3,
        note: None,
    }
}

fn fitted_ratio(last3: &[SignedLog]) -> Option<f64> {
    let d0 = last3[0].abs();
    let d2 = last3[2].abs();
    if d0.is_zero() || d2.is_zero() {
        return None;
    }
    Some((0.5 * (d2.ln_abs - d0.ln_abs)).exp())
}

/// A point integrand in signed-log form.
pub type LogIntegrand<'a> = dyn Fn(&[f64]) -> SignedLog + 'a;

// Exact atom sums: Neumaier-compensated f64 when every term is in range,
// signed-log accumulation otherwise.
fn discrete_sum(terms: &[SignedLog]) -> SignedLog {
    let mut sum = 0.0f64;
    let mut comp = 0.0f64;
    for t in terms {
        let v = t.to_f64();
        if !v.is_finite() && !(t.is_zero()) {
            return signed_log_sum(terms);
        }
        let s = sum + v;
        comp += if sum.abs() >= v.abs() { (sum - s) + v } else { (v - s) + sum };
        sum = s;
    }
    SignedLog::from_f64(sum + comp)
}

/// Integrates `f` against a measure over the whole space via a growing
/// chart-coordinate truncation schedule.
pub fn integrate(f: &LogIntegrand<'_>, spec: &MeasureSpec, settings: &QuadSettings) -> Result<QuadOutcome> {
    match spec {
        MeasureSpec::Discrete { atoms, .. } => {
            let terms: Vec<SignedLog> = atoms
                .iter()
                .map(|(p, m)| SignedLog::from_f64(*m) * f(p))
                .collect();
            Ok(QuadOutcome {
                value: discrete_sum(&terms),
                abs_err: SignedLog::ZERO,
                converged: true,
                diagnostics: Diagnostics { evals: atoms.len() as u64, nan_evals: 0 },
            })
        }
        MeasureSpec::Mixture { components } => {
            let mut value = SignedLog::ZERO;
            let mut err = SignedLog::ZERO;
            let mut diag = Diagnostics::default();
            let mut converged = true;
            for (w, c) in components {
                let out = integrate(f, c, settings)?;
                value = value + SignedLog::from_f64(*w) * out.value;
                err = err + SignedLog::from_f64(*w) * out.abs_err;
                diag.evals += out.diagnostics.evals;
                diag.nan_evals += out.diagnostics.nan_evals;
                converged &= out.converged;
            }
            Ok(QuadOutcome { value, abs_err: err, converged, diagnostics: diag })
        }
        MeasureSpec::Pushforward { inner, map } => {
            let g = move |x: &[f64]| -> SignedLog { f(&map.apply(x)) };
            integrate(&g, inner, settings)
        }
        _ => integrate_base(f, spec, settings, None),
    }
}

/// Integrates over the x-space ball ||x|| <= radius.
pub fn integrate_ball(
    f: &LogIntegrand<'_>,
    spec: &MeasureSpec,
    radius: f64,
    settings: &QuadSettings,
) -> Result<QuadOutcome> {
    match spec {
        MeasureSpec::Discrete { atoms, .. } => {
            let terms: Vec<SignedLog> = atoms
                .iter()
                .filter(|(p, _)| crate::measure::norm(p) <= radius)
                .map(|(p, m)| SignedLog::from_f64(*m) * f(p))
                .collect();
            Ok(QuadOutcome {
                value: discrete_sum(&terms),
                abs_err: SignedLog::ZERO,
                converged: true,
                diagnostics: Diagnostics { evals: atoms.len() as u64, nan_evals: 0 },
            })
        }
        MeasureSpec::Mixture { components } => {
            let mut value = SignedLog::ZERO;
            let mut err = SignedLog::ZERO;
            let mut diag = Diagnostics::default();
            let mut converged = true;
            for (w, c) in components {
                let out = integrate_ball(f, c, radius, settings)?;
                value = value + SignedLog::from_f64(*w) * out.value;
                err = err + SignedLog::from_f64(*w) * out.abs_err;
                diag.evals += out.diagnostics.evals;
                diag.nan_evals += out.diagnostics.nan_evals;
                converged &= out.converged;
            }
            Ok(QuadOutcome { value, abs_err: err, converged, diagnostics: diag })
        }
        MeasureSpec::Pushforward { inner, map } => {
            // fold the image-space ball indicator into the integrand
            let g = move |x: &[f64]| -> SignedLog {
                let y = map.apply(x);
                if crate::measure::norm(&y) <= radius {
                    f(&y)
                } else {
                    SignedLog::ZERO
                }
            };
            integrate(&g, inner, settings)
        }
        _ => integrate_base(f, spec, settings, Some(radius)),
    }
}

/// Core nested integration for measures with a density in base coordinates.
/// `ball` restricts to the x-space ball of that radius; otherwise the chart
/// truncation schedule exhausts the space.
fn integrate_base(
    f: &LogIntegrand<'_>,
    spec: &MeasureSpec,
    settings: &QuadSettings,
    ball: Option<f64>,
) -> Result<QuadOutcome> {
    let charts = spec
        .base_charts()
        .ok_or_else(|| Error::Unsupported("no base chart for this measure variant".into()))?;
    let n = charts.len();
    if n > 3 {
        return Err(Error::NonConverged(format!(
            "deterministic quadrature supports n <= 3, got {n} (use Monte Carlo mode)"
        )));
    }
    // cone-region densities integrate in dual coordinates
    let cone = match &spec.support().region {
        SupportRegion::Cone { cone } => Some(cone.clone()),
        _ => None,
    };
    let neg_mass: Cell<Option<(Vec<f64>, f64)>> = Cell::new(None);

    let grand = |u_box: f64| -> QuadOutcome {
        let evaluate = |u: &[f64]| -> SignedLog {
            // map chart coords to x and accumulate the jacobian
            let mut x = vec![0.0; n];
            let mut ln_jac = 0.0;
            for j in 0..n {
                x[j] = charts[j].0.to_x(u[j]);
                ln_jac += charts[j].0.ln_jacobian(u[j]);
            }
            let x_point: Vec<f64>;
            if let Some(c) = &cone {
                // u are dual coordinates scaled through the chart
                if x.iter().any(|&v| v < 0.0) {
                    return SignedLog::ZERO;
                }
                x_point = c.basis.combine(&x);
                ln_jac += c.basis.matrix().determinant().abs().ln();
            } else {
                x_point = x;
            }
            if let Some(r) = ball {
                if crate::measure::norm(&x_point) > r {
                    return SignedLog::ZERO;
                }
            }
            let dens = match spec.log_density(&x_point) {
                Ok(d) => d,
                Err(_) => return SignedLog::ZERO,
            };
            if dens.sign < 0 {
                neg_mass.set(Some((x_point.clone(), dens.to_f64())));
                return SignedLog::ZERO;
            }
            f(&x_point) * dens * SignedLog::from_ln(ln_jac)
        };

        // per-axis chart bounds: box in u intersected with the support
        // image; exact ball sections per axis when the chart is aligned
        // (no cone), so the integrand stays smooth across the domain
        let bounds = |depth: usize, u_prefix: &[f64]| -> (f64, f64) {
            let (chart, (s_lo, s_hi)) = &charts[depth];
            let mut lo = match chart {
                AxisChart::Exp { .. } => EXP_CHART_FLOOR,
                AxisChart::Linear { .. } => -u_box,
            };
            let mut hi = u_box;
            let u_s_lo = chart.from_x(*s_lo);
            let u_s_hi = chart.from_x(*s_hi);
            if u_s_lo.is_finite() {
                lo = lo.max(u_s_lo);
            }
            if u_s_hi.is_finite() {
                hi = hi.min(u_s_hi);
            }
            if let Some(r) = ball {
                if cone.is_none() {
                    let mut budget = r * r;
                    for (j, &u) in u_prefix.iter().enumerate() {
                        let xj = charts[j].0.to_x(u);
                        budget -= xj * xj;
                    }
                    if budget <= 0.0 {
                        return (0.0, 0.0);
                    }
                    let half = budget.sqrt();
                    let u_ball_hi = chart.from_x(half);
                    if u_ball_hi.is_finite() {
                        hi = hi.min(u_ball_hi);
                    }
                    if matches!(chart, AxisChart::Linear { .. }) {
                        let u_ball_lo = chart.from_x(-half);
                        if u_ball_lo.is_finite() {
                            lo = lo.max(u_ball_lo);
                        }
                    }
                } else {
                    // skew cone: keep the conservative envelope; the ball
                    // indicator in the integrand finishes the job
                    let u_ball_hi = chart.from_x(r);
                    if u_ball_hi.is_finite() {
                        hi = hi.min(u_ball_hi);
                    }
                }
            }
            (lo, hi)
        };

        nested_integrate(&evaluate, &bounds, n, settings.tol)
    };

    let out = if let Some(r) = ball {
        // the ball already truncates the domain; one pass suffices
        grand(r.max(settings.r0 * 32.0))
    } else {
        // expand the chart box until the increment is negligible
        let mut prev: Option<QuadOutcome> = None;
        let mut result: Option<QuadOutcome> = None;
        for k in 0..=settings.shells {
            let u_box = settings.r0 * (2.0f64).powi(k as i32);
            let cur = grand(u_box);
            if let Some(p) = &prev {
                let inc = (cur.value - p.value).abs();
                let target = SignedLog::from_ln(settings.tol.ln() + cur.value.abs().ln_abs)
                    + cur.abs_err
                    + SignedLog::from_ln(f64::EPSILON.ln() + cur.value.abs().ln_abs);
                if inc <= target {
                    result = Some(cur);
                    break;
                }
            }
            prev = Some(cur);
            if k == settings.shells {
                let mut last = prev.take().unwrap();
                last.converged = false;
                result = Some(last);
            }
        }
        result.unwrap()
    };

    if let Some((point, value)) = neg_mass.take() {
        if value < -1e-12 {
            return Err(Error::NegativeMass { point, value });
        }
    }
    Ok(out)
}

type BoundsFn<'a> = dyn Fn(usize, &[f64]) -> (f64, f64) + 'a;

fn nested_integrate(f: &LogIntegrand<'_>, bounds: &BoundsFn<'_>, n: usize, tol: f64) -> QuadOutcome {
    let diag_total = Cell::new(Diagnostics::default());
    let converged_all = Cell::new(true);

    fn level(
        f: &LogIntegrand<'_>,
        bounds: &BoundsFn<'_>,
        n: usize,
        prefix: &[f64],
        tol: f64,
        diag_total: &Cell<Diagnostics>,
        converged_all: &Cell<bool>,
    ) -> SignedLog {
        let depth = prefix.len();
        let (lo, hi) = bounds(depth, prefix);
        if hi <= lo {
            return SignedLog::ZERO;
        }
        if depth == n - 1 {
            let g = |u: f64| -> SignedLog {
                let mut p = Vec::with_capacity(prefix.len() + 1);
                p.extend_from_slice(prefix);
                p.push(u);
                f(&p)
            };
            let out = integrate_1d(&g, lo, hi, tol, &CHART_SEEDS, 700);
            accumulate(diag_total, converged_all, &out);
            return out.value;
        }
        let g = |u: f64| -> SignedLog {
            let mut p = prefix.to_vec();
            p.push(u);
            level(f, bounds, n, &p, tol * 0.5, diag_total, converged_all)
        };
        let out = integrate_1d(&g, lo, hi, tol, &CHART_SEEDS, 200);
        accumulate(diag_total, converged_all, &out);
        out.value
    }

    fn accumulate(diag_total: &Cell<Diagnostics>, converged_all: &Cell<bool>, out: &QuadOutcome) {
        let mut d = diag_total.get();
        d.evals += out.diagnostics.evals;
        d.nan_evals += out.diagnostics.nan_evals;
        diag_total.set(d);
        if !out.converged {
            converged_all.set(false);
        }
    }

    let value = level(f, bounds, n, &[], tol, &diag_total, &converged_all);
    // outer-level error estimate: the 1-D routine's own error applies to the
    // top level; inner noise is folded through the tolerance split
    QuadOutcome {
        value,
        abs_err: SignedLog::from_ln(tol.ln() + value.abs().ln_abs),
        converged: converged_all.get(),
        diagnostics: diag_total.get(),
    }
}

/// Partial integrals of a nonnegative integrand over growing x-space balls.
pub fn tail_profile(
    f: &LogIntegrand<'_>,
    spec: &MeasureSpec,
    settings: &QuadSettings,
) -> Result<TailProfile> {
    // the profile semantics assume a mu-a.e. nonnegative integrand;
    // checked by seeded sampling before any shell work
    {
        let mut rng = ChaCha8Rng::seed_from_u64(settings.seed ^ 0x7a11);
        for _ in 0..32 {
            let x = spec.sample(&mut rng);
            let v = f(&x);
            if v.sign < 0 && v.ln_abs > -60.0 {
                return Err(Error::InvalidCriterion(format!(
                    "tail integrand is negative at {x:?}"
                )));
            }
        }
    }
    let radii = settings.schedule();
    let mut partials = Vec::with_capacity(radii.len());
    let mut errors = Vec::with_capacity(radii.len());
    let mut err_acc = SignedLog::ZERO;
    let mut nan_evals = 0;
    for &r in &radii {
        let out = integrate_ball(f, spec, r, settings)?;
        err_acc = err_acc + out.abs_err;
        partials.push(out.value);
        errors.push(err_acc);
        nan_evals += out.diagnostics.nan_evals;
    }
    let mut profile = TailProfile::from_partials(radii, partials, errors);
    profile.nan_evals = nan_evals;
    Ok(profile)
}

/// Monte Carlo estimate of the integral of `f` (as plain f64) against the
/// measure; per-sample counter-based RNG streams keep the result independent
/// of evaluation order.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct McOutcome {
    pub mean: f64,
    pub std_error: f64,
    pub samples: u64,
    pub nan_evals: u64,
}

pub fn integrate_mc<F>(f: &F, spec: &MeasureSpec, settings: &QuadSettings) -> McOutcome
where
    F: Fn(&[f64]) -> f64 + Sync + ?Sized,
{
    let n_samples = settings.mc_samples;
    let mut sum = 0.0f64;
    let mut sum_sq = 0.0f64;
    let mut nan = 0u64;
    for i in 0..n_samples {
        let mut rng = ChaCha8Rng::seed_from_u64(settings.seed);
        rng.set_stream(i.wrapping_add(1));
        let x = spec.sample(&mut rng);
        let v = f(&x);
        if v.is_nan() {
            nan += 1;
            continue;
        }
        sum += v;
        sum_sq += v * v;
    }
    let m = n_samples.max(1) as f64;
    let mean = sum / m;
    let var = (sum_sq / m - mean * mean).max(0.0);
    McOutcome {
        mean,
        std_error: (var / m).sqrt(),
        samples: n_samples,
        nan_evals: nan,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measure::PushforwardMap;
    use approx::assert_relative_eq;

    fn one(_: &[f64]) -> SignedLog {
        SignedLog::ONE
    }

    #[test]
    fn normalization_of_families() {
        let s = QuadSettings::default();
        let cases: Vec<MeasureSpec> = vec![
            MeasureSpec::standard_normal(1),
            MeasureSpec::GaussianProduct { means: vec![1.0, -2.0], sds: vec![0.5, 2.0] },
            MeasureSpec::LogNormal1D { location: 0.0, scale: 1.0 },
            MeasureSpec::Gamma1D { shape: 2.0, scale: 1.0 },
            MeasureSpec::Gamma1D { shape: 0.5, scale: 2.0 },
            MeasureSpec::Exponential1D { rate: 1.0 },
            MeasureSpec::PerturbedLogNormal { theta: 1.0 },
        ];
        for spec in cases {
            let out = integrate(&one, &spec, &s).unwrap();
            assert!(out.converged, "{spec:?}");
            assert_relative_eq!(out.value.to_f64(), 1.0, max_relative = 1e-6);
        }
    }

    #[test]
    fn second_moment_of_standard_normal() {
        let s = QuadSettings::default();
        let spec = MeasureSpec::standard_normal(1);
        let f = |x: &[f64]| SignedLog::from_f64(x[0] * x[0]);
        let out = integrate(&f, &spec, &s).unwrap();
        assert_relative_eq!(out.value.to_f64(), 1.0, max_relative = 1e-8);
    }

    #[test]
    fn discrete_atom_sum_exact() {
        let s = QuadSettings::default();
        let spec = MeasureSpec::Discrete {
            atoms: vec![(vec![0.0], 0.3), (vec![1.0], 0.7)],
            support: None,
        };
        let out = integrate(&one, &spec, &s).unwrap();
        assert_eq!(out.value.to_f64(), 1.0);
        assert_eq!(out.abs_err, SignedLog::ZERO);
    }

    #[test]
    fn lognormal_high_moment_via_log_chart() {
        // E[x^20] = e^200, far past f64 overflow when squared in the
        // integrand; the log chart and signed-log sums keep it exact
        let s = QuadSettings::default();
        let spec = MeasureSpec::LogNormal1D { location: 0.0, scale: 1.0 };
        let f = |x: &[f64]| SignedLog::from_f64(x[0]).powi(20);
        let out = integrate(&f, &spec, &s).unwrap();
        assert!(out.converged);
        assert_relative_eq!(out.value.ln_abs, 200.0, max_relative = 1e-9);
    }

    #[test]
    fn gaussian_2d_product_moment() {
        let s = QuadSettings { tol: 1e-8, ..Default::default() };
        let spec = MeasureSpec::standard_normal(2);
        let f = |x: &[f64]| SignedLog::from_f64(x[0] * x[0] * x[1] * x[1]);
        let out = integrate(&f, &spec, &s).unwrap();
        assert_relative_eq!(out.value.to_f64(), 1.0, max_relative = 1e-6);
    }

    #[test]
    fn tail_profile_monotone_for_nonnegative() {
        let s = QuadSettings::default();
        let spec = MeasureSpec::standard_normal(1);
        let f = |x: &[f64]| SignedLog::from_ln(x[0].abs());
        let profile = tail_profile(&f, &spec, &s).unwrap();
        for w in profile.partials.windows(2) {
            assert!(w[1] >= w[0] * SignedLog::from_f64(1.0 - 1e-12));
        }
        let verdict = classify_tail(&profile, s.tol);
        assert_eq!(verdict.outcome, FiniteOutcome::Finite);
    }

    #[test]
    fn tail_profile_growth_detected() {
        // exp(3x^2/4) beats the gaussian density: divergent
        let s = QuadSettings::default();
        let spec = MeasureSpec::standard_normal(1);
        let f = |x: &[f64]| SignedLog::from_ln(0.75 * x[0] * x[0]);
        let profile = tail_profile(&f, &spec, &s).unwrap();
        let verdict = classify_tail(&profile, s.tol);
        assert_eq!(verdict.outcome, FiniteOutcome::Infinite);
        // while exp(x^2/4) is still integrable
        let g = |x: &[f64]| SignedLog::from_ln(0.25 * x[0] * x[0]);
        let profile = tail_profile(&g, &spec, &s).unwrap();
        assert_eq!(classify_tail(&profile, s.tol).outcome, FiniteOutcome::Finite);
    }

    #[test]
    fn zero_integrand_gives_zero_profile() {
        let s = QuadSettings::default();
        let spec = MeasureSpec::standard_normal(1);
        let f = |_: &[f64]| SignedLog::ZERO;
        let profile = tail_profile(&f, &spec, &s).unwrap();
        assert!(profile.partials.iter().all(|p| p.is_zero()));
        assert_eq!(classify_tail(&profile, s.tol).outcome, FiniteOutcome::Finite);
    }

    #[test]
    fn classify_synthetic_profiles() {
        let mk = |incs: &[f64]| {
            let mut partials = Vec::new();
            let mut acc = 0.0;
            for &d in incs {
                acc += d;
                partials.push(SignedLog::from_f64(acc));
            }
            let radii: Vec<f64> = (0..incs.len()).map(|k| 2.0f64.powi(k as i32)).collect();
            let errors = vec![SignedLog::from_f64(1e-14); incs.len()];
            TailProfile::from_partials(radii, partials, errors)
        };
        let fin = classify_tail(&mk(&[1.0, 0.1, 0.01, 0.001]), 1e-3);
        assert_eq!(fin.outcome, FiniteOutcome::Finite);
        assert_relative_eq!(fin.value.unwrap().to_f64(), 1.1111, max_relative = 1e-3);

        let inf = classify_tail(&mk(&[1.0, 2.0, 4.0, 8.0]), 1e-3);
        assert_eq!(inf.outcome, FiniteOutcome::Infinite);

        let inc = classify_tail(&mk(&[1.0, 0.9, 0.95, 0.9]), 1e-3);
        assert_eq!(inc.outcome, FiniteOutcome::Inconclusive);
    }

    #[test]
    fn linearity_of_integrate() {
        let s = QuadSettings::default();
        let spec = MeasureSpec::standard_normal(1);
        let f = |x: &[f64]| SignedLog::from_f64((x[0]).cos());
        let g = |x: &[f64]| SignedLog::from_f64(x[0] * x[0]);
        let (a, b) = (2.5, -1.25);
        let combo = |x: &[f64]| {
            SignedLog::from_f64(a) * f(x) + SignedLog::from_f64(b) * g(x)
        };
        let i_f = integrate(&f, &spec, &s).unwrap();
        let i_g = integrate(&g, &spec, &s).unwrap();
        let i_c = integrate(&combo, &spec, &s).unwrap();
        let lhs = i_c.value.to_f64();
        let rhs = a * i_f.value.to_f64() + b * i_g.value.to_f64();
        assert_relative_eq!(lhs, rhs, max_relative = 1e-7);
    }

    #[test]
    fn pushforward_moments_match_gamma_halves() {
        // Exponential(1) pushed through phi: E[y^m] = Gamma(m/2 + 1)
        let s = QuadSettings::default();
        let cone = crate::measure::Cone::standard(1);
        let spec = MeasureSpec::Pushforward {
            inner: Box::new(MeasureSpec::Exponential1D { rate: 1.0 }),
            map: PushforwardMap::PhiSqrt { cone },
        };
        for m in 0..=8u32 {
            let f = move |x: &[f64]| SignedLog::from_f64(x[0]).powi(m as i64);
            let out = integrate(&f, &spec, &s).unwrap();
            let expect = statrs::function::gamma::gamma(m as f64 / 2.0 + 1.0);
            assert_relative_eq!(out.value.to_f64(), expect, max_relative = 1e-8);
        }
    }

    #[test]
    fn mc_agrees_with_quadrature() {
        let s = QuadSettings { mc_samples: 200_000, ..Default::default() };
        let spec = MeasureSpec::standard_normal(2);
        let f64_f = |x: &[f64]| x[0] * x[0] + (x[1]).sin();
        let mc = integrate_mc(&f64_f, &spec, &s);
        let log_f = |x: &[f64]| SignedLog::from_f64(f64_f(x));
        let quad = integrate(&log_f, &spec, &s).unwrap();
        let diff = (mc.mean - quad.value.to_f64()).abs();
        assert!(diff <= 4.0 * mc.std_error, "diff {diff} vs 4se {}", 4.0 * mc.std_error);
        // seeded determinism
        let mc2 = integrate_mc(&f64_f, &spec, &s);
        assert_eq!(mc.mean.to_bits(), mc2.mean.to_bits());
    }

    #[test]
    fn negative_density_rejected() {
        let s = QuadSettings::default();
        let spec = MeasureSpec::DensityExpr {
            density: crate::expr::parse_expression("0 - 1", 1).unwrap(),
            support: crate::measure::SupportDescriptor {
                region: SupportRegion::Box { bounds: vec![(0.0, 1.0)] },
                contains_origin: None,
                discrete_unbounded: None,
            },
            ln_normalization: None,
        };
        assert!(matches!(integrate(&one, &spec, &s), Err(Error::NegativeMass { .. })));
    }
}
