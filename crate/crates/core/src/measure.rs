//! Measures on R^n: closed-form families, user densities, discrete atoms,
//! pushforwards and mixtures, with enough structure for the quadrature
//! engine to integrate against them and for the moment engine to exploit
//! closed forms.

use crate::error::{Error, Result};
use crate::expr::ExprAst;
use crate::logdomain::SignedLog;
use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::Distribution;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

pub const LN_2PI: f64 = 1.8378770664093453;

/// Scale-invariant determinant floor below which a basis is rejected.
pub const BASIS_DET_FLOOR: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TriState {
    Yes,
    No,
    Unknown,
}

/// A basis of R^n stored as the matrix whose columns are the basis vectors.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Basis {
    columns: Vec<Vec<f64>>,
}

impl Basis {
    pub fn new(columns: Vec<Vec<f64>>) -> Result<Self> {
        let n = columns.len();
        if n == 0 || columns.iter().any(|c| c.len() != n) {
            return Err(Error::Manifest {
                field: "basis".into(),
                message: "basis must be a square set of vectors".into(),
            });
        }
        let b = Basis { columns };
        let m = b.matrix();
        let det = m.determinant();
        let scale: f64 = b.columns.iter().map(|c| norm(c)).product();
        if det.abs() < BASIS_DET_FLOOR * scale.max(f64::MIN_POSITIVE) {
            return Err(Error::SingularBasis { det, floor: BASIS_DET_FLOOR * scale });
        }
        Ok(b)
    }

    pub fn standard(n: usize) -> Self {
        let columns = (0..n)
            .map(|j| (0..n).map(|i| if i == j { 1.0 } else { 0.0 }).collect())
            .collect();
        Basis { columns }
    }

    pub fn dimension(&self) -> usize {
        self.columns.len()
    }

    pub fn vector(&self, j: usize) -> &[f64] {
        &self.columns[j]
    }

    pub fn matrix(&self) -> DMatrix<f64> {
        let n = self.dimension();
        DMatrix::from_fn(n, n, |i, j| self.columns[j][i])
    }

    pub fn is_standard(&self) -> bool {
        let n = self.dimension();
        (0..n).all(|j| {
            (0..n).all(|i| {
                let expect = if i == j { 1.0 } else { 0.0 };
                self.columns[j][i] == expect
            })
        })
    }

    /// Dual basis {v'_j} with (v'_i, v_j) = delta_ij, i.e. the columns of
    /// the inverse-transpose.
    pub fn dual(&self) -> Result<Basis> {
        let m = self.matrix();
        let inv = m.clone().try_inverse().ok_or(Error::SingularBasis { det: m.determinant(), floor: 0.0 })?;
        let invt = inv.transpose();
        let n = self.dimension();
        Ok(Basis {
            columns: (0..n).map(|j| (0..n).map(|i| invt[(i, j)]).collect()).collect(),
        })
    }

    /// Coordinates of x with respect to this basis (x = sum y_j v_j).
    pub fn coordinates(&self, x: &[f64], dual: &Basis) -> Vec<f64> {
        (0..self.dimension()).map(|j| dot(dual.vector(j), x)).collect()
    }

    pub fn combine(&self, coords: &[f64]) -> Vec<f64> {
        let n = self.dimension();
        let mut x = vec![0.0; n];
        for (j, &c) in coords.iter().enumerate() {
            for (xi, col) in x.iter_mut().zip(&self.columns[j]) {
                *xi += c * col;
            }
        }
        let _ = n;
        x
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Positive convex cone spanned by a basis, with its dual basis cached.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Cone {
    pub basis: Basis,
    pub dual: Basis,
}

impl Cone {
    pub fn new(basis: Basis) -> Result<Self> {
        let dual = basis.dual()?;
        // biorthogonality sanity: (v'_i, v_j) = delta_ij to 1e-12
        let n = basis.dimension();
        for i in 0..n {
            for j in 0..n {
                let p = dot(dual.vector(i), basis.vector(j));
                let expect = if i == j { 1.0 } else { 0.0 };
                if (p - expect).abs() > 1e-12 {
                    return Err(Error::SingularBasis { det: p - expect, floor: 1e-12 });
                }
            }
        }
        Ok(Cone { basis, dual })
    }

    pub fn standard(n: usize) -> Self {
        Cone { basis: Basis::standard(n), dual: Basis::standard(n) }
    }

    pub fn dimension(&self) -> usize {
        self.basis.dimension()
    }

    /// Dual coordinates y_j = (v'_j, x); x lies in the cone iff all y_j >= 0.
    pub fn dual_coordinates(&self, x: &[f64]) -> Vec<f64> {
        self.basis.coordinates(x, &self.dual)
    }

    pub fn contains(&self, x: &[f64], slack: f64) -> bool {
        self.dual_coordinates(x).iter().all(|&y| y >= -slack)
    }
}

/// One-dimensional closed-form family, the building block of products.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub enum Measure1D {
    Gaussian { mean: f64, sd: f64 },
    LogNormal { location: f64, scale: f64 },
    Gamma { shape: f64, scale: f64 },
    Exponential { rate: f64 },
}

impl Measure1D {
    pub fn validate(&self) -> Result<()> {
        let ok = match self {
            Measure1D::Gaussian { sd, .. } => *sd > 0.0,
            Measure1D::LogNormal { scale, .. } => *scale > 0.0,
            Measure1D::Gamma { shape, scale } => *shape > 0.0 && *scale > 0.0,
            Measure1D::Exponential { rate } => *rate > 0.0,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidMeasure(format!("non-positive parameter in {self:?}")))
        }
    }

    pub fn log_density(&self, x: f64) -> SignedLog {
        match self {
            Measure1D::Gaussian { mean, sd } => {
                let z = (x - mean) / sd;
                SignedLog::from_ln(-0.5 * z * z - sd.ln() - 0.5 * LN_2PI)
            }
            Measure1D::LogNormal { location, scale } => {
                if x <= 0.0 {
                    return SignedLog::ZERO;
                }
                let z = (x.ln() - location) / scale;
                SignedLog::from_ln(-0.5 * z * z - x.ln() - scale.ln() - 0.5 * LN_2PI)
            }
            Measure1D::Gamma { shape, scale } => {
                if x <= 0.0 {
                    return SignedLog::ZERO;
                }
                SignedLog::from_ln(
                    (shape - 1.0) * x.ln() - x / scale - shape * scale.ln() - ln_gamma(*shape),
                )
            }
            Measure1D::Exponential { rate } => {
                if x < 0.0 {
                    return SignedLog::ZERO;
                }
                SignedLog::from_ln(rate.ln() - rate * x)
            }
        }
    }

    /// E[X^m] as a plain f64 when the value fits the range: a few ulps of
    /// accuracy, which Gram-matrix conditioning demands. None on overflow.
    pub fn moment_f64(&self, m: u32) -> Option<f64> {
        let v = match self {
            Measure1D::Gaussian { mean, sd } => {
                if m == 0 {
                    return Some(1.0);
                }
                // M_m = mean*M_{m-1} + (m-1)*sd^2*M_{m-2}
                let var = sd * sd;
                let mut prev = 1.0f64;
                let mut cur = *mean;
                for k in 2..=m {
                    let next = mean * cur + (k - 1) as f64 * var * prev;
                    prev = cur;
                    cur = next;
                }
                cur
            }
            Measure1D::LogNormal { location, scale } => {
                let mf = m as f64;
                (mf * location + 0.5 * mf * mf * scale * scale).exp()
            }
            Measure1D::Gamma { shape, scale } => {
                // rising factorial: scale^m * prod_{i<m} (shape + i)
                let mut v = 1.0f64;
                for i in 0..m {
                    v *= scale * (shape + i as f64);
                }
                v
            }
            Measure1D::Exponential { rate } => {
                return Measure1D::Gamma { shape: 1.0, scale: 1.0 / rate }.moment_f64(m);
            }
        };
        v.is_finite().then_some(v)
    }

    /// E[X^m] in signed-log form; survives any magnitude.
    pub fn moment(&self, m: u32) -> SignedLog {
        if let Some(v) = self.moment_f64(m) {
            return SignedLog::from_f64(v);
        }
        match self {
            Measure1D::Gaussian { mean, sd } => {
                let mu = SignedLog::from_f64(*mean);
                let var = SignedLog::from_f64(sd * sd);
                let mut prev = SignedLog::ONE;
                let mut cur = mu;
                for k in 2..=m {
                    let next = mu * cur + SignedLog::from_f64((k - 1) as f64) * var * prev;
                    prev = cur;
                    cur = next;
                }
                cur
            }
            Measure1D::LogNormal { location, scale } => {
                let mf = m as f64;
                SignedLog::from_ln(mf * location + 0.5 * mf * mf * scale * scale)
            }
            Measure1D::Gamma { shape, scale } => {
                let mf = m as f64;
                SignedLog::from_ln(mf * scale.ln() + ln_gamma(shape + mf) - ln_gamma(*shape))
            }
            Measure1D::Exponential { rate } => {
                Measure1D::Gamma { shape: 1.0, scale: 1.0 / rate }.moment(m)
            }
        }
    }

    /// E[|X|^s] for real s >= 0 when a closed form exists.
    pub fn abs_moment(&self, s: f64) -> Option<SignedLog> {
        // prefer an in-range f64 evaluation for the same conditioning
        // reason as `moment`
        let from_ln_guarded = |ln_v: f64| {
            if ln_v < 700.0 {
                SignedLog::from_f64(ln_v.exp())
            } else {
                SignedLog::from_ln(ln_v)
            }
        };
        match self {
            Measure1D::Gaussian { mean, sd } => {
                if *mean != 0.0 {
                    return None;
                }
                // E|X|^s = sd^s 2^{s/2} Gamma((s+1)/2) / sqrt(pi)
                Some(from_ln_guarded(
                    s * sd.ln() + 0.5 * s * std::f64::consts::LN_2 + ln_gamma((s + 1.0) / 2.0)
                        - 0.5 * std::f64::consts::PI.ln(),
                ))
            }
            Measure1D::LogNormal { location, scale } => {
                Some(SignedLog::from_ln(s * location + 0.5 * s * s * scale * scale))
            }
            Measure1D::Gamma { shape, scale } => {
                if s == s.floor() && (0.0..4096.0).contains(&s) {
                    return Some(self.moment(s as u32));
                }
                Some(from_ln_guarded(s * scale.ln() + ln_gamma(shape + s) - ln_gamma(*shape)))
            }
            Measure1D::Exponential { rate } => {
                Measure1D::Gamma { shape: 1.0, scale: 1.0 / rate }.abs_moment(s)
            }
        }
    }

    pub fn chart(&self) -> AxisChart {
        match self {
            Measure1D::Gaussian { mean, sd } => AxisChart::Linear { center: *mean, scale: *sd },
            Measure1D::LogNormal { location, scale } => {
                AxisChart::Exp { log_base: *location, scale: *scale }
            }
            Measure1D::Gamma { scale, .. } => AxisChart::Exp { log_base: scale.ln(), scale: 1.0 },
            Measure1D::Exponential { rate } => AxisChart::Exp { log_base: -rate.ln(), scale: 1.0 },
        }
    }

    pub fn support_interval(&self) -> (f64, f64) {
        match self {
            Measure1D::Gaussian { .. } => (f64::NEG_INFINITY, f64::INFINITY),
            _ => (0.0, f64::INFINITY),
        }
    }

    pub fn sample<R: Rng>(&self, rng: &mut R) -> f64 {
        match self {
            Measure1D::Gaussian { mean, sd } => {
                rand_distr::Normal::new(*mean, *sd).unwrap().sample(rng)
            }
            Measure1D::LogNormal { location, scale } => {
                let z: f64 = rand_distr::StandardNormal.sample(rng);
                (location + scale * z).exp()
            }
            Measure1D::Gamma { shape, scale } => {
                rand_distr::Gamma::new(*shape, *scale).unwrap().sample(rng)
            }
            Measure1D::Exponential { rate } => rand_distr::Exp::new(*rate).unwrap().sample(rng),
        }
    }
}

/// Monotone per-axis coordinate map used by the quadrature engine.
#[derive(Clone, Copy, Debug)]
pub enum AxisChart {
    /// x = center + scale * u
    Linear { center: f64, scale: f64 },
    /// x = exp(log_base + scale * u); the image is (0, inf)
    Exp { log_base: f64, scale: f64 },
}

impl AxisChart {
    pub fn to_x(&self, u: f64) -> f64 {
        match self {
            AxisChart::Linear { center, scale } => center + scale * u,
            AxisChart::Exp { log_base, scale } => (log_base + scale * u).exp(),
        }
    }

    pub fn from_x(&self, x: f64) -> f64 {
        match self {
            AxisChart::Linear { center, scale } => (x - center) / scale,
            AxisChart::Exp { log_base, scale } => {
                if x <= 0.0 {
                    f64::NEG_INFINITY
                } else {
                    (x.ln() - log_base) / scale
                }
            }
        }
    }

    /// ln |dx/du| at u.
    pub fn ln_jacobian(&self, u: f64) -> f64 {
        match self {
            AxisChart::Linear { scale, .. } => scale.abs().ln(),
            AxisChart::Exp { log_base, scale } => scale.abs().ln() + log_base + scale * u,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub enum SupportRegion {
    AllSpace,
    Halfline,
    Box { bounds: Vec<(f64, f64)> },
    Cone { cone: Cone },
    Predicate { predicate: ExprAst },
}

/// Support of a measure plus per-direction structural flags. Flags default
/// to `Unknown` and may be declared by the user for variants where the
/// structure alone cannot decide.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SupportDescriptor {
    pub region: SupportRegion,
    pub contains_origin: Option<Vec<TriState>>,
    pub discrete_unbounded: Option<Vec<TriState>>,
}

impl SupportDescriptor {
    pub fn all_space() -> Self {
        SupportDescriptor { region: SupportRegion::AllSpace, contains_origin: None, discrete_unbounded: None }
    }

    pub fn halfline() -> Self {
        SupportDescriptor { region: SupportRegion::Halfline, contains_origin: None, discrete_unbounded: None }
    }
}

/// How a pushforward transforms points of the inner measure.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub enum PushforwardMap {
    /// x = sum y_j v_j (y_j >= 0) maps to sum sqrt(y_j) v_j.
    PhiSqrt { cone: Cone },
    /// Sign flips of the dual coordinates: y_j -> (-1)^{flips_j} y_j.
    SignFlip { cone: Cone, flips: Vec<bool> },
}

impl PushforwardMap {
    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        match self {
            PushforwardMap::PhiSqrt { cone } => {
                let y = cone.dual_coordinates(x);
                let mapped: Vec<f64> = y.iter().map(|&t| t.max(0.0).sqrt()).collect();
                cone.basis.combine(&mapped)
            }
            PushforwardMap::SignFlip { cone, flips } => {
                let y = cone.dual_coordinates(x);
                let mapped: Vec<f64> =
                    y.iter().zip(flips).map(|(&t, &f)| if f { -t } else { t }).collect();
                cone.basis.combine(&mapped)
            }
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub enum MeasureSpec {
    GaussianProduct { means: Vec<f64>, sds: Vec<f64> },
    LogNormal1D { location: f64, scale: f64 },
    Gamma1D { shape: f64, scale: f64 },
    Exponential1D { rate: f64 },
    ProductOf1D { factors: Vec<Measure1D> },
    DensityExpr { density: ExprAst, support: SupportDescriptor, ln_normalization: Option<f64> },
    Discrete { atoms: Vec<(Vec<f64>, f64)>, support: Option<SupportDescriptor> },
    /// LogNormal(0,1) density multiplied by 1 + theta*sin(2*pi*ln x): a
    /// family sharing every moment with LogNormal(0,1).
    PerturbedLogNormal { theta: f64 },
    Pushforward { inner: Box<MeasureSpec>, map: PushforwardMap },
    Mixture { components: Vec<(f64, MeasureSpec)> },
}

/// The classical moment-matched perturbation of the standard lognormal.
pub fn moment_matched_family(theta: f64) -> Result<MeasureSpec> {
    if !(-1.0..=1.0).contains(&theta) {
        return Err(Error::InvalidMeasure(format!(
            "perturbed lognormal requires |theta| <= 1 (density would go negative), got {theta}"
        )));
    }
    Ok(MeasureSpec::PerturbedLogNormal { theta })
}

impl MeasureSpec {
    pub fn standard_normal(n: usize) -> Self {
        MeasureSpec::GaussianProduct { means: vec![0.0; n], sds: vec![1.0; n] }
    }

    pub fn dimension(&self) -> usize {
        match self {
            MeasureSpec::GaussianProduct { means, .. } => means.len(),
            MeasureSpec::LogNormal1D { .. }
            | MeasureSpec::Gamma1D { .. }
            | MeasureSpec::Exponential1D { .. }
            | MeasureSpec::PerturbedLogNormal { .. } => 1,
            MeasureSpec::ProductOf1D { factors } => factors.len(),
            MeasureSpec::DensityExpr { density, .. } => density.dimension,
            MeasureSpec::Discrete { atoms, .. } => atoms.first().map_or(0, |(p, _)| p.len()),
            MeasureSpec::Pushforward { inner, .. } => inner.dimension(),
            MeasureSpec::Mixture { components } => {
                components.first().map_or(0, |(_, c)| c.dimension())
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            MeasureSpec::GaussianProduct { means, sds } => {
                if means.len() != sds.len() || means.is_empty() {
                    return Err(Error::InvalidMeasure("gaussian mean/sd length mismatch".into()));
                }
                if sds.iter().any(|s| *s <= 0.0) {
                    return Err(Error::InvalidMeasure("gaussian sd must be positive".into()));
                }
                Ok(())
            }
            MeasureSpec::LogNormal1D { scale, .. } => {
                if *scale <= 0.0 {
                    Err(Error::InvalidMeasure("lognormal scale must be positive".into()))
                } else {
                    Ok(())
                }
            }
            MeasureSpec::Gamma1D { shape, scale } => {
                Measure1D::Gamma { shape: *shape, scale: *scale }.validate()
            }
            MeasureSpec::Exponential1D { rate } => {
                Measure1D::Exponential { rate: *rate }.validate()
            }
            MeasureSpec::ProductOf1D { factors } => {
                if factors.is_empty() {
                    return Err(Error::InvalidMeasure("empty product".into()));
                }
                factors.iter().try_for_each(|f| f.validate())
            }
            MeasureSpec::DensityExpr { .. } => Ok(()),
            MeasureSpec::Discrete { atoms, .. } => {
                if atoms.is_empty() {
                    return Err(Error::InvalidMeasure("discrete measure needs atoms".into()));
                }
                if atoms.iter().any(|(_, m)| *m <= 0.0) {
                    return Err(Error::InvalidMeasure("atom masses must be strictly positive".into()));
                }
                let n = atoms[0].0.len();
                if atoms.iter().any(|(p, _)| p.len() != n) {
                    return Err(Error::InvalidMeasure("atom dimension mismatch".into()));
                }
                for (i, (p, _)) in atoms.iter().enumerate() {
                    for (q, _) in atoms.iter().skip(i + 1) {
                        if p == q {
                            return Err(Error::InvalidMeasure(format!("duplicate atom at {p:?}")));
                        }
                    }
                }
                Ok(())
            }
            MeasureSpec::PerturbedLogNormal { theta } => {
                if !(-1.0..=1.0).contains(theta) {
                    Err(Error::InvalidMeasure("perturbed lognormal requires |theta| <= 1".into()))
                } else {
                    Ok(())
                }
            }
            MeasureSpec::Pushforward { inner, map } => {
                inner.validate()?;
                let n = inner.dimension();
                let cone_dim = match map {
                    PushforwardMap::PhiSqrt { cone } => cone.dimension(),
                    PushforwardMap::SignFlip { cone, flips } => {
                        if flips.len() != cone.dimension() {
                            return Err(Error::InvalidMeasure("sign-flip length mismatch".into()));
                        }
                        cone.dimension()
                    }
                };
                if cone_dim != n {
                    return Err(Error::InvalidMeasure("pushforward cone dimension mismatch".into()));
                }
                Ok(())
            }
            MeasureSpec::Mixture { components } => {
                if components.is_empty() {
                    return Err(Error::InvalidMeasure("empty mixture".into()));
                }
                if components.iter().any(|(w, _)| *w <= 0.0) {
                    return Err(Error::InvalidMeasure("mixture weights must be positive".into()));
                }
                let n = components[0].1.dimension();
                for (_, c) in components {
                    c.validate()?;
                    if c.dimension() != n {
                        return Err(Error::InvalidMeasure("mixture dimension mismatch".into()));
                    }
                }
                Ok(())
            }
        }
    }

    /// Radon-Nikodym density w.r.t. Lebesgue measure, in signed-log form;
    /// zero outside the support. Discrete measures have no density.
    pub fn log_density(&self, x: &[f64]) -> Result<SignedLog> {
        match self {
            MeasureSpec::GaussianProduct { means, sds } => {
                let mut acc = SignedLog::ONE;
                for j in 0..means.len() {
                    acc = acc * Measure1D::Gaussian { mean: means[j], sd: sds[j] }.log_density(x[j]);
                }
                Ok(acc)
            }
            MeasureSpec::LogNormal1D { location, scale } => {
                Ok(Measure1D::LogNormal { location: *location, scale: *scale }.log_density(x[0]))
            }
            MeasureSpec::Gamma1D { shape, scale } => {
                Ok(Measure1D::Gamma { shape: *shape, scale: *scale }.log_density(x[0]))
            }
            MeasureSpec::Exponential1D { rate } => {
                Ok(Measure1D::Exponential { rate: *rate }.log_density(x[0]))
            }
            MeasureSpec::ProductOf1D { factors } => {
                let mut acc = SignedLog::ONE;
                for (j, f) in factors.iter().enumerate() {
                    acc = acc * f.log_density(x[j]);
                }
                Ok(acc)
            }
            MeasureSpec::DensityExpr { density, support, ln_normalization } => {
                if !support_contains(support, x) {
                    return Ok(SignedLog::ZERO);
                }
                let raw = density.eval_log(x);
                let norm = SignedLog::from_ln(-ln_normalization.unwrap_or(0.0));
                Ok(raw * norm)
            }
            MeasureSpec::Discrete { .. } => {
                Err(Error::Unsupported("discrete measures have no Lebesgue density".into()))
            }
            MeasureSpec::PerturbedLogNormal { theta } => {
                let base = Measure1D::LogNormal { location: 0.0, scale: 1.0 }.log_density(x[0]);
                if base.is_zero() {
                    return Ok(SignedLog::ZERO);
                }
                let factor = 1.0 + theta * (2.0 * std::f64::consts::PI * x[0].ln()).sin();
                Ok(base * SignedLog::from_f64(factor.max(0.0)))
            }
            MeasureSpec::Pushforward { inner, map } => match map {
                PushforwardMap::PhiSqrt { cone } => {
                    let u = cone.dual_coordinates(x);
                    if u.iter().any(|&t| t < 0.0) {
                        return Ok(SignedLog::ZERO);
                    }
                    // density of T_* mu at x: rho(V u^2) * prod 2|u_j|
                    let pre: Vec<f64> = u.iter().map(|&t| t * t).collect();
                    let pre_x = cone.basis.combine(&pre);
                    let mut jac = SignedLog::ONE;
                    for &t in &u {
                        jac = jac * SignedLog::from_f64(2.0 * t);
                    }
                    Ok(inner.log_density(&pre_x)? * jac)
                }
                PushforwardMap::SignFlip { cone, flips } => {
                    let y = cone.dual_coordinates(x);
                    let pre: Vec<f64> =
                        y.iter().zip(flips).map(|(&t, &f)| if f { -t } else { t }).collect();
                    let pre_x = cone.basis.combine(&pre);
                    inner.log_density(&pre_x)
                }
            },
            MeasureSpec::Mixture { components } => {
                let mut acc = SignedLog::ZERO;
                for (w, c) in components {
                    acc = acc + SignedLog::from_f64(*w) * c.log_density(x)?;
                }
                Ok(acc)
            }
        }
    }

    /// Density as a plain f64 (may underflow for deep tails).
    pub fn density_at(&self, x: &[f64]) -> Result<f64> {
        Ok(self.log_density(x)?.to_f64())
    }

    /// Closed-form directional moment E[(e_j, x)^m] along a standard axis,
    /// when one exists. Returns None where quadrature is required.
    pub fn closed_form_moment(&self, axis: usize, m: u32) -> Option<SignedLog> {
        match self {
            MeasureSpec::GaussianProduct { means, sds } => {
                Some(Measure1D::Gaussian { mean: means[axis], sd: sds[axis] }.moment(m))
            }
            MeasureSpec::LogNormal1D { location, scale } => {
                Some(Measure1D::LogNormal { location: *location, scale: *scale }.moment(m))
            }
            MeasureSpec::Gamma1D { shape, scale } => {
                Some(Measure1D::Gamma { shape: *shape, scale: *scale }.moment(m))
            }
            MeasureSpec::Exponential1D { rate } => {
                Some(Measure1D::Exponential { rate: *rate }.moment(m))
            }
            MeasureSpec::ProductOf1D { factors } => Some(factors[axis].moment(m)),
            MeasureSpec::Discrete { atoms, .. } => {
                let terms: Vec<SignedLog> = atoms
                    .iter()
                    .map(|(p, mass)| {
                        SignedLog::from_f64(*mass) * SignedLog::from_f64(p[axis]).powi(m as i64)
                    })
                    .collect();
                Some(crate::logdomain::signed_log_sum(&terms))
            }
            // no closed form on purpose: the moment-match against the
            // lognormal is established by quadrature
            MeasureSpec::PerturbedLogNormal { .. } => None,
            MeasureSpec::DensityExpr { .. } => None,
            MeasureSpec::Pushforward { inner, map } => match map {
                PushforwardMap::PhiSqrt { cone } => {
                    if !cone.basis.is_standard() {
                        return None;
                    }
                    // E[(e_j, phi(x))^m] = E[y_j^{m/2}] over the cone
                    inner.closed_form_abs_moment(axis, m as f64 / 2.0)
                }
                PushforwardMap::SignFlip { cone, flips } => {
                    if !cone.basis.is_standard() {
                        return None;
                    }
                    let v = inner.closed_form_moment(axis, m)?;
                    if flips[axis] && m % 2 == 1 {
                        Some(-v)
                    } else {
                        Some(v)
                    }
                }
            },
            MeasureSpec::Mixture { components } => {
                let mut acc = SignedLog::ZERO;
                for (w, c) in components {
                    acc = acc + SignedLog::from_f64(*w) * c.closed_form_moment(axis, m)?;
                }
                Some(acc)
            }
        }
    }

    /// Closed-form directional moment as an exact-precision f64 when the
    /// value is in range; used where conditioning punishes log storage.
    pub fn closed_form_moment_f64(&self, axis: usize, m: u32) -> Option<f64> {
        match self {
            MeasureSpec::Discrete { atoms, .. } => {
                let mut sum = 0.0f64;
                let mut comp = 0.0f64;
                for (p, mass) in atoms {
                    let v = mass * p[axis].powi(m as i32);
                    if !v.is_finite() {
                        return None;
                    }
                    let s = sum + v;
                    comp += if sum.abs() >= v.abs() { (sum - s) + v } else { (v - s) + sum };
                    sum = s;
                }
                Some(sum + comp)
            }
            MeasureSpec::Mixture { components } => {
                let mut acc = 0.0f64;
                for (w, c) in components {
                    acc += w * c.closed_form_moment_f64(axis, m)?;
                }
                acc.is_finite().then_some(acc)
            }
            _ => self.marginal_1d(axis).and_then(|f| f.moment_f64(m)),
        }
    }

    /// Closed-form absolute moment E[|x_j|^s] for real s >= 0.
    pub fn closed_form_abs_moment(&self, axis: usize, s: f64) -> Option<SignedLog> {
        match self {
            MeasureSpec::GaussianProduct { means, sds } => {
                Measure1D::Gaussian { mean: means[axis], sd: sds[axis] }.abs_moment(s)
            }
            MeasureSpec::LogNormal1D { location, scale } => {
                Measure1D::LogNormal { location: *location, scale: *scale }.abs_moment(s)
            }
            MeasureSpec::Gamma1D { shape, scale } => {
                Measure1D::Gamma { shape: *shape, scale: *scale }.abs_moment(s)
            }
            MeasureSpec::Exponential1D { rate } => {
                Measure1D::Exponential { rate: *rate }.abs_moment(s)
            }
            MeasureSpec::ProductOf1D { factors } => factors[axis].abs_moment(s),
            MeasureSpec::Discrete { atoms, .. } => {
                let terms: Vec<SignedLog> = atoms
                    .iter()
                    .map(|(p, mass)| {
                        SignedLog::from_f64(*mass) * SignedLog::from_f64(p[axis]).abs().abs_powf(s)
                    })
                    .collect();
                Some(crate::logdomain::signed_log_sum(&terms))
            }
            _ => None,
        }
    }

    /// Marginal 1-D factor along a standard axis, for measures that are
    /// products of independent one-dimensional families.
    pub fn marginal_1d(&self, axis: usize) -> Option<Measure1D> {
        match self {
            MeasureSpec::GaussianProduct { means, sds } => {
                Some(Measure1D::Gaussian { mean: means[axis], sd: sds[axis] })
            }
            MeasureSpec::LogNormal1D { location, scale } => {
                Some(Measure1D::LogNormal { location: *location, scale: *scale })
            }
            MeasureSpec::Gamma1D { shape, scale } => {
                Some(Measure1D::Gamma { shape: *shape, scale: *scale })
            }
            MeasureSpec::Exponential1D { rate } => Some(Measure1D::Exponential { rate: *rate }),
            MeasureSpec::ProductOf1D { factors } => factors.get(axis).cloned(),
            _ => None,
        }
    }

    /// Per-axis integration charts and support intervals for variants with
    /// a density in base coordinates. Pushforward/mixture/discrete variants
    /// are handled structurally by the integrator instead.
    pub fn base_charts(&self) -> Option<Vec<(AxisChart, (f64, f64))>> {
        match self {
            MeasureSpec::GaussianProduct { .. }
            | MeasureSpec::LogNormal1D { .. }
            | MeasureSpec::Gamma1D { .. }
            | MeasureSpec::Exponential1D { .. }
            | MeasureSpec::ProductOf1D { .. } => {
                let n = self.dimension();
                Some(
                    (0..n)
                        .map(|j| {
                            let f = self.marginal_1d(j).unwrap();
                            (f.chart(), f.support_interval())
                        })
                        .collect(),
                )
            }
            MeasureSpec::PerturbedLogNormal { .. } => {
                let f = Measure1D::LogNormal { location: 0.0, scale: 1.0 };
                Some(vec![(f.chart(), f.support_interval())])
            }
            MeasureSpec::DensityExpr { density, support, .. } => {
                let n = density.dimension;
                let per_axis = |j: usize| match &support.region {
                    SupportRegion::AllSpace | SupportRegion::Predicate { .. } => {
                        (AxisChart::Linear { center: 0.0, scale: 1.0 }, (f64::NEG_INFINITY, f64::INFINITY))
                    }
                    SupportRegion::Halfline => {
                        (AxisChart::Exp { log_base: 0.0, scale: 1.0 }, (0.0, f64::INFINITY))
                    }
                    SupportRegion::Box { bounds } => {
                        let (a, b) = bounds[j];
                        (AxisChart::Linear { center: 0.0, scale: 1.0 }, (a, b))
                    }
                    // cone handled by the integrator in dual coordinates
                    SupportRegion::Cone { .. } => {
                        (AxisChart::Linear { center: 0.0, scale: 1.0 }, (f64::NEG_INFINITY, f64::INFINITY))
                    }
                };
                Some((0..n).map(per_axis).collect())
            }
            MeasureSpec::Discrete { .. }
            | MeasureSpec::Pushforward { .. }
            | MeasureSpec::Mixture { .. } => None,
        }
    }

    pub fn support(&self) -> SupportDescriptor {
        match self {
            MeasureSpec::GaussianProduct { .. } => SupportDescriptor::all_space(),
            MeasureSpec::LogNormal1D { .. }
            | MeasureSpec::Gamma1D { .. }
            | MeasureSpec::Exponential1D { .. }
            | MeasureSpec::PerturbedLogNormal { .. } => SupportDescriptor::halfline(),
            MeasureSpec::ProductOf1D { factors } => {
                if factors.iter().all(|f| matches!(f, Measure1D::Gaussian { .. })) {
                    SupportDescriptor::all_space()
                } else if factors.iter().all(|f| !matches!(f, Measure1D::Gaussian { .. })) {
                    SupportDescriptor::halfline()
                } else {
                    let bounds = factors.iter().map(|f| f.support_interval()).collect();
                    SupportDescriptor {
                        region: SupportRegion::Box { bounds },
                        contains_origin: None,
                        discrete_unbounded: None,
                    }
                }
            }
            MeasureSpec::DensityExpr { support, .. } => support.clone(),
            MeasureSpec::Discrete { support, .. } => {
                support.clone().unwrap_or_else(SupportDescriptor::all_space)
            }
            MeasureSpec::Pushforward { inner, .. } => inner.support(),
            MeasureSpec::Mixture { components } => components[0].1.support(),
        }
    }

    /// Whether the closed support along each axis stays inside the given cone.
    pub fn supported_in(&self, cone: &Cone) -> bool {
        match self {
            MeasureSpec::Discrete { atoms, .. } => {
                atoms.iter().all(|(p, _)| cone.contains(p, 1e-12))
            }
            MeasureSpec::Pushforward { inner, map } => match map {
                PushforwardMap::PhiSqrt { .. } => inner.supported_in(cone),
                PushforwardMap::SignFlip { .. } => false,
            },
            MeasureSpec::Mixture { components } => {
                components.iter().all(|(_, c)| c.supported_in(cone))
            }
            _ => {
                if !cone.basis.is_standard() {
                    return matches!(self.support().region, SupportRegion::Cone { .. });
                }
                matches!(
                    self.support().region,
                    SupportRegion::Halfline | SupportRegion::Cone { .. }
                ) || self.dimension() == 0
            }
        }
    }

    /// Best-effort flags for the marginal distribution along cone
    /// direction j (projection onto the dual vector v'_j).
    pub fn marginal_support(&self, cone: &Cone, direction: usize) -> MarginalFlags {
        let declared = |support: &SupportDescriptor| -> Option<MarginalFlags> {
            let co = support.contains_origin.as_ref().and_then(|v| v.get(direction).copied());
            let du = support.discrete_unbounded.as_ref().and_then(|v| v.get(direction).copied());
            if co.is_some() || du.is_some() {
                Some(MarginalFlags {
                    contains_origin: co.unwrap_or(TriState::Unknown),
                    discrete_unbounded: du.unwrap_or(TriState::Unknown),
                })
            } else {
                None
            }
        };
        match self {
            MeasureSpec::LogNormal1D { .. }
            | MeasureSpec::Gamma1D { .. }
            | MeasureSpec::Exponential1D { .. }
            | MeasureSpec::PerturbedLogNormal { .. } => MarginalFlags {
                // flags are defined on the closed support: [0, inf) contains 0
                contains_origin: TriState::Yes,
                discrete_unbounded: TriState::No,
            },
            MeasureSpec::GaussianProduct { .. } => MarginalFlags {
                contains_origin: TriState::Yes,
                discrete_unbounded: TriState::No,
            },
            MeasureSpec::ProductOf1D { .. } => MarginalFlags {
                contains_origin: TriState::Yes,
                discrete_unbounded: TriState::No,
            },
            MeasureSpec::DensityExpr { support, .. } => {
                declared(support).unwrap_or(match support.region {
                    // continuous density: never a discrete set
                    SupportRegion::Predicate { .. } => MarginalFlags {
                        contains_origin: TriState::Unknown,
                        discrete_unbounded: TriState::Unknown,
                    },
                    _ => MarginalFlags {
                        contains_origin: TriState::Unknown,
                        discrete_unbounded: TriState::No,
                    },
                })
            }
            MeasureSpec::Discrete { atoms, support } => {
                if let Some(s) = support {
                    if let Some(f) = declared(s) {
                        return f;
                    }
                }
                let ys: Vec<f64> =
                    atoms.iter().map(|(p, _)| dot(cone.dual.vector(direction), p)).collect();
                let min = ys.iter().cloned().fold(f64::INFINITY, f64::min);
                MarginalFlags {
                    contains_origin: if min.abs() <= 1e-12 { TriState::Yes } else { TriState::No },
                    // a finite atom list is bounded; structurally not unbounded
                    discrete_unbounded: TriState::No,
                }
            }
            MeasureSpec::Pushforward { inner, .. } => inner.marginal_support(cone, direction),
            MeasureSpec::Mixture { components } => {
                let flags: Vec<MarginalFlags> =
                    components.iter().map(|(_, c)| c.marginal_support(cone, direction)).collect();
                let merge = |get: fn(&MarginalFlags) -> TriState, any_yes: bool| -> TriState {
                    if flags.iter().any(|f| get(f) == TriState::Unknown) {
                        TriState::Unknown
                    } else if any_yes {
                        if flags.iter().any(|f| get(f) == TriState::Yes) { TriState::Yes } else { TriState::No }
                    } else if flags.iter().all(|f| get(f) == TriState::No) {
                        TriState::No
                    } else {
                        TriState::Yes
                    }
                };
                MarginalFlags {
                    contains_origin: merge(|f| f.contains_origin, true),
                    discrete_unbounded: merge(|f| f.discrete_unbounded, false),
                }
            }
        }
    }

    pub fn total_mass(&self) -> Option<SignedLog> {
        match self {
            MeasureSpec::Discrete { atoms, .. } => {
                let terms: Vec<SignedLog> =
                    atoms.iter().map(|(_, m)| SignedLog::from_f64(*m)).collect();
                Some(crate::logdomain::signed_log_sum(&terms))
            }
            MeasureSpec::DensityExpr { .. } => None,
            MeasureSpec::Pushforward { inner, .. } => inner.total_mass(),
            MeasureSpec::Mixture { components } => {
                let mut acc = SignedLog::ZERO;
                for (w, c) in components {
                    acc = acc + SignedLog::from_f64(*w) * c.total_mass()?;
                }
                Some(acc)
            }
            _ => Some(SignedLog::ONE),
        }
    }

    /// Draws one sample; used by the Monte Carlo integration mode.
    pub fn sample<R: Rng>(&self, rng: &mut R) -> Vec<f64> {
        match self {
            MeasureSpec::GaussianProduct { means, sds } => (0..means.len())
                .map(|j| Measure1D::Gaussian { mean: means[j], sd: sds[j] }.sample(rng))
                .collect(),
            MeasureSpec::LogNormal1D { location, scale } => {
                vec![Measure1D::LogNormal { location: *location, scale: *scale }.sample(rng)]
            }
            MeasureSpec::Gamma1D { shape, scale } => {
                vec![Measure1D::Gamma { shape: *shape, scale: *scale }.sample(rng)]
            }
            MeasureSpec::Exponential1D { rate } => {
                vec![Measure1D::Exponential { rate: *rate }.sample(rng)]
            }
            MeasureSpec::ProductOf1D { factors } => {
                factors.iter().map(|f| f.sample(rng)).collect()
            }
            MeasureSpec::PerturbedLogNormal { theta } => {
                // rejection from the lognormal proposal with envelope 1+|theta|
                let base = Measure1D::LogNormal { location: 0.0, scale: 1.0 };
                loop {
                    let x = base.sample(rng);
                    let accept = (1.0 + theta * (2.0 * std::f64::consts::PI * x.ln()).sin())
                        / (1.0 + theta.abs());
                    if rng.gen::<f64>() < accept {
                        return vec![x];
                    }
                }
            }
            MeasureSpec::Discrete { atoms, .. } => {
                let total: f64 = atoms.iter().map(|(_, m)| m).sum();
                let mut u = rng.gen::<f64>() * total;
                for (p, m) in atoms {
                    u -= m;
                    if u <= 0.0 {
                        return p.clone();
                    }
                }
                atoms.last().unwrap().0.clone()
            }
            MeasureSpec::DensityExpr { .. } => {
                // importance proposal: unit gaussian; callers using MC on
                // expression densities reweight by density/proposal
                let n = self.dimension();
                (0..n).map(|_| rand_distr::StandardNormal.sample(rng)).collect()
            }
            MeasureSpec::Pushforward { inner, map } => {
                let x = inner.sample(rng);
                map.apply(&x)
            }
            MeasureSpec::Mixture { components } => {
                let total: f64 = components.iter().map(|(w, _)| w).sum();
                let mut u = rng.gen::<f64>() * total;
                for (w, c) in components {
                    u -= w;
                    if u <= 0.0 {
                        return c.sample(rng);
                    }
                }
                components.last().unwrap().1.sample(rng)
            }
        }
    }

    /// Stable content hash used for cache keys and report provenance.
    pub fn fingerprint(&self) -> String {
        use sha2::{Digest, Sha256};
        let json = serde_json::to_string(self).unwrap_or_default();
        let mut h = Sha256::new();
        h.update(json.as_bytes());
        let out = h.finalize();
        out.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MarginalFlags {
    pub contains_origin: TriState,
    pub discrete_unbounded: TriState,
}

fn support_contains(support: &SupportDescriptor, x: &[f64]) -> bool {
    match &support.region {
        SupportRegion::AllSpace => true,
        SupportRegion::Halfline => x.iter().all(|&v| v >= 0.0),
        SupportRegion::Box { bounds } => {
            x.iter().zip(bounds).all(|(&v, &(a, b))| v >= a && v <= b)
        }
        SupportRegion::Cone { cone } => cone.contains(x, 0.0),
        SupportRegion::Predicate { predicate } => predicate.eval(x) > 0.0,
    }
}
