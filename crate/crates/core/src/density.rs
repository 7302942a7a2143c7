//! The L2 density lab: orthonormal polynomials built from moment matrices,
//! polynomial projection errors, the characteristic function, and
//! least-squares projections onto finite trigonometric spans.
//!
//! Everything here works at p = 2, where projections are inner-product
//! computations driven entirely by the moment engine and the quadrature
//! backend.

use crate::error::{Error, Result};
use crate::logdomain::{signed_log_sum, SignedLog};
use crate::measure::MeasureSpec;
use crate::moments::{multi_indices, MomentEngine};
use crate::quad::{integrate, QuadSettings};
use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

/// Relative pivot threshold for truncating the Cholesky factorization.
pub const PIVOT_THRESHOLD: f64 = 1e-12;

/// Eigenvalue floor factor for regularizing trigonometric Gram matrices.
pub const TRIG_EIG_FLOOR: f64 = 1e-12;

/// Moment matrix of monomials: G_ab = integral of x^{alpha_a + alpha_b}.
/// One-dimensional measures give the classical Hankel matrix H_ij = s(i+j).
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GramMatrix {
    pub indices: Vec<Vec<u32>>,
    pub entries: Vec<Vec<SignedLog>>,
    /// Exact-precision duplicates where a closed form fits the f64 range;
    /// signed-log storage alone quantizes ln(value), which the Hankel
    /// condition number amplifies.
    pub exact: Vec<Vec<Option<f64>>>,
}

pub fn gram_matrix(engine: &MomentEngine<'_>, max_degree: u32) -> Result<GramMatrix> {
    let n = engine.spec().dimension();
    if n > 1 && (0..n).any(|j| engine.spec().marginal_1d(j).is_none()) {
        return Err(Error::Unsupported(
            "orthonormal polynomial bases beyond 1-D require product measures".into(),
        ));
    }
    let indices = multi_indices(n, max_degree);
    let dim = indices.len();
    let mut entries = vec![vec![SignedLog::ZERO; dim]; dim];
    let mut exact = vec![vec![None; dim]; dim];
    for a in 0..dim {
        for b in a..dim {
            let alpha: Vec<u32> =
                indices[a].iter().zip(&indices[b]).map(|(x, y)| x + y).collect();
            let e = engine.signed_mixed(&alpha);
            if !e.converged {
                return Err(Error::NonConverged(format!("gram entry for alpha = {alpha:?}")));
            }
            entries[a][b] = e.value;
            entries[b][a] = e.value;
            // per-axis factorization is exact only for independent axes
            let factorizable = n == 1 || (0..n).all(|j| engine.spec().marginal_1d(j).is_some());
            let ex = if factorizable {
                alpha
                    .iter()
                    .enumerate()
                    .try_fold(1.0f64, |acc, (j, &aj)| {
                        engine.spec().closed_form_moment_f64(j, aj).map(|v| acc * v)
                    })
                    .filter(|v| v.is_finite())
            } else {
                None
            };
            exact[a][b] = ex;
            exact[b][a] = ex;
        }
    }
    Ok(GramMatrix { indices, entries, exact })
}

/// Orthonormal polynomial basis with coefficients in the raw monomial
/// basis, stored signed-log so ill-scaled measures (lognormal) stay exact.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct OrthoPolyBasis {
    pub fingerprint: String,
    pub indices: Vec<Vec<u32>>,
    /// `coefficients[k][a]` multiplies x^alpha_a in P_k.
    pub coefficients: Vec<Vec<SignedLog>>,
    /// First basis index dropped by pivot truncation, if any.
    pub truncated_at: Option<usize>,
    /// Smallest accepted normalized pivot: a conditioning diagnostic.
    pub min_pivot: f64,
}

/// Cholesky-orthonormalization of the Gram matrix with per-degree
/// prescaling: the monomial x^alpha is scaled by 1/sqrt(G_aa) before
/// factorization, which tames Hankel conditioning (the lognormal matrix
/// becomes exp(-(i-j)^2/2) with unit diagonal) and is undone on output.
pub fn orthonormalize(gram: &GramMatrix, fingerprint: String) -> Result<OrthoPolyBasis> {
    let dim = gram.indices.len();
    if dim == 0 {
        return Err(Error::SingularGram { degree: 0 });
    }
    // per-column scales f_a = sqrt(G_aa)
    let scales: Vec<SignedLog> = (0..dim).map(|a| gram.entries[a][a].sqrt()).collect();
    let mut cut = dim;
    for (a, s) in scales.iter().enumerate() {
        if s.is_zero() || s.is_nan() {
            cut = cut.min(a);
        }
    }
    if cut == 0 {
        return Err(Error::SingularGram { degree: 0 });
    }
    // the normalization ratio is computed from exact f64 entries whenever
    // available: conditioning amplifies log-domain rounding, and most of
    // the precision lives in this ratio
    let normalized = |a: usize, b: usize| -> f64 {
        if let (Some(vab), Some(vaa), Some(vbb)) = (gram.exact[a][b], gram.exact[a][a], gram.exact[b][b]) {
            if vaa > 0.0 && vbb > 0.0 {
                return vab / (vaa.sqrt() * vbb.sqrt());
            }
        }
        (gram.entries[a][b] / (scales[a] * scales[b])).to_f64()
    };

    let mut lower = vec![vec![0.0f64; cut]; cut];
    let mut truncated_at = None;
    let mut min_pivot = f64::INFINITY;
    let mut rank = cut;
    for k in 0..cut {
        let mut pivot = normalized(k, k);
        for v in lower[k][..k].iter() {
            pivot -= v * v;
        }
        if pivot <= PIVOT_THRESHOLD {
            truncated_at = Some(k);
            rank = k;
            break;
        }
        min_pivot = min_pivot.min(pivot);
        lower[k][k] = pivot.sqrt();
        for i in (k + 1)..cut {
            let mut v = normalized(i, k);
            for (a, b) in lower[i][..k].iter().zip(&lower[k][..k]) {
                v -= a * b;
            }
            lower[i][k] = v / lower[k][k];
        }
    }
    if cut < dim && truncated_at.is_none() {
        truncated_at = Some(cut);
    }
    if rank == 0 {
        return Err(Error::SingularGram { degree: 0 });
    }

    // rows of inv(L) give the orthonormal coefficients in the scaled
    // basis: back-substitute L^T x = e_k for each k
    let mut coefficients = Vec::with_capacity(rank);
    for k in 0..rank {
        let mut row = vec![0.0f64; rank];
        row[k] = 1.0 / lower[k][k];
        for i in (0..k).rev() {
            let mut v = 0.0;
            for j in (i + 1)..=k {
                v -= lower[j][i] * row[j];
            }
            row[i] = v / lower[i][i];
        }
        let coeffs: Vec<SignedLog> = (0..rank)
            .map(|a| {
                if a > k || row[a] == 0.0 {
                    return SignedLog::ZERO;
                }
                if let Some(vaa) = gram.exact[a][a] {
                    let c = row[a] / vaa.sqrt();
                    if c.is_finite() && c != 0.0 {
                        return SignedLog::from_f64(c);
                    }
                }
                SignedLog::from_f64(row[a]) / scales[a]
            })
            .collect();
        coefficients.push(coeffs);
    }

    Ok(OrthoPolyBasis {
        fingerprint,
        indices: gram.indices[..rank].to_vec(),
        coefficients,
        truncated_at,
        min_pivot: if min_pivot.is_finite() { min_pivot } else { 0.0 },
    })
}

impl OrthoPolyBasis {
    pub fn len(&self) -> usize {
        self.coefficients.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coefficients.is_empty()
    }

    /// Evaluates P_k(x) through signed-log accumulation of monomials,
    /// staying in log form so deep-tail quadrature nodes cannot overflow.
    pub fn eval_log(&self, k: usize, x: &[f64]) -> SignedLog {
        let mut terms = Vec::with_capacity(self.coefficients[k].len());
        for (a, c) in self.coefficients[k].iter().enumerate() {
            if c.is_zero() {
                continue;
            }
            let mut mono = SignedLog::ONE;
            for (j, &e) in self.indices[a].iter().enumerate() {
                mono = mono * SignedLog::from_f64(x[j]).powi(e as i64);
            }
            terms.push(*c * mono);
        }
        signed_log_sum(&terms)
    }

    pub fn eval(&self, k: usize, x: &[f64]) -> f64 {
        self.eval_log(k, x).to_f64()
    }

    /// Recomputed inner products <P_i, P_j> against the measure, for
    /// orthonormality diagnostics.
    pub fn recompute_inner(
        &self,
        spec: &MeasureSpec,
        i: usize,
        j: usize,
        settings: &QuadSettings,
    ) -> Result<f64> {
        let f = |x: &[f64]| self.eval_log(i, x) * self.eval_log(j, x);
        Ok(integrate(&f, spec, settings)?.value.to_f64())
    }

    /// CSV export: one row per basis polynomial, columns degree then
    /// coefficients (sign * exp(log) via plain f64 when in range).
    pub fn to_csv(&self) -> String {
        use std::fmt::Write as _;
        let mut out = String::from("degree,coefficients...\n");
        for (k, row) in self.coefficients.iter().enumerate() {
            let _ = write!(out, "{k}");
            for c in row {
                let _ = write!(out, ",{:.16e}", c.to_f64());
            }
            out.push('\n');
        }
        out
    }
}

/// Projection of a target function onto polynomial degrees 0..=N.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PolyProjection {
    pub coefficients: Vec<f64>,
    /// `errors[k]` is the L2 residual after projecting onto P_0..P_k.
    pub errors: Vec<f64>,
    pub norm_target: f64,
    pub truncated_at: Option<usize>,
}

/// Computes projection coefficients by quadrature and the residual error
/// sequence by direct quadrature of the squared residual.
pub fn poly_projection_error(
    target: &dyn Fn(&[f64]) -> f64,
    spec: &MeasureSpec,
    basis: &OrthoPolyBasis,
    settings: &QuadSettings,
) -> Result<PolyProjection> {
    let norm2 = integrate(
        &|x: &[f64]| SignedLog::from_f64(target(x) * target(x)),
        spec,
        settings,
    )?;
    if !norm2.converged {
        return Err(Error::NonConverged("target is not square-integrable at tolerance".into()));
    }
    let norm_target = norm2.value.to_f64().max(0.0).sqrt();

    let mut coefficients = Vec::with_capacity(basis.len());
    for k in 0..basis.len() {
        let a = integrate(
            &|x: &[f64]| SignedLog::from_f64(target(x)) * basis.eval_log(k, x),
            spec,
            settings,
        )?;
        coefficients.push(a.value.to_f64());
    }

    let mut errors = Vec::with_capacity(basis.len());
    for upto in 0..basis.len() {
        let coefs = coefficients[..=upto].to_vec();
        let res2 = integrate(
            &|x: &[f64]| {
                let mut r = SignedLog::from_f64(target(x));
                for (k, c) in coefs.iter().enumerate() {
                    r = r - SignedLog::from_f64(*c) * basis.eval_log(k, x);
                }
                r * r
            },
            spec,
            settings,
        )?;
        errors.push(res2.value.to_f64().max(0.0).sqrt());
    }

    Ok(PolyProjection {
        coefficients,
        errors,
        norm_target,
        truncated_at: basis.truncated_at,
    })
}

/// The characteristic function mu_hat(lambda); closed form for Gaussian
/// products, cosine/sine quadrature otherwise.
pub fn char_function(
    spec: &MeasureSpec,
    lambda: &[f64],
    settings: &QuadSettings,
) -> Result<Complex64> {
    if let MeasureSpec::GaussianProduct { means, sds } = spec {
        let mut phase = 0.0;
        let mut decay = 0.0;
        for j in 0..means.len() {
            phase += lambda[j] * means[j];
            decay += 0.5 * (sds[j] * lambda[j]).powi(2);
        }
        let r = (-decay).exp();
        return Ok(Complex64::new(r * phase.cos(), r * phase.sin()));
    }
    let l = lambda.to_vec();
    let re = integrate(
        &|x: &[f64]| SignedLog::from_f64(crate::measure::dot(&l, x).cos()),
        spec,
        settings,
    )?;
    let l = lambda.to_vec();
    let im = integrate(
        &|x: &[f64]| SignedLog::from_f64(crate::measure::dot(&l, x).sin()),
        spec,
        settings,
    )?;
    Ok(Complex64::new(re.value.to_f64(), im.value.to_f64()))
}

/// Finite trigonometric system over a frequency grid, with the Gram matrix
/// of mu_hat differences.
#[derive(Clone, Debug)]
pub struct TrigSystem {
    pub frequencies: Vec<Vec<f64>>,
    pub gram: Vec<Vec<Complex64>>,
}

impl TrigSystem {
    pub fn new(spec: &MeasureSpec, frequencies: Vec<Vec<f64>>, settings: &QuadSettings) -> Result<Self> {
        let s = frequencies.len();
        let mut gram = vec![vec![Complex64::new(0.0, 0.0); s]; s];
        for j in 0..s {
            for k in j..s {
                // <e_{i l_k}, e_{i l_j}> = mu_hat(l_k - l_j)
                let diff: Vec<f64> = frequencies[k]
                    .iter()
                    .zip(&frequencies[j])
                    .map(|(a, b)| a - b)
                    .collect();
                let v = char_function(spec, &diff, settings)?;
                gram[j][k] = v;
                gram[k][j] = v.conj();
            }
        }
        Ok(TrigSystem { frequencies, gram })
    }

    /// Minimum eigenvalue of the Hermitian Gram matrix (via the real
    /// symmetric embedding); PSD up to numerical noise.
    pub fn min_eigenvalue(&self) -> f64 {
        let m = self.embedding();
        let eig = m.symmetric_eigen();
        eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min)
    }

    fn embedding(&self) -> DMatrix<f64> {
        let s = self.frequencies.len();
        DMatrix::from_fn(2 * s, 2 * s, |i, j| {
            let (bi, ii) = (i / s, i % s);
            let (bj, jj) = (j / s, j % s);
            let g = self.gram[ii][jj];
            match (bi, bj) {
                (0, 0) | (1, 1) => g.re,
                (0, 1) => -g.im,
                _ => g.im,
            }
        })
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrigProjection {
    pub grid_size: usize,
    pub error: f64,
    pub norm_target: f64,
    /// Number of Gram eigenvalues lifted to the regularization floor.
    pub regularized_modes: usize,
}

/// Least-squares distance from a real target to the span of e_{i lambda}
/// over the grid, solved through the eigendecomposition of the Gram matrix
/// with a relative eigenvalue floor.
pub fn trig_projection_error(
    target: &dyn Fn(&[f64]) -> f64,
    spec: &MeasureSpec,
    system: &TrigSystem,
    settings: &QuadSettings,
) -> Result<TrigProjection> {
    let s = system.frequencies.len();
    if s == 0 {
        return Err(Error::InvalidCriterion("empty frequency grid".into()));
    }
    let norm2 = integrate(
        &|x: &[f64]| SignedLog::from_f64(target(x) * target(x)),
        spec,
        settings,
    )?
    .value
    .to_f64();

    // b_j = <f, e_{i l_j}> = integral f e^{-i(l_j, x)} dmu
    let mut b = Vec::with_capacity(s);
    for l in &system.frequencies {
        let lv = l.clone();
        let re = integrate(
            &|x: &[f64]| SignedLog::from_f64(target(x) * crate::measure::dot(&lv, x).cos()),
            spec,
            settings,
        )?
        .value
        .to_f64();
        let lv = l.clone();
        let im = integrate(
            &|x: &[f64]| SignedLog::from_f64(-target(x) * crate::measure::dot(&lv, x).sin()),
            spec,
            settings,
        )?
        .value
        .to_f64();
        b.push(Complex64::new(re, im));
    }

    // solve G c = b through the symmetric embedding with an eigenvalue floor
    let m = system.embedding();
    let eig = m.symmetric_eigen();
    let floor = TRIG_EIG_FLOOR * eig.eigenvalues.iter().sum::<f64>().abs() / (2 * s) as f64;
    let mut regularized_modes = 0;
    let rhs = nalgebra::DVector::from_fn(2 * s, |i, _| if i < s { b[i].re } else { b[i - s].im });
    let qt_b = eig.eigenvectors.transpose() * &rhs;
    let mut scaled = qt_b;
    for (i, v) in scaled.iter_mut().enumerate() {
        let ev = eig.eigenvalues[i];
        let use_ev = if ev < floor {
            regularized_modes += 1;
            floor
        } else {
            ev
        };
        *v /= use_ev;
    }
    let c_embed = &eig.eigenvectors * scaled;
    let c: Vec<Complex64> = (0..s).map(|i| Complex64::new(c_embed[i], c_embed[i + s])).collect();

    // error^2 = ||f||^2 - Re(b^H c)
    let mut reduction = 0.0;
    for j in 0..s {
        reduction += (b[j].conj() * c[j]).re;
    }
    let error = (norm2 - reduction).max(0.0).sqrt();
    Ok(TrigProjection {
        grid_size: s,
        error,
        norm_target: norm2.max(0.0).sqrt(),
        regularized_modes: regularized_modes / 2,
    })
}

/// Uniform symmetric frequency grid with `points` nodes on [lo, hi] in 1-D.
pub fn uniform_grid_1d(lo: f64, hi: f64, points: usize) -> Vec<Vec<f64>> {
    if points <= 1 {
        return vec![vec![0.5 * (lo + hi)]];
    }
    (0..points)
        .map(|i| vec![lo + (hi - lo) * i as f64 / (points - 1) as f64])
        .collect()
}
