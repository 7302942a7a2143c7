//! Moment tables in signed-log form: directional moments s_j(m) against a
//! basis, absolute moments t_j(s), mixed moments t(alpha), and the summed
//! sequence lambda(m), each entry carrying provenance and an error bar.

use crate::logdomain::SignedLog;
use crate::measure::{dot, Basis, Measure1D, MeasureSpec};
use crate::quad::{integrate, QuadOutcome, QuadSettings};
use serde::{Deserialize, Serialize};
use std::cell::RefCell;
use std::collections::HashMap;
use std::fmt::Write as _;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    ClosedForm,
    Quadrature,
    MonteCarlo,
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct MomentEntry {
    pub value: SignedLog,
    /// Absolute error bound, also in signed-log form (zero for closed forms).
    pub abs_err: SignedLog,
    pub provenance: Provenance,
    pub converged: bool,
}

impl MomentEntry {
    fn closed(value: SignedLog) -> Self {
        MomentEntry { value, abs_err: SignedLog::ZERO, provenance: Provenance::ClosedForm, converged: true }
    }

    fn from_quad(out: QuadOutcome) -> Self {
        MomentEntry {
            value: out.value,
            abs_err: out.abs_err,
            provenance: Provenance::Quadrature,
            converged: out.converged,
        }
    }

    /// Relative error when the value is nonzero, absolute error otherwise.
    pub fn err_indicator(&self) -> f64 {
        if self.value.is_zero() {
            self.abs_err.to_f64()
        } else {
            (self.abs_err / self.value.abs()).to_f64()
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Hash)]
enum Key {
    Directional { j: usize, m: u32 },
    Absolute { j: usize, s_bits: u64 },
    Mixed { packed: u64 },
    SignedMixed { packed: u64 },
}

fn pack_alpha(alpha: &[u32]) -> u64 {
    let mut packed = 0u64;
    for (i, &a) in alpha.iter().enumerate() {
        packed |= (a as u64 & 0xffff) << (16 * i);
    }
    packed
}

/// Computes and memoizes moment entries for one measure and basis.
pub struct MomentEngine<'m> {
    spec: &'m MeasureSpec,
    basis: Basis,
    settings: QuadSettings,
    cache: RefCell<HashMap<Key, MomentEntry>>,
}

fn spec_1d(f: &Measure1D) -> MeasureSpec {
    match f {
        Measure1D::Gaussian { mean, sd } => {
            MeasureSpec::GaussianProduct { means: vec![*mean], sds: vec![*sd] }
        }
        Measure1D::LogNormal { location, scale } => {
            MeasureSpec::LogNormal1D { location: *location, scale: *scale }
        }
        Measure1D::Gamma { shape, scale } => {
            MeasureSpec::Gamma1D { shape: *shape, scale: *scale }
        }
        Measure1D::Exponential { rate } => MeasureSpec::Exponential1D { rate: *rate },
    }
}

impl<'m> MomentEngine<'m> {
    pub fn new(spec: &'m MeasureSpec, basis: Option<Basis>, settings: &QuadSettings) -> Self {
        let basis = basis.unwrap_or_else(|| Basis::standard(spec.dimension()));
        MomentEngine { spec, basis, settings: *settings, cache: RefCell::new(HashMap::new()) }
    }

    pub fn basis(&self) -> &Basis {
        &self.basis
    }

    pub fn spec(&self) -> &MeasureSpec {
        self.spec
    }

    fn memo(&self, key: Key, compute: impl FnOnce() -> MomentEntry) -> MomentEntry {
        if let Some(hit) = self.cache.borrow().get(&key) {
            return *hit;
        }
        let entry = compute();
        // idempotent write: recomputation yields the identical entry
        self.cache.borrow_mut().insert(key, entry);
        entry
    }

    /// s_j(m) = integral of (v_j, x)^m; closed forms apply only in the
    /// standard basis, where directional moments reduce to marginals.
    pub fn directional(&self, j: usize, m: u32) -> MomentEntry {
        self.memo(Key::Directional { j, m }, || {
            if self.basis.is_standard() {
                if let Some(v) = self.spec.closed_form_moment(j, m) {
                    return MomentEntry::closed(v);
                }
                if let Some(f1d) = self.spec.marginal_1d(j) {
                    let sub = spec_1d(&f1d);
                    let f = move |x: &[f64]| SignedLog::from_f64(x[0]).powi(m as i64);
                    return match integrate(&f, &sub, &self.settings) {
                        Ok(out) => MomentEntry::from_quad(out),
                        Err(_) => MomentEntry {
                            value: SignedLog::ZERO,
                            abs_err: SignedLog::ZERO,
                            provenance: Provenance::Quadrature,
                            converged: false,
                        },
                    };
                }
            }
            let v = self.basis.vector(j).to_vec();
            if self.spec.dimension() > 3 && self.settings.mc_fallback {
                let f = move |x: &[f64]| dot(&v, x).powi(m as i32);
                return self.mc_entry(&f);
            }
            let f = move |x: &[f64]| SignedLog::from_f64(dot(&v, x)).powi(m as i64);
            match integrate(&f, self.spec, &self.settings) {
                Ok(out) => MomentEntry::from_quad(out),
                Err(_) => MomentEntry {
                    value: SignedLog::ZERO,
                    abs_err: SignedLog::ZERO,
                    provenance: Provenance::Quadrature,
                    converged: false,
                },
            }
        })
    }

    // seeded Monte Carlo fallback for dimensions beyond the deterministic
    // quadrature limit
    fn mc_entry(&self, f: &(dyn Fn(&[f64]) -> f64 + Sync)) -> MomentEntry {
        let out = crate::quad::integrate_mc(f, self.spec, &self.settings);
        MomentEntry {
            value: SignedLog::from_f64(out.mean),
            abs_err: SignedLog::from_f64(3.0 * out.std_error),
            provenance: Provenance::MonteCarlo,
            converged: out.std_error.is_finite(),
        }
    }

    /// t_j(s) = integral of |x_j|^s in standard coordinates, real s >= 0.
    pub fn absolute(&self, j: usize, s: f64) -> MomentEntry {
        self.memo(Key::Absolute { j, s_bits: s.to_bits() }, || {
            if let Some(v) = self.spec.closed_form_abs_moment(j, s) {
                return MomentEntry::closed(v);
            }
            if self.spec.marginal_1d(j).is_none()
                && self.spec.dimension() > 3
                && self.settings.mc_fallback
            {
                let f = move |x: &[f64]| x[j].abs().powf(s);
                return self.mc_entry(&f);
            }
            let run = |spec: &MeasureSpec, axis: usize| -> MomentEntry {
                let f = move |x: &[f64]| SignedLog::from_f64(x[axis]).abs().abs_powf(s);
                match integrate(&f, spec, &self.settings) {
                    Ok(out) => MomentEntry::from_quad(out),
                    Err(_) => MomentEntry {
                        value: SignedLog::ZERO,
                        abs_err: SignedLog::ZERO,
                        provenance: Provenance::Quadrature,
                        converged: false,
                    },
                }
            };
            if let Some(f1d) = self.spec.marginal_1d(j) {
                run(&spec_1d(&f1d), 0)
            } else {
                run(self.spec, j)
            }
        })
    }

    /// t(alpha) = integral of prod_j |x_j|^{alpha_j}; factorizes exactly over
    /// product measures, with combined error bars.
    pub fn mixed(&self, alpha: &[u32]) -> MomentEntry {
        self.memo(Key::Mixed { packed: pack_alpha(alpha) }, || {
            self.mixed_impl(alpha, false)
        })
    }

    /// Signed mixed moment integral of prod_j x_j^{alpha_j}, the Gram-matrix
    /// entry type.
    pub fn signed_mixed(&self, alpha: &[u32]) -> MomentEntry {
        self.memo(Key::SignedMixed { packed: pack_alpha(alpha) }, || {
            self.mixed_impl(alpha, true)
        })
    }

    fn mixed_impl(&self, alpha: &[u32], signed: bool) -> MomentEntry {
        let n = self.spec.dimension();
        debug_assert_eq!(alpha.len(), n);
        let is_product = (0..n).all(|j| self.spec.marginal_1d(j).is_some());
        if is_product {
            let mut value = SignedLog::ONE;
            let mut rel_err = 0.0f64;
            let mut provenance = Provenance::ClosedForm;
            let mut converged = true;
            for (j, &a) in alpha.iter().enumerate() {
                let e = if signed { self.directional(j, a) } else { self.absolute(j, a as f64) };
                value = value * e.value;
                rel_err += e.err_indicator().abs();
                if e.provenance != Provenance::ClosedForm {
                    provenance = Provenance::Quadrature;
                }
                converged &= e.converged;
            }
            let abs_err = value.abs() * SignedLog::from_f64(rel_err);
            return MomentEntry { value, abs_err, provenance, converged };
        }
        if n > 3 && self.settings.mc_fallback {
            let alpha: Vec<u32> = alpha.to_vec();
            let f = move |x: &[f64]| -> f64 {
                let mut acc = 1.0;
                for (j, &a) in alpha.iter().enumerate() {
                    let base = if signed { x[j] } else { x[j].abs() };
                    acc *= base.powi(a as i32);
                }
                acc
            };
            return self.mc_entry(&f);
        }
        let alpha: Vec<u32> = alpha.to_vec();
        let f = move |x: &[f64]| -> SignedLog {
            let mut acc = SignedLog::ONE;
            for (j, &a) in alpha.iter().enumerate() {
                let base = SignedLog::from_f64(x[j]);
                acc = acc * if signed { base.powi(a as i64) } else { base.abs().powi(a as i64) };
            }
            acc
        };
        match integrate(&f, self.spec, &self.settings) {
            Ok(out) => MomentEntry::from_quad(out),
            Err(_) => MomentEntry {
                value: SignedLog::ZERO,
                abs_err: SignedLog::ZERO,
                provenance: Provenance::Quadrature,
                converged: false,
            },
        }
    }

    /// lambda(m) = sum_j s_j(m) in the standard basis.
    pub fn lambda(&self, m: u32) -> MomentEntry {
        let n = self.spec.dimension();
        let std_engine;
        let engine: &MomentEngine = if self.basis.is_standard() {
            self
        } else {
            std_engine = MomentEngine::new(self.spec, None, &self.settings);
            &std_engine
        };
        let mut value = SignedLog::ZERO;
        let mut err = SignedLog::ZERO;
        let mut provenance = Provenance::ClosedForm;
        let mut converged = true;
        for j in 0..n {
            let e = engine.directional(j, m);
            value = value + e.value;
            err = err + e.abs_err;
            if e.provenance != Provenance::ClosedForm {
                provenance = Provenance::Quadrature;
            }
            converged &= e.converged;
        }
        MomentEntry { value, abs_err: err, provenance, converged }
    }

    /// Assembles the full table: directional moments to degree `max_degree`,
    /// absolute moments on `s_grid`, mixed moments to total order
    /// `alpha_cap`, and the lambda sequence.
    pub fn table(&self, max_degree: u32, s_grid: &[f64], alpha_cap: u32) -> MomentTable {
        let n = self.spec.dimension();
        let directional: Vec<Vec<MomentEntry>> = (0..n)
            .map(|j| (0..=max_degree).map(|m| self.directional(j, m)).collect())
            .collect();
        let absolute: Vec<Vec<(f64, MomentEntry)>> = (0..n)
            .map(|j| s_grid.iter().map(|&s| (s, self.absolute(j, s))).collect())
            .collect();
        let mut mixed = Vec::new();
        for alpha in multi_indices(n, alpha_cap) {
            let e = self.mixed(&alpha);
            mixed.push((alpha, e));
        }
        let lambda: Vec<MomentEntry> = (0..=max_degree).map(|m| self.lambda(m)).collect();
        MomentTable {
            fingerprint: self.spec.fingerprint(),
            basis: self.basis.clone(),
            max_degree,
            directional,
            absolute,
            mixed,
            lambda,
        }
    }
}

/// All multi-indices with |alpha| <= cap, graded lexicographic.
pub fn multi_indices(n: usize, cap: u32) -> Vec<Vec<u32>> {
    let mut out = Vec::new();
    let mut cur = vec![0u32; n];
    fn rec(out: &mut Vec<Vec<u32>>, cur: &mut Vec<u32>, axis: usize, remaining: u32) {
        if axis == cur.len() {
            out.push(cur.clone());
            return;
        }
        for a in 0..=remaining {
            cur[axis] = a;
            rec(out, cur, axis + 1, remaining - a);
        }
        cur[axis] = 0;
    }
    for total in 0..=cap {
        let before = out.len();
        rec(&mut out, &mut cur, 0, total);
        // keep only |alpha| == total from this pass
        let added: Vec<Vec<u32>> = out.split_off(before)
            .into_iter()
            .filter(|a| a.iter().sum::<u32>() == total)
            .collect();
        out.extend(added);
    }
    out
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MomentTable {
    pub fingerprint: String,
    pub basis: Basis,
    pub max_degree: u32,
    /// `directional[j][m]` = s_j(m)
    pub directional: Vec<Vec<MomentEntry>>,
    /// `absolute[j]` = list of (s, t_j(s))
    pub absolute: Vec<Vec<(f64, MomentEntry)>>,
    pub mixed: Vec<(Vec<u32>, MomentEntry)>,
    pub lambda: Vec<MomentEntry>,
}

impl MomentTable {
    pub fn dimension(&self) -> usize {
        self.directional.len()
    }

    /// Hoelder monotonicity: t_j(s1)^{1/s1} <= t_j(s2)^{1/s2} for
    /// 1 <= s1 <= s2, within combined error bars. Returns violations.
    pub fn holder_monotonicity_violations(&self) -> Vec<(usize, f64, f64, f64)> {
        let mut violations = Vec::new();
        for (j, row) in self.absolute.iter().enumerate() {
            let usable: Vec<&(f64, MomentEntry)> =
                row.iter().filter(|(s, e)| *s >= 1.0 && e.converged).collect();
            for w in usable.windows(2) {
                let (s1, e1) = w[0];
                let (s2, e2) = w[1];
                if e1.value.is_zero() || e2.value.is_zero() {
                    continue;
                }
                let lhs = e1.value.ln_abs / s1;
                let rhs = e2.value.ln_abs / s2;
                let slack = e1.err_indicator().abs() / s1 + e2.err_indicator().abs() / s2 + 1e-12;
                if lhs > rhs + slack {
                    violations.push((j, *s1, *s2, lhs - rhs));
                }
            }
        }
        violations
    }

    /// Generalized Hoelder: t(alpha) <= prod_j t_j(alpha_j * n)^{1/n} within
    /// combined error bars. Returns violations.
    pub fn generalized_holder_violations(&self, engine: &MomentEngine<'_>) -> Vec<(Vec<u32>, f64)> {
        let n = self.dimension();
        let mut violations = Vec::new();
        for (alpha, entry) in &self.mixed {
            if !entry.converged || entry.value.is_zero() {
                continue;
            }
            let mut rhs_ln = 0.0;
            let mut slack = entry.err_indicator().abs() + 1e-10;
            let mut ok = true;
            for (j, &a) in alpha.iter().enumerate() {
                let e = engine.absolute(j, (a as usize * n) as f64);
                if !e.converged || e.value.is_zero() {
                    ok = false;
                    break;
                }
                rhs_ln += e.value.ln_abs / n as f64;
                slack += e.err_indicator().abs() / n as f64;
            }
            if !ok {
                continue;
            }
            let lhs_ln = entry.value.ln_abs;
            if lhs_ln > rhs_ln + slack.max(1e-9) {
                violations.push((alpha.clone(), lhs_ln - rhs_ln));
            }
        }
        violations
    }

    /// Dominance s_j(2m) <= lambda(2m) entrywise in the standard basis.
    pub fn dominance_violations(&self) -> Vec<(usize, u32)> {
        let mut violations = Vec::new();
        if !self.basis.is_standard() {
            return violations;
        }
        for (j, row) in self.directional.iter().enumerate() {
            for m in (2..=self.max_degree).step_by(2) {
                let s = &row[m as usize];
                let l = &self.lambda[m as usize];
                if !s.converged || !l.converged {
                    continue;
                }
                let slack = SignedLog::from_f64(1.0 + 1e-9);
                if s.value > l.value * slack + l.abs_err + s.abs_err {
                    violations.push((j, m));
                }
            }
        }
        violations
    }

    /// CSV export: kind, j_or_alpha, m_or_s, sign, log_value, provenance, err.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("kind,j_or_alpha,m_or_s,sign,log_value,provenance,err\n");
        let prov = |p: Provenance| match p {
            Provenance::ClosedForm => "closed_form",
            Provenance::Quadrature => "quadrature",
            Provenance::MonteCarlo => "monte_carlo",
        };
        for (j, row) in self.directional.iter().enumerate() {
            for (m, e) in row.iter().enumerate() {
                let _ = writeln!(
                    out,
                    "s,{},{},{},{:.16e},{},{:.6e}",
                    j + 1, m, e.value.sign, e.value.ln_abs, prov(e.provenance), e.err_indicator()
                );
            }
        }
        for (j, row) in self.absolute.iter().enumerate() {
            for (s, e) in row {
                let _ = writeln!(
                    out,
                    "t,{},{},{},{:.16e},{},{:.6e}",
                    j + 1, s, e.value.sign, e.value.ln_abs, prov(e.provenance), e.err_indicator()
                );
            }
        }
        for (alpha, e) in &self.mixed {
            let alpha_str: Vec<String> = alpha.iter().map(|a| a.to_string()).collect();
            let _ = writeln!(
                out,
                "t_alpha,{},{},{},{:.16e},{},{:.6e}",
                alpha_str.join("|"),
                alpha.iter().sum::<u32>(),
                e.value.sign,
                e.value.ln_abs,
                prov(e.provenance),
                e.err_indicator()
            );
        }
        for (m, e) in self.lambda.iter().enumerate() {
            let _ = writeln!(
                out,
                "lambda,,{},{},{:.16e},{},{:.6e}",
                m, e.value.sign, e.value.ln_abs, prov(e.provenance), e.err_indicator()
            );
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn settings() -> QuadSettings {
        QuadSettings::default()
    }

    #[test]
    fn gaussian_directional_closed_and_quadrature_agree() {
        let spec = MeasureSpec::standard_normal(1);
        let engine = MomentEngine::new(&spec, None, &settings());
        let s4 = engine.directional(0, 4);
        assert_eq!(s4.provenance, Provenance::ClosedForm);
        assert_relative_eq!(s4.value.to_f64(), 3.0, max_relative = 1e-13);

        // independent quadrature route for the cross-check
        let f = |x: &[f64]| SignedLog::from_f64(x[0]).powi(4);
        let q = integrate(&f, &spec, &settings()).unwrap();
        assert_relative_eq!(q.value.to_f64(), 3.0, max_relative = 1e-9);
    }

    #[test]
    fn lognormal_log_domain_table() {
        let spec = MeasureSpec::LogNormal1D { location: 0.0, scale: 1.0 };
        let engine = MomentEngine::new(&spec, None, &settings());
        // ln s(2m) = 2 m^2; at m = 10 the log value is 200
        let e = engine.directional(0, 20);
        assert_relative_eq!(e.value.ln_abs, 200.0, max_relative = 1e-12);
    }

    #[test]
    fn discrete_point_mass_moments_all_one() {
        let spec = MeasureSpec::Discrete { atoms: vec![(vec![1.0], 1.0)], support: None };
        let engine = MomentEngine::new(&spec, None, &settings());
        for m in [0u32, 1, 7, 30] {
            assert_relative_eq!(engine.directional(0, m).value.to_f64(), 1.0);
        }
    }

    #[test]
    fn absolute_moments() {
        let spec = MeasureSpec::standard_normal(1);
        let engine = MomentEngine::new(&spec, None, &settings());
        assert_relative_eq!(engine.absolute(0, 2.0).value.to_f64(), 1.0, max_relative = 1e-12);
        assert_relative_eq!(
            engine.absolute(0, 1.0).value.to_f64(),
            (2.0 / std::f64::consts::PI).sqrt(),
            max_relative = 1e-12
        );
        assert_relative_eq!(engine.absolute(0, 0.0).value.to_f64(), 1.0);
    }

    #[test]
    fn mixed_moments_product_normal() {
        let spec = MeasureSpec::standard_normal(2);
        let engine = MomentEngine::new(&spec, None, &settings());
        assert_relative_eq!(engine.mixed(&[2, 2]).value.to_f64(), 1.0, max_relative = 1e-10);
        assert_relative_eq!(engine.mixed(&[0, 0]).value.to_f64(), 1.0);
        assert_relative_eq!(
            engine.mixed(&[1, 1]).value.to_f64(),
            2.0 / std::f64::consts::PI,
            max_relative = 1e-10
        );
    }

    #[test]
    fn lambda_sequence() {
        let spec = MeasureSpec::standard_normal(2);
        let engine = MomentEngine::new(&spec, None, &settings());
        assert_relative_eq!(engine.lambda(2).value.to_f64(), 2.0, max_relative = 1e-12);
        assert_relative_eq!(engine.lambda(4).value.to_f64(), 6.0, max_relative = 1e-12);
        // n = 1: lambda(m) = s(m)
        let spec1 = MeasureSpec::standard_normal(1);
        let e1 = MomentEngine::new(&spec1, None, &settings());
        assert_eq!(e1.lambda(6).value.to_f64(), e1.directional(0, 6).value.to_f64());
    }

    #[test]
    fn table_invariants_on_gaussian() {
        let spec = MeasureSpec::GaussianProduct { means: vec![0.0, 0.5], sds: vec![1.0, 2.0] };
        let engine = MomentEngine::new(&spec, None, &settings());
        let table = engine.table(12, &[0.0, 1.0, 1.5, 2.0, 3.0, 4.0, 6.0], 4);
        assert!(table.holder_monotonicity_violations().is_empty());
        assert!(table.generalized_holder_violations(&engine).is_empty());
        assert!(table.dominance_violations().is_empty());
        // s_j(0) = total mass
        assert_relative_eq!(table.directional[0][0].value.to_f64(), 1.0);
        // even moments nonnegative
        for row in &table.directional {
            for m in (0..=12).step_by(2) {
                assert!(row[m].value.sign >= 0);
            }
        }
        let csv = table.to_csv();
        assert!(csv.starts_with("kind,"));
        assert!(csv.contains("closed_form"));
    }

    #[test]
    fn memo_cache_idempotent() {
        let spec = MeasureSpec::PerturbedLogNormal { theta: 0.5 };
        let engine = MomentEngine::new(&spec, None, &settings());
        let a = engine.directional(0, 6);
        let b = engine.directional(0, 6);
        assert_eq!(a.value.ln_abs.to_bits(), b.value.ln_abs.to_bits());
        assert_eq!(a.provenance, Provenance::Quadrature);
    }

    #[test]
    fn multi_index_enumeration() {
        let idx = multi_indices(2, 2);
        assert_eq!(idx.len(), 6); // (0,0),(0,1),(1,0),(0,2),(1,1),(2,0)
        assert!(idx.contains(&vec![1, 1]));
        assert_eq!(idx[0], vec![0, 0]);
    }
}
