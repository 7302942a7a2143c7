//! The analysis manifest: a strict JSON document declaring the measure, an
//! optional basis and cone, the analyses to run, and numeric settings.
//! Unknown keys are errors; defaults are filled during resolution and the
//! resolved document is echoed into every report for reproducibility.

use crate::criteria::CriterionSpec;
use crate::error::{Error, Result};
use crate::expr::parse_expression;
use crate::measure::{Basis, Cone, MeasureSpec, SupportDescriptor, SupportRegion, TriState};
use crate::quad::QuadSettings;
use crate::weight::WeightSpec;
use serde::{Deserialize, Serialize};
use serde_json::Value;

pub const DEFAULT_MAX_DEGREE: u32 = 30;
pub const DEFAULT_TOL: f64 = 1e-8;
pub const DEFAULT_SEED: u64 = 0;
pub const DEFAULT_ALPHA_CAP: u32 = 4;

fn manifest_err(field: &str, message: impl ToString) -> Error {
    Error::Manifest { field: field.to_string(), message: message.to_string() }
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ManifestDoc {
    dimension: usize,
    measure: Value,
    #[serde(default)]
    basis: Option<Vec<Vec<f64>>>,
    #[serde(default)]
    cone: Option<ConeJson>,
    analyses: Vec<Value>,
    #[serde(default)]
    numerics: Option<NumericsJson>,
    #[serde(default)]
    output: Option<OutputJson>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConeJson {
    basis: Vec<Vec<f64>>,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct NumericsJson {
    #[serde(default)]
    tol: Option<f64>,
    #[serde(default)]
    r0: Option<f64>,
    #[serde(default)]
    shells: Option<usize>,
    #[serde(default)]
    mc_samples: Option<f64>,
    #[serde(default)]
    seed: Option<u64>,
    #[serde(default)]
    max_degree: Option<u32>,
    #[serde(default)]
    mc_fallback: Option<bool>,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct OutputJson {
    #[serde(default)]
    dir: Option<String>,
    #[serde(default)]
    format: Option<String>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputFormat {
    Json,
    Csv,
}

#[derive(Clone, Debug)]
pub struct OutputSpec {
    pub dir: Option<String>,
    pub format: OutputFormat,
}

/// Numeric knobs with the horizon M; everything defaulted and echoed.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct Numerics {
    pub tol: f64,
    pub r0: f64,
    pub shells: usize,
    pub mc_samples: u64,
    pub seed: u64,
    pub max_degree: u32,
    pub mc_fallback: bool,
}

impl Numerics {
    pub fn quad(&self) -> QuadSettings {
        QuadSettings {
            tol: self.tol,
            r0: self.r0,
            shells: self.shells,
            mc_samples: self.mc_samples,
            seed: self.seed,
            mc_fallback: self.mc_fallback,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CarlemanModeJson {
    Hamburger,
    Stieltjes,
}

/// One analysis to run, with per-analysis overrides resolved.
#[derive(Clone, Debug)]
pub enum AnalysisKind {
    Carleman { mode: CarlemanModeJson, max_degree: u32 },
    ShohatTamarkin { max_degree: u32 },
    Criterion { spec: CriterionSpec, strengthen: bool },
    ClassifyWeight { weight: WeightSpec, max_m: u32 },
    Moments { max_degree: u32, s_grid: Vec<f64>, alpha_cap: u32 },
    Density { target: String, max_degree: u32 },
    TrigDensity { target: String, lo: f64, hi: f64, points: Vec<usize> },
    StieltjesRelation { exponents: Vec<u32>, tol: f64 },
    LogNegativity { weight: WeightSpec, start: f64 },
}

impl AnalysisKind {
    pub fn kind_name(&self) -> &'static str {
        match self {
            AnalysisKind::Carleman { .. } => "carleman",
            AnalysisKind::ShohatTamarkin { .. } => "shohat_tamarkin",
            AnalysisKind::Criterion { .. } => "criterion",
            AnalysisKind::ClassifyWeight { .. } => "classify_weight",
            AnalysisKind::Moments { .. } => "moments",
            AnalysisKind::Density { .. } => "density",
            AnalysisKind::TrigDensity { .. } => "trig_density",
            AnalysisKind::StieltjesRelation { .. } => "stieltjes_relation",
            AnalysisKind::LogNegativity { .. } => "log_negativity",
        }
    }
}

/// Fully validated manifest with defaults applied.
#[derive(Clone, Debug)]
pub struct AnalysisManifest {
    pub dimension: usize,
    pub measure: MeasureSpec,
    pub basis: Basis,
    pub cone: Option<Cone>,
    pub analyses: Vec<AnalysisKind>,
    pub numerics: Numerics,
    pub output: OutputSpec,
    /// The input document with defaults filled, echoed into reports.
    pub echo: Value,
}

pub fn parse_manifest(text: &str) -> Result<AnalysisManifest> {
    let doc: ManifestDoc = serde_json::from_str(text)
        .map_err(|e| manifest_err("<document>", e))?;
    resolve(doc)
}

fn resolve(doc: ManifestDoc) -> Result<AnalysisManifest> {
    let n = doc.dimension;
    if n == 0 {
        return Err(manifest_err("dimension", "must be at least 1"));
    }

    let numerics = {
        let nj = doc.numerics.clone().unwrap_or_default();
        let out = Numerics {
            tol: nj.tol.unwrap_or(DEFAULT_TOL),
            r0: nj.r0.unwrap_or(2.0),
            shells: nj.shells.unwrap_or(12),
            mc_samples: nj.mc_samples.unwrap_or(1e6) as u64,
            seed: nj.seed.unwrap_or(DEFAULT_SEED),
            max_degree: nj.max_degree.unwrap_or(DEFAULT_MAX_DEGREE),
            mc_fallback: nj.mc_fallback.unwrap_or(true),
        };
        if out.tol <= 0.0 {
            return Err(manifest_err("numerics.tol", "tolerances must be positive"));
        }
        if out.max_degree < 1 {
            return Err(manifest_err("numerics.max_degree", "max degree must be at least 1"));
        }
        if out.r0 <= 0.0 || out.shells < 4 {
            return Err(manifest_err("numerics", "r0 must be positive and shells >= 4"));
        }
        out
    };
    let settings = numerics.quad();

    // basis: identity when omitted
    let basis = match &doc.basis {
        None => Basis::standard(n),
        Some(cols) => {
            if cols.len() != n {
                return Err(manifest_err("basis", format!("expected {n} basis vectors")));
            }
            Basis::new(cols.clone()).map_err(|e| manifest_err("basis", e))?
        }
    };

    let cone = match &doc.cone {
        None => None,
        Some(cj) => {
            if cj.basis.len() != n {
                return Err(manifest_err("cone.basis", format!("expected {n} basis vectors")));
            }
            let b = Basis::new(cj.basis.clone()).map_err(|e| manifest_err("cone.basis", e))?;
            Some(Cone::new(b).map_err(|e| manifest_err("cone.basis", e))?)
        }
    };

    let mut measure = parse_measure(&doc.measure, n)?;
    measure.validate().map_err(|e| manifest_err("measure", e))?;
    if measure.dimension() != n {
        return Err(manifest_err(
            "measure",
            format!("measure dimension {} does not match declared {n}", measure.dimension()),
        ));
    }
    // normalization pass for expression densities without a constant
    let mut normalization_note = None;
    let needs_norm =
        matches!(&measure, MeasureSpec::DensityExpr { ln_normalization: None, .. });
    if needs_norm {
        let probe = {
            let mut m2 = measure.clone();
            if let MeasureSpec::DensityExpr { ln_normalization, .. } = &mut m2 {
                *ln_normalization = Some(0.0);
            }
            m2
        };
        let mass = crate::quad::integrate(
            &|_: &[f64]| crate::logdomain::SignedLog::ONE,
            &probe,
            &settings,
        )
        .map_err(|e| manifest_err("measure.density", format!("normalization pass failed: {e}")))?;
        if mass.value.sign <= 0 || !mass.converged {
            return Err(manifest_err("measure.density", "density mass is zero or non-convergent"));
        }
        if let MeasureSpec::DensityExpr { ln_normalization, .. } = &mut measure {
            *ln_normalization = Some(mass.value.ln_abs);
        }
        normalization_note = Some(mass.value.ln_abs);
    }

    let mut analyses = Vec::new();
    for (i, a) in doc.analyses.iter().enumerate() {
        analyses.push(
            parse_analysis(a, n, numerics.max_degree, numerics.tol)
                .map_err(|e| manifest_err(&format!("analyses[{i}]"), e))?,
        );
    }

    let output = {
        let oj = doc.output.clone().unwrap_or_default();
        let format = match oj.format.as_deref() {
            None | Some("json") => OutputFormat::Json,
            Some("csv") => OutputFormat::Csv,
            Some(other) => {
                return Err(manifest_err("output.format", format!("unknown format `{other}`")))
            }
        };
        OutputSpec { dir: oj.dir, format }
    };

    // echo: the document with every default materialized
    let echo = {
        let mut v = serde_json::json!({
            "dimension": n,
            "measure": doc.measure,
            "basis": (0..n).map(|j| basis.vector(j).to_vec()).collect::<Vec<_>>(),
            "analyses": doc.analyses,
            "numerics": numerics,
        });
        if let Some(c) = &doc.cone {
            v["cone"] = serde_json::json!(c);
        }
        if let Some(o) = &doc.output {
            v["output"] = serde_json::json!(o);
        }
        if let Some(ln_mass) = normalization_note {
            v["measure"]["resolved_ln_normalization"] = serde_json::json!(ln_mass);
        }
        v
    };

    Ok(AnalysisManifest {
        dimension: n,
        measure,
        basis,
        cone,
        analyses,
        numerics,
        output,
        echo,
    })
}

fn field_names(v: &Value) -> Vec<&str> {
    v.as_object().map(|m| m.keys().map(|s| s.as_str()).collect()).unwrap_or_default()
}

pub fn parse_measure(v: &Value, n: usize) -> Result<MeasureSpec> {
    let obj = v.as_object().ok_or_else(|| manifest_err("measure", "expected an object"))?;
    if obj.contains_key("family") {
        parse_family(v, n)
    } else if obj.contains_key("density") {
        parse_density_measure(v, n)
    } else if obj.contains_key("discrete") {
        let atoms: Vec<(Vec<f64>, f64)> = serde_json::from_value(obj["discrete"].clone())
            .map_err(|e| manifest_err("measure.discrete", e))?;
        let support = match obj.get("support") {
            Some(s) => Some(parse_support(s, n)?),
            None => None,
        };
        for key in field_names(v) {
            if !["discrete", "support"].contains(&key) {
                return Err(manifest_err("measure", format!("unknown key `{key}`")));
            }
        }
        Ok(MeasureSpec::Discrete { atoms, support })
    } else {
        Err(manifest_err("measure", "expected `family`, `density`, or `discrete`"))
    }
}

fn parse_family(v: &Value, n: usize) -> Result<MeasureSpec> {
    #[derive(Deserialize)]
    #[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
    enum FamilyJson {
        Gaussian { mean: Vec<f64>, sd: Vec<f64> },
        Lognormal {
            #[serde(default)]
            location: Option<f64>,
            #[serde(default)]
            scale: Option<f64>,
        },
        Gamma { shape: f64, scale: f64 },
        Exponential { rate: f64 },
        PerturbedLognormal { theta: f64 },
        Product { factors: Vec<Value> },
    }
    let fam: FamilyJson =
        serde_json::from_value(v.clone()).map_err(|e| manifest_err("measure", e))?;
    Ok(match fam {
        FamilyJson::Gaussian { mean, sd } => MeasureSpec::GaussianProduct { means: mean, sds: sd },
        FamilyJson::Lognormal { location, scale } => MeasureSpec::LogNormal1D {
            location: location.unwrap_or(0.0),
            scale: scale.unwrap_or(1.0),
        },
        FamilyJson::Gamma { shape, scale } => MeasureSpec::Gamma1D { shape, scale },
        FamilyJson::Exponential { rate } => MeasureSpec::Exponential1D { rate },
        FamilyJson::PerturbedLognormal { theta } => {
            crate::measure::moment_matched_family(theta).map_err(|e| manifest_err("measure.theta", e))?
        }
        FamilyJson::Product { factors } => {
            let mut fs = Vec::new();
            for (i, f) in factors.iter().enumerate() {
                let m = parse_family(f, 1)
                    .map_err(|e| manifest_err(&format!("measure.factors[{i}]"), e))?;
                let f1 = m.marginal_1d(0).ok_or_else(|| {
                    manifest_err(&format!("measure.factors[{i}]"), "factor must be one-dimensional")
                })?;
                fs.push(f1);
            }
            let _ = n;
            MeasureSpec::ProductOf1D { factors: fs }
        }
    })
}

fn parse_density_measure(v: &Value, n: usize) -> Result<MeasureSpec> {
    let obj = v.as_object().unwrap();
    for key in field_names(v) {
        if !["density", "support", "normalization"].contains(&key) {
            return Err(manifest_err("measure", format!("unknown key `{key}`")));
        }
    }
    let text = obj["density"]
        .as_str()
        .ok_or_else(|| manifest_err("measure.density", "expected an expression string"))?;
    let density = parse_expression(text, n).map_err(|e| manifest_err("measure.density", e))?;
    let support = match obj.get("support") {
        Some(s) => parse_support(s, n)?,
        None => SupportDescriptor::all_space(),
    };
    let ln_normalization = match obj.get("normalization") {
        Some(c) => {
            let c = c
                .as_f64()
                .ok_or_else(|| manifest_err("measure.normalization", "expected a number"))?;
            if c <= 0.0 {
                return Err(manifest_err("measure.normalization", "must be positive"));
            }
            Some(c.ln())
        }
        None => None,
    };
    Ok(MeasureSpec::DensityExpr { density, support, ln_normalization })
}

fn parse_support(v: &Value, n: usize) -> Result<SupportDescriptor> {
    let obj = v.as_object().ok_or_else(|| manifest_err("support", "expected an object"))?;
    let kind = obj
        .get("kind")
        .and_then(|k| k.as_str())
        .ok_or_else(|| manifest_err("support.kind", "missing"))?;
    let region = match kind {
        "all_space" => SupportRegion::AllSpace,
        "halfline" => SupportRegion::Halfline,
        "box" => {
            let bounds: Vec<(f64, f64)> = serde_json::from_value(
                obj.get("bounds").cloned().ok_or_else(|| manifest_err("support.bounds", "missing"))?,
            )
            .map_err(|e| manifest_err("support.bounds", e))?;
            SupportRegion::Box { bounds }
        }
        "cone" => {
            let cols: Vec<Vec<f64>> = serde_json::from_value(
                obj.get("basis").cloned().ok_or_else(|| manifest_err("support.basis", "missing"))?,
            )
            .map_err(|e| manifest_err("support.basis", e))?;
            let b = Basis::new(cols).map_err(|e| manifest_err("support.basis", e))?;
            SupportRegion::Cone { cone: Cone::new(b).map_err(|e| manifest_err("support.basis", e))? }
        }
        "predicate" => {
            let text = obj
                .get("formula")
                .and_then(|f| f.as_str())
                .ok_or_else(|| manifest_err("support.formula", "missing"))?;
            SupportRegion::Predicate {
                predicate: parse_expression(text, n).map_err(|e| manifest_err("support.formula", e))?,
            }
        }
        other => return Err(manifest_err("support.kind", format!("unknown kind `{other}`"))),
    };
    let tristates = |key: &str| -> Result<Option<Vec<TriState>>> {
        match obj.get(key) {
            None => Ok(None),
            Some(arr) => {
                let v: Vec<TriState> = serde_json::from_value(arr.clone())
                    .map_err(|e| manifest_err(&format!("support.{key}"), e))?;
                Ok(Some(v))
            }
        }
    };
    for key in field_names(v) {
        if !["kind", "bounds", "basis", "formula", "contains_origin", "discrete_unbounded"]
            .contains(&key)
        {
            return Err(manifest_err("support", format!("unknown key `{key}`")));
        }
    }
    Ok(SupportDescriptor {
        region,
        contains_origin: tristates("contains_origin")?,
        discrete_unbounded: tristates("discrete_unbounded")?,
    })
}

pub fn parse_weight(v: &Value) -> Result<WeightSpec> {
    let obj = v.as_object().ok_or_else(|| manifest_err("weight", "expected an object"))?;
    let kind = obj
        .get("kind")
        .and_then(|k| k.as_str())
        .ok_or_else(|| manifest_err("weight.kind", "missing"))?;
    let allowed: &[&str] = match kind {
        "radial_rho" => &["kind", "R", "rho"],
        "repeated_log" => &["kind", "a", "p", "R"],
        "tensor" => &["kind", "factors"],
        "affine" => &["kind", "matrix", "offset", "inner"],
        "exp_decay" => &["kind", "epsilon"],
        "compact_support" => &["kind", "radius"],
        "expr" => &["kind", "formula", "radial"],
        other => return Err(manifest_err("weight.kind", format!("unknown kind `{other}`"))),
    };
    for key in field_names(v) {
        if !allowed.contains(&key) {
            return Err(manifest_err("weight", format!("unknown key `{key}` for kind `{kind}`")));
        }
    }
    let f64_field = |key: &str| -> Result<f64> {
        obj.get(key)
            .and_then(|x| x.as_f64())
            .ok_or_else(|| manifest_err(&format!("weight.{key}"), "expected a number"))
    };
    Ok(match kind {
        "radial_rho" => {
            let radius = f64_field("R")?;
            let text = obj
                .get("rho")
                .and_then(|r| r.as_str())
                .ok_or_else(|| manifest_err("weight.rho", "expected an expression string"))?;
            let rho = parse_expression(text, 1).map_err(|e| manifest_err("weight.rho", e))?;
            WeightSpec::RadialRho { radius, rho }
        }
        "repeated_log" => {
            let a: Vec<f64> = serde_json::from_value(
                obj.get("a").cloned().ok_or_else(|| manifest_err("weight.a", "missing"))?,
            )
            .map_err(|e| manifest_err("weight.a", e))?;
            let p: Vec<f64> = serde_json::from_value(
                obj.get("p").cloned().ok_or_else(|| manifest_err("weight.p", "missing"))?,
            )
            .map_err(|e| manifest_err("weight.p", e))?;
            let radius = obj.get("R").and_then(|r| r.as_f64());
            WeightSpec::repeated_log(a, p, radius).map_err(|e| manifest_err("weight", e))?
        }
        "tensor" => {
            let factors = obj
                .get("factors")
                .and_then(|f| f.as_array())
                .ok_or_else(|| manifest_err("weight.factors", "expected a list"))?;
            let mut fs = Vec::new();
            for (i, f) in factors.iter().enumerate() {
                fs.push(parse_weight(f).map_err(|e| manifest_err(&format!("weight.factors[{i}]"), e))?);
            }
            WeightSpec::Tensor { factors: fs }
        }
        "affine" => {
            let matrix: Vec<Vec<f64>> = serde_json::from_value(
                obj.get("matrix").cloned().ok_or_else(|| manifest_err("weight.matrix", "missing"))?,
            )
            .map_err(|e| manifest_err("weight.matrix", e))?;
            let offset: Vec<f64> = serde_json::from_value(
                obj.get("offset").cloned().unwrap_or_else(|| {
                    Value::Array(vec![serde_json::json!(0.0); matrix.len()])
                }),
            )
            .map_err(|e| manifest_err("weight.offset", e))?;
            let inner = parse_weight(
                obj.get("inner").ok_or_else(|| manifest_err("weight.inner", "missing"))?,
            )?;
            WeightSpec::AffineImage { matrix, offset, inner: Box::new(inner) }
        }
        "exp_decay" => WeightSpec::exp_decay(f64_field("epsilon")?)
            .map_err(|e| manifest_err("weight.epsilon", e))?,
        "compact_support" => WeightSpec::CompactSupport { radius: f64_field("radius")? },
        "expr" => {
            let text = obj
                .get("formula")
                .and_then(|f| f.as_str())
                .ok_or_else(|| manifest_err("weight.formula", "expected an expression string"))?;
            let radial = obj.get("radial").and_then(|r| r.as_bool()).unwrap_or(false);
            // formula weights are declared one-dimensional on the wire;
            // radial_extension lifts them to R^n
            WeightSpec::Expr {
                formula: parse_expression(text, 1).map_err(|e| manifest_err("weight.formula", e))?,
                radial,
            }
        }
        _ => unreachable!(),
    })
}

pub fn parse_criterion(v: &Value) -> Result<CriterionSpec> {
    let obj = v.as_object().ok_or_else(|| manifest_err("criterion", "expected an object"))?;
    let kind = obj
        .get("kind")
        .and_then(|k| k.as_str())
        .ok_or_else(|| manifest_err("criterion.kind", "missing"))?;
    let rho_factors = |key: &str| -> Result<Vec<(f64, crate::expr::ExprAst)>> {
        let arr = obj
            .get(key)
            .and_then(|f| f.as_array())
            .ok_or_else(|| manifest_err(&format!("criterion.{key}"), "expected a list"))?;
        let mut out = Vec::new();
        for (i, f) in arr.iter().enumerate() {
            let fo = f
                .as_object()
                .ok_or_else(|| manifest_err(&format!("criterion.{key}[{i}]"), "expected an object"))?;
            let radius = fo
                .get("R")
                .and_then(|r| r.as_f64())
                .ok_or_else(|| manifest_err(&format!("criterion.{key}[{i}].R"), "missing"))?;
            let text = fo
                .get("rho")
                .and_then(|r| r.as_str())
                .ok_or_else(|| manifest_err(&format!("criterion.{key}[{i}].rho"), "missing"))?;
            let rho = parse_expression(text, 1)
                .map_err(|e| manifest_err(&format!("criterion.{key}[{i}].rho"), e))?;
            out.push((radius, rho));
        }
        Ok(out)
    };
    let replog = |sqrt_arg: bool| -> Result<(Vec<f64>, Vec<f64>, f64)> {
        let a: Vec<f64> = serde_json::from_value(
            obj.get("a").cloned().ok_or_else(|| manifest_err("criterion.a", "missing"))?,
        )
        .map_err(|e| manifest_err("criterion.a", e))?;
        let p: Vec<f64> = serde_json::from_value(
            obj.get("p").cloned().ok_or_else(|| manifest_err("criterion.p", "missing"))?,
        )
        .map_err(|e| manifest_err("criterion.p", e))?;
        let r_min = crate::weight::repeated_log_min_radius(&a, &p);
        let default_r = if sqrt_arg {
            (2.0 * r_min.max(1.0)).powi(2)
        } else {
            2.0 * r_min.max(1.0)
        };
        let radius = obj.get("R").and_then(|r| r.as_f64()).unwrap_or(default_r);
        Ok((a, p, radius))
    };
    Ok(match kind {
        "radial_rho" => {
            let radius = obj
                .get("R")
                .and_then(|r| r.as_f64())
                .ok_or_else(|| manifest_err("criterion.R", "missing"))?;
            let text = obj
                .get("rho")
                .and_then(|r| r.as_str())
                .ok_or_else(|| manifest_err("criterion.rho", "missing"))?;
            CriterionSpec::RadialRho {
                radius,
                rho: parse_expression(text, 1).map_err(|e| manifest_err("criterion.rho", e))?,
            }
        }
        "tensor_affine" => {
            let matrix: Vec<Vec<f64>> = serde_json::from_value(
                obj.get("matrix").cloned().ok_or_else(|| manifest_err("criterion.matrix", "missing"))?,
            )
            .map_err(|e| manifest_err("criterion.matrix", e))?;
            let offset: Vec<f64> = serde_json::from_value(
                obj.get("offset")
                    .cloned()
                    .unwrap_or_else(|| Value::Array(vec![serde_json::json!(0.0); matrix.len()])),
            )
            .map_err(|e| manifest_err("criterion.offset", e))?;
            CriterionSpec::TensorAffine { matrix, offset, factors: rho_factors("factors")? }
        }
        "repeated_log" => {
            let (a, p, radius) = replog(false)?;
            CriterionSpec::RepeatedLogIntegrand { a, p, radius }
        }
        "weight_reciprocal" => CriterionSpec::WeightReciprocal {
            weight: parse_weight(
                obj.get("weight").ok_or_else(|| manifest_err("criterion.weight", "missing"))?,
            )?,
        },
        "stieltjes_weight" => CriterionSpec::StieltjesWeight {
            weight: parse_weight(
                obj.get("weight").ok_or_else(|| manifest_err("criterion.weight", "missing"))?,
            )?,
        },
        "stieltjes_tensor" => CriterionSpec::StieltjesTensor { factors: rho_factors("factors")? },
        "stieltjes_radial" => CriterionSpec::StieltjesRadial {
            weight: parse_weight(
                obj.get("weight").ok_or_else(|| manifest_err("criterion.weight", "missing"))?,
            )?,
        },
        "stieltjes_repeated_log" => {
            let (a, p, radius) = replog(true)?;
            CriterionSpec::StieltjesRepeatedLog { a, p, radius }
        }
        other => return Err(manifest_err("criterion.kind", format!("unknown kind `{other}`"))),
    })
}

fn parse_analysis(v: &Value, n: usize, default_m: u32, default_tol: f64) -> Result<AnalysisKind> {
    let obj = v.as_object().ok_or_else(|| manifest_err("analysis", "expected an object"))?;
    let kind = obj
        .get("kind")
        .and_then(|k| k.as_str())
        .ok_or_else(|| manifest_err("analysis.kind", "missing"))?;
    let allowed: &[&str] = match kind {
        "carleman" => &["kind", "mode", "M"],
        "shohat_tamarkin" => &["kind", "M"],
        "criterion" => &["kind", "spec", "strengthen"],
        "classify_weight" => &["kind", "weight", "max_m"],
        "moments" => &["kind", "M", "s_grid", "alpha_cap"],
        "density" => &["kind", "target", "N"],
        "trig_density" => &["kind", "target", "lo", "hi", "points"],
        "stieltjes_relation" => &["kind", "e", "tol"],
        "log_negativity" => &["kind", "weight", "R"],
        other => return Err(manifest_err("analysis.kind", format!("unknown kind `{other}`"))),
    };
    for key in field_names(v) {
        if !allowed.contains(&key) {
            return Err(manifest_err("analysis", format!("unknown key `{key}` for kind `{kind}`")));
        }
    }
    let m_of = |key: &str, default: u32| -> u32 {
        obj.get(key).and_then(|m| m.as_u64()).map(|m| m as u32).unwrap_or(default)
    };
    Ok(match kind {
        "carleman" => {
            let mode = match obj.get("mode").and_then(|m| m.as_str()).unwrap_or("hamburger") {
                "hamburger" => CarlemanModeJson::Hamburger,
                "stieltjes" => CarlemanModeJson::Stieltjes,
                other => {
                    return Err(manifest_err("analysis.mode", format!("unknown mode `{other}`")))
                }
            };
            AnalysisKind::Carleman { mode, max_degree: m_of("M", default_m) }
        }
        "shohat_tamarkin" => AnalysisKind::ShohatTamarkin { max_degree: m_of("M", default_m) },
        "criterion" => AnalysisKind::Criterion {
            spec: parse_criterion(
                obj.get("spec").ok_or_else(|| manifest_err("analysis.spec", "missing"))?,
            )?,
            strengthen: obj.get("strengthen").and_then(|s| s.as_bool()).unwrap_or(true),
        },
        "classify_weight" => AnalysisKind::ClassifyWeight {
            weight: parse_weight(
                obj.get("weight").ok_or_else(|| manifest_err("analysis.weight", "missing"))?,
            )?,
            max_m: m_of("max_m", 40),
        },
        "moments" => {
            let s_grid: Vec<f64> = match obj.get("s_grid") {
                Some(g) => serde_json::from_value(g.clone())
                    .map_err(|e| manifest_err("analysis.s_grid", e))?,
                None => vec![0.0, 1.0, 1.5, 2.0, 3.0, 4.0, 6.0, 8.0],
            };
            AnalysisKind::Moments {
                max_degree: m_of("M", default_m),
                s_grid,
                alpha_cap: m_of("alpha_cap", DEFAULT_ALPHA_CAP),
            }
        }
        "density" => {
            let target = obj
                .get("target")
                .and_then(|t| t.as_str())
                .ok_or_else(|| manifest_err("analysis.target", "missing"))?;
            // validated here, parsed again at execution time
            parse_expression(target, n).map_err(|e| manifest_err("analysis.target", e))?;
            AnalysisKind::Density { target: target.to_string(), max_degree: m_of("N", 15) }
        }
        "trig_density" => {
            let target = obj
                .get("target")
                .and_then(|t| t.as_str())
                .ok_or_else(|| manifest_err("analysis.target", "missing"))?;
            parse_expression(target, n).map_err(|e| manifest_err("analysis.target", e))?;
            let lo = obj.get("lo").and_then(|x| x.as_f64()).unwrap_or(-1.0);
            let hi = obj.get("hi").and_then(|x| x.as_f64()).unwrap_or(1.0);
            let points: Vec<usize> = match obj.get("points") {
                Some(p) => serde_json::from_value(p.clone())
                    .map_err(|e| manifest_err("analysis.points", e))?,
                None => vec![3, 5, 7, 9, 11],
            };
            AnalysisKind::TrigDensity { target: target.to_string(), lo, hi, points }
        }
        "stieltjes_relation" => {
            let exponents: Vec<u32> = serde_json::from_value(
                obj.get("e").cloned().ok_or_else(|| manifest_err("analysis.e", "missing"))?,
            )
            .map_err(|e| manifest_err("analysis.e", e))?;
            if exponents.len() != n {
                return Err(manifest_err("analysis.e", format!("expected {n} exponents")));
            }
            let tol = obj.get("tol").and_then(|t| t.as_f64()).unwrap_or(default_tol.max(1e-6));
            AnalysisKind::StieltjesRelation { exponents, tol }
        }
        "log_negativity" => AnalysisKind::LogNegativity {
            weight: parse_weight(
                obj.get("weight").ok_or_else(|| manifest_err("analysis.weight", "missing"))?,
            )?,
            start: obj.get("R").and_then(|r| r.as_f64()).unwrap_or(1.0),
        },
        _ => unreachable!(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_manifest_fills_defaults() {
        let m = parse_manifest(
            r#"{"dimension":1,"measure":{"family":"gaussian","mean":[0],"sd":[1]},
                "analyses":[{"kind":"carleman"}]}"#,
        )
        .unwrap();
        assert_eq!(m.numerics.max_degree, 30);
        assert_eq!(m.numerics.tol, 1e-8);
        assert_eq!(m.numerics.seed, 0);
        assert!(m.basis.is_standard());
        assert_eq!(m.analyses.len(), 1);
        // echo carries the resolved numerics
        assert_eq!(m.echo["numerics"]["max_degree"], 30);
    }

    #[test]
    fn singular_basis_rejected() {
        let r = parse_manifest(
            r#"{"dimension":2,"measure":{"family":"gaussian","mean":[0,0],"sd":[1,1]},
                "basis":[[1,1],[1,1]],"analyses":[]}"#,
        );
        assert!(matches!(r, Err(Error::Manifest { field, .. }) if field == "basis"));
    }

    #[test]
    fn unknown_keys_are_errors() {
        let r = parse_manifest(
            r#"{"dimension":1,"measure":{"family":"gaussian","mean":[0],"sd":[1]},
                "analyses":[],"extra":1}"#,
        );
        assert!(r.is_err());
        let r = parse_manifest(
            r#"{"dimension":1,"measure":{"family":"gaussian","mean":[0],"sd":[1],"junk":2},
                "analyses":[]}"#,
        );
        assert!(r.is_err());
        let r = parse_manifest(
            r#"{"dimension":1,"measure":{"family":"lognormal"},
                "analyses":[{"kind":"carleman","bogus":true}]}"#,
        );
        assert!(matches!(r, Err(Error::Manifest { .. })));
    }

    #[test]
    fn measure_wire_formats() {
        let v: Value = serde_json::json!({"family":"perturbed_lognormal","theta":0.5});
        assert!(matches!(
            parse_measure(&v, 1).unwrap(),
            MeasureSpec::PerturbedLogNormal { theta } if theta == 0.5
        ));
        let v: Value = serde_json::json!({"discrete":[[[0.0],0.3],[[1.0],0.7]]});
        assert!(matches!(parse_measure(&v, 1).unwrap(), MeasureSpec::Discrete { .. }));
        let v: Value = serde_json::json!({"family":"product","factors":[
            {"family":"gamma","shape":2.0,"scale":1.0},
            {"family":"exponential","rate":1.0}]});
        assert!(matches!(parse_measure(&v, 2).unwrap(), MeasureSpec::ProductOf1D { .. }));
        // theta out of range is a domain error
        let v: Value = serde_json::json!({"family":"perturbed_lognormal","theta":1.5});
        assert!(parse_measure(&v, 1).is_err());
    }

    #[test]
    fn density_normalization_pass_runs() {
        let m = parse_manifest(
            r#"{"dimension":1,
                "measure":{"density":"exp(-(x1^2))","support":{"kind":"all_space"}},
                "analyses":[]}"#,
        )
        .unwrap();
        match &m.measure {
            MeasureSpec::DensityExpr { ln_normalization: Some(ln), .. } => {
                // integral of exp(-x^2) = sqrt(pi)
                let expect = std::f64::consts::PI.sqrt().ln();
                assert!((ln - expect).abs() < 1e-6, "ln norm = {ln}");
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn weight_and_criterion_wires() {
        let w = parse_weight(&serde_json::json!({"kind":"repeated_log","a":[1,1],"p":[1,2]})).unwrap();
        assert!(matches!(w, WeightSpec::RepeatedLog { .. }));
        let w = parse_weight(&serde_json::json!({"kind":"exp_decay","epsilon":0.5})).unwrap();
        assert!(matches!(w, WeightSpec::ExpDecay { .. }));
        let c = parse_criterion(&serde_json::json!({"kind":"radial_rho","R":2.0,"rho":"x1"})).unwrap();
        assert!(matches!(c, CriterionSpec::RadialRho { .. }));
        let c = parse_criterion(&serde_json::json!({
            "kind":"stieltjes_radial","weight":{"kind":"exp_decay","epsilon":1.0}}))
        .unwrap();
        assert!(c.is_stieltjes());
        assert!(parse_weight(&serde_json::json!({"kind":"nope"})).is_err());
    }
}
