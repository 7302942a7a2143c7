//! Manifest execution and report emission. A report echoes the resolved
//! manifest, carries one evidence-laden result per analysis, and serializes
//! deterministically: floats at 17 significant digits, maps in fixed order,
//! timestamps and wall-clock removed under the no-timestamp mode.

use crate::criteria::{
    extended_carleman_check, integral_criterion, shohat_tamarkin_check, strengthen_to_determinate,
    CarlemanMode, DeterminacyOutcome, DeterminacyVerdict, Evidence, MomentRelationCheck,
};
use crate::density::{
    gram_matrix, orthonormalize, poly_projection_error, trig_projection_error, uniform_grid_1d,
    PolyProjection, TrigProjection, TrigSystem,
};
use crate::error::{Error, Result};
use crate::manifest::{AnalysisKind, AnalysisManifest, CarlemanModeJson, OutputFormat, OutputSpec};
use crate::measure::Cone;
use crate::moments::{MomentEngine, MomentTable};
use crate::quad::FiniteVerdict;
use crate::weight::{QAVerdict, WeightEval};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use std::io::Write as _;
use std::path::PathBuf;
use std::time::Instant;

pub const TOOL_NAME: &str = "momdet";
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ToolInfo {
    pub name: String,
    pub version: String,
}

/// The fixed classifier constants, echoed so every report names the
/// decision rules its verdicts depend on.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MethodInfo {
    pub beta_band: f64,
    pub beta_fit_window: String,
    pub ratio_band: f64,
    pub diagnostic_tol: f64,
    pub pivot_threshold: f64,
    pub trig_eig_floor: f64,
}

impl Default for MethodInfo {
    fn default() -> Self {
        MethodInfo {
            beta_band: crate::criteria::BETA_BAND,
            beta_fit_window: "top_half_of_horizon".into(),
            ratio_band: crate::quad::RATIO_BAND,
            diagnostic_tol: crate::weight::DIAGNOSTIC_TOL,
            pivot_threshold: crate::density::PIVOT_THRESHOLD,
            trig_eig_floor: crate::density::TRIG_EIG_FLOOR,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Report {
    pub tool: ToolInfo,
    pub seed: u64,
    /// Whether Monte Carlo fallbacks were permitted for this run.
    pub mc_fallback_enabled: bool,
    pub method: MethodInfo,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub timestamp: Option<String>,
    pub manifest: serde_json::Value,
    pub analyses: Vec<AnalysisReport>,
}

impl Report {
    /// Exit code contract: zero iff no analysis entry errored.
    pub fn all_ok(&self) -> bool {
        self.analyses.iter().all(|a| a.error.is_none())
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AnalysisReport {
    pub id: String,
    pub kind: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub wall_ms: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub result: Option<AnalysisResult>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub enum AnalysisResult {
    Determinacy {
        verdict: DeterminacyVerdict,
        #[serde(skip_serializing_if = "Option::is_none")]
        strengthened: Option<DeterminacyVerdict>,
    },
    WeightClassification {
        verdict: QAVerdict,
    },
    Moments {
        table: MomentTable,
    },
    Density {
        projection: PolyProjection,
        basis: crate::density::OrthoPolyBasis,
    },
    TrigDensity {
        series: Vec<TrigProjection>,
    },
    StieltjesRelation {
        checks: Vec<MomentRelationCheck>,
    },
    LogNegativity {
        verdict: FiniteVerdict,
    },
}

/// Executes every analysis in the manifest. Analyses run concurrently; the
/// report lists them in manifest order, and per-entry failures are recorded
/// without aborting the run.
pub fn run_manifest(manifest: &AnalysisManifest, with_timing: bool) -> Report {
    let results: Vec<AnalysisReport> = manifest
        .analyses
        .par_iter()
        .enumerate()
        .map(|(i, kind)| {
            let id = format!("a{i}_{}", kind.kind_name());
            let start = Instant::now();
            let outcome = run_analysis(manifest, kind);
            let wall_ms = if with_timing {
                Some(start.elapsed().as_secs_f64() * 1e3)
            } else {
                None
            };
            match outcome {
                Ok(result) => AnalysisReport {
                    id,
                    kind: kind.kind_name().to_string(),
                    wall_ms,
                    result: Some(result),
                    error: None,
                },
                Err(e) => AnalysisReport {
                    id,
                    kind: kind.kind_name().to_string(),
                    wall_ms,
                    result: None,
                    error: Some(e.to_string()),
                },
            }
        })
        .collect();

    let timestamp = if with_timing {
        let secs = std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0);
        Some(format!("{secs}"))
    } else {
        None
    };

    Report {
        tool: ToolInfo { name: TOOL_NAME.into(), version: TOOL_VERSION.into() },
        seed: manifest.numerics.seed,
        mc_fallback_enabled: manifest.numerics.mc_fallback,
        method: MethodInfo::default(),
        timestamp,
        manifest: manifest.echo.clone(),
        analyses: results,
    }
}

fn default_cone(manifest: &AnalysisManifest) -> Cone {
    manifest.cone.clone().unwrap_or_else(|| Cone::standard(manifest.dimension))
}

fn run_analysis(manifest: &AnalysisManifest, kind: &AnalysisKind) -> Result<AnalysisResult> {
    let settings = manifest.numerics.quad();
    let spec = &manifest.measure;
    match kind {
        AnalysisKind::Carleman { mode, max_degree } => {
            let engine = MomentEngine::new(spec, Some(manifest.basis.clone()), &settings);
            let mode = match mode {
                CarlemanModeJson::Hamburger => CarlemanMode::Hamburger,
                CarlemanModeJson::Stieltjes => {
                    CarlemanMode::Stieltjes { cone: default_cone(manifest) }
                }
            };
            let verdict = extended_carleman_check(spec, &engine, *max_degree, &mode, &settings)?;
            let strengthened = match (&mode, verdict.outcome) {
                (CarlemanMode::Stieltjes { cone }, DeterminacyOutcome::SufficientCDeterminate) => {
                    Some(strengthen_to_determinate(&verdict, spec, cone))
                }
                _ => None,
            };
            Ok(AnalysisResult::Determinacy { verdict, strengthened })
        }
        AnalysisKind::ShohatTamarkin { max_degree } => {
            let engine = MomentEngine::new(spec, None, &settings);
            let verdict = shohat_tamarkin_check(&engine, *max_degree);
            Ok(AnalysisResult::Determinacy { verdict, strengthened: None })
        }
        AnalysisKind::Criterion { spec: crit, strengthen } => {
            let cone = default_cone(manifest);
            let verdict = integral_criterion(spec, crit, Some(&cone), &settings)?;
            let strengthened = if *strengthen
                && verdict.outcome == DeterminacyOutcome::SufficientCDeterminate
            {
                Some(strengthen_to_determinate(&verdict, spec, &cone))
            } else {
                None
            };
            Ok(AnalysisResult::Determinacy { verdict, strengthened })
        }
        AnalysisKind::ClassifyWeight { weight, max_m } => {
            weight.validate(&settings)?;
            let verdict = WeightEval::new(weight, &settings).classify(manifest.dimension, *max_m);
            Ok(AnalysisResult::WeightClassification { verdict })
        }
        AnalysisKind::Moments { max_degree, s_grid, alpha_cap } => {
            let engine = MomentEngine::new(spec, Some(manifest.basis.clone()), &settings);
            let table = engine.table(*max_degree, s_grid, *alpha_cap);
            Ok(AnalysisResult::Moments { table })
        }
        AnalysisKind::Density { target, max_degree } => {
            let ast = crate::expr::parse_expression(target, manifest.dimension)?;
            let engine = MomentEngine::new(spec, None, &settings);
            let gram = gram_matrix(&engine, *max_degree)?;
            let basis = orthonormalize(&gram, spec.fingerprint())?;
            let f = move |x: &[f64]| ast.eval(x);
            let projection = poly_projection_error(&f, spec, &basis, &settings)?;
            Ok(AnalysisResult::Density { projection, basis })
        }
        AnalysisKind::TrigDensity { target, lo, hi, points } => {
            let ast = crate::expr::parse_expression(target, manifest.dimension)?;
            if manifest.dimension != 1 {
                return Err(Error::Unsupported(
                    "trigonometric grids are generated for 1-D measures".into(),
                ));
            }
            let f = move |x: &[f64]| ast.eval(x);
            let mut series = Vec::new();
            for &pts in points {
                let grid = uniform_grid_1d(*lo, *hi, pts);
                let system = TrigSystem::new(spec, grid, &settings)?;
                series.push(trig_projection_error(&f, spec, &system, &settings)?);
            }
            Ok(AnalysisResult::TrigDensity { series })
        }
        AnalysisKind::StieltjesRelation { exponents, tol } => {
            let cone = default_cone(manifest);
            let check =
                crate::criteria::verify_moment_relation(spec, &cone, exponents, *tol, &settings)?;
            Ok(AnalysisResult::StieltjesRelation { checks: vec![check] })
        }
        AnalysisKind::LogNegativity { weight, start } => {
            weight.validate(&settings)?;
            let ev = WeightEval::new(weight, &settings);
            let n = weight.dimension().unwrap_or(manifest.dimension);
            let mut direction = vec![0.0; n];
            direction[0] = 1.0;
            let verdict = ev.log_negativity_integral(&vec![0.0; n], &direction, *start)?;
            Ok(AnalysisResult::LogNegativity { verdict })
        }
    }
}

// serde_json formatter pinning every float to 17 significant digits
struct SeventeenDigits;

impl serde_json::ser::Formatter for SeventeenDigits {
    fn write_f64<W>(&mut self, writer: &mut W, value: f64) -> std::io::Result<()>
    where
        W: ?Sized + std::io::Write,
    {
        write!(writer, "{value:.16e}")
    }

    fn write_f32<W>(&mut self, writer: &mut W, value: f32) -> std::io::Result<()>
    where
        W: ?Sized + std::io::Write,
    {
        write!(writer, "{value:.16e}")
    }
}

/// The canonical JSON encoding of a report.
pub fn report_to_json(report: &Report) -> Result<String> {
    let mut buf = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut buf, SeventeenDigits);
    report.serialize(&mut ser)?;
    let mut s = String::from_utf8(buf).expect("serializer emits utf-8");
    s.push('\n');
    Ok(s)
}

/// Writes the report (and, for the CSV format, one series file per
/// analysis) into the output directory; with no directory the JSON goes to
/// the returned string only.
pub fn emit(report: &Report, output: &OutputSpec) -> Result<(String, Vec<PathBuf>)> {
    let json = report_to_json(report)?;
    let mut written = Vec::new();
    if let Some(dir) = &output.dir {
        let dir = PathBuf::from(dir);
        std::fs::create_dir_all(&dir)
            .map_err(|e| Error::Io { path: dir.display().to_string(), source: e })?;
        let report_path = dir.join("report.json");
        write_file(&report_path, json.as_bytes())?;
        written.push(report_path);
        if matches!(output.format, OutputFormat::Csv) {
            for analysis in &report.analyses {
                for (suffix, content) in csv_series(analysis) {
                    let path = dir.join(format!("{}{suffix}.csv", analysis.id));
                    write_file(&path, content.as_bytes())?;
                    written.push(path);
                }
            }
        }
    }
    Ok((json, written))
}

fn write_file(path: &PathBuf, bytes: &[u8]) -> Result<()> {
    let mut f = std::fs::File::create(path)
        .map_err(|e| Error::Io { path: path.display().to_string(), source: e })?;
    f.write_all(bytes)
        .map_err(|e| Error::Io { path: path.display().to_string(), source: e })?;
    Ok(())
}

/// Plot-ready CSV series for one analysis: carleman partial sums, tail
/// profiles, and projection-error curves.
fn csv_series(analysis: &AnalysisReport) -> Vec<(String, String)> {
    let mut out = Vec::new();
    let Some(result) = &analysis.result else {
        return out;
    };
    match result {
        AnalysisResult::Determinacy { verdict, .. } => {
            let mut sums = String::from("direction,m,partial_sum\n");
            let mut any_sum = false;
            let mut tails = String::from("shell,radius,sign,ln_partial,ln_increment,ln_err\n");
            let mut any_tail = false;
            for e in &verdict.evidence {
                match e {
                    Evidence::Series { direction, classification } => {
                        for (i, s) in classification.partial_sums.iter().enumerate() {
                            let _ = writeln!(sums, "{},{},{:.16e}", direction + 1, i + 1, s);
                        }
                        any_sum = true;
                    }
                    Evidence::Tail { profile, .. } => {
                        for k in 0..profile.shells() {
                            let _ = writeln!(
                                tails,
                                "{},{:.16e},{},{:.16e},{:.16e},{:.16e}",
                                k,
                                profile.radii[k],
                                profile.partials[k].sign,
                                profile.partials[k].ln_abs,
                                profile.increments[k].ln_abs,
                                profile.errors[k].ln_abs
                            );
                        }
                        any_tail = true;
                    }
                    _ => {}
                }
            }
            if any_sum {
                out.push(("_series".to_string(), sums));
            }
            if any_tail {
                out.push(("_tail".to_string(), tails));
            }
        }
        AnalysisResult::Moments { table } => {
            out.push(("".to_string(), table.to_csv()));
        }
        AnalysisResult::Density { projection, basis } => {
            let mut s = String::from("degree,error\n");
            for (k, e) in projection.errors.iter().enumerate() {
                let _ = writeln!(s, "{k},{e:.16e}");
            }
            out.push(("".to_string(), s));
            out.push(("_basis".to_string(), basis.to_csv()));
        }
        AnalysisResult::TrigDensity { series } => {
            let mut s = String::from("grid_size,error\n");
            for t in series {
                let _ = writeln!(s, "{},{:.16e}", t.grid_size, t.error);
            }
            out.push(("".to_string(), s));
        }
        AnalysisResult::StieltjesRelation { checks } => {
            let mut s = String::from("exponents,lhs_sign,lhs_ln,rhs_sign,rhs_ln,residual,passed\n");
            for c in checks {
                let e: Vec<String> = c.exponents.iter().map(|x| x.to_string()).collect();
                let _ = writeln!(
                    s,
                    "{},{},{:.16e},{},{:.16e},{:.6e},{}",
                    e.join("|"),
                    c.lhs.sign,
                    c.lhs.ln_abs,
                    c.rhs.sign,
                    c.rhs.ln_abs,
                    c.residual,
                    c.passed
                );
            }
            out.push(("".to_string(), s));
        }
        _ => {}
    }
    out
}
