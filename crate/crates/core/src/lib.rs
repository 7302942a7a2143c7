//! Numerical toolkit for deciding moment-problem determinacy of measures on
//! R^n: Carleman-type series tests in every basis direction, quasi-analytic
//! weight classification, integral criteria (Hamburger and Stieltjes), and
//! an L2 density lab built on orthonormal polynomials and trigonometric
//! spans.
//!
//! The crate is organized around a manifest-driven pipeline: parse an
//! analysis manifest, run each requested analysis against the declared
//! measure, and emit an evidence-carrying report. Every verdict is
//! explicitly one of sufficient / criterion-not-met / inconclusive; the
//! numeric tests are one-sided and the inconclusive outcome is deliberate.

pub mod criteria;
pub mod density;
pub mod error;
pub mod expr;
pub mod logdomain;
pub mod manifest;
pub mod measure;
pub mod moments;
pub mod quad;
pub mod report;
pub mod weight;

pub use error::{Error, Result};
pub use expr::{parse_expression, ExprAst};
pub use logdomain::SignedLog;
pub use measure::{Basis, Cone, MeasureSpec, SupportDescriptor};
pub use quad::{classify_tail, integrate, tail_profile, FiniteVerdict, QuadSettings, TailProfile};
