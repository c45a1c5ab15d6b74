//! Nonparametric drift estimation for jump diffusions from `N` i.i.d. paths.
//!
//! The pipeline is: simulate paths of
//! `dX = b(X) dt + σ(X) dB + γ(X) d𝔷` ([`sim`]), build a projection
//! least-squares fit of `b` on an orthonormal family ([`basis`],
//! [`estimator`]), choose the dimension by penalized contrast
//! ([`selection`]) and measure the error ([`metrics`]).
//!
//! ```
//! use jumpdrift::{builtin_model, simulate_bundle, BasisSpec, GateMode, TimeGrid};
//! use jumpdrift::estimator::fit_projection_with;
//!
//! let model = builtin_model(1).unwrap();
//! let grid = TimeGrid::new(5.0, 200).unwrap();
//! let bundle = simulate_bundle(&model, &grid, 50, 7).unwrap();
//! let spec = BasisSpec::trigonometric(-3.0, 3.0).unwrap();
//! let fit = fit_projection_with(&bundle, &spec, 3, GateMode::Off).unwrap();
//! assert_eq!(fit.theta.len(), 3);
//! ```

pub mod basis;
pub mod error;
pub mod estimator;
pub mod io;
pub mod linalg;
pub mod metrics;
pub mod quadrature;
pub mod rng;
pub mod selection;
pub mod sim;

pub use basis::{BasisKind, BasisSpec, LBound};
pub use error::{Error, Result};
pub use estimator::{fit_projection, DriftFit, EmpiricalMoments, GateMode, TruncationConstants};
pub use linalg::SymMatrix;
pub use metrics::{run_experiment, ExperimentConfig, ExperimentReport, TraceCheck, TraceCheckConfig};
pub use selection::{select_model, DtMode, SelectionConfig, SelectionResult};
pub use sim::{builtin_model, simulate_bundle, JumpLaw, PathBundle, SdeModel, TimeGrid};

/// Serializes `±∞` as the strings `"inf"` / `"-inf"`, which JSON cannot hold as numbers.
pub(crate) mod serde_inf {
    use serde::{de, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_infinite() {
            s.serialize_str(if *v > 0.0 { "inf" } else { "-inf" })
        } else {
            s.serialize_f64(*v)
        }
    }

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Str(String),
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Num(v) => Ok(v),
            Repr::Str(s) if s == "inf" => Ok(f64::INFINITY),
            Repr::Str(s) if s == "-inf" => Ok(f64::NEG_INFINITY),
            Repr::Str(s) => Err(de::Error::custom(format!("expected a number or \"inf\", got {s:?}"))),
        }
    }
}
