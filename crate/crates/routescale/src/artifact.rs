use serde::{Deserialize, Serialize};

use routescale_core::fit::FitResult;
use routescale_core::law::LawForm;

use crate::error::CliResult;

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArtifactMetadata {
    pub law_form: LawForm,
    /// SHA-256 of the canonical CSV of the fitted records.
    pub data_hash: String,
    pub seed: u64,
    pub tool_version: String,
    /// Only set on request, so that reruns produce identical files.
    pub timestamp: Option<String>,
}

/// A fit plus what is needed to reproduce it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitArtifact {
    #[serde(rename = "FitResult")]
    pub fit: FitResult,
    pub metadata: ArtifactMetadata,
}

impl FitArtifact {
    pub fn to_json(&self) -> CliResult<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(text: &str) -> CliResult<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use routescale_core::law::LawCoefficients;
    use proptest::prelude::*;

    fn artifact(a: f64, c: f64, em: f64, residual: f64, seed: u64, stamp: Option<String>) -> FitArtifact {
        FitArtifact {
            fit: FitResult {
                coefficients: LawCoefficients::saturated(a, -0.1, c, 1.1, 1.5, em),
                rmsle: residual.abs(),
                residuals: vec![residual, -residual, 0.0],
                objective: 2.0 * residual * residual,
                starts_tried: 64,
                converged: true,
                seed,
            },
            metadata: ArtifactMetadata {
                law_form: LawForm::Saturated,
                data_hash: "00".repeat(32),
                seed,
                tool_version: TOOL_VERSION.into(),
                timestamp: stamp,
            },
        }
    }

    proptest! {
        #[test]
        fn json_round_trip_is_lossless(a in -1.0f64..0.0, c in 0.0f64..0.1, em in 32.0f64..1e5,
                                       r in -0.1f64..0.1, seed in any::<u64>(), stamped in any::<bool>()) {
            let x = artifact(a, c, em, r, seed, stamped.then(|| "2026-01-01T00:00:00Z".to_string()));
            let back = FitArtifact::from_json(&x.to_json().unwrap()).unwrap();
            prop_assert_eq!(back, x);
        }
    }

    #[test]
    fn field_names_are_explicit() {
        let json = artifact(-0.08, 0.009, 300.0, 0.01, 7, None).to_json().unwrap();
        for key in ["\"FitResult\"", "\"coefficients\"", "\"e_start\"", "\"starts_tried\"", "\"law_form\"", "\"data_hash\"", "\"timestamp\": null"] {
            assert!(json.contains(key), "{key} missing from {json}");
        }
    }
}
