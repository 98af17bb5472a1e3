//! Verification evaluation: pair generation under imposed rotations, deep
//! and iris-code scoring, ROC statistics and gradient saliency.

mod pairs;
mod roc;
mod saliency;

pub use pairs::{
    cosine, make_pairs, score_pairs_codes, score_pairs_deep, Pair, PairCounts, PairSet, Regime,
};
pub use roc::{
    compute_roc, eer_from_points, roc_points, FrrAtFar, Roc, RocPoint, DEFAULT_FAR_LEVELS,
};
pub use saliency::{gradient_saliency, saliency_map, saliency_pgm, shifted_correlation};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::TOOL_VERSION;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportMeta {
    /// Scoring method, e.g. `afinet`, `no-vlad`, `loggabor`.
    pub method: String,
    pub regime: Regime,
    /// Digest of the model checkpoint or encoder parameters.
    pub model_digest: String,
    pub config_digest: String,
    pub tool: String,
}

impl ReportMeta {
    pub fn new(method: &str, regime: Regime, model_digest: &str, config_digest: &str) -> Self {
        Self {
            method: method.into(),
            regime,
            model_digest: model_digest.into(),
            config_digest: config_digest.into(),
            tool: TOOL_VERSION.into(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub meta: ReportMeta,
    pub genuine_pairs: usize,
    pub impostor_pairs: usize,
    pub genuine: Vec<f64>,
    pub impostor: Vec<f64>,
    pub far_levels: Vec<f64>,
    pub roc: Roc,
}

impl EvalReport {
    pub fn from_scores(
        meta: ReportMeta,
        genuine: Vec<f64>,
        impostor: Vec<f64>,
        far_levels: &[f64],
    ) -> Result<Self> {
        let roc = compute_roc(&genuine, &impostor, far_levels)?;
        Ok(Self {
            meta,
            genuine_pairs: genuine.len(),
            impostor_pairs: impostor.len(),
            genuine,
            impostor,
            far_levels: far_levels.to_vec(),
            roc,
        })
    }

    /// Rebuilds the ROC from the stored scores and checks it matches.
    pub fn verify(&self) -> Result<()> {
        let roc = compute_roc(&self.genuine, &self.impostor, &self.far_levels)?;
        if roc != self.roc {
            return Err(Error::invalid(
                "evaluation report",
                "ROC does not match the stored scores",
            ));
        }
        Ok(())
    }

    pub fn eer(&self) -> f64 {
        self.roc.eer
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("serializable report")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let report: Self = serde_json::from_str(text)
            .map_err(|e| Error::invalid("evaluation report", e.to_string()))?;
        report.verify()?;
        Ok(report)
    }
}
