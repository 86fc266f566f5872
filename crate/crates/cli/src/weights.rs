//! Optional JSON file overriding the solver weights of each stage.
//!
//! ```json
//! {
//!   "ik": { "w_residual": [...], "w_damping": [...], "max_iters": 100, "smoothing_window": 5 },
//!   "id": { "base": 1e4, "actuated": 1.0, "regularization": 1e-6 },
//!   "muscle": { "w_torque": [...], "w_tension": [...] }
//! }
//! ```
//!
//! Every section and field may be omitted.

use std::path::Path;

use serde::Deserialize;
use softrigid::contact::IdWeights;
use softrigid::ik::SequenceSettings;
use softrigid::muscle::MuscleWeights;

use crate::CliError;

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WeightsFile {
    pub ik: IkSection,
    pub id: IdSection,
    pub muscle: MuscleSection,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IkSection {
    pub w_residual: Vec<f64>,
    pub w_damping: Vec<f64>,
    pub max_iters: Option<usize>,
    pub smoothing_window: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IdSection {
    pub base: Option<f64>,
    pub actuated: Option<f64>,
    pub regularization: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MuscleSection {
    pub w_torque: Vec<f64>,
    pub w_tension: Vec<f64>,
}

impl WeightsFile {
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| CliError::Parse {
            location: format!("{} line {} column {}", path.display(), e.line(), e.column()),
            message: e.to_string(),
        })
    }

    pub fn ik_settings(&self) -> SequenceSettings {
        let mut s = SequenceSettings::default();
        s.frame.w_residual = self.ik.w_residual.clone();
        s.frame.w_damping = self.ik.w_damping.clone();
        if let Some(n) = self.ik.max_iters {
            s.frame.max_iters = n;
        }
        if let Some(w) = self.ik.smoothing_window {
            s.smoothing_window = w;
        }
        s
    }

    pub fn id_weights(&self, mu: Option<f64>) -> IdWeights {
        let d = IdWeights::default();
        IdWeights {
            base: self.id.base.unwrap_or(d.base),
            actuated: self.id.actuated.unwrap_or(d.actuated),
            regularization: self.id.regularization.unwrap_or(d.regularization),
            mu_override: mu,
        }
    }

    pub fn muscle_weights(&self) -> MuscleWeights {
        MuscleWeights {
            w_torque: self.muscle.w_torque.clone(),
            w_tension: self.muscle.w_tension.clone(),
        }
    }
}
