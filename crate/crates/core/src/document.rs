//! JSON problem documents: problem, grid and training settings in one file.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::model::{
    CostSpec, ModeDynamics, Omega, ProblemSpec, ReferenceModel, SwitchedTrackingProblem,
};
use crate::snac::{SamplingMode, TrainConfig, WeightInit};
use crate::transform::TransformedGrid;

/// Version of the document layout, reported by `--version`.
pub const SCHEMA_VERSION: &str = "1";

pub const BUNDLED_VDP: &str = include_str!("../configs/vdp.json");
pub const BUNDLED_LQ_TWO_MODE: &str = include_str!("../configs/lq_two_mode.json");

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ModeDocument {
    Linear {
        #[serde(rename = "A")]
        a: Vec<Vec<f64>>,
        #[serde(rename = "B")]
        b: Vec<Vec<f64>>,
    },
    VanDerPol,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ReferenceKind {
    Sinusoid,
    Constant,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReferenceDocument {
    #[serde(rename = "type")]
    pub kind: ReferenceKind,
    pub r0: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OmegaDocument {
    pub state_lo: Vec<f64>,
    pub state_hi: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub switch_lo: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub switch_hi: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub switch_margin: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainDocument {
    pub eta: usize,
    pub gamma: f64,
    pub max_inner: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ridge: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sampling: Option<SamplingMode>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub init: Option<WeightInit>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemDocument {
    pub modes: Vec<ModeDocument>,
    /// 1-based mode indices.
    pub sequence: Vec<usize>,
    pub t0: f64,
    pub tf: f64,
    #[serde(rename = "S")]
    pub s: Vec<Vec<f64>>,
    #[serde(rename = "Qbar")]
    pub qbar: Vec<Vec<f64>>,
    #[serde(rename = "Rbar")]
    pub rbar: Vec<Vec<f64>>,
    pub reference: ReferenceDocument,
    pub omega: OmegaDocument,
    pub dthat: f64,
    pub basis_degree: u32,
    pub train: TrainDocument,
    #[serde(default = "default_terminal_factor")]
    pub terminal_factor: f64,
    /// Initial state used by commands that need one and were not given one.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x0: Option<Vec<f64>>,
}

fn default_terminal_factor() -> f64 {
    1.0
}

fn matrix(name: &str, rows: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let ncols = rows.first().map_or(0, Vec::len);
    if rows.is_empty() || ncols == 0 || rows.iter().any(|r| r.len() != ncols) {
        return Err(Error::Dimension(format!("{} must be a non-empty rectangular array of rows", name)));
    }
    Ok(DMatrix::from_fn(rows.len(), ncols, |i, j| rows[i][j]))
}

impl ProblemDocument {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// First 16 hex digits of SHA-256 over the compact JSON serialization.
    pub fn config_hash(&self) -> String {
        let text = serde_json::to_string(self).expect("documents always serialize");
        hex::encode(&Sha256::digest(text.as_bytes())[..8])
    }

    pub fn to_spec(&self) -> Result<ProblemSpec> {
        let modes = self
            .modes
            .iter()
            .enumerate()
            .map(|(i, m)| match m {
                ModeDocument::Linear { a, b } => Ok(ModeDynamics::Linear {
                    a: matrix(&format!("modes[{}].A", i), a)?,
                    b: matrix(&format!("modes[{}].B", i), b)?,
                }),
                ModeDocument::VanDerPol => Ok(ModeDynamics::VanDerPol),
            })
            .collect::<Result<Vec<_>>>()?;
        let sequence = self
            .sequence
            .iter()
            .map(|&v| {
                if v == 0 || v > modes.len() {
                    Err(Error::Validation(format!(
                        "sequence entry {} is not a mode index in 1..={}",
                        v,
                        modes.len()
                    )))
                } else {
                    Ok(v - 1)
                }
            })
            .collect::<Result<Vec<_>>>()?;
        let r0 = DVector::from_vec(self.reference.r0.clone());
        let reference = match self.reference.kind {
            ReferenceKind::Sinusoid => ReferenceModel::sinusoid(r0),
            ReferenceKind::Constant => ReferenceModel::constant(r0),
        };
        Ok(ProblemSpec {
            modes,
            sequence,
            t0: self.t0,
            tf: self.tf,
            cost: CostSpec {
                s: matrix("S", &self.s)?,
                qbar: matrix("Qbar", &self.qbar)?,
                rbar: matrix("Rbar", &self.rbar)?,
            },
            reference,
            omega: Omega {
                state_lo: DVector::from_vec(self.omega.state_lo.clone()),
                state_hi: DVector::from_vec(self.omega.state_hi.clone()),
                switch_lo: self.omega.switch_lo,
                switch_hi: self.omega.switch_hi,
                switch_margin: self.omega.switch_margin,
            },
            terminal_factor: self.terminal_factor,
        })
    }

    pub fn problem(&self) -> Result<SwitchedTrackingProblem> {
        SwitchedTrackingProblem::new(self.to_spec()?)
    }

    pub fn grid(&self) -> Result<TransformedGrid> {
        if self.sequence.is_empty() {
            return Err(Error::Validation("sequence is empty".into()));
        }
        TransformedGrid::new(self.sequence.len() - 1, self.dthat)
    }

    /// Training settings; `seed` overrides the document's seed.
    pub fn train_config(&self, seed: Option<u64>) -> TrainConfig {
        let d = TrainConfig::default();
        TrainConfig {
            basis_degree: self.basis_degree,
            eta: self.train.eta,
            gamma: self.train.gamma,
            max_inner: self.train.max_inner,
            seed: seed.or(self.train.seed).unwrap_or(d.seed),
            ridge: self.train.ridge,
            sampling: self.train.sampling.unwrap_or(d.sampling),
            init: self.train.init.unwrap_or(d.init),
        }
    }

    pub fn initial_state(&self) -> Option<DVector<f64>> {
        self.x0.as_ref().map(|v| DVector::from_vec(v.clone()))
    }
}
