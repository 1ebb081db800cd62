//! Versioned, self-describing model documents used for restarts and
//! re-summarizing without refitting.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::basis::SplineBasis;
use crate::error::{NbvbError, Result};
use crate::model::Hyperparams;
use crate::online::OnlineState;
use crate::posterior::MixturePosterior;

pub const SNAPSHOT_FORMAT: &str = "nbvb-snapshot";
pub const SNAPSHOT_VERSION: &str = "1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SnapshotKind {
    Batch,
    Online,
}

/// One covariate of the additive model: always a linear fixed effect, plus
/// a spline random-effect block when `spline` is set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovariateSpec {
    pub name: String,
    /// Sample median, used to hold the covariate fixed in curve summaries.
    pub median: f64,
    pub spline: Option<SplineBasis>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub response: String,
    pub covariates: Vec<CovariateSpec>,
    pub hyper: Hyperparams,
}

impl ModelSpec {
    pub fn p(&self) -> usize {
        1 + self.covariates.len()
    }

    pub fn block_sizes(&self) -> Vec<usize> {
        self.covariates
            .iter()
            .filter_map(|c| c.spline.as_ref().map(|b| b.num_basis()))
            .collect()
    }

    pub fn dim(&self) -> usize {
        self.p() + self.block_sizes().iter().sum::<usize>()
    }

    pub fn bases(&self) -> Vec<SplineBasis> {
        self.covariates
            .iter()
            .filter_map(|c| c.spline.clone())
            .collect()
    }

    /// Design rows [1 | x | Z_1 ... Z_r] for covariate columns of equal length.
    pub fn design_rows(&self, columns: &[&[f64]]) -> Result<DMatrix<f64>> {
        if columns.len() != self.covariates.len() {
            return Err(NbvbError::Domain(format!(
                "expected {} covariate columns, got {}",
                self.covariates.len(),
                columns.len()
            )));
        }
        let n = columns.first().map_or(0, |c| c.len());
        if columns.iter().any(|c| c.len() != n) {
            return Err(NbvbError::Domain(
                "covariate columns differ in length".into(),
            ));
        }
        let mut out = DMatrix::zeros(n, self.dim());
        out.column_mut(0).fill(1.0);
        for (j, col) in columns.iter().enumerate() {
            out.column_mut(1 + j).copy_from_slice(col);
        }
        let mut start = self.p();
        for (spec, col) in self.covariates.iter().zip(columns) {
            if let Some(basis) = &spec.spline {
                let z = basis.evaluate(col)?;
                out.view_mut((0, start), (n, z.ncols())).copy_from(&z);
                start += z.ncols();
            }
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub format: String,
    pub version: String,
    pub kind: SnapshotKind,
    pub model: ModelSpec,
    pub posterior: MixturePosterior,
    pub online: Option<OnlineState>,
}

impl Snapshot {
    pub fn new(
        kind: SnapshotKind,
        model: ModelSpec,
        posterior: MixturePosterior,
        online: Option<OnlineState>,
    ) -> Self {
        Self {
            format: SNAPSHOT_FORMAT.to_string(),
            version: SNAPSHOT_VERSION.to_string(),
            kind,
            model,
            posterior,
            online,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| NbvbError::Snapshot(e.to_string()))
    }

    /// Parses a document, rejecting foreign formats and unknown versions
    /// before looking at the payload.
    pub fn from_json(s: &str) -> Result<Self> {
        let value: serde_json::Value =
            serde_json::from_str(s).map_err(|e| NbvbError::Snapshot(e.to_string()))?;
        let field = |name: &str| value.get(name).and_then(|v| v.as_str()).map(str::to_owned);
        match field("format") {
            Some(f) if f == SNAPSHOT_FORMAT => {}
            other => {
                return Err(NbvbError::Snapshot(format!(
                    "not a model snapshot (format {other:?})"
                )))
            }
        }
        match field("version") {
            Some(v) if v == SNAPSHOT_VERSION => {}
            Some(v) => {
                return Err(NbvbError::Snapshot(format!(
                    "snapshot version {v:?} is incompatible with supported version {SNAPSHOT_VERSION:?}"
                )))
            }
            None => return Err(NbvbError::Snapshot("snapshot has no version field".into())),
        }
        let snap: Snapshot =
            serde_json::from_value(value).map_err(|e| NbvbError::Snapshot(e.to_string()))?;
        if snap.posterior.dim() != snap.model.dim()
            || snap.posterior.block_sizes() != snap.model.block_sizes()
        {
            return Err(NbvbError::Snapshot(
                "posterior dimensions disagree with the model description".into(),
            ));
        }
        if let Some(state) = &snap.online {
            let state = OnlineState::from_json(&state.to_json()?)?;
            if state.dim() != snap.model.dim() {
                return Err(NbvbError::Snapshot(
                    "online state dimensions disagree with the model description".into(),
                ));
            }
        }
        if snap.kind == SnapshotKind::Online && snap.online.is_none() {
            return Err(NbvbError::Snapshot(
                "online snapshot without online state".into(),
            ));
        }
        Ok(snap)
    }
}
