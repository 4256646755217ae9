//! JSON checkpoints of filter beliefs.
//!
//! Layout (version 1):
//!
//! ```json
//! {
//!   "format_version": 1,
//!   "spec_hash": "0123456789abcdef",
//!   "kind": "hilofi",
//!   "mean_hidden": [..],
//!   "mean_last": [..],
//!   "factors": { "<name>": { "rows": r, "cols": c, "data": [row-major] } }
//! }
//! ```
//!
//! Factor names: dense `cov`; lrkf `w`; hilofi `sigma_last_half`, `c_hidden`;
//! lolofi `c_last`, `c_hidden`. For dense and lrkf beliefs the two mean
//! fields hold the hidden and last-layer blocks of `θ`.

use std::collections::BTreeMap;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{Belief, DenseBelief, FilterKind, HiLoFiBelief, LoLoFiBelief, LrkfBelief};
use crate::error::{Error, Result};
use crate::linalg::{LowRankFactor, UpperTri};

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct MatrixDump {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl MatrixDump {
    fn from(m: &DMatrix<f64>) -> Self {
        MatrixDump {
            rows: m.nrows(),
            cols: m.ncols(),
            data: m.transpose().as_slice().to_vec(),
        }
    }

    fn to_matrix(&self, name: &str) -> Result<DMatrix<f64>> {
        if self.data.len() != self.rows * self.cols {
            return Err(format_err(
                name,
                format!(
                    "{} entries for a {}x{} matrix",
                    self.data.len(),
                    self.rows,
                    self.cols
                ),
            ));
        }
        Ok(DMatrix::from_row_slice(self.rows, self.cols, &self.data))
    }
}

fn format_err(field: &str, message: impl Into<String>) -> Error {
    Error::Format {
        field: field.to_string(),
        message: message.into(),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u32,
    /// Hex digest of the network spec the belief belongs to.
    pub spec_hash: String,
    pub kind: FilterKind,
    pub mean_hidden: Vec<f64>,
    pub mean_last: Vec<f64>,
    factors: BTreeMap<String, MatrixDump>,
}

impl Checkpoint {
    pub fn from_belief(belief: &Belief, spec_hash: u64) -> Self {
        let mut factors = BTreeMap::new();
        let (mean_hidden, mean_last) = match belief {
            Belief::Dense(b) => {
                factors.insert("cov".into(), MatrixDump::from(&b.cov));
                split_mean(&b.mean, b.split)
            }
            Belief::Lrkf(b) => {
                factors.insert("w".into(), MatrixDump::from(b.w.as_matrix()));
                // LRKF has no partition of its own; keep everything in one block.
                (Vec::new(), b.mean.as_slice().to_vec())
            }
            Belief::HiLoFi(b) => {
                factors.insert(
                    "sigma_last_half".into(),
                    MatrixDump::from(b.sigma_last_half.as_matrix()),
                );
                factors.insert("c_hidden".into(), MatrixDump::from(b.c_hidden.as_matrix()));
                (
                    b.mean_hidden.as_slice().to_vec(),
                    b.mean_last.as_slice().to_vec(),
                )
            }
            Belief::LoLoFi(b) => {
                factors.insert("c_last".into(), MatrixDump::from(b.c_last.as_matrix()));
                factors.insert("c_hidden".into(), MatrixDump::from(b.c_hidden.as_matrix()));
                (
                    b.mean_hidden.as_slice().to_vec(),
                    b.mean_last.as_slice().to_vec(),
                )
            }
        };
        Checkpoint {
            format_version: CHECKPOINT_VERSION,
            spec_hash: format!("{spec_hash:016x}"),
            kind: belief.kind(),
            mean_hidden,
            mean_last,
            factors,
        }
    }

    fn factor(&self, name: &str) -> Result<DMatrix<f64>> {
        self.factors
            .get(name)
            .ok_or_else(|| format_err(name, "missing factor"))?
            .to_matrix(name)
    }

    /// Rebuilds the belief, checking the version and the spec digest.
    pub fn to_belief(&self, expected_spec_hash: u64) -> Result<Belief> {
        if self.format_version != CHECKPOINT_VERSION {
            return Err(format_err(
                "format_version",
                format!("unsupported version {}", self.format_version),
            ));
        }
        let expected = format!("{expected_spec_hash:016x}");
        if self.spec_hash != expected {
            return Err(format_err(
                "spec_hash",
                format!(
                    "checkpoint is for spec {}, expected {expected}",
                    self.spec_hash
                ),
            ));
        }
        let hidden = DVector::from_column_slice(&self.mean_hidden);
        let last = DVector::from_column_slice(&self.mean_last);
        let wrap = |e: Error| match e {
            Error::InvalidArgument(m) => format_err("factors", m),
            other => other,
        };
        Ok(match self.kind {
            FilterKind::Dense => {
                let mut theta = self.mean_hidden.clone();
                theta.extend_from_slice(&self.mean_last);
                Belief::Dense(
                    DenseBelief::new(
                        DVector::from_vec(theta),
                        self.factor("cov")?,
                        self.mean_hidden.len(),
                    )
                    .map_err(wrap)?,
                )
            }
            FilterKind::Lrkf => {
                let mut theta = self.mean_hidden.clone();
                theta.extend_from_slice(&self.mean_last);
                Belief::Lrkf(
                    LrkfBelief::new(
                        DVector::from_vec(theta),
                        LowRankFactor::new(self.factor("w")?),
                    )
                    .map_err(wrap)?,
                )
            }
            FilterKind::HiLoFi => Belief::HiLoFi(
                HiLoFiBelief::new(
                    last,
                    hidden,
                    UpperTri::new(self.factor("sigma_last_half")?).map_err(wrap)?,
                    LowRankFactor::new(self.factor("c_hidden")?),
                )
                .map_err(wrap)?,
            ),
            FilterKind::LoLoFi => Belief::LoLoFi(
                LoLoFiBelief::new(
                    last,
                    hidden,
                    LowRankFactor::new(self.factor("c_last")?),
                    LowRankFactor::new(self.factor("c_hidden")?),
                )
                .map_err(wrap)?,
            ),
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

fn split_mean(mean: &DVector<f64>, split: usize) -> (Vec<f64>, Vec<f64>) {
    let s = mean.as_slice();
    (s[..split].to_vec(), s[split..].to_vec())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::{init_params, Activation, NetworkSpec};

    #[test]
    fn roundtrip_every_kind() {
        let spec = NetworkSpec::new(2, vec![3], 1, Activation::Elu).unwrap();
        let p = init_params(&spec, 1);
        let beliefs = [
            Belief::Dense(DenseBelief::from_prior(&p, 0.1, 0.2)),
            Belief::Lrkf(LrkfBelief::from_prior(&p, 0.1, 3).unwrap()),
            Belief::HiLoFi(HiLoFiBelief::from_prior(&p, 0.1, 0.2, 2).unwrap()),
            Belief::LoLoFi(LoLoFiBelief::from_prior(&p, 0.1, 0.2, 2, 2).unwrap()),
        ];
        for b in beliefs {
            let ck = Checkpoint::from_belief(&b, spec.fingerprint());
            let back = Checkpoint::from_json(&ck.to_json().unwrap()).unwrap();
            assert_eq!(back.to_belief(spec.fingerprint()).unwrap(), b);
        }
    }

    #[test]
    fn rejects_other_spec() {
        let spec = NetworkSpec::new(2, vec![3], 1, Activation::Elu).unwrap();
        let b = Belief::Lrkf(LrkfBelief::from_prior(&init_params(&spec, 1), 0.1, 3).unwrap());
        let ck = Checkpoint::from_belief(&b, spec.fingerprint());
        let err = ck.to_belief(spec.fingerprint() ^ 1).unwrap_err();
        assert!(matches!(err, Error::Format { ref field, .. } if field == "spec_hash"));
    }
}
