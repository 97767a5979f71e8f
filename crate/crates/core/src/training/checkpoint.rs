use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::flow::ScheduleKind;
use crate::io::write_atomic;
use crate::numerics::{Activation, MlpModel};

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Expert,
    Router,
    Monolith,
    Student,
}

impl Role {
    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "expert" => Ok(Role::Expert),
            "router" => Ok(Role::Router),
            "monolith" => Ok(Role::Monolith),
            "student" | "distill" => Ok(Role::Student),
            other => Err(Error::Usage(format!("unknown role '{other}'"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Role::Expert => "expert",
            Role::Router => "router",
            Role::Monolith => "monolith",
            Role::Student => "student",
        }
    }
}

/// Trained parameters plus everything needed to rebuild and validate them.
///
/// Floats are written in shortest round-trip form and parsed exactly, so a
/// save/load cycle is bit-exact.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub role: Role,
    /// Expert index for `Role::Expert`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expert: Option<usize>,
    /// Number of clusters of the partition this checkpoint belongs to.
    pub k: usize,
    pub schedule: ScheduleKind,
    pub t_min: f64,
    pub dims: Vec<usize>,
    pub activation: Activation,
    pub time_features: usize,
    pub params_raw: Vec<f64>,
    pub params_ema: Vec<f64>,
    pub step: u64,
    pub seed: u64,
    pub config_hash: String,
}

impl Checkpoint {
    /// Network with the EMA weights, the default for evaluation.
    pub fn model(&self) -> Result<MlpModel> {
        self.build(&self.params_ema)
    }

    pub fn raw_model(&self) -> Result<MlpModel> {
        self.build(&self.params_raw)
    }

    fn build(&self, params: &[f64]) -> Result<MlpModel> {
        MlpModel::from_parts(self.dims.clone(), self.activation, self.time_features, params.to_vec())
    }

    pub fn data_dim(&self) -> usize {
        self.dims[0] - self.time_features
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let ckpt: Checkpoint = serde_json::from_str(text)?;
        if ckpt.version != CHECKPOINT_VERSION {
            return Err(Error::Config(format!(
                "checkpoint version {} is not supported (expected {CHECKPOINT_VERSION})",
                ckpt.version
            )));
        }
        if ckpt.params_raw.len() != ckpt.params_ema.len() {
            return Err(Error::Config("raw and EMA parameter counts differ".into()));
        }
        ckpt.model()?;
        Ok(ckpt)
    }

    /// Write via a temporary file and rename, so readers never observe a
    /// half-written checkpoint.
    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.to_json()?.as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text).map_err(|e| match e {
            Error::Json(j) => Error::Parse {
                path: path.to_path_buf(),
                msg: j.to_string(),
            },
            other => other,
        })
    }

    /// Reject checkpoints that do not belong to an ensemble of `k` clusters
    /// on `schedule`.
    pub fn expect(&self, role: Role, k: usize, schedule: ScheduleKind) -> Result<()> {
        if self.role != role {
            return Err(Error::Config(format!(
                "expected a {} checkpoint, found {}",
                role.name(),
                self.role.name()
            )));
        }
        if self.k != k {
            return Err(Error::Config(format!(
                "{} checkpoint was trained for K = {}, ensemble has K = {k}",
                self.role.name(),
                self.k
            )));
        }
        if self.schedule != schedule {
            return Err(Error::Config(format!(
                "{} checkpoint uses the {} schedule, ensemble uses {}",
                self.role.name(),
                self.schedule.name(),
                schedule.name()
            )));
        }
        Ok(())
    }
}

/// Hex SHA-256 of the JSON encoding of `value`.
pub fn config_hash<T: Serialize>(value: &T) -> String {
    let bytes = serde_json::to_vec(value).expect("config values serialize");
    hex::encode(Sha256::digest(bytes))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Rng;

    fn sample() -> Checkpoint {
        let mut rng = Rng::new(5);
        let model = MlpModel::init(2, &[7], 2, Activation::Silu, 4, false, &mut rng).unwrap();
        let mut ema = model.params().to_vec();
        for v in &mut ema {
            *v = *v / 3.0 + 1e-17;
        }
        Checkpoint {
            version: CHECKPOINT_VERSION,
            role: Role::Expert,
            expert: Some(3),
            k: 8,
            schedule: ScheduleKind::Linear,
            t_min: 1e-3,
            dims: model.layer_dims().to_vec(),
            activation: model.activation(),
            time_features: 4,
            params_raw: model.params().to_vec(),
            params_ema: ema,
            step: 42,
            seed: u64::MAX,
            config_hash: config_hash(&"cfg"),
        }
    }

    #[test]
    fn json_round_trip_is_bit_exact() {
        let ckpt = sample();
        let back = Checkpoint::from_json(&ckpt.to_json().unwrap()).unwrap();
        for (a, b) in ckpt.params_ema.iter().zip(&back.params_ema) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
        assert_eq!(ckpt, back);
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("nested/expert_3.json");
        let ckpt = sample();
        ckpt.save(&path).unwrap();
        assert_eq!(Checkpoint::load(&path).unwrap(), ckpt);
        assert!(!dir.path().join("nested/expert_3.json.tmp").exists());
    }

    #[test]
    fn mismatches_are_rejected() {
        let ckpt = sample();
        assert!(ckpt.expect(Role::Expert, 8, ScheduleKind::Linear).is_ok());
        assert!(matches!(ckpt.expect(Role::Expert, 4, ScheduleKind::Linear), Err(Error::Config(_))));
        assert!(matches!(ckpt.expect(Role::Router, 8, ScheduleKind::Linear), Err(Error::Config(_))));
        assert!(matches!(ckpt.expect(Role::Expert, 8, ScheduleKind::Cosine), Err(Error::Config(_))));
        let mut bad = sample();
        bad.params_ema.pop();
        assert!(Checkpoint::from_json(&bad.to_json().unwrap()).is_err());
    }

    #[test]
    fn hash_is_stable() {
        assert_eq!(config_hash(&(1, "a")), config_hash(&(1, "a")));
        assert_ne!(config_hash(&(1, "a")), config_hash(&(2, "a")));
        assert_eq!(config_hash(&0).len(), 64);
    }
}
