//! Classifiers over difference vectors: linear SVM, power-mean SVM, random
//! forest and a five-forest voting ensemble, behind one model enum with a
//! self-describing binary file format.

mod codec;
pub mod forest;
pub mod linear_svm;
pub mod pmsvm;

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, Label};
use crate::error::{Error, Result};

pub use forest::{train_rf, train_voting_rf, ForestModel, ForestParams, MaxFeatures, VotingForestModel};
pub use linear_svm::{train_linear_svm, LinearSvmModel, LinearSvmParams};
pub use pmsvm::{power_mean, power_mean_kernel, train_pmsvm, PmSvmModel, PmSvmParams};

pub const MODEL_MAGIC: &[u8; 4] = b"XDFM";
pub const MODEL_VERSION: u16 = 1;

/// Logistic squash of an SVM margin into `[0, 1]`.
pub fn logistic(margin: f64) -> f64 {
    1.0 / (1.0 + (-margin).exp())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ClassifierKind {
    LinearSvm,
    PmSvm,
    Rf,
    VotingRf,
}

impl ClassifierKind {
    pub const ALL: [ClassifierKind; 4] = [
        ClassifierKind::LinearSvm,
        ClassifierKind::PmSvm,
        ClassifierKind::Rf,
        ClassifierKind::VotingRf,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ClassifierKind::LinearSvm => "linear-svm",
            ClassifierKind::PmSvm => "pm-svm",
            ClassifierKind::Rf => "rf",
            ClassifierKind::VotingRf => "voting-rf",
        }
    }

    fn tag(self) -> u8 {
        match self {
            ClassifierKind::LinearSvm => 1,
            ClassifierKind::PmSvm => 2,
            ClassifierKind::Rf => 3,
            ClassifierKind::VotingRf => 4,
        }
    }
}

impl std::str::FromStr for ClassifierKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ClassifierKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::InvalidParameter(format!("unknown classifier {s:?}")))
    }
}

/// Hyperparameters for all four trainers.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClassifyParams {
    pub linear_svm: LinearSvmParams,
    pub pm_svm: PmSvmParams,
    pub rf: ForestParams,
    /// Seeds of the five voting members; derived from the master seed when absent.
    pub voting_seeds: Option<[u64; 5]>,
}

impl Default for ClassifyParams {
    fn default() -> Self {
        Self {
            linear_svm: LinearSvmParams::default(),
            pm_svm: PmSvmParams::default(),
            rf: ForestParams::default(),
            voting_seeds: None,
        }
    }
}

impl ClassifyParams {
    /// Copies `seed` into every trainer that draws random numbers.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.linear_svm.seed = seed;
        self.pm_svm.seed = seed;
        self.rf.seed = seed;
        self
    }

    pub fn voting_seeds(&self) -> [u64; 5] {
        self.voting_seeds.unwrap_or_else(|| {
            std::array::from_fn(|i| crate::seed::derive(self.rf.seed, crate::seed::stream::VOTING, i as u64))
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum TrainedModel {
    LinearSvm(LinearSvmModel),
    PmSvm(PmSvmModel),
    Rf(ForestModel),
    VotingRf(VotingForestModel),
}

pub fn train(kind: ClassifierKind, data: &Dataset, params: &ClassifyParams) -> Result<TrainedModel> {
    Ok(match kind {
        ClassifierKind::LinearSvm => TrainedModel::LinearSvm(train_linear_svm(data, &params.linear_svm)?),
        ClassifierKind::PmSvm => TrainedModel::PmSvm(train_pmsvm(data, &params.pm_svm)?),
        ClassifierKind::Rf => TrainedModel::Rf(train_rf(data, &params.rf)?),
        ClassifierKind::VotingRf => {
            TrainedModel::VotingRf(train_voting_rf(data, &params.rf, params.voting_seeds())?)
        }
    })
}

impl TrainedModel {
    pub fn kind(&self) -> ClassifierKind {
        match self {
            TrainedModel::LinearSvm(_) => ClassifierKind::LinearSvm,
            TrainedModel::PmSvm(_) => ClassifierKind::PmSvm,
            TrainedModel::Rf(_) => ClassifierKind::Rf,
            TrainedModel::VotingRf(_) => ClassifierKind::VotingRf,
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            TrainedModel::LinearSvm(m) => m.dim(),
            TrainedModel::PmSvm(m) => m.dim(),
            TrainedModel::Rf(m) => m.dim(),
            TrainedModel::VotingRf(m) => m.dim(),
        }
    }

    fn check_dim(&self, x: &[f32]) -> Result<()> {
        if x.len() != self.dim() {
            return Err(Error::dim_mismatch(self.dim(), x.len()));
        }
        Ok(())
    }

    /// Genuine on a strictly positive decision; ties go to impostor.
    pub fn predict(&self, x: &[f32]) -> Result<Label> {
        self.check_dim(x)?;
        Ok(match self {
            TrainedModel::LinearSvm(m) => Label::from_bool(m.decision(x) > 0.0),
            TrainedModel::PmSvm(m) => Label::from_bool(m.decision(x) > 0.0),
            TrainedModel::Rf(m) => m.predict(x),
            TrainedModel::VotingRf(m) => m.predict(x),
        })
    }

    /// Genuine-ness score in `[0, 1]`, monotone in the model's decision function.
    pub fn score(&self, x: &[f32]) -> Result<f64> {
        self.check_dim(x)?;
        Ok(match self {
            TrainedModel::LinearSvm(m) => logistic(m.decision(x)),
            TrainedModel::PmSvm(m) => logistic(m.decision(x)),
            TrainedModel::Rf(m) => m.score(x),
            TrainedModel::VotingRf(m) => m.score(x),
        })
    }

    pub fn predict_all(&self, data: &Dataset) -> Result<Vec<Label>> {
        data.rows().map(|x| self.predict(x)).collect()
    }

    pub fn score_all(&self, data: &Dataset) -> Result<Vec<f64>> {
        data.rows().map(|x| self.score(x)).collect()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = codec::Writer::default();
        w.bytes(MODEL_MAGIC);
        w.u16(MODEL_VERSION);
        w.u8(self.kind().tag());
        match self {
            TrainedModel::LinearSvm(m) => m.encode(&mut w),
            TrainedModel::PmSvm(m) => m.encode(&mut w),
            TrainedModel::Rf(m) => m.encode(&mut w),
            TrainedModel::VotingRf(m) => m.encode(&mut w),
        }
        w.finish()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = codec::Reader::new(bytes);
        if r.take(4)? != MODEL_MAGIC {
            return Err(Error::Format("not a model file (bad magic)".into()));
        }
        let version = r.u16()?;
        if version != MODEL_VERSION {
            return Err(Error::Format(format!("unsupported model version {version}")));
        }
        let model = match r.u8()? {
            1 => TrainedModel::LinearSvm(LinearSvmModel::decode(&mut r)?),
            2 => TrainedModel::PmSvm(PmSvmModel::decode(&mut r)?),
            3 => TrainedModel::Rf(ForestModel::decode(&mut r)?),
            4 => TrainedModel::VotingRf(VotingForestModel::decode(&mut r)?),
            t => return Err(Error::Format(format!("unknown model tag {t}"))),
        };
        r.expect_end()?;
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}
