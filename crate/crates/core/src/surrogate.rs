//! Forward regressors from design vector to a single label.

use std::fs;
use std::path::{Path, PathBuf};

use ndarray::{Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::dataset::{fit_norm, LabeledDataset, NormStats};
use crate::error::{Error, Result};
use crate::geometry::DesignVector;
use crate::hydro::{LabelVector, TargetSpec, LABEL_COLUMNS};
use crate::nn::{self, MlpModel, NetSpec, TrainReport};
use crate::par::{self, derive_seed, Execution};

pub const DEFAULT_TOLERANCE: f64 = 0.02;

/// One network per label, sharing the normalization of their training set.
#[derive(Debug, Clone, PartialEq)]
pub struct SurrogateSet {
    pub models: [MlpModel<f32>; 3],
    pub norm: NormStats,
}

#[derive(Debug, Clone)]
pub struct SurrogateTraining {
    pub set: SurrogateSet,
    pub reports: [TrainReport; 3],
}

pub(crate) fn design_matrix(designs: &[DesignVector], norm: &NormStats) -> Array2<f64> {
    let mut x = Array2::zeros((designs.len(), 6));
    for (mut row, p) in x.axis_iter_mut(Axis(0)).zip(designs) {
        row.assign(&ndarray::aview1(&norm.normalize_design(p)));
    }
    x
}

/// Trains the three label networks on `train`, normalized with statistics
/// fitted on `train` itself. Label `k` uses init seed `derive_seed(seed, k)`
/// and shuffle seed `derive_seed(seed, 3 + k)`.
pub fn train_surrogates(train: &LabeledDataset, spec: &NetSpec, seed: u64, exec: Execution) -> Result<SurrogateTraining> {
    if train.is_empty() {
        return Err(Error::Empty { context: "surrogate training set" });
    }
    let norm = fit_norm(train)?;
    let x = design_matrix(&train.designs(), &norm).mapv(|v| v as f32);
    let y: Vec<[f64; 3]> = train.labels().iter().map(|l| norm.normalize_labels(l)).collect();
    let fitted = par::map_range(3, exec, |k| -> Result<(MlpModel<f32>, TrainReport)> {
        let targets = Array2::from_shape_fn((y.len(), 1), |(i, _)| y[i][k] as f32);
        let mut model = MlpModel::new(spec.config(6, 1, derive_seed(seed, k as u64)))?;
        let report = nn::train(&mut model, x.view(), targets.view(), &spec.schedule, derive_seed(seed, 3 + k as u64))?;
        log::info!("surrogate {}: final loss {:.4e}", LABEL_COLUMNS[k], report.final_loss());
        Ok((model, report))
    });
    let mut models = Vec::with_capacity(3);
    let mut reports = Vec::with_capacity(3);
    for f in fitted {
        let (m, r) = f?;
        models.push(m);
        reports.push(r);
    }
    Ok(SurrogateTraining {
        set: SurrogateSet { models: models.try_into().expect("three models"), norm },
        reports: reports.try_into().expect("three reports"),
    })
}

impl SurrogateSet {
    pub fn validate(&self) -> Result<()> {
        self.norm.validate()?;
        for m in &self.models {
            let c = m.config();
            if c.input_dim != 6 || c.output_dim != 1 {
                return Err(Error::Checkpoint("surrogate networks must map 6 inputs to 1 output".into()));
            }
        }
        Ok(())
    }

    /// Denormalized predictions, one row per design. No clamping is applied.
    pub fn predict_matrix(&self, designs: &[DesignVector]) -> Result<Array2<f64>> {
        let x = design_matrix(designs, &self.norm).mapv(|v| v as f32);
        self.predict_normalized(x.view())
    }

    fn predict_normalized(&self, x: ArrayView2<f32>) -> Result<Array2<f64>> {
        let mut out = Array2::zeros((x.nrows(), 3));
        for (k, m) in self.models.iter().enumerate() {
            let y = m.forward_batch(x)?;
            let (mean, std) = (self.norm.labels.mean[k], self.norm.labels.std[k]);
            out.column_mut(k).assign(&y.column(0).mapv(|z| z as f64 * std + mean));
        }
        Ok(out)
    }

    pub fn predict_batch(&self, designs: &[DesignVector]) -> Result<Vec<LabelVector>> {
        let y = self.predict_matrix(designs)?;
        Ok(y.outer_iter().map(|r| LabelVector::from_array([r[0], r[1], r[2]])).collect())
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        for (k, m) in self.models.iter().enumerate() {
            let ckpt = SurrogateCheckpoint {
                format: SURROGATE_FORMAT.into(),
                version: SURROGATE_FORMAT_VERSION,
                label: LABEL_COLUMNS[k].into(),
                norm: self.norm.clone(),
                network: m.clone(),
            };
            fs::write(checkpoint_path(dir, k), serde_json::to_vec(&ckpt)?)?;
        }
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let mut models = Vec::with_capacity(3);
        let mut norm: Option<NormStats> = None;
        for (k, name) in LABEL_COLUMNS.iter().enumerate() {
            let path = checkpoint_path(dir, k);
            if !path.exists() {
                return Err(Error::MissingArtifact { what: "surrogate checkpoint".into(), path });
            }
            let ckpt: SurrogateCheckpoint = serde_json::from_slice(&fs::read(&path)?)?;
            if ckpt.format != SURROGATE_FORMAT || ckpt.version != SURROGATE_FORMAT_VERSION {
                return Err(Error::Checkpoint(format!("{}: expected {SURROGATE_FORMAT} v{SURROGATE_FORMAT_VERSION}", path.display())));
            }
            if ckpt.label != *name {
                return Err(Error::Checkpoint(format!("{}: holds label {}, expected {name}", path.display(), ckpt.label)));
            }
            match &norm {
                Some(n) if *n != ckpt.norm => {
                    return Err(Error::Checkpoint("surrogate checkpoints disagree on normalization".into()));
                }
                Some(_) => {}
                None => norm = Some(ckpt.norm),
            }
            models.push(ckpt.network);
        }
        let set = Self { models: models.try_into().expect("three models"), norm: norm.expect("three checkpoints read") };
        set.validate()?;
        Ok(set)
    }
}

pub const SURROGATE_FORMAT: &str = "propforge-surrogate";
pub const SURROGATE_FORMAT_VERSION: u32 = 1;

pub fn checkpoint_path(dir: &Path, label: usize) -> PathBuf {
    dir.join(format!("surrogate_{}.json", LABEL_COLUMNS[label]))
}

#[derive(Serialize, Deserialize)]
struct SurrogateCheckpoint {
    format: String,
    version: u32,
    label: String,
    norm: NormStats,
    network: MlpModel<f32>,
}

pub fn predict_labels(s: &SurrogateSet, p: &DesignVector) -> Result<LabelVector> {
    Ok(s.predict_batch(std::slice::from_ref(p))?[0])
}

/// Mean relative error `mean |t - p| / |t|`.
pub fn mre(targets: &[f64], predictions: &[f64]) -> Result<f64> {
    if targets.len() != predictions.len() {
        return Err(Error::Shape { context: "mre", expected: targets.len(), got: predictions.len() });
    }
    if targets.is_empty() {
        return Err(Error::Empty { context: "mre targets" });
    }
    let mut total = 0.0;
    for (i, (t, p)) in targets.iter().zip(predictions).enumerate() {
        if *t == 0.0 {
            return Err(Error::domain("targets", format!("target {i} is zero")));
        }
        total += ((t - p) / t).abs();
    }
    Ok(total / targets.len() as f64)
}

/// Whether every targeted label's prediction lies within relative `tol` of
/// its target. Free labels are ignored.
pub fn within_tolerance(target: &TargetSpec, predicted: &LabelVector, tol: f64) -> bool {
    target.to_array().iter().zip(predicted.to_array()).all(|(t, p)| t.is_none_or(|t| ((p - t) / t).abs() <= tol))
}

pub fn validate_designs(s: &SurrogateSet, designs: &[DesignVector], target: &TargetSpec, tol: f64) -> Result<Vec<bool>> {
    target.validate()?;
    if !(tol >= 0.0) {
        return Err(Error::domain("tolerance", "must be non-negative"));
    }
    let preds = s.predict_batch(designs)?;
    Ok(preds.iter().map(|p| within_tolerance(target, p, tol)).collect())
}
