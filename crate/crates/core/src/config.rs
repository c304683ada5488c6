//! Named hyperparameter profiles and the workbench configuration file.
//!
//! A profile freezes every network size, schedule, dataset size and sweep
//! setting. The optional TOML file only supplies the data directory, seeds,
//! operating grid and design ranges:
//!
//! ```toml
//! profile = "desk"
//! data_dir = "runs/a"
//!
//! [seeds]
//! data = 7
//!
//! [grid]
//! start = 0.25
//! stop = 1.6
//! step = 0.05
//!
//! [space]
//! P = { lo = 0.6, hi = 1.4 }
//! ```

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::cfm::DEFAULT_STEPS;
use crate::dataset::GenerationOptions;
use crate::error::{Error, Result};
use crate::geometry::{Bounds, DesignSpace};
use crate::hydro::{OperatingGrid, TargetSpec};
use crate::nn::{NetSpec, TrainSchedule};
use crate::par::Execution;
use crate::studies::{AugmentationConfig, StudyOptions};

pub const DATA_DIR_ENV: &str = "PROPFORGE_DATA_DIR";
pub const DEFAULT_DATA_DIR: &str = "propforge-data";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProfileName {
    #[default]
    Desk,
    #[serde(rename = "paper")]
    Full,
}

impl fmt::Display for ProfileName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ProfileName::Desk => "desk",
            ProfileName::Full => "paper",
        })
    }
}

impl FromStr for ProfileName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "desk" => Ok(ProfileName::Desk),
            "paper" => Ok(ProfileName::Full),
            other => Err(Error::Config(format!("unknown profile {other:?}; expected desk or paper"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DataProfile {
    pub n_samples: usize,
    pub n_train: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentationProfile {
    pub d_list: Vec<usize>,
    pub aug_sizes: Vec<usize>,
    /// Independent repetitions of the sweep.
    pub repeats: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiversityProfile {
    pub target: TargetSpec,
    pub n: usize,
}

/// Training of a generator on one repeated design.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PointTargetProfile {
    pub copies: usize,
    pub net: NetSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Profile {
    pub name: ProfileName,
    pub data: DataProfile,
    pub surrogate: NetSpec,
    pub cfm: NetSpec,
    pub steps: usize,
    pub augmentation: AugmentationProfile,
    pub diversity: DiversityProfile,
    pub point_target: PointTargetProfile,
}

fn net(layers: usize, width: usize, epochs: usize, batch: usize, drop: usize) -> NetSpec {
    NetSpec {
        hidden_layers: layers,
        hidden_width: width,
        schedule: TrainSchedule { epochs, batch_size: batch, lr_initial: 1e-3, lr_drop_epoch: drop, lr_drop_factor: 0.1 },
    }
}

const REFERENCE_TARGET: TargetSpec = TargetSpec { eta_star: Some(0.8), j_star: Some(1.0), kt_star: Some(0.1) };

impl Profile {
    pub fn named(name: ProfileName) -> Self {
        match name {
            ProfileName::Desk => Self::desk(),
            ProfileName::Full => Self::full_scale(),
        }
    }

    /// Full-scale settings.
    pub fn full_scale() -> Self {
        Self {
            name: ProfileName::Full,
            data: DataProfile { n_samples: 3000, n_train: 2000 },
            surrogate: net(6, 500, 500, 500, 250),
            cfm: net(8, 500, 10_000, 500, 5000),
            steps: DEFAULT_STEPS,
            augmentation: AugmentationProfile {
                d_list: vec![100, 200, 300, 400, 500, 1000, 1500, 2000],
                aug_sizes: vec![10_000, 100_000],
                repeats: 1,
            },
            diversity: DiversityProfile { target: REFERENCE_TARGET, n: 1000 },
            point_target: PointTargetProfile { copies: 500, net: net(8, 500, 10_000, 500, 5000) },
        }
    }

    /// Reduced settings that run on one laptop core in minutes.
    pub fn desk() -> Self {
        Self {
            name: ProfileName::Desk,
            data: DataProfile { n_samples: 700, n_train: 500 },
            surrogate: net(6, 64, 500, 128, 250),
            cfm: net(4, 128, 2000, 128, 1000),
            steps: DEFAULT_STEPS,
            augmentation: AugmentationProfile { d_list: vec![50, 100, 200], aug_sizes: vec![2000], repeats: 3 },
            diversity: DiversityProfile { target: REFERENCE_TARGET, n: 200 },
            point_target: PointTargetProfile { copies: 1024, net: net(4, 128, 20_000, 1024, 10_000) },
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.data.n_train == 0 || self.data.n_train >= self.data.n_samples {
            return Err(Error::Config("n_train must lie strictly between 0 and n_samples".into()));
        }
        for spec in [&self.surrogate, &self.cfm, &self.point_target.net] {
            spec.schedule.validate()?;
        }
        if self.steps == 0 {
            return Err(Error::Config("steps must be at least 1".into()));
        }
        self.diversity.target.validate()?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Seeds {
    pub data: u64,
    pub surrogate: u64,
    pub cfm: u64,
    pub study: u64,
}

impl Default for Seeds {
    fn default() -> Self {
        Self { data: 7, surrogate: 11, cfm: 13, study: 17 }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(untagged, deny_unknown_fields)]
enum GridFile {
    Explicit { advance_ratios: Vec<f64> },
    Uniform { start: f64, stop: f64, step: f64 },
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct SpaceFile {
    #[serde(rename = "P")]
    pitch: Option<Bounds>,
    w_rp: Option<Bounds>,
    w_c: Option<Bounds>,
    w_rc: Option<Bounds>,
    camber: Option<Bounds>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfigFile {
    profile: Option<ProfileName>,
    data_dir: Option<PathBuf>,
    #[serde(default)]
    seeds: Seeds,
    grid: Option<GridFile>,
    space: Option<SpaceFile>,
}

/// Everything a workflow needs besides its inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct WorkbenchConfig {
    pub data_dir: PathBuf,
    pub profile: Profile,
    pub seeds: Seeds,
    pub grid: OperatingGrid,
    pub space: DesignSpace,
    pub execution: Execution,
}

impl Default for WorkbenchConfig {
    fn default() -> Self {
        Self::for_profile(ProfileName::Desk)
    }
}

impl WorkbenchConfig {
    pub fn for_profile(name: ProfileName) -> Self {
        Self {
            data_dir: PathBuf::from(DEFAULT_DATA_DIR),
            profile: Profile::named(name),
            seeds: Seeds::default(),
            grid: OperatingGrid::default(),
            space: DesignSpace::FULL,
            execution: Execution::Parallel,
        }
    }

    /// Parses a TOML configuration. Keys missing from the file keep their
    /// defaults; `data_dir` falls back to the environment, then to
    /// [`DEFAULT_DATA_DIR`].
    pub fn from_toml(text: &str) -> Result<Self> {
        let file: ConfigFile = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        let mut cfg = Self::for_profile(file.profile.unwrap_or_default());
        cfg.seeds = file.seeds;
        if let Some(dir) = file.data_dir.or_else(env_data_dir) {
            cfg.data_dir = dir;
        }
        if let Some(g) = file.grid {
            cfg.grid = match g {
                GridFile::Explicit { advance_ratios } => OperatingGrid::new(advance_ratios)?,
                GridFile::Uniform { start, stop, step } => OperatingGrid::uniform(start, stop, step)?,
            };
        }
        if let Some(s) = file.space {
            let full = DesignSpace::FULL;
            cfg.space = DesignSpace {
                pitch: s.pitch.unwrap_or(full.pitch),
                w_rp: s.w_rp.unwrap_or(full.w_rp),
                w_c: s.w_c.unwrap_or(full.w_c),
                w_rc: s.w_rc.unwrap_or(full.w_rc),
                camber: s.camber.unwrap_or(full.camber),
            };
            cfg.space.validate()?;
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingArtifact { what: "config file".into(), path: path.to_path_buf() });
        }
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn layout(&self) -> Layout {
        Layout::new(&self.data_dir)
    }

    pub fn generation(&self) -> GenerationOptions {
        GenerationOptions { grid: self.grid.clone(), space: self.space, execution: self.execution }
    }

    pub fn study(&self) -> StudyOptions {
        StudyOptions { steps: self.profile.steps, seed: self.seeds.study, grid: self.grid.clone(), execution: self.execution }
    }

    pub fn augmentation(&self) -> AugmentationConfig {
        AugmentationConfig {
            d_list: self.profile.augmentation.d_list.clone(),
            aug_sizes: self.profile.augmentation.aug_sizes.clone(),
            surrogate: self.profile.surrogate,
            cfm: self.profile.cfm,
            study: self.study(),
        }
    }
}

/// File locations under a data directory.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Layout {
    pub root: PathBuf,
}

impl Layout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn dataset(&self) -> PathBuf {
        self.root.join("dataset.csv")
    }

    pub fn train(&self) -> PathBuf {
        self.root.join("train.csv")
    }

    pub fn test(&self) -> PathBuf {
        self.root.join("test.csv")
    }

    pub fn models(&self) -> PathBuf {
        self.root.join("models")
    }

    pub fn cfm_checkpoint(&self) -> PathBuf {
        self.models().join("cfm.json")
    }

    pub fn reports(&self) -> PathBuf {
        self.root.join("reports")
    }
}

pub fn env_data_dir() -> Option<PathBuf> {
    std::env::var_os(DATA_DIR_ENV).filter(|v| !v.is_empty()).map(PathBuf::from)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn full_scale_profile_freezes_its_hyperparameters() {
        let p = Profile::full_scale();
        assert_eq!((p.cfm.hidden_layers, p.cfm.hidden_width), (8, 500));
        assert_eq!(
            p.cfm.schedule,
            TrainSchedule { epochs: 10_000, batch_size: 500, lr_initial: 1e-3, lr_drop_epoch: 5000, lr_drop_factor: 0.1 }
        );
        assert_eq!((p.surrogate.hidden_layers, p.surrogate.hidden_width), (6, 500));
        assert_eq!(
            p.surrogate.schedule,
            TrainSchedule { epochs: 500, batch_size: 500, lr_initial: 1e-3, lr_drop_epoch: 250, lr_drop_factor: 0.1 }
        );
        assert_eq!(p.data, DataProfile { n_samples: 3000, n_train: 2000 });
        assert_eq!(p.augmentation.d_list, vec![100, 200, 300, 400, 500, 1000, 1500, 2000]);
        assert_eq!(p.augmentation.aug_sizes, vec![10_000, 100_000]);
        p.validate().unwrap();
    }

    #[test]
    fn desk_profile_is_valid_and_drops_at_half() {
        let p = Profile::desk();
        p.validate().unwrap();
        for s in [p.surrogate, p.cfm, p.point_target.net] {
            assert_eq!(s.schedule.lr_drop_epoch * 2, s.schedule.epochs);
        }
        assert_eq!(p.augmentation.d_list, vec![50, 100, 200]);
    }

    #[test]
    fn profile_names_parse() {
        assert_eq!("paper".parse::<ProfileName>().unwrap(), ProfileName::Full);
        assert!("full".parse::<ProfileName>().is_err());
        assert_eq!(ProfileName::Desk.to_string(), "desk");
    }

    #[test]
    fn toml_overrides_selected_fields() {
        let cfg = WorkbenchConfig::from_toml(
            r#"
            profile = "paper"
            data_dir = "/tmp/x"
            [seeds]
            data = 3
            [grid]
            start = 0.3
            stop = 1.2
            step = 0.1
            [space]
            P = { lo = 0.6, hi = 1.4 }
            "#,
        )
        .unwrap();
        assert_eq!(cfg.profile.name, ProfileName::Full);
        assert_eq!(cfg.data_dir, PathBuf::from("/tmp/x"));
        assert_eq!(cfg.seeds, Seeds { data: 3, ..Seeds::default() });
        assert_eq!(cfg.grid.len(), 10);
        assert_eq!(cfg.space.pitch, Bounds::new(0.6, 1.4));
        assert_eq!(cfg.space.w_c, DesignSpace::FULL.w_c);
    }

    #[test]
    fn explicit_grid_is_validated() {
        let ok = WorkbenchConfig::from_toml("[grid]\nadvance_ratios = [0.3, 0.5, 0.9]").unwrap();
        assert_eq!(ok.grid.advance_ratios(), &[0.3, 0.5, 0.9]);
        assert!(WorkbenchConfig::from_toml("[grid]\nadvance_ratios = [0.5, 0.3, 0.9]").is_err());
    }

    #[test]
    fn bad_files_are_rejected() {
        assert!(WorkbenchConfig::from_toml("profile = \"huge\"").is_err());
        assert!(WorkbenchConfig::from_toml("colour = 1").is_err());
        assert!(WorkbenchConfig::from_toml("[space]\nP = { lo = 0.2, hi = 1.4 }").is_err());
        assert!(WorkbenchConfig::from_toml("[seeds]\nmoon = 1").is_err());
    }
}
