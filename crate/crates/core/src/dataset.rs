//! Latin-hypercube sampling, labeled dataset generation, splitting,
//! z-score normalization and CSV persistence.

use std::fmt;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{DesignSpace, DesignVector, BLADE_COUNTS, DESIGN_COLUMNS};
use crate::hydro::{simulate_labels, LabelVector, OperatingGrid, LABEL_COLUMNS};
use crate::par::{derive_seed, Execution};

/// Latin-hypercube sample of `n` designs over the full design box.
pub fn lhs_sample(n: usize, seed: u64) -> Vec<DesignVector> {
    lhs_sample_in(&DesignSpace::FULL, n, seed)
}

/// One sample per equal-width stratum of every axis, strata independently
/// permuted per axis with uniform jitter inside each stratum. The blade count
/// is an extra axis over [0, 4) floored onto {2, 3, 4, 5}.
pub fn lhs_sample_in(space: &DesignSpace, n: usize, seed: u64) -> Vec<DesignVector> {
    if n == 0 {
        return Vec::new();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut unit = [(); 6].map(|_| vec![0.0; n]);
    for axis in unit.iter_mut() {
        let mut strata: Vec<usize> = (0..n).collect();
        strata.shuffle(&mut rng);
        for (u, s) in axis.iter_mut().zip(strata) {
            *u = (s as f64 + rng.random::<f64>()) / n as f64;
        }
    }
    let bounds = space.continuous();
    (0..n)
        .map(|i| {
            let blade_idx = ((unit[0][i] * 4.0).floor() as usize).min(3);
            let v = |k: usize| {
                let b = bounds[k - 1];
                b.clamp(b.lo + unit[k][i] * b.width())
            };
            DesignVector { n_blades: BLADE_COUNTS[blade_idx], pitch: v(1), w_rp: v(2), w_c: v(3), w_rc: v(4), camber: v(5) }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    /// Labels from the open-water solver.
    Simulated,
    /// Labels predicted by surrogate models.
    Pseudo,
}

impl fmt::Display for Provenance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Provenance::Simulated => "simulated",
            Provenance::Pseudo => "pseudo",
        })
    }
}

impl FromStr for Provenance {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "simulated" => Ok(Provenance::Simulated),
            "pseudo" => Ok(Provenance::Pseudo),
            other => Err(format!("unknown provenance `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Record {
    pub design: DesignVector,
    pub labels: LabelVector,
    pub provenance: Provenance,
}

/// Per-dimension z-score transform.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZScore {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl ZScore {
    /// Fits mean and population standard deviation of each column.
    /// `names` labels the columns in error messages.
    pub fn fit<const D: usize>(rows: &[[f64; D]], names: &[&str]) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::Empty { context: "normalization data" });
        }
        let n = rows.len() as f64;
        let mut mean = vec![0.0; D];
        for r in rows {
            for (m, x) in mean.iter_mut().zip(r) {
                *m += x;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut std = vec![0.0; D];
        for r in rows {
            for k in 0..D {
                std[k] += (r[k] - mean[k]).powi(2);
            }
        }
        for (k, s) in std.iter_mut().enumerate() {
            *s = (*s / n).sqrt();
            if !(*s > 1e-12 * mean[k].abs().max(1.0)) {
                return Err(Error::domain(names.get(k).copied().unwrap_or("column"), "zero variance; cannot normalize"));
            }
        }
        Ok(Self { mean, std })
    }

    pub fn dims(&self) -> usize {
        self.mean.len()
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        x.iter().zip(self.mean.iter().zip(&self.std)).map(|(x, (m, s))| (x - m) / s).collect()
    }

    pub fn invert(&self, z: &[f64]) -> Vec<f64> {
        z.iter().zip(self.mean.iter().zip(&self.std)).map(|(z, (m, s))| z * s + m).collect()
    }

    pub fn apply_in_place(&self, x: &mut [f64]) {
        for ((x, m), s) in x.iter_mut().zip(&self.mean).zip(&self.std) {
            *x = (*x - m) / s;
        }
    }

    pub fn invert_in_place(&self, z: &mut [f64]) {
        for ((z, m), s) in z.iter_mut().zip(&self.mean).zip(&self.std) {
            *z = *z * s + m;
        }
    }

    fn check(&self, dims: usize, what: &str) -> Result<()> {
        if self.mean.len() != dims || self.std.len() != dims {
            return Err(Error::Checkpoint(format!("{what} normalization must have {dims} dimensions")));
        }
        if self.std.iter().any(|s| !(*s > 0.0)) {
            return Err(Error::Checkpoint(format!("{what} normalization has a non-positive scale")));
        }
        Ok(())
    }
}

/// Normalization shared by surrogates and the generator, fitted on the
/// training split only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub design: ZScore,
    pub labels: ZScore,
}

impl NormStats {
    pub fn validate(&self) -> Result<()> {
        self.design.check(6, "design")?;
        self.labels.check(3, "label")
    }

    pub fn normalize_design(&self, p: &DesignVector) -> [f64; 6] {
        let mut x = p.to_array();
        self.design.apply_in_place(&mut x);
        x
    }

    pub fn denormalize_design(&self, z: &[f64; 6]) -> [f64; 6] {
        let mut x = *z;
        self.design.invert_in_place(&mut x);
        x
    }

    pub fn normalize_labels(&self, l: &LabelVector) -> [f64; 3] {
        let mut x = l.to_array();
        self.labels.apply_in_place(&mut x);
        x
    }

    pub fn denormalize_labels(&self, z: &[f64; 3]) -> [f64; 3] {
        let mut x = *z;
        self.labels.invert_in_place(&mut x);
        x
    }
}

pub fn fit_norm(train: &LabeledDataset) -> Result<NormStats> {
    let designs: Vec<[f64; 6]> = train.records.iter().map(|r| r.design.to_array()).collect();
    let labels: Vec<[f64; 3]> = train.records.iter().map(|r| r.labels.to_array()).collect();
    Ok(NormStats { design: ZScore::fit(&designs, &DESIGN_COLUMNS)?, labels: ZScore::fit(&labels, &LABEL_COLUMNS)? })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledDataset {
    pub records: Vec<Record>,
    pub norm: Option<NormStats>,
    pub seed: u64,
}

impl LabeledDataset {
    pub fn new(records: Vec<Record>, seed: u64) -> Self {
        Self { records, norm: None, seed }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn designs(&self) -> Vec<DesignVector> {
        self.records.iter().map(|r| r.design).collect()
    }

    pub fn labels(&self) -> Vec<LabelVector> {
        self.records.iter().map(|r| r.labels).collect()
    }

    /// Per-label (min, max) over the records.
    pub fn label_envelope(&self) -> Option<[(f64, f64); 3]> {
        let first = self.records.first()?.labels.to_array();
        let mut env = first.map(|x| (x, x));
        for r in &self.records[1..] {
            for (e, x) in env.iter_mut().zip(r.labels.to_array()) {
                e.0 = e.0.min(x);
                e.1 = e.1.max(x);
            }
        }
        Some(env)
    }

    pub fn validate(&self) -> Result<()> {
        for (i, r) in self.records.iter().enumerate() {
            let line = i as u64 + 2;
            r.design.validate().and_then(|_| r.labels.validate()).map_err(|e| Error::Validation { line, message: e.to_string() })?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct GenerationOptions {
    pub grid: OperatingGrid,
    pub space: DesignSpace,
    pub execution: Execution,
}

impl Default for GenerationOptions {
    fn default() -> Self {
        Self { grid: OperatingGrid::default(), space: DesignSpace::FULL, execution: Execution::Parallel }
    }
}

#[derive(Debug, Clone)]
pub struct Generated {
    pub dataset: LabeledDataset,
    /// Designs simulated in total, including dropped ones.
    pub attempts: usize,
    pub dropped: usize,
}

impl Generated {
    pub fn is_complete(&self, requested: usize) -> bool {
        self.dataset.len() == requested
    }
}

pub fn generate_dataset(n: usize, seed: u64) -> Result<Generated> {
    generate_dataset_with(n, seed, &GenerationOptions::default())
}

/// Samples and simulates designs until `n` carry valid labels. Invalid
/// designs are replaced by fresh Latin-hypercube batches; after `2n`
/// simulations the dataset is returned short with a warning.
pub fn generate_dataset_with(n: usize, seed: u64, opts: &GenerationOptions) -> Result<Generated> {
    if n == 0 {
        return Err(Error::domain("n", "must be at least 1"));
    }
    opts.space.validate()?;
    let cap = 2 * n;
    let mut records = Vec::with_capacity(n);
    let mut attempts = 0;
    let mut round = 0u64;
    while records.len() < n && attempts < cap {
        let batch = (n - records.len()).min(cap - attempts);
        let designs = lhs_sample_in(&opts.space, batch, derive_seed(seed, round));
        let labels = simulate_labels(&designs, &opts.grid, opts.execution)?;
        attempts += batch;
        round += 1;
        records.extend(
            designs
                .into_iter()
                .zip(labels)
                .filter_map(|(design, l)| l.ok().map(|labels| Record { design, labels, provenance: Provenance::Simulated })),
        );
        log::debug!("dataset round {round}: {}/{n} valid after {attempts} simulations", records.len());
    }
    if records.len() < n {
        log::warn!("only {} of {n} requested designs had valid labels after {attempts} simulations", records.len());
    }
    let dropped = attempts - records.len();
    Ok(Generated { dataset: LabeledDataset::new(records, seed), attempts, dropped })
}

/// First `n_train` records form the training half, the rest the test half.
pub fn split(d: &LabeledDataset, n_train: usize) -> Result<(LabeledDataset, LabeledDataset)> {
    if n_train == 0 || n_train >= d.len() {
        return Err(Error::domain("n_train", format!("{n_train} must be in 1..{} for a dataset of {} records", d.len(), d.len())));
    }
    let (a, b) = d.records.split_at(n_train);
    Ok((LabeledDataset::new(a.to_vec(), d.seed), LabeledDataset::new(b.to_vec(), d.seed)))
}

pub const DATASET_CSV_HEADER: [&str; 11] =
    ["n_blades", "P", "w_rp", "w_c", "w_rc", "camber", "eta_star", "j_star", "kt_star", "provenance", "seed"];

pub fn write_dataset_csv<W: Write>(d: &LabeledDataset, mut w: W) -> Result<()> {
    writeln!(w, "{}", DATASET_CSV_HEADER.join(","))?;
    for r in &d.records {
        let p = &r.design;
        let l = &r.labels;
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{},{},{}",
            p.n_blades, p.pitch, p.w_rp, p.w_c, p.w_rc, p.camber, l.eta_star, l.j_star, l.kt_star, r.provenance, d.seed
        )?;
    }
    Ok(())
}

pub fn read_dataset_csv<R: std::io::Read>(reader: R) -> Result<LabeledDataset> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let header = rdr.headers().map_err(|e| Error::Parse { line: 1, message: e.to_string() })?;
    if header.iter().map(str::trim).ne(DATASET_CSV_HEADER) {
        let missing: Vec<&str> = DATASET_CSV_HEADER.iter().copied().filter(|c| !header.iter().any(|h| h.trim() == *c)).collect();
        let message = if missing.is_empty() {
            format!("expected header `{}`", DATASET_CSV_HEADER.join(","))
        } else {
            format!("missing column(s): {}", missing.join(", "))
        };
        return Err(Error::Parse { line: 1, message });
    }
    let mut records = Vec::new();
    let mut seed = None;
    for row in rdr.records() {
        let row = row.map_err(|e| Error::Parse { line: e.position().map(|p| p.line()).unwrap_or(0), message: e.to_string() })?;
        let line = row.position().map(|p| p.line()).unwrap_or(0);
        let field = |k: usize| row.get(k).unwrap_or("").trim();
        let num = |k: usize| field(k).parse::<f64>().map_err(|e| Error::Parse { line, message: format!("{}: {e}", DATASET_CSV_HEADER[k]) });
        let n_blades = field(0).parse::<u8>().map_err(|e| Error::Parse { line, message: format!("n_blades: {e}") })?;
        let design = DesignVector { n_blades, pitch: num(1)?, w_rp: num(2)?, w_c: num(3)?, w_rc: num(4)?, camber: num(5)? };
        let labels = LabelVector { eta_star: num(6)?, j_star: num(7)?, kt_star: num(8)? };
        let provenance = field(9).parse::<Provenance>().map_err(|message| Error::Parse { line, message })?;
        let row_seed = field(10).parse::<u64>().map_err(|e| Error::Parse { line, message: format!("seed: {e}") })?;
        if *seed.get_or_insert(row_seed) != row_seed {
            return Err(Error::Validation { line, message: "seed differs from earlier rows".into() });
        }
        design.validate().and_then(|_| labels.validate()).map_err(|e| Error::Validation { line, message: e.to_string() })?;
        records.push(Record { design, labels, provenance });
    }
    Ok(LabeledDataset::new(records, seed.unwrap_or(0)))
}

pub fn save_dataset(d: &LabeledDataset, path: &Path) -> Result<()> {
    let mut buf = Vec::new();
    write_dataset_csv(d, &mut buf)?;
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(path, buf)?;
    Ok(())
}

pub fn load_dataset(path: &Path) -> Result<LabeledDataset> {
    if !path.exists() {
        return Err(Error::MissingArtifact { what: "dataset".into(), path: path.to_path_buf() });
    }
    read_dataset_csv(std::fs::File::open(path)?)
}
