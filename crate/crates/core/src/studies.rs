//! Accuracy, diversity and augmentation studies.

use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cfm::{sample_designs, sample_for_conditions, train_cfm, CfmModel};
use crate::dataset::{lhs_sample, LabeledDataset, Provenance, Record};
use crate::error::{Error, Result};
use crate::geometry::{DesignVector, DESIGN_COLUMNS};
use crate::hydro::{simulate_labels, LabelVector, OperatingGrid, TargetSpec, LABEL_COLUMNS};
use crate::nn::NetSpec;
use crate::par::{derive_seed, Execution};
use crate::surrogate::{mre, train_surrogates, SurrogateSet};

#[derive(Debug, Clone)]
pub struct StudyOptions {
    pub steps: usize,
    pub seed: u64,
    pub grid: OperatingGrid,
    pub execution: Execution,
}

impl Default for StudyOptions {
    fn default() -> Self {
        Self { steps: crate::cfm::DEFAULT_STEPS, seed: 0, grid: OperatingGrid::default(), execution: Execution::Parallel }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParityPoint {
    pub target: LabelVector,
    pub achieved: LabelVector,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub name: String,
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
}

impl Histogram {
    /// Equal-width bins over the data range; a constant sample gets one bin.
    pub fn of(name: &str, values: &[f64], bins: usize) -> Self {
        let bins = bins.max(1);
        let lo = values.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if values.is_empty() || !(hi > lo) {
            let (lo, hi) = if values.is_empty() { (0.0, 1.0) } else { (lo - 0.5, hi + 0.5) };
            return Self { name: name.into(), edges: vec![lo, hi], counts: vec![values.len()] };
        }
        let width = (hi - lo) / bins as f64;
        let edges = (0..=bins).map(|k| lo + k as f64 * width).collect();
        let mut counts = vec![0; bins];
        for v in values {
            let k = (((v - lo) / width) as usize).min(bins - 1);
            counts[k] += 1;
        }
        Self { name: name.into(), edges, counts }
    }

    /// One bin per distinct integer value.
    pub fn discrete(name: &str, values: &[f64], support: &[f64]) -> Self {
        let edges = support.iter().map(|v| v - 0.5).chain(support.last().map(|v| v + 0.5)).collect();
        let counts = support.iter().map(|s| values.iter().filter(|v| (*v - s).abs() < 0.5).count()).collect();
        Self { name: name.into(), edges, counts }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyReport {
    pub study: String,
    pub requested: usize,
    pub valid: usize,
    /// MRE of achieved against targeted labels; `None` for free labels.
    pub mre: [Option<f64>; 3],
    pub parity: Vec<ParityPoint>,
    pub designs: Vec<DesignVector>,
    pub histograms: Vec<Histogram>,
    pub seed: u64,
    pub steps: usize,
    pub target: Option<TargetSpec>,
}

impl StudyReport {
    /// Fraction of valid designs whose achieved label is within relative
    /// `tol` of its target, per targeted label.
    pub fn fraction_within(&self, tol: f64) -> [Option<f64>; 3] {
        let mut out = [None; 3];
        if self.parity.is_empty() {
            return out;
        }
        for (k, slot) in out.iter_mut().enumerate() {
            if self.mre[k].is_none() {
                continue;
            }
            let hits = self
                .parity
                .iter()
                .filter(|p| {
                    let t = p.target.to_array()[k];
                    ((p.achieved.to_array()[k] - t) / t).abs() <= tol
                })
                .count();
            *slot = Some(hits as f64 / self.parity.len() as f64);
        }
        out
    }

    pub fn distinct_blade_counts(&self) -> usize {
        let mut seen: Vec<u8> = self.designs.iter().map(|p| p.n_blades).collect();
        seen.sort_unstable();
        seen.dedup();
        seen.len()
    }

    pub fn write_parity_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "target_eta_star,target_j_star,target_kt_star,eta_star,j_star,kt_star")?;
        for p in &self.parity {
            let (t, a) = (p.target, p.achieved);
            writeln!(w, "{},{},{},{},{},{}", t.eta_star, t.j_star, t.kt_star, a.eta_star, a.j_star, a.kt_star)?;
        }
        Ok(())
    }
}

fn per_label_mre(parity: &[ParityPoint], targeted: [bool; 3]) -> Result<[Option<f64>; 3]> {
    let mut out = [None; 3];
    if parity.is_empty() {
        return Ok(out);
    }
    for k in 0..3 {
        if targeted[k] {
            let t: Vec<f64> = parity.iter().map(|p| p.target.to_array()[k]).collect();
            let a: Vec<f64> = parity.iter().map(|p| p.achieved.to_array()[k]).collect();
            out[k] = Some(mre(&t, &a)?);
        }
    }
    Ok(out)
}

/// Simulates generated designs and pairs each valid one with its condition.
fn resimulate(designs: &[DesignVector], targets: &[LabelVector], opts: &StudyOptions) -> Result<(Vec<ParityPoint>, Vec<DesignVector>)> {
    let achieved = simulate_labels(designs, &opts.grid, opts.execution)?;
    let mut parity = Vec::new();
    let mut valid_designs = Vec::new();
    for ((a, t), p) in achieved.into_iter().zip(targets).zip(designs) {
        if let Ok(a) = a {
            parity.push(ParityPoint { target: *t, achieved: a });
            valid_designs.push(*p);
        }
    }
    Ok((parity, valid_designs))
}

/// One generated design per test label vector, re-simulated and scored.
pub fn run_accuracy_study(cfm: &CfmModel, test: &LabeledDataset, opts: &StudyOptions) -> Result<StudyReport> {
    if test.is_empty() {
        return Err(Error::Empty { context: "test set" });
    }
    let targets = test.labels();
    let generated = sample_for_conditions(cfm, &targets, opts.steps, opts.seed, opts.execution)?;
    let (parity, _) = resimulate(&generated.designs, &targets, opts)?;
    Ok(StudyReport {
        study: "accuracy".into(),
        requested: targets.len(),
        valid: parity.len(),
        mre: per_label_mre(&parity, [true; 3])?,
        parity,
        designs: generated.designs,
        histograms: Vec::new(),
        seed: opts.seed,
        steps: opts.steps,
        target: None,
    })
}

pub const HISTOGRAM_BINS: usize = 20;

/// `n` designs for one target: parameter histograms of all generated
/// designs and achieved-label histograms of the valid ones.
pub fn run_diversity_study(cfm: &CfmModel, spec: &TargetSpec, n: usize, opts: &StudyOptions) -> Result<StudyReport> {
    let generated = sample_designs(cfm, spec, n, opts.steps, opts.seed, opts.execution)?;
    let (parity, _) = resimulate(&generated.designs, &generated.conditions, opts)?;
    let mut histograms = Vec::new();
    for (k, name) in DESIGN_COLUMNS.iter().enumerate() {
        let v: Vec<f64> = generated.designs.iter().map(|p| p.to_array()[k]).collect();
        histograms.push(if k == 0 {
            Histogram::discrete(name, &v, &[2.0, 3.0, 4.0, 5.0])
        } else {
            Histogram::of(name, &v, HISTOGRAM_BINS)
        });
    }
    for (k, name) in LABEL_COLUMNS.iter().enumerate() {
        let v: Vec<f64> = parity.iter().map(|p| p.achieved.to_array()[k]).collect();
        histograms.push(Histogram::of(name, &v, HISTOGRAM_BINS));
    }
    let targeted = spec.to_array().map(|t| t.is_some());
    Ok(StudyReport {
        study: "diversity".into(),
        requested: n,
        valid: parity.len(),
        mre: per_label_mre(&parity, targeted)?,
        parity,
        designs: generated.designs,
        histograms,
        seed: opts.seed,
        steps: opts.steps,
        target: Some(*spec),
    })
}

/// `n` LHS designs labelled by the surrogates, with no simulation.
pub fn build_augmented(s: &SurrogateSet, n: usize, seed: u64) -> Result<LabeledDataset> {
    let designs = lhs_sample(n, seed);
    let labels = s.predict_batch(&designs)?;
    let records =
        designs.into_iter().zip(labels).map(|(design, labels)| Record { design, labels, provenance: Provenance::Pseudo }).collect();
    Ok(LabeledDataset::new(records, seed))
}

/// Percent change of `mre_aug` relative to `mre_base`; negative means the
/// error went down.
pub fn relative_improvement(mre_aug: f64, mre_base: f64) -> Result<f64> {
    if !(mre_base > 0.0) {
        return Err(Error::domain("mre_base", "must be positive"));
    }
    Ok(100.0 * (mre_aug - mre_base) / mre_base)
}

#[derive(Debug, Clone)]
pub struct AugmentationConfig {
    pub d_list: Vec<usize>,
    pub aug_sizes: Vec<usize>,
    pub surrogate: NetSpec,
    pub cfm: NetSpec,
    pub study: StudyOptions,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentationTable {
    pub d_list: Vec<usize>,
    pub aug_sizes: Vec<usize>,
    /// MRE of the generator trained on the restricted set, per `d`.
    pub base_mre: Vec<[f64; 3]>,
    /// `aug_mre[i][j]`: MRE for `d_list[i]` with `aug_sizes[j]` pseudo records.
    pub aug_mre: Vec<Vec<[f64; 3]>>,
    /// Relative improvement in percent, same indexing as `aug_mre`.
    pub improvement: Vec<Vec<[f64; 3]>>,
    pub seed: u64,
}

fn size_label(n: usize) -> String {
    if n >= 1000 && n % 1000 == 0 {
        format!("{}k", n / 1000)
    } else {
        n.to_string()
    }
}

impl AugmentationTable {
    pub fn n_rows(&self) -> usize {
        self.d_list.len()
    }

    pub fn n_cols(&self) -> usize {
        self.aug_sizes.len() * 3
    }

    /// Rows per `d`, columns `aug<size>_<label>` with improvements in percent.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        let mut header = vec!["d".to_string()];
        for a in &self.aug_sizes {
            for l in LABEL_COLUMNS {
                header.push(format!("aug{}_{l}", size_label(*a)));
            }
        }
        writeln!(w, "{}", header.join(","))?;
        for (i, d) in self.d_list.iter().enumerate() {
            let mut row = vec![d.to_string()];
            for cell in &self.improvement[i] {
                row.extend(cell.iter().map(|v| format!("{v:.2}")));
            }
            writeln!(w, "{}", row.join(","))?;
        }
        Ok(())
    }

    /// Raw MREs per model, one row per (d, training set).
    pub fn write_mre_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "d,training_set,eta_star,j_star,kt_star")?;
        for (i, d) in self.d_list.iter().enumerate() {
            let m = self.base_mre[i];
            writeln!(w, "{d},restricted,{},{},{}", m[0], m[1], m[2])?;
            for (j, a) in self.aug_sizes.iter().enumerate() {
                let m = self.aug_mre[i][j];
                writeln!(w, "{d},aug{},{},{},{}", size_label(*a), m[0], m[1], m[2])?;
            }
        }
        Ok(())
    }
}

fn full_mre(r: &StudyReport) -> Result<[f64; 3]> {
    let mut out = [0.0; 3];
    for (k, m) in r.mre.iter().enumerate() {
        out[k] = m.ok_or_else(|| Error::domain("accuracy study", "no valid designs to score"))?;
    }
    Ok(out)
}

/// Surrogate augmentation sweep. Restricted sets are prefixes of one seeded
/// shuffle of `base`, so smaller sets are nested in larger ones. Cells run
/// one after another; simulation and sampling inside each cell follow
/// `config.study.execution`.
pub fn run_augmentation_study(base: &LabeledDataset, test: &LabeledDataset, config: &AugmentationConfig) -> Result<AugmentationTable> {
    let seed = config.study.seed;
    let need = config.d_list.iter().copied().max().unwrap_or(0);
    if config.d_list.is_empty() || config.aug_sizes.is_empty() {
        return Err(Error::domain("d_list", "sweep needs at least one size and one augmentation size"));
    }
    if need > base.len() {
        return Err(Error::domain("d_list", format!("largest d = {need} exceeds the {} available records", base.len())));
    }
    let mut order: Vec<usize> = (0..base.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(seed, 0)));

    let mut base_mre = Vec::new();
    let mut aug_mre = Vec::new();
    let mut improvement = Vec::new();
    for (i, &d) in config.d_list.iter().enumerate() {
        let cell_seed = derive_seed(seed, 1 + i as u64);
        let records = order[..d].iter().map(|&k| base.records[k]).collect();
        let restricted = LabeledDataset::new(records, seed);
        let surrogates = train_surrogates(&restricted, &config.surrogate, derive_seed(cell_seed, 0), config.study.execution)?.set;

        let score = |train: &LabeledDataset, tag: u64| -> Result<[f64; 3]> {
            let cfm = train_cfm(train, &config.cfm, derive_seed(cell_seed, 10 + tag))?.model;
            let opts = StudyOptions { seed: derive_seed(cell_seed, 20 + tag), ..config.study.clone() };
            full_mre(&run_accuracy_study(&cfm, test, &opts)?)
        };
        let b = score(&restricted, 0)?;
        log::info!("d = {d}: restricted MRE {b:?}");
        let mut row = Vec::new();
        let mut imp = Vec::new();
        for (j, &n_aug) in config.aug_sizes.iter().enumerate() {
            let aug = build_augmented(&surrogates, n_aug, derive_seed(cell_seed, 30 + j as u64))?;
            let a = score(&aug, 1 + j as u64)?;
            log::info!("d = {d}, aug {n_aug}: MRE {a:?}");
            let mut cell = [0.0; 3];
            for k in 0..3 {
                cell[k] = relative_improvement(a[k], b[k])?;
            }
            row.push(a);
            imp.push(cell);
        }
        base_mre.push(b);
        aug_mre.push(row);
        improvement.push(imp);
    }
    Ok(AugmentationTable { d_list: config.d_list.clone(), aug_sizes: config.aug_sizes.clone(), base_mre, aug_mre, improvement, seed })
}
