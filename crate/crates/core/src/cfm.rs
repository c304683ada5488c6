//! Label-conditioned flow matching over normalized design vectors.
//!
//! The field network sees `[x_t (6), t, labels (3)]` and predicts a velocity
//! in design space. Training regresses it onto the straight-line target
//! `x1 - x0` between a Gaussian draw `x0` and a data point `x1`; sampling
//! integrates the learned field from `t = 0` to `t = 1` with RK4.

use std::fs;
use std::io::Write;
use std::path::Path;

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis, Zip};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::dataset::{fit_norm, LabeledDataset, NormStats};
use crate::error::{Error, Result};
use crate::geometry::{DesignSpace, DesignVector, BLADE_COUNTS, DESIGN_COLUMNS};
use crate::hydro::{LabelVector, TargetSpec, LABEL_COLUMNS};
use crate::nn::{self, Gradients, MlpModel, NetSpec, Scalar, TrainReport};
use crate::par::{self, derive_seed, Execution};

pub const DESIGN_DIM: usize = 6;
pub const LABEL_DIM: usize = 3;
pub const FIELD_INPUT_DIM: usize = DESIGN_DIM + 1 + LABEL_DIM;
pub const DEFAULT_STEPS: usize = 100;
/// Samples integrated together in one batch.
const SAMPLE_CHUNK: usize = 256;

/// A time-dependent velocity field in normalized design space, conditioned
/// on normalized labels. Rows of `x`, `t` and `cond` belong together.
pub trait VectorField: Sync {
    fn velocity(&self, x: ArrayView2<f64>, t: ArrayView1<f64>, cond: ArrayView2<f64>) -> Result<Array2<f64>>;
}

fn field_input(x: ArrayView2<f64>, t: ArrayView1<f64>, cond: ArrayView2<f64>) -> Result<Array2<f64>> {
    let n = x.nrows();
    if x.ncols() != DESIGN_DIM {
        return Err(Error::Shape { context: "field state", expected: DESIGN_DIM, got: x.ncols() });
    }
    if cond.ncols() != LABEL_DIM {
        return Err(Error::Shape { context: "field condition", expected: LABEL_DIM, got: cond.ncols() });
    }
    if t.len() != n || cond.nrows() != n {
        return Err(Error::Shape { context: "field batch", expected: n, got: t.len().min(cond.nrows()) });
    }
    let mut input = Array2::zeros((n, FIELD_INPUT_DIM));
    input.slice_mut(s![.., ..DESIGN_DIM]).assign(&x);
    input.column_mut(DESIGN_DIM).assign(&t);
    input.slice_mut(s![.., DESIGN_DIM + 1..]).assign(&cond);
    Ok(input)
}

impl<T: Scalar> VectorField for MlpModel<T> {
    fn velocity(&self, x: ArrayView2<f64>, t: ArrayView1<f64>, cond: ArrayView2<f64>) -> Result<Array2<f64>> {
        let input = field_input(x, t, cond)?.mapv(T::of);
        Ok(self.forward_batch(input.view())?.mapv(T::f64))
    }
}

/// Noise, times, interpolants and regression targets for one batch.
#[derive(Debug, Clone, PartialEq)]
pub struct PathDraws {
    pub x0: Array2<f64>,
    pub t: Array1<f64>,
    pub xt: Array2<f64>,
    pub target: Array2<f64>,
}

/// `x_t = t x1 + (1 - t) x0`.
pub fn interpolate(x0: ArrayView1<f64>, x1: ArrayView1<f64>, t: f64) -> Array1<f64> {
    Zip::from(&x0).and(&x1).map_collect(|a, b| t * b + (1.0 - t) * a)
}

/// Draws `x0 ~ N(0, I)` and `t ~ U(0, 1)` per row of `x1`.
pub fn draw_paths<R: Rng>(x1: ArrayView2<f64>, rng: &mut R) -> PathDraws {
    let n = x1.nrows();
    let d = x1.ncols();
    let x0 = Array2::from_shape_simple_fn((n, d), || rng.sample::<f64, _>(StandardNormal));
    let t = Array1::from_shape_simple_fn(n, || rng.random::<f64>());
    let mut xt = Array2::zeros((n, d));
    for i in 0..n {
        xt.row_mut(i).assign(&interpolate(x0.row(i), x1.row(i), t[i]));
    }
    let target = &x1 - &x0;
    PathDraws { x0, t, xt, target }
}

/// Batch mean of `|v - u|^2`, summed over design dimensions, and its
/// gradient with respect to `v`.
pub fn path_loss<T: Scalar>(v: &Array2<T>, target: &Array2<T>) -> Result<(f64, Array2<T>)> {
    if v.dim() != target.dim() {
        return Err(Error::Shape { context: "field output", expected: target.len(), got: v.len() });
    }
    let n = v.nrows() as f64;
    let diff = v - target;
    let loss = diff.iter().map(|d| d.f64() * d.f64()).sum::<f64>() / n;
    Ok((loss, diff * T::of(2.0 / n)))
}

/// Flow-matching loss of any field on pre-drawn paths.
pub fn field_loss<F: VectorField + ?Sized>(field: &F, draws: &PathDraws, cond: ArrayView2<f64>) -> Result<f64> {
    let v = field.velocity(draws.xt.view(), draws.t.view(), cond)?;
    Ok(path_loss(&v, &draws.target)?.0)
}

/// Loss and parameter gradients of the field network on one batch of
/// normalized designs `x1` with normalized labels `cond`.
pub fn cfm_batch_loss<T: Scalar, R: Rng>(
    field: &MlpModel<T>,
    x1: ArrayView2<f64>,
    cond: ArrayView2<f64>,
    rng: &mut R,
) -> Result<(f64, Gradients<T>)> {
    if x1.nrows() == 0 {
        return Err(Error::Empty { context: "flow-matching batch" });
    }
    let draws = draw_paths(x1, rng);
    let input = field_input(draws.xt.view(), draws.t.view(), cond)?.mapv(T::of);
    let target = draws.target.mapv(T::of);
    field.backward_with(input.view(), |v| path_loss(v, &target))
}

#[derive(Debug, Clone, PartialEq)]
pub struct CfmModel {
    pub field: MlpModel<f32>,
    pub norm: NormStats,
    /// Per-label (min, max) of the training labels, in raw units.
    pub label_envelope: [(f64, f64); 3],
}

#[derive(Debug, Clone)]
pub struct CfmTraining {
    pub model: CfmModel,
    pub report: TrainReport,
}

/// Trains a generator on `train` with normalization fitted on `train`.
pub fn train_cfm(train: &LabeledDataset, spec: &NetSpec, seed: u64) -> Result<CfmTraining> {
    if train.is_empty() {
        return Err(Error::Empty { context: "flow-matching training set" });
    }
    let norm = fit_norm(train)?;
    train_cfm_with_norm(train, norm, spec, seed)
}

/// Trains with caller-supplied normalization, for sets whose own statistics
/// are degenerate (for example a single repeated design).
pub fn train_cfm_with_norm(train: &LabeledDataset, norm: NormStats, spec: &NetSpec, seed: u64) -> Result<CfmTraining> {
    norm.validate()?;
    let envelope = train.label_envelope().ok_or(Error::Empty { context: "flow-matching training set" })?;
    let x = crate::surrogate::design_matrix(&train.designs(), &norm);
    let mut cond = Array2::zeros((train.len(), LABEL_DIM));
    for (mut row, l) in cond.axis_iter_mut(Axis(0)).zip(train.labels()) {
        row.assign(&ndarray::aview1(&norm.normalize_labels(&l)));
    }
    let mut field = MlpModel::<f32>::new(spec.config(FIELD_INPUT_DIM, DESIGN_DIM, seed))?;
    let report = nn::fit_with(&mut field, train.len(), &spec.schedule, derive_seed(seed, 1), |m, idx, rng| {
        let xb = x.select(Axis(0), idx);
        let cb = cond.select(Axis(0), idx);
        cfm_batch_loss(m, xb.view(), cb.view(), rng)
    })?;
    log::info!("flow field: final loss {:.4e}", report.final_loss());
    Ok(CfmTraining { model: CfmModel { field, norm, label_envelope: envelope }, report })
}

/// Fixed-step classic RK4 from `t = 0` to `t = 1`, one row per sample.
pub fn integrate_flow<F: VectorField + ?Sized>(field: &F, x0: ArrayView2<f64>, cond: ArrayView2<f64>, steps: usize) -> Result<Array2<f64>> {
    if steps == 0 {
        return Err(Error::domain("steps", "must be at least 1"));
    }
    let n = x0.nrows();
    let h = 1.0 / steps as f64;
    let mut x = x0.to_owned();
    let times = |t: f64| Array1::from_elem(n, t);
    for step in 0..steps {
        let t = step as f64 * h;
        let k1 = field.velocity(x.view(), times(t).view(), cond)?;
        let k2 = field.velocity((&x + &(&k1 * (h / 2.0))).view(), times(t + h / 2.0).view(), cond)?;
        let k3 = field.velocity((&x + &(&k2 * (h / 2.0))).view(), times(t + h / 2.0).view(), cond)?;
        let k4 = field.velocity((&x + &(&k3 * h)).view(), times(t + h).view(), cond)?;
        Zip::from(&mut x).and(&k1).and(&k2).and(&k3).and(&k4).for_each(|x, a, b, c, d| *x += h / 6.0 * (a + 2.0 * b + 2.0 * c + d));
        if let Some(row) = x.outer_iter().position(|r| r.iter().any(|v| !v.is_finite())) {
            return Err(Error::Integration { step: step + 1, sample: Some(row) });
        }
    }
    Ok(x)
}

/// Which design entries were moved by decoding.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClampFlags(pub [bool; 6]);

impl ClampFlags {
    pub fn any(&self) -> bool {
        self.0.iter().any(|f| *f)
    }

    pub fn names(&self) -> Vec<&'static str> {
        DESIGN_COLUMNS.iter().zip(self.0).filter(|(_, f)| *f).map(|(n, _)| *n).collect()
    }
}

const DECODE_SLACK: f64 = 1e-6;

/// Denormalizes, rounds the blade count to the nearest allowed value and
/// clamps continuous variables into the design box.
pub fn decode_design(x: &[f64; 6], norm: &NormStats) -> (DesignVector, ClampFlags) {
    let raw = norm.denormalize_design(x);
    let mut flags = [false; 6];
    let (lo, hi) = (BLADE_COUNTS[0] as f64, BLADE_COUNTS[BLADE_COUNTS.len() - 1] as f64);
    let blades = if raw[0].is_finite() { raw[0].round().clamp(lo, hi) } else { lo };
    flags[0] = !((raw[0] - blades).abs() <= DECODE_SLACK);
    let mut out = [blades, 0.0, 0.0, 0.0, 0.0, 0.0];
    for (k, b) in DesignSpace::FULL.continuous().iter().enumerate() {
        let v = raw[k + 1];
        let c = if v.is_finite() { b.clamp(v) } else { b.lo };
        flags[k + 1] = !((v - c).abs() <= DECODE_SLACK);
        out[k + 1] = c;
    }
    (DesignVector::from_array(out), ClampFlags(flags))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationReport {
    pub designs: Vec<DesignVector>,
    pub clamped: Vec<ClampFlags>,
    /// Complete label vector each sample was conditioned on.
    pub conditions: Vec<LabelVector>,
}

pub const REPORT_CSV_HEADER: &str = "n_blades,P,w_rp,w_c,w_rc,camber,cond_eta_star,cond_j_star,cond_kt_star,clamped";

impl GenerationReport {
    pub fn len(&self) -> usize {
        self.designs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.designs.is_empty()
    }

    /// One row per design; `clamped` lists adjusted columns joined by `;`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "{REPORT_CSV_HEADER}")?;
        for ((p, c), l) in self.designs.iter().zip(&self.clamped).zip(&self.conditions) {
            let d = p.to_array();
            writeln!(
                w,
                "{},{},{},{},{},{},{},{},{},{}",
                p.n_blades,
                d[1],
                d[2],
                d[3],
                d[4],
                d[5],
                l.eta_star,
                l.j_star,
                l.kt_star,
                c.names().join(";")
            )?;
        }
        Ok(())
    }
}

impl CfmModel {
    pub fn validate(&self) -> Result<()> {
        self.norm.validate()?;
        let c = self.field.config();
        if c.input_dim != FIELD_INPUT_DIM || c.output_dim != DESIGN_DIM {
            return Err(Error::Checkpoint(format!("field network must map {FIELD_INPUT_DIM} inputs to {DESIGN_DIM} outputs")));
        }
        Ok(())
    }

    /// Fills free labels with uniform draws over the training envelope.
    pub fn complete_condition<R: Rng>(&self, spec: &TargetSpec, rng: &mut R) -> LabelVector {
        let mut l = [0.0; 3];
        for (k, t) in spec.to_array().into_iter().enumerate() {
            let (lo, hi) = self.label_envelope[k];
            l[k] = match t {
                Some(v) => v,
                None if hi > lo => rng.random_range(lo..=hi),
                None => lo,
            };
        }
        LabelVector::from_array(l)
    }

    fn warn_outside_envelope(&self, spec: &TargetSpec) {
        for (k, t) in spec.to_array().into_iter().enumerate() {
            if let Some(v) = t {
                let (lo, hi) = self.label_envelope[k];
                if v < lo || v > hi {
                    log::warn!("target {} = {v} lies outside the training range [{lo}, {hi}]", LABEL_COLUMNS[k]);
                }
            }
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir)?;
        }
        let ckpt = CfmCheckpoint {
            format: CFM_FORMAT.into(),
            version: CFM_FORMAT_VERSION,
            norm: self.norm.clone(),
            label_envelope: self.label_envelope,
            field: self.field.clone(),
        };
        fs::write(path, serde_json::to_vec(&ckpt)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingArtifact { what: "cfm checkpoint".into(), path: path.to_path_buf() });
        }
        let ckpt: CfmCheckpoint = serde_json::from_slice(&fs::read(path)?)?;
        if ckpt.format != CFM_FORMAT || ckpt.version != CFM_FORMAT_VERSION {
            return Err(Error::Checkpoint(format!("{}: expected {CFM_FORMAT} v{CFM_FORMAT_VERSION}", path.display())));
        }
        let m = Self { field: ckpt.field, norm: ckpt.norm, label_envelope: ckpt.label_envelope };
        m.validate()?;
        Ok(m)
    }
}

pub const CFM_FORMAT: &str = "propforge-cfm";
pub const CFM_FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct CfmCheckpoint {
    format: String,
    version: u32,
    norm: NormStats,
    label_envelope: [(f64, f64); 3],
    field: MlpModel<f32>,
}

/// Generates one design per entry of `conditions`. Sample `i` draws its
/// noise from `derive_seed(seed, i)`, so results do not depend on chunking
/// or execution mode.
pub fn sample_for_conditions(
    model: &CfmModel,
    conditions: &[LabelVector],
    steps: usize,
    seed: u64,
    exec: Execution,
) -> Result<GenerationReport> {
    if conditions.is_empty() {
        return Err(Error::domain("count", "must be at least 1"));
    }
    let chunks: Vec<(usize, &[LabelVector])> = conditions.chunks(SAMPLE_CHUNK).enumerate().map(|(c, s)| (c * SAMPLE_CHUNK, s)).collect();
    let decoded = par::map(&chunks, exec, |_, (offset, conds)| -> Result<Vec<(DesignVector, ClampFlags)>> {
        let n = conds.len();
        let mut x0 = Array2::zeros((n, DESIGN_DIM));
        let mut cond = Array2::zeros((n, LABEL_DIM));
        for (i, l) in conds.iter().enumerate() {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, (offset + i) as u64));
            x0.row_mut(i).mapv_inplace(|_| rng.sample(StandardNormal));
            cond.row_mut(i).assign(&ndarray::aview1(&model.norm.normalize_labels(l)));
        }
        let x1 = integrate_flow(&model.field, x0.view(), cond.view(), steps).map_err(|e| match e {
            Error::Integration { step, sample } => Error::Integration { step, sample: sample.map(|s| s + offset) },
            other => other,
        })?;
        Ok(x1.outer_iter().map(|r| decode_design(&[r[0], r[1], r[2], r[3], r[4], r[5]], &model.norm)).collect())
    });
    let mut designs = Vec::with_capacity(conditions.len());
    let mut clamped = Vec::with_capacity(conditions.len());
    for chunk in decoded {
        for (p, c) in chunk? {
            designs.push(p);
            clamped.push(c);
        }
    }
    Ok(GenerationReport { designs, clamped, conditions: conditions.to_vec() })
}

/// Generates `n` designs for `spec`; free labels are drawn per sample from
/// `derive_seed(seed ^ CONDITION_STREAM, i)`.
pub fn sample_designs(model: &CfmModel, spec: &TargetSpec, n: usize, steps: usize, seed: u64, exec: Execution) -> Result<GenerationReport> {
    spec.validate()?;
    model.warn_outside_envelope(spec);
    let conditions: Vec<LabelVector> = (0..n)
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed ^ CONDITION_STREAM, i as u64));
            model.complete_condition(spec, &mut rng)
        })
        .collect();
    sample_for_conditions(model, &conditions, steps, seed, exec)
}

const CONDITION_STREAM: u64 = 0x5eed_c0de_0000_0001;
