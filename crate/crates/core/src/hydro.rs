//! Open-water performance of a blade geometry by blade-element/momentum
//! balance with Prandtl tip loss, and extraction of the performance labels
//! (peak efficiency, its advance ratio and the thrust coefficient there).
//!
//! All quantities are non-dimensional: velocities are scaled by `nD`, so the
//! axial inflow is `J` and the section rotational speed is `pi * r/R`.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{build_blade, BladeGeometry, DesignVector, SectionSpec, STATION_RADII};
use crate::par::{self, Execution};

/// Section drag coefficient applied at every radius.
pub const SECTION_DRAG: f64 = 0.008;
/// Stall guard on the thin-airfoil lift coefficient.
pub const LIFT_LIMIT: f64 = 1.5;

const RELAXATION: f64 = 0.3;
const TOLERANCE: f64 = 1e-6;
const MAX_ITERATIONS: usize = 500;
const MIN_SIN_PHI: f64 = 1e-6;
const MIN_TIP_LOSS: f64 = 1e-3;
const INDUCTION_MIN: f64 = -0.45;
const INDUCTION_MAX: f64 = 0.95;
/// Step of the fine advance-ratio mesh used to locate the efficiency peak.
pub const LABEL_MESH_STEP: f64 = 0.001;

/// Advance ratios at which the open-water curve is evaluated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OperatingGrid {
    advance_ratios: Vec<f64>,
}

impl OperatingGrid {
    pub fn new(advance_ratios: Vec<f64>) -> Result<Self> {
        if advance_ratios.len() < 3 {
            return Err(Error::domain("advance_ratios", "need at least 3 points"));
        }
        if advance_ratios.iter().any(|j| !j.is_finite() || *j <= 0.0) {
            return Err(Error::domain("advance_ratios", "all values must be positive and finite"));
        }
        if advance_ratios.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::domain("advance_ratios", "must be strictly increasing"));
        }
        Ok(Self { advance_ratios })
    }

    /// Uniform grid `start, start + step, ..., stop` (inclusive).
    pub fn uniform(start: f64, stop: f64, step: f64) -> Result<Self> {
        if !(step > 0.0) || !(stop > start) {
            return Err(Error::domain("grid", "need step > 0 and stop > start"));
        }
        let n = ((stop - start) / step).round() as usize;
        Self::new((0..=n).map(|k| start + step * k as f64).collect())
    }

    pub fn advance_ratios(&self) -> &[f64] {
        &self.advance_ratios
    }

    pub fn len(&self) -> usize {
        self.advance_ratios.len()
    }

    pub fn is_empty(&self) -> bool {
        self.advance_ratios.is_empty()
    }

    pub fn first(&self) -> f64 {
        self.advance_ratios[0]
    }

    pub fn last(&self) -> f64 {
        self.advance_ratios[self.advance_ratios.len() - 1]
    }
}

impl Default for OperatingGrid {
    /// J = 0.25, 0.30, ..., 1.60.
    fn default() -> Self {
        Self { advance_ratios: (0..28).map(|k| (25 + 5 * k) as f64 / 100.0).collect() }
    }
}

/// Efficiency `J kT / (2 pi kQ)`.
pub fn efficiency(j: f64, kt: f64, kq: f64) -> Result<f64> {
    if !(kq > 0.0) {
        return Err(Error::domain("kq", format!("torque coefficient must be positive, got {kq}")));
    }
    Ok(j * kt / (2.0 * PI * kq))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StationMethod {
    FixedPoint,
    /// Bracketed root of the inflow-angle residual, used when the damped
    /// iteration does not settle (typically at the tip, where the tip-loss
    /// factor makes the momentum inversion extremely steep).
    Bracketed,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StationSolution {
    /// Axial induction factor.
    pub a: f64,
    /// Tangential induction factor.
    pub a_tan: f64,
    /// Inflow angle in radians.
    pub phi: f64,
    pub cl: f64,
    /// dkT / d(r/R).
    pub dkt: f64,
    /// dkQ / d(r/R).
    pub dkq: f64,
    pub converged: bool,
    pub method: StationMethod,
    pub iterations: usize,
}

#[derive(Debug, Clone, Copy)]
struct Loads {
    phi: f64,
    cl: f64,
    dkt: f64,
    dkq: f64,
}

#[derive(Debug, Clone, Copy)]
struct Station {
    r: f64,
    pitch_ratio: f64,
    chord_ratio: f64,
    camber_ratio: f64,
    j: f64,
    blades: f64,
}

impl Station {
    fn lift(&self, phi: f64) -> f64 {
        let alpha = (self.pitch_ratio / (PI * self.r)).atan() - phi;
        // zero-lift angle of a parabolic mean line is -2 f/c
        (2.0 * PI * (alpha + 2.0 * self.camber_ratio)).clamp(-LIFT_LIMIT, LIFT_LIMIT)
    }

    fn tip_loss(&self, phi: f64) -> f64 {
        let s = phi.sin().max(MIN_SIN_PHI);
        let e = (-(self.blades / 2.0) * (1.0 - self.r) / (self.r * s)).exp();
        (2.0 / PI * e.min(1.0).acos()).max(MIN_TIP_LOSS)
    }

    fn loads(&self, a: f64, a_tan: f64) -> Loads {
        let u = self.j * (1.0 + a);
        let w = PI * self.r * (1.0 - a_tan);
        let w2 = u * u + w * w;
        let phi = u.atan2(w);
        let cl = self.lift(phi);
        let (s, c) = phi.sin_cos();
        let q = self.blades * self.chord_ratio * w2;
        Loads { phi, cl, dkt: 0.25 * q * (cl * c - SECTION_DRAG * s), dkq: 0.125 * q * (cl * s + SECTION_DRAG * c) * self.r }
    }

    /// Inductions that make the momentum loads equal the given blade loads.
    fn momentum_inverse(&self, l: &Loads) -> (f64, f64) {
        let f = self.tip_loss(l.phi);
        let k = l.dkt / (PI * self.j * self.j * self.r * f);
        let disc = 1.0 + 4.0 * k;
        let a = if disc > 0.0 { 0.5 * (disc.sqrt() - 1.0) } else { -0.5 };
        let a = a.clamp(INDUCTION_MIN, INDUCTION_MAX);
        let a_tan = l.dkq / (0.5 * PI * PI * self.j * self.r.powi(3) * (1.0 + a) * f);
        (a, a_tan.clamp(INDUCTION_MIN, INDUCTION_MAX))
    }

    fn solution(&self, a: f64, a_tan: f64, converged: bool, method: StationMethod, iterations: usize) -> StationSolution {
        let l = self.loads(a, a_tan);
        StationSolution { a, a_tan, phi: l.phi, cl: l.cl, dkt: l.dkt, dkq: l.dkq, converged, method, iterations }
    }

    fn fixed_point(&self) -> std::result::Result<StationSolution, (f64, f64)> {
        let (mut a, mut a_tan) = (0.0, 0.0);
        for it in 0..MAX_ITERATIONS {
            let l = self.loads(a, a_tan);
            let (a_new, a_tan_new) = self.momentum_inverse(&l);
            if !(a_new.is_finite() && a_tan_new.is_finite()) {
                break;
            }
            let delta = (a_new - a).abs().max((a_tan_new - a_tan).abs());
            if delta < TOLERANCE {
                return Ok(self.solution(a, a_tan, true, StationMethod::FixedPoint, it));
            }
            a += RELAXATION * (a_new - a);
            a_tan += RELAXATION * (a_tan_new - a_tan);
        }
        Err((a, a_tan))
    }

    /// Inductions implied by an inflow angle through the combined
    /// blade-element/momentum relations.
    fn inductions_at(&self, phi: f64) -> (f64, f64) {
        let cl = self.lift(phi);
        let (s, c) = phi.sin_cos();
        let f = self.tip_loss(phi);
        let sigma = self.blades * self.chord_ratio / (PI * self.r);
        let kn = sigma * (cl * c - SECTION_DRAG * s) / (4.0 * f * s * s);
        let kt = sigma * (cl * s + SECTION_DRAG * c) / (4.0 * f * s * c);
        let a = if kn < 1.0 { kn / (1.0 - kn) } else { f64::INFINITY };
        let a_tan = if kt > -1.0 { kt / (1.0 + kt) } else { f64::NEG_INFINITY };
        (a.clamp(INDUCTION_MIN, INDUCTION_MAX), a_tan.clamp(INDUCTION_MIN, INDUCTION_MAX))
    }

    fn residual(&self, phi: f64) -> f64 {
        let (a, a_tan) = self.inductions_at(phi);
        phi.tan() - self.j * (1.0 + a) / (PI * self.r * (1.0 - a_tan))
    }

    /// Illinois false position on the inflow-angle residual. The residual is
    /// continuous and changes sign over (0, pi/2), so a root is always
    /// bracketed.
    fn bracketed(&self) -> Option<StationSolution> {
        let (mut lo, mut hi) = (MIN_SIN_PHI, 0.5 * PI - MIN_SIN_PHI);
        let (mut f_lo, mut f_hi) = (self.residual(lo), self.residual(hi));
        if !(f_lo.is_finite() && f_hi.is_finite()) || f_lo.signum() == f_hi.signum() {
            return None;
        }
        let mut side = 0i8;
        let mut iterations = 0;
        while iterations < 300 && hi - lo > 1e-13 {
            iterations += 1;
            let mid = (lo * f_hi - hi * f_lo) / (f_hi - f_lo);
            let mid = if mid > lo && mid < hi { mid } else { 0.5 * (lo + hi) };
            let f_mid = self.residual(mid);
            if f_mid == 0.0 {
                lo = mid;
                hi = mid;
                break;
            }
            if f_mid.signum() == f_lo.signum() {
                lo = mid;
                f_lo = f_mid;
                if side == -1 {
                    f_hi *= 0.5;
                }
                side = -1;
            } else {
                hi = mid;
                f_hi = f_mid;
                if side == 1 {
                    f_lo *= 0.5;
                }
                side = 1;
            }
        }
        let phi = 0.5 * (lo + hi);
        let (a, a_tan) = self.inductions_at(phi);
        Some(self.solution(a, a_tan, hi - lo <= 1e-13, StationMethod::Bracketed, iterations))
    }
}

/// Solves the blade-element/momentum balance of one section at advance ratio
/// `j`. Non-convergence is reported through `converged`, never as an error.
pub fn solve_station(section: &SectionSpec, j: f64, n_blades: u8) -> Result<StationSolution> {
    if !(j > 0.0) || !j.is_finite() {
        return Err(Error::domain("j", format!("advance ratio must be positive, got {j}")));
    }
    if !(section.chord_ratio >= 0.0) || !(section.r_norm > 0.0 && section.r_norm <= 1.0) {
        return Err(Error::domain("section", "invalid section geometry"));
    }
    let st = Station {
        r: section.r_norm,
        pitch_ratio: section.pitch_ratio,
        chord_ratio: section.chord_ratio,
        camber_ratio: section.camber_ratio,
        j,
        blades: n_blades as f64,
    };
    Ok(match st.fixed_point() {
        Ok(sol) => sol,
        Err((a, a_tan)) => st.bracketed().unwrap_or_else(|| st.solution(a, a_tan, false, StationMethod::FixedPoint, MAX_ITERATIONS)),
    })
}

/// Convergence summary of the stations at one operating point.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct PointStatus {
    pub bracketed_stations: u8,
    pub unconverged_stations: u8,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OpenWaterCurve {
    pub grid: OperatingGrid,
    pub kt: Vec<f64>,
    pub kq: Vec<f64>,
    pub station_flags: Vec<PointStatus>,
}

pub const CURVE_CSV_HEADER: &str = "J,kT,kQ,eta";

impl OpenWaterCurve {
    /// Efficiency at each grid point; `None` where kQ is not positive.
    pub fn eta(&self) -> Vec<Option<f64>> {
        self.grid.advance_ratios().iter().zip(self.kt.iter().zip(&self.kq)).map(|(&j, (&kt, &kq))| efficiency(j, kt, kq).ok()).collect()
    }

    pub fn all_converged(&self) -> bool {
        self.station_flags.iter().all(|f| f.unconverged_stations == 0)
    }

    /// `J,kT,kQ,eta` table; the eta field is empty where kQ <= 0.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(CURVE_CSV_HEADER);
        out.push('\n');
        for (k, eta) in self.eta().into_iter().enumerate() {
            let eta = eta.map(|e| e.to_string()).unwrap_or_default();
            out.push_str(&format!("{},{},{},{}\n", self.grid.advance_ratios()[k], self.kt[k], self.kq[k], eta));
        }
        out
    }
}

fn trapezoid(x: &[f64], y: &[f64]) -> f64 {
    x.windows(2).zip(y.windows(2)).map(|(xs, ys)| 0.5 * (xs[1] - xs[0]) * (ys[0] + ys[1])).sum()
}

pub fn open_water(g: &BladeGeometry, grid: &OperatingGrid) -> OpenWaterCurve {
    let radii: Vec<f64> = g.sections.iter().map(|s| s.r_norm).collect();
    let mut kt = Vec::with_capacity(grid.len());
    let mut kq = Vec::with_capacity(grid.len());
    let mut station_flags = Vec::with_capacity(grid.len());
    let mut dkt = vec![0.0; radii.len()];
    let mut dkq = vec![0.0; radii.len()];
    for &j in grid.advance_ratios() {
        let mut status = PointStatus::default();
        for (k, s) in g.sections.iter().enumerate() {
            // grid and geometry are validated on construction
            let sol = solve_station(s, j, g.design.n_blades).expect("valid station inputs");
            if sol.method == StationMethod::Bracketed {
                status.bracketed_stations += 1;
            }
            if !sol.converged {
                status.unconverged_stations += 1;
            }
            dkt[k] = sol.dkt;
            dkq[k] = sol.dkq;
        }
        kt.push(trapezoid(&radii, &dkt));
        kq.push(trapezoid(&radii, &dkq));
        station_flags.push(status);
    }
    OpenWaterCurve { grid: grid.clone(), kt, kq, station_flags }
}

/// Performance labels: peak efficiency, the advance ratio where it occurs
/// and the thrust coefficient there.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LabelVector {
    pub eta_star: f64,
    pub j_star: f64,
    pub kt_star: f64,
}

pub const LABEL_COLUMNS: [&str; 3] = ["eta_star", "j_star", "kt_star"];

impl LabelVector {
    pub fn to_array(&self) -> [f64; 3] {
        [self.eta_star, self.j_star, self.kt_star]
    }

    pub fn from_array(x: [f64; 3]) -> Self {
        Self { eta_star: x[0], j_star: x[1], kt_star: x[2] }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.eta_star > 0.0 && self.eta_star < 1.0) {
            return Err(Error::domain("eta_star", format!("{} outside (0, 1)", self.eta_star)));
        }
        if !(self.j_star > 0.0 && self.j_star.is_finite()) {
            return Err(Error::domain("j_star", format!("{} must be positive", self.j_star)));
        }
        if !(self.kt_star > 0.0 && self.kt_star.is_finite()) {
            return Err(Error::domain("kt_star", format!("{} must be positive", self.kt_star)));
        }
        Ok(())
    }
}

/// Requested labels; `None` leaves a label free.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TargetSpec {
    #[serde(default)]
    pub eta_star: Option<f64>,
    #[serde(default)]
    pub j_star: Option<f64>,
    #[serde(default)]
    pub kt_star: Option<f64>,
}

impl TargetSpec {
    pub fn full(l: &LabelVector) -> Self {
        Self { eta_star: Some(l.eta_star), j_star: Some(l.j_star), kt_star: Some(l.kt_star) }
    }

    pub fn to_array(&self) -> [Option<f64>; 3] {
        [self.eta_star, self.j_star, self.kt_star]
    }

    pub fn from_array(x: [Option<f64>; 3]) -> Self {
        Self { eta_star: x[0], j_star: x[1], kt_star: x[2] }
    }

    pub fn n_targeted(&self) -> usize {
        self.to_array().iter().flatten().count()
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_targeted() == 0 {
            return Err(Error::domain("targets", "at least one of eta_star, j_star, kt_star must be set"));
        }
        for (name, v) in LABEL_COLUMNS.iter().zip(self.to_array()) {
            if let Some(v) = v {
                if !(v.is_finite() && v > 0.0) {
                    return Err(Error::domain(*name, format!("{v} must be a positive number")));
                }
            }
        }
        Ok(())
    }
}

/// Why a curve yields no labels. The sample is dropped, not treated as a
/// failure.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "reason", rename_all = "snake_case")]
pub enum InvalidLabels {
    NoPositiveThrust,
    BoundaryOptimum { j: f64 },
}

impl std::fmt::Display for InvalidLabels {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            InvalidLabels::NoPositiveThrust => write!(f, "no advance ratio with positive thrust and torque"),
            InvalidLabels::BoundaryOptimum { j } => {
                write!(f, "efficiency peak at J={j:.3} lies on the edge of the positive-thrust range")
            }
        }
    }
}

/// Piecewise-linear interpolant on a strictly increasing grid; evaluates
/// increasing query points with a moving cursor.
fn interpolate_sorted(xs: &[f64], ys: &[f64], queries: &[f64]) -> Vec<f64> {
    let mut k = 0;
    queries
        .iter()
        .map(|&q| {
            while k + 2 < xs.len() && q > xs[k + 1] {
                k += 1;
            }
            let t = (q - xs[k]) / (xs[k + 1] - xs[k]);
            ys[k] + t * (ys[k + 1] - ys[k])
        })
        .collect()
}

/// Locates the efficiency peak of the piecewise-linear kT(J), kQ(J) on a fine
/// mesh over the part of the grid where both are positive.
pub fn extract_labels(curve: &OpenWaterCurve) -> std::result::Result<LabelVector, InvalidLabels> {
    let xs = curve.grid.advance_ratios();
    let (j0, j1) = (curve.grid.first(), curve.grid.last());
    let n = ((j1 - j0) / LABEL_MESH_STEP).round() as usize;
    let mesh: Vec<f64> = (0..=n).map(|k| (j0 + LABEL_MESH_STEP * k as f64).min(j1)).collect();
    let kt = interpolate_sorted(xs, &curve.kt, &mesh);
    let kq = interpolate_sorted(xs, &curve.kq, &mesh);

    let positive: Vec<bool> = kt.iter().zip(&kq).map(|(t, q)| *t > 0.0 && *q > 0.0).collect();
    let mut best: Option<(usize, f64)> = None;
    for k in 0..mesh.len() {
        if positive[k] {
            let eta = mesh[k] * kt[k] / (2.0 * PI * kq[k]);
            if best.is_none_or(|(_, e)| eta > e) {
                best = Some((k, eta));
            }
        }
    }
    let Some((k, eta)) = best else {
        return Err(InvalidLabels::NoPositiveThrust);
    };
    let run_start = (0..=k).rev().take_while(|&i| positive[i]).last().unwrap_or(k);
    let run_end = (k..mesh.len()).take_while(|&i| positive[i]).last().unwrap_or(k);
    if k == run_start || k == run_end {
        return Err(InvalidLabels::BoundaryOptimum { j: mesh[k] });
    }
    Ok(LabelVector { eta_star: eta, j_star: mesh[k], kt_star: kt[k] })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Simulation {
    pub curve: OpenWaterCurve,
    pub labels: std::result::Result<LabelVector, InvalidLabels>,
}

/// Geometry, open-water curve and labels of one design.
pub fn simulate(p: &DesignVector, grid: &OperatingGrid) -> Result<Simulation> {
    let g = build_blade(p)?;
    let curve = open_water(&g, grid);
    let labels = extract_labels(&curve);
    Ok(Simulation { curve, labels })
}

/// Labels for many designs; `Err` entries are invalid samples.
pub fn simulate_labels(
    designs: &[DesignVector],
    grid: &OperatingGrid,
    exec: Execution,
) -> Result<Vec<std::result::Result<LabelVector, InvalidLabels>>> {
    par::map(designs, exec, |_, p| simulate(p, grid).map(|s| s.labels)).into_iter().collect()
}

#[doc(hidden)]
pub fn station_radii() -> &'static [f64] {
    &STATION_RADII
}

#[cfg(test)]
mod tests {
    use super::*;

    fn section(r: f64, pitch: f64, chord: f64, camber: f64) -> SectionSpec {
        SectionSpec { r_norm: r, pitch_ratio: pitch, chord_ratio: chord, camber_ratio: camber, thickness_ratio: 0.01 }
    }

    fn curve_from(f_kt: impl Fn(f64) -> f64, f_kq: impl Fn(f64) -> f64) -> OpenWaterCurve {
        let grid = OperatingGrid::default();
        let kt = grid.advance_ratios().iter().map(|&j| f_kt(j)).collect();
        let kq = grid.advance_ratios().iter().map(|&j| f_kq(j)).collect();
        OpenWaterCurve { station_flags: vec![PointStatus::default(); grid.len()], grid, kt, kq }
    }

    #[test]
    fn default_grid() {
        let g = OperatingGrid::default();
        assert_eq!(g.len(), 28);
        assert_eq!(g.first(), 0.25);
        assert_eq!(g.last(), 1.6);
        let u = OperatingGrid::uniform(0.25, 1.6, 0.05).unwrap();
        assert_eq!(u.len(), 28);
        for (a, b) in g.advance_ratios().iter().zip(u.advance_ratios()) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!(OperatingGrid::new(vec![0.2, 0.1, 0.3]).is_err());
        assert!(OperatingGrid::new(vec![0.0, 0.1, 0.3]).is_err());
    }

    #[test]
    fn efficiency_examples() {
        assert!((efficiency(1.0, 0.2, 0.04).unwrap() - 0.795_774_7).abs() < 1e-6);
        assert_eq!(efficiency(0.0, 0.2, 0.04).unwrap(), 0.0);
        assert!((efficiency(1.214, 0.141, 0.03481).unwrap() - 0.7827).abs() < 1e-3);
        assert!(efficiency(1.0, 0.2, 0.0).is_err());
        assert!(efficiency(1.0, 0.2, -0.1).is_err());
    }

    #[test]
    fn bladeless_section_carries_no_load() {
        let s = solve_station(&section(0.6, 1.0, 0.0, 0.02), 0.7, 4).unwrap();
        assert_eq!((s.dkt, s.dkq, s.a, s.a_tan), (0.0, 0.0, 0.0, 0.0));
        assert!(s.converged);
    }

    #[test]
    fn zero_incidence_uncambered_section_only_drags() {
        // Geometric angle equal to the undisturbed inflow angle (P/D = J) and
        // a lightly loaded section: the converged incidence is ~0, so the
        // lift vanishes and drag makes the thrust density negative.
        let (r, j) = (0.6, 0.8);
        let s = solve_station(&section(r, j, 1e-3, 0.0), j, 3).unwrap();
        assert!(s.converged);
        let alpha = (j / (PI * r)).atan() - s.phi;
        assert!(alpha.abs() < 1e-4, "alpha = {alpha}");
        assert!((s.cl - 2.0 * PI * alpha).abs() < 1e-12);
        assert!(s.dkt < 0.0);
        assert!(s.dkq > 0.0);
    }

    #[test]
    fn reference_station_matches_bisection_reference() {
        // Frozen from tests/oracles/bem_reference.py (bisection on phi).
        let s = solve_station(&section(0.7, 1.0, 0.2, 0.02), 0.8, 4).unwrap();
        assert!(s.converged);
        assert_eq!(s.method, StationMethod::FixedPoint);
        assert!((s.a - 1.871936842117e-01).abs() < 5e-6, "a = {}", s.a);
        assert!((s.a_tan - 3.264831370692e-02).abs() < 5e-6, "a' = {}", s.a_tan);
        assert!((s.phi - 4.199033373632e-01).abs() < 5e-6);
        assert!((s.dkt - 2.883980689820e-01).abs() / 2.883980689820e-01 < 1e-5);
        assert!((s.dkq - 4.839359450482e-02).abs() / 4.839359450482e-02 < 1e-5);
    }

    #[test]
    fn both_station_routes_agree_where_fixed_point_converges() {
        for (r, j, nb) in [(0.4, 0.5, 3u8), (0.7, 0.8, 4), (0.9, 1.1, 5), (0.6, 0.3, 2)] {
            let st = Station { r, pitch_ratio: 1.1, chord_ratio: 0.25, camber_ratio: 0.02, j, blades: nb as f64 };
            let fp = st.fixed_point().expect("fixed point converges");
            let br = st.bracketed().unwrap();
            assert!((fp.a - br.a).abs() < 1e-5, "{r} {j}: {} vs {}", fp.a, br.a);
            assert!((fp.dkt - br.dkt).abs() < 1e-5 * fp.dkt.abs().max(1.0));
        }
    }

    #[test]
    fn tip_station_falls_back_and_stays_in_bounds() {
        let s = solve_station(&section(1.0, 1.0, 0.02, 0.0), 0.8, 4).unwrap();
        assert_eq!(s.method, StationMethod::Bracketed);
        assert!(s.converged);
        assert!(s.a > -0.5 && s.a < 1.0);
        assert!(s.phi > 0.0 && s.phi < 0.5 * PI);
    }

    #[test]
    fn rejects_non_positive_advance_ratio() {
        assert!(solve_station(&section(0.7, 1.0, 0.2, 0.02), 0.0, 4).is_err());
    }

    #[test]
    fn rational_curve_labels() {
        // eta' = 0 at the root of 0.004 J^2 - 0.020 J + 0.015.
        let j_exact = (0.02 - (0.02f64 * 0.02 - 4.0 * 0.004 * 0.015).sqrt()) / (2.0 * 0.004);
        let kt = |j: f64| 0.3 - 0.2 * j;
        let kq = |j: f64| 0.05 - 0.02 * j;
        let eta_exact = j_exact * kt(j_exact) / (2.0 * PI * kq(j_exact));
        let l = extract_labels(&curve_from(kt, kq)).unwrap();
        assert!((j_exact - 0.9189).abs() < 1e-4);
        assert!((l.j_star - 0.9189).abs() <= 1e-3);
        assert!((l.kt_star - 0.1162).abs() <= 5e-4);
        assert!((l.eta_star - 0.5375).abs() <= 1e-3);
        assert!((l.eta_star - eta_exact).abs() < 1e-6);
    }

    #[test]
    fn monotone_efficiency_is_invalid() {
        let l = extract_labels(&curve_from(|_| 0.1, |_| 0.02));
        assert!(matches!(l, Err(InvalidLabels::BoundaryOptimum { j }) if j == 1.6));
    }

    #[test]
    fn no_thrust_is_invalid() {
        let l = extract_labels(&curve_from(|j| -0.1 * j, |_| 0.02));
        assert_eq!(l, Err(InvalidLabels::NoPositiveThrust));
    }

    #[test]
    fn curve_csv() {
        let c = curve_from(|j| 0.3 - 0.2 * j, |j| 0.05 - 0.02 * j);
        let csv = c.to_csv();
        let mut lines = csv.lines();
        assert_eq!(lines.next(), Some(CURVE_CSV_HEADER));
        assert_eq!(lines.count(), 28);
    }

    #[test]
    fn open_water_of_a_typical_design() {
        let p = DesignVector::new(4, 1.0, 0.7, 0.8, 0.6, 0.02).unwrap();
        let sim = simulate(&p, &OperatingGrid::default()).unwrap();
        assert_eq!(sim.curve.kt.len(), 28);
        assert_eq!(sim.curve.kq.len(), 28);
        assert!(sim.curve.all_converged());
        let l = sim.labels.unwrap();
        l.validate().unwrap();
        for (kt, kq) in sim.curve.kt.iter().zip(&sim.curve.kq) {
            if *kt > 0.0 {
                assert!(*kq > 0.0);
            }
        }
    }

    #[test]
    fn doubling_chord_raises_low_speed_thrust() {
        let p = DesignVector::new(4, 1.0, 0.7, 0.6, 0.6, 0.02).unwrap();
        let g = build_blade(&p).unwrap();
        let mut wide = g.clone();
        for s in &mut wide.sections {
            s.chord_ratio *= 2.0;
        }
        let grid = OperatingGrid::default();
        let a = open_water(&g, &grid);
        let b = open_water(&wide, &grid);
        assert!(b.kt[0] > a.kt[0]);
        assert!(b.kt[5] > a.kt[5]);
    }
}
