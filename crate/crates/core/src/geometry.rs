//! Design vector and blade-section geometry.
//!
//! A propeller is described by six design variables. They shape analytic
//! radial distributions of pitch and chord, a tip-tapered camber and a fixed
//! thickness law, evaluated at ten radial stations.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Normalized radii r/R of the blade sections, hub to tip.
pub const STATION_RADII: [f64; 10] = [0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 0.95, 1.0];

pub const HUB_RADIUS: f64 = 0.2;
pub const TIP_RADIUS: f64 = 1.0;

pub const BLADE_COUNTS: [u8; 4] = [2, 3, 4, 5];

/// Column names of the six design dimensions, in vector order.
pub const DESIGN_COLUMNS: [&str; 6] = ["n_blades", "P", "w_rp", "w_c", "w_rc", "camber"];

const MAX_CHORD_RATIO: f64 = 0.35;
const ROOT_CHORD_SHAPE: f64 = 0.6;
const TIP_CHORD_SHAPE: f64 = 0.08;
const PITCH_FALLOFF: f64 = 0.2;
const RADIAL_SPAN: f64 = TIP_RADIUS - HUB_RADIUS;
const CAMBER_TAPER_START: f64 = 0.9;
const ROOT_THICKNESS: f64 = 0.035;
const TIP_THICKNESS: f64 = 0.003;

/// Closed interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    pub lo: f64,
    pub hi: f64,
}

impl Bounds {
    pub const fn new(lo: f64, hi: f64) -> Self {
        Self { lo, hi }
    }

    pub fn contains(&self, x: f64) -> bool {
        x >= self.lo && x <= self.hi
    }

    pub fn clamp(&self, x: f64) -> f64 {
        x.clamp(self.lo, self.hi)
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn is_within(&self, outer: &Bounds) -> bool {
        self.lo >= outer.lo && self.hi <= outer.hi && self.lo < self.hi
    }
}

/// Admissible ranges of the continuous design variables. The default is the
/// full design box; sampling configurations may narrow it but never widen it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DesignSpace {
    #[serde(rename = "P")]
    pub pitch: Bounds,
    pub w_rp: Bounds,
    pub w_c: Bounds,
    pub w_rc: Bounds,
    pub camber: Bounds,
}

impl DesignSpace {
    pub const FULL: DesignSpace = DesignSpace {
        pitch: Bounds::new(0.5, 1.5),
        w_rp: Bounds::new(0.5, 0.9),
        w_c: Bounds::new(0.5, 1.0),
        w_rc: Bounds::new(0.5, 0.8),
        camber: Bounds::new(0.0, 0.05),
    };

    /// Bounds of the five continuous variables in design-vector order.
    pub fn continuous(&self) -> [Bounds; 5] {
        [self.pitch, self.w_rp, self.w_c, self.w_rc, self.camber]
    }

    pub fn validate(&self) -> Result<()> {
        let full = Self::FULL.continuous();
        for ((b, f), name) in self.continuous().iter().zip(full).zip(&DESIGN_COLUMNS[1..]) {
            if !b.is_within(&f) {
                return Err(Error::domain(*name, format!("range [{}, {}] must be a non-empty subset of [{}, {}]", b.lo, b.hi, f.lo, f.hi)));
            }
        }
        Ok(())
    }
}

impl Default for DesignSpace {
    fn default() -> Self {
        Self::FULL
    }
}

/// The six design variables of a propeller.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DesignVector {
    pub n_blades: u8,
    /// Nominal pitch ratio; the peak value of the pitch distribution.
    #[serde(rename = "P")]
    pub pitch: f64,
    /// Radial position of maximum pitch.
    pub w_rp: f64,
    /// Scale of the maximum chord.
    pub w_c: f64,
    /// Radial position of maximum chord.
    pub w_rc: f64,
    /// Camber-to-chord ratio, constant up to the tip taper.
    pub camber: f64,
}

impl DesignVector {
    pub fn new(n_blades: u8, pitch: f64, w_rp: f64, w_c: f64, w_rc: f64, camber: f64) -> Result<Self> {
        let p = Self { n_blades, pitch, w_rp, w_c, w_rc, camber };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !BLADE_COUNTS.contains(&self.n_blades) {
            return Err(Error::domain("n_blades", format!("{} is not one of {{2, 3, 4, 5}}", self.n_blades)));
        }
        let values = [self.pitch, self.w_rp, self.w_c, self.w_rc, self.camber];
        for ((v, b), name) in values.iter().zip(DesignSpace::FULL.continuous()).zip(&DESIGN_COLUMNS[1..]) {
            if !v.is_finite() || !b.contains(*v) {
                return Err(Error::domain(*name, format!("{v} outside [{}, {}]", b.lo, b.hi)));
            }
        }
        Ok(())
    }

    /// Vector form in column order, blade count as a real.
    pub fn to_array(&self) -> [f64; 6] {
        [self.n_blades as f64, self.pitch, self.w_rp, self.w_c, self.w_rc, self.camber]
    }

    /// Inverse of [`to_array`](Self::to_array) for an integral blade count.
    /// Does not validate ranges.
    pub fn from_array(x: [f64; 6]) -> Self {
        Self { n_blades: x[0].round().clamp(0.0, u8::MAX as f64) as u8, pitch: x[1], w_rp: x[2], w_c: x[3], w_rc: x[4], camber: x[5] }
    }
}

impl fmt::Display for DesignVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "(N_b={}, P={:.4}, w_rp={:.4}, w_c={:.4}, w_rc={:.4}, C={:.4})",
            self.n_blades, self.pitch, self.w_rp, self.w_c, self.w_rc, self.camber
        )
    }
}

/// Geometry of one blade section. Ratios are relative to the diameter
/// except camber, which is relative to the chord.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SectionSpec {
    pub r_norm: f64,
    pub pitch_ratio: f64,
    pub chord_ratio: f64,
    pub camber_ratio: f64,
    pub thickness_ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BladeGeometry {
    pub design: DesignVector,
    pub sections: Vec<SectionSpec>,
}

/// Pitch shape: unit peak at `w_rp`, quadratic falloff over the radial span.
pub fn pitch_shape(r_norm: f64, w_rp: f64) -> f64 {
    let x = (r_norm - w_rp) / RADIAL_SPAN;
    1.0 - PITCH_FALLOFF * x * x
}

/// Chord shape: two quadratic branches meeting with zero slope at the unit
/// peak `w_rc`, falling to fixed values at hub and tip.
pub fn chord_shape(r_norm: f64, w_rc: f64) -> f64 {
    let (end, end_value) = if r_norm <= w_rc { (HUB_RADIUS, ROOT_CHORD_SHAPE) } else { (TIP_RADIUS, TIP_CHORD_SHAPE) };
    let x = (r_norm - w_rc) / (end - w_rc);
    1.0 - (1.0 - end_value) * x * x
}

fn camber_ratio(r_norm: f64, camber: f64) -> f64 {
    if r_norm <= CAMBER_TAPER_START {
        camber
    } else {
        camber * (TIP_RADIUS - r_norm) / (TIP_RADIUS - CAMBER_TAPER_START)
    }
}

fn thickness_ratio(r_norm: f64) -> f64 {
    ROOT_THICKNESS + (TIP_THICKNESS - ROOT_THICKNESS) * (r_norm - HUB_RADIUS) / RADIAL_SPAN
}

/// Section geometry of design `p` at normalized radius `r_norm`.
pub fn eval_distributions(p: &DesignVector, r_norm: f64) -> Result<SectionSpec> {
    p.validate()?;
    if !(HUB_RADIUS..=TIP_RADIUS).contains(&r_norm) {
        return Err(Error::domain("r_norm", format!("{r_norm} outside [0.2, 1.0]")));
    }
    Ok(SectionSpec {
        r_norm,
        pitch_ratio: p.pitch * pitch_shape(r_norm, p.w_rp),
        chord_ratio: MAX_CHORD_RATIO * p.w_c * chord_shape(r_norm, p.w_rc),
        camber_ratio: camber_ratio(r_norm, p.camber),
        thickness_ratio: thickness_ratio(r_norm),
    })
}

pub fn build_blade(p: &DesignVector) -> Result<BladeGeometry> {
    let sections = STATION_RADII.iter().map(|&r| eval_distributions(p, r)).collect::<Result<Vec<_>>>()?;
    Ok(BladeGeometry { design: *p, sections })
}

pub const SECTION_CSV_HEADER: &str = "r_norm,pitch_ratio,chord_ratio,camber_ratio,thickness_ratio";

/// Flat per-station table of a blade geometry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SectionTable {
    pub rows: Vec<SectionSpec>,
}

impl SectionTable {
    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    pub const fn n_cols(&self) -> usize {
        5
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::with_capacity(64 * (self.rows.len() + 1));
        out.push_str(SECTION_CSV_HEADER);
        out.push('\n');
        for s in &self.rows {
            out.push_str(&format!("{},{},{},{},{}\n", s.r_norm, s.pitch_ratio, s.chord_ratio, s.camber_ratio, s.thickness_ratio));
        }
        out
    }

    pub fn parse_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, h)) if h.trim() == SECTION_CSV_HEADER => {}
            Some((_, h)) => return Err(Error::Parse { line: 1, message: format!("expected header `{SECTION_CSV_HEADER}`, got `{h}`") }),
            None => return Err(Error::Parse { line: 1, message: "missing header".into() }),
        }
        let mut rows = Vec::new();
        for (i, line) in lines {
            if line.trim().is_empty() {
                continue;
            }
            let line_no = i as u64 + 1;
            let v = line
                .split(',')
                .map(|f| f.trim().parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| Error::Parse { line: line_no, message: e.to_string() })?;
            if v.len() != 5 {
                return Err(Error::Parse { line: line_no, message: format!("expected 5 fields, got {}", v.len()) });
            }
            rows.push(SectionSpec { r_norm: v[0], pitch_ratio: v[1], chord_ratio: v[2], camber_ratio: v[3], thickness_ratio: v[4] });
        }
        Ok(Self { rows })
    }
}

pub fn export_sections(g: &BladeGeometry) -> SectionTable {
    SectionTable { rows: g.sections.clone() }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn design(pitch: f64, w_rp: f64, w_c: f64, w_rc: f64, camber: f64) -> DesignVector {
        DesignVector::new(4, pitch, w_rp, w_c, w_rc, camber).unwrap()
    }

    #[test]
    fn pitch_peaks_at_w_rp() {
        let s = eval_distributions(&design(1.0, 0.7, 0.8, 0.6, 0.02), 0.7).unwrap();
        assert_eq!(s.pitch_ratio, 1.0);
    }

    #[test]
    fn camber_is_constant_then_tapers_to_zero() {
        let p = design(1.0, 0.7, 0.8, 0.6, 0.03);
        assert_eq!(eval_distributions(&p, 0.9).unwrap().camber_ratio, 0.03);
        assert_eq!(eval_distributions(&p, 1.0).unwrap().camber_ratio, 0.0);
        assert!((eval_distributions(&p, 0.95).unwrap().camber_ratio - 0.015).abs() < 1e-15);
    }

    #[test]
    fn root_chord() {
        // 0.35 * w_c * s_c(0.2) with s_c(0.2) = 0.6
        let s = eval_distributions(&design(1.0, 0.7, 0.8, 0.6, 0.0), 0.2).unwrap();
        assert!((s.chord_ratio - 0.168).abs() < 1e-12);
    }

    #[test]
    fn thickness_endpoints() {
        let p = design(1.0, 0.7, 0.8, 0.6, 0.0);
        assert!((eval_distributions(&p, 0.2).unwrap().thickness_ratio - 0.035).abs() < 1e-15);
        assert!((eval_distributions(&p, 1.0).unwrap().thickness_ratio - 0.003).abs() < 1e-15);
    }

    #[test]
    fn domain_errors_name_the_field() {
        let p = design(1.0, 0.7, 0.8, 0.6, 0.0);
        let e = eval_distributions(&p, 0.1).unwrap_err();
        assert!(e.to_string().starts_with("r_norm"), "{e}");
        let mut bad = p;
        bad.w_rc = 0.9;
        let e = eval_distributions(&bad, 0.5).unwrap_err();
        assert!(e.to_string().starts_with("w_rc"), "{e}");
        assert!(DesignVector::new(6, 1.0, 0.7, 0.8, 0.6, 0.0).unwrap_err().to_string().starts_with("n_blades"));
        assert!(DesignVector::new(3, f64::NAN, 0.7, 0.8, 0.6, 0.0).is_err());
    }

    #[test]
    fn blade_has_ten_stations_at_fixed_radii() {
        let g = build_blade(&design(1.2, 0.6, 0.9, 0.7, 0.01)).unwrap();
        let radii: Vec<f64> = g.sections.iter().map(|s| s.r_norm).collect();
        assert_eq!(radii, STATION_RADII.to_vec());
        assert_eq!(g, build_blade(&g.design).unwrap());
    }

    #[test]
    fn lower_bound_design_has_positive_chord_and_pitch() {
        // Smallest values at the bounds: chord 0.35*0.5*0.08 = 0.014 at the
        // tip; pitch 0.5*(1 - 0.2*(0.5/0.8)^2) = 0.4609375 at the tip.
        let g = build_blade(&design(0.5, 0.5, 0.5, 0.5, 0.0)).unwrap();
        let min_chord = g.sections.iter().map(|s| s.chord_ratio).fold(f64::INFINITY, f64::min);
        let min_pitch = g.sections.iter().map(|s| s.pitch_ratio).fold(f64::INFINITY, f64::min);
        assert!((min_chord - 0.014).abs() < 1e-12);
        assert!((min_pitch - 0.4609375).abs() < 1e-12);
    }

    #[test]
    fn csv_contract() {
        let g = build_blade(&design(1.2, 0.6, 0.9, 0.7, 0.01)).unwrap();
        let t = export_sections(&g);
        assert_eq!((t.n_rows(), t.n_cols()), (10, 5));
        let csv = t.to_csv();
        assert_eq!(csv.lines().next().unwrap(), SECTION_CSV_HEADER);
        let back = SectionTable::parse_csv(&csv).unwrap();
        for (a, b) in back.rows.iter().zip(&g.sections) {
            assert!((a.pitch_ratio - b.pitch_ratio).abs() < 1e-12);
            assert!((a.chord_ratio - b.chord_ratio).abs() < 1e-12);
            assert!((a.camber_ratio - b.camber_ratio).abs() < 1e-12);
            assert!((a.thickness_ratio - b.thickness_ratio).abs() < 1e-12);
        }
        assert!(matches!(SectionTable::parse_csv("r,pitch\n0.2,1.0\n"), Err(Error::Parse { line: 1, .. })));
        assert!(matches!(SectionTable::parse_csv(&format!("{SECTION_CSV_HEADER}\n0.2,1.0,x,0,0\n")), Err(Error::Parse { line: 2, .. })));
    }

    #[test]
    fn chord_slope_vanishes_at_peak() {
        for w_rc in [0.5, 0.63, 0.8] {
            assert_eq!(chord_shape(w_rc, w_rc), 1.0);
            assert!((chord_shape(HUB_RADIUS, w_rc) - 0.6).abs() < 1e-15);
            assert!((chord_shape(TIP_RADIUS, w_rc) - 0.08).abs() < 1e-15);
            // The two branches have different curvature, so a difference
            // quotient is O(h); at h = 1e-8 it is below 1e-6.
            let h = 1e-8;
            let central = (chord_shape(w_rc + h, w_rc) - chord_shape(w_rc - h, w_rc)) / (2.0 * h);
            assert!(central.abs() < 1e-6, "{central}");
            let curv_right = (1.0 - TIP_CHORD_SHAPE) / (TIP_RADIUS - w_rc).powi(2);
            let curv_left = (1.0 - ROOT_CHORD_SHAPE) / (w_rc - HUB_RADIUS).powi(2);
            for h in [1e-3, 1e-4, 1e-5] {
                let right = (chord_shape(w_rc + h, w_rc) - 1.0) / h;
                let left = (1.0 - chord_shape(w_rc - h, w_rc)) / h;
                assert!((right + curv_right * h).abs() < 1e-9);
                assert!((left - curv_left * h).abs() < 1e-9);
            }
        }
    }

    fn arb_design() -> impl Strategy<Value = DesignVector> {
        (2u8..=5, 0.5..=1.5f64, 0.5..=0.9f64, 0.5..=1.0f64, 0.5..=0.8f64, 0.0..=0.05f64)
            .prop_map(|(n, p, a, b, c, d)| DesignVector::new(n, p, a, b, c, d).unwrap())
    }

    proptest! {
        #[test]
        fn pitch_is_positive_bounded_and_single_peaked(p in arb_design()) {
            let n = 801;
            let mut sign_changes = Vec::new();
            let mut prev_slope: Option<f64> = None;
            for k in 0..n {
                let r = HUB_RADIUS + RADIAL_SPAN * k as f64 / (n - 1) as f64;
                let s = eval_distributions(&p, r).unwrap();
                prop_assert!(s.pitch_ratio > 0.0 && s.pitch_ratio <= 1.5);
                prop_assert!(s.chord_ratio >= 0.0 && s.camber_ratio >= 0.0);
                let h = 1e-6;
                let slope = pitch_shape(r + h, p.w_rp) - pitch_shape(r - h, p.w_rp);
                if let Some(ps) = prev_slope {
                    if ps > 0.0 && slope <= 0.0 {
                        sign_changes.push(r);
                    }
                    prop_assert!(!(ps < 0.0 && slope > 0.0));
                }
                prev_slope = Some(slope);
            }
            prop_assert!(sign_changes.len() <= 1);
            if let Some(r) = sign_changes.first() {
                prop_assert!((r - p.w_rp).abs() <= RADIAL_SPAN / (n - 1) as f64 + 1e-9);
            }
        }

        #[test]
        fn pitch_increases_with_nominal_pitch(p in arb_design(), dp in 0.01..0.5f64) {
            let mut q = p;
            q.pitch = (p.pitch + dp).min(1.5);
            prop_assume!(q.pitch > p.pitch);
            let a = build_blade(&p).unwrap();
            let b = build_blade(&q).unwrap();
            for (sa, sb) in a.sections.iter().zip(&b.sections) {
                prop_assert!(sb.pitch_ratio > sa.pitch_ratio);
            }
        }

        #[test]
        fn camber_rule(p in arb_design(), r in 0.2..=0.9f64) {
            prop_assert_eq!(eval_distributions(&p, r).unwrap().camber_ratio, p.camber);
            prop_assert_eq!(eval_distributions(&p, 1.0).unwrap().camber_ratio, 0.0);
        }
    }
}
