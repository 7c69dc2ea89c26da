//! Stable/failed labeling via undrained (φ=0) circular-arc limit equilibrium.
//!
//! The slope body is a rectangle of depth `total_depth` with a 45° face cut
//! as a staircase of `step_h`-tall grid-aligned steps inscribed in the nominal
//! face line. For a trial circle, moment equilibrium about the circle center
//! gives
//!
//! ```text
//! fos = κ · R · Σᵢ C_u(arc segment i) · Δlᵢ  /  Σⱼ γ · areaⱼ · x̄ⱼ
//! ```
//!
//! with the arc discretized into segments of at most `cell_size/2` and slices
//! of width `cell_size`. Both the per-cell arc lengths and the driving moment
//! depend only on geometry, so a [`SearchPlan`] precomputes them once per
//! search specification; classifying a realization is then a sparse dot
//! product per circle. The calibration constant κ pins the homogeneous
//! anchor strength to fos = 1 exactly, absorbing the method bias of the
//! circular-arc substitute.

use crate::error::{Error, Result};
use crate::randfield::GridSpec;
use crate::Real;
use serde::{Deserialize, Serialize};

/// Binary stability outcome. `Failed` is the positive class throughout.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum StabilityLabel {
    Stable,
    Failed,
}

impl StabilityLabel {
    pub fn as_byte(self) -> u8 {
        match self {
            StabilityLabel::Stable => 0,
            StabilityLabel::Failed => 1,
        }
    }

    pub fn from_byte(b: u8) -> Result<Self> {
        match b {
            0 => Ok(StabilityLabel::Stable),
            1 => Ok(StabilityLabel::Failed),
            other => Err(Error::data(format!("invalid label byte {other}"))),
        }
    }

    pub fn is_failed(self) -> bool {
        self == StabilityLabel::Failed
    }
}

/// Slope body dimensions. Defaults reproduce the standard 45°/5 m slope over
/// a 10 m-deep stratum with 800 half-metre cells.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SlopeGeometry {
    /// Face inclination in degrees.
    pub slope_angle_deg: Real,
    /// Height of the cut face (m).
    pub slope_height: Real,
    /// Stratum depth from crest level to the rigid base (m).
    pub total_depth: Real,
    /// Horizontal extent of the model (m).
    pub domain_width: Real,
    /// x of the nominal crest edge (m).
    pub crest_x: Real,
    /// Saturated unit weight (kN/m³).
    pub unit_weight: Real,
    /// Strength cell side (m).
    pub cell_size: Real,
}

impl Default for SlopeGeometry {
    fn default() -> Self {
        SlopeGeometry {
            slope_angle_deg: 45.0,
            slope_height: 5.0,
            total_depth: 10.0,
            domain_width: 25.0,
            crest_x: 13.0,
            unit_weight: 20.0,
            cell_size: 0.5,
        }
    }
}

impl SlopeGeometry {
    /// Elevation of the ground below the toe.
    pub fn toe_level(&self) -> Real {
        self.total_depth - self.slope_height
    }

    /// x of the nominal toe on the inscribed face line.
    pub fn toe_x(&self) -> Real {
        self.crest_x + self.slope_height / self.slope_angle_deg.to_radians().tan()
    }
}

/// Geometry plus the derived strength grid and cell lookup tables.
#[derive(Debug, Clone)]
pub struct SlopeModel {
    pub geometry: SlopeGeometry,
    pub grid: GridSpec<Real>,
    step_h: Real,
    step_w: Real,
    n_cols: usize,
    /// Soil cells per row (rows from the top); soil is contiguous from x = 0.
    row_counts: Vec<usize>,
    row_offsets: Vec<usize>,
}

impl SlopeModel {
    /// Builds the model, rasterizing the face as a staircase of steps of
    /// height ~1 m aligned with the cell grid.
    pub fn new(geometry: SlopeGeometry) -> Result<Self> {
        let g = &geometry;
        if g.slope_height <= 0.0
            || g.total_depth <= 0.0
            || g.domain_width <= 0.0
            || g.cell_size <= 0.0
            || g.unit_weight <= 0.0
        {
            return Err(Error::domain("geometry dimensions must be positive"));
        }
        if g.total_depth < g.slope_height {
            return Err(Error::domain("total_depth must be at least slope_height"));
        }
        if !(0.0..180.0).contains(&g.slope_angle_deg) || g.slope_angle_deg <= 0.0 {
            return Err(Error::domain("slope angle must be in (0, 180) degrees"));
        }
        let n_steps = (g.slope_height.round() as usize).max(1);
        let step_h = g.slope_height / n_steps as Real;
        let step_w = step_h / g.slope_angle_deg.to_radians().tan();
        if g.crest_x < 0.0 || g.crest_x + n_steps as Real * step_w >= g.domain_width {
            return Err(Error::domain(
                "face must lie inside the domain with a toe flat",
            ));
        }

        let cs = g.cell_size;
        let n_rows = (g.total_depth / cs).round() as usize;
        let n_cols = (g.domain_width / cs).round() as usize;
        let mut partial = Self {
            geometry,
            grid: GridSpec {
                cell_size: cs,
                cell_centers: Vec::new(),
            },
            step_h,
            step_w,
            n_cols,
            row_counts: Vec::new(),
            row_offsets: Vec::new(),
        };
        let mut centers = Vec::new();
        let mut offset = 0usize;
        for r in 0..n_rows {
            let y = partial.geometry.total_depth - (r as Real + 0.5) * cs;
            let mut count = 0usize;
            for c in 0..n_cols {
                let x = (c as Real + 0.5) * cs;
                if y <= partial.surface_y(x) {
                    centers.push((x, y));
                    count += 1;
                } else {
                    break; // soil is contiguous from the left in every row
                }
            }
            partial.row_offsets.push(offset);
            partial.row_counts.push(count);
            offset += count;
        }
        if centers.is_empty() {
            return Err(Error::domain("geometry produces zero interior cells"));
        }
        partial.grid.cell_centers = centers;
        Ok(partial)
    }

    pub fn n_cells(&self) -> usize {
        self.grid.n_cells()
    }

    /// Ground surface elevation at x. Between the crest and toe the surface is
    /// the grid-aligned staircase inscribed in the nominal face line.
    pub fn surface_y(&self, x: Real) -> Real {
        let g = &self.geometry;
        if x <= g.crest_x {
            return g.total_depth;
        }
        let band = ((x - g.crest_x) / self.step_w).ceil();
        (g.total_depth - band * self.step_h).max(g.toe_level())
    }

    pub fn in_soil(&self, x: Real, y: Real) -> bool {
        x >= 0.0 && x <= self.geometry.domain_width && y >= 0.0 && y <= self.surface_y(x)
    }

    /// Index of the cell containing (x, y), if inside the soil body.
    pub fn cell_at(&self, x: Real, y: Real) -> Option<usize> {
        let g = &self.geometry;
        if x < 0.0 || x >= g.domain_width || y <= 0.0 || y >= g.total_depth {
            return None;
        }
        let row = ((g.total_depth - y) / g.cell_size) as usize;
        let col = (x / g.cell_size) as usize;
        if row >= self.row_counts.len() || col >= self.row_counts[row].min(self.n_cols) {
            return None;
        }
        Some(self.row_offsets[row] + col)
    }
}

/// A candidate circular failure surface.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrialCircle {
    pub center: (Real, Real),
    pub radius: Real,
}

/// Circle-search specification: a rectangular center grid and a radius sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SearchSpec {
    pub x_range: (Real, Real),
    pub y_range: (Real, Real),
    pub center_step: Real,
    pub radius_step: Real,
    /// Homogeneous strength pinned to fos = 1 by the calibration constant.
    pub calibration_strength: Real,
}

impl SearchSpec {
    /// Default sweep: centers on a 0.25 m grid spanning
    /// [crest−2H, toe+2H] × [crest level, crest level+3H], radii at 0.25 m.
    pub fn default_for(geometry: &SlopeGeometry) -> Self {
        Self::with_step(geometry, 0.25)
    }

    /// Same extents with a caller-chosen grid/radius step.
    pub fn with_step(geometry: &SlopeGeometry, step: Real) -> Self {
        let h = geometry.slope_height;
        SearchSpec {
            x_range: (geometry.crest_x - 2.0 * h, geometry.toe_x() + 2.0 * h),
            y_range: (geometry.total_depth, geometry.total_depth + 3.0 * h),
            center_step: step,
            radius_step: step,
            calibration_strength: 18.6,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.center_step <= 0.0 || self.radius_step <= 0.0 {
            return Err(Error::config("search steps must be positive"));
        }
        if self.x_range.1 < self.x_range.0 || self.y_range.1 < self.y_range.0 {
            return Err(Error::config("search ranges must be non-empty"));
        }
        if self.calibration_strength <= 0.0 {
            return Err(Error::config("calibration strength must be positive"));
        }
        Ok(())
    }
}

/// One admissible circle with its precomputed, field-independent integrals.
#[derive(Debug, Clone)]
pub struct CircleEval {
    pub circle: TrialCircle,
    /// radius / driving moment; fos = κ · scale · Σ wᵢ·C_u[i].
    scale: Real,
    /// Arc length per touched cell.
    weights: Vec<(u16, f32)>,
}

impl CircleEval {
    /// Analyzes one trial circle against the geometry. Returns `None` when the
    /// circle is inadmissible: it dips below the rigid base, fails to cut the
    /// surface in exactly one contiguous arc, reaches a restrained side
    /// boundary, or has non-positive driving moment.
    pub fn analyze(model: &SlopeModel, circle: TrialCircle) -> Option<CircleEval> {
        let (cx, cy) = circle.center;
        let r = circle.radius;
        let g = &model.geometry;
        if r <= 0.0 || cy - r < 0.0 {
            return None; // would cross the rigid base
        }
        if cy - r >= g.total_depth {
            return None; // entirely above ground
        }
        let arc_y = |x: Real| cy - (r * r - (x - cx) * (x - cx)).max(0.0).sqrt();
        let below = |x: Real| {
            x > 0.0 && x < g.domain_width && {
                let dx = x - cx;
                dx.abs() < r && arc_y(x) < model.surface_y(x)
            }
        };

        // Locate the below-surface run by scanning, then bisect its edges.
        let h = g.cell_size / 8.0;
        let x_lo = (cx - r).max(0.0);
        let x_hi = (cx + r).min(g.domain_width);
        let n_scan = (((x_hi - x_lo) / h).ceil() as usize).max(2);
        let mut runs: Vec<(usize, usize)> = Vec::new();
        let mut run_start: Option<usize> = None;
        for k in 0..=n_scan {
            let x = x_lo + (x_hi - x_lo) * k as Real / n_scan as Real;
            if below(x) {
                if run_start.is_none() {
                    run_start = Some(k);
                }
            } else if let Some(s) = run_start.take() {
                runs.push((s, k - 1));
            }
        }
        if let Some(s) = run_start {
            runs.push((s, n_scan));
        }
        if runs.len() != 1 {
            return None; // no cut, or more than two surface intersections
        }
        let (s, e) = runs[0];
        if e - s < 2 {
            return None; // degenerate sliver
        }
        let scan_x = |k: usize| x_lo + (x_hi - x_lo) * k as Real / n_scan as Real;
        // reject surfaces daylighting through a restrained side boundary
        let eps = 1e-9 * g.domain_width.max(1.0);
        if (cx - r < 0.0 && below(eps)) || (cx + r > g.domain_width && below(g.domain_width - eps))
        {
            return None;
        }
        let x_in = if s == 0 {
            scan_x(0)
        } else {
            bisect_edge(scan_x(s - 1), scan_x(s), &below)
        };
        let x_out = if e == n_scan {
            scan_x(n_scan)
        } else {
            bisect_edge(scan_x(e + 1), scan_x(e), &below)
        };

        // Resisting side: arc segments of at most cell_size/2, strength read
        // from the cell containing each segment midpoint.
        let ang = |x: Real| {
            let c = ((x - cx) / r).clamp(-1.0, 1.0);
            -c.acos() // lower arc, measured from +x axis; increasing with x
        };
        let a_in = ang(x_in);
        let a_out = ang(x_out);
        let arc_span = r * (a_out - a_in);
        if arc_span <= 0.0 {
            return None;
        }
        let n_seg = ((arc_span / (g.cell_size / 2.0)).ceil() as usize).max(1);
        let da = (a_out - a_in) / n_seg as Real;
        let seg_len = r * da;
        let mut per_cell = vec![0.0f64; model.n_cells()];
        for k in 0..n_seg {
            let a = a_in + (k as Real + 0.5) * da;
            let x = cx + r * a.cos();
            let y = cy + r * a.sin();
            if let Some(cell) = model.cell_at(x, y) {
                per_cell[cell] += seg_len;
            }
        }
        let weights: Vec<(u16, f32)> = per_cell
            .iter()
            .enumerate()
            .filter(|(_, &w)| w > 0.0)
            .map(|(i, &w)| (i as u16, w as f32))
            .collect();
        if weights.is_empty() {
            return None;
        }

        // Driving side: vertical slices of width cell_size aligned to the
        // grid, weight γ·area, signed lever arm from the circle center.
        let mut driving = 0.0;
        let first_slice = (x_in / g.cell_size).floor() as i64;
        let last_slice = (x_out / g.cell_size).ceil() as i64;
        let sub = 8usize;
        for sl in first_slice..last_slice {
            let a = (sl as Real * g.cell_size).max(x_in);
            let b = ((sl + 1) as Real * g.cell_size).min(x_out);
            if b <= a {
                continue;
            }
            let dx = (b - a) / sub as Real;
            let mut area = 0.0;
            for m in 0..sub {
                let x = a + (m as Real + 0.5) * dx;
                let depth = model.surface_y(x) - arc_y(x);
                if depth > 0.0 {
                    area += depth * dx;
                }
            }
            // crest drop is a counterclockwise rotation here, so the mass left
            // of the center drives and the toe-side mass resists
            let lever = cx - (a + b) / 2.0;
            driving += g.unit_weight * area * lever;
        }
        if driving <= 1e-9 {
            return None; // not a failure candidate
        }

        Some(CircleEval {
            circle,
            scale: r / driving,
            weights,
        })
    }

    /// Factor of safety for a strength field, given the calibration constant.
    pub fn fos(&self, values: &[Real], kappa: Real) -> Real {
        let mut resist = 0.0f64;
        for &(cell, w) in &self.weights {
            resist += w as Real * values[cell as usize];
        }
        kappa * self.scale * resist
    }

    /// fos for a homogeneous unit-strength field with κ = 1. Sums the stored
    /// single-precision weights so the calibration matches [`CircleEval::fos`].
    fn unit_fos(&self) -> Real {
        self.scale * self.weights.iter().map(|&(_, w)| w as Real).sum::<Real>()
    }
}

fn bisect_edge(mut outside: Real, mut inside: Real, below: &dyn Fn(Real) -> bool) -> Real {
    for _ in 0..60 {
        let mid = 0.5 * (outside + inside);
        if below(mid) {
            inside = mid;
        } else {
            outside = mid;
        }
    }
    0.5 * (outside + inside)
}

/// The stability verdict for one realization.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StabilityVerdict {
    pub fos_min: Real,
    pub critical_circle: TrialCircle,
    pub label: StabilityLabel,
}

/// All admissible circles of a search specification with their precomputed
/// integrals and the calibration constant. Immutable and shareable across
/// workers; evaluation is pure.
#[derive(Debug, Clone)]
pub struct SearchPlan {
    pub spec: SearchSpec,
    pub kappa: Real,
    circles: Vec<CircleEval>,
}

impl SearchPlan {
    /// Enumerates the admissible circle set in lexicographic
    /// (center_x, center_y, radius) order and calibrates κ so a homogeneous
    /// field at `calibration_strength` has fos exactly 1 under this plan.
    pub fn build(model: &SlopeModel, spec: SearchSpec) -> Result<SearchPlan> {
        Self::build_with_kappa(model, spec, None)
    }

    /// As [`SearchPlan::build`] but with an externally fixed κ (used when
    /// comparing plans of different resolution under one calibration).
    pub fn build_with_kappa(
        model: &SlopeModel,
        spec: SearchSpec,
        kappa: Option<Real>,
    ) -> Result<SearchPlan> {
        spec.validate()?;
        let steps = |lo: Real, hi: Real, step: Real| {
            let n = ((hi - lo) / step).round() as usize;
            (0..=n).map(move |k| lo + k as Real * step)
        };
        let mut circles = Vec::new();
        for cx in steps(spec.x_range.0, spec.x_range.1, spec.center_step) {
            for cy in steps(spec.y_range.0, spec.y_range.1, spec.center_step) {
                // only radii whose arc can dip below crest level and stay
                // above the rigid base
                let r_min_k =
                    (((cy - model.geometry.total_depth) / spec.radius_step).floor() as i64).max(1);
                let r_max_k = (cy / spec.radius_step).floor() as i64;
                for k in r_min_k..=r_max_k {
                    let r = k as Real * spec.radius_step;
                    let circle = TrialCircle {
                        center: (cx, cy),
                        radius: r,
                    };
                    if let Some(eval) = CircleEval::analyze(model, circle) {
                        circles.push(eval);
                    }
                }
            }
        }
        if circles.is_empty() {
            return Err(Error::config(
                "search specification admits no valid trial circles",
            ));
        }
        let kappa = match kappa {
            Some(k) => k,
            None => {
                let unit_min = circles
                    .iter()
                    .map(|c| c.unit_fos())
                    .fold(Real::INFINITY, Real::min);
                let mut k = 1.0 / (spec.calibration_strength * unit_min);
                // polish through the evaluation path itself so the homogeneous
                // anchor field sits at fos >= 1 despite rounding, within ulps
                let anchor = vec![spec.calibration_strength; model.n_cells()];
                let min_fos = |k: Real| {
                    circles
                        .iter()
                        .map(|c| c.fos(&anchor, k))
                        .fold(Real::INFINITY, Real::min)
                };
                for _ in 0..1000 {
                    let m = min_fos(k);
                    if m >= 1.0 {
                        break;
                    }
                    k = (k / m).max(k * (1.0 + Real::EPSILON));
                }
                k
            }
        };
        Ok(SearchPlan {
            spec,
            kappa,
            circles,
        })
    }

    pub fn n_circles(&self) -> usize {
        self.circles.len()
    }

    /// Minimum-fos verdict over the whole circle set. Ties keep the first
    /// circle in lexicographic order, so the result is order-independent.
    pub fn classify(&self, values: &[Real]) -> StabilityVerdict {
        let mut best_fos = Real::INFINITY;
        let mut best = &self.circles[0];
        for c in &self.circles {
            let fos = c.fos(values, self.kappa);
            if fos < best_fos {
                best_fos = fos;
                best = c;
            }
        }
        StabilityVerdict {
            fos_min: best_fos,
            critical_circle: best.circle,
            label: if best_fos >= 1.0 {
                StabilityLabel::Stable
            } else {
                StabilityLabel::Failed
            },
        }
    }
}

/// fos of a single trial circle for a strength field.
pub fn fos_circle(
    model: &SlopeModel,
    circle: TrialCircle,
    values: &[Real],
    kappa: Real,
) -> Result<Real> {
    if values.len() != model.n_cells() {
        return Err(Error::domain(format!(
            "field has {} values, grid has {} cells",
            values.len(),
            model.n_cells()
        )));
    }
    let eval = CircleEval::analyze(model, circle)
        .ok_or_else(|| Error::domain("circle is not an admissible failure candidate"))?;
    Ok(eval.fos(values, kappa))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn model() -> SlopeModel {
        SlopeModel::new(SlopeGeometry::default()).unwrap()
    }

    fn coarse_plan(m: &SlopeModel) -> SearchPlan {
        SearchPlan::build(m, SearchSpec::with_step(&m.geometry, 0.5)).unwrap()
    }

    #[test]
    fn default_geometry_has_800_cells() {
        assert_eq!(model().n_cells(), 800);
    }

    #[test]
    fn coarse_cells_scale_with_area() {
        let geometry = SlopeGeometry {
            cell_size: 1.0,
            ..SlopeGeometry::default()
        };
        assert_eq!(SlopeModel::new(geometry).unwrap().n_cells(), 200);
    }

    #[test]
    fn shallow_stratum_is_rejected() {
        let geometry = SlopeGeometry {
            total_depth: 4.0,
            ..SlopeGeometry::default()
        };
        assert!(SlopeModel::new(geometry).is_err());
    }

    #[test]
    fn surface_profile() {
        let m = model();
        assert_eq!(m.surface_y(5.0), 10.0);
        assert_eq!(m.surface_y(13.0), 10.0);
        assert_eq!(m.surface_y(13.5), 9.0);
        assert_eq!(m.surface_y(16.5), 6.0);
        assert_eq!(m.surface_y(20.0), 5.0);
        assert_eq!(m.surface_y(24.9), 5.0);
    }

    #[test]
    fn cell_lookup_roundtrip() {
        let m = model();
        for (i, &(x, y)) in m.grid.cell_centers.iter().enumerate() {
            assert_eq!(m.cell_at(x, y), Some(i));
        }
        assert_eq!(m.cell_at(24.9, 9.9), None); // air above the toe flat
        assert_eq!(m.cell_at(-0.1, 5.0), None);
    }

    #[test]
    fn homogeneous_anchor_calibrates_to_one() {
        let m = model();
        let plan = coarse_plan(&m);
        let field = vec![18.6; m.n_cells()];
        let v = plan.classify(&field);
        assert_relative_eq!(v.fos_min, 1.0, epsilon = 1e-9);
        assert_eq!(v.label, StabilityLabel::Stable); // fos = 1 exactly: stable
    }

    #[test]
    fn fos_is_linear_in_strength() {
        let m = model();
        let plan = coarse_plan(&m);
        let _v18 = plan.classify(&vec![18.6; m.n_cells()]);
        let v33 = plan.classify(&vec![33.5; m.n_cells()]);
        assert_relative_eq!(v33.fos_min, 33.5 / 18.6, max_relative = 1e-9);
        assert!((v33.fos_min - 1.801).abs() < 2e-3);
        let v9 = plan.classify(&vec![9.3; m.n_cells()]);
        assert_eq!(v9.label, StabilityLabel::Failed);
        assert_relative_eq!(v9.fos_min, 0.5, max_relative = 1e-9);
    }

    #[test]
    fn doubling_strength_doubles_single_circle_fos() {
        let m = model();
        let circle = TrialCircle {
            center: (15.0, 12.0),
            radius: 11.0,
        };
        let f1 = fos_circle(&m, circle, &vec![10.0; m.n_cells()], 1.0).unwrap();
        let f2 = fos_circle(&m, circle, &vec![20.0; m.n_cells()], 1.0).unwrap();
        assert_relative_eq!(f2, 2.0 * f1, max_relative = 1e-12);
    }

    #[test]
    fn single_circle_matches_independent_integration() {
        // Independent fine-step integration of the same moment balance.
        let m = model();
        let circle = TrialCircle {
            center: (15.5, 12.0),
            radius: 10.5,
        };
        let field: Vec<Real> = (0..m.n_cells()).map(|i| 10.0 + (i % 7) as Real).collect();
        let got = fos_circle(&m, circle, &field, 1.0).unwrap();

        let (cx, cy) = circle.center;
        let r = circle.radius;
        let arc_y = |x: Real| cy - (r * r - (x - cx) * (x - cx)).max(0.0).sqrt();
        // locate intersections by fine scan
        let n = 4_000_000usize;
        let mut x_in = Real::NAN;
        let mut x_out = Real::NAN;
        for k in 0..=n {
            let x = (cx - r) + 2.0 * r * k as Real / n as Real;
            if x > 0.0 && x < m.geometry.domain_width && arc_y(x) < m.surface_y(x) {
                if x_in.is_nan() {
                    x_in = x;
                }
                x_out = x;
            }
        }
        let steps = 2_000_000usize;
        let mut resist = 0.0;
        let mut driving = 0.0;
        let a_in = -(((x_in - cx) / r).clamp(-1.0, 1.0)).acos();
        let a_out = -(((x_out - cx) / r).clamp(-1.0, 1.0)).acos();
        for k in 0..steps {
            let a = a_in + (a_out - a_in) * (k as Real + 0.5) / steps as Real;
            let (x, y) = (cx + r * a.cos(), cy + r * a.sin());
            if let Some(cell) = m.cell_at(x, y) {
                resist += field[cell] * r * (a_out - a_in) / steps as Real;
            }
            let xs = x_in + (x_out - x_in) * (k as Real + 0.5) / steps as Real;
            let depth = m.surface_y(xs) - arc_y(xs);
            if depth > 0.0 {
                driving +=
                    m.geometry.unit_weight * depth * (cx - xs) * (x_out - x_in) / steps as Real;
            }
        }
        let want = r * resist / driving;
        assert_relative_eq!(got, want, max_relative = 5e-3);
    }

    #[test]
    fn weak_band_fails() {
        let m = model();
        let plan = coarse_plan(&m);
        let mut field = vec![30.0; m.n_cells()];
        // near-zero strength band across the slope at mid-depth
        for (i, &(_, y)) in m.grid.cell_centers.iter().enumerate() {
            if (6.0..7.0).contains(&y) {
                field[i] = 0.05;
            }
        }
        assert_eq!(plan.classify(&field).label, StabilityLabel::Failed);
    }

    #[test]
    fn raising_one_cell_never_decreases_fos() {
        let m = model();
        let plan = coarse_plan(&m);
        let mut field: Vec<Real> = (0..m.n_cells())
            .map(|i| 15.0 + 6.0 * ((i * 37 % 11) as Real / 11.0))
            .collect();
        let before = plan.classify(&field).fos_min;
        for cell in [0usize, 399, 799] {
            let old = field[cell];
            field[cell] = old + 25.0;
            assert!(plan.classify(&field).fos_min >= before);
            field[cell] = old;
        }
    }

    #[test]
    fn refining_search_never_increases_fos_min() {
        // fixed kappa: the coarse circle set is a subset of the fine one
        let m = model();
        let coarse =
            SearchPlan::build_with_kappa(&m, SearchSpec::with_step(&m.geometry, 1.0), Some(1.0))
                .unwrap();
        let fine =
            SearchPlan::build_with_kappa(&m, SearchSpec::with_step(&m.geometry, 0.5), Some(1.0))
                .unwrap();
        assert!(fine.n_circles() > coarse.n_circles());
        let field: Vec<Real> = (0..m.n_cells())
            .map(|i| 12.0 + 8.0 * ((i * 13 % 17) as Real / 17.0))
            .collect();
        assert!(fine.classify(&field).fos_min <= coarse.classify(&field).fos_min + 1e-12);
    }

    #[test]
    fn empty_search_is_a_configuration_error() {
        let m = model();
        let spec = SearchSpec {
            x_range: (0.0, 0.5),
            y_range: (10.0, 10.5),
            center_step: 0.5,
            radius_step: 0.5,
            calibration_strength: 18.6,
        };
        assert!(matches!(SearchPlan::build(&m, spec), Err(Error::Config(_))));
    }
}
