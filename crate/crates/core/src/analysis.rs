//! Binary-reduction landscape analysis.
//!
//! Restricting a loss to two classes with `y_pred = (p, 1 − p)` and
//! `y_real = (r, 1 − r)` leaves a function of one variable per label. The
//! shape of that curve for `r = 1` tells whether a loss keeps rewarding
//! confidence (monotone decrease) or penalises it near certainty (interior
//! minimum).

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::expr::EvalPoint;
use crate::losses::{LossError, LossFn};

pub const DEFAULT_GRID_STEP: f64 = 1e-3;
/// Discrete differences smaller than this count as flat.
pub const MONOTONE_TOLERANCE: f64 = 1e-9;
/// Width of the final golden-section bracket.
pub const REFINE_TOLERANCE: f64 = 1e-6;
/// `value(1) > min + INCREASE_MARGIN` sets the increase-near-1 flag.
pub const INCREASE_MARGIN: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error("grid step {0} outside (0, 0.5]")]
    BadStep(f64),
    #[error("binary label must be 0 or 1, got {0}")]
    BadLabel(u8),
    #[error("loss failed at y_pred0 = {p}: {source}")]
    Eval {
        p: f64,
        #[source]
        source: LossError,
    },
    #[error("curve needs at least 3 points, has {0}")]
    TooShort(usize),
}

/// The two-class restriction of a loss.
#[derive(Clone, Copy)]
pub struct BinaryReduction<'a> {
    loss: &'a LossFn,
}

pub fn binary_reduce(loss: &LossFn) -> BinaryReduction<'_> {
    BinaryReduction { loss }
}

impl BinaryReduction<'_> {
    fn point(p: f64, r: u8) -> Result<EvalPoint, AnalysisError> {
        EvalPoint::binary(p, r).map_err(|e| match r {
            0 | 1 => AnalysisError::Eval { p, source: e.into() },
            _ => AnalysisError::BadLabel(r),
        })
    }

    /// `g(p, r)`.
    pub fn value(&self, p: f64, r: u8) -> Result<f64, AnalysisError> {
        let point = Self::point(p, r)?;
        self.loss.value(&point).map_err(|source| AnalysisError::Eval { p, source })
    }

    /// `dg/dp = ∂L/∂y_pred[0] − ∂L/∂y_pred[1]`.
    pub fn derivative(&self, p: f64, r: u8) -> Result<f64, AnalysisError> {
        let point = Self::point(p, r)?;
        let g = self.loss.grad(&point).map_err(|source| AnalysisError::Eval { p, source })?;
        Ok(g[0] - g[1])
    }
}

/// Loss values and analytic slopes over an increasing grid on `[0, 1]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LandscapeCurve {
    pub y_real_fixed: u8,
    pub grid: Vec<f64>,
    pub values: Vec<f64>,
    pub gradient_values: Vec<f64>,
}

pub fn sample_landscape(
    loss: &LossFn,
    y_real_fixed: u8,
    grid_step: f64,
) -> Result<LandscapeCurve, AnalysisError> {
    if !(grid_step > 0.0 && grid_step <= 0.5) {
        return Err(AnalysisError::BadStep(grid_step));
    }
    if y_real_fixed > 1 {
        return Err(AnalysisError::BadLabel(y_real_fixed));
    }
    let intervals = (1.0 / grid_step).round().max(1.0) as usize;
    let grid: Vec<f64> = (0..=intervals).map(|i| i as f64 / intervals as f64).collect();
    let reduced = binary_reduce(loss);
    let mut values = Vec::with_capacity(grid.len());
    let mut gradient_values = Vec::with_capacity(grid.len());
    for &p in &grid {
        values.push(reduced.value(p, y_real_fixed)?);
        gradient_values.push(reduced.derivative(p, y_real_fixed)?);
    }
    Ok(LandscapeCurve { y_real_fixed, grid, values, gradient_values })
}

impl LandscapeCurve {
    /// CSV with header `y_pred0,value,gradient`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("y_pred0,value,gradient\n");
        for ((p, v), g) in self.grid.iter().zip(&self.values).zip(&self.gradient_values) {
            let _ = writeln!(out, "{p},{v},{g}");
        }
        out
    }

    /// Cubic Hermite interpolant on segment `i` (between grid `i` and `i+1`).
    fn hermite(&self, i: usize, x: f64) -> f64 {
        let (x0, x1) = (self.grid[i], self.grid[i + 1]);
        let h = x1 - x0;
        let t = (x - x0) / h;
        let (t2, t3) = (t * t, t * t * t);
        let h00 = 2.0 * t3 - 3.0 * t2 + 1.0;
        let h10 = t3 - 2.0 * t2 + t;
        let h01 = -2.0 * t3 + 3.0 * t2;
        let h11 = t3 - t2;
        h00 * self.values[i]
            + h10 * h * self.gradient_values[i]
            + h01 * self.values[i + 1]
            + h11 * h * self.gradient_values[i + 1]
    }

    fn interpolate(&self, x: f64) -> f64 {
        let seg = self.grid.partition_point(|&g| g <= x).saturating_sub(1);
        let seg = seg.min(self.grid.len() - 2);
        self.hermite(seg, x)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Shape {
    MonotoneDecreasing,
    MonotoneIncreasing,
    InteriorMinimum,
    Other,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LandscapeReport {
    pub y_real_fixed: u8,
    pub argmin: f64,
    pub min_value: f64,
    /// Grid point with the smallest sampled value.
    pub grid_argmin: f64,
    pub shape: Shape,
    pub increase_near_1: bool,
}

/// Sign pattern of discrete differences, flat steps dropped.
pub fn classify(values: &[f64]) -> Shape {
    let signs: Vec<i8> = values
        .windows(2)
        .filter_map(|w| {
            let d = w[1] - w[0];
            if d > MONOTONE_TOLERANCE {
                Some(1)
            } else if d < -MONOTONE_TOLERANCE {
                Some(-1)
            } else {
                None
            }
        })
        .collect();
    if signs.is_empty() {
        return Shape::Other;
    }
    let changes: Vec<(i8, i8)> =
        signs.windows(2).filter(|w| w[0] != w[1]).map(|w| (w[0], w[1])).collect();
    match (signs[0], changes.as_slice()) {
        (-1, []) => Shape::MonotoneDecreasing,
        (1, []) => Shape::MonotoneIncreasing,
        (-1, [(-1, 1)]) => Shape::InteriorMinimum,
        _ => Shape::Other,
    }
}

fn golden_section(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64, tol: f64) -> f64 {
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    while (b - a).abs() > tol {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(d);
        }
    }
    (a + b) / 2.0
}

pub fn analyze(curve: &LandscapeCurve) -> Result<LandscapeReport, AnalysisError> {
    let n = curve.grid.len();
    if n < 3 || curve.values.len() != n || curve.gradient_values.len() != n {
        return Err(AnalysisError::TooShort(n.min(curve.values.len())));
    }
    let (imin, &vmin) = curve
        .values
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .expect("non-empty");
    let lo = curve.grid[imin.saturating_sub(1)];
    let hi = curve.grid[(imin + 1).min(n - 1)];
    let refined = golden_section(|x| curve.interpolate(x), lo, hi, REFINE_TOLERANCE);
    let refined_value = curve.interpolate(refined);
    let (argmin, min_value) = if refined_value <= vmin {
        (refined, refined_value)
    } else {
        (curve.grid[imin], vmin)
    };
    let last = curve.values[n - 1];
    Ok(LandscapeReport {
        y_real_fixed: curve.y_real_fixed,
        argmin,
        min_value,
        grid_argmin: curve.grid[imin],
        shape: classify(&curve.values),
        increase_near_1: last > min_value + INCREASE_MARGIN,
    })
}
