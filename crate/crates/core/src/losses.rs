//! Built-in classification losses.
//!
//! The five discovered losses `f1`–`f5` (`f5` is NGL) are available both as
//! expression trees and as hand-written closed forms with analytic
//! gradients. Cross entropy, symmetric cross entropy, focal and soft dice
//! serve as baselines. Every loss reduces over classes with the arithmetic
//! mean; [`LossFn::grad`] returns `∂loss/∂y_pred[i]` holding the other
//! components fixed (the softmax coupling is applied by the trainer).

use std::sync::LazyLock;

use thiserror::Error;

use crate::expr::build::*;
use crate::expr::{EvalPoint, ExprError, LossExpr, EPSILON};

/// Constants of the discovered losses. Fixed, never configurable.
pub mod constants {
    pub const ALPHA: f64 = 2.4092;
    pub const BETA: f64 = 1.5494;
    pub const GAMMA: f64 = 3.8235;
    pub const DELTA: f64 = 3.1868;
    pub const ZETA: f64 = 2.4428;
    pub const ETA: f64 = 2.6085;
    pub const EPSILON: f64 = crate::expr::EPSILON;
}

use constants::*;

pub const FOCAL_GAMMA: f64 = 2.0;
pub const SCE_WEIGHTS: (f64, f64) = (1.0, 1.0);
/// Value substituted for `log(0)` in the reverse cross-entropy term.
pub const SCE_LOG_ZERO: f64 = -4.0;

/// Stable identifiers accepted by [`builtin`].
pub const BUILTIN_NAMES: [&str; 10] =
    ["ce", "sce", "focal", "dice", "ngl", "f1", "f2", "f3", "f4", "f5"];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LossError {
    #[error("unknown loss '{0}' (expected one of ce|sce|focal|dice|ngl|f1|f2|f3|f4|f5)")]
    Unknown(String),
    #[error("non-finite {what} {value} at class {class}")]
    NonFinite { what: &'static str, class: usize, value: f64 },
    #[error(transparent)]
    Expr(#[from] ExprError),
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum Native {
    CrossEntropy,
    Symmetric { alpha: f64, beta: f64 },
    Focal { gamma: f64 },
    Dice,
    F1,
    F2,
    F3,
    F4,
    Ngl,
}

#[derive(Clone, Debug)]
struct TreeForm {
    expr: LossExpr,
    derivative: LossExpr,
}

impl TreeForm {
    fn new(expr: LossExpr) -> Self {
        let derivative = expr.differentiate();
        Self { expr, derivative }
    }
}

#[derive(Clone, Debug)]
enum Kind {
    Native(Native, Option<TreeForm>),
    Tree(TreeForm),
}

/// A loss with value and gradient, optionally backed by an expression tree.
#[derive(Clone, Debug)]
pub struct LossFn {
    name: String,
    kind: Kind,
}

impl LossFn {
    /// Wrap an arbitrary formula; the gradient is its symbolic derivative.
    pub fn from_expr(name: impl Into<String>, expr: LossExpr) -> Self {
        Self { name: name.into(), kind: Kind::Tree(TreeForm::new(expr)) }
    }

    pub fn focal(gamma: f64) -> Self {
        Self { name: "focal".into(), kind: Kind::Native(Native::Focal { gamma }, None) }
    }

    pub fn symmetric_ce(alpha: f64, beta: f64) -> Self {
        Self { name: "sce".into(), kind: Kind::Native(Native::Symmetric { alpha, beta }, None) }
    }

    fn native(name: &str, native: Native, tree: Option<LossExpr>) -> Self {
        Self { name: name.into(), kind: Kind::Native(native, tree.map(TreeForm::new)) }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    /// Expression-tree form, present for `f1`–`f5` and evolved losses.
    pub fn tree(&self) -> Option<&LossExpr> {
        self.tree_form().map(|t| &t.expr)
    }

    pub fn derivative_tree(&self) -> Option<&LossExpr> {
        self.tree_form().map(|t| &t.derivative)
    }

    fn tree_form(&self) -> Option<&TreeForm> {
        match &self.kind {
            Kind::Native(_, t) => t.as_ref(),
            Kind::Tree(t) => Some(t),
        }
    }

    pub fn value(&self, point: &EvalPoint) -> Result<f64, LossError> {
        self.value_slices(point.y_pred(), point.y_real())
    }

    pub fn grad(&self, point: &EvalPoint) -> Result<Vec<f64>, LossError> {
        let mut out = vec![0.0; point.classes()];
        self.grad_into(point.y_pred(), point.y_real(), &mut out)?;
        Ok(out)
    }

    /// [`LossFn::value`] without input validation, for hot loops.
    pub fn value_slices(&self, y_pred: &[f64], y_real: &[f64]) -> Result<f64, LossError> {
        let n = y_pred.len() as f64;
        let total = match &self.kind {
            Kind::Tree(t) => return Ok(t.expr.evaluate_slices(y_pred, y_real)?),
            Kind::Native(Native::Dice, _) => {
                let (inter, denom) = dice_terms(y_pred, y_real);
                return finite("value", 0, 1.0 - 2.0 * inter / denom);
            }
            Kind::Native(native, _) => {
                let mut total = 0.0;
                for (i, (&p, &r)) in y_pred.iter().zip(y_real).enumerate() {
                    total += finite("value", i, native_value(*native, p, r))?;
                }
                total
            }
        };
        finite("value", y_pred.len().saturating_sub(1), total / n)
    }

    /// [`LossFn::grad`] into a caller buffer, without input validation.
    pub fn grad_into(
        &self,
        y_pred: &[f64],
        y_real: &[f64],
        out: &mut [f64],
    ) -> Result<(), LossError> {
        let n = y_pred.len() as f64;
        match &self.kind {
            Kind::Native(Native::Dice, _) => {
                let (inter, denom) = dice_terms(y_pred, y_real);
                for (k, o) in out.iter_mut().enumerate() {
                    *o = finite("gradient", k, -2.0 * (y_real[k] * denom - inter) / (denom * denom))?;
                }
            }
            Kind::Native(native, _) => {
                for (i, ((&p, &r), o)) in y_pred.iter().zip(y_real).zip(out.iter_mut()).enumerate() {
                    *o = finite("gradient", i, native_grad(*native, p, r) / n)?;
                }
            }
            Kind::Tree(t) => {
                for (i, ((&p, &r), o)) in y_pred.iter().zip(y_real).zip(out.iter_mut()).enumerate() {
                    *o = finite("gradient", i, t.derivative.eval_scalar(p, r) / n)?;
                }
            }
        }
        Ok(())
    }
}

fn finite(what: &'static str, class: usize, value: f64) -> Result<f64, LossError> {
    if value.is_finite() {
        Ok(value)
    } else {
        Err(LossError::NonFinite { what, class, value })
    }
}

fn sign(x: f64) -> f64 {
    crate::expr::UnaryOp::Sign.apply(x)
}

fn dice_terms(y_pred: &[f64], y_real: &[f64]) -> (f64, f64) {
    let inter: f64 = y_pred.iter().zip(y_real).map(|(p, r)| p * r).sum();
    let denom = y_pred.iter().sum::<f64>() + y_real.iter().sum::<f64>() + EPSILON;
    (inter, denom)
}

fn sce_log_label(r: f64) -> f64 {
    if r > 0.0 {
        r.ln().max(SCE_LOG_ZERO)
    } else {
        SCE_LOG_ZERO
    }
}

/// Per-class closed form at `(p, r) = (y_pred[i], y_real[i])`.
fn native_value(native: Native, p: f64, r: f64) -> f64 {
    match native {
        Native::CrossEntropy => -r * (p.abs() + EPSILON).ln(),
        Native::Symmetric { alpha, beta } => {
            alpha * (-r * (p.abs() + EPSILON).ln()) + beta * (-p * sce_log_label(r))
        }
        Native::Focal { gamma } => -r * (1.0 - p).powf(gamma) * (p.abs() + EPSILON).ln(),
        Native::Dice => unreachable!("dice is not separable per class"),
        Native::F1 => {
            let s = p.sin();
            (s * s).exp() / (2.0 * (((BETA - r) * p).abs() + EPSILON))
        }
        Native::F2 => {
            (-r).cos() / ((p.abs() + EPSILON).sqrt() + EPSILON) * (p - GAMMA)
                + p.powi(4)
                + ((r + p).abs() + EPSILON).sqrt()
        }
        Native::F3 => {
            let w = r / (r.sin() + EPSILON) + (p - DELTA.exp()) / ZETA;
            (w.abs() + EPSILON).sqrt()
        }
        Native::F4 => ((p - ETA).sin() + r.powi(3)).sin(),
        Native::Ngl => (ALPHA - p * (1.0 + r)).exp() - p.sin().cos().cos(),
    }
}

/// Per-class `∂/∂p` of [`native_value`].
fn native_grad(native: Native, p: f64, r: f64) -> f64 {
    match native {
        Native::CrossEntropy => -r * sign(p) / (p.abs() + EPSILON),
        Native::Symmetric { alpha, beta } => {
            alpha * (-r * sign(p) / (p.abs() + EPSILON)) - beta * sce_log_label(r)
        }
        Native::Focal { gamma } => {
            let q = 1.0 - p;
            let log_p = (p.abs() + EPSILON).ln();
            r * (gamma * q.powf(gamma - 1.0) * log_p - q.powf(gamma) * sign(p) / (p.abs() + EPSILON))
        }
        Native::Dice => unreachable!("dice is not separable per class"),
        Native::F1 => {
            let (s, c) = p.sin_cos();
            let top = (s * s).exp();
            let k = BETA - r;
            let d = (k * p).abs() + EPSILON;
            top * 2.0 * s * c / (2.0 * d) - top * sign(k * p) * k / (2.0 * d * d)
        }
        Native::F2 => {
            let a = (-r).cos();
            let root = (p.abs() + EPSILON).sqrt();
            let q = root + EPSILON;
            let d_root = sign(p) / (2.0 * root);
            let inner = ((r + p).abs() + EPSILON).sqrt();
            a / q - a * (p - GAMMA) * d_root / (q * q)
                + 4.0 * p.powi(3)
                + sign(r + p) / (2.0 * inner)
        }
        Native::F3 => {
            let w = r / (r.sin() + EPSILON) + (p - DELTA.exp()) / ZETA;
            sign(w) / (2.0 * (w.abs() + EPSILON).sqrt()) / ZETA
        }
        Native::F4 => {
            let inner = (p - ETA).sin() + r.powi(3);
            inner.cos() * (p - ETA).cos()
        }
        Native::Ngl => {
            let sp = p.sin();
            -(1.0 + r) * (ALPHA - p * (1.0 + r)).exp() - sp.cos().sin() * sp.sin() * p.cos()
        }
    }
}

/// `exp(α − y_pred·(1 + y_real)) − cos(cos(sin(y_pred)))`
pub fn ngl_tree() -> LossExpr {
    LossExpr::new(sub(
        exp(sub(c(ALPHA), mul(pred(), add(c(1.0), real())))),
        cos(cos(sin(pred()))),
    ))
}

/// `e^{sin²(y_pred)} / (2·(|(β − y_real)·y_pred| + ε))`, with the
/// reciprocal written as `exp(−log(·))` so no extra ε enters.
pub fn f1_tree() -> LossExpr {
    LossExpr::new(mul(
        mul(c(0.5), exp(mul(sin(pred()), sin(pred())))),
        exp(neg(log(mul(sub(c(BETA), real()), pred())))),
    ))
}

pub fn f2_tree() -> LossExpr {
    LossExpr::new(add(
        add(
            mul(div(cos(neg(real())), sqrt(pred())), sub(pred(), c(GAMMA))),
            mul(mul(pred(), pred()), mul(pred(), pred())),
        ),
        sqrt(add(real(), pred())),
    ))
}

pub fn f3_tree() -> LossExpr {
    LossExpr::new(sqrt(add(
        div(real(), sin(real())),
        mul(sub(pred(), exp(c(DELTA))), c(1.0 / ZETA)),
    )))
}

pub fn f4_tree() -> LossExpr {
    LossExpr::new(sin(add(sin(sub(pred(), c(ETA))), mul(real(), mul(real(), real())))))
}

static CE: LazyLock<LossFn> = LazyLock::new(|| LossFn::native("ce", Native::CrossEntropy, None));
static SCE: LazyLock<LossFn> = LazyLock::new(|| {
    LossFn::native("sce", Native::Symmetric { alpha: SCE_WEIGHTS.0, beta: SCE_WEIGHTS.1 }, None)
});
static FOCAL: LazyLock<LossFn> =
    LazyLock::new(|| LossFn::native("focal", Native::Focal { gamma: FOCAL_GAMMA }, None));
static DICE: LazyLock<LossFn> = LazyLock::new(|| LossFn::native("dice", Native::Dice, None));
static F1: LazyLock<LossFn> = LazyLock::new(|| LossFn::native("f1", Native::F1, Some(f1_tree())));
static F2: LazyLock<LossFn> = LazyLock::new(|| LossFn::native("f2", Native::F2, Some(f2_tree())));
static F3: LazyLock<LossFn> = LazyLock::new(|| LossFn::native("f3", Native::F3, Some(f3_tree())));
static F4: LazyLock<LossFn> = LazyLock::new(|| LossFn::native("f4", Native::F4, Some(f4_tree())));
static NGL: LazyLock<LossFn> =
    LazyLock::new(|| LossFn::native("ngl", Native::Ngl, Some(ngl_tree())));

/// Catalog lookup. `f5` and `ngl` name the same entry.
pub fn builtin(name: &str) -> Result<&'static LossFn, LossError> {
    Ok(match name {
        "ce" => &CE,
        "sce" => &SCE,
        "focal" => &FOCAL,
        "dice" => &DICE,
        "ngl" | "f5" => &NGL,
        "f1" => &F1,
        "f2" => &F2,
        "f3" => &F3,
        "f4" => &F4,
        other => return Err(LossError::Unknown(other.to_string())),
    })
}
