//! Central finite-difference checks of symbolic derivatives.
//!
//! A point is only compared when the difference quotient can resolve the
//! slope: no protected-operator kink inside the stencil, and estimated
//! truncation and round-off errors well below the tolerance. Neither
//! estimate looks at the symbolic derivative.

use serde::{Deserialize, Serialize};

use super::{BinaryOp, LossExpr, Node, UnaryOp, EPSILON};

pub const FD_STEP: f64 = 1e-5;
/// Kink arguments closer to zero than this are avoided.
pub const KINK_MARGIN: f64 = 1e-4;
/// Conditioning estimates must stay below `tolerance × CONDITIONING`.
pub const CONDITIONING: f64 = 0.1;

/// `|a − b| / max(1, |a|, |b|)`.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1.0)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SkipReason {
    /// An `abs`, `sqrt`, `log` or division kink lies inside the stencil.
    Kink,
    NonFinite,
    Truncation,
    RoundOff,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum PointCheck {
    Agrees { relative_error: f64 },
    Disagrees { analytic: f64, numeric: f64, relative_error: f64 },
    Skipped(SkipReason),
}

fn near_kink(node: &Node, p: f64, r: f64, reach: f64) -> bool {
    let crosses = |u: &Node, shift: f64| {
        let v = [u.eval(p - reach, r) + shift, u.eval(p, r) + shift, u.eval(p + reach, r) + shift];
        let varies = v[0] != v[2];
        (varies && v.iter().any(|x| x.abs() < KINK_MARGIN))
            || v.iter().any(|x| x.signum() != v[0].signum())
    };
    match node {
        Node::Unary(op, u) => {
            let kinked = matches!(op, UnaryOp::Sqrt | UnaryOp::Log | UnaryOp::Abs | UnaryOp::Sign);
            (kinked && crosses(u, 0.0)) || near_kink(u, p, r, reach)
        }
        Node::Binary(op, a, b) => {
            (*op == BinaryOp::Div && crosses(b, EPSILON))
                || near_kink(a, p, r, reach)
                || near_kink(b, p, r, reach)
        }
        _ => false,
    }
}

/// Compare `derivative` with the central difference of `expr` in `y_pred`.
pub fn check_point(
    expr: &LossExpr,
    derivative: &LossExpr,
    p: f64,
    r: f64,
    h: f64,
    tolerance: f64,
) -> PointCheck {
    if near_kink(expr.root(), p, r, 2.0 * h) {
        return PointCheck::Skipped(SkipReason::Kink);
    }
    let f = |x: f64| expr.eval_scalar(x, r);
    let f0 = f(p);
    let numeric = (f(p + h) - f(p - h)) / (2.0 * h);
    let wide = (f(p + 2.0 * h) - f(p - 2.0 * h)) / (4.0 * h);
    let analytic = derivative.eval_scalar(p, r);
    if ![f0, numeric, wide, analytic].iter().all(|v| v.is_finite()) {
        return PointCheck::Skipped(SkipReason::NonFinite);
    }
    let scale = numeric.abs().max(1.0);
    // Richardson estimate of the O(h²) term
    if (wide - numeric).abs() / 3.0 / scale > tolerance * CONDITIONING {
        return PointCheck::Skipped(SkipReason::Truncation);
    }
    if f64::EPSILON * f0.abs() / h / scale > tolerance * CONDITIONING {
        return PointCheck::Skipped(SkipReason::RoundOff);
    }
    let relative_error = relative_error(analytic, numeric);
    if relative_error <= tolerance {
        PointCheck::Agrees { relative_error }
    } else {
        PointCheck::Disagrees { analytic, numeric, relative_error }
    }
}
