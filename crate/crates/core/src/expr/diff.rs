use super::build::{abs, c, cos, div, exp, sign, sin, sqrt};
use super::{BinaryOp, Node, UnaryOp, EPSILON};

/// d/dp of `node`, treating `y_real` and constants as fixed.
///
/// Protected operators differentiate through their protected forms and use
/// the auxiliary `abs`/`sign` nodes:
///
/// * `sqrt(u)'   = 0.5 · sign(u) · u' · √(|u|+ε) / (|u|+ε)`
/// * `log(u)'    = sign(u) · u' / (|u|+ε)`
/// * `div(u, v)' = u'/(v+ε) − u·v'/(v+ε)²`
///
/// `div(x, abs(u))` evaluates to exactly `x / (|u| + ε)`, which is why the
/// rules are phrased that way. The subgradient of `|x|` at 0 is taken as 0.
pub(super) fn derivative(node: &Node) -> Node {
    match node {
        Node::Pred => c(1.0),
        Node::Real | Node::Const(_) => c(0.0),
        Node::Unary(op, u) => {
            let du = derivative(u);
            if is_const(&du, 0.0) {
                return c(0.0);
            }
            let u = (**u).clone();
            match op {
                UnaryOp::Neg => s_neg(du),
                UnaryOp::Sqrt => s_mul(
                    s_mul(s_mul(c(0.5), sign(u.clone())), du),
                    div(sqrt(u.clone()), abs(u)),
                ),
                UnaryOp::Log => s_div(s_mul(sign(u.clone()), du), abs(u)),
                UnaryOp::Exp => s_mul(exp(u), du),
                UnaryOp::Sin => s_mul(cos(u), du),
                UnaryOp::Cos => s_mul(s_neg(sin(u)), du),
                UnaryOp::Abs => s_mul(sign(u), du),
                UnaryOp::Sign => c(0.0),
            }
        }
        Node::Binary(op, u, v) => {
            let du = derivative(u);
            let dv = derivative(v);
            let (u, v) = ((**u).clone(), (**v).clone());
            match op {
                BinaryOp::Add => s_add(du, dv),
                BinaryOp::Sub => s_sub(du, dv),
                BinaryOp::Mul => s_add(s_mul(du, v), s_mul(u, dv)),
                BinaryOp::Div => {
                    let first = s_div(du, v.clone());
                    let second = s_div(s_div(s_mul(u, dv), v.clone()), v);
                    s_sub(first, second)
                }
            }
        }
    }
}

fn is_const(node: &Node, value: f64) -> bool {
    matches!(node, Node::Const(c) if *c == value)
}

fn as_const(node: &Node) -> Option<f64> {
    match node {
        Node::Const(c) => Some(*c),
        _ => None,
    }
}

fn fold(op: BinaryOp, a: &Node, b: &Node) -> Option<Node> {
    let (x, y) = (as_const(a)?, as_const(b)?);
    let v = op.apply(x, y);
    v.is_finite().then_some(Node::Const(v))
}

fn s_neg(a: Node) -> Node {
    match a {
        Node::Const(x) => Node::Const(-x),
        Node::Unary(UnaryOp::Neg, inner) => *inner,
        other => Node::Unary(UnaryOp::Neg, Box::new(other)),
    }
}

fn s_add(a: Node, b: Node) -> Node {
    if let Some(f) = fold(BinaryOp::Add, &a, &b) {
        return f;
    }
    if is_const(&a, 0.0) {
        return b;
    }
    if is_const(&b, 0.0) {
        return a;
    }
    Node::Binary(BinaryOp::Add, Box::new(a), Box::new(b))
}

fn s_sub(a: Node, b: Node) -> Node {
    if let Some(f) = fold(BinaryOp::Sub, &a, &b) {
        return f;
    }
    if is_const(&b, 0.0) {
        return a;
    }
    if is_const(&a, 0.0) {
        return s_neg(b);
    }
    Node::Binary(BinaryOp::Sub, Box::new(a), Box::new(b))
}

fn s_mul(a: Node, b: Node) -> Node {
    if let Some(f) = fold(BinaryOp::Mul, &a, &b) {
        return f;
    }
    if is_const(&a, 0.0) || is_const(&b, 0.0) {
        return c(0.0);
    }
    if is_const(&a, 1.0) {
        return b;
    }
    if is_const(&b, 1.0) {
        return a;
    }
    if is_const(&a, -1.0) {
        return s_neg(b);
    }
    if is_const(&b, -1.0) {
        return s_neg(a);
    }
    Node::Binary(BinaryOp::Mul, Box::new(a), Box::new(b))
}

fn s_div(a: Node, b: Node) -> Node {
    if is_const(&a, 0.0) {
        return c(0.0);
    }
    if let (Some(x), Some(y)) = (as_const(&a), as_const(&b)) {
        let v = x / (y + EPSILON);
        if v.is_finite() {
            return Node::Const(v);
        }
    }
    Node::Binary(BinaryOp::Div, Box::new(a), Box::new(b))
}
