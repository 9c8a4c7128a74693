//! Symbolic loss expressions.
//!
//! A [`LossExpr`] is a tree over the two per-class terminals `y_pred` and
//! `y_real`, real constants, and a small operator set. Division, square root
//! and logarithm are protected so that every evolved formula is total:
//!
//! * `div(x, y) = x / (y + ε)`
//! * `sqrt(x)   = √(|x| + ε)`
//! * `log(x)    = ln(|x| + ε)`
//!
//! with `ε = 1e-8`. A tree is evaluated once per class and the per-class
//! values are averaged, so a formula `f(p, r)` denotes the loss
//! `1/N Σ_i f(y_pred[i], y_real[i])`.
//!
//! Two auxiliary operators, `abs` and `sign`, never appear in evolved trees.
//! They exist so that symbolic derivatives of the protected operators stay
//! inside the same representation.

mod diff;
pub mod gradcheck;
mod random;
mod text;

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use random::{random_subtree, random_terminal, random_tree, random_tree_with};
pub use text::ParseError;

/// Stabilising constant used by the protected operators.
pub const EPSILON: f64 = 1e-8;

/// Tolerance on `Σ y_pred = 1` accepted by [`EvalPoint::new`].
pub const SIMPLEX_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ExprError {
    #[error("non-finite value {value} at class {class}")]
    NonFinite { class: usize, value: f64 },
    #[error("invalid evaluation point: {0}")]
    InvalidPoint(String),
    #[error("invalid tree constraints: {0}")]
    InvalidConstraints(String),
    #[error("tree constraints cannot be satisfied: {0}")]
    Infeasible(String),
    #[error(transparent)]
    Parse(#[from] ParseError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum UnaryOp {
    Neg,
    Sqrt,
    Log,
    Exp,
    Sin,
    Cos,
    /// Auxiliary: only produced by differentiation.
    Abs,
    /// Auxiliary: only produced by differentiation. `sign(0) = 0`.
    Sign,
}

impl UnaryOp {
    /// Operators available to the evolutionary search.
    pub const EVOLVABLE: [UnaryOp; 6] = [
        UnaryOp::Neg,
        UnaryOp::Sqrt,
        UnaryOp::Log,
        UnaryOp::Exp,
        UnaryOp::Sin,
        UnaryOp::Cos,
    ];

    pub fn name(self) -> &'static str {
        match self {
            UnaryOp::Neg => "neg",
            UnaryOp::Sqrt => "sqrt",
            UnaryOp::Log => "log",
            UnaryOp::Exp => "exp",
            UnaryOp::Sin => "sin",
            UnaryOp::Cos => "cos",
            UnaryOp::Abs => "abs",
            UnaryOp::Sign => "sign",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Some(match name {
            "neg" | "negate" => UnaryOp::Neg,
            "sqrt" | "sqrt_protected" => UnaryOp::Sqrt,
            "log" | "log_protected" => UnaryOp::Log,
            "exp" => UnaryOp::Exp,
            "sin" => UnaryOp::Sin,
            "cos" => UnaryOp::Cos,
            "abs" => UnaryOp::Abs,
            "sign" => UnaryOp::Sign,
            _ => return None,
        })
    }

    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            UnaryOp::Neg => -x,
            UnaryOp::Sqrt => (x.abs() + EPSILON).sqrt(),
            UnaryOp::Log => (x.abs() + EPSILON).ln(),
            UnaryOp::Exp => x.exp(),
            UnaryOp::Sin => x.sin(),
            UnaryOp::Cos => x.cos(),
            UnaryOp::Abs => x.abs(),
            UnaryOp::Sign => {
                if x > 0.0 {
                    1.0
                } else if x < 0.0 {
                    -1.0
                } else {
                    // 0 stays 0, NaN stays NaN
                    x
                }
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BinaryOp {
    Add,
    Sub,
    Mul,
    Div,
}

impl BinaryOp {
    pub const ALL: [BinaryOp; 4] = [BinaryOp::Add, BinaryOp::Sub, BinaryOp::Mul, BinaryOp::Div];

    pub fn name(self) -> &'static str {
        match self {
            BinaryOp::Add => "add",
            BinaryOp::Sub => "sub",
            BinaryOp::Mul => "mul",
            BinaryOp::Div => "div",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Some(match name {
            "add" => BinaryOp::Add,
            "sub" => BinaryOp::Sub,
            "mul" => BinaryOp::Mul,
            "div" | "div_protected" => BinaryOp::Div,
            _ => return None,
        })
    }

    #[inline]
    pub fn apply(self, a: f64, b: f64) -> f64 {
        match self {
            BinaryOp::Add => a + b,
            BinaryOp::Sub => a - b,
            BinaryOp::Mul => a * b,
            BinaryOp::Div => a / (b + EPSILON),
        }
    }
}

/// A node of a loss expression tree.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Node {
    /// The predicted probability of the current class.
    Pred,
    /// The one-hot label component of the current class.
    Real,
    Const(f64),
    Unary(UnaryOp, Box<Node>),
    Binary(BinaryOp, Box<Node>, Box<Node>),
}

impl Node {
    pub fn is_leaf(&self) -> bool {
        matches!(self, Node::Pred | Node::Real | Node::Const(_))
    }

    /// Number of nodes in this subtree.
    pub fn size(&self) -> usize {
        match self {
            Node::Pred | Node::Real | Node::Const(_) => 1,
            Node::Unary(_, c) => 1 + c.size(),
            Node::Binary(_, l, r) => 1 + l.size() + r.size(),
        }
    }

    /// Height counted in nodes: a single leaf has height 1.
    pub fn height(&self) -> usize {
        match self {
            Node::Pred | Node::Real | Node::Const(_) => 1,
            Node::Unary(_, c) => 1 + c.height(),
            Node::Binary(_, l, r) => 1 + l.height().max(r.height()),
        }
    }

    /// Scalar value at one class.
    pub fn eval(&self, pred: f64, real: f64) -> f64 {
        match self {
            Node::Pred => pred,
            Node::Real => real,
            Node::Const(c) => *c,
            Node::Unary(op, c) => op.apply(c.eval(pred, real)),
            Node::Binary(op, l, r) => op.apply(l.eval(pred, real), r.eval(pred, real)),
        }
    }

    fn visit<'a>(&'a self, out: &mut Vec<&'a Node>) {
        out.push(self);
        match self {
            Node::Unary(_, c) => c.visit(out),
            Node::Binary(_, l, r) => {
                l.visit(out);
                r.visit(out);
            }
            _ => {}
        }
    }

    /// Subtree at a preorder index.
    pub fn get(&self, index: usize) -> Option<&Node> {
        let mut counter = index;
        self.get_inner(&mut counter)
    }

    fn get_inner(&self, remaining: &mut usize) -> Option<&Node> {
        if *remaining == 0 {
            return Some(self);
        }
        *remaining -= 1;
        match self {
            Node::Unary(_, c) => c.get_inner(remaining),
            Node::Binary(_, l, r) => l.get_inner(remaining).or_else(|| r.get_inner(remaining)),
            _ => None,
        }
    }

    fn replace_inner(&mut self, remaining: &mut usize, replacement: &mut Option<Node>) {
        if replacement.is_none() {
            return;
        }
        if *remaining == 0 {
            *self = replacement.take().expect("checked above");
            return;
        }
        *remaining -= 1;
        match self {
            Node::Unary(_, c) => c.replace_inner(remaining, replacement),
            Node::Binary(_, l, r) => {
                l.replace_inner(remaining, replacement);
                r.replace_inner(remaining, replacement);
            }
            _ => {}
        }
    }

    fn any(&self, pred: &impl Fn(&Node) -> bool) -> bool {
        if pred(self) {
            return true;
        }
        match self {
            Node::Unary(_, c) => c.any(pred),
            Node::Binary(_, l, r) => l.any(pred) || r.any(pred),
            _ => false,
        }
    }
}

/// Terse constructors for building trees in code.
pub mod build {
    use super::{BinaryOp, Node, UnaryOp};

    pub fn pred() -> Node {
        Node::Pred
    }
    pub fn real() -> Node {
        Node::Real
    }
    pub fn c(value: f64) -> Node {
        Node::Const(value)
    }
    pub fn unary(op: UnaryOp, x: Node) -> Node {
        Node::Unary(op, Box::new(x))
    }
    pub fn binary(op: BinaryOp, a: Node, b: Node) -> Node {
        Node::Binary(op, Box::new(a), Box::new(b))
    }
    pub fn neg(x: Node) -> Node {
        unary(UnaryOp::Neg, x)
    }
    pub fn sqrt(x: Node) -> Node {
        unary(UnaryOp::Sqrt, x)
    }
    pub fn log(x: Node) -> Node {
        unary(UnaryOp::Log, x)
    }
    pub fn exp(x: Node) -> Node {
        unary(UnaryOp::Exp, x)
    }
    pub fn sin(x: Node) -> Node {
        unary(UnaryOp::Sin, x)
    }
    pub fn cos(x: Node) -> Node {
        unary(UnaryOp::Cos, x)
    }
    pub fn abs(x: Node) -> Node {
        unary(UnaryOp::Abs, x)
    }
    pub fn sign(x: Node) -> Node {
        unary(UnaryOp::Sign, x)
    }
    pub fn add(a: Node, b: Node) -> Node {
        binary(BinaryOp::Add, a, b)
    }
    pub fn sub(a: Node, b: Node) -> Node {
        binary(BinaryOp::Sub, a, b)
    }
    pub fn mul(a: Node, b: Node) -> Node {
        binary(BinaryOp::Mul, a, b)
    }
    pub fn div(a: Node, b: Node) -> Node {
        binary(BinaryOp::Div, a, b)
    }
}

/// One sample's prediction and label, both of length N.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalPoint {
    y_pred: Vec<f64>,
    y_real: Vec<f64>,
}

impl EvalPoint {
    pub fn new(y_pred: Vec<f64>, y_real: Vec<f64>) -> Result<Self, ExprError> {
        if y_pred.len() != y_real.len() {
            return Err(ExprError::InvalidPoint(format!(
                "length mismatch: y_pred has {}, y_real has {}",
                y_pred.len(),
                y_real.len()
            )));
        }
        if y_pred.is_empty() {
            return Err(ExprError::InvalidPoint("empty vectors".into()));
        }
        if let Some(i) = y_pred.iter().position(|p| !(0.0..=1.0).contains(p)) {
            return Err(ExprError::InvalidPoint(format!(
                "y_pred[{i}] = {} outside [0, 1]",
                y_pred[i]
            )));
        }
        let total: f64 = y_pred.iter().sum();
        if (total - 1.0).abs() > SIMPLEX_TOLERANCE {
            return Err(ExprError::InvalidPoint(format!("y_pred sums to {total}")));
        }
        let ones = y_real.iter().filter(|&&r| r == 1.0).count();
        let zeros = y_real.iter().filter(|&&r| r == 0.0).count();
        if ones != 1 || ones + zeros != y_real.len() {
            return Err(ExprError::InvalidPoint("y_real is not one-hot".into()));
        }
        Ok(Self { y_pred, y_real })
    }

    /// `y_pred = (p, 1 - p)`, `y_real = (r, 1 - r)` with `r ∈ {0, 1}`.
    pub fn binary(p: f64, r: u8) -> Result<Self, ExprError> {
        let r = match r {
            0 => 0.0,
            1 => 1.0,
            other => {
                return Err(ExprError::InvalidPoint(format!("binary label {other} not in {{0, 1}}")))
            }
        };
        Self::new(vec![p, 1.0 - p], vec![r, 1.0 - r])
    }

    /// One-hot label for `class` out of `y_pred.len()` classes.
    pub fn with_class(y_pred: Vec<f64>, class: usize) -> Result<Self, ExprError> {
        let mut y_real = vec![0.0; y_pred.len()];
        if class >= y_real.len() {
            return Err(ExprError::InvalidPoint(format!("class {class} out of range")));
        }
        y_real[class] = 1.0;
        Self::new(y_pred, y_real)
    }

    pub fn y_pred(&self) -> &[f64] {
        &self.y_pred
    }

    pub fn y_real(&self) -> &[f64] {
        &self.y_real
    }

    pub fn classes(&self) -> usize {
        self.y_pred.len()
    }
}

/// An immutable loss formula.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub struct LossExpr {
    root: Node,
}

impl From<LossExpr> for String {
    fn from(e: LossExpr) -> String {
        e.to_string()
    }
}

impl TryFrom<String> for LossExpr {
    type Error = ParseError;
    fn try_from(s: String) -> Result<Self, ParseError> {
        LossExpr::parse(&s)
    }
}

impl From<Node> for LossExpr {
    fn from(root: Node) -> Self {
        Self { root }
    }
}

impl LossExpr {
    pub fn new(root: Node) -> Self {
        Self { root }
    }

    pub fn root(&self) -> &Node {
        &self.root
    }

    pub fn into_root(self) -> Node {
        self.root
    }

    pub fn size(&self) -> usize {
        self.root.size()
    }

    pub fn height(&self) -> usize {
        self.root.height()
    }

    /// All nodes in preorder; index `i` of the result is the node addressed
    /// by [`LossExpr::subtree`]`(i)`.
    pub fn nodes(&self) -> Vec<&Node> {
        let mut out = Vec::with_capacity(self.size());
        self.root.visit(&mut out);
        out
    }

    pub fn subtree(&self, index: usize) -> Option<&Node> {
        self.root.get(index)
    }

    /// A copy of this tree with the subtree at preorder `index` replaced.
    /// Out-of-range indices return an unchanged copy.
    pub fn with_subtree(&self, index: usize, replacement: Node) -> LossExpr {
        let mut root = self.root.clone();
        let mut remaining = index;
        root.replace_inner(&mut remaining, &mut Some(replacement));
        LossExpr { root }
    }

    pub fn contains_pred(&self) -> bool {
        self.root.any(&|n| matches!(n, Node::Pred))
    }

    pub fn contains_real(&self) -> bool {
        self.root.any(&|n| matches!(n, Node::Real))
    }

    pub fn contains_unary(&self, op: UnaryOp) -> bool {
        self.root.any(&|n| matches!(n, Node::Unary(o, _) if *o == op))
    }

    /// Value of the formula at one class.
    #[inline]
    pub fn eval_scalar(&self, pred: f64, real: f64) -> f64 {
        self.root.eval(pred, real)
    }

    /// Mean over classes of the per-class value.
    pub fn evaluate(&self, point: &EvalPoint) -> Result<f64, ExprError> {
        self.evaluate_slices(point.y_pred(), point.y_real())
    }

    /// Same as [`LossExpr::evaluate`] without validating the inputs.
    pub fn evaluate_slices(&self, y_pred: &[f64], y_real: &[f64]) -> Result<f64, ExprError> {
        debug_assert_eq!(y_pred.len(), y_real.len());
        let mut total = 0.0;
        for (class, (&p, &r)) in y_pred.iter().zip(y_real).enumerate() {
            let value = self.eval_scalar(p, r);
            if !value.is_finite() {
                return Err(ExprError::NonFinite { class, value });
            }
            total += value;
        }
        let mean = total / y_pred.len() as f64;
        if !mean.is_finite() {
            return Err(ExprError::NonFinite { class: y_pred.len() - 1, value: mean });
        }
        Ok(mean)
    }

    /// Symbolic partial derivative with respect to `y_pred`.
    pub fn differentiate(&self) -> LossExpr {
        LossExpr { root: diff::derivative(&self.root) }
    }

    pub fn validate(&self, constraints: &TreeConstraints) -> ValidityReport {
        let constants_finite = !self.root.any(&|n| matches!(n, Node::Const(c) if !c.is_finite()));
        ValidityReport {
            has_pred: self.contains_pred(),
            has_real: self.contains_real(),
            height: self.height(),
            size: self.size(),
            min_height: constraints.min_height,
            max_size: constraints.max_size,
            constants_finite,
        }
    }

    pub fn parse(text: &str) -> Result<LossExpr, ParseError> {
        text::parse(text).map(LossExpr::new)
    }
}

impl fmt::Display for LossExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        text::write_node(f, &self.root)
    }
}

impl fmt::Display for Node {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        text::write_node(f, self)
    }
}

impl std::str::FromStr for LossExpr {
    type Err = ParseError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        LossExpr::parse(s)
    }
}

/// Structural limits on evolved trees.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TreeConstraints {
    pub min_height: usize,
    pub max_size: usize,
    /// Closed interval ephemeral constants are drawn from.
    pub constant_range: (f64, f64),
    pub max_retries: usize,
    /// Upper bound on the height of freshly generated trees.
    pub max_init_height: usize,
}

impl Default for TreeConstraints {
    fn default() -> Self {
        Self {
            min_height: 2,
            max_size: 100,
            constant_range: (-5.0, 5.0),
            max_retries: 5,
            max_init_height: 5,
        }
    }
}

impl TreeConstraints {
    pub fn check(&self) -> Result<(), ExprError> {
        if self.min_height < 1 {
            return Err(ExprError::InvalidConstraints("min_height must be >= 1".into()));
        }
        let full = 1usize
            .checked_shl(self.min_height as u32)
            .map(|v| v - 1)
            .unwrap_or(usize::MAX);
        if self.max_size < full {
            return Err(ExprError::InvalidConstraints(format!(
                "max_size {} below 2^min_height - 1 = {full}",
                self.max_size
            )));
        }
        let (lo, hi) = self.constant_range;
        if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
            return Err(ExprError::InvalidConstraints(format!(
                "constant_range [{lo}, {hi}] is empty or unbounded"
            )));
        }
        if self.max_init_height < self.min_height {
            return Err(ExprError::InvalidConstraints(format!(
                "max_init_height {} below min_height {}",
                self.max_init_height, self.min_height
            )));
        }
        Ok(())
    }

    /// Smallest tree holding both terminals at the required height.
    pub fn min_feasible_size(&self) -> usize {
        3.max(self.min_height + 1)
    }

    pub fn check_feasible(&self) -> Result<(), ExprError> {
        self.check()?;
        let need = self.min_feasible_size();
        if self.max_size < need {
            return Err(ExprError::Infeasible(format!(
                "max_size {} cannot hold both terminals at height >= {} (needs {need} nodes)",
                self.max_size, self.min_height
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Rule {
    MissingPred,
    MissingReal,
    TooShallow,
    TooLarge,
    NonFiniteConstant,
}

/// Per-rule outcome of [`LossExpr::validate`].
#[derive(Clone, Debug, PartialEq)]
pub struct ValidityReport {
    pub has_pred: bool,
    pub has_real: bool,
    pub height: usize,
    pub size: usize,
    pub min_height: usize,
    pub max_size: usize,
    pub constants_finite: bool,
}

impl ValidityReport {
    pub fn failures(&self) -> Vec<Rule> {
        let mut out = Vec::new();
        if !self.has_pred {
            out.push(Rule::MissingPred);
        }
        if !self.has_real {
            out.push(Rule::MissingReal);
        }
        if self.height < self.min_height {
            out.push(Rule::TooShallow);
        }
        if self.size > self.max_size {
            out.push(Rule::TooLarge);
        }
        if !self.constants_finite {
            out.push(Rule::NonFiniteConstant);
        }
        out
    }

    pub fn is_valid(&self) -> bool {
        self.failures().is_empty()
    }
}
