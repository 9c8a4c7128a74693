//! Random tree generation (ramped half-and-half with a height guarantee).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{BinaryOp, ExprError, LossExpr, Node, TreeConstraints, UnaryOp};

const N_UNARY: usize = UnaryOp::EVOLVABLE.len();
const N_FUNCTIONS: usize = N_UNARY + BinaryOp::ALL.len();
const N_TERMINAL_KINDS: usize = 3;

/// A random tree satisfying `constraints`, reproducible from `seed`.
pub fn random_tree(constraints: &TreeConstraints, seed: u64) -> Result<LossExpr, ExprError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    random_tree_with(constraints, &mut rng)
}

/// Generate with a caller-provided stream.
///
/// Up to `max_retries` fresh trees are drawn; if none contains both
/// terminals, the missing terminal is grafted onto a leaf of the last draw.
/// Draws are always at least `min_height` tall, so grafting only fails when
/// the size limit is tight, in which case the minimal feasible tree is used.
pub fn random_tree_with<R: Rng + ?Sized>(
    constraints: &TreeConstraints,
    rng: &mut R,
) -> Result<LossExpr, ExprError> {
    constraints.check_feasible()?;
    let mut last = None;
    for _ in 0..constraints.max_retries.max(1) {
        let full = rng.random_bool(0.5);
        let height = rng.random_range(constraints.min_height..=constraints.max_init_height);
        let node = generate(rng, height, constraints.min_height, full, constraints.constant_range);
        let expr = LossExpr::new(node);
        if expr.size() > constraints.max_size {
            continue;
        }
        if expr.validate(constraints).is_valid() {
            return Ok(expr);
        }
        last = Some(expr);
    }
    if let Some(expr) = last {
        if let Some(grafted) = graft_missing(expr, constraints, rng) {
            return Ok(grafted);
        }
    }
    Ok(minimal_tree(constraints, rng))
}

/// A random subtree of height at most `max_height`; no terminal rules apply.
pub fn random_subtree<R: Rng + ?Sized>(
    rng: &mut R,
    max_height: usize,
    constant_range: (f64, f64),
) -> Node {
    let height = rng.random_range(1..=max_height.max(1));
    generate(rng, height, 1, false, constant_range)
}

/// One of `y_pred`, `y_real` or a fresh constant, uniformly.
pub fn random_terminal<R: Rng + ?Sized>(rng: &mut R, constant_range: (f64, f64)) -> Node {
    match rng.random_range(0..N_TERMINAL_KINDS) {
        0 => Node::Pred,
        1 => Node::Real,
        _ => random_constant(rng, constant_range),
    }
}

fn random_constant<R: Rng + ?Sized>(rng: &mut R, (lo, hi): (f64, f64)) -> Node {
    if lo == hi {
        Node::Const(lo)
    } else {
        Node::Const(rng.random_range(lo..=hi))
    }
}

/// `budget`: maximum height of this subtree. `need`: minimum height.
fn generate<R: Rng + ?Sized>(
    rng: &mut R,
    budget: usize,
    need: usize,
    full: bool,
    constant_range: (f64, f64),
) -> Node {
    if budget <= 1 {
        return random_terminal(rng, constant_range);
    }
    let function = if full || need > 1 {
        true
    } else {
        rng.random_range(0..N_FUNCTIONS + N_TERMINAL_KINDS) < N_FUNCTIONS
    };
    if !function {
        return random_terminal(rng, constant_range);
    }
    let child_need = need.saturating_sub(1).max(1);
    let pick = rng.random_range(0..N_FUNCTIONS);
    if pick < N_UNARY {
        let child = generate(rng, budget - 1, child_need, full, constant_range);
        Node::Unary(UnaryOp::EVOLVABLE[pick], Box::new(child))
    } else {
        let op = BinaryOp::ALL[pick - N_UNARY];
        let carrier_left = rng.random_bool(0.5);
        let (need_l, need_r) = if carrier_left { (child_need, 1) } else { (1, child_need) };
        let l = generate(rng, budget - 1, need_l, full, constant_range);
        let r = generate(rng, budget - 1, need_r, full, constant_range);
        Node::Binary(op, Box::new(l), Box::new(r))
    }
}

fn leaf_indices(expr: &LossExpr) -> Vec<usize> {
    expr.nodes()
        .iter()
        .enumerate()
        .filter(|(_, n)| n.is_leaf())
        .map(|(i, _)| i)
        .collect()
}

fn graft_missing<R: Rng + ?Sized>(
    mut expr: LossExpr,
    constraints: &TreeConstraints,
    rng: &mut R,
) -> Option<LossExpr> {
    for wanted in [Node::Pred, Node::Real] {
        let present = match wanted {
            Node::Pred => expr.contains_pred(),
            _ => expr.contains_real(),
        };
        if present {
            continue;
        }
        let nodes = expr.nodes();
        let n_pred = nodes.iter().filter(|n| matches!(n, Node::Pred)).count();
        let n_real = nodes.iter().filter(|n| matches!(n, Node::Real)).count();
        // leaves whose replacement does not remove the last terminal of a kind
        let candidates: Vec<usize> = leaf_indices(&expr)
            .into_iter()
            .filter(|&i| match nodes[i] {
                Node::Pred => n_pred > 1,
                Node::Real => n_real > 1,
                _ => true,
            })
            .collect();
        drop(nodes);
        if let Some(&idx) = candidates.get(rng.random_range(0..candidates.len().max(1))) {
            expr = expr.with_subtree(idx, wanted);
        } else {
            if expr.size() + 2 > constraints.max_size {
                return None;
            }
            let leaves = leaf_indices(&expr);
            let idx = leaves[rng.random_range(0..leaves.len())];
            let leaf = expr.subtree(idx).cloned()?;
            let op = BinaryOp::ALL[rng.random_range(0..BinaryOp::ALL.len())];
            let node = if rng.random_bool(0.5) {
                Node::Binary(op, Box::new(leaf), Box::new(wanted))
            } else {
                Node::Binary(op, Box::new(wanted), Box::new(leaf))
            };
            expr = expr.with_subtree(idx, node);
        }
    }
    expr.validate(constraints).is_valid().then_some(expr)
}

/// A chain of unary operators over `op(y_pred, y_real)`, exactly
/// `max(2, min_height)` tall.
fn minimal_tree<R: Rng + ?Sized>(constraints: &TreeConstraints, rng: &mut R) -> LossExpr {
    let op = BinaryOp::ALL[rng.random_range(0..BinaryOp::ALL.len())];
    let (a, b) = if rng.random_bool(0.5) { (Node::Pred, Node::Real) } else { (Node::Real, Node::Pred) };
    let mut node = Node::Binary(op, Box::new(a), Box::new(b));
    for _ in 2..constraints.min_height {
        let u = UnaryOp::EVOLVABLE[rng.random_range(0..N_UNARY)];
        node = Node::Unary(u, Box::new(node));
    }
    LossExpr::new(node)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_constraints_give_valid_trees() {
        let constraints = TreeConstraints::default();
        let e = random_tree(&constraints, 7).unwrap();
        assert!(e.height() >= 2 && e.size() <= 100);
        assert!(e.contains_pred() && e.contains_real());
    }

    #[test]
    fn infeasible_constraints_error() {
        let constraints = TreeConstraints {
            min_height: 1,
            max_size: 1,
            max_init_height: 1,
            ..Default::default()
        };
        assert!(matches!(random_tree(&constraints, 0), Err(ExprError::Infeasible(_))));
    }

    #[test]
    fn seed_sweep_always_validates() {
        let constraints = TreeConstraints::default();
        for seed in 0..1000 {
            let e = random_tree(&constraints, seed).unwrap();
            assert!(e.validate(&constraints).is_valid(), "seed {seed}: {e}");
        }
    }

    #[test]
    fn tight_constraints_still_validate() {
        let constraints = TreeConstraints {
            min_height: 4,
            max_size: 15,
            max_retries: 1,
            max_init_height: 6,
            ..Default::default()
        };
        for seed in 0..300 {
            let e = random_tree(&constraints, seed).unwrap();
            assert!(e.validate(&constraints).is_valid(), "seed {seed}: {e}");
        }
        let minimal = TreeConstraints {
            min_height: 2,
            max_size: 3,
            max_retries: 1,
            max_init_height: 2,
            ..Default::default()
        };
        for seed in 0..100 {
            let e = random_tree(&minimal, seed).unwrap();
            assert!(e.validate(&minimal).is_valid(), "seed {seed}: {e}");
        }
    }

    #[test]
    fn same_seed_same_tree() {
        let constraints = TreeConstraints::default();
        assert_eq!(random_tree(&constraints, 99).unwrap(), random_tree(&constraints, 99).unwrap());
    }
}
