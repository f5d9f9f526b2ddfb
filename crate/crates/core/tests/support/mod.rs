//! Shared test support: a recipe-driven random graph builder and a central
//! finite-difference oracle for certifying reverse-mode gradients.

#![allow(dead_code)]

use rand::Rng;
use rand_chacha::ChaCha12Rng;
use tracegan_core::diffcore::{Axis, Tape, Tensor, Var};

/// One differentiable computation, described independently of any tape so
/// it can be replayed with perturbed inputs.
#[derive(Debug, Clone)]
pub enum Step {
    MatMul(usize, usize),
    Add(usize, usize),
    Sub(usize, usize),
    AddRow(usize, usize),
    Scale(usize, f64),
    Relu(usize),
    LeakyRelu(usize),
    Tanh(usize),
    Softplus(usize),
    SoftmaxRows(usize),
    ConcatRows(usize, usize),
    ConcatCols(usize, usize),
    MeanAxis(usize, bool),
    SumAxis(usize, bool),
    Reshape(usize, usize, usize),
    NeighborSum(usize, usize),
    BlockMean(usize, usize),
}

#[derive(Debug, Clone)]
pub struct GraphRecipe {
    pub leaf_shapes: Vec<(usize, usize)>,
    pub steps: Vec<Step>,
}

/// Replays the recipe on a fresh tape; returns (tape, leaf vars, scalar loss).
pub fn replay(recipe: &GraphRecipe, leaves: &[Tensor]) -> (Tape, Vec<Var>, Var) {
    let mut tape = Tape::new();
    let leaf_vars: Vec<Var> = leaves.iter().map(|t| tape.leaf(t)).collect();
    let mut pool: Vec<Var> = leaf_vars.clone();
    for step in &recipe.steps {
        let v = match *step {
            Step::MatMul(a, b) => tape.matmul(pool[a], pool[b]).unwrap(),
            Step::Add(a, b) => tape.add(pool[a], pool[b]).unwrap(),
            Step::Sub(a, b) => tape.sub(pool[a], pool[b]).unwrap(),
            Step::AddRow(a, b) => tape.add_row(pool[a], pool[b]).unwrap(),
            Step::Scale(a, c) => tape.scale(pool[a], c),
            Step::Relu(a) => tape.relu(pool[a]),
            Step::LeakyRelu(a) => tape.leaky_relu(pool[a], 0.2),
            Step::Tanh(a) => tape.tanh(pool[a]),
            Step::Softplus(a) => tape.softplus(pool[a]),
            Step::SoftmaxRows(a) => tape.softmax_rows(pool[a]),
            Step::ConcatRows(a, b) => tape.concat_rows(&[pool[a], pool[b]]).unwrap(),
            Step::ConcatCols(a, b) => tape.concat_cols(&[pool[a], pool[b]]).unwrap(),
            Step::MeanAxis(a, rows) => {
                tape.mean_axis(pool[a], if rows { Axis::Rows } else { Axis::Cols })
            }
            Step::SumAxis(a, rows) => {
                tape.sum_axis(pool[a], if rows { Axis::Rows } else { Axis::Cols })
            }
            Step::Reshape(a, r, c) => tape.reshape(pool[a], r, c).unwrap(),
            Step::NeighborSum(a, block) => tape.neighbor_sum_blocks(pool[a], block).unwrap(),
            Step::BlockMean(a, block) => tape.block_mean_rows(pool[a], block).unwrap(),
        };
        pool.push(v);
    }
    // Reduce whatever the last node is to a scalar through a smooth path.
    let last = *pool.last().unwrap();
    let squashed = tape.tanh(last);
    let loss = tape.mean(squashed);
    (tape, leaf_vars, loss)
}

fn eval(recipe: &GraphRecipe, leaves: &[Tensor]) -> f64 {
    let (tape, _, loss) = replay(recipe, leaves);
    tape.value(loss).item()
}

/// Draws a random recipe over the full op set. Dimensions stay small so
/// finite differences remain cheap.
pub fn random_recipe(rng: &mut ChaCha12Rng) -> GraphRecipe {
    let n_leaves = rng.random_range(2..=3);
    let mut shapes: Vec<(usize, usize)> = Vec::new();
    for _ in 0..n_leaves {
        shapes.push((rng.random_range(1..=4), rng.random_range(1..=4)));
    }
    let leaf_shapes = shapes.clone();
    let mut steps = Vec::new();
    let n_steps = rng.random_range(3..=6);
    for _ in 0..n_steps {
        // Collect applicable ops for the current pool and draw one.
        let mut options: Vec<Step> = Vec::new();
        for a in 0..shapes.len() {
            let (ra, ca) = shapes[a];
            options.push(Step::Scale(a, 1.7));
            options.push(Step::Relu(a));
            options.push(Step::LeakyRelu(a));
            options.push(Step::Tanh(a));
            options.push(Step::Softplus(a));
            options.push(Step::SoftmaxRows(a));
            options.push(Step::MeanAxis(a, true));
            options.push(Step::MeanAxis(a, false));
            options.push(Step::SumAxis(a, true));
            options.push(Step::SumAxis(a, false));
            options.push(Step::Reshape(a, ca, ra));
            if ra % 2 == 0 {
                options.push(Step::NeighborSum(a, 2));
                options.push(Step::BlockMean(a, 2));
            }
            for b in 0..shapes.len() {
                let (rb, cb) = shapes[b];
                if ca == rb {
                    options.push(Step::MatMul(a, b));
                }
                if (ra, ca) == (rb, cb) {
                    options.push(Step::Add(a, b));
                    options.push(Step::Sub(a, b));
                }
                if rb == 1 && cb == ca {
                    options.push(Step::AddRow(a, b));
                }
                if ca == cb {
                    options.push(Step::ConcatRows(a, b));
                }
                if ra == rb {
                    options.push(Step::ConcatCols(a, b));
                }
            }
        }
        let step = options[rng.random_range(0..options.len())].clone();
        let shape = match step {
            Step::MatMul(a, b) => (shapes[a].0, shapes[b].1),
            Step::Add(a, _) | Step::Sub(a, _) | Step::AddRow(a, _) => shapes[a],
            Step::Scale(a, _)
            | Step::Relu(a)
            | Step::LeakyRelu(a)
            | Step::Tanh(a)
            | Step::Softplus(a)
            | Step::SoftmaxRows(a) => shapes[a],
            Step::ConcatRows(a, b) => (shapes[a].0 + shapes[b].0, shapes[a].1),
            Step::ConcatCols(a, b) => (shapes[a].0, shapes[a].1 + shapes[b].1),
            Step::MeanAxis(a, rows) | Step::SumAxis(a, rows) => {
                if rows {
                    (1, shapes[a].1)
                } else {
                    (shapes[a].0, 1)
                }
            }
            Step::Reshape(_, r, c) => (r, c),
            Step::NeighborSum(a, _) => shapes[a],
            Step::BlockMean(a, block) => (shapes[a].0 / block, shapes[a].1),
        };
        steps.push(step);
        shapes.push(shape);
    }
    GraphRecipe { leaf_shapes, steps }
}

/// Random leaf values kept away from the relu/leaky-relu kink at zero so
/// the central difference stays on one side of it.
pub fn random_leaves(recipe: &GraphRecipe, rng: &mut ChaCha12Rng) -> Vec<Tensor> {
    recipe
        .leaf_shapes
        .iter()
        .map(|&(r, c)| {
            let data = (0..r * c)
                .map(|_| {
                    let v: f64 = rng.random_range(0.1..1.0);
                    if rng.random_bool(0.5) {
                        v
                    } else {
                        -v
                    }
                })
                .collect();
            Tensor::from_vec(r, c, data).unwrap()
        })
        .collect()
}

/// Central finite differences of the replayed loss with step `eps`.
pub fn finite_difference_grads(recipe: &GraphRecipe, leaves: &[Tensor], eps: f64) -> Vec<Tensor> {
    let mut grads = Vec::with_capacity(leaves.len());
    for li in 0..leaves.len() {
        let (r, c) = leaves[li].shape();
        let mut g = Tensor::zeros(r, c);
        for idx in 0..r * c {
            let mut plus = leaves.to_vec();
            plus[li].data_mut()[idx] += eps;
            let mut minus = leaves.to_vec();
            minus[li].data_mut()[idx] -= eps;
            g.data_mut()[idx] = (eval(recipe, &plus) - eval(recipe, &minus)) / (2.0 * eps);
        }
        grads.push(g);
    }
    grads
}

/// Asserts analytic and finite-difference gradients agree within
/// `rel_tol` relative error over an `abs_floor` absolute floor.
pub fn assert_grads_match(analytic: &Tensor, numeric: &Tensor, rel_tol: f64, abs_floor: f64, ctx: &str) {
    assert_eq!(analytic.shape(), numeric.shape(), "{ctx}: shape mismatch");
    for (i, (&a, &n)) in analytic.data().iter().zip(numeric.data()).enumerate() {
        let denom = a.abs().max(n.abs()).max(abs_floor);
        let rel = (a - n).abs() / denom;
        assert!(
            rel <= rel_tol,
            "{ctx}: grad[{i}] analytic={a} numeric={n} rel={rel}"
        );
    }
}

/// Runs the oracle over `count` seeded random graphs.
pub fn run_gradient_certification(count: usize, seed: u64) {
    use rand::SeedableRng;
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    for case in 0..count {
        let recipe = random_recipe(&mut rng);
        let leaves = random_leaves(&recipe, &mut rng);
        let (mut tape, leaf_vars, loss) = replay(&recipe, &leaves);
        tape.backward(loss).expect("backward");
        let numeric = finite_difference_grads(&recipe, &leaves, 1e-4);
        for (li, (&lv, num)) in leaf_vars.iter().zip(&numeric).enumerate() {
            let analytic = tape
                .grad(lv)
                .unwrap_or_else(|| Tensor::zeros(num.shape().0, num.shape().1));
            assert_grads_match(&analytic, num, 1e-3, 1e-6, &format!("case {case} leaf {li}"));
        }
    }
}
