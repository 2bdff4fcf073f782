//! Central finite-difference checks of reverse-mode gradients.
//!
//! The numeric side only ever calls [`Graph::eval`], never the backward pass,
//! so it is an independent oracle for [`Graph::grad`].

use std::collections::HashMap;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{AttentionMask, Graph, Tensor, Var};
use crate::error::Result;

/// Denominator floor of [`relative_error`].
pub const REL_ERR_FLOOR: f64 = 1e-6;

/// `|a − n| / max(|a|, |n|, REL_ERR_FLOOR)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERR_FLOOR)
}

/// Outcome of one gradient check.
#[derive(Clone, Debug)]
pub struct GradCheck {
    pub name: String,
    pub max_rel_err: f64,
    pub checked: usize,
}

/// Compare analytic and central-difference gradients of a scalar graph.
///
/// `build` receives the graph and one leaf per input and returns the scalar
/// output. `coords`, when given, restricts the check to those
/// `(input, flat index)` pairs.
pub fn check_gradients<F>(
    name: &str,
    inputs: &[Tensor],
    step: f64,
    coords: Option<&[(usize, usize)]>,
    build: F,
) -> Result<GradCheck>
where
    F: FnOnce(&mut Graph, &[Var]) -> Result<Var>,
{
    let mut g = Graph::new();
    let leaves: Vec<Var> = inputs.iter().map(|t| g.leaf(t.clone())).collect();
    let out = build(&mut g, &leaves)?;
    let grads = g.backward(out, &leaves)?;

    let all: Vec<(usize, usize)>;
    let coords = match coords {
        Some(c) => c,
        None => {
            all = inputs.iter().enumerate().flat_map(|(i, t)| (0..t.numel()).map(move |j| (i, j))).collect();
            &all
        }
    };

    let mut max_rel_err: f64 = 0.0;
    for &(i, j) in coords {
        let analytic = grads[&leaves[i]].data()[j];
        let numeric = central_difference(&g, out, leaves[i], &inputs[i], j, step)?;
        max_rel_err = max_rel_err.max(relative_error(analytic, numeric));
    }
    Ok(GradCheck { name: name.to_string(), max_rel_err, checked: coords.len() })
}

fn central_difference(g: &Graph, out: Var, leaf: Var, base: &Tensor, j: usize, step: f64) -> Result<f64> {
    let shifted = |delta: f64| -> Result<f64> {
        let mut data = base.data().to_vec();
        data[j] += delta;
        let mut b = HashMap::new();
        b.insert(leaf, Tensor::new(base.shape().to_vec(), data)?);
        Ok(g.eval(out, &b)?.item())
    };
    Ok((shifted(step)? - shifted(-step)?) / (2.0 * step))
}

fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(lo..hi)).collect();
    Tensor::new(shape.to_vec(), data).expect("finite uniform draws")
}

/// Reduce `y` to a scalar through fixed random weights so every output
/// component contributes to the checked gradient.
fn project(g: &mut Graph, y: Var, rng: &mut ChaCha8Rng) -> Result<Var> {
    let shape = g.shape(y).to_vec();
    let w = uniform(rng, &shape, -1.0, 1.0);
    let w = g.constant(w);
    g.dot(y, w)
}

type Case = (&'static str, Vec<Vec<usize>>, (f64, f64), fn(&mut Graph, &[Var]) -> Result<Var>);

fn primitive_cases() -> Vec<Case> {
    vec![
        ("add_broadcast", vec![vec![3, 4], vec![4]], (-1.0, 1.0), |g, x| g.add(x[0], x[1])),
        ("sub_broadcast", vec![vec![3, 1], vec![3, 4]], (-1.0, 1.0), |g, x| g.sub(x[0], x[1])),
        ("mul", vec![vec![3, 4], vec![3, 4]], (-1.0, 1.0), |g, x| g.mul(x[0], x[1])),
        ("div", vec![vec![2, 3], vec![2, 3]], (0.5, 1.5), |g, x| g.div(x[0], x[1])),
        ("scale", vec![vec![5]], (-1.0, 1.0), |g, x| g.scale(x[0], -2.5)),
        ("exp", vec![vec![5]], (-1.0, 1.0), |g, x| g.exp(x[0])),
        ("log", vec![vec![5]], (0.5, 2.0), |g, x| g.log(x[0])),
        ("sqrt", vec![vec![5]], (0.5, 2.0), |g, x| g.sqrt(x[0])),
        ("sigmoid", vec![vec![6]], (-1.0, 1.0), |g, x| g.sigmoid(x[0])),
        ("relu", vec![vec![6]], (-1.0, 1.0), |g, x| g.relu(x[0])),
        ("abs", vec![vec![6]], (-1.0, 1.0), |g, x| g.abs(x[0])),
        ("matmul", vec![vec![3, 4], vec![4, 2]], (-1.0, 1.0), |g, x| g.matmul(x[0], x[1])),
        ("matmul_ta", vec![vec![4, 3], vec![4, 2]], (-1.0, 1.0), |g, x| g.matmul_t(x[0], x[1], true, false)),
        ("matmul_tb", vec![vec![3, 4], vec![2, 4]], (-1.0, 1.0), |g, x| g.matmul_t(x[0], x[1], false, true)),
        ("matmul_ta_tb", vec![vec![4, 3], vec![2, 4]], (-1.0, 1.0), |g, x| g.matmul_t(x[0], x[1], true, true)),
        ("sum_to", vec![vec![3, 4]], (-1.0, 1.0), |g, x| g.sum_to(x[0], &[3, 1])),
        ("mean", vec![vec![3, 4]], (-1.0, 1.0), |g, x| g.mean(x[0])),
        ("broadcast_to", vec![vec![1, 4]], (-1.0, 1.0), |g, x| g.broadcast_to(x[0], &[3, 4])),
        ("reshape", vec![vec![3, 4]], (-1.0, 1.0), |g, x| g.reshape(x[0], &[2, 6])),
        ("gather", vec![vec![6]], (-1.0, 1.0), |g, x| {
            g.gather(x[0], Arc::from(vec![5, 0, super::GATHER_PAD, 0, 3]), &[5])
        }),
        ("scatter_add", vec![vec![4]], (-1.0, 1.0), |g, x| {
            g.scatter_add(x[0], Arc::from(vec![1, 1, super::GATHER_PAD, 2]), &[3])
        }),
        ("slice", vec![vec![10]], (-1.0, 1.0), |g, x| g.slice(x[0], 3, &[2, 2])),
        ("overlapping_slices", vec![vec![10]], (-1.0, 1.0), |g, x| {
            let a = g.slice(x[0], 1, &[4])?;
            let b = g.slice(x[0], 3, &[4])?;
            let c = g.slice(x[0], 6, &[4])?;
            let ab = g.mul(a, b)?;
            g.mul(ab, c)
        }),
        ("concat", vec![vec![2, 3], vec![2, 2]], (-1.0, 1.0), |g, x| g.concat(&[x[0], x[1]], 1)),
        ("softmax", vec![vec![3, 5]], (-2.0, 2.0), |g, x| g.softmax(x[0])),
        ("layer_norm", vec![vec![3, 6], vec![6], vec![6]], (-1.0, 1.0), |g, x| g.layer_norm(x[0], x[1], x[2], 1e-5)),
        ("conv2d", vec![vec![3, 4, 2], vec![3, 18], vec![3]], (-1.0, 1.0), |g, x| g.conv2d(x[0], x[1], Some(x[2]), 3)),
        ("masked_attention", vec![vec![4, 3], vec![4, 3], vec![4, 3]], (-1.0, 1.0), |g, x| {
            let mask = AttentionMask::causal(4);
            g.attention(x[0], x[1], x[2], Some(&mask))
        }),
        ("linear", vec![vec![3, 4], vec![2, 4], vec![2]], (-1.0, 1.0), |g, x| g.linear(x[0], x[1], Some(x[2]))),
    ]
}

/// Check every primitive against central differences for one seed.
pub fn check_primitives(seed: u64, step: f64) -> Result<Vec<GradCheck>> {
    let mut out = Vec::new();
    for (k, (name, shapes, (lo, hi), f)) in primitive_cases().into_iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(1000).wrapping_add(k as u64));
        let inputs: Vec<Tensor> = shapes.iter().map(|s| uniform(&mut rng, s, lo, hi)).collect();
        let check = check_gradients(name, &inputs, step, None, |g, x| {
            let y = f(g, x)?;
            project(g, y, &mut rng)
        })?;
        out.push(check);
    }
    Ok(out)
}

/// Random three-layer scalar network: linear → sigmoid → linear → relu →
/// linear → mean of squares.
pub fn check_random_network(seed: u64, step: f64) -> Result<GradCheck> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let inputs = vec![
        uniform(&mut rng, &[4, 5], -1.0, 1.0),
        uniform(&mut rng, &[6, 5], -1.0, 1.0),
        uniform(&mut rng, &[6], -1.0, 1.0),
        uniform(&mut rng, &[6, 6], -1.0, 1.0),
        uniform(&mut rng, &[3, 6], -1.0, 1.0),
    ];
    check_gradients("random_network", &inputs, step, None, |g, x| {
        let h = g.linear(x[0], x[1], Some(x[2]))?;
        let h = g.sigmoid(h)?;
        let h = g.matmul_t(h, x[3], false, true)?;
        let h = g.relu(h)?;
        let h = g.matmul_t(h, x[4], false, true)?;
        let h = g.mul(h, h)?;
        g.mean(h)
    })
}
