//! Central finite-difference verification of the backward pass.
//!
//! The scalar probed is `L = sum(r * f(inputs, params))` for a fixed random
//! projection `r`, so one backward call seeded with `r` yields every analytic
//! partial derivative, and each numeric partial costs two forward calls.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::autodiff::graph::{Fault, Graph, NodeId};
use crate::autodiff::store::ParamStore;
use crate::error::Result;
use crate::ops::{BatchNormConfig, Mode, Padding, RunningStats};
use crate::optim::mse_loss;
use crate::rng::RngStream;
use crate::tensor::Tensor;

/// Denominator floor for the relative error, so exact zeros on both sides
/// compare as equal and sub-floor gradients are judged absolutely.
pub const RELATIVE_FLOOR: f64 = 1e-6;

/// Per-op pass threshold used by [`run_suite`].
pub const SUITE_THRESHOLD: f64 = 1e-4;

#[derive(Clone, Copy, Debug)]
pub struct GradCheckOptions {
    pub epsilon: f64,
    pub projection_seed: u64,
    pub fault: Option<Fault>,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            epsilon: 1e-6,
            projection_seed: 0x5eed,
            fault: None,
        }
    }
}

#[derive(Clone, Debug)]
pub struct GradCheckResult {
    pub max_rel_error: f64,
    /// Which tensor (and flat index) produced the worst error.
    pub worst: String,
    pub checked: usize,
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(RELATIVE_FLOOR)
}

fn random_tensor(shape: &[usize], rng: &mut impl Rng) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.sample(StandardNormal))
}

/// Compares backward-pass gradients of `op` against central differences for
/// every element of every input and every parameter in `params`.
pub fn grad_check<F>(op: F, inputs: &[Tensor<f64>], params: &ParamStore<f64>, opts: &GradCheckOptions) -> Result<GradCheckResult>
where
    F: Fn(&mut Graph<'_, f64>, &[NodeId]) -> Result<NodeId>,
{
    fn new_graph<'p>(store: &'p ParamStore<f64>, fault: Option<Fault>) -> Graph<'p, f64> {
        let g = Graph::new(store, Mode::Train);
        match fault {
            Some(f) => g.with_fault(f),
            None => g,
        }
    }
    let projection = |shape: &[usize]| random_tensor(shape, &mut RngStream::new(opts.projection_seed, 0).rng());
    let loss = |store: &ParamStore<f64>, xs: &[Tensor<f64>]| -> Result<f64> {
        let mut g = new_graph(store, opts.fault);
        let ids: Vec<NodeId> = xs.iter().enumerate().map(|(i, x)| g.input(format!("x{i}"), x.clone())).collect();
        let out = op(&mut g, &ids)?;
        let value = g.value(out);
        let proj = projection(value.shape());
        Ok(value.data().iter().zip(proj.data()).map(|(a, b)| a * b).sum())
    };

    let mut g = new_graph(params, opts.fault);
    let ids: Vec<NodeId> = inputs.iter().enumerate().map(|(i, x)| g.input(format!("x{i}"), x.clone())).collect();
    let out = op(&mut g, &ids)?;
    let proj = projection(g.value(out).shape());
    let grads = g.backward(out, &proj)?;
    drop(g);

    let eps = opts.epsilon;
    let mut result = GradCheckResult {
        max_rel_error: 0.0,
        worst: String::new(),
        checked: 0,
    };
    let mut record = |label: String, a: f64, n: f64| {
        let e = relative_error(a, n);
        result.checked += 1;
        if e > result.max_rel_error || result.worst.is_empty() {
            result.max_rel_error = e;
            result.worst = label;
        }
    };

    for (k, x) in inputs.iter().enumerate() {
        let name = format!("x{k}");
        let zeros = Tensor::zeros(x.shape());
        let analytic = grads.input(&name).unwrap_or(&zeros);
        for i in 0..x.len() {
            let mut xs = inputs.to_vec();
            xs[k].data_mut()[i] = x.data()[i] + eps;
            let hi = loss(params, &xs)?;
            xs[k].data_mut()[i] = x.data()[i] - eps;
            let lo = loss(params, &xs)?;
            record(format!("{name}[{i}]"), analytic.data()[i], (hi - lo) / (2.0 * eps));
        }
    }
    for (name, p) in params.iter() {
        let analytic = grads.param(name).expect("every store param has a gradient");
        for i in 0..p.len() {
            let mut store = params.clone();
            store.get_mut(name).unwrap().data_mut()[i] = p.data()[i] + eps;
            let hi = loss(&store, inputs)?;
            store.get_mut(name).unwrap().data_mut()[i] = p.data()[i] - eps;
            let lo = loss(&store, inputs)?;
            record(format!("{name}[{i}]"), analytic.data()[i], (hi - lo) / (2.0 * eps));
        }
    }
    Ok(result)
}

/// Finite-difference check of the MSE gradient with respect to the prediction.
pub fn grad_check_mse(pred: &Tensor<f64>, target: &Tensor<f64>, epsilon: f64) -> Result<GradCheckResult> {
    let analytic = mse_loss(pred, target)?.grad;
    let mut result = GradCheckResult {
        max_rel_error: 0.0,
        worst: String::new(),
        checked: 0,
    };
    for i in 0..pred.len() {
        let mut hi = pred.clone();
        hi.data_mut()[i] += epsilon;
        let mut lo = pred.clone();
        lo.data_mut()[i] -= epsilon;
        let fd = (mse_loss(&hi, target)?.value - mse_loss(&lo, target)?.value) / (2.0 * epsilon);
        let e = relative_error(analytic.data()[i], fd);
        result.checked += 1;
        if e >= result.max_rel_error {
            result.max_rel_error = e;
            result.worst = format!("pred[{i}]");
        }
    }
    Ok(result)
}

/// Ops covered by [`run_suite`], in report order.
pub const SUITE_OPS: [&str; 9] = [
    "conv2d",
    "dense",
    "batchnorm",
    "relu",
    "maxpool2d",
    "add",
    "global_avg_pool",
    "dropout",
    "mse_loss",
];

#[derive(Clone, Debug)]
pub struct OpReport {
    pub op: &'static str,
    pub cases: usize,
    pub max_rel_error: f64,
    pub worst_case: String,
    pub passed: bool,
}

fn params_from(entries: Vec<(&str, Tensor<f64>)>) -> ParamStore<f64> {
    let mut s = ParamStore::new();
    for (n, t) in entries {
        s.insert(n, t).expect("unique names");
    }
    s
}

/// Values at least `gap` apart, shuffled, so no window max is within reach of
/// a perturbation of another element.
fn separated_tensor(shape: &[usize], gap: f64, rng: &mut impl Rng) -> Tensor<f64> {
    let len: usize = shape.iter().product();
    let mut vals: Vec<f64> = (0..len).map(|i| (i as f64 - len as f64 / 2.0) * gap).collect();
    for i in (1..len).rev() {
        let j = rng.random_range(0..=i);
        vals.swap(i, j);
    }
    Tensor::new(shape.to_vec(), vals).expect("shape matches")
}

/// Runs `cases` randomized shapes per op at 64-bit and reports the worst
/// relative error per op against [`SUITE_THRESHOLD`].
pub fn run_suite(cases: usize, seed: u64, fault: Option<Fault>) -> Result<Vec<OpReport>> {
    let opts = GradCheckOptions {
        fault,
        ..GradCheckOptions::default()
    };
    let eps = opts.epsilon;
    let mut reports = Vec::new();
    for (op_index, &op) in SUITE_OPS.iter().enumerate() {
        let mut worst = GradCheckResult {
            max_rel_error: 0.0,
            worst: String::new(),
            checked: 0,
        };
        for case in 0..cases {
            let mut rng = RngStream::new(seed, op_index as u64).child(case as u64).rng();
            let res = match op {
                "conv2d" => {
                    let n = rng.random_range(1..=2);
                    let c = rng.random_range(1..=3);
                    let o = rng.random_range(1..=3);
                    let h = rng.random_range(3..=6);
                    let w = rng.random_range(3..=6);
                    let k = rng.random_range(1..=3);
                    let stride = (rng.random_range(1..=2), rng.random_range(1..=2));
                    let padding = if rng.random_bool(0.5) { Padding::Same } else { Padding::Valid };
                    let x = random_tensor(&[n, c, h, w], &mut rng);
                    let params = params_from(vec![
                        ("kernel", random_tensor(&[o, c, k, k], &mut rng)),
                        ("bias", random_tensor(&[o], &mut rng)),
                    ]);
                    grad_check(
                        |g, ids| {
                            let kern = g.param("kernel")?;
                            let b = g.param("bias")?;
                            g.conv2d(ids[0], kern, Some(b), stride, padding)
                        },
                        &[x],
                        &params,
                        &opts,
                    )?
                }
                "dense" => {
                    let n = rng.random_range(1..=4);
                    let f = rng.random_range(1..=6);
                    let o = rng.random_range(1..=4);
                    let x = random_tensor(&[n, f], &mut rng);
                    let params = params_from(vec![
                        ("w", random_tensor(&[f, o], &mut rng)),
                        ("b", random_tensor(&[o], &mut rng)),
                    ]);
                    grad_check(
                        |g, ids| {
                            let w = g.param("w")?;
                            let b = g.param("b")?;
                            g.dense(ids[0], w, b)
                        },
                        &[x],
                        &params,
                        &opts,
                    )?
                }
                "batchnorm" => {
                    let n = rng.random_range(2..=4);
                    let c = rng.random_range(1..=3);
                    let h = rng.random_range(1..=3);
                    let w = rng.random_range(1..=3);
                    let x = random_tensor(&[n, c, h, w], &mut rng);
                    let params = params_from(vec![
                        ("gamma", random_tensor(&[c], &mut rng)),
                        ("beta", random_tensor(&[c], &mut rng)),
                    ]);
                    grad_check(
                        |g, ids| {
                            let gamma = g.param("gamma")?;
                            let beta = g.param("beta")?;
                            let mut stats = RunningStats::new(c);
                            g.batchnorm(ids[0], gamma, beta, &mut stats, &BatchNormConfig::default())
                        },
                        &[x],
                        &params,
                        &opts,
                    )?
                }
                "relu" => {
                    let shape = [rng.random_range(1..=3), rng.random_range(1..=4), rng.random_range(1..=4)];
                    let x = Tensor::from_fn(&shape, |_| loop {
                        let v: f64 = rng.sample(StandardNormal);
                        if v.abs() >= 10.0 * eps {
                            break v;
                        }
                    });
                    grad_check(|g, ids| g.relu(ids[0]), &[x], &ParamStore::new(), &opts)?
                }
                "maxpool2d" => {
                    let n = rng.random_range(1..=2);
                    let c = rng.random_range(1..=2);
                    let h = rng.random_range(2..=6);
                    let w = rng.random_range(2..=6);
                    let win = (rng.random_range(1..=h.min(3)), rng.random_range(1..=w.min(3)));
                    let stride = rng.random_range(1..=2);
                    let padding = if rng.random_bool(0.5) { Padding::Same } else { Padding::Valid };
                    let x = separated_tensor(&[n, c, h, w], 0.05, &mut rng);
                    grad_check(|g, ids| g.maxpool2d(ids[0], win, stride, padding), &[x], &ParamStore::new(), &opts)?
                }
                "add" => {
                    let shape = [rng.random_range(1..=3), rng.random_range(1..=3), rng.random_range(1..=4)];
                    let a = random_tensor(&shape, &mut rng);
                    let b = random_tensor(&shape, &mut rng);
                    let fan_out = case % 2 == 1;
                    grad_check(
                        move |g, ids| {
                            let s = g.add(ids[0], ids[1])?;
                            if fan_out {
                                g.add(s, ids[0])
                            } else {
                                Ok(s)
                            }
                        },
                        &[a, b],
                        &ParamStore::new(),
                        &opts,
                    )?
                }
                "global_avg_pool" => {
                    let shape = [
                        rng.random_range(1..=3),
                        rng.random_range(1..=3),
                        rng.random_range(1..=4),
                        rng.random_range(1..=4),
                    ];
                    let x = random_tensor(&shape, &mut rng);
                    grad_check(|g, ids| g.global_avg_pool(ids[0]), &[x], &ParamStore::new(), &opts)?
                }
                "dropout" => {
                    let shape = [rng.random_range(1..=4), rng.random_range(1..=6)];
                    let rate = rng.random_range(0.1..0.7);
                    let stream = RngStream::new(seed ^ 0xd50, case as u64);
                    let x = random_tensor(&shape, &mut rng);
                    grad_check(|g, ids| g.dropout(ids[0], rate, stream), &[x], &ParamStore::new(), &opts)?
                }
                "mse_loss" => {
                    let n = rng.random_range(1..=8);
                    let pred = random_tensor(&[n, 1], &mut rng);
                    let target = random_tensor(&[n, 1], &mut rng);
                    grad_check_mse(&pred, &target, eps)?
                }
                _ => unreachable!("every suite op is handled"),
            };
            worst.checked += res.checked;
            if res.max_rel_error >= worst.max_rel_error {
                worst.max_rel_error = res.max_rel_error;
                worst.worst = format!("case {case}: {}", res.worst);
            }
        }
        reports.push(OpReport {
            op,
            cases,
            max_rel_error: worst.max_rel_error,
            worst_case: worst.worst,
            passed: worst.max_rel_error < SUITE_THRESHOLD,
        });
    }
    Ok(reports)
}
