//! Finite-difference gradient verification.
//!
//! [`grad_check`] exercises one named primitive on a battery of at least five
//! input shapes, comparing analytic reverse-mode gradients against central
//! finite differences. Inputs for kinked primitives (relu, prelu, max-pool)
//! are sampled away from the non-differentiable points.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::graph::{Graph, Value};
use super::ops::ConvSpec;
use super::{Scalar, Tensor};

/// Outcome of checking one primitive (or one custom case).
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub primitive: String,
    pub dtype: &'static str,
    /// Number of input configurations exercised.
    pub cases: usize,
    pub max_rel_err: f64,
    pub tolerance: f64,
    pub pass: bool,
}

/// All primitive names [`grad_check`] understands.
pub fn primitive_names() -> Vec<&'static str> {
    vec![
        "relu",
        "sigmoid",
        "silu",
        "gelu",
        "prelu",
        "psilu",
        "pssilu",
        "add",
        "mul",
        "sum",
        "conv2d",
        "batch_norm_train",
        "batch_norm_eval",
        "instance_norm",
        "maxpool2d",
        "global_avg_pool",
        "linear",
        "concat_channels",
        "scale_channels",
        "softmax_cross_entropy",
    ]
}

type Build<T> = Box<dyn Fn(&mut Graph<T>, &[Value]) -> Value>;

/// Compares analytic and central-difference gradients for one computation.
///
/// `build` realizes the computation from leaf values; non-scalar roots are
/// summed to form the backward root. Both sides run in `T`, so this is most
/// meaningful at f64. The relative error is
/// |a − n| / max(|a| + |n|, CHECK_FLOOR), maximized over every element of
/// every input.
pub fn grad_check_case<T: Scalar>(
    name: &str,
    inputs: &[Tensor<T>],
    tolerance: f64,
    build: impl Fn(&mut Graph<T>, &[Value]) -> Value,
) -> GradCheckReport {
    let eval = |tensors: &[Tensor<T>]| -> f64 {
        let mut g = Graph::new();
        let leaves: Vec<Value> = tensors.iter().map(|t| g.leaf(t.clone())).collect();
        let mut root = build(&mut g, &leaves);
        if g.value(root).numel() != 1 {
            root = g.sum(root);
        }
        g.value(root).item().to_f64()
    };

    let mut g = Graph::new();
    let leaves: Vec<Value> = inputs.iter().map(|t| g.leaf(t.clone())).collect();
    let mut root = build(&mut g, &leaves);
    if g.value(root).numel() != 1 {
        root = g.sum(root);
    }
    assert!(
        g.value(root).all_finite(),
        "{name}: non-finite forward value"
    );
    let grads = g.backward(root);
    let analytic: Vec<Tensor<T>> = leaves
        .iter()
        .zip(inputs)
        .map(|(v, t)| grads.wrt_or_zeros(*v, t.shape()))
        .collect();

    let mut max_rel: f64 = 0.0;
    let mut work: Vec<Tensor<T>> = inputs.to_vec();
    for i in 0..inputs.len() {
        for e in 0..inputs[i].numel() {
            let x0 = inputs[i].data()[e].to_f64();
            let h = T::FD_STEP * x0.abs().max(1.0);
            let xp = T::from_f64(x0 + h);
            let xm = T::from_f64(x0 - h);
            work[i].data_mut()[e] = xp;
            let fp = eval(&work);
            work[i].data_mut()[e] = xm;
            let fm = eval(&work);
            work[i].data_mut()[e] = inputs[i].data()[e];
            let span = xp.to_f64() - xm.to_f64();
            let numeric = (fp - fm) / span;
            let ana = analytic[i].data()[e].to_f64();
            let rel =
                (ana - numeric).abs() / (ana.abs() + numeric.abs()).max(T::CHECK_FLOOR);
            if rel > max_rel {
                max_rel = rel;
            }
        }
    }

    GradCheckReport {
        primitive: name.to_string(),
        dtype: T::DTYPE,
        cases: 1,
        max_rel_err: max_rel,
        tolerance,
        pass: max_rel < tolerance,
    }
}

/// Uniform samples with |v| ≥ `margin` (for kinked primitives).
fn signed_away<T: Scalar>(
    shape: &[usize],
    margin: f64,
    rng: &mut ChaCha8Rng,
) -> Tensor<T> {
    let data = (0..shape.iter().product::<usize>())
        .map(|_| {
            let mag = rng.gen_range(margin..1.0);
            let sign = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
            T::from_f64(sign * mag)
        })
        .collect();
    Tensor::new(shape.to_vec(), data)
}

/// A shuffled grid of values with pairwise gaps ≥ 0.01 (keeps max-pool
/// argmaxes stable under finite-difference probes).
fn distinct_values<T: Scalar>(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<T> {
    let n: usize = shape.iter().product();
    let mut vals: Vec<f64> = (0..n).map(|i| i as f64 * 0.01).collect();
    for i in (1..n).rev() {
        let j = rng.gen_range(0..=i);
        vals.swap(i, j);
    }
    Tensor::new(
        shape.to_vec(),
        vals.into_iter().map(T::from_f64).collect(),
    )
}

fn uniform<T: Scalar>(shape: &[usize], lo: f64, hi: f64, rng: &mut ChaCha8Rng) -> Tensor<T> {
    Tensor::rand_uniform(shape.to_vec(), lo, hi, rng)
}

/// Runs the standard battery (≥ 5 input configurations) for one primitive.
///
/// The analytic gradient is computed in `T`; the central-difference
/// reference is computed by an identically-seeded f64 twin of the battery,
/// so the probe resolves small derivatives even when `T` is f32. Panics on
/// unknown primitive names; see [`primitive_names`].
pub fn grad_check<T: Scalar>(primitive: &str, seed: u64, tolerance: f64) -> GradCheckReport {
    let cases = battery::<T>(primitive, seed);
    let cases_ref = battery::<f64>(primitive, seed);
    let n_cases = cases.len();
    let mut max_rel: f64 = 0.0;

    for ((inputs, build), (_, build_ref)) in cases.iter().zip(&cases_ref) {
        // Analytic side in T.
        let mut g = Graph::new();
        let leaves: Vec<Value> = inputs.iter().map(|t| g.leaf(t.clone())).collect();
        let mut root = build(&mut g, &leaves);
        if g.value(root).numel() != 1 {
            root = g.sum(root);
        }
        assert!(
            g.value(root).all_finite(),
            "{primitive}: non-finite forward value"
        );
        let grads = g.backward(root);
        let analytic: Vec<Tensor<T>> = leaves
            .iter()
            .zip(inputs)
            .map(|(v, t)| grads.wrt_or_zeros(*v, t.shape()))
            .collect();

        // Numeric side in f64, at the same (T-quantized) input point.
        let inputs64: Vec<Tensor<f64>> = inputs.iter().map(|t| t.cast::<f64>()).collect();
        let eval = |tensors: &[Tensor<f64>]| -> f64 {
            let mut g = Graph::new();
            let leaves: Vec<Value> = tensors.iter().map(|t| g.leaf(t.clone())).collect();
            let mut root = build_ref(&mut g, &leaves);
            if g.value(root).numel() != 1 {
                root = g.sum(root);
            }
            g.value(root).item()
        };
        let mut work = inputs64.clone();
        for i in 0..inputs64.len() {
            for e in 0..inputs64[i].numel() {
                let x0 = inputs64[i].data()[e];
                let h = f64::FD_STEP * x0.abs().max(1.0);
                work[i].data_mut()[e] = x0 + h;
                let fp = eval(&work);
                work[i].data_mut()[e] = x0 - h;
                let fm = eval(&work);
                work[i].data_mut()[e] = x0;
                let numeric = (fp - fm) / (2.0 * h);
                let ana = analytic[i].data()[e].to_f64();
                let rel =
                    (ana - numeric).abs() / (ana.abs() + numeric.abs()).max(T::CHECK_FLOOR);
                if rel > max_rel {
                    max_rel = rel;
                }
            }
        }
    }

    GradCheckReport {
        primitive: primitive.to_string(),
        dtype: T::DTYPE,
        cases: n_cases,
        max_rel_err: max_rel,
        tolerance,
        pass: max_rel < tolerance,
    }
}

/// The standard input battery for one primitive: at least five input
/// configurations, sampled away from non-differentiable points.
fn battery<T: Scalar>(primitive: &str, seed: u64) -> Vec<(Vec<Tensor<T>>, Build<T>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shapes: [&[usize]; 5] = [&[7], &[3, 4], &[2, 3, 5], &[2, 3, 4, 4], &[11, 2]];

    let mut cases: Vec<(Vec<Tensor<T>>, Build<T>)> = Vec::new();
    match primitive {
        "relu" | "prelu" => {
            for shape in shapes {
                let x = signed_away::<T>(shape, 0.05, &mut rng);
                if primitive == "relu" {
                    cases.push((vec![x], Box::new(|g, l| g.relu(l[0]))));
                } else {
                    let alpha = uniform::<T>(&[1], 0.1, 0.6, &mut rng);
                    cases.push((vec![x, alpha], Box::new(|g, l| g.prelu(l[0], l[1]))));
                }
            }
        }
        "sigmoid" | "silu" | "gelu" => {
            for shape in shapes {
                let x = uniform::<T>(shape, -2.0, 2.0, &mut rng);
                let b: Build<T> = match primitive {
                    "sigmoid" => Box::new(|g, l| g.sigmoid(l[0])),
                    "silu" => Box::new(|g, l| g.silu(l[0])),
                    _ => Box::new(|g, l| g.gelu(l[0])),
                };
                cases.push((vec![x], b));
            }
        }
        "psilu" => {
            for shape in shapes {
                let x = uniform::<T>(shape, -2.0, 2.0, &mut rng);
                let a = uniform::<T>(&[1], 0.5, 1.5, &mut rng);
                cases.push((vec![x, a], Box::new(|g, l| g.psilu(l[0], l[1]))));
            }
        }
        "pssilu" => {
            for shape in shapes {
                let x = uniform::<T>(shape, -2.0, 2.0, &mut rng);
                let a = rng.gen_range(0.5..1.5);
                let b = rng.gen_range(-0.3..0.3);
                let ab = Tensor::new(vec![2], vec![T::from_f64(a), T::from_f64(b)]);
                cases.push((vec![x, ab], Box::new(|g, l| g.pssilu(l[0], l[1]))));
            }
        }
        "add" | "mul" => {
            for shape in shapes {
                let a = uniform::<T>(shape, -1.0, 1.0, &mut rng);
                let b = uniform::<T>(shape, -1.0, 1.0, &mut rng);
                let build: Build<T> = if primitive == "add" {
                    Box::new(|g, l| g.add(l[0], l[1]))
                } else {
                    Box::new(|g, l| g.mul(l[0], l[1]))
                };
                cases.push((vec![a, b], build));
            }
        }
        "sum" => {
            for shape in shapes {
                let x = uniform::<T>(shape, -1.0, 1.0, &mut rng);
                cases.push((vec![x], Box::new(|g, l| g.sum(l[0]))));
            }
        }
        "conv2d" => {
            // (x shape, w shape, stride, padding, dilation, groups)
            let configs: [([usize; 4], [usize; 4], ConvSpec); 5] = [
                (
                    [1, 1, 5, 5],
                    [1, 1, 3, 3],
                    ConvSpec { stride: 1, padding: 1, dilation: 1, groups: 1 },
                ),
                (
                    [2, 3, 8, 8],
                    [4, 3, 3, 3],
                    ConvSpec { stride: 2, padding: 1, dilation: 1, groups: 1 },
                ),
                (
                    [2, 4, 6, 6],
                    [4, 2, 3, 3],
                    ConvSpec { stride: 1, padding: 2, dilation: 2, groups: 2 },
                ),
                (
                    [1, 2, 7, 7],
                    [3, 2, 5, 5],
                    ConvSpec { stride: 2, padding: 2, dilation: 1, groups: 1 },
                ),
                (
                    [2, 6, 5, 5],
                    [6, 2, 1, 1],
                    ConvSpec { stride: 1, padding: 0, dilation: 1, groups: 3 },
                ),
            ];
            for (xs, ws, spec) in configs {
                let x = uniform::<T>(&xs, -1.0, 1.0, &mut rng);
                let w = uniform::<T>(&ws, -0.5, 0.5, &mut rng);
                cases.push((
                    vec![x, w],
                    Box::new(move |g, l| g.conv2d(l[0], l[1], &spec)),
                ));
            }
        }
        "batch_norm_train" | "batch_norm_eval" => {
            let xshapes: [[usize; 4]; 5] =
                [[2, 3, 4, 4], [3, 2, 3, 3], [2, 1, 5, 5], [4, 2, 2, 2], [2, 5, 2, 1]];
            for xs in xshapes {
                let c = xs[1];
                let x = uniform::<T>(&xs, -1.5, 1.5, &mut rng);
                let gamma = uniform::<T>(&[c], 0.5, 1.5, &mut rng);
                let beta = uniform::<T>(&[c], -0.5, 0.5, &mut rng);
                if primitive == "batch_norm_train" {
                    // Sum-of-output is constant in x for a standardizing op;
                    // weight the output so the probe sees a real derivative.
                    let wt = uniform::<T>(&xs, -1.0, 1.0, &mut rng);
                    cases.push((
                        vec![x, gamma, beta],
                        Box::new(move |g, l| {
                            let y = g.batch_norm_train(l[0], l[1], l[2], 1e-5).0;
                            let w = g.leaf(wt.clone());
                            g.mul(y, w)
                        }),
                    ));
                } else {
                    let mean = uniform::<T>(&[c], -0.5, 0.5, &mut rng);
                    let var = uniform::<T>(&[c], 0.5, 1.5, &mut rng);
                    cases.push((
                        vec![x, gamma, beta],
                        Box::new(move |g, l| {
                            g.batch_norm_eval(l[0], l[1], l[2], &mean, &var, 1e-5)
                        }),
                    ));
                }
            }
        }
        "instance_norm" => {
            let xshapes: [[usize; 4]; 5] =
                [[2, 3, 4, 4], [1, 2, 3, 3], [2, 1, 5, 5], [3, 2, 2, 2], [1, 4, 1, 6]];
            for xs in xshapes {
                let x = uniform::<T>(&xs, -1.5, 1.5, &mut rng);
                let wt = uniform::<T>(&xs, -1.0, 1.0, &mut rng);
                cases.push((
                    vec![x],
                    Box::new(move |g, l| {
                        let y = g.instance_norm(l[0], 1e-5);
                        let w = g.leaf(wt.clone());
                        g.mul(y, w)
                    }),
                ));
            }
        }
        "maxpool2d" => {
            let configs: [([usize; 4], usize, usize, usize); 5] = [
                ([1, 1, 4, 4], 2, 2, 0),
                ([2, 2, 7, 7], 3, 2, 1),
                ([1, 3, 5, 5], 3, 1, 1),
                ([2, 1, 6, 6], 2, 1, 0),
                ([1, 2, 9, 9], 3, 3, 0),
            ];
            for (xs, k, s, p) in configs {
                let x = distinct_values::<T>(&xs, &mut rng);
                cases.push((
                    vec![x],
                    Box::new(move |g, l| g.maxpool2d(l[0], k, s, p)),
                ));
            }
        }
        "global_avg_pool" => {
            let xshapes: [[usize; 4]; 5] =
                [[2, 3, 4, 4], [1, 2, 3, 3], [2, 1, 5, 5], [3, 2, 2, 2], [1, 4, 1, 1]];
            for xs in xshapes {
                let x = uniform::<T>(&xs, -1.0, 1.0, &mut rng);
                cases.push((vec![x], Box::new(|g, l| g.global_avg_pool(l[0]))));
            }
        }
        "linear" => {
            let configs: [(usize, usize, usize, bool); 5] = [
                (2, 3, 4, true),
                (1, 5, 2, false),
                (3, 4, 4, true),
                (4, 2, 1, false),
                (2, 7, 3, true),
            ];
            for (b, cin, cout, bias) in configs {
                let x = uniform::<T>(&[b, cin], -1.0, 1.0, &mut rng);
                let w = uniform::<T>(&[cout, cin], -0.5, 0.5, &mut rng);
                if bias {
                    let bt = uniform::<T>(&[cout], -0.5, 0.5, &mut rng);
                    cases.push((
                        vec![x, w, bt],
                        Box::new(|g, l| g.linear(l[0], l[1], Some(l[2]))),
                    ));
                } else {
                    cases.push((vec![x, w], Box::new(|g, l| g.linear(l[0], l[1], None))));
                }
            }
        }
        "concat_channels" => {
            let configs: [([usize; 4], [usize; 4]); 5] = [
                ([1, 1, 3, 3], [1, 2, 3, 3]),
                ([2, 3, 2, 2], [2, 1, 2, 2]),
                ([1, 4, 4, 4], [1, 4, 4, 4]),
                ([3, 2, 1, 5], [3, 3, 1, 5]),
                ([2, 5, 3, 1], [2, 2, 3, 1]),
            ];
            for (sa, sb) in configs {
                let a = uniform::<T>(&sa, -1.0, 1.0, &mut rng);
                let b = uniform::<T>(&sb, -1.0, 1.0, &mut rng);
                cases.push((vec![a, b], Box::new(|g, l| g.concat_channels(l[0], l[1]))));
            }
        }
        "scale_channels" => {
            let xshapes: [[usize; 4]; 5] =
                [[2, 3, 4, 4], [1, 2, 3, 3], [2, 1, 5, 5], [3, 2, 2, 2], [1, 4, 2, 1]];
            for xs in xshapes {
                let x = uniform::<T>(&xs, -1.0, 1.0, &mut rng);
                let s = uniform::<T>(&[xs[0], xs[1]], 0.1, 0.9, &mut rng);
                cases.push((vec![x, s], Box::new(|g, l| g.scale_channels(l[0], l[1]))));
            }
        }
        "softmax_cross_entropy" => {
            let configs: [(usize, usize); 5] = [(2, 3), (3, 5), (1, 4), (4, 2), (5, 7)];
            for (b, k) in configs {
                let logits = uniform::<T>(&[b, k], -2.0, 2.0, &mut rng);
                let labels: Vec<usize> = (0..b).map(|_| rng.gen_range(0..k)).collect();
                cases.push((
                    vec![logits],
                    Box::new(move |g, l| g.softmax_cross_entropy(l[0], &labels).0),
                ));
            }
        }
        other => panic!("unknown primitive {other:?}; see primitive_names()"),
    }

    cases
}
