//! Differentiable operators.
//!
//! Each op records a node whose backward closure maps the output gradient to
//! one gradient per parent. Backward math recomputes cheap intermediates
//! (e.g. the im2col buffer) instead of caching them, trading time for memory
//! at desk scale.

use super::graph::{Graph, Value};
use super::{dims2, dims4, Scalar, Tensor};

/// Convolution geometry. `padding` is applied symmetrically; effective
/// receptive extent per axis is `dilation * (kernel - 1) + 1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvSpec {
    pub stride: usize,
    pub padding: usize,
    pub dilation: usize,
    pub groups: usize,
}

impl Default for ConvSpec {
    fn default() -> Self {
        ConvSpec {
            stride: 1,
            padding: 0,
            dilation: 1,
            groups: 1,
        }
    }
}

/// Batch statistics produced by a train-mode batch-norm node, for updating
/// running estimates outside the tape.
#[derive(Debug, Clone)]
pub struct BatchStats<T> {
    pub mean: Tensor<T>,
    /// Unbiased (n−1) variance, falling back to biased when the per-channel
    /// sample count is 1.
    pub var: Tensor<T>,
}

pub(crate) fn conv_out_len(input: usize, kernel: usize, stride: usize, padding: usize, dilation: usize) -> usize {
    let span = dilation * (kernel - 1) + 1;
    assert!(
        input + 2 * padding >= span,
        "conv kernel span {span} exceeds padded input {input}+2*{padding}"
    );
    (input + 2 * padding - span) / stride + 1
}

/// Gathers one (batch, group) slice of `x` into a column buffer of shape
/// `[cing*kh*kw, oh*ow]`, zero-filling out-of-bounds taps.
#[allow(clippy::too_many_arguments)]
fn im2col<T: Scalar>(
    x: &[T],
    batch: usize,
    group: usize,
    cin: usize,
    cing: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    oh: usize,
    ow: usize,
    spec: &ConvSpec,
) -> Vec<T> {
    let mut col = vec![T::ZERO; cing * kh * kw * oh * ow];
    let ohw = oh * ow;
    for ic in 0..cing {
        let xc = &x[((batch * cin + group * cing + ic) * h) * w..][..h * w];
        for ky in 0..kh {
            for kx in 0..kw {
                let crow = &mut col[((ic * kh + ky) * kw + kx) * ohw..][..ohw];
                for oy in 0..oh {
                    let iy = (oy * spec.stride + ky * spec.dilation) as isize - spec.padding as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let xrow = &xc[iy as usize * w..][..w];
                    let cout_row = &mut crow[oy * ow..][..ow];
                    for (ox, slot) in cout_row.iter_mut().enumerate() {
                        let ix =
                            (ox * spec.stride + kx * spec.dilation) as isize - spec.padding as isize;
                        if ix >= 0 && ix < w as isize {
                            *slot = xrow[ix as usize];
                        }
                    }
                }
            }
        }
    }
    col
}

/// Scatter-adds a column-buffer gradient back onto the input slice.
#[allow(clippy::too_many_arguments)]
fn col2im_acc<T: Scalar>(
    dcol: &[T],
    dx: &mut [T],
    batch: usize,
    group: usize,
    cin: usize,
    cing: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    oh: usize,
    ow: usize,
    spec: &ConvSpec,
) {
    let ohw = oh * ow;
    for ic in 0..cing {
        let dxc = &mut dx[((batch * cin + group * cing + ic) * h) * w..][..h * w];
        for ky in 0..kh {
            for kx in 0..kw {
                let crow = &dcol[((ic * kh + ky) * kw + kx) * ohw..][..ohw];
                for oy in 0..oh {
                    let iy = (oy * spec.stride + ky * spec.dilation) as isize - spec.padding as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let dxrow = &mut dxc[iy as usize * w..][..w];
                    let crow_oy = &crow[oy * ow..][..ow];
                    for (ox, &g) in crow_oy.iter().enumerate() {
                        let ix =
                            (ox * spec.stride + kx * spec.dilation) as isize - spec.padding as isize;
                        if ix >= 0 && ix < w as isize {
                            dxrow[ix as usize] += g;
                        }
                    }
                }
            }
        }
    }
}

/// c[i,j] += Σ_k a[i,k]·b[k,j]; a is ra×ca, b is ca×cb, c is ra×cb.
fn matmul_acc<T: Scalar>(a: &[T], b: &[T], c: &mut [T], ra: usize, ca: usize, cb: usize) {
    for i in 0..ra {
        let arow = &a[i * ca..][..ca];
        let crow = &mut c[i * cb..][..cb];
        for (k, &av) in arow.iter().enumerate() {
            let brow = &b[k * cb..][..cb];
            for (cj, &bv) in crow.iter_mut().zip(brow) {
                *cj += av * bv;
            }
        }
    }
}

/// c[i,k] += Σ_j a[i,j]·b[k,j]; a is ra×n, b is rb×n, c is ra×rb.
fn matmul_abt<T: Scalar>(a: &[T], b: &[T], c: &mut [T], ra: usize, n: usize, rb: usize) {
    for i in 0..ra {
        let arow = &a[i * n..][..n];
        let crow = &mut c[i * rb..][..rb];
        for (k, cv) in crow.iter_mut().enumerate() {
            let brow = &b[k * n..][..n];
            let mut acc = T::ZERO;
            for (&av, &bv) in arow.iter().zip(brow) {
                acc += av * bv;
            }
            *cv += acc;
        }
    }
}

/// c[k,j] += Σ_i a[i,k]·b[i,j]; a is ra×ca, b is ra×cb, c is ca×cb.
fn matmul_atb<T: Scalar>(a: &[T], b: &[T], c: &mut [T], ra: usize, ca: usize, cb: usize) {
    for i in 0..ra {
        let arow = &a[i * ca..][..ca];
        let brow = &b[i * cb..][..cb];
        for (k, &av) in arow.iter().enumerate() {
            let crow = &mut c[k * cb..][..cb];
            for (cj, &bv) in crow.iter_mut().zip(brow) {
                *cj += av * bv;
            }
        }
    }
}

impl<T: Scalar> Graph<T> {
    fn unary(
        &mut self,
        x: Value,
        f: impl Fn(T) -> T,
        df: impl Fn(T) -> T + 'static,
    ) -> Value {
        let xt = self.value(x).clone();
        let y = xt.map(f);
        let grad = move |g: &Tensor<T>| vec![g.zip(&xt, |gv, xv| gv * df(xv))];
        self.push(y, vec![x], Some(Box::new(grad)))
    }

    /// Elementwise sum of two same-shaped tensors.
    pub fn add(&mut self, a: Value, b: Value) -> Value {
        let at = self.value(a).clone();
        let bt = self.value(b).clone();
        let y = at.zip(&bt, |u, v| u + v);
        let grad = move |g: &Tensor<T>| vec![g.clone(), g.clone()];
        self.push(y, vec![a, b], Some(Box::new(grad)))
    }

    /// Elementwise product of two same-shaped tensors.
    pub fn mul(&mut self, a: Value, b: Value) -> Value {
        let at = self.value(a).clone();
        let bt = self.value(b).clone();
        let y = at.zip(&bt, |u, v| u * v);
        let (ac, bc) = (at, bt);
        let grad = move |g: &Tensor<T>| {
            vec![g.zip(&bc, |gv, v| gv * v), g.zip(&ac, |gv, v| gv * v)]
        };
        self.push(y, vec![a, b], Some(Box::new(grad)))
    }

    /// Sum of all elements, producing a `[1]` tensor (a backward root).
    pub fn sum(&mut self, x: Value) -> Value {
        let xt = self.value(x).clone();
        let total = xt.data().iter().fold(T::ZERO, |acc, &v| acc + v);
        let shape = xt.shape().to_vec();
        let grad = move |g: &Tensor<T>| vec![Tensor::full(shape.clone(), g.item())];
        self.push(Tensor::scalar(total), vec![x], Some(Box::new(grad)))
    }

    /// Rectified linear unit; the derivative at exactly 0 is 0.
    pub fn relu(&mut self, x: Value) -> Value {
        self.unary(
            x,
            |v| v.maximum(T::ZERO),
            |v| if v > T::ZERO { T::ONE } else { T::ZERO },
        )
    }

    pub fn sigmoid(&mut self, x: Value) -> Value {
        self.unary(x, Scalar::sigmoid, |v| {
            let s = v.sigmoid();
            s * (T::ONE - s)
        })
    }

    /// x·σ(x).
    pub fn silu(&mut self, x: Value) -> Value {
        self.unary(
            x,
            |v| v * v.sigmoid(),
            |v| {
                let s = v.sigmoid();
                s * (T::ONE + v * (T::ONE - s))
            },
        )
    }

    /// Exact (erf-based) GELU: 0.5·x·(1 + erf(x/√2)).
    pub fn gelu(&mut self, x: Value) -> Value {
        let half = T::from_f64(0.5);
        let inv_sqrt2 = T::from_f64(std::f64::consts::FRAC_1_SQRT_2);
        // φ(x) = exp(−x²/2)/√(2π), the standard normal density.
        let inv_sqrt_2pi = T::from_f64(1.0 / (2.0 * std::f64::consts::PI).sqrt());
        self.unary(
            x,
            move |v| half * v * (T::ONE + (v * inv_sqrt2).erf()),
            move |v| {
                let cdf = half * (T::ONE + (v * inv_sqrt2).erf());
                let pdf = (-(v * v) * half).exp() * inv_sqrt_2pi;
                cdf + v * pdf
            },
        )
    }

    /// Parametric ReLU with one learned slope (`alpha` has shape `[1]`):
    /// y = x for x > 0, α·x otherwise.
    pub fn prelu(&mut self, x: Value, alpha: Value) -> Value {
        let xt = self.value(x).clone();
        let at = self.value(alpha).clone();
        assert_eq!(at.numel(), 1, "prelu alpha must have one element");
        let a = at.item();
        let y = xt.map(|v| if v > T::ZERO { v } else { a * v });
        let grad = move |g: &Tensor<T>| {
            let dx = g.zip(&xt, |gv, xv| if xv > T::ZERO { gv } else { gv * a });
            let mut da = T::ZERO;
            for (&gv, &xv) in g.data().iter().zip(xt.data()) {
                if xv <= T::ZERO {
                    da += gv * xv;
                }
            }
            vec![dx, Tensor::scalar(da)]
        };
        self.push(y, vec![x, alpha], Some(Box::new(grad)))
    }

    /// Parametric SiLU with a learned input gain (`a` has shape `[1]`):
    /// y = x·σ(a·x).
    pub fn psilu(&mut self, x: Value, a: Value) -> Value {
        let xt = self.value(x).clone();
        let at = self.value(a).clone();
        assert_eq!(at.numel(), 1, "psilu gain must have one element");
        let av = at.item();
        let y = xt.map(|v| v * (av * v).sigmoid());
        let grad = move |g: &Tensor<T>| {
            let mut da = T::ZERO;
            let dx = g.zip(&xt, |gv, xv| {
                let s = (av * xv).sigmoid();
                let sp = s * (T::ONE - s);
                gv * (s + av * xv * sp)
            });
            for (&gv, &xv) in g.data().iter().zip(xt.data()) {
                let s = (av * xv).sigmoid();
                da += gv * xv * xv * s * (T::ONE - s);
            }
            vec![dx, Tensor::scalar(da)]
        };
        self.push(y, vec![x, a], Some(Box::new(grad)))
    }

    /// Shifted parametric SiLU with learned gain and shift (`ab` has shape
    /// `[2]`, holding a then b): y = x·(σ(a·x) − b)/(1 − b). Requires b ≠ 1.
    pub fn pssilu(&mut self, x: Value, ab: Value) -> Value {
        let xt = self.value(x).clone();
        let abt = self.value(ab).clone();
        assert_eq!(abt.numel(), 2, "pssilu parameters must have two elements");
        let a = abt.data()[0];
        let b = abt.data()[1];
        let denom = T::ONE - b;
        assert!(
            denom != T::ZERO,
            "pssilu shift parameter b must not equal 1"
        );
        let y = xt.map(|v| v * ((a * v).sigmoid() - b) / denom);
        let grad = move |g: &Tensor<T>| {
            let mut da = T::ZERO;
            let mut db = T::ZERO;
            let dx = g.zip(&xt, |gv, xv| {
                let s = (a * xv).sigmoid();
                let sp = s * (T::ONE - s);
                gv * ((s - b) / denom + a * xv * sp / denom)
            });
            for (&gv, &xv) in g.data().iter().zip(xt.data()) {
                let s = (a * xv).sigmoid();
                let sp = s * (T::ONE - s);
                da += gv * xv * xv * sp / denom;
                db += gv * xv * (s - T::ONE) / (denom * denom);
            }
            vec![dx, Tensor::new(vec![2], vec![da, db])]
        };
        self.push(y, vec![x, ab], Some(Box::new(grad)))
    }

    /// Grouped 2-d convolution, no bias. `x` is `[B, Cin, H, W]`, `w` is
    /// `[Cout, Cin/groups, K, K]`.
    pub fn conv2d(&mut self, x: Value, w: Value, spec: &ConvSpec) -> Value {
        let xt = self.value(x).clone();
        let wt = self.value(w).clone();
        let (bsz, cin, h, wd) = dims4(xt.shape());
        let (cout, cing, kh, kw) = dims4(wt.shape());
        let g = spec.groups;
        assert!(g >= 1, "groups must be positive");
        assert!(
            cin % g == 0 && cout % g == 0,
            "channels (in {cin}, out {cout}) not divisible by groups {g}"
        );
        assert_eq!(cing, cin / g, "conv weight expects {} input channels per group", cin / g);
        assert!(spec.stride >= 1 && spec.dilation >= 1);
        let oh = conv_out_len(h, kh, spec.stride, spec.padding, spec.dilation);
        let ow = conv_out_len(wd, kw, spec.stride, spec.padding, spec.dilation);
        let coutg = cout / g;
        let ckk = cing * kh * kw;
        let ohw = oh * ow;

        let mut y = vec![T::ZERO; bsz * cout * ohw];
        for b in 0..bsz {
            for gi in 0..g {
                let col = im2col(xt.data(), b, gi, cin, cing, h, wd, kh, kw, oh, ow, spec);
                let wg = &wt.data()[gi * coutg * ckk..][..coutg * ckk];
                let yg = &mut y[(b * cout + gi * coutg) * ohw..][..coutg * ohw];
                matmul_acc(wg, &col, yg, coutg, ckk, ohw);
            }
        }
        let out = Tensor::new(vec![bsz, cout, oh, ow], y);

        let spec_c = *spec;
        let grad = move |gout: &Tensor<T>| {
            let mut dx = vec![T::ZERO; xt.numel()];
            let mut dw = vec![T::ZERO; wt.numel()];
            for b in 0..bsz {
                for gi in 0..g {
                    let col =
                        im2col(xt.data(), b, gi, cin, cing, h, wd, kh, kw, oh, ow, &spec_c);
                    let gg = &gout.data()[(b * cout + gi * coutg) * ohw..][..coutg * ohw];
                    let wg = &wt.data()[gi * coutg * ckk..][..coutg * ckk];
                    matmul_abt(
                        gg,
                        &col,
                        &mut dw[gi * coutg * ckk..][..coutg * ckk],
                        coutg,
                        ohw,
                        ckk,
                    );
                    let mut dcol = vec![T::ZERO; ckk * ohw];
                    matmul_atb(wg, gg, &mut dcol, coutg, ckk, ohw);
                    col2im_acc(
                        &dcol, &mut dx, b, gi, cin, cing, h, wd, kh, kw, oh, ow, &spec_c,
                    );
                }
            }
            vec![
                Tensor::new(xt.shape().to_vec(), dx),
                Tensor::new(wt.shape().to_vec(), dw),
            ]
        };
        self.push(out, vec![x, w], Some(Box::new(grad)))
    }

    /// Train-mode batch norm over `[B, C, H, W]`: normalizes with the batch's
    /// biased statistics, applies the affine pair, and reports the batch mean
    /// and unbiased variance for the caller's running estimates.
    pub fn batch_norm_train(
        &mut self,
        x: Value,
        gamma: Value,
        beta: Value,
        eps: f64,
    ) -> (Value, BatchStats<T>) {
        let xt = self.value(x).clone();
        let gt = self.value(gamma).clone();
        let bt = self.value(beta).clone();
        let (bsz, c, h, w) = dims4(xt.shape());
        assert_eq!(gt.shape(), [c], "batch-norm weight shape");
        assert_eq!(bt.shape(), [c], "batch-norm bias shape");
        let hw = h * w;
        let m = bsz * hw;
        let m_t = T::from_f64(m as f64);
        let eps_t = T::from_f64(eps);

        let mut mean = vec![T::ZERO; c];
        for b in 0..bsz {
            for ci in 0..c {
                let xs = &xt.data()[(b * c + ci) * hw..][..hw];
                let mut s = T::ZERO;
                for &v in xs {
                    s += v;
                }
                mean[ci] += s;
            }
        }
        for mv in &mut mean {
            *mv = *mv / m_t;
        }
        let mut var = vec![T::ZERO; c];
        for b in 0..bsz {
            for ci in 0..c {
                let xs = &xt.data()[(b * c + ci) * hw..][..hw];
                let mu = mean[ci];
                let mut s = T::ZERO;
                for &v in xs {
                    let d = v - mu;
                    s += d * d;
                }
                var[ci] += s;
            }
        }
        for vv in &mut var {
            *vv = *vv / m_t;
        }
        let inv_std: Vec<T> = var.iter().map(|&v| T::ONE / (v + eps_t).sqrt()).collect();

        let mut xhat = vec![T::ZERO; xt.numel()];
        let mut y = vec![T::ZERO; xt.numel()];
        for b in 0..bsz {
            for ci in 0..c {
                let base = (b * c + ci) * hw;
                let (mu, istd) = (mean[ci], inv_std[ci]);
                let (gw, gb) = (gt.data()[ci], bt.data()[ci]);
                for s in 0..hw {
                    let xh = (xt.data()[base + s] - mu) * istd;
                    xhat[base + s] = xh;
                    y[base + s] = gw * xh + gb;
                }
            }
        }
        let xhat_t = Tensor::new(xt.shape().to_vec(), xhat);
        let out = Tensor::new(xt.shape().to_vec(), y);

        let var_running: Vec<T> = if m > 1 {
            let corr = T::from_f64(m as f64 / (m - 1) as f64);
            var.iter().map(|&v| v * corr).collect()
        } else {
            var.clone()
        };
        let stats = BatchStats {
            mean: Tensor::new(vec![c], mean),
            var: Tensor::new(vec![c], var_running),
        };

        let xhat_g = xhat_t;
        let grad = move |g: &Tensor<T>| {
            let mut sg = vec![T::ZERO; c];
            let mut sgx = vec![T::ZERO; c];
            for b in 0..bsz {
                for ci in 0..c {
                    let base = (b * c + ci) * hw;
                    for s in 0..hw {
                        let gv = g.data()[base + s];
                        sg[ci] += gv;
                        sgx[ci] += gv * xhat_g.data()[base + s];
                    }
                }
            }
            let mut dx = vec![T::ZERO; g.numel()];
            for b in 0..bsz {
                for ci in 0..c {
                    let base = (b * c + ci) * hw;
                    let scale = gt.data()[ci] * inv_std[ci];
                    let (mg, mgx) = (sg[ci] / m_t, sgx[ci] / m_t);
                    for s in 0..hw {
                        let gv = g.data()[base + s];
                        let xh = xhat_g.data()[base + s];
                        dx[base + s] = scale * (gv - mg - xh * mgx);
                    }
                }
            }
            vec![
                Tensor::new(g.shape().to_vec(), dx),
                Tensor::new(vec![c], sgx),
                Tensor::new(vec![c], sg),
            ]
        };
        let v = self.push(out, vec![x, gamma, beta], Some(Box::new(grad)));
        (v, stats)
    }

    /// Eval-mode batch norm: normalizes with fixed running statistics.
    /// `mean` and `var` are constants, not graph nodes.
    pub fn batch_norm_eval(
        &mut self,
        x: Value,
        gamma: Value,
        beta: Value,
        mean: &Tensor<T>,
        var: &Tensor<T>,
        eps: f64,
    ) -> Value {
        let xt = self.value(x).clone();
        let gt = self.value(gamma).clone();
        let (bsz, c, h, w) = dims4(xt.shape());
        assert_eq!(gt.shape(), [c], "batch-norm weight shape");
        assert_eq!(self.value(beta).shape(), [c], "batch-norm bias shape");
        assert_eq!(mean.shape(), [c], "running mean shape");
        assert_eq!(var.shape(), [c], "running var shape");
        let hw = h * w;
        let eps_t = T::from_f64(eps);
        let inv_std: Vec<T> = var.data().iter().map(|&v| T::ONE / (v + eps_t).sqrt()).collect();
        let mean_v = mean.data().to_vec();
        let bt = self.value(beta).clone();

        let mut y = vec![T::ZERO; xt.numel()];
        for b in 0..bsz {
            for ci in 0..c {
                let base = (b * c + ci) * hw;
                let (mu, istd) = (mean_v[ci], inv_std[ci]);
                let (gw, gb) = (gt.data()[ci], bt.data()[ci]);
                for s in 0..hw {
                    y[base + s] = gw * (xt.data()[base + s] - mu) * istd + gb;
                }
            }
        }
        let out = Tensor::new(xt.shape().to_vec(), y);

        let grad = move |g: &Tensor<T>| {
            let mut dx = vec![T::ZERO; g.numel()];
            let mut dgamma = vec![T::ZERO; c];
            let mut dbeta = vec![T::ZERO; c];
            for b in 0..bsz {
                for ci in 0..c {
                    let base = (b * c + ci) * hw;
                    let (mu, istd) = (mean_v[ci], inv_std[ci]);
                    let gw = gt.data()[ci];
                    for s in 0..hw {
                        let gv = g.data()[base + s];
                        dx[base + s] = gv * gw * istd;
                        dgamma[ci] += gv * (xt.data()[base + s] - mu) * istd;
                        dbeta[ci] += gv;
                    }
                }
            }
            vec![
                Tensor::new(g.shape().to_vec(), dx),
                Tensor::new(vec![c], dgamma),
                Tensor::new(vec![c], dbeta),
            ]
        };
        self.push(out, vec![x, gamma, beta], Some(Box::new(grad)))
    }

    /// Affine-free instance norm: each `(batch, channel)` plane is normalized
    /// with its own statistics. Identical in train and eval.
    pub fn instance_norm(&mut self, x: Value, eps: f64) -> Value {
        let xt = self.value(x).clone();
        let (bsz, c, h, w) = dims4(xt.shape());
        let hw = h * w;
        let m_t = T::from_f64(hw as f64);
        let eps_t = T::from_f64(eps);

        let mut xhat = vec![T::ZERO; xt.numel()];
        let mut inv_std = vec![T::ZERO; bsz * c];
        for bc in 0..bsz * c {
            let xs = &xt.data()[bc * hw..][..hw];
            let mut mu = T::ZERO;
            for &v in xs {
                mu += v;
            }
            mu = mu / m_t;
            let mut var = T::ZERO;
            for &v in xs {
                let d = v - mu;
                var += d * d;
            }
            var = var / m_t;
            let istd = T::ONE / (var + eps_t).sqrt();
            inv_std[bc] = istd;
            for (s, &v) in xs.iter().enumerate() {
                xhat[bc * hw + s] = (v - mu) * istd;
            }
        }
        let xhat_t = Tensor::new(xt.shape().to_vec(), xhat);
        let out = xhat_t.clone();

        let grad = move |g: &Tensor<T>| {
            let mut dx = vec![T::ZERO; g.numel()];
            for bc in 0..bsz * c {
                let gs = &g.data()[bc * hw..][..hw];
                let xh = &xhat_t.data()[bc * hw..][..hw];
                let mut sg = T::ZERO;
                let mut sgx = T::ZERO;
                for (&gv, &xv) in gs.iter().zip(xh) {
                    sg += gv;
                    sgx += gv * xv;
                }
                let (mg, mgx) = (sg / m_t, sgx / m_t);
                let istd = inv_std[bc];
                for s in 0..hw {
                    dx[bc * hw + s] = istd * (gs[s] - mg - xh[s] * mgx);
                }
            }
            vec![Tensor::new(g.shape().to_vec(), dx)]
        };
        self.push(out, vec![x], Some(Box::new(grad)))
    }

    /// Max pooling with implicit −∞ padding; ties route the gradient to the
    /// first maximal element in scan order.
    pub fn maxpool2d(&mut self, x: Value, kernel: usize, stride: usize, padding: usize) -> Value {
        let xt = self.value(x).clone();
        let (bsz, c, h, w) = dims4(xt.shape());
        let oh = (h + 2 * padding - kernel) / stride + 1;
        let ow = (w + 2 * padding - kernel) / stride + 1;
        let mut y = vec![T::ZERO; bsz * c * oh * ow];
        let mut argmax = vec![usize::MAX; y.len()];
        for bc in 0..bsz * c {
            let xs = &xt.data()[bc * h * w..][..h * w];
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut best = T::ZERO;
                    let mut best_idx = usize::MAX;
                    for ky in 0..kernel {
                        let iy = (oy * stride + ky) as isize - padding as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        for kx in 0..kernel {
                            let ix = (ox * stride + kx) as isize - padding as isize;
                            if ix < 0 || ix >= w as isize {
                                continue;
                            }
                            let v = xs[iy as usize * w + ix as usize];
                            if best_idx == usize::MAX || v > best {
                                best = v;
                                best_idx = iy as usize * w + ix as usize;
                            }
                        }
                    }
                    assert!(
                        best_idx != usize::MAX,
                        "max-pool window contains no valid input"
                    );
                    let o = (bc * oh + oy) * ow + ox;
                    y[o] = best;
                    argmax[o] = bc * h * w + best_idx;
                }
            }
        }
        let out = Tensor::new(vec![bsz, c, oh, ow], y);
        let in_numel = xt.numel();
        let in_shape = xt.shape().to_vec();
        let grad = move |g: &Tensor<T>| {
            let mut dx = vec![T::ZERO; in_numel];
            for (o, &src) in argmax.iter().enumerate() {
                dx[src] += g.data()[o];
            }
            vec![Tensor::new(in_shape.clone(), dx)]
        };
        self.push(out, vec![x], Some(Box::new(grad)))
    }

    /// Spatial mean: `[B, C, H, W]` → `[B, C]`.
    pub fn global_avg_pool(&mut self, x: Value) -> Value {
        let xt = self.value(x).clone();
        let (bsz, c, h, w) = dims4(xt.shape());
        let hw = h * w;
        let m_t = T::from_f64(hw as f64);
        let mut y = vec![T::ZERO; bsz * c];
        for (bc, yv) in y.iter_mut().enumerate() {
            let xs = &xt.data()[bc * hw..][..hw];
            let mut s = T::ZERO;
            for &v in xs {
                s += v;
            }
            *yv = s / m_t;
        }
        let out = Tensor::new(vec![bsz, c], y);
        let in_shape = xt.shape().to_vec();
        let grad = move |g: &Tensor<T>| {
            let mut dx = vec![T::ZERO; bsz * c * hw];
            for bc in 0..bsz * c {
                let gv = g.data()[bc] / m_t;
                for s in 0..hw {
                    dx[bc * hw + s] = gv;
                }
            }
            vec![Tensor::new(in_shape.clone(), dx)]
        };
        self.push(out, vec![x], Some(Box::new(grad)))
    }

    /// Fully connected layer: `x` is `[B, Cin]`, `w` is `[Cout, Cin]`,
    /// optional `bias` is `[Cout]`; output `[B, Cout]`.
    pub fn linear(&mut self, x: Value, w: Value, bias: Option<Value>) -> Value {
        let xt = self.value(x).clone();
        let wt = self.value(w).clone();
        let (bsz, cin) = dims2(xt.shape());
        let (cout, cin_w) = dims2(wt.shape());
        assert_eq!(cin, cin_w, "linear input width mismatch");
        let bias_t = bias.map(|bv| {
            let t = self.value(bv).clone();
            assert_eq!(t.shape(), [cout], "linear bias shape");
            t
        });

        let mut y = vec![T::ZERO; bsz * cout];
        for b in 0..bsz {
            let xrow = &xt.data()[b * cin..][..cin];
            let yrow = &mut y[b * cout..][..cout];
            for (o, yv) in yrow.iter_mut().enumerate() {
                let wrow = &wt.data()[o * cin..][..cin];
                let mut acc = T::ZERO;
                for (&xv, &wv) in xrow.iter().zip(wrow) {
                    acc += xv * wv;
                }
                *yv = acc;
            }
            if let Some(bt) = &bias_t {
                for (yv, &bv) in yrow.iter_mut().zip(bt.data()) {
                    *yv += bv;
                }
            }
        }
        let out = Tensor::new(vec![bsz, cout], y);

        let has_bias = bias.is_some();
        let grad = move |g: &Tensor<T>| {
            let mut dx = vec![T::ZERO; bsz * cin];
            let mut dw = vec![T::ZERO; cout * cin];
            // dx = g · W ; dW = gᵀ · x
            matmul_acc(g.data(), wt.data(), &mut dx, bsz, cout, cin);
            matmul_atb(g.data(), xt.data(), &mut dw, bsz, cout, cin);
            let mut grads = vec![
                Tensor::new(vec![bsz, cin], dx),
                Tensor::new(vec![cout, cin], dw),
            ];
            if has_bias {
                let mut db = vec![T::ZERO; cout];
                for b in 0..bsz {
                    for (dv, &gv) in db.iter_mut().zip(&g.data()[b * cout..][..cout]) {
                        *dv += gv;
                    }
                }
                grads.push(Tensor::new(vec![cout], db));
            }
            grads
        };
        let mut parents = vec![x, w];
        if let Some(bv) = bias {
            parents.push(bv);
        }
        self.push(out, parents, Some(Box::new(grad)))
    }

    /// Concatenates two rank-4 tensors along the channel axis.
    pub fn concat_channels(&mut self, a: Value, b: Value) -> Value {
        let at = self.value(a).clone();
        let bt = self.value(b).clone();
        let (bsz, ca, h, w) = dims4(at.shape());
        let (bsz_b, cb, h_b, w_b) = dims4(bt.shape());
        assert!(
            bsz == bsz_b && h == h_b && w == w_b,
            "concat shapes disagree outside the channel axis: {:?} vs {:?}",
            at.shape(),
            bt.shape()
        );
        let hw = h * w;
        let cout = ca + cb;
        let mut y = vec![T::ZERO; bsz * cout * hw];
        for bi in 0..bsz {
            let dst = &mut y[bi * cout * hw..][..cout * hw];
            dst[..ca * hw].copy_from_slice(&at.data()[bi * ca * hw..][..ca * hw]);
            dst[ca * hw..].copy_from_slice(&bt.data()[bi * cb * hw..][..cb * hw]);
        }
        let out = Tensor::new(vec![bsz, cout, h, w], y);
        let grad = move |g: &Tensor<T>| {
            let mut da = vec![T::ZERO; bsz * ca * hw];
            let mut db = vec![T::ZERO; bsz * cb * hw];
            for bi in 0..bsz {
                let src = &g.data()[bi * cout * hw..][..cout * hw];
                da[bi * ca * hw..][..ca * hw].copy_from_slice(&src[..ca * hw]);
                db[bi * cb * hw..][..cb * hw].copy_from_slice(&src[ca * hw..]);
            }
            vec![
                Tensor::new(vec![bsz, ca, h, w], da),
                Tensor::new(vec![bsz, cb, h, w], db),
            ]
        };
        self.push(out, vec![a, b], Some(Box::new(grad)))
    }

    /// Per-channel gating (the SE multiply): `x` is `[B, C, H, W]`, `s` is
    /// `[B, C]`; y[b,c,·] = x[b,c,·] · s[b,c].
    pub fn scale_channels(&mut self, x: Value, s: Value) -> Value {
        let xt = self.value(x).clone();
        let st = self.value(s).clone();
        let (bsz, c, h, w) = dims4(xt.shape());
        assert_eq!(st.shape(), [bsz, c], "channel scale shape");
        let hw = h * w;
        let mut y = vec![T::ZERO; xt.numel()];
        for bc in 0..bsz * c {
            let sv = st.data()[bc];
            let xs = &xt.data()[bc * hw..][..hw];
            let ys = &mut y[bc * hw..][..hw];
            for (yv, &xv) in ys.iter_mut().zip(xs) {
                *yv = xv * sv;
            }
        }
        let out = Tensor::new(xt.shape().to_vec(), y);
        let grad = move |g: &Tensor<T>| {
            let mut dx = vec![T::ZERO; xt.numel()];
            let mut ds = vec![T::ZERO; bsz * c];
            for bc in 0..bsz * c {
                let sv = st.data()[bc];
                let gs = &g.data()[bc * hw..][..hw];
                let xs = &xt.data()[bc * hw..][..hw];
                let dxs = &mut dx[bc * hw..][..hw];
                let mut acc = T::ZERO;
                for s_i in 0..hw {
                    dxs[s_i] = gs[s_i] * sv;
                    acc += gs[s_i] * xs[s_i];
                }
                ds[bc] = acc;
            }
            vec![
                Tensor::new(vec![bsz, c, h, w], dx),
                Tensor::new(vec![bsz, c], ds),
            ]
        };
        self.push(out, vec![x, s], Some(Box::new(grad)))
    }

    /// Mean softmax cross-entropy over a batch of logits `[B, K]` with class
    /// labels. Returns the scalar loss node and the per-sample losses.
    pub fn softmax_cross_entropy(&mut self, logits: Value, labels: &[usize]) -> (Value, Vec<T>) {
        let zt = self.value(logits).clone();
        let (bsz, k) = dims2(zt.shape());
        assert_eq!(labels.len(), bsz, "label count must match batch size");
        assert!(
            labels.iter().all(|&y| y < k),
            "label out of range for {k} classes"
        );
        let b_t = T::from_f64(bsz as f64);

        let mut per_sample = Vec::with_capacity(bsz);
        let mut softmax = vec![T::ZERO; bsz * k];
        for b in 0..bsz {
            let row = &zt.data()[b * k..][..k];
            let mut mx = row[0];
            for &v in row {
                mx = mx.maximum(v);
            }
            let mut denom = T::ZERO;
            for (j, &v) in row.iter().enumerate() {
                let e = (v - mx).exp();
                softmax[b * k + j] = e;
                denom += e;
            }
            for j in 0..k {
                softmax[b * k + j] = softmax[b * k + j] / denom;
            }
            let lse = mx + denom.ln();
            per_sample.push(lse - row[labels[b]]);
        }
        let total = per_sample.iter().fold(T::ZERO, |acc, &v| acc + v);
        let loss = Tensor::scalar(total / b_t);

        let labels_c = labels.to_vec();
        let grad = move |g: &Tensor<T>| {
            let gs = g.item() / b_t;
            let mut dz = softmax;
            for (b, &y) in labels_c.iter().enumerate() {
                dz[b * k + y] -= T::ONE;
            }
            for v in &mut dz {
                *v *= gs;
            }
            vec![Tensor::new(vec![bsz, k], dz)]
        };
        let v = self.push(loss, vec![logits], Some(Box::new(grad)));
        (v, per_sample)
    }
}
