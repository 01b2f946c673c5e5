//! Reverse-mode automatic differentiation over [`Tensor`] values.
//!
//! A [`Graph`] is a tape: every operation appends a node holding the forward
//! value and, when any input needs gradients, a backward closure. Calling
//! [`Graph::backward`] on a scalar loss walks the tape in reverse and
//! accumulates gradients into every reachable leaf.
//!
//! Every operation validates its output for NaN/Inf and fails with the name
//! of the offending operation. Single-threaded evaluation is bit-deterministic
//! for fixed inputs and seeds.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::NumericsError;
use crate::tensor::Tensor;

pub type Result<T> = std::result::Result<T, NumericsError>;

/// Handle to a value on the tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

/// Forward phase: train enables dropout masks and batch-statistics updates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Train,
    Eval,
}

/// Running statistics owned by a batch-norm site.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNormState {
    pub running_mean: Tensor,
    pub running_var: Tensor,
    pub momentum: f64,
    pub eps: f64,
}

impl BatchNormState {
    pub fn new(features: usize) -> Self {
        Self {
            running_mean: Tensor::zeros(vec![features]),
            running_var: Tensor::full(vec![features], 1.0),
            momentum: 0.1,
            eps: 1e-5,
        }
    }
}

type BackwardFn = Box<dyn Fn(&Tensor) -> Vec<Tensor>>;

struct Node {
    op: &'static str,
    inputs: Vec<Var>,
    backward: Option<BackwardFn>,
}

/// Per-variable gradients produced by [`Graph::backward`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn wrt(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }

    pub fn is_empty(&self) -> bool {
        self.grads.iter().all(|g| g.is_none())
    }
}

#[derive(Default)]
pub struct Graph {
    values: Vec<Tensor>,
    nodes: Vec<Node>,
    requires: Vec<bool>,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    /// Insert an input tensor. Trainability is taken from the tensor flag.
    pub fn leaf(&mut self, t: Tensor) -> Result<Var> {
        if let Some(index) = t.first_non_finite() {
            return Err(NumericsError::NonFinite { op: "leaf", index });
        }
        let req = t.requires_grad();
        self.values.push(t);
        self.nodes.push(Node { op: "leaf", inputs: vec![], backward: None });
        self.requires.push(req);
        Ok(Var(self.values.len() - 1))
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.values[v.0]
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.requires[v.0]
    }

    fn any_requires(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.requires[v.0])
    }

    fn push(
        &mut self,
        op: &'static str,
        out: Tensor,
        inputs: Vec<Var>,
        backward: Option<BackwardFn>,
    ) -> Result<Var> {
        if let Some(index) = out.first_non_finite() {
            return Err(NumericsError::NonFinite { op, index });
        }
        let req = self.any_requires(&inputs);
        self.values.push(out);
        self.nodes.push(Node { op, inputs, backward });
        self.requires.push(req);
        Ok(Var(self.values.len() - 1))
    }

    /// Reverse pass from a scalar loss. Leaves unreachable from the loss (and
    /// all non-trainable inputs) receive no gradient.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lt = &self.values[loss.0];
        if lt.len() != 1 {
            return Err(NumericsError::NonScalarLoss { shape: lt.shape().to_vec() });
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.values.len()).map(|_| None).collect();
        if !self.requires[loss.0] {
            return Ok(Gradients { grads });
        }
        grads[loss.0] = Some(Tensor::full(lt.shape().to_vec(), 1.0));

        for id in (0..=loss.0).rev() {
            if grads[id].is_none() {
                continue;
            }
            let node = &self.nodes[id];
            let Some(back) = &node.backward else { continue };
            let g = grads[id].clone().expect("grad present");
            let input_grads = back(&g);
            debug_assert_eq!(input_grads.len(), node.inputs.len());
            for (iv, ig) in node.inputs.iter().zip(input_grads) {
                if !self.requires[iv.0] {
                    continue;
                }
                if let Some(index) = ig.first_non_finite() {
                    return Err(NumericsError::NonFinite { op: node.op, index });
                }
                debug_assert_eq!(ig.shape(), self.values[iv.0].shape(), "{} grad shape", node.op);
                match &mut grads[iv.0] {
                    Some(acc) => {
                        for (a, b) in acc.data_mut().iter_mut().zip(ig.data()) {
                            *a += *b;
                        }
                    }
                    slot => *slot = Some(ig),
                }
            }
            // Intermediate gradients are no longer needed once propagated.
            if !self.nodes[id].inputs.is_empty() {
                grads[id] = None;
            }
        }
        Ok(Gradients { grads })
    }

    // ---- binary ops ----

    /// `a @ b` where `b` is 2-D `(k, n)` and the last axis of `a` is `k`.
    /// Leading axes of `a` are flattened into rows.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (&self.values[a.0], &self.values[b.0]);
        let bs = tb.shape();
        if bs.len() != 2 {
            return Err(shape_err("matmul", format!("rhs must be 2-D, got {:?}", bs)));
        }
        let (k, n) = (bs[0], bs[1]);
        let ashape = ta.shape().to_vec();
        if ashape.last() != Some(&k) {
            return Err(shape_err("matmul", format!("lhs {:?} vs rhs {:?}", ashape, bs)));
        }
        let m: usize = ashape[..ashape.len() - 1].iter().product();
        let out = mm_nn(ta.data(), tb.data(), m, k, n);
        let mut oshape = ashape.clone();
        *oshape.last_mut().expect("non-empty") = n;

        let back: Option<BackwardFn> = if self.any_requires(&[a, b]) {
            let (ad, bd) = (ta.data().to_vec(), tb.data().to_vec());
            let ashape = ashape.clone();
            Some(Box::new(move |g: &Tensor| {
                let gd = g.data();
                let ga = mm_nt(gd, &bd, m, n, k);
                let gb = mm_tn(&ad, gd, m, k, n);
                vec![
                    Tensor::from_vec(ashape.clone(), ga).expect("shape"),
                    Tensor::from_vec(vec![k, n], gb).expect("shape"),
                ]
            }))
        } else {
            None
        };
        self.push("matmul", Tensor::from_vec(oshape, out)?, vec![a, b], back)
    }

    /// Batched matmul `(nb, p, q) @ (nb, q, r) -> (nb, p, r)`.
    pub fn bmm(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (&self.values[a.0], &self.values[b.0]);
        let (asp, bsp) = (ta.shape(), tb.shape());
        if asp.len() != 3 || bsp.len() != 3 || asp[0] != bsp[0] || asp[2] != bsp[1] {
            return Err(shape_err("bmm", format!("{:?} x {:?}", asp, bsp)));
        }
        let (nb, p, q, r) = (asp[0], asp[1], asp[2], bsp[2]);
        let (ad, bd) = (ta.data(), tb.data());
        let mut out = vec![0.0; nb * p * r];
        for i in 0..nb {
            let c = mm_nn(&ad[i * p * q..(i + 1) * p * q], &bd[i * q * r..(i + 1) * q * r], p, q, r);
            out[i * p * r..(i + 1) * p * r].copy_from_slice(&c);
        }

        let back: Option<BackwardFn> = if self.any_requires(&[a, b]) {
            let (ad, bd) = (ad.to_vec(), bd.to_vec());
            Some(Box::new(move |g: &Tensor| {
                let gd = g.data();
                let mut ga = vec![0.0; nb * p * q];
                let mut gb = vec![0.0; nb * q * r];
                for i in 0..nb {
                    let gi = &gd[i * p * r..(i + 1) * p * r];
                    let gaa = mm_nt(gi, &bd[i * q * r..(i + 1) * q * r], p, r, q);
                    let gbb = mm_tn(&ad[i * p * q..(i + 1) * p * q], gi, p, q, r);
                    ga[i * p * q..(i + 1) * p * q].copy_from_slice(&gaa);
                    gb[i * q * r..(i + 1) * q * r].copy_from_slice(&gbb);
                }
                vec![
                    Tensor::from_vec(vec![nb, p, q], ga).expect("shape"),
                    Tensor::from_vec(vec![nb, q, r], gb).expect("shape"),
                ]
            }))
        } else {
            None
        };
        self.push("bmm", Tensor::from_vec(vec![nb, p, r], out)?, vec![a, b], back)
    }

    /// Elementwise add of same-shape tensors.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (&self.values[a.0], &self.values[b.0]);
        if ta.shape() != tb.shape() {
            return Err(shape_err("add", format!("{:?} vs {:?}", ta.shape(), tb.shape())));
        }
        let out: Vec<f64> = ta.data().iter().zip(tb.data()).map(|(x, y)| x + y).collect();
        let back: Option<BackwardFn> = if self.any_requires(&[a, b]) {
            Some(Box::new(move |g: &Tensor| vec![g.clone(), g.clone()]))
        } else {
            None
        };
        self.push("add", Tensor::from_vec(ta.shape().to_vec(), out)?, vec![a, b], back)
    }

    /// `a + bias` broadcasting the 1-D bias across the last axis.
    pub fn add_bias(&mut self, a: Var, bias: Var) -> Result<Var> {
        let (ta, tb) = (&self.values[a.0], &self.values[bias.0]);
        let n = *ta.shape().last().unwrap_or(&0);
        if tb.shape() != [n] {
            return Err(shape_err("add_bias", format!("{:?} vs bias {:?}", ta.shape(), tb.shape())));
        }
        let rows = ta.len() / n;
        let mut out = ta.data().to_vec();
        for r in 0..rows {
            for j in 0..n {
                out[r * n + j] += tb.data()[j];
            }
        }
        let ashape = ta.shape().to_vec();
        let back: Option<BackwardFn> = if self.any_requires(&[a, bias]) {
            Some(Box::new(move |g: &Tensor| {
                let gd = g.data();
                let mut gb = vec![0.0; n];
                for r in 0..rows {
                    for j in 0..n {
                        gb[j] += gd[r * n + j];
                    }
                }
                vec![g.clone(), Tensor::from_vec(vec![n], gb).expect("shape")]
            }))
        } else {
            None
        };
        self.push("add_bias", Tensor::from_vec(ashape, out)?, vec![a, bias], back)
    }

    /// Elementwise multiply of same-shape tensors.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (&self.values[a.0], &self.values[b.0]);
        if ta.shape() != tb.shape() {
            return Err(shape_err("mul", format!("{:?} vs {:?}", ta.shape(), tb.shape())));
        }
        let out: Vec<f64> = ta.data().iter().zip(tb.data()).map(|(x, y)| x * y).collect();
        let back: Option<BackwardFn> = if self.any_requires(&[a, b]) {
            let (ad, bd) = (ta.data().to_vec(), tb.data().to_vec());
            let shape = ta.shape().to_vec();
            Some(Box::new(move |g: &Tensor| {
                let gd = g.data();
                let ga: Vec<f64> = gd.iter().zip(&bd).map(|(g, b)| g * b).collect();
                let gb: Vec<f64> = gd.iter().zip(&ad).map(|(g, a)| g * a).collect();
                vec![
                    Tensor::from_vec(shape.clone(), ga).expect("shape"),
                    Tensor::from_vec(shape.clone(), gb).expect("shape"),
                ]
            }))
        } else {
            None
        };
        self.push("mul", Tensor::from_vec(ta.shape().to_vec(), out)?, vec![a, b], back)
    }

    // ---- unary ops ----

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        let ta = &self.values[a.0];
        let out: Vec<f64> = ta.data().iter().map(|x| x * c).collect();
        let shape = ta.shape().to_vec();
        let back: Option<BackwardFn> = if self.requires[a.0] {
            let shape = shape.clone();
            Some(Box::new(move |g: &Tensor| {
                let gd: Vec<f64> = g.data().iter().map(|x| x * c).collect();
                vec![Tensor::from_vec(shape.clone(), gd).expect("shape")]
            }))
        } else {
            None
        };
        self.push("scale", Tensor::from_vec(shape, out)?, vec![a], back)
    }

    /// GELU in the tanh approximation.
    pub fn gelu(&mut self, a: Var) -> Result<Var> {
        const C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
        const A: f64 = 0.044715;
        let ta = &self.values[a.0];
        let out: Vec<f64> = ta
            .data()
            .iter()
            .map(|&x| {
                let u = C * (x + A * x * x * x);
                0.5 * x * (1.0 + u.tanh())
            })
            .collect();
        let shape = ta.shape().to_vec();
        let back: Option<BackwardFn> = if self.requires[a.0] {
            let xd = ta.data().to_vec();
            let shape = shape.clone();
            Some(Box::new(move |g: &Tensor| {
                let gd: Vec<f64> = g
                    .data()
                    .iter()
                    .zip(&xd)
                    .map(|(&gv, &x)| {
                        let u = C * (x + A * x * x * x);
                        let t = u.tanh();
                        let d = 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * C * (1.0 + 3.0 * A * x * x);
                        gv * d
                    })
                    .collect();
                vec![Tensor::from_vec(shape.clone(), gd).expect("shape")]
            }))
        } else {
            None
        };
        self.push("gelu", Tensor::from_vec(shape, out)?, vec![a], back)
    }

    /// Softmax over the last axis, max-shifted for stability.
    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        let ta = &self.values[a.0];
        let n = *ta.shape().last().unwrap_or(&0);
        if n == 0 {
            return Err(shape_err("softmax", format!("empty last axis in {:?}", ta.shape())));
        }
        let rows = ta.len() / n;
        let mut out = vec![0.0; ta.len()];
        for r in 0..rows {
            softmax_row(&ta.data()[r * n..(r + 1) * n], &mut out[r * n..(r + 1) * n]);
        }
        let shape = ta.shape().to_vec();
        let back: Option<BackwardFn> = if self.requires[a.0] {
            let y = out.clone();
            let shape = shape.clone();
            Some(Box::new(move |g: &Tensor| {
                let gd = g.data();
                let mut gx = vec![0.0; y.len()];
                for r in 0..rows {
                    let (ys, gs) = (&y[r * n..(r + 1) * n], &gd[r * n..(r + 1) * n]);
                    let dot: f64 = ys.iter().zip(gs).map(|(y, g)| y * g).sum();
                    for j in 0..n {
                        gx[r * n + j] = ys[j] * (gs[j] - dot);
                    }
                }
                vec![Tensor::from_vec(shape.clone(), gx).expect("shape")]
            }))
        } else {
            None
        };
        self.push("softmax", Tensor::from_vec(shape, out)?, vec![a], back)
    }

    /// Layer normalization over the last axis with affine parameters.
    pub fn layer_norm(&mut self, a: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let (ta, tg, tb) = (&self.values[a.0], &self.values[gamma.0], &self.values[beta.0]);
        let n = *ta.shape().last().unwrap_or(&0);
        if n == 0 || tg.shape() != [n] || tb.shape() != [n] {
            return Err(shape_err(
                "layer_norm",
                format!("x {:?}, gamma {:?}, beta {:?}", ta.shape(), tg.shape(), tb.shape()),
            ));
        }
        let rows = ta.len() / n;
        let (xd, gd_, bd_) = (ta.data(), tg.data(), tb.data());
        let mut out = vec![0.0; ta.len()];
        let mut xhat = vec![0.0; ta.len()];
        let mut inv = vec![0.0; rows];
        for r in 0..rows {
            let xs = &xd[r * n..(r + 1) * n];
            let mu = xs.iter().sum::<f64>() / n as f64;
            let var = xs.iter().map(|x| (x - mu) * (x - mu)).sum::<f64>() / n as f64;
            let iv = 1.0 / (var + eps).sqrt();
            inv[r] = iv;
            for j in 0..n {
                let xh = (xs[j] - mu) * iv;
                xhat[r * n + j] = xh;
                out[r * n + j] = gd_[j] * xh + bd_[j];
            }
        }
        let shape = ta.shape().to_vec();
        let back: Option<BackwardFn> = if self.any_requires(&[a, gamma, beta]) {
            let gamma_d = gd_.to_vec();
            let shape = shape.clone();
            Some(Box::new(move |g: &Tensor| {
                let gd = g.data();
                let mut gx = vec![0.0; xhat.len()];
                let mut ggamma = vec![0.0; n];
                let mut gbeta = vec![0.0; n];
                for r in 0..rows {
                    let base = r * n;
                    let mut mean_dxhat = 0.0;
                    let mut mean_dxhat_xhat = 0.0;
                    for j in 0..n {
                        let dxh = gd[base + j] * gamma_d[j];
                        mean_dxhat += dxh;
                        mean_dxhat_xhat += dxh * xhat[base + j];
                        ggamma[j] += gd[base + j] * xhat[base + j];
                        gbeta[j] += gd[base + j];
                    }
                    mean_dxhat /= n as f64;
                    mean_dxhat_xhat /= n as f64;
                    for j in 0..n {
                        let dxh = gd[base + j] * gamma_d[j];
                        gx[base + j] = inv[r] * (dxh - mean_dxhat - xhat[base + j] * mean_dxhat_xhat);
                    }
                }
                vec![
                    Tensor::from_vec(shape.clone(), gx).expect("shape"),
                    Tensor::from_vec(vec![n], ggamma).expect("shape"),
                    Tensor::from_vec(vec![n], gbeta).expect("shape"),
                ]
            }))
        } else {
            None
        };
        self.push("layer_norm", Tensor::from_vec(shape, out)?, vec![a, gamma, beta], back)
    }

    /// Batch normalization of a `(batch, features)` tensor.
    ///
    /// Train phase normalizes by batch statistics (biased variance) and
    /// updates the running statistics in `state`; eval phase normalizes by the
    /// running statistics. The running-variance update uses the unbiased
    /// estimate when the batch has more than one row.
    pub fn batch_norm(
        &mut self,
        a: Var,
        gamma: Var,
        beta: Var,
        state: &mut BatchNormState,
        phase: Phase,
    ) -> Result<Var> {
        let (ta, tg, tb) = (&self.values[a.0], &self.values[gamma.0], &self.values[beta.0]);
        let sp = ta.shape();
        if sp.len() != 2 {
            return Err(shape_err("batch_norm", format!("expected 2-D input, got {:?}", sp)));
        }
        let (bsz, f) = (sp[0], sp[1]);
        if tg.shape() != [f] || tb.shape() != [f] || state.running_mean.shape() != [f] {
            return Err(shape_err(
                "batch_norm",
                format!("features {}, gamma {:?}, beta {:?}", f, tg.shape(), tb.shape()),
            ));
        }
        if bsz == 0 {
            return Err(shape_err("batch_norm", "empty batch".to_string()));
        }
        let eps = state.eps;
        let (xd, gamma_d, beta_d) = (ta.data(), tg.data(), tb.data());

        let (mean, var): (Vec<f64>, Vec<f64>) = match phase {
            Phase::Train => {
                let mut mean = vec![0.0; f];
                let mut var = vec![0.0; f];
                for r in 0..bsz {
                    for j in 0..f {
                        mean[j] += xd[r * f + j];
                    }
                }
                for m in &mut mean {
                    *m /= bsz as f64;
                }
                for r in 0..bsz {
                    for j in 0..f {
                        let d = xd[r * f + j] - mean[j];
                        var[j] += d * d;
                    }
                }
                for v in &mut var {
                    *v /= bsz as f64;
                }
                // Unbiased variance feeds the running estimate (biased when bsz == 1).
                let corr = if bsz > 1 { bsz as f64 / (bsz as f64 - 1.0) } else { 1.0 };
                let mom = state.momentum;
                for j in 0..f {
                    let rm = &mut state.running_mean.data_mut()[j];
                    *rm = (1.0 - mom) * *rm + mom * mean[j];
                    let rv = &mut state.running_var.data_mut()[j];
                    *rv = (1.0 - mom) * *rv + mom * var[j] * corr;
                }
                (mean, var)
            }
            Phase::Eval => (state.running_mean.data().to_vec(), state.running_var.data().to_vec()),
        };

        let mut out = vec![0.0; bsz * f];
        let mut xhat = vec![0.0; bsz * f];
        let inv: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        for r in 0..bsz {
            for j in 0..f {
                let xh = (xd[r * f + j] - mean[j]) * inv[j];
                xhat[r * f + j] = xh;
                out[r * f + j] = gamma_d[j] * xh + beta_d[j];
            }
        }

        let back: Option<BackwardFn> = if self.any_requires(&[a, gamma, beta]) {
            let gamma_d = gamma_d.to_vec();
            Some(Box::new(move |g: &Tensor| {
                let gd = g.data();
                let mut ggamma = vec![0.0; f];
                let mut gbeta = vec![0.0; f];
                for r in 0..bsz {
                    for j in 0..f {
                        ggamma[j] += gd[r * f + j] * xhat[r * f + j];
                        gbeta[j] += gd[r * f + j];
                    }
                }
                let mut gx = vec![0.0; bsz * f];
                match phase {
                    Phase::Train => {
                        for j in 0..f {
                            let mut mean_dxhat = 0.0;
                            let mut mean_dxhat_xhat = 0.0;
                            for r in 0..bsz {
                                let dxh = gd[r * f + j] * gamma_d[j];
                                mean_dxhat += dxh;
                                mean_dxhat_xhat += dxh * xhat[r * f + j];
                            }
                            mean_dxhat /= bsz as f64;
                            mean_dxhat_xhat /= bsz as f64;
                            for r in 0..bsz {
                                let dxh = gd[r * f + j] * gamma_d[j];
                                gx[r * f + j] =
                                    inv[j] * (dxh - mean_dxhat - xhat[r * f + j] * mean_dxhat_xhat);
                            }
                        }
                    }
                    Phase::Eval => {
                        for r in 0..bsz {
                            for j in 0..f {
                                gx[r * f + j] = gd[r * f + j] * gamma_d[j] * inv[j];
                            }
                        }
                    }
                }
                vec![
                    Tensor::from_vec(vec![bsz, f], gx).expect("shape"),
                    Tensor::from_vec(vec![f], ggamma).expect("shape"),
                    Tensor::from_vec(vec![f], gbeta).expect("shape"),
                ]
            }))
        } else {
            None
        };
        self.push("batch_norm", Tensor::from_vec(vec![bsz, f], out)?, vec![a, gamma, beta], back)
    }

    /// Inverted dropout: train phase keeps each entry with probability
    /// `1 - p` and rescales by `1/(1 - p)`; eval phase is the identity
    /// (no node is recorded). The mask derives only from `seed`.
    pub fn dropout(&mut self, a: Var, p: f64, phase: Phase, seed: u64) -> Result<Var> {
        if !(0.0..1.0).contains(&p) {
            return Err(NumericsError::Invalid {
                what: "dropout probability",
                details: format!("p = {p}, expected 0 <= p < 1"),
            });
        }
        if phase == Phase::Eval || p == 0.0 {
            return Ok(a);
        }
        let keep = 1.0 - p;
        let ta = &self.values[a.0];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mask: Vec<f64> = (0..ta.len())
            .map(|_| if rng.gen::<f64>() < keep { 1.0 / keep } else { 0.0 })
            .collect();
        let out: Vec<f64> = ta.data().iter().zip(&mask).map(|(x, m)| x * m).collect();
        let shape = ta.shape().to_vec();
        let back: Option<BackwardFn> = if self.requires[a.0] {
            let shape = shape.clone();
            Some(Box::new(move |g: &Tensor| {
                let gd: Vec<f64> = g.data().iter().zip(&mask).map(|(g, m)| g * m).collect();
                vec![Tensor::from_vec(shape.clone(), gd).expect("shape")]
            }))
        } else {
            None
        };
        self.push("dropout", Tensor::from_vec(shape, out)?, vec![a], back)
    }

    /// Mean softmax cross-entropy of `(batch, classes)` logits against
    /// integer targets. Uses log-sum-exp for stability.
    pub fn softmax_cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let tl = &self.values[logits.0];
        let sp = tl.shape();
        if sp.len() != 2 {
            return Err(shape_err("softmax_cross_entropy", format!("logits {:?}", sp)));
        }
        let (bsz, k) = (sp[0], sp[1]);
        if targets.len() != bsz {
            return Err(shape_err(
                "softmax_cross_entropy",
                format!("{} targets for batch {}", targets.len(), bsz),
            ));
        }
        if let Some(t) = targets.iter().find(|&&t| t >= k) {
            return Err(NumericsError::Invalid {
                what: "target",
                details: format!("class {t} out of range 0..{k}"),
            });
        }
        let zd = tl.data();
        let mut probs = vec![0.0; bsz * k];
        let mut loss = 0.0;
        for r in 0..bsz {
            let zs = &zd[r * k..(r + 1) * k];
            let zmax = zs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = zmax + zs.iter().map(|z| (z - zmax).exp()).sum::<f64>().ln();
            loss += lse - zs[targets[r]];
            for j in 0..k {
                probs[r * k + j] = (zs[j] - lse).exp();
            }
        }
        loss /= bsz as f64;
        let back: Option<BackwardFn> = if self.requires[logits.0] {
            let targets = targets.to_vec();
            Some(Box::new(move |g: &Tensor| {
                let gv = g.item();
                let mut gz = probs.clone();
                for r in 0..bsz {
                    gz[r * k + targets[r]] -= 1.0;
                }
                for v in &mut gz {
                    *v *= gv / bsz as f64;
                }
                vec![Tensor::from_vec(vec![bsz, k], gz).expect("shape")]
            }))
        } else {
            None
        };
        self.push("softmax_cross_entropy", Tensor::scalar(loss), vec![logits], back)
    }

    // ---- reductions ----

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let ta = &self.values[a.0];
        let s: f64 = ta.data().iter().sum();
        let shape = ta.shape().to_vec();
        let back: Option<BackwardFn> = if self.requires[a.0] {
            let shape = shape.clone();
            Some(Box::new(move |g: &Tensor| vec![Tensor::full(shape.clone(), g.item())]))
        } else {
            None
        };
        self.push("sum", Tensor::scalar(s), vec![a], back)
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let ta = &self.values[a.0];
        if ta.is_empty() {
            return Err(shape_err("mean", "empty tensor".to_string()));
        }
        let n = ta.len() as f64;
        let s: f64 = ta.data().iter().sum::<f64>() / n;
        let shape = ta.shape().to_vec();
        let back: Option<BackwardFn> = if self.requires[a.0] {
            let shape = shape.clone();
            Some(Box::new(move |g: &Tensor| vec![Tensor::full(shape.clone(), g.item() / n)]))
        } else {
            None
        };
        self.push("mean", Tensor::scalar(s), vec![a], back)
    }

    // ---- shape ops ----

    pub fn reshape(&mut self, a: Var, shape: Vec<usize>) -> Result<Var> {
        let ta = &self.values[a.0];
        let numel: usize = shape.iter().product();
        if numel != ta.len() {
            return Err(shape_err("reshape", format!("{:?} -> {:?}", ta.shape(), shape)));
        }
        let old_shape = ta.shape().to_vec();
        let out = Tensor::from_vec(shape, ta.data().to_vec())?;
        let back: Option<BackwardFn> = if self.requires[a.0] {
            Some(Box::new(move |g: &Tensor| {
                vec![Tensor::from_vec(old_shape.clone(), g.data().to_vec()).expect("shape")]
            }))
        } else {
            None
        };
        self.push("reshape", out, vec![a], back)
    }

    /// Slice `[start, start + len)` of the last axis.
    pub fn slice_last(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let ta = &self.values[a.0];
        let n = *ta.shape().last().unwrap_or(&0);
        if start + len > n {
            return Err(shape_err("slice_last", format!("[{start}, {}) of axis {n}", start + len)));
        }
        let rows = ta.len() / n;
        let mut out = vec![0.0; rows * len];
        for r in 0..rows {
            out[r * len..(r + 1) * len].copy_from_slice(&ta.data()[r * n + start..r * n + start + len]);
        }
        let mut oshape = ta.shape().to_vec();
        *oshape.last_mut().expect("non-empty") = len;
        let in_shape = ta.shape().to_vec();
        let back: Option<BackwardFn> = if self.requires[a.0] {
            Some(Box::new(move |g: &Tensor| {
                let gd = g.data();
                let mut gx = vec![0.0; rows * n];
                for r in 0..rows {
                    gx[r * n + start..r * n + start + len].copy_from_slice(&gd[r * len..(r + 1) * len]);
                }
                vec![Tensor::from_vec(in_shape.clone(), gx).expect("shape")]
            }))
        } else {
            None
        };
        self.push("slice_last", Tensor::from_vec(oshape, out)?, vec![a], back)
    }

    /// Concatenate along the last axis; all inputs share their leading shape.
    pub fn concat_last(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(shape_err("concat_last", "no inputs".to_string()));
        }
        let lead = self.values[parts[0].0].shape()[..self.values[parts[0].0].shape().len() - 1].to_vec();
        let widths: Vec<usize> = parts
            .iter()
            .map(|v| *self.values[v.0].shape().last().expect("rank >= 1"))
            .collect();
        for v in parts {
            let sp = self.values[v.0].shape();
            if sp[..sp.len() - 1] != lead[..] {
                return Err(shape_err("concat_last", format!("leading dims differ: {:?}", sp)));
            }
        }
        let rows: usize = lead.iter().product();
        let total: usize = widths.iter().sum();
        let mut out = vec![0.0; rows * total];
        let mut offset = 0;
        for (v, w) in parts.iter().zip(&widths) {
            let d = self.values[v.0].data();
            for r in 0..rows {
                out[r * total + offset..r * total + offset + w].copy_from_slice(&d[r * w..(r + 1) * w]);
            }
            offset += w;
        }
        let mut oshape = lead.clone();
        oshape.push(total);
        let back: Option<BackwardFn> = if self.any_requires(parts) {
            let widths = widths.clone();
            Some(Box::new(move |g: &Tensor| {
                let gd = g.data();
                let mut grads = Vec::with_capacity(widths.len());
                let mut offset = 0;
                for w in &widths {
                    let mut gp = vec![0.0; rows * w];
                    for r in 0..rows {
                        gp[r * w..(r + 1) * w]
                            .copy_from_slice(&gd[r * total + offset..r * total + offset + w]);
                    }
                    let mut shape = lead.clone();
                    shape.push(*w);
                    grads.push(Tensor::from_vec(shape, gp).expect("shape"));
                    offset += w;
                }
                grads
            }))
        } else {
            None
        };
        self.push("concat_last", Tensor::from_vec(oshape, out)?, parts.to_vec(), back)
    }

    /// Permute axes; backward applies the inverse permutation.
    pub fn permute(&mut self, a: Var, perm: &[usize]) -> Result<Var> {
        let ta = &self.values[a.0];
        let rank = ta.shape().len();
        let mut seen = vec![false; rank];
        if perm.len() != rank || perm.iter().any(|&p| p >= rank || std::mem::replace(&mut seen[p], true)) {
            return Err(shape_err("permute", format!("perm {:?} for rank {}", perm, rank)));
        }
        let (out_shape, out) = permute_data(ta.data(), ta.shape(), perm);
        let mut inverse = vec![0usize; rank];
        for (i, &p) in perm.iter().enumerate() {
            inverse[p] = i;
        }
        let back: Option<BackwardFn> = if self.requires[a.0] {
            Some(Box::new(move |g: &Tensor| {
                let (gs, gd) = permute_data(g.data(), g.shape(), &inverse);
                vec![Tensor::from_vec(gs, gd).expect("shape")]
            }))
        } else {
            None
        };
        self.push("permute", Tensor::from_vec(out_shape, out)?, vec![a], back)
    }

    /// Pool a `(batch, tokens, dim)` tensor to `(batch, dim)`.
    pub fn pool_tokens(&mut self, a: Var, pooling: Pooling) -> Result<Var> {
        let ta = &self.values[a.0];
        let sp = ta.shape();
        if sp.len() != 3 {
            return Err(shape_err("pool_tokens", format!("expected 3-D input, got {:?}", sp)));
        }
        let (bsz, t, d) = (sp[0], sp[1], sp[2]);
        let xd = ta.data();
        let mut out = vec![0.0; bsz * d];
        match pooling {
            Pooling::Mean => {
                for b in 0..bsz {
                    for tok in 0..t {
                        for j in 0..d {
                            out[b * d + j] += xd[(b * t + tok) * d + j];
                        }
                    }
                }
                for v in &mut out {
                    *v /= t as f64;
                }
            }
            Pooling::FirstToken => {
                for b in 0..bsz {
                    out[b * d..(b + 1) * d].copy_from_slice(&xd[b * t * d..b * t * d + d]);
                }
            }
        }
        let back: Option<BackwardFn> = if self.requires[a.0] {
            Some(Box::new(move |g: &Tensor| {
                let gd = g.data();
                let mut gx = vec![0.0; bsz * t * d];
                match pooling {
                    Pooling::Mean => {
                        for b in 0..bsz {
                            for tok in 0..t {
                                for j in 0..d {
                                    gx[(b * t + tok) * d + j] = gd[b * d + j] / t as f64;
                                }
                            }
                        }
                    }
                    Pooling::FirstToken => {
                        for b in 0..bsz {
                            gx[b * t * d..b * t * d + d].copy_from_slice(&gd[b * d..(b + 1) * d]);
                        }
                    }
                }
                vec![Tensor::from_vec(vec![bsz, t, d], gx).expect("shape")]
            }))
        } else {
            None
        };
        self.push("pool_tokens", Tensor::from_vec(vec![bsz, d], out)?, vec![a], back)
    }
}

/// Token pooling mode for sequence encoders.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Pooling {
    Mean,
    FirstToken,
}

fn shape_err(op: &'static str, details: String) -> NumericsError {
    NumericsError::ShapeMismatch { op, details }
}

fn softmax_row(z: &[f64], out: &mut [f64]) {
    let zmax = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for (o, &v) in out.iter_mut().zip(z) {
        let e = (v - zmax).exp();
        *o = e;
        sum += e;
    }
    for o in out.iter_mut() {
        *o /= sum;
    }
}

/// C = A (m,k) * B (k,n).
pub(crate) fn mm_nn(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut c = vec![0.0; m * n];
    for i in 0..m {
        let crow = &mut c[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            let brow = &b[p * n..(p + 1) * n];
            for (cv, bv) in crow.iter_mut().zip(brow) {
                *cv += av * bv;
            }
        }
    }
    c
}

/// C = A (m,n) * B^T where B is (k,n); result (m,k).
fn mm_nt(a: &[f64], b: &[f64], m: usize, n: usize, k: usize) -> Vec<f64> {
    let mut c = vec![0.0; m * k];
    for i in 0..m {
        let arow = &a[i * n..(i + 1) * n];
        for l in 0..k {
            let brow = &b[l * n..(l + 1) * n];
            c[i * k + l] = arow.iter().zip(brow).map(|(x, y)| x * y).sum();
        }
    }
    c
}

/// C = A^T * G where A is (m,k) and G is (m,n); result (k,n).
fn mm_tn(a: &[f64], g: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut c = vec![0.0; k * n];
    for i in 0..m {
        let grow = &g[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            let crow = &mut c[p * n..(p + 1) * n];
            for (cv, gv) in crow.iter_mut().zip(grow) {
                *cv += av * gv;
            }
        }
    }
    c
}

fn permute_data(data: &[f64], shape: &[usize], perm: &[usize]) -> (Vec<usize>, Vec<f64>) {
    let rank = shape.len();
    let out_shape: Vec<usize> = perm.iter().map(|&p| shape[p]).collect();
    let mut in_strides = vec![1usize; rank];
    for i in (0..rank.saturating_sub(1)).rev() {
        in_strides[i] = in_strides[i + 1] * shape[i + 1];
    }
    let numel = data.len();
    let mut out = vec![0.0; numel];
    let mut coords = vec![0usize; rank];
    for (flat, slot) in out.iter_mut().enumerate() {
        let mut rem = flat;
        for i in (0..rank).rev() {
            coords[i] = rem % out_shape[i];
            rem /= out_shape[i];
        }
        let mut src = 0;
        for i in 0..rank {
            src += coords[i] * in_strides[perm[i]];
        }
        *slot = data[src];
    }
    (out_shape, out)
}
