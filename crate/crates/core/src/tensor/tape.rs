use alloc::vec;
use alloc::vec::Vec;

use super::conv::{conv_backward_bias, conv_backward_input, conv_backward_weight, conv_forward, shuffle_raw, ConvGeom};
use super::Tensor;
use crate::error::{invalid, Error, Result};
use crate::Real;

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op<T> {
    Leaf,
    Conv {
        input: Var,
        weight: Var,
        bias: Option<Var>,
        geom: ConvGeom,
    },
    WeightNorm {
        direction: Var,
        gain: Var,
        norms: Vec<T>,
    },
    PixelShuffle {
        input: Var,
        s: usize,
        lr: [usize; 4],
    },
    LeakyRelu {
        input: Var,
        slope: T,
    },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Concat(Vec<Var>),
    Mean(Var),
    Sum(Var),
    Charbonnier {
        pred: Var,
        target: Var,
        eps: T,
    },
    BasisCombine {
        phi: Var,
        responses: Var,
    },
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    needs_grad: bool,
}

/// Linear record of a forward computation (Wengert list).
///
/// A tape is single-owner: it is built, differentiated and dropped by one
/// thread. Leaves keep their accumulated gradients across repeated
/// [`Tape::backward`] calls until [`Tape::zero_grad`].
#[derive(Debug, Default)]
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
}

fn same_shape<T: Real>(op: &'static str, a: &Tensor<T>, b: &Tensor<T>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::ShapeMismatch {
            op,
            lhs: a.shape().to_vec(),
            rhs: b.shape().to_vec(),
        });
    }
    Ok(())
}

fn add_into<T: Real>(slot: &mut Option<Vec<T>>, g: Vec<T>) {
    match slot {
        Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, &b)| *a += b),
        None => *slot = Some(g),
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, needs_grad: bool) -> Var {
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Records a leaf. Its gradient is tracked iff `tensor.requires_grad()`.
    pub fn leaf(&mut self, tensor: Tensor<T>) -> Var {
        let needs = tensor.requires_grad();
        self.push(tensor, Op::Leaf, needs)
    }

    /// Records a trainable leaf.
    pub fn param(&mut self, tensor: Tensor<T>) -> Var {
        self.leaf(tensor.with_grad())
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    /// Accumulated gradient of a leaf, if any backward pass reached it.
    pub fn grad(&self, v: Var) -> Option<&[T]> {
        self.nodes[v.0].value.grad()
    }

    pub fn zero_grad(&mut self) {
        for n in &mut self.nodes {
            n.value.zero_grad();
        }
    }

    pub fn conv2d(&mut self, input: Var, weight: Var, bias: Option<Var>, stride: usize, padding: usize) -> Result<Var> {
        let xv = self.value(input);
        let wv = self.value(weight);
        let geom = ConvGeom::new(xv.dims4("conv2d input")?, wv.dims4("conv2d weight")?, stride, padding)?;
        if let Some(b) = bias {
            let bv = self.value(b);
            if bv.numel() != geom.cout {
                return Err(Error::ShapeMismatch {
                    op: "conv2d bias",
                    lhs: bv.shape().to_vec(),
                    rhs: vec![geom.cout],
                });
            }
        }
        let out = conv_forward(&geom, xv.data(), wv.data(), bias.map(|b| self.value(b).data()));
        let needs = self.needs(input) || self.needs(weight) || bias.is_some_and(|b| self.needs(b));
        let t = Tensor::new(&geom.out_shape(), out)?;
        Ok(self.push(
            t,
            Op::Conv {
                input,
                weight,
                bias,
                geom,
            },
            needs,
        ))
    }

    /// Effective weight `gain[c] · direction[c] / ‖direction[c]‖₂` per output channel.
    pub fn weight_norm(&mut self, direction: Var, gain: Var) -> Result<Var> {
        let d = self.value(direction);
        let g = self.value(gain);
        let cout = d.shape()[0];
        if g.numel() != cout {
            return Err(Error::ShapeMismatch {
                op: "weight_norm gain",
                lhs: g.shape().to_vec(),
                rhs: vec![cout],
            });
        }
        let per = d.numel() / cout;
        let mut norms = Vec::with_capacity(cout);
        let mut w = Vec::with_capacity(d.numel());
        for (c, row) in d.data().chunks(per).enumerate() {
            let norm = row.iter().map(|&v| v * v).sum::<T>().sqrt();
            if !(norm > T::zero()) {
                return Err(Error::Degenerate(alloc::format!(
                    "weight_norm: direction of output channel {c} has zero norm"
                )));
            }
            let scale = g.data()[c] / norm;
            w.extend(row.iter().map(|&v| v * scale));
            norms.push(norm);
        }
        let needs = self.needs(direction) || self.needs(gain);
        let t = Tensor::new(d.shape(), w)?;
        Ok(self.push(t, Op::WeightNorm { direction, gain, norms }, needs))
    }

    pub fn weight_norm_conv2d(
        &mut self,
        input: Var,
        direction: Var,
        gain: Var,
        bias: Option<Var>,
        stride: usize,
        padding: usize,
    ) -> Result<Var> {
        let w = self.weight_norm(direction, gain)?;
        self.conv2d(input, w, bias, stride, padding)
    }

    pub fn pixel_shuffle(&mut self, input: Var, s: usize) -> Result<Var> {
        let t = super::pixel_shuffle(self.value(input), s)?;
        let [n, cs, h, w] = self.value(input).dims4("pixel_shuffle")?;
        let needs = self.needs(input);
        Ok(self.push(
            t,
            Op::PixelShuffle {
                input,
                s,
                lr: [n, cs / (s * s), h, w],
            },
            needs,
        ))
    }

    pub fn leaky_relu(&mut self, input: Var, slope: T) -> Result<Var> {
        if !(slope > T::zero() && slope < T::one()) {
            return Err(invalid!("leaky_relu slope must lie in (0, 1), got {:?}", slope));
        }
        let x = self.value(input);
        let data = x
            .data()
            .iter()
            .map(|&v| if v > T::zero() { v } else { v * slope })
            .collect();
        let t = Tensor::new(x.shape(), data)?;
        let needs = self.needs(input);
        Ok(self.push(t, Op::LeakyRelu { input, slope }, needs))
    }

    fn binary(&mut self, op: &'static str, a: Var, b: Var, f: impl Fn(T, T) -> T) -> Result<Tensor<T>> {
        let (x, y) = (self.value(a), self.value(b));
        same_shape(op, x, y)?;
        Tensor::new(
            x.shape(),
            x.data().iter().zip(y.data()).map(|(&p, &q)| f(p, q)).collect(),
        )
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.binary("add", a, b, |p, q| p + q)?;
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(t, Op::Add(a, b), needs))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.binary("sub", a, b, |p, q| p - q)?;
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(t, Op::Sub(a, b), needs))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.binary("mul", a, b, |p, q| p * q)?;
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(t, Op::Mul(a, b), needs))
    }

    /// Concatenates `[N, Cᵢ, H, W]` tensors along the channel axis.
    pub fn concat_channels(&mut self, inputs: &[Var]) -> Result<Var> {
        let first = *inputs
            .first()
            .ok_or_else(|| invalid!("concat_channels of an empty list"))?;
        let [n, _, h, w] = self.value(first).dims4("concat_channels")?;
        let mut channels = 0;
        for &v in inputs {
            let [vn, vc, vh, vw] = self.value(v).dims4("concat_channels")?;
            if (vn, vh, vw) != (n, h, w) {
                return Err(Error::ShapeMismatch {
                    op: "concat_channels",
                    lhs: self.value(first).shape().to_vec(),
                    rhs: self.value(v).shape().to_vec(),
                });
            }
            channels += vc;
        }
        let mut data = Vec::with_capacity(n * channels * h * w);
        for ni in 0..n {
            for &v in inputs {
                let x = self.value(v);
                let block = x.shape()[1] * h * w;
                data.extend_from_slice(&x.data()[ni * block..(ni + 1) * block]);
            }
        }
        let needs = inputs.iter().any(|&v| self.needs(v));
        let t = Tensor::new(&[n, channels, h, w], data)?;
        Ok(self.push(t, Op::Concat(inputs.to_vec()), needs))
    }

    pub fn mean(&mut self, input: Var) -> Result<Var> {
        let x = self.value(input);
        let m = x.data().iter().copied().sum::<T>() / T::of(x.numel() as f64);
        let needs = self.needs(input);
        Ok(self.push(Tensor::scalar(m), Op::Mean(input), needs))
    }

    pub fn sum(&mut self, input: Var) -> Result<Var> {
        let s = self.value(input).data().iter().copied().sum::<T>();
        let needs = self.needs(input);
        Ok(self.push(Tensor::scalar(s), Op::Sum(input), needs))
    }

    /// Mean over elements of `sqrt((pred - target)² + eps²)`.
    pub fn charbonnier(&mut self, pred: Var, target: Var, eps: T) -> Result<Var> {
        if !(eps > T::zero()) {
            return Err(invalid!("charbonnier eps must be positive"));
        }
        let (p, t) = (self.value(pred), self.value(target));
        same_shape("charbonnier", p, t)?;
        let e2 = eps * eps;
        let total = p
            .data()
            .iter()
            .zip(t.data())
            .map(|(&a, &b)| {
                let r = a - b;
                (r * r + e2).sqrt()
            })
            .sum::<T>();
        let loss = total / T::of(p.numel() as f64);
        let needs = self.needs(pred) || self.needs(target);
        Ok(self.push(Tensor::scalar(loss), Op::Charbonnier { pred, target, eps }, needs))
    }

    /// Per-pixel dot product of coefficients with precomputed basis responses.
    ///
    /// `phi` is `[N, L, H, W]`, `responses` is `[N, C·L, H, W]` (channel-major,
    /// basis-minor); the result is `[N, C, H, W]` with
    /// `out[n, c] = Σₗ phi[n, l] · responses[n, c·L + l]`.
    pub fn basis_combine(&mut self, phi: Var, responses: Var) -> Result<Var> {
        let [n, l, h, w] = self.value(phi).dims4("basis_combine coefficients")?;
        let [rn, rcl, rh, rw] = self.value(responses).dims4("basis_combine responses")?;
        if rn != n || rh != h || rw != w || rcl % l != 0 {
            return Err(Error::ShapeMismatch {
                op: "basis_combine",
                lhs: self.value(phi).shape().to_vec(),
                rhs: self.value(responses).shape().to_vec(),
            });
        }
        let c = rcl / l;
        let hw = h * w;
        let (p, r) = (self.value(phi).data(), self.value(responses).data());
        let mut out = vec![T::zero(); n * c * hw];
        for ni in 0..n {
            for ci in 0..c {
                let dst = &mut out[(ni * c + ci) * hw..][..hw];
                for li in 0..l {
                    let pp = &p[(ni * l + li) * hw..][..hw];
                    let rr = &r[(ni * rcl + ci * l + li) * hw..][..hw];
                    for ((d, &a), &b) in dst.iter_mut().zip(pp).zip(rr) {
                        *d += a * b;
                    }
                }
            }
        }
        let needs = self.needs(phi) || self.needs(responses);
        let t = Tensor::new(&[n, c, h, w], out)?;
        Ok(self.push(t, Op::BasisCombine { phi, responses }, needs))
    }

    /// Accumulates `∂loss/∂leaf` into every gradient-tracking leaf.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if !self.value(loss).is_scalar() {
            return Err(invalid!(
                "backward needs a scalar loss, got shape {:?}",
                self.value(loss).shape()
            ));
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(vec![T::one()]);
        let mut leaf_grads = Vec::new();

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            let needs = |v: Var| self.nodes[v.0].needs_grad;
            let val = |v: Var| &self.nodes[v.0].value;
            match &node.op {
                Op::Leaf => leaf_grads.push((i, g)),
                Op::Conv {
                    input,
                    weight,
                    bias,
                    geom,
                } => {
                    if needs(*input) {
                        add_into(&mut grads[input.0], conv_backward_input(geom, &g, val(*weight).data()));
                    }
                    if needs(*weight) {
                        add_into(&mut grads[weight.0], conv_backward_weight(geom, &g, val(*input).data()));
                    }
                    if let Some(b) = bias.filter(|b| needs(*b)) {
                        add_into(&mut grads[b.0], conv_backward_bias(geom, &g));
                    }
                }
                Op::WeightNorm { direction, gain, norms } => {
                    let d = val(*direction).data();
                    let gv = val(*gain).data();
                    let per = d.len() / norms.len();
                    let mut gd = vec![T::zero(); d.len()];
                    let mut gg = vec![T::zero(); norms.len()];
                    for c in 0..norms.len() {
                        let v = &d[c * per..][..per];
                        let gw = &g[c * per..][..per];
                        let n = norms[c];
                        // u = v/n;  ∂/∂g = u·gw;  ∂/∂v = (g/n)(gw − u (u·gw))
                        let u_dot = v.iter().zip(gw).map(|(&a, &b)| a * b).sum::<T>() / n;
                        gg[c] = u_dot;
                        let scale = gv[c] / n;
                        for ((o, &vi), &gi) in gd[c * per..][..per].iter_mut().zip(v).zip(gw) {
                            *o = scale * (gi - vi / n * u_dot);
                        }
                    }
                    if needs(*direction) {
                        add_into(&mut grads[direction.0], gd);
                    }
                    if needs(*gain) {
                        add_into(&mut grads[gain.0], gg);
                    }
                }
                Op::PixelShuffle { input, s, lr } => {
                    add_into(&mut grads[input.0], shuffle_raw(&g, *lr, *s, true));
                }
                Op::LeakyRelu { input, slope } => {
                    let x = val(*input).data();
                    let gi = x
                        .iter()
                        .zip(&g)
                        .map(|(&xv, &gv)| if xv > T::zero() { gv } else { gv * *slope })
                        .collect();
                    add_into(&mut grads[input.0], gi);
                }
                Op::Add(a, b) => {
                    if needs(*a) {
                        add_into(&mut grads[a.0], g.clone());
                    }
                    if needs(*b) {
                        add_into(&mut grads[b.0], g);
                    }
                }
                Op::Sub(a, b) => {
                    if needs(*b) {
                        add_into(&mut grads[b.0], g.iter().map(|&v| -v).collect());
                    }
                    if needs(*a) {
                        add_into(&mut grads[a.0], g);
                    }
                }
                Op::Mul(a, b) => {
                    if needs(*a) {
                        let gy = g.iter().zip(val(*b).data()).map(|(&p, &q)| p * q).collect();
                        add_into(&mut grads[a.0], gy);
                    }
                    if needs(*b) {
                        let gx = g.iter().zip(val(*a).data()).map(|(&p, &q)| p * q).collect();
                        add_into(&mut grads[b.0], gx);
                    }
                }
                Op::Concat(inputs) => {
                    let [n, c_total, h, w] = node.value.dims4("concat_channels")?;
                    let mut offset = 0;
                    for v in inputs {
                        let c = val(*v).shape()[1];
                        if needs(*v) {
                            let mut gi = Vec::with_capacity(n * c * h * w);
                            for ni in 0..n {
                                let start = (ni * c_total + offset) * h * w;
                                gi.extend_from_slice(&g[start..start + c * h * w]);
                            }
                            add_into(&mut grads[v.0], gi);
                        }
                        offset += c;
                    }
                }
                Op::Mean(input) => {
                    let numel = val(*input).numel();
                    add_into(&mut grads[input.0], vec![g[0] / T::of(numel as f64); numel]);
                }
                Op::Sum(input) => {
                    add_into(&mut grads[input.0], vec![g[0]; val(*input).numel()]);
                }
                Op::Charbonnier { pred, target, eps } => {
                    let (p, t) = (val(*pred).data(), val(*target).data());
                    let scale = g[0] / T::of(p.len() as f64);
                    let e2 = *eps * *eps;
                    let gp: Vec<T> = p
                        .iter()
                        .zip(t)
                        .map(|(&a, &b)| {
                            let r = a - b;
                            scale * r / (r * r + e2).sqrt()
                        })
                        .collect();
                    if needs(*target) {
                        add_into(&mut grads[target.0], gp.iter().map(|&v| -v).collect());
                    }
                    if needs(*pred) {
                        add_into(&mut grads[pred.0], gp);
                    }
                }
                Op::BasisCombine { phi, responses } => {
                    let [n, l, h, w] = val(*phi).dims4("basis_combine")?;
                    let rcl = val(*responses).shape()[1];
                    let c = rcl / l;
                    let hw = h * w;
                    let (p, r) = (val(*phi).data(), val(*responses).data());
                    if needs(*phi) {
                        let mut gp = vec![T::zero(); p.len()];
                        for ni in 0..n {
                            for li in 0..l {
                                let dst = &mut gp[(ni * l + li) * hw..][..hw];
                                for ci in 0..c {
                                    let go = &g[(ni * c + ci) * hw..][..hw];
                                    let rr = &r[(ni * rcl + ci * l + li) * hw..][..hw];
                                    for ((d, &a), &b) in dst.iter_mut().zip(go).zip(rr) {
                                        *d += a * b;
                                    }
                                }
                            }
                        }
                        add_into(&mut grads[phi.0], gp);
                    }
                    if needs(*responses) {
                        let mut gr = vec![T::zero(); r.len()];
                        for ni in 0..n {
                            for ci in 0..c {
                                let go = &g[(ni * c + ci) * hw..][..hw];
                                for li in 0..l {
                                    let pp = &p[(ni * l + li) * hw..][..hw];
                                    let dst = &mut gr[(ni * rcl + ci * l + li) * hw..][..hw];
                                    for ((d, &a), &b) in dst.iter_mut().zip(go).zip(pp) {
                                        *d = a * b;
                                    }
                                }
                            }
                        }
                        add_into(&mut grads[responses.0], gr);
                    }
                }
            }
        }
        for (i, g) in leaf_grads {
            self.nodes[i].value.accumulate_grad(&g);
        }
        Ok(())
    }
}
