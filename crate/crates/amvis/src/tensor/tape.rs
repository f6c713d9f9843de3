//! Reverse-mode differentiation tape.
//!
//! A `Tape` records every forward op; node ids increase in creation order,
//! so reverse id order is a valid reverse-topological visit. A tape and its
//! tensors are confined to one thread during a forward/backward pass.

use crate::error::{AmvisError, Result};
use crate::tensor::{broadcast_shape, broadcast_strides, strides_for, Tensor};
use crate::transforms::TransformSpec;

#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub struct VarId(pub(crate) usize);

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Add(VarId, VarId),
    Sub(VarId, VarId),
    Mul(VarId, VarId),
    Div(VarId, VarId),
    Neg(VarId),
    Scale(VarId, f64),
    AddScalar(VarId),
    Relu(VarId),
    Sigmoid(VarId),
    Gelu(VarId),
    Sqrt(VarId),
    Abs(VarId),
    Matmul(VarId, VarId),
    Bmm(VarId, VarId),
    TransposeLast2(VarId),
    Permute(VarId, Vec<usize>),
    Reshape(VarId),
    Narrow {
        parent: VarId,
        axis: usize,
        start: usize,
        len: usize,
    },
    Select {
        parent: VarId,
        axis: usize,
        index: usize,
    },
    Conv2d {
        input: VarId,
        kernel: VarId,
        stride: usize,
        padding: usize,
    },
    MaxPool2x2 {
        parent: VarId,
        argmax: Vec<usize>,
    },
    Softmax {
        parent: VarId,
        axis: usize,
    },
    ReduceSum {
        parent: VarId,
        axes: Vec<usize>,
        keep: bool,
    },
    ReduceMean {
        parent: VarId,
        axes: Vec<usize>,
        keep: bool,
    },
    ReduceMax {
        parent: VarId,
        argmax: Vec<usize>,
    },
    CrossEntropy {
        logits: VarId,
        labels: Vec<usize>,
    },
    SpectrumDecode {
        re: VarId,
        im: VarId,
        scale: Vec<f64>,
        height: usize,
        width: usize,
    },
    PatchExtract {
        parent: VarId,
        patch: usize,
    },
    Warp {
        parent: VarId,
        spec: TransformSpec,
    },
}

struct Node {
    op: Op,
    value: Tensor,
    requires: bool,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
}

impl Tape {
    pub fn new() -> Tape {
        Tape::default()
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> VarId {
        let mut value = value;
        value.requires_grad = requires_grad;
        value.grad = None;
        self.push(Op::Leaf, value, requires_grad)
    }

    pub fn value(&self, v: VarId) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: VarId) -> &[usize] {
        &self.nodes[v.0].value.shape
    }

    /// Gradient of the last `backward` output w.r.t. `v`, if tracked.
    pub fn grad(&self, v: VarId) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    pub fn grad_tensor(&self, v: VarId) -> Option<Tensor> {
        self.grad(v).map(|g| Tensor {
            shape: self.shape(v).to_vec(),
            data: g.to_vec(),
            requires_grad: false,
            grad: None,
        })
    }

    pub fn reset_grads(&mut self) {
        self.grads.clear();
    }

    fn push(&mut self, op: Op, value: Tensor, requires: bool) -> VarId {
        self.nodes.push(Node { op, value, requires });
        VarId(self.nodes.len() - 1)
    }

    fn requires(&self, v: VarId) -> bool {
        self.nodes[v.0].requires
    }

    // ---- elementwise binary ----------------------------------------------

    fn binary(
        &mut self,
        name: &'static str,
        a: VarId,
        b: VarId,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<(VarId, Vec<usize>)> {
        let out_shape = broadcast_shape(self.shape(a), self.shape(b)).map_err(|e| match e {
            AmvisError::ShapeMismatch { detail, .. } => AmvisError::ShapeMismatch { op: name, detail },
            other => other,
        })?;
        let (va, vb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        let n: usize = out_shape.iter().product();
        let mut data = vec![0.0f64; n];
        if va.shape == out_shape && vb.shape == out_shape {
            for i in 0..n {
                data[i] = f(va.data[i], vb.data[i]);
            }
        } else {
            let sa = broadcast_strides(&va.shape, &out_shape);
            let sb = broadcast_strides(&vb.shape, &out_shape);
            let so = strides_for(&out_shape);
            for (lin, slot) in data.iter_mut().enumerate() {
                let mut rem = lin;
                let (mut ia, mut ib) = (0usize, 0usize);
                for (d, &st) in so.iter().enumerate() {
                    let idx = rem / st;
                    rem %= st;
                    ia += idx * sa[d];
                    ib += idx * sb[d];
                }
                *slot = f(va.data[ia], vb.data[ib]);
            }
        }
        let requires = self.requires(a) || self.requires(b);
        let t = Tensor {
            shape: out_shape.clone(),
            data,
            requires_grad: false,
            grad: None,
        };
        Ok((self.push(Op::Leaf, t, requires), out_shape))
    }

    pub fn add(&mut self, a: VarId, b: VarId) -> Result<VarId> {
        let (id, _) = self.binary("add", a, b, |x, y| x + y)?;
        self.nodes[id.0].op = Op::Add(a, b);
        Ok(id)
    }

    pub fn sub(&mut self, a: VarId, b: VarId) -> Result<VarId> {
        let (id, _) = self.binary("sub", a, b, |x, y| x - y)?;
        self.nodes[id.0].op = Op::Sub(a, b);
        Ok(id)
    }

    pub fn mul(&mut self, a: VarId, b: VarId) -> Result<VarId> {
        let (id, _) = self.binary("mul", a, b, |x, y| x * y)?;
        self.nodes[id.0].op = Op::Mul(a, b);
        Ok(id)
    }

    pub fn div(&mut self, a: VarId, b: VarId) -> Result<VarId> {
        let (id, _) = self.binary("div", a, b, |x, y| x / y)?;
        self.nodes[id.0].op = Op::Div(a, b);
        Ok(id)
    }

    // ---- elementwise unary -----------------------------------------------

    fn unary(&mut self, a: VarId, f: impl Fn(f64) -> f64) -> (VarId, Vec<usize>) {
        let va = &self.nodes[a.0].value;
        let data = va.data.iter().map(|&x| f(x)).collect();
        let shape = va.shape.clone();
        let requires = self.requires(a);
        let t = Tensor {
            shape: shape.clone(),
            data,
            requires_grad: false,
            grad: None,
        };
        (self.push(Op::Leaf, t, requires), shape)
    }

    pub fn neg(&mut self, a: VarId) -> VarId {
        let (id, _) = self.unary(a, |x| -x);
        self.nodes[id.0].op = Op::Neg(a);
        id
    }

    pub fn scale(&mut self, a: VarId, c: f64) -> VarId {
        let (id, _) = self.unary(a, |x| c * x);
        self.nodes[id.0].op = Op::Scale(a, c);
        id
    }

    pub fn add_scalar(&mut self, a: VarId, c: f64) -> VarId {
        let (id, _) = self.unary(a, |x| x + c);
        self.nodes[id.0].op = Op::AddScalar(a);
        id
    }

    pub fn relu(&mut self, a: VarId) -> VarId {
        let (id, _) = self.unary(a, |x| if x > 0.0 { x } else { 0.0 });
        self.nodes[id.0].op = Op::Relu(a);
        id
    }

    pub fn sigmoid(&mut self, a: VarId) -> VarId {
        let (id, _) = self.unary(a, sigmoid);
        self.nodes[id.0].op = Op::Sigmoid(a);
        id
    }

    /// tanh-approximation forward; the erf form serves as the test oracle.
    pub fn gelu(&mut self, a: VarId) -> VarId {
        let (id, _) = self.unary(a, gelu_tanh);
        self.nodes[id.0].op = Op::Gelu(a);
        id
    }

    pub fn sqrt(&mut self, a: VarId) -> VarId {
        let (id, _) = self.unary(a, f64::sqrt);
        self.nodes[id.0].op = Op::Sqrt(a);
        id
    }

    pub fn abs(&mut self, a: VarId) -> VarId {
        let (id, _) = self.unary(a, f64::abs);
        self.nodes[id.0].op = Op::Abs(a);
        id
    }

    // ---- linear algebra ----------------------------------------------------

    pub fn matmul(&mut self, a: VarId, b: VarId) -> Result<VarId> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(AmvisError::ShapeMismatch {
                op: "matmul",
                detail: format!("{:?} x {:?}", sa, sb),
            });
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let data = mat_mm(&self.nodes[a.0].value.data, &self.nodes[b.0].value.data, m, k, n);
        let requires = self.requires(a) || self.requires(b);
        let t = Tensor {
            shape: vec![m, n],
            data,
            requires_grad: false,
            grad: None,
        };
        Ok(self.push(Op::Matmul(a, b), t, requires))
    }

    /// Batched matmul on [B,M,K] x [B,K,N].
    pub fn bmm(&mut self, a: VarId, b: VarId) -> Result<VarId> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa.len() != 3 || sb.len() != 3 || sa[0] != sb[0] || sa[2] != sb[1] {
            return Err(AmvisError::ShapeMismatch {
                op: "bmm",
                detail: format!("{:?} x {:?}", sa, sb),
            });
        }
        let (bsz, m, k, n) = (sa[0], sa[1], sa[2], sb[2]);
        let mut data = vec![0.0f64; bsz * m * n];
        for i in 0..bsz {
            let da = &self.nodes[a.0].value.data[i * m * k..(i + 1) * m * k];
            let db = &self.nodes[b.0].value.data[i * k * n..(i + 1) * k * n];
            let out = mat_mm(da, db, m, k, n);
            data[i * m * n..(i + 1) * m * n].copy_from_slice(&out);
        }
        let requires = self.requires(a) || self.requires(b);
        let t = Tensor {
            shape: vec![bsz, m, n],
            data,
            requires_grad: false,
            grad: None,
        };
        Ok(self.push(Op::Bmm(a, b), t, requires))
    }

    pub fn transpose_last2(&mut self, a: VarId) -> Result<VarId> {
        let sa = self.shape(a).to_vec();
        if sa.len() < 2 {
            return Err(AmvisError::ShapeMismatch {
                op: "transpose_last2",
                detail: format!("rank {} < 2", sa.len()),
            });
        }
        let out = transpose_last2_data(&self.nodes[a.0].value.data, &sa);
        let mut shape = sa.clone();
        let r = shape.len();
        shape.swap(r - 2, r - 1);
        let requires = self.requires(a);
        let t = Tensor {
            shape,
            data: out,
            requires_grad: false,
            grad: None,
        };
        Ok(self.push(Op::TransposeLast2(a), t, requires))
    }

    pub fn permute(&mut self, a: VarId, perm: &[usize]) -> Result<VarId> {
        let sa = self.shape(a).to_vec();
        if perm.len() != sa.len() {
            return Err(AmvisError::ShapeMismatch {
                op: "permute",
                detail: format!("perm {:?} vs rank {}", perm, sa.len()),
            });
        }
        let mut seen = vec![false; sa.len()];
        for &p in perm {
            if p >= sa.len() || seen[p] {
                return Err(AmvisError::ShapeMismatch {
                    op: "permute",
                    detail: format!("invalid permutation {:?}", perm),
                });
            }
            seen[p] = true;
        }
        let data = permute_data(&self.nodes[a.0].value.data, &sa, perm);
        let shape: Vec<usize> = perm.iter().map(|&p| sa[p]).collect();
        let requires = self.requires(a);
        let t = Tensor {
            shape,
            data,
            requires_grad: false,
            grad: None,
        };
        Ok(self.push(Op::Permute(a, perm.to_vec()), t, requires))
    }

    pub fn reshape(&mut self, a: VarId, shape: &[usize]) -> Result<VarId> {
        let va = &self.nodes[a.0].value;
        let n: usize = shape.iter().product();
        if n != va.numel() {
            return Err(AmvisError::ShapeMismatch {
                op: "reshape",
                detail: format!("{:?} -> {:?}", va.shape, shape),
            });
        }
        let t = Tensor {
            shape: shape.to_vec(),
            data: va.data.clone(),
            requires_grad: false,
            grad: None,
        };
        let requires = self.requires(a);
        Ok(self.push(Op::Reshape(a), t, requires))
    }

    pub fn narrow(&mut self, a: VarId, axis: usize, start: usize, len: usize) -> Result<VarId> {
        let sa = self.shape(a).to_vec();
        if axis >= sa.len() {
            return Err(AmvisError::InvalidAxis { axis, rank: sa.len() });
        }
        if start + len > sa[axis] {
            return Err(AmvisError::ShapeMismatch {
                op: "narrow",
                detail: format!("range {}..{} on extent {}", start, start + len, sa[axis]),
            });
        }
        let mut shape = sa.clone();
        shape[axis] = len;
        let outer: usize = sa[..axis].iter().product();
        let inner: usize = sa[axis + 1..].iter().product();
        let mut data = vec![0.0f64; outer * len * inner];
        for o in 0..outer {
            let src = o * sa[axis] * inner + start * inner;
            let dst = o * len * inner;
            data[dst..dst + len * inner]
                .copy_from_slice(&self.nodes[a.0].value.data[src..src + len * inner]);
        }
        let requires = self.requires(a);
        let t = Tensor {
            shape,
            data,
            requires_grad: false,
            grad: None,
        };
        Ok(self.push(
            Op::Narrow {
                parent: a,
                axis,
                start,
                len,
            },
            t,
            requires,
        ))
    }

    /// Picks one index along `axis`; the axis is removed from the shape.
    pub fn select(&mut self, a: VarId, axis: usize, index: usize) -> Result<VarId> {
        let sa = self.shape(a).to_vec();
        if axis >= sa.len() {
            return Err(AmvisError::InvalidAxis { axis, rank: sa.len() });
        }
        if index >= sa[axis] {
            return Err(AmvisError::ShapeMismatch {
                op: "select",
                detail: format!("index {} on extent {}", index, sa[axis]),
            });
        }
        let outer: usize = sa[..axis].iter().product();
        let inner: usize = sa[axis + 1..].iter().product();
        let mut data = vec![0.0f64; outer * inner];
        for o in 0..outer {
            let src = o * sa[axis] * inner + index * inner;
            data[o * inner..(o + 1) * inner]
                .copy_from_slice(&self.nodes[a.0].value.data[src..src + inner]);
        }
        let mut shape = sa.clone();
        shape.remove(axis);
        let requires = self.requires(a);
        let t = Tensor {
            shape,
            data,
            requires_grad: false,
            grad: None,
        };
        Ok(self.push(
            Op::Select {
                parent: a,
                axis,
                index,
            },
            t,
            requires,
        ))
    }

    // ---- convolution / pooling ---------------------------------------------

    pub fn conv2d(
        &mut self,
        input: VarId,
        kernel: VarId,
        stride: usize,
        padding: usize,
    ) -> Result<VarId> {
        let si = self.shape(input).to_vec();
        let sk = self.shape(kernel).to_vec();
        if si.len() != 4 || sk.len() != 4 {
            return Err(AmvisError::ShapeMismatch {
                op: "conv2d",
                detail: format!("input {:?}, kernel {:?} (need rank 4)", si, sk),
            });
        }
        if si[1] != sk[1] {
            return Err(AmvisError::ShapeMismatch {
                op: "conv2d",
                detail: format!("input channels {} != kernel channels {}", si[1], sk[1]),
            });
        }
        let (n, c, h, w) = (si[0], si[1], si[2], si[3]);
        let (ko, kh, kw) = (sk[0], sk[2], sk[3]);
        if kh > h + 2 * padding || kw > w + 2 * padding {
            return Err(AmvisError::ShapeMismatch {
                op: "conv2d",
                detail: format!(
                    "kernel {}x{} exceeds padded input {}x{}",
                    kh,
                    kw,
                    h + 2 * padding,
                    w + 2 * padding
                ),
            });
        }
        if stride == 0 {
            return Err(AmvisError::ShapeMismatch {
                op: "conv2d",
                detail: "stride must be positive".into(),
            });
        }
        let oh = (h + 2 * padding - kh) / stride + 1;
        let ow = (w + 2 * padding - kw) / stride + 1;
        let din = &self.nodes[input.0].value.data;
        let dk = &self.nodes[kernel.0].value.data;
        let mut out = vec![0.0f64; n * ko * oh * ow];
        for in_ in 0..n {
            for oc in 0..ko {
                for oy in 0..oh {
                    for ox in 0..ow {
                        let mut acc = 0.0f64;
                        for ic in 0..c {
                            for ky in 0..kh {
                                let iy = (oy * stride + ky) as isize - padding as isize;
                                if iy < 0 || iy >= h as isize {
                                    continue;
                                }
                                let row = ((in_ * c + ic) * h + iy as usize) * w;
                                let krow = ((oc * c + ic) * kh + ky) * kw;
                                for kx in 0..kw {
                                    let ix = (ox * stride + kx) as isize - padding as isize;
                                    if ix < 0 || ix >= w as isize {
                                        continue;
                                    }
                                    acc += din[row + ix as usize] * dk[krow + kx];
                                }
                            }
                        }
                        out[((in_ * ko + oc) * oh + oy) * ow + ox] = acc;
                    }
                }
            }
        }
        let requires = self.requires(input) || self.requires(kernel);
        let t = Tensor {
            shape: vec![n, ko, oh, ow],
            data: out,
            requires_grad: false,
            grad: None,
        };
        Ok(self.push(
            Op::Conv2d {
                input,
                kernel,
                stride,
                padding,
            },
            t,
            requires,
        ))
    }

    /// 2x2 max pooling with stride 2; requires even spatial extents.
    pub fn max_pool2x2(&mut self, a: VarId) -> Result<VarId> {
        let sa = self.shape(a).to_vec();
        if sa.len() != 4 || sa[2] % 2 != 0 || sa[3] % 2 != 0 {
            return Err(AmvisError::ShapeMismatch {
                op: "max_pool2x2",
                detail: format!("need rank-4 with even spatial extents, got {:?}", sa),
            });
        }
        let (n, c, h, w) = (sa[0], sa[1], sa[2], sa[3]);
        let (oh, ow) = (h / 2, w / 2);
        let din = &self.nodes[a.0].value.data;
        let mut out = vec![0.0f64; n * c * oh * ow];
        let mut argmax = vec![0usize; n * c * oh * ow];
        for nc in 0..n * c {
            for oy in 0..oh {
                for ox in 0..ow {
                    let base = nc * h * w;
                    let mut best = f64::NEG_INFINITY;
                    let mut best_i = 0usize;
                    for dy in 0..2 {
                        for dx in 0..2 {
                            let i = base + (2 * oy + dy) * w + 2 * ox + dx;
                            if din[i] > best {
                                best = din[i];
                                best_i = i;
                            }
                        }
                    }
                    let o = nc * oh * ow + oy * ow + ox;
                    out[o] = best;
                    argmax[o] = best_i;
                }
            }
        }
        let requires = self.requires(a);
        let t = Tensor {
            shape: vec![n, c, oh, ow],
            data: out,
            requires_grad: false,
            grad: None,
        };
        Ok(self.push(Op::MaxPool2x2 { parent: a, argmax }, t, requires))
    }

    // ---- softmax / reductions ----------------------------------------------

    /// Numerically stable softmax along `axis` (max-subtraction).
    pub fn softmax(&mut self, a: VarId, axis: usize) -> Result<VarId> {
        let sa = self.shape(a).to_vec();
        if axis >= sa.len() {
            return Err(AmvisError::InvalidAxis { axis, rank: sa.len() });
        }
        let n = sa[axis];
        let outer: usize = sa[..axis].iter().product();
        let inner: usize = sa[axis + 1..].iter().product();
        let din = &self.nodes[a.0].value.data;
        let mut out = vec![0.0f64; din.len()];
        for o in 0..outer {
            for i in 0..inner {
                let lane = |j: usize| o * n * inner + j * inner + i;
                let mut mx = f64::NEG_INFINITY;
                for j in 0..n {
                    mx = mx.max(din[lane(j)]);
                }
                let mut sum = 0.0;
                for j in 0..n {
                    let e = (din[lane(j)] - mx).exp();
                    out[lane(j)] = e;
                    sum += e;
                }
                for j in 0..n {
                    out[lane(j)] /= sum;
                }
            }
        }
        let requires = self.requires(a);
        let t = Tensor {
            shape: sa,
            data: out,
            requires_grad: false,
            grad: None,
        };
        Ok(self.push(Op::Softmax { parent: a, axis }, t, requires))
    }

    fn reduce_setup(&self, a: VarId, axes: &[usize], keep: bool) -> Result<(Vec<usize>, usize)> {
        let sa = self.shape(a);
        let mut mask = vec![false; sa.len()];
        for &ax in axes {
            if ax >= sa.len() {
                return Err(AmvisError::InvalidAxis { axis: ax, rank: sa.len() });
            }
            mask[ax] = true;
        }
        let mut out_shape = Vec::new();
        let mut count = 1usize;
        for (i, &d) in sa.iter().enumerate() {
            if mask[i] {
                count *= d;
                if keep {
                    out_shape.push(1);
                }
            } else {
                out_shape.push(d);
            }
        }
        Ok((out_shape, count))
    }

    fn reduce_forward(&self, a: VarId, axes: &[usize], out_shape: &[usize]) -> Vec<f64> {
        let sa = self.shape(a).to_vec();
        let mut mask = vec![false; sa.len()];
        for &ax in axes {
            mask[ax] = true;
        }
        // collapsed shape with reduced axes set to 1, for index mapping
        let kept: Vec<usize> = sa
            .iter()
            .enumerate()
            .map(|(i, &d)| if mask[i] { 1 } else { d })
            .collect();
        let kstrides = strides_for(&kept);
        let istrides = strides_for(&sa);
        let din = &self.nodes[a.0].value.data;
        let out_n: usize = out_shape.iter().product();
        let mut out = vec![0.0f64; out_n];
        for (lin, &v) in din.iter().enumerate() {
            let mut rem = lin;
            let mut o = 0usize;
            for (i, &st) in istrides.iter().enumerate() {
                let idx = rem / st;
                rem %= st;
                if !mask[i] {
                    o += idx * kstrides[i];
                }
            }
            out[o] += v;
        }
        out
    }

    pub fn reduce_sum(&mut self, a: VarId, axes: &[usize], keep: bool) -> Result<VarId> {
        let (out_shape, _) = self.reduce_setup(a, axes, keep)?;
        let data = self.reduce_forward(a, axes, &out_shape);
        let requires = self.requires(a);
        let t = Tensor {
            shape: out_shape,
            data,
            requires_grad: false,
            grad: None,
        };
        Ok(self.push(
            Op::ReduceSum {
                parent: a,
                axes: axes.to_vec(),
                keep,
            },
            t,
            requires,
        ))
    }

    /// Mean over `axes`; backward distributes 1/count.
    pub fn reduce_mean(&mut self, a: VarId, axes: &[usize], keep: bool) -> Result<VarId> {
        let (out_shape, count) = self.reduce_setup(a, axes, keep)?;
        let mut data = self.reduce_forward(a, axes, &out_shape);
        for v in &mut data {
            *v /= count as f64;
        }
        let requires = self.requires(a);
        let t = Tensor {
            shape: out_shape,
            data,
            requires_grad: false,
            grad: None,
        };
        Ok(self.push(
            Op::ReduceMean {
                parent: a,
                axes: axes.to_vec(),
                keep,
            },
            t,
            requires,
        ))
    }

    /// Max over all elements; ties route the gradient to the first winner.
    pub fn reduce_max_all(&mut self, a: VarId) -> Result<VarId> {
        let din = &self.nodes[a.0].value.data;
        if din.is_empty() {
            return Err(AmvisError::ShapeMismatch {
                op: "reduce_max",
                detail: "empty tensor".into(),
            });
        }
        let mut best = f64::NEG_INFINITY;
        let mut best_i = 0usize;
        for (i, &v) in din.iter().enumerate() {
            if v > best {
                best = v;
                best_i = i;
            }
        }
        let requires = self.requires(a);
        let t = Tensor::scalar(best);
        Ok(self.push(
            Op::ReduceMax {
                parent: a,
                argmax: vec![best_i],
            },
            t,
            requires,
        ))
    }

    pub fn sum_all(&mut self, a: VarId) -> Result<VarId> {
        let axes: Vec<usize> = (0..self.shape(a).len()).collect();
        self.reduce_sum(a, &axes, false)
    }

    pub fn mean_all(&mut self, a: VarId) -> Result<VarId> {
        let axes: Vec<usize> = (0..self.shape(a).len()).collect();
        self.reduce_mean(a, &axes, false)
    }

    /// Mean cross-entropy of logits [N,C] against integer labels.
    pub fn cross_entropy(&mut self, logits: VarId, labels: &[usize]) -> Result<VarId> {
        let sl = self.shape(logits).to_vec();
        if sl.len() != 2 || sl[0] != labels.len() {
            return Err(AmvisError::ShapeMismatch {
                op: "cross_entropy",
                detail: format!("logits {:?} vs {} labels", sl, labels.len()),
            });
        }
        let (n, c) = (sl[0], sl[1]);
        for &l in labels {
            if l >= c {
                return Err(AmvisError::LabelOutOfRange { label: l, classes: c });
            }
        }
        let din = &self.nodes[logits.0].value.data;
        let mut loss = 0.0f64;
        for i in 0..n {
            let row = &din[i * c..(i + 1) * c];
            let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = mx + row.iter().map(|&v| (v - mx).exp()).sum::<f64>().ln();
            loss += lse - row[labels[i]];
        }
        loss /= n as f64;
        let requires = self.requires(logits);
        let t = Tensor::scalar(loss);
        Ok(self.push(
            Op::CrossEntropy {
                logits,
                labels: labels.to_vec(),
            },
            t,
            requires,
        ))
    }

    /// Pre-sigmoid spectral decode: scaled half-spectrum -> real image
    /// via orthonormal inverse FFT. See `fourier` for the scale grid.
    pub fn spectrum_decode(
        &mut self,
        re: VarId,
        im: VarId,
        scale: &[f64],
        height: usize,
        width: usize,
    ) -> Result<VarId> {
        let (sr, si) = (self.shape(re).to_vec(), self.shape(im).to_vec());
        let wh = width / 2 + 1;
        if sr != si || sr.len() != 3 || sr[1] != height || sr[2] != wh {
            return Err(AmvisError::ShapeMismatch {
                op: "spectrum_decode",
                detail: format!(
                    "re {:?} / im {:?}, expected [C, {}, {}]",
                    sr, si, height, wh
                ),
            });
        }
        if scale.len() != height * wh {
            return Err(AmvisError::ShapeMismatch {
                op: "spectrum_decode",
                detail: format!("scale grid len {} != {}", scale.len(), height * wh),
            });
        }
        let channels = sr[0];
        let out = crate::fourier::decode_pre_sigmoid_raw(
            &self.nodes[re.0].value.data,
            &self.nodes[im.0].value.data,
            scale,
            channels,
            height,
            width,
        );
        let requires = self.requires(re) || self.requires(im);
        let t = Tensor {
            shape: vec![channels, height, width],
            data: out,
            requires_grad: false,
            grad: None,
        };
        Ok(self.push(
            Op::SpectrumDecode {
                re,
                im,
                scale: scale.to_vec(),
                height,
                width,
            },
            t,
            requires,
        ))
    }

    /// [N,C,H,W] -> [N, (H/p)*(W/p), C*p*p] non-overlapping patches.
    pub fn patch_extract(&mut self, a: VarId, patch: usize) -> Result<VarId> {
        let sa = self.shape(a).to_vec();
        if sa.len() != 4 || patch == 0 || sa[2] % patch != 0 || sa[3] % patch != 0 {
            return Err(AmvisError::ShapeMismatch {
                op: "patch_extract",
                detail: format!("shape {:?} with patch {}", sa, patch),
            });
        }
        let (n, c, h, w) = (sa[0], sa[1], sa[2], sa[3]);
        let (gh, gw) = (h / patch, w / patch);
        let tokens = gh * gw;
        let dim = c * patch * patch;
        let din = &self.nodes[a.0].value.data;
        let mut out = vec![0.0f64; n * tokens * dim];
        for b in 0..n {
            for ty in 0..gh {
                for tx in 0..gw {
                    let tok = ty * gw + tx;
                    for ic in 0..c {
                        for py in 0..patch {
                            for px in 0..patch {
                                let src = ((b * c + ic) * h + ty * patch + py) * w + tx * patch + px;
                                let dst = (b * tokens + tok) * dim
                                    + (ic * patch + py) * patch
                                    + px;
                                out[dst] = din[src];
                            }
                        }
                    }
                }
            }
        }
        let requires = self.requires(a);
        let t = Tensor {
            shape: vec![n, tokens, dim],
            data: out,
            requires_grad: false,
            grad: None,
        };
        Ok(self.push(Op::PatchExtract { parent: a, patch }, t, requires))
    }

    /// Differentiable geometric transform (rotation, scale, integer jitter)
    /// on a [C,H,W] image.
    pub fn warp(&mut self, a: VarId, spec: TransformSpec) -> Result<VarId> {
        let sa = self.shape(a).to_vec();
        if sa.len() != 3 {
            return Err(AmvisError::ShapeMismatch {
                op: "warp",
                detail: format!("expected [C,H,W], got {:?}", sa),
            });
        }
        let out = crate::transforms::warp_forward(&self.nodes[a.0].value, &spec);
        let requires = self.requires(a);
        Ok(self.push(Op::Warp { parent: a, spec }, out, requires))
    }

    // ---- backward ------------------------------------------------------------

    /// Populates gradients of `out` w.r.t. every tracked node, including
    /// `grad` on requires-grad leaves.
    pub fn backward(&mut self, out: VarId) -> Result<()> {
        if !self.nodes[out.0].value.is_scalar() {
            return Err(AmvisError::NonScalarOutput {
                shape: self.nodes[out.0].value.shape.clone(),
            });
        }
        self.grads = (0..self.nodes.len()).map(|_| None).collect();
        self.grads[out.0] = Some(vec![1.0]);
        for id in (0..=out.0).rev() {
            if !self.nodes[id].requires {
                continue;
            }
            let g = match self.grads[id].take() {
                Some(g) => g,
                None => continue,
            };
            self.propagate(id, &g);
            self.grads[id] = Some(g);
        }
        // publish onto leaves
        for id in 0..self.nodes.len() {
            if matches!(self.nodes[id].op, Op::Leaf) && self.nodes[id].value.requires_grad {
                self.nodes[id].value.grad = self.grads[id].clone();
            }
        }
        Ok(())
    }

    fn accumulate(&mut self, v: VarId, contrib: Vec<f64>) {
        if !self.requires(v) {
            return;
        }
        match &mut self.grads[v.0] {
            Some(g) => {
                for (gi, ci) in g.iter_mut().zip(contrib) {
                    *gi += ci;
                }
            }
            slot @ None => *slot = Some(contrib),
        }
    }

    fn binary_backward(
        &mut self,
        id: usize,
        g: &[f64],
        a: VarId,
        b: VarId,
        da: impl Fn(f64, f64) -> f64,
        db: impl Fn(f64, f64) -> f64,
    ) {
        let out_shape = self.nodes[id].value.shape.clone();
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        let bs_a = broadcast_strides(&sa, &out_shape);
        let bs_b = broadcast_strides(&sb, &out_shape);
        let so = strides_for(&out_shape);
        let need_a = self.requires(a);
        let need_b = self.requires(b);
        let na: usize = sa.iter().product();
        let nb: usize = sb.iter().product();
        let mut ga = vec![0.0f64; if need_a { na } else { 0 }];
        let mut gb = vec![0.0f64; if need_b { nb } else { 0 }];
        {
            let va = &self.nodes[a.0].value.data;
            let vb = &self.nodes[b.0].value.data;
            for (lin, &gv) in g.iter().enumerate() {
                let mut rem = lin;
                let (mut ia, mut ib) = (0usize, 0usize);
                for (d, &st) in so.iter().enumerate() {
                    let idx = rem / st;
                    rem %= st;
                    ia += idx * bs_a[d];
                    ib += idx * bs_b[d];
                }
                if need_a {
                    ga[ia] += gv * da(va[ia], vb[ib]);
                }
                if need_b {
                    gb[ib] += gv * db(va[ia], vb[ib]);
                }
            }
        }
        if need_a {
            self.accumulate(a, ga);
        }
        if need_b {
            self.accumulate(b, gb);
        }
    }

    fn unary_backward(&mut self, g: &[f64], a: VarId, df: impl Fn(f64) -> f64) {
        if !self.requires(a) {
            return;
        }
        let contrib: Vec<f64> = self.nodes[a.0]
            .value
            .data
            .iter()
            .zip(g)
            .map(|(&x, &gv)| gv * df(x))
            .collect();
        self.accumulate(a, contrib);
    }

    fn propagate(&mut self, id: usize, g: &[f64]) {
        let op = self.nodes[id].op.clone();
        match op {
            Op::Leaf => {}
            Op::Add(a, b) => self.binary_backward(id, g, a, b, |_, _| 1.0, |_, _| 1.0),
            Op::Sub(a, b) => self.binary_backward(id, g, a, b, |_, _| 1.0, |_, _| -1.0),
            Op::Mul(a, b) => self.binary_backward(id, g, a, b, |_, y| y, |x, _| x),
            Op::Div(a, b) => {
                self.binary_backward(id, g, a, b, |_, y| 1.0 / y, |x, y| -x / (y * y))
            }
            Op::Neg(a) => self.unary_backward(g, a, |_| -1.0),
            Op::Scale(a, c) => self.unary_backward(g, a, move |_| c),
            Op::AddScalar(a) => self.unary_backward(g, a, |_| 1.0),
            // subgradient 0 at exactly 0
            Op::Relu(a) => self.unary_backward(g, a, |x| if x > 0.0 { 1.0 } else { 0.0 }),
            Op::Sigmoid(a) => self.unary_backward(g, a, |x| {
                let s = sigmoid(x);
                s * (1.0 - s)
            }),
            Op::Gelu(a) => self.unary_backward(g, a, gelu_tanh_deriv),
            Op::Sqrt(a) => self.unary_backward(g, a, |x| 0.5 / x.sqrt()),
            Op::Abs(a) => self.unary_backward(g, a, |x| {
                if x > 0.0 {
                    1.0
                } else if x < 0.0 {
                    -1.0
                } else {
                    0.0
                }
            }),
            Op::Matmul(a, b) => {
                let sa = self.shape(a).to_vec();
                let sb = self.shape(b).to_vec();
                let (m, k, n) = (sa[0], sa[1], sb[1]);
                if self.requires(a) {
                    let ga = mat_mm_nt(g, &self.nodes[b.0].value.data, m, n, k);
                    self.accumulate(a, ga);
                }
                if self.requires(b) {
                    let gb = mat_mm_tn(&self.nodes[a.0].value.data, g, m, k, n);
                    self.accumulate(b, gb);
                }
            }
            Op::Bmm(a, b) => {
                let sa = self.shape(a).to_vec();
                let sb = self.shape(b).to_vec();
                let (bsz, m, k, n) = (sa[0], sa[1], sa[2], sb[2]);
                if self.requires(a) {
                    let mut ga = vec![0.0f64; bsz * m * k];
                    for i in 0..bsz {
                        let gi = &g[i * m * n..(i + 1) * m * n];
                        let bi = &self.nodes[b.0].value.data[i * k * n..(i + 1) * k * n];
                        let part = mat_mm_nt(gi, bi, m, n, k);
                        ga[i * m * k..(i + 1) * m * k].copy_from_slice(&part);
                    }
                    self.accumulate(a, ga);
                }
                if self.requires(b) {
                    let mut gb = vec![0.0f64; bsz * k * n];
                    for i in 0..bsz {
                        let gi = &g[i * m * n..(i + 1) * m * n];
                        let ai = &self.nodes[a.0].value.data[i * m * k..(i + 1) * m * k];
                        let part = mat_mm_tn(ai, gi, m, k, n);
                        gb[i * k * n..(i + 1) * k * n].copy_from_slice(&part);
                    }
                    self.accumulate(b, gb);
                }
            }
            Op::TransposeLast2(a) => {
                if self.requires(a) {
                    let out_shape = self.nodes[id].value.shape.clone();
                    let ga = transpose_last2_data(g, &out_shape);
                    self.accumulate(a, ga);
                }
            }
            Op::Permute(a, perm) => {
                if self.requires(a) {
                    let out_shape = self.nodes[id].value.shape.clone();
                    let mut inv = vec![0usize; perm.len()];
                    for (i, &p) in perm.iter().enumerate() {
                        inv[p] = i;
                    }
                    let ga = permute_data(g, &out_shape, &inv);
                    self.accumulate(a, ga);
                }
            }
            Op::Reshape(a) => {
                if self.requires(a) {
                    self.accumulate(a, g.to_vec());
                }
            }
            Op::Narrow {
                parent,
                axis,
                start,
                len,
            } => {
                if self.requires(parent) {
                    let sp = self.shape(parent).to_vec();
                    let outer: usize = sp[..axis].iter().product();
                    let inner: usize = sp[axis + 1..].iter().product();
                    let mut gp = vec![0.0f64; sp.iter().product()];
                    for o in 0..outer {
                        let dst = o * sp[axis] * inner + start * inner;
                        let src = o * len * inner;
                        gp[dst..dst + len * inner].copy_from_slice(&g[src..src + len * inner]);
                    }
                    self.accumulate(parent, gp);
                }
            }
            Op::Select {
                parent,
                axis,
                index,
            } => {
                if self.requires(parent) {
                    let sp = self.shape(parent).to_vec();
                    let outer: usize = sp[..axis].iter().product();
                    let inner: usize = sp[axis + 1..].iter().product();
                    let mut gp = vec![0.0f64; sp.iter().product()];
                    for o in 0..outer {
                        let dst = o * sp[axis] * inner + index * inner;
                        gp[dst..dst + inner].copy_from_slice(&g[o * inner..(o + 1) * inner]);
                    }
                    self.accumulate(parent, gp);
                }
            }
            Op::Conv2d {
                input,
                kernel,
                stride,
                padding,
            } => {
                let si = self.shape(input).to_vec();
                let sk = self.shape(kernel).to_vec();
                let (n, c, h, w) = (si[0], si[1], si[2], si[3]);
                let (ko, kh, kw) = (sk[0], sk[2], sk[3]);
                let out_shape = self.nodes[id].value.shape.clone();
                let (oh, ow) = (out_shape[2], out_shape[3]);
                let need_in = self.requires(input);
                let need_k = self.requires(kernel);
                let mut gin = vec![0.0f64; if need_in { n * c * h * w } else { 0 }];
                let mut gk = vec![0.0f64; if need_k { ko * c * kh * kw } else { 0 }];
                {
                    let din = &self.nodes[input.0].value.data;
                    let dk = &self.nodes[kernel.0].value.data;
                    for in_ in 0..n {
                        for oc in 0..ko {
                            for oy in 0..oh {
                                for ox in 0..ow {
                                    let gv = g[((in_ * ko + oc) * oh + oy) * ow + ox];
                                    if gv == 0.0 {
                                        continue;
                                    }
                                    for ic in 0..c {
                                        for ky in 0..kh {
                                            let iy =
                                                (oy * stride + ky) as isize - padding as isize;
                                            if iy < 0 || iy >= h as isize {
                                                continue;
                                            }
                                            let row = ((in_ * c + ic) * h + iy as usize) * w;
                                            let krow = ((oc * c + ic) * kh + ky) * kw;
                                            for kx in 0..kw {
                                                let ix = (ox * stride + kx) as isize
                                                    - padding as isize;
                                                if ix < 0 || ix >= w as isize {
                                                    continue;
                                                }
                                                if need_in {
                                                    gin[row + ix as usize] += gv * dk[krow + kx];
                                                }
                                                if need_k {
                                                    gk[krow + kx] += gv * din[row + ix as usize];
                                                }
                                            }
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
                if need_in {
                    self.accumulate(input, gin);
                }
                if need_k {
                    self.accumulate(kernel, gk);
                }
            }
            Op::MaxPool2x2 { parent, argmax } => {
                if self.requires(parent) {
                    let mut gp = vec![0.0f64; self.nodes[parent.0].value.numel()];
                    for (o, &src) in argmax.iter().enumerate() {
                        gp[src] += g[o];
                    }
                    self.accumulate(parent, gp);
                }
            }
            Op::Softmax { parent, axis } => {
                if self.requires(parent) {
                    let sa = self.shape(parent).to_vec();
                    let n = sa[axis];
                    let outer: usize = sa[..axis].iter().product();
                    let inner: usize = sa[axis + 1..].iter().product();
                    let y = &self.nodes[id].value.data;
                    let mut gp = vec![0.0f64; y.len()];
                    for o in 0..outer {
                        for i in 0..inner {
                            let lane = |j: usize| o * n * inner + j * inner + i;
                            let mut dot = 0.0;
                            for j in 0..n {
                                dot += g[lane(j)] * y[lane(j)];
                            }
                            for j in 0..n {
                                gp[lane(j)] = y[lane(j)] * (g[lane(j)] - dot);
                            }
                        }
                    }
                    self.accumulate(parent, gp);
                }
            }
            Op::ReduceSum { parent, axes, keep } | Op::ReduceMean { parent, axes, keep } => {
                let is_mean = matches!(self.nodes[id].op, Op::ReduceMean { .. });
                if self.requires(parent) {
                    let sp = self.shape(parent).to_vec();
                    let mut mask = vec![false; sp.len()];
                    for &ax in &axes {
                        mask[ax] = true;
                    }
                    let count: usize = axes.iter().map(|&ax| sp[ax]).product();
                    let scale = if is_mean { 1.0 / count as f64 } else { 1.0 };
                    let kept: Vec<usize> = sp
                        .iter()
                        .enumerate()
                        .map(|(i, &d)| if mask[i] { 1 } else { d })
                        .collect();
                    let kstrides = strides_for(&kept);
                    let istrides = strides_for(&sp);
                    let mut gp = vec![0.0f64; sp.iter().product()];
                    for (lin, slot) in gp.iter_mut().enumerate() {
                        let mut rem = lin;
                        let mut o = 0usize;
                        for (i, &st) in istrides.iter().enumerate() {
                            let idx = rem / st;
                            rem %= st;
                            if !mask[i] {
                                o += idx * kstrides[i];
                            }
                        }
                        *slot = g[o] * scale;
                    }
                    let _ = keep;
                    self.accumulate(parent, gp);
                }
            }
            Op::ReduceMax { parent, argmax } => {
                if self.requires(parent) {
                    let mut gp = vec![0.0f64; self.nodes[parent.0].value.numel()];
                    for (o, &src) in argmax.iter().enumerate() {
                        gp[src] += g[o];
                    }
                    self.accumulate(parent, gp);
                }
            }
            Op::CrossEntropy { logits, labels } => {
                if self.requires(logits) {
                    let sl = self.shape(logits).to_vec();
                    let (n, c) = (sl[0], sl[1]);
                    let din = &self.nodes[logits.0].value.data;
                    let mut gp = vec![0.0f64; n * c];
                    let g0 = g[0] / n as f64;
                    for i in 0..n {
                        let row = &din[i * c..(i + 1) * c];
                        let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                        let sum: f64 = row.iter().map(|&v| (v - mx).exp()).sum();
                        for j in 0..c {
                            let p = (row[j] - mx).exp() / sum;
                            gp[i * c + j] =
                                g0 * (p - if labels[i] == j { 1.0 } else { 0.0 });
                        }
                    }
                    self.accumulate(logits, gp);
                }
            }
            Op::SpectrumDecode {
                re,
                im,
                scale,
                height,
                width,
            } => {
                let channels = self.shape(re)[0];
                let (gre, gim) = crate::fourier::decode_backward_raw(
                    g, &scale, channels, height, width,
                );
                if self.requires(re) {
                    self.accumulate(re, gre);
                }
                if self.requires(im) {
                    self.accumulate(im, gim);
                }
            }
            Op::PatchExtract { parent, patch } => {
                if self.requires(parent) {
                    let sp = self.shape(parent).to_vec();
                    let (n, c, h, w) = (sp[0], sp[1], sp[2], sp[3]);
                    let (gh, gw) = (h / patch, w / patch);
                    let tokens = gh * gw;
                    let dim = c * patch * patch;
                    let mut gp = vec![0.0f64; n * c * h * w];
                    for b in 0..n {
                        for ty in 0..gh {
                            for tx in 0..gw {
                                let tok = ty * gw + tx;
                                for ic in 0..c {
                                    for py in 0..patch {
                                        for px in 0..patch {
                                            let dst = ((b * c + ic) * h + ty * patch + py) * w
                                                + tx * patch
                                                + px;
                                            let src = (b * tokens + tok) * dim
                                                + (ic * patch + py) * patch
                                                + px;
                                            gp[dst] += g[src];
                                        }
                                    }
                                }
                            }
                        }
                    }
                    self.accumulate(parent, gp);
                }
            }
            Op::Warp { parent, spec } => {
                if self.requires(parent) {
                    let sp = self.shape(parent).to_vec();
                    let gp = crate::transforms::warp_backward(g, &sp, &spec);
                    self.accumulate(parent, gp);
                }
            }
        }
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

const GELU_K: f64 = 0.7978845608028654; // sqrt(2/pi)
const GELU_C: f64 = 0.044715;

pub(crate) fn gelu_tanh(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_K * (x + GELU_C * x * x * x)).tanh())
}

fn gelu_tanh_deriv(x: f64) -> f64 {
    let u = GELU_K * (x + GELU_C * x * x * x);
    let t = u.tanh();
    let sech2 = 1.0 - t * t;
    0.5 * (1.0 + t) + 0.5 * x * sech2 * GELU_K * (1.0 + 3.0 * GELU_C * x * x)
}

/// C[m,n] = A[m,k] B[k,n]
fn mat_mm(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut c = vec![0.0f64; m * n];
    for i in 0..m {
        for p in 0..k {
            let aip = a[i * k + p];
            if aip == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            let crow = &mut c[i * n..(i + 1) * n];
            for j in 0..n {
                crow[j] += aip * brow[j];
            }
        }
    }
    c
}

/// C[m,k] = A[m,n] B[k,n]^T
fn mat_mm_nt(a: &[f64], b: &[f64], m: usize, n: usize, k: usize) -> Vec<f64> {
    let mut c = vec![0.0f64; m * k];
    for i in 0..m {
        let arow = &a[i * n..(i + 1) * n];
        for p in 0..k {
            let brow = &b[p * n..(p + 1) * n];
            let mut acc = 0.0;
            for j in 0..n {
                acc += arow[j] * brow[j];
            }
            c[i * k + p] = acc;
        }
    }
    c
}

/// C[k,n] = A[m,k]^T B[m,n]
fn mat_mm_tn(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut c = vec![0.0f64; k * n];
    for i in 0..m {
        let brow = &b[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = a[i * k + p];
            if aip == 0.0 {
                continue;
            }
            let crow = &mut c[p * n..(p + 1) * n];
            for j in 0..n {
                crow[j] += aip * brow[j];
            }
        }
    }
    c
}

fn transpose_last2_data(data: &[f64], shape: &[usize]) -> Vec<f64> {
    let r = shape.len();
    let (m, n) = (shape[r - 2], shape[r - 1]);
    let batch: usize = shape[..r - 2].iter().product();
    let mut out = vec![0.0f64; data.len()];
    for b in 0..batch {
        let src = &data[b * m * n..(b + 1) * m * n];
        let dst = &mut out[b * m * n..(b + 1) * m * n];
        for i in 0..m {
            for j in 0..n {
                dst[j * m + i] = src[i * n + j];
            }
        }
    }
    out
}

fn permute_data(data: &[f64], shape: &[usize], perm: &[usize]) -> Vec<f64> {
    let out_shape: Vec<usize> = perm.iter().map(|&p| shape[p]).collect();
    let in_strides = strides_for(shape);
    let out_strides = strides_for(&out_shape);
    let mut out = vec![0.0f64; data.len()];
    for (lin, slot) in out.iter_mut().enumerate() {
        let mut rem = lin;
        let mut src = 0usize;
        for (d, &st) in out_strides.iter().enumerate() {
            let idx = rem / st;
            rem %= st;
            src += idx * in_strides[perm[d]];
        }
        *slot = data[src];
    }
    out
}
