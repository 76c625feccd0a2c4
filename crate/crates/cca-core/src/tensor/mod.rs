//! Dense tensors with reverse-mode automatic differentiation.
//!
//! Operations are recorded on a [`Tape`]; [`Tape::backward`] replays the
//! tape in reverse and deposits gradients on tracked leaves. One tape
//! serves one forward/backward pass; data-parallel work uses independent
//! tapes. Parameter buffers are shared into tapes as `Arc` slices, so
//! binding a model to a tape copies nothing.

mod conv;
mod gemm;
mod ops;

pub use gemm::{gemm_acc, gemm_acc_nt, transpose};
pub use ops::concat_channels;

use std::cell::RefCell;
use std::rc::Rc;
use std::sync::Arc;

use crate::error::{CoreError, CoreResult};
use crate::scalar::Scalar;

pub(crate) use conv::ConvCtx;

/// Plain tensor value: shape plus row-major data, no tape attached.
#[derive(Clone, Debug, PartialEq)]
pub struct TensorData<S: Scalar> {
    pub shape: Vec<usize>,
    pub data: Vec<S>,
}

impl<S: Scalar> TensorData<S> {
    pub fn new(shape: Vec<usize>, data: Vec<S>) -> CoreResult<Self> {
        if numel(&shape) != data.len() {
            return Err(CoreError::InvalidShape {
                op: "tensor",
                shape,
                reason: format!("data length {} does not match shape product", data.len()),
            });
        }
        Ok(TensorData { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = numel(&shape);
        TensorData {
            shape,
            data: vec![S::zero(); n],
        }
    }

    pub fn scalar(v: S) -> Self {
        TensorData {
            shape: vec![1],
            data: vec![v],
        }
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }
}

pub fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

/// Backward rule for operations implemented outside the core op set.
pub trait CustomOp<S: Scalar> {
    fn name(&self) -> &'static str;
    /// Accumulate input gradients. `grads[i]` is `Some` iff input `i` is
    /// tracked; implementations must add into the provided buffers.
    fn backward(
        &self,
        inputs: &[(&[S], &[usize])],
        output: &[S],
        grad_out: &[S],
        grads: &mut [Option<&mut Vec<S>>],
    );
}

pub(crate) enum Op<S: Scalar> {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Div(usize, usize),
    Matmul {
        a: usize,
        b: usize,
        m: usize,
        k: usize,
        n: usize,
    },
    Scale(usize, S),
    AddScalar(usize),
    Square(usize),
    Exp(usize),
    Ln(usize),
    Tanh(usize),
    Sigmoid(usize),
    Softplus(usize),
    Gelu(usize),
    NormalCdf(usize),
    ClampMin(usize, S),
    RoundSte(usize),
    AddNoise(usize),
    SumAll(usize),
    MeanAll(usize),
    ConcatC(Vec<usize>),
    SliceC {
        x: usize,
        start_ch: usize,
    },
    CropSpatial {
        x: usize,
        y0: usize,
        x0: usize,
    },
    GlobalAvgPool(usize),
    ChannelMul {
        x: usize,
        s: usize,
    },
    LayerNormCh {
        x: usize,
        gamma: usize,
        beta: usize,
        mean: Vec<S>,
        rstd: Vec<S>,
    },
    Conv2d(ConvCtx),
    ConvT2d(ConvCtx),
    DwConv2d(ConvCtx),
    Custom {
        inputs: Vec<usize>,
        rule: Box<dyn CustomOp<S>>,
    },
}

pub(crate) struct Node<S: Scalar> {
    pub shape: Vec<usize>,
    pub values: Arc<Vec<S>>,
    pub grad: Option<Vec<S>>,
    pub requires_grad: bool,
    pub is_leaf: bool,
    pub op: Op<S>,
}

pub(crate) struct TapeInner<S: Scalar> {
    pub nodes: Vec<Node<S>>,
    pub backward_run: bool,
    pub check_finite: bool,
}

/// Recording tape. Single-threaded; cheap to create per step.
pub struct Tape<S: Scalar> {
    pub(crate) inner: Rc<RefCell<TapeInner<S>>>,
}

impl<S: Scalar> Clone for Tape<S> {
    fn clone(&self) -> Self {
        Tape {
            inner: Rc::clone(&self.inner),
        }
    }
}

impl<S: Scalar> Default for Tape<S> {
    fn default() -> Self {
        Self::new()
    }
}

/// Handle to a node on a tape.
pub struct Tensor<S: Scalar> {
    pub(crate) tape: Tape<S>,
    pub(crate) id: usize,
}

impl<S: Scalar> Clone for Tensor<S> {
    fn clone(&self) -> Self {
        Tensor {
            tape: self.tape.clone(),
            id: self.id,
        }
    }
}

impl<S: Scalar> std::fmt::Debug for Tensor<S> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Tensor")
            .field("id", &self.id)
            .field("shape", &self.shape())
            .field("requires_grad", &self.requires_grad())
            .finish()
    }
}

impl<S: Scalar> Tape<S> {
    pub fn new() -> Self {
        Tape {
            inner: Rc::new(RefCell::new(TapeInner {
                nodes: Vec::new(),
                backward_run: false,
                check_finite: true,
            })),
        }
    }

    /// Disable the per-op finite check (values are still checked at leaves).
    pub fn set_check_finite(&self, on: bool) {
        self.inner.borrow_mut().check_finite = on;
    }

    pub fn len(&self) -> usize {
        self.inner.borrow().nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn leaf(&self, data: TensorData<S>, requires_grad: bool) -> CoreResult<Tensor<S>> {
        self.leaf_shared(data.shape, Arc::new(data.data), requires_grad)
    }

    pub fn leaf_shared(
        &self,
        shape: Vec<usize>,
        values: Arc<Vec<S>>,
        requires_grad: bool,
    ) -> CoreResult<Tensor<S>> {
        if numel(&shape) != values.len() {
            return Err(CoreError::InvalidShape {
                op: "leaf",
                shape,
                reason: format!("data length {} does not match shape product", values.len()),
            });
        }
        if !values.iter().all(|v| v.is_finite()) {
            return Err(CoreError::NonFinite { op: "leaf" });
        }
        Ok(self.push(Node {
            shape,
            values,
            grad: None,
            requires_grad,
            is_leaf: true,
            op: Op::Leaf,
        }))
    }

    pub(crate) fn push(&self, node: Node<S>) -> Tensor<S> {
        let mut inner = self.inner.borrow_mut();
        inner.nodes.push(node);
        Tensor {
            tape: self.clone(),
            id: inner.nodes.len() - 1,
        }
    }

    pub(crate) fn push_op(
        &self,
        op_name: &'static str,
        shape: Vec<usize>,
        values: Vec<S>,
        requires_grad: bool,
        op: Op<S>,
    ) -> CoreResult<Tensor<S>> {
        {
            let inner = self.inner.borrow();
            if inner.check_finite && !values.iter().all(|v| v.is_finite()) {
                return Err(CoreError::NonFinite { op: op_name });
            }
        }
        debug_assert_eq!(numel(&shape), values.len());
        Ok(self.push(Node {
            shape,
            values: Arc::new(values),
            grad: None,
            requires_grad,
            is_leaf: false,
            op,
        }))
    }

    /// Clear stored leaf gradients and re-arm backward.
    pub fn zero_grads(&self) {
        let mut inner = self.inner.borrow_mut();
        for node in inner.nodes.iter_mut() {
            node.grad = None;
        }
        inner.backward_run = false;
    }

    /// Reverse sweep: deposits d(loss)/d(leaf) on every tracked leaf.
    ///
    /// Errors if `loss` is not scalar or if gradients are already
    /// populated (call [`Tape::zero_grads`] first).
    pub fn backward(&self, loss: &Tensor<S>) -> CoreResult<()> {
        if !Rc::ptr_eq(&self.inner, &loss.tape.inner) {
            return Err(CoreError::TapeMismatch);
        }
        let mut inner = self.inner.borrow_mut();
        if inner.backward_run {
            return Err(CoreError::GradsAlreadyPopulated);
        }
        {
            let node = &inner.nodes[loss.id];
            if numel(&node.shape) != 1 {
                return Err(CoreError::NonScalarLoss {
                    shape: node.shape.clone(),
                });
            }
        }
        inner.backward_run = true;
        let n_nodes = inner.nodes.len();
        let mut grads: Vec<Option<Vec<S>>> = (0..n_nodes).map(|_| None).collect();
        grads[loss.id] = Some(vec![S::one()]);

        for id in (0..=loss.id).rev() {
            let gout = match grads[id].take() {
                Some(g) => g,
                None => continue,
            };
            let node = &inner.nodes[id];
            if !node.requires_grad {
                continue;
            }
            if node.is_leaf {
                inner.nodes[id].grad = Some(gout);
                continue;
            }
            ops::backward_op(&inner.nodes, id, &gout, &mut grads);
        }
        Ok(())
    }
}

impl<S: Scalar> Tensor<S> {
    pub fn tape(&self) -> Tape<S> {
        self.tape.clone()
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tape.inner.borrow().nodes[self.id].shape.clone()
    }

    pub fn numel(&self) -> usize {
        numel(&self.tape.inner.borrow().nodes[self.id].shape)
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.inner.borrow().nodes[self.id].requires_grad
    }

    /// Copy of the forward values.
    pub fn value(&self) -> Vec<S> {
        self.tape.inner.borrow().nodes[self.id].values.as_ref().clone()
    }

    /// Shared handle to the forward values (no copy).
    pub fn value_arc(&self) -> Arc<Vec<S>> {
        Arc::clone(&self.tape.inner.borrow().nodes[self.id].values)
    }

    pub fn data(&self) -> TensorData<S> {
        let inner = self.tape.inner.borrow();
        let node = &inner.nodes[self.id];
        TensorData {
            shape: node.shape.clone(),
            data: node.values.as_ref().clone(),
        }
    }

    /// Gradient buffer, present on tracked leaves after backward.
    pub fn grad(&self) -> Option<Vec<S>> {
        self.tape.inner.borrow().nodes[self.id].grad.clone()
    }

    /// Scalar value of a single-element tensor.
    pub fn item(&self) -> S {
        let inner = self.tape.inner.borrow();
        debug_assert_eq!(numel(&inner.nodes[self.id].shape), 1);
        inner.nodes[self.id].values[0]
    }

    /// New untracked leaf on the same tape sharing this tensor's values.
    pub fn detach(&self) -> Tensor<S> {
        let (shape, values) = {
            let inner = self.tape.inner.borrow();
            let node = &inner.nodes[self.id];
            (node.shape.clone(), Arc::clone(&node.values))
        };
        self.tape.push(Node {
            shape,
            values,
            grad: None,
            requires_grad: false,
            is_leaf: true,
            op: Op::Leaf,
        })
    }

    pub(crate) fn same_tape(&self, other: &Tensor<S>) -> CoreResult<()> {
        if Rc::ptr_eq(&self.tape.inner, &other.tape.inner) {
            Ok(())
        } else {
            Err(CoreError::TapeMismatch)
        }
    }
}

/// Max relative error between analytic gradients and central differences.
///
/// `f` must produce a scalar from the input tensor; the check evaluates
/// `f` forward-only at perturbed points, so it is independent of the
/// backward implementation it validates.
pub fn finite_diff_check<S, F>(f: &F, point: &TensorData<S>, eps: f64) -> CoreResult<f64>
where
    S: Scalar,
    F: Fn(&Tape<S>, &Tensor<S>) -> CoreResult<Tensor<S>>,
{
    if !(1e-6..=1e-3).contains(&eps) {
        return Err(CoreError::InvalidEps(eps));
    }
    let tape = Tape::new();
    let x = tape.leaf(point.clone(), true)?;
    let loss = f(&tape, &x)?;
    if loss.numel() != 1 {
        return Err(CoreError::NonScalarLoss {
            shape: loss.shape(),
        });
    }
    tape.backward(&loss)?;
    let analytic = x
        .grad()
        .ok_or_else(|| CoreError::Invalid("no gradient on checked input".into()))?;

    let eval = |data: &[S]| -> CoreResult<f64> {
        let t = Tape::new();
        let leaf = t.leaf(
            TensorData::new(point.shape.clone(), data.to_vec())?,
            false,
        )?;
        let out = f(&t, &leaf)?;
        let v = out.item().to_real();
        if !v.is_finite() {
            return Err(CoreError::NonFinite {
                op: "finite_diff_check",
            });
        }
        Ok(v)
    };

    let h = S::from_real(eps);
    let mut max_rel = 0.0f64;
    let mut buf = point.data.clone();
    for i in 0..buf.len() {
        let orig = buf[i];
        buf[i] = orig + h;
        let fp = eval(&buf)?;
        buf[i] = orig - h;
        let fm = eval(&buf)?;
        buf[i] = orig;
        let fd = (fp - fm) / (2.0 * eps);
        let a = analytic[i].to_real();
        let rel = (a - fd).abs() / a.abs().max(fd.abs()).max(1e-12);
        if rel > max_rel {
            max_rel = rel;
        }
    }
    Ok(max_rel)
}
