//! Recording tape for reverse-mode differentiation.
//!
//! A forward pass runs against exactly one [`Tape`]. Every differentiable
//! operation appends a node holding the saved values its backward rule
//! needs; nodes are therefore already in topological order and the
//! backward pass is a single reverse sweep.
//!
//! A tape built with [`Tape::inference`] executes the same operations
//! without recording; [`Tape::backward`] on such a tape is an error.

use std::collections::BTreeMap;
use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use crate::error::{Result, TensorError};
use crate::ops;
use crate::tensor::{NodeRef, Param, Tensor};

static TAPE_IDS: AtomicU64 = AtomicU64::new(1);

/// Gradients of a scalar loss keyed by parameter name.
pub type GradMap = BTreeMap<String, Tensor>;

/// Input slot of a recorded operation: the producing node (if any) plus the
/// saved forward value.
#[derive(Debug, Clone)]
pub(crate) struct Saved {
    pub node: Option<usize>,
    pub data: Arc<Vec<f64>>,
    pub shape: Vec<usize>,
}

/// Broadcast relationship of a binary op's right operand.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Broadcast {
    /// Identical shapes.
    Same,
    /// Right operand has one element.
    Scalar,
    /// Right operand's shape is a suffix of the left's.
    Suffix,
}

/// Geometry of a depthwise convolution, resolved at forward time.
#[derive(Debug, Clone)]
pub(crate) struct ConvGeom {
    pub batch: usize,
    pub in_h: usize,
    pub in_w: usize,
    pub channels: usize,
    pub kh: usize,
    pub kw: usize,
    pub sh: usize,
    pub sw: usize,
    pub dh: usize,
    pub dw: usize,
    pub pad_top: usize,
    pub pad_left: usize,
    pub out_h: usize,
    pub out_w: usize,
}

#[derive(Debug, Clone)]
pub(crate) enum Op {
    Leaf,
    Add { a: Saved, b: Saved, bcast: Broadcast },
    Mul { a: Saved, b: Saved, bcast: Broadcast },
    Div { a: Saved, b: Saved, bcast: Broadcast },
    Scale { x: Saved, c: f64 },
    Matmul { a: Saved, b: Saved, batch: usize, m: usize, k: usize, n: usize },
    Relu { x: Saved },
    Softplus { x: Saved },
    /// Also covers the masked variant: rows of the saved output that were
    /// masked hold exact zeros, which zeroes their gradient in the shared
    /// backward rule.
    Softmax { x: Saved },
    LogSoftmax { x: Saved },
    LayerNorm { x: Saved, gain: Saved, shift: Saved, xhat: Arc<Vec<f64>>, inv_std: Arc<Vec<f64>> },
    DepthwiseConv2d { x: Saved, w: Saved, geom: ConvGeom },
    MaxPool2d { x: Saved, argmax: Arc<Vec<usize>> },
    GlobalAvgPool { x: Saved },
    Embedding { table: Saved, ids: Arc<Vec<usize>> },
    Concat { parts: Vec<Saved>, axis: usize },
    Reshape { x: Saved },
    Permute { x: Saved, perm: Vec<usize> },
    GatherRows { x: Saved, rows: Arc<Vec<usize>> },
    ScatterRows { x: Saved, rows: Arc<Vec<usize>> },
    GatherCells { x: Saved, rows: Arc<Vec<usize>>, cols: Arc<Vec<usize>> },
    ScaleRows { x: Saved, s: Saved },
    SumAll { x: Saved },
    SumAxis0 { x: Saved },
}

pub(crate) struct Node {
    pub op: Op,
    pub out: Arc<Vec<f64>>,
    pub out_shape: Vec<usize>,
}

/// Operation recorder for one forward pass.
pub struct Tape {
    id: u64,
    recording: bool,
    pub(crate) nodes: Vec<Node>,
    named: HashMap<String, usize>,
}

impl Tape {
    /// New recording tape.
    pub fn new() -> Tape {
        Tape {
            id: TAPE_IDS.fetch_add(1, Ordering::Relaxed),
            recording: true,
            nodes: Vec::new(),
            named: HashMap::new(),
        }
    }

    /// Tape that executes operations without recording them. Gradients are
    /// unavailable; forward results are bit-identical to a recording tape.
    pub fn inference() -> Tape {
        Tape {
            id: TAPE_IDS.fetch_add(1, Ordering::Relaxed),
            recording: false,
            nodes: Vec::new(),
            named: HashMap::new(),
        }
    }

    pub fn is_recording(&self) -> bool {
        self.recording
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Registers a named parameter leaf. Binding the same name twice returns
    /// the original leaf so gradient accumulation is handled by the graph;
    /// rebinding a name to a different tensor is an error.
    pub fn param(&mut self, p: &Param) -> Result<Tensor> {
        if !self.recording {
            return Ok(p.value.detach());
        }
        if let Some(&idx) = self.named.get(&p.name) {
            if !Arc::ptr_eq(&self.nodes[idx].out, &p.value.data_arc()) {
                return Err(TensorError::InvalidArgument {
                    op: "Tape::param",
                    detail: format!("name {:?} rebound to a different tensor", p.name),
                });
            }
            return Ok(Tensor::with_shared_data(
                self.nodes[idx].out_shape.clone(),
                Arc::clone(&self.nodes[idx].out),
                Some(NodeRef { tape_id: self.id, index: idx }),
            ));
        }
        let idx = self.nodes.len();
        self.nodes.push(Node {
            op: Op::Leaf,
            out: p.value.data_arc(),
            out_shape: p.value.shape().to_vec(),
        });
        self.named.insert(p.name.clone(), idx);
        Ok(Tensor::with_shared_data(
            p.value.shape().to_vec(),
            p.value.data_arc(),
            Some(NodeRef { tape_id: self.id, index: idx }),
        ))
    }

    /// Captures an input slot, validating tape ownership.
    pub(crate) fn saved(&self, t: &Tensor, op: &'static str) -> Result<Saved> {
        let node = match t.node {
            None => None,
            Some(r) if r.tape_id == self.id => Some(r.index),
            Some(_) => return Err(TensorError::ForeignTape { op }),
        };
        Ok(Saved {
            node: if self.recording { node } else { None },
            data: t.data_arc(),
            shape: t.shape().to_vec(),
        })
    }

    /// Finalizes an op: records the node when the tape is recording and
    /// wraps the output buffer.
    pub(crate) fn push(&mut self, op: Op, shape: Vec<usize>, data: Vec<f64>) -> Tensor {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        debug_assert!(
            data.iter().all(|v| v.is_finite()),
            "op produced non-finite output"
        );
        let out = Arc::new(data);
        if self.recording {
            let idx = self.nodes.len();
            self.nodes.push(Node {
                op,
                out: Arc::clone(&out),
                out_shape: shape.clone(),
            });
            Tensor::with_shared_data(shape, out, Some(NodeRef { tape_id: self.id, index: idx }))
        } else {
            Tensor::with_shared_data(shape, out, None)
        }
    }

    /// Zero-copy output sharing an existing buffer (reshape).
    pub(crate) fn push_shared(&mut self, op: Op, shape: Vec<usize>, data: Arc<Vec<f64>>) -> Tensor {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        if self.recording {
            let idx = self.nodes.len();
            self.nodes.push(Node {
                op,
                out: Arc::clone(&data),
                out_shape: shape.clone(),
            });
            Tensor::with_shared_data(shape, data, Some(NodeRef { tape_id: self.id, index: idx }))
        } else {
            Tensor::with_shared_data(shape, data, None)
        }
    }

    /// Reverse sweep from a scalar loss. Returns gradients for every named
    /// parameter leaf; leaves the loss does not reach get zero gradients.
    pub fn backward(&self, loss: &Tensor) -> Result<GradMap> {
        if !self.recording {
            return Err(TensorError::NotRecording);
        }
        if loss.numel() != 1 {
            return Err(TensorError::NonScalarLoss { numel: loss.numel() });
        }
        let root = match loss.node {
            Some(r) if r.tape_id == self.id => r.index,
            _ => return Err(TensorError::ForeignTape { op: "backward" }),
        };

        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[root] = Some(vec![1.0]);

        for idx in (0..=root).rev() {
            let dy = match grads[idx].take() {
                Some(g) => g,
                None => continue,
            };
            let node = &self.nodes[idx];
            if let Op::Leaf = node.op {
                // Keep leaf gradients for collection below.
                grads[idx] = Some(dy);
                continue;
            }
            ops::backward_op(node, &dy, &mut |target: usize, contrib: Vec<f64>| {
                match &mut grads[target] {
                    Some(acc) => {
                        for (a, c) in acc.iter_mut().zip(contrib.iter()) {
                            *a += c;
                        }
                    }
                    slot @ None => *slot = Some(contrib),
                }
            });
        }

        let mut out = GradMap::new();
        for (name, &idx) in &self.named {
            let shape = self.nodes[idx].out_shape.clone();
            // Gradients bypass the finiteness assertion: a NaN gradient is
            // reported by the optimizer as an abort, not a panic.
            let grad = match grads[idx].take() {
                Some(g) => Tensor::with_shared_data(shape, Arc::new(g), None),
                None => Tensor::zeros(&shape),
            };
            out.insert(name.clone(), grad);
        }
        Ok(out)
    }
}

impl Default for Tape {
    fn default() -> Self {
        Tape::new()
    }
}
