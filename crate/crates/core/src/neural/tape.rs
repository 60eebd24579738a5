//! Reverse-mode automatic differentiation on a dynamically built tape.
//!
//! Nodes only reference earlier nodes, so creation order is a topological
//! order and the backward pass is a single reverse sweep. Values are checked
//! for NaN/Inf after every op in debug builds.

use std::collections::HashMap;
use std::ops::Range;

use rand::Rng;

use super::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

enum Op {
    Leaf,
    Matmul(NodeId, NodeId),
    MatmulNt(NodeId, NodeId),
    Transpose(NodeId),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, f64),
    AddRowBroadcast(NodeId, NodeId),
    AddColBroadcast(NodeId, NodeId),
    AddScalarBroadcast(NodeId, NodeId),
    Sigmoid(NodeId),
    Tanh(NodeId),
    LeakyRelu(NodeId, f64),
    ConcatRows(Vec<NodeId>),
    ConcatCols(Vec<NodeId>),
    SliceRows(NodeId, Range<usize>),
    SliceCols(NodeId, Range<usize>),
    GatherRows(NodeId, Vec<usize>),
    Dropout(NodeId, Vec<f64>),
    RowSum(NodeId),
    SumAll(NodeId),
    MeanAll(NodeId),
    SqNorm(NodeId),
    /// Mean over rows of the cross-entropy of each row's softmax against its
    /// target class; caches the softmax probabilities for the backward pass.
    SoftmaxCrossEntropy {
        logits: NodeId,
        targets: Vec<usize>,
        probs: Tensor,
    },
    /// Mean binary cross-entropy of `sigmoid(logit)` against soft labels.
    SigmoidBce {
        logits: NodeId,
        labels: Vec<f64>,
        probs: Vec<f64>,
    },
}

struct Node {
    value: Tensor,
    op: Op,
}

/// Dynamic computation graph.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
    bindings: HashMap<String, NodeId>,
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    fn push(&mut self, value: Tensor, op: Op) -> NodeId {
        debug_assert!(
            value.all_finite(),
            "non-finite value produced by op at node {}",
            self.nodes.len()
        );
        self.nodes.push(Node { value, op });
        NodeId(self.nodes.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    /// Gradient of the last `backward` loss w.r.t. `id`; zero if the node is
    /// on no path to the loss.
    pub fn grad(&self, id: NodeId) -> Vec<f64> {
        match self.grads.get(id.0).and_then(|g| g.clone()) {
            Some(g) => g,
            None => vec![0.0; self.nodes[id.0].value.len()],
        }
    }

    pub fn leaf(&mut self, value: Tensor) -> NodeId {
        self.push(value, Op::Leaf)
    }

    /// Leaf bound to a named parameter; repeated calls with one name within
    /// a tape return the same node so gradients accumulate in one slot.
    pub fn named_leaf(&mut self, name: &str, value: Tensor) -> NodeId {
        if let Some(&id) = self.bindings.get(name) {
            return id;
        }
        let id = self.push(value, Op::Leaf);
        self.bindings.insert(name.to_string(), id);
        id
    }

    pub fn bindings(&self) -> impl Iterator<Item = (&str, NodeId)> {
        self.bindings.iter().map(|(k, &v)| (k.as_str(), v))
    }

    // ---- ops ----

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (av, bv) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        let (n, k, k2, m) = (av.rows(), av.cols(), bv.rows(), bv.cols());
        assert_eq!(k, k2, "matmul inner dims {k} vs {k2}");
        let mut out = vec![0.0; n * m];
        for i in 0..n {
            let arow = av.row(i);
            let orow = &mut out[i * m..(i + 1) * m];
            for (kk, &aval) in arow.iter().enumerate() {
                if aval == 0.0 {
                    continue;
                }
                let brow = bv.row(kk);
                for (o, &bval) in orow.iter_mut().zip(brow) {
                    *o += aval * bval;
                }
            }
        }
        self.push(Tensor::matrix(n, m, out), Op::Matmul(a, b))
    }

    /// `a * b^T`.
    pub fn matmul_nt(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (av, bv) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        let (n, k, m, k2) = (av.rows(), av.cols(), bv.rows(), bv.cols());
        assert_eq!(k, k2, "matmul_nt inner dims {k} vs {k2}");
        let mut out = vec![0.0; n * m];
        for i in 0..n {
            let arow = av.row(i);
            for j in 0..m {
                let brow = bv.row(j);
                let mut acc = 0.0;
                for (x, y) in arow.iter().zip(brow) {
                    acc += x * y;
                }
                out[i * m + j] = acc;
            }
        }
        self.push(Tensor::matrix(n, m, out), Op::MatmulNt(a, b))
    }

    pub fn transpose(&mut self, a: NodeId) -> NodeId {
        let av = &self.nodes[a.0].value;
        let (n, m) = (av.rows(), av.cols());
        let mut out = vec![0.0; n * m];
        for i in 0..n {
            for j in 0..m {
                out[j * n + i] = av.row(i)[j];
            }
        }
        self.push(Tensor::matrix(m, n, out), Op::Transpose(a))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (av, bv) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        assert_eq!(av.shape(), bv.shape(), "add shape mismatch");
        let data = av.data().iter().zip(bv.data()).map(|(x, y)| x + y).collect();
        let shape = av.shape().to_vec();
        self.push(Tensor::new(shape, data), Op::Add(a, b))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (av, bv) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        assert_eq!(av.shape(), bv.shape(), "sub shape mismatch");
        let data = av.data().iter().zip(bv.data()).map(|(x, y)| x - y).collect();
        let shape = av.shape().to_vec();
        self.push(Tensor::new(shape, data), Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (av, bv) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        assert_eq!(av.shape(), bv.shape(), "mul shape mismatch");
        let data = av.data().iter().zip(bv.data()).map(|(x, y)| x * y).collect();
        let shape = av.shape().to_vec();
        self.push(Tensor::new(shape, data), Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: NodeId, c: f64) -> NodeId {
        let av = &self.nodes[a.0].value;
        let data = av.data().iter().map(|x| x * c).collect();
        let shape = av.shape().to_vec();
        self.push(Tensor::new(shape, data), Op::Scale(a, c))
    }

    /// `[n,m] + [m]` (or `[1,m]`), the bias-add over rows.
    pub fn add_row_broadcast(&mut self, a: NodeId, bias: NodeId) -> NodeId {
        let (av, bv) = (&self.nodes[a.0].value, &self.nodes[bias.0].value);
        let (n, m) = (av.rows(), av.cols());
        assert_eq!(bv.len(), m, "row-broadcast bias length");
        let mut data = av.data().to_vec();
        for i in 0..n {
            for (x, b) in data[i * m..(i + 1) * m].iter_mut().zip(bv.data()) {
                *x += b;
            }
        }
        self.push(Tensor::matrix(n, m, data), Op::AddRowBroadcast(a, bias))
    }

    /// `[n,m] + [n]` (or `[n,1]`), broadcast across columns.
    pub fn add_col_broadcast(&mut self, a: NodeId, bias: NodeId) -> NodeId {
        let (av, bv) = (&self.nodes[a.0].value, &self.nodes[bias.0].value);
        let (n, m) = (av.rows(), av.cols());
        assert_eq!(bv.len(), n, "col-broadcast bias length");
        let mut data = av.data().to_vec();
        for i in 0..n {
            let b = bv.data()[i];
            for x in &mut data[i * m..(i + 1) * m] {
                *x += b;
            }
        }
        self.push(Tensor::matrix(n, m, data), Op::AddColBroadcast(a, bias))
    }

    /// Add a scalar node to every entry.
    pub fn add_scalar_broadcast(&mut self, a: NodeId, scalar: NodeId) -> NodeId {
        let (av, sv) = (&self.nodes[a.0].value, &self.nodes[scalar.0].value);
        assert_eq!(sv.len(), 1, "scalar-broadcast needs a scalar");
        let s = sv.data()[0];
        let data = av.data().iter().map(|x| x + s).collect();
        let shape = av.shape().to_vec();
        self.push(Tensor::new(shape, data), Op::AddScalarBroadcast(a, scalar))
    }

    pub fn sigmoid(&mut self, a: NodeId) -> NodeId {
        let av = &self.nodes[a.0].value;
        let data = av
            .data()
            .iter()
            .map(|x| 1.0 / (1.0 + (-x).exp()))
            .collect();
        let shape = av.shape().to_vec();
        self.push(Tensor::new(shape, data), Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        let av = &self.nodes[a.0].value;
        let data = av.data().iter().map(|x| x.tanh()).collect();
        let shape = av.shape().to_vec();
        self.push(Tensor::new(shape, data), Op::Tanh(a))
    }

    pub fn leaky_relu(&mut self, a: NodeId, slope: f64) -> NodeId {
        let av = &self.nodes[a.0].value;
        let data = av
            .data()
            .iter()
            .map(|&x| if x > 0.0 { x } else { slope * x })
            .collect();
        let shape = av.shape().to_vec();
        self.push(Tensor::new(shape, data), Op::LeakyRelu(a, slope))
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        self.leaky_relu(a, 0.0)
    }

    pub fn concat_rows(&mut self, parts: &[NodeId]) -> NodeId {
        assert!(!parts.is_empty());
        let cols = self.nodes[parts[0].0].value.cols();
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let v = &self.nodes[p.0].value;
            assert_eq!(v.cols(), cols, "concat_rows column mismatch");
            rows += v.rows();
            data.extend_from_slice(v.data());
        }
        self.push(Tensor::matrix(rows, cols, data), Op::ConcatRows(parts.to_vec()))
    }

    pub fn concat_cols(&mut self, parts: &[NodeId]) -> NodeId {
        assert!(!parts.is_empty());
        let rows = self.nodes[parts[0].0].value.rows();
        let total_cols: usize = parts.iter().map(|&p| self.nodes[p.0].value.cols()).sum();
        let mut data = vec![0.0; rows * total_cols];
        let mut col_off = 0;
        for &p in parts {
            let v = &self.nodes[p.0].value;
            assert_eq!(v.rows(), rows, "concat_cols row mismatch");
            let c = v.cols();
            for i in 0..rows {
                data[i * total_cols + col_off..i * total_cols + col_off + c]
                    .copy_from_slice(v.row(i));
            }
            col_off += c;
        }
        self.push(
            Tensor::matrix(rows, total_cols, data),
            Op::ConcatCols(parts.to_vec()),
        )
    }

    pub fn slice_rows(&mut self, a: NodeId, range: Range<usize>) -> NodeId {
        let av = &self.nodes[a.0].value;
        let m = av.cols();
        assert!(range.end <= av.rows(), "slice_rows out of range");
        let data = av.data()[range.start * m..range.end * m].to_vec();
        let rows = range.end - range.start;
        self.push(Tensor::matrix(rows, m, data), Op::SliceRows(a, range))
    }

    pub fn slice_cols(&mut self, a: NodeId, range: Range<usize>) -> NodeId {
        let av = &self.nodes[a.0].value;
        let (n, m) = (av.rows(), av.cols());
        assert!(range.end <= m, "slice_cols out of range");
        let w = range.end - range.start;
        let mut data = vec![0.0; n * w];
        for i in 0..n {
            data[i * w..(i + 1) * w].copy_from_slice(&av.row(i)[range.clone()]);
        }
        self.push(Tensor::matrix(n, w, data), Op::SliceCols(a, range))
    }

    /// Rows of `a` at `indices` (duplicates allowed); the embedding lookup.
    pub fn gather_rows(&mut self, a: NodeId, indices: &[usize]) -> NodeId {
        let av = &self.nodes[a.0].value;
        let m = av.cols();
        let mut data = Vec::with_capacity(indices.len() * m);
        for &ix in indices {
            assert!(ix < av.rows(), "gather index {ix} out of range");
            data.extend_from_slice(av.row(ix));
        }
        self.push(
            Tensor::matrix(indices.len(), m, data),
            Op::GatherRows(a, indices.to_vec()),
        )
    }

    /// Inverted dropout: in training, zero entries with probability `rate`
    /// and scale survivors by 1/(1−rate); in eval mode, identity.
    pub fn dropout(&mut self, a: NodeId, rate: f64, train: bool, rng: &mut impl Rng) -> NodeId {
        if !train || rate <= 0.0 {
            return self.scale(a, 1.0);
        }
        assert!(rate < 1.0, "dropout rate must be < 1");
        let av = &self.nodes[a.0].value;
        let keep = 1.0 - rate;
        let mask: Vec<f64> = (0..av.len())
            .map(|_| {
                if rng.gen::<f64>() < keep {
                    1.0 / keep
                } else {
                    0.0
                }
            })
            .collect();
        let data = av.data().iter().zip(&mask).map(|(x, m)| x * m).collect();
        let shape = av.shape().to_vec();
        self.push(Tensor::new(shape, data), Op::Dropout(a, mask))
    }

    /// `[n,m] -> [n,1]` row sums.
    pub fn row_sum(&mut self, a: NodeId) -> NodeId {
        let av = &self.nodes[a.0].value;
        let (n, m) = (av.rows(), av.cols());
        let data = (0..n).map(|i| av.row(i).iter().sum()).collect();
        let _ = m;
        self.push(Tensor::matrix(n, 1, data), Op::RowSum(a))
    }

    pub fn sum_all(&mut self, a: NodeId) -> NodeId {
        let s = self.nodes[a.0].value.data().iter().sum();
        self.push(Tensor::scalar(s), Op::SumAll(a))
    }

    pub fn mean_all(&mut self, a: NodeId) -> NodeId {
        let v = &self.nodes[a.0].value;
        let s = v.data().iter().sum::<f64>() / v.len().max(1) as f64;
        self.push(Tensor::scalar(s), Op::MeanAll(a))
    }

    /// Σ x², the squared Frobenius/L2 norm.
    pub fn sqnorm(&mut self, a: NodeId) -> NodeId {
        let s = self.nodes[a.0].value.data().iter().map(|x| x * x).sum();
        self.push(Tensor::scalar(s), Op::SqNorm(a))
    }

    /// Mean over rows of `-log softmax(logits)[target]`.
    pub fn softmax_cross_entropy(&mut self, logits: NodeId, targets: &[usize]) -> NodeId {
        let lv = &self.nodes[logits.0].value;
        let (n, c) = (lv.rows(), lv.cols());
        assert_eq!(n, targets.len(), "one target per row");
        let mut probs = vec![0.0; n * c];
        let mut loss = 0.0;
        for i in 0..n {
            let row = lv.row(i);
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for (j, &l) in row.iter().enumerate() {
                let e = (l - max).exp();
                probs[i * c + j] = e;
                z += e;
            }
            for p in &mut probs[i * c..(i + 1) * c] {
                *p /= z;
            }
            assert!(targets[i] < c, "target class out of range");
            loss -= probs[i * c + targets[i]].max(1e-300).ln();
        }
        loss /= n as f64;
        self.push(
            Tensor::scalar(loss),
            Op::SoftmaxCrossEntropy {
                logits,
                targets: targets.to_vec(),
                probs: Tensor::matrix(n, c, probs),
            },
        )
    }

    /// Mean of `-y·log σ(l) − (1−y)·log(1−σ(l))` over all entries, with the
    /// numerically stable log-sum-exp form. Labels may be smoothed.
    pub fn sigmoid_bce(&mut self, logits: NodeId, labels: &[f64]) -> NodeId {
        let lv = &self.nodes[logits.0].value;
        assert_eq!(lv.len(), labels.len(), "one label per logit");
        let n = labels.len().max(1) as f64;
        let mut probs = Vec::with_capacity(labels.len());
        let mut loss = 0.0;
        for (&l, &y) in lv.data().iter().zip(labels) {
            probs.push(1.0 / (1.0 + (-l).exp()));
            loss += l.max(0.0) - l * y + (1.0 + (-l.abs()).exp()).ln();
        }
        loss /= n;
        self.push(
            Tensor::scalar(loss),
            Op::SigmoidBce {
                logits,
                labels: labels.to_vec(),
                probs,
            },
        )
    }

    // ---- backward ----

    /// Reverse sweep from a scalar loss. Gradients of nodes on no path to
    /// the loss stay exactly zero.
    pub fn backward(&mut self, loss: NodeId) {
        assert_eq!(self.nodes[loss.0].value.len(), 1, "loss must be scalar");
        self.grads = vec![None; self.nodes.len()];
        self.grads[loss.0] = Some(vec![1.0]);

        for i in (0..self.nodes.len()).rev() {
            let Some(g) = self.grads[i].take() else {
                continue;
            };
            self.propagate(i, &g);
            self.grads[i] = Some(g);
        }
    }

    fn accumulate(&mut self, id: NodeId, delta: impl Fn(&mut [f64])) {
        let len = self.nodes[id.0].value.len();
        let slot = self.grads[id.0].get_or_insert_with(|| vec![0.0; len]);
        delta(slot);
    }

    fn propagate(&mut self, i: usize, g: &[f64]) {
        // Values needed during accumulation are cloned out first to satisfy
        // the borrow checker; tensors here are small.
        match &self.nodes[i].op {
            Op::Leaf => {}
            Op::Matmul(a, b) => {
                let (a, b) = (*a, *b);
                let av = self.nodes[a.0].value.clone();
                let bv = self.nodes[b.0].value.clone();
                let (n, k, m) = (av.rows(), av.cols(), bv.cols());
                self.accumulate(a, |ga| {
                    // g [n,m] · b^T [m,k]
                    for i in 0..n {
                        for kk in 0..k {
                            let mut acc = 0.0;
                            let br = bv.row(kk);
                            for j in 0..m {
                                acc += g[i * m + j] * br[j];
                            }
                            ga[i * k + kk] += acc;
                        }
                    }
                });
                self.accumulate(b, |gb| {
                    // a^T [k,n] · g [n,m]
                    for i in 0..n {
                        let ar = av.row(i);
                        for kk in 0..k {
                            let aval = ar[kk];
                            if aval == 0.0 {
                                continue;
                            }
                            for j in 0..m {
                                gb[kk * m + j] += aval * g[i * m + j];
                            }
                        }
                    }
                });
            }
            Op::MatmulNt(a, b) => {
                let (a, b) = (*a, *b);
                let av = self.nodes[a.0].value.clone();
                let bv = self.nodes[b.0].value.clone();
                let (n, k, m) = (av.rows(), av.cols(), bv.rows());
                self.accumulate(a, |ga| {
                    // g [n,m] · b [m,k]
                    for i in 0..n {
                        for j in 0..m {
                            let gv = g[i * m + j];
                            if gv == 0.0 {
                                continue;
                            }
                            let br = bv.row(j);
                            for kk in 0..k {
                                ga[i * k + kk] += gv * br[kk];
                            }
                        }
                    }
                });
                self.accumulate(b, |gb| {
                    // g^T [m,n] · a [n,k]
                    for j in 0..m {
                        for i in 0..n {
                            let gv = g[i * m + j];
                            if gv == 0.0 {
                                continue;
                            }
                            let ar = av.row(i);
                            for kk in 0..k {
                                gb[j * k + kk] += gv * ar[kk];
                            }
                        }
                    }
                });
            }
            Op::Transpose(a) => {
                let a = *a;
                let (n, m) = {
                    let v = &self.nodes[a.0].value;
                    (v.rows(), v.cols())
                };
                self.accumulate(a, |ga| {
                    for i in 0..n {
                        for j in 0..m {
                            ga[i * m + j] += g[j * n + i];
                        }
                    }
                });
            }
            Op::Add(a, b) => {
                let (a, b) = (*a, *b);
                self.accumulate(a, |ga| {
                    for (x, y) in ga.iter_mut().zip(g) {
                        *x += y;
                    }
                });
                self.accumulate(b, |gb| {
                    for (x, y) in gb.iter_mut().zip(g) {
                        *x += y;
                    }
                });
            }
            Op::Sub(a, b) => {
                let (a, b) = (*a, *b);
                self.accumulate(a, |ga| {
                    for (x, y) in ga.iter_mut().zip(g) {
                        *x += y;
                    }
                });
                self.accumulate(b, |gb| {
                    for (x, y) in gb.iter_mut().zip(g) {
                        *x -= y;
                    }
                });
            }
            Op::Mul(a, b) => {
                let (a, b) = (*a, *b);
                let av = self.nodes[a.0].value.clone();
                let bv = self.nodes[b.0].value.clone();
                self.accumulate(a, |ga| {
                    for ((x, y), z) in ga.iter_mut().zip(g).zip(bv.data()) {
                        *x += y * z;
                    }
                });
                self.accumulate(b, |gb| {
                    for ((x, y), z) in gb.iter_mut().zip(g).zip(av.data()) {
                        *x += y * z;
                    }
                });
            }
            Op::Scale(a, c) => {
                let (a, c) = (*a, *c);
                self.accumulate(a, |ga| {
                    for (x, y) in ga.iter_mut().zip(g) {
                        *x += c * y;
                    }
                });
            }
            Op::AddRowBroadcast(a, bias) => {
                let (a, bias) = (*a, *bias);
                let (n, m) = {
                    let v = &self.nodes[a.0].value;
                    (v.rows(), v.cols())
                };
                self.accumulate(a, |ga| {
                    for (x, y) in ga.iter_mut().zip(g) {
                        *x += y;
                    }
                });
                self.accumulate(bias, |gb| {
                    for i in 0..n {
                        for j in 0..m {
                            gb[j] += g[i * m + j];
                        }
                    }
                });
            }
            Op::AddColBroadcast(a, bias) => {
                let (a, bias) = (*a, *bias);
                let (n, m) = {
                    let v = &self.nodes[a.0].value;
                    (v.rows(), v.cols())
                };
                self.accumulate(a, |ga| {
                    for (x, y) in ga.iter_mut().zip(g) {
                        *x += y;
                    }
                });
                self.accumulate(bias, |gb| {
                    for i in 0..n {
                        let mut acc = 0.0;
                        for j in 0..m {
                            acc += g[i * m + j];
                        }
                        gb[i] += acc;
                    }
                });
            }
            Op::AddScalarBroadcast(a, scalar) => {
                let (a, scalar) = (*a, *scalar);
                self.accumulate(a, |ga| {
                    for (x, y) in ga.iter_mut().zip(g) {
                        *x += y;
                    }
                });
                self.accumulate(scalar, |gs| {
                    gs[0] += g.iter().sum::<f64>();
                });
            }
            Op::Sigmoid(a) => {
                let a = *a;
                let yv = self.nodes[i].value.clone();
                self.accumulate(a, |ga| {
                    for ((x, y), out) in ga.iter_mut().zip(g).zip(yv.data()) {
                        *x += y * out * (1.0 - out);
                    }
                });
            }
            Op::Tanh(a) => {
                let a = *a;
                let yv = self.nodes[i].value.clone();
                self.accumulate(a, |ga| {
                    for ((x, y), out) in ga.iter_mut().zip(g).zip(yv.data()) {
                        *x += y * (1.0 - out * out);
                    }
                });
            }
            Op::LeakyRelu(a, slope) => {
                let (a, slope) = (*a, *slope);
                let xv = self.nodes[a.0].value.clone();
                self.accumulate(a, |ga| {
                    for ((x, y), inp) in ga.iter_mut().zip(g).zip(xv.data()) {
                        *x += y * if *inp > 0.0 { 1.0 } else { slope };
                    }
                });
            }
            Op::ConcatRows(parts) => {
                let parts = parts.clone();
                let mut off = 0;
                for p in parts {
                    let len = self.nodes[p.0].value.len();
                    let slice = &g[off..off + len];
                    self.accumulate(p, |gp| {
                        for (x, y) in gp.iter_mut().zip(slice) {
                            *x += y;
                        }
                    });
                    off += len;
                }
            }
            Op::ConcatCols(parts) => {
                let parts = parts.clone();
                let rows = self.nodes[i].value.rows();
                let total_cols = self.nodes[i].value.cols();
                let mut col_off = 0;
                for p in parts {
                    let c = self.nodes[p.0].value.cols();
                    self.accumulate(p, |gp| {
                        for r in 0..rows {
                            for j in 0..c {
                                gp[r * c + j] += g[r * total_cols + col_off + j];
                            }
                        }
                    });
                    col_off += c;
                }
            }
            Op::SliceRows(a, range) => {
                let (a, range) = (*a, range.clone());
                let m = self.nodes[a.0].value.cols();
                self.accumulate(a, |ga| {
                    for (k, y) in g.iter().enumerate() {
                        ga[range.start * m + k] += y;
                    }
                });
            }
            Op::SliceCols(a, range) => {
                let (a, range) = (*a, range.clone());
                let (n, m) = {
                    let v = &self.nodes[a.0].value;
                    (v.rows(), v.cols())
                };
                let w = range.end - range.start;
                let _ = n;
                self.accumulate(a, |ga| {
                    for (k, y) in g.iter().enumerate() {
                        let r = k / w;
                        let c = k % w;
                        ga[r * m + range.start + c] += y;
                    }
                });
            }
            Op::GatherRows(a, indices) => {
                let (a, indices) = (*a, indices.clone());
                let m = self.nodes[a.0].value.cols();
                self.accumulate(a, |ga| {
                    for (k, &ix) in indices.iter().enumerate() {
                        for j in 0..m {
                            ga[ix * m + j] += g[k * m + j];
                        }
                    }
                });
            }
            Op::Dropout(a, mask) => {
                let (a, mask) = (*a, mask.clone());
                self.accumulate(a, |ga| {
                    for ((x, y), m) in ga.iter_mut().zip(g).zip(&mask) {
                        *x += y * m;
                    }
                });
            }
            Op::RowSum(a) => {
                let a = *a;
                let (n, m) = {
                    let v = &self.nodes[a.0].value;
                    (v.rows(), v.cols())
                };
                self.accumulate(a, |ga| {
                    for r in 0..n {
                        for j in 0..m {
                            ga[r * m + j] += g[r];
                        }
                    }
                });
            }
            Op::SumAll(a) => {
                let a = *a;
                self.accumulate(a, |ga| {
                    for x in ga.iter_mut() {
                        *x += g[0];
                    }
                });
            }
            Op::MeanAll(a) => {
                let a = *a;
                let len = self.nodes[a.0].value.len().max(1) as f64;
                self.accumulate(a, |ga| {
                    for x in ga.iter_mut() {
                        *x += g[0] / len;
                    }
                });
            }
            Op::SqNorm(a) => {
                let a = *a;
                let xv = self.nodes[a.0].value.clone();
                self.accumulate(a, |ga| {
                    for (x, inp) in ga.iter_mut().zip(xv.data()) {
                        *x += 2.0 * inp * g[0];
                    }
                });
            }
            Op::SoftmaxCrossEntropy {
                logits,
                targets,
                probs,
            } => {
                let logits = *logits;
                let targets = targets.clone();
                let probs = probs.clone();
                let (n, c) = (probs.rows(), probs.cols());
                self.accumulate(logits, |gl| {
                    let scale = g[0] / n as f64;
                    for r in 0..n {
                        for j in 0..c {
                            let p = probs.row(r)[j];
                            let onehot = if targets[r] == j { 1.0 } else { 0.0 };
                            gl[r * c + j] += scale * (p - onehot);
                        }
                    }
                });
            }
            Op::SigmoidBce {
                logits,
                labels,
                probs,
            } => {
                let logits = *logits;
                let labels = labels.clone();
                let probs = probs.clone();
                let n = labels.len().max(1) as f64;
                self.accumulate(logits, |gl| {
                    for ((x, p), y) in gl.iter_mut().zip(&probs).zip(&labels) {
                        *x += g[0] * (p - y) / n;
                    }
                });
            }
        }
    }
}
