use super::{AutodiffError, Scalar, Tensor};

/// Handle to a value recorded in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

const LAYER_NORM_EPS: f64 = 1e-5;

#[derive(Debug)]
enum Op<T> {
    Leaf,
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    AddScalar(Var),
    Divide(Var, Var),
    Relu(Var),
    ClampMin(Var, T),
    Exp(Var),
    MeanSel(Var, Vec<usize>),
    Sum(Var),
    Concat(Vec<Var>),
    LayerNorm { x: Var, gain: Var, bias: Var, xhat: Vec<T>, rstd: Vec<T> },
    Gelu(Var),
    Embedding { table: Var, ids: Vec<usize> },
    CrossEntropy { logits: Var, targets: Vec<Option<usize>>, probs: Vec<T>, count: usize },
    SoftmaxCausal(Var),
}

#[derive(Debug)]
struct Node<T> {
    value: Vec<T>,
    shape: Vec<usize>,
    op: Op<T>,
    requires_grad: bool,
}

/// Operation record for one forward pass. Nodes are appended in execution
/// order; [`Graph::backward`] consumes the graph and walks it in reverse.
#[derive(Debug)]
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
    grad_enabled: bool,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

fn mismatch(op: &'static str, left: &[usize], right: &[usize]) -> AutodiffError {
    AutodiffError::ShapeMismatch { op, left: left.to_vec(), right: right.to_vec() }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new(), grad_enabled: true }
    }

    /// A graph whose leaves never require gradients (evaluation, generation).
    pub fn no_grad() -> Self {
        Self { nodes: Vec::new(), grad_enabled: false }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Vec<T>, shape: Vec<usize>, op: Op<T>, requires_grad: bool) -> Var {
        debug_assert_eq!(value.len(), shape.iter().product::<usize>());
        self.nodes.push(Node { value, shape, op, requires_grad: requires_grad && self.grad_enabled });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Records a tensor as a leaf; it participates in differentiation iff
    /// `tensor.requires_grad`.
    pub fn leaf(&mut self, tensor: &Tensor<T>) -> Var {
        self.push(tensor.data().to_vec(), tensor.shape().to_vec(), Op::Leaf, tensor.requires_grad)
    }

    pub fn constant(&mut self, shape: Vec<usize>, data: Vec<T>) -> Result<Var, AutodiffError> {
        if shape.iter().product::<usize>() != data.len() {
            return Err(AutodiffError::DataLength { shape, len: data.len() });
        }
        Ok(self.push(data, shape, Op::Leaf, false))
    }

    pub fn value(&self, v: Var) -> &[T] {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.rg(v)
    }

    pub fn scalar_value(&self, v: Var) -> T {
        self.nodes[v.0].value[0]
    }

    pub fn to_tensor(&self, v: Var) -> Tensor<T> {
        let n = &self.nodes[v.0];
        Tensor::new(n.shape.clone(), n.value.clone()).expect("node shape is consistent")
    }

    fn matrix_dims(&self, op: &'static str, v: Var) -> Result<(usize, usize), AutodiffError> {
        match self.shape(v) {
            [r, c] => Ok((*r, *c)),
            s => Err(AutodiffError::NotMatrix { op, shape: s.to_vec() }),
        }
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let (m, k) = self.matrix_dims("matmul", a)?;
        let (k2, n) = self.matrix_dims("matmul", b)?;
        if k != k2 {
            return Err(mismatch("matmul", self.shape(a), self.shape(b)));
        }
        let mut out = vec![T::zero(); m * n];
        T::gemm(m, k, n, self.value(a), false, self.value(b), false, T::zero(), &mut out);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, vec![m, n], Op::MatMul(a, b), rg))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var, AutodiffError> {
        let (m, n) = self.matrix_dims("transpose", a)?;
        let src = self.value(a);
        let mut out = vec![T::zero(); m * n];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = src[i * n + j];
            }
        }
        let rg = self.rg(a);
        Ok(self.push(out, vec![n, m], Op::Transpose(a), rg))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<(), AutodiffError> {
        if self.shape(a) != self.shape(b) {
            return Err(mismatch(op, self.shape(a), self.shape(b)));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        self.same_shape("add", a, b)?;
        let out = self.value(a).iter().zip(self.value(b)).map(|(&x, &y)| x + y).collect();
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, self.shape(a).to_vec(), Op::Add(a, b), rg))
    }

    /// `a[m x n] + bias[n]`, the bias broadcast over rows.
    pub fn add_row(&mut self, a: Var, bias: Var) -> Result<Var, AutodiffError> {
        let (_, n) = self.matrix_dims("add_row", a)?;
        let bn = self.value(bias).len();
        if bn != n {
            return Err(mismatch("add_row", self.shape(a), self.shape(bias)));
        }
        let bv = self.value(bias);
        let out = self.value(a).iter().enumerate().map(|(i, &x)| x + bv[i % n]).collect();
        let rg = self.rg(a) || self.rg(bias);
        Ok(self.push(out, self.shape(a).to_vec(), Op::AddRow(a, bias), rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        self.same_shape("mul", a, b)?;
        let out = self.value(a).iter().zip(self.value(b)).map(|(&x, &y)| x * y).collect();
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, self.shape(a).to_vec(), Op::Mul(a, b), rg))
    }

    pub fn scale(&mut self, a: Var, c: T) -> Var {
        let out = self.value(a).iter().map(|&x| x * c).collect();
        let rg = self.rg(a);
        self.push(out, self.shape(a).to_vec(), Op::Scale(a, c), rg)
    }

    pub fn add_scalar(&mut self, a: Var, c: T) -> Var {
        let out = self.value(a).iter().map(|&x| x + c).collect();
        let rg = self.rg(a);
        self.push(out, self.shape(a).to_vec(), Op::AddScalar(a), rg)
    }

    /// Elementwise `a / b`. A zero anywhere in `b` is reported as
    /// [`AutodiffError::ZeroDenominator`] instead of producing inf/NaN.
    pub fn divide(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        self.same_shape("divide", a, b)?;
        if self.value(b).iter().any(|v| v.is_zero()) {
            return Err(AutodiffError::ZeroDenominator);
        }
        let out = self.value(a).iter().zip(self.value(b)).map(|(&x, &y)| x / y).collect();
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, self.shape(a).to_vec(), Op::Divide(a, b), rg))
    }

    /// `max(0, a)` elementwise; the gradient is zero wherever `a <= 0`.
    pub fn maximum_with_zero(&mut self, a: Var) -> Var {
        let out = self.value(a).iter().map(|&x| if x > T::zero() { x } else { T::zero() }).collect();
        let rg = self.rg(a);
        self.push(out, self.shape(a).to_vec(), Op::Relu(a), rg)
    }

    /// `max(floor, a)` elementwise.
    pub fn clamp_min(&mut self, a: Var, floor: T) -> Var {
        let out = self.value(a).iter().map(|&x| if x > floor { x } else { floor }).collect();
        let rg = self.rg(a);
        self.push(out, self.shape(a).to_vec(), Op::ClampMin(a, floor), rg)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let out = self.value(a).iter().map(|x| x.exp()).collect();
        let rg = self.rg(a);
        self.push(out, self.shape(a).to_vec(), Op::Exp(a), rg)
    }

    /// Mean of the flat-indexed entries `idx` of `a`, as a one-element tensor.
    pub fn mean_over_selection(&mut self, a: Var, idx: &[usize]) -> Result<Var, AutodiffError> {
        if idx.is_empty() {
            return Err(AutodiffError::EmptySelection);
        }
        let src = self.value(a);
        if let Some(&bad) = idx.iter().find(|&&i| i >= src.len()) {
            return Err(AutodiffError::IndexOutOfRange { index: bad, len: src.len() });
        }
        let total: T = idx.iter().map(|&i| src[i]).sum();
        let mean = total / T::from_f64(idx.len() as f64);
        let rg = self.rg(a);
        Ok(self.push(vec![mean], vec![1], Op::MeanSel(a, idx.to_vec()), rg))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let total: T = self.value(a).iter().copied().sum();
        let rg = self.rg(a);
        self.push(vec![total], vec![1], Op::Sum(a), rg)
    }

    /// Concatenates along the last dimension; all leading dimensions must agree.
    pub fn concat_last_dim(&mut self, parts: &[Var]) -> Result<Var, AutodiffError> {
        let first = *parts.first().ok_or(AutodiffError::EmptySelection)?;
        let lead = self.shape(first)[..self.shape(first).len() - 1].to_vec();
        let outer: usize = lead.iter().product();
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let s = self.shape(p);
            if s.len() != lead.len() + 1 || s[..lead.len()] != lead[..] {
                return Err(mismatch("concat_last_dim", self.shape(first), s));
            }
            widths.push(*s.last().unwrap());
        }
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(outer * total);
        for r in 0..outer {
            for (&p, &w) in parts.iter().zip(&widths) {
                out.extend_from_slice(&self.value(p)[r * w..(r + 1) * w]);
            }
        }
        let mut shape = lead;
        shape.push(total);
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(out, shape, Op::Concat(parts.to_vec()), rg))
    }

    /// Row-wise layer normalization with learned gain and bias.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Result<Var, AutodiffError> {
        let (m, n) = self.matrix_dims("layer_norm", x)?;
        if self.value(gain).len() != n || self.value(bias).len() != n {
            return Err(mismatch("layer_norm", self.shape(x), self.shape(gain)));
        }
        let eps = T::from_f64(LAYER_NORM_EPS);
        let nf = T::from_f64(n as f64);
        let xv = self.value(x);
        let (gv, bv) = (self.value(gain), self.value(bias));
        let mut xhat = vec![T::zero(); m * n];
        let mut rstd = vec![T::zero(); m];
        let mut out = vec![T::zero(); m * n];
        for r in 0..m {
            let row = &xv[r * n..(r + 1) * n];
            let mean = row.iter().copied().sum::<T>() / nf;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / nf;
            let rs = T::one() / (var + eps).sqrt();
            rstd[r] = rs;
            for c in 0..n {
                let h = (row[c] - mean) * rs;
                xhat[r * n + c] = h;
                out[r * n + c] = h * gv[c] + bv[c];
            }
        }
        let rg = self.rg(x) || self.rg(gain) || self.rg(bias);
        Ok(self.push(out, vec![m, n], Op::LayerNorm { x, gain, bias, xhat, rstd }, rg))
    }

    /// Tanh-approximated GELU.
    pub fn gelu(&mut self, a: Var) -> Var {
        let out = self.value(a).iter().map(|&x| gelu_value(x)).collect();
        let rg = self.rg(a);
        self.push(out, self.shape(a).to_vec(), Op::Gelu(a), rg)
    }

    /// Gathers rows of `table[V x d]` for each id.
    pub fn embedding_lookup(&mut self, table: Var, ids: &[usize]) -> Result<Var, AutodiffError> {
        let (v, d) = self.matrix_dims("embedding_lookup", table)?;
        let tv = self.value(table);
        let mut out = Vec::with_capacity(ids.len() * d);
        for &id in ids {
            if id >= v {
                return Err(AutodiffError::IndexOutOfRange { index: id, len: v });
            }
            out.extend_from_slice(&tv[id * d..(id + 1) * d]);
        }
        let rg = self.rg(table);
        Ok(self.push(out, vec![ids.len(), d], Op::Embedding { table, ids: ids.to_vec() }, rg))
    }

    /// Mean negative log-likelihood over rows whose target is `Some`. Rows with
    /// `None` are masked out; an all-masked input yields zero loss.
    pub fn cross_entropy_from_logits(
        &mut self,
        logits: Var,
        targets: &[Option<usize>],
    ) -> Result<Var, AutodiffError> {
        let (m, v) = self.matrix_dims("cross_entropy_from_logits", logits)?;
        if targets.len() != m {
            return Err(mismatch("cross_entropy_from_logits", self.shape(logits), &[targets.len()]));
        }
        let lv = self.value(logits);
        let mut probs = vec![T::zero(); m * v];
        let mut total = T::zero();
        let mut count = 0usize;
        for r in 0..m {
            let Some(t) = targets[r] else { continue };
            if t >= v {
                return Err(AutodiffError::IndexOutOfRange { index: t, len: v });
            }
            let row = &lv[r * v..(r + 1) * v];
            let max = row.iter().copied().fold(T::neg_infinity(), T::max);
            let z: T = row.iter().map(|&x| (x - max).exp()).sum();
            let log_z = z.ln() + max;
            for c in 0..v {
                probs[r * v + c] = (row[c] - log_z).exp();
            }
            total += log_z - row[t];
            count += 1;
        }
        let loss = if count == 0 { T::zero() } else { total / T::from_f64(count as f64) };
        let rg = self.rg(logits);
        Ok(self.push(
            vec![loss],
            vec![1],
            Op::CrossEntropy { logits, targets: targets.to_vec(), probs, count },
            rg,
        ))
    }

    /// Row softmax of a square matrix under a causal mask: row `i` normalizes
    /// over columns `j <= i`, masked entries are exactly zero.
    pub fn softmax_rows_masked(&mut self, x: Var) -> Result<Var, AutodiffError> {
        let (m, n) = self.matrix_dims("softmax_rows_masked", x)?;
        if m != n {
            return Err(mismatch("softmax_rows_masked", self.shape(x), &[n, m]));
        }
        let xv = self.value(x);
        let masked = T::min_value();
        let mut out = vec![T::zero(); n * n];
        let mut row = vec![T::zero(); n];
        for i in 0..n {
            for (j, r) in row.iter_mut().enumerate() {
                *r = if j <= i { xv[i * n + j] } else { masked };
            }
            let max = row[..=i].iter().copied().fold(T::neg_infinity(), T::max);
            let mut z = T::zero();
            for j in 0..=i {
                let e = (row[j] - max).exp();
                out[i * n + j] = e;
                z += e;
            }
            for j in 0..=i {
                out[i * n + j] = out[i * n + j] / z;
            }
        }
        let rg = self.rg(x);
        Ok(self.push(out, vec![n, n], Op::SoftmaxCausal(x), rg))
    }

    /// Reverse pass from a one-element `loss`. Consumes the graph; the returned
    /// [`Gradients`] hold the gradient of every leaf that requires one.
    pub fn backward(self, loss: Var) -> Result<Gradients<T>, AutodiffError> {
        if self.nodes[loss.0].value.len() != 1 {
            return Err(AutodiffError::NonScalarLoss { shape: self.nodes[loss.0].shape.clone() });
        }
        let count = self.nodes.len();
        let mut grads: Vec<Option<Vec<T>>> = (0..count).map(|_| None).collect();
        if self.nodes[loss.0].requires_grad {
            grads[loss.0] = Some(vec![T::one()]);
        }
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(node, &g, &mut grads);
        }
        // Only leaf gradients survive; intermediate buffers were taken above.
        let leaf_grads = grads
            .into_iter()
            .zip(&self.nodes)
            .map(|(g, n)| match n.op {
                Op::Leaf if n.requires_grad => Some(g.unwrap_or_else(|| vec![T::zero(); n.value.len()])),
                _ => None,
            })
            .collect();
        Ok(Gradients { grads: leaf_grads })
    }

    fn propagate(&self, node: &Node<T>, g: &[T], grads: &mut [Option<Vec<T>>]) {
        let nodes = &self.nodes;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = (nodes[a.0].shape[0], nodes[a.0].shape[1]);
                let n = nodes[b.0].shape[1];
                if let Some(da) = slot(nodes, grads, *a) {
                    T::gemm(m, n, k, g, false, &nodes[b.0].value, true, T::one(), da);
                }
                if let Some(db) = slot(nodes, grads, *b) {
                    T::gemm(k, m, n, &nodes[a.0].value, true, g, false, T::one(), db);
                }
            }
            Op::Transpose(a) => {
                let (m, n) = (nodes[a.0].shape[0], nodes[a.0].shape[1]);
                if let Some(da) = slot(nodes, grads, *a) {
                    for i in 0..m {
                        for j in 0..n {
                            da[i * n + j] += g[j * m + i];
                        }
                    }
                }
            }
            Op::Add(a, b) => {
                for v in [a, b] {
                    if let Some(d) = slot(nodes, grads, *v) {
                        add_into(d, g);
                    }
                }
            }
            Op::AddRow(a, bias) => {
                if let Some(da) = slot(nodes, grads, *a) {
                    add_into(da, g);
                }
                if let Some(db) = slot(nodes, grads, *bias) {
                    let n = db.len();
                    for (i, &gv) in g.iter().enumerate() {
                        db[i % n] += gv;
                    }
                }
            }
            Op::Mul(a, b) => {
                let (av, bv) = (&nodes[a.0].value, &nodes[b.0].value);
                if let Some(da) = slot(nodes, grads, *a) {
                    for i in 0..g.len() {
                        da[i] += g[i] * bv[i];
                    }
                }
                if let Some(db) = slot(nodes, grads, *b) {
                    for i in 0..g.len() {
                        db[i] += g[i] * av[i];
                    }
                }
            }
            Op::Scale(a, c) => {
                if let Some(da) = slot(nodes, grads, *a) {
                    for (d, &gv) in da.iter_mut().zip(g) {
                        *d += gv * *c;
                    }
                }
            }
            Op::AddScalar(a) => {
                if let Some(da) = slot(nodes, grads, *a) {
                    add_into(da, g);
                }
            }
            Op::Divide(a, b) => {
                let (av, bv) = (&nodes[a.0].value, &nodes[b.0].value);
                if let Some(da) = slot(nodes, grads, *a) {
                    for i in 0..g.len() {
                        da[i] += g[i] / bv[i];
                    }
                }
                if let Some(db) = slot(nodes, grads, *b) {
                    for i in 0..g.len() {
                        db[i] += -g[i] * av[i] / (bv[i] * bv[i]);
                    }
                }
            }
            Op::Relu(a) => {
                let av = &nodes[a.0].value;
                if let Some(da) = slot(nodes, grads, *a) {
                    for i in 0..g.len() {
                        if av[i] > T::zero() {
                            da[i] += g[i];
                        }
                    }
                }
            }
            Op::ClampMin(a, floor) => {
                let av = &nodes[a.0].value;
                if let Some(da) = slot(nodes, grads, *a) {
                    for i in 0..g.len() {
                        if av[i] > *floor {
                            da[i] += g[i];
                        }
                    }
                }
            }
            Op::Exp(a) => {
                if let Some(da) = slot(nodes, grads, *a) {
                    for i in 0..g.len() {
                        da[i] += g[i] * node.value[i];
                    }
                }
            }
            Op::MeanSel(a, idx) => {
                if let Some(da) = slot(nodes, grads, *a) {
                    let share = g[0] / T::from_f64(idx.len() as f64);
                    for &i in idx {
                        da[i] += share;
                    }
                }
            }
            Op::Sum(a) => {
                if let Some(da) = slot(nodes, grads, *a) {
                    for d in da.iter_mut() {
                        *d += g[0];
                    }
                }
            }
            Op::Concat(parts) => {
                let total = *node.shape.last().unwrap();
                let outer = g.len() / total;
                let mut offset = 0;
                for p in parts {
                    let w = *nodes[p.0].shape.last().unwrap();
                    if let Some(dp) = slot(nodes, grads, *p) {
                        for r in 0..outer {
                            for c in 0..w {
                                dp[r * w + c] += g[r * total + offset + c];
                            }
                        }
                    }
                    offset += w;
                }
            }
            Op::LayerNorm { x, gain, bias, xhat, rstd } => {
                let n = node.shape[1];
                let m = node.shape[0];
                let gv = &nodes[gain.0].value;
                if let Some(dg) = slot(nodes, grads, *gain) {
                    for r in 0..m {
                        for c in 0..n {
                            dg[c] += g[r * n + c] * xhat[r * n + c];
                        }
                    }
                }
                if let Some(db) = slot(nodes, grads, *bias) {
                    for r in 0..m {
                        for c in 0..n {
                            db[c] += g[r * n + c];
                        }
                    }
                }
                if let Some(dx) = slot(nodes, grads, *x) {
                    let nf = T::from_f64(n as f64);
                    for r in 0..m {
                        let mut sum_dh = T::zero();
                        let mut sum_dh_h = T::zero();
                        for c in 0..n {
                            let dh = g[r * n + c] * gv[c];
                            sum_dh += dh;
                            sum_dh_h += dh * xhat[r * n + c];
                        }
                        for c in 0..n {
                            let dh = g[r * n + c] * gv[c];
                            dx[r * n + c] +=
                                rstd[r] / nf * (nf * dh - sum_dh - xhat[r * n + c] * sum_dh_h);
                        }
                    }
                }
            }
            Op::Gelu(a) => {
                let av = &nodes[a.0].value;
                if let Some(da) = slot(nodes, grads, *a) {
                    for i in 0..g.len() {
                        da[i] += g[i] * gelu_derivative(av[i]);
                    }
                }
            }
            Op::Embedding { table, ids } => {
                let d = nodes[table.0].shape[1];
                if let Some(dt) = slot(nodes, grads, *table) {
                    for (r, &id) in ids.iter().enumerate() {
                        for c in 0..d {
                            dt[id * d + c] += g[r * d + c];
                        }
                    }
                }
            }
            Op::CrossEntropy { logits, targets, probs, count } => {
                if *count == 0 {
                    return;
                }
                let v = nodes[logits.0].shape[1];
                let share = g[0] / T::from_f64(*count as f64);
                if let Some(dl) = slot(nodes, grads, *logits) {
                    for (r, t) in targets.iter().enumerate() {
                        let Some(t) = t else { continue };
                        for c in 0..v {
                            let onehot = if c == *t { T::one() } else { T::zero() };
                            dl[r * v + c] += share * (probs[r * v + c] - onehot);
                        }
                    }
                }
            }
            Op::SoftmaxCausal(a) => {
                let n = node.shape[0];
                let y = &node.value;
                if let Some(da) = slot(nodes, grads, *a) {
                    for i in 0..n {
                        let dot: T = (0..=i).map(|j| y[i * n + j] * g[i * n + j]).sum();
                        for j in 0..=i {
                            da[i * n + j] += y[i * n + j] * (g[i * n + j] - dot);
                        }
                    }
                }
            }
        }
    }
}

fn slot<'a, T: Scalar>(
    nodes: &[Node<T>],
    grads: &'a mut [Option<Vec<T>>],
    v: Var,
) -> Option<&'a mut Vec<T>> {
    if !nodes[v.0].requires_grad {
        return None;
    }
    let len = nodes[v.0].value.len();
    Some(grads[v.0].get_or_insert_with(|| vec![T::zero(); len]))
}

fn add_into<T: Scalar>(dst: &mut [T], src: &[T]) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

fn gelu_value<T: Scalar>(x: T) -> T {
    let c = T::from_f64((2.0 / std::f64::consts::PI).sqrt());
    let k = T::from_f64(0.044715);
    let half = T::from_f64(0.5);
    half * x * (T::one() + (c * (x + k * x * x * x)).tanh())
}

fn gelu_derivative<T: Scalar>(x: T) -> T {
    let c = T::from_f64((2.0 / std::f64::consts::PI).sqrt());
    let k = T::from_f64(0.044715);
    let half = T::from_f64(0.5);
    let t = (c * (x + k * x * x * x)).tanh();
    half * (T::one() + t) + half * x * (T::one() - t * t) * c * (T::one() + T::from_f64(3.0) * k * x * x)
}

/// Leaf gradients produced by [`Graph::backward`].
#[derive(Debug)]
pub struct Gradients<T> {
    grads: Vec<Option<Vec<T>>>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient of a leaf that required one; `None` for constants and
    /// intermediate nodes.
    pub fn get(&self, v: Var) -> Option<&[T]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    pub fn take(&mut self, v: Var) -> Option<Vec<T>> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}
