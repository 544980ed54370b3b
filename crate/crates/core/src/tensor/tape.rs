use std::borrow::Cow;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{matmul_raw, softmax_rows, Result, Tensor, TensorError};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(usize, usize),
    AddBias(usize, usize),
    Add(usize, usize),
    Mul(usize, usize),
    Relu(usize),
    Dropout(usize, Vec<f64>),
    Concat(Vec<usize>),
    Gather(usize, Vec<usize>),
    MeanGroups(usize, usize),
    SoftmaxCe {
        logits: usize,
        probs: Vec<f64>,
        targets: Vec<usize>,
    },
}

#[derive(Debug)]
struct Node<'a> {
    rows: usize,
    cols: usize,
    value: Cow<'a, [f64]>,
    op: Op,
    requires_grad: bool,
}

/// Records matrix operations in topological order. Every value on the tape
/// is viewed as a `[rows x cols]` matrix. Parameters are borrowed, not
/// copied, so a tape lives no longer than the model it reads from.
#[derive(Debug, Default)]
pub struct Tape<'a> {
    nodes: Vec<Node<'a>>,
}

/// Gradients of a scalar loss with respect to every node that requires one.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Fold each leaf gradient into its tensor. `pairs` maps the tensors to
    /// the vars they were bound to on the tape.
    pub fn apply<'t>(&self, pairs: impl IntoIterator<Item = (&'t mut Tensor, Var)>) -> Result<()> {
        for (tensor, var) in pairs {
            if !tensor.requires_grad() {
                continue;
            }
            if let Some(g) = self.get(var) {
                tensor.accumulate_grad(g)?;
            }
        }
        Ok(())
    }
}

impl<'a> Tape<'a> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, rows: usize, cols: usize, value: Cow<'a, [f64]>, op: Op, rg: bool) -> Var {
        self.nodes.push(Node {
            rows,
            cols,
            value,
            op,
            requires_grad: rg,
        });
        Var(self.nodes.len() - 1)
    }

    fn node(&self, v: Var) -> &Node<'a> {
        &self.nodes[v.0]
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].value
    }

    pub fn dims(&self, v: Var) -> (usize, usize) {
        let n = self.node(v);
        (n.rows, n.cols)
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.node(v).requires_grad
    }

    /// Bind a tensor by reference. Leading dimensions collapse into rows.
    pub fn leaf(&mut self, t: &'a Tensor) -> Var {
        let (rows, cols) = t.as_matrix();
        self.push(
            rows,
            cols,
            Cow::Borrowed(t.data()),
            Op::Leaf,
            t.requires_grad(),
        )
    }

    /// Owned input data that never receives a gradient.
    pub fn constant(&mut self, rows: usize, cols: usize, data: Vec<f64>) -> Result<Var> {
        if rows * cols != data.len() || rows == 0 || cols == 0 {
            return Err(TensorError::LengthMismatch {
                expected: rows * cols,
                actual: data.len(),
            });
        }
        Ok(self.push(rows, cols, Cow::Owned(data), Op::Leaf, false))
    }

    fn shapes_of(&self, a: Var, b: Var) -> (Vec<usize>, Vec<usize>) {
        let (ar, ac) = self.dims(a);
        let (br, bc) = self.dims(b);
        (vec![ar, ac], vec![br, bc])
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.dims(a);
        let (k2, n) = self.dims(b);
        if k != k2 {
            let (left, right) = self.shapes_of(a, b);
            return Err(TensorError::ShapeMismatch {
                op: "matmul",
                left,
                right,
            });
        }
        let out = matmul_raw(self.value(a), self.value(b), m, k, n);
        let rg = self.requires_grad(a) || self.requires_grad(b);
        Ok(self.push(m, n, Cow::Owned(out), Op::MatMul(a.0, b.0), rg))
    }

    /// `x + bias` with a `[1 x n]` bias broadcast over rows.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (m, n) = self.dims(x);
        if self.dims(bias) != (1, n) {
            let (left, right) = self.shapes_of(x, bias);
            return Err(TensorError::ShapeMismatch {
                op: "add_bias",
                left,
                right,
            });
        }
        let b = self.value(bias);
        let mut out = self.value(x).to_vec();
        for row in out.chunks_mut(n) {
            row.iter_mut().zip(b).for_each(|(o, bv)| *o += bv);
        }
        let rg = self.requires_grad(x) || self.requires_grad(bias);
        Ok(self.push(m, n, Cow::Owned(out), Op::AddBias(x.0, bias.0), rg))
    }

    fn binary(&mut self, a: Var, b: Var, name: &'static str) -> Result<(usize, usize)> {
        if self.dims(a) != self.dims(b) {
            let (left, right) = self.shapes_of(a, b);
            return Err(TensorError::ShapeMismatch {
                op: name,
                left,
                right,
            });
        }
        Ok(self.dims(a))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, n) = self.binary(a, b, "add")?;
        let out = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(x, y)| x + y)
            .collect();
        let rg = self.requires_grad(a) || self.requires_grad(b);
        Ok(self.push(m, n, Cow::Owned(out), Op::Add(a.0, b.0), rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, n) = self.binary(a, b, "mul")?;
        let out = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(x, y)| x * y)
            .collect();
        let rg = self.requires_grad(a) || self.requires_grad(b);
        Ok(self.push(m, n, Cow::Owned(out), Op::Mul(a.0, b.0), rg))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let (m, n) = self.dims(x);
        let out = self
            .value(x)
            .iter()
            .map(|&v| if v > 0.0 { v } else { 0.0 })
            .collect();
        let rg = self.requires_grad(x);
        self.push(m, n, Cow::Owned(out), Op::Relu(x.0), rg)
    }

    /// Inverted dropout. Identity (same var) in eval mode or at rate 0.
    pub fn dropout(&mut self, x: Var, rate: f64, seed: u64, train: bool) -> Result<Var> {
        if !(0.0..1.0).contains(&rate) {
            return Err(TensorError::InvalidParameter(format!(
                "dropout rate must be in [0, 1), got {rate}"
            )));
        }
        if !train || rate == 0.0 {
            return Ok(x);
        }
        let (m, n) = self.dims(x);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let keep = 1.0 / (1.0 - rate);
        let mask: Vec<f64> = (0..m * n)
            .map(|_| {
                if rng.random::<f64>() < rate {
                    0.0
                } else {
                    keep
                }
            })
            .collect();
        let out = self
            .value(x)
            .iter()
            .zip(&mask)
            .map(|(v, k)| v * k)
            .collect();
        let rg = self.requires_grad(x);
        Ok(self.push(m, n, Cow::Owned(out), Op::Dropout(x.0, mask), rg))
    }

    /// Column-wise concatenation of equally tall matrices.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let Some(&first) = parts.first() else {
            return Err(TensorError::InvalidParameter("concat of nothing".into()));
        };
        let m = self.dims(first).0;
        for &p in parts {
            if self.dims(p).0 != m {
                let (left, right) = self.shapes_of(first, p);
                return Err(TensorError::ShapeMismatch {
                    op: "concat_cols",
                    left,
                    right,
                });
            }
        }
        let total: usize = parts.iter().map(|&p| self.dims(p).1).sum();
        let mut out = Vec::with_capacity(m * total);
        for r in 0..m {
            for &p in parts {
                let c = self.dims(p).1;
                out.extend_from_slice(&self.value(p)[r * c..(r + 1) * c]);
            }
        }
        let rg = parts.iter().any(|&p| self.requires_grad(p));
        Ok(self.push(
            m,
            total,
            Cow::Owned(out),
            Op::Concat(parts.iter().map(|p| p.0).collect()),
            rg,
        ))
    }

    /// Row lookup into a `[vocab x dim]` table.
    pub fn gather_rows(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let (vocab, dim) = self.dims(table);
        if ids.is_empty() {
            return Err(TensorError::InvalidParameter("gather of no rows".into()));
        }
        if let Some(&bad) = ids.iter().find(|&&i| i >= vocab) {
            return Err(TensorError::InvalidParameter(format!(
                "row id {bad} out of range for table of {vocab} rows"
            )));
        }
        let t = self.value(table);
        let mut out = Vec::with_capacity(ids.len() * dim);
        for &i in ids {
            out.extend_from_slice(&t[i * dim..(i + 1) * dim]);
        }
        let rg = self.requires_grad(table);
        Ok(self.push(
            ids.len(),
            dim,
            Cow::Owned(out),
            Op::Gather(table.0, ids.to_vec()),
            rg,
        ))
    }

    /// Mean over consecutive groups of `group` rows: `[m*group x n] -> [m x n]`.
    pub fn mean_groups(&mut self, x: Var, group: usize) -> Result<Var> {
        let (rows, n) = self.dims(x);
        if group == 0 || rows % group != 0 {
            return Err(TensorError::InvalidParameter(format!(
                "cannot pool {rows} rows in groups of {group}"
            )));
        }
        let m = rows / group;
        let inv = 1.0 / group as f64;
        let v = self.value(x);
        let mut out = vec![0.0; m * n];
        for r in 0..rows {
            let o = &mut out[(r / group) * n..(r / group + 1) * n];
            o.iter_mut()
                .zip(&v[r * n..(r + 1) * n])
                .for_each(|(o, x)| *o += x * inv);
        }
        let rg = self.requires_grad(x);
        Ok(self.push(m, n, Cow::Owned(out), Op::MeanGroups(x.0, group), rg))
    }

    /// Mean softmax cross-entropy over the batch, returned as a `[1 x 1]` var.
    pub fn softmax_cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let (b, c) = self.dims(logits);
        if targets.len() != b {
            return Err(TensorError::LengthMismatch {
                expected: b,
                actual: targets.len(),
            });
        }
        if let Some(&t) = targets.iter().find(|&&t| t >= c) {
            return Err(TensorError::InvalidParameter(format!(
                "target class {t} out of range for {c} classes"
            )));
        }
        let lv = self.value(logits);
        if lv.iter().any(|x| !x.is_finite()) {
            return Err(TensorError::NonFinite("softmax_cross_entropy logits"));
        }
        let mut loss = 0.0;
        for (row, &t) in lv.chunks(c).zip(targets) {
            let arg = (0..c).fold(0, |a, i| if row[i] > row[a] { i } else { a });
            let max = row[arg];
            let tail: f64 = (0..c)
                .filter(|&i| i != arg)
                .map(|i| (row[i] - max).exp())
                .sum();
            loss += (max - row[t]) + tail.ln_1p();
        }
        loss /= b as f64;
        let probs = softmax_rows(lv, c);
        let rg = self.requires_grad(logits);
        Ok(self.push(
            1,
            1,
            Cow::Owned(vec![loss]),
            Op::SoftmaxCe {
                logits: logits.0,
                probs,
                targets: targets.to_vec(),
            },
            rg,
        ))
    }

    /// Reverse sweep from a `[1 x 1]` loss.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.dims(loss) != (1, 1) {
            let (r, c) = self.dims(loss);
            return Err(TensorError::ShapeMismatch {
                op: "backward (loss must be scalar)",
                left: vec![r, c],
                right: vec![1, 1],
            });
        }
        let mut grads: Vec<Option<Vec<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        if self.node(loss).requires_grad {
            grads[loss.0] = Some(vec![1.0]);
        }
        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            self.propagate(node, &g, &mut grads);
            grads[idx] = Some(g);
        }
        for (g, n) in grads.iter_mut().zip(&self.nodes) {
            if !n.requires_grad {
                *g = None;
            }
        }
        Ok(Gradients { grads })
    }

    fn accumulate(&self, grads: &mut [Option<Vec<f64>>], target: usize, contrib: Vec<f64>) {
        if !self.nodes[target].requires_grad {
            return;
        }
        match grads[target].as_mut() {
            Some(acc) => acc.iter_mut().zip(contrib).for_each(|(a, c)| *a += c),
            None => grads[target] = Some(contrib),
        }
    }

    fn wants(&self, i: usize) -> bool {
        self.nodes[i].requires_grad
    }

    fn propagate(&self, node: &Node<'a>, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = (self.nodes[*a].rows, self.nodes[*a].cols);
                let n = self.nodes[*b].cols;
                let av = &self.nodes[*a].value;
                let bv = &self.nodes[*b].value;
                if self.wants(*a) {
                    // dA = G * B^T
                    let mut ga = vec![0.0; m * k];
                    for i in 0..m {
                        let gi = &g[i * n..(i + 1) * n];
                        for p in 0..k {
                            let brow = &bv[p * n..(p + 1) * n];
                            ga[i * k + p] = gi.iter().zip(brow).map(|(x, y)| x * y).sum();
                        }
                    }
                    self.accumulate(grads, *a, ga);
                }
                if self.wants(*b) {
                    // dB = A^T * G
                    let mut gb = vec![0.0; k * n];
                    for p in 0..k {
                        let row = &mut gb[p * n..(p + 1) * n];
                        for i in 0..m {
                            let a_ip = av[i * k + p];
                            if a_ip == 0.0 {
                                continue;
                            }
                            row.iter_mut()
                                .zip(&g[i * n..(i + 1) * n])
                                .for_each(|(r, gv)| *r += a_ip * gv);
                        }
                    }
                    self.accumulate(grads, *b, gb);
                }
            }
            Op::AddBias(x, b) => {
                if self.wants(*x) {
                    self.accumulate(grads, *x, g.to_vec());
                }
                if self.wants(*b) {
                    let n = node.cols;
                    let mut gb = vec![0.0; n];
                    for row in g.chunks(n) {
                        gb.iter_mut().zip(row).for_each(|(a, r)| *a += r);
                    }
                    self.accumulate(grads, *b, gb);
                }
            }
            Op::Add(a, b) => {
                if self.wants(*a) {
                    self.accumulate(grads, *a, g.to_vec());
                }
                if self.wants(*b) {
                    self.accumulate(grads, *b, g.to_vec());
                }
            }
            Op::Mul(a, b) => {
                let av = &self.nodes[*a].value;
                let bv = &self.nodes[*b].value;
                if self.wants(*a) {
                    let ga = g.iter().zip(bv.iter()).map(|(g, y)| g * y).collect();
                    self.accumulate(grads, *a, ga);
                }
                if self.wants(*b) {
                    let gb = g.iter().zip(av.iter()).map(|(g, x)| g * x).collect();
                    self.accumulate(grads, *b, gb);
                }
            }
            Op::Relu(x) => {
                let xv = &self.nodes[*x].value;
                let gx = g
                    .iter()
                    .zip(xv.iter())
                    .map(|(g, &v)| if v > 0.0 { *g } else { 0.0 })
                    .collect();
                self.accumulate(grads, *x, gx);
            }
            Op::Dropout(x, mask) => {
                let gx = g.iter().zip(mask).map(|(g, m)| g * m).collect();
                self.accumulate(grads, *x, gx);
            }
            Op::Concat(parts) => {
                let total = node.cols;
                let mut offset = 0;
                for &p in parts {
                    let c = self.nodes[p].cols;
                    if self.wants(p) {
                        let mut gp = Vec::with_capacity(node.rows * c);
                        for r in 0..node.rows {
                            gp.extend_from_slice(&g[r * total + offset..r * total + offset + c]);
                        }
                        self.accumulate(grads, p, gp);
                    }
                    offset += c;
                }
            }
            Op::Gather(table, ids) => {
                let dim = node.cols;
                let mut gt = vec![0.0; self.nodes[*table].rows * dim];
                for (r, &i) in ids.iter().enumerate() {
                    gt[i * dim..(i + 1) * dim]
                        .iter_mut()
                        .zip(&g[r * dim..(r + 1) * dim])
                        .for_each(|(a, b)| *a += b);
                }
                self.accumulate(grads, *table, gt);
            }
            Op::MeanGroups(x, group) => {
                let n = node.cols;
                let rows = self.nodes[*x].rows;
                let inv = 1.0 / *group as f64;
                let mut gx = Vec::with_capacity(rows * n);
                for r in 0..rows {
                    let gr = &g[(r / group) * n..(r / group + 1) * n];
                    gx.extend(gr.iter().map(|v| v * inv));
                }
                self.accumulate(grads, *x, gx);
            }
            Op::SoftmaxCe {
                logits,
                probs,
                targets,
            } => {
                let c = self.nodes[*logits].cols;
                let b = targets.len() as f64;
                let scale = g[0] / b;
                let mut gl = probs.clone();
                for (row, &t) in gl.chunks_mut(c).zip(targets) {
                    row[t] -= 1.0;
                    row.iter_mut().for_each(|v| *v *= scale);
                }
                self.accumulate(grads, *logits, gl);
            }
        }
    }
}
