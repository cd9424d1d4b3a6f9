use super::matrix::{axpy, dot, gemm, Matrix};
use super::params::{ParamId, ParamStore};
use super::NumericsError;

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// Lower clamp applied inside logarithms of probabilities.
pub const PROB_FLOOR: f64 = 1e-12;

#[derive(Debug)]
enum Op {
    Input,
    Param(ParamId),
    MatMul {
        a: Var,
        b: Var,
        ta: bool,
        tb: bool,
    },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddN(Vec<Var>),
    AddRowBroadcast {
        m: Var,
        v: Var,
    },
    Outer {
        a: Var,
        b: Var,
    },
    Scale(Var, f64),
    OneMinus(Var),
    Sigmoid(Var),
    Tanh(Var),
    Relu(Var),
    Softmax(Var),
    LogSoftmax(Var),
    Sum(Var),
    Pick(Var, usize),
    Row(Var, usize),
    ConcatRows(Vec<Var>),
    Transpose(Var),
    Conv2d {
        input: Var,
        weight: Var,
        bias: Var,
        height: usize,
        width: usize,
        kernel: usize,
    },
    AvgPool2 {
        input: Var,
        height: usize,
        width: usize,
    },
    BceWithLogits {
        logits: Var,
        target: Vec<f64>,
    },
    KlDiv {
        p: Var,
        q: Var,
    },
}

#[derive(Debug)]
struct Node {
    rows: usize,
    cols: usize,
    value: Vec<f64>,
    op: Op,
}

/// Records primitive operations and replays them in reverse to compute
/// gradients. Vectors are `n×1` matrices.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

fn mismatch(what: &str, a: (usize, usize), b: (usize, usize)) -> NumericsError {
    NumericsError::ShapeMismatch(format!("{what}: {}x{} vs {}x{}", a.0, a.1, b.0, b.1))
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, rows: usize, cols: usize, value: Vec<f64>, op: Op) -> Var {
        debug_assert_eq!(value.len(), rows * cols);
        self.nodes.push(Node {
            rows,
            cols,
            value,
            op,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        let n = &self.nodes[v.0];
        (n.rows, n.cols)
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value[0]
    }

    pub fn to_matrix(&self, v: Var) -> Matrix {
        let n = &self.nodes[v.0];
        Matrix::new(n.rows, n.cols, n.value.clone()).unwrap_or_else(|_| {
            // Non-finite values are still worth inspecting.
            let mut m = Matrix::zeros(n.rows, n.cols);
            m.as_mut_slice().copy_from_slice(&n.value);
            m
        })
    }

    fn len_of(&self, v: Var) -> usize {
        self.nodes[v.0].value.len()
    }

    /// A constant input (no gradient is propagated out of it).
    pub fn input(
        &mut self,
        rows: usize,
        cols: usize,
        values: Vec<f64>,
    ) -> Result<Var, NumericsError> {
        if values.len() != rows * cols {
            return Err(NumericsError::ShapeMismatch(format!(
                "{} values for {rows}x{cols} input",
                values.len()
            )));
        }
        Ok(self.push(rows, cols, values, Op::Input))
    }

    pub fn vector(&mut self, values: &[f64]) -> Var {
        self.push(values.len(), 1, values.to_vec(), Op::Input)
    }

    pub fn zeros(&mut self, rows: usize, cols: usize) -> Var {
        self.push(rows, cols, vec![0.0; rows * cols], Op::Input)
    }

    /// Loads a parameter; its gradient flows back into the store on
    /// [`Tape::backward`].
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        let m = store.value(id);
        self.push(m.rows(), m.cols(), m.as_slice().to_vec(), Op::Param(id))
    }

    /// `op(a) · op(b)` with optional transposes.
    pub fn matmul_t(&mut self, a: Var, b: Var, ta: bool, tb: bool) -> Result<Var, NumericsError> {
        let (ar, ac) = self.shape(a);
        let (br, bc) = self.shape(b);
        let (m, k) = if ta { (ac, ar) } else { (ar, ac) };
        let (k2, n) = if tb { (bc, br) } else { (br, bc) };
        if k != k2 {
            return Err(mismatch("matmul", (m, k), (k2, n)));
        }
        let mut out = vec![0.0; m * n];
        gemm(ta, tb, m, n, k, self.value(a), self.value(b), &mut out);
        Ok(self.push(m, n, out, Op::MatMul { a, b, ta, tb }))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        self.matmul_t(a, b, false, false)
    }

    /// `W x (+ b)`.
    pub fn linear(&mut self, w: Var, x: Var, b: Option<Var>) -> Result<Var, NumericsError> {
        let y = self.matmul(w, x)?;
        match b {
            Some(b) => self.add(y, b),
            None => Ok(y),
        }
    }

    fn same_shape(&self, what: &str, a: Var, b: Var) -> Result<(usize, usize), NumericsError> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(mismatch(what, sa, sb));
        }
        Ok(sa)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        let (r, c) = self.same_shape("add", a, b)?;
        let out = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(x, y)| x + y)
            .collect();
        Ok(self.push(r, c, out, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        let (r, c) = self.same_shape("sub", a, b)?;
        let out = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(x, y)| x - y)
            .collect();
        Ok(self.push(r, c, out, Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        let (r, c) = self.same_shape("mul", a, b)?;
        let out = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(x, y)| x * y)
            .collect();
        Ok(self.push(r, c, out, Op::Mul(a, b)))
    }

    /// Sum of equally shaped values.
    pub fn add_n(&mut self, terms: &[Var]) -> Result<Var, NumericsError> {
        let first = *terms
            .first()
            .ok_or_else(|| NumericsError::ShapeMismatch("add_n of nothing".into()))?;
        let (r, c) = self.shape(first);
        let mut out = vec![0.0; r * c];
        for &t in terms {
            if self.shape(t) != (r, c) {
                return Err(mismatch("add_n", (r, c), self.shape(t)));
            }
            for (o, v) in out.iter_mut().zip(self.value(t)) {
                *o += v;
            }
        }
        Ok(self.push(r, c, out, Op::AddN(terms.to_vec())))
    }

    /// Adds the vector `v` (length = `m.cols`) to every row of `m`.
    pub fn add_row_broadcast(&mut self, m: Var, v: Var) -> Result<Var, NumericsError> {
        let (r, c) = self.shape(m);
        if self.len_of(v) != c {
            return Err(mismatch("add_row_broadcast", (r, c), self.shape(v)));
        }
        let mut out = self.value(m).to_vec();
        let vv = self.value(v);
        for row in out.chunks_mut(c) {
            for (o, x) in row.iter_mut().zip(vv) {
                *o += x;
            }
        }
        Ok(self.push(r, c, out, Op::AddRowBroadcast { m, v }))
    }

    /// `a bᵀ` for vectors `a` and `b`.
    pub fn outer(&mut self, a: Var, b: Var) -> Var {
        let (na, nb) = (self.len_of(a), self.len_of(b));
        let (av, bv) = (self.value(a), self.value(b));
        let mut out = Vec::with_capacity(na * nb);
        for x in av {
            out.extend(bv.iter().map(|y| x * y));
        }
        self.push(na, nb, out, Op::Outer { a, b })
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        let (r, c) = self.shape(a);
        let out = self.value(a).iter().map(|x| x * k).collect();
        self.push(r, c, out, Op::Scale(a, k))
    }

    pub fn one_minus(&mut self, a: Var) -> Var {
        let (r, c) = self.shape(a);
        let out = self.value(a).iter().map(|x| 1.0 - x).collect();
        self.push(r, c, out, Op::OneMinus(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let (r, c) = self.shape(a);
        let out = sigmoid_vec(self.value(a));
        self.push(r, c, out, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let (r, c) = self.shape(a);
        let out = tanh_vec(self.value(a));
        self.push(r, c, out, Op::Tanh(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let (r, c) = self.shape(a);
        let out = self.value(a).iter().map(|x| x.max(0.0)).collect();
        self.push(r, c, out, Op::Relu(a))
    }

    /// Softmax over all entries of `a`.
    pub fn softmax(&mut self, a: Var) -> Var {
        let (r, c) = self.shape(a);
        let out = softmax(self.value(a));
        self.push(r, c, out, Op::Softmax(a))
    }

    pub fn log_softmax(&mut self, a: Var) -> Var {
        let (r, c) = self.shape(a);
        let out = log_softmax(self.value(a));
        self.push(r, c, out, Op::LogSoftmax(a))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).iter().sum();
        self.push(1, 1, vec![s], Op::Sum(a))
    }

    /// Scalar element `i` of `a`.
    pub fn pick(&mut self, a: Var, i: usize) -> Result<Var, NumericsError> {
        let v = *self
            .value(a)
            .get(i)
            .ok_or_else(|| NumericsError::ShapeMismatch(format!("pick index {i}")))?;
        Ok(self.push(1, 1, vec![v], Op::Pick(a, i)))
    }

    /// Row `i` of a matrix, as a column vector.
    pub fn row(&mut self, m: Var, i: usize) -> Result<Var, NumericsError> {
        let (r, c) = self.shape(m);
        if i >= r {
            return Err(NumericsError::ShapeMismatch(format!("row {i} of {r}")));
        }
        let out = self.value(m)[i * c..(i + 1) * c].to_vec();
        Ok(self.push(c, 1, out, Op::Row(m, i)))
    }

    /// Stacks matrices with equal column counts vertically.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var, NumericsError> {
        let cols = self.shape(parts[0]).1;
        let mut rows = 0;
        let mut out = Vec::new();
        for &p in parts {
            let (r, c) = self.shape(p);
            if c != cols {
                return Err(mismatch("concat_rows", (rows, cols), (r, c)));
            }
            rows += r;
            out.extend_from_slice(self.value(p));
        }
        Ok(self.push(rows, cols, out, Op::ConcatRows(parts.to_vec())))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let (r, c) = self.shape(a);
        let av = self.value(a);
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = av[i * c + j];
            }
        }
        self.push(c, r, out, Op::Transpose(a))
    }

    /// Stride-1, same-padded 2-D convolution. `input` is
    /// `channels × (height·width)`, `weight` is `out × (channels·k·k)`,
    /// `bias` has `out` entries. `kernel` must be odd.
    pub fn conv2d(
        &mut self,
        input: Var,
        weight: Var,
        bias: Var,
        height: usize,
        width: usize,
        kernel: usize,
    ) -> Result<Var, NumericsError> {
        let (cin, hw) = self.shape(input);
        let (cout, wk) = self.shape(weight);
        if hw != height * width || wk != cin * kernel * kernel || kernel.is_multiple_of(2) {
            return Err(mismatch("conv2d", (cin, hw), (cout, wk)));
        }
        if self.len_of(bias) != cout {
            return Err(mismatch("conv2d bias", (cout, 1), self.shape(bias)));
        }
        let mut out = vec![0.0; cout * hw];
        let (iv, wv) = (self.value(input), self.value(weight));
        for (co, orow) in out.chunks_mut(hw).enumerate() {
            for ci in 0..cin {
                let src = &iv[ci * hw..(ci + 1) * hw];
                for_each_tap(kernel, |tap, dy, dx| {
                    let w = wv[co * wk + ci * kernel * kernel + tap];
                    if w != 0.0 {
                        shifted_rows(height, width, dy, dx, |o, i, len| {
                            axpy(&mut orow[o..o + len], &src[i..i + len], w)
                        });
                    }
                });
            }
        }
        let bv = self.value(bias);
        for (o, b) in out.chunks_mut(hw).zip(bv) {
            o.iter_mut().for_each(|x| *x += b);
        }
        Ok(self.push(
            cout,
            hw,
            out,
            Op::Conv2d {
                input,
                weight,
                bias,
                height,
                width,
                kernel,
            },
        ))
    }

    /// 2×2 average pooling with stride 2; `height` and `width` must be even.
    pub fn avg_pool2(
        &mut self,
        input: Var,
        height: usize,
        width: usize,
    ) -> Result<Var, NumericsError> {
        let (c, hw) = self.shape(input);
        if hw != height * width || !height.is_multiple_of(2) || !width.is_multiple_of(2) {
            return Err(NumericsError::ShapeMismatch(format!(
                "avg_pool2 on {height}x{width} with {hw} cells"
            )));
        }
        let (oh, ow) = (height / 2, width / 2);
        let iv = self.value(input);
        let mut out = vec![0.0; c * oh * ow];
        for ch in 0..c {
            let src = &iv[ch * hw..(ch + 1) * hw];
            let dst = &mut out[ch * oh * ow..(ch + 1) * oh * ow];
            for y in 0..oh {
                for x in 0..ow {
                    let i = 2 * y * width + 2 * x;
                    dst[y * ow + x] =
                        0.25 * (src[i] + src[i + 1] + src[i + width] + src[i + width + 1]);
                }
            }
        }
        Ok(self.push(
            c,
            oh * ow,
            out,
            Op::AvgPool2 {
                input,
                height,
                width,
            },
        ))
    }

    /// `Σ_j [max(z,0) − z·t + ln(1 + e^{−|z|})]`, the binary cross-entropy
    /// of `sigmoid(logits)` against `target`.
    pub fn bce_with_logits(&mut self, logits: Var, target: &[f64]) -> Result<Var, NumericsError> {
        if self.len_of(logits) != target.len() {
            return Err(NumericsError::ShapeMismatch("bce target length".into()));
        }
        let loss = self
            .value(logits)
            .iter()
            .zip(target)
            .map(|(z, t)| z.max(0.0) - z * t + (-z.abs()).exp().ln_1p())
            .sum();
        Ok(self.push(
            1,
            1,
            vec![loss],
            Op::BceWithLogits {
                logits,
                target: target.to_vec(),
            },
        ))
    }

    /// `KL(p ‖ q)` as computed by [`kl_divergence`].
    pub fn kl_div(&mut self, p: Var, q: Var) -> Result<Var, NumericsError> {
        if self.len_of(p) != self.len_of(q) {
            return Err(NumericsError::ShapeMismatch("kl operands".into()));
        }
        let v = kl_divergence(self.value(p), self.value(q));
        Ok(self.push(1, 1, vec![v], Op::KlDiv { p, q }))
    }

    /// Reverse pass from the scalar `loss`. Parameter gradients are added
    /// into `store` (scaled by `seed`); returns the number of nodes visited.
    pub fn backward(&self, loss: Var, seed: f64, store: &mut ParamStore) -> usize {
        let grads = self.gradients(loss, seed);
        let mut visited = 0;
        for (node, g) in self.nodes.iter().zip(&grads) {
            if let Some(g) = g {
                visited += 1;
                if let Op::Param(id) = node.op {
                    for (d, s) in store.get_mut(id).grad.as_mut_slice().iter_mut().zip(g) {
                        *d += s;
                    }
                }
            }
        }
        visited
    }

    /// Gradient of `loss` with respect to every recorded node.
    pub fn gradients(&self, loss: Var, seed: f64) -> Vec<Option<Vec<f64>>> {
        let mut grads: Vec<Option<Vec<f64>>> = Vec::with_capacity(self.nodes.len());
        grads.resize_with(self.nodes.len(), || None);
        grads[loss.0] = Some(vec![seed; self.len_of(loss)]);
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            self.backward_node(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        grads
    }

    /// Plain inputs are constants; nothing upstream of them is recorded.
    fn needs_grad(&self, v: Var) -> bool {
        !matches!(self.nodes[v.0].op, Op::Input)
    }

    fn backward_node(&self, i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[i];
        let y = &node.value;
        match &node.op {
            Op::Input | Op::Param(_) => {}
            Op::MatMul { a, b, ta, tb } => {
                let (ar, ac) = self.shape(*a);
                let (br, bc) = self.shape(*b);
                let (m, k) = if *ta { (ac, ar) } else { (ar, ac) };
                let n = if *tb { br } else { bc };
                let (av, bv) = (self.value(*a), self.value(*b));
                // C = op(A) op(B); dA and dB in A's and B's storage layout.
                if self.needs_grad(*a) {
                    let mut own = Vec::new();
                    let da = if a == b {
                        own.resize(ar * ac, 0.0);
                        &mut own
                    } else {
                        grad_slot(grads, *a, ar * ac)
                    };
                    match (ta, tb) {
                        (false, false) => gemm(false, true, m, k, n, g, bv, da),
                        (true, false) => gemm(false, true, k, m, n, bv, g, da),
                        (false, true) => gemm(false, false, m, k, n, g, bv, da),
                        (true, true) => gemm(true, true, k, m, n, bv, g, da),
                    }
                    if a == b {
                        accumulate(grads, *a, &own);
                    }
                }
                if self.needs_grad(*b) {
                    let db = grad_slot(grads, *b, br * bc);
                    match (ta, tb) {
                        (false, false) => gemm(true, false, k, n, m, av, g, db),
                        (true, false) => gemm(false, false, k, n, m, av, g, db),
                        (false, true) => gemm(true, false, n, k, m, g, av, db),
                        (true, true) => gemm(true, true, n, k, m, g, av, db),
                    }
                }
            }
            Op::Add(a, b) => {
                accumulate(grads, *a, g);
                accumulate(grads, *b, g);
            }
            Op::Sub(a, b) => {
                accumulate(grads, *a, g);
                let neg: Vec<f64> = g.iter().map(|x| -x).collect();
                accumulate(grads, *b, &neg);
            }
            Op::Mul(a, b) => {
                let da: Vec<f64> = g.iter().zip(self.value(*b)).map(|(g, y)| g * y).collect();
                let db: Vec<f64> = g.iter().zip(self.value(*a)).map(|(g, x)| g * x).collect();
                accumulate(grads, *a, &da);
                accumulate(grads, *b, &db);
            }
            Op::AddN(terms) => {
                for t in terms {
                    accumulate(grads, *t, g);
                }
            }
            Op::AddRowBroadcast { m, v } => {
                accumulate(grads, *m, g);
                let c = node.cols;
                let mut dv = vec![0.0; c];
                for row in g.chunks(c) {
                    for (d, x) in dv.iter_mut().zip(row) {
                        *d += x;
                    }
                }
                accumulate(grads, *v, &dv);
            }
            Op::Outer { a, b } => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let nb = bv.len();
                let da: Vec<f64> = g.chunks(nb).map(|row| dot(row, bv)).collect();
                let mut db = vec![0.0; nb];
                for (row, x) in g.chunks(nb).zip(av) {
                    for (d, gv) in db.iter_mut().zip(row) {
                        *d += gv * x;
                    }
                }
                accumulate(grads, *a, &da);
                accumulate(grads, *b, &db);
            }
            Op::Scale(a, k) => {
                let d: Vec<f64> = g.iter().map(|x| x * k).collect();
                accumulate(grads, *a, &d);
            }
            Op::OneMinus(a) => {
                let d: Vec<f64> = g.iter().map(|x| -x).collect();
                accumulate(grads, *a, &d);
            }
            Op::Sigmoid(a) => {
                let d: Vec<f64> = g.iter().zip(y).map(|(g, s)| g * s * (1.0 - s)).collect();
                accumulate(grads, *a, &d);
            }
            Op::Tanh(a) => {
                let d: Vec<f64> = g.iter().zip(y).map(|(g, t)| g * (1.0 - t * t)).collect();
                accumulate(grads, *a, &d);
            }
            Op::Relu(a) => {
                let d: Vec<f64> = g
                    .iter()
                    .zip(self.value(*a))
                    .map(|(g, x)| if *x > 0.0 { *g } else { 0.0 })
                    .collect();
                accumulate(grads, *a, &d);
            }
            Op::Softmax(a) => {
                let s = dot(g, y);
                let d: Vec<f64> = g.iter().zip(y).map(|(g, p)| p * (g - s)).collect();
                accumulate(grads, *a, &d);
            }
            Op::LogSoftmax(a) => {
                let total: f64 = g.iter().sum();
                let d: Vec<f64> = g.iter().zip(y).map(|(g, l)| g - l.exp() * total).collect();
                accumulate(grads, *a, &d);
            }
            Op::Sum(a) => {
                let d = vec![g[0]; self.len_of(*a)];
                accumulate(grads, *a, &d);
            }
            Op::Pick(a, idx) => {
                let mut d = vec![0.0; self.len_of(*a)];
                d[*idx] = g[0];
                accumulate(grads, *a, &d);
            }
            Op::Row(m, r) => {
                let c = node.rows;
                let mut d = vec![0.0; self.len_of(*m)];
                d[r * c..(r + 1) * c].copy_from_slice(g);
                accumulate(grads, *m, &d);
            }
            Op::ConcatRows(parts) => {
                let mut off = 0;
                for p in parts {
                    let n = self.len_of(*p);
                    accumulate(grads, *p, &g[off..off + n]);
                    off += n;
                }
            }
            Op::Transpose(a) => {
                let (r, c) = self.shape(*a);
                let mut d = vec![0.0; r * c];
                for i in 0..r {
                    for j in 0..c {
                        d[i * c + j] = g[j * r + i];
                    }
                }
                accumulate(grads, *a, &d);
            }
            Op::Conv2d {
                input,
                weight,
                bias,
                height,
                width,
                kernel,
            } => {
                let (cin, hw) = self.shape(*input);
                let (cout, wk) = self.shape(*weight);
                let (h, w, k) = (*height, *width, *kernel);
                let (iv, wv) = (self.value(*input), self.value(*weight));
                let mut dw = vec![0.0; cout * wk];
                let mut din = self.needs_grad(*input).then(|| vec![0.0; cin * hw]);
                for (co, grow) in g.chunks(hw).enumerate() {
                    for ci in 0..cin {
                        let src = &iv[ci * hw..(ci + 1) * hw];
                        for_each_tap(k, |tap, dy, dx| {
                            let idx = co * wk + ci * k * k + tap;
                            let mut acc = 0.0;
                            shifted_rows(h, w, dy, dx, |o, i, len| {
                                acc += dot(&grow[o..o + len], &src[i..i + len]);
                            });
                            dw[idx] += acc;
                            if let Some(din) = din.as_mut() {
                                let drow = &mut din[ci * hw..(ci + 1) * hw];
                                shifted_rows(h, w, dy, dx, |o, i, len| {
                                    axpy(&mut drow[i..i + len], &grow[o..o + len], wv[idx])
                                });
                            }
                        });
                    }
                }
                let db: Vec<f64> = g.chunks(hw).map(|r| r.iter().sum()).collect();
                accumulate(grads, *weight, &dw);
                accumulate(grads, *bias, &db);
                if let Some(din) = din {
                    accumulate(grads, *input, &din);
                }
            }
            Op::AvgPool2 {
                input,
                height,
                width,
            } => {
                let (c, hw) = self.shape(*input);
                let (oh, ow) = (height / 2, width / 2);
                let mut d = vec![0.0; c * hw];
                for ch in 0..c {
                    for y in 0..oh {
                        for x in 0..ow {
                            let gv = 0.25 * g[ch * oh * ow + y * ow + x];
                            let i = ch * hw + 2 * y * width + 2 * x;
                            d[i] += gv;
                            d[i + 1] += gv;
                            d[i + width] += gv;
                            d[i + width + 1] += gv;
                        }
                    }
                }
                accumulate(grads, *input, &d);
            }
            Op::BceWithLogits { logits, target } => {
                let d: Vec<f64> = self
                    .value(*logits)
                    .iter()
                    .zip(target)
                    .map(|(z, t)| g[0] * (sigmoid(*z) - t))
                    .collect();
                accumulate(grads, *logits, &d);
            }
            Op::KlDiv { p, q } => {
                let (pv, qv) = (self.value(*p), self.value(*q));
                let mut dp = vec![0.0; pv.len()];
                let mut dq = vec![0.0; qv.len()];
                for i in 0..pv.len() {
                    let pc = pv[i].max(PROB_FLOOR);
                    let qc = qv[i].max(PROB_FLOOR);
                    dp[i] = g[0] * (pc / qc).ln();
                    if pv[i] > PROB_FLOOR {
                        dp[i] += g[0];
                    }
                    if qv[i] > PROB_FLOOR {
                        dq[i] = -g[0] * pv[i] / qc;
                    }
                }
                accumulate(grads, *p, &dp);
                accumulate(grads, *q, &dq);
            }
        }
    }
}

/// The gradient buffer of `v`, zero-filled on first use.
fn grad_slot(grads: &mut [Option<Vec<f64>>], v: Var, len: usize) -> &mut Vec<f64> {
    grads[v.0].get_or_insert_with(|| vec![0.0; len])
}

fn accumulate(grads: &mut [Option<Vec<f64>>], v: Var, d: &[f64]) {
    match &mut grads[v.0] {
        Some(g) => {
            for (x, y) in g.iter_mut().zip(d) {
                *x += y;
            }
        }
        slot @ None => *slot = Some(d.to_vec()),
    }
}

/// Visits the taps of a `k×k` kernel as `(index, dy, dx)` in row-major order.
fn for_each_tap(k: usize, mut f: impl FnMut(usize, isize, isize)) {
    let pad = (k / 2) as isize;
    for ky in 0..k {
        for kx in 0..k {
            f(ky * k + kx, ky as isize - pad, kx as isize - pad);
        }
    }
}

/// Row segments where output pixel `(y, x)` reads input pixel
/// `(y + dy, x + dx)` inside the image, as `(out offset, in offset, len)`.
fn shifted_rows(
    height: usize,
    width: usize,
    dy: isize,
    dx: isize,
    mut f: impl FnMut(usize, usize, usize),
) {
    let (h, w) = (height as isize, width as isize);
    let (x0, x1) = ((-dx).max(0), (w - dx).min(w));
    if x1 <= x0 {
        return;
    }
    for y in (-dy).max(0)..(h - dy).min(h) {
        let o = y * w + x0;
        f(o as usize, (o + dy * w + dx) as usize, (x1 - x0) as usize);
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn sigmoid_vec(x: &[f64]) -> Vec<f64> {
    x.iter().map(|v| sigmoid(*v)).collect()
}

pub fn tanh_vec(x: &[f64]) -> Vec<f64> {
    x.iter().map(|v| v.tanh()).collect()
}

/// Max-shifted softmax.
pub fn softmax(x: &[f64]) -> Vec<f64> {
    let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = x.iter().map(|v| (v - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

pub fn log_softmax(x: &[f64]) -> Vec<f64> {
    let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + x.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    x.iter().map(|v| v - lse).collect()
}

/// `Σ p_i ln(p_i / q_i)`; the operands of the logarithm are clamped at
/// [`PROB_FLOOR`], so entries with `p_i = 0` contribute exactly zero.
pub fn kl_divergence(p: &[f64], q: &[f64]) -> f64 {
    p.iter()
        .zip(q)
        .map(|(a, b)| a * (a.max(PROB_FLOOR) / b.max(PROB_FLOOR)).ln())
        .sum()
}

/// `W x (+ b)` on plain values.
pub fn linear(w: &Matrix, x: &[f64], b: Option<&[f64]>) -> Result<Vec<f64>, NumericsError> {
    if w.cols() != x.len() {
        return Err(NumericsError::ShapeMismatch(format!(
            "linear: {}x{} times {}",
            w.rows(),
            w.cols(),
            x.len()
        )));
    }
    if let Some(b) = b {
        if b.len() != w.rows() {
            return Err(NumericsError::ShapeMismatch("linear bias".into()));
        }
    }
    Ok((0..w.rows())
        .map(|r| dot(w.row(r), x) + b.map_or(0.0, |b| b[r]))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_examples() {
        let id = Matrix::identity(2);
        assert_eq!(linear(&id, &[1.0, 2.0], None).unwrap(), vec![1.0, 2.0]);
        let w = Matrix::from_rows(&[&[1.0, 2.0], &[3.0, 4.0]]).unwrap();
        assert_eq!(linear(&w, &[1.0, 1.0], None).unwrap(), vec![3.0, 7.0]);
        assert_eq!(
            linear(&Matrix::zeros(3, 2), &[5.0, 6.0], None).unwrap(),
            vec![0.0; 3]
        );
        assert!(linear(&w, &[1.0], None).is_err());
        assert!(linear(&w, &[1.0, 1.0], Some(&[1.0])).is_err());
        assert_eq!(
            linear(&w, &[1.0, 1.0], Some(&[1.0, -1.0])).unwrap(),
            vec![4.0, 6.0]
        );
    }

    #[test]
    fn tape_linear_matches_value_linear() {
        let mut t = Tape::new();
        let w = t.input(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let x = t.vector(&[1.0, 1.0]);
        let y = t.linear(w, x, None).unwrap();
        assert_eq!(t.value(y), &[3.0, 7.0]);
        let bad = t.vector(&[1.0, 2.0, 3.0]);
        assert!(matches!(
            t.linear(w, bad, None),
            Err(NumericsError::ShapeMismatch(_))
        ));
    }

    #[test]
    fn softmax_cases() {
        assert_eq!(softmax(&[0.0, 0.0]), vec![0.5, 0.5]);
        let s = softmax(&[1000.0, 0.0]);
        assert!((s[0] - 1.0).abs() < 1e-12 && s[1] >= 0.0 && s[1] < 1e-300);
        let x = [0.3, -1.2, 2.0, 0.7];
        let naive: Vec<f64> = {
            let e: Vec<f64> = x.iter().map(|v: &f64| v.exp()).collect();
            let t: f64 = e.iter().sum();
            e.iter().map(|v| v / t).collect()
        };
        for (a, b) in softmax(&x).iter().zip(&naive) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!((softmax(&x).iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn activation_identities() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert_eq!(tanh_vec(&[0.0]), vec![0.0]);
        for x in [-30.0, -2.5, -0.1, 0.0, 0.7, 3.0, 40.0] {
            assert!((sigmoid(-x) - (1.0 - sigmoid(x))).abs() < 1e-12);
            let s = sigmoid(x);
            assert!((0.0..=1.0).contains(&s));
        }
        assert_eq!(sigmoid(f64::NEG_INFINITY), 0.0);
    }

    #[test]
    fn kl_basic() {
        assert_eq!(kl_divergence(&[0.5, 0.5], &[0.5, 0.5]), 0.0);
        let v = kl_divergence(&[1.0, 0.0], &[0.5, 0.5]);
        assert!((v - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn conv_identity_kernel_is_identity() {
        let mut t = Tape::new();
        let img: Vec<f64> = (0..12).map(|v| v as f64).collect();
        let x = t.input(1, 12, img.clone()).unwrap();
        let mut k = vec![0.0; 9];
        k[4] = 1.0;
        let w = t.input(1, 9, k).unwrap();
        let b = t.vector(&[0.0]);
        let y = t.conv2d(x, w, b, 3, 4, 3).unwrap();
        assert_eq!(t.value(y), img.as_slice());
        let p = t.avg_pool2(x, 3, 4);
        assert!(p.is_err());
        let x2 = t.input(1, 16, (0..16).map(|v| v as f64).collect()).unwrap();
        let p = t.avg_pool2(x2, 4, 4).unwrap();
        assert_eq!(t.value(p), &[2.5, 4.5, 10.5, 12.5]);
    }

    #[test]
    fn conv_gradients_on_edge_shapes() {
        use crate::numerics::{grad_check, GradCheckOptions};
        let shapes = [
            (1, 1, 3),
            (1, 5, 3),
            (2, 2, 3),
            (4, 4, 3),
            (3, 7, 5),
            (5, 2, 1),
            (4, 4, 5),
        ];
        for (h, w, k) in shapes {
            let (cin, cout) = (2, 3);
            let mut store = ParamStore::new();
            let val = |n: usize, s: f64| {
                (0..n)
                    .map(|i| ((i as f64 + s) * 0.731).sin())
                    .collect::<Vec<_>>()
            };
            let xi = store
                .add("x", Matrix::new(cin, h * w, val(cin * h * w, 0.3)).unwrap())
                .unwrap();
            let wi = store
                .add(
                    "w",
                    Matrix::new(cout, cin * k * k, val(cout * cin * k * k, 1.1)).unwrap(),
                )
                .unwrap();
            let bi = store
                .add("b", Matrix::column(&val(cout, 2.9)).unwrap())
                .unwrap();
            let r = val(cout * h * w, 5.0);
            let report = grad_check(
                &mut store,
                |t, s| {
                    let (x, wv, b) = (t.param(s, xi), t.param(s, wi), t.param(s, bi));
                    let y = t.conv2d(x, wv, b, h, w, k)?;
                    let rv = t.input(cout, h * w, r.clone())?;
                    let m = t.mul(y, rv)?;
                    Ok(t.sum(m))
                },
                &GradCheckOptions {
                    per_param: None,
                    ..Default::default()
                },
            )
            .unwrap();
            assert!(report.max_rel_error < 1e-7, "{h}x{w} k{k}: {report:?}");
        }
    }

    #[test]
    fn reused_nodes_accumulate_gradient() {
        let mut t = Tape::new();
        let mut store = ParamStore::new();
        let id = store.add("x", Matrix::column(&[3.0]).unwrap()).unwrap();
        let x = t.param(&store, id);
        let y = t.mul(x, x).unwrap();
        let z = t.add(y, x).unwrap();
        let l = t.sum(z);
        t.backward(l, 1.0, &mut store);
        assert_eq!(store.grad(id).as_slice(), &[7.0]);
    }
}
