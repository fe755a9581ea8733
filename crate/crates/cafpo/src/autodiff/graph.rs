use std::collections::BTreeMap;

use super::tensor::{DiffError, ParamId, ParamStore, Tensor};

/// Handle to a node in a [`Graph`].
#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub struct NodeId(usize);

#[derive(Clone, Debug)]
enum Op {
    Input(String),
    /// Parameter reference: `slot` indexes the store slice passed to
    /// `forward`/`backward`, `id` the parameter inside that store.
    Param { slot: usize, id: ParamId },
    Const(Tensor),
    MatMul(NodeId, NodeId),
    Add(NodeId, NodeId),
    /// Row vector broadcast-added to every row of a matrix.
    AddRow(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    /// Row vector broadcast-multiplied into every row of a matrix.
    MulRow(NodeId, NodeId),
    Scale(NodeId, f64),
    AddScalar(NodeId, f64),
    LeakyRelu(NodeId, f64),
    Tanh(NodeId),
    Sigmoid(NodeId),
    Exp(NodeId),
    Clamp(NodeId, f64, f64),
    Min(NodeId, NodeId),
    Sum(NodeId),
    Mean(NodeId),
    /// Row-wise sum: `R x C -> R x 1`.
    SumCols(NodeId),
    /// Each input row repeated `times` times consecutively.
    RepeatRows(NodeId, usize),
    SliceRows(NodeId, usize, usize),
    ConcatCols(NodeId, NodeId),
    ConcatRows(Vec<NodeId>),
    Reshape(NodeId, usize, usize),
    Mse(NodeId, NodeId),
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Input(_) => "Input",
            Op::Param { .. } => "Param",
            Op::Const(_) => "Const",
            Op::MatMul(..) => "MatMul",
            Op::Add(..) => "Add",
            Op::AddRow(..) => "AddRow",
            Op::Sub(..) => "Sub",
            Op::Mul(..) => "Mul",
            Op::MulRow(..) => "MulRow",
            Op::Scale(..) => "Scale",
            Op::AddScalar(..) => "AddScalar",
            Op::LeakyRelu(..) => "LeakyRelu",
            Op::Tanh(_) => "Tanh",
            Op::Sigmoid(_) => "Sigmoid",
            Op::Exp(_) => "Exp",
            Op::Clamp(..) => "Clamp",
            Op::Min(..) => "Min",
            Op::Sum(_) => "Sum",
            Op::Mean(_) => "Mean",
            Op::SumCols(_) => "SumCols",
            Op::RepeatRows(..) => "RepeatRows",
            Op::SliceRows(..) => "SliceRows",
            Op::ConcatCols(..) => "ConcatCols",
            Op::ConcatRows(_) => "ConcatRows",
            Op::Reshape(..) => "Reshape",
            Op::Mse(..) => "Mse",
        }
    }
}

/// Per-parameter gradients for one [`ParamStore`], aligned by [`ParamId`].
/// Parameters the differentiated output does not depend on stay `None`.
#[derive(Clone, Debug)]
pub struct GradStore {
    grads: Vec<Option<Tensor>>,
}

impl GradStore {
    fn new(len: usize) -> Self {
        GradStore { grads: vec![None; len] }
    }

    /// Assembles a gradient store directly; mainly useful in tests and in
    /// hand-built update rules.
    pub fn from_parts(grads: Vec<Option<Tensor>>) -> Self {
        GradStore { grads }
    }

    pub fn get(&self, id: ParamId) -> Option<&Tensor> {
        self.grads[id.0].as_ref()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, Option<&Tensor>)> {
        self.grads.iter().enumerate().map(|(i, g)| (ParamId(i), g.as_ref()))
    }

    /// Elementwise scale of every present gradient.
    pub fn scale(&mut self, c: f64) {
        for g in self.grads.iter_mut().flatten() {
            for v in g.data_mut() {
                *v *= c;
            }
        }
    }
}

/// Static record of primitive operations. Built once, shape-checked at build
/// time, then replayed: `forward` caches every intermediate, `backward`
/// visits the record in reverse exactly once and accumulates gradients
/// (starting from zero on each call).
#[derive(Clone, Debug, Default)]
pub struct Graph {
    ops: Vec<Op>,
    shapes: Vec<(usize, usize)>,
    values: Vec<Tensor>,
    grads: Vec<Option<Tensor>>,
    inputs: BTreeMap<String, usize>,
    forwarded: bool,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn node_count(&self) -> usize {
        self.ops.len()
    }

    pub fn shape(&self, n: NodeId) -> (usize, usize) {
        self.shapes[n.0]
    }

    fn push(&mut self, op: Op, shape: (usize, usize)) -> NodeId {
        self.ops.push(op);
        self.shapes.push(shape);
        self.forwarded = false;
        NodeId(self.ops.len() - 1)
    }

    fn mismatch(&self, op: &str, detail: String) -> DiffError {
        DiffError::ShapeMismatch { op: op.into(), detail }
    }

    fn same_shape(&self, op: &str, a: NodeId, b: NodeId) -> Result<(usize, usize), DiffError> {
        let (sa, sb) = (self.shapes[a.0], self.shapes[b.0]);
        if sa != sb {
            return Err(self.mismatch(op, format!("{:?} vs {:?}", sa, sb)));
        }
        Ok(sa)
    }

    fn row_compatible(&self, op: &str, m: NodeId, v: NodeId) -> Result<(usize, usize), DiffError> {
        let (sm, sv) = (self.shapes[m.0], self.shapes[v.0]);
        if sv.0 != 1 || sv.1 != sm.1 {
            return Err(self.mismatch(op, format!("matrix {:?} with row vector {:?}", sm, sv)));
        }
        Ok(sm)
    }

    // ── node constructors ────────────────────────────────────────────

    pub fn input(&mut self, name: impl Into<String>, rows: usize, cols: usize) -> NodeId {
        let name = name.into();
        let id = self.push(Op::Input(name.clone()), (rows, cols));
        self.inputs.insert(name, id.0);
        id
    }

    pub fn param(&mut self, slot: usize, id: ParamId, store: &ParamStore) -> NodeId {
        let shape = store.get(id).shape();
        self.push(Op::Param { slot, id }, shape)
    }

    pub fn constant(&mut self, value: Tensor) -> NodeId {
        let shape = value.shape();
        self.push(Op::Const(value), shape)
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, DiffError> {
        let (sa, sb) = (self.shapes[a.0], self.shapes[b.0]);
        if sa.1 != sb.0 {
            return Err(self.mismatch("MatMul", format!("{:?} x {:?}", sa, sb)));
        }
        Ok(self.push(Op::MatMul(a, b), (sa.0, sb.1)))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, DiffError> {
        let s = self.same_shape("Add", a, b)?;
        Ok(self.push(Op::Add(a, b), s))
    }

    pub fn add_row(&mut self, m: NodeId, v: NodeId) -> Result<NodeId, DiffError> {
        let s = self.row_compatible("AddRow", m, v)?;
        Ok(self.push(Op::AddRow(m, v), s))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, DiffError> {
        let s = self.same_shape("Sub", a, b)?;
        Ok(self.push(Op::Sub(a, b), s))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, DiffError> {
        let s = self.same_shape("Mul", a, b)?;
        Ok(self.push(Op::Mul(a, b), s))
    }

    pub fn mul_row(&mut self, m: NodeId, v: NodeId) -> Result<NodeId, DiffError> {
        let s = self.row_compatible("MulRow", m, v)?;
        Ok(self.push(Op::MulRow(m, v), s))
    }

    pub fn scale(&mut self, a: NodeId, c: f64) -> NodeId {
        let s = self.shapes[a.0];
        self.push(Op::Scale(a, c), s)
    }

    pub fn add_scalar(&mut self, a: NodeId, c: f64) -> NodeId {
        let s = self.shapes[a.0];
        self.push(Op::AddScalar(a, c), s)
    }

    pub fn leaky_relu(&mut self, a: NodeId, slope: f64) -> NodeId {
        let s = self.shapes[a.0];
        self.push(Op::LeakyRelu(a, slope), s)
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        let s = self.shapes[a.0];
        self.push(Op::Tanh(a), s)
    }

    pub fn sigmoid(&mut self, a: NodeId) -> NodeId {
        let s = self.shapes[a.0];
        self.push(Op::Sigmoid(a), s)
    }

    pub fn exp(&mut self, a: NodeId) -> NodeId {
        let s = self.shapes[a.0];
        self.push(Op::Exp(a), s)
    }

    pub fn clamp(&mut self, a: NodeId, lo: f64, hi: f64) -> NodeId {
        let s = self.shapes[a.0];
        self.push(Op::Clamp(a, lo, hi), s)
    }

    pub fn min(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, DiffError> {
        let s = self.same_shape("Min", a, b)?;
        Ok(self.push(Op::Min(a, b), s))
    }

    pub fn sum(&mut self, a: NodeId) -> NodeId {
        self.push(Op::Sum(a), (1, 1))
    }

    pub fn mean(&mut self, a: NodeId) -> NodeId {
        self.push(Op::Mean(a), (1, 1))
    }

    pub fn sum_cols(&mut self, a: NodeId) -> NodeId {
        let s = self.shapes[a.0];
        self.push(Op::SumCols(a), (s.0, 1))
    }

    pub fn repeat_rows(&mut self, a: NodeId, times: usize) -> NodeId {
        let s = self.shapes[a.0];
        self.push(Op::RepeatRows(a, times), (s.0 * times, s.1))
    }

    pub fn slice_rows(&mut self, a: NodeId, start: usize, len: usize) -> Result<NodeId, DiffError> {
        let s = self.shapes[a.0];
        if start + len > s.0 {
            return Err(self.mismatch("SliceRows", format!("rows {}..{} of {:?}", start, start + len, s)));
        }
        Ok(self.push(Op::SliceRows(a, start, len), (len, s.1)))
    }

    pub fn concat_cols(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, DiffError> {
        let (sa, sb) = (self.shapes[a.0], self.shapes[b.0]);
        if sa.0 != sb.0 {
            return Err(self.mismatch("ConcatCols", format!("{:?} vs {:?}", sa, sb)));
        }
        Ok(self.push(Op::ConcatCols(a, b), (sa.0, sa.1 + sb.1)))
    }

    pub fn concat_rows(&mut self, parts: &[NodeId]) -> Result<NodeId, DiffError> {
        if parts.is_empty() {
            return Err(self.mismatch("ConcatRows", "no parts".into()));
        }
        let cols = self.shapes[parts[0].0].1;
        let mut rows = 0;
        for p in parts {
            let s = self.shapes[p.0];
            if s.1 != cols {
                return Err(self.mismatch("ConcatRows", format!("column mismatch {:?} vs {}", s, cols)));
            }
            rows += s.0;
        }
        Ok(self.push(Op::ConcatRows(parts.to_vec()), (rows, cols)))
    }

    pub fn reshape(&mut self, a: NodeId, rows: usize, cols: usize) -> Result<NodeId, DiffError> {
        let s = self.shapes[a.0];
        if s.0 * s.1 != rows * cols {
            return Err(self.mismatch("Reshape", format!("{:?} -> {}x{}", s, rows, cols)));
        }
        Ok(self.push(Op::Reshape(a, rows, cols), (rows, cols)))
    }

    /// Mean squared error between two same-shape tensors; scalar output.
    pub fn mse(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, DiffError> {
        self.same_shape("Mse", a, b)?;
        Ok(self.push(Op::Mse(a, b), (1, 1)))
    }

    // ── execution ────────────────────────────────────────────────────

    /// Replays the recorded operations with the given named inputs bound.
    /// Every intermediate is cached for a later `backward`. Rejects missing
    /// or extraneous inputs, shape mismatches, and non-finite intermediates.
    pub fn forward(
        &mut self,
        inputs: &[(&str, &Tensor)],
        stores: &[&ParamStore],
    ) -> Result<(), DiffError> {
        let mut bound: BTreeMap<&str, &Tensor> = BTreeMap::new();
        for (name, t) in inputs {
            if !self.inputs.contains_key(*name) {
                return Err(DiffError::UnknownInput((*name).into()));
            }
            bound.insert(name, t);
        }
        for name in self.inputs.keys() {
            if !bound.contains_key(name.as_str()) {
                return Err(DiffError::MissingInput(name.clone()));
            }
        }

        let mut values: Vec<Tensor> = Vec::with_capacity(self.ops.len());
        for (i, op) in self.ops.iter().enumerate() {
            let shape = self.shapes[i];
            let out = match op {
                Op::Input(name) => {
                    let t = bound[name.as_str()];
                    if t.shape() != shape {
                        return Err(DiffError::ShapeMismatch {
                            op: format!("Input `{}`", name),
                            detail: format!("declared {:?}, bound {:?}", shape, t.shape()),
                        });
                    }
                    (*t).clone()
                }
                Op::Param { slot, id } => {
                    let t = stores[*slot].get(*id);
                    if t.shape() != shape {
                        return Err(DiffError::ShapeMismatch {
                            op: format!("Param `{}`", stores[*slot].name(*id)),
                            detail: format!("declared {:?}, store has {:?}", shape, t.shape()),
                        });
                    }
                    t.clone()
                }
                Op::Const(t) => t.clone(),
                Op::MatMul(a, b) => matmul(&values[a.0], &values[b.0]),
                Op::Add(a, b) => zip(&values[a.0], &values[b.0], |x, y| x + y),
                Op::AddRow(m, v) => broadcast_row(&values[m.0], &values[v.0], |x, y| x + y),
                Op::Sub(a, b) => zip(&values[a.0], &values[b.0], |x, y| x - y),
                Op::Mul(a, b) => zip(&values[a.0], &values[b.0], |x, y| x * y),
                Op::MulRow(m, v) => broadcast_row(&values[m.0], &values[v.0], |x, y| x * y),
                Op::Scale(a, c) => map(&values[a.0], |x| x * c),
                Op::AddScalar(a, c) => map(&values[a.0], |x| x + c),
                Op::LeakyRelu(a, slope) => {
                    let s = *slope;
                    map(&values[a.0], move |x| if x > 0.0 { x } else { s * x })
                }
                Op::Tanh(a) => map(&values[a.0], f64::tanh),
                Op::Sigmoid(a) => map(&values[a.0], |x| 1.0 / (1.0 + (-x).exp())),
                Op::Exp(a) => map(&values[a.0], f64::exp),
                Op::Clamp(a, lo, hi) => {
                    let (lo, hi) = (*lo, *hi);
                    map(&values[a.0], move |x| x.clamp(lo, hi))
                }
                Op::Min(a, b) => zip(&values[a.0], &values[b.0], f64::min),
                Op::Sum(a) => Tensor::scalar(values[a.0].data().iter().sum()),
                Op::Mean(a) => {
                    let t = &values[a.0];
                    Tensor::scalar(t.data().iter().sum::<f64>() / t.len() as f64)
                }
                Op::SumCols(a) => {
                    let t = &values[a.0];
                    let mut out = Tensor::zeros(t.rows(), 1);
                    for r in 0..t.rows() {
                        out.data_mut()[r] = t.row_slice(r).iter().sum();
                    }
                    out
                }
                Op::RepeatRows(a, times) => {
                    let t = &values[a.0];
                    let mut data = Vec::with_capacity(t.len() * times);
                    for r in 0..t.rows() {
                        for _ in 0..*times {
                            data.extend_from_slice(t.row_slice(r));
                        }
                    }
                    Tensor::new(t.rows() * times, t.cols(), data)?
                }
                Op::SliceRows(a, start, len) => {
                    let t = &values[a.0];
                    let data = t.data()[start * t.cols()..(start + len) * t.cols()].to_vec();
                    Tensor::new(*len, t.cols(), data)?
                }
                Op::ConcatCols(a, b) => {
                    let (ta, tb) = (&values[a.0], &values[b.0]);
                    let mut data = Vec::with_capacity(ta.len() + tb.len());
                    for r in 0..ta.rows() {
                        data.extend_from_slice(ta.row_slice(r));
                        data.extend_from_slice(tb.row_slice(r));
                    }
                    Tensor::new(ta.rows(), ta.cols() + tb.cols(), data)?
                }
                Op::ConcatRows(parts) => {
                    let mut data = Vec::new();
                    for p in parts {
                        data.extend_from_slice(values[p.0].data());
                    }
                    Tensor::new(shape.0, shape.1, data)?
                }
                Op::Reshape(a, rows, cols) => Tensor::new(*rows, *cols, values[a.0].data().to_vec())?,
                Op::Mse(a, b) => {
                    let (ta, tb) = (&values[a.0], &values[b.0]);
                    let n = ta.len() as f64;
                    let sum: f64 = ta
                        .data()
                        .iter()
                        .zip(tb.data())
                        .map(|(x, y)| (x - y) * (x - y))
                        .sum();
                    Tensor::scalar(sum / n)
                }
            };
            if !out.is_finite() {
                return Err(DiffError::NonFinite { op: format!("{} (node {})", op.name(), i) });
            }
            values.push(out);
        }
        self.values = values;
        self.forwarded = true;
        Ok(())
    }

    /// Cached forward value of a node. Requires a completed `forward`.
    pub fn value(&self, n: NodeId) -> Result<&Tensor, DiffError> {
        if !self.forwarded {
            return Err(DiffError::BackwardBeforeForward);
        }
        Ok(&self.values[n.0])
    }

    /// Gradient of the last `backward`'s seeded output with respect to a
    /// node (input nodes included). `None` if the output does not depend
    /// on it.
    pub fn node_grad(&self, n: NodeId) -> Option<&Tensor> {
        self.grads.get(n.0).and_then(|g| g.as_ref())
    }

    /// Reverse sweep from `node`, seeding its gradient with `seed`.
    /// Gradient accumulation starts from zero on every call. Returns one
    /// [`GradStore`] per parameter store passed in, aligned by slot.
    pub fn backward(
        &mut self,
        node: NodeId,
        seed: &Tensor,
        stores: &[&ParamStore],
    ) -> Result<Vec<GradStore>, DiffError> {
        if !self.forwarded {
            return Err(DiffError::BackwardBeforeForward);
        }
        if seed.shape() != self.shapes[node.0] {
            return Err(DiffError::ShapeMismatch {
                op: "backward seed".into(),
                detail: format!("node {:?}, seed {:?}", self.shapes[node.0], seed.shape()),
            });
        }

        let mut grads: Vec<Option<Tensor>> = vec![None; self.ops.len()];
        grads[node.0] = Some(seed.clone());
        let mut out: Vec<GradStore> = stores.iter().map(|s| GradStore::new(s.len())).collect();

        for i in (0..=node.0).rev() {
            let g = match grads[i].take() {
                Some(g) => g,
                None => continue,
            };
            match &self.ops[i] {
                Op::Input(_) | Op::Const(_) => {
                    grads[i] = Some(g); // keep for node_grad inspection
                    continue;
                }
                Op::Param { slot, id } => {
                    accum_tensor(&mut out[*slot].grads[id.0], &g);
                    grads[i] = Some(g);
                    continue;
                }
                Op::MatMul(a, b) => {
                    let (va, vb) = (&self.values[a.0], &self.values[b.0]);
                    // dA += G * B^T
                    let mut da = Tensor::zeros(va.rows(), va.cols());
                    for r in 0..va.rows() {
                        for p in 0..va.cols() {
                            let mut acc = 0.0;
                            let grow = g.row_slice(r);
                            let brow = vb.row_slice(p);
                            for j in 0..vb.cols() {
                                acc += grow[j] * brow[j];
                            }
                            da.data_mut()[r * va.cols() + p] = acc;
                        }
                    }
                    // dB += A^T * G
                    let mut db = Tensor::zeros(vb.rows(), vb.cols());
                    for r in 0..va.rows() {
                        let arow = va.row_slice(r);
                        let grow = g.row_slice(r);
                        for p in 0..va.cols() {
                            let av = arow[p];
                            if av == 0.0 {
                                continue;
                            }
                            let drow = &mut db.data_mut()[p * vb.cols()..(p + 1) * vb.cols()];
                            for j in 0..drow.len() {
                                drow[j] += av * grow[j];
                            }
                        }
                    }
                    accum_tensor(&mut grads[a.0], &da);
                    accum_tensor(&mut grads[b.0], &db);
                }
                Op::Add(a, b) => {
                    accum_tensor(&mut grads[a.0], &g);
                    accum_tensor(&mut grads[b.0], &g);
                }
                Op::AddRow(m, v) => {
                    accum_tensor(&mut grads[m.0], &g);
                    let mut dv = Tensor::zeros(1, g.cols());
                    for r in 0..g.rows() {
                        for (c, gv) in g.row_slice(r).iter().enumerate() {
                            dv.data_mut()[c] += gv;
                        }
                    }
                    accum_tensor(&mut grads[v.0], &dv);
                }
                Op::Sub(a, b) => {
                    accum_tensor(&mut grads[a.0], &g);
                    accum_map(&mut grads[b.0], &g, |x| -x);
                }
                Op::Mul(a, b) => {
                    let (va, vb) = (self.values[a.0].clone(), self.values[b.0].clone());
                    accum_zip(&mut grads[a.0], &g, &vb, |gv, y| gv * y);
                    accum_zip(&mut grads[b.0], &g, &va, |gv, x| gv * x);
                }
                Op::MulRow(m, v) => {
                    let (vm, vv) = (&self.values[m.0], &self.values[v.0]);
                    let mut dm = Tensor::zeros(vm.rows(), vm.cols());
                    let mut dv = Tensor::zeros(1, vv.cols());
                    for r in 0..vm.rows() {
                        for c in 0..vm.cols() {
                            let gv = g.at(r, c);
                            dm.data_mut()[r * vm.cols() + c] = gv * vv.data()[c];
                            dv.data_mut()[c] += gv * vm.at(r, c);
                        }
                    }
                    accum_tensor(&mut grads[m.0], &dm);
                    accum_tensor(&mut grads[v.0], &dv);
                }
                Op::Scale(a, c) => {
                    let c = *c;
                    accum_map(&mut grads[a.0], &g, |x| c * x);
                }
                Op::AddScalar(a, _) => accum_tensor(&mut grads[a.0], &g),
                Op::LeakyRelu(a, slope) => {
                    let s = *slope;
                    let va = self.values[a.0].clone();
                    accum_zip(&mut grads[a.0], &g, &va, |gv, x| if x > 0.0 { gv } else { s * gv });
                }
                Op::Tanh(a) => {
                    let y = self.values[i].clone();
                    accum_zip(&mut grads[a.0], &g, &y, |gv, yv| gv * (1.0 - yv * yv));
                }
                Op::Sigmoid(a) => {
                    let y = self.values[i].clone();
                    accum_zip(&mut grads[a.0], &g, &y, |gv, yv| gv * yv * (1.0 - yv));
                }
                Op::Exp(a) => {
                    let y = self.values[i].clone();
                    accum_zip(&mut grads[a.0], &g, &y, |gv, yv| gv * yv);
                }
                Op::Clamp(a, lo, hi) => {
                    let (lo, hi) = (*lo, *hi);
                    let va = self.values[a.0].clone();
                    accum_zip(&mut grads[a.0], &g, &va, move |gv, x| {
                        if x >= lo && x <= hi {
                            gv
                        } else {
                            0.0
                        }
                    });
                }
                Op::Min(a, b) => {
                    // Ties route to the first argument.
                    let (va, vb) = (self.values[a.0].clone(), self.values[b.0].clone());
                    let mut da = Tensor::zeros(va.rows(), va.cols());
                    let mut db = Tensor::zeros(vb.rows(), vb.cols());
                    for k in 0..g.len() {
                        if va.data()[k] <= vb.data()[k] {
                            da.data_mut()[k] = g.data()[k];
                        } else {
                            db.data_mut()[k] = g.data()[k];
                        }
                    }
                    accum_tensor(&mut grads[a.0], &da);
                    accum_tensor(&mut grads[b.0], &db);
                }
                Op::Sum(a) => {
                    let gv = g.item();
                    let sa = self.shapes[a.0];
                    accum_tensor(&mut grads[a.0], &Tensor::full(sa.0, sa.1, gv));
                }
                Op::Mean(a) => {
                    let sa = self.shapes[a.0];
                    let gv = g.item() / (sa.0 * sa.1) as f64;
                    accum_tensor(&mut grads[a.0], &Tensor::full(sa.0, sa.1, gv));
                }
                Op::SumCols(a) => {
                    let sa = self.shapes[a.0];
                    let mut da = Tensor::zeros(sa.0, sa.1);
                    for r in 0..sa.0 {
                        let gv = g.data()[r];
                        for c in 0..sa.1 {
                            da.data_mut()[r * sa.1 + c] = gv;
                        }
                    }
                    accum_tensor(&mut grads[a.0], &da);
                }
                Op::RepeatRows(a, times) => {
                    let sa = self.shapes[a.0];
                    let mut da = Tensor::zeros(sa.0, sa.1);
                    for r in 0..g.rows() {
                        let src = g.row_slice(r);
                        let dst = &mut da.data_mut()[(r / times) * sa.1..(r / times + 1) * sa.1];
                        for c in 0..sa.1 {
                            dst[c] += src[c];
                        }
                    }
                    accum_tensor(&mut grads[a.0], &da);
                }
                Op::SliceRows(a, start, len) => {
                    let sa = self.shapes[a.0];
                    let mut da = Tensor::zeros(sa.0, sa.1);
                    da.data_mut()[start * sa.1..(start + len) * sa.1].copy_from_slice(g.data());
                    accum_tensor(&mut grads[a.0], &da);
                }
                Op::ConcatCols(a, b) => {
                    let (sa, sb) = (self.shapes[a.0], self.shapes[b.0]);
                    let mut da = Tensor::zeros(sa.0, sa.1);
                    let mut db = Tensor::zeros(sb.0, sb.1);
                    for r in 0..g.rows() {
                        let grow = g.row_slice(r);
                        da.data_mut()[r * sa.1..(r + 1) * sa.1].copy_from_slice(&grow[..sa.1]);
                        db.data_mut()[r * sb.1..(r + 1) * sb.1].copy_from_slice(&grow[sa.1..]);
                    }
                    accum_tensor(&mut grads[a.0], &da);
                    accum_tensor(&mut grads[b.0], &db);
                }
                Op::ConcatRows(parts) => {
                    let parts = parts.clone();
                    let mut offset = 0;
                    for p in parts {
                        let sp = self.shapes[p.0];
                        let block = Tensor::new(
                            sp.0,
                            sp.1,
                            g.data()[offset..offset + sp.0 * sp.1].to_vec(),
                        )?;
                        accum_tensor(&mut grads[p.0], &block);
                        offset += sp.0 * sp.1;
                    }
                }
                Op::Reshape(a, ..) => {
                    let sa = self.shapes[a.0];
                    let back = Tensor::new(sa.0, sa.1, g.data().to_vec())?;
                    accum_tensor(&mut grads[a.0], &back);
                }
                Op::Mse(a, b) => {
                    let (va, vb) = (self.values[a.0].clone(), self.values[b.0].clone());
                    let c = 2.0 * g.item() / va.len() as f64;
                    let mut da = Tensor::zeros(va.rows(), va.cols());
                    for k in 0..va.len() {
                        da.data_mut()[k] = c * (va.data()[k] - vb.data()[k]);
                    }
                    accum_map(&mut grads[b.0], &da, |x| -x);
                    accum_tensor(&mut grads[a.0], &da);
                }
            }
            grads[i] = Some(g);
        }

        self.grads = grads;
        Ok(out)
    }
}

fn map(t: &Tensor, f: impl Fn(f64) -> f64) -> Tensor {
    let mut out = t.clone();
    for v in out.data_mut() {
        *v = f(*v);
    }
    out
}

fn zip(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let mut out = a.clone();
    for (v, y) in out.data_mut().iter_mut().zip(b.data()) {
        *v = f(*v, *y);
    }
    out
}

fn broadcast_row(m: &Tensor, v: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let mut out = m.clone();
    let cols = m.cols();
    for r in 0..m.rows() {
        let row = &mut out.data_mut()[r * cols..(r + 1) * cols];
        for (c, x) in row.iter_mut().enumerate() {
            *x = f(*x, v.data()[c]);
        }
    }
    out
}

fn matmul(a: &Tensor, b: &Tensor) -> Tensor {
    let (m, k) = a.shape();
    let n = b.cols();
    let mut out = Tensor::zeros(m, n);
    for i in 0..m {
        let arow = a.row_slice(i);
        let orow = &mut out.data_mut()[i * n..(i + 1) * n];
        for (p, &av) in arow.iter().enumerate().take(k) {
            if av == 0.0 {
                continue;
            }
            let brow = b.row_slice(p);
            for j in 0..n {
                orow[j] += av * brow[j];
            }
        }
    }
    out
}

fn accum_tensor(slot: &mut Option<Tensor>, g: &Tensor) {
    match slot {
        Some(t) => {
            for (v, x) in t.data_mut().iter_mut().zip(g.data()) {
                *v += x;
            }
        }
        None => *slot = Some(g.clone()),
    }
}

fn accum_map(slot: &mut Option<Tensor>, g: &Tensor, f: impl Fn(f64) -> f64) {
    let mapped = map(g, f);
    accum_tensor(slot, &mapped);
}

fn accum_zip(slot: &mut Option<Tensor>, g: &Tensor, other: &Tensor, f: impl Fn(f64, f64) -> f64) {
    let mapped = zip(g, other, f);
    accum_tensor(slot, &mapped);
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{LstmCell, LEAKY_RELU_SLOPE};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha20Rng;

    fn random_tensor<R: Rng>(rows: usize, cols: usize, rng: &mut R) -> Tensor {
        let data = (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect();
        Tensor::new(rows, cols, data).unwrap()
    }

    /// Central finite differences over every parameter coordinate, compared
    /// against the analytic gradients from `backward`. Returns the fraction
    /// of coordinates whose relative error is within `tol`.
    fn fd_agreement(
        graph: &mut Graph,
        loss: NodeId,
        store: &mut ParamStore,
        inputs: &[(&str, &Tensor)],
        tol: f64,
    ) -> f64 {
        let h = 1e-5;
        graph.forward(inputs, &[store]).unwrap();
        let grads = graph.backward(loss, &Tensor::scalar(1.0), &[store]).unwrap();
        let mut total = 0usize;
        let mut ok = 0usize;
        let ids: Vec<_> = store.iter().map(|(id, _)| id).collect();
        for id in ids {
            for k in 0..store.get(id).len() {
                let orig = store.get(id).data()[k];
                store.get_mut(id).data_mut()[k] = orig + h;
                graph.forward(inputs, &[store]).unwrap();
                let up = graph.value(loss).unwrap().item();
                store.get_mut(id).data_mut()[k] = orig - h;
                graph.forward(inputs, &[store]).unwrap();
                let down = graph.value(loss).unwrap().item();
                store.get_mut(id).data_mut()[k] = orig;
                let fd = (up - down) / (2.0 * h);
                let analytic = grads[0].get(id).map(|t| t.data()[k]).unwrap_or(0.0);
                let rel = (analytic - fd).abs() / analytic.abs().max(fd.abs()).max(1e-6);
                total += 1;
                if rel <= tol {
                    ok += 1;
                }
            }
        }
        ok as f64 / total as f64
    }

    #[test]
    fn leaky_relu_negative_side() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::scalar(-1.0));
        let y = g.leaky_relu(x, LEAKY_RELU_SLOPE);
        g.forward(&[], &[]).unwrap();
        assert_eq!(g.value(y).unwrap().item(), -0.01);
    }

    #[test]
    fn mse_of_identical_vectors_is_zero() {
        let mut g = Graph::new();
        let a = g.constant(Tensor::row(&[1.0, 2.0, 3.0]));
        let b = g.constant(Tensor::row(&[1.0, 2.0, 3.0]));
        let m = g.mse(a, b).unwrap();
        g.forward(&[], &[]).unwrap();
        assert_eq!(g.value(m).unwrap().item(), 0.0);
    }

    #[test]
    fn matmul_identity_preserves_matrix() {
        let mut g = Graph::new();
        let a = g.constant(Tensor::new(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap());
        let eye = g.constant(Tensor::new(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap());
        let y = g.matmul(a, eye).unwrap();
        g.forward(&[], &[]).unwrap();
        assert_eq!(g.value(y).unwrap().data(), &[1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn square_gradient_matches_analytic() {
        // y = x^2 at x = 3: dy/dx = 6.
        let mut store = ParamStore::new();
        let x = store.add("x", Tensor::scalar(3.0));
        let mut g = Graph::new();
        let xp = g.param(0, x, &store);
        let y = g.mul(xp, xp).unwrap();
        g.forward(&[], &[&store]).unwrap();
        let grads = g.backward(y, &Tensor::scalar(1.0), &[&store]).unwrap();
        assert_eq!(grads[0].get(x).unwrap().item(), 6.0);
    }

    #[test]
    fn constant_output_has_no_param_gradient() {
        let mut store = ParamStore::new();
        let x = store.add("x", Tensor::scalar(3.0));
        let mut g = Graph::new();
        let _xp = g.param(0, x, &store);
        let c = g.constant(Tensor::scalar(5.0));
        let y = g.scale(c, 2.0);
        g.forward(&[], &[&store]).unwrap();
        let grads = g.backward(y, &Tensor::scalar(1.0), &[&store]).unwrap();
        assert!(grads[0].get(x).is_none()); // absent gradient means zero
    }

    #[test]
    fn two_layer_network_matches_finite_differences() {
        let mut rng = ChaCha20Rng::seed_from_u64(11);
        let mut store = ParamStore::new();
        let w1 = store.add("w1", Tensor::glorot_uniform(4, 6, &mut rng));
        let b1 = store.add("b1", random_tensor(1, 6, &mut rng));
        let w2 = store.add("w2", Tensor::glorot_uniform(6, 2, &mut rng));
        let b2 = store.add("b2", random_tensor(1, 2, &mut rng));
        let x = random_tensor(3, 4, &mut rng);
        let target = random_tensor(3, 2, &mut rng);

        let mut g = Graph::new();
        let xin = g.input("x", 3, 4);
        let w1n = g.param(0, w1, &store);
        let b1n = g.param(0, b1, &store);
        let w2n = g.param(0, w2, &store);
        let b2n = g.param(0, b2, &store);
        let h_lin = g.matmul(xin, w1n).unwrap();
        let h_aff = g.add_row(h_lin, b1n).unwrap();
        let h = g.leaky_relu(h_aff, LEAKY_RELU_SLOPE);
        let o_lin = g.matmul(h, w2n).unwrap();
        let o = g.add_row(o_lin, b2n).unwrap();
        let tgt = g.constant(target);
        let loss = g.mse(o, tgt).unwrap();

        let frac = fd_agreement(&mut g, loss, &mut store, &[("x", &x)], 1e-4);
        assert_eq!(frac, 1.0, "all coordinates must match finite differences");
    }

    #[test]
    fn recurrent_gradients_match_finite_differences() {
        let mut rng = ChaCha20Rng::seed_from_u64(23);
        let mut store = ParamStore::new();
        let cell = LstmCell::new(&mut store, "lstm", 3, 4, &mut rng);
        // Randomize the biases too so nothing sits at exactly zero.
        let bias_ids: Vec<_> = store
            .iter()
            .filter(|(_, p)| p.name.ends_with(".b"))
            .map(|(id, _)| id)
            .collect();
        for id in bias_ids {
            *store.get_mut(id) = random_tensor(1, 4, &mut rng);
        }
        let seq = random_tensor(3, 3, &mut rng);

        let mut g = Graph::new();
        let sin = g.input("seq", 3, 3);
        let xs: Vec<_> = (0..3).map(|t| g.slice_rows(sin, t, 1).unwrap()).collect();
        let hs = cell.unroll(&mut g, 0, &store, &xs).unwrap();
        let stacked = g.concat_rows(&hs).unwrap();
        let loss = g.sum(stacked);

        let frac = fd_agreement(&mut g, loss, &mut store, &[("seq", &seq)], 1e-4);
        assert_eq!(frac, 1.0);
    }

    #[test]
    fn mixed_op_graph_matches_finite_differences() {
        // Exercises MulRow, SumCols, RepeatRows, ConcatCols, Clamp, Min,
        // Exp, Sigmoid, Tanh, Mean in one graph.
        let mut rng = ChaCha20Rng::seed_from_u64(37);
        let mut store = ParamStore::new();
        let w = store.add("w", Tensor::glorot_uniform(3, 4, &mut rng));
        let v = store.add("v", random_tensor(1, 4, &mut rng));
        let x = random_tensor(2, 3, &mut rng);

        let mut g = Graph::new();
        let xin = g.input("x", 2, 3);
        let wn = g.param(0, w, &store);
        let vn = g.param(0, v, &store);
        let lin = g.matmul(xin, wn).unwrap();
        let scaled = g.mul_row(lin, vn).unwrap();
        let t = g.tanh(scaled);
        let s = g.sigmoid(lin);
        let both = g.concat_cols(t, s).unwrap();
        let rep = g.repeat_rows(both, 2);
        let e = g.exp(rep);
        let cl = g.clamp(e, 0.5, 2.0);
        let m = g.min(e, cl).unwrap();
        let rows = g.sum_cols(m);
        let loss = g.mean(rows);

        let frac = fd_agreement(&mut g, loss, &mut store, &[("x", &x)], 1e-4);
        assert!(frac >= 0.99, "agreement {}", frac);
    }

    #[test]
    fn backward_before_forward_rejected() {
        let mut store = ParamStore::new();
        let x = store.add("x", Tensor::scalar(1.0));
        let mut g = Graph::new();
        let xp = g.param(0, x, &store);
        let y = g.scale(xp, 2.0);
        assert!(matches!(
            g.backward(y, &Tensor::scalar(1.0), &[&store]),
            Err(DiffError::BackwardBeforeForward)
        ));
    }

    #[test]
    fn shape_mismatch_names_offending_op() {
        let mut g = Graph::new();
        let a = g.constant(Tensor::zeros(2, 3));
        let b = g.constant(Tensor::zeros(2, 3));
        let err = g.matmul(a, b).unwrap_err();
        assert!(err.to_string().contains("MatMul"));
    }

    #[test]
    fn non_finite_intermediate_rejected() {
        let mut g = Graph::new();
        let a = g.constant(Tensor::scalar(1e308));
        let b = g.exp(a);
        let _ = b;
        let err = g.forward(&[], &[]).unwrap_err();
        assert!(err.to_string().contains("Exp"));
    }

    #[test]
    fn forward_replay_is_idempotent() {
        let mut rng = ChaCha20Rng::seed_from_u64(5);
        let mut store = ParamStore::new();
        let w = store.add("w", Tensor::glorot_uniform(3, 3, &mut rng));
        let x = random_tensor(2, 3, &mut rng);
        let mut g = Graph::new();
        let xin = g.input("x", 2, 3);
        let wn = g.param(0, w, &store);
        let lin = g.matmul(xin, wn).unwrap();
        let y = g.tanh(lin);
        g.forward(&[("x", &x)], &[&store]).unwrap();
        let first = g.value(y).unwrap().clone();
        g.forward(&[("x", &x)], &[&store]).unwrap();
        assert_eq!(&first, g.value(y).unwrap());
    }

    #[test]
    fn missing_input_rejected() {
        let mut g = Graph::new();
        let _ = g.input("x", 1, 1);
        assert!(matches!(g.forward(&[], &[]), Err(DiffError::MissingInput(_))));
    }

    #[test]
    fn input_gradient_available_after_backward() {
        // f(x) = sum(3 * x): df/dx = 3 everywhere.
        let mut g = Graph::new();
        let xin = g.input("x", 1, 3);
        let s = g.scale(xin, 3.0);
        let loss = g.sum(s);
        let x = Tensor::row(&[0.5, -1.0, 2.0]);
        g.forward(&[("x", &x)], &[]).unwrap();
        g.backward(loss, &Tensor::scalar(1.0), &[]).unwrap();
        assert_eq!(g.node_grad(xin).unwrap().data(), &[3.0, 3.0, 3.0]);
    }
}
