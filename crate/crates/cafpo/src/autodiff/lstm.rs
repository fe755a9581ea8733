use rand::Rng;

use super::graph::{Graph, NodeId};
use super::tensor::{DiffError, ParamId, ParamStore, Tensor};

/// Gated recurrent (LSTM-style) cell: input/forget/output/candidate gates,
/// each with an input weight matrix (`input_dim x hidden`), a hidden weight
/// matrix (`hidden x hidden`), and a bias row. Weights are Glorot-uniform,
/// biases zero.
#[derive(Clone, Debug)]
pub struct LstmCell {
    pub input_dim: usize,
    pub hidden: usize,
    w_xi: ParamId,
    w_hi: ParamId,
    b_i: ParamId,
    w_xf: ParamId,
    w_hf: ParamId,
    b_f: ParamId,
    w_xo: ParamId,
    w_ho: ParamId,
    b_o: ParamId,
    w_xg: ParamId,
    w_hg: ParamId,
    b_g: ParamId,
}

impl LstmCell {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        prefix: &str,
        input_dim: usize,
        hidden: usize,
        rng: &mut R,
    ) -> Self {
        let wx = |n: &str, store: &mut ParamStore, rng: &mut R| {
            store.add(format!("{prefix}.{n}.wx"), Tensor::glorot_uniform(input_dim, hidden, rng))
        };
        let wh = |n: &str, store: &mut ParamStore, rng: &mut R| {
            store.add(format!("{prefix}.{n}.wh"), Tensor::glorot_uniform(hidden, hidden, rng))
        };
        let b = |n: &str, store: &mut ParamStore| {
            store.add(format!("{prefix}.{n}.b"), Tensor::zeros(1, hidden))
        };
        // Parameter creation order is part of the manifest; keep it gate-major.
        let w_xi = wx("input", store, rng);
        let w_hi = wh("input", store, rng);
        let b_i = b("input", store);
        let w_xf = wx("forget", store, rng);
        let w_hf = wh("forget", store, rng);
        let b_f = b("forget", store);
        let w_xo = wx("output", store, rng);
        let w_ho = wh("output", store, rng);
        let b_o = b("output", store);
        let w_xg = wx("candidate", store, rng);
        let w_hg = wh("candidate", store, rng);
        let b_g = b("candidate", store);
        LstmCell {
            input_dim,
            hidden,
            w_xi,
            w_hi,
            b_i,
            w_xf,
            w_hf,
            b_f,
            w_xo,
            w_ho,
            b_o,
            w_xg,
            w_hg,
            b_g,
        }
    }

    /// Unrolls the recurrence over `xs` (one `batch x input_dim` node per
    /// step) and returns the hidden-state node for every step.
    pub fn unroll(
        &self,
        g: &mut Graph,
        slot: usize,
        store: &ParamStore,
        xs: &[NodeId],
    ) -> Result<Vec<NodeId>, DiffError> {
        if xs.is_empty() {
            return Err(DiffError::EmptySequence);
        }
        let batch = g.shape(xs[0]).0;
        let mut h = g.constant(Tensor::zeros(batch, self.hidden));
        let mut c = g.constant(Tensor::zeros(batch, self.hidden));

        let w_xi = g.param(slot, self.w_xi, store);
        let w_hi = g.param(slot, self.w_hi, store);
        let b_i = g.param(slot, self.b_i, store);
        let w_xf = g.param(slot, self.w_xf, store);
        let w_hf = g.param(slot, self.w_hf, store);
        let b_f = g.param(slot, self.b_f, store);
        let w_xo = g.param(slot, self.w_xo, store);
        let w_ho = g.param(slot, self.w_ho, store);
        let b_o = g.param(slot, self.b_o, store);
        let w_xg = g.param(slot, self.w_xg, store);
        let w_hg = g.param(slot, self.w_hg, store);
        let b_g = g.param(slot, self.b_g, store);

        let mut hidden_seq = Vec::with_capacity(xs.len());
        for &x in xs {
            let gate = |g: &mut Graph, wx, wh, b, h| -> Result<NodeId, DiffError> {
                let xa = g.matmul(x, wx)?;
                let ha = g.matmul(h, wh)?;
                let s = g.add(xa, ha)?;
                g.add_row(s, b)
            };
            let i_pre = gate(g, w_xi, w_hi, b_i, h)?;
            let f_pre = gate(g, w_xf, w_hf, b_f, h)?;
            let o_pre = gate(g, w_xo, w_ho, b_o, h)?;
            let g_pre = gate(g, w_xg, w_hg, b_g, h)?;
            let i = g.sigmoid(i_pre);
            let f = g.sigmoid(f_pre);
            let o = g.sigmoid(o_pre);
            let cand = g.tanh(g_pre);
            let fc = g.mul(f, c)?;
            let ig = g.mul(i, cand)?;
            c = g.add(fc, ig)?;
            let ct = g.tanh(c);
            h = g.mul(o, ct)?;
            hidden_seq.push(h);
        }
        Ok(hidden_seq)
    }
}

/// Runs a cell over a `T x input_dim` sequence and returns the
/// `T x hidden` hidden-state sequence. Differentiable end to end when the
/// same construction is embedded in a larger graph; this convenience wrapper
/// builds a fresh graph and evaluates it.
pub fn recurrent_forward(
    cell: &LstmCell,
    store: &ParamStore,
    sequence: &Tensor,
) -> Result<Tensor, DiffError> {
    if sequence.rows() == 0 {
        return Err(DiffError::EmptySequence);
    }
    let mut g = Graph::new();
    let seq = g.input("sequence", sequence.rows(), sequence.cols());
    let mut xs = Vec::with_capacity(sequence.rows());
    for t in 0..sequence.rows() {
        xs.push(g.slice_rows(seq, t, 1)?);
    }
    let hs = cell.unroll(&mut g, 0, store, &xs)?;
    let stacked = g.concat_rows(&hs)?;
    g.forward(&[("sequence", sequence)], &[store])?;
    Ok(g.value(stacked)?.clone())
}
