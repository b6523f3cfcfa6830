//! Graph convolution layers recorded on the autodiff tape.

use std::sync::Arc;

use dormant_autodiff::{AutodiffError, CsrMatrix, Tape, Var};

use crate::graph::{normalized_adjacency, CoAppearanceGraph, SparseOperator};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Activation {
    Identity,
    Relu,
    LeakyRelu(f64),
    Sigmoid,
}

impl Activation {
    pub fn apply(self, tape: &mut Tape, x: Var) -> Result<Var, AutodiffError> {
        match self {
            Activation::Identity => Ok(x),
            Activation::Relu => tape.relu(x),
            Activation::LeakyRelu(a) => tape.leaky_relu(x, a),
            Activation::Sigmoid => tape.sigmoid(x),
        }
    }
}

/// Graph operators shared by every GNN layer.
#[derive(Debug, Clone)]
pub struct GraphContext {
    pub n: usize,
    /// Normalized adjacency with self-loops (GCN).
    pub with_loops: SparseOperator,
    /// Normalized adjacency without self-loops (TAGCN powers).
    pub without_loops: SparseOperator,
    /// Attention support: edges plus the diagonal, unit values.
    pub attention: Arc<CsrMatrix>,
    pub edge_src: Arc<Vec<usize>>,
    pub edge_dst: Arc<Vec<usize>>,
}

impl GraphContext {
    pub fn new(graph: &CoAppearanceGraph) -> Self {
        let n = graph.node_count();
        let a = graph.adjacency();
        let mut triplets = Vec::with_capacity(a.nnz() + n);
        for i in 0..n {
            triplets.push((i, i, 1.0));
            triplets.extend(a.row(i).map(|(j, _)| (i, j, 1.0)));
        }
        let attention = CsrMatrix::from_triplets(n, n, &triplets).expect("indices within node range");
        let edge_src = attention.row_of_entries();
        let edge_dst = attention.indices().to_vec();
        Self {
            n,
            with_loops: normalized_adjacency(graph, true),
            without_loops: normalized_adjacency(graph, false),
            attention: Arc::new(attention),
            edge_src: Arc::new(edge_src),
            edge_dst: Arc::new(edge_dst),
        }
    }
}

/// `activation(Op · H · W + b)`.
pub fn gcn_layer(
    tape: &mut Tape,
    h: Var,
    op: &SparseOperator,
    w: Var,
    bias: Option<Var>,
    activation: Activation,
) -> Result<Var, AutodiffError> {
    let hw = tape.matmul(h, w)?;
    let mut z = tape.spmm(op.matrix(), hw)?;
    if let Some(b) = bias {
        z = tape.add_bias(z, b)?;
    }
    activation.apply(tape, z)
}

/// `activation(Σ_{k=0}^{K} Op^k · H · W_k + b)` with `K = weights.len() - 1`,
/// evaluated in nested form `H W_0 + Op (H W_1 + Op (H W_2 + …))`.
pub fn tagcn_layer(
    tape: &mut Tape,
    h: Var,
    op: &SparseOperator,
    weights: &[Var],
    bias: Option<Var>,
    activation: Activation,
) -> Result<Var, AutodiffError> {
    let Some((&last, rest)) = weights.split_last() else {
        return Err(AutodiffError::ShapeMismatch {
            op: "tagcn_layer: missing W_0",
            left: (0, 0),
            right: (0, 0),
        });
    };
    let mut acc = tape.matmul(h, last)?;
    for &w in rest.iter().rev() {
        let propagated = tape.spmm(op.matrix(), acc)?;
        let hw = tape.matmul(h, w)?;
        acc = tape.add(hw, propagated)?;
    }
    if let Some(b) = bias {
        acc = tape.add_bias(acc, b)?;
    }
    activation.apply(tape, acc)
}

/// Parameters of one attention head: projection `W` and the two halves of the
/// attention vector, applied to the receiving and the sending node.
#[derive(Debug, Clone, Copy)]
pub struct GatHead {
    pub w: Var,
    pub a_src: Var,
    pub a_dst: Var,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HeadCombine {
    Concat,
    Mean,
}

/// Multi-head graph attention over edges plus self-loops. Returns the layer
/// output and each head's per-entry attention weights (aligned with
/// `ctx.attention`).
pub fn gat_layer(
    tape: &mut Tape,
    h: Var,
    ctx: &GraphContext,
    heads: &[GatHead],
    combine: HeadCombine,
    bias: Option<Var>,
    activation: Activation,
) -> Result<(Var, Vec<Var>), AutodiffError> {
    if heads.is_empty() {
        return Err(AutodiffError::ShapeMismatch {
            op: "gat_layer: no heads",
            left: (0, 0),
            right: (0, 0),
        });
    }
    let mut outputs = Vec::with_capacity(heads.len());
    let mut alphas = Vec::with_capacity(heads.len());
    for head in heads {
        let z = tape.matmul(h, head.w)?;
        let s_src = tape.matmul(z, head.a_src)?;
        let s_dst = tape.matmul(z, head.a_dst)?;
        let e_src = tape.gather_rows(s_src, &ctx.edge_src)?;
        let e_dst = tape.gather_rows(s_dst, &ctx.edge_dst)?;
        let e = tape.add(e_src, e_dst)?;
        let e = tape.leaky_relu(e, 0.2)?;
        let alpha = tape.edge_softmax(e, &ctx.attention)?;
        outputs.push(tape.edge_aggregate(&ctx.attention, alpha, z)?);
        alphas.push(alpha);
    }
    let mut out = match combine {
        HeadCombine::Concat => tape.concat(&outputs)?,
        HeadCombine::Mean => {
            let mut acc = outputs[0];
            for &o in &outputs[1..] {
                acc = tape.add(acc, o)?;
            }
            tape.scale(acc, 1.0 / outputs.len() as f64)?
        }
    };
    if let Some(b) = bias {
        out = tape.add_bias(out, b)?;
    }
    Ok((activation.apply(tape, out)?, alphas))
}
