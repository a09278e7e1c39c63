use super::{shape_err, Graph, Result, Var};

/// Graph handles for one LSTM's packed weights.
///
/// `weight` is `[4H x (H + D)]` applied to `[h_prev; x]`, `bias` is `[4H]`.
/// Gate blocks are stacked in the order forget, input, output, candidate.
#[derive(Debug, Clone, Copy)]
pub struct LstmVars {
    pub weight: Var,
    pub bias: Var,
}

#[derive(Debug, Clone, Copy)]
pub struct LstmState {
    pub h: Var,
    pub c: Var,
}

/// One LSTM step:
///
/// ```text
/// [f; i; o; g] = [σ; σ; σ; tanh](W · [h_prev; x] + b)
/// c = f ⊙ c_prev + i ⊙ g
/// h = o ⊙ tanh(c)
/// ```
pub fn lstm_cell(
    graph: &mut Graph,
    x: Var,
    prev: LstmState,
    weights: LstmVars,
) -> Result<LstmState> {
    let hidden = graph.value(prev.h).len();
    let input = graph.value(x).len();
    let w_shape = graph.value(weights.weight).shape().to_vec();
    if w_shape != [4 * hidden, hidden + input] {
        return shape_err(
            "lstm_cell",
            format!(
                "weight {w_shape:?} for hidden {hidden} and input {input}, expected [{}, {}]",
                4 * hidden,
                hidden + input
            ),
        );
    }
    if graph.value(weights.bias).shape() != [4 * hidden] {
        return shape_err(
            "lstm_cell",
            format!("bias {:?}", graph.value(weights.bias).shape()),
        );
    }
    if graph.value(prev.c).len() != hidden {
        return shape_err("lstm_cell", "cell state and hidden state differ in size");
    }

    let joined = graph.concat(&[prev.h, x])?;
    let pre = graph.matvec(weights.weight, joined)?;
    let pre = graph.add(pre, weights.bias)?;

    let f = graph.slice(pre, 0, hidden)?;
    let i = graph.slice(pre, hidden, hidden)?;
    let o = graph.slice(pre, 2 * hidden, hidden)?;
    let g = graph.slice(pre, 3 * hidden, hidden)?;
    let f = graph.sigmoid(f)?;
    let i = graph.sigmoid(i)?;
    let o = graph.sigmoid(o)?;
    let g = graph.tanh(g)?;

    let keep = graph.mul(f, prev.c)?;
    let write = graph.mul(i, g)?;
    let c = graph.add(keep, write)?;
    let squashed = graph.tanh(c)?;
    let h = graph.mul(o, squashed)?;
    Ok(LstmState { h, c })
}
