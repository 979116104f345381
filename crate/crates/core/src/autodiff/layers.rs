//! Dense and gated recurrent layers built from tape primitives.

use rand::Rng;

use super::{AutodiffError, ParamId, ParameterSet, Tape, Var};

/// Fully connected layer `y = x W + b`.
#[derive(Clone, Debug)]
pub struct Dense {
    pub weight: ParamId,
    pub bias: ParamId,
    pub inputs: usize,
    pub outputs: usize,
}

impl Dense {
    pub fn new<R: Rng + ?Sized>(
        params: &mut ParameterSet,
        prefix: &str,
        inputs: usize,
        outputs: usize,
        rng: &mut R,
    ) -> Result<Self, AutodiffError> {
        let weight = params.add_uniform(format!("{prefix}.w"), inputs, outputs, rng)?;
        let bias = params.add_zeros(format!("{prefix}.b"), &[outputs])?;
        Ok(Self { weight, bias, inputs, outputs })
    }

    pub fn forward(&self, tape: &mut Tape, params: &ParameterSet, x: Var) -> Result<Var, AutodiffError> {
        let w = tape.param(params, self.weight)?;
        let b = tape.param(params, self.bias)?;
        let xw = tape.matmul(x, w)?;
        tape.add_row(xw, b)
    }
}

/// Gated recurrent unit.
///
/// Gate blocks are stored side by side as `[update | reset | candidate]`:
///
/// ```text
/// z  = sigmoid(x Wz + h Uz + bz)
/// r  = sigmoid(x Wr + h Ur + br)
/// h~ = tanh(x Wn + bn + r * (h Un))
/// h' = (1 - z) * h + z * h~
/// ```
///
/// `z` weights the candidate, so a zero-initialised cell halves its state.
#[derive(Clone, Debug)]
pub struct GruCell {
    pub w_input: ParamId,
    pub w_hidden: ParamId,
    pub bias: ParamId,
    pub inputs: usize,
    pub hidden: usize,
}

impl GruCell {
    pub fn new<R: Rng + ?Sized>(
        params: &mut ParameterSet,
        prefix: &str,
        inputs: usize,
        hidden: usize,
        rng: &mut R,
    ) -> Result<Self, AutodiffError> {
        let w_input = params.add_uniform(format!("{prefix}.w_input"), inputs, 3 * hidden, rng)?;
        let w_hidden = params.add_uniform(format!("{prefix}.w_hidden"), hidden, 3 * hidden, rng)?;
        let bias = params.add_zeros(format!("{prefix}.bias"), &[3 * hidden])?;
        Ok(Self { w_input, w_hidden, bias, inputs, hidden })
    }

    pub fn forward(&self, tape: &mut Tape, params: &ParameterSet, x: Var, h_prev: Var) -> Result<Var, AutodiffError> {
        let hsz = self.hidden;
        let (xs, hs) = (tape.value(x).shape().to_vec(), tape.value(h_prev).shape().to_vec());
        if xs.len() != 2 || xs[1] != self.inputs || hs != [xs[0], hsz] {
            return Err(AutodiffError::Shape {
                op: "gru_cell",
                detail: format!("input {:?}, state {:?}, cell {}->{}", xs, hs, self.inputs, hsz),
            });
        }
        let wi = tape.param(params, self.w_input)?;
        let wh = tape.param(params, self.w_hidden)?;
        let b = tape.param(params, self.bias)?;

        let xw = tape.matmul(x, wi)?;
        let xw = tape.add_row(xw, b)?;
        let hu = tape.matmul(h_prev, wh)?;

        tape.gru_gates(xw, hu, h_prev)
    }
}

/// Stack of GRU cells; layer `k > 0` reads the state of layer `k - 1`.
#[derive(Clone, Debug)]
pub struct GruStack {
    pub cells: Vec<GruCell>,
}

impl GruStack {
    pub fn new<R: Rng + ?Sized>(
        params: &mut ParameterSet,
        prefix: &str,
        inputs: usize,
        hidden: usize,
        layers: usize,
        rng: &mut R,
    ) -> Result<Self, AutodiffError> {
        let mut cells = Vec::with_capacity(layers);
        for k in 0..layers {
            let fan_in = if k == 0 { inputs } else { hidden };
            cells.push(GruCell::new(params, &format!("{prefix}.layer{k}.gru"), fan_in, hidden, rng)?);
        }
        Ok(Self { cells })
    }

    pub fn hidden(&self) -> usize {
        self.cells[0].hidden
    }

    /// Zero states, one per layer.
    pub fn initial_state(&self, tape: &mut Tape, batch: usize) -> Result<Vec<Var>, AutodiffError> {
        self.cells.iter().map(|c| tape.constant(super::Tensor::zeros(&[batch, c.hidden]))).collect()
    }

    /// Advances every layer by one step, updating `state` in place, and
    /// returns the top layer's new state.
    pub fn step(
        &self,
        tape: &mut Tape,
        params: &ParameterSet,
        x: Var,
        state: &mut [Var],
    ) -> Result<Var, AutodiffError> {
        let mut input = x;
        for (cell, h) in self.cells.iter().zip(state.iter_mut()) {
            *h = cell.forward(tape, params, input, *h)?;
            input = *h;
        }
        Ok(input)
    }
}
