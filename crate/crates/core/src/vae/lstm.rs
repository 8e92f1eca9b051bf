//! Single-layer LSTM with explicit backpropagation through time.
//!
//! Pre-activations are stacked as `[input, forget, output, cell]`, each block
//! `hidden` rows tall:
//!
//! ```text
//! a = W_x x_t + W_h h_{t-1} + b
//! c_t = σ(a_f) ⊙ c_{t-1} + σ(a_i) ⊙ tanh(a_g)
//! h_t = σ(a_o) ⊙ tanh(c_t)
//! ```

use super::Tensor;

#[inline]
fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

#[derive(Debug, Clone, PartialEq)]
pub struct LstmParams {
    pub input_dim: usize,
    pub hidden: usize,
    /// `4h x input_dim`
    pub w_x: Tensor,
    /// `4h x h`
    pub w_h: Tensor,
    /// `4h x 1`
    pub b: Tensor,
}

impl LstmParams {
    pub fn zeros(input_dim: usize, hidden: usize) -> Self {
        Self {
            input_dim,
            hidden,
            w_x: Tensor::zeros(4 * hidden, input_dim),
            w_h: Tensor::zeros(4 * hidden, hidden),
            b: Tensor::zeros(4 * hidden, 1),
        }
    }

    /// Runs the recurrence over `steps` steps of `inputs` (row-major,
    /// `input_dim` values per step) from the given initial state.
    pub fn forward(&self, inputs: &[f64], steps: usize, h0: &[f64], c0: &[f64]) -> LstmTrace {
        let h = self.hidden;
        let nin = self.input_dim;
        debug_assert_eq!(inputs.len(), steps * nin);
        let mut hs = Vec::with_capacity((steps + 1) * h);
        let mut cs = Vec::with_capacity((steps + 1) * h);
        hs.extend_from_slice(h0);
        cs.extend_from_slice(c0);
        let mut gates = vec![0.0; steps * 4 * h];
        let mut a = vec![0.0; 4 * h];
        for t in 0..steps {
            let x = &inputs[t * nin..(t + 1) * nin];
            let h_prev = &hs[t * h..(t + 1) * h];
            for r in 0..4 * h {
                let mut acc = self.b.data[r];
                let wx = &self.w_x.data[r * nin..(r + 1) * nin];
                for k in 0..nin {
                    acc += wx[k] * x[k];
                }
                let wh = &self.w_h.data[r * h..(r + 1) * h];
                acc += wh.iter().zip(h_prev).map(|(w, v)| w * v).sum::<f64>();
                a[r] = acc;
            }
            let g = &mut gates[t * 4 * h..(t + 1) * 4 * h];
            for j in 0..3 * h {
                g[j] = sigmoid(a[j]);
            }
            for j in 3 * h..4 * h {
                g[j] = a[j].tanh();
            }
            for j in 0..h {
                let c_prev = cs[t * h + j];
                let c = g[h + j] * c_prev + g[j] * g[3 * h + j];
                cs.push(c);
            }
            for j in 0..h {
                let c = cs[(t + 1) * h + j];
                hs.push(g[2 * h + j] * c.tanh());
            }
        }
        LstmTrace {
            hidden: h,
            steps,
            hs,
            cs,
            gates,
        }
    }

    /// Accumulates parameter gradients into `grads` and returns the gradient
    /// with respect to the initial `(h0, c0)`.
    ///
    /// `dh_steps` is `steps x h` (loss gradient reaching each emitted hidden
    /// state, may be empty); `dh_last`/`dc_last` are extra gradients on the
    /// final state.
    pub fn backward(
        &self,
        trace: &LstmTrace,
        inputs: &[f64],
        dh_steps: &[f64],
        dh_last: &[f64],
        dc_last: &[f64],
        grads: &mut LstmParams,
    ) -> (Vec<f64>, Vec<f64>) {
        let h = self.hidden;
        let nin = self.input_dim;
        let steps = trace.steps;
        let mut dh_next = dh_last.to_vec();
        let mut dc_next = dc_last.to_vec();
        let mut da = vec![0.0; 4 * h];
        let mut dh_prev = vec![0.0; h];
        for t in (0..steps).rev() {
            let g = &trace.gates[t * 4 * h..(t + 1) * 4 * h];
            let c_prev = &trace.cs[t * h..(t + 1) * h];
            let c = &trace.cs[(t + 1) * h..(t + 2) * h];
            for j in 0..h {
                let dh = dh_next[j] + if dh_steps.is_empty() { 0.0 } else { dh_steps[t * h + j] };
                let (i, f, o, gg) = (g[j], g[h + j], g[2 * h + j], g[3 * h + j]);
                let tc = c[j].tanh();
                let dc = dc_next[j] + dh * o * (1.0 - tc * tc);
                da[j] = dc * gg * i * (1.0 - i);
                da[h + j] = dc * c_prev[j] * f * (1.0 - f);
                da[2 * h + j] = dh * tc * o * (1.0 - o);
                da[3 * h + j] = dc * i * (1.0 - gg * gg);
                dc_next[j] = dc * f;
            }
            let x = &inputs[t * nin..(t + 1) * nin];
            let h_prev = &trace.hs[t * h..(t + 1) * h];
            dh_prev.iter_mut().for_each(|v| *v = 0.0);
            for r in 0..4 * h {
                let d = da[r];
                grads.b.data[r] += d;
                let gx = &mut grads.w_x.data[r * nin..(r + 1) * nin];
                for k in 0..nin {
                    gx[k] += d * x[k];
                }
                let gh = &mut grads.w_h.data[r * h..(r + 1) * h];
                let wh = &self.w_h.data[r * h..(r + 1) * h];
                for k in 0..h {
                    gh[k] += d * h_prev[k];
                    dh_prev[k] += wh[k] * d;
                }
            }
            dh_next.copy_from_slice(&dh_prev);
        }
        (dh_next, dc_next)
    }
}

/// Cached forward pass.
#[derive(Debug, Clone)]
pub struct LstmTrace {
    hidden: usize,
    pub steps: usize,
    /// `(steps + 1) x h`, row 0 is the initial state
    pub hs: Vec<f64>,
    pub cs: Vec<f64>,
    /// post-activation gates, `steps x 4h`
    gates: Vec<f64>,
}

impl LstmTrace {
    /// Hidden state after step `t` (0-based).
    pub fn h_after(&self, t: usize) -> &[f64] {
        &self.hs[(t + 1) * self.hidden..(t + 2) * self.hidden]
    }

    pub fn final_h(&self) -> &[f64] {
        &self.hs[self.steps * self.hidden..]
    }
}
