//! Categorical policies over token slots.
//!
//! Parameters live in one flat vector so updates, checkpoints, and finite
//! difference checks treat both policy modes uniformly.
//!
//! The recurrent mode runs an Elman cell over the slots:
//!
//! ```text
//! x_0 = start            x_t = embed_{t-1}[a_{t-1}]
//! h_t = tanh(Wx·x_t + Wh·h_{t-1} + b)
//! z_t = U_t·h_t + c_t    a_t ~ softmax(z_t)
//! ```

use rand::Rng;
use serde::{Deserialize, Serialize};

/// Default hidden width of the recurrent cell.
pub const DEFAULT_HIDDEN_DIM: usize = 64;
/// Default embedding width of the recurrent cell.
pub const DEFAULT_EMBED_DIM: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum PolicyMode {
    /// One free logit vector per slot.
    Independent,
    /// Slot logits conditioned on the tokens already drawn.
    Recurrent { embed_dim: usize, hidden_dim: usize },
}

impl Default for PolicyMode {
    fn default() -> Self {
        PolicyMode::Independent
    }
}

impl PolicyMode {
    pub fn recurrent() -> Self {
        PolicyMode::Recurrent {
            embed_dim: DEFAULT_EMBED_DIM,
            hidden_dim: DEFAULT_HIDDEN_DIM,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct Layout {
    // Independent: offsets of each slot's logits.
    logits: Vec<usize>,
    // Recurrent pieces.
    start: usize,
    embed: Vec<usize>,
    wx: usize,
    wh: usize,
    bias: usize,
    head_w: Vec<usize>,
    head_b: Vec<usize>,
    len: usize,
}

impl Layout {
    fn new(mode: PolicyMode, arities: &[usize]) -> Self {
        let mut off = 0;
        let mut take = |n: usize| {
            let o = off;
            off += n;
            o
        };
        match mode {
            PolicyMode::Independent => {
                let logits = arities.iter().map(|&a| take(a)).collect();
                Layout {
                    logits,
                    start: 0,
                    embed: vec![],
                    wx: 0,
                    wh: 0,
                    bias: 0,
                    head_w: vec![],
                    head_b: vec![],
                    len: off,
                }
            }
            PolicyMode::Recurrent {
                embed_dim: e,
                hidden_dim: h,
            } => {
                let start = take(e);
                let n = arities.len();
                let embed = arities[..n.saturating_sub(1)].iter().map(|&a| take(a * e)).collect();
                let wx = take(h * e);
                let wh = take(h * h);
                let bias = take(h);
                let head_w = arities.iter().map(|&a| take(a * h)).collect();
                let head_b = arities.iter().map(|&a| take(a)).collect();
                Layout {
                    logits: vec![],
                    start,
                    embed,
                    wx,
                    wh,
                    bias,
                    head_w,
                    head_b,
                    len: off,
                }
            }
        }
    }
}

/// Policy parameters: mode, slot layout, and the flat parameter vector.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PolicyParams {
    pub mode: PolicyMode,
    pub arities: Vec<usize>,
    pub theta: Vec<f64>,
    #[serde(skip)]
    layout: Option<Box<Layout>>,
}

impl PartialEq for PolicyParams {
    fn eq(&self, other: &Self) -> bool {
        self.mode == other.mode && self.arities == other.arities && self.theta == other.theta
    }
}

/// Forward pass record along one token sequence.
#[derive(Debug, Clone)]
pub struct Trace {
    pub tokens: Vec<usize>,
    /// Log-softmax of each slot's logits.
    pub log_probs: Vec<Vec<f64>>,
    inputs: Vec<Vec<f64>>,
    hidden: Vec<Vec<f64>>,
}

impl Trace {
    /// Log probability of the traced tokens.
    pub fn log_prob(&self) -> f64 {
        self.tokens
            .iter()
            .zip(&self.log_probs)
            .map(|(&t, lp)| lp[t])
            .sum()
    }

    /// Sum of the per-slot conditional entropies along the trace.
    pub fn entropy(&self) -> f64 {
        self.log_probs.iter().map(|lp| slot_entropy(lp)).sum()
    }
}

fn log_softmax(z: &[f64]) -> Vec<f64> {
    let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + z.iter().map(|&v| (v - max).exp()).sum::<f64>().ln();
    z.iter().map(|&v| v - lse).collect()
}

fn slot_entropy(log_probs: &[f64]) -> f64 {
    -log_probs.iter().map(|&lp| lp.exp() * lp).sum::<f64>()
}

/// Draws an index from a categorical given its log-probabilities.
fn draw<R: Rng + ?Sized>(log_probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (i, lp) in log_probs.iter().enumerate() {
        acc += lp.exp();
        if u < acc {
            return i;
        }
    }
    log_probs.len() - 1
}

impl PolicyParams {
    /// Uniform independent policy (all logits zero).
    pub fn independent(arities: Vec<usize>) -> Self {
        let layout = Layout::new(PolicyMode::Independent, &arities);
        PolicyParams {
            mode: PolicyMode::Independent,
            theta: vec![0.0; layout.len],
            arities,
            layout: Some(Box::new(layout)),
        }
    }

    /// Recurrent policy with weights drawn uniformly from ±0.1 and zero biases.
    pub fn recurrent<R: Rng + ?Sized>(
        arities: Vec<usize>,
        embed_dim: usize,
        hidden_dim: usize,
        rng: &mut R,
    ) -> Self {
        let mode = PolicyMode::Recurrent {
            embed_dim,
            hidden_dim,
        };
        let layout = Layout::new(mode, &arities);
        let mut theta: Vec<f64> = (0..layout.len).map(|_| rng.gen_range(-0.1..0.1)).collect();
        for (&off, &a) in layout.head_b.iter().zip(&arities) {
            theta[off..off + a].iter_mut().for_each(|v| *v = 0.0);
        }
        theta[layout.bias..layout.bias + hidden_dim]
            .iter_mut()
            .for_each(|v| *v = 0.0);
        PolicyParams {
            mode,
            arities,
            theta,
            layout: Some(Box::new(layout)),
        }
    }

    pub fn new<R: Rng + ?Sized>(mode: PolicyMode, arities: Vec<usize>, rng: &mut R) -> Self {
        match mode {
            PolicyMode::Independent => Self::independent(arities),
            PolicyMode::Recurrent {
                embed_dim,
                hidden_dim,
            } => Self::recurrent(arities, embed_dim, hidden_dim, rng),
        }
    }

    /// Checks that `theta` matches the layout and is finite.
    pub fn check(&self) -> Result<(), String> {
        let layout = Layout::new(self.mode, &self.arities);
        if self.theta.len() != layout.len {
            return Err(format!(
                "policy has {} parameters, layout needs {}",
                self.theta.len(),
                layout.len
            ));
        }
        if self.arities.iter().any(|&a| a == 0) {
            return Err("slot arity 0".into());
        }
        if !self.theta.iter().all(|v| v.is_finite()) {
            return Err("non-finite policy parameter".into());
        }
        Ok(())
    }

    fn layout(&self) -> std::borrow::Cow<'_, Layout> {
        match &self.layout {
            Some(l) => std::borrow::Cow::Borrowed(l),
            None => std::borrow::Cow::Owned(Layout::new(self.mode, &self.arities)),
        }
    }

    /// Restores the cached layout after deserialization.
    pub fn reindex(&mut self) {
        self.layout = Some(Box::new(Layout::new(self.mode, &self.arities)));
    }

    pub fn num_slots(&self) -> usize {
        self.arities.len()
    }

    /// Runs the policy slot by slot; `choose` picks each token from the
    /// slot's log-probabilities.
    pub fn forward(&self, mut choose: impl FnMut(usize, &[f64]) -> usize) -> Trace {
        let layout = self.layout();
        let n = self.arities.len();
        let mut trace = Trace {
            tokens: Vec::with_capacity(n),
            log_probs: Vec::with_capacity(n),
            inputs: Vec::new(),
            hidden: Vec::new(),
        };
        match self.mode {
            PolicyMode::Independent => {
                for (t, (&off, &a)) in layout.logits.iter().zip(&self.arities).enumerate() {
                    let lp = log_softmax(&self.theta[off..off + a]);
                    let tok = choose(t, &lp);
                    trace.tokens.push(tok);
                    trace.log_probs.push(lp);
                }
            }
            PolicyMode::Recurrent {
                embed_dim: e,
                hidden_dim: h,
            } => {
                let th = &self.theta;
                let mut prev = vec![0.0; h];
                for t in 0..n {
                    let x: Vec<f64> = if t == 0 {
                        th[layout.start..layout.start + e].to_vec()
                    } else {
                        let base = layout.embed[t - 1] + trace.tokens[t - 1] * e;
                        th[base..base + e].to_vec()
                    };
                    let hid: Vec<f64> = (0..h)
                        .map(|i| {
                            let mut s = th[layout.bias + i];
                            let wx = &th[layout.wx + i * e..layout.wx + (i + 1) * e];
                            s += wx.iter().zip(&x).map(|(w, v)| w * v).sum::<f64>();
                            let wh = &th[layout.wh + i * h..layout.wh + (i + 1) * h];
                            s += wh.iter().zip(&prev).map(|(w, v)| w * v).sum::<f64>();
                            s.tanh()
                        })
                        .collect();
                    let a = self.arities[t];
                    let z: Vec<f64> = (0..a)
                        .map(|j| {
                            let row = &th[layout.head_w[t] + j * h..layout.head_w[t] + (j + 1) * h];
                            th[layout.head_b[t] + j] + row.iter().zip(&hid).map(|(w, v)| w * v).sum::<f64>()
                        })
                        .collect();
                    let lp = log_softmax(&z);
                    let tok = choose(t, &lp);
                    trace.tokens.push(tok);
                    trace.log_probs.push(lp);
                    trace.inputs.push(x);
                    prev = hid.clone();
                    trace.hidden.push(hid);
                }
            }
        }
        trace
    }

    /// Teacher-forced pass along `tokens`.
    pub fn trace(&self, tokens: &[usize]) -> Trace {
        assert_eq!(tokens.len(), self.arities.len(), "token count must match slot count");
        self.forward(|t, _| tokens[t])
    }

    /// Draws one token sequence and returns it with its log probability.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> (Vec<usize>, f64) {
        let trace = self.forward(|_, lp| draw(lp, rng));
        let lp = trace.log_prob();
        (trace.tokens, lp)
    }

    pub fn log_prob(&self, tokens: &[usize]) -> f64 {
        self.trace(tokens).log_prob()
    }

    /// Backpropagates per-slot logit gradients `dz` through the policy.
    pub fn backward(&self, trace: &Trace, dz: &[Vec<f64>]) -> Vec<f64> {
        let layout = self.layout();
        let mut grad = vec![0.0; self.theta.len()];
        match self.mode {
            PolicyMode::Independent => {
                for (&off, d) in layout.logits.iter().zip(dz) {
                    grad[off..off + d.len()].copy_from_slice(d);
                }
            }
            PolicyMode::Recurrent {
                embed_dim: e,
                hidden_dim: h,
            } => {
                let th = &self.theta;
                let n = self.arities.len();
                let mut dh_next = vec![0.0; h];
                for t in (0..n).rev() {
                    let hid = &trace.hidden[t];
                    let a = self.arities[t];
                    let mut dh = dh_next.clone();
                    for j in 0..a {
                        let d = dz[t][j];
                        if d == 0.0 {
                            continue;
                        }
                        grad[layout.head_b[t] + j] += d;
                        let row = layout.head_w[t] + j * h;
                        for i in 0..h {
                            grad[row + i] += d * hid[i];
                            dh[i] += d * th[row + i];
                        }
                    }
                    let da: Vec<f64> = (0..h).map(|i| dh[i] * (1.0 - hid[i] * hid[i])).collect();
                    let x = &trace.inputs[t];
                    let zeros = vec![0.0; h];
                    let prev = if t > 0 { &trace.hidden[t - 1] } else { &zeros };
                    let dx_base = if t == 0 {
                        layout.start
                    } else {
                        layout.embed[t - 1] + trace.tokens[t - 1] * e
                    };
                    let mut next = vec![0.0; h];
                    for i in 0..h {
                        let g = da[i];
                        grad[layout.bias + i] += g;
                        for k in 0..e {
                            grad[layout.wx + i * e + k] += g * x[k];
                            grad[dx_base + k] += g * th[layout.wx + i * e + k];
                        }
                        for k in 0..h {
                            grad[layout.wh + i * h + k] += g * prev[k];
                            next[k] += g * th[layout.wh + i * h + k];
                        }
                    }
                    dh_next = next;
                }
            }
        }
        grad
    }

    /// Log probability of `tokens` and its gradient with respect to `theta`.
    pub fn log_prob_and_grad(&self, tokens: &[usize]) -> (f64, Vec<f64>) {
        let trace = self.trace(tokens);
        let dz: Vec<Vec<f64>> = trace
            .log_probs
            .iter()
            .zip(&trace.tokens)
            .map(|(lp, &tok)| {
                lp.iter()
                    .enumerate()
                    .map(|(j, &l)| if j == tok { 1.0 } else { 0.0 } - l.exp())
                    .collect()
            })
            .collect();
        let grad = self.backward(&trace, &dz);
        (trace.log_prob(), grad)
    }

    /// Entropy summed over slots along `tokens`, and its gradient. For the
    /// independent policy this is the exact joint entropy (tokens unused).
    pub fn entropy_and_grad(&self, tokens: &[usize]) -> (f64, Vec<f64>) {
        let trace = self.trace(tokens);
        let dz: Vec<Vec<f64>> = trace
            .log_probs
            .iter()
            .map(|lp| {
                let h = slot_entropy(lp);
                lp.iter().map(|&l| -l.exp() * (l + h)).collect()
            })
            .collect();
        let grad = self.backward(&trace, &dz);
        (trace.entropy(), grad)
    }

    /// Per-slot probabilities of the independent policy.
    pub fn slot_probs(&self, slot: usize) -> Option<Vec<f64>> {
        match self.mode {
            PolicyMode::Independent => {
                let off = self.layout().logits[slot];
                Some(
                    log_softmax(&self.theta[off..off + self.arities[slot]])
                        .into_iter()
                        .map(f64::exp)
                        .collect(),
                )
            }
            PolicyMode::Recurrent { .. } => None,
        }
    }
}
