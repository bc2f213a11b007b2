//! Tabular log-linear softmax policy.
//!
//! Next-token logits are additive over a window of the `K` most recent
//! tokens of the prefix (prompt plus generated output):
//!
//! ```text
//! logit(c | prefix) = sum_{j=0..K} table[j][prefix[len-1-j]][c]
//! ```
//!
//! Positions reaching past the start of the prefix index a dedicated pad
//! row. The parameter layout is one flat `f64` slice, so gradients are
//! plain parameter-shaped vectors.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Token identifier within a policy vocabulary.
pub type TokenId = u32;

#[derive(Clone, Debug, PartialEq)]
pub struct TablePolicy {
    vocab_size: usize,
    window: usize,
    table: Vec<f64>,
}

impl TablePolicy {
    /// A zero-initialized (uniform) policy.
    pub fn new(vocab_size: usize, window: usize) -> Self {
        assert!(vocab_size > 0, "vocabulary must be non-empty");
        assert!(window > 0, "context window must be positive");
        TablePolicy {
            vocab_size,
            window,
            table: vec![0.0; window * (vocab_size + 1) * vocab_size],
        }
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn window(&self) -> usize {
        self.window
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.window, self.vocab_size)
    }

    pub fn param_count(&self) -> usize {
        self.table.len()
    }

    pub fn params(&self) -> &[f64] {
        &self.table
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.table
    }

    /// Row index for context slot `j` (0 = previous token); positions
    /// before the start of the prefix map to the pad row.
    fn row_of(&self, prefix: &[TokenId], j: usize) -> usize {
        if j < prefix.len() {
            prefix[prefix.len() - 1 - j] as usize
        } else {
            self.vocab_size // pad row
        }
    }

    /// Flat index of `table[j][row][col]`.
    pub fn index(&self, j: usize, row: usize, col: usize) -> usize {
        debug_assert!(j < self.window && row <= self.vocab_size && col < self.vocab_size);
        (j * (self.vocab_size + 1) + row) * self.vocab_size + col
    }

    /// Adds `delta` to `table[j][row][col]`.
    pub fn bump(&mut self, j: usize, row: usize, col: usize, delta: f64) {
        let i = self.index(j, row, col);
        self.table[i] += delta;
    }

    pub fn logits_into(&self, prefix: &[TokenId], out: &mut [f64]) {
        debug_assert_eq!(out.len(), self.vocab_size);
        out.fill(0.0);
        for j in 0..self.window {
            let row = self.row_of(prefix, j);
            let base = self.index(j, row, 0);
            let slice = &self.table[base..base + self.vocab_size];
            for (o, w) in out.iter_mut().zip(slice) {
                *o += w;
            }
        }
    }

    /// Fills `out` with `log softmax(logits / temperature)`. Requires a
    /// positive temperature.
    pub fn log_probs_into(&self, prefix: &[TokenId], temperature: f64, out: &mut [f64]) {
        assert!(temperature > 0.0, "log probabilities need temperature > 0");
        self.logits_into(prefix, out);
        if temperature != 1.0 {
            for o in out.iter_mut() {
                *o /= temperature;
            }
        }
        let max = out.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = out.iter().map(|x| (x - max).exp()).sum();
        let lse = max + sum.ln();
        for o in out.iter_mut() {
            *o -= lse;
        }
    }

    /// Log-probability of one token at the given temperature.
    pub fn logp_of(&self, prefix: &[TokenId], temperature: f64, token: TokenId) -> f64 {
        let mut buf = vec![0.0; self.vocab_size];
        self.log_probs_into(prefix, temperature, &mut buf);
        buf[token as usize]
    }

    /// Samples the next token. Temperature zero is greedy (ties break to
    /// the lowest token id) and reports a log-probability of zero.
    pub fn sample_token(
        &self,
        prefix: &[TokenId],
        temperature: f64,
        rng: &mut ChaCha8Rng,
    ) -> (TokenId, f64) {
        let mut buf = vec![0.0; self.vocab_size];
        if temperature == 0.0 {
            self.logits_into(prefix, &mut buf);
            let mut best = 0usize;
            for (c, &l) in buf.iter().enumerate() {
                if l > buf[best] {
                    best = c;
                }
            }
            return (best as TokenId, 0.0);
        }
        self.log_probs_into(prefix, temperature, &mut buf);
        let draw: f64 = rng.gen();
        let mut acc = 0.0;
        for (c, &lp) in buf.iter().enumerate() {
            acc += lp.exp();
            if draw < acc {
                return (c as TokenId, lp);
            }
        }
        // float dust: fall back to the last token
        let last = self.vocab_size - 1;
        (last as TokenId, buf[last])
    }

    /// Accumulates `coeff * d logp(tok | prefix) / d theta` into `grad`,
    /// given the token probabilities at the evaluated temperature. The
    /// `1/temperature` factor is the caller's responsibility.
    pub fn accumulate_logit_grad(
        &self,
        prefix: &[TokenId],
        probs: &[f64],
        tok: TokenId,
        coeff: f64,
        grad: &mut [f64],
    ) {
        debug_assert_eq!(grad.len(), self.table.len());
        debug_assert_eq!(probs.len(), self.vocab_size);
        for j in 0..self.window {
            let row = self.row_of(prefix, j);
            let base = self.index(j, row, 0);
            grad[base + tok as usize] += coeff;
            let slice = &mut grad[base..base + self.vocab_size];
            for (g, &p) in slice.iter_mut().zip(probs) {
                *g -= coeff * p;
            }
        }
    }

    /// One gradient-ascent step: `theta += lr * grad`.
    pub fn apply_ascent(&mut self, grad: &[f64], lr: f64) {
        debug_assert_eq!(grad.len(), self.table.len());
        for (p, g) in self.table.iter_mut().zip(grad) {
            *p += lr * g;
        }
    }
}
