use crate::autodiff::tape::{Tape, Var};
use crate::autodiff::tensor::Scalar;
use crate::error::{Error, Result};

/// Projection weights of one self-attention block, all `[E,E]` with `[E]` biases.
#[derive(Clone, Copy, Debug)]
pub struct AttentionParams {
    pub wq: Var,
    pub bq: Var,
    pub wk: Var,
    pub bk: Var,
    pub wv: Var,
    pub bv: Var,
    pub wo: Var,
    pub bo: Var,
}

/// Output of [`Tape::multihead_self_attention_with_weights`].
pub struct AttentionOutput {
    pub output: Var,
    /// Softmax weights `[B*heads, N, N]`.
    pub weights: Var,
}

impl<T: Scalar> Tape<T> {
    /// Unmasked multi-head scaled dot-product self-attention over `input[B,N,E]`.
    pub fn multihead_self_attention(&mut self, input: Var, heads: usize, p: &AttentionParams) -> Result<Var> {
        Ok(self.multihead_self_attention_with_weights(input, heads, p)?.output)
    }

    pub fn multihead_self_attention_with_weights(
        &mut self,
        input: Var,
        heads: usize,
        p: &AttentionParams,
    ) -> Result<AttentionOutput> {
        let &[b, n, e] = self.shape(input) else {
            return Err(Error::dim(
                "multihead_self_attention",
                format!("input must be [B,N,E], got {:?}", self.shape(input)),
            ));
        };
        if heads == 0 || e % heads != 0 {
            return Err(Error::Config(format!(
                "embedding dimension {e} is not divisible by {heads} heads"
            )));
        }
        let dh = e / heads;
        let split = |tape: &mut Self, w: Var, bias: Var| -> Result<Var> {
            let y = tape.linear(input, w, Some(bias))?;
            let y = tape.reshape(y, &[b, n, heads, dh]);
            let y = tape.permute(y, &[0, 2, 1, 3]);
            Ok(tape.reshape(y, &[b * heads, n, dh]))
        };
        let q = split(self, p.wq, p.bq)?;
        let k = split(self, p.wk, p.bk)?;
        let v = split(self, p.wv, p.bv)?;
        let scores = self.bmm(q, k, true)?;
        let scores = self.scale(scores, 1.0 / (dh as f64).sqrt());
        let weights = self.softmax(scores);
        let ctx = self.bmm(weights, v, false)?;
        let ctx = self.reshape(ctx, &[b, heads, n, dh]);
        let ctx = self.permute(ctx, &[0, 2, 1, 3]);
        let ctx = self.reshape(ctx, &[b, n, e]);
        let output = self.linear(ctx, p.wo, Some(p.bo))?;
        Ok(AttentionOutput { output, weights })
    }
}
