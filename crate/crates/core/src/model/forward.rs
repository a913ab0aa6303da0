use super::linalg::{axpy, dot, linear, linear_input_grad, Matrix, Real};
use super::params::{ClassifierHead, EncoderLayer, FrozenEncoder, SoftPromptBank, SpearModel};
use super::Aggregation;
use crate::error::{Result, SpearError};
use crate::series::QuantizedWindow;

const LN_EPS: f64 = 1e-6;

/// Token embeddings plus the position term for the slot each token occupies
/// after the prompt block.
pub fn embed<T: Real>(model: &SpearModel<T>, window: &QuantizedWindow) -> Result<Matrix<T>> {
    let table = &model.embedding.table;
    let positions = &model.encoder.positions;
    let m = model.config.prompt_len;
    let d = table.cols;
    if m + window.tokens.len() > positions.rows {
        return Err(SpearError::InvalidInput(format!(
            "{} prompts + {} tokens exceed max_seq_len {}",
            m,
            window.tokens.len(),
            positions.rows
        )));
    }
    let mut out = Matrix::zeros(window.tokens.len(), d);
    for (t, &token) in window.tokens.iter().enumerate() {
        if token as usize >= table.rows {
            return Err(SpearError::InvalidInput(format!(
                "token {token} out of range for {} bins",
                table.rows
            )));
        }
        let row = out.row_mut(t);
        row.copy_from_slice(table.row(token as usize));
        for (r, &p) in row.iter_mut().zip(positions.row(m + t)) {
            *r = *r + p;
        }
    }
    Ok(out)
}

/// `[p_1..p_m, e_1..e_T]` and the matching mask (prompts always visible).
pub fn assemble_input<T: Real>(
    prompts: &SoftPromptBank<T>,
    embeddings: &Matrix<T>,
    mask: &[bool],
    max_seq_len: usize,
) -> Result<(Matrix<T>, Vec<bool>)> {
    let p = &prompts.prompts;
    if embeddings.rows != mask.len() || embeddings.cols != p.cols {
        return Err(SpearError::InvalidInput(format!(
            "embeddings {}x{} do not match mask length {} / width {}",
            embeddings.rows,
            embeddings.cols,
            mask.len(),
            p.cols
        )));
    }
    let len = p.rows + embeddings.rows;
    if len > max_seq_len {
        return Err(SpearError::InvalidInput(format!(
            "assembled length {len} exceeds max_seq_len {max_seq_len}"
        )));
    }
    let mut data = Vec::with_capacity(len * p.cols);
    data.extend_from_slice(&p.data);
    data.extend_from_slice(&embeddings.data);
    let mut ext = vec![true; p.rows];
    ext.extend_from_slice(mask);
    Ok((Matrix::from_vec(len, p.cols, data), ext))
}

struct LnCache<T> {
    xhat: Matrix<T>,
    rstd: Vec<T>,
}

fn layer_norm<T: Real>(x: &Matrix<T>, gain: &[T], bias: &[T]) -> (Matrix<T>, LnCache<T>) {
    let d = x.cols;
    let n = T::of(d as f64);
    let eps = T::of(LN_EPS);
    let mut y = Matrix::zeros(x.rows, d);
    let mut xhat = Matrix::zeros(x.rows, d);
    let mut rstd = Vec::with_capacity(x.rows);
    for i in 0..x.rows {
        let row = x.row(i);
        let mean = row.iter().copied().sum::<T>() / n;
        let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / n;
        let r = T::one() / (var + eps).sqrt();
        rstd.push(r);
        let xh = xhat.row_mut(i);
        for (o, &v) in xh.iter_mut().zip(row) {
            *o = (v - mean) * r;
        }
        let yr = &mut y.data[i * d..(i + 1) * d];
        for c in 0..d {
            yr[c] = gain[c] * xhat.data[i * d + c] + bias[c];
        }
    }
    (y, LnCache { xhat, rstd })
}

fn layer_norm_backward<T: Real>(cache: &LnCache<T>, gain: &[T], dy: &Matrix<T>, dx: &mut Matrix<T>) {
    let d = dy.cols;
    let n = T::of(d as f64);
    let mut dxhat = vec![T::zero(); d];
    for i in 0..dy.rows {
        let g = dy.row(i);
        if g.iter().all(|v| v.is_zero()) {
            continue;
        }
        let xh = cache.xhat.row(i);
        for c in 0..d {
            dxhat[c] = g[c] * gain[c];
        }
        let mean_d = dxhat.iter().copied().sum::<T>() / n;
        let mean_dx = dot(&dxhat, xh) / n;
        let r = cache.rstd[i];
        let out = dx.row_mut(i);
        for c in 0..d {
            out[c] = out[c] + r * (dxhat[c] - mean_d - xh[c] * mean_dx);
        }
    }
}

fn gelu<T: Real>(u: T) -> T {
    let c = T::of((2.0 / std::f64::consts::PI).sqrt());
    let k = T::of(0.044_715);
    let half = T::of(0.5);
    half * u * (T::one() + (c * (u + k * u * u * u)).tanh())
}

fn gelu_grad<T: Real>(u: T) -> T {
    let c = T::of((2.0 / std::f64::consts::PI).sqrt());
    let k = T::of(0.044_715);
    let half = T::of(0.5);
    let th = (c * (u + k * u * u * u)).tanh();
    half * (T::one() + th) + half * u * (T::one() - th * th) * c * (T::one() + T::of(3.0) * k * u * u)
}

/// Activations of one layer kept for the reverse pass.
pub(crate) struct LayerCache<T> {
    ln1: LnCache<T>,
    q: Matrix<T>,
    k: Matrix<T>,
    v: Matrix<T>,
    /// Attention weights, `heads × seq × seq`; rows of masked queries are zero.
    probs: Vec<T>,
    ln2: LnCache<T>,
    u: Matrix<T>,
}

/// Everything the reverse pass needs from one forward evaluation.
pub struct ForwardCache<T> {
    pub(crate) mask: Vec<bool>,
    pub(crate) layers: Vec<LayerCache<T>>,
    pub hidden: Matrix<T>,
}

fn layer_forward<T: Real>(
    layer: &EncoderLayer<T>,
    x: &Matrix<T>,
    mask: &[bool],
    n_heads: usize,
) -> (Matrix<T>, LayerCache<T>) {
    let s = x.rows;
    let d = x.cols;
    let dh = d / n_heads;
    let scale = T::one() / T::of(dh as f64).sqrt();
    let keys: Vec<usize> = (0..s).filter(|&j| mask[j]).collect();

    let (n1, ln1) = layer_norm(x, &layer.ln1_gain, &layer.ln1_bias);
    let q = linear(&n1, &layer.wq, &layer.bq);
    let k = linear(&n1, &layer.wk, &layer.bk);
    let v = linear(&n1, &layer.wv, &layer.bv);

    // Keys and values transposed to `d × s` so each head's score row and
    // context entry are long contiguous loops over key positions.
    let kt = k.transpose();
    let vt = v.transpose();
    let mut probs = vec![T::zero(); n_heads * s * s];
    let mut ctx = Matrix::zeros(s, d);
    for h in 0..n_heads {
        let cols = h * dh..(h + 1) * dh;
        for &i in &keys {
            let row = &mut probs[(h * s + i) * s..(h * s + i + 1) * s];
            for c in cols.clone() {
                axpy(q.at(i, c) * scale, kt.row(c), row);
            }
            let mut max = T::neg_infinity();
            for &j in &keys {
                max = max.max(row[j]);
            }
            let mut sum = T::zero();
            for (j, r) in row.iter_mut().enumerate() {
                if mask[j] {
                    *r = (*r - max).exp();
                    sum = sum + *r;
                } else {
                    *r = T::zero();
                }
            }
            let inv = T::one() / sum;
            row.iter_mut().for_each(|r| *r = *r * inv);
            for c in cols.clone() {
                ctx.data[i * d + c] = dot(row, vt.row(c));
            }
        }
    }

    let attn = linear(&ctx, &layer.wo, &layer.bo);
    let mut x1 = x.clone();
    for (a, &b) in x1.data.iter_mut().zip(&attn.data) {
        *a = *a + b;
    }
    let (n2, ln2) = layer_norm(&x1, &layer.ln2_gain, &layer.ln2_bias);
    let u = linear(&n2, &layer.w1, &layer.b1);
    let act = Matrix::from_vec(u.rows, u.cols, u.data.iter().map(|&z| gelu(z)).collect());
    let f = linear(&act, &layer.w2, &layer.b2);
    for (a, &b) in x1.data.iter_mut().zip(&f.data) {
        *a = *a + b;
    }
    (
        x1,
        LayerCache {
            ln1,
            q,
            k,
            v,
            probs,
            ln2,
            u,
        },
    )
}

/// Gradient of one layer's output with respect to its input.
fn layer_backward<T: Real>(
    layer: &EncoderLayer<T>,
    cache: &LayerCache<T>,
    mask: &[bool],
    n_heads: usize,
    dout: &Matrix<T>,
) -> Matrix<T> {
    let s = dout.rows;
    let d = dout.cols;
    let dh = d / n_heads;
    let scale = T::one() / T::of(dh as f64).sqrt();
    let keys: Vec<usize> = (0..s).filter(|&j| mask[j]).collect();

    // Feed-forward branch.
    let mut du = linear_input_grad(dout, &layer.w2);
    for (g, &z) in du.data.iter_mut().zip(&cache.u.data) {
        *g = *g * gelu_grad(z);
    }
    let dn2 = linear_input_grad(&du, &layer.w1);
    let mut dx1 = dout.clone();
    layer_norm_backward(&cache.ln2, &layer.ln2_gain, &dn2, &mut dx1);

    // Attention branch.
    let dctx = linear_input_grad(&dx1, &layer.wo);
    let kt = cache.k.transpose();
    let vt = cache.v.transpose();
    let mut dq = Matrix::zeros(s, d);
    let mut dkt = Matrix::zeros(d, s);
    let mut dvt = Matrix::zeros(d, s);
    let mut da = vec![T::zero(); s];
    for h in 0..n_heads {
        let cols = h * dh..(h + 1) * dh;
        for &i in &keys {
            let g = &dctx.row(i)[cols.clone()];
            if g.iter().all(|x| x.is_zero()) {
                continue;
            }
            let p = &cache.probs[(h * s + i) * s..(h * s + i + 1) * s];
            da.iter_mut().for_each(|x| *x = T::zero());
            for (&gc, c) in g.iter().zip(cols.clone()) {
                axpy(gc, vt.row(c), &mut da);
                axpy(gc, p, dvt.row_mut(c));
            }
            // Softmax backward; masked keys have p = 0 and drop out.
            let weighted = dot(p, &da);
            for (x, &pj) in da.iter_mut().zip(p) {
                *x = pj * (*x - weighted) * scale;
            }
            for c in cols.clone() {
                dq.data[i * d + c] = dot(&da, kt.row(c));
                axpy(cache.q.at(i, c), &da, dkt.row_mut(c));
            }
        }
    }
    let dk = dkt.transpose();
    let dv = dvt.transpose();
    let mut dn1 = linear_input_grad(&dq, &layer.wq);
    for (a, b) in [(&dk, &layer.wk), (&dv, &layer.wv)] {
        let part = linear_input_grad(a, b);
        for (x, &y) in dn1.data.iter_mut().zip(&part.data) {
            *x = *x + y;
        }
    }
    let mut dx0 = dx1;
    layer_norm_backward(&cache.ln1, &layer.ln1_gain, &dn1, &mut dx0);
    dx0
}

fn run_layers<T: Real>(
    input: &Matrix<T>,
    mask: &[bool],
    encoder: &FrozenEncoder<T>,
    n_heads: usize,
    mut keep: Option<&mut Vec<LayerCache<T>>>,
) -> Result<Matrix<T>> {
    if input.rows != mask.len() {
        return Err(SpearError::InvalidInput(format!(
            "sequence of {} rows with mask of {}",
            input.rows,
            mask.len()
        )));
    }
    if !input.is_finite() {
        return Err(SpearError::Numeric("non-finite encoder input".into()));
    }
    let mut x = input.clone();
    for (index, layer) in encoder.layers.iter().enumerate() {
        let (next, cache) = layer_forward(layer, &x, mask, n_heads);
        if !next.is_finite() {
            return Err(SpearError::Numeric(format!(
                "non-finite activation in encoder layer {index}"
            )));
        }
        if let Some(store) = keep.as_deref_mut() {
            store.push(cache);
        }
        x = next;
    }
    Ok(x)
}

/// Pre-norm encoder: masked multi-head self-attention and a GELU
/// feed-forward block, each with a residual connection.
pub fn encoder_forward<T: Real>(
    input: &Matrix<T>,
    mask: &[bool],
    encoder: &FrozenEncoder<T>,
    n_heads: usize,
) -> Result<Matrix<T>> {
    run_layers(input, mask, encoder, n_heads, None)
}

/// Head output for the real positions of one window.
#[derive(Debug, Clone, PartialEq)]
pub struct Classification<T> {
    /// Window indices of the unmasked positions.
    pub positions: Vec<usize>,
    pub logits: Vec<T>,
    pub probabilities: Vec<T>,
    pub score: T,
    /// Index into `probabilities` that determined the score under max
    /// aggregation.
    pub argmax: usize,
}

fn sigmoid<T: Real>(z: T) -> T {
    if z >= T::zero() {
        T::one() / (T::one() + (-z).exp())
    } else {
        let e = z.exp();
        e / (T::one() + e)
    }
}

/// `z_t = W·h_{m+t} + b`, `ŷ_t = σ(z_t)` over unmasked positions, reduced
/// to a window score.
pub fn classify<T: Real>(
    hidden: &Matrix<T>,
    head: &ClassifierHead<T>,
    mask: &[bool],
    prompt_len: usize,
    aggregation: Aggregation,
) -> Classification<T> {
    let positions: Vec<usize> = (0..mask.len()).filter(|&t| mask[t]).collect();
    let logits: Vec<T> = positions
        .iter()
        .map(|&t| dot(&head.weight, hidden.row(prompt_len + t)) + head.bias)
        .collect();
    let probabilities: Vec<T> = logits.iter().map(|&z| sigmoid(z)).collect();
    let mut argmax = 0;
    for (i, &p) in probabilities.iter().enumerate() {
        if p > probabilities[argmax] {
            argmax = i;
        }
    }
    let score = match aggregation {
        Aggregation::Mean => {
            probabilities.iter().copied().sum::<T>() / T::of(probabilities.len().max(1) as f64)
        }
        Aggregation::Max => probabilities.get(argmax).copied().unwrap_or_else(T::zero),
    };
    Classification {
        positions,
        logits,
        probabilities,
        score,
        argmax,
    }
}

fn check_window<T: Real>(model: &SpearModel<T>, window: &QuantizedWindow) -> Result<()> {
    if window.n_bins != model.config.n_bins {
        return Err(SpearError::InvalidInput(format!(
            "window quantized with {} bins, model expects {}",
            window.n_bins, model.config.n_bins
        )));
    }
    if window.tokens.len() > model.config.max_window_len() {
        return Err(SpearError::InvalidInput(format!(
            "window of {} tokens exceeds the {} available after prompts",
            window.tokens.len(),
            model.config.max_window_len()
        )));
    }
    Ok(())
}

impl<T: Real> SpearModel<T> {
    /// Forward pass that keeps the activations needed by `input_gradient`.
    pub fn forward_cached(&self, window: &QuantizedWindow) -> Result<(Classification<T>, ForwardCache<T>)> {
        check_window(self, window)?;
        let emb = embed(self, window)?;
        let (input, mask) = assemble_input(&self.prompts, &emb, &window.mask, self.config.max_seq_len)?;
        let mut layers = Vec::with_capacity(self.encoder.layers.len());
        let hidden = run_layers(&input, &mask, &self.encoder, self.config.n_heads, Some(&mut layers))?;
        let out = classify(
            &hidden,
            &self.head,
            &window.mask,
            self.config.prompt_len,
            self.config.aggregation,
        );
        Ok((out, ForwardCache { mask, layers, hidden }))
    }

    /// Gradient with respect to the assembled input sequence, given the
    /// gradient with respect to the final hidden states.
    pub fn input_gradient(&self, cache: &ForwardCache<T>, d_hidden: Matrix<T>) -> Matrix<T> {
        let mut grad = d_hidden;
        for (layer, lc) in self.encoder.layers.iter().zip(&cache.layers).rev() {
            grad = layer_backward(layer, lc, &cache.mask, self.config.n_heads, &grad);
        }
        grad
    }
}

/// Window score and per-position probabilities.
pub fn predict_window<T: Real>(model: &SpearModel<T>, window: &QuantizedWindow) -> Result<(T, Vec<T>)> {
    check_window(model, window)?;
    let emb = embed(model, window)?;
    let (input, mask) = assemble_input(&model.prompts, &emb, &window.mask, model.config.max_seq_len)?;
    let hidden = encoder_forward(&input, &mask, &model.encoder, model.config.n_heads)?;
    let out = classify(
        &hidden,
        &model.head,
        &window.mask,
        model.config.prompt_len,
        model.config.aggregation,
    );
    Ok((out.score, out.probabilities))
}

/// Gradients of the trainable parameters. Parameters outside the trainable
/// set are `None` and never allocated.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients<T> {
    pub prompts: Matrix<T>,
    pub head_weight: Option<Vec<T>>,
    pub head_bias: Option<T>,
    pub embedding: Option<Matrix<T>>,
}

impl<T: Real> Gradients<T> {
    pub fn zeros(model: &SpearModel<T>, with_head: bool) -> Self {
        let p = &model.prompts.prompts;
        Gradients {
            prompts: Matrix::zeros(p.rows, p.cols),
            head_weight: with_head.then(|| vec![T::zero(); model.head.weight.len()]),
            head_bias: with_head.then(T::zero),
            embedding: (!model.embedding.frozen)
                .then(|| Matrix::zeros(model.embedding.table.rows, model.embedding.table.cols)),
        }
    }

    /// `self += scale * other`
    pub fn add_scaled(&mut self, other: &Gradients<T>, scale: T) {
        axpy(scale, &other.prompts.data, &mut self.prompts.data);
        if let (Some(a), Some(b)) = (self.head_weight.as_mut(), other.head_weight.as_ref()) {
            axpy(scale, b, a);
        }
        if let (Some(a), Some(b)) = (self.head_bias.as_mut(), other.head_bias) {
            *a = *a + scale * b;
        }
        if let (Some(a), Some(b)) = (self.embedding.as_mut(), other.embedding.as_ref()) {
            axpy(scale, &b.data, &mut a.data);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.prompts.is_finite()
            && self.head_weight.as_ref().is_none_or(|w| w.iter().all(|v| v.is_finite()))
            && self.head_bias.is_none_or(|b| b.is_finite())
            && self.embedding.as_ref().is_none_or(|e| e.is_finite())
    }
}
