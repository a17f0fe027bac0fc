//! From-scratch differentiable network: a token embedding pooled into a
//! fixed vector, dense hidden layers, and one linear output head per index
//! key slot.
//!
//! Everything is f64 with plain loops; no BLAS, no autograd. The gradient
//! of every operation is written out by hand and checked against finite
//! differences in the test suite.

mod adam;
mod io;
mod matrix;

pub use adam::{adam_step, AdamState};
pub use io::{load_model, save_model, ModelFile, ModelIoError, MODEL_FORMAT_VERSION};
pub use matrix::Matrix;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::query::{StateTokens, PAD};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Tanh,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Tanh => z.tanh(),
        }
    }

    /// Derivative expressed in terms of the activation output `a`.
    fn derivative(self, a: f64) -> f64 {
        match self {
            Activation::Relu => {
                if a > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - a * a,
        }
    }
}

/// How token embeddings collapse into the first dense input.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pooling {
    /// Mean of non-PAD token embeddings (default).
    MaskedMean,
    /// Concatenation of all `L` positions; PAD positions contribute zeros.
    Concat,
}

#[derive(Debug, Error, PartialEq)]
pub enum NnError {
    #[error("invalid network spec: {0}")]
    BadSpec(String),
    #[error("token id {id} out of range (vocab size {vocab})")]
    TokenOutOfRange { id: u32, vocab: usize },
    #[error("shape mismatch in {0}")]
    ShapeMismatch(String),
    #[error("non-finite gradient in tensor `{0}`")]
    NonFiniteGradient(String),
}

/// Architecture description: embedding, hidden stack, and `heads` output
/// layers of `head_width` Q-values each.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub vocab_size: usize,
    pub embed_dim: usize,
    pub hidden: Vec<(usize, Activation)>,
    pub heads: usize,
    pub head_width: usize,
    pub input_len: usize,
    pub pooling: Pooling,
}

impl NetworkSpec {
    /// The default architecture: 32-wide embedding and one 128-unit relu
    /// layer, with one head per index key slot.
    pub fn with_defaults(vocab_size: usize, input_len: usize, max_keys: usize) -> Self {
        NetworkSpec {
            vocab_size,
            embed_dim: 32,
            hidden: vec![(128, Activation::Relu)],
            heads: max_keys,
            head_width: 2 * max_keys + 1,
            input_len,
            pooling: Pooling::MaskedMean,
        }
    }

    pub fn validate(&self) -> Result<(), NnError> {
        if self.vocab_size == 0 || self.embed_dim == 0 || self.input_len == 0 {
            return Err(NnError::BadSpec("all dimensions must be >= 1".into()));
        }
        if self.heads == 0 {
            return Err(NnError::BadSpec("at least one output head required".into()));
        }
        if self.head_width != 2 * self.heads + 1 {
            return Err(NnError::BadSpec(format!(
                "head width must be 2*heads+1 = {}, got {}",
                2 * self.heads + 1,
                self.head_width
            )));
        }
        if self.hidden.iter().any(|(size, _)| *size == 0) {
            return Err(NnError::BadSpec("hidden layer sizes must be >= 1".into()));
        }
        Ok(())
    }

    /// Width of the pooled vector fed to the first dense layer.
    pub fn pooled_width(&self) -> usize {
        match self.pooling {
            Pooling::MaskedMean => self.embed_dim,
            Pooling::Concat => self.embed_dim * self.input_len,
        }
    }

    pub fn last_hidden_width(&self) -> usize {
        self.hidden
            .last()
            .map(|(size, _)| *size)
            .unwrap_or_else(|| self.pooled_width())
    }

    /// Closed-form parameter count, used by the shape audit.
    pub fn param_count(&self) -> usize {
        let mut count = self.vocab_size * self.embed_dim;
        let mut prev = self.pooled_width();
        for (size, _) in &self.hidden {
            count += size * prev + size;
            prev = *size;
        }
        count + self.heads * (self.head_width * prev + self.head_width)
    }
}

/// One dense layer: `y = W x + b` with `W` of shape `out x in`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dense {
    pub w: Matrix,
    pub b: Vec<f64>,
}

impl Dense {
    fn zeros(out: usize, input: usize) -> Self {
        Dense {
            w: Matrix::zeros(out, input),
            b: vec![0.0; out],
        }
    }
}

/// All trainable parameters. Gradients reuse this type with the same
/// shapes.
#[derive(Clone, Debug, PartialEq)]
pub struct Params {
    pub embedding: Matrix,
    pub hidden: Vec<Dense>,
    pub heads: Vec<Dense>,
}

impl Params {
    pub fn zeros(spec: &NetworkSpec) -> Self {
        let mut hidden = Vec::with_capacity(spec.hidden.len());
        let mut prev = spec.pooled_width();
        for (size, _) in &spec.hidden {
            hidden.push(Dense::zeros(*size, prev));
            prev = *size;
        }
        let heads = (0..spec.heads)
            .map(|_| Dense::zeros(spec.head_width, prev))
            .collect();
        Params {
            embedding: Matrix::zeros(spec.vocab_size, spec.embed_dim),
            hidden,
            heads,
        }
    }

    /// Glorot-uniform dense weights, +-0.05 uniform embeddings, zero biases.
    pub fn init(spec: &NetworkSpec, rng: &mut impl Rng) -> Self {
        let mut params = Params::zeros(spec);
        for v in params.embedding.data_mut() {
            *v = rng.gen_range(-0.05..0.05);
        }
        for layer in params.hidden.iter_mut().chain(params.heads.iter_mut()) {
            let bound = (6.0 / (layer.w.cols() + layer.w.rows()) as f64).sqrt();
            for v in layer.w.data_mut() {
                *v = rng.gen_range(-bound..bound);
            }
        }
        params
    }

    pub fn count(&self) -> usize {
        self.flatten().iter().map(|(_, t)| t.len()).sum()
    }

    /// Tensors in declaration order with stable names; the single source of
    /// iteration order for the optimizer, serialization, and audits.
    pub fn flatten(&self) -> Vec<(String, &[f64])> {
        let mut out: Vec<(String, &[f64])> = vec![("embedding".into(), self.embedding.data())];
        for (i, layer) in self.hidden.iter().enumerate() {
            out.push((format!("hidden{i}.w"), layer.w.data()));
            out.push((format!("hidden{i}.b"), &layer.b));
        }
        for (i, layer) in self.heads.iter().enumerate() {
            out.push((format!("head{i}.w"), layer.w.data()));
            out.push((format!("head{i}.b"), &layer.b));
        }
        out
    }

    pub fn flatten_mut(&mut self) -> Vec<(String, &mut [f64])> {
        let mut out: Vec<(String, &mut [f64])> =
            vec![("embedding".into(), self.embedding.data_mut())];
        for (i, layer) in self.hidden.iter_mut().enumerate() {
            out.push((format!("hidden{i}.w"), layer.w.data_mut()));
            out.push((format!("hidden{i}.b"), &mut layer.b));
        }
        for (i, layer) in self.heads.iter_mut().enumerate() {
            out.push((format!("head{i}.w"), layer.w.data_mut()));
            out.push((format!("head{i}.b"), &mut layer.b));
        }
        out
    }
}

/// Per-head Q-value vectors.
#[derive(Clone, Debug, PartialEq)]
pub struct QValues {
    pub heads: Vec<Vec<f64>>,
}

impl QValues {
    /// Argmax per head, ties broken toward the lowest action id.
    pub fn greedy(&self) -> Vec<usize> {
        self.heads.iter().map(|q| argmax(q)).collect()
    }
}

/// Index of the maximum value; first occurrence wins on ties.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Intermediate activations kept for the backward pass.
#[derive(Clone, Debug)]
pub struct ForwardCache {
    tokens: Vec<u32>,
    nonpad: usize,
    pooled: Vec<f64>,
    hidden_act: Vec<Vec<f64>>,
}

/// A network: architecture plus parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct Network {
    pub spec: NetworkSpec,
    pub params: Params,
}

impl Network {
    pub fn init(spec: NetworkSpec, rng: &mut impl Rng) -> Result<Self, NnError> {
        spec.validate()?;
        let params = Params::init(&spec, rng);
        Ok(Network { spec, params })
    }

    pub fn forward(&self, tokens: &StateTokens) -> Result<(QValues, ForwardCache), NnError> {
        forward(&self.spec, &self.params, tokens)
    }

    pub fn q_values(&self, tokens: &StateTokens) -> Result<QValues, NnError> {
        Ok(self.forward(tokens)?.0)
    }

    pub fn backward(
        &self,
        cache: &ForwardCache,
        head_grads: &[Vec<f64>],
    ) -> Result<Params, NnError> {
        backward(&self.spec, &self.params, cache, head_grads)
    }
}

/// Forward pass; returns Q-values for every head plus the cache needed by
/// [`backward`].
pub fn forward(
    spec: &NetworkSpec,
    params: &Params,
    tokens: &StateTokens,
) -> Result<(QValues, ForwardCache), NnError> {
    if tokens.len() != spec.input_len {
        return Err(NnError::ShapeMismatch(format!(
            "input length {} != spec input_len {}",
            tokens.len(),
            spec.input_len
        )));
    }
    for &id in tokens.ids() {
        if id as usize >= spec.vocab_size {
            return Err(NnError::TokenOutOfRange {
                id,
                vocab: spec.vocab_size,
            });
        }
    }

    let nonpad = tokens.ids().iter().filter(|&&id| id != PAD).count();
    let pooled = match spec.pooling {
        Pooling::MaskedMean => {
            let mut pooled = vec![0.0; spec.embed_dim];
            if nonpad > 0 {
                for &id in tokens.ids().iter().filter(|&&id| id != PAD) {
                    let row = params.embedding.row(id as usize);
                    for (p, &e) in pooled.iter_mut().zip(row) {
                        *p += e;
                    }
                }
                let inv = 1.0 / nonpad as f64;
                for p in &mut pooled {
                    *p *= inv;
                }
            }
            pooled
        }
        Pooling::Concat => {
            let mut pooled = vec![0.0; spec.embed_dim * spec.input_len];
            for (pos, &id) in tokens.ids().iter().enumerate() {
                if id == PAD {
                    continue;
                }
                let row = params.embedding.row(id as usize);
                pooled[pos * spec.embed_dim..(pos + 1) * spec.embed_dim].copy_from_slice(row);
            }
            pooled
        }
    };

    let mut hidden_act: Vec<Vec<f64>> = Vec::with_capacity(spec.hidden.len());
    let mut x = pooled.clone();
    for (layer, (_, act)) in params.hidden.iter().zip(&spec.hidden) {
        let mut z = layer.w.matvec(&x);
        for (zi, bi) in z.iter_mut().zip(&layer.b) {
            *zi = act.apply(*zi + bi);
        }
        hidden_act.push(z.clone());
        x = z;
    }

    let heads = params
        .heads
        .iter()
        .map(|layer| {
            let mut z = layer.w.matvec(&x);
            for (zi, bi) in z.iter_mut().zip(&layer.b) {
                *zi += bi;
            }
            z
        })
        .collect();

    Ok((
        QValues { heads },
        ForwardCache {
            tokens: tokens.ids().to_vec(),
            nonpad,
            pooled,
            hidden_act,
        },
    ))
}

/// Backward pass from per-head loss gradients to parameter gradients.
///
/// Embedding rows of tokens absent from the input (including PAD) receive
/// exact zero gradient.
pub fn backward(
    spec: &NetworkSpec,
    params: &Params,
    cache: &ForwardCache,
    head_grads: &[Vec<f64>],
) -> Result<Params, NnError> {
    if head_grads.len() != spec.heads {
        return Err(NnError::ShapeMismatch(format!(
            "{} head gradients for {} heads",
            head_grads.len(),
            spec.heads
        )));
    }
    for (h, g) in head_grads.iter().enumerate() {
        if g.len() != spec.head_width {
            return Err(NnError::ShapeMismatch(format!(
                "head {h} gradient width {} != {}",
                g.len(),
                spec.head_width
            )));
        }
    }

    let mut grads = Params::zeros(spec);
    let last = cache.hidden_act.last().unwrap_or(&cache.pooled);

    // Heads: accumulate gradient w.r.t. the last hidden activation.
    let mut d_last = vec![0.0; last.len()];
    for ((layer, grad_layer), g) in params
        .heads
        .iter()
        .zip(grads.heads.iter_mut())
        .zip(head_grads)
    {
        grad_layer.w.add_outer(g, last);
        for (gb, &gi) in grad_layer.b.iter_mut().zip(g) {
            *gb += gi;
        }
        let dx = layer.w.matvec_transposed(g);
        for (acc, d) in d_last.iter_mut().zip(dx) {
            *acc += d;
        }
    }

    // Hidden stack, walked backwards.
    let mut delta = d_last;
    for i in (0..params.hidden.len()).rev() {
        let (_, act) = spec.hidden[i];
        let a = &cache.hidden_act[i];
        for (d, &ai) in delta.iter_mut().zip(a) {
            *d *= act.derivative(ai);
        }
        let input: &[f64] = if i == 0 {
            &cache.pooled
        } else {
            &cache.hidden_act[i - 1]
        };
        grads.hidden[i].w.add_outer(&delta, input);
        for (gb, &di) in grads.hidden[i].b.iter_mut().zip(&delta) {
            *gb += di;
        }
        delta = params.hidden[i].w.matvec_transposed(&delta);
    }

    // Embedding rows of used tokens.
    match spec.pooling {
        Pooling::MaskedMean => {
            if cache.nonpad > 0 {
                let inv = 1.0 / cache.nonpad as f64;
                for &id in cache.tokens.iter().filter(|&&id| id != PAD) {
                    let row = grads.embedding.row_mut(id as usize);
                    for (r, &d) in row.iter_mut().zip(&delta) {
                        *r += d * inv;
                    }
                }
            }
        }
        Pooling::Concat => {
            for (pos, &id) in cache.tokens.iter().enumerate() {
                if id == PAD {
                    continue;
                }
                let slice = &delta[pos * spec.embed_dim..(pos + 1) * spec.embed_dim];
                let row = grads.embedding.row_mut(id as usize);
                for (r, &d) in row.iter_mut().zip(slice) {
                    *r += d;
                }
            }
        }
    }

    Ok(grads)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::query::StateTokens;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tiny_spec() -> NetworkSpec {
        NetworkSpec {
            vocab_size: 4,
            embed_dim: 2,
            hidden: vec![(2, Activation::Relu)],
            heads: 1,
            head_width: 3,
            input_len: 4,
            pooling: Pooling::MaskedMean,
        }
    }

    #[test]
    fn zero_params_give_zero_q() {
        let spec = tiny_spec();
        let params = Params::zeros(&spec);
        let tokens = StateTokens::from_ids(vec![1, 2, 0, 0]);
        let (q, _) = forward(&spec, &params, &tokens).unwrap();
        assert_eq!(q.heads, vec![vec![0.0, 0.0, 0.0]]);
    }

    #[test]
    fn forward_is_deterministic() {
        let spec = tiny_spec();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let net = Network::init(spec, &mut rng).unwrap();
        let tokens = StateTokens::from_ids(vec![1, 2, 3, 0]);
        let a = net.q_values(&tokens).unwrap();
        let b = net.q_values(&tokens).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn hand_computed_tiny_forward() {
        // V=4, d=2, one hidden layer of 2 relu units, one head of width 3.
        let spec = tiny_spec();
        let mut params = Params::zeros(&spec);
        // tokens 1 and 2 used; mean embedding = ([1,2] + [3,4]) / 2 = [2,3]
        params.embedding.row_mut(1).copy_from_slice(&[1.0, 2.0]);
        params.embedding.row_mut(2).copy_from_slice(&[3.0, 4.0]);
        // hidden: W = [[1, 0], [-1, 1]], b = [0.5, 0]
        params.hidden[0].w = Matrix::from_rows(vec![vec![1.0, 0.0], vec![-1.0, 1.0]]);
        params.hidden[0].b = vec![0.5, 0.0];
        // h = relu([2 + 0.5, -2 + 3]) = [2.5, 1]
        // head: W = [[1, 1], [2, 0], [0, -1]], b = [0, 1, 0]
        params.heads[0].w =
            Matrix::from_rows(vec![vec![1.0, 1.0], vec![2.0, 0.0], vec![0.0, -1.0]]);
        params.heads[0].b = vec![0.0, 1.0, 0.0];
        let tokens = StateTokens::from_ids(vec![1, 2, 0, 0]);
        let (q, _) = forward(&spec, &params, &tokens).unwrap();
        // q = [2.5 + 1, 5 + 1, -1]
        assert_eq!(q.heads[0], vec![3.5, 6.0, -1.0]);
    }

    #[test]
    fn token_out_of_range_is_an_error() {
        let spec = tiny_spec();
        let params = Params::zeros(&spec);
        let tokens = StateTokens::from_ids(vec![1, 9, 0, 0]);
        assert_eq!(
            forward(&spec, &params, &tokens).unwrap_err(),
            NnError::TokenOutOfRange { id: 9, vocab: 4 }
        );
    }

    #[test]
    fn zero_upstream_gradient_gives_zero_grads() {
        let spec = tiny_spec();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let net = Network::init(spec.clone(), &mut rng).unwrap();
        let tokens = StateTokens::from_ids(vec![1, 2, 0, 0]);
        let (_, cache) = net.forward(&tokens).unwrap();
        let grads = net.backward(&cache, &[vec![0.0; 3]]).unwrap();
        assert_eq!(grads, Params::zeros(&spec));
    }

    #[test]
    fn pad_embedding_row_gets_zero_gradient() {
        let spec = tiny_spec();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let net = Network::init(spec, &mut rng).unwrap();
        let tokens = StateTokens::from_ids(vec![1, 3, 0, 0]);
        let (_, cache) = net.forward(&tokens).unwrap();
        let grads = net.backward(&cache, &[vec![1.0, -0.5, 0.25]]).unwrap();
        assert!(grads.embedding.row(0).iter().all(|&g| g == 0.0));
        // unused token 2 as well
        assert!(grads.embedding.row(2).iter().all(|&g| g == 0.0));
        // used token rows must be nonzero somewhere
        assert!(grads.embedding.row(1).iter().any(|&g| g != 0.0));
    }

    #[test]
    fn param_count_matches_closed_form() {
        let spec = tiny_spec();
        assert_eq!(Params::zeros(&spec).count(), spec.param_count());
        let wide = NetworkSpec::with_defaults(33, 32, 3);
        assert_eq!(Params::zeros(&wide).count(), wide.param_count());
        // V*d + (128*32 + 128) + 3 * (7*128 + 7)
        assert_eq!(
            wide.param_count(),
            33 * 32 + 128 * 32 + 128 + 3 * (7 * 128 + 7)
        );
    }

    #[test]
    fn spec_validation() {
        let mut spec = tiny_spec();
        spec.head_width = 4;
        assert!(matches!(spec.validate(), Err(NnError::BadSpec(_))));
    }

    #[test]
    fn argmax_breaks_ties_low() {
        assert_eq!(argmax(&[1.0, 1.0, 0.5]), 0);
        assert_eq!(argmax(&[0.1, 0.9, 0.2]), 1);
    }
}
