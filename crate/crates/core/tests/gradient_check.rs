//! Analytic backward pass vs central finite differences on random tiny
//! networks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use qindex::nn::{backward, forward, Activation, NetworkSpec, Params, Pooling};
use qindex::query::StateTokens;

fn random_spec(rng: &mut ChaCha8Rng) -> NetworkSpec {
    let heads = rng.gen_range(1..=3);
    let n_hidden = rng.gen_range(0..=2);
    let hidden = (0..n_hidden)
        .map(|_| {
            let size = rng.gen_range(2..=5);
            let act = if rng.gen_bool(0.5) {
                Activation::Relu
            } else {
                Activation::Tanh
            };
            (size, act)
        })
        .collect();
    NetworkSpec {
        vocab_size: rng.gen_range(3..=6),
        embed_dim: rng.gen_range(2..=4),
        hidden,
        heads,
        head_width: 2 * heads + 1,
        input_len: rng.gen_range(3..=6),
        pooling: if rng.gen_bool(0.5) {
            Pooling::MaskedMean
        } else {
            Pooling::Concat
        },
    }
}

fn random_tokens(spec: &NetworkSpec, rng: &mut ChaCha8Rng) -> StateTokens {
    // at least one non-PAD token, PAD tail
    let used = rng.gen_range(1..=spec.input_len);
    let mut ids: Vec<u32> = (0..spec.input_len)
        .map(|i| {
            if i < used {
                rng.gen_range(1..spec.vocab_size as u32)
            } else {
                0
            }
        })
        .collect();
    ids[0] = rng.gen_range(1..spec.vocab_size as u32);
    StateTokens::from_ids(ids)
}

/// Scalar test loss: a fixed random linear functional of the Q-values.
fn loss(spec: &NetworkSpec, params: &Params, tokens: &StateTokens, coeffs: &[Vec<f64>]) -> f64 {
    let (q, _) = forward(spec, params, tokens).unwrap();
    q.heads
        .iter()
        .zip(coeffs)
        .map(|(head, c)| head.iter().zip(c).map(|(a, b)| a * b).sum::<f64>())
        .sum()
}

/// Max relative error between analytic and numeric gradients over one net.
pub fn max_rel_error(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let spec = random_spec(&mut rng);
    let mut params = Params::init(&spec, &mut rng);
    // nonzero biases so their gradients are exercised from a generic point
    for layer in params.hidden.iter_mut().chain(params.heads.iter_mut()) {
        for b in layer.b.iter_mut() {
            *b = rng.gen_range(-0.1..0.1);
        }
    }
    let tokens = random_tokens(&spec, &mut rng);
    let coeffs: Vec<Vec<f64>> = (0..spec.heads)
        .map(|_| {
            (0..spec.head_width)
                .map(|_| rng.gen_range(-1.0..1.0))
                .collect()
        })
        .collect();

    let (_, cache) = forward(&spec, &params, &tokens).unwrap();
    let analytic = backward(&spec, &params, &cache, &coeffs).unwrap();

    let h = 1e-4;
    let mut worst: f64 = 0.0;
    let n_tensors = analytic.flatten().len();
    for t in 0..n_tensors {
        let len = analytic.flatten()[t].1.len();
        for i in 0..len {
            let a = analytic.flatten()[t].1[i];
            let original = params.flatten()[t].1[i];
            params.flatten_mut()[t].1[i] = original + h;
            let up = loss(&spec, &params, &tokens, &coeffs);
            params.flatten_mut()[t].1[i] = original - h;
            let down = loss(&spec, &params, &tokens, &coeffs);
            params.flatten_mut()[t].1[i] = original;
            let numeric = (up - down) / (2.0 * h);
            let denom = a.abs().max(numeric.abs());
            if denom < 1e-5 {
                continue; // both effectively zero (dead relu paths)
            }
            worst = worst.max((a - numeric).abs() / denom);
        }
    }
    worst
}

#[test]
fn analytic_gradients_match_finite_differences() {
    for seed in 0..25u64 {
        let err = max_rel_error(seed);
        assert!(err < 1e-4, "seed {seed}: max relative error {err}");
    }
}
