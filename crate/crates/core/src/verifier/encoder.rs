use rand_distr::{Distribution, StandardNormal};

use crate::seed;
use crate::text::tokenize;

/// Maps text to a fixed-width vector.
pub trait TextEncoder: Send + Sync {
    fn width(&self) -> usize;
    fn encode(&self, text: &str) -> Vec<f64>;
}

/// Hashed bag-of-words: each token is hashed with the seed to a pseudo-random
/// unit vector; a document is the L2-normalized sum of its token vectors.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HashedEncoder {
    pub width: usize,
    pub seed: u64,
}

impl HashedEncoder {
    pub fn new(width: usize, seed: u64) -> Self {
        assert!(width >= 2, "encoder width must be at least 2");
        HashedEncoder { width, seed }
    }

    pub fn token_vector(&self, token: &str) -> Vec<f64> {
        let mut rng = seed::rng(self.seed, &format!("token:{token}"));
        let mut v: Vec<f64> = (0..self.width).map(|_| StandardNormal.sample(&mut rng)).collect();
        normalize(&mut v);
        v
    }
}

impl TextEncoder for HashedEncoder {
    fn width(&self) -> usize {
        self.width
    }

    fn encode(&self, text: &str) -> Vec<f64> {
        encode_text(text, self.width, self.seed)
    }
}

pub fn encode_text(text: &str, width: usize, seed: u64) -> Vec<f64> {
    let enc = HashedEncoder::new(width, seed);
    let mut sum = vec![0.0; width];
    for token in tokenize(text) {
        for (s, t) in sum.iter_mut().zip(enc.token_vector(&token)) {
            *s += t;
        }
    }
    normalize(&mut sum);
    sum
}

fn normalize(v: &mut [f64]) {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        v.iter_mut().for_each(|x| *x /= norm);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_text_is_zero() {
        assert_eq!(encode_text("", 8, 1), vec![0.0; 8]);
        assert_eq!(encode_text("?!", 8, 1), vec![0.0; 8]);
    }

    #[test]
    fn deterministic_and_unit_norm() {
        let a = encode_text("the quick brown fox", 16, 9);
        assert_eq!(a, encode_text("the quick brown fox", 16, 9));
        assert_ne!(a, encode_text("the quick brown fox", 16, 10));
        let n: f64 = a.iter().map(|x| x * x).sum();
        assert!((n - 1.0).abs() < 1e-12);
        // Case and punctuation are tokenized away.
        assert_eq!(a, encode_text("The QUICK, brown fox!", 16, 9));
    }
}
