use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// FNV-1a, stable across platforms and toolchains.
fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325, |h, &b| {
        (h ^ u64::from(b)).wrapping_mul(0x0100_0000_01b3)
    })
}

/// Deterministic stand-in for a contextual word embedding: components are
/// drawn uniformly from `[-1, 1]` by a generator seeded with a hash of `text`.
pub fn pseudo_embed(text: &str, d_emb: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(fnv1a(text.as_bytes()));
    (0..d_emb).map(|_| rng.gen_range(-1.0..=1.0)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_sized() {
        let a = pseudo_embed("hello", 768);
        assert_eq!(a.len(), 768);
        assert_eq!(a, pseudo_embed("hello", 768));
        assert!(a.iter().all(|v| (-1.0..=1.0).contains(v)));
    }

    #[test]
    fn distinct_words_differ() {
        let words = ["the", "a", "hello", "world", ",", "Hello", "speech", "face", ""];
        let vecs: Vec<_> = words.iter().map(|w| pseudo_embed(w, 16)).collect();
        for i in 0..vecs.len() {
            for j in i + 1..vecs.len() {
                assert_ne!(vecs[i], vecs[j], "{} vs {}", words[i], words[j]);
            }
        }
    }
}
