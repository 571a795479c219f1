use rand::seq::SliceRandom;

use crate::model::Permutation;
use crate::rng::SeedRng;

/// Uniform draw over all `layers!` orders (Fisher-Yates).
pub fn sample_permutation(rng: &mut SeedRng, layers: usize) -> Permutation {
    let mut order: Vec<usize> = (0..layers).collect();
    order.shuffle(rng);
    Permutation::new(order).expect("shuffle of 0..L is a permutation")
}

/// Uniformly random order of an arbitrary set of layers.
pub fn shuffle_layers(rng: &mut SeedRng, layers: &[usize]) -> Vec<usize> {
    let mut order = layers.to_vec();
    order.shuffle(rng);
    order
}

/// Layers surviving LayerDrop, in increasing order. Each layer is dropped
/// independently with probability `drop_prob`; if every layer drops, one
/// uniformly chosen layer is kept.
pub fn layerdrop_mask(rng: &mut SeedRng, layers: usize, drop_prob: f64) -> Vec<usize> {
    let kept: Vec<usize> = (0..layers).filter(|_| !rng.bernoulli(drop_prob)).collect();
    if kept.is_empty() && layers > 0 {
        vec![rng.below(layers)]
    } else {
        kept
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_layer_permutation() {
        let mut rng = SeedRng::new(0);
        assert_eq!(sample_permutation(&mut rng, 1).as_slice(), &[0]);
    }

    #[test]
    fn same_seed_same_draws() {
        let draw = |seed| {
            let mut rng = SeedRng::new(seed);
            (0..10)
                .map(|_| sample_permutation(&mut rng, 6))
                .collect::<Vec<_>>()
        };
        assert_eq!(draw(3), draw(3));
        assert_ne!(draw(3), draw(4));
    }

    #[test]
    fn layerdrop_zero_keeps_everything() {
        let mut rng = SeedRng::new(1);
        for _ in 0..100 {
            assert_eq!(layerdrop_mask(&mut rng, 6, 0.0), vec![0, 1, 2, 3, 4, 5]);
        }
    }

    #[test]
    fn layerdrop_never_empty() {
        let mut rng = SeedRng::new(2);
        for _ in 0..1000 {
            let kept = layerdrop_mask(&mut rng, 3, 0.95);
            assert!(!kept.is_empty());
            assert!(kept.windows(2).all(|w| w[0] < w[1]));
        }
    }
}
