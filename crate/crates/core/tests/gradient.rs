mod common;

use common::{fd_triplet_gradient, relative_error};
use kgrefine::encoder::{backward, EncoderConfig, EncoderParams};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const MARGIN: f64 = 5.0;

/// Perturbs every weight (gains and biases included) so the check does not
/// sit at the structured initialization.
fn random_point(config: EncoderConfig, seed: u64) -> EncoderParams {
    let mut p = EncoderParams::init(EncoderConfig { init_seed: seed, ..config }).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabcdef);
    for v in p.values_mut() {
        *v += rng.gen_range(-0.3..0.3);
    }
    p
}

fn random_ids(rng: &mut ChaCha8Rng, vocab: usize, max_len: usize) -> Vec<u32> {
    let len = rng.gen_range(1..=max_len);
    (0..len).map(|_| rng.gen_range(2..vocab as u32)).collect()
}

#[test]
fn bag_hand_sized_example() {
    let mut p = EncoderParams::init(EncoderConfig::bag(5, 2)).unwrap();
    p.token_row_mut(2).copy_from_slice(&[0.5, -0.2]);
    p.token_row_mut(3).copy_from_slice(&[0.1, 0.4]);
    p.token_row_mut(4).copy_from_slice(&[-0.3, 0.2]);
    let ids: [&[u32]; 3] = [&[2, 3], &[3], &[4, 2]];
    let (eval, grad) = backward(&p, ids, MARGIN).unwrap();
    assert!(eval.active());
    let fd = fd_triplet_gradient(&p, ids, MARGIN, 1e-6);
    assert!(relative_error(&grad, &fd) <= 1e-4, "{grad:?} vs {fd:?}");
    // rows 0 and 1 never appear
    assert!(grad[..4].iter().all(|&g| g == 0.0));
}

#[test]
fn bag_gradient_at_twenty_random_points() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for point in 0..20 {
        let p = random_point(EncoderConfig::bag(12, 6), point);
        let a = random_ids(&mut rng, 12, 5);
        let b = random_ids(&mut rng, 12, 5);
        let c = random_ids(&mut rng, 12, 5);
        let ids: [&[u32]; 3] = [&a, &b, &c];
        let (_, grad) = backward(&p, ids, MARGIN).unwrap();
        let fd = fd_triplet_gradient(&p, ids, MARGIN, 1e-6);
        let err = relative_error(&grad, &fd);
        assert!(err <= 1e-4, "point {point}: relative error {err}");
    }
}

#[test]
fn transformer_gradient_at_twenty_random_points() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for point in 0..20 {
        let mut config = EncoderConfig::transformer(10, 4, 1, 2);
        config.max_seq_len = 5;
        config.feedforward_dim = 6;
        let p = random_point(config, 100 + point);
        let a = random_ids(&mut rng, 10, 5);
        let b = random_ids(&mut rng, 10, 5);
        let c = random_ids(&mut rng, 10, 5);
        let ids: [&[u32]; 3] = [&a, &b, &c];
        let (_, grad) = backward(&p, ids, MARGIN).unwrap();
        let fd = fd_triplet_gradient(&p, ids, MARGIN, 1e-5);
        let err = relative_error(&grad, &fd);
        assert!(err <= 1e-3, "point {point}: relative error {err}");
    }
}

#[test]
fn two_layer_transformer_with_padding() {
    let mut config = EncoderConfig::transformer(9, 6, 2, 3);
    config.max_seq_len = 6;
    let p = random_point(config, 77);
    let ids: [&[u32]; 3] = [&[3, 4, 0, 0], &[5, 0, 6], &[7, 8, 2]];
    let (_, grad) = backward(&p, ids, MARGIN).unwrap();
    let fd = fd_triplet_gradient(&p, ids, MARGIN, 1e-5);
    assert!(relative_error(&grad, &fd) <= 1e-3);
}
