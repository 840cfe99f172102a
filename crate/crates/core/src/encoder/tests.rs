use super::*;
use crate::nn::standard_normal;
use crate::rng::seeded;

fn toy_config() -> EncoderConfig {
    EncoderConfig {
        stem_channels: 4,
        stage_channels: [4, 8, 8, 8],
        extra_blocks: 1,
        fpn_channels: 8,
        norm_groups: 2,
        roi_size: 3,
        head_convs: 2,
        head_hidden: 16,
        embed_dim: 8,
    }
}

fn random_input<T: Real>(h: usize, w: usize, seed: u64) -> FeatureMap<T> {
    let mut rng = seeded(seed);
    FeatureMap::from_vec(3, h, w, (0..3 * h * w).map(|_| T::of(standard_normal(&mut rng))).collect())
}

#[test]
fn pyramid_strides_follow_input_size() {
    let enc = Encoder::new(toy_config()).unwrap();
    let params: Vec<f32> = enc.init_params(&mut seeded(1));
    let p = enc.backbone_fpn(&params, &random_input(128, 128, 2)).unwrap();
    let sizes: Vec<_> = p.levels.iter().map(|m| (m.height, m.width)).collect();
    assert_eq!(sizes, [(32, 32), (16, 16), (8, 8), (4, 4)]);
    assert!(p.levels.iter().all(|m| m.channels == 8));
    let big = enc.backbone_fpn(&params, &random_input(256, 256, 2)).unwrap();
    for (a, b) in p.levels.iter().zip(&big.levels) {
        assert_eq!((b.height, b.width), (2 * a.height, 2 * a.width));
    }
}

#[test]
fn non_multiple_of_32_is_rejected() {
    let enc = Encoder::new(toy_config()).unwrap();
    let params: Vec<f32> = enc.init_params(&mut seeded(1));
    assert!(matches!(
        enc.backbone_fpn(&params, &random_input(48, 64, 2)),
        Err(Error::InvalidArgument(_))
    ));
}

#[test]
fn forward_is_deterministic() {
    let enc = Encoder::new(toy_config()).unwrap();
    let params: Vec<f32> = enc.init_params(&mut seeded(1));
    let x = random_input(64, 64, 3);
    assert_eq!(enc.backbone_fpn(&params, &x).unwrap(), enc.backbone_fpn(&params, &x).unwrap());
}

#[test]
fn embeddings_are_four_unit_vectors() {
    let enc = Encoder::new(EncoderConfig::default()).unwrap();
    let params: Vec<f32> = enc.init_params(&mut seeded(4));
    let b = BoundingBox::new(5.0, 9.0, 41.0, 50.0).unwrap();
    let e = enc.extract_embeddings(&params, &random_input(64, 64, 5), &b).unwrap();
    assert_eq!(e.levels.len(), LEVELS);
    assert!(e.levels.iter().all(|l| l.len() == 128));
    assert!(e.max_norm_error() < 1e-5);
    let many = enc.extract_many(&params, &random_input(64, 64, 5), &[b, b]).unwrap();
    for (a, b) in many[0].levels.iter().zip(&e.levels) {
        assert!(a.iter().zip(b).all(|(x, y)| (x - y).abs() < 1e-6));
    }
}

fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-7)
}

#[test]
fn gradients_match_central_differences() {
    let enc = Encoder::new(toy_config()).unwrap();
    let params: Vec<f64> = enc.init_params(&mut seeded(21));
    let input = random_input::<f64>(32, 32, 22);
    let b = BoundingBox::new(3.5, 6.0, 27.0, 25.5).unwrap();
    let mut rng = seeded(23);
    let probe: [Vec<f64>; LEVELS] = core::array::from_fn(|_| (0..8).map(|_| standard_normal(&mut rng)).collect());
    let objective = |p: &[f64]| -> f64 {
        let e = enc.extract_embeddings(p, &input, &b).unwrap();
        e.levels.iter().zip(&probe).map(|(l, w)| l.iter().zip(w).map(|(a, b)| a * b).sum::<f64>()).sum()
    };
    let (_, cache) = enc.embed_with_cache(&params, &input, &b).unwrap();
    let mut grads = vec![0.0; params.len()];
    enc.backward(&params, &cache, &probe, &mut grads);
    let n = params.len();
    let h = 1e-6;
    let mut checked = 0;
    for i in (0..n).step_by(n / 50 + 1) {
        let mut p = params.clone();
        p[i] += h;
        let up = objective(&p);
        p[i] -= 2.0 * h;
        let down = objective(&p);
        let fd = (up - down) / (2.0 * h);
        assert!(relative_error(fd, grads[i]) < 1e-4, "param {i}: analytic {} vs fd {fd}", grads[i]);
        checked += 1;
    }
    assert!(checked >= 40);
}

#[test]
fn momentum_blend_examples() {
    let mut pair = EncoderPair { query: vec![0.0f64, 2.0], key: vec![1.0, 1.0], momentum: 1.0 };
    momentum_update(&mut pair).unwrap();
    assert_eq!(pair.key, vec![1.0, 1.0]);
    pair.momentum = 0.0;
    momentum_update(&mut pair).unwrap();
    assert_eq!(pair.key, pair.query);
    let mut pair = EncoderPair { query: vec![0.0f64], key: vec![1.0], momentum: 0.99 };
    momentum_update(&mut pair).unwrap();
    assert!((pair.key[0] - 0.99).abs() < 1e-15);
    assert_eq!(pair.query, vec![0.0]);
}

#[test]
fn momentum_shape_mismatch_is_corruption() {
    let mut pair = EncoderPair { query: vec![0.0f32; 3], key: vec![0.0; 2], momentum: 0.9 };
    assert!(matches!(momentum_update(&mut pair), Err(Error::CorruptedCheckpoint(_))));
}

#[test]
fn momentum_strictly_shrinks_divergence() {
    let enc = Encoder::new(toy_config()).unwrap();
    let mut rng = seeded(8);
    let mut pair: EncoderPair<f64> = EncoderPair::new(&enc, 0.9, &mut rng).unwrap();
    assert_eq!(pair.divergence(), 0.0);
    momentum_update(&mut pair).unwrap();
    // equal sides are a fixed point up to rounding of m*k + (1-m)*k
    assert!(pair.divergence() < 1e-12);
    pair.query = enc.init_params(&mut rng);
    let mut last = pair.divergence();
    for _ in 0..5 {
        momentum_update(&mut pair).unwrap();
        let d = pair.divergence();
        assert!(d < last);
        last = d;
    }
}
