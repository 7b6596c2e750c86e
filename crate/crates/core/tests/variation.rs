mod common;

use std::collections::HashMap;

use common::{rng, uniform};
use easyens::variation::{
    augment_an, draw_transforms, generate_mask, jitter, mask_mn, modality_group, repeat_rn, rotation_augment, scale,
    shift, AugmentationSet, MaskTensor, ModalityLayout, Rotation, Stage, Transform, Variationer,
};
use easyens::Tensor;
use proptest::prelude::*;

#[test]
fn pairs_of_two_from_four_are_uniform() {
    let mut r = rng(1);
    let draws = 10_000;
    let mut counts: HashMap<(usize, usize), usize> = HashMap::new();
    for _ in 0..draws {
        let d = draw_transforms(4, 2, &mut r).unwrap();
        assert_ne!(d[0], d[1]);
        *counts.entry((d[0].min(d[1]), d[0].max(d[1]))).or_default() += 1;
    }
    assert_eq!(counts.len(), 6);
    for (pair, c) in counts {
        let f = c as f64 / draws as f64;
        assert!((f - 1.0 / 6.0).abs() <= 0.02, "pair {pair:?}: {f}");
    }
}

#[test]
fn rotations_are_uniform_over_48_variants() {
    let draws = 10_000;
    // Distinct magnitudes identify the permutation, signs the flips.
    let x = Tensor::from_fn(&[draws, 3, 1], |i| (i % 3 + 1) as f64);
    let y = rotation_augment(&x, &mut rng(2)).unwrap();
    let mut counts = vec![0usize; Rotation::COUNT];
    for row in y.data().chunks_exact(3) {
        let rot = Rotation {
            perm: [0, 1, 2].map(|a| row[a].abs() as usize - 1),
            flip: [0, 1, 2].map(|a| row[a] < 0.0),
        };
        counts[rot.index()] += 1;
    }
    for (i, c) in counts.iter().enumerate() {
        let f = *c as f64 / draws as f64;
        assert!((f - 1.0 / 48.0).abs() <= 0.01, "variant {i}: {f}");
    }
}

#[test]
fn jitter_noise_has_requested_std() {
    let x = uniform(&[10, 10, 1000], &mut rng(3));
    for sigma in [0.05, 0.2] {
        let y = jitter(&x, sigma, &mut rng(4)).unwrap();
        let d: Vec<f64> = y.data().iter().zip(x.data()).map(|(a, b)| a - b).collect();
        let mean = d.iter().sum::<f64>() / d.len() as f64;
        let sd = (d.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (d.len() - 1) as f64).sqrt();
        assert!((sd / sigma - 1.0).abs() <= 0.05, "sigma {sigma}: sample std {sd}");
    }
}

#[test]
fn zero_strength_transforms_are_identity() {
    let x = uniform(&[2, 3, 16], &mut rng(5));
    let mut r = rng(6);
    assert_eq!(jitter(&x, 0.0, &mut r).unwrap(), x);
    assert_eq!(scale(&x, 0.0, &mut r).unwrap(), x);
    assert_eq!(shift(&x, 0.0, &mut r).unwrap(), x);
}

#[test]
fn identity_transforms_augment_like_repeat() {
    let x = uniform(&[2, 3, 8], &mut rng(7));
    let set = AugmentationSet::new(vec![Transform::Identity; 4]);
    assert_eq!(augment_an(&x, &set, 4, &mut rng(8)).unwrap(), repeat_rn(&x, 4).unwrap());
}

#[test]
fn four_standard_augmentations_are_a_permutation() {
    let x = uniform(&[1, 3, 64], &mut rng(9));
    let set = AugmentationSet::standard();
    let y = augment_an(&x, &set, 4, &mut rng(10)).unwrap();
    // The scale and shift copies are exact per-channel affine maps of the
    // source; the two jitter copies are not.
    let copies: Vec<Tensor<f64>> = (0..4).map(|g| y.channel_slice(3 * g, 3 * g + 3).unwrap()).collect();
    let affine = |c: &Tensor<f64>| {
        c.data().chunks_exact(64).zip(x.data().chunks_exact(64)).all(|(a, b)| {
            let d: Vec<f64> = a.iter().zip(b).map(|(p, q)| p - q).collect();
            let ratio: Vec<f64> = a.iter().zip(b).map(|(p, q)| p / q).collect();
            d.iter().all(|v| (v - d[0]).abs() < 1e-12) || ratio.iter().all(|v| (v - ratio[0]).abs() < 1e-9)
        })
    };
    assert_eq!(copies.iter().filter(|c| affine(c)).count(), 2);
}

#[test]
fn masks_drop_each_group_once_in_a_square_batch() {
    let m = generate_mask(4, 4, &mut rng(11)).unwrap();
    assert_eq!(m.column_sums(), vec![3, 3, 3, 3]);
    for i in 0..4 {
        assert_eq!(m.row_sum(i), 3);
    }
}

#[test]
fn different_seeds_give_different_masks() {
    let a = generate_mask(16, 4, &mut rng(12)).unwrap();
    let b = generate_mask(16, 4, &mut rng(13)).unwrap();
    assert_ne!(a, b);
}

#[test]
fn masked_block_is_zero() {
    let x = repeat_rn(&uniform(&[1, 3, 8], &mut rng(14)), 4).unwrap();
    let m = MaskTensor::new(1, 4, vec![true, true, true, false]).unwrap();
    let y = mask_mn(&x, &m).unwrap();
    assert!(y.channel_slice(9, 12).unwrap().data().iter().all(|&v| v == 0.0));
    assert_eq!(y.channel_slice(0, 9).unwrap(), x.channel_slice(0, 9).unwrap());
    assert_eq!(mask_mn(&x, &MaskTensor::all_true(1, 4)).unwrap(), x);
}

#[test]
fn modality_layouts() {
    let x = uniform(&[2, 9, 8], &mut rng(15));
    let (y, n) = modality_group(&x, &ModalityLayout::uci_har()).unwrap();
    assert_eq!((n, y.shape()[1]), (3, 9));

    let x = uniform(&[2, 40, 8], &mut rng(16));
    let (y, n) = modality_group(&x, &ModalityLayout::pamap2()).unwrap();
    assert_eq!((n, y.shape()[1]), (14, 42));

    let x = uniform(&[2, 3, 8], &mut rng(17));
    let (y, n) = modality_group(&x, &ModalityLayout::single(3)).unwrap();
    assert_eq!((n, &y), (1, &x));
}

#[test]
fn composed_pipelines_multiply_group_counts() {
    let aug = AugmentationSet::standard();
    for (stages, n) in [
        (vec![Stage::Repeat(4), Stage::Augment(4)], 16),
        (vec![Stage::Repeat(4), Stage::Mask(4)], 16),
        (vec![Stage::Augment(4), Stage::Mask(4)], 16),
    ] {
        let v = Variationer::compose(stages, aug.clone(), None).unwrap();
        assert_eq!(v.total_n(), n);
        let x = uniform(&[8, 3, 16], &mut rng(18));
        let out = v.apply(&x, true, &mut rng(19)).unwrap();
        assert_eq!(out.x.shape(), &[8, 3 * n, 16]);
        assert_eq!(v.apply(&x, false, &mut rng(19)).unwrap().x, repeat_rn(&x, n).unwrap());
    }
    let modr4 = Variationer::compose(vec![Stage::Mod, Stage::Repeat(4)], aug.clone(), Some(ModalityLayout::uci_har())).unwrap();
    assert_eq!((modr4.total_n(), modr4.output_channels(9)), (12, 36));
    assert!(Variationer::compose(vec![Stage::Repeat(2), Stage::Mod], aug, Some(ModalityLayout::uci_har())).is_err());
}

#[test]
fn repeat_then_mask_masks_whole_repeats() {
    let v = Variationer::compose(vec![Stage::Repeat(2), Stage::Mask(4)], AugmentationSet::standard(), None).unwrap();
    let x = uniform(&[8, 3, 4], &mut rng(20));
    let out = v.apply(&x, true, &mut rng(21)).unwrap();
    let mask = out.mask.unwrap();
    assert_eq!(mask.n(), 8);
    for i in 0..8 {
        assert_eq!(mask.row_sum(i), 6);
        for g in 0..8 {
            let block = out.x.select_rows(&[i]).channel_slice(3 * g, 3 * g + 3).unwrap();
            assert_eq!(block.data().iter().all(|&v| v == 0.0), !mask.get(i, g));
        }
    }
    assert!((v.training_lambda().unwrap() - 4.0 / (8.0 * 3.0)).abs() < 1e-15);
}

proptest! {
    #[test]
    fn repeat_copies_are_the_source(b in 1usize..4, c in 1usize..5, w in 1usize..9, n in 1usize..6, seed in any::<u64>()) {
        let x = uniform(&[b, c, w], &mut rng(seed));
        let y = repeat_rn(&x, n).unwrap();
        prop_assert_eq!(y.shape(), &[b, c * n, w]);
        for g in 0..n {
            prop_assert_eq!(&y.channel_slice(g * c, (g + 1) * c).unwrap(), &x);
        }
    }

    #[test]
    fn masks_are_balanced(batch in 1usize..40, n in 2usize..9, seed in any::<u64>()) {
        let m = generate_mask(batch, n, &mut rng(seed)).unwrap();
        for i in 0..batch {
            prop_assert_eq!(m.row_sum(i), n - 1);
        }
        let cols = m.column_sums();
        let dropped: Vec<usize> = cols.iter().map(|c| batch - c).collect();
        prop_assert!(dropped.iter().max().unwrap() - dropped.iter().min().unwrap() <= 1);
    }

    #[test]
    fn rotation_preserves_triplet_norms(b in 1usize..4, t in 1usize..4, w in 1usize..6, seed in any::<u64>()) {
        let x = uniform(&[b, 3 * t, w], &mut rng(seed));
        let y = rotation_augment(&x, &mut rng(seed ^ 1)).unwrap();
        for i in 0..b {
            for k in 0..t {
                for s in 0..w {
                    let norm = |z: &Tensor<f64>| (0..3).map(|a| z.data()[((i * 3 * t) + 3 * k + a) * w + s].powi(2)).sum::<f64>();
                    prop_assert!((norm(&x) - norm(&y)).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn output_channels_predicts_apply(r in 1usize..4, a in 1usize..5, m in 2usize..4, order in 0usize..3, seed in any::<u64>()) {
        let stages = match order {
            0 => vec![Stage::Repeat(r), Stage::Augment(a)],
            1 => vec![Stage::Augment(a), Stage::Mask(m)],
            _ => vec![Stage::Repeat(r), Stage::Mask(m)],
        };
        let v = Variationer::compose(stages, AugmentationSet::standard(), None).unwrap();
        let x = uniform(&[4, 3, 5], &mut rng(seed));
        let out = v.apply(&x, true, &mut rng(seed ^ 2)).unwrap();
        prop_assert_eq!(out.x.shape()[1], v.output_channels(3));
        prop_assert_eq!(out.x.shape()[1], 3 * v.total_n());
        if let Some(mask) = out.mask {
            prop_assert_eq!(mask.n(), v.total_n());
        }
    }
}
