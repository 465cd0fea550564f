mod common;

use asymgan::datamodel::DomainLabel;
use asymgan::discriminators::{build_discriminator_with, receptive_field, DiscriminatorSpec};
use asymgan::generators::{build_pair, build_pair_with, ArchRegistry, ArchTier, Guidance, SharingMode};
use asymgan::losses::domain_cls;
use asymgan::nn::{Activation, ConvGeom, ConvUnit, ParamBuilder};
use candle_core::{DType, Device, Tensor, Var};
use common::{label_pair, skeleton_pair};
use proptest::prelude::*;

const MB: f64 = 1e6;

fn near(got: usize, expect: f64, rel: f64) -> bool {
    (got as f64 - expect).abs() <= rel * expect
}

#[test]
fn single_conv_count() {
    let mut pb = ParamBuilder::new(0, DType::F32, &Device::Cpu);
    let geom = ConvGeom {
        kernel: 3,
        stride: 1,
        padding: 1,
    };
    ConvUnit::conv(&mut pb, "c", 3, 8, geom, false, Activation::Relu).unwrap();
    assert_eq!(pb.finish().count(), 224);
}

#[test]
fn capacity_table() {
    let s1 = build_pair(&label_pair(ArchTier::TierIII, ArchTier::TierI, SharingMode::None, 3), 3, 64, 0).unwrap();
    assert!(near(s1.translate.count_parameters(), 8.4 * MB, 0.15));
    assert!(near(s1.reconstruct.count_parameters(), 2.9e3, 0.15));

    let s2 = build_pair(&label_pair(ArchTier::TierIII, ArchTier::TierII, SharingMode::None, 3), 3, 64, 0).unwrap();
    assert!(near(s2.count_parameters(), 8.4 * MB + 1.3 * MB, 0.15));

    let s3 = build_pair(&label_pair(ArchTier::TierIII, ArchTier::TierIII, SharingMode::None, 3), 3, 64, 0).unwrap();
    assert!(near(s3.count_parameters(), 16.8 * MB, 0.15));

    let sup = build_pair(
        &skeleton_pair(
            ArchTier::Resnet9 { base_width: 64 },
            ArchTier::Resnet9 { base_width: 4 },
            SharingMode::None,
        ),
        3,
        64,
        0,
    )
    .unwrap();
    assert!(near(sup.translate.count_parameters(), 11.388 * MB, 0.05));
    assert!(near(sup.reconstruct.count_parameters(), 0.046 * MB, 0.25));
}

#[test]
fn sharing_arithmetic() {
    for (t, r) in [(ArchTier::TierI, ArchTier::TierI), (ArchTier::TierII, ArchTier::TierIII)] {
        let none = build_pair(&label_pair(t, r, SharingMode::None, 3), 3, 16, 1).unwrap();
        let partial = build_pair(&label_pair(t, r, SharingMode::PartialEncoder, 3), 3, 16, 1).unwrap();
        assert_eq!(
            partial.count_parameters(),
            none.count_parameters() - none.translate.encoder_parameters()
        );
        assert_eq!(partial.shared_params().count(), none.translate.encoder_parameters());
    }
    let full = build_pair(&label_pair(ArchTier::TierII, ArchTier::TierII, SharingMode::Full, 3), 3, 16, 1).unwrap();
    assert_eq!(full.count_parameters(), full.translate.count_parameters());
    assert!(full.reconstruct_update_params().is_empty());
}

#[test]
fn full_sharing_means_identical_outputs() {
    let pair = build_pair(&label_pair(ArchTier::TierI, ArchTier::TierI, SharingMode::Full, 3), 3, 16, 2).unwrap();
    let x = Tensor::rand(-1f32, 1.0, (2, 3, 16, 16), &Device::Cpu).unwrap();
    let labels = [DomainLabel::new(0, 3).unwrap(), DomainLabel::new(2, 3).unwrap()];
    let z = Guidance::domains(&labels, DType::F32, &Device::Cpu).unwrap();
    let a = pair.translate.forward(&x, &z).unwrap();
    let b = pair.reconstruct.forward(&x, &z).unwrap();
    let d: f32 = (a - b).unwrap().abs().unwrap().max_all().unwrap().to_scalar().unwrap();
    assert_eq!(d, 0.0);
}

#[test]
fn output_depends_on_label() {
    for tier in [ArchTier::TierI, ArchTier::TierII] {
        let pair = build_pair(&label_pair(tier, ArchTier::TierI, SharingMode::None, 4), 3, 16, 3).unwrap();
        let x = Tensor::rand(-1f32, 1.0, (1, 3, 16, 16), &Device::Cpu).unwrap();
        let mut outs = Vec::new();
        for k in 0..4 {
            let z = Guidance::domains(&[DomainLabel::new(k, 4).unwrap()], DType::F32, &Device::Cpu).unwrap();
            outs.push(pair.translate.forward(&x, &z).unwrap());
        }
        for k in 1..4 {
            let d: f32 = (&outs[0] - &outs[k]).unwrap().abs().unwrap().max_all().unwrap().to_scalar().unwrap();
            assert!(d > 1e-6, "{tier}: label {k} gives the same output");
        }
    }
}

#[test]
fn skeleton_guidance_shapes() {
    let pair = build_pair(
        &skeleton_pair(
            ArchTier::Resnet9 { base_width: 4 },
            ArchTier::Resnet9 { base_width: 4 },
            SharingMode::PartialEncoder,
        ),
        3,
        16,
        4,
    )
    .unwrap();
    let x = Tensor::rand(-1f32, 1.0, (2, 3, 16, 16), &Device::Cpu).unwrap();
    let s = Tensor::rand(0f32, 1.0, (2, 3, 16, 16), &Device::Cpu).unwrap();
    let y = pair.translate.forward(&x, &Guidance::Skeleton(s)).unwrap();
    assert_eq!(y.dims(), &[2, 3, 16, 16]);
    let bad = Tensor::rand(0f32, 1.0, (2, 3, 8, 8), &Device::Cpu).unwrap();
    assert!(pair.translate.forward(&x, &Guidance::Skeleton(bad)).is_err());
}

#[test]
fn registry_accepts_custom_architecture() {
    let mut reg = ArchRegistry::default();
    reg.register("tier_i", |_| Ok(Box::new(asymgan::generators::TierOne { width: 3 })));
    let spec = label_pair(ArchTier::TierI, ArchTier::TierI, SharingMode::None, 2);
    let narrow = build_pair_with(&reg, &spec, 3, 8, 0, DType::F32).unwrap();
    let stock = build_pair(&spec, 3, 8, 0).unwrap();
    assert!(narrow.count_parameters() < stock.count_parameters());
}

#[test]
fn patch_geometry() {
    assert_eq!(receptive_field(&[(4, 2), (4, 2), (4, 2), (4, 1), (4, 1)]), 70);
    let spec = DiscriminatorSpec::triplet(3, 3);
    assert_eq!(spec.receptive_field(), 70);
    let d = build_discriminator_with(&spec, 128, 0, DType::F32, &Device::Cpu).unwrap();
    let x = Tensor::rand(-1f32, 1.0, (1, 3, 128, 128), &Device::Cpu).unwrap();
    let l = Tensor::rand(0f32, 1.0, (1, 3, 128, 128), &Device::Cpu).unwrap();
    let out = d.forward_triplet(&x, &l, &x).unwrap();
    // 128 -> 64 -> 32 -> 16, then two 4x4 stride-1 pad-1 layers: 15, 14
    assert_eq!(out[0].src_map.dims(), &[1, 1, 14, 14]);
    assert_eq!(spec.src_map_size(128), Some(14));
}

#[test]
fn dual_discriminator_outputs() {
    let spec = DiscriminatorSpec::multidomain(3, 3).with_base_width(8).with_dual(true);
    let d = build_discriminator_with(&spec, 32, 0, DType::F32, &Device::Cpu).unwrap();
    let x = Tensor::rand(-1f32, 1.0, (2, 3, 32, 32), &Device::Cpu).unwrap();
    let outs = d.forward_multidomain(&x).unwrap();
    assert_eq!(outs.len(), 2);
    assert_eq!(outs[0].src_map.dims(), &[2, 1, 4, 4]);
    assert_eq!(outs[1].src_map.dims(), &[2, 1, 2, 2]);
    for o in &outs {
        assert_eq!(o.class_logits.as_ref().unwrap().dims(), &[2, 3]);
    }
}

#[test]
fn classification_loss_reaches_the_input() {
    let spec = DiscriminatorSpec::multidomain(3, 2).with_base_width(4);
    let d = build_discriminator_with(&spec, 16, 0, DType::F64, &Device::Cpu).unwrap();
    let x = Var::from_tensor(&Tensor::rand(-1f64, 1.0, (1, 3, 16, 16), &Device::Cpu).unwrap()).unwrap();
    let outs = d.forward_multidomain(x.as_tensor()).unwrap();
    let loss = domain_cls(outs[0].class_logits.as_ref().unwrap(), &[DomainLabel::new(1, 3).unwrap()]).unwrap();
    let grads = loss.backward().unwrap();
    let g = grads.get(x.as_tensor()).unwrap();
    let n: f64 = g.sqr().unwrap().sum_all().unwrap().to_scalar().unwrap();
    assert!(n > 0.0);
    for p in d.params().vars() {
        if let Some(gp) = grads.get(p.as_tensor()) {
            let v: f64 = gp.abs().unwrap().sum_all().unwrap().to_scalar().unwrap();
            assert!(v.is_finite());
        }
    }
}

#[test]
fn patch_scores_are_local() {
    // Changing one corner leaves far-away patch scores untouched.
    let spec = DiscriminatorSpec::multidomain(2, 3).with_base_width(4);
    let d = build_discriminator_with(&spec, 128, 0, DType::F32, &Device::Cpu).unwrap();
    let x = Tensor::rand(-1f32, 1.0, (1, 3, 128, 128), &Device::Cpu).unwrap();
    let corner = Tensor::ones((1, 3, 8, 8), DType::F32, &Device::Cpu).unwrap();
    let y = x.slice_assign(&[0..1, 0..3, 0..8, 0..8], &corner).unwrap();
    let a = d.forward_multidomain(&x).unwrap()[0].src_map.clone();
    let b = d.forward_multidomain(&y).unwrap()[0].src_map.clone();
    let s = a.dim(3).unwrap();
    let far = |t: &Tensor| t.narrow(2, s - 4, 4).unwrap().narrow(3, s - 4, 4).unwrap();
    let diff: f32 = (far(&a) - far(&b)).unwrap().abs().unwrap().max_all().unwrap().to_scalar().unwrap();
    // instance norm couples all positions, so only approximate locality holds
    let near_diff: f32 = (a.narrow(2, 0, 1).unwrap().narrow(3, 0, 1).unwrap()
        - b.narrow(2, 0, 1).unwrap().narrow(3, 0, 1).unwrap())
    .unwrap()
    .abs()
    .unwrap()
    .max_all()
    .unwrap()
    .to_scalar()
    .unwrap();
    assert!(diff < near_diff);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn receptive_field_grows_with_depth(n in 1usize..6) {
        let a = DiscriminatorSpec::multidomain(3, n).receptive_field();
        let b = DiscriminatorSpec::multidomain(3, n + 1).receptive_field();
        prop_assert!(b > a);
    }

    #[test]
    fn generators_keep_shape_and_range(seed in 0u64..1000, k in 0usize..3) {
        let pair = build_pair(&label_pair(ArchTier::TierI, ArchTier::TierI, SharingMode::None, 3), 3, 8, seed).unwrap();
        let x = Tensor::rand(-1f32, 1.0, (1, 3, 8, 8), &Device::Cpu).unwrap();
        let z = Guidance::domains(&[DomainLabel::new(k, 3).unwrap()], DType::F32, &Device::Cpu).unwrap();
        let y = pair.translate.forward(&x, &z).unwrap();
        prop_assert_eq!(y.dims(), x.dims());
        let m: f32 = y.abs().unwrap().max_all().unwrap().to_scalar().unwrap();
        prop_assert!(m <= 1.0);
    }
}
