use dsfcn::cascade::{train_stage, CascadeConfig, Stage, TrainOptions};
use dsfcn::data::{synth_generate, SynthConfig};
use dsfcn::grad::SgdConfig;
use dsfcn::model::{build_fcn, FcnConfig};

/// Parameter count walked from the architecture description: a 3x3 stem,
/// per scale a strided 3x3 conv plus residual blocks of two 3x3 convs, a 1x1
/// head and one 4x4 transposed conv per scale, all with biases.
fn count_by_hand(c: &FcnConfig) -> usize {
    let conv = |o: usize, i: usize, k: usize| o * i * k * k + o;
    let w = |s: usize| c.base_channels << s;
    let mut n = conv(w(0), c.in_channels, 3) + conv(c.num_classes, w(0), 1);
    for s in 1..=c.num_scales {
        n += conv(w(s), w(s - 1), 3);
        n += c.blocks_per_scale * 2 * conv(w(s), w(s), 3);
        n += w(s) * w(s - 1) * 16 + w(s - 1);
    }
    n
}

#[test]
fn parameter_count_follows_the_architecture() {
    for base in [2, 4, 8] {
        for cfg in [FcnConfig::stage1(), FcnConfig::stage2(), FcnConfig { num_scales: 2, blocks_per_scale: 1, ..FcnConfig::stage1() }] {
            let cfg = FcnConfig { base_channels: base, ..cfg };
            let doubled = FcnConfig { base_channels: 2 * base, ..cfg };
            let (a, b) = (build_fcn(cfg, 0).unwrap(), build_fcn(doubled, 0).unwrap());
            assert_eq!(a.param_count(), count_by_hand(&cfg));
            assert_eq!(b.param_count(), count_by_hand(&doubled));
            assert_eq!(
                b.param_count() as f64 / a.param_count() as f64,
                count_by_hand(&doubled) as f64 / count_by_hand(&cfg) as f64
            );
        }
    }
}

#[test]
fn single_sample_loss_drops_ninety_percent() {
    let sample = synth_generate(&SynthConfig { count: 1, size: 64, seed: 5, disk_radius: (0.2, 0.25), ..Default::default() })
        .unwrap();
    let model = build_fcn(FcnConfig { base_channels: 8, num_scales: 3, ..FcnConfig::stage1() }, 1).unwrap();
    let opts = TrainOptions {
        sgd: SgdConfig { learning_rate: 0.1, epochs: 500, batch_size: 1 },
        cascade: CascadeConfig { target: 64, stage2_size: 64, ..CascadeConfig::desk() },
        augment: None,
        seed: 2,
    };
    let (_, losses) = train_stage(model, &sample, Stage::One, None, &opts).unwrap();
    assert_eq!(losses.len(), 500);
    assert!(losses.iter().all(|l| l.is_finite()));
    let (first, last) = (losses[0], *losses.last().unwrap());
    assert!(last <= 0.1 * first, "loss {first} -> {last}");
}
