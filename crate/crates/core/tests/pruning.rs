use ecgprune::dataset::{generate_synthetic, stratified_split};
use ecgprune::io::{decode_model, encode_model, load_model, save_model};
use ecgprune::pruning::*;
use ecgprune::training::TrainConfig;
use ecgprune::{Model, Tensor};

const CONVS: [usize; 3] = [0, 3, 6];

type Data = (Vec<(Tensor, usize)>, Vec<(Tensor, usize)>);

fn data() -> Data {
    let set = generate_synthetic([10; 5], 0.05, 4).unwrap();
    let split = stratified_split(&set, [0.7, 0.15, 0.15], 4).unwrap();
    (split.train.examples(), split.val.examples())
}

fn cfg() -> TrainConfig {
    TrainConfig { epochs: 2, batch_size: 8, patience: 0, seed: 3, ..TrainConfig::default() }
}

fn zeros(model: &Model, layer: usize) -> usize {
    model.layer(layer).unwrap().weight.data().iter().filter(|&&w| w == 0.0).count()
}

fn masked_are_zero(model: &Model) -> bool {
    CONVS.iter().all(|&i| {
        let p = model.layer(i).unwrap();
        let mask = p.mask.as_ref().unwrap();
        p.weight.data().iter().enumerate().all(|(j, &w)| mask.keeps(j) || w == 0.0)
    })
}

#[derive(Default)]
struct Recorder {
    masked: Vec<Model>,
    epochs: Vec<(usize, Model)>,
}

impl PruneObserver for Recorder {
    fn epoch(&mut self, stage: usize, _epoch: usize, model: &Model) {
        self.epochs.push((stage, model.clone()));
    }
    fn masked(&mut self, _stage: usize, model: &Model) {
        self.masked.push(model.clone());
    }
}

#[test]
fn simple_prune_zero_counts() {
    let base = Model::build_baseline(8);
    for step in 0..=10 {
        let eta = step as f64 / 10.0;
        let m = simple_prune(&base, eta).unwrap();
        for &i in &CONVS {
            let n = m.layer(i).unwrap().weight.len();
            assert_eq!(zeros(&m, i), (eta * n as f64 + 1e-9).floor() as usize, "eta {eta} layer {i}");
            assert_eq!(m.masked_count(i), zeros(&m, i));
        }
        for i in [8, 9] {
            assert_eq!(m.layer(i), base.layer(i));
        }
    }
}

#[test]
fn finetune_freezes_every_conv_parameter() {
    let (tr, va) = data();
    let base = Model::build_baseline(8);
    let mut rec = Recorder::default();
    let out = prune_with_finetune_observed(&base, 0.6, &tr, &va, &cfg(), &mut rec).unwrap();
    let after_mask = &rec.masked[0];
    assert_eq!(rec.epochs.len(), 2);
    for (_, m) in rec.epochs.iter().chain([(0, out.clone())].iter()) {
        assert!(masked_are_zero(m));
        for &i in &CONVS {
            let (a, b) = (m.layer(i).unwrap(), after_mask.layer(i).unwrap());
            let bits = |t: &Tensor| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(&a.weight), bits(&b.weight), "conv {i} weights moved");
            assert_eq!(bits(&a.bias), bits(&b.bias), "conv {i} bias moved");
        }
    }
    assert_ne!(out.layer(9).unwrap().weight, base.layer(9).unwrap().weight);
}

#[test]
fn multistage_masks_one_layer_per_stage() {
    let (tr, va) = data();
    let base = Model::build_baseline(8);
    let eta = 0.5;
    let mut rec = Recorder::default();
    let out = multistage_prune_observed(&base, eta, &tr, &va, &cfg(), &mut rec).unwrap();
    assert_eq!(rec.masked.len(), 3);
    for (stage, m) in rec.masked.iter().enumerate() {
        for (pos, &i) in CONVS.iter().enumerate() {
            let n = m.layer(i).unwrap().weight.len();
            let want = if pos <= stage { pruned_count(eta, n) } else { 0 };
            assert_eq!(m.masked_count(i), want, "stage {stage} layer {i}");
        }
    }
    // Masks only ever grow, and masked weights stay at zero during every epoch.
    let mut prev: Option<&Model> = None;
    for (_, m) in &rec.epochs {
        assert!(masked_are_zero(m));
        if let Some(p) = prev {
            for &i in &CONVS {
                let (a, b) = (p.layer(i).unwrap().mask.as_ref().unwrap(), m.layer(i).unwrap().mask.as_ref().unwrap());
                assert!(a.bits().iter().zip(b.bits()).all(|(&ka, &kb)| ka || !kb));
            }
        }
        prev = Some(m);
    }
    for &i in &CONVS {
        assert_eq!(zeros(&out, i), pruned_count(eta, out.layer(i).unwrap().weight.len()));
    }
    assert!(out.has_trainable());
}

#[test]
fn strategies_leave_the_baseline_alone() {
    let (tr, va) = data();
    let base = Model::build_baseline(8);
    let snapshot = base.clone();
    for strategy in Strategy::ALL {
        let sc = StrategyConfig { strategy, sparsity: 0.4, finetune: cfg() };
        run_strategy(&base, &sc, &tr, &va).unwrap();
        let same = run_strategy(&base, &StrategyConfig { sparsity: 0.0, ..sc }, &tr, &va).unwrap();
        assert_eq!(same, base);
    }
    assert_eq!(base, snapshot);
}

#[test]
fn magnitude_selection_is_scale_invariant_and_stable() {
    let w = Tensor::new(vec![2, 1, 4], vec![0.5, -0.1, 0.1, 2.0, -0.1, 3.0, 0.0, -0.7]).unwrap();
    let m = magnitude_select(0, &w, 0.375).unwrap();
    // Ties at |0.1| go to the lower flat indices first.
    assert_eq!(m.bits(), &[true, false, false, true, true, true, false, true]);
    let scaled = Tensor::new(w.shape().to_vec(), w.data().iter().map(|v| v * -3.5).collect()).unwrap();
    assert_eq!(magnitude_select(0, &scaled, 0.375).unwrap(), m);
}

#[test]
fn saved_model_predicts_identically() {
    let (tr, va) = data();
    let base = Model::build_baseline(8);
    let pruned = prune_with_finetune(&base, 0.3, &tr, &va, &cfg()).unwrap();
    let path = std::env::temp_dir().join(format!("ecgprune-roundtrip-{}.bin", std::process::id()));
    save_model(&pruned, &path).unwrap();
    let loaded = load_model(&path).unwrap();
    std::fs::remove_file(&path).unwrap();
    assert_eq!(encode_model(&loaded), encode_model(&pruned));
    assert_eq!(decode_model(&encode_model(&loaded)).unwrap(), pruned);
    let beats = generate_synthetic([20; 5], 0.1, 77).unwrap();
    for (x, _) in beats.examples() {
        let (a, b) = (pruned.logits(&x).unwrap(), loaded.logits(&x).unwrap());
        assert!(a.data().iter().zip(b.data()).all(|(p, q)| p.to_bits() == q.to_bits()));
    }
}
