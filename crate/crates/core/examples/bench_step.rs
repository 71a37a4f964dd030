use std::time::Instant;

use fallsense::features::{FeatureKind, FeatureMatrix, FeatureMeta, FeatureSpec};
use fallsense::transformer::{Layout, Mode, Model, ModelConfig};

fn main() {
    let frames: usize = std::env::args()
        .nth(1)
        .map(|s| s.parse().unwrap())
        .unwrap_or(43);
    let cfg = ModelConfig::for_features(FeatureSpec::diff(), 139_760);
    let t = Instant::now();
    let model = Model::<f32>::init(cfg, 1).unwrap();
    println!(
        "init {:?}, params {}",
        t.elapsed(),
        model.params.num_scalars()
    );
    let xs: Vec<FeatureMatrix> = (0..20)
        .map(|i| FeatureMatrix {
            data: (0..86 * 1600)
                .map(|j| ((i * 7 + j) % 13) as f32 * 0.01)
                .collect(),
            rows: 86,
            cols: 1600,
            mask: (0..86).map(|r| r < frames).collect(),
            kind: FeatureKind::Diff,
            meta: FeatureMeta::default(),
        })
        .collect();
    let batch: Vec<(&FeatureMatrix, usize)> = xs.iter().map(|x| (x, 1)).collect();
    let mut g = model.grad_buffers();
    for _ in 0..3 {
        let t = Instant::now();
        model
            .loss_and_grads(&batch, [4.0, 1.0], Mode::Train, 1, Layout::Packed, &mut g)
            .unwrap();
        println!("train step {:?}", t.elapsed());
    }
    let refs: Vec<&FeatureMatrix> = xs.iter().collect();
    let t = Instant::now();
    model.predict(&refs, Mode::Eval, 0).unwrap();
    println!("eval batch {:?}", t.elapsed());
}
