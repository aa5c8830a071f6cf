//! Trains the toy configuration on circles and crosses and reports how well
//! the classifier recognizes the generator's output.

use std::time::Instant;

use symgan_core::models::ModelConfig;
use symgan_core::trainer::{self, NoopObserver, TrainConfig, TrainingData};
use symgan_core::vocab::{ClassVocabulary, SymbolClass};
use symgan_core::{rng, toy};

fn main() {
    let args: Vec<f32> = std::env::args().skip(1).map(|a| a.parse().unwrap()).collect();
    let scale = args.first().copied().unwrap_or(10.0);
    let steps = args.get(1).copied().unwrap_or(500.0) as u64;
    let vocab = ClassVocabulary::from_classes(vec![SymbolClass::new("circle"), SymbolClass::new("cross")]).unwrap();
    let model = ModelConfig {
        canvas: 32,
        base_channels: 8,
        style_dim: 32,
        ..ModelConfig::default()
    };
    let config = TrainConfig {
        lr_discriminator: 1e-5 * scale,
        lr_generator: 1e-4 * scale,
        lr_classifier: 1e-5 * scale,
        focus_classes: vec!["cross".into()],
        total_steps: steps,
        seed: 7,
        ..TrainConfig::default()
    };
    let data = toy::dataset(200, 32, 1);
    let t = Instant::now();
    let out = trainer::train(&config, &model, TrainingData { samples: &data, shadow: &[] }, &vocab, &mut NoopObserver).unwrap();
    for r in out.log.iter().step_by(50) {
        println!(
            "{:4} {:8} d={:.3} adv={:.3} cls={:.3} div={:.3} c={:.3}",
            r.step, r.mode.as_str(), r.loss_d, r.loss_g_adv, r.loss_g_cls, r.loss_div, r.loss_c
        );
    }
    println!("trained in {:.1?}", t.elapsed());
    let g = &out.bundle.generator;
    let held = toy::dataset(50, 32, 99);
    let mut hits = 0;
    let mut real_hits = 0;
    for (i, s) in held.iter().enumerate() {
        let target = (i + 1) % 2;
        let img = g.generate_batch(&[&s.image], &[target], &[rng::derive_index(3, i as u64)]).unwrap().remove(0);
        let p = &out.bundle.classifier.classify(&[&img]).unwrap()[0];
        hits += (p[target] > p[1 - target]) as usize;
        let q = &out.bundle.classifier.classify(&[&s.image]).unwrap()[0];
        real_hits += (q[i % 2] > q[1 - i % 2]) as usize;
    }
    println!("generated accuracy {:.3}, real accuracy {:.3}", hits as f64 / held.len() as f64, real_hits as f64 / held.len() as f64);
}
