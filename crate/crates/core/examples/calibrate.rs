use morphgan::config::{DataSource, ModelConfig, Precision, TrainConfig};
use morphgan::data::{gen_toy_family, ShapeFamily};
use morphgan::eval::{evaluate, EmbeddingOptions};
use morphgan::networks::generate_sequence;
use morphgan::schedule::TimeSchedule;
use morphgan::tensor::no_grad;
use morphgan::training::{fit, split_for_training, Trainer};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

fn endpoint_mse(trainer: &Trainer<f32>, test: &morphgan::data::Dataset, pairs: usize) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(999);
    let sched = TimeSchedule::uniform(11).unwrap();
    let mut acc = 0.0;
    for _ in 0..pairs {
        let ia = rng.random_range(0..test.len());
        let mut ib = rng.random_range(0..test.len());
        while ib == ia { ib = rng.random_range(0..test.len()); }
        let a = test.image::<f32>(ia);
        let b = test.image::<f32>(ib);
        let frames = no_grad(|| generate_sequence(&trainer.generator, trainer.stn.as_ref(), &a, &b, &sched, 5)).unwrap();
        let m1 = frames.slice_batch(0, 1).unwrap().mse(&a).unwrap().item() as f64;
        let m2 = frames.slice_batch(10, 1).unwrap().mse(&b).unwrap().item() as f64;
        acc += 0.5 * (m1 + m2);
    }
    acc / pairs as f64
}

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let variant = args.get(1).map(|s| s.as_str()).unwrap_or("full");
    let steps: usize = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(2000);

    let mut model = ModelConfig::default();
    if variant == "no-stn" {
        model.weights.toggles.stn = false;
        model.weights.toggles = model.weights.toggles.normalized();
    }
    if let Some(lt) = args.get(3).and_then(|s| s.parse::<f64>().ok()) {
        model.weights.lambda_transition = lt;
    }
    if let Some(le) = args.get(4).and_then(|s| s.parse::<f64>().ok()) {
        model.weights.lambda_endpoint = le;
    }
    if let Some(k) = args.get(5).and_then(|s| s.parse::<usize>().ok()) {
        model.k = k;
    }
    println!("lambdas: T={} E={} R={} lr={} k={}", model.weights.lambda_transition,
        model.weights.lambda_endpoint, model.weights.lambda_recon, model.adam.lr, model.k);
    let cfg = TrainConfig {
        model,
        data: DataSource::Toy { n: 160, seed: 7, family: Some(ShapeFamily::Ellipse) },
        out_dir: std::path::PathBuf::from(format!("/tmp/calib-{variant}")),
        steps,
        epochs: None,
        batch: 8,
        precision: Precision::F32,
        test_fraction: 0.25,
        checkpoint_every: 0,
    };
    let dataset = gen_toy_family(160, 7, 32, ShapeFamily::Ellipse).unwrap();
    let (train, test) = split_for_training(&cfg, dataset.clone()).unwrap();
    println!("train {} test {}", train.len(), test.len());

    // Untrained baseline metrics.
    let untrained = Trainer::<f32>::new(cfg.model.clone()).unwrap();
    let opts = EmbeddingOptions::default();
    let base = evaluate(&untrained, &test, &train, 20, 11, 555, &opts).unwrap();
    println!("[untrained] frechet {:.4} pacing_mean {:.6} endpoint_mse {:.4}",
        base.frechet_interior, base.pacing_mean, endpoint_mse(&untrained, &test, 20));

    let t0 = std::time::Instant::now();
    let outcome = fit::<f32>(&cfg, dataset, |m| {
        if m.step % 200 == 0 || m.step == 1 {
            println!("step {:>5} d {:.4} adv {:.4} trans {:.5} recon {:.4} warp {:.4} ident {:.5} endp {:.4} tot {:.3} [{:.0}s]",
                m.step, m.loss_d, m.adv_g, m.transition, m.recon, m.warp, m.identity, m.endpoint, m.total_g,
                t0.elapsed().as_secs_f64());
        }
    }).unwrap();
    println!("trained {} steps in {:.1} min", outcome.steps_run, t0.elapsed().as_secs_f64() / 60.0);

    let trained = Trainer::<f32>::load_checkpoint(&outcome.checkpoint).unwrap();
    let fin = evaluate(&trained, &test, &train, 20, 11, 555, &opts).unwrap();
    println!("[trained]   frechet {:.4} pacing_mean {:.6} endpoint_mse {:.4}",
        fin.frechet_interior, fin.pacing_mean, endpoint_mse(&trained, &test, 20));
    println!("frechet ratio untrained/trained: {:.2}", base.frechet_interior / fin.frechet_interior);
    println!("pacing ratio trained/untrained: {:.3}", fin.pacing_mean / base.pacing_mean);
}
