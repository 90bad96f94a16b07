use morphgan::data::gen_toy_family;
use morphgan::eval::pacing_deviation;
use morphgan::networks::generate_sequence;
use morphgan::perceptual::LayerGroupSet;
use morphgan::schedule::TimeSchedule;
use morphgan::tensor::no_grad;
use morphgan::training::Trainer;

fn main() {
    let ckpt = std::env::args().nth(1).unwrap();
    let trainer = Trainer::<f32>::load_checkpoint(std::path::Path::new(&ckpt)).unwrap();
    let data = gen_toy_family(160, 7, 32, morphgan::data::ShapeFamily::Ellipse).unwrap();
    let groups = LayerGroupSet::pair_metric();
    let sched = TimeSchedule::uniform(11).unwrap();
    let times = sched.content_times();
    for pair in [(0usize, 1usize), (2, 3), (4, 5)] {
        let a = data.image::<f32>(pair.0);
        let b = data.image::<f32>(pair.1);
        let frames = no_grad(|| generate_sequence(&trainer.generator, trainer.stn.as_ref(), &a, &b, &sched, 5)).unwrap();
        let ps_ab = no_grad(|| trainer.extractor.ps(&a, &b, &groups)).unwrap().item();
        print!("pair {:?} PS(A,B) = {:.4} | steps:", pair, ps_ab);
        for i in 1..11 {
            let prev = frames.slice_batch(i - 1, 1).unwrap();
            let cur = frames.slice_batch(i, 1).unwrap();
            let ps = no_grad(|| trainer.extractor.ps(&prev, &cur, &groups)).unwrap().item();
            print!(" {:.3}", ps / ps_ab);
        }
        let dev = pacing_deviation(&trainer.extractor, &frames, &times, &a, &b).unwrap();
        println!(" | max dev {:.4} (target share 0.1)", dev);
        // Also: how far does frame i sit from A and B?
        print!("   dist to A:");
        for i in 0..11 {
            let f = frames.slice_batch(i, 1).unwrap();
            let d = no_grad(|| trainer.extractor.ps(&f, &a, &groups)).unwrap().item();
            print!(" {:.2}", d / ps_ab);
        }
        println!();
        // Pacing of the warped A-sequence itself.
        let (wa, _wb) = no_grad(|| {
            let warps = morphgan::warp::predict_pair(trainer.stn.as_ref(), &a, &b, 5).unwrap();
            morphgan::warp::warp_sequence(&warps, &a, &b, &times)
        }).unwrap();
        print!("   warped-A steps:");
        for i in 1..11 {
            let ps = no_grad(|| trainer.extractor.ps(&wa[i - 1], &wa[i], &groups)).unwrap().item();
            print!(" {:.3}", ps / ps_ab);
        }
        let full = no_grad(|| trainer.extractor.ps(&wa[0], &wa[10], &groups)).unwrap().item();
        println!(" | full-warp dist {:.3}", full / ps_ab);
    }
}
