// Does a smooth geometric morph pace in feature space under the extractor?
use morphgan::data::{gen_toy_family, ShapeFamily};
use morphgan::perceptual::{FeatureExtractor, LayerGroupSet};
use morphgan::tensor::no_grad;
use morphgan::warp::{apply, partial_warp, ControlGrid, WarpDirection};
use morphgan::Tensor;

fn main() {
    let fx = FeatureExtractor::<f32>::random(100, 8);
    let data = gen_toy_family(8, 7, 32, ShapeFamily::Ellipse).unwrap();
    let groups = LayerGroupSet::pair_metric();
    // Synthetic full warp: shift + squeeze toward a corner.
    let identity = ControlGrid::<f32>::identity(5);
    let warped_vals: Vec<f32> = identity
        .values()
        .to_vec()
        .iter()
        .enumerate()
        .map(|(i, v)| if i < 25 { v * 0.8 + 0.25 } else { v * 0.85 - 0.2 })
        .collect();
    let full = ControlGrid::from_tensor(Tensor::from_vec(&[2, 5, 5], warped_vals).unwrap()).unwrap();
    for idx in [0usize, 1, 2] {
        let a = data.image::<f32>(idx);
        let b = data.image::<f32>((idx + 3) % 8);
        let d = no_grad(|| fx.ps(&a, &b, &groups)).unwrap().item();
        let mut seq = Vec::new();
        for i in 0..11 {
            let t = i as f64 / 10.0;
            seq.push(no_grad(|| apply(&partial_warp(&full, t, WarpDirection::AToB), &a)).unwrap());
        }
        print!("img {idx}: PS(A,B) {:.3} | warp-path steps/PS(A,B):", d);
        for i in 1..11 {
            let ps = no_grad(|| fx.ps(&seq[i - 1], &seq[i], &groups)).unwrap().item();
            print!(" {:.3}", ps / d);
        }
        let full_d = no_grad(|| fx.ps(&seq[0], &seq[10], &groups)).unwrap().item();
        println!(" | endpoints {:.3}", full_d / d);
    }
}
