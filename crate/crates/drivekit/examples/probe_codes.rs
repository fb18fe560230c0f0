use drivekit::dataset::{frame_index, frame_to_sample, load_batch, DatasetManifest};
use drivekit::nn::Mode;
use drivekit::policy::PolicyNet;
use drivekit::perception::EncoderConfig;
use drivekit::tape::Tape;
use std::path::Path;

fn main() {
    let root = Path::new("/tmp/ds1");
    let manifest = DatasetManifest::read(root).unwrap();
    let index = frame_index(&manifest);
    let picks: Vec<usize> = (0..16).map(|i| (i * 97) % index.len()).collect();
    let frames = load_batch(root, &manifest, &index, &picks, None).unwrap();
    let samples: Vec<_> = frames.iter().map(frame_to_sample).collect();
    let net = PolicyNet::new(EncoderConfig::default(), 0).unwrap();
    let mut codes = Vec::new();
    for (bundle, goal, _) in &samples {
        let mut tape: Tape<f32> = Tape::new();
        let (fwd, _) = net.forward(&mut tape, bundle, *goal, Mode::Train, false).unwrap();
        codes.push(tape.data(fwd.scene_code).to_vec());
    }
    let norm = |v: &[f32]| v.iter().map(|x| (x * x) as f64).sum::<f64>().sqrt();
    let mut min_d = f64::INFINITY; let mut max_d: f64 = 0.0; let mut sum_d = 0.0; let mut cnt = 0;
    for i in 0..codes.len() { for j in i+1..codes.len() {
        let d: f64 = codes[i].iter().zip(&codes[j]).map(|(a,b)| ((a-b)*(a-b)) as f64).sum::<f64>().sqrt();
        min_d = min_d.min(d); max_d = max_d.max(d); sum_d += d; cnt += 1;
    }}
    println!("code norms: {:?}", codes.iter().map(|c| norm(c) as f32).collect::<Vec<_>>());
    println!("pairwise dist: min {min_d:.4} mean {:.4} max {max_d:.4}", sum_d / cnt as f64);
    println!("code[0][..8] = {:?}", &codes[0][..8]);
    println!("code[1][..8] = {:?}", &codes[1][..8]);
    // label spread for context
    for (i, (_, g, plan)) in samples.iter().enumerate().take(4) {
        println!("sample {i}: goal=({:.1},{:.1}) wp3=({:.2},{:.2})", g.u, g.v, plan.points[3][0], plan.points[3][1]);
    }
}
