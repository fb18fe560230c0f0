// dry run of the overfit check: 16 frames, N epochs, batch 16
use drivekit::dataset::{frame_index, frame_to_sample, load_batch, DatasetManifest};
use drivekit::optim::OptimizerState;
use drivekit::policy::PolicyNet;
use drivekit::perception::EncoderConfig;
use drivekit::train::{train_step, TrainConfig};
use std::path::Path;
use std::time::Instant;

fn main() {
    let root = Path::new("/tmp/ds1");
    let manifest = DatasetManifest::read(root).unwrap();
    let index = frame_index(&manifest);
    // first cruise frame of each route, skipping frames that would
    // conflict with an already-picked one (same goal, different label)
    let mut picks = Vec::new();
    let mut seen_routes: Vec<usize> = Vec::new();
    let mut chosen: Vec<(f64, f64, [f64; 8])> = Vec::new();
    for (flat, (ri, _fi)) in index.iter().enumerate() {
        if seen_routes.contains(ri) { continue; }
        let f = load_batch(root, &manifest, &index, &[flat], None).unwrap();
        if f[0].speed < 4.0 { continue; }
        let g = (f[0].goal.u, f[0].goal.v);
        let label = f[0].expert_waypoints.flat();
        let conflicts = chosen.iter().any(|(u, v, l)| {
            let goal_close = ((u - g.0).powi(2) + (v - g.1).powi(2)).sqrt() < 2.0;
            let label_far = l.iter().zip(label.iter()).map(|(a, b)| (a - b).abs()).sum::<f64>() > 0.25;
            goal_close && label_far
        });
        if conflicts { continue; }
        picks.push(flat);
        seen_routes.push(*ri);
        chosen.push((g.0, g.1, label));
        if picks.len() == 16 { break; }
    }
    assert_eq!(picks.len(), 16, "not enough compatible cruise frames");
    let frames = load_batch(root, &manifest, &index, &picks, None).unwrap();
    let samples: Vec<_> = frames.iter().map(frame_to_sample).collect();
    let mut net = PolicyNet::new(EncoderConfig::default(), 0).unwrap();
    let mut cfg = TrainConfig::desk_scale();
    cfg.base_lr = std::env::args().nth(2).and_then(|s| s.parse().ok()).unwrap_or(1e-3);
    cfg.lr_decay_epochs = std::env::args().nth(3).and_then(|s| s.parse().ok()).unwrap_or(150);
    cfg.weight_decay = std::env::args().nth(4).and_then(|s| s.parse().ok()).unwrap_or(0.01);
    let mut opt = OptimizerState::new();
    let t0 = Instant::now();
    let epochs: usize = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(40);
    for e in 0..epochs {
        let adamw = cfg.adamw(drivekit::optim::step_decay_lr_every(cfg.base_lr, e as u32, cfg.lr_decay_epochs));
        let loss = train_step(&mut net, &samples, &mut opt, &adamw).unwrap();
        if e % 10 == 0 || e + 1 == epochs {
            println!("epoch {e:>3} loss {loss:.4}  ({:.1} s elapsed)", t0.elapsed().as_secs_f64());
        }
        if e + 1 == epochs {
            use drivekit::nn::Mode;
            use drivekit::tape::Tape;
            for (i, (bundle, goal, gt)) in samples.iter().enumerate() {
                let mut tape: Tape<f32> = Tape::new();
                let (fwd, _) = net.forward(&mut tape, bundle, *goal, Mode::Train, false).unwrap();
                let pred = drivekit::waypoint::plan_from_node(&tape, fwd.waypoints);
                let l = drivekit::train::l1_loss(&pred, gt);
                println!("sample {i:>2} loss {l:7.3} goal=({:+5.1},{:+5.1}) gt3=({:+6.2},{:+6.2}) pred3=({:+6.2},{:+6.2}) speed={:.1}",
                    goal.u, goal.v, gt.points[3][0], gt.points[3][1], pred.points[3][0], pred.points[3][1], bundle.speed);
            }
        }
    }
}
