use drivekit::nn::Mode;
use drivekit::perception::{EncoderConfig, SensorBundle, INPUT_SIDE};
use drivekit::policy::PolicyNet;
use drivekit::tape::Tape;
use drivekit::tensor::Tensor;
use drivekit::waypoint::GoalPoint;
use std::time::Instant;

fn main() {
    let net = PolicyNet::new(EncoderConfig::default(), 42).unwrap();
    println!("params: {} tensors, {} values", net.store.len(), net.store.num_values());
    let n = 3 * INPUT_SIDE * INPUT_SIDE;
    let mk = |o: u64| Tensor::new(vec![3, INPUT_SIDE, INPUT_SIDE],
        (0..n).map(|i| (((i as u64 * 2654435761 + o) % 256) as f32) / 255.0).collect());
    let bundle = SensorBundle::new(mk(0), mk(1), mk(2), mk(3), 3.0).unwrap();
    let goal = GoalPoint { u: 0.0, v: 20.0 };

    // eval forward
    let t0 = Instant::now();
    let reps = 10;
    for _ in 0..reps {
        let mut tape: Tape<f32> = Tape::new();
        let (f, _) = net.forward(&mut tape, &bundle, goal, Mode::Eval, false).unwrap();
        std::hint::black_box(tape.data(f.waypoints)[0]);
    }
    println!("eval forward: {:.1} ms", t0.elapsed().as_secs_f64()/reps as f64*1e3);

    // train forward+backward
    let gt = [0.5f32; 8];
    let t0 = Instant::now();
    for _ in 0..reps {
        let mut tape: Tape<f32> = Tape::new();
        let (f, _) = net.forward(&mut tape, &bundle, goal, Mode::Train, true).unwrap();
        let gt_node = tape.constant(Tensor::new(vec![8], gt.to_vec()));
        let diff = tape.sub(f.waypoints, gt_node).unwrap();
        let a = tape.abs(diff);
        let loss = tape.sum_all(a);
        tape.backward(loss).unwrap();
        std::hint::black_box(tape.grad(f.bound.node("embed.pos")).map(|g| g[0]));
    }
    println!("train fwd+bwd: {:.1} ms", t0.elapsed().as_secs_f64()/reps as f64*1e3);
}
