use drivekit::tape::Tape;
use drivekit::tensor::Tensor;
use std::time::Instant;

fn main() {
    // stem: 3x256x256, 8 kernels 7x7 s2 p3 (desk scale 1/8)
    let x = Tensor::<f32>::new(vec![3,256,256], (0..3*256*256).map(|i| (i as f32*0.001).sin()).collect());
    let k = Tensor::<f32>::new(vec![8,3,7,7], (0..8*3*49).map(|i| (i as f32*0.01).cos()).collect());
    let t0 = Instant::now();
    let reps = 20;
    for _ in 0..reps {
        let mut tape: Tape<f32> = Tape::new();
        let xi = tape.leaf(x.clone(), true);
        let ki = tape.leaf(k.clone(), true);
        let y = tape.conv2d(xi, ki, 2, 3).unwrap();
        let s = tape.sum_all(y);
        tape.backward(s).unwrap();
        std::hint::black_box(tape.grad(ki).map(|g| g[0]));
    }
    let dt = t0.elapsed().as_secs_f64() / reps as f64;
    let macs = 128.0*128.0*8.0*3.0*49.0;
    println!("stem conv fwd+bwd: {:.1} ms  ({:.2} GMAC/s eff fwd-equiv x3)", dt*1e3, macs*3.0/dt/1e9);
}
