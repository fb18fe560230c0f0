use drivekit::kernels::*;
use std::time::Instant;

fn main() {
    let x: Vec<f32> = (0..3*256*256).map(|i| (i as f32*0.001).sin()).collect();
    let k: Vec<f32> = (0..8*3*49).map(|i| (i as f32*0.01).cos()).collect();
    let reps = 30;

    let t0 = Instant::now();
    let mut cols = Vec::new();
    for _ in 0..reps { cols = im2col(&x, 3, 256, 256, 7, 2, 3); std::hint::black_box(&cols); }
    println!("im2col: {:.1} ms", t0.elapsed().as_secs_f64()/reps as f64*1e3);

    let t0 = Instant::now();
    for _ in 0..reps { std::hint::black_box(matmul(&k, &cols, 8, 147, 16384)); }
    println!("matmul fwd [8x147x16384]: {:.1} ms", t0.elapsed().as_secs_f64()/reps as f64*1e3);

    let dout: Vec<f32> = vec![1.0; 8*16384];
    let t0 = Instant::now();
    for _ in 0..reps { std::hint::black_box(matmul_bt(&dout, &cols, 8, 16384, 147)); }
    println!("matmul_bt dK [8x16384 . 147x16384^T]: {:.1} ms", t0.elapsed().as_secs_f64()/reps as f64*1e3);

    let t0 = Instant::now();
    for _ in 0..reps { std::hint::black_box(matmul_at_b(&k, &dout, 8, 147, 16384)); }
    println!("matmul_at_b dCols: {:.1} ms", t0.elapsed().as_secs_f64()/reps as f64*1e3);

    let dcols: Vec<f32> = vec![0.5; 147*16384];
    let mut din = vec![0.0f32; 3*256*256];
    let t0 = Instant::now();
    for _ in 0..reps { din.iter_mut().for_each(|v| *v = 0.0); col2im_accumulate(&dcols, 3, 256, 256, 7, 2, 3, &mut din); std::hint::black_box(&din); }
    println!("col2im: {:.1} ms", t0.elapsed().as_secs_f64()/reps as f64*1e3);
}
