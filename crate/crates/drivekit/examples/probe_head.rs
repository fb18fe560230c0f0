// Can the waypoint head alone memorize 16 (code, goal) -> plan samples?
use drivekit::nn::{bind_params, FwdCtx, Mode, ParamStore};
use drivekit::optim::{AdamWConfig, OptimizerState};
use drivekit::tape::Tape;
use drivekit::tensor::Tensor;
use drivekit::train::l1_loss_node;
use drivekit::waypoint::{decode_waypoints, register_waypoint_head, GoalPoint, WaypointPlan};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let n = 16;
    let codes: Vec<Vec<f32>> = (0..n).map(|_| (0..16).map(|_| rng.gen_range(-3.0..3.0)).collect()).collect();
    let goals: Vec<GoalPoint> = (0..n).map(|_| GoalPoint { u: rng.gen_range(-10.0..10.0), v: rng.gen_range(5.0..30.0) }).collect();
    let plans: Vec<WaypointPlan> = (0..n).map(|_| {
        let mut pts = [[0.0f64; 2]; 4];
        let (du, dv) = (rng.gen_range(-1.5..1.5), rng.gen_range(1.0..3.0));
        for t in 0..4 { pts[t] = [du * (t as f64 + 1.0), dv * (t as f64 + 1.0)]; }
        WaypointPlan::new(pts)
    }).collect();

    let mut store = ParamStore::new();
    register_waypoint_head(&mut store, 0);
    let mut opt = OptimizerState::new();
    for epoch in 0..300u32 {
        let lr = 1e-3 * 0.1f32.powi((epoch / 100) as i32);
        let cfg = AdamWConfig { lr, weight_decay: 0.0, ..AdamWConfig::default() };
        let mut grads: std::collections::BTreeMap<String, Vec<f32>> = Default::default();
        let mut loss_sum = 0.0;
        for i in 0..n {
            let mut tape: Tape<f32> = Tape::new();
            let bound = bind_params(&mut tape, &store, true);
            let code = tape.constant(Tensor::new(vec![16], codes[i].clone()));
            let mut ctx = FwdCtx::new(&mut tape, &store, &bound, Mode::Eval);
            let wp = decode_waypoints(&mut ctx, code, goals[i], None).unwrap();
            let loss = l1_loss_node(&mut tape, wp, &plans[i]).unwrap();
            loss_sum += tape.data(loss)[0] as f64;
            tape.backward(loss).unwrap();
            for (name, v) in store.iter() {
                let g = tape.grad_or_zeros(bound.node(name));
                let acc = grads.entry(name.clone()).or_insert_with(|| vec![0.0; v.numel()]);
                for (a, gv) in acc.iter_mut().zip(g.iter()) { *a += gv / n as f32; }
            }
        }
        let mut updates: Vec<(&str, &mut [f32], &[f32])> = store.iter_mut()
            .filter(|(nm, _)| grads.contains_key(nm.as_str()))
            .map(|(nm, v)| (nm.as_str(), v.data.as_mut_slice(), grads[nm.as_str()].as_slice()))
            .collect();
        opt.step(&cfg, &mut updates);
        if epoch % 50 == 0 || epoch == 299 { println!("epoch {epoch:>3} mean loss {:.4}", loss_sum / n as f64); }
    }
}
