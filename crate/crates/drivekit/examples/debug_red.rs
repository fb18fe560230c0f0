use drivekit::config::{preset_tasks, RunConfig};
use drivekit::expert::expert_step;
use drivekit::sim::World;
use drivekit::town::LightState;

fn main() {
    let run = RunConfig::default();
    let tasks = preset_tasks(&run, "desk-long").unwrap();
    let task = &tasks[2];
    println!("route {} len {:.0}", task.route.spec.id, task.route.length());
    let mut world = World::new(task.town.clone(), run.sim.clone(), task.route.start_pose(), run.seed.wrapping_add(2));
    let mut control = drivekit::control::VehicleControl::idle();
    for tick in 0..(240.0_f64 / 0.05) as usize {
        if tick % 10 == 0 {
            let (c, done) = expert_step(&world, &task.route, &run.expert);
            control = c;
            if done { println!("done t={:.1}", world.time); break; }
        }
        let pos_before = world.ego.pose.position;
        world.step(&control, 0.05);
        let events = world.detect_infractions();
        for e in &events {
            println!("INFRACTION {:?} at t={:.2} pos=({:.1},{:.1}) speed={:.1}", e.kind, e.sim_time, world.ego.pose.position.x, world.ego.pose.position.y, world.ego.speed);
            // find the light involved
            for l in &world.town.lights {
                if drivekit::geom::segments_intersect(pos_before, world.ego.pose.position, l.stop_line[0], l.stop_line[1]) {
                    println!("  light {} stop=({:.1},{:.1})-({:.1},{:.1}) state={:?} phase_off={} heading ego yaw={:.2}",
                        l.id, l.stop_line[0].x, l.stop_line[0].y, l.stop_line[1].x, l.stop_line[1].y, l.state_at(world.time), l.phase_offset_s, world.ego.pose.yaw);
                }
            }
        }
    }
}
