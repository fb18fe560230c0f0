use drivekit::expert::{expert_step, ExpertConfig};
use drivekit::sim::{SimConfig, World};
use drivekit::town::{build_route, generate_town, Maneuver, RouteCategory, TownGenConfig};

fn main() {
    let gen = TownGenConfig::default();
    let town = generate_town(11, &gen);
    let route = build_route(&town, &gen, "t", RouteCategory::Tiny, (1, 1), 0, &[Maneuver::Right], 30.0, 30.0).unwrap();
    println!("route len {:.1}, start {:?} yaw {:.2}", route.length(), route.path.at(0.0), route.start_pose().yaw);
    let sim = SimConfig { num_npc_vehicles: 0, num_pedestrians: 0, ..SimConfig::default() };
    let start = route.start_pose();
    let mut world = World::new(town, sim, start, 3);
    world.town.lights.clear();
    let cfg = ExpertConfig::default();
    for i in 0..4000 {
        let (c, d) = expert_step(&world, &route, &cfg);
        if d { println!("done at tick {i} t={:.1}", world.time); return; }
        world.step(&c, 0.05);
        if i % 20 == 0 && i < 600 {
            let (s, lat) = route.path.project(world.ego.pose.position);
            println!("t={:5.1} s={:6.1} lat={:.2} v={:.2} steer={:+.2} thr={:.2} brake={} pos=({:.1},{:.1})",
                world.time, s, lat, world.ego.speed, c.steer, c.throttle, c.brake,
                world.ego.pose.position.x, world.ego.pose.position.y);
        }
    }
    println!("NOT DONE");
}
