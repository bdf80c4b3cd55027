use super::*;
use crate::fleet::{Category, DemandLevel, VehicleClass};
use crate::network::{build_network, parse_topology};
use approx::assert_relative_eq;

/// One class: 4 m long, 10 m/s desired speed.
fn one_class(width: f64) -> FleetMix {
    let c = VehicleClass::new("Probe", Category::Medium, 4.0, width, 36.0, 1.5, -3.0, -3.0);
    FleetMix::new(vec![c], vec![100.0], [0.0, 100.0, 0.0]).unwrap()
}

/// Two 100 m links in a row, path 1 = [1], path 2 = [1, 2].
fn two_links(width: f64, strip: f64) -> Arc<RoadNetwork> {
    let parts = parse_topology(
        "1 0 0\n2 100 0\n3 200 0\n",
        &format!("1 1 2 100 {width}\n2 2 3 100 {width}\n"),
        "1 1\n2 1 2\n",
    )
    .unwrap();
    Arc::new(build_network(parts, strip).unwrap())
}

fn quiet(model: CarFollowingModel) -> EngineConfig {
    EngineConfig {
        car_following: model,
        check_invariants: true,
        audit_every_step: true,
        ..EngineConfig::default()
    }
}

fn empty_sim(net: Arc<RoadNetwork>, mix: &FleetMix, cfg: EngineConfig) -> Simulation {
    Simulation::with_arrivals(net, mix, cfg, 1000.0, 1, vec![]).unwrap()
}

#[test]
fn empty_network_ten_steps() {
    let mut sim = empty_sim(two_links(7.5, 2.5), &one_class(1.5), EngineConfig::default());
    for _ in 0..10 {
        sim.step().unwrap();
    }
    assert_eq!(sim.clock(), 10.0);
    assert_eq!(sim.counters(), Counters::default());
    assert_eq!(sim.active_count(), 0);
    assert!(sim.events().is_empty());
}

#[test]
fn single_vehicle_golden() {
    // Hand-stepped free-road Gipps from 5 m/s: front passes 100 m during
    // step 12, at t = 11.0826 s.
    let arrivals = vec![Arrival {
        time: 0.5,
        class: 0,
        path: 0,
        lateral: 0.0,
    }];
    let net = two_links(7.5, 2.5);
    let sim = Simulation::with_arrivals(net, &one_class(1.5), quiet(CarFollowingModel::Hybrid), 30.0, 1, arrivals).unwrap();
    let r = sim.run().unwrap();
    assert_eq!(r.counters.exited, 1);
    let exit = r.events.iter().find(|e| e.tag() == "EXIT").unwrap();
    assert_eq!(exit.time(), 11.0);
    let rec = r.report.vehicles[0];
    assert_relative_eq!(rec.travel_time, 11.082588106426174, epsilon = 1e-9);
    assert_relative_eq!(rec.distance, 100.0, epsilon = 1e-9);
    // one link, one vehicle: link speed equals vehicle speed
    let s = r.report.summary;
    assert_relative_eq!(s.avg_link_speed_kmh.unwrap(), 32.4833871423279, epsilon = 1e-9);
    assert_relative_eq!(s.avg_vehicle_speed_kmh.unwrap(), s.avg_link_speed_kmh.unwrap(), epsilon = 1e-9);
}

#[test]
fn follower_halts_behind_stationary_leader() {
    for model in [CarFollowingModel::Hybrid, CarFollowingModel::Newtonian] {
        let arrivals = vec![Arrival {
            time: 0.1,
            class: 0,
            path: 0,
            lateral: 0.0,
        }];
        let mut sim =
            Simulation::with_arrivals(two_links(2.5, 2.5), &one_class(1.5), quiet(model), 200.0, 1, arrivals).unwrap();
        let leader = sim.place_vehicle(0, 0, 60.0, 0, 0.0, true).unwrap();
        while !sim.is_done() {
            sim.step().unwrap();
            assert!(sim.collision_audit().is_empty());
            let snap = sim.snapshot();
            let lead = snap.iter().find(|v| v.id == leader).unwrap();
            assert_eq!(lead.position, 60.0);
            if let Some(f) = snap.iter().find(|v| v.id != leader) {
                assert!(lead.position - lead.length - f.position >= -OVERLAP_TOL);
            }
        }
        let snap = sim.snapshot();
        let f = snap.iter().find(|v| v.id != leader).unwrap();
        assert_eq!(f.speed, 0.0, "{model}");
        assert!(f.position > 50.0);
    }
}

#[test]
fn lateral_shift_examples() {
    // 0.9 m wide at 0.5 m strips: two strips
    let net = two_links(3.0, 0.5);
    let mut sim = empty_sim(net, &one_class(0.9), EngineConfig::default());
    let id = sim.place_vehicle(0, 0, 50.0, 3, 0.0, false).unwrap();
    assert!(sim.apply_shift(0.0, id, Side::Left));
    let v = &sim.snapshot()[0];
    assert_eq!((v.strip, v.span), (2, 2));
    sim.check_invariants().unwrap();

    let id2 = sim.place_vehicle(0, 0, 20.0, 0, 0.0, false).unwrap();
    assert!(!sim.apply_shift(0.0, id2, Side::Left));

    // lane regime: one 2.5 m strip per vehicle
    let mut lane = empty_sim(two_links(7.5, 2.5), &one_class(1.5), EngineConfig::default());
    let id = lane.place_vehicle(0, 0, 50.0, 1, 0.0, false).unwrap();
    assert!(lane.apply_shift(0.0, id, Side::Left));
    assert_eq!(lane.snapshot()[0].strip, 0);
    // target occupied alongside
    lane.place_vehicle(0, 0, 52.0, 1, 0.0, false).unwrap();
    assert!(!lane.apply_shift(0.0, id, Side::Right));
}

#[test]
fn transfer_carries_overshoot() {
    let mut sim = empty_sim(two_links(2.5, 2.5), &one_class(1.5), quiet(CarFollowingModel::Newtonian));
    sim.place_vehicle(0, 1, 98.0, 0, 5.0, false).unwrap();
    sim.step().unwrap();
    // Newtonian: 5 + 1.5 = 6.5 m/s, 104.5 m, so 4.5 m into link 2
    let v = &sim.snapshot()[0];
    assert_eq!(v.link_id, 2);
    assert_relative_eq!(v.position, 4.5, epsilon = 1e-12);
    assert_eq!(sim.events().last().unwrap().to_string(), "0 TRANSFER 0 1 2 4.500 0");
    assert_eq!(sim.counters().transfers, 1);
}

#[test]
fn blocked_entry_holds_and_waits() {
    let mut sim = empty_sim(two_links(2.5, 2.5), &one_class(1.5), quiet(CarFollowingModel::Hybrid));
    // a vehicle that just entered link 2 breaks down across its entry
    let blocker = {
        let id = sim.place_vehicle(0, 1, 100.0, 0, 0.0, false).unwrap();
        sim.step().unwrap();
        let v = sim.snapshot().into_iter().find(|v| v.id == id).unwrap();
        assert_eq!(v.link_id, 2);
        assert!(v.position < 1.0);
        id
    };
    sim.vehicle_mut(blocker).frozen = true;
    let id = sim.place_vehicle(0, 1, 100.0, 0, 3.0, false).unwrap();
    sim.step().unwrap();
    let v = sim.snapshot().into_iter().find(|v| v.id == id).unwrap();
    assert_eq!((v.link_id, v.position, v.speed), (1, 100.0, 0.0));
    assert_eq!(sim.counters().held, 1);
    assert_eq!(sim.vehicle(id).link_waiting, 1.0);
    sim.step().unwrap();
    assert_eq!(sim.vehicle(id).link_waiting, 2.0);
}

#[test]
fn last_link_retires() {
    let mut sim = empty_sim(two_links(2.5, 2.5), &one_class(1.5), quiet(CarFollowingModel::Hybrid));
    sim.place_vehicle(0, 0, 99.0, 0, 8.0, false).unwrap();
    sim.step().unwrap();
    let c = sim.counters();
    assert_eq!((c.generated, c.exited, sim.active_count()), (1, 1, 0));
    assert!(sim.snapshot().is_empty());
    assert_eq!(sim.events().last().unwrap().tag(), "EXIT");
}

fn ped_config() -> EngineConfig {
    EngineConfig {
        pedestrians: Some(PedestrianConfig {
            rate_per_hour: 0.0,
            ..PedestrianConfig::default()
        }),
        ..EngineConfig::default()
    }
}

#[test]
fn pedestrian_crosses_fifteen_strips() {
    // 7.5 m at 1.4 m/s is 5.36 s of walking; done on the sixth step
    let mut sim = empty_sim(two_links(7.5, 0.5), &one_class(1.5), ped_config());
    sim.pedestrians.push(Pedestrian {
        id: 0,
        link: 0,
        position: 50.0,
        offset: 0.0,
        reverse: false,
        strip: 0,
    });
    let mut steps = 0;
    while sim.counters().ped_done == 0 {
        sim.step().unwrap();
        steps += 1;
        assert!(steps < 20);
    }
    assert_eq!(steps, 6);
    assert_eq!(sim.events().last().unwrap().to_string(), "5 PED_DONE 0 1");
}

#[test]
fn pedestrian_is_a_stationary_leader() {
    let mut sim = empty_sim(two_links(7.5, 0.5), &one_class(0.9), ped_config());
    sim.pedestrians.push(Pedestrian {
        id: 0,
        link: 0,
        position: 50.0,
        offset: 1.0,
        reverse: false,
        strip: 2,
    });
    let id = sim.place_vehicle(0, 0, 40.0, 2, 0.0, false).unwrap();
    let l = sim.leader_of(sim.vehicle(id)).unwrap();
    assert_relative_eq!(l.rear() - 40.0, 9.5, epsilon = 1e-12);
    assert_eq!(l.speed, 0.0);
    // on strips 4-5 the pedestrian is not in the way
    let id2 = sim.place_vehicle(0, 0, 40.0, 4, 0.0, false).unwrap();
    assert!(sim.leader_of(sim.vehicle(id2)).is_none());
}

#[test]
fn pedestrian_mode_off_changes_nothing() {
    let net = two_links(7.5, 0.5);
    let mix = one_class(1.5);
    let demand = DemandProfile::new(DemandLevel::Medium, 400.0).unwrap();
    let run = |cfg: EngineConfig| Simulation::new(net.clone(), &mix, &demand, cfg, 300.0, 3).unwrap().run().unwrap();
    let off = run(EngineConfig::default());
    let zero_rate = run(ped_config());
    assert_eq!(render_events(&off.events), render_events(&zero_rate.events));
}

fn dhaka(strip: f64) -> Arc<RoadNetwork> {
    Arc::new(build_network(crate::topologies::dhaka(), strip).unwrap())
}

#[test]
fn invariants_hold_for_every_model_pair() {
    let demand = DemandProfile::new(DemandLevel::High, 800.0).unwrap();
    let mix = FleetMix::dhaka();
    for cf in [CarFollowingModel::Newtonian, CarFollowingModel::Gipps, CarFollowingModel::Hybrid] {
        for lc in [LaneChangingModel::Straightforward, LaneChangingModel::Gipps, LaneChangingModel::Ghr] {
            for strip in [0.5, 2.5] {
                let cfg = EngineConfig {
                    car_following: cf,
                    lane_changing: lc,
                    check_invariants: true,
                    pedestrians: Some(PedestrianConfig::default()),
                    ..EngineConfig::default()
                };
                let mut sim = Simulation::new(dhaka(strip), &mix, &demand, cfg, 240.0, 5).unwrap();
                let mut last: std::collections::HashMap<u32, (u32, f64)> = Default::default();
                while !sim.is_done() {
                    sim.step().unwrap();
                    if cf.is_collision_free() {
                        assert!(sim.collision_audit().is_empty(), "{cf} {lc} {strip}");
                    }
                    for v in sim.snapshot() {
                        let vd = sim.classes[sim.vehicle(v.id).class].desired_speed;
                        assert!(v.speed <= vd + 1e-12);
                        if let Some(&(link, pos)) = last.get(&v.id) {
                            if link == v.link_id {
                                assert!(v.position >= pos, "vehicle {} moved backward", v.id);
                                assert!(v.position - pos <= vd * sim.config.tau + 1e-9);
                            }
                        }
                        last.insert(v.id, (v.link_id, v.position));
                    }
                }
                assert!(sim.counters().generated > 0);
            }
        }
    }
}

#[test]
fn too_wide_class_is_rejected() {
    let bus = VehicleClass::new("Wide", Category::Medium, 10.0, 3.2, 40.0, 1.0, -2.5, -3.0);
    let mix = FleetMix::new(vec![bus], vec![100.0], [0.0, 100.0, 0.0]).unwrap();
    let demand = DemandProfile::new(DemandLevel::Low, 100.0).unwrap();
    let err = Simulation::new(two_links(3.0, 0.5), &mix, &demand, EngineConfig::default(), 60.0, 1).err();
    assert!(matches!(err, Some(EngineError::TooWide { span: 7, strips: 6, .. })));
}

#[test]
fn gipps_collisions_are_logged_once_per_pair() {
    let mut sim = empty_sim(two_links(2.5, 2.5), &one_class(1.5), quiet(CarFollowingModel::Gipps));
    // overlapping from the start
    sim.place_vehicle(0, 0, 50.0, 0, 0.0, true).unwrap();
    let id = sim.vehicles.len() as u32;
    sim.occupancy.insert(0, 0, 1, Interval { vehicle: id, rear: 44.0, front: 48.0 });
    sim.vehicles.push(Some(Vehicle {
        id,
        frozen: true,
        position: 48.0,
        prev_position: 48.0,
        ..sim.vehicle(0).clone()
    }));
    sim.active += 1;
    sim.counters.generated += 1;
    sim.step().unwrap();
    sim.step().unwrap();
    assert_eq!(sim.counters().collisions, 1);
    let n = sim.events().iter().filter(|e| e.tag() == "COLLISION").count();
    assert_eq!(n, 1);
}
