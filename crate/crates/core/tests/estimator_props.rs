use auvfleet_core::estimator::{BatchOptions, Estimator, EstimatorConfig, Factor, FactorGraph, MeasurementQueue, NodeWindow};
use auvfleet_core::events::{EventData, VecSink};
use auvfleet_core::geometry::Pose6;
use auvfleet_core::scenario::load_scenario;
use auvfleet_core::sensors::{Measurement, Payload, SensorConfig, SensorKind};
use auvfleet_core::sim;
use proptest::prelude::*;

fn unary(kind: u8, t: f64) -> Measurement {
    let payload = match kind % 3 {
        0 => Payload::Imu { orientation: [0.0; 3] },
        1 => Payload::Depth { z: 1.0 },
        _ => Payload::Gps { x: 0.0, y: 0.0 },
    };
    Measurement { t, payload }
}

proptest! {
    #[test]
    fn association_accounts_for_every_measurement(
        tol in 0.01f64..0.3,
        steps in prop::collection::vec((0.05f64..0.5, prop::collection::vec((0u8..3, -0.4f64..0.6), 0..6)), 1..40),
    ) {
        let mut q = MeasurementQueue::new(tol);
        let mut prev: Option<(usize, f64)> = None;
        let mut t = 0.0;
        for (node, (gap, batch)) in steps.into_iter().enumerate() {
            t += gap;
            for (k, off) in batch {
                q.push(unary(k, t + off));
            }
            let window = NodeWindow { previous: prev, current: (node, t) };
            for a in q.associate(window) {
                prop_assert!(a.offset.abs() <= tol + 1e-15);
                // Assigned to whichever node is nearer, newer on ties.
                let dc = (a.measurement.t - t).abs();
                match prev {
                    Some((pi, pt)) if (a.measurement.t - pt).abs() < dc => prop_assert_eq!(a.node, pi),
                    _ => prop_assert_eq!(a.node, node),
                }
            }
            let s = q.stats();
            prop_assert_eq!(s.received, s.assigned + s.discarded + s.pending);
            let queued: usize = [SensorKind::Imu, SensorKind::Depth, SensorKind::Gps].iter().map(|&k| q.pending(k)).sum();
            prop_assert_eq!(s.pending as usize, queued);
            prev = Some((node, t));
        }
    }

    #[test]
    fn batch_error_never_increases(seed in 0u64..10_000, n in 2usize..30) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut g = FactorGraph::new();
        for i in 0..n {
            // Deliberately poor initial values.
            let init = Pose6::new(rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0), 0.0, 0.0, 0.0, rng.random_range(-3.0..3.0));
            g.add_node(i as f64, init).unwrap();
        }
        g.add_factor(Factor::Prior { node: 0, mean: Pose6::default(), sigma: [0.1; 6] }).unwrap();
        for i in 1..n {
            g.add_factor(Factor::DvlOdom {
                from: i - 1,
                to: i,
                translation: [1.0, rng.random_range(-0.2..0.2), 0.0],
                rotation: [0.0, 0.0, rng.random_range(-0.5..0.5)],
                sigma: [0.05, 0.05, 0.05, 0.01, 0.01, 0.01],
            }).unwrap();
            if rng.random_bool(0.3) {
                g.add_factor(Factor::Gps { node: i, x: rng.random_range(-10.0..10.0), y: rng.random_range(-10.0..10.0), sigma: [0.5, 0.5] }).unwrap();
            }
        }
        let report = g.optimize(&BatchOptions::default()).unwrap();
        for w in report.error_history.windows(2) {
            prop_assert!(w[1] <= w[0], "{:?}", report.error_history);
        }
    }
}

#[test]
fn gps_pull_is_inverse_variance_weighted_mean() {
    let (x0, sp) = (0.0, 2.0);
    let (gx, sg) = (3.0, 1.0);
    let mut g = FactorGraph::new();
    g.add_node(0.0, Pose6::default()).unwrap();
    g.add_factor(Factor::Prior {
        node: 0,
        mean: Pose6::new(x0, -1.0, 0.0, 0.0, 0.0, 0.0),
        sigma: [sp; 6],
    })
    .unwrap();
    g.add_factor(Factor::Gps { node: 0, x: gx, y: 4.0, sigma: [sg; 2] }).unwrap();
    g.optimize(&BatchOptions::default()).unwrap();
    let (wp, wg) = (sp.powi(-2), sg.powi(-2));
    let v = g.nodes()[0].value;
    assert!((v.x - (wp * x0 + wg * gx) / (wp + wg)).abs() < 1e-9, "{}", v.x);
    assert!((v.y - (-wp + wg * 4.0) / (wp + wg)).abs() < 1e-9, "{}", v.y);
    assert!(v.z.abs() < 1e-12);
}

#[test]
fn current_estimate_is_the_newest_node() {
    let sensors = SensorConfig::noiseless();
    let mut est = Estimator::new(&EstimatorConfig::default(), &sensors, Pose6::default());
    assert!(est.current_estimate().is_none());
    for k in 1..=40 {
        let t = k as f64 * 0.25;
        est.ingest(&[
            Measurement { t, payload: Payload::Imu { orientation: [0.0, 0.0, 0.0] } },
            Measurement { t, payload: Payload::Dvl { velocity: [1.0, 0.0, 0.0] } },
        ]);
        let (pose, nt) = est.current_estimate().unwrap();
        assert_eq!(nt, t);
        let traj = est.trajectory();
        assert_eq!(traj.last().unwrap().value, pose);
        // The first sample anchors node 0 at the initial pose.
        assert_eq!(traj.len(), k);
        assert!((pose.x - (t - 0.25)).abs() < 1e-6, "{} vs {t}", pose.x);
    }
}

#[test]
fn gps_fixes_only_near_the_surface() {
    let doc = r#"
schema_version = 1
duration = 40.0
seed = 5

[[agents]]
id = "coug1"
beacon_id = 2
role = "follower"
mission = { waypoints = [{ x = 200.0, y = 0.0, depth = 2.0, speed = 1.0, tolerance = 2.0 }] }
"#;
    let scenario = load_scenario(doc).unwrap();
    let threshold = scenario.agents[0].sensors.surface_threshold;
    let mut sink = VecSink::default();
    sim::run(scenario, &mut sink);
    let mut depth_now = 0.0;
    let (mut fixes, mut deep) = (0, false);
    for e in &sink.events {
        match &e.data {
            EventData::Truth(s) => {
                depth_now = s.pose.z;
                deep |= depth_now > threshold;
            }
            EventData::Sensor { payload: Payload::Gps { .. } } => {
                assert!(depth_now <= threshold, "GPS fix at t={} with depth {depth_now}", e.t);
                fixes += 1;
            }
            _ => {}
        }
    }
    assert!(fixes > 0 && deep, "fixes {fixes}, dived {deep}");
}
