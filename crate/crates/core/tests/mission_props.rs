use auvfleet_core::geometry::Pose6;
use auvfleet_core::mission::{abort, append_waypoint, next_setpoint, MissionPlan, MissionState, MissionStatus, Terminal, Waypoint};
use proptest::prelude::*;

fn waypoint() -> impl Strategy<Value = Waypoint> {
    (-50.0f64..50.0, -50.0f64..50.0, 0.0f64..5.0, 0.0f64..2.0, 0.5f64..10.0).prop_map(|(x, y, depth, speed, tolerance)| Waypoint {
        x,
        y,
        depth,
        speed,
        tolerance,
    })
}

fn plan() -> impl Strategy<Value = MissionPlan> {
    (prop::collection::vec(waypoint(), 1..6), any::<bool>()).prop_map(|(waypoints, hold)| MissionPlan {
        waypoints,
        terminal: if hold { Terminal::Hold } else { Terminal::Surface },
    })
}

fn poses() -> impl Strategy<Value = Vec<Pose6>> {
    prop::collection::vec((-60.0f64..60.0, -60.0f64..60.0, -3.0f64..3.0), 1..80).prop_map(|v| v.into_iter().map(|(x, y, yaw)| Pose6::new(x, y, 1.0, 0.0, 0.0, yaw)).collect())
}

proptest! {
    #[test]
    fn index_is_monotone_and_reached_means_inside(plan in plan(), poses in poses()) {
        let mut state = MissionState::start();
        for est in poses {
            let step = next_setpoint(&est, &plan, &state);
            prop_assert!(step.state.index >= state.index);
            prop_assert!(step.state.index <= state.index + 1);
            prop_assert!(step.state.index <= plan.waypoints.len());
            if let Some((i, d)) = step.reached {
                let w = plan.waypoints[i];
                prop_assert_eq!(i, state.index);
                prop_assert!(d <= w.tolerance);
                prop_assert!(((est.x - w.x).hypot(est.y - w.y) - d).abs() < 1e-12);
            } else {
                prop_assert_eq!(step.state.index, state.index);
            }
            if step.state.index == plan.waypoints.len() {
                prop_assert_eq!(step.state.status, MissionStatus::Complete);
            }
            state = step.state;
        }
    }

    #[test]
    fn abort_latches_and_stops(plan in plan(), poses in poses(), at in 0usize..80, extra in waypoint()) {
        let mut plan = plan;
        let mut state = MissionState::start();
        for (k, est) in poses.iter().enumerate() {
            if k == at {
                state = abort(&state);
            }
            if k == at + 1 {
                append_waypoint(&mut plan, &mut state, extra);
            }
            let step = next_setpoint(est, &plan, &state);
            if k >= at {
                prop_assert_eq!(step.state.status, MissionStatus::Aborted);
                prop_assert_eq!(step.setpoint.speed_ref, 0.0);
                prop_assert_eq!(step.setpoint.depth_ref, 0.0);
                prop_assert!(step.reached.is_none());
            }
            state = step.state;
        }
    }
}

#[test]
fn appended_waypoint_resumes_a_complete_mission() {
    let w = |x: f64| Waypoint {
        x,
        y: 0.0,
        depth: 1.0,
        speed: 1.0,
        tolerance: 1.0,
    };
    let mut plan = MissionPlan {
        waypoints: vec![w(0.0)],
        terminal: Terminal::Hold,
    };
    let here = Pose6::default();
    let step = next_setpoint(&here, &plan, &MissionState::start());
    assert_eq!(step.state.status, MissionStatus::Complete);
    assert_eq!(step.setpoint.speed_ref, 0.0);
    assert_eq!(step.setpoint.depth_ref, 1.0);
    let mut state = step.state;
    append_waypoint(&mut plan, &mut state, w(20.0));
    assert_eq!(state, MissionState { index: 1, status: MissionStatus::Running });
    let step = next_setpoint(&here, &plan, &state);
    assert_eq!(step.setpoint.speed_ref, 1.0);
    assert_eq!(step.setpoint.heading_ref, 0.0);
}
