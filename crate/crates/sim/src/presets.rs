//! Reference scenarios.

use crate::scenario::{CameraSpec, Fan, Phase, PlanFrame, SampleSpec, ScenarioSpec};
use crate::trajectory::Waypoint;
use crate::world::Shape;

pub const NAMES: [&str; 4] = ["forward", "hard_stop", "hover", "yaw_sweep"];

/// 60° × 45° depth camera with a 10 m range.
pub fn camera(cols: usize, rows: usize) -> CameraSpec {
    CameraSpec {
        cols,
        rows,
        horizontal_fov_deg: 60.0,
        vertical_fov_deg: 45.0,
        min_range: 0.2,
        max_range: 10.0,
    }
}

fn ground() -> Shape {
    Shape::cuboid([-50.0, -50.0, -1.0], [150.0, 50.0, 0.0])
}

/// Straight-line primitives fanning out ahead of the vehicle.
fn primitive_fan(heights: Vec<f64>) -> SampleSpec {
    SampleSpec {
        frame: PlanFrame::Level,
        sigma: 0.05,
        points: Vec::new(),
        fan: Some(Fan {
            distances: vec![1.5, 2.5, 3.5, 4.5, 5.5, 6.5, 7.5],
            headings_deg: vec![-24.0, -12.0, 0.0, 12.0, 24.0],
            heights,
        }),
    }
}

fn base(name: &str, world: Vec<Shape>, waypoints: Vec<Waypoint>, samples: SampleSpec) -> ScenarioSpec {
    ScenarioSpec {
        name: name.to_string(),
        world,
        waypoints,
        camera: camera(160, 120),
        mount_offset: [0.0; 3],
        pose_rate: 100.0,
        frame_rate: 30.0,
        query_rate: 10.0,
        capacity: 150,
        k: 1,
        bucket: 1.0,
        drift: Default::default(),
        edge_sigma: Default::default(),
        corrections: Default::default(),
        jump: None,
        samples,
        phases: Vec::new(),
    }
}

/// Thirteen seconds weaving down a walled corridor lined with pillars at
/// about 4 m/s.
pub fn forward() -> ScenarioSpec {
    let mut world = vec![
        ground(),
        Shape::cuboid([-20.0, 4.5, 0.0], [120.0, 5.5, 6.0]),
        Shape::cuboid([-20.0, -5.5, 0.0], [120.0, -4.5, 6.0]),
    ];
    for (i, x) in [8.0, 15.0, 22.0, 29.0, 36.0, 43.0, 50.0, 57.0].into_iter().enumerate() {
        let y = if i % 2 == 0 { 3.4 } else { -3.4 };
        world.push(Shape::cuboid([x - 0.3, y - 0.3, 0.0], [x + 0.3, y + 0.3, 4.0]));
    }
    world.push(Shape::sphere([33.0, 2.0, 4.2], 0.6));
    let waypoints = vec![
        Waypoint::new(0.0, [0.0, 0.0, 1.5]),
        Waypoint::new(2.0, [4.0, 0.0, 1.5]).with_velocity([4.0, 0.0, 0.0]),
        Waypoint::new(5.0, [16.0, 0.8, 1.5]),
        Waypoint::new(8.0, [28.0, -0.8, 1.7]),
        Waypoint::new(11.0, [40.0, 0.6, 1.5]),
        Waypoint::new(13.0, [48.0, 0.0, 1.5]).with_velocity([4.0, 0.0, 0.0]),
    ];
    let mut spec = base("forward", world, waypoints, primitive_fan(vec![-0.4, 0.0, 0.4]));
    spec.phases = vec![
        Phase {
            name: "accelerate".into(),
            start: 0.0,
            end: 2.0,
        },
        Phase {
            name: "cruise".into(),
            start: 2.0,
            end: 13.0,
        },
    ];
    spec
}

/// Cruise at 6 m/s toward a wall, brake at 4 m/s² from t = 5 s to a stop
/// 5.5 m short of it, then hover. Braking pitches the camera up, so samples
/// low ahead leave the current view.
pub fn hard_stop() -> ScenarioSpec {
    let world = vec![
        ground(),
        Shape::cuboid([40.0, -10.0, 0.0], [41.0, 10.0, 8.0]),
        Shape::cuboid([-20.0, 6.0, 0.0], [45.0, 7.0, 6.0]),
        Shape::cuboid([-20.0, -7.0, 0.0], [45.0, -6.0, 6.0]),
    ];
    let waypoints = vec![
        Waypoint::new(0.0, [0.0, 0.0, 1.5]).with_velocity([6.0, 0.0, 0.0]),
        Waypoint::new(5.0, [30.0, 0.0, 1.5]).with_velocity([6.0, 0.0, 0.0]),
        Waypoint::new(6.5, [34.5, 0.0, 1.5]).with_velocity([0.0, 0.0, 0.0]),
        Waypoint::new(9.0, [34.5, 0.0, 1.5]).with_velocity([0.0, 0.0, 0.0]),
    ];
    let mut spec = base("hard_stop", world, waypoints, primitive_fan(vec![-0.8, -0.4, 0.0, 0.4]));
    spec.bucket = 0.5;
    spec.phases = vec![
        Phase {
            name: "cruise".into(),
            start: 1.0,
            end: 5.0,
        },
        Phase {
            name: "decelerate".into(),
            start: 5.0,
            end: 6.5,
        },
        Phase {
            name: "hover".into(),
            start: 6.5,
            end: 9.0,
        },
    ];
    spec
}

/// Three seconds hovering 6 m from a wall, sampling a block of points in
/// plain view.
pub fn hover() -> ScenarioSpec {
    let world = vec![ground(), Shape::cuboid([6.0, -5.0, 0.0], [7.0, 5.0, 5.0])];
    let waypoints = vec![Waypoint::new(0.0, [0.0, 0.0, 1.5]), Waypoint::new(3.0, [0.0, 0.0, 1.5])];
    let samples = SampleSpec {
        frame: PlanFrame::Body,
        sigma: 0.05,
        points: Vec::new(),
        fan: Some(Fan {
            distances: vec![2.0, 3.0, 4.0],
            headings_deg: vec![-10.0, 0.0, 10.0],
            heights: vec![-0.3, 0.0, 0.3],
        }),
    };
    base("hover", world, waypoints, samples)
}

/// Hover 4 m in front of a wall, yaw 90° to the left between t = 2 s and
/// t = 5 s, then hold until t = 7 s. The samples are fixed in the world
/// 0.2 m off the wall face, so once the wall leaves the view they are
/// answered from older and older frames, with their nearest wall point in
/// view next to them. The hold ends before the oldest view leaves a
/// 150-frame chain.
pub fn yaw_sweep() -> ScenarioSpec {
    let world = vec![ground(), Shape::cuboid([4.0, -10.0, 0.0], [5.0, 10.0, 5.0])];
    let waypoints = vec![
        Waypoint::new(0.0, [0.0, 0.0, 1.5]),
        Waypoint::new(2.0, [0.0, 0.0, 1.5]),
        Waypoint::new(5.0, [0.0, 0.0, 1.5]).with_yaw(90f64.to_radians()),
        Waypoint::new(7.0, [0.0, 0.0, 1.5]).with_yaw(90f64.to_radians()),
    ];
    let mut points = Vec::new();
    for y in [-1.5, -0.75, 0.0, 0.75, 1.5] {
        for z in [1.0, 1.5, 2.0] {
            points.push([3.8, y, z]);
        }
    }
    let samples = SampleSpec {
        frame: PlanFrame::World,
        sigma: 0.05,
        points,
        fan: None,
    };
    let mut spec = base("yaw_sweep", world, waypoints, samples);
    spec.phases = vec![
        Phase {
            name: "facing".into(),
            start: 0.0,
            end: 2.0,
        },
        Phase {
            name: "turning".into(),
            start: 2.0,
            end: 5.0,
        },
        Phase {
            name: "turned".into(),
            start: 5.0,
            end: 7.0,
        },
    ];
    spec
}

pub fn by_name(name: &str) -> Option<ScenarioSpec> {
    match name {
        "forward" => Some(forward()),
        "hard_stop" => Some(hard_stop()),
        "hover" => Some(hover()),
        "yaw_sweep" => Some(yaw_sweep()),
        _ => None,
    }
}
