use nalgebra::{Vector3, Vector6};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use wristsense::calibration::sensitivity;
use wristsense::maze::MazeGrid;
use wristsense::policies::*;
use wristsense::se3::{compose, decompose, deformation, recompose, DeformationSignal, Pose, Wrench};
use wristsense::world::{Command, ContactScene, EffectorState};
use wristsense::wrist::{deform, CameraModel, StiffnessMatrix};

fn pose() -> impl Strategy<Value = Pose> {
    (
        -3.1f64..3.1,
        -1.5f64..1.5,
        -3.1f64..3.1,
        prop::array::uniform3(-1.0f64..1.0),
    )
        .prop_map(|(r, p, y, t)| Pose::from_euler_xyz(Vector3::new(r, p, y), Vector3::from(t)))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(2000))]

    #[test]
    fn se3_round_trips(a in pose(), b in pose(), c in pose()) {
        prop_assert!(compose(&a, &a.inverse()).max_abs_diff(&Pose::identity()) < 1e-9);
        prop_assert!(a.inverse().inverse().max_abs_diff(&a) < 1e-9);
        prop_assert!(compose(&compose(&a, &b), &c).max_abs_diff(&compose(&a, &compose(&b, &c))) < 1e-9);
        prop_assert!(deformation(&a, &compose(&a, &b)).max_abs_diff(&b) < 1e-9);
        prop_assert!(recompose(&decompose(&a)).max_abs_diff(&a) < 1e-9);
        prop_assert!(deformation(&a, &a).max_abs_diff(&Pose::identity()) < 1e-9);
    }
}

proptest! {
    #[test]
    fn raising_a_rising_level_never_fires_earlier(
        values in prop::collection::vec(-1.0f64..1.0, 1..200),
        level in -0.5f64..0.5,
        raise in 0.0f64..0.5,
        debounce in 1usize..5,
    ) {
        let low = ThresholdTrigger::new("t", 0, level, Crossing::Rising).with_debounce(debounce);
        let high = ThresholdTrigger::new("t", 0, level + raise, Crossing::Rising).with_debounce(debounce);
        let a = fire_indices(&low, values.iter().copied());
        let b = fire_indices(&high, values.iter().copied());
        if let Some(first_high) = b.first() {
            prop_assert!(a.first().is_some_and(|first_low| first_low <= first_high));
        }
    }

    #[test]
    fn falling_trigger_mirrors_rising(
        values in prop::collection::vec(-1.0f64..1.0, 1..200),
        level in -0.5f64..0.5,
        hyst in 0.0f64..0.3,
    ) {
        let up = ThresholdTrigger::new("t", 0, level, Crossing::Rising).with_hysteresis(hyst);
        let down = ThresholdTrigger::new("t", 0, -level, Crossing::Falling).with_hysteresis(hyst);
        let a = fire_indices(&up, values.iter().copied());
        let b = fire_indices(&down, values.iter().map(|v| -v));
        prop_assert_eq!(a, b);
    }

    #[test]
    fn chatter_inside_hysteresis_fires_at_most_once(
        wiggle in prop::collection::vec(-0.5f64..0.5, 1..300),
        level in 0.1f64..1.0,
    ) {
        let hyst = 0.1 * level;
        let t = ThresholdTrigger::new("t", 0, level, Crossing::Rising).with_hysteresis(hyst);
        let fires = fire_indices(&t, wiggle.iter().map(|w| level + w * hyst));
        prop_assert!(fires.len() <= 1);
    }

    #[test]
    fn sensitivity_is_monotone(
        img in 20.0f64..400.0,
        grow in 1.0f64..3.0,
        res in 0.01f64..1.0,
        tag in 5.0f64..50.0,
    ) {
        let cam = CameraModel {
            tag_width_mm: tag,
            tag_image_width_px: img,
            pixel_resolution: res,
            ..CameraModel::default()
        };
        let base = sensitivity(&cam).0;
        let sharper = sensitivity(&CameraModel { tag_image_width_px: img * grow, ..cam }).0;
        let coarser = sensitivity(&CameraModel { pixel_resolution: res * grow, ..cam }).0;
        for i in [0usize, 1, 2, 3, 5] {
            prop_assert!(sharper[i] <= base[i] * (1.0 + 1e-12));
        }
        for i in 0..6 {
            prop_assert!(coarser[i] >= base[i] * (1.0 - 1e-12));
            prop_assert!(base[i] > 0.0);
        }
    }

    #[test]
    fn thresholds_rescale_round_trip(scale in 0.5f64..1.5) {
        let k = StiffnessMatrix::default_wrist();
        let soft = k.scaled(scale).unwrap();
        let t = Thresholds::default();
        let back = t.rescaled(&k, &soft).rescaled(&soft, &k);
        prop_assert!((back.contact - t.contact).abs() < 1e-12);
        prop_assert!((back.maze_collision - t.maze_collision).abs() < 1e-12);
        prop_assert!((back.screw_torque - t.screw_torque).abs() < 1e-12);
    }

    #[test]
    fn deform_is_linear_in_the_wrench(
        f in prop::array::uniform3(-5.0f64..5.0),
        t in prop::array::uniform3(-0.5f64..0.5),
        s in -3.0f64..3.0,
    ) {
        // torques small enough that no rotation angle wraps
        let a = [f[0], f[1], f[2], t[0], t[1], t[2]];
        let k = StiffnessMatrix::default_wrist();
        let w = Wrench::from_vector6(&Vector6::from(a)).unwrap();
        let ws = Wrench::from_vector6(&(Vector6::from(a) * s)).unwrap();
        let d: DeformationSignal = deform(&k, &w);
        prop_assert!((deform(&k, &ws).as_vector6() - d.as_vector6() * s).amax() < 1e-9);
    }
}

proptest! {
    #[test]
    fn surface_force_is_monotone_and_continuous(z0 in 0.5f64..1.0, steps in 5usize..40) {
        let scene = ContactScene::whiteboard(0.0);
        let mut state = EffectorState::at_mm(0.0, 0.0, z0);
        let mut prev = 0.0;
        let dz = 0.05;
        for _ in 0..steps {
            let (next, w) = scene.step(&state, &Command::translate(0.0, 0.0, -dz), 0.02).unwrap();
            let f = w.force().z;
            prop_assert!(f.is_finite() && f >= 0.0);
            // damping adds at most c * dz / dt on top of the stiffness term
            prop_assert!(f >= prev - 1e-9);
            prop_assert!(f - prev <= scene.contact_stiffness * dz + scene.contact_damping * dz / 0.02 + 1e-9);
            prev = f;
            state = next;
        }
    }

    #[test]
    fn peg_contact_wrench_is_finite(x in -6.0f64..6.0, y in -6.0f64..6.0, z in -3.0f64..3.0) {
        let scene = ContactScene::peg();
        let s = EffectorState::at_mm(x, y, 5.0);
        let (s2, _) = scene.step(&s, &Command::translate(0.0, 0.0, -2.0), 0.02).unwrap();
        let (s3, w) = scene.step(&s2, &Command::translate(0.0, 0.0, (z - 3.0).clamp(-2.0, 2.0)), 0.02).unwrap();
        prop_assert!(w.as_vector6().iter().all(|v| v.is_finite()));
        prop_assert!(s3.insertion_depth >= 0.0);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn maze_exploration_terminates_within_bound(seed in 0u64..10_000, n in 2usize..5, extra in 0usize..4) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let grid = MazeGrid::generate(n, extra, &mut rng);
        let cells = grid.free_cells();
        let cell_mm = grid.cell_mm;
        let cfg = TaskConfig::default();
        let r = run_task(Task::Maze, &[ContactScene::maze(grid)], &cfg, seed).unwrap();
        let bound = maze_step_bound(cells, cell_mm, cfg.policy.maze.step_mm, cfg.policy.debounce);
        prop_assert!(r.steps <= bound);
        prop_assert!(r.succeeded());
        prop_assert!(r.metrics.maze_audit.unwrap().is_clean());
    }

    #[test]
    fn wiping_signal_stays_below_twice_reference(seed in 0u64..10_000, tilt in 0.0f64..10.0) {
        let r = run_task(Task::Wipe, &[ContactScene::whiteboard(tilt)], &TaskConfig::default(), seed).unwrap();
        let w = r.metrics.wipe.unwrap();
        prop_assert!(w.max_signal_ratio <= 2.0, "{}", w.max_signal_ratio);
    }

    #[test]
    fn skills_are_deterministic(seed in 0u64..10_000) {
        let cfg = TaskConfig::default();
        let a = run_task(Task::Usb, &[ContactScene::usb(true)], &cfg, seed).unwrap();
        let b = run_task(Task::Usb, &[ContactScene::usb(true)], &cfg, seed).unwrap();
        prop_assert_eq!(a, b);
    }
}
