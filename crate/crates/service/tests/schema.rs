use proptest::collection::vec;
use proptest::option;
use proptest::prelude::*;
use svelte_hand::grasp_controller::{
    ActuatorCommand, ControllerPhase, ControllerSnapshot, FeedbackSample, GraspCommandConfig, GraspMode, JointCommand,
};
use svelte_hand::hand_model::{ControlMode, Finger, HandGeometry, Joint};
use svelte_hand::tactile_sim::{OpticsMap, SurfaceCoord};
use svelte_hand::world_sim::{Contact, ContactSite, GraspOutcome, Pose, Shape, SimObject};
use svelte_service::protocol::{
    ClientMessage, CommandKind, CommandMessage, JointSample, ServerMessage, StateSnapshot, TactileFrameMessage,
    TelemetryData, TelemetryMessage,
};

fn num() -> impl Strategy<Value = f64> {
    prop_oneof![-1e6..1e6f64, Just(0.0), Just(-0.0), any::<i32>().prop_map(f64::from)]
}

fn mode() -> impl Strategy<Value = GraspMode> {
    prop::sample::select(GraspMode::ALL.to_vec())
}

fn finger() -> impl Strategy<Value = Finger> {
    prop::sample::select(Finger::ALL.to_vec())
}

fn phase() -> impl Strategy<Value = ControllerPhase> {
    use ControllerPhase::*;
    prop::sample::select(vec![Idle, OpeningF1, PositioningFlipper, ClosingF1, Holding, Twisting, Releasing, Fault])
}

fn text() -> impl Strategy<Value = String> {
    "[ -~äöü°·\\n\"\\\\]{0,24}"
}

fn grasp_config() -> impl Strategy<Value = GraspCommandConfig> {
    (num(), num(), num(), any::<u32>(), num(), num(), any::<u32>(), num(), num()).prop_map(
        |(a, b, c, d, e, f, g, h, i)| GraspCommandConfig {
            open_position: a,
            position_tolerance: b,
            close_torque: c,
            settle_ticks: d,
            twist_amplitude: e,
            twist_period: f,
            twist_cycles: g,
            contact_velocity: h,
            fault_deviation_factor: i,
        },
    )
}

fn object() -> impl Strategy<Value = SimObject> {
    let shape = prop_oneof![
        (num(), num(), num()).prop_map(|(width, depth, height)| Shape::Box { width, depth, height }),
        (num(), num()).prop_map(|(radius, length)| Shape::Cylinder { radius, length }),
    ];
    (text(), shape, num(), num(), (num(), num(), num())).prop_map(|(name, shape, mass, friction, (x, y, rotation))| {
        SimObject { name, shape, mass, friction, pose: Pose { x, y, rotation } }
    })
}

fn joint_command() -> impl Strategy<Value = JointCommand> {
    (prop::bool::ANY, num(), num()).prop_map(|(torque_mode, position, torque)| JointCommand {
        mode: if torque_mode { ControlMode::Torque } else { ControlMode::Position },
        position,
        torque,
    })
}

fn actuator() -> impl Strategy<Value = ActuatorCommand> {
    (joint_command(), joint_command()).prop_map(|(f1, flipper)| ActuatorCommand { f1, flipper })
}

fn feedback() -> impl Strategy<Value = FeedbackSample> {
    (num(), num()).prop_map(|(f1, flipper)| FeedbackSample { f1, flipper })
}

fn command() -> impl Strategy<Value = CommandKind> {
    prop_oneof![
        mode().prop_map(|mode| CommandKind::StartGrasp { mode }),
        Just(CommandKind::Release),
        Just(CommandKind::Twist),
        (prop::bool::ANY, num()).prop_map(|(f, degrees)| CommandKind::Jog {
            joint: if f { Joint::F1 } else { Joint::Flipper },
            degrees
        }),
        grasp_config().prop_map(|config| CommandKind::SetConfig { config }),
        object().prop_map(|object| CommandKind::LoadObject { object }),
    ]
}

fn client_message() -> impl Strategy<Value = ClientMessage> {
    prop_oneof![
        (any::<u64>(), command()).prop_map(|(id, command)| ClientMessage::Command(CommandMessage { id, command })),
        (option::of(1..1000u32), prop::bool::ANY)
            .prop_map(|(decimation, tactile)| ClientMessage::Subscribe { decimation, tactile }),
        Just(ClientMessage::Unsubscribe),
    ]
}

fn contact() -> impl Strategy<Value = Contact> {
    (finger(), prop::bool::ANY, num(), num(), num(), num()).prop_map(|(finger, side, s, u, n, t)| Contact {
        finger,
        site: if side { ContactSite::Side } else { ContactSite::Tip },
        location: SurfaceCoord::new(s, u),
        normal_force: n,
        tangential_force: t,
    })
}

fn outcome() -> impl Strategy<Value = GraspOutcome> {
    (mode(), text(), prop::bool::ANY, option::of(text()), vec(contact(), 0..4), num(), num(), num(), phase(), any::<u64>())
        .prop_map(|(mode, object, held, reason, contacts, slack, friction_capacity, load, final_phase, ticks)| {
            GraspOutcome { mode, object, held, reason, contacts, slack, friction_capacity, load, final_phase, ticks }
        })
}

fn tactile() -> impl Strategy<Value = TactileFrameMessage> {
    (finger(), 0..50usize, 0..50usize, "[A-Za-z0-9+/]{0,40}", prop::bool::ANY, num(), option::of((num(), num())), num())
        .prop_map(|(finger, width, height, data, clamped, contact_area, centroid, max_depth)| TactileFrameMessage {
            finger,
            width,
            height,
            encoding: "f32le-base64".into(),
            data,
            clamped,
            contact_area,
            centroid: centroid.map(|(s, u)| SurfaceCoord::new(s, u)),
            max_depth,
        })
}

fn snapshot() -> impl Strategy<Value = StateSnapshot> {
    (phase(), option::of(mode()), actuator(), option::of(text()), option::of(feedback()), option::of(num()), grasp_config(), option::of(object()), num())
        .prop_map(|(phase, mode, command, fault, feedback, aperture, config, object, length)| StateSnapshot {
            protocol_version: 1,
            backend: "emulator".into(),
            tick_hz: 100.0,
            controller: ControllerSnapshot { phase, mode, command, fault },
            feedback,
            aperture,
            config,
            geometry: HandGeometry { finger_length: length, ..HandGeometry::calibrated() },
            optics: OpticsMap::default(),
            object,
        })
}

fn telemetry_data() -> impl Strategy<Value = TelemetryData> {
    prop_oneof![
        snapshot().prop_map(|s| TelemetryData::Snapshot(Box::new(s))),
        (phase(), option::of(mode()), feedback(), actuator(), option::of(num()), num(), any::<u64>()).prop_map(
            |(phase, mode, feedback, command, aperture, contact_force, dropped)| {
                TelemetryData::JointStateSample(JointSample { phase, mode, feedback, command, aperture, contact_force, dropped })
            }
        ),
        (phase(), phase(), option::of(mode())).prop_map(|(from, to, mode)| TelemetryData::PhaseChange { from, to, mode }),
        vec(tactile(), 0..4).prop_map(|frames| TelemetryData::TactileFrames { frames }),
        outcome().prop_map(|o| TelemetryData::GraspOutcome(Box::new(o))),
        text().prop_map(|reason| TelemetryData::Fault { reason }),
    ]
}

fn server_message() -> impl Strategy<Value = ServerMessage> {
    prop_oneof![
        (any::<u64>(), any::<u64>()).prop_map(|(id, tick)| ServerMessage::Ack { id, tick }),
        (any::<u64>(), text()).prop_map(|(id, reason)| ServerMessage::Reject { id, reason }),
        (option::of(any::<u64>()), text()).prop_map(|(id, message)| ServerMessage::ProtocolError { id, message }),
        (any::<u64>(), any::<u64>(), any::<u64>(), telemetry_data()).prop_map(|(seq, tick, timestamp_us, data)| {
            ServerMessage::Telemetry(TelemetryMessage { seq, tick, timestamp_us, data })
        }),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(512))]

    #[test]
    fn client_messages_round_trip(msg in client_message()) {
        let json = serde_json::to_string(&msg).unwrap();
        prop_assert_eq!(serde_json::from_str::<ClientMessage>(&json).unwrap(), msg);
    }

    #[test]
    fn server_messages_round_trip(msg in server_message()) {
        let json = serde_json::to_string(&msg).unwrap();
        prop_assert_eq!(serde_json::from_str::<ServerMessage>(&json).unwrap(), msg);
    }
}
