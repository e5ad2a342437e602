#![allow(dead_code)]

use std::time::Duration;

use svelte_hand::world_sim::SimObject;
use svelte_service::protocol::{TelemetryData, TelemetryMessage};
use svelte_service::{Client, Service, ServiceConfig};

pub const WAIT: Duration = Duration::from_secs(10);

pub fn start(object: Option<SimObject>) -> Service {
    let cfg = ServiceConfig {
        listen: "127.0.0.1:0".into(),
        object,
        ..Default::default()
    };
    Service::start(cfg).expect("service starts")
}

pub fn connect(service: &Service) -> Client {
    Client::connect(&service.local_addr().to_string()).expect("connects")
}

/// Read telemetry until `pred` matches, returning everything seen.
pub fn collect_until(
    client: &mut Client,
    mut pred: impl FnMut(&TelemetryMessage) -> bool,
) -> Vec<TelemetryMessage> {
    let mut seen = Vec::new();
    loop {
        let t = client.next_telemetry(WAIT).expect("telemetry arrives");
        let done = pred(&t);
        seen.push(t);
        if done {
            return seen;
        }
    }
}

pub fn phase_changes(msgs: &[TelemetryMessage]) -> Vec<String> {
    msgs.iter()
        .filter_map(|m| match &m.data {
            TelemetryData::PhaseChange { to, .. } => Some(to.as_str().to_string()),
            _ => None,
        })
        .collect()
}
