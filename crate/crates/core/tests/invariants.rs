use std::collections::{BTreeMap, BTreeSet};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use proptest::prelude::*;

use authex::apps::CMD_LIGHT;
use authex::behavior::BehaviorRegistry;
use authex::clock::{SharedClock, SimClock};
use authex::crypto::{Key128, SecureRng};
use authex::deployer::{Credentials, Deployer, DeploymentDescriptor, DeploymentState, UpdateOptions};
use authex::harness::scenarios::{run_adversarial, Scenario, ScenarioRun};
use authex::harness::{AttackScript, SimNet, SimWorld, TraceRecord};
use authex::manager::{Frame, Opcode, Transport};
use authex::secure_io::{DeviceKind, DriverRecord, InfrastructureProvider, DRIVER_NONCE_LEN};
use authex::tee::{Flavor, Node, NodeConfig};
use authex::{ErrorKind, Result};

fn light_round_trip(run: &mut ScenarioRun, on: bool) -> bool {
    let before = run.world.actuations().len();
    let reply = run.world.direct_now(&mut run.deployer, "user", &[CMD_LIGHT, on as u8]);
    run.world.settle();
    let wrote = run.world.actuations()[before..]
        .iter()
        .any(|(dev, v, _)| dev == "light-node.light_led" && v == &vec![on as u8]);
    matches!(reply, Ok(Some(_))) && wrote
}

#[test]
fn rerunning_commands_on_a_healthy_deployment_changes_nothing() {
    for s in Scenario::ALL {
        let mut run = ScenarioRun::deploy(s, 21).unwrap();
        let before = run.deployer.state.clone();
        for report in [run.deployer.deploy(), run.deployer.attest(), run.deployer.connect()] {
            assert!(report.is_success(), "{s}: {report}");
            assert!(report.succeeded.is_empty(), "{s}: {report}");
        }
        let after = &run.deployer.state;
        assert_eq!(after.modules, before.modules, "{s}");
        assert_eq!(after.connections, before.connections, "{s}");
        assert_eq!(after.issued_keys, before.issued_keys, "{s}");
        assert_eq!(after.next_conn_id, before.next_conn_id, "{s}");
    }
}

#[test]
fn connection_keys_never_recur_across_updates() {
    let mut run = ScenarioRun::deploy(Scenario::SmartHome, 22).unwrap();
    let mut seen: Vec<Key128> = run.deployer.state.connections.values().map(|c| c.key).collect();
    let modules = ["gateway", "light_switch", "gateway", "web", "thermostat", "gateway"];
    for (i, module) in modules.into_iter().enumerate() {
        let report = run.deployer.update(module, &UpdateOptions::default()).unwrap();
        run.world.settle();
        for (name, _) in &report.connections {
            seen.push(run.deployer.state.connections[name].key);
        }
        assert!(light_round_trip(&mut run, i % 2 == 0), "after updating {module}");
    }
    let distinct: BTreeSet<[u8; 16]> = seen.iter().map(|k| *k.as_bytes()).collect();
    assert_eq!(distinct.len(), seen.len());
    assert_eq!(run.deployer.state.issued_keys.len(), seen.len());
}

#[test]
fn failed_update_of_any_module_leaves_the_topology_serving() {
    for module in ["temp_sensor", "thermostat", "light_switch", "gateway", "web"] {
        let mut run = ScenarioRun::deploy(Scenario::SmartHome, 23).unwrap();
        let before = run.deployer.state.clone();
        let target = module.to_string();
        run.deployer.set_package_tamper(Some(Box::new(move |name, bytes| {
            if name == target {
                let last = bytes.len() - 1;
                bytes[last] ^= 0x01;
            }
        })));
        let err = run.deployer.update(module, &UpdateOptions::default()).unwrap_err();
        assert!(
            matches!(err.kind, ErrorKind::AttestationFailed | ErrorKind::MalformedPackage),
            "{module}: {err}"
        );
        run.deployer.set_package_tamper(None);
        assert_eq!(run.deployer.state.connections, before.connections, "{module}");
        assert_eq!(run.deployer.state.modules[module].module_id, before.modules[module].module_id);
        assert!(light_round_trip(&mut run, true), "{module}");
        run.world.input_now("sensor-node", "thermometer", &150u16.to_be_bytes()).unwrap();
        run.world.settle();
        assert!(run
            .world
            .actuations()
            .iter()
            .any(|(dev, v, _)| dev == "sensor-node.heater" && v == &vec![1]));
    }
}

/// Records every frame the deployer sends and every reply it receives.
struct Recorder {
    inner: Arc<SimNet>,
    seen: Mutex<Vec<Vec<u8>>>,
}

impl Transport for Recorder {
    fn call(&self, from: &str, address: &str, frame: Frame, timeout: Duration) -> Result<Frame> {
        self.seen.lock().unwrap().push(frame.encode());
        let reply = self.inner.call(from, address, frame, timeout)?;
        self.seen.lock().unwrap().push(reply.encode());
        Ok(reply)
    }

    fn post(&self, from: &str, address: &str, frame: Frame) {
        self.seen.lock().unwrap().push(frame.encode());
        self.inner.post(from, address, frame)
    }
}

fn contains(hay: &[u8], needle: &[u8]) -> bool {
    hay.windows(needle.len()).any(|w| w == needle)
}

#[test]
fn no_key_bytes_ever_leave_a_module() {
    for s in [Scenario::SmartHome, Scenario::Flo] {
        let desc = s.descriptor();
        let world = SimWorld::for_descriptor(&desc, 24).unwrap();
        let recorder = Arc::new(Recorder {
            inner: world.net().clone(),
            seen: Mutex::new(Vec::new()),
        });
        let vendors: Vec<u16> = desc.modules.iter().map(|m| m.vendor_id).collect();
        let creds = Credentials::issue(world.configs(), &vendors);
        let clock: SharedClock = world.clock().clone();
        let mut run = ScenarioRun {
            scenario: s,
            descriptor: desc.clone(),
            deployer: Deployer::new(
                desc,
                DeploymentState::new("owner"),
                recorder.clone(),
                creds.clone(),
                world.provider().clone(),
                clock,
                SecureRng::seeded(24),
            ),
            world,
        };
        run.world.net().set_script(AttackScript::pass_through());
        run.world.net().set_attacks_enabled(true);
        run.deployer.deploy_all().unwrap();
        run.world.settle();
        run.schedule_workload(24, 40);
        run.run();
        let mut secrets: Vec<[u8; 16]> = Vec::new();
        if s == Scenario::SmartHome {
            let report = run.deployer.update("gateway", &UpdateOptions::default()).unwrap();
            run.world.settle();
            secrets.extend(report.retired_keys.iter().map(|(_, k)| *k.as_bytes()));
        }
        secrets.extend(run.deployer.state.connections.values().map(|c| *c.key.as_bytes()));
        secrets.extend(run.deployer.state.modules.values().filter_map(|m| m.module_key.map(|k| *k.as_bytes())));
        for cfg in run.world.configs() {
            secrets.push(*cfg.root_key.as_bytes());
            for v in &cfg.vendors {
                secrets.push(*cfg.keys().vendor_key(*v).as_bytes());
            }
        }
        assert!(secrets.len() > 10);

        let mut blobs: Vec<Vec<u8>> = recorder.seen.lock().unwrap().clone();
        blobs.extend(run.world.net().captured().into_iter().map(|(_, f)| f.encode()));
        let mut text = run.world.trace().export();
        for node in run.world.nodes().cloned().collect::<Vec<_>>() {
            let m = run.world.manager(&node).unwrap();
            let guard = m.lock().unwrap();
            for line in guard.log_lines() {
                text.push_str(line);
                text.push('\n');
            }
            for dev in guard.node().devices() {
                text.push_str(&dev.export_log());
            }
        }
        assert!(blobs.len() > 100, "{s}: {}", blobs.len());
        for key in &secrets {
            for b in &blobs {
                assert!(!contains(b, key), "{s}: key bytes on the wire");
            }
            assert!(!text.contains(&hex::encode(key)), "{s}: key hex in logs");
            assert!(!contains(text.as_bytes(), key), "{s}: key bytes in logs");
        }
    }
}

#[test]
fn every_frame_traversal_is_logged_once() {
    for s in Scenario::ALL {
        let mut run = ScenarioRun::deploy(s, 25).unwrap();
        let frames_in = |run: &ScenarioRun| -> u64 {
            run.world
                .nodes()
                .map(|n| run.world.manager(n).unwrap().lock().unwrap().stats().frames_in)
                .sum()
        };
        let base = frames_in(&run);
        run.world.clear_trace();
        run.world.net().set_script(AttackScript::pass_through());
        run.world.net().set_attacks_enabled(true);
        run.schedule_workload(25, 40);
        run.run();
        let trace = run.world.trace();
        let (mut requests, mut replies) = (0u64, 0u64);
        for f in trace.frames() {
            if let TraceRecord::Frame { opcode, .. } = f {
                if *opcode == Opcode::Ack as u8 || *opcode == Opcode::Error as u8 {
                    replies += 1;
                } else {
                    requests += 1;
                }
            }
        }
        assert!(requests > 0, "{s}");
        assert_eq!(requests, frames_in(&run) - base, "{s}");
        let calls = trace
            .frames()
            .filter(|f| matches!(f, TraceRecord::Frame { opcode, .. } if *opcode == Opcode::CallEntry as u8))
            .count() as u64;
        assert_eq!(replies, calls, "{s}");
    }
}

/// Payloads accepted on a driver-sourced connection, in firing order, are
/// a subsequence of the values sensed on that device.
#[test]
fn driver_events_correspond_to_sensed_inputs() {
    let mut total_fired = 0;
    for seed in 0..20 {
        let r = run_adversarial(Scenario::SmartHome, seed, AttackScript::random(seed), 40).unwrap();
        let mut run = ScenarioRun::deploy(Scenario::SmartHome, seed).unwrap();
        run.world.settle();
        let routes: BTreeMap<u16, &str> = [("reading", "thermometer"), ("button", "light_button")]
            .into_iter()
            .map(|(conn, dev)| (run.deployer.state.connections[conn].conn_id, dev))
            .collect();
        for (conn_id, device) in routes {
            let sensed: Vec<Vec<u8>> = r
                .trace
                .records()
                .iter()
                .filter_map(|x| match x {
                    TraceRecord::Input { device: d, value, .. } if d == device => Some(value.clone()),
                    _ => None,
                })
                .collect();
            let fired: Vec<Vec<u8>> = r
                .trace
                .records()
                .iter()
                .filter_map(|x| match x {
                    TraceRecord::Firing { conn, payload, node, .. } if *conn == conn_id && node != "hub" => {
                        Some(payload.clone())
                    }
                    _ => None,
                })
                .collect();
            total_fired += fired.len();
            let mut it = sensed.iter();
            for p in &fired {
                assert!(it.any(|s| s == p), "seed {seed} {device}: {} not sensed in order", hex::encode(p));
            }
        }
    }
    assert!(total_fired > 20, "{total_fired}");
}

#[test]
fn pass_through_delivers_every_sensed_input_once() {
    let r = run_adversarial(Scenario::Flo, 26, AttackScript::pass_through(), 60).unwrap();
    let inputs = r.trace.records().iter().filter(|x| matches!(x, TraceRecord::Input { .. })).count();
    let sensor_firings = r
        .trace
        .records()
        .iter()
        .filter(|x| matches!(x, TraceRecord::Firing { node, .. } if node.starts_with("field")))
        .count();
    assert!(inputs > 0);
    assert_eq!(sensor_firings, inputs);
}

fn one_node_descriptor(flavor: Flavor) -> DeploymentDescriptor {
    let text = format!(
        r#"{{"nodes": [{{"name": "n", "type": "{f}", "address": "sim://n"}}],
            "modules": [{{"name": "e", "type": "{f}", "node": "n", "behavior": "echo", "vendor_id": 5}}],
            "connections": []}}"#,
        f = flavor.as_str()
    );
    DeploymentDescriptor::parse(&text).unwrap()
}

#[test]
fn attestation_verifies_iff_the_chain_inputs_are_right() {
    for flavor in [Flavor::Sancus, Flavor::TrustZone, Flavor::SgxSim] {
        let desc = one_node_descriptor(flavor);
        for wrong in [false, true] {
            let world = SimWorld::for_descriptor(&desc, 27).unwrap();
            let mut deployer = world.deployer(&desc, "owner");
            if wrong {
                let mut configs = world.configs().to_vec();
                configs[0].root_key = Key128::from_bytes([0x5A; 16]);
                deployer.set_credentials(Credentials::issue(&configs, &[5]));
            }
            assert!(deployer.deploy().is_success());
            let report = deployer.attest();
            if wrong {
                assert_eq!(report.failed.len(), 1, "{flavor:?}");
                assert_eq!(report.failed[0].1.kind, ErrorKind::AttestationFailed);
            } else {
                assert!(report.is_success(), "{flavor:?}: {report}");
            }
        }
    }
}

fn echo_package(instance: &str) -> Vec<u8> {
    BehaviorRegistry::builtin().get("echo").unwrap().package(instance, 5, None).encode()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn module_ids_strictly_increase_within_an_epoch(ops in proptest::collection::vec(0u8..4, 1..40)) {
        let cfg = NodeConfig::new("n", "sim://n", Flavor::TrustZone, Key128::from_bytes([9; 16])).with_vendor(5);
        let clock: SharedClock = SimClock::new();
        let mut node = Node::new(cfg, BehaviorRegistry::builtin(), clock, SecureRng::seeded(1)).unwrap();
        let mut last: Option<u16> = None;
        let mut live: Vec<u16> = Vec::new();
        for (i, op) in ops.into_iter().enumerate() {
            match op {
                0 | 1 => match node.load_module(&echo_package(&format!("e{i}"))) {
                    Ok((id, _)) => {
                        if let Some(prev) = last {
                            prop_assert!(id > prev);
                        }
                        last = Some(id);
                        live.push(id);
                    }
                    Err(e) => prop_assert_eq!(e.kind, ErrorKind::CapacityExceeded),
                },
                2 => {
                    if let Some(id) = live.pop() {
                        node.unload(id).unwrap();
                    }
                }
                _ => {
                    let epoch = node.epoch();
                    node.reset().unwrap();
                    prop_assert_eq!(node.epoch(), epoch + 1);
                    live.clear();
                    last = None;
                }
            }
        }
    }

    #[test]
    fn at_most_one_exclusive_holder_at_any_instant(
        ops in proptest::collection::vec((0u8..4, 0u8..2, 0u16..3, any::<bool>(), 0u64..3_000), 1..60)
    ) {
        let clock = SimClock::new();
        let shared: SharedClock = clock.clone();
        let mut provider = InfrastructureProvider::new(shared).with_lease_micros(5_000);
        provider.register_driver(DriverRecord::new("n", "out", DeviceKind::Output, 1, Key128::from_bytes([1; 16])));
        provider.register_driver(DriverRecord::new("n", "in", DeviceKind::Input, 2, Key128::from_bytes([2; 16])));
        let nonce = [7u8; DRIVER_NONCE_LEN];
        let key = Key128::from_bytes([3; 16]);
        for (op, who, conn, exclusive, dt) in ops {
            let deployer = if who == 0 { "a" } else { "b" };
            match op {
                0 => { let _ = provider.grant(deployer, "n.out", &nonce, &key, conn, true); }
                1 => { let _ = provider.grant(deployer, "n.in", &nonce, &key, conn, exclusive); }
                2 => { provider.release(deployer, if exclusive { "n.out" } else { "n.in" }); }
                _ => clock.advance_by(dt),
            }
            for driver in ["n.out", "n.in"] {
                let leases = provider.leases(driver);
                let holders: BTreeSet<&str> = leases.iter().map(|l| l.deployer_id.as_str()).collect();
                if leases.iter().any(|l| l.exclusive) {
                    prop_assert_eq!(holders.len(), 1, "{}: {:?}", driver, leases);
                }
                let mut slots = BTreeMap::new();
                for l in &leases {
                    if let Some(other) = slots.insert(l.conn_id, l.deployer_id.as_str()) {
                        prop_assert_eq!(other, l.deployer_id.as_str());
                    }
                }
            }
        }
    }
}
