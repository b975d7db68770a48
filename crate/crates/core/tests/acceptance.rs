//! Acceptance suite. Runs criteria 1-10 in order and prints one line per
//! criterion; exits non-zero when any criterion fails.

use std::collections::BTreeMap;
use std::panic::{self, AssertUnwindSafe};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;
use std::time::{Duration, Instant};

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;

use authex::apps::CMD_LIGHT;
use authex::behavior::{BehaviorRegistry, ENTRY_HANDLE_INPUT};
use authex::crypto::{
    aead_open, aead_seal, cipher_for, sha256, AeadNonce, CipherSuite, Key128, NonceDomain, SecureRng, Tag128,
};
use authex::deployer::descriptor::{DeploymentDescriptor, Sink};
use authex::deployer::UpdateOptions;
use authex::harness::bench::{bench_rtt, SUM_TOLERANCE};
use authex::harness::scenarios::{run_adversarial_with, RunOptions, Scenario, ScenarioRun};
use authex::harness::{AttackScript, SimWorld, TraceRecord};
use authex::manager::{Frame, Message, CONTROL_MODULE, CONTROL_RESET};
use authex::runtime::{seal_event, Faults};
use authex::secure_io::ENTRY_SET_EXCLUSIVE;
use authex::tee::{derive_module_key, derive_vendor_key, Flavor, KeyHierarchy};
use authex::ErrorKind;

const CORPUS_SEEDS: u64 = 1000;
const CORPUS_STIMULI: usize = 40;
const CORPUS_TIME_LIMIT: Duration = Duration::from_secs(120);
const NEGATIVE_BUDGET: usize = 20_000;
const REPLAYS: usize = 100;
const BIT_POSITIONS: usize = 64;
const GRANT_REPLAYS: usize = 1000;
const ROUND_TRIPS: usize = 10_000;
const BENCH_ITERATIONS: usize = 110;

type Check = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn err<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

fn node_of(world: &SimWorld, address: &str) -> String {
    world
        .configs()
        .iter()
        .find(|c| c.address == address)
        .map(|c| c.node_id.clone())
        .unwrap_or_else(|| address.to_string())
}

fn firing_count(world: &SimWorld) -> usize {
    world.trace().firings().count()
}

// ---------------------------------------------------------------------------
// 1 and 7 share the attack corpus.
// ---------------------------------------------------------------------------

#[derive(Debug, Default, Clone)]
struct CorpusStats {
    runs: usize,
    errors: Vec<String>,
    violations: usize,
    violating_seeds: Vec<u64>,
    inconclusive: usize,
    actuations: usize,
    attributed: usize,
    misattributed: Vec<String>,
}

impl CorpusStats {
    fn merge(&mut self, other: CorpusStats) {
        self.runs += other.runs;
        self.errors.extend(other.errors);
        self.violations += other.violations;
        self.violating_seeds.extend(other.violating_seeds);
        self.inconclusive += other.inconclusive;
        self.actuations += other.actuations;
        self.attributed += other.attributed;
        self.misattributed.extend(other.misattributed);
    }
}

fn parse_attribution(text: &str) -> Option<(u16, &str)> {
    let (conn, key) = text.split_once(' ')?;
    Some((conn.strip_prefix("conn=")?.parse().ok()?, key.strip_prefix("key=")?))
}

fn corpus(scenario: Scenario, seeds: u64) -> CorpusStats {
    let next = AtomicU64::new(0);
    let total = Mutex::new(CorpusStats::default());
    let workers = std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1);
    std::thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| {
                let mut local = CorpusStats::default();
                loop {
                    let seed = next.fetch_add(1, Ordering::Relaxed);
                    if seed >= seeds {
                        break;
                    }
                    local.runs += 1;
                    let opts = RunOptions {
                        stimuli: CORPUS_STIMULI,
                        ..RunOptions::default()
                    };
                    let run = match run_adversarial_with(scenario, seed, AttackScript::random(seed), opts) {
                        Ok(r) => r,
                        Err(e) => {
                            local.errors.push(format!("seed {seed}: {e}"));
                            continue;
                        }
                    };
                    if !run.verdict.violations.is_empty() {
                        local.violations += run.verdict.violations.len();
                        local.violating_seeds.push(seed);
                    }
                    if run.verdict.inconclusive {
                        local.inconclusive += 1;
                    }
                    for rec in run.trace.actuations() {
                        let TraceRecord::Actuation { attribution, .. } = rec else { continue };
                        local.actuations += 1;
                        match parse_attribution(attribution) {
                            Some((conn, fp)) if run.lease_keys.get(&conn).map(String::as_str) == Some(fp) => {
                                local.attributed += 1
                            }
                            _ => local.misattributed.push(format!("seed {seed}: {attribution}")),
                        }
                    }
                }
                total.lock().unwrap().merge(local);
            });
        }
    });
    total.into_inner().unwrap()
}

fn criterion_1(corpora: &BTreeMap<Scenario, CorpusStats>, elapsed: Duration) -> Check {
    let mut parts = Vec::new();
    for (s, st) in corpora {
        parts.push(format!(
            "{s}: {} runs, {} violations, {} inconclusive, {} actuations",
            st.runs, st.violations, st.inconclusive, st.actuations
        ));
        ensure(st.errors.is_empty(), || format!("{s}: run errors {:?}", &st.errors[..st.errors.len().min(3)]))?;
        ensure(st.violations == 0, || {
            format!("{s}: {} violations, seeds {:?}", st.violations, st.violating_seeds)
        })?;
        ensure(st.inconclusive == 0, || format!("{s}: {} inconclusive verdicts", st.inconclusive))?;
        ensure(st.runs as u64 == CORPUS_SEEDS, || format!("{s}: only {} runs", st.runs))?;
    }
    ensure(elapsed < CORPUS_TIME_LIMIT, || format!("took {elapsed:.1?}"))?;
    Ok(format!("{}; {:.1?} total", parts.join("; "), elapsed))
}

fn criterion_7_corpus(corpora: &BTreeMap<Scenario, CorpusStats>) -> Result<String, String> {
    let mut total = 0;
    for (s, st) in corpora {
        ensure(st.misattributed.is_empty(), || {
            format!(
                "{s}: {} actuations not attributable to the current lease key, e.g. {:?}",
                st.misattributed.len(),
                &st.misattributed[..st.misattributed.len().min(3)]
            )
        })?;
        total += st.attributed;
    }
    ensure(total > 0, || "corpus produced no actuations".into())?;
    Ok(format!("{total} corpus actuations attributed to the current lease key"))
}

// ---------------------------------------------------------------------------
// 2. Negative control.
// ---------------------------------------------------------------------------

fn criterion_2() -> Check {
    let mut parts = Vec::new();
    for s in [Scenario::Flo, Scenario::SmartHome] {
        let mut inconclusive = 0;
        let mut found = None;
        for seed in 0..CORPUS_SEEDS {
            let opts = RunOptions {
                stimuli: CORPUS_STIMULI,
                faults: Faults { skip_tag_check: true },
                budget: NEGATIVE_BUDGET,
            };
            let run = run_adversarial_with(s, seed, AttackScript::random(seed), opts).map_err(err)?;
            if let Some(v) = run.verdict.violations.first() {
                found = Some((seed, v.device.clone(), v.reason.clone()));
                break;
            }
            if run.verdict.inconclusive {
                inconclusive += 1;
            }
        }
        let (seed, device, reason) = found.ok_or_else(|| format!("{s}: no violation in {CORPUS_SEEDS} seeds"))?;
        parts.push(format!(
            "{s}: first violation at seed {seed} on {device} ({reason}), {inconclusive} inconclusive before it"
        ));
    }
    Ok(parts.join("; "))
}

// ---------------------------------------------------------------------------
// 3. Replay-once.
// ---------------------------------------------------------------------------

fn criterion_3() -> Check {
    let mut parts = Vec::new();
    for s in [Scenario::SmartHome, Scenario::Flo] {
        let mut run = ScenarioRun::deploy(s, 3).map_err(err)?;
        run.world.clear_trace();
        run.world.net().set_script(AttackScript::pass_through());
        run.world.net().set_attacks_enabled(true);
        run.schedule_workload(3, 50);
        run.run();
        run.world.net().set_attacks_enabled(false);

        let mut frames = Vec::new();
        for (to, frame) in run.world.net().captured() {
            let key = match Message::parse(&frame) {
                Ok(Message::RemoteEvent { dest_module, conn_id, .. }) => (node_of(&run.world, &to), dest_module, conn_id),
                Ok(Message::CallEntry { module_id, entry, args }) if entry == ENTRY_HANDLE_INPUT && args.len() >= 2 => {
                    (node_of(&run.world, &to), module_id, u16::from_be_bytes([args[0], args[1]]))
                }
                _ => continue,
            };
            frames.push((to, key, frame));
        }
        ensure(!frames.is_empty(), || format!("{s}: no frames captured"))?;

        let mut expected: BTreeMap<(String, u16, u16), usize> = BTreeMap::new();
        for (_, key, _) in &frames {
            *expected.entry(key.clone()).or_default() += 1;
        }
        let mut fired: BTreeMap<(String, u16, u16), usize> = BTreeMap::new();
        for rec in run.world.trace().firings() {
            if let TraceRecord::Firing { node, module, conn, .. } = rec {
                *fired.entry((node.clone(), *module, *conn)).or_default() += 1;
            }
        }
        for (key, n) in &expected {
            let got = fired.get(key).copied().unwrap_or(0);
            ensure(got == *n, || format!("{s}: {key:?} carried {n} frames but fired {got} times"))?;
        }

        let before = firing_count(&run.world);
        for (to, key, frame) in &frames {
            let manager = run.world.manager(&key.0).map_err(err)?;
            for _ in 0..REPLAYS {
                manager.lock().unwrap().handle_frame(frame);
            }
            run.world.settle();
            let now = firing_count(&run.world);
            ensure(now == before, || format!("{s}: replaying a frame to {to} fired {} more handlers", now - before))?;
        }
        parts.push(format!(
            "{s}: {} frames x {REPLAYS} replays, each fired exactly once",
            frames.len()
        ));
    }
    Ok(parts.join("; "))
}

// ---------------------------------------------------------------------------
// 4. Attestation soundness.
// ---------------------------------------------------------------------------

fn criterion_4() -> Check {
    let desc = Scenario::Flo.descriptor();
    let registry = BehaviorRegistry::builtin();
    let mut rng = ChaCha8Rng::seed_from_u64(0xB17F);
    let mut parts = Vec::new();
    for flavor in Flavor::ALL {
        let target = desc
            .modules
            .iter()
            .find(|m| m.flavor == flavor)
            .ok_or_else(|| format!("no {flavor} module"))?
            .clone();
        let spec = registry.get(&target.behavior).ok_or("unknown behavior")?;
        let init = target.init_bytes().map_err(err)?;
        let bits = spec.package(&target.name, target.vendor_id, init.as_deref()).encode().len() * 8;
        let (mut load_rejected, mut attest_failed) = (0, 0);
        for bit in sample(&mut rng, bits, BIT_POSITIONS).into_iter() {
            let world = SimWorld::for_descriptor(&desc, 40).map_err(err)?;
            let mut deployer = world.deployer(&desc, "owner");
            let name = target.name.clone();
            deployer.set_package_tamper(Some(Box::new(move |module, bytes| {
                if module == name {
                    bytes[bit / 8] ^= 0x80 >> (bit % 8);
                }
            })));
            let deployed = deployer.deploy();
            let attested = deployer.attest();
            let mut failed: Vec<&str> = deployed.failed_names();
            failed.extend(attested.failed_names());
            ensure(failed == [target.name.as_str()], || {
                format!("{flavor} bit {bit}: failures {failed:?}")
            })?;
            let others_ok = desc
                .modules
                .iter()
                .filter(|m| m.name != target.name)
                .all(|m| deployer.state.modules.get(&m.name).map(|ms| ms.attested).unwrap_or(false));
            ensure(others_ok, || format!("{flavor} bit {bit}: another module lost its attestation"))?;
            if deployed.failed.is_empty() {
                ensure(attested.failed[0].1.kind() == ErrorKind::AttestationFailed, || {
                    format!("{flavor} bit {bit}: {}", attested.failed[0].1)
                })?;
                attest_failed += 1;
            } else {
                load_rejected += 1;
            }
        }
        parts.push(format!(
            "{flavor}: {BIT_POSITIONS}/{BIT_POSITIONS} caught ({attest_failed} attestation failures, {load_rejected} rejected at load)"
        ));
    }
    Ok(parts.join("; "))
}

// ---------------------------------------------------------------------------
// 5. Key chain.
// ---------------------------------------------------------------------------

#[derive(Deserialize)]
struct KeyVector {
    root: String,
    vendor_id: u16,
    identity: String,
    vendor_key: String,
    module_key: String,
    sgx_module_key: String,
}

fn key(hex_text: &str) -> Result<Key128, String> {
    Key128::from_hex(hex_text).map_err(err)
}

fn criterion_5() -> Check {
    let abc = hex::encode(sha256(b"abc"));
    ensure(abc == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad", || {
        format!("sha256(abc) = {abc}")
    })?;
    let vectors: Vec<KeyVector> =
        serde_json::from_str(include_str!("data/keychain_vectors.json")).map_err(err)?;
    ensure(vectors.len() == 100, || format!("{} vectors", vectors.len()))?;
    for (i, v) in vectors.iter().enumerate() {
        let root = key(&v.root)?;
        let identity: [u8; 32] = hex::decode(&v.identity)
            .map_err(err)?
            .try_into()
            .map_err(|_| "identity length".to_string())?;
        let vk = derive_vendor_key(&root, v.vendor_id);
        ensure(vk == key(&v.vendor_key)?, || format!("vector {i}: vendor key"))?;
        ensure(derive_module_key(&vk, &identity) == key(&v.module_key)?, || format!("vector {i}: module key"))?;
        for flavor in [Flavor::Sancus, Flavor::TrustZone] {
            ensure(
                KeyHierarchy::new(flavor, root).module_key(v.vendor_id, &identity) == key(&v.module_key)?,
                || format!("vector {i}: {flavor} chain"),
            )?;
        }
        ensure(
            KeyHierarchy::new(Flavor::SgxSim, root).module_key(v.vendor_id, &identity) == key(&v.sgx_module_key)?,
            || format!("vector {i}: sgx-sim chain"),
        )?;
    }
    Ok(format!("{} vectors bit-exact for vendor, module and sgx-sim keys", vectors.len()))
}

// ---------------------------------------------------------------------------
// 6. AEAD.
// ---------------------------------------------------------------------------

#[derive(Deserialize)]
struct GcmVector {
    source: String,
    key: String,
    iv: String,
    aad: String,
    plaintext: String,
    ciphertext: String,
    tag: String,
}

fn flip(bytes: &mut [u8], bit: usize) {
    bytes[bit / 8] ^= 1 << (bit % 8);
}

fn criterion_6() -> Check {
    let vectors: Vec<GcmVector> = serde_json::from_str(include_str!("data/gcm_vectors.json")).map_err(err)?;
    let gcm = cipher_for(CipherSuite::AesGcm128).map_err(err)?;
    let mut tampers = 0usize;
    for v in &vectors {
        let k = Key128::from_slice(&hex::decode(&v.key).map_err(err)?).map_err(err)?;
        let iv: [u8; 12] = hex::decode(&v.iv).map_err(err)?.try_into().map_err(|_| "iv length".to_string())?;
        let nonce = AeadNonce::from_bytes(iv);
        let (aad, pt, ct) = (
            hex::decode(&v.aad).map_err(err)?,
            hex::decode(&v.plaintext).map_err(err)?,
            hex::decode(&v.ciphertext).map_err(err)?,
        );
        let tag = Tag128::from_slice(&hex::decode(&v.tag).map_err(err)?).map_err(err)?;
        let sealed = gcm.seal(&k, &nonce, &pt, &aad);
        ensure(sealed.ciphertext == ct && sealed.tag == tag, || format!("{}: seal mismatch", v.source))?;
        ensure(gcm.open(&k, &nonce, &ct, &tag, &aad).ok() == Some(pt.clone()), || {
            format!("{}: open mismatch", v.source)
        })?;
        for bit in 0..ct.len() * 8 {
            let mut c = ct.clone();
            flip(&mut c, bit);
            ensure(gcm.open(&k, &nonce, &c, &tag, &aad).is_err(), || format!("{}: ct bit {bit}", v.source))?;
            tampers += 1;
        }
        for bit in 0..128 {
            let mut t = *tag.as_bytes();
            flip(&mut t, bit);
            ensure(gcm.open(&k, &nonce, &ct, &Tag128(t), &aad).is_err(), || format!("{}: tag bit {bit}", v.source))?;
            tampers += 1;
        }
        for bit in 0..aad.len() * 8 {
            let mut a = aad.clone();
            flip(&mut a, bit);
            ensure(gcm.open(&k, &nonce, &ct, &tag, &a).is_err(), || format!("{}: aad bit {bit}", v.source))?;
            tampers += 1;
        }
        for bit in 0..96 {
            let mut n = iv;
            flip(&mut n, bit);
            ensure(gcm.open(&k, &AeadNonce::from_bytes(n), &ct, &tag, &aad).is_err(), || {
                format!("{}: nonce bit {bit}", v.source)
            })?;
            tampers += 1;
        }
    }
    ensure(
        aead_seal(CipherSuite::AesGcm128, &Key128::UNSET, &AeadNonce::event(0), b"x", b"").is_err(),
        || "unset key accepted".into(),
    )?;

    let mut rng = SecureRng::seeded(0xAEAD);
    let domains = [NonceDomain::Event, NonceDomain::Reply, NonceDomain::SetKey, NonceDomain::Grant];
    for i in 0..ROUND_TRIPS {
        let k = Key128::generate(&mut rng);
        let nonce = AeadNonce::new(domains[rng.gen_range(0..4)], rng.gen());
        let (pt_len, aad_len) = (rng.gen_range(0..256), rng.gen_range(0..32));
        let pt = rng.random_bytes(pt_len);
        let aad = rng.random_bytes(aad_len);
        let sealed = aead_seal(CipherSuite::AesGcm128, &k, &nonce, &pt, &aad).map_err(err)?;
        let opened = aead_open(CipherSuite::AesGcm128, &k, &nonce, &sealed.ciphertext, &sealed.tag, &aad).map_err(err)?;
        ensure(opened == pt, || format!("round trip {i}"))?;
        let mut wire = sealed.to_bytes();
        let bit = rng.gen_range(0..wire.len() * 8);
        flip(&mut wire, bit);
        let (c, t) = wire.split_at(wire.len() - 16);
        ensure(
            aead_open(CipherSuite::AesGcm128, &k, &nonce, c, &Tag128::from_slice(t).map_err(err)?, &aad).is_err(),
            || format!("round trip {i}: tampered bit {bit} accepted"),
        )?;
        tampers += 1;
    }
    Ok(format!(
        "{} known-answer vectors ({} published), {ROUND_TRIPS} round trips, {tampers} single-bit tampers all rejected",
        vectors.len(),
        vectors.iter().filter(|v| v.source.starts_with("gcm-submission")).count()
    ))
}

// ---------------------------------------------------------------------------
// 7. Lease protocol.
// ---------------------------------------------------------------------------

fn flood(world: &mut SimWorld) -> Result<(), String> {
    world.input_now("field1", "moisture", &1000u16.to_be_bytes()).map_err(err)?;
    for _ in 0..3 {
        world.input_now("field1", "timer", &[1]).map_err(err)?;
    }
    world.settle();
    Ok(())
}

fn criterion_7(corpora: &BTreeMap<Scenario, CorpusStats>) -> Check {
    let desc = Scenario::Flo.descriptor();
    let mut world = SimWorld::for_descriptor(&desc, 70).map_err(err)?;
    let mut owner = world.deployer(&desc, "owner");
    world.net().set_script(AttackScript::pass_through());
    world.net().set_attacks_enabled(true);
    owner.deploy_all().map_err(err)?;
    world.net().set_attacks_enabled(false);

    let valve: Vec<&String> = owner
        .state
        .transcript
        .iter()
        .filter(|l| l.contains("central.valve"))
        .collect();
    let steps: Vec<&str> = valve.iter().filter_map(|l| l.split(' ').next()).collect();
    ensure(steps == ["1", "2", "3"], || format!("valve transcript {valve:?}"))?;

    let mut intruder = world.deployer(&desc, "intruder");
    let _ = intruder.deploy();
    let _ = intruder.attest();
    let report = intruder.connect();
    let held: Vec<_> = report.failed.iter().filter(|(n, _)| n == "valve").collect();
    ensure(held.len() == 1 && held[0].1.kind() == ErrorKind::LeaseHeld, || {
        format!("second deployer on valve: {report}")
    })?;

    let grants: Vec<(String, Frame)> = world
        .net()
        .captured()
        .into_iter()
        .filter(|(_, f)| matches!(Message::parse(f), Ok(Message::CallEntry { entry, .. }) if entry == ENTRY_SET_EXCLUSIVE))
        .collect();
    ensure(!grants.is_empty(), || "no grant blobs captured".into())?;

    let replay = |world: &SimWorld| -> Result<usize, String> {
        let mut rejected = 0;
        for i in 0..GRANT_REPLAYS {
            let (to, frame) = &grants[i % grants.len()];
            let manager = world.manager(&node_of(world, to)).map_err(err)?;
            let reply = manager.lock().unwrap().handle_frame(frame);
            if reply.into_result().is_err() {
                rejected += 1;
            }
        }
        Ok(rejected)
    };
    let after_rotation = replay(&world)?;

    world.clear_trace();
    flood(&mut world)?;
    let acts = world.actuations();
    let valve_conn = owner.state.connections["valve"].clone();
    let fp = authex::runtime::key_fingerprint(&valve_conn.key);
    ensure(
        acts.last().map(|a| a.2.clone()) == Some(format!("conn={} key={fp}", valve_conn.conn_id)),
        || format!("owner lost the valve after replays: {acts:?}"),
    )?;

    for node in ["field1", "field2", "central"] {
        let m = world.manager(node).map_err(err)?;
        let reply = m.lock().unwrap().handle_frame(&Frame::call_entry(CONTROL_MODULE, CONTROL_RESET, &[]));
        reply.into_result().map_err(err)?;
    }
    let after_reset = replay(&world)?;
    ensure(after_rotation == GRANT_REPLAYS && after_reset == GRANT_REPLAYS, || {
        format!("grant replays rejected: {after_rotation}/{GRANT_REPLAYS} after rotation, {after_reset}/{GRANT_REPLAYS} after reset")
    })?;
    let corpus = criterion_7_corpus(corpora)?;
    Ok(format!(
        "transcript 1-2-3 ok; second deployer LeaseHeld; grant replays rejected {after_rotation}/{GRANT_REPLAYS} after rotation and {after_reset}/{GRANT_REPLAYS} after reset; {corpus}"
    ))
}

// ---------------------------------------------------------------------------
// 8. Update safety.
// ---------------------------------------------------------------------------

fn light_round_trip(run: &mut ScenarioRun, on: u8) -> Result<(), String> {
    let before = run.world.actuations().len();
    let reply = run
        .world
        .direct_now(&mut run.deployer, "user", &[CMD_LIGHT, on])
        .map_err(err)?
        .ok_or("no reply")?;
    let text = String::from_utf8_lossy(&reply).to_string();
    let want = if on == 1 { "\"lights\":true" } else { "\"lights\":false" };
    ensure(text.contains(want), || format!("reply {text}"))?;
    run.world.settle();
    let acts = run.world.actuations();
    ensure(
        acts.len() == before + 1 && acts[before].0 == "light-node.light_led" && acts[before].1 == [on],
        || format!("LED writes {:?}", &acts[before..]),
    )
}

fn criterion_8() -> Check {
    let module = "gateway";
    let mut run = ScenarioRun::deploy(Scenario::SmartHome, 80).map_err(err)?;
    light_round_trip(&mut run, 1)?;
    let ids_before: BTreeMap<String, u16> =
        run.deployer.state.connections.iter().map(|(n, c)| (n.clone(), c.conn_id)).collect();
    let keys_before: BTreeMap<String, Key128> =
        run.deployer.state.connections.iter().map(|(n, c)| (n.clone(), c.key)).collect();

    let target = module.to_string();
    run.deployer.set_package_tamper(Some(Box::new(move |m, bytes| {
        if m == target {
            let last = bytes.len() - 1;
            bytes[last] ^= 1;
        }
    })));
    run.world.clear_trace();
    let failed = run.deployer.update(module, &UpdateOptions::default());
    ensure(matches!(&failed, Err(e) if e.kind() == ErrorKind::AttestationFailed), || {
        format!("tampered update returned {failed:?}")
    })?;
    let unloads = run.deployer.state.transcript.iter().filter(|l| l.contains("deactivated")).count();
    ensure(unloads == 0, || "old module was deactivated by a failed update".into())?;
    run.deployer.set_package_tamper(None);
    light_round_trip(&mut run, 0)?;

    let latency = run.world.net().latency();
    run.world.clear_trace();
    let report = run.deployer.update(module, &UpdateOptions::default()).map_err(err)?;
    let update_trace = run.world.trace();

    let ids_after: BTreeMap<String, u16> =
        run.deployer.state.connections.iter().map(|(n, c)| (n.clone(), c.conn_id)).collect();
    ensure(ids_after == ids_before, || "conn_ids changed".into())?;
    let touched: Vec<_> = run
        .descriptor
        .connections
        .iter()
        .filter(|c| c.from_module.as_deref() == Some(module) || c.to_module.as_deref() == Some(module))
        .cloned()
        .collect();
    ensure(report.connections.len() == touched.len(), || {
        format!("{} of {} connections re-established", report.connections.len(), touched.len())
    })?;
    for c in &touched {
        ensure(run.deployer.state.connections[&c.name].key != keys_before[&c.name], || {
            format!("{} kept its key", c.name)
        })?;
    }

    let (mut probes, mut rejected) = (0, 0);
    for c in &touched {
        let Sink::Module { module: sink, .. } = c.sink().map_err(err)? else { continue };
        let ms = run.deployer.state.modules[&sink].clone();
        let conn_id = ids_before[&c.name];
        let old = keys_before[&c.name];
        let manager = run.world.manager(&ms.node).map_err(err)?;
        for nonce in 0..25u16 {
            let sealed = seal_event(CipherSuite::AesGcm128, &old, nonce, &[CMD_LIGHT, 1]).map_err(err)?;
            let frame = if c.is_request() {
                let mut args = conn_id.to_be_bytes().to_vec();
                args.extend_from_slice(&sealed);
                Frame::call_entry(ms.module_id, ENTRY_HANDLE_INPUT, &args)
            } else {
                Frame::remote_event(ms.module_id, conn_id, &sealed)
            };
            let before = firing_count(&run.world);
            manager.lock().unwrap().handle_frame(&frame);
            run.world.settle();
            probes += 1;
            if firing_count(&run.world) == before {
                rejected += 1;
            }
        }
    }
    ensure(rejected == probes, || format!("old keys accepted in {} of {probes} probes", probes - rejected))?;

    let deployer_frames: Vec<(u64, bool)> = update_trace
        .frames()
        .filter_map(|f| match f {
            TraceRecord::Frame { ts, from, to, .. } if from == "deployer" => Some((*ts, true)),
            TraceRecord::Frame { ts, to, .. } if to == "deployer" => Some((*ts, false)),
            _ => None,
        })
        .collect();
    let first_request = deployer_frames
        .iter()
        .find(|(ts, out)| *out && *ts >= report.deactivated_at)
        .map(|(ts, _)| *ts);
    let last_reply = deployer_frames.iter().filter(|(_, out)| !out).map(|(ts, _)| *ts).max();
    let calls = deployer_frames
        .iter()
        .filter(|(ts, out)| *out && *ts >= report.deactivated_at)
        .count() as u64;
    ensure(first_request == Some(report.deactivated_at), || {
        format!("window opens at {} but the unload left at {first_request:?}", report.deactivated_at)
    })?;
    ensure(last_reply.map(|t| t + latency) == Some(report.reconnected_at), || {
        format!("window closes at {} but the last reply arrived at {last_reply:?}+{latency}", report.reconnected_at)
    })?;
    ensure(report.downtime_micros() == calls * 2 * latency, || {
        format!("window {} us for {calls} calls at {latency} us", report.downtime_micros())
    })?;

    light_round_trip(&mut run, 1)?;
    Ok(format!(
        "{} conn_ids preserved, {} keys rotated, old keys rejected {rejected}/{probes}; failed attestation left the old topology serving; window {:.3} ms = {calls} calls from unload to last re-key",
        ids_after.len(),
        touched.len(),
        report.downtime_ms()
    ))
}

// ---------------------------------------------------------------------------
// 9. Descriptor fidelity.
// ---------------------------------------------------------------------------

fn criterion_9() -> Check {
    let text = include_str!("data/mixed_descriptor.json");
    let desc = DeploymentDescriptor::parse(text).map_err(err)?;
    let flavors: Vec<Flavor> = desc.nodes.iter().map(|n| n.flavor).collect();
    ensure(flavors == Flavor::ALL, || format!("flavors {flavors:?}"))?;
    for n in &desc.nodes {
        ensure(n.extra.len() >= 2, || format!("node {} lost its extra fields", n.name))?;
    }
    for m in &desc.modules {
        ensure(!m.extra.is_empty(), || format!("module {} lost its extra fields", m.name))?;
    }
    let original: serde_json::Value = serde_json::from_str(text).map_err(err)?;
    let written: serde_json::Value = serde_json::from_str(&desc.to_json()).map_err(err)?;
    ensure(original == written, || "serialization changed the document".into())?;
    ensure(DeploymentDescriptor::parse(&desc.to_json()).map_err(err)? == desc, || "reparse differs".into())?;

    let mut world = SimWorld::for_descriptor(&desc, 90).map_err(err)?;
    let mut deployer = world.deployer(&desc, "owner");
    deployer.deploy_all().map_err(err)?;
    world.settle();
    world.input_now("probe1", "sensor", &10u16.to_be_bytes()).map_err(err)?;
    world.settle();
    world.input_now("probe2", "sensor", &30u16.to_be_bytes()).map_err(err)?;
    world.settle();
    let shown: Vec<Vec<u8>> = world.actuations().into_iter().map(|a| a.1).collect();
    ensure(shown == [10u16.to_be_bytes().to_vec(), 20u16.to_be_bytes().to_vec()], || {
        format!("display writes {shown:?}")
    })?;
    let echo = world.direct_now(&mut deployer, "ping", b"hello").map_err(err)?;
    ensure(echo.as_deref() == Some(b"hello".as_slice()), || format!("echo {echo:?}"))?;
    Ok(format!(
        "{} nodes / {} modules / {} connections parsed with extra fields, deployed on sancus+trustzone+sgx-sim, round trip unchanged",
        desc.nodes.len(),
        desc.modules.len(),
        desc.connections.len()
    ))
}

// ---------------------------------------------------------------------------
// 10. Benchmark shape.
// ---------------------------------------------------------------------------

fn criterion_10() -> Check {
    let report = bench_rtt(BENCH_ITERATIONS, 100).map_err(err)?;
    let labels: Vec<&str> = report.rows.iter().map(|r| r.label).collect();
    let expected = [
        "aes instructions",
        "spongent HW instructions",
        "spongent SW instructions",
        "Host-enclave boundary",
        "Secure I/O",
        "Network delay",
        "Other",
    ];
    ensure(labels == expected, || format!("rows {labels:?}"))?;
    ensure(report.replies_ok == BENCH_ITERATIONS && report.led_actuations == BENCH_ITERATIONS, || {
        format!("{} replies, {} LED writes", report.replies_ok, report.led_actuations)
    })?;
    ensure(!report.comparable_to_hardware, || "report claims hardware comparability".into())?;
    ensure(report.consistent(), || {
        format!("stage sum {:.2}% off RTT", report.sum_deviation() * 100.0)
    })?;
    println!("{report}");
    Ok(format!(
        "{} rows, RTT {:.4} ms, stage sum within {:.3}% (limit {:.0}%)",
        labels.len(),
        report.rtt_ms,
        report.sum_deviation() * 100.0,
        SUM_TOLERANCE * 100.0
    ))
}

// ---------------------------------------------------------------------------

fn run(id: u8, name: &str, f: impl FnOnce() -> Check) -> bool {
    let started = Instant::now();
    let outcome = panic::catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
        Err(p
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_else(|| "panicked".into()))
    });
    let secs = started.elapsed().as_secs_f64();
    match outcome {
        Ok(detail) => {
            println!("criterion {id:>2} {name}: PASS [{secs:.1}s] {detail}");
            true
        }
        Err(detail) => {
            println!("criterion {id:>2} {name}: FAIL [{secs:.1}s] {detail}");
            false
        }
    }
}

fn main() {
    if std::env::args().any(|a| a == "--list") {
        println!("acceptance: test");
        return;
    }
    let started = Instant::now();
    let mut corpora = BTreeMap::new();
    for s in [Scenario::Flo, Scenario::SmartHome] {
        corpora.insert(s, corpus(s, CORPUS_SEEDS));
    }
    let corpus_time = started.elapsed();

    let results = [
        run(1, "authenticity under attack", || criterion_1(&corpora, corpus_time)),
        run(2, "negative control", criterion_2),
        run(3, "replay-once", criterion_3),
        run(4, "attestation soundness", criterion_4),
        run(5, "key-chain exactness", criterion_5),
        run(6, "AEAD correctness", criterion_6),
        run(7, "secure-I/O lease protocol", || criterion_7(&corpora)),
        run(8, "update safety", criterion_8),
        run(9, "descriptor fidelity", criterion_9),
        run(10, "benchmark shape", criterion_10),
    ];
    let passed = results.iter().filter(|ok| **ok).count();
    println!("acceptance: {passed}/{} criteria passed", results.len());
    if passed != results.len() {
        std::process::exit(1);
    }
}
