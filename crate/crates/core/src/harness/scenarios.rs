//! Example deployments and seeded workloads.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::apps::{CMD_HEAT, CMD_LIGHT};
use crate::behavior::BehaviorRegistry;
use crate::deployer::descriptor::DeploymentDescriptor;
use crate::deployer::Deployer;
use crate::error::{Error, ErrorKind, Result};
use crate::runtime::{key_fingerprint, Faults};

use super::net::AttackScript;
use super::oracle::{verify_authenticity, verify_with, Verdict, DEFAULT_STATE_BUDGET};
use super::trace::CausalTrace;
use super::SimWorld;

pub const FLO_DESCRIPTOR: &str = include_str!("../../assets/descriptors/flo.json");
pub const SMART_HOME_DESCRIPTOR: &str = include_str!("../../assets/descriptors/smart-home.json");
pub const AGG_DESCRIPTOR: &str = include_str!("../../assets/descriptors/agg.json");

/// Gap between scheduled stimuli, in simulated microseconds.
const MIN_GAP: u64 = 500;
const MAX_GAP: u64 = 20_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Scenario {
    Flo,
    SmartHome,
    Agg,
}

impl Scenario {
    pub const ALL: [Scenario; 3] = [Scenario::Flo, Scenario::SmartHome, Scenario::Agg];

    pub fn name(self) -> &'static str {
        match self {
            Scenario::Flo => "flo",
            Scenario::SmartHome => "smart-home",
            Scenario::Agg => "agg",
        }
    }

    pub fn descriptor_text(self) -> &'static str {
        match self {
            Scenario::Flo => FLO_DESCRIPTOR,
            Scenario::SmartHome => SMART_HOME_DESCRIPTOR,
            Scenario::Agg => AGG_DESCRIPTOR,
        }
    }

    pub fn descriptor(self) -> DeploymentDescriptor {
        DeploymentDescriptor::parse(self.descriptor_text()).expect("bundled descriptors are valid")
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Scenario {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Scenario::ALL
            .into_iter()
            .find(|x| x.name() == s)
            .ok_or_else(|| Error::new(ErrorKind::ScenarioError, format!("unknown scenario '{s}'")))
    }
}

/// A deployed scenario ready for stimuli.
#[derive(Debug)]
pub struct ScenarioRun {
    pub scenario: Scenario,
    pub descriptor: DeploymentDescriptor,
    pub world: SimWorld,
    pub deployer: Deployer,
}

impl ScenarioRun {
    /// Builds the nodes and runs deploy, attest and connect on a quiet network.
    pub fn deploy(scenario: Scenario, seed: u64) -> Result<ScenarioRun> {
        let descriptor = scenario.descriptor();
        let mut world = SimWorld::for_descriptor(&descriptor, seed)?;
        let mut deployer = world.deployer(&descriptor, "owner");
        deployer.deploy_all()?;
        world.settle();
        Ok(ScenarioRun {
            scenario,
            descriptor,
            world,
            deployer,
        })
    }

    /// Schedules `count` stimuli after the current time.
    pub fn schedule_workload(&mut self, seed: u64, count: usize) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x0057_0A0D);
        let mut at = self.world.now_micros();
        for _ in 0..count {
            at += rng.gen_range(MIN_GAP..=MAX_GAP);
            match self.scenario {
                Scenario::Flo => {
                    let field = if rng.gen_bool(0.5) { "field1" } else { "field2" };
                    if rng.gen_bool(0.35) {
                        let level: u16 = rng.gen_range(600..1400);
                        self.world.schedule_input(at, field, "moisture", &level.to_be_bytes());
                    } else {
                        self.world.schedule_input(at, field, "timer", &[1]);
                    }
                }
                Scenario::SmartHome => match rng.gen_range(0..4) {
                    0 => {
                        let t: u16 = rng.gen_range(120..280);
                        self.world.schedule_input(at, "sensor-node", "thermometer", &t.to_be_bytes());
                    }
                    1 => {
                        let v = rng.gen_range(0..2u8);
                        self.world.schedule_input(at, "light-node", "light_button", &[v]);
                    }
                    2 => {
                        let v = rng.gen_range(0..2u8);
                        self.world.schedule_direct(at, "user", &[CMD_LIGHT, v]);
                    }
                    _ => {
                        let v = rng.gen_range(0..2u8);
                        self.world.schedule_direct(at, "user", &[CMD_HEAT, v]);
                    }
                },
                Scenario::Agg => {
                    let (node, v) = if rng.gen_bool(0.5) { ("probe1", 0) } else { ("probe2", 1) };
                    let reading: u16 = rng.gen_range(0..1000) + v;
                    self.world.schedule_input(at, node, "sensor", &reading.to_be_bytes());
                }
            }
        }
    }

    pub fn run(&mut self) {
        self.world.run(Some(&mut self.deployer));
    }

    pub fn verify(&self) -> Result<Verdict> {
        verify_authenticity(&self.descriptor, &self.world.trace())
    }
}

/// Outcome of one adversarial run.
#[derive(Debug, Clone)]
pub struct AdversarialRun {
    pub scenario: Scenario,
    pub seed: u64,
    pub trace: CausalTrace,
    pub verdict: Verdict,
    /// Fingerprint of the deployer's current key per driver connection id.
    pub lease_keys: BTreeMap<u16, String>,
}

/// Knobs of [`run_adversarial_with`].
#[derive(Debug, Clone, Copy)]
pub struct RunOptions {
    pub stimuli: usize,
    pub faults: Faults,
    pub budget: usize,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions {
            stimuli: 40,
            faults: Faults::default(),
            budget: DEFAULT_STATE_BUDGET,
        }
    }
}

/// Deploys, then runs a seeded workload while `script` attacks every link.
pub fn run_adversarial(scenario: Scenario, seed: u64, script: AttackScript, stimuli: usize) -> Result<AdversarialRun> {
    run_adversarial_with(
        scenario,
        seed,
        script,
        RunOptions {
            stimuli,
            ..RunOptions::default()
        },
    )
}

pub fn run_adversarial_with(scenario: Scenario, seed: u64, script: AttackScript, opts: RunOptions) -> Result<AdversarialRun> {
    let mut run = ScenarioRun::deploy(scenario, seed)?;
    run.world.set_faults(opts.faults);
    run.world.clear_trace();
    run.world.net().set_script(script);
    run.world.net().set_attacks_enabled(true);
    run.schedule_workload(seed, opts.stimuli);
    run.run();
    run.world.net().set_attacks_enabled(false);
    let trace = run.world.trace();
    let verdict = verify_with(&run.descriptor, &trace, &BehaviorRegistry::builtin(), opts.budget)?;
    let lease_keys = run
        .deployer
        .state
        .connections
        .values()
        .filter(|c| c.driver.is_some())
        .map(|c| (c.conn_id, key_fingerprint(&c.key)))
        .collect();
    Ok(AdversarialRun {
        scenario,
        seed,
        trace,
        verdict,
        lease_keys,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bundled_descriptors_parse() {
        for s in Scenario::ALL {
            let d = s.descriptor();
            assert_eq!(d.nodes.len(), 3, "{s}");
            assert_eq!(s.name().parse::<Scenario>().unwrap(), s);
        }
        assert!("nope".parse::<Scenario>().is_err());
    }
}
