//! `authex`: deployer toolchain, node server and harness front end.
//!
//! Descriptors whose node addresses all start with `sim://` run against an
//! in-process simulated world rebuilt from `--seed` on every invocation.
//! Any other addresses are TCP endpoints served by `authex node`.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;

use authex::clock::{SharedClock, WallClock};
use authex::crypto::SecureRng;
use authex::deployer::descriptor::DeploymentDescriptor;
use authex::deployer::{AttestationManager, CommandReport, Credentials, Deployer, DeploymentState, UpdateOptions};
use authex::harness::bench::bench_rtt;
use authex::harness::scenarios::{run_adversarial_with, RunOptions, Scenario};
use authex::harness::{configs_for, AttackScript, SimWorld};
use authex::manager::{serve, EventManager, TcpTransport};
use authex::secure_io::InfrastructureProvider;
use authex::tee::{Flavor, Node, NodeConfig};
use authex::{behavior::BehaviorRegistry, Error, ErrorKind, Result};

#[derive(Parser)]
#[command(name = "authex", version, about = "Deploy and exercise authentic event-driven applications")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Load every module of the descriptor.
    Deploy(Common),
    /// Deploy, then attest every loaded module.
    Attest(Common),
    /// Deploy, attest, then establish every connection.
    Connect(Common),
    /// Replace one module and re-key its connections.
    Update {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        module: String,
        /// Hex initial state for the new instance.
        #[arg(long)]
        init: Option<String>,
        /// Carry state over through a transfer/restore connection.
        #[arg(long)]
        transfer: bool,
    },
    /// Send one event or request on a direct connection.
    Send {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        connection: String,
        /// Payload as UTF-8 text.
        #[arg(long, conflicts_with = "hex")]
        payload: Option<String>,
        /// Payload as hex.
        #[arg(long)]
        hex: Option<String>,
    },
    /// Profile the smart-home light round trip.
    Bench {
        /// Accepted for symmetry with the other commands; the bench always
        /// deploys the bundled smart-home application.
        #[arg(long)]
        descriptor: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 100)]
        iterations: usize,
        /// Also write the report as JSON.
        #[arg(long)]
        json: Option<PathBuf>,
    },
    /// Serve one node over TCP.
    Node {
        #[arg(long)]
        config: PathBuf,
        /// Listen here instead of the configured address.
        #[arg(long)]
        listen: Option<String>,
    },
    /// Write node configuration files for a descriptor.
    Nodes {
        #[arg(long)]
        descriptor: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run one seeded adversarial scenario and check it with the oracle.
    Harness {
        #[arg(long, value_parser = parse_scenario)]
        scenario: Scenario,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 40)]
        stimuli: usize,
        #[arg(long, value_enum, default_value_t = Attack::Random)]
        attack: Attack,
        /// Write the line-oriented trace here.
        #[arg(long)]
        trace: Option<PathBuf>,
    },
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    descriptor: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Node name or address of an sgx-sim node to host the attestation manager.
    #[arg(long)]
    attman: Option<String>,
    #[arg(long, default_value = "authex-state.json")]
    state: PathBuf,
    /// Node configuration files (TCP mode); derived from the seed when absent.
    #[arg(long, num_args = 1..)]
    nodes: Vec<PathBuf>,
    #[arg(long, default_value = "owner")]
    deployer_id: String,
    #[arg(long, default_value_t = 5000)]
    timeout_ms: u64,
}

#[derive(Clone, Copy, ValueEnum)]
enum Attack {
    Random,
    Pass,
    Drop,
}

fn parse_scenario(s: &str) -> std::result::Result<Scenario, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum Phase {
    Deploy,
    Attest,
    Connect,
}

type Step = fn(&mut Deployer) -> CommandReport;

/// The deployer plus whatever keeps its nodes alive.
struct Session {
    deployer: Deployer,
    world: Option<SimWorld>,
    state_path: PathBuf,
}

impl Session {
    fn open(c: &Common) -> Result<Session> {
        let text = std::fs::read_to_string(&c.descriptor)?;
        let desc = DeploymentDescriptor::parse(&text)?;
        let timeout = Duration::from_millis(c.timeout_ms);
        let simulated = desc.nodes.iter().all(|n| n.address.starts_with("sim://"));
        if !simulated && desc.nodes.iter().any(|n| n.address.starts_with("sim://")) {
            return Err(Error::new(ErrorKind::Config, "descriptor mixes sim:// and TCP nodes"));
        }
        let (mut deployer, world) = if simulated {
            let world = SimWorld::for_descriptor(&desc, c.seed)?;
            let deployer = world.deployer(&desc, &c.deployer_id).with_timeout(timeout);
            (deployer, Some(world))
        } else {
            let configs = if c.nodes.is_empty() {
                configs_for(&desc, c.seed)
            } else {
                c.nodes.iter().map(|p| NodeConfig::load(p)).collect::<Result<Vec<_>>>()?
            };
            let clock: SharedClock = WallClock::shared();
            let mut provider = InfrastructureProvider::new(clock.clone());
            for cfg in &configs {
                provider.register_node(cfg);
            }
            let vendors: Vec<u16> = desc.modules.iter().map(|m| m.vendor_id).collect();
            let mut state = DeploymentState::load_or_new(&c.state, &c.deployer_id)?;
            if c.attman.is_some() {
                // Handles die with the manager instance that issued them.
                for ms in state.modules.values_mut().filter(|m| m.key_handle.is_some()) {
                    ms.key_handle = None;
                    ms.attested = false;
                }
            }
            let deployer = Deployer::new(
                desc.clone(),
                state,
                TcpTransport::new(timeout),
                Credentials::issue(&configs, &vendors),
                Arc::new(Mutex::new(provider)),
                clock,
                SecureRng::from_entropy(),
            )
            .with_timeout(timeout);
            (deployer, None)
        };
        if let Some(target) = &c.attman {
            let node = desc
                .nodes
                .iter()
                .find(|n| &n.name == target || &n.address == target)
                .ok_or_else(|| Error::new(ErrorKind::Config, format!("attestation manager node {target} not in descriptor")))?;
            if node.flavor != Flavor::SgxSim {
                return Err(Error::new(ErrorKind::Config, "the attestation manager needs an sgx-sim node"));
            }
            let vendor = desc
                .modules
                .iter()
                .find(|m| m.node == node.name)
                .map(|m| m.vendor_id)
                .ok_or_else(|| Error::new(ErrorKind::Config, format!("no vendor of ours runs on {}", node.name)))?;
            let transport: Arc<dyn authex::manager::Transport> = match &world {
                Some(w) => w.net().clone(),
                None => TcpTransport::new(timeout),
            };
            let mut rng = SecureRng::seeded(c.seed ^ 0xA77A);
            let am = AttestationManager::launch(
                transport,
                &node.name,
                &node.address,
                vendor,
                deployer.credentials().clone(),
                &mut rng,
                timeout,
            )?;
            info!("attestation manager is module {} on {}", am.module_id(), node.name);
            deployer.use_attestation_manager(am);
        }
        Ok(Session {
            deployer,
            world,
            state_path: c.state.clone(),
        })
    }

    fn settle(&mut self) {
        if let Some(w) = self.world.as_mut() {
            w.settle();
        }
    }

    /// Runs phases in order up to `last`, stopping at the first failing one.
    fn run_to(&mut self, last: Phase) -> bool {
        let steps: [(Phase, Step); 3] = [
            (Phase::Deploy, Deployer::deploy),
            (Phase::Attest, Deployer::attest),
            (Phase::Connect, Deployer::connect),
        ];
        for (phase, step) in steps {
            if phase > last {
                break;
            }
            let report = step(&mut self.deployer);
            self.settle();
            println!("{report}");
            if !report.is_success() {
                return false;
            }
        }
        true
    }

    fn save(&self) -> Result<()> {
        self.deployer.state.save(&self.state_path)?;
        info!("state written to {}", self.state_path.display());
        Ok(())
    }

    fn print_new_actuations(&self, before: usize) {
        if let Some(w) = &self.world {
            for (device, value, attribution) in w.actuations().into_iter().skip(before) {
                println!("actuation {device} = {} ({attribution})", hex::encode(value));
            }
        }
    }

    fn actuation_count(&self) -> usize {
        self.world.as_ref().map_or(0, |w| w.actuations().len())
    }
}

fn phase_command(c: &Common, phase: Phase) -> Result<bool> {
    let mut s = Session::open(c)?;
    let ok = s.run_to(phase);
    s.save()?;
    Ok(ok)
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Deploy(c) => phase_command(&c, Phase::Deploy),
        Command::Attest(c) => phase_command(&c, Phase::Attest),
        Command::Connect(c) => phase_command(&c, Phase::Connect),
        Command::Update {
            common,
            module,
            init,
            transfer,
        } => {
            let init = init
                .map(|h| hex::decode(h).map_err(|e| Error::new(ErrorKind::Config, format!("--init: {e}"))))
                .transpose()?;
            let mut s = Session::open(&common)?;
            if !s.run_to(Phase::Connect) {
                s.save()?;
                return Ok(false);
            }
            let result = s.deployer.update(&module, &UpdateOptions { init, transfer });
            s.settle();
            s.save()?;
            let r = result?;
            println!(
                "update {}: module {} -> {}, {} connections re-keyed, {} SetKey calls, {} route updates, downtime {:.3} ms",
                r.module,
                r.old_module_id,
                r.new_module_id,
                r.connections.len(),
                r.set_key_calls,
                r.route_updates,
                r.downtime_ms()
            );
            Ok(true)
        }
        Command::Send {
            common,
            connection,
            payload,
            hex: hex_payload,
        } => {
            let bytes = match (payload, hex_payload) {
                (Some(p), _) => p.into_bytes(),
                (None, Some(h)) => hex::decode(h).map_err(|e| Error::new(ErrorKind::Config, format!("--hex: {e}")))?,
                (None, None) => return Err(Error::new(ErrorKind::Config, "give --payload or --hex")),
            };
            let mut s = Session::open(&common)?;
            if !s.run_to(Phase::Connect) {
                s.save()?;
                return Ok(false);
            }
            let before = s.actuation_count();
            let result = s.deployer.send_direct(&connection, &bytes);
            s.settle();
            s.save()?;
            match result? {
                Some(reply) => match String::from_utf8(reply.clone()) {
                    Ok(text) => println!("reply: {text}"),
                    Err(_) => println!("reply: {}", hex::encode(reply)),
                },
                None => println!("sent"),
            }
            s.print_new_actuations(before);
            Ok(true)
        }
        Command::Bench {
            descriptor: _,
            seed,
            iterations,
            json,
        } => {
            let report = bench_rtt(iterations, seed)?;
            println!("{report}");
            if let Some(path) = json {
                let doc = serde_json::to_string_pretty(&report).expect("report serializes");
                std::fs::write(path, doc)?;
            }
            Ok(report.consistent())
        }
        Command::Node { config, listen } => {
            let cfg = NodeConfig::load(&config)?;
            let addr = listen.unwrap_or_else(|| cfg.address.clone());
            let node = Node::new(cfg, BehaviorRegistry::builtin(), WallClock::shared(), SecureRng::from_entropy())?;
            let manager = EventManager::new(node, TcpTransport::new(Duration::from_secs(5)));
            let listener = std::net::TcpListener::bind(&addr)?;
            let handle = serve(Arc::new(Mutex::new(manager)), listener)?;
            println!("listening on {}", handle.local_addr);
            handle.join();
            Ok(true)
        }
        Command::Nodes { descriptor, seed, out } => {
            let desc = DeploymentDescriptor::parse(&std::fs::read_to_string(&descriptor)?)?;
            std::fs::create_dir_all(&out)?;
            for cfg in configs_for(&desc, seed) {
                let path = out.join(format!("{}.toml", cfg.node_id));
                std::fs::write(&path, cfg.to_toml())?;
                println!("{}", path.display());
            }
            Ok(true)
        }
        Command::Harness {
            scenario,
            seed,
            stimuli,
            attack,
            trace,
        } => {
            let script = match attack {
                Attack::Random => AttackScript::random(seed),
                Attack::Pass => AttackScript::pass_through(),
                Attack::Drop => AttackScript::all_drop(),
            };
            let opts = RunOptions {
                stimuli,
                ..RunOptions::default()
            };
            let r = run_adversarial_with(scenario, seed, script, opts)?;
            if let Some(path) = trace {
                write_text(&path, &r.trace.export())?;
            }
            let v = &r.verdict;
            println!(
                "{scenario} seed {seed}: {} actuations, {} explained, {} violations, inconclusive {}, {} states",
                v.actuations,
                v.explained,
                v.violations.len(),
                v.inconclusive,
                v.states
            );
            for x in &v.violations {
                println!("  violation #{} at {} on {}: {}", x.index, x.ts, x.device, x.reason);
            }
            Ok(v.is_authentic())
        }
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text)?;
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
