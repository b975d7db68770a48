//! Example applications: flood detection, sensor aggregation, the smart
//! home, and a few small behaviors used by tests.
//!
//! Integers on the wire are big-endian. Every behavior here is deterministic
//! so the reference interpreter can replay it.

use crate::behavior::{Behavior, BehaviorSpec, Context};
use crate::error::Result;

pub fn all_specs() -> Vec<BehaviorSpec> {
    vec![
        flo_sensor_spec(),
        flo_actuator_spec(),
        agg_sensor_spec(),
        agg_spec(),
        web_spec(),
        gateway_spec(),
        temp_sensor_spec(),
        thermostat_spec(),
        light_switch_spec(),
        echo_spec(),
        counter_spec(),
        relay_spec(),
        idle_spec(),
        attman_spec(),
    ]
}

fn be_u16(payload: &[u8]) -> Option<u16> {
    match payload {
        [hi, lo, ..] => Some(u16::from_be_bytes([*hi, *lo])),
        _ => None,
    }
}

// ---------------------------------------------------------------------------
// Flo
// ---------------------------------------------------------------------------

/// Field sensor: once moisture exceeds the threshold it counts timer ticks
/// and raises `Flooded` when the count reaches the limit.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FloSensor {
    saturated: u16,
    max_ticks: u8,
    flooded: bool,
    count: u8,
}

pub const FLO_DEFAULT_INIT: &[u8] = &[0x03, 0x84, 3];

impl FloSensor {
    pub fn from_init(init: &[u8]) -> std::result::Result<Self, String> {
        match init {
            [hi, lo, max] => Ok(FloSensor {
                saturated: u16::from_be_bytes([*hi, *lo]),
                max_ticks: *max,
                flooded: false,
                count: 0,
            }),
            _ => Err("expected SATURATED(2) and MAX(1)".into()),
        }
    }
}

impl Behavior for FloSensor {
    fn on_input(&mut self, label: &str, payload: &[u8], ctx: &mut dyn Context) {
        match label {
            "Sensor" => {
                if let Some(level) = be_u16(payload) {
                    self.flooded = level > self.saturated;
                    self.count = 0;
                }
            }
            "Tick" if self.flooded && self.count < self.max_ticks => {
                self.count += 1;
                if self.count == self.max_ticks {
                    ctx.output("Flooded", &[1]);
                }
            }
            _ => {}
        }
    }

    fn snapshot(&self) -> Vec<u8> {
        vec![self.flooded as u8, self.count]
    }

    fn clone_box(&self) -> Box<dyn Behavior> {
        Box::new(self.clone())
    }
}

pub fn flo_sensor_spec() -> BehaviorSpec {
    BehaviorSpec {
        name: "FloS",
        inputs: &["Sensor", "Tick"],
        outputs: &["Flooded"],
        requests: &[],
        handlers: &[],
        entries: &[],
        default_init: FLO_DEFAULT_INIT,
        factory: |init| Ok(Box::new(FloSensor::from_init(init)?)),
    }
}

/// Central tap: any flood alarm closes the tap.
#[derive(Clone, Debug, Default)]
pub struct FloActuator {
    alarms: u32,
}

impl Behavior for FloActuator {
    fn on_input(&mut self, label: &str, _payload: &[u8], ctx: &mut dyn Context) {
        if label == "Flooded" {
            self.alarms += 1;
            ctx.output("Tap", &[0]);
        }
    }

    fn snapshot(&self) -> Vec<u8> {
        self.alarms.to_be_bytes().to_vec()
    }

    fn clone_box(&self) -> Box<dyn Behavior> {
        Box::new(self.clone())
    }
}

pub fn flo_actuator_spec() -> BehaviorSpec {
    BehaviorSpec {
        name: "FloA",
        inputs: &["Flooded"],
        outputs: &["Tap"],
        requests: &[],
        handlers: &[],
        entries: &[],
        default_init: &[],
        factory: |_| Ok(Box::new(FloActuator::default())),
    }
}

// ---------------------------------------------------------------------------
// Agg
// ---------------------------------------------------------------------------

#[derive(Clone, Debug, Default)]
pub struct AggSensor;

impl Behavior for AggSensor {
    fn on_input(&mut self, label: &str, payload: &[u8], ctx: &mut dyn Context) {
        if label == "Sensor" {
            if let Some(v) = be_u16(payload) {
                ctx.output("Reading", &v.to_be_bytes());
            }
        }
    }

    fn snapshot(&self) -> Vec<u8> {
        Vec::new()
    }

    fn clone_box(&self) -> Box<dyn Behavior> {
        Box::new(self.clone())
    }
}

pub fn agg_sensor_spec() -> BehaviorSpec {
    BehaviorSpec {
        name: "AggS",
        inputs: &["Sensor"],
        outputs: &["Reading"],
        requests: &[],
        handlers: &[],
        entries: &[],
        default_init: &[],
        factory: |_| Ok(Box::new(AggSensor)),
    }
}

/// Displays the mean of the latest reading from each field.
#[derive(Clone, Debug, Default)]
pub struct Aggregator {
    latest: [Option<u16>; 2],
}

impl Behavior for Aggregator {
    fn on_input(&mut self, label: &str, payload: &[u8], ctx: &mut dyn Context) {
        let slot = match label {
            "Reading1" => 0,
            "Reading2" => 1,
            _ => return,
        };
        let Some(v) = be_u16(payload) else { return };
        self.latest[slot] = Some(v);
        let known: Vec<u32> = self.latest.iter().flatten().map(|v| *v as u32).collect();
        let mean = known.iter().sum::<u32>() / known.len() as u32;
        ctx.output("Display", &(mean as u16).to_be_bytes());
    }

    fn snapshot(&self) -> Vec<u8> {
        self.latest
            .iter()
            .flat_map(|v| match v {
                Some(x) => [1, (x >> 8) as u8, *x as u8],
                None => [0, 0, 0],
            })
            .collect()
    }

    fn clone_box(&self) -> Box<dyn Behavior> {
        Box::new(self.clone())
    }
}

pub fn agg_spec() -> BehaviorSpec {
    BehaviorSpec {
        name: "Agg",
        inputs: &["Reading1", "Reading2"],
        outputs: &["Display"],
        requests: &[],
        handlers: &[],
        entries: &[],
        default_init: &[],
        factory: |_| Ok(Box::new(Aggregator::default())),
    }
}

// ---------------------------------------------------------------------------
// Smart home
// ---------------------------------------------------------------------------

pub const CMD_LIGHT: u8 = 1;
pub const CMD_HEAT: u8 = 2;

/// User-facing front end. Commands arrive on the `user_request` handler and
/// are forwarded to the gateway; the reply is the gateway's status document.
#[derive(Clone, Debug, Default)]
pub struct Web {
    last_status: Vec<u8>,
}

impl Behavior for Web {
    fn on_input(&mut self, label: &str, payload: &[u8], _ctx: &mut dyn Context) {
        if label == "status" {
            self.last_status = payload.to_vec();
        }
    }

    fn on_request(&mut self, label: &str, payload: &[u8], ctx: &mut dyn Context) -> Vec<u8> {
        if label != "user_request" {
            return Vec::new();
        }
        match ctx.request("gw", payload) {
            Ok(status) => {
                self.last_status = status.clone();
                status
            }
            Err(_) => b"unavailable".to_vec(),
        }
    }

    fn snapshot(&self) -> Vec<u8> {
        self.last_status.clone()
    }

    fn clone_box(&self) -> Box<dyn Behavior> {
        Box::new(self.clone())
    }
}

pub fn web_spec() -> BehaviorSpec {
    BehaviorSpec {
        name: "web",
        inputs: &["status"],
        outputs: &[],
        requests: &["gw"],
        handlers: &["user_request"],
        entries: &[],
        default_init: &[],
        factory: |_| Ok(Box::new(Web::default())),
    }
}

/// Home logic: thermostat thresholds, light control, status reporting.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Gateway {
    low: u16,
    high: u16,
    temperature: Option<u16>,
    heating: bool,
    heat_confirmed: bool,
    light: bool,
}

/// Heating below 18.0 degrees, off above 22.0 (tenths of a degree).
pub const GATEWAY_DEFAULT_INIT: &[u8] = &[0x00, 0xB4, 0x00, 0xDC];

impl Gateway {
    pub fn from_init(init: &[u8]) -> std::result::Result<Self, String> {
        match init {
            [a, b, c, d] => Ok(Gateway {
                low: u16::from_be_bytes([*a, *b]),
                high: u16::from_be_bytes([*c, *d]),
                temperature: None,
                heating: false,
                heat_confirmed: false,
                light: false,
            }),
            _ => Err("expected LOW(2) and HIGH(2)".into()),
        }
    }

    fn status(&self) -> Vec<u8> {
        let temp = match self.temperature {
            Some(t) => format!("{}.{}", t / 10, t % 10),
            None => "null".to_string(),
        };
        format!(
            "{{\"temperature\":{},\"heating\":{},\"heating_on\":{},\"lights\":{},\"lo\":{},\"hi\":{}}}",
            temp, self.heating, self.heat_confirmed, self.light, self.low, self.high
        )
        .into_bytes()
    }

    fn restore(&mut self, state: &[u8]) {
        if let [t_flag, t_hi, t_lo, heating, confirmed, light] = state {
            self.temperature = (*t_flag == 1).then(|| u16::from_be_bytes([*t_hi, *t_lo]));
            self.heating = *heating == 1;
            self.heat_confirmed = *confirmed == 1;
            self.light = *light == 1;
        }
    }
}

impl Behavior for Gateway {
    fn on_input(&mut self, label: &str, payload: &[u8], ctx: &mut dyn Context) {
        match label {
            "temp" => {
                let Some(t) = be_u16(payload) else { return };
                self.temperature = Some(t);
                if t < self.low && !self.heating {
                    self.heating = true;
                    ctx.output("heat", &[1]);
                } else if t > self.high && self.heating {
                    self.heating = false;
                    ctx.output("heat", &[0]);
                }
                ctx.output("status", &self.status());
            }
            "heat_state" => {
                if let Some(v) = payload.first() {
                    self.heat_confirmed = *v != 0;
                    ctx.output("status", &self.status());
                }
            }
            "light_state" => {
                if let Some(v) = payload.first() {
                    self.light = *v != 0;
                    ctx.output("status", &self.status());
                }
            }
            "restore" => self.restore(payload),
            _ => {}
        }
    }

    fn on_request(&mut self, label: &str, payload: &[u8], ctx: &mut dyn Context) -> Vec<u8> {
        if label != "gw_request" {
            return Vec::new();
        }
        match payload {
            [CMD_LIGHT, value] => {
                if let Ok(ack) = ctx.request("switch", &[CMD_LIGHT, *value]) {
                    if let [CMD_LIGHT, v] = ack.as_slice() {
                        self.light = *v != 0;
                    }
                }
            }
            [CMD_HEAT, value] => {
                self.heating = *value != 0;
                ctx.output("heat", &[*value]);
            }
            _ => {}
        }
        self.status()
    }

    fn on_entry(&mut self, name: &str, _args: &[u8], ctx: &mut dyn Context) -> Result<Vec<u8>> {
        match name {
            "save" => {
                ctx.output("transfer", &self.snapshot());
                Ok(Vec::new())
            }
            _ => Err(crate::error::Error::new(crate::error::ErrorKind::UnknownEntry, name.to_string())),
        }
    }

    fn snapshot(&self) -> Vec<u8> {
        let t = self.temperature.unwrap_or(0);
        vec![
            self.temperature.is_some() as u8,
            (t >> 8) as u8,
            t as u8,
            self.heating as u8,
            self.heat_confirmed as u8,
            self.light as u8,
        ]
    }

    fn clone_box(&self) -> Box<dyn Behavior> {
        Box::new(self.clone())
    }
}

pub fn gateway_spec() -> BehaviorSpec {
    BehaviorSpec {
        name: "gateway",
        inputs: &["temp", "heat_state", "light_state", "restore"],
        outputs: &["heat", "status", "transfer"],
        requests: &["switch"],
        handlers: &["gw_request"],
        entries: &["save"],
        default_init: GATEWAY_DEFAULT_INIT,
        factory: |init| Ok(Box::new(Gateway::from_init(init)?)),
    }
}

#[derive(Clone, Debug, Default)]
pub struct TempSensor {
    last: Option<u16>,
}

impl Behavior for TempSensor {
    fn on_input(&mut self, label: &str, payload: &[u8], ctx: &mut dyn Context) {
        if label == "reading" {
            if let Some(v) = be_u16(payload) {
                self.last = Some(v);
                ctx.output("temp", &v.to_be_bytes());
            }
        }
    }

    fn snapshot(&self) -> Vec<u8> {
        self.last.map(|v| v.to_be_bytes().to_vec()).unwrap_or_default()
    }

    fn clone_box(&self) -> Box<dyn Behavior> {
        Box::new(self.clone())
    }
}

pub fn temp_sensor_spec() -> BehaviorSpec {
    BehaviorSpec {
        name: "temp_sensor",
        inputs: &["reading"],
        outputs: &["temp"],
        requests: &[],
        handlers: &[],
        entries: &[],
        default_init: &[],
        factory: |_| Ok(Box::new(TempSensor::default())),
    }
}

#[derive(Clone, Debug, Default)]
pub struct Thermostat {
    on: bool,
}

impl Behavior for Thermostat {
    fn on_input(&mut self, label: &str, payload: &[u8], ctx: &mut dyn Context) {
        if label == "heat" {
            if let Some(v) = payload.first() {
                self.on = *v != 0;
                ctx.output("led", &[self.on as u8]);
                ctx.output("state", &[self.on as u8]);
            }
        }
    }

    fn snapshot(&self) -> Vec<u8> {
        vec![self.on as u8]
    }

    fn clone_box(&self) -> Box<dyn Behavior> {
        Box::new(self.clone())
    }
}

pub fn thermostat_spec() -> BehaviorSpec {
    BehaviorSpec {
        name: "thermostat",
        inputs: &["heat"],
        outputs: &["led", "state"],
        requests: &[],
        handlers: &[],
        entries: &[],
        default_init: &[],
        factory: |_| Ok(Box::new(Thermostat::default())),
    }
}

#[derive(Clone, Debug, Default)]
pub struct LightSwitch {
    on: bool,
}

impl LightSwitch {
    fn set(&mut self, value: u8, ctx: &mut dyn Context) {
        self.on = value != 0;
        ctx.output("led", &[self.on as u8]);
        ctx.output("state", &[self.on as u8]);
    }
}

impl Behavior for LightSwitch {
    fn on_input(&mut self, label: &str, payload: &[u8], ctx: &mut dyn Context) {
        if label == "light" {
            if let Some(v) = payload.first() {
                self.set(*v, ctx);
            }
        }
    }

    fn on_request(&mut self, label: &str, payload: &[u8], ctx: &mut dyn Context) -> Vec<u8> {
        match (label, payload) {
            ("switch", [CMD_LIGHT, v]) => {
                self.set(*v, ctx);
                vec![CMD_LIGHT, self.on as u8]
            }
            _ => Vec::new(),
        }
    }

    fn snapshot(&self) -> Vec<u8> {
        vec![self.on as u8]
    }

    fn clone_box(&self) -> Box<dyn Behavior> {
        Box::new(self.clone())
    }
}

pub fn light_switch_spec() -> BehaviorSpec {
    BehaviorSpec {
        name: "light_switch",
        inputs: &["light"],
        outputs: &["led", "state"],
        requests: &[],
        handlers: &["switch"],
        entries: &[],
        default_init: &[],
        factory: |_| Ok(Box::new(LightSwitch::default())),
    }
}

// ---------------------------------------------------------------------------
// Test helpers
// ---------------------------------------------------------------------------

/// Echoes requests and forwards inputs unchanged.
#[derive(Clone, Debug, Default)]
pub struct Echo {
    seen: u32,
}

impl Behavior for Echo {
    fn on_input(&mut self, label: &str, payload: &[u8], ctx: &mut dyn Context) {
        if label == "in" {
            self.seen += 1;
            ctx.output("out", payload);
        }
    }

    fn on_request(&mut self, _label: &str, payload: &[u8], _ctx: &mut dyn Context) -> Vec<u8> {
        self.seen += 1;
        payload.to_vec()
    }

    fn snapshot(&self) -> Vec<u8> {
        self.seen.to_be_bytes().to_vec()
    }

    fn clone_box(&self) -> Box<dyn Behavior> {
        Box::new(self.clone())
    }
}

pub fn echo_spec() -> BehaviorSpec {
    BehaviorSpec {
        name: "echo",
        inputs: &["in"],
        outputs: &["out"],
        requests: &[],
        handlers: &["echo"],
        entries: &[],
        default_init: &[],
        factory: |_| Ok(Box::new(Echo::default())),
    }
}

/// Counts inputs and reports the running total; the `read` entry returns it.
#[derive(Clone, Debug, Default)]
pub struct Counter {
    count: u32,
}

impl Behavior for Counter {
    fn on_input(&mut self, label: &str, _payload: &[u8], ctx: &mut dyn Context) {
        if label == "inc" {
            self.count += 1;
            ctx.output("count", &self.count.to_be_bytes());
        }
    }

    fn on_entry(&mut self, name: &str, _args: &[u8], _ctx: &mut dyn Context) -> Result<Vec<u8>> {
        match name {
            "read" => Ok(self.count.to_be_bytes().to_vec()),
            _ => Err(crate::error::Error::new(crate::error::ErrorKind::UnknownEntry, name.to_string())),
        }
    }

    fn snapshot(&self) -> Vec<u8> {
        self.count.to_be_bytes().to_vec()
    }

    fn clone_box(&self) -> Box<dyn Behavior> {
        Box::new(self.clone())
    }
}

pub fn counter_spec() -> BehaviorSpec {
    BehaviorSpec {
        name: "counter",
        inputs: &["inc"],
        outputs: &["count"],
        requests: &[],
        handlers: &[],
        entries: &["read"],
        default_init: &[],
        factory: |_| Ok(Box::new(Counter::default())),
    }
}

/// Turns each input into a request and outputs the reply.
#[derive(Clone, Debug, Default)]
pub struct Relay;

impl Behavior for Relay {
    fn on_input(&mut self, label: &str, payload: &[u8], ctx: &mut dyn Context) {
        if label == "in" {
            if let Ok(reply) = ctx.request("ask", payload) {
                ctx.output("out", &reply);
            }
        }
    }

    fn snapshot(&self) -> Vec<u8> {
        Vec::new()
    }

    fn clone_box(&self) -> Box<dyn Behavior> {
        Box::new(Relay)
    }
}

pub fn relay_spec() -> BehaviorSpec {
    BehaviorSpec {
        name: "relay",
        inputs: &["in"],
        outputs: &["out"],
        requests: &["ask"],
        handlers: &[],
        entries: &[],
        default_init: &[],
        factory: |_| Ok(Box::new(Relay)),
    }
}

/// No endpoints at all.
#[derive(Clone, Debug, Default)]
pub struct Idle;

impl Behavior for Idle {
    fn on_input(&mut self, _label: &str, _payload: &[u8], _ctx: &mut dyn Context) {}

    fn snapshot(&self) -> Vec<u8> {
        Vec::new()
    }

    fn clone_box(&self) -> Box<dyn Behavior> {
        Box::new(Idle)
    }
}

pub fn idle_spec() -> BehaviorSpec {
    BehaviorSpec {
        name: "idle",
        inputs: &[],
        outputs: &[],
        requests: &[],
        handlers: &[],
        entries: &[],
        default_init: &[],
        factory: |_| Ok(Box::new(Idle)),
    }
}

/// Enclave shell of the attestation manager; its logic runs host-side
/// once the enclave has been attested.
pub fn attman_spec() -> BehaviorSpec {
    BehaviorSpec {
        name: "attman",
        ..idle_spec()
    }
}
