//! Device and behavioural heterogeneity.
//!
//! Clients get a [`DeviceProfile`] (compute and link speeds) and an
//! [`AvailabilityTrace`] (a two-state on/off Markov chain over fixed ticks).
//! The four [`ScenarioKind`]s toggle the two sources independently:
//!
//! | kind | devices | availability |
//! |------|---------|--------------|
//! | U    | one class | always on |
//! | BH   | one class | Markov trace |
//! | DH   | mixed     | always on |
//! | H    | mixed     | Markov trace |
//!
//! All time here is virtual.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DeviceClass {
    High,
    Mid,
    Low,
}

impl DeviceClass {
    pub const ALL: [DeviceClass; 3] = [DeviceClass::High, DeviceClass::Mid, DeviceClass::Low];

    /// Reference hardware for each class: ~20x compute spread between high and low.
    pub fn profile(self) -> DeviceProfile {
        const MB: f64 = 1_000_000.0;
        let (compute_rate, bw) = match self {
            DeviceClass::High => (200.0, 10.0 * MB),
            DeviceClass::Mid => (50.0, 2.0 * MB),
            DeviceClass::Low => (10.0, 0.5 * MB),
        };
        DeviceProfile { compute_rate, uplink: bw, downlink: bw, class_label: self }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DeviceProfile {
    /// samples per second
    pub compute_rate: f64,
    /// bytes per second
    pub uplink: f64,
    pub downlink: f64,
    pub class_label: DeviceClass,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LinkState {
    On,
    Off,
}

/// Two-state Markov on/off chain, one transition per tick.
///
/// The state of tick 0 is `initial_state`; tick `i > 0` applies one
/// transition to tick `i - 1` using the `i`-th uniform draw of a ChaCha
/// stream seeded by `seed`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AvailabilityTrace {
    pub p_on_to_off: f64,
    pub p_off_to_on: f64,
    pub tick_seconds: f64,
    pub initial_state: LinkState,
    pub seed: u64,
}

impl AvailabilityTrace {
    pub fn always_on() -> Self {
        Self { p_on_to_off: 0.0, p_off_to_on: 1.0, tick_seconds: 60.0, initial_state: LinkState::On, seed: 0 }
    }

    pub fn validate(&self) -> Result<()> {
        let p_ok = |p: f64| (0.0..=1.0).contains(&p);
        if !p_ok(self.p_on_to_off) || !p_ok(self.p_off_to_on) {
            return Err(Error::Config("transition probabilities must lie in [0, 1]".into()));
        }
        if !(self.tick_seconds > 0.0 && self.tick_seconds.is_finite()) {
            return Err(Error::Config("tick_seconds must be positive".into()));
        }
        Ok(())
    }

    /// Chain never leaves its initial state.
    fn absorbing(&self) -> bool {
        match self.initial_state {
            LinkState::On => self.p_on_to_off == 0.0,
            LinkState::Off => self.p_off_to_on == 0.0,
        }
    }

    pub fn tick_of(&self, t: f64) -> u64 {
        (t.max(0.0) / self.tick_seconds).floor() as u64
    }

    /// States for ticks `0..=last`.
    pub fn states(&self, last: u64) -> Vec<LinkState> {
        let mut out = Vec::with_capacity(last as usize + 1);
        let mut cursor = TraceCursor::new(self);
        for _ in 0..=last {
            out.push(cursor.state);
            cursor.step();
        }
        out
    }
}

/// Incremental replay of a trace, tick by tick.
pub struct TraceCursor<'a> {
    trace: &'a AvailabilityTrace,
    rng: ChaCha8Rng,
    tick: u64,
    state: LinkState,
}

impl<'a> TraceCursor<'a> {
    pub fn new(trace: &'a AvailabilityTrace) -> Self {
        Self { trace, rng: ChaCha8Rng::seed_from_u64(trace.seed), tick: 0, state: trace.initial_state }
    }

    pub fn tick(&self) -> u64 {
        self.tick
    }

    pub fn state(&self) -> LinkState {
        self.state
    }

    pub fn step(&mut self) {
        let u: f64 = self.rng.random();
        self.state = match self.state {
            LinkState::On if u < self.trace.p_on_to_off => LinkState::Off,
            LinkState::Off if u < self.trace.p_off_to_on => LinkState::On,
            s => s,
        };
        self.tick += 1;
    }

    /// True iff every tick in `first..=last` is on. The cursor must not be past `first`.
    pub fn all_on(&mut self, first: u64, last: u64) -> bool {
        debug_assert!(self.tick <= first);
        while self.tick < first {
            self.step();
        }
        loop {
            if self.state == LinkState::Off {
                return false;
            }
            if self.tick == last {
                return true;
            }
            self.step();
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClientProfile {
    pub client_id: usize,
    pub device: DeviceProfile,
    pub trace: AvailabilityTrace,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ScenarioKind {
    U,
    BH,
    DH,
    H,
}

impl ScenarioKind {
    pub const ALL: [ScenarioKind; 4] = [ScenarioKind::U, ScenarioKind::BH, ScenarioKind::DH, ScenarioKind::H];

    pub fn mixed_devices(self) -> bool {
        matches!(self, ScenarioKind::DH | ScenarioKind::H)
    }

    pub fn dynamic_availability(self) -> bool {
        matches!(self, ScenarioKind::BH | ScenarioKind::H)
    }
}

impl fmt::Display for ScenarioKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ScenarioKind::U => "U",
            ScenarioKind::BH => "BH",
            ScenarioKind::DH => "DH",
            ScenarioKind::H => "H",
        })
    }
}

impl FromStr for ScenarioKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "U" => Ok(ScenarioKind::U),
            "BH" => Ok(ScenarioKind::BH),
            "DH" => Ok(ScenarioKind::DH),
            "H" => Ok(ScenarioKind::H),
            other => Err(Error::Config(format!("unknown scenario {other:?}, expected U, BH, DH or H"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeviceMix {
    pub high: f64,
    pub mid: f64,
    pub low: f64,
}

impl Default for DeviceMix {
    fn default() -> Self {
        Self { high: 1.0 / 3.0, mid: 1.0 / 3.0, low: 1.0 / 3.0 }
    }
}

impl DeviceMix {
    fn weights(&self) -> [(DeviceClass, f64); 3] {
        [(DeviceClass::High, self.high), (DeviceClass::Mid, self.mid), (DeviceClass::Low, self.low)]
    }

    pub fn validate(&self) -> Result<()> {
        let w = self.weights();
        if w.iter().any(|(_, p)| !(*p >= 0.0 && p.is_finite())) {
            return Err(Error::Config("device mix weights must be non-negative".into()));
        }
        let sum: f64 = w.iter().map(|(_, p)| p).sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!("device mix sums to {sum}, expected 1")));
        }
        Ok(())
    }

    fn draw(&self, rng: &mut impl Rng) -> DeviceClass {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for (class, p) in self.weights() {
            acc += p;
            if u < acc {
                return class;
            }
        }
        // rounding left u just above the final cumulative weight
        self.weights().iter().rev().find(|(_, p)| *p > 0.0).map_or(DeviceClass::Mid, |(c, _)| *c)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InitialState {
    On,
    Off,
    /// Drawn from the chain's stationary distribution.
    Stationary,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TraceParams {
    pub p_on_to_off: f64,
    pub p_off_to_on: f64,
    pub tick_seconds: f64,
    pub initial: InitialState,
}

impl Default for TraceParams {
    fn default() -> Self {
        Self { p_on_to_off: 0.02, p_off_to_on: 0.05, tick_seconds: 60.0, initial: InitialState::Stationary }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub kind: ScenarioKind,
    #[serde(default)]
    pub device_mix: DeviceMix,
    /// Device class used when the scenario has homogeneous hardware.
    #[serde(default = "default_uniform_class")]
    pub uniform_class: DeviceClass,
    #[serde(default)]
    pub trace_params: TraceParams,
}

fn default_uniform_class() -> DeviceClass {
    DeviceClass::Mid
}

impl Scenario {
    pub fn new(kind: ScenarioKind) -> Self {
        Self {
            kind,
            device_mix: DeviceMix::default(),
            uniform_class: default_uniform_class(),
            trace_params: TraceParams::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.kind.mixed_devices() {
            self.device_mix.validate()?;
        }
        if self.kind.dynamic_availability() {
            let t = &self.trace_params;
            AvailabilityTrace {
                p_on_to_off: t.p_on_to_off,
                p_off_to_on: t.p_off_to_on,
                tick_seconds: t.tick_seconds,
                initial_state: LinkState::On,
                seed: 0,
            }
            .validate()?;
            if t.initial == InitialState::Stationary && t.p_on_to_off + t.p_off_to_on == 0.0 {
                return Err(Error::Config("a frozen chain has no stationary distribution".into()));
            }
        }
        Ok(())
    }
}

/// Draws a profile for each of `num_clients` clients under `scenario`.
pub fn assign_profiles(num_clients: usize, scenario: &Scenario, seed: u64) -> Result<Vec<ClientProfile>> {
    if num_clients < 1 {
        return Err(Error::Config("num_clients must be at least 1".into()));
    }
    scenario.validate()?;
    let mut device_rng = seed::rng(seed, "devices");
    let t = &scenario.trace_params;
    let on_fraction = t.p_off_to_on / (t.p_on_to_off + t.p_off_to_on);
    (0..num_clients)
        .map(|client_id| {
            let class = if scenario.kind.mixed_devices() {
                scenario.device_mix.draw(&mut device_rng)
            } else {
                scenario.uniform_class
            };
            let trace = if scenario.kind.dynamic_availability() {
                let trace_seed = seed::derive(seed, &format!("trace/{client_id}"));
                let initial_state = match t.initial {
                    InitialState::On => LinkState::On,
                    InitialState::Off => LinkState::Off,
                    InitialState::Stationary => {
                        let u: f64 = seed::rng(trace_seed, "initial").random();
                        if u < on_fraction { LinkState::On } else { LinkState::Off }
                    }
                };
                AvailabilityTrace {
                    p_on_to_off: t.p_on_to_off,
                    p_off_to_on: t.p_off_to_on,
                    tick_seconds: t.tick_seconds,
                    initial_state,
                    seed: trace_seed,
                }
            } else {
                AvailabilityTrace::always_on()
            };
            Ok(ClientProfile { client_id, device: class.profile(), trace })
        })
        .collect()
}

/// True iff the client's trace is on for every tick overlapping `[t_start, t_end]`.
pub fn is_available(profile: &ClientProfile, t_start: f64, t_end: f64) -> bool {
    debug_assert!(t_start <= t_end);
    let trace = &profile.trace;
    if trace.absorbing() {
        return trace.initial_state == LinkState::On;
    }
    let first = trace.tick_of(t_start);
    let last = trace.tick_of(t_end.max(t_start));
    TraceCursor::new(trace).all_on(first, last)
}

/// Download, local training and upload time for one round of work, in seconds.
pub fn simulate_client_time(profile: &ClientProfile, num_samples: usize, epochs: usize, model_bytes: usize) -> f64 {
    let d = &profile.device;
    let bytes = model_bytes as f64;
    bytes / d.downlink + (epochs as f64) * (num_samples as f64) / d.compute_rate + bytes / d.uplink
}
