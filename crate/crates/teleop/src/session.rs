//! The control-loop side of a live session.

use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use arc_swap::ArcSwapOption;
use tokio::sync::{broadcast, Notify};
use vptc::sim::Simulation;

use crate::error::TeleopError;
use crate::mailbox::Mailbox;
use crate::wire::{ServerFrame, StateSnapshot};

/// Everything the control loop and the network side exchange.
pub struct Shared {
    pub mailbox: Mailbox,
    pub snapshot: ArcSwapOption<StateSnapshot>,
    pub published: Notify,
    pub errors: broadcast::Sender<ServerFrame>,
    pub stop: AtomicBool,
}

impl Shared {
    fn new() -> Self {
        Self {
            mailbox: Mailbox::new(),
            snapshot: ArcSwapOption::empty(),
            published: Notify::new(),
            errors: broadcast::channel(64).0,
            stop: AtomicBool::new(false),
        }
    }

    pub fn request_stop(&self) {
        self.stop.store(true, Ordering::Release);
    }

    pub fn stopping(&self) -> bool {
        self.stop.load(Ordering::Acquire)
    }
}

/// Wall-clock spacing of control ticks in real-time mode.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Cadence {
    pub ticks: u64,
    pub mean_period: f64,
    pub max_period: f64,
}

pub struct Session {
    sim: Simulation,
    shared: Arc<Shared>,
    decimation: u32,
    last_seq: Option<u64>,
    cadence: Cadence,
}

impl Session {
    pub fn new(sim: Simulation, decimation: u32) -> Self {
        Self {
            sim,
            shared: Arc::new(Shared::new()),
            decimation: decimation.max(1),
            last_seq: None,
            cadence: Cadence::default(),
        }
    }

    pub fn shared(&self) -> Arc<Shared> {
        Arc::clone(&self.shared)
    }

    pub fn simulation(&self) -> &Simulation {
        &self.sim
    }

    pub fn into_simulation(self) -> Simulation {
        self.sim
    }

    pub fn decimation(&self) -> u32 {
        self.decimation
    }

    pub fn cadence(&self) -> Cadence {
        self.cadence
    }

    /// Applies pending commands, advances one control step and publishes a
    /// snapshot every `decimation` steps.
    pub fn step(&mut self) -> Result<(), TeleopError> {
        for posted in self.shared.mailbox.drain() {
            match self.sim.apply_command(&posted.command) {
                Ok(()) => self.last_seq = Some(posted.seq),
                Err(e) => {
                    let _ = self.shared.errors.send(ServerFrame::Error {
                        seq: Some(posted.seq),
                        message: e.to_string(),
                    });
                }
            }
        }
        let k = self.sim.step_index() as u64;
        self.sim.step()?;
        if k.is_multiple_of(u64::from(self.decimation)) {
            let active = self
                .sim
                .last_control()
                .map(|c| c.output.active.as_slice())
                .unwrap_or(&[]);
            let record = self
                .sim
                .log()
                .records
                .last()
                .expect("a step was just recorded");
            let snap = StateSnapshot::from_record(k, record, active, self.last_seq);
            self.shared.snapshot.store(Some(Arc::new(snap)));
            self.shared.published.notify_waiters();
        }
        Ok(())
    }

    /// Runs `steps` control steps as fast as possible.
    pub fn run_headless(&mut self, steps: usize) -> Result<(), TeleopError> {
        for _ in 0..steps {
            if self.sim.is_done() {
                break;
            }
            self.step()?;
        }
        Ok(())
    }

    /// Paces steps to `control_dt` of wall-clock time against absolute
    /// deadlines until the stop flag is raised or the scenario ends.
    pub fn run_realtime(&mut self) -> Result<(), TeleopError> {
        let dt = Duration::from_secs_f64(self.sim.scenario.control_dt);
        let start = Instant::now();
        let mut previous: Option<Instant> = None;
        let mut n: u32 = 0;
        while !self.shared.stopping() && !self.sim.is_done() {
            let now = Instant::now();
            if let Some(p) = previous {
                let period = (now - p).as_secs_f64();
                let c = &mut self.cadence;
                c.ticks += 1;
                c.mean_period += (period - c.mean_period) / c.ticks as f64;
                c.max_period = c.max_period.max(period);
            }
            previous = Some(now);
            if let Err(e) = self.step() {
                let _ = self.shared.errors.send(ServerFrame::Error {
                    seq: None,
                    message: format!("simulation stopped: {e}"),
                });
                return Err(e);
            }
            n = n.saturating_add(1);
            let deadline = start + dt * n;
            let now = Instant::now();
            if deadline > now {
                std::thread::sleep(deadline - now);
            }
        }
        Ok(())
    }
}
