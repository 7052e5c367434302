//! Event loop of the `n`-th network with preempt-resume at server 1.

use std::io::{self, Write};

use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use super::diagnostics::{DiagnosticReport, Diagnostics};
use super::policy::{
    decide_server1, Action, Branch, PolicyContext, PolicyError, PolicyThresholds, PolicyVariant,
};
use super::rates::NetworkRates;
use crate::distributions::{PrimitiveDistributions, Stream};
use crate::free_boundary::FreeBoundary;
use crate::model::NetworkParams;
use crate::rbm::stream_rng;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error("invalid per-n rates {0:?}")]
    BadRates(NetworkRates),
    #[error("horizon must be positive and finite, got {0}")]
    BadHorizon(f64),
}

/// Scaled horizon `T` with `exp(-gamma T) = 1e-4`.
pub fn default_horizon(gamma: f64) -> f64 {
    1e4_f64.ln() / gamma
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub n: u64,
    /// Horizon in scaled time.
    pub horizon: f64,
    /// Overrides the default per-n rate schedule.
    pub rates: Option<NetworkRates>,
    pub variant: PolicyVariant,
    pub record_log: bool,
    pub record_history: bool,
}

impl SimConfig {
    pub fn new(n: u64, horizon: f64) -> Self {
        Self {
            n,
            horizon,
            rates: None,
            variant: PolicyVariant::Paper,
            record_log: false,
            record_history: false,
        }
    }

    pub fn rates_for(&self, p: &NetworkParams) -> NetworkRates {
        self.rates.unwrap_or_else(|| NetworkRates::for_n(p, self.n))
    }
}

/// Full state of one replication, in unscaled time.
#[derive(Debug, Clone, PartialEq)]
pub struct SimState {
    pub clock: f64,
    pub queues: [u64; 3],
    /// Absolute times of the next class-1 and class-2 arrivals.
    pub next_arrival: [f64; 2],
    /// Class and completion time of the job in service at server 1.
    pub server1: Option<(usize, f64)>,
    /// Remaining work of a preempted head-of-line job, per server-1 class.
    pub suspended: [Option<f64>; 2],
    /// Completion time of the job in service at server 2.
    pub server2: Option<f64>,
    /// Cumulative busy time on classes 1, 2, 3.
    pub allocations: [f64; 3],
    pub idleness: [f64; 2],
    pub arrivals: [u64; 2],
    pub services: [u64; 3],
    /// Discounted cost accumulated so far, in scaled units.
    pub cost: f64,
    pub action: Action,
    pub branch: Branch,
}

impl SimState {
    fn empty() -> Self {
        Self {
            clock: 0.0,
            queues: [0; 3],
            next_arrival: [f64::INFINITY; 2],
            server1: None,
            suspended: [None; 2],
            server2: None,
            allocations: [0.0; 3],
            idleness: [0.0; 2],
            arrivals: [0; 2],
            services: [0; 3],
            cost: 0.0,
            action: Action::IdleServer1,
            branch: Branch::AEmptyIdle,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EventKind {
    Start,
    Arrival1,
    Arrival2,
    Complete1,
    Complete2,
    Complete3,
}

impl EventKind {
    pub fn as_str(self) -> &'static str {
        match self {
            EventKind::Start => "start",
            EventKind::Arrival1 => "arrival1",
            EventKind::Arrival2 => "arrival2",
            EventKind::Complete1 => "complete1",
            EventKind::Complete2 => "complete2",
            EventKind::Complete3 => "complete3",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EventRecord {
    pub time: f64,
    pub event: EventKind,
    pub queues: [u64; 3],
    pub action: Action,
    pub branch: Branch,
}

pub fn write_event_log<W: Write>(log: &[EventRecord], mut w: W) -> io::Result<()> {
    writeln!(w, "time,event,q1,q2,q3,action,branch")?;
    for r in log {
        writeln!(
            w,
            "{},{},{},{},{},{},{}",
            r.time,
            r.event.as_str(),
            r.queues[0],
            r.queues[1],
            r.queues[2],
            r.action.as_str(),
            r.branch.as_str()
        )?;
    }
    Ok(())
}

/// Post-event snapshot used by the history-based diagnostics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HistoryPoint {
    pub time: f64,
    pub queues: [u64; 3],
    pub idleness: [f64; 2],
    pub allocations: [f64; 3],
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutput {
    /// Discounted scaled cost over the horizon.
    pub jhat: f64,
    pub diagnostics: DiagnosticReport,
    pub state: SimState,
    pub events: u64,
    pub log: Vec<EventRecord>,
    pub history: Vec<HistoryPoint>,
}

struct Clocks {
    rngs: [ChaCha8Rng; 5],
    prim: PrimitiveDistributions,
    rates: NetworkRates,
}

impl Clocks {
    fn draw(&mut self, s: Stream) -> f64 {
        let k = s as usize;
        let rate = if k < 2 {
            self.rates.lambda[k]
        } else {
            self.rates.mu[k - 2]
        };
        if rate == 0.0 {
            return f64::INFINITY;
        }
        self.prim.get(s).sample(&mut self.rngs[k]) / rate
    }
}

const SERVICE1: [Stream; 2] = [Stream::Service1, Stream::Service2];

/// One replication. Primitive stream `k` of replication `rep` uses RNG
/// stream `8 rep + k`, so policies compared at equal seeds see the same
/// primitives.
pub fn run_network(
    p: &NetworkParams,
    th: &PolicyThresholds,
    fb: &FreeBoundary,
    prim: &PrimitiveDistributions,
    cfg: &SimConfig,
    seed: u64,
    rep: u64,
) -> Result<RunOutput, SimError> {
    let rates = cfg.rates_for(p);
    if !rates.is_valid() {
        return Err(SimError::BadRates(rates));
    }
    if !(cfg.horizon > 0.0 && cfg.horizon.is_finite()) {
        return Err(SimError::BadHorizon(cfg.horizon));
    }
    if !th.admissible(cfg.n, &rates) {
        let min = th.min_n(cfg.n.max(2) * 64, |_| rates).unwrap_or(u64::MAX);
        return Err(PolicyError::InvalidN { n: cfg.n, min }.into());
    }
    let ctx = PolicyContext::new(th, cfg.n, rates, fb, cfg.variant);
    let nf = cfg.n as f64;
    let sqrt_n = ctx.sqrt_n;
    let end = cfg.horizon * nf;
    let cost = p.cost;
    let gamma = p.gamma;

    let mut clocks = Clocks {
        rngs: std::array::from_fn(|k| stream_rng(seed, rep * 8 + k as u64)),
        prim: *prim,
        rates,
    };
    let mut st = SimState::empty();
    st.next_arrival = [clocks.draw(Stream::Arrival1), clocks.draw(Stream::Arrival2)];
    let mut diag = Diagnostics::new(&ctx);
    let mut log = Vec::new();
    let mut history = Vec::new();
    let mut events = 0u64;
    let mut event = EventKind::Start;

    loop {
        // decide at post-event state
        let (action, branch) = decide_server1(st.queues, &ctx);
        let serving = st.server1.map(|(k, _)| k);
        if serving != action.class() {
            if let Some((k, done)) = st.server1.take() {
                st.suspended[k] = Some(done - st.clock);
            }
            if let Some(k) = action.class() {
                let work = st.suspended[k]
                    .take()
                    .unwrap_or_else(|| clocks.draw(SERVICE1[k]));
                st.server1 = Some((k, st.clock + work));
            }
        }
        if st.server2.is_none() && st.queues[2] > 0 {
            st.server2 = Some(st.clock + clocks.draw(Stream::Service3));
        }
        st.action = action;
        st.branch = branch;
        diag.observe_state(st.queues);
        if cfg.record_log {
            log.push(EventRecord {
                time: st.clock,
                event,
                queues: st.queues,
                action,
                branch,
            });
        }
        if cfg.record_history {
            history.push(HistoryPoint {
                time: st.clock,
                queues: st.queues,
                idleness: st.idleness,
                allocations: st.allocations,
            });
        }

        let candidates = [
            (st.next_arrival[0], EventKind::Arrival1),
            (st.next_arrival[1], EventKind::Arrival2),
            (
                st.server1.map_or(f64::INFINITY, |s| s.1),
                if serving_class(&st) == Some(0) {
                    EventKind::Complete1
                } else {
                    EventKind::Complete2
                },
            ),
            (st.server2.unwrap_or(f64::INFINITY), EventKind::Complete3),
        ];
        let (mut next, mut kind) = candidates[0];
        for &(t, k) in &candidates[1..] {
            if t < next {
                next = t;
                kind = k;
            }
        }
        let stop = next >= end;
        let t1 = if stop { end } else { next };

        let dt = t1 - st.clock;
        if dt > 0.0 {
            let weight = (-gamma * st.clock / nf).exp() * -(-gamma * dt / nf).exp_m1() / gamma;
            let cq: f64 = (0..3).map(|i| cost[i] * st.queues[i] as f64).sum();
            st.cost += cq / sqrt_n * weight;
            match st.server1 {
                Some((k, _)) => st.allocations[k] += dt,
                None => st.idleness[0] += dt,
            }
            if st.server2.is_some() {
                st.allocations[2] += dt;
            } else {
                st.idleness[1] += dt;
                diag.observe_idle(st.queues, dt);
            }
        }
        st.clock = t1;
        if stop {
            break;
        }

        match kind {
            EventKind::Arrival1 | EventKind::Arrival2 => {
                let k = if kind == EventKind::Arrival1 { 0 } else { 1 };
                st.queues[k] += 1;
                st.arrivals[k] += 1;
                st.next_arrival[k] = st.clock
                    + clocks.draw(if k == 0 {
                        Stream::Arrival1
                    } else {
                        Stream::Arrival2
                    });
            }
            EventKind::Complete1 | EventKind::Complete2 => {
                let (k, _) = st.server1.take().expect("server 1 busy");
                st.queues[k] -= 1;
                st.services[k] += 1;
                if k == 1 {
                    st.queues[2] += 1;
                }
            }
            EventKind::Complete3 => {
                st.server2 = None;
                st.queues[2] -= 1;
                st.services[2] += 1;
            }
            EventKind::Start => unreachable!(),
        }
        events += 1;
        event = kind;
    }

    Ok(RunOutput {
        jhat: st.cost,
        diagnostics: diag.report(),
        state: st,
        events,
        log,
        history,
    })
}

fn serving_class(st: &SimState) -> Option<usize> {
    st.server1.map(|(k, _)| k)
}

/// Per-replication summary.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Replication {
    pub rep: u64,
    pub jhat: f64,
    pub diagnostics: DiagnosticReport,
}

/// Independent replications `0..reps`, run in parallel and returned in
/// replication order.
pub fn run_replications(
    p: &NetworkParams,
    th: &PolicyThresholds,
    fb: &FreeBoundary,
    prim: &PrimitiveDistributions,
    cfg: &SimConfig,
    seed: u64,
    reps: u64,
) -> Result<Vec<Replication>, SimError> {
    let cfg = SimConfig {
        record_log: false,
        record_history: false,
        ..cfg.clone()
    };
    (0..reps)
        .into_par_iter()
        .map(|rep| {
            run_network(p, th, fb, prim, &cfg, seed, rep).map(|o| Replication {
                rep,
                jhat: o.jhat,
                diagnostics: o.diagnostics,
            })
        })
        .collect()
}

pub fn write_replications<W: Write>(n: u64, reps: &[Replication], mut w: W) -> io::Result<()> {
    writeln!(w, "n,rep,jhat,sup_diag1,sup_diag2,idle_integral,min_G_gap")?;
    for r in reps {
        let d = r.diagnostics;
        writeln!(
            w,
            "{n},{},{},{},{},{},{}",
            r.rep, r.jhat, d.sup_q3_in_a, d.sup_q1_off_a, d.idle_integral, d.min_g_gap
        )?;
    }
    Ok(())
}
