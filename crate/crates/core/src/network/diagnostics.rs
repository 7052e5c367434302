//! Event statistics of a run and its diffusion-scaled processes.

use super::policy::PolicyContext;
use super::rates::NetworkRates;
use super::sim::HistoryPoint;

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct DiagnosticReport {
    /// `sup Q3_hat` over epochs in `A`.
    pub sup_q3_in_a: f64,
    /// `sup Q1_hat` over epochs outside `A`.
    pub sup_q1_off_a: f64,
    /// Scaled server-2 idle time accrued while `Q2 >= Dn`.
    pub idle_integral: f64,
    /// `min (W1_hat - psi(W2_hat))` over epochs.
    pub min_g_gap: f64,
}

/// Running accumulator shared by the simulator and [`diagnostics`].
pub(crate) struct Diagnostics<'a> {
    ctx: &'a PolicyContext<'a>,
    report: DiagnosticReport,
    seen: bool,
}

impl<'a> Diagnostics<'a> {
    pub(crate) fn new(ctx: &'a PolicyContext<'a>) -> Self {
        Self {
            ctx,
            report: DiagnosticReport::default(),
            seen: false,
        }
    }

    pub(crate) fn observe_state(&mut self, q: [u64; 3]) {
        let s = self.ctx.sqrt_n;
        let r = &mut self.report;
        if self.ctx.in_a(q) {
            r.sup_q3_in_a = r.sup_q3_in_a.max(q[2] as f64 / s);
        } else {
            r.sup_q1_off_a = r.sup_q1_off_a.max(q[0] as f64 / s);
        }
        let w = self.ctx.workload(q);
        let gap = w[0] / s - self.ctx.fb.eval_unchecked(w[1] / s);
        r.min_g_gap = if self.seen { r.min_g_gap.min(gap) } else { gap };
        self.seen = true;
    }

    /// Server 2 idled for `dt` unscaled time units at state `q`.
    pub(crate) fn observe_idle(&mut self, q: [u64; 3], dt: f64) {
        if q[1] as f64 >= self.ctx.levels.dn {
            self.report.idle_integral += dt / self.ctx.sqrt_n;
        }
    }

    pub(crate) fn report(&self) -> DiagnosticReport {
        self.report
    }
}

/// Recomputes the run statistics from a recorded history.
pub fn diagnostics(history: &[HistoryPoint], ctx: &PolicyContext) -> DiagnosticReport {
    let mut d = Diagnostics::new(ctx);
    for (k, h) in history.iter().enumerate() {
        d.observe_state(h.queues);
        if let Some(next) = history.get(k + 1) {
            let idle = next.idleness[1] - h.idleness[1];
            if idle > 0.0 {
                d.observe_idle(h.queues, idle);
            }
        }
    }
    d.report()
}

/// Diffusion-scaled queue, workload and idleness on the event grid.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ScaledPaths {
    pub times: Vec<f64>,
    pub queues: Vec<[f64; 3]>,
    pub workload: Vec<[f64; 2]>,
    pub idleness: Vec<[f64; 2]>,
}

pub fn scaled_processes(history: &[HistoryPoint], rates: &NetworkRates, n: u64) -> ScaledPaths {
    let nf = n as f64;
    let s = nf.sqrt();
    let mu = rates.mu;
    let mut out = ScaledPaths::default();
    for h in history {
        let q = h.queues.map(|x| x as f64 / s);
        out.times.push(h.time / nf);
        out.queues.push(q);
        out.workload
            .push([q[0] / mu[0] + q[1] / mu[1], (q[1] + q[2]) / mu[2]]);
        out.idleness.push(h.idleness.map(|x| x / s));
    }
    out
}
