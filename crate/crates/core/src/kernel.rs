//! Deterministic discrete-event simulation kernel.
//!
//! The kernel owns the simulated clock, a future-event queue and a single
//! seeded random-number stream. Simulation actors are cooperative tasks: the
//! kernel polls each task, the task runs until it either finishes or blocks on
//! some condition of the surrounding world, and scheduled events are the only
//! mechanism that moves the clock forward. Events fire in `(fire_time,
//! insertion_seq)` order, so two events scheduled for the same instant are
//! delivered in the order they were scheduled.
//!
//! The kernel is generic over the world type `W` shared by all tasks, the
//! event payload type `P` and the error type `E`, which keeps it independent
//! of any particular simulation domain.

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::fmt;
use thiserror::Error;

/// Simulated time, stored as nanoseconds in double precision.
///
/// Construction rejects NaN and negative values, which makes the total order
/// used by the event queue well defined. Comparisons are exact: two times are
/// simultaneous only when their nanosecond values are bit-equal.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SimTime(f64);

impl SimTime {
    pub const ZERO: SimTime = SimTime(0.0);

    /// Build a time stamp from nanoseconds; rejects NaN, infinities and
    /// negative values.
    pub fn from_ns(ns: f64) -> Result<SimTime, TimeError> {
        if !ns.is_finite() || ns < 0.0 {
            return Err(TimeError(ns));
        }
        Ok(SimTime(ns))
    }

    /// The time stamp in nanoseconds.
    #[inline]
    pub fn ns(self) -> f64 {
        self.0
    }

    /// The time stamp converted to seconds.
    #[inline]
    pub fn seconds(self) -> f64 {
        self.0 * 1e-9
    }

    /// This time advanced by a non-negative duration in nanoseconds.
    #[inline]
    pub fn plus_ns(self, duration_ns: f64) -> SimTime {
        debug_assert!(duration_ns >= 0.0 && duration_ns.is_finite());
        SimTime(self.0 + duration_ns)
    }

    /// Elapsed nanoseconds since `earlier`.
    #[inline]
    pub fn since(self, earlier: SimTime) -> f64 {
        self.0 - earlier.0
    }
}

impl Eq for SimTime {}

impl PartialOrd for SimTime {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for SimTime {
    fn cmp(&self, other: &Self) -> Ordering {
        // Constructors reject NaN, so the partial order is total.
        self.0.partial_cmp(&other.0).expect("SimTime is never NaN")
    }
}

impl fmt::Display for SimTime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Error, Clone, Copy, PartialEq)]
#[error("invalid simulated time {0} ns: must be finite and non-negative")]
pub struct TimeError(pub f64);

/// Opaque identifier of a scheduled event, unique within one kernel instance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct EventId(pub u64);

#[derive(Debug, Error, Clone, Copy, PartialEq)]
#[error("invalid event delay {0} ns: must be finite and non-negative")]
pub struct ScheduleError(pub f64);

/// An event sitting in the future-event queue.
struct Scheduled<P> {
    fire: SimTime,
    seq: u64,
    id: EventId,
    payload: P,
}

impl<P> PartialEq for Scheduled<P> {
    fn eq(&self, other: &Self) -> bool {
        self.fire == other.fire && self.seq == other.seq
    }
}
impl<P> Eq for Scheduled<P> {}

impl<P> PartialOrd for Scheduled<P> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl<P> Ord for Scheduled<P> {
    fn cmp(&self, other: &Self) -> Ordering {
        // Reverse the natural order so the max-heap pops the earliest
        // (fire_time, seq) pair first.
        other
            .fire
            .cmp(&self.fire)
            .then_with(|| other.seq.cmp(&self.seq))
    }
}

/// Record of one delivered event, kept for replay/determinism checks.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DeliveredEvent {
    pub time: SimTime,
    pub seq: u64,
    pub id: EventId,
}

/// The scheduling surface visible to tasks and event handlers: clock, event
/// queue and the simulation-wide RNG stream.
pub struct Scheduler<P> {
    clock: SimTime,
    queue: BinaryHeap<Scheduled<P>>,
    next_seq: u64,
    next_event_id: u64,
    rng: ChaCha12Rng,
    delivered: Vec<DeliveredEvent>,
}

impl<P> Scheduler<P> {
    fn new(seed: u64) -> Self {
        Scheduler {
            clock: SimTime::ZERO,
            queue: BinaryHeap::new(),
            next_seq: 0,
            next_event_id: 0,
            rng: ChaCha12Rng::seed_from_u64(seed),
            delivered: Vec::new(),
        }
    }

    /// Current simulated time.
    #[inline]
    pub fn now(&self) -> SimTime {
        self.clock
    }

    /// Schedule `payload` to fire `delay_ns` nanoseconds from now.
    ///
    /// A zero delay is valid: the event fires at the current instant, after
    /// everything already being processed, because it receives a later
    /// insertion sequence number.
    pub fn schedule(&mut self, delay_ns: f64, payload: P) -> Result<EventId, ScheduleError> {
        if !delay_ns.is_finite() || delay_ns < 0.0 {
            return Err(ScheduleError(delay_ns));
        }
        let id = EventId(self.next_event_id);
        self.next_event_id += 1;
        let seq = self.next_seq;
        self.next_seq += 1;
        self.queue.push(Scheduled {
            fire: self.clock.plus_ns(delay_ns),
            seq,
            id,
            payload,
        });
        Ok(id)
    }

    /// The simulation-wide random stream. Every random draw in a simulation
    /// instance comes from this one generator, so a seed fixes the whole run.
    #[inline]
    pub fn rng(&mut self) -> &mut ChaCha12Rng {
        &mut self.rng
    }

    fn pop(&mut self) -> Option<Scheduled<P>> {
        self.queue.pop()
    }
}

/// What a task reports back to the kernel after being polled.
///
/// A poll runs the task as far as it can go, so there is no "still runnable"
/// state: the task either completed or is blocked on a described condition.
#[derive(Debug, Clone, PartialEq)]
pub enum TaskStatus {
    /// The task cannot proceed; the string describes what it awaits and is
    /// quoted verbatim in deadlock reports.
    Blocked(String),
    Finished,
}

/// A cooperative task driven by the kernel.
pub trait Task<W, P, E> {
    /// Run until blocked or finished. The task may inspect and mutate the
    /// shared world and schedule events; it must not busy-wait.
    fn poll(&mut self, world: &mut W, sched: &mut Scheduler<P>) -> Result<TaskStatus, E>;
}

/// Receiver of fired events. The world applies the payload's effect; tasks
/// are re-polled afterwards and observe the updated world.
pub trait EventHandler<P, E> {
    fn handle_event(
        &mut self,
        now: SimTime,
        id: EventId,
        payload: P,
        sched: &mut Scheduler<P>,
    ) -> Result<(), E>;
}

/// One blocked task inside a [`DeadlockInfo`] report.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockedTask {
    pub name: String,
    pub waiting_on: String,
}

/// Report produced when the event queue runs dry while tasks are still
/// blocked: nothing can ever wake them again.
#[derive(Debug, Clone, PartialEq)]
pub struct DeadlockInfo {
    pub at: SimTime,
    pub blocked: Vec<BlockedTask>,
}

impl fmt::Display for DeadlockInfo {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "deadlock at t={} ns: {} task(s) blocked with an empty event queue:",
            self.at,
            self.blocked.len()
        )?;
        for b in &self.blocked {
            write!(f, " [{} awaiting {}]", b.name, b.waiting_on)?;
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum RunError<E: std::error::Error + 'static> {
    #[error("{0}")]
    Deadlock(DeadlockInfo),
    #[error("task '{task}' failed: {source}")]
    Task {
        task: String,
        #[source]
        source: E,
    },
    #[error("event handler failed: {0}")]
    Handler(#[source] E),
}

struct TaskSlot<W, P, E> {
    name: String,
    task: Box<dyn Task<W, P, E>>,
    state: TaskStatus,
}

/// Discrete-event kernel: scheduler plus the registered tasks.
pub struct Kernel<W, P, E> {
    sched: Scheduler<P>,
    tasks: Vec<TaskSlot<W, P, E>>,
    seed: u64,
}

impl<W, P, E: std::error::Error + 'static> Kernel<W, P, E> {
    pub fn new(seed: u64) -> Self {
        Kernel {
            sched: Scheduler::new(seed),
            tasks: Vec::new(),
            seed,
        }
    }

    /// Register a task. Tasks are polled in registration order, which keeps
    /// multi-task runs deterministic.
    pub fn spawn(&mut self, name: impl Into<String>, task: Box<dyn Task<W, P, E>>) {
        self.tasks.push(TaskSlot {
            name: name.into(),
            task,
            state: TaskStatus::Blocked("first poll".to_string()),
        });
    }

    #[inline]
    pub fn now(&self) -> SimTime {
        self.sched.now()
    }

    #[inline]
    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn schedule(&mut self, delay_ns: f64, payload: P) -> Result<EventId, ScheduleError> {
        self.sched.schedule(delay_ns, payload)
    }

    #[inline]
    pub fn rng(&mut self) -> &mut ChaCha12Rng {
        self.sched.rng()
    }

    /// Scheduler access for embedding code that sets up a run.
    #[inline]
    pub fn scheduler(&mut self) -> &mut Scheduler<P> {
        &mut self.sched
    }

    /// Name and current state of every registered task.
    pub fn task_states(&self) -> Vec<(String, TaskStatus)> {
        self.tasks
            .iter()
            .map(|t| (t.name.clone(), t.state.clone()))
            .collect()
    }

    /// The `(time, seq, id)` record of every event delivered so far.
    pub fn event_trace(&self) -> &[DeliveredEvent] {
        &self.sched.delivered
    }

    /// Clear clock, queue, tasks and trace, and restore the RNG to the
    /// original seed. The instance behaves as if freshly constructed.
    pub fn reset(&mut self) {
        let seed = self.seed;
        self.reset_with_seed(seed);
    }

    /// Like [`Kernel::reset`], but the RNG restarts from a new seed.
    pub fn reset_with_seed(&mut self, seed: u64) {
        self.seed = seed;
        self.sched = Scheduler::new(seed);
        self.tasks.clear();
    }

    fn poll_all(&mut self, world: &mut W) -> Result<(), RunError<E>> {
        for slot in &mut self.tasks {
            if slot.state == TaskStatus::Finished {
                continue;
            }
            match slot.task.poll(world, &mut self.sched) {
                Ok(state) => slot.state = state,
                Err(e) => {
                    return Err(RunError::Task {
                        task: slot.name.clone(),
                        source: e,
                    })
                }
            }
        }
        Ok(())
    }

    /// Drive the simulation until the event queue is empty and every task is
    /// finished or blocked. Returns the final simulated time, or a deadlock
    /// error naming each blocked task together with the condition it awaits.
    pub fn run(&mut self, world: &mut W) -> Result<SimTime, RunError<E>>
    where
        W: EventHandler<P, E>,
    {
        self.poll_all(world)?;
        loop {
            let Some(ev) = self.sched.pop() else {
                let blocked: Vec<BlockedTask> = self
                    .tasks
                    .iter()
                    .filter_map(|t| match &t.state {
                        TaskStatus::Blocked(reason) => Some(BlockedTask {
                            name: t.name.clone(),
                            waiting_on: reason.clone(),
                        }),
                        TaskStatus::Finished => None,
                    })
                    .collect();
                if blocked.is_empty() {
                    return Ok(self.sched.clock);
                }
                return Err(RunError::Deadlock(DeadlockInfo {
                    at: self.sched.clock,
                    blocked,
                }));
            };
            debug_assert!(ev.fire >= self.sched.clock, "clock must be monotonic");
            self.sched.clock = ev.fire;
            self.sched.delivered.push(DeliveredEvent {
                time: ev.fire,
                seq: ev.seq,
                id: ev.id,
            });
            world
                .handle_event(ev.fire, ev.id, ev.payload, &mut self.sched)
                .map_err(RunError::Handler)?;
            self.poll_all(world)?;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;
    use std::convert::Infallible;

    /// World that just records which payloads fired and when.
    #[derive(Default)]
    struct Recorder {
        log: Vec<(f64, u32)>,
    }

    impl EventHandler<u32, Infallible> for Recorder {
        fn handle_event(
            &mut self,
            now: SimTime,
            _id: EventId,
            payload: u32,
            _sched: &mut Scheduler<u32>,
        ) -> Result<(), Infallible> {
            self.log.push((now.ns(), payload));
            Ok(())
        }
    }

    #[test]
    fn empty_run_returns_zero() {
        let mut k: Kernel<Recorder, u32, Infallible> = Kernel::new(0);
        let mut w = Recorder::default();
        let t = k.run(&mut w).unwrap();
        assert_eq!(t, SimTime::ZERO);
    }

    #[test]
    fn events_fire_in_time_then_insertion_order() {
        let mut k: Kernel<Recorder, u32, Infallible> = Kernel::new(0);
        let mut w = Recorder::default();
        k.schedule(5.0, 10).unwrap();
        k.schedule(5.0, 20).unwrap();
        k.schedule(2.0, 30).unwrap();
        k.schedule(0.0, 40).unwrap();
        let t = k.run(&mut w).unwrap();
        assert_eq!(t, SimTime::from_ns(5.0).unwrap());
        assert_eq!(
            w.log,
            vec![(0.0, 40), (2.0, 30), (5.0, 10), (5.0, 20)],
            "equal fire times must preserve insertion order"
        );
    }

    #[test]
    fn negative_delay_is_rejected() {
        let mut k: Kernel<Recorder, u32, Infallible> = Kernel::new(0);
        assert!(k.schedule(-1.0, 0).is_err());
        assert!(k.schedule(f64::NAN, 0).is_err());
        assert!(SimTime::from_ns(-0.5).is_err());
    }

    #[test]
    fn fractional_nanosecond_delay_is_exact() {
        // A 182 Hz process has a period of 1e9/182 ns; the clock must land on
        // exactly that f64 value, with no epsilon.
        let delay = 1e9 / 182.0;
        let mut k: Kernel<Recorder, u32, Infallible> = Kernel::new(0);
        let mut w = Recorder::default();
        k.schedule(delay, 1).unwrap();
        let t = k.run(&mut w).unwrap();
        assert_eq!(t.ns(), delay);
        assert!((t.ns() - 5_494_505.494_505_494).abs() < 1e-6);
    }

    /// Task that blocks until the clock reaches a target instant.
    struct WaitUntil {
        target: f64,
        scheduled: bool,
        done_at: Option<f64>,
    }

    impl Task<Recorder, u32, Infallible> for WaitUntil {
        fn poll(
            &mut self,
            _world: &mut Recorder,
            sched: &mut Scheduler<u32>,
        ) -> Result<TaskStatus, Infallible> {
            if !self.scheduled {
                self.scheduled = true;
                sched.schedule(self.target, 99).unwrap();
            }
            if sched.now().ns() >= self.target {
                self.done_at = Some(sched.now().ns());
                Ok(TaskStatus::Finished)
            } else {
                Ok(TaskStatus::Blocked(format!(
                    "clock to reach {} ns",
                    self.target
                )))
            }
        }
    }

    #[test]
    fn task_blocks_then_resumes_on_its_event() {
        let mut k: Kernel<Recorder, u32, Infallible> = Kernel::new(7);
        let mut w = Recorder::default();
        k.spawn(
            "waiter",
            Box::new(WaitUntil {
                target: 125.0,
                scheduled: false,
                done_at: None,
            }),
        );
        let t = k.run(&mut w).unwrap();
        assert_eq!(t.ns(), 125.0);
        let states = k.task_states();
        assert_eq!(states[0].1, TaskStatus::Finished);
    }

    /// Task that blocks forever on a condition nothing will ever satisfy.
    struct Stuck(String);

    impl Task<Recorder, u32, Infallible> for Stuck {
        fn poll(
            &mut self,
            _world: &mut Recorder,
            _sched: &mut Scheduler<u32>,
        ) -> Result<TaskStatus, Infallible> {
            Ok(TaskStatus::Blocked(self.0.clone()))
        }
    }

    #[test]
    fn deadlock_names_every_blocked_task_and_wait() {
        let mut k: Kernel<Recorder, u32, Infallible> = Kernel::new(0);
        let mut w = Recorder::default();
        k.spawn("alpha", Box::new(Stuck("message m1 from beta".into())));
        k.spawn("beta", Box::new(Stuck("message m2 from alpha".into())));
        let err = k.run(&mut w).unwrap_err();
        match err {
            RunError::Deadlock(info) => {
                assert_eq!(info.blocked.len(), 2);
                let text = info.to_string();
                assert!(text.contains("alpha"), "{text}");
                assert!(text.contains("beta"), "{text}");
                assert!(text.contains("message m1 from beta"), "{text}");
                assert!(text.contains("message m2 from alpha"), "{text}");
            }
            other => panic!("expected deadlock, got {other:?}"),
        }
    }

    #[test]
    fn reset_restores_seeded_rng_stream() {
        let mut k: Kernel<Recorder, u32, Infallible> = Kernel::new(42);
        let first: Vec<u64> = (0..8).map(|_| k.rng().gen()).collect();
        k.reset();
        let second: Vec<u64> = (0..8).map(|_| k.rng().gen()).collect();
        assert_eq!(first, second);
        k.reset_with_seed(43);
        let third: Vec<u64> = (0..8).map(|_| k.rng().gen()).collect();
        assert_ne!(first, third);
    }

    #[test]
    fn reset_clears_clock_queue_and_trace() {
        let mut k: Kernel<Recorder, u32, Infallible> = Kernel::new(0);
        let mut w = Recorder::default();
        k.schedule(10.0, 1).unwrap();
        k.run(&mut w).unwrap();
        assert_eq!(k.now().ns(), 10.0);
        assert_eq!(k.event_trace().len(), 1);
        k.reset();
        assert_eq!(k.now(), SimTime::ZERO);
        assert!(k.event_trace().is_empty());
        let mut w2 = Recorder::default();
        assert_eq!(k.run(&mut w2).unwrap(), SimTime::ZERO);
    }

    proptest! {
        /// Delivery order is exactly the lexicographic (fire_time, seq) order
        /// no matter in which order events were scheduled.
        #[test]
        fn delivery_order_is_lexicographic(delays in proptest::collection::vec(0.0f64..1e6, 1..40)) {
            let mut k: Kernel<Recorder, u32, Infallible> = Kernel::new(1);
            let mut w = Recorder::default();
            for (i, d) in delays.iter().enumerate() {
                k.schedule(*d, i as u32).unwrap();
            }
            k.run(&mut w).unwrap();
            prop_assert_eq!(w.log.len(), delays.len());
            // Expected order: stable sort of (delay, insertion index).
            let mut expected: Vec<(f64, u32)> =
                delays.iter().enumerate().map(|(i, d)| (*d, i as u32)).collect();
            expected.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
            prop_assert_eq!(w.log, expected);
        }
    }
}
