//! Quantum state tracking for a whole simulated machine.
//!
//! A [`StateStore`] owns every live qubit in the simulation, regardless of
//! which device holds it. Qubits that have interacted live together in a
//! *group* (one joint ket or density matrix); independent groups stay
//! factored so memory only grows where entanglement actually spreads.
//!
//! The store is generic over the floating-point scalar used for amplitudes
//! (`f32` or `f64`) via [`crate::scalar::Scalar`]; the rest of the engine
//! (time, probabilities, random draws) always uses `f64` so that event
//! ordering and sampled decisions do not depend on the state precision.
//!
//! Time handling is deliberately split: the store never advances time on its
//! own. Callers charge idle decoherence with [`StateStore::catch_up`] before
//! an operation touches a qubit and stamp completion times afterwards with
//! [`StateStore::stamp`]. This keeps every `last_touched` marker at or before
//! the current simulation time.

pub mod gate;
pub mod math;

pub use gate::GateSpec;

use crate::kernel::SimTime;
use crate::scalar::{cplx, s, Scalar};
use math::CMat;
use num_complex::Complex;
use rand::Rng;
use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

/// Which representation a [`StateStore`] uses for quantum state.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Formalism {
    /// Pure-state vectors with sampled (trajectory) noise.
    Ket,
    /// Density matrices with exact noise channels.
    DensityMatrix,
}

impl fmt::Display for Formalism {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Formalism::Ket => write!(f, "ket"),
            Formalism::DensityMatrix => write!(f, "density-matrix"),
        }
    }
}

impl FromStr for Formalism {
    type Err = String;

    fn from_str(text: &str) -> Result<Self, Self::Err> {
        match text.to_ascii_lowercase().as_str() {
            "ket" => Ok(Formalism::Ket),
            "dm" | "density_matrix" | "density-matrix" => Ok(Formalism::DensityMatrix),
            other => Err(format!(
                "unknown formalism `{other}` (expected `ket` or `dm`)"
            )),
        }
    }
}

/// Handle to a live qubit in a [`StateStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct QubitId(u64);

impl fmt::Display for QubitId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "q{}", self.0)
    }
}

/// Measurement basis.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MeasBasis {
    Z,
    X,
}

impl fmt::Display for MeasBasis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MeasBasis::Z => write!(f, "Z"),
            MeasBasis::X => write!(f, "X"),
        }
    }
}

/// Result of a measurement.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Measured {
    /// The physical projection outcome.
    pub outcome: u8,
    /// The recorded bit, after any readout flip.
    pub reported: u8,
    /// Born probability of `outcome` at measurement time.
    pub prob: f64,
}

/// How a delivered two-qubit entangled state is described.
#[derive(Debug, Clone, PartialEq)]
pub enum PairSource {
    /// Werner state with the given fidelity to the Bell state `phi+`.
    Werner(f64),
    /// Arbitrary pure two-qubit state (length-4 ket).
    PureKet(Vec<Complex<f64>>),
    /// Arbitrary two-qubit density matrix (16 entries, row-major).
    MixedDm(Vec<Complex<f64>>),
}

/// Errors from state-store operations.
#[derive(Debug, thiserror::Error)]
pub enum StateError {
    #[error("unknown qubit {0}")]
    UnknownQubit(QubitId),
    #[error("duplicate target qubit {0}")]
    DuplicateTarget(QubitId),
    #[error("gate {gate} expects {expected} target(s), got {got}")]
    WrongArity {
        gate: GateSpec,
        expected: usize,
        got: usize,
    },
    #[error("qubits already share an entangled group; merging again is invalid")]
    AlreadyJoined,
    #[error(
        "operation would form a group of {would} qubits; the {formalism} formalism \
         is limited to {limit}"
    )]
    GroupTooLarge {
        would: usize,
        limit: usize,
        formalism: Formalism,
    },
    #[error("probability {0} is outside [0, 1]")]
    InvalidProbability(f64),
    #[error(
        "forced outcome {outcome} for {qubit} has Born probability {prob:.3e}; \
         that branch does not exist"
    )]
    ImpossibleBranch {
        qubit: QubitId,
        outcome: u8,
        prob: f64,
    },
    #[error("desired state has dimension {got}, expected {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("state vector is not normalized (|psi|^2 = {0})")]
    NotNormalized(f64),
    #[error("invalid state: {0}")]
    InvalidState(String),
    #[error(
        "the ket formalism cannot represent a mixed entangled-pair state; \
         use the density-matrix formalism"
    )]
    PairNeedsDensityMatrix,
}

/// Idle depolarizing probability accumulated over `delta_ns` nanoseconds at
/// a memory noise rate of `rate_hz` events per second:
/// `p = 1 - exp(-rate * dt)`.
pub fn idle_depolar_prob(rate_hz: f64, delta_ns: f64) -> f64 {
    if rate_hz <= 0.0 || delta_ns <= 0.0 {
        return 0.0;
    }
    1.0 - (-rate_hz * delta_ns * 1e-9).exp()
}

/// Copy of one group's members and state, for tests and diagnostics.
#[derive(Debug, Clone)]
pub enum StateSnapshot<S: Scalar> {
    Ket {
        members: Vec<QubitId>,
        amplitudes: Vec<Complex<S>>,
    },
    Dm {
        members: Vec<QubitId>,
        matrix: Vec<Complex<S>>,
    },
}

enum GroupData<S: Scalar> {
    Ket(Vec<Complex<S>>),
    Dm(Vec<Complex<S>>),
}

struct Group<S: Scalar> {
    members: Vec<QubitId>,
    data: GroupData<S>,
}

struct QubitMeta {
    group: usize,
    rate_hz: f64,
    last_touched: SimTime,
}

/// Maximum entangled-group sizes per formalism. A ket of 20 qubits is one
/// million amplitudes; a density matrix of 10 qubits is the same memory.
const MAX_KET_GROUP: usize = 20;
const MAX_DM_GROUP: usize = 10;

/// All quantum state of one simulated machine.
pub struct StateStore<S: Scalar> {
    formalism: Formalism,
    groups: Vec<Option<Group<S>>>,
    free_groups: Vec<usize>,
    meta: BTreeMap<QubitId, QubitMeta>,
    next_id: u64,
}

impl<S: Scalar> StateStore<S> {
    pub fn new(formalism: Formalism) -> Self {
        StateStore {
            formalism,
            groups: Vec::new(),
            free_groups: Vec::new(),
            meta: BTreeMap::new(),
            next_id: 0,
        }
    }

    pub fn formalism(&self) -> Formalism {
        self.formalism
    }

    /// Number of live qubits.
    pub fn qubit_count(&self) -> usize {
        self.meta.len()
    }

    pub fn contains(&self, q: QubitId) -> bool {
        self.meta.contains_key(&q)
    }

    fn group_limit(&self) -> usize {
        match self.formalism {
            Formalism::Ket => MAX_KET_GROUP,
            Formalism::DensityMatrix => MAX_DM_GROUP,
        }
    }

    fn meta_of(&self, q: QubitId) -> Result<&QubitMeta, StateError> {
        self.meta.get(&q).ok_or(StateError::UnknownQubit(q))
    }

    fn group_ref(&self, gid: usize) -> &Group<S> {
        self.groups[gid].as_ref().expect("group index is live")
    }

    fn group_mut(&mut self, gid: usize) -> &mut Group<S> {
        self.groups[gid].as_mut().expect("group index is live")
    }

    fn alloc_group(&mut self, group: Group<S>) -> usize {
        if let Some(gid) = self.free_groups.pop() {
            self.groups[gid] = Some(group);
            gid
        } else {
            self.groups.push(Some(group));
            self.groups.len() - 1
        }
    }

    fn release_group(&mut self, gid: usize) {
        self.groups[gid] = None;
        self.free_groups.push(gid);
    }

    /// Create a fresh qubit in `|0>` with the given idle noise rate.
    pub fn init_qubit(&mut self, rate_hz: f64, now: SimTime) -> QubitId {
        let id = QubitId(self.next_id);
        self.next_id += 1;
        let data = match self.formalism {
            Formalism::Ket => GroupData::Ket(vec![
                cplx(1.0, 0.0),
                cplx(0.0, 0.0),
            ]),
            Formalism::DensityMatrix => GroupData::Dm(vec![
                cplx(1.0, 0.0),
                cplx(0.0, 0.0),
                cplx(0.0, 0.0),
                cplx(0.0, 0.0),
            ]),
        };
        let gid = self.alloc_group(Group {
            members: vec![id],
            data,
        });
        self.meta.insert(
            id,
            QubitMeta {
                group: gid,
                rate_hz,
                last_touched: now,
            },
        );
        id
    }

    pub fn last_touched(&self, q: QubitId) -> Result<SimTime, StateError> {
        Ok(self.meta_of(q)?.last_touched)
    }

    pub fn rate_hz(&self, q: QubitId) -> Result<f64, StateError> {
        Ok(self.meta_of(q)?.rate_hz)
    }

    /// Change the idle noise rate going forward. Callers should
    /// [`catch_up`](Self::catch_up) first so past idling is charged at the
    /// old rate.
    pub fn set_rate(&mut self, q: QubitId, rate_hz: f64) -> Result<(), StateError> {
        self.meta_of(q)?;
        self.meta.get_mut(&q).unwrap().rate_hz = rate_hz;
        Ok(())
    }

    /// Move the qubit's idle marker forward to `to` without applying noise
    /// (used after the qubit was actively driven up to `to`).
    pub fn stamp(&mut self, q: QubitId, to: SimTime) -> Result<(), StateError> {
        self.meta_of(q)?;
        let m = self.meta.get_mut(&q).unwrap();
        if to > m.last_touched {
            m.last_touched = to;
        }
        Ok(())
    }

    pub fn group_members(&self, q: QubitId) -> Result<Vec<QubitId>, StateError> {
        let gid = self.meta_of(q)?.group;
        Ok(self.group_ref(gid).members.clone())
    }

    /// Copy of the group state holding `q`.
    pub fn snapshot(&self, q: QubitId) -> Result<StateSnapshot<S>, StateError> {
        let gid = self.meta_of(q)?.group;
        let g = self.group_ref(gid);
        Ok(match &g.data {
            GroupData::Ket(v) => StateSnapshot::Ket {
                members: g.members.clone(),
                amplitudes: v.clone(),
            },
            GroupData::Dm(m) => StateSnapshot::Dm {
                members: g.members.clone(),
                matrix: m.clone(),
            },
        })
    }

    fn check_distinct(targets: &[QubitId]) -> Result<(), StateError> {
        for (i, a) in targets.iter().enumerate() {
            if targets[i + 1..].contains(a) {
                return Err(StateError::DuplicateTarget(*a));
            }
        }
        Ok(())
    }

    /// Bring all targets into one group (tensoring in first-appearance
    /// order), returning its id. Targets already together are left alone.
    fn ensure_joined(&mut self, targets: &[QubitId]) -> Result<usize, StateError> {
        Self::check_distinct(targets)?;
        let mut order: Vec<usize> = Vec::new();
        for t in targets {
            let gid = self.meta_of(*t)?.group;
            if !order.contains(&gid) {
                order.push(gid);
            }
        }
        if order.len() == 1 {
            return Ok(order[0]);
        }
        let would: usize = order.iter().map(|&g| self.group_ref(g).members.len()).sum();
        let limit = self.group_limit();
        if would > limit {
            return Err(StateError::GroupTooLarge {
                would,
                limit,
                formalism: self.formalism,
            });
        }
        let mut members: Vec<QubitId> = Vec::with_capacity(would);
        let mut ket_acc: Vec<Complex<S>> = vec![cplx(1.0, 0.0)];
        let mut dm_acc: Vec<Complex<S>> = vec![cplx(1.0, 0.0)];
        let mut dm_dim = 1usize;
        for &gid in &order {
            let g = self.group_ref(gid);
            members.extend_from_slice(&g.members);
            match &g.data {
                GroupData::Ket(v) => ket_acc = math::kron_vec(&ket_acc, v),
                GroupData::Dm(m) => {
                    let gdim = 1usize << g.members.len();
                    dm_acc = math::kron_mat(&dm_acc, dm_dim, m, gdim);
                    dm_dim *= gdim;
                }
            }
        }
        let data = match self.formalism {
            Formalism::Ket => GroupData::Ket(ket_acc),
            Formalism::DensityMatrix => GroupData::Dm(dm_acc),
        };
        for &gid in &order {
            self.release_group(gid);
        }
        let new_gid = self.alloc_group(Group {
            members: members.clone(),
            data,
        });
        for m in members {
            self.meta.get_mut(&m).unwrap().group = new_gid;
        }
        Ok(new_gid)
    }

    /// Explicitly tensor the groups of the listed qubits together. Unlike
    /// the implicit join done by gates, listing two qubits that already share
    /// a group is an error here.
    pub fn merge(&mut self, targets: &[QubitId]) -> Result<(), StateError> {
        Self::check_distinct(targets)?;
        let mut seen: Vec<usize> = Vec::new();
        for t in targets {
            let gid = self.meta_of(*t)?.group;
            if seen.contains(&gid) {
                return Err(StateError::AlreadyJoined);
            }
            seen.push(gid);
        }
        self.ensure_joined(targets)?;
        Ok(())
    }

    fn positions_in_group(&self, gid: usize, targets: &[QubitId]) -> Vec<usize> {
        let members = &self.group_ref(gid).members;
        targets
            .iter()
            .map(|t| members.iter().position(|m| m == t).expect("target in group"))
            .collect()
    }

    fn apply_mat_in_group(&mut self, gid: usize, positions: &[usize], mat: &CMat<S>) {
        let n = self.group_ref(gid).members.len();
        match &mut self.group_mut(gid).data {
            GroupData::Ket(v) => math::apply_unitary_ket(v, n, positions, mat),
            GroupData::Dm(m) => math::apply_unitary_dm(m, n, positions, mat),
        }
    }

    /// Apply a gate's unitary to the targets (joining groups as needed).
    pub fn apply_unitary(
        &mut self,
        gate: GateSpec,
        targets: &[QubitId],
    ) -> Result<(), StateError> {
        if gate.arity() != targets.len() {
            return Err(StateError::WrongArity {
                gate,
                expected: gate.arity(),
                got: targets.len(),
            });
        }
        self.apply_matrix(&gate.unitary::<S>(), targets)
    }

    /// Apply an arbitrary unitary matrix to the targets.
    pub fn apply_matrix(
        &mut self,
        mat: &CMat<S>,
        targets: &[QubitId],
    ) -> Result<(), StateError> {
        assert_eq!(
            mat.dim(),
            1usize << targets.len(),
            "matrix dimension must match target count"
        );
        let gid = self.ensure_joined(targets)?;
        let positions = self.positions_in_group(gid, targets);
        self.apply_mat_in_group(gid, &positions, mat);
        Ok(())
    }

    /// Joint depolarizing channel on the targets with probability `p`.
    ///
    /// Density matrices apply the channel exactly. Kets unravel it as a
    /// trajectory: with probability `q = p (4^k - 1) / 4^k` (the total
    /// non-identity weight of the `k`-qubit Pauli twirl whose identity-free
    /// mixture equals the channel) a uniformly random non-identity Pauli
    /// string is applied.
    pub fn apply_depolarizing<R: Rng + ?Sized>(
        &mut self,
        targets: &[QubitId],
        p: f64,
        rng: &mut R,
    ) -> Result<(), StateError> {
        if !(0.0..=1.0).contains(&p) || !p.is_finite() {
            return Err(StateError::InvalidProbability(p));
        }
        if targets.is_empty() || p == 0.0 {
            for t in targets {
                self.meta_of(*t)?;
            }
            return Ok(());
        }
        let gid = self.ensure_joined(targets)?;
        match self.formalism {
            Formalism::DensityMatrix => {
                let positions = self.positions_in_group(gid, targets);
                let n = self.group_ref(gid).members.len();
                if let GroupData::Dm(m) = &mut self.group_mut(gid).data {
                    math::depolarize_dm(m, n, &positions, p);
                }
            }
            Formalism::Ket => {
                let k = targets.len() as u32;
                let denom = 4f64.powi(k as i32);
                let q = p * (denom - 1.0) / denom;
                if rng.gen::<f64>() < q {
                    let pick = rng.gen_range(1..denom as u64);
                    for (i, t) in targets.iter().enumerate() {
                        let code = ((pick >> (2 * (k as usize - 1 - i))) & 3) as u8;
                        if code != 0 {
                            self.apply_matrix(&math::pauli_1q(code), &[*t])?;
                        }
                    }
                }
            }
        }
        Ok(())
    }

    /// Charge idle decoherence on `q` from its last touch up to `to`, then
    /// move the marker. Does nothing when the qubit was touched at or after
    /// `to` already.
    pub fn catch_up<R: Rng + ?Sized>(
        &mut self,
        q: QubitId,
        to: SimTime,
        rng: &mut R,
    ) -> Result<(), StateError> {
        let m = self.meta_of(q)?;
        let delta = to.ns() - m.last_touched.ns();
        if delta <= 0.0 {
            return Ok(());
        }
        let p = idle_depolar_prob(m.rate_hz, delta);
        if p > 0.0 {
            self.apply_depolarizing(&[q], p, rng)?;
        }
        self.meta.get_mut(&q).unwrap().last_touched = to;
        Ok(())
    }

    /// Insert `bit` at qubit position `pos` of an index over `n` qubits,
    /// where `x` indexes the remaining `n - 1` qubits.
    fn insert_bit(x: usize, n: usize, pos: usize, bit: usize) -> usize {
        let shift = n - 1 - pos;
        let low = x & ((1usize << shift) - 1);
        let high = x >> shift;
        (high << (shift + 1)) | (bit << shift) | low
    }

    /// Z-basis probability of reading `1` on `q`, without collapsing.
    pub fn prob_one(&self, q: QubitId) -> Result<f64, StateError> {
        let gid = self.meta_of(q)?.group;
        let g = self.group_ref(gid);
        let n = g.members.len();
        let pos = g.members.iter().position(|m| *m == q).unwrap();
        let stride = math::ket_stride(n, pos);
        Ok(match &g.data {
            GroupData::Ket(v) => {
                let total = math::norm2(v).to_f64().unwrap();
                let one: f64 = v
                    .iter()
                    .enumerate()
                    .filter(|(i, _)| i & stride != 0)
                    .map(|(_, a)| a.norm_sqr().to_f64().unwrap())
                    .sum();
                one / total
            }
            GroupData::Dm(m) => {
                let dim = 1usize << n;
                let total = math::trace(m, dim).re.to_f64().unwrap();
                let one: f64 = (0..dim)
                    .filter(|r| r & stride != 0)
                    .map(|r| m[r * dim + r].re.to_f64().unwrap())
                    .sum();
                one / total
            }
        })
    }

    /// Project `q` onto `|outcome>` (Z basis), split it out of its group as
    /// a singleton, and return the Born probability the branch had.
    fn collapse_to(&mut self, q: QubitId, outcome: u8) -> Result<f64, StateError> {
        let gid = self.meta_of(q)?.group;
        let n = self.group_ref(gid).members.len();
        let pos = self
            .group_ref(gid)
            .members
            .iter()
            .position(|m| *m == q)
            .unwrap();
        let p1 = self.prob_one(q)?;
        let prob = if outcome == 1 { p1 } else { 1.0 - p1 };
        if prob < 1e-12 {
            return Err(StateError::ImpossibleBranch {
                qubit: q,
                outcome,
                prob,
            });
        }
        let bit = outcome as usize;
        if n == 1 {
            let g = self.group_mut(gid);
            g.data = match g.data {
                GroupData::Ket(_) => {
                    let mut v = vec![cplx(0.0, 0.0); 2];
                    v[bit] = cplx(1.0, 0.0);
                    GroupData::Ket(v)
                }
                GroupData::Dm(_) => {
                    let mut m = vec![cplx(0.0, 0.0); 4];
                    m[bit * 2 + bit] = cplx(1.0, 0.0);
                    GroupData::Dm(m)
                }
            };
            return Ok(prob);
        }
        let rest_data = match &self.group_ref(gid).data {
            GroupData::Ket(v) => {
                let mut rest = vec![cplx::<S>(0.0, 0.0); 1usize << (n - 1)];
                for (j, slot) in rest.iter_mut().enumerate() {
                    *slot = v[Self::insert_bit(j, n, pos, bit)];
                }
                let norm = math::norm2(&rest).sqrt();
                for a in rest.iter_mut() {
                    *a /= Complex::new(norm, S::zero());
                }
                GroupData::Ket(rest)
            }
            GroupData::Dm(m) => {
                let dim = 1usize << n;
                let rdim = 1usize << (n - 1);
                let mut rest = vec![cplx::<S>(0.0, 0.0); rdim * rdim];
                for r in 0..rdim {
                    for c in 0..rdim {
                        let ro = Self::insert_bit(r, n, pos, bit);
                        let co = Self::insert_bit(c, n, pos, bit);
                        rest[r * rdim + c] = m[ro * dim + co];
                    }
                }
                let tr = math::trace(&rest, rdim).re;
                for a in rest.iter_mut() {
                    *a /= Complex::new(tr, S::zero());
                }
                GroupData::Dm(rest)
            }
        };
        // Shrink the old group and give the measured qubit its own.
        let g = self.group_mut(gid);
        g.members.remove(pos);
        g.data = rest_data;
        let single = match self.formalism {
            Formalism::Ket => {
                let mut v = vec![cplx(0.0, 0.0); 2];
                v[bit] = cplx(1.0, 0.0);
                GroupData::Ket(v)
            }
            Formalism::DensityMatrix => {
                let mut m = vec![cplx(0.0, 0.0); 4];
                m[bit * 2 + bit] = cplx(1.0, 0.0);
                GroupData::Dm(m)
            }
        };
        let new_gid = self.alloc_group(Group {
            members: vec![q],
            data: single,
        });
        self.meta.get_mut(&q).unwrap().group = new_gid;
        Ok(prob)
    }

    /// Measure `q` in the given basis.
    ///
    /// The physical outcome is drawn from the Born rule unless `forced` pins
    /// the branch (used for exhaustive branch enumeration); forcing a branch
    /// of negligible probability is an error. After projection the qubit sits
    /// in its own group, left in the post-measurement state of the chosen
    /// basis. A readout flip with probability `flip_prob` corrupts only the
    /// *reported* bit, never the post-measurement state.
    ///
    /// Random draws, in order: the outcome (unless forced), then the readout
    /// flip (unless `flip_prob` is zero).
    pub fn measure<R: Rng + ?Sized>(
        &mut self,
        q: QubitId,
        basis: MeasBasis,
        flip_prob: f64,
        forced: Option<u8>,
        rng: &mut R,
    ) -> Result<Measured, StateError> {
        if !(0.0..=1.0).contains(&flip_prob) || !flip_prob.is_finite() {
            return Err(StateError::InvalidProbability(flip_prob));
        }
        let gid = self.meta_of(q)?.group;
        let h = GateSpec::H.unitary::<S>();
        if basis == MeasBasis::X {
            let positions = self.positions_in_group(gid, &[q]);
            self.apply_mat_in_group(gid, &positions, &h);
        }
        let p1 = self.prob_one(q)?;
        let outcome = match forced {
            Some(o) => o & 1,
            None => {
                if rng.gen::<f64>() < p1 {
                    1
                } else {
                    0
                }
            }
        };
        let prob = self.collapse_to(q, outcome)?;
        if basis == MeasBasis::X {
            let new_gid = self.meta_of(q)?.group;
            self.apply_mat_in_group(new_gid, &[0], &h);
        }
        let mut reported = outcome;
        if flip_prob > 0.0 && rng.gen::<f64>() < flip_prob {
            reported ^= 1;
        }
        Ok(Measured {
            outcome,
            reported,
            prob,
        })
    }

    /// Density-matrix-only: apply `gate` to `q` with probability `weight`,
    /// as the exact mixture `(1 - w) rho + w E(U rho U^t)`, where `E` is a
    /// depolarizing channel of strength `gate_error` on `q` (the noise of
    /// actually performing the correction).
    ///
    /// This is how classically controlled corrections driven by a noisy
    /// readout stay deterministic: the readout distribution is folded into
    /// the channel instead of being sampled.
    pub fn apply_weighted_correction(
        &mut self,
        q: QubitId,
        gate: GateSpec,
        weight: f64,
        gate_error: f64,
    ) -> Result<(), StateError> {
        if !(0.0..=1.0).contains(&weight) || !weight.is_finite() {
            return Err(StateError::InvalidProbability(weight));
        }
        if gate.arity() != 1 {
            return Err(StateError::WrongArity {
                gate,
                expected: 1,
                got: gate.arity(),
            });
        }
        if self.formalism != Formalism::DensityMatrix {
            return Err(StateError::InvalidState(
                "weighted corrections require the density-matrix formalism".into(),
            ));
        }
        let gid = self.meta_of(q)?.group;
        if weight == 0.0 {
            return Ok(());
        }
        let pos = self.positions_in_group(gid, &[q])[0];
        let n = self.group_ref(gid).members.len();
        let u = gate.unitary::<S>();
        if let GroupData::Dm(m) = &mut self.group_mut(gid).data {
            let mut corrected = m.clone();
            math::apply_unitary_dm(&mut corrected, n, &[pos], &u);
            if gate_error > 0.0 {
                math::depolarize_dm(&mut corrected, n, &[pos], gate_error);
            }
            let keep: S = s(1.0 - weight);
            let take: S = s(weight);
            for (dst, src) in m.iter_mut().zip(&corrected) {
                *dst = *dst * keep + *src * take;
            }
        }
        Ok(())
    }

    /// Remove `q` from the simulation. In the density-matrix formalism the
    /// qubit is traced out exactly; in the ket formalism it is projected by
    /// a random (unrecorded) Z measurement and dropped.
    pub fn discard<R: Rng + ?Sized>(
        &mut self,
        q: QubitId,
        rng: &mut R,
    ) -> Result<(), StateError> {
        let gid = self.meta_of(q)?.group;
        match self.formalism {
            Formalism::Ket => {
                self.measure(q, MeasBasis::Z, 0.0, None, rng)?;
            }
            Formalism::DensityMatrix => {
                let n = self.group_ref(gid).members.len();
                if n > 1 {
                    let pos = self
                        .group_ref(gid)
                        .members
                        .iter()
                        .position(|m| *m == q)
                        .unwrap();
                    let g = self.group_mut(gid);
                    if let GroupData::Dm(m) = &g.data {
                        let rest = math::partial_trace_dm(m, n, &[pos]);
                        g.data = GroupData::Dm(rest);
                    }
                    g.members.remove(pos);
                }
            }
        }
        // After the ket path, q is a singleton; after the dm path its group
        // either shrank (q removed) or q was already alone.
        let gid = self.meta_of(q)?.group;
        if self.group_ref(gid).members == [q] {
            self.release_group(gid);
        }
        self.meta.remove(&q);
        Ok(())
    }

    /// Materialize a freshly delivered entangled pair. Returns the two new
    /// qubit handles in the order `(first, second)` matching the source
    /// state's qubit order (first = most significant bit).
    ///
    /// In the ket formalism a Werner source is unraveled by sampling one of
    /// the four Bell states with the Werner weights (no draw when the
    /// fidelity is exactly 1); mixed sources are rejected.
    pub fn create_pair<R: Rng + ?Sized>(
        &mut self,
        source: &PairSource,
        rates_hz: (f64, f64),
        now: SimTime,
        rng: &mut R,
    ) -> Result<(QubitId, QubitId), StateError> {
        let data = match (self.formalism, source) {
            (_, PairSource::Werner(f)) if !(0.0..=1.0).contains(f) => {
                return Err(StateError::InvalidState(format!(
                    "Werner fidelity {f} is outside [0, 1]"
                )));
            }
            (Formalism::DensityMatrix, PairSource::Werner(f)) => {
                GroupData::Dm(math::werner_dm(*f))
            }
            (Formalism::Ket, PairSource::Werner(f)) => {
                let which = if *f >= 1.0 {
                    0
                } else {
                    let off = (1.0 - f) / 3.0;
                    let u: f64 = rng.gen();
                    if u < *f {
                        0
                    } else if u < f + off {
                        1
                    } else if u < f + 2.0 * off {
                        2
                    } else {
                        3
                    }
                };
                let h = s::<S>(std::f64::consts::FRAC_1_SQRT_2);
                let z = S::zero();
                // phi+, phi-, psi+, psi- in that order.
                let v = match which {
                    0 => vec![
                        Complex::new(h, z),
                        Complex::new(z, z),
                        Complex::new(z, z),
                        Complex::new(h, z),
                    ],
                    1 => vec![
                        Complex::new(h, z),
                        Complex::new(z, z),
                        Complex::new(z, z),
                        Complex::new(-h, z),
                    ],
                    2 => vec![
                        Complex::new(z, z),
                        Complex::new(h, z),
                        Complex::new(h, z),
                        Complex::new(z, z),
                    ],
                    _ => vec![
                        Complex::new(z, z),
                        Complex::new(h, z),
                        Complex::new(-h, z),
                        Complex::new(z, z),
                    ],
                };
                GroupData::Ket(v)
            }
            (_, PairSource::PureKet(v)) => {
                if v.len() != 4 {
                    return Err(StateError::DimensionMismatch {
                        expected: 4,
                        got: v.len(),
                    });
                }
                let n2: f64 = v.iter().map(|a| a.norm_sqr()).sum();
                if (n2 - 1.0).abs() > 1e-6 {
                    return Err(StateError::NotNormalized(n2));
                }
                let conv: Vec<Complex<S>> =
                    v.iter().map(|a| cplx(a.re, a.im)).collect();
                match self.formalism {
                    Formalism::Ket => GroupData::Ket(conv),
                    Formalism::DensityMatrix => {
                        let mut m = vec![cplx::<S>(0.0, 0.0); 16];
                        for r in 0..4 {
                            for c in 0..4 {
                                m[r * 4 + c] = conv[r] * conv[c].conj();
                            }
                        }
                        GroupData::Dm(m)
                    }
                }
            }
            (Formalism::Ket, PairSource::MixedDm(_)) => {
                return Err(StateError::PairNeedsDensityMatrix);
            }
            (Formalism::DensityMatrix, PairSource::MixedDm(m)) => {
                if m.len() != 16 {
                    return Err(StateError::DimensionMismatch {
                        expected: 16,
                        got: m.len(),
                    });
                }
                let conv: Vec<Complex<S>> =
                    m.iter().map(|a| cplx(a.re, a.im)).collect();
                math::check_density_matrix(&conv, 4, 1e-6)
                    .map_err(StateError::InvalidState)?;
                GroupData::Dm(conv)
            }
        };
        let qa = QubitId(self.next_id);
        let qb = QubitId(self.next_id + 1);
        self.next_id += 2;
        let gid = self.alloc_group(Group {
            members: vec![qa, qb],
            data,
        });
        self.meta.insert(
            qa,
            QubitMeta {
                group: gid,
                rate_hz: rates_hz.0,
                last_touched: now,
            },
        );
        self.meta.insert(
            qb,
            QubitMeta {
                group: gid,
                rate_hz: rates_hz.1,
                last_touched: now,
            },
        );
        Ok((qa, qb))
    }

    /// Fidelity `<psi| rho |psi>` of the reduced state of `targets` against
    /// the pure state `desired` (length `2^targets.len()`, big-endian in
    /// target order). Other qubits entangled with the targets are traced
    /// out; unrelated groups are ignored.
    pub fn fidelity(
        &self,
        targets: &[QubitId],
        desired: &[Complex<S>],
    ) -> Result<S, StateError> {
        Self::check_distinct(targets)?;
        if targets.is_empty() {
            return Err(StateError::InvalidState(
                "fidelity needs at least one target qubit".into(),
            ));
        }
        let expected = 1usize << targets.len();
        if desired.len() != expected {
            return Err(StateError::DimensionMismatch {
                expected,
                got: desired.len(),
            });
        }
        let n2 = math::norm2(desired).to_f64().unwrap();
        if (n2 - 1.0).abs() > 1e-6 {
            return Err(StateError::NotNormalized(n2));
        }
        let inv_norm: S = s(1.0 / n2.sqrt());
        let psi: Vec<Complex<S>> = desired
            .iter()
            .map(|a| *a * Complex::new(inv_norm, S::zero()))
            .collect();
        let mut order: Vec<usize> = Vec::new();
        for t in targets {
            let gid = self.meta_of(*t)?.group;
            if !order.contains(&gid) {
                order.push(gid);
            }
        }
        let total: usize = order.iter().map(|&g| self.group_ref(g).members.len()).sum();
        if total > MAX_KET_GROUP {
            return Err(StateError::GroupTooLarge {
                would: total,
                limit: MAX_KET_GROUP,
                formalism: self.formalism,
            });
        }
        let mut members: Vec<QubitId> = Vec::with_capacity(total);
        for &gid in &order {
            members.extend_from_slice(&self.group_ref(gid).members);
        }
        let traced: Vec<usize> = members
            .iter()
            .enumerate()
            .filter(|(_, m)| !targets.contains(m))
            .map(|(i, _)| i)
            .collect();
        let kept: Vec<QubitId> = members
            .iter()
            .filter(|m| targets.contains(m))
            .copied()
            .collect();
        let perm: Vec<usize> = targets
            .iter()
            .map(|t| kept.iter().position(|k| k == t).unwrap())
            .collect();
        let value: S = match self.formalism {
            Formalism::Ket => {
                let mut joint: Vec<Complex<S>> = vec![cplx(1.0, 0.0)];
                for &gid in &order {
                    if let GroupData::Ket(v) = &self.group_ref(gid).data {
                        joint = math::kron_vec(&joint, v);
                    }
                }
                if traced.is_empty() {
                    let reordered = math::permute_ket(&joint, members.len(), &perm);
                    math::overlap2(&reordered, &psi)
                } else {
                    let sigma = math::partial_trace_ket(&joint, members.len(), &traced);
                    let sigma = math::permute_dm(&sigma, kept.len(), &perm);
                    math::fidelity_dm_pure(&sigma, &psi)
                }
            }
            Formalism::DensityMatrix => {
                let mut joint: Vec<Complex<S>> = vec![cplx(1.0, 0.0)];
                let mut dim = 1usize;
                for &gid in &order {
                    let g = self.group_ref(gid);
                    if let GroupData::Dm(m) = &g.data {
                        let gdim = 1usize << g.members.len();
                        joint = math::kron_mat(&joint, dim, m, gdim);
                        dim *= gdim;
                    }
                }
                let sigma = if traced.is_empty() {
                    joint
                } else {
                    math::partial_trace_dm(&joint, members.len(), &traced)
                };
                let sigma = math::permute_dm(&sigma, kept.len(), &perm);
                math::fidelity_dm_pure(&sigma, &psi)
            }
        };
        Ok(value.max(S::zero()).min(S::one()))
    }
}
