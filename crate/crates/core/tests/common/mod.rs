//! Brute-force dense-matrix reference implementations.
//!
//! Everything here is computed the slow, obvious way — explicit full-size
//! matrices applied by naive matrix multiplication, channels written out as
//! operator sums over explicitly embedded Paulis — so the simulator's
//! optimized bit-stride kernels can be checked against independently
//! produced numbers.
//!
//! Conventions match the simulator's public contract: qubit 0 of a group is
//! the most significant bit of the basis index.

#![allow(dead_code)]

use num_complex::Complex;

pub type C = Complex<f64>;

pub fn c(re: f64, im: f64) -> C {
    Complex::new(re, im)
}

/// Dense square complex matrix, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Mat {
    pub dim: usize,
    pub a: Vec<C>,
}

impl Mat {
    pub fn zeros(dim: usize) -> Self {
        Mat {
            dim,
            a: vec![c(0.0, 0.0); dim * dim],
        }
    }

    pub fn identity(dim: usize) -> Self {
        let mut m = Mat::zeros(dim);
        for i in 0..dim {
            *m.at_mut(i, i) = c(1.0, 0.0);
        }
        m
    }

    pub fn from_rows(rows: &[&[C]]) -> Self {
        let dim = rows.len();
        let mut m = Mat::zeros(dim);
        for (i, row) in rows.iter().enumerate() {
            assert_eq!(row.len(), dim);
            for (j, v) in row.iter().enumerate() {
                *m.at_mut(i, j) = *v;
            }
        }
        m
    }

    pub fn at(&self, row: usize, col: usize) -> C {
        self.a[row * self.dim + col]
    }

    pub fn at_mut(&mut self, row: usize, col: usize) -> &mut C {
        &mut self.a[row * self.dim + col]
    }

    pub fn mul(&self, other: &Mat) -> Mat {
        assert_eq!(self.dim, other.dim);
        let mut out = Mat::zeros(self.dim);
        for i in 0..self.dim {
            for k in 0..self.dim {
                let lhs = self.at(i, k);
                if lhs == c(0.0, 0.0) {
                    continue;
                }
                for j in 0..self.dim {
                    *out.at_mut(i, j) += lhs * other.at(k, j);
                }
            }
        }
        out
    }

    pub fn dagger(&self) -> Mat {
        let mut out = Mat::zeros(self.dim);
        for i in 0..self.dim {
            for j in 0..self.dim {
                *out.at_mut(j, i) = self.at(i, j).conj();
            }
        }
        out
    }

    pub fn scaled(&self, s: f64) -> Mat {
        let mut out = self.clone();
        for v in &mut out.a {
            *v *= s;
        }
        out
    }

    pub fn add(&self, other: &Mat) -> Mat {
        assert_eq!(self.dim, other.dim);
        let mut out = self.clone();
        for (v, w) in out.a.iter_mut().zip(&other.a) {
            *v += *w;
        }
        out
    }

    pub fn kron(&self, other: &Mat) -> Mat {
        let dim = self.dim * other.dim;
        let mut out = Mat::zeros(dim);
        for i1 in 0..self.dim {
            for j1 in 0..self.dim {
                for i2 in 0..other.dim {
                    for j2 in 0..other.dim {
                        *out.at_mut(i1 * other.dim + i2, j1 * other.dim + j2) =
                            self.at(i1, j1) * other.at(i2, j2);
                    }
                }
            }
        }
        out
    }

    pub fn matvec(&self, v: &[C]) -> Vec<C> {
        assert_eq!(v.len(), self.dim);
        let mut out = vec![c(0.0, 0.0); self.dim];
        for (i, o) in out.iter_mut().enumerate() {
            for (j, x) in v.iter().enumerate() {
                *o += self.at(i, j) * *x;
            }
        }
        out
    }

    pub fn trace(&self) -> C {
        (0..self.dim).map(|i| self.at(i, i)).sum()
    }

    /// Largest absolute entry-wise difference.
    pub fn max_diff(&self, other: &Mat) -> f64 {
        assert_eq!(self.dim, other.dim);
        self.a
            .iter()
            .zip(&other.a)
            .map(|(x, y)| (x - y).norm())
            .fold(0.0, f64::max)
    }
}

pub fn vec_max_diff(a: &[C], b: &[C]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).norm())
        .fold(0.0, f64::max)
}

/// |psi><psi| as a dense matrix.
pub fn outer(v: &[C]) -> Mat {
    let mut m = Mat::zeros(v.len());
    for i in 0..v.len() {
        for j in 0..v.len() {
            *m.at_mut(i, j) = v[i] * v[j].conj();
        }
    }
    m
}

pub fn pauli(which: usize) -> Mat {
    let o = c(0.0, 0.0);
    let l = c(1.0, 0.0);
    match which {
        0 => Mat::from_rows(&[&[l, o], &[o, l]]),
        1 => Mat::from_rows(&[&[o, l], &[l, o]]),
        2 => Mat::from_rows(&[&[o, c(0.0, -1.0)], &[c(0.0, 1.0), o]]),
        3 => Mat::from_rows(&[&[l, o], &[o, c(-1.0, 0.0)]]),
        _ => panic!("pauli index {which}"),
    }
}

/// Embed a k-qubit gate acting on `targets` (in gate order, qubit 0 = MSB of
/// the gate's own index space) into an n-qubit operator, by explicit
/// basis-index surgery: entry (row, col) is the gate entry between the
/// target-bit patterns, and zero unless all non-target bits agree.
pub fn embed(gate: &Mat, targets: &[usize], n: usize) -> Mat {
    let k = targets.len();
    assert_eq!(gate.dim, 1 << k);
    let dim = 1usize << n;
    let bit_of = |index: usize, member: usize| (index >> (n - 1 - member)) & 1;
    let gate_index = |index: usize| -> usize {
        let mut g = 0usize;
        for (pos, &t) in targets.iter().enumerate() {
            g |= bit_of(index, t) << (k - 1 - pos);
        }
        g
    };
    let mut out = Mat::zeros(dim);
    for row in 0..dim {
        for col in 0..dim {
            let mut rest_agree = true;
            for m in 0..n {
                if !targets.contains(&m) && bit_of(row, m) != bit_of(col, m) {
                    rest_agree = false;
                    break;
                }
            }
            if rest_agree {
                *out.at_mut(row, col) = gate.at(gate_index(row), gate_index(col));
            }
        }
    }
    out
}

/// The k-qubit depolarizing channel on `targets` of an n-qubit density
/// matrix, written out as the uniform Pauli mixture:
/// rho -> (1-p) rho + p/4^k * sum_P (P rho P†) over all 4^k Pauli strings.
pub fn depolarize(rho: &Mat, targets: &[usize], n: usize, p: f64) -> Mat {
    let k = targets.len();
    let strings = 4usize.pow(k as u32);
    let mut mix = Mat::zeros(rho.dim);
    for s in 0..strings {
        let mut op = Mat::identity(1);
        let mut digits = s;
        for _ in 0..k {
            op = op.kron(&pauli(digits % 4));
            digits /= 4;
        }
        let full = embed(&op, targets, n);
        mix = mix.add(&full.mul(rho).mul(&full.dagger()));
    }
    rho.scaled(1.0 - p).add(&mix.scaled(p / strings as f64))
}

/// Idle depolarizing probability after `delta_ns` at `rate_hz`:
/// p = 1 - exp(-rate * t_seconds).
pub fn idle_prob(rate_hz: f64, delta_ns: f64) -> f64 {
    1.0 - (-rate_hz * delta_ns * 1e-9).exp()
}

/// The four Bell states as 4-vectors (qubit 0 = MSB).
pub fn bell(which: usize) -> Vec<C> {
    let r = std::f64::consts::FRAC_1_SQRT_2;
    let z = c(0.0, 0.0);
    let p = c(r, 0.0);
    let m = c(-r, 0.0);
    match which {
        0 => vec![p, z, z, p], // (|00> + |11>)/sqrt2
        1 => vec![p, z, z, m], // (|00> - |11>)/sqrt2
        2 => vec![z, p, p, z], // (|01> + |10>)/sqrt2
        3 => vec![z, p, m, z], // (|01> - |10>)/sqrt2
        _ => panic!("bell index {which}"),
    }
}

/// Werner state of fidelity F to the first Bell state.
pub fn werner(f: f64) -> Mat {
    let mut rho = outer(&bell(0)).scaled(f);
    for k in 1..4 {
        rho = rho.add(&outer(&bell(k)).scaled((1.0 - f) / 3.0));
    }
    rho
}

/// <psi| rho |psi>.
pub fn fidelity_dm(rho: &Mat, psi: &[C]) -> f64 {
    let mut acc = c(0.0, 0.0);
    for i in 0..rho.dim {
        for j in 0..rho.dim {
            acc += psi[i].conj() * rho.at(i, j) * psi[j];
        }
    }
    acc.re
}

/// |<psi|phi>|^2.
pub fn fidelity_ket(phi: &[C], psi: &[C]) -> f64 {
    let mut acc = c(0.0, 0.0);
    for (a, b) in psi.iter().zip(phi) {
        acc += a.conj() * b;
    }
    acc.norm_sqr()
}

/// Gate matrices by name, matching the simulator's published conventions.
pub fn gate_mat(name: &str, params: &[f64]) -> Mat {
    let z = c(0.0, 0.0);
    let l = c(1.0, 0.0);
    let r = std::f64::consts::FRAC_1_SQRT_2;
    match name {
        "H" => Mat::from_rows(&[&[c(r, 0.0), c(r, 0.0)], &[c(r, 0.0), c(-r, 0.0)]]),
        "X" => pauli(1),
        "Y" => pauli(2),
        "Z" => pauli(3),
        "S" => Mat::from_rows(&[&[l, z], &[z, c(0.0, 1.0)]]),
        "T" => Mat::from_rows(&[&[l, z], &[z, C::from_polar(1.0, std::f64::consts::FRAC_PI_4)]]),
        "U" => {
            // U(theta, phi, lambda), the standard three-Euler-angle gate.
            let (th, ph, la) = (params[0], params[1], params[2]);
            let (ct, st) = ((th / 2.0).cos(), (th / 2.0).sin());
            Mat::from_rows(&[
                &[c(ct, 0.0), -C::from_polar(st, la)],
                &[C::from_polar(st, ph), C::from_polar(ct, ph + la)],
            ])
        }
        "CNOT" => Mat::from_rows(&[
            &[l, z, z, z],
            &[z, l, z, z],
            &[z, z, z, l],
            &[z, z, l, z],
        ]),
        "CZ" => Mat::from_rows(&[
            &[l, z, z, z],
            &[z, l, z, z],
            &[z, z, l, z],
            &[z, z, z, c(-1.0, 0.0)],
        ]),
        "SWAP" => Mat::from_rows(&[
            &[l, z, z, z],
            &[z, z, l, z],
            &[z, l, z, z],
            &[z, z, z, l],
        ]),
        other => panic!("no oracle matrix for gate {other}"),
    }
}

/// Deterministic pseudo-random numbers for oracle case generation, kept
/// separate from the simulator's RNG machinery on purpose (splitmix64).
pub struct CaseRng(u64);

impl CaseRng {
    pub fn new(seed: u64) -> Self {
        CaseRng(seed)
    }

    pub fn next_u64(&mut self) -> u64 {
        self.0 = self.0.wrapping_add(0x9e3779b97f4a7c15);
        let mut z = self.0;
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
        z ^ (z >> 31)
    }

    /// Uniform in [0, 1).
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 / (1u64 << 53) as f64
    }

    pub fn below(&mut self, n: usize) -> usize {
        (self.next_u64() % n as u64) as usize
    }

    /// A random normalized n-dimensional state vector.
    pub fn state(&mut self, dim: usize) -> Vec<C> {
        let mut v: Vec<C> = (0..dim)
            .map(|_| c(self.uniform() - 0.5, self.uniform() - 0.5))
            .collect();
        let norm = v.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt();
        for a in &mut v {
            *a /= norm;
        }
        v
    }
}

/// Reorder a ket so that member `perm[i]` of the old ordering becomes
/// member `i` of the new one (member 0 = MSB).
pub fn permute_ket(v: &[C], perm: &[usize]) -> Vec<C> {
    let n = perm.len();
    assert_eq!(v.len(), 1 << n);
    let mut out = vec![c(0.0, 0.0); v.len()];
    for (new_idx, slot) in out.iter_mut().enumerate() {
        let mut old_idx = 0usize;
        for (new_pos, &old_pos) in perm.iter().enumerate() {
            let bit = (new_idx >> (n - 1 - new_pos)) & 1;
            old_idx |= bit << (n - 1 - old_pos);
        }
        *slot = v[old_idx];
    }
    out
}

/// Reorder a density matrix the same way (rows and columns).
pub fn permute_dm(m: &Mat, perm: &[usize]) -> Mat {
    let n = perm.len();
    assert_eq!(m.dim, 1 << n);
    let old_index = |new_idx: usize| -> usize {
        let mut old = 0usize;
        for (new_pos, &old_pos) in perm.iter().enumerate() {
            let bit = (new_idx >> (n - 1 - new_pos)) & 1;
            old |= bit << (n - 1 - old_pos);
        }
        old
    };
    let mut out = Mat::zeros(m.dim);
    for r in 0..m.dim {
        for col in 0..m.dim {
            *out.at_mut(r, col) = m.at(old_index(r), old_index(col));
        }
    }
    out
}

/// Full-pipeline checks of the remote-gate schemes: every scheme must
/// realize the same ideal CNOT on arbitrary product inputs.
pub mod schemes {
    use super::*;
    use dqsim::circuit::{DistCircuit, DistOp, Operand, Scheme};
    use dqsim::compiler::compile;
    use dqsim::hardware::{build_dqc, ConnectionConfig, DqcNetwork, QpuConfig};
    use dqsim::qstate::{Formalism, GateSpec, PairSource};
    use dqsim::runtime::{make_fidelity_collector, run_master, RunSpec};
    use dqsim::Amplitude;

    fn op(pos: usize, node: usize) -> Operand {
        Operand {
            pos,
            node: format!("node_{node}"),
        }
    }

    /// Two linked QPUs with room for every scheme (two comm slots and a
    /// spare processing position on each side).
    pub fn two_node_network(comm_rate_hz: f64, proc_rate_hz: f64) -> DqcNetwork {
        build_dqc(
            2,
            &[(0, 1)],
            &[(0, 1)],
            QpuConfig {
                num_positions: 5,
                num_comm_qubits: 2,
                single_qubit_gate_time: 135e3,
                two_qubit_gate_time: 600e3,
                measurement_time: 6e6,
                single_qubit_gate_error_prob: 0.0,
                p_depolar_error_cnot: 0.0,
                meas_error_prob: 0.0,
                comm_qubit_depolar_rate: comm_rate_hz,
                proc_qubit_depolar_rate: proc_rate_hz,
            },
            ConnectionConfig {
                delay_ns: 1e9 / 182.0,
                source: PairSource::Werner(1.0),
            },
            0.0,
        )
        .unwrap()
    }

    /// Remote CNOT on a random product input via `scheme`; returns the
    /// scored fidelity against the dense-oracle prediction.
    pub fn remote_cnot_fidelity(
        network: &DqcNetwork,
        scheme: Scheme,
        ctrl_angles: (f64, f64, f64),
        tgt_angles: (f64, f64, f64),
    ) -> f64 {
        let circuit = DistCircuit {
            ops: vec![
                DistOp::Init {
                    operands: vec![op(2, 0)],
                },
                DistOp::Init {
                    operands: vec![op(2, 1)],
                },
                DistOp::Gate {
                    gate: GateSpec::U(ctrl_angles.0, ctrl_angles.1, ctrl_angles.2),
                    operands: vec![op(2, 0)],
                    scheme: None,
                },
                DistOp::Gate {
                    gate: GateSpec::U(tgt_angles.0, tgt_angles.1, tgt_angles.2),
                    operands: vec![op(2, 1)],
                    scheme: None,
                },
                DistOp::Gate {
                    gate: GateSpec::Cnot,
                    operands: vec![op(2, 0), op(2, 1)],
                    scheme: Some(scheme),
                },
            ],
        };
        let prog = compile(&circuit, network, scheme).unwrap();
        let uc = gate_mat(
            "U",
            &[ctrl_angles.0, ctrl_angles.1, ctrl_angles.2],
        );
        let ut = gate_mat("U", &[tgt_angles.0, tgt_angles.1, tgt_angles.2]);
        let zero = vec![c(1.0, 0.0), c(0.0, 0.0)];
        let mut ket = vec![c(0.0, 0.0); 4];
        let (a, b) = (uc.matvec(&zero), ut.matvec(&zero));
        for i in 0..2 {
            for j in 0..2 {
                ket[i * 2 + j] = a[i] * b[j];
            }
        }
        let ket = gate_mat("CNOT", &[]).matvec(&ket);
        let desired: Vec<Amplitude> = ket.iter().map(|v| Amplitude::new(v.re, v.im)).collect();
        let collector = make_fidelity_collector(vec![(0, 2), (1, 2)], desired).unwrap();
        let spec = RunSpec::new(Formalism::DensityMatrix, 17);
        let out = run_master(&prog, network, Some(&collector), &spec).unwrap();
        assert_eq!(out.leaked_comm, 0, "comm slots leaked under {scheme:?}");
        out.fidelity.unwrap()
    }

    /// Run `inputs` random product states through all four schemes on
    /// noiseless hardware; returns (cases, worst infidelity).
    pub fn equivalence_cases(inputs: usize) -> (usize, f64) {
        let network = two_node_network(0.0, 0.0);
        let mut rng = CaseRng::new(0x5eed_0005);
        let mut worst = 0.0f64;
        let mut cases = 0;
        for _ in 0..inputs {
            let ctrl = (
                rng.uniform() * std::f64::consts::PI,
                (rng.uniform() - 0.5) * 4.0,
                (rng.uniform() - 0.5) * 4.0,
            );
            let tgt = (
                rng.uniform() * std::f64::consts::PI,
                (rng.uniform() - 0.5) * 4.0,
                (rng.uniform() - 0.5) * 4.0,
            );
            for scheme in [Scheme::Cat, Scheme::Tp1, Scheme::Tp2, Scheme::TpSafe] {
                let f = remote_cnot_fidelity(&network, scheme, ctrl, tgt);
                worst = worst.max(1.0 - f);
                cases += 1;
            }
        }
        (cases, worst)
    }
}

/// Randomized comparisons of the simulator against the dense oracle. Each
/// function runs `count` independent cases and returns the largest absolute
/// deviation it saw; the caller asserts the tolerance.
pub mod cases {
    use super::*;
    use dqsim::qstate::{Formalism, GateSpec, PairSource, QubitId, StateSnapshot};
    use dqsim::{SimTime, StateStore};
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    /// A random gate, returned both as the simulator's spec and the
    /// oracle's dense matrix with its target list.
    fn random_gate(rng: &mut CaseRng, n: usize) -> (GateSpec, Mat, Vec<usize>) {
        if n >= 2 && rng.below(3) == 0 {
            let a = rng.below(n);
            let mut b = rng.below(n);
            while b == a {
                b = rng.below(n);
            }
            match rng.below(3) {
                0 => (GateSpec::Cnot, gate_mat("CNOT", &[]), vec![a, b]),
                1 => (GateSpec::Cz, gate_mat("CZ", &[]), vec![a, b]),
                _ => (GateSpec::Swap, gate_mat("SWAP", &[]), vec![a, b]),
            }
        } else {
            let t = rng.below(n);
            let th = rng.uniform() * std::f64::consts::PI;
            let ph = (rng.uniform() - 0.5) * 4.0;
            let la = (rng.uniform() - 0.5) * 4.0;
            (
                GateSpec::U(th, ph, la),
                gate_mat("U", &[th, ph, la]),
                vec![t],
            )
        }
    }

    /// Prepare a random n-qubit state in both the store and the oracle,
    /// ending with a CNOT chain so every qubit shares one group. Returns
    /// the store, its qubit ids, and the oracle ket.
    fn prepare(
        rng: &mut CaseRng,
        n: usize,
        formalism: Formalism,
        depth: usize,
    ) -> (StateStore, Vec<QubitId>, Vec<C>) {
        let mut store = StateStore::new(formalism);
        let qs: Vec<QubitId> = (0..n)
            .map(|_| store.init_qubit(0.0, SimTime::ZERO))
            .collect();
        let mut ket = vec![c(0.0, 0.0); 1 << n];
        ket[0] = c(1.0, 0.0);
        for _ in 0..depth {
            let (spec, mat, targets) = random_gate(rng, n);
            let ids: Vec<QubitId> = targets.iter().map(|&t| qs[t]).collect();
            store.apply_unitary(spec, &ids).unwrap();
            ket = embed(&mat, &targets, n).matvec(&ket);
        }
        for i in 0..n.saturating_sub(1) {
            store.apply_unitary(GateSpec::Cnot, &[qs[i], qs[i + 1]]).unwrap();
            ket = embed(&gate_mat("CNOT", &[]), &[i, i + 1], n).matvec(&ket);
        }
        (store, qs, ket)
    }

    /// Map the oracle state into the snapshot's member order and return the
    /// largest deviation from the snapshot.
    fn compare_snapshot(
        store: &StateStore,
        qs: &[QubitId],
        oracle_ket: &[C],
        oracle_dm: Option<&Mat>,
    ) -> f64 {
        let position = |id: QubitId| qs.iter().position(|&q| q == id).unwrap();
        match store.snapshot(qs[0]).unwrap() {
            StateSnapshot::Ket {
                members,
                amplitudes,
            } => {
                assert_eq!(members.len(), qs.len(), "all qubits share one group");
                let perm: Vec<usize> = members.iter().map(|&m| position(m)).collect();
                let expect = permute_ket(oracle_ket, &perm);
                // Global phase is physically meaningless; align on the
                // largest amplitude before comparing.
                let pivot = expect
                    .iter()
                    .enumerate()
                    .max_by(|a, b| a.1.norm().total_cmp(&b.1.norm()))
                    .map(|(i, _)| i)
                    .unwrap();
                let phase = amplitudes[pivot] / expect[pivot];
                let aligned: Vec<C> = expect.iter().map(|a| a * phase).collect();
                vec_max_diff(&amplitudes, &aligned)
            }
            StateSnapshot::Dm { members, matrix } => {
                assert_eq!(members.len(), qs.len(), "all qubits share one group");
                let perm: Vec<usize> = members.iter().map(|&m| position(m)).collect();
                let oracle = match oracle_dm {
                    Some(m) => m.clone(),
                    None => outer(oracle_ket),
                };
                let expect = permute_dm(&oracle, &perm);
                let got = Mat {
                    dim: 1 << members.len(),
                    a: matrix,
                };
                got.max_diff(&expect)
            }
        }
    }

    /// Random circuits applied through the store vs dense matrix algebra.
    pub fn unitary_cases(count: usize) -> (usize, f64) {
        let mut rng = CaseRng::new(0x5eed_0001);
        let mut worst = 0.0f64;
        for case in 0..count {
            let n = 1 + case % 3;
            let formalism = if case % 2 == 0 {
                Formalism::Ket
            } else {
                Formalism::DensityMatrix
            };
            let (store, qs, ket) = prepare(&mut rng, n, formalism, 5);
            worst = worst.max(compare_snapshot(&store, &qs, &ket, None));
        }
        (count, worst)
    }

    /// The depolarizing channel vs the explicit Pauli-string sum.
    pub fn depolarizing_cases(count: usize) -> (usize, f64) {
        let mut rng = CaseRng::new(0x5eed_0002);
        let mut chacha = ChaCha12Rng::seed_from_u64(9);
        let mut worst = 0.0f64;
        for case in 0..count {
            let n = 1 + case % 3;
            let (mut store, qs, ket) = prepare(&mut rng, n, Formalism::DensityMatrix, 4);
            let k = 1 + rng.below(n.min(2));
            let mut targets: Vec<usize> = (0..n).collect();
            for i in (1..targets.len()).rev() {
                targets.swap(i, rng.below(i + 1));
            }
            targets.truncate(k);
            let p = rng.uniform();
            let ids: Vec<QubitId> = targets.iter().map(|&t| qs[t]).collect();
            store.apply_depolarizing(&ids, p, &mut chacha).unwrap();
            let oracle = depolarize(&outer(&ket), &targets, n, p);
            worst = worst.max(compare_snapshot(&store, &qs, &ket, Some(&oracle)));
        }
        (count, worst)
    }

    /// Idle decoherence vs `1 - exp(-rate * t)` fed into the dense channel.
    pub fn idle_cases(count: usize) -> (usize, f64) {
        let mut rng = CaseRng::new(0x5eed_0003);
        let mut chacha = ChaCha12Rng::seed_from_u64(10);
        let mut worst = 0.0f64;
        for case in 0..count {
            let n = 1 + case % 2;
            let (mut store, qs, ket) = prepare(&mut rng, n, Formalism::DensityMatrix, 3);
            let rate = rng.uniform() * 10.0;
            let dt = rng.uniform() * 2e9;
            let target = rng.below(n);
            store.set_rate(qs[target], rate).unwrap();
            store
                .catch_up(qs[target], SimTime::ZERO.plus_ns(dt), &mut chacha)
                .unwrap();
            let p = idle_prob(rate, dt);
            let oracle = depolarize(&outer(&ket), &[target], n, p);
            worst = worst.max(compare_snapshot(&store, &qs, &ket, Some(&oracle)));
        }
        (count, worst)
    }

    /// Werner pair sources vs the explicit Bell-basis mixture.
    pub fn werner_cases(count: usize) -> (usize, f64) {
        let mut rng = CaseRng::new(0x5eed_0004);
        let mut chacha = ChaCha12Rng::seed_from_u64(11);
        let mut worst = 0.0f64;
        for _ in 0..count {
            let f = rng.uniform();
            let mut store = StateStore::new(Formalism::DensityMatrix);
            let (qa, qb) = store
                .create_pair(
                    &PairSource::Werner(f),
                    (0.0, 0.0),
                    SimTime::ZERO,
                    &mut chacha,
                )
                .unwrap();
            let StateSnapshot::Dm { members, matrix } = store.snapshot(qa).unwrap() else {
                panic!("density-matrix snapshot expected");
            };
            assert_eq!(members, vec![qa, qb]);
            let got = Mat { dim: 4, a: matrix };
            worst = worst.max(got.max_diff(&werner(f)));
            // The scored fidelity to the first Bell state must equal F.
            let bell_amps: Vec<dqsim::Amplitude> = bell(0)
                .iter()
                .map(|a| dqsim::Amplitude::new(a.re, a.im))
                .collect();
            let scored = store.fidelity(&[qa, qb], &bell_amps).unwrap();
            worst = worst.max((scored - f).abs());
        }
        (count, worst)
    }
}
