//! Real statevector simulation of the layered Y/ZY ansatz.
//!
//! One layer carries `2N` angles, stored in gate order:
//!
//! 1. bond gates `exp(iφ Y_j Z_{j+1})` on the odd bonds `j = 1, 3, …`
//!    (1-based, site `N + 1 ≡ 1`),
//! 2. bond gates on the even bonds `j = 2, 4, …`; for odd `N` this block
//!    ends with the extra gate `exp(iφ Y_1 Z_N)` joining the chain ends,
//! 3. single-site rotations `exp(iθ Y_j)` for `j = 1, …, N`.
//!
//! Gates act in that order on the state, so the single-site block is the
//! leftmost factor of the layer unitary. Every gate is real orthogonal.

use std::f64::consts::FRAC_PI_4;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{site_bit, PauliTerm, RealOperator};

/// Tag stored next to serialized angle arrays.
pub const LAYOUT_VERSION: &str = "psa-bonds-odd-even-then-y/v1";

#[derive(Clone, Debug, PartialEq)]
pub struct StateVector {
    n_sites: usize,
    amplitudes: Vec<f64>,
}

impl StateVector {
    /// Wraps amplitudes, checking the length and that the norm is 1 to 1e-10.
    pub fn new(n_sites: usize, amplitudes: Vec<f64>) -> Result<Self> {
        if amplitudes.len() != 1usize << n_sites {
            return Err(Error::DimensionMismatch {
                expected: 1 << n_sites,
                actual: amplitudes.len(),
            });
        }
        let s = Self { n_sites, amplitudes };
        if (s.norm() - 1.0).abs() > 1e-10 {
            return Err(Error::InvalidArgument(format!(
                "state is not normalized (norm {})",
                s.norm()
            )));
        }
        Ok(s)
    }

    pub fn basis(n_sites: usize, index: usize) -> Self {
        let mut amplitudes = vec![0.0; 1 << n_sites];
        amplitudes[index] = 1.0;
        Self { n_sites, amplitudes }
    }

    pub fn n_sites(&self) -> usize {
        self.n_sites
    }

    pub fn dim(&self) -> usize {
        self.amplitudes.len()
    }

    pub fn amplitudes(&self) -> &[f64] {
        &self.amplitudes
    }

    pub fn into_amplitudes(self) -> Vec<f64> {
        self.amplitudes
    }

    pub fn norm(&self) -> f64 {
        self.amplitudes.iter().map(|a| a * a).sum::<f64>().sqrt()
    }

    pub fn overlap(&self, other: &StateVector) -> f64 {
        crate::spectral::dot(&self.amplitudes, &other.amplitudes)
    }
}

/// Flat angle array for `p` layers of the ansatz.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnsatzParams {
    pub n_sites: usize,
    pub layout: String,
    pub angles: Vec<f64>,
}

impl AnsatzParams {
    pub fn zeros(n_sites: usize, layers: usize) -> Self {
        Self {
            n_sites,
            layout: LAYOUT_VERSION.to_string(),
            angles: vec![0.0; 2 * n_sites * layers],
        }
    }

    pub fn from_angles(n_sites: usize, angles: Vec<f64>) -> Result<Self> {
        if n_sites == 0 || angles.len() % (2 * n_sites) != 0 {
            return Err(Error::InvalidArgument(format!(
                "{} angles is not a whole number of {}-angle layers",
                angles.len(),
                2 * n_sites
            )));
        }
        Ok(Self {
            n_sites,
            layout: LAYOUT_VERSION.to_string(),
            angles,
        })
    }

    pub fn layers(&self) -> usize {
        self.angles.len() / (2 * self.n_sites)
    }

    pub fn layer(&self, l: usize) -> &[f64] {
        let w = 2 * self.n_sites;
        &self.angles[l * w..(l + 1) * w]
    }

    /// Appends an identity layer.
    pub fn push_zero_layer(&mut self) {
        self.angles.extend(std::iter::repeat_n(0.0, 2 * self.n_sites));
    }

    fn check_layout(&self) -> Result<()> {
        if self.layout != LAYOUT_VERSION {
            return Err(Error::InvalidArgument(format!(
                "unknown angle layout '{}', expected '{LAYOUT_VERSION}'",
                self.layout
            )));
        }
        Ok(())
    }
}

/// Single-qubit angles of a random product state and where they came from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProductStateSeed {
    pub master_seed: u64,
    pub run_index: u64,
    pub angles: Vec<f64>,
}

impl ProductStateSeed {
    /// Angles uniform on `[0, π)`, drawn from stream `run_index` of a
    /// generator keyed by `master_seed`.
    pub fn draw(n_sites: usize, master_seed: u64, run_index: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
        rng.set_stream(run_index);
        let angles = (0..n_sites)
            .map(|_| rng.random::<f64>() * std::f64::consts::PI)
            .collect();
        Self {
            master_seed,
            run_index,
            angles,
        }
    }

    pub fn state(&self) -> StateVector {
        product_state(&self.angles)
    }
}

/// `⊗_j (cos φ_j |0⟩ + sin φ_j |1⟩)`.
pub fn product_state(angles: &[f64]) -> StateVector {
    let n = angles.len();
    let mut amplitudes = vec![1.0];
    for a in angles {
        let (s, c) = a.sin_cos();
        amplitudes = amplitudes.iter().flat_map(|&v| [v * c, v * s]).collect();
    }
    StateVector { n_sites: n, amplitudes }
}

pub fn random_product_state(n_sites: usize, master_seed: u64, run_index: u64) -> Result<StateVector> {
    if n_sites < 3 {
        return Err(Error::InvalidArgument(format!("need N >= 3, got {n_sites}")));
    }
    Ok(ProductStateSeed::draw(n_sites, master_seed, run_index).state())
}

/// One gate slot of a layer, in 0-based sites.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Gate {
    /// `exp(iφ Y_y Z_z)`
    Bond { y: usize, z: usize },
    /// `exp(iθ Y_site)`
    Rotation { site: usize },
}

/// Gate slots of one layer, in application (and angle) order.
pub fn layer_gates(n_sites: usize) -> Vec<Gate> {
    let n = n_sites;
    let bond = |j: usize| Gate::Bond { y: j - 1, z: j % n };
    let mut gates: Vec<Gate> = (1..n).step_by(2).map(bond).collect();
    if n % 2 == 0 {
        gates.extend((2..=n).step_by(2).map(bond));
    } else {
        gates.extend((2..n).step_by(2).map(bond));
        gates.push(Gate::Bond { y: 0, z: n - 1 });
    }
    gates.extend((0..n).map(|site| Gate::Rotation { site }));
    debug_assert_eq!(gates.len(), 2 * n);
    gates
}

fn apply_gate(n_sites: usize, amps: &mut [f64], gate: Gate, angle: f64) {
    let (s, c) = angle.sin_cos();
    match gate {
        Gate::Bond { y, z } => {
            let by = site_bit(n_sites, y);
            let bz = site_bit(n_sites, z);
            for b0 in 0..amps.len() {
                if b0 & by != 0 {
                    continue;
                }
                let b1 = b0 | by;
                let ss = if b0 & bz != 0 { -s } else { s };
                let (p0, p1) = (amps[b0], amps[b1]);
                amps[b0] = c * p0 + ss * p1;
                amps[b1] = c * p1 - ss * p0;
            }
        }
        Gate::Rotation { site } => {
            let by = site_bit(n_sites, site);
            for b0 in 0..amps.len() {
                if b0 & by != 0 {
                    continue;
                }
                let b1 = b0 | by;
                let (p0, p1) = (amps[b0], amps[b1]);
                amps[b0] = c * p0 + s * p1;
                amps[b1] = c * p1 - s * p0;
            }
        }
    }
}

/// Applies one layer in place.
pub fn apply_layer(state: &mut StateVector, layer_angles: &[f64]) -> Result<()> {
    let n = state.n_sites;
    if layer_angles.len() != 2 * n {
        return Err(Error::DimensionMismatch {
            expected: 2 * n,
            actual: layer_angles.len(),
        });
    }
    for (g, &a) in layer_gates(n).into_iter().zip(layer_angles) {
        apply_gate(n, &mut state.amplitudes, g, a);
    }
    Ok(())
}

/// `U_p(θ)|ψ⁰⟩`.
pub fn prepare_ansatz_state(seed_state: &StateVector, params: &AnsatzParams) -> Result<StateVector> {
    params.check_layout()?;
    if params.n_sites != seed_state.n_sites {
        return Err(Error::DimensionMismatch {
            expected: seed_state.n_sites,
            actual: params.n_sites,
        });
    }
    let mut out = seed_state.clone();
    for l in 0..params.layers() {
        apply_layer(&mut out, params.layer(l))?;
    }
    Ok(out)
}

/// `Σ_k c_k ⟨ψ|P_k|ψ⟩`. Terms with an odd number of `Y` letters are purely
/// imaginary and contribute exactly zero on a real state.
pub fn expectation(state: &StateVector, terms: &[PauliTerm]) -> Result<f64> {
    let real: Vec<PauliTerm> = terms
        .iter()
        .filter(|t| t.real_phase().is_some())
        .cloned()
        .collect();
    if real.is_empty() {
        return Ok(0.0);
    }
    Ok(RealOperator::new(&real, state.n_sites)?.expectation(&state.amplitudes))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CostValues {
    /// `⟨(H − λ)²⟩`
    pub cost: f64,
    /// `⟨H²⟩ − ⟨H⟩²`
    pub variance: f64,
    /// `⟨H⟩`
    pub energy: f64,
}

/// Cost, variance and energy from one Hamiltonian action:
/// `φ = (H − λ)ψ`, `C = ⟨φ|φ⟩`, `⟨H⟩ = λ + ⟨ψ|φ⟩`.
pub fn cost_and_variance(state: &StateVector, h: &RealOperator, target: f64) -> CostValues {
    let mut phi = vec![0.0; state.dim()];
    cost_with_buffer(&state.amplitudes, h, target, &mut phi)
}

fn cost_with_buffer(psi: &[f64], h: &RealOperator, target: f64, phi: &mut [f64]) -> CostValues {
    h.apply_into(psi, phi);
    let mut cost = 0.0;
    let mut shift = 0.0;
    for (p, &a) in phi.iter_mut().zip(psi) {
        *p -= target * a;
        cost += *p * *p;
        shift += *p * a;
    }
    CostValues {
        cost,
        variance: cost - shift * shift,
        energy: target + shift,
    }
}

/// The folded-spectrum objective for a fixed seed state.
#[derive(Clone, Debug)]
pub struct CostFunction {
    seed: StateVector,
    hamiltonian: RealOperator,
    target: f64,
}

impl CostFunction {
    pub fn new(seed: StateVector, hamiltonian: RealOperator, target: f64) -> Result<Self> {
        if hamiltonian.n_sites() != seed.n_sites {
            return Err(Error::DimensionMismatch {
                expected: seed.n_sites,
                actual: hamiltonian.n_sites(),
            });
        }
        Ok(Self {
            seed,
            hamiltonian,
            target,
        })
    }

    pub fn n_sites(&self) -> usize {
        self.seed.n_sites
    }

    pub fn target(&self) -> f64 {
        self.target
    }

    pub fn seed(&self) -> &StateVector {
        &self.seed
    }

    pub fn hamiltonian(&self) -> &RealOperator {
        &self.hamiltonian
    }

    fn check(&self, angles: &[f64]) {
        assert_eq!(
            angles.len() % (2 * self.n_sites()),
            0,
            "angle count must be a multiple of 2N"
        );
    }

    pub fn state(&self, angles: &[f64]) -> StateVector {
        self.check(angles);
        let n = self.n_sites();
        let gates = layer_gates(n);
        let mut psi = self.seed.clone();
        for (k, &a) in angles.iter().enumerate() {
            apply_gate(n, &mut psi.amplitudes, gates[k % (2 * n)], a);
        }
        psi
    }

    pub fn evaluate(&self, angles: &[f64]) -> CostValues {
        cost_and_variance(&self.state(angles), &self.hamiltonian, self.target)
    }

    pub fn cost(&self, angles: &[f64]) -> f64 {
        self.evaluate(angles).cost
    }

    /// Parameter-shift gradient, `∂_k C = C(θ + π/4 e_k) − C(θ − π/4 e_k)`.
    ///
    /// The state in front of each gate is cached so that a shifted
    /// evaluation only replays the gates after it. Components are computed
    /// independently and collected in order, so the result does not depend
    /// on scheduling.
    pub fn gradient(&self, angles: &[f64]) -> Vec<f64> {
        self.check(angles);
        let n = self.n_sites();
        let gates = layer_gates(n);
        let gate_at = |k: usize| gates[k % (2 * n)];
        let mut prefixes = Vec::with_capacity(angles.len());
        let mut psi = self.seed.amplitudes.clone();
        for (k, &a) in angles.iter().enumerate() {
            prefixes.push(psi.clone());
            apply_gate(n, &mut psi, gate_at(k), a);
        }
        (0..angles.len())
            .into_par_iter()
            .map(|k| {
                let mut phi = vec![0.0; psi.len()];
                let mut shifted = |delta: f64| {
                    let mut v = prefixes[k].clone();
                    apply_gate(n, &mut v, gate_at(k), angles[k] + delta);
                    for (j, &a) in angles.iter().enumerate().skip(k + 1) {
                        apply_gate(n, &mut v, gate_at(j), a);
                    }
                    cost_with_buffer(&v, &self.hamiltonian, self.target, &mut phi).cost
                };
                shifted(FRAC_PI_4) - shifted(-FRAC_PI_4)
            })
            .collect()
    }
}

/// Parameter-shift gradient of `⟨(H − λ)²⟩` at `params`.
pub fn parameter_shift_gradient(
    seed_state: &StateVector,
    params: &AnsatzParams,
    h: &RealOperator,
    target: f64,
) -> Result<Vec<f64>> {
    params.check_layout()?;
    let f = CostFunction::new(seed_state.clone(), h.clone(), target)?;
    if params.n_sites != f.n_sites() {
        return Err(Error::DimensionMismatch {
            expected: f.n_sites(),
            actual: params.n_sites,
        });
    }
    Ok(f.gradient(&params.angles))
}
