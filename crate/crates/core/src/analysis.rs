//! Error analysis of variational ensembles against the broadened
//! microcanonical ensemble: diagonal and off-diagonal contributions,
//! truncated operators, scrambled mean-square estimators, reduced density
//! matrices, trace distances and entanglement entropies.

use faer::Mat;
use rand::seq::index::sample;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::circuit::{prepare_ansatz_state, StateVector};
use crate::error::{Error, Result};
use crate::fit;
use crate::model::{site_bit, Observable, RealOperator};
use crate::spectral::{self, BroadenedEnsemble, SmoothEthFit, Spectrum};
use crate::vqa::VariationalRun;

/// The states of an ensemble `ρ_R = (1/R) Σ_r |ψ_r⟩⟨ψ_r|`, optionally with
/// their eigenbasis coefficients `⟨E|ψ_r⟩`.
#[derive(Clone, Debug)]
pub struct EnsembleView {
    n_sites: usize,
    states: Vec<Vec<f64>>,
    coefficients: Option<Vec<Vec<f64>>>,
}

impl EnsembleView {
    pub fn from_states(states: Vec<StateVector>) -> Result<Self> {
        let n_sites = states
            .first()
            .map(StateVector::n_sites)
            .ok_or_else(|| Error::InvalidArgument("empty ensemble".into()))?;
        if let Some(s) = states.iter().find(|s| s.n_sites() != n_sites) {
            return Err(Error::DimensionMismatch {
                expected: n_sites,
                actual: s.n_sites(),
            });
        }
        Ok(Self {
            n_sites,
            states: states.into_iter().map(StateVector::into_amplitudes).collect(),
            coefficients: None,
        })
    }

    /// Rebuilds every state from its seed and converged angles.
    pub fn from_runs(runs: &[VariationalRun]) -> Result<Self> {
        let states = runs
            .iter()
            .map(|r| prepare_ansatz_state(&r.seed.state(), &r.params))
            .collect::<Result<Vec<_>>>()?;
        Self::from_states(states)
    }

    /// Caches `Vᵀψ_r` for every state.
    pub fn with_eigenbasis(mut self, spec: &Spectrum) -> Result<Self> {
        if spec.n_sites() != self.n_sites {
            return Err(Error::DimensionMismatch {
                expected: self.n_sites,
                actual: spec.n_sites(),
            });
        }
        let dim = spec.dim();
        let v = faer::MatRef::from_column_major_slice(spec.basis_column_major(), dim, dim);
        let psi = Mat::from_fn(dim, self.states.len(), |i, r| self.states[r][i]);
        let c = v.transpose() * &psi;
        self.coefficients = Some(
            (0..self.states.len())
                .map(|r| (0..dim).map(|i| c[(i, r)]).collect())
                .collect(),
        );
        Ok(self)
    }

    pub fn n_sites(&self) -> usize {
        self.n_sites
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn state(&self, r: usize) -> &[f64] {
        &self.states[r]
    }

    pub fn coefficients(&self) -> Result<&[Vec<f64>]> {
        self.coefficients
            .as_deref()
            .ok_or_else(|| Error::InvalidArgument("ensemble has no eigenbasis coefficients".into()))
    }

    /// The sub-ensemble of the given members.
    pub fn subset(&self, members: &[usize]) -> Self {
        Self {
            n_sites: self.n_sites,
            states: members.iter().map(|&r| self.states[r].clone()).collect(),
            coefficients: self
                .coefficients
                .as_ref()
                .map(|c| members.iter().map(|&r| c[r].clone()).collect()),
        }
    }

    /// The first `count` members.
    pub fn prefix(&self, count: usize) -> Self {
        let members: Vec<usize> = (0..count.min(self.len())).collect();
        self.subset(&members)
    }

    pub fn mean_energy(&self, h: &RealOperator) -> f64 {
        self.states.iter().map(|s| h.expectation(s)).sum::<f64>() / self.len() as f64
    }
}

/// `(1/R) Σ_r ⟨ψ_r|A|ψ_r⟩`.
pub fn ensemble_estimate(view: &EnsembleView, a: &Observable) -> Result<f64> {
    let op = a.compile()?;
    Ok(per_state_expectations(view, &op).iter().sum::<f64>() / view.len() as f64)
}

pub fn per_state_expectations(view: &EnsembleView, op: &RealOperator) -> Vec<f64> {
    view.states.iter().map(|s| op.expectation(s)).collect()
}

/// `ρ_R(E) = (1/R) Σ_r |⟨E|ψ_r⟩|²`.
pub fn diagonal_ensemble(view: &EnsembleView) -> Result<Vec<f64>> {
    let coeffs = view.coefficients()?;
    let mut rho = vec![0.0; coeffs[0].len()];
    for c in coeffs {
        for (p, x) in rho.iter_mut().zip(c) {
            *p += x * x;
        }
    }
    let r = view.len() as f64;
    rho.iter_mut().for_each(|p| *p /= r);
    Ok(rho)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaussianFit {
    pub mean: f64,
    pub width: f64,
}

/// Least-squares fit of normalized Gaussian weights `G_σ(E − μ)/D_σ(μ)` to a
/// diagonal ensemble, on the raw per-eigenstate values.
pub fn fit_diagonal_gaussian(rho: &[f64], energies: &[f64]) -> Result<GaussianFit> {
    if rho.len() != energies.len() {
        return Err(Error::DimensionMismatch {
            expected: energies.len(),
            actual: rho.len(),
        });
    }
    let mass: f64 = rho.iter().sum();
    let peak = rho.iter().cloned().fold(0.0f64, f64::max);
    if !(mass > 0.0) || !(peak > 0.0) {
        return Err(Error::FitFailed("diagonal ensemble carries no weight".into()));
    }
    let mean = spectral::weighted_mean(rho, energies) / mass;
    let var = rho
        .iter()
        .zip(energies)
        .map(|(w, e)| w * (e - mean).powi(2))
        .sum::<f64>()
        / mass;
    if !(var > 0.0) {
        return Err(Error::FitFailed("diagonal ensemble is a single level".into()));
    }
    let resid = |p: &[f64]| -> Option<Vec<f64>> {
        if !(p[1] > 0.0) {
            return None;
        }
        let w = spectral::gaussian_weights(energies, p[0], p[1]);
        Some(w.iter().zip(rho).map(|(m, r)| (m - r) / peak).collect())
    };
    let out = fit::levenberg_marquardt(resid, &[mean, var.sqrt()], 500)?;
    Ok(GaussianFit {
        mean: out.params[0],
        width: out.params[1],
    })
}

/// `|Σ_E ⟨E|A|E⟩ (w_E − ρ_R(E))|`.
pub fn diag_error_from(diag_a: &[f64], rho_r: &[f64], mc: &BroadenedEnsemble) -> f64 {
    diag_a
        .iter()
        .zip(rho_r)
        .zip(&mc.weights)
        .map(|((a, r), w)| a * (w - r))
        .sum::<f64>()
        .abs()
}

pub fn diag_error(view: &EnsembleView, spec: &Spectrum, a: &Observable, mc: &BroadenedEnsemble) -> Result<f64> {
    let diag = spec.diagonal_elements(&a.compile()?);
    Ok(diag_error_from(&diag, &diagonal_ensemble(view)?, mc))
}

/// `|a′(λ/N) (tr[ρ_R(H − λ)] − tr[ρ_mc(H − λ)])|`, with the ensemble's
/// first moment given as its mean energy.
pub fn chi_r(mean_energy: f64, fit: &SmoothEthFit, target: f64, n_sites: usize, energies: &[f64], mc: &BroadenedEnsemble) -> f64 {
    let slope = fit.derivative(target / n_sites as f64);
    let mismatch = (mean_energy - target) - mc.moment(energies, target, 1);
    (slope * mismatch).abs()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Flavor {
    /// Full spectrum, diagonal removed.
    Hat,
    /// Restricted to `|E − λ| ≤ sδ`, diagonal removed.
    Tilde,
}

/// An observable in a block of the eigenbasis with its diagonal removed.
#[derive(Clone, Debug)]
pub struct TruncatedOperator {
    pub label: String,
    pub flavor: Flavor,
    pub center: f64,
    /// `sδ` for the windowed flavor.
    pub half_width: Option<f64>,
    /// First eigenstate index of the block.
    pub offset: usize,
    /// Row-major symmetric block of size `len × len`.
    pub matrix: Vec<f64>,
    pub len: usize,
    /// `⟨E|A|E⟩` over the block, kept for the exact identity.
    pub diagonal: Vec<f64>,
    operator: RealOperator,
}

impl TruncatedOperator {
    pub fn entry(&self, i: usize, j: usize) -> f64 {
        self.matrix[i * self.len + j]
    }

    pub fn trace(&self) -> f64 {
        (0..self.len).map(|i| self.entry(i, i)).sum()
    }

    pub fn eigenvalues(&self) -> Result<Vec<f64>> {
        spectral::symmetric_eigenvalues(&self.as_mat())
    }

    /// Largest singular value, from the symmetric eigenvalues.
    pub fn largest_singular_value(&self) -> Result<f64> {
        let ev = self.eigenvalues()?;
        Ok(ev.first().map_or(0.0, |a| a.abs()).max(ev.last().map_or(0.0, |b| b.abs())))
    }

    fn as_mat(&self) -> Mat<f64> {
        Mat::from_fn(self.len, self.len, |i, j| self.entry(i, j))
    }

    /// `cᵀ M c` over the block.
    pub fn quadratic_form(&self, coefficients: &[f64]) -> f64 {
        let c = &coefficients[self.offset..self.offset + self.len];
        let mut acc = 0.0;
        for i in 0..self.len {
            let row = &self.matrix[i * self.len..(i + 1) * self.len];
            acc += c[i] * spectral::dot(row, c);
        }
        acc
    }
}

/// Rotates `A` into the eigenbasis (whole spectrum or the window
/// `|E − λ| ≤ sδ`) and deletes the diagonal.
pub fn build_truncated(a: &Observable, spec: &Spectrum, center: f64, window: f64, s: f64, flavor: Flavor) -> Result<TruncatedOperator> {
    let op = a.compile()?;
    let e = spec.energies();
    let (lo, hi, half_width) = match flavor {
        Flavor::Hat => (0, spec.dim(), None),
        Flavor::Tilde => {
            if !(s > 0.0 && window > 0.0) {
                return Err(Error::InvalidArgument(format!("need s > 0 and δ > 0, got s={s}, δ={window}")));
            }
            let hw = s * window;
            let lo = e.partition_point(|&x| x < center - hw);
            let hi = e.partition_point(|&x| x <= center + hw);
            if lo >= hi {
                return Err(Error::EmptyWindow { center, half_width: hw });
            }
            (lo, hi, Some(hw))
        }
    };
    let len = hi - lo;
    let dim = spec.dim();
    let v = faer::MatRef::from_column_major_slice(spec.basis_column_major(), dim, dim).subcols(lo, len);
    let mut av = Mat::<f64>::zeros(dim, len);
    let mut buf = vec![0.0; dim];
    for j in 0..len {
        op.apply_into(spec.eigenvector(lo + j), &mut buf);
        for (i, x) in buf.iter().enumerate() {
            av[(i, j)] = *x;
        }
    }
    let m = v.transpose() * &av;
    let mut matrix = vec![0.0; len * len];
    let mut diagonal = vec![0.0; len];
    for i in 0..len {
        diagonal[i] = m[(i, i)];
        for j in i + 1..len {
            let x = 0.5 * (m[(i, j)] + m[(j, i)]);
            matrix[i * len + j] = x;
            matrix[j * len + i] = x;
        }
    }
    Ok(TruncatedOperator {
        label: a.label.clone(),
        flavor,
        center,
        half_width,
        offset: lo,
        matrix,
        len,
        diagonal,
        operator: op,
    })
}

/// Per-state off-diagonal contributions `x_r = ⟨ψ_r|Ã|ψ_r⟩`, tagged with
/// the system size so samples from several sizes can be pooled.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OffdiagSamples {
    pub n_sites: usize,
    pub flavor: Flavor,
    pub values: Vec<f64>,
}

/// For the full-spectrum flavor `x_r` is evaluated through the identity
/// `⟨ψ|A|ψ⟩ − Σ_E |⟨E|ψ⟩|² ⟨E|A|E⟩`; the windowed flavor uses the block.
pub fn offdiag_samples(view: &EnsembleView, t: &TruncatedOperator) -> Result<OffdiagSamples> {
    let coeffs = view.coefficients()?;
    let values = match t.flavor {
        Flavor::Hat => view
            .states
            .iter()
            .zip(coeffs)
            .map(|(psi, c)| {
                let diag: f64 = c.iter().zip(&t.diagonal).map(|(x, a)| x * x * a).sum();
                t.operator.expectation(psi) - diag
            })
            .collect(),
        Flavor::Tilde => coeffs.iter().map(|c| t.quadratic_form(c)).collect(),
    };
    Ok(OffdiagSamples {
        n_sites: view.n_sites,
        flavor: t.flavor,
        values,
    })
}

/// `MSE(R) = ⟨|mean of the first R samples|²⟩` over `scrambles` random
/// orderings, for `R = 1, …, len`.
pub fn scrambled_mse(samples: &[f64], scrambles: usize, seed: u64) -> Result<Vec<f64>> {
    if scrambles == 0 || samples.is_empty() {
        return Err(Error::InvalidArgument("need at least one sample and one scramble".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut acc = vec![0.0; samples.len()];
    let mut order = samples.to_vec();
    for _ in 0..scrambles {
        order.copy_from_slice(samples);
        order.shuffle(&mut rng);
        let mut sum = 0.0;
        for (k, (x, a)) in order.iter().zip(acc.iter_mut()).enumerate() {
            sum += x;
            let m = sum / (k + 1) as f64;
            *a += m * m;
        }
    }
    acc.iter_mut().for_each(|a| *a /= scrambles as f64);
    Ok(acc)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MseLaw {
    pub c: f64,
    pub sigma: f64,
}

impl MseLaw {
    pub fn value(&self, r: f64) -> f64 {
        self.sigma * self.sigma / r + self.c * self.c
    }
}

/// Fits `y(R) = σ²/R + c²` to a curve indexed from `R = 1`, least squares on
/// `ln y`.
pub fn fit_mse_law(curve: &[f64]) -> Result<MseLaw> {
    if curve.len() < 10 {
        return Err(Error::FitFailed(format!("curve has {} points, need >= 10", curve.len())));
    }
    if curve.iter().any(|y| !(*y > 0.0) || !y.is_finite()) {
        return Err(Error::FitFailed("curve must be positive and finite".into()));
    }
    let last = *curve.last().unwrap();
    let c0 = last.sqrt() * 0.5;
    let s0 = (curve[0] - c0 * c0).max(curve[0] * 0.1).sqrt();
    let resid = |p: &[f64]| -> Option<Vec<f64>> {
        let out: Vec<f64> = curve
            .iter()
            .enumerate()
            .map(|(k, y)| (p[0] * p[0] / (k + 1) as f64 + p[1] * p[1]).ln() - y.ln())
            .collect();
        out.iter().all(|v| v.is_finite()).then_some(out)
    };
    let out = fit::levenberg_marquardt(resid, &[s0, c0], 1000)?;
    let law = MseLaw {
        sigma: out.params[0].abs(),
        c: out.params[1].abs(),
    };
    if !(law.sigma > 0.0) {
        return Err(Error::FitFailed("degenerate fit: σ = 0".into()));
    }
    Ok(law)
}

/// `sqrt(mean x² − (mean x)²)`.
pub fn sigma_r(samples: &[f64]) -> Result<f64> {
    if samples.len() < 2 {
        return Err(Error::InvalidArgument("σ_R needs at least two samples".into()));
    }
    let n = samples.len() as f64;
    let m = samples.iter().sum::<f64>() / n;
    let m2 = samples.iter().map(|x| x * x).sum::<f64>() / n;
    Ok((m2 - m * m).max(0.0).sqrt())
}

/// Pointwise mean of several curves over their common range.
pub fn n_averaged_mse(curves: &[Vec<f64>]) -> Result<Vec<f64>> {
    if curves.len() < 2 {
        return Err(Error::InvalidArgument("need curves from at least two system sizes".into()));
    }
    let len = curves.iter().map(Vec::len).min().unwrap_or(0);
    Ok((0..len)
        .map(|k| curves.iter().map(|c| c[k]).sum::<f64>() / curves.len() as f64)
        .collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct IidNull {
    pub monte_carlo: f64,
    pub standard_error: f64,
    pub analytic: f64,
}

/// `E[x²]` for `x = Σ_{E≠E′} c_E c_{E′} R_{EE′}/√D` with independent
/// standard normal `R_{EE′} = R_{E′E}`, by sampling and by the closed form
/// `4 Σ_{E>E′} c_E² c_{E′}² / D`.
pub fn iid_null_mse(coefficients: &[f64], dos: f64, trials: usize, seed: u64) -> Result<IidNull> {
    if !(dos > 0.0) || trials < 2 {
        return Err(Error::InvalidArgument("need D > 0 and at least two trials".into()));
    }
    let norm: f64 = coefficients.iter().map(|c| c * c).sum();
    if (norm - 1.0).abs() > 1e-10 {
        return Err(Error::InvalidArgument(format!("coefficients have norm² {norm}, expected 1")));
    }
    let sq: Vec<f64> = coefficients.iter().map(|c| c * c).collect();
    let mut pair_sum = 0.0;
    let mut below = 0.0;
    for s in &sq {
        pair_sum += s * below;
        below += s;
    }
    let analytic = 4.0 * pair_sum / dos;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scale = 2.0 / dos.sqrt();
    let (mut m1, mut m2) = (0.0, 0.0);
    for _ in 0..trials {
        let mut x = 0.0;
        for i in 0..coefficients.len() {
            for j in 0..i {
                let r: f64 = StandardNormal.sample(&mut rng);
                x += coefficients[i] * coefficients[j] * r;
            }
        }
        let v = (scale * x).powi(2);
        m1 += v;
        m2 += v * v;
    }
    let t = trials as f64;
    let mean = m1 / t;
    let var = (m2 / t - mean * mean).max(0.0) * t / (t - 1.0);
    Ok(IidNull {
        monte_carlo: mean,
        standard_error: (var / t).sqrt(),
        analytic,
    })
}

/// Checks that `sites` is a contiguous interval of the periodic chain and
/// returns it in chain order starting from its first site.
pub fn contiguous_interval(n_sites: usize, sites: &[usize]) -> Result<Vec<usize>> {
    let mut s = sites.to_vec();
    s.sort_unstable();
    s.dedup();
    if s.len() != sites.len() || s.iter().any(|&j| j >= n_sites) {
        return Err(Error::InvalidArgument(format!("invalid subsystem {sites:?} for N = {n_sites}")));
    }
    if s.is_empty() || s.len() == n_sites {
        return Ok(s);
    }
    // the interval starts at the unique member whose predecessor is absent
    let starts: Vec<usize> = s
        .iter()
        .copied()
        .filter(|&j| !s.contains(&((j + n_sites - 1) % n_sites)))
        .collect();
    if starts.len() != 1 {
        return Err(Error::InvalidArgument(format!("subsystem {sites:?} is not contiguous")));
    }
    Ok((0..s.len()).map(|k| (starts[0] + k) % n_sites).collect())
}

/// The `k`-site interval starting at `start` (wrapping around).
pub fn interval(n_sites: usize, start: usize, k: usize) -> Vec<usize> {
    (0..k).map(|i| (start + i) % n_sites).collect()
}

/// Basis index split into (subsystem, environment) parts.
fn splitter(n_sites: usize, sites: &[usize]) -> impl Fn(usize) -> (usize, usize) {
    let sub_bits: Vec<usize> = sites.iter().map(|&j| site_bit(n_sites, j)).collect();
    let env_bits: Vec<usize> = (0..n_sites)
        .filter(|j| !sites.contains(j))
        .map(|j| site_bit(n_sites, j))
        .collect();
    move |b: usize| {
        let gather = |bits: &[usize]| {
            bits.iter()
                .fold(0usize, |acc, &m| (acc << 1) | usize::from(b & m != 0))
        };
        (gather(&sub_bits), gather(&env_bits))
    }
}

/// Adds `weight · tr_env |ψ⟩⟨ψ|` into `rho` (row-major `2^k × 2^k`).
fn accumulate_rdm(psi: &[f64], n_sites: usize, sites: &[usize], weight: f64, rho: &mut [f64]) {
    let k = sites.len();
    let dk = 1usize << k;
    let de = 1usize << (n_sites - k);
    let split = splitter(n_sites, sites);
    let mut m = vec![0.0; dk * de];
    for (b, &a) in psi.iter().enumerate() {
        let (s, e) = split(b);
        m[s * de + e] = a;
    }
    for i in 0..dk {
        let ri = &m[i * de..(i + 1) * de];
        for j in i..dk {
            let v = weight * spectral::dot(ri, &m[j * de..(j + 1) * de]);
            rho[i * dk + j] += v;
            if j != i {
                rho[j * dk + i] += v;
            }
        }
    }
}

/// Largest subsystem for which a reduced density matrix is returned.
pub const MAX_RDM_SITES: usize = 6;

/// A reduced density matrix, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct DensityMatrix {
    pub dim: usize,
    pub data: Vec<f64>,
}

impl DensityMatrix {
    pub fn entry(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.dim + j]
    }

    pub fn trace(&self) -> f64 {
        (0..self.dim).map(|i| self.entry(i, i)).sum()
    }

    pub fn purity(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum()
    }

    fn to_mat(&self) -> Mat<f64> {
        Mat::from_fn(self.dim, self.dim, |i, j| self.entry(i, j))
    }

    pub fn eigenvalues(&self) -> Result<Vec<f64>> {
        spectral::symmetric_eigenvalues(&self.to_mat())
    }

    /// `tr(ρ M)` for a row-major matrix `M` of the same size.
    pub fn expectation(&self, m: &[f64]) -> f64 {
        // tr(ρM) = Σ_ij ρ_ij M_ji, and ρ is symmetric
        spectral::dot(&self.data, m)
    }
}

/// Reduced density matrix of a weighted mixture of pure states on a
/// contiguous subsystem.
pub fn reduced_density_mixture(states: &[&[f64]], weights: &[f64], n_sites: usize, sites: &[usize]) -> Result<DensityMatrix> {
    let sites = contiguous_interval(n_sites, sites)?;
    if sites.len() > MAX_RDM_SITES {
        return Err(Error::TooLarge { n: sites.len(), limit: MAX_RDM_SITES });
    }
    if states.len() != weights.len() {
        return Err(Error::DimensionMismatch { expected: states.len(), actual: weights.len() });
    }
    let dk = 1usize << sites.len();
    let mut data = vec![0.0; dk * dk];
    for (psi, &w) in states.iter().zip(weights) {
        if psi.len() != 1 << n_sites {
            return Err(Error::DimensionMismatch { expected: 1 << n_sites, actual: psi.len() });
        }
        accumulate_rdm(psi, n_sites, &sites, w, &mut data);
    }
    Ok(DensityMatrix { dim: dk, data })
}

/// `tr_{S̄} ρ_R`.
pub fn reduced_density(view: &EnsembleView, sites: &[usize]) -> Result<DensityMatrix> {
    let states: Vec<&[f64]> = view.states.iter().map(Vec::as_slice).collect();
    let w = vec![1.0 / view.len() as f64; view.len()];
    reduced_density_mixture(&states, &w, view.n_sites, sites)
}

/// `tr_{S̄} ρ_{λ,δ}`; eigenstates with weight below `1e-12` are skipped.
pub fn reduced_density_broadened(ens: &BroadenedEnsemble, spec: &Spectrum, sites: &[usize]) -> Result<DensityMatrix> {
    let (states, weights): (Vec<&[f64]>, Vec<f64>) = ens
        .weights
        .iter()
        .enumerate()
        .filter(|(_, &w)| w >= 1e-12)
        .map(|(i, &w)| (spec.eigenvector(i), w))
        .unzip();
    reduced_density_mixture(&states, &weights, spec.n_sites(), sites)
}

/// `½ ‖ρ − ρ′‖₁`.
pub fn trace_distance(a: &DensityMatrix, b: &DensityMatrix) -> Result<f64> {
    if a.dim != b.dim {
        return Err(Error::DimensionMismatch { expected: a.dim, actual: b.dim });
    }
    let d = Mat::from_fn(a.dim, a.dim, |i, j| a.entry(i, j) - b.entry(i, j));
    let ev = spectral::symmetric_eigenvalues(&d)?;
    Ok(0.5 * ev.iter().map(|x| x.abs()).sum::<f64>())
}

fn von_neumann(eigenvalues: &[f64]) -> f64 {
    eigenvalues
        .iter()
        .filter(|&&p| p > 1e-300)
        .map(|&p| -p * p.ln())
        .sum()
}

/// Von Neumann entropy (natural log) of a contiguous subsystem of a pure
/// state. The smaller side of the cut is diagonalized.
pub fn entanglement_entropy(psi: &[f64], n_sites: usize, sites: &[usize]) -> Result<f64> {
    let sites = contiguous_interval(n_sites, sites)?;
    if psi.len() != 1 << n_sites {
        return Err(Error::DimensionMismatch { expected: 1 << n_sites, actual: psi.len() });
    }
    let side: Vec<usize> = if 2 * sites.len() <= n_sites {
        sites
    } else {
        (0..n_sites).filter(|j| !sites.contains(j)).collect()
    };
    if side.is_empty() {
        return Ok(0.0);
    }
    let dk = 1usize << side.len();
    let mut rho = vec![0.0; dk * dk];
    accumulate_rdm(psi, n_sites, &side, 1.0, &mut rho);
    let ev = spectral::symmetric_eigenvalues(&Mat::from_fn(dk, dk, |i, j| rho[i * dk + j]))?;
    Ok(von_neumann(&ev))
}

/// Mean entropy of a Haar-random pure state on a `k`-site subsystem of `N`.
pub fn page_entropy(n_sites: usize, k: usize) -> Result<f64> {
    if k > n_sites {
        return Err(Error::InvalidArgument(format!("subsystem of {k} sites in a chain of {n_sites}")));
    }
    let (mut m, mut n) = (1u64 << k, 1u64 << (n_sites - k));
    if m > n {
        std::mem::swap(&mut m, &mut n);
    }
    let harmonic: f64 = (n + 1..=m * n).map(|j| 1.0 / j as f64).sum();
    Ok(harmonic - (m - 1) as f64 / (2 * n) as f64)
}

/// `Σ_E w_E S(|E⟩)` over the subsystem, skipping weights below `1e-12`.
pub fn mc_entropy_average(ens: &BroadenedEnsemble, spec: &Spectrum, sites: &[usize]) -> Result<f64> {
    let mut acc = 0.0;
    for (i, &w) in ens.weights.iter().enumerate() {
        if w >= 1e-12 {
            acc += w * entanglement_entropy(spec.eigenvector(i), spec.n_sites(), sites)?;
        }
    }
    Ok(acc)
}

/// Mean half-chain (first `⌊N/2⌋` sites) entropy over an ensemble.
pub fn ensemble_entropy_average(view: &EnsembleView, sites: &[usize]) -> Result<f64> {
    let mut acc = 0.0;
    for s in &view.states {
        acc += entanglement_entropy(s, view.n_sites, sites)?;
    }
    Ok(acc / view.len() as f64)
}

/// `R(N) = ⌊1.5 N²⌋`.
pub fn trace_distance_ensemble_size(n_sites: usize) -> usize {
    (1.5 * (n_sites * n_sites) as f64).floor() as usize
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceDistanceStat {
    pub n_sites: usize,
    pub subsystem_size: usize,
    pub ensemble_size: usize,
    /// Mean over realizations of the subsystem-averaged distance.
    pub mean: f64,
    /// Standard deviation over realizations.
    pub std_dev: f64,
    pub realizations: Vec<f64>,
    /// Whether `T(ρ_R^S, ρ_mc^S) ≤ (1/R) Σ_r T(ρ_r^S, ρ_mc^S)` held for every
    /// subsystem of every realization.
    pub mixture_inequality_holds: bool,
}

/// Draws `realizations` random size-`ensemble_size` subsets of the pool and
/// compares their reduced states with those of `ρ_{λ,δ}` on every contiguous
/// subsystem of each requested size.
pub fn trace_distance_sweep(
    pool: &EnsembleView,
    spec: &Spectrum,
    mc: &BroadenedEnsemble,
    ensemble_size: usize,
    subsystem_sizes: &[usize],
    realizations: usize,
    seed: u64,
) -> Result<Vec<TraceDistanceStat>> {
    let n = pool.n_sites;
    if pool.len() < ensemble_size || ensemble_size == 0 {
        return Err(Error::InvalidArgument(format!(
            "pool of {} states cannot supply ensembles of {ensemble_size}",
            pool.len()
        )));
    }
    if realizations == 0 {
        return Err(Error::InvalidArgument("need at least one realization".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let subsets: Vec<Vec<usize>> = (0..realizations)
        .map(|_| sample(&mut rng, pool.len(), ensemble_size).into_vec())
        .collect();
    let mut out = Vec::new();
    for &k in subsystem_sizes {
        let starts: Vec<usize> = if k == n { vec![0] } else { (0..n).collect() };
        let mut per_real = vec![0.0; realizations];
        let mut holds = true;
        for &a in &starts {
            let sites = interval(n, a, k);
            let target = reduced_density_broadened(mc, spec, &sites)?;
            // per-state reduced states and distances, shared by all subsets
            let singles: Vec<DensityMatrix> = pool
                .states
                .iter()
                .map(|s| reduced_density_mixture(&[s], &[1.0], n, &sites))
                .collect::<Result<_>>()?;
            let single_t: Vec<f64> = singles
                .iter()
                .map(|r| trace_distance(r, &target))
                .collect::<Result<_>>()?;
            for (q, subset) in subsets.iter().enumerate() {
                let dim = target.dim;
                let mut mix = DensityMatrix { dim, data: vec![0.0; dim * dim] };
                let w = 1.0 / subset.len() as f64;
                for &r in subset {
                    for (m, x) in mix.data.iter_mut().zip(&singles[r].data) {
                        *m += w * x;
                    }
                }
                let t = trace_distance(&mix, &target)?;
                let bound = subset.iter().map(|&r| single_t[r]).sum::<f64>() * w;
                holds &= t <= bound + 1e-12;
                per_real[q] += t / starts.len() as f64;
            }
        }
        let mean = per_real.iter().sum::<f64>() / realizations as f64;
        let var = per_real.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / realizations as f64;
        out.push(TraceDistanceStat {
            n_sites: n,
            subsystem_size: k,
            ensemble_size,
            mean,
            std_dev: var.sqrt(),
            realizations: per_real,
            mixture_inequality_holds: holds,
        });
    }
    Ok(out)
}

/// Counts of values in `bins` equal-width bins over `[lo, hi]`; values
/// outside the range are dropped. Returns `(bin centre, count)` pairs.
pub fn histogram(values: &[f64], bins: usize, lo: f64, hi: f64) -> Vec<(f64, usize)> {
    let w = (hi - lo) / bins as f64;
    let mut counts = vec![0usize; bins];
    for &v in values {
        if v < lo || v > hi {
            continue;
        }
        let b = (((v - lo) / w) as usize).min(bins - 1);
        counts[b] += 1;
    }
    counts
        .into_iter()
        .enumerate()
        .map(|(b, c)| (lo + (b as f64 + 0.5) * w, c))
        .collect()
}

pub const EIGEN_HISTOGRAM_BINS: usize = 101;
pub const EIGEN_HISTOGRAM_RANGE: (f64, f64) = (-1.1, 1.1);

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{build_mfim, local_observable, HamiltonianSpec, LocalKind};

    fn bell() -> Vec<f64> {
        let h = std::f64::consts::FRAC_1_SQRT_2;
        vec![h, 0.0, 0.0, h]
    }

    #[test]
    fn page_values() {
        assert_eq!(page_entropy(5, 0).unwrap(), 0.0);
        assert!((page_entropy(2, 1).unwrap() - 1.0 / 3.0).abs() < 1e-15);
        for n in 2..10 {
            for k in 0..=n {
                assert!(page_entropy(n, k).unwrap() <= k as f64 * 2f64.ln() + 1e-12);
            }
        }
    }

    #[test]
    fn bell_pair_is_maximally_entangled() {
        let s = entanglement_entropy(&bell(), 2, &[0]).unwrap();
        assert!((s - 2f64.ln()).abs() < 1e-12);
        let r = reduced_density_mixture(&[&bell()], &[1.0], 2, &[1]).unwrap();
        assert!((r.entry(0, 0) - 0.5).abs() < 1e-15 && r.entry(0, 1).abs() < 1e-15);
    }

    #[test]
    fn product_state_is_pure_on_every_interval() {
        let psi = crate::circuit::product_state(&[0.3, 1.1, 2.0, 0.7, 2.9]);
        for k in 1..=3 {
            let r = reduced_density_mixture(&[psi.amplitudes()], &[1.0], 5, &interval(5, 3, k)).unwrap();
            assert!((r.purity() - 1.0).abs() < 1e-12);
            assert!(entanglement_entropy(psi.amplitudes(), 5, &interval(5, 4, k)).unwrap().abs() < 1e-10);
        }
    }

    #[test]
    fn contiguity() {
        assert_eq!(contiguous_interval(6, &[5, 0, 1]).unwrap(), vec![5, 0, 1]);
        assert!(contiguous_interval(6, &[0, 2]).is_err());
        assert!(contiguous_interval(6, &[1, 1]).is_err());
    }

    #[test]
    fn trace_distance_extremes() {
        let a = reduced_density_mixture(&[&[1.0, 0.0, 0.0, 0.0][..]], &[1.0], 2, &[0, 1]).unwrap();
        let b = reduced_density_mixture(&[&[0.0, 1.0, 0.0, 0.0][..]], &[1.0], 2, &[0, 1]).unwrap();
        assert!(trace_distance(&a, &a).unwrap().abs() < 1e-15);
        assert!((trace_distance(&a, &b).unwrap() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn mse_curve_basics() {
        let c = scrambled_mse(&[0.3; 12], 5, 1).unwrap();
        assert!(c.iter().all(|y| (y - 0.09).abs() < 1e-15));
        let x = [0.1, -0.4, 0.25, 0.7, -0.2];
        let c = scrambled_mse(&x, 17, 3).unwrap();
        let mean = x.iter().sum::<f64>() / 5.0;
        assert!((c[4] - mean * mean).abs() < 1e-15);
        assert_eq!(c, scrambled_mse(&x, 17, 3).unwrap());
    }

    #[test]
    fn mse_law_recovery() {
        let curve: Vec<f64> = (1..=60).map(|r| 0.16 / r as f64 + 0.0025).collect();
        let law = fit_mse_law(&curve).unwrap();
        assert!((law.c - 0.05).abs() < 1e-6 && (law.sigma - 0.4).abs() < 1e-6, "{law:?}");
        assert!(fit_mse_law(&curve[..5]).is_err());
    }

    #[test]
    fn sigma_r_basics() {
        assert_eq!(sigma_r(&[0.2; 4]).unwrap(), 0.0);
        assert!((sigma_r(&[-0.3, 0.3]).unwrap() - 0.3).abs() < 1e-15);
    }

    #[test]
    fn averaged_curves() {
        let a: Vec<f64> = (1..=10).map(|r| 2.0 / r as f64).collect();
        let b: Vec<f64> = (1..=12).map(|r| 4.0 / r as f64).collect();
        let m = n_averaged_mse(&[a.clone(), b]).unwrap();
        assert_eq!(m.len(), 10);
        for (k, v) in m.iter().enumerate() {
            assert!((v - 3.0 / (k + 1) as f64).abs() < 1e-15);
        }
        assert_eq!(n_averaged_mse(&[a.clone(), a.clone()]).unwrap(), a);
        assert!(n_averaged_mse(&[a]).is_err());
    }

    #[test]
    fn iid_null_two_levels() {
        let h = std::f64::consts::FRAC_1_SQRT_2;
        let r = iid_null_mse(&[h, h], 8.0, 1000, 0).unwrap();
        assert!((r.analytic - 1.0 / 8.0).abs() < 1e-15);
        let r2 = iid_null_mse(&[h, h], 16.0, 10, 0).unwrap();
        assert!((r2.analytic * 2.0 - r.analytic).abs() < 1e-15);
    }

    #[test]
    fn histogram_bins() {
        let h = histogram(&[-1.1, 0.0, 1.1, 5.0], 101, -1.1, 1.1);
        assert_eq!(h.len(), 101);
        assert_eq!(h.iter().map(|b| b.1).sum::<usize>(), 3);
        assert_eq!(h[50].1, 1);
    }

    #[test]
    fn truncated_operator_of_hamiltonian_vanishes() {
        let spec = HamiltonianSpec::standard(5, 1);
        let s = Spectrum::of_model(&spec).unwrap();
        let h = Observable::new("H", build_mfim(&spec).unwrap()).unwrap();
        let t = build_truncated(&h, &s, -2.0, 1.0, 3.0, Flavor::Tilde).unwrap();
        assert!(t.matrix.iter().all(|x| x.abs() < 1e-10));
        let z = local_observable(LocalKind::Z, 5).unwrap();
        let t = build_truncated(&z, &s, -2.0, 1.0, 3.0, Flavor::Tilde).unwrap();
        assert_eq!(t.trace(), 0.0);
        assert!(matches!(
            build_truncated(&z, &s, s.e_max() + 50.0, 0.1, 3.0, Flavor::Tilde),
            Err(Error::EmptyWindow { .. })
        ));
    }

    #[test]
    fn eigenstate_has_no_offdiagonal_part() {
        let spec = HamiltonianSpec::standard(5, 1);
        let s = Spectrum::of_model(&spec).unwrap();
        let e = StateVector::new(5, s.eigenvector(9).to_vec()).unwrap();
        let view = EnsembleView::from_states(vec![e]).unwrap().with_eigenbasis(&s).unwrap();
        let x = local_observable(LocalKind::X, 5).unwrap();
        for flavor in [Flavor::Hat, Flavor::Tilde] {
            let t = build_truncated(&x, &s, s.energies()[9], 1.0, 3.0, flavor).unwrap();
            assert!(offdiag_samples(&view, &t).unwrap().values[0].abs() < 1e-12);
        }
        let rho = diagonal_ensemble(&view).unwrap();
        assert!((rho[9] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn gaussian_fit_recovers_weights() {
        let energies: Vec<f64> = (0..300).map(|i| -15.0 + 0.1 * i as f64 + 0.01 * ((i * 7) % 5) as f64).collect();
        let w = spectral::gaussian_weights(&energies, -4.3, 1.2);
        let f = fit_diagonal_gaussian(&w, &energies).unwrap();
        assert!((f.mean + 4.3).abs() < 1e-6 && (f.width - 1.2).abs() < 1e-6, "{f:?}");
    }
}
