//! Exact diagonalization and eigenbasis-side constructions: broadened
//! densities of states, Gaussian microcanonical ensembles, coarse graining
//! and the smooth diagonal-ETH fit.

use std::f64::consts::PI;

use faer::{Mat, Side};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fit;
use crate::model::{self, HamiltonianSpec, Observable, RealOperator, MAX_DENSE_SITES};

/// Full eigendecomposition of a `2^N`-dimensional real symmetric Hamiltonian.
#[derive(Clone, Debug)]
pub struct Spectrum {
    n_sites: usize,
    energies: Vec<f64>,
    // column-major, column i is the eigenvector of energies[i]
    basis: Vec<f64>,
    model_hash: [u8; 32],
}

impl Spectrum {
    pub(crate) fn from_parts(
        n_sites: usize,
        energies: Vec<f64>,
        basis: Vec<f64>,
        model_hash: [u8; 32],
    ) -> Result<Self> {
        let dim = 1usize << n_sites;
        if energies.len() != dim || basis.len() != dim * dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                actual: energies.len(),
            });
        }
        Ok(Self {
            n_sites,
            energies,
            basis,
            model_hash,
        })
    }

    /// Builds and diagonalizes the mixed-field Ising chain.
    pub fn of_model(spec: &HamiltonianSpec) -> Result<Self> {
        if spec.n_sites > MAX_DENSE_SITES {
            return Err(Error::TooLarge {
                n: spec.n_sites,
                limit: MAX_DENSE_SITES,
            });
        }
        let terms = model::build_mfim(spec)?;
        let h = model::to_dense(&terms, spec.n_sites)?;
        let mut s = exact_spectrum(&h)?;
        s.model_hash = spec.hash_bytes();
        Ok(s)
    }

    pub fn n_sites(&self) -> usize {
        self.n_sites
    }

    pub fn dim(&self) -> usize {
        self.energies.len()
    }

    pub fn energies(&self) -> &[f64] {
        &self.energies
    }

    pub fn eigenvector(&self, i: usize) -> &[f64] {
        let d = self.dim();
        &self.basis[i * d..(i + 1) * d]
    }

    pub fn basis_column_major(&self) -> &[f64] {
        &self.basis
    }

    pub fn model_hash(&self) -> &[u8; 32] {
        &self.model_hash
    }

    pub fn e_min(&self) -> f64 {
        self.energies[0]
    }

    pub fn e_max(&self) -> f64 {
        self.energies[self.dim() - 1]
    }

    /// `ΔE = E_max − E_min`.
    pub fn bandwidth(&self) -> f64 {
        self.e_max() - self.e_min()
    }

    pub fn min_level_spacing(&self) -> f64 {
        self.energies
            .windows(2)
            .map(|w| w[1] - w[0])
            .fold(f64::INFINITY, f64::min)
    }

    /// Coefficients `⟨E|ψ⟩` of a computational-basis vector.
    pub fn to_eigenbasis(&self, psi: &[f64]) -> Vec<f64> {
        assert_eq!(psi.len(), self.dim());
        (0..self.dim())
            .map(|i| dot(self.eigenvector(i), psi))
            .collect()
    }

    /// `⟨E|A|E⟩` for every eigenstate.
    pub fn diagonal_elements(&self, op: &RealOperator) -> Vec<f64> {
        (0..self.dim())
            .map(|i| op.expectation(self.eigenvector(i)))
            .collect()
    }

    /// `max_i ‖H v_i − E_i v_i‖₂`.
    pub fn max_residual(&self, op: &RealOperator) -> f64 {
        let mut hv = vec![0.0; self.dim()];
        (0..self.dim())
            .map(|i| {
                let v = self.eigenvector(i);
                op.apply_into(v, &mut hv);
                hv.iter()
                    .zip(v)
                    .map(|(a, b)| (a - self.energies[i] * b).powi(2))
                    .sum::<f64>()
                    .sqrt()
            })
            .fold(0.0, f64::max)
    }

    /// `max |(VᵀV − I)_{ij}|`.
    pub fn orthogonality_defect(&self) -> f64 {
        let d = self.dim();
        let mut worst = 0.0f64;
        for i in 0..d {
            for j in i..d {
                let g = dot(self.eigenvector(i), self.eigenvector(j));
                let want = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((g - want).abs());
            }
        }
        worst
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Dense symmetric eigendecomposition with ascending energies.
///
/// Each eigenvector's sign is fixed so that its largest-magnitude component
/// (first one on ties) is positive.
pub fn exact_spectrum(h: &Mat<f64>) -> Result<Spectrum> {
    let dim = h.nrows();
    if h.ncols() != dim || !dim.is_power_of_two() || dim < 2 {
        return Err(Error::InvalidArgument(format!(
            "expected a 2^N square matrix, got {}x{}",
            h.nrows(),
            h.ncols()
        )));
    }
    let n_sites = dim.trailing_zeros() as usize;
    if n_sites > MAX_DENSE_SITES {
        return Err(Error::TooLarge {
            n: n_sites,
            limit: MAX_DENSE_SITES,
        });
    }
    let mut scale = 0.0f64;
    let mut asym = 0.0f64;
    for j in 0..dim {
        for i in 0..dim {
            scale = scale.max(h[(i, j)].abs());
            if i > j {
                asym = asym.max((h[(i, j)] - h[(j, i)]).abs());
            }
        }
    }
    if asym > 1e-12 * scale.max(1.0) {
        return Err(Error::NotSymmetric(asym));
    }
    let (energies, basis) = symmetric_eigen(h)?;
    Ok(Spectrum {
        n_sites,
        energies,
        basis,
        model_hash: [0; 32],
    })
}

/// Eigenpairs of a symmetric matrix: ascending values and column-major
/// vectors with the sign convention of [`exact_spectrum`].
pub(crate) fn symmetric_eigen(h: &Mat<f64>) -> Result<(Vec<f64>, Vec<f64>)> {
    let dim = h.nrows();
    let evd = h
        .self_adjoint_eigen(Side::Lower)
        .map_err(|e| Error::Eigen(format!("{e:?}")))?;
    let s = evd.S().column_vector();
    let u = evd.U();
    let mut order: Vec<usize> = (0..dim).collect();
    order.sort_by(|&a, &b| s[a].total_cmp(&s[b]));
    let mut energies = Vec::with_capacity(dim);
    let mut basis = Vec::with_capacity(dim * dim);
    for &k in &order {
        energies.push(s[k]);
        let mut best = 0;
        for i in 1..dim {
            if u[(i, k)].abs() > u[(best, k)].abs() {
                best = i;
            }
        }
        let sign = if u[(best, k)] < 0.0 { -1.0 } else { 1.0 };
        basis.extend((0..dim).map(|i| sign * u[(i, k)]));
    }
    Ok((energies, basis))
}

/// Eigenvalues only, ascending.
pub(crate) fn symmetric_eigenvalues(h: &Mat<f64>) -> Result<Vec<f64>> {
    let mut v = h
        .self_adjoint_eigenvalues(Side::Lower)
        .map_err(|e| Error::Eigen(format!("{e:?}")))?;
    v.sort_by(f64::total_cmp);
    Ok(v)
}

/// Normalized Gaussian `G_w(x) = (2πw²)^{-1/2} exp(−x²/2w²)`.
#[inline]
pub fn gaussian(x: f64, width: f64) -> f64 {
    (-x * x / (2.0 * width * width)).exp() / (2.0 * PI * width * width).sqrt()
}

/// Broadened density of states `D_δ(λ) = Σ_E G_δ(E − λ)`.
pub fn broadened_dos(spec: &Spectrum, width: f64, at: f64) -> f64 {
    dos_from_energies(spec.energies(), width, at)
}

pub(crate) fn dos_from_energies(energies: &[f64], width: f64, at: f64) -> f64 {
    energies.iter().map(|&e| gaussian(e - at, width)).sum()
}

/// Gaussian fit `2^N G_Δ(E − Ē)` of the broadened density of states.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DosFit {
    /// `γ = Δ²/N`
    pub gamma: f64,
    /// `Ē`
    pub center: f64,
    pub rms_residual: f64,
}

/// Number of λ samples used by [`gaussian_dos_fit`].
pub const DOS_GRID_POINTS: usize = 201;

/// Fits the broadened density of states, sampled on 201 points over the
/// central 90% of the bandwidth, with `2^N G_Δ(E − Ē)`.
pub fn gaussian_dos_fit(spec: &Spectrum, width: f64) -> Result<DosFit> {
    if width <= 0.0 {
        return Err(Error::InvalidArgument(format!("width must be > 0, got {width}")));
    }
    let (lo, hi) = (
        spec.e_min() + 0.05 * spec.bandwidth(),
        spec.e_max() - 0.05 * spec.bandwidth(),
    );
    let grid: Vec<f64> = (0..DOS_GRID_POINTS)
        .map(|i| lo + (hi - lo) * i as f64 / (DOS_GRID_POINTS - 1) as f64)
        .collect();
    let values: Vec<f64> = grid
        .iter()
        .map(|&l| broadened_dos(spec, width, l))
        .collect();
    fit_gaussian_profile(spec.n_sites(), &grid, &values)
}

/// Least-squares fit of `2^N G_Δ(λ − Ē)` to sampled values.
pub fn fit_gaussian_profile(n_sites: usize, grid: &[f64], values: &[f64]) -> Result<DosFit> {
    let total = (1u64 << n_sites) as f64;
    let n = n_sites as f64;
    // start from the sample moments of the profile
    let mass: f64 = values.iter().sum();
    if !(mass > 0.0) {
        return Err(Error::FitFailed("density of states profile is empty".into()));
    }
    let mean = grid.iter().zip(values).map(|(x, v)| x * v).sum::<f64>() / mass;
    let var = grid
        .iter()
        .zip(values)
        .map(|(x, v)| (x - mean).powi(2) * v)
        .sum::<f64>()
        / mass;
    // work in units of the peak so residuals are O(1)
    let peak = values.iter().cloned().fold(0.0f64, f64::max);
    let resid = |p: &[f64]| -> Option<Vec<f64>> {
        let (width, center) = (p[0], p[1]);
        if !(width > 0.0) {
            return None;
        }
        Some(
            grid.iter()
                .zip(values)
                .map(|(&x, &v)| (total * gaussian(x - center, width) - v) / peak)
                .collect(),
        )
    };
    let out = fit::levenberg_marquardt(resid, &[var.sqrt(), mean], 500)?;
    let (width, center) = (out.params[0].abs(), out.params[1]);
    let rms = (2.0 * out.cost / grid.len() as f64).sqrt() * peak;
    Ok(DosFit {
        gamma: width * width / n,
        center,
        rms_residual: rms,
    })
}

/// Gaussian-weighted mixture of eigenstates: `w_E ∝ G_δ(E − λ)`.
#[derive(Clone, Debug, PartialEq)]
pub struct BroadenedEnsemble {
    pub center: f64,
    pub width: f64,
    pub weights: Vec<f64>,
}

impl BroadenedEnsemble {
    /// The `δ → 0` limit: all weight on eigenstate `index`.
    pub fn single(dim: usize, index: usize, energy: f64) -> Self {
        let mut weights = vec![0.0; dim];
        weights[index] = 1.0;
        Self {
            center: energy,
            width: 0.0,
            weights,
        }
    }

    /// `tr[ρ(H − λ)^k]` over the supplied energies.
    pub fn moment(&self, energies: &[f64], about: f64, k: i32) -> f64 {
        self.weights
            .iter()
            .zip(energies)
            .map(|(w, e)| w * (e - about).powi(k))
            .sum()
    }
}

pub fn broadened_ensemble(spec: &Spectrum, center: f64, width: f64) -> Result<BroadenedEnsemble> {
    if !(width > 0.0) {
        return Err(Error::InvalidArgument(format!("width must be > 0, got {width}")));
    }
    if !(spec.e_min()..=spec.e_max()).contains(&center) {
        return Err(Error::InvalidArgument(format!(
            "center {center} outside the spectrum [{}, {}]",
            spec.e_min(),
            spec.e_max()
        )));
    }
    Ok(BroadenedEnsemble {
        center,
        width,
        weights: gaussian_weights(spec.energies(), center, width),
    })
}

/// Normalized `G_w(E − c)` weights, evaluated relative to the nearest level
/// so they never underflow to all-zero.
pub(crate) fn gaussian_weights(energies: &[f64], center: f64, width: f64) -> Vec<f64> {
    let d_min = energies
        .iter()
        .map(|e| (e - center).abs())
        .fold(f64::INFINITY, f64::min);
    let inv = 1.0 / (2.0 * width * width);
    let mut w: Vec<f64> = energies
        .iter()
        .map(|e| (-((e - center).powi(2) - d_min * d_min) * inv).exp())
        .collect();
    let total: f64 = w.iter().sum();
    w.iter_mut().for_each(|x| *x /= total);
    w
}

pub(crate) fn weighted_mean(weights: &[f64], values: &[f64]) -> f64 {
    weights.iter().zip(values).map(|(w, v)| w * v).sum()
}

/// `Σ_E w_E ⟨E|A|E⟩`.
pub fn mc_expectation(ens: &BroadenedEnsemble, spec: &Spectrum, a: &Observable) -> Result<f64> {
    let diag = spec.diagonal_elements(&a.compile()?);
    Ok(weighted_mean(&ens.weights, &diag))
}

/// One microcanonical standard deviation of the diagonal elements.
pub fn mc_fluctuation(ens: &BroadenedEnsemble, spec: &Spectrum, a: &Observable) -> Result<f64> {
    let diag = spec.diagonal_elements(&a.compile()?);
    fluctuation_from_diagonal(&ens.weights, &diag)
}

pub(crate) fn fluctuation_from_diagonal(weights: &[f64], diag: &[f64]) -> Result<f64> {
    let mean = weighted_mean(weights, diag);
    let second: f64 = weights.iter().zip(diag).map(|(w, a)| w * a * a).sum();
    let var = second - mean * mean;
    if var < -1e-14 {
        return Err(Error::InvalidArgument(format!(
            "negative variance {var:e}: weights are not a probability distribution"
        )));
    }
    Ok(var.max(0.0).sqrt())
}

/// Replaces each entry by the mean over the `K` eigenenergies nearest to
/// `E_i` (ties to the lower index).
///
/// Near the spectral edges the window shrinks to `min(K, 2·m + 1)` levels,
/// where `m` is the number of levels on the short side of `i`, so that the
/// outermost level is left as is.
pub fn coarse_grain(values: &[f64], energies: &[f64], resolution: usize) -> Result<Vec<f64>> {
    if resolution == 0 {
        return Err(Error::InvalidArgument("resolution K must be >= 1".into()));
    }
    if values.len() != energies.len() {
        return Err(Error::DimensionMismatch {
            expected: energies.len(),
            actual: values.len(),
        });
    }
    let n = energies.len();
    let mut prefix = vec![0.0; n + 1];
    for (i, v) in values.iter().enumerate() {
        prefix[i + 1] = prefix[i] + v;
    }
    Ok((0..n)
        .map(|i| {
            let span = 2 * i.min(n - 1 - i) + 1;
            let k = resolution.min(span);
            let (lo, hi) = nearest_range(energies, i, k);
            (prefix[hi + 1] - prefix[lo]) / k as f64
        })
        .collect())
}

/// Index range `[lo, hi]` of the `k` levels nearest to level `i`.
fn nearest_range(energies: &[f64], i: usize, k: usize) -> (usize, usize) {
    let (mut lo, mut hi) = (i, i);
    let e = energies[i];
    for _ in 1..k {
        let left = (lo > 0).then(|| e - energies[lo - 1]);
        let right = (hi + 1 < energies.len()).then(|| energies[hi + 1] - e);
        match (left, right) {
            (Some(l), Some(r)) if l <= r => lo -= 1,
            (Some(_), Some(_)) => hi += 1,
            (Some(_), None) => lo -= 1,
            (None, Some(_)) => hi += 1,
            (None, None) => break,
        }
    }
    (lo, hi)
}

/// Fourth-order polynomial `a(x)`, `x = E/N`, describing the smooth part of
/// `⟨E|A|E⟩`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SmoothEthFit {
    /// Lowest order first.
    pub coefficients: Vec<f64>,
    pub resolution: usize,
    pub observable_label: String,
    pub rms_residual: f64,
}

impl SmoothEthFit {
    pub fn value(&self, x: f64) -> f64 {
        fit::polyval(&self.coefficients, x)
    }

    /// `a′(x)`.
    pub fn derivative(&self, x: f64) -> f64 {
        fit::polyval(&fit::polyder(&self.coefficients), x)
    }
}

pub const ETH_FIT_DEGREE: usize = 4;
/// Fraction of eigenstates dropped at each spectral edge before fitting.
pub const ETH_FIT_EDGE_FRACTION: f64 = 0.05;

pub fn smooth_eth_fit(spec: &Spectrum, a: &Observable, resolution: usize) -> Result<SmoothEthFit> {
    if a.n_sites() != spec.n_sites() {
        return Err(Error::DimensionMismatch {
            expected: spec.n_sites(),
            actual: a.n_sites(),
        });
    }
    let diag = spec.diagonal_elements(&a.compile()?);
    smooth_eth_fit_values(spec.energies(), &diag, spec.n_sites(), resolution, &a.label)
}

/// [`smooth_eth_fit`] on precomputed diagonal elements.
pub fn smooth_eth_fit_values(
    energies: &[f64],
    diagonal: &[f64],
    n_sites: usize,
    resolution: usize,
    label: &str,
) -> Result<SmoothEthFit> {
    let smooth = coarse_grain(diagonal, energies, resolution)?;
    let n = energies.len();
    let cut = (ETH_FIT_EDGE_FRACTION * n as f64).floor() as usize;
    let range = cut..n - cut;
    let xs: Vec<f64> = energies[range.clone()]
        .iter()
        .map(|e| e / n_sites as f64)
        .collect();
    let ys = &smooth[range];
    let coefficients = fit::polyfit(&xs, ys, ETH_FIT_DEGREE)?;
    let rms = (xs
        .iter()
        .zip(ys)
        .map(|(&x, &y)| (fit::polyval(&coefficients, x) - y).powi(2))
        .sum::<f64>()
        / xs.len() as f64)
        .sqrt();
    Ok(SmoothEthFit {
        coefficients,
        resolution,
        observable_label: label.to_string(),
        rms_residual: rms,
    })
}

/// Leading terms of `tr[ρ_{λ,δ}(H − λ)]` for a Gaussian density of states of
/// width `Δ` centred at zero.
pub fn analytic_first_moment(center: f64, window: f64, dos_width: f64) -> Result<f64> {
    if !(dos_width > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "density-of-states width must be > 0, got {dos_width}"
        )));
    }
    let (l, d2, w2) = (center, dos_width * dos_width, window * window);
    Ok(-w2 * l / d2 + (3.0 * w2 * w2 / (6.0 * d2 * d2)) * (3.0 * l - l.powi(3) / d2))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{local_observable, LocalKind};

    fn diag_matrix(values: &[f64]) -> Mat<f64> {
        Mat::from_fn(values.len(), values.len(), |i, j| if i == j { values[i] } else { 0.0 })
    }

    #[test]
    fn classical_ising_ring() {
        let spec = HamiltonianSpec {
            field_x: 0.0,
            field_z: 0.0,
            disorder_amplitude: 0.0,
            ..HamiltonianSpec::standard(3, 0)
        };
        let s = Spectrum::of_model(&spec).unwrap();
        let e = s.energies();
        for v in &e[..6] {
            assert!((v + 1.0).abs() < 1e-12);
        }
        for v in &e[6..] {
            assert!((v - 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn rejects_asymmetric_and_oversized() {
        let mut m = diag_matrix(&[1.0, 2.0]);
        m[(0, 1)] = 0.5;
        assert!(matches!(exact_spectrum(&m), Err(Error::NotSymmetric(_))));
        let big = HamiltonianSpec::standard(15, 0);
        assert!(matches!(Spectrum::of_model(&big), Err(Error::TooLarge { .. })));
    }

    #[test]
    fn spectrum_contracts_n6() {
        let spec = HamiltonianSpec::standard(6, 11);
        let s = Spectrum::of_model(&spec).unwrap();
        assert!(s.orthogonality_defect() < 1e-10);
        let op = RealOperator::new(&model::build_mfim(&spec).unwrap(), 6).unwrap();
        assert!(s.max_residual(&op) < 1e-8);
        assert!(s.min_level_spacing() > 0.0);
        for i in 0..s.dim() {
            let v = s.eigenvector(i);
            let k = (0..v.len())
                .reduce(|a, b| if v[b].abs() > v[a].abs() { b } else { a })
                .unwrap();
            assert!(v[k] > 0.0);
        }
    }

    #[test]
    fn single_level_dos_peak() {
        let s = exact_spectrum(&diag_matrix(&[0.7, 5.0])).unwrap();
        let d = broadened_dos(&s, 0.3, 0.7);
        let want = 1.0 / (2.0 * PI * 0.09f64).sqrt() + gaussian(4.3, 0.3);
        assert!((d - want).abs() < 1e-14);
    }

    #[test]
    fn dos_integrates_to_dimension() {
        let s = Spectrum::of_model(&HamiltonianSpec::standard(5, 2)).unwrap();
        let (lo, hi) = (s.e_min() - 5.0, s.e_max() + 5.0);
        let n = 20_000;
        let h = (hi - lo) / n as f64;
        let integral: f64 = (0..=n)
            .map(|i| {
                let w = if i == 0 || i == n { 0.5 } else { 1.0 };
                w * broadened_dos(&s, 0.5, lo + i as f64 * h)
            })
            .sum::<f64>()
            * h;
        assert!((integral / 32.0 - 1.0).abs() < 1e-3);
    }

    #[test]
    fn profile_fit_recovers_synthetic_gaussian() {
        let n_sites = 10;
        let (gamma, center) = (2.2, -0.4);
        let width = (gamma * n_sites as f64).sqrt();
        let grid: Vec<f64> = (0..201).map(|i| -12.0 + 24.0 * i as f64 / 200.0).collect();
        let values: Vec<f64> = grid
            .iter()
            .map(|&x| 1024.0 * gaussian(x - center, width))
            .collect();
        let fit = fit_gaussian_profile(n_sites, &grid, &values).unwrap();
        assert!((fit.gamma - gamma).abs() < 1e-6, "{fit:?}");
        assert!((fit.center - center).abs() < 1e-6, "{fit:?}");
    }

    #[test]
    fn wide_window_is_uniform_and_normalized() {
        let s = Spectrum::of_model(&HamiltonianSpec::standard(5, 4)).unwrap();
        let ens = broadened_ensemble(&s, 0.0, s.bandwidth() * 1e3).unwrap();
        let total: f64 = ens.weights.iter().sum();
        assert!((total - 1.0).abs() < 1e-12);
        for w in &ens.weights {
            assert!((w - 1.0 / 32.0).abs() < 1e-7);
        }
        assert!(broadened_ensemble(&s, s.e_max() + 1.0, 1.0).is_err());
        assert!(broadened_ensemble(&s, 0.0, 0.0).is_err());
    }

    #[test]
    fn weights_shift_invariant() {
        let spec = HamiltonianSpec::standard(6, 9);
        let s = Spectrum::of_model(&spec).unwrap();
        let mut terms = model::build_mfim(&spec).unwrap();
        let c = 3.25;
        terms.push(model::PauliTerm::on_sites(c, 6, &[]).unwrap());
        let shifted = exact_spectrum(&model::to_dense(&terms, 6).unwrap()).unwrap();
        let a = broadened_ensemble(&s, -3.0, 0.8).unwrap();
        let b = broadened_ensemble(&shifted, -3.0 + c, 0.8).unwrap();
        for (x, y) in a.weights.iter().zip(&b.weights) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn expectation_edge_cases() {
        let s = Spectrum::of_model(&HamiltonianSpec::standard(5, 1)).unwrap();
        let ens = broadened_ensemble(&s, -2.0, 1.0).unwrap();
        let id = Observable::identity(5);
        assert!((mc_expectation(&ens, &s, &id).unwrap() - 1.0).abs() < 1e-12);
        assert!(mc_fluctuation(&ens, &s, &id).unwrap() < 1e-7);
        let z = local_observable(LocalKind::Z, 5).unwrap();
        let flat = BroadenedEnsemble {
            center: 0.0,
            width: f64::INFINITY,
            weights: vec![1.0 / 32.0; 32],
        };
        assert!(mc_expectation(&flat, &s, &z).unwrap().abs() < 1e-12);
        let one = BroadenedEnsemble::single(32, 7, s.energies()[7]);
        assert_eq!(mc_fluctuation(&one, &s, &z).unwrap(), 0.0);
    }

    #[test]
    fn coarse_grain_basics() {
        let e: Vec<f64> = (0..50).map(|i| (i as f64).powf(1.3)).collect();
        let c = vec![2.5; 50];
        assert_eq!(coarse_grain(&c, &e, 8).unwrap(), c);
        let v: Vec<f64> = (0..50).map(|i| ((i * 7919) % 13) as f64).collect();
        assert_eq!(coarse_grain(&v, &e, 1).unwrap(), v);
        let cg = coarse_grain(&v, &e, 8).unwrap();
        // edge levels are left untouched
        assert_eq!(cg[0], v[0]);
        assert_eq!(cg[49], v[49]);
        assert!(coarse_grain(&v, &e, 0).is_err());
    }

    #[test]
    fn eth_fit_recovers_quadratic() {
        let n_sites = 8;
        let energies: Vec<f64> = (0..256).map(|i| -12.0 + 24.0 * (i as f64 / 255.0).powf(1.1)).collect();
        let c = [0.1, -0.4, 0.25];
        let diag: Vec<f64> = energies
            .iter()
            .map(|e| fit::polyval(&c, e / n_sites as f64))
            .collect();
        let f = smooth_eth_fit_values(&energies, &diag, n_sites, 1, "synthetic").unwrap();
        let want = [0.1, -0.4, 0.25, 0.0, 0.0];
        for (a, b) in f.coefficients.iter().zip(&want) {
            assert!((a - b).abs() < 1e-8, "{:?}", f.coefficients);
        }
        let flat = smooth_eth_fit_values(&energies, &vec![0.3; 256], n_sites, 4, "c").unwrap();
        assert!(flat.derivative(-0.5).abs() < 1e-10);
    }

    #[test]
    fn first_moment_basics() {
        assert_eq!(analytic_first_moment(0.0, 1.0, 5.0).unwrap(), 0.0);
        assert!(analytic_first_moment(-6.5, 1.0, (2.35f64 * 13.0).sqrt()).unwrap() > 0.0);
        assert!(analytic_first_moment(1.0, 1.0, 0.0).is_err());
    }
}
