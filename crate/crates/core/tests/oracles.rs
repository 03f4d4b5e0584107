//! Checks against independent dense-matrix, brute-force and quadrature
//! evaluations.

use faer::Mat;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use vme_core::analysis::{self, EnsembleView, Flavor};
use vme_core::circuit::{self, AnsatzParams, CostFunction, StateVector};
use vme_core::model::{self, local_observable, HamiltonianSpec, LocalKind, PauliTerm, RealOperator};
use vme_core::optimize::{bfgs_minimize, BfgsStatus};
use vme_core::spectral::{self, Spectrum};
use vme_core::vqa::{window_width, BandwidthMode};

mod common;
use common::*;

#[test]
fn layer_matches_dense_gate_product() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for n in [4usize, 5] {
        for _ in 0..5 {
            let angles: Vec<f64> = (0..2 * n).map(|_| rng.random::<f64>() * 6.0 - 3.0).collect();
            let psi = random_state(n, &mut rng);
            let want = matvec(&oracle_layer(n, &angles), psi.amplitudes());
            let mut got = psi.clone();
            circuit::apply_layer(&mut got, &angles).unwrap();
            let err = got
                .amplitudes()
                .iter()
                .zip(&want)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            assert!(err < 1e-12, "N={n}: {err:e}");
        }
    }
}

#[test]
fn expectation_matches_dense_matrix() {
    let spec = HamiltonianSpec::standard(8, 4);
    let terms = model::build_mfim(&spec).unwrap();
    let h = dense_mfim(&spec);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let seed = circuit::random_product_state(8, 9, 0).unwrap();
    let params = AnsatzParams::from_angles(8, (0..48).map(|_| rng.random::<f64>() * 3.0).collect()).unwrap();
    let psi = circuit::prepare_ansatz_state(&seed, &params).unwrap();
    let want: f64 = psi.amplitudes().iter().zip(matvec(&h, psi.amplitudes())).map(|(a, b)| a * b).sum();
    let got = circuit::expectation(&psi, &terms).unwrap();
    assert!((got - want).abs() < 1e-10);
    // the model's own dense assembly agrees with the Kronecker oracle
    let asm = model::to_dense(&terms, 8).unwrap();
    let diff = (0..256).flat_map(|i| (0..256).map(move |j| (i, j))).map(|(i, j)| (asm[(i, j)] - h[(i, j)]).abs()).fold(0.0, f64::max);
    assert!(diff < 1e-14);
}

#[test]
fn deep_ansatz_preserves_norm() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let seed = circuit::random_product_state(10, 1, 1).unwrap();
    let params = AnsatzParams::from_angles(10, (0..200).map(|_| rng.random::<f64>() * 6.3).collect()).unwrap();
    let psi = circuit::prepare_ansatz_state(&seed, &params).unwrap();
    assert!((psi.norm() - 1.0).abs() < 1e-10);
}

#[test]
fn cost_identity_term_by_term() {
    let spec = HamiltonianSpec::standard(8, 5);
    let terms = model::build_mfim(&spec).unwrap();
    let h = RealOperator::new(&terms, 8).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..100 {
        let psi = random_state(8, &mut rng);
        let lambda = rng.random::<f64>() * 8.0 - 4.0;
        let cv = circuit::cost_and_variance(&psi, &h, lambda);
        // independent: energy from per-term expectations, ⟨H²⟩ from ‖Hψ‖²
        let energy: f64 = terms
            .iter()
            .map(|t| circuit::expectation(&psi, std::slice::from_ref(t)).unwrap())
            .sum::<f64>();
        let hpsi = h.apply(psi.amplitudes());
        let h2: f64 = hpsi.iter().map(|a| a * a).sum();
        assert!((cv.energy - energy).abs() < 1e-10);
        assert!((cv.variance - (h2 - energy * energy)).abs() < 1e-10);
        assert!((cv.cost - (cv.variance + (energy - lambda).powi(2))).abs() < 1e-10);
    }
}

#[test]
fn parameter_shift_matches_finite_difference() {
    let spec = HamiltonianSpec::standard(6, 6);
    let h = RealOperator::new(&model::build_mfim(&spec).unwrap(), 6).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let seed = circuit::random_product_state(6, 2, 3).unwrap();
    let f = CostFunction::new(seed.clone(), h.clone(), -3.0).unwrap();
    let theta: Vec<f64> = (0..24).map(|_| rng.random::<f64>() * 6.0 - 3.0).collect();
    let g = f.gradient(&theta);
    let params = AnsatzParams::from_angles(6, theta.clone()).unwrap();
    assert_eq!(circuit::parameter_shift_gradient(&seed, &params, &h, -3.0).unwrap(), g);
    let step = 1e-5;
    for k in 0..theta.len() {
        let mut p = theta.clone();
        p[k] += step;
        let up = f.cost(&p);
        p[k] -= 2.0 * step;
        let down = f.cost(&p);
        let fd = (up - down) / (2.0 * step);
        assert!((g[k] - fd).abs() < 1e-6, "component {k}: {} vs {fd}", g[k]);
    }
    let shifted: Vec<f64> = theta.iter().map(|t| t + 2.0 * std::f64::consts::PI).collect();
    for (a, b) in f.gradient(&shifted).iter().zip(&g) {
        assert!((a - b).abs() < 1e-9);
    }
}

#[test]
fn gradient_vanishes_for_commuting_gate() {
    // H = Z on site 0; the last gate of the layer rotates site 2 only
    let h = RealOperator::new(&[PauliTerm::parse(1.0, "ZII").unwrap()], 3).unwrap();
    let seed = circuit::random_product_state(3, 0, 4).unwrap();
    let f = CostFunction::new(seed, h, 0.3).unwrap();
    let g = f.gradient(&[0.3, -0.8, 1.1, 0.4, 0.9, -0.2]);
    assert!(g[5].abs() < 1e-12);
}

fn product_state_variance_oracle(spec: &HamiltonianSpec, angles: &[f64]) -> f64 {
    // single-site expectations on cos φ|0⟩ + sin φ|1⟩
    let ez = |j: usize| (2.0 * angles[j]).cos();
    let ex = |j: usize| (2.0 * angles[j]).sin();
    let n = spec.n_sites;
    let hx = spec.transverse_fields();
    let (jc, hz) = (spec.coupling_j, spec.field_z);
    // Var(H) = Σ over pairs of terms sharing a site of the covariance; with
    // ⟨Z²⟩ = ⟨X²⟩ = 1 and {Z, X} = 0 on a site, every covariance reduces to
    // products of single-site moments
    let var_z = |j: usize| 1.0 - ez(j).powi(2);
    let var_x = |j: usize| 1.0 - ex(j).powi(2);
    let cov_zx = |j: usize| -ez(j) * ex(j);
    let mut v = 0.0;
    for j in 0..n {
        let k = (j + 1) % n;
        v += hx[j] * hx[j] * var_x(j);
        v += hz * hz * var_z(j);
        v += 2.0 * hx[j] * hz * cov_zx(j);
        // ZZ bond with itself
        v += jc * jc * (1.0 - ez(j).powi(2) * ez(k).powi(2));
        // ZZ bond with Z and X terms on its two sites
        for (site, other) in [(j, k), (k, j)] {
            v += 2.0 * jc * hz * ez(other) * var_z(site);
            v += 2.0 * jc * hx[site] * ez(other) * cov_zx(site);
        }
        // neighbouring bonds share one site
        let l = (k + 1) % n;
        v += 2.0 * jc * jc * ez(j) * ez(l) * var_z(k);
    }
    v
}

#[test]
fn product_state_variance_is_extensive() {
    let spec = HamiltonianSpec::standard(6, 8);
    let h = RealOperator::new(&model::build_mfim(&spec).unwrap(), 6).unwrap();
    let (mut got, mut want) = (0.0, 0.0);
    for r in 0..100 {
        let seed = circuit::ProductStateSeed::draw(6, 77, r);
        let v = circuit::cost_and_variance(&seed.state(), &h, 0.0).variance;
        let o = product_state_variance_oracle(&spec, &seed.angles);
        assert!((v - o).abs() < 1e-10, "seed {r}: {v} vs {o}");
        got += v / 100.0;
        want += o / 100.0;
    }
    assert!((got / want - 1.0).abs() < 0.2);
    assert!(got > 0.5 * 6.0);
}

#[test]
fn mfim_second_moment_matches_dense() {
    for n in 3..=8 {
        let spec = HamiltonianSpec::standard(n, 100 + n as u64);
        let h = model::to_dense(&model::build_mfim(&spec).unwrap(), n).unwrap();
        let d = 1 << n;
        let tr: f64 = (0..d).map(|i| h[(i, i)]).sum();
        let tr2: f64 = (0..d).flat_map(|i| (0..d).map(move |j| (i, j))).map(|(i, j)| h[(i, j)] * h[(j, i)]).sum();
        assert_eq!(tr, 0.0);
        let want = spec.mean_square_energy();
        assert!((tr2 / d as f64 - want).abs() < 1e-12 * want);
    }
}

#[test]
fn spectrum_of_n8_is_nondegenerate() {
    let s = Spectrum::of_model(&HamiltonianSpec::standard(8, 1)).unwrap();
    assert!(s.min_level_spacing() > 0.0);
    assert!(s.orthogonality_defect() < 1e-10);
}

#[test]
fn fluctuation_matches_dense_second_moment() {
    let spec = HamiltonianSpec::standard(10, 2);
    let s = Spectrum::of_model(&spec).unwrap();
    let a = local_observable(LocalKind::Z, 10).unwrap();
    let dense_a = chain(10, &[(5, z())]);
    let (lambda, delta) = (-5.0, s.bandwidth() / 10.0 / 10f64.sqrt());
    let ens = spectral::broadened_ensemble(&s, lambda, delta).unwrap();
    let raw: Vec<f64> = s.energies().iter().map(|e| (-(e - lambda).powi(2) / (2.0 * delta * delta)).exp()).collect();
    let total: f64 = raw.iter().sum();
    let (mut m1, mut m2) = (0.0, 0.0);
    for i in 0..s.dim() {
        let v = s.eigenvector(i);
        let av = matvec(&dense_a, v);
        let d: f64 = v.iter().zip(&av).map(|(p, q)| p * q).sum();
        m1 += raw[i] / total * d;
        m2 += raw[i] / total * d * d;
    }
    let want = (m2 - m1 * m1).sqrt();
    let got = spectral::mc_fluctuation(&ens, &s, &a).unwrap();
    assert!((got - want).abs() < 1e-10);
    assert!((spectral::mc_expectation(&ens, &s, &a).unwrap() - m1).abs() < 1e-12);
}

#[test]
fn coarse_grain_matches_sorted_neighbours() {
    let s = Spectrum::of_model(&HamiltonianSpec::standard(8, 3)).unwrap();
    let e = s.energies();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let values: Vec<f64> = (0..e.len()).map(|_| rng.random::<f64>()).collect();
    let cg = spectral::coarse_grain(&values, e, 64).unwrap();
    for i in [40usize, 100, 128, 200] {
        let mut order: Vec<usize> = (0..e.len()).collect();
        order.sort_by(|&a, &b| (e[a] - e[i]).abs().total_cmp(&(e[b] - e[i]).abs()).then(a.cmp(&b)));
        let want = order[..64].iter().map(|&k| values[k]).sum::<f64>() / 64.0;
        assert!((cg[i] - want).abs() < 1e-12, "index {i}");
    }
}

#[test]
fn ensemble_estimate_matches_dense_mixture() {
    let n = 8;
    let states: Vec<StateVector> = (0..5).map(|r| circuit::random_product_state(n, 3, r).unwrap()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let states: Vec<StateVector> = states
        .into_iter()
        .map(|s| {
            let p = AnsatzParams::from_angles(n, (0..2 * n).map(|_| rng.random::<f64>()).collect()).unwrap();
            circuit::prepare_ansatz_state(&s, &p).unwrap()
        })
        .collect();
    let view = EnsembleView::from_states(states.clone()).unwrap();
    let d = 1 << n;
    let mut rho = Mat::<f64>::zeros(d, d);
    for s in &states {
        let a = s.amplitudes();
        rho = &rho + &Mat::from_fn(d, d, |i, j| a[i] * a[j] / 5.0);
    }
    for kind in LocalKind::ALL {
        let obs = local_observable(kind, n).unwrap();
        let dense = model::to_dense(&obs.terms, n).unwrap();
        let prod = &rho * &dense;
        let want: f64 = (0..d).map(|i| prod[(i, i)]).sum();
        assert!((analysis::ensemble_estimate(&view, &obs).unwrap() - want).abs() < 1e-12);
    }
    let id = model::Observable::identity(n);
    assert!((analysis::ensemble_estimate(&view, &id).unwrap() - 1.0).abs() < 1e-12);
}

#[test]
fn hat_samples_match_independent_identity() {
    let n = 8;
    let s = Spectrum::of_model(&HamiltonianSpec::standard(n, 5)).unwrap();
    let states: Vec<StateVector> = (0..6).map(|r| circuit::random_product_state(n, 1, r).unwrap()).collect();
    let view = EnsembleView::from_states(states.clone()).unwrap().with_eigenbasis(&s).unwrap();
    let obs = local_observable(LocalKind::X, n).unwrap();
    let dense = model::to_dense(&obs.terms, n).unwrap();
    let t = analysis::build_truncated(&obs, &s, -4.0, 1.0, 3.0, Flavor::Hat).unwrap();
    let x = analysis::offdiag_samples(&view, &t).unwrap();
    for (r, psi) in states.iter().enumerate() {
        let a = psi.amplitudes();
        let full: f64 = a.iter().zip(matvec(&dense, a)).map(|(p, q)| p * q).sum();
        let mut diag = 0.0;
        for i in 0..s.dim() {
            let v = s.eigenvector(i);
            let c: f64 = v.iter().zip(a).map(|(p, q)| p * q).sum();
            let aee: f64 = v.iter().zip(matvec(&dense, v)).map(|(p, q)| p * q).sum();
            diag += c * c * aee;
        }
        assert!((x.values[r] - (full - diag)).abs() < 1e-10);
        // the full off-diagonal block gives the same numbers
        let c = &view.coefficients().unwrap()[r];
        assert!((t.quadratic_form(c) - x.values[r]).abs() < 1e-10);
    }
}

#[test]
fn rdm_of_mixture_is_mean_of_rdms() {
    let n = 8;
    let states: Vec<StateVector> = (0..4)
        .map(|r| {
            let s = circuit::random_product_state(n, 5, r).unwrap();
            let p = AnsatzParams::from_angles(n, (0..32).map(|k| 0.1 * (k + r as usize) as f64).collect()).unwrap();
            circuit::prepare_ansatz_state(&s, &p).unwrap()
        })
        .collect();
    let view = EnsembleView::from_states(states.clone()).unwrap();
    for (start, k) in [(0usize, 2usize), (6, 3), (3, 1)] {
        let sites = analysis::interval(n, start, k);
        let mix = analysis::reduced_density(&view, &sites).unwrap();
        let dk = 1 << k;
        // dense partial trace oracle: ρ_S[i][j] = Σ_env ψ(i, env) ψ(j, env)
        let mut want = vec![0.0; dk * dk];
        for s in &states {
            let a = s.amplitudes();
            for b in 0..1usize << n {
                for b2 in 0..1usize << n {
                    let env_eq = (0..n).filter(|j| !sites.contains(j)).all(|j| (b >> (n - 1 - j)) & 1 == (b2 >> (n - 1 - j)) & 1);
                    if !env_eq {
                        continue;
                    }
                    let idx = |b: usize| sites.iter().fold(0, |acc, &j| (acc << 1) | ((b >> (n - 1 - j)) & 1));
                    want[idx(b) * dk + idx(b2)] += a[b] * a[b2] / 4.0;
                }
            }
        }
        for (g, w) in mix.data.iter().zip(&want) {
            assert!((g - w).abs() < 1e-10);
        }
        assert!((mix.trace() - 1.0).abs() < 1e-12);
        assert!(mix.eigenvalues().unwrap()[0] > -1e-10);
    }
}

#[test]
fn trace_distance_bounds_observable_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..50 {
        let psi: Vec<Vec<f64>> = (0..4).map(|_| random_state(2, &mut rng).into_amplitudes()).collect();
        let a = analysis::reduced_density_mixture(&[&psi[0], &psi[1]], &[0.3, 0.7], 2, &[0, 1]).unwrap();
        let b = analysis::reduced_density_mixture(&[&psi[2], &psi[3]], &[0.5, 0.5], 2, &[0, 1]).unwrap();
        let t = analysis::trace_distance(&a, &b).unwrap();
        assert!((0.0..=1.0 + 1e-12).contains(&t));
        let m: Vec<f64> = {
            let raw: Vec<f64> = (0..16).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect();
            (0..16).map(|k| 0.5 * (raw[k] + raw[(k % 4) * 4 + k / 4])).collect()
        };
        let sv = spectral::exact_spectrum(&Mat::from_fn(4, 4, |i, j| m[i * 4 + j]))
            .map(|s| s.energies().iter().fold(0.0f64, |acc, e| acc.max(e.abs())))
            .unwrap();
        assert!((a.expectation(&m) - b.expectation(&m)).abs() <= 2.0 * t * sv + 1e-12);
    }
}

#[test]
fn first_moment_series_matches_quadrature() {
    let dos_w = (2.35f64 * 13.0).sqrt();
    for delta in [0.25, 0.5, 1.0, 0.2 * dos_w] {
        let (num, den) = moment_quadrature(-6.5, delta, dos_w);
        let want = num / den;
        let got = spectral::analytic_first_moment(-6.5, delta, dos_w).unwrap();
        assert!(((got - want) / want).abs() < 1e-2, "δ={delta}: {got} vs {want}");
        assert!(got > 0.0);
    }
    // the series is the expansion of the moment normalized by the density of
    // states at λ, which it tracks for any λ
    for (lambda, delta) in [(3.0, 0.5), (-2.0, 1.1), (-9.0, 0.2 * dos_w)] {
        let (num, _) = moment_quadrature(lambda, delta, dos_w);
        let want = num / spectral::gaussian(lambda, dos_w);
        let got = spectral::analytic_first_moment(lambda, delta, dos_w).unwrap();
        assert!(((got - want) / want).abs() < 1e-2, "λ={lambda} δ={delta}: {got} vs {want}");
    }
}

#[test]
fn iid_null_monte_carlo_matches_closed_form() {
    let n = 12;
    let c = vec![1.0 / (n as f64).sqrt(); n];
    let r = analysis::iid_null_mse(&c, 50.0, 10_000, 9).unwrap();
    assert!((r.monte_carlo - r.analytic).abs() < 3.0 * r.standard_error, "{r:?}");
    // exact double sum for uniform weights: 4 · C(n,2) / n² / D
    let want = 4.0 * (n * (n - 1) / 2) as f64 / (n * n) as f64 / 50.0;
    assert!((r.analytic - want).abs() < 1e-14);
}

#[test]
fn scrambled_mse_follows_iid_law() {
    let (c, sigma, r_max, scrambles) = (0.05, 0.4, 120, 100);
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let normal = rand_distr::Normal::new(c, sigma).unwrap();
    let trials = 40;
    let mut curves = Vec::new();
    for t in 0..trials {
        let xs: Vec<f64> = (0..r_max).map(|_| rand_distr::Distribution::sample(&normal, &mut rng)).collect();
        curves.push(analysis::scrambled_mse(&xs, scrambles, t).unwrap());
    }
    for r in [1usize, 5, 20, 60] {
        let vals: Vec<f64> = curves.iter().map(|cv| cv[r - 1]).collect();
        let mean = vals.iter().sum::<f64>() / trials as f64;
        let sd = (vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (trials - 1) as f64).sqrt();
        let want = sigma * sigma / r as f64 + c * c;
        // sampling without replacement from a finite sample shrinks the
        // variance by (R_max − R)/(R_max − 1)
        let want_fpc = sigma * sigma / r as f64 * (r_max - r) as f64 / (r_max - 1) as f64 + c * c;
        let err = (mean - want).abs().min((mean - want_fpc).abs());
        assert!(err < 3.0 * sd / (trials as f64).sqrt() + 1e-12, "R={r}: {mean} vs {want}");
    }
}

#[test]
fn mse_law_pure_inverse() {
    let curve: Vec<f64> = (1..=50).map(|r| 0.3 / r as f64).collect();
    let law = analysis::fit_mse_law(&curve).unwrap();
    let slope = (law.value(50.0).ln() - law.value(1.0).ln()) / 50f64.ln();
    assert!((slope + 1.0).abs() < 0.01, "{law:?}");
}

#[test]
fn bfgs_quadratic_bowl() {
    let q = [
        [4.0, 1.0, 0.5, 0.0, 0.2],
        [1.0, 3.0, 0.3, 0.1, 0.0],
        [0.5, 0.3, 2.0, 0.4, 0.1],
        [0.0, 0.1, 0.4, 1.5, 0.3],
        [0.2, 0.0, 0.1, 0.3, 1.0],
    ];
    let a = [1.0, -2.0, 0.5, 3.0, -1.0];
    let f = |x: &[f64]| {
        let d: Vec<f64> = (0..5).map(|i| x[i] - a[i]).collect();
        (0..5).map(|i| (0..5).map(|j| d[i] * q[i][j] * d[j]).sum::<f64>()).sum::<f64>()
    };
    let g = |x: &[f64]| {
        let d: Vec<f64> = (0..5).map(|i| x[i] - a[i]).collect();
        (0..5).map(|i| 2.0 * (0..5).map(|j| q[i][j] * d[j]).sum::<f64>()).collect::<Vec<f64>>()
    };
    let (x, r) = bfgs_minimize(f, g, vec![0.0; 5], 1e-8, 50);
    assert_eq!(r.status, BfgsStatus::Converged);
    assert!(r.grad_inf < 1e-8 && r.iterations <= 50);
    for i in 0..5 {
        assert!((x[i] - a[i]).abs() < 1e-7);
    }
}

#[test]
fn exact_and_approximate_windows_agree() {
    let s = Spectrum::of_model(&HamiltonianSpec::standard(8, 1)).unwrap();
    let exact = window_width(8, Some(s.bandwidth()), BandwidthMode::Exact, -0.5).unwrap();
    let approx = window_width(8, None, BandwidthMode::Approximate, -0.5).unwrap();
    assert!((exact / approx - 1.0).abs() < 0.15);
}
