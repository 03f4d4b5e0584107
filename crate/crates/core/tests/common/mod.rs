//! Dense-matrix and quadrature reference implementations shared by the
//! integration tests.
#![allow(dead_code)]

use faer::Mat;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use vme_core::circuit::StateVector;
use vme_core::model::HamiltonianSpec;
use vme_core::spectral;

pub fn kron(a: &Mat<f64>, b: &Mat<f64>) -> Mat<f64> {
    Mat::from_fn(a.nrows() * b.nrows(), a.ncols() * b.ncols(), |i, j| {
        a[(i / b.nrows(), j / b.ncols())] * b[(i % b.nrows(), j % b.ncols())]
    })
}

pub fn eye(d: usize) -> Mat<f64> {
    Mat::from_fn(d, d, |i, j| if i == j { 1.0 } else { 0.0 })
}

pub fn m2(a: [[f64; 2]; 2]) -> Mat<f64> {
    Mat::from_fn(2, 2, |i, j| a[i][j])
}

/// Kronecker product over sites, site 0 leftmost.
pub fn chain(n: usize, factors: &[(usize, Mat<f64>)]) -> Mat<f64> {
    let mut out = eye(1);
    for site in 0..n {
        let f = factors
            .iter()
            .find(|(s, _)| *s == site)
            .map(|(_, m)| m.clone())
            .unwrap_or_else(|| eye(2));
        out = kron(&out, &f);
    }
    out
}

pub fn i_y() -> Mat<f64> {
    m2([[0.0, 1.0], [-1.0, 0.0]])
}

pub fn z() -> Mat<f64> {
    m2([[1.0, 0.0], [0.0, -1.0]])
}

pub fn x() -> Mat<f64> {
    m2([[0.0, 1.0], [1.0, 0.0]])
}

pub fn rotation_matrix(n: usize, generator: Mat<f64>, angle: f64) -> Mat<f64> {
    let d = 1 << n;
    Mat::from_fn(d, d, |i, j| angle.cos() * eye(d)[(i, j)] + angle.sin() * generator[(i, j)])
}

/// Gate order written out by hand: odd bonds, even bonds (with the end gate
/// for odd N), single-site rotations.
pub fn oracle_layer(n: usize, angles: &[f64]) -> Mat<f64> {
    let bonds: Vec<(usize, usize)> = match n {
        4 => vec![(0, 1), (2, 3), (1, 2), (3, 0)],
        5 => vec![(0, 1), (2, 3), (1, 2), (3, 4), (0, 4)],
        _ => unreachable!(),
    };
    let mut u = eye(1 << n);
    for (k, &(a, b)) in bonds.iter().enumerate() {
        let g = chain(n, &[(a, i_y()), (b, z())]);
        u = &rotation_matrix(n, g, angles[k]) * &u;
    }
    for site in 0..n {
        let g = chain(n, &[(site, i_y())]);
        u = &rotation_matrix(n, g, angles[n + site]) * &u;
    }
    u
}

pub fn random_state(n: usize, rng: &mut ChaCha8Rng) -> StateVector {
    let mut v: Vec<f64> = (0..1 << n).map(|_| rng.random::<f64>() - 0.5).collect();
    let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
    v.iter_mut().for_each(|a| *a /= norm);
    StateVector::new(n, v).unwrap()
}

pub fn matvec(m: &Mat<f64>, v: &[f64]) -> Vec<f64> {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)] * v[j]).sum())
        .collect()
}

pub fn dense_mfim(spec: &HamiltonianSpec) -> Mat<f64> {
    let n = spec.n_sites;
    let d = 1 << n;
    let mut h = Mat::<f64>::zeros(d, d);
    let hx = spec.transverse_fields();
    let mut add = |m: Mat<f64>, c: f64| {
        for i in 0..d {
            for j in 0..d {
                h[(i, j)] += c * m[(i, j)];
            }
        }
    };
    for j in 0..n {
        add(chain(n, &[(j, z()), ((j + 1) % n, z())]), spec.coupling_j);
        add(chain(n, &[(j, x())]), hx[j]);
        add(chain(n, &[(j, z())]), spec.field_z);
    }
    h
}

/// `(∫ dE G_Δ(E) G_δ(E − λ) (E − λ), ∫ dE G_Δ(E) G_δ(E − λ))` by the
/// trapezoid rule.
pub fn moment_quadrature(lambda: f64, delta: f64, dos_w: f64) -> (f64, f64) {
    let (lo, hi, steps) = (lambda - 12.0 * delta, lambda + 12.0 * delta, 40_000);
    let h = (hi - lo) / steps as f64;
    let (mut num, mut den) = (0.0, 0.0);
    for k in 0..=steps {
        let e = lo + k as f64 * h;
        let w = if k == 0 || k == steps { 0.5 } else { 1.0 };
        let g = spectral::gaussian(e, dos_w) * spectral::gaussian(e - lambda, delta);
        num += w * g * (e - lambda) * h;
        den += w * g * h;
    }
    (num, den)
}
