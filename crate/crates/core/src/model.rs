//! Pauli-string operators and the mixed-field Ising chain.
//!
//! Sites are 0-based in code. Site `j` of an `N`-site chain is stored in bit
//! `N - 1 - j` of a computational-basis index, so that basis indices follow
//! the usual Kronecker ordering `σ_0 ⊗ σ_1 ⊗ … ⊗ σ_{N-1}`. User-facing
//! output (CSV, CLI) reports 1-based sites.

use std::fmt;

use faer::Mat;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Largest chain handled by the dense routines.
pub const MAX_DENSE_SITES: usize = 14;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Pauli {
    I,
    X,
    Y,
    Z,
}

impl Pauli {
    fn from_char(c: char) -> Option<Self> {
        match c {
            'I' | 'i' => Some(Pauli::I),
            'X' | 'x' => Some(Pauli::X),
            'Y' | 'y' => Some(Pauli::Y),
            'Z' | 'z' => Some(Pauli::Z),
            _ => None,
        }
    }
}

impl fmt::Display for Pauli {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let c = match self {
            Pauli::I => 'I',
            Pauli::X => 'X',
            Pauli::Y => 'Y',
            Pauli::Z => 'Z',
        };
        write!(f, "{c}")
    }
}

/// Bit of a basis index that encodes `site`.
#[inline]
pub fn site_bit(n_sites: usize, site: usize) -> usize {
    1 << (n_sites - 1 - site)
}

/// A real coefficient times a tensor product of single-site Paulis.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PauliTerm {
    coefficient: f64,
    letters: Vec<Pauli>,
}

impl PauliTerm {
    pub fn new(coefficient: f64, letters: Vec<Pauli>) -> Result<Self> {
        if !coefficient.is_finite() {
            return Err(Error::InvalidModel(format!(
                "non-finite coefficient {coefficient}"
            )));
        }
        if letters.is_empty() || letters.len() > 63 {
            return Err(Error::InvalidModel(format!(
                "Pauli string length {} out of range",
                letters.len()
            )));
        }
        Ok(Self {
            coefficient,
            letters,
        })
    }

    /// Parses a string such as `"IXZ"`.
    pub fn parse(coefficient: f64, letters: &str) -> Result<Self> {
        let letters = letters
            .chars()
            .map(|c| {
                Pauli::from_char(c)
                    .ok_or_else(|| Error::InvalidModel(format!("unknown Pauli letter {c:?}")))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(coefficient, letters)
    }

    /// `coefficient` times the given letters on `sites`, identity elsewhere.
    pub fn on_sites(coefficient: f64, n_sites: usize, ops: &[(usize, Pauli)]) -> Result<Self> {
        let mut letters = vec![Pauli::I; n_sites];
        for &(site, p) in ops {
            if site >= n_sites {
                return Err(Error::InvalidModel(format!(
                    "site {site} outside a chain of {n_sites}"
                )));
            }
            letters[site] = p;
        }
        Self::new(coefficient, letters)
    }

    pub fn coefficient(&self) -> f64 {
        self.coefficient
    }

    pub fn letters(&self) -> &[Pauli] {
        &self.letters
    }

    pub fn n_sites(&self) -> usize {
        self.letters.len()
    }

    /// Bits flipped by the string (X or Y letters).
    pub fn x_mask(&self) -> usize {
        self.mask(|p| matches!(p, Pauli::X | Pauli::Y))
    }

    /// Bits picking up a sign (Z or Y letters).
    pub fn z_mask(&self) -> usize {
        self.mask(|p| matches!(p, Pauli::Z | Pauli::Y))
    }

    pub fn y_count(&self) -> usize {
        self.letters.iter().filter(|&&p| p == Pauli::Y).count()
    }

    /// Sites carrying a non-identity letter.
    pub fn support(&self) -> Vec<usize> {
        self.letters
            .iter()
            .enumerate()
            .filter(|(_, &p)| p != Pauli::I)
            .map(|(j, _)| j)
            .collect()
    }

    fn mask(&self, pred: impl Fn(Pauli) -> bool) -> usize {
        let n = self.letters.len();
        self.letters
            .iter()
            .enumerate()
            .filter(|(_, &p)| pred(p))
            .fold(0, |m, (j, _)| m | site_bit(n, j))
    }

    /// Real prefactor of `P = i^{n_Y} X^x Z^z`, or `None` for an odd number
    /// of Y letters (the string is then imaginary in the computational basis).
    pub fn real_phase(&self) -> Option<f64> {
        match self.y_count() % 4 {
            0 => Some(1.0),
            2 => Some(-1.0),
            _ => None,
        }
    }
}

impl fmt::Display for PauliTerm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:+}*", self.coefficient)?;
        for p in &self.letters {
            write!(f, "{p}")?;
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Boundary {
    #[default]
    Periodic,
}

fn default_disorder_amplitude() -> f64 {
    0.01
}

/// Parameters of the mixed-field Ising chain
/// `H = Σ_j J Z_j Z_{j+1} + h_{x,j} X_j + h_z Z_j` with periodic boundaries.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HamiltonianSpec {
    pub n_sites: usize,
    pub coupling_j: f64,
    pub field_x: f64,
    pub field_z: f64,
    #[serde(default = "default_disorder_amplitude")]
    pub disorder_amplitude: f64,
    pub disorder_seed: u64,
    #[serde(default)]
    pub boundary: Boundary,
}

impl HamiltonianSpec {
    /// The parameter point used throughout: `J = 1`, `h_x = -1.05`, `h_z = 0.5`.
    pub fn standard(n_sites: usize, disorder_seed: u64) -> Self {
        Self {
            n_sites,
            coupling_j: 1.0,
            field_x: -1.05,
            field_z: 0.5,
            disorder_amplitude: 0.01,
            disorder_seed,
            boundary: Boundary::Periodic,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_sites < 3 {
            return Err(Error::InvalidModel(format!(
                "periodic chain needs N >= 3, got {}",
                self.n_sites
            )));
        }
        if self.n_sites > 63 {
            return Err(Error::InvalidModel(format!("N = {} too large", self.n_sites)));
        }
        for (name, v) in [
            ("coupling_j", self.coupling_j),
            ("field_x", self.field_x),
            ("field_z", self.field_z),
            ("disorder_amplitude", self.disorder_amplitude),
        ] {
            if !v.is_finite() {
                return Err(Error::InvalidModel(format!("{name} is not finite")));
            }
        }
        if self.disorder_amplitude < 0.0 {
            return Err(Error::InvalidModel("disorder_amplitude must be >= 0".into()));
        }
        Ok(())
    }

    /// Realized transverse fields `h_{x,j} = h_x + r_j`.
    ///
    /// `r_j` is drawn uniformly from `[-a, a]` by a ChaCha stream keyed by
    /// `(disorder_seed, j)`, so a site's field does not depend on `N`.
    pub fn transverse_fields(&self) -> Vec<f64> {
        (0..self.n_sites)
            .map(|j| {
                let mut rng = ChaCha8Rng::seed_from_u64(self.disorder_seed);
                rng.set_stream(j as u64);
                let u: f64 = rng.random();
                self.field_x + self.disorder_amplitude * (2.0 * u - 1.0)
            })
            .collect()
    }

    /// `tr(H²)/2^N = (J² + h_z²) N + Σ_j h_{x,j}²`.
    pub fn mean_square_energy(&self) -> f64 {
        let n = self.n_sites as f64;
        (self.coupling_j.powi(2) + self.field_z.powi(2)) * n
            + self.transverse_fields().iter().map(|h| h * h).sum::<f64>()
    }

    /// Stable hex digest identifying the model.
    pub fn hash_hex(&self) -> String {
        hex_digest(&self.hash_bytes())
    }

    pub fn hash_bytes(&self) -> [u8; 32] {
        let mut h = Sha256::new();
        h.update(b"mfim-periodic-v1");
        h.update((self.n_sites as u64).to_le_bytes());
        for v in [
            self.coupling_j,
            self.field_x,
            self.field_z,
            self.disorder_amplitude,
        ] {
            h.update(v.to_bits().to_le_bytes());
        }
        h.update(self.disorder_seed.to_le_bytes());
        h.finalize().into()
    }
}

pub(crate) fn hex_digest(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// The 3N Pauli terms of the mixed-field Ising chain: N bonds, N transverse
/// fields, N longitudinal fields, in that order.
pub fn build_mfim(spec: &HamiltonianSpec) -> Result<Vec<PauliTerm>> {
    spec.validate()?;
    let n = spec.n_sites;
    let hx = spec.transverse_fields();
    let mut terms = Vec::with_capacity(3 * n);
    for j in 0..n {
        terms.push(PauliTerm::on_sites(
            spec.coupling_j,
            n,
            &[(j, Pauli::Z), ((j + 1) % n, Pauli::Z)],
        )?);
    }
    for (j, &h) in hx.iter().enumerate() {
        terms.push(PauliTerm::on_sites(h, n, &[(j, Pauli::X)])?);
    }
    for j in 0..n {
        terms.push(PauliTerm::on_sites(spec.field_z, n, &[(j, Pauli::Z)])?);
    }
    Ok(terms)
}

fn check_sizes(terms: &[PauliTerm], n_sites: usize) -> Result<()> {
    for t in terms {
        if t.n_sites() != n_sites {
            return Err(Error::DimensionMismatch {
                expected: n_sites,
                actual: t.n_sites(),
            });
        }
    }
    Ok(())
}

/// Dense `2^N × 2^N` matrix of a sum of real Pauli strings.
pub fn to_dense(terms: &[PauliTerm], n_sites: usize) -> Result<Mat<f64>> {
    if n_sites > MAX_DENSE_SITES {
        return Err(Error::TooLarge {
            n: n_sites,
            limit: MAX_DENSE_SITES,
        });
    }
    check_sizes(terms, n_sites)?;
    let dim = 1usize << n_sites;
    let mut m = Mat::<f64>::zeros(dim, dim);
    for t in terms {
        let phase = t.real_phase().ok_or_else(|| {
            Error::ComplexOperator(format!("term {t} has an odd number of Y letters"))
        })?;
        let (x, z) = (t.x_mask(), t.z_mask());
        let c = t.coefficient() * phase;
        for col in 0..dim {
            let sign = if (col & z).count_ones() % 2 == 0 { 1.0 } else { -1.0 };
            m[(col ^ x, col)] += c * sign;
        }
    }
    Ok(m)
}

/// A sum of Pauli strings compiled for matrix-free action on real vectors.
///
/// All Z-type strings are folded into one diagonal; the rest are grouped by
/// the bits they flip.
#[derive(Clone, Debug)]
pub struct RealOperator {
    n_sites: usize,
    diagonal: Vec<f64>,
    flips: Vec<FlipGroup>,
}

#[derive(Clone, Debug)]
struct FlipGroup {
    x_mask: usize,
    // (z mask, coefficient including the i^{n_Y} phase)
    terms: Vec<(usize, f64)>,
}

impl RealOperator {
    pub fn new(terms: &[PauliTerm], n_sites: usize) -> Result<Self> {
        check_sizes(terms, n_sites)?;
        if n_sites > 30 {
            return Err(Error::TooLarge { n: n_sites, limit: 30 });
        }
        let dim = 1usize << n_sites;
        let mut diagonal = vec![0.0; dim];
        let mut flips: Vec<FlipGroup> = Vec::new();
        for t in terms {
            let phase = t.real_phase().ok_or_else(|| {
                Error::ComplexOperator(format!("term {t} has an odd number of Y letters"))
            })?;
            let (x, z) = (t.x_mask(), t.z_mask());
            let c = t.coefficient() * phase;
            if x == 0 {
                for (b, d) in diagonal.iter_mut().enumerate() {
                    *d += if (b & z).count_ones() % 2 == 0 { c } else { -c };
                }
            } else if let Some(g) = flips.iter_mut().find(|g| g.x_mask == x) {
                g.terms.push((z, c));
            } else {
                flips.push(FlipGroup {
                    x_mask: x,
                    terms: vec![(z, c)],
                });
            }
        }
        Ok(Self {
            n_sites,
            diagonal,
            flips,
        })
    }

    pub fn n_sites(&self) -> usize {
        self.n_sites
    }

    pub fn dim(&self) -> usize {
        self.diagonal.len()
    }

    /// Writes `out = Op · v`.
    pub fn apply_into(&self, v: &[f64], out: &mut [f64]) {
        assert_eq!(v.len(), self.dim());
        assert_eq!(out.len(), self.dim());
        for ((o, &d), &a) in out.iter_mut().zip(&self.diagonal).zip(v) {
            *o = d * a;
        }
        for g in &self.flips {
            let x = g.x_mask;
            if let [(z, c)] = g.terms[..] {
                for (b, o) in out.iter_mut().enumerate() {
                    let src = b ^ x;
                    let s = if (src & z).count_ones() % 2 == 0 { c } else { -c };
                    *o += s * v[src];
                }
            } else {
                for (b, o) in out.iter_mut().enumerate() {
                    let src = b ^ x;
                    let mut acc = 0.0;
                    for &(z, c) in &g.terms {
                        acc += if (src & z).count_ones() % 2 == 0 { c } else { -c };
                    }
                    *o += acc * v[src];
                }
            }
        }
    }

    pub fn apply(&self, v: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; v.len()];
        self.apply_into(v, &mut out);
        out
    }

    /// `⟨v|Op|v⟩` without allocating.
    pub fn expectation(&self, v: &[f64]) -> f64 {
        assert_eq!(v.len(), self.dim());
        let mut acc: f64 = self
            .diagonal
            .iter()
            .zip(v)
            .map(|(d, a)| d * a * a)
            .sum();
        for g in &self.flips {
            for (b, &vb) in v.iter().enumerate() {
                let src = b ^ g.x_mask;
                let mut s = 0.0;
                for &(z, c) in &g.terms {
                    s += if (src & z).count_ones() % 2 == 0 { c } else { -c };
                }
                acc += vb * s * v[src];
            }
        }
        acc
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum LocalKind {
    Z,
    ZZ,
    X,
    XX,
}

impl LocalKind {
    pub const ALL: [LocalKind; 4] = [LocalKind::Z, LocalKind::ZZ, LocalKind::X, LocalKind::XX];

    pub fn label(self) -> &'static str {
        match self {
            LocalKind::Z => "Z",
            LocalKind::ZZ => "ZZ",
            LocalKind::X => "X",
            LocalKind::XX => "XX",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.label().eq_ignore_ascii_case(s))
    }
}

impl fmt::Display for LocalKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// A Hermitian observable given as a sum of Pauli strings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Observable {
    pub label: String,
    pub terms: Vec<PauliTerm>,
    pub support: Vec<usize>,
}

impl Observable {
    pub fn new(label: impl Into<String>, terms: Vec<PauliTerm>) -> Result<Self> {
        let n = terms
            .first()
            .map(PauliTerm::n_sites)
            .ok_or_else(|| Error::InvalidModel("observable without terms".into()))?;
        check_sizes(&terms, n)?;
        let mut support: Vec<usize> = terms.iter().flat_map(PauliTerm::support).collect();
        support.sort_unstable();
        support.dedup();
        Ok(Self {
            label: label.into(),
            terms,
            support,
        })
    }

    pub fn identity(n_sites: usize) -> Self {
        let t = PauliTerm::on_sites(1.0, n_sites, &[]).expect("identity term");
        Self::new("I", vec![t]).expect("identity observable")
    }

    pub fn n_sites(&self) -> usize {
        self.terms[0].n_sites()
    }

    pub fn compile(&self) -> Result<RealOperator> {
        RealOperator::new(&self.terms, self.n_sites())
    }
}

/// Local observable acting in the middle of the chain: single-site kinds on
/// site `⌊N/2⌋`, two-site kinds on `⌊N/2⌋` and `⌊N/2⌋ + 1` (0-based).
pub fn local_observable(kind: LocalKind, n_sites: usize) -> Result<Observable> {
    if n_sites < 3 {
        return Err(Error::InvalidModel(format!(
            "local observables need N >= 3, got {n_sites}"
        )));
    }
    let mid = n_sites / 2;
    let ops: Vec<(usize, Pauli)> = match kind {
        LocalKind::Z => vec![(mid, Pauli::Z)],
        LocalKind::X => vec![(mid, Pauli::X)],
        LocalKind::ZZ => vec![(mid, Pauli::Z), (mid + 1, Pauli::Z)],
        LocalKind::XX => vec![(mid, Pauli::X), (mid + 1, Pauli::X)],
    };
    let term = PauliTerm::on_sites(1.0, n_sites, &ops)?;
    Observable::new(kind.label(), vec![term])
}

#[cfg(test)]
mod tests {
    use super::*;

    fn clean(n: usize) -> HamiltonianSpec {
        HamiltonianSpec {
            disorder_amplitude: 0.0,
            ..HamiltonianSpec::standard(n, 7)
        }
    }

    fn trace(m: &Mat<f64>) -> f64 {
        (0..m.nrows()).map(|i| m[(i, i)]).sum()
    }

    #[test]
    fn n3_has_nine_traceless_terms() {
        let terms = build_mfim(&clean(3)).unwrap();
        assert_eq!(terms.len(), 9);
        let m = to_dense(&terms, 3).unwrap();
        assert_eq!(trace(&m), 0.0);
    }

    #[test]
    fn n4_second_moment() {
        let spec = clean(4);
        let m = to_dense(&build_mfim(&spec).unwrap(), 4).unwrap();
        let m2 = &m * &m;
        let val = trace(&m2) / 16.0;
        assert!((val - 9.41).abs() < 1e-12, "{val}");
        assert!((spec.mean_square_energy() - 9.41).abs() < 1e-12);
    }

    #[test]
    fn rejects_short_chains_and_nan() {
        assert!(build_mfim(&HamiltonianSpec::standard(2, 0)).is_err());
        let bad = HamiltonianSpec {
            coupling_j: f64::NAN,
            ..HamiltonianSpec::standard(4, 0)
        };
        assert!(build_mfim(&bad).is_err());
    }

    #[test]
    fn disorder_is_seeded_and_bounded() {
        let a = HamiltonianSpec::standard(9, 42).transverse_fields();
        let b = HamiltonianSpec::standard(9, 42).transverse_fields();
        assert_eq!(a, b);
        // N-independent realization
        let c = HamiltonianSpec::standard(12, 42).transverse_fields();
        assert_eq!(&c[..9], &a[..]);
        let d = HamiltonianSpec::standard(9, 43).transverse_fields();
        assert_ne!(a, d);
        assert!(a.iter().all(|h| (h + 1.05).abs() <= 0.01));
    }

    #[test]
    fn single_site_matrices() {
        // N = 1 is below the chain minimum but fine for raw terms.
        let z = to_dense(&[PauliTerm::parse(1.0, "Z").unwrap()], 1).unwrap();
        assert_eq!((z[(0, 0)], z[(1, 1)], z[(0, 1)], z[(1, 0)]), (1.0, -1.0, 0.0, 0.0));
        let x = to_dense(&[PauliTerm::parse(1.0, "X").unwrap()], 1).unwrap();
        assert_eq!((x[(0, 0)], x[(1, 1)], x[(0, 1)], x[(1, 0)]), (0.0, 0.0, 1.0, 1.0));
    }

    #[test]
    fn yy_is_real_and_y_is_rejected() {
        let yy = to_dense(&[PauliTerm::parse(1.0, "YY").unwrap()], 2).unwrap();
        // Y⊗Y = [[0,0,0,-1],[0,0,1,0],[0,1,0,0],[-1,0,0,0]]
        assert_eq!(yy[(0, 3)], -1.0);
        assert_eq!(yy[(1, 2)], 1.0);
        assert!(matches!(
            to_dense(&[PauliTerm::parse(1.0, "YI").unwrap()], 2),
            Err(Error::ComplexOperator(_))
        ));
    }

    #[test]
    fn mfim_matrix_is_symmetric() {
        let m = to_dense(&build_mfim(&HamiltonianSpec::standard(3, 1)).unwrap(), 3).unwrap();
        for i in 0..8 {
            for j in 0..8 {
                assert_eq!(m[(i, j)], m[(j, i)]);
            }
        }
    }

    #[test]
    fn kron_ordering() {
        // Z on site 0 of a 2-site chain is Z ⊗ I = diag(1, 1, -1, -1).
        let m = to_dense(&[PauliTerm::parse(1.0, "ZI").unwrap()], 2).unwrap();
        let d: Vec<f64> = (0..4).map(|i| m[(i, i)]).collect();
        assert_eq!(d, vec![1.0, 1.0, -1.0, -1.0]);
    }

    #[test]
    fn local_observables() {
        let z = local_observable(LocalKind::Z, 13).unwrap();
        assert_eq!(z.support, vec![6]);
        assert_eq!(z.terms[0].letters()[6], Pauli::Z);
        let xx = local_observable(LocalKind::XX, 4).unwrap();
        assert_eq!(xx.support, vec![2, 3]);
        for kind in LocalKind::ALL {
            let a = local_observable(kind, 5).unwrap();
            let m = to_dense(&a.terms, 5).unwrap();
            let sq = &m * &m;
            for i in 0..32 {
                for j in 0..32 {
                    let want = if i == j { 1.0 } else { 0.0 };
                    assert_eq!(sq[(i, j)], want);
                }
            }
        }
        assert!(local_observable(LocalKind::Z, 2).is_err());
    }

    #[test]
    fn compiled_action_matches_dense() {
        let spec = HamiltonianSpec::standard(6, 3);
        let mut terms = build_mfim(&spec).unwrap();
        terms.push(PauliTerm::parse(0.3, "YIYIII").unwrap());
        terms.push(PauliTerm::parse(-0.7, "XZIIYY").unwrap());
        let op = RealOperator::new(&terms, 6).unwrap();
        let dense = to_dense(&terms, 6).unwrap();
        let v: Vec<f64> = (0..64).map(|i| ((i * 37 % 11) as f64 - 5.0) / 7.0).collect();
        let got = op.apply(&v);
        for i in 0..64 {
            let want: f64 = (0..64).map(|j| dense[(i, j)] * v[j]).sum();
            assert!((got[i] - want).abs() < 1e-12);
        }
        let e: f64 = got.iter().zip(&v).map(|(a, b)| a * b).sum();
        assert!((op.expectation(&v) - e).abs() < 1e-12);
    }
}
