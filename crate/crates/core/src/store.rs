//! Binary spectrum files.
//!
//! Layout (all integers and floats little-endian):
//!
//! | bytes | content |
//! |-------|---------|
//! | 8     | magic `VMESPEC\0` |
//! | 4     | format version (`u32`, currently 1) |
//! | 4     | number of sites `N` (`u32`) |
//! | 32    | SHA-256 of the Hamiltonian specification |
//! | 32    | SHA-256 of the payload below |
//! | 8·2^N | energies, ascending |
//! | 8·4^N | eigenvectors, column-major |
//!
//! Files are written to a temporary name and renamed into place. Reading
//! verifies the payload hash, so a truncated or corrupted file is refused.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::spectral::Spectrum;

pub const MAGIC: &[u8; 8] = b"VMESPEC\0";
pub const FORMAT_VERSION: u32 = 1;
const HEADER_LEN: usize = 8 + 4 + 4 + 32 + 32;

fn payload_bytes(spec: &Spectrum) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 * (spec.dim() + spec.dim() * spec.dim()));
    for v in spec.energies().iter().chain(spec.basis_column_major()) {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn write_spectrum(path: &Path, spec: &Spectrum) -> Result<()> {
    let payload = payload_bytes(spec);
    let digest: [u8; 32] = Sha256::digest(&payload).into();
    let tmp = path.with_extension("tmp");
    {
        let mut w = BufWriter::new(fs::File::create(&tmp)?);
        w.write_all(MAGIC)?;
        w.write_all(&FORMAT_VERSION.to_le_bytes())?;
        w.write_all(&(spec.n_sites() as u32).to_le_bytes())?;
        w.write_all(spec.model_hash())?;
        w.write_all(&digest)?;
        w.write_all(&payload)?;
        w.into_inner().map_err(|e| e.into_error())?.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

/// Reads a spectrum, checking magic, version, size, payload hash and, when
/// given, the expected Hamiltonian hash.
pub fn read_spectrum(path: &Path, expected_model: Option<&[u8; 32]>) -> Result<Spectrum> {
    let bytes = fs::read(path)?;
    let bad = |m: &str| Error::SpectrumFile(format!("{}: {m}", path.display()));
    if bytes.len() < HEADER_LEN || &bytes[..8] != MAGIC {
        return Err(bad("not a spectrum file"));
    }
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
    let version = u32_at(8);
    if version != FORMAT_VERSION {
        return Err(bad(&format!("unsupported format version {version}")));
    }
    let n = u32_at(12) as usize;
    if n == 0 || n > crate::model::MAX_DENSE_SITES {
        return Err(bad(&format!("implausible site count {n}")));
    }
    let model: [u8; 32] = bytes[16..48].try_into().unwrap();
    let digest: [u8; 32] = bytes[48..80].try_into().unwrap();
    if let Some(want) = expected_model {
        if want != &model {
            return Err(bad("Hamiltonian hash does not match the requested model"));
        }
    }
    let dim = 1usize << n;
    let payload = &bytes[HEADER_LEN..];
    if payload.len() != 8 * (dim + dim * dim) {
        return Err(bad("payload length does not match the header"));
    }
    let actual: [u8; 32] = Sha256::digest(payload).into();
    if actual != digest {
        return Err(bad("payload hash mismatch (file is corrupted)"));
    }
    let mut floats = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()));
    let energies: Vec<f64> = floats.by_ref().take(dim).collect();
    let basis: Vec<f64> = floats.collect();
    Spectrum::from_parts(n, energies, basis, model)
}
