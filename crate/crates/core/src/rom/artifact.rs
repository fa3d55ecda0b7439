//! `basis.bin`: a small versioned container of named `f64` matrices.
//!
//! Layout (little endian): the 8-byte magic `SDREROM\0`, a `u32` format version, a `u32`
//! section count, then per section a `u32` name length, the UTF-8 name, `u64` rows,
//! `u64` cols and `rows·cols` row-major `f64` values.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use ndarray::{Array1, Array2};

use super::pod::{DeimBasis, PodBasis};
use super::reduced::{reduce_operators, DeimSetup, ReducedModel, ReducedTerm};
use crate::error::{Error, Result};
use crate::pde::SemilinearModel;

pub const MAGIC: &[u8; 8] = b"SDREROM\0";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Artifact {
    pub sections: Vec<(String, Array2<f64>)>,
}

impl Artifact {
    pub fn push(&mut self, name: impl Into<String>, value: Array2<f64>) {
        self.sections.push((name.into(), value));
    }

    pub fn get(&self, name: &str) -> Result<&Array2<f64>> {
        self.sections
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, m)| m)
            .ok_or_else(|| Error::Artifact(format!("missing section '{name}'")))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.sections.len() as u32).to_le_bytes());
        for (name, m) in &self.sections {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(m.nrows() as u64).to_le_bytes());
            out.extend_from_slice(&(m.ncols() as u64).to_le_bytes());
            for v in m.iter() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(mut bytes: &[u8]) -> Result<Self> {
        let mut magic = [0u8; 8];
        bytes.read_exact(&mut magic).map_err(truncated)?;
        if &magic != MAGIC {
            return Err(Error::Artifact("bad magic".into()));
        }
        let version = read_u32(&mut bytes)?;
        if version != FORMAT_VERSION {
            return Err(Error::Artifact(format!("unsupported format version {version}")));
        }
        let count = read_u32(&mut bytes)? as usize;
        let mut sections = Vec::with_capacity(count);
        for _ in 0..count {
            let len = read_u32(&mut bytes)? as usize;
            let mut name = vec![0u8; len];
            bytes.read_exact(&mut name).map_err(truncated)?;
            let name = String::from_utf8(name).map_err(|_| Error::Artifact("section name is not UTF-8".into()))?;
            let rows = read_u64(&mut bytes)? as usize;
            let cols = read_u64(&mut bytes)? as usize;
            let total = rows
                .checked_mul(cols)
                .filter(|t| t.saturating_mul(8) <= bytes.len())
                .ok_or_else(|| Error::Artifact(format!("section '{name}' is truncated")))?;
            let mut data = Vec::with_capacity(total);
            for _ in 0..total {
                let mut b = [0u8; 8];
                bytes.read_exact(&mut b).map_err(truncated)?;
                data.push(f64::from_le_bytes(b));
            }
            sections.push((name, Array2::from_shape_vec((rows, cols), data)?));
        }
        if !bytes.is_empty() {
            return Err(Error::Artifact("trailing bytes after last section".into()));
        }
        Ok(Artifact { sections })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut f = fs::File::create(path)?;
        f.write_all(&self.to_bytes())?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}

fn truncated(_: std::io::Error) -> Error {
    Error::Artifact("unexpected end of data".into())
}

fn read_u32(bytes: &mut &[u8]) -> Result<u32> {
    let mut b = [0u8; 4];
    bytes.read_exact(&mut b).map_err(truncated)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64(bytes: &mut &[u8]) -> Result<u64> {
    let mut b = [0u8; 8];
    bytes.read_exact(&mut b).map_err(truncated)?;
    Ok(u64::from_le_bytes(b))
}

fn row(v: &Array1<f64>) -> Array2<f64> {
    v.clone().insert_axis(ndarray::Axis(0))
}

fn push_deim(art: &mut Artifact, prefix: &str, basis: &DeimBasis) {
    art.push(format!("{prefix}.phi"), basis.phi.clone());
    art.push(
        format!("{prefix}.indices"),
        row(&Array1::from_iter(basis.indices.iter().map(|&i| i as f64))),
    );
    art.push(format!("{prefix}.singular_values"), row(&basis.singular_values));
}

fn read_deim(art: &Artifact, prefix: &str, d: usize) -> Result<DeimBasis> {
    let phi = art.get(&format!("{prefix}.phi"))?.clone();
    let raw = art.get(&format!("{prefix}.indices"))?;
    let mut indices = Vec::with_capacity(raw.len());
    for &v in raw.iter() {
        if !(v >= 0.0 && v.fract() == 0.0 && (v as usize) < d) {
            return Err(Error::Artifact(format!("{prefix}: invalid interpolation index {v}")));
        }
        indices.push(v as usize);
    }
    let mut sorted = indices.clone();
    sorted.sort_unstable();
    sorted.dedup();
    if sorted.len() != indices.len() || phi.nrows() != d || phi.ncols() != indices.len() {
        return Err(Error::Artifact(format!("{prefix}: inconsistent DEIM basis")));
    }
    let singular_values = art.get(&format!("{prefix}.singular_values"))?.row(0).to_owned();
    Ok(DeimBasis {
        phi,
        indices,
        singular_values,
    })
}

/// Serializes the offline products together with the precomputed DEIM factors.
pub fn reduced_artifact(pod: &PodBasis, setup: &DeimSetup, reduced: &ReducedModel) -> Artifact {
    let mut art = Artifact::default();
    art.push("psi", pod.psi.clone());
    art.push("psi.singular_values", row(&pod.singular_values));
    match setup {
        DeimSetup::PerTerm(bases) => {
            art.push("deim.fidelity", Array2::zeros((1, 1)));
            art.push("deim.terms", Array2::from_elem((1, 1), bases.len() as f64));
            for (j, b) in bases.iter().enumerate() {
                if let Some(b) = b {
                    push_deim(&mut art, &format!("deim.{j}"), b);
                }
            }
        }
        DeimSetup::Combined(b) => {
            art.push("deim.fidelity", Array2::ones((1, 1)));
            art.push("deim.terms", Array2::from_elem((1, 1), reduced.terms.len() as f64));
            push_deim(&mut art, "deim.shared", b);
        }
    }
    for (j, term) in reduced.terms.iter().enumerate() {
        if let ReducedTerm::Deim(t) = term {
            art.push(format!("deim.{j}.m"), t.m.clone());
        }
    }
    art
}

/// Rebuilds the reduced model from an artifact and a model rebuilt from configuration,
/// checking that the stored factors match the recomputed ones.
pub fn load_reduced(art: &Artifact, model: &SemilinearModel) -> Result<(PodBasis, DeimSetup, ReducedModel)> {
    let d = model.dim();
    let psi = art.get("psi")?.clone();
    if psi.nrows() != d {
        return Err(Error::Artifact(format!(
            "basis dimension {} does not match model dimension {d}",
            psi.nrows()
        )));
    }
    let pod = PodBasis {
        psi,
        singular_values: art.get("psi.singular_values")?.row(0).to_owned(),
    };
    let terms = art.get("deim.terms")?[[0, 0]] as usize;
    if terms != model.n_terms() {
        return Err(Error::Artifact(format!(
            "artifact has {terms} terms, model has {}",
            model.n_terms()
        )));
    }
    let setup = if art.get("deim.fidelity")?[[0, 0]] == 0.0 {
        let bases = model
            .terms
            .iter()
            .enumerate()
            .map(|(j, t)| {
                if t.is_constant() {
                    Ok(None)
                } else {
                    read_deim(art, &format!("deim.{j}"), d).map(Some)
                }
            })
            .collect::<Result<Vec<_>>>()?;
        DeimSetup::PerTerm(bases)
    } else {
        DeimSetup::Combined(read_deim(art, "deim.shared", d)?)
    };
    let reduced = reduce_operators(model, &pod, &setup)?;
    for (j, term) in reduced.terms.iter().enumerate() {
        if let ReducedTerm::Deim(t) = term {
            let stored = art.get(&format!("deim.{j}.m"))?;
            let scale = t.m.iter().fold(1.0f64, |m, v| m.max(v.abs()));
            let same_shape = stored.dim() == t.m.dim();
            if !same_shape || stored.iter().zip(t.m.iter()).any(|(a, b)| (a - b).abs() > 1e-10 * scale) {
                return Err(Error::Artifact(format!("stored DEIM factor of term {j} does not match the model")));
            }
        }
    }
    Ok((pod, setup, reduced))
}
