//! Piecewise-constant material coefficients.

use super::Mesh;
use crate::error::{Error, Result};

/// Per-triangle material data: permittivity `eps`, conductivity `sigma`, and
/// inverse permeability `nu`.
#[derive(Debug, Clone)]
pub struct MaterialField {
    pub eps: Vec<f64>,
    pub sigma: Vec<f64>,
    pub nu: Vec<f64>,
}

impl MaterialField {
    /// Builds the field by mapping each triangle's label to
    /// `(eps, sigma, nu)`.
    pub fn from_labels(mesh: &Mesh, mut f: impl FnMut(u32) -> (f64, f64, f64)) -> Result<Self> {
        let mut eps = Vec::with_capacity(mesh.n_triangles());
        let mut sigma = Vec::with_capacity(mesh.n_triangles());
        let mut nu = Vec::with_capacity(mesh.n_triangles());
        for (t, &label) in mesh.labels.iter().enumerate() {
            let (e, s, n) = f(label);
            if !(e > 0.0) || !(n > 0.0) || !(s >= 0.0) || !e.is_finite() || !s.is_finite() || !n.is_finite() {
                return Err(Error::Config(format!(
                    "invalid material on triangle {t} (label {label}): eps = {e}, sigma = {s}, nu = {n}; \
                     need eps > 0, nu > 0, sigma >= 0"
                )));
            }
            eps.push(e);
            sigma.push(s);
            nu.push(n);
        }
        Ok(Self { eps, sigma, nu })
    }

    /// Uniform material (useful in tests).
    pub fn uniform(mesh: &Mesh, eps: f64, sigma: f64, nu: f64) -> Result<Self> {
        Self::from_labels(mesh, |_| (eps, sigma, nu))
    }

    pub fn len(&self) -> usize {
        self.eps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.eps.is_empty()
    }

    /// Whether the conductivity is identically zero.
    pub fn sigma_is_zero(&self) -> bool {
        self.sigma.iter().all(|&s| s == 0.0)
    }
}
