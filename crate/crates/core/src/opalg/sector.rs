use serde::{Deserialize, Serialize};

use super::sum::{OpKind, OperatorSum, Terms};
use crate::error::{Error, Result};
use crate::linalg::{SparseMatrix, C64};

/// Symmetry sector of the Hilbert space.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Sector {
    /// `magnetization` fixes Σ Zᵢ when present.
    Spin { sites: usize, magnetization: Option<i64> },
    /// Occupation numbers per spin species; `None` leaves a species unconstrained.
    Fermion { sites: usize, n_up: Option<usize>, n_down: Option<usize> },
}

impl Sector {
    pub fn spin(sites: usize) -> Self {
        Sector::Spin { sites, magnetization: None }
    }

    pub fn spin_magnetization(sites: usize, magnetization: i64) -> Self {
        Sector::Spin { sites, magnetization: Some(magnetization) }
    }

    pub fn fermion(sites: usize, n_up: usize, n_down: usize) -> Self {
        Sector::Fermion { sites, n_up: Some(n_up), n_down: Some(n_down) }
    }

    pub fn fock(sites: usize) -> Self {
        Sector::Fermion { sites, n_up: None, n_down: None }
    }

    pub fn sites(&self) -> usize {
        match *self {
            Sector::Spin { sites, .. } | Sector::Fermion { sites, .. } => sites,
        }
    }

    /// Number of two-level modes (bits of a basis key).
    pub fn bits(&self) -> usize {
        match *self {
            Sector::Spin { sites, .. } => sites,
            Sector::Fermion { sites, .. } => 2 * sites,
        }
    }

    pub fn basis(&self) -> Basis {
        let bits = self.bits();
        assert!(bits <= 62, "at most 62 modes are supported");
        let keys: Vec<u64> = match *self {
            Sector::Spin { magnetization: None, .. } | Sector::Fermion { n_up: None, n_down: None, .. } => {
                return Basis { bits, keys: Vec::new(), full: true };
            }
            Sector::Spin { sites, magnetization: Some(m) } => {
                let diff = sites as i64 - m;
                if diff < 0 || diff % 2 != 0 || diff / 2 > sites as i64 {
                    Vec::new()
                } else {
                    let ones = (diff / 2) as u32;
                    (0..1u64 << sites).filter(|k| k.count_ones() == ones).collect()
                }
            }
            Sector::Fermion { sites, n_up, n_down } => {
                let half = |n: Option<usize>| -> Vec<u64> {
                    (0..1u64 << sites).filter(|k| n.is_none_or(|n| k.count_ones() as usize == n)).collect()
                };
                let ups = half(n_up);
                let downs = half(n_down);
                let mut keys = Vec::with_capacity(ups.len() * downs.len());
                for u in &ups {
                    for d in &downs {
                        keys.push((u << sites) | d);
                    }
                }
                keys
            }
        };
        Basis { bits, keys, full: false }
    }

    pub fn dim(&self) -> usize {
        self.basis().len()
    }
}

/// Ordered list of computational basis keys; mode `q` occupies bit `bits-1-q`.
#[derive(Debug, Clone)]
pub struct Basis {
    bits: usize,
    keys: Vec<u64>,
    full: bool,
}

impl Basis {
    pub fn len(&self) -> usize {
        if self.full {
            1usize << self.bits
        } else {
            self.keys.len()
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn bits(&self) -> usize {
        self.bits
    }

    pub fn key(&self, index: usize) -> u64 {
        if self.full {
            index as u64
        } else {
            self.keys[index]
        }
    }

    pub fn index_of(&self, key: u64) -> Option<usize> {
        if self.full {
            ((key >> self.bits) == 0).then_some(key as usize)
        } else {
            self.keys.binary_search(&key).ok()
        }
    }

    pub fn keys(&self) -> impl Iterator<Item = u64> + '_ {
        (0..self.len()).map(move |i| self.key(i))
    }
}

/// Whether out-of-sector matrix elements are an error or silently dropped.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Projection {
    Strict,
    Project,
}

/// Sparse matrix of `op` restricted to `sector`.
pub fn build_matrix(op: &OperatorSum, sector: &Sector) -> Result<SparseMatrix> {
    build_matrix_with(op, sector, Projection::Strict)
}

/// Matrix of `P op P` with `P` the projector onto `sector`.
pub fn build_matrix_projected(op: &OperatorSum, sector: &Sector) -> Result<SparseMatrix> {
    build_matrix_with(op, sector, Projection::Project)
}

pub fn build_matrix_with(op: &OperatorSum, sector: &Sector, mode: Projection) -> Result<SparseMatrix> {
    let sites = sector.sites();
    match (op.kind(), sector) {
        (OpKind::Fermion, Sector::Fermion { .. }) if op.site_count() == sites => {}
        (OpKind::Spin, _) if op.site_count() == sector.bits() => {}
        (OpKind::Fermion, Sector::Spin { .. }) => {
            return Err(Error::InvalidInput("fermion operator on a spin sector".into()))
        }
        _ => return Err(Error::DimensionMismatch { expected: sector.bits(), found: op.mode_count() }),
    }
    let basis = sector.basis();
    let dim = basis.len();
    let mut triplets = Vec::with_capacity(dim * op.len().min(64));
    let mut escaped: Vec<(u64, C64, usize)> = Vec::new();
    let spin_terms: Vec<(u64, u64, C64)> = match op.terms() {
        Terms::Spin(t) => t
            .iter()
            .map(|p| {
                let (x, z) = p.masks();
                (x, z, p.coeff * crate::linalg::I.powu(p.y_count() as u32))
            })
            .collect(),
        Terms::Fermion(_) => Vec::new(),
    };
    for col in 0..dim {
        let key = basis.key(col);
        escaped.clear();
        let mut push = |target: u64, amp: C64, term: usize| {
            if amp == C64::new(0.0, 0.0) {
                return;
            }
            match basis.index_of(target) {
                Some(row) => triplets.push((row, col, amp)),
                None => escaped.push((target, amp, term)),
            }
        };
        match op.terms() {
            Terms::Spin(_) => {
                for (k, &(x, z, c)) in spin_terms.iter().enumerate() {
                    let amp = if (key & z).count_ones() % 2 == 1 { -c } else { c };
                    push(key ^ x, amp, k);
                }
            }
            Terms::Fermion(t) => {
                for (k, f) in t.iter().enumerate() {
                    if let Some((target, amp)) = f.apply(key, sites) {
                        push(target, amp, k);
                    }
                }
            }
        }
        if mode == Projection::Strict && !escaped.is_empty() {
            escaped.sort_by_key(|e| e.0);
            let mut i = 0;
            while i < escaped.len() {
                let mut total = C64::new(0.0, 0.0);
                let mut j = i;
                while j < escaped.len() && escaped[j].0 == escaped[i].0 {
                    total += escaped[j].1;
                    j += 1;
                }
                if total.norm() > 1e-12 {
                    let term = match op.terms() {
                        Terms::Spin(t) => t[escaped[i].2].label(),
                        Terms::Fermion(t) => t[escaped[i].2].label(),
                    };
                    return Err(Error::SectorViolation { term });
                }
                i = j;
            }
        }
    }
    Ok(SparseMatrix::from_triplets(dim, dim, triplets))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn test_basis_sizes() {
        assert_eq!(Sector::fermion(4, 1, 1).dim(), 16);
        assert_eq!(Sector::fermion(8, 2, 2).dim(), 784);
        assert_eq!(Sector::spin_magnetization(4, 0).dim(), 6);
        assert_eq!(Sector::spin(3).dim(), 8);
        assert_eq!(Sector::fock(2).dim(), 16);
    }

    #[test]
    fn test_basis_is_sorted() {
        let b = Sector::fermion(3, 1, 2).basis();
        let keys: Vec<u64> = b.keys().collect();
        assert!(keys.windows(2).all(|w| w[0] < w[1]));
    }
}
