use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{C64, I, ONE};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Pauli {
    I,
    X,
    Y,
    Z,
}

impl Pauli {
    pub fn from_char(c: char) -> Result<Self> {
        match c.to_ascii_uppercase() {
            'I' => Ok(Pauli::I),
            'X' => Ok(Pauli::X),
            'Y' => Ok(Pauli::Y),
            'Z' => Ok(Pauli::Z),
            other => Err(Error::InvalidInput(format!("unknown Pauli letter {other:?}"))),
        }
    }

    pub fn to_char(self) -> char {
        match self {
            Pauli::I => 'I',
            Pauli::X => 'X',
            Pauli::Y => 'Y',
            Pauli::Z => 'Z',
        }
    }

    /// Single-site product `self · other = phase · letter`.
    pub fn mul(self, other: Pauli) -> (C64, Pauli) {
        use Pauli::*;
        match (self, other) {
            (I, p) | (p, I) => (ONE, p),
            (a, b) if a == b => (ONE, I),
            (X, Y) => (I_UNIT, Z),
            (Y, X) => (-I_UNIT, Z),
            (Y, Z) => (I_UNIT, X),
            (Z, Y) => (-I_UNIT, X),
            (Z, X) => (I_UNIT, Y),
            (X, Z) => (-I_UNIT, Y),
            _ => unreachable!(),
        }
    }

    /// 2×2 matrix in the basis (|0⟩, |1⟩) with Z|0⟩ = |0⟩.
    pub fn matrix(self) -> [[C64; 2]; 2] {
        let z = C64::new(0.0, 0.0);
        match self {
            Pauli::I => [[ONE, z], [z, ONE]],
            Pauli::X => [[z, ONE], [ONE, z]],
            Pauli::Y => [[z, -I], [I, z]],
            Pauli::Z => [[ONE, z], [z, -ONE]],
        }
    }
}

const I_UNIT: C64 = I;

/// Tensor product of single-site Pauli letters with a complex weight.
/// Site 0 is the leftmost tensor factor (most significant bit of a basis index).
#[derive(Debug, Clone, PartialEq)]
pub struct PauliString {
    letters: Vec<Pauli>,
    pub coeff: C64,
}

impl PauliString {
    pub fn new(letters: Vec<Pauli>, coeff: C64) -> Self {
        Self { letters, coeff }
    }

    pub fn identity(n: usize) -> Self {
        Self::new(vec![Pauli::I; n], ONE)
    }

    pub fn parse(label: &str, coeff: C64) -> Result<Self> {
        let letters = label.chars().map(Pauli::from_char).collect::<Result<Vec<_>>>()?;
        Ok(Self::new(letters, coeff))
    }

    /// Letters placed at given sites, identity elsewhere.
    pub fn from_sites(n: usize, sites: &[(usize, Pauli)], coeff: C64) -> Self {
        let mut letters = vec![Pauli::I; n];
        for &(s, p) in sites {
            letters[s] = p;
        }
        Self::new(letters, coeff)
    }

    pub fn len(&self) -> usize {
        self.letters.len()
    }

    pub fn is_empty(&self) -> bool {
        self.letters.is_empty()
    }

    pub fn letters(&self) -> &[Pauli] {
        &self.letters
    }

    pub fn label(&self) -> String {
        self.letters.iter().map(|p| p.to_char()).collect()
    }

    pub fn weight(&self) -> usize {
        self.letters.iter().filter(|&&p| p != Pauli::I).count()
    }

    /// (flip mask, phase mask) with site q mapped to bit `n-1-q`.
    pub fn masks(&self) -> (u64, u64) {
        let n = self.letters.len();
        let mut x = 0u64;
        let mut z = 0u64;
        for (q, p) in self.letters.iter().enumerate() {
            let bit = 1u64 << (n - 1 - q);
            match p {
                Pauli::X => x |= bit,
                Pauli::Y => {
                    x |= bit;
                    z |= bit
                }
                Pauli::Z => z |= bit,
                Pauli::I => {}
            }
        }
        (x, z)
    }

    pub fn y_count(&self) -> usize {
        self.letters.iter().filter(|&&p| p == Pauli::Y).count()
    }

    /// `(target, amplitude)` with `P|key⟩ = amplitude |target⟩`.
    pub fn apply(&self, key: u64) -> (u64, C64) {
        let (x, z) = self.masks();
        let mut amp = self.coeff * I.powu(self.y_count() as u32);
        if (key & z).count_ones() % 2 == 1 {
            amp = -amp;
        }
        (key ^ x, amp)
    }

    pub fn adjoint(&self) -> Self {
        Self::new(self.letters.clone(), self.coeff.conj())
    }

    pub fn mul(&self, other: &PauliString) -> PauliString {
        assert_eq!(self.len(), other.len(), "Pauli product length");
        let mut coeff = self.coeff * other.coeff;
        let letters = self
            .letters
            .iter()
            .zip(&other.letters)
            .map(|(&a, &b)| {
                let (ph, p) = a.mul(b);
                coeff *= ph;
                p
            })
            .collect();
        PauliString::new(letters, coeff)
    }

    pub fn commutes_with(&self, other: &PauliString) -> bool {
        let anti = self
            .letters
            .iter()
            .zip(&other.letters)
            .filter(|(&a, &b)| a != Pauli::I && b != Pauli::I && a != b)
            .count();
        anti % 2 == 0
    }
}

impl fmt::Display for PauliString {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}{:+}i)·{}", self.coeff.re, self.coeff.im, self.label())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn test_single_site_products() {
        let (ph, p) = Pauli::X.mul(Pauli::Y);
        assert_eq!((ph, p), (I, Pauli::Z));
        let (ph, p) = Pauli::Z.mul(Pauli::X);
        assert_eq!((ph, p), (I, Pauli::Y));
    }

    #[test]
    fn test_apply_y() {
        let y = PauliString::parse("Y", ONE).unwrap();
        assert_eq!(y.apply(0), (1, I));
        assert_eq!(y.apply(1), (0, -I));
    }

    #[test]
    fn test_commutation() {
        let a = PauliString::parse("XZ", ONE).unwrap();
        let b = PauliString::parse("ZX", ONE).unwrap();
        let c = PauliString::parse("ZI", ONE).unwrap();
        assert!(a.commutes_with(&b));
        assert!(!a.commutes_with(&c));
    }
}
