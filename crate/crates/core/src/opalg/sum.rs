use std::collections::BTreeMap;
use std::ops::{Add, Mul, Neg, Sub};

use serde::{Deserialize, Serialize};

use super::fermion::{FermionTerm, Ladder, Spin};
use super::pauli::{Pauli, PauliString};
use crate::error::{Error, Result};
use crate::linalg::{C64, ONE, ZERO};

const DROP_TOL: f64 = 1e-14;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OpKind {
    Spin,
    Fermion,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Terms {
    Spin(Vec<PauliString>),
    Fermion(Vec<FermionTerm>),
}

/// Weighted sum of Pauli strings or fermionic products on `site_count` sites.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "OperatorDoc", try_from = "OperatorDoc")]
pub struct OperatorSum {
    site_count: usize,
    terms: Terms,
}

impl OperatorSum {
    pub fn zero(kind: OpKind, site_count: usize) -> Self {
        let terms = match kind {
            OpKind::Spin => Terms::Spin(Vec::new()),
            OpKind::Fermion => Terms::Fermion(Vec::new()),
        };
        Self { site_count, terms }
    }

    pub fn identity(kind: OpKind, site_count: usize) -> Self {
        match kind {
            OpKind::Spin => Self::from_paulis(site_count, vec![PauliString::identity(site_count)]),
            OpKind::Fermion => Self::from_fermion(site_count, vec![FermionTerm::scalar(ONE)]),
        }
    }

    pub fn from_paulis(site_count: usize, terms: Vec<PauliString>) -> Self {
        for t in &terms {
            assert_eq!(t.len(), site_count, "Pauli string length must equal site count");
        }
        Self { site_count, terms: Terms::Spin(terms) }
    }

    pub fn from_fermion(site_count: usize, terms: Vec<FermionTerm>) -> Self {
        for t in &terms {
            for f in &t.factors {
                assert!(f.site < site_count, "fermion site out of range");
            }
        }
        Self { site_count, terms: Terms::Fermion(terms) }
    }

    /// Single Pauli letter on one site.
    pub fn pauli(site_count: usize, site: usize, letter: Pauli) -> Self {
        Self::from_paulis(site_count, vec![PauliString::from_sites(site_count, &[(site, letter)], ONE)])
    }

    /// Parses a label such as `"XZI"` into a single-term sum.
    pub fn parse_pauli(label: &str, coeff: f64) -> Result<Self> {
        let p = PauliString::parse(label, C64::new(coeff, 0.0))?;
        Ok(Self::from_paulis(p.len(), vec![p]))
    }

    pub fn kind(&self) -> OpKind {
        match self.terms {
            Terms::Spin(_) => OpKind::Spin,
            Terms::Fermion(_) => OpKind::Fermion,
        }
    }

    pub fn site_count(&self) -> usize {
        self.site_count
    }

    /// Number of two-level modes the operator acts on.
    pub fn mode_count(&self) -> usize {
        match self.kind() {
            OpKind::Spin => self.site_count,
            OpKind::Fermion => 2 * self.site_count,
        }
    }

    pub fn terms(&self) -> &Terms {
        &self.terms
    }

    pub fn paulis(&self) -> &[PauliString] {
        match &self.terms {
            Terms::Spin(t) => t,
            Terms::Fermion(_) => &[],
        }
    }

    pub fn fermion_terms(&self) -> &[FermionTerm] {
        match &self.terms {
            Terms::Fermion(t) => t,
            Terms::Spin(_) => &[],
        }
    }

    pub fn len(&self) -> usize {
        match &self.terms {
            Terms::Spin(t) => t.len(),
            Terms::Fermion(t) => t.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn check_compatible(&self, other: &Self) {
        assert_eq!(self.kind(), other.kind(), "operator kinds differ");
        assert_eq!(self.site_count, other.site_count, "site counts differ");
    }

    pub fn scale(&self, s: C64) -> Self {
        let mut out = self.clone();
        match &mut out.terms {
            Terms::Spin(t) => t.iter_mut().for_each(|p| p.coeff *= s),
            Terms::Fermion(t) => t.iter_mut().for_each(|f| f.coeff *= s),
        }
        out
    }

    pub fn scale_real(&self, s: f64) -> Self {
        self.scale(C64::new(s, 0.0))
    }

    pub fn adjoint(&self) -> Self {
        let terms = match &self.terms {
            Terms::Spin(t) => Terms::Spin(t.iter().map(PauliString::adjoint).collect()),
            Terms::Fermion(t) => Terms::Fermion(t.iter().map(FermionTerm::adjoint).collect()),
        };
        Self { site_count: self.site_count, terms }
    }

    pub fn product(&self, other: &Self) -> Self {
        self.check_compatible(other);
        let terms = match (&self.terms, &other.terms) {
            (Terms::Spin(a), Terms::Spin(b)) => {
                Terms::Spin(a.iter().flat_map(|x| b.iter().map(move |y| x.mul(y))).collect())
            }
            (Terms::Fermion(a), Terms::Fermion(b)) => {
                Terms::Fermion(a.iter().flat_map(|x| b.iter().map(move |y| x.mul(y))).collect())
            }
            _ => unreachable!(),
        };
        Self { site_count: self.site_count, terms }.simplify()
    }

    pub fn commutator(&self, other: &Self) -> Self {
        &self.product(other) - &other.product(self)
    }

    pub fn anticommutator(&self, other: &Self) -> Self {
        &self.product(other) + &other.product(self)
    }

    /// Merges duplicate terms (fermion terms are normal ordered first) and drops
    /// negligible weights. Output order is deterministic.
    pub fn simplify(&self) -> Self {
        let terms = match &self.terms {
            Terms::Spin(t) => {
                let mut acc: BTreeMap<Vec<Pauli>, C64> = BTreeMap::new();
                for p in t {
                    *acc.entry(p.letters().to_vec()).or_insert(ZERO) += p.coeff;
                }
                Terms::Spin(
                    acc.into_iter()
                        .filter(|(_, c)| c.norm() > DROP_TOL)
                        .map(|(l, c)| PauliString::new(l, c))
                        .collect(),
                )
            }
            Terms::Fermion(t) => {
                let mut acc: BTreeMap<Vec<Ladder>, C64> = BTreeMap::new();
                for f in t {
                    for n in f.normal_order() {
                        *acc.entry(n.factors).or_insert(ZERO) += n.coeff;
                    }
                }
                Terms::Fermion(
                    acc.into_iter()
                        .filter(|(_, c)| c.norm() > DROP_TOL)
                        .map(|(l, c)| FermionTerm::new(l, c))
                        .collect(),
                )
            }
        };
        Self { site_count: self.site_count, terms }
    }

    pub fn is_hermitian(&self) -> bool {
        (self - &self.adjoint()).simplify().is_empty()
    }

    /// Largest absolute coefficient.
    pub fn max_coeff(&self) -> f64 {
        match &self.terms {
            Terms::Spin(t) => t.iter().fold(0.0, |m, p| m.max(p.coeff.norm())),
            Terms::Fermion(t) => t.iter().fold(0.0, |m, f| m.max(f.coeff.norm())),
        }
    }

    /// Sum of absolute coefficients, an upper bound on the operator norm.
    pub fn l1_norm(&self) -> f64 {
        match &self.terms {
            Terms::Spin(t) => t.iter().map(|p| p.coeff.norm()).sum(),
            Terms::Fermion(t) => t.iter().map(|f| f.coeff.norm()).sum(),
        }
    }

    /// Jordan–Wigner image on `2·site_count` qubits. Spin operators are returned unchanged.
    pub fn jordan_wigner(&self) -> Self {
        let Terms::Fermion(terms) = &self.terms else {
            return self.clone();
        };
        let sites = self.site_count;
        let modes = 2 * sites;
        let ladder_image = |f: &Ladder| -> OperatorSum {
            let m = f.mode(sites);
            let mut zs: Vec<(usize, Pauli)> = (0..m).map(|q| (q, Pauli::Z)).collect();
            zs.push((m, Pauli::X));
            let x_part = PauliString::from_sites(modes, &zs, C64::new(0.5, 0.0));
            zs.pop();
            zs.push((m, Pauli::Y));
            // annihilator (X + iY)/2 empties |1⟩; creator (X - iY)/2
            let y_sign = if f.dagger { -0.5 } else { 0.5 };
            let y_part = PauliString::from_sites(modes, &zs, C64::new(0.0, y_sign));
            OperatorSum::from_paulis(modes, vec![x_part, y_part])
        };
        let mut total = OperatorSum::zero(OpKind::Spin, modes);
        for t in terms {
            let mut prod = OperatorSum::from_paulis(modes, vec![PauliString::new(vec![Pauli::I; modes], t.coeff)]);
            for f in &t.factors {
                prod = prod.product(&ladder_image(f));
            }
            total = &total + &prod;
        }
        total.simplify()
    }
}

impl Add for &OperatorSum {
    type Output = OperatorSum;
    fn add(self, rhs: &OperatorSum) -> OperatorSum {
        self.check_compatible(rhs);
        let terms = match (&self.terms, &rhs.terms) {
            (Terms::Spin(a), Terms::Spin(b)) => Terms::Spin(a.iter().chain(b).cloned().collect()),
            (Terms::Fermion(a), Terms::Fermion(b)) => Terms::Fermion(a.iter().chain(b).cloned().collect()),
            _ => unreachable!(),
        };
        OperatorSum { site_count: self.site_count, terms }
    }
}

impl Sub for &OperatorSum {
    type Output = OperatorSum;
    fn sub(self, rhs: &OperatorSum) -> OperatorSum {
        self + &rhs.scale(-ONE)
    }
}

impl Neg for &OperatorSum {
    type Output = OperatorSum;
    fn neg(self) -> OperatorSum {
        self.scale(-ONE)
    }
}

impl Mul<f64> for &OperatorSum {
    type Output = OperatorSum;
    fn mul(self, rhs: f64) -> OperatorSum {
        self.scale_real(rhs)
    }
}

impl Mul<C64> for &OperatorSum {
    type Output = OperatorSum;
    fn mul(self, rhs: C64) -> OperatorSum {
        self.scale(rhs)
    }
}

impl Mul for &OperatorSum {
    type Output = OperatorSum;
    fn mul(self, rhs: &OperatorSum) -> OperatorSum {
        self.product(rhs)
    }
}

/// Linear combination `Σ w_k A_k` of compatible operators.
pub fn linear_combination(ops: &[OperatorSum], weights: &[f64]) -> OperatorSum {
    assert_eq!(ops.len(), weights.len());
    assert!(!ops.is_empty(), "empty combination");
    let mut total = OperatorSum::zero(ops[0].kind(), ops[0].site_count());
    for (op, &w) in ops.iter().zip(weights) {
        if w != 0.0 {
            total = &total + &op.scale_real(w);
        }
    }
    total
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TermDoc {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    letters: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    factors: Option<Vec<(usize, Spin, bool)>>,
    re: f64,
    im: f64,
}

/// Interchange document `{kind, siteCount, terms:[{letters|factors, re, im}]}`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OperatorDoc {
    kind: OpKind,
    #[serde(rename = "siteCount")]
    site_count: usize,
    terms: Vec<TermDoc>,
}

impl From<OperatorSum> for OperatorDoc {
    fn from(op: OperatorSum) -> Self {
        let terms = match &op.terms {
            Terms::Spin(t) => t
                .iter()
                .map(|p| TermDoc { letters: Some(p.label()), factors: None, re: p.coeff.re, im: p.coeff.im })
                .collect(),
            Terms::Fermion(t) => t
                .iter()
                .map(|f| TermDoc {
                    letters: None,
                    factors: Some(f.factors.iter().map(|l| (l.site, l.spin, l.dagger)).collect()),
                    re: f.coeff.re,
                    im: f.coeff.im,
                })
                .collect(),
        };
        OperatorDoc { kind: op.kind(), site_count: op.site_count, terms }
    }
}

impl TryFrom<OperatorDoc> for OperatorSum {
    type Error = Error;
    fn try_from(doc: OperatorDoc) -> Result<Self> {
        let n = doc.site_count;
        match doc.kind {
            OpKind::Spin => {
                let mut out = Vec::with_capacity(doc.terms.len());
                for t in doc.terms {
                    let label = t
                        .letters
                        .ok_or_else(|| Error::InvalidInput("spin term without letters".into()))?;
                    let p = PauliString::parse(&label, C64::new(t.re, t.im))?;
                    if p.len() != n {
                        return Err(Error::DimensionMismatch { expected: n, found: p.len() });
                    }
                    out.push(p);
                }
                Ok(OperatorSum::from_paulis(n, out))
            }
            OpKind::Fermion => {
                let mut out = Vec::with_capacity(doc.terms.len());
                for t in doc.terms {
                    let f = t
                        .factors
                        .ok_or_else(|| Error::InvalidInput("fermion term without factors".into()))?;
                    let mut factors = Vec::with_capacity(f.len());
                    for (site, spin, dagger) in f {
                        if site >= n {
                            return Err(Error::IndexOutOfRange { index: site, limit: n });
                        }
                        factors.push(Ladder { site, spin, dagger });
                    }
                    out.push(FermionTerm::new(factors, C64::new(t.re, t.im)));
                }
                Ok(OperatorSum::from_fermion(n, out))
            }
        }
    }
}
