use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::linalg::{C64, ONE};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Spin {
    Up,
    Down,
}

/// A single creation or annihilation operator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Ladder {
    pub site: usize,
    pub spin: Spin,
    pub dagger: bool,
}

impl Ladder {
    pub fn create(site: usize, spin: Spin) -> Self {
        Self { site, spin, dagger: true }
    }

    pub fn annihilate(site: usize, spin: Spin) -> Self {
        Self { site, spin, dagger: false }
    }

    /// Jordan–Wigner mode index: the spin-up block precedes the spin-down block.
    pub fn mode(&self, sites: usize) -> usize {
        match self.spin {
            Spin::Up => self.site,
            Spin::Down => sites + self.site,
        }
    }

    fn order_key(&self) -> (usize, Spin) {
        (self.site, self.spin)
    }

    fn same_mode(&self, other: &Ladder) -> bool {
        self.site == other.site && self.spin == other.spin
    }
}

/// Product of ladder operators, applied right to left.
#[derive(Debug, Clone, PartialEq)]
pub struct FermionTerm {
    pub factors: Vec<Ladder>,
    pub coeff: C64,
}

impl FermionTerm {
    pub fn new(factors: Vec<Ladder>, coeff: C64) -> Self {
        Self { factors, coeff }
    }

    pub fn scalar(coeff: C64) -> Self {
        Self::new(Vec::new(), coeff)
    }

    pub fn number(site: usize, spin: Spin) -> Self {
        Self::new(vec![Ladder::create(site, spin), Ladder::annihilate(site, spin)], ONE)
    }

    pub fn adjoint(&self) -> Self {
        let factors = self
            .factors
            .iter()
            .rev()
            .map(|f| Ladder { dagger: !f.dagger, ..*f })
            .collect();
        Self::new(factors, self.coeff.conj())
    }

    pub fn mul(&self, other: &FermionTerm) -> FermionTerm {
        let mut factors = self.factors.clone();
        factors.extend_from_slice(&other.factors);
        FermionTerm::new(factors, self.coeff * other.coeff)
    }

    pub fn is_normal_ordered(&self) -> bool {
        let split = self.factors.iter().take_while(|f| f.dagger).count();
        let (dag, ann) = self.factors.split_at(split);
        ann.iter().all(|f| !f.dagger)
            && dag.windows(2).all(|w| w[0].order_key() < w[1].order_key())
            && ann.windows(2).all(|w| w[0].order_key() < w[1].order_key())
    }

    /// `(target, amplitude)` acting on an occupation key where mode `m` sits at
    /// bit `modes-1-m`. Returns `None` when the term annihilates the state.
    pub fn apply(&self, key: u64, sites: usize) -> Option<(u64, C64)> {
        let modes = 2 * sites;
        let mut state = key;
        let mut amp = self.coeff;
        for f in self.factors.iter().rev() {
            let m = f.mode(sites);
            let bit = 1u64 << (modes - 1 - m);
            let occupied = state & bit != 0;
            if occupied == f.dagger {
                return None;
            }
            let before = if m == 0 { 0 } else { state >> (modes - m) };
            if before.count_ones() % 2 == 1 {
                amp = -amp;
            }
            state ^= bit;
        }
        Some((state, amp))
    }

    /// Rewrites the product in canonical normal order: creators left of annihilators,
    /// each group ascending in (site, spin). Contractions from `c c† = 1 - c† c`
    /// produce additional terms.
    pub fn normal_order(&self) -> Vec<FermionTerm> {
        let mut done: BTreeMap<Vec<Ladder>, C64> = BTreeMap::new();
        let mut work = vec![self.clone()];
        while let Some(term) = work.pop() {
            if term.coeff == C64::new(0.0, 0.0) {
                continue;
            }
            let f = &term.factors;
            let mut swap_at = None;
            for k in 0..f.len().saturating_sub(1) {
                let (a, b) = (f[k], f[k + 1]);
                let out_of_order = match (a.dagger, b.dagger) {
                    (false, true) => true,
                    (true, false) => false,
                    _ => a.order_key() >= b.order_key(),
                };
                if out_of_order {
                    swap_at = Some(k);
                    break;
                }
            }
            match swap_at {
                None => *done.entry(term.factors.clone()).or_insert(C64::new(0.0, 0.0)) += term.coeff,
                Some(k) => {
                    let (a, b) = (f[k], f[k + 1]);
                    if a.dagger == b.dagger && a.same_mode(&b) {
                        continue;
                    }
                    let mut swapped = f.clone();
                    swapped.swap(k, k + 1);
                    work.push(FermionTerm::new(swapped, -term.coeff));
                    if !a.dagger && b.dagger && a.same_mode(&b) {
                        let mut contracted = f.clone();
                        contracted.drain(k..k + 2);
                        work.push(FermionTerm::new(contracted, term.coeff));
                    }
                }
            }
        }
        done.into_iter()
            .filter(|(_, c)| c.norm() > 1e-15)
            .map(|(factors, coeff)| FermionTerm::new(factors, coeff))
            .collect()
    }

    pub fn label(&self) -> String {
        self.factors
            .iter()
            .map(|f| {
                format!(
                    "c{}{}{}",
                    if f.dagger { "†" } else { "" },
                    f.site,
                    if f.spin == Spin::Up { "↑" } else { "↓" }
                )
            })
            .collect::<Vec<_>>()
            .join(" ")
    }
}
