//! Mod-2 Morse chain complex: transverse index-1 flowlines plus t-gluable broken flowlines,
//! with the d^2 check and homology ranks by Gaussian elimination over Z/2.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{ObgError, Result};
use crate::flowline::{find_connections, FlowlineOptions, TorusCatalog};
use crate::morse_system::GradientField;
use crate::obg_t::{torus_verdicts, PairKind, PerturbationField, TSide};
use crate::obg_zero::label;

/// Betti numbers of the 2-torus.
pub const TORUS_RANKS: [usize; 3] = [1, 2, 1];

/// A generator: a critical point with its Morse index.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Generator {
    pub cp: usize,
    pub index: usize,
    pub location: [f64; 2],
}

/// What a single flowline or broken flowline contributes to a matrix entry.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProvenanceItem {
    /// Component labels, in flow order.
    pub components: Vec<String>,
    /// `None` for transverse flowlines; the verdict side for broken ones.
    pub side: Option<TSide>,
    /// Whether the item is counted on the chosen side.
    pub counted: bool,
    /// Set when a test hook inverted the verdict.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub tampered: bool,
}

/// `d_k : C_k -> C_{k-1}` as a 0/1 matrix; rows follow `generators[k-1]`, columns `generators[k]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Differential {
    pub degree: usize,
    pub entries: Vec<Vec<u8>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChainComplex {
    /// Critical point ids bucketed by index.
    pub generators: Vec<Vec<Generator>>,
    /// `d_1, ..., d_top`.
    pub differentials: Vec<Differential>,
    /// Keyed by `"source->target"` critical point ids.
    pub provenance: BTreeMap<String, Vec<ProvenanceItem>>,
    /// The side of `t` whose gluable brokens were counted (absent for a direct count).
    pub side: Option<TSide>,
}

impl ChainComplex {
    /// Empty differentials over the critical points of `field`.
    fn skeleton<F: GradientField>(field: &F) -> Self {
        let sys = field.system();
        let top = sys.critical_points.iter().map(|c| c.index).max().unwrap_or(0);
        let generators: Vec<Vec<Generator>> = (0..=top)
            .map(|k| {
                sys.by_index(k)
                    .into_iter()
                    .map(|i| {
                        let c = &sys.critical_points[i];
                        Generator { cp: i, index: k, location: [c.location.x, c.location.y] }
                    })
                    .collect()
            })
            .collect();
        let differentials = (1..=top)
            .map(|k| Differential { degree: k, entries: vec![vec![0; generators[k].len()]; generators[k - 1].len()] })
            .collect();
        Self { generators, differentials, provenance: BTreeMap::new(), side: None }
    }

    /// Position of critical point `cp` among the generators of its degree.
    fn slot(&self, cp: usize) -> Option<(usize, usize)> {
        self.generators
            .iter()
            .enumerate()
            .find_map(|(k, g)| g.iter().position(|x| x.cp == cp).map(|j| (k, j)))
    }

    /// Records an item and, if counted, adds it mod 2 to the `(source, target)` entry.
    fn add(&mut self, source: usize, target: usize, item: ProvenanceItem) -> Result<()> {
        let ((ks, js), (kt, jt)) = match (self.slot(source), self.slot(target)) {
            (Some(a), Some(b)) => (a, b),
            _ => return Err(ObgError::Precondition(format!("unknown critical point in {source}->{target}"))),
        };
        if ks != kt + 1 {
            return Err(ObgError::Precondition(format!("{source}->{target} does not lower the index by one")));
        }
        if item.counted {
            let e = &mut self.differentials[ks - 1].entries[jt][js];
            *e ^= 1;
        }
        self.provenance.entry(format!("{source}->{target}")).or_default().push(item);
        Ok(())
    }

    /// Counted items behind the `(source, target)` entry.
    pub fn counted(&self, source: usize, target: usize) -> usize {
        self.provenance
            .get(&format!("{source}->{target}"))
            .map_or(0, |v| v.iter().filter(|i| i.counted).count())
    }

    /// Checks `d_{k-1} d_k = 0` for every degree.
    pub fn check_d_squared(&self) -> Result<()> {
        for w in self.differentials.windows(2) {
            let (lo, hi) = (&w[0], &w[1]);
            for (row, r) in lo.entries.iter().enumerate() {
                for col in 0..hi.entries.first().map_or(0, |x| x.len()) {
                    let v = r.iter().zip(&hi.entries).fold(0u8, |acc, (&a, h)| acc ^ (a & h[col]));
                    if v != 0 {
                        return Err(ObgError::DSquaredNonzero { degree: hi.degree, row, col });
                    }
                }
            }
        }
        Ok(())
    }
}

/// Rank over Z/2 by Gaussian elimination.
pub fn rank_mod2(m: &[Vec<u8>]) -> usize {
    let mut a: Vec<Vec<u8>> = m.iter().map(|r| r.iter().map(|x| x & 1).collect()).collect();
    let cols = a.first().map_or(0, |r| r.len());
    let mut rank = 0;
    for c in 0..cols {
        let Some(p) = (rank..a.len()).find(|&i| a[i][c] == 1) else { continue };
        a.swap(rank, p);
        for i in 0..a.len() {
            if i != rank && a[i][c] == 1 {
                let pivot = a[rank].clone();
                for (x, y) in a[i].iter_mut().zip(&pivot) {
                    *x ^= y;
                }
            }
        }
        rank += 1;
    }
    rank
}

/// `dim ker d_k - rank d_{k+1}` in every degree, after checking `d^2 = 0`.
pub fn homology_ranks(c: &ChainComplex) -> Result<Vec<usize>> {
    c.check_d_squared()?;
    let n = c.generators.len();
    let ranks: Vec<usize> = c.differentials.iter().map(|d| rank_mod2(&d.entries)).collect();
    Ok((0..n)
        .map(|k| {
            let out = if k == 0 { 0 } else { ranks[k - 1] };
            let inc = if k + 1 < n { ranks[k] } else { 0 };
            c.generators[k].len() - out - inc
        })
        .collect())
}

/// Homology ranks, failing with `HomologyMismatch` unless they equal `expected`.
pub fn expect_ranks(c: &ChainComplex, expected: &[usize]) -> Result<Vec<usize>> {
    let found = homology_ranks(c)?;
    if found != expected {
        return Err(ObgError::HomologyMismatch { found, expected: expected.to_vec() });
    }
    Ok(found)
}

/// Adds every connection between critical points of consecutive index in `field`.
fn add_transverse<F: GradientField>(c: &mut ChainComplex, field: &F, opts: &FlowlineOptions) -> Result<()> {
    let sys = field.system();
    for k in 1..c.generators.len() {
        for s in c.generators[k].iter().map(|g| g.cp).collect::<Vec<_>>() {
            for t in c.generators[k - 1].iter().map(|g| g.cp).collect::<Vec<_>>() {
                if sys.critical_points[s].value <= sys.critical_points[t].value {
                    continue;
                }
                for u in find_connections(field, s, t, opts)? {
                    c.add(s, t, ProvenanceItem { components: vec![label(&u)], side: None, counted: true, tampered: false })?;
                }
            }
        }
    }
    Ok(())
}

/// The complex counting transverse flowlines of `field` directly (no broken flowlines).
/// For a Morse-Smale field this is the ordinary Morse complex.
pub fn morse_smale_complex<F: GradientField>(field: &F, opts: &FlowlineOptions) -> Result<ChainComplex> {
    let mut c = ChainComplex::skeleton(field);
    add_transverse(&mut c, field, opts)?;
    Ok(c)
}

/// The torus complex for the perturbation `perts`: transverse flowlines of the unperturbed
/// field plus each broken `(u_-, u_0)` / `(u_0, u_+)` whose t-gluing side equals `side`.
///
/// `tamper = Some(n)` inverts the verdict of the `n`-th broken flowline (a negative-test hook).
pub fn build_complex<F: GradientField>(
    field: &F,
    cat: &TorusCatalog,
    perts: &[PerturbationField; 2],
    side: TSide,
    a: u32,
    opts: &FlowlineOptions,
    tamper: Option<usize>,
) -> Result<ChainComplex> {
    let mut c = ChainComplex::skeleton(field);
    c.side = Some(side);
    add_transverse(&mut c, field, opts)?;
    for (n, (v, other, z)) in torus_verdicts(field, cat, perts, a)?.into_iter().enumerate() {
        let tampered = tamper == Some(n);
        let counted = (v.side == side) != tampered;
        let (source, target) = match v.kind {
            PairKind::MinusZero => (cat.u_minus[other].source, cat.u_zero[z].target),
            PairKind::ZeroPlus => (cat.u_zero[z].source, cat.u_plus[other].target),
        };
        c.add(source, target, ProvenanceItem { components: v.pair.to_vec(), side: Some(v.side), counted, tampered })?;
    }
    Ok(c)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rank_of_small_matrices() {
        assert_eq!(rank_mod2(&[vec![1, 1], vec![1, 1]]), 1);
        assert_eq!(rank_mod2(&[vec![1, 0], vec![0, 1]]), 2);
        assert_eq!(rank_mod2(&[vec![0, 0]]), 0);
        assert_eq!(rank_mod2(&[vec![1, 1, 0], vec![0, 1, 1], vec![1, 0, 1]]), 2);
    }
}
