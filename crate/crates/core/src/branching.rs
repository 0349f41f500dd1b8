//! Branching structure of the excitation matrix.
//!
//! Because every kernel integrates to one, the branching matrix `Gamma` has
//! the same entries as the jump-size matrix. It is block diagonal over block
//! pair couples `{bp(a,b), bp(b,a)}`, and inside a couple every pair of the
//! same block pair sends (and receives) the same total excitation to each of
//! the two groups. That equitable structure reduces each couple to a 1x1
//! (diagonal) or 2x2 quotient matrix.

use crate::model::{ExcitationType as X, Membership, MulchModel};

/// Unordered block pair `{a, b}` with `a <= b`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Couple {
    pub a: usize,
    pub b: usize,
}

impl Couple {
    pub fn is_diagonal(&self) -> bool {
        self.a == self.b
    }

    /// Ordered block pairs forming the couple: `[(a,b)]` or `[(a,b), (b,a)]`.
    pub fn groups(&self) -> Vec<(usize, usize)> {
        if self.is_diagonal() {
            vec![(self.a, self.a)]
        } else {
            vec![(self.a, self.b), (self.b, self.a)]
        }
    }
}

/// All couples of a `k`-block model, diagonal ones first per row.
pub fn couples(k: usize) -> Vec<Couple> {
    let mut out = Vec::with_capacity(k * (k + 1) / 2);
    for a in 0..k {
        for b in a..k {
            out.push(Couple { a, b });
        }
    }
    out
}

/// Total excitation one event in block pair `src` sends to all pairs of `dst`.
///
/// `dst` must be `src` or its reverse.
pub fn group_row_sum(
    model: &MulchModel,
    sizes: &[usize],
    src: (usize, usize),
    dst: (usize, usize),
) -> f64 {
    let (a, b) = src;
    let (na, nb) = (sizes[a] as f64, sizes[b] as f64);
    let alpha = &model.params(dst.0, dst.1).alpha;
    if a == b {
        debug_assert_eq!(dst, src);
        let others = (na - 2.0).max(0.0);
        return alpha[X::SelfExcitation]
            + alpha[X::Reciprocal]
            + others
                * (alpha[X::TurnContinuation]
                    + alpha[X::GeneralizedReciprocity]
                    + alpha[X::AlliedContinuation]
                    + alpha[X::AlliedReciprocity]);
    }
    if dst == src {
        alpha[X::SelfExcitation]
            + alpha[X::TurnContinuation] * (nb - 1.0)
            + alpha[X::AlliedContinuation] * (na - 1.0)
    } else {
        debug_assert_eq!(dst, (b, a));
        alpha[X::Reciprocal]
            + alpha[X::GeneralizedReciprocity] * (na - 1.0)
            + alpha[X::AlliedReciprocity] * (nb - 1.0)
    }
}

/// Quotient matrix of one couple, indexed like [`Couple::groups`].
pub fn quotient_matrix(model: &MulchModel, sizes: &[usize], couple: Couple) -> Vec<Vec<f64>> {
    let groups = couple.groups();
    groups
        .iter()
        .map(|&g| {
            groups
                .iter()
                .map(|&h| group_row_sum(model, sizes, g, h))
                .collect()
        })
        .collect()
}

/// Whether a couple contains at least one node pair.
pub fn couple_is_populated(sizes: &[usize], couple: Couple) -> bool {
    Membership::pair_count(sizes, couple.a, couple.b) > 0
}

/// Perron root of a 1x1 or 2x2 nonnegative matrix.
pub fn perron_root(m: &[Vec<f64>]) -> f64 {
    match m.len() {
        1 => m[0][0],
        2 => {
            let tr = m[0][0] + m[1][1];
            let gap = m[0][0] - m[1][1];
            let disc = (gap * gap + 4.0 * m[0][1] * m[1][0]).max(0.0);
            0.5 * (tr + disc.sqrt())
        }
        _ => unreachable!("couples have one or two groups"),
    }
}

/// Spectral radius of the branching matrix restricted to one couple.
pub fn couple_radius(model: &MulchModel, sizes: &[usize], couple: Couple) -> f64 {
    if !couple_is_populated(sizes, couple) {
        return 0.0;
    }
    perron_root(&quotient_matrix(model, sizes, couple))
}

/// Stationary mean intensity of one pair in each ordered block pair,
/// from the quotient system `lambda = mu + Q^T lambda`.
///
/// Returns `None` for block pairs without pairs.
pub fn stationary_block_rates(model: &MulchModel) -> Vec<Vec<Option<f64>>> {
    let k = model.k();
    let sizes = model.membership().block_sizes();
    let mut rates = vec![vec![None; k]; k];
    for couple in couples(k) {
        if !couple_is_populated(&sizes, couple) {
            continue;
        }
        let q = quotient_matrix(model, &sizes, couple);
        let groups = couple.groups();
        let mu: Vec<f64> = groups.iter().map(|&(a, b)| model.params(a, b).mu).collect();
        let solved = if groups.len() == 1 {
            vec![mu[0] / (1.0 - q[0][0])]
        } else {
            // (I - Q^T) lambda = mu
            let (m00, m01, m10, m11) = (1.0 - q[0][0], -q[1][0], -q[0][1], 1.0 - q[1][1]);
            let det = m00 * m11 - m01 * m10;
            vec![
                (mu[0] * m11 - m01 * mu[1]) / det,
                (m00 * mu[1] - m10 * mu[0]) / det,
            ]
        };
        for (&(a, b), r) in groups.iter().zip(solved) {
            rates[a][b] = Some(r);
        }
    }
    rates
}

/// Explicit sparse branching matrix of one couple.
///
/// Dimension `d` is the node pair `pairs[d]`; `edges[s]` lists the
/// `(receiver, weight)` entries of source `s`.
#[derive(Clone, Debug)]
pub struct CoupleGamma {
    pub pairs: Vec<(usize, usize)>,
    pub edges: Vec<Vec<(usize, f64)>>,
}

impl CoupleGamma {
    pub fn assemble(model: &MulchModel, couple: Couple) -> Self {
        let z = model.membership();
        let members = z.members();
        let mut pairs = Vec::new();
        for (a, b) in couple.groups() {
            for &i in &members[a] {
                for &j in &members[b] {
                    if i != j {
                        pairs.push((i, j));
                    }
                }
            }
        }
        let index: std::collections::HashMap<(usize, usize), usize> =
            pairs.iter().enumerate().map(|(d, &p)| (p, d)).collect();
        let edges = pairs
            .iter()
            .map(|&src| {
                let mut row = Vec::new();
                crate::model::for_each_excited(src, z, &members, |ty, dst| {
                    let w = model.pair_params(dst.0, dst.1).alpha.get(ty);
                    if w != 0.0 {
                        row.push((index[&dst], w));
                    }
                });
                row
            })
            .collect();
        CoupleGamma { pairs, edges }
    }

    pub fn dim(&self) -> usize {
        self.pairs.len()
    }

    /// Solves `lambda = mu + Gamma^T lambda` by fixed-point iteration.
    ///
    /// Converges geometrically at the couple's spectral radius.
    pub fn solve_stationary(&self, mu: &[f64], rel_tol: f64, max_iter: usize) -> (Vec<f64>, bool) {
        let n = self.dim();
        let mut lam = mu.to_vec();
        let mut next = vec![0.0; n];
        for _ in 0..max_iter {
            next.copy_from_slice(mu);
            for (s, row) in self.edges.iter().enumerate() {
                let ls = lam[s];
                for &(d, w) in row {
                    next[d] += w * ls;
                }
            }
            let mut change: f64 = 0.0;
            for (a, b) in next.iter().zip(&lam) {
                change = change.max((a - b).abs() / a.abs().max(f64::MIN_POSITIVE));
            }
            std::mem::swap(&mut lam, &mut next);
            if change <= rel_tol {
                return (lam, true);
            }
        }
        (lam, false)
    }
}
