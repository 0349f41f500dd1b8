//! Block pair log-likelihood from aggregated excitation streams.
//!
//! For a receiving pair `(i, j)` in block pair `(a, b)` the six excitation
//! streams are differences of a handful of decayed accumulators:
//!
//! | type         | stream                      |
//! |--------------|-----------------------------|
//! | self         | `S(i,j)`                    |
//! | reciprocal   | `S(j,i)`                    |
//! | turn         | `out(i,b) - S(i,j)`         |
//! | gen. recip.  | `in(i,b) - S(j,i)`          |
//! | allied cont. | `in(j,a) - S(i,j)`          |
//! | allied recip.| `out(j,a) - S(j,i)`         |
//!
//! where `S` sums over a pair's own events, `out(x, b)` over events from `x`
//! into block `b` and `in(y, a)` over events into `y` from block `a`. The
//! compensator only depends on how many pairs of `(a, b)` each event
//! excites, which is a function of the block sizes. One pass over the stream
//! therefore yields sufficient statistics for every block pair, after which
//! the likelihood and its gradient cost `O(events x 6 x Q)`.

use std::collections::HashMap;

use crate::error::{MulchError, Result};
use crate::events::{Event, EventStream};
use crate::model::{BlockPairParams, ExcitationType as X, Membership, MulchModel};

pub(crate) const NT: usize = 6;

/// Pair ids for every event, with the id of the reverse pair when it occurs.
pub(crate) struct PairIndex {
    pair: Vec<u32>,
    rev: Vec<u32>,
    n_ids: usize,
    ids: HashMap<(usize, usize), u32>,
}

const NONE: u32 = u32::MAX;

impl PairIndex {
    pub fn new(events: &[Event]) -> Self {
        let mut ids: HashMap<(usize, usize), u32> = HashMap::new();
        let pair: Vec<u32> = events
            .iter()
            .map(|e| {
                let next = ids.len() as u32;
                *ids.entry(e.pair()).or_insert(next)
            })
            .collect();
        let rev = events
            .iter()
            .map(|e| ids.get(&(e.receiver, e.sender)).copied().unwrap_or(NONE))
            .collect();
        PairIndex {
            pair,
            rev,
            n_ids: ids.len(),
            ids,
        }
    }

    pub fn n_ids(&self) -> usize {
        self.n_ids
    }

    pub fn slot_of_event(&self, idx: usize) -> usize {
        self.pair[idx] as usize
    }

    pub fn slot(&self, pair: (usize, usize)) -> Option<usize> {
        self.ids.get(&pair).map(|&s| s as usize)
    }
}

/// Exponentially decayed counters, one vector of `Q` sums per slot,
/// brought up to date lazily.
struct Bank<'b> {
    betas: &'b [f64],
    t: Vec<f64>,
    v: Vec<f64>,
}

impl<'b> Bank<'b> {
    fn new(slots: usize, betas: &'b [f64]) -> Self {
        Bank {
            betas,
            t: vec![0.0; slots],
            v: vec![0.0; slots * betas.len()],
        }
    }

    fn read(&self, slot: usize, t: f64, out: &mut [f64]) {
        let q = self.betas.len();
        let dt = t - self.t[slot];
        for (k, o) in out.iter_mut().enumerate() {
            let v = self.v[slot * q + k];
            *o = if v == 0.0 {
                0.0
            } else {
                v * (-self.betas[k] * dt).exp()
            };
        }
    }

    fn add(&mut self, slot: usize, t: f64) {
        let q = self.betas.len();
        let dt = t - self.t[slot];
        for k in 0..q {
            let v = &mut self.v[slot * q + k];
            *v = *v * (-self.betas[k] * dt).exp() + 1.0;
        }
        self.t[slot] = t;
    }
}

/// Decayed accumulators `S`, `out` and `in` over a prefix of the stream.
pub(crate) struct AggregateState<'b> {
    k: usize,
    q: usize,
    pairs: Bank<'b>,
    outs: Bank<'b>,
    ins: Bank<'b>,
    tmp: Vec<f64>,
}

impl<'b> AggregateState<'b> {
    pub fn new(n_pair_ids: usize, z: &Membership, betas: &'b [f64]) -> Self {
        let (n, k) = (z.len(), z.k());
        AggregateState {
            k,
            q: betas.len(),
            pairs: Bank::new(n_pair_ids, betas),
            outs: Bank::new(n * k, betas),
            ins: Bank::new(n * k, betas),
            tmp: vec![0.0; 6 * betas.len()],
        }
    }

    /// Adds an event on `(i, j)` with pair slot `slot` at time `t`.
    pub fn add(&mut self, i: usize, j: usize, slot: Option<usize>, z: &Membership, t: f64) {
        if let Some(s) = slot {
            self.pairs.add(s, t);
        }
        self.outs.add(i * self.k + z.block(j), t);
        self.ins.add(j * self.k + z.block(i), t);
    }

    /// Writes the six streams of receiving pair `(i, j)` at time `t` into
    /// `r[tau * Q + q]`, not yet multiplied by `beta_q`.
    pub fn streams(
        &mut self,
        (i, j): (usize, usize),
        (a, b): (usize, usize),
        own: Option<usize>,
        rev: Option<usize>,
        t: f64,
        r: &mut [f64],
    ) {
        let q = self.q;
        let k = self.k;
        let (s_ij, rest) = self.tmp.split_at_mut(q);
        let (s_ji, rest) = rest.split_at_mut(q);
        let (out_ib, rest) = rest.split_at_mut(q);
        let (in_ib, rest) = rest.split_at_mut(q);
        let (in_ja, out_ja) = rest.split_at_mut(q);
        match own {
            Some(s) => self.pairs.read(s, t, s_ij),
            None => s_ij.iter_mut().for_each(|x| *x = 0.0),
        }
        match rev {
            Some(s) => self.pairs.read(s, t, s_ji),
            None => s_ji.iter_mut().for_each(|x| *x = 0.0),
        }
        self.outs.read(i * k + b, t, out_ib);
        self.ins.read(i * k + b, t, in_ib);
        self.ins.read(j * k + a, t, in_ja);
        self.outs.read(j * k + a, t, out_ja);
        for qq in 0..q {
            r[qq] = s_ij[qq];
            r[q + qq] = s_ji[qq];
            r[2 * q + qq] = (out_ib[qq] - s_ij[qq]).max(0.0);
            r[3 * q + qq] = (in_ib[qq] - s_ji[qq]).max(0.0);
            r[4 * q + qq] = (in_ja[qq] - s_ij[qq]).max(0.0);
            r[5 * q + qq] = (out_ja[qq] - s_ji[qq]).max(0.0);
        }
    }
}

/// Walks the (time-sorted) events selected by `keep`, calling `visit` with
/// the six excitation streams `R[tau * Q + q]` of every event whose block
/// pair satisfies `own`. Events sharing a timestamp do not excite each other.
pub(crate) fn scan_excitation(
    events: &[Event],
    index: &PairIndex,
    z: &Membership,
    betas: &[f64],
    keep: impl Fn(&Event) -> bool,
    own: impl Fn(usize, usize) -> bool,
    mut visit: impl FnMut(usize, (usize, usize), &[f64]),
) {
    let q = betas.len();
    let mut state = AggregateState::new(index.n_ids, z, betas);
    let mut r = vec![0.0; NT * q];
    let slot = |id: u32| (id != NONE).then_some(id as usize);

    let mut start = 0;
    while start < events.len() {
        let t = events[start].time;
        let mut end = start;
        while end < events.len() && events[end].time == t {
            end += 1;
        }
        for idx in start..end {
            let e = &events[idx];
            if !keep(e) {
                continue;
            }
            let (a, b) = (z.block(e.sender), z.block(e.receiver));
            if !own(a, b) {
                continue;
            }
            state.streams(
                e.pair(),
                (a, b),
                slot(index.pair[idx]),
                slot(index.rev[idx]),
                t,
                &mut r,
            );
            visit(idx, (a, b), &r);
        }
        for idx in start..end {
            let e = &events[idx];
            if keep(e) {
                state.add(e.sender, e.receiver, slot(index.pair[idx]), z, t);
            }
        }
        start = end;
    }
}

/// Adds one source event's integrated kernels `f[q] = 1 - exp(-beta_q (T - t))`
/// to the compensator sums of the block pairs it excites.
///
/// `comp` is indexed `[(a * K + b) * 6Q + tau * Q + q]`.
pub(crate) fn add_compensator(
    comp: &mut [f64],
    sizes: &[usize],
    (p, r): (usize, usize),
    f: &[f64],
    k: usize,
) {
    let q = f.len();
    let stride = NT * q;
    let mut add = |bp: (usize, usize), ty: X, count: f64| {
        if count <= 0.0 {
            return;
        }
        let base = (bp.0 * k + bp.1) * stride + ty.index() * q;
        for (slot, fq) in comp[base..base + q].iter_mut().zip(f) {
            *slot += count * fq;
        }
    };
    let (np, nr) = (sizes[p] as f64, sizes[r] as f64);
    if p == r {
        let others = np - 2.0;
        add((p, p), X::SelfExcitation, 1.0);
        add((p, p), X::Reciprocal, 1.0);
        for ty in [
            X::TurnContinuation,
            X::GeneralizedReciprocity,
            X::AlliedContinuation,
            X::AlliedReciprocity,
        ] {
            add((p, p), ty, others);
        }
    } else {
        add((p, r), X::SelfExcitation, 1.0);
        add((p, r), X::TurnContinuation, nr - 1.0);
        add((p, r), X::AlliedContinuation, np - 1.0);
        add((r, p), X::Reciprocal, 1.0);
        add((r, p), X::GeneralizedReciprocity, np - 1.0);
        add((r, p), X::AlliedReciprocity, nr - 1.0);
    }
}

pub(crate) fn integrated_kernels(betas: &[f64], lag: f64, out: &mut [f64]) {
    for (o, b) in out.iter_mut().zip(betas) {
        *o = -(-b * lag).exp_m1();
    }
}

/// Sufficient statistics of one block pair.
#[derive(Clone, Debug)]
pub struct BlockPairStats {
    pub block_pair: (usize, usize),
    pub n_pairs: usize,
    pub duration: f64,
    pub betas: Vec<f64>,
    /// `sum_s count_tau(s) (1 - exp(-beta_q (T - t_s)))`, indexed `tau * Q + q`.
    pub compensator: Vec<f64>,
    /// `beta_q R_tau^q` at each own event, indexed `e * 6Q + tau * Q + q`.
    pub excitation: Vec<f64>,
    /// Stream index of each own event.
    pub event_index: Vec<usize>,
    pub event_pairs: Vec<(usize, usize, f64)>,
}

/// Gradient of the block pair log-likelihood in natural parameters.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Gradient {
    pub mu: f64,
    pub alpha: [f64; NT],
    pub c: Vec<f64>,
}

impl BlockPairStats {
    pub fn q(&self) -> usize {
        self.betas.len()
    }

    pub fn n_events(&self) -> usize {
        self.event_index.len()
    }

    fn bad_event(&self, e: usize, value: f64) -> MulchError {
        let (sender, receiver, time) = self.event_pairs[e];
        MulchError::NonPositiveIntensity {
            index: self.event_index[e],
            sender,
            receiver,
            time,
            value,
        }
    }

    /// Log-likelihood at `(mu, alpha, c)`.
    pub fn log_likelihood(&self, mu: f64, alpha: &[f64; NT], c: &[f64]) -> Result<f64> {
        let q = self.q();
        // ac[tau * Q + q] = alpha_tau c_q
        let ac: Vec<f64> = (0..NT * q).map(|x| alpha[x / q] * c[x % q]).collect();
        let mut ll = -mu * self.duration * self.n_pairs as f64;
        ll -= ac
            .iter()
            .zip(&self.compensator)
            .map(|(w, a)| w * a)
            .sum::<f64>();
        for (e, row) in self.excitation.chunks_exact(NT * q).enumerate() {
            let lam = mu + ac.iter().zip(row).map(|(w, r)| w * r).sum::<f64>();
            if !(lam > 0.0) {
                return Err(self.bad_event(e, lam));
            }
            ll += lam.ln();
        }
        Ok(ll)
    }

    /// Log-likelihood and its gradient in `(mu, alpha, c)`.
    pub fn value_and_gradient(
        &self,
        mu: f64,
        alpha: &[f64; NT],
        c: &[f64],
    ) -> Result<(f64, Gradient)> {
        let q = self.q();
        let ac: Vec<f64> = (0..NT * q).map(|x| alpha[x / q] * c[x % q]).collect();
        let tp = self.duration * self.n_pairs as f64;
        let mut ll = -mu * tp;
        let mut g = Gradient {
            mu: -tp,
            alpha: [0.0; NT],
            c: vec![0.0; q],
        };
        for t in 0..NT {
            for k in 0..q {
                let a = self.compensator[t * q + k];
                ll -= ac[t * q + k] * a;
                g.alpha[t] -= c[k] * a;
                g.c[k] -= alpha[t] * a;
            }
        }
        // Accumulate sum_e R_e / lambda_e, then contract once.
        let mut weighted = vec![0.0; NT * q];
        for (e, row) in self.excitation.chunks_exact(NT * q).enumerate() {
            let lam = mu + ac.iter().zip(row).map(|(w, r)| w * r).sum::<f64>();
            if !(lam > 0.0) {
                return Err(self.bad_event(e, lam));
            }
            ll += lam.ln();
            let inv = 1.0 / lam;
            g.mu += inv;
            for (w, r) in weighted.iter_mut().zip(row) {
                *w += r * inv;
            }
        }
        for t in 0..NT {
            for k in 0..q {
                let w = weighted[t * q + k];
                g.alpha[t] += c[k] * w;
                g.c[k] += alpha[t] * w;
            }
        }
        Ok((ll, g))
    }

    pub fn log_likelihood_at(&self, p: &BlockPairParams) -> Result<f64> {
        self.log_likelihood(p.mu, &p.alpha.0, &p.c)
    }
}

fn check_membership(events: &EventStream, z: &Membership) -> Result<()> {
    if z.len() < events.n_nodes() {
        return Err(MulchError::LengthMismatch(z.len(), events.n_nodes()));
    }
    Ok(())
}

/// Statistics for every block pair, `K x K`.
pub fn block_pair_stats(
    events: &EventStream,
    z: &Membership,
    betas: &[f64],
) -> Result<Vec<Vec<BlockPairStats>>> {
    check_membership(events, z)?;
    let (k, q) = (z.k(), betas.len());
    let sizes = z.block_sizes();
    let t_end = events.duration();
    let mut grid: Vec<Vec<BlockPairStats>> = (0..k)
        .map(|a| {
            (0..k)
                .map(|b| BlockPairStats {
                    block_pair: (a, b),
                    n_pairs: Membership::pair_count(&sizes, a, b),
                    duration: t_end,
                    betas: betas.to_vec(),
                    compensator: vec![0.0; NT * q],
                    excitation: Vec::new(),
                    event_index: Vec::new(),
                    event_pairs: Vec::new(),
                })
                .collect()
        })
        .collect();
    let evs = events.events();
    let index = PairIndex::new(evs);
    scan_excitation(
        evs,
        &index,
        z,
        betas,
        |_| true,
        |_, _| true,
        |idx, (a, b), r| {
            let st = &mut grid[a][b];
            st.excitation
                .extend(r.iter().enumerate().map(|(x, v)| v * betas[x % q]));
            st.event_index.push(idx);
            let e = &evs[idx];
            st.event_pairs.push((e.sender, e.receiver, e.time));
        },
    );
    let mut comp = vec![0.0; k * k * NT * q];
    let mut f = vec![0.0; q];
    for e in evs {
        integrated_kernels(betas, t_end - e.time, &mut f);
        add_compensator(
            &mut comp,
            &sizes,
            (z.block(e.sender), z.block(e.receiver)),
            &f,
            k,
        );
    }
    for (a, row) in grid.iter_mut().enumerate() {
        for (b, st) in row.iter_mut().enumerate() {
            let base = (a * k + b) * NT * q;
            st.compensator.copy_from_slice(&comp[base..base + NT * q]);
        }
    }
    Ok(grid)
}

/// Log-likelihood of block pair `(a, b)` on `[0, events.duration()]`.
pub fn block_pair_log_likelihood(
    params: &BlockPairParams,
    betas: &[f64],
    events: &EventStream,
    z: &Membership,
    block_pair: (usize, usize),
) -> Result<f64> {
    let (a, b) = block_pair;
    if a >= z.k() || b >= z.k() {
        return Err(MulchError::InvalidMembership(format!(
            "block pair ({a}, {b}) out of range for K = {}",
            z.k()
        )));
    }
    let stats = block_pair_stats(events, z, betas)?;
    stats[a][b].log_likelihood_at(params)
}

/// Per block pair log-likelihoods of `model` on `events`.
pub fn log_likelihood_grid(model: &MulchModel, events: &EventStream) -> Result<Vec<Vec<f64>>> {
    let stats = block_pair_stats(events, model.membership(), model.betas())?;
    stats
        .iter()
        .enumerate()
        .map(|(a, row)| {
            row.iter()
                .enumerate()
                .map(|(b, st)| st.log_likelihood_at(model.params(a, b)))
                .collect()
        })
        .collect()
}

/// Total log-likelihood, the sum over all `K^2` block pairs.
pub fn full_log_likelihood(model: &MulchModel, events: &EventStream) -> Result<f64> {
    Ok(log_likelihood_grid(model, events)?.iter().flatten().sum())
}

/// Log-likelihoods of the block pairs flagged in `touched` (`K x K`,
/// row-major), using only events with an endpoint in `blocks`.
///
/// Exact for any block pair with an endpoint block in `blocks`, because all
/// events that excite such a pair are themselves incident to that block.
pub(crate) fn restricted_log_likelihood(
    events: &[Event],
    index: &PairIndex,
    model: &MulchModel,
    z: &Membership,
    blocks: &[usize],
    duration: f64,
) -> Result<f64> {
    let k = z.k();
    let betas = model.betas();
    let q = betas.len();
    let sizes = z.block_sizes();
    let in_set = |a: usize| blocks.contains(&a);
    let touched = |a: usize, b: usize| in_set(a) || in_set(b);
    let keep = |e: &Event| touched(z.block(e.sender), z.block(e.receiver));

    // alpha_tau c_q beta_q for each block pair
    let weights: Vec<Vec<f64>> = (0..k * k)
        .map(|x| {
            let p = model.params(x / k, x % k);
            (0..NT * q)
                .map(|y| p.alpha.0[y / q] * p.c[y % q] * betas[y % q])
                .collect()
        })
        .collect();
    let mut ll = 0.0;
    let mut failure = None;
    scan_excitation(events, index, z, betas, keep, touched, |idx, (a, b), r| {
        if failure.is_some() {
            return;
        }
        let lam = model.params(a, b).mu
            + weights[a * k + b]
                .iter()
                .zip(r)
                .map(|(w, x)| w * x)
                .sum::<f64>();
        if lam > 0.0 {
            ll += lam.ln();
        } else {
            let e = &events[idx];
            failure = Some(MulchError::NonPositiveIntensity {
                index: idx,
                sender: e.sender,
                receiver: e.receiver,
                time: e.time,
                value: lam,
            });
        }
    });
    if let Some(err) = failure {
        return Err(err);
    }
    let mut comp = vec![0.0; k * k * NT * q];
    let mut f = vec![0.0; q];
    for e in events.iter().filter(|e| keep(e)) {
        integrated_kernels(betas, duration - e.time, &mut f);
        add_compensator(
            &mut comp,
            &sizes,
            (z.block(e.sender), z.block(e.receiver)),
            &f,
            k,
        );
    }
    for a in 0..k {
        for b in 0..k {
            if !touched(a, b) {
                continue;
            }
            let p = model.params(a, b);
            ll -= p.mu * duration * Membership::pair_count(&sizes, a, b) as f64;
            let base = (a * k + b) * NT * q;
            for y in 0..NT * q {
                ll -= p.alpha.0[y / q] * p.c[y % q] * comp[base + y];
            }
        }
    }
    Ok(ll)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Alpha;

    fn single_pair_model(mu: f64, alpha: [f64; 6]) -> MulchModel {
        let p = BlockPairParams {
            mu,
            alpha: Alpha(alpha),
            c: vec![1.0],
        };
        MulchModel::new(
            vec![1.0],
            vec![vec![p]],
            Membership::new(vec![0, 0], 1).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn empty_pair_is_pure_compensator() {
        // two nodes in one block: pairs (0,1) and (1,0); use 2 blocks to isolate one pair
        let z = Membership::new(vec![0, 1], 2).unwrap();
        let s = EventStream::new(vec![], 2, 10.0).unwrap();
        let p = BlockPairParams::poisson(0.5, 1);
        let v = block_pair_log_likelihood(&p, &[1.0], &s, &z, (0, 1)).unwrap();
        assert_eq!(v, -5.0);
    }

    #[test]
    fn single_event_poisson() {
        let z = Membership::new(vec![0, 1], 2).unwrap();
        let s = EventStream::new(vec![Event::new(0, 1, 1.0)], 2, 10.0).unwrap();
        let mu: f64 = 0.3;
        let p = BlockPairParams::poisson(mu, 1);
        let v = block_pair_log_likelihood(&p, &[1.0], &s, &z, (0, 1)).unwrap();
        assert!((v - (-10.0 * mu + mu.ln())).abs() < 1e-15);
    }

    #[test]
    fn self_excitation_by_hand() {
        // events on (0,1) at t=1 and t=2, T=3, kernel beta e^{-beta dt} with beta = 1
        let m = single_pair_model(0.2, [0.5, 0.0, 0.0, 0.0, 0.0, 0.0]);
        let s =
            EventStream::new(vec![Event::new(0, 1, 1.0), Event::new(0, 1, 2.0)], 2, 3.0).unwrap();
        let grid = log_likelihood_grid(&m, &s).unwrap();
        let lam2 = 0.2 + 0.5 * (-1.0f64).exp();
        let comp = 2.0 * 0.2 * 3.0 + 0.5 * ((1.0 - (-2.0f64).exp()) + (1.0 - (-1.0f64).exp()));
        let expected = 0.2f64.ln() + lam2.ln() - comp;
        assert!(
            (grid[0][0] - expected).abs() < 1e-14,
            "{} vs {expected}",
            grid[0][0]
        );
    }

    #[test]
    fn zero_intensity_names_the_event() {
        let m = single_pair_model(0.0, [0.5, 0.0, 0.0, 0.0, 0.0, 0.0]);
        let s = EventStream::new(vec![Event::new(1, 0, 0.5)], 2, 3.0).unwrap();
        match full_log_likelihood(&m, &s) {
            Err(MulchError::NonPositiveIntensity {
                index: 0,
                sender: 1,
                receiver: 0,
                ..
            }) => {}
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn tied_events_do_not_excite_each_other() {
        let m = single_pair_model(0.2, [0.5, 0.3, 0.0, 0.0, 0.0, 0.0]);
        let s =
            EventStream::new(vec![Event::new(0, 1, 1.0), Event::new(1, 0, 1.0)], 2, 2.0).unwrap();
        let ll = full_log_likelihood(&m, &s).unwrap();
        let comp = 2.0 * 0.2 * 2.0 + 2.0 * (0.5 + 0.3) * (1.0 - (-1.0f64).exp());
        assert!((ll - (2.0 * 0.2f64.ln() - comp)).abs() < 1e-14);
    }
}
