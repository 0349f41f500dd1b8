//! Independent reference implementations shared by the property and
//! acceptance suites. Nothing here calls the library's likelihood, motif or
//! branching code; the excitation rules are restated from their definitions.

#![allow(dead_code)]

use mulch::events::{Event, EventStream};
use mulch::{Alpha, BlockPairParams, ExcitationType, Membership, MulchModel};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Excitation rules restated: how an event on `(x, y)` reaches `(i, j)`.
pub fn reference_type(
    src: (usize, usize),
    dst: (usize, usize),
    z: &Membership,
) -> Option<ExcitationType> {
    let ((x, y), (i, j)) = (src, dst);
    let b = |n: usize| z.block(n);
    if (i, j) == (x, y) {
        Some(ExcitationType::SelfExcitation)
    } else if (i, j) == (y, x) {
        Some(ExcitationType::Reciprocal)
    } else if i == x && b(j) == b(y) {
        Some(ExcitationType::TurnContinuation)
    } else if i == y && b(j) == b(x) {
        Some(ExcitationType::GeneralizedReciprocity)
    } else if j == y && b(i) == b(x) {
        Some(ExcitationType::AlliedContinuation)
    } else if j == x && b(i) == b(y) {
        Some(ExcitationType::AlliedReciprocity)
    } else {
        None
    }
}

pub fn kernel(c: &[f64], betas: &[f64], lag: f64) -> f64 {
    c.iter()
        .zip(betas)
        .map(|(c, b)| c * b * (-b * lag).exp())
        .sum()
}

const GL_NODES: [f64; 5] = [
    0.0,
    -0.538_469_310_105_683_1,
    0.538_469_310_105_683_1,
    -0.906_179_845_938_664,
    0.906_179_845_938_664,
];
const GL_WEIGHTS: [f64; 5] = [
    0.568_888_888_888_888_9,
    0.478_628_670_499_366_5,
    0.478_628_670_499_366_5,
    0.236_926_885_056_189_1,
    0.236_926_885_056_189_1,
];

/// Composite five-point Gauss-Legendre on `[a, b]` with panels of at most `h`.
pub fn quadrature(f: impl Fn(f64) -> f64, a: f64, b: f64, h: f64) -> f64 {
    if b <= a {
        return 0.0;
    }
    let panels = ((b - a) / h).ceil().max(1.0) as usize;
    let w = (b - a) / panels as f64;
    let mut total = 0.0;
    for p in 0..panels {
        let mid = a + (p as f64 + 0.5) * w;
        for (x, g) in GL_NODES.iter().zip(GL_WEIGHTS) {
            total += g * f(mid + 0.5 * w * x);
        }
    }
    0.5 * w * total
}

/// How the oracle integrates the kernels in the compensator.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Compensator {
    ClosedForm,
    Quadrature,
}

/// Block pair log-likelihood by the textbook double sum: every event's
/// intensity from the whole history, every pair's compensator separately.
pub fn direct_block_pair_ll(
    params: &BlockPairParams,
    betas: &[f64],
    stream: &EventStream,
    z: &Membership,
    (a, b): (usize, usize),
    mode: Compensator,
) -> f64 {
    let events = stream.events();
    let t_end = stream.duration();
    let beta_max = betas.iter().cloned().fold(0.0, f64::max);
    let integral = |lag: f64| match mode {
        Compensator::ClosedForm => params
            .c
            .iter()
            .zip(betas)
            .map(|(c, b)| c * (1.0 - (-b * lag).exp()))
            .sum::<f64>(),
        Compensator::Quadrature => {
            quadrature(|s| kernel(&params.c, betas, s), 0.0, lag, 0.1 / beta_max)
        }
    };
    let integrals: Vec<f64> = events.iter().map(|e| integral(t_end - e.time)).collect();
    let mut ll = 0.0;
    let n = z.len();
    for i in 0..n {
        for j in 0..n {
            if i == j || z.block(i) != a || z.block(j) != b {
                continue;
            }
            let mut comp = params.mu * t_end;
            for (h, e) in events.iter().enumerate() {
                if let Some(ty) = reference_type(e.pair(), (i, j), z) {
                    comp += params.alpha.get(ty) * integrals[h];
                }
            }
            ll -= comp;
        }
    }
    for e in events {
        if z.block(e.sender) != a || z.block(e.receiver) != b {
            continue;
        }
        let mut lam = params.mu;
        for h in events.iter().take_while(|h| h.time < e.time) {
            if let Some(ty) = reference_type(h.pair(), e.pair(), z) {
                lam += params.alpha.get(ty) * kernel(&params.c, betas, e.time - h.time);
            }
        }
        ll += lam.ln();
    }
    ll
}

pub fn random_simplex<R: Rng>(rng: &mut R, q: usize) -> Vec<f64> {
    let w: Vec<f64> = (0..q).map(|_| rng.random_range(0.05..1.0)).collect();
    let s: f64 = w.iter().sum();
    w.into_iter().map(|x| x / s).collect()
}

pub fn random_params<R: Rng>(rng: &mut R, q: usize, alpha_max: f64) -> BlockPairParams {
    let mut alpha = [0.0; 6];
    for a in &mut alpha {
        *a = rng.random_range(0.0..alpha_max);
    }
    BlockPairParams {
        mu: rng.random_range(0.01..0.3),
        alpha: Alpha(alpha),
        c: random_simplex(rng, q),
    }
}

/// Random membership with every block used (requires `n >= k`).
pub fn random_membership<R: Rng>(rng: &mut R, n: usize, k: usize) -> Membership {
    let mut labels: Vec<usize> = (0..n)
        .map(|i| if i < k { i } else { rng.random_range(0..k) })
        .collect();
    for i in (1..n).rev() {
        labels.swap(i, rng.random_range(0..=i));
    }
    Membership::new(labels, k).unwrap()
}

pub fn random_model<R: Rng>(
    rng: &mut R,
    n: usize,
    k: usize,
    betas: Vec<f64>,
    alpha_max: f64,
) -> MulchModel {
    let q = betas.len();
    let grid = (0..k)
        .map(|_| (0..k).map(|_| random_params(rng, q, alpha_max)).collect())
        .collect();
    MulchModel::new(betas, grid, random_membership(rng, n, k)).unwrap()
}

/// Random event history on `n` nodes over `[0, t_end]`; with `ties` some
/// timestamps are rounded so that they coincide.
pub fn random_history<R: Rng>(
    rng: &mut R,
    n: usize,
    len: usize,
    t_end: f64,
    ties: bool,
) -> EventStream {
    let events = (0..len)
        .map(|_| {
            let s = rng.random_range(0..n);
            let mut r = rng.random_range(0..n - 1);
            if r >= s {
                r += 1;
            }
            let mut t = rng.random_range(0.0..t_end);
            if ties && rng.random_bool(0.3) {
                t = t.floor();
            }
            Event::new(s, r, t)
        })
        .collect();
    EventStream::new(events, n, t_end).unwrap()
}

/// Motif cell by explicit pattern matching against the grid's definition:
/// rows (by `e2`) `w->v, v->w, w->u, u->w, u->v, v->u`; columns (by `e3`)
/// `u->v, v->u, u->w, w->u, v->w, w->v`, with `e1 = u->v`.
pub fn reference_motif_cell(e1: &Event, e2: &Event, e3: &Event) -> Option<(usize, usize)> {
    let (u, v) = e1.pair();
    let mut nodes = vec![u, v];
    for e in [e2, e3] {
        for x in [e.sender, e.receiver] {
            if !nodes.contains(&x) {
                nodes.push(x);
            }
        }
    }
    if nodes.len() > 3 {
        return None;
    }
    let w = nodes.get(2).copied();
    let rows = [
        (w, Some(v)),
        (Some(v), w),
        (w, Some(u)),
        (Some(u), w),
        (Some(u), Some(v)),
        (Some(v), Some(u)),
    ];
    let cols = [
        (Some(u), Some(v)),
        (Some(v), Some(u)),
        (Some(u), w),
        (w, Some(u)),
        (Some(v), w),
        (w, Some(v)),
    ];
    let key = |e: &Event| (Some(e.sender), Some(e.receiver));
    let row = rows.iter().position(|p| *p == key(e2))?;
    let col = cols.iter().position(|p| *p == key(e3))?;
    Some((row, col))
}

/// All index triples `i < j < k` spanning at most `delta`.
pub fn brute_force_motifs(stream: &EventStream, delta: f64) -> [[u64; 6]; 6] {
    let ev = stream.events();
    let mut m = [[0u64; 6]; 6];
    for i in 0..ev.len() {
        for j in i + 1..ev.len() {
            for k in j + 1..ev.len() {
                if ev[k].time - ev[i].time > delta {
                    break;
                }
                if let Some((r, c)) = reference_motif_cell(&ev[i], &ev[j], &ev[k]) {
                    m[r][c] += 1;
                }
            }
        }
    }
    m
}

/// Full branching matrix over all ordered pairs, `gamma[src][dst]`, from
/// the restated excitation rules.
pub fn branching_matrix(model: &MulchModel) -> (Vec<(usize, usize)>, Vec<Vec<f64>>) {
    let z = model.membership();
    let n = z.len();
    let pairs: Vec<(usize, usize)> = (0..n)
        .flat_map(|i| (0..n).map(move |j| (i, j)))
        .filter(|(i, j)| i != j)
        .collect();
    let gamma = pairs
        .iter()
        .map(|&src| {
            pairs
                .iter()
                .map(|&dst| match reference_type(src, dst, z) {
                    Some(ty) => model.pair_params(dst.0, dst.1).alpha.get(ty),
                    None => 0.0,
                })
                .collect()
        })
        .collect();
    (pairs, gamma)
}

/// Spectral radius of a nonnegative matrix by power iteration on `I + M`,
/// which has the same Perron vector and is aperiodic.
pub fn power_iteration_radius(m: &[Vec<f64>]) -> f64 {
    let d = m.len();
    let mut x = vec![1.0 / d as f64; d];
    let mut est = 0.0;
    for _ in 0..20_000 {
        let mut y = x.clone();
        for (i, row) in m.iter().enumerate() {
            for (j, &v) in row.iter().enumerate() {
                y[j] += v * x[i];
            }
        }
        let norm: f64 = y.iter().sum();
        let next = norm / x.iter().sum::<f64>() - 1.0;
        y.iter_mut().for_each(|v| *v /= norm);
        x = y;
        if (next - est).abs() < 1e-14 * next.abs().max(1e-300) {
            return next;
        }
        est = next;
    }
    est
}

/// Stationary pair rates `(I - Gamma^T)^{-1} mu` by dense Gaussian elimination.
pub fn stationary_rates_dense(model: &MulchModel) -> (Vec<(usize, usize)>, Vec<f64>) {
    let (pairs, gamma) = branching_matrix(model);
    let d = pairs.len();
    let mut a = vec![vec![0.0; d + 1]; d];
    for i in 0..d {
        for j in 0..d {
            a[i][j] = if i == j { 1.0 } else { 0.0 } - gamma[j][i];
        }
        a[i][d] = model.pair_params(pairs[i].0, pairs[i].1).mu;
    }
    for col in 0..d {
        let piv = (col..d)
            .max_by(|&x, &y| a[x][col].abs().total_cmp(&a[y][col].abs()))
            .unwrap();
        a.swap(col, piv);
        for r in 0..d {
            if r != col {
                let f = a[r][col] / a[col][col];
                if f != 0.0 {
                    for c in col..=d {
                        a[r][c] -= f * a[col][c];
                    }
                }
            }
        }
    }
    let x = (0..d).map(|i| a[i][d] / a[i][i]).collect();
    (pairs, x)
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-300)
}
