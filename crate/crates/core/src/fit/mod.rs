//! Estimation: spectral initialization, per block pair maximum likelihood
//! and node-wise likelihood refinement.

pub mod likelihood;
pub mod optim;

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{MulchError, Result};
use crate::events::{count_matrix, EventStream};
use crate::model::{Alpha, BlockPairParams, ExcitationType, Membership, MulchModel};
use crate::spectral::{spectral_cluster_with, KMeansConfig};
pub use likelihood::{block_pair_log_likelihood, full_log_likelihood, log_likelihood_grid};
use likelihood::{block_pair_stats, restricted_log_likelihood, BlockPairStats, PairIndex, NT};
pub use optim::{OptimConfig, OptimStatus};

/// How the kernel weights `c` are handled during fitting.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SimplexMode {
    /// Optimize positive weights `w >= eps` and use `c = w / sum(w)`.
    Normalized,
    /// Keep `c` fixed at the given weights.
    Fixed(Vec<f64>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct FitConfig {
    pub k: usize,
    pub betas: Vec<f64>,
    pub max_refinement_iters: usize,
    pub optim: OptimConfig,
    /// Lower bound on every free parameter.
    pub lower_bound: f64,
    pub seed: u64,
    pub simplex: SimplexMode,
    /// Excitation types with a free jump size; the others are fixed at 0.
    pub active: Vec<ExcitationType>,
    pub kmeans: KMeansConfig,
}

impl FitConfig {
    pub fn new(k: usize, betas: Vec<f64>) -> Self {
        FitConfig {
            k,
            betas,
            max_refinement_iters: 15,
            optim: OptimConfig::default(),
            lower_bound: 1e-7,
            seed: 0,
            simplex: SimplexMode::Normalized,
            active: ExcitationType::ALL.to_vec(),
            kmeans: KMeansConfig::default(),
        }
    }

    /// Only self and reciprocal excitation.
    pub fn two_alpha(mut self) -> Self {
        self.active = vec![ExcitationType::SelfExcitation, ExcitationType::Reciprocal];
        self
    }

    fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(MulchError::InvalidParameters(m));
        if self.k == 0 {
            return bad("K must be at least 1".into());
        }
        if !(self.lower_bound > 0.0 && self.lower_bound.is_finite()) {
            return bad(format!(
                "lower bound must be positive, got {}",
                self.lower_bound
            ));
        }
        if self.betas.is_empty() || self.betas.iter().any(|&b| !(b > 0.0 && b.is_finite())) {
            return bad(format!("betas must be positive, got {:?}", self.betas));
        }
        if let SimplexMode::Fixed(c) = &self.simplex {
            if c.len() != self.betas.len()
                || (c.iter().sum::<f64>() - 1.0).abs() > 1e-6
                || c.iter().any(|&x| x < 0.0)
            {
                return bad(format!(
                    "fixed kernel weights must lie on the simplex, got {c:?}"
                ));
            }
        }
        Ok(())
    }

    fn is_active(&self, ty: ExcitationType) -> bool {
        self.active.contains(&ty)
    }
}

/// Result of one block pair fit.
#[derive(Clone, Debug)]
pub struct BlockPairFit {
    pub params: BlockPairParams,
    pub log_likelihood: f64,
    pub status: OptimStatus,
    /// The block pair has no node pairs; parameters are set to the bound.
    pub empty: bool,
    pub iterations: usize,
}

/// One refinement round.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RefinementStep {
    pub iteration: usize,
    pub changes: usize,
    pub log_likelihood: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    pub spectral_seconds: f64,
    pub initial_fit_seconds: f64,
    pub refinement_seconds: f64,
    pub total_seconds: f64,
}

#[derive(Clone, Debug)]
pub struct FitResult {
    pub model: MulchModel,
    pub log_likelihood: f64,
    pub grid: Vec<Vec<f64>>,
    /// Membership from spectral clustering, before refinement.
    pub spectral_membership: Membership,
    /// Log-likelihood after the initial fit, before refinement.
    pub initial_log_likelihood: f64,
    pub trajectory: Vec<RefinementStep>,
    pub statuses: Vec<Vec<OptimStatus>>,
    pub empty_block_pairs: Vec<(usize, usize)>,
    pub timings: Timings,
}

/// Plot-ready record of a fit.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitTrace {
    pub k: usize,
    pub initial_log_likelihood: f64,
    pub log_likelihood: f64,
    pub grid: Vec<Vec<f64>>,
    pub trajectory: Vec<RefinementStep>,
    pub statuses: Vec<Vec<OptimStatus>>,
    pub empty_block_pairs: Vec<(usize, usize)>,
    pub timings: Timings,
}

impl FitResult {
    pub fn trace(&self) -> FitTrace {
        FitTrace {
            k: self.model.k(),
            initial_log_likelihood: self.initial_log_likelihood,
            log_likelihood: self.log_likelihood,
            grid: self.grid.clone(),
            trajectory: self.trajectory.clone(),
            statuses: self.statuses.clone(),
            empty_block_pairs: self.empty_block_pairs.clone(),
            timings: self.timings.clone(),
        }
    }
}

/// Maps between the optimizer's vector and block pair parameters.
struct Layout {
    active: Vec<ExcitationType>,
    q: usize,
    fixed_c: Option<Vec<f64>>,
}

impl Layout {
    fn new(cfg: &FitConfig) -> Self {
        Layout {
            active: ExcitationType::ALL
                .into_iter()
                .filter(|&t| cfg.is_active(t))
                .collect(),
            q: cfg.betas.len(),
            fixed_c: match &cfg.simplex {
                SimplexMode::Normalized => None,
                SimplexMode::Fixed(c) => Some(c.clone()),
            },
        }
    }

    fn dim(&self) -> usize {
        1 + self.active.len() + if self.fixed_c.is_some() { 0 } else { self.q }
    }

    fn unpack(&self, x: &[f64]) -> (f64, [f64; NT], Vec<f64>) {
        let mut alpha = [0.0; NT];
        for (slot, ty) in self.active.iter().enumerate() {
            alpha[ty.index()] = x[1 + slot];
        }
        let c = match &self.fixed_c {
            Some(c) => c.clone(),
            None => {
                let w = &x[1 + self.active.len()..];
                let s: f64 = w.iter().sum();
                w.iter().map(|v| v / s).collect()
            }
        };
        (x[0], alpha, c)
    }

    /// Start vector reproducing `p` exactly wherever the bounds allow.
    fn pack(&self, p: &BlockPairParams, eps: f64) -> Vec<f64> {
        let mut x = vec![p.mu.max(eps)];
        x.extend(self.active.iter().map(|&t| p.alpha.get(t).max(eps)));
        if self.fixed_c.is_none() {
            let c_min = p.c.iter().copied().fold(f64::INFINITY, f64::min);
            if c_min > 0.0 {
                let scale = (eps / c_min).max(1.0);
                x.extend(p.c.iter().map(|c| c * scale));
            } else {
                x.extend(p.c.iter().map(|c| c.max(eps)));
            }
        }
        x
    }

    fn random<R: Rng>(&self, rng: &mut R) -> Vec<f64> {
        (0..self.dim())
            .map(|_| rng.random_range(0.01..0.1))
            .collect()
    }

    fn params(&self, x: &[f64]) -> BlockPairParams {
        let (mu, alpha, c) = self.unpack(x);
        BlockPairParams {
            mu,
            alpha: Alpha(alpha),
            c,
        }
    }
}

fn bound_params(cfg: &FitConfig) -> BlockPairParams {
    let eps = cfg.lower_bound;
    let layout = Layout::new(cfg);
    let mut alpha = [0.0; NT];
    for t in &layout.active {
        alpha[t.index()] = eps;
    }
    BlockPairParams {
        mu: eps,
        alpha: Alpha(alpha),
        c: layout
            .fixed_c
            .clone()
            .unwrap_or_else(|| vec![1.0 / layout.q as f64; layout.q]),
    }
}

/// Maximizes one block pair's log-likelihood from `start` (or a random
/// point drawn from `rng`).
fn fit_stats(
    stats: &BlockPairStats,
    cfg: &FitConfig,
    start: Option<&BlockPairParams>,
    rng: &mut ChaCha8Rng,
) -> BlockPairFit {
    if stats.n_pairs == 0 {
        return BlockPairFit {
            params: bound_params(cfg),
            log_likelihood: 0.0,
            status: OptimStatus::GradientTolerance,
            empty: true,
            iterations: 0,
        };
    }
    let layout = Layout::new(cfg);
    let eps = cfg.lower_bound;
    let x0 = match start {
        Some(p) => layout.pack(p, eps),
        None => layout.random(rng),
    };
    let lower = vec![eps; layout.dim()];
    let n_alpha = layout.active.len();
    let objective = |x: &[f64], grad: &mut [f64]| -> f64 {
        let (mu, alpha, c) = layout.unpack(x);
        let Ok((ll, g)) = stats.value_and_gradient(mu, &alpha, &c) else {
            return f64::INFINITY;
        };
        grad[0] = -g.mu;
        for (slot, ty) in layout.active.iter().enumerate() {
            grad[1 + slot] = -g.alpha[ty.index()];
        }
        if layout.fixed_c.is_none() {
            // c = w / sum(w): dc_q/dw_k = (delta_qk - c_q) / sum(w)
            let w = &x[1 + n_alpha..];
            let sw: f64 = w.iter().sum();
            let mean: f64 = g.c.iter().zip(&c).map(|(gc, cq)| gc * cq).sum();
            for (k, gc) in g.c.iter().enumerate() {
                grad[1 + n_alpha + k] = -(gc - mean) / sw;
            }
        }
        -ll
    };
    let res = optim::minimize(objective, &x0, &lower, &cfg.optim);
    if !res.status.converged() {
        log::warn!(
            "block pair ({}, {}): optimizer stopped with {:?} after {} iterations",
            stats.block_pair.0,
            stats.block_pair.1,
            res.status,
            res.iterations
        );
    }
    BlockPairFit {
        params: layout.params(&res.x),
        log_likelihood: -res.f,
        status: res.status,
        empty: false,
        iterations: res.iterations,
    }
}

fn init_rng(seed: u64, k: usize, (a, b): (usize, usize)) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((1u64 << 32) + (a * k + b) as u64);
    rng
}

/// Fits one block pair from a random start.
pub fn fit_block_pair(
    events: &EventStream,
    z: &Membership,
    block_pair: (usize, usize),
    cfg: &FitConfig,
) -> Result<BlockPairFit> {
    cfg.validate()?;
    let stats = block_pair_stats(events, z, &cfg.betas)?;
    let (a, b) = block_pair;
    if a >= z.k() || b >= z.k() {
        return Err(MulchError::InvalidMembership(format!(
            "block pair ({a}, {b}) out of range"
        )));
    }
    let mut rng = init_rng(cfg.seed, z.k(), block_pair);
    Ok(fit_stats(&stats[a][b], cfg, None, &mut rng))
}

/// Fits every block pair under membership `z`, warm-started from `start`.
///
/// With a warm start the returned parameters never score below the start.
fn fit_all(
    events: &EventStream,
    z: &Membership,
    cfg: &FitConfig,
    start: Option<&MulchModel>,
) -> Result<(MulchModel, Vec<Vec<BlockPairFit>>)> {
    let k = z.k();
    let stats = block_pair_stats(events, z, &cfg.betas)?;
    let jobs: Vec<(usize, usize)> = (0..k).flat_map(|a| (0..k).map(move |b| (a, b))).collect();
    let run = |&(a, b): &(usize, usize)| -> BlockPairFit {
        let st = &stats[a][b];
        let mut rng = init_rng(cfg.seed, k, (a, b));
        let warm = start.map(|m| m.params(a, b));
        let mut fit = fit_stats(st, cfg, warm, &mut rng);
        if let (Some(p), false) = (warm, fit.empty) {
            if let Ok(before) = st.log_likelihood_at(p) {
                if before > fit.log_likelihood {
                    fit.params = p.clone();
                    fit.log_likelihood = before;
                }
            }
        }
        fit
    };
    #[cfg(feature = "parallel")]
    let fits: Vec<BlockPairFit> = {
        use rayon::prelude::*;
        jobs.par_iter().map(run).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let fits: Vec<BlockPairFit> = jobs.iter().map(run).collect();

    let mut grid: Vec<Vec<BlockPairFit>> = Vec::with_capacity(k);
    let mut it = fits.into_iter();
    for _ in 0..k {
        grid.push(it.by_ref().take(k).collect());
    }
    let params = grid
        .iter()
        .map(|row| row.iter().map(|f| f.params.clone()).collect())
        .collect();
    let model = MulchModel::new(cfg.betas.clone(), params, z.clone())?;
    Ok((model, grid))
}

/// Outcome of [`refine_memberships`].
#[derive(Clone, Debug)]
pub struct Refinement {
    pub model: MulchModel,
    pub trajectory: Vec<RefinementStep>,
    pub fits: Option<Vec<Vec<BlockPairFit>>>,
}

/// One in-place sweep: every node moves to the block that most increases the
/// log-likelihood under the current parameters. Returns the number of moves.
fn sweep(
    events: &EventStream,
    index: &PairIndex,
    model: &MulchModel,
    z: &mut Membership,
) -> Result<usize> {
    let k = z.k();
    let mut changes = 0;
    for node in 0..z.len() {
        let old = z.block(node);
        let mut best: Option<(usize, f64)> = None;
        for cand in (0..k).filter(|&c| c != old) {
            let blocks = [old, cand];
            let before = restricted_log_likelihood(
                events.events(),
                index,
                model,
                z,
                &blocks,
                events.duration(),
            )?;
            z.set(node, cand);
            let after = restricted_log_likelihood(
                events.events(),
                index,
                model,
                z,
                &blocks,
                events.duration(),
            );
            z.set(node, old);
            let delta = after? - before;
            let threshold = 1e-10 * before.abs().max(1.0);
            if delta > threshold && best.is_none_or(|(_, d)| delta > d) {
                best = Some((cand, delta));
            }
        }
        if let Some((cand, _)) = best {
            z.set(node, cand);
            changes += 1;
        }
    }
    Ok(changes)
}

/// Alternates membership sweeps with warm-started refits.
///
/// Stops after a sweep that moves no node, or after
/// `cfg.max_refinement_iters` rounds.
pub fn refine_memberships(
    events: &EventStream,
    model: &MulchModel,
    cfg: &FitConfig,
) -> Result<Refinement> {
    cfg.validate()?;
    let start = full_log_likelihood(model, events)?;
    refine_from(events, model, start, cfg)
}

/// Refinement starting from a model whose log-likelihood is `start`. The
/// recorded trajectory never falls below `start` or any earlier round.
fn refine_from(
    events: &EventStream,
    model: &MulchModel,
    start: f64,
    cfg: &FitConfig,
) -> Result<Refinement> {
    let mut model = model.clone();
    let mut trajectory = Vec::new();
    let mut fits = None;
    if cfg.max_refinement_iters == 0 || model.k() == 1 {
        return Ok(Refinement {
            model,
            trajectory,
            fits,
        });
    }
    let index = PairIndex::new(events.events());
    let mut previous = start;
    for iteration in 1..=cfg.max_refinement_iters {
        let mut z = model.membership().clone();
        let changes = sweep(events, &index, &model, &mut z)?;
        if changes == 0 {
            trajectory.push(RefinementStep {
                iteration,
                changes,
                log_likelihood: previous,
            });
            break;
        }
        let moved = model.with_membership(z.clone())?;
        let (refit, grid) = fit_all(events, &z, cfg, Some(&moved))?;
        let ll: f64 = grid.iter().flatten().map(|f| f.log_likelihood).sum();
        if ll < previous {
            // The refit scored below the state it started from; keep that state.
            trajectory.push(RefinementStep {
                iteration,
                changes: 0,
                log_likelihood: previous,
            });
            break;
        }
        model = refit;
        fits = Some(grid);
        previous = ll;
        trajectory.push(RefinementStep {
            iteration,
            changes,
            log_likelihood: ll,
        });
    }
    Ok(Refinement {
        model,
        trajectory,
        fits,
    })
}

/// Full pipeline: spectral clustering, block pair fits, refinement.
pub fn fit_mulch(events: &EventStream, cfg: &FitConfig) -> Result<FitResult> {
    cfg.validate()?;
    if events.is_empty() {
        return Err(MulchError::NoEvents);
    }
    let t0 = Instant::now();
    let counts = count_matrix(events);
    let spectral = spectral_cluster_with(&counts, cfg.k, cfg.seed, &cfg.kmeans)?;
    let t_spectral = t0.elapsed().as_secs_f64();

    let t1 = Instant::now();
    let (model, grid) = fit_all(events, &spectral, cfg, None)?;
    let initial_ll: f64 = grid.iter().flatten().map(|f| f.log_likelihood).sum();
    let t_fit = t1.elapsed().as_secs_f64();

    let t2 = Instant::now();
    let refined = refine_from(events, &model, initial_ll, cfg)?;
    let t_refine = t2.elapsed().as_secs_f64();
    let fits = refined.fits.unwrap_or(grid);

    let grid_ll: Vec<Vec<f64>> = fits
        .iter()
        .map(|r| r.iter().map(|f| f.log_likelihood).collect())
        .collect();
    let statuses = fits
        .iter()
        .map(|r| r.iter().map(|f| f.status).collect())
        .collect();
    let empty_block_pairs = fits
        .iter()
        .enumerate()
        .flat_map(|(a, r)| {
            r.iter()
                .enumerate()
                .filter(|(_, f)| f.empty)
                .map(move |(b, _)| (a, b))
        })
        .collect();
    Ok(FitResult {
        log_likelihood: grid_ll.iter().flatten().sum(),
        grid: grid_ll,
        model: refined.model,
        spectral_membership: spectral,
        initial_log_likelihood: initial_ll,
        trajectory: refined.trajectory,
        statuses,
        empty_block_pairs,
        timings: Timings {
            spectral_seconds: t_spectral,
            initial_fit_seconds: t_fit,
            refinement_seconds: t_refine,
            total_seconds: t0.elapsed().as_secs_f64(),
        },
    })
}

/// Metric used by [`select_k`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SelectionMetric {
    TestLoglik,
    Auc,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SelectionScore {
    pub k: usize,
    pub score: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    pub best_k: usize,
    pub scores: Vec<SelectionScore>,
}

/// Fits each candidate `K` on the first `n_train` events of `full` and keeps
/// the one with the best test metric (smallest `K` on ties).
pub fn select_k(
    full: &EventStream,
    n_train: usize,
    candidates: &[usize],
    metric: SelectionMetric,
    cfg: &FitConfig,
) -> Result<Selection> {
    if candidates.is_empty() {
        return Err(MulchError::NoCandidates);
    }
    let mut ks = candidates.to_vec();
    ks.sort_unstable();
    ks.dedup();
    let (train, _) = crate::events::split_train_test(full, n_train)?;
    let train = crate::eval::trim_to_active_prefix(train)?;
    let mut scores = Vec::with_capacity(ks.len());
    for &k in &ks {
        let mut c = cfg.clone();
        c.k = k;
        let fit = fit_mulch(&train, &c)?;
        let model = crate::eval::extend_to(&fit.model, full.n_nodes())?;
        let score = match metric {
            SelectionMetric::TestLoglik => {
                crate::eval::test_log_likelihood_per_event(&model, full, n_train)?
            }
            SelectionMetric::Auc => {
                crate::eval::dynamic_link_prediction_auc(
                    &model,
                    full,
                    n_train,
                    &crate::eval::AucConfig::new(cfg.seed),
                )?
                .mean
            }
        };
        log::info!("K = {k}: {metric:?} = {score}");
        scores.push(SelectionScore { k, score });
    }
    let mut best = &scores[0];
    for s in &scores[1..] {
        if s.score > best.score {
            best = s;
        }
    }
    Ok(Selection {
        best_k: best.k,
        scores,
    })
}
