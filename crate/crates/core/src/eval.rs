//! Predictive evaluation and expected counts.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::branching::{self, CoupleGamma};
use crate::error::{MulchError, Result};
use crate::events::{assign_new_nodes, split_train_test, EventStream};
use crate::fit::full_log_likelihood;
use crate::fit::likelihood::{AggregateState, PairIndex, NT};
use crate::model::MulchModel;
use crate::simulate::stationarity_check;

/// Drops trailing node indices that never appear in `stream`.
///
/// Streams loaded from CSV number nodes by first appearance, so the nodes
/// of a training prefix are exactly `0..n_active`.
pub fn trim_to_active_prefix(stream: EventStream) -> Result<EventStream> {
    let n = stream
        .events()
        .iter()
        .map(|e| e.sender.max(e.receiver) + 1)
        .max()
        .unwrap_or(0);
    stream.with_n_nodes(n)
}

/// Extends `model`'s membership to `n_total` nodes; new nodes join the
/// largest block.
pub fn extend_to(model: &MulchModel, n_total: usize) -> Result<MulchModel> {
    if model.n_nodes() >= n_total {
        return Ok(model.clone());
    }
    let z = assign_new_nodes(model.membership(), n_total)?;
    model.with_membership(z)
}

/// Mean log-likelihood of the test events given all earlier events:
/// `(l(full) - l(train)) / n_test`, where `train` is the first `n_train`
/// events observed up to its last event.
pub fn test_log_likelihood_per_event(
    model: &MulchModel,
    full: &EventStream,
    n_train: usize,
) -> Result<f64> {
    let (train, _) = split_train_test(full, n_train)?;
    let n_test = full.len() - n_train;
    if n_test == 0 {
        return Err(MulchError::Evaluation("test set is empty".into()));
    }
    let model = extend_to(model, full.n_nodes())?;
    let ll_full = full_log_likelihood(&model, full)?;
    let ll_train = full_log_likelihood(&model, &train)?;
    Ok((ll_full - ll_train) / n_test as f64)
}

#[derive(Clone, Debug, PartialEq)]
pub struct AucConfig {
    pub n_windows: usize,
    /// Defaults to a hundredth of the test period.
    pub window_len: Option<f64>,
    /// Redraws allowed per window before it is skipped.
    pub max_retries: usize,
    pub seed: u64,
}

impl AucConfig {
    pub fn new(seed: u64) -> Self {
        AucConfig {
            n_windows: 100,
            window_len: None,
            max_retries: 100,
            seed,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AucResult {
    pub mean: f64,
    /// Population standard deviation over windows.
    pub std: f64,
    pub window_len: f64,
    pub aucs: Vec<f64>,
    pub skipped: usize,
}

/// Area under the ROC curve by the rank statistic, ties sharing their
/// average rank. `None` without both classes.
pub fn roc_auc(scores: &[f64], labels: &[bool]) -> Option<f64> {
    let pos = labels.iter().filter(|&&l| l).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &idx in &order[i..=j] {
            if labels[idx] {
                rank_sum += avg;
            }
        }
        i = j + 1;
    }
    let p = pos as f64;
    Some((rank_sum - p * (p + 1.0) / 2.0) / (p * neg as f64))
}

/// Link prediction over random windows of the test period.
///
/// Each ordered pair is scored by `1 - exp(-integral of lambda)` over the
/// window, given every event before the window start, and labeled by
/// whether it has an event inside the window.
pub fn dynamic_link_prediction_auc(
    model: &MulchModel,
    full: &EventStream,
    n_train: usize,
    cfg: &AucConfig,
) -> Result<AucResult> {
    let (train, _) = split_train_test(full, n_train)?;
    let model = extend_to(model, full.n_nodes())?;
    let z = model.membership();
    let (t0, t1) = (train.duration(), full.duration());
    let w = cfg.window_len.unwrap_or((t1 - t0) / 100.0);
    if !(w > 0.0) || t1 - w < t0 {
        return Err(MulchError::Evaluation(format!(
            "window length {w} does not fit in the test period [{t0}, {t1}]"
        )));
    }
    let events = full.events();
    let times: Vec<f64> = events.iter().map(|e| e.time).collect();
    let n = full.n_nodes();
    let pair_id = |i: usize, j: usize| i * n + j;
    let labels_for = |s: f64| -> Vec<bool> {
        let lo = times.partition_point(|&t| t < s);
        let hi = times.partition_point(|&t| t < s + w);
        let mut lab = vec![false; n * n];
        for e in &events[lo..hi] {
            lab[pair_id(e.sender, e.receiver)] = true;
        }
        lab
    };

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut starts = Vec::with_capacity(cfg.n_windows);
    let mut skipped = 0;
    for _ in 0..cfg.n_windows {
        let mut found = None;
        for _ in 0..=cfg.max_retries {
            let s = t0 + rng.random::<f64>() * (t1 - w - t0);
            let lab = labels_for(s);
            let pos = (0..n)
                .flat_map(|i| (0..n).map(move |j| (i, j)))
                .filter(|&(i, j)| i != j && lab[pair_id(i, j)])
                .count();
            if pos > 0 && pos < n * (n - 1) {
                found = Some(s);
                break;
            }
        }
        match found {
            Some(s) => starts.push(s),
            None => skipped += 1,
        }
    }
    if skipped > 0 {
        log::warn!(
            "{skipped} windows skipped: no window with both classes after {} draws",
            cfg.max_retries + 1
        );
    }
    if starts.is_empty() {
        return Err(MulchError::Evaluation(
            "no usable link-prediction window".into(),
        ));
    }

    // Walk the windows in time order, keeping the state current.
    let mut order: Vec<usize> = (0..starts.len()).collect();
    order.sort_by(|&a, &b| starts[a].total_cmp(&starts[b]));
    let betas = model.betas();
    let q = betas.len();
    let index = PairIndex::new(events);
    let mut state = AggregateState::new(index.n_ids(), z, betas);
    let mut next = 0;
    let mut r = vec![0.0; NT * q];
    let mut aucs = vec![0.0; starts.len()];
    let decay: Vec<f64> = betas.iter().map(|b| -(-b * w).exp_m1()).collect();
    for &wi in &order {
        let s = starts[wi];
        while next < events.len() && events[next].time < s {
            let e = &events[next];
            state.add(
                e.sender,
                e.receiver,
                Some(index.slot_of_event(next)),
                z,
                e.time,
            );
            next += 1;
        }
        let lab = labels_for(s);
        let mut scores = Vec::with_capacity(n * (n - 1));
        let mut labels = Vec::with_capacity(n * (n - 1));
        for i in 0..n {
            for j in (0..n).filter(|&j| j != i) {
                let (a, b) = (z.block(i), z.block(j));
                let p = model.params(a, b);
                state.streams(
                    (i, j),
                    (a, b),
                    index.slot((i, j)),
                    index.slot((j, i)),
                    s,
                    &mut r,
                );
                let mut integral = p.mu * w;
                for t in 0..NT {
                    let alpha = p.alpha.0[t];
                    if alpha == 0.0 {
                        continue;
                    }
                    for k in 0..q {
                        integral += alpha * p.c[k] * r[t * q + k] * decay[k];
                    }
                }
                scores.push(-(-integral).exp_m1());
                labels.push(lab[pair_id(i, j)]);
            }
        }
        aucs[wi] = roc_auc(&scores, &labels).expect("window has both classes");
    }
    let mean = aucs.iter().sum::<f64>() / aucs.len() as f64;
    let var = aucs.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / aucs.len() as f64;
    Ok(AucResult {
        mean,
        std: var.sqrt(),
        window_len: w,
        aucs,
        skipped,
    })
}

/// Expected number of events of every ordered pair over `[0, duration]`
/// under the stationary process: `duration * (I - Gamma)^{-1} mu`,
/// solved couple by couple.
pub fn expected_count_matrix(model: &MulchModel, duration: f64) -> Result<DMatrix<f64>> {
    let radius = stationarity_check(model);
    if radius >= 1.0 {
        return Err(MulchError::NonStationary { radius });
    }
    let n = model.n_nodes();
    let sizes = model.membership().block_sizes();
    let mut out = DMatrix::zeros(n, n);
    for couple in branching::couples(model.k()) {
        if !branching::couple_is_populated(&sizes, couple) {
            continue;
        }
        let gamma = CoupleGamma::assemble(model, couple);
        let mu: Vec<f64> = gamma
            .pairs
            .iter()
            .map(|&(i, j)| model.pair_params(i, j).mu)
            .collect();
        let (lam, converged) = gamma.solve_stationary(&mu, 1e-14, 1_000_000);
        if !converged {
            log::warn!(
                "stationary solve for couple ({}, {}) did not converge",
                couple.a,
                couple.b
            );
        }
        for (&(i, j), l) in gamma.pairs.iter().zip(lam) {
            out[(i, j)] = l * duration;
        }
    }
    Ok(out)
}

/// Expected count per pair of each block pair, from the quotient system.
pub fn expected_block_counts(model: &MulchModel, duration: f64) -> Result<Vec<Vec<Option<f64>>>> {
    let radius = stationarity_check(model);
    if radius >= 1.0 {
        return Err(MulchError::NonStationary { radius });
    }
    Ok(branching::stationary_block_rates(model)
        .into_iter()
        .map(|row| row.into_iter().map(|r| r.map(|x| x * duration)).collect())
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::events::Event;
    use crate::model::{BlockPairParams, Membership};

    #[test]
    fn auc_basics() {
        assert_eq!(roc_auc(&[0.3; 4], &[true, false, true, false]), Some(0.5));
        assert_eq!(
            roc_auc(&[1.0, 0.0, 1.0, 0.0], &[true, false, true, false]),
            Some(1.0)
        );
        assert_eq!(roc_auc(&[0.1, 0.2], &[true, true]), None);
    }

    #[test]
    fn poisson_test_loglik_closed_form() {
        let mu: f64 = 0.2;
        let z = Membership::new(vec![0, 0, 0], 1).unwrap();
        let m = MulchModel::new(vec![1.0], vec![vec![BlockPairParams::poisson(mu, 1)]], z).unwrap();
        let events = vec![
            Event::new(0, 1, 1.0),
            Event::new(1, 2, 2.0),
            Event::new(2, 0, 4.0),
            Event::new(0, 2, 7.0),
        ];
        let full = EventStream::new(events, 3, 7.0).unwrap();
        let v = test_log_likelihood_per_event(&m, &full, 2).unwrap();
        let expected = (2.0 * mu.ln() - mu * (7.0 - 2.0) * 6.0) / 2.0;
        assert!((v - expected).abs() < 1e-12);
        assert!(test_log_likelihood_per_event(&m, &full, 4).is_err());
    }

    #[test]
    fn poisson_expected_counts() {
        let z = Membership::new(vec![0, 1, 1], 2).unwrap();
        let grid = vec![
            vec![
                BlockPairParams::poisson(0.1, 1),
                BlockPairParams::poisson(0.2, 1),
            ],
            vec![
                BlockPairParams::poisson(0.3, 1),
                BlockPairParams::poisson(0.4, 1),
            ],
        ];
        let m = MulchModel::new(vec![1.0], grid, z).unwrap();
        let n = expected_count_matrix(&m, 10.0).unwrap();
        assert!((n[(0, 1)] - 2.0).abs() < 1e-12);
        assert!((n[(1, 0)] - 3.0).abs() < 1e-12);
        assert!((n[(1, 2)] - 4.0).abs() < 1e-12);
        assert_eq!(n[(0, 0)], 0.0);
    }

    #[test]
    fn geometric_branching() {
        let z = Membership::new(vec![0, 1], 2).unwrap();
        let mut p = BlockPairParams::poisson(0.5, 1);
        p.alpha.0[0] = 0.3;
        let grid = vec![
            vec![BlockPairParams::poisson(0.0, 1), p],
            vec![BlockPairParams::poisson(0.0, 1); 2],
        ];
        let m = MulchModel::new(vec![1.0], grid, z).unwrap();
        let n = expected_count_matrix(&m, 4.0).unwrap();
        assert!((n[(0, 1)] - 0.5 * 4.0 / 0.7).abs() < 1e-12);
    }
}
