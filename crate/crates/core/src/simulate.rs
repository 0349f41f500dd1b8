//! Exact simulation by thinning.
//!
//! Block pair couples are independent processes, so each couple is simulated
//! on its own random stream and the fragments are merged by time. Inside a
//! couple the per-pair kernel sums are kept for every pair in Fenwick trees;
//! an event only updates the pairs it excites. The total intensity only
//! decays between events, so its value right after the last event (or
//! rejected candidate) bounds it until the next one.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::branching::{self, Couple};
use crate::error::{MulchError, Result};
use crate::events::{Event, EventStream};
use crate::model::{for_each_excited, BlockPairParams, Membership, MulchModel};

/// Default cap on the number of events per couple for unstable runs.
pub const DEFAULT_MAX_EVENTS: usize = 5_000_000;

fn default_max_events() -> usize {
    DEFAULT_MAX_EVENTS
}

/// Simulation settings, readable from a JSON file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    /// Block probabilities used when `membership` is absent.
    pub pi: Vec<f64>,
    pub betas: Vec<f64>,
    /// `K x K` grid of block pair parameters.
    pub blocks: Vec<Vec<BlockPairParams>>,
    /// Observation window `[0, duration]`.
    pub duration: f64,
    pub n_nodes: usize,
    #[serde(default)]
    pub seed: u64,
    /// Fixed node labels; overrides sampling from `pi`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub membership: Option<Vec<usize>>,
    /// Simulate even when the branching matrix has spectral radius >= 1.
    #[serde(default)]
    pub allow_unstable: bool,
    /// Per-couple event cap, applied only when `allow_unstable` is set.
    #[serde(default = "default_max_events")]
    pub max_events: usize,
}

impl SimConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| MulchError::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| MulchError::json(path, e))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self).expect("config serializes");
        std::fs::write(path, text).map_err(|e| MulchError::io(path, e))
    }

    /// Same parameters for diagonal and off-diagonal block pairs.
    pub fn with_shared_params(
        pi: Vec<f64>,
        betas: Vec<f64>,
        diagonal: BlockPairParams,
        off_diagonal: BlockPairParams,
        n_nodes: usize,
        duration: f64,
        seed: u64,
    ) -> Self {
        let k = pi.len();
        let blocks = (0..k)
            .map(|a| {
                (0..k)
                    .map(|b| {
                        if a == b {
                            diagonal.clone()
                        } else {
                            off_diagonal.clone()
                        }
                    })
                    .collect()
            })
            .collect();
        SimConfig {
            pi,
            betas,
            blocks,
            duration,
            n_nodes,
            seed,
            membership: None,
            allow_unstable: false,
            max_events: DEFAULT_MAX_EVENTS,
        }
    }
}

/// Output of [`generate_network`].
#[derive(Clone, Debug)]
pub struct Network {
    pub model: MulchModel,
    pub events: EventStream,
    /// Whether any couple hit the event cap.
    pub truncated: bool,
}

impl Network {
    pub fn membership(&self) -> &Membership {
        self.model.membership()
    }
}

/// Draws `n` i.i.d. labels from the categorical distribution `pi`.
pub fn sample_membership<R: Rng + ?Sized>(pi: &[f64], n: usize, rng: &mut R) -> Result<Membership> {
    if pi.is_empty() {
        return Err(MulchError::InvalidMembership("pi is empty".into()));
    }
    if pi.iter().any(|&p| !(p.is_finite() && p >= 0.0)) {
        return Err(MulchError::InvalidMembership(format!(
            "pi has invalid entries: {pi:?}"
        )));
    }
    let total: f64 = pi.iter().sum();
    if (total - 1.0).abs() > 1e-6 {
        return Err(MulchError::InvalidMembership(format!(
            "pi sums to {total}, not 1"
        )));
    }
    let labels = (0..n)
        .map(|_| {
            let u: f64 = rng.random::<f64>() * total;
            let mut acc = 0.0;
            for (k, &p) in pi.iter().enumerate() {
                acc += p;
                if u < acc {
                    return k;
                }
            }
            pi.iter().rposition(|&p| p > 0.0).unwrap_or(0)
        })
        .collect();
    Membership::new(labels, pi.len())
}

/// Spectral radius of the branching matrix (max over couples).
pub fn stationarity_check(model: &MulchModel) -> f64 {
    let sizes = model.membership().block_sizes();
    branching::couples(model.k())
        .into_iter()
        .map(|c| branching::couple_radius(model, &sizes, c))
        .fold(0.0, f64::max)
}

/// Events of one couple, with global node ids.
#[derive(Clone, Debug, Default)]
pub struct Fragment {
    pub events: Vec<Event>,
    pub truncated: bool,
}

/// Dense layout of the pairs inside one couple: group `g` holds the pairs of
/// `groups[g]`, row-major over the member lists (diagonal slots unused).
struct Layout {
    pairs: Vec<(usize, usize)>,
    pos: Vec<usize>,
    offsets: [usize; 2],
    rows: [usize; 2],
    cols: [usize; 2],
    groups: Vec<(usize, usize)>,
}

impl Layout {
    fn new(z: &Membership, members: &[Vec<usize>], couple: Couple) -> Self {
        let mut pos = vec![0; z.len()];
        for block in members {
            for (p, &node) in block.iter().enumerate() {
                pos[node] = p;
            }
        }
        let groups = couple.groups();
        let mut pairs = Vec::new();
        let mut offsets = [0; 2];
        let mut rows = [0; 2];
        let mut cols = [0; 2];
        for (g, &(a, b)) in groups.iter().enumerate() {
            offsets[g] = pairs.len();
            rows[g] = members[a].len();
            cols[g] = members[b].len();
            for &i in &members[a] {
                for &j in &members[b] {
                    pairs.push((i, j));
                }
            }
        }
        Layout {
            pairs,
            pos,
            offsets,
            rows,
            cols,
            groups,
        }
    }

    fn group_of(&self, z: &Membership, (i, j): (usize, usize)) -> usize {
        if (z.block(i), z.block(j)) == self.groups[0] {
            0
        } else {
            1
        }
    }

    /// Offset of `(i, j)` inside its group.
    fn local(&self, g: usize, (i, j): (usize, usize)) -> usize {
        self.pos[i] * self.cols[g] + self.pos[j]
    }

    fn group_len(&self, g: usize) -> usize {
        self.rows[g] * self.cols[g]
    }
}

/// Fenwick tree over nonnegative weights with proportional sampling.
struct Fenwick {
    tree: Vec<f64>,
    values: Vec<f64>,
}

impl Fenwick {
    fn new(n: usize) -> Self {
        Fenwick {
            tree: vec![0.0; n + 1],
            values: vec![0.0; n],
        }
    }

    fn add(&mut self, i: usize, delta: f64) {
        self.values[i] += delta;
        let mut k = i + 1;
        while k < self.tree.len() {
            self.tree[k] += delta;
            k += k & k.wrapping_neg();
        }
    }

    fn total(&self) -> f64 {
        let mut k = self.values.len();
        let mut s = 0.0;
        while k > 0 {
            s += self.tree[k];
            k &= k - 1;
        }
        s
    }

    /// Smallest index whose prefix sum exceeds `target`.
    fn find(&self, mut target: f64) -> usize {
        let n = self.values.len();
        let mut idx = 0;
        let mut step = n.next_power_of_two();
        while step > 0 {
            let next = idx + step;
            if next <= n && self.tree[next] <= target {
                idx = next;
                target -= self.tree[next];
            }
            step >>= 1;
        }
        idx.min(n - 1)
    }

    /// Multiplies every weight by `f` and rebuilds the tree.
    fn scale(&mut self, f: f64) {
        let n = self.values.len();
        self.tree.iter_mut().for_each(|x| *x = 0.0);
        for i in 0..n {
            self.values[i] *= f;
            self.tree[i + 1] += self.values[i];
            let parent = (i + 1) + ((i + 1) & (i + 1).wrapping_neg());
            if parent <= n {
                self.tree[parent] += self.tree[i + 1];
            }
        }
    }
}

/// Largest exponent allowed for a stored weight before rescaling.
const MAX_EXPONENT: f64 = 200.0;

/// Simulates one couple of `model` on `[0, duration]`.
///
/// Kernel sums are stored as `S_q(d, t) = A_q[d] exp(-beta_q (t - ref_q))`
/// with a shared reference time per `q`, so an event only touches the
/// pairs it excites and the group totals follow from Fenwick sums.
///
/// Fails on a non-stationary couple unless `max_events` is given, in which
/// case simulation stops once that many events have been generated.
pub fn simulate_block_pair<R: Rng + ?Sized>(
    model: &MulchModel,
    couple: Couple,
    duration: f64,
    rng: &mut R,
    max_events: Option<usize>,
) -> Result<Fragment> {
    let z = model.membership();
    let sizes = z.block_sizes();
    if !branching::couple_is_populated(&sizes, couple) {
        return Ok(Fragment::default());
    }
    let radius = branching::couple_radius(model, &sizes, couple);
    if radius >= 1.0 && max_events.is_none() {
        return Err(MulchError::NonStationary { radius });
    }
    let cap = max_events.unwrap_or(usize::MAX);

    let members = z.members();
    let layout = Layout::new(z, &members, couple);
    let betas = model.betas();
    let nq = betas.len();
    let ng = layout.groups.len();
    let params: Vec<&BlockPairParams> = layout
        .groups
        .iter()
        .map(|&(a, b)| model.params(a, b))
        .collect();
    let diagonal = couple.is_diagonal();
    let base_g: Vec<f64> = (0..ng)
        .map(|g| {
            let (a, b) = layout.groups[g];
            params[g].mu * Membership::pair_count(&sizes, a, b) as f64
        })
        .collect();
    let base: f64 = base_g.iter().sum();
    // weight[g][q] = c_q beta_q
    let weight: Vec<Vec<f64>> = params
        .iter()
        .map(|p| p.c.iter().zip(betas).map(|(c, b)| c * b).collect())
        .collect();

    let mut trees: Vec<Vec<Fenwick>> = (0..ng)
        .map(|g| (0..nq).map(|_| Fenwick::new(layout.group_len(g))).collect())
        .collect();
    let mut reference = vec![0.0; nq];
    let mut t = 0.0;
    let mut out = Fragment::default();

    let excitation =
        |g: usize, q: usize, t: f64, trees: &[Vec<Fenwick>], reference: &[f64]| -> f64 {
            weight[g][q] * trees[g][q].total() * (-betas[q] * (t - reference[q])).exp()
        };
    let total_at = |t: f64, trees: &[Vec<Fenwick>], reference: &[f64]| -> f64 {
        let mut lam = base;
        for g in 0..ng {
            for q in 0..nq {
                lam += excitation(g, q, t, trees, reference);
            }
        }
        lam
    };

    loop {
        let bound = total_at(t, &trees, &reference);
        if bound <= 0.0 {
            break;
        }
        let u: f64 = rng.random();
        t += -(1.0 - u).ln() / bound;
        if t > duration {
            break;
        }
        let lam = total_at(t, &trees, &reference);
        let v: f64 = rng.random();
        if v * bound > lam {
            continue;
        }

        // Pick the pair: baseline part uniformly over valid pairs of a
        // group, excitation part through the Fenwick weights.
        let (g, local) = loop {
            let mut target = rng.random::<f64>() * lam;
            let mut pick = None;
            let mut excited = false;
            for g in 0..ng {
                if target < base_g[g] {
                    let (r, c) = (layout.rows[g], layout.cols[g]);
                    let local = if diagonal {
                        let i = rng.random_range(0..r);
                        let mut j = rng.random_range(0..c - 1);
                        if j >= i {
                            j += 1;
                        }
                        i * c + j
                    } else {
                        rng.random_range(0..r * c)
                    };
                    pick = Some((g, local));
                    break;
                }
                target -= base_g[g];
            }
            if pick.is_none() {
                'outer: for g in 0..ng {
                    for q in 0..nq {
                        let w = excitation(g, q, t, &trees, &reference);
                        if target < w {
                            let scaled = target / w * trees[g][q].total();
                            pick = Some((g, trees[g][q].find(scaled)));
                            excited = true;
                            break 'outer;
                        }
                        target -= w;
                    }
                }
            }
            // Rounding can land past the end or on an empty slot; redraw.
            if let Some((g, local)) = pick {
                let (i, j) = layout.pairs[layout.offsets[g] + local];
                if i != j && (!excited || local_weight(&trees[g], local) > 0.0) {
                    break (g, local);
                }
            }
        };
        let (x, y) = layout.pairs[layout.offsets[g] + local];
        out.events.push(Event::new(x, y, t));

        for q in 0..nq {
            let exponent = betas[q] * (t - reference[q]);
            if exponent > MAX_EXPONENT {
                let f = (-exponent).exp();
                for row in trees.iter_mut() {
                    row[q].scale(f);
                }
                reference[q] = t;
            }
        }
        let growth: Vec<f64> = (0..nq)
            .map(|q| (betas[q] * (t - reference[q])).exp())
            .collect();
        for_each_excited((x, y), z, &members, |ty, dst| {
            let h = layout.group_of(z, dst);
            let jump = params[h].alpha.get(ty);
            if jump != 0.0 {
                let slot = layout.local(h, dst);
                for q in 0..nq {
                    trees[h][q].add(slot, jump * growth[q]);
                }
            }
        });

        if out.events.len() >= cap {
            out.truncated = true;
            log::warn!(
                "couple ({}, {}) stopped at the event cap of {cap} (t = {t:.4})",
                couple.a,
                couple.b
            );
            break;
        }
    }
    Ok(out)
}

fn local_weight(trees: &[Fenwick], local: usize) -> f64 {
    trees.iter().map(|f| f.values[local]).sum()
}

/// Samples memberships (unless fixed) and simulates every couple.
///
/// Couple `i` (in [`branching::couples`] order) uses stream `i + 1` of a
/// ChaCha8 generator seeded from `cfg.seed`; stream 0 draws the membership.
pub fn generate_network(cfg: &SimConfig) -> Result<Network> {
    if !(cfg.duration.is_finite() && cfg.duration >= 0.0) {
        return Err(MulchError::InvalidParameters(format!(
            "duration must be finite and >= 0, got {}",
            cfg.duration
        )));
    }
    let k = cfg.pi.len();
    let membership = match &cfg.membership {
        Some(labels) => {
            if labels.len() != cfg.n_nodes {
                return Err(MulchError::LengthMismatch(labels.len(), cfg.n_nodes));
            }
            Membership::new(labels.clone(), k)?
        }
        None => {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            rng.set_stream(0);
            sample_membership(&cfg.pi, cfg.n_nodes, &mut rng)?
        }
    };
    let model = MulchModel::new(cfg.betas.clone(), cfg.blocks.clone(), membership)?;
    let radius = stationarity_check(&model);
    if radius >= 1.0 {
        if !cfg.allow_unstable {
            return Err(MulchError::NonStationary { radius });
        }
        log::warn!("simulating a non-stationary process (spectral radius {radius:.4})");
    }
    let cap = cfg.allow_unstable.then_some(cfg.max_events);
    let couples = branching::couples(k);

    let run = |(idx, couple): (usize, &Couple)| {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(idx as u64 + 1);
        simulate_block_pair(&model, *couple, cfg.duration, &mut rng, cap)
    };
    #[cfg(feature = "parallel")]
    let fragments: Vec<Result<Fragment>> = {
        use rayon::prelude::*;
        couples.par_iter().enumerate().map(run).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let fragments: Vec<Result<Fragment>> = couples.iter().enumerate().map(run).collect();

    let mut events = Vec::new();
    let mut truncated = false;
    for f in fragments {
        let f = f?;
        truncated |= f.truncated;
        events.extend(f.events);
    }
    let events = EventStream::new(events, cfg.n_nodes, cfg.duration)?;
    Ok(Network {
        model,
        events,
        truncated,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_block_config(theta_aa: [f64; 7], theta_ab: [f64; 7], n: usize, t: f64) -> SimConfig {
        let c = vec![0.5, 0.5];
        SimConfig::with_shared_params(
            vec![0.5, 0.5],
            vec![0.5, 4.0],
            BlockPairParams::from_theta(theta_aa, c.clone()),
            BlockPairParams::from_theta(theta_ab, c),
            n,
            t,
            7,
        )
    }

    #[test]
    fn same_seed_same_events() {
        let cfg = two_block_config(
            [0.01, 0.2, 0.2, 0.01, 0.01, 0.01, 0.01],
            [0.005, 0.1, 0.1, 0.0, 0.0, 0.0, 0.0],
            12,
            200.0,
        );
        let a = generate_network(&cfg).unwrap();
        let b = generate_network(&cfg).unwrap();
        assert_eq!(a.events.events(), b.events.events());
        assert_eq!(a.membership(), b.membership());
        assert!(!a.events.is_empty());
        let mut other = cfg.clone();
        other.seed = 8;
        let c = generate_network(&other).unwrap();
        assert_ne!(a.events.events(), c.events.events());
    }

    #[test]
    fn events_respect_blocks_and_window() {
        let cfg = two_block_config(
            [0.02, 0.1, 0.1, 0.01, 0.01, 0.01, 0.01],
            [0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
            10,
            100.0,
        );
        let net = generate_network(&cfg).unwrap();
        let z = net.membership();
        for e in net.events.events() {
            assert_ne!(e.sender, e.receiver);
            assert!(e.time > 0.0 && e.time <= 100.0);
            // zero off-diagonal parameters: no cross-block events
            assert_eq!(z.block(e.sender), z.block(e.receiver));
        }
        assert_eq!(net.events.duration(), 100.0);
    }

    #[test]
    fn unstable_rejected_unless_allowed() {
        let mut cfg = two_block_config(
            [0.05, 0.6, 0.6, 0.0, 0.0, 0.0, 0.0],
            [0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
            6,
            50.0,
        );
        assert!(matches!(
            generate_network(&cfg),
            Err(MulchError::NonStationary { .. })
        ));
        cfg.allow_unstable = true;
        cfg.max_events = 500;
        let net = generate_network(&cfg).unwrap();
        assert!(net.truncated);
    }

    #[test]
    fn fixed_membership_is_used() {
        let mut cfg = two_block_config([0.01; 7], [0.0; 7], 4, 10.0);
        cfg.blocks[0][0].alpha = Default::default();
        cfg.blocks[1][1].alpha = Default::default();
        cfg.membership = Some(vec![1, 0, 1, 0]);
        let net = generate_network(&cfg).unwrap();
        assert_eq!(net.membership().labels(), &[1, 0, 1, 0]);
    }

    #[test]
    fn sample_membership_validates_pi() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!(sample_membership(&[0.5, 0.6], 3, &mut rng).is_err());
        assert!(sample_membership(&[], 3, &mut rng).is_err());
        let z = sample_membership(&[0.0, 1.0], 5, &mut rng).unwrap();
        assert!(z.labels().iter().all(|&l| l == 1));
    }

    #[test]
    fn radius_of_diagonal_couple() {
        // 1 block of 4 nodes: self + recip + 2 * (four others)
        let c = vec![1.0];
        let p = BlockPairParams::from_theta([0.1, 0.2, 0.1, 0.01, 0.02, 0.03, 0.04], c);
        let model = MulchModel::new(
            vec![1.0],
            vec![vec![p]],
            Membership::new(vec![0; 4], 1).unwrap(),
        )
        .unwrap();
        let expected = 0.2 + 0.1 + 2.0 * (0.01 + 0.02 + 0.03 + 0.04);
        assert!((stationarity_check(&model) - expected).abs() < 1e-15);
    }
}
