//! Parameter containers and the pointwise mathematics shared by simulation,
//! likelihood and evaluation.
//!
//! Node pairs `(i, j)` belong to the block pair `(z_i, z_j)`. An event on
//! `(x, y)` only excites pairs in `bp(z_x, z_y)` and `bp(z_y, z_x)`, and the
//! way it does so is one of six [`ExcitationType`]s. The jump size and kernel
//! weights applied are always those of the *receiving* pair's block pair.

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{MulchError, Result};
use crate::events::{Event, IdMap};

/// The six ways an event `(x, y)` can excite another node pair.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ExcitationType {
    /// `(x, y)` again.
    SelfExcitation,
    /// `(y, x)`.
    Reciprocal,
    /// `(x, j)` for another `j` in `y`'s block.
    TurnContinuation,
    /// `(y, j)` for another `j` in `x`'s block.
    GeneralizedReciprocity,
    /// `(i, y)` for another `i` in `x`'s block.
    AlliedContinuation,
    /// `(i, x)` for another `i` in `y`'s block.
    AlliedReciprocity,
}

impl ExcitationType {
    pub const ALL: [ExcitationType; 6] = [
        ExcitationType::SelfExcitation,
        ExcitationType::Reciprocal,
        ExcitationType::TurnContinuation,
        ExcitationType::GeneralizedReciprocity,
        ExcitationType::AlliedContinuation,
        ExcitationType::AlliedReciprocity,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    /// Key used in model JSON.
    pub fn key(self) -> &'static str {
        match self {
            ExcitationType::SelfExcitation => "self",
            ExcitationType::Reciprocal => "recip",
            ExcitationType::TurnContinuation => "turn",
            ExcitationType::GeneralizedReciprocity => "gen_recip",
            ExcitationType::AlliedContinuation => "allied_cont",
            ExcitationType::AlliedReciprocity => "allied_recip",
        }
    }
}

/// Jump sizes indexed by [`ExcitationType`].
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(from = "AlphaJson", into = "AlphaJson")]
pub struct Alpha(pub [f64; 6]);

impl Alpha {
    pub fn get(&self, ty: ExcitationType) -> f64 {
        self.0[ty.index()]
    }

    pub fn set(&mut self, ty: ExcitationType, value: f64) {
        self.0[ty.index()] = value;
    }

    pub fn iter(&self) -> impl Iterator<Item = (ExcitationType, f64)> + '_ {
        ExcitationType::ALL.iter().map(move |&t| (t, self.get(t)))
    }
}

impl std::ops::Index<ExcitationType> for Alpha {
    type Output = f64;

    fn index(&self, ty: ExcitationType) -> &f64 {
        &self.0[ty.index()]
    }
}

#[derive(Serialize, Deserialize)]
struct AlphaJson {
    #[serde(rename = "self")]
    self_: f64,
    recip: f64,
    turn: f64,
    gen_recip: f64,
    allied_cont: f64,
    allied_recip: f64,
}

impl From<AlphaJson> for Alpha {
    fn from(a: AlphaJson) -> Self {
        Alpha([
            a.self_,
            a.recip,
            a.turn,
            a.gen_recip,
            a.allied_cont,
            a.allied_recip,
        ])
    }
}

impl From<Alpha> for AlphaJson {
    fn from(a: Alpha) -> Self {
        let [self_, recip, turn, gen_recip, allied_cont, allied_recip] = a.0;
        AlphaJson {
            self_,
            recip,
            turn,
            gen_recip,
            allied_cont,
            allied_recip,
        }
    }
}

/// Base rate, jump sizes and kernel weights shared by every pair in one block pair.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlockPairParams {
    pub mu: f64,
    pub alpha: Alpha,
    pub c: Vec<f64>,
}

impl BlockPairParams {
    /// Poisson pair (no excitation) with uniform kernel weights.
    pub fn poisson(mu: f64, q: usize) -> Self {
        BlockPairParams {
            mu,
            alpha: Alpha::default(),
            c: vec![1.0 / q as f64; q],
        }
    }

    /// `theta` in the order `(mu, self, recip, turn, gen_recip, allied_cont, allied_recip)`.
    pub fn from_theta(theta: [f64; 7], c: Vec<f64>) -> Self {
        let [mu, a0, a1, a2, a3, a4, a5] = theta;
        BlockPairParams {
            mu,
            alpha: Alpha([a0, a1, a2, a3, a4, a5]),
            c,
        }
    }

    fn validate(&self, q: usize) -> Result<()> {
        let bad = |msg: String| Err(MulchError::InvalidParameters(msg));
        if !(self.mu.is_finite() && self.mu >= 0.0) {
            return bad(format!("mu must be finite and >= 0, got {}", self.mu));
        }
        if let Some((t, a)) = self
            .alpha
            .iter()
            .find(|(_, a)| !(a.is_finite() && *a >= 0.0))
        {
            return bad(format!(
                "alpha[{}] must be finite and >= 0, got {a}",
                t.key()
            ));
        }
        if self.c.len() != q {
            return bad(format!("expected {q} kernel weights, got {}", self.c.len()));
        }
        if self.c.iter().any(|&c| !(0.0..=1.0).contains(&c)) {
            return bad(format!("kernel weights must lie in [0, 1]: {:?}", self.c));
        }
        let sum: f64 = self.c.iter().sum();
        if (sum - 1.0).abs() > 1e-6 {
            return bad(format!("kernel weights must sum to 1, got {sum}"));
        }
        Ok(())
    }
}

/// Block label of every node.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Membership {
    labels: Vec<usize>,
    k: usize,
}

impl Membership {
    pub fn new(labels: Vec<usize>, k: usize) -> Result<Self> {
        if k == 0 {
            return Err(MulchError::InvalidMembership("K must be at least 1".into()));
        }
        if let Some((i, &z)) = labels.iter().enumerate().find(|(_, &z)| z >= k) {
            return Err(MulchError::InvalidMembership(format!(
                "node {i} has label {z} >= K = {k}"
            )));
        }
        Ok(Membership { labels, k })
    }

    /// Smallest `K` covering every label.
    pub fn from_labels(labels: Vec<usize>) -> Result<Self> {
        let k = labels.iter().max().map_or(1, |m| m + 1);
        Self::new(labels, k)
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn block(&self, node: usize) -> usize {
        self.labels[node]
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn block_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        for &z in &self.labels {
            sizes[z] += 1;
        }
        sizes
    }

    /// Node lists per block, each in increasing node order.
    pub fn members(&self) -> Vec<Vec<usize>> {
        let mut members = vec![Vec::new(); self.k];
        for (i, &z) in self.labels.iter().enumerate() {
            members[z].push(i);
        }
        members
    }

    pub fn set(&mut self, node: usize, block: usize) {
        assert!(block < self.k, "block {block} out of range");
        self.labels[node] = block;
    }

    /// Number of ordered node pairs `(i, j)`, `i != j`, in `bp(a, b)`.
    pub fn pair_count(sizes: &[usize], a: usize, b: usize) -> usize {
        if a == b {
            sizes[a] * sizes[a].saturating_sub(1)
        } else {
            sizes[a] * sizes[b]
        }
    }
}

/// Complete MULCH parameterization.
#[derive(Clone, Debug, PartialEq)]
pub struct MulchModel {
    betas: Vec<f64>,
    params: Vec<Vec<BlockPairParams>>,
    membership: Membership,
}

impl MulchModel {
    pub fn new(
        betas: Vec<f64>,
        params: Vec<Vec<BlockPairParams>>,
        membership: Membership,
    ) -> Result<Self> {
        let k = membership.k();
        if betas.is_empty() {
            return Err(MulchError::InvalidParameters(
                "need at least one decay rate".into(),
            ));
        }
        if betas.iter().any(|&b| !(b.is_finite() && b > 0.0)) {
            return Err(MulchError::InvalidParameters(format!(
                "decay rates must be positive: {betas:?}"
            )));
        }
        if params.len() != k || params.iter().any(|row| row.len() != k) {
            return Err(MulchError::InvalidParameters(format!(
                "parameter grid must be {k} x {k}"
            )));
        }
        for row in &params {
            for p in row {
                p.validate(betas.len())?;
            }
        }
        Ok(MulchModel {
            betas,
            params,
            membership,
        })
    }

    /// Every block pair gets a copy of `diagonal` or `off_diagonal`.
    pub fn with_shared_params(
        betas: Vec<f64>,
        diagonal: BlockPairParams,
        off_diagonal: BlockPairParams,
        membership: Membership,
    ) -> Result<Self> {
        let k = membership.k();
        let params = (0..k)
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
        Self::new(betas, params, membership)
    }

    pub fn k(&self) -> usize {
        self.membership.k()
    }

    pub fn q(&self) -> usize {
        self.betas.len()
    }

    pub fn betas(&self) -> &[f64] {
        &self.betas
    }

    pub fn params(&self, a: usize, b: usize) -> &BlockPairParams {
        &self.params[a][b]
    }

    pub fn params_mut(&mut self, a: usize, b: usize) -> &mut BlockPairParams {
        &mut self.params[a][b]
    }

    pub fn grid(&self) -> &[Vec<BlockPairParams>] {
        &self.params
    }

    pub fn membership(&self) -> &Membership {
        &self.membership
    }

    pub fn n_nodes(&self) -> usize {
        self.membership.len()
    }

    /// Parameters of the block pair containing node pair `(i, j)`.
    pub fn pair_params(&self, i: usize, j: usize) -> &BlockPairParams {
        &self.params[self.membership.block(i)][self.membership.block(j)]
    }

    pub fn with_membership(&self, membership: Membership) -> Result<Self> {
        if membership.k() != self.k() {
            return Err(MulchError::InvalidMembership(format!(
                "membership has K = {}, model has K = {}",
                membership.k(),
                self.k()
            )));
        }
        Ok(MulchModel {
            membership,
            ..self.clone()
        })
    }

    /// Copy with the jump sizes of the excitation types not in `keep` set to zero.
    pub fn masked(&self, keep: &[ExcitationType]) -> Self {
        let mut m = self.clone();
        for row in &mut m.params {
            for p in row {
                for t in ExcitationType::ALL {
                    if !keep.contains(&t) {
                        p.alpha.set(t, 0.0);
                    }
                }
            }
        }
        m
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&ModelJson::from(self))
            .expect("model serialization cannot fail")
    }

    pub fn from_json(text: &str) -> std::result::Result<Self, ModelJsonError> {
        let raw: ModelJson = serde_json::from_str(text)?;
        Ok(raw.try_into()?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()).map_err(|e| MulchError::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| MulchError::io(path, e))?;
        MulchModel::from_json(&text).map_err(|e| match e {
            ModelJsonError::Json(e) => MulchError::json(path, e),
            ModelJsonError::Invalid(e) => e,
        })
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ModelJsonError {
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Invalid(#[from] MulchError),
}

/// On-disk form of [`MulchModel`].
#[derive(Serialize, Deserialize)]
pub struct ModelJson {
    #[serde(rename = "K")]
    pub k: usize,
    pub betas: Vec<f64>,
    pub blocks: Vec<Vec<BlockPairParams>>,
    pub membership: Vec<usize>,
}

impl From<&MulchModel> for ModelJson {
    fn from(m: &MulchModel) -> Self {
        ModelJson {
            k: m.k(),
            betas: m.betas.clone(),
            blocks: m.params.clone(),
            membership: m.membership.labels().to_vec(),
        }
    }
}

impl TryFrom<ModelJson> for MulchModel {
    type Error = MulchError;

    fn try_from(raw: ModelJson) -> Result<Self> {
        let z = Membership::new(raw.membership, raw.k)?;
        MulchModel::new(raw.betas, raw.blocks, z)
    }
}

/// How an event on `src` excites `dst`, and the block pair of `dst`.
///
/// Returns `None` when `dst` is not excited by `src` at all.
pub fn excitation_selector(
    src: (usize, usize),
    dst: (usize, usize),
    z: &Membership,
) -> Option<(ExcitationType, (usize, usize))> {
    let (x, y) = src;
    let (i, j) = dst;
    let block = (z.block(i), z.block(j));
    let ty = if (i, j) == (x, y) {
        ExcitationType::SelfExcitation
    } else if (i, j) == (y, x) {
        ExcitationType::Reciprocal
    } else if i == x && j != y && z.block(j) == z.block(y) {
        ExcitationType::TurnContinuation
    } else if i == y && j != x && z.block(j) == z.block(x) {
        ExcitationType::GeneralizedReciprocity
    } else if j == y && i != x && z.block(i) == z.block(x) {
        ExcitationType::AlliedContinuation
    } else if j == x && i != y && z.block(i) == z.block(y) {
        ExcitationType::AlliedReciprocity
    } else {
        return None;
    };
    Some((ty, block))
}

/// Calls `f` for every pair excited by an event on `(x, y)`.
///
/// Equivalent to scanning all pairs with [`excitation_selector`] but only
/// touches the `O(n_a + n_b)` pairs that can match.
pub fn for_each_excited(
    (x, y): (usize, usize),
    z: &Membership,
    members: &[Vec<usize>],
    mut f: impl FnMut(ExcitationType, (usize, usize)),
) {
    let (zx, zy) = (z.block(x), z.block(y));
    f(ExcitationType::SelfExcitation, (x, y));
    f(ExcitationType::Reciprocal, (y, x));
    for &j in &members[zy] {
        if j != y && j != x {
            f(ExcitationType::TurnContinuation, (x, j));
        }
    }
    for &j in &members[zx] {
        if j != x && j != y {
            f(ExcitationType::GeneralizedReciprocity, (y, j));
        }
    }
    for &i in &members[zx] {
        if i != x && i != y {
            f(ExcitationType::AlliedContinuation, (i, y));
        }
    }
    for &i in &members[zy] {
        if i != y && i != x {
            f(ExcitationType::AlliedReciprocity, (i, x));
        }
    }
}

/// `sum_q c_q beta_q exp(-beta_q dt)`.
pub fn kernel_value(c: &[f64], betas: &[f64], dt: f64) -> Result<f64> {
    if dt < 0.0 || dt.is_nan() {
        return Err(MulchError::NegativeLag(dt));
    }
    Ok(kernel_unchecked(c, betas, dt))
}

#[inline]
pub(crate) fn kernel_unchecked(c: &[f64], betas: &[f64], dt: f64) -> f64 {
    c.iter()
        .zip(betas)
        .map(|(&c, &b)| c * b * (-b * dt).exp())
        .sum()
}

/// `integral_0^dt` of the kernel: `sum_q c_q (1 - exp(-beta_q dt))`.
pub fn kernel_integral(c: &[f64], betas: &[f64], dt: f64) -> f64 {
    c.iter()
        .zip(betas)
        .map(|(&c, &b)| c * -(-b * dt).exp_m1())
        .sum()
}

/// Conditional intensity of `dst` at `t` by direct summation over `history`.
///
/// Only events strictly before `t` contribute.
pub fn intensity(dst: (usize, usize), t: f64, history: &[Event], model: &MulchModel) -> f64 {
    let z = model.membership();
    let p = model.pair_params(dst.0, dst.1);
    let mut lambda = p.mu;
    for e in history.iter().take_while(|e| e.time < t) {
        if let Some((ty, _)) = excitation_selector(e.pair(), dst, z) {
            lambda += p.alpha.get(ty) * kernel_unchecked(&p.c, model.betas(), t - e.time);
        }
    }
    lambda
}

#[derive(Clone, Debug)]
struct DecayEntry {
    time: f64,
    sums: Vec<f64>,
}

/// Recursively maintained excitation sums
/// `S_d^q(t) = sum_{s excites d, t_s <= t} alpha * exp(-beta_q (t - t_s))`.
///
/// Jumps already carry the receiving pair's `alpha`, so
/// `lambda_d(t) = mu + sum_q c_q beta_q S_d^q(t)`.
#[derive(Clone, Debug)]
pub struct DecayedState<'m> {
    model: &'m MulchModel,
    members: Vec<Vec<usize>>,
    entries: HashMap<(usize, usize), DecayEntry>,
    last: f64,
}

impl<'m> DecayedState<'m> {
    pub fn new(model: &'m MulchModel) -> Self {
        DecayedState {
            model,
            members: model.membership().members(),
            entries: HashMap::new(),
            last: f64::NEG_INFINITY,
        }
    }

    pub fn last_time(&self) -> f64 {
        self.last
    }

    pub fn apply(&mut self, event: &Event) -> Result<()> {
        if event.time < self.last {
            return Err(MulchError::OutOfOrder {
                time: event.time,
                last: self.last,
            });
        }
        self.last = event.time;
        let model = self.model;
        let betas = model.betas();
        let entries = &mut self.entries;
        for_each_excited(event.pair(), model.membership(), &self.members, |ty, d| {
            let jump = model.pair_params(d.0, d.1).alpha.get(ty);
            let entry = entries.entry(d).or_insert_with(|| DecayEntry {
                time: event.time,
                sums: vec![0.0; betas.len()],
            });
            let dt = event.time - entry.time;
            for (s, &b) in entry.sums.iter_mut().zip(betas) {
                *s = *s * (-b * dt).exp() + jump;
            }
            entry.time = event.time;
        });
        Ok(())
    }

    /// `S_d^q(t)` for every `q`.
    pub fn sums(&self, d: (usize, usize), t: f64) -> Result<Vec<f64>> {
        if t < self.last {
            return Err(MulchError::OutOfOrder {
                time: t,
                last: self.last,
            });
        }
        let betas = self.model.betas();
        Ok(match self.entries.get(&d) {
            Some(entry) => entry
                .sums
                .iter()
                .zip(betas)
                .map(|(&s, &b)| s * (-b * (t - entry.time)).exp())
                .collect(),
            None => vec![0.0; betas.len()],
        })
    }

    pub fn intensity(&self, d: (usize, usize), t: f64) -> Result<f64> {
        let p = self.model.pair_params(d.0, d.1);
        let sums = self.sums(d, t)?;
        Ok(p.mu
            + sums
                .iter()
                .zip(&p.c)
                .zip(self.model.betas())
                .map(|((&s, &c), &b)| c * b * s)
                .sum::<f64>())
    }
}

/// On-disk membership: block labels by dense node index plus the mapping
/// from file ids to those indices.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MembershipFile {
    pub k: usize,
    pub labels: Vec<usize>,
    pub ids: IdMap,
}

impl MembershipFile {
    pub fn new(z: &Membership, ids: IdMap) -> Self {
        MembershipFile {
            k: z.k(),
            labels: z.labels().to_vec(),
            ids,
        }
    }

    pub fn membership(&self) -> Result<Membership> {
        Membership::new(self.labels.clone(), self.k)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self).expect("membership serializes");
        std::fs::write(path, text).map_err(|e| MulchError::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| MulchError::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| MulchError::json(path, e))
    }
}
