//! Browser bindings for a static demo page: kernel shapes, a small
//! simulate-and-cluster round trip, and temporal motif counts.

use serde::Serialize;
use wasm_bindgen::prelude::*;

use mulch::events::{count_matrix, read_events, LoadOptions};
use mulch::model::kernel_value;
use mulch::motifs::count_temporal_motifs;
use mulch::simulate::{generate_network, SimConfig};
use mulch::spectral::{membership_ari, spectral_cluster};
use mulch::BlockPairParams;

fn js_err(e: impl std::fmt::Display) -> JsError {
    JsError::new(&e.to_string())
}

/// Samples the sum-of-exponentials kernel with weights `c` and decays
/// `betas` at `n_points` evenly spaced lags in `[0, t_max]`.
#[wasm_bindgen]
pub fn kernel_curve(
    c: &[f64],
    betas: &[f64],
    t_max: f64,
    n_points: usize,
) -> Result<Vec<f64>, JsError> {
    if c.len() != betas.len() || c.is_empty() {
        return Err(JsError::new(
            "kernel weights and decays must have the same nonzero length",
        ));
    }
    if n_points < 2 || !(t_max > 0.0) {
        return Err(JsError::new("need at least two points on a positive range"));
    }
    (0..n_points)
        .map(|i| {
            let lag = t_max * i as f64 / (n_points - 1) as f64;
            kernel_value(c, betas, lag).map_err(js_err)
        })
        .collect()
}

#[derive(Serialize)]
struct ClusterDemo {
    n_events: usize,
    ari: f64,
    truth: Vec<usize>,
    spectral: Vec<usize>,
    /// Counts with nodes sorted by true block.
    counts: Vec<Vec<u64>>,
}

/// Simulates an assortative `k`-block network and clusters its counts.
/// Returns JSON with the ARI, both labelings and the sorted count matrix.
#[wasm_bindgen]
pub fn simulate_and_cluster(
    n: usize,
    k: usize,
    duration: f64,
    seed: u64,
) -> Result<String, JsError> {
    if k == 0 || n < k || n > 400 {
        return Err(JsError::new("need 1 <= k <= n <= 400"));
    }
    let c = vec![0.33, 0.33, 0.34];
    let betas = vec![1.0 / 14.0, 1.0, 12.0];
    let diag =
        BlockPairParams::from_theta([0.008, 0.3, 0.3, 0.002, 0.0005, 0.001, 0.0005], c.clone());
    let off = BlockPairParams::from_theta([0.001, 0.1, 0.1, 0.001, 0.0001, 0.001, 0.0001], c);
    let cfg =
        SimConfig::with_shared_params(vec![1.0 / k as f64; k], betas, diag, off, n, duration, seed);
    let net = generate_network(&cfg).map_err(js_err)?;
    let counts = count_matrix(&net.events);
    let fitted = spectral_cluster(&counts, k, seed).map_err(js_err)?;
    let ari = membership_ari(net.membership(), &fitted).map_err(js_err)?;
    let truth = net.membership().labels().to_vec();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by_key(|&i| truth[i]);
    let sorted = order
        .iter()
        .map(|&i| order.iter().map(|&j| counts.get(i, j)).collect())
        .collect();
    let demo = ClusterDemo {
        n_events: net.events.len(),
        ari,
        truth,
        spectral: fitted.labels().to_vec(),
        counts: sorted,
    };
    serde_json::to_string(&demo).map_err(js_err)
}

/// Counts three-edge motifs in `sender,receiver,time` CSV text. Returns
/// the 6x6 grid as JSON.
#[wasm_bindgen]
pub fn motif_counts(csv: &str, delta: f64) -> Result<String, JsError> {
    if !(delta >= 0.0) {
        return Err(JsError::new("delta must be nonnegative"));
    }
    let opts = LoadOptions {
        drop_self_loops: true,
        ..LoadOptions::default()
    };
    let (stream, _) = read_events(csv.as_bytes(), "input", &opts).map_err(js_err)?;
    serde_json::to_string(&count_temporal_motifs(&stream, delta)).map_err(js_err)
}
