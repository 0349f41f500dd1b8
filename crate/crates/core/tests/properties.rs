//! Property tests for the model, likelihood, clustering, evaluation and
//! motif invariants.

mod common;

use std::collections::BTreeSet;

use common::*;
use mulch::branching::CoupleGamma;
use mulch::eval::{expected_count_matrix, roc_auc};
use mulch::events::{
    count_matrix, load_events, read_events, save_events, Event, EventStream, IdMap, LoadOptions,
};
use mulch::fit::likelihood::{block_pair_log_likelihood, block_pair_stats, full_log_likelihood};
use mulch::fit::{fit_mulch, FitConfig};
use mulch::model::{excitation_selector, for_each_excited, kernel_integral, kernel_value};
use mulch::motifs::{count_temporal_motifs, MotifMatrix};
use mulch::simulate::{generate_network, stationarity_check, SimConfig};
use mulch::spectral::{adjusted_rand_index, spectral_cluster};
use mulch::{Membership, MembershipFile, MulchModel};
use proptest::prelude::*;
use rand::Rng;

fn cases(n: u32) -> ProptestConfig {
    ProptestConfig {
        cases: n,
        ..ProptestConfig::default()
    }
}

proptest! {
    #![proptest_config(cases(64))]

    #[test]
    fn kernel_integrates_to_one(seed in any::<u64>()) {
        let mut r = rng(seed);
        let q = r.random_range(1..=4);
        let c = random_simplex(&mut r, q);
        let betas: Vec<f64> = (0..q).map(|_| r.random_range(0.05..15.0)).collect();
        let b_min = betas.iter().cloned().fold(f64::INFINITY, f64::min);
        let b_max = betas.iter().cloned().fold(0.0, f64::max);
        let upper = 60.0 / b_min;
        let total = quadrature(|s| kernel_value(&c, &betas, s).unwrap(), 0.0, upper, 0.1 / b_max);
        prop_assert!((total - 1.0).abs() < 1e-9, "integral {total}");
        let lag = r.random_range(0.0..upper);
        let partial = quadrature(|s| kernel_value(&c, &betas, s).unwrap(), 0.0, lag, 0.1 / b_max);
        prop_assert!((partial - kernel_integral(&c, &betas, lag)).abs() < 1e-10);
    }

    #[test]
    fn selector_matches_the_excitation_rules(seed in any::<u64>()) {
        let mut r = rng(seed);
        let n = r.random_range(2..9);
        let k = r.random_range(1..=n.min(4));
        let z = random_membership(&mut r, n, k);
        let members = z.members();
        for x in 0..n {
            for y in (0..n).filter(|&y| y != x) {
                let mut listed = BTreeSet::new();
                for_each_excited((x, y), &z, &members, |ty, dst| {
                    assert!(listed.insert((dst, ty)), "pair {dst:?} listed twice");
                });
                let mut expected = BTreeSet::new();
                for i in 0..n {
                    for j in (0..n).filter(|&j| j != i) {
                        let got = excitation_selector((x, y), (i, j), &z);
                        let want = reference_type((x, y), (i, j), &z);
                        prop_assert_eq!(got.map(|g| g.0), want);
                        if let Some((_, bp)) = got {
                            prop_assert_eq!(bp, (z.block(i), z.block(j)));
                            let (a, b) = (z.block(x), z.block(y));
                            prop_assert!(bp == (a, b) || bp == (b, a));
                        }
                        if let Some(ty) = want {
                            expected.insert(((i, j), ty));
                        }
                    }
                }
                prop_assert_eq!(listed, expected);
            }
        }
    }

    #[test]
    fn ari_is_symmetric_and_label_free(seed in any::<u64>()) {
        let mut r = rng(seed);
        let n = r.random_range(2..60);
        let x: Vec<usize> = (0..n).map(|_| r.random_range(0..4)).collect();
        let y: Vec<usize> = (0..n).map(|_| r.random_range(0..5)).collect();
        let ab = adjusted_rand_index(&x, &y).unwrap();
        prop_assert!((ab - adjusted_rand_index(&y, &x).unwrap()).abs() < 1e-12);
        prop_assert!(ab <= 1.0 + 1e-12);
        let perm = [3usize, 0, 2, 1];
        let relabeled: Vec<usize> = x.iter().map(|&l| perm[l]).collect();
        prop_assert!((adjusted_rand_index(&relabeled, &y).unwrap() - ab).abs() < 1e-12);
        prop_assert!((adjusted_rand_index(&x, &relabeled).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn kernel_sums_recursive_equal_direct(seed in any::<u64>()) {
        let mut r = rng(seed);
        let n = r.random_range(3..8);
        let k = r.random_range(1..=3.min(n));
        let model = random_model(&mut r, n, k, vec![0.3, 1.5, 7.0], 0.4);
        let len = r.random_range(1..=200);
        let stream = random_history(&mut r, n, len, 50.0, true);
        let z = model.membership();
        for a in 0..k {
            for b in 0..k {
                let p = model.params(a, b);
                let fast = block_pair_log_likelihood(p, model.betas(), &stream, z, (a, b)).unwrap();
                let slow = direct_block_pair_ll(p, model.betas(), &stream, z, (a, b), Compensator::ClosedForm);
                prop_assert!(rel_err(fast, slow) < 1e-9, "({a},{b}): {fast} vs {slow}");
            }
        }
    }

    #[test]
    fn full_likelihood_is_the_sum_over_block_pairs(seed in any::<u64>()) {
        let mut r = rng(seed);
        let n = r.random_range(3..10);
        let k = r.random_range(1..=3.min(n));
        let model = random_model(&mut r, n, k, vec![0.5, 4.0], 0.3);
        let len = r.random_range(1..150);
        let stream = random_history(&mut r, n, len, 30.0, false);
        let z = model.membership();
        let mut sum = 0.0;
        for a in 0..k {
            for b in 0..k {
                sum += block_pair_log_likelihood(model.params(a, b), model.betas(), &stream, z, (a, b)).unwrap();
            }
        }
        prop_assert_eq!(full_log_likelihood(&model, &stream).unwrap(), sum);
    }

    #[test]
    fn auc_is_invariant_to_monotone_transforms(seed in any::<u64>()) {
        let mut r = rng(seed);
        let n = r.random_range(2..80);
        let scores: Vec<f64> = (0..n).map(|_| r.random_range(0..200) as f64 / 200.0).collect();
        let labels: Vec<bool> = (0..n).map(|_| r.random_bool(0.4)).collect();
        let base = roc_auc(&scores, &labels);
        let cubic: Vec<f64> = scores.iter().map(|s| s * s * s + s - 4.0).collect();
        let expo: Vec<f64> = scores.iter().map(|s| (3.0 * s).exp()).collect();
        prop_assert_eq!(roc_auc(&cubic, &labels), base);
        prop_assert_eq!(roc_auc(&expo, &labels), base);
        if let Some(a) = base {
            let flipped: Vec<f64> = scores.iter().map(|s| -s).collect();
            prop_assert!((roc_auc(&flipped, &labels).unwrap() - (1.0 - a)).abs() < 1e-12);
        }
    }

    #[test]
    fn motif_counts_match_brute_force(seed in any::<u64>()) {
        let mut r = rng(seed);
        let n = r.random_range(2..6);
        let len = r.random_range(0..60);
        let stream = random_history(&mut r, n, len, 20.0, true);
        let delta = r.random_range(0.0..8.0);
        let m = count_temporal_motifs(&stream, delta);
        prop_assert_eq!(m.counts, brute_force_motifs(&stream, delta));
    }

    #[test]
    fn motif_counts_grow_with_delta(seed in any::<u64>()) {
        let mut r = rng(seed);
        let stream = random_history(&mut r, 4, 60, 20.0, true);
        let d1 = r.random_range(0.0..5.0);
        let d2 = d1 + r.random_range(0.0..5.0);
        let (a, b) = (count_temporal_motifs(&stream, d1), count_temporal_motifs(&stream, d2));
        for (ra, rb) in a.counts.iter().zip(&b.counts) {
            for (x, y) in ra.iter().zip(rb) {
                prop_assert!(x <= y);
            }
        }
    }

    #[test]
    fn motif_counts_ignore_node_names(seed in any::<u64>()) {
        let mut r = rng(seed);
        let n = 6;
        let stream = random_history(&mut r, n, 80, 20.0, false);
        let mut perm: Vec<usize> = (0..n).collect();
        for i in (1..n).rev() {
            perm.swap(i, r.random_range(0..=i));
        }
        let renamed: Vec<Event> = stream.events().iter().map(|e| Event::new(perm[e.sender], perm[e.receiver], e.time)).collect();
        let renamed = EventStream::new(renamed, n, stream.duration()).unwrap();
        prop_assert_eq!(count_temporal_motifs(&stream, 3.0).counts, count_temporal_motifs(&renamed, 3.0).counts);
    }

    #[test]
    fn reversing_edges_permutes_the_motif_grid(seed in any::<u64>()) {
        let mut r = rng(seed);
        let stream = random_history(&mut r, 5, 80, 20.0, true);
        let reversed: Vec<Event> = stream.events().iter().map(|e| Event::new(e.receiver, e.sender, e.time)).collect();
        let reversed = EventStream::new(reversed, 5, stream.duration()).unwrap();
        let (a, b) = (count_temporal_motifs(&stream, 4.0), count_temporal_motifs(&reversed, 4.0));
        // 0-based: rows 0<->3, 1<->2; columns 2<->5, 3<->4.
        let row = [3, 2, 1, 0, 4, 5];
        let col = [0, 1, 5, 4, 3, 2];
        for i in 0..6 {
            for j in 0..6 {
                prop_assert_eq!(a.counts[i][j], b.counts[row[i]][col[j]]);
            }
        }
    }

    #[test]
    fn motif_total_counts_connected_triples(seed in any::<u64>()) {
        let mut r = rng(seed);
        let len = r.random_range(0..50);
        let stream = random_history(&mut r, 3, len, 10.0, true);
        // On three nodes every triple is a motif instance.
        let delta = r.random_range(0.0..4.0);
        let ev = stream.events();
        let mut triples = 0u64;
        for i in 0..ev.len() {
            let inside = ev[i + 1..].iter().take_while(|e| e.time - ev[i].time <= delta).count() as u64;
            triples += inside * inside.saturating_sub(1) / 2;
        }
        prop_assert_eq!(count_temporal_motifs(&stream, delta).total(), triples);
    }

    #[test]
    fn expected_counts_are_block_constant(seed in any::<u64>()) {
        let mut r = rng(seed);
        let n = r.random_range(4..12);
        let k = r.random_range(1..=3);
        let model = random_model(&mut r, n, k, vec![1.0, 3.0], 0.08);
        prop_assume!(stationarity_check(&model) < 0.95);
        let m = expected_count_matrix(&model, 10.0).unwrap();
        let z = model.membership();
        for i in 0..n {
            for j in 0..n {
                if i == j {
                    prop_assert_eq!(m[(i, j)], 0.0);
                    continue;
                }
                for i2 in 0..n {
                    for j2 in 0..n {
                        if i2 != j2 && z.block(i2) == z.block(i) && z.block(j2) == z.block(j) {
                            prop_assert!(rel_err(m[(i, j)], m[(i2, j2)]) < 1e-9);
                        }
                    }
                }
            }
        }
        let (pairs, dense) = stationary_rates_dense(&model);
        for (p, x) in pairs.iter().zip(dense) {
            prop_assert!(rel_err(m[*p] / 10.0, x) < 1e-9, "{p:?}: {} vs {x}", m[*p] / 10.0);
        }
    }

    #[test]
    fn stationarity_matches_power_iteration(seed in any::<u64>()) {
        let mut r = rng(seed);
        let n = r.random_range(2..9);
        let k = r.random_range(1..=3.min(n));
        let model = random_model(&mut r, n, k, vec![1.0], 0.4);
        let (_, gamma) = branching_matrix(&model);
        let power = power_iteration_radius(&gamma);
        let ours = stationarity_check(&model);
        prop_assert!((ours - power).abs() < 1e-7 * power.max(1.0), "{ours} vs {power}");
    }
}

proptest! {
    #![proptest_config(cases(20))]

    #[test]
    fn gradient_matches_finite_differences(seed in any::<u64>()) {
        let mut r = rng(seed);
        let n = r.random_range(3..8);
        let k = r.random_range(1..=2);
        let betas = vec![0.2, 1.0, 6.0];
        let model = random_model(&mut r, n, k, betas.clone(), 0.3);
        let len = r.random_range(20..200);
        let stream = random_history(&mut r, n, len, 40.0, true);
        let stats = block_pair_stats(&stream, model.membership(), &betas).unwrap();
        let (a, b) = (r.random_range(0..k), r.random_range(0..k));
        let st = &stats[a][b];
        let p = model.params(a, b);
        let mut x = vec![p.mu];
        x.extend(p.alpha.0);
        x.extend(&p.c);
        let f = |x: &[f64]| {
            let alpha: [f64; 6] = x[1..7].try_into().unwrap();
            st.log_likelihood(x[0], &alpha, &x[7..]).unwrap()
        };
        let (_, g) = st.value_and_gradient(p.mu, &p.alpha.0, &p.c).unwrap();
        let mut analytic = vec![g.mu];
        analytic.extend(g.alpha);
        analytic.extend(&g.c);
        for i in 0..x.len() {
            let h = 1e-6 * x[i].abs().max(1e-3);
            let (mut up, mut down) = (x.clone(), x.clone());
            up[i] += h;
            down[i] -= h;
            let fd = (f(&up) - f(&down)) / (2.0 * h);
            let scale = analytic[i].abs().max(fd.abs()).max(1.0);
            prop_assert!((analytic[i] - fd).abs() / scale < 1e-5, "component {i}: {} vs {fd}", analytic[i]);
        }
    }

    #[test]
    fn round_trips(seed in any::<u64>()) {
        let mut r = rng(seed);
        let dir = tempfile::tempdir().unwrap();
        let model = random_model(&mut r, 7, 2, vec![0.1, 2.0], 0.3);
        let back = MulchModel::from_json(&model.to_json()).unwrap();
        prop_assert_eq!(back.to_json(), model.to_json());
        prop_assert_eq!(back.params(1, 0), model.params(1, 0));

        let stream = random_history(&mut r, 7, 40, 10.0, true);
        let path = dir.path().join("e.csv");
        save_events(&path, &stream, None).unwrap();
        let (loaded, ids) = load_events(&path, &LoadOptions { duration: Some(10.0), ..LoadOptions::default() }).unwrap();
        prop_assert_eq!(loaded.len(), stream.len());
        for (a, b) in stream.events().iter().zip(loaded.events()) {
            prop_assert_eq!(a.time, b.time);
            prop_assert_eq!(ids.name(b.sender).unwrap(), a.sender.to_string());
            prop_assert_eq!(ids.name(b.receiver).unwrap(), a.receiver.to_string());
        }

        let motifs = count_temporal_motifs(&stream, 2.5);
        motifs.save(dir.path().join("m.json")).unwrap();
        prop_assert_eq!(MotifMatrix::load(dir.path().join("m.json")).unwrap(), motifs);

        let file = MembershipFile::new(model.membership(), IdMap::identity(7));
        file.save(dir.path().join("z.json")).unwrap();
        let z = MembershipFile::load(dir.path().join("z.json")).unwrap();
        prop_assert_eq!(&z, &file);
        prop_assert_eq!(z.membership().unwrap(), model.membership().clone());

        let cfg = SimConfig::with_shared_params(vec![0.5, 0.5], vec![1.0], model.params(0, 0).clone(), model.params(0, 1).clone(), 7, 5.0, seed);
        cfg.save(dir.path().join("sim.json")).unwrap();
        prop_assert_eq!(SimConfig::load(dir.path().join("sim.json")).unwrap(), cfg);
    }

    #[test]
    fn loading_is_stable_and_dense(seed in any::<u64>()) {
        let mut r = rng(seed);
        let names = ["alice", "bob", "carol", "dave"];
        let mut csv = String::from("sender,receiver,time\n");
        let mut rows = Vec::new();
        for _ in 0..r.random_range(1..30) {
            let s = r.random_range(0..4);
            let d = (s + r.random_range(1..4)) % 4;
            let t = r.random_range(0..10) as f64;
            rows.push((names[s], names[d], t));
            csv.push_str(&format!("{},{},{t}\n", names[s], names[d]));
        }
        let (stream, ids) = read_events(csv.as_bytes(), "mem", &LoadOptions::default()).unwrap();
        let mut expected = rows.clone();
        expected.sort_by(|a, b| a.2.total_cmp(&b.2));
        for (e, (s, d, t)) in stream.events().iter().zip(&expected) {
            prop_assert_eq!(ids.name(e.sender).unwrap(), *s);
            prop_assert_eq!(ids.name(e.receiver).unwrap(), *d);
            prop_assert_eq!(e.time, *t);
        }
        prop_assert_eq!(count_matrix(&stream).total(), stream.len() as u64);
        prop_assert_eq!(stream.n_nodes(), ids.len());
    }

    #[test]
    fn spectral_labels_follow_node_permutations(seed in any::<u64>()) {
        let mut r = rng(seed);
        let n = 24;
        let k = 3;
        let z = random_membership(&mut r, n, k);
        let mut events = Vec::new();
        let mut t = 0.0;
        for i in 0..n {
            for j in (0..n).filter(|&j| j != i) {
                let reps = if z.block(i) == z.block(j) { 6 + r.random_range(0..3) } else { r.random_range(0..2) };
                for _ in 0..reps {
                    t += 1.0;
                    events.push(Event::new(i, j, t));
                }
            }
        }
        let stream = EventStream::from_events(events.clone(), n).unwrap();
        let mut perm: Vec<usize> = (0..n).collect();
        for i in (1..n).rev() {
            perm.swap(i, r.random_range(0..=i));
        }
        let permuted = EventStream::from_events(events.iter().map(|e| Event::new(perm[e.sender], perm[e.receiver], e.time)).collect(), n).unwrap();
        let a = spectral_cluster(&count_matrix(&stream), k, seed).unwrap();
        let b = spectral_cluster(&count_matrix(&permuted), k, seed ^ 1).unwrap();
        let b_back: Vec<usize> = (0..n).map(|i| b.block(perm[i])).collect();
        prop_assert!((adjusted_rand_index(a.labels(), &b_back).unwrap() - 1.0).abs() < 1e-12);
        prop_assert!((adjusted_rand_index(a.labels(), z.labels()).unwrap() - 1.0).abs() < 1e-12);
    }
}

proptest! {
    #![proptest_config(cases(8))]

    #[test]
    fn refinement_never_lowers_the_likelihood(seed in any::<u64>()) {
        let mut r = rng(seed);
        let k = r.random_range(2..=3);
        let model = random_model(&mut r, 24, k, vec![0.5, 4.0], 0.06);
        prop_assume!(stationarity_check(&model) < 0.9);
        let mut cfg = SimConfig::with_shared_params(vec![1.0 / k as f64; k], model.betas().to_vec(), model.params(0, 0).clone(), model.params(0, 1).clone(), 24, 80.0, seed);
        cfg.blocks = model.grid().to_vec();
        cfg.membership = Some(model.membership().labels().to_vec());
        let net = generate_network(&cfg).unwrap();
        prop_assume!(net.events.len() > 50);
        let mut fc = FitConfig::new(k, model.betas().to_vec());
        fc.seed = seed;
        fc.max_refinement_iters = 5;
        let fit = fit_mulch(&net.events, &fc).unwrap();
        let mut last = fit.initial_log_likelihood;
        for step in &fit.trajectory {
            prop_assert!(step.log_likelihood >= last, "round {}: {} < {last}", step.iteration, step.log_likelihood);
            last = step.log_likelihood;
        }
        prop_assert_eq!(last, fit.log_likelihood);
        prop_assert!((full_log_likelihood(&fit.model, &net.events).unwrap() - fit.log_likelihood).abs() < 1e-8 * fit.log_likelihood.abs());
    }
}

#[test]
fn couple_fixed_point_matches_dense_solve() {
    let mut r = rng(11);
    let model = random_model(&mut r, 9, 3, vec![1.0], 0.08);
    assert!(stationarity_check(&model) < 1.0);
    let (pairs, dense) = stationary_rates_dense(&model);
    let z = model.membership();
    for couple in mulch::branching::couples(3) {
        let gamma = CoupleGamma::assemble(&model, couple);
        let mu: Vec<f64> = gamma
            .pairs
            .iter()
            .map(|&(i, j)| model.pair_params(i, j).mu)
            .collect();
        let (x, converged) = gamma.solve_stationary(&mu, 1e-14, 100_000);
        assert!(converged);
        for (p, v) in gamma.pairs.iter().zip(x) {
            let idx = pairs.iter().position(|q| q == p).unwrap();
            assert!(
                rel_err(v, dense[idx]) < 1e-10,
                "{p:?} in blocks {:?}",
                (z.block(p.0), z.block(p.1))
            );
        }
    }
}

#[test]
fn membership_extension_keeps_old_labels() {
    let z = Membership::new(vec![0, 1, 1, 2, 1], 3).unwrap();
    let ext = mulch::events::assign_new_nodes(&z, 8).unwrap();
    assert_eq!(&ext.labels()[..5], z.labels());
    assert!(ext.labels()[5..].iter().all(|&l| l == 1));
}
