mod oracles;

use hleval_core::corpus::{parse_corpus_str, serialize, validate, CorpusBundle, SampleWindow};
use hleval_core::features::{derive_turns, window_features, DEFAULT_MERGE_GAP_MS};
use hleval_core::regression::{solve_dual, Kernel};
use hleval_core::sampling::segment;
use hleval_core::stats::spearman;
use hleval_core::synth::{generate, SynthConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn spearman_matches_counting_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(100);
    for _ in 0..1000 {
        let n = rng.random_range(3..=10);
        // Small integer ranges force ties.
        let x: Vec<f64> = (0..n).map(|_| rng.random_range(0..4) as f64).collect();
        let y: Vec<f64> = (0..n).map(|_| rng.random_range(0..5) as f64 * 0.5).collect();
        match (spearman(&x, &y), oracles::spearman(&x, &y)) {
            (Ok(a), Some(b)) => assert!((a - b).abs() < 1e-9, "{x:?} {y:?}: {a} vs {b}"),
            (Err(_), None) => {}
            (a, b) => panic!("{x:?} {y:?}: {a:?} vs {b:?}"),
        }
    }
}

#[test]
fn features_match_millisecond_sweep() {
    let mut rng = ChaCha8Rng::seed_from_u64(200);
    for i in 0..200 {
        let d = oracles::random_dialogue(&mut rng, &format!("r{i}"), 120_000);
        let bundle = CorpusBundle {
            dialogues: vec![d.clone()],
            ..Default::default()
        };
        assert!(validate(&bundle).is_empty(), "{:?}", validate(&bundle));
        let turns = derive_turns(&d.user, &d.system, DEFAULT_MERGE_GAP_MS);
        let mut windows = segment(&d, 20_000, 10_000).unwrap().windows;
        let start = rng.random_range(0..d.duration - 1);
        windows.push(SampleWindow {
            sample_id: "free".into(),
            dialogue_id: d.dialogue_id.clone(),
            start,
            end: rng.random_range(start + 1..=d.duration),
        });
        let sweep = oracles::Sweep::new(&d, DEFAULT_MERGE_GAP_MS);
        for w in &windows {
            let got = window_features(&d, &turns, w).values();
            let want = sweep.window(w);
            for f in 0..17 {
                match (got[f], want[f]) {
                    (Some(a), Some(b)) => assert!(
                        (a - b).abs() <= 1e-3,
                        "{} {} feature {f}: {a} vs {b}",
                        d.dialogue_id,
                        w.sample_id
                    ),
                    (None, None) => {}
                    (a, b) => panic!("{} feature {f}: {a:?} vs {b:?}", d.dialogue_id),
                }
            }
        }
    }
}

#[test]
fn smo_reaches_dual_optimum() {
    let mut rng = ChaCha8Rng::seed_from_u64(300);
    for _ in 0..50 {
        let n = rng.random_range(2..=6);
        let d = rng.random_range(1..=4);
        let x: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..d).map(|_| rng.random_range(-2.0..2.0)).collect())
            .collect();
        let y: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..1.0)).collect();
        let c = rng.random_range(0.1..5.0);
        let eps = rng.random_range(0.0..0.2);
        let kernel = if rng.random_bool(0.5) {
            Kernel::Rbf { gamma: 1.0 / d as f64 }
        } else {
            Kernel::Linear
        };
        let k = kernel.matrix(&x);
        let sol = solve_dual(&k, &y, c, eps, 1e-3, 100_000);
        assert!(sol.converged);
        let oracle = oracles::dual_maximizer(&k, &y, c, eps);
        let (w_smo, w_ref) = (
            oracles::dual_value(&k, &y, &sol.beta, eps),
            oracles::dual_value(&k, &y, &oracle, eps),
        );
        assert!(w_ref - w_smo <= 1e-3, "smo {w_smo} oracle {w_ref}");
        assert!(sol.beta.iter().sum::<f64>().abs() <= 1e-3);
        assert!(sol.beta.iter().all(|b| b.abs() <= c + 1e-12));
    }
}

#[test]
fn synth_bundles_round_trip() {
    for seed in 0..5 {
        let cfg = SynthConfig {
            n_dialogues: 4,
            duration_s: 150.0,
            n_annotators: 8,
            load_min: 0,
            seed,
            ..Default::default()
        };
        let (bundle, _) = generate(&cfg).unwrap();
        let text = serialize(&bundle);
        let back = parse_corpus_str(&text).unwrap();
        assert_eq!(back, bundle);
        assert_eq!(serialize(&back), text);
    }
}
