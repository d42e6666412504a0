use budis::model::{BudisSpec, Fitter};
use budis::multinomial::{sb_conditionals, sb_decompose, sb_reconstruct, StickBreaking};
use budis::rng::stream;
use budis::survey::{direct_estimate, informative_size, poisson_pps_sample, pps_inclusion};
use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::Rng;

fn simplex_grid(k: usize, steps: usize) -> Vec<Vec<f64>> {
    fn rec(k: usize, left: usize, steps: usize, prefix: &mut Vec<usize>, out: &mut Vec<Vec<f64>>) {
        if prefix.len() == k - 1 {
            let mut p: Vec<f64> = prefix.iter().map(|&c| c as f64 / steps as f64).collect();
            p.push(left as f64 / steps as f64);
            out.push(p);
            return;
        }
        for c in 0..=left {
            prefix.push(c);
            rec(k, left - c, steps, prefix, out);
            prefix.pop();
        }
    }
    let mut out = Vec::new();
    rec(k, steps, steps, &mut Vec::new(), &mut out);
    out
}

#[test]
fn round_trip_on_simplex_grids() {
    for (k, steps) in [(3, 40), (4, 20)] {
        let grid = simplex_grid(k, steps);
        assert!(grid.len() > 100);
        for p in grid {
            let back = sb_reconstruct(&sb_conditionals(&p).unwrap()).unwrap();
            for (a, b) in back.iter().zip(&p) {
                assert!((a - b).abs() < 1e-10, "{p:?} -> {back:?}");
            }
        }
    }
}

#[test]
fn decomposition_masks() {
    assert_eq!(sb_decompose(2, 4).unwrap(), vec![Some(0.0), Some(1.0), None]);
    assert_eq!(sb_decompose(4, 4).unwrap(), vec![Some(0.0); 3]);
}

#[test]
fn refit_recovers_category_frequencies() {
    let n = 3000;
    let mut rng = stream(17);
    let categories: Vec<usize> = (0..n)
        .map(|_| {
            let u: f64 = rng.random();
            if u < 0.2 {
                0
            } else if u < 0.5 {
                1
            } else {
                2
            }
        })
        .collect();
    let labels = vec!["a".to_string(), "b".to_string(), "c".to_string()];
    let x = DMatrix::from_element(n, 1, 1.0);
    let g = DMatrix::zeros(n, 0);
    let sticks = StickBreaking::fit(
        labels,
        &x,
        &g,
        &categories,
        &vec![1.0; n],
        &BudisSpec::default(),
        Fitter::Vb,
    )
    .unwrap();
    let mut avg = [0.0; 3];
    let draws = 2000;
    let mut rng = stream(18);
    for d in 0..draws {
        let p = sticks.category_probabilities(&[1.0], &[], d, &mut rng).unwrap();
        for k in 0..3 {
            avg[k] += p[k] / draws as f64;
        }
    }
    for k in 0..3 {
        let freq = categories.iter().filter(|&&c| c == k).count() as f64 / n as f64;
        let se = (freq * (1.0 - freq) / n as f64).sqrt();
        assert!((avg[k] - freq).abs() < 3.0 * se, "category {k}: {} vs {freq}", avg[k]);
    }
}

#[test]
fn inclusion_frequencies_match_probabilities() {
    let sizes = [0.5, 1.0, 1.7, 2.0, 0.8, 3.5, 1.2, 0.3];
    let pi = pps_inclusion(&sizes, 3.0).unwrap();
    let reps = 100_000;
    let mut counts = [0.0; 8];
    let mut rng = stream(4);
    for _ in 0..reps {
        for i in poisson_pps_sample(&sizes, 3.0, &mut rng).unwrap().sampled {
            counts[i] += 1.0;
        }
    }
    for i in 0..8 {
        let se = (pi[i] * (1.0 - pi[i]) / reps as f64).sqrt().max(1e-12);
        assert!((counts[i] / reps as f64 - pi[i]).abs() <= 3.0 * se, "unit {i}");
    }
}

#[test]
fn hajek_is_consistent_and_unweighted_mean_is_biased_towards_shift() {
    let m = 4000;
    let mut rng = stream(21);
    let y: Vec<f64> = (0..m).map(|_| (rng.random::<f64>() < 0.4) as u8 as f64).collect();
    let truth = y.iter().sum::<f64>() / m as f64;
    for shift in [0.7, -0.5] {
        let sizes: Vec<f64> = y.iter().map(|&v| informative_size(1.0, v, shift).unwrap()).collect();
        let reps = 400;
        let (mut hajek, mut plain) = (0.0, 0.0);
        for _ in 0..reps {
            let d = poisson_pps_sample(&sizes, 400.0, &mut rng).unwrap();
            let ys: Vec<f64> = d.sampled.iter().map(|&i| y[i]).collect();
            hajek += direct_estimate(&ys, &d.weights, true).unwrap().unwrap() / reps as f64;
            plain += direct_estimate(&ys, &d.weights, false).unwrap().unwrap() / reps as f64;
        }
        // Per-replicate sd is about 0.025, so the mean over 400 has sd near 0.0013.
        assert!((hajek - truth).abs() < 0.005, "shift {shift}: {hajek} vs {truth}");
        assert_eq!((plain - truth).signum(), shift.signum());
        assert!((plain - truth).abs() > 0.05);
    }
}

proptest! {
    #[test]
    fn reconstruction_stays_on_simplex(pt in proptest::collection::vec(0.0f64..=1.0, 1..8)) {
        let p = sb_reconstruct(&pt).unwrap();
        prop_assert_eq!(p.len(), pt.len() + 1);
        prop_assert!(p.iter().all(|v| *v >= 0.0));
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-10);
    }

    #[test]
    fn inclusion_probabilities_are_capped(sizes in proptest::collection::vec(0.01f64..100.0, 1..50), frac in 0.01f64..1.0) {
        let n = frac * sizes.len() as f64;
        let pi = pps_inclusion(&sizes, n).unwrap();
        prop_assert!(pi.iter().all(|p| *p > 0.0 && *p <= 1.0));
        prop_assert!(pi.iter().sum::<f64>() <= n * (1.0 + 1e-12));
    }
}
