use budis::elm::{sigmoid, zero_count, ElmLayer};
use budis::features::{complex_covariates, linear_covariates, SpatialBasis, Vocabulary};
use budis::BudisError;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

fn naive_transform(a: &DMatrix<f64>, psi: &[f64]) -> Vec<f64> {
    (0..a.nrows())
        .map(|i| {
            let mut s = 0.0;
            for j in 0..a.ncols() {
                s += a[(i, j)] * psi[j];
            }
            1.0 / (1.0 + (-s).exp())
        })
        .collect()
}

#[test]
fn transform_examples() {
    let layer = ElmLayer::new(5, 4, 0.0, 9).unwrap();
    assert!(layer.transform(&[0.0; 4]).unwrap().iter().all(|v| *v == 0.5));
    let single = ElmLayer::from_weights(DMatrix::from_row_slice(1, 2, &[1.0, 0.0])).unwrap();
    let out = single.transform(&[3f64.ln(), 5.0]).unwrap();
    assert!((out[0] - 0.75).abs() < 1e-15);
    assert!(matches!(
        layer.transform(&[1.0; 3]),
        Err(BudisError::DimensionMismatch { .. })
    ));
}

#[test]
fn reference_sparsity_count() {
    let layer = ElmLayer::new(240, 1000, 0.10, 2024).unwrap();
    assert_eq!(layer.weights().iter().filter(|v| **v == 0.0).count(), 24_000);
    let dense = ElmLayer::new(3, 2, 0.0, 1).unwrap();
    assert_eq!(dense.weights().iter().filter(|v| **v == 0.0).count(), 0);
    assert!(ElmLayer::new(0, 2, 0.1, 1).is_err());
}

#[test]
fn vocabulary_hand_count() {
    let vocab = Vocabulary::build(&["economy economy", "the economy", "jobs"], 2).unwrap();
    assert_eq!(vocab.words(), ["economy", "jobs"]);
    assert_eq!(vocab.document_frequencies(), [2, 1]);
    assert_eq!(vocab.indicators("Jobs, jobs, jobs!"), vec![0.0, 1.0]);
    assert_eq!(vocab.indicators(""), vec![0.0, 0.0]);
    assert_eq!(vocab.indicators("jobs and the ECONOMY"), vec![1.0, 1.0]);
    assert_eq!(complex_covariates(&vocab, "jobs"), vec![1.0, 0.0, 1.0]);
    let all = Vocabulary::build(&["economy economy", "the economy", "jobs"], 50).unwrap();
    assert_eq!(all.len(), 2);
}

/// Characteristic polynomial of the path graph on 3 nodes is `λ³ − 2λ`.
#[test]
fn path_graph_spectrum() {
    let adj = DMatrix::from_row_slice(3, 3, &[0., 1., 0., 1., 0., 1., 0., 1., 0.]);
    let areas: Vec<String> = ["a", "b", "c"].iter().map(|s| s.to_string()).collect();
    let basis = SpatialBasis::from_adjacency(areas, &adj, 3).unwrap();
    let sqrt2 = 2f64.sqrt();
    for (got, want) in basis.eigenvalues().iter().zip([sqrt2, 0.0, -sqrt2]) {
        assert!((got - want).abs() < 1e-12, "{got} vs {want}");
        assert!((got.powi(3) - 2.0 * got).abs() < 1e-10);
    }
    let v = basis.vectors();
    assert!((v.transpose() * v - DMatrix::identity(3, 3)).abs().max() < 1e-10);
    assert!((v[(0, 0)] - 0.5).abs() < 1e-12 && (v[(1, 0)] - 1.0 / sqrt2).abs() < 1e-12);
}

#[test]
fn linear_covariate_examples() {
    let areas = vec!["north".to_string(), "south".to_string()];
    let rows = DMatrix::from_row_slice(2, 2, &[0.1, -0.2, 0.3, 0.4]);
    let basis = SpatialBasis::from_rows(areas, rows, vec![1.0, 0.5]).unwrap();
    assert_eq!(
        linear_covariates(&[false, false], &basis, "north").unwrap(),
        vec![1.0, 0.0, 0.0, 0.1, -0.2]
    );
    assert_eq!(
        linear_covariates(&[true, true], &basis, "north").unwrap(),
        vec![1.0, 1.0, 1.0, 0.1, -0.2]
    );
    assert!(linear_covariates(&[true, true], &basis, "east").is_err());
}

fn symmetric_adjacency(m: usize, bits: &[bool]) -> DMatrix<f64> {
    let mut a = DMatrix::zeros(m, m);
    let mut k = 0;
    for i in 0..m {
        for j in 0..i {
            if bits[k % bits.len()] {
                a[(i, j)] = 1.0;
                a[(j, i)] = 1.0;
            }
            k += 1;
        }
    }
    a
}

proptest! {
    #[test]
    fn transform_matches_naive_oracle(
        h in 1usize..12,
        r in 1usize..12,
        sparsity in 0.0f64..0.9,
        seed in any::<u64>(),
        psi in proptest::collection::vec(-3.0f64..3.0, 12),
    ) {
        let layer = ElmLayer::new(h, r, sparsity, seed).unwrap();
        let got = layer.transform(&psi[..r]).unwrap();
        let want = naive_transform(layer.weights(), &psi[..r]);
        for (g, w) in got.iter().zip(want) {
            prop_assert!((g - w).abs() < 1e-12);
            prop_assert!(*g > 0.0 && *g < 1.0);
        }
        prop_assert_eq!(layer.weights().iter().filter(|v| **v == 0.0).count(), zero_count(h, r, sparsity));
        prop_assert_eq!(&ElmLayer::new(h, r, sparsity, seed).unwrap(), &layer);
    }

    #[test]
    fn basis_columns_are_orthonormal_eigenvectors(
        m in 2usize..14,
        bits in proptest::collection::vec(any::<bool>(), 1..100),
        q_frac in 0.0f64..1.0,
    ) {
        let a = symmetric_adjacency(m, &bits);
        let q = 1 + ((m - 1) as f64 * q_frac) as usize;
        let areas: Vec<String> = (0..m).map(|i| format!("r{i}")).collect();
        let basis = SpatialBasis::from_adjacency(areas, &a, q).unwrap();
        let v = basis.vectors();
        prop_assert!((v.transpose() * v - DMatrix::identity(q, q)).abs().max() < 1e-10);
        for k in 0..q {
            let col: DVector<f64> = v.column(k).into_owned();
            let resid = &a * &col - col.clone() * basis.eigenvalues()[k];
            prop_assert!(resid.abs().max() < 1e-8);
            let first = col.iter().find(|x| x.abs() > 1e-12).copied().unwrap();
            prop_assert!(first > 0.0);
        }
        prop_assert!(basis.eigenvalues().windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn vocabulary_is_ranked(texts in proptest::collection::vec("[w-z]{2,3}( [w-z]{2,3}){0,5}", 1..20)) {
        {
            let vocab = Vocabulary::build(&texts, 5).unwrap();
            let df = vocab.document_frequencies();
            for k in 1..vocab.len() {
                prop_assert!(df[k - 1] > df[k] || (df[k - 1] == df[k] && vocab.words()[k - 1] < vocab.words()[k]));
            }
        }
    }
}

#[test]
fn sigmoid_is_symmetric() {
    for x in [-30.0, -1.0, 0.0, 2.5, 700.0] {
        assert!((sigmoid(x) + sigmoid(-x) - 1.0).abs() < 1e-15);
    }
}
