use nalgebra::DMatrix;
use proptest::prelude::*;
use qagt_core::topology::compute_kappa;
use qagt_core::{Error, MixingMatrix};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Birkhoff mixture: a cyclic shift (for strong connectivity), the identity
/// and a few random permutations with random convex weights.
fn random_doubly_stochastic(n: usize, seed: u64, symmetric: bool) -> DMatrix<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let perm_matrix = |perm: &[usize]| DMatrix::from_fn(n, n, |i, j| if perm[i] == j { 1.0 } else { 0.0 });
    let shift: Vec<usize> = (0..n).map(|i| (i + 1) % n).collect();
    let mut mats = vec![DMatrix::identity(n, n), perm_matrix(&shift)];
    for _ in 0..3 {
        let mut perm: Vec<usize> = (0..n).collect();
        for i in (1..n).rev() {
            perm.swap(i, rng.random_range(0..=i));
        }
        mats.push(perm_matrix(&perm));
    }
    let weights: Vec<f64> = mats.iter().map(|_| rng.random_range(0.1..1.0)).collect();
    let total: f64 = weights.iter().sum();
    let mut a = DMatrix::zeros(n, n);
    for (m, w) in mats.iter().zip(&weights) {
        a += m * (w / total);
    }
    if symmetric {
        a = (&a + a.transpose()) * 0.5;
    }
    a
}

fn stacked_mean(v: &[f64], n: usize, d: usize) -> Vec<f64> {
    let mut m = vec![0.0; d];
    for i in 0..n {
        for c in 0..d {
            m[c] += v[i * d + c] / n as f64;
        }
    }
    m
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn mixing_invariants(n in 2usize..9, seed in any::<u64>(), d in 1usize..4) {
        let w = random_doubly_stochastic(n, seed, false);
        let a = MixingMatrix::from_matrix(w.clone()).unwrap();
        let j = DMatrix::from_element(n, n, 1.0 / n as f64);
        prop_assert!((&w * &j - &j).abs().max() <= 1e-12);
        prop_assert!((&j * &w - &j).abs().max() <= 1e-12);
        let dev = &w - DMatrix::<f64>::identity(n, n);
        prop_assert!(dev.singular_values().max() <= 2.0 + 1e-12);
        prop_assert!(a.kappa() < 1.0);

        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
        for _ in 0..100 {
            let v: Vec<f64> = (0..n * d).map(|_| rng.random_range(-10.0..10.0)).collect();
            let mean = stacked_mean(&v, n, d);
            let av = a.mix(&v, d);
            let mixed_mean = stacked_mean(&av, n, d);
            for c in 0..d {
                prop_assert!((mean[c] - mixed_mean[c]).abs() <= 1e-12 * (1.0 + mean[c].abs()));
            }
            let dev_in: Vec<f64> = v.iter().enumerate().map(|(k, x)| x - mean[k % d]).collect();
            let dev_out: Vec<f64> = av.iter().enumerate().map(|(k, x)| x - mean[k % d]).collect();
            prop_assert!(norm(&dev_out) <= a.kappa() * norm(&dev_in) + 1e-12);
        }
    }

    #[test]
    fn symmetric_kappa_is_second_eigenvalue(n in 2usize..9, seed in any::<u64>()) {
        let w = random_doubly_stochastic(n, seed, true);
        let kappa = compute_kappa(&w);
        let mut eig: Vec<f64> = w.clone().symmetric_eigen().eigenvalues.iter().map(|v| v.abs()).collect();
        eig.sort_by(|a, b| b.partial_cmp(a).unwrap());
        // the leading eigenvalue is the consensus direction with |lambda| = 1
        prop_assert!((kappa - eig[1]).abs() <= 1e-10);
    }
}

#[test]
fn file_round_trip_of_nonsymmetric_matrix() {
    let w = random_doubly_stochastic(6, 42, false);
    let a = MixingMatrix::from_matrix(w).unwrap();
    let b = MixingMatrix::parse(&a.to_text()).unwrap();
    assert!((a.weights() - b.weights()).abs().max() <= 1e-15);
    assert!((a.kappa() - b.kappa()).abs() <= 1e-12);
}

#[test]
fn rejects_bad_inputs() {
    assert!(matches!(
        MixingMatrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]),
        Err(Error::NotStronglyConnected)
    ));
    assert!(matches!(
        MixingMatrix::from_rows(&[vec![0.9, 0.1], vec![0.5, 0.5]]),
        Err(Error::NotDoublyStochastic(_))
    ));
    assert_eq!(MixingMatrix::from_rows(&[vec![0.5, 0.5], vec![0.5, 0.5]]).unwrap().kappa(), 0.0);
    assert!(MixingMatrix::complete(0).is_err());
    assert!(MixingMatrix::ring(2, 0.5).is_err());
    assert!(MixingMatrix::parse("2\n0.5 0.5\n0.5").is_err());
}
