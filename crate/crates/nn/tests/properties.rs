//! Randomized invariants of the tensor ops, losses and schedule.

use proptest::prelude::*;
use visocc_nn::layers::{avgpool_rows, maxpool_rows};
use visocc_nn::loss::{bce_with_logits, softmax_cross_entropy};
use visocc_nn::tensor::{matmul_nn, matmul_nt};
use visocc_nn::{cosine_lr, Tensor2};

fn matrix(rows: usize, cols: usize) -> impl Strategy<Value = Tensor2<f64>> {
    prop::collection::vec(-2.0f64..2.0, rows * cols)
        .prop_map(move |v| Tensor2::from_vec(rows, cols, v).unwrap())
}

fn naive_product(a: &Tensor2<f64>, b: &Tensor2<f64>) -> Vec<f64> {
    let mut out = vec![0.0; a.rows() * b.cols()];
    for i in 0..a.rows() {
        for j in 0..b.cols() {
            out[i * b.cols() + j] = (0..a.cols()).map(|k| a.get(i, k) * b.get(k, j)).sum();
        }
    }
    out
}

fn transpose(a: &Tensor2<f64>) -> Tensor2<f64> {
    let mut t = Tensor2::zeros(a.cols(), a.rows());
    for i in 0..a.rows() {
        for j in 0..a.cols() {
            t.set(j, i, a.get(i, j));
        }
    }
    t
}

proptest! {
    #[test]
    fn matmul_matches_triple_loop((a, b) in (1usize..7, 1usize..7, 1usize..7).prop_flat_map(|(m, k, n)| (matrix(m, k), matrix(k, n)))) {
        let expected = naive_product(&a, &b);
        let nn = matmul_nn(&a, &b).unwrap();
        let nt = matmul_nt(&a, &transpose(&b)).unwrap();
        for ((x, y), z) in nn.data().iter().zip(nt.data()).zip(&expected) {
            prop_assert!((x - z).abs() < 1e-12);
            prop_assert!((y - z).abs() < 1e-12);
        }
    }

    #[test]
    fn bce_is_nonnegative_and_linear_in_weights(
        rows in prop::collection::vec((-30.0f64..30.0, any::<bool>(), 0.0f64..3.0), 1..20),
        scale in 0.0f64..5.0,
    ) {
        let logits: Vec<f64> = rows.iter().map(|r| r.0).collect();
        let targets: Vec<f64> = rows.iter().map(|r| f64::from(r.1 as u8)).collect();
        let weights: Vec<f64> = rows.iter().map(|r| r.2).collect();
        let scaled: Vec<f64> = weights.iter().map(|w| w * scale).collect();
        let base = bce_with_logits(&logits, &targets, &weights).unwrap();
        let more = bce_with_logits(&logits, &targets, &scaled).unwrap();
        prop_assert!(base.loss >= 0.0);
        prop_assert!((more.loss - scale * base.loss).abs() <= 1e-12 * (1.0 + more.loss.abs()));
    }

    #[test]
    fn cross_entropy_gradient_rows_sum_to_zero((logits, labels) in (1usize..6, 2usize..6).prop_flat_map(|(n, c)| (matrix(n, c), prop::collection::vec(0..c, n)))) {
        let (loss, grad) = softmax_cross_entropy(&logits, &labels).unwrap();
        prop_assert!(loss >= 0.0);
        for i in 0..grad.rows() {
            prop_assert!(grad.row(i).iter().sum::<f64>().abs() < 1e-12);
        }
    }

    #[test]
    fn max_pool_dominates_average_pool(x in matrix(8, 3), cut in 1usize..8) {
        let offsets = [0, cut, 8];
        let max = maxpool_rows(&x, &offsets).unwrap().output;
        let avg = avgpool_rows(&x, &offsets).unwrap();
        for (m, a) in max.data().iter().zip(avg.data()) {
            prop_assert!(m + 1e-12 >= *a);
        }
    }

    #[test]
    fn cosine_schedule_decays_within_bounds(total in 1usize..200, base in 1e-5f64..1.0) {
        let mut previous = f64::INFINITY;
        for epoch in 0..total {
            let lr = cosine_lr(epoch, total, base);
            prop_assert!((0.0..=base).contains(&lr));
            prop_assert!(lr <= previous);
            previous = lr;
        }
        prop_assert_eq!(cosine_lr(0, total, base), base);
    }
}
