use mucap_core::gradsuite::{run_suite, DEFAULT_STEP, DEFAULT_TOLERANCE};
use mucap_core::{Graph, Tensor};
use proptest::prelude::*;

#[test]
fn suite_passes_at_toy_width() {
    let report = run_suite(8, DEFAULT_STEP, DEFAULT_TOLERANCE, 0).unwrap();
    for e in &report.entries {
        assert!(e.report.passed, "{}: {}", e.name, e.report.max_rel_error);
        assert!(e.report.checked > 0, "{}", e.name);
    }
    assert!(report.passed);
    assert!(report.max_rel_error < 1e-4);
    let names: Vec<&str> = report.entries.iter().map(|e| e.name.as_str()).collect();
    for op in [
        "matmul",
        "softmax_rows",
        "layer_norm",
        "cross_entropy",
        "unfold",
        "contrastive",
        "total_loss",
    ] {
        assert!(names.contains(&op), "{op} missing");
    }
}

fn matrix(rows: usize, cols: usize) -> impl Strategy<Value = Tensor> {
    proptest::collection::vec(-1.0f64..1.0, rows * cols).prop_map(move |d| Tensor::new(vec![rows, cols], d).unwrap())
}

fn big_matrix(rows: usize, cols: usize) -> impl Strategy<Value = Tensor> {
    proptest::collection::vec(-1e3f64..1e3, rows * cols).prop_map(move |d| Tensor::new(vec![rows, cols], d).unwrap())
}

proptest! {
    #[test]
    fn softmax_rows_sum_to_one_and_shift_invariant(x in matrix(3, 5), shift in -50.0f64..50.0) {
        let mut g = Graph::new();
        let a = g.constant(x.clone());
        let s = g.softmax(a, 1).unwrap();
        let shifted = Tensor::new(vec![3, 5], x.data().iter().map(|v| v + shift).collect()).unwrap();
        let b = g.constant(shifted);
        let t = g.softmax(b, 1).unwrap();
        for (row, row2) in g.data(s).chunks(5).zip(g.data(t).chunks(5)) {
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            for (p, q) in row.iter().zip(row2) {
                prop_assert!((p - q).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn double_backward_doubles_grads(x in matrix(2, 3), w in matrix(3, 2)) {
        let mut g = Graph::new();
        let a = g.leaf(x.with_requires_grad(true));
        let b = g.constant(w);
        let y = g.matmul(a, b).unwrap();
        let t = g.tanh(y);
        let l = g.sum(t);
        g.backward(l).unwrap();
        let once = g.grad(a).unwrap().to_vec();
        g.backward(l).unwrap();
        for (two, one) in g.grad(a).unwrap().iter().zip(&once) {
            prop_assert_eq!(*two, 2.0 * one);
        }
    }

    #[test]
    fn large_inputs_stay_finite(x in big_matrix(3, 4), gain in matrix(1, 4)) {
        let mut g = Graph::new();
        let a = g.leaf(x.with_requires_grad(true));
        let gn = g.constant(gain.reshaped(vec![4]).unwrap());
        let zero = g.constant(Tensor::zeros(vec![4]));
        let outs = [
            g.softmax(a, 1).unwrap(),
            g.softmax(a, 0).unwrap(),
            g.tanh(a),
            g.gelu(a),
            g.layer_norm(a, gn, zero, 1e-5).unwrap(),
            g.l2_normalize(a).unwrap(),
            g.mean_pool(a).unwrap(),
            g.var_axis(a, 1).unwrap(),
            g.cross_entropy(a, &[1, 2, 3], usize::MAX).unwrap(),
        ];
        let mut total = g.constant(Tensor::scalar(0.0));
        for o in outs {
            prop_assert!(g.data(o).iter().all(|v| v.is_finite()));
            let s = g.sum(o);
            total = g.add(total, s).unwrap();
        }
        g.backward(total).unwrap();
        prop_assert!(g.grad(a).unwrap().iter().all(|v| v.is_finite()));
    }
}
