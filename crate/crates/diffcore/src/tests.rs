use super::*;

fn mat(rows: usize, cols: usize, v: &[f64]) -> Tensor64 {
    Tensor::matrix(rows, cols, v.to_vec()).unwrap()
}

#[test]
fn matmul_identity_and_inner_product() {
    let mut g = Graph64::new();
    let i2 = g.constant(Tensor::identity(2)).unwrap();
    let m = g.constant(mat(2, 2, &[1.0, 2.0, 3.0, 4.0])).unwrap();
    let p = g.matmul(i2, m).unwrap();
    assert_eq!(g.value(p).data(), &[1.0, 2.0, 3.0, 4.0]);

    let a = g.constant(mat(1, 2, &[1.0, 2.0])).unwrap();
    let b = g.constant(mat(2, 1, &[3.0, 4.0])).unwrap();
    let c = g.matmul(a, b).unwrap();
    assert_eq!(g.scalar(c), 11.0);
}

#[test]
fn matmul_rejects_mismatched_inner_dims() {
    let mut g = Graph64::new();
    let a = g.constant(Tensor::zeros(&[2, 3])).unwrap();
    let b = g.constant(Tensor::zeros(&[2, 3])).unwrap();
    assert!(matches!(g.matmul(a, b), Err(DiffError::Dimension(_))));
}

#[test]
fn softmax_analytic_cases() {
    let mut g = Graph64::new();
    let x = g.constant(mat(1, 3, &[0.0, 0.0, 0.0])).unwrap();
    let s = g.softmax(x).unwrap();
    for &v in g.value(s).data() {
        assert!((v - 1.0 / 3.0).abs() < 1e-15);
    }
    let x = g.constant(mat(1, 2, &[1000.0, 1000.0])).unwrap();
    let s = g.softmax(x).unwrap();
    assert_eq!(g.value(s).data(), &[0.5, 0.5]);
    let x = g.constant(mat(1, 2, &[0.0, 3f64.ln()])).unwrap();
    let s = g.softmax(x).unwrap();
    assert!((g.value(s).data()[0] - 0.25).abs() < 1e-15);
    assert!((g.value(s).data()[1] - 0.75).abs() < 1e-15);
}

#[test]
fn softmax_nan_input_is_an_error() {
    let mut g = Graph64::new();
    let x = g.constant(mat(1, 2, &[f64::NAN, 0.0])).unwrap();
    assert!(matches!(g.softmax(x), Err(DiffError::NonFinite(_))));
}

#[test]
fn dropout_identity_cases_and_bad_rate() {
    let mut rng = RngStream::new(1, 0);
    let mut g = Graph64::new();
    let x = g.constant(mat(1, 3, &[1.0, -2.0, 3.0])).unwrap();
    let off = g.dropout(x, 0.5, &mut rng, false).unwrap();
    assert_eq!(g.value(off).data(), g.value(x).data());
    let zero_rate = g.dropout(x, 0.0, &mut rng, true).unwrap();
    assert_eq!(g.value(zero_rate).data(), g.value(x).data());
    assert!(matches!(
        g.dropout(x, 1.0, &mut rng, true),
        Err(DiffError::Config(_))
    ));
    assert!(matches!(
        g.dropout(x, -0.1, &mut rng, true),
        Err(DiffError::Config(_))
    ));
}

#[test]
fn dropout_preserves_mean_in_expectation() {
    let n = 100_000;
    let mut rng = RngStream::new(7, 3);
    let mut g = Graph64::new();
    let x = g.constant(Tensor::filled(&[1, n], 1.0)).unwrap();
    let y = g.dropout(x, 0.5, &mut rng, true).unwrap();
    let mean = g.value(y).data().iter().sum::<f64>() / n as f64;
    assert!((0.98..=1.02).contains(&mean), "mean {mean}");
    assert!(g.value(y).data().iter().all(|&v| v == 0.0 || v == 2.0));
}

#[test]
fn dropout_masks_reproduce_per_stream() {
    let draw = |seed, stream| {
        let mut rng = RngStream::new(seed, stream);
        let mut g = Graph64::new();
        let x = g.constant(Tensor::filled(&[4, 16], 1.0)).unwrap();
        let y = g.dropout(x, 0.3, &mut rng, true).unwrap();
        g.value(y).data().to_vec()
    };
    assert_eq!(draw(5, 1), draw(5, 1));
    assert_ne!(draw(5, 1), draw(5, 2));
    assert_ne!(draw(5, 1), draw(6, 1));
}

#[test]
fn gaussian_logpdf_values_and_domain() {
    assert!((gaussian_logpdf(0.0f64, 0.0, 1.0) + 0.918_938_5).abs() < 1e-7);
    assert!((gaussian_logpdf(3.0f64, 0.0, 1.0) + 5.418_938_5).abs() < 1e-7);
    assert!(matches!(
        gaussian_logpdf_checked(0.0f64, 0.0, 0.0),
        Err(DiffError::Domain(_))
    ));
    assert!(gaussian_logpdf_checked(0.0f64, 0.0, -1.0).is_err());
}

#[test]
fn backward_square() {
    let mut g = Graph64::new();
    let x = g.variable(Tensor::scalar(3.0)).unwrap();
    let l = g.square(x);
    g.backward(l).unwrap();
    assert_eq!(g.grad(x).unwrap(), &[6.0]);
}

#[test]
fn backward_accumulates_and_resets() {
    let mut g = Graph64::new();
    let x = g.variable(Tensor::scalar(3.0)).unwrap();
    let l = g.square(x);
    g.backward(l).unwrap();
    g.backward(l).unwrap();
    assert_eq!(g.grad(x).unwrap(), &[12.0]);
    g.zero_grad();
    assert!(g.grad(x).is_none());
}

#[test]
fn backward_requires_scalar_loss() {
    let mut g = Graph64::new();
    let x = g.variable(Tensor::zeros(&[2, 2])).unwrap();
    assert!(matches!(g.backward(x), Err(DiffError::Contract(_))));
}

#[test]
fn sum_of_softmax_has_zero_gradient() {
    let mut g = Graph64::new();
    let x = g.variable(mat(2, 3, &[0.3, -1.0, 2.0, 5.0, 0.0, -3.0])).unwrap();
    let s = g.softmax(x).unwrap();
    let l = g.sum(s);
    g.backward(l).unwrap();
    for &v in g.grad(x).unwrap() {
        assert!(v.abs() < 1e-15);
    }
}

#[test]
fn aliased_params_share_one_gradient() {
    let mut rng = RngStream::new(0, 0);
    let mut store = ParamStore::<f64>::new();
    let w = store.insert_glorot("w", 2, 2, &mut rng);
    let mut g = Graph64::new();
    let a = g.param(&store, w);
    let b = g.param(&store, w);
    assert_eq!(a, b);
    let p = g.matmul(a, b).unwrap();
    let l = g.sum(p);
    g.backward(l).unwrap();
    let grads = g.param_grads(store.len());
    assert_eq!(grads.get(w).unwrap().len(), 4);
}

#[test]
fn mean_rows_is_permutation_exact() {
    let mut rng = RngStream::new(11, 0);
    let rows: Vec<Vec<f64>> = (0..50)
        .map(|_| (0..6).map(|_| rng.normal() * 1e3).collect())
        .collect();
    let mut perm: Vec<usize> = (0..50).collect();
    rng.shuffle(&mut perm);
    let shuffled: Vec<Vec<f64>> = perm.iter().map(|&i| rows[i].clone()).collect();
    let mut g = Graph64::new();
    let a = g.constant(Tensor::from_rows(&rows).unwrap()).unwrap();
    let b = g.constant(Tensor::from_rows(&shuffled).unwrap()).unwrap();
    let ma = g.mean_rows(a).unwrap();
    let mb = g.mean_rows(b).unwrap();
    assert_eq!(g.value(ma).data(), g.value(mb).data());
}

#[test]
fn checksum_tracks_values() {
    let mut rng = RngStream::new(0, 0);
    let mut store = ParamStore::<f32>::new();
    let w = store.insert_glorot("w", 3, 2, &mut rng);
    let before = store.checksum();
    assert_eq!(before, store.clone().checksum());
    store.get_mut(w).data_mut()[0] += 1.0;
    assert_ne!(before, store.checksum());
}
