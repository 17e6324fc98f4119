use diffcore::{Graph, RngStream, Tensor};

use super::*;

fn small(variant: Variant) -> ModelConfig {
    ModelConfig {
        variant,
        hidden: 16,
        rep_dim: 8,
        latent_dim: 4,
        heads: 2,
        ..ModelConfig::default()
    }
}

fn episode(n_ctx: usize, seed: u64) -> Episode {
    let mut rng = RngStream::new(seed, 9);
    let d = 3;
    let cx: Vec<f64> = (0..n_ctx * d).map(|_| rng.normal()).collect();
    let cy: Vec<f64> = (0..n_ctx).map(|_| 100.0 * rng.uniform()).collect();
    let tasks = vec![
        SubTask::ForecastObserved,
        SubTask::EstimateUnobserved,
        SubTask::ForecastUnobserved,
        SubTask::EstimateUnobserved,
        SubTask::ForecastObserved,
    ];
    let tx: Vec<f64> = (0..tasks.len() * d).map(|_| rng.normal()).collect();
    let ty = vec![Some(10.0), None, Some(3.0), Some(0.0), None];
    Episode::new(d, cx, cy, tx, tasks, ty).unwrap()
}

fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
}

#[test]
fn single_context_point_gives_one_representation() {
    let m = Model64::new(small(Variant::Taanp), 3, 100.0, 1).unwrap();
    let ep = episode(1, 2);
    let r = m.encode_context(&ep, ForwardMode::InferPlain, &mut RngStream::new(0, 0)).unwrap();
    assert_eq!(r.shape(), &[1, 8]);
}

#[test]
fn duplicate_points_share_a_representation_and_permutation_permutes() {
    let m = Model64::new(small(Variant::Anp), 3, 100.0, 1).unwrap();
    let ep = episode(4, 3);
    let dup = ep.with_context_subset(&[2, 2]).unwrap();
    let r = m.encode_context(&dup, ForwardMode::InferPlain, &mut RngStream::new(0, 0)).unwrap();
    assert_eq!(r.row_slice(0), r.row_slice(1));

    let full = m.encode_context(&ep, ForwardMode::InferPlain, &mut RngStream::new(0, 0)).unwrap();
    let perm = ep.with_context_subset(&[3, 1, 0, 2]).unwrap();
    let rp = m.encode_context(&perm, ForwardMode::InferPlain, &mut RngStream::new(0, 0)).unwrap();
    for (k, &i) in [3, 1, 0, 2].iter().enumerate() {
        assert_eq!(rp.row_slice(k), full.row_slice(i));
    }
}

#[test]
fn aggregation_is_mean_and_order_free() {
    assert_eq!(aggregate_mean(&[vec![0.0, 2.0], vec![2.0, 0.0]]).unwrap(), vec![1.0, 1.0]);
    assert!(matches!(aggregate_mean::<f64>(&[]), Err(crate::Error::Contract(_))));

    let mut rng = RngStream::new(5, 5);
    let rows: Vec<Vec<f64>> = (0..50).map(|_| (0..6).map(|_| rng.normal() * 1e3).collect()).collect();
    let base = aggregate_mean(&rows).unwrap();
    let mut shuffled = rows.clone();
    rng.shuffle(&mut shuffled);
    assert_eq!(aggregate_mean(&shuffled).unwrap(), base);
}

#[test]
fn zeroed_latent_head_gives_softplus_zero() {
    let mut m = Model64::new(small(Variant::Lnp), 3, 1.0, 1).unwrap();
    let out = m.ids().latent_out.unwrap();
    for id in [out.w, out.b] {
        m.params_mut().get_mut(id).data_mut().fill(0.0);
    }
    let summary = Tensor::row(vec![0.3; 8]);
    let mut rng = RngStream::new(1, 1);
    let st = m.latent_posterior(&summary, Some(&mut rng)).unwrap();
    for (&mu, &s) in st.mu_z.iter().zip(&st.sigma_z) {
        assert_eq!(mu, 0.0);
        assert!((s - (2f64.ln() + 1e-6)).abs() < 1e-12);
    }
    // Sample mean of z approaches μ_z.
    let n = 10_000;
    let mut acc = [0.0; 4];
    for _ in 0..n {
        let z = m.latent_posterior(&summary, Some(&mut rng)).unwrap().z_sample.unwrap();
        for (a, v) in acc.iter_mut().zip(z) {
            *a += v;
        }
    }
    let tol = 3.0 * 2f64.ln() / 100.0;
    assert!(acc.iter().all(|a| (a / n as f64).abs() < tol));
}

#[test]
fn cnp_has_no_latent_path() {
    let m = Model64::new(small(Variant::Cnp), 3, 1.0, 1).unwrap();
    let mut g = Graph::new();
    let s = g.constant(Tensor::row(vec![0.0; 8])).unwrap();
    assert!(matches!(m.latent(&mut g, s), Err(crate::Error::Contract(_))));
}

fn attention_weights_output(m: &Model64, n: usize, same_keys: bool) -> (Tensor<f64>, Tensor<f64>) {
    let mut g = Graph::new();
    let mut rng = RngStream::new(7, 7);
    let row: Vec<f64> = (0..3).map(|_| rng.normal()).collect();
    let cx: Vec<f64> = (0..n)
        .flat_map(|_| if same_keys { row.clone() } else { (0..3).map(|_| rng.normal()).collect() })
        .collect();
    let reps: Vec<f64> = (0..n * 8).map(|_| rng.normal()).collect();
    let cx = g.constant(Tensor::matrix(n, 3, cx).unwrap()).unwrap();
    let reps = g.constant(Tensor::matrix(n, 8, reps).unwrap()).unwrap();
    let tx = g.constant(Tensor::matrix(2, 3, (0..6).map(|_| rng.normal()).collect()).unwrap()).unwrap();
    let (k, v) = m.keys_values(&mut g, cx, reps).unwrap();
    let out = m.attend(&mut g, SubTask::ForecastUnobserved, tx, k, v).unwrap();
    // Expected value if weights were uniform: mean of values times W^O.
    let mean_v = g.mean_rows(v).unwrap();
    let wo = g.param(m.params(), m.ids().wo);
    let expect = g.matmul(mean_v, wo).unwrap();
    (g.value(out).clone(), g.value(expect).clone())
}

#[test]
fn attention_with_one_key_or_identical_keys_is_uniform() {
    let m = Model64::new(small(Variant::Taanp), 3, 1.0, 4).unwrap();
    for (n, same) in [(1, false), (6, true)] {
        let (out, expect) = attention_weights_output(&m, n, same);
        for r in 0..2 {
            assert!(close(out.row_slice(r), expect.row_slice(0), 1e-12), "n={n}");
        }
    }
    // Distinct keys are generally not uniform.
    let (out, expect) = attention_weights_output(&m, 6, false);
    assert!(!close(out.row_slice(0), expect.row_slice(0), 1e-6));
}

#[test]
fn query_projections_are_separate_only_for_taanp() {
    let t = Model64::new(small(Variant::Taanp), 3, 1.0, 1).unwrap();
    let q: Vec<_> = SubTask::ALL.iter().map(|&s| t.query_projection(s)).collect();
    assert!(q[0] != q[1] && q[1] != q[2] && q[0] != q[2]);
    let a = Model64::new(small(Variant::Anp), 3, 1.0, 1).unwrap();
    let q: Vec<_> = SubTask::ALL.iter().map(|&s| a.query_projection(s)).collect();
    assert!(q[0] == q[1] && q[1] == q[2]);
    assert_eq!(t.params().len(), a.params().len() + 2);
}

#[test]
fn tied_taanp_matches_anp() {
    let mut t = Model64::new(small(Variant::Taanp), 3, 50.0, 11).unwrap();
    let shared = t.params().get(t.ids().wq_s).clone();
    for id in [t.ids().wq_t, t.ids().wq_st] {
        *t.params_mut().get_mut(id) = shared.clone();
    }
    let mut a = Model64::new(small(Variant::Anp), 3, 50.0, 99).unwrap();
    let ids: Vec<_> = a.params().ids().collect();
    for id in ids {
        let name = match a.params().name(id) {
            "attn.wq" => "attn.wq_s".to_string(),
            other => other.to_string(),
        };
        let src = t.params().find(&name).unwrap();
        *a.params_mut().get_mut(id) = t.params().get(src).clone();
    }
    let ep = episode(7, 12);
    for mode in [ForwardMode::InferPlain, ForwardMode::InferMc] {
        let (pt, _) = t.forward(&ep, mode, &mut RngStream::new(3, 1)).unwrap();
        let (pa, _) = a.forward(&ep, mode, &mut RngStream::new(3, 1)).unwrap();
        assert_eq!(pt, pa);
    }
}

#[test]
fn zeroed_decoder_output_gives_floor_plus_ln2() {
    let mut m = Model64::new(small(Variant::Taanp), 3, 1.0, 1).unwrap();
    let last = m.ids().decoder[2];
    for id in [last.w, last.b] {
        m.params_mut().get_mut(id).data_mut().fill(0.0);
    }
    let ep = episode(5, 1);
    let (p, _) = m.forward(&ep, ForwardMode::InferPlain, &mut RngStream::new(0, 0)).unwrap();
    assert_eq!(p.mu.len(), ep.n_targets());
    assert!(p.mu.iter().all(|&v| v == 0.0));
    assert!(p.sigma.iter().all(|&s| (s - (1e-3 + 2f64.ln())).abs() < 1e-12));
}

#[test]
fn fixed_sigma_overrides_head() {
    let cfg = ModelConfig {
        fixed_sigma: Some(2.5),
        ..small(Variant::Lnp)
    };
    let m = Model64::new(cfg, 3, 1.0, 1).unwrap();
    let (p, _) = m.forward(&episode(3, 1), ForwardMode::InferPlain, &mut RngStream::new(0, 0)).unwrap();
    assert!(p.sigma.iter().all(|&s| s == 2.5));
}

#[test]
fn plain_inference_is_deterministic_and_mc_is_not() {
    let ep = episode(6, 4);
    for v in [Variant::Cnp, Variant::Lnp, Variant::Anp, Variant::Taanp] {
        let m = Model64::new(small(v), 3, 100.0, 2).unwrap();
        let a = m.forward(&ep, ForwardMode::InferPlain, &mut RngStream::new(1, 0)).unwrap();
        let b = m.forward(&ep, ForwardMode::InferPlain, &mut RngStream::new(2, 5)).unwrap();
        assert_eq!(a, b, "{v}");
        let c = m.forward(&ep, ForwardMode::InferMc, &mut RngStream::new(1, 0)).unwrap();
        let d = m.forward(&ep, ForwardMode::InferMc, &mut RngStream::new(1, 1)).unwrap();
        assert_ne!(c.0.mu, d.0.mu, "{v}");
        let e = m.forward(&ep, ForwardMode::InferMc, &mut RngStream::new(1, 0)).unwrap();
        assert_eq!(c, e, "{v}");
    }
}

#[test]
fn context_order_does_not_change_plain_predictions() {
    let ep = episode(9, 8);
    let perm: Vec<usize> = vec![4, 0, 8, 2, 6, 1, 3, 7, 5];
    let shuffled = ep.with_context_subset(&perm).unwrap();
    for v in [Variant::Cnp, Variant::Lnp, Variant::Anp, Variant::Taanp] {
        let m = Model64::new(small(v), 3, 100.0, 2).unwrap();
        let (a, _) = m.forward(&ep, ForwardMode::InferPlain, &mut RngStream::new(0, 0)).unwrap();
        let (b, _) = m.forward(&shuffled, ForwardMode::InferPlain, &mut RngStream::new(0, 0)).unwrap();
        assert!(close(&a.mu, &b.mu, 1e-9) && close(&a.sigma, &b.sigma, 1e-9), "{v}");
    }
}

#[test]
fn outputs_follow_target_order() {
    let ep = episode(4, 8);
    let m = Model64::new(small(Variant::Taanp), 3, 100.0, 2).unwrap();
    let (p, _) = m.forward(&ep, ForwardMode::InferPlain, &mut RngStream::new(0, 0)).unwrap();
    let sub = ep.with_target_subset(&[3]).unwrap();
    let (q, _) = m.forward(&sub, ForwardMode::InferPlain, &mut RngStream::new(0, 0)).unwrap();
    assert!((p.mu[3] - q.mu[0]).abs() < 1e-12);
}

#[test]
fn wrong_feature_dimension_is_a_config_error() {
    let m = Model64::new(small(Variant::Taanp), 4, 1.0, 1).unwrap();
    let r = m.forward(&episode(3, 1), ForwardMode::InferPlain, &mut RngStream::new(0, 0));
    assert!(matches!(r, Err(crate::Error::Config(_))));
}

#[test]
fn invalid_configs_are_rejected() {
    let bad = ModelConfig { rep_dim: 9, heads: 2, ..ModelConfig::default() };
    assert!(Model64::new(bad, 3, 1.0, 0).is_err());
    assert!(Model64::new(small(Variant::Cnp), 3, 0.0, 0).is_err());
    assert!("transformer".parse::<Variant>().is_err());
}

#[test]
fn checkpoint_round_trip_is_exact_in_f32() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.ckpt");
    let m = Model32::new(small(Variant::Taanp), 3, 120.0, 5).unwrap();
    let files = m.to_checkpoint().save(&path).unwrap();
    assert_eq!(files.len(), 2);
    let back = Model32::from_checkpoint(&Checkpoint::load(&path).unwrap()).unwrap();
    assert_eq!(back, m);
    assert_eq!(back.checksum(), m.checksum());
}

#[test]
fn truncated_checkpoint_blob_is_an_integrity_error() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    Model32::new(small(Variant::Cnp), 3, 1.0, 5).unwrap().to_checkpoint().save(&path).unwrap();
    let blob = path.with_extension("bin");
    let bytes = std::fs::read(&blob).unwrap();
    std::fs::write(&blob, &bytes[..bytes.len() - 4]).unwrap();
    assert!(matches!(Checkpoint::load(&path), Err(crate::Error::Integrity(_))));
}

#[test]
fn f32_and_f64_agree() {
    let m = Model64::new(small(Variant::Taanp), 3, 100.0, 3).unwrap();
    let m32: Model32 = m.cast();
    let ep = episode(5, 5);
    let (a, _) = m.forward(&ep, ForwardMode::InferPlain, &mut RngStream::new(0, 0)).unwrap();
    let (b, _) = m32.forward(&ep, ForwardMode::InferPlain, &mut RngStream::new(0, 0)).unwrap();
    assert!(close(&a.mu, &b.mu, 1e-3 * 100.0));
}

#[test]
fn without_dropout_mc_passes_equal_plain_inference() {
    let ep = episode(5, 6);
    let mut m = Model64::new(small(Variant::Taanp), 3, 100.0, 2).unwrap();
    m.set_dropout(0.0).unwrap();
    let plain = m.forward(&ep, ForwardMode::InferPlain, &mut RngStream::new(0, 0)).unwrap().0;
    for k in 0..3 {
        let mc = m.forward(&ep, ForwardMode::InferMc, &mut RngStream::new(4, k)).unwrap().0;
        assert_eq!(mc, plain);
    }
}

#[test]
fn sigma_respects_floor_and_cnp_ignores_rng() {
    let ep = episode(5, 6);
    let m = Model64::new(small(Variant::Cnp), 3, 100.0, 2).unwrap();
    let a = m.forward(&ep, ForwardMode::InferPlain, &mut RngStream::new(0, 0)).unwrap();
    let b = m.forward(&ep, ForwardMode::InferPlain, &mut RngStream::new(9, 3)).unwrap();
    assert_eq!(a, b);
    assert!(a.1.is_none());
    assert!(a.0.sigma.iter().all(|&s| s >= 1e-3));
}
