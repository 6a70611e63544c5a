mod support;

use pong::layers::{pair_channel_indices, BatchNorm, Conv1d, Conv2d, ConvParams, Ctx, GroupConv, GroupPairConv, LayerNorm, Linear, Tcn, TcnMode, NORM_EPS};
use pong::tensor::{tolerance, NormMode, Tape, Tensor};
use proptest::prelude::*;
use rand::SeedableRng;
use support::{build, permute_groups, run, uniform, zscore, Forward, Rng8, Stores};

fn weighted_loss(s: &mut Stores, x: &Tensor<f64>, r: &Tensor<f64>, f: Forward<'_>, grads: bool) -> (f64, Vec<f64>) {
    let mut tape = Tape::new();
    let xv = tape.leaf(x.clone(), grads);
    let mut cx = Ctx {
        tape: &mut tape,
        params: &s.params,
        stats: &mut s.stats,
        mode: NormMode::Train,
    };
    let y = f(&mut cx, xv).unwrap();
    let rv = tape.constant(r.clone());
    let prod = tape.mul(y, rv).unwrap();
    let loss = tape.sum(prod);
    let value = tape.value(loss)[0];
    if !grads {
        return (value, Vec::new());
    }
    tape.backward(loss).unwrap();
    s.params.zero_grads();
    s.params.accumulate_grads(&tape);
    (value, tape.grad(xv).map(|g| g.to_vec()).unwrap_or_default())
}

/// Largest relative error between tape gradients and central differences of
/// `sum(r ⊙ layer(x))`, over the input and every parameter.
fn max_grad_error(s: &mut Stores, x: &Tensor<f64>, seed: u64, f: Forward<'_>) -> f64 {
    let mut rng = Rng8::seed_from_u64(seed);
    let y = run(s, NormMode::Train, x, f);
    let r = uniform(&mut rng, y.shape());
    let (_, gx) = weighted_loss(s, x, &r, f, true);
    let h = tolerance::GRAD_STEP_F64;
    let mut worst = 0.0f64;
    for i in 0..x.len() {
        let mut p = x.clone();
        p.data_mut()[i] += h;
        let mut m = x.clone();
        m.data_mut()[i] -= h;
        let num = (weighted_loss(s, &p, &r, f, false).0 - weighted_loss(s, &m, &r, f, false).0) / (2.0 * h);
        worst = worst.max(pong::tensor::relative_error(gx[i], num));
    }
    let ids: Vec<_> = s.params.iter().map(|(id, _)| id).collect();
    for id in ids {
        let analytic = s.params.get(id).grad().to_vec();
        for (i, &a) in analytic.iter().enumerate() {
            let orig = s.params.get(id).value()[i];
            s.params.get_mut(id).value_mut()[i] = orig + h;
            let fp = weighted_loss(s, x, &r, f, false).0;
            s.params.get_mut(id).value_mut()[i] = orig - h;
            let fm = weighted_loss(s, x, &r, f, false).0;
            s.params.get_mut(id).value_mut()[i] = orig;
            worst = worst.max(pong::tensor::relative_error(a, (fp - fm) / (2.0 * h)));
        }
    }
    worst
}

// ---- oracle comparisons ------------------------------------------------------

const CASES: u64 = 200;

#[test]
fn conv2d_matches_direct_loops() {
    assert!(support::conv2d_deviation(CASES, 11) < tolerance::REFERENCE_F64);
}

#[test]
fn conv1d_matches_direct_loops() {
    assert!(support::conv1d_deviation(CASES, 12) < tolerance::REFERENCE_F64);
}

#[test]
fn max_pool_matches_direct_loops() {
    assert!(support::max_pool_deviation(CASES, 13) < tolerance::REFERENCE_F64);
}

#[test]
fn avg_pools_match_direct_loops() {
    assert!(support::avg_pool_deviation(CASES, 14) < tolerance::REFERENCE_F64);
}

#[test]
fn batch_norm_matches_direct_statistics() {
    assert!(support::batch_norm_deviation(CASES, 15) < tolerance::REFERENCE_F64);
}

#[test]
fn layer_norm_and_tcn_match_direct_statistics() {
    assert!(support::layer_norm_deviation(CASES, 16) < tolerance::REFERENCE_F64);
    assert!(support::tcn_deviation(CASES, 17) < tolerance::REFERENCE_F64);
}

#[test]
fn within_group_tcn_standardizes_each_group() {
    let mut rng = Rng8::seed_from_u64(17);
    let dims = [2, 3, 4, 5];
    let (tcn, mut st) = build(0, |bl| Tcn::new(bl, "tcn", 4, TcnMode::WithinGroup));
    let x = uniform(&mut rng, &dims);
    let y = run(&mut st, NormMode::Train, &x, &|cx, v| tcn.forward(cx, v));
    let want: Vec<f64> = x.data().chunks(20).flat_map(|g| zscore(g, 1.0, 0.0, NORM_EPS)).collect();
    assert!(support::max_dev(y.data(), &want) < tolerance::REFERENCE_F64);
}

#[test]
fn group_convs_match_explicit_grouping() {
    assert!(support::group_conv_deviation(CASES, 18) < tolerance::REFERENCE_F64);
    assert!(support::group_pair_conv_deviation(CASES, 19) < tolerance::REFERENCE_F64);
}

#[test]
fn group_symmetries_hold() {
    assert!(support::group_conv_permutation_deviation(CASES, 22) < 1e-9);
    assert!(support::group_pair_rotation_deviation(CASES, 23) < 1e-9);
    let d = support::tcn_affine_deviation(CASES, 24);
    assert!(d < 1e-5, "{d}");
}


// ---- gradients ------------------------------------------------------------------

#[test]
fn layer_gradients_match_finite_differences() {
    let mut rng = Rng8::seed_from_u64(21);
    let tol = tolerance::GRAD_CHECK_F64;

    let (conv, mut st) = build(1, |b| Conv2d::new(b, "c", ConvParams::new(2, 3, 3, 2, 1)));
    let x = uniform(&mut rng, &[2, 2, 5, 5]);
    assert!(max_grad_error(&mut st, &x, 1, &|cx, v| conv.forward(cx, v)) < tol);

    let (conv, mut st) = build(2, |b| Conv1d::new(b, "c", ConvParams::new(3, 2, 4, 2, 1).without_bias()));
    let x = uniform(&mut rng, &[2, 3, 9]);
    assert!(max_grad_error(&mut st, &x, 2, &|cx, v| conv.forward(cx, v)) < tol);

    let (lin, mut st) = build(3, |b| Linear::new(b, "l", 4, 3));
    let x = uniform(&mut rng, &[2, 5, 4]);
    assert!(max_grad_error(&mut st, &x, 3, &|cx, v| lin.forward(cx, v)) < tol);

    let (bn, mut st) = build(4, |b| BatchNorm::new(b, "bn", 3));
    let x = uniform(&mut rng, &[4, 3, 2]);
    assert!(max_grad_error(&mut st, &x, 4, &|cx, v| bn.forward(cx, v)) < tol);

    let (ln, mut st) = build(5, |b| LayerNorm::new(b, "ln", 6));
    let x = uniform(&mut rng, &[3, 6]);
    assert!(max_grad_error(&mut st, &x, 5, &|cx, v| ln.forward(cx, v)) < tol);

    for mode in [TcnMode::AcrossGroups, TcnMode::WithinGroup] {
        let (tcn, mut st) = build(6, |b| Tcn::new(b, "t", 3, mode));
        let x = uniform(&mut rng, &[2, 4, 3, 2]);
        assert!(max_grad_error(&mut st, &x, 6, &|cx, v| tcn.forward(cx, v)) < tol, "{mode:?}");
    }

    let (gc, mut st) = build(7, |b| GroupConv::new(b, "gc", ConvParams::new(2, 3, 3, 1, 1), 3, Some(TcnMode::AcrossGroups)));
    let x = uniform(&mut rng, &[2, 6, 5]);
    assert!(max_grad_error(&mut st, &x, 7, &|cx, v| gc.forward(cx, v)) < tol);

    let (gp, mut st) = build(8, |b| GroupPairConv::new(b, "gp", ConvParams::new(4, 3, 3, 1, 1), 3, Some(TcnMode::AcrossGroups)));
    let x = uniform(&mut rng, &[2, 6, 5]);
    assert!(max_grad_error(&mut st, &x, 8, &|cx, v| gp.forward(cx, v)) < tol);
}

// ---- structure -------------------------------------------------------------------

#[test]
fn documented_shape_traces() {
    let mut tape = Tape::<f64>::new();
    let x = tape.constant(Tensor::zeros(vec![1, 9, 825]));
    let a = tape.avg_pool1d(x, 10, 8, 1).unwrap();
    assert_eq!(tape.shape(a), &[1, 9, 103]);
    let b = tape.avg_pool1d(a, 6, 4, 1).unwrap();
    assert_eq!(tape.shape(b), &[1, 9, 25]);
    let c = tape.adaptive_avg_pool1d(b, 16).unwrap();
    assert_eq!(tape.shape(c), &[1, 9, 16]);

    let img = tape.constant(Tensor::zeros(vec![1, 1, 80, 80]));
    let m = tape.max_pool2d(img, 3, 2, 1).unwrap();
    assert_eq!(tape.shape(m), &[1, 1, 40, 40]);
    let w = tape.constant(Tensor::zeros(vec![32, 1, 7, 7]));
    let y = tape.conv2d(img, w, None, (2, 2), (3, 3)).unwrap();
    assert_eq!(tape.shape(y), &[1, 32, 40, 40]);
}

#[test]
fn group_conv_rejects_indivisible_channels() {
    let (gc, mut st) = build(0, |b| GroupConv::new(b, "gc", ConvParams::new(2, 2, 1, 1, 0), 3, None));
    let mut tape = Tape::new();
    let x = tape.constant(Tensor::zeros(vec![1, 7, 4]));
    let mut cx = Ctx {
        tape: &mut tape,
        params: &st.params,
        stats: &mut st.stats,
        mode: NormMode::Train,
    };
    assert!(gc.forward(&mut cx, x).is_err());
}

#[test]
fn single_pair_has_no_across_group_normalization() {
    let (gp, _) = build(0, |b| GroupPairConv::new(b, "gp", ConvParams::new(4, 2, 1, 1, 0), 2, Some(TcnMode::AcrossGroups)));
    assert!(gp.tcn.is_none());
    let (gp, _) = build(0, |b| GroupPairConv::new(b, "gp", ConvParams::new(4, 2, 1, 1, 0), 2, Some(TcnMode::WithinGroup)));
    assert!(gp.tcn.is_some());
    assert_eq!(pair_channel_indices(4, 2), vec![0, 1, 2, 3]);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn group_conv_is_invariant_to_group_order(seed in 0u64..1000, groups in 2usize..6, tcn in any::<bool>()) {
        let mut rng = Rng8::seed_from_u64(seed);
        let width = 2;
        let x = uniform(&mut rng, &[2, groups * width, 6]);
        let mut order: Vec<usize> = (0..groups).collect();
        order.rotate_left(1);
        order.swap(0, groups - 1);
        let (gc, mut st) = build(seed, |b| GroupConv::new(b, "gc", ConvParams::new(width, 3, 3, 1, 1), groups, tcn.then_some(TcnMode::AcrossGroups)));
        let y1 = run(&mut st, NormMode::Train, &x, &|cx, v| gc.forward(cx, v));
        let y2 = run(&mut st, NormMode::Train, &permute_groups(&x, width, &order), &|cx, v| gc.forward(cx, v));
        prop_assert!(y1.max_abs_diff(&y2).unwrap() < 1e-9);
    }

    #[test]
    fn group_pair_conv_is_invariant_to_cyclic_rotation(seed in 0u64..1000, groups in 3usize..6, shift in 1usize..5, tcn in any::<bool>()) {
        let mut rng = Rng8::seed_from_u64(seed);
        let width = 2;
        let x = uniform(&mut rng, &[2, groups * width, 6]);
        let order: Vec<usize> = (0..groups).map(|g| (g + shift) % groups).collect();
        let cp = ConvParams::new(2 * width, 3, 3, 1, 1);
        let (gp, mut st) = build(seed, |b| GroupPairConv::new(b, "gp", cp, groups, tcn.then_some(TcnMode::AcrossGroups)));
        let y1 = run(&mut st, NormMode::Train, &x, &|cx, v| gp.forward(cx, v));
        let y2 = run(&mut st, NormMode::Train, &permute_groups(&x, width, &order), &|cx, v| gp.forward(cx, v));
        prop_assert!(y1.max_abs_diff(&y2).unwrap() < 1e-9);
    }

    #[test]
    fn tcn_output_has_zero_mean_unit_variance_across_groups(seed in 0u64..1000, g in 2usize..6) {
        let mut rng = Rng8::seed_from_u64(seed);
        let dims = [2, g, 3, 4];
        let x = uniform(&mut rng, &dims);
        let (tcn, mut st) = build(seed, |b| Tcn::new(b, "t", 3, TcnMode::AcrossGroups));
        let y = run(&mut st, NormMode::Train, &x, &|cx, v| tcn.forward(cx, v));
        for bi in 0..2 {
            for f in 0..12 {
                let moments = |t: &Tensor<f64>| {
                    let vals: Vec<f64> = (0..g).map(|gi| t.data()[(bi * g + gi) * 12 + f]).collect();
                    let mean = vals.iter().sum::<f64>() / g as f64;
                    (mean, vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / g as f64)
                };
                let (mean, var) = moments(&y);
                let (_, raw) = moments(&x);
                prop_assert!(mean.abs() < 1e-9);
                prop_assert!((var - raw / (raw + NORM_EPS)).abs() < 1e-9);
            }
        }
    }
}
