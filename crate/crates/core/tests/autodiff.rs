//! Gradient correctness for every tape primitive against central finite
//! differences, plus the documented forward-op examples.

use tokenfuse_core::numkernel::fdcheck::{central_diff_grad, max_rel_err};
use tokenfuse_core::numkernel::nn;
use tokenfuse_core::numkernel::params::ParamSet;
use tokenfuse_core::numkernel::rng::Rng;
use tokenfuse_core::numkernel::tape::Tape;
use tokenfuse_core::numkernel::tensor::Tensor;

const FD_H: f64 = 1e-6;
const FD_TOL: f64 = 1e-4;

fn rand_vec(n: usize, rng: &mut Rng) -> Vec<f64> {
    (0..n).map(|_| rng.uniform_in(-2.0, 2.0)).collect()
}

/// Checks d(loss)/d(param) against central differences for a scalar-valued
/// forward closure. The closure must treat `data` as the parameter values.
fn check_grad<F>(shape: &[usize], data: &[f64], forward: F, label: &str)
where
    F: Fn(&mut Tape, &Tensor) -> Tensor,
{
    let mut params = ParamSet::new();
    params.register("p", Tensor::new(shape.to_vec(), data.to_vec()).unwrap());

    let mut tape = Tape::new();
    let loss = forward(&mut tape, params.get("p"));
    assert!(loss.is_scalar(), "{label}: forward must produce a scalar");
    let grads = tape.backward(&loss).unwrap();
    let analytic = grads.for_param(params.get("p"));

    let numeric = central_diff_grad(data, FD_H, |probe| {
        let t = Tensor::new(shape.to_vec(), probe.to_vec()).unwrap();
        let mut tape = Tape::inference();
        forward(&mut tape, &t).item()
    });
    let err = max_rel_err(analytic.data(), &numeric);
    assert!(err <= FD_TOL, "{label}: max rel err {err:.3e} exceeds {FD_TOL:.0e}");
}

/// Fixed pseudo-random weights so losses are scalar but direction-sensitive.
fn probe_weights(n: usize) -> Tensor {
    Tensor::from_vec((0..n).map(|i| ((i * 37 + 11) % 17) as f64 / 17.0 - 0.45).collect())
}

fn weighted_sum(tape: &mut Tape, t: &Tensor) -> Tensor {
    let w = Tensor::new(t.shape().to_vec(), probe_weights(t.numel()).into_data()).unwrap();
    let prod = tape.mul(t, &w).unwrap();
    tape.sum_all(&prod).unwrap()
}

#[test]
fn grad_elementwise_and_activations() {
    let mut rng = Rng::seed_from(11);
    for trial in 0..20 {
        let x = rand_vec(12, &mut rng);
        let y = rand_vec(12, &mut rng);
        let yt = Tensor::new(vec![3, 4], y.clone()).unwrap();
        check_grad(&[3, 4], &x, |t, p| {
            let s = t.add(p, &yt).unwrap();
            let m = t.mul(&s, p).unwrap();
            let d = t.sub(&m, &yt).unwrap();
            let sc = t.scale(&d, 0.7).unwrap();
            let sh = t.add_scalar(&sc, 0.3).unwrap();
            weighted_sum(t, &sh)
        }, &format!("elementwise[{trial}]"));
        check_grad(&[12], &x, |t, p| {
            let a = t.silu(p).unwrap();
            let b = t.sigmoid(&a).unwrap();
            let c = t.tanh(&b).unwrap();
            weighted_sum(t, &c)
        }, &format!("smooth activations[{trial}]"));
        check_grad(&[12], &x, |t, p| {
            let a = t.relu(p).unwrap();
            let b = t.abs(&a).unwrap();
            weighted_sum(t, &b)
        }, &format!("relu/abs[{trial}]"));
    }
}

#[test]
fn grad_reductions_and_shape_ops() {
    let mut rng = Rng::seed_from(12);
    for trial in 0..20 {
        let x = rand_vec(24, &mut rng);
        check_grad(&[4, 6], &x, |t, p| t.mean_all(p).unwrap(), &format!("mean_all[{trial}]"));
        check_grad(&[4, 6], &x, |t, p| {
            let m = t.mean_rows(p).unwrap();
            weighted_sum(t, &m)
        }, &format!("mean_rows[{trial}]"));
        check_grad(&[4, 6], &x, |t, p| {
            let r = t.reshape(p, vec![2, 12]).unwrap();
            let tr = t.transpose2d(&r).unwrap();
            let s = t.slice_cols(&tr, 0, 1).unwrap();
            let s2 = t.slice_first(&tr, 2, 5).unwrap();
            let c = t.concat_first(&[&s2, &s2]).unwrap();
            let a = weighted_sum(t, &s);
            let b = weighted_sum(t, &c);
            t.add(&a, &b).unwrap()
        }, &format!("shape ops[{trial}]"));
        check_grad(&[4, 6], &x, |t, p| {
            let left = t.slice_cols(p, 0, 2).unwrap();
            let right = t.slice_cols(p, 2, 4).unwrap();
            let cat = t.concat_cols(&[&right, &left]).unwrap();
            weighted_sum(t, &cat)
        }, &format!("concat_cols[{trial}]"));
        check_grad(&[24], &x, |t, p| {
            let r = t.reshape(p, vec![4, 6]).unwrap();
            let c = t.cumsum_last(&r).unwrap();
            weighted_sum(t, &c)
        }, &format!("cumsum[{trial}]"));
    }
}

#[test]
fn grad_matmul_both_sides() {
    let mut rng = Rng::seed_from(13);
    for trial in 0..20 {
        let a = rand_vec(6, &mut rng);
        let b = rand_vec(8, &mut rng);
        let bt = Tensor::new(vec![2, 4], b.clone()).unwrap();
        check_grad(&[3, 2], &a, |t, p| {
            let m = t.matmul(p, &bt).unwrap();
            weighted_sum(t, &m)
        }, &format!("matmul lhs[{trial}]"));
        let at = Tensor::new(vec![3, 2], a.clone()).unwrap();
        check_grad(&[2, 4], &b, |t, p| {
            let m = t.matmul(&at, p).unwrap();
            weighted_sum(t, &m)
        }, &format!("matmul rhs[{trial}]"));
    }
}

#[test]
fn grad_softmax_layernorm_ce() {
    let mut rng = Rng::seed_from(14);
    for trial in 0..20 {
        let x = rand_vec(15, &mut rng);
        check_grad(&[3, 5], &x, |t, p| {
            let s = t.softmax_last(p).unwrap();
            weighted_sum(t, &s)
        }, &format!("softmax[{trial}]"));

        let gamma = rand_vec(5, &mut rng);
        let beta = rand_vec(5, &mut rng);
        let gt = Tensor::from_vec(gamma.clone());
        let bt = Tensor::from_vec(beta.clone());
        check_grad(&[3, 5], &x, |t, p| {
            let ln = t.layer_norm(p, &gt, &bt).unwrap();
            weighted_sum(t, &ln)
        }, &format!("layernorm x[{trial}]"));
        let xt = Tensor::new(vec![3, 5], x.clone()).unwrap();
        check_grad(&[5], &gamma, |t, p| {
            let ln = t.layer_norm(&xt, p, &bt).unwrap();
            weighted_sum(t, &ln)
        }, &format!("layernorm gamma[{trial}]"));
        check_grad(&[5], &beta, |t, p| {
            let ln = t.layer_norm(&xt, &gt, p).unwrap();
            weighted_sum(t, &ln)
        }, &format!("layernorm beta[{trial}]"));

        let targets = vec![(trial % 5) as u32, ((trial + 2) % 5) as u32, 4];
        let tg = targets.clone();
        check_grad(&[3, 5], &x, move |t, p| t.cross_entropy(p, &tg).unwrap(), &format!("cross entropy[{trial}]"));
    }
}

#[test]
fn grad_conv_and_upsample() {
    let mut rng = Rng::seed_from(15);
    for trial in 0..10 {
        // conv1d: x [2, 9], w [3, 2, 3], with stride/dilation/padding mix
        let x = rand_vec(18, &mut rng);
        let w = rand_vec(18, &mut rng);
        let bias = rand_vec(3, &mut rng);
        let wt = Tensor::new(vec![3, 2, 3], w.clone()).unwrap();
        let bt = Tensor::from_vec(bias.clone());
        for &(stride, dilation, pad) in &[(1usize, 1usize, 1usize), (2, 1, 1), (1, 2, 2), (2, 2, 0)] {
            let label = format!("conv1d x s{stride} d{dilation} p{pad} [{trial}]");
            check_grad(&[2, 9], &x, |t, p| {
                let c = t.conv1d(p, &wt, Some(&bt), stride, dilation, pad).unwrap();
                weighted_sum(t, &c)
            }, &label);
        }
        let xt = Tensor::new(vec![2, 9], x.clone()).unwrap();
        check_grad(&[3, 2, 3], &w, |t, p| {
            let c = t.conv1d(&xt, p, Some(&bt), 2, 2, 1).unwrap();
            weighted_sum(t, &c)
        }, &format!("conv1d w[{trial}]"));
        check_grad(&[3], &bias, |t, p| {
            let c = t.conv1d(&xt, &wt, Some(p), 1, 1, 1).unwrap();
            weighted_sum(t, &c)
        }, &format!("conv1d b[{trial}]"));

        // conv2d: x [2, 4, 4], w [2, 2, 3, 3], same padding
        let x2 = rand_vec(32, &mut rng);
        let w2 = rand_vec(36, &mut rng);
        let w2t = Tensor::new(vec![2, 2, 3, 3], w2.clone()).unwrap();
        check_grad(&[2, 4, 4], &x2, |t, p| {
            let c = t.conv2d(p, &w2t, None, 1).unwrap();
            weighted_sum(t, &c)
        }, &format!("conv2d x[{trial}]"));
        let x2t = Tensor::new(vec![2, 4, 4], x2.clone()).unwrap();
        check_grad(&[2, 2, 3, 3], &w2, |t, p| {
            let c = t.conv2d(&x2t, p, None, 1).unwrap();
            weighted_sum(t, &c)
        }, &format!("conv2d w[{trial}]"));

        check_grad(&[2, 4, 4], &x2, |t, p| {
            let u = t.upsample_nearest_2d(p, 2).unwrap();
            weighted_sum(t, &u)
        }, &format!("upsample2d[{trial}]"));
        check_grad(&[2, 9], &x, |t, p| {
            let u = t.upsample_nearest_1d(p, 3).unwrap();
            weighted_sum(t, &u)
        }, &format!("upsample1d[{trial}]"));
        let cb = rand_vec(2, &mut rng);
        let cbt = Tensor::from_vec(cb.clone());
        check_grad(&[2, 4, 4], &x2, |t, p| {
            let c = t.add_channel_bias(p, &cbt).unwrap();
            weighted_sum(t, &c)
        }, &format!("channel bias x[{trial}]"));
        check_grad(&[2], &cb, |t, p| {
            let c = t.add_channel_bias(&x2t, p).unwrap();
            weighted_sum(t, &c)
        }, &format!("channel bias b[{trial}]"));
    }
}

#[test]
fn grad_gather_and_composites() {
    let mut rng = Rng::seed_from(16);
    for trial in 0..10 {
        let table = rand_vec(20, &mut rng);
        let idx = vec![0u32, 3, 3, 1];
        let ix = idx.clone();
        check_grad(&[5, 4], &table, move |t, p| {
            let g = t.gather_rows(p, &ix).unwrap();
            weighted_sum(t, &g)
        }, &format!("gather[{trial}]"));

        // attention: gradient through q/k/v projections
        let x = rand_vec(4 * 6, &mut rng);
        let wq = Tensor::new(vec![6, 6], rand_vec(36, &mut rng)).unwrap();
        let wk = Tensor::new(vec![6, 6], rand_vec(36, &mut rng)).unwrap();
        let wv = Tensor::new(vec![6, 6], rand_vec(36, &mut rng)).unwrap();
        let wo = Tensor::new(vec![6, 6], rand_vec(36, &mut rng)).unwrap();
        let mask = nn::causal_mask(4);
        check_grad(&[4, 6], &x, |t, p| {
            let w = nn::AttnRefs { wq: &wq, wk: &wk, wv: &wv, wo: &wo };
            let o = nn::multi_head_attention(t, p, p, &w, 2, Some(&mask), 0.0, None).unwrap();
            weighted_sum(t, &o)
        }, &format!("attention[{trial}]"));

        // swiglu ffn
        let wg = Tensor::new(vec![6, 9], rand_vec(54, &mut rng)).unwrap();
        let wu = Tensor::new(vec![6, 9], rand_vec(54, &mut rng)).unwrap();
        let wd = Tensor::new(vec![9, 6], rand_vec(54, &mut rng)).unwrap();
        check_grad(&[4, 6], &x, |t, p| {
            let o = nn::swiglu_ffn(t, p, &wg, &wu, &wd).unwrap();
            weighted_sum(t, &o)
        }, &format!("swiglu[{trial}]"));

        // straight-through: grad of sum(z_q) w.r.t. z_e is all-ones
        let z = rand_vec(8, &mut rng);
        let mut params = ParamSet::new();
        params.register("z", Tensor::from_vec(z.clone()));
        let mut tape = Tape::new();
        let q: Vec<f64> = z.iter().map(|v| v.round()).collect();
        let zq = tape.straight_through(params.get("z"), q).unwrap();
        let loss = tape.sum_all(&zq).unwrap();
        let grads = tape.backward(&loss).unwrap();
        assert_eq!(grads.for_param(params.get("z")).data(), &vec![1.0; 8][..]);
    }
}

#[test]
fn forward_op_examples() {
    let mut tape = Tape::inference();

    // matmul(I_3, A) = A
    let eye = Tensor::new(vec![3, 3], vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]).unwrap();
    let a = Tensor::new(vec![3, 3], vec![2.0, -1.0, 0.5, 3.0, 7.0, -2.0, 0.0, 1.0, 4.0]).unwrap();
    assert_eq!(tape.matmul(&eye, &a).unwrap().data(), a.data());

    // softmax([0,0,0]) = [1/3; 3]
    let z = Tensor::from_vec(vec![0.0, 0.0, 0.0]);
    let s = tape.softmax_last(&z).unwrap();
    for v in s.data() {
        assert!((v - 1.0 / 3.0).abs() < 1e-15);
    }

    // conv1d(x=[1,2,3,4], kernel=[1,0], dilation=2, no padding) = [1,2]
    let x = Tensor::new(vec![1, 4], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
    let k = Tensor::new(vec![1, 1, 2], vec![1.0, 0.0]).unwrap();
    let c = tape.conv1d(&x, &k, None, 1, 2, 0).unwrap();
    assert_eq!(c.shape(), &[1, 2]);
    assert_eq!(c.data(), &[1.0, 2.0]);

    // shape mismatch names the operation and operands
    let bad = tape.matmul(&x, &x);
    let msg = bad.unwrap_err().to_string();
    assert!(msg.contains("matmul") && msg.contains("[1, 4]"), "{msg}");
}

#[test]
fn grad_contract_examples() {
    // loss = sum(p) -> ones
    let mut params = ParamSet::new();
    params.register("p", Tensor::from_vec(vec![5.0, -3.0]));
    params.register("q", Tensor::from_vec(vec![2.0]));
    let mut tape = Tape::new();
    let loss = tape.sum_all(params.get("p")).unwrap();
    let grads = tape.backward(&loss).unwrap();
    assert_eq!(grads.for_param(params.get("p")).data(), &[1.0, 1.0]);
    // non-ancestor gets a zero gradient
    assert_eq!(grads.for_param(params.get("q")).data(), &[0.0]);

    // loss = sum(p ⊙ p) at [1,2] -> [2,4]
    let mut tape = Tape::new();
    let sq = tape.mul(params.get("p"), params.get("p")).unwrap();
    let loss = tape.sum_all(&sq).unwrap();
    let grads = tape.backward(&loss).unwrap();
    assert_eq!(grads.for_param(params.get("p")).data(), &[10.0, -6.0]);

    // non-scalar loss rejected
    let mut tape = Tape::new();
    let v = tape.scale(params.get("p"), 2.0).unwrap();
    assert!(tape.backward(&v).is_err());

    // off-tape loss rejected
    let tape2 = Tape::new();
    assert!(tape2.backward(&Tensor::scalar(1.0)).is_err());
}

#[test]
fn softmax_rows_sum_to_one_property() {
    let mut rng = Rng::seed_from(99);
    for _ in 0..50 {
        let x = Tensor::new(vec![4, 7], rand_vec(28, &mut rng)).unwrap();
        let mut tape = Tape::inference();
        let s = tape.softmax_last(&x).unwrap();
        for row in s.data().chunks(7) {
            let sum: f64 = row.iter().sum();
            assert!((sum - 1.0).abs() < 1e-12);
            assert!(row.iter().all(|&p| p >= 0.0));
        }
    }
}

#[test]
fn dropout_masks_scale_kept_entries() {
    let mut rng = Rng::seed_from(5);
    let x = Tensor::from_vec(vec![1.0; 1000]);
    let mut tape = Tape::inference();
    let d = tape.dropout(&x, 0.25, &mut rng).unwrap();
    let kept = d.data().iter().filter(|&&v| v != 0.0).count();
    assert!((kept as f64 / 1000.0 - 0.75).abs() < 0.05);
    for &v in d.data() {
        assert!(v == 0.0 || (v - 1.0 / 0.75).abs() < 1e-12);
    }
    let e = tape.dropout(&x, 0.0, &mut rng).unwrap();
    assert_eq!(e.data(), x.data());
}
