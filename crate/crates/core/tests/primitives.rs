//! Every tape primitive against central differences at random points.

use p3hf::gradcheck::grad_check;
use p3hf::tape::{Graph, Var};
use p3hf::{Result, Tensor};
use proptest::prelude::*;

const TOL: f64 = 1e-4;
const EPS: f64 = 1e-6;

fn tensor(rows: usize, cols: usize, lo: f64, hi: f64) -> impl Strategy<Value = Tensor> {
    prop::collection::vec(lo..hi, rows * cols).prop_map(move |d| Tensor::matrix(rows, cols, d))
}

/// Values bounded away from zero, for kinks and divisions.
fn off_zero(rows: usize, cols: usize) -> impl Strategy<Value = Tensor> {
    prop::collection::vec((0.1f64..2.0, any::<bool>()), rows * cols)
        .prop_map(move |d| Tensor::matrix(rows, cols, d.into_iter().map(|(v, s)| if s { v } else { -v }).collect()))
}

/// Reduces a non-scalar output to a scalar with fixed random weights so
/// that every output entry contributes a distinct amount.
fn weigh(g: &mut Graph, y: Var, w: &Tensor) -> Result<Var> {
    let shape = g.shape(y).to_vec();
    let n: usize = shape.iter().product();
    let w = Tensor::new(shape, w.data()[..n].to_vec())?;
    let w = g.constant(w)?;
    let p = g.mul(y, w)?;
    g.sum(p)
}

fn weights() -> impl Strategy<Value = Tensor> {
    tensor(1, 64, -2.0, 2.0)
}

fn check(point: &Tensor, w: &Tensor, op: impl Fn(&mut Graph, Var) -> Result<Var> + Sync) -> f64 {
    grad_check(
        |g, x| {
            let y = op(g, x)?;
            weigh(g, y, w)
        },
        point,
        EPS,
    )
    .unwrap()
}

macro_rules! within {
    ($e:expr) => {{
        let err = $e;
        prop_assert!(err < TOL, "relative error {err:e}");
    }};
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn matmul_both_sides(a in tensor(3, 4, -1.0, 1.0), b in tensor(4, 2, -1.0, 1.0), w in weights()) {
        let bb = b.clone();
        within!(check(&a, &w, |g, x| { let c = g.constant(bb.clone())?; g.matmul(x, c) }));
        let aa = a.clone();
        within!(check(&b, &w, |g, x| { let c = g.constant(aa.clone())?; g.matmul(c, x) }));
    }

    #[test]
    fn elementwise_binary(a in tensor(2, 3, -2.0, 2.0), b in tensor(2, 3, -2.0, 2.0), w in weights()) {
        for op in 0..3 {
            let bb = b.clone();
            let err = check(&a, &w, move |g, x| {
                let c = g.constant(bb.clone())?;
                match op {
                    0 => g.add(x, c),
                    1 => g.sub(c, x),
                    _ => g.mul(x, c),
                }
            });
            prop_assert!(err < TOL, "op {op}: {err}");
        }
    }

    #[test]
    fn row_broadcasts(x in tensor(3, 4, -2.0, 2.0), v in tensor(1, 4, -2.0, 2.0), w in weights()) {
        let vv = v.clone();
        within!(check(&x, &w, move |g, x| { let c = g.constant(vv.clone())?; g.mul_row(x, c) }));
        let xx = x.clone();
        within!(check(&v, &w, move |g, v| { let c = g.constant(xx.clone())?; g.add_row(c, v) }));
        let xx = x.clone();
        within!(check(&v, &w, move |g, v| { let c = g.constant(xx.clone())?; g.mul_row(c, v) }));
    }

    #[test]
    fn unary_smooth(x in tensor(2, 4, -3.0, 3.0), w in weights(), f in -3.0f64..3.0) {
        within!(check(&x, &w, |g, x| g.sigmoid(x)));
        within!(check(&x, &w, |g, x| g.tanh(x)));
        within!(check(&x, &w, |g, x| g.exp(x)));
        within!(check(&x, &w, |g, x| g.neg(x)));
        within!(check(&x, &w, move |g, x| g.scale(x, f)));
    }

    #[test]
    fn relu_away_from_kink(x in off_zero(3, 3), w in weights()) {
        within!(check(&x, &w, |g, x| g.relu(x)));
    }

    #[test]
    fn softmax_rows(x in tensor(3, 4, -3.0, 3.0), w in weights()) {
        within!(check(&x, &w, |g, x| g.softmax(x)));
        within!(check(&x, &w, |g, x| g.log_softmax(x)));
    }

    #[test]
    fn shape_ops(x in tensor(4, 5, -2.0, 2.0), w in weights()) {
        within!(check(&x, &w, |g, x| g.transpose(x)));
        within!(check(&x, &w, |g, x| g.slice_cols(x, 1, 4)));
        within!(check(&x, &w, |g, x| g.slice_rows(x, 2, 4)));
        within!(check(&x, &w, |g, x| g.mean_axis(x, 0)));
        within!(check(&x, &w, |g, x| g.mean_axis(x, 1)));
        within!(check(&x, &w, |g, x| { let y = g.slice_cols(x, 0, 2)?; g.concat_cols(&[x, y]) }));
        within!(check(&x, &w, |g, x| { let y = g.slice_rows(x, 1, 3)?; g.concat_rows(&[y, x]) }));
    }

    #[test]
    fn reductions(x in tensor(4, 4, -2.0, 2.0), w in weights()) {
        within!(check(&x, &w, |g, x| g.sum(x)));
        within!(check(&x, &w, |g, x| { let y = g.mul(x, x)?; g.trace(y) }));
        within!(check(&x, &w, |g, x| g.sq_dists(x)));
    }

    #[test]
    fn affine_layer(x in tensor(3, 4, -1.0, 1.0), wt in tensor(4, 2, -1.0, 1.0), b in tensor(1, 2, -1.0, 1.0), w in weights()) {
        let (ww, bb) = (wt.clone(), b.clone());
        within!(check(&x, &w, move |g, x| {
            let (wv, bv) = (g.constant(ww.clone())?, g.constant(bb.clone())?);
            g.affine(x, wv, bv)
        }));
        let (xx, bb) = (x.clone(), b.clone());
        within!(check(&wt, &w, move |g, wv| {
            let (xv, bv) = (g.constant(xx.clone())?, g.constant(bb.clone())?);
            g.affine(xv, wv, bv)
        }));
        let (xx, ww) = (x.clone(), wt.clone());
        within!(check(&b, &w, move |g, bv| {
            let (xv, wv) = (g.constant(xx.clone())?, g.constant(ww.clone())?);
            g.affine(xv, wv, bv)
        }));
    }

    /// Backward is linear in the loss: grad(a·f + b·h) = a·grad f + b·grad h.
    #[test]
    fn backward_is_linear(x in tensor(2, 3, -1.0, 1.0), a in -2.0f64..2.0, b in -2.0f64..2.0) {
        let grad_of = |ca: f64, cb: f64| -> Vec<f64> {
            let mut g = Graph::new();
            let v = g.param(x.clone()).unwrap();
            let s = g.sigmoid(v).unwrap();
            let f = g.sum(s).unwrap();
            let t = g.mul(v, v).unwrap();
            let h = g.sum(t).unwrap();
            let fa = g.scale(f, ca).unwrap();
            let hb = g.scale(h, cb).unwrap();
            let l = g.add(fa, hb).unwrap();
            g.backward(l).unwrap();
            g.grad(v).unwrap().data().to_vec()
        };
        let (gf, gh, gl) = (grad_of(1.0, 0.0), grad_of(0.0, 1.0), grad_of(a, b));
        for i in 0..gl.len() {
            prop_assert!((gl[i] - (a * gf[i] + b * gh[i])).abs() < 1e-12);
        }
    }
}
