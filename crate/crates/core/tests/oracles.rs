use ecgprune::ops::*;
use ecgprune::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const SHAPES: usize = 200;
const TOL: f64 = 1e-12;

fn rand_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect()
}

fn naive_conv(
    x: &[f64],
    cin: usize,
    len: usize,
    w: &[f64],
    cout: usize,
    k: usize,
    b: &[f64],
    stride: usize,
) -> Vec<f64> {
    let out_len = (len - k) / stride + 1;
    let mut y = vec![0.0; cout * out_len];
    for o in 0..cout {
        for t in 0..out_len {
            let mut s = b[o];
            for c in 0..cin {
                for j in 0..k {
                    s += w[(o * cin + c) * k + j] * x[c * len + t * stride + j];
                }
            }
            y[o * out_len + t] = s;
        }
    }
    y
}

fn naive_pool(x: &[f64], ch: usize, len: usize, k: usize, stride: usize) -> Vec<f64> {
    let out_len = (len - k) / stride + 1;
    let mut y = Vec::new();
    for c in 0..ch {
        for t in 0..out_len {
            let window = &x[c * len + t * stride..c * len + t * stride + k];
            y.push(window.iter().copied().fold(f64::NEG_INFINITY, f64::max));
        }
    }
    y
}

fn naive_dense(x: &[f64], w: &[f64], b: &[f64]) -> Vec<f64> {
    let n = x.len();
    (0..b.len()).map(|i| b[i] + (0..n).map(|j| w[i * n + j] * x[j]).sum::<f64>()).collect()
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

#[test]
fn conv_matches_nested_loops() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for _ in 0..SHAPES {
        let (cin, cout) = (rng.gen_range(1..9), rng.gen_range(1..9));
        let k = rng.gen_range(1..12);
        let stride = rng.gen_range(1..5);
        let len = k + rng.gen_range(0..40);
        let (x, w, b) = (rand_vec(&mut rng, cin * len), rand_vec(&mut rng, cout * cin * k), rand_vec(&mut rng, cout));
        let got = conv1d_forward(
            &Tensor::new(vec![cin, len], x.clone()).unwrap(),
            &Tensor::new(vec![cout, cin, k], w.clone()).unwrap(),
            &Tensor::from_vec(b.clone()),
            stride,
        )
        .unwrap();
        let want = naive_conv(&x, cin, len, &w, cout, k, &b, stride);
        assert_eq!(got.shape(), [cout, (len - k) / stride + 1]);
        assert!(max_abs_diff(got.data(), &want) <= TOL, "cin {cin} cout {cout} k {k} s {stride} len {len}");
    }
}

#[test]
fn baseline_conv_shapes_match_nested_loops() {
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    for (cin, cout, k, stride, len) in [(1, 128, 50, 3, 260), (128, 32, 7, 1, 24), (32, 32, 9, 1, 9)] {
        let (x, w, b) = (rand_vec(&mut rng, cin * len), rand_vec(&mut rng, cout * cin * k), rand_vec(&mut rng, cout));
        let got = conv1d_forward(
            &Tensor::new(vec![cin, len], x.clone()).unwrap(),
            &Tensor::new(vec![cout, cin, k], w.clone()).unwrap(),
            &Tensor::from_vec(b.clone()),
            stride,
        )
        .unwrap();
        assert!(max_abs_diff(got.data(), &naive_conv(&x, cin, len, &w, cout, k, &b, stride)) <= TOL);
    }
}

#[test]
fn pool_matches_nested_loops() {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    for _ in 0..SHAPES {
        let k = rng.gen_range(1..6);
        let stride = rng.gen_range(1..5);
        let (ch, len) = (rng.gen_range(1..9), k + rng.gen_range(0..40));
        let x = rand_vec(&mut rng, ch * len);
        let got = maxpool1d_forward(&Tensor::new(vec![ch, len], x.clone()).unwrap(), k, stride).unwrap();
        assert_eq!(got.data(), naive_pool(&x, ch, len, k, stride).as_slice());
    }
}

#[test]
fn dense_matches_nested_loops() {
    let mut rng = ChaCha8Rng::seed_from_u64(24);
    for _ in 0..SHAPES {
        let (n, m) = (rng.gen_range(1..140), rng.gen_range(1..140));
        let (x, w, b) = (rand_vec(&mut rng, n), rand_vec(&mut rng, m * n), rand_vec(&mut rng, m));
        let got = dense_forward(
            &Tensor::from_vec(x.clone()),
            &Tensor::new(vec![m, n], w.clone()).unwrap(),
            &Tensor::from_vec(b.clone()),
        )
        .unwrap();
        assert!(max_abs_diff(got.data(), &naive_dense(&x, &w, &b)) <= TOL, "n {n} m {m}");
    }
}

#[test]
fn window_lengths_follow_floor_formula() {
    for len in 1..60 {
        for k in 1..=len {
            for s in 1..6 {
                assert_eq!(window_out_len(len, k, s).unwrap(), (len - k) / s + 1);
            }
        }
        assert!(window_out_len(len, len + 1, 1).is_err());
    }
}
