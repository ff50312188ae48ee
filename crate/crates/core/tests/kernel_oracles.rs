mod common;

use ageres::ops::{conv2d_backward, conv2d_forward, maxpool2d, maxpool2d_backward, Padding};
use ageres::Tensor;
use common::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const CASES: usize = 200;
const TOL: f64 = 1e-5;

#[test]
fn conv2d_matches_nested_loops() {
    let err = conv_oracle_error(CASES, 11);
    assert!(err < TOL, "max deviation {err}");
}

#[test]
fn maxpool_matches_nested_loops() {
    let err = maxpool_oracle_error(CASES, 12);
    assert!(err < TOL, "max deviation {err}");
}

#[test]
fn dense_matches_nested_loops() {
    let err = dense_oracle_error(CASES, 13);
    assert!(err < TOL, "max deviation {err}");
}

#[test]
fn global_avg_pool_matches_nested_loops() {
    let err = gap_oracle_error(CASES, 14);
    assert!(err < TOL, "max deviation {err}");
}

#[test]
fn single_precision_conv_tracks_the_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for _ in 0..50 {
        let case = random_conv_case(&mut rng);
        let (want, _) = oracle_conv(&case);
        let x = Tensor::new(vec![case.n, case.c, case.h, case.w], case.x.iter().map(|&v| v as f32).collect()).unwrap();
        let k = Tensor::new(vec![case.o, case.c, case.kh, case.kw], case.k.iter().map(|&v| v as f32).collect()).unwrap();
        let b = Tensor::new(vec![case.o], case.b.iter().map(|&v| v as f32).collect()).unwrap();
        let pad = if case.same { Padding::Same } else { Padding::Valid };
        let got = conv2d_forward(&x, &k, Some(&b), case.stride, pad).unwrap();
        let terms = (case.c * case.kh * case.kw + 1) as f64;
        for (g, w) in got.data().iter().zip(&want) {
            assert!((*g as f64 - w).abs() <= 1e-6 * terms, "{g} vs {w}");
        }
    }
}

/// Input and kernel gradients by scattering each output gradient through the
/// window it came from.
#[test]
fn conv2d_backward_matches_scatter_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    for _ in 0..60 {
        let case = random_conv_case(&mut rng);
        let (_, [n, o, oh, ow]) = oracle_conv(&case);
        let dy: Vec<f64> = (0..n * o * oh * ow).map(|_| rng.random_range(-1.0..1.0)).collect();
        let ConvCase { c, h, w, kh, kw, stride, same, .. } = case;
        let (_, pt) = axis(h, kh, stride.0, same).unwrap();
        let (_, pl) = axis(w, kw, stride.1, same).unwrap();
        let mut dx = vec![0.0; case.x.len()];
        let mut dk = vec![0.0; case.k.len()];
        let mut db = vec![0.0; o];
        for b in 0..n {
            for f in 0..o {
                for y in 0..oh {
                    for xo in 0..ow {
                        let g = dy[((b * o + f) * oh + y) * ow + xo];
                        db[f] += g;
                        for ch in 0..c {
                            for i in 0..kh {
                                for j in 0..kw {
                                    let iy = (y * stride.0 + i) as isize - pt as isize;
                                    let ix = (xo * stride.1 + j) as isize - pl as isize;
                                    if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                        continue;
                                    }
                                    let xi = ((b * c + ch) * h + iy as usize) * w + ix as usize;
                                    let ki = ((f * c + ch) * kh + i) * kw + j;
                                    dx[xi] += g * case.k[ki];
                                    dk[ki] += g * case.x[xi];
                                }
                            }
                        }
                    }
                }
            }
        }
        let xt = Tensor::new(vec![n, c, h, w], case.x.clone()).unwrap();
        let kt = Tensor::new(vec![o, c, kh, kw], case.k.clone()).unwrap();
        let dyt = Tensor::new(vec![n, o, oh, ow], dy).unwrap();
        let pad = if same { Padding::Same } else { Padding::Valid };
        let grads = conv2d_backward(&xt, &kt, &dyt, stride, pad).unwrap();
        assert!(max_abs(grads.input.data(), &dx) < 1e-10);
        assert!(max_abs(grads.kernel.data(), &dk) < 1e-10);
        assert!(max_abs(grads.bias.data(), &db) < 1e-10);
    }
}

#[test]
fn maxpool_backward_routes_to_the_winner() {
    let x = Tensor::<f64>::new(vec![1, 1, 2, 4], vec![1.0, 5.0, 2.0, 2.0, 3.0, 0.0, 7.0, 2.0]).unwrap();
    let pooled = maxpool2d(&x, (2, 2), 2, Padding::Valid).unwrap();
    assert_eq!(pooled.output.data(), &[5.0, 7.0]);
    let dy = Tensor::new(vec![1, 1, 1, 2], vec![10.0, 20.0]).unwrap();
    let dx = maxpool2d_backward(x.shape(), &pooled.argmax, &dy).unwrap();
    assert_eq!(dx.data(), &[0.0, 10.0, 0.0, 0.0, 0.0, 0.0, 20.0, 0.0]);
}
