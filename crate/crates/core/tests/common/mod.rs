//! Independent reference implementations shared by the integration suites.
#![allow(dead_code)]

use ageres::ops::{conv2d_forward, dense, global_avg_pool, maxpool2d, Padding};
use ageres::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Extent and leading pad along one axis, straight from the padding definitions.
pub fn axis(input: usize, k: usize, s: usize, same: bool) -> Option<(usize, usize)> {
    if same {
        let out = input.div_ceil(s);
        let total = ((out - 1) * s + k).saturating_sub(input);
        Some((out, total / 2))
    } else if input >= k {
        Some(((input - k) / s + 1, 0))
    } else {
        None
    }
}

pub struct ConvCase {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub o: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: (usize, usize),
    pub same: bool,
    pub x: Vec<f64>,
    pub k: Vec<f64>,
    pub b: Vec<f64>,
}

pub fn random_conv_case(rng: &mut ChaCha8Rng) -> ConvCase {
    loop {
        let (n, c, h, w) = (rng.random_range(1..=3), rng.random_range(1..=4), rng.random_range(1..=9), rng.random_range(1..=9));
        let (o, kh, kw) = (rng.random_range(1..=4), rng.random_range(1..=5), rng.random_range(1..=5));
        let stride = (rng.random_range(1..=3), rng.random_range(1..=3));
        let same = rng.random_bool(0.5);
        if !same && (h < kh || w < kw) {
            continue;
        }
        let mut v = |len: usize| (0..len).map(|_| rng.random_range(-1.0..1.0)).collect::<Vec<f64>>();
        let x = v(n * c * h * w);
        let k = v(o * c * kh * kw);
        let b = v(o);
        return ConvCase { n, c, h, w, o, kh, kw, stride, same, x, k, b };
    }
}

/// Direct cross-correlation with explicit zero padding.
pub fn oracle_conv(case: &ConvCase) -> (Vec<f64>, [usize; 4]) {
    let ConvCase { n, c, h, w, o, kh, kw, stride, same, .. } = *case;
    let (oh, pt) = axis(h, kh, stride.0, same).unwrap();
    let (ow, pl) = axis(w, kw, stride.1, same).unwrap();
    let mut out = vec![0.0; n * o * oh * ow];
    for b in 0..n {
        for f in 0..o {
            for y in 0..oh {
                for x in 0..ow {
                    let mut acc = case.b[f];
                    for ch in 0..c {
                        for i in 0..kh {
                            for j in 0..kw {
                                let iy = (y * stride.0 + i) as isize - pt as isize;
                                let ix = (x * stride.1 + j) as isize - pl as isize;
                                if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                    continue;
                                }
                                let xv = case.x[((b * c + ch) * h + iy as usize) * w + ix as usize];
                                let kv = case.k[((f * c + ch) * kh + i) * kw + j];
                                acc += xv * kv;
                            }
                        }
                    }
                    out[((b * o + f) * oh + y) * ow + x] = acc;
                }
            }
        }
    }
    (out, [n, o, oh, ow])
}

pub fn run_conv(case: &ConvCase) -> Tensor<f64> {
    let x = Tensor::new(vec![case.n, case.c, case.h, case.w], case.x.clone()).unwrap();
    let k = Tensor::new(vec![case.o, case.c, case.kh, case.kw], case.k.clone()).unwrap();
    let b = Tensor::new(vec![case.o], case.b.clone()).unwrap();
    let pad = if case.same { Padding::Same } else { Padding::Valid };
    conv2d_forward(&x, &k, Some(&b), case.stride, pad).unwrap()
}

pub fn max_abs(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Largest deviation over `cases` random convolutions.
pub fn conv_oracle_error(cases: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..cases {
        let case = random_conv_case(&mut rng);
        let (want, shape) = oracle_conv(&case);
        let got = run_conv(&case);
        assert_eq!(got.shape(), shape);
        worst = worst.max(max_abs(got.data(), &want));
    }
    worst
}

pub fn oracle_maxpool(x: &[f64], [n, c, h, w]: [usize; 4], win: (usize, usize), s: usize, same: bool) -> (Vec<f64>, [usize; 4]) {
    let (oh, pt) = axis(h, win.0, s, same).unwrap();
    let (ow, pl) = axis(w, win.1, s, same).unwrap();
    let mut out = Vec::new();
    for p in 0..n * c {
        for y in 0..oh {
            for xo in 0..ow {
                let mut m = f64::NEG_INFINITY;
                for i in 0..win.0 {
                    for j in 0..win.1 {
                        let iy = (y * s + i) as isize - pt as isize;
                        let ix = (xo * s + j) as isize - pl as isize;
                        if iy >= 0 && ix >= 0 && iy < h as isize && ix < w as isize {
                            m = m.max(x[(p * h + iy as usize) * w + ix as usize]);
                        }
                    }
                }
                out.push(m);
            }
        }
    }
    (out, [n, c, oh, ow])
}

pub fn maxpool_oracle_error(cases: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    let mut done = 0;
    while done < cases {
        let dims = [rng.random_range(1..=3), rng.random_range(1..=4), rng.random_range(1..=10), rng.random_range(1..=10)];
        let win = (rng.random_range(1..=4), rng.random_range(1..=4));
        let s = rng.random_range(1..=3);
        let same = rng.random_bool(0.5);
        if !same && (dims[2] < win.0 || dims[3] < win.1) {
            continue;
        }
        let x: Vec<f64> = (0..dims.iter().product()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let (want, shape) = oracle_maxpool(&x, dims, win, s, same);
        let t = Tensor::new(dims.to_vec(), x).unwrap();
        let got = maxpool2d(&t, win, s, if same { Padding::Same } else { Padding::Valid }).unwrap();
        assert_eq!(got.output.shape(), shape);
        worst = worst.max(max_abs(got.output.data(), &want));
        done += 1;
    }
    worst
}

pub fn dense_oracle_error(cases: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..cases {
        let (n, i, o) = (rng.random_range(1..=6), rng.random_range(1..=40), rng.random_range(1..=12));
        let mut v = |len: usize| (0..len).map(|_| rng.random_range(-1.0..1.0)).collect::<Vec<f64>>();
        let (x, wt, b) = (v(n * i), v(i * o), v(o));
        let mut want = vec![0.0; n * o];
        for r in 0..n {
            for col in 0..o {
                let mut acc = b[col];
                for k in 0..i {
                    acc += x[r * i + k] * wt[k * o + col];
                }
                want[r * o + col] = acc;
            }
        }
        let got = dense(
            &Tensor::new(vec![n, i], x).unwrap(),
            &Tensor::new(vec![i, o], wt).unwrap(),
            &Tensor::new(vec![o], b).unwrap(),
        )
        .unwrap();
        assert_eq!(got.shape(), [n, o]);
        worst = worst.max(max_abs(got.data(), &want));
    }
    worst
}

pub fn gap_oracle_error(cases: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..cases {
        let dims = [rng.random_range(1..=4), rng.random_range(1..=6), rng.random_range(1..=9), rng.random_range(1..=9)];
        let x: Vec<f64> = (0..dims.iter().product()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let plane = dims[2] * dims[3];
        let want: Vec<f64> = x.chunks(plane).map(|p| p.iter().sum::<f64>() / plane as f64).collect();
        let got = global_avg_pool(&Tensor::new(dims.to_vec(), x).unwrap()).unwrap();
        assert_eq!(got.shape(), [dims[0], dims[1]]);
        worst = worst.max(max_abs(got.data(), &want));
    }
    worst
}

/// `(trainable, non_trainable)` parameters of ResNet-50, tallied layer by layer:
/// a conv with bias has `k*k*cin*cout + cout` weights, batch norm has two
/// trainable and two moving vectors per channel.
pub fn resnet50_count(input_channels: usize, output_dim: usize, batchnorm: bool, identity: [usize; 4]) -> (usize, usize) {
    let mut trainable = 0;
    let mut moving = 0;
    let conv = |k: usize, cin: usize, cout: usize, trainable: &mut usize, moving: &mut usize| {
        *trainable += k * k * cin * cout + cout;
        if batchnorm {
            *trainable += 2 * cout;
            *moving += 2 * cout;
        }
    };
    conv(7, input_channels, 64, &mut trainable, &mut moving);
    let mut cin = 64;
    let filters = [(64, 64, 256), (128, 128, 512), (256, 256, 1024), (512, 512, 2048)];
    for (stage, &(f1, f2, f3)) in filters.iter().enumerate() {
        // convolutional block: main path plus projection shortcut
        conv(1, cin, f1, &mut trainable, &mut moving);
        conv(3, f1, f2, &mut trainable, &mut moving);
        conv(1, f2, f3, &mut trainable, &mut moving);
        conv(1, cin, f3, &mut trainable, &mut moving);
        cin = f3;
        for _ in 0..identity[stage] {
            conv(1, cin, f1, &mut trainable, &mut moving);
            conv(3, f1, f2, &mut trainable, &mut moving);
            conv(1, f2, f3, &mut trainable, &mut moving);
        }
    }
    trainable += cin * output_dim + output_dim;
    (trainable, moving)
}
