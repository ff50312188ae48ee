use rand::Rng;

use crate::error::{Error, Result};
use crate::ops::norm::Mode;
use crate::rng::RngStream;
use crate::tensor::{Element, Tensor};

/// Inverted dropout. Returns the output and, in train mode with a non-zero
/// rate, the per-element scale mask (`0` or `1 / (1 - rate)`) for backward.
pub fn dropout<T: Element>(
    input: &Tensor<T>,
    rate: f64,
    mode: Mode,
    stream: RngStream,
) -> Result<(Tensor<T>, Option<Tensor<T>>)> {
    validate_rate(rate)?;
    if mode == Mode::Infer || rate == 0.0 {
        return Ok((input.clone(), None));
    }
    let keep = T::from_f64_lossy(1.0 / (1.0 - rate));
    let mut rng = stream.rng();
    let mask = Tensor::from_fn(input.shape(), |_| {
        if rng.random::<f64>() < rate {
            T::zero()
        } else {
            keep
        }
    });
    let out = apply_mask(input, &mask)?;
    Ok((out, Some(mask)))
}

pub fn apply_mask<T: Element>(input: &Tensor<T>, mask: &Tensor<T>) -> Result<Tensor<T>> {
    input.same_shape(mask, "dropout")?;
    let data = input.data().iter().zip(mask.data()).map(|(&x, &m)| x * m).collect();
    Tensor::new(input.shape().to_vec(), data)
}

pub fn validate_rate(rate: f64) -> Result<()> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::Config(format!("dropout rate {rate} is outside [0, 1)")));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_cases() {
        let x = Tensor::<f32>::from_fn(&[4, 5], |i| i as f32);
        let s = RngStream::new(1, 0);
        assert_eq!(dropout(&x, 0.0, Mode::Train, s).unwrap().0, x);
        assert_eq!(dropout(&x, 0.7, Mode::Infer, s).unwrap().0, x);
    }

    #[test]
    fn rejects_bad_rates() {
        let x = Tensor::<f32>::zeros(&[2]);
        let s = RngStream::new(1, 0);
        assert!(dropout(&x, 1.0, Mode::Train, s).is_err());
        assert!(dropout(&x, -0.1, Mode::Infer, s).is_err());
    }

    #[test]
    fn mean_is_preserved() {
        let x = Tensor::<f64>::ones(&[1_000_000]);
        let (y, _) = dropout(&x, 0.5, Mode::Train, RngStream::new(42, 9)).unwrap();
        let mean = y.sum() / 1e6;
        assert!((mean - 1.0).abs() < 0.01, "mean {mean}");
    }

    #[test]
    fn same_stream_same_mask() {
        let x = Tensor::<f32>::ones(&[64]);
        let a = dropout(&x, 0.3, Mode::Train, RngStream::new(5, 2)).unwrap().0;
        let b = dropout(&x, 0.3, Mode::Train, RngStream::new(5, 2)).unwrap().0;
        let c = dropout(&x, 0.3, Mode::Train, RngStream::new(5, 3)).unwrap().0;
        assert_eq!(a, b);
        assert_ne!(a, c);
    }
}
