use crate::error::{Error, Result};
use crate::tensor::{Shape, Tensor};

/// 2x2 mean pooling with stride 2.
pub fn avg_pool2(x: &Tensor) -> Result<Tensor> {
    let s = x.shape();
    if !s.height.is_multiple_of(2) || !s.width.is_multiple_of(2) || s.height == 0 || s.width == 0 {
        return Err(Error::invalid(format!(
            "avg_pool2 needs even, non-zero spatial dims, got {}x{}",
            s.height, s.width
        )));
    }
    let out_shape = s.with_spatial(s.height / 2, s.width / 2);
    Ok(Tensor::from_fn(out_shape, |b, c, y, q| {
        0.25 * (x.at(b, c, 2 * y, 2 * q)
            + x.at(b, c, 2 * y, 2 * q + 1)
            + x.at(b, c, 2 * y + 1, 2 * q)
            + x.at(b, c, 2 * y + 1, 2 * q + 1))
    }))
}

pub fn avg_pool2_backward(input_shape: Shape, grad_out: &Tensor) -> Tensor {
    Tensor::from_fn(input_shape, |b, c, y, q| 0.25 * grad_out.at(b, c, y / 2, q / 2))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn block_mean() {
        let x = Tensor::from_vec(Shape::new(1, 1, 2, 2), vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(avg_pool2(&x).unwrap().data(), &[2.5]);
    }

    #[test]
    fn constant_stays_constant() {
        let x = Tensor::full(Shape::new(2, 3, 8, 4), -0.3);
        let y = avg_pool2(&x).unwrap();
        assert_eq!(y.shape(), Shape::new(2, 3, 4, 2));
        assert!(y.data().iter().all(|&v| (v + 0.3).abs() < 1e-15));
    }

    #[test]
    fn odd_dims_rejected() {
        assert!(avg_pool2(&Tensor::zeros(Shape::new(1, 1, 3, 4))).is_err());
    }
}
