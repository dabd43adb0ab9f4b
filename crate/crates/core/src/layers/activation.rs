use crate::error::{Error, Result};
use crate::tensor::Tensor4;

pub fn relu_forward(x: &Tensor4) -> Tensor4 {
    x.map(|v| v.max(0.0))
}

/// Passes `dy` where `x > 0`; the subgradient at exactly 0 is 0.
pub fn relu_backward(x: &Tensor4, dy: &Tensor4) -> Result<Tensor4> {
    if x.shape() != dy.shape() {
        return Err(Error::Shape(format!(
            "relu gradient {} does not match input {}",
            dy.shape(),
            x.shape()
        )));
    }
    let mut dx = dy.clone();
    for (g, &v) in dx.data_mut().iter_mut().zip(x.data()) {
        if v <= 0.0 {
            *g = 0.0;
        }
    }
    Ok(dx)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Shape4;

    fn vec3(v: &[f64]) -> Tensor4 {
        Tensor4::from_vec(Shape4::new(1, 1, 1, v.len()).unwrap(), v.to_vec()).unwrap()
    }

    #[test]
    fn clamps_negatives() {
        assert_eq!(relu_forward(&vec3(&[-1.0, 0.0, 2.0])).data(), &[0.0, 0.0, 2.0]);
        let pos = vec3(&[0.5, 1.0, 7.0]);
        assert_eq!(relu_forward(&pos), pos);
    }

    #[test]
    fn backward_masks_nonpositive_inputs() {
        let dx = relu_backward(&vec3(&[-1.0, 2.0]), &vec3(&[5.0, 7.0])).unwrap();
        assert_eq!(dx.data(), &[0.0, 7.0]);
        let dx = relu_backward(&vec3(&[0.0]), &vec3(&[3.0])).unwrap();
        assert_eq!(dx.data(), &[0.0]);
        assert!(relu_backward(&vec3(&[0.0]), &vec3(&[1.0, 2.0])).is_err());
    }
}
