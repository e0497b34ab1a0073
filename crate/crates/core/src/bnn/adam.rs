
use crate::error::Result;
use crate::real::Real;
use crate::tensor::Tensor;

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPSILON: f64 = 1e-8;

/// Per-parameter Adam moments.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    m1: Tensor<T>,
    m2: Tensor<T>,
    t: u64,
    beta1: T,
    beta2: T,
    eps: T,
}

impl<T: Real> AdamState<T> {
    pub fn new(shape: &[usize]) -> Self {
        Self::with_hyper(shape, BETA1, BETA2, EPSILON)
    }

    pub fn with_hyper(shape: &[usize], beta1: f64, beta2: f64, eps: f64) -> Self {
        AdamState {
            m1: Tensor::zeros(shape),
            m2: Tensor::zeros(shape),
            t: 0,
            beta1: T::from_f64(beta1),
            beta2: T::from_f64(beta2),
            eps: T::from_f64(eps),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }

    pub fn first_moment(&self) -> &Tensor<T> {
        &self.m1
    }

    pub fn second_moment(&self) -> &Tensor<T> {
        &self.m2
    }

    /// Advances the moments by one step and returns the bias-corrected
    /// direction `m̂ / (√v̂ + ε)`. No learning rate is applied.
    pub fn direction(&mut self, grad: &Tensor<T>) -> Result<Tensor<T>> {
        self.m1.same_shape(grad)?;
        grad.check_finite()?;
        self.t += 1;
        let (b1, b2) = (self.beta1, self.beta2);
        let bc1 = T::from_f64(1.0 - num_traits::Float::powi(b1.as_f64(), self.t as i32));
        let bc2 = T::from_f64(1.0 - num_traits::Float::powi(b2.as_f64(), self.t as i32));
        let mut out = Tensor::zeros(grad.shape());
        let m1 = self.m1.data_mut();
        let m2 = self.m2.data_mut();
        for (((u, &g), m), v) in out.data_mut().iter_mut().zip(grad.data()).zip(m1).zip(m2) {
            *m = b1 * *m + (T::one() - b1) * g;
            *v = b2 * *v + (T::one() - b2) * g * g;
            *u = (*m / bc1) / ((*v / bc2).sqrt() + self.eps);
        }
        Ok(out)
    }
}

/// Free-function form of [`AdamState::direction`].
pub fn adam_direction<T: Real>(grad: &Tensor<T>, state: &mut AdamState<T>) -> Result<Tensor<T>> {
    state.direction(grad)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn first_step(g: f64) -> f64 {
        let mut s = AdamState::<f64>::new(&[1]);
        adam_direction(&Tensor::vector(&[g]), &mut s).unwrap().data()[0]
    }

    #[test]
    fn first_step_is_sign_of_gradient() {
        assert!((first_step(0.5) - 0.5 / (0.5 + 1e-8)).abs() <= 2e-8);
        assert!((first_step(0.5) - 1.0).abs() <= 2e-8);
        assert_eq!(first_step(0.0), 0.0);
        assert!((first_step(-3.0) + 1.0).abs() < 1e-8);
    }

    #[test]
    fn state_advances_and_second_moment_stays_non_negative() {
        let mut s = AdamState::<f32>::new(&[3]);
        for k in 0..5 {
            let g = Tensor::vector(&[k as f32 - 2.0, 1.5, -0.25]);
            s.direction(&g).unwrap();
        }
        assert_eq!(s.step_count(), 5);
        assert!(s.second_moment().data().iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let mut s = AdamState::<f32>::new(&[2]);
        assert!(s.direction(&Tensor::vector(&[1.0])).is_err());
        assert_eq!(s.step_count(), 0);
    }
}
