//! Element-wise activation functions.

/// Activation applied after a dense layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    /// `a(x) = x`.
    Identity,
    /// `a(x) = max(x, 0)`. The derivative at 0 is taken to be 0.
    Relu,
    /// `a(x) = x + tanh(x)`.
    ///
    /// Smooth, strictly increasing (derivative in (1, 2]), and a bijection on
    /// the reals, so a stack of these layers with positive weights is a
    /// strictly increasing scalar map. Used where the outcome function must
    /// be invertible without computing a numerical inverse.
    SmoothInvertible,
}

impl Activation {
    /// Value at pre-activation `x`.
    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Identity => x,
            Activation::Relu => {
                if x > 0.0 {
                    x
                } else {
                    0.0
                }
            }
            Activation::SmoothInvertible => x + x.tanh(),
        }
    }

    /// Derivative at pre-activation `x`.
    #[inline]
    pub fn derivative(self, x: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::SmoothInvertible => {
                let t = x.tanh();
                2.0 - t * t
            }
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Identity => "identity",
            Activation::Relu => "relu",
            Activation::SmoothInvertible => "smooth_invertible",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "identity" => Some(Activation::Identity),
            "relu" => Some(Activation::Relu),
            "smooth_invertible" => Some(Activation::SmoothInvertible),
            _ => None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn smooth_invertible_is_strictly_increasing() {
        let a = Activation::SmoothInvertible;
        let mut prev = a.apply(-10.0);
        let mut x = -10.0 + 1e-2;
        while x <= 10.0 {
            let v = a.apply(x);
            assert!(v > prev, "not increasing at {x}");
            prev = v;
            x += 1e-2;
        }
    }

    #[test]
    fn derivatives_match_finite_differences() {
        let h = 1e-6;
        for act in [
            Activation::Identity,
            Activation::Relu,
            Activation::SmoothInvertible,
        ] {
            for &x in &[-2.0, -0.37, 0.61, 1.5, 3.0] {
                let num = (act.apply(x + h) - act.apply(x - h)) / (2.0 * h);
                assert!(
                    (act.derivative(x) - num).abs() < 1e-6,
                    "{:?} at {x}: {} vs {}",
                    act,
                    act.derivative(x),
                    num
                );
            }
        }
    }
}
