//! Fixed scalar activations.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ActivationKind {
    Identity,
    Relu,
    Tanh,
    Sigmoid,
}

impl ActivationKind {
    pub const ALL: [ActivationKind; 4] = [Self::Identity, Self::Relu, Self::Tanh, Self::Sigmoid];

    #[inline]
    pub fn apply<T: Scalar>(self, x: T) -> T {
        match self {
            Self::Identity => x,
            Self::Relu => {
                if x > T::zero() {
                    x
                } else {
                    T::zero()
                }
            }
            Self::Tanh => x.tanh(),
            Self::Sigmoid => sigmoid(x),
        }
    }

    /// Exact derivative. ReLU's derivative at 0 is taken to be 0.
    #[inline]
    pub fn derivative<T: Scalar>(self, x: T) -> T {
        match self {
            Self::Identity => T::one(),
            Self::Relu => {
                if x > T::zero() {
                    T::one()
                } else {
                    T::zero()
                }
            }
            Self::Tanh => {
                let t = x.tanh();
                T::one() - t * t
            }
            Self::Sigmoid => {
                let s = sigmoid(x);
                s * (T::one() - s)
            }
        }
    }

    /// Value and derivative in one evaluation.
    #[inline]
    pub fn apply_with_derivative<T: Scalar>(self, x: T) -> (T, T) {
        match self {
            Self::Tanh => {
                let t = x.tanh();
                (t, T::one() - t * t)
            }
            Self::Sigmoid => {
                let s = sigmoid(x);
                (s, s * (T::one() - s))
            }
            _ => (self.apply(x), self.derivative(x)),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Identity => "identity",
            Self::Relu => "relu",
            Self::Tanh => "tanh",
            Self::Sigmoid => "sigmoid",
        }
    }
}

// Split on sign so exp never overflows.
#[inline]
fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

impl fmt::Display for ActivationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ActivationKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "identity" => Ok(Self::Identity),
            "relu" => Ok(Self::Relu),
            "tanh" => Ok(Self::Tanh),
            "sigmoid" => Ok(Self::Sigmoid),
            other => Err(Error::input(format!("unknown activation `{other}`"))),
        }
    }
}
