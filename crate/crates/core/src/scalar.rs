//! Scalar abstraction so that one closed-form expression of `F(x, y)` can be
//! evaluated on plain floats or on [`Jet`]s.

use std::fmt::Debug;
use std::ops::{Add, Div, Mul, Neg, Sub};

use crate::jet::Jet;

pub trait Scalar:
    Clone
    + Debug
    + Send
    + Sync
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + for<'a> Add<&'a Self, Output = Self>
    + for<'a> Sub<&'a Self, Output = Self>
    + for<'a> Mul<&'a Self, Output = Self>
    + for<'a> Div<&'a Self, Output = Self>
    + Add<f64, Output = Self>
    + Sub<f64, Output = Self>
    + Mul<f64, Output = Self>
    + Div<f64, Output = Self>
{
    fn value(&self) -> f64;
    /// A constant living in the same space as `self`.
    fn constant_like(&self, v: f64) -> Self;
    fn sqrt(&self) -> Self;
    fn exp(&self) -> Self;
    fn ln(&self) -> Self;
    fn sin(&self) -> Self;
    fn cos(&self) -> Self;
    fn powf(&self, p: f64) -> Self;
    fn recip(&self) -> Self;

    fn square(&self) -> Self {
        self.clone() * self
    }
}

impl Scalar for f64 {
    fn value(&self) -> f64 {
        *self
    }
    fn constant_like(&self, v: f64) -> f64 {
        v
    }
    fn sqrt(&self) -> f64 {
        f64::sqrt(*self)
    }
    fn exp(&self) -> f64 {
        f64::exp(*self)
    }
    fn ln(&self) -> f64 {
        f64::ln(*self)
    }
    fn sin(&self) -> f64 {
        f64::sin(*self)
    }
    fn cos(&self) -> f64 {
        f64::cos(*self)
    }
    fn powf(&self, p: f64) -> f64 {
        f64::powf(*self, p)
    }
    fn recip(&self) -> f64 {
        1.0 / *self
    }
}

impl Scalar for Jet {
    fn value(&self) -> f64 {
        Jet::value(self)
    }
    fn constant_like(&self, v: f64) -> Jet {
        Jet::constant_like(self, v)
    }
    fn sqrt(&self) -> Jet {
        Jet::sqrt(self)
    }
    fn exp(&self) -> Jet {
        Jet::exp(self)
    }
    fn ln(&self) -> Jet {
        Jet::ln(self)
    }
    fn sin(&self) -> Jet {
        Jet::sin(self)
    }
    fn cos(&self) -> Jet {
        Jet::cos(self)
    }
    fn powf(&self, p: f64) -> Jet {
        Jet::powf(self, p)
    }
    fn recip(&self) -> Jet {
        Jet::recip(self)
    }
}

/// Euclidean dot product `Σ a_i b_i`.
pub fn dot<S: Scalar>(a: &[S], b: &[S]) -> S {
    let mut acc = a[0].clone() * &b[0];
    for i in 1..a.len() {
        acc = acc + &(a[i].clone() * &b[i]);
    }
    acc
}
