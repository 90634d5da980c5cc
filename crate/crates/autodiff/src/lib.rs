//! Reverse-mode automatic differentiation over dense `f64` matrices.
//!
//! Every value is a 2-D matrix. Backward rules are written in terms of the
//! same differentiable operations as the forward pass, so a gradient computed
//! with `create_graph = true` is itself a [`Var`] that can be differentiated
//! again. This is what a Wasserstein gradient penalty needs: the penalty is a
//! function of `∇ₓ f(x)`, and training the critic requires the gradient of the
//! penalty with respect to the critic's parameters.
//!
//! ```
//! use autodiff::{grad, Var};
//! use ndarray::array;
//!
//! let x = Var::param(array![[3.0]]);
//! let y = x.mul(&x).mul(&x); // x³
//! let dy = &grad(&y, &[&x], true)[0]; // 3x²
//! let d2y = &grad(dy, &[&x], false)[0]; // 6x
//! assert_eq!(dy.value()[[0, 0]], 27.0);
//! assert_eq!(d2y.value()[[0, 0]], 18.0);
//! ```

mod graph;
mod ops;

pub mod check;

pub use graph::{grad, Var};
