//! Minimal reverse-mode automatic differentiation over dense NCHW tensors.
//!
//! Computation is recorded on a [`Graph`] (a tape). Leaves are either plain
//! inputs, differentiable leaves, or named parameters drawn from a
//! [`ParamSet`]. After [`Graph::backward`] the tape is released; gradients for
//! parameters can be folded back into the set with [`ParamSet::accumulate`]
//! and applied with [`sgd_step`].
//!
//! Everything is generic over [`Element`], so the same graph runs in `f32`
//! (the working precision) and `f64` (used for tight gradient checks).

pub mod check;
mod graph;
pub(crate) mod kernels;
mod optim;
pub(crate) mod par;
mod tensor;

pub use graph::{conv2d_forward, conv2d_transpose_forward, Gradients, Graph, Var};
pub use kernels::{bilinear_resize_plane, nearest_resize_plane};
pub use optim::{sgd_step, SgdConfig};
pub use tensor::{ParamSet, Tensor};

use std::fmt::{Debug, Display};

use thiserror::Error;

/// Floating point scalar the graph can run in.
pub trait Element:
    num_traits::Float + Default + Debug + Display + Send + Sync + std::iter::Sum + 'static
{
    fn lit(v: f64) -> Self;
    fn as_f64(self) -> f64;

    /// `c = a * b + beta * c` for strided row/column-major views, `alpha = 1`.
    #[allow(clippy::too_many_arguments)]
    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        a: &[Self],
        a_strides: (usize, usize),
        b: &[Self],
        b_strides: (usize, usize),
        beta: Self,
        c: &mut [Self],
        c_strides: (usize, usize),
    );
}

fn check_extent(len: usize, rows: usize, cols: usize, (rs, cs): (usize, usize)) {
    if rows > 0 && cols > 0 {
        assert!((rows - 1) * rs + (cols - 1) * cs < len, "gemm operand out of bounds");
    }
}

macro_rules! impl_element {
    ($t:ty, $gemm:path) => {
        impl Element for $t {
            fn lit(v: f64) -> Self {
                v as $t
            }
            fn as_f64(self) -> f64 {
                self as f64
            }
            fn gemm(
                m: usize,
                k: usize,
                n: usize,
                a: &[Self],
                a_strides: (usize, usize),
                b: &[Self],
                b_strides: (usize, usize),
                beta: Self,
                c: &mut [Self],
                c_strides: (usize, usize),
            ) {
                if m == 0 || n == 0 {
                    return;
                }
                check_extent(a.len(), m, k, a_strides);
                check_extent(b.len(), k, n, b_strides);
                check_extent(c.len(), m, n, c_strides);
                // SAFETY: every index the kernel touches was bounds-checked above.
                unsafe {
                    $gemm(
                        m,
                        k,
                        n,
                        1.0,
                        a.as_ptr(),
                        a_strides.0 as isize,
                        a_strides.1 as isize,
                        b.as_ptr(),
                        b_strides.0 as isize,
                        b_strides.1 as isize,
                        beta,
                        c.as_mut_ptr(),
                        c_strides.0 as isize,
                        c_strides.1 as isize,
                    );
                }
            }
        }
    };
}

impl_element!(f32, matrixmultiply::sgemm);
impl_element!(f64, matrixmultiply::dgemm);

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GradError {
    #[error("shape mismatch in {op}: {lhs_name} {lhs:?} vs {rhs_name} {rhs:?}")]
    Shape {
        op: &'static str,
        lhs_name: &'static str,
        lhs: Vec<usize>,
        rhs_name: &'static str,
        rhs: Vec<usize>,
    },
    #[error("invalid argument to {op}: {msg}")]
    Validation { op: &'static str, msg: String },
    #[error("contract violated: {0}")]
    Contract(String),
    #[error("invalid state: {0}")]
    State(String),
}

impl GradError {
    pub(crate) fn shape(
        op: &'static str,
        lhs_name: &'static str,
        lhs: &[usize],
        rhs_name: &'static str,
        rhs: &[usize],
    ) -> Self {
        GradError::Shape {
            op,
            lhs_name,
            lhs: lhs.to_vec(),
            rhs_name,
            rhs: rhs.to_vec(),
        }
    }
}

pub type Result<T> = std::result::Result<T, GradError>;
