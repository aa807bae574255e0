//! Floating-point scalar abstraction shared by every numeric module.

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use num_traits::{Float, FloatConst, FromPrimitive, ToPrimitive};

/// Real scalar type the field network, losses, extractor and metrics are
/// generic over. Implemented for `f32` and `f64`.
pub trait Scalar:
    Float
    + FloatConst
    + FromPrimitive
    + ToPrimitive
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Sum
    + Default
    + Debug
    + Display
    + Send
    + Sync
    + 'static
{
    /// Short name used in checkpoints and logs.
    const NAME: &'static str;

    /// Row-major `c = alpha * op(a) * op(b) + beta * c`.
    ///
    /// `a` is `m x k` after the optional transpose, `b` is `k x n` after the
    /// optional transpose, `c` is `m x n`.
    #[allow(clippy::too_many_arguments)]
    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: &[Self],
        a_trans: bool,
        b: &[Self],
        b_trans: bool,
        beta: Self,
        c: &mut [Self],
    );

    #[inline]
    fn lit(v: f64) -> Self {
        Self::from_f64(v).expect("representable literal")
    }

    #[inline]
    fn to_f64_lossy(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

// (row stride, column stride) of a row-major matrix with `cols` columns,
// optionally viewed transposed.
#[inline]
fn strides(rows_stored_cols: usize, trans: bool) -> (isize, isize) {
    if trans {
        (1, rows_stored_cols as isize)
    } else {
        (rows_stored_cols as isize, 1)
    }
}

macro_rules! impl_scalar {
    ($t:ty, $name:literal, $gemm:path) => {
        impl Scalar for $t {
            const NAME: &'static str = $name;

            fn gemm(
                m: usize,
                k: usize,
                n: usize,
                alpha: Self,
                a: &[Self],
                a_trans: bool,
                b: &[Self],
                b_trans: bool,
                beta: Self,
                c: &mut [Self],
            ) {
                assert!(a.len() >= m * k, "gemm: lhs too small");
                assert!(b.len() >= k * n, "gemm: rhs too small");
                assert!(c.len() >= m * n, "gemm: output too small");
                if m == 0 || n == 0 {
                    return;
                }
                // stored a is m x k (or k x m when transposed)
                let (rsa, csa) = strides(if a_trans { m } else { k }, a_trans);
                let (rsb, csb) = strides(if b_trans { k } else { n }, b_trans);
                // SAFETY: the asserts above bound every access made through the
                // strides for the given dimensions.
                unsafe {
                    $gemm(
                        m,
                        k,
                        n,
                        alpha,
                        a.as_ptr(),
                        rsa,
                        csa,
                        b.as_ptr(),
                        rsb,
                        csb,
                        beta,
                        c.as_mut_ptr(),
                        n as isize,
                        1,
                    );
                }
            }
        }
    };
}

impl_scalar!(f32, "f32", matrixmultiply::sgemm);
impl_scalar!(f64, "f64", matrixmultiply::dgemm);
