//! Scalar abstraction shared by every numeric type in the crate.

use nalgebra::RealField;
use num_traits::{FromPrimitive, ToPrimitive};

/// Floating-point scalar the map is generic over: `f32` or `f64`.
pub trait Real: RealField + Copy + FromPrimitive + ToPrimitive + Send + Sync + 'static {
    /// Converts an `f64` constant, saturating through `f32` where needed.
    fn lit(v: f64) -> Self {
        Self::from_f64(v).expect("f64 literal representable in scalar type")
    }

    fn to_f64_lossy(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }

    /// Absolute tolerance, widened to a small multiple of machine epsilon
    /// when the requested value is below what the type can resolve.
    fn tolerance(abs: f64) -> Self {
        let floor = 64.0 * Self::default_epsilon().to_f64_lossy();
        Self::lit(abs.max(floor))
    }
}

impl Real for f32 {}
impl Real for f64 {}
