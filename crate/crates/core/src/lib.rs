// Input checks are written `!(x > 0.0)` so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod contact;
pub mod error;
pub mod hybrid;
pub mod ik;
pub mod io;
pub mod metrics;
pub mod muscle;
pub mod pcs;
pub mod qp;
pub mod rigid;
pub mod se3;
pub mod synthetic;

pub use error::{Error, Result};
pub use hybrid::{BodyPoint, GeneralizedState, HybridModel};
pub use se3::{Pose, Twist};
