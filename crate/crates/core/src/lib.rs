//! Estimator-based output-feedback synthesis for linear systems with
//! several discrete delays.

use openblas_src as _;

pub mod delayop;
pub mod poly;
pub mod quad;
pub mod sdp;
pub mod model;
pub mod gains;
pub mod synthesis;
pub mod sim;
pub mod pipeline;
pub mod reference;
