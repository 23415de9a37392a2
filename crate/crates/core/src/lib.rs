pub mod cohort;
pub mod dist;
pub mod diagnostics;
pub mod disease;
pub mod measurement;
pub mod sampler;
pub mod simgen;
