pub mod eval;
pub mod infer;
pub mod synth;
pub mod train;
