pub mod boundprop;
pub mod certify;
pub mod cli;
pub mod interval;
pub mod linalg;
pub mod nets;
pub mod problem;
pub mod systems;
pub mod tracking;
pub mod train;
