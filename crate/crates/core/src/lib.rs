pub mod autodiff;
pub mod nets;
pub mod phantom;
pub mod sigproc;
pub mod training;
