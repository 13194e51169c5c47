#![allow(dead_code)]

pub mod dtw_oracle;
pub mod gradients;
pub mod oracles;
