#![allow(dead_code)]

pub mod grad;
pub mod oracles;
