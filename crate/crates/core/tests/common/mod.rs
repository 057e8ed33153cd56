#![allow(dead_code)]

pub mod gen;
pub mod model;
pub mod oracles;
