#![allow(dead_code)]

pub mod atoms;
pub mod compose;
pub mod corpus;
pub mod equivariance;
pub mod grid;
pub mod instances;
