#![allow(dead_code)]

pub mod fixed;
