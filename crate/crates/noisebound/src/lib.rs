pub mod boundary;
pub mod engine;
pub mod dynamics;
