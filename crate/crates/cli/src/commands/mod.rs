pub mod fuse;
pub mod gen;
pub mod protoem;
pub mod serve;
pub mod simulate;
