pub mod bench;
pub mod net;
pub mod plan;
pub mod sim;
pub mod vm;
