pub mod append;
pub mod bench;
pub mod gen;
pub mod index;
pub mod query;
pub mod train;
pub mod verify;
