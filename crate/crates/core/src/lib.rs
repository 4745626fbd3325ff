pub mod client;
pub mod codec;
pub mod crypto;
pub mod directory;
pub mod evidence;
pub mod harness;
pub mod model;
pub mod receiver;
pub mod sender;
pub mod server;
pub mod storage;
pub mod testkit;
