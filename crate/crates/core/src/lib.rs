pub mod client;
pub mod crypto;
pub mod discovery;
pub mod effect;
pub mod email;
pub mod harness;
pub mod sim;
pub mod sphinx;
pub mod time;
pub mod wire;
