pub mod continuity;
pub mod dns;
pub mod http;
pub mod trackable;
