//! Language model predictive control for teaching toy robots through chat.
//!
//! A session model writes reward code in response to human feedback; the
//! code is compiled into cost segments and executed by a sampling-based
//! receding-horizon controller on a small 2D disc world. The decoder treats
//! the model itself as a predictive controller over whole chat sessions.

pub mod bootstrap;
pub mod config;
pub mod controller;
pub mod data;
pub mod decoder;
pub mod dsl;
pub mod experiment;
pub mod metrics;
pub mod model;
pub mod rag;
pub mod session;
pub mod task;
pub mod teacher;
pub mod util;
pub mod world;

pub use session::{ChatSession, ChatTurn, Outcome, Rating, TokenSeq};
