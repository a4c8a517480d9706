pub mod env;
pub mod mcp;
pub mod paths;
pub mod process;
pub mod task;
pub mod tools;
pub mod verify;
pub mod metrics;
pub mod run;
