pub mod backend;
pub mod bundled;
pub mod canonical;
pub mod capture;
pub mod expr;
mod fsutil;
pub mod kerneldef;
pub mod rng;
pub mod space;
pub mod tuner;
pub mod wisdom;
pub mod dispatch;
pub mod report;
