//! Session service and command-line plumbing around the reward-search loop.

pub mod http;
pub mod runs;
pub mod service;

pub use service::{
    export_report, CreateRequest, PendingEntry, PendingStage, PendingView, SelectionRequest, SessionManifest, SessionView,
    Studio, StudioError,
};
