//! Learned bridges that carry one model's KV cache into another's.

pub mod alignment;
pub mod bridge;
pub mod io;
pub mod registry;
pub mod train;

pub use alignment::{align_layers, AlignmentMap};
pub use bridge::{
    fuse, fuse_all, identity_fuser, project_cache, FuseMode, Fuser, FuserLayer, INIT_GATE, PROJ_DEPTH,
};
pub use io::{load_fuser, save_fuser};
pub use registry::FuserRegistry;
pub use train::{sender_span, train_fuser, FuserExample};
