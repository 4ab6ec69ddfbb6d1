//! File formats, the guidance wire protocol and atomic file writes.

mod atomic;
pub mod config;
pub mod features;
pub mod labels;
pub mod ply;
pub mod turntable;
pub mod wire;

pub use atomic::{read_file, write_atomic};
pub use config::{load_run_config, parse_run_config, save_run_config, serialize_run_config};
pub use features::{decode_features, encode_features, load_features, save_features};
pub use labels::{load_labels, parse_labels};
pub use ply::{decode_ply, encode_ply, load_ply, save_ply};
pub use turntable::{render_turntable, turntable_cameras, TurntableOptions};
