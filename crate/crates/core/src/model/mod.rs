//! Global-context vision transformer: forward and backward passes.

pub mod attention;
pub mod checkpoint;
pub mod embed;
pub mod head;
pub mod network;
pub mod ops;
pub mod params;
pub mod stage;

pub use attention::{gc_attention, gc_attention_backward, global_context, AttentionParams};
pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointMeta};
pub use embed::{PatchEmbed, TokenSequence};
pub use head::{argmax, classify, ClassifierHead};
pub use network::GcVit;
pub use params::Parameters;
