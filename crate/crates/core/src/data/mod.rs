//! Synthetic generation, claim files and checkpoints.

pub mod checkpoint;
pub mod claims;
pub mod synth;

pub use checkpoint::{decode_checkpoint, encode_checkpoint, load_checkpoint, load_checkpoint_as, save_checkpoint};
pub use claims::{DatasetManifest, load_claims, save_claims, LoadedClaims};
pub use synth::{generate_synthetic, generate_with_latents, Latents, SynthConfig};
