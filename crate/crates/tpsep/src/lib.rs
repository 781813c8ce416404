//! Multi-stage triple-path time-domain source separation.
//!
//! An end-to-end desk-scale system: deterministic synthetic scene
//! generation (speakers, room responses, noise), a chunked triple-path
//! separation network trained with a staged scale-invariant objective,
//! and inspection tooling for every stage — all on a small self-contained
//! reverse-mode autodiff kernel.

pub mod audio;
pub mod cli;
pub mod diff;
pub mod error;
pub mod model;
pub mod objective;
pub mod train;

pub use error::{Error, Result};

/// Keeps freed training-step memory in the process arena instead of
/// returning it to the OS. Each step builds and drops a several-hundred-MB
/// tape; re-faulting those pages every step dominates runtime on
/// virtualized hosts. Idempotent, glibc-only, a no-op elsewhere.
pub fn tune_allocator() {
    #[cfg(target_env = "gnu")]
    unsafe {
        libc::mallopt(libc::M_TRIM_THRESHOLD, -1);
        libc::mallopt(libc::M_MMAP_MAX, 0);
    }
}
