//! Process-level setup for training and evaluation runs.

use crate::error::{Error, Result};

/// Environment variable naming the worker thread count.
pub const THREADS_ENV: &str = "DSTSA_THREADS";

/// Largest mmap threshold glibc accepts on 64-bit targets.
#[cfg(all(target_os = "linux", target_env = "gnu"))]
const MMAP_THRESHOLD_MAX: libc::c_int = 32 << 20;

/// Keep freed tensor buffers in the heap instead of handing them back to the OS.
///
/// Each step rebuilds the tape and asks for the same large buffers again.
/// With glibc defaults they are unmapped on free and page-faulted back in,
/// which costs about a third of a training step. No-op elsewhere.
pub fn retain_freed_memory() {
    #[cfg(all(target_os = "linux", target_env = "gnu"))]
    // SAFETY: mallopt only adjusts allocator tunables; both values are in range.
    unsafe {
        libc::mallopt(libc::M_MMAP_THRESHOLD, MMAP_THRESHOLD_MAX);
        libc::mallopt(libc::M_TRIM_THRESHOLD, libc::c_int::MAX);
    }
}

/// Thread count from the environment, if set.
pub fn threads_from_env() -> Result<Option<usize>> {
    match std::env::var(THREADS_ENV) {
        Ok(s) => match s.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(Some(n)),
            _ => Err(Error::Config(format!("{THREADS_ENV} must be a positive integer, got {s:?}"))),
        },
        Err(_) => Ok(None),
    }
}

/// Sizes the global rayon pool. Later calls, or a pool built elsewhere first, are ignored.
pub fn init_threads(threads: Option<usize>) {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = threads {
        builder = builder.num_threads(n);
    }
    let _ = builder.build_global();
}
