//! Process-level settings for the binaries.

/// Keeps freed feature maps in the heap instead of returning them to the
/// kernel, which otherwise costs a page fault per touched page on every
/// training step. No-op outside glibc.
pub fn tune_allocator() {
    #[cfg(all(target_os = "linux", target_env = "gnu"))]
    // SAFETY: mallopt only adjusts allocator tunables.
    unsafe {
        libc::mallopt(libc::M_MMAP_THRESHOLD, 32 << 20);
        libc::mallopt(libc::M_TRIM_THRESHOLD, i32::MAX);
    }
}

/// Sizes the global rayon pool from `MDN_NUM_WORKERS` when set. Returns
/// the worker count in effect.
pub fn configure_workers() -> usize {
    if let Some(n) = std::env::var("MDN_NUM_WORKERS").ok().and_then(|v| v.trim().parse::<usize>().ok()) {
        if n > 0 {
            let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
        }
    }
    rayon::current_num_threads()
}
