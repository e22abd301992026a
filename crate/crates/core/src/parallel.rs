//! Worker pool shared by the bootstrap and simulation loops.
//!
//! Results never depend on the number of workers: work items carry their own
//! random streams and are collected by index.

use std::sync::OnceLock;

use rayon::{ThreadPool, ThreadPoolBuilder};

/// Environment variable overriding the worker count.
pub const WORKERS_ENV: &str = "ANCOVA_MCTP_WORKERS";

fn global_pool() -> &'static ThreadPool {
    static POOL: OnceLock<ThreadPool> = OnceLock::new();
    POOL.get_or_init(|| {
        let n = std::env::var(WORKERS_ENV).ok().and_then(|v| v.trim().parse::<usize>().ok()).unwrap_or(0);
        ThreadPoolBuilder::new().num_threads(n).build().expect("thread pool")
    })
}

/// Run `f` on the configured pool (or the current one when already inside a pool).
pub fn run<R: Send>(f: impl FnOnce() -> R + Send) -> R {
    if rayon::current_thread_index().is_some() {
        f()
    } else {
        global_pool().install(f)
    }
}

/// Run `f` on a dedicated pool with exactly `workers` threads.
pub fn with_workers<R: Send>(workers: usize, f: impl FnOnce() -> R + Send) -> R {
    ThreadPoolBuilder::new().num_threads(workers.max(1)).build().expect("thread pool").install(f)
}

/// Number of threads `run` would use.
pub fn workers() -> usize {
    if rayon::current_thread_index().is_some() {
        rayon::current_num_threads()
    } else {
        global_pool().current_num_threads()
    }
}
