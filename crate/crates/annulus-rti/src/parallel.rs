use std::sync::OnceLock;

use rayon::{ThreadPool, ThreadPoolBuilder};

/// Worker pool sized by `ANNULUS_RTI_THREADS` when set, otherwise by rayon's
/// default.
pub fn pool() -> &'static ThreadPool {
    static POOL: OnceLock<ThreadPool> = OnceLock::new();
    POOL.get_or_init(|| {
        let mut b = ThreadPoolBuilder::new();
        if let Some(n) = std::env::var("ANNULUS_RTI_THREADS").ok().and_then(|v| v.trim().parse::<usize>().ok()) {
            if n > 0 {
                b = b.num_threads(n);
            }
        }
        b.build().expect("thread pool")
    })
}
