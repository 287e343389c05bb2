use rayon::prelude::*;

/// Worker-pool size for registration fan-out. Results never depend on it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Jobs(usize);

impl Jobs {
    pub fn new(n: usize) -> Self {
        Jobs(n.max(1))
    }

    pub fn serial() -> Self {
        Jobs(1)
    }

    /// One worker per available core.
    pub fn available() -> Self {
        Jobs(std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1))
    }

    pub fn get(&self) -> usize {
        self.0
    }
}

impl Default for Jobs {
    fn default() -> Self {
        Jobs::available()
    }
}

/// Maps `f` over `items`, keeping input order.
pub(crate) fn map_ordered<I, T, F>(jobs: Jobs, items: &[I], f: F) -> Vec<T>
where
    I: Sync,
    T: Send,
    F: Fn(&I) -> T + Sync + Send,
{
    if jobs.get() == 1 || items.len() < 2 {
        return items.iter().map(f).collect();
    }
    match rayon::ThreadPoolBuilder::new().num_threads(jobs.get()).build() {
        Ok(pool) => pool.install(|| items.par_iter().map(&f).collect()),
        Err(e) => {
            log::warn!("could not build a {}-thread pool ({e}); running serially", jobs.get());
            items.iter().map(f).collect()
        }
    }
}
