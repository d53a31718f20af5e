use rayon::prelude::*;

use crate::error::{PipelineError, Result};

/// Bounded worker pool. Results come back in input order, so output does not
/// depend on the worker count.
pub struct Pool {
    inner: rayon::ThreadPool,
}

impl Pool {
    pub fn new(workers: Option<usize>) -> Result<Self> {
        let mut builder = rayon::ThreadPoolBuilder::new();
        if let Some(w) = workers {
            builder = builder.num_threads(w);
        }
        let inner = builder.build().map_err(|e| PipelineError::Pool(e.to_string()))?;
        Ok(Pool { inner })
    }

    pub fn workers(&self) -> usize {
        self.inner.current_num_threads()
    }

    pub fn map<T, R, F>(&self, items: &[T], f: F) -> Result<Vec<R>>
    where
        T: Sync,
        R: Send,
        F: Fn(&T) -> Result<R> + Sync + Send,
    {
        self.inner.install(|| items.par_iter().map(f).collect())
    }
}
