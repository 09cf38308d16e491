//! Data-parallel helpers and the random-stream splitting rule.
//!
//! With the `parallel` feature (default) the helpers dispatch to rayon; without it they
//! run the same closures in order. Task results are always collected in task order, so
//! outputs never depend on the number of threads.
//!
//! # Stream splitting
//!
//! Every stochastic computation is keyed by a root seed. Task `i` of a computation draws
//! from [`task_rng`]`(seed, i)`: a ChaCha8 generator seeded with `seed_from_u64(seed)`
//! and switched to stream `i`. Streams of one seed never overlap, and a task's draws are
//! reproducible from `(seed, i)` alone.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Generator type used for all simulation.
pub type SimRng = ChaCha8Rng;

/// Independent generator for task `task` under root seed `seed`.
pub fn task_rng(seed: u64, task: u64) -> SimRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(task);
    rng
}

/// Derives a child root seed, used when one computation launches several
/// independently seeded sub-computations (for example one per sweep point).
pub fn child_seed(seed: u64, index: u64) -> u64 {
    // splitmix64 finalizer over the pair
    let mut z = seed ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Maps `f` over `0..n`, returning results in index order.
pub fn map_range<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        (0..n).into_par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        (0..n).map(f).collect()
    }
}

/// Maps `f` over a slice, returning results in slice order.
pub fn map_slice<I, T, F>(items: &[I], f: F) -> Vec<T>
where
    I: Sync,
    T: Send,
    F: Fn(&I) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        items.par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        items.iter().map(f).collect()
    }
}

/// Splits `total` work items into tasks of at most `chunk` items.
/// Returns `(start, len)` per task; the split depends only on `total` and `chunk`.
pub fn chunks(total: u64, chunk: u64) -> Vec<(u64, u64)> {
    assert!(chunk > 0);
    let mut out = Vec::with_capacity(total.div_ceil(chunk) as usize);
    let mut start = 0;
    while start < total {
        let len = chunk.min(total - start);
        out.push((start, len));
        start += len;
    }
    out
}
