//! Library side of the `hr-sentinel` command: configuration loading and the
//! subcommand implementations, exposed so tests can drive them in-process.

pub mod commands;
pub mod config;

pub use config::RunConfig;

/// Environment variable capping worker threads.
pub const THREADS_ENV: &str = "HR_SENTINEL_THREADS";

/// Size the global worker pool from [`THREADS_ENV`] when it is set.
/// Returns the thread count that was applied.
pub fn configure_threads() -> anyhow::Result<Option<usize>> {
    let Ok(raw) = std::env::var(THREADS_ENV) else {
        return Ok(None);
    };
    let n: usize = raw
        .trim()
        .parse()
        .map_err(|_| anyhow::anyhow!("{THREADS_ENV} must be a positive integer, got {raw:?}"))?;
    if n == 0 {
        anyhow::bail!("{THREADS_ENV} must be >= 1");
    }
    rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    Ok(Some(n))
}
