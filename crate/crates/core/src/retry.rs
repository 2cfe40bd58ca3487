//! Bounded retry with exponential backoff, shared by the HTTP adapters and
//! the completion gateway.

use std::time::Duration;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RetryPolicy {
    /// Retries after the first attempt.
    pub max_retries: u32,
    pub base_delay: Duration,
    pub max_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_retries: 3,
            base_delay: Duration::from_millis(500),
            max_delay: Duration::from_secs(20),
        }
    }
}

impl RetryPolicy {
    pub fn no_delay(max_retries: u32) -> Self {
        RetryPolicy {
            max_retries,
            base_delay: Duration::ZERO,
            max_delay: Duration::ZERO,
        }
    }

    /// Delay before retry number `retry` (1-based).
    pub fn delay(&self, retry: u32) -> Duration {
        let factor = 1u32
            .checked_shl(retry.saturating_sub(1))
            .unwrap_or(u32::MAX);
        self.base_delay.saturating_mul(factor).min(self.max_delay)
    }
}

/// Outcome of a retried call: the value plus how many retries it took.
#[derive(Debug)]
pub struct Retried<T> {
    pub value: T,
    pub retries: u32,
}

/// Runs `op` until it succeeds, returns a non-retriable error, or the retry
/// budget is spent. On exhaustion the last error is returned together with the
/// number of attempts made.
pub fn with_retries<T, E>(
    policy: &RetryPolicy,
    is_retriable: impl Fn(&E) -> bool,
    mut op: impl FnMut() -> Result<T, E>,
) -> Result<Retried<T>, (E, u32)> {
    let mut retries = 0;
    loop {
        match op() {
            Ok(value) => return Ok(Retried { value, retries }),
            Err(err) => {
                if !is_retriable(&err) || retries >= policy.max_retries {
                    return Err((err, retries + 1));
                }
                retries += 1;
                let delay = policy.delay(retries);
                tracing::debug!(retry = retries, ?delay, "retrying backend call");
                if !delay.is_zero() {
                    std::thread::sleep(delay);
                }
            }
        }
    }
}
