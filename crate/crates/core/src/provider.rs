//! Pieces shared by the embedding, pair-scoring and LLM provider boundaries.

use std::thread;
use std::time::Duration;

#[derive(Debug, Clone, thiserror::Error)]
pub enum ProviderError {
    #[error("transport: {0}")]
    Transport(String),
    #[error("HTTP status {status}: {body}")]
    Status { status: u16, body: String },
    #[error("malformed response: {0}")]
    Protocol(String),
    #[error("{0}")]
    Other(String),
}

/// Bounded retry with exponential backoff.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub base_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_attempts: 3,
            base_delay: Duration::from_millis(500),
        }
    }
}

impl RetryPolicy {
    /// Retries without sleeping between attempts.
    pub fn immediate(max_attempts: u32) -> Self {
        Self {
            max_attempts,
            base_delay: Duration::ZERO,
        }
    }

    /// Runs `op` until it succeeds or the attempts run out. The closure gets
    /// the 1-based attempt number. On failure returns the last error and the
    /// number of attempts made.
    pub fn run<T>(
        &self,
        mut op: impl FnMut(u32) -> Result<T, ProviderError>,
    ) -> Result<T, (ProviderError, u32)> {
        let attempts = self.max_attempts.max(1);
        let mut attempt = 1;
        loop {
            match op(attempt) {
                Ok(v) => return Ok(v),
                Err(e) if attempt >= attempts => return Err((e, attempt)),
                Err(e) => {
                    tracing::warn!(attempt, error = %e, "provider call failed, retrying");
                    let delay = self.base_delay.saturating_mul(1 << (attempt - 1).min(16));
                    if !delay.is_zero() {
                        thread::sleep(delay);
                    }
                    attempt += 1;
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stops_after_max_attempts() {
        let mut calls = 0;
        let res: Result<(), _> = RetryPolicy::immediate(3).run(|_| {
            calls += 1;
            Err(ProviderError::Transport("down".into()))
        });
        assert_eq!(calls, 3);
        assert_eq!(res.unwrap_err().1, 3);
    }

    #[test]
    fn succeeds_on_later_attempt() {
        let res = RetryPolicy::immediate(3).run(|a| {
            if a < 2 {
                Err(ProviderError::Transport("flaky".into()))
            } else {
                Ok(a)
            }
        });
        assert_eq!(res.unwrap(), 2);
    }
}
