/// Token bucket in bytes. Admission reserves tokens up front, so a packet
/// that cannot be paid for yet gets a release time and later packets queue
/// behind it.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenBucket {
    rate: f64,
    burst: f64,
    tokens: f64,
    last_refill: u64,
}

impl TokenBucket {
    /// Starts full.
    pub fn new(rate_bytes_per_sec: u64, burst_bytes: u64, now_ms: u64) -> Self {
        TokenBucket {
            rate: rate_bytes_per_sec as f64,
            burst: burst_bytes as f64,
            tokens: burst_bytes as f64,
            last_refill: now_ms,
        }
    }

    pub fn tokens(&self) -> f64 {
        self.tokens
    }

    fn refill(&mut self, now_ms: u64) {
        if now_ms > self.last_refill {
            let dt = (now_ms - self.last_refill) as f64 / 1000.0;
            self.tokens = (self.tokens + self.rate * dt).min(self.burst);
            self.last_refill = now_ms;
        }
    }

    /// Charges `bytes` and returns the earliest whole millisecond at which
    /// the packet may leave. While reservations are queued the bucket's own
    /// clock runs ahead of `now_ms`, so tokens are never negative at any
    /// release instant.
    pub fn admit(&mut self, bytes: usize, now_ms: u64) -> u64 {
        self.refill(now_ms);
        self.tokens -= bytes as f64;
        if self.tokens >= 0.0 {
            return self.last_refill;
        }
        let wait_ms = (-self.tokens * 1000.0 / self.rate).ceil() as u64;
        // Whole-millisecond rounding overpays; keep only what a capped
        // bucket could have held alongside this packet.
        self.tokens += self.rate * wait_ms as f64 / 1000.0;
        self.tokens = self.tokens.min((self.burst - bytes as f64).max(0.0));
        self.last_refill += wait_ms;
        self.last_refill
    }
}
