use std::collections::VecDeque;
use std::sync::Mutex;
use std::time::Duration;

const WINDOW: Duration = Duration::from_secs(1);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Admission {
    Granted,
    Wait(Duration),
}

#[derive(Debug)]
struct State {
    tokens: f64,
    last: Duration,
    recent: VecDeque<Duration>,
}

/// Token bucket of capacity `ceil(qps)` refilled at `qps` per second, combined
/// with a sliding one-second log capped at `ceil(qps)` grants.
///
/// The bucket alone would allow a full burst plus a second's refill inside one
/// window; the log keeps every one-second window at or below `ceil(qps)`.
#[derive(Debug)]
pub struct RateLimiter {
    rate: f64,
    capacity: f64,
    window_cap: usize,
    state: Mutex<State>,
}

impl RateLimiter {
    pub fn new(qps: f64) -> Self {
        assert!(qps > 0.0 && qps.is_finite(), "qps must be positive");
        let capacity = qps.ceil();
        RateLimiter {
            rate: qps,
            capacity,
            window_cap: capacity as usize,
            state: Mutex::new(State {
                tokens: capacity,
                last: Duration::ZERO,
                recent: VecDeque::new(),
            }),
        }
    }

    pub fn admit(&self, now: Duration) -> Admission {
        let mut s = self.state.lock().unwrap();
        let elapsed = now.saturating_sub(s.last).as_secs_f64();
        s.tokens = (s.tokens + elapsed * self.rate).min(self.capacity);
        s.last = s.last.max(now);
        while s.recent.front().is_some_and(|&g| now.saturating_sub(g) >= WINDOW) {
            s.recent.pop_front();
        }

        let bucket_ok = s.tokens >= 1.0 - 1e-9;
        let window_ok = s.recent.len() < self.window_cap;
        if bucket_ok && window_ok {
            s.tokens = (s.tokens - 1.0).max(0.0);
            s.recent.push_back(now);
            return Admission::Granted;
        }

        let mut wait = Duration::ZERO;
        if !bucket_ok {
            wait = wait.max(Duration::from_secs_f64((1.0 - s.tokens) / self.rate));
        }
        if !window_ok {
            let oldest = *s.recent.front().expect("window full implies entries");
            wait = wait.max((oldest + WINDOW).saturating_sub(now));
        }
        Admission::Wait(wait.max(Duration::from_micros(1)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn burst_is_capped_at_capacity() {
        let l = RateLimiter::new(2.0);
        let got: Vec<Admission> = (0..5).map(|_| l.admit(Duration::ZERO)).collect();
        assert_eq!(got.iter().filter(|a| **a == Admission::Granted).count(), 2);
        for a in &got[2..] {
            assert!(matches!(a, Admission::Wait(d) if *d > Duration::ZERO));
        }
    }

    #[test]
    fn spaced_requests_all_granted() {
        let l = RateLimiter::new(2.0);
        for i in 0..10 {
            assert_eq!(l.admit(Duration::from_secs(i)), Admission::Granted);
        }
    }

    #[test]
    fn fractional_rate_long_run() {
        let l = RateLimiter::new(2.5);
        let mut t = Duration::ZERO;
        let mut grants = 0;
        let step = Duration::from_millis(10);
        while t < Duration::from_secs(100) {
            if l.admit(t) == Admission::Granted {
                grants += 1;
            }
            t += step;
        }
        // 3 burst + 2.5/s.
        assert!(grants <= 3 + 250, "{grants}");
        assert!(grants >= 245, "{grants}");
    }
}
