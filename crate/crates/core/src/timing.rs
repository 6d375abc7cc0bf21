//! Sleeping to a deadline with sub-millisecond accuracy.

use std::thread;
use std::time::{Duration, Instant};

const SPIN_MARGIN: Duration = Duration::from_micros(200);

/// Block until `deadline`. Coarse sleep first, then spin the last stretch.
pub fn sleep_until(deadline: Instant) {
    loop {
        let now = Instant::now();
        if now >= deadline {
            return;
        }
        let left = deadline - now;
        if left > SPIN_MARGIN {
            thread::sleep(left - SPIN_MARGIN);
        } else {
            std::hint::spin_loop();
            thread::yield_now();
        }
    }
}

pub fn sleep_precise(d: Duration) {
    sleep_until(Instant::now() + d);
}

pub fn ms(d: Duration) -> f64 {
    d.as_secs_f64() * 1e3
}
