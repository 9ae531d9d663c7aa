use std::time::{Duration, Instant, SystemTime, UNIX_EPOCH};

/// Current UNIX time in whole seconds.
pub fn unix_now() -> i64 {
    unix_now_ms().div_euclid(1000)
}

pub fn unix_now_ms() -> i64 {
    match SystemTime::now().duration_since(UNIX_EPOCH) {
        Ok(d) => d.as_millis() as i64,
        Err(e) => -(e.duration().as_millis() as i64),
    }
}

/// Maps a UNIX-millisecond wall-clock instant onto the monotonic clock.
pub fn instant_at_unix_ms(unix_ms: i64) -> Instant {
    let now_ms = unix_now_ms();
    let now = Instant::now();
    if unix_ms >= now_ms {
        now + Duration::from_millis((unix_ms - now_ms) as u64)
    } else {
        now.checked_sub(Duration::from_millis((now_ms - unix_ms) as u64)).unwrap_or(now)
    }
}
