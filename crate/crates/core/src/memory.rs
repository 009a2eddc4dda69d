//! High-water accounting of bytes held by live tapes on the current thread.

use std::cell::Cell;

thread_local! {
    static CURRENT: Cell<usize> = const { Cell::new(0) };
    static PEAK: Cell<usize> = const { Cell::new(0) };
}

pub(crate) fn acquire(bytes: usize) {
    CURRENT.with(|c| {
        let now = c.get() + bytes;
        c.set(now);
        PEAK.with(|p| p.set(p.get().max(now)));
    });
}

pub(crate) fn release(bytes: usize) {
    CURRENT.with(|c| c.set(c.get().saturating_sub(bytes)));
}

/// Bytes currently held by tapes on this thread.
pub fn current_bytes() -> usize {
    CURRENT.with(Cell::get)
}

/// Largest value `current_bytes` has reached since the last reset.
pub fn peak_bytes() -> usize {
    PEAK.with(Cell::get)
}

pub fn reset_peak() {
    let now = current_bytes();
    PEAK.with(|p| p.set(now));
}

pub fn peak_mb() -> f64 {
    peak_bytes() as f64 / (1024.0 * 1024.0)
}
