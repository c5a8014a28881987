//! Thread-local multiply-accumulate counter.
//!
//! Matmul and convolution kernels call [`record`]; nothing is tallied unless a
//! caller opened a counting scope with [`count`]. One MAC is one unit;
//! additions and activations are free.

use std::cell::Cell;

thread_local! {
    static COUNTER: Cell<Option<u64>> = const { Cell::new(None) };
}

/// Adds `macs` to the innermost active scope on this thread, if any.
#[inline]
pub fn record(macs: u64) {
    COUNTER.with(|c| {
        if let Some(n) = c.get() {
            c.set(Some(n + macs));
        }
    });
}

/// Runs `f` and returns its result together with the MACs it recorded.
///
/// Scopes nest: the inner total is merged into the enclosing scope on exit.
pub fn count<R>(f: impl FnOnce() -> R) -> (R, u64) {
    let outer = COUNTER.with(|c| c.replace(Some(0)));
    let out = f();
    let inner = COUNTER.with(|c| c.replace(None)).unwrap_or(0);
    COUNTER.with(|c| c.set(outer.map(|n| n + inner)));
    (out, inner)
}

pub fn is_counting() -> bool {
    COUNTER.with(|c| c.get().is_some())
}
