//! Thread-local live-allocation gauge for tensor payloads.
//!
//! Every [`Tensor`](super::Tensor) registers its element count on construction
//! and deregisters on drop, so the gauge tracks how many tensors (and how many
//! f64 scalars) are live on the current thread at any instant. The trajectory
//! gradient engine uses marks to measure its intra-stage high-water mark.

use std::cell::Cell;

thread_local! {
    static LIVE_TENSORS: Cell<usize> = const { Cell::new(0) };
    static LIVE_SCALARS: Cell<usize> = const { Cell::new(0) };
    static PEAK_TENSORS: Cell<usize> = const { Cell::new(0) };
    static PEAK_SCALARS: Cell<usize> = const { Cell::new(0) };
}

pub(crate) fn on_alloc(scalars: usize) {
    LIVE_TENSORS.with(|c| c.set(c.get() + 1));
    LIVE_SCALARS.with(|c| c.set(c.get() + scalars));
    PEAK_TENSORS.with(|p| p.set(p.get().max(LIVE_TENSORS.with(Cell::get))));
    PEAK_SCALARS.with(|p| p.set(p.get().max(LIVE_SCALARS.with(Cell::get))));
}

pub(crate) fn on_free(scalars: usize) {
    LIVE_TENSORS.with(|c| c.set(c.get().saturating_sub(1)));
    LIVE_SCALARS.with(|c| c.set(c.get().saturating_sub(scalars)));
}

/// A reference point for peak measurements.
#[derive(Debug, Clone, Copy)]
pub struct MemMark {
    tensors: usize,
    scalars: usize,
}

/// Resets the peak to the current live counts and returns them as a mark.
pub fn mark() -> MemMark {
    let tensors = LIVE_TENSORS.with(Cell::get);
    let scalars = LIVE_SCALARS.with(Cell::get);
    PEAK_TENSORS.with(|p| p.set(tensors));
    PEAK_SCALARS.with(|p| p.set(scalars));
    MemMark { tensors, scalars }
}

/// Peak allocation above the given mark since [`mark`] was called:
/// `(tensors, scalars)`.
pub fn peak_since(m: MemMark) -> (usize, usize) {
    let pt = PEAK_TENSORS.with(Cell::get).saturating_sub(m.tensors);
    let ps = PEAK_SCALARS.with(Cell::get).saturating_sub(m.scalars);
    (pt, ps)
}

/// Current live counts on this thread: `(tensors, scalars)`.
pub fn live() -> (usize, usize) {
    (LIVE_TENSORS.with(Cell::get), LIVE_SCALARS.with(Cell::get))
}
