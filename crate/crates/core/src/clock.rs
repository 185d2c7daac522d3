/// Monotonic time source in seconds. The core never reads a system clock
/// itself; callers with `std` supply one.
pub trait Clock {
    fn now(&self) -> f64;
}

/// Clock that always reads zero, so timings are reported as zero.
#[derive(Clone, Copy, Debug, Default)]
pub struct NullClock;

impl Clock for NullClock {
    fn now(&self) -> f64 {
        0.0
    }
}
