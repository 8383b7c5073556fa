//! Wall-clock measurement: warmups, then the median of timed repetitions.

use std::time::Instant;

/// Runs `f` `warmup` times untimed, then `reps` times timed, and returns the
/// median in nanoseconds together with the last result. `reps` is raised to 1.
pub fn median_ns<T>(warmup: usize, reps: usize, mut f: impl FnMut() -> T) -> (u64, T) {
    for _ in 0..warmup {
        std::hint::black_box(f());
    }
    let reps = reps.max(1);
    let mut times = Vec::with_capacity(reps);
    let mut last = None;
    for _ in 0..reps {
        let start = Instant::now();
        let out = f();
        times.push(start.elapsed().as_nanos() as u64);
        last = Some(out);
    }
    (median(&mut times), last.expect("at least one repetition"))
}

pub fn median(values: &mut [u64]) -> u64 {
    values.sort_unstable();
    let n = values.len();
    match n {
        0 => 0,
        _ if n % 2 == 1 => values[n / 2],
        _ => (values[n / 2 - 1] + values[n / 2]) / 2,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn medians() {
        assert_eq!(median(&mut [5, 1, 3]), 3);
        assert_eq!(median(&mut [4, 1, 3, 2]), 2);
        assert_eq!(median(&mut []), 0);
        let mut calls = 0;
        let (_, last) = median_ns(2, 5, || {
            calls += 1;
            calls
        });
        assert_eq!((calls, last), (7, 7));
    }
}
