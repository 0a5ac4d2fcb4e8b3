//! Minimal scoped-thread helpers.
//!
//! Work is always partitioned into fixed contiguous spans and every reduction
//! happens on the caller's thread in index order, so numeric results do not
//! depend on the thread count.

/// Worker count from `WINO3D_THREADS`; defaults to 1 (single-threaded).
pub fn thread_count() -> usize {
    std::env::var("WINO3D_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&n| n >= 1)
        .unwrap_or(1)
}

/// Map `f` over `0..n`, returning results in index order.
pub fn parallel_map<R, F>(n: usize, threads: usize, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(usize) -> R + Sync,
{
    let threads = threads.max(1).min(n.max(1));
    if threads == 1 {
        return (0..n).map(f).collect();
    }
    let mut out: Vec<Option<R>> = (0..n).map(|_| None).collect();
    let chunk = n.div_ceil(threads);
    std::thread::scope(|scope| {
        for (t, slot) in out.chunks_mut(chunk).enumerate() {
            let f = &f;
            scope.spawn(move || {
                for (j, s) in slot.iter_mut().enumerate() {
                    *s = Some(f(t * chunk + j));
                }
            });
        }
    });
    out.into_iter().map(|r| r.unwrap()).collect()
}

/// Split `data` into `units` equal chunks of `unit_len` and hand contiguous
/// unit ranges to workers. `f(unit_index, chunk)` sees unit `unit_index`'s
/// slice. Unit contents and ordering are identical at any thread count.
pub fn parallel_units<T, F>(data: &mut [T], unit_len: usize, threads: usize, f: F)
where
    T: Send,
    F: Fn(usize, &mut [T]) + Sync,
{
    assert!(unit_len > 0 && data.len() % unit_len == 0);
    let units = data.len() / unit_len;
    let threads = threads.max(1).min(units.max(1));
    if threads == 1 {
        for (u, chunk) in data.chunks_mut(unit_len).enumerate() {
            f(u, chunk);
        }
        return;
    }
    let units_per = units.div_ceil(threads);
    std::thread::scope(|scope| {
        for (t, span) in data.chunks_mut(units_per * unit_len).enumerate() {
            let f = &f;
            scope.spawn(move || {
                for (j, chunk) in span.chunks_mut(unit_len).enumerate() {
                    f(t * units_per + j, chunk);
                }
            });
        }
    });
}

/// Like [`parallel_units`], but each worker receives its whole contiguous
/// span at once as `f(first_unit, span)`. Callers that want to block
/// adjacent units together (for cache reuse) get to choose the blocking
/// inside `f`; results stay thread-count independent as long as units are
/// written independently.
pub fn parallel_unit_spans<T, F>(data: &mut [T], unit_len: usize, threads: usize, f: F)
where
    T: Send,
    F: Fn(usize, &mut [T]) + Sync,
{
    assert!(unit_len > 0 && data.len() % unit_len == 0);
    let units = data.len() / unit_len;
    let threads = threads.max(1).min(units.max(1));
    if threads == 1 {
        f(0, data);
        return;
    }
    let units_per = units.div_ceil(threads);
    std::thread::scope(|scope| {
        for (t, span) in data.chunks_mut(units_per * unit_len).enumerate() {
            let f = &f;
            scope.spawn(move || f(t * units_per, span));
        }
    });
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn map_preserves_order_any_thread_count() {
        let expect: Vec<usize> = (0..37).map(|i| i * i).collect();
        for threads in [1, 2, 3, 8, 64] {
            assert_eq!(parallel_map(37, threads, |i| i * i), expect);
        }
    }

    #[test]
    fn units_cover_all_chunks_exactly_once() {
        for threads in [1, 2, 5] {
            let mut data = vec![0usize; 6 * 4];
            parallel_units(&mut data, 4, threads, |u, chunk| {
                for c in chunk.iter_mut() {
                    *c += u + 1;
                }
            });
            let expect: Vec<usize> = (0..6).flat_map(|u| [u + 1; 4]).collect();
            assert_eq!(data, expect);
        }
    }

    #[test]
    fn map_handles_empty() {
        let out: Vec<usize> = parallel_map(0, 4, |i| i);
        assert!(out.is_empty());
    }

    #[test]
    fn unit_spans_cover_all_units_with_correct_offsets() {
        for threads in [1, 2, 5] {
            let mut data = vec![0usize; 6 * 4];
            parallel_unit_spans(&mut data, 4, threads, |first, span| {
                for (j, chunk) in span.chunks_mut(4).enumerate() {
                    for c in chunk.iter_mut() {
                        *c += first + j + 1;
                    }
                }
            });
            let expect: Vec<usize> = (0..6).flat_map(|u| [u + 1; 4]).collect();
            assert_eq!(data, expect);
        }
    }
}
