//! Deterministic fan-out over independent repeats.
//!
//! Jobs are striped across scoped threads and results are written back by
//! job index, so the output order never depends on scheduling. Each repeat
//! derives its own seed, so results are identical at any thread count.

pub fn auto_threads() -> usize {
    std::thread::available_parallelism()
        .map(|n| n.get())
        .unwrap_or(1)
}

pub fn parallel_map<T, F>(jobs: usize, threads: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync,
{
    let threads = threads.max(1).min(jobs.max(1));
    if threads <= 1 {
        return (0..jobs).map(f).collect();
    }
    std::thread::scope(|scope| {
        let f = &f;
        let handles: Vec<_> = (0..threads)
            .map(|t| {
                scope.spawn(move || {
                    let mut chunk = Vec::new();
                    let mut i = t;
                    while i < jobs {
                        chunk.push((i, f(i)));
                        i += threads;
                    }
                    chunk
                })
            })
            .collect();
        let mut slots: Vec<Option<T>> = (0..jobs).map(|_| None).collect();
        for handle in handles {
            for (i, value) in handle.join().expect("worker panicked") {
                slots[i] = Some(value);
            }
        }
        slots
            .into_iter()
            .map(|s| s.expect("every job filled"))
            .collect()
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn preserves_job_order() {
        let out = parallel_map(100, 4, |i| i * i);
        for (i, v) in out.iter().enumerate() {
            assert_eq!(*v, i * i);
        }
    }

    #[test]
    fn single_thread_fallback() {
        assert_eq!(parallel_map(3, 1, |i| i), vec![0, 1, 2]);
        assert_eq!(parallel_map(0, 4, |i| i), Vec::<usize>::new());
    }
}
