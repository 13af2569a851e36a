//! Indexed binary min-heap keyed by event time.
//!
//! Every slot (voxel) owns exactly one entry forever; `update` moves it
//! when its key changes. A position map gives O(log n) decrease/increase
//! key, which is what keeps the event loop at O(log K) per event.
//! Keys may be `+inf` (idle voxel) but never NaN.

#[derive(Clone, Debug)]
pub struct IndexedMinHeap {
    // heap[rank] = slot id; pos[slot] = rank
    heap: Vec<usize>,
    pos: Vec<usize>,
    key: Vec<f64>,
}

impl IndexedMinHeap {
    /// Build a heap over slots `0..keys.len()` with the given initial keys.
    pub fn new(keys: Vec<f64>) -> Self {
        let n = keys.len();
        let mut h = IndexedMinHeap {
            heap: (0..n).collect(),
            pos: (0..n).collect(),
            key: keys,
        };
        for i in (0..n / 2).rev() {
            h.sift_down(i);
        }
        h
    }

    pub fn len(&self) -> usize {
        self.heap.len()
    }

    pub fn is_empty(&self) -> bool {
        self.heap.is_empty()
    }

    /// Slot and key of the minimum entry.
    pub fn peek(&self) -> Option<(usize, f64)> {
        self.heap.first().map(|&s| (s, self.key[s]))
    }

    pub fn key_of(&self, slot: usize) -> f64 {
        self.key[slot]
    }

    /// Re-key one slot and restore heap order.
    pub fn update(&mut self, slot: usize, new_key: f64) {
        debug_assert!(!new_key.is_nan());
        let old = self.key[slot];
        self.key[slot] = new_key;
        let rank = self.pos[slot];
        if new_key < old {
            self.sift_up(rank);
        } else if new_key > old {
            self.sift_down(rank);
        }
    }

    fn sift_up(&mut self, mut rank: usize) {
        while rank > 0 {
            let parent = (rank - 1) / 2;
            if self.key[self.heap[rank]] < self.key[self.heap[parent]] {
                self.swap(rank, parent);
                rank = parent;
            } else {
                break;
            }
        }
    }

    fn sift_down(&mut self, mut rank: usize) {
        let n = self.heap.len();
        loop {
            let left = 2 * rank + 1;
            if left >= n {
                break;
            }
            let right = left + 1;
            let mut smallest = left;
            if right < n && self.key[self.heap[right]] < self.key[self.heap[left]] {
                smallest = right;
            }
            if self.key[self.heap[smallest]] < self.key[self.heap[rank]] {
                self.swap(rank, smallest);
                rank = smallest;
            } else {
                break;
            }
        }
    }

    #[inline]
    fn swap(&mut self, a: usize, b: usize) {
        self.heap.swap(a, b);
        self.pos[self.heap[a]] = a;
        self.pos[self.heap[b]] = b;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SimRng;

    fn check_invariants(h: &IndexedMinHeap) {
        for rank in 1..h.heap.len() {
            let parent = (rank - 1) / 2;
            assert!(h.key[h.heap[parent]] <= h.key[h.heap[rank]]);
        }
        for (slot, &rank) in h.pos.iter().enumerate() {
            assert_eq!(h.heap[rank], slot);
        }
    }

    #[test]
    fn build_and_peek() {
        let h = IndexedMinHeap::new(vec![3.0, 1.0, 2.0]);
        assert_eq!(h.peek(), Some((1, 1.0)));
        check_invariants(&h);
    }

    #[test]
    fn single_slot_and_empty() {
        let h = IndexedMinHeap::new(vec![5.0]);
        assert_eq!(h.peek(), Some((0, 5.0)));
        let e = IndexedMinHeap::new(vec![]);
        assert_eq!(e.peek(), None);
        assert!(e.is_empty());
    }

    #[test]
    fn infinity_sinks_to_back() {
        let mut h = IndexedMinHeap::new(vec![1.0, 2.0, 3.0]);
        h.update(0, f64::INFINITY);
        assert_eq!(h.peek(), Some((1, 2.0)));
        h.update(1, f64::INFINITY);
        h.update(2, f64::INFINITY);
        let (_, k) = h.peek().unwrap();
        assert!(k.is_infinite());
        check_invariants(&h);
    }

    #[test]
    fn randomized_updates_match_linear_scan() {
        let mut rng = SimRng::new(2024);
        let n = 64;
        let keys: Vec<f64> = (0..n).map(|_| rng.next_f64() * 100.0).collect();
        let mut h = IndexedMinHeap::new(keys.clone());
        let mut reference = keys;
        for _ in 0..10_000 {
            let slot = rng.below(n as u64) as usize;
            let k = if rng.below(10) == 0 {
                f64::INFINITY
            } else {
                rng.next_f64() * 100.0
            };
            h.update(slot, k);
            reference[slot] = k;
            let min_slot = (0..n)
                .min_by(|&a, &b| reference[a].partial_cmp(&reference[b]).unwrap())
                .unwrap();
            let (s, k) = h.peek().unwrap();
            assert_eq!(k, reference[min_slot]);
            assert_eq!(reference[s], reference[min_slot]);
        }
        check_invariants(&h);
    }
}
