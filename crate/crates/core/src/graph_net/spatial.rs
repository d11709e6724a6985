//! Fixed-radius neighbor search on a uniform spatial hash.

use std::collections::HashMap;

use glam::DVec3;

/// Directed neighbor pairs: edge `k` goes from `senders[k]` to
/// `receivers[k]`. The pair set is symmetric and contains no self-pairs.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct EdgeList {
    pub senders: Vec<u32>,
    pub receivers: Vec<u32>,
}

impl EdgeList {
    pub fn len(&self) -> usize {
        self.senders.len()
    }

    pub fn is_empty(&self) -> bool {
        self.senders.is_empty()
    }
}

/// All ordered pairs `(i, j)`, `i != j`, with `|p_i - p_j| < radius`,
/// sorted by `(sender, receiver)`.
///
/// Uses a uniform hash grid with cell size equal to the radius, so only
/// the 27 surrounding cells need scanning per query point.
pub fn neighbor_pairs(positions: &[DVec3], radius: f64) -> EdgeList {
    assert!(radius > 0.0, "connectivity radius must be positive");
    let inv = 1.0 / radius;
    let r2 = radius * radius;

    let cell_of = |p: DVec3| -> (i64, i64, i64) {
        (
            (p.x * inv).floor() as i64,
            (p.y * inv).floor() as i64,
            (p.z * inv).floor() as i64,
        )
    };

    let mut cells: HashMap<(i64, i64, i64), Vec<u32>> = HashMap::new();
    for (i, &p) in positions.iter().enumerate() {
        cells.entry(cell_of(p)).or_default().push(i as u32);
    }

    let mut senders = Vec::new();
    let mut receivers = Vec::new();
    let mut scratch: Vec<u32> = Vec::new();
    for (i, &p) in positions.iter().enumerate() {
        scratch.clear();
        let (cx, cy, cz) = cell_of(p);
        for dx in -1..=1 {
            for dy in -1..=1 {
                for dz in -1..=1 {
                    let Some(bucket) = cells.get(&(cx + dx, cy + dy, cz + dz)) else {
                        continue;
                    };
                    for &j in bucket {
                        if j as usize != i
                            && (positions[j as usize] - p).length_squared() < r2
                        {
                            scratch.push(j);
                        }
                    }
                }
            }
        }
        scratch.sort_unstable();
        for &j in &scratch {
            senders.push(i as u32);
            receivers.push(j);
        }
    }
    EdgeList { senders, receivers }
}

/// CSR adjacency: for sender `i`, its receivers are
/// `edges.receivers[offsets[i]..offsets[i+1]]`. Requires the sorted pair
/// layout produced by [`neighbor_pairs`].
pub fn sender_offsets(edges: &EdgeList, n: usize) -> Vec<usize> {
    let mut offsets = vec![0usize; n + 1];
    for &s in &edges.senders {
        offsets[s as usize + 1] += 1;
    }
    for i in 0..n {
        offsets[i + 1] += offsets[i];
    }
    offsets
}
