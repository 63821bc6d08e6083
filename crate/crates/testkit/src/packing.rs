//! Exhaustive arena packing.
//!
//! In a packing that cannot be lowered block by block, every block rests
//! either on offset 0 or directly on top of a block it overlaps in time.
//! Enumerating one such support choice per block therefore covers an
//! optimal packing.

use rand::Rng;
use utoe_core::compiler::Block;

/// Number of support assignments [`optimal_arena`] would visit.
pub fn search_space(blocks: &[Block]) -> u64 {
    (0..blocks.len())
        .map(|i| 1 + (0..blocks.len()).filter(|&j| j != i && conflicts(&blocks[i], &blocks[j])).count() as u64)
        .product()
}

fn conflicts(a: &Block, b: &Block) -> bool {
    a.birth <= b.death && b.birth <= a.death
}

/// Offsets implied by `support`, or `None` when the choice is cyclic.
fn resolve(blocks: &[Block], support: &[Option<usize>]) -> Option<Vec<u64>> {
    let n = blocks.len();
    let mut off: Vec<Option<u64>> = vec![None; n];
    for _ in 0..n {
        for i in 0..n {
            if off[i].is_none() {
                off[i] = match support[i] {
                    None => Some(0),
                    Some(s) => off[s].map(|o| o + blocks[s].size),
                };
            }
        }
    }
    off.into_iter().collect()
}

fn valid(blocks: &[Block], off: &[u64]) -> bool {
    for i in 0..blocks.len() {
        for j in i + 1..blocks.len() {
            if conflicts(&blocks[i], &blocks[j])
                && !(off[i] + blocks[i].size <= off[j] || off[j] + blocks[j].size <= off[i])
            {
                return false;
            }
        }
    }
    true
}

/// Smallest arena over all packings of `blocks`.
pub fn optimal_arena(blocks: &[Block]) -> u64 {
    let n = blocks.len();
    let choices: Vec<Vec<Option<usize>>> = (0..n)
        .map(|i| {
            std::iter::once(None)
                .chain((0..n).filter(|&j| j != i && conflicts(&blocks[i], &blocks[j])).map(Some))
                .collect()
        })
        .collect();
    let mut pick = vec![0usize; n];
    let mut best = u64::MAX;
    loop {
        let support: Vec<Option<usize>> = (0..n).map(|i| choices[i][pick[i]]).collect();
        if let Some(off) = resolve(blocks, &support) {
            if valid(blocks, &off) {
                let arena = (0..n).map(|i| off[i] + blocks[i].size).max().unwrap_or(0);
                best = best.min(arena);
            }
        }
        let mut i = 0;
        loop {
            if i == n {
                return if n == 0 { 0 } else { best };
            }
            pick[i] += 1;
            if pick[i] < choices[i].len() {
                break;
            }
            pick[i] = 0;
            i += 1;
        }
    }
}

/// Independent peak-liveness computation.
pub fn peak_live(blocks: &[Block]) -> u64 {
    let steps: Vec<usize> = blocks.iter().flat_map(|b| [b.birth, b.death]).collect();
    steps
        .iter()
        .map(|&t| blocks.iter().filter(|b| b.birth <= t && t <= b.death).map(|b| b.size).sum())
        .max()
        .unwrap_or(0)
}

pub fn random_blocks(rng: &mut impl Rng, n: usize, horizon: usize) -> Vec<Block> {
    (0..n)
        .map(|_| {
            let birth = rng.random_range(0..horizon);
            let death = rng.random_range(birth..horizon);
            Block { birth, death, size: 8 * rng.random_range(1..=16u64) }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn b(birth: usize, death: usize, size: u64) -> Block {
        Block { birth, death, size }
    }

    /// Tries every offset on the 8-byte grid below `limit`.
    fn grid_search(blocks: &[Block], limit: u64) -> u64 {
        fn go(blocks: &[Block], off: &mut Vec<u64>, limit: u64, best: &mut u64) {
            let i = off.len();
            if i == blocks.len() {
                *best = (*best).min((0..i).map(|k| off[k] + blocks[k].size).max().unwrap_or(0));
                return;
            }
            let mut o = 0;
            while o + blocks[i].size <= limit.min(*best) {
                off.push(o);
                if valid(&blocks[..=i], off) {
                    go(blocks, off, limit, best);
                }
                off.pop();
                o += 8;
            }
        }
        let mut best = limit;
        go(blocks, &mut Vec::new(), limit, &mut best);
        best
    }

    #[test]
    fn extremes() {
        assert_eq!(optimal_arena(&[]), 0);
        assert_eq!(optimal_arena(&[b(0, 0, 16), b(1, 1, 32), b(2, 2, 8)]), 32);
        assert_eq!(optimal_arena(&[b(0, 3, 16), b(1, 2, 32), b(2, 3, 8)]), 56);
    }

    #[test]
    fn interleaved_lifetimes_match_grid_search() {
        let blocks = [b(0, 1, 8), b(2, 3, 16), b(0, 0, 16), b(1, 2, 8), b(3, 3, 8), b(0, 3, 8)];
        assert!(optimal_arena(&blocks) >= peak_live(&blocks));
        assert_eq!(optimal_arena(&blocks), grid_search(&blocks, 128));
    }

    #[test]
    fn agrees_with_grid_search_on_small_sets() {
        let mut r = crate::rng(3);
        for _ in 0..300 {
            let n = r.random_range(1..=4);
            let blocks: Vec<Block> =
                random_blocks(&mut r, n, 4).into_iter().map(|x| b(x.birth, x.death, x.size.min(48))).collect();
            let total: u64 = blocks.iter().map(|x| x.size).sum();
            assert_eq!(optimal_arena(&blocks), grid_search(&blocks, total), "{blocks:?}");
        }
    }

    #[test]
    fn cyclic_supports_are_rejected() {
        let blocks = [b(0, 1, 8), b(0, 1, 8)];
        assert_eq!(resolve(&blocks, &[Some(1), Some(0)]), None);
        assert_eq!(resolve(&blocks, &[None, Some(0)]), Some(vec![0, 8]));
    }
}
