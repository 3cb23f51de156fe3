use crate::attn_model::trace::HeadGrid;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct CacheEntry {
    pub token: usize,
    pub key: Vec<f64>,
    pub value: Vec<f64>,
}

/// Per-(layer, head) key/value store with permanent eviction.
///
/// Entries in each head are ordered by strictly increasing token position.
/// `capacity` is the eviction budget; a head may briefly hold `capacity + 1`
/// entries between a decode step and the following eviction pass.
#[derive(Debug, Clone)]
pub struct KvCache {
    grid: HeadGrid,
    capacity: usize,
    heads: Vec<Vec<CacheEntry>>,
    next_token: usize,
}

impl KvCache {
    pub fn new(grid: HeadGrid, capacity: usize) -> Self {
        Self {
            grid,
            capacity,
            heads: vec![Vec::new(); grid.units()],
            next_token: 0,
        }
    }

    pub fn grid(&self) -> HeadGrid {
        self.grid
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// Position the next appended token will receive.
    pub fn next_token(&self) -> usize {
        self.next_token
    }

    pub fn entries(&self, unit: usize) -> &[CacheEntry] {
        &self.heads[unit]
    }

    pub fn len(&self, unit: usize) -> usize {
        self.heads[unit].len()
    }

    pub fn is_empty(&self) -> bool {
        self.heads.iter().all(Vec::is_empty)
    }

    pub fn tokens(&self, unit: usize) -> Vec<usize> {
        self.heads[unit].iter().map(|e| e.token).collect()
    }

    pub(crate) fn push(&mut self, unit: usize, entry: CacheEntry) {
        debug_assert!(self.heads[unit]
            .last()
            .is_none_or(|e| e.token < entry.token));
        self.heads[unit].push(entry);
    }

    pub(crate) fn advance(&mut self) {
        self.next_token += 1;
    }

    /// Keeps only the tokens in `keep` (sorted ascending) for one unit.
    pub fn retain(&mut self, unit: usize, keep: &[usize]) -> Result<()> {
        let entries = &mut self.heads[unit];
        for &t in keep {
            if entries.binary_search_by_key(&t, |e| e.token).is_err() {
                let (layer, head) = self.grid.layer_head(unit);
                return Err(Error::UnknownToken {
                    layer,
                    head,
                    token: t,
                });
            }
        }
        entries.retain(|e| keep.binary_search(&e.token).is_ok());
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn entry(token: usize) -> CacheEntry {
        CacheEntry {
            token,
            key: vec![token as f64],
            value: vec![-(token as f64)],
        }
    }

    #[test]
    fn retain_drops_and_rejects_unknown() {
        let mut c = KvCache::new(HeadGrid::new(1, 2), 2);
        for t in 0..4 {
            c.push(0, entry(t));
            c.push(1, entry(t));
            c.advance();
        }
        c.retain(0, &[0, 3]).unwrap();
        assert_eq!(c.tokens(0), vec![0, 3]);
        assert_eq!(c.tokens(1), vec![0, 1, 2, 3]);
        assert!(matches!(
            c.retain(0, &[1]),
            Err(Error::UnknownToken { token: 1, .. })
        ));
        assert_eq!(c.next_token(), 4);
    }
}
