use std::ops::Range;

/// Default largest number of items decoded per invocation.
pub const DEFAULT_SHARD_SIZE: usize = 300;

/// Contiguous partition of a request's items into decoder invocations.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ShardPlan {
    pub shard_size: usize,
    pub ranges: Vec<Range<usize>>,
}

impl ShardPlan {
    pub fn len(&self) -> usize {
        self.ranges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ranges.is_empty()
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.ranges.iter().map(|r| r.len()).collect()
    }
}

/// Splits `k` items into `ceil(k / s)` contiguous shards; all but the last have
/// exactly `s` items.
///
/// # Panics
/// If `s` is zero.
pub fn shard_items(k: usize, s: usize) -> ShardPlan {
    assert!(s >= 1, "shard size must be at least 1");
    let ranges = (0..k.div_ceil(s)).map(|i| i * s..((i + 1) * s).min(k)).collect();
    ShardPlan { shard_size: s, ranges }
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    #[test]
    fn examples() {
        assert_eq!(shard_items(300, 300).ranges, vec![0..300]);
        assert_eq!(shard_items(1, 300).ranges, vec![0..1]);
        assert_eq!(shard_items(650, 300).sizes(), vec![300, 300, 50]);
        assert!(shard_items(0, 7).is_empty());
    }

    proptest! {
        #[test]
        fn plans_partition_the_items(s in 1usize..400, mult in 1usize..=10, frac in 0.0f64..1.0) {
            let k = ((s * mult) as f64 * frac).ceil().max(1.0) as usize;
            let plan = shard_items(k, s);
            prop_assert_eq!(plan.len(), k.div_ceil(s));
            let mut next = 0;
            for (i, r) in plan.ranges.iter().enumerate() {
                prop_assert_eq!(r.start, next);
                prop_assert!(r.len() >= 1 && r.len() <= s);
                if i + 1 < plan.len() {
                    prop_assert_eq!(r.len(), s);
                }
                next = r.end;
            }
            prop_assert_eq!(next, k);
        }
    }
}
