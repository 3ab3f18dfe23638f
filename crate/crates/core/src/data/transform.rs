use crate::data::io::record_size;
use crate::data::{Domain, RequestSample};

/// One record per exposed item, each repeating the request's shared features.
///
/// Also returns the storage ratio: point-wise serialized bytes over
/// set-wise serialized bytes (0 when the input is empty).
pub fn expand_to_pointwise(samples: &[RequestSample]) -> (Vec<RequestSample>, f64) {
    let mut out = Vec::new();
    for s in samples {
        for item in s.items.iter().filter(|i| i.exposed) {
            out.push(RequestSample {
                request_id: s.request_id,
                user_fields: s.user_fields.clone(),
                ctx_fields: s.ctx_fields.clone(),
                behaviors: s.behaviors.clone(),
                items: vec![item.clone()],
            });
        }
    }
    let set_bytes: usize = samples.iter().map(record_size).sum();
    let point_bytes: usize = out.iter().map(record_size).sum();
    let ratio = if set_bytes == 0 { 0.0 } else { point_bytes as f64 / set_bytes as f64 };
    (out, ratio)
}

/// Replaces the behavior ids of every masked domain with the sentinel 0.
/// Request-level and item-level features are untouched.
pub fn mask_side_features(samples: &[RequestSample], domains: &[Domain]) -> Vec<RequestSample> {
    samples
        .iter()
        .map(|s| {
            let mut s = s.clone();
            for b in &mut s.behaviors {
                for &d in domains {
                    b.fields_mut(d).iter_mut().for_each(|id| *id = 0);
                }
            }
            s
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use std::collections::BTreeMap;

    use proptest::prelude::*;

    use super::*;
    use crate::data::io::encode_record;
    use crate::data::sample::fixtures::sample;

    #[test]
    fn one_record_per_exposed_item() {
        let mut s = sample(3, 4, 10);
        s.items.iter_mut().for_each(|i| i.exposed = true);
        let (p, _) = expand_to_pointwise(&[s.clone()]);
        assert_eq!(p.len(), 10);
        assert!(p.iter().all(|r| r.behaviors == s.behaviors && r.items.len() == 1));

        s.items.iter_mut().for_each(|i| {
            i.exposed = false;
            i.clicked = false;
        });
        assert!(expand_to_pointwise(&[s]).0.is_empty());
    }

    #[test]
    fn storage_ratio_by_byte_count() {
        let samples: Vec<_> = (0..5).map(|i| sample(i, 40, 6)).collect();
        let (p, ratio) = expand_to_pointwise(&samples);
        // Each sample exposes items 0, 2, 4.
        assert_eq!(p.len(), 15);
        let set: usize = samples.iter().map(|s| 4 + encode_record(s).len()).sum();
        let point: usize = p.iter().map(|s| 4 + encode_record(s).len()).sum();
        assert_eq!(ratio, point as f64 / set as f64);
        assert!(ratio > 1.0);
    }

    #[test]
    fn masking() {
        let s = vec![sample(0, 3, 2)];
        assert_eq!(mask_side_features(&s, &[]), s);

        let m = mask_side_features(&s, &[Domain::Context]);
        for (a, b) in m[0].behaviors.iter().zip(&s[0].behaviors) {
            assert!(a.ctx_fields.iter().all(|&v| v == 0));
            assert_eq!(a.user_fields, b.user_fields);
            assert_eq!(a.item_fields, b.item_fields);
            assert_eq!(a.cross_fields, b.cross_fields);
            assert_eq!((a.position, a.action), (b.position, b.action));
        }
        assert_eq!(m[0].ctx_fields, s[0].ctx_fields);
        assert_eq!(m[0].items, s[0].items);

        let all = mask_side_features(&s, &Domain::ALL);
        for b in &all[0].behaviors {
            assert!(Domain::ALL.iter().all(|&d| b.fields(d).iter().all(|&v| v == 0)));
        }
    }

    proptest! {
        #[test]
        fn regrouping_recovers_exposed_labels(shape in prop::collection::vec((0u32..4, 1u32..8), 1..15)) {
            let samples: Vec<_> = shape.iter().enumerate().map(|(i, &(n, k))| sample(i as u64, n, k)).collect();
            let (points, _) = expand_to_pointwise(&samples);
            let mut grouped: BTreeMap<u64, Vec<(bool, bool)>> = BTreeMap::new();
            for p in &points {
                grouped.entry(p.request_id).or_default().push((p.items[0].exposed, p.items[0].clicked));
            }
            for s in &samples {
                let mut want: Vec<_> = s.items.iter().filter(|i| i.exposed).map(|i| (i.exposed, i.clicked)).collect();
                let mut got = grouped.remove(&s.request_id).unwrap_or_default();
                want.sort();
                got.sort();
                prop_assert_eq!(want, got);
            }
        }

        #[test]
        fn masking_is_idempotent(mask in prop::collection::vec(0usize..4, 0..4)) {
            let domains: Vec<_> = mask.iter().map(|&i| Domain::ALL[i]).collect();
            let s = vec![sample(0, 5, 3), sample(1, 2, 1)];
            let once = mask_side_features(&s, &domains);
            prop_assert_eq!(mask_side_features(&once, &domains), once);
        }
    }
}
