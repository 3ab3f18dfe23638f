use crate::data::{Behavior, ItemEntry, RequestSample};

/// Per-request fields that are not jagged.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RequestHeader {
    pub request_id: u64,
    pub user_fields: Vec<u32>,
    pub ctx_fields: Vec<u32>,
}

/// Padding-free batch: behaviors and items of all requests flattened, with
/// prefix-sum offsets delimiting each request's segment.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct JaggedBatch {
    pub requests: Vec<RequestHeader>,
    pub behaviors: Vec<Behavior>,
    /// `len = requests + 1`, `seq_offsets[r]..seq_offsets[r+1]` are request `r`'s behaviors.
    pub seq_offsets: Vec<usize>,
    pub items: Vec<ItemEntry>,
    pub item_offsets: Vec<usize>,
}

impl JaggedBatch {
    pub fn from_samples<'a>(samples: impl IntoIterator<Item = &'a RequestSample>) -> Self {
        let mut b = JaggedBatch {
            requests: Vec::new(),
            behaviors: Vec::new(),
            seq_offsets: vec![0],
            items: Vec::new(),
            item_offsets: vec![0],
        };
        for s in samples {
            b.requests.push(RequestHeader {
                request_id: s.request_id,
                user_fields: s.user_fields.clone(),
                ctx_fields: s.ctx_fields.clone(),
            });
            b.behaviors.extend(s.behaviors.iter().cloned());
            b.seq_offsets.push(b.behaviors.len());
            b.items.extend(s.items.iter().cloned());
            b.item_offsets.push(b.items.len());
        }
        b
    }

    pub fn len(&self) -> usize {
        self.requests.len()
    }

    pub fn is_empty(&self) -> bool {
        self.requests.is_empty()
    }

    pub fn num_items(&self) -> usize {
        self.items.len()
    }

    pub fn seq_len(&self, r: usize) -> usize {
        self.seq_offsets[r + 1] - self.seq_offsets[r]
    }

    pub fn item_count(&self, r: usize) -> usize {
        self.item_offsets[r + 1] - self.item_offsets[r]
    }

    /// Request index of every flattened item.
    pub fn item_request_index(&self) -> Vec<usize> {
        (0..self.len()).flat_map(|r| std::iter::repeat(r).take(self.item_count(r))).collect()
    }

    /// Offsets are non-decreasing, start at 0 and end at the flattened lengths.
    pub fn offsets_consistent(&self) -> bool {
        let ok = |o: &[usize], total: usize| {
            o.len() == self.requests.len() + 1 && o[0] == 0 && o.windows(2).all(|w| w[0] <= w[1]) && o[o.len() - 1] == total
        };
        ok(&self.seq_offsets, self.behaviors.len()) && ok(&self.item_offsets, self.items.len())
    }

    pub fn request(&self, r: usize) -> RequestSample {
        let h = &self.requests[r];
        RequestSample {
            request_id: h.request_id,
            user_fields: h.user_fields.clone(),
            ctx_fields: h.ctx_fields.clone(),
            behaviors: self.behaviors[self.seq_offsets[r]..self.seq_offsets[r + 1]].to_vec(),
            items: self.items[self.item_offsets[r]..self.item_offsets[r + 1]].to_vec(),
        }
    }

    pub fn to_samples(&self) -> Vec<RequestSample> {
        (0..self.len()).map(|r| self.request(r)).collect()
    }
}

/// Splits `samples` into consecutive jagged batches of at most `batch_size` requests.
pub fn collate(samples: &[RequestSample], batch_size: usize) -> Vec<JaggedBatch> {
    samples.chunks(batch_size.max(1)).map(JaggedBatch::from_samples).collect()
}

/// Inverse of [`collate`].
pub fn decollate(batches: &[JaggedBatch]) -> Vec<RequestSample> {
    batches.iter().flat_map(JaggedBatch::to_samples).collect()
}
