use crate::data::{Action, Behavior, RequestSample};
use crate::error::{Error, Result};

/// A past request together with the item the user acted on and the action taken.
#[derive(Clone, Debug)]
pub struct HistoryEntry<'a> {
    pub request: &'a RequestSample,
    pub chosen_item: usize,
    pub action: Action,
}

/// Which history entries become behaviors.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum ActionFilter {
    /// Impressions, clicks and orders.
    #[default]
    All,
    /// Clicks and orders only.
    Engaged,
}

impl ActionFilter {
    pub fn keeps(self, a: Action) -> bool {
        match self {
            ActionFilter::All => true,
            ActionFilter::Engaged => a != Action::Impression,
        }
    }
}

/// Turns a chronological request history into a panoramic sequence.
///
/// Each behavior carries the chosen item's item/cross ids plus that request's
/// user/context ids. Request ids order the history and must strictly
/// increase. Only the most recent `cap` behaviors are kept; positions are
/// renumbered from 0 after truncation.
pub fn build_panoramic_sequence(history: &[HistoryEntry<'_>], cap: usize, filter: ActionFilter) -> Result<Vec<Behavior>> {
    for w in history.windows(2) {
        if w[1].request.request_id <= w[0].request.request_id {
            return Err(Error::Invalid(format!(
                "history is not chronological: request {} follows {}",
                w[1].request.request_id, w[0].request.request_id
            )));
        }
    }
    let kept: Vec<&HistoryEntry<'_>> = history.iter().filter(|h| filter.keeps(h.action)).collect();
    let start = kept.len().saturating_sub(cap);
    kept[start..]
        .iter()
        .enumerate()
        .map(|(pos, h)| {
            let item = h.request.items.get(h.chosen_item).ok_or_else(|| {
                Error::Invalid(format!("request {} has no item {}", h.request.request_id, h.chosen_item))
            })?;
            Ok(Behavior {
                user_fields: h.request.user_fields.clone(),
                item_fields: item.item_fields.clone(),
                cross_fields: item.cross_fields.clone(),
                ctx_fields: h.request.ctx_fields.clone(),
                position: pos as u32,
                action: h.action,
            })
        })
        .collect()
}
