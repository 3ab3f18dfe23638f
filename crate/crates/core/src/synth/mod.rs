//! Synthetic marketplace with planted sequence-interest and competition
//! effects, and the exact click oracle that goes with it.

mod config;
mod generator;

pub use config::{Competition, GenConfig};
pub use generator::{
    generate_dataset, oracle_click_prob, oracle_with_world, schema, World, FIELD_ACTIVITY, FIELD_CATEGORY, FIELD_DISTANCE,
    FIELD_HOUR, FIELD_ITEM, FIELD_PRICE, FIELD_SCENE, FIELD_SEGMENT,
};
