use std::fmt::Write as _;

use crate::error::{Error, Result};

/// How co-exposed competitors lower an item's click odds.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Competition {
    /// Strongest other exposed item.
    Max,
    /// Sum over the other exposed items.
    Sum,
}

impl Competition {
    pub fn name(self) -> &'static str {
        match self {
            Competition::Max => "max",
            Competition::Sum => "sum",
        }
    }
}

/// Parameters of the synthetic marketplace.
#[derive(Clone, Debug, PartialEq)]
pub struct GenConfig {
    pub seed: u64,
    pub users: u32,
    pub requests: u64,
    pub categories: u32,
    pub items_per_category: u32,
    pub price_buckets: u32,
    pub distance_buckets: u32,
    /// Browsing scenes; each user prefers a different category in each.
    pub scenes: u32,
    pub hours: u32,
    pub segments: u32,
    pub activity_levels: u32,
    pub k_min: u32,
    pub k_max: u32,
    /// Items exposed per request.
    pub slots: u32,
    /// Most recent behaviors kept in each panoramic sequence.
    pub history_cap: u32,
    /// Weight of the sequence-interest term in item quality.
    pub alpha: f64,
    /// Weight of past behaviors at the same distance bucket in the interest sum.
    pub distance_habit: f64,
    /// Weight of the competitor term in the click logit.
    pub gamma: f64,
    pub competition: Competition,
    /// Standard deviation of the per-item logistic click noise.
    pub noise_std: f64,
    pub quality_std: f64,
    pub price_weight: f64,
    pub distance_weight: f64,
    pub hour_weight: f64,
    pub activity_weight: f64,
    pub click_bias: f64,
    /// Probability that a candidate comes from the user's preferred category,
    /// and (independently) that it sits at the user's usual distance.
    pub pref_prob: f64,
    /// Probability that a click in the history is recorded as an order.
    pub order_prob: f64,
}

impl Default for GenConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            users: 2000,
            requests: 50_000,
            categories: 8,
            items_per_category: 25,
            price_buckets: 5,
            distance_buckets: 5,
            scenes: 2,
            hours: 24,
            segments: 4,
            activity_levels: 4,
            k_min: 4,
            k_max: 12,
            slots: 3,
            history_cap: 50,
            alpha: 2.0,
            distance_habit: 1.0,
            gamma: 1.0,
            competition: Competition::Max,
            noise_std: 1.0,
            quality_std: 1.0,
            price_weight: 0.6,
            distance_weight: 0.6,
            hour_weight: 0.3,
            activity_weight: 0.3,
            click_bias: 0.0,
            pref_prob: 0.5,
            order_prob: 0.2,
        }
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value.trim().parse().map_err(|_| Error::Config(format!("bad value `{value}` for `{key}`")))
}

impl GenConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.users == 0 || self.requests == 0 {
            return bad("users and requests must be >= 1");
        }
        if self.categories == 0 || self.items_per_category == 0 {
            return bad("categories and items_per_category must be >= 1");
        }
        if self.price_buckets < 2 || self.distance_buckets < 2 || self.scenes == 0 || self.hours == 0 {
            return bad("price/distance buckets must be >= 2; scenes and hours >= 1");
        }
        if self.segments == 0 || self.activity_levels == 0 {
            return bad("segments and activity_levels must be >= 1");
        }
        if self.k_min == 0 || self.k_min > self.k_max || self.k_max > 300 {
            return bad("need 1 <= k_min <= k_max <= 300");
        }
        if self.slots == 0 || self.history_cap == 0 || self.history_cap > 512 {
            return bad("slots must be >= 1 and history_cap in 1..=512");
        }
        if !(self.alpha >= 0.0) || !(self.gamma >= 0.0) || !(self.noise_std >= 0.0) || !(self.quality_std >= 0.0) {
            return bad("alpha, gamma, noise_std and quality_std must be >= 0");
        }
        if !(self.distance_habit >= 0.0) {
            return bad("distance_habit must be >= 0");
        }
        if !(0.0..=1.0).contains(&self.pref_prob) || !(0.0..=1.0).contains(&self.order_prob) {
            return bad("pref_prob and order_prob must be probabilities");
        }
        let finite = [self.price_weight, self.distance_weight, self.hour_weight, self.activity_weight, self.click_bias];
        if finite.iter().any(|v| !v.is_finite()) {
            return bad("weights must be finite");
        }
        Ok(())
    }

    /// Sets one field by its key; unknown keys are rejected.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "seed" => self.seed = parse(key, value)?,
            "users" => self.users = parse(key, value)?,
            "requests" => self.requests = parse(key, value)?,
            "categories" => self.categories = parse(key, value)?,
            "items_per_category" => self.items_per_category = parse(key, value)?,
            "price_buckets" => self.price_buckets = parse(key, value)?,
            "distance_buckets" => self.distance_buckets = parse(key, value)?,
            "scenes" => self.scenes = parse(key, value)?,
            "hours" => self.hours = parse(key, value)?,
            "segments" => self.segments = parse(key, value)?,
            "activity_levels" => self.activity_levels = parse(key, value)?,
            "k_min" => self.k_min = parse(key, value)?,
            "k_max" => self.k_max = parse(key, value)?,
            "slots" => self.slots = parse(key, value)?,
            "history_cap" => self.history_cap = parse(key, value)?,
            "alpha" => self.alpha = parse(key, value)?,
            "distance_habit" => self.distance_habit = parse(key, value)?,
            "gamma" => self.gamma = parse(key, value)?,
            "competition" => {
                self.competition = match value.trim() {
                    "max" => Competition::Max,
                    "sum" => Competition::Sum,
                    v => return Err(Error::Config(format!("bad value `{v}` for `competition` (max|sum)"))),
                }
            }
            "noise_std" => self.noise_std = parse(key, value)?,
            "quality_std" => self.quality_std = parse(key, value)?,
            "price_weight" => self.price_weight = parse(key, value)?,
            "distance_weight" => self.distance_weight = parse(key, value)?,
            "hour_weight" => self.hour_weight = parse(key, value)?,
            "activity_weight" => self.activity_weight = parse(key, value)?,
            "click_bias" => self.click_bias = parse(key, value)?,
            "pref_prob" => self.pref_prob = parse(key, value)?,
            "order_prob" => self.order_prob = parse(key, value)?,
            _ => return Err(Error::Config(format!("unknown key `{key}`"))),
        }
        Ok(())
    }

    pub fn entries(&self) -> Vec<(&'static str, String)> {
        vec![
            ("seed", self.seed.to_string()),
            ("users", self.users.to_string()),
            ("requests", self.requests.to_string()),
            ("categories", self.categories.to_string()),
            ("items_per_category", self.items_per_category.to_string()),
            ("price_buckets", self.price_buckets.to_string()),
            ("distance_buckets", self.distance_buckets.to_string()),
            ("scenes", self.scenes.to_string()),
            ("hours", self.hours.to_string()),
            ("segments", self.segments.to_string()),
            ("activity_levels", self.activity_levels.to_string()),
            ("k_min", self.k_min.to_string()),
            ("k_max", self.k_max.to_string()),
            ("slots", self.slots.to_string()),
            ("history_cap", self.history_cap.to_string()),
            ("alpha", self.alpha.to_string()),
            ("distance_habit", self.distance_habit.to_string()),
            ("gamma", self.gamma.to_string()),
            ("competition", self.competition.name().to_string()),
            ("noise_std", self.noise_std.to_string()),
            ("quality_std", self.quality_std.to_string()),
            ("price_weight", self.price_weight.to_string()),
            ("distance_weight", self.distance_weight.to_string()),
            ("hour_weight", self.hour_weight.to_string()),
            ("activity_weight", self.activity_weight.to_string()),
            ("click_bias", self.click_bias.to_string()),
            ("pref_prob", self.pref_prob.to_string()),
            ("order_prob", self.order_prob.to_string()),
        ]
    }

    /// Parses `key = value` lines; blank lines and `#` comments are skipped.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (no, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key=value", no + 1)))?;
            cfg.set(k.trim(), v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (k, v) in self.entries() {
            writeln!(s, "{k}={v}").unwrap();
        }
        s
    }
}
