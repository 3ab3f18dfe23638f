use std::fmt;

/// Feature domain of a categorical field.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Domain {
    User,
    Item,
    Cross,
    Context,
}

impl Domain {
    pub const ALL: [Domain; 4] = [Domain::User, Domain::Item, Domain::Cross, Domain::Context];

    pub fn code(self) -> u8 {
        match self {
            Domain::User => 0,
            Domain::Item => 1,
            Domain::Cross => 2,
            Domain::Context => 3,
        }
    }

    pub fn from_code(c: u8) -> Option<Self> {
        Self::ALL.get(c as usize).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            Domain::User => "user",
            Domain::Item => "item",
            Domain::Cross => "cross",
            Domain::Context => "context",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|d| d.name() == s || (s == "ctx" && *d == Domain::Context))
    }
}

impl fmt::Display for Domain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// One categorical field. Id 0 is the reserved unknown/masked value.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct FieldSpec {
    pub field_id: u16,
    pub domain: Domain,
    pub vocab_size: u32,
}

/// Ordered set of fields. Within a domain, field order is listing order.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Schema {
    fields: Vec<FieldSpec>,
}

impl Schema {
    /// Builds a schema, rejecting duplicate ids, vocabularies below 2 and empty domains.
    pub fn new(fields: Vec<FieldSpec>) -> Result<Self, String> {
        for (i, f) in fields.iter().enumerate() {
            if fields[..i].iter().any(|g| g.field_id == f.field_id) {
                return Err(format!("duplicate field id {}", f.field_id));
            }
            if f.vocab_size < 2 {
                return Err(format!("field {} has vocabulary {} < 2", f.field_id, f.vocab_size));
            }
        }
        for d in Domain::ALL {
            if !fields.iter().any(|f| f.domain == d) {
                return Err(format!("domain `{d}` has no fields"));
            }
        }
        Ok(Self { fields })
    }

    pub fn fields(&self) -> &[FieldSpec] {
        &self.fields
    }

    pub fn in_domain(&self, d: Domain) -> impl Iterator<Item = &FieldSpec> {
        self.fields.iter().filter(move |f| f.domain == d)
    }

    pub fn count(&self, d: Domain) -> usize {
        self.in_domain(d).count()
    }
}

/// Action recorded for a panoramic-sequence element.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Action {
    Impression = 0,
    Click = 1,
    Order = 2,
}

impl Action {
    pub const VOCAB: usize = 3;

    pub fn from_code(c: u8) -> Option<Self> {
        match c {
            0 => Some(Action::Impression),
            1 => Some(Action::Click),
            2 => Some(Action::Order),
            _ => None,
        }
    }

    pub fn code(self) -> u8 {
        self as u8
    }
}

/// One element of a panoramic sequence: the full feature snapshot of a past
/// request as seen for the item the user acted on.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Behavior {
    pub user_fields: Vec<u32>,
    pub item_fields: Vec<u32>,
    pub cross_fields: Vec<u32>,
    pub ctx_fields: Vec<u32>,
    pub position: u32,
    pub action: Action,
}

impl Behavior {
    pub fn fields(&self, d: Domain) -> &[u32] {
        match d {
            Domain::User => &self.user_fields,
            Domain::Item => &self.item_fields,
            Domain::Cross => &self.cross_fields,
            Domain::Context => &self.ctx_fields,
        }
    }

    pub fn fields_mut(&mut self, d: Domain) -> &mut Vec<u32> {
        match d {
            Domain::User => &mut self.user_fields,
            Domain::Item => &mut self.item_fields,
            Domain::Cross => &mut self.cross_fields,
            Domain::Context => &mut self.ctx_fields,
        }
    }
}

/// A candidate item with its exposure and click labels.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct ItemEntry {
    pub item_fields: Vec<u32>,
    pub cross_fields: Vec<u32>,
    pub exposed: bool,
    /// Only meaningful when `exposed`.
    pub clicked: bool,
}

/// One record per request: shared user/context features, the panoramic
/// sequence, and every candidate item.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct RequestSample {
    pub request_id: u64,
    pub user_fields: Vec<u32>,
    pub ctx_fields: Vec<u32>,
    pub behaviors: Vec<Behavior>,
    pub items: Vec<ItemEntry>,
}

/// Caps on sequence and item-set sizes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Limits {
    pub max_behaviors: usize,
    pub max_items: usize,
}

impl Default for Limits {
    fn default() -> Self {
        Self { max_behaviors: 512, max_items: 300 }
    }
}

/// A broken invariant found by [`validate_request`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Violation {
    NoItems,
    TooManyItems { count: usize, max: usize },
    TooManyBehaviors { count: usize, max: usize },
    FieldCount { location: String, expected: usize, found: usize },
    IdOutOfRange { location: String, field_id: u16, id: u32, vocab: u32 },
    ClickWithoutExposure { item: usize },
    PositionsNotIncreasing { behavior: usize },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::NoItems => write!(f, "request has no items"),
            Violation::TooManyItems { count, max } => write!(f, "{count} items exceed cap {max}"),
            Violation::TooManyBehaviors { count, max } => write!(f, "{count} behaviors exceed cap {max}"),
            Violation::FieldCount { location, expected, found } => {
                write!(f, "{location}: expected {expected} ids, found {found}")
            }
            Violation::IdOutOfRange { location, field_id, id, vocab } => {
                write!(f, "{location}: field {field_id} id {id} >= vocab {vocab}")
            }
            Violation::ClickWithoutExposure { item } => write!(f, "item {item} clicked but not exposed"),
            Violation::PositionsNotIncreasing { behavior } => {
                write!(f, "behavior {behavior} position does not increase")
            }
        }
    }
}

fn check_fields(schema: &Schema, d: Domain, ids: &[u32], location: &str, out: &mut Vec<Violation>) {
    let specs: Vec<_> = schema.in_domain(d).collect();
    if specs.len() != ids.len() {
        out.push(Violation::FieldCount { location: format!("{location}.{d}"), expected: specs.len(), found: ids.len() });
        return;
    }
    for (spec, &id) in specs.iter().zip(ids) {
        if id >= spec.vocab_size {
            out.push(Violation::IdOutOfRange {
                location: format!("{location}.{d}"),
                field_id: spec.field_id,
                id,
                vocab: spec.vocab_size,
            });
        }
    }
}

/// Checks every sample invariant against `schema`; an empty list means valid.
pub fn validate_request(sample: &RequestSample, schema: &Schema, limits: Limits) -> Vec<Violation> {
    let mut out = Vec::new();
    if sample.items.is_empty() {
        out.push(Violation::NoItems);
    }
    if sample.items.len() > limits.max_items {
        out.push(Violation::TooManyItems { count: sample.items.len(), max: limits.max_items });
    }
    if sample.behaviors.len() > limits.max_behaviors {
        out.push(Violation::TooManyBehaviors { count: sample.behaviors.len(), max: limits.max_behaviors });
    }
    check_fields(schema, Domain::User, &sample.user_fields, "request", &mut out);
    check_fields(schema, Domain::Context, &sample.ctx_fields, "request", &mut out);
    for (i, b) in sample.behaviors.iter().enumerate() {
        let loc = format!("behavior[{i}]");
        for d in Domain::ALL {
            check_fields(schema, d, b.fields(d), &loc, &mut out);
        }
        if i > 0 && b.position <= sample.behaviors[i - 1].position {
            out.push(Violation::PositionsNotIncreasing { behavior: i });
        }
    }
    for (i, item) in sample.items.iter().enumerate() {
        let loc = format!("item[{i}]");
        check_fields(schema, Domain::Item, &item.item_fields, &loc, &mut out);
        check_fields(schema, Domain::Cross, &item.cross_fields, &loc, &mut out);
        if item.clicked && !item.exposed {
            out.push(Violation::ClickWithoutExposure { item: i });
        }
    }
    out
}
