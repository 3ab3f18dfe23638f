/// Which costs beyond matrix products are counted.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FlopPolicy {
    /// One FLOP per output element for bias additions.
    pub bias: bool,
    /// Per-element costs of activations, norms, residual adds and score scaling.
    pub elementwise: bool,
}

impl FlopPolicy {
    pub const ALL: Self = Self { bias: true, elementwise: true };
    pub const MATMUL_ONLY: Self = Self { bias: false, elementwise: false };
}

impl Default for FlopPolicy {
    fn default() -> Self {
        Self::ALL
    }
}

pub const SILU_FLOPS: u64 = 4;
pub const SIGMOID_FLOPS: u64 = 3;
pub const LAYER_NORM_FLOPS: u64 = 8;
pub const ADD_FLOPS: u64 = 1;
pub const SCALE_FLOPS: u64 = 1;

/// Cost of `[n x d_in] . [d_in x d_out] (+ b)`.
pub fn affine_flops(policy: FlopPolicy, n: u64, d_in: u64, d_out: u64) -> u64 {
    2 * n * d_in * d_out + if policy.bias { n * d_out } else { 0 }
}

pub fn elementwise_flops(policy: FlopPolicy, per_elem: u64, n: u64) -> u64 {
    if policy.elementwise {
        per_elem * n
    } else {
        0
    }
}

/// Cost of one attention segment: scores, optional scaling, SiLU, weighted sum.
pub fn attention_flops(policy: FlopPolicy, nq: u64, nk: u64, d: u64, heads: u64, scaled: bool) -> u64 {
    let scores = nq * nk * heads;
    let mut f = 4 * nq * nk * d;
    f += elementwise_flops(policy, SILU_FLOPS, scores);
    if scaled {
        f += elementwise_flops(policy, SCALE_FLOPS, scores);
    }
    f
}

/// Running tally kept by an instrumented graph.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct FlopCounter {
    pub policy: FlopPolicy,
    pub total: u64,
}

impl FlopCounter {
    pub fn new(policy: FlopPolicy) -> Self {
        Self { policy, total: 0 }
    }
}
