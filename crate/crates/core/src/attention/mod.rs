//! Local self-attention over kNN neighbourhoods.
//!
//! [`PointTransformerLayer`] computes, for every point `i` with neighbours
//! `j ∈ N(i)`,
//!
//! ```text
//! y_i = Σ_j ρ(γ(φ(x_i) − ψ(x_j) + δ_ij)) ⊙ (α(x_j) + δ_ij),   δ_ij = θ(p_i − p_j)
//! ```
//!
//! and the variants used in ablations: scalar dot-product weights, the
//! attention-free MLP and MLP+pooling operators, softmax on or off, and the
//! five position-encoding placements.

mod layer;

pub use layer::{position_encoding, PointTransformerLayer};

use serde::{Deserialize, Serialize};

use crate::error::{bail, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Operator {
    Vector,
    Scalar,
    Mlp,
    MlpPool,
}

impl Operator {
    pub const ALL: [Operator; 4] = [Operator::Mlp, Operator::MlpPool, Operator::Scalar, Operator::Vector];

    pub fn name(self) -> &'static str {
        match self {
            Operator::Vector => "vector",
            Operator::Scalar => "scalar",
            Operator::Mlp => "mlp",
            Operator::MlpPool => "mlp_pool",
        }
    }
}

/// Where the position encoding enters the layer.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PosMode {
    None,
    /// `θ(p_i) + θ(p_j)` in both branches.
    Absolute,
    /// `θ(p_i − p_j)` in both branches.
    Relative,
    RelativeAttnOnly,
    RelativeFeatOnly,
}

impl PosMode {
    pub const ALL: [PosMode; 5] = [
        PosMode::None,
        PosMode::Absolute,
        PosMode::Relative,
        PosMode::RelativeAttnOnly,
        PosMode::RelativeFeatOnly,
    ];

    pub fn in_attention(self) -> bool {
        matches!(self, PosMode::Absolute | PosMode::Relative | PosMode::RelativeAttnOnly)
    }

    pub fn in_features(self) -> bool {
        matches!(self, PosMode::Absolute | PosMode::Relative | PosMode::RelativeFeatOnly)
    }

    pub fn is_absolute(self) -> bool {
        self == PosMode::Absolute
    }

    pub fn name(self) -> &'static str {
        match self {
            PosMode::None => "none",
            PosMode::Absolute => "absolute",
            PosMode::Relative => "relative",
            PosMode::RelativeAttnOnly => "relative_attn_only",
            PosMode::RelativeFeatOnly => "relative_feat_only",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Normalize {
    Softmax,
    Identity,
}

impl Normalize {
    pub const ALL: [Normalize; 2] = [Normalize::Softmax, Normalize::Identity];

    pub fn name(self) -> &'static str {
        match self {
            Normalize::Softmax => "softmax",
            Normalize::Identity => "identity",
        }
    }
}

/// Operator choice shared by every layer of a network.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttentionVariant {
    #[serde(default = "default_operator")]
    pub operator: Operator,
    #[serde(default = "default_pos_mode")]
    pub pos_mode: PosMode,
    #[serde(default = "default_normalize")]
    pub normalize: Normalize,
    /// Divide scalar logits by `sqrt(d)`.
    #[serde(default)]
    pub scaled_dot: bool,
}

fn default_operator() -> Operator {
    Operator::Vector
}

fn default_pos_mode() -> PosMode {
    PosMode::Relative
}

fn default_normalize() -> Normalize {
    Normalize::Softmax
}

impl Default for AttentionVariant {
    fn default() -> Self {
        AttentionVariant {
            operator: Operator::Vector,
            pos_mode: PosMode::Relative,
            normalize: Normalize::Softmax,
            scaled_dot: false,
        }
    }
}

impl AttentionVariant {
    /// Every operator × position mode × normalisation combination.
    pub fn all() -> Vec<AttentionVariant> {
        let mut out = Vec::with_capacity(40);
        for operator in Operator::ALL {
            for pos_mode in PosMode::ALL {
                for normalize in Normalize::ALL {
                    out.push(AttentionVariant { operator, pos_mode, normalize, scaled_dot: false });
                }
            }
        }
        out
    }

    pub fn label(&self) -> String {
        format!("{}/{}/{}", self.operator.name(), self.pos_mode.name(), self.normalize.name())
    }
}

/// Width, neighbourhood size and variant of one attention layer.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AttentionConfig {
    pub d: usize,
    pub k: usize,
    pub variant: AttentionVariant,
}

impl AttentionConfig {
    pub fn new(d: usize, k: usize, variant: AttentionVariant) -> Result<Self> {
        if d == 0 || k == 0 {
            bail!(InvalidArgument, "attention needs d ≥ 1 and k ≥ 1 (got d={d}, k={k})");
        }
        Ok(AttentionConfig { d, k, variant })
    }
}
