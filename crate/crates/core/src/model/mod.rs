//! The forward architecture: feature embedding with positional encoding,
//! relation-biased cross-stock attention per relation, gated fusion,
//! a pre-norm temporal encoder per stock, and a pooled MLP head.

mod forward;

pub use forward::{
    embed_features, encoder_layer, forward, forward_on_tape, gated_fusion, pool_and_predict, positional_encoding,
    relation_attention, relation_block, ForwardOutput, Graphs, TapeForward,
};

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use rand::{Rng, RngCore};

use crate::data::{DEFAULT_D_COMPANY, DEFAULT_D_MARKET};
use crate::error::{Error, Result};
use crate::numerics::{Matrix, ParamStore};
use crate::relations::RelationKind;
use crate::rng::{stream, Stream};

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub d_model: usize,
    pub n_heads: usize,
    pub n_layers: usize,
    pub dropout: f64,
    pub d_company: usize,
    pub d_market: usize,
    pub ffn_multiplier: usize,
    /// Sigmoid gates on each relation's output; off means a plain average.
    pub use_gating: bool,
    /// `α·R` logit bias; off severs the graphs (zero off-diagonal, α = 0).
    pub use_relation_bias: bool,
    /// Attention across stocks; off means fixed propagation over the
    /// row-normalized graph.
    pub use_cross_stock_attention: bool,
    pub use_temporal_encoder: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            d_model: 256,
            n_heads: 8,
            n_layers: 1,
            dropout: 0.15,
            d_company: DEFAULT_D_COMPANY,
            d_market: DEFAULT_D_MARKET,
            ffn_multiplier: 4,
            use_gating: true,
            use_relation_bias: true,
            use_cross_stock_attention: true,
            use_temporal_encoder: true,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d_model == 0 || self.n_heads == 0 || !self.d_model.is_multiple_of(self.n_heads) {
            return Err(Error::invalid(format!(
                "d_model {} must be a positive multiple of n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        if !self.d_model.is_multiple_of(2) {
            return Err(Error::invalid("d_model must be even for positional encoding"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::invalid(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        if self.ffn_multiplier == 0 {
            return Err(Error::invalid("ffn_multiplier must be at least 1"));
        }
        Ok(())
    }

    /// Encoder depth after applying the encoder ablation.
    pub fn encoder_layers(&self) -> usize {
        if self.use_temporal_encoder {
            self.n_layers
        } else {
            0
        }
    }

    pub fn ffn_width(&self) -> usize {
        self.d_model * self.ffn_multiplier
    }
}

/// Parameter names, shared by construction, forward and checkpoints.
pub mod names {
    use alloc::format;
    use alloc::string::String;

    use crate::relations::RelationKind;

    pub const COMPANY: &str = "embed.company.weight";
    pub const MARKET: &str = "embed.market.weight";
    pub const INPUT_PROJ: &str = "embed.input_proj.weight";
    pub const FUSION_PROJ: &str = "fusion.proj.weight";
    pub const HEAD_HIDDEN_W: &str = "head.hidden.weight";
    pub const HEAD_HIDDEN_B: &str = "head.hidden.bias";
    pub const HEAD_OUT_W: &str = "head.out.weight";
    pub const HEAD_OUT_B: &str = "head.out.bias";

    pub fn tag(kind: RelationKind) -> &'static str {
        match kind {
            RelationKind::Industry => "ind",
            RelationKind::Institution => "inst",
        }
    }

    pub fn relation(kind: RelationKind, item: &str) -> String {
        format!("relation.{}.{item}", tag(kind))
    }

    pub fn gate_weight(kind: RelationKind) -> String {
        format!("gate.{}.weight", tag(kind))
    }

    pub fn gate_bias(kind: RelationKind) -> String {
        format!("gate.{}.bias", tag(kind))
    }

    pub fn encoder(layer: usize, item: &str) -> String {
        format!("encoder.{layer}.{item}")
    }
}

pub const RELATIONS: [RelationKind; 2] = [RelationKind::Industry, RelationKind::Institution];

#[derive(Debug, Clone, PartialEq)]
pub struct GriffinModel {
    pub config: ModelConfig,
    pub params: ParamStore,
}

impl GriffinModel {
    /// Builds a model with freshly initialized parameters drawn from the
    /// `Init` stream of `seed`.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        let mut rng = stream(seed, Stream::Init);
        Self::with_rng(config, &mut rng)
    }

    /// Xavier-uniform weights, zero biases, unit layer-norm scales,
    /// relation scales α = 1, zero gate parameters.
    pub fn with_rng(config: ModelConfig, rng: &mut dyn RngCore) -> Result<Self> {
        config.validate()?;
        let mut params = ParamStore::new();
        for spec in parameter_layout(&config) {
            let value = match spec.init {
                Init::Xavier => xavier(spec.rows, spec.cols, rng),
                Init::Fill(v) => Matrix::filled(spec.rows, spec.cols, v),
            };
            params.insert(&spec.name, value, spec.decay)?;
        }
        Ok(GriffinModel { config, params })
    }

    /// Wraps an existing parameter store, checking names and shapes against
    /// the configuration.
    pub fn from_params(config: ModelConfig, params: ParamStore) -> Result<Self> {
        config.validate()?;
        let layout = parameter_layout(&config);
        if layout.len() != params.len() {
            return Err(Error::invalid(format!(
                "configuration expects {} parameters, found {}",
                layout.len(),
                params.len()
            )));
        }
        for spec in &layout {
            let p = params.get(&spec.name)?;
            if p.value.shape() != (spec.rows, spec.cols) {
                return Err(Error::Shape {
                    op: "parameter shape check",
                    left: (spec.rows, spec.cols),
                    right: p.value.shape(),
                });
            }
        }
        Ok(GriffinModel { config, params })
    }

    pub fn num_parameters(&self) -> usize {
        self.params.num_scalars()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Init {
    Xavier,
    Fill(f64),
}

/// Shape and initialization of one parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSpec {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub decay: bool,
    init: Init,
}

fn spec(name: impl Into<String>, rows: usize, cols: usize, decay: bool, init: Init) -> ParamSpec {
    ParamSpec {
        name: name.into(),
        rows,
        cols,
        decay,
        init,
    }
}

/// Every parameter the configuration calls for.
pub fn parameter_layout(cfg: &ModelConfig) -> Vec<ParamSpec> {
    use names::*;
    let d = cfg.d_model;
    let mut out = alloc::vec![
        spec(COMPANY, cfg.d_company, cfg.d_company, true, Init::Xavier),
        spec(MARKET, cfg.d_market, cfg.d_market, true, Init::Xavier),
        spec(INPUT_PROJ, cfg.d_company + cfg.d_market, d, true, Init::Xavier),
    ];
    for kind in RELATIONS {
        if cfg.use_cross_stock_attention {
            out.push(spec(relation(kind, "w_q"), d, d, true, Init::Xavier));
            out.push(spec(relation(kind, "w_k"), d, d, true, Init::Xavier));
            if cfg.use_relation_bias {
                out.push(spec(relation(kind, "alpha"), 1, 1, true, Init::Fill(1.0)));
            }
        }
        out.push(spec(relation(kind, "w_v"), d, d, true, Init::Xavier));
        out.push(spec(relation(kind, "w_o"), d, d, true, Init::Xavier));
        if cfg.use_gating {
            out.push(spec(gate_weight(kind), d, d, true, Init::Fill(0.0)));
            out.push(spec(gate_bias(kind), 1, d, false, Init::Fill(0.0)));
        }
    }
    out.push(spec(FUSION_PROJ, d, d, true, Init::Xavier));
    let f = cfg.ffn_width();
    for l in 0..cfg.encoder_layers() {
        out.push(spec(encoder(l, "ln1.gamma"), 1, d, false, Init::Fill(1.0)));
        out.push(spec(encoder(l, "ln1.beta"), 1, d, false, Init::Fill(0.0)));
        for w in ["attn.w_q", "attn.w_k", "attn.w_v", "attn.w_o"] {
            out.push(spec(encoder(l, w), d, d, true, Init::Xavier));
        }
        out.push(spec(encoder(l, "ln2.gamma"), 1, d, false, Init::Fill(1.0)));
        out.push(spec(encoder(l, "ln2.beta"), 1, d, false, Init::Fill(0.0)));
        out.push(spec(encoder(l, "ffn.w1"), d, f, true, Init::Xavier));
        out.push(spec(encoder(l, "ffn.b1"), 1, f, false, Init::Fill(0.0)));
        out.push(spec(encoder(l, "ffn.w2"), f, d, true, Init::Xavier));
        out.push(spec(encoder(l, "ffn.b2"), 1, d, false, Init::Fill(0.0)));
    }
    out.push(spec(HEAD_HIDDEN_W, d, d, true, Init::Xavier));
    out.push(spec(HEAD_HIDDEN_B, 1, d, false, Init::Fill(0.0)));
    out.push(spec(HEAD_OUT_W, d, 1, true, Init::Xavier));
    out.push(spec(HEAD_OUT_B, 1, 1, false, Init::Fill(0.0)));
    out
}

fn xavier(rows: usize, cols: usize, rng: &mut dyn RngCore) -> Matrix {
    let a = libm::sqrt(6.0 / (rows + cols) as f64);
    let data = (0..rows * cols).map(|_| rng.random_range(-a..a)).collect();
    Matrix::from_vec_unchecked(rows, cols, data)
}
