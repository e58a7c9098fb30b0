//! Single-file model checkpoints.
//!
//! A checkpoint is a UTF-8 manifest followed by raw parameter data:
//!
//! ```text
//! griffin-checkpoint 1
//! config d_model 16
//! ...
//! param fusion.w_proj 16 16 0
//! ...
//! data 1234
//! <1234 little-endian f64 values>
//! ```
//!
//! Each `param` line gives the name, shape and offset (in values) of one
//! block. Blocks are stored in manifest order.

use std::collections::BTreeMap;
use std::path::Path;

use anyhow::{anyhow, bail, ensure, Context, Result};
use griffin_core::model::{parameter_layout, GriffinModel, ModelConfig};
use griffin_core::numerics::{Matrix, ParamStore};

use crate::io::fmt_float;

const MAGIC: &str = "griffin-checkpoint 1";

fn config_fields(c: &ModelConfig) -> Vec<(&'static str, String)> {
    vec![
        ("d_model", c.d_model.to_string()),
        ("n_heads", c.n_heads.to_string()),
        ("n_layers", c.n_layers.to_string()),
        ("dropout", fmt_float(c.dropout)),
        ("d_company", c.d_company.to_string()),
        ("d_market", c.d_market.to_string()),
        ("ffn_multiplier", c.ffn_multiplier.to_string()),
        ("use_gating", c.use_gating.to_string()),
        ("use_relation_bias", c.use_relation_bias.to_string()),
        ("use_cross_stock_attention", c.use_cross_stock_attention.to_string()),
        ("use_temporal_encoder", c.use_temporal_encoder.to_string()),
    ]
}

fn parse_config(fields: &BTreeMap<String, String>) -> Result<ModelConfig> {
    let get = |k: &str| {
        fields
            .get(k)
            .ok_or_else(|| anyhow!("checkpoint manifest lacks config `{k}`"))
    };
    let uint = |k: &str| -> Result<usize> {
        get(k)?
            .parse()
            .map_err(|_| anyhow!("checkpoint config `{k}` is not an integer"))
    };
    let flag = |k: &str| -> Result<bool> {
        get(k)?
            .parse()
            .map_err(|_| anyhow!("checkpoint config `{k}` is not a boolean"))
    };
    let cfg = ModelConfig {
        d_model: uint("d_model")?,
        n_heads: uint("n_heads")?,
        n_layers: uint("n_layers")?,
        dropout: get("dropout")?
            .parse()
            .map_err(|_| anyhow!("checkpoint config `dropout` is not a number"))?,
        d_company: uint("d_company")?,
        d_market: uint("d_market")?,
        ffn_multiplier: uint("ffn_multiplier")?,
        use_gating: flag("use_gating")?,
        use_relation_bias: flag("use_relation_bias")?,
        use_cross_stock_attention: flag("use_cross_stock_attention")?,
        use_temporal_encoder: flag("use_temporal_encoder")?,
    };
    let known: Vec<&str> = config_fields(&cfg).into_iter().map(|f| f.0).collect();
    if let Some(k) = fields.keys().find(|k| !known.contains(&k.as_str())) {
        bail!("checkpoint manifest has unknown config `{k}`");
    }
    Ok(cfg)
}

/// Serializes a model to bytes.
pub fn to_bytes(model: &GriffinModel) -> Vec<u8> {
    let mut manifest = format!("{MAGIC}\n");
    for (k, v) in config_fields(&model.config) {
        manifest.push_str(&format!("config {k} {v}\n"));
    }
    let mut offset = 0;
    for (name, p) in model.params.iter() {
        let (r, c) = p.value.shape();
        manifest.push_str(&format!("param {name} {r} {c} {offset}\n"));
        offset += r * c;
    }
    manifest.push_str(&format!("data {offset}\n"));
    let mut out = manifest.into_bytes();
    out.reserve(offset * 8);
    for (_, p) in model.params.iter() {
        for v in p.value.as_slice() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

/// Parses [`to_bytes`] output, checking every block against the layout the
/// stored configuration implies.
pub fn from_bytes(bytes: &[u8]) -> Result<GriffinModel> {
    let mut pos = 0;
    let mut next_line = || -> Result<&str> {
        let rest = &bytes[pos..];
        let end = rest
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| anyhow!("truncated checkpoint manifest"))?;
        pos += end + 1;
        std::str::from_utf8(&rest[..end]).map_err(|_| anyhow!("checkpoint manifest is not UTF-8"))
    };
    ensure!(next_line()? == MAGIC, "not a griffin checkpoint (bad first line)");
    let mut fields = BTreeMap::new();
    let mut blocks: Vec<(String, usize, usize, usize)> = Vec::new();
    let total: usize = loop {
        let line = next_line()?;
        let parts: Vec<&str> = line.split(' ').collect();
        match parts.as_slice() {
            ["config", k, v] => {
                ensure!(
                    fields.insert(k.to_string(), v.to_string()).is_none(),
                    "config `{k}` repeated"
                );
            }
            ["param", name, r, c, off] => {
                let num = |s: &str| {
                    s.parse::<usize>()
                        .map_err(|_| anyhow!("bad number in manifest line `{line}`"))
                };
                blocks.push((name.to_string(), num(r)?, num(c)?, num(off)?));
            }
            ["data", n] => break n.parse().map_err(|_| anyhow!("bad data count `{n}`"))?,
            _ => bail!("unrecognized manifest line `{line}`"),
        }
    };
    let data = &bytes[pos..];
    ensure!(
        data.len() == total * 8,
        "checkpoint holds {} data bytes, manifest promises {}",
        data.len(),
        total * 8
    );
    let config = parse_config(&fields)?;
    config.validate()?;
    let layout = parameter_layout(&config);
    ensure!(
        layout.len() == blocks.len(),
        "checkpoint has {} parameters, configuration expects {}",
        blocks.len(),
        layout.len()
    );
    let by_name: BTreeMap<&str, &(String, usize, usize, usize)> = blocks.iter().map(|b| (b.0.as_str(), b)).collect();
    let mut params = ParamStore::new();
    for spec in &layout {
        let (_, r, c, off) = by_name
            .get(spec.name.as_str())
            .ok_or_else(|| anyhow!("checkpoint lacks parameter `{}`", spec.name))?;
        ensure!(
            (*r, *c) == (spec.rows, spec.cols),
            "parameter `{}` is {r}x{c} in the checkpoint, configuration expects {}x{}",
            spec.name,
            spec.rows,
            spec.cols
        );
        ensure!(
            off + r * c <= total,
            "parameter `{}` runs past the data block",
            spec.name
        );
        let values: Vec<f64> = data[off * 8..(off + r * c) * 8]
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().expect("8-byte chunk")))
            .collect();
        params.insert(&spec.name, Matrix::new(*r, *c, values)?, spec.decay)?;
    }
    Ok(GriffinModel::from_params(config, params)?)
}

pub fn save(model: &GriffinModel, path: &Path) -> Result<()> {
    std::fs::write(path, to_bytes(model)).with_context(|| format!("cannot write {}", path.display()))
}

pub fn load(path: &Path) -> Result<GriffinModel> {
    let bytes = std::fs::read(path).with_context(|| format!("cannot read {}", path.display()))?;
    from_bytes(&bytes).with_context(|| format!("{}", path.display()))
}
