//! Which parameters a finetuning strategy updates.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::{ModelConfig, S2utConfig, S2utModel};
use crate::tensor::ParamStore;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StrategyKind {
    /// Encoder norms and self-attention, whole decoder.
    LnaE,
    /// Whole encoder, decoder norms and both attentions.
    LnaD,
    /// Norms and attention on both sides.
    LnaEd,
    Full,
}

impl StrategyKind {
    pub const ALL: [StrategyKind; 4] = [StrategyKind::LnaEd, StrategyKind::LnaE, StrategyKind::LnaD, StrategyKind::Full];

    pub fn as_str(self) -> &'static str {
        match self {
            StrategyKind::LnaE => "lna_e",
            StrategyKind::LnaD => "lna_d",
            StrategyKind::LnaEd => "lna_ed",
            StrategyKind::Full => "full",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FinetuneStrategy {
    pub kind: StrategyKind,
    /// Updates 1..=k train with the encoder frozen; 0 disables.
    #[serde(default)]
    pub encoder_freeze_steps: usize,
}

impl FinetuneStrategy {
    pub fn new(kind: StrategyKind) -> Self {
        FinetuneStrategy { kind, encoder_freeze_steps: 0 }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamPartition {
    pub trainable: BTreeSet<String>,
    pub frozen: BTreeSet<String>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Side {
    Encoder,
    Decoder,
    Adaptor,
    Aux,
}

/// Where a parameter lives and whether it belongs to a norm or attention module.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct NameClass {
    pub side: Side,
    pub norm: bool,
    pub self_attn: bool,
    pub cross_attn: bool,
}

fn is_norm(seg: &str) -> bool {
    seg.starts_with("ln")
}

fn unknown(name: &str) -> Error {
    Error::UnknownParam(name.to_string())
}

/// Classifies a name of the form `component[.layer].sublayer.role`.
pub fn classify_name(name: &str) -> Result<NameClass> {
    let segs: Vec<&str> = name.split('.').collect();
    if segs.len() < 2 || segs.iter().any(|s| s.is_empty()) {
        return Err(unknown(name));
    }
    let side = match segs[0] {
        "encoder" => Side::Encoder,
        "decoder" => Side::Decoder,
        "adaptor" => Side::Adaptor,
        "aux" => Side::Aux,
        _ => return Err(unknown(name)),
    };
    let plain = NameClass { side, norm: false, self_attn: false, cross_attn: false };
    match side {
        Side::Adaptor => {
            if segs.len() == 3 && segs[1] == "conv" {
                Ok(plain)
            } else {
                Err(unknown(name))
            }
        }
        Side::Aux => {
            if segs[1].parse::<usize>().is_ok() && segs.len() >= 3 {
                Ok(plain)
            } else {
                Err(unknown(name))
            }
        }
        Side::Encoder | Side::Decoder => {
            let rest = &segs[1..];
            if rest[0].parse::<usize>().is_ok() {
                if rest.len() < 3 {
                    return Err(unknown(name));
                }
                let sub = rest[1];
                let class = match sub {
                    "self_attn" => NameClass { self_attn: true, ..plain },
                    "encoder_attn" if side == Side::Decoder => NameClass { cross_attn: true, ..plain },
                    "ffn" | "ffn1" | "ffn2" => plain,
                    "conv" if side == Side::Encoder => plain,
                    s if is_norm(s) => NameClass { norm: true, ..plain },
                    _ => return Err(unknown(name)),
                };
                return Ok(class);
            }
            match (side, rest) {
                (_, [ln, _role]) if is_norm(ln) => Ok(NameClass { norm: true, ..plain }),
                (Side::Encoder, ["frontend", ln, _]) if is_norm(ln) => Ok(NameClass { norm: true, ..plain }),
                (Side::Encoder, ["frontend", _]) | (Side::Encoder, ["mask_emb"]) => Ok(plain),
                (Side::Decoder, ["embed_tokens"]) | (Side::Decoder, ["embed_positions"]) => Ok(plain),
                _ => Err(unknown(name)),
            }
        }
    }
}

fn trainable_under(kind: StrategyKind, c: NameClass) -> bool {
    let lna_enc = c.norm || c.self_attn;
    let lna_dec = c.norm || c.self_attn || c.cross_attn;
    match (kind, c.side) {
        (_, Side::Adaptor) | (_, Side::Aux) | (StrategyKind::Full, _) => true,
        (StrategyKind::LnaE, Side::Encoder) => lna_enc,
        (StrategyKind::LnaE, Side::Decoder) => true,
        (StrategyKind::LnaD, Side::Encoder) => true,
        (StrategyKind::LnaD, Side::Decoder) => lna_dec,
        (StrategyKind::LnaEd, Side::Encoder) => lna_enc,
        (StrategyKind::LnaEd, Side::Decoder) => lna_dec,
    }
}

/// Splits every name into trainable and frozen sets; any unrecognized name is an error.
pub fn select_finetune_params<'a>(
    names: impl IntoIterator<Item = &'a str>,
    kind: StrategyKind,
) -> Result<ParamPartition> {
    let mut trainable = BTreeSet::new();
    let mut frozen = BTreeSet::new();
    for n in names {
        if trainable_under(kind, classify_name(n)?) {
            trainable.insert(n.to_string());
        } else {
            frozen.insert(n.to_string());
        }
    }
    Ok(ParamPartition { trainable, frozen })
}

/// The set actually updated at 1-based update `step`.
pub fn freeze_mask_at(step: usize, strategy: &FinetuneStrategy, partition: &ParamPartition) -> BTreeSet<String> {
    if step <= strategy.encoder_freeze_steps {
        partition.trainable.iter().filter(|n| !n.starts_with("encoder.")).cloned().collect()
    } else {
        partition.trainable.clone()
    }
}

/// Trainable scalar counts per strategy for the large speech-to-unit
/// configuration, computed from declarations only.
pub fn full_scale_trainable_counts() -> Result<Vec<(StrategyKind, usize)>> {
    let cfg = S2utConfig { model: ModelConfig::full_scale(), aux: Vec::new() };
    trainable_counts(&cfg)
}

pub fn trainable_counts(cfg: &S2utConfig) -> Result<Vec<(StrategyKind, usize)>> {
    let mut store = ParamStore::new();
    S2utModel::declare(&mut store, cfg)?;
    StrategyKind::ALL
        .iter()
        .map(|&k| {
            let p = select_finetune_params(store.names(), k)?;
            Ok((k, store.count_of(&p.trainable)))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn classifies_examples() {
        let c = classify_name("encoder.3.self_attn.q_weight").unwrap();
        assert!(c.self_attn && c.side == Side::Encoder);
        assert!(classify_name("decoder.1.encoder_attn.out_bias").unwrap().cross_attn);
        assert!(classify_name("encoder.3.ln1.gain").unwrap().norm);
        assert!(classify_name("encoder.2.ln_conv_inner.bias").unwrap().norm);
        assert!(!classify_name("encoder.2.conv.pw1_weight").unwrap().norm);
        assert_eq!(classify_name("adaptor.conv.weight").unwrap().side, Side::Adaptor);
        for bad in ["w2v.final_proj_weight", "encoder.0.encoder_attn.q_weight", "decoder.mask_emb", "encoder", "x.y", "encoder.0.mystery.w"] {
            assert!(matches!(classify_name(bad), Err(Error::UnknownParam(_))), "{bad}");
        }
    }

    #[test]
    fn freeze_boundaries() {
        let names = ["encoder.0.ffn.fc1_weight", "adaptor.conv.weight", "decoder.0.ffn.fc1_weight"];
        let p = select_finetune_params(names, StrategyKind::Full).unwrap();
        let s = FinetuneStrategy { kind: StrategyKind::Full, encoder_freeze_steps: 5000 };
        assert!(!freeze_mask_at(5000, &s, &p).contains("encoder.0.ffn.fc1_weight"));
        assert!(freeze_mask_at(5001, &s, &p).contains("encoder.0.ffn.fc1_weight"));
        let never = FinetuneStrategy::new(StrategyKind::Full);
        assert_eq!(freeze_mask_at(1, &never, &p), p.trainable);
        let e = select_finetune_params(names, StrategyKind::LnaE).unwrap();
        let se = FinetuneStrategy { kind: StrategyKind::LnaE, encoder_freeze_steps: 3 };
        for step in 1..6 {
            assert!(freeze_mask_at(step, &se, &e).contains("adaptor.conv.weight"));
        }
    }

    #[test]
    fn full_scale_ordering() {
        let counts = full_scale_trainable_counts().unwrap();
        let v: Vec<usize> = counts.iter().map(|c| c.1).collect();
        assert!(v.windows(2).all(|w| w[0] < w[1]), "{counts:?}");
    }
}
