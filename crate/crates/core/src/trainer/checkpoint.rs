//! Checkpoint format: a `key = value` text header naming the format version,
//! dimensions and full configuration, then a blank line, then flat
//! little-endian parameter blocks in a fixed order (word table, pos1, pos2,
//! filters, filter bias, initial relation embeddings, propagation weights in
//! layer order, class bias). Block width follows the configured precision,
//! and parameters are kept representable at that width during training, so a
//! round trip is always bitwise.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use crate::encoder::{EmbeddingTables, PcnnParams};
use crate::graph::{Activation, GcnParams};
use crate::tensor::Tensor;

use super::{ModelParams, Precision, TrainConfig, TrainError};

const MAGIC: &str = "tieforge checkpoint v1";

/// A deserialized checkpoint.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub params: ModelParams,
    pub config: TrainConfig,
    pub k: usize,
    pub vocab_size: usize,
}

impl Checkpoint {
    /// Rejects the checkpoint when it was trained against a different
    /// relation inventory.
    pub fn ensure_relations(&self, k: usize) -> Result<(), TrainError> {
        if self.k != k {
            return Err(TrainError::Checkpoint(format!(
                "checkpoint has k={}, relation mapping has k={k}",
                self.k
            )));
        }
        Ok(())
    }
}

fn header(params: &ModelParams, config: &TrainConfig) -> String {
    let mut out = String::new();
    out.push_str(MAGIC);
    out.push('\n');
    let clip = match config.clip_norm {
        Some(c) => c.to_string(),
        None => "none".to_string(),
    };
    let fields: Vec<(&str, String)> = vec![
        ("precision", config.precision.as_str().to_string()),
        ("k", params.relation_count().to_string()),
        ("d", config.rel_dim().to_string()),
        ("vocab_size", params.vocab_size().to_string()),
        ("learning_rate", config.learning_rate.to_string()),
        ("theta", config.theta.to_string()),
        ("lambda", config.lambda.to_string()),
        ("gcn_layers", config.gcn_layers.to_string()),
        ("kernel", config.kernel.to_string()),
        ("feature_maps", config.feature_maps.to_string()),
        ("word_dim", config.word_dim.to_string()),
        ("pos_dim", config.pos_dim.to_string()),
        ("max_pos_distance", config.max_pos_distance.to_string()),
        ("batch_size", config.batch_size.to_string()),
        ("epochs", config.epochs.to_string()),
        ("seed", config.seed.to_string()),
        ("graph_enabled", config.graph_enabled.to_string()),
        ("activation", config.activation.as_str().to_string()),
        ("clip_norm", clip),
        ("renormalize_rows", config.renormalize_rows.to_string()),
    ];
    for (key, value) in fields {
        out.push_str(&format!("{key} = {value}\n"));
    }
    out.push('\n');
    out
}

fn push_block(bytes: &mut Vec<u8>, tensor: &Tensor, precision: Precision) {
    match precision {
        Precision::F64 => {
            for &v in tensor.values() {
                bytes.extend_from_slice(&v.to_le_bytes());
            }
        }
        Precision::F32 => {
            for &v in tensor.values() {
                bytes.extend_from_slice(&(v as f32).to_le_bytes());
            }
        }
    }
}

/// Serializes parameters and configuration to bytes.
pub fn checkpoint_bytes(params: &ModelParams, config: &TrainConfig) -> Vec<u8> {
    let mut bytes = header(params, config).into_bytes();
    let mut blocks: Vec<&Tensor> = vec![
        &params.tables.word,
        &params.tables.pos1,
        &params.tables.pos2,
        &params.pcnn.filters,
        &params.pcnn.bias,
        &params.gcn.h0,
    ];
    blocks.extend(params.gcn.weights.iter());
    blocks.push(&params.class_bias);
    for block in blocks {
        push_block(&mut bytes, block, config.precision);
    }
    bytes
}

pub fn save_checkpoint(
    params: &ModelParams,
    config: &TrainConfig,
    path: impl AsRef<Path>,
) -> Result<(), TrainError> {
    fs::write(path, checkpoint_bytes(params, config))?;
    Ok(())
}

struct BlockReader<'a> {
    bytes: &'a [u8],
    offset: usize,
    precision: Precision,
}

impl<'a> BlockReader<'a> {
    fn read(&mut self, shape: Vec<usize>) -> Result<Tensor, TrainError> {
        let len: usize = shape.iter().product();
        let width = match self.precision {
            Precision::F64 => 8,
            Precision::F32 => 4,
        };
        let end = self.offset + len * width;
        if end > self.bytes.len() {
            return Err(TrainError::Checkpoint(format!(
                "truncated: need {} bytes for block of shape {:?}, {} remain",
                len * width,
                shape,
                self.bytes.len() - self.offset
            )));
        }
        let mut values = Vec::with_capacity(len);
        for chunk in self.bytes[self.offset..end].chunks_exact(width) {
            let v = match self.precision {
                Precision::F64 => f64::from_le_bytes(chunk.try_into().unwrap()),
                Precision::F32 => f32::from_le_bytes(chunk.try_into().unwrap()) as f64,
            };
            values.push(v);
        }
        self.offset = end;
        Ok(Tensor::new(shape, values).expect("shape/length agree"))
    }
}

fn parse_field<T: std::str::FromStr>(
    fields: &HashMap<&str, &str>,
    key: &str,
) -> Result<T, TrainError> {
    let raw = fields
        .get(key)
        .ok_or_else(|| TrainError::Checkpoint(format!("missing header field {key}")))?;
    raw.parse()
        .map_err(|_| TrainError::Checkpoint(format!("bad value for {key}: {raw}")))
}

/// Parses checkpoint bytes, verifying the format version, dimensions and
/// exact payload length. A short or padded file fails without partial state.
pub fn parse_checkpoint(bytes: &[u8]) -> Result<Checkpoint, TrainError> {
    let header_end = bytes
        .windows(2)
        .position(|w| w == b"\n\n")
        .ok_or_else(|| TrainError::Checkpoint("missing header terminator".into()))?;
    let header = std::str::from_utf8(&bytes[..header_end])
        .map_err(|_| TrainError::Checkpoint("header is not UTF-8".into()))?;
    let mut lines = header.lines();
    let magic = lines.next().unwrap_or_default();
    if magic != MAGIC {
        return Err(TrainError::Checkpoint(format!(
            "unsupported format: expected {MAGIC:?}, found {magic:?}"
        )));
    }
    let mut fields: HashMap<&str, &str> = HashMap::new();
    for line in lines {
        if let Some((key, value)) = line.split_once(" = ") {
            fields.insert(key, value);
        }
    }

    let precision = Precision::parse(fields.get("precision").copied().unwrap_or_default())
        .ok_or_else(|| TrainError::Checkpoint("bad or missing precision".into()))?;
    let activation = Activation::parse(fields.get("activation").copied().unwrap_or_default())
        .ok_or_else(|| TrainError::Checkpoint("bad or missing activation".into()))?;
    let clip_norm = match fields.get("clip_norm").copied() {
        Some("none") => None,
        Some(raw) => Some(raw.parse().map_err(|_| {
            TrainError::Checkpoint(format!("bad value for clip_norm: {raw}"))
        })?),
        None => return Err(TrainError::Checkpoint("missing header field clip_norm".into())),
    };

    let k: usize = parse_field(&fields, "k")?;
    let d: usize = parse_field(&fields, "d")?;
    let vocab_size: usize = parse_field(&fields, "vocab_size")?;
    let config = TrainConfig {
        learning_rate: parse_field(&fields, "learning_rate")?,
        theta: parse_field(&fields, "theta")?,
        lambda: parse_field(&fields, "lambda")?,
        gcn_layers: parse_field(&fields, "gcn_layers")?,
        kernel: parse_field(&fields, "kernel")?,
        feature_maps: parse_field(&fields, "feature_maps")?,
        word_dim: parse_field(&fields, "word_dim")?,
        pos_dim: parse_field(&fields, "pos_dim")?,
        max_pos_distance: parse_field(&fields, "max_pos_distance")?,
        batch_size: parse_field(&fields, "batch_size")?,
        epochs: parse_field(&fields, "epochs")?,
        seed: parse_field(&fields, "seed")?,
        graph_enabled: parse_field(&fields, "graph_enabled")?,
        activation,
        clip_norm,
        precision,
        renormalize_rows: parse_field(&fields, "renormalize_rows")?,
    };
    if d != config.rel_dim() {
        return Err(TrainError::Checkpoint(format!(
            "dimension mismatch: d={d} but 3 * feature_maps = {}",
            config.rel_dim()
        )));
    }

    let mut reader = BlockReader {
        bytes,
        offset: header_end + 2,
        precision,
    };
    let word = reader.read(vec![vocab_size, config.word_dim])?;
    let pos1 = reader.read(vec![config.pos_vocab(), config.pos_dim])?;
    let pos2 = reader.read(vec![config.pos_vocab(), config.pos_dim])?;
    let filters = reader.read(vec![config.kernel, config.input_dim(), config.feature_maps])?;
    let bias = reader.read(vec![config.feature_maps])?;
    let h0 = reader.read(vec![k, d])?;
    let weights = (0..config.gcn_layers)
        .map(|_| reader.read(vec![d, d]))
        .collect::<Result<Vec<_>, _>>()?;
    let class_bias = reader.read(vec![k])?;
    if reader.offset != bytes.len() {
        return Err(TrainError::Checkpoint(format!(
            "{} unexpected trailing bytes",
            bytes.len() - reader.offset
        )));
    }

    Ok(Checkpoint {
        params: ModelParams {
            tables: EmbeddingTables { word, pos1, pos2 },
            pcnn: PcnnParams { filters, bias },
            gcn: GcnParams { h0, weights },
            class_bias,
        },
        config,
        k,
        vocab_size,
    })
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint, TrainError> {
    parse_checkpoint(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small_config(precision: Precision) -> TrainConfig {
        TrainConfig {
            word_dim: 4,
            pos_dim: 2,
            feature_maps: 3,
            precision,
            ..TrainConfig::default()
        }
    }

    fn fresh_params(config: &TrainConfig, vocab: usize, k: usize, seed: u64) -> ModelParams {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        ModelParams::init(config, vocab, k, &mut rng)
    }

    #[test]
    fn round_trip_is_bitwise_in_f64_mode() {
        let config = small_config(Precision::F64);
        let params = fresh_params(&config, 17, 5, 1);
        let bytes = checkpoint_bytes(&params, &config);
        let loaded = parse_checkpoint(&bytes).unwrap();
        assert_eq!(loaded.params, params);
        assert_eq!(loaded.config, config);
        assert_eq!(loaded.k, 5);
        assert_eq!(loaded.vocab_size, 17);
    }

    #[test]
    fn round_trip_is_bitwise_in_f32_mode() {
        // f32-mode parameters are quantized at init, so the narrow blocks
        // lose nothing
        let config = small_config(Precision::F32);
        let params = fresh_params(&config, 9, 3, 2);
        let loaded = parse_checkpoint(&checkpoint_bytes(&params, &config)).unwrap();
        assert_eq!(loaded.params, params);
    }

    #[test]
    fn truncated_file_fails_without_partial_state() {
        let config = small_config(Precision::F64);
        let params = fresh_params(&config, 9, 3, 3);
        let bytes = checkpoint_bytes(&params, &config);
        let cut = bytes.len() - 5;
        match parse_checkpoint(&bytes[..cut]) {
            Err(TrainError::Checkpoint(message)) => {
                assert!(message.contains("truncated"), "{message}")
            }
            other => panic!("expected checkpoint error, got {other:?}"),
        }
    }

    #[test]
    fn trailing_bytes_are_rejected() {
        let config = small_config(Precision::F64);
        let params = fresh_params(&config, 9, 3, 4);
        let mut bytes = checkpoint_bytes(&params, &config);
        bytes.extend_from_slice(&[0u8; 4]);
        assert!(matches!(
            parse_checkpoint(&bytes),
            Err(TrainError::Checkpoint(_))
        ));
    }

    #[test]
    fn wrong_magic_is_rejected() {
        assert!(matches!(
            parse_checkpoint(b"something else v9\nk = 3\n\n"),
            Err(TrainError::Checkpoint(_))
        ));
    }

    #[test]
    fn relation_count_mismatch_names_both_sizes() {
        let config = small_config(Precision::F64);
        let params = fresh_params(&config, 9, 12, 5);
        let loaded = parse_checkpoint(&checkpoint_bytes(&params, &config)).unwrap();
        let err = loaded.ensure_relations(53).unwrap_err();
        let message = err.to_string();
        assert!(message.contains("k=12") && message.contains("k=53"), "{message}");
        assert!(loaded.ensure_relations(12).is_ok());
    }

    #[test]
    fn save_load_predict_is_identical() {
        use crate::corpus::{generate_synthetic, SynthSpec};
        use crate::trainer::predict_bag;
        use crate::TiesGraph;

        let out = generate_synthetic(&SynthSpec {
            num_relations: 4,
            seed_weights: vec![],
            num_bags: 12,
            vocab_size: 20,
            implications: vec![],
            exclusions: vec![],
            na_fraction: 0.2,
            seed: 6,
            ..SynthSpec::default()
        })
        .unwrap();
        let config = small_config(Precision::F64);
        let graph = TiesGraph::build(&out.train, 4, config.theta).unwrap();
        let params = fresh_params(&config, out.vocab.len(), 4, 7);
        let loaded = parse_checkpoint(&checkpoint_bytes(&params, &config)).unwrap();
        let before = predict_bag(&out.train[0], &params, &graph, &config).unwrap();
        let after = predict_bag(&out.train[0], &loaded.params, &graph, &loaded.config).unwrap();
        assert_eq!(before, after); // 0 ulp
    }
}
