//! Checkpoint directory layout:
//!
//! * `manifest.txt` - `key = value` lines plus one
//!   `array <name> <d0,d1,..> <offset> <bytes>` line per tensor.
//! * `payload.bin` - the tensors as concatenated little-endian `f32`.
//!
//! Parameters are computed in `f64` and stored as `f32`; a reloaded model
//! holds the `f32` values widened back to `f64`.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::nets::{BaseConfig, BaseModel, Parameterized, Selector, SelectorConfig, CELL_VARIANT};
use crate::numgraph::Tensor;

pub const FORMAT_VERSION: u32 = 1;
const MANIFEST: &str = "manifest.txt";
const PAYLOAD: &str = "payload.bin";

/// Free-form provenance stored alongside the arrays.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CheckpointInfo {
    pub seed: u64,
    /// Number of completed training stages.
    pub stage: usize,
    /// Hyperparameters, written as `hp.<key> = <value>`.
    pub hyper: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub models: Vec<BaseModel>,
    pub selector: Option<Selector>,
    pub info: CheckpointInfo,
}

fn err(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

fn join(v: &[usize]) -> String {
    v.iter().map(|d| d.to_string()).collect::<Vec<_>>().join(",")
}

fn parse_list(s: &str) -> Result<Vec<usize>> {
    if s.is_empty() {
        return Ok(Vec::new());
    }
    s.split(',')
        .map(|p| p.trim().parse().map_err(|_| err(format!("bad integer list '{s}'"))))
        .collect()
}

/// Writes `models` (and optionally the selector) under directory `dir`.
pub fn save_checkpoint(dir: &Path, models: &[BaseModel], selector: Option<&Selector>, info: &CheckpointInfo) -> Result<()> {
    let first = models.first().ok_or_else(|| err("nothing to save"))?;
    let cfg = first.config();
    if models.iter().any(|m| m.config() != cfg) {
        return Err(err("all base models must share one architecture"));
    }
    if let Some(sel) = selector {
        if sel.config().input_dim != 2 * cfg.num_classes + 1 {
            return Err(err("selector input width does not match the base models"));
        }
    }

    let mut manifest = String::new();
    let _ = writeln!(manifest, "format = cascade-checkpoint");
    let _ = writeln!(manifest, "version = {FORMAT_VERSION}");
    let _ = writeln!(manifest, "dtype = f32le");
    let _ = writeln!(
        manifest,
        "precision = parameters stored as float32; reload widens them to float64 exactly"
    );
    let _ = writeln!(manifest, "input_dim = {}", cfg.input_dim);
    let _ = writeln!(manifest, "hidden = {}", join(&cfg.hidden));
    let _ = writeln!(manifest, "num_classes = {}", cfg.num_classes);
    let _ = writeln!(manifest, "models = {}", models.len());
    match selector {
        Some(sel) => {
            let _ = writeln!(manifest, "cell = {CELL_VARIANT}");
            let _ = writeln!(manifest, "selector_hidden = {}", sel.config().hidden);
        }
        None => {
            let _ = writeln!(manifest, "cell = none");
        }
    }
    let _ = writeln!(manifest, "seed = {}", info.seed);
    let _ = writeln!(manifest, "stage = {}", info.stage);
    for (k, v) in &info.hyper {
        let _ = writeln!(manifest, "hp.{k} = {v}");
    }

    let mut payload: Vec<u8> = Vec::new();
    let mut add = |name: String, t: &Tensor, manifest: &mut String| {
        let offset = payload.len();
        for v in t.data() {
            payload.extend_from_slice(&(*v as f32).to_le_bytes());
        }
        let _ = writeln!(
            manifest,
            "array {name} {} {offset} {}",
            join(t.shape()),
            payload.len() - offset
        );
    };
    for (i, m) in models.iter().enumerate() {
        for (name, t) in m.named_params() {
            add(format!("model.{i}.{name}"), t, &mut manifest);
        }
    }
    if let Some(sel) = selector {
        for (name, t) in sel.named_params() {
            add(format!("selector.{name}"), t, &mut manifest);
        }
    }
    let _ = writeln!(manifest, "payload_bytes = {}", payload.len());

    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join(PAYLOAD), &payload)?;
    std::fs::write(dir.join(MANIFEST), manifest)?;
    Ok(())
}

struct ArrayEntry {
    shape: Vec<usize>,
    offset: usize,
    bytes: usize,
}

pub fn load_checkpoint(dir: &Path) -> Result<Checkpoint> {
    let text = std::fs::read_to_string(dir.join(MANIFEST))?;
    let payload = std::fs::read(dir.join(PAYLOAD))?;

    let mut keys: BTreeMap<String, String> = BTreeMap::new();
    let mut arrays: BTreeMap<String, ArrayEntry> = BTreeMap::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if let Some(rest) = line.strip_prefix("array ") {
            let parts: Vec<&str> = rest.split_whitespace().collect();
            let [name, shape, offset, bytes] = parts[..] else {
                return Err(err(format!("manifest line {}: malformed array entry", lineno + 1)));
            };
            let num = |s: &str| {
                s.parse::<usize>()
                    .map_err(|_| err(format!("manifest line {}: bad number '{s}'", lineno + 1)))
            };
            let entry = ArrayEntry {
                shape: parse_list(shape)?,
                offset: num(offset)?,
                bytes: num(bytes)?,
            };
            if arrays.insert(name.to_string(), entry).is_some() {
                return Err(err(format!("array {name} listed twice")));
            }
        } else if let Some((k, v)) = line.split_once('=') {
            keys.insert(k.trim().to_string(), v.trim().to_string());
        } else {
            return Err(err(format!("manifest line {}: expected key = value", lineno + 1)));
        }
    }
    let get = |k: &str| {
        keys.get(k)
            .map(String::as_str)
            .ok_or_else(|| err(format!("manifest lacks '{k}'")))
    };
    let num = |k: &str| -> Result<usize> {
        get(k)?
            .parse()
            .map_err(|_| err(format!("manifest key '{k}' is not an integer")))
    };

    if get("format")? != "cascade-checkpoint" {
        return Err(err("not a cascade checkpoint"));
    }
    let version: u32 = get("version")?.parse().map_err(|_| err("bad version"))?;
    if version != FORMAT_VERSION {
        return Err(err(format!(
            "format version {version} unsupported (expected {FORMAT_VERSION})"
        )));
    }
    if get("dtype")? != "f32le" {
        return Err(err("unsupported dtype"));
    }
    let declared = num("payload_bytes")?;
    if declared != payload.len() {
        return Err(err(format!(
            "payload has {} bytes, manifest declares {declared}",
            payload.len()
        )));
    }
    for (name, a) in &arrays {
        let end = a.offset.checked_add(a.bytes).ok_or_else(|| err("array extent overflows"))?;
        if end > payload.len() {
            return Err(err(format!("array {name} extends past the payload")));
        }
        if a.bytes != 4 * a.shape.iter().product::<usize>() {
            return Err(err(format!("array {name}: byte length does not match shape {:?}", a.shape)));
        }
    }

    let base_cfg = BaseConfig {
        input_dim: num("input_dim")?,
        hidden: parse_list(get("hidden")?)?,
        num_classes: num("num_classes")?,
    };
    let count = num("models")?;
    let selector_cfg = match get("cell")? {
        "none" => None,
        c if c == CELL_VARIANT => Some(SelectorConfig::for_classes(base_cfg.num_classes, num("selector_hidden")?)),
        other => return Err(err(format!("unknown selector cell '{other}'"))),
    };

    let mut used = 0usize;
    let mut fill = |prefix: String, target: &mut dyn Parameterized| -> Result<()> {
        for (name, t) in target.named_params_mut() {
            let key = format!("{prefix}.{name}");
            let a = arrays.get(&key).ok_or_else(|| err(format!("array {key} missing")))?;
            if a.shape != t.shape() {
                return Err(err(format!(
                    "array {key}: shape {:?}, model expects {:?}",
                    a.shape,
                    t.shape()
                )));
            }
            let bytes = &payload[a.offset..a.offset + a.bytes];
            for (dst, c) in t.data_mut().iter_mut().zip(bytes.chunks_exact(4)) {
                *dst = f64::from(f32::from_le_bytes([c[0], c[1], c[2], c[3]]));
            }
            used += 1;
        }
        Ok(())
    };

    let mut models = Vec::with_capacity(count);
    for i in 0..count {
        let mut m = BaseModel::zeros(base_cfg.clone())?;
        fill(format!("model.{i}"), &mut m)?;
        models.push(m);
    }
    let selector = match selector_cfg {
        Some(cfg) => {
            let mut s = Selector::zeros(cfg)?;
            fill("selector".into(), &mut s)?;
            Some(s)
        }
        None => None,
    };
    if used != arrays.len() {
        return Err(err(format!("manifest lists {} arrays, model uses {used}", arrays.len())));
    }

    let hyper = keys
        .iter()
        .filter_map(|(k, v)| k.strip_prefix("hp.").map(|k| (k.to_string(), v.clone())))
        .collect();
    Ok(Checkpoint {
        models,
        selector,
        info: CheckpointInfo {
            seed: get("seed")?.parse().map_err(|_| err("bad seed"))?,
            stage: num("stage")?,
            hyper,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::substream;

    fn fixture() -> (Vec<BaseModel>, Selector) {
        let cfg = BaseConfig {
            input_dim: 3,
            hidden: vec![5, 4],
            num_classes: 2,
        };
        let mut rng = substream(3, "init");
        let models = (0..2).map(|_| BaseModel::new(cfg.clone(), &mut rng).unwrap()).collect();
        let sel = Selector::new(SelectorConfig::for_classes(2, 6), &mut rng).unwrap();
        (models, sel)
    }

    #[test]
    fn round_trip_restores_f32_values() {
        let (mut models, mut sel) = fixture();
        let dir = tempfile::tempdir().unwrap();
        let mut info = CheckpointInfo {
            seed: 9,
            stage: 2,
            ..Default::default()
        };
        info.hyper.insert("omega2".into(), "0.01".into());
        save_checkpoint(dir.path(), &models, Some(&sel), &info).unwrap();
        let ck = load_checkpoint(dir.path()).unwrap();

        models.iter_mut().for_each(|m| m.quantize_f32());
        sel.quantize_f32();
        assert_eq!(ck.models, models);
        assert_eq!(ck.selector.as_ref(), Some(&sel));
        assert_eq!(ck.info, info);
    }

    #[test]
    fn manifest_lists_every_array_once() {
        let (models, sel) = fixture();
        let dir = tempfile::tempdir().unwrap();
        save_checkpoint(dir.path(), &models, Some(&sel), &CheckpointInfo::default()).unwrap();
        let text = std::fs::read_to_string(dir.path().join(MANIFEST)).unwrap();
        let names: Vec<&str> = text
            .lines()
            .filter_map(|l| l.strip_prefix("array "))
            .map(|l| l.split_whitespace().next().unwrap())
            .collect();
        let expected = models.iter().map(|m| m.named_params().len()).sum::<usize>() + sel.named_params().len();
        assert_eq!(names.len(), expected);
        let mut dedup = names.clone();
        dedup.sort();
        dedup.dedup();
        assert_eq!(dedup.len(), names.len());
    }

    #[test]
    fn truncated_payload_is_rejected() {
        let (models, sel) = fixture();
        let dir = tempfile::tempdir().unwrap();
        save_checkpoint(dir.path(), &models, Some(&sel), &CheckpointInfo::default()).unwrap();
        let p = dir.path().join(PAYLOAD);
        let bytes = std::fs::read(&p).unwrap();
        std::fs::write(&p, &bytes[..bytes.len() - 8]).unwrap();
        assert!(load_checkpoint(dir.path()).is_err());
    }

    #[test]
    fn version_mismatch_is_rejected() {
        let (models, _) = fixture();
        let dir = tempfile::tempdir().unwrap();
        save_checkpoint(dir.path(), &models, None, &CheckpointInfo::default()).unwrap();
        let m = dir.path().join(MANIFEST);
        let text = std::fs::read_to_string(&m).unwrap().replace("version = 1", "version = 7");
        std::fs::write(&m, text).unwrap();
        let e = load_checkpoint(dir.path()).unwrap_err().to_string();
        assert!(e.contains("version"), "{e}");
    }

    #[test]
    fn pool_without_selector_round_trips() {
        let (models, _) = fixture();
        let dir = tempfile::tempdir().unwrap();
        save_checkpoint(dir.path(), &models, None, &CheckpointInfo::default()).unwrap();
        let ck = load_checkpoint(dir.path()).unwrap();
        assert!(ck.selector.is_none());
        assert_eq!(ck.models.len(), 2);
    }
}
