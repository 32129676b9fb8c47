use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::adam::AdamState;
use super::network::{Network, NetworkConfig};
use super::tensor::Tensor;
use super::train::{EpochLog, TrainedModel};
use crate::descriptor::DescriptorConfig;
use crate::error::{Error, Result};
use crate::fsio::write_atomic;

pub const CHECKPOINT_VERSION: u32 = 1;
pub const TENSOR_VERSION: u32 = 1;
const CHECKPOINT_FORMAT: &str = "eppf-checkpoint";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    /// Offset into the blob, in f64 elements.
    offset: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Header {
    format: String,
    version: u32,
    config: NetworkConfig,
    classes: Vec<String>,
    descriptor: DescriptorConfig,
    dataset_scale: Option<f64>,
    epoch: usize,
    adam_step: u64,
    has_optimizer_state: bool,
    log: Vec<EpochLog>,
    blob: String,
    byte_order: String,
    tensors: Vec<TensorEntry>,
}

/// Path of the binary parameter blob that accompanies a checkpoint header.
pub fn blob_path(header: &Path) -> PathBuf {
    header.with_extension("bin")
}

/// Writes a JSON header at `path` and little-endian f64 parameters next to
/// it. Adam moments are included only when `include_optimizer` is set.
pub fn save_checkpoint(model: &TrainedModel, path: impl AsRef<Path>, include_optimizer: bool) -> Result<()> {
    let path = path.as_ref();
    let blob = blob_path(path);
    let mut tensors = Vec::new();
    let mut bytes: Vec<u8> = Vec::new();
    let mut offset = 0usize;
    let mut push = |name: String, shape: Vec<usize>, data: &[f64], tensors: &mut Vec<TensorEntry>| {
        tensors.push(TensorEntry { name, shape, offset });
        offset += data.len();
        for v in data {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    };
    let shapes = model.network.param_shapes();
    let params = model.network.named_params();
    for ((name, data), shape) in params.iter().zip(&shapes) {
        push(name.clone(), shape.clone(), data, &mut tensors);
    }
    if include_optimizer {
        for (k, ((name, _), shape)) in params.iter().zip(&shapes).enumerate() {
            push(format!("adam.m.{name}"), shape.clone(), &model.adam.m[k], &mut tensors);
            push(format!("adam.v.{name}"), shape.clone(), &model.adam.v[k], &mut tensors);
        }
    }
    let header = Header {
        format: CHECKPOINT_FORMAT.into(),
        version: CHECKPOINT_VERSION,
        config: model.config.clone(),
        classes: model.classes.clone(),
        descriptor: model.descriptor.clone(),
        dataset_scale: model.dataset_scale,
        epoch: model.epoch,
        adam_step: model.adam.step,
        has_optimizer_state: include_optimizer,
        log: model.log.clone(),
        blob: blob
            .file_name()
            .map(|s| s.to_string_lossy().into_owned())
            .ok_or_else(|| Error::invalid("checkpoint path has no file name"))?,
        byte_order: "little-endian".into(),
        tensors,
    };
    write_atomic(&blob, &bytes)?;
    write_atomic(path, serde_json::to_string_pretty(&header)?.as_bytes())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<TrainedModel> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let header: Header = serde_json::from_str(&text)?;
    if header.format != CHECKPOINT_FORMAT || header.version != CHECKPOINT_VERSION {
        return Err(Error::invalid(format!(
            "unsupported checkpoint {} v{}",
            header.format, header.version
        )));
    }
    if header.byte_order != "little-endian" {
        return Err(Error::invalid(format!("unsupported byte order {:?}", header.byte_order)));
    }
    let blob = path.with_file_name(&header.blob);
    let raw = fs::read(&blob).map_err(|e| Error::io(&blob, e))?;
    if raw.len() % 8 != 0 {
        return Err(Error::invalid("checkpoint blob length is not a multiple of 8"));
    }
    let values: Vec<f64> = raw
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    let take = |name: &str, shape: &[usize]| -> Result<Vec<f64>> {
        let e = header
            .tensors
            .iter()
            .find(|t| t.name == name)
            .ok_or_else(|| Error::invalid(format!("checkpoint is missing tensor {name}")))?;
        let len: usize = e.shape.iter().product();
        if e.shape != shape || e.offset + len > values.len() {
            return Err(Error::ShapeMismatch(format!("checkpoint tensor {name} has shape {:?}", e.shape)));
        }
        Ok(values[e.offset..e.offset + len].to_vec())
    };

    header.config.validate()?;
    let mut network = Network::build_uninit(&header.config.input_shape, &header.config.layers)?;
    let names: Vec<String> = network.named_params().into_iter().map(|(n, _)| n).collect();
    let shapes = network.param_shapes();
    let params = names.iter().zip(&shapes).map(|(n, s)| take(n, s)).collect::<Result<Vec<_>>>()?;
    network.load_params(&params)?;
    let sizes: Vec<usize> = params.iter().map(Vec::len).collect();
    let mut adam = AdamState::zeros(&sizes);
    adam.step = header.adam_step;
    if header.has_optimizer_state {
        for (k, (n, s)) in names.iter().zip(&shapes).enumerate() {
            adam.m[k] = take(&format!("adam.m.{n}"), s)?;
            adam.v[k] = take(&format!("adam.v.{n}"), s)?;
        }
    }
    Ok(TrainedModel {
        config: header.config,
        classes: header.classes,
        descriptor: header.descriptor,
        dataset_scale: header.dataset_scale,
        network,
        adam,
        epoch: header.epoch,
        log: header.log,
    })
}

#[derive(Serialize, Deserialize)]
struct TensorFile {
    version: u32,
    shape: Vec<usize>,
    data: Vec<f64>,
}

/// JSON `{version, shape, data}` with row-major data.
pub fn tensor_to_json(t: &Tensor) -> Result<String> {
    Ok(serde_json::to_string(&TensorFile {
        version: TENSOR_VERSION,
        shape: t.shape().to_vec(),
        data: t.data().to_vec(),
    })?)
}

pub fn tensor_from_json(s: &str) -> Result<Tensor> {
    let f: TensorFile = serde_json::from_str(s)?;
    if f.version != TENSOR_VERSION {
        return Err(Error::invalid(format!("unsupported tensor version {}", f.version)));
    }
    Tensor::new(f.shape, f.data)
}

pub fn save_tensor(t: &Tensor, path: impl AsRef<Path>) -> Result<()> {
    write_atomic(path, tensor_to_json(t)?.as_bytes())
}

pub fn load_tensor(path: impl AsRef<Path>) -> Result<Tensor> {
    let path = path.as_ref();
    tensor_from_json(&fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::train::tests::{tiny_config, tiny_data};
    use crate::nn::{train, TrainOptions};

    #[test]
    fn checkpoint_round_trip() {
        let data = tiny_data(3, 2);
        let mut cfg = tiny_config(2, 9);
        cfg.epochs = 3;
        let mut model = train(&data, &cfg, &TrainOptions::default()).unwrap();
        model.dataset_scale = Some(0.5);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("model.json");

        save_checkpoint(&model, &p, false).unwrap();
        assert!(blob_path(&p).is_file());
        let mut back = load_checkpoint(&p).unwrap();
        assert_eq!(back.network.named_params(), model.network.named_params());
        assert_eq!(back.classes, model.classes);
        assert_eq!(back.dataset_scale, Some(0.5));
        assert_eq!(back.log, model.log);
        assert!(back.adam.m.iter().all(|m| m.iter().all(|&v| v == 0.0)));
        assert_eq!(back.predict(&data[0].descriptor).unwrap(), model.predict(&data[0].descriptor).unwrap());

        save_checkpoint(&model, &p, true).unwrap();
        let back = load_checkpoint(&p).unwrap();
        assert_eq!(back.adam, model.adam);
    }

    #[test]
    fn missing_blob_is_an_error() {
        let data = tiny_data(2, 2);
        let model = train(&data, &tiny_config(2, 0), &TrainOptions::default()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.json");
        save_checkpoint(&model, &p, false).unwrap();
        std::fs::remove_file(blob_path(&p)).unwrap();
        assert!(matches!(load_checkpoint(&p), Err(Error::Io { .. })));
    }

    #[test]
    fn tensor_file_round_trip() {
        let t = Tensor::new(vec![2, 3], vec![0.1, -2.0, 1e-300, 3.0, 0.0, 7.25]).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.json");
        save_tensor(&t, &p).unwrap();
        assert_eq!(load_tensor(&p).unwrap(), t);
        assert!(tensor_from_json(r#"{"version":1,"shape":[2,2],"data":[1.0]}"#).is_err());
    }
}
