//! Single-file checkpoints: `MCBRCKPT`, a little-endian u64 header length, a JSON header
//! (config, metadata, tensor names and shapes), then every tensor as little-endian f64 in
//! header order.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::model::{ConceptModel, EncoderConfig};
use super::EncoderError;

const MAGIC: &[u8; 8] = b"MCBRCKPT";
const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: [usize; 2],
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    format_version: u32,
    config: EncoderConfig,
    metadata: serde_json::Value,
    tensors: Vec<TensorEntry>,
}

fn io(path: &Path) -> impl FnOnce(std::io::Error) -> EncoderError + '_ {
    move |e| EncoderError::Checkpoint(format!("{}: {e}", path.display()))
}

pub fn save_checkpoint(
    model: &ConceptModel,
    metadata: &serde_json::Value,
    path: &Path,
) -> Result<(), EncoderError> {
    let tensors = model.params.tensors();
    let header = Header {
        format_version: FORMAT_VERSION,
        config: model.config.clone(),
        metadata: metadata.clone(),
        tensors: tensors
            .iter()
            .map(|(name, t)| TensorEntry {
                name: name.clone(),
                shape: [t.nrows(), t.ncols()],
            })
            .collect(),
    };
    let header_raw = serde_json::to_vec(&header).expect("header serializes");
    let mut w = BufWriter::new(File::create(path).map_err(io(path))?);
    w.write_all(MAGIC).map_err(io(path))?;
    w.write_all(&(header_raw.len() as u64).to_le_bytes()).map_err(io(path))?;
    w.write_all(&header_raw).map_err(io(path))?;
    for (_, t) in &tensors {
        for v in t.iter() {
            w.write_all(&v.to_le_bytes()).map_err(io(path))?;
        }
    }
    w.flush().map_err(io(path))
}

/// Restores a model and its metadata. Values round-trip bit for bit.
pub fn load_checkpoint(path: &Path) -> Result<(ConceptModel, serde_json::Value), EncoderError> {
    let mut r = BufReader::new(File::open(path).map_err(io(path))?);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic).map_err(io(path))?;
    if &magic != MAGIC {
        return Err(EncoderError::Checkpoint(format!(
            "{} is not a checkpoint file",
            path.display()
        )));
    }
    let mut len = [0u8; 8];
    r.read_exact(&mut len).map_err(io(path))?;
    let len = u64::from_le_bytes(len) as usize;
    let mut header_raw = vec![0u8; len];
    r.read_exact(&mut header_raw).map_err(io(path))?;
    let header: Header = serde_json::from_slice(&header_raw)
        .map_err(|e| EncoderError::Checkpoint(format!("{}: bad header: {e}", path.display())))?;
    if header.format_version != FORMAT_VERSION {
        return Err(EncoderError::Checkpoint(format!(
            "{}: unsupported format version {}",
            path.display(),
            header.format_version
        )));
    }
    let mut model = ConceptModel::new(header.config, 0)?;
    {
        let names: Vec<String> = model.params.tensors().into_iter().map(|(n, _)| n).collect();
        let targets = model.params.tensors_mut();
        if targets.len() != header.tensors.len() {
            return Err(EncoderError::Checkpoint(format!(
                "{}: {} tensors stored, configuration needs {}",
                path.display(),
                header.tensors.len(),
                targets.len()
            )));
        }
        for ((entry, target), name) in header.tensors.iter().zip(targets).zip(names) {
            if entry.name != name || entry.shape != [target.nrows(), target.ncols()] {
                return Err(EncoderError::Checkpoint(format!(
                    "{}: tensor `{}` {:?} does not match `{name}` {:?}",
                    path.display(),
                    entry.name,
                    entry.shape,
                    target.dim()
                )));
            }
            let mut buf = vec![0u8; 8 * entry.shape[0] * entry.shape[1]];
            r.read_exact(&mut buf).map_err(io(path))?;
            let values: Vec<f64> = buf
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
                .collect();
            *target = Array2::from_shape_vec((entry.shape[0], entry.shape[1]), values)
                .expect("shape checked");
        }
    }
    let mut rest = Vec::new();
    r.read_to_end(&mut rest).map_err(io(path))?;
    if !rest.is_empty() {
        return Err(EncoderError::Checkpoint(format!(
            "{}: {} trailing bytes",
            path.display(),
            rest.len()
        )));
    }
    Ok((model, header.metadata))
}

/// Writes `sample_id,e0,...,e{d-1}` rows.
pub fn write_embeddings(
    path: &Path,
    sample_ids: &[String],
    embeddings: &Array2<f64>,
) -> Result<(), EncoderError> {
    if sample_ids.len() != embeddings.nrows() {
        return Err(EncoderError::ShapeMismatch(format!(
            "{} ids for {} embeddings",
            sample_ids.len(),
            embeddings.nrows()
        )));
    }
    let err = |e: csv::Error| EncoderError::Checkpoint(format!("{}: {e}", path.display()));
    let mut w = csv::Writer::from_path(path).map_err(err)?;
    let mut header = vec!["sample_id".to_string()];
    header.extend((0..embeddings.ncols()).map(|i| format!("e{i}")));
    w.write_record(&header).map_err(err)?;
    for (id, row) in sample_ids.iter().zip(embeddings.rows()) {
        let mut rec = vec![id.clone()];
        rec.extend(row.iter().map(|v| v.to_string()));
        w.write_record(&rec).map_err(err)?;
    }
    w.flush().map_err(|e| io(path)(e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Raster;

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.bin");
        let model = ConceptModel::new(EncoderConfig::tiny(4), 17).unwrap();
        let meta = serde_json::json!({"epoch": 3, "variant": "clip_mtl"});
        save_checkpoint(&model, &meta, &path).unwrap();
        let (back, meta_back) = load_checkpoint(&path).unwrap();
        assert_eq!(back.params, model.params);
        assert_eq!(back.config, model.config);
        assert_eq!(meta_back, meta);
        let img = Raster::from_fn(224, 224, |x, y| ((x + 3 * y) % 11) as f32 / 11.0);
        assert_eq!(model.predict("a", &img).unwrap(), back.predict("a", &img).unwrap());
    }

    #[test]
    fn rejects_foreign_and_truncated_files() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.bin");
        std::fs::write(&path, b"not a checkpoint at all").unwrap();
        assert!(load_checkpoint(&path).is_err());
        let model = ConceptModel::new(EncoderConfig::tiny(2), 1).unwrap();
        save_checkpoint(&model, &serde_json::Value::Null, &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 8]).unwrap();
        assert!(load_checkpoint(&path).is_err());
    }

    #[test]
    fn embeddings_csv_layout() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("e.csv");
        let e = ndarray::array![[1.0, 0.0], [0.6, 0.8]];
        write_embeddings(&path, &["a".into(), "b".into()], &e).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text, "sample_id,e0,e1\na,1,0\nb,0.6,0.8\n");
    }
}
