//! Versioned binary model container.
//!
//! Layout: magic `VRNET01`, u32 LE header length, the config as canonical
//! JSON, then f32 LE weight blobs in declaration order (each block's weights
//! row-major, then its bias; deep path first, then the shallow paths, then
//! the projection when attached).

use std::fs;
use std::io::Read;
use std::path::Path;

use super::config::NetConfig;
use super::network::Network;
use crate::error::{Error, Result};

pub const MODEL_MAGIC: &[u8; 7] = b"VRNET01";

pub fn save_model(net: &Network, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let header = net.config().to_canonical_json();
    let params = net.params_flat();

    let mut out = Vec::with_capacity(MODEL_MAGIC.len() + 4 + header.len() + params.len() * 4);
    out.extend_from_slice(MODEL_MAGIC);
    out.extend_from_slice(&(header.len() as u32).to_le_bytes());
    out.extend_from_slice(header.as_bytes());
    for v in params {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn load_model(path: impl AsRef<Path>) -> Result<Network> {
    let path = path.as_ref();
    let mut file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut bytes = Vec::new();
    file.read_to_end(&mut bytes).map_err(|e| Error::io(path, e))?;
    load_model_bytes(&bytes).map_err(|e| match e {
        Error::Format { reason, .. } => Error::Format {
            path: path.to_path_buf(),
            reason,
        },
        other => other,
    })
}

pub fn load_model_bytes(bytes: &[u8]) -> Result<Network> {
    let fmt_err = |reason: &str| Error::Format {
        path: "<bytes>".into(),
        reason: reason.to_string(),
    };
    if bytes.len() < MODEL_MAGIC.len() + 4 {
        return Err(fmt_err("file too short"));
    }
    if &bytes[..MODEL_MAGIC.len()] != MODEL_MAGIC {
        return Err(fmt_err("bad magic"));
    }
    let mut pos = MODEL_MAGIC.len();
    let header_len = u32::from_le_bytes(bytes[pos..pos + 4].try_into().unwrap()) as usize;
    pos += 4;
    if bytes.len() < pos + header_len {
        return Err(fmt_err("truncated header"));
    }
    let header = std::str::from_utf8(&bytes[pos..pos + header_len])
        .map_err(|_| fmt_err("header is not utf-8"))?;
    pos += header_len;
    let config = NetConfig::from_json(header)?;

    let mut net = Network::zeroed(config)?;
    let expected = net.param_count();
    let blob = &bytes[pos..];
    if blob.len() != expected * 4 {
        return Err(fmt_err(&format!(
            "weight blob is {} bytes, expected {}",
            blob.len(),
            expected * 4
        )));
    }
    let params: Vec<f64> = blob
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    net.set_params_flat(&params)?;
    Ok(net)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::{NetConfig, ProjectionInit};

    #[test]
    fn save_load_roundtrip_preserves_embeddings() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.bin");
        let net = Network::new_seeded(NetConfig::default_desk(), 17).unwrap();
        save_model(&net, &path).unwrap();
        let loaded = load_model(&path).unwrap();

        let img = crate::image::Image::filled(32, 32, [120, 40, 220]);
        // f64 -> f32 -> f64 loses precision, so compare through a save/load
        // cycle of the original instead of raw params.
        save_model(&loaded, dir.path().join("model2.bin")).unwrap();
        assert_eq!(
            fs::read(&path).unwrap(),
            fs::read(dir.path().join("model2.bin")).unwrap()
        );
        let e1 = loaded.forward(&img).unwrap();
        let e2 = load_model(&path).unwrap().forward(&img).unwrap();
        assert_eq!(e1.values(), e2.values());
    }

    #[test]
    fn projection_survives_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.bin");
        let mut net = Network::new_seeded(NetConfig::default_desk(), 17).unwrap();
        net.attach_projection(ProjectionInit::Seeded(5)).unwrap();
        save_model(&net, &path).unwrap();
        let loaded = load_model(&path).unwrap();
        assert!(loaded.has_projection());
        assert_eq!(loaded.config().output_dim(), 64);
    }

    #[test]
    fn rejects_corrupt_files() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.bin");
        fs::write(&path, b"VRNETXX junk").unwrap();
        assert!(load_model(&path).is_err());

        let net = Network::new_seeded(NetConfig::default_desk(), 1).unwrap();
        save_model(&net, dir.path().join("ok.bin")).unwrap();
        let mut bytes = fs::read(dir.path().join("ok.bin")).unwrap();
        bytes.truncate(bytes.len() - 3);
        fs::write(&path, &bytes).unwrap();
        assert!(load_model(&path).is_err());
    }
}
