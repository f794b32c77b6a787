//! On-disk model state: a JSON manifest plus raw little-endian parameters.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{Aux, Components, Dims, ModelState};
use crate::autograd::Mat;
use crate::datamodel::{HyperParams, ModelKind};
use crate::error::{Error, Result};
use crate::nn::ParamSet;

pub const MANIFEST: &str = "model.json";
pub const PARAMS: &str = "params.bin";
const VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Entry {
    name: String,
    rows: usize,
    cols: usize,
    offset: usize,
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    version: u32,
    kind: ModelKind,
    dims: Dims,
    hyper: HyperParams,
    nets: Components,
    aux: Aux,
    seed: u64,
    epoch: usize,
    params: Vec<Entry>,
    sha256: String,
}

pub fn save(st: &ModelState, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut bytes = Vec::new();
    let mut entries = Vec::new();
    for id in st.params.ids() {
        let m = st.params.get(id);
        entries.push(Entry {
            name: st.params.name(id).to_string(),
            rows: m.nrows(),
            cols: m.ncols(),
            offset: bytes.len() / 8,
        });
        for v in m.iter() {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    let manifest = Manifest {
        version: VERSION,
        kind: st.kind,
        dims: st.dims,
        hyper: st.hyper.clone(),
        nets: st.nets.clone(),
        aux: st.aux.clone(),
        seed: st.seed,
        epoch: st.epoch,
        params: entries,
        sha256: hex(&Sha256::digest(&bytes)),
    };
    fs::write(dir.join(PARAMS), &bytes)?;
    fs::write(dir.join(MANIFEST), serde_json::to_vec_pretty(&manifest)?)?;
    Ok(())
}

fn hex(b: &[u8]) -> String {
    b.iter().map(|x| format!("{x:02x}")).collect()
}

pub fn load(dir: &Path) -> Result<ModelState> {
    let mpath = dir.join(MANIFEST);
    let text = fs::read(&mpath).map_err(|e| Error::ingest(&mpath, e.to_string()))?;
    let m: Manifest = serde_json::from_slice(&text).map_err(|e| Error::ingest(&mpath, e.to_string()))?;
    if m.version != VERSION {
        return Err(Error::ingest(&mpath, format!("unsupported version {}", m.version)));
    }
    let bpath = dir.join(PARAMS);
    let bytes = fs::read(&bpath).map_err(|e| Error::ingest(&bpath, e.to_string()))?;
    if hex(&Sha256::digest(&bytes)) != m.sha256 {
        return Err(Error::ingest(&bpath, "checksum mismatch"));
    }
    let mut ps = ParamSet::new();
    for e in &m.params {
        let start = e.offset * 8;
        let end = start + e.rows * e.cols * 8;
        if end > bytes.len() {
            return Err(Error::ingest(&bpath, format!("parameter {} runs past the end of the file", e.name)));
        }
        let vals: Vec<f64> = bytes[start..end]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let mat = Mat::from_shape_vec((e.rows, e.cols), vals).map_err(|err| Error::Shape(err.to_string()))?;
        ps.add(e.name.clone(), mat);
    }
    Ok(ModelState {
        kind: m.kind,
        dims: m.dims,
        hyper: m.hyper,
        params: ps,
        nets: m.nets,
        aux: m.aux,
        seed: m.seed,
        epoch: m.epoch,
    })
}
