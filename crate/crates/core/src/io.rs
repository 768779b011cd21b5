//! Little-endian binary containers for datasets, classifier checkpoints and
//! flow checkpoints.
//!
//! Dataset ("CADS"): magic, version u32, N u64, H u32, W u32, C u32,
//! num_classes u32, then N*H*W*C f64 pixels (H-major, then W, then C), then
//! N u32 labels.
//!
//! Classifier ("CADM"): magic, version u32, arch tag u32, num_classes u32,
//! H u32, W u32, C u32, then named tensor records.
//!
//! Flow ("CADF-FLOW"): magic, version u32, layout fields, keep ratio, then
//! named tensor records covering phi, mu and log sigma.

use crate::classifier::{Arch, ClassifierModel};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::flow::{CondFlow, FlowLayout};
use crate::tensor::{NdArray, ParamStore};
use byteorder::{ReadBytesExt, WriteBytesExt, LE};
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

const DATASET_MAGIC: &[u8; 4] = b"CADS";
const MODEL_MAGIC: &[u8; 4] = b"CADM";
const FLOW_MAGIC: &[u8; 9] = b"CADF-FLOW";
const VERSION: u32 = 1;

fn open(path: &Path) -> Result<BufReader<File>> {
    if !path.exists() {
        return Err(Error::MissingFile(path.display().to_string()));
    }
    Ok(BufReader::new(File::open(path)?))
}

fn bad(path: &Path, detail: impl Into<String>) -> Error {
    Error::format(path.display().to_string(), detail)
}

pub fn save_dataset(path: &Path, ds: &Dataset) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(DATASET_MAGIC)?;
    w.write_u32::<LE>(VERSION)?;
    w.write_u64::<LE>(ds.len() as u64)?;
    w.write_u32::<LE>(ds.height as u32)?;
    w.write_u32::<LE>(ds.width as u32)?;
    w.write_u32::<LE>(ds.channels as u32)?;
    w.write_u32::<LE>(ds.num_classes as u32)?;
    let (h, wd, c) = (ds.height, ds.width, ds.channels);
    for img in ds.images() {
        // Internal layout is [C,H,W]; the file interleaves channels per pixel.
        let data = img.data();
        for r in 0..h {
            for col in 0..wd {
                for ch in 0..c {
                    w.write_f64::<LE>(data[ch * h * wd + r * wd + col])?;
                }
            }
        }
    }
    for &l in &ds.labels {
        w.write_u32::<LE>(l as u32)?;
    }
    w.flush()?;
    Ok(())
}

pub fn load_dataset(path: &Path, split: &str) -> Result<Dataset> {
    let mut r = open(path)?;
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != DATASET_MAGIC {
        return Err(bad(path, "bad magic"));
    }
    let version = r.read_u32::<LE>()?;
    if version != VERSION {
        return Err(bad(path, format!("unsupported version {version}")));
    }
    let n = r.read_u64::<LE>()? as usize;
    let h = r.read_u32::<LE>()? as usize;
    let w = r.read_u32::<LE>()? as usize;
    let c = r.read_u32::<LE>()? as usize;
    let num_classes = r.read_u32::<LE>()? as usize;
    if n == 0 || h == 0 || w == 0 || c == 0 || num_classes == 0 {
        return Err(bad(path, "degenerate dimensions"));
    }
    let mut images = Vec::with_capacity(n);
    for _ in 0..n {
        let mut data = vec![0.0; c * h * w];
        for row in 0..h {
            for col in 0..w {
                for ch in 0..c {
                    data[ch * h * w + row * w + col] = r.read_f64::<LE>()?;
                }
            }
        }
        images.push(NdArray::from_vec(vec![c, h, w], data)?);
    }
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        labels.push(r.read_u32::<LE>()? as usize);
    }
    Dataset::new(images, labels, num_classes, h, w, c, split)
}

fn write_params<W: Write>(w: &mut W, params: &ParamStore) -> Result<()> {
    w.write_u32::<LE>(params.len() as u32)?;
    for (name, tensor) in params.iter() {
        w.write_u32::<LE>(name.len() as u32)?;
        w.write_all(name.as_bytes())?;
        w.write_u32::<LE>(tensor.shape().len() as u32)?;
        for &e in tensor.shape() {
            w.write_u64::<LE>(e as u64)?;
        }
        for &v in tensor.data() {
            w.write_f64::<LE>(v)?;
        }
    }
    Ok(())
}

fn read_params<R: Read>(r: &mut R, path: &Path) -> Result<ParamStore> {
    let count = r.read_u32::<LE>()? as usize;
    let mut params = ParamStore::new();
    for _ in 0..count {
        let name_len = r.read_u32::<LE>()? as usize;
        if name_len > 4096 {
            return Err(bad(path, "parameter name too long"));
        }
        let mut buf = vec![0u8; name_len];
        r.read_exact(&mut buf)?;
        let name = String::from_utf8(buf).map_err(|_| bad(path, "non-utf8 name"))?;
        let rank = r.read_u32::<LE>()? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.read_u64::<LE>()? as usize);
        }
        let len: usize = shape.iter().product();
        let mut data = vec![0.0; len];
        for v in data.iter_mut() {
            *v = r.read_f64::<LE>()?;
        }
        params.insert(name, NdArray::from_vec(shape, data)?);
    }
    Ok(params)
}

pub fn save_model(path: &Path, model: &ClassifierModel) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MODEL_MAGIC)?;
    w.write_u32::<LE>(VERSION)?;
    w.write_u32::<LE>(model.arch.tag())?;
    w.write_u32::<LE>(model.num_classes as u32)?;
    let (h, wd, c) = model.input_shape;
    w.write_u32::<LE>(h as u32)?;
    w.write_u32::<LE>(wd as u32)?;
    w.write_u32::<LE>(c as u32)?;
    write_params(&mut w, &model.params)?;
    w.flush()?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<ClassifierModel> {
    let mut r = open(path)?;
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MODEL_MAGIC {
        return Err(bad(path, "bad magic"));
    }
    let version = r.read_u32::<LE>()?;
    if version != VERSION {
        return Err(bad(path, format!("unsupported version {version}")));
    }
    let arch = Arch::from_tag(r.read_u32::<LE>()?)?;
    let num_classes = r.read_u32::<LE>()? as usize;
    let h = r.read_u32::<LE>()? as usize;
    let w = r.read_u32::<LE>()? as usize;
    let c = r.read_u32::<LE>()? as usize;
    let params = read_params(&mut r, path)?;
    let reference = ClassifierModel::init(arch, (h, w, c), num_classes, 0);
    for (name, tensor) in reference.params.iter() {
        match params.get(name) {
            Some(loaded) if loaded.shape() == tensor.shape() => {}
            Some(loaded) => {
                return Err(bad(
                    path,
                    format!(
                        "parameter {name}: shape {:?} != expected {:?}",
                        loaded.shape(),
                        tensor.shape()
                    ),
                ))
            }
            None => return Err(bad(path, format!("missing parameter {name}"))),
        }
    }
    Ok(ClassifierModel {
        arch,
        input_shape: (h, w, c),
        num_classes,
        params,
    })
}

/// Flow checkpoint: layout, keep ratio and full spatial side, then phi and
/// the base Gaussian as named tensors.
pub fn save_flow(path: &Path, flow: &CondFlow, ratio: f64, full_side: usize) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(FLOW_MAGIC)?;
    w.write_u32::<LE>(VERSION)?;
    let l = &flow.layout;
    w.write_u32::<LE>(l.channels as u32)?;
    w.write_u32::<LE>(l.d_r as u32)?;
    w.write_u32::<LE>(l.cond_len as u32)?;
    w.write_u32::<LE>(l.blocks as u32)?;
    w.write_u32::<LE>(l.hidden.len() as u32)?;
    for &h in &l.hidden {
        w.write_u32::<LE>(h as u32)?;
    }
    w.write_u8(u8::from(l.bias_only))?;
    w.write_f64::<LE>(l.cond_scale)?;
    w.write_f64::<LE>(ratio)?;
    w.write_u32::<LE>(full_side as u32)?;
    write_params(&mut w, &flow.params)?;
    w.flush()?;
    Ok(())
}

pub struct FlowCheckpoint {
    pub flow: CondFlow,
    pub ratio: f64,
    pub full_side: usize,
}

pub fn load_flow(path: &Path) -> Result<FlowCheckpoint> {
    let mut r = open(path)?;
    let mut magic = [0u8; 9];
    r.read_exact(&mut magic)?;
    if &magic != FLOW_MAGIC {
        return Err(bad(path, "bad magic"));
    }
    let version = r.read_u32::<LE>()?;
    if version != VERSION {
        return Err(bad(path, format!("unsupported version {version}")));
    }
    let channels = r.read_u32::<LE>()? as usize;
    let d_r = r.read_u32::<LE>()? as usize;
    let cond_len = r.read_u32::<LE>()? as usize;
    let blocks = r.read_u32::<LE>()? as usize;
    let hidden_count = r.read_u32::<LE>()? as usize;
    if hidden_count > 64 {
        return Err(bad(path, "implausible hidden layer count"));
    }
    let mut hidden = Vec::with_capacity(hidden_count);
    for _ in 0..hidden_count {
        hidden.push(r.read_u32::<LE>()? as usize);
    }
    let bias_only = r.read_u8()? != 0;
    let cond_scale = r.read_f64::<LE>()?;
    let ratio = r.read_f64::<LE>()?;
    let full_side = r.read_u32::<LE>()? as usize;
    let layout = FlowLayout {
        channels,
        d_r,
        cond_len,
        blocks,
        hidden,
        cond_scale,
        bias_only,
    };
    layout.validate().map_err(|e| bad(path, e.to_string()))?;
    let params = read_params(&mut r, path)?;
    let reference = CondFlow::identity_init(layout.clone(), 0)
        .map_err(|e| bad(path, e.to_string()))?;
    for (name, tensor) in reference.params.iter() {
        match params.get(name) {
            Some(loaded) if loaded.shape() == tensor.shape() => {}
            _ => return Err(bad(path, format!("missing or misshapen parameter {name}"))),
        }
    }
    Ok(FlowCheckpoint {
        flow: CondFlow { layout, params },
        ratio,
        full_side,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{gen_synthetic_dataset, DatasetConfig};
    use crate::util::checksum_f64;

    #[test]
    fn dataset_roundtrip_is_exact_and_byte_stable() {
        let dir = tempfile::tempdir().unwrap();
        let ds = gen_synthetic_dataset(&DatasetConfig {
            num_classes: 3,
            n_per_class: 4,
            height: 8,
            width: 8,
            channels: 1,
            seed: 2,
        })
        .unwrap();
        let p1 = dir.path().join("a.cads");
        let p2 = dir.path().join("b.cads");
        save_dataset(&p1, &ds).unwrap();
        save_dataset(&p2, &ds).unwrap();
        assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());

        let back = load_dataset(&p1, "train").unwrap();
        assert_eq!(back.len(), ds.len());
        assert_eq!(back.labels, ds.labels);
        for (a, b) in back.images().iter().zip(ds.images()) {
            assert_eq!(checksum_f64(a.data()), checksum_f64(b.data()));
        }
    }

    #[test]
    fn model_roundtrip_preserves_params() {
        let dir = tempfile::tempdir().unwrap();
        let m = crate::classifier::ClassifierModel::init(Arch::CnnDeep, (16, 16, 1), 8, 3);
        let p = dir.path().join("m.cadm");
        save_model(&p, &m).unwrap();
        let back = load_model(&p).unwrap();
        assert_eq!(back.arch, m.arch);
        assert_eq!(back.num_classes, 8);
        assert_eq!(back.params.checksum(), m.params.checksum());
    }

    #[test]
    fn flow_roundtrip_preserves_params_and_meta() {
        let dir = tempfile::tempdir().unwrap();
        let layout = FlowLayout::new(1, 8, 64, 3, vec![16]).unwrap();
        let mut flow = CondFlow::identity_init(layout, 1).unwrap();
        flow.randomize(0.2, 5);
        let p = dir.path().join("f.cadf");
        save_flow(&p, &flow, 0.5, 16).unwrap();
        let back = load_flow(&p).unwrap();
        assert_eq!(back.ratio, 0.5);
        assert_eq!(back.full_side, 16);
        assert_eq!(back.flow.layout, flow.layout);
        assert_eq!(back.flow.params.checksum(), flow.params.checksum());
    }

    #[test]
    fn wrong_magic_is_a_format_error() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.cadm");
        std::fs::write(&p, b"NOPE....").unwrap();
        assert!(matches!(load_model(&p), Err(Error::Format { .. })));
        assert!(matches!(load_dataset(&p, "t"), Err(Error::Format { .. })));
    }

    #[test]
    fn missing_file_is_reported() {
        let p = Path::new("/nonexistent/q.cadm");
        assert!(matches!(load_model(p), Err(Error::MissingFile(_))));
    }
}
