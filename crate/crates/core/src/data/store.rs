//! On-disk layouts built from `.hpdt` files.
//!
//! Dataset directory:
//!
//! ```text
//! manifest.txt          one sample id per line, `train-*` or `val-*`
//! meta.txt              classes = K, height = H, width = W
//! samples/{id}.img.hpdt f32 image (1, 1, H, W)
//! samples/{id}.lbl.hpdt f32 labels (1, 1, H, W)
//! ```
//!
//! Checkpoint directory: `net.txt` with the network config and one
//! `{tensor name}.hpdt` per parameter tensor, running statistics included.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::net::{build_net, parse_key_values, NetConfig, NetParams};
use crate::rng::Rng;

use super::{load_tensor, save_tensor, Dataset, LabelMap, SegSample};

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn create_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

pub fn write_dataset(dir: impl AsRef<Path>, ds: &Dataset) -> Result<()> {
    let dir = dir.as_ref();
    ds.validate()?;
    let samples = dir.join("samples");
    create_dir(&samples)?;
    let mut manifest = String::new();
    for (split, list) in [("train", &ds.train), ("val", &ds.val)] {
        for s in list {
            if !s.id.starts_with(&format!("{split}-")) {
                return Err(Error::Data(format!("{split} sample id {:?} lacks the `{split}-` prefix", s.id)));
            }
            save_tensor(samples.join(format!("{}.img.hpdt", s.id)), &s.image)?;
            save_tensor(samples.join(format!("{}.lbl.hpdt", s.id)), &s.labels.to_tensor::<f32>())?;
            let _ = writeln!(manifest, "{}", s.id);
        }
    }
    let (h, w) = ds.train.first().or(ds.val.first()).map(SegSample::size).unwrap_or((0, 0));
    write_text(&dir.join("manifest.txt"), &manifest)?;
    write_text(
        &dir.join("meta.txt"),
        &format!("classes = {}\nheight = {h}\nwidth = {w}\n", ds.classes),
    )
}

pub fn read_dataset(dir: impl AsRef<Path>) -> Result<Dataset> {
    let dir = dir.as_ref();
    let mut classes = None;
    for (k, v) in parse_key_values(&read_text(&dir.join("meta.txt"))?)? {
        if k == "classes" {
            classes = Some(
                v.parse::<usize>()
                    .map_err(|_| Error::Data(format!("meta.txt: bad class count {v:?}")))?,
            );
        }
    }
    let classes = classes.ok_or_else(|| Error::Data("meta.txt has no `classes` entry".into()))?;
    let mut ds = Dataset {
        classes,
        train: Vec::new(),
        val: Vec::new(),
    };
    for id in read_text(&dir.join("manifest.txt"))?.lines().map(str::trim).filter(|l| !l.is_empty()) {
        let image = load_tensor::<f32>(dir.join("samples").join(format!("{id}.img.hpdt")))?;
        let labels = LabelMap::from_tensor(&load_tensor::<f32>(dir.join("samples").join(format!("{id}.lbl.hpdt")))?)?;
        let sample = SegSample::new(id, image, labels)?;
        if id.starts_with("train-") {
            ds.train.push(sample);
        } else if id.starts_with("val-") {
            ds.val.push(sample);
        } else {
            return Err(Error::Data(format!("manifest id {id:?} is neither train- nor val-")));
        }
    }
    ds.validate()?;
    Ok(ds)
}

pub fn save_checkpoint(dir: impl AsRef<Path>, p: &NetParams<f32>) -> Result<()> {
    let dir = dir.as_ref();
    create_dir(dir)?;
    write_text(&dir.join("net.txt"), &p.config.to_text())?;
    for t in p.tensors() {
        save_tensor(dir.join(format!("{}.hpdt", t.name)), t.tensor)?;
    }
    Ok(())
}

pub fn load_checkpoint(dir: impl AsRef<Path>) -> Result<NetParams<f32>> {
    let dir = dir.as_ref();
    let cfg = NetConfig::from_text(&read_text(&dir.join("net.txt"))?)?;
    let mut p = build_net::<f32>(&cfg, &Rng::new(0))?;
    for t in p.tensors_mut() {
        let loaded = load_tensor::<f32>(dir.join(format!("{}.hpdt", t.name)))?;
        if loaded.shape() != t.tensor.shape() {
            return Err(Error::Data(format!(
                "{}: stored shape {:?}, config implies {:?}",
                t.name,
                loaded.shape(),
                t.tensor.shape()
            )));
        }
        *t.tensor = loaded;
    }
    Ok(p)
}
